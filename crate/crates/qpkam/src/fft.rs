//! Multi-dimensional complex FFTs on row-major arrays.

use num_complex::Complex64 as C64;
use rustfft::FftPlanner;
use std::cell::RefCell;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn transform_axis(data: &mut [C64], dims: &[usize], axis: usize, inverse: bool) {
    let n = dims[axis];
    if n <= 1 {
        return;
    }
    let inner: usize = dims[axis + 1..].iter().product();
    let outer: usize = dims[..axis].iter().product();
    let fft = PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(n)
        } else {
            p.plan_fft_forward(n)
        }
    });
    let mut buf = vec![C64::new(0.0, 0.0); n];
    let mut scratch = vec![C64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * n * inner + i;
            for k in 0..n {
                buf[k] = data[base + k * inner];
            }
            fft.process_with_scratch(&mut buf, &mut scratch);
            for k in 0..n {
                data[base + k * inner] = buf[k];
            }
        }
    }
}

/// Forward transform over the listed axes, normalised so that
/// `c_k = N^{-1} sum_n u_n e^{-2 pi i k n / N}`.
pub fn forward(data: &mut [C64], dims: &[usize], axes: &[usize]) {
    let mut norm = 1.0;
    for &a in axes {
        transform_axis(data, dims, a, false);
        norm *= dims[a] as f64;
    }
    let s = 1.0 / norm;
    for v in data.iter_mut() {
        *v *= s;
    }
}

/// Inverse of [`forward`]: `u_n = sum_k c_k e^{2 pi i k n / N}`.
pub fn inverse(data: &mut [C64], dims: &[usize], axes: &[usize]) {
    for &a in axes {
        transform_axis(data, dims, a, true);
    }
}

/// Bin of the signed mode `k` in a transform of length `n`.
#[inline]
pub fn bin(k: i64, n: usize) -> usize {
    k.rem_euclid(n as i64) as usize
}

/// Signed representative of bin `b` in a transform of odd length `n`.
#[inline]
pub fn signed(b: usize, n: usize) -> i64 {
    let b = b as i64;
    let n = n as i64;
    if b > n / 2 {
        b - n
    } else {
        b
    }
}

/// Smallest odd length at least `m`.
pub fn odd_at_least(m: usize) -> usize {
    if m % 2 == 1 {
        m
    } else {
        m + 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_2d() {
        let dims = [5usize, 7];
        let orig: Vec<C64> = (0..35).map(|i| C64::new(i as f64, (i * i) as f64 * 0.1)).collect();
        let mut d = orig.clone();
        forward(&mut d, &dims, &[0, 1]);
        inverse(&mut d, &dims, &[0, 1]);
        for (a, b) in d.iter().zip(&orig) {
            assert!((a - b).norm() < 1e-10);
        }
    }

    #[test]
    fn single_mode() {
        let n = 9;
        let mut d: Vec<C64> = (0..n)
            .map(|m| C64::from_polar(1.0, -2.0 * std::f64::consts::PI * 2.0 * m as f64 / n as f64))
            .collect();
        forward(&mut d, &[n], &[0]);
        assert!((d[bin(-2, n)] - C64::new(1.0, 0.0)).norm() < 1e-12);
        assert_eq!(signed(bin(-2, n), n), -2);
    }
}
