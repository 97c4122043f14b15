//! Dense complex linear algebra helpers: matrix exponential, inverses,
//! eigenvalues and least squares.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;

pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Induced 1-norm (max column sum).
pub fn norm1(a: &CMat) -> f64 {
    (0..a.ncols())
        .map(|j| a.column(j).iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn max_abs(a: &CMat) -> f64 {
    a.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn frobenius(a: &CMat) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn inverse(a: &CMat) -> Result<CMat> {
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "inverse of {}x{} matrix",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.nrows() == 0 {
        return Ok(a.clone());
    }
    let lu = a.clone().lu();
    let inv = lu
        .try_inverse()
        .ok_or_else(|| Error::Singular(format!("{}x{} LU", a.nrows(), a.ncols())))?;
    if inv.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Singular("non-finite inverse".into()));
    }
    Ok(inv)
}

pub fn solve(a: &CMat, b: &CMat) -> Result<CMat> {
    let lu = a.clone().lu();
    let x = lu
        .solve(b)
        .ok_or_else(|| Error::Singular(format!("{}x{} solve", a.nrows(), a.ncols())))?;
    Ok(x)
}

/// 1-norm condition number estimate through an explicit inverse.
pub fn cond1(a: &CMat) -> Result<f64> {
    let inv = inverse(a)?;
    Ok(norm1(a) * norm1(&inv))
}

const B3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const B5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const B7: [f64; 8] = [17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0];
const B9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const B13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA: [(usize, f64); 4] = [
    (3, 1.495585217958292e-2),
    (5, 2.539398330063230e-1),
    (7, 9.504178996162932e-1),
    (9, 2.097847961257068),
];
const THETA13: f64 = 5.371920351148152;

fn pade_low(a: &CMat, b: &[f64]) -> (CMat, CMat) {
    let n = a.nrows();
    let id = CMat::identity(n, n);
    let a2 = a * a;
    let m = b.len() - 1;
    let mut powers = vec![id.clone(), a2.clone()];
    while 2 * (powers.len() - 1) < m {
        let next = powers.last().unwrap() * &a2;
        powers.push(next);
    }
    let mut u = CMat::zeros(n, n);
    let mut v = CMat::zeros(n, n);
    for (k, p) in powers.iter().enumerate() {
        let e = 2 * k;
        if e <= m {
            v += p * C64::from(b[e]);
        }
        if e + 1 <= m {
            u += p * C64::from(b[e + 1]);
        }
    }
    (a * u, v)
}

fn pade13(a: &CMat) -> (CMat, CMat) {
    let n = a.nrows();
    let id = CMat::identity(n, n);
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let b = |k: usize| C64::from(B13[k]);
    let u_in = &a6 * (&a6 * b(13) + &a4 * b(11) + &a2 * b(9))
        + &a6 * b(7)
        + &a4 * b(5)
        + &a2 * b(3)
        + &id * b(1);
    let u = a * u_in;
    let v = &a6 * (&a6 * b(12) + &a4 * b(10) + &a2 * b(8))
        + &a6 * b(6)
        + &a4 * b(4)
        + &a2 * b(2)
        + &id * b(0);
    (u, v)
}

/// Matrix exponential by scaling and squaring with Pade approximants of
/// adaptive degree.
pub fn expm(a: &CMat) -> Result<CMat> {
    let n = a.nrows();
    if n == 0 {
        return Ok(a.clone());
    }
    if a.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::InvalidField("non-finite matrix in expm".into()));
    }
    let nrm = norm1(a);
    for &(m, th) in THETA.iter() {
        if nrm <= th {
            let b: &[f64] = match m {
                3 => &B3,
                5 => &B5,
                7 => &B7,
                _ => &B9,
            };
            let (u, v) = pade_low(a, b);
            return solve(&(&v - &u), &(&v + &u));
        }
    }
    let s = if nrm > THETA13 {
        (nrm / THETA13).log2().ceil().max(0.0) as i32
    } else {
        0
    };
    let scaled = a * C64::from(0.5f64.powi(s));
    let (u, v) = pade13(&scaled);
    let mut r = solve(&(&v - &u), &(&v + &u))?;
    for _ in 0..s {
        r = &r * &r;
    }
    Ok(r)
}

/// `exp(A) - I` accurate relative to its own size when `A` is small.
pub fn expm1(a: &CMat) -> Result<CMat> {
    let n = a.nrows();
    let nrm = norm1(a);
    if nrm > 0.5 {
        let e = expm(a)?;
        return Ok(e - CMat::identity(n, n));
    }
    let mut term = a.clone();
    let mut sum = a.clone();
    for k in 2..60 {
        term = &term * a * C64::from(1.0 / k as f64);
        let t = max_abs(&term);
        sum += &term;
        if t <= 1e-18 * max_abs(&sum).max(1e-300) {
            break;
        }
    }
    Ok(sum)
}

/// Eigenvalues of a square complex matrix via the complex Schur form.
pub fn eigenvalues(a: &CMat) -> Vec<C64> {
    let n = a.nrows();
    if n == 0 {
        return vec![];
    }
    let schur = nalgebra::Schur::new(a.clone());
    let (_, t) = schur.unpack();
    (0..n).map(|i| t[(i, i)]).collect()
}

/// Sorts both spectra and matches greedily by nearest neighbour; returns
/// the largest matched distance.
pub fn spectrum_distance(a: &[C64], b: &[C64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    let key = |z: &C64| (z.im, z.re);
    let mut a: Vec<C64> = a.to_vec();
    let mut b: Vec<C64> = b.to_vec();
    a.sort_by(|x, y| key(x).partial_cmp(&key(y)).unwrap());
    b.sort_by(|x, y| key(x).partial_cmp(&key(y)).unwrap());
    let mut used = vec![false; b.len()];
    let mut worst: f64 = 0.0;
    for z in &a {
        let mut best = f64::INFINITY;
        let mut bi = usize::MAX;
        for (i, w) in b.iter().enumerate() {
            if !used[i] {
                let d = (z - w).norm();
                if d < best {
                    best = d;
                    bi = i;
                }
            }
        }
        used[bi] = true;
        worst = worst.max(best);
    }
    worst
}

/// Real least squares `min |A x - b|` through the SVD.
pub fn lstsq_real(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let svd = a.clone().svd(true, true);
    svd.solve(b, 1e-14)
        .map_err(|e| Error::Singular(format!("least squares: {e}")))
}

/// Complex least squares through the SVD.
pub fn lstsq(a: &CMat, b: &CVec) -> Result<CVec> {
    let svd = a.clone().svd(true, true);
    svd.solve(b, 1e-14)
        .map_err(|e| Error::Singular(format!("least squares: {e}")))
}

/// Ordinary least-squares slope of `y` against `x`.
pub fn fit_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
    }
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand_mat(n: usize, scale: f64, seed: u64) -> CMat {
        let mut s = seed;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        CMat::from_fn(n, n, |_, _| c(next() * scale, next() * scale))
    }

    #[test]
    fn expm_matches_nalgebra() {
        for (i, scale) in [0.001, 0.1, 1.0, 5.0].iter().enumerate() {
            let a = rand_mat(8, *scale, i as u64 + 3);
            let ours = expm(&a).unwrap();
            let theirs = a.clone().exp();
            let err = max_abs(&(&ours - &theirs)) / max_abs(&theirs);
            assert!(err < 1e-11, "scale {scale}: {err}");
        }
    }

    #[test]
    fn expm_of_skew_hermitian_is_unitary() {
        let a = rand_mat(10, 3.0, 11);
        let skew = &a - a.adjoint();
        let u = expm(&skew).unwrap();
        let id = CMat::identity(10, 10);
        assert!(max_abs(&(u.adjoint() * &u - id)) < 1e-12);
    }

    #[test]
    fn expm1_small() {
        let a = rand_mat(6, 1e-6, 5);
        let e = expm1(&a).unwrap();
        let approx = &a + &a * &a * c(0.5, 0.0);
        assert!(max_abs(&(&e - &approx)) < 1e-17);
    }

    #[test]
    fn eigenvalues_of_diagonalisable() {
        let d = [c(1.0, 2.0), c(-3.0, 0.5), c(0.0, -7.0), c(2.0, 2.0)];
        let p = rand_mat(4, 1.0, 9) + CMat::identity(4, 4) * c(2.0, 0.0);
        let pi = inverse(&p).unwrap();
        let a = &p * CMat::from_diagonal(&CVec::from_vec(d.to_vec())) * pi;
        let ev = eigenvalues(&a);
        assert!(spectrum_distance(&ev, &d) < 1e-10);
    }

    #[test]
    fn slope() {
        let x = [1.0, 2.0, 3.0];
        let y = [2.0, 4.0, 6.0];
        assert!((fit_slope(&x, &y) - 2.0).abs() < 1e-14);
    }
}
