use crate::error::{Error, Result};
use crate::fft;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

const TWO_PI: f64 = 2.0 * PI;

/// Fourier box `|l|_inf <= l`, `|j| <= j` over `d` angles and one space variable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldShape {
    pub d: usize,
    pub l: usize,
    pub j: usize,
}

impl FieldShape {
    pub fn new(d: usize, l: usize, j: usize) -> Self {
        FieldShape { d, l, j }
    }
    pub fn nl(&self) -> usize {
        2 * self.l + 1
    }
    pub fn n_ell(&self) -> usize {
        self.nl().pow(self.d as u32)
    }
    pub fn nj(&self) -> usize {
        2 * self.j + 1
    }
    pub fn len(&self) -> usize {
        self.n_ell() * self.nj()
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
    /// Multi-index of the flat angle index `i`.
    pub fn ell_of(&self, mut i: usize) -> Vec<i64> {
        let nl = self.nl();
        let mut ell = vec![0i64; self.d];
        for k in (0..self.d).rev() {
            ell[k] = (i % nl) as i64 - self.l as i64;
            i /= nl;
        }
        ell
    }
    pub fn ell_index(&self, ell: &[i64]) -> Option<usize> {
        let mut idx = 0usize;
        for &e in ell {
            if e.unsigned_abs() as usize > self.l {
                return None;
            }
            idx = idx * self.nl() + (e + self.l as i64) as usize;
        }
        Some(idx)
    }
    pub fn index(&self, ell: &[i64], j: i64) -> Option<usize> {
        if j.unsigned_abs() as usize > self.j {
            return None;
        }
        self.ell_index(ell)
            .map(|i| i * self.nj() + (j + self.j as i64) as usize)
    }
    pub fn max(&self, o: &FieldShape) -> FieldShape {
        FieldShape { d: self.d, l: self.l.max(o.l), j: self.j.max(o.j) }
    }
    pub fn sum(&self, o: &FieldShape) -> FieldShape {
        FieldShape { d: self.d, l: self.l + o.l, j: self.j + o.j }
    }
    /// All angle multi-indices of the box in storage order.
    pub fn ells(&self) -> Vec<Vec<i64>> {
        (0..self.n_ell()).map(|i| self.ell_of(i)).collect()
    }
}

/// Euclidean length of an angle index.
pub fn ell_len(ell: &[i64]) -> f64 {
    ell.iter().map(|&e| (e * e) as f64).sum::<f64>().sqrt()
}

/// `<l, j> = max(1, |l|, |j|)` with `|l|` the Euclidean length.
pub fn bracket(ell: &[i64], j: i64) -> f64 {
    1.0f64.max(ell_len(ell)).max(j.unsigned_abs() as f64)
}

pub fn dot(omega: &[f64], ell: &[i64]) -> f64 {
    omega.iter().zip(ell).map(|(w, &l)| w * l as f64).sum()
}

/// Values on the uniform grid `phi_k = 2 pi k / nphi`, `x_m = m / nx`.
#[derive(Clone, Debug)]
pub struct Grid {
    pub d: usize,
    pub nphi: usize,
    pub nx: usize,
    pub vals: Vec<C64>,
}

impl Grid {
    pub fn dims(&self) -> Vec<usize> {
        let mut v = vec![self.nphi; self.d];
        v.push(self.nx);
        v
    }
    pub fn n_phi_points(&self) -> usize {
        self.nphi.pow(self.d as u32)
    }
    /// Angle coordinates of the flat grid index `i`.
    pub fn phi_point(&self, i: usize) -> Vec<f64> {
        phi_grid_point(self.d, self.nphi, i)
    }
    pub fn map(&self, f: impl Fn(C64) -> C64) -> Grid {
        Grid { vals: self.vals.iter().map(|&z| f(z)).collect(), ..self.clone() }
    }
    pub fn zip(&self, o: &Grid, f: impl Fn(C64, C64) -> C64) -> Grid {
        assert_eq!(self.vals.len(), o.vals.len());
        Grid {
            vals: self.vals.iter().zip(&o.vals).map(|(&a, &b)| f(a, b)).collect(),
            ..self.clone()
        }
    }
}

pub fn phi_grid_point(d: usize, nphi: usize, mut i: usize) -> Vec<f64> {
    let mut p = vec![0.0; d];
    for k in (0..d).rev() {
        p[k] = TWO_PI * (i % nphi) as f64 / nphi as f64;
        i /= nphi;
    }
    p
}

/// Truncated Fourier coefficients `u_{l,j}` of a function of `(phi, x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncatedField {
    pub shape: FieldShape,
    pub coeffs: Vec<C64>,
    pub real: bool,
}

impl TruncatedField {
    pub fn zeros(shape: FieldShape, real: bool) -> Self {
        TruncatedField { shape, coeffs: vec![C64::new(0.0, 0.0); shape.len()], real }
    }

    pub fn constant(shape: FieldShape, v: f64) -> Self {
        let mut f = Self::zeros(shape, true);
        let zero = vec![0i64; shape.d];
        f.set(&zero, 0, C64::new(v, 0.0));
        f
    }

    pub fn from_fn(shape: FieldShape, real: bool, mut f: impl FnMut(&[i64], i64) -> C64) -> Self {
        let mut out = Self::zeros(shape, real);
        for i in 0..shape.n_ell() {
            let ell = shape.ell_of(i);
            for jj in 0..shape.nj() {
                let j = jj as i64 - shape.j as i64;
                out.coeffs[i * shape.nj() + jj] = f(&ell, j);
            }
        }
        out
    }

    /// Random real field with coefficients of modulus at most
    /// `amp exp(-rate (|l| + |j|))`.
    pub fn random(shape: FieldShape, amp: f64, rate: f64, rng: &mut impl rand::Rng) -> Self {
        let f = Self::from_fn(shape, true, |ell, j| {
            let w = amp * (-rate * (ell_len(ell) + j.abs() as f64)).exp();
            C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * w
        });
        f.realify()
    }

    pub fn get(&self, ell: &[i64], j: i64) -> C64 {
        self.shape.index(ell, j).map(|i| self.coeffs[i]).unwrap_or_default()
    }

    pub fn set(&mut self, ell: &[i64], j: i64, v: C64) {
        if let Some(i) = self.shape.index(ell, j) {
            self.coeffs[i] = v;
        }
    }

    /// Iterates `(angle index, j, coefficient)`.
    pub fn modes(&self) -> impl Iterator<Item = (Vec<i64>, i64, C64)> + '_ {
        let nj = self.shape.nj();
        let jj = self.shape.j as i64;
        self.coeffs
            .iter()
            .enumerate()
            .map(move |(k, &v)| (self.shape.ell_of(k / nj), (k % nj) as i64 - jj, v))
    }

    fn check_finite(&self) -> Result<()> {
        if self.coeffs.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidField("non-finite coefficient".into()));
        }
        Ok(())
    }

    /// Sobolev norm `(sum |u|^2 <l,j>^{2s})^{1/2}` for `s >= 0`.
    pub fn sobolev_norm(&self, s: f64) -> Result<f64> {
        if s < 0.0 {
            return Err(Error::InvalidField(format!(
                "negative Sobolev index {s}; use sobolev_norm_signed"
            )));
        }
        self.sobolev_norm_signed(s)
    }

    /// Sobolev norm allowing negative indices (dual norms).
    pub fn sobolev_norm_signed(&self, s: f64) -> Result<f64> {
        self.check_finite()?;
        Ok(self
            .modes()
            .map(|(ell, j, v)| v.norm_sqr() * bracket(&ell, j).powf(2.0 * s))
            .sum::<f64>()
            .sqrt())
    }

    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Keeps the ball `<l, j> <= n`.
    pub fn project(&self, n: f64) -> Self {
        let mut out = self.clone();
        let nj = self.shape.nj();
        for (k, v) in out.coeffs.iter_mut().enumerate() {
            let ell = self.shape.ell_of(k / nj);
            let j = (k % nj) as i64 - self.shape.j as i64;
            if bracket(&ell, j) > n {
                *v = C64::new(0.0, 0.0);
            }
        }
        out
    }

    /// Copies into a box of a different size, dropping modes outside it.
    pub fn resize(&self, shape: FieldShape) -> Self {
        assert_eq!(shape.d, self.shape.d, "angle dimension");
        let mut out = Self::zeros(shape, self.real);
        for (ell, j, v) in self.modes() {
            out.set(&ell, j, v);
        }
        out
    }

    fn zip_with(&self, o: &Self, f: impl Fn(C64, C64) -> C64) -> Self {
        if self.shape == o.shape {
            return TruncatedField {
                shape: self.shape,
                coeffs: self.coeffs.iter().zip(&o.coeffs).map(|(&a, &b)| f(a, b)).collect(),
                real: self.real && o.real,
            };
        }
        let shape = self.shape.max(&o.shape);
        let a = self.resize(shape);
        let b = o.resize(shape);
        a.zip_with(&b, f)
    }

    pub fn add(&self, o: &Self) -> Self {
        self.zip_with(o, |a, b| a + b)
    }
    pub fn sub(&self, o: &Self) -> Self {
        self.zip_with(o, |a, b| a - b)
    }
    pub fn scale(&self, s: f64) -> Self {
        self.map_coeffs(|_, _, v| v * s)
    }
    pub fn scale_c(&self, s: C64) -> Self {
        let mut r = self.map_coeffs(|_, _, v| v * s);
        r.real = self.real && s.im == 0.0;
        r
    }

    pub fn map_coeffs(&self, f: impl Fn(&[i64], i64, C64) -> C64) -> Self {
        let nj = self.shape.nj();
        let mut out = self.clone();
        for (k, v) in out.coeffs.iter_mut().enumerate() {
            let ell = self.shape.ell_of(k / nj);
            let j = (k % nj) as i64 - self.shape.j as i64;
            *v = f(&ell, j, *v);
        }
        out
    }

    /// Largest violation of `u_{-l,-j} = conj(u_{l,j})`.
    pub fn reality_defect(&self) -> f64 {
        self.modes()
            .map(|(ell, j, v)| {
                let m: Vec<i64> = ell.iter().map(|e| -e).collect();
                (self.get(&m, -j) - v.conj()).norm()
            })
            .fold(0.0, f64::max)
    }

    /// Symmetrises the coefficients so the field is real valued.
    pub fn realify(&self) -> Self {
        let mut out = self.map_coeffs(|ell, j, v| {
            let m: Vec<i64> = ell.iter().map(|e| -e).collect();
            (v + self.get(&m, -j).conj()) * 0.5
        });
        out.real = true;
        out
    }

    /// `d/dx`, multiplying `u_{l,j}` by `i 2 pi j`.
    pub fn dx(&self) -> Self {
        self.map_coeffs(|_, j, v| v * C64::new(0.0, TWO_PI * j as f64))
    }

    pub fn dx_n(&self, n: usize) -> Self {
        (0..n).fold(self.clone(), |f, _| f.dx())
    }

    /// Zero-mean antiderivative in `x`; the `j = 0` coefficients are dropped.
    pub fn dx_inv(&self) -> Self {
        self.map_coeffs(|_, j, v| {
            if j == 0 {
                C64::new(0.0, 0.0)
            } else {
                v / C64::new(0.0, TWO_PI * j as f64)
            }
        })
    }

    /// `d/dphi_m`, multiplying by `i l_m`.
    pub fn dphi(&self, m: usize) -> Self {
        self.map_coeffs(|ell, _, v| v * C64::new(0.0, ell[m] as f64))
    }

    /// `omega . d_phi`.
    pub fn omega_dphi(&self, omega: &[f64]) -> Self {
        self.map_coeffs(|ell, _, v| v * C64::new(0.0, dot(omega, ell)))
    }

    /// `(omega . d_phi)^{-1}`. The `l = 0` coefficients must vanish and
    /// `|omega . l|` must stay above `1e-13 gamma`.
    pub fn omega_dphi_inv(&self, omega: &[f64], gamma: f64) -> Result<Self> {
        let scale = self.max_abs().max(1.0);
        for (ell, j, v) in self.modes() {
            if ell.iter().all(|&e| e == 0) && v.norm() > 1e-13 * scale {
                return Err(Error::ZeroMode(format!("u_(0,{j}) = {v}")));
            }
        }
        self.omega_dphi_inv_unchecked(omega, gamma)
    }

    /// As [`Self::omega_dphi_inv`] but silently drops the `l = 0` modes.
    pub fn omega_dphi_inv_unchecked(&self, omega: &[f64], gamma: f64) -> Result<Self> {
        let floor = 1e-13 * gamma;
        let mut out = self.clone();
        let nj = self.shape.nj();
        for (k, v) in out.coeffs.iter_mut().enumerate() {
            let ell = self.shape.ell_of(k / nj);
            if ell.iter().all(|&e| e == 0) {
                *v = C64::new(0.0, 0.0);
                continue;
            }
            let w = dot(omega, &ell);
            if w.abs() < floor {
                return Err(Error::SmallDivisor(format!("omega.l = {w:e} at l = {ell:?}")));
            }
            *v /= C64::new(0.0, w);
        }
        Ok(out)
    }

    /// `x`-average, a function of `phi` stored with `j = 0`.
    pub fn avg_x(&self) -> Self {
        self.map_coeffs(|_, j, v| if j == 0 { v } else { C64::new(0.0, 0.0) })
    }

    /// `phi`-average, a function of `x` stored with `l = 0`.
    pub fn avg_phi(&self) -> Self {
        self.map_coeffs(|ell, _, v| {
            if ell.iter().all(|&e| e == 0) {
                v
            } else {
                C64::new(0.0, 0.0)
            }
        })
    }

    pub fn mean(&self) -> C64 {
        self.get(&vec![0; self.shape.d], 0)
    }

    /// Evaluates at a point.
    pub fn eval(&self, phi: &[f64], x: f64) -> C64 {
        self.eval_dx(phi, x, 0)
    }

    /// Evaluates the `n`-th `x`-derivative at a point.
    pub fn eval_dx(&self, phi: &[f64], x: f64, n: u32) -> C64 {
        let mut s = C64::new(0.0, 0.0);
        for (ell, j, v) in self.modes() {
            if v == C64::new(0.0, 0.0) {
                continue;
            }
            let arg = dot(phi, &ell) + TWO_PI * j as f64 * x;
            let d = C64::new(0.0, TWO_PI * j as f64).powu(n);
            s += v * d * C64::from_polar(1.0, arg);
        }
        if self.real {
            C64::new(s.re, 0.0)
        } else {
            s
        }
    }

    /// Exact samples on an `nphi^d x nx` grid (aliased modes are summed).
    pub fn to_grid(&self, nphi: usize, nx: usize) -> Grid {
        let d = self.shape.d;
        let nphi = if d == 0 { 1 } else { nphi };
        let mut dims = vec![nphi; d];
        dims.push(nx);
        let total: usize = dims.iter().product();
        let mut data = vec![C64::new(0.0, 0.0); total];
        for (ell, j, v) in self.modes() {
            let mut idx = 0usize;
            for &e in &ell {
                idx = idx * nphi + fft::bin(e, nphi);
            }
            idx = idx * nx + fft::bin(j, nx);
            data[idx] += v;
        }
        let axes: Vec<usize> = (0..=d).collect();
        fft::inverse(&mut data, &dims, &axes);
        if self.real {
            for z in data.iter_mut() {
                z.im = 0.0;
            }
        }
        Grid { d, nphi, nx, vals: data }
    }

    /// Samples on a grid with default sizes `2l+1` and `2j+1` scaled by `pad`.
    pub fn to_grid_default(&self, pad: usize) -> Grid {
        let nphi = fft::odd_at_least(pad * self.shape.nl());
        let nx = fft::odd_at_least(pad * self.shape.nj());
        self.to_grid(nphi, nx)
    }

    /// Projects grid values onto the modes of `shape`.
    pub fn from_grid(grid: &Grid, shape: FieldShape, real: bool) -> Self {
        assert_eq!(grid.d, shape.d);
        let dims = grid.dims();
        let mut data = grid.vals.clone();
        let axes: Vec<usize> = (0..=grid.d).collect();
        fft::forward(&mut data, &dims, &axes);
        let mut out = Self::zeros(shape, real);
        let nphi = grid.nphi;
        let nx = grid.nx;
        let nj = shape.nj();
        let lmax = if grid.d == 0 { 0 } else { (nphi - 1) / 2 };
        let jmax = (nx - 1) / 2;
        for k in 0..shape.len() {
            let ell = shape.ell_of(k / nj);
            let j = (k % nj) as i64 - shape.j as i64;
            if ell.iter().any(|e| e.unsigned_abs() as usize > lmax) || j.unsigned_abs() as usize > jmax {
                continue;
            }
            let mut idx = 0usize;
            for &e in &ell {
                idx = idx * nphi + fft::bin(e, nphi);
            }
            idx = idx * nx + fft::bin(j, nx);
            out.coeffs[k] = data[idx];
        }
        if real {
            out = out.realify();
        }
        out
    }

    /// Pointwise product on a grid fine enough to be exact, truncated to `out`.
    pub fn mul_into(&self, o: &Self, out: FieldShape) -> Self {
        let full = self.shape.sum(&o.shape).max(&out);
        let nphi = fft::odd_at_least(2 * full.l + 1);
        let nx = fft::odd_at_least(2 * full.j + 1);
        let a = self.to_grid(nphi, nx);
        let b = o.to_grid(nphi, nx);
        let g = a.zip(&b, |x, y| x * y);
        Self::from_grid(&g, out, self.real && o.real)
    }

    /// Exact product in the summed box.
    pub fn mul(&self, o: &Self) -> Self {
        self.mul_into(o, self.shape.sum(&o.shape))
    }

    /// Pointwise nonlinear map evaluated on a grid oversampled by `pad`,
    /// truncated to `out`. Exact only up to aliasing of the result's tail.
    pub fn apply(&self, f: impl Fn(C64) -> C64, out: FieldShape, pad: usize, real: bool) -> Self {
        let full = self.shape.max(&out);
        let nphi = fft::odd_at_least(pad * (2 * full.l + 1));
        let nx = fft::odd_at_least(pad * (2 * full.j + 1));
        let g = self.to_grid(nphi, nx).map(f);
        Self::from_grid(&g, out, real)
    }

    /// For each point of the `nphi^d` angle grid, the `x`-coefficients `j = -J..J`.
    /// Exact point samples for any `nphi`: aliased angle modes are summed.
    pub fn x_slices(&self, nphi: usize) -> Vec<Vec<C64>> {
        let d = self.shape.d;
        let nphi = if d == 0 { 1 } else { nphi };
        let nj = self.shape.nj();
        let mut dims = vec![nphi; d];
        dims.push(nj);
        let total: usize = dims.iter().product();
        let mut data = vec![C64::new(0.0, 0.0); total];
        for (ell, j, v) in self.modes() {
            let mut idx = 0usize;
            for &e in &ell {
                idx = idx * nphi + fft::bin(e, nphi);
            }
            data[idx * nj + (j + self.shape.j as i64) as usize] += v;
        }
        let axes: Vec<usize> = (0..d).collect();
        fft::inverse(&mut data, &dims, &axes);
        data.chunks(nj).map(|c| c.to_vec()).collect()
    }

    /// `x`-coefficients `j = -J..J` at an arbitrary angle.
    pub fn x_coeffs_at(&self, phi: &[f64]) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); self.shape.nj()];
        for (ell, j, v) in self.modes() {
            out[(j + self.shape.j as i64) as usize] += v * C64::from_polar(1.0, dot(phi, &ell));
        }
        out
    }

    /// Inverse of [`Self::x_slices`].
    pub fn from_x_slices(slices: &[Vec<C64>], shape: FieldShape, real: bool) -> Self {
        let d = shape.d;
        let npts = slices.len();
        let nphi = if d == 0 { 1 } else { (npts as f64).powf(1.0 / d as f64).round() as usize };
        assert_eq!(nphi.pow(d as u32), npts);
        let jin = (slices[0].len() - 1) / 2;
        let nin = slices[0].len();
        let mut dims = vec![nphi; d];
        dims.push(nin);
        let mut data: Vec<C64> = slices.iter().flat_map(|s| s.iter().copied()).collect();
        let axes: Vec<usize> = (0..d).collect();
        fft::forward(&mut data, &dims, &axes);
        let mut out = Self::zeros(shape, real);
        let lmax = if d == 0 { 0 } else { (nphi - 1) / 2 };
        let nj = shape.nj();
        for k in 0..shape.len() {
            let ell = shape.ell_of(k / nj);
            let j = (k % nj) as i64 - shape.j as i64;
            if ell.iter().any(|e| e.unsigned_abs() as usize > lmax) || j.unsigned_abs() as usize > jin {
                continue;
            }
            let mut idx = 0usize;
            for &e in &ell {
                idx = idx * nphi + fft::bin(e, nphi);
            }
            out.coeffs[k] = data[idx * nin + (j + jin as i64) as usize];
        }
        if real {
            out = out.realify();
        }
        out
    }
}

/// One-dimensional Fourier series `sum_j c_j e^{i 2 pi j x}` with `|j| <= J`.
#[derive(Clone, Debug, PartialEq)]
pub struct XSeries {
    pub c: Vec<C64>,
}

impl XSeries {
    pub fn new(c: Vec<C64>) -> Self {
        assert!(c.len() % 2 == 1);
        XSeries { c }
    }
    pub fn jmax(&self) -> i64 {
        (self.c.len() as i64 - 1) / 2
    }
    pub fn get(&self, j: i64) -> C64 {
        let jm = self.jmax();
        if j.abs() > jm {
            C64::new(0.0, 0.0)
        } else {
            self.c[(j + jm) as usize]
        }
    }
    /// Real part of the `n`-th derivative at `x` for a real series.
    pub fn eval_real(&self, x: f64, n: u32) -> f64 {
        let jm = self.jmax();
        let mut s = 0.0;
        for (k, v) in self.c.iter().enumerate() {
            let j = k as i64 - jm;
            let w = TWO_PI * j as f64;
            let e = C64::from_polar(1.0, w * x) * C64::new(0.0, w).powu(n);
            s += (v * e).re;
        }
        s
    }
    /// Derivatives `f, f', ..., f^{(order)}` at `x` for a real series.
    pub fn derivatives(&self, x: f64, order: usize) -> Vec<f64> {
        let jm = self.jmax();
        let mut out = vec![0.0; order + 1];
        for (k, v) in self.c.iter().enumerate() {
            if *v == C64::new(0.0, 0.0) {
                continue;
            }
            let j = k as i64 - jm;
            let w = TWO_PI * j as f64;
            let mut e = v * C64::from_polar(1.0, w * x);
            for o in out.iter_mut() {
                *o += e.re;
                e *= C64::new(0.0, w);
            }
        }
        out
    }
    pub fn to_grid(&self, nx: usize) -> Vec<C64> {
        let mut data = vec![C64::new(0.0, 0.0); nx];
        let jm = self.jmax();
        for (k, v) in self.c.iter().enumerate() {
            data[fft::bin(k as i64 - jm, nx)] += v;
        }
        fft::inverse(&mut data, &[nx], &[0]);
        data
    }
    pub fn from_grid(vals: &[C64], jmax: usize) -> Self {
        let nx = vals.len();
        let mut data = vals.to_vec();
        fft::forward(&mut data, &[nx], &[0]);
        let top = ((nx - 1) / 2).min(jmax) as i64;
        let mut c = vec![C64::new(0.0, 0.0); 2 * jmax + 1];
        for j in -top..=top {
            c[(j + jmax as i64) as usize] = data[fft::bin(j, nx)];
        }
        XSeries { c }
    }
}
