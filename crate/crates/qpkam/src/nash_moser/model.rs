//! Toy normal-form Hamiltonian in action-angle-normal coordinates.
//!
//! `H = omega_kdv . y + 1/2 A y . y + 1/2 (Omega(D) w, w) + eps int f(x, u, u_x) dx`
//! with `u = sum_{n in S+} 2 sqrt(2 pi n (nu_n + y_n)) cos(2 pi n x - theta_n) + w`.

use crate::error::{Error, Result};
use crate::expr::Density;
use crate::fft;
use crate::reduction::KdvFrequencyModel;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

const TWO_PI: f64 = 2.0 * PI;

/// Integrable frequencies of the toy:
/// `omega_n(nu) = (2 pi n)^3 + c/(2 pi n) + kappa (nu_n + sum_k nu_k)` on the sites and
/// `omega_n(nu, 0) = (2 pi n)^3 + (c + kappa sum_k nu_k)/(2 pi n)` on the normal modes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyFrequencies {
    pub sites: Vec<i64>,
    pub c: f64,
    pub kappa: f64,
}

impl ToyFrequencies {
    pub fn new(sites: Vec<i64>, c: f64, kappa: f64) -> Self {
        ToyFrequencies { sites, c, kappa }
    }

    pub fn d(&self) -> usize {
        self.sites.len()
    }

    pub fn tangential(&self, nu: &[f64]) -> Vec<f64> {
        let s: f64 = nu.iter().sum();
        self.sites
            .iter()
            .zip(nu)
            .map(|(&n, v)| (TWO_PI * n as f64).powi(3) + self.c / (TWO_PI * n as f64) + self.kappa * (v + s))
            .collect()
    }

    /// Twist matrix `d omega_n / d nu_k = kappa (1 + delta_nk)`.
    pub fn twist(&self) -> DMatrix<f64> {
        let d = self.d();
        DMatrix::from_fn(d, d, |i, k| self.kappa * if i == k { 2.0 } else { 1.0 })
    }

    /// Normal frequency `omega_n(nu, 0)`, odd in `n`.
    pub fn normal(&self, nu: &[f64], n: i64) -> f64 {
        let x = TWO_PI * n as f64;
        x.powi(3) + (self.c + self.kappa * nu.iter().sum::<f64>()) / x
    }

    /// `Omega_n = omega_n(nu, 0) / (2 pi n)`, even in `n`.
    pub fn omega_normal(&self, nu: &[f64], n: i64) -> f64 {
        self.normal(nu, n) / (TWO_PI * n as f64)
    }

    /// The normal frequencies as `(2 pi j)^3 + q_j`.
    pub fn kdv_model(&self, nu: &[f64]) -> KdvFrequencyModel {
        KdvFrequencyModel::with_c(self.c + self.kappa * nu.iter().sum::<f64>())
    }

    /// `nu(omega)` with `omega_kdv(nu) = -omega`, by Newton's method.
    pub fn nu_of_omega(&self, omega: &[f64]) -> Result<Vec<f64>> {
        if omega.len() != self.d() {
            return Err(Error::DimensionMismatch("frequency vector".into()));
        }
        let a = self.twist();
        let lu = a.clone().lu();
        if a.determinant().abs() < 1e-14 {
            return Err(Error::TwistDegenerate("twist matrix is singular".into()));
        }
        let mut nu = vec![0.0; self.d()];
        for _ in 0..50 {
            let f = DVector::from_iterator(self.d(), self.tangential(&nu).iter().zip(omega).map(|(a, b)| a + b));
            let step = lu.solve(&f).ok_or(Error::TwistDegenerate("twist matrix is singular".into()))?;
            for (v, s) in nu.iter_mut().zip(step.iter()) {
                *v -= s;
            }
            if step.amax() <= 1e-15 * (1.0 + nu.iter().map(|v| v.abs()).fold(0.0, f64::max)) {
                break;
            }
        }
        let res = self.tangential(&nu).iter().zip(omega).map(|(a, b)| (a + b).abs()).fold(0.0, f64::max);
        if res > 1e-9 * omega.iter().map(|v| v.abs()).fold(1.0, f64::max) {
            return Err(Error::Divergence(format!("frequency inversion residual {res:e}")));
        }
        Ok(nu)
    }

    /// Frequency vector with prescribed actions, `-omega_kdv(nu)`.
    pub fn omega_of_nu(&self, nu: &[f64]) -> Vec<f64> {
        self.tangential(nu).iter().map(|v| -v).collect()
    }
}

/// Pointwise state `(theta, y, w)` at one angle; `w` holds the space
/// coefficients `w_j`, `|j| <= J`.
#[derive(Clone, Debug, PartialEq)]
pub struct Point {
    pub theta: Vec<f64>,
    pub y: Vec<f64>,
    pub w: Vec<C64>,
}

/// Tangent vector or gradient at a point (complex to allow complex basis directions).
#[derive(Clone, Debug, PartialEq)]
pub struct Tangent {
    pub theta: Vec<C64>,
    pub y: Vec<C64>,
    pub w: Vec<C64>,
}

impl Tangent {
    pub fn zeros(d: usize, jmax: usize) -> Self {
        Tangent { theta: vec![C64::new(0.0, 0.0); d], y: vec![C64::new(0.0, 0.0); d], w: vec![C64::new(0.0, 0.0); 2 * jmax + 1] }
    }

    /// Random real vector: real angle and action parts, `w_{-j} = conj(w_j)`
    /// supported on the modes accepted by `keep`.
    pub fn random_real(d: usize, jmax: usize, keep: impl Fn(i64) -> bool, rng: &mut impl rand::Rng) -> Self {
        let mut t = Self::zeros(d, jmax);
        for k in 0..d {
            t.theta[k] = C64::new(rng.gen_range(-1.0..1.0), 0.0);
            t.y[k] = C64::new(rng.gen_range(-1.0..1.0), 0.0);
        }
        let jm = jmax as i64;
        for j in 1..=jm {
            if keep(j) {
                let v = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) / j as f64;
                t.w[(j + jm) as usize] = v;
                t.w[(jm - j) as usize] = v.conj();
            }
        }
        t
    }
}

/// The toy Hamiltonian at a fixed frequency vector.
#[derive(Clone, Debug)]
pub struct ToyHamiltonian {
    pub freq: ToyFrequencies,
    pub density: Density,
    pub eps: f64,
    pub jmax: usize,
    /// Quadrature points in `x`.
    pub nx: usize,
    pub omega: Vec<f64>,
    pub nu: Vec<f64>,
    /// `omega_kdv(nu(omega))`, set to `-omega`.
    pub omega_kdv: Vec<f64>,
    pub twist: DMatrix<f64>,
    /// `Omega_j` on `|j| <= J`, zero on excluded modes.
    pub big_omega: Vec<f64>,
    normal: Vec<bool>,
}

/// Precomputed quantities at one point.
struct Local {
    f0: Vec<f64>,
    f1: Vec<f64>,
    f00: Vec<f64>,
    f01: Vec<f64>,
    f11: Vec<f64>,
    /// `d u / d theta_k`, `d u_x / d theta_k` and the same in `y_k`.
    ut: Vec<Vec<f64>>,
    uxt: Vec<Vec<f64>>,
    uy: Vec<Vec<f64>>,
    uxy: Vec<Vec<f64>>,
    /// Second derivatives `tt`, `ty`, `yy` of `u` and `u_x` per site.
    utt: Vec<Vec<f64>>,
    uxtt: Vec<Vec<f64>>,
    uty: Vec<Vec<f64>>,
    uxty: Vec<Vec<f64>>,
    uyy: Vec<Vec<f64>>,
    uxyy: Vec<Vec<f64>>,
    fval: Vec<f64>,
}

impl ToyHamiltonian {
    pub fn new(freq: ToyFrequencies, density: Density, eps: f64, jmax: usize, nx: usize, omega: &[f64]) -> Result<Self> {
        let maxsite = freq.sites.iter().map(|s| s.abs()).max().unwrap_or(0) as usize;
        if nx < 2 * jmax.max(maxsite) + 2 {
            return Err(Error::Config(format!("nx = {nx} too small for J = {jmax}")));
        }
        if freq.sites.iter().any(|&s| s <= 0) {
            return Err(Error::Config("sites must be positive".into()));
        }
        let nu = freq.nu_of_omega(omega)?;
        if nu.iter().any(|v| *v <= 0.0) {
            return Err(Error::Config(format!("actions {nu:?} must be positive")));
        }
        let jm = jmax as i64;
        let normal: Vec<bool> = (-jm..=jm).map(|j| j != 0 && !freq.sites.contains(&j.abs())).collect();
        let big_omega = (-jm..=jm)
            .zip(&normal)
            .map(|(j, n)| if *n { freq.omega_normal(&nu, j) } else { 0.0 })
            .collect();
        Ok(ToyHamiltonian {
            twist: freq.twist(),
            omega_kdv: omega.iter().map(|v| -v).collect(),
            freq,
            density,
            eps,
            jmax,
            nx,
            omega: omega.to_vec(),
            nu,
            big_omega,
            normal,
        })
    }

    pub fn d(&self) -> usize {
        self.freq.d()
    }

    /// Normal modes `0 < |j| <= J`, `|j|` not a site.
    pub fn normal_modes(&self) -> Vec<i64> {
        let jm = self.jmax as i64;
        (-jm..=jm).filter(|j| self.is_normal(*j)).collect()
    }

    pub fn is_normal(&self, j: i64) -> bool {
        j.unsigned_abs() as usize <= self.jmax && self.normal[(j + self.jmax as i64) as usize]
    }

    fn to_grid(&self, c: &[C64]) -> Vec<C64> {
        let mut buf = vec![C64::new(0.0, 0.0); self.nx];
        let jm = self.jmax as i64;
        for (i, v) in c.iter().enumerate() {
            let j = i as i64 - jm;
            buf[j.rem_euclid(self.nx as i64) as usize] += v;
        }
        fft::inverse(&mut buf, &[self.nx], &[0]);
        buf
    }

    /// Coefficients `|j| <= J` of grid values (aliased).
    fn project(&self, vals: &[C64]) -> Vec<C64> {
        let mut buf = vals.to_vec();
        fft::forward(&mut buf, &[self.nx], &[0]);
        let jm = self.jmax as i64;
        (-jm..=jm).map(|j| buf[j.rem_euclid(self.nx as i64) as usize]).collect()
    }

    fn dx_coeffs(&self, c: &[C64]) -> Vec<C64> {
        let jm = self.jmax as i64;
        c.iter().enumerate().map(|(i, v)| v * C64::new(0.0, TWO_PI * (i as i64 - jm) as f64)).collect()
    }

    fn amplitude(&self, k: usize, y: f64) -> Result<f64> {
        let a = self.nu[k] + y;
        if a <= 0.0 {
            return Err(Error::InvalidField(format!("action nu + y = {a} is not positive at site {}", self.freq.sites[k])));
        }
        Ok((TWO_PI * self.freq.sites[k] as f64 * a).sqrt())
    }

    /// Physical profile `u` and `u_x` on the grid.
    pub fn profile(&self, p: &Point) -> Result<(Vec<f64>, Vec<f64>)> {
        let w = self.to_grid(&p.w);
        let wx = self.to_grid(&self.dx_coeffs(&p.w));
        let mut u: Vec<f64> = w.iter().map(|z| z.re).collect();
        let mut ux: Vec<f64> = wx.iter().map(|z| z.re).collect();
        for k in 0..self.d() {
            let a = self.amplitude(k, p.y[k])?;
            let kn = TWO_PI * self.freq.sites[k] as f64;
            for i in 0..self.nx {
                let arg = kn * i as f64 / self.nx as f64 - p.theta[k];
                u[i] += 2.0 * a * arg.cos();
                ux[i] -= 2.0 * a * kn * arg.sin();
            }
        }
        Ok((u, ux))
    }

    fn local(&self, p: &Point) -> Result<Local> {
        let (u, ux) = self.profile(p)?;
        let x: Vec<f64> = (0..self.nx).map(|i| i as f64 / self.nx as f64).collect();
        let ev = |e: &crate::expr::Expr| -> Vec<f64> { (0..self.nx).map(|i| e.eval(x[i], u[i], ux[i])).collect() };
        let d = self.d();
        let mut loc = Local {
            fval: ev(&self.density.f),
            f0: ev(&self.density.f0),
            f1: ev(&self.density.f1),
            f00: ev(&self.density.f00),
            f01: ev(&self.density.f01),
            f11: ev(&self.density.f11),
            ut: vec![],
            uxt: vec![],
            uy: vec![],
            uxy: vec![],
            utt: vec![],
            uxtt: vec![],
            uty: vec![],
            uxty: vec![],
            uyy: vec![],
            uxyy: vec![],
        };
        for k in 0..d {
            let a = self.amplitude(k, p.y[k])?;
            let act = self.nu[k] + p.y[k];
            let (a1, a2) = (a / (2.0 * act), -a / (4.0 * act * act));
            let kn = TWO_PI * self.freq.sites[k] as f64;
            let mut v = vec![vec![0.0; self.nx]; 10];
            for i in 0..self.nx {
                let arg = kn * x[i] - p.theta[k];
                let (s, c) = arg.sin_cos();
                v[0][i] = 2.0 * a * s;
                v[1][i] = 2.0 * a * kn * c;
                v[2][i] = 2.0 * a1 * c;
                v[3][i] = -2.0 * a1 * kn * s;
                v[4][i] = -2.0 * a * c;
                v[5][i] = 2.0 * a * kn * s;
                v[6][i] = 2.0 * a1 * s;
                v[7][i] = 2.0 * a1 * kn * c;
                v[8][i] = 2.0 * a2 * c;
                v[9][i] = -2.0 * a2 * kn * s;
            }
            let mut it = v.into_iter();
            loc.ut.push(it.next().unwrap());
            loc.uxt.push(it.next().unwrap());
            loc.uy.push(it.next().unwrap());
            loc.uxy.push(it.next().unwrap());
            loc.utt.push(it.next().unwrap());
            loc.uxtt.push(it.next().unwrap());
            loc.uty.push(it.next().unwrap());
            loc.uxty.push(it.next().unwrap());
            loc.uyy.push(it.next().unwrap());
            loc.uxyy.push(it.next().unwrap());
        }
        Ok(loc)
    }

    fn mean<T: Copy + Into<C64>>(&self, it: impl Iterator<Item = T>) -> C64 {
        it.map(Into::into).sum::<C64>() / self.nx as f64
    }

    /// Value of the Hamiltonian at a point.
    pub fn value(&self, p: &Point) -> Result<f64> {
        let loc = self.local(p)?;
        let jm = self.jmax as i64;
        let mut h = 0.0;
        for k in 0..self.d() {
            h += self.omega_kdv[k] * p.y[k];
            for i in 0..self.d() {
                h += 0.5 * self.twist[(k, i)] * p.y[k] * p.y[i];
            }
        }
        for j in -jm..=jm {
            let i = (j + jm) as usize;
            h += 0.5 * self.big_omega[i] * (p.w[i] * p.w[(-j + jm) as usize]).re;
        }
        Ok(h + self.eps * loc.fval.iter().sum::<f64>() / self.nx as f64)
    }

    /// `(grad_theta H, grad_y H, grad_w H)`; the `w` part is the L^2
    /// gradient restricted to normal modes.
    pub fn gradient(&self, p: &Point) -> Result<Tangent> {
        let loc = self.local(p)?;
        let d = self.d();
        let mut g = Tangent::zeros(d, self.jmax);
        for k in 0..d {
            let gt = self.mean((0..self.nx).map(|i| loc.f0[i] * loc.ut[k][i] + loc.f1[i] * loc.uxt[k][i]));
            let gy = self.mean((0..self.nx).map(|i| loc.f0[i] * loc.uy[k][i] + loc.f1[i] * loc.uxy[k][i]));
            g.theta[k] = gt * self.eps;
            let lin: f64 = self.omega_kdv[k] + (0..d).map(|i| self.twist[(k, i)] * p.y[i]).sum::<f64>();
            g.y[k] = gy * self.eps + lin;
        }
        let p0 = self.project(&loc.f0.iter().map(|v| C64::new(*v, 0.0)).collect::<Vec<_>>());
        let p1 = self.dx_coeffs(&self.project(&loc.f1.iter().map(|v| C64::new(*v, 0.0)).collect::<Vec<_>>()));
        for (i, gw) in g.w.iter_mut().enumerate() {
            if self.normal[i] {
                *gw = (p0[i] - p1[i]) * self.eps + p.w[i] * self.big_omega[i];
            }
        }
        Ok(g)
    }

    /// Second derivative of `H` applied to a tangent vector.
    pub fn hessian_apply(&self, p: &Point, t: &Tangent) -> Result<Tangent> {
        let loc = self.local(p)?;
        self.hessian_apply_local(&loc, t)
    }

    fn hessian_apply_local(&self, loc: &Local, t: &Tangent) -> Result<Tangent> {
        let d = self.d();
        let nx = self.nx;
        let mut du = self.to_grid(&t.w);
        let mut dux = self.to_grid(&self.dx_coeffs(&t.w));
        for k in 0..d {
            for i in 0..nx {
                du[i] += t.theta[k] * loc.ut[k][i] + t.y[k] * loc.uy[k][i];
                dux[i] += t.theta[k] * loc.uxt[k][i] + t.y[k] * loc.uxy[k][i];
            }
        }
        let bil = |a: &[f64], ax: &[f64]| -> C64 {
            self.mean((0..nx).map(|i| {
                du[i] * (loc.f00[i] * a[i] + loc.f01[i] * ax[i]) + dux[i] * (loc.f01[i] * a[i] + loc.f11[i] * ax[i])
            }))
        };
        let mut out = Tangent::zeros(d, self.jmax);
        for k in 0..d {
            let sec_t = self.mean((0..nx).map(|i| {
                t.theta[k] * (loc.f0[i] * loc.utt[k][i] + loc.f1[i] * loc.uxtt[k][i])
                    + t.y[k] * (loc.f0[i] * loc.uty[k][i] + loc.f1[i] * loc.uxty[k][i])
            }));
            let sec_y = self.mean((0..nx).map(|i| {
                t.theta[k] * (loc.f0[i] * loc.uty[k][i] + loc.f1[i] * loc.uxty[k][i])
                    + t.y[k] * (loc.f0[i] * loc.uyy[k][i] + loc.f1[i] * loc.uxyy[k][i])
            }));
            out.theta[k] = (bil(&loc.ut[k], &loc.uxt[k]) + sec_t) * self.eps;
            let lin: C64 = (0..d).map(|i| t.y[i] * self.twist[(k, i)]).sum();
            out.y[k] = (bil(&loc.uy[k], &loc.uxy[k]) + sec_y) * self.eps + lin;
        }
        let a: Vec<C64> = (0..nx).map(|i| du[i] * loc.f00[i] + dux[i] * loc.f01[i]).collect();
        let b: Vec<C64> = (0..nx).map(|i| du[i] * loc.f01[i] + dux[i] * loc.f11[i]).collect();
        let pa = self.project(&a);
        let pb = self.dx_coeffs(&self.project(&b));
        for (i, ow) in out.w.iter_mut().enumerate() {
            if self.normal[i] {
                *ow = (pa[i] - pb[i]) * self.eps + t.w[i] * self.big_omega[i];
            }
        }
        Ok(out)
    }

    /// Hessian applied to several tangent vectors at one point.
    pub fn hessian_columns(&self, p: &Point, ts: &[Tangent]) -> Result<Vec<Tangent>> {
        let loc = self.local(p)?;
        ts.iter().map(|t| self.hessian_apply_local(&loc, t)).collect()
    }

    /// Sampled `eps f_11` and `eps (f_00 - d_x f_01)` along the profile:
    /// the coefficients of `d^2_w P = -d_x(a d_x) + b`.
    pub fn hessian_coefficients(&self, p: &Point) -> Result<(Vec<f64>, Vec<f64>)> {
        let loc = self.local(p)?;
        let f01c = self.dx_coeffs(&self.project(&loc.f01.iter().map(|v| C64::new(*v, 0.0)).collect::<Vec<_>>()));
        let f01x = self.to_grid(&f01c);
        let a = loc.f11.iter().map(|v| self.eps * v).collect();
        let b = (0..self.nx).map(|i| self.eps * (loc.f00[i] - f01x[i].re)).collect();
        Ok((a, b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy(eps: f64, f: &str, sites: Vec<i64>) -> ToyHamiltonian {
        let freq = ToyFrequencies::new(sites, 1.0, 1.0);
        let nu: Vec<f64> = (0..freq.d()).map(|k| 0.1 + 0.05 * k as f64).collect();
        let omega = freq.omega_of_nu(&nu);
        ToyHamiltonian::new(freq, Density::parse(f).unwrap(), eps, 8, 64, &omega).unwrap()
    }

    fn random_point(h: &ToyHamiltonian, rng: &mut ChaCha8Rng, amp: f64) -> Point {
        let jm = h.jmax as i64;
        let mut w = vec![C64::new(0.0, 0.0); 2 * h.jmax + 1];
        for j in 1..=jm {
            if h.is_normal(j) {
                let v = C64::new(rng.gen_range(-amp..amp), rng.gen_range(-amp..amp)) / (j * j) as f64;
                w[(j + jm) as usize] = v;
                w[(-j + jm) as usize] = v.conj();
            }
        }
        Point {
            theta: (0..h.d()).map(|_| rng.gen_range(0.0..6.0)).collect(),
            y: (0..h.d()).map(|_| rng.gen_range(-0.02..0.02)).collect(),
            w,
        }
    }

    fn random_tangent(h: &ToyHamiltonian, rng: &mut ChaCha8Rng) -> Tangent {
        let mut t = Tangent::zeros(h.d(), h.jmax);
        for k in 0..h.d() {
            t.theta[k] = C64::new(rng.gen_range(-1.0..1.0), 0.0);
            t.y[k] = C64::new(rng.gen_range(-1.0..1.0), 0.0);
        }
        let jm = h.jmax as i64;
        for j in 1..=jm {
            if h.is_normal(j) {
                let v = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) / (j * j) as f64;
                t.w[(j + jm) as usize] = v;
                t.w[(-j + jm) as usize] = v.conj();
            }
        }
        t
    }

    fn shift(p: &Point, t: &Tangent, h: f64) -> Point {
        Point {
            theta: p.theta.iter().zip(&t.theta).map(|(a, b)| a + h * b.re).collect(),
            y: p.y.iter().zip(&t.y).map(|(a, b)| a + h * b.re).collect(),
            w: p.w.iter().zip(&t.w).map(|(a, b)| a + b * h).collect(),
        }
    }

    fn pair(g: &Tangent, t: &Tangent, jmax: usize) -> f64 {
        let jm = jmax as i64;
        let mut s: C64 = g.theta.iter().zip(&t.theta).map(|(a, b)| a * b).sum::<C64>() + g.y.iter().zip(&t.y).map(|(a, b)| a * b).sum::<C64>();
        for j in -jm..=jm {
            s += g.w[(j + jm) as usize] * t.w[(-j + jm) as usize];
        }
        s.re
    }

    #[test]
    fn frequency_inversion_round_trips() {
        let f = ToyFrequencies::new(vec![1, 3], 0.7, 1.3);
        let nu = vec![0.2, 0.05];
        let omega = f.omega_of_nu(&nu);
        let back = f.nu_of_omega(&omega).unwrap();
        assert!(back.iter().zip(&nu).all(|(a, b)| (a - b).abs() < 1e-12));
        assert!(f.twist().determinant() > 0.0);
        for n in 2..6 {
            assert_eq!(f.normal(&nu, -n), -f.normal(&nu, n));
            assert_eq!(f.omega_normal(&nu, -n), f.omega_normal(&nu, n));
        }
        let q = f.kdv_model(&nu);
        assert!((f.normal(&nu, 4) - (TWO_PI * 4.0).powi(3) - q.q(4)).abs() < 1e-9);
        assert!(ToyFrequencies::new(vec![1], 0.0, 0.0).nu_of_omega(&[1.0]).is_err());
    }

    #[test]
    fn gradient_matches_differences_of_the_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for f in ["cos(2*pi*x)*z0^2", "z0^3 + 0.1*z1^2*z0"] {
            let h = toy(0.3, f, vec![1, 2]);
            let p = random_point(&h, &mut rng, 0.1);
            let t = random_tangent(&h, &mut rng);
            let g = h.gradient(&p).unwrap();
            let step = 1e-5;
            let fd = (h.value(&shift(&p, &t, step)).unwrap() - h.value(&shift(&p, &t, -step)).unwrap()) / (2.0 * step);
            let an = pair(&g, &t, h.jmax);
            assert!((fd - an).abs() < 1e-6 * (1.0 + an.abs()), "{f}: {fd} vs {an}");
        }
    }

    #[test]
    fn hessian_matches_differences_of_the_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for f in ["cos(2*pi*x)*z0^2", "z0^3 + 0.1*z1^2*z0 + sin(z1)"] {
            let h = toy(0.3, f, vec![1, 2]);
            let p = random_point(&h, &mut rng, 0.1);
            let t = random_tangent(&h, &mut rng);
            let hv = h.hessian_apply(&p, &t).unwrap();
            let step = 1e-5;
            let gp = h.gradient(&shift(&p, &t, step)).unwrap();
            let gm = h.gradient(&shift(&p, &t, -step)).unwrap();
            let scale = hv.w.iter().chain(&hv.y).map(|z| z.norm()).fold(1.0, f64::max);
            for (i, v) in hv.theta.iter().chain(&hv.y).chain(&hv.w).enumerate() {
                let fd = (gp.theta.iter().chain(&gp.y).chain(&gp.w).nth(i).unwrap()
                    - gm.theta.iter().chain(&gm.y).chain(&gm.w).nth(i).unwrap())
                    / (2.0 * step);
                assert!((fd - v).norm() < 1e-6 * scale, "{f} {i}: {fd} vs {v}");
            }
            let t2 = random_tangent(&h, &mut rng);
            let h2 = h.hessian_apply(&p, &t2).unwrap();
            assert!((pair(&hv, &t2, h.jmax) - pair(&h2, &t, h.jmax)).abs() < 1e-9 * scale);
        }
    }

    #[test]
    fn unperturbed_gradient_is_the_normal_form() {
        let h = toy(0.0, "cos(2*pi*x)*z0^2", vec![1]);
        let p = Point { theta: vec![0.3], y: vec![0.0], w: vec![C64::new(0.0, 0.0); 17] };
        let g = h.gradient(&p).unwrap();
        assert_eq!(g.y[0].re, -h.omega[0]);
        assert_eq!(g.theta[0], C64::new(0.0, 0.0));
        assert!(g.w.iter().all(|z| *z == C64::new(0.0, 0.0)));
        assert!(!h.is_normal(1) && !h.is_normal(0) && h.is_normal(2));
    }

    #[test]
    fn semilinear_hessian_coefficients() {
        let h = toy(1e-2, "cos(2*pi*x)*z0^2", vec![1]);
        let p = Point { theta: vec![0.3], y: vec![0.0], w: vec![C64::new(0.0, 0.0); 17] };
        let (a, b) = h.hessian_coefficients(&p).unwrap();
        assert!(a.iter().all(|v| *v == 0.0));
        for (i, v) in b.iter().enumerate() {
            assert!((v - 2e-2 * (TWO_PI * i as f64 / h.nx as f64).cos()).abs() < 1e-15);
        }
    }
}
