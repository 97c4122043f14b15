//! Truncated quasi-periodic function spaces, frequency families and
//! Diophantine tests.

mod field;

pub use field::*;

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Diophantine constants `(gamma, tau)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiophantineClass {
    pub gamma: f64,
    pub tau: f64,
}

/// Outcome of a Diophantine scan.
#[derive(Clone, Debug, PartialEq)]
pub struct DiophantineReport {
    pub ok: bool,
    /// Smallest `|omega . l| |l|^tau` over the scanned box.
    pub margin: f64,
    pub worst: Vec<i64>,
}

/// Checks `|omega . l| >= gamma / |l|^tau` for `0 < |l|_inf <= lmax`.
pub fn is_diophantine(omega: &[f64], dc: DiophantineClass, lmax: usize) -> Result<DiophantineReport> {
    if omega.iter().any(|w| !w.is_finite()) {
        return Err(Error::InvalidField("non-finite frequency".into()));
    }
    let d = omega.len();
    let shape = FieldShape::new(d, lmax, 0);
    let mut margin = f64::INFINITY;
    let mut worst = vec![0; d];
    for i in 0..shape.n_ell() {
        let ell = shape.ell_of(i);
        if ell.iter().all(|&e| e == 0) {
            continue;
        }
        let m = dot(omega, &ell).abs() * ell_len(&ell).powf(dc.tau);
        if m < margin {
            margin = m;
            worst = ell;
        }
    }
    Ok(DiophantineReport { ok: margin >= dc.gamma, margin, worst })
}

/// Values sampled on a grid of frequencies, with the weight `gamma` used by
/// the `Lip(gamma)` norms.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParamFamily<T> {
    pub omegas: Vec<Vec<f64>>,
    pub values: Vec<T>,
    pub gamma: f64,
}

impl<T> ParamFamily<T> {
    pub fn new(omegas: Vec<Vec<f64>>, values: Vec<T>, gamma: f64) -> Result<Self> {
        if omegas.len() != values.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} frequencies for {} values",
                omegas.len(),
                values.len()
            )));
        }
        Ok(ParamFamily { omegas, values, gamma })
    }

    pub fn map<U>(&self, f: impl Fn(&[f64], &T) -> U) -> ParamFamily<U> {
        ParamFamily {
            omegas: self.omegas.clone(),
            values: self.omegas.iter().zip(&self.values).map(|(w, v)| f(w, v)).collect(),
            gamma: self.gamma,
        }
    }

    /// Pairs entering the Lipschitz quotient: all pairs for at most 32
    /// samples, otherwise each sample with its nearest neighbour.
    pub fn lipschitz_pairs(&self) -> Vec<(usize, usize)> {
        let n = self.omegas.len();
        let mut pairs = Vec::new();
        if n <= 32 {
            for a in 0..n {
                for b in a + 1..n {
                    pairs.push((a, b));
                }
            }
        } else {
            for a in 0..n {
                let mut best = (f64::INFINITY, a);
                for b in 0..n {
                    if b != a {
                        let dd = dist(&self.omegas[a], &self.omegas[b]);
                        if dd < best.0 {
                            best = (dd, b);
                        }
                    }
                }
                let (x, y) = (a.min(best.1), a.max(best.1));
                if !pairs.contains(&(x, y)) {
                    pairs.push((x, y));
                }
            }
        }
        pairs
    }
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `|u|^{Lip(gamma)}_s = sup |u|_s + gamma sup |u(w1) - u(w2)|_{s-1} / |w1 - w2|`.
pub fn lipschitz_norm(family: &ParamFamily<TruncatedField>, s: f64) -> Result<f64> {
    if s < 0.0 {
        return Err(Error::InvalidField(format!("negative Sobolev index {s}")));
    }
    let mut sup: f64 = 0.0;
    for v in &family.values {
        sup = sup.max(v.sobolev_norm(s)?);
    }
    let mut lip: f64 = 0.0;
    for (a, b) in family.lipschitz_pairs() {
        let dw = dist(&family.omegas[a], &family.omegas[b]);
        if dw == 0.0 {
            continue;
        }
        let diff = family.values[a].sub(&family.values[b]);
        lip = lip.max(diff.sobolev_norm_signed(s - 1.0)? / dw);
    }
    Ok(sup + family.gamma * lip)
}

/// Same norm for scalar-valued families (`|.|` in place of `|.|_s`).
pub fn lipschitz_norm_scalar(family: &ParamFamily<f64>) -> f64 {
    let sup = family.values.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let mut lip: f64 = 0.0;
    for (a, b) in family.lipschitz_pairs() {
        let dw = dist(&family.omegas[a], &family.omegas[b]);
        if dw > 0.0 {
            lip = lip.max((family.values[a] - family.values[b]).abs() / dw);
        }
    }
    sup + family.gamma * lip
}
