use super::operator::QPOperator;
use crate::error::{Error, Result};
use crate::spaces::{bracket, dist, ParamFamily};

/// Tame constants `M(s)` fitted on single-mode probes.
#[derive(Clone, Debug, PartialEq)]
pub struct TameReport {
    pub s_grid: Vec<f64>,
    pub sigma: f64,
    /// Nondecreasing in `s`.
    pub constants: Vec<f64>,
}

fn probe_ratio(blocks: &[crate::linalg::CMat], a: &QPOperator, s: f64, sigma: f64) -> f64 {
    let shape = a.bx.ell_shape();
    let n = a.bx.nphi() as i64;
    let l = a.bx.l as i64;
    let wrap = |v: i64| {
        let r = v.rem_euclid(n);
        if r > l {
            r - n
        } else {
            r
        }
    };
    let ells = shape.ells();
    let mut best: f64 = 0.0;
    for ep in &ells {
        for (ci, &jp) in a.bx.cols.iter().enumerate() {
            let mut acc = 0.0;
            for ell in &ells {
                let diff: Vec<i64> = ell.iter().zip(ep).map(|(x, y)| wrap(x - y)).collect();
                let b = &blocks[shape.ell_index(&diff).unwrap()];
                for (ri, &j) in a.bx.rows.iter().enumerate() {
                    acc += b[(ri, ci)].norm_sqr() * bracket(ell, j).powf(2.0 * s);
                }
            }
            best = best.max(acc.sqrt() / bracket(ep, jp).powf(s + sigma));
        }
    }
    best
}

/// `M(s) = sup_{probe e} |A e|_s / <e>^{s + sigma}` over the box, made
/// nondecreasing along the sorted `s_grid`.
pub fn tame_probe(a: &QPOperator, s_grid: &[f64], sigma: f64) -> Result<TameReport> {
    if s_grid.iter().any(|s| *s < 0.0 || !s.is_finite()) {
        return Err(Error::InvalidField("Sobolev indices must be nonnegative".into()));
    }
    let mut grid = s_grid.to_vec();
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let blocks = a.blocks();
    let mut constants = Vec::with_capacity(grid.len());
    let mut run: f64 = 0.0;
    for &s in &grid {
        run = run.max(probe_ratio(&blocks, a, s, sigma));
        constants.push(run);
    }
    Ok(TameReport { s_grid: grid, sigma, constants })
}

/// `Lip(gamma)` tame constants: `sup M(s) + gamma sup |Delta M|(s-1) / |Delta omega|`.
pub fn tame_probe_lip(family: &ParamFamily<QPOperator>, s_grid: &[f64], sigma: f64) -> Result<TameReport> {
    let mut grid = s_grid.to_vec();
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut sup = vec![0.0f64; grid.len()];
    for op in &family.values {
        let r = tame_probe(op, &grid, sigma)?;
        for (a, b) in sup.iter_mut().zip(&r.constants) {
            *a = a.max(*b);
        }
    }
    let mut lip = vec![0.0f64; grid.len()];
    for (i, k) in family.lipschitz_pairs() {
        let dw = dist(&family.omegas[i], &family.omegas[k]);
        if dw == 0.0 {
            continue;
        }
        let diff = family.values[i].sub(&family.values[k])?;
        let blocks = diff.blocks();
        for (idx, &s) in grid.iter().enumerate() {
            let v = probe_ratio(&blocks, &diff, (s - 1.0).max(0.0), sigma) / dw;
            lip[idx] = lip[idx].max(v);
        }
    }
    let mut run: f64 = 0.0;
    let constants = sup
        .iter()
        .zip(&lip)
        .map(|(a, b)| {
            run = run.max(a + family.gamma * b);
            run
        })
        .collect();
    Ok(TameReport { s_grid: grid, sigma, constants })
}
