//! KAM reducibility of `omega.d_phi + i D + R` on the normal box: second
//! Melnikov filtering, homological equations, exact exponential
//! conjugations and the almost-inverse of the diagonalised operator.

use crate::algebra::{OpBox, QPOperator};
use crate::error::{Error, Result};
use crate::linalg::{self, CMat};
use crate::reduction::{scheme_constants, KdvFrequencyModel, ReducedOperator, SchemeConstants};
use crate::spaces::{dist, dot, ell_len, FieldShape, TruncatedField};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

const TWO_PI: f64 = 2.0 * PI;

/// Eigenvalues `mu_j` of the diagonal part, indexed like the box modes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagonalPart {
    pub modes: Vec<i64>,
    pub mu: Vec<f64>,
    /// Values at the start of the iteration.
    pub mu0: Vec<f64>,
}

impl DiagonalPart {
    pub fn new(modes: Vec<i64>, mu: Vec<f64>) -> Self {
        DiagonalPart { mu0: mu.clone(), modes, mu }
    }

    /// `mu_j^0 = m3 (2 pi j)^3 - m1 2 pi j - q_j`.
    pub fn unperturbed(modes: Vec<i64>, m3: f64, m1: f64, freq: &KdvFrequencyModel) -> Self {
        let mu = modes
            .iter()
            .map(|&j| {
                let x = TWO_PI * j as f64;
                m3 * x.powi(3) - m1 * x - freq.q(j)
            })
            .collect();
        Self::new(modes, mu)
    }

    pub fn get(&self, j: i64) -> Option<f64> {
        self.modes.iter().position(|&m| m == j).map(|i| self.mu[i])
    }

    /// Corrections `r_j = mu_j - mu_j^0`.
    pub fn corrections(&self) -> Vec<f64> {
        self.mu.iter().zip(&self.mu0).map(|(a, b)| a - b).collect()
    }

    /// `max |mu_{-j} + mu_j|` over the stored pairs.
    pub fn oddness_defect(&self) -> f64 {
        self.modes
            .iter()
            .zip(&self.mu)
            .filter_map(|(&j, m)| self.get(-j).map(|n| (m + n).abs()))
            .fold(0.0, f64::max)
    }
}

/// `|omega.l + mu_j - mu_j'| >= gamma |j^3 - j'^3| <l>^{-tau}`.
pub fn melnikov2_ok(omega: &[f64], d: &DiagonalPart, ell: &[i64], j: i64, jp: i64, gamma: f64, tau: f64) -> bool {
    let (Some(a), Some(b)) = (d.get(j), d.get(jp)) else { return false };
    melnikov2_value(omega, a, b, ell, j, jp, gamma, tau)
}

#[allow(clippy::too_many_arguments)]
fn melnikov2_value(omega: &[f64], mu_j: f64, mu_jp: f64, ell: &[i64], j: i64, jp: i64, gamma: f64, tau: f64) -> bool {
    let div = (dot(omega, ell) + mu_j - mu_jp).abs();
    let rhs = gamma * ((j.pow(3) - jp.pow(3)).abs() as f64) * ell_len(ell).max(1.0).powf(-tau);
    div >= rhs
}

/// Settings of the KAM iteration.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct KamConfig {
    pub gamma: f64,
    pub tau: f64,
    /// `N_nu = n0^{chi^nu}`.
    pub n0: f64,
    pub chi: f64,
    /// Exponent of the smallness condition, default `2 tau + 3`.
    pub tau_bar: Option<f64>,
    /// Abort when `n0^{tau_bar} |R_0| / gamma` exceeds this value.
    pub gate: Option<f64>,
    /// Largest admissible `|Psi|_1` on a sample.
    pub exp_guard: f64,
}

impl Default for KamConfig {
    fn default() -> Self {
        KamConfig { gamma: 1e-2, tau: 5.0, n0: 3.0, chi: 1.5, tau_bar: None, gate: None, exp_guard: 1.0 }
    }
}

impl KamConfig {
    pub fn tau_bar(&self) -> f64 {
        self.tau_bar.unwrap_or(2.0 * self.tau + 3.0)
    }

    /// `N_nu`, with `N_{-1} = 1`.
    pub fn cutoff(&self, nu: i64) -> f64 {
        if nu < 0 {
            1.0
        } else {
            self.n0.powf(self.chi.powi(nu as i32))
        }
    }
}

/// Solution of a homological equation.
#[derive(Clone, Debug)]
pub struct Homological {
    pub psi: QPOperator,
    /// `R_j^j(0)`.
    pub diag: Vec<C64>,
    /// Entries `(l, j, j')` left unsolved because of a Melnikov violation.
    pub skipped: Vec<(Vec<i64>, i64, i64)>,
}

/// `Psi_j^{j'}(l) = R_j^{j'}(l) / (i (omega.l + mu_j - mu_j'))` for `|l| <= n`,
/// `(l, j, j') != (0, j, j)`. With `strict` a Melnikov violation is an error,
/// otherwise the entry is skipped and reported.
pub fn solve_homological(
    r: &QPOperator,
    d: &DiagonalPart,
    omega: &[f64],
    n: f64,
    gamma: f64,
    tau: f64,
    strict: bool,
) -> Result<Homological> {
    let bx = &r.bx;
    if bx.rows != d.modes || bx.cols != d.modes {
        return Err(Error::DimensionMismatch("operator box and diagonal modes differ".into()));
    }
    let shape = bx.ell_shape();
    let mut blocks = r.blocks();
    let zero = shape.ell_index(&vec![0; bx.d]).expect("zero mode");
    let diag: Vec<C64> = (0..d.modes.len()).map(|i| blocks[zero][(i, i)]).collect();
    let mut skipped = Vec::new();
    for (bi, b) in blocks.iter_mut().enumerate() {
        let ell = shape.ell_of(bi);
        let inside = ell_len(&ell) <= n;
        let w = dot(omega, &ell);
        for (ri, &j) in d.modes.iter().enumerate() {
            for (ci, &jp) in d.modes.iter().enumerate() {
                if !inside || (bi == zero && ri == ci) {
                    b[(ri, ci)] = C64::new(0.0, 0.0);
                    continue;
                }
                let div = w + d.mu[ri] - d.mu[ci];
                let scale = 1.0 + d.mu[ri].abs() + d.mu[ci].abs();
                if !melnikov2_value(omega, d.mu[ri], d.mu[ci], &ell, j, jp, gamma, tau) || div.abs() <= 1e-14 * scale {
                    if b[(ri, ci)] != C64::new(0.0, 0.0) {
                        skipped.push((ell.clone(), j, jp));
                    }
                    b[(ri, ci)] = C64::new(0.0, 0.0);
                    continue;
                }
                b[(ri, ci)] /= C64::new(0.0, div);
            }
        }
    }
    if strict && !skipped.is_empty() {
        let (e, j, jp) = &skipped[0];
        return Err(Error::MelnikovViolation { count: skipped.len(), first: format!("l = {e:?}, j = {j}, j' = {jp}") });
    }
    Ok(Homological { psi: QPOperator::from_blocks(bx.clone(), &blocks), diag, skipped })
}

/// `-omega.d_phi Psi - i [D, Psi] + Pi_N R - [R]`.
pub fn homological_residual(h: &Homological, r: &QPOperator, d: &DiagonalPart, omega: &[f64], n: f64) -> Result<QPOperator> {
    let comm = commutator_diag(&h.psi, &d.mu);
    let shape = r.bx.ell_shape();
    let zero = shape.ell_index(&vec![0; r.bx.d]).expect("zero mode");
    let pr = r.map_blocks(|ell, b| {
        let mut b = if ell_len(ell) <= n { b.clone() } else { b * C64::new(0.0, 0.0) };
        if shape.ell_index(ell) == Some(zero) {
            for i in 0..b.nrows() {
                b[(i, i)] -= h.diag[i];
            }
        }
        b
    });
    h.psi
        .omega_dphi(omega)
        .scale(C64::new(-1.0, 0.0))
        .sub(&comm.scale(C64::new(0.0, 1.0)))?
        .add(&pr)
}

/// `[D, A]_{jj'} = (mu_j - mu_j') A_{jj'}`, sample by sample.
fn commutator_diag(a: &QPOperator, mu: &[f64]) -> QPOperator {
    a.map(|s| CMat::from_fn(s.nrows(), s.ncols(), |r, c| s[(r, c)] * (mu[r] - mu[c])))
}

/// Majorant column norm `sup_{j'} sum_{l, j} |R_j^{j'}(l)|`.
pub fn kam_norm(r: &QPOperator) -> f64 {
    let blocks = r.blocks();
    (0..r.ncols())
        .map(|c| blocks.iter().map(|b| b.column(c).iter().map(|z| z.norm()).sum::<f64>()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Same norm without the diagonal `l = 0` entries.
pub fn kam_norm_offdiag(r: &QPOperator) -> f64 {
    let shape = r.bx.ell_shape();
    let zero = shape.ell_index(&vec![0; r.bx.d]).expect("zero mode");
    let off = r.map_blocks(|ell, b| {
        let mut b = b.clone();
        if shape.ell_index(ell) == Some(zero) {
            for i in 0..b.nrows().min(b.ncols()) {
                b[(i, i)] = C64::new(0.0, 0.0);
            }
        }
        b
    });
    kam_norm(&off)
}

/// Diagnostics of one KAM step.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KamRecord {
    pub nu: usize,
    pub cutoff: f64,
    pub norm_before: f64,
    pub norm_after: f64,
    pub offdiag_after: f64,
    pub skipped: usize,
    /// `max |Im(mu_j - i R_j^j(0))|`.
    pub max_imag: f64,
    pub oddness: f64,
    /// `max_j |mu_j^+ - mu_j|`.
    pub mu_shift: f64,
    /// Relative entrywise defect of `Phi L Phi^{-1} = omega.d_phi + i D^+ + R^+`.
    pub conservation: f64,
}

/// State of the iteration for one frequency vector.
#[derive(Clone, Debug)]
pub struct KamState {
    pub nu: usize,
    pub omega: Vec<f64>,
    pub d: DiagonalPart,
    pub r: QPOperator,
    /// Accumulated conjugator `U_nu` and its inverse.
    pub u: QPOperator,
    pub u_inv: QPOperator,
    pub surviving: bool,
    pub constants: SchemeConstants,
    pub cfg: KamConfig,
    /// `n0^{tau_bar} |R_0| / gamma`.
    pub gate_value: f64,
    pub history: Vec<KamRecord>,
}

impl KamState {
    /// Starts from `omega.d_phi + i diag(mu) + R`.
    pub fn new(omega: &[f64], d: DiagonalPart, r: QPOperator, cfg: KamConfig) -> Result<Self> {
        if r.bx.rows != d.modes || r.bx.cols != d.modes || omega.len() != r.bx.d {
            return Err(Error::DimensionMismatch("KAM data".into()));
        }
        let gate_value = cfg.n0.powf(cfg.tau_bar()) * kam_norm(&r) / cfg.gamma;
        if let Some(g) = cfg.gate {
            if gate_value > g {
                return Err(Error::Gate(format!("N0^tau_bar |R0| / gamma = {gate_value:e} > {g:e}")));
            }
        }
        let id = QPOperator::identity(r.bx.clone());
        Ok(KamState {
            nu: 0,
            omega: omega.to_vec(),
            constants: scheme_constants(omega.len(), cfg.tau),
            d,
            u: id.clone(),
            u_inv: id,
            r,
            surviving: true,
            cfg,
            gate_value,
            history: vec![],
        })
    }

    pub fn bx(&self) -> &OpBox {
        &self.r.bx
    }

    /// The family `i D + R`.
    pub fn operator(&self) -> Result<QPOperator> {
        self.r.add(&diag_op(self.bx(), &self.d.mu))
    }
}

fn diag_op(bx: &OpBox, mu: &[f64]) -> QPOperator {
    let n = mu.len();
    let m = CMat::from_fn(n, n, |r, c| if r == c { C64::new(0.0, mu[r]) } else { C64::new(0.0, 0.0) });
    QPOperator { bx: bx.clone(), samples: vec![m; bx.n_samples()] }
}

/// `mu_j^0` from the constants of a reduced operator and `R_0 = A^{(4)} - i D_0`.
pub fn init_kam(red: &ReducedOperator, cfg: KamConfig) -> Result<KamState> {
    if red.stage() != 4 {
        return Err(Error::Config("KAM needs the stage-4 operator".into()));
    }
    let (m3, m1) = (red.m3.unwrap(), red.m1.unwrap());
    let bx = red.nbox.op_box();
    let d = DiagonalPart::unperturbed(bx.rows.clone(), m3, m1, &red.freq);
    let r = red.last().op.sub(&diag_op(&bx, &d.mu))?;
    KamState::new(&red.omega, d, r, cfg)
}

/// One step: `Phi = exp(Psi)`, `mu^+ = mu - i R_j^j(0)` and
/// `R^+ = -i [D, E](I + E') + (I + E) R (I + E') + (I + E) omega.d_phi(E') - [R]`
/// with `E = Phi - I`, `E' = Phi^{-1} - I`.
pub fn kam_step(mut s: KamState) -> Result<KamState> {
    if !s.surviving {
        return Err(Error::Abort("frequency removed by the Melnikov filter".into()));
    }
    let n = s.cfg.cutoff(s.nu as i64);
    let norm_before = kam_norm(&s.r);
    let h = solve_homological(&s.r, &s.d, &s.omega, n, s.cfg.gamma, s.cfg.tau, false)?;
    let worst = h.psi.samples.iter().map(linalg::norm1).fold(0.0, f64::max);
    if !worst.is_finite() || worst > s.cfg.exp_guard {
        return Err(Error::Divergence(format!("|Psi|_1 = {worst:e} exceeds {}", s.cfg.exp_guard)));
    }
    let e = h.psi.try_map(linalg::expm1)?;
    let ep = h.psi.scale(C64::new(-1.0, 0.0)).try_map(linalg::expm1)?;
    let id = QPOperator::identity(s.bx().clone());
    let phi = id.add(&e)?;
    let phi_inv = id.add(&ep)?;
    let mu_new_c: Vec<C64> = s.d.mu.iter().zip(&h.diag).map(|(m, r)| C64::new(*m, 0.0) - C64::new(0.0, 1.0) * r).collect();
    let max_imag = mu_new_c.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    let mu_new: Vec<f64> = mu_new_c.iter().map(|z| z.re).collect();
    let bracket_r = {
        let nn = h.diag.len();
        let m = CMat::from_fn(nn, nn, |r, c| if r == c { h.diag[r] } else { C64::new(0.0, 0.0) });
        QPOperator { bx: s.bx().clone(), samples: vec![m; s.bx().n_samples()] }
    };
    let r_new = commutator_diag(&e, &s.d.mu)
        .mul(&phi_inv)?
        .scale(C64::new(0.0, -1.0))
        .add(&phi.mul(&s.r)?.mul(&phi_inv)?)?
        .add(&phi.mul(&ep.omega_dphi(&s.omega))?)?
        .sub(&bracket_r)?;
    // Independent route for the conservation check.
    let a = s.operator()?;
    let direct = phi.mul(&a)?.mul(&phi_inv)?.add(&phi.mul(&phi_inv.omega_dphi(&s.omega))?)?;
    let mut d_new = s.d.clone();
    d_new.mu = mu_new;
    let claimed = r_new.add(&diag_op(s.bx(), &d_new.mu))?;
    let conservation = direct.sub(&claimed)?.max_abs() / a.max_abs().max(1e-300);
    let mu_shift = s.d.mu.iter().zip(&d_new.mu).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    s.u = phi.mul(&s.u)?;
    s.u_inv = s.u_inv.mul(&phi_inv)?;
    s.history.push(KamRecord {
        nu: s.nu,
        cutoff: n,
        norm_before,
        norm_after: kam_norm(&r_new),
        offdiag_after: kam_norm_offdiag(&r_new),
        skipped: h.skipped.len(),
        max_imag,
        oddness: d_new.oddness_defect(),
        mu_shift,
        conservation,
    });
    if !h.skipped.is_empty() {
        s.surviving = false;
    }
    s.d = d_new;
    s.r = r_new;
    s.nu += 1;
    Ok(s)
}

/// Iterates up to `n_max` steps, stopping early when `R` vanishes. Aborts
/// when the norm fails to decrease twice.
pub fn kam_iterate(mut s: KamState, n_max: usize) -> Result<KamState> {
    let mut failures = 0;
    for _ in 0..n_max {
        if kam_norm(&s.r) == 0.0 || !s.surviving {
            break;
        }
        s = kam_step(s)?;
        let rec = s.history.last().unwrap();
        if rec.norm_after >= rec.norm_before {
            failures += 1;
            if failures >= 2 {
                let series: Vec<f64> = s.history.iter().map(|r| r.norm_after).collect();
                return Err(Error::Divergence(format!("KAM norms not decreasing: {series:?}")));
            }
        }
    }
    Ok(s)
}

/// Decay exponent of `|R_nu|` against `N_{nu-1}`, fitted on the history.
pub fn decay_exponent(s: &KamState) -> Option<f64> {
    let pts: Vec<(f64, f64)> = s
        .history
        .iter()
        .filter(|r| r.norm_after > 0.0)
        .map(|r| (s.cfg.cutoff(r.nu as i64 - 1).ln(), r.norm_after.ln()))
        .collect();
    if pts.len() < 2 || pts.iter().all(|p| p.0 == pts[0].0) {
        return None;
    }
    let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    Some(linalg::fit_slope(&x, &y))
}

/// Largest eigenvalue distance between `dense(U) L0 dense(U)^{-1}` and `L0`
/// on the box, for `L0 = omega.d_phi + a0`.
pub fn spectrum_check(a0: &QPOperator, omega: &[f64], u: &QPOperator) -> Result<f64> {
    let l0 = a0.dense_with_omega(omega);
    let ud = u.dense();
    let conj = &ud * &l0 * linalg::inverse(&ud)?;
    Ok(linalg::spectrum_distance(&linalg::eigenvalues(&l0), &linalg::eigenvalues(&conj)))
}

/// `L = L^< + R_n + R_n^perp` as box matrices, with
/// `L^< = Pi_K (omega.d_phi + i D) Pi_K + Pi_K^perp`.
#[derive(Clone, Debug)]
pub struct InverseSplit {
    pub k: f64,
    pub lower: CMat,
    pub r_n: CMat,
    pub r_perp: CMat,
}

pub fn inverse_split(s: &KamState, k: f64) -> InverseSplit {
    let bx = s.bx();
    let shape = bx.ell_shape();
    let nr = bx.rows.len();
    let nn = shape.n_ell() * nr;
    let mut lower = CMat::zeros(nn, nn);
    let mut r_perp = CMat::zeros(nn, nn);
    for a in 0..shape.n_ell() {
        let ell = shape.ell_of(a);
        let w = dot(&s.omega, &ell);
        for (i, m) in s.d.mu.iter().enumerate() {
            let p = a * nr + i;
            let v = C64::new(0.0, w + m);
            if ell_len(&ell) <= k {
                lower[(p, p)] = v;
            } else {
                lower[(p, p)] = C64::new(1.0, 0.0);
                r_perp[(p, p)] = v - C64::new(1.0, 0.0);
            }
        }
    }
    InverseSplit { k, lower, r_n: s.r.dense(), r_perp }
}

/// First Melnikov check `|omega.l + mu_j| >= 2 gamma |j|^3 <l>^{-tau}`.
pub fn melnikov1_ok(omega: &[f64], mu_j: f64, ell: &[i64], j: i64, gamma: f64, tau: f64) -> bool {
    (dot(omega, ell) + mu_j).abs() >= 2.0 * gamma * (j.abs().pow(3) as f64) * ell_len(ell).max(1.0).powf(-tau)
}

/// Solves `L^< h = g`: on `|l| <= k` divides by `i (omega.l + mu_j)`, elsewhere `h = g`.
pub fn almost_invert(s: &KamState, k: f64, g: &TruncatedField, gamma: f64, tau: f64) -> Result<TruncatedField> {
    let mut bad = Vec::new();
    for (ell, j, v) in g.modes() {
        if v == C64::new(0.0, 0.0) || ell_len(&ell) > k {
            continue;
        }
        match s.d.get(j) {
            None => bad.push(format!("mode {j} outside the normal box")),
            Some(mu) if !melnikov1_ok(&s.omega, mu, &ell, j, gamma, tau) => bad.push(format!("l = {ell:?}, j = {j}")),
            _ => {}
        }
    }
    if !bad.is_empty() {
        return Err(Error::MelnikovViolation { count: bad.len(), first: bad[0].clone() });
    }
    let h = g.map_coeffs(|ell, j, v| match s.d.get(j) {
        Some(mu) if ell_len(ell) <= k => v / C64::new(0.0, dot(&s.omega, ell) + mu),
        _ => v,
    });
    let mut h = h;
    h.real = false;
    Ok(h)
}

/// Applies `L^<`; the residual oracle of [`almost_invert`].
pub fn apply_lower(s: &KamState, k: f64, h: &TruncatedField) -> TruncatedField {
    let mut out = h.map_coeffs(|ell, j, v| {
        if ell_len(ell) > k {
            return v;
        }
        match s.d.get(j) {
            Some(mu) => v * C64::new(0.0, dot(&s.omega, ell) + mu),
            None => v,
        }
    });
    out.real = false;
    out
}

/// Order-zero Hamiltonian perturbation `eps d_x o (c T + T c) / 2`, `T = |d_x|^{-1}`.
pub fn order_zero_perturbation(bx: &OpBox, c: &TruncatedField, eps: f64) -> Result<QPOperator> {
    let mult = QPOperator::multiplication(bx.clone(), c)?;
    let t = QPOperator::multiplier(bx.clone(), |j| C64::new(1.0 / (TWO_PI * j.abs() as f64), 0.0));
    let g = mult.mul(&t)?.add(&t.mul(&mult)?)?.scale(C64::new(eps / 2.0, 0.0));
    let dx = QPOperator::multiplier(bx.clone(), |j| C64::new(0.0, TWO_PI * j as f64));
    dx.mul(&g)
}

/// `cos(2 pi x) cos(phi_1)` on `d` angles.
pub fn cos_cos(d: usize) -> TruncatedField {
    let mut e = vec![0i64; d];
    let mut f = TruncatedField::zeros(FieldShape::new(d, 1, 1), true);
    for s in [1i64, -1] {
        for t in [1i64, -1] {
            e[0] = s;
            f.set(&e, t, C64::new(0.25, 0.0));
        }
    }
    f
}

/// KAM runs over a grid of frequencies; a frequency that violates a
/// Melnikov condition stays removed.
#[derive(Clone, Debug)]
pub struct KamFamily {
    pub states: Vec<KamState>,
}

impl KamFamily {
    pub fn iterate(self, n_max: usize) -> Result<Self> {
        let states = self.states.into_iter().map(|s| kam_iterate(s, n_max)).collect::<Result<Vec<_>>>()?;
        Ok(KamFamily { states })
    }

    pub fn surviving(&self) -> Vec<bool> {
        self.states.iter().map(|s| s.surviving).collect()
    }

    /// `mu` of the nearest surviving frequency, the extension used off the surviving set.
    pub fn extended_mu(&self, i: usize) -> Result<&DiagonalPart> {
        let w = &self.states[i].omega;
        self.states
            .iter()
            .filter(|s| s.surviving)
            .min_by(|a, b| dist(&a.omega, w).partial_cmp(&dist(&b.omega, w)).unwrap())
            .map(|s| &s.d)
            .ok_or_else(|| Error::Abort("no surviving frequency".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reduction::{reduce, NormalBox, ReductionConfig, ReductionInput};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const OMEGA1: [f64; 1] = [1.618_033_988_749_895];
    const OMEGA2: [f64; 2] = [1.0, 1.618_033_988_749_895];

    fn nbox(d: usize, l: usize, j: usize) -> NormalBox {
        NormalBox::new((1..=d as i64).collect(), l, j)
    }

    fn airy_state(nb: &NormalBox, omega: &[f64], eps: f64) -> KamState {
        let bx = nb.op_box();
        let d = DiagonalPart::unperturbed(bx.rows.clone(), -1.0, 0.0, &KdvFrequencyModel::zero());
        let r0 = order_zero_perturbation(&bx, &cos_cos(nb.d()), eps).unwrap();
        KamState::new(omega, d, r0, KamConfig::default()).unwrap()
    }

    fn random_op(bx: &OpBox, amp: f64, seed: u64) -> QPOperator {
        let rng = std::cell::RefCell::new(ChaCha8Rng::seed_from_u64(seed));
        QPOperator::from_samples(bx.clone(), |_, _| {
            let mut rng = rng.borrow_mut();
            CMat::from_fn(bx.rows.len(), bx.cols.len(), |_, _| C64::new(rng.gen_range(-amp..amp), rng.gen_range(-amp..amp)))
        })
    }

    #[test]
    fn airy_eigenvalues_are_minus_cubes_and_odd() {
        let modes = nbox(1, 1, 10).modes();
        let d = DiagonalPart::unperturbed(modes.clone(), -1.0, 0.0, &KdvFrequencyModel::zero());
        for (j, m) in modes.iter().zip(&d.mu) {
            assert_eq!(*m, -(TWO_PI * *j as f64).powi(3));
        }
        let d = DiagonalPart::unperturbed(modes, -1.1, 0.3, &KdvFrequencyModel::with_c(1.0));
        assert!(d.oddness_defect() == 0.0);
    }

    #[test]
    fn eigenvalue_differences_obey_the_triangle_bound() {
        let modes = nbox(1, 1, 12).modes();
        let (f1, f2) = (KdvFrequencyModel::with_c(1.0), KdvFrequencyModel::with_c(1.2));
        let a = DiagonalPart::unperturbed(modes.clone(), -1.0, 0.1, &f1);
        let b = DiagonalPart::unperturbed(modes.clone(), -1.001, 0.12, &f2);
        for (i, &j) in modes.iter().enumerate() {
            let x = TWO_PI * j as f64;
            let bound = 0.001 * x.abs().powi(3) + 0.02 * x.abs() + (f1.q(j) - f2.q(j)).abs();
            let diff = (a.mu[i] - b.mu[i]).abs();
            assert!(diff <= bound * (1.0 + 1e-12) && diff >= bound * (1.0 - 1e-3), "{j}: {diff} vs {bound}");
        }
    }

    #[test]
    fn second_melnikov_conditions() {
        let modes = nbox(1, 1, 10).modes();
        let d = DiagonalPart::unperturbed(modes, -1.0, 0.0, &KdvFrequencyModel::zero());
        assert!(melnikov2_ok(&OMEGA1, &d, &[3], 4, 4, 0.1, 2.0));
        assert!(melnikov2_ok(&OMEGA1, &d, &[0], 4, 7, 200.0, 2.0));
        // Tune the frequency so that the divisor sits below the threshold.
        let (j, jp, ell, gamma, tau) = (3i64, 2i64, [2i64], 0.5, 2.0);
        let gap = d.get(j).unwrap() - d.get(jp).unwrap();
        let rhs = gamma * (j.pow(3) - jp.pow(3)) as f64 * 2f64.powf(-tau);
        let w = (-gap + rhs / 2.0) / 2.0;
        assert!(!melnikov2_ok(&[w], &d, &ell, j, jp, gamma, tau));
        assert!(melnikov2_ok(&[w + rhs], &d, &ell, j, jp, gamma, tau));
    }

    #[test]
    fn diagonal_constant_perturbation_needs_no_generator() {
        let nb = nbox(1, 2, 8);
        let bx = nb.op_box();
        let d = DiagonalPart::unperturbed(bx.rows.clone(), -1.0, 0.0, &KdvFrequencyModel::zero());
        let r = QPOperator::multiplier(bx.clone(), |j| C64::new(0.0, 0.01 * j as f64));
        let h = solve_homological(&r, &d, &OMEGA1, 10.0, 1e-2, 2.0, true).unwrap();
        assert!(h.psi.max_abs() < 1e-15, "{:e}", h.psi.max_abs());
        for (i, &j) in bx.rows.iter().enumerate() {
            assert!((h.diag[i] - C64::new(0.0, 0.01 * j as f64)).norm() < 1e-15);
        }
    }

    #[test]
    fn single_entry_is_divided_by_its_small_divisor() {
        let nb = nbox(1, 2, 8);
        let bx = nb.op_box();
        let d = DiagonalPart::unperturbed(bx.rows.clone(), -1.0, 0.0, &KdvFrequencyModel::zero());
        let shape = bx.ell_shape();
        let mut blocks = vec![CMat::zeros(bx.rows.len(), bx.cols.len()); shape.n_ell()];
        let (ri, ci) = (bx.row_index(3).unwrap(), bx.col_index(5).unwrap());
        let r = C64::new(0.3, -0.2);
        blocks[shape.ell_index(&[1]).unwrap()][(ri, ci)] = r;
        let op = QPOperator::from_blocks(bx.clone(), &blocks);
        let h = solve_homological(&op, &d, &OMEGA1, 10.0, 1e-2, 2.0, true).unwrap();
        let want = r / C64::new(0.0, OMEGA1[0] + d.get(3).unwrap() - d.get(5).unwrap());
        assert!((h.psi.entry(&[1], 3, 5) - want).norm() < 1e-15);
        assert!(h.psi.entry(&[0], 3, 5).norm() < 1e-15);
    }

    #[test]
    fn homological_residual_vanishes_for_random_data() {
        let nb = nbox(2, 2, 8);
        let bx = nb.op_box();
        let d = DiagonalPart::unperturbed(bx.rows.clone(), -1.0, 0.2, &KdvFrequencyModel::with_c(1.0));
        let r = random_op(&bx, 1.0, 7);
        for n in [1.5, 10.0] {
            let h = solve_homological(&r, &d, &OMEGA2, n, 1e-3, 3.0, true).unwrap();
            let res = homological_residual(&h, &r, &d, &OMEGA2, n).unwrap();
            assert!(kam_norm(&res) < 1e-10, "{:e}", kam_norm(&res));
        }
    }

    #[test]
    fn violations_are_reported_or_rejected() {
        let nb = nbox(1, 2, 8);
        let bx = nb.op_box();
        let d = DiagonalPart::unperturbed(bx.rows.clone(), -1.0, 0.0, &KdvFrequencyModel::zero());
        let r = random_op(&bx, 1.0, 3);
        let e = solve_homological(&r, &d, &[0.0], 10.0, 1e-2, 2.0, true).unwrap_err();
        assert!(matches!(e, Error::MelnikovViolation { .. }));
        let h = solve_homological(&r, &d, &[0.0], 10.0, 1e-2, 2.0, false).unwrap();
        assert!(h.skipped.iter().all(|(e, j, jp)| j == jp && e[0] != 0));
        assert_eq!(h.skipped.len(), 4 * bx.rows.len());
    }

    #[test]
    fn zero_remainder_is_a_fixed_point() {
        let nb = nbox(1, 2, 8);
        let s = airy_state(&nb, &OMEGA1, 0.0);
        let mu = s.d.mu.clone();
        let s = kam_step(s).unwrap();
        assert_eq!(s.d.mu, mu);
        assert_eq!(s.r.max_abs(), 0.0);
        assert!(s.u.sub(&QPOperator::identity(nb.op_box())).unwrap().max_abs() == 0.0);
        let s = kam_iterate(airy_state(&nb, &OMEGA1, 0.0), 3).unwrap();
        assert!(s.history.is_empty());
    }

    #[test]
    fn steps_keep_the_diagonal_real_and_odd_and_conserve_the_operator() {
        let nb = nbox(2, 2, 8);
        let mut s = airy_state(&nb, &OMEGA2, 1e-3);
        // A diagonal correction enters through an angle-independent term.
        let extra = order_zero_perturbation(&nb.op_box(), &{
            let mut f = TruncatedField::zeros(FieldShape::new(2, 0, 2), true);
            f.set(&[0, 0], 0, C64::new(0.02, 0.0));
            f.set(&[0, 0], 2, C64::new(0.01, 0.0));
            f.set(&[0, 0], -2, C64::new(0.01, 0.0));
            f
        }, 1.0)
        .unwrap();
        s.r = s.r.add(&extra).unwrap();
        let s = kam_iterate(s, 3).unwrap();
        for rec in &s.history {
            assert!(rec.max_imag < 1e-12 && rec.oddness < 1e-12, "{rec:?}");
            assert!(rec.conservation < 1e-10, "{rec:?}");
            assert!(rec.mu_shift <= rec.norm_before);
        }
        assert!(s.history[0].mu_shift > 1e-3);
    }

    #[test]
    fn remainders_decay_fast_and_quadratically() {
        let nb = nbox(2, 3, 10);
        let run = |eps| kam_iterate(airy_state(&nb, &OMEGA2, eps), 3).unwrap();
        let (a, b) = (run(1e-4), run(1e-3));
        assert_eq!(a.history.len(), 3);
        for rec in &a.history {
            assert!(rec.norm_after < 0.1 * rec.norm_before, "{rec:?}");
        }
        let ratio = b.history[0].offdiag_after / a.history[0].offdiag_after;
        assert!(ratio > 20.0 && ratio < 500.0, "{ratio}");
        assert!(decay_exponent(&a).unwrap() < 0.0);
    }

    #[test]
    fn conjugated_spectrum_matches() {
        let nb = nbox(2, 2, 8);
        let s0 = airy_state(&nb, &OMEGA2, 1e-4);
        let a0 = s0.operator().unwrap();
        let s = kam_iterate(s0, 3).unwrap();
        let dist = spectrum_check(&a0, &OMEGA2, &s.u).unwrap();
        assert!(dist < 1e-8, "{dist:e}");
        let u_inv = s.u.mul(&s.u_inv).unwrap().sub(&QPOperator::identity(nb.op_box())).unwrap();
        assert!(u_inv.max_abs() < 1e-12);
    }

    #[test]
    fn almost_inverse_solves_the_diagonal_system() {
        let nb = nbox(1, 2, 8);
        let s = kam_iterate(airy_state(&nb, &OMEGA1, 1e-4), 2).unwrap();
        let shape = FieldShape::new(1, 3, 8);
        let mut g = TruncatedField::zeros(shape, false);
        g.set(&[3], 4, C64::new(1.0, 0.0));
        assert_eq!(almost_invert(&s, 2.0, &g, 1e-2, 2.0).unwrap().coeffs, g.coeffs);
        let mut g = TruncatedField::zeros(shape, false);
        g.set(&[1], 5, C64::new(0.5, 0.5));
        let h = almost_invert(&s, 2.0, &g, 1e-2, 2.0).unwrap();
        let want = C64::new(0.5, 0.5) / C64::new(0.0, OMEGA1[0] + s.d.get(5).unwrap());
        assert!((h.get(&[1], 5) - want).norm() < 1e-18);
        let rng = std::cell::RefCell::new(ChaCha8Rng::seed_from_u64(11));
        let g = TruncatedField::from_fn(shape, false, |_, j| {
            if nb.excluded().contains(&j) {
                C64::new(0.0, 0.0)
            } else {
                let mut rng = rng.borrow_mut();
                C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
            }
        });
        let h = almost_invert(&s, 2.0, &g, 1e-2, 2.0).unwrap();
        assert!(apply_lower(&s, 2.0, &h).sub(&g).max_abs() < 1e-12);
        let mut bad = TruncatedField::zeros(shape, false);
        bad.set(&[0], 1, C64::new(1.0, 0.0));
        assert!(almost_invert(&s, 2.0, &bad, 1e-2, 2.0).is_err());
    }

    #[test]
    fn split_reassembles_the_operator() {
        let nb = nbox(1, 2, 6);
        let s = airy_state(&nb, &OMEGA1, 1e-3);
        let sp = inverse_split(&s, 1.0);
        let full = s.operator().unwrap().dense_with_omega(&OMEGA1);
        let sum = &sp.lower + &sp.r_n + &sp.r_perp;
        assert!(linalg::max_abs(&(sum - full)) < 1e-9);
    }

    #[test]
    fn reduced_airy_starts_with_zero_remainder() {
        let nb = nbox(1, 2, 8);
        let red = reduce(&ReductionInput::airy(1, 4), &OMEGA1, &KdvFrequencyModel::with_c(1.0), &nb, &ReductionConfig::default())
            .unwrap();
        let s = init_kam(&red, KamConfig::default()).unwrap();
        assert!(s.r.max_abs() < 1e-9);
        assert_eq!(s.d.mu, DiagonalPart::unperturbed(nb.modes(), -1.0, 0.0, &KdvFrequencyModel::with_c(1.0)).mu);
    }

    #[test]
    fn surviving_set_only_shrinks() {
        let nb = nbox(1, 2, 6);
        let states = [OMEGA1[0], 0.0, 0.7]
            .iter()
            .map(|w| {
                let bx = nb.op_box();
                let d = DiagonalPart::unperturbed(bx.rows.clone(), -1.0, 0.0, &KdvFrequencyModel::zero());
                let r = random_op(&bx, 1e-4, 5);
                KamState::new(&[*w], d, r, KamConfig::default()).unwrap()
            })
            .collect();
        let fam = KamFamily { states };
        let before = fam.surviving();
        let fam = fam.iterate(2).unwrap();
        let after = fam.surviving();
        assert!(before.iter().zip(&after).all(|(b, a)| *b || !*a));
        assert_eq!(after, vec![true, false, true]);
        assert_eq!(fam.extended_mu(1).unwrap(), &fam.states[2].d);
    }

    #[test]
    fn gate_rejects_large_remainders() {
        let nb = nbox(1, 2, 6);
        let bx = nb.op_box();
        let d = DiagonalPart::unperturbed(bx.rows.clone(), -1.0, 0.0, &KdvFrequencyModel::zero());
        let cfg = KamConfig { gate: Some(1.0), ..KamConfig::default() };
        let r = order_zero_perturbation(&bx, &cos_cos(1), 1e-2).unwrap();
        assert!(matches!(KamState::new(&OMEGA1, d, r, cfg), Err(Error::Gate(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn homological_equation_holds(seed in 0u64..1000, w in 0.3f64..3.0, n in 0.5f64..4.0) {
            let nb = nbox(1, 2, 6);
            let bx = nb.op_box();
            let d = DiagonalPart::unperturbed(bx.rows.clone(), -1.0, 0.0, &KdvFrequencyModel::with_c(0.5));
            let r = random_op(&bx, 1.0, seed);
            let h = solve_homological(&r, &d, &[w], n, 1e-6, 2.0, false).unwrap();
            prop_assume!(h.skipped.is_empty());
            let res = homological_residual(&h, &r, &d, &[w], n).unwrap();
            prop_assert!(kam_norm(&res) < 1e-10);
        }
    }
}
