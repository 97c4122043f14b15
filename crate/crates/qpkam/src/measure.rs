//! Monte-Carlo estimates of the measure of the frequencies removed by the
//! Diophantine and Melnikov conditions.
//!
//! A frequency `omega` is excluded at level `gamma` if it fails
//! `|omega.l| >= 4 gamma <l>^{-tau}` for some `l != 0`, or lies in one of the
//! resonant sets
//! `R_{l,j,j'} = {|omega.l + mu_j - mu_j'| < 4 gamma |j^3 - j'^3| <l>^{-tau}}`,
//! `Q_{l,j} = {|omega.l + mu_j| < 4 gamma |j|^3 <l>^{-tau}}`.
//! Every condition has the form `gamma > threshold(omega)`, so one scan per
//! sample serves the whole list of `gamma` values and the excluded sets are
//! nested by construction.

use crate::error::{Error, Result};
use crate::kam::{DiagonalPart, KamState};
use crate::nash_moser::ToyFrequencies;
use crate::reduction::KdvFrequencyModel;
use crate::spaces::{dot, ell_len, is_diophantine, DiophantineClass, FieldShape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::PI;

const TWO_PI: f64 = 2.0 * PI;

/// Final eigenvalues `mu_j` of the diagonalised normal operator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalEigenvalues {
    pub mu_inf: BTreeMap<i64, f64>,
    /// Whether `mu_{-j} = -mu_j` holds for every stored pair.
    pub odd: bool,
}

impl FinalEigenvalues {
    pub fn new(mu_inf: BTreeMap<i64, f64>) -> Self {
        let odd = mu_inf.iter().all(|(j, m)| mu_inf.get(&-j).is_none_or(|n| (m + n).abs() <= 1e-12 * (1.0 + m.abs())));
        FinalEigenvalues { mu_inf, odd }
    }

    pub fn from_diagonal(d: &DiagonalPart) -> Self {
        Self::new(d.modes.iter().copied().zip(d.mu.iter().copied()).collect())
    }

    pub fn from_kam(s: &KamState) -> Self {
        Self::from_diagonal(&s.d)
    }

    pub fn get(&self, j: i64) -> Option<f64> {
        self.mu_inf.get(&j).copied()
    }

    pub fn oddness_defect(&self) -> f64 {
        self.mu_inf.iter().filter_map(|(j, m)| self.mu_inf.get(&-j).map(|n| (m + n).abs())).fold(0.0, f64::max)
    }
}

/// Closed-form eigenvalues `mu_j(omega) = m3 (2 pi j)^3 - m1 2 pi j - q_j(omega)`
/// with `q_j = c(omega) / (2 pi j)` and `c` affine in `omega`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenModel {
    pub sites: Vec<i64>,
    pub jmax: i64,
    pub m3: f64,
    pub m1: f64,
    pub c: f64,
    pub c_grad: Vec<f64>,
    pub omega_ref: Vec<f64>,
    /// Bound on the neglected corrections `|mu_j - model_j|`.
    #[serde(default)]
    pub r_bound: f64,
}

impl EigenModel {
    /// Airy eigenvalues `(2 pi j)^3`, independent of `omega`.
    pub fn airy(sites: Vec<i64>, jmax: i64) -> Self {
        let d = sites.len();
        EigenModel { sites, jmax, m3: 1.0, m1: 0.0, c: 0.0, c_grad: vec![0.0; d], omega_ref: vec![0.0; d], r_bound: 0.0 }
    }

    /// Unperturbed normal frequencies of the toy model, with the actions
    /// eliminated through the frequency map.
    pub fn toy(freq: &ToyFrequencies, jmax: i64) -> Result<Self> {
        let d = freq.d();
        if freq.kappa == 0.0 {
            return Err(Error::TwistDegenerate("twist matrix is singular".into()));
        }
        Ok(EigenModel {
            sites: freq.sites.clone(),
            jmax,
            m3: 1.0,
            m1: 0.0,
            c: freq.c,
            c_grad: vec![-1.0 / (1.0 + d as f64); d],
            omega_ref: freq.omega_of_nu(&vec![0.0; d]),
            r_bound: 0.0,
        })
    }

    pub fn d(&self) -> usize {
        self.sites.len()
    }

    /// Normal modes `0 < |j| <= jmax` off the tangential sites.
    pub fn normal_modes(&self) -> Vec<i64> {
        (-self.jmax..=self.jmax).filter(|&j| j != 0 && !self.sites.contains(&j.abs())).collect()
    }

    pub fn c_at(&self, omega: &[f64]) -> f64 {
        self.c + self.c_grad.iter().zip(omega.iter().zip(&self.omega_ref)).map(|(g, (w, r))| g * (w - r)).sum::<f64>()
    }

    pub fn eigenvalues(&self, omega: &[f64]) -> FinalEigenvalues {
        let q = KdvFrequencyModel::with_c(self.c_at(omega));
        let d = DiagonalPart::unperturbed(self.normal_modes(), self.m3, self.m1, &q);
        FinalEigenvalues::from_diagonal(&d)
    }

    fn c_max(&self, bx: &FreqBox) -> f64 {
        bx.corners().iter().map(|w| self.c_at(w).abs()).fold(0.0, f64::max)
    }
}

/// Source of the eigenvalues as a function of `omega`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum MuSource {
    Model(EigenModel),
    Fixed(FinalEigenvalues),
}

impl MuSource {
    pub fn at(&self, omega: &[f64]) -> FinalEigenvalues {
        match self {
            MuSource::Model(m) => m.eigenvalues(omega),
            MuSource::Fixed(f) => f.clone(),
        }
    }

    /// Lower slopes `k2, k1` with `|mu_j - mu_j'| >= k2 |j^3 - j'^3|` and
    /// `|mu_j| >= k1 |j|^3` for all stored modes and all `omega` in the box.
    pub fn lower_slopes(&self, bx: &FreqBox) -> (f64, f64) {
        match self {
            MuSource::Model(m) => {
                let base = m.m3 * TWO_PI.powi(3) - TWO_PI * m.m1.abs();
                let cq = m.c_max(bx) / TWO_PI;
                (base - 2.0 * cq - 2.0 * m.r_bound, base - cq - m.r_bound)
            }
            MuSource::Fixed(f) => {
                let mut k2 = f64::INFINITY;
                let mut k1 = f64::INFINITY;
                for (&j, &a) in &f.mu_inf {
                    k1 = k1.min(a.abs() / (j.pow(3).abs() as f64));
                    for (&jp, &b) in &f.mu_inf {
                        if jp != j {
                            k2 = k2.min((a - b).abs() / ((j.pow(3) - jp.pow(3)).abs() as f64));
                        }
                    }
                }
                (k2, k1)
            }
        }
    }

    /// Pruning constants `(C2, C1)`: the sets `R_{l,j,j'}` and `Q_{l,j}` are
    /// empty unless `|j^3 - j'^3| <= C2 <l>` and `|j|^3 <= C1 <l>`.
    pub fn pruning_constants(&self, bx: &FreqBox, gamma: f64) -> (f64, f64) {
        let (k2, k1) = self.lower_slopes(bx);
        let w = bx.sup_norm();
        let c = |k: f64| if k > 4.0 * gamma { w / (k - 4.0 * gamma) } else { f64::INFINITY };
        (c(k2), c(k1))
    }
}

/// Axis-aligned box of frequencies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FreqBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl FreqBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::DimensionMismatch("box corners".into()));
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a.is_finite() && b.is_finite() && a < b)) {
            return Err(Error::Config("box needs finite lo < hi".into()));
        }
        Ok(FreqBox { lo, hi })
    }

    /// Box `center +- half_width` in every direction.
    pub fn around(center: &[f64], half_width: f64) -> Result<Self> {
        Self::new(center.iter().map(|c| c - half_width).collect(), center.iter().map(|c| c + half_width).collect())
    }

    pub fn d(&self) -> usize {
        self.lo.len()
    }

    pub fn map_unit(&self, u: &[f64]) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).zip(u).map(|((a, b), t)| a + (b - a) * t).collect()
    }

    pub fn corners(&self) -> Vec<Vec<f64>> {
        (0..1usize << self.d())
            .map(|m| (0..self.d()).map(|i| if m >> i & 1 == 1 { self.hi[i] } else { self.lo[i] }).collect())
            .collect()
    }

    /// Largest Euclidean norm over the box.
    pub fn sup_norm(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| a.abs().max(b.abs()).powi(2)).sum::<f64>().sqrt()
    }
}

fn weight(ell: &[i64], tau: f64) -> f64 {
    ell_len(ell).max(1.0).powf(-tau)
}

/// `omega` in `DC(gamma, tau)` over `0 < |l|_inf <= l_scan`.
pub fn in_dc(omega: &[f64], gamma: f64, tau: f64, l_scan: usize) -> bool {
    is_diophantine(omega, DiophantineClass { gamma, tau }, l_scan).is_ok_and(|r| r.ok)
}

/// Membership of `omega` in `R_{l,j,j'}`; the Diophantine condition is
/// checked over `|l|_inf <= l_scan`.
#[allow(clippy::too_many_arguments)]
pub fn resonant2_indicator(omega: &[f64], mu: &FinalEigenvalues, ell: &[i64], j: i64, jp: i64, gamma: f64, tau: f64, l_scan: usize) -> bool {
    if j == jp {
        return false;
    }
    let (Some(a), Some(b)) = (mu.get(j), mu.get(jp)) else { return false };
    let rhs = 4.0 * gamma * ((j.pow(3) - jp.pow(3)).abs() as f64) * weight(ell, tau);
    (dot(omega, ell) + a - b).abs() < rhs && in_dc(omega, 4.0 * gamma, tau, l_scan)
}

/// Membership of `omega` in `Q_{l,j}`.
#[allow(clippy::too_many_arguments)]
pub fn resonant1_indicator(omega: &[f64], mu: &FinalEigenvalues, ell: &[i64], j: i64, gamma: f64, tau: f64, l_scan: usize) -> bool {
    let Some(a) = mu.get(j) else { return false };
    let rhs = 4.0 * gamma * (j.pow(3).abs() as f64) * weight(ell, tau);
    (dot(omega, ell) + a).abs() < rhs && in_dc(omega, 4.0 * gamma, tau, l_scan)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum HitKind {
    Diophantine,
    First,
    Second,
}

/// Condition `(kind, l, j, j')`; unused indices are zero.
pub type HitKey = (HitKind, Vec<i64>, i64, i64);

/// Scan box and pruning switch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanConfig {
    pub l_scan: usize,
    pub j_scan: i64,
    pub prune: bool,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig { l_scan: 8, j_scan: 12, prune: true }
    }
}

/// Precomputed index sets of a scan.
struct Scan {
    ells: Vec<(Vec<i64>, f64)>,
    /// `(j, j', |j^3 - j'^3|)` sorted by the last entry.
    pairs: Vec<(i64, i64, f64)>,
    singles: Vec<(i64, f64)>,
    prune: Option<(f64, f64)>,
    tau: f64,
}

impl Scan {
    fn new(modes: &[i64], d: usize, scan: &ScanConfig, tau: f64, prune: Option<(f64, f64)>) -> Self {
        let shape = FieldShape::new(d, scan.l_scan, 0);
        let ells = (0..shape.n_ell()).map(|i| shape.ell_of(i)).map(|l| (l.clone(), ell_len(&l).max(1.0))).collect();
        let modes: Vec<i64> = modes.iter().copied().filter(|j| j.abs() <= scan.j_scan).collect();
        let mut pairs: Vec<(i64, i64, f64)> = modes
            .iter()
            .flat_map(|&j| modes.iter().filter(move |&&jp| jp != j).map(move |&jp| (j, jp, (j.pow(3) - jp.pow(3)).abs() as f64)))
            .collect();
        pairs.sort_by(|a, b| a.2.total_cmp(&b.2).then((a.0, a.1).cmp(&(b.0, b.1))));
        let mut singles: Vec<(i64, f64)> = modes.iter().map(|&j| (j, j.pow(3).abs() as f64)).collect();
        singles.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        Scan { ells, pairs, singles, prune: if scan.prune { prune } else { None }, tau }
    }

    /// Conditions violated below `gamma_max`, with their thresholds.
    fn conditions(&self, omega: &[f64], mu: &FinalEigenvalues, gamma_max: f64) -> Vec<(HitKey, f64)> {
        let mut out = Vec::new();
        for (ell, br) in &self.ells {
            let wl = dot(omega, ell);
            let bt = br.powf(self.tau);
            let zero = ell.iter().all(|&e| e == 0);
            if !zero {
                let t = wl.abs() * bt / 4.0;
                if t < gamma_max {
                    out.push(((HitKind::Diophantine, ell.clone(), 0, 0), t));
                }
            }
            let (c2, c1) = self.prune.unwrap_or((f64::INFINITY, f64::INFINITY));
            for &(j, a) in self.singles.iter().take_while(|s| s.1 <= c1 * br) {
                if let Some(m) = mu.get(j) {
                    let t = (wl + m).abs() * bt / (4.0 * a);
                    if t < gamma_max {
                        out.push(((HitKind::First, ell.clone(), j, 0), t));
                    }
                }
            }
            for &(j, jp, a) in self.pairs.iter().take_while(|p| p.2 <= c2 * br) {
                if let (Some(m), Some(n)) = (mu.get(j), mu.get(jp)) {
                    let t = (wl + m - n).abs() * bt / (4.0 * a);
                    if t < gamma_max {
                        out.push(((HitKind::Second, ell.clone(), j, jp), t));
                    }
                }
            }
        }
        out
    }
}

/// Conditions violated at level `gamma` by `omega`, scanned with or without pruning.
pub fn violated_conditions(omega: &[f64], src: &MuSource, bx: &FreqBox, gamma: f64, tau: f64, scan: &ScanConfig) -> Vec<HitKey> {
    let mu = src.at(omega);
    let modes: Vec<i64> = mu.mu_inf.keys().copied().collect();
    let s = Scan::new(&modes, omega.len(), scan, tau, Some(src.pruning_constants(bx, gamma)));
    s.conditions(omega, &mu, gamma).into_iter().map(|(k, _)| k).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SamplerKind {
    /// Halton sequence with a seeded random shift.
    Halton,
    /// Independent uniform samples, one ChaCha stream per sample.
    Uniform,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    pub n: usize,
    pub seed: u64,
    pub threads: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig { kind: SamplerKind::Halton, n: 10_000, seed: 0, threads: 1 }
    }
}

const PRIMES: [u32; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

fn radical_inverse(mut i: u64, base: u32) -> f64 {
    let b = base as u64;
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % b) as f64;
        i /= b;
    }
    r
}

/// Point `i` of the sampler in the unit cube.
pub fn unit_sample(cfg: &SamplerConfig, d: usize, i: usize) -> Result<Vec<f64>> {
    match cfg.kind {
        SamplerKind::Halton => {
            if d > PRIMES.len() {
                return Err(Error::Config(format!("Halton sampler supports up to {} dimensions", PRIMES.len())));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let shift: Vec<f64> = (0..d).map(|_| rng.gen()).collect();
            Ok((0..d).map(|k| (radical_inverse(i as u64 + 1, PRIMES[k]) + shift[k]).fract()).collect())
        }
        SamplerKind::Uniform => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i as u64);
            Ok((0..d).map(|_| rng.gen()).collect())
        }
    }
}

/// Wilson score interval for `k` successes out of `n` at `z` standard deviations.
pub fn wilson_interval(k: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let p = k as f64 / nf;
    let z2 = z * z;
    let den = 1.0 + z2 / nf;
    let mid = (p + z2 / (2.0 * nf)) / den;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / den;
    ((mid - half).max(0.0), (mid + half).min(1.0))
}

/// Least-squares slope of `log y` against `log x` over the positive pairs.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = x.iter().zip(y).filter(|(a, b)| **a > 0.0 && **b > 0.0).map(|(a, b)| (a.ln(), b.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureEstimate {
    pub gamma: f64,
    pub excluded: usize,
    pub n: usize,
    pub fraction: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HitStat {
    pub kind: HitKind,
    pub ell: Vec<i64>,
    pub j: i64,
    pub jp: i64,
    /// Number of samples in the set, per `gamma`.
    pub counts: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureReport {
    pub estimates: Vec<MeasureEstimate>,
    /// Fitted exponent of the excluded fraction against `gamma`.
    pub slope: Option<f64>,
    pub pruning: (f64, f64),
    pub hits: Vec<HitStat>,
}

impl MeasureReport {
    /// Fractions do not increase as `gamma` decreases.
    pub fn monotone(&self) -> bool {
        let mut e = self.estimates.clone();
        e.sort_by(|a, b| a.gamma.total_cmp(&b.gamma));
        e.windows(2).all(|w| w[0].excluded <= w[1].excluded)
    }
}

pub const MIN_SAMPLES: usize = 10_000;

/// Monte-Carlo fraction of the box excluded at each `gamma`.
pub fn estimate_excluded_measure(
    src: &MuSource,
    bx: &FreqBox,
    gammas: &[f64],
    tau: f64,
    scan: &ScanConfig,
    sampler: &SamplerConfig,
) -> Result<MeasureReport> {
    if sampler.n < MIN_SAMPLES {
        return Err(Error::Config(format!("at least {MIN_SAMPLES} samples required, got {}", sampler.n)));
    }
    if gammas.is_empty() || gammas.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
        return Err(Error::Config("gamma values must be finite and nonnegative".into()));
    }
    if let MuSource::Model(m) = src {
        if m.d() != bx.d() {
            return Err(Error::DimensionMismatch("eigenvalue model and box".into()));
        }
    }
    let gmax = gammas.iter().copied().fold(0.0, f64::max);
    let pruning = src.pruning_constants(bx, gmax);
    let modes: Vec<i64> = src.at(&bx.lo).mu_inf.keys().copied().collect();
    let s = Scan::new(&modes, bx.d(), scan, tau, Some(pruning));
    let per_sample = |i: usize| -> Result<Vec<(HitKey, f64)>> {
        let w = bx.map_unit(&unit_sample(sampler, bx.d(), i)?);
        Ok(s.conditions(&w, &src.at(&w), gmax))
    };
    let threads = sampler.threads.max(1).min(sampler.n);
    let chunk = sampler.n.div_ceil(threads);
    let parts: Vec<Result<Vec<Vec<(HitKey, f64)>>>> = std::thread::scope(|sc| {
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                let f = &per_sample;
                sc.spawn(move || (t * chunk..((t + 1) * chunk).min(sampler.n)).map(f).collect::<Result<Vec<_>>>())
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap_or_else(|_| Err(Error::Abort("measure worker panicked".into())))).collect()
    });
    let mut excluded = vec![0usize; gammas.len()];
    let mut hits: BTreeMap<HitKey, Vec<usize>> = BTreeMap::new();
    for part in parts {
        for conds in part? {
            let tmin = conds.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
            for (e, g) in excluded.iter_mut().zip(gammas) {
                if tmin < *g {
                    *e += 1;
                }
            }
            for (k, t) in conds {
                let c = hits.entry(k).or_insert_with(|| vec![0; gammas.len()]);
                for (ci, g) in c.iter_mut().zip(gammas) {
                    if t < *g {
                        *ci += 1;
                    }
                }
            }
        }
    }
    let estimates: Vec<MeasureEstimate> = gammas
        .iter()
        .zip(&excluded)
        .map(|(&gamma, &k)| {
            let (lo, hi) = wilson_interval(k, sampler.n, 1.959963984540054);
            MeasureEstimate { gamma, excluded: k, n: sampler.n, fraction: k as f64 / sampler.n as f64, ci_low: lo, ci_high: hi }
        })
        .collect();
    let slope = loglog_slope(gammas, &estimates.iter().map(|e| e.fraction).collect::<Vec<_>>());
    let hits = hits
        .into_iter()
        .filter(|(_, c)| c.iter().any(|&v| v > 0))
        .map(|((kind, ell, j, jp), counts)| HitStat { kind, ell, j, jp, counts })
        .collect();
    Ok(MeasureReport { estimates, slope, pruning, hits })
}

/// Length of `R_{l,j,j'}` on the line `base + t dir`, measured on a grid of
/// `n` points around the crossing of the resonance.
#[allow(clippy::too_many_arguments)]
pub fn section_length(
    src: &MuSource,
    base: &[f64],
    dir: &[f64],
    ell: &[i64],
    j: i64,
    jp: i64,
    gamma: f64,
    tau: f64,
    n: usize,
) -> Result<f64> {
    let at = |t: f64| base.iter().zip(dir).map(|(b, d)| b + t * d).collect::<Vec<f64>>();
    let g = |t: f64| -> Result<f64> {
        let w = at(t);
        let mu = src.at(&w);
        match (mu.get(j), mu.get(jp)) {
            (Some(a), Some(b)) => Ok(dot(&w, ell) + a - b),
            _ => Err(Error::Config(format!("mode {j} or {jp} not in the eigenvalue table"))),
        }
    };
    let (g0, g1) = (g(0.0)?, g(1.0)?);
    let slope = g1 - g0;
    if slope == 0.0 {
        return Err(Error::Singular("resonance function constant along the section".into()));
    }
    let tc = -g0 / slope;
    let w = 4.0 * gamma * ((j.pow(3) - jp.pow(3)).abs() as f64) * weight(ell, tau);
    let h = 2.0 * w / slope.abs();
    let dt = 2.0 * h / n as f64;
    let mut count = 0usize;
    for k in 0..n {
        let t = tc - h + (k as f64 + 0.5) * dt;
        if g(t)?.abs() < w {
            count += 1;
        }
    }
    Ok(count as f64 * dt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy2() -> (MuSource, FreqBox) {
        let freq = ToyFrequencies::new(vec![1, 2], 1.0, 1.0);
        let m = EigenModel::toy(&freq, 12).unwrap();
        let c = freq.omega_of_nu(&[0.2, 0.2]);
        (MuSource::Model(m), FreqBox::around(&c, 3.0).unwrap())
    }

    #[test]
    fn toy_model_matches_the_frequency_map() {
        let freq = ToyFrequencies::new(vec![1, 3], 0.7, 0.4);
        let m = EigenModel::toy(&freq, 6).unwrap();
        let nu = [0.3, 0.45];
        let w = freq.omega_of_nu(&nu);
        let back = freq.nu_of_omega(&w).unwrap();
        assert!((m.c_at(&w) - (freq.c + freq.kappa * back.iter().sum::<f64>())).abs() < 1e-10);
        let mu = m.eigenvalues(&w);
        assert!(mu.odd && mu.oddness_defect() < 1e-9);
        assert!(mu.get(3).is_none() && mu.get(-1).is_none() && mu.get(2).is_some());
    }

    #[test]
    fn equal_modes_are_never_resonant() {
        let (src, bx) = toy2();
        let w = bx.map_unit(&[0.5, 0.5]);
        let mu = src.at(&w);
        for l in [[0, 0], [1, -3], [5, 2]] {
            assert!(!resonant2_indicator(&w, &mu, &l, 4, 4, 1e6, 2.0, 4));
        }
    }

    #[test]
    fn constructed_frequency_inside_the_band_is_resonant() {
        let mu = EigenModel::airy(vec![1, 2], 8).eigenvalues(&[0.0, 0.0]);
        let (ell, j, jp) = ([3i64, 1], 4, 3);
        let (gamma, tau) = (0.05, 2.0);
        let target = mu.get(jp).unwrap() - mu.get(j).unwrap();
        let band = 4.0 * gamma * 37.0 * ell_len(&ell).powf(-tau);
        // omega.l = target - 0.9 band with omega_2 fixed.
        let w2 = 1000.0 * 2f64.sqrt();
        let w1 = (target - 0.9 * band - w2) / 3.0;
        let inside = [w1, w2];
        assert!(in_dc(&inside, 4.0 * gamma, tau, 6));
        assert!(resonant2_indicator(&inside, &mu, &ell, j, jp, gamma, tau, 6));
        let outside = [(target - 1.1 * band - w2) / 3.0, w2];
        assert!(!resonant2_indicator(&outside, &mu, &ell, j, jp, gamma, tau, 6));
        let t1 = -mu.get(j).unwrap();
        let b1 = 4.0 * gamma * 64.0 * ell_len(&ell).powf(-tau);
        let q = [(t1 + 0.5 * b1 - w2) / 3.0, w2];
        assert!(resonant1_indicator(&q, &mu, &ell, j, gamma, tau, 6));
        assert!(!resonant1_indicator(&q, &mu, &ell, j, 0.0, tau, 6));
    }

    #[test]
    fn pruning_is_sound_on_an_exhaustive_box() {
        let (src, bx) = toy2();
        let gamma = 0.5;
        let full = ScanConfig { l_scan: 4, j_scan: 7, prune: false };
        let pruned = ScanConfig { prune: true, ..full };
        let (c2, c1) = src.pruning_constants(&bx, gamma);
        assert!(c2.is_finite() && c1.is_finite());
        let cfg = SamplerConfig { kind: SamplerKind::Uniform, n: 0, seed: 5, threads: 1 };
        let mut seen = 0;
        for i in 0..300 {
            let w = bx.map_unit(&unit_sample(&cfg, 2, i).unwrap());
            let a = violated_conditions(&w, &src, &bx, gamma, 2.0, &full);
            let b = violated_conditions(&w, &src, &bx, gamma, 2.0, &pruned);
            assert_eq!(a, b);
            for (k, l, j, jp) in &a {
                let br = ell_len(l).max(1.0);
                match k {
                    HitKind::Second => assert!(((j.pow(3) - jp.pow(3)).abs() as f64) <= c2 * br),
                    HitKind::First => assert!((j.pow(3).abs() as f64) <= c1 * br),
                    HitKind::Diophantine => {}
                }
                seen += 1;
            }
        }
        assert!(seen > 0);
    }

    #[test]
    fn wilson_interval_contains_the_estimate() {
        let (lo, hi) = wilson_interval(30, 1000, 1.96);
        assert!(lo < 0.03 && 0.03 < hi && lo > 0.019 && hi < 0.043);
        assert_eq!(wilson_interval(0, 100, 1.96).0, 0.0);
    }

    #[test]
    fn zero_gamma_excludes_nothing() {
        let (src, bx) = toy2();
        let r = estimate_excluded_measure(&src, &bx, &[0.0], 2.0, &ScanConfig::default(), &SamplerConfig::default()).unwrap();
        assert_eq!(r.estimates[0].excluded, 0);
    }

    #[test]
    fn estimates_are_independent_of_the_thread_count() {
        let (src, bx) = toy2();
        let scan = ScanConfig { l_scan: 4, j_scan: 8, prune: true };
        let one = SamplerConfig { kind: SamplerKind::Uniform, n: 10_000, seed: 3, threads: 1 };
        let a = estimate_excluded_measure(&src, &bx, &[0.1, 0.05], 2.0, &scan, &one).unwrap();
        let b = estimate_excluded_measure(&src, &bx, &[0.1, 0.05], 2.0, &scan, &SamplerConfig { threads: 3, ..one }).unwrap();
        assert_eq!(a, b);
        assert!(estimate_excluded_measure(&src, &bx, &[0.1], 2.0, &scan, &SamplerConfig { n: 10, ..one }).is_err());
    }

    #[test]
    fn section_length_scales_like_the_band_width() {
        let freq = ToyFrequencies::new(vec![1], 1.0, 1.0);
        let src = MuSource::Model(EigenModel::toy(&freq, 8).unwrap());
        let base = freq.omega_of_nu(&[0.1]);
        let (gamma, tau) = (0.05, 3.0);
        let ls = [4i64, 8, 16, 32, 64];
        let lens: Vec<f64> = ls.iter().map(|&l| section_length(&src, &base, &[1.0], &[l], 3, -3, gamma, tau, 4000).unwrap()).collect();
        let br: Vec<f64> = ls.iter().map(|&l| l as f64).collect();
        let slope = loglog_slope(&br, &lens).unwrap();
        assert!((slope + tau + 1.0).abs() < 0.05, "{slope}");
    }

    proptest! {
        #[test]
        fn excluded_sets_are_nested_in_gamma(seed in 0u64..1000, g in 0.01f64..0.5) {
            let (src, bx) = toy2();
            let scan = ScanConfig { l_scan: 3, j_scan: 6, prune: true };
            let cfg = SamplerConfig { kind: SamplerKind::Uniform, n: 0, seed, threads: 1 };
            let w = bx.map_unit(&unit_sample(&cfg, 2, 0).unwrap());
            let small = violated_conditions(&w, &src, &bx, g / 2.0, 2.0, &scan);
            let large = violated_conditions(&w, &src, &bx, g, 2.0, &scan);
            prop_assert!(small.iter().all(|k| large.contains(k)));
        }

        #[test]
        fn halton_points_lie_in_the_unit_cube(seed in 0u64..100, i in 0usize..100_000) {
            let p = unit_sample(&SamplerConfig { seed, ..SamplerConfig::default() }, 3, i).unwrap();
            prop_assert!(p.iter().all(|v| (0.0..1.0).contains(v)));
        }
    }
}
