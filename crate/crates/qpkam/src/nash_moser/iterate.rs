//! Nash-Moser scales and the Newton loop `U_{n+1} = U_n - Pi_n T_n Pi_n F(U_n)`.

use super::embedding::{evaluate_f, TorusEmbedding};
use super::inverse::{ApproxInverse, NormalSolverMode};
use super::model::{ToyFrequencies, ToyHamiltonian};
use crate::error::{Error, Result};
use crate::expr::Density;
use crate::reduction::scheme_constants;
use serde::{Deserialize, Serialize};

/// Loss-of-regularity constants that enter the schedule only through
/// their size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConstants {
    pub sigma_m: f64,
    pub sigma_m_b: f64,
    /// Tame loss of the Hamiltonian vector field.
    pub sigma1: f64,
    /// Loss of the approximate inverse.
    pub sigma2: f64,
    /// Exponent of the reducibility smallness condition.
    pub tau_bar: f64,
}

impl Default for LossConstants {
    fn default() -> Self {
        LossConstants { sigma_m: 2.0, sigma_m_b: 2.0, sigma1: 3.0, sigma2: 4.0, tau_bar: 8.0 }
    }
}

/// Scales `K_n = K0^{chi^n}` and the derived exponents of the scheme.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NMSchedule {
    pub eps: f64,
    pub tau: f64,
    pub chi: f64,
    pub loss: LossConstants,
    pub s0: usize,
    pub m: usize,
    pub s_m: usize,
    pub tau1: f64,
    pub a: f64,
    pub b: usize,
    pub mu_b: f64,
    pub sigma_bar: f64,
    pub p: f64,
    pub a1: f64,
    pub a2: f64,
    pub mu1: f64,
    pub b1: f64,
    pub tau2: f64,
    /// `gamma = eps^frak_a`, `0 < frak_a < 1/tau2`.
    pub frak_a: f64,
    pub gamma: f64,
    /// `gamma^{-1}`.
    pub k0_theory: f64,
    /// Scale used by the loop.
    pub k0: f64,
    pub delta0: f64,
}

impl NMSchedule {
    /// `frak_fraction` in `(0, 1)` places `frak_a` at that fraction of `1/tau2`.
    pub fn new(eps: f64, n_sites: usize, tau: f64, loss: LossConstants, frak_fraction: f64, delta0: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&frak_fraction) || frak_fraction == 0.0 {
            return Err(Error::Config(format!("frak_a fraction {frak_fraction} must lie in (0, 1)")));
        }
        let sc = scheme_constants(n_sites, tau);
        let chi = 1.5;
        let s_m = sc.s0.max(sc.m + 1);
        let mu_b = (sc.s0 + sc.b) as f64 + loss.sigma_m + loss.sigma_m_b + 1.0;
        let sigma_bar = loss.sigma1.max(loss.sigma2);
        let p = (12.0 * sigma_bar + 17.0 + chi * (mu_b + 2.0 * sigma_bar)) / sc.a;
        let a1 = (12.0 * sigma_bar + 13.0).max(p * tau + 3.0 + chi * (mu_b + 2.0 * sigma_bar));
        let a2 = a1 / chi - mu_b - 2.0 * sigma_bar;
        let mu1 = 3.0 * (mu_b + 2.0 * sigma_bar + 2.0) + 1.0;
        let b1 = a1 + mu_b + 3.0 * sigma_bar + 4.0 + 2.0 / 3.0 * mu1;
        let tau2 = (p * loss.tau_bar + 3.0).max(4.0 * sigma_bar + 4.0 + a1);
        let frak_a = frak_fraction / tau2;
        let gamma = if eps > 0.0 { eps.powf(frak_a) } else { 1.0 };
        Ok(NMSchedule {
            eps,
            tau,
            chi,
            loss,
            s0: sc.s0,
            m: sc.m,
            s_m,
            tau1: sc.tau1,
            a: sc.a,
            b: sc.b,
            mu_b,
            sigma_bar,
            p,
            a1,
            a2,
            mu1,
            b1,
            tau2,
            frak_a,
            gamma,
            k0_theory: 1.0 / gamma,
            k0: 1.0 / gamma,
            delta0,
        })
    }

    /// Replaces the initial scale used by the loop.
    pub fn with_k0(mut self, k0: f64) -> Self {
        self.k0 = k0;
        self
    }

    pub fn k(&self, n: usize) -> f64 {
        self.k0.powf(self.chi.powi(n as i32))
    }

    /// `N_n = K_n^p`.
    pub fn n_scale(&self, n: usize) -> f64 {
        self.k(n).powf(self.p)
    }

    /// `eps K0^{tau2}` at the theoretical `K0`.
    pub fn gate_value(&self) -> f64 {
        self.eps * self.k0_theory.powf(self.tau2)
    }

    pub fn gate_ok(&self) -> bool {
        self.gate_value() < self.delta0
    }

    /// `p a > a1/2 + 3/2 (sigma_bar + 4)`.
    pub fn p_condition(&self) -> bool {
        self.p * self.a > 0.5 * self.a1 + 1.5 * (self.sigma_bar + 4.0)
    }

    /// Largest defect of the defining identities of the derived constants.
    pub fn identity_defect(&self) -> f64 {
        let chi = self.chi;
        let checks = [
            self.tau1 - (2.0 * self.tau + 1.0),
            self.a - (3.0 * self.tau1 + 1.0),
            self.b as f64 - (self.a.floor() + 2.0),
            self.a2 - (self.a1 / chi - self.mu_b - 2.0 * self.sigma_bar),
            self.mu1 - (3.0 * (self.mu_b + 2.0 * self.sigma_bar + 2.0) + 1.0),
            self.b1 - (self.a1 + self.mu_b + 3.0 * self.sigma_bar + 4.0 + 2.0 / 3.0 * self.mu1),
            self.p * self.a - (12.0 * self.sigma_bar + 17.0 + chi * (self.mu_b + 2.0 * self.sigma_bar)),
            self.a1 - (12.0 * self.sigma_bar + 13.0).max(self.p * self.tau + 3.0 + chi * (self.mu_b + 2.0 * self.sigma_bar)),
            self.tau2 - (self.p * self.loss.tau_bar + 3.0).max(4.0 * self.sigma_bar + 4.0 + self.a1),
        ];
        checks.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }
}

/// Loop controls.
#[derive(Clone, Debug)]
pub struct NMConfig {
    /// Angle truncation of the embeddings.
    pub l: usize,
    pub n_max: usize,
    /// Stop once `|F|` falls below this.
    pub tol: f64,
    /// Sobolev index of the residual norm.
    pub s_norm: f64,
    pub solver: NormalSolverMode,
    /// Refuse to run when the smallness gate fails.
    pub enforce_gate: bool,
    /// Roundoff level: an increase from below it ends the run instead of
    /// counting towards divergence.
    pub floor: f64,
}

impl Default for NMConfig {
    fn default() -> Self {
        NMConfig { l: 8, n_max: 6, tol: 1e-10, s_norm: 2.0, solver: NormalSolverMode::Direct, enforce_gate: false, floor: 1e-10 }
    }
}

/// One iterate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NMRecord {
    pub n: usize,
    /// Scale `K_{n-1}` used to produce this iterate (`0` for the start).
    pub k: f64,
    pub residual: f64,
    /// `H^s` norms of the three residual components.
    pub residual_parts: [f64; 3],
    pub zeta: f64,
    pub correction: f64,
    pub torus: f64,
    pub isotropy_defect: f64,
}

#[derive(Clone, Debug)]
pub struct NMRun {
    pub omega: Vec<f64>,
    pub nu: Vec<f64>,
    pub embedding: TorusEmbedding,
    pub records: Vec<NMRecord>,
    pub converged: bool,
}

impl NMRun {
    pub fn residuals(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.residual).collect()
    }

    pub fn final_residual(&self) -> f64 {
        self.records.last().map(|r| r.residual).unwrap_or(f64::NAN)
    }

    /// Number of leading steps over which the residual strictly decreases.
    pub fn decreasing_steps(&self) -> usize {
        let r = self.residuals();
        r.windows(2).take_while(|w| w[1] < w[0]).count()
    }

    /// Largest `|zeta_n| / |F(U_n)|_{s}` over the run, ignoring iterates
    /// whose residual lies below `floor`.
    pub fn zeta_ratio(&self, floor: f64) -> f64 {
        self.records.iter().filter(|r| r.residual > floor).map(|r| r.zeta / r.residual).fold(0.0, f64::max)
    }
}

fn record(n: usize, k: f64, f: &TorusEmbedding, u: &TorusEmbedding, corr: f64, iso: f64, s: f64) -> NMRecord {
    let parts = f.component_norms(s);
    NMRecord {
        n,
        k,
        residual: parts.iter().sum(),
        residual_parts: parts,
        zeta: u.zeta.iter().map(|z| z * z).sum::<f64>().sqrt(),
        correction: corr,
        torus: u.norm(s),
        isotropy_defect: iso,
    }
}

/// Runs the Newton scheme from the flat torus at the frequency of `h`.
pub fn nm_iterate(h: &ToyHamiltonian, sched: &NMSchedule, cfg: &NMConfig) -> Result<NMRun> {
    if cfg.enforce_gate && !sched.gate_ok() {
        return Err(Error::Gate(format!("eps K0^tau2 = {:e} >= {:e}", sched.gate_value(), sched.delta0)));
    }
    let d = h.d();
    let mut u = TorusEmbedding::trivial(d, cfg.l, h.jmax);
    let mut f = evaluate_f(h, &u)?;
    let mut records = vec![record(0, 0.0, &f, &u, 0.0, 0.0, cfg.s_norm)];
    let mut increases = 0;
    for n in 0..cfg.n_max {
        let last = records.last().unwrap().residual;
        if last <= cfg.tol {
            break;
        }
        let k = sched.k(n);
        let ai = ApproxInverse::new(h, &u, &cfg.solver)?;
        let corr = ai.apply(&f.project(k))?.project(k).scale(-1.0);
        let mut nu = u.add(&corr);
        nu.zeta = u.zeta.iter().zip(&corr.zeta).map(|(a, b)| a + b).collect();
        let fnew = evaluate_f(h, &nu)?;
        let rec = record(n + 1, k, &fnew, &nu, corr.norm(cfg.s_norm), ai.isotropy_before, cfg.s_norm);
        if !rec.residual.is_finite() {
            return Err(Error::Divergence(format!("non-finite residual at step {}", n + 1)));
        }
        if rec.residual > last {
            if last <= cfg.floor {
                break;
            }
            increases += 1;
        }
        records.push(rec);
        if increases >= 2 {
            let trace: Vec<String> = records.iter().map(|r| format!("{:.3e}", r.residual)).collect();
            return Err(Error::Divergence(format!("residual increased twice: {}", trace.join(", "))));
        }
        u = nu;
        f = fnew;
    }
    let converged = records.iter().map(|r| r.residual).fold(f64::INFINITY, f64::min) <= cfg.tol.max(cfg.floor);
    if let Some(best) = records.iter().rposition(|r| r.residual <= cfg.floor) {
        if best + 1 < records.len() {
            records.truncate(best + 1);
        }
    }
    Ok(NMRun { omega: h.omega.clone(), nu: h.nu.clone(), embedding: u, records, converged })
}

/// Runs over a grid of frequencies; failing samples are dropped and the
/// solution is extended to them from the nearest surviving sample.
pub struct NMFamily {
    pub runs: Vec<std::result::Result<NMRun, Error>>,
    /// Index of the surviving sample providing the value at each grid point.
    pub extension: Vec<Option<usize>>,
}

impl NMFamily {
    pub fn surviving(&self) -> usize {
        self.runs.iter().filter(|r| r.is_ok()).count()
    }
}

#[allow(clippy::too_many_arguments)]
pub fn nm_family(
    freq: &ToyFrequencies,
    density: &Density,
    eps: f64,
    jmax: usize,
    nx: usize,
    omegas: &[Vec<f64>],
    sched: &NMSchedule,
    cfg: &NMConfig,
) -> NMFamily {
    let runs: Vec<std::result::Result<NMRun, Error>> = omegas
        .iter()
        .map(|w| {
            let h = ToyHamiltonian::new(freq.clone(), density.clone(), eps, jmax, nx, w)?;
            nm_iterate(&h, sched, cfg)
        })
        .collect();
    let extension = omegas
        .iter()
        .map(|w| {
            runs.iter()
                .enumerate()
                .filter(|(_, r)| r.is_ok())
                .map(|(i, _)| (i, crate::spaces::dist(w, &omegas[i])))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(i, _)| i)
        })
        .collect();
    NMFamily { runs, extension }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_run(eps: f64) -> (ToyHamiltonian, NMSchedule, NMConfig) {
        let freq = ToyFrequencies::new(vec![1], 1.0, 1.0);
        let omega = freq.omega_of_nu(&[0.1]);
        let h = ToyHamiltonian::new(freq, Density::parse("cos(2*pi*x)*z0^2").unwrap(), eps, 16, 64, &omega).unwrap();
        let sched = NMSchedule::new(eps.max(1e-300), 1, 1.5, LossConstants::default(), 0.5, 1.0).unwrap().with_k0(8.0);
        (h, sched, NMConfig { l: 8, n_max: 5, ..NMConfig::default() })
    }

    #[test]
    fn schedule_constants_satisfy_their_identities() {
        let s = NMSchedule::new(1e-4, 2, 1.5, LossConstants::default(), 0.5, 1.0).unwrap();
        assert!(s.identity_defect() < 1e-12);
        assert!(s.p_condition());
        assert!(s.frak_a * s.tau2 < 1.0);
        assert!((s.gamma - 1e-4f64.powf(s.frak_a)).abs() < 1e-15);
        assert!(s.gate_ok());
        let k: Vec<f64> = (0..4).map(|n| s.clone().with_k0(4.0).k(n)).collect();
        assert!(k.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(k[1], 8.0);
        assert!(NMSchedule::new(1e-4, 2, 1.5, LossConstants::default(), 1.0, 1.0).is_err());
    }

    #[test]
    fn no_perturbation_converges_immediately() {
        let (h, s, c) = toy_run(0.0);
        let run = nm_iterate(&h, &s, &c).unwrap();
        assert_eq!(run.records.len(), 1);
        assert_eq!(run.final_residual(), 0.0);
        assert!(run.converged);
    }

    #[test]
    fn semilinear_toy_converges_in_one_step() {
        let (h, s, c) = toy_run(1e-4);
        let run = nm_iterate(&h, &s, &c).unwrap();
        let r = run.residuals();
        assert!(r[0] > 1e-3 && r[1] < 1e-13, "{r:?}");
        assert!(run.converged);
    }

    #[test]
    fn cubic_toy_converges_quadratically() {
        let freq = ToyFrequencies::new(vec![1], 1.0, 1.0);
        let omega = freq.omega_of_nu(&[0.3]);
        let h = ToyHamiltonian::new(freq, Density::parse("cos(2*pi*x)*z0^3").unwrap(), 0.1, 16, 64, &omega).unwrap();
        let sched = NMSchedule::new(0.1, 1, 1.5, LossConstants::default(), 0.5, 1.0).unwrap().with_k0(8.0);
        let run = nm_iterate(&h, &sched, &NMConfig::default()).unwrap();
        let r = run.residuals();
        assert!(run.decreasing_steps() >= 3, "{r:?}");
        assert!(r.windows(2).all(|w| w[1] < 0.2 * w[0]), "{r:?}");
        assert!(r[2] / r[1] < 10.0 * (r[1] / r[0]), "{r:?}");
        assert!(run.final_residual() < 1e-8 && run.converged, "{r:?}");
        assert!(run.zeta_ratio(1e-13) < 1.0, "{}", run.zeta_ratio(1e-13));
    }

    #[test]
    fn family_extends_from_the_nearest_survivor() {
        let freq = ToyFrequencies::new(vec![1], 1.0, 1.0);
        let density = Density::parse("cos(2*pi*x)*z0^2").unwrap();
        let omegas = vec![freq.omega_of_nu(&[0.1]), freq.omega_of_nu(&[-0.1]), freq.omega_of_nu(&[0.12])];
        let sched = NMSchedule::new(1e-4, 1, 1.5, LossConstants::default(), 0.5, 1.0).unwrap().with_k0(8.0);
        let fam = nm_family(&freq, &density, 1e-4, 8, 32, &omegas, &sched, &NMConfig { l: 4, ..NMConfig::default() });
        assert_eq!(fam.surviving(), 2);
        assert!(fam.runs[1].is_err());
        assert_eq!(fam.extension, vec![Some(0), Some(0), Some(2)]);
    }

    #[test]
    fn gate_is_enforced_when_requested() {
        let (h, s, mut c) = toy_run(1e-4);
        c.enforce_gate = true;
        let mut big = s.clone();
        big.delta0 = 0.0;
        assert!(matches!(nm_iterate(&h, &big, &c), Err(Error::Gate(_))));
    }
}
