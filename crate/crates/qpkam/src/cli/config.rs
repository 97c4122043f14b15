//! Declarative experiment description read from TOML.

use crate::error::{Error, Result};
use crate::expr::Density;
use crate::kam::KamConfig;
use crate::measure::{SamplerKind, ScanConfig};
use crate::nash_moser::{LossConstants, ToyFrequencies};
use crate::reduction::ReductionConfig;
use crate::spaces::DiophantineClass;
use crate::transport::{FlowOptions, Integrator};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub truncation: Truncation,
    pub model: ModelSpec,
    pub frequencies: FrequencySpec,
    #[serde(default)]
    pub diophantine: DiophantineSpec,
    #[serde(default)]
    pub reduction: ReductionSpec,
    #[serde(default)]
    pub kam: KamSpec,
    #[serde(default)]
    pub nash_moser: NashMoserSpec,
    #[serde(default)]
    pub measure: MeasureSpec,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub output: OutputSpec,
}

/// Angle modes `|l|_inf <= l`, space modes `|j| <= j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Truncation {
    pub l: usize,
    pub j: usize,
    /// Quadrature points in `x`; `0` picks `4 j`.
    #[serde(default)]
    pub nx: usize,
}

/// Toy Hamiltonian: tangential sites, frequency map and perturbation density.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub sites: Vec<i64>,
    #[serde(default = "one")]
    pub c: f64,
    #[serde(default = "one")]
    pub kappa: f64,
    pub eps: f64,
    /// Density `f(x, z0, z1)` in the expression grammar.
    pub density: String,
}

fn one() -> f64 {
    1.0
}

/// Frequencies given directly or through the actions `nu`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrequencySpec {
    #[serde(default)]
    pub nu: Vec<Vec<f64>>,
    #[serde(default)]
    pub omega: Vec<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiophantineSpec {
    pub gamma: f64,
    pub tau: f64,
}

impl Default for DiophantineSpec {
    fn default() -> Self {
        DiophantineSpec { gamma: 1e-3, tau: 4.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReductionSpec {
    pub coeff_j: usize,
    pub nx: usize,
    pub flow_steps: usize,
    pub integrator: Integrator,
    pub gate: f64,
    pub s0: f64,
}

impl Default for ReductionSpec {
    fn default() -> Self {
        let r = ReductionConfig::default();
        ReductionSpec { coeff_j: r.coeff_j, nx: r.nx, flow_steps: r.flow.steps, integrator: r.flow.integrator, gate: r.gate, s0: r.s0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KamSpec {
    pub source: KamSource,
    pub gamma: f64,
    pub tau: f64,
    pub n0: f64,
    pub chi: f64,
    pub steps: usize,
    pub tau_bar: Option<f64>,
    pub gate: Option<f64>,
}

impl Default for KamSpec {
    fn default() -> Self {
        let k = KamConfig::default();
        KamSpec { source: KamSource::Reduced, gamma: k.gamma, tau: k.tau, n0: k.n0, chi: k.chi, steps: 4, tau_bar: None, gate: None }
    }
}

/// Where the operator handed to the KAM scheme comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KamSource {
    /// Toy Hamiltonian along the flat torus, reduced by the pipeline.
    #[default]
    Reduced,
    /// Airy operator plus `eps` times an order-zero perturbation.
    Order0,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverSpec {
    Direct,
    Reducible,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NashMoserSpec {
    pub n_max: usize,
    pub tol: f64,
    pub floor: f64,
    pub s_norm: f64,
    pub tau: f64,
    /// Initial scale; `None` keeps the theoretical value.
    pub k0: Option<f64>,
    pub frak_fraction: f64,
    pub delta0: f64,
    pub enforce_gate: bool,
    pub solver: SolverSpec,
    pub loss: LossConstants,
}

impl Default for NashMoserSpec {
    fn default() -> Self {
        NashMoserSpec {
            n_max: 6,
            tol: 1e-10,
            floor: 1e-10,
            s_norm: 2.0,
            tau: 1.5,
            k0: Some(8.0),
            frak_fraction: 0.5,
            delta0: 1.0,
            enforce_gate: false,
            solver: SolverSpec::Direct,
            loss: LossConstants::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeasureSpec {
    /// Half width of the frequency box around the first grid frequency.
    pub half_width: f64,
    pub gammas: Vec<f64>,
    pub tau: f64,
    pub samples: usize,
    pub sampler: SamplerKind,
    pub l_scan: usize,
    pub j_scan: i64,
    pub prune: bool,
}

impl Default for MeasureSpec {
    fn default() -> Self {
        let s = ScanConfig::default();
        MeasureSpec {
            half_width: 3.0,
            gammas: vec![0.1, 0.05, 0.025],
            tau: 2.0,
            samples: 10_000,
            sampler: SamplerKind::Halton,
            l_scan: s.l_scan,
            j_scan: s.j_scan,
            prune: true,
        }
    }
}

/// Thresholds of the `verify` suite.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub symbol: f64,
    pub reduction: f64,
    pub kam: f64,
    pub residual: f64,
    pub symplectic: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { symbol: 1e-10, reduction: 1e-7, kam: 1e-12, residual: 1e-8, symplectic: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSpec {
    pub dir: String,
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec { dir: "qpkam-out".into() }
    }
}

impl ExperimentConfig {
    pub fn from_toml(src: &str) -> Result<Self> {
        let c: ExperimentConfig = toml::from_str(src).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let d = self.model.sites.len();
        if d == 0 || self.model.sites.iter().any(|&s| s <= 0) {
            return bad("sites must be a nonempty list of positive integers".into());
        }
        let mut s = self.model.sites.clone();
        s.sort_unstable();
        s.dedup();
        if s.len() != d {
            return bad("sites must be distinct".into());
        }
        if self.truncation.j as i64 <= *s.last().unwrap_or(&0) {
            return bad(format!("truncation j = {} must exceed the largest site", self.truncation.j));
        }
        if !(self.model.eps.is_finite() && self.model.eps >= 0.0) {
            return bad("eps must be finite and nonnegative".into());
        }
        Density::parse(&self.model.density)?;
        let f = &self.frequencies;
        if f.nu.is_empty() == f.omega.is_empty() {
            return bad("give exactly one of frequencies.nu and frequencies.omega".into());
        }
        if f.nu.iter().chain(&f.omega).any(|v| v.len() != d) {
            return bad(format!("every frequency entry needs {d} components"));
        }
        if f.nu.iter().flatten().any(|v| *v <= 0.0) {
            return bad("actions nu must be positive".into());
        }
        let m = &self.measure;
        if m.gammas.is_empty() || m.gammas.iter().any(|g| !(g.is_finite() && *g >= 0.0)) || m.half_width <= 0.0 {
            return bad("measure needs nonnegative gammas and a positive half width".into());
        }
        Ok(())
    }

    pub fn nx(&self) -> usize {
        if self.truncation.nx == 0 {
            4 * self.truncation.j.max(8)
        } else {
            self.truncation.nx
        }
    }

    pub fn frequencies(&self) -> ToyFrequencies {
        ToyFrequencies::new(self.model.sites.clone(), self.model.c, self.model.kappa)
    }

    pub fn density(&self) -> Result<Density> {
        Density::parse(&self.model.density)
    }

    /// Frequency vectors of the grid.
    pub fn omegas(&self) -> Vec<Vec<f64>> {
        if self.frequencies.omega.is_empty() {
            let f = self.frequencies();
            self.frequencies.nu.iter().map(|nu| f.omega_of_nu(nu)).collect()
        } else {
            self.frequencies.omega.clone()
        }
    }

    pub fn reduction_config(&self) -> ReductionConfig {
        let r = &self.reduction;
        ReductionConfig {
            coeff_j: r.coeff_j,
            nx: r.nx,
            flow: FlowOptions { steps: r.flow_steps, integrator: r.integrator, nx: 0 },
            dioph: DiophantineClass { gamma: self.diophantine.gamma, tau: self.diophantine.tau },
            gate: r.gate,
            s0: r.s0,
        }
    }

    pub fn kam_config(&self) -> KamConfig {
        let k = &self.kam;
        KamConfig { gamma: k.gamma, tau: k.tau, n0: k.n0, chi: k.chi, tau_bar: k.tau_bar, gate: k.gate, ..KamConfig::default() }
    }

    pub fn scan_config(&self) -> ScanConfig {
        ScanConfig { l_scan: self.measure.l_scan, j_scan: self.measure.j_scan, prune: self.measure.prune }
    }
}
