//! Invariant suite run by `verify`.

use super::commands::{at, kam_state, measure_inputs, nm_setup, normal_box, reduce_at, toy_hamiltonian};
use super::config::ExperimentConfig;
use super::output::{num, ArtifactWriter, Table};
use super::CliError;
use crate::algebra::{compose, structure_check, Multiplier, OpBox, StructureKind, Symbol};
use crate::kam::{homological_residual, kam_iterate, kam_norm, order_zero_perturbation, solve_homological, spectrum_check};
use crate::measure::estimate_excluded_measure;
use crate::nash_moser::{nm_iterate, ApproxInverse, NormalSolverMode, Tangent};
use crate::reduction::ExtractOptions;
use crate::spaces::{FieldShape, TruncatedField};
use crate::transport::flow_symplectic_defect;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

/// One named check: passes when `value <= tolerance`.
#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub module: &'static str,
    pub name: &'static str,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Default)]
struct Suite {
    checks: Vec<Check>,
}

impl Suite {
    fn le(&mut self, module: &'static str, name: &'static str, value: f64, tolerance: f64) {
        let passed = value <= tolerance;
        log::info!("{module}/{name}: {value:e} (tolerance {tolerance:e}) {}", if passed { "ok" } else { "FAILED" });
        self.checks.push(Check { module, name, value, tolerance, passed });
    }

    fn flag(&mut self, module: &'static str, name: &'static str, ok: bool) {
        self.le(module, name, if ok { 0.0 } else { 1.0 }, 0.0);
    }
}

fn real_vector(modes: &[i64], rng: &mut impl Rng) -> Vec<C64> {
    let mut v = vec![C64::new(0.0, 0.0); modes.len()];
    for (i, &j) in modes.iter().enumerate() {
        if j > 0 {
            let z = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            v[i] = z;
            if let Some(k) = modes.iter().position(|&m| m == -j) {
                v[k] = z.conj();
            }
        }
    }
    v
}

/// Differential operators compose without remainder once the expansion
/// reaches the order of the left factor.
fn symbol_check(cfg: &ExperimentConfig, rng: &mut ChaCha8Rng) -> crate::Result<f64> {
    let d = cfg.model.sites.len();
    let sh = FieldShape::new(d, 1, 2);
    let a = Symbol::term(TruncatedField::random(sh, 0.3, 1.0, rng), Multiplier::Power(2))
        .add(&Symbol::term(TruncatedField::random(sh, 0.3, 1.0, rng), Multiplier::One));
    let b = Symbol::term(TruncatedField::random(sh, 0.3, 1.0, rng), Multiplier::Power(1));
    let jm = cfg.truncation.j as i64;
    let bx = OpBox::square(d, 2, OpBox::x_modes(cfg.truncation.j, &[]));
    let (_, rem) = compose(&a, &b, 2, bx)?;
    Ok(rem.max_abs() / (TWO_PI * jm as f64).powi(3))
}

const TWO_PI: f64 = std::f64::consts::TAU;

pub(crate) fn run_verify(cfg: &ExperimentConfig, threads: usize, w: &mut ArtifactWriter) -> Result<bool, CliError> {
    let tol = cfg.tolerances;
    let mut s = Suite::default();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let omega = cfg.omegas()[0].clone();

    let sym = symbol_check(cfg, &mut rng).map_err(at("operator-algebra"))?;
    s.le("operator-algebra", "differential_composition_is_exact", sym, tol.symbol);

    let red = reduce_at(cfg, &omega)?;
    let defects = red.final_coefficient_defects(&ExtractOptions::for_box(cfg.truncation.j)).map_err(at("reduction-pipeline"))?;
    s.le("reduction-pipeline", "a3_constant", defects.a3, tol.reduction);
    s.le("reduction-pipeline", "a2_vanishes", defects.a2, tol.reduction);
    s.le("reduction-pipeline", "a1_constant", defects.a1, tol.reduction);
    s.le("reduction-pipeline", "replay", red.replay_error().map_err(at("reduction-pipeline"))?, tol.reduction);
    let ham = structure_check(&red.last().op, StructureKind::Hamiltonian, tol.reduction).map_err(at("operator-algebra"))?;
    s.le("reduction-pipeline", "stage4_hamiltonian", ham.defect, tol.reduction);

    if let Some(st) = &red.step2 {
        let modes = st.flow.bx.cols.clone();
        let mut worst: f64 = 0.0;
        for _ in 0..5 {
            let (u, v) = (real_vector(&modes, &mut rng), real_vector(&modes, &mut rng));
            worst = worst.max(flow_symplectic_defect(&st.flow, &u, &v).map_err(at("transport-egorov"))?);
        }
        s.le("transport-egorov", "space_flow_symplectic", worst, tol.symplectic);
    }

    let start = kam_state(cfg, &omega)?;
    let l0 = start.operator().map_err(at("kam-diagonalizer"))?;
    let fin = kam_iterate(start, cfg.kam.steps).map_err(at("kam-diagonalizer"))?;
    let norms: Vec<f64> = fin.history.iter().map(|r| r.norm_after).collect();
    let first = fin.history.first().map(|r| r.norm_before).unwrap_or(0.0);
    let decreasing = std::iter::once(first).chain(norms.iter().copied()).collect::<Vec<_>>().windows(2).all(|p| p[1] < p[0] || p[0] == 0.0);
    s.flag("kam-diagonalizer", "norms_decrease", decreasing);
    let odd = fin.history.iter().map(|r| r.oddness.max(r.max_imag)).fold(fin.d.oddness_defect(), f64::max);
    let mu_scale = fin.d.mu.iter().fold(1.0f64, |a, m| a.max(m.abs()));
    s.le("kam-diagonalizer", "diagonal_real_and_odd_relative", odd / mu_scale, tol.kam);
    let spec = spectrum_check(&l0, &omega, &fin.u).map_err(at("kam-diagonalizer"))?;
    let scale = l0.max_abs() + omega.iter().map(|w| w.abs()).sum::<f64>() * cfg.truncation.l as f64;
    s.le("kam-diagonalizer", "spectrum_preserved_relative", spec / scale.max(1.0), tol.residual);

    let bx = normal_box(cfg).op_box();
    let c = TruncatedField::random(FieldShape::new(bx.d, bx.l, 2), 1.0, 1.0, &mut rng);
    let r = order_zero_perturbation(&bx, &c, 1e-2).map_err(at("kam-diagonalizer"))?;
    let n = fin.cfg.cutoff(0);
    let hom = solve_homological(&r, &fin.d, &omega, n, fin.cfg.gamma, fin.cfg.tau, false).map_err(at("kam-diagonalizer"))?;
    let res = homological_residual(&hom, &r, &fin.d, &omega, n).map_err(at("kam-diagonalizer"))?;
    s.le("kam-diagonalizer", "homological_residual", kam_norm(&res), tol.kam);

    let h = toy_hamiltonian(cfg, &omega).map_err(at("nash-moser-solver"))?;
    let (sched, nm) = nm_setup(cfg).map_err(at("nash-moser-solver"))?;
    let run = nm_iterate(&h, &sched, &nm).map_err(at("nash-moser-solver"))?;
    s.le("nash-moser-solver", "final_residual", run.final_residual(), tol.residual);
    let inv = ApproxInverse::new(&h, &run.embedding, &NormalSolverMode::Direct).map_err(at("nash-moser-solver"))?;
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let a = Tangent::random_real(h.d(), h.jmax, |j| h.is_normal(j), &mut rng);
        let b = Tangent::random_real(h.d(), h.jmax, |j| h.is_normal(j), &mut rng);
        worst = worst.max(inv.dg_symplectic_defect(&a, &b));
    }
    s.le("nash-moser-solver", "straightening_symplectic", worst, tol.symplectic);

    let (src, fbx, sampler) = measure_inputs(cfg, threads).map_err(at("measure-lab"))?;
    let m = &cfg.measure;
    let rep = estimate_excluded_measure(&src, &fbx, &m.gammas, m.tau, &cfg.scan_config(), &sampler).map_err(at("measure-lab"))?;
    s.flag("measure-lab", "fractions_monotone", rep.monotone());

    let mut table = Table::new(&["module", "check", "value", "tolerance", "passed"]);
    for c in &s.checks {
        table.push(vec![c.module.to_string().into(), c.name.to_string().into(), c.value.into(), c.tolerance.into(), c.passed.into()]);
    }
    let passed = s.checks.iter().all(|c| c.passed);
    w.csv("verify_checks.csv", &table).map_err(CliError::Io)?;
    let fractions: Vec<_> = rep.estimates.iter().map(|e| num(e.fraction)).collect();
    w.json("verify_report.json", json!({ "passed": passed, "checks": s.checks, "measure_fractions": fractions }))
        .map_err(CliError::Io)?;
    Ok(passed)
}
