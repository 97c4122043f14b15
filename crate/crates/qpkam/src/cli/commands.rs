//! The subcommands: each builds its inputs from the configuration, runs one
//! part of the pipeline and writes a manifest, JSON results and CSV series.

use super::config::{ExperimentConfig, KamSource, SolverSpec};
use super::output::{field_json, num, ArtifactWriter, Cell, Manifest, Table};
use super::CliError;
use crate::error::{Error, Result};
use crate::kam::{
    cos_cos, decay_exponent, init_kam, order_zero_perturbation, DiagonalPart, KamFamily, KamState,
};
use crate::measure::{estimate_excluded_measure, EigenModel, FreqBox, MuSource, SamplerConfig};
use crate::nash_moser::{
    nm_family, symbolic_input, LossConstants, NMConfig, NMRun, NMSchedule, NormalSolverMode, ReducibleConfig,
    TorusEmbedding, ToyHamiltonian,
};
use crate::reduction::{reduce, ExtractOptions, KdvFrequencyModel, NormalBox, ReducedOperator};
use crate::spaces::TruncatedField;
use clap::ValueEnum;
use serde_json::{json, Value};
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Command {
    /// Stage 0 to 4 snapshots of the regularisation pipeline.
    Reduce,
    /// KAM decay series and surviving sets.
    Kam,
    /// Newton residual series and final tori.
    Nashmoser,
    /// Excluded-measure sweep over gamma.
    Measure,
    /// Invariant suite; fails with exit code 4.
    Verify,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Reduce => "reduce",
            Command::Kam => "kam",
            Command::Nashmoser => "nashmoser",
            Command::Measure => "measure",
            Command::Verify => "verify",
        }
    }
}

/// What a run produced.
#[derive(Debug)]
pub struct Outcome {
    pub hash: String,
    pub files: Vec<std::path::PathBuf>,
    /// Set by `verify`.
    pub passed: Option<bool>,
}

pub(crate) fn at(module: &'static str) -> impl Fn(Error) -> CliError {
    move |e| CliError::Compute { module, source: e }
}

pub fn run(cmd: Command, cfg: &ExperimentConfig, out: &Path, threads: usize) -> std::result::Result<Outcome, CliError> {
    let mut w = ArtifactWriter::create(out, Manifest::new(cmd.name(), cfg)).map_err(CliError::Io)?;
    let passed = match cmd {
        Command::Reduce => run_reduce(cfg, &mut w).map(|_| None),
        Command::Kam => run_kam(cfg, &mut w).map(|_| None),
        Command::Nashmoser => run_nashmoser(cfg, &mut w).map(|_| None),
        Command::Measure => run_measure(cfg, threads, &mut w).map(|_| None),
        Command::Verify => super::verify::run_verify(cfg, threads, &mut w).map(Some),
    }?;
    Ok(Outcome { hash: w.hash().to_string(), files: w.files().to_vec(), passed })
}

pub fn toy_hamiltonian(cfg: &ExperimentConfig, omega: &[f64]) -> Result<ToyHamiltonian> {
    ToyHamiltonian::new(cfg.frequencies(), cfg.density()?, cfg.model.eps, cfg.truncation.j, cfg.nx(), omega)
}

pub fn normal_box(cfg: &ExperimentConfig) -> NormalBox {
    NormalBox::new(cfg.model.sites.clone(), cfg.truncation.l, cfg.truncation.j)
}

/// Linearised toy operator on the flat torus at `omega`, through the four steps.
pub fn reduce_at(cfg: &ExperimentConfig, omega: &[f64]) -> std::result::Result<ReducedOperator, CliError> {
    let h = toy_hamiltonian(cfg, omega).map_err(at("nash-moser-solver"))?;
    let e = TorusEmbedding::trivial(h.d(), cfg.truncation.l, cfg.truncation.j);
    let rc = cfg.reduction_config();
    let input = symbolic_input(&h, &e, rc.coeff_j).map_err(at("nash-moser-solver"))?;
    reduce(&input, &h.omega, &h.freq.kdv_model(&h.nu), &normal_box(cfg), &rc).map_err(at("reduction-pipeline"))
}

fn io(e: std::io::Error) -> CliError {
    CliError::Io(e)
}

fn mean_and_osc(f: &TruncatedField) -> (f64, f64) {
    let mut osc = 0.0;
    let mut mean = 0.0;
    for (ell, j, v) in f.modes() {
        if j == 0 && ell.iter().all(|&l| l == 0) {
            mean = v.re;
        } else {
            osc += v.norm();
        }
    }
    (mean, osc)
}

fn snapshot(red: &ReducedOperator) -> Result<Value> {
    let stages: Vec<Value> = red
        .stages
        .iter()
        .map(|s| {
            json!({
                "index": s.index,
                "a3": field_json(&s.a3),
                "a1": field_json(&s.a1),
                "op_max_abs": num(s.op.max_abs()),
                "remainder_max_abs": s.remainder.as_ref().map(|r| num(r.max_abs())),
            })
        })
        .collect();
    let defects = red.final_coefficient_defects(&ExtractOptions::for_box(red.nbox.jmax))?;
    Ok(json!({
        "omega": red.omega,
        "frequency_model": red.freq,
        "m3": red.m3,
        "m1": red.m1,
        "stages": stages,
        "conjugators": {
            "step1": red.step1.as_ref().map(|r| json!({
                "alpha_breve": field_json(&r.alpha_breve),
                "secular_defect": num(r.secular_defect),
            })),
            "step2": red.step2.as_ref().map(|r| json!({
                "a3_defect": num(r.a3_defect),
                "a2_defect": num(r.a2_defect),
            })),
            "step3": red.step3.as_ref().map(|r| json!({ "b": field_json(&r.b), "residual": num(r.residual) })),
            "step4": red.step4.as_ref().map(|r| json!({ "b": field_json(&r.b), "residual": num(r.residual) })),
        },
        "final_defects": defects,
        "replay_error": num(red.replay_error()?),
    }))
}

fn run_reduce(cfg: &ExperimentConfig, w: &mut ArtifactWriter) -> std::result::Result<(), CliError> {
    let mut table = Table::new(&["sample", "stage", "a3_mean", "a3_oscillation", "a1_mean", "a1_oscillation"]);
    let mut snaps = vec![];
    for (i, omega) in cfg.omegas().iter().enumerate() {
        log::info!("reduce: sample {i}");
        let red = reduce_at(cfg, omega)?;
        for s in &red.stages {
            let (m3, o3) = mean_and_osc(&s.a3);
            let (m1, o1) = mean_and_osc(&s.a1);
            table.push(vec![i.into(), s.index.into(), m3.into(), o3.into(), m1.into(), o1.into()]);
        }
        snaps.push(snapshot(&red).map_err(at("reduction-pipeline"))?);
    }
    w.csv("reduce_stages.csv", &table).map_err(io)?;
    w.json("reduce_snapshots.json", json!({ "samples": snaps })).map_err(io)
}

pub fn kam_state(cfg: &ExperimentConfig, omega: &[f64]) -> std::result::Result<KamState, CliError> {
    match cfg.kam.source {
        KamSource::Reduced => init_kam(&reduce_at(cfg, omega)?, cfg.kam_config()).map_err(at("kam-diagonalizer")),
        KamSource::Order0 => {
            let bx = normal_box(cfg).op_box();
            let d = DiagonalPart::unperturbed(bx.rows.clone(), -1.0, 0.0, &KdvFrequencyModel::with_c(cfg.model.c));
            let r = order_zero_perturbation(&bx, &cos_cos(bx.d), cfg.model.eps).map_err(at("kam-diagonalizer"))?;
            KamState::new(omega, d, r, cfg.kam_config()).map_err(at("kam-diagonalizer"))
        }
    }
}

pub fn kam_family(cfg: &ExperimentConfig) -> std::result::Result<KamFamily, CliError> {
    let states = cfg.omegas().iter().map(|om| kam_state(cfg, om)).collect::<std::result::Result<Vec<_>, _>>()?;
    KamFamily { states }.iterate(cfg.kam.steps).map_err(at("kam-diagonalizer"))
}

fn run_kam(cfg: &ExperimentConfig, w: &mut ArtifactWriter) -> std::result::Result<(), CliError> {
    let fam = kam_family(cfg)?;
    let mut table = Table::new(&[
        "sample",
        "nu",
        "cutoff",
        "norm_before",
        "norm_after",
        "offdiag_after",
        "skipped",
        "max_imag",
        "oddness",
        "mu_shift",
        "conservation",
    ]);
    let mut samples = vec![];
    for (i, s) in fam.states.iter().enumerate() {
        for r in &s.history {
            table.push(vec![
                i.into(),
                r.nu.into(),
                r.cutoff.into(),
                r.norm_before.into(),
                r.norm_after.into(),
                r.offdiag_after.into(),
                r.skipped.into(),
                r.max_imag.into(),
                r.oddness.into(),
                r.mu_shift.into(),
                r.conservation.into(),
            ]);
        }
        let ext = fam.extended_mu(i).ok().map(|d| d.mu.iter().copied().map(num).collect::<Vec<_>>());
        samples.push(json!({
            "omega": s.omega,
            "surviving": s.surviving,
            "gate_value": num(s.gate_value),
            "decay_exponent": decay_exponent(s).map(num),
            "modes": s.d.modes,
            "mu": s.d.mu.iter().copied().map(num).collect::<Vec<_>>(),
            "extended_mu": ext,
            "history": s.history,
        }));
    }
    w.csv("kam_decay.csv", &table).map_err(io)?;
    w.json("kam_family.json", json!({ "surviving": fam.surviving(), "samples": samples })).map_err(io)
}

pub fn nm_setup(cfg: &ExperimentConfig) -> Result<(NMSchedule, NMConfig)> {
    let n = &cfg.nash_moser;
    let loss: LossConstants = n.loss;
    let mut sched = NMSchedule::new(cfg.model.eps.max(1e-300), cfg.model.sites.len(), n.tau, loss, n.frak_fraction, n.delta0)?;
    if let Some(k0) = n.k0 {
        sched = sched.with_k0(k0);
    }
    let solver = match n.solver {
        SolverSpec::Direct => NormalSolverMode::Direct,
        SolverSpec::Reducible => NormalSolverMode::Reducible(ReducibleConfig {
            reduction: cfg.reduction_config(),
            kam: cfg.kam_config(),
            kam_steps: cfg.kam.steps,
        }),
    };
    let nm = NMConfig {
        l: cfg.truncation.l,
        n_max: n.n_max,
        tol: n.tol,
        s_norm: n.s_norm,
        solver,
        enforce_gate: n.enforce_gate,
        floor: n.floor,
    };
    Ok((sched, nm))
}

fn torus_json(e: &TorusEmbedding) -> Value {
    json!({
        "theta": e.theta.iter().map(field_json).collect::<Vec<_>>(),
        "y": e.y.iter().map(field_json).collect::<Vec<_>>(),
        "w": field_json(&e.w),
        "zeta": e.zeta,
    })
}

fn run_json(r: &NMRun, floor: f64) -> Value {
    json!({
        "omega": r.omega,
        "nu": r.nu,
        "converged": r.converged,
        "final_residual": num(r.final_residual()),
        "decreasing_steps": r.decreasing_steps(),
        "zeta_ratio": num(r.zeta_ratio(floor)),
        "torus": torus_json(&r.embedding),
    })
}

fn run_nashmoser(cfg: &ExperimentConfig, w: &mut ArtifactWriter) -> std::result::Result<(), CliError> {
    let (sched, nm) = nm_setup(cfg).map_err(at("nash-moser-solver"))?;
    let density = cfg.density().map_err(at("nash-moser-solver"))?;
    let omegas = cfg.omegas();
    let fam = nm_family(&cfg.frequencies(), &density, cfg.model.eps, cfg.truncation.j, cfg.nx(), &omegas, &sched, &nm);
    if fam.surviving() == 0 {
        if let Some(Err(e)) = fam.runs.first() {
            return Err(at("nash-moser-solver")(e.clone()));
        }
    }
    let mut table = Table::new(&[
        "sample",
        "n",
        "k",
        "residual",
        "residual_theta",
        "residual_y",
        "residual_w",
        "zeta",
        "correction",
        "torus",
        "isotropy_defect",
    ]);
    let mut runs = vec![];
    for (i, r) in fam.runs.iter().enumerate() {
        match r {
            Ok(run) => {
                for rec in &run.records {
                    let mut row: Vec<Cell> = vec![i.into(), rec.n.into(), rec.k.into(), rec.residual.into()];
                    row.extend(rec.residual_parts.iter().map(|v| Cell::from(*v)));
                    row.extend([rec.zeta.into(), rec.correction.into(), rec.torus.into(), rec.isotropy_defect.into()]);
                    table.push(row);
                }
                runs.push(json!({ "ok": true, "run": run_json(run, nm.floor), "records": run.records }));
            }
            Err(e) => runs.push(json!({ "ok": false, "omega": omegas[i], "error": e.to_string() })),
        }
    }
    w.csv("nm_residuals.csv", &table).map_err(io)?;
    w.json(
        "nm_tori.json",
        json!({ "schedule": sched, "surviving": fam.surviving(), "extension": fam.extension, "runs": runs }),
    )
    .map_err(io)
}

pub fn measure_inputs(cfg: &ExperimentConfig, threads: usize) -> Result<(MuSource, FreqBox, SamplerConfig)> {
    let model = EigenModel::toy(&cfg.frequencies(), cfg.truncation.j as i64)?;
    let bx = FreqBox::around(&cfg.omegas()[0], cfg.measure.half_width)?;
    let sampler = SamplerConfig { kind: cfg.measure.sampler, n: cfg.measure.samples, seed: cfg.seed, threads: threads.max(1) };
    Ok((MuSource::Model(model), bx, sampler))
}

fn run_measure(cfg: &ExperimentConfig, threads: usize, w: &mut ArtifactWriter) -> std::result::Result<(), CliError> {
    let (src, bx, sampler) = measure_inputs(cfg, threads).map_err(at("measure-lab"))?;
    let m = &cfg.measure;
    let rep = estimate_excluded_measure(&src, &bx, &m.gammas, m.tau, &cfg.scan_config(), &sampler).map_err(at("measure-lab"))?;
    let mut table = Table::new(&["gamma", "excluded", "samples", "fraction", "ci_low", "ci_high"]);
    for e in &rep.estimates {
        table.push(vec![e.gamma.into(), e.excluded.into(), e.n.into(), e.fraction.into(), e.ci_low.into(), e.ci_high.into()]);
    }
    w.csv("measure_sweep.csv", &table).map_err(io)?;
    w.json(
        "measure_hits.json",
        json!({
            "box": bx,
            "tau": m.tau,
            "monotone": rep.monotone(),
            "slope": rep.slope.map(num),
            "pruning": [num(rep.pruning.0), num(rep.pruning.1)],
            "hits": rep.hits,
        }),
    )
    .map_err(io)
}
