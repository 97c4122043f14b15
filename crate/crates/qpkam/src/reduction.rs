//! Regularisation of the linearised operator `omega.d_phi + A(phi)` on the
//! normal modes: a time reparametrisation, a space diffeomorphism and two
//! changes of variables bring the coefficients of `d_x^3` and `d_x` to
//! constants `m3`, `m1`.

use crate::algebra::{quantize, Multiplier, OpBox, QPOperator, Symbol};
use crate::error::{Error, Result};
use crate::linalg::{self, CMat};
use crate::spaces::{is_diophantine, DiophantineClass, FieldShape, Grid, TruncatedField, XSeries};
use crate::transport::{
    conjugate_omega_dphi, egorov_expand, invert_diffeo, transport_flow_op, DiffeoFamily, EgorovOptions, FlowOptions,
};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

const TWO_PI: f64 = 2.0 * PI;

/// Tangential sites `S+` and the truncation of the normal subspace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalBox {
    pub sites: Vec<i64>,
    /// Angle modes `|l|_inf <= l`.
    pub l: usize,
    /// Space modes `|j| <= jmax`.
    pub jmax: usize,
}

impl NormalBox {
    pub fn new(sites: Vec<i64>, l: usize, jmax: usize) -> Self {
        NormalBox { sites, l, jmax }
    }

    pub fn d(&self) -> usize {
        self.sites.len()
    }

    /// The zero mode and `+-S+`.
    pub fn excluded(&self) -> Vec<i64> {
        let mut e = vec![0];
        for &s in &self.sites {
            e.push(s);
            e.push(-s);
        }
        e
    }

    pub fn modes(&self) -> Vec<i64> {
        OpBox::x_modes(self.jmax, &self.excluded())
    }

    pub fn op_box(&self) -> OpBox {
        OpBox::square(self.d(), self.l, self.modes())
    }
}

/// Constants fixed by the number of sites and the Diophantine exponent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemeConstants {
    pub s0: usize,
    pub tau1: f64,
    pub a: f64,
    pub b: usize,
    /// Smoothing order of the remainder.
    pub m: usize,
}

pub fn scheme_constants(n_sites: usize, tau: f64) -> SchemeConstants {
    let s0 = (n_sites + 1) / 2 + 1;
    let tau1 = 2.0 * tau + 1.0;
    let a = 3.0 * tau1 + 1.0;
    let b = a.floor() as usize + 2;
    SchemeConstants { s0, tau1, a, b, m: 2 * (s0 + b) + 4 }
}

/// Pluggable model of the unperturbed normal frequencies through
/// `q_j`, the correction to the Airy dispersion `(2 pi j)^3`.
///
/// `q_j = c / (2 pi j) + sum_i odd[i] / (2 pi j)^{2i+3} + R_M(j)` with the
/// tail `R_M(n) = tail sgn(n)^M / (2 pi n)^{M+1}`. The multiplier entering the
/// operator is `Q(j) = i q_j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KdvFrequencyModel {
    pub c: f64,
    #[serde(default)]
    pub odd: Vec<f64>,
    #[serde(default)]
    pub tail: f64,
    #[serde(default)]
    pub m: usize,
}

impl KdvFrequencyModel {
    pub fn zero() -> Self {
        KdvFrequencyModel { c: 0.0, odd: vec![], tail: 0.0, m: 0 }
    }

    pub fn with_c(c: f64) -> Self {
        KdvFrequencyModel { c, ..Self::zero() }
    }

    pub fn tail_value(&self, n: i64) -> f64 {
        if n == 0 || self.tail == 0.0 {
            return 0.0;
        }
        let x = TWO_PI * n.abs() as f64;
        let sgn = if n > 0 { 1.0 } else { -1.0 };
        // sgn^M / sgn^{M+1} = sgn, so the tail is odd for every M.
        self.tail * sgn * (-((self.m + 1) as f64) * x.ln()).exp()
    }

    pub fn q(&self, j: i64) -> f64 {
        if j == 0 {
            return 0.0;
        }
        let x = TWO_PI * j as f64;
        let mut q = self.c / x;
        for (i, d) in self.odd.iter().enumerate() {
            q += d / x.powi(2 * i as i32 + 3);
        }
        q + self.tail_value(j)
    }

    pub fn multiplier(&self, j: i64) -> C64 {
        C64::new(0.0, self.q(j))
    }

    /// Coefficients `c_{-k}` of `Q = sum_k c_{-k} d_x^{-k} + i R_M`; only odd `k` occur.
    pub fn expansion(&self) -> Vec<(usize, f64)> {
        let mut out = vec![(1, -self.c)];
        for (i, d) in self.odd.iter().enumerate() {
            let k = 2 * i + 3;
            let s = if (k + 1) / 2 % 2 == 0 { 1.0 } else { -1.0 };
            out.push((k, s * d));
        }
        out
    }
}

/// Coefficients of the operator before regularisation:
/// `omega.d_phi - Pi(a3 d^3 + 2 (a3)_x d^2 + a1 d + sum_k low_order[k] d^{-k} + Q) + R`.
#[derive(Clone, Debug)]
pub struct ReductionInput {
    pub a3: TruncatedField,
    pub a1: TruncatedField,
    /// `low_order[k]` multiplies `d_x^{-k}`.
    pub low_order: Vec<TruncatedField>,
    /// Smoothing remainder on the normal box.
    pub remainder: Option<QPOperator>,
    pub m: usize,
}

impl ReductionInput {
    /// `a3 = -1`, every other coefficient zero.
    pub fn airy(d: usize, m: usize) -> Self {
        let s = FieldShape::new(d, 0, 0);
        ReductionInput {
            a3: TruncatedField::constant(s, -1.0),
            a1: TruncatedField::zeros(s, true),
            low_order: vec![],
            remainder: None,
            m,
        }
    }

    pub fn symbol(&self) -> Symbol {
        let mut sym = Symbol::term(self.a3.clone(), Multiplier::Power(3))
            .add(&Symbol::term(self.a3.dx().scale(2.0), Multiplier::Power(2)))
            .add(&Symbol::term(self.a1.clone(), Multiplier::Power(1)));
        for (k, f) in self.low_order.iter().enumerate() {
            sym = sym.add(&Symbol::term(f.clone(), Multiplier::Power(-(k as i32))));
        }
        sym
    }
}

/// Numerical settings of the pipeline.
#[derive(Clone, Copy, Debug)]
pub struct ReductionConfig {
    /// Space band of the coefficient fields.
    pub coeff_j: usize,
    /// Quadrature grid in `x`.
    pub nx: usize,
    pub flow: FlowOptions,
    pub dioph: DiophantineClass,
    /// Largest admissible `||a3 + 1||_{s0}`.
    pub gate: f64,
    pub s0: f64,
}

impl Default for ReductionConfig {
    fn default() -> Self {
        ReductionConfig {
            coeff_j: 16,
            nx: 128,
            flow: FlowOptions::default(),
            dioph: DiophantineClass { gamma: 1e-3, tau: 4.0 },
            gate: 0.5,
            s0: 2.0,
        }
    }
}

/// One stage `L_s = omega.d_phi + op`, with the top coefficients
/// `op = -(a3 d^3 + a1 d + ...)`.
#[derive(Clone, Debug)]
pub struct Stage {
    pub index: usize,
    pub op: QPOperator,
    pub a3: TruncatedField,
    pub a1: TruncatedField,
    pub remainder: Option<QPOperator>,
}

/// Record of the time reparametrisation `phi -> phi + alpha(phi) omega`.
#[derive(Clone, Debug)]
pub struct Reparam {
    pub alpha: Vec<f64>,
    pub alpha_breve: TruncatedField,
    pub rho: Vec<f64>,
    /// Angles `phi_k + alpha(phi_k) omega`.
    pub theta: Vec<Vec<f64>>,
    /// Largest deviation of `int dx / a3^{1/3}` from `m3^{-1/3}` after the step.
    pub secular_defect: f64,
}

/// Record of the space diffeomorphism.
#[derive(Clone, Debug)]
pub struct SpaceDiffeo {
    pub diffeo: DiffeoFamily,
    pub flow: QPOperator,
    pub flow_inv: QPOperator,
    /// Sup of `|a3^{(2)} - m3|` from the symbolic expansion.
    pub a3_defect: f64,
    /// Sup of the symbolic second-order coefficient.
    pub a2_defect: f64,
}

/// Record of a conjugation `exp(G)`.
#[derive(Clone, Debug)]
pub struct Generated {
    pub b: TruncatedField,
    pub map: QPOperator,
    pub map_inv: QPOperator,
    /// Largest residual of the equation defining `b`.
    pub residual: f64,
}

/// Result of the pipeline: every stage and the conjugators between them.
#[derive(Clone, Debug)]
pub struct ReducedOperator {
    pub omega: Vec<f64>,
    pub nbox: NormalBox,
    pub freq: KdvFrequencyModel,
    pub stages: Vec<Stage>,
    pub m3: Option<f64>,
    pub m1: Option<f64>,
    pub step1: Option<Reparam>,
    pub step2: Option<SpaceDiffeo>,
    pub step3: Option<Generated>,
    pub step4: Option<Generated>,
}

fn check_dioph(omega: &[f64], cfg: &ReductionConfig, l: usize) -> Result<()> {
    let rep = is_diophantine(omega, cfg.dioph, l.max(1))?;
    if !rep.ok {
        return Err(Error::NotDiophantine(format!("margin {:e} at {:?}", rep.margin, rep.worst)));
    }
    Ok(())
}

/// `(int_0^1 a^{-1/3} dx)^{-3}` with the real cube root.
fn secular(c: &[C64], nx: usize) -> Result<f64> {
    let vals = XSeries::new(c.to_vec()).to_grid(nx);
    let mut s = 0.0;
    for v in &vals {
        if v.re >= 0.0 {
            return Err(Error::InvalidField(format!("a3 = {} is not negative", v.re)));
        }
        s += 1.0 / v.re.cbrt();
    }
    Ok((s / nx as f64).powi(-3))
}

fn phi_only(vals: &[f64], d: usize, nphi: usize, l: usize) -> TruncatedField {
    let grid = Grid { d, nphi, nx: 1, vals: vals.iter().map(|v| C64::new(*v, 0.0)).collect() };
    TruncatedField::from_grid(&grid, FieldShape::new(d, l, 0), true)
}

fn sample_values(f: &TruncatedField, nphi: usize) -> Vec<f64> {
    f.x_slices(nphi).iter().map(|s| s[s.len() / 2].re).collect()
}

/// `U A U^{-1} + U omega.d_phi(U^{-1})`, the angle derivative spectral.
fn conjugate_family(a: &QPOperator, u: &QPOperator, u_inv: &QPOperator, omega: &[f64]) -> Result<QPOperator> {
    u.mul(a)?.mul(u_inv)?.add(&u.mul(&u_inv.omega_dphi(omega))?)
}

fn conjugate_opt(r: &Option<QPOperator>, u: &QPOperator, u_inv: &QPOperator) -> Result<Option<QPOperator>> {
    r.as_ref().map(|r| u.mul(r)?.mul(u_inv)).transpose()
}

fn sup_on_grid(f: &TruncatedField, nphi: usize, nx: usize) -> f64 {
    f.to_grid(nphi, nx).vals.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Operator `-Pi(symbol + Q) + R` on the normal box.
pub fn assemble_l0(
    input: &ReductionInput,
    omega: &[f64],
    freq: &KdvFrequencyModel,
    nbox: &NormalBox,
    cfg: &ReductionConfig,
) -> Result<ReducedOperator> {
    let d = nbox.d();
    if omega.len() != d || input.a3.shape.d != d || input.a1.shape.d != d {
        return Err(Error::DimensionMismatch("angle dimension of the input".into()));
    }
    for f in [&input.a3, &input.a1].into_iter().chain(&input.low_order) {
        if f.reality_defect() > 1e-12 {
            return Err(Error::InvalidField("coefficients must be real".into()));
        }
    }
    let dev = input.a3.add(&TruncatedField::constant(input.a3.shape, 1.0)).sobolev_norm(cfg.s0)?;
    if dev > cfg.gate {
        return Err(Error::Gate(format!("||a3 + 1||_{} = {dev:e} > {}", cfg.s0, cfg.gate)));
    }
    let bx = nbox.op_box();
    let mut op = quantize(&input.symbol(), bx.clone())?
        .add(&QPOperator::multiplier(bx.clone(), |j| freq.multiplier(j)))?
        .scale(C64::new(-1.0, 0.0));
    if let Some(r) = &input.remainder {
        op = op.add(r)?;
    }
    let stage = Stage {
        index: 0,
        op,
        a3: input.a3.clone(),
        a1: input.a1.clone(),
        remainder: input.remainder.clone(),
    };
    Ok(ReducedOperator {
        omega: omega.to_vec(),
        nbox: nbox.clone(),
        freq: freq.clone(),
        stages: vec![stage],
        m3: None,
        m1: None,
        step1: None,
        step2: None,
        step3: None,
        step4: None,
    })
}

impl ReducedOperator {
    pub fn stage(&self) -> usize {
        self.stages.len() - 1
    }

    pub fn last(&self) -> &Stage {
        self.stages.last().expect("at least one stage")
    }

    fn expect_stage(&self, s: usize) -> Result<()> {
        if self.stage() != s {
            return Err(Error::Config(format!("expected stage {s}, have stage {}", self.stage())));
        }
        Ok(())
    }

    fn bx(&self) -> OpBox {
        self.nbox.op_box()
    }

    /// Time reparametrisation making `int dx / a3^{1/3}` independent of `phi`.
    pub fn step1(mut self, cfg: &ReductionConfig) -> Result<Self> {
        self.expect_stage(0)?;
        let bx = self.bx();
        let (d, nphi, n) = (bx.d, bx.nphi(), bx.n_samples());
        let omega = self.omega.clone();
        check_dioph(&omega, cfg, bx.l)?;
        let s0 = &self.stages[0];
        let ivals = (0..n)
            .map(|k| secular(&s0.a3.x_coeffs_at(&bx.phi_point(k)), cfg.nx))
            .collect::<Result<Vec<f64>>>()?;
        let m3 = ivals.iter().sum::<f64>() / n as f64;
        let g: Vec<f64> = ivals.iter().map(|i| i / m3 - 1.0).collect();
        let alpha_breve = phi_only(&g, d, nphi, bx.l).omega_dphi_inv_unchecked(&omega, cfg.dioph.gamma)?;
        let w_breve = alpha_breve.omega_dphi(&omega);
        let mut alpha = Vec::with_capacity(n);
        let mut theta = Vec::with_capacity(n);
        let mut rho = Vec::with_capacity(n);
        for k in 0..n {
            let phi = bx.phi_point(k);
            let at = |a: f64| -> Vec<f64> { phi.iter().zip(&omega).map(|(p, w)| p + a * w).collect() };
            let mut a = 0.0;
            let mut converged = false;
            for _ in 0..200 {
                let next = -alpha_breve.eval(&at(a), 0.0).re;
                let step = (next - a).abs();
                a = next;
                if step <= 1e-15 * (1.0 + a.abs()) {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(Error::NotInvertible("time reparametrisation did not converge".into()));
            }
            let th = at(a);
            let r = 1.0 + w_breve.eval(&th, 0.0).re;
            if r <= 0.0 {
                return Err(Error::NotInvertible(format!("rho = {r} at sample {k}")));
            }
            alpha.push(a);
            rho.push(r);
            theta.push(th);
        }
        let op = s0.op.eval_at(&theta).scale_by(|k| C64::new(1.0 / rho[k], 0.0));
        let remainder = s0.remainder.as_ref().map(|r| r.eval_at(&theta).scale_by(|k| C64::new(1.0 / rho[k], 0.0)));
        let shifted = |f: &TruncatedField| -> TruncatedField {
            let slices: Vec<Vec<C64>> = theta
                .iter()
                .zip(&rho)
                .map(|(th, r)| f.x_coeffs_at(th).into_iter().map(|v| v / r).collect())
                .collect();
            TruncatedField::from_x_slices(&slices, FieldShape::new(d, bx.l, f.shape.j), true)
        };
        let a3 = shifted(&s0.a3);
        let a1 = shifted(&s0.a1);
        let target = m3.cbrt().recip();
        let mut secular_defect: f64 = 0.0;
        for sl in a3.x_slices(nphi) {
            let v = secular(&sl, cfg.nx)?;
            secular_defect = secular_defect.max((v.cbrt().recip() - target).abs());
        }
        self.m3 = Some(m3);
        self.step1 = Some(Reparam {
            alpha: alpha.clone(),
            alpha_breve,
            rho,
            theta,
            secular_defect,
        });
        self.stages.push(Stage { index: 1, op, a3, a1, remainder });
        Ok(self)
    }

    /// Space diffeomorphism making the `d_x^3` coefficient constant.
    pub fn step2(mut self, cfg: &ReductionConfig) -> Result<Self> {
        self.expect_stage(1)?;
        let bx = self.bx();
        let (d, nphi) = (bx.d, bx.nphi());
        let m3 = self.m3.expect("set by step 1");
        let s1 = &self.stages[1];
        let cm = m3.cbrt();
        let jc = cfg.coeff_j;
        let mut slices = Vec::with_capacity(bx.n_samples());
        for sl in s1.a3.x_slices(nphi) {
            let vals: Vec<C64> = XSeries::new(sl)
                .to_grid(cfg.nx)
                .iter()
                .map(|v| C64::new(cm / v.re.cbrt() - 1.0, 0.0))
                .collect();
            let s = XSeries::from_grid(&vals, jc);
            let c: Vec<C64> = (-(jc as i64)..=jc as i64)
                .map(|j| if j == 0 { C64::new(0.0, 0.0) } else { s.get(j) / C64::new(0.0, TWO_PI * j as f64) })
                .collect();
            slices.push(c);
        }
        let shape = FieldShape::new(d, bx.l, jc);
        let breve = TruncatedField::from_x_slices(&slices, shape, true);
        let inv = invert_diffeo(&breve, shape, cfg.nx, 1e-15)?;
        let diffeo = DiffeoFamily { beta: inv.breve.clone(), breve, roundtrip: inv.roundtrip };
        let beta = &diffeo.beta;
        let flow = transport_flow_op(beta, 0.0, 1.0, &bx, cfg.flow)?;
        let flow_inv = flow.inverse()?;
        let op = conjugate_family(&s1.op, &flow, &flow_inv, &self.omega)?;
        let remainder = conjugate_opt(&s1.remainder, &flow, &flow_inv)?;
        let opt = EgorovOptions { out: shape, nx: cfg.nx, flow: cfg.flow, remainder: false };
        let init = [s1.a3.scale(-1.0), s1.a3.dx().scale(-2.0), s1.a1.scale(-1.0)];
        let e = egorov_expand(beta, &init, 3, 2, &bx, opt)?;
        let w = conjugate_omega_dphi(beta, &self.omega, 0, &bx, opt)?;
        let a3 = e.p[0].scale(-1.0);
        let a1 = e.p[2].add(&w.p[0]).scale(-1.0);
        let a3_defect = sup_on_grid(&a3.sub(&TruncatedField::constant(shape, m3)), nphi, cfg.nx);
        let a2_defect = sup_on_grid(&e.p[1], nphi, cfg.nx);
        self.step2 = Some(SpaceDiffeo { diffeo, flow, flow_inv, a3_defect, a2_defect });
        self.stages.push(Stage { index: 2, op, a3, a1, remainder });
        Ok(self)
    }

    /// `exp(b d_x^{-1})` removing the `x`-dependence of the first-order coefficient.
    pub fn step3(mut self, _cfg: &ReductionConfig) -> Result<Self> {
        self.expect_stage(2)?;
        let bx = self.bx();
        let m3 = self.m3.expect("set by step 1");
        let s2 = &self.stages[2];
        let mean = s2.a1.avg_x();
        let b = s2.a1.sub(&mean).dx_inv().scale(1.0 / (3.0 * m3));
        let g = quantize(&Symbol::term(b.clone(), Multiplier::Power(-1)), bx.clone())?;
        let map = g.expm()?;
        let map_inv = g.scale(C64::new(-1.0, 0.0)).expm()?;
        let op = conjugate_family(&s2.op, &map, &map_inv, &self.omega)?;
        let remainder = conjugate_opt(&s2.remainder, &map, &map_inv)?;
        let residual = b.dx().scale(3.0 * m3).sub(&s2.a1.sub(&mean)).max_abs();
        let a1 = mean.resize(FieldShape::new(bx.d, mean.shape.l, 0));
        let a3 = TruncatedField::constant(FieldShape::new(bx.d, 0, 0), m3);
        self.step3 = Some(Generated { b, map, map_inv, residual });
        self.stages.push(Stage { index: 3, op, a3, a1, remainder });
        Ok(self)
    }

    /// Translation `x -> x + b(phi)` removing the `phi`-dependence of the first-order coefficient.
    pub fn step4(mut self, cfg: &ReductionConfig) -> Result<Self> {
        self.expect_stage(3)?;
        let bx = self.bx();
        check_dioph(&self.omega, cfg, bx.l)?;
        let nphi = bx.nphi();
        let m3 = self.m3.expect("set by step 1");
        let s3 = &self.stages[3];
        let m1 = s3.a1.mean().re;
        let dev = s3.a1.sub(&TruncatedField::constant(s3.a1.shape, m1));
        let b = dev.omega_dphi_inv(&self.omega, cfg.dioph.gamma)?.scale(-1.0);
        let wb = b.omega_dphi(&self.omega);
        let residual = wb.add(&dev).max_abs();
        let bs = sample_values(&b, nphi);
        let ws = sample_values(&wb, nphi);
        let modes = &bx.rows;
        let diag = |f: &dyn Fn(i64) -> C64| -> CMat {
            let mut m = CMat::zeros(modes.len(), modes.len());
            for (i, &j) in modes.iter().enumerate() {
                m[(i, i)] = f(j);
            }
            m
        };
        let map = QPOperator::from_samples(bx.clone(), |k, _| diag(&|j| C64::from_polar(1.0, TWO_PI * j as f64 * bs[k])));
        let map_inv =
            QPOperator::from_samples(bx.clone(), |k, _| diag(&|j| C64::from_polar(1.0, -TWO_PI * j as f64 * bs[k])));
        let shift = QPOperator::from_samples(bx.clone(), |k, _| diag(&|j| C64::new(0.0, -TWO_PI * j as f64 * ws[k])));
        let op = map.mul(&s3.op)?.mul(&map_inv)?.add(&shift)?;
        let remainder = conjugate_opt(&s3.remainder, &map, &map_inv)?;
        let shape0 = FieldShape::new(bx.d, 0, 0);
        self.m1 = Some(m1);
        self.step4 = Some(Generated { b, map, map_inv, residual });
        self.stages.push(Stage {
            index: 4,
            op,
            a3: TruncatedField::constant(shape0, m3),
            a1: TruncatedField::constant(shape0, m1),
            remainder,
        });
        Ok(self)
    }

    /// Product `Phi4 Phi3 Phi2` of the recorded space conjugators and its inverse.
    pub fn conjugator(&self) -> Result<(QPOperator, QPOperator)> {
        let (Some(s2), Some(s3), Some(s4)) = (&self.step2, &self.step3, &self.step4) else {
            return Err(Error::Config("pipeline not complete".into()));
        };
        let u = s4.map.mul(&s3.map)?.mul(&s2.flow)?;
        let u_inv = s2.flow_inv.mul(&s3.map_inv)?.mul(&s4.map_inv)?;
        Ok((u, u_inv))
    }

    /// Stage-4 operator rebuilt from the stage-0 operator with the recorded
    /// reparametrisation and the product conjugator in one step.
    pub fn replay(&self) -> Result<QPOperator> {
        let r = self.step1.as_ref().ok_or_else(|| Error::Config("pipeline not complete".into()))?;
        let a1 = self.stages[0].op.eval_at(&r.theta).scale_by(|k| C64::new(1.0 / r.rho[k], 0.0));
        let (u, u_inv) = self.conjugator()?;
        conjugate_family(&a1, &u, &u_inv, &self.omega)
    }

    /// `max |A_{rc} - B_{rc}| / <c>^3` between the replayed and stepwise stage-4 operators.
    pub fn replay_error(&self) -> Result<f64> {
        let a = self.replay()?;
        Ok(weighted_difference(&a, &self.last().op, 3))
    }

    /// Sup-norm defects of the claims on the final stage, measured on the matrix.
    pub fn final_coefficient_defects(&self, opt: &ExtractOptions) -> Result<CoefficientDefects> {
        let m3 = self.m3.ok_or_else(|| Error::Config("pipeline not complete".into()))?;
        let m1 = self.m1.ok_or_else(|| Error::Config("pipeline not complete".into()))?;
        let ex = extract_symbol(&self.last().op, opt)?;
        Ok(CoefficientDefects {
            a3: ex.constant_defect(3, -m3),
            a2: ex.constant_defect(2, 0.0),
            a1: ex.constant_defect(1, -m1),
            fit_residual: ex.residual,
        })
    }
}

/// Deviations of the extracted top coefficients from their claimed constants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientDefects {
    pub a3: f64,
    pub a2: f64,
    pub a1: f64,
    pub fit_residual: f64,
}

/// `max |A_{rc} - B_{rc}| / <c>^w` over all samples.
pub fn weighted_difference(a: &QPOperator, b: &QPOperator, w: i32) -> f64 {
    let cols = &a.bx.cols;
    let mut worst: f64 = 0.0;
    for (sa, sb) in a.samples.iter().zip(&b.samples) {
        for (ci, &c) in cols.iter().enumerate() {
            let scale = (c.abs().max(1) as f64).powi(w);
            for ri in 0..sa.nrows() {
                worst = worst.max((sa[(ri, ci)] - sb[(ri, ci)]).norm() / scale);
            }
        }
    }
    worst
}

/// Window of the symbol fit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractOptions {
    /// Columns `lo <= |c| <= hi` are fitted.
    pub lo: i64,
    pub hi: i64,
    /// Fitted orders `top, top-1, ..., bottom`.
    pub top: i32,
    pub bottom: i32,
    /// Offsets `|r - c| <= band`.
    pub band: usize,
}

impl ExtractOptions {
    /// Fit over `[J/4, J/2]` with orders `3..=-3`.
    pub fn for_box(jmax: usize) -> Self {
        ExtractOptions { lo: (jmax / 4) as i64, hi: (jmax / 2) as i64, top: 3, bottom: -3, band: (jmax / 4).max(1) }
    }
}

/// Symbol `sum_m a_m(phi, x) d_x^m` fitted to the columns of an operator.
#[derive(Clone, Debug)]
pub struct ExtractedSymbol {
    pub top: i32,
    /// `coeffs[i]` multiplies `d_x^{top - i}`.
    pub coeffs: Vec<TruncatedField>,
    /// Largest relative least-squares residual.
    pub residual: f64,
}

impl ExtractedSymbol {
    pub fn coeff(&self, m: i32) -> Option<&TruncatedField> {
        let i = self.top - m;
        if i < 0 {
            None
        } else {
            self.coeffs.get(i as usize)
        }
    }

    /// `sum_j |a_{m,j}(phi_k) - v delta_{j0}|`, maximised over the angle samples.
    pub fn constant_defect(&self, m: i32, v: f64) -> f64 {
        let Some(f) = self.coeff(m) else { return f64::INFINITY };
        let nphi = if f.shape.d == 0 { 1 } else { 2 * f.shape.l + 1 };
        let jc = f.shape.j;
        f.x_slices(nphi)
            .iter()
            .map(|s| {
                s.iter()
                    .enumerate()
                    .map(|(i, z)| if i == jc { (z - v).norm() } else { z.norm() })
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }
}

/// Least-squares fit of `A_{c+k, c} = sum_m a_m(phi, k) (i 2 pi c)^m` over the
/// fitting window, per angle sample and offset `k`.
pub fn extract_symbol(a: &QPOperator, opt: &ExtractOptions) -> Result<ExtractedSymbol> {
    if opt.top < opt.bottom || opt.lo < 1 || opt.hi < opt.lo {
        return Err(Error::Config("empty fitting window".into()));
    }
    let bx = &a.bx;
    let orders: Vec<i32> = (opt.bottom..=opt.top).rev().collect();
    let scale = TWO_PI * opt.hi as f64;
    let band = opt.band as i64;
    let nb = 2 * opt.band + 1;
    let mut per_order: Vec<Vec<Vec<C64>>> = vec![vec![vec![C64::new(0.0, 0.0); nb]; a.samples.len()]; orders.len()];
    let mut residual: f64 = 0.0;
    for (k, s) in a.samples.iter().enumerate() {
        for off in -band..=band {
            let mut pts = Vec::new();
            for (ci, &c) in bx.cols.iter().enumerate() {
                if c.abs() < opt.lo || c.abs() > opt.hi {
                    continue;
                }
                if let Some(ri) = bx.row_index(c + off) {
                    pts.push((c, s[(ri, ci)]));
                }
            }
            if pts.len() < orders.len() {
                return Err(Error::Config(format!("too few columns to fit offset {off}")));
            }
            let mut m = CMat::zeros(pts.len(), orders.len());
            let mut rhs = linalg::CVec::zeros(pts.len());
            for (p, (c, v)) in pts.iter().enumerate() {
                let z = C64::new(0.0, TWO_PI * *c as f64 / scale);
                for (q, &o) in orders.iter().enumerate() {
                    m[(p, q)] = z.powi(o);
                }
                rhs[p] = *v;
            }
            let x = linalg::lstsq(&m, &rhs)?;
            let res = (&m * &x - &rhs).norm() / rhs.norm().max(1e-300);
            if rhs.norm() > 0.0 {
                residual = residual.max(res);
            }
            for (q, &o) in orders.iter().enumerate() {
                per_order[q][k][(off + band) as usize] = x[q] * scale.powi(-o);
            }
        }
    }
    let shape = FieldShape::new(bx.d, bx.l, opt.band);
    let coeffs = per_order.iter().map(|sl| TruncatedField::from_x_slices(sl, shape, true)).collect();
    Ok(ExtractedSymbol { top: opt.top, coeffs, residual })
}

/// Runs the four steps.
pub fn reduce(
    input: &ReductionInput,
    omega: &[f64],
    freq: &KdvFrequencyModel,
    nbox: &NormalBox,
    cfg: &ReductionConfig,
) -> Result<ReducedOperator> {
    assemble_l0(input, omega, freq, nbox, cfg)?.step1(cfg)?.step2(cfg)?.step3(cfg)?.step4(cfg)
}

/// `a3 = -d^2 f / d zeta1^2` by central differences at a state `(u, u_x, u_xx)`.
pub fn a3_from_nonlinearity(f: impl Fn(f64, f64, f64, f64) -> f64, x: f64, state: [f64; 3], h: f64) -> f64 {
    let [z0, z1, z2] = state;
    -(f(x, z0, z1 + h, z2) - 2.0 * f(x, z0, z1, z2) + f(x, z0, z1 - h, z2)) / (h * h)
}
