//! Transport flows generated by `d_x o b`, their characteristics and the
//! Egorov expansion of conjugated pseudo-differential operators.

use crate::algebra::{quantize, OpBox, QPOperator, Symbol};
use crate::error::{Error, Result};
use crate::fft;
use crate::jet::Jet;
use crate::linalg::{self, CMat};
use crate::quad::GaussLegendre;
use crate::spaces::{FieldShape, TruncatedField, XSeries};
use num_complex::Complex64 as C64;
use std::f64::consts::PI;

const TWO_PI: f64 = 2.0 * PI;

/// A family of diffeomorphisms `x -> x + beta(phi, x)` and its inverse
/// `y -> y + breve(phi, y)`.
#[derive(Clone, Debug)]
pub struct DiffeoFamily {
    pub beta: TruncatedField,
    pub breve: TruncatedField,
    /// Largest round-trip defect on the inversion grid.
    pub roundtrip: f64,
}

/// Solves `x + tau beta(x) = y` by Newton's method.
pub fn solve_shift(beta: &XSeries, tau: f64, y: f64, tol: f64) -> Result<f64> {
    let mut x = y - tau * beta.eval_real(y, 0);
    for _ in 0..60 {
        let d = beta.derivatives(x, 1);
        let f = x + tau * d[0] - y;
        let fp = 1.0 + tau * d[1];
        if fp <= 0.0 {
            return Err(Error::NotInvertible(format!("1 + tau beta_x = {fp} at x = {x}")));
        }
        let dx = f / fp;
        x -= dx;
        if dx.abs() <= tol {
            return Ok(x);
        }
    }
    Err(Error::NotInvertible(format!("Newton did not converge at y = {y}")))
}

fn slices_of(f: &TruncatedField, nphi: usize) -> Vec<XSeries> {
    f.x_slices(nphi).into_iter().map(XSeries::new).collect()
}

fn nphi_for(shape: &FieldShape) -> usize {
    if shape.d == 0 {
        1
    } else {
        2 * shape.l + 1
    }
}

/// Inverts `x + beta(phi, x)` for every angle sample, storing `breve` in `out`.
pub fn invert_diffeo(beta: &TruncatedField, out: FieldShape, nx: usize, tol: f64) -> Result<DiffeoFamily> {
    let nphi = nphi_for(&out.max(&FieldShape { d: beta.shape.d, l: beta.shape.l, j: 0 }));
    let slices = slices_of(beta, nphi);
    let mut out_slices = Vec::with_capacity(slices.len());
    let mut roundtrip: f64 = 0.0;
    for b in &slices {
        let mut sup: f64 = 0.0;
        for m in 0..nx {
            sup = sup.max(b.eval_real(m as f64 / nx as f64, 1).abs());
        }
        if sup >= 1.0 {
            return Err(Error::NotInvertible(format!("sup |beta_x| = {sup} >= 1")));
        }
        let mut vals = Vec::with_capacity(nx);
        for m in 0..nx {
            let y = m as f64 / nx as f64;
            let x = solve_shift(b, 1.0, y, tol)?;
            vals.push(C64::new(x - y, 0.0));
        }
        let br = XSeries::from_grid(&vals, out.j);
        for m in 0..nx {
            let x = m as f64 / nx as f64;
            let y = x + b.eval_real(x, 0);
            roundtrip = roundtrip.max((y + br.eval_real(y, 0) - x).abs());
        }
        out_slices.push(br.c);
    }
    let l = if beta.shape.d == 0 { 0 } else { (nphi - 1) / 2 };
    let shape = FieldShape::new(beta.shape.d, l.max(out.l).min(l), out.j);
    let breve = TruncatedField::from_x_slices(&out_slices, shape, true);
    Ok(DiffeoFamily { beta: beta.clone(), breve, roundtrip })
}

/// Characteristic `gamma^{tau0, tau}(x) = x + tau0 beta(x) + breve(tau, x + tau0 beta(x))`,
/// the position at time `tau` of the curve through `x` at time `tau0`.
pub fn characteristic(beta: &XSeries, tau0: f64, tau: f64, x: f64) -> Result<f64> {
    let y = x + tau0 * beta.eval_real(x, 0);
    solve_shift(beta, tau, y, 1e-15)
}

/// Time integrator for transport flows.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Integrator {
    /// Fourth-order Magnus with two Gauss points; exactly symplectic.
    Magnus4,
    /// Classical Runge-Kutta.
    Rk4,
}

#[derive(Clone, Copy, Debug)]
pub struct FlowOptions {
    pub steps: usize,
    pub integrator: Integrator,
    /// Grid size used for the coefficient `b`.
    pub nx: usize,
}

impl Default for FlowOptions {
    fn default() -> Self {
        FlowOptions { steps: 32, integrator: Integrator::Magnus4, nx: 0 }
    }
}

/// Generator `B(t) = Pi (d_x o b(t))` on a square box, with
/// `b(t) = beta / (1 + t beta_x)`.
pub fn generator(beta: &XSeries, t: f64, modes: &[i64], nx: usize) -> CMat {
    let vals: Vec<C64> = (0..nx)
        .map(|m| {
            let x = m as f64 / nx as f64;
            let d = beta.derivatives(x, 1);
            C64::new(d[0] / (1.0 + t * d[1]), 0.0)
        })
        .collect();
    let span = modes.iter().map(|j| j.unsigned_abs() as usize).max().unwrap_or(0) * 2;
    let b = XSeries::from_grid(&vals, span.min((nx - 1) / 2));
    let n = modes.len();
    CMat::from_fn(n, n, |r, c| {
        let (jr, jc) = (modes[r], modes[c]);
        C64::new(0.0, TWO_PI * jr as f64) * b.get(jr - jc)
    })
}

fn flow_matrix(beta: &XSeries, tau0: f64, tau: f64, modes: &[i64], opt: FlowOptions) -> Result<CMat> {
    let n = modes.len();
    let nx = if opt.nx == 0 { fft::odd_at_least(4 * (modes.iter().map(|j| j.unsigned_abs() as usize).max().unwrap_or(0)) + 33) } else { opt.nx };
    let steps = opt.steps.max(1);
    let h = (tau - tau0) / steps as f64;
    let mut phi = CMat::identity(n, n);
    let s3 = 3f64.sqrt();
    for k in 0..steps {
        let t = tau0 + k as f64 * h;
        match opt.integrator {
            Integrator::Magnus4 => {
                let b1 = generator(beta, t + h * (0.5 - s3 / 6.0), modes, nx);
                let b2 = generator(beta, t + h * (0.5 + s3 / 6.0), modes, nx);
                let comm = &b2 * &b1 - &b1 * &b2;
                let omega = (&b1 + &b2) * C64::new(0.5 * h, 0.0) + comm * C64::new(s3 * h * h / 12.0, 0.0);
                phi = linalg::expm(&omega)? * phi;
            }
            Integrator::Rk4 => {
                let g0 = generator(beta, t, modes, nx);
                let gm = generator(beta, t + 0.5 * h, modes, nx);
                let g1 = generator(beta, t + h, modes, nx);
                let hc = C64::new(h, 0.0);
                let k1 = &g0 * &phi;
                let k2 = &gm * (&phi + &k1 * (hc * 0.5));
                let k3 = &gm * (&phi + &k2 * (hc * 0.5));
                let k4 = &g1 * (&phi + &k3 * hc);
                phi += (k1 + k2 * C64::new(2.0, 0.0) + k3 * C64::new(2.0, 0.0) + k4) * (hc / 6.0);
            }
        }
    }
    Ok(phi)
}

/// Flow `Phi(tau0 -> tau)` of `d_t Phi = B(t) Phi` on the (square) box,
/// one matrix per angle sample.
pub fn transport_flow_op(beta: &TruncatedField, tau0: f64, tau: f64, bx: &OpBox, opt: FlowOptions) -> Result<QPOperator> {
    if !bx.is_square() {
        return Err(Error::DimensionMismatch("transport flow needs a square box".into()));
    }
    if beta.shape.d != bx.d {
        return Err(Error::DimensionMismatch("angle dimension".into()));
    }
    let slices = slices_of(beta, bx.nphi());
    let samples = slices
        .iter()
        .map(|b| flow_matrix(b, tau0, tau, &bx.cols, opt))
        .collect::<Result<Vec<_>>>()?;
    Ok(QPOperator { bx: bx.clone(), samples })
}

/// `W(u, v) = (d_x^{-1} u, v)` for coefficient vectors on `modes`.
pub fn w_form(u: &[C64], v: &[C64], modes: &[i64]) -> C64 {
    modes
        .iter()
        .zip(u)
        .filter(|(&j, _)| j != 0)
        .filter_map(|(&j, a)| modes.iter().position(|&m| m == -j).map(|k| a * v[k] / C64::new(0.0, TWO_PI * j as f64)))
        .sum()
}

/// `max_k |W(Phi_k u, Phi_k v) - W(u, v)|` over the angle samples of a flow.
pub fn flow_symplectic_defect(flow: &QPOperator, u: &[C64], v: &[C64]) -> Result<f64> {
    let modes = &flow.bx.cols;
    if u.len() != modes.len() || v.len() != modes.len() || !flow.bx.is_square() {
        return Err(Error::DimensionMismatch("vectors do not match the flow box".into()));
    }
    let w0 = w_form(u, v, modes);
    let (uu, vv) = (nalgebra::DVector::from_column_slice(u), nalgebra::DVector::from_column_slice(v));
    Ok(flow
        .samples
        .iter()
        .map(|m| (w_form((m * &uu).as_slice(), (m * &vv).as_slice(), modes) - w0).norm())
        .fold(0.0, f64::max))
}

/// Matrix of `u -> (1 + beta_x) u(x + beta)` on a box, by quadrature on a fine grid.
pub fn exact_shift_matrix(beta: &XSeries, rows: &[i64], cols: &[i64], nx: usize) -> CMat {
    let pts: Vec<(f64, f64)> = (0..nx)
        .map(|m| {
            let x = m as f64 / nx as f64;
            let d = beta.derivatives(x, 1);
            (x + d[0], 1.0 + d[1])
        })
        .collect();
    let mut out = CMat::zeros(rows.len(), cols.len());
    let jmax = rows.iter().map(|j| j.unsigned_abs() as usize).max().unwrap_or(0);
    for (ci, &c) in cols.iter().enumerate() {
        let vals: Vec<C64> = pts.iter().map(|(y, w)| C64::from_polar(*w, TWO_PI * c as f64 * y)).collect();
        let s = XSeries::from_grid(&vals, jmax);
        for (ri, &r) in rows.iter().enumerate() {
            out[(ri, ci)] = s.get(r);
        }
    }
    out
}

/// `Phi A Phi^{-1}` on `bx` for the time-one flow, built from the closed-form
/// weighted shifts of `beta` and of its inverse on a box padded by `pad` modes.
pub fn exact_conjugate(beta: &TruncatedField, a: &Symbol, bx: &OpBox, pad: i64, nx: usize) -> Result<QPOperator> {
    if beta.shape.d != bx.d {
        return Err(Error::DimensionMismatch("angle dimension".into()));
    }
    let jb = bx.rows.iter().chain(&bx.cols).map(|j| j.abs()).max().unwrap_or(0);
    let mid: Vec<i64> = (-(jb + pad)..=(jb + pad)).collect();
    let inv = invert_diffeo(beta, FieldShape::new(beta.shape.d, bx.l, (nx / 3) as usize), nx, 1e-15)?;
    let slices = slices_of(beta, bx.nphi());
    let breves = slices_of(&inv.breve, bx.nphi());
    let a_mid = quantize(a, OpBox::square(bx.d, bx.l, mid.clone()))?;
    let samples = slices
        .iter()
        .zip(&breves)
        .zip(&a_mid.samples)
        .map(|((b, br), am)| {
            let phi = exact_shift_matrix(b, &bx.rows, &mid, nx);
            let phi_inv = exact_shift_matrix(br, &mid, &bx.cols, nx);
            &phi * am * phi_inv
        })
        .collect();
    Ok(QPOperator { bx: bx.clone(), samples })
}

/// Coefficients `p_{m-i}(1, .)`, `i = 0..N`, of `Phi A Phi^{-1}` for the
/// time-one flow, together with the exact remainder on the box.
#[derive(Clone, Debug)]
pub struct EgorovExpansion {
    pub top: i32,
    /// `p[i]` multiplies `d_x^{top - i}`.
    pub p: Vec<TruncatedField>,
    pub remainder: Option<QPOperator>,
}

impl EgorovExpansion {
    pub fn symbol(&self) -> Symbol {
        Symbol::homogeneous(self.top, self.p.clone())
    }
}

/// Source of the transport hierarchy.
enum Source<'a> {
    /// Initial data `a_{m-i}` at time zero.
    Initial(&'a [TruncatedField]),
    /// Forcing `-omega.d_phi B` with zero initial data.
    OmegaForcing(&'a [f64]),
}

struct SliceData {
    beta: XSeries,
    gamma: Option<XSeries>,
    init: Vec<XSeries>,
}

fn lagrangian_levels(
    sd: &SliceData,
    top: i32,
    n: usize,
    x: f64,
    gl: &GaussLegendre,
) -> Result<Vec<f64>> {
    let beta = &sd.beta;
    let y = x + beta.eval_real(x, 0);
    let nodes = &gl.nodes;
    let q = nodes.len();
    let order = n + 2;
    // Per node: Jacobian, derivatives of b up to n+1, forcing values.
    let mut jac = vec![0.0; q];
    let mut db = vec![vec![0.0; n + 2]; q];
    let mut force = vec![[0.0f64; 2]; q];
    for (k, &s) in nodes.iter().enumerate() {
        let xs = solve_shift(beta, s, y, 1e-15)?;
        let bj = Jet::from_derivatives(&beta.derivatives(xs, order));
        let bx = Jet { c: (1..=order).map(|i| bj.c[i] * i as f64).collect() };
        let denom = bx.scale(s).add_scalar(1.0);
        let b = Jet { c: bj.c[..order].to_vec() }.div(&denom);
        for (i, v) in db[k].iter_mut().enumerate() {
            *v = b.derivative(i);
        }
        jac[k] = 1.0 / denom.c[0];
        if let Some(g) = &sd.gamma {
            let gj = Jet::from_derivatives(&g.derivatives(xs, order));
            let gx = Jet { c: (1..=order).map(|i| gj.c[i] * i as f64).collect() };
            let g0 = Jet { c: gj.c[..order].to_vec() };
            let bb = Jet { c: bj.c[..order].to_vec() };
            let d2 = &denom * &denom;
            let wb = &g0.div(&denom) - &(&bb * &gx).scale(s).div(&d2);
            force[k] = [-wb.derivative(0), -wb.derivative(1)];
        }
    }
    let (j1, _) = {
        let d = beta.derivatives(x, 1);
        (1.0 + d[1], ())
    };
    let j_end = 1.0 / j1;
    let mut levels_nodes: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    let mut out = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let k = top - i as i32;
        let p0 = match &sd.gamma {
            None => sd.init.get(i).map(|a| a.eval_real(y, 0)).unwrap_or(0.0),
            Some(_) => 0.0,
        };
        let integrand: Vec<f64> = (0..q)
            .map(|r| {
                let mut g = 0.0;
                for (ip, lv) in levels_nodes.iter().enumerate() {
                    let kp = top - ip as i32;
                    let dn = i - ip + 1;
                    g -= crate::algebra::binom(kp as i64 + 1, dn) * db[r][dn] * lv[r];
                }
                if sd.gamma.is_some() && i < 2 {
                    g += force[r][i];
                }
                jac[r].powi(-k) * g
            })
            .collect();
        let at_nodes: Vec<f64> = (0..q)
            .map(|qq| {
                let intg: f64 = gl.integ[qq].iter().zip(&integrand).map(|(a, b)| a * b).sum();
                jac[qq].powi(k) * (p0 + intg)
            })
            .collect();
        let total: f64 = gl.weights.iter().zip(&integrand).map(|(a, b)| a * b).sum();
        out.push(j_end.powi(k) * (p0 + total));
        levels_nodes.push(at_nodes);
    }
    Ok(out)
}

fn expand(
    beta: &TruncatedField,
    source: Source,
    top: i32,
    n: usize,
    out: FieldShape,
    nx: usize,
) -> Result<Vec<TruncatedField>> {
    let nphi = nphi_for(&out).max(nphi_for(&FieldShape::new(beta.shape.d, beta.shape.l, 0)));
    let nphi = if beta.shape.d == 0 { 1 } else { nphi };
    let betas = slices_of(beta, nphi);
    let gammas: Option<Vec<XSeries>> = match &source {
        Source::OmegaForcing(w) => Some(slices_of(&beta.omega_dphi(w), nphi)),
        Source::Initial(_) => None,
    };
    let inits: Vec<Vec<XSeries>> = match &source {
        Source::Initial(a) => {
            let per: Vec<Vec<XSeries>> = a.iter().map(|f| slices_of(f, nphi)).collect();
            (0..betas.len()).map(|k| per.iter().map(|v| v[k].clone()).collect()).collect()
        }
        Source::OmegaForcing(_) => vec![vec![]; betas.len()],
    };
    let gl = GaussLegendre::new(16);
    let mut per_level: Vec<Vec<Vec<C64>>> = vec![Vec::with_capacity(betas.len()); n + 1];
    for (k, b) in betas.iter().enumerate() {
        let sd = SliceData { beta: b.clone(), gamma: gammas.as_ref().map(|g| g[k].clone()), init: inits[k].clone() };
        let mut grid = vec![vec![C64::new(0.0, 0.0); nx]; n + 1];
        for m in 0..nx {
            let x = m as f64 / nx as f64;
            let lv = lagrangian_levels(&sd, top, n, x, &gl)?;
            for (i, v) in lv.into_iter().enumerate() {
                grid[i][m] = C64::new(v, 0.0);
            }
        }
        for i in 0..=n {
            per_level[i].push(XSeries::from_grid(&grid[i], out.j).c);
        }
    }
    let l = if beta.shape.d == 0 { 0 } else { ((nphi - 1) / 2).min(out.l.max(beta.shape.l)) };
    let shape = FieldShape::new(beta.shape.d, l, out.j);
    Ok(per_level.iter().map(|s| TruncatedField::from_x_slices(s, shape, true)).collect())
}

/// Settings for the Egorov routines.
#[derive(Clone, Copy, Debug)]
pub struct EgorovOptions {
    /// Coefficient box of the expansion.
    pub out: FieldShape,
    /// Grid size for the characteristic sampling.
    pub nx: usize,
    pub flow: FlowOptions,
    /// Whether to compute the remainder matrix on the box.
    pub remainder: bool,
}

/// Egorov expansion of `Phi (sum_i a_{m-i} d^{m-i}) Phi^{-1}` with `a[i]` the
/// coefficient of `d^{m-i}`; levels `0..=n`.
pub fn egorov_expand(
    beta: &TruncatedField,
    a: &[TruncatedField],
    m: i32,
    n: usize,
    bx: &OpBox,
    opt: EgorovOptions,
) -> Result<EgorovExpansion> {
    if a.iter().any(|f| f.shape.d != beta.shape.d) {
        return Err(Error::DimensionMismatch("angle dimension".into()));
    }
    let p = expand(beta, Source::Initial(a), m, n, opt.out, opt.nx)?;
    let remainder = if opt.remainder {
        let phi = transport_flow_op(beta, 0.0, 1.0, bx, opt.flow)?;
        let a_op = quantize(&Symbol::homogeneous(m, a.to_vec()), bx.clone())?;
        let (conj, _) = a_op.conjugate(&phi)?;
        let q = quantize(&Symbol::homogeneous(m, p.clone()), bx.clone())?;
        Some(conj.sub(&q)?)
    } else {
        None
    };
    Ok(EgorovExpansion { top: m, p, remainder })
}

/// Expansion of `Phi omega.d_phi Phi^{-1} - omega.d_phi = sum_i p_{1-i} d^{1-i} + R`.
/// The remainder uses the spectral angle derivative of `Phi^{-1}`.
pub fn conjugate_omega_dphi(
    beta: &TruncatedField,
    omega: &[f64],
    n: usize,
    bx: &OpBox,
    opt: EgorovOptions,
) -> Result<EgorovExpansion> {
    if omega.len() != beta.shape.d {
        return Err(Error::DimensionMismatch("frequency length".into()));
    }
    let p = expand(beta, Source::OmegaForcing(omega), 1, n, opt.out, opt.nx)?;
    let remainder = if opt.remainder {
        let phi = transport_flow_op(beta, 0.0, 1.0, bx, opt.flow)?;
        let inv = phi.inverse()?;
        let full = phi.mul(&inv.omega_dphi(omega))?;
        let q = quantize(&Symbol::homogeneous(1, p.clone()), bx.clone())?;
        Some(full.sub(&q)?)
    } else {
        None
    };
    Ok(EgorovExpansion { top: 1, p, remainder })
}

/// Conjugation of a constant-coefficient multiplier `Q = sum_i c_i d^{m-i}`:
/// returns `alpha_{m-i} = p_{m-i} - c_i` (the correction `Q_Phi`).
pub fn conjugate_multiplier(
    beta: &TruncatedField,
    c: &[f64],
    m: i32,
    n: usize,
    bx: &OpBox,
    opt: EgorovOptions,
) -> Result<EgorovExpansion> {
    let shape = FieldShape::new(beta.shape.d, 0, 0);
    let init: Vec<TruncatedField> = c.iter().map(|v| TruncatedField::constant(shape, *v)).collect();
    let mut e = egorov_expand(beta, &init, m, n, bx, opt)?;
    for (i, p) in e.p.iter_mut().enumerate() {
        if let Some(v) = c.get(i) {
            *p = p.sub(&TruncatedField::constant(shape, *v)).resize(p.shape);
        }
    }
    if let Some(r) = e.remainder.take() {
        e.remainder = Some(r);
    }
    Ok(e)
}

/// Largest relative column norm of `R e_j` over `j` in `[lo, hi]`, and the
/// fitted power-law exponent of those norms.
pub fn remainder_decay(r: &QPOperator, lo: i64, hi: i64) -> (Vec<(i64, f64)>, f64) {
    let mut pts = Vec::new();
    for j in lo..=hi {
        if let Some(c) = r.bx.col_index(j) {
            let nrm = r
                .samples
                .iter()
                .map(|s| s.column(c).iter().map(|z| z.norm_sqr()).sum::<f64>())
                .sum::<f64>()
                .sqrt();
            pts.push((j, nrm));
        }
    }
    let xs: Vec<f64> = pts.iter().map(|(j, _)| (*j as f64).ln()).collect();
    let ys: Vec<f64> = pts.iter().map(|(_, v)| v.max(1e-300).ln()).collect();
    (pts, linalg::fit_slope(&xs, &ys))
}

/// Column norms of a remainder over `[lo, hi]` and their fitted decay exponent.
#[derive(Clone, Debug)]
pub struct RemainderOrder {
    /// `(j, |R e_j|, |A e_j|)`.
    pub points: Vec<(i64, f64, f64)>,
    /// Exponent fitted over the columns above the floor; `None` when every
    /// column is below it.
    pub slope: Option<f64>,
    pub resolved: usize,
}

impl RemainderOrder {
    /// True when the remainder is of order at most `bound`.
    pub fn within(&self, bound: f64) -> bool {
        self.slope.map_or(true, |s| s <= bound)
    }
}

/// Decay exponent of `|R e_j|`, ignoring columns with `|R e_j| <= floor |A e_j|`.
pub fn remainder_order(r: &QPOperator, a: &QPOperator, lo: i64, hi: i64, floor: f64) -> RemainderOrder {
    let (pr, _) = remainder_decay(r, lo, hi);
    let (pa, _) = remainder_decay(a, lo, hi);
    let points: Vec<(i64, f64, f64)> = pr.iter().zip(&pa).map(|((j, x), (_, y))| (*j, *x, *y)).collect();
    let kept: Vec<&(i64, f64, f64)> = points.iter().filter(|(_, x, y)| *x > floor * y).collect();
    let slope = if kept.len() >= 2 {
        let xs: Vec<f64> = kept.iter().map(|p| (p.0 as f64).ln()).collect();
        let ys: Vec<f64> = kept.iter().map(|p| p.1.ln()).collect();
        Some(linalg::fit_slope(&xs, &ys))
    } else {
        None
    };
    RemainderOrder { resolved: kept.len(), points, slope }
}


#[cfg(test)]
mod egorov_tests {
    use super::*;

    fn sine(amp: f64) -> TruncatedField {
        let mut b = TruncatedField::zeros(FieldShape::new(0, 0, 1), true);
        b.set(&[], 1, C64::new(0.0, -amp / 2.0));
        b.set(&[], -1, C64::new(0.0, amp / 2.0));
        b
    }

    fn coefficient() -> TruncatedField {
        let mut a = TruncatedField::constant(FieldShape::new(0, 0, 1), 1.0);
        a.set(&[], 1, C64::new(0.1, 0.0));
        a.set(&[], -1, C64::new(0.1, 0.0));
        a
    }

    fn opts(j: usize) -> EgorovOptions {
        EgorovOptions { out: FieldShape::new(0, 0, j), nx: 4 * j, flow: FlowOptions::default(), remainder: false }
    }

    #[test]
    fn principal_coefficient_is_transported() {
        let b = sine(0.05);
        let a = coefficient();
        let e = egorov_expand(&b, &[a.clone()], 3, 0, &OpBox::square(0, 0, vec![0]), opts(48)).unwrap();
        let bs = XSeries::new(b.coeffs.clone());
        for m in 0..50 {
            let x = m as f64 / 50.0;
            let d = bs.derivatives(x, 1);
            let want = a.eval(&[], x + d[0]).re / (1.0 + d[1]).powi(3);
            let got = e.p[0].eval(&[], x).re;
            assert!((got - want).abs() < 1e-10, "{got} {want}");
        }
    }

    #[test]
    fn remainder_order_drops_with_each_term() {
        let b = sine(0.05);
        let a = coefficient();
        let bx = OpBox::square(0, 0, (-64..=64).collect());
        let sym = Symbol::homogeneous(3, vec![a.clone()]);
        let conj = exact_conjugate(&b, &sym, &bx, 128, 1024).unwrap();
        let a_op = quantize(&sym, bx.clone()).unwrap();
        let z = TruncatedField::zeros(a.shape, true);
        for n in 0..=3 {
            let mut coeffs = vec![a.clone()];
            coeffs.resize(n + 1, z.clone());
            let e = egorov_expand(&b, &coeffs, 3, n, &bx, opts(64)).unwrap();
            let r = conj.sub(&quantize(&e.symbol(), bx.clone()).unwrap()).unwrap();
            let o = remainder_order(&r, &a_op, 8, 48, 1e-11);
            match n {
                3 => assert!(o.slope.is_none(), "{o:?}"),
                _ => assert!((o.slope.unwrap() - (2 - n as i32) as f64).abs() < 0.02, "{o:?}"),
            }
        }
    }

    #[test]
    fn smoothing_tail_leaves_order_minus_one() {
        let b = sine(0.05);
        let a = coefficient();
        let one = TruncatedField::constant(a.shape, 1.0);
        let z = TruncatedField::zeros(a.shape, true);
        let coeffs = vec![a, z.clone(), z.clone(), z, one];
        let bx = OpBox::square(0, 0, (-64..=64).collect());
        let sym = Symbol::homogeneous(3, coeffs.clone());
        let conj = exact_conjugate(&b, &sym, &bx, 128, 1024).unwrap();
        let e = egorov_expand(&b, &coeffs, 3, 3, &bx, opts(64)).unwrap();
        let r = conj.sub(&quantize(&e.symbol(), bx.clone()).unwrap()).unwrap();
        let o = remainder_order(&r, &quantize(&sym, bx).unwrap(), 8, 48, 1e-11);
        assert!((o.slope.unwrap() + 1.0).abs() < 0.05, "{o:?}");
    }

    #[test]
    fn galerkin_flow_agrees_with_exact_conjugation() {
        let b = sine(0.005);
        let a = coefficient();
        let bx = OpBox::square(0, 0, (-72..=72).collect());
        let sym = Symbol::homogeneous(3, vec![a]);
        let exact = exact_conjugate(&b, &sym, &bx, 64, 512).unwrap();
        let flow = transport_flow_op(&b, 0.0, 1.0, &bx, FlowOptions::default()).unwrap();
        let (galerkin, _) = quantize(&sym, bx.clone()).unwrap().conjugate(&flow).unwrap();
        let inner: Vec<i64> = (-32..=32).collect();
        let d = exact.restrict(&inner, &inner).unwrap().sub(&galerkin.restrict(&inner, &inner).unwrap()).unwrap();
        let scale = (TWO_PI * 32.0).powi(3);
        assert!(d.max_abs() < 1e-9 * scale, "{}", d.max_abs() / scale);
    }

    #[test]
    fn angle_transport_is_first_order() {
        let mut bb = TruncatedField::zeros(FieldShape::new(1, 1, 1), true);
        bb.set(&[0], 1, C64::new(0.0, -0.0025));
        bb.set(&[0], -1, C64::new(0.0, 0.0025));
        bb.set(&[1], 1, C64::new(0.002, 0.0));
        bb.set(&[-1], -1, C64::new(0.002, 0.0));
        let bx = OpBox::square(1, 6, (-32..=32).collect());
        let opt = EgorovOptions { out: FieldShape::new(1, 6, 30), nx: 96, flow: FlowOptions::default(), remainder: true };
        let e0 = conjugate_omega_dphi(&bb, &[1.3], 0, &bx, opt).unwrap();
        let e1 = conjugate_omega_dphi(&bb, &[1.3], 1, &bx, opt).unwrap();
        let (p0, s0) = remainder_decay(e0.remainder.as_ref().unwrap(), 4, 20);
        let (p1, _) = remainder_decay(e1.remainder.as_ref().unwrap(), 4, 20);
        assert!(s0.abs() < 0.01);
        for ((_, r0), (_, r1)) in p0.iter().zip(&p1) {
            assert!(*r1 < 1e-4 * r0, "{r1} {r0}");
        }
    }
}
