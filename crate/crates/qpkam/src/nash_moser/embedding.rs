//! Torus embeddings `phi -> (phi + Theta(phi), y(phi), w(phi))`, the
//! functional `F` whose zeros are invariant tori, and its linearization.

use super::model::{Point, Tangent, ToyHamiltonian};
use crate::error::{Error, Result};
use crate::spaces::{phi_grid_point, FieldShape, TruncatedField};
use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

/// Periodic part `Theta`, actions `y`, normal component `w` (coefficients on
/// normal modes only) and the counterterm `zeta`. Residuals and
/// corrections share this layout.
#[derive(Clone, Debug, PartialEq)]
pub struct TorusEmbedding {
    pub theta: Vec<TruncatedField>,
    pub y: Vec<TruncatedField>,
    pub w: TruncatedField,
    pub zeta: Vec<f64>,
}

/// Values of a triple on the angle grid.
#[derive(Clone, Debug)]
pub(crate) struct Sampled {
    pub theta: Vec<Vec<C64>>,
    pub y: Vec<Vec<C64>>,
    pub w: Vec<Vec<C64>>,
}

impl TorusEmbedding {
    /// The flat torus `Theta = 0, y = 0, w = 0, zeta = 0`.
    pub fn trivial(d: usize, l: usize, jmax: usize) -> Self {
        let s = FieldShape::new(d, l, 0);
        TorusEmbedding {
            theta: vec![TruncatedField::zeros(s, true); d],
            y: vec![TruncatedField::zeros(s, true); d],
            w: TruncatedField::zeros(FieldShape::new(d, l, jmax), true),
            zeta: vec![0.0; d],
        }
    }

    pub fn d(&self) -> usize {
        self.theta.len()
    }

    pub fn l(&self) -> usize {
        self.w.shape.l
    }

    pub fn jmax(&self) -> usize {
        self.w.shape.j
    }

    pub fn nphi(&self) -> usize {
        2 * self.l() + 1
    }

    pub fn n_samples(&self) -> usize {
        self.nphi().pow(self.d() as u32)
    }

    fn zip(&self, o: &Self, f: impl Fn(&TruncatedField, &TruncatedField) -> TruncatedField, g: impl Fn(f64, f64) -> f64) -> Self {
        TorusEmbedding {
            theta: self.theta.iter().zip(&o.theta).map(|(a, b)| f(a, b)).collect(),
            y: self.y.iter().zip(&o.y).map(|(a, b)| f(a, b)).collect(),
            w: f(&self.w, &o.w),
            zeta: self.zeta.iter().zip(&o.zeta).map(|(a, b)| g(*a, *b)).collect(),
        }
    }

    pub fn add(&self, o: &Self) -> Self {
        self.zip(o, |a, b| a.add(b), |a, b| a + b)
    }

    pub fn sub(&self, o: &Self) -> Self {
        self.zip(o, |a, b| a.sub(b), |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.zip(self, |a, _| a.scale(s), |a, _| a * s)
    }

    /// Smoothing `Pi_K`: keeps `<l, j> <= K` in every component.
    pub fn project(&self, k: f64) -> Self {
        self.zip(self, |a, _| a.project(k), |a, _| a)
    }

    /// `sum` of the `H^s` norms of the components, plus `|zeta|`.
    pub fn norm(&self, s: f64) -> f64 {
        self.component_norms(s).iter().sum::<f64>() + self.zeta.iter().map(|z| z * z).sum::<f64>().sqrt()
    }

    /// `H^s` norms of the `theta`, `y` and `w` parts.
    pub fn component_norms(&self, s: f64) -> [f64; 3] {
        let n = |fs: &[TruncatedField]| fs.iter().map(|f| f.sobolev_norm(s).unwrap_or(f64::INFINITY)).sum::<f64>();
        [n(&self.theta), n(&self.y), self.w.sobolev_norm(s).unwrap_or(f64::INFINITY)]
    }

    pub(crate) fn sampled(&self) -> Sampled {
        let n = self.nphi();
        let scal = |fs: &[TruncatedField]| -> Vec<Vec<C64>> {
            let sl: Vec<Vec<Vec<C64>>> = fs.iter().map(|f| f.x_slices(n)).collect();
            (0..self.n_samples()).map(|k| sl.iter().map(|s| s[k][0]).collect()).collect()
        };
        Sampled { theta: scal(&self.theta), y: scal(&self.y), w: self.w.x_slices(n) }
    }

    /// Reassembles real fields from grid values, keeping only normal modes in `w`.
    pub(crate) fn from_sampled(s: &Sampled, d: usize, l: usize, jmax: usize, normal: impl Fn(i64) -> bool, zeta: Vec<f64>) -> Self {
        let scal = |v: &[Vec<C64>]| -> Vec<TruncatedField> {
            (0..d)
                .map(|i| {
                    let sl: Vec<Vec<C64>> = v.iter().map(|x| vec![x[i]]).collect();
                    TruncatedField::from_x_slices(&sl, FieldShape::new(d, l, 0), true)
                })
                .collect()
        };
        let w = TruncatedField::from_x_slices(&s.w, FieldShape::new(d, l, jmax), true)
            .map_coeffs(|_, j, v| if normal(j) { v } else { C64::new(0.0, 0.0) });
        TorusEmbedding { theta: scal(&s.theta), y: scal(&s.y), w, zeta }
    }

    /// Points `(phi + Theta(phi), y(phi), w(phi))` on the angle grid.
    pub fn points(&self) -> Vec<Point> {
        let s = self.sampled();
        (0..self.n_samples())
            .map(|k| {
                let phi = phi_grid_point(self.d(), self.nphi(), k);
                Point {
                    theta: phi.iter().zip(&s.theta[k]).map(|(p, t)| p + t.re).collect(),
                    y: s.y[k].iter().map(|v| v.re).collect(),
                    w: s.w[k].clone(),
                }
            })
            .collect()
    }

    /// `d_phi theta = I + d_phi Theta` on the angle grid (`[i][j] = d_j theta_i`).
    pub fn dtheta(&self) -> Vec<DMatrix<f64>> {
        let d = self.d();
        let n = self.nphi();
        let sl: Vec<Vec<Vec<Vec<C64>>>> =
            self.theta.iter().map(|t| (0..d).map(|j| t.dphi(j).x_slices(n)).collect()).collect();
        (0..self.n_samples())
            .map(|k| DMatrix::from_fn(d, d, |i, j| if i == j { 1.0 } else { 0.0 } + sl[i][j][k][0].re))
            .collect()
    }

    /// Largest sample of `|Theta|`, `|y|`, `|w|_{x-coefficients}`.
    pub fn max_abs(&self) -> f64 {
        self.theta.iter().chain(&self.y).chain(std::iter::once(&self.w)).map(|f| f.max_abs()).fold(0.0, f64::max)
    }
}

fn check_shape(h: &ToyHamiltonian, e: &TorusEmbedding) -> Result<()> {
    if e.d() != h.d() || e.jmax() != h.jmax || e.zeta.len() != h.d() {
        return Err(Error::DimensionMismatch(format!(
            "embedding (d = {}, J = {}) against Hamiltonian (d = {}, J = {})",
            e.d(),
            e.jmax(),
            h.d(),
            h.jmax
        )));
    }
    Ok(())
}

/// `F(i, zeta) = (omega d_phi theta - d_y H, omega d_phi y + d_theta H - zeta,
/// omega d_phi w - d_x grad_w H)` in the sign convention
/// `F1 = omega + omega.d Theta + d_y H`, `F2 = omega.d y - d_theta H - zeta`.
/// The `zeta` slot of the residual is zero.
pub fn evaluate_f(h: &ToyHamiltonian, e: &TorusEmbedding) -> Result<TorusEmbedding> {
    check_shape(h, e)?;
    let d = h.d();
    let pts = e.points();
    let mut s = Sampled { theta: vec![], y: vec![], w: vec![] };
    for p in &pts {
        let g = h.gradient(p)?;
        s.theta.push(g.y.iter().zip(&h.omega).map(|(a, w)| a + w).collect());
        s.y.push(g.theta.iter().zip(&e.zeta).map(|(a, z)| -a - z).collect());
        s.w.push(g.w);
    }
    let mut out = TorusEmbedding::from_sampled(&s, d, e.l(), h.jmax, |j| h.is_normal(j), vec![0.0; d]);
    for i in 0..d {
        out.theta[i] = out.theta[i].add(&e.theta[i].omega_dphi(&h.omega));
        out.y[i] = out.y[i].add(&e.y[i].omega_dphi(&h.omega));
    }
    out.w = e.w.omega_dphi(&h.omega).sub(&out.w.dx());
    Ok(out)
}

/// Derivative `dF(i, zeta)[i_hat, zeta_hat]`.
pub fn linearized_f(h: &ToyHamiltonian, e: &TorusEmbedding, dir: &TorusEmbedding) -> Result<TorusEmbedding> {
    check_shape(h, e)?;
    check_shape(h, dir)?;
    let d = h.d();
    let pts = e.points();
    let ds = dir.sampled();
    let mut s = Sampled { theta: vec![], y: vec![], w: vec![] };
    for (k, p) in pts.iter().enumerate() {
        let t = Tangent { theta: ds.theta[k].clone(), y: ds.y[k].clone(), w: ds.w[k].clone() };
        let hv = h.hessian_apply(p, &t)?;
        s.theta.push(hv.y);
        s.y.push(hv.theta.iter().zip(&dir.zeta).map(|(a, z)| -a - z).collect());
        s.w.push(hv.w);
    }
    let mut out = TorusEmbedding::from_sampled(&s, d, e.l(), h.jmax, |j| h.is_normal(j), vec![0.0; d]);
    for i in 0..d {
        out.theta[i] = out.theta[i].add(&dir.theta[i].omega_dphi(&h.omega));
        out.y[i] = out.y[i].add(&dir.y[i].omega_dphi(&h.omega));
    }
    out.w = dir.w.omega_dphi(&h.omega).sub(&out.w.dx());
    Ok(out)
}

/// `(d_x^{-1} u, v) = sum_n u_n v_{-n} / (i 2 pi n)`.
pub(crate) fn pair_dx_inv(u: &[C64], v: &[C64]) -> C64 {
    let jm = (u.len() - 1) as i64 / 2;
    let mut s = C64::new(0.0, 0.0);
    for n in -jm..=jm {
        if n != 0 {
            s += u[(n + jm) as usize] * v[(-n + jm) as usize] / C64::new(0.0, 2.0 * std::f64::consts::PI * n as f64);
        }
    }
    s
}

/// Symplectic form `sum_i (a_y b_theta - a_theta b_y)_i + (d_x^{-1} a_w, b_w)` on one fibre.
pub fn w_form(a: &Tangent, b: &Tangent) -> C64 {
    let lin: C64 = a.y.iter().zip(&b.theta).map(|(p, q)| p * q).sum::<C64>() - a.theta.iter().zip(&b.y).map(|(p, q)| p * q).sum::<C64>();
    lin + pair_dx_inv(&a.w, &b.w)
}

/// `Delta_phi^{-1}` of a function of the angles; the mean must vanish.
pub fn laplace_inv(f: &TruncatedField) -> Result<TruncatedField> {
    let m = f.mean();
    if m.norm() > 1e-12 * f.max_abs().max(1.0) {
        return Err(Error::ZeroMode(format!("Laplacian inverse of a function with mean {m}")));
    }
    Ok(f.map_coeffs(|ell, _, v| {
        let n2: i64 = ell.iter().map(|e| e * e).sum();
        if n2 == 0 {
            C64::new(0.0, 0.0)
        } else {
            -v / n2 as f64
        }
    }))
}

/// Liouville one-form `a_k = (d_phi theta^T y)_k + 1/2 (d_x^{-1} w, d_k w)`.
pub fn liouville_form(e: &TorusEmbedding) -> Vec<TruncatedField> {
    let d = e.d();
    let n = e.nphi();
    let s = e.sampled();
    let dth = e.dtheta();
    let ws = e.w.x_slices(n);
    let dw: Vec<Vec<Vec<C64>>> = (0..d).map(|k| e.w.dphi(k).x_slices(n)).collect();
    (0..d)
        .map(|k| {
            let sl: Vec<Vec<C64>> = (0..e.n_samples())
                .map(|p| {
                    let lin: f64 = (0..d).map(|i| dth[p][(i, k)] * s.y[p][i].re).sum();
                    vec![C64::new(lin, 0.0) + pair_dx_inv(&ws[p], &dw[k][p]) * 0.5]
                })
                .collect();
            TruncatedField::from_x_slices(&sl, FieldShape::new(d, e.l(), 0), true)
        })
        .collect()
}

/// Exterior derivative `A_kj = d_k a_j - d_j a_k` of the Liouville form.
pub fn isotropy_defect(e: &TorusEmbedding) -> Vec<Vec<TruncatedField>> {
    let a = liouville_form(e);
    let d = e.d();
    (0..d).map(|k| (0..d).map(|j| a[j].dphi(k).sub(&a[k].dphi(j))).collect()).collect()
}

/// `max |A_kj|` over Fourier coefficients.
pub fn isotropy_defect_max(e: &TorusEmbedding) -> f64 {
    isotropy_defect(e).iter().flatten().map(|f| f.max_abs()).fold(0.0, f64::max)
}

/// Isotropic torus close to `e`: `y_delta = y - (d_phi theta)^{-T} rho`
/// with `rho_j = Delta^{-1} sum_k d_k A_kj`.
pub fn isotropic_correction(e: &TorusEmbedding) -> Result<TorusEmbedding> {
    let d = e.d();
    let a = isotropy_defect(e);
    let mut rho = Vec::with_capacity(d);
    for j in 0..d {
        let mut s = TruncatedField::zeros(FieldShape::new(d, e.l(), 0), true);
        for (k, row) in a.iter().enumerate() {
            s = s.add(&row[j].dphi(k));
        }
        rho.push(laplace_inv(&s)?);
    }
    let n = e.nphi();
    let rs: Vec<Vec<Vec<C64>>> = rho.iter().map(|r| r.x_slices(n)).collect();
    let ys: Vec<Vec<Vec<C64>>> = e.y.iter().map(|r| r.x_slices(n)).collect();
    let dth = e.dtheta();
    let mut out = e.clone();
    for i in 0..d {
        let mut sl = Vec::with_capacity(e.n_samples());
        for (p, m) in dth.iter().enumerate() {
            let r = nalgebra::DVector::from_iterator(d, (0..d).map(|j| rs[j][p][0].re));
            let corr = m.transpose().lu().solve(&r).ok_or_else(|| Error::NotInvertible("d_phi theta".into()))?;
            sl.push(vec![ys[i][p][0] - corr[i]]);
        }
        out.y[i] = TruncatedField::from_x_slices(&sl, FieldShape::new(d, e.l(), 0), true);
    }
    Ok(out)
}
