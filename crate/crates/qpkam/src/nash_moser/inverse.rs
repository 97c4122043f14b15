//! Approximate right inverse of the linearized functional at a torus.
//!
//! The torus is first made isotropic, `G_delta(psi, eta, v) =
//! (theta(psi), y_delta(psi) + d_psi theta^{-T} eta - [d_theta w~]^T d_x^{-1} v,
//! w(psi) + v)` straightens it, and in these coordinates the linearized
//! system is triangular up to terms vanishing at invariant tori.

use super::embedding::{isotropic_correction, isotropy_defect_max, w_form, Sampled, TorusEmbedding};
use super::model::{Tangent, ToyHamiltonian};
use crate::algebra::{OpBox, QPOperator};
use crate::error::{Error, Result};
use crate::linalg::CMat;
use crate::spaces::{FieldShape, TruncatedField};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use std::f64::consts::PI;

const TWO_PI: f64 = 2.0 * PI;

/// Taylor coefficients of `K = H o G_delta` at `eta = 0, v = 0`:
/// `K00 + K10 . eta + (K01, v) + 1/2 K20 eta . eta + (K11 eta, v) + 1/2 (K02 v, v)`.
/// Matrix- and function-valued coefficients are kept on the angle grid.
#[derive(Clone, Debug)]
pub struct TaylorCoefficients {
    pub k00: TruncatedField,
    pub k10: Vec<TruncatedField>,
    pub k01: TruncatedField,
    pub k20: Vec<DMatrix<f64>>,
    /// `K11 e_m` per sample, coefficients `|j| <= J`.
    pub k11: Vec<Vec<Vec<C64>>>,
    /// `K02` on the normal modes.
    pub k02: QPOperator,
}

/// Pointwise geometry of `G_delta`.
#[derive(Clone, Debug)]
struct Geometry {
    dth: Vec<DMatrix<f64>>,
    dth_inv: Vec<DMatrix<f64>>,
    dyd: Vec<DMatrix<f64>>,
    dw: Vec<Vec<Vec<C64>>>,
    b: Vec<Vec<Vec<C64>>>,
}

/// How the normal block `L< = omega.d_phi - d_x K02` is inverted.
#[derive(Clone, Debug)]
pub enum NormalSolverMode {
    /// Dense LU on the truncation box.
    Direct,
    /// Regularisation pipeline and KAM diagonalisation.
    Reducible(super::reducible::ReducibleConfig),
}

enum NormalSolver {
    Direct(nalgebra::LU<C64, nalgebra::Dyn, nalgebra::Dyn>),
    Reducible(Box<super::reducible::ReducedNormal>),
}

/// Linearization data at one torus, ready to apply `T0`.
pub struct ApproxInverse {
    pub delta: TorusEmbedding,
    pub taylor: TaylorCoefficients,
    pub isotropy_before: f64,
    pub isotropy_after: f64,
    omega: Vec<f64>,
    modes: Vec<i64>,
    lop: QPOperator,
    geom: Geometry,
    solver: NormalSolver,
}

fn pair(u: &[C64], v: &[C64]) -> C64 {
    let jm = (u.len() - 1) as i64 / 2;
    (-jm..=jm).map(|n| u[(n + jm) as usize] * v[(-n + jm) as usize]).sum()
}

fn scalar_field(vals: impl Iterator<Item = C64>, d: usize, l: usize) -> TruncatedField {
    let sl: Vec<Vec<C64>> = vals.map(|v| vec![v]).collect();
    TruncatedField::from_x_slices(&sl, FieldShape::new(d, l, 0), true)
}

fn scalar_samples(f: &TruncatedField, nphi: usize) -> Vec<f64> {
    f.x_slices(nphi).iter().map(|s| s[0].re).collect()
}

fn dmat_c(m: &DMatrix<f64>, v: &[C64]) -> Vec<C64> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| v[j] * m[(i, j)]).sum()).collect()
}

fn dmat_t_c(m: &DMatrix<f64>, v: &[C64]) -> Vec<C64> {
    (0..m.ncols()).map(|i| (0..m.nrows()).map(|j| v[j] * m[(j, i)]).sum()).collect()
}

impl ApproxInverse {
    /// Builds the approximate inverse at `e` (the counterterm `e.zeta` is ignored).
    pub fn new(h: &ToyHamiltonian, e: &TorusEmbedding, mode: &NormalSolverMode) -> Result<Self> {
        let isotropy_before = isotropy_defect_max(e);
        let delta = isotropic_correction(e)?;
        let isotropy_after = isotropy_defect_max(&delta);
        let (d, l, jm) = (h.d(), e.l(), h.jmax as i64);
        let nj = 2 * h.jmax + 1;
        let n = delta.nphi();
        let modes = h.normal_modes();
        let nw = modes.len();

        let dth = delta.dtheta();
        let dth_inv = dth
            .iter()
            .map(|m| m.clone().try_inverse().ok_or_else(|| Error::NotInvertible("d_phi theta".into())))
            .collect::<Result<Vec<_>>>()?;
        let ys: Vec<Vec<Vec<f64>>> =
            delta.y.iter().map(|y| (0..d).map(|j| scalar_samples(&y.dphi(j), n)).collect()).collect();
        let dyd: Vec<DMatrix<f64>> = (0..delta.n_samples()).map(|p| DMatrix::from_fn(d, d, |i, j| ys[i][j][p])).collect();
        let dws: Vec<Vec<Vec<C64>>> = (0..d).map(|k| delta.w.dphi(k).x_slices(n)).collect();
        let dw: Vec<Vec<Vec<C64>>> = (0..delta.n_samples()).map(|p| (0..d).map(|k| dws[k][p].clone()).collect()).collect();
        let b: Vec<Vec<Vec<C64>>> = (0..delta.n_samples())
            .map(|p| {
                (0..d)
                    .map(|k| {
                        (0..nj)
                            .map(|i| {
                                let jj = i as i64 - jm;
                                if jj == 0 {
                                    return C64::new(0.0, 0.0);
                                }
                                let v: C64 = (0..d).map(|j| dw[p][j][i] * dth_inv[p][(j, k)]).sum();
                                v / C64::new(0.0, TWO_PI * jj as f64)
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();

        let mut dirs = Vec::with_capacity(d + nw);
        for k in 0..d {
            let mut t = Tangent::zeros(d, h.jmax);
            t.y[k] = C64::new(1.0, 0.0);
            dirs.push(t);
        }
        for &m in &modes {
            let mut t = Tangent::zeros(d, h.jmax);
            t.w[(m + jm) as usize] = C64::new(1.0, 0.0);
            dirs.push(t);
        }
        let neg = |m: i64| (-m + jm) as usize;
        let mut k00 = vec![];
        let mut k10 = vec![vec![]; d];
        let mut k01 = vec![];
        let mut k20 = vec![];
        let mut k11 = vec![];
        let mut k02 = vec![];
        for (p, pt) in delta.points().iter().enumerate() {
            let g = h.gradient(pt)?;
            k00.push(C64::new(h.value(pt)?, 0.0));
            let cols = h.hessian_columns(pt, &dirs)?;
            let hyy = DMatrix::from_fn(d, d, |i, k| cols[k].y[i].re);
            let gy: Vec<C64> = g.y.clone();
            let k10p = dmat_c(&dth_inv[p], &gy);
            for (i, v) in k10p.into_iter().enumerate() {
                k10[i].push(v);
            }
            let mut k01p = g.w.clone();
            for k in 0..d {
                for i in 0..nj {
                    k01p[i] += b[p][k][i] * gy[k];
                }
            }
            k01.push(k01p);
            k20.push(&dth_inv[p] * &hyy * dth_inv[p].transpose());
            let hk: Vec<Vec<C64>> = (0..d)
                .map(|k| {
                    (0..nj).map(|i| cols[k].w[i] + (0..d).map(|ii| b[p][ii][i] * hyy[(ii, k)]).sum::<C64>()).collect()
                })
                .collect();
            k11.push(
                (0..d)
                    .map(|m| (0..nj).map(|i| (0..d).map(|k| hk[k][i] * dth_inv[p][(m, k)]).sum()).collect())
                    .collect(),
            );
            let mut mat = CMat::zeros(nw, nw);
            for (c, &mc) in modes.iter().enumerate() {
                for (r, &mr) in modes.iter().enumerate() {
                    let ir = (mr + jm) as usize;
                    let mut v = cols[d + c].w[ir];
                    for k in 0..d {
                        v += cols[k].w[ir] * b[p][k][neg(mc)] + b[p][k][ir] * cols[k].w[neg(mc)];
                        for i in 0..d {
                            v += b[p][i][ir] * hyy[(i, k)] * b[p][k][neg(mc)];
                        }
                    }
                    mat[(r, c)] = v;
                }
            }
            k02.push(mat);
        }
        let bx = OpBox::square(d, l, modes.clone());
        let k02 = QPOperator { bx, samples: k02 };
        let lop = k02.map(|m| {
            let mut out = m.clone();
            for (r, &mr) in modes.iter().enumerate() {
                let f = C64::new(0.0, -TWO_PI * mr as f64);
                for c in 0..nw {
                    out[(r, c)] *= f;
                }
            }
            out
        });
        let taylor = TaylorCoefficients {
            k00: scalar_field(k00.into_iter(), d, l),
            k10: k10.into_iter().map(|v| scalar_field(v.into_iter(), d, l)).collect(),
            k01: TruncatedField::from_x_slices(&k01, FieldShape::new(d, l, h.jmax), true),
            k20,
            k11,
            k02,
        };
        let solver = match mode {
            NormalSolverMode::Direct => {
                let lu = lop.dense_with_omega(&h.omega).lu();
                if !lu.is_invertible() {
                    return Err(Error::Singular("normal operator".into()));
                }
                NormalSolver::Direct(lu)
            }
            NormalSolverMode::Reducible(cfg) => {
                NormalSolver::Reducible(Box::new(super::reducible::ReducedNormal::new(h, &delta, &lop, cfg)?))
            }
        };
        Ok(ApproxInverse {
            delta,
            taylor,
            isotropy_before,
            isotropy_after,
            omega: h.omega.clone(),
            modes,
            lop,
            geom: Geometry { dth, dth_inv, dyd, dw, b },
            solver,
        })
    }

    fn d(&self) -> usize {
        self.delta.d()
    }
    fn l(&self) -> usize {
        self.delta.l()
    }
    fn jmax(&self) -> usize {
        self.delta.jmax()
    }

    fn normal(&self, j: i64) -> bool {
        self.modes.contains(&j)
    }

    fn assemble(&self, s: &Sampled, zeta: Vec<f64>) -> TorusEmbedding {
        TorusEmbedding::from_sampled(s, self.d(), self.l(), self.jmax(), |j| self.normal(j), zeta)
    }

    /// The normal operator `L< = omega.d_phi - d_x K02`.
    pub fn normal_operator(&self) -> &QPOperator {
        &self.lop
    }

    /// `L< v` on the normal modes.
    pub fn normal_apply(&self, v: &TruncatedField) -> Result<TruncatedField> {
        let lv = self.lop.apply(v)?;
        let shape = FieldShape::new(self.d(), self.l(), self.jmax());
        Ok(lv.resize(shape).add(&v.omega_dphi(&self.omega)).realify())
    }

    /// `(L<)^{-1} g` on the normal modes.
    pub fn normal_solve(&self, g: &TruncatedField) -> Result<TruncatedField> {
        let shape = FieldShape::new(self.d(), self.l(), self.jmax());
        match &self.solver {
            NormalSolver::Direct(lu) => {
                let es = self.lop.bx.ell_shape();
                let nw = self.modes.len();
                let rhs = DVector::from_fn(es.n_ell() * nw, |i, _| g.get(&es.ell_of(i / nw), self.modes[i % nw]));
                let x = lu.solve(&rhs).ok_or_else(|| Error::Singular("normal operator".into()))?;
                Ok(TruncatedField::from_fn(shape, true, |ell, j| match (es.ell_index(ell), self.modes.iter().position(|&m| m == j)) {
                    (Some(a), Some(r)) => x[a * nw + r],
                    _ => C64::new(0.0, 0.0),
                })
                .realify())
            }
            NormalSolver::Reducible(r) => Ok(r.solve(g)?.resize(shape).realify()),
        }
    }

    /// `dG_delta(psi_hat, eta_hat, v_hat)` with `zeta` passed through.
    pub fn dg_forward(&self, x: &TorusEmbedding) -> TorusEmbedding {
        let s = x.sampled();
        let mut out = Sampled { theta: vec![], y: vec![], w: vec![] };
        for p in 0..s.theta.len() {
            let t = self.dg_at(p, &Tangent { theta: s.theta[p].clone(), y: s.y[p].clone(), w: s.w[p].clone() });
            out.theta.push(t.theta);
            out.y.push(t.y);
            out.w.push(t.w);
        }
        self.assemble(&out, x.zeta.clone())
    }

    /// `max_p |W(dG a, dG b) - W(a, b)|` over the angle samples.
    pub fn dg_symplectic_defect(&self, a: &Tangent, b: &Tangent) -> f64 {
        let w0 = w_form(a, b);
        (0..self.geom.dth.len()).map(|p| (w_form(&self.dg_at(p, a), &self.dg_at(p, b)) - w0).norm()).fold(0.0, f64::max)
    }

    /// `dG_delta` at the angle sample `p` acting on one fibre vector.
    pub fn dg_at(&self, p: usize, x: &Tangent) -> Tangent {
        let g = &self.geom;
        let d = self.d();
        let theta = dmat_c(&g.dth[p], &x.theta);
        let eta = g.dth_inv[p].transpose();
        let mut y = dmat_c(&g.dyd[p], &x.theta);
        let e2 = dmat_c(&eta, &x.y);
        for k in 0..d {
            y[k] += e2[k] + pair(&g.b[p][k], &x.w);
        }
        let mut w = x.w.clone();
        for k in 0..d {
            for (wi, dwi) in w.iter_mut().zip(&g.dw[p][k]) {
                *wi += dwi * x.theta[k];
            }
        }
        Tangent { theta, y, w }
    }

    pub fn dg_inverse(&self, x: &TorusEmbedding) -> TorusEmbedding {
        let s = x.sampled();
        let g = &self.geom;
        let d = self.d();
        let mut out = Sampled { theta: vec![], y: vec![], w: vec![] };
        for p in 0..s.theta.len() {
            let psi = dmat_c(&g.dth_inv[p], &s.theta[p]);
            let mut v = s.w[p].clone();
            for k in 0..d {
                for (vi, dwi) in v.iter_mut().zip(&g.dw[p][k]) {
                    *vi -= dwi * psi[k];
                }
            }
            let dy = dmat_c(&g.dyd[p], &psi);
            let r: Vec<C64> = (0..d).map(|k| s.y[p][k] - dy[k] - pair(&g.b[p][k], &v)).collect();
            out.y.push(dmat_t_c(&g.dth[p], &r));
            out.theta.push(psi);
            out.w.push(v);
        }
        self.assemble(&out, x.zeta.clone())
    }

    /// `K11^T v` per sample.
    fn k11t(&self, v: &[Vec<C64>]) -> Vec<Vec<C64>> {
        let d = self.d();
        (0..v.len()).map(|p| (0..d).map(|m| pair(&self.taylor.k11[p][m], &v[p])).collect()).collect()
    }

    /// `K11 eta` per sample.
    fn k11(&self, eta: &[Vec<C64>]) -> Vec<Vec<C64>> {
        let d = self.d();
        let nj = 2 * self.jmax() + 1;
        (0..eta.len()).map(|p| (0..nj).map(|i| (0..d).map(|m| self.taylor.k11[p][m][i] * eta[p][m]).sum()).collect()).collect()
    }

    fn w_field(&self, s: &[Vec<C64>]) -> TruncatedField {
        TruncatedField::from_x_slices(s, FieldShape::new(self.d(), self.l(), self.jmax()), true)
            .map_coeffs(|_, j, v| if self.normal(j) { v } else { C64::new(0.0, 0.0) })
    }

    /// The triangular operator
    /// `D(psi, eta, v, zeta) = (omega.d psi + K20 eta + K11^T v, omega.d eta - d theta^T zeta, L< v - d_x K11 eta)`.
    pub fn d_forward(&self, x: &TorusEmbedding) -> Result<TorusEmbedding> {
        let s = x.sampled();
        let d = self.d();
        let k11t = self.k11t(&s.w);
        let k11 = self.k11(&s.y);
        let mut out = Sampled { theta: vec![], y: vec![], w: vec![] };
        for p in 0..s.theta.len() {
            let k20 = dmat_c(&self.taylor.k20[p], &s.y[p]);
            out.theta.push((0..d).map(|i| k20[i] + k11t[p][i]).collect());
            let z: Vec<C64> = x.zeta.iter().map(|v| C64::new(-v, 0.0)).collect();
            out.y.push(dmat_t_c(&self.geom.dth[p], &z));
            out.w.push(vec![C64::new(0.0, 0.0); 2 * self.jmax() + 1]);
        }
        let mut r = self.assemble(&out, vec![0.0; d]);
        for i in 0..d {
            r.theta[i] = r.theta[i].add(&x.theta[i].omega_dphi(&self.omega));
            r.y[i] = r.y[i].add(&x.y[i].omega_dphi(&self.omega));
        }
        r.w = self.normal_apply(&x.w)?.sub(&self.w_field(&k11).dx());
        Ok(r)
    }

    /// Exact inverse of [`Self::d_forward`] (up to the mean of `psi`, set to zero).
    pub fn d_inverse(&self, g: &TorusEmbedding) -> Result<TorusEmbedding> {
        let d = self.d();
        let (l, n) = (self.l(), self.delta.nphi());
        let ns = self.delta.n_samples();
        let zeta: Vec<f64> = g.y.iter().map(|f| -f.mean().re).collect();
        let mut eta1 = Vec::with_capacity(d);
        for i in 0..d {
            let corr = scalar_field((0..ns).map(|p| C64::new((0..d).map(|k| self.geom.dth[p][(k, i)] * zeta[k]).sum(), 0.0)), d, l);
            eta1.push(g.y[i].add(&corr).omega_dphi_inv(&self.omega, 1.0)?);
        }
        let eta_s = |eta: &[TruncatedField]| -> Vec<Vec<C64>> {
            let sl: Vec<Vec<f64>> = eta.iter().map(|f| scalar_samples(f, n)).collect();
            (0..ns).map(|p| (0..d).map(|i| C64::new(sl[i][p], 0.0)).collect()).collect()
        };
        let e1 = eta_s(&eta1);
        let v1 = self.normal_solve(&g.w.add(&self.w_field(&self.k11(&e1)).dx()))?;
        let mut hm = Vec::with_capacity(d);
        for m in 0..d {
            let col: Vec<Vec<C64>> = (0..ns).map(|p| self.taylor.k11[p][m].clone()).collect();
            hm.push(self.normal_solve(&self.w_field(&col).dx())?);
        }
        let hs: Vec<Vec<Vec<C64>>> = hm.iter().map(|f| f.x_slices(n)).collect();
        let mut m1 = DMatrix::<f64>::zeros(d, d);
        for p in 0..ns {
            for m in 0..d {
                for i in 0..d {
                    m1[(i, m)] -= self.taylor.k20[p][(i, m)] + pair(&self.taylor.k11[p][i], &hs[m][p]).re;
                }
            }
        }
        m1 /= ns as f64;
        let v1s = v1.x_slices(n);
        let k11t = self.k11t(&v1s);
        let g1s: Vec<Vec<f64>> = g.theta.iter().map(|f| scalar_samples(f, n)).collect();
        let mut rhs = DVector::<f64>::zeros(d);
        for p in 0..ns {
            let k20 = dmat_c(&self.taylor.k20[p], &e1[p]);
            for i in 0..d {
                rhs[i] += g1s[i][p] - k20[i].re - k11t[p][i].re;
            }
        }
        rhs /= ns as f64;
        let eta0 = m1.clone().lu().solve(&(-rhs)).ok_or_else(|| Error::TwistDegenerate(format!("averaged twist {m1}")))?;
        if m1.determinant().abs() < 1e-14 * m1.amax().powi(d as i32).max(1e-300) {
            return Err(Error::TwistDegenerate(format!("averaged twist {m1}")));
        }
        let eta: Vec<TruncatedField> = eta1.iter().enumerate().map(|(i, f)| f.add(&TruncatedField::constant(f.shape, eta0[i]))).collect();
        let mut v = v1;
        for (m, f) in hm.iter().enumerate() {
            v = v.add(&f.scale(eta0[m]));
        }
        let es = eta_s(&eta);
        let vs = v.x_slices(n);
        let k11t = self.k11t(&vs);
        let mut psi = Vec::with_capacity(d);
        for i in 0..d {
            let r = scalar_field(
                (0..ns).map(|p| {
                    let k20: C64 = (0..d).map(|k| es[p][k] * self.taylor.k20[p][(i, k)]).sum();
                    C64::new(g1s[i][p], 0.0) - k20 - k11t[p][i]
                }),
                d,
                l,
            );
            psi.push(r.omega_dphi_inv_unchecked(&self.omega, 1.0)?);
        }
        Ok(TorusEmbedding { theta: psi, y: eta, w: v.realify(), zeta })
    }

    /// `T0 g = dG~ D^{-1} dG^{-1} g`.
    pub fn apply(&self, g: &TorusEmbedding) -> Result<TorusEmbedding> {
        let x = self.dg_inverse(g);
        let y = self.d_inverse(&x)?;
        Ok(self.dg_forward(&y))
    }

    /// Inverse pointwise twist average `<M1>`-free check quantity: the
    /// averaged `K20`.
    pub fn mean_k20(&self) -> DMatrix<f64> {
        let ns = self.taylor.k20.len() as f64;
        self.taylor.k20.iter().fold(DMatrix::zeros(self.d(), self.d()), |a, b| a + b) / ns
    }
}
