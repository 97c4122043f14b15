use super::operator::QPOperator;
use super::symbol::{Multiplier, Symbol};
use crate::error::{Error, Result};
use crate::linalg::CMat;
use num_complex::Complex64 as C64;
use std::f64::consts::PI;

/// Algebraic structures checked on Fourier blocks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StructureKind {
    /// Maps real functions to real functions.
    Real,
    /// `L^2` self-adjoint.
    SelfAdjoint,
    /// Real and self-adjoint.
    RealSelfAdjoint,
    /// `X = d_x G` with `G` real and self-adjoint.
    Hamiltonian,
}

/// Largest relative defect of a structure check.
#[derive(Clone, Debug, PartialEq)]
pub struct StructureCheck {
    pub kind: StructureKind,
    pub defect: f64,
    pub passed: bool,
}

struct BlockView {
    blocks: Vec<CMat>,
    shape: crate::spaces::FieldShape,
    rows: Vec<i64>,
    cols: Vec<i64>,
}

impl BlockView {
    fn new(a: &QPOperator) -> Self {
        BlockView { blocks: a.blocks(), shape: a.bx.ell_shape(), rows: a.bx.rows.clone(), cols: a.bx.cols.clone() }
    }
    fn get(&self, ell: &[i64], j: i64, jp: i64) -> Option<C64> {
        let r = self.rows.iter().position(|&x| x == j)?;
        let c = self.cols.iter().position(|&x| x == jp)?;
        let i = self.shape.ell_index(ell)?;
        Some(self.blocks[i][(r, c)])
    }
    fn scale(&self) -> f64 {
        self.blocks.iter().flat_map(|b| b.iter()).map(|z| z.norm()).fold(0.0, f64::max).max(1e-300)
    }
    fn defect(&self, pairing: impl Fn(&[i64], i64, i64) -> (Vec<i64>, i64, i64, bool)) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for i in 0..self.shape.n_ell() {
            let ell = self.shape.ell_of(i);
            for (ri, &j) in self.rows.iter().enumerate() {
                for (ci, &jp) in self.cols.iter().enumerate() {
                    let v = self.blocks[i][(ri, ci)];
                    let (e2, a, b, conj) = pairing(&ell, j, jp);
                    let w = self.get(&e2, a, b).ok_or_else(|| {
                        Error::DimensionMismatch(format!("box not symmetric at ({j},{jp})"))
                    })?;
                    let lhs = if conj { v.conj() } else { v };
                    worst = worst.max((lhs - w).norm());
                }
            }
        }
        Ok(worst / self.scale())
    }
}

fn neg(ell: &[i64]) -> Vec<i64> {
    ell.iter().map(|e| -e).collect()
}

/// Checks a structure of `a` with relative tolerance `tol`.
pub fn structure_check(a: &QPOperator, kind: StructureKind, tol: f64) -> Result<StructureCheck> {
    let defect = match kind {
        StructureKind::Real => {
            BlockView::new(a).defect(|ell, j, jp| (neg(ell), -j, -jp, true))?
        }
        StructureKind::SelfAdjoint => {
            BlockView::new(a).defect(|ell, j, jp| (neg(ell), jp, j, true))?
        }
        StructureKind::RealSelfAdjoint => {
            let v = BlockView::new(a);
            v.defect(|ell, j, jp| (neg(ell), -j, -jp, true))?
                .max(v.defect(|ell, j, jp| (neg(ell), jp, j, true))?)
                .max(v.defect(|ell, j, jp| (ell.to_vec(), -jp, -j, false))?)
        }
        StructureKind::Hamiltonian => {
            let g = hamiltonian_kernel(a)?;
            let v = BlockView::new(&g);
            v.defect(|ell, j, jp| (neg(ell), -j, -jp, true))?
                .max(v.defect(|ell, j, jp| (neg(ell), jp, j, true))?)
        }
    };
    Ok(StructureCheck { kind, defect, passed: defect <= tol })
}

/// `G = d_x^{-1} X`, defined when no row carries the zero mode.
pub fn hamiltonian_kernel(x: &QPOperator) -> Result<QPOperator> {
    if x.bx.rows.contains(&0) {
        let r = x.bx.row_index(0).unwrap();
        if x.samples.iter().any(|s| s.row(r).iter().any(|z| z.norm() > 0.0)) {
            return Err(Error::Structure("zero-mode row is not in the range of d_x".into()));
        }
    }
    let rows = x.bx.rows.clone();
    Ok(x.map(|s| {
        let mut g = s.clone();
        for (i, &j) in rows.iter().enumerate() {
            let f = if j == 0 { C64::new(0.0, 0.0) } else { C64::new(0.0, 2.0 * PI * j as f64).inv() };
            for c in 0..g.ncols() {
                g[(i, c)] *= f;
            }
        }
        g
    }))
}

/// Defect of `a_2 = 2 (a_3)_x` for a third-order symbol, relative to `|a_3|`.
pub fn third_order_hamiltonian_defect(sym: &Symbol) -> Result<f64> {
    let shape = sym.shape().ok_or_else(|| Error::InvalidField("empty symbol".into()))?;
    let a3 = sym.coeff_of_power(3, shape);
    let a2 = sym.coeff_of_power(2, shape);
    let diff = a2.sub(&a3.dx().scale(2.0));
    let scale = a3.sobolev_norm(0.0)?.max(1e-300);
    Ok(diff.sobolev_norm(0.0)? / scale)
}

/// True if every term is a plain multiplier or an integer power.
pub fn is_differential(sym: &Symbol) -> bool {
    sym.terms.iter().all(|t| !matches!(t.mult, Multiplier::Table(_)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{quantize, OpBox};
    use crate::spaces::{FieldShape, TruncatedField};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn field(seed: u64) -> TruncatedField {
        TruncatedField::random(FieldShape::new(1, 1, 2), 1.0, 0.5, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    fn bx() -> OpBox {
        OpBox::square(1, 2, OpBox::x_modes(8, &[0]))
    }

    #[test]
    fn real_multiplication_is_real_and_symmetric() {
        let m = quantize(&Symbol::multiplication(field(1)), bx()).unwrap();
        assert!(structure_check(&m, StructureKind::RealSelfAdjoint, 1e-13).unwrap().passed);
        let mut c = field(2);
        c.coeffs[3] += C64::new(0.0, 0.3);
        c.real = false;
        let m = quantize(&Symbol::multiplication(c), bx()).unwrap();
        assert!(!structure_check(&m, StructureKind::Real, 1e-6).unwrap().passed);
    }

    #[test]
    fn hamiltonian_operators() {
        let sh = FieldShape::new(1, 0, 0);
        let c = Symbol::multiplication(field(3));
        let dx = Symbol::multiplier(sh, Multiplier::Power(1));
        let x = dx.compose(&c, 1, None);
        assert!(structure_check(&quantize(&x, bx()).unwrap(), StructureKind::Hamiltonian, 1e-12).unwrap().passed);
        let y = c.compose(&dx, 1, None);
        assert!(!structure_check(&quantize(&y, bx()).unwrap(), StructureKind::Hamiltonian, 1e-6).unwrap().passed);
    }

    #[test]
    fn third_order_hamiltonian_relation() {
        let sh = FieldShape::new(1, 0, 0);
        let a = field(4);
        let d1 = Symbol::multiplier(sh, Multiplier::Power(1));
        let d2 = Symbol::multiplier(sh, Multiplier::Power(2));
        let g = Symbol::term(a.clone(), Multiplier::Power(1));
        let x = d2.compose(&g, 2, None);
        assert!(third_order_hamiltonian_defect(&x).unwrap() < 1e-13);
        assert!(is_differential(&x));
        let bad = d1.compose(&Symbol::term(a, Multiplier::Power(2)), 1, None);
        assert!(third_order_hamiltonian_defect(&bad).unwrap() > 0.1);
    }
}
