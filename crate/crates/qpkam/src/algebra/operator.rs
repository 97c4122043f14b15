use super::symbol::Symbol;
use crate::error::{Error, Result};
use crate::fft;
use crate::linalg::{self, CMat};
use crate::spaces::{bracket, dot, ell_len, phi_grid_point, FieldShape, TruncatedField};
use num_complex::Complex64 as C64;

/// Truncation box of an operator: angle modes `|l|_inf <= l` (sampled on
/// `2l+1` points per angle) and explicit row and column space modes.
#[derive(Clone, Debug, PartialEq)]
pub struct OpBox {
    pub d: usize,
    pub l: usize,
    pub rows: Vec<i64>,
    pub cols: Vec<i64>,
}

impl OpBox {
    pub fn square(d: usize, l: usize, modes: Vec<i64>) -> Self {
        OpBox { d, l, rows: modes.clone(), cols: modes }
    }

    /// Modes `|j| <= jmax` with `excluded` removed.
    pub fn x_modes(jmax: usize, excluded: &[i64]) -> Vec<i64> {
        let jm = jmax as i64;
        (-jm..=jm).filter(|j| !excluded.contains(j)).collect()
    }

    pub fn nphi(&self) -> usize {
        if self.d == 0 {
            1
        } else {
            2 * self.l + 1
        }
    }

    pub fn n_samples(&self) -> usize {
        self.nphi().pow(self.d as u32)
    }

    pub fn ell_shape(&self) -> FieldShape {
        FieldShape::new(self.d, if self.d == 0 { 0 } else { self.l }, 0)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn phi_point(&self, k: usize) -> Vec<f64> {
        phi_grid_point(self.d, self.nphi(), k)
    }

    pub fn row_index(&self, j: i64) -> Option<usize> {
        self.rows.iter().position(|&r| r == j)
    }

    pub fn col_index(&self, j: i64) -> Option<usize> {
        self.cols.iter().position(|&c| c == j)
    }
}

/// Linear operator acting on functions of `(phi, x)`, stored as its values
/// `A(phi_k)` (matrices in the space Fourier basis) on the angle grid.
/// The Fourier blocks `A(l)` are the angle transform of the samples; the
/// box matrix is block circulant in `l`.
#[derive(Clone, Debug, PartialEq)]
pub struct QPOperator {
    pub bx: OpBox,
    pub samples: Vec<CMat>,
}

impl QPOperator {
    pub fn zeros(bx: OpBox) -> Self {
        let m = CMat::zeros(bx.rows.len(), bx.cols.len());
        QPOperator { samples: vec![m; bx.n_samples()], bx }
    }

    pub fn identity(bx: OpBox) -> Self {
        assert!(bx.is_square());
        let n = bx.rows.len();
        QPOperator { samples: vec![CMat::identity(n, n); bx.n_samples()], bx }
    }

    pub fn from_samples(bx: OpBox, f: impl Fn(usize, &[f64]) -> CMat) -> Self {
        let samples = (0..bx.n_samples()).map(|k| f(k, &bx.phi_point(k))).collect();
        QPOperator { bx, samples }
    }

    /// Diagonal Fourier multiplier `e_j -> g(j) e_j`.
    pub fn multiplier(bx: OpBox, g: impl Fn(i64) -> C64) -> Self {
        let n = bx.rows.len();
        let mut m = CMat::zeros(n, bx.cols.len());
        for (i, &r) in bx.rows.iter().enumerate() {
            if let Some(c) = bx.col_index(r) {
                m[(i, c)] = g(r);
            }
        }
        QPOperator { samples: vec![m; bx.n_samples()], bx }
    }

    /// Multiplication by a field, `(c u)_r = sum_c chat(r - c) u_c`.
    pub fn multiplication(bx: OpBox, f: &TruncatedField) -> Result<Self> {
        quantize(&Symbol::multiplication(f.clone()), bx)
    }

    pub fn nrows(&self) -> usize {
        self.bx.rows.len()
    }

    pub fn ncols(&self) -> usize {
        self.bx.cols.len()
    }

    fn check_same(&self, o: &Self) -> Result<()> {
        if self.bx != o.bx {
            return Err(Error::DimensionMismatch("operator boxes differ".into()));
        }
        Ok(())
    }

    pub fn add(&self, o: &Self) -> Result<Self> {
        self.check_same(o)?;
        Ok(QPOperator {
            bx: self.bx.clone(),
            samples: self.samples.iter().zip(&o.samples).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn sub(&self, o: &Self) -> Result<Self> {
        self.check_same(o)?;
        Ok(QPOperator {
            bx: self.bx.clone(),
            samples: self.samples.iter().zip(&o.samples).map(|(a, b)| a - b).collect(),
        })
    }

    pub fn scale(&self, s: C64) -> Self {
        QPOperator { bx: self.bx.clone(), samples: self.samples.iter().map(|a| a * s).collect() }
    }

    /// Multiplies sample `k` by the scalar `f(k)`.
    pub fn scale_by(&self, f: impl Fn(usize) -> C64) -> Self {
        QPOperator {
            bx: self.bx.clone(),
            samples: self.samples.iter().enumerate().map(|(k, a)| a * f(k)).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(&CMat) -> CMat) -> Self {
        QPOperator { bx: self.bx.clone(), samples: self.samples.iter().map(f).collect() }
    }

    pub fn try_map(&self, f: impl Fn(&CMat) -> Result<CMat>) -> Result<Self> {
        let samples = self.samples.iter().map(f).collect::<Result<Vec<_>>>()?;
        Ok(QPOperator { bx: self.bx.clone(), samples })
    }

    /// Composition `self o o`.
    pub fn mul(&self, o: &Self) -> Result<Self> {
        if self.bx.cols != o.bx.rows || self.bx.d != o.bx.d || self.bx.l != o.bx.l {
            return Err(Error::DimensionMismatch("incompatible composition".into()));
        }
        Ok(QPOperator {
            bx: OpBox { d: self.bx.d, l: self.bx.l, rows: self.bx.rows.clone(), cols: o.bx.cols.clone() },
            samples: self.samples.iter().zip(&o.samples).map(|(a, b)| a * b).collect(),
        })
    }

    pub fn inverse(&self) -> Result<Self> {
        if !self.bx.is_square() {
            return Err(Error::DimensionMismatch("inverse of a rectangular operator".into()));
        }
        self.try_map(linalg::inverse)
    }

    pub fn expm(&self) -> Result<Self> {
        self.try_map(linalg::expm)
    }

    /// `exp(A) - I`.
    pub fn expm1(&self) -> Result<Self> {
        self.try_map(linalg::expm1)
    }

    /// `L^2` adjoint.
    pub fn adjoint(&self) -> Self {
        QPOperator {
            bx: OpBox { d: self.bx.d, l: self.bx.l, rows: self.bx.cols.clone(), cols: self.bx.rows.clone() },
            samples: self.samples.iter().map(|a| a.adjoint()).collect(),
        }
    }

    /// Conjugation `U A U^{-1}`, returning the 1-norm condition of `U`
    /// (worst over the angle grid).
    pub fn conjugate(&self, u: &Self) -> Result<(Self, f64)> {
        let mut cond: f64 = 0.0;
        let mut out = Vec::with_capacity(self.samples.len());
        for (a, uk) in self.samples.iter().zip(&u.samples) {
            let inv = linalg::inverse(uk)?;
            cond = cond.max(linalg::norm1(uk) * linalg::norm1(&inv));
            out.push(uk * a * inv);
        }
        Ok((QPOperator { bx: self.bx.clone(), samples: out }, cond))
    }

    /// Fourier blocks `A(l)` in the storage order of [`OpBox::ell_shape`].
    pub fn blocks(&self) -> Vec<CMat> {
        let d = self.bx.d;
        let (nr, nc) = (self.nrows(), self.ncols());
        if d == 0 {
            return self.samples.clone();
        }
        let n = self.bx.nphi();
        let ns = self.samples.len();
        let mut dims = vec![n; d];
        dims.push(nr * nc);
        let mut data = vec![C64::new(0.0, 0.0); ns * nr * nc];
        for (k, s) in self.samples.iter().enumerate() {
            for c in 0..nc {
                for r in 0..nr {
                    data[k * nr * nc + c * nr + r] = s[(r, c)];
                }
            }
        }
        let axes: Vec<usize> = (0..d).collect();
        fft::forward(&mut data, &dims, &axes);
        let shape = self.bx.ell_shape();
        (0..shape.n_ell())
            .map(|i| {
                let ell = shape.ell_of(i);
                let mut idx = 0usize;
                for &e in &ell {
                    idx = idx * n + fft::bin(e, n);
                }
                CMat::from_column_slice(nr, nc, &data[idx * nr * nc..(idx + 1) * nr * nc])
            })
            .collect()
    }

    pub fn from_blocks(bx: OpBox, blocks: &[CMat]) -> Self {
        let d = bx.d;
        if d == 0 {
            return QPOperator { bx, samples: blocks.to_vec() };
        }
        let (nr, nc) = (bx.rows.len(), bx.cols.len());
        let n = bx.nphi();
        let shape = bx.ell_shape();
        let ns = bx.n_samples();
        let mut dims = vec![n; d];
        dims.push(nr * nc);
        let mut data = vec![C64::new(0.0, 0.0); ns * nr * nc];
        for (i, b) in blocks.iter().enumerate() {
            let ell = shape.ell_of(i);
            let mut idx = 0usize;
            for &e in &ell {
                idx = idx * n + fft::bin(e, n);
            }
            data[idx * nr * nc..(idx + 1) * nr * nc].copy_from_slice(b.as_slice());
        }
        let axes: Vec<usize> = (0..d).collect();
        fft::inverse(&mut data, &dims, &axes);
        let samples = (0..ns)
            .map(|k| CMat::from_column_slice(nr, nc, &data[k * nr * nc..(k + 1) * nr * nc]))
            .collect();
        QPOperator { bx, samples }
    }

    /// Applies `f(l, A(l))` to every Fourier block.
    pub fn map_blocks(&self, f: impl Fn(&[i64], &CMat) -> CMat) -> Self {
        let shape = self.bx.ell_shape();
        let blocks: Vec<CMat> = self
            .blocks()
            .iter()
            .enumerate()
            .map(|(i, b)| f(&shape.ell_of(i), b))
            .collect();
        Self::from_blocks(self.bx.clone(), &blocks)
    }

    /// Entry `A_j^{j'}(l)`.
    pub fn entry(&self, ell: &[i64], j: i64, jp: i64) -> C64 {
        let (Some(r), Some(c)) = (self.bx.row_index(j), self.bx.col_index(jp)) else {
            return C64::new(0.0, 0.0);
        };
        let Some(i) = self.bx.ell_shape().ell_index(ell) else {
            return C64::new(0.0, 0.0);
        };
        self.blocks()[i][(r, c)]
    }

    /// Spectral `omega . d_phi` of the family.
    pub fn omega_dphi(&self, omega: &[f64]) -> Self {
        if self.bx.d == 0 {
            return self.scale(C64::new(0.0, 0.0));
        }
        self.map_blocks(|ell, b| b * C64::new(0.0, dot(omega, ell)))
    }

    /// `d_{phi_m}`, multiplying block `l` by `i l_m`.
    pub fn dphi(&self, m: usize) -> Self {
        self.map_blocks(|ell, b| b * C64::new(0.0, ell[m] as f64))
    }

    /// Entrywise modulus of the blocks.
    pub fn majorant(&self) -> Self {
        self.map_blocks(|_, b| b.map(|z| C64::new(z.norm(), 0.0)))
    }

    /// Keeps blocks with `|l| <= n`.
    pub fn smooth(&self, n: f64) -> Self {
        self.map_blocks(|ell, b| if ell_len(ell) <= n { b.clone() } else { b * C64::new(0.0, 0.0) })
    }

    /// Multiplies block `l` by `<l>^b`.
    pub fn phi_weight(&self, b: f64) -> Self {
        self.map_blocks(|ell, m| m * C64::new(bracket(ell, 0).powf(b), 0.0))
    }

    /// Trigonometric interpolation of the family at arbitrary angles.
    pub fn eval_at(&self, points: &[Vec<f64>]) -> Self {
        let blocks = self.blocks();
        let shape = self.bx.ell_shape();
        let ells = shape.ells();
        let samples = points
            .iter()
            .map(|p| {
                let mut acc = CMat::zeros(self.nrows(), self.ncols());
                for (ell, b) in ells.iter().zip(&blocks) {
                    acc += b * C64::from_polar(1.0, dot(p, ell));
                }
                acc
            })
            .collect();
        QPOperator { bx: self.bx.clone(), samples }
    }

    /// Box matrix indexed by `(l, j)`, block circulant in `l`.
    pub fn dense(&self) -> CMat {
        let shape = self.bx.ell_shape();
        let ne = shape.n_ell();
        let (nr, nc) = (self.nrows(), self.ncols());
        let blocks = self.blocks();
        let mut m = CMat::zeros(ne * nr, ne * nc);
        let n = self.bx.nphi() as i64;
        let l = self.bx.l as i64;
        let wrap = |v: i64| -> i64 {
            let r = v.rem_euclid(n);
            if r > l {
                r - n
            } else {
                r
            }
        };
        for a in 0..ne {
            let ea = shape.ell_of(a);
            for b in 0..ne {
                let eb = shape.ell_of(b);
                let diff: Vec<i64> = ea.iter().zip(&eb).map(|(x, y)| wrap(x - y)).collect();
                let bi = shape.ell_index(&diff).unwrap();
                m.view_mut((a * nr, b * nc), (nr, nc)).copy_from(&blocks[bi]);
            }
        }
        m
    }

    /// Box matrix of `omega . d_phi + A`.
    pub fn dense_with_omega(&self, omega: &[f64]) -> CMat {
        let mut m = self.dense();
        let shape = self.bx.ell_shape();
        let nr = self.nrows();
        for a in 0..shape.n_ell() {
            let w = dot(omega, &shape.ell_of(a));
            for r in 0..nr {
                let c = self.bx.col_index(self.bx.rows[r]).expect("square box");
                m[(a * nr + r, a * nr + c)] += C64::new(0.0, w);
            }
        }
        m
    }

    /// Applies the operator to a field whose space modes cover the columns.
    pub fn apply(&self, u: &TruncatedField) -> Result<TruncatedField> {
        if u.shape.d != self.bx.d {
            return Err(Error::DimensionMismatch("angle dimension".into()));
        }
        let n = self.bx.nphi();
        let slices = u.x_slices(n);
        let jm = u.shape.j as i64;
        let rows_j = self.bx.rows.iter().map(|r| r.unsigned_abs() as usize).max().unwrap_or(0);
        let out_j = rows_j.max(u.shape.j);
        let out_slices: Vec<Vec<C64>> = slices
            .iter()
            .zip(&self.samples)
            .map(|(s, a)| {
                let v = nalgebra::DVector::from_iterator(
                    self.ncols(),
                    self.bx.cols.iter().map(|&c| if c.abs() <= jm { s[(c + jm) as usize] } else { C64::new(0.0, 0.0) }),
                );
                let w = a * v;
                let mut out = vec![C64::new(0.0, 0.0); 2 * out_j + 1];
                for (i, &r) in self.bx.rows.iter().enumerate() {
                    out[(r + out_j as i64) as usize] = w[i];
                }
                out
            })
            .collect();
        let shape = FieldShape::new(u.shape.d, if self.bx.d == 0 { 0 } else { self.bx.l }, out_j);
        Ok(TruncatedField::from_x_slices(&out_slices, shape, false))
    }

    /// Largest entry modulus over all samples.
    pub fn max_abs(&self) -> f64 {
        self.samples.iter().map(linalg::max_abs).fold(0.0, f64::max)
    }

    /// Largest column norm of the box matrix, `sup_{j'} (sum_{l, j} |A_j^{j'}(l)|^2)^{1/2}`.
    pub fn column_norm(&self) -> f64 {
        let ns = self.samples.len() as f64;
        (0..self.ncols())
            .map(|c| {
                (self.samples.iter().map(|s| s.column(c).iter().map(|z| z.norm_sqr()).sum::<f64>()).sum::<f64>() / ns)
                    .sqrt()
            })
            .fold(0.0, f64::max)
    }

    /// Restricts to the given row and column modes.
    pub fn restrict(&self, rows: &[i64], cols: &[i64]) -> Result<Self> {
        let ri: Vec<usize> = rows
            .iter()
            .map(|r| self.bx.row_index(*r).ok_or_else(|| Error::DimensionMismatch(format!("row {r}"))))
            .collect::<Result<_>>()?;
        let ci: Vec<usize> = cols
            .iter()
            .map(|c| self.bx.col_index(*c).ok_or_else(|| Error::DimensionMismatch(format!("col {c}"))))
            .collect::<Result<_>>()?;
        Ok(QPOperator {
            bx: OpBox { d: self.bx.d, l: self.bx.l, rows: rows.to_vec(), cols: cols.to_vec() },
            samples: self.samples.iter().map(|s| CMat::from_fn(ri.len(), ci.len(), |a, b| s[(ri[a], ci[b])])).collect(),
        })
    }
}

/// Quantisation of a symbol on a box: entry `(r, c)` of sample `k` is
/// `sum_t chat_t(phi_k, r - c) g_t(c)`.
pub fn quantize(sym: &Symbol, bx: OpBox) -> Result<QPOperator> {
    let n = bx.nphi();
    let mut out = QPOperator::zeros(bx.clone());
    for t in &sym.terms {
        if t.coeff.shape.d != bx.d {
            return Err(Error::DimensionMismatch(format!(
                "symbol has {} angles, box has {}",
                t.coeff.shape.d, bx.d
            )));
        }
        let slices = t.coeff.x_slices(n);
        let jm = t.coeff.shape.j as i64;
        let g: Vec<C64> = bx.cols.iter().map(|&c| t.mult.eval(c)).collect();
        for (k, s) in slices.iter().enumerate() {
            let m = &mut out.samples[k];
            for (ci, &c) in bx.cols.iter().enumerate() {
                if g[ci] == C64::new(0.0, 0.0) {
                    continue;
                }
                for (ri, &r) in bx.rows.iter().enumerate() {
                    let dlt = r - c;
                    if dlt.abs() <= jm {
                        m[(ri, ci)] += s[(dlt + jm) as usize] * g[ci];
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Columns `cols` of `A o B` computed with an intermediate box padded so
/// that the product is exact for band-limited coefficients.
pub fn compose_exact(a: &Symbol, b: &Symbol, d: usize, l: usize, rows: &[i64], cols: &[i64]) -> Result<QPOperator> {
    let pad = b.shape().map(|s| s.j).unwrap_or(0) as i64;
    let lo = cols.iter().min().copied().unwrap_or(0) - pad;
    let hi = cols.iter().max().copied().unwrap_or(0) + pad;
    let mid: Vec<i64> = (lo..=hi).collect();
    let qa = quantize(a, OpBox { d, l, rows: rows.to_vec(), cols: mid.clone() })?;
    let qb = quantize(b, OpBox { d, l, rows: mid, cols: cols.to_vec() })?;
    qa.mul(&qb)
}

/// Composition expansion and its remainder matrix on the box:
/// `Op(a) Op(b) = Op(a # b) + R`.
pub fn compose(a: &Symbol, b: &Symbol, n: usize, bx: OpBox) -> Result<(Symbol, QPOperator)> {
    let sym = a.compose(b, n, None);
    let exact = compose_exact(a, b, bx.d, bx.l, &bx.rows, &bx.cols)?;
    let q = quantize(&sym, bx)?;
    Ok((sym, exact.sub(&q)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::Multiplier;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn field(seed: u64, shape: FieldShape) -> TruncatedField {
        TruncatedField::random(shape, 1.0, 0.5, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn derivative_and_multiplication_act_on_fields() {
        let bx = OpBox::square(1, 3, (-12..=12).collect());
        let u = field(1, FieldShape::new(1, 1, 4));
        let c = field(2, FieldShape::new(1, 1, 3));
        let dx = quantize(&Symbol::multiplier(FieldShape::new(1, 0, 0), Multiplier::Power(1)), bx.clone()).unwrap();
        let got = dx.apply(&u).unwrap();
        assert!(got.sub(&u.dx().resize(got.shape)).max_abs() < 1e-12);
        let m = QPOperator::multiplication(bx, &c).unwrap();
        let got = m.apply(&u).unwrap();
        let want = c.mul(&u);
        assert!(got.sub(&want.resize(got.shape)).max_abs() < 1e-12);
        assert!((m.entry(&[1], 2, -1) - c.get(&[1], 3)).norm() < 1e-13);
    }

    #[test]
    fn blocks_roundtrip_and_interpolation() {
        let bx = OpBox::square(2, 2, (-3..=3).collect());
        let a = QPOperator::multiplication(bx.clone(), &field(3, FieldShape::new(2, 2, 2))).unwrap();
        let back = QPOperator::from_blocks(bx.clone(), &a.blocks());
        assert!(back.sub(&a).unwrap().max_abs() < 1e-13);
        let pts: Vec<Vec<f64>> = (0..bx.n_samples()).map(|k| bx.phi_point(k)).collect();
        assert!(a.eval_at(&pts).sub(&a).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn angle_derivative_matches_coefficient_derivative() {
        let bx = OpBox::square(2, 3, (-4..=4).collect());
        let c = field(4, FieldShape::new(2, 2, 2));
        let w = [1.0, 0.618];
        let lhs = QPOperator::multiplication(bx.clone(), &c).unwrap().omega_dphi(&w);
        let rhs = QPOperator::multiplication(bx, &c.omega_dphi(&w)).unwrap();
        assert!(lhs.sub(&rhs).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn dense_matrix_with_frequency_term() {
        let bx = OpBox::square(1, 2, vec![-1, 1]);
        let m = QPOperator::zeros(bx).dense_with_omega(&[0.5]);
        for a in 0..5 {
            let ell = a as f64 - 2.0;
            assert!((m[(2 * a, 2 * a)] - C64::new(0.0, 0.5 * ell)).norm() < 1e-15);
        }
    }

    #[test]
    fn inverse_and_conjugation() {
        let bx = OpBox::square(1, 2, (-5..=5).collect());
        let a = QPOperator::multiplication(bx.clone(), &field(5, FieldShape::new(1, 2, 2)).scale(0.1)).unwrap();
        let u = QPOperator::identity(bx.clone()).add(&a).unwrap();
        let prod = u.mul(&u.inverse().unwrap()).unwrap();
        assert!(prod.sub(&QPOperator::identity(bx.clone())).unwrap().max_abs() < 1e-13);
        let (c, cond) = a.conjugate(&QPOperator::identity(bx)).unwrap();
        assert!(c.sub(&a).unwrap().max_abs() < 1e-15);
        assert_eq!(cond, 1.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn dense_is_multiplicative(seed in 0u64..10_000) {
            let bx = OpBox::square(1, 2, (-4..=4).collect());
            let sh = FieldShape::new(1, 2, 3);
            let a = QPOperator::multiplication(bx.clone(), &field(seed, sh)).unwrap();
            let b = quantize(&Symbol::term(field(seed + 1, sh), Multiplier::Power(1)), bx).unwrap();
            let lhs = a.mul(&b).unwrap().dense();
            let rhs = a.dense() * b.dense();
            prop_assert!(linalg::max_abs(&(lhs - &rhs)) < 1e-12 * linalg::max_abs(&rhs));
        }

        #[test]
        fn adjoint_is_involutive_and_symmetrises(seed in 0u64..10_000) {
            let bx = OpBox::square(1, 2, (-4..=4).collect());
            let a = quantize(&Symbol::term(field(seed, FieldShape::new(1, 1, 2)), Multiplier::Power(1)), bx).unwrap();
            prop_assert!(a.adjoint().adjoint().sub(&a).unwrap().max_abs() == 0.0);
            let h = a.add(&a.adjoint()).unwrap();
            let chk = crate::algebra::structure_check(&h, crate::algebra::StructureKind::SelfAdjoint, 1e-12).unwrap();
            prop_assert!(chk.passed, "{}", chk.defect);
        }
    }
}
