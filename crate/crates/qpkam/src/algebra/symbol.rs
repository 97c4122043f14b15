use crate::error::{Error, Result};
use crate::spaces::{FieldShape, TruncatedField};
use num_complex::Complex64 as C64;
use std::f64::consts::PI;

const TWO_PI: f64 = 2.0 * PI;

/// Generalised binomial coefficient `m (m-1) ... (m-n+1) / n!`.
pub fn binom(m: i64, n: usize) -> f64 {
    let mut r = 1.0;
    for i in 0..n {
        r *= (m - i as i64) as f64 / (i + 1) as f64;
    }
    r
}

/// Fourier multiplier values on the integers `|xi| <= jmax`.
#[derive(Clone, Debug, PartialEq)]
pub struct MultTable {
    pub jmax: i64,
    pub vals: Vec<C64>,
    /// Order used for bookkeeping and norms.
    pub order: i32,
}

impl MultTable {
    pub fn from_fn(jmax: i64, order: i32, f: impl Fn(i64) -> C64) -> Self {
        MultTable { jmax, vals: (-jmax..=jmax).map(f).collect(), order }
    }
    pub fn get(&self, xi: i64) -> C64 {
        if xi.abs() > self.jmax {
            C64::new(0.0, 0.0)
        } else {
            self.vals[(xi + self.jmax) as usize]
        }
    }
}

/// Multiplier part of a symbol term.
#[derive(Clone, Debug, PartialEq)]
pub enum Multiplier {
    /// Identity (no cutoff): a pure multiplication operator.
    One,
    /// `chi_0(xi) (i 2 pi xi)^k`, vanishing at `xi = 0`.
    Power(i32),
    /// Tabulated multiplier.
    Table(MultTable),
}

impl Multiplier {
    pub fn order(&self) -> i32 {
        match self {
            Multiplier::One => 0,
            Multiplier::Power(k) => *k,
            Multiplier::Table(t) => t.order,
        }
    }

    pub fn eval(&self, xi: i64) -> C64 {
        match self {
            Multiplier::One => C64::new(1.0, 0.0),
            Multiplier::Power(k) => {
                if xi == 0 {
                    C64::new(0.0, 0.0)
                } else {
                    C64::new(0.0, TWO_PI * xi as f64).powi(*k)
                }
            }
            Multiplier::Table(t) => t.get(xi),
        }
    }

    /// `(i 2 pi)^{-beta} / beta! * d_xi^beta` of the multiplier, as a scalar
    /// times a multiplier. Powers are differentiated exactly, tables by
    /// iterated central differences.
    pub fn dxi_scaled(&self, beta: usize) -> Option<(C64, Multiplier)> {
        if beta == 0 {
            return Some((C64::new(1.0, 0.0), self.clone()));
        }
        match self {
            Multiplier::One => None,
            Multiplier::Power(k) => {
                let b = binom(*k as i64, beta);
                if b == 0.0 {
                    None
                } else {
                    Some((C64::new(b, 0.0), Multiplier::Power(k - beta as i32)))
                }
            }
            Multiplier::Table(t) => {
                let mut v: Vec<C64> = t.vals.clone();
                let n = v.len() as i64;
                for _ in 0..beta {
                    let old = v.clone();
                    for i in 0..n {
                        let up = if i + 1 < n { old[(i + 1) as usize] } else { old[i as usize] };
                        let dn = if i >= 1 { old[(i - 1) as usize] } else { old[i as usize] };
                        let h = if i + 1 < n && i >= 1 { 2.0 } else { 1.0 };
                        v[i as usize] = (up - dn) / h;
                    }
                }
                let fact: f64 = (1..=beta).map(|k| k as f64).product();
                let scale = C64::new(0.0, TWO_PI).powi(-(beta as i32)) / fact;
                let vals = v.into_iter().map(|z| z * scale).collect();
                Some((
                    C64::new(1.0, 0.0),
                    Multiplier::Table(MultTable { jmax: t.jmax, vals, order: t.order - beta as i32 }),
                ))
            }
        }
    }

    pub fn mul(&self, o: &Multiplier) -> Multiplier {
        match (self, o) {
            (Multiplier::One, m) | (m, Multiplier::One) => m.clone(),
            (Multiplier::Power(a), Multiplier::Power(b)) => Multiplier::Power(a + b),
            (Multiplier::Table(t), m) | (m, Multiplier::Table(t)) => {
                let vals = (-t.jmax..=t.jmax).map(|xi| t.get(xi) * m.eval(xi)).collect();
                Multiplier::Table(MultTable { jmax: t.jmax, vals, order: t.order + m.order() })
            }
        }
    }
}

/// One term `c(phi, x) g(xi)` of a symbol.
#[derive(Clone, Debug, PartialEq)]
pub struct SymbolTerm {
    pub coeff: TruncatedField,
    pub mult: Multiplier,
}

/// Symbol of a pseudo-differential operator, a finite sum of terms
/// `c(phi, x) g(xi)`, quantised as `u -> sum_t c_t(phi, x) Op(g_t) u`.
#[derive(Clone, Debug, PartialEq)]
pub struct Symbol {
    pub terms: Vec<SymbolTerm>,
}

impl Symbol {
    pub fn zero() -> Self {
        Symbol { terms: vec![] }
    }

    /// `sum_k a_{m-k} d_x^{m-k}` with `coeffs[k] = a_{m-k}`.
    pub fn homogeneous(m: i32, coeffs: Vec<TruncatedField>) -> Self {
        Symbol {
            terms: coeffs
                .into_iter()
                .enumerate()
                .map(|(k, c)| SymbolTerm { coeff: c, mult: Multiplier::Power(m - k as i32) })
                .collect(),
        }
    }

    pub fn term(coeff: TruncatedField, mult: Multiplier) -> Self {
        Symbol { terms: vec![SymbolTerm { coeff, mult }] }
    }

    /// Multiplication by a field.
    pub fn multiplication(c: TruncatedField) -> Self {
        Self::term(c, Multiplier::One)
    }

    /// Fourier multiplier with constant coefficient one.
    pub fn multiplier(shape: FieldShape, m: Multiplier) -> Self {
        Self::term(TruncatedField::constant(shape, 1.0), m)
    }

    pub fn order(&self) -> i32 {
        self.terms.iter().map(|t| t.mult.order()).max().unwrap_or(i32::MIN)
    }

    pub fn d(&self) -> usize {
        self.terms.first().map(|t| t.coeff.shape.d).unwrap_or(0)
    }

    /// Coefficient box covering all terms.
    pub fn shape(&self) -> Option<FieldShape> {
        let mut it = self.terms.iter().map(|t| t.coeff.shape);
        let first = it.next()?;
        Some(it.fold(first, |a, b| a.max(&b)))
    }

    pub fn add(&self, o: &Symbol) -> Symbol {
        let mut terms = self.terms.clone();
        terms.extend(o.terms.iter().cloned());
        Symbol { terms }.simplify()
    }

    pub fn scale(&self, s: C64) -> Symbol {
        Symbol {
            terms: self
                .terms
                .iter()
                .map(|t| SymbolTerm { coeff: t.coeff.scale_c(s), mult: t.mult.clone() })
                .collect(),
        }
    }

    pub fn sub(&self, o: &Symbol) -> Symbol {
        self.add(&o.scale(C64::new(-1.0, 0.0)))
    }

    /// Merges terms carrying the same multiplier.
    pub fn simplify(&self) -> Symbol {
        let mut out: Vec<SymbolTerm> = Vec::new();
        for t in &self.terms {
            if let Some(e) = out.iter_mut().find(|e| e.mult == t.mult) {
                e.coeff = e.coeff.add(&t.coeff);
            } else {
                out.push(t.clone());
            }
        }
        Symbol { terms: out }
    }

    /// Coefficient of `Power(k)` (zero field if absent).
    pub fn coeff_of_power(&self, k: i32, shape: FieldShape) -> TruncatedField {
        let mut acc = TruncatedField::zeros(shape, true);
        for t in &self.terms {
            if t.mult == Multiplier::Power(k) {
                acc = acc.add(&t.coeff);
            }
        }
        acc
    }

    /// `a(phi, x, xi)`.
    pub fn eval(&self, phi: &[f64], x: f64, xi: i64) -> C64 {
        self.terms.iter().map(|t| t.coeff.eval(phi, x) * t.mult.eval(xi)).sum()
    }

    /// The field `a(., ., xi)` for fixed integer `xi`.
    pub fn field_at(&self, xi: i64) -> Option<TruncatedField> {
        let shape = self.shape()?;
        let mut acc = TruncatedField::zeros(shape, false);
        for t in &self.terms {
            acc = acc.add(&t.coeff.scale_c(t.mult.eval(xi)));
        }
        Some(acc)
    }

    /// `(i 2 pi)^{-beta} / beta! d_xi^beta a`.
    pub fn dxi_scaled(&self, beta: usize) -> Symbol {
        Symbol {
            terms: self
                .terms
                .iter()
                .filter_map(|t| {
                    t.mult
                        .dxi_scaled(beta)
                        .map(|(s, m)| SymbolTerm { coeff: t.coeff.scale_c(s), mult: m })
                })
                .collect(),
        }
    }

    /// `d_x^beta` of every coefficient.
    pub fn dx(&self, beta: usize) -> Symbol {
        Symbol {
            terms: self
                .terms
                .iter()
                .map(|t| SymbolTerm { coeff: t.coeff.dx_n(beta), mult: t.mult.clone() })
                .collect(),
        }
    }

    /// Termwise product of symbols (no `xi`-derivatives), optionally
    /// truncating coefficient boxes.
    pub fn product(&self, o: &Symbol, cap: Option<FieldShape>) -> Symbol {
        let mut terms = Vec::new();
        for a in &self.terms {
            for b in &o.terms {
                let coeff = match cap {
                    Some(c) => a.coeff.mul_into(&b.coeff, a.coeff.shape.sum(&b.coeff.shape).min_with(&c)),
                    None => a.coeff.mul(&b.coeff),
                };
                terms.push(SymbolTerm { coeff, mult: a.mult.mul(&b.mult) });
            }
        }
        Symbol { terms }.simplify()
    }

    /// Asymptotic expansion of the composition up to `n` derivatives:
    /// `sum_{beta <= n} (i 2 pi)^{-beta} / beta! d_xi^beta a d_x^beta b`.
    pub fn compose(&self, o: &Symbol, n: usize, cap: Option<FieldShape>) -> Symbol {
        let mut acc = Symbol::zero();
        for beta in 0..=n {
            let da = self.dxi_scaled(beta);
            if da.terms.is_empty() {
                continue;
            }
            let db = o.dx(beta);
            acc = acc.add(&da.product(&db, cap));
        }
        acc
    }

    /// Principal-symbol commutator expansion for homogeneous inputs
    /// `a d^m`, `b d^{m'}`:
    /// `sum_{n=1}^{N} (K_{n,m} a d^n b - K_{n,m'} d^n a b) d^{m+m'-n}`.
    pub fn commutator_homogeneous(
        a: &TruncatedField,
        m: i32,
        b: &TruncatedField,
        mp: i32,
        n_terms: usize,
    ) -> Symbol {
        let mut acc = Symbol::zero();
        for n in 1..=n_terms {
            let t1 = a.mul(&b.dx_n(n)).scale(binom(m as i64, n));
            let t2 = a.dx_n(n).mul(b).scale(binom(mp as i64, n));
            let c = t1.sub(&t2);
            acc = acc.add(&Symbol::term(c, Multiplier::Power(m + mp - n as i32)));
        }
        acc
    }

    /// `sum_t |c_t|_s sup_{|xi| <= jmax} |g_t(xi)| <xi>^{-order}`.
    pub fn size(&self, s: f64, jmax: i64) -> Result<f64> {
        let m = self.order() as f64;
        let mut tot = 0.0;
        for t in &self.terms {
            let mut sup: f64 = 0.0;
            for xi in -jmax..=jmax {
                let br = (xi.abs().max(1)) as f64;
                sup = sup.max(t.mult.eval(xi).norm() * br.powf(-m));
            }
            tot += t.coeff.sobolev_norm(s)? * sup;
        }
        Ok(tot)
    }
}

impl FieldShape {
    pub fn min_with(&self, o: &FieldShape) -> FieldShape {
        FieldShape { d: self.d, l: self.l.min(o.l), j: self.j.min(o.j) }
    }
}

/// Pseudo-differential norm
/// `max_{beta <= alpha} sup_xi |d_xi^beta a(., ., xi)|_s <xi>^{-m + beta}`
/// over `|xi| <= jmax`.
pub fn psido_norm(a: &Symbol, m: f64, s: f64, alpha: usize, jmax: i64) -> Result<f64> {
    if s < 0.0 {
        return Err(Error::InvalidField(format!("negative Sobolev index {s}")));
    }
    let mut best: f64 = 0.0;
    for beta in 0..=alpha {
        let fact: f64 = (1..=beta).map(|k| k as f64).product();
        let scale = (TWO_PI.powi(beta as i32) * fact) as f64;
        let d = a.dxi_scaled(beta);
        for xi in -jmax..=jmax {
            let Some(f) = d.field_at(xi) else { continue };
            let br = (xi.abs().max(1)) as f64;
            let v = f.sobolev_norm(s)? * scale * br.powf(-m + beta as f64);
            best = best.max(v);
        }
    }
    Ok(best)
}

/// Settings for [`exp_op`].
#[derive(Clone, Copy, Debug)]
pub struct ExpOptions {
    /// Number of series terms `N`.
    pub terms: usize,
    /// Derivatives kept in each composition.
    pub expansion: usize,
    /// Coefficient box of the result.
    pub shape: FieldShape,
    /// Sobolev index of the size proxy.
    pub s: f64,
    /// Largest admissible size of `a`.
    pub guard: f64,
}

/// Result of [`exp_op`]: the truncated series and a tail bound.
#[derive(Clone, Debug)]
pub struct ExpSeries {
    pub symbol: Symbol,
    pub tail_bound: f64,
}

/// Symbol of `exp(Op(a)) = sum_{k<=N} Op(a)^k / k!` for `a` of order at most 0.
pub fn exp_op(a: &Symbol, opt: ExpOptions) -> Result<ExpSeries> {
    if a.order() > 0 {
        return Err(Error::InvalidField(format!("exp of a symbol of order {}", a.order())));
    }
    let size = a.size(opt.s, opt.shape.j as i64)?;
    if !size.is_finite() || size > opt.guard {
        return Err(Error::Divergence(format!("|a| = {size:e} exceeds {}", opt.guard)));
    }
    let one = Symbol::multiplication(TruncatedField::constant(opt.shape, 1.0));
    let mut acc = one.clone();
    let mut power = one;
    for k in 1..=opt.terms {
        power = power
            .compose(a, opt.expansion, Some(opt.shape))
            .scale(C64::new(1.0 / k as f64, 0.0));
        power = Symbol {
            terms: power
                .terms
                .into_iter()
                .map(|t| SymbolTerm { coeff: t.coeff.resize(opt.shape), mult: t.mult })
                .collect(),
        };
        acc = acc.add(&power);
    }
    let n1 = (opt.terms + 1) as i32;
    let fact: f64 = (1..=opt.terms + 1).map(|k| k as f64).product();
    let tail_bound = size.powi(n1) / fact * size.exp();
    Ok(ExpSeries { symbol: acc, tail_bound })
}
