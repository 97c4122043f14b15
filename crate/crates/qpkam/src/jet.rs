//! Truncated Taylor series in one real variable.
//!
//! A jet of order `K` stores `f(x0+h) = sum_k c_k h^k` for `k <= K`.

use std::ops::{Add, Mul, Neg, Sub};

#[derive(Clone, Debug, PartialEq)]
pub struct Jet {
    pub c: Vec<f64>,
}

impl Jet {
    pub fn constant(v: f64, order: usize) -> Self {
        let mut c = vec![0.0; order + 1];
        c[0] = v;
        Jet { c }
    }

    /// Jet from the derivatives `f, f', f'', ...` at the base point.
    pub fn from_derivatives(d: &[f64]) -> Self {
        let mut fact = 1.0;
        let c = d
            .iter()
            .enumerate()
            .map(|(k, v)| {
                if k > 0 {
                    fact *= k as f64;
                }
                v / fact
            })
            .collect();
        Jet { c }
    }

    pub fn order(&self) -> usize {
        self.c.len() - 1
    }

    /// `n`-th derivative at the base point.
    pub fn derivative(&self, n: usize) -> f64 {
        if n >= self.c.len() {
            return 0.0;
        }
        let fact: f64 = (1..=n).map(|k| k as f64).product();
        self.c[n] * fact
    }

    pub fn scale(&self, s: f64) -> Jet {
        Jet { c: self.c.iter().map(|v| v * s).collect() }
    }

    pub fn add_scalar(&self, s: f64) -> Jet {
        let mut r = self.clone();
        r.c[0] += s;
        r
    }

    pub fn recip(&self) -> Jet {
        let k = self.c.len();
        let mut r = vec![0.0; k];
        r[0] = 1.0 / self.c[0];
        for n in 1..k {
            let mut s = 0.0;
            for i in 1..=n {
                s += self.c[i] * r[n - i];
            }
            r[n] = -s / self.c[0];
        }
        Jet { c: r }
    }

    pub fn div(&self, other: &Jet) -> Jet {
        self * &other.recip()
    }

    /// Real power `f^p` for `f(x0) > 0`.
    pub fn powf(&self, p: f64) -> Jet {
        let k = self.c.len();
        let a0 = self.c[0];
        let mut r = vec![0.0; k];
        r[0] = a0.powf(p);
        for n in 1..k {
            let mut s = 0.0;
            for i in 1..=n {
                s += (p * i as f64 - (n - i) as f64) * self.c[i] * r[n - i];
            }
            r[n] = s / (n as f64 * a0);
        }
        Jet { c: r }
    }
}

impl Add for &Jet {
    type Output = Jet;
    fn add(self, o: &Jet) -> Jet {
        Jet { c: self.c.iter().zip(&o.c).map(|(a, b)| a + b).collect() }
    }
}

impl Sub for &Jet {
    type Output = Jet;
    fn sub(self, o: &Jet) -> Jet {
        Jet { c: self.c.iter().zip(&o.c).map(|(a, b)| a - b).collect() }
    }
}

impl Neg for &Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}

impl Mul for &Jet {
    type Output = Jet;
    fn mul(self, o: &Jet) -> Jet {
        let k = self.c.len().min(o.c.len());
        let mut r = vec![0.0; k];
        for n in 0..k {
            for i in 0..=n {
                r[n] += self.c[i] * o.c[n - i];
            }
        }
        Jet { c: r }
    }
}
