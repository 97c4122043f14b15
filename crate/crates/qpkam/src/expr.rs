//! Restricted expression grammar for perturbation densities `f(x, z0, z1)`.
//!
//! ```text
//! expr  := term (('+' | '-') term)*
//! term  := unary (('*' | '·') unary)*
//! unary := '-' unary | power
//! power := atom ('^' integer)?
//! atom  := number | pi | x | z0 | z1 | sin(expr) | cos(expr) | (expr)
//! ```
//!
//! `z0` and `z1` stand for `u` and `u_x`; `zeta0`, `ζ0`, `ζ₀` (and the
//! same for 1) are accepted as aliases.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Var {
    X,
    Z0,
    Z1,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(Var),
    Add(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    Pow(Box<Expr>, i32),
    Sin(Box<Expr>),
    Cos(Box<Expr>),
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr> {
        let toks = lex(src)?;
        let mut p = Parser { toks, pos: 0 };
        let e = p.expr()?;
        if p.pos != p.toks.len() {
            return Err(Error::Config(format!("unexpected {:?} in expression", p.toks[p.pos])));
        }
        Ok(e)
    }

    pub fn eval(&self, x: f64, z0: f64, z1: f64) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::Var(Var::X) => x,
            Expr::Var(Var::Z0) => z0,
            Expr::Var(Var::Z1) => z1,
            Expr::Add(a, b) => a.eval(x, z0, z1) + b.eval(x, z0, z1),
            Expr::Mul(a, b) => a.eval(x, z0, z1) * b.eval(x, z0, z1),
            Expr::Neg(a) => -a.eval(x, z0, z1),
            Expr::Pow(a, n) => a.eval(x, z0, z1).powi(*n),
            Expr::Sin(a) => a.eval(x, z0, z1).sin(),
            Expr::Cos(a) => a.eval(x, z0, z1).cos(),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Expr::Const(c) if *c == 0.0)
    }

    /// Symbolic partial derivative.
    pub fn diff(&self, v: Var) -> Expr {
        match self {
            Expr::Const(_) => Expr::Const(0.0),
            Expr::Var(w) => Expr::Const(if *w == v { 1.0 } else { 0.0 }),
            Expr::Add(a, b) => add(a.diff(v), b.diff(v)),
            Expr::Mul(a, b) => add(mul(a.diff(v), (**b).clone()), mul((**a).clone(), b.diff(v))),
            Expr::Neg(a) => neg(a.diff(v)),
            Expr::Pow(a, n) => match n {
                0 => Expr::Const(0.0),
                1 => a.diff(v),
                _ => mul(mul(Expr::Const(*n as f64), pow((**a).clone(), n - 1)), a.diff(v)),
            },
            Expr::Sin(a) => mul(Expr::Cos(a.clone()), a.diff(v)),
            Expr::Cos(a) => neg(mul(Expr::Sin(a.clone()), a.diff(v))),
        }
    }

    /// True when the expression does not involve `v`.
    pub fn independent_of(&self, v: Var) -> bool {
        match self {
            Expr::Const(_) => true,
            Expr::Var(w) => *w != v,
            Expr::Add(a, b) | Expr::Mul(a, b) => a.independent_of(v) && b.independent_of(v),
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Sin(a) | Expr::Cos(a) => a.independent_of(v),
        }
    }
}

fn add(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        _ if a.is_zero() => b,
        _ if b.is_zero() => a,
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x + y),
        _ => Expr::Add(Box::new(a), Box::new(b)),
    }
}

fn mul(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        _ if a.is_zero() || b.is_zero() => Expr::Const(0.0),
        (Expr::Const(x), _) if *x == 1.0 => b,
        (_, Expr::Const(y)) if *y == 1.0 => a,
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x * y),
        _ => Expr::Mul(Box::new(a), Box::new(b)),
    }
}

fn neg(a: Expr) -> Expr {
    match a {
        Expr::Const(c) => Expr::Const(-c),
        Expr::Neg(b) => *b,
        a => Expr::Neg(Box::new(a)),
    }
}

fn pow(a: Expr, n: i32) -> Expr {
    match n {
        0 => Expr::Const(1.0),
        1 => a,
        _ => Expr::Pow(Box::new(a), n),
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write!(f, "{c}"),
            Expr::Var(Var::X) => write!(f, "x"),
            Expr::Var(Var::Z0) => write!(f, "z0"),
            Expr::Var(Var::Z1) => write!(f, "z1"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Pow(a, n) => write!(f, "({a})^{n}"),
            Expr::Sin(a) => write!(f, "sin({a})"),
            Expr::Cos(a) => write!(f, "cos({a})"),
        }
    }
}

/// A density together with the partial derivatives in `(z0, z1)` up to
/// second order.
#[derive(Clone, Debug)]
pub struct Density {
    pub f: Expr,
    pub f0: Expr,
    pub f1: Expr,
    pub f00: Expr,
    pub f01: Expr,
    pub f11: Expr,
}

impl Density {
    pub fn new(f: Expr) -> Self {
        let f0 = f.diff(Var::Z0);
        let f1 = f.diff(Var::Z1);
        Density { f00: f0.diff(Var::Z0), f01: f0.diff(Var::Z1), f11: f1.diff(Var::Z1), f0, f1, f }
    }

    pub fn parse(src: &str) -> Result<Self> {
        Ok(Density::new(Expr::parse(src)?))
    }

    /// Second derivative in `z1` vanishes identically.
    pub fn is_semilinear(&self) -> bool {
        self.f11.is_zero()
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
}

fn lex(src: &str) -> Result<Vec<Tok>> {
    let src = src.replace('ζ', "zeta").replace('₀', "0").replace('₁', "1").replace('·', "*");
    let cs: Vec<char> = src.chars().collect();
    let mut out = vec![];
    let mut i = 0;
    while i < cs.len() {
        let c = cs[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let st = i;
            while i < cs.len() && (cs[i].is_ascii_digit() || cs[i] == '.') {
                i += 1;
            }
            if i < cs.len() && (cs[i] == 'e' || cs[i] == 'E') {
                let mut k = i + 1;
                if k < cs.len() && (cs[k] == '-' || cs[k] == '+') {
                    k += 1;
                }
                if k < cs.len() && cs[k].is_ascii_digit() {
                    i = k;
                    while i < cs.len() && cs[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let s: String = cs[st..i].iter().collect();
            out.push(Tok::Num(s.parse().map_err(|_| Error::Config(format!("bad number {s}")))?));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let st = i;
            while i < cs.len() && (cs[i].is_ascii_alphanumeric() || cs[i] == '_') {
                i += 1;
            }
            out.push(Tok::Ident(cs[st..i].iter().collect()));
        } else if "+-*/^()".contains(c) {
            out.push(Tok::Op(c));
            i += 1;
        } else {
            return Err(Error::Config(format!("unexpected character {c:?} in expression")));
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<Tok>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(&Tok::Op(c)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> Result<()> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(Error::Config(format!("expected '{c}' in expression")))
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut e = self.term()?;
        loop {
            if self.eat('+') {
                e = Expr::Add(Box::new(e), Box::new(self.term()?));
            } else if self.eat('-') {
                e = Expr::Add(Box::new(e), Box::new(Expr::Neg(Box::new(self.term()?))));
            } else {
                return Ok(e);
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut e = self.unary()?;
        while self.eat('*') {
            e = Expr::Mul(Box::new(e), Box::new(self.unary()?));
        }
        if self.peek() == Some(&Tok::Op('/')) {
            return Err(Error::Config("division is not part of the grammar".into()));
        }
        Ok(e)
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat('-') {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        let base = self.atom()?;
        if self.eat('^') {
            let neg = self.eat('-');
            match self.toks.get(self.pos).cloned() {
                Some(Tok::Num(n)) if n.fract() == 0.0 && n <= 64.0 => {
                    self.pos += 1;
                    let n = n as i32;
                    return Ok(Expr::Pow(Box::new(base), if neg { -n } else { n }));
                }
                _ => return Err(Error::Config("exponent must be an integer".into())),
            }
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        let t = self.toks.get(self.pos).cloned().ok_or_else(|| Error::Config("unexpected end of expression".into()))?;
        self.pos += 1;
        match t {
            Tok::Num(v) => Ok(Expr::Const(v)),
            Tok::Op('(') => {
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Tok::Ident(name) => match name.as_str() {
                "pi" => Ok(Expr::Const(std::f64::consts::PI)),
                "x" => Ok(Expr::Var(Var::X)),
                "z0" | "zeta0" | "u" => Ok(Expr::Var(Var::Z0)),
                "z1" | "zeta1" | "ux" => Ok(Expr::Var(Var::Z1)),
                "sin" | "cos" => {
                    self.expect('(')?;
                    let e = self.expr()?;
                    self.expect(')')?;
                    Ok(if name == "sin" { Expr::Sin(Box::new(e)) } else { Expr::Cos(Box::new(e)) })
                }
                _ => Err(Error::Config(format!("unknown identifier {name}"))),
            },
            Tok::Op(c) => Err(Error::Config(format!("unexpected '{c}' in expression"))),
        }
    }
}
