//! Scalar expressions over `x1..xn` with exact gradients and Hessians.
//!
//! Expressions are parsed once into an [`Expr`] tree and evaluated with
//! second-order forward-mode jets: each intermediate carries its value, the
//! `n` first partials and the packed upper triangle of the Hessian.
//!
//! Grammar (lowest to highest precedence):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := ('-' | '+') unary | power
//! power   := primary ('^' unary)?          // right associative
//! primary := number | xK | func '(' expr ')' | '(' expr ')'
//! func    := sin | cos | exp | log | sqrt
//! ```

use std::fmt;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Integer exponents up to this magnitude are expanded into products.
const MAX_INT_POW: i32 = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("syntax error at position {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unknown identifier '{name}' at position {pos}")]
    UnknownIdentifier { pos: usize, name: String },
    #[error("variable x{index} at position {pos} is out of range 1..={n}")]
    IndexOutOfRange { pos: usize, index: usize, n: usize },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("domain violation in {op}: argument {value} of `{subexpr}`")]
    Domain {
        op: &'static str,
        value: f64,
        subexpr: String,
    },
    #[error("point has {found} coordinates, expression expects {expected}")]
    Arity { expected: usize, found: usize },
    #[error("non-finite input coordinate {0}")]
    NonFinite(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
        }
    }

    fn from_name(s: &str) -> Option<Func> {
        Some(match s {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    /// Zero-based variable index.
    Var(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    /// Integer exponent, expanded by repeated multiplication.
    PowI(Box<Expr>, i32),
    /// Constant real exponent; the base must be positive.
    PowF(Box<Expr>, f64),
    /// General power `a^b = exp(b log a)`.
    Pow(Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write!(f, "{c}"),
            Expr::Var(i) => write!(f, "x{}", i + 1),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Div(a, b) => write!(f, "({a} / {b})"),
            Expr::PowI(a, k) => write!(f, "({a}^{k})"),
            Expr::PowF(a, c) => write!(f, "({a}^{c})"),
            Expr::Pow(a, b) => write!(f, "({a}^{b})"),
            Expr::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}

impl Expr {
    /// Largest zero-based variable index referenced, if any.
    pub fn max_var(&self) -> Option<usize> {
        match self {
            Expr::Const(_) => None,
            Expr::Var(i) => Some(*i),
            Expr::Neg(a) | Expr::PowI(a, _) | Expr::PowF(a, _) | Expr::Call(_, a) => a.max_var(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) | Expr::Pow(a, b) => {
                match (a.max_var(), b.max_var()) {
                    (Some(x), Some(y)) => Some(x.max(y)),
                    (x, y) => x.or(y),
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
}

fn tokenize(text: &str) -> Result<Vec<(usize, Tok)>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            // exponent part: e, E followed by optional sign and digits
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    while j < chars.len() && chars[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            let s: String = chars[start..i].iter().collect();
            let v = s.parse::<f64>().map_err(|_| ParseError::Syntax {
                pos: start,
                msg: format!("malformed number '{s}'"),
            })?;
            out.push((start, Tok::Num(v)));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push((start, Tok::Ident(chars[start..i].iter().collect())));
        } else if "+-*/^".contains(c) {
            out.push((i, Tok::Op(c)));
            i += 1;
        } else if c == '(' {
            out.push((i, Tok::LParen));
            i += 1;
        } else if c == ')' {
            out.push((i, Tok::RParen));
            i += 1;
        } else {
            return Err(ParseError::Syntax {
                pos: i,
                msg: format!("unexpected character '{c}'"),
            });
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    at: usize,
    n: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.at).map(|(_, t)| t)
    }

    fn pos(&self) -> usize {
        self.toks.get(self.at).map(|(p, _)| *p).unwrap_or(self.end)
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError::Syntax {
            pos: self.pos(),
            msg: msg.into(),
        })
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        while let Some(Tok::Op(c @ ('+' | '-'))) = self.peek() {
            let c = *c;
            self.at += 1;
            let rhs = self.term()?;
            lhs = if c == '+' {
                Expr::Add(Box::new(lhs), Box::new(rhs))
            } else {
                Expr::Sub(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        while let Some(Tok::Op(c @ ('*' | '/'))) = self.peek() {
            let c = *c;
            self.at += 1;
            let rhs = self.unary()?;
            lhs = if c == '*' {
                Expr::Mul(Box::new(lhs), Box::new(rhs))
            } else {
                Expr::Div(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            Some(Tok::Op('-')) => {
                self.at += 1;
                Ok(Expr::Neg(Box::new(self.unary()?)))
            }
            Some(Tok::Op('+')) => {
                self.at += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.primary()?;
        if let Some(Tok::Op('^')) = self.peek() {
            self.at += 1;
            let exponent = self.unary()?;
            return Ok(make_pow(base, exponent));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let pos = self.pos();
        let tok = match self.toks.get(self.at) {
            Some((_, t)) => t.clone(),
            None => return self.err("unexpected end of expression"),
        };
        self.at += 1;
        match tok {
            Tok::Num(v) => Ok(Expr::Const(v)),
            Tok::LParen => {
                let e = self.expr()?;
                match self.peek() {
                    Some(Tok::RParen) => {
                        self.at += 1;
                        Ok(e)
                    }
                    _ => self.err("expected ')'"),
                }
            }
            Tok::Ident(name) => {
                if let Some(func) = Func::from_name(&name) {
                    match self.peek() {
                        Some(Tok::LParen) => {}
                        _ => return self.err(format!("expected '(' after {name}")),
                    }
                    self.at += 1;
                    let arg = self.expr()?;
                    match self.peek() {
                        Some(Tok::RParen) => self.at += 1,
                        _ => return self.err("expected ')'"),
                    }
                    return Ok(Expr::Call(func, Box::new(arg)));
                }
                if let Some(digits) = name.strip_prefix('x') {
                    if !digits.is_empty() && digits.chars().all(|c| c.is_ascii_digit()) {
                        let index: usize = digits.parse().map_err(|_| ParseError::Syntax {
                            pos,
                            msg: format!("bad variable index in '{name}'"),
                        })?;
                        if index == 0 || index > self.n {
                            return Err(ParseError::IndexOutOfRange {
                                pos,
                                index,
                                n: self.n,
                            });
                        }
                        return Ok(Expr::Var(index - 1));
                    }
                }
                Err(ParseError::UnknownIdentifier { pos, name })
            }
            Tok::Op(c) => Err(ParseError::Syntax {
                pos,
                msg: format!("unexpected operator '{c}'"),
            }),
            Tok::RParen => Err(ParseError::Syntax {
                pos,
                msg: "unexpected ')'".into(),
            }),
        }
    }
}

fn const_value(e: &Expr) -> Option<f64> {
    match e {
        Expr::Const(c) => Some(*c),
        Expr::Neg(a) => const_value(a).map(|c| -c),
        _ => None,
    }
}

fn make_pow(base: Expr, exponent: Expr) -> Expr {
    match const_value(&exponent) {
        Some(c) if c.fract() == 0.0 && c.abs() <= MAX_INT_POW as f64 => {
            Expr::PowI(Box::new(base), c as i32)
        }
        Some(c) => Expr::PowF(Box::new(base), c),
        None => Expr::Pow(Box::new(base), Box::new(exponent)),
    }
}

/// Parses `text` as an expression in the variables `x1..xn`.
pub fn parse_expr(text: &str, n: usize) -> Result<Expr, ParseError> {
    if text.trim().is_empty() {
        return Err(ParseError::Syntax {
            pos: 0,
            msg: "empty expression".into(),
        });
    }
    let toks = tokenize(text)?;
    let mut p = Parser {
        toks,
        at: 0,
        n,
        end: text.chars().count(),
    };
    let e = p.expr()?;
    if p.at != p.toks.len() {
        return p.err("unexpected trailing input");
    }
    Ok(e)
}

/// Second-order jet: value, gradient and packed upper-triangular Hessian.
#[derive(Debug, Clone)]
struct Jet {
    v: f64,
    g: Vec<f64>,
    h: Vec<f64>,
}

#[inline]
fn tri(i: usize, j: usize, n: usize) -> usize {
    // row-major packing of the upper triangle, i <= j
    i * n - i * (i + 1) / 2 + j
}

impl Jet {
    fn constant(v: f64, n: usize) -> Jet {
        Jet {
            v,
            g: vec![0.0; n],
            h: vec![0.0; n * (n + 1) / 2],
        }
    }

    fn variable(v: f64, i: usize, n: usize) -> Jet {
        let mut j = Jet::constant(v, n);
        j.g[i] = 1.0;
        j
    }

    fn n(&self) -> usize {
        self.g.len()
    }

    fn add(&self, o: &Jet) -> Jet {
        Jet {
            v: self.v + o.v,
            g: self.g.iter().zip(&o.g).map(|(a, b)| a + b).collect(),
            h: self.h.iter().zip(&o.h).map(|(a, b)| a + b).collect(),
        }
    }

    fn scale(&self, s: f64) -> Jet {
        Jet {
            v: self.v * s,
            g: self.g.iter().map(|a| a * s).collect(),
            h: self.h.iter().map(|a| a * s).collect(),
        }
    }

    fn mul(&self, o: &Jet) -> Jet {
        let n = self.n();
        let mut h = vec![0.0; self.h.len()];
        for i in 0..n {
            for j in i..n {
                let k = tri(i, j, n);
                h[k] = self.v * o.h[k]
                    + o.v * self.h[k]
                    + self.g[i] * o.g[j]
                    + self.g[j] * o.g[i];
            }
        }
        Jet {
            v: self.v * o.v,
            g: self
                .g
                .iter()
                .zip(&o.g)
                .map(|(a, b)| self.v * b + o.v * a)
                .collect(),
            h,
        }
    }

    /// Applies a scalar function given its value and first two derivatives.
    fn chain(&self, f0: f64, f1: f64, f2: f64) -> Jet {
        let n = self.n();
        let mut h = vec![0.0; self.h.len()];
        for i in 0..n {
            for j in i..n {
                let k = tri(i, j, n);
                h[k] = f1 * self.h[k] + f2 * self.g[i] * self.g[j];
            }
        }
        Jet {
            v: f0,
            g: self.g.iter().map(|a| f1 * a).collect(),
            h,
        }
    }

    fn recip(&self) -> Jet {
        let x = self.v;
        self.chain(1.0 / x, -1.0 / (x * x), 2.0 / (x * x * x))
    }

    fn powi(&self, k: i32) -> Jet {
        let mut acc = Jet::constant(1.0, self.n());
        for _ in 0..k.unsigned_abs() {
            acc = acc.mul(self);
        }
        if k < 0 {
            acc.recip()
        } else {
            acc
        }
    }
}

fn eval_jet(e: &Expr, x: &[f64]) -> Result<Jet, EvalError> {
    let n = x.len();
    let domain = |op: &'static str, value: f64, sub: &Expr| EvalError::Domain {
        op,
        value,
        subexpr: sub.to_string(),
    };
    Ok(match e {
        Expr::Const(c) => Jet::constant(*c, n),
        Expr::Var(i) => Jet::variable(x[*i], *i, n),
        Expr::Neg(a) => eval_jet(a, x)?.scale(-1.0),
        Expr::Add(a, b) => eval_jet(a, x)?.add(&eval_jet(b, x)?),
        Expr::Sub(a, b) => eval_jet(a, x)?.add(&eval_jet(b, x)?.scale(-1.0)),
        Expr::Mul(a, b) => eval_jet(a, x)?.mul(&eval_jet(b, x)?),
        Expr::Div(a, b) => {
            let den = eval_jet(b, x)?;
            if den.v == 0.0 {
                return Err(domain("division", den.v, b));
            }
            eval_jet(a, x)?.mul(&den.recip())
        }
        Expr::PowI(a, k) => {
            let base = eval_jet(a, x)?;
            if *k < 0 && base.v == 0.0 {
                return Err(domain("negative power", base.v, a));
            }
            base.powi(*k)
        }
        Expr::PowF(a, c) => {
            let base = eval_jet(a, x)?;
            if base.v <= 0.0 {
                return Err(domain("real power", base.v, a));
            }
            let b = base.v;
            base.chain(b.powf(*c), c * b.powf(c - 1.0), c * (c - 1.0) * b.powf(c - 2.0))
        }
        Expr::Pow(a, b) => {
            let base = eval_jet(a, x)?;
            if base.v <= 0.0 {
                return Err(domain("power", base.v, a));
            }
            let v = base.v;
            let log_base = base.chain(v.ln(), 1.0 / v, -1.0 / (v * v));
            let t = eval_jet(b, x)?.mul(&log_base);
            let ev = t.v.exp();
            t.chain(ev, ev, ev)
        }
        Expr::Call(func, a) => {
            let arg = eval_jet(a, x)?;
            let v = arg.v;
            match func {
                Func::Sin => arg.chain(v.sin(), v.cos(), -v.sin()),
                Func::Cos => arg.chain(v.cos(), -v.sin(), -v.cos()),
                Func::Exp => {
                    let ev = v.exp();
                    arg.chain(ev, ev, ev)
                }
                Func::Log => {
                    if v <= 0.0 {
                        return Err(domain("log", v, a));
                    }
                    arg.chain(v.ln(), 1.0 / v, -1.0 / (v * v))
                }
                Func::Sqrt => {
                    if v <= 0.0 {
                        return Err(domain("sqrt", v, a));
                    }
                    let s = v.sqrt();
                    arg.chain(s, 0.5 / s, -0.25 / (s * v))
                }
            }
        }
    })
}

/// Value, gradient and Hessian of `e` at `x`.
pub fn eval2(e: &Expr, x: &DVector<f64>) -> Result<(f64, DVector<f64>, DMatrix<f64>), EvalError> {
    if let Some(i) = e.max_var() {
        if i >= x.len() {
            return Err(EvalError::Arity {
                expected: i + 1,
                found: x.len(),
            });
        }
    }
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(EvalError::NonFinite(i));
    }
    let n = x.len();
    let jet = eval_jet(e, x.as_slice())?;
    let mut hess = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = jet.h[tri(i, j, n)];
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    Ok((jet.v, DVector::from_vec(jet.g), hess))
}

/// Plain value of `e` at `x`, sharing the domain checks of [`eval2`].
pub fn eval(e: &Expr, x: &DVector<f64>) -> Result<f64, EvalError> {
    fn go(e: &Expr, x: &[f64]) -> Result<f64, EvalError> {
        let domain = |op: &'static str, value: f64, sub: &Expr| EvalError::Domain {
            op,
            value,
            subexpr: sub.to_string(),
        };
        Ok(match e {
            Expr::Const(c) => *c,
            Expr::Var(i) => x[*i],
            Expr::Neg(a) => -go(a, x)?,
            Expr::Add(a, b) => go(a, x)? + go(b, x)?,
            Expr::Sub(a, b) => go(a, x)? - go(b, x)?,
            Expr::Mul(a, b) => go(a, x)? * go(b, x)?,
            Expr::Div(a, b) => {
                let d = go(b, x)?;
                if d == 0.0 {
                    return Err(domain("division", d, b));
                }
                go(a, x)? / d
            }
            Expr::PowI(a, k) => {
                let v = go(a, x)?;
                if *k < 0 && v == 0.0 {
                    return Err(domain("negative power", v, a));
                }
                v.powi(*k)
            }
            Expr::PowF(a, c) => {
                let v = go(a, x)?;
                if v <= 0.0 {
                    return Err(domain("real power", v, a));
                }
                v.powf(*c)
            }
            Expr::Pow(a, b) => {
                let v = go(a, x)?;
                if v <= 0.0 {
                    return Err(domain("power", v, a));
                }
                v.powf(go(b, x)?)
            }
            Expr::Call(func, a) => {
                let v = go(a, x)?;
                match func {
                    Func::Sin => v.sin(),
                    Func::Cos => v.cos(),
                    Func::Exp => v.exp(),
                    Func::Log if v <= 0.0 => return Err(domain("log", v, a)),
                    Func::Log => v.ln(),
                    Func::Sqrt if v <= 0.0 => return Err(domain("sqrt", v, a)),
                    Func::Sqrt => v.sqrt(),
                }
            }
        })
    }
    if let Some(i) = e.max_var() {
        if i >= x.len() {
            return Err(EvalError::Arity {
                expected: i + 1,
                found: x.len(),
            });
        }
    }
    go(e, x.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn parse_examples() {
        assert!(parse_expr("0.5*(x1-1)^2", 1).is_ok());
        assert!(parse_expr("x1*x2 + exp(x1)", 2).is_ok());
        assert!(matches!(
            parse_expr("x3", 2),
            Err(ParseError::IndexOutOfRange { index: 3, n: 2, .. })
        ));
    }

    #[test]
    fn parse_errors_carry_positions() {
        assert!(matches!(
            parse_expr("x1 + foo(x1)", 1),
            Err(ParseError::UnknownIdentifier { pos: 5, .. })
        ));
        assert!(matches!(
            parse_expr("x1 + ", 1),
            Err(ParseError::Syntax { pos: 5, .. })
        ));
        assert!(matches!(
            parse_expr("(x1", 1),
            Err(ParseError::Syntax { .. })
        ));
        assert!(matches!(parse_expr("x0", 1), Err(ParseError::IndexOutOfRange { .. })));
        assert!(parse_expr("   ", 1).is_err());
        assert!(parse_expr("x1 $ 2", 1).is_err());
        assert!(parse_expr("abs(x1)", 1).is_err());
    }

    #[test]
    fn precedence_and_associativity() {
        let x = at(&[2.0]);
        // -x^2 = -(x^2)
        assert_eq!(eval(&parse_expr("-x1^2", 1).unwrap(), &x).unwrap(), -4.0);
        // 2^3^2 = 2^9
        assert_eq!(eval(&parse_expr("2^3^2", 1).unwrap(), &x).unwrap(), 512.0);
        // left associative minus and divide
        assert_eq!(eval(&parse_expr("10-3-2", 1).unwrap(), &x).unwrap(), 5.0);
        assert_eq!(eval(&parse_expr("8/2/2", 1).unwrap(), &x).unwrap(), 2.0);
        assert_eq!(eval(&parse_expr("2^-1", 1).unwrap(), &x).unwrap(), 0.5);
        assert_eq!(eval(&parse_expr("1e-3*1E3 + .5", 1).unwrap(), &x).unwrap(), 1.5);
    }

    #[test]
    fn eval2_examples() {
        let e = parse_expr("0.5*(x1-1)^2", 1).unwrap();
        let (v, g, h) = eval2(&e, &at(&[0.0])).unwrap();
        assert_eq!((v, g[0], h[(0, 0)]), (0.5, -1.0, 1.0));

        let e = parse_expr("x1*x2", 2).unwrap();
        let (v, g, h) = eval2(&e, &at(&[2.0, 3.0])).unwrap();
        assert_eq!(v, 6.0);
        assert_eq!(g.as_slice(), &[3.0, 2.0]);
        assert_eq!(h, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));

        let e = parse_expr("exp(x1)", 1).unwrap();
        let (v, g, h) = eval2(&e, &at(&[0.0])).unwrap();
        assert_eq!((v, g[0], h[(0, 0)]), (1.0, 1.0, 1.0));
    }

    #[test]
    fn integer_power_of_negative_base() {
        let e = parse_expr("x1^3", 1).unwrap();
        let (v, g, h) = eval2(&e, &at(&[-2.0])).unwrap();
        assert_eq!((v, g[0], h[(0, 0)]), (-8.0, 12.0, -12.0));
        let e = parse_expr("x1^-2", 1).unwrap();
        let (v, g, _) = eval2(&e, &at(&[-2.0])).unwrap();
        assert_eq!((v, g[0]), (0.25, 0.25));
    }

    #[test]
    fn domain_errors_name_the_subexpression() {
        let e = parse_expr("log(x1 - 1)", 1).unwrap();
        match eval2(&e, &at(&[0.5])) {
            Err(EvalError::Domain { op, subexpr, .. }) => {
                assert_eq!(op, "log");
                assert!(subexpr.contains("x1"));
            }
            other => panic!("unexpected {other:?}"),
        }
        let e = parse_expr("1/(x1-x1)", 1).unwrap();
        assert!(matches!(eval2(&e, &at(&[0.5])), Err(EvalError::Domain { op: "division", .. })));
        let e = parse_expr("sqrt(x1)", 1).unwrap();
        assert!(eval2(&e, &at(&[-1.0])).is_err());
        let e = parse_expr("x1^0.5", 1).unwrap();
        assert!(eval2(&e, &at(&[-1.0])).is_err());
    }

    #[test]
    fn general_power_matches_closed_form() {
        // x^y at (2, 3): grad (y x^(y-1), x^y ln x)
        let e = parse_expr("x1^x2", 2).unwrap();
        let (v, g, h) = eval2(&e, &at(&[2.0, 3.0])).unwrap();
        let ln2 = 2f64.ln();
        assert!((v - 8.0).abs() < 1e-12);
        assert!((g[0] - 12.0).abs() < 1e-12);
        assert!((g[1] - 8.0 * ln2).abs() < 1e-12);
        // d2/dxdy = x^(y-1) (1 + y ln x)
        assert!((h[(0, 1)] - 4.0 * (1.0 + 3.0 * ln2)).abs() < 1e-12);
        assert!((h[(1, 1)] - 8.0 * ln2 * ln2).abs() < 1e-12);
    }
}
