//! Composite problem instances `min f(x) - ⟨a*, x⟩ + g(F(x) + b)`, their
//! KKT residuals and multiplier sets, and the JSON problem-file format.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ad::{self, EvalError, Expr, ParseError};
use crate::catalog::{self, CatalogError, GSpec};
use crate::lp::{Cmp, Lp, LpResult};

/// Tolerance on `‖∇f(x̄) + ∇F(x̄)ᵀȳ*‖` at construction.
pub const STATIONARITY_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("cannot read problem file: {0}")]
    Io(String),
    #[error("malformed problem file at line {line}, column {column}: {msg}")]
    Json { line: usize, column: usize, msg: String },
    #[error("{field}: {msg}")]
    Shape { field: String, msg: String },
    #[error("expression {field}: {source}")]
    Expr {
        field: String,
        #[source]
        source: ParseError,
    },
    #[error("evaluation failed: {0}")]
    Eval(#[from] EvalError),
    #[error("g: {0}")]
    Catalog(#[from] CatalogError),
    #[error("reference point is not stationary: ‖∇f + ∇Fᵀy*‖ = {0:.3e}")]
    NotStationary(f64),
    #[error("reference multiplier is not a subgradient of g at F(x): residual {0:.3e}")]
    NotSubgradient(f64),
}

/// A validated instance with reference KKT pair `(x̄, ȳ*)`.
#[derive(Debug, Clone)]
pub struct ProblemInstance {
    n: usize,
    m: usize,
    f_src: String,
    big_f_src: Vec<String>,
    f: Expr,
    big_f: Vec<Expr>,
    g: GSpec,
    xbar: DVector<f64>,
    ybar_star: DVector<f64>,
}

/// First and second derivatives of `f` and `F` at a point.
#[derive(Debug, Clone)]
pub struct Derivatives {
    pub f: f64,
    pub grad_f: DVector<f64>,
    pub hess_f: DMatrix<f64>,
    /// `F(x)`.
    pub fx: DVector<f64>,
    /// `∇F(x)`, `m x n`.
    pub jac: DMatrix<f64>,
    /// `∇²F_i(x)`.
    pub hess_fi: Vec<DMatrix<f64>>,
}

impl Derivatives {
    /// `Σ y*_i ∇²F_i(x)`.
    pub fn weighted_constraint_hessian(&self, ystar: &DVector<f64>) -> DMatrix<f64> {
        let n = self.hess_f.nrows();
        let mut h = DMatrix::zeros(n, n);
        for (i, hi) in self.hess_fi.iter().enumerate() {
            h += hi * ystar[i];
        }
        h
    }

    pub fn lagrangian_hessian(&self, ystar: &DVector<f64>) -> DMatrix<f64> {
        &self.hess_f + self.weighted_constraint_hessian(ystar)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktPoint {
    pub x: Vec<f64>,
    pub ystar: Vec<f64>,
    pub residual: f64,
}

/// Result of a multiplier-set computation.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiplierSet {
    /// One element, absent when the set is empty.
    pub element: Option<DVector<f64>>,
    pub unique: bool,
    pub bounded: bool,
    /// Coordinatewise ranges `[min, max]` of the multipliers (infinite when
    /// unbounded); empty when the set is empty.
    pub ranges: Vec<(f64, f64)>,
}

impl MultiplierSet {
    pub fn is_empty(&self) -> bool {
        self.element.is_none()
    }

    fn empty() -> Self {
        MultiplierSet {
            element: None,
            unique: false,
            bounded: true,
            ranges: Vec::new(),
        }
    }
}

fn parse_all(n: usize, f_src: &str, big_f_src: &[String]) -> Result<(Expr, Vec<Expr>), ProblemError> {
    let f = ad::parse_expr(f_src, n).map_err(|source| ProblemError::Expr {
        field: "f".into(),
        source,
    })?;
    let big_f = big_f_src
        .iter()
        .enumerate()
        .map(|(i, s)| {
            ad::parse_expr(s, n).map_err(|source| ProblemError::Expr {
                field: format!("F[{i}]"),
                source,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((f, big_f))
}

impl ProblemInstance {
    /// Parses the expressions and validates the reference point.
    pub fn new(
        f: &str,
        big_f: &[&str],
        g: GSpec,
        xbar: DVector<f64>,
        ybar_star: DVector<f64>,
    ) -> Result<Self, ProblemError> {
        let n = xbar.len();
        let m = big_f.len();
        let big_f_src: Vec<String> = big_f.iter().map(|s| s.to_string()).collect();
        if g.dim() != m {
            return Err(ProblemError::Shape {
                field: "g".into(),
                msg: format!("acts on R^{} but F has {m} components", g.dim()),
            });
        }
        if ybar_star.len() != m {
            return Err(ProblemError::Shape {
                field: "point.y_star".into(),
                msg: format!("has length {}, expected {m}", ybar_star.len()),
            });
        }
        if n == 0 {
            return Err(ProblemError::Shape {
                field: "point.x".into(),
                msg: "must be nonempty".into(),
            });
        }
        let (fe, fes) = parse_all(n, f, &big_f_src)?;
        let inst = ProblemInstance {
            n,
            m,
            f_src: f.to_string(),
            big_f_src,
            f: fe,
            big_f: fes,
            g,
            xbar,
            ybar_star,
        };
        inst.validate()?;
        Ok(inst)
    }

    fn validate(&self) -> Result<(), ProblemError> {
        let d = self.derivatives(&self.xbar)?;
        let stat = (&d.grad_f + d.jac.transpose() * &self.ybar_star).norm();
        if !(stat <= STATIONARITY_TOL) {
            return Err(ProblemError::NotStationary(stat));
        }
        let y = &d.fx;
        let prox = self.g.prox(&(y + &self.ybar_star))?;
        let res = (y - prox).norm();
        let scale = 1.0 + y.norm() + self.ybar_star.norm();
        if !(res <= catalog::MEMBER_TOL * scale) {
            return Err(ProblemError::NotSubgradient(res));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn g(&self) -> &GSpec {
        &self.g
    }

    pub fn f_source(&self) -> &str {
        &self.f_src
    }

    pub fn constraint_sources(&self) -> &[String] {
        &self.big_f_src
    }

    pub fn xbar(&self) -> &DVector<f64> {
        &self.xbar
    }

    pub fn ybar_star(&self) -> &DVector<f64> {
        &self.ybar_star
    }

    /// `ȳ = F(x̄)`.
    pub fn ybar(&self) -> DVector<f64> {
        self.eval_map(&self.xbar).expect("validated at construction")
    }

    /// `x̄* = ∇F(x̄)ᵀȳ*`.
    pub fn xbar_star(&self) -> DVector<f64> {
        let d = self.derivatives(&self.xbar).expect("validated at construction");
        d.jac.transpose() * &self.ybar_star
    }

    pub fn derivatives(&self, x: &DVector<f64>) -> Result<Derivatives, ProblemError> {
        if x.len() != self.n {
            return Err(ProblemError::Shape {
                field: "x".into(),
                msg: format!("has length {}, expected {}", x.len(), self.n),
            });
        }
        let (f, grad_f, hess_f) = ad::eval2(&self.f, x)?;
        let mut fx = DVector::zeros(self.m);
        let mut jac = DMatrix::zeros(self.m, self.n);
        let mut hess_fi = Vec::with_capacity(self.m);
        for (i, e) in self.big_f.iter().enumerate() {
            let (v, g, h) = ad::eval2(e, x)?;
            fx[i] = v;
            jac.set_row(i, &g.transpose());
            hess_fi.push(h);
        }
        Ok(Derivatives {
            f,
            grad_f,
            hess_f,
            fx,
            jac,
            hess_fi,
        })
    }

    /// `F(x)` without derivatives.
    pub fn eval_map(&self, x: &DVector<f64>) -> Result<DVector<f64>, ProblemError> {
        let mut fx = DVector::zeros(self.m);
        for (i, e) in self.big_f.iter().enumerate() {
            fx[i] = ad::eval(e, x)?;
        }
        Ok(fx)
    }

    /// `f(x) - ⟨a*, x⟩ + g(F(x) + b)`.
    pub fn objective(&self, x: &DVector<f64>, astar: &DVector<f64>, b: &DVector<f64>) -> Result<f64, ProblemError> {
        let fx = ad::eval(&self.f, x)?;
        let u = self.eval_map(x)? + b;
        Ok(fx - astar.dot(x) + self.g.value(&u))
    }

    /// `∇²f(x) + Σ y*_i ∇²F_i(x)`.
    pub fn lagrangian_hessian(&self, x: &DVector<f64>, ystar: &DVector<f64>) -> Result<DMatrix<f64>, ProblemError> {
        Ok(self.derivatives(x)?.lagrangian_hessian(ystar))
    }

    /// `(∇f(x) + ∇F(x)ᵀy* - a*,  F(x) + b - prox g(F(x) + b + y*))`.
    pub fn kkt_residual(
        &self,
        x: &DVector<f64>,
        ystar: &DVector<f64>,
        astar: &DVector<f64>,
        b: &DVector<f64>,
    ) -> Result<DVector<f64>, ProblemError> {
        let d = self.derivatives(x)?;
        Ok(self.kkt_residual_with(&d, ystar, astar, b)?)
    }

    pub(crate) fn kkt_residual_with(
        &self,
        d: &Derivatives,
        ystar: &DVector<f64>,
        astar: &DVector<f64>,
        b: &DVector<f64>,
    ) -> Result<DVector<f64>, CatalogError> {
        let r1 = &d.grad_f + d.jac.transpose() * ystar - astar;
        let u = &d.fx + b;
        let r2 = &u - self.g.prox(&(&u + ystar))?;
        let mut r = DVector::zeros(self.n + self.m);
        r.rows_mut(0, self.n).copy_from(&r1);
        r.rows_mut(self.n, self.m).copy_from(&r2);
        Ok(r)
    }

    /// `M(x, x*, b) = {y* ∈ ∂g(F(x) + b) : ∇F(x)ᵀy* = x*}`.
    pub fn multiplier_set(
        &self,
        x: &DVector<f64>,
        xstar: &DVector<f64>,
        b: &DVector<f64>,
    ) -> Result<MultiplierSet, ProblemError> {
        let d = self.derivatives(x)?;
        let u = &d.fx + b;
        let sub = match self.g.subdifferential(&u) {
            Ok(s) => s,
            Err(CatalogError::NotInDomain) => return Ok(MultiplierSet::empty()),
            Err(e) => return Err(e.into()),
        };
        Ok(multipliers_in(&sub, &d.jac, xstar))
    }
}

/// Solves for `{y* ∈ sub : Jᵀy* = x*}` by LP, with coordinatewise ranges.
fn multipliers_in(sub: &catalog::SubdiffSet, jac: &DMatrix<f64>, xstar: &DVector<f64>) -> MultiplierSet {
    let m = sub.base.len();
    let n = jac.ncols();
    let nr = sub.rays.len();
    let nl = sub.lines.len();
    let ni = sub.intervals.len();
    let nv = nr + nl + ni;
    // columns of the generator matrix in R^m
    let mut gen = DMatrix::zeros(m, nv);
    for (k, r) in sub.rays.iter().enumerate() {
        gen.set_column(k, r);
    }
    for (k, l) in sub.lines.iter().enumerate() {
        gen.set_column(nr + k, l);
    }
    for (k, &(i, _, _)) in sub.intervals.iter().enumerate() {
        gen[(i, nr + nl + k)] = 1.0;
    }
    let base = DVector::from_column_slice(&sub.base);
    let lhs = jac.transpose() * &gen;
    let rhs = xstar - jac.transpose() * &base;

    let mut lp = Lp::new(nv);
    for k in 0..nr {
        lp.set_nonneg(k);
    }
    for (k, &(_, lo, hi)) in sub.intervals.iter().enumerate() {
        lp.bound(nr + nl + k, lo, hi);
    }
    for j in 0..n {
        let row: Vec<f64> = lhs.row(j).iter().copied().collect();
        lp.add_row(&row, Cmp::Eq, rhs[j]);
    }
    let Some(z) = lp.feasible_point() else {
        return MultiplierSet::empty();
    };
    let element = &base + &gen * DVector::from_vec(z);

    let mut ranges = Vec::with_capacity(m);
    let mut bounded = true;
    for i in 0..m {
        let c: Vec<f64> = gen.row(i).iter().copied().collect();
        let lo = match lp.minimize(&c) {
            LpResult::Optimal { value, .. } => base[i] + value,
            _ => {
                bounded = false;
                f64::NEG_INFINITY
            }
        };
        let hi = match lp.maximize(&c) {
            LpResult::Optimal { value, .. } => base[i] + value,
            _ => {
                bounded = false;
                f64::INFINITY
            }
        };
        ranges.push((lo, hi));
    }
    let unique = bounded
        && ranges
            .iter()
            .all(|&(lo, hi)| hi - lo <= 1e-7 * (1.0 + lo.abs().max(hi.abs())));
    MultiplierSet {
        element: Some(element),
        unique,
        bounded,
        ranges,
    }
}

// ---------------------------------------------------------------------------
// Problem files

/// A box bound: a number, `null` (meaning infinite) or the strings
/// `"inf"`, `"-inf"`, `"+inf"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BoundSpec {
    Number(f64),
    Text(String),
    Missing(Option<()>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum GFile {
    Polyhedral {
        #[serde(rename = "A")]
        a: Vec<Vec<f64>>,
        c: Vec<f64>,
        #[serde(default)]
        eq_rows: Vec<usize>,
    },
    Box {
        lower: Vec<BoundSpec>,
        upper: Vec<BoundSpec>,
    },
    L1 {
        weights: Vec<f64>,
    },
    Quadratic {
        #[serde(rename = "Q")]
        q: Vec<Vec<f64>>,
        #[serde(default)]
        c: Option<Vec<f64>>,
    },
    Separable {
        components: Vec<GFile>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointFile {
    pub x: Vec<f64>,
    pub y_star: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub n: usize,
    pub m: usize,
    pub f: String,
    #[serde(rename = "F")]
    pub big_f: Vec<String>,
    pub g: GFile,
    pub point: PointFile,
}

fn matrix(rows: &[Vec<f64>], field: &str, cols: Option<usize>) -> Result<DMatrix<f64>, ProblemError> {
    let width = cols.or_else(|| rows.first().map(Vec::len)).unwrap_or(0);
    for (i, r) in rows.iter().enumerate() {
        if r.len() != width {
            return Err(ProblemError::Shape {
                field: format!("{field}[{i}]"),
                msg: format!("has {} entries, expected {width}", r.len()),
            });
        }
    }
    Ok(DMatrix::from_fn(rows.len(), width, |i, j| rows[i][j]))
}

fn bound(b: &BoundSpec, field: &str, default: f64) -> Result<f64, ProblemError> {
    match b {
        BoundSpec::Number(v) => Ok(*v),
        BoundSpec::Missing(_) => Ok(default),
        BoundSpec::Text(s) => match s.trim() {
            "inf" | "+inf" | "Infinity" | "+Infinity" => Ok(f64::INFINITY),
            "-inf" | "-Infinity" => Ok(f64::NEG_INFINITY),
            other => Err(ProblemError::Shape {
                field: field.into(),
                msg: format!("unrecognized bound '{other}'"),
            }),
        },
    }
}

impl GFile {
    pub fn to_spec(&self, m: usize, field: &str) -> Result<GSpec, ProblemError> {
        let len_check = |len: usize, what: &str| {
            if len != m {
                Err(ProblemError::Shape {
                    field: format!("{field}.{what}"),
                    msg: format!("has length {len}, expected {m}"),
                })
            } else {
                Ok(())
            }
        };
        Ok(match self {
            GFile::Polyhedral { a, c, eq_rows } => {
                let a = matrix(a, &format!("{field}.A"), Some(m))?;
                if c.len() != a.nrows() {
                    return Err(ProblemError::Shape {
                        field: format!("{field}.c"),
                        msg: format!("has length {}, expected {}", c.len(), a.nrows()),
                    });
                }
                GSpec::polyhedral(a, DVector::from_column_slice(c), eq_rows.clone())?
            }
            GFile::Box { lower, upper } => {
                len_check(lower.len(), "lower")?;
                len_check(upper.len(), "upper")?;
                let lo = lower
                    .iter()
                    .enumerate()
                    .map(|(i, b)| bound(b, &format!("{field}.lower[{i}]"), f64::NEG_INFINITY))
                    .collect::<Result<Vec<_>, _>>()?;
                let hi = upper
                    .iter()
                    .enumerate()
                    .map(|(i, b)| bound(b, &format!("{field}.upper[{i}]"), f64::INFINITY))
                    .collect::<Result<Vec<_>, _>>()?;
                GSpec::boxed(DVector::from_vec(lo), DVector::from_vec(hi))?
            }
            GFile::L1 { weights } => {
                len_check(weights.len(), "weights")?;
                GSpec::l1(DVector::from_column_slice(weights))?
            }
            GFile::Quadratic { q, c } => {
                len_check(q.len(), "Q")?;
                let q = matrix(q, &format!("{field}.Q"), Some(m))?;
                let c = match c {
                    Some(c) => {
                        len_check(c.len(), "c")?;
                        DVector::from_column_slice(c)
                    }
                    None => DVector::zeros(m),
                };
                GSpec::quadratic(q, c)?
            }
            GFile::Separable { components } => {
                // components are one-dimensional unless they say otherwise
                let mut parts = Vec::new();
                let mut used = 0;
                for (k, comp) in components.iter().enumerate() {
                    let d = comp.natural_dim().unwrap_or(1);
                    parts.push(comp.to_spec(d, &format!("{field}.components[{k}]"))?);
                    used += d;
                }
                if used != m {
                    return Err(ProblemError::Shape {
                        field: format!("{field}.components"),
                        msg: format!("cover {used} coordinates, expected {m}"),
                    });
                }
                GSpec::separable(parts)?
            }
        })
    }

    /// Dimension implied by the data, when it determines one.
    fn natural_dim(&self) -> Option<usize> {
        match self {
            GFile::Polyhedral { a, .. } => a.first().map(Vec::len),
            GFile::Box { lower, .. } => Some(lower.len()),
            GFile::L1 { weights } => Some(weights.len()),
            GFile::Quadratic { q, .. } => Some(q.len()),
            GFile::Separable { components } => {
                components.iter().map(|c| c.natural_dim()).sum()
            }
        }
    }
}

impl ProblemFile {
    pub fn from_json(text: &str) -> Result<Self, ProblemError> {
        serde_json::from_str(text).map_err(|e| ProblemError::Json {
            line: e.line(),
            column: e.column(),
            msg: e.to_string(),
        })
    }

    pub fn into_instance(self) -> Result<ProblemInstance, ProblemError> {
        if self.big_f.len() != self.m {
            return Err(ProblemError::Shape {
                field: "F".into(),
                msg: format!("has {} components, expected m = {}", self.big_f.len(), self.m),
            });
        }
        if self.point.x.len() != self.n {
            return Err(ProblemError::Shape {
                field: "point.x".into(),
                msg: format!("has length {}, expected n = {}", self.point.x.len(), self.n),
            });
        }
        let g = self.g.to_spec(self.m, "g")?;
        let big_f: Vec<&str> = self.big_f.iter().map(String::as_str).collect();
        ProblemInstance::new(
            &self.f,
            &big_f,
            g,
            DVector::from_vec(self.point.x),
            DVector::from_vec(self.point.y_star),
        )
    }
}

impl ProblemInstance {
    pub fn from_json(text: &str) -> Result<Self, ProblemError> {
        ProblemFile::from_json(text)?.into_instance()
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self, ProblemError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ProblemError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}
