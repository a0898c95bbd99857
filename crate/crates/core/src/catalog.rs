//! The catalog of convex functions `g` supported by the analysis, with their
//! proximal mappings, subdifferential tests and SC derivatives.
//!
//! SC derivatives are returned as finite lists of [`PwPair`]s. For smooth
//! `g` the list is the singleton `{(I, ∇²g)}`; for polyhedral indicators it
//! has one pair per face `F` of the critical cone, with `P` the projector onto
//! `F - F` and `W = I - P`; separable functions combine the pairs of their
//! components coordinatewise.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::linalg;
use crate::polyhedral::{self, PolyError, Polyhedron, ACT_TOL, FACE_CAP};
use crate::subspace::PwPair;

/// Default tolerance for `(y, y*) ∈ gph ∂g`.
pub const MEMBER_TOL: f64 = 1e-9;
/// Maximum number of pairs a separable function may produce.
pub const PAIR_CAP: usize = 4096;
/// Below this a multiplier coordinate counts as zero when classifying kinks.
const KINK_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CatalogError {
    #[error("invalid function data: {0}")]
    Invalid(String),
    #[error("argument has length {found}, expected {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("(y, y*) is not in the graph of the subdifferential (prox residual {0:.3e})")]
    NotInGraph(f64),
    #[error("point is outside the domain of g")]
    NotInDomain,
    #[error("SC derivative has {count} pairs, more than the cap {cap}")]
    TooManyPairs { count: usize, cap: usize },
    #[error(transparent)]
    Polyhedral(#[from] PolyError),
}

/// A convex function from the catalog.
#[derive(Debug, Clone, PartialEq)]
pub enum GSpec {
    /// Indicator of a nonempty polyhedron.
    PolyhedralIndicator(Polyhedron),
    /// Indicator of `[l, u]`; bounds may be infinite.
    Box { lower: DVector<f64>, upper: DVector<f64> },
    /// `Σ w_i |y_i|` with positive weights.
    L1 { weights: DVector<f64> },
    /// `½ yᵀQy + cᵀy` with `Q` symmetric positive semidefinite.
    Quadratic { q: DMatrix<f64>, c: DVector<f64> },
    /// Block-separable sum; component `k` acts on the next `dim` coordinates.
    SeparableSum(Vec<GSpec>),
}

/// `q_{P,W}(u) = ½⟨u, Wu⟩` on `rge P`, `+∞` elsewhere.
#[derive(Debug, Clone)]
pub struct GeneralizedQuadraticForm {
    pub pair: PwPair,
}

impl GeneralizedQuadraticForm {
    pub fn value(&self, u: &DVector<f64>) -> f64 {
        if !in_range(&self.pair, u) {
            return f64::INFINITY;
        }
        0.5 * u.dot(&(self.pair.w() * u))
    }
}

fn in_range(pair: &PwPair, u: &DVector<f64>) -> bool {
    let off = u - pair.p() * u;
    off.norm() <= 1e-9 * u.norm().max(1.0)
}

/// Description of the convex set `∂g(y)` as
/// `base + Σ λ_k rays_k + Σ μ_k lines_k + Σ t_j e_{i_j}` with `λ >= 0`,
/// `μ` free and `t_j ∈ [lo_j, hi_j]`.
#[derive(Debug, Clone, Default)]
pub struct SubdiffSet {
    pub base: Vec<f64>,
    pub rays: Vec<DVector<f64>>,
    pub lines: Vec<DVector<f64>>,
    pub intervals: Vec<(usize, f64, f64)>,
}

/// Generators of the polyhedral cone `N_{dom g}(y)`: `cone(rays) + span(lines)`.
#[derive(Debug, Clone, Default)]
pub struct NormalCone {
    pub rays: Vec<DVector<f64>>,
    pub lines: Vec<DVector<f64>>,
}

impl NormalCone {
    pub fn is_trivial(&self) -> bool {
        self.rays.is_empty() && self.lines.is_empty()
    }
}

fn unit(m: usize, i: usize) -> DVector<f64> {
    let mut e = DVector::zeros(m);
    e[i] = 1.0;
    e
}

fn check_len(v: &DVector<f64>, expected: usize) -> Result<(), CatalogError> {
    if v.len() == expected {
        Ok(())
    } else {
        Err(CatalogError::Dimension {
            expected,
            found: v.len(),
        })
    }
}

/// An affine piece `z ↦ c + Bz` of a piecewise affine prox.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinePiece {
    pub b: DMatrix<f64>,
    pub c: DVector<f64>,
}

/// One-dimensional pair alternatives: `true` is `(1, 0)` (prox slope one),
/// `false` is `(0, 1)` (prox slope zero).
type Choices = Vec<Vec<bool>>;

fn diagonal_pairs(choices: &Choices) -> Result<Vec<PwPair>, CatalogError> {
    let count = choices.iter().try_fold(1usize, |acc, c| acc.checked_mul(c.len()));
    match count {
        Some(c) if c <= PAIR_CAP => {}
        _ => {
            return Err(CatalogError::TooManyPairs {
                count: count.unwrap_or(usize::MAX),
                cap: PAIR_CAP,
            })
        }
    }
    let m = choices.len();
    let mut out = Vec::new();
    let mut idx = vec![0usize; m];
    loop {
        let mut p = DMatrix::zeros(m, m);
        let mut w = DMatrix::zeros(m, m);
        for i in 0..m {
            if choices[i][idx[i]] {
                p[(i, i)] = 1.0;
            } else {
                w[(i, i)] = 1.0;
            }
        }
        out.push(PwPair::new(p, w).expect("diagonal 0/1 pairs are valid"));
        // odometer over the choice lists, first coordinate slowest
        let mut k = m;
        loop {
            if k == 0 {
                return Ok(out);
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < choices[k].len() {
                break;
            }
            idx[k] = 0;
        }
    }
}

impl GSpec {
    pub fn polyhedral(a: DMatrix<f64>, c: DVector<f64>, eq_rows: Vec<usize>) -> Result<Self, CatalogError> {
        Ok(GSpec::PolyhedralIndicator(Polyhedron::new(a, c, eq_rows)?))
    }

    pub fn boxed(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self, CatalogError> {
        if lower.len() != upper.len() {
            return Err(CatalogError::Invalid("box bounds differ in length".into()));
        }
        for i in 0..lower.len() {
            if lower[i].is_nan() || upper[i].is_nan() || lower[i] > upper[i] || lower[i] == f64::INFINITY || upper[i] == f64::NEG_INFINITY {
                return Err(CatalogError::Invalid(format!(
                    "box bound {i}: [{}, {}] is empty",
                    lower[i], upper[i]
                )));
            }
        }
        Ok(GSpec::Box { lower, upper })
    }

    pub fn l1(weights: DVector<f64>) -> Result<Self, CatalogError> {
        if let Some(i) = weights.iter().position(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(CatalogError::Invalid(format!("weight {i} is not positive")));
        }
        Ok(GSpec::L1 { weights })
    }

    pub fn quadratic(q: DMatrix<f64>, c: DVector<f64>) -> Result<Self, CatalogError> {
        if q.nrows() != q.ncols() || q.nrows() != c.len() {
            return Err(CatalogError::Invalid(format!(
                "Q is {}x{} but c has length {}",
                q.nrows(),
                q.ncols(),
                c.len()
            )));
        }
        if (&q - q.transpose()).amax() > 1e-12 * (1.0 + q.amax()) {
            return Err(CatalogError::Invalid("Q is not symmetric".into()));
        }
        if let Some((l, _)) = linalg::min_eigen(&q) {
            if l < -1e-10 {
                return Err(CatalogError::Invalid(format!(
                    "Q is not positive semidefinite (eigenvalue {l:.3e})"
                )));
            }
        }
        Ok(GSpec::Quadratic {
            q: linalg::symmetrize(&q),
            c,
        })
    }

    pub fn separable(components: Vec<GSpec>) -> Result<Self, CatalogError> {
        if components.is_empty() {
            return Err(CatalogError::Invalid("separable sum has no components".into()));
        }
        Ok(GSpec::SeparableSum(components))
    }

    pub fn dim(&self) -> usize {
        match self {
            GSpec::PolyhedralIndicator(p) => p.dim(),
            GSpec::Box { lower, .. } => lower.len(),
            GSpec::L1 { weights } => weights.len(),
            GSpec::Quadratic { c, .. } => c.len(),
            GSpec::SeparableSum(parts) => parts.iter().map(GSpec::dim).sum(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            GSpec::PolyhedralIndicator(_) => "polyhedral",
            GSpec::Box { .. } => "box",
            GSpec::L1 { .. } => "l1",
            GSpec::Quadratic { .. } => "quadratic",
            GSpec::SeparableSum(_) => "separable",
        }
    }

    /// The underlying polyhedron when `g` is the indicator of one.
    pub fn as_polyhedron(&self) -> Option<Polyhedron> {
        match self {
            GSpec::PolyhedralIndicator(p) => Some(p.clone()),
            GSpec::Box { lower, upper } => {
                let m = lower.len();
                let mut rows: Vec<DVector<f64>> = Vec::new();
                let mut rhs = Vec::new();
                let mut eq = Vec::new();
                for i in 0..m {
                    if lower[i] == upper[i] {
                        eq.push(rows.len());
                        rows.push(unit(m, i));
                        rhs.push(upper[i]);
                        continue;
                    }
                    if upper[i].is_finite() {
                        rows.push(unit(m, i));
                        rhs.push(upper[i]);
                    }
                    if lower[i].is_finite() {
                        rows.push(-unit(m, i));
                        rhs.push(-lower[i]);
                    }
                }
                let mut a = DMatrix::zeros(rows.len(), m);
                for (k, r) in rows.iter().enumerate() {
                    a.set_row(k, &r.transpose());
                }
                Polyhedron::new(a, DVector::from_vec(rhs), eq).ok()
            }
            _ => None,
        }
    }

    pub fn value(&self, y: &DVector<f64>) -> f64 {
        match self {
            GSpec::PolyhedralIndicator(p) => {
                if p.check_member(y).is_ok() {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            GSpec::Box { lower, upper } => {
                let tol = |b: f64| MEMBER_TOL * b.abs().max(1.0);
                let inside = (0..y.len()).all(|i| {
                    y[i] >= lower[i] - tol(lower[i]) && y[i] <= upper[i] + tol(upper[i])
                });
                if inside {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            GSpec::L1 { weights } => weights.iter().zip(y.iter()).map(|(w, v)| w * v.abs()).sum(),
            GSpec::Quadratic { q, c } => 0.5 * y.dot(&(q * y)) + c.dot(y),
            GSpec::SeparableSum(parts) => {
                let mut off = 0;
                let mut total = 0.0;
                for g in parts {
                    let d = g.dim();
                    total += g.value(&y.rows(off, d).into_owned());
                    off += d;
                }
                total
            }
        }
    }

    /// `prox g(z) = argmin ½‖x - z‖² + g(x)`.
    pub fn prox(&self, z: &DVector<f64>) -> Result<DVector<f64>, CatalogError> {
        check_len(z, self.dim())?;
        Ok(match self {
            GSpec::PolyhedralIndicator(p) => p.project(z)?,
            GSpec::Box { lower, upper } => {
                DVector::from_fn(z.len(), |i, _| z[i].clamp(lower[i], upper[i]))
            }
            GSpec::L1 { weights } => DVector::from_fn(z.len(), |i, _| {
                (z[i].abs() - weights[i]).max(0.0) * z[i].signum()
            }),
            GSpec::Quadratic { q, c } => {
                let m = c.len();
                let a = DMatrix::identity(m, m) + q;
                a.lu()
                    .solve(&(z - c))
                    .ok_or_else(|| CatalogError::Invalid("I + Q is singular".into()))?
            }
            GSpec::SeparableSum(parts) => {
                let mut out = DVector::zeros(z.len());
                let mut off = 0;
                for g in parts {
                    let d = g.dim();
                    let r = g.prox(&z.rows(off, d).into_owned())?;
                    out.rows_mut(off, d).copy_from(&r);
                    off += d;
                }
                out
            }
        })
    }

    /// `‖y - prox(y + y*)‖ <= tol`, i.e. `y* ∈ ∂g(y)`.
    pub fn in_subdifferential(&self, y: &DVector<f64>, ystar: &DVector<f64>, tol: f64) -> bool {
        self.graph_residual(y, ystar).is_ok_and(|r| r <= tol)
    }

    fn graph_residual(&self, y: &DVector<f64>, ystar: &DVector<f64>) -> Result<f64, CatalogError> {
        check_len(y, self.dim())?;
        check_len(ystar, self.dim())?;
        Ok((y - self.prox(&(y + ystar))?).norm())
    }

    fn require_graph(&self, y: &DVector<f64>, ystar: &DVector<f64>) -> Result<(), CatalogError> {
        let r = self.graph_residual(y, ystar)?;
        let scale = 1.0 + y.norm() + ystar.norm();
        if r > MEMBER_TOL * scale {
            return Err(CatalogError::NotInGraph(r));
        }
        Ok(())
    }

    /// The finite set of `(P, W)` bases of the SC derivative of `∂g` at `(y, y*)`.
    pub fn sc_derivative(&self, y: &DVector<f64>, ystar: &DVector<f64>) -> Result<Vec<PwPair>, CatalogError> {
        self.require_graph(y, ystar)?;
        self.pairs_unchecked(y, ystar)
    }

    fn pairs_unchecked(&self, y: &DVector<f64>, ystar: &DVector<f64>) -> Result<Vec<PwPair>, CatalogError> {
        let m = self.dim();
        match self {
            GSpec::Quadratic { q, .. } => Ok(vec![PwPair::new(DMatrix::identity(m, m), q.clone())
                .map_err(|e| CatalogError::Invalid(e.to_string()))?]),
            GSpec::PolyhedralIndicator(p) => {
                let k = polyhedral::critical_cone(p, y, ystar)?;
                let faces = polyhedral::enumerate_faces(&k, FACE_CAP)?;
                Ok(faces
                    .iter()
                    .map(|f| {
                        let proj = f.projector();
                        PwPair::from_projector_and_curvature(&proj, &DMatrix::zeros(m, m))
                    })
                    .collect())
            }
            GSpec::Box { lower, upper } => {
                let choices: Choices = (0..m)
                    .map(|i| {
                        let near = |b: f64| b.is_finite() && (y[i] - b).abs() <= ACT_TOL * b.abs().max(1.0);
                        if lower[i] == upper[i] {
                            vec![false]
                        } else if near(lower[i]) || near(upper[i]) {
                            if ystar[i].abs() > KINK_TOL {
                                vec![false]
                            } else {
                                vec![false, true]
                            }
                        } else {
                            vec![true]
                        }
                    })
                    .collect();
                diagonal_pairs(&choices)
            }
            GSpec::L1 { weights } => {
                let choices: Choices = (0..m)
                    .map(|i| {
                        if y[i].abs() > KINK_TOL {
                            vec![true]
                        } else if ystar[i].abs() < weights[i] - KINK_TOL * weights[i].max(1.0) {
                            vec![false]
                        } else {
                            vec![false, true]
                        }
                    })
                    .collect();
                diagonal_pairs(&choices)
            }
            GSpec::SeparableSum(parts) => {
                let mut blocks = Vec::new();
                let mut off = 0;
                let mut count = 1usize;
                for g in parts {
                    let d = g.dim();
                    let pairs = g.pairs_unchecked(&y.rows(off, d).into_owned(), &ystar.rows(off, d).into_owned())?;
                    count = count.saturating_mul(pairs.len());
                    if count > PAIR_CAP {
                        return Err(CatalogError::TooManyPairs { count, cap: PAIR_CAP });
                    }
                    blocks.push((off, pairs));
                    off += d;
                }
                let mut out = vec![(DMatrix::zeros(m, m), DMatrix::zeros(m, m))];
                for (off, pairs) in &blocks {
                    let mut next = Vec::with_capacity(out.len() * pairs.len());
                    for (p, w) in &out {
                        for pair in pairs {
                            let d = pair.dim();
                            let mut p2: DMatrix<f64> = p.clone();
                            let mut w2: DMatrix<f64> = w.clone();
                            p2.view_mut((*off, *off), (d, d)).copy_from(pair.p());
                            w2.view_mut((*off, *off), (d, d)).copy_from(pair.w());
                            next.push((p2, w2));
                        }
                    }
                    out = next;
                }
                out.into_iter()
                    .map(|(p, w)| PwPair::new(p, w).map_err(|e| CatalogError::Invalid(e.to_string())))
                    .collect()
            }
        }
    }

    /// Affine pieces `z ↦ c + Bz` of `prox g` whose image closure contains
    /// `y`, i.e. the pieces meeting at a point of `gph ∂g` above `y`.
    pub fn prox_pieces(&self, y: &DVector<f64>) -> Result<Vec<AffinePiece>, CatalogError> {
        check_len(y, self.dim())?;
        let m = self.dim();
        let one_d = |b: f64, c: f64| AffinePiece {
            b: DMatrix::from_element(1, 1, b),
            c: DVector::from_element(1, c),
        };
        let blocks: Vec<Vec<AffinePiece>> = match self {
            GSpec::Quadratic { q, c } => {
                let inv = (DMatrix::identity(m, m) + q)
                    .try_inverse()
                    .ok_or_else(|| CatalogError::Invalid("I + Q is singular".into()))?;
                let c = -(&inv * c);
                return Ok(vec![AffinePiece { b: inv, c }]);
            }
            GSpec::PolyhedralIndicator(p) => {
                let t = polyhedral::tangent_cone(p, y)?;
                let faces = polyhedral::enumerate_faces(&t, FACE_CAP)?;
                return Ok(faces
                    .iter()
                    .map(|f| {
                        let b = f.projector();
                        let c = y - &b * y;
                        AffinePiece { b, c }
                    })
                    .collect());
            }
            GSpec::Box { lower, upper } => (0..m)
                .map(|i| {
                    let near = |b: f64| b.is_finite() && (y[i] - b).abs() <= ACT_TOL * b.abs().max(1.0);
                    if lower[i] == upper[i] {
                        vec![one_d(0.0, lower[i])]
                    } else if near(lower[i]) {
                        vec![one_d(0.0, lower[i]), one_d(1.0, 0.0)]
                    } else if near(upper[i]) {
                        vec![one_d(0.0, upper[i]), one_d(1.0, 0.0)]
                    } else {
                        vec![one_d(1.0, 0.0)]
                    }
                })
                .collect(),
            GSpec::L1 { weights } => (0..m)
                .map(|i| {
                    let w = weights[i];
                    if y[i] > KINK_TOL {
                        vec![one_d(1.0, -w)]
                    } else if y[i] < -KINK_TOL {
                        vec![one_d(1.0, w)]
                    } else {
                        vec![one_d(0.0, 0.0), one_d(1.0, -w), one_d(1.0, w)]
                    }
                })
                .collect(),
            GSpec::SeparableSum(parts) => {
                let mut off = 0;
                let mut out = Vec::new();
                for g in parts {
                    let d = g.dim();
                    out.push(g.prox_pieces(&y.rows(off, d).into_owned())?);
                    off += d;
                }
                out
            }
        };
        let count = blocks.iter().try_fold(1usize, |acc, b| acc.checked_mul(b.len()));
        match count {
            Some(c) if c <= PAIR_CAP => {}
            _ => {
                return Err(CatalogError::TooManyPairs {
                    count: count.unwrap_or(usize::MAX),
                    cap: PAIR_CAP,
                })
            }
        }
        let mut out = vec![AffinePiece {
            b: DMatrix::zeros(m, m),
            c: DVector::zeros(m),
        }];
        let mut off = 0;
        for block in &blocks {
            let d = block[0].c.len();
            let mut next = Vec::with_capacity(out.len() * block.len());
            for piece in &out {
                for part in block {
                    let mut p = piece.clone();
                    p.b.view_mut((off, off), (d, d)).copy_from(&part.b);
                    p.c.rows_mut(off, d).copy_from(&part.c);
                    next.push(p);
                }
            }
            out = next;
            off += d;
        }
        Ok(out)
    }

    pub fn quad_bundle(&self, y: &DVector<f64>, ystar: &DVector<f64>) -> Result<Vec<GeneralizedQuadraticForm>, CatalogError> {
        Ok(self
            .sc_derivative(y, ystar)?
            .into_iter()
            .map(|pair| GeneralizedQuadraticForm { pair })
            .collect())
    }

    /// `min {⟨w, Ww⟩ : (P, W) in the SC derivative, w ∈ rge P}`, `+∞` if no
    /// pair admits `w`.
    pub fn q_subderivative(&self, y: &DVector<f64>, ystar: &DVector<f64>, w: &DVector<f64>) -> Result<f64, CatalogError> {
        check_len(w, self.dim())?;
        Ok(q_subderivative_over(&self.sc_derivative(y, ystar)?, w))
    }

    /// Generators of `N_{dom g}(y)`.
    pub fn normal_cone_dom(&self, y: &DVector<f64>) -> Result<NormalCone, CatalogError> {
        check_len(y, self.dim())?;
        if !self.value(y).is_finite() {
            return Err(CatalogError::NotInDomain);
        }
        let s = self.subdifferential_of_indicator_part(y)?;
        Ok(NormalCone {
            rays: s.rays,
            lines: s.lines,
        })
    }

    /// Cone part of `∂g(y)` for the indicator variants, empty otherwise.
    fn subdifferential_of_indicator_part(&self, y: &DVector<f64>) -> Result<SubdiffSet, CatalogError> {
        let m = self.dim();
        let mut out = SubdiffSet {
            base: vec![0.0; m],
            ..Default::default()
        };
        match self {
            GSpec::PolyhedralIndicator(p) => {
                for &i in p.eq_rows() {
                    out.lines.push(p.a().row(i).transpose());
                }
                for i in p.active_rows(y) {
                    out.rays.push(p.a().row(i).transpose());
                }
            }
            GSpec::Box { lower, upper } => {
                for i in 0..m {
                    let near = |b: f64| b.is_finite() && (y[i] - b).abs() <= ACT_TOL * b.abs().max(1.0);
                    if lower[i] == upper[i] {
                        out.lines.push(unit(m, i));
                    } else if near(upper[i]) {
                        out.rays.push(unit(m, i));
                    } else if near(lower[i]) {
                        out.rays.push(-unit(m, i));
                    }
                }
            }
            GSpec::L1 { .. } | GSpec::Quadratic { .. } => {}
            GSpec::SeparableSum(parts) => {
                let mut off = 0;
                for g in parts {
                    let d = g.dim();
                    let part = g.subdifferential_of_indicator_part(&y.rows(off, d).into_owned())?;
                    let embed = |v: &DVector<f64>| {
                        let mut e = DVector::zeros(m);
                        e.rows_mut(off, d).copy_from(v);
                        e
                    };
                    out.rays.extend(part.rays.iter().map(embed));
                    out.lines.extend(part.lines.iter().map(embed));
                    off += d;
                }
            }
        }
        Ok(out)
    }

    /// `∂g(y)` as a polyhedral description; errors if `y ∉ dom g`.
    pub fn subdifferential(&self, y: &DVector<f64>) -> Result<SubdiffSet, CatalogError> {
        check_len(y, self.dim())?;
        if !self.value(y).is_finite() {
            return Err(CatalogError::NotInDomain);
        }
        let m = self.dim();
        match self {
            GSpec::PolyhedralIndicator(_) | GSpec::Box { .. } => self.subdifferential_of_indicator_part(y),
            GSpec::L1 { weights } => {
                let mut out = SubdiffSet {
                    base: vec![0.0; m],
                    ..Default::default()
                };
                for i in 0..m {
                    if y[i].abs() > KINK_TOL {
                        out.base[i] = weights[i] * y[i].signum();
                    } else {
                        out.intervals.push((i, -weights[i], weights[i]));
                    }
                }
                Ok(out)
            }
            GSpec::Quadratic { q, c } => Ok(SubdiffSet {
                base: (q * y + c).iter().copied().collect(),
                ..Default::default()
            }),
            GSpec::SeparableSum(parts) => {
                let mut out = SubdiffSet {
                    base: vec![0.0; m],
                    ..Default::default()
                };
                let mut off = 0;
                for g in parts {
                    let d = g.dim();
                    let part = g.subdifferential(&y.rows(off, d).into_owned())?;
                    let embed = |v: &DVector<f64>| {
                        let mut e = DVector::zeros(m);
                        e.rows_mut(off, d).copy_from(v);
                        e
                    };
                    out.base[off..off + d].copy_from_slice(&part.base);
                    out.rays.extend(part.rays.iter().map(embed));
                    out.lines.extend(part.lines.iter().map(embed));
                    out.intervals
                        .extend(part.intervals.iter().map(|&(i, lo, hi)| (i + off, lo, hi)));
                    off += d;
                }
                Ok(out)
            }
        }
    }
}

/// q-subderivative over an explicit pair list.
pub fn q_subderivative_over(pairs: &[PwPair], w: &DVector<f64>) -> f64 {
    pairs
        .iter()
        .filter(|p| in_range(p, w))
        .map(|p| w.dot(&(p.w() * w)))
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prox_pieces_cover_the_prox() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let specs = vec![
            GSpec::l1(DVector::from_column_slice(&[1.0, 0.5])).unwrap(),
            GSpec::boxed(DVector::from_column_slice(&[-1.0, 0.0]), DVector::from_column_slice(&[1.0, f64::INFINITY])).unwrap(),
            GSpec::polyhedral(DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]), DVector::from_column_slice(&[0.0, 0.0, 0.5]), vec![]).unwrap(),
            GSpec::quadratic(DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 1.0]), DVector::from_column_slice(&[0.3, -0.1])).unwrap(),
        ];
        for g in &specs {
            for k in 0..200 {
                // round some coordinates so that kinks are hit exactly
                let z = DVector::from_fn(2, |_, _| {
                    let t: f64 = rng.random_range(-2.0..2.0);
                    if k % 3 == 0 { t.round() } else { t }
                });
                let y = g.prox(&z).unwrap();
                let pieces = g.prox_pieces(&y).unwrap();
                assert!(
                    pieces.iter().any(|p| (&p.c + &p.b * &z - &y).norm() < 1e-9),
                    "{} at z = {z}",
                    g.kind()
                );
            }
        }
    }

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn rminus() -> GSpec {
        GSpec::polyhedral(DMatrix::from_element(1, 1, 1.0), v(&[0.0]), vec![]).unwrap()
    }

    fn has_pair(pairs: &[PwPair], p: f64, w: f64) -> bool {
        pairs.iter().any(|q| (q.p()[(0, 0)] - p).abs() < 1e-12 && (q.w()[(0, 0)] - w).abs() < 1e-12)
    }

    #[test]
    fn prox_examples() {
        assert_eq!(rminus().prox(&v(&[2.0])).unwrap()[0], 0.0);
        let l1 = GSpec::l1(v(&[1.0])).unwrap();
        assert_eq!(l1.prox(&v(&[1.5])).unwrap()[0], 0.5);
        assert_eq!(l1.prox(&v(&[-0.3])).unwrap()[0], 0.0);
        let quad = GSpec::quadratic(DMatrix::identity(1, 1), v(&[0.0])).unwrap();
        assert!((quad.prox(&v(&[4.0])).unwrap()[0] - 2.0).abs() < 1e-15);
        let bx = GSpec::boxed(v(&[-1.0, f64::NEG_INFINITY]), v(&[1.0, 0.0])).unwrap();
        assert_eq!(bx.prox(&v(&[3.0, 3.0])).unwrap(), v(&[1.0, 0.0]));
    }

    #[test]
    fn subdifferential_membership() {
        assert!(rminus().in_subdifferential(&v(&[0.0]), &v(&[1.0]), MEMBER_TOL));
        assert!(!rminus().in_subdifferential(&v(&[-1.0]), &v(&[1.0]), MEMBER_TOL));
        let l1 = GSpec::l1(v(&[1.0])).unwrap();
        assert!(l1.in_subdifferential(&v(&[0.0]), &v(&[0.3]), MEMBER_TOL));
        assert!(!l1.in_subdifferential(&v(&[0.0]), &v(&[1.3]), MEMBER_TOL));
    }

    #[test]
    fn invalid_data_is_rejected() {
        assert!(GSpec::l1(v(&[0.0])).is_err());
        assert!(GSpec::boxed(v(&[1.0]), v(&[0.0])).is_err());
        assert!(GSpec::quadratic(DMatrix::from_element(1, 1, -1.0), v(&[0.0])).is_err());
        assert!(GSpec::quadratic(DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]), v(&[0.0, 0.0])).is_err());
        assert!(GSpec::polyhedral(DMatrix::from_row_slice(2, 1, &[1.0, -1.0]), v(&[-1.0, -1.0]), vec![]).is_err());
    }

    #[test]
    fn sc_derivative_examples() {
        let q = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let quad = GSpec::quadratic(q.clone(), v(&[0.0, 0.0])).unwrap();
        let y = v(&[1.0, -1.0]);
        let pairs = quad.sc_derivative(&y, &(&q * &y)).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].p(), &DMatrix::identity(2, 2));
        assert_eq!(pairs[0].w(), &q);

        let l1 = GSpec::l1(v(&[1.0])).unwrap();
        let pairs = l1.sc_derivative(&v(&[0.0]), &v(&[1.0])).unwrap();
        assert_eq!(pairs.len(), 2);
        assert!(has_pair(&pairs, 0.0, 1.0) && has_pair(&pairs, 1.0, 0.0));

        let pairs = rminus().sc_derivative(&v(&[0.0]), &v(&[0.0])).unwrap();
        assert_eq!(pairs.len(), 2);
        assert!(has_pair(&pairs, 0.0, 1.0) && has_pair(&pairs, 1.0, 0.0));

        let pairs = rminus().sc_derivative(&v(&[0.0]), &v(&[1.0])).unwrap();
        assert_eq!(pairs.len(), 1);
        assert!(has_pair(&pairs, 0.0, 1.0));

        assert!(matches!(
            rminus().sc_derivative(&v(&[-1.0]), &v(&[1.0])),
            Err(CatalogError::NotInGraph(_))
        ));
    }

    #[test]
    fn box_rules_match_polyhedral_faces() {
        let bx = GSpec::boxed(v(&[-1.0, 0.0, f64::NEG_INFINITY, 2.0]), v(&[1.0, 0.0, 0.0, f64::INFINITY])).unwrap();
        let poly = GSpec::PolyhedralIndicator(bx.as_polyhedron().unwrap());
        let y = v(&[1.0, 0.0, 0.0, 3.0]);
        for ystar in [v(&[0.0, 0.5, 0.0, 0.0]), v(&[2.0, -1.0, 0.0, 0.0]), v(&[0.0, 0.0, 1.0, 0.0])] {
            let a: Vec<_> = bx.sc_derivative(&y, &ystar).unwrap().iter().map(PwPair::to_subspace).collect();
            let b: Vec<_> = poly.sc_derivative(&y, &ystar).unwrap().iter().map(PwPair::to_subspace).collect();
            assert!(crate::subspace::subspace_sets_equal(&a, &b, 1e-10));
        }
    }

    #[test]
    fn separable_combines_components() {
        let g = GSpec::separable(vec![
            GSpec::l1(v(&[1.0])).unwrap(),
            rminus(),
            GSpec::quadratic(DMatrix::from_element(1, 1, 2.0), v(&[0.0])).unwrap(),
        ])
        .unwrap();
        let y = v(&[0.0, 0.0, 1.0]);
        let ystar = v(&[1.0, 0.0, 2.0]);
        let pairs = g.sc_derivative(&y, &ystar).unwrap();
        assert_eq!(pairs.len(), 4);
        for p in &pairs {
            assert_eq!(p.p()[(2, 2)], 1.0);
            assert_eq!(p.w()[(2, 2)], 2.0);
        }
        assert_eq!(g.prox(&v(&[1.5, 1.0, 3.0])).unwrap(), v(&[0.5, 0.0, 1.0]));
    }

    #[test]
    fn pair_cap_is_enforced() {
        let g = GSpec::l1(DVector::from_element(13, 1.0)).unwrap();
        let r = g.sc_derivative(&DVector::zeros(13), &DVector::from_element(13, 1.0));
        assert!(matches!(r, Err(CatalogError::TooManyPairs { .. })));
    }

    #[test]
    fn quad_bundle_examples() {
        let forms = rminus().quad_bundle(&v(&[0.0]), &v(&[0.0])).unwrap();
        let mut vals: Vec<f64> = forms.iter().map(|f| f.value(&v(&[1.0]))).collect();
        vals.sort_by(f64::total_cmp);
        assert_eq!(vals, vec![0.0, f64::INFINITY]);

        let l1 = GSpec::l1(v(&[1.0])).unwrap();
        let forms = l1.quad_bundle(&v(&[0.5]), &v(&[1.0])).unwrap();
        assert_eq!(forms.len(), 1);
        assert_eq!(forms[0].value(&v(&[3.0])), 0.0);
    }

    #[test]
    fn q_subderivative_examples() {
        let g = rminus();
        assert_eq!(g.q_subderivative(&v(&[0.0]), &v(&[0.0]), &v(&[-1.0])).unwrap(), 0.0);
        assert_eq!(
            g.q_subderivative(&v(&[0.0]), &v(&[1.0]), &v(&[1.0])).unwrap(),
            f64::INFINITY
        );
        let q = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let quad = GSpec::quadratic(q.clone(), v(&[0.0, 0.0])).unwrap();
        let y = v(&[0.0, 0.0]);
        let w = v(&[1.0, -2.0]);
        let val = quad.q_subderivative(&y, &y, &w).unwrap();
        assert!((val - w.dot(&(&q * &w))).abs() < 1e-12);
    }

    #[test]
    fn normal_cone_examples() {
        let nc = rminus().normal_cone_dom(&v(&[0.0])).unwrap();
        assert_eq!((nc.rays.len(), nc.lines.len()), (1, 0));
        assert_eq!(nc.rays[0][0], 1.0);
        assert!(GSpec::l1(v(&[1.0, 1.0])).unwrap().normal_cone_dom(&v(&[3.0, -1.0])).unwrap().is_trivial());
        let orth = GSpec::polyhedral(DMatrix::identity(2, 2), v(&[0.0, 0.0]), vec![]).unwrap();
        let nc = orth.normal_cone_dom(&v(&[0.0, 0.0])).unwrap();
        assert_eq!(nc.rays.len(), 2);
        assert!(matches!(rminus().normal_cone_dom(&v(&[1.0])), Err(CatalogError::NotInDomain)));
    }

    #[test]
    fn polyhedral_pairs_are_self_adjoint_and_orthogonal() {
        let g = GSpec::polyhedral(
            DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0]),
            v(&[0.0, 0.0, 0.0]),
            vec![],
        )
        .unwrap();
        let pairs = g.sc_derivative(&v(&[0.0, 0.0, 0.0]), &v(&[0.0, 0.0, 0.0])).unwrap();
        assert!(pairs.len() > 3);
        for pair in &pairs {
            let l = pair.to_subspace();
            assert!(l.adjoint().unwrap().dz(&l).unwrap() < 1e-10);
            assert!((pair.p() * pair.w() * pair.p()).norm() < 1e-12);
            // ⟨v, v*⟩ = 0 on the subspace
            let b = l.basis();
            let gram = b.rows(0, 3).transpose() * b.rows(3, 3);
            assert!(linalg::symmetrize(&gram).norm() < 1e-12);
        }
    }
}
