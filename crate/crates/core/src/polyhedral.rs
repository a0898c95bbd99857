//! Polyhedral sets and cones: tangent and critical cones, face enumeration,
//! lineality spaces, nondegeneracy and the face pairs that make up the
//! limiting coderivative of a polyhedral normal-cone mapping.

use std::collections::{BTreeSet, VecDeque};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::linalg::{self, RANK_TOL};
use crate::lp::{Cmp, Lp};
use crate::qp::{self, QpError};
use crate::subspace::Subspace;

/// Constraint rows with `|A_i y - c_i| <= ACT_TOL * max(1, |c_i|)` are active.
pub const ACT_TOL: f64 = 1e-8;
/// Feasibility tolerance for membership in `C`.
pub const MEMBER_TOL: f64 = 1e-9;
/// Default maximum number of inequality rows for face enumeration.
pub const FACE_CAP: usize = 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolyError {
    #[error("constraint matrix is {rows}x{cols} but right-hand side has length {rhs}")]
    Shape { rows: usize, cols: usize, rhs: usize },
    #[error("equality row index {0} out of range")]
    EqRowIndex(usize),
    #[error("polyhedron is empty")]
    Empty,
    #[error("point violates constraint row {row} by {violation:.3e}")]
    NotInSet { row: usize, violation: f64 },
    #[error("vector is not a normal to the set at the point (prox residual {0:.3e})")]
    NotNormal(f64),
    #[error("point has length {found}, expected {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("{rows} inequality rows exceed the face enumeration cap {cap}")]
    FaceCapExceeded { rows: usize, cap: usize },
    #[error(transparent)]
    Projection(#[from] QpError),
}

/// `C = {y : A_i y = c_i (i in eq_rows), A_i y <= c_i (otherwise)}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyhedron {
    a: DMatrix<f64>,
    c: DVector<f64>,
    eq_rows: Vec<usize>,
}

impl Polyhedron {
    /// Validates shapes and certifies nonemptiness with an LP.
    pub fn new(a: DMatrix<f64>, c: DVector<f64>, eq_rows: Vec<usize>) -> Result<Self, PolyError> {
        if a.nrows() != c.len() {
            return Err(PolyError::Shape {
                rows: a.nrows(),
                cols: a.ncols(),
                rhs: c.len(),
            });
        }
        let mut eq_rows = eq_rows;
        eq_rows.sort_unstable();
        eq_rows.dedup();
        if let Some(&bad) = eq_rows.iter().find(|&&i| i >= a.nrows()) {
            return Err(PolyError::EqRowIndex(bad));
        }
        let poly = Polyhedron { a, c, eq_rows };
        let mut lp = Lp::new(poly.dim());
        for i in 0..poly.num_rows() {
            let cmp = if poly.is_eq(i) { Cmp::Eq } else { Cmp::Le };
            lp.add_row(poly.a.row(i).transpose().as_slice(), cmp, poly.c[i]);
        }
        if lp.feasible_point().is_none() {
            return Err(PolyError::Empty);
        }
        Ok(poly)
    }

    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    pub fn num_rows(&self) -> usize {
        self.a.nrows()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn c(&self) -> &DVector<f64> {
        &self.c
    }

    pub fn eq_rows(&self) -> &[usize] {
        &self.eq_rows
    }

    pub fn is_eq(&self, i: usize) -> bool {
        self.eq_rows.binary_search(&i).is_ok()
    }

    /// Largest constraint violation at `y` with its row, scaled as in
    /// [`Polyhedron::check_member`].
    fn worst_violation(&self, y: &DVector<f64>) -> Option<(usize, f64)> {
        (0..self.num_rows())
            .map(|i| {
                let r = self.a.row(i).dot(&y.transpose()) - self.c[i];
                let v = if self.is_eq(i) { r.abs() } else { r.max(0.0) };
                (i, v / self.row_scale(i, y))
            })
            .max_by(|x, y| x.1.total_cmp(&y.1))
    }

    fn row_scale(&self, i: usize, y: &DVector<f64>) -> f64 {
        1f64.max(self.c[i].abs()).max(self.a.row(i).norm() * y.norm())
    }

    pub fn check_member(&self, y: &DVector<f64>) -> Result<(), PolyError> {
        if y.len() != self.dim() {
            return Err(PolyError::Dimension {
                expected: self.dim(),
                found: y.len(),
            });
        }
        match self.worst_violation(y) {
            Some((row, v)) if v > MEMBER_TOL => Err(PolyError::NotInSet { row, violation: v }),
            _ => Ok(()),
        }
    }

    /// Inequality rows active at `y`.
    pub fn active_rows(&self, y: &DVector<f64>) -> Vec<usize> {
        (0..self.num_rows())
            .filter(|&i| !self.is_eq(i))
            .filter(|&i| {
                let r = self.a.row(i).dot(&y.transpose()) - self.c[i];
                r.abs() <= ACT_TOL * self.row_scale(i, y)
            })
            .collect()
    }

    /// Euclidean projection onto `C`.
    pub fn project(&self, z: &DVector<f64>) -> Result<DVector<f64>, PolyError> {
        Ok(qp::project_polyhedron(&self.a, &self.c, &self.eq_rows, z)?.x)
    }
}

/// `{v : E v = 0, G v <= 0}` in `R^dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyCone {
    dim: usize,
    e: DMatrix<f64>,
    g: DMatrix<f64>,
}

impl PolyCone {
    pub fn new(dim: usize, e: DMatrix<f64>, g: DMatrix<f64>) -> Self {
        assert!(e.ncols() == dim && g.ncols() == dim, "cone rows must have length dim");
        PolyCone { dim, e, g }
    }

    pub fn whole(dim: usize) -> Self {
        PolyCone::new(dim, DMatrix::zeros(0, dim), DMatrix::zeros(0, dim))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn e(&self) -> &DMatrix<f64> {
        &self.e
    }

    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn num_ineq(&self) -> usize {
        self.g.nrows()
    }

    pub fn contains(&self, v: &DVector<f64>, tol: f64) -> bool {
        let s = tol * (1.0 + v.norm());
        (&self.e * v).amax() <= s && (&self.g * v).iter().all(|&x| x <= s)
    }

    /// Whether `w` lies in the polar cone `{E^T a + G^T b : b >= 0}`.
    pub fn polar_contains(&self, w: &DVector<f64>, tol: f64) -> bool {
        let ne = self.e.nrows();
        let ng = self.g.nrows();
        let mut lp = Lp::new(ne + ng);
        for j in ne..ne + ng {
            lp.set_nonneg(j);
        }
        // allow a small residual so that the check is robust to round-off
        let slack_lo = lp.num_vars();
        for _ in 0..self.dim {
            lp.add_var();
        }
        for k in 0..self.dim {
            let mut row = vec![0.0; lp.num_vars()];
            for i in 0..ne {
                row[i] = self.e[(i, k)];
            }
            for i in 0..ng {
                row[ne + i] = self.g[(i, k)];
            }
            row[slack_lo + k] = 1.0;
            lp.add_row(&row, Cmp::Eq, w[k]);
        }
        let s = tol * (1.0 + w.norm());
        for k in 0..self.dim {
            lp.bound(slack_lo + k, -s, s);
        }
        lp.feasible_point().is_some()
    }

    /// Stacked equality rows `[E; G_idx]`.
    fn equality_rows(&self, idx: &[usize]) -> DMatrix<f64> {
        let gi = linalg::select_rows(&self.g, idx);
        linalg::vstack(&[&self.e, &gi], self.dim)
    }

    /// Smallest face containing `{v in K : G_i v = 0, i in set}`: returns the
    /// set of all inequality rows vanishing on it and a relative-interior
    /// point, where every other row is strictly negative.
    fn closure(&self, set: &BTreeSet<usize>) -> (BTreeSet<usize>, DVector<f64>) {
        let k = self.num_ineq();
        let free: Vec<usize> = (0..k).filter(|i| !set.contains(i)).collect();
        let nv = self.dim + free.len();
        let mut lp = Lp::new(nv);
        for i in 0..self.e.nrows() {
            let mut row = vec![0.0; nv];
            row[..self.dim].copy_from_slice(self.e.row(i).transpose().as_slice());
            lp.add_row(&row, Cmp::Eq, 0.0);
        }
        for &i in set {
            let mut row = vec![0.0; nv];
            row[..self.dim].copy_from_slice(self.g.row(i).transpose().as_slice());
            lp.add_row(&row, Cmp::Eq, 0.0);
        }
        for (s, &i) in free.iter().enumerate() {
            let mut row = vec![0.0; nv];
            row[..self.dim].copy_from_slice(self.g.row(i).transpose().as_slice());
            row[self.dim + s] = 1.0;
            lp.add_row(&row, Cmp::Le, 0.0);
            lp.bound(self.dim + s, 0.0, 1.0);
        }
        let mut obj = vec![0.0; nv];
        for v in obj.iter_mut().skip(self.dim) {
            *v = 1.0;
        }
        let mut out = set.clone();
        let x = match lp.maximize(&obj) {
            crate::lp::LpResult::Optimal { x, .. } => x,
            // always feasible (v = 0) and bounded; treat trouble as "no strict row"
            _ => vec![0.0; nv],
        };
        for (s, &i) in free.iter().enumerate() {
            if x[self.dim + s] < 0.5 {
                out.insert(i);
            }
        }
        (out, DVector::from_column_slice(&x[..self.dim]))
    }
}

/// A face `F = {v in K : G_i v = 0, i in active_set}` of a polyhedral cone.
#[derive(Debug, Clone)]
pub struct Face {
    /// Every inequality row vanishing on the face, sorted.
    pub active_set: Vec<usize>,
    /// Orthonormal basis of `F - F` (columns).
    pub span_basis: DMatrix<f64>,
    /// A point of the face at which all rows outside `active_set` are strict.
    pub rel_int: DVector<f64>,
}

impl Face {
    pub fn dim(&self) -> usize {
        self.span_basis.ncols()
    }

    pub fn span(&self) -> Subspace {
        Subspace::from_columns(&self.span_basis)
    }

    pub fn projector(&self) -> DMatrix<f64> {
        linalg::projector(&self.span_basis, self.span_basis.nrows())
    }
}

/// Tangent cone of `C` at `y`.
pub fn tangent_cone(c: &Polyhedron, y: &DVector<f64>) -> Result<PolyCone, PolyError> {
    c.check_member(y)?;
    let e = linalg::select_rows(c.a(), c.eq_rows());
    let g = linalg::select_rows(c.a(), &c.active_rows(y));
    Ok(PolyCone::new(c.dim(), e, g))
}

/// Critical cone `{v in T_C(y) : <ystar, v> = 0}`.
pub fn critical_cone(
    c: &Polyhedron,
    y: &DVector<f64>,
    ystar: &DVector<f64>,
) -> Result<PolyCone, PolyError> {
    let t = tangent_cone(c, y)?;
    if ystar.len() != c.dim() {
        return Err(PolyError::Dimension {
            expected: c.dim(),
            found: ystar.len(),
        });
    }
    let p = c.project(&(y + ystar))?;
    let res = (&p - y).norm();
    if res > MEMBER_TOL * (1.0 + y.norm() + ystar.norm()) {
        return Err(PolyError::NotNormal(res));
    }
    let nrm = ystar.norm();
    if nrm <= 1e-12 {
        return Ok(t);
    }
    let row = (ystar / nrm).transpose();
    let e = linalg::vstack(&[&t.e, &DMatrix::from_row_slice(1, c.dim(), row.as_slice())], c.dim());
    Ok(PolyCone::new(c.dim(), e, t.g))
}

impl PolyCone {
    /// Orthonormal basis of `span K`, the span of its largest face.
    pub fn linear_span(&self) -> DMatrix<f64> {
        let (top, _) = self.closure(&BTreeSet::new());
        let active: Vec<usize> = top.iter().copied().collect();
        linalg::null_space(&self.equality_rows(&active), RANK_TOL)
    }
}

/// All faces of `k`, sorted lexicographically by active set.
///
/// Faces are reached from the largest one by repeatedly forcing one more row
/// to equality and closing the resulting set; every face arises this way
/// because the face lattice is graded.
pub fn enumerate_faces(k: &PolyCone, cap: usize) -> Result<Vec<Face>, PolyError> {
    if k.num_ineq() > cap {
        return Err(PolyError::FaceCapExceeded {
            rows: k.num_ineq(),
            cap,
        });
    }
    let (top, top_pt) = k.closure(&BTreeSet::new());
    let mut seen: BTreeSet<Vec<usize>> = BTreeSet::new();
    let mut faces = Vec::new();
    let mut queue = VecDeque::new();
    seen.insert(top.iter().copied().collect());
    queue.push_back((top, top_pt));
    while let Some((set, pt)) = queue.pop_front() {
        for i in 0..k.num_ineq() {
            if set.contains(&i) {
                continue;
            }
            let mut bigger = set.clone();
            bigger.insert(i);
            let (cl, cl_pt) = k.closure(&bigger);
            let key: Vec<usize> = cl.iter().copied().collect();
            if seen.insert(key) {
                queue.push_back((cl, cl_pt));
            }
        }
        let active: Vec<usize> = set.iter().copied().collect();
        let span_basis = linalg::null_space(&k.equality_rows(&active), RANK_TOL);
        faces.push(Face {
            active_set: active,
            span_basis,
            rel_int: pt,
        });
    }
    faces.sort_by(|a, b| a.active_set.cmp(&b.active_set));
    Ok(faces)
}

/// `lin K = {v : E v = 0, G v = 0}`.
pub fn lineality_space(k: &PolyCone) -> Subspace {
    let all: Vec<usize> = (0..k.num_ineq()).collect();
    Subspace::from_columns(&linalg::null_space(&k.equality_rows(&all), RANK_TOL))
}

/// Nondegeneracy `rge JF + lin T_C(y) = R^m`; on failure returns a unit
/// vector orthogonal to both.
pub fn nondegeneracy(
    jf: &DMatrix<f64>,
    c: &Polyhedron,
    y: &DVector<f64>,
) -> Result<(bool, Option<DVector<f64>>), PolyError> {
    let t = tangent_cone(c, y)?;
    let lin = lineality_space(&t);
    let m = c.dim();
    let stacked = linalg::hstack(&[jf, lin.basis()], m);
    let perp = linalg::null_space(&stacked.transpose(), RANK_TOL);
    if perp.ncols() == 0 {
        Ok((true, None))
    } else {
        Ok((false, Some(perp.column(0).into_owned())))
    }
}

/// An ordered face pair `F2 ⊆ F1` and the cone `D = F1 - F2`.
#[derive(Debug, Clone)]
pub struct FacePair {
    /// Index of `F1` in the face list.
    pub big: usize,
    /// Index of `F2` in the face list.
    pub small: usize,
    /// `D = F1 - F2 = {v : E v = 0, G_{A1} v = 0, G_{A2 \ A1} v <= 0}`.
    pub diff: PolyCone,
}

/// All face pairs `F2 ⊆ F1` of `k`.
///
/// The limiting normal cone to `gph N_C` at `(y, y*)` is the union of
/// `D° x D` over these pairs, so the graph of the limiting coderivative
/// `D* N_C(y, y*)` is the union of `(-D) x D°`.
pub fn coderivative_face_pairs(k: &PolyCone, cap: usize) -> Result<(Vec<Face>, Vec<FacePair>), PolyError> {
    let faces = enumerate_faces(k, cap)?;
    let mut pairs = Vec::new();
    for (i1, f1) in faces.iter().enumerate() {
        for (i2, f2) in faces.iter().enumerate() {
            let a1: BTreeSet<usize> = f1.active_set.iter().copied().collect();
            let a2: BTreeSet<usize> = f2.active_set.iter().copied().collect();
            if !a1.is_subset(&a2) {
                continue;
            }
            let a1v: Vec<usize> = a1.iter().copied().collect();
            let extra: Vec<usize> = a2.difference(&a1).copied().collect();
            let e = k.equality_rows(&a1v);
            let g = linalg::select_rows(&k.g, &extra);
            pairs.push(FacePair {
                big: i1,
                small: i2,
                diff: PolyCone::new(k.dim, e, g),
            });
        }
    }
    Ok((faces, pairs))
}
