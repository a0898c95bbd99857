//! Linear subspaces of `R^{2d}` and their `(P, W)` bases.
//!
//! A [`Subspace`] stores an orthonormal basis together with the orthogonal
//! projector, which makes the metric `d_Z(L1, L2) = ||P_{L1} - P_{L2}||`
//! a single symmetric eigenvalue computation. Subspaces of `R^{2d}` are read
//! as pairs `(x, x*)` with `x` in the first `d` coordinates.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::linalg::{self, RANK_TOL};

/// Two subspaces are considered equal when their `d_Z` distance is below this.
pub const SUBSPACE_TOL: f64 = 1e-8;

/// Residual accepted when verifying a computed `(P, W)` basis.
const PW_VERIFY_TOL: f64 = 1e-8;

/// Residual accepted by [`PwPair::new`].
const PW_INVARIANT_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SubspaceError {
    #[error("vector {index} has length {found}, expected {expected}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("ambient dimensions differ: {0} vs {1}")]
    AmbientMismatch(usize, usize),
    #[error("ambient dimension {0} is odd; adjoint needs R^d x R^d")]
    OddAmbient(usize),
    #[error("(P, W) invariant violated: {0}")]
    PwInvariant(String),
}

#[derive(Debug, Clone)]
pub struct Subspace {
    ambient: usize,
    basis: DMatrix<f64>,
    proj: DMatrix<f64>,
}

impl Subspace {
    /// Span of `vectors` in `R^ambient`. An empty list gives the zero subspace.
    pub fn from_vectors(ambient: usize, vectors: &[DVector<f64>]) -> Result<Self, SubspaceError> {
        Self::from_vectors_with_tol(ambient, vectors, RANK_TOL)
    }

    pub fn from_vectors_with_tol(
        ambient: usize,
        vectors: &[DVector<f64>],
        rank_tol: f64,
    ) -> Result<Self, SubspaceError> {
        for (index, v) in vectors.iter().enumerate() {
            if v.len() != ambient {
                return Err(SubspaceError::DimensionMismatch {
                    index,
                    expected: ambient,
                    found: v.len(),
                });
            }
        }
        let mut m = DMatrix::zeros(ambient, vectors.len());
        for (j, v) in vectors.iter().enumerate() {
            m.set_column(j, v);
        }
        Ok(Self::from_columns_with_tol(&m, rank_tol))
    }

    /// Column span of `m`.
    pub fn from_columns(m: &DMatrix<f64>) -> Self {
        Self::from_columns_with_tol(m, RANK_TOL)
    }

    pub fn from_columns_with_tol(m: &DMatrix<f64>, rank_tol: f64) -> Self {
        let ambient = m.nrows();
        let basis = linalg::orth(m, rank_tol);
        let proj = linalg::projector(&basis, ambient);
        Subspace {
            ambient,
            basis,
            proj,
        }
    }

    pub fn zero(ambient: usize) -> Self {
        Subspace {
            ambient,
            basis: DMatrix::zeros(ambient, 0),
            proj: DMatrix::zeros(ambient, ambient),
        }
    }

    pub fn whole(ambient: usize) -> Self {
        Subspace {
            ambient,
            basis: DMatrix::identity(ambient, ambient),
            proj: DMatrix::identity(ambient, ambient),
        }
    }

    /// The product `a x b` of a subspace of `R^d` with one of `R^d`, as a
    /// subspace of `R^{2d}`.
    pub fn product(a: &Subspace, b: &Subspace) -> Self {
        let (da, db) = (a.ambient, b.ambient);
        let mut m = DMatrix::zeros(da + db, a.dim() + b.dim());
        m.view_mut((0, 0), (da, a.dim())).copy_from(&a.basis);
        m.view_mut((da, a.dim()), (db, b.dim())).copy_from(&b.basis);
        Subspace::from_columns(&m)
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn proj(&self) -> &DMatrix<f64> {
        &self.proj
    }

    pub fn orthogonal_complement(&self) -> Subspace {
        let basis = linalg::complement(&self.basis, self.ambient);
        let proj = linalg::projector(&basis, self.ambient);
        Subspace {
            ambient: self.ambient,
            basis,
            proj,
        }
    }

    /// Distance from `v` to the subspace.
    pub fn distance(&self, v: &DVector<f64>) -> f64 {
        (v - &self.proj * v).norm()
    }

    pub fn contains(&self, v: &DVector<f64>, tol: f64) -> bool {
        self.distance(v) <= tol * v.norm().max(1.0)
    }

    /// `d_Z(self, other)`: spectral norm of the projector difference.
    pub fn dz(&self, other: &Subspace) -> Result<f64, SubspaceError> {
        dz_metric(self, other)
    }

    pub fn approx_eq(&self, other: &Subspace) -> bool {
        matches!(self.dz(other), Ok(d) if d <= SUBSPACE_TOL)
    }

    pub fn adjoint(&self) -> Result<Subspace, SubspaceError> {
        adjoint(self)
    }
}

/// `d_Z(L1, L2) = ||P_{L1} - P_{L2}||`.
pub fn dz_metric(l1: &Subspace, l2: &Subspace) -> Result<f64, SubspaceError> {
    if l1.ambient != l2.ambient {
        return Err(SubspaceError::AmbientMismatch(l1.ambient, l2.ambient));
    }
    Ok(linalg::sym_norm(&(&l1.proj - &l2.proj)))
}

/// `L* = {(y*, x*) : (x*, -y*) in L^perp}`.
pub fn adjoint(l: &Subspace) -> Result<Subspace, SubspaceError> {
    if l.ambient % 2 != 0 {
        return Err(SubspaceError::OddAmbient(l.ambient));
    }
    let d = l.ambient / 2;
    let perp = l.orthogonal_complement();
    // (a, b) in L^perp maps to (-b, a); the map is orthogonal so the image
    // basis stays orthonormal.
    let pb = perp.basis();
    let mut m = DMatrix::zeros(l.ambient, pb.ncols());
    for j in 0..pb.ncols() {
        for i in 0..d {
            m[(i, j)] = -pb[(d + i, j)];
            m[(d + i, j)] = pb[(i, j)];
        }
    }
    Ok(Subspace::from_columns(&m))
}

/// Symmetric `d x d` matrices `(P, W)` with `P^2 = P` and `W(I - P) = I - P`.
#[derive(Debug, Clone)]
pub struct PwPair {
    p: DMatrix<f64>,
    w: DMatrix<f64>,
}

impl PwPair {
    pub fn new(p: DMatrix<f64>, w: DMatrix<f64>) -> Result<Self, SubspaceError> {
        let d = p.nrows();
        if p.ncols() != d || w.nrows() != d || w.ncols() != d {
            return Err(SubspaceError::PwInvariant(format!(
                "shapes {}x{} and {}x{} are not square of equal size",
                p.nrows(),
                p.ncols(),
                w.nrows(),
                w.ncols()
            )));
        }
        let scale = 1.0 + w.amax();
        let check = |name: &str, r: f64, s: f64| {
            if r > PW_INVARIANT_TOL * s {
                Err(SubspaceError::PwInvariant(format!("{name} residual {r:.3e}")))
            } else {
                Ok(())
            }
        };
        check("P - P^T", (&p - p.transpose()).norm(), 1.0)?;
        check("W - W^T", (&w - w.transpose()).norm(), scale)?;
        check("P^2 - P", (&p * &p - &p).norm(), 1.0)?;
        let ip = DMatrix::identity(d, d) - &p;
        check("W(I-P) - (I-P)", (&w * &ip - &ip).norm(), scale)?;
        check("W - PWP - (I-P)", (&w - &p * &w * &p - &ip).norm(), scale)?;
        Ok(PwPair { p, w })
    }

    /// Builds the pair from the projector `p` and the curvature block `m`
    /// on `rge p`: `W = P m P + (I - P)`. Inputs are symmetrized.
    pub fn from_projector_and_curvature(p: &DMatrix<f64>, m: &DMatrix<f64>) -> Self {
        let d = p.nrows();
        let p = linalg::symmetrize(p);
        let ip = DMatrix::identity(d, d) - &p;
        let w = linalg::symmetrize(&(&p * linalg::symmetrize(m) * &p + ip));
        PwPair { p, w }
    }

    pub fn dim(&self) -> usize {
        self.p.nrows()
    }

    pub fn p(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    /// `rge(P, W) = {(Pp, Wp)}`.
    pub fn to_subspace(&self) -> Subspace {
        pw_to_subspace(self)
    }

    /// The Jacobian `B` of the proximal mapping corresponding to this pair,
    /// i.e. the matrix with `rge(B, I - B) = rge(P, W)`.
    pub fn prox_jacobian(&self) -> DMatrix<f64> {
        let d = self.dim();
        let m = DMatrix::identity(d, d) + &self.p * &self.w * &self.p;
        match m.clone().try_inverse() {
            Some(inv) => &self.p * inv,
            None => &self.p * linalg::pinv(&m, 1e-12),
        }
    }

    /// Orthonormal basis of `rge P`.
    pub fn range_basis(&self) -> DMatrix<f64> {
        linalg::orth_abs(&self.p, 0.5)
    }

    /// Orthonormal basis of `(rge P)^perp = rge(I - P)`.
    pub fn range_complement_basis(&self) -> DMatrix<f64> {
        let d = self.dim();
        linalg::orth_abs(&(DMatrix::identity(d, d) - &self.p), 0.5)
    }
}

pub fn pw_to_subspace(pair: &PwPair) -> Subspace {
    let d = pair.dim();
    let m = linalg::vstack(&[&pair.p, &pair.w], d);
    Subspace::from_columns(&m)
}

/// The unique `(P, W)` basis of a `d`-dimensional subspace of `R^{2d}`, if
/// one exists.
pub fn pw_decompose(l: &Subspace) -> Option<PwPair> {
    if l.ambient % 2 != 0 {
        return None;
    }
    let d = l.ambient / 2;
    if l.dim() != d {
        return None;
    }
    let basis = l.basis();
    let x = basis.rows(0, d).into_owned();
    let y = basis.rows(d, d).into_owned();
    // the basis is orthonormal, so an absolute threshold on the first block is
    // scale-free
    let q = linalg::orth_abs(&x, RANK_TOL);
    let k = q.ncols();
    let p = linalg::projector(&q, d);
    let s = if k == 0 {
        DMatrix::zeros(0, 0)
    } else {
        // S (Q^T X) = Q^T Y with S symmetric k x k.
        let qx = q.transpose() * &x;
        let qy = q.transpose() * &y;
        let s = qy * linalg::pinv(&qx, RANK_TOL);
        let asym = (&s - s.transpose()).norm();
        if asym > PW_VERIFY_TOL * (1.0 + s.norm()) {
            return None;
        }
        linalg::symmetrize(&s)
    };
    let curvature = if k == 0 {
        DMatrix::zeros(d, d)
    } else {
        &q * &s * q.transpose()
    };
    let pair = PwPair::from_projector_and_curvature(&p, &curvature);
    match pair.to_subspace().dz(l) {
        Ok(dist) if dist <= PW_VERIFY_TOL => Some(pair),
        _ => None,
    }
}

/// Set equality of two finite collections of subspaces under `d_Z <= tol`.
pub fn subspace_sets_equal(a: &[Subspace], b: &[Subspace], tol: f64) -> bool {
    let covered = |xs: &[Subspace], ys: &[Subspace]| {
        xs.iter().all(|x| {
            ys.iter()
                .any(|y| matches!(x.dz(y), Ok(dist) if dist <= tol))
        })
    };
    covered(a, b) && covered(b, a)
}

/// Removes subspaces within `tol` of an earlier entry.
pub fn dedup_subspaces(items: Vec<Subspace>, tol: f64) -> Vec<Subspace> {
    let mut out: Vec<Subspace> = Vec::new();
    for s in items {
        if !out
            .iter()
            .any(|t| matches!(t.dz(&s), Ok(dist) if dist <= tol))
        {
            out.push(s);
        }
    }
    out
}
