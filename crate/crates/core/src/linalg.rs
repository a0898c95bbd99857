//! Small dense linear-algebra helpers shared by the subspace, catalog and
//! analyzer modules. Everything here works on `nalgebra` dynamic matrices and
//! targets desk-scale problems (dimensions up to a few dozen).
//!
//! Singular value decompositions go through [`svd`], a one-sided Jacobi
//! routine: nalgebra 0.35's bidiagonal SVD returns inaccurate factors for a
//! few percent of small random inputs (its 2x2 subproblem step).

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Relative singular-value threshold used for numerical rank decisions.
pub const RANK_TOL: f64 = 1e-9;

/// Singular values of `a` (empty for matrices with a zero dimension).
pub fn singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Vec::new();
    }
    svd(a).s
}

/// Thin SVD `a = U diag(s) V^T` with `s` sorted descending.
///
/// `U` is `nrows x k` and `V` is `ncols x k` with `k = min(nrows, ncols)`,
/// both with orthonormal columns.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: DMatrix<f64>,
    pub s: Vec<f64>,
    pub v: DMatrix<f64>,
}

const JACOBI_SWEEPS: usize = 80;

/// One-sided (Hestenes) Jacobi SVD.
pub fn svd(a: &DMatrix<f64>) -> Svd {
    let (rows, cols) = a.shape();
    if rows < cols {
        let t = svd(&a.transpose());
        return Svd { u: t.v, s: t.s, v: t.u };
    }
    let mut g = a.clone();
    let mut v = DMatrix::<f64>::identity(cols, cols);
    for _ in 0..JACOBI_SWEEPS {
        let mut rotated = false;
        for p in 0..cols {
            for q in p + 1..cols {
                let alpha = g.column(p).norm_squared();
                let beta = g.column(q).norm_squared();
                let gamma = g.column(p).dot(&g.column(q));
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for m in [&mut g, &mut v] {
                    for i in 0..m.nrows() {
                        let (xp, xq) = (m[(i, p)], m[(i, q)]);
                        m[(i, p)] = c * xp - s * xq;
                        m[(i, q)] = s * xp + c * xq;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let norms: Vec<f64> = (0..cols).map(|j| g.column(j).norm()).collect();
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));
    let mut u = DMatrix::zeros(rows, cols);
    let mut vs = DMatrix::zeros(cols, cols);
    let mut s = Vec::with_capacity(cols);
    for (k, &j) in order.iter().enumerate() {
        s.push(norms[j]);
        if norms[j] > 0.0 {
            u.set_column(k, &(g.column(j) / norms[j]));
        }
        vs.set_column(k, &v.column(j));
    }
    // exact zero singular values leave zero columns; complete them
    let filled = s.iter().take_while(|&&x| x > 0.0).count();
    for k in filled..cols {
        // the coordinate vector with the largest residual is well conditioned
        let residual = |e: usize| {
            let mut x = DVector::zeros(rows);
            x[e] = 1.0;
            for _ in 0..2 {
                for j in 0..k {
                    let c = u.column(j).dot(&x);
                    x -= u.column(j) * c;
                }
            }
            x
        };
        let x = (0..rows)
            .map(residual)
            .max_by(|a, b| a.norm().total_cmp(&b.norm()))
            .expect("rows >= cols > k");
        let nx = x.norm();
        u.set_column(k, &(x / nx));
    }
    Svd { u, s, v: vs }
}

/// Numerical rank with singular values above `tol * max(sigma_max, 1)`.
///
/// The floor at 1 keeps matrices made only of round-off from counting as
/// full rank.
pub fn rank(a: &DMatrix<f64>, tol: f64) -> usize {
    let sv = singular_values(a);
    let smax = sv.iter().copied().fold(0.0, f64::max);
    sv.iter().filter(|&&s| s > tol * smax.max(1.0)).count()
}

/// Orthonormal basis of the column range of `a`.
///
/// Returns a `nrows x r` matrix, `r` being the numerical rank under `tol`
/// (same convention as [`rank`]).
pub fn orth(a: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let smax = singular_values(a).into_iter().fold(0.0, f64::max);
    orth_abs(a, tol * smax.max(1.0))
}

/// Orthonormal basis of the column range of `a`, keeping singular values
/// above the absolute threshold `tol`.
pub fn orth_abs(a: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let rows = a.nrows();
    if rows == 0 || a.ncols() == 0 {
        return DMatrix::zeros(rows, 0);
    }
    let d = svd(a);
    let r = d.s.iter().take_while(|&&s| s > tol).count();
    d.u.columns(0, r).into_owned()
}

/// Orthonormal basis of the orthogonal complement of `rge q`, where `q` has
/// orthonormal columns spanning a subspace of `R^dim`.
pub fn complement(q: &DMatrix<f64>, dim: usize) -> DMatrix<f64> {
    let mut p = DMatrix::<f64>::identity(dim, dim);
    if q.ncols() > 0 {
        p -= q * q.transpose();
    }
    // eigenvalues of a projector are 0 or 1
    orth_abs(&p, 0.5)
}

/// Orthonormal basis of `ker a` for an `r x c` matrix (returns `c x k`).
pub fn null_space(a: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let c = a.ncols();
    if a.nrows() == 0 {
        return DMatrix::identity(c, c);
    }
    let row_space = orth(&a.transpose(), tol);
    complement(&row_space, c)
}

/// Orthogonal projector onto `rge q` for orthonormal `q`.
pub fn projector(q: &DMatrix<f64>, dim: usize) -> DMatrix<f64> {
    if q.ncols() == 0 {
        DMatrix::zeros(dim, dim)
    } else {
        q * q.transpose()
    }
}

/// Spectral norm of a symmetric matrix (largest absolute eigenvalue).
pub fn sym_norm(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    let sym = symmetrize(a);
    SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .fold(0.0, |acc: f64, &l| acc.max(l.abs()))
}

/// Operator 2-norm of a general matrix.
pub fn op_norm(a: &DMatrix<f64>) -> f64 {
    singular_values(a).into_iter().fold(0.0, f64::max)
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Smallest eigenvalue of a symmetric matrix together with a unit eigenvector.
pub fn min_eigen(a: &DMatrix<f64>) -> Option<(f64, DVector<f64>)> {
    if a.nrows() == 0 {
        return None;
    }
    let eig = SymmetricEigen::new(symmetrize(a));
    let (i, &l) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(y.1))?;
    Some((l, eig.eigenvectors.column(i).into_owned()))
}

/// Stack matrices with equal column counts vertically.
pub fn vstack(blocks: &[&DMatrix<f64>], cols: usize) -> DMatrix<f64> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        debug_assert_eq!(b.ncols(), cols);
        out.view_mut((r, 0), (b.nrows(), cols)).copy_from(*b);
        r += b.nrows();
    }
    out
}

/// Stack matrices with equal row counts horizontally.
pub fn hstack(blocks: &[&DMatrix<f64>], rows: usize) -> DMatrix<f64> {
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut c = 0;
    for b in blocks {
        debug_assert_eq!(b.nrows(), rows);
        out.view_mut((0, c), (rows, b.ncols())).copy_from(*b);
        c += b.ncols();
    }
    out
}

/// Rows of `a` selected by `idx`, in order.
pub fn select_rows(a: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(idx.len(), a.ncols());
    for (k, &i) in idx.iter().enumerate() {
        out.set_row(k, &a.row(i));
    }
    out
}

/// Minimum-norm least-squares solution via a truncated SVD.
pub fn pinv_solve(a: &DMatrix<f64>, b: &DVector<f64>, tol: f64) -> DVector<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return DVector::zeros(a.ncols());
    }
    pinv(a, tol) * b
}

/// Moore-Penrose pseudo-inverse.
pub fn pinv(a: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return DMatrix::zeros(a.ncols(), a.nrows());
    }
    let d = svd(a);
    let eps = (tol * d.s.first().copied().unwrap_or(0.0)).max(f64::MIN_POSITIVE);
    let mut out = DMatrix::zeros(a.ncols(), a.nrows());
    for (k, &s) in d.s.iter().enumerate() {
        if s > eps {
            out += d.v.column(k) * d.u.column(k).transpose() / s;
        }
    }
    out
}

pub fn is_finite_vec(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn assert_svd(a: &DMatrix<f64>) {
        let d = svd(a);
        let k = d.s.len();
        let sigma = DMatrix::from_diagonal(&DVector::from_vec(d.s.clone()));
        assert!((&d.u * sigma * d.v.transpose() - a).norm() <= 1e-12 * a.norm().max(1.0));
        assert!((d.v.transpose() * &d.v - DMatrix::identity(k, k)).norm() < 1e-12);
        assert!((d.u.transpose() * &d.u - DMatrix::identity(k, k)).norm() < 1e-12);
        assert!(d.s.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn jacobi_svd_reconstructs() {
        // nalgebra 0.35 reconstructs this projector with error 5e-2
        let p = DMatrix::from_row_slice(
            2,
            2,
            &[0.0404680981845748, 0.19705438643658463, 0.19705438643658463, 0.9595319018154252],
        );
        assert_svd(&p);
        let s = singular_values(&p);
        assert!((s[0] - 1.0).abs() < 1e-12 && s[1].abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for r in 1..7 {
            for c in 1..7 {
                let a = DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0));
                assert_svd(&a);
                // rank-one
                let b = &a.column(0) * a.row(0);
                assert_svd(&b);
                assert_eq!(rank(&b, RANK_TOL), 1);
            }
        }
    }

    #[test]
    fn rank_and_null_space() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0]);
        assert_eq!(rank(&a, RANK_TOL), 1);
        let n = null_space(&a, RANK_TOL);
        assert_eq!(n.ncols(), 2);
        assert!((&a * &n).norm() < 1e-12);
    }

    #[test]
    fn orth_of_zero_matrix_is_empty() {
        let z = DMatrix::<f64>::zeros(3, 2);
        assert_eq!(orth(&z, RANK_TOL).ncols(), 0);
        assert_eq!(rank(&z, RANK_TOL), 0);
    }

    #[test]
    fn min_eigen_picks_smallest() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, -1.0]);
        let (l, v) = min_eigen(&a).unwrap();
        assert!((l + 1.0).abs() < 1e-14);
        assert!((v[1].abs() - 1.0).abs() < 1e-14);
    }
}
