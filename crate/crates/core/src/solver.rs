//! Semismooth Newton solver for the perturbed KKT system
//!
//! ```text
//! ∇f(x) + ∇F(x)ᵀy* = a*,   u - prox g(u + y*) = 0,   u = F(x) + b.
//! ```
//!
//! The derivative of `prox g` at `z` is taken from an SC-derivative pair of
//! `∂g` at the current Minty point `(prox g(z), z - prox g(z))`: with
//! `B = P(I + PWP)^{-1}` the Newton matrix is `[[∇²L, ∇Fᵀ], [(I-B)∇F, -B]]`.
//! Where `∂g` has several pairs the one closest to a finite-difference
//! estimate of the prox Jacobian is used. When that step stalls, the affine
//! pieces of the prox meeting at the current point are tried as well, which
//! lets the iteration jump between multiplier branches.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::CatalogError;
use crate::problem::{KktPoint, ProblemError, ProblemInstance};
use crate::subspace::{PwPair, Subspace};

/// Distance under which two solutions count as the same point.
pub const DEDUP_TOL: f64 = 1e-6;
const FD_STEP: f64 = 1e-7;
const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 30;
const SHIFT: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub max_iter: usize,
    pub tol: f64,
    pub damping: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            max_iter: 50,
            tol: 1e-10,
            damping: true,
        }
    }
}

#[derive(Debug, Error)]
pub enum SolverError {
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error("g: {0}")]
    Catalog(#[from] CatalogError),
    #[error("dimension mismatch: {0}")]
    Shape(String),
    #[error("non-finite input or iterate")]
    NonFinite,
    #[error("no convergence in {iterations} iterations, residual {residual:.3e}")]
    MaxIter { iterations: usize, residual: f64 },
    #[error("singular Newton matrix at iteration {0}")]
    Singular(usize),
    #[error("line search failed at iteration {iteration}, residual {residual:.3e}")]
    LineSearch { iteration: usize, residual: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub point: KktPoint,
    pub iterations: usize,
    /// Residual norm before each iteration and at the end.
    pub history: Vec<f64>,
}

impl Solution {
    pub fn x(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.point.x)
    }

    pub fn ystar(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.point.ystar)
    }

    /// `(x, y*)` stacked.
    pub fn stacked(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.point.x.len() + self.point.ystar.len(),
            self.point.x.iter().chain(self.point.ystar.iter()).copied(),
        )
    }
}

/// Finite-difference estimate of `∇ prox g(z)`; exact away from kinks
/// because every catalog prox is piecewise affine or affine.
fn prox_jacobian_fd(inst: &ProblemInstance, z: &DVector<f64>) -> Result<DMatrix<f64>, CatalogError> {
    let m = z.len();
    let mut jac = DMatrix::zeros(m, m);
    for j in 0..m {
        let mut zp = z.clone();
        let mut zm = z.clone();
        zp[j] += FD_STEP;
        zm[j] -= FD_STEP;
        let d = (inst.g().prox(&zp)? - inst.g().prox(&zm)?) / (2.0 * FD_STEP);
        jac.set_column(j, &d);
    }
    Ok(jac)
}

/// `gph` of the prox derivative seen from `∂g`: `{(Bd, (I-B)d)}`.
fn prox_tangent(b: &DMatrix<f64>) -> Subspace {
    let m = b.nrows();
    let ib = DMatrix::identity(m, m) - b;
    Subspace::from_columns(&crate::linalg::vstack(&[b, &ib], m))
}

/// Prox derivative used for the Newton step at `z`.
fn newton_prox_derivative(inst: &ProblemInstance, z: &DVector<f64>) -> Result<DMatrix<f64>, CatalogError> {
    let y = inst.g().prox(z)?;
    let ystar = z - &y;
    let pairs = match inst.g().sc_derivative(&y, &ystar) {
        Ok(p) if !p.is_empty() => p,
        _ => return prox_jacobian_fd(inst, z),
    };
    if pairs.len() == 1 {
        return Ok(pairs[0].prox_jacobian());
    }
    let fd = prox_tangent(&prox_jacobian_fd(inst, z)?);
    let best = pairs
        .iter()
        .map(|p: &PwPair| {
            let d = p.to_subspace().dz(&fd).unwrap_or(f64::INFINITY);
            (d, p)
        })
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, p)| p)
        .unwrap_or(&pairs[0]);
    Ok(best.prox_jacobian())
}

fn residual(
    inst: &ProblemInstance,
    x: &DVector<f64>,
    ystar: &DVector<f64>,
    astar: &DVector<f64>,
    b: &DVector<f64>,
) -> Option<DVector<f64>> {
    let r = inst.kkt_residual(x, ystar, astar, b).ok()?;
    r.iter().all(|v| v.is_finite()).then_some(r)
}

/// Newton step for the linearization with prox derivative `bj`.
fn newton_step(
    hl: &DMatrix<f64>,
    jac: &DMatrix<f64>,
    bj: &DMatrix<f64>,
    r: &DVector<f64>,
) -> Option<DVector<f64>> {
    let n = hl.nrows();
    let m = bj.nrows();
    let mut k = DMatrix::zeros(n + m, n + m);
    k.view_mut((0, 0), (n, n)).copy_from(hl);
    k.view_mut((0, n), (n, m)).copy_from(&jac.transpose());
    let ib = DMatrix::identity(m, m) - bj;
    k.view_mut((n, 0), (m, n)).copy_from(&(ib * jac));
    k.view_mut((n, n), (m, m)).copy_from(&(-bj));
    let finite = |v: &DVector<f64>| v.iter().all(|t| t.is_finite());
    match k.clone().lu().solve(&(-r)) {
        Some(s) if finite(&s) => Some(s),
        _ => {
            // shifted normal equations: a least-squares step that stays
            // bounded when the linearization is singular
            let kt = k.transpose();
            let normal = &kt * &k + DMatrix::identity(n + m, n + m) * SHIFT;
            normal
                .cholesky()
                .map(|c| c.solve(&(-(&kt * r))))
                .filter(|s| finite(s))
        }
    }
}

/// Backtracking on the residual norm; returns the accepted point and its
/// residual norm.
fn line_search(
    inst: &ProblemInstance,
    (x, y): (&DVector<f64>, &DVector<f64>),
    step: &DVector<f64>,
    rn: f64,
    astar: &DVector<f64>,
    b: &DVector<f64>,
    opts: &SolveOptions,
) -> Option<(DVector<f64>, DVector<f64>, f64)> {
    let n = x.len();
    let dx = step.rows(0, n);
    let dy = step.rows(n, y.len());
    let mut t = 1.0;
    for _ in 0..=MAX_HALVINGS {
        let xn = x + dx * t;
        let yn = y + dy * t;
        if let Some(rn_new) = residual(inst, &xn, &yn, astar, b).map(|v| v.norm()) {
            if !opts.damping || rn_new <= (1.0 - ARMIJO * t) * rn {
                return Some((xn, yn, rn_new));
            }
        }
        t *= 0.5;
    }
    None
}

/// Solves the KKT system for `(a*, b)` from `(x0, y0*)`.
pub fn solve_perturbed(
    inst: &ProblemInstance,
    astar: &DVector<f64>,
    b: &DVector<f64>,
    start: (&DVector<f64>, &DVector<f64>),
    opts: &SolveOptions,
) -> Result<Solution, SolverError> {
    let n = inst.n();
    let m = inst.m();
    let (x0, y0) = start;
    if astar.len() != n || b.len() != m || x0.len() != n || y0.len() != m {
        return Err(SolverError::Shape(format!(
            "expected a* and x0 of length {n}, b and y0* of length {m}"
        )));
    }
    let finite = |v: &DVector<f64>| v.iter().all(|t| t.is_finite());
    if !(finite(astar) && finite(b) && finite(x0) && finite(y0)) {
        return Err(SolverError::NonFinite);
    }
    let mut x = x0.clone();
    let mut y = y0.clone();
    let mut history = Vec::new();
    let mut iterations = 0;
    loop {
        let d = inst.derivatives(&x)?;
        let r = inst.kkt_residual_with(&d, &y, astar, b)?;
        let rn = r.norm();
        if !rn.is_finite() {
            return Err(SolverError::NonFinite);
        }
        history.push(rn);
        if rn <= opts.tol {
            break;
        }
        if iterations >= opts.max_iter {
            return Err(SolverError::MaxIter {
                iterations,
                residual: rn,
            });
        }
        let z = &d.fx + b + &y;
        let hl = d.lagrangian_hessian(&y);
        let bj = newton_prox_derivative(inst, &z)?;
        let step = newton_step(&hl, &d.jac, &bj, &r).ok_or(SolverError::Singular(iterations))?;
        let mut best = line_search(inst, (&x, &y), &step, rn, astar, b, opts);
        // A slow or failed step means the iterate sits on a prox piece that
        // holds no solution; retry with each affine piece meeting at the
        // current prox point, using that piece's own residual model.
        if best.as_ref().is_none_or(|t| t.2 > 0.5 * rn) {
            let u = &d.fx + b;
            let pieces = inst.g().prox_pieces(&inst.g().prox(&z)?).unwrap_or_default();
            for piece in pieces {
                if (&piece.b - &bj).amax() < 1e-12 {
                    continue;
                }
                let mut rp = r.clone();
                let model = &u - (&piece.c + &piece.b * &z);
                rp.rows_mut(n, m).copy_from(&model);
                let Some(step) = newton_step(&hl, &d.jac, &piece.b, &rp) else {
                    continue;
                };
                if let Some(trial) = line_search(inst, (&x, &y), &step, rn, astar, b, opts) {
                    if best.as_ref().is_none_or(|t| trial.2 < t.2) {
                        best = Some(trial);
                    }
                }
            }
        }
        match best {
            Some((xn, yn, _)) => {
                x = xn;
                y = yn;
            }
            None => {
                return Err(SolverError::LineSearch {
                    iteration: iterations,
                    residual: rn,
                })
            }
        }
        iterations += 1;
    }
    // independent re-check of the returned point
    let residual = inst.kkt_residual(&x, &y, astar, b)?.norm();
    if residual > opts.tol {
        return Err(SolverError::MaxIter { iterations, residual });
    }
    Ok(Solution {
        point: KktPoint {
            x: x.iter().copied().collect(),
            ystar: y.iter().copied().collect(),
            residual,
        },
        iterations,
        history,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MultiStart {
    /// Distinct solutions sorted by distance to `(x̄, ȳ*)`.
    pub solutions: Vec<Solution>,
    /// `(start index, message)` for every failed start.
    pub failures: Vec<(usize, String)>,
}

/// Runs the solver from every start and merges distinct solutions.
pub fn find_all_local(
    inst: &ProblemInstance,
    astar: &DVector<f64>,
    b: &DVector<f64>,
    starts: &[(DVector<f64>, DVector<f64>)],
    opts: &SolveOptions,
) -> MultiStart {
    let results: Vec<Result<Solution, SolverError>> = starts
        .par_iter()
        .map(|(x0, y0)| solve_perturbed(inst, astar, b, (x0, y0), opts))
        .collect();
    let mut solutions: Vec<Solution> = Vec::new();
    let mut failures = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(s) => {
                let v = s.stacked();
                if solutions.iter().all(|t| (t.stacked() - &v).norm() > DEDUP_TOL) {
                    solutions.push(s);
                }
            }
            Err(e) => failures.push((i, e.to_string())),
        }
    }
    let mut reference = DVector::zeros(inst.n() + inst.m());
    reference.rows_mut(0, inst.n()).copy_from(inst.xbar());
    reference.rows_mut(inst.n(), inst.m()).copy_from(inst.ybar_star());
    solutions.sort_by(|a, b| {
        let da = (a.stacked() - &reference).norm();
        let db = (b.stacked() - &reference).norm();
        da.total_cmp(&db)
    });
    MultiStart { solutions, failures }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::GSpec;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn halfline(f: &str, x: f64, y: f64) -> ProblemInstance {
        let g = GSpec::polyhedral(DMatrix::from_element(1, 1, 1.0), v(&[0.0]), vec![]).unwrap();
        ProblemInstance::new(f, &["x1"], g, v(&[x]), v(&[y])).unwrap()
    }

    #[test]
    fn strict_complementarity_closed_form() {
        let inst = halfline("0.5*(x1-1)^2", 0.0, 1.0);
        let (a, b) = (0.01, 0.02);
        let s = solve_perturbed(&inst, &v(&[a]), &v(&[b]), (&v(&[0.0]), &v(&[1.0])), &SolveOptions::default()).unwrap();
        // x = min(1 + a*, -b), y* = 1 + a* - x
        let x = (1.0f64 + a).min(-b);
        assert!((s.point.x[0] - x).abs() < 1e-10);
        assert!((s.point.ystar[0] - (1.0 + a - x)).abs() < 1e-10);
        assert!(s.point.residual <= 1e-10);
    }

    #[test]
    fn reference_point_is_fixed() {
        let inst = halfline("0.5*(x1-1)^2", 0.0, 1.0);
        let s = solve_perturbed(&inst, &v(&[0.0]), &v(&[0.0]), (&v(&[0.0]), &v(&[1.0])), &SolveOptions::default()).unwrap();
        assert!(s.iterations <= 1);
        assert!(s.point.x[0].abs() < 1e-12 && (s.point.ystar[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn negative_curvature_has_two_branches() {
        // -x - a* + y* = 0, y* ∈ N_{R_-}(x + b): for a* > b the points
        // (-a*, 0) and (-b, a* - b)
        let inst = halfline("-0.5*x1^2", 0.0, 0.0);
        let (a, b) = (0.005, -0.003);
        let starts = vec![(v(&[0.0]), v(&[0.0])), (v(&[-0.01]), v(&[0.0])), (v(&[0.01]), v(&[0.02])), (v(&[0.0]), v(&[0.01]))];
        let ms = find_all_local(&inst, &v(&[a]), &v(&[b]), &starts, &SolveOptions::default());
        assert_eq!(ms.solutions.len(), 2, "{:?}", ms);
        let mut got: Vec<(f64, f64)> = ms.solutions.iter().map(|s| (s.point.x[0], s.point.ystar[0])).collect();
        got.sort_by(|p, q| p.0.total_cmp(&q.0));
        assert!((got[0].0 + a).abs() < 1e-10 && got[0].1.abs() < 1e-10);
        assert!((got[1].0 + b).abs() < 1e-10 && (got[1].1 - (a - b)).abs() < 1e-10);
    }

    #[test]
    fn convex_instance_has_one_solution() {
        let g = GSpec::l1(v(&[1.0, 0.5])).unwrap();
        let inst = ProblemInstance::new("0.5*(x1^2 + 2*x2^2) + x1*x2", &["x1", "x2"], g, v(&[0.0, 0.0]), v(&[0.0, 0.0])).unwrap();
        let starts: Vec<_> = [(-1.0, 1.0), (0.5, 0.2), (2.0, -3.0), (0.0, 0.0)]
            .iter()
            .map(|&(p, q)| (v(&[p, q]), v(&[0.3, -0.2])))
            .collect();
        let astar = v(&[1.3, -0.4]);
        let b = v(&[0.1, 0.0]);
        let ms = find_all_local(&inst, &astar, &b, &starts, &SolveOptions::default());
        assert_eq!(ms.solutions.len(), 1);
        // strong convexity: the unique minimizer satisfies the residual
        let s = &ms.solutions[0];
        let r = inst.kkt_residual(&s.x(), &s.ystar(), &astar, &b).unwrap();
        assert!(r.norm() <= 1e-10);
    }

    #[test]
    fn empty_solution_set() {
        // a* < b: the negative-curvature instance has no KKT point
        let inst = halfline("-0.5*x1^2", 0.0, 0.0);
        let starts = vec![(v(&[0.0]), v(&[0.0])), (v(&[0.1]), v(&[0.1]))];
        let ms = find_all_local(&inst, &v(&[-0.01]), &v(&[0.01]), &starts, &SolveOptions::default());
        assert!(ms.solutions.is_empty());
        assert_eq!(ms.failures.len(), 2);
    }

    #[test]
    fn singular_linearization_uses_least_squares_step() {
        // F = (x, x) into R_-^2: the Newton matrix at the reference is singular
        let g = GSpec::polyhedral(DMatrix::identity(2, 2), v(&[0.0, 0.0]), vec![]).unwrap();
        let inst = ProblemInstance::new("0.5*(x1-1)^2", &["x1", "x1"], g, v(&[0.0]), v(&[0.5, 0.5])).unwrap();
        let (a, b) = (0.004, v(&[0.003, -0.002]));
        let s = solve_perturbed(&inst, &v(&[a]), &b, (&v(&[0.0]), &v(&[0.5, 0.5])), &SolveOptions::default()).unwrap();
        // x = -max(b), all multiplier mass on the active row
        assert!((s.point.x[0] + 0.003).abs() < 1e-10);
        assert!((s.point.ystar[0] - (1.0 + a + 0.003)).abs() < 1e-10 && s.point.ystar[1].abs() < 1e-10);
    }

    #[test]
    fn shape_errors() {
        let inst = halfline("0.5*(x1-1)^2", 0.0, 1.0);
        let r = solve_perturbed(&inst, &v(&[0.0, 1.0]), &v(&[0.0]), (&v(&[0.0]), &v(&[1.0])), &SolveOptions::default());
        assert!(matches!(r, Err(SolverError::Shape(_))));
        let r = solve_perturbed(&inst, &v(&[f64::NAN]), &v(&[0.0]), (&v(&[0.0]), &v(&[1.0])), &SolveOptions::default());
        assert!(matches!(r, Err(SolverError::NonFinite)));
    }
}
