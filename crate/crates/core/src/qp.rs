//! Euclidean projection onto a polyhedron by the Goldfarb-Idnani dual
//! active-set method with identity Hessian.
//!
//! The method starts at the unconstrained minimizer (the point itself) and
//! adds violated constraints one at a time while keeping dual feasibility,
//! so the active set stays linearly independent and the iteration is finite.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

const ZERO_TOL: f64 = 1e-12;
const VIOLATION_TOL: f64 = 1e-12;
const MAX_STEPS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceEvent {
    Add(usize),
    Drop(usize),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("constraints are inconsistent (active-set trace {trace:?})")]
    Infeasible { trace: Vec<TraceEvent> },
    #[error("active-set iteration did not terminate after {steps} steps (trace {trace:?})")]
    IterationLimit { steps: usize, trace: Vec<TraceEvent> },
}

#[derive(Debug, Clone)]
pub struct Projection {
    pub x: DVector<f64>,
    /// Indices of active rows (into the stacked equality-then-inequality list).
    pub active: Vec<usize>,
    pub trace: Vec<TraceEvent>,
}

/// Projects `z` onto `{x : A_i x = c_i (i in eq), A_i x <= c_i (otherwise)}`.
///
/// Row indices in the result refer to rows of `a`.
pub fn project_polyhedron(
    a: &DMatrix<f64>,
    c: &DVector<f64>,
    eq_rows: &[usize],
    z: &DVector<f64>,
) -> Result<Projection, QpError> {
    let m = a.nrows();
    let dim = a.ncols();
    let is_eq: Vec<bool> = (0..m).map(|i| eq_rows.contains(&i)).collect();
    let mut x = z.clone();
    // Active rows with their orientation sign: the constraint is
    // s * (c_i - A_i x) >= 0, i.e. normal n = -s A_i, bound b = -s c_i.
    let mut active: Vec<(usize, f64)> = Vec::new();
    let mut mult: Vec<f64> = Vec::new();
    let mut trace = Vec::new();

    let slack = |x: &DVector<f64>, i: usize| c[i] - a.row(i).dot(&x.transpose());

    for _step in 0..MAX_STEPS {
        // Step 1: pick the most violated constraint, equalities first.
        let mut pick: Option<(usize, f64, f64)> = None;
        for pass_eq in [true, false] {
            for i in 0..m {
                if is_eq[i] != pass_eq || active.iter().any(|&(k, _)| k == i) {
                    continue;
                }
                let s = slack(&x, i);
                let viol = if is_eq[i] { s.abs() } else { (-s).max(0.0) };
                let scale = 1.0 + a.row(i).norm() * x.norm().max(1.0);
                if viol > VIOLATION_TOL * scale && pick.is_none_or(|(_, v, _)| viol > v) {
                    // orientation: inequality always s = +1; equality picks the violated side
                    let sign = if is_eq[i] && s > 0.0 { -1.0 } else { 1.0 };
                    pick = Some((i, viol, sign));
                }
            }
            if pick.is_some() {
                break;
            }
        }
        let Some((p, _, sign_p)) = pick else {
            let mut act: Vec<usize> = active.iter().map(|&(i, _)| i).collect();
            act.sort_unstable();
            return Ok(Projection {
                x,
                active: act,
                trace,
            });
        };
        let np: DVector<f64> = -a.row(p).transpose() * sign_p;
        let bp = -c[p] * sign_p;
        let mut u_new = 0.0;

        // Step 2: move until p becomes active, dropping blocking constraints.
        loop {
            let q = active.len();
            let (zdir, r) = if q == 0 {
                (np.clone(), DVector::zeros(0))
            } else {
                let mut nmat = DMatrix::zeros(dim, q);
                for (k, &(i, s)) in active.iter().enumerate() {
                    nmat.set_column(k, &(-a.row(i).transpose() * s));
                }
                let qr = nmat.qr();
                let q1 = qr.q();
                let rr = qr.r();
                let qtn = q1.transpose() * &np;
                let zdir = &np - &q1 * &qtn;
                let r = rr
                    .solve_upper_triangular(&qtn)
                    .unwrap_or_else(|| DVector::zeros(q));
                (zdir, r)
            };

            // partial step: largest step keeping inequality multipliers >= 0
            let mut t1 = f64::INFINITY;
            let mut block = None;
            for (k, &(i, _)) in active.iter().enumerate() {
                if !is_eq[i] && r[k] > ZERO_TOL {
                    let t = mult[k] / r[k];
                    if t < t1 {
                        t1 = t;
                        block = Some(k);
                    }
                }
            }
            let zn = zdir.dot(&np);
            let sp = np.dot(&x) - bp;
            let t2 = if zdir.norm() <= ZERO_TOL * (1.0 + np.norm()) || zn <= ZERO_TOL {
                f64::INFINITY
            } else {
                -sp / zn
            };

            if t1.is_infinite() && t2.is_infinite() {
                return Err(QpError::Infeasible { trace });
            }
            let t = t1.min(t2);
            if t2.is_finite() {
                x += &zdir * t;
            }
            for k in 0..active.len() {
                mult[k] -= t * r[k];
            }
            u_new += t;

            if t2 <= t1 {
                active.push((p, sign_p));
                mult.push(u_new);
                trace.push(TraceEvent::Add(p));
                break;
            }
            let k = block.expect("finite partial step has a blocking index");
            trace.push(TraceEvent::Drop(active[k].0));
            active.remove(k);
            mult.remove(k);
        }
    }
    Err(QpError::IterationLimit {
        steps: MAX_STEPS,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn proj(a: &[f64], rows: usize, c: &[f64], eq: &[usize], z: &[f64]) -> Projection {
        let cols = a.len() / rows;
        project_polyhedron(
            &DMatrix::from_row_slice(rows, cols, a),
            &DVector::from_column_slice(c),
            eq,
            &DVector::from_column_slice(z),
        )
        .unwrap()
    }

    #[test]
    fn half_line() {
        let p = proj(&[1.0], 1, &[0.0], &[], &[2.0]);
        assert!(p.x[0].abs() < 1e-14);
        assert_eq!(p.active, vec![0]);
        let p = proj(&[1.0], 1, &[0.0], &[], &[-2.0]);
        assert_eq!(p.x[0], -2.0);
        assert!(p.active.is_empty());
    }

    #[test]
    fn orthant_corner() {
        let p = proj(&[1.0, 0.0, 0.0, 1.0], 2, &[0.0, 0.0], &[], &[3.0, 1.0]);
        assert!(p.x.norm() < 1e-14);
        assert_eq!(p.active, vec![0, 1]);
    }

    #[test]
    fn requires_dropping_a_constraint() {
        // C = {x2 <= 0, x1 + x2 <= 0}; z = (-1, 3) projects to (-1, 0) with only
        // the first row active, though the second is violated at z.
        let p = proj(&[0.0, 1.0, 1.0, 1.0], 2, &[0.0, 0.0], &[], &[-1.0, 3.0]);
        assert!((p.x[0] + 1.0).abs() < 1e-12 && p.x[1].abs() < 1e-12);
    }

    #[test]
    fn equality_rows() {
        // plane x1 + x2 = 1 with x1 <= 0
        let p = proj(&[1.0, 1.0, 1.0, 0.0], 2, &[1.0, 0.0], &[0], &[2.0, 0.0]);
        assert!(p.x[0].abs() < 1e-12 && (p.x[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn inconsistent_constraints() {
        let a = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let c = DVector::from_column_slice(&[-1.0, -1.0]);
        let r = project_polyhedron(&a, &c, &[], &DVector::from_element(1, 0.0));
        assert!(matches!(r, Err(QpError::Infeasible { .. })));
    }

    #[test]
    fn redundant_rows_stay_consistent() {
        // duplicate constraint rows
        let p = proj(&[1.0, 0.0, 1.0, 0.0, 2.0, 0.0], 3, &[0.0, 0.0, 0.0], &[], &[1.0, 1.0]);
        assert!(p.x[0].abs() < 1e-12 && (p.x[1] - 1.0).abs() < 1e-12);
    }
}
