//! Lipschitzian stability of KKT systems for composite problems
//! `min f(x) - ⟨a*, x⟩ + g(F(x) + b)` with convex piecewise linear-quadratic `g`.
//!
//! Bottom-up: dense linear algebra and subspace geometry ([`linalg`],
//! [`subspace`]), an expression parser with second-order forward AD ([`ad`]),
//! small LP/QP solvers ([`lp`], [`qp`]), polyhedral cones and faces
//! ([`polyhedral`]), the catalog of `g` with SC derivatives ([`catalog`]),
//! problem instances ([`problem`]), then the analytic checks ([`analyzer`]),
//! a semismooth Newton solver ([`solver`]), sampling probes ([`harness`]) and
//! the JSON report ([`report`]).

pub mod ad;
pub mod linalg;
pub mod lp;
pub mod qp;
pub mod subspace;
pub mod polyhedral;
pub mod catalog;
pub mod problem;
pub mod analyzer;
pub mod solver;
pub mod harness;
pub mod report;
