//! Analytic stability criteria at the reference KKT pair `(x̄, ȳ*)`.
//!
//! Every check works on the finite list of `(P, W)` pairs describing the SC
//! derivative of `∂g` at `(ȳ, ȳ*)`, `ȳ = F(x̄)`. Polyhedral indicators get an
//! independent second route through the critical cone (nondegeneracy, the
//! strong second-order condition and the coderivative criterion), and
//! [`analyze`] cross-checks the routes before combining the verdicts.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::CatalogError;
use crate::linalg::{self, RANK_TOL};
use crate::lp::{nonzero_in_cone, Cmp, Lp};
use crate::polyhedral::{self, PolyError, Polyhedron, FACE_CAP};
use crate::problem::{ProblemError, ProblemInstance};
use crate::subspace::{pw_decompose, PwPair, Subspace};

/// Relative margin for strict positivity of eigenvalues.
pub const PSD_TOL: f64 = 1e-9;
/// Threshold on the normalized LP objective for a nonzero cone element.
const CONE_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Yes,
    No,
    NotComputed,
}

impl Verdict {
    pub fn from_bool(b: bool) -> Self {
        if b {
            Verdict::Yes
        } else {
            Verdict::No
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Yes => "yes",
            Verdict::No => "no",
            Verdict::NotComputed => "not-computed",
        }
    }
}

/// Witness for a failed (or, for conflicts, a decided) condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub detail: String,
    /// Index into the SC-derivative pair list or the face-pair list.
    pub pair: Option<usize>,
    pub vector: Vec<f64>,
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub holds: bool,
    pub certificate: Option<Certificate>,
}

impl Check {
    fn pass() -> Self {
        Check {
            holds: true,
            certificate: None,
        }
    }

    fn fail(c: Certificate) -> Self {
        Check {
            holds: false,
            certificate: Some(c),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriCheck {
    pub verdict: Verdict,
    pub certificate: Option<Certificate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingletonRegularity {
    pub applicable: bool,
    pub regular: bool,
    pub certificate: Option<Certificate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub soqc: Check,
    /// Nondegeneracy verdict for polyhedral indicators.
    pub soqc_nondegeneracy: Option<bool>,
    pub bcq: Check,
    pub sc_pairs: usize,
    pub sc_singleton: bool,
    pub singleton: SingletonRegularity,
    pub necessary_vs: Check,
    pub strong_vs: Check,
    /// Strong second-order condition on the critical cone, polyhedral case.
    pub strong_vs_ssosc: Option<bool>,
    pub mordukhovich_aubin: TriCheck,
    pub chain_rule: bool,
    pub aubin: Verdict,
    pub sll: Verdict,
    pub tilt_stable: Verdict,
    pub full_stability: Verdict,
    /// Row-major `(n+m) x (n+m)` derivative of the localization, if any.
    pub localization_jacobian: Option<Vec<Vec<f64>>>,
    pub notes: Vec<String>,
}

impl StabilityReport {
    pub fn jacobian_matrix(&self) -> Option<DMatrix<f64>> {
        self.localization_jacobian.as_ref().map(|rows| {
            let r = rows.len();
            let c = rows.first().map(Vec::len).unwrap_or(0);
            DMatrix::from_fn(r, c, |i, j| rows[i][j])
        })
    }
}

#[derive(Debug, Error)]
pub enum AnalyzerError {
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Polyhedral(#[from] PolyError),
    #[error("g is not a polyhedral indicator")]
    NotPolyhedral,
    #[error("chain rule not certified: {0}")]
    ChainRuleNotCertified(String),
    #[error("not applicable: {0}")]
    NotApplicable(String),
    #[error("composite subspace for pair {pair} has dimension {dim}, expected {expected}")]
    ChainRuleDimension { pair: usize, dim: usize, expected: usize },
    #[error("routes disagree on {property}: {message}")]
    Inconsistent {
        property: String,
        message: String,
        certificates: Vec<Certificate>,
    },
}

/// Derivative data at the reference point shared by all checks.
#[derive(Debug, Clone)]
pub struct Reference<'a> {
    pub inst: &'a ProblemInstance,
    pub jac: DMatrix<f64>,
    /// `∇²_{xx} L(x̄, ȳ*)`.
    pub hess_l: DMatrix<f64>,
    /// `∇²f(x̄)`.
    pub hess_f: DMatrix<f64>,
    /// `Σ ȳ*_i ∇²F_i(x̄)`.
    pub hess_fw: DMatrix<f64>,
    pub ybar: DVector<f64>,
    pub pairs: Vec<PwPair>,
}

fn vec_of(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

fn cert(detail: impl Into<String>, pair: Option<usize>, vector: &DVector<f64>, value: Option<f64>) -> Certificate {
    Certificate {
        detail: detail.into(),
        pair,
        vector: vec_of(vector),
        value,
    }
}

/// Smallest eigenvalue of `zᵀ a z` with its vector mapped back through `z`,
/// and the scale used for tolerance decisions.
fn restricted_min_eigen(a: &DMatrix<f64>, z: &DMatrix<f64>) -> Option<(f64, DVector<f64>, f64)> {
    if z.ncols() == 0 {
        return None;
    }
    let m = linalg::symmetrize(&(z.transpose() * a * z));
    let scale = linalg::sym_norm(&m).max(1.0);
    let (l, v) = linalg::min_eigen(&m)?;
    Some((l, z * v, scale))
}

impl<'a> Reference<'a> {
    pub fn new(inst: &'a ProblemInstance) -> Result<Self, AnalyzerError> {
        let d = inst.derivatives(inst.xbar())?;
        let ystar = inst.ybar_star();
        let hess_fw = d.weighted_constraint_hessian(ystar);
        let hess_l = &d.hess_f + &hess_fw;
        let pairs = inst.g().sc_derivative(&d.fx, ystar)?;
        Ok(Reference {
            inst,
            jac: d.jac,
            hess_l,
            hess_f: d.hess_f,
            hess_fw,
            ybar: d.fx,
            pairs,
        })
    }

    fn n(&self) -> usize {
        self.inst.n()
    }

    fn m(&self) -> usize {
        self.inst.m()
    }

    fn polyhedron(&self) -> Result<Polyhedron, AnalyzerError> {
        self.inst.g().as_polyhedron().ok_or(AnalyzerError::NotPolyhedral)
    }

    /// `ker ∇F(x̄)ᵀ ∩ (rge P)^⊥ = {0}` for every pair.
    pub fn soqc(&self) -> Check {
        for (k, pair) in self.pairs.iter().enumerate() {
            let q = pair.range_complement_basis();
            if q.ncols() == 0 {
                continue;
            }
            let jtq = self.jac.transpose() * &q;
            let ker = linalg::null_space(&jtq, RANK_TOL);
            if ker.ncols() > 0 {
                let v = (&q * ker.column(0)).normalize();
                return Check::fail(cert(
                    "nonzero v* with ∇F(x̄)ᵀv* = 0 orthogonal to rge P",
                    Some(k),
                    &v,
                    None,
                ));
            }
        }
        Check::pass()
    }

    pub fn soqc_nondegeneracy(&self) -> Result<(bool, Option<DVector<f64>>), AnalyzerError> {
        let poly = self.polyhedron()?;
        Ok(polyhedral::nondegeneracy(&self.jac, &poly, &self.ybar)?)
    }

    /// No nonzero `v* ∈ N_{dom g}(ȳ)` with `∇F(x̄)ᵀv* = 0`.
    pub fn bcq(&self) -> Result<Check, AnalyzerError> {
        let nc = self.inst.g().normal_cone_dom(&self.ybar)?;
        if nc.is_trivial() {
            return Ok(Check::pass());
        }
        let m = self.m();
        let nr = nc.rays.len();
        let nl = nc.lines.len();
        // variables: v* (m), λ (nr, >= 0), μ (nl)
        let nv = m + nr + nl;
        let mut lp = Lp::new(nv);
        for k in 0..nr {
            lp.set_nonneg(m + k);
        }
        for i in 0..m {
            let mut row = vec![0.0; nv];
            row[i] = 1.0;
            for (k, r) in nc.rays.iter().enumerate() {
                row[m + k] = -r[i];
            }
            for (k, l) in nc.lines.iter().enumerate() {
                row[m + nr + k] = -l[i];
            }
            lp.add_row(&row, Cmp::Eq, 0.0);
        }
        for j in 0..self.n() {
            let mut row = vec![0.0; nv];
            for i in 0..m {
                row[i] = self.jac[(i, j)];
            }
            lp.add_row(&row, Cmp::Eq, 0.0);
        }
        let visible: Vec<usize> = (0..m).collect();
        Ok(match nonzero_in_cone(&lp, &visible, CONE_TOL) {
            None => Check::pass(),
            Some(z) => {
                let v = DVector::from_column_slice(&z[..m]).normalize();
                Check::fail(cert(
                    "nonzero v* in the normal cone to dom g with ∇F(x̄)ᵀv* = 0",
                    None,
                    &v,
                    None,
                ))
            }
        })
    }

    /// Per-pair curvature test on `{u : ∇F(x̄)u ∈ rge P}`; `strict` selects
    /// positive definiteness, otherwise semidefiniteness.
    fn curvature(&self, strict: bool) -> Check {
        let n = self.n();
        let m = self.m();
        for (k, pair) in self.pairs.iter().enumerate() {
            let ip = DMatrix::identity(m, m) - pair.p();
            let z = linalg::null_space(&(&ip * &self.jac), RANK_TOL);
            let a = &self.hess_l + self.jac.transpose() * pair.w() * &self.jac;
            let Some((l, u, scale)) = restricted_min_eigen(&a, &z) else {
                continue;
            };
            let ok = if strict { l > PSD_TOL * scale } else { l >= -PSD_TOL * scale };
            if !ok {
                let u = if u.norm() > 0.0 { u.normalize() } else { DVector::zeros(n) };
                let value = u.dot(&(&a * &u));
                let what = if strict {
                    "curvature not positive on {u : ∇F(x̄)u ∈ rge P}"
                } else {
                    "negative curvature on {u : ∇F(x̄)u ∈ rge P}"
                };
                return Check::fail(cert(what, Some(k), &u, Some(value)));
            }
        }
        Check::pass()
    }

    /// `⟨u, ∇²L u⟩ + d²_q g(ȳ, ȳ*)(∇F(x̄)u) >= 0` for all `u`.
    ///
    /// The q-subderivative is a pointwise minimum over pairs feasible for
    /// `∇F(x̄)u`, so the minimum is nonnegative everywhere exactly when every
    /// pair's form is positive semidefinite on its own feasible subspace.
    pub fn necessary_vs(&self) -> Check {
        self.curvature(false)
    }

    /// `⟨u, (∇²L + ∇FᵀW∇F)u⟩ > 0` for `u ≠ 0` with `∇F(x̄)u ∈ rge P`, all pairs.
    pub fn strong_vs(&self) -> Check {
        self.curvature(true)
    }

    /// `∇²L` positive definite on `{u : ∇F(x̄)u ∈ span K}`, `K` the critical cone.
    pub fn strong_vs_ssosc(&self) -> Result<bool, AnalyzerError> {
        let poly = self.polyhedron()?;
        let k = polyhedral::critical_cone(&poly, &self.ybar, self.inst.ybar_star())?;
        let span = k.linear_span();
        let m = self.m();
        let perp = DMatrix::identity(m, m) - linalg::projector(&span, m);
        let z = linalg::null_space(&(perp * &self.jac), RANK_TOL);
        Ok(match restricted_min_eigen(&self.hess_l, &z) {
            None => true,
            Some((l, _, scale)) => l > PSD_TOL * scale,
        })
    }

    /// The matrix `[[∇²L, ∇FᵀW], [∇F, -P]]` of the single pair.
    fn singleton_matrix(&self) -> Option<DMatrix<f64>> {
        if self.pairs.len() != 1 {
            return None;
        }
        let pair = &self.pairs[0];
        let n = self.n();
        let m = self.m();
        let mut k = DMatrix::zeros(n + m, n + m);
        k.view_mut((0, 0), (n, n)).copy_from(&self.hess_l);
        k.view_mut((0, n), (n, m)).copy_from(&(self.jac.transpose() * pair.w()));
        k.view_mut((n, 0), (m, n)).copy_from(&self.jac);
        k.view_mut((n, n), (m, m)).copy_from(&(-pair.p()));
        Some(k)
    }

    /// `∇²L u + ∇Fᵀv* = 0, (∇F u, v*) ∈ L̄ ⇒ (u, v*) = 0` for a single pair
    /// `L̄ = rge(P, W)`; parametrizing `v* = Wp`, `∇F u = Pp` turns this into
    /// nonsingularity of a square matrix.
    pub fn singleton_regularity(&self) -> SingletonRegularity {
        let Some(k) = self.singleton_matrix() else {
            return SingletonRegularity {
                applicable: false,
                regular: false,
                certificate: None,
            };
        };
        let n = self.n();
        let m = self.m();
        // K is square, so the last right singular vector spans the
        // near-kernel direction.
        let svd = linalg::svd(&k);
        let smax = svd.s[0];
        let imin = svd.s.len() - 1;
        let smin = svd.s[imin];
        if smin > RANK_TOL * smax.max(1.0) {
            return SingletonRegularity {
                applicable: true,
                regular: true,
                certificate: None,
            };
        }
        let up = svd.v.column(imin).into_owned();
        let u = up.rows(0, n).into_owned();
        let p = up.rows(n, m).into_owned();
        let vstar = self.pairs[0].w() * p;
        let mut w = DVector::zeros(n + m);
        w.rows_mut(0, n).copy_from(&u);
        w.rows_mut(n, m).copy_from(&vstar);
        SingletonRegularity {
            applicable: true,
            regular: false,
            certificate: Some(cert(
                "nonzero (u, v*) solving the linearized system over the single SC subspace",
                Some(0),
                &w,
                Some(smin),
            )),
        }
    }

    /// `∇T(ā*, b̄)` mapping `(u*, v)` to `(u, v*)`.
    pub fn localization_derivative(&self) -> Result<DMatrix<f64>, AnalyzerError> {
        let reg = self.singleton_regularity();
        if !reg.applicable {
            return Err(AnalyzerError::NotApplicable(format!(
                "SC derivative has {} pairs, not one",
                self.pairs.len()
            )));
        }
        if !reg.regular {
            return Err(AnalyzerError::NotApplicable("linearized system is singular".into()));
        }
        let k = self.singleton_matrix().expect("applicable");
        let n = self.n();
        let m = self.m();
        // K (u, p) = (u*, -v)
        let mut rhs = DMatrix::<f64>::identity(n + m, n + m);
        for i in n..n + m {
            rhs[(i, i)] = -1.0;
        }
        let sol = k.lu().solve(&rhs).ok_or_else(|| AnalyzerError::Inconsistent {
            property: "localization derivative".into(),
            message: "regular system failed to factor".into(),
            certificates: vec![],
        })?;
        let mut out = sol.clone();
        let wp = self.pairs[0].w() * sol.rows(n, m);
        out.rows_mut(n, m).copy_from(&wp);
        Ok(out)
    }

    /// Polyhedral coderivative criterion for the Aubin property.
    ///
    /// For each face pair with `D = F1 - F2` the system
    /// `∇²L u + ∇Fᵀv* = 0, -∇F u ∈ D, v* ∈ D°` must have only the zero
    /// solution. Each system is a polyhedral cone in `(u, v*)`, and its
    /// nontriviality is decided exactly by LP.
    pub fn mordukhovich(&self) -> Result<TriCheck, AnalyzerError> {
        let poly = self.polyhedron()?;
        let k = polyhedral::critical_cone(&poly, &self.ybar, self.inst.ybar_star())?;
        let (_, pairs) = polyhedral::coderivative_face_pairs(&k, FACE_CAP)?;
        let n = self.n();
        let m = self.m();
        let found: Vec<Option<(usize, Vec<f64>)>> = pairs
            .par_iter()
            .enumerate()
            .map(|(idx, fp)| {
                let e = fp.diff.e();
                let g = fp.diff.g();
                let ne = e.nrows();
                let ng = g.nrows();
                // variables: u (n), v* (m), α (ne), γ (ng, >= 0)
                let nv = n + m + ne + ng;
                let mut lp = Lp::new(nv);
                for j in 0..ng {
                    lp.set_nonneg(n + m + ne + j);
                }
                // ∇²L u + ∇Fᵀ v* = 0
                for r in 0..n {
                    let mut row = vec![0.0; nv];
                    for c in 0..n {
                        row[c] = self.hess_l[(r, c)];
                    }
                    for i in 0..m {
                        row[n + i] = self.jac[(i, r)];
                    }
                    lp.add_row(&row, Cmp::Eq, 0.0);
                }
                // v* = Eᵀα + Gᵀγ
                for i in 0..m {
                    let mut row = vec![0.0; nv];
                    row[n + i] = 1.0;
                    for a in 0..ne {
                        row[n + m + a] = -e[(a, i)];
                    }
                    for b in 0..ng {
                        row[n + m + ne + b] = -g[(b, i)];
                    }
                    lp.add_row(&row, Cmp::Eq, 0.0);
                }
                // E ∇F u = 0, G ∇F u >= 0
                let ej = e * &self.jac;
                let gj = g * &self.jac;
                for a in 0..ne {
                    let mut row = vec![0.0; nv];
                    for c in 0..n {
                        row[c] = ej[(a, c)];
                    }
                    lp.add_row(&row, Cmp::Eq, 0.0);
                }
                for b in 0..ng {
                    let mut row = vec![0.0; nv];
                    for c in 0..n {
                        row[c] = gj[(b, c)];
                    }
                    lp.add_row(&row, Cmp::Ge, 0.0);
                }
                let visible: Vec<usize> = (0..n + m).collect();
                nonzero_in_cone(&lp, &visible, CONE_TOL).map(|z| (idx, z[..n + m].to_vec()))
            })
            .collect();
        Ok(match found.into_iter().flatten().next() {
            None => TriCheck {
                verdict: Verdict::Yes,
                certificate: None,
            },
            Some((idx, z)) => {
                let v = DVector::from_vec(z).normalize();
                TriCheck {
                    verdict: Verdict::No,
                    certificate: Some(cert(
                        "nonzero (u, v*) in the coderivative system of a face pair",
                        Some(idx),
                        &v,
                        None,
                    )),
                }
            }
        })
    }

    /// Whether the SC-derivative chain rule is certified: `∇F(x̄)` has full
    /// row rank, or SOQC holds and the SC derivative is a singleton.
    pub fn chain_rule_applies(&self, soqc: bool) -> Result<(), String> {
        let r = linalg::rank(&self.jac, RANK_TOL);
        if r == self.m() {
            return Ok(());
        }
        if soqc && self.pairs.len() == 1 {
            return Ok(());
        }
        Err(format!(
            "∇F(x̄) has rank {r} < m = {}, and SOQC with a single SC subspace does not hold",
            self.m()
        ))
    }

    /// SC derivative of `∂(g∘F)` at `(x̄, x̄*)`: one subspace
    /// `{(u, Σȳ*_i∇²F_i u + ∇Fᵀv*) : (∇F u, v*) ∈ S}` per pair.
    pub fn sc_chain_rule(&self) -> Result<Vec<Subspace>, AnalyzerError> {
        self.chain_rule_applies(self.soqc().holds)
            .map_err(AnalyzerError::ChainRuleNotCertified)?;
        self.composite_subspaces()
    }

    fn composite_subspaces(&self) -> Result<Vec<Subspace>, AnalyzerError> {
        let n = self.n();
        let m = self.m();
        let mut out = Vec::with_capacity(self.pairs.len());
        for (k, pair) in self.pairs.iter().enumerate() {
            // solutions (u, p) of ∇F u = P p
            let sys = linalg::hstack(&[&self.jac, &(-pair.p())], m);
            let kernel = linalg::null_space(&sys, RANK_TOL);
            let us = kernel.rows(0, n).into_owned();
            let ps = kernel.rows(n, m).into_owned();
            let top = us.clone();
            let bottom = &self.hess_fw * &us + self.jac.transpose() * pair.w() * ps;
            let l = Subspace::from_columns(&linalg::vstack(&[&top, &bottom], kernel.ncols()));
            if l.dim() != n {
                return Err(AnalyzerError::ChainRuleDimension {
                    pair: k,
                    dim: l.dim(),
                    expected: n,
                });
            }
            out.push(l);
        }
        Ok(out)
    }

    /// Tilt stability through the q-subderivative chain rule:
    /// `⟨u, ∇²f u⟩ + d²_q(g∘F)(x̄, x̄*)(u) > 0` for `u ≠ 0`.
    pub fn tilt(&self, soqc: bool) -> (Verdict, Option<Certificate>, Option<String>) {
        if let Err(why) = self.chain_rule_applies(soqc) {
            return (Verdict::NotComputed, None, Some(why));
        }
        let subspaces = match self.composite_subspaces() {
            Ok(s) => s,
            Err(e) => return (Verdict::NotComputed, None, Some(e.to_string())),
        };
        for (k, l) in subspaces.iter().enumerate() {
            let Some(pair) = pw_decompose(l) else {
                return (
                    Verdict::NotComputed,
                    None,
                    Some(format!("composite subspace {k} has no (P, W) basis")),
                );
            };
            let a = &self.hess_f + pair.w();
            let z = pair.range_basis();
            if let Some((l, u, scale)) = restricted_min_eigen(&a, &z) {
                if l <= PSD_TOL * scale {
                    let u = u.normalize();
                    let value = u.dot(&(&a * &u));
                    return (
                        Verdict::No,
                        Some(cert(
                            "composite second-order form not positive",
                            Some(k),
                            &u,
                            Some(value),
                        )),
                        None,
                    );
                }
            }
        }
        (Verdict::Yes, None, None)
    }
}

pub fn check_soqc(inst: &ProblemInstance) -> Result<Check, AnalyzerError> {
    Ok(Reference::new(inst)?.soqc())
}

pub fn check_soqc_polyhedral_crosscheck(inst: &ProblemInstance) -> Result<bool, AnalyzerError> {
    Ok(Reference::new(inst)?.soqc_nondegeneracy()?.0)
}

pub fn check_bcq(inst: &ProblemInstance) -> Result<Check, AnalyzerError> {
    Reference::new(inst)?.bcq()
}

pub fn check_necessary_vs(inst: &ProblemInstance) -> Result<Check, AnalyzerError> {
    Ok(Reference::new(inst)?.necessary_vs())
}

pub fn check_strong_vs(inst: &ProblemInstance) -> Result<Check, AnalyzerError> {
    Ok(Reference::new(inst)?.strong_vs())
}

pub fn check_strong_vs_polyhedral_crosscheck(inst: &ProblemInstance) -> Result<bool, AnalyzerError> {
    Reference::new(inst)?.strong_vs_ssosc()
}

pub fn check_singleton_regularity(inst: &ProblemInstance) -> Result<SingletonRegularity, AnalyzerError> {
    Ok(Reference::new(inst)?.singleton_regularity())
}

pub fn localization_derivative(inst: &ProblemInstance) -> Result<DMatrix<f64>, AnalyzerError> {
    Reference::new(inst)?.localization_derivative()
}

pub fn mordukhovich_polyhedral(inst: &ProblemInstance) -> Result<TriCheck, AnalyzerError> {
    Reference::new(inst)?.mordukhovich()
}

pub fn sc_chain_rule(inst: &ProblemInstance) -> Result<Vec<Subspace>, AnalyzerError> {
    Reference::new(inst)?.sc_chain_rule()
}

pub fn check_tilt_stability(inst: &ProblemInstance) -> Result<Verdict, AnalyzerError> {
    let r = Reference::new(inst)?;
    Ok(r.tilt(r.soqc().holds).0)
}

/// Verdicts on one property collected from several routes.
struct Votes {
    property: &'static str,
    items: Vec<(bool, String, Option<Certificate>)>,
}

impl Votes {
    fn new(property: &'static str) -> Self {
        Votes {
            property,
            items: Vec::new(),
        }
    }

    fn add(&mut self, value: bool, why: impl Into<String>, c: Option<Certificate>) {
        self.items.push((value, why.into(), c));
    }

    fn resolve(self, notes: &mut Vec<String>) -> Result<Verdict, AnalyzerError> {
        let yes = self.items.iter().find(|i| i.0);
        let no = self.items.iter().find(|i| !i.0);
        match (yes, no) {
            (Some(y), Some(n)) => Err(AnalyzerError::Inconsistent {
                property: self.property.into(),
                message: format!("'{}' says yes, '{}' says no", y.1, n.1),
                certificates: self.items.iter().filter_map(|i| i.2.clone()).collect(),
            }),
            (Some(_), None) | (None, Some(_)) => {
                for (v, why, _) in &self.items {
                    notes.push(format!("{}: {} ({why})", self.property, Verdict::from_bool(*v).as_str()));
                }
                Ok(Verdict::from_bool(yes.is_some()))
            }
            (None, None) => {
                notes.push(format!("{}: not computed (no applicable criterion)", self.property));
                Ok(Verdict::NotComputed)
            }
        }
    }
}

/// Runs every criterion and combines them along the known implications,
/// failing if two routes contradict each other.
pub fn analyze(inst: &ProblemInstance) -> Result<StabilityReport, AnalyzerError> {
    let r = Reference::new(inst)?;
    let mut notes = Vec::new();
    let polyhedral = inst.g().as_polyhedron().is_some();

    let soqc = r.soqc();
    let mut soqc_nondegeneracy = None;
    if polyhedral {
        let (nd, nd_cert) = r.soqc_nondegeneracy()?;
        soqc_nondegeneracy = Some(nd);
        if nd != soqc.holds {
            let mut certs: Vec<Certificate> = soqc.certificate.iter().cloned().collect();
            if let Some(v) = nd_cert {
                certs.push(cert("vector orthogonal to rge ∇F and lin T_C", None, &v, None));
            }
            return Err(AnalyzerError::Inconsistent {
                property: "SOQC".into(),
                message: format!("pair test says {}, nondegeneracy says {nd}", soqc.holds),
                certificates: certs,
            });
        }
        notes.push("SOQC cross-checked against nondegeneracy rge ∇F(x̄) + lin T_C(ȳ) = R^m".into());
    }
    let bcq = r.bcq()?;
    let necessary_vs = r.necessary_vs();
    let strong_vs = r.strong_vs();
    let mut strong_vs_ssosc = None;
    if polyhedral {
        let ss = r.strong_vs_ssosc()?;
        strong_vs_ssosc = Some(ss);
        if ss != strong_vs.holds {
            return Err(AnalyzerError::Inconsistent {
                property: "strong variational sufficiency".into(),
                message: format!("pair test says {}, critical-cone test says {ss}", strong_vs.holds),
                certificates: strong_vs.certificate.iter().cloned().collect(),
            });
        }
        notes.push("strong VS cross-checked against the strong second-order condition on span K".into());
    }
    let singleton = r.singleton_regularity();
    let mordukhovich_aubin = if polyhedral {
        r.mordukhovich()?
    } else {
        TriCheck {
            verdict: Verdict::NotComputed,
            certificate: None,
        }
    };
    let chain_rule = r.chain_rule_applies(soqc.holds).is_ok();
    let ss = soqc.holds && strong_vs.holds;

    // Aubin property of the KKT mapping
    let mut aubin = Votes::new("Aubin property");
    if ss {
        aubin.add(true, "SOQC and strong VS hold", None);
    }
    if singleton.applicable {
        aubin.add(
            singleton.regular,
            "single SC subspace: regularity of the linearized system",
            singleton.certificate.clone(),
        );
    }
    match mordukhovich_aubin.verdict {
        Verdict::Yes => aubin.add(true, "polyhedral coderivative criterion", None),
        Verdict::No => aubin.add(
            false,
            "polyhedral coderivative criterion",
            mordukhovich_aubin.certificate.clone(),
        ),
        Verdict::NotComputed => {}
    }
    if !soqc.holds {
        aubin.add(false, "Aubin property requires SOQC", soqc.certificate.clone());
    }
    if necessary_vs.holds && !ss {
        aubin.add(
            false,
            "under the necessary VS condition, Aubin requires SOQC and strong VS",
            strong_vs.certificate.clone(),
        );
    }
    let aubin = aubin.resolve(&mut notes)?;

    // single-valued Lipschitz localization
    let mut sll = Votes::new("single-valued Lipschitz localization");
    if ss {
        sll.add(true, "SOQC and strong VS hold", None);
    }
    if singleton.applicable {
        sll.add(
            singleton.regular,
            "single SC subspace: regularity of the linearized system",
            singleton.certificate.clone(),
        );
    }
    if aubin == Verdict::No {
        sll.add(false, "a Lipschitz localization implies the Aubin property", None);
    }
    if necessary_vs.holds && aubin != Verdict::NotComputed {
        sll.add(
            aubin == Verdict::Yes,
            "under the necessary VS condition the localization exists iff Aubin holds",
            None,
        );
    }
    let sll = sll.resolve(&mut notes)?;

    // tilt stability and full stability
    let (tilt, tilt_cert, tilt_why) = r.tilt(soqc.holds);
    if let Some(why) = tilt_why {
        notes.push(format!("tilt stability: not computed ({why})"));
    } else {
        notes.push(format!(
            "tilt stability: {} (q-subderivative chain rule through the SC chain rule)",
            tilt.as_str()
        ));
    }
    let mut full = Votes::new("full stability");
    if ss {
        full.add(true, "SOQC and strong VS hold", None);
    }
    if bcq.holds && chain_rule {
        full.add(
            ss,
            "with BCQ and the chain rule, full stability iff SOQC and strong VS",
            if ss { None } else { strong_vs.certificate.clone().or(soqc.certificate.clone()) },
        );
    }
    if necessary_vs.holds && aubin != Verdict::NotComputed {
        full.add(
            aubin == Verdict::Yes,
            "under the necessary VS condition full stability iff Aubin",
            None,
        );
    }
    if tilt == Verdict::No {
        full.add(false, "full stability implies tilt stability", tilt_cert.clone());
    }
    let full_stability = full.resolve(&mut notes)?;
    if soqc.holds && tilt != Verdict::NotComputed && (tilt == Verdict::Yes) != strong_vs.holds {
        return Err(AnalyzerError::Inconsistent {
            property: "tilt stability".into(),
            message: format!(
                "with SOQC and the chain rule, tilt ({}) must equal strong VS ({})",
                tilt.as_str(),
                strong_vs.holds
            ),
            certificates: tilt_cert.into_iter().chain(strong_vs.certificate.clone()).collect(),
        });
    }

    let localization_jacobian = if singleton.applicable && singleton.regular {
        let jt = r.localization_derivative()?;
        notes.push("localization derivative from the single SC subspace".into());
        Some(jt.row_iter().map(|row| row.iter().copied().collect()).collect())
    } else {
        None
    };
    if !necessary_vs.holds {
        notes.push("necessary VS condition fails: Aubin and SLL verdicts rely on the remaining routes".into());
    }

    Ok(StabilityReport {
        soqc,
        soqc_nondegeneracy,
        bcq,
        sc_pairs: r.pairs.len(),
        sc_singleton: r.pairs.len() == 1,
        singleton,
        necessary_vs,
        strong_vs,
        strong_vs_ssosc,
        mordukhovich_aubin,
        chain_rule,
        aubin,
        sll,
        tilt_stable: tilt,
        full_stability,
        localization_jacobian,
        notes,
    })
}
