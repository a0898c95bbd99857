//! Sampling probes that corroborate or refute analyzer verdicts.
//!
//! All probes draw their perturbations up front from a seeded ChaCha stream
//! and then solve the samples in parallel, so a given seed reproduces the
//! same report regardless of the thread count. Probes only ever refute: a
//! clean run is evidence, never a certificate.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analyzer::{self, AnalyzerError};
use crate::problem::{KktPoint, ProblemError, ProblemInstance};
use crate::solver::{find_all_local, solve_perturbed, SolveOptions, SolverError};

/// Finite-difference step ladder for derivative checks.
pub const H_LADDER: [f64; 3] = [1e-5, 1e-6, 1e-7];
/// Fraction of failed solves above which a probe is inconclusive.
pub const MAX_FAILURE_RATE: f64 = 0.2;
/// Random starts per sample in the full-stability probe, besides the reference.
const EXTRA_STARTS: usize = 8;
/// Probe directions per candidate in the local descent test.
const DESCENT_DIRECTIONS: usize = 16;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Analyzer(#[from] AnalyzerError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error("solver failed at stencil point h = {h:e}, direction {direction}: {source}")]
    Stencil {
        h: f64,
        direction: usize,
        #[source]
        source: SolverError,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub astar: Vec<f64>,
    pub b: Vec<f64>,
}

impl Perturbation {
    fn from_stacked(v: &DVector<f64>, n: usize) -> Self {
        Perturbation {
            astar: v.rows(0, n).iter().copied().collect(),
            b: v.rows(n, v.len() - n).iter().copied().collect(),
        }
    }

    fn stacked(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.astar.len() + self.b.len(),
            self.astar.iter().chain(self.b.iter()).copied(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub perturbation: Perturbation,
    pub solution: KktPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorstPair {
    pub first: Sample,
    pub second: Sample,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzEstimate {
    pub kappa_hat: f64,
    pub pairs_used: usize,
    pub worst_pair: Option<WorstPair>,
    pub solved: usize,
    pub failures: usize,
    pub inconclusive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivativeCheck {
    pub max_rel_error: f64,
    pub best_h: f64,
    /// `(h, max relative error)` for every step tried.
    pub per_h: Vec<(f64, f64)>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonUnique {
    pub x: Vec<f64>,
    pub xstar: Vec<f64>,
    pub b: Vec<f64>,
    /// Coordinate ranges of the multiplier set.
    pub ranges: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiplierProbe {
    pub samples: usize,
    pub unique: usize,
    pub non_unique: usize,
    pub infeasible: usize,
    /// Largest `‖y₁* - y₂*‖ / ‖(x₁, x₁*, b₁) - (x₂, x₂*, b₂)‖` over unique samples.
    pub lipschitz_ratio: Option<f64>,
    pub example: Option<NonUnique>,
    /// Both unique and non-unique samples were seen.
    pub mixed: bool,
    pub inconclusive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub point: KktPoint,
    pub objective: f64,
    /// No descent direction found by the local probe.
    pub local_min: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub perturbation: Perturbation,
    pub first: Candidate,
    pub second: Candidate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullStabilityProbe {
    pub samples: usize,
    /// Samples with at least one KKT pair in the δ-neighborhood.
    pub populated: usize,
    /// Samples with no KKT pair in the δ-neighborhood.
    pub empty: usize,
    pub violations: Vec<Violation>,
    /// Candidates in the δ-neighborhood that admit a descent direction.
    pub non_minimizers: usize,
    /// Empirical modulus of the candidate nearest to `(x̄, ȳ*)`.
    pub kappa_hat: Option<f64>,
    pub inconclusive: bool,
}

/// Uniform point in the ball of radius `r` in `R^d`.
fn ball_point(rng: &mut ChaCha8Rng, d: usize, r: f64) -> DVector<f64> {
    if d == 0 {
        return DVector::zeros(0);
    }
    loop {
        let g = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let nrm = g.norm();
        if nrm > 1e-300 {
            let u: f64 = rng.random();
            return g / nrm * (r * u.powf(1.0 / d as f64));
        }
    }
}

fn check_radius(radius: f64) -> Result<(), HarnessError> {
    if radius.is_finite() && radius > 0.0 {
        Ok(())
    } else {
        Err(HarnessError::InvalidArgument(format!("radius must be positive, got {radius}")))
    }
}

fn point_vec(p: &KktPoint) -> DVector<f64> {
    DVector::from_iterator(p.x.len() + p.ystar.len(), p.x.iter().chain(p.ystar.iter()).copied())
}

fn reference_stack(inst: &ProblemInstance) -> DVector<f64> {
    let mut v = DVector::zeros(inst.n() + inst.m());
    v.rows_mut(0, inst.n()).copy_from(inst.xbar());
    v.rows_mut(inst.n(), inst.m()).copy_from(inst.ybar_star());
    v
}

/// Largest solution-to-perturbation ratio over pairs whose perturbations
/// are at least `min_dist` apart.
fn max_ratio(samples: &[Sample], min_dist: f64) -> (f64, usize, Option<WorstPair>) {
    let stacked: Vec<(DVector<f64>, DVector<f64>)> = samples
        .iter()
        .map(|s| (s.perturbation.stacked(), point_vec(&s.solution)))
        .collect();
    let mut best = 0.0;
    let mut used = 0;
    let mut worst = None;
    for i in 0..stacked.len() {
        for j in i + 1..stacked.len() {
            let dp = (&stacked[i].0 - &stacked[j].0).norm();
            if dp < min_dist {
                continue;
            }
            used += 1;
            let ratio = (&stacked[i].1 - &stacked[j].1).norm() / dp;
            if ratio > best {
                best = ratio;
                worst = Some((i, j));
            }
        }
    }
    let worst = worst.map(|(i, j)| WorstPair {
        first: samples[i].clone(),
        second: samples[j].clone(),
        ratio: best,
    });
    (best, used, worst)
}

/// Empirical Lipschitz modulus of the solution reached from `(x̄, ȳ*)`
/// over uniform `(a*, b)` samples in the ball of the given radius.
pub fn estimate_lipschitz(
    inst: &ProblemInstance,
    radius: f64,
    samples: usize,
    seed: u64,
) -> Result<LipschitzEstimate, HarnessError> {
    check_radius(radius)?;
    if samples < 2 {
        return Err(HarnessError::InvalidArgument(format!("need at least 2 samples, got {samples}")));
    }
    let n = inst.n();
    let d = n + inst.m();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let perts: Vec<DVector<f64>> = (0..samples).map(|_| ball_point(&mut rng, d, radius)).collect();
    let opts = SolveOptions::default();
    let results: Vec<Option<Sample>> = perts
        .par_iter()
        .map(|p| {
            let pert = Perturbation::from_stacked(p, n);
            let astar = DVector::from_column_slice(&pert.astar);
            let b = DVector::from_column_slice(&pert.b);
            solve_perturbed(inst, &astar, &b, (inst.xbar(), inst.ybar_star()), &opts)
                .ok()
                .map(|s| Sample {
                    perturbation: pert,
                    solution: s.point,
                })
        })
        .collect();
    let solved: Vec<Sample> = results.into_iter().flatten().collect();
    let failures = samples - solved.len();
    let (kappa_hat, pairs_used, worst_pair) = max_ratio(&solved, radius / 100.0);
    Ok(LipschitzEstimate {
        kappa_hat,
        pairs_used,
        worst_pair,
        solved: solved.len(),
        failures,
        inconclusive: failures as f64 > MAX_FAILURE_RATE * samples as f64 || pairs_used == 0,
    })
}

/// Compares central differences of the solved localization against the
/// analytic derivative along `directions` (canonical basis if `None`),
/// reporting the best step of the ladder `hs`.
pub fn verify_localization_derivative(
    inst: &ProblemInstance,
    hs: &[f64],
    directions: Option<&[DVector<f64>]>,
) -> Result<DerivativeCheck, HarnessError> {
    if hs.is_empty() || hs.iter().any(|h| !(h.is_finite() && *h > 0.0)) {
        return Err(HarnessError::InvalidArgument("steps must be positive".into()));
    }
    let jac = analyzer::localization_derivative(inst)?;
    let n = inst.n();
    let d = n + inst.m();
    let dirs: Vec<DVector<f64>> = match directions {
        Some(ds) => ds.to_vec(),
        None => (0..d).map(|i| DMatrix::<f64>::identity(d, d).column(i).into_owned()).collect(),
    };
    let mut notes = Vec::new();
    let opts = SolveOptions::default();
    let solve_at = |p: &DVector<f64>, h: f64, k: usize| -> Result<DVector<f64>, HarnessError> {
        let pert = Perturbation::from_stacked(p, n);
        solve_perturbed(
            inst,
            &DVector::from_column_slice(&pert.astar),
            &DVector::from_column_slice(&pert.b),
            (inst.xbar(), inst.ybar_star()),
            &opts,
        )
        .map(|s| s.stacked())
        .map_err(|source| HarnessError::Stencil { h, direction: k, source })
    };
    let mut per_h = Vec::new();
    for &h in hs {
        let mut worst: f64 = 0.0;
        for (k, dir) in dirs.iter().enumerate() {
            if dir.len() != d {
                return Err(HarnessError::InvalidArgument(format!(
                    "direction {k} has length {}, expected {d}",
                    dir.len()
                )));
            }
            let nd = dir.norm();
            if nd == 0.0 {
                if h == hs[0] {
                    notes.push(format!("direction {k} is zero, skipped"));
                }
                continue;
            }
            let plus = solve_at(&(dir * h), h, k)?;
            let minus = solve_at(&(dir * -h), h, k)?;
            let fd = (plus - minus) / (2.0 * h);
            let pred = &jac * dir;
            let err = (&fd - &pred).norm() / pred.norm().max(nd);
            worst = worst.max(err);
        }
        per_h.push((h, worst));
    }
    let (best_h, max_rel_error) = per_h
        .iter()
        .copied()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("nonempty ladder");
    Ok(DerivativeCheck {
        max_rel_error,
        best_h,
        per_h,
        notes,
    })
}

/// Samples `(x, x*, b)` near `(x̄, x̄*, 0)` inside `dom M` and records
/// whether each multiplier set is a singleton.
///
/// Feasible samples come from the Minty parametrization: for `z` near
/// `F(x) + ȳ*` the pair `(prox g(z), z - prox g(z))` lies in `gph ∂g`, so
/// `b = prox g(z) - F(x)` and `x* = ∇F(x)ᵀ(z - prox g(z))` give a nonempty
/// multiplier set.
pub fn probe_multiplier_uniqueness(
    inst: &ProblemInstance,
    radius: f64,
    samples: usize,
    seed: u64,
) -> Result<MultiplierProbe, HarnessError> {
    check_radius(radius)?;
    let n = inst.n();
    let m = inst.m();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<(DVector<f64>, DVector<f64>)> = (0..samples)
        .map(|_| (ball_point(&mut rng, n, radius), ball_point(&mut rng, m, radius)))
        .collect();
    type Outcome = Option<(DVector<f64>, Option<DVector<f64>>, Vec<(f64, f64)>)>;
    let outcomes: Vec<Outcome> = draws
        .par_iter()
        .map(|(dx, dz)| {
            let x = inst.xbar() + dx;
            let d = inst.derivatives(&x).ok()?;
            let z = &d.fx + inst.ybar_star() + dz;
            let y = inst.g().prox(&z).ok()?;
            let ystar = &z - &y;
            let b = &y - &d.fx;
            let xstar = d.jac.transpose() * &ystar;
            let set = inst.multiplier_set(&x, &xstar, &b).ok()?;
            if set.is_empty() {
                return None;
            }
            let mut key = DVector::zeros(n + n + m);
            key.rows_mut(0, n).copy_from(&x);
            key.rows_mut(n, n).copy_from(&xstar);
            key.rows_mut(2 * n, m).copy_from(&b);
            let elem = if set.unique { set.element.clone() } else { None };
            Some((key, elem, set.ranges.clone()))
        })
        .collect();
    let mut unique = Vec::new();
    let mut non_unique = 0;
    let mut infeasible = 0;
    let mut example = None;
    for o in outcomes {
        match o {
            None => infeasible += 1,
            Some((key, Some(y), _)) => unique.push((key, y)),
            Some((key, None, ranges)) => {
                non_unique += 1;
                if example.is_none() {
                    example = Some(NonUnique {
                        x: key.rows(0, n).iter().copied().collect(),
                        xstar: key.rows(n, n).iter().copied().collect(),
                        b: key.rows(2 * n, m).iter().copied().collect(),
                        ranges,
                    });
                }
            }
        }
    }
    let mut ratio: Option<f64> = None;
    for i in 0..unique.len() {
        for j in i + 1..unique.len() {
            let dp = (&unique[i].0 - &unique[j].0).norm();
            if dp < radius / 100.0 {
                continue;
            }
            let r = (&unique[i].1 - &unique[j].1).norm() / dp;
            ratio = Some(ratio.map_or(r, |c| c.max(r)));
        }
    }
    Ok(MultiplierProbe {
        samples,
        unique: unique.len(),
        non_unique,
        infeasible,
        lipschitz_ratio: ratio,
        example,
        mixed: !unique.is_empty() && non_unique > 0,
        inconclusive: samples > 0 && infeasible == samples,
    })
}

/// Whether `x` survives a local descent probe for the perturbed objective
/// restricted to the ball `‖x - x̄‖ <= delta`.
fn descent_probe(
    inst: &ProblemInstance,
    x: &DVector<f64>,
    astar: &DVector<f64>,
    b: &DVector<f64>,
    delta: f64,
    rng: &mut ChaCha8Rng,
) -> Option<(f64, bool)> {
    let n = x.len();
    let phi = |p: &DVector<f64>| inst.objective(p, astar, b).ok();
    let f0 = phi(x)?;
    let mut dirs: Vec<DVector<f64>> = Vec::new();
    for i in 0..n {
        let mut e = DVector::zeros(n);
        e[i] = 1.0;
        dirs.push(-&e);
        dirs.push(e);
    }
    for _ in 0..DESCENT_DIRECTIONS {
        dirs.push(ball_point(rng, n, 1.0).normalize());
    }
    let tol = 1e-12 * (1.0 + f0.abs());
    for dir in &dirs {
        for s in [1e-2, 1e-3, 1e-4] {
            let p = x + dir * (s * delta);
            if (&p - inst.xbar()).norm() > delta {
                continue;
            }
            if let Some(fp) = phi(&p) {
                if fp.is_finite() && fp < f0 - tol {
                    return Some((f0, false));
                }
            }
        }
    }
    Some((f0, true))
}

/// Looks for perturbations with more than one KKT pair in the
/// δ-neighborhood of `(x̄, ȳ*)`, which rules out the single-valued
/// localized optimal-pair map required by full stability.
pub fn check_full_stability(
    inst: &ProblemInstance,
    delta: f64,
    radius: f64,
    samples: usize,
    seed: u64,
) -> Result<FullStabilityProbe, HarnessError> {
    if !(delta.is_finite() && delta > 0.0) {
        return Err(HarnessError::InvalidArgument(format!("delta must be positive, got {delta}")));
    }
    check_radius(radius)?;
    let n = inst.n();
    let m = inst.m();
    let reference = reference_stack(inst);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    struct Draw {
        pert: DVector<f64>,
        starts: Vec<(DVector<f64>, DVector<f64>)>,
        seed: u64,
    }
    let draws: Vec<Draw> = (0..samples)
        .map(|_| {
            let pert = ball_point(&mut rng, n + m, radius);
            let mut starts = vec![(inst.xbar().clone(), inst.ybar_star().clone())];
            for _ in 0..EXTRA_STARTS {
                let p = &reference + ball_point(&mut rng, n + m, delta);
                starts.push((p.rows(0, n).into_owned(), p.rows(n, m).into_owned()));
            }
            Draw {
                pert,
                starts,
                seed: rng.random(),
            }
        })
        .collect();
    let opts = SolveOptions::default();
    let per_sample: Vec<(Perturbation, Vec<Candidate>)> = draws
        .par_iter()
        .map(|dr| {
            let pert = Perturbation::from_stacked(&dr.pert, n);
            let astar = DVector::from_column_slice(&pert.astar);
            let b = DVector::from_column_slice(&pert.b);
            let found = find_all_local(inst, &astar, &b, &dr.starts, &opts);
            let mut local_rng = ChaCha8Rng::seed_from_u64(dr.seed);
            let cands = found
                .solutions
                .into_iter()
                .filter(|s| (s.x() - inst.xbar()).norm() <= delta && (s.ystar() - inst.ybar_star()).norm() <= delta)
                .filter_map(|s| {
                    let (objective, local_min) = descent_probe(inst, &s.x(), &astar, &b, delta, &mut local_rng)?;
                    Some(Candidate {
                        point: s.point,
                        objective,
                        local_min,
                    })
                })
                .collect();
            (pert, cands)
        })
        .collect();
    let mut violations = Vec::new();
    let mut non_minimizers = 0;
    let mut selected = Vec::new();
    let mut empty = 0;
    for (pert, cands) in per_sample {
        non_minimizers += cands.iter().filter(|c| !c.local_min).count();
        if cands.is_empty() {
            empty += 1;
            continue;
        }
        if cands.len() >= 2 {
            violations.push(Violation {
                perturbation: pert.clone(),
                first: cands[0].clone(),
                second: cands[1].clone(),
            });
        }
        // candidates come sorted by distance to the reference
        selected.push(Sample {
            perturbation: pert,
            solution: cands[0].point.clone(),
        });
    }
    let kappa_hat = (selected.len() >= 2).then(|| max_ratio(&selected, radius / 100.0).0);
    Ok(FullStabilityProbe {
        samples,
        populated: selected.len(),
        empty,
        violations,
        non_minimizers,
        kappa_hat,
        inconclusive: samples > 0 && selected.is_empty(),
    })
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

    fn strict() -> ProblemInstance {
        halfline("0.5*(x1-1)^2", 0.0, 1.0)
    }

    #[test]
    fn ball_sampling_stays_inside() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for d in 1..6 {
            for _ in 0..200 {
                assert!(ball_point(&mut rng, d, 0.5).norm() <= 0.5);
            }
        }
    }

    #[test]
    fn lipschitz_strict_complementarity() {
        let est = estimate_lipschitz(&strict(), 1e-3, 200, 42).unwrap();
        assert!(!est.inconclusive);
        // σ_max([[0, -1], [1, 1]]) = √((3 + √5)/2)
        let sigma = ((3.0 + 5f64.sqrt()) / 2.0).sqrt();
        assert!(est.kappa_hat >= 1.0 && est.kappa_hat <= sigma + 1e-9, "{}", est.kappa_hat);
        assert!(matches!(estimate_lipschitz(&strict(), 0.0, 200, 42), Err(HarnessError::InvalidArgument(_))));
    }

    #[test]
    fn lipschitz_is_deterministic() {
        let a = estimate_lipschitz(&strict(), 1e-3, 40, 7).unwrap();
        let b = estimate_lipschitz(&strict(), 1e-3, 40, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn derivative_check_strict() {
        let chk = verify_localization_derivative(&strict(), &H_LADDER, None).unwrap();
        assert!(chk.max_rel_error <= 1e-4, "{chk:?}");
        let zero = [DVector::zeros(2), v(&[1.0, 0.0])];
        let chk = verify_localization_derivative(&strict(), &[1e-6], Some(&zero)).unwrap();
        assert_eq!(chk.notes.len(), 1);
    }

    #[test]
    fn multiplier_probe_examples() {
        let p = probe_multiplier_uniqueness(&strict(), 1e-3, 50, 1).unwrap();
        assert_eq!(p.unique, 50);
        assert!(p.lipschitz_ratio.unwrap().is_finite());
        let g = GSpec::polyhedral(DMatrix::identity(2, 2), v(&[0.0, 0.0]), vec![]).unwrap();
        let deg = ProblemInstance::new("0.5*(x1-1)^2", &["x1", "x1"], g, v(&[0.0]), v(&[0.5, 0.5])).unwrap();
        let p = probe_multiplier_uniqueness(&deg, 1e-3, 50, 1).unwrap();
        assert!(p.non_unique > 0);
        let ex = p.example.unwrap();
        assert!(ex.ranges.iter().any(|(lo, hi)| hi - lo > 1e-3));
    }

    #[test]
    fn full_stability_examples() {
        let p = check_full_stability(&strict(), 0.1, 1e-2, 100, 5).unwrap();
        assert!(p.violations.is_empty());
        assert_eq!(p.non_minimizers, 0);
        let neg = halfline("-0.5*x1^2", 0.0, 0.0);
        let p = check_full_stability(&neg, 0.1, 1e-2, 60, 42).unwrap();
        assert!(!p.violations.is_empty());
        let viol = &p.violations[0];
        let a = DVector::from_column_slice(&viol.perturbation.astar);
        let b = DVector::from_column_slice(&viol.perturbation.b);
        for c in [&viol.first, &viol.second] {
            let r = neg
                .kkt_residual(&DVector::from_column_slice(&c.point.x), &DVector::from_column_slice(&c.point.ystar), &a, &b)
                .unwrap();
            assert!(r.norm() <= 1e-10);
        }
        let p = check_full_stability(&neg, 0.1, 1e-2, 0, 42).unwrap();
        assert_eq!(p.samples, 0);
        assert!(p.violations.is_empty() && !p.inconclusive);
    }
}
