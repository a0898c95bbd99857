//! Machine-readable report document and its plain-text rendering.
//!
//! The JSON layout is `{verdicts, certificates, jacobian, notes,
//! tool_version, seed}` plus optional `solution` and `probe` sections.
//! serde_json writes floats in shortest round-trip form, so re-parsing a
//! report reproduces every number exactly.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::analyzer::{Certificate, StabilityReport, Verdict};
use crate::harness::{DerivativeCheck, FullStabilityProbe, LipschitzEstimate, MultiplierProbe};
use crate::solver::Solution;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProbeSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lipschitz: Option<LipschitzEstimate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub multipliers: Option<MultiplierProbe>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub full_stability: Option<FullStabilityProbe>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub derivative: Option<DerivativeCheck>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub verdicts: BTreeMap<String, Verdict>,
    pub certificates: BTreeMap<String, Certificate>,
    pub jacobian: Option<Vec<Vec<f64>>>,
    pub notes: Vec<String>,
    pub tool_version: String,
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solution: Option<Solution>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe: Option<ProbeSection>,
}

impl ReportDocument {
    pub fn empty(seed: Option<u64>) -> Self {
        ReportDocument {
            verdicts: BTreeMap::new(),
            certificates: BTreeMap::new(),
            jacobian: None,
            notes: Vec::new(),
            tool_version: TOOL_VERSION.to_string(),
            seed,
            solution: None,
            probe: None,
        }
    }

    pub fn from_analysis(rep: &StabilityReport, seed: Option<u64>) -> Self {
        let mut doc = ReportDocument::empty(seed);
        let mut put = |k: &str, v: Verdict, c: Option<&Certificate>| {
            doc.verdicts.insert(k.to_string(), v);
            if let Some(c) = c {
                doc.certificates.insert(k.to_string(), c.clone());
            }
        };
        put("soqc", Verdict::from_bool(rep.soqc.holds), rep.soqc.certificate.as_ref());
        if let Some(nd) = rep.soqc_nondegeneracy {
            put("soqc_nondegeneracy", Verdict::from_bool(nd), None);
        }
        put("bcq", Verdict::from_bool(rep.bcq.holds), rep.bcq.certificate.as_ref());
        put("sc_singleton", Verdict::from_bool(rep.sc_singleton), None);
        let sr = if rep.singleton.applicable {
            Verdict::from_bool(rep.singleton.regular)
        } else {
            Verdict::NotComputed
        };
        put("singleton_regular", sr, rep.singleton.certificate.as_ref());
        put(
            "necessary_vs",
            Verdict::from_bool(rep.necessary_vs.holds),
            rep.necessary_vs.certificate.as_ref(),
        );
        put("strong_vs", Verdict::from_bool(rep.strong_vs.holds), rep.strong_vs.certificate.as_ref());
        if let Some(s) = rep.strong_vs_ssosc {
            put("strong_vs_ssosc", Verdict::from_bool(s), None);
        }
        put(
            "mordukhovich_aubin",
            rep.mordukhovich_aubin.verdict,
            rep.mordukhovich_aubin.certificate.as_ref(),
        );
        put("chain_rule", Verdict::from_bool(rep.chain_rule), None);
        put("aubin", rep.aubin, None);
        put("sll", rep.sll, None);
        put("tilt_stable", rep.tilt_stable, None);
        put("full_stability", rep.full_stability, None);
        doc.jacobian = rep.localization_jacobian.clone();
        doc.notes = rep.notes.clone();
        doc
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is always serializable")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        if !self.verdicts.is_empty() {
            out.push_str("verdicts:\n");
            let width = self.verdicts.keys().map(String::len).max().unwrap_or(0);
            for (k, v) in &self.verdicts {
                let _ = writeln!(out, "  {k:<width$}  {}", v.as_str());
            }
        }
        if !self.certificates.is_empty() {
            out.push_str("certificates:\n");
            for (k, c) in &self.certificates {
                let _ = write!(out, "  {k}: {}", c.detail);
                if let Some(p) = c.pair {
                    let _ = write!(out, " [pair {p}]");
                }
                let _ = write!(out, " vector {}", fmt_vec(&c.vector));
                if let Some(val) = c.value {
                    let _ = write!(out, " value {val:.6e}");
                }
                out.push('\n');
            }
        }
        if let Some(j) = &self.jacobian {
            out.push_str("localization derivative:\n");
            for row in j {
                let _ = writeln!(out, "  {}", fmt_vec(row));
            }
        }
        if let Some(s) = &self.solution {
            let _ = writeln!(
                out,
                "solution: x = {}, y* = {}, residual {:.3e}, {} iterations",
                fmt_vec(&s.point.x),
                fmt_vec(&s.point.ystar),
                s.point.residual,
                s.iterations
            );
        }
        if let Some(p) = &self.probe {
            render_probe(&mut out, p);
        }
        if !self.notes.is_empty() {
            out.push_str("notes:\n");
            for n in &self.notes {
                let _ = writeln!(out, "  - {n}");
            }
        }
        out
    }
}

fn render_probe(out: &mut String, p: &ProbeSection) {
    if let Some(l) = &p.lipschitz {
        let _ = writeln!(
            out,
            "lipschitz estimate: kappa_hat = {:.6}, {} pairs, {} solved, {} failed{}",
            l.kappa_hat,
            l.pairs_used,
            l.solved,
            l.failures,
            if l.inconclusive { " (inconclusive)" } else { "" }
        );
    }
    if let Some(m) = &p.multipliers {
        let _ = writeln!(
            out,
            "multipliers: {} unique, {} non-unique, {} infeasible of {}{}",
            m.unique,
            m.non_unique,
            m.infeasible,
            m.samples,
            m.lipschitz_ratio.map(|r| format!(", ratio {r:.6}")).unwrap_or_default()
        );
    }
    if let Some(f) = &p.full_stability {
        let _ = writeln!(
            out,
            "full stability probe: {} violations, {} empty, {} non-minimizers of {}{}",
            f.violations.len(),
            f.empty,
            f.non_minimizers,
            f.samples,
            f.kappa_hat.map(|k| format!(", modulus {k:.6}")).unwrap_or_default()
        );
        if let Some(v) = f.violations.first() {
            let _ = writeln!(
                out,
                "  first violation: a* = {}, b = {}: x = {} and x = {}",
                fmt_vec(&v.perturbation.astar),
                fmt_vec(&v.perturbation.b),
                fmt_vec(&v.first.point.x),
                fmt_vec(&v.second.point.x)
            );
        }
    }
    if let Some(d) = &p.derivative {
        let _ = writeln!(
            out,
            "derivative check: max relative error {:.3e} at h = {:e}",
            d.max_rel_error, d.best_h
        );
    }
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.6}")).collect();
    format!("[{}]", parts.join(", "))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analyzer::analyze;
    use crate::catalog::GSpec;
    use crate::problem::ProblemInstance;
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn json_round_trip_keeps_verdicts_and_floats() {
        let g = GSpec::polyhedral(DMatrix::from_element(1, 1, 1.0), DVector::from_element(1, 0.0), vec![]).unwrap();
        let inst = ProblemInstance::new("-0.5*x1^2", &["x1"], g, DVector::from_element(1, 0.0), DVector::from_element(1, 0.0)).unwrap();
        let rep = analyze(&inst).unwrap();
        let mut doc = ReportDocument::from_analysis(&rep, Some(9));
        doc.notes.push(format!("{}", 0.1 + 0.2));
        doc.jacobian = Some(vec![vec![0.1 + 0.2, 1.0 / 3.0]]);
        let back = ReportDocument::from_json(&doc.to_json()).unwrap();
        assert_eq!(back, doc);
        assert_eq!(back.verdicts["aubin"], Verdict::No);
        assert!(back.certificates.contains_key("mordukhovich_aubin"));
        let text = doc.render_text();
        assert!(text.contains("aubin") && text.contains("no"));
    }
}
