//! Machine-readable run reports.
//!
//! Everything a run decides is flattened into one [`ReportDocument`] that
//! serializes to stable JSON: two runs with the same model and flags produce
//! byte-identical output except for the `timings` block.

use serde::ser::SerializeMap;
use serde::{Serialize, Serializer};

use crate::canon::{CanonizationResult, TransformOp};
use crate::model::Model;
use crate::modelfile;
use crate::obs::{AnalysisReport, OracleCheck};
use crate::span::SamplePlan;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Serialize)]
pub struct PlanOut {
    pub seed: u64,
    pub samples: usize,
    pub rank_tol: f64,
    pub member_tol: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StepOut {
    pub m: usize,
    pub rank: usize,
    pub new_generators: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SymmetryOut {
    /// Basis of the orthogonal distribution at the first sample point, one
    /// row per unobservable direction.
    pub numeric: Vec<Vec<f64>>,
    /// Outcome per declared candidate, in declaration order.
    pub verified: Vec<bool>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CanonOut {
    /// Whether the input system already had the required structure.
    pub canonic: bool,
    /// One entry per state augmentation, in the order applied.
    pub augmentations: Vec<String>,
    /// Input reorderings and mixing changes, in the order applied.
    pub coordinate_changes: Vec<String>,
    /// Unknown inputs that provably cannot reach any output.
    pub spurious: Vec<String>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleOut {
    pub k: usize,
    pub m: usize,
    pub rank_extended: usize,
    pub rank_embedded: usize,
    /// "equal" when the two ranks agree, "included" when the extended side
    /// is strictly smaller, "violated" otherwise.
    pub verdict: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct AssertionOut {
    pub claim: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Timings {
    pub total_secs: f64,
    pub step_secs: Vec<f64>,
}

/// The full JSON document written by `--json`.
#[derive(Debug, Clone, Serialize)]
pub struct ReportDocument {
    pub version: String,
    pub model_digest: String,
    pub plan: PlanOut,
    pub method: String,
    pub steps: Vec<StepOut>,
    pub special_case: bool,
    pub m_prime: Option<usize>,
    pub m_star: Option<usize>,
    pub converged: bool,
    pub selected: Vec<String>,
    #[serde(serialize_with = "pairs_as_map")]
    pub verdicts: Vec<(String, bool)>,
    pub observable: bool,
    pub unobs_dim: usize,
    pub symmetry: SymmetryOut,
    pub canonization: Option<CanonOut>,
    pub oracle: Option<OracleOut>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub assertions: Option<Vec<AssertionOut>>,
    pub timings: Timings,
}

fn pairs_as_map<S: Serializer>(v: &[(String, bool)], s: S) -> Result<S::Ok, S::Error> {
    let mut map = s.serialize_map(Some(v.len()))?;
    for (k, b) in v {
        map.serialize_entry(k, b)?;
    }
    map.end()
}

impl ReportDocument {
    /// Assemble the document for one analysis run. `model` is the system as
    /// the user wrote it (the digest identifies the input file, not any
    /// canonized rewrite of it).
    pub fn from_analysis(
        model: &Model,
        plan: &SamplePlan,
        rep: &AnalysisReport,
        canon: Option<&CanonizationResult>,
        total_secs: f64,
    ) -> Self {
        ReportDocument {
            version: TOOL_VERSION.to_string(),
            model_digest: modelfile::model_digest(model),
            plan: PlanOut {
                seed: plan.seed,
                samples: plan.point_count,
                rank_tol: plan.rank_tol,
                member_tol: plan.membership_tol,
            },
            method: rep.method.clone(),
            steps: rep
                .steps
                .iter()
                .map(|s| StepOut {
                    m: s.m,
                    rank: s.rank,
                    new_generators: s.new_generators.clone(),
                })
                .collect(),
            special_case: rep.special_case,
            m_prime: rep.m_prime,
            m_star: rep.m_star,
            converged: rep.converged,
            selected: rep.selected.clone(),
            verdicts: rep.verdicts.clone(),
            observable: rep.observable,
            unobs_dim: rep.unobs_dim,
            symmetry: SymmetryOut {
                numeric: rep.numeric_symmetry.clone(),
                verified: rep.verified_symmetries.clone(),
            },
            canonization: canon.map(CanonOut::from_result),
            oracle: None,
            assertions: None,
            timings: Timings {
                total_secs,
                step_secs: rep.steps.iter().map(|s| s.secs).collect(),
            },
        }
    }

    pub fn with_oracle(mut self, chk: &OracleCheck) -> Self {
        let verdict = if chk.rank_extended == chk.rank_embedded {
            "equal"
        } else if chk.rank_extended < chk.rank_embedded {
            "included"
        } else {
            "violated"
        };
        self.oracle = Some(OracleOut {
            k: chk.k,
            m: chk.m,
            rank_extended: chk.rank_extended,
            rank_embedded: chk.rank_embedded,
            verdict: verdict.to_string(),
        });
        self
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

impl CanonOut {
    pub fn from_result(res: &CanonizationResult) -> Self {
        let mut augmentations = Vec::new();
        let mut coordinate_changes = Vec::new();
        for entry in &res.transform_log {
            match entry.op {
                TransformOp::Augment { .. } => augmentations.push(entry.note.clone()),
                TransformOp::Reorder { .. } | TransformOp::InputChange { .. } => {
                    coordinate_changes.push(entry.note.clone())
                }
            }
        }
        CanonOut {
            canonic: res.canonic,
            augmentations,
            coordinate_changes,
            spurious: res.spurious.clone(),
            warnings: res.warnings.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modelfile::parse_model;
    use crate::obs::{self, AnalysisOpts};

    const BASE: &str = "state r phi theta\n\
                        known_input omega\n\
                        unknown_input v\n\
                        f omega = 0, 0, 1\n\
                        g v = cos(theta - phi), sin(theta - phi) / r, 0\n\
                        output y = r\n\
                        range r 1.2 2\n";

    fn doc() -> ReportDocument {
        let model = parse_model(BASE).unwrap();
        let plan = model.plan(7);
        let rep = obs::omega_single(&model, &plan, &AnalysisOpts::default()).unwrap();
        ReportDocument::from_analysis(&model, &plan, &rep, None, 0.25)
    }

    #[test]
    fn verdicts_serialize_as_ordered_map() {
        let text = doc().to_json_pretty();
        let block = &text[text.find("\"verdicts\"").unwrap()..];
        let pos = |k: &str| block.find(&format!("\"{k}\"")).unwrap();
        assert!(pos("r") < pos("phi") && pos("phi") < pos("theta"));
        let json: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(json["verdicts"]["r"], serde_json::Value::Bool(true));
    }

    #[test]
    fn same_run_serializes_identically_outside_timings() {
        let strip = |d: &ReportDocument| {
            let mut v: serde_json::Value = serde_json::from_str(&d.to_json_pretty()).unwrap();
            v.as_object_mut().unwrap().remove("timings");
            serde_json::to_string(&v).unwrap()
        };
        let (a, b) = (doc(), doc());
        assert_eq!(strip(&a), strip(&b));
        assert!(a.to_json_pretty().contains("\"timings\""));
    }

    #[test]
    fn oracle_verdict_labels() {
        let chk = OracleCheck {
            k: 2,
            m: 2,
            rank_extended: 4,
            rank_embedded: 4,
        };
        let d = doc().with_oracle(&chk);
        assert_eq!(d.oracle.as_ref().unwrap().verdict, "equal");
        let chk = OracleCheck {
            k: 2,
            m: 1,
            rank_extended: 3,
            rank_embedded: 4,
        };
        let d = doc().with_oracle(&chk);
        assert_eq!(d.oracle.as_ref().unwrap().verdict, "included");
    }

    #[test]
    fn absent_sections_render_as_null_or_vanish() {
        let d = doc();
        let json: serde_json::Value = serde_json::from_str(&d.to_json_pretty()).unwrap();
        assert!(json["canonization"].is_null());
        assert!(json["oracle"].is_null());
        assert!(json.get("assertions").is_none());
        assert_eq!(json["model_digest"].as_str().unwrap().len(), 16);
    }
}
