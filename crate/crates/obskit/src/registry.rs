//! Built-in worked examples and the outcomes they are expected to
//! reproduce. `example <name>` runs the analysis and checks the pinned
//! fields; anything left unpinned is reported but not asserted.

use crate::model::Model;
use crate::modelfile::{parse_model, ModelError};

/// Expected analysis outcome for one example. Only pinned fields are
/// asserted: `None` / empty slices mean "not checked". Verdict names and
/// symmetry coordinates refer to the analyzed model, which for canonized
/// examples is the augmented one.
#[derive(Debug, Clone, Copy)]
pub struct Expected {
    /// Route the automatic dispatch must take.
    pub method: Option<&'static str>,
    /// Codistribution rank after every filtration step, in step order.
    pub step_ranks: Option<&'static [usize]>,
    /// Rank of the converged codistribution.
    pub final_rank: usize,
    pub m_star: Option<usize>,
    pub m_prime: Option<usize>,
    pub special_case: Option<bool>,
    pub observable: Option<bool>,
    pub unobs_dim: Option<usize>,
    /// Per-state verdicts to pin (a subset of the state).
    pub verdicts: &'static [(&'static str, bool)],
    /// Exact number of state augmentations canonization must perform.
    pub augmentations: Option<usize>,
    pub spurious: &'static [&'static str],
    /// Constant-coefficient symmetry candidates in analyzed-model
    /// coordinates, checked against the converged codistribution. Model
    /// files can only carry symmetries in their own coordinates, so
    /// augmented examples pin them here instead.
    pub extra_symmetries: &'static [&'static [i64]],
    /// Number of convergence-tensor components that survive the numeric
    /// zero test.
    pub nonvanishing_t: Option<usize>,
}

const UNPINNED: Expected = Expected {
    method: None,
    step_ranks: None,
    final_rank: 0,
    m_star: None,
    m_prime: None,
    special_case: None,
    observable: None,
    unobs_dim: None,
    verdicts: &[],
    augmentations: None,
    spurious: &[],
    extra_symmetries: &[],
    nonvanishing_t: None,
};

pub struct Example {
    pub name: &'static str,
    /// One-line description for listings.
    pub summary: &'static str,
    pub text: &'static str,
    pub expected: Expected,
}

pub static EXAMPLES: &[Example] = &[
    Example {
        name: "unicycle-case1",
        summary: "polar unicycle, range output, turn rate known, speed unknown",
        text: include_str!("../../../models/unicycle-case1.sys"),
        expected: Expected {
            method: Some("single-unknown-input"),
            step_ranks: Some(&[1, 1, 2, 2]),
            final_rank: 2,
            m_star: Some(2),
            m_prime: Some(2),
            special_case: Some(false),
            observable: Some(false),
            unobs_dim: Some(1),
            verdicts: &[("r", true), ("phi", false), ("theta", false)],
            ..UNPINNED
        },
    },
    Example {
        name: "unicycle-case2",
        summary: "polar unicycle, range output, speed known, turn rate unknown",
        text: include_str!("../../../models/unicycle-case2.sys"),
        expected: Expected {
            method: Some("single-unknown-input"),
            step_ranks: Some(&[2, 2, 2, 2]),
            final_rank: 2,
            m_star: Some(2),
            observable: Some(false),
            unobs_dim: Some(1),
            verdicts: &[("r", true)],
            ..UNPINNED
        },
    },
    Example {
        name: "unicycle-case3",
        summary: "polar unicycle, bearing output, turn rate known, speed unknown",
        text: include_str!("../../../models/unicycle-case3.sys"),
        expected: Expected {
            method: Some("single-unknown-input"),
            step_ranks: Some(&[1, 1, 1, 1]),
            final_rank: 1,
            m_star: Some(2),
            observable: Some(false),
            unobs_dim: Some(2),
            verdicts: &[("r", false)],
            ..UNPINNED
        },
    },
    Example {
        name: "unicycle-case4",
        summary: "polar unicycle, bearing output, speed known, turn rate unknown",
        text: include_str!("../../../models/unicycle-case4.sys"),
        expected: Expected {
            method: Some("single-unknown-input"),
            step_ranks: Some(&[1, 2, 2]),
            final_rank: 2,
            m_star: Some(1),
            m_prime: Some(0),
            special_case: Some(true),
            observable: Some(false),
            unobs_dim: Some(1),
            verdicts: &[("r", true)],
            ..UNPINNED
        },
    },
    Example {
        name: "unicycle-case5",
        summary: "polar unicycle, polar-angle output, turn rate known, speed unknown",
        text: include_str!("../../../models/unicycle-case5.sys"),
        expected: Expected {
            method: Some("single-unknown-input"),
            step_ranks: Some(&[1, 1, 2, 2]),
            final_rank: 2,
            m_star: Some(2),
            observable: Some(false),
            unobs_dim: Some(1),
            verdicts: &[("r", false), ("phi", true), ("theta", true)],
            ..UNPINNED
        },
    },
    Example {
        name: "unicycle-case6",
        summary: "polar unicycle, polar-angle output, speed known, turn rate unknown",
        text: include_str!("../../../models/unicycle-case6.sys"),
        expected: Expected {
            method: Some("single-unknown-input"),
            step_ranks: Some(&[2, 3]),
            final_rank: 3,
            m_star: Some(1),
            observable: Some(true),
            unobs_dim: Some(0),
            ..UNPINNED
        },
    },
    Example {
        name: "disturbance-known-r",
        summary: "disturbed unicycle, known push direction, squared-range output",
        text: include_str!("../../../models/disturbance-known-r.sys"),
        expected: Expected {
            method: Some("single-unknown-input"),
            final_rank: 3,
            observable: Some(true),
            unobs_dim: Some(0),
            ..UNPINNED
        },
    },
    Example {
        name: "disturbance-known-beta",
        summary: "disturbed unicycle, known push direction, bearing-tangent output",
        text: include_str!("../../../models/disturbance-known-beta.sys"),
        expected: Expected {
            method: Some("single-unknown-input"),
            final_rank: 3,
            observable: Some(true),
            unobs_dim: Some(0),
            ..UNPINNED
        },
    },
    Example {
        name: "disturbance-known-phi",
        summary: "disturbed unicycle, known push direction, polar-tangent output",
        text: include_str!("../../../models/disturbance-known-phi.sys"),
        expected: Expected {
            method: Some("single-unknown-input"),
            final_rank: 3,
            observable: Some(true),
            unobs_dim: Some(0),
            ..UNPINNED
        },
    },
    Example {
        name: "disturbance-unknown-r",
        summary: "disturbed unicycle, push direction in the state, squared-range output",
        text: include_str!("../../../models/disturbance-unknown-r.sys"),
        expected: Expected {
            method: Some("single-unknown-input"),
            final_rank: 3,
            observable: Some(false),
            unobs_dim: Some(1),
            verdicts: &[
                ("x_v", false),
                ("y_v", false),
                ("theta", false),
                ("gamma", false),
            ],
            ..UNPINNED
        },
    },
    Example {
        name: "disturbance-unknown-beta",
        summary: "disturbed unicycle, push direction in the state, bearing-tangent output",
        text: include_str!("../../../models/disturbance-unknown-beta.sys"),
        expected: Expected {
            method: Some("single-unknown-input"),
            final_rank: 3,
            observable: Some(false),
            unobs_dim: Some(1),
            ..UNPINNED
        },
    },
    Example {
        name: "disturbance-unknown-phi",
        summary: "disturbed unicycle, push direction in the state, polar-tangent output",
        text: include_str!("../../../models/disturbance-unknown-phi.sys"),
        expected: Expected {
            method: Some("single-unknown-input"),
            final_rank: 4,
            observable: Some(true),
            unobs_dim: Some(0),
            ..UNPINNED
        },
    },
    Example {
        name: "vehicle3d",
        summary: "3D vehicle with one feature, wind of unknown magnitude along a known axis",
        text: include_str!("../../../models/vehicle3d.sys"),
        expected: Expected {
            method: Some("single-unknown-input"),
            step_ranks: Some(&[3, 5, 6, 6]),
            final_rank: 6,
            m_star: Some(2),
            m_prime: Some(0),
            special_case: Some(true),
            observable: Some(false),
            unobs_dim: Some(1),
            ..UNPINNED
        },
    },
    Example {
        name: "vehicle3d-nowind",
        summary: "3D vehicle with one feature, still air, every input measured",
        text: include_str!("../../../models/vehicle3d-nowind.sys"),
        expected: Expected {
            method: Some("rank-condition"),
            step_ranks: Some(&[3, 4, 4]),
            final_rank: 4,
            observable: Some(false),
            unobs_dim: Some(3),
            ..UNPINNED
        },
    },
    Example {
        name: "vio2d-calibrated",
        summary: "planar visual-inertial rig, calibrated; needs canonization",
        text: include_str!("../../../models/vio2d-calibrated.sys"),
        expected: Expected {
            method: Some("general"),
            step_ranks: Some(&[2, 3, 6, 6]),
            final_rank: 6,
            m_star: Some(2),
            observable: Some(false),
            unobs_dim: Some(1),
            augmentations: Some(2),
            extra_symmetries: &[&[0, 1, 0, 1, 1, 0, 0]],
            ..UNPINNED
        },
    },
    Example {
        name: "vio2d-uncalibrated",
        summary: "planar visual-inertial rig, biased and uncalibrated; directly canonic",
        text: include_str!("../../../models/vio2d-uncalibrated.sys"),
        expected: Expected {
            method: Some("general"),
            step_ranks: Some(&[2, 3, 7, 8, 8]),
            final_rank: 8,
            m_star: Some(3),
            m_prime: Some(3),
            observable: Some(false),
            unobs_dim: Some(1),
            augmentations: Some(0),
            nonvanishing_t: Some(11),
            ..UNPINNED
        },
    },
    Example {
        name: "vio3d-calibrated",
        summary: "spatial visual-inertial rig, calibrated, one feature, unknown gravity",
        text: include_str!("../../../models/vio3d-calibrated.sys"),
        expected: Expected {
            method: Some("general"),
            step_ranks: Some(&[6, 6, 8, 10, 10]),
            final_rank: 10,
            m_star: Some(3),
            observable: Some(false),
            unobs_dim: Some(1),
            augmentations: Some(0),
            ..UNPINNED
        },
    },
    Example {
        name: "vio3d-uncalibrated",
        summary: "spatial visual-inertial rig with unknown camera mounting; heaviest example",
        text: include_str!("../../../models/vio3d-uncalibrated.sys"),
        expected: Expected {
            method: Some("general"),
            step_ranks: Some(&[7, 7, 10, 13, 13]),
            final_rank: 13,
            m_star: Some(3),
            observable: Some(false),
            unobs_dim: Some(2),
            augmentations: Some(0),
            nonvanishing_t: Some(63),
            ..UNPINNED
        },
    },
];

pub fn find(name: &str) -> Option<&'static Example> {
    EXAMPLES.iter().find(|e| e.name == name)
}

pub fn parse(ex: &Example) -> Result<Model, ModelError> {
    parse_model(ex.text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_example_parses_and_matches_its_declared_shape() {
        for ex in EXAMPLES {
            let m = parse(ex).unwrap_or_else(|e| panic!("{}: {e}", ex.name));
            assert!(!m.outputs.is_empty(), "{} has no outputs", ex.name);
            for (name, _) in ex.expected.verdicts {
                assert!(
                    m.state_names().contains(name),
                    "{}: pinned verdict for unknown state {name}",
                    ex.name
                );
            }
            if ex.expected.augmentations == Some(0) {
                for s in ex.expected.extra_symmetries {
                    assert_eq!(s.len(), m.n(), "{}: symmetry arity", ex.name);
                }
            }
        }
    }

    #[test]
    fn names_are_unique_and_findable() {
        for ex in EXAMPLES {
            assert!(std::ptr::eq(find(ex.name).unwrap(), ex));
        }
        assert!(find("no-such-model").is_none());
    }

    #[test]
    fn expected_ranks_are_nondecreasing_and_converged() {
        for ex in EXAMPLES {
            if let Some(ranks) = ex.expected.step_ranks {
                assert!(
                    ranks.windows(2).all(|w| w[1] >= w[0]),
                    "{}: rank sequence must not drop",
                    ex.name
                );
                assert_eq!(*ranks.last().unwrap(), ex.expected.final_rank, "{}", ex.name);
            }
        }
    }
}
