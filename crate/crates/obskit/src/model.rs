//! System models: dynamics affine in known and unknown inputs.
//!
//!   ẋ = g⁰(x) + Σᵢ f^i(x)·uᵢ + Σⱼ g^j(x)·wⱼ,   y_k = h_k(x)
//!
//! The uᵢ are known (measured) inputs, the wⱼ unknown ones. Parameters are
//! sampled like state variables but never differentiated.

use crate::expr::{Expr, SymId, SymbolTable};
use crate::span::{self, SamplePlan};

/// A named output function.
#[derive(Debug, Clone)]
pub struct Output {
    pub name: String,
    pub expr: Expr,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub table: SymbolTable,
    /// State variables in declaration order; differentials are taken with
    /// respect to these only.
    pub states: Vec<SymId>,
    /// Known constants, sampled but excluded from differentials.
    pub params: Vec<SymId>,
    pub known_inputs: Vec<String>,
    pub unknown_inputs: Vec<String>,
    /// g⁰; all zero when the model has no drift.
    pub drift: Vec<Expr>,
    /// One field per known input, in `known_inputs` order.
    pub f: Vec<Vec<Expr>>,
    /// One field per unknown input, in `unknown_inputs` order.
    pub g: Vec<Vec<Expr>>,
    pub outputs: Vec<Output>,
    /// Sampling boxes overriding the default, as (symbol, lo, hi).
    pub ranges: Vec<(SymId, f64, f64)>,
    /// Candidate continuous symmetries to verify against the result.
    pub symmetries: Vec<Vec<Expr>>,
}

/// Which analysis route a model takes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SystemClass {
    /// No unknown inputs: plain rank-condition filtration.
    KnownInputsOnly,
    /// One unknown input, zero drift: the direct single-input method.
    SingleDriftless,
    /// Everything else goes through canonization and the tensor machinery.
    General,
}

impl Model {
    pub fn n(&self) -> usize {
        self.states.len()
    }

    pub fn m_u(&self) -> usize {
        self.known_inputs.len()
    }

    pub fn m_w(&self) -> usize {
        self.unknown_inputs.len()
    }

    pub fn state_names(&self) -> Vec<&str> {
        self.states.iter().map(|&s| self.table.name(s)).collect()
    }

    /// Sampling plan covering every interned symbol, with the model's range
    /// hints applied.
    pub fn plan(&self, seed: u64) -> SamplePlan {
        let mut p = SamplePlan::new(seed, self.table.len());
        for &(s, lo, hi) in &self.ranges {
            p.ranges[s as usize] = (lo, hi);
        }
        p
    }

    /// Guard expressions from every field and output of the model. Callers
    /// extend this set as derived quantities introduce new denominators.
    pub fn base_guards(&self) -> Vec<Expr> {
        let all = self
            .drift
            .iter()
            .chain(self.f.iter().flatten())
            .chain(self.g.iter().flatten())
            .chain(self.outputs.iter().map(|o| &o.expr))
            .chain(self.symmetries.iter().flatten());
        span::guards_of(all)
    }

    /// True when the drift vanishes, structurally or numerically at the
    /// given sample points.
    pub fn is_driftless(&self, pts: &[Vec<f64>], tol: f64) -> bool {
        self.drift.iter().all(|e| e.is_zero()) || span::numerically_zero_field(&self.drift, pts, tol)
    }

    pub fn classify(&self, pts: &[Vec<f64>], tol: f64) -> SystemClass {
        if self.m_w() == 0 {
            SystemClass::KnownInputsOnly
        } else if self.m_w() == 1 && self.is_driftless(pts, tol) {
            SystemClass::SingleDriftless
        } else {
            SystemClass::General
        }
    }

    /// All dynamics fields in one list: drift, then f's, then g's.
    pub fn all_fields(&self) -> Vec<&Vec<Expr>> {
        std::iter::once(&self.drift)
            .chain(self.f.iter())
            .chain(self.g.iter())
            .collect()
    }

    pub fn zero_field(&self) -> Vec<Expr> {
        vec![Expr::zero(); self.n()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modelfile::parse_model;

    const UNI: &str = "\
state r phi theta
known_input u
unknown_input w
f u = cos(theta - phi), sin(theta - phi)/r, 0
g w = 0, 0, 1
output range = r
";

    #[test]
    fn classify_routes() {
        let m = parse_model(UNI).unwrap();
        let plan = m.plan(1);
        let pts = plan.sample(0, &m.base_guards()).unwrap();
        assert_eq!(m.classify(&pts, 1e-9), SystemClass::SingleDriftless);

        let known_only = parse_model(
            "state x\nknown_input u\nf u = 1\noutput y = x\n",
        )
        .unwrap();
        let pts2 = known_only.plan(1).sample(0, &[]).unwrap();
        assert_eq!(
            known_only.classify(&pts2, 1e-9),
            SystemClass::KnownInputsOnly
        );

        let with_drift = parse_model(
            "state x\nunknown_input w\ndrift = x\ng w = 1\noutput y = x\n",
        )
        .unwrap();
        let pts3 = with_drift.plan(1).sample(0, &[]).unwrap();
        assert_eq!(with_drift.classify(&pts3, 1e-9), SystemClass::General);
    }

    #[test]
    fn plan_applies_range_hints() {
        let m = parse_model(&format!("{UNI}range r 1.2 2\n")).unwrap();
        let plan = m.plan(7);
        let r = m.table.get("r").unwrap() as usize;
        assert_eq!(plan.ranges[r], (1.2, 2.0));
        let theta = m.table.get("theta").unwrap() as usize;
        assert_eq!(plan.ranges[theta], (-2.0, 2.0));
    }

    #[test]
    fn guards_include_field_denominators() {
        let m = parse_model(UNI).unwrap();
        let guards = m.base_guards();
        // sin(theta - phi)/r contributes its denominator r
        let r = Expr::sym(m.table.get("r").unwrap());
        assert!(guards.contains(&r));
    }
}
