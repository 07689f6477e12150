//! Deciding weak local observability.
//!
//! Three routes build the observable codistribution Ω as a filtration of
//! symbolic covectors, pruned by numeric membership at sampled points:
//!
//! * [`orc`] — every input known: Ω grows by Lie derivatives along the
//!   drift and the known-input fields until the rank stalls.
//! * [`omega_single`] — one unknown input, no drift: the recursion also
//!   moves along the normalized unknown field g/L¹_g and the bracket
//!   family φ, and stops only once the differential of the key scalar τ
//!   has been absorbed.
//! * [`omega_general`] — several unknown inputs (drift allowed), driven by
//!   the μ/ν input tensors, the mixed fields ĝ^α, and the three-index
//!   tensor T whose differentials gate convergence.
//!
//! [`extended_codistribution`] cross-checks all of them on the state
//! augmented with the unknown inputs and their derivatives.

use crate::expr::{gradient, Expr, SymId};
use crate::lie::{extended_bracket, is_zero_field, lie_bracket, lie_covector, lie_scalar};
use crate::model::{Model, Output};
use crate::span::{self, SamplePlan, SpanError};
use std::collections::{HashMap, HashSet};
use std::time::Instant;
use thiserror::Error;

/// Magnitudes below this at every sample point count as identically zero.
pub(crate) const ZERO_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ObsError {
    #[error(transparent)]
    Span(#[from] SpanError),
    #[error("no rank convergence within {bound} steps (last rank {last_rank}); \
             the theory bounds convergence by n+2, so this points at tolerances")]
    NoConvergence { bound: usize, last_rank: usize },
    #[error("expression grew to {nodes} nodes (cap {cap}) while building {context}")]
    ExprCap {
        nodes: usize,
        cap: usize,
        context: String,
    },
    #[error("input tensor is singular at the sample points for the selected functions")]
    SingularMu,
    #[error("{0}")]
    Precondition(String),
}

/// Knobs shared by all analysis routes.
#[derive(Debug, Clone)]
pub struct AnalysisOpts {
    /// Ceiling on filtration steps; `None` means the n+2 theory bound.
    pub max_steps: Option<usize>,
    /// How deep the output re-selection searches iterated Lie derivatives.
    pub depth_cap: usize,
    /// Node-count cap guarding against expression swell.
    pub expr_cap: usize,
}

impl Default for AnalysisOpts {
    fn default() -> Self {
        AnalysisOpts {
            max_steps: None,
            depth_cap: 6,
            expr_cap: 200_000,
        }
    }
}

/// One filtration step.
#[derive(Debug, Clone)]
pub struct StepInfo {
    pub m: usize,
    pub rank: usize,
    /// Provenance labels of the generators this step contributed.
    pub new_generators: Vec<String>,
    pub secs: f64,
}

/// Everything an analysis run decides.
#[derive(Debug, Clone)]
pub struct AnalysisReport {
    /// Which route ran: "rank-condition", "single-unknown-input", "general".
    pub method: String,
    pub steps: Vec<StepInfo>,
    pub special_case: bool,
    /// First step whose codistribution absorbs every key differential
    /// (Dτ, or all DT components); `Some(0)` in the special case.
    pub m_prime: Option<usize>,
    /// Step at which the filtration provably stabilized.
    pub m_star: Option<usize>,
    pub converged: bool,
    /// Names of the functions driving the unknown-input machinery.
    pub selected: Vec<String>,
    /// Exactly the functions whose differentials seeded Ω₀ — the outputs
    /// of the system as analyzed (used by the extended-state oracle).
    pub analysis_outputs: Vec<(String, Expr)>,
    /// Unknown inputs that provably cannot affect any output.
    pub spurious: Vec<String>,
    /// Per state component: is its differential inside Ω*?
    pub verdicts: Vec<(String, bool)>,
    pub observable: bool,
    pub unobs_dim: usize,
    /// Basis of the orthogonal distribution at one sample point.
    pub numeric_symmetry: Vec<Vec<f64>>,
    /// Outcome per declared candidate symmetry, in declaration order.
    pub verified_symmetries: Vec<bool>,
    /// Generators of Ω*.
    pub omega: Vec<Vec<Expr>>,
    /// Generator snapshots per step, for cross-checks.
    pub omega_steps: Vec<Vec<Vec<Expr>>>,
}

impl AnalysisReport {
    pub fn rank(&self) -> usize {
        self.steps.last().map(|s| s.rank).unwrap_or(0)
    }
}

/// A span of covectors with its generic rank.
#[derive(Debug, Clone)]
pub struct Codistribution {
    pub gens: Vec<Vec<Expr>>,
    pub rank: usize,
}

fn cap_expr(e: &Expr, cap: usize, context: &str) -> Result<(), ObsError> {
    if e.nodes() > cap {
        return Err(ObsError::ExprCap {
            nodes: e.nodes(),
            cap,
            context: context.to_string(),
        });
    }
    Ok(())
}

fn cap_field(w: &[Expr], cap: usize, context: &str) -> Result<(), ObsError> {
    for c in w {
        cap_expr(c, cap, context)?;
    }
    Ok(())
}

/// Growing set of covector generators, re-sampled each step so every
/// guard (old and new) holds at the evaluation points. Candidates that
/// already lie in the span are dropped, which keeps the generator count
/// near the rank; this is sound because the filtration only ever grows.
pub(crate) struct Filtration<'a> {
    pub(crate) plan: &'a SamplePlan,
    pub(crate) guards: Vec<Expr>,
    pub(crate) seen: HashSet<u64>,
    pub(crate) ws: Vec<Vec<Expr>>,
    pub(crate) labels: Vec<String>,
    pub(crate) pts: Vec<Vec<f64>>,
    pub(crate) round: u64,
}

impl<'a> Filtration<'a> {
    pub(crate) fn new(plan: &'a SamplePlan, base_guards: Vec<Expr>) -> Filtration<'a> {
        let mut seen = HashSet::new();
        let mut guards = Vec::new();
        for g in base_guards {
            if seen.insert(g.hash()) {
                guards.push(g);
            }
        }
        Filtration {
            plan,
            guards,
            seen,
            ws: Vec::new(),
            labels: Vec::new(),
            pts: Vec::new(),
            round: 0,
        }
    }

    /// Keep `e` itself bounded away from zero at the sample points.
    pub(crate) fn require_nonzero(&mut self, e: &Expr) {
        if !e.is_zero() && self.seen.insert(e.hash()) {
            self.guards.push(e.clone());
        }
    }

    /// Pick up the guards (denominators and friends) hiding inside `e`.
    pub(crate) fn note(&mut self, e: &Expr) {
        span::collect_guards(e, &mut self.guards, &mut self.seen);
    }

    pub(crate) fn note_field(&mut self, w: &[Expr]) {
        for c in w {
            self.note(c);
        }
    }

    pub(crate) fn resample(&mut self) -> Result<(), SpanError> {
        self.round += 1;
        self.pts = self.plan.sample(self.round, &self.guards)?;
        Ok(())
    }

    /// Register the candidates' guards and draw fresh points for the step.
    pub(crate) fn step_begin(&mut self, cands: &[(Vec<Expr>, String)]) -> Result<(), SpanError> {
        for (w, _) in cands {
            self.note_field(w);
        }
        self.resample()
    }

    pub(crate) fn rank(&self) -> Result<usize, SpanError> {
        if self.ws.is_empty() {
            return Ok(0);
        }
        span::generic_rank(&self.ws, &self.pts, self.plan.rank_tol)
    }

    pub(crate) fn add(&mut self, w: Vec<Expr>, label: String) -> Result<bool, SpanError> {
        if is_zero_field(&w) || span::numerically_zero_field(&w, &self.pts, ZERO_TOL) {
            return Ok(false);
        }
        if !self.ws.is_empty()
            && span::contains(&self.ws, &w, &self.pts, self.plan.membership_tol)?
        {
            return Ok(false);
        }
        self.ws.push(w);
        self.labels.push(label);
        Ok(true)
    }

    pub(crate) fn contains(&self, w: &[Expr]) -> Result<bool, SpanError> {
        contains_in(&self.ws, w, &self.pts, self.plan.membership_tol)
    }
}

pub(crate) fn contains_in(
    gens: &[Vec<Expr>],
    w: &[Expr],
    pts: &[Vec<f64>],
    tol: f64,
) -> Result<bool, SpanError> {
    if is_zero_field(w) || span::numerically_zero_field(w, pts, ZERO_TOL) {
        return Ok(true);
    }
    if gens.is_empty() {
        return Ok(false);
    }
    span::contains(gens, w, pts, tol)
}

/// Guarded point source for one-off numeric decisions (selection search,
/// special-case screens, singularity probes). Guards accumulate; every
/// draw uses a fresh round.
pub(crate) struct Probe<'a> {
    plan: &'a SamplePlan,
    guards: Vec<Expr>,
    seen: HashSet<u64>,
    round: u64,
}

impl<'a> Probe<'a> {
    pub(crate) fn new(plan: &'a SamplePlan, base_guards: Vec<Expr>, salt: u64) -> Probe<'a> {
        let mut seen = HashSet::new();
        let mut guards = Vec::new();
        for g in base_guards {
            if seen.insert(g.hash()) {
                guards.push(g);
            }
        }
        Probe {
            plan,
            guards,
            seen,
            round: salt,
        }
    }

    pub(crate) fn pts(&mut self, watch: &[&Expr]) -> Result<Vec<Vec<f64>>, SpanError> {
        for e in watch {
            span::collect_guards(e, &mut self.guards, &mut self.seen);
        }
        self.round += 1;
        self.plan.sample(self.round, &self.guards)
    }

    pub(crate) fn pts_for_field(&mut self, w: &[Expr]) -> Result<Vec<Vec<f64>>, SpanError> {
        for e in w {
            span::collect_guards(e, &mut self.guards, &mut self.seen);
        }
        self.round += 1;
        self.plan.sample(self.round, &self.guards)
    }
}

fn lie_candidates(
    ws: &[Vec<Expr>],
    labels: &[String],
    upto: usize,
    fields: &[(String, Vec<Expr>)],
    vars: &[SymId],
) -> Vec<(Vec<Expr>, String)> {
    let mut out = Vec::new();
    for gi in 0..upto {
        for (fl, f) in fields {
            let w = lie_covector(&ws[gi], f, vars);
            out.push((w, format!("L_{} {}", fl, labels[gi])));
        }
    }
    out
}

/// Store a candidate only if it grows the span; the node cap applies to
/// what is kept, not to candidates the span already absorbs — those are
/// discarded whatever their size, which lets a converged filtration prove
/// its own stall without tripping over the swell of the final derivatives.
fn add_capped(
    filt: &mut Filtration<'_>,
    w: Vec<Expr>,
    label: String,
    cap: usize,
) -> Result<bool, ObsError> {
    let nodes = w.iter().map(|c| c.nodes()).max().unwrap_or(0);
    if !filt.add(w, label.clone())? {
        return Ok(false);
    }
    if nodes > cap {
        return Err(ObsError::ExprCap {
            nodes,
            cap,
            context: label,
        });
    }
    Ok(true)
}

#[allow(clippy::too_many_arguments)]
fn finalize(
    model: &Model,
    method: &str,
    filt: Filtration<'_>,
    steps: Vec<StepInfo>,
    omega_steps: Vec<Vec<Vec<Expr>>>,
    special_case: bool,
    m_prime: Option<usize>,
    m_star: Option<usize>,
    analysis_outputs: Vec<(String, Expr)>,
    selected: Vec<String>,
    spurious: Vec<String>,
) -> Result<AnalysisReport, ObsError> {
    let n = model.n();
    let rank = steps.last().map(|s| s.rank).unwrap_or(0);
    let mut verdicts = Vec::with_capacity(n);
    for (j, name) in model.state_names().iter().enumerate() {
        let mut e = model.zero_field();
        e[j] = Expr::one();
        verdicts.push((name.to_string(), filt.contains(&e)?));
    }
    let numeric_symmetry = match filt.pts.first() {
        Some(p) if !filt.ws.is_empty() => {
            span::orthogonal_at(&filt.ws, p, n, filt.plan.rank_tol)
        }
        _ => Vec::new(),
    };
    let verified_symmetries = model
        .symmetries
        .iter()
        .map(|s| span::verify_symmetry(&filt.ws, s, &filt.pts, filt.plan.membership_tol))
        .collect::<Result<Vec<bool>, SpanError>>()?;
    Ok(AnalysisReport {
        method: method.to_string(),
        steps,
        special_case,
        m_prime,
        m_star,
        converged: m_star.is_some(),
        selected,
        analysis_outputs,
        spurious,
        verdicts,
        observable: rank == n,
        unobs_dim: n - rank,
        numeric_symmetry,
        verified_symmetries,
        omega: filt.ws,
        omega_steps,
    })
}

/// Rank-condition filtration for systems whose inputs are all known.
/// Unknown-input fields, if present on the model, are ignored — that is
/// exactly the fallback used when an unknown input turns out spurious.
pub fn orc(
    model: &Model,
    plan: &SamplePlan,
    opts: &AnalysisOpts,
) -> Result<AnalysisReport, ObsError> {
    let vars: &[SymId] = &model.states;
    let n = model.n();
    let analysis_outputs: Vec<(String, Expr)> = model
        .outputs
        .iter()
        .map(|o| (o.name.clone(), o.expr.clone()))
        .collect();

    let mut filt = Filtration::new(plan, model.base_guards());
    let mut steps = Vec::new();
    let mut omega_steps = Vec::new();

    let t0 = Instant::now();
    let cands0: Vec<(Vec<Expr>, String)> = analysis_outputs
        .iter()
        .map(|(nm, e)| (gradient(e, vars), format!("D {nm}")))
        .collect();
    filt.step_begin(&cands0)?;
    let mut new0 = Vec::new();
    for (w, l) in cands0 {
        if add_capped(&mut filt, w, l.clone(), opts.expr_cap)? {
            new0.push(l);
        }
    }
    let r0 = filt.rank()?;
    steps.push(StepInfo {
        m: 0,
        rank: r0,
        new_generators: new0,
        secs: t0.elapsed().as_secs_f64(),
    });
    omega_steps.push(filt.ws.clone());

    let mut fields: Vec<(String, Vec<Expr>)> = Vec::new();
    if !is_zero_field(&model.drift) {
        fields.push(("g0".to_string(), model.drift.clone()));
    }
    for (i, f) in model.f.iter().enumerate() {
        fields.push((format!("f[{}]", model.known_inputs[i]), f.clone()));
    }

    let bound = opts.max_steps.unwrap_or(n + 2);
    let mut m_star = if r0 == n { Some(0) } else { None };
    if m_star.is_none() {
        for m in 1..=bound {
            let t = Instant::now();
            let cands =
                lie_candidates(&filt.ws, &filt.labels, filt.ws.len(), &fields, vars);
            filt.step_begin(&cands)?;
            let prev = filt.rank()?;
            let mut added = Vec::new();
            for (w, l) in cands {
                if add_capped(&mut filt, w, l.clone(), opts.expr_cap)? {
                    added.push(l);
                }
            }
            let rank = filt.rank()?;
            steps.push(StepInfo {
                m,
                rank,
                new_generators: added,
                secs: t.elapsed().as_secs_f64(),
            });
            omega_steps.push(filt.ws.clone());
            if rank == prev {
                m_star = Some(m - 1);
                break;
            }
            if rank == n {
                m_star = Some(m);
                break;
            }
        }
    }
    if m_star.is_none() {
        return Err(ObsError::NoConvergence {
            bound,
            last_rank: steps.last().map(|s| s.rank).unwrap_or(0),
        });
    }
    finalize(
        model,
        "rank-condition",
        filt,
        steps,
        omega_steps,
        false,
        None,
        m_star,
        analysis_outputs,
        Vec::new(),
        Vec::new(),
    )
}

enum Chosen {
    AsOutput(usize),
    Derived { expr: Expr, label: String },
    Spurious,
}

/// Breadth-first search for a function whose first-order Lie derivative
/// along the unknown field is generically nonzero: the declared outputs
/// first, then their iterated derivatives along the known-input fields,
/// ordered by depth, output, then input.
fn select_single(
    model: &Model,
    plan: &SamplePlan,
    opts: &AnalysisOpts,
) -> Result<Chosen, ObsError> {
    let vars: &[SymId] = &model.states;
    let g = &model.g[0];
    let mut probe = Probe::new(plan, model.base_guards(), 1 << 32);
    let mut layer: Vec<(Expr, String)> = model
        .outputs
        .iter()
        .map(|o| (o.expr.clone(), o.name.clone()))
        .collect();
    for depth in 0..=opts.depth_cap {
        for (i, (e, label)) in layer.iter().enumerate() {
            let l1 = lie_scalar(e, g, vars);
            if l1.is_zero() {
                continue;
            }
            let pts = probe.pts(&[e, &l1])?;
            if !span::numerically_zero(&l1, &pts, ZERO_TOL) {
                return Ok(if depth == 0 {
                    Chosen::AsOutput(i)
                } else {
                    Chosen::Derived {
                        expr: e.clone(),
                        label: label.clone(),
                    }
                });
            }
        }
        if depth == opts.depth_cap {
            break;
        }
        let mut next = Vec::new();
        for (e, label) in &layer {
            for (i, f) in model.f.iter().enumerate() {
                let d = lie_scalar(e, f, vars);
                cap_expr(&d, opts.expr_cap, "output selection")?;
                if d.is_zero() {
                    continue;
                }
                let pts = probe.pts(&[&d])?;
                if span::numerically_zero(&d, &pts, ZERO_TOL) {
                    continue;
                }
                next.push((d, format!("L_f[{}] {}", model.known_inputs[i], label)));
            }
        }
        if next.is_empty() {
            break;
        }
        layer = next;
    }
    Ok(Chosen::Spurious)
}

/// One member of the bracket family φ.
#[derive(Debug, Clone)]
pub struct PhiEntry {
    /// Which known input seeded the chain.
    pub input: usize,
    /// Bracket slots applied so far (always 1 in the single-input family).
    pub index: Vec<usize>,
    pub field: Vec<Expr>,
    /// Zero fields are kept for bookkeeping but never expanded.
    pub zero: bool,
}

#[derive(Debug, Clone)]
pub struct PhiFamily {
    pub levels: Vec<Vec<PhiEntry>>,
}

fn phi_level0(model: &Model) -> Vec<PhiEntry> {
    model
        .f
        .iter()
        .enumerate()
        .map(|(i, f)| PhiEntry {
            input: i,
            index: Vec::new(),
            field: f.clone(),
            zero: is_zero_field(f),
        })
        .collect()
}

fn extend_phi_single(
    levels: &mut Vec<Vec<PhiEntry>>,
    g: &[Expr],
    l1: &Expr,
    vars: &[SymId],
    cap: usize,
) -> Result<(), ObsError> {
    let last = levels.last().expect("level 0 present");
    let mut next = Vec::new();
    for e in last {
        if e.zero {
            continue;
        }
        let br = lie_bracket(&e.field, g, vars);
        let field: Vec<Expr> = br
            .into_iter()
            .map(|c| {
                if c.is_zero() {
                    c
                } else {
                    Expr::div(c, l1.clone())
                }
            })
            .collect();
        cap_field(&field, cap, "phi family")?;
        let zero = is_zero_field(&field);
        let mut index = e.index.clone();
        index.push(1);
        next.push(PhiEntry {
            input: e.input,
            index,
            field,
            zero,
        });
    }
    levels.push(next);
    Ok(())
}

/// The single-unknown-input bracket family: level 0 is the known-input
/// fields, and each next level brackets against g and rescales by L¹_g.
pub fn phi_family_single(model: &Model, h: &Expr, depth: usize) -> Result<PhiFamily, ObsError> {
    let vars: &[SymId] = &model.states;
    let g = &model.g[0];
    let l1 = lie_scalar(h, g, vars);
    let mut levels = vec![phi_level0(model)];
    for _ in 0..depth {
        extend_phi_single(&mut levels, g, &l1, vars, usize::MAX)?;
    }
    Ok(PhiFamily { levels })
}

/// Does every bracket-family direction annihilate L¹_g? Checked level by
/// level until the span of the family stops growing; the first nonzero
/// derivative (typically already along an f^i) settles the question.
fn special_single(
    model: &Model,
    g: &[Expr],
    l1: &Expr,
    plan: &SamplePlan,
    opts: &AnalysisOpts,
) -> Result<bool, ObsError> {
    let vars: &[SymId] = &model.states;
    let dl1 = gradient(l1, vars);
    if is_zero_field(&dl1) {
        return Ok(true);
    }
    let mut probe = Probe::new(plan, model.base_guards(), 1 << 33);
    probe.pts(&[l1])?;
    let mut fields: Vec<Vec<Expr>> = model
        .f
        .iter()
        .filter(|f| !is_zero_field(f))
        .cloned()
        .collect();
    if fields.is_empty() {
        return Ok(true);
    }
    let mut all: Vec<Vec<Expr>> = Vec::new();
    let mut rank_prev = 0usize;
    loop {
        for f in &fields {
            let chi = lie_scalar(l1, f, vars);
            if chi.is_zero() {
                continue;
            }
            let mut watch: Vec<&Expr> = f.iter().collect();
            watch.push(&chi);
            let pts = probe.pts(&watch)?;
            if !span::numerically_zero(&chi, &pts, ZERO_TOL) {
                return Ok(false);
            }
        }
        all.extend(fields.iter().cloned());
        let pts = probe.pts(&[])?;
        let rank = span::generic_rank(&all, &pts, plan.rank_tol)?;
        if rank == rank_prev {
            return Ok(true);
        }
        rank_prev = rank;
        let mut next = Vec::new();
        for f in &fields {
            let br = lie_bracket(f, g, vars);
            let fld: Vec<Expr> = br
                .into_iter()
                .map(|c| {
                    if c.is_zero() {
                        c
                    } else {
                        Expr::div(c, l1.clone())
                    }
                })
                .collect();
            cap_field(&fld, opts.expr_cap, "special-case screen")?;
            if is_zero_field(&fld) {
                continue;
            }
            let pts = probe.pts_for_field(&fld)?;
            if span::numerically_zero_field(&fld, &pts, ZERO_TOL) {
                continue;
            }
            next.push(fld);
        }
        if next.is_empty() {
            return Ok(true);
        }
        fields = next;
    }
}

/// Full analysis for one unknown input and zero drift.
pub fn omega_single(
    model: &Model,
    plan: &SamplePlan,
    opts: &AnalysisOpts,
) -> Result<AnalysisReport, ObsError> {
    let vars: &[SymId] = &model.states;
    let n = model.n();
    if model.m_w() != 1 {
        return Err(ObsError::Precondition(
            "the single-unknown-input method needs exactly one unknown input".into(),
        ));
    }
    {
        let pts = plan.sample(3, &model.base_guards())?;
        if !model.is_driftless(&pts, ZERO_TOL) {
            return Err(ObsError::Precondition(
                "the single-unknown-input method needs zero drift".into(),
            ));
        }
    }
    let g = model.g[0].clone();

    // Step 1: a function the unknown input actually reaches. If none
    // exists up to the depth cap, the input is spurious and the plain
    // rank condition (which ignores it) gives the answer.
    let (h, h_label, reselected) = match select_single(model, plan, opts)? {
        Chosen::Spurious => {
            let mut rep = orc(model, plan, opts)?;
            rep.spurious = model.unknown_inputs.clone();
            return Ok(rep);
        }
        Chosen::AsOutput(i) => (
            model.outputs[i].expr.clone(),
            model.outputs[i].name.clone(),
            false,
        ),
        Chosen::Derived { expr, label } => (expr, label, true),
    };
    let l1 = lie_scalar(&h, &g, vars);
    let dh = gradient(&h, vars);
    let ghat: Vec<Expr> = g
        .iter()
        .map(|c| {
            if c.is_zero() {
                c.clone()
            } else {
                Expr::div(c.clone(), l1.clone())
            }
        })
        .collect();

    let mut analysis_outputs: Vec<(String, Expr)> = model
        .outputs
        .iter()
        .map(|o| (o.name.clone(), o.expr.clone()))
        .collect();
    if reselected {
        analysis_outputs.push((h_label.clone(), h.clone()));
    }

    let mut filt = Filtration::new(plan, model.base_guards());
    filt.require_nonzero(&l1);
    filt.note_field(&ghat);
    filt.note_field(&dh);

    let mut steps = Vec::new();
    let mut omega_steps = Vec::new();

    // Step 2: Ω₀ from the output differentials (plus Dh if re-selected).
    let t0 = Instant::now();
    let cands0: Vec<(Vec<Expr>, String)> = analysis_outputs
        .iter()
        .map(|(nm, e)| (gradient(e, vars), format!("D {nm}")))
        .collect();
    filt.step_begin(&cands0)?;
    let mut new0 = Vec::new();
    for (w, l) in cands0 {
        if add_capped(&mut filt, w, l.clone(), opts.expr_cap)? {
            new0.push(l);
        }
    }
    let r0 = filt.rank()?;
    steps.push(StepInfo {
        m: 0,
        rank: r0,
        new_generators: new0,
        secs: t0.elapsed().as_secs_f64(),
    });
    omega_steps.push(filt.ws.clone());
    if r0 == n {
        return finalize(
            model,
            "single-unknown-input",
            filt,
            steps,
            omega_steps,
            false,
            None,
            Some(0),
            analysis_outputs,
            vec![h_label],
            Vec::new(),
        );
    }

    let mut fields: Vec<(String, Vec<Expr>)> = model
        .f
        .iter()
        .enumerate()
        .map(|(i, f)| (format!("f[{}]", model.known_inputs[i]), f.clone()))
        .collect();
    fields.push(("g~".to_string(), ghat.clone()));

    // ...and Ω₁. The φ₀ contribution L_{f^i} Dh is already covered by the
    // recursion term along f^i since Dh sits in Ω₀.
    let mut full_rank_at = None;
    {
        let t = Instant::now();
        let cands =
            lie_candidates(&filt.ws, &filt.labels, filt.ws.len(), &fields, vars);
        filt.step_begin(&cands)?;
        let mut added = Vec::new();
        for (w, l) in cands {
            if add_capped(&mut filt, w, l.clone(), opts.expr_cap)? {
                added.push(l);
            }
        }
        let rank = filt.rank()?;
        steps.push(StepInfo {
            m: 1,
            rank,
            new_generators: added,
            secs: t.elapsed().as_secs_f64(),
        });
        omega_steps.push(filt.ws.clone());
        if rank == n {
            full_rank_at = Some(1);
        }
    }
    if let Some(mstar) = full_rank_at {
        return finalize(
            model,
            "single-unknown-input",
            filt,
            steps,
            omega_steps,
            false,
            None,
            Some(mstar),
            analysis_outputs,
            vec![h_label],
            Vec::new(),
        );
    }

    // Step 3: the special case where every φ direction annihilates L¹_g;
    // there the filtration stabilizes at its first rank stall.
    let special = special_single(model, &g, &l1, plan, opts)?;

    // Step 4: τ and its differential, whose absorption gates convergence.
    let (mut m_prime, dtau) = if special {
        (Some(0), None)
    } else {
        let l2 = lie_scalar(&l1, &g, vars);
        let tau = Expr::div(l2, Expr::mul(vec![l1.clone(), l1.clone()]));
        let dt = gradient(&tau, vars);
        cap_field(&dt, opts.expr_cap, "D tau")?;
        filt.note(&tau);
        filt.note_field(&dt);
        filt.resample()?;
        let mut mp = None;
        for (j, snap) in omega_steps.iter().enumerate() {
            if contains_in(snap, &dt, &filt.pts, plan.membership_tol)? {
                mp = Some(j);
                break;
            }
        }
        (mp, Some(dt))
    };

    // Steps 5–6: iterate, tracking m′ and stopping at the first stall at
    // or past max(m′, 2).
    let mut phi_levels = vec![phi_level0(model)];
    let bound = opts.max_steps.unwrap_or(n + 2);
    let mut m_star = None;
    for m in 2..=bound + 1 {
        let t = Instant::now();
        while phi_levels.len() < m {
            extend_phi_single(&mut phi_levels, &g, &l1, vars, opts.expr_cap)?;
        }
        let mut cands =
            lie_candidates(&filt.ws, &filt.labels, filt.ws.len(), &fields, vars);
        for e in &phi_levels[m - 1] {
            if e.zero {
                continue;
            }
            let w = lie_covector(&dh, &e.field, vars);
            cands.push((
                w,
                format!(
                    "L_phi{}[{}] D {}",
                    m - 1,
                    model.known_inputs[e.input],
                    h_label
                ),
            ));
        }
        filt.step_begin(&cands)?;
        let prev = filt.rank()?;
        let mut added = Vec::new();
        for (w, l) in cands {
            if add_capped(&mut filt, w, l.clone(), opts.expr_cap)? {
                added.push(l);
            }
        }
        let rank = filt.rank()?;
        steps.push(StepInfo {
            m,
            rank,
            new_generators: added,
            secs: t.elapsed().as_secs_f64(),
        });
        omega_steps.push(filt.ws.clone());
        if m_prime.is_none() {
            if let Some(dt) = &dtau {
                if filt.contains(dt)? {
                    m_prime = Some(m);
                }
            }
        }
        if rank == n {
            m_star = Some(m);
            break;
        }
        if rank == prev {
            let settled = if special {
                true
            } else {
                m - 1 >= 2 && m_prime.is_some()
            };
            if settled {
                m_star = Some(m - 1);
                break;
            }
        }
    }
    if m_star.is_none() {
        return Err(ObsError::NoConvergence {
            bound,
            last_rank: steps.last().map(|s| s.rank).unwrap_or(0),
        });
    }
    finalize(
        model,
        "single-unknown-input",
        filt,
        steps,
        omega_steps,
        special,
        m_prime,
        m_star,
        analysis_outputs,
        vec![h_label],
        Vec::new(),
    )
}

/// The input tensors of a selection: μ holds the first-order derivatives
/// of the selected functions along drift and unknown fields, ν its
/// blockwise inverse, and ĝ^α the ν-mixed fields the general recursion
/// moves along.
#[derive(Debug, Clone)]
pub struct MuNu {
    pub mu: Vec<Vec<Expr>>,
    pub nu: Vec<Vec<Expr>>,
    pub g_hat: Vec<Vec<Expr>>,
    pub det: Expr,
}

fn bits(mask: u32) -> Vec<usize> {
    (0..32).filter(|i| mask & (1 << i) != 0).collect()
}

/// Determinant of the submatrix of `a` on the given row/column masks,
/// by cofactor expansion along the row with the most structural zeros.
/// Minors are memoized across the whole adjugate computation.
fn minor_det(
    a: &[Vec<Expr>],
    rows: u32,
    cols: u32,
    memo: &mut HashMap<(u32, u32), Expr>,
) -> Expr {
    if rows == 0 {
        return Expr::one();
    }
    if let Some(e) = memo.get(&(rows, cols)) {
        return e.clone();
    }
    let rlist = bits(rows);
    let clist = bits(cols);
    let mut rpos = 0usize;
    let mut best = usize::MAX;
    for (pos, &r) in rlist.iter().enumerate() {
        let nonzeros = clist.iter().filter(|&&c| !a[r][c].is_zero()).count();
        if nonzeros < best {
            best = nonzeros;
            rpos = pos;
        }
    }
    let r = rlist[rpos];
    let mut terms = Vec::new();
    for (cpos, &c) in clist.iter().enumerate() {
        if a[r][c].is_zero() {
            continue;
        }
        let sub = minor_det(a, rows & !(1 << r), cols & !(1 << c), memo);
        if sub.is_zero() {
            continue;
        }
        let term = Expr::mul(vec![a[r][c].clone(), sub]);
        terms.push(if (rpos + cpos) % 2 == 0 { term } else { term.neg() });
    }
    let d = Expr::add(terms);
    memo.insert((rows, cols), d.clone());
    d
}

pub(crate) fn adjugate(a: &[Vec<Expr>]) -> (Expr, Vec<Vec<Expr>>) {
    let k = a.len();
    let full: u32 = (1u32 << k) - 1;
    let mut memo = HashMap::new();
    let det = minor_det(a, full, full, &mut memo);
    let mut adj = vec![vec![Expr::zero(); k]; k];
    for (i, row) in adj.iter_mut().enumerate() {
        for (j, slot) in row.iter_mut().enumerate() {
            // adj[i][j] is the (j,i) cofactor: delete row j, column i.
            let m = minor_det(a, full & !(1 << j), full & !(1 << i), &mut memo);
            *slot = if (i + j) % 2 == 0 { m } else { m.neg() };
        }
    }
    (det, adj)
}

/// Build μ, ν and the mixed fields ĝ^α for a selection of m_w functions.
pub fn build_mu_nu(
    model: &Model,
    h_sel: &[Expr],
    plan: &SamplePlan,
) -> Result<MuNu, ObsError> {
    let mw = model.m_w();
    let vars: &[SymId] = &model.states;
    if mw == 0 || h_sel.len() != mw {
        return Err(ObsError::Precondition(format!(
            "need exactly {} selected functions, got {}",
            mw,
            h_sel.len()
        )));
    }
    let dim = mw + 1;
    let mut mu = vec![vec![Expr::zero(); dim]; dim];
    mu[0][0] = Expr::one();
    for j in 1..dim {
        mu[0][j] = lie_scalar(&h_sel[j - 1], &model.drift, vars);
        for i in 1..dim {
            mu[i][j] = lie_scalar(&h_sel[j - 1], &model.g[i - 1], vars);
        }
    }
    // An entry that vanishes identically but not structurally would poison the
    // determinant and every cofactor with dead weight, so confirm zeros at
    // guarded samples and drop them before inverting.
    let mut probe = Probe::new(plan, model.base_guards(), 1 << 34);
    let pts = {
        let mu_flat: Vec<&Expr> = mu.iter().flatten().collect();
        probe.pts(&mu_flat)?
    };
    for row in mu.iter_mut() {
        for e in row.iter_mut() {
            if !e.is_zero() && span::numerically_zero(e, &pts, ZERO_TOL) {
                *e = Expr::zero();
            }
        }
    }

    let a: Vec<Vec<Expr>> = (1..dim)
        .map(|i| (1..dim).map(|j| mu[i][j].clone()).collect())
        .collect();
    let (det, adj) = adjugate(&a);
    if span::numerically_zero(&det, &pts, ZERO_TOL) {
        return Err(ObsError::SingularMu);
    }

    let mut nu = vec![vec![Expr::zero(); dim]; dim];
    nu[0][0] = Expr::one();
    for i in 1..dim {
        for j in 1..dim {
            let cof = &adj[i - 1][j - 1];
            nu[i][j] = if cof.is_zero() {
                Expr::zero()
            } else {
                Expr::div(cof.clone(), det.clone())
            };
        }
    }
    for j in 1..dim {
        let terms: Vec<Expr> = (1..dim)
            .filter(|&k| !mu[0][k].is_zero() && !nu[k][j].is_zero())
            .map(|k| Expr::mul(vec![Expr::int(-1), mu[0][k].clone(), nu[k][j].clone()]))
            .collect();
        nu[0][j] = Expr::add(terms);
    }

    let mut g_all: Vec<&Vec<Expr>> = vec![&model.drift];
    g_all.extend(model.g.iter());
    let n = model.n();
    let mut g_hat = Vec::with_capacity(dim);
    for nu_row in nu.iter() {
        let mut field = vec![Expr::zero(); n];
        for (beta, gb) in g_all.iter().enumerate() {
            if nu_row[beta].is_zero() {
                continue;
            }
            for (slot, c) in field.iter_mut().zip(gb.iter()) {
                if c.is_zero() {
                    continue;
                }
                *slot = Expr::add(vec![
                    std::mem::replace(slot, Expr::zero()),
                    Expr::mul(vec![nu_row[beta].clone(), c.clone()]),
                ]);
            }
        }
        g_hat.push(field);
    }
    Ok(MuNu {
        mu,
        nu,
        g_hat,
        det,
    })
}

fn extend_phi_general(
    levels: &mut Vec<Vec<PhiEntry>>,
    g_all: &[Vec<Expr>],
    nu: &[Vec<Expr>],
    vars: &[SymId],
    pts: &[Vec<f64>],
    cap: usize,
) -> Result<(), ObsError> {
    let last = levels.last().expect("level 0 present");
    let mut next = Vec::new();
    for e in last {
        if e.zero {
            continue;
        }
        for (al, nu_row) in nu.iter().enumerate() {
            let field = extended_bracket(&e.field, g_all, nu_row, vars);
            let mut index = e.index.clone();
            index.push(al);
            cap_field(
                &field,
                cap,
                &format!("phi level {} index {:?}", levels.len(), index),
            )?;
            let zero = is_zero_field(&field)
                || span::numerically_zero_field(&field, pts, ZERO_TOL);
            next.push(PhiEntry {
                input: e.input,
                index,
                field,
                zero,
            });
        }
    }
    levels.push(next);
    Ok(())
}

/// The multi-input bracket family: each level applies one extended
/// bracket per Greek slot, pruning entries that vanish at the sample
/// points. With one unknown input and no drift this reduces entrywise to
/// [`phi_family_single`].
pub fn phi_family_general(
    model: &Model,
    nu: &[Vec<Expr>],
    depth: usize,
    plan: &SamplePlan,
    opts: &AnalysisOpts,
) -> Result<PhiFamily, ObsError> {
    let vars: &[SymId] = &model.states;
    let mut g_all: Vec<Vec<Expr>> = vec![model.drift.clone()];
    g_all.extend(model.g.iter().cloned());
    let mut probe = Probe::new(plan, model.base_guards(), 1 << 35);
    let nu_flat: Vec<&Expr> = nu.iter().flatten().collect();
    let pts = probe.pts(&nu_flat)?;
    let mut levels = vec![phi_level0(model)];
    for _ in 0..depth {
        extend_phi_general(&mut levels, &g_all, nu, vars, &pts, opts.expr_cap)?;
    }
    Ok(PhiFamily { levels })
}

/// T^{α,β}_γ = ν^β_η · L_{ĝ^α} μ^η_γ. The γ=0 slab is structurally zero
/// because that μ column is constant.
pub fn t_tensor(
    model: &Model,
    mu: &[Vec<Expr>],
    nu: &[Vec<Expr>],
    g_hat: &[Vec<Expr>],
) -> Vec<Vec<Vec<Expr>>> {
    let vars: &[SymId] = &model.states;
    let dim = mu.len();
    (0..dim)
        .map(|al| {
            (0..dim)
                .map(|be| {
                    (0..dim)
                        .map(|ga| {
                            let mut terms = Vec::new();
                            for eta in 0..dim {
                                if nu[be][eta].is_zero() {
                                    continue;
                                }
                                let lie = lie_scalar(&mu[eta][ga], &g_hat[al], vars);
                                if lie.is_zero() {
                                    continue;
                                }
                                terms.push(Expr::mul(vec![nu[be][eta].clone(), lie]));
                            }
                            Expr::add(terms)
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// Does every bracket-family direction annihilate every μ^α_k? Same
/// level-by-level screen as the single-input case, with extended
/// brackets.
fn special_general(
    model: &Model,
    mu: &[Vec<Expr>],
    nu: &[Vec<Expr>],
    g_all: &[Vec<Expr>],
    plan: &SamplePlan,
    opts: &AnalysisOpts,
) -> Result<bool, ObsError> {
    let vars: &[SymId] = &model.states;
    let targets: Vec<&Expr> = mu
        .iter()
        .flat_map(|row| row.iter().skip(1))
        .filter(|e| !is_zero_field(&gradient(e, vars)))
        .collect();
    if targets.is_empty() {
        return Ok(true);
    }
    let mut probe = Probe::new(plan, model.base_guards(), 1 << 36);
    probe.pts(&targets)?;
    let mut fields: Vec<Vec<Expr>> = model
        .f
        .iter()
        .filter(|f| !is_zero_field(f))
        .cloned()
        .collect();
    if fields.is_empty() {
        return Ok(true);
    }
    let mut all: Vec<Vec<Expr>> = Vec::new();
    let mut rank_prev = 0usize;
    loop {
        for f in &fields {
            for entry in &targets {
                let chi = lie_scalar(entry, f, vars);
                if chi.is_zero() {
                    continue;
                }
                let mut watch: Vec<&Expr> = f.iter().collect();
                watch.push(&chi);
                let pts = probe.pts(&watch)?;
                if !span::numerically_zero(&chi, &pts, ZERO_TOL) {
                    return Ok(false);
                }
            }
        }
        all.extend(fields.iter().cloned());
        let pts = probe.pts(&[])?;
        let rank = span::generic_rank(&all, &pts, plan.rank_tol)?;
        if rank == rank_prev {
            return Ok(true);
        }
        rank_prev = rank;
        let mut next = Vec::new();
        for f in &fields {
            for nu_row in nu {
                let fld = extended_bracket(f, g_all, nu_row, vars);
                cap_field(&fld, opts.expr_cap, "special-case screen")?;
                if is_zero_field(&fld) {
                    continue;
                }
                let pts = probe.pts_for_field(&fld)?;
                if span::numerically_zero_field(&fld, &pts, ZERO_TOL) {
                    continue;
                }
                next.push(fld);
            }
        }
        if next.is_empty() {
            return Ok(true);
        }
        fields = next;
    }
}

/// The functions driving the general analysis: `chosen` are the m_w
/// functions whose unknown-input derivatives make μ invertible, `unused`
/// are outputs the selection skipped (their differentials still seed Ω₀).
#[derive(Debug, Clone)]
pub struct SelectedFunctions {
    pub chosen: Vec<(String, Expr)>,
    pub unused: Vec<(String, Expr)>,
}

/// Full analysis for the general affine case. Requires a selection that
/// makes μ invertible — canonization provides one.
pub fn omega_general(
    model: &Model,
    sel: &SelectedFunctions,
    plan: &SamplePlan,
    opts: &AnalysisOpts,
) -> Result<AnalysisReport, ObsError> {
    let vars: &[SymId] = &model.states;
    let n = model.n();
    let mw = model.m_w();
    if mw == 0 {
        return Err(ObsError::Precondition(
            "the general method needs at least one unknown input".into(),
        ));
    }
    if sel.chosen.len() != mw {
        return Err(ObsError::Precondition(format!(
            "need exactly {} selected functions, got {}",
            mw,
            sel.chosen.len()
        )));
    }
    let hs: Vec<Expr> = sel.chosen.iter().map(|(_, e)| e.clone()).collect();
    let MuNu {
        mu,
        nu,
        g_hat,
        det,
    } = build_mu_nu(model, &hs, plan)?;

    let mut analysis_outputs: Vec<(String, Expr)> = sel.chosen.clone();
    analysis_outputs.extend(sel.unused.iter().cloned());
    let selected: Vec<String> = sel.chosen.iter().map(|(nm, _)| nm.clone()).collect();
    let dhs: Vec<(String, Vec<Expr>)> = sel
        .chosen
        .iter()
        .map(|(nm, e)| (nm.clone(), gradient(e, vars)))
        .collect();

    let mut filt = Filtration::new(plan, model.base_guards());
    filt.require_nonzero(&det);
    for row in mu.iter().chain(nu.iter()) {
        for e in row {
            filt.note(e);
        }
    }
    for f in &g_hat {
        filt.note_field(f);
    }

    let mut steps = Vec::new();
    let mut omega_steps = Vec::new();

    // Ω₀ seeds: the selected functions plus any outputs the selection
    // did not consume.
    let t0 = Instant::now();
    let cands0: Vec<(Vec<Expr>, String)> = analysis_outputs
        .iter()
        .map(|(nm, e)| (gradient(e, vars), format!("D {nm}")))
        .collect();
    filt.step_begin(&cands0)?;
    let mut new0 = Vec::new();
    for (w, l) in cands0 {
        if add_capped(&mut filt, w, l.clone(), opts.expr_cap)? {
            new0.push(l);
        }
    }
    let r0 = filt.rank()?;
    steps.push(StepInfo {
        m: 0,
        rank: r0,
        new_generators: new0,
        secs: t0.elapsed().as_secs_f64(),
    });
    omega_steps.push(filt.ws.clone());
    if r0 == n {
        return finalize(
            model, "general", filt, steps, omega_steps, false, None, Some(0),
            analysis_outputs, selected, Vec::new(),
        );
    }

    let mut fields: Vec<(String, Vec<Expr>)> = model
        .f
        .iter()
        .enumerate()
        .map(|(i, f)| (format!("f[{}]", model.known_inputs[i]), f.clone()))
        .collect();
    for (al, gh) in g_hat.iter().enumerate() {
        fields.push((format!("g~{al}"), gh.clone()));
    }

    let mut full_rank_at = None;
    {
        let t = Instant::now();
        let cands =
            lie_candidates(&filt.ws, &filt.labels, filt.ws.len(), &fields, vars);
        filt.step_begin(&cands)?;
        let mut added = Vec::new();
        for (w, l) in cands {
            if add_capped(&mut filt, w, l.clone(), opts.expr_cap)? {
                added.push(l);
            }
        }
        let rank = filt.rank()?;
        steps.push(StepInfo {
            m: 1,
            rank,
            new_generators: added,
            secs: t.elapsed().as_secs_f64(),
        });
        omega_steps.push(filt.ws.clone());
        if rank == n {
            full_rank_at = Some(1);
        }
    }
    if let Some(mstar) = full_rank_at {
        return finalize(
            model, "general", filt, steps, omega_steps, false, None, Some(mstar),
            analysis_outputs, selected, Vec::new(),
        );
    }

    let mut g_all: Vec<Vec<Expr>> = vec![model.drift.clone()];
    g_all.extend(model.g.iter().cloned());

    let special = special_general(model, &mu, &nu, &g_all, plan, opts)?;

    // Differentials of the nonvanishing T components; m′ is the first
    // step whose codistribution holds them all.
    let mut dts: Vec<Vec<Expr>> = Vec::new();
    let mut m_prime = if special {
        Some(0)
    } else {
        let t = t_tensor(model, &mu, &nu, &g_hat);
        for slab in &t {
            for row in slab {
                for comp in row.iter().skip(1) {
                    if comp.is_zero() {
                        continue;
                    }
                    let dt = gradient(comp, vars);
                    if is_zero_field(&dt) {
                        continue;
                    }
                    cap_field(&dt, opts.expr_cap, "D T component")?;
                    filt.note(comp);
                    filt.note_field(&dt);
                    dts.push(dt);
                }
            }
        }
        filt.resample()?;
        dts.retain(|dt| !span::numerically_zero_field(dt, &filt.pts, ZERO_TOL));
        let mut mp = None;
        for (j, snap) in omega_steps.iter().enumerate() {
            let mut all_in = true;
            for dt in &dts {
                if !contains_in(snap, dt, &filt.pts, plan.membership_tol)? {
                    all_in = false;
                    break;
                }
            }
            if all_in {
                mp = Some(j);
                break;
            }
        }
        mp
    };
    let mut dt_in = vec![false; dts.len()];

    let mut phi_levels = vec![phi_level0(model)];
    let bound = opts.max_steps.unwrap_or(n + 2);
    let mut m_star = None;
    for m in 2..=bound + 1 {
        let t = Instant::now();
        while phi_levels.len() < m {
            extend_phi_general(&mut phi_levels, &g_all, &nu, vars, &filt.pts, opts.expr_cap)?;
        }
        let mut cands =
            lie_candidates(&filt.ws, &filt.labels, filt.ws.len(), &fields, vars);
        for e in &phi_levels[m - 1] {
            if e.zero {
                continue;
            }
            let idx: String = e.index.iter().map(|a| a.to_string()).collect();
            for (nm, dh) in &dhs {
                let w = lie_covector(dh, &e.field, vars);
                cands.push((
                    w,
                    format!(
                        "L_phi{}[{};{}] D {}",
                        m - 1,
                        model.known_inputs[e.input],
                        idx,
                        nm
                    ),
                ));
            }
        }
        filt.step_begin(&cands)?;
        let prev = filt.rank()?;
        let mut added = Vec::new();
        for (w, l) in cands {
            if add_capped(&mut filt, w, l.clone(), opts.expr_cap)? {
                added.push(l);
            }
        }
        let rank = filt.rank()?;
        steps.push(StepInfo {
            m,
            rank,
            new_generators: added,
            secs: t.elapsed().as_secs_f64(),
        });
        omega_steps.push(filt.ws.clone());
        if m_prime.is_none() {
            let mut all_in = true;
            for (flag, dt) in dt_in.iter_mut().zip(dts.iter()) {
                if !*flag {
                    *flag = filt.contains(dt)?;
                }
                all_in &= *flag;
            }
            if all_in {
                m_prime = Some(m);
            } else {
                // Monotone span: whatever was absorbed stays absorbed.
                for flag in dt_in.iter_mut() {
                    if !*flag {
                        *flag = false;
                    }
                }
            }
        }
        if rank == n {
            m_star = Some(m);
            break;
        }
        if rank == prev {
            let settled = if special {
                true
            } else {
                m - 1 >= 2 && m_prime.is_some()
            };
            if settled {
                m_star = Some(m - 1);
                break;
            }
        }
    }
    if m_star.is_none() {
        return Err(ObsError::NoConvergence {
            bound,
            last_rank: steps.last().map(|s| s.rank).unwrap_or(0),
        });
    }
    finalize(
        model, "general", filt, steps, omega_steps, special, m_prime, m_star,
        analysis_outputs, selected, Vec::new(),
    )
}

/// Augment the state with the unknown inputs and their first k−1
/// derivatives. The drift absorbs the unknown-input terms and the
/// derivative shift; the new unknown inputs (the k-th derivatives) enter
/// through unit fields at the end of the state.
pub fn extend_model(model: &Model, k: usize) -> Model {
    let n = model.n();
    let mw = model.m_w();
    let mut ext = model.clone();
    let mut wsym: Vec<Vec<SymId>> = Vec::with_capacity(k);
    for lvl in 0..k {
        let mut row = Vec::with_capacity(mw);
        for base in &model.unknown_inputs {
            let mut name = if lvl == 0 {
                base.clone()
            } else {
                format!("{base}_d{lvl}")
            };
            while ext.table.get(&name).is_some() {
                name.push('_');
            }
            let id = ext.table.intern(&name);
            ext.states.push(id);
            row.push(id);
        }
        wsym.push(row);
    }

    let mut drift: Vec<Expr> = (0..n)
        .map(|r| {
            let mut terms = vec![model.drift[r].clone()];
            for (j, gj) in model.g.iter().enumerate() {
                if gj[r].is_zero() {
                    continue;
                }
                terms.push(Expr::mul(vec![gj[r].clone(), Expr::sym(wsym[0][j])]));
            }
            Expr::add(terms)
        })
        .collect();
    for lvl in 0..k {
        for j in 0..mw {
            drift.push(if lvl + 1 < k {
                Expr::sym(wsym[lvl + 1][j])
            } else {
                Expr::zero()
            });
        }
    }
    ext.drift = drift;

    let pad = vec![Expr::zero(); k * mw];
    ext.f = model
        .f
        .iter()
        .map(|f| {
            let mut v = f.clone();
            v.extend(pad.iter().cloned());
            v
        })
        .collect();
    ext.g = (0..mw)
        .map(|j| {
            let mut v = vec![Expr::zero(); n + k * mw];
            v[n + (k - 1) * mw + j] = Expr::one();
            v
        })
        .collect();
    ext.unknown_inputs = model
        .unknown_inputs
        .iter()
        .map(|b| format!("{b}_d{k}"))
        .collect();
    // Symmetry candidates are tied to the original state dimension.
    ext.symmetries = Vec::new();
    ext
}

/// Filtration on the extended state, run for exactly `m` steps with the
/// unknown-input symbols sampled away from zero.
pub fn extended_codistribution(
    model: &Model,
    k: usize,
    m: usize,
    plan: &SamplePlan,
) -> Result<Codistribution, ObsError> {
    if k == 0 || m > k {
        return Err(ObsError::Precondition(format!(
            "need 1 <= k and m <= k, got k={k}, m={m}"
        )));
    }
    let n = model.n();
    let mw = model.m_w();
    let ext = extend_model(model, k);
    let mut eplan = plan.clone();
    eplan.grow(ext.table.len());
    let evars: Vec<SymId> = ext.states.clone();

    let mut filt = Filtration::new(&eplan, ext.base_guards());
    for j in 0..mw {
        filt.require_nonzero(&Expr::sym(ext.states[n + j]));
    }
    let cands0: Vec<(Vec<Expr>, String)> = ext
        .outputs
        .iter()
        .map(|o| (gradient(&o.expr, &evars), format!("D {}", o.name)))
        .collect();
    filt.step_begin(&cands0)?;
    for (w, l) in cands0 {
        filt.add(w, l)?;
    }

    let mut fields: Vec<(String, Vec<Expr>)> = vec![("G".to_string(), ext.drift.clone())];
    for (i, f) in ext.f.iter().enumerate() {
        fields.push((format!("F[{}]", ext.known_inputs[i]), f.clone()));
    }
    for _ in 1..=m {
        let cands = lie_candidates(&filt.ws, &filt.labels, filt.ws.len(), &fields, &evars);
        filt.step_begin(&cands)?;
        for (w, l) in cands {
            filt.add(w, l)?;
        }
    }
    let rank = filt.rank()?;
    Ok(Codistribution {
        gens: filt.ws,
        rank,
    })
}

/// The model with its outputs replaced — used to rebuild the system
/// exactly as an analysis saw it.
pub fn with_outputs(model: &Model, outs: &[(String, Expr)]) -> Model {
    let mut m2 = model.clone();
    m2.outputs = outs
        .iter()
        .map(|(name, expr)| Output {
            name: name.clone(),
            expr: expr.clone(),
        })
        .collect();
    m2
}

/// Ranks compared by the extended-state cross-check: the brute-force
/// extended filtration against the embedded analysis codistribution plus
/// the m drift-derivative generators of each selected function. With one
/// unknown input and no drift the two must agree; in general the
/// extended rank cannot exceed the embedded one.
#[derive(Debug, Clone)]
pub struct OracleCheck {
    pub k: usize,
    pub m: usize,
    pub rank_extended: usize,
    pub rank_embedded: usize,
}

pub fn oracle_check(
    model: &Model,
    analysis: &AnalysisReport,
    k: usize,
    m: usize,
    plan: &SamplePlan,
) -> Result<OracleCheck, ObsError> {
    let as_analyzed = with_outputs(model, &analysis.analysis_outputs);
    let ext_side = extended_codistribution(&as_analyzed, k, m, plan)?;

    let ext = extend_model(&as_analyzed, k);
    let evars: Vec<SymId> = ext.states.clone();
    let mw = model.m_w();
    let n = model.n();

    let om = if analysis.omega_steps.is_empty() {
        return Err(ObsError::Precondition(
            "analysis carries no per-step generators".into(),
        ));
    } else if m < analysis.omega_steps.len() {
        &analysis.omega_steps[m]
    } else {
        analysis.omega_steps.last().unwrap()
    };
    let mut gens: Vec<Vec<Expr>> = om
        .iter()
        .map(|w| {
            let mut v = w.clone();
            v.extend(std::iter::repeat(Expr::zero()).take(k * mw));
            v
        })
        .collect();
    for name in &analysis.selected {
        let Some((_, h)) = analysis
            .analysis_outputs
            .iter()
            .find(|(nm, _)| nm == name)
        else {
            return Err(ObsError::Precondition(format!(
                "selected function {name} missing from the analysis outputs"
            )));
        };
        let mut w = gradient(h, &evars);
        for _ in 1..=m {
            w = lie_covector(&w, &ext.drift, &evars);
            gens.push(w.clone());
        }
    }

    let mut eplan = plan.clone();
    eplan.grow(ext.table.len());
    let mut filt = Filtration::new(&eplan, ext.base_guards());
    for j in 0..mw {
        filt.require_nonzero(&Expr::sym(ext.states[n + j]));
    }
    for w in &gens {
        filt.note_field(w);
    }
    filt.resample()?;
    let rank_embedded = span::generic_rank(&gens, &filt.pts, eplan.rank_tol)?;
    Ok(OracleCheck {
        k,
        m,
        rank_extended: ext_side.rank,
        rank_embedded,
    })
}

/// Per-component observability: a state component is observable exactly
/// when its unit differential lies in Ω*.
pub fn classify_state(
    model: &Model,
    omega_star: &[Vec<Expr>],
    plan: &SamplePlan,
) -> Result<Vec<(String, bool)>, ObsError> {
    let mut guards = model.base_guards();
    let mut seen: HashSet<u64> = guards.iter().map(|g| g.hash()).collect();
    for w in omega_star {
        for c in w {
            span::collect_guards(c, &mut guards, &mut seen);
        }
    }
    let pts = plan.sample(0xC1A55, &guards)?;
    let n = model.n();
    let mut out = Vec::with_capacity(n);
    for j in 0..n {
        let mut e = model.zero_field();
        e[j] = Expr::one();
        let inside = contains_in(omega_star, &e, &pts, plan.membership_tol)?;
        out.push((model.table.name(model.states[j]).to_string(), inside));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::evaluate;
    use crate::modelfile::parse_model;

    fn uni(output: &str, known_v: bool) -> Model {
        let vfield = "cos(theta - phi), sin(theta - phi) / r, 0";
        let wfield = "0, 0, 1";
        let (kn, kf, wn, wf) = if known_v {
            ("v", vfield, "omega", wfield)
        } else {
            ("omega", wfield, "v", vfield)
        };
        parse_model(&format!(
            "state r phi theta\n\
             known_input {kn}\n\
             unknown_input {wn}\n\
             f {kn} = {kf}\n\
             g {wn} = {wf}\n\
             output y = {output}\n\
             range r 1.2 2\n"
        ))
        .unwrap()
    }

    fn ranks(rep: &AnalysisReport) -> Vec<usize> {
        rep.steps.iter().map(|s| s.rank).collect()
    }

    fn verdict(rep: &AnalysisReport, name: &str) -> bool {
        rep.verdicts
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
            .unwrap()
    }

    fn assert_nondecreasing(rep: &AnalysisReport) {
        for w in rep.steps.windows(2) {
            assert!(w[1].rank >= w[0].rank, "ranks must not drop: {:?}", ranks(rep));
        }
    }

    #[test]
    fn rank_condition_on_unicycle_with_all_inputs_known() {
        let m = parse_model(
            "state r phi theta\n\
             known_input v omega\n\
             f v = cos(theta - phi), sin(theta - phi) / r, 0\n\
             f omega = 0, 0, 1\n\
             output y = phi\n\
             range r 1.2 2\n",
        )
        .unwrap();
        let plan = m.plan(7);
        let rep = orc(&m, &plan, &AnalysisOpts::default()).unwrap();
        assert_eq!(rep.rank(), 3);
        assert!(rep.observable);
        assert!(rep.m_star.unwrap() <= 2);

        let m2 = parse_model(
            "state r phi theta\n\
             known_input v omega\n\
             f v = cos(theta - phi), sin(theta - phi) / r, 0\n\
             f omega = 0, 0, 1\n\
             output y = r\n\
             range r 1.2 2\n",
        )
        .unwrap();
        let rep2 = orc(&m2, &m2.plan(7), &AnalysisOpts::default()).unwrap();
        assert_eq!(rep2.rank(), 2);
        assert!(!rep2.observable);
        assert!(rep2.m_star.unwrap() <= 2);
        assert_nondecreasing(&rep2);
    }

    #[test]
    fn single_case1_range_output_unknown_speed() {
        let m = uni("r", false);
        let rep = omega_single(&m, &m.plan(7), &AnalysisOpts::default()).unwrap();
        assert_eq!(ranks(&rep), vec![1, 1, 2, 2]);
        assert_eq!(rep.m_star, Some(2));
        assert!(!rep.special_case);
        assert_eq!(rep.m_prime, Some(2));
        assert_eq!(rep.selected, vec!["y".to_string()]);
        assert!(verdict(&rep, "r"));
        assert!(!verdict(&rep, "phi"));
        assert!(!verdict(&rep, "theta"));
        assert_eq!(rep.unobs_dim, 1);
        assert_nondecreasing(&rep);
    }

    #[test]
    fn single_case2_range_output_unknown_turn_rate_reselects() {
        let m = uni("r", true);
        let rep = omega_single(&m, &m.plan(7), &AnalysisOpts::default()).unwrap();
        assert_eq!(rep.selected, vec!["L_f[v] y".to_string()]);
        assert_eq!(rep.analysis_outputs.len(), 2);
        assert_eq!(ranks(&rep), vec![2, 2, 2, 2]);
        assert_eq!(rep.m_star, Some(2));
        assert!(verdict(&rep, "r"));
        assert_eq!(rep.rank(), 2);
    }

    #[test]
    fn single_case3_relative_bearing_unknown_speed() {
        let m = uni("theta - phi", false);
        let rep = omega_single(&m, &m.plan(7), &AnalysisOpts::default()).unwrap();
        assert_eq!(ranks(&rep), vec![1, 1, 1, 1]);
        assert_eq!(rep.m_star, Some(2));
        assert_eq!(rep.rank(), 1);
        // the absolute scale is the lost direction
        assert!(!verdict(&rep, "r"));
    }

    #[test]
    fn single_case4_relative_bearing_unknown_turn_rate_is_special() {
        let m = uni("theta - phi", true);
        let rep = omega_single(&m, &m.plan(7), &AnalysisOpts::default()).unwrap();
        assert!(rep.special_case);
        assert_eq!(rep.m_prime, Some(0));
        assert_eq!(ranks(&rep), vec![1, 2, 2]);
        assert_eq!(rep.m_star, Some(1));
        assert_eq!(rep.rank(), 2);
    }

    #[test]
    fn single_case5_heading_output_unknown_speed() {
        let m = uni("phi", false);
        let rep = omega_single(&m, &m.plan(7), &AnalysisOpts::default()).unwrap();
        assert_eq!(ranks(&rep), vec![1, 1, 2, 2]);
        assert_eq!(rep.m_star, Some(2));
        assert!(!verdict(&rep, "r"));
        assert!(verdict(&rep, "phi"));
        assert!(verdict(&rep, "theta"));
    }

    #[test]
    fn single_case6_heading_output_unknown_turn_rate_fully_observable() {
        let m = uni("phi", true);
        let rep = omega_single(&m, &m.plan(7), &AnalysisOpts::default()).unwrap();
        assert_eq!(rep.selected, vec!["L_f[v] y".to_string()]);
        assert_eq!(ranks(&rep), vec![2, 3]);
        assert_eq!(rep.m_star, Some(1));
        assert!(rep.observable);
        assert!(rep.verdicts.iter().all(|(_, v)| *v));
    }

    #[test]
    fn single_verdicts_stable_across_seeds() {
        for seed in [1u64, 99, 4242] {
            let m = uni("phi", false);
            let rep = omega_single(&m, &m.plan(seed), &AnalysisOpts::default()).unwrap();
            assert_eq!(ranks(&rep), vec![1, 1, 2, 2], "seed {seed}");
            assert!(!verdict(&rep, "r"));
        }
    }

    #[test]
    fn spurious_unknown_input_falls_back_to_rank_condition() {
        let m = parse_model(
            "state x1 x2\n\
             known_input u\n\
             unknown_input w\n\
             f u = x1, 0\n\
             g w = 0, x2\n\
             output y = x1\n",
        )
        .unwrap();
        let rep = omega_single(&m, &m.plan(5), &AnalysisOpts::default()).unwrap();
        assert_eq!(rep.spurious, vec!["w".to_string()]);
        assert_eq!(rep.method, "rank-condition");
        assert_eq!(rep.rank(), 1);
        assert!(verdict(&rep, "x1"));
        assert!(!verdict(&rep, "x2"));
    }

    fn disturbed(output: &str, gamma_state: bool) -> Model {
        let (decl, pad) = if gamma_state {
            ("state x_v y_v theta gamma", ", 0")
        } else {
            ("state x_v y_v theta\nparam gamma", "")
        };
        parse_model(&format!(
            "{decl}\n\
             known_input v omega\n\
             unknown_input w\n\
             f v = cos(theta), sin(theta), 0{pad}\n\
             f omega = 0, 0, 1{pad}\n\
             g w = cos(gamma), sin(gamma), 0{pad}\n\
             output y = {output}\n"
        ))
        .unwrap()
    }

    #[test]
    fn disturbance_known_direction_squared_range_fully_observable() {
        let m = disturbed("x_v^2 + y_v^2", false);
        let rep = omega_single(&m, &m.plan(11), &AnalysisOpts::default()).unwrap();
        assert_eq!(rep.rank(), 3);
        assert!(rep.observable);
        assert_nondecreasing(&rep);
    }

    #[test]
    fn disturbance_unknown_direction_squared_range_nothing_observable() {
        let m = disturbed("x_v^2 + y_v^2", true);
        let rep = omega_single(&m, &m.plan(11), &AnalysisOpts::default()).unwrap();
        assert_eq!(rep.rank(), 3);
        assert!(!rep.observable);
        assert!(rep.verdicts.iter().all(|(_, v)| !*v));
    }

    #[test]
    fn disturbance_unknown_direction_heading_tangent_fully_observable() {
        let m = disturbed("y_v / x_v", true);
        let rep = omega_single(&m, &m.plan(11), &AnalysisOpts::default()).unwrap();
        assert_eq!(rep.rank(), 4);
        assert!(rep.observable);
    }

    #[test]
    fn phi_family_first_level_matches_closed_form() {
        // starting from y=r with the speed unknown, the first bracket is
        // [-tan(theta-phi), 1/r, 0]
        let m = uni("r", false);
        let h = m.outputs[0].expr.clone();
        let fam = phi_family_single(&m, &h, 1).unwrap();
        assert_eq!(fam.levels[0].len(), 1);
        assert!(!fam.levels[1][0].zero);
        let phi1 = &fam.levels[1][0].field;
        let plan = m.plan(13);
        let pts = plan.sample(1, &m.base_guards()).unwrap();
        for p in &pts {
            let r = p[m.states[0] as usize];
            let a = p[m.states[2] as usize] - p[m.states[1] as usize];
            let got: Vec<f64> = phi1.iter().map(|c| evaluate(c, p)).collect();
            assert!((got[0] + a.tan()).abs() < 1e-9);
            assert!((got[1] - 1.0 / r).abs() < 1e-9);
            assert!(got[2].abs() < 1e-12);
        }
    }

    #[test]
    fn phi_family_vanishes_when_brackets_commute() {
        let m = disturbed("x_v^2 + y_v^2", false);
        let h = m.outputs[0].expr.clone();
        let fam = phi_family_single(&m, &h, 1).unwrap();
        assert_eq!(fam.levels[1].len(), 2);
        assert!(fam.levels[1].iter().all(|e| e.zero));
    }

    #[test]
    fn phi_family_depth_zero_is_the_known_fields() {
        let m = uni("r", false);
        let h = m.outputs[0].expr.clone();
        let fam = phi_family_single(&m, &h, 0).unwrap();
        assert_eq!(fam.levels.len(), 1);
        assert_eq!(fam.levels[0][0].field, m.f[0]);
    }

    fn mu_times_nu_is_identity(model: &Model, mn: &MuNu, plan: &SamplePlan) {
        let dim = model.m_w() + 1;
        let mut guards = model.base_guards();
        let mut seen: HashSet<u64> = guards.iter().map(|g| g.hash()).collect();
        for row in mn.mu.iter().chain(mn.nu.iter()) {
            for e in row {
                span::collect_guards(e, &mut guards, &mut seen);
            }
        }
        let pts = plan.sample(4, &guards).unwrap();
        for p in &pts {
            for a in 0..dim {
                for c in 0..dim {
                    let mut acc = 0.0;
                    for b in 0..dim {
                        acc += evaluate(&mn.mu[a][b], p) * evaluate(&mn.nu[b][c], p);
                    }
                    let want = if a == c { 1.0 } else { 0.0 };
                    assert!(
                        (acc - want).abs() < 1e-8,
                        "mu*nu[{a}][{c}] = {acc} at {p:?}"
                    );
                }
            }
        }
    }

    #[test]
    fn mu_nu_single_input_is_the_scalar_inverse() {
        let m = uni("r", false);
        let plan = m.plan(17);
        let h = vec![m.outputs[0].expr.clone()];
        let mn = build_mu_nu(&m, &h, &plan).unwrap();
        // mu^1_1 = L_g r, nu^1_1 its reciprocal, and the drift column is inert
        assert!(mn.mu[0][1].is_zero());
        assert!(mn.nu[0][1].is_zero());
        mu_times_nu_is_identity(&m, &mn, &plan);
        // ghat^1 = g / L^1_g
        let l1 = lie_scalar(&h[0], &m.g[0], &m.states);
        let pts = plan.sample(6, &m.base_guards()).unwrap();
        for p in &pts {
            let s = evaluate(&l1, p);
            for (c, gc) in mn.g_hat[1].iter().zip(m.g[0].iter()) {
                assert!((evaluate(c, p) - evaluate(gc, p) / s).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn mu_nu_two_unknown_inputs_with_drift() {
        let m = parse_model(
            "state x y\n\
             unknown_input w1 w2\n\
             drift = y, x^2\n\
             g w1 = 1, x\n\
             g w2 = 0, 1 + y\n\
             output h1 = x\n\
             output h2 = y\n\
             range y 0.2 1.5\n",
        )
        .unwrap();
        let plan = m.plan(23);
        let hs: Vec<Expr> = m.outputs.iter().map(|o| o.expr.clone()).collect();
        let mn = build_mu_nu(&m, &hs, &plan).unwrap();
        mu_times_nu_is_identity(&m, &mn, &plan);
        // inertial slots never mix
        assert!(mn.mu[1][0].is_zero() && mn.mu[2][0].is_zero());
        assert!(mn.nu[1][0].is_zero() && mn.nu[2][0].is_zero());
    }

    #[test]
    fn singular_selection_is_rejected() {
        let m = parse_model(
            "state x y\n\
             unknown_input w1 w2\n\
             g w1 = 1, 0\n\
             g w2 = 2, 0\n\
             output h1 = x\n\
             output h2 = y\n",
        )
        .unwrap();
        let plan = m.plan(3);
        let hs: Vec<Expr> = m.outputs.iter().map(|o| o.expr.clone()).collect();
        assert!(matches!(
            build_mu_nu(&m, &hs, &plan),
            Err(ObsError::SingularMu)
        ));
    }

    #[test]
    fn t_tensor_single_input_recovers_tau_and_kills_the_drift_slab() {
        let m = uni("r", false);
        let plan = m.plan(29);
        let h = vec![m.outputs[0].expr.clone()];
        let mn = build_mu_nu(&m, &h, &plan).unwrap();
        let t = t_tensor(&m, &mn.mu, &mn.nu, &mn.g_hat);
        for slab in &t {
            for row in slab {
                assert!(row[0].is_zero());
            }
        }
        let l1 = lie_scalar(&h[0], &m.g[0], &m.states);
        let l2 = lie_scalar(&l1, &m.g[0], &m.states);
        let tau = Expr::div(l2, Expr::mul(vec![l1.clone(), l1.clone()]));
        let mut guards = m.base_guards();
        guards.push(l1.clone());
        let pts = plan.sample(8, &guards).unwrap();
        for p in &pts {
            let a = evaluate(&t[1][1][1], p);
            let b = evaluate(&tau, p);
            assert!((a - b).abs() < 1e-8, "T^11_1 = {a}, tau = {b}");
        }
    }

    #[test]
    fn general_route_specializes_to_the_single_input_one() {
        // same per-step ranks and verdicts on a driftless one-unknown model
        let m = uni("r", false);
        let plan = m.plan(7);
        let opts = AnalysisOpts::default();
        let single = omega_single(&m, &plan, &opts).unwrap();
        let sel = SelectedFunctions {
            chosen: vec![("y".to_string(), m.outputs[0].expr.clone())],
            unused: vec![],
        };
        let general = omega_general(&m, &sel, &plan, &opts).unwrap();
        assert_eq!(ranks(&single), ranks(&general));
        assert_eq!(single.verdicts, general.verdicts);
        assert_eq!(single.m_star, general.m_star);

        // and with re-selection: the derived function is chosen, the raw
        // output rides along unused
        let m2 = uni("r", true);
        let single2 = omega_single(&m2, &plan, &opts).unwrap();
        let c = lie_scalar(&m2.outputs[0].expr, &m2.f[0], &m2.states);
        let sel2 = SelectedFunctions {
            chosen: vec![("L_f[v] y".to_string(), c)],
            unused: vec![("y".to_string(), m2.outputs[0].expr.clone())],
        };
        let general2 = omega_general(&m2, &sel2, &plan, &opts).unwrap();
        assert_eq!(ranks(&single2), ranks(&general2));
        assert_eq!(single2.verdicts, general2.verdicts);
    }

    #[test]
    fn general_special_case_on_constant_sensitivities() {
        // unknown turn rate, bearing output: L^1_g = 1 everywhere
        let m = uni("theta - phi", true);
        let plan = m.plan(7);
        let sel = SelectedFunctions {
            chosen: vec![("y".to_string(), m.outputs[0].expr.clone())],
            unused: vec![],
        };
        let rep = omega_general(&m, &sel, &plan, &AnalysisOpts::default()).unwrap();
        assert!(rep.special_case);
        assert_eq!(rep.m_star, Some(1));
        assert_eq!(rep.rank(), 2);
    }

    #[test]
    fn extension_wires_the_unknown_input_into_the_drift() {
        let m = uni("r", false);
        let ext = extend_model(&m, 1);
        assert_eq!(ext.n(), 4);
        assert_eq!(ext.m_w(), 1);
        let w = ext.states[3];
        // drift = g * w on the original block, 0 on the extension
        let plan = ext.plan(31);
        let pts = plan.sample(1, &ext.base_guards()).unwrap();
        for (r, gc) in m.g[0].iter().enumerate() {
            let want = Expr::mul(vec![gc.clone(), Expr::sym(w)]);
            for p in &pts {
                assert!((evaluate(&ext.drift[r], p) - evaluate(&want, p)).abs() < 1e-12);
            }
        }
        assert!(ext.drift[3].is_zero());
        assert!(ext.g[0][3].is_one());

        let ext2 = extend_model(&m, 2);
        assert_eq!(ext2.n(), 5);
        // the w row of the drift now carries the next derivative
        assert!(Expr::sub(ext2.drift[3].clone(), Expr::sym(ext2.states[4])).is_zero());
        assert!(ext2.drift[4].is_zero());
        assert!(ext2.g[0][4].is_one());
    }

    #[test]
    fn extending_twice_matches_extending_once_by_two() {
        let m = uni("r", false);
        let once = extend_model(&m, 2);
        let twice = extend_model(&extend_model(&m, 1), 1);
        assert_eq!(once.n(), twice.n());
        let show = |mm: &Model, f: &[Expr]| -> Vec<String> {
            f.iter().map(|e| e.display(&mm.table).to_string()).collect()
        };
        assert_eq!(show(&once, &once.drift), show(&twice, &twice.drift));
        for (a, b) in once.f.iter().zip(twice.f.iter()) {
            assert_eq!(show(&once, a), show(&twice, b));
        }
        for (a, b) in once.g.iter().zip(twice.g.iter()) {
            assert_eq!(show(&once, a), show(&twice, b));
        }
    }

    #[test]
    fn extended_codistribution_step_zero_is_the_output_span() {
        let m = uni("r", false);
        let plan = m.plan(7);
        let cod = extended_codistribution(&m, 2, 0, &plan).unwrap();
        assert_eq!(cod.rank, 1);
        assert_eq!(cod.gens[0].len(), 5);
    }

    #[test]
    fn extended_rank_splits_into_embedded_plus_drift_derivatives() {
        let opts = AnalysisOpts::default();
        for (out, known_v) in [("r", false), ("r", true), ("phi", true)] {
            let m = uni(out, known_v);
            let plan = m.plan(19);
            let rep = omega_single(&m, &plan, &opts).unwrap();
            for km in 1..=2usize {
                let chk = oracle_check(&m, &rep, km, km, &plan).unwrap();
                assert_eq!(
                    chk.rank_extended, chk.rank_embedded,
                    "case y={out}, known_v={known_v}, k=m={km}"
                );
            }
        }
    }

    #[test]
    fn classification_reads_memberships_off_the_converged_span() {
        let m = uni("theta - phi", false);
        let plan = m.plan(7);
        let rep = omega_single(&m, &plan, &AnalysisOpts::default()).unwrap();
        let v = classify_state(&m, &rep.omega, &plan).unwrap();
        assert_eq!(v, rep.verdicts);
        assert!(v.iter().all(|(_, inside)| !inside));
    }
}
