//! Canonic form with respect to the unknown inputs.
//!
//! The analysis routes driven by μ/ν need a selection of functions whose
//! first-order derivatives along the unknown-input fields are independent.
//! A system where no such selection exists among the outputs and their
//! known-input Lie derivatives is not in canonic form; this module decides
//! that, and when the answer is no, rewrites the system — mixing the
//! unknown inputs into each other and absorbing some of them into the
//! state as new components whose derivatives become the new unknown
//! inputs — until either the form is reached or the leftover inputs are
//! shown to be spurious.

use crate::expr::{evaluate, gradient, Expr, SymId};
use crate::lie::{is_zero_field, lie_covector, lie_scalar};
use crate::model::Model;
use crate::obs::{
    self, adjugate, AnalysisOpts, Filtration, ObsError, Probe, SelectedFunctions, ZERO_TOL,
};
use crate::span::{self, SamplePlan, SpanError};
use std::collections::HashSet;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CanonError {
    #[error(transparent)]
    Span(#[from] SpanError),
    #[error(transparent)]
    Obs(#[from] ObsError),
    #[error("canonization did not terminate within {max_aug} augmentations \
             (unknown-input rank trace: {trace:?})")]
    NoTermination { max_aug: usize, trace: Vec<usize> },
    #[error("the unknown-input rank dropped from {prev} to {got}; \
             the sample points are too degenerate to continue")]
    RankRegression { prev: usize, got: usize },
    #[error("{0}")]
    Precondition(String),
}

/// One member of the function space: an output or an iterated Lie
/// derivative of one, kept only if its differential grew the span.
#[derive(Debug, Clone)]
pub struct FsMember {
    pub name: String,
    pub expr: Expr,
    /// Index of the declared output this member descends from.
    pub root: usize,
    pub depth: usize,
}

/// The outputs closed under Lie derivatives along the known-input
/// fields, pruned to a differential basis.
#[derive(Debug, Clone)]
pub struct FunctionSpace {
    pub members: Vec<FsMember>,
    pub depth_cap: usize,
    /// False when the depth cap cut the closure off while the rank was
    /// still growing.
    pub saturated: bool,
}

impl FunctionSpace {
    pub fn rank(&self) -> usize {
        self.members.len()
    }

    pub fn differentials(&self, vars: &[SymId]) -> Vec<Vec<Expr>> {
        self.members
            .iter()
            .map(|m| gradient(&m.expr, vars))
            .collect()
    }
}

/// Add one candidate to the space if its differential grows the rank.
fn try_add(
    filt: &mut Filtration,
    fs: &mut FunctionSpace,
    cand: FsMember,
    vars: &[SymId],
) -> Result<bool, CanonError> {
    if cand.depth > fs.depth_cap {
        fs.saturated = false;
        return Ok(false);
    }
    let w = gradient(&cand.expr, vars);
    filt.note(&cand.expr);
    let probe = [(w.clone(), cand.name.clone())];
    filt.step_begin(&probe)?;
    if filt.add(w, cand.name.clone())? {
        fs.members.push(cand);
        Ok(true)
    } else {
        Ok(false)
    }
}

/// Close `fs.members[from..]` under the known-input fields, breadth
/// first, keeping only rank-growing functions.
fn f_saturate(
    model: &Model,
    fs: &mut FunctionSpace,
    filt: &mut Filtration,
    from: usize,
) -> Result<(), CanonError> {
    let vars: &[SymId] = &model.states;
    let mut layer: Vec<FsMember> = fs.members[from..].to_vec();
    while !layer.is_empty() {
        let mut next = Vec::new();
        for m in &layer {
            for (i, f) in model.f.iter().enumerate() {
                let d = lie_scalar(&m.expr, f, vars);
                if d.is_zero() {
                    continue;
                }
                let cand = FsMember {
                    name: format!("L_f[{}] {}", model.known_inputs[i], m.name),
                    expr: d,
                    root: m.root,
                    depth: m.depth + 1,
                };
                if try_add(filt, fs, cand.clone(), vars)? {
                    next.push(cand);
                }
            }
        }
        layer = next;
    }
    Ok(())
}

/// Seed a filtration with the space's current members so further
/// candidates are tested against the whole retained basis.
fn seed_filtration<'a>(
    model: &Model,
    fs: &FunctionSpace,
    plan: &'a SamplePlan,
) -> Result<Filtration<'a>, CanonError> {
    let vars: &[SymId] = &model.states;
    let mut filt = Filtration::new(plan, model.base_guards());
    let seed: Vec<(Vec<Expr>, String)> = fs
        .members
        .iter()
        .map(|m| (gradient(&m.expr, vars), m.name.clone()))
        .collect();
    for m in &fs.members {
        filt.note(&m.expr);
    }
    filt.step_begin(&seed)?;
    for (w, l) in seed {
        // members are a basis already; re-pruning them would desync the
        // space, so install the rows directly
        filt.ws.push(w);
        filt.labels.push(l);
    }
    Ok(filt)
}

/// Grow the space with the drift derivative of each current member,
/// saturating under the known-input fields after every addition so the
/// retained basis prefers known-input chains over deeper drift chains
/// (they are structurally simpler, and any direction skipped here is
/// recovered through a later drift derivative anyway). Returns whether
/// anything grew; `false` means the span is drift-invariant.
fn grow_with_drift(
    model: &Model,
    fs: &mut FunctionSpace,
    drift_label: &str,
    plan: &SamplePlan,
) -> Result<bool, CanonError> {
    let vars: &[SymId] = &model.states;
    let mut filt = seed_filtration(model, fs, plan)?;
    let snapshot: Vec<FsMember> = fs.members.clone();
    let mut grew = false;
    for m in &snapshot {
        let lg = lie_scalar(&m.expr, &model.drift, vars);
        if lg.is_zero() {
            continue;
        }
        let cand = FsMember {
            name: format!("{drift_label}{}", m.name),
            expr: lg,
            root: m.root,
            depth: m.depth + 1,
        };
        if try_add(&mut filt, fs, cand, vars)? {
            grew = true;
            let from = fs.members.len() - 1;
            f_saturate(model, fs, &mut filt, from)?;
        }
    }
    Ok(grew)
}

/// The outputs closed under L_{f^i}, breadth first, retaining a function
/// only when its state-differential grows the rank.
pub fn build_function_space(
    model: &Model,
    depth_cap: usize,
    plan: &SamplePlan,
) -> Result<FunctionSpace, CanonError> {
    let vars: &[SymId] = &model.states;
    let mut fs = FunctionSpace {
        members: Vec::new(),
        depth_cap,
        saturated: true,
    };
    let mut filt = Filtration::new(plan, model.base_guards());
    for (i, o) in model.outputs.iter().enumerate() {
        let cand = FsMember {
            name: o.name.clone(),
            expr: o.expr.clone(),
            root: i,
            depth: 0,
        };
        try_add(&mut filt, &mut fs, cand, vars)?;
    }
    f_saturate(model, &mut fs, &mut filt, 0)?;
    Ok(fs)
}

/// Greedy pick of function-space members whose unknown-input derivative
/// rows are independent: `d` is the generic rank of all rows, `picked`
/// indexes the chosen members, `gamma[i][j]` their derivatives along the
/// j-th unknown field.
struct DwSelection {
    d: usize,
    picked: Vec<usize>,
    gamma: Vec<Vec<Expr>>,
}

fn dw_selection(
    model: &Model,
    fs: &FunctionSpace,
    plan: &SamplePlan,
    salt: u64,
) -> Result<DwSelection, CanonError> {
    let vars: &[SymId] = &model.states;
    let mw = model.m_w();
    if mw == 0 {
        return Ok(DwSelection {
            d: 0,
            picked: Vec::new(),
            gamma: Vec::new(),
        });
    }
    let rows: Vec<Vec<Expr>> = fs
        .members
        .iter()
        .map(|m| model.g.iter().map(|g| lie_scalar(&m.expr, g, vars)).collect())
        .collect();
    let mut probe = Probe::new(plan, model.base_guards(), salt);
    let flat: Vec<&Expr> = rows.iter().flatten().collect();
    let pts = probe.pts(&flat)?;

    let mut picked = Vec::new();
    let mut gamma: Vec<Vec<Expr>> = Vec::new();
    for (idx, row) in rows.iter().enumerate() {
        if picked.len() == mw {
            break;
        }
        if is_zero_field(row) || span::numerically_zero_field(row, &pts, ZERO_TOL) {
            continue;
        }
        if !gamma.is_empty() && span::contains(&gamma, row, &pts, plan.membership_tol)? {
            continue;
        }
        picked.push(idx);
        gamma.push(row.clone());
    }
    Ok(DwSelection {
        d: picked.len(),
        picked,
        gamma,
    })
}

fn selection_to_functions(model: &Model, fs: &FunctionSpace, picked: &[usize]) -> SelectedFunctions {
    let chosen: Vec<(String, Expr)> = picked
        .iter()
        .map(|&i| (fs.members[i].name.clone(), fs.members[i].expr.clone()))
        .collect();
    let used_roots: HashSet<usize> = picked.iter().map(|&i| fs.members[i].root).collect();
    let unused: Vec<(String, Expr)> = model
        .outputs
        .iter()
        .enumerate()
        .filter(|(i, _)| !used_roots.contains(i))
        .map(|(_, o)| (o.name.clone(), o.expr.clone()))
        .collect();
    SelectedFunctions { chosen, unused }
}

/// Decide canonic form: can the unknown-input derivative rows of the
/// function space reach full rank m_w? Returns the greedy selection
/// either way (short by d when the answer is no).
pub fn is_canonic(
    model: &Model,
    fs: &FunctionSpace,
    plan: &SamplePlan,
) -> Result<(bool, SelectedFunctions), CanonError> {
    let sel = dw_selection(model, fs, plan, 1 << 40)?;
    Ok((
        sel.d == model.m_w(),
        selection_to_functions(model, fs, &sel.picked),
    ))
}

/// One rewriting step applied during canonization.
#[derive(Debug, Clone)]
pub enum TransformOp {
    /// Unknown inputs permuted so the pivot columns come first.
    Reorder { perm: Vec<usize> },
    /// Mixing change: input j (j < d) absorbs multiples of the trailing
    /// inputs; equivalently each trailing field sheds its component
    /// along the leading ones (`g^k -= Σ_j coef[k-d][j] · g^j`).
    InputChange { d: usize, coef: Vec<Vec<Expr>> },
    /// The first d inputs become state components; their derivatives
    /// take over as unknown inputs.
    Augment {
        states: Vec<String>,
        new_inputs: Vec<String>,
    },
}

#[derive(Debug, Clone)]
pub struct TransformEntry {
    pub op: TransformOp,
    /// Human-readable summary, e.g. the input substitution formula.
    pub note: String,
}

/// The outcome of canonization. `canonic` means `model_out` is in
/// canonic form with respect to its own (possibly reduced) unknown
/// inputs; inputs dropped on the way are listed in `spurious`.
#[derive(Debug, Clone)]
pub struct CanonizationResult {
    pub model_out: Model,
    pub h_sel: SelectedFunctions,
    pub transform_log: Vec<TransformEntry>,
    pub spurious: Vec<String>,
    pub canonic: bool,
    pub function_space: FunctionSpace,
    pub warnings: Vec<String>,
}

impl CanonizationResult {
    pub fn augmentations(&self) -> usize {
        self.transform_log
            .iter()
            .filter(|e| matches!(e.op, TransformOp::Augment { .. }))
            .count()
    }
}

fn closure_depth(model: &Model, opts: &AnalysisOpts) -> usize {
    opts.max_steps.unwrap_or(model.n() + 2).max(1)
}

fn next_deriv_name(name: &str) -> String {
    if let Some(pos) = name.rfind("_d") {
        if let Ok(k) = name[pos + 2..].parse::<u32>() {
            return format!("{}_d{}", &name[..pos], k + 1);
        }
    }
    format!("{name}_d1")
}

/// Single unknown input. Canonic as soon as some member of the function
/// space has a nonvanishing derivative along g; with zero drift and none
/// found the input is spurious outright; otherwise the space is deepened
/// with drift derivatives until one appears or the span goes invariant.
pub fn canonize_single(
    model: &Model,
    plan: &SamplePlan,
    opts: &AnalysisOpts,
) -> Result<CanonizationResult, CanonError> {
    if model.m_w() != 1 {
        return Err(CanonError::Precondition(format!(
            "single-input canonization needs exactly one unknown input, got {}",
            model.m_w()
        )));
    }
    let depth = closure_depth(model, opts);
    let mut fs = build_function_space(model, depth, plan)?;
    let mut warnings = Vec::new();
    if !fs.saturated {
        warnings.push("function-space closure hit its depth cap while still growing".into());
    }
    let sel = dw_selection(model, &fs, plan, 1 << 41)?;
    if sel.d == 1 {
        return Ok(CanonizationResult {
            model_out: model.clone(),
            h_sel: selection_to_functions(model, &fs, &sel.picked),
            transform_log: Vec::new(),
            spurious: Vec::new(),
            canonic: true,
            function_space: fs,
            warnings,
        });
    }

    let mut probe = Probe::new(plan, model.base_guards(), 1 << 42);
    let pts = probe.pts(&[])?;
    let driftless = model.is_driftless(&pts, ZERO_TOL);
    let spurious_result = |fs: FunctionSpace, warnings: Vec<String>| {
        let mut out = model.clone();
        out.g.clear();
        out.unknown_inputs.clear();
        CanonizationResult {
            model_out: out,
            h_sel: SelectedFunctions {
                chosen: Vec::new(),
                unused: model
                    .outputs
                    .iter()
                    .map(|o| (o.name.clone(), o.expr.clone()))
                    .collect(),
            },
            transform_log: Vec::new(),
            spurious: model.unknown_inputs.clone(),
            canonic: true,
            function_space: fs,
            warnings,
        }
    };
    if driftless {
        // no drift and nothing reaches the input: every derivative chain
        // that touches g vanishes
        return Ok(spurious_result(fs, warnings));
    }

    let bound = model.n() + 2;
    for it in 0..=bound {
        // a span the drift leaves invariant can never reach the input
        if !grow_with_drift(model, &mut fs, "L_g0 ", plan)? {
            return Ok(spurious_result(fs.clone(), warnings.clone()));
        }
        if !fs.saturated && !warnings.iter().any(|w| w.contains("depth cap")) {
            warnings.push("function-space closure hit its depth cap while still growing".into());
        }
        let sel = dw_selection(model, &fs, plan, (1 << 42) + it as u64 + 1)?;
        if sel.d == 1 {
            return Ok(CanonizationResult {
                model_out: model.clone(),
                h_sel: selection_to_functions(model, &fs, &sel.picked),
                transform_log: Vec::new(),
                spurious: Vec::new(),
                canonic: true,
                function_space: fs,
                warnings,
            });
        }
    }
    Err(CanonError::NoTermination {
        max_aug: bound,
        trace: vec![0; bound],
    })
}

/// Pick d pivot columns of the d×m_w numeric matrix by Gaussian
/// elimination with greedy column pivoting; returns the full input
/// permutation (pivots first, the rest in original order).
fn pivot_columns(gamma: &[Vec<Expr>], p: &[f64], mw: usize) -> Vec<usize> {
    let d = gamma.len();
    let mut m: Vec<Vec<f64>> = gamma
        .iter()
        .map(|row| row.iter().map(|e| evaluate(e, p)).collect())
        .collect();
    let mut picked: Vec<usize> = Vec::with_capacity(d);
    for i in 0..d {
        let mut best = None;
        let mut best_abs = 0.0;
        for c in 0..mw {
            if picked.contains(&c) {
                continue;
            }
            let v = m[i][c].abs();
            if v.is_finite() && v > best_abs {
                best_abs = v;
                best = Some(c);
            }
        }
        let Some(c) = best else { break };
        picked.push(c);
        for r in i + 1..d {
            if m[i][c].abs() < f64::MIN_POSITIVE {
                continue;
            }
            let factor = m[r][c] / m[i][c];
            for cc in 0..mw {
                m[r][cc] -= factor * m[i][cc];
            }
        }
    }
    let mut perm = picked.clone();
    for c in 0..mw {
        if !perm.contains(&c) {
            perm.push(c);
        }
    }
    perm
}

fn permute_inputs(model: &mut Model, perm: &[usize]) {
    model.g = perm.iter().map(|&j| model.g[j].clone()).collect();
    model.unknown_inputs = perm
        .iter()
        .map(|&j| model.unknown_inputs[j].clone())
        .collect();
}

/// Apply one canonization step to `cur`: reorder inputs so the pivot
/// block leads, mix the trailing fields so the function space stops
/// seeing the trailing inputs, absorb the leading d inputs into the
/// state, and re-close the function space on the augmented system.
fn apply_step(
    cur: &mut Model,
    fs: &mut FunctionSpace,
    sel: &DwSelection,
    plan: &mut SamplePlan,
    log: &mut Vec<TransformEntry>,
    warnings: &mut Vec<String>,
) -> Result<(), CanonError> {
    let d = sel.d;
    let mw = cur.m_w();
    if d > 0 {
        let mut probe = Probe::new(plan, cur.base_guards(), 0x5EED << 8);
        let flat: Vec<&Expr> = sel.gamma.iter().flatten().collect();
        let pts = probe.pts(&flat)?;
        let perm = pivot_columns(&sel.gamma, &pts[0], mw);
        let identity: Vec<usize> = (0..mw).collect();
        if perm != identity {
            permute_inputs(cur, &perm);
            log.push(TransformEntry {
                op: TransformOp::Reorder { perm: perm.clone() },
                note: format!(
                    "unknown inputs reordered to [{}]",
                    cur.unknown_inputs.join(", ")
                ),
            });
        }
        let gamma: Vec<Vec<Expr>> = sel
            .gamma
            .iter()
            .map(|row| perm.iter().map(|&j| row[j].clone()).collect())
            .collect();

        // invert the leading d×d block
        let block: Vec<Vec<Expr>> = gamma
            .iter()
            .map(|row| row[..d].to_vec())
            .collect();
        let (det, adj) = adjugate(&block);
        {
            let pts = probe.pts(&[&det])?;
            if span::numerically_zero(&det, &pts, ZERO_TOL) {
                return Err(CanonError::Precondition(
                    "pivot block of the unknown-input derivatives is singular".into(),
                ));
            }
        }
        let inv: Vec<Vec<Expr>> = adj
            .iter()
            .map(|row| {
                row.iter()
                    .map(|c| {
                        if c.is_zero() {
                            Expr::zero()
                        } else {
                            Expr::div(c.clone(), det.clone())
                        }
                    })
                    .collect()
            })
            .collect();

        // coef[k-d][j] = Σ_i inv[j][i] · gamma[i][k]
        let mut coef: Vec<Vec<Expr>> = Vec::with_capacity(mw - d);
        for k in d..mw {
            let mut row = Vec::with_capacity(d);
            for invj in inv.iter().take(d) {
                let terms: Vec<Expr> = (0..d)
                    .filter(|&i| !invj[i].is_zero() && !gamma[i][k].is_zero())
                    .map(|i| Expr::mul(vec![invj[i].clone(), gamma[i][k].clone()]))
                    .collect();
                row.push(Expr::add(terms));
            }
            coef.push(row);
        }
        let nontrivial = coef.iter().flatten().any(|c| !c.is_zero());
        if nontrivial {
            for (k, crow) in coef.iter().enumerate() {
                let gk = cur.g[d + k].clone();
                let mut new_gk = gk.clone();
                for (j, c) in crow.iter().enumerate() {
                    if c.is_zero() {
                        continue;
                    }
                    for (slot, gj) in new_gk.iter_mut().zip(cur.g[j].iter()) {
                        if gj.is_zero() {
                            continue;
                        }
                        *slot = Expr::add(vec![
                            std::mem::replace(slot, Expr::zero()),
                            Expr::mul(vec![Expr::int(-1), c.clone(), gj.clone()]),
                        ]);
                    }
                }
                cur.g[d + k] = new_gk;
            }
            let mut notes = Vec::new();
            for j in 0..d {
                let mut parts = vec![cur.unknown_inputs[j].clone()];
                for (k, crow) in coef.iter().enumerate() {
                    if crow[j].is_zero() {
                        continue;
                    }
                    parts.push(format!(
                        "+ ({}) * {}",
                        crow[j].display(&cur.table),
                        cur.unknown_inputs[d + k]
                    ));
                }
                if parts.len() > 1 {
                    notes.push(format!(
                        "{} -> {}",
                        cur.unknown_inputs[j],
                        parts.join(" ")
                    ));
                }
            }
            log.push(TransformEntry {
                op: TransformOp::InputChange { d, coef },
                note: notes.join("; "),
            });
        }

        // absorb the leading d inputs into the state
        let n_old = cur.n();
        let mut state_names = Vec::with_capacity(d);
        let mut new_inputs = Vec::with_capacity(d);
        for j in 0..d {
            let mut name = cur.unknown_inputs[j].clone();
            while cur.table.get(&name).is_some() {
                name.push('_');
            }
            let id = cur.table.intern(&name);
            cur.states.push(id);
            state_names.push(name);
            new_inputs.push(next_deriv_name(&cur.unknown_inputs[j]));
        }
        let mut drift: Vec<Expr> = (0..n_old)
            .map(|r| {
                let mut terms = vec![cur.drift[r].clone()];
                for j in 0..d {
                    if cur.g[j][r].is_zero() {
                        continue;
                    }
                    terms.push(Expr::mul(vec![
                        cur.g[j][r].clone(),
                        Expr::sym(cur.states[n_old + j]),
                    ]));
                }
                Expr::add(terms)
            })
            .collect();
        drift.extend(std::iter::repeat(Expr::zero()).take(d));
        cur.drift = drift;
        for f in cur.f.iter_mut() {
            f.extend(std::iter::repeat(Expr::zero()).take(d));
        }
        for (j, name) in new_inputs.iter().enumerate() {
            let mut v = vec![Expr::zero(); n_old + d];
            v[n_old + j] = Expr::one();
            cur.g[j] = v;
            cur.unknown_inputs[j] = name.clone();
        }
        for k in d..mw {
            cur.g[k].extend(std::iter::repeat(Expr::zero()).take(d));
        }
        cur.symmetries.clear();
        plan.grow(cur.table.len());
        log.push(TransformEntry {
            op: TransformOp::Augment {
                states: state_names.clone(),
                new_inputs: new_inputs.clone(),
            },
            note: format!(
                "state gains [{}]; unknown inputs become [{}]",
                state_names.join(", "),
                cur.unknown_inputs.join(", ")
            ),
        });
    }

    // the mixing change should have removed every trailing-input
    // dependency from the old members' derivatives
    let mut probe = Probe::new(plan, cur.base_guards(), 0xF00D << 8);
    for m in &fs.members {
        for k in d..mw {
            let res = lie_scalar(&m.expr, &cur.g[k], &cur.states);
            if res.is_zero() {
                continue;
            }
            let pts = probe.pts(&[&res])?;
            if !span::numerically_zero(&res, &pts, ZERO_TOL) {
                warnings.push(format!(
                    "derivative of {} along trailing input {} did not vanish after mixing",
                    m.name,
                    cur.unknown_inputs[k]
                ));
            }
        }
    }
    // grow the space with the drift derivatives of the old members
    // (which now see the absorbed inputs as state components)
    grow_with_drift(cur, fs, "L_G ", plan)?;
    if !fs.saturated && !warnings.iter().any(|w| w.contains("depth cap")) {
        warnings.push("function-space closure hit its depth cap while still growing".into());
    }
    Ok(())
}

/// Full canonization: repeat the rewrite step until the unknown-input
/// rank of the function space reaches m_w, or a stagnating rank proves
/// the trailing inputs spurious.
pub fn canonize_general(
    model: &Model,
    plan: &SamplePlan,
    max_aug: Option<usize>,
    opts: &AnalysisOpts,
) -> Result<CanonizationResult, CanonError> {
    if model.m_w() == 0 {
        return Err(CanonError::Precondition(
            "canonization needs at least one unknown input".into(),
        ));
    }
    let depth_cap = closure_depth(model, opts);
    let max_aug = max_aug.unwrap_or(2 * model.n());
    let mut cur = model.clone();
    let mut plan2 = plan.clone();
    let mut log: Vec<TransformEntry> = Vec::new();
    let mut warnings: Vec<String> = Vec::new();
    let mut trace: Vec<usize> = Vec::new();

    let mut fs = build_function_space(&cur, depth_cap, &plan2)?;
    if !fs.saturated {
        warnings.push("function-space closure hit its depth cap while still growing".into());
    }
    let mut sel = dw_selection(&cur, &fs, &plan2, 1 << 43)?;
    trace.push(sel.d);
    let canonic_result = |cur: Model,
                          fs: FunctionSpace,
                          sel: &DwSelection,
                          log: Vec<TransformEntry>,
                          spurious: Vec<String>,
                          warnings: Vec<String>| {
        let h_sel = selection_to_functions(&cur, &fs, &sel.picked);
        CanonizationResult {
            model_out: cur,
            h_sel,
            transform_log: log,
            spurious,
            canonic: true,
            function_space: fs,
            warnings,
        }
    };
    if sel.d == cur.m_w() {
        return Ok(canonic_result(cur, fs, &sel, log, Vec::new(), warnings));
    }

    let mut guard = 0usize;
    apply_step(&mut cur, &mut fs, &sel, &mut plan2, &mut log, &mut warnings)?;
    let mut d_old = sel.d;
    sel = dw_selection(&cur, &fs, &plan2, 1 << 44)?;
    trace.push(sel.d);
    if sel.d == cur.m_w() {
        return Ok(canonic_result(cur, fs, &sel, log, Vec::new(), warnings));
    }

    loop {
        guard += 1;
        let aug_count = log
            .iter()
            .filter(|e| matches!(e.op, TransformOp::Augment { .. }))
            .count();
        if aug_count > max_aug || guard > max_aug + cur.n() + 4 {
            return Err(CanonError::NoTermination { max_aug, trace });
        }
        if sel.d < d_old {
            return Err(CanonError::RankRegression {
                prev: d_old,
                got: sel.d,
            });
        }
        if sel.d == d_old {
            // rank stagnated: settle what the leading d inputs alone can
            // observe, then watch for the function space to absorb it
            let omega_star: Option<Vec<Vec<Expr>>> = if sel.d == 0 {
                let mut known_only = cur.clone();
                known_only.g.clear();
                known_only.unknown_inputs.clear();
                let rep = obs::orc(&known_only, &plan2, opts)?;
                Some(rep.omega)
            } else {
                let mut truncated = cur.clone();
                truncated.g.truncate(sel.d);
                truncated.unknown_inputs.truncate(sel.d);
                // reselect against the leading inputs only, so the
                // derivative block of the chosen functions is invertible
                let tsel =
                    dw_selection(&truncated, &fs, &plan2, (1 << 45) + guard as u64)?;
                if tsel.d < sel.d {
                    // the leading inputs cannot carry the stagnant rank
                    // here; keep transforming instead of testing
                    None
                } else {
                    let sub_sel = selection_to_functions(&truncated, &fs, &tsel.picked);
                    let rep = obs::omega_general(&truncated, &sub_sel, &plan2, opts)?;
                    Some(rep.omega)
                }
            };
            loop {
                // containment of the settled span in the function space
                let contained = match &omega_star {
                    None => false,
                    Some(os) => {
                        let dfs = fs.differentials(&cur.states);
                        let mut filt = Filtration::new(&plan2, cur.base_guards());
                        let padded: Vec<(Vec<Expr>, String)> = os
                            .iter()
                            .map(|w| {
                                let mut v = w.clone();
                                v.resize(cur.n(), Expr::zero());
                                (v, String::new())
                            })
                            .collect();
                        let seed: Vec<(Vec<Expr>, String)> = dfs
                            .iter()
                            .map(|w| (w.clone(), String::new()))
                            .collect();
                        filt.step_begin(&seed)?;
                        filt.step_begin(&padded)?;
                        for w in &dfs {
                            filt.add(w.clone(), String::new())?;
                        }
                        let mut all = true;
                        for (w, _) in &padded {
                            if !filt.contains(w)? {
                                all = false;
                                break;
                            }
                        }
                        all
                    }
                };
                if contained {
                    let spurious: Vec<String> = cur.unknown_inputs[sel.d..].to_vec();
                    let mut out = cur.clone();
                    out.g.truncate(sel.d);
                    out.unknown_inputs.truncate(sel.d);
                    let final_sel = DwSelection {
                        d: sel.d,
                        picked: sel.picked.clone(),
                        gamma: sel
                            .gamma
                            .iter()
                            .map(|row| row[..sel.d].to_vec())
                            .collect(),
                    };
                    return Ok(canonic_result(
                        out, fs, &final_sel, log, spurious, warnings,
                    ));
                }
                apply_step(&mut cur, &mut fs, &sel, &mut plan2, &mut log, &mut warnings)?;
                sel = dw_selection(&cur, &fs, &plan2, (1 << 46) + guard as u64)?;
                trace.push(sel.d);
                if sel.d == cur.m_w() {
                    return Ok(canonic_result(cur, fs, &sel, log, Vec::new(), warnings));
                }
                if sel.d != d_old {
                    break;
                }
                guard += 1;
                let aug_count = log
                    .iter()
                    .filter(|e| matches!(e.op, TransformOp::Augment { .. }))
                    .count();
                if aug_count > max_aug || guard > max_aug + cur.n() + 4 {
                    return Err(CanonError::NoTermination { max_aug, trace });
                }
            }
        }
        apply_step(&mut cur, &mut fs, &sel, &mut plan2, &mut log, &mut warnings)?;
        d_old = sel.d;
        sel = dw_selection(&cur, &fs, &plan2, (1 << 47) + guard as u64)?;
        trace.push(sel.d);
        if sel.d == cur.m_w() {
            return Ok(canonic_result(cur, fs, &sel, log, Vec::new(), warnings));
        }
    }
}

/// Re-apply a transform log to the model it was produced from.
pub fn replay_transforms(model: &Model, log: &[TransformEntry]) -> Model {
    let mut cur = model.clone();
    for entry in log {
        match &entry.op {
            TransformOp::Reorder { perm } => permute_inputs(&mut cur, perm),
            TransformOp::InputChange { d, coef } => {
                for (k, crow) in coef.iter().enumerate() {
                    let mut new_gk = cur.g[d + k].clone();
                    for (j, c) in crow.iter().enumerate() {
                        if c.is_zero() {
                            continue;
                        }
                        for (slot, gj) in new_gk.iter_mut().zip(cur.g[j].iter()) {
                            if gj.is_zero() {
                                continue;
                            }
                            *slot = Expr::add(vec![
                                std::mem::replace(slot, Expr::zero()),
                                Expr::mul(vec![Expr::int(-1), c.clone(), gj.clone()]),
                            ]);
                        }
                    }
                    cur.g[*d + k] = new_gk;
                }
            }
            TransformOp::Augment { states, new_inputs } => {
                let d = states.len();
                let n_old = cur.n();
                for name in states {
                    let id = cur.table.intern(name);
                    cur.states.push(id);
                }
                let mut drift: Vec<Expr> = (0..n_old)
                    .map(|r| {
                        let mut terms = vec![cur.drift[r].clone()];
                        for j in 0..d {
                            if cur.g[j][r].is_zero() {
                                continue;
                            }
                            terms.push(Expr::mul(vec![
                                cur.g[j][r].clone(),
                                Expr::sym(cur.states[n_old + j]),
                            ]));
                        }
                        Expr::add(terms)
                    })
                    .collect();
                drift.extend(std::iter::repeat(Expr::zero()).take(d));
                cur.drift = drift;
                for f in cur.f.iter_mut() {
                    f.extend(std::iter::repeat(Expr::zero()).take(d));
                }
                for (j, name) in new_inputs.iter().enumerate() {
                    let mut v = vec![Expr::zero(); n_old + d];
                    v[n_old + j] = Expr::one();
                    cur.g[j] = v;
                    cur.unknown_inputs[j] = name.clone();
                }
                let mw = cur.m_w();
                for k in d..mw {
                    cur.g[k].extend(std::iter::repeat(Expr::zero()).take(d));
                }
                cur.symmetries.clear();
            }
        }
    }
    cur
}

/// Accept the candidates whose differentials the extended-state
/// filtration absorbs. `k` sets a floor on the extension depth; the
/// search runs the filtration until every candidate is in, the rank
/// stalls, or the depth bound is hit.
pub fn shortcut_outputs(
    model: &Model,
    candidates: &[(String, Expr)],
    k: usize,
    plan: &SamplePlan,
    opts: &AnalysisOpts,
) -> Result<Vec<(String, Expr)>, CanonError> {
    let cap = k.max(opts.max_steps.unwrap_or(model.n() + 2).min(8)).max(1);
    let ext = obs::extend_model(model, cap);
    let evars: Vec<SymId> = ext.states.clone();
    let n = model.n();
    let mw = model.m_w();
    let mut eplan = plan.clone();
    eplan.grow(ext.table.len());

    let mut filt = Filtration::new(&eplan, ext.base_guards());
    for j in 0..mw {
        filt.require_nonzero(&Expr::sym(ext.states[n + j]));
    }
    let want: Vec<Vec<Expr>> = candidates
        .iter()
        .map(|(_, e)| gradient(e, &evars))
        .collect();
    for w in &want {
        filt.note_field(w);
    }
    let mut accepted = vec![false; candidates.len()];

    let cands0: Vec<(Vec<Expr>, String)> = ext
        .outputs
        .iter()
        .map(|o| (gradient(&o.expr, &evars), format!("D {}", o.name)))
        .collect();
    filt.step_begin(&cands0)?;
    for (w, l) in cands0 {
        filt.add(w, l)?;
    }
    let mut all_in = true;
    for (flag, w) in accepted.iter_mut().zip(want.iter()) {
        *flag = filt.contains(w)?;
        all_in &= *flag;
    }

    let mut fields: Vec<(String, Vec<Expr>)> = vec![("G".to_string(), ext.drift.clone())];
    for (i, f) in ext.f.iter().enumerate() {
        fields.push((format!("F[{}]", ext.known_inputs[i]), f.clone()));
    }
    let mut prev = filt.rank()?;
    for _m in 1..=cap {
        if all_in {
            break;
        }
        let cands: Vec<(Vec<Expr>, String)> = {
            let mut out = Vec::new();
            for gi in 0..filt.ws.len() {
                for (fl, f) in &fields {
                    let w = lie_covector(&filt.ws[gi], f, &evars);
                    out.push((w, format!("L_{} {}", fl, filt.labels[gi])));
                }
            }
            out
        };
        filt.step_begin(&cands)?;
        for (w, l) in cands {
            filt.add(w, l)?;
        }
        let rank = filt.rank()?;
        all_in = true;
        for (flag, w) in accepted.iter_mut().zip(want.iter()) {
            if !*flag {
                *flag = filt.contains(w)?;
            }
            all_in &= *flag;
        }
        if rank == prev {
            break;
        }
        prev = rank;
    }
    Ok(candidates
        .iter()
        .zip(accepted.iter())
        .filter(|(_, &a)| a)
        .map(|(c, _)| c.clone())
        .collect())
}
