//! Numeric engine for codistributions spanned by symbolic covectors.
//!
//! Ranks and memberships of codistributions are decided at randomized
//! sample points: the generic rank is the max over the points, membership
//! must hold at every point. Points are drawn from per-symbol ranges with
//! a seeded ChaCha stream, so every verdict is reproducible, and guard
//! expressions (denominators and friends) keep the draw away from the
//! obvious singular sets.

use crate::expr::{evaluate, Expr, Node};
use nalgebra::DMatrix;
use std::collections::HashSet;
use thiserror::Error;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Error)]
pub enum SpanError {
    #[error("could not find a non-degenerate sample point after {0} attempts")]
    Degenerate(usize),
    #[error("only {got} of {need} sample points were usable")]
    TooFewPoints { got: usize, need: usize },
    #[error("dimension mismatch: covector has {got} entries, state has {want}")]
    Dimension { got: usize, want: usize },
}

/// How to sample evaluation points.
#[derive(Debug, Clone)]
pub struct SamplePlan {
    pub seed: u64,
    /// points per rank/membership decision
    pub point_count: usize,
    /// per-symbol sampling intervals, indexed by `SymId`
    pub ranges: Vec<(f64, f64)>,
    /// relative singular-value cutoff for ranks
    pub rank_tol: f64,
    /// least-squares residual threshold for membership
    pub membership_tol: f64,
    /// attempts per point before giving up on the guards
    pub max_resamples: usize,
    /// guard magnitude below which a point counts as singular
    pub guard_tol: f64,
}

impl SamplePlan {
    pub fn new(seed: u64, n_syms: usize) -> Self {
        SamplePlan {
            seed,
            point_count: 5,
            ranges: vec![(-2.0, 2.0); n_syms],
            rank_tol: 1e-8,
            membership_tol: 1e-6,
            max_resamples: 50,
            guard_tol: 1e-6,
        }
    }

    /// Ensure the range table covers ids up to `n_syms` (new symbols get
    /// the default interval). Extended states grow the table this way.
    pub fn grow(&mut self, n_syms: usize) {
        while self.ranges.len() < n_syms {
            self.ranges.push((-2.0, 2.0));
        }
    }

    /// Draw `point_count` points satisfying all guards. `round` salts the
    /// stream so successive algorithm steps get fresh but reproducible
    /// points.
    pub fn sample(&self, round: u64, guards: &[Expr]) -> Result<Vec<Vec<f64>>, SpanError> {
        let mut rng =
            ChaCha8Rng::seed_from_u64(self.seed ^ round.wrapping_mul(0x9e3779b97f4a7c15));
        let mut pts = Vec::with_capacity(self.point_count);
        for _ in 0..self.point_count {
            let mut ok = false;
            for _ in 0..self.max_resamples.max(1) {
                let p: Vec<f64> = self
                    .ranges
                    .iter()
                    .map(|&(lo, hi)| rng.gen_range(lo..hi))
                    .collect();
                if self.point_ok(&p, guards) {
                    pts.push(p);
                    ok = true;
                    break;
                }
            }
            if !ok {
                return Err(SpanError::Degenerate(self.max_resamples));
            }
        }
        Ok(pts)
    }

    fn point_ok(&self, p: &[f64], guards: &[Expr]) -> bool {
        guards.iter().all(|g| {
            let v = evaluate(g, p);
            v.is_finite() && v.abs() > self.guard_tol
        })
    }
}

/// Collect guard expressions out of an expression tree: quotient
/// denominators, cosines of tangent arguments (tan poles), and square-root
/// arguments (kept positive).
pub fn collect_guards(e: &Expr, out: &mut Vec<Expr>, seen: &mut HashSet<u64>) {
    let push = |g: Expr, out: &mut Vec<Expr>, seen: &mut HashSet<u64>| {
        if !g.is_zero() && g.as_num().is_none() && seen.insert(g.hash()) {
            out.push(g);
        }
    };
    match e.node() {
        Node::Num(_) | Node::Sym(_) => {}
        Node::Add(ts) | Node::Mul(ts) => {
            for t in ts {
                collect_guards(t, out, seen);
            }
        }
        Node::Div(a, b) => {
            push(b.clone(), out, seen);
            collect_guards(a, out, seen);
            collect_guards(b, out, seen);
        }
        Node::Pow(b, _) => collect_guards(b, out, seen),
        Node::Tan(u) => {
            push(Expr::cos(u.clone()), out, seen);
            collect_guards(u, out, seen);
        }
        Node::Sqrt(u) => {
            // guarding the root itself rejects both near-zero and negative
            // arguments (NaN fails the finiteness check)
            push(Expr::sqrt(u.clone()), out, seen);
            collect_guards(u, out, seen);
        }
        Node::Sin(u) | Node::Cos(u) | Node::Atan(u) => collect_guards(u, out, seen),
    }
}

/// Guard set for a whole family of expressions.
pub fn guards_of<'a>(exprs: impl IntoIterator<Item = &'a Expr>) -> Vec<Expr> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for e in exprs {
        collect_guards(e, &mut out, &mut seen);
    }
    out
}

fn eval_matrix(gens: &[Vec<Expr>], p: &[f64]) -> Option<DMatrix<f64>> {
    let rows = gens.len();
    let cols = gens.first().map(|g| g.len()).unwrap_or(0);
    let mut m = DMatrix::zeros(rows, cols);
    for (i, g) in gens.iter().enumerate() {
        for (j, e) in g.iter().enumerate() {
            let v = evaluate(e, p);
            if !v.is_finite() {
                return None;
            }
            m[(i, j)] = v;
        }
    }
    Some(m)
}

fn rank_of(m: &DMatrix<f64>, tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let svd = m.clone().svd(false, false);
    let smax = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    if smax <= 0.0 || !smax.is_finite() {
        return 0;
    }
    svd.singular_values.iter().filter(|&&s| s > tol * smax).count()
}

/// Generic rank of the span: max numeric rank over the sample points.
/// At least three points must be usable (finite evaluations) unless fewer
/// were requested.
pub fn generic_rank(
    gens: &[Vec<Expr>],
    pts: &[Vec<f64>],
    rank_tol: f64,
) -> Result<usize, SpanError> {
    if gens.is_empty() {
        return Ok(0);
    }
    let mut best = 0;
    let mut usable = 0;
    for p in pts {
        if let Some(m) = eval_matrix(gens, p) {
            usable += 1;
            best = best.max(rank_of(&m, rank_tol));
        }
    }
    let need = pts.len().min(3);
    if usable < need {
        return Err(SpanError::TooFewPoints {
            got: usable,
            need,
        });
    }
    Ok(best)
}

/// Membership of a covector in the span, decided by least-squares
/// residual at every usable sample point.
pub fn contains(
    gens: &[Vec<Expr>],
    w: &[Expr],
    pts: &[Vec<f64>],
    membership_tol: f64,
) -> Result<bool, SpanError> {
    if let Some(g0) = gens.first() {
        if g0.len() != w.len() {
            return Err(SpanError::Dimension {
                got: w.len(),
                want: g0.len(),
            });
        }
    }
    let mut usable = 0;
    for p in pts {
        let wv: Vec<f64> = w.iter().map(|e| evaluate(e, p)).collect();
        if wv.iter().any(|v| !v.is_finite()) {
            continue;
        }
        let wn = nalgebra::DVector::from_vec(wv);
        let norm = wn.norm();
        let residual = if gens.is_empty() {
            norm
        } else {
            match eval_matrix(gens, p) {
                None => continue,
                Some(m) => {
                    // min over c of |m^T c - w|
                    let mt = m.transpose();
                    let svd = mt.clone().svd(true, true);
                    match svd.solve(&wn, 1e-12) {
                        Ok(c) => (&mt * c - &wn).norm(),
                        Err(_) => continue,
                    }
                }
            }
        };
        usable += 1;
        if residual >= membership_tol * (1.0 + norm) {
            return Ok(false);
        }
    }
    let need = pts.len().min(3);
    if usable < need {
        return Err(SpanError::TooFewPoints { got: usable, need });
    }
    Ok(true)
}

/// Concatenate generator families, dropping exact duplicates.
pub fn sum(a: &[Vec<Expr>], b: &[Vec<Expr>]) -> Vec<Vec<Expr>> {
    let mut out: Vec<Vec<Expr>> = a.to_vec();
    for g in b {
        if !out.iter().any(|h| h == g) {
            out.push(g.clone());
        }
    }
    out
}

/// Numeric basis of the orthogonal distribution at one point: right
/// singular vectors of the generator matrix with negligible singular
/// value.
pub fn orthogonal_at(gens: &[Vec<Expr>], p: &[f64], n: usize, rank_tol: f64) -> Vec<Vec<f64>> {
    if gens.is_empty() {
        return (0..n)
            .map(|i| {
                let mut e = vec![0.0; n];
                e[i] = 1.0;
                e
            })
            .collect();
    }
    let mut m = match eval_matrix(gens, p) {
        Some(m) => m,
        None => return Vec::new(),
    };
    // pad with zero rows so the thin SVD carries the full right basis
    if m.nrows() < n {
        let extra = n - m.nrows();
        let at = m.nrows();
        m = m.insert_rows(at, extra, 0.0);
    }
    let svd = m.svd(false, true);
    let vt = svd.v_t.expect("asked for v_t");
    let smax = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    let mut out = Vec::new();
    for i in 0..vt.nrows() {
        let s = if i < svd.singular_values.len() {
            svd.singular_values[i]
        } else {
            0.0
        };
        if smax <= 0.0 || s <= rank_tol * smax {
            out.push(vt.row(i).iter().cloned().collect());
        }
    }
    out
}

/// Check that a symbolic vector field annihilates every generator at every
/// sample point, with a scale-normalized residual.
pub fn verify_symmetry(
    gens: &[Vec<Expr>],
    field: &[Expr],
    pts: &[Vec<f64>],
    tol: f64,
) -> Result<bool, SpanError> {
    let mut usable = 0;
    for p in pts {
        let fv: Vec<f64> = field.iter().map(|e| evaluate(e, p)).collect();
        if fv.iter().any(|v| !v.is_finite()) {
            continue;
        }
        let fnorm = fv.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut point_ok = true;
        for g in gens {
            let gv: Vec<f64> = g.iter().map(|e| evaluate(e, p)).collect();
            if gv.iter().any(|v| !v.is_finite()) {
                point_ok = false;
                break;
            }
            let gnorm = gv.iter().map(|v| v * v).sum::<f64>().sqrt();
            let dot: f64 = gv.iter().zip(&fv).map(|(a, b)| a * b).sum();
            if dot.abs() / ((1.0 + gnorm) * (1.0 + fnorm)) >= tol {
                return Ok(false);
            }
        }
        if point_ok {
            usable += 1;
        }
    }
    let need = pts.len().min(3);
    if usable < need {
        return Err(SpanError::TooFewPoints { got: usable, need });
    }
    Ok(true)
}

/// Probabilistic zero test: literally zero, or vanishing at every point.
pub fn numerically_zero(e: &Expr, pts: &[Vec<f64>], tol: f64) -> bool {
    if e.is_zero() {
        return true;
    }
    let mut usable = 0;
    for p in pts {
        let v = evaluate(e, p);
        if !v.is_finite() {
            continue;
        }
        usable += 1;
        if v.abs() > tol {
            return false;
        }
    }
    usable > 0
}

/// Zero test for a whole field.
pub fn numerically_zero_field(f: &[Expr], pts: &[Vec<f64>], tol: f64) -> bool {
    f.iter().all(|e| numerically_zero(e, pts, tol))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse_expr, SymbolTable};
    use num_bigint::BigInt;
    use num_rational::BigRational;

    fn exprs(t: &mut SymbolTable, srcs: &[&str]) -> Vec<Expr> {
        srcs.iter().map(|s| parse_expr(s, t).unwrap()).collect()
    }

    /// Exact rank over the rationals by fraction-free elimination, for
    /// polynomial covectors evaluated at rational points. Independent of
    /// the SVD path.
    fn exact_rank(rows: &[Vec<BigRational>]) -> usize {
        let mut m: Vec<Vec<BigRational>> = rows.to_vec();
        let (nr, nc) = (m.len(), m.first().map(|r| r.len()).unwrap_or(0));
        let mut rank = 0;
        let mut col = 0;
        use num_traits::Zero;
        while rank < nr && col < nc {
            let piv = (rank..nr).find(|&i| !m[i][col].is_zero());
            match piv {
                None => col += 1,
                Some(p) => {
                    m.swap(rank, p);
                    for i in 0..nr {
                        if i != rank && !m[i][col].is_zero() {
                            let factor = &m[i][col] / &m[rank][col];
                            for j in col..nc {
                                let s = &m[rank][j] * &factor;
                                m[i][j] = &m[i][j] - s;
                            }
                        }
                    }
                    rank += 1;
                    col += 1;
                }
            }
        }
        rank
    }

    fn eval_rational(e: &Expr, p: &[BigRational]) -> BigRational {
        use crate::expr::Node;
        match e.node() {
            Node::Num(r) => r.clone(),
            Node::Sym(s) => p[*s as usize].clone(),
            Node::Add(ts) => ts
                .iter()
                .map(|t| eval_rational(t, p))
                .fold(BigRational::from(BigInt::from(0)), |a, b| a + b),
            Node::Mul(fs) => fs
                .iter()
                .map(|f| eval_rational(f, p))
                .fold(BigRational::from(BigInt::from(1)), |a, b| a * b),
            Node::Div(a, b) => eval_rational(a, p) / eval_rational(b, p),
            Node::Pow(b, k) => {
                let base = eval_rational(b, p);
                let mut acc = BigRational::from(BigInt::from(1));
                for _ in 0..k.unsigned_abs() {
                    acc *= &base;
                }
                if *k < 0 {
                    acc.recip()
                } else {
                    acc
                }
            }
            _ => panic!("rational oracle only covers polynomial forms"),
        }
    }

    #[test]
    fn generic_rank_matches_exact_rational_rank() {
        let mut t = SymbolTable::new();
        // three covectors over (x, y, z); the third is x*(first) + (second)
        let g1 = exprs(&mut t, &["1", "x", "x^2"]);
        let g2 = exprs(&mut t, &["y", "0", "1"]);
        let g3 = exprs(
            &mut t,
            &["x + y", "x^2", "x^3 + 1"],
        );
        let gens = vec![g1, g2, g3];

        let plan = SamplePlan::new(42, t.len());
        let pts = plan.sample(0, &[]).unwrap();
        let numeric = generic_rank(&gens, &pts, plan.rank_tol).unwrap();

        // exact rank at an arbitrary rational point
        let rp: Vec<BigRational> = vec![
            BigRational::new(BigInt::from(3), BigInt::from(2)),
            BigRational::new(BigInt::from(-5), BigInt::from(7)),
            BigRational::new(BigInt::from(1), BigInt::from(3)),
        ];
        let rows: Vec<Vec<BigRational>> = gens
            .iter()
            .map(|g| g.iter().map(|e| eval_rational(e, &rp)).collect())
            .collect();
        assert_eq!(numeric, exact_rank(&rows));
        assert_eq!(numeric, 2);
    }

    #[test]
    fn rank_is_generic_not_pointwise() {
        let mut t = SymbolTable::new();
        // rank drops to 1 only on the line x = 0; generic rank is 2
        let gens = vec![exprs(&mut t, &["1", "0"]), exprs(&mut t, &["0", "x"])];
        let plan = SamplePlan::new(7, t.len());
        let pts = plan.sample(0, &[]).unwrap();
        assert_eq!(generic_rank(&gens, &pts, plan.rank_tol).unwrap(), 2);
    }

    #[test]
    fn membership_positive_and_negative() {
        let mut t = SymbolTable::new();
        let gens = vec![exprs(&mut t, &["1", "x", "0"]), exprs(&mut t, &["0", "1", "0"])];
        let inside = exprs(&mut t, &["2", "2*x + 3", "0"]);
        let outside = exprs(&mut t, &["0", "0", "1"]);
        let plan = SamplePlan::new(3, t.len());
        let pts = plan.sample(0, &[]).unwrap();
        assert!(contains(&gens, &inside, &pts, plan.membership_tol).unwrap());
        assert!(!contains(&gens, &outside, &pts, plan.membership_tol).unwrap());
    }

    #[test]
    fn membership_with_state_dependent_combination() {
        let mut t = SymbolTable::new();
        // w = y*g1 + g2 pointwise, a combination with non-constant coefficients
        let gens = vec![
            exprs(&mut t, &["1", "0", "x"]),
            exprs(&mut t, &["0", "1", "y"]),
        ];
        let w = exprs(&mut t, &["y", "1", "x*y + y"]);
        let plan = SamplePlan::new(5, t.len());
        let pts = plan.sample(0, &[]).unwrap();
        assert!(contains(&gens, &w, &pts, plan.membership_tol).unwrap());
    }

    #[test]
    fn sum_deduplicates() {
        let mut t = SymbolTable::new();
        let a = vec![exprs(&mut t, &["1", "x"])];
        let b = vec![exprs(&mut t, &["1", "x"]), exprs(&mut t, &["0", "1"])];
        let s = sum(&a, &b);
        assert_eq!(s.len(), 2);
    }

    #[test]
    fn sum_rank_equals_recomputed_rank() {
        // rank(sum(A,B)) computed two ways: via sum() and via a fresh
        // generator list built by hand
        let mut t = SymbolTable::new();
        let a = vec![exprs(&mut t, &["1", "x", "0"])];
        let b = vec![exprs(&mut t, &["1", "0", "y"]), exprs(&mut t, &["2", "x", "y"])];
        let plan = SamplePlan::new(11, t.len());
        let pts = plan.sample(0, &[]).unwrap();
        let s = sum(&a, &b);
        let direct: Vec<Vec<Expr>> = a.iter().chain(b.iter()).cloned().collect();
        assert_eq!(
            generic_rank(&s, &pts, plan.rank_tol).unwrap(),
            generic_rank(&direct, &pts, plan.rank_tol).unwrap()
        );
    }

    #[test]
    fn guards_keep_points_off_singularities() {
        let mut t = SymbolTable::new();
        let e = parse_expr("1 / (x - 1) + tan(y) + sqrt(z)", &mut t).unwrap();
        let guards = guards_of([&e]);
        // x-1, cos(y), z
        assert_eq!(guards.len(), 3);
        let plan = SamplePlan::new(9, t.len());
        let pts = plan.sample(0, &guards).unwrap();
        for p in &pts {
            let v = crate::expr::evaluate(&e, p);
            assert!(v.is_finite());
            assert!((p[t.get("x").unwrap() as usize] - 1.0).abs() > plan.guard_tol);
            assert!(p[t.get("z").unwrap() as usize] > 0.0);
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let plan = SamplePlan::new(1234, 4);
        let a = plan.sample(2, &[]).unwrap();
        let b = plan.sample(2, &[]).unwrap();
        assert_eq!(a, b);
        let c = plan.sample(3, &[]).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn orthogonal_distribution_annihilates_span() {
        let mut t = SymbolTable::new();
        let gens = vec![exprs(&mut t, &["1", "0", "x"]), exprs(&mut t, &["0", "1", "0"])];
        let plan = SamplePlan::new(21, t.len());
        let pts = plan.sample(0, &[]).unwrap();
        let p = &pts[0];
        let basis = orthogonal_at(&gens, p, 3, plan.rank_tol);
        assert_eq!(basis.len(), 1);
        for g in &gens {
            let gv: Vec<f64> = g.iter().map(|e| crate::expr::evaluate(e, p)).collect();
            let dot: f64 = gv.iter().zip(&basis[0]).map(|(a, b)| a * b).sum();
            assert!(dot.abs() < 1e-8);
        }
    }

    #[test]
    fn symmetry_verification() {
        let mut t = SymbolTable::new();
        // span{dx, dy} over (x,y,theta): rotation around theta is a symmetry
        let gens = vec![exprs(&mut t, &["1", "0", "0"]), exprs(&mut t, &["0", "1", "0"])];
        let sym_ok = exprs(&mut t, &["0", "0", "1"]);
        let sym_bad = exprs(&mut t, &["1", "0", "1"]);
        let plan = SamplePlan::new(17, t.len());
        let pts = plan.sample(0, &[]).unwrap();
        assert!(verify_symmetry(&gens, &sym_ok, &pts, 1e-6).unwrap());
        assert!(!verify_symmetry(&gens, &sym_bad, &pts, 1e-6).unwrap());
    }

    #[test]
    fn zero_detection() {
        let mut t = SymbolTable::new();
        let e = parse_expr("sin(x)^2 + cos(x)^2 - 1", &mut t).unwrap();
        let plan = SamplePlan::new(2, t.len());
        let pts = plan.sample(0, &[]).unwrap();
        assert!(numerically_zero(&e, &pts, 1e-9));
        let ne = parse_expr("sin(x)^2 - cos(x)^2", &mut t).unwrap();
        assert!(!numerically_zero(&ne, &pts, 1e-9));
    }
}
