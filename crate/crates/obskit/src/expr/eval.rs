use super::{Expr, Node};
use num_traits::ToPrimitive;
use std::collections::HashMap;
use std::sync::Arc;

/// Evaluate at a point; `vals` is indexed by `SymId`.
///
/// Near-singular quotients (|denominator| < 1e-12) and friends propagate as
/// NaN — the sampling layer treats non-finite results as a degenerate point
/// and resamples.
pub fn evaluate(e: &Expr, vals: &[f64]) -> f64 {
    let mut memo: HashMap<usize, f64> = HashMap::new();
    ev(e, vals, &mut memo)
}

const SINGULAR_DEN: f64 = 1e-12;

fn ev(e: &Expr, vals: &[f64], memo: &mut HashMap<usize, f64>) -> f64 {
    let key = Arc::as_ptr(&e.0) as usize;
    if let Some(&r) = memo.get(&key) {
        return r;
    }
    let out = match e.node() {
        Node::Num(r) => r.to_f64().unwrap_or(f64::NAN),
        Node::Sym(s) => vals[*s as usize],
        Node::Add(ts) => ts.iter().map(|t| ev(t, vals, memo)).sum(),
        Node::Mul(fs) => fs.iter().map(|f| ev(f, vals, memo)).product(),
        Node::Div(a, b) => {
            let den = ev(b, vals, memo);
            if den.abs() < SINGULAR_DEN {
                f64::NAN
            } else {
                ev(a, vals, memo) / den
            }
        }
        Node::Pow(b, k) => ev(b, vals, memo).powi(*k),
        Node::Sin(u) => ev(u, vals, memo).sin(),
        Node::Cos(u) => ev(u, vals, memo).cos(),
        Node::Tan(u) => ev(u, vals, memo).tan(),
        Node::Atan(u) => ev(u, vals, memo).atan(),
        Node::Sqrt(u) => ev(u, vals, memo).sqrt(),
    };
    memo.insert(key, out);
    out
}

#[cfg(test)]
mod tests {
    use super::super::{parse_expr, SymbolTable};
    use super::*;

    #[test]
    fn evaluates_composite() {
        let mut t = SymbolTable::new();
        let e = parse_expr("sin(x)^2 + cos(x)^2", &mut t).unwrap();
        let x = t.get("x").unwrap();
        let mut vals = vec![0.0; t.len()];
        vals[x as usize] = 0.37;
        assert!((evaluate(&e, &vals) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exact_rational_constants() {
        let mut t = SymbolTable::new();
        let e = parse_expr("0.1 + 0.2", &mut t).unwrap();
        // folded exactly as rationals before any float conversion
        assert_eq!(e, super::super::Expr::frac(3, 10));
        assert!((evaluate(&e, &[]) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn division_by_zero_is_non_finite() {
        let mut t = SymbolTable::new();
        let e = parse_expr("1 / x", &mut t).unwrap();
        let v = evaluate(&e, &[0.0]);
        assert!(!v.is_finite());
        // near-singular denominators are flagged too, not just exact zero
        assert!(!evaluate(&e, &[1e-13]).is_finite());
        assert!(evaluate(&e, &[1e-3]).is_finite());
    }
}
