use super::{Expr, Node, SymId};
use std::collections::HashMap;
use std::sync::Arc;

/// Exact partial derivative with respect to one symbol.
///
/// Subtrees are shared through `Arc`, so a per-call memo keyed on the
/// allocation keeps repeated subexpressions from being re-derived.
pub fn differentiate(e: &Expr, v: SymId) -> Expr {
    let mut memo: HashMap<usize, Expr> = HashMap::new();
    d(e, v, &mut memo)
}

/// Differentials with respect to an ordered list of symbols.
pub fn gradient(e: &Expr, vars: &[SymId]) -> Vec<Expr> {
    vars.iter().map(|&v| differentiate(e, v)).collect()
}

fn d(e: &Expr, v: SymId, memo: &mut HashMap<usize, Expr>) -> Expr {
    let key = Arc::as_ptr(&e.0) as usize;
    if let Some(r) = memo.get(&key) {
        return r.clone();
    }
    let out = match e.node() {
        Node::Num(_) => Expr::zero(),
        Node::Sym(s) => {
            if *s == v {
                Expr::one()
            } else {
                Expr::zero()
            }
        }
        Node::Add(ts) => Expr::add(ts.iter().map(|t| d(t, v, memo)).collect()),
        Node::Mul(fs) => {
            let mut terms = Vec::with_capacity(fs.len());
            for (i, fi) in fs.iter().enumerate() {
                let dfi = d(fi, v, memo);
                if dfi.is_zero() {
                    continue;
                }
                let mut prod: Vec<Expr> = Vec::with_capacity(fs.len());
                for (j, fj) in fs.iter().enumerate() {
                    if i != j {
                        prod.push(fj.clone());
                    }
                }
                prod.push(dfi);
                terms.push(Expr::mul(prod));
            }
            Expr::add(terms)
        }
        Node::Div(a, b) => {
            let da = d(a, v, memo);
            let db = d(b, v, memo);
            if db.is_zero() {
                Expr::div(da, b.clone())
            } else {
                // (a'b - ab') / b^2
                Expr::div(
                    Expr::sub(
                        Expr::mul(vec![da, b.clone()]),
                        Expr::mul(vec![a.clone(), db]),
                    ),
                    b.clone().pow(2),
                )
            }
        }
        Node::Pow(b, k) => {
            let db = d(b, v, memo);
            if db.is_zero() {
                Expr::zero()
            } else {
                Expr::mul(vec![Expr::int(*k as i64), b.clone().pow(k - 1), db])
            }
        }
        Node::Sin(u) => Expr::mul(vec![Expr::cos(u.clone()), d(u, v, memo)]),
        Node::Cos(u) => Expr::mul(vec![Expr::sin(u.clone()).neg(), d(u, v, memo)]),
        Node::Tan(u) => Expr::mul(vec![
            Expr::add(vec![Expr::one(), Expr::tan(u.clone()).pow(2)]),
            d(u, v, memo),
        ]),
        Node::Atan(u) => Expr::div(
            d(u, v, memo),
            Expr::add(vec![Expr::one(), u.clone().pow(2)]),
        ),
        Node::Sqrt(u) => Expr::div(
            d(u, v, memo),
            Expr::mul(vec![Expr::int(2), Expr::sqrt(u.clone())]),
        ),
    };
    memo.insert(key, out.clone());
    out
}

#[cfg(test)]
mod tests {
    use super::super::{evaluate, parse_expr, SymbolTable};
    use super::*;

    /// Central finite difference, the independent check for every rule.
    fn fd(e: &Expr, vals: &mut [f64], v: SymId) -> f64 {
        let h = 1e-6 * (1.0 + vals[v as usize].abs());
        let x0 = vals[v as usize];
        vals[v as usize] = x0 + h;
        let hi = evaluate(e, vals);
        vals[v as usize] = x0 - h;
        let lo = evaluate(e, vals);
        vals[v as usize] = x0;
        (hi - lo) / (2.0 * h)
    }

    fn check(src: &str, at: &[(&str, f64)]) {
        let mut t = SymbolTable::new();
        let e = parse_expr(src, &mut t).unwrap();
        let mut vals = vec![0.0; t.len()];
        for (name, x) in at {
            vals[t.get(name).unwrap() as usize] = *x;
        }
        for v in 0..t.len() as SymId {
            let de = differentiate(&e, v);
            let sym = evaluate(&de, &vals);
            let num = fd(&e, &mut vals, v);
            let scale = 1.0 + sym.abs().max(num.abs());
            assert!(
                (sym - num).abs() / scale < 1e-5,
                "d/d{} of {src}: symbolic {sym} vs numeric {num}",
                t.name(v)
            );
        }
    }

    #[test]
    fn polynomial_rules() {
        check("3*x^2 + 2*x*y - 7", &[("x", 1.3), ("y", -0.4)]);
        check("x^5 - x^-2", &[("x", 1.7)]);
    }

    #[test]
    fn quotient_rule() {
        check("(x^2 + y) / (x - y^3)", &[("x", 2.0), ("y", 0.3)]);
        check("1 / x", &[("x", 0.7)]);
    }

    #[test]
    fn trig_rules() {
        check("sin(x)*cos(y)", &[("x", 0.8), ("y", -1.1)]);
        check("tan(x - y)", &[("x", 0.5), ("y", 0.2)]);
        check("atan(x*y)", &[("x", 1.2), ("y", 0.4)]);
        check("sin(cos(x))", &[("x", 0.9)]);
    }

    #[test]
    fn sqrt_rule() {
        check("sqrt(x^2 + y^2)", &[("x", 1.5), ("y", -2.0)]);
    }

    #[test]
    fn composite_quotient_of_trig() {
        check(
            "(y*cos(g) - x*sin(g)) / (x*cos(g) + y*sin(g))",
            &[("x", 1.4), ("y", 0.6), ("g", 0.3)],
        );
    }

    #[test]
    fn gradient_matches_componentwise() {
        let mut t = SymbolTable::new();
        let e = parse_expr("x*sin(y) + y^2", &mut t).unwrap();
        let vars: Vec<SymId> = (0..t.len() as SymId).collect();
        let grad = gradient(&e, &vars);
        for (i, &v) in vars.iter().enumerate() {
            assert_eq!(grad[i], differentiate(&e, v));
        }
    }

    #[test]
    fn derivative_of_constant_is_zero() {
        let mut t = SymbolTable::new();
        let e = parse_expr("sin(1) + 2^3", &mut t).unwrap();
        let x = t.intern("x");
        assert!(differentiate(&e, x).is_zero());
    }
}
