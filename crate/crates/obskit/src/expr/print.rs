use super::{Expr, Node, SymbolTable};
use num_traits::Signed;
use std::fmt;

/// Printer that resolves symbol names through a table. The output is
/// re-parseable: `parse_expr(print(e)) == e` structurally, which the
/// property tests pin down.
pub struct ExprDisplay<'a> {
    expr: &'a Expr,
    syms: Option<&'a SymbolTable>,
}

impl Expr {
    pub fn display<'a>(&'a self, syms: &'a SymbolTable) -> ExprDisplay<'a> {
        ExprDisplay {
            expr: self,
            syms: Some(syms),
        }
    }
}

impl fmt::Display for ExprDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write(f, self.expr, self.syms)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write(f, self, None)
    }
}

fn sym_name(id: u32, syms: Option<&SymbolTable>, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    match syms {
        Some(t) => f.write_str(t.name(id)),
        None => write!(f, "s{id}"),
    }
}

/// Split off a leading negative sign so sums print as `a - b`.
fn sign_split(e: &Expr) -> (bool, Expr) {
    let (c, _) = e.split_coeff();
    if c.is_negative() {
        (true, e.clone().neg())
    } else {
        (false, e.clone())
    }
}

fn is_atom(e: &Expr) -> bool {
    matches!(
        e.node(),
        Node::Sym(_)
            | Node::Sin(_)
            | Node::Cos(_)
            | Node::Tan(_)
            | Node::Atan(_)
            | Node::Sqrt(_)
    ) || matches!(e.node(), Node::Num(r) if !r.is_negative() && r.is_integer())
}

fn write(f: &mut fmt::Formatter<'_>, e: &Expr, syms: Option<&SymbolTable>) -> fmt::Result {
    match e.node() {
        Node::Num(r) => {
            if r.is_integer() {
                write!(f, "{}", r.numer())
            } else {
                write!(f, "{}/{}", r.numer(), r.denom())
            }
        }
        Node::Sym(s) => sym_name(*s, syms, f),
        Node::Add(ts) => {
            for (i, t) in ts.iter().enumerate() {
                let (neg, abs) = sign_split(t);
                if i == 0 {
                    if neg {
                        f.write_str("-")?;
                    }
                } else if neg {
                    f.write_str(" - ")?;
                } else {
                    f.write_str(" + ")?;
                }
                write_prec(f, &abs, Prec::Term, syms)?;
            }
            Ok(())
        }
        Node::Mul(fs) => {
            let mut first = true;
            let mut iter = fs.iter().peekable();
            // a leading -1 coefficient prints as a bare sign
            if let Some(head) = iter.peek() {
                if let Node::Num(r) = head.node() {
                    if *r == num_rational::BigRational::from_integer((-1).into()) {
                        f.write_str("-")?;
                        iter.next();
                    }
                }
            }
            for x in iter {
                if !first {
                    f.write_str("*")?;
                }
                first = false;
                write_prec(f, x, Prec::Factor, syms)?;
            }
            if first {
                // product was exactly [-1]
                f.write_str("1")?;
            }
            Ok(())
        }
        Node::Div(a, b) => {
            write_prec(f, a, Prec::Term, syms)?;
            f.write_str(" / ")?;
            write_prec(f, b, Prec::Factor, syms)
        }
        Node::Pow(b, k) => {
            if is_atom(b) {
                write(f, b, syms)?;
            } else {
                f.write_str("(")?;
                write(f, b, syms)?;
                f.write_str(")")?;
            }
            write!(f, "^{k}")
        }
        Node::Sin(u) => func(f, "sin", u, syms),
        Node::Cos(u) => func(f, "cos", u, syms),
        Node::Tan(u) => func(f, "tan", u, syms),
        Node::Atan(u) => func(f, "atan", u, syms),
        Node::Sqrt(u) => func(f, "sqrt", u, syms),
    }
}

fn func(
    f: &mut fmt::Formatter<'_>,
    name: &str,
    arg: &Expr,
    syms: Option<&SymbolTable>,
) -> fmt::Result {
    write!(f, "{name}(")?;
    write(f, arg, syms)?;
    f.write_str(")")
}

#[derive(PartialEq)]
enum Prec {
    /// inside a sum: products fine, sums need parens
    Term,
    /// inside a product or denominator: sums and products need parens
    Factor,
}

fn write_prec(
    f: &mut fmt::Formatter<'_>,
    e: &Expr,
    prec: Prec,
    syms: Option<&SymbolTable>,
) -> fmt::Result {
    let needs_parens = match (e.node(), &prec) {
        (Node::Add(_), _) => true,
        (Node::Mul(_), Prec::Factor) => true,
        (Node::Div(..), _) => true,
        (Node::Num(r), _) => r.is_negative() || !r.is_integer(),
        _ => false,
    };
    if needs_parens {
        f.write_str("(")?;
        write(f, e, syms)?;
        f.write_str(")")
    } else {
        write(f, e, syms)
    }
}

#[cfg(test)]
mod tests {
    use super::super::{parse_expr, SymbolTable};
    
    use proptest::prelude::*;

    fn roundtrip(src: &str) {
        let mut t = SymbolTable::new();
        let e = parse_expr(src, &mut t).unwrap();
        let printed = e.display(&t).to_string();
        let e2 = parse_expr(&printed, &mut t).unwrap();
        assert_eq!(e, e2, "roundtrip of {src} via {printed}");
    }

    #[test]
    fn roundtrip_basics() {
        roundtrip("x + y*z");
        roundtrip("x - y - z");
        roundtrip("-x + 1/2");
        roundtrip("(x + y) / (x*y - 1)");
        roundtrip("sin(x)^2*cos(y - x)");
        roundtrip("sqrt(x^2 + y^2) / tan(z)");
        roundtrip("3/4*x^3 - 2*x / (y + 1)");
        roundtrip("atan(x / y)");
    }

    fn arb_expr() -> impl Strategy<Value = String> {
        let leaf = prop_oneof![
            prop::sample::select(vec!["x", "y", "z", "w"]).prop_map(str::to_string),
            (-9i32..9).prop_map(|n| n.to_string()),
            (1u32..20, 1u32..20).prop_map(|(a, b)| format!("{a}.{b:02}")),
        ];
        leaf.prop_recursive(4, 48, 4, |inner| {
            prop_oneof![
                (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a}) + ({b})")),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a}) - ({b})")),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a})*({b})")),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a}) / ({b})")),
                (inner.clone(), 2u32..4).prop_map(|(a, k)| format!("({a})^{k}")),
                inner.clone().prop_map(|a| format!("sin({a})")),
                inner.clone().prop_map(|a| format!("cos({a})")),
                inner.clone().prop_map(|a| format!("tan({a})")),
                inner.clone().prop_map(|a| format!("atan({a})")),
                inner.prop_map(|a| format!("-({a})")),
            ]
        })
    }

    proptest! {
        #[test]
        fn print_parse_fixed_point(src in arb_expr()) {
            let mut t = SymbolTable::new();
            // generated sources may divide by a folded zero; those are
            // still valid trees unless construction already collapsed them
            if let Ok(e) = parse_expr(&src, &mut t) {
                let printed = e.display(&t).to_string();
                let e2 = parse_expr(&printed, &mut t).unwrap();
                prop_assert_eq!(&e, &e2, "printed form: {}", printed);
                let printed2 = e2.display(&t).to_string();
                prop_assert_eq!(printed, printed2);
            }
        }
    }
}
