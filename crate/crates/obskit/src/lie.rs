//! Lie derivatives and brackets over symbolic vector fields.
//!
//! Everything here is expressed against an ordered list of state symbols;
//! vector fields and covectors are plain `Vec<Expr>` in that order.

use crate::expr::{differentiate, Expr, SymId};

/// Lie derivative of a scalar along a field: `L_f h = sum_i f_i dh/dx_i`.
pub fn lie_scalar(h: &Expr, field: &[Expr], vars: &[SymId]) -> Expr {
    debug_assert_eq!(field.len(), vars.len());
    let mut terms = Vec::with_capacity(vars.len());
    for (fi, &v) in field.iter().zip(vars) {
        if fi.is_zero() {
            continue;
        }
        let dh = differentiate(h, v);
        if dh.is_zero() {
            continue;
        }
        terms.push(Expr::mul(vec![fi.clone(), dh]));
    }
    Expr::add(terms)
}

/// Lie derivative of a covector along a field:
/// `(L_f w)_j = sum_i f_i dw_j/dx_i + sum_i w_i df_i/dx_j`.
///
/// For exact differentials this commutes with `d`: `L_f(dh) = d(L_f h)`,
/// which the tests pin against the scalar version.
pub fn lie_covector(w: &[Expr], field: &[Expr], vars: &[SymId]) -> Vec<Expr> {
    debug_assert_eq!(w.len(), vars.len());
    debug_assert_eq!(field.len(), vars.len());
    let mut out = Vec::with_capacity(vars.len());
    for (j, &vj) in vars.iter().enumerate() {
        let mut terms = Vec::new();
        for (i, &vi) in vars.iter().enumerate() {
            if !field[i].is_zero() {
                let dwj = differentiate(&w[j], vi);
                if !dwj.is_zero() {
                    terms.push(Expr::mul(vec![field[i].clone(), dwj]));
                }
            }
            if !w[i].is_zero() {
                let dfi = differentiate(&field[i], vj);
                if !dfi.is_zero() {
                    terms.push(Expr::mul(vec![w[i].clone(), dfi]));
                }
            }
        }
        out.push(Expr::add(terms));
    }
    out
}

/// Lie bracket of two fields: `[a,b] = (db/dx) a - (da/dx) b`.
pub fn lie_bracket(a: &[Expr], b: &[Expr], vars: &[SymId]) -> Vec<Expr> {
    debug_assert_eq!(a.len(), vars.len());
    debug_assert_eq!(b.len(), vars.len());
    let mut out = Vec::with_capacity(vars.len());
    for j in 0..vars.len() {
        let mut terms = Vec::new();
        for (i, &vi) in vars.iter().enumerate() {
            if !a[i].is_zero() {
                let dbj = differentiate(&b[j], vi);
                if !dbj.is_zero() {
                    terms.push(Expr::mul(vec![a[i].clone(), dbj]));
                }
            }
            if !b[i].is_zero() {
                let daj = differentiate(&a[j], vi);
                if !daj.is_zero() {
                    terms.push(Expr::mul(vec![b[i].clone(), daj]).neg());
                }
            }
        }
        out.push(Expr::add(terms));
    }
    out
}

/// Unknown-input-aware bracket: contracts plain brackets against a row of
/// the inverse input tensor. `g[beta]` runs over the drift (`beta = 0`)
/// and the unknown-input fields, `nu_row` is `nu^alpha_beta` for the fixed
/// `alpha`, in the same indexing.
pub fn extended_bracket(
    phi: &[Expr],
    g: &[Vec<Expr>],
    nu_row: &[Expr],
    vars: &[SymId],
) -> Vec<Expr> {
    debug_assert_eq!(g.len(), nu_row.len());
    let mut out = vec![Expr::zero(); vars.len()];
    for (beta, gb) in g.iter().enumerate() {
        if nu_row[beta].is_zero() {
            continue;
        }
        let br = lie_bracket(phi, gb, vars);
        for (o, c) in out.iter_mut().zip(br) {
            if c.is_zero() {
                continue;
            }
            *o = Expr::add(vec![
                std::mem::replace(o, Expr::zero()),
                Expr::mul(vec![nu_row[beta].clone(), c]),
            ]);
        }
    }
    out
}

/// True when every component is the zero expression.
pub fn is_zero_field(field: &[Expr]) -> bool {
    field.iter().all(Expr::is_zero)
}
