//! Line-oriented model files.
//!
//! One declaration per line, `#` starts a comment:
//!
//! ```text
//! state x y theta
//! param gamma
//! known_input u
//! unknown_input w
//! drift = 0, 0, 0            # optional, defaults to the zero field
//! f u = cos(theta), sin(theta), 0
//! g w = 0, 0, 1
//! output bearing = atan(y/x)
//! range x 1 2                # optional sampling box
//! symmetry = -y, x, 0        # optional, repeatable
//! ```
//!
//! Every symbol must be declared before use; component counts must match the
//! state dimension. Commas only separate components (the expression grammar
//! has no comma), so splitting on them is safe.

use crate::expr::{parse_expr, Expr, ParseError, SymId, SymbolTable};
use crate::model::{Model, Output};
use std::collections::HashSet;
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("line {line}: {err}")]
    Expr { line: usize, err: ParseError },
    #[error("line {line}: unknown declaration '{word}'")]
    UnknownDecl { line: usize, word: String },
    #[error("line {line}: {what} has {got} components, state dimension is {expected}")]
    Arity {
        line: usize,
        what: String,
        expected: usize,
        got: usize,
    },
    #[error("line {line}: undeclared symbol '{name}'")]
    Undeclared { line: usize, name: String },
    #[error("line {line}: duplicate name '{name}'")]
    Duplicate { line: usize, name: String },
    #[error("line {line}: '{name}' is not a declared {kind}")]
    NotAnInput {
        line: usize,
        name: String,
        kind: &'static str,
    },
    #[error("line {line}: field for {kind} '{name}' defined twice")]
    DuplicateField {
        line: usize,
        name: String,
        kind: &'static str,
    },
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("no state variables declared")]
    NoStates,
    #[error("no outputs declared")]
    NoOutputs,
    #[error("missing field definition for {kind} '{name}'")]
    MissingField { name: String, kind: &'static str },
    #[error("line {line}: range bounds must be finite with lo < hi")]
    BadRange { line: usize },
}

const RESERVED: &[&str] = &["sin", "cos", "tan", "atan", "sqrt"];

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

struct Builder {
    table: SymbolTable,
    states: Vec<SymId>,
    params: Vec<SymId>,
    known_inputs: Vec<String>,
    unknown_inputs: Vec<String>,
    drift: Option<(usize, Vec<Expr>)>,
    f: Vec<Option<(usize, Vec<Expr>)>>,
    g: Vec<Option<(usize, Vec<Expr>)>>,
    outputs: Vec<Output>,
    ranges: Vec<(SymId, f64, f64)>,
    symmetries: Vec<(usize, Vec<Expr>)>,
    names: HashSet<String>,
    declared: HashSet<SymId>,
}

impl Builder {
    fn declare(&mut self, line: usize, name: &str) -> Result<(), ModelError> {
        if !is_ident(name) || RESERVED.contains(&name) {
            return Err(ModelError::Malformed {
                line,
                msg: format!("'{name}' is not a valid name"),
            });
        }
        if !self.names.insert(name.to_string()) {
            return Err(ModelError::Duplicate {
                line,
                name: name.to_string(),
            });
        }
        Ok(())
    }

    fn parse_checked(&mut self, line: usize, src: &str) -> Result<Expr, ModelError> {
        let e = parse_expr(src, &mut self.table).map_err(|err| ModelError::Expr { line, err })?;
        let mut bad: Option<SymId> = None;
        e.visit_syms(&mut |s| {
            if bad.is_none() && !self.declared.contains(&s) {
                bad = Some(s);
            }
        });
        if let Some(s) = bad {
            return Err(ModelError::Undeclared {
                line,
                name: self.table.name(s).to_string(),
            });
        }
        Ok(e)
    }

    fn parse_components(&mut self, line: usize, src: &str) -> Result<Vec<Expr>, ModelError> {
        src.split(',')
            .map(|part| self.parse_checked(line, part))
            .collect()
    }
}

/// Split a declaration body at its `=`, or fail.
fn eq_split(line: usize, rest: &str) -> Result<(&str, &str), ModelError> {
    rest.split_once('=').ok_or_else(|| ModelError::Malformed {
        line,
        msg: "expected '='".into(),
    })
}

pub fn parse_model(text: &str) -> Result<Model, ModelError> {
    let mut b = Builder {
        table: SymbolTable::new(),
        states: Vec::new(),
        params: Vec::new(),
        known_inputs: Vec::new(),
        unknown_inputs: Vec::new(),
        drift: None,
        f: Vec::new(),
        g: Vec::new(),
        outputs: Vec::new(),
        ranges: Vec::new(),
        symmetries: Vec::new(),
        names: HashSet::new(),
        declared: HashSet::new(),
    };

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (word, rest) = match content.split_once(char::is_whitespace) {
            Some((w, r)) => (w, r.trim()),
            None => (content, ""),
        };
        match word {
            "state" | "param" => {
                if word == "state" && rest.is_empty() {
                    return Err(ModelError::Malformed {
                        line,
                        msg: "expected at least one name".into(),
                    });
                }
                for name in rest.split_whitespace() {
                    b.declare(line, name)?;
                    let id = b.table.intern(name);
                    b.declared.insert(id);
                    if word == "state" {
                        b.states.push(id);
                    } else {
                        b.params.push(id);
                    }
                }
            }
            "known_input" | "unknown_input" => {
                if word == "known_input" && rest.is_empty() {
                    return Err(ModelError::Malformed {
                        line,
                        msg: "expected at least one name".into(),
                    });
                }
                for name in rest.split_whitespace() {
                    b.declare(line, name)?;
                    if word == "known_input" {
                        b.known_inputs.push(name.to_string());
                        b.f.push(None);
                    } else {
                        b.unknown_inputs.push(name.to_string());
                        b.g.push(None);
                    }
                }
            }
            "drift" => {
                let (_, body) = eq_split(line, content)?;
                if b.drift.is_some() {
                    return Err(ModelError::DuplicateField {
                        line,
                        name: "drift".into(),
                        kind: "drift",
                    });
                }
                let comps = b.parse_components(line, body)?;
                b.drift = Some((line, comps));
            }
            "f" | "g" => {
                let (head, body) = eq_split(line, rest)?;
                let input = head.trim();
                let (list, fields, kind): (&[String], _, _) = if word == "f" {
                    (&b.known_inputs, &mut b.f, "known input")
                } else {
                    (&b.unknown_inputs, &mut b.g, "unknown input")
                };
                let pos = list.iter().position(|n| n == input).ok_or_else(|| {
                    ModelError::NotAnInput {
                        line,
                        name: input.to_string(),
                        kind,
                    }
                })?;
                if fields[pos].is_some() {
                    return Err(ModelError::DuplicateField {
                        line,
                        name: input.to_string(),
                        kind,
                    });
                }
                let comps = b.parse_components(line, body)?;
                if word == "f" {
                    b.f[pos] = Some((line, comps));
                } else {
                    b.g[pos] = Some((line, comps));
                }
            }
            "output" => {
                let (head, body) = eq_split(line, rest)?;
                let name = head.trim();
                b.declare(line, name)?;
                let expr = b.parse_checked(line, body)?;
                b.outputs.push(Output {
                    name: name.to_string(),
                    expr,
                });
            }
            "range" => {
                let parts: Vec<&str> = rest.split_whitespace().collect();
                if parts.len() != 3 {
                    return Err(ModelError::Malformed {
                        line,
                        msg: "expected 'range <symbol> <lo> <hi>'".into(),
                    });
                }
                let id = b
                    .table
                    .get(parts[0])
                    .filter(|s| b.declared.contains(s))
                    .ok_or_else(|| ModelError::Undeclared {
                        line,
                        name: parts[0].to_string(),
                    })?;
                let lo: f64 = parts[1]
                    .parse()
                    .map_err(|_| ModelError::BadRange { line })?;
                let hi: f64 = parts[2]
                    .parse()
                    .map_err(|_| ModelError::BadRange { line })?;
                if !lo.is_finite() || !hi.is_finite() || lo >= hi {
                    return Err(ModelError::BadRange { line });
                }
                b.ranges.push((id, lo, hi));
            }
            "symmetry" => {
                let (_, body) = eq_split(line, content)?;
                let comps = b.parse_components(line, body)?;
                b.symmetries.push((line, comps));
            }
            _ => {
                return Err(ModelError::UnknownDecl {
                    line,
                    word: word.to_string(),
                })
            }
        }
    }

    if b.states.is_empty() {
        return Err(ModelError::NoStates);
    }
    if b.outputs.is_empty() {
        return Err(ModelError::NoOutputs);
    }
    let n = b.states.len();
    let arity = |line: usize, what: String, comps: &[Expr]| -> Result<(), ModelError> {
        if comps.len() != n {
            Err(ModelError::Arity {
                line,
                what,
                expected: n,
                got: comps.len(),
            })
        } else {
            Ok(())
        }
    };

    let drift = match &b.drift {
        Some((line, comps)) => {
            arity(*line, "drift".into(), comps)?;
            comps.clone()
        }
        None => vec![Expr::zero(); n],
    };
    let mut f_fields = Vec::new();
    for (i, slot) in b.f.iter().enumerate() {
        let name = &b.known_inputs[i];
        match slot {
            Some((line, comps)) => {
                arity(*line, format!("f {name}"), comps)?;
                f_fields.push(comps.clone());
            }
            None => {
                return Err(ModelError::MissingField {
                    name: name.clone(),
                    kind: "known input",
                })
            }
        }
    }
    let mut g_fields = Vec::new();
    for (j, slot) in b.g.iter().enumerate() {
        let name = &b.unknown_inputs[j];
        match slot {
            Some((line, comps)) => {
                arity(*line, format!("g {name}"), comps)?;
                g_fields.push(comps.clone());
            }
            None => {
                return Err(ModelError::MissingField {
                    name: name.clone(),
                    kind: "unknown input",
                })
            }
        }
    }
    let mut symmetries = Vec::new();
    for (line, comps) in &b.symmetries {
        arity(*line, "symmetry".into(), comps)?;
        symmetries.push(comps.clone());
    }

    Ok(Model {
        table: b.table,
        states: b.states,
        params: b.params,
        known_inputs: b.known_inputs,
        unknown_inputs: b.unknown_inputs,
        drift,
        f: f_fields,
        g: g_fields,
        outputs: b.outputs,
        ranges: b.ranges,
        symmetries,
    })
}

/// Emit the canonical text form of a model. Parsing the result reproduces
/// the model (the emitted text is a parse/emit fixed point).
pub fn emit_model(m: &Model) -> String {
    let mut out = String::new();
    let names = |ids: &[SymId]| {
        ids.iter()
            .map(|&s| m.table.name(s))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let _ = writeln!(out, "state {}", names(&m.states));
    if !m.params.is_empty() {
        let _ = writeln!(out, "param {}", names(&m.params));
    }
    if !m.known_inputs.is_empty() {
        let _ = writeln!(out, "known_input {}", m.known_inputs.join(" "));
    }
    if !m.unknown_inputs.is_empty() {
        let _ = writeln!(out, "unknown_input {}", m.unknown_inputs.join(" "));
    }
    let field = |comps: &[Expr]| {
        comps
            .iter()
            .map(|e| e.display(&m.table).to_string())
            .collect::<Vec<_>>()
            .join(", ")
    };
    if !m.drift.iter().all(|e| e.is_zero()) {
        let _ = writeln!(out, "drift = {}", field(&m.drift));
    }
    for (name, comps) in m.known_inputs.iter().zip(&m.f) {
        let _ = writeln!(out, "f {name} = {}", field(comps));
    }
    for (name, comps) in m.unknown_inputs.iter().zip(&m.g) {
        let _ = writeln!(out, "g {name} = {}", field(comps));
    }
    for o in &m.outputs {
        let _ = writeln!(out, "output {} = {}", o.name, o.expr.display(&m.table));
    }
    for &(s, lo, hi) in &m.ranges {
        let _ = writeln!(out, "range {} {} {}", m.table.name(s), lo, hi);
    }
    for sym in &m.symmetries {
        let _ = writeln!(out, "symmetry = {}", field(sym));
    }
    out
}

/// Stable digest of the canonical form, for report identification.
pub fn model_digest(m: &Model) -> String {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in emit_model(m).as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    format!("{h:016x}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const BASE: &str = "\
# planar test rig
state x y theta
param gamma
known_input u
unknown_input w
drift = y, -x, 0
f u = cos(theta), sin(theta), 0
g w = 0, gamma, 1
output bearing = atan(y/x)
output dist = x^2 + y^2
range x 1 2
symmetry = -y, x, 0
";

    #[test]
    fn parses_single_input_model() {
        let m = parse_model(
            "state r phi theta\nknown_input u\nunknown_input w\n\
             f u = cos(theta - phi), sin(theta - phi)/r, 0\n\
             g w = 0, 0, 1\noutput range = r\n",
        )
        .unwrap();
        assert_eq!(m.n(), 3);
        assert_eq!(m.m_u(), 1);
        assert_eq!(m.m_w(), 1);
        assert!(m.drift.iter().all(|e| e.is_zero()));
    }

    #[test]
    fn arity_error_names_the_field() {
        let err = parse_model(
            "state x y theta\nknown_input u\nf u = 1, 2\noutput o = x\n",
        )
        .unwrap_err();
        match err {
            ModelError::Arity {
                what,
                expected,
                got,
                ..
            } => {
                assert_eq!(what, "f u");
                assert_eq!((expected, got), (3, 2));
            }
            other => panic!("expected arity error, got {other}"),
        }
    }

    #[test]
    fn undeclared_symbol_is_named() {
        let err = parse_model("state p\noutput o = sin(q)\n").unwrap_err();
        match err {
            ModelError::Undeclared { name, .. } => assert_eq!(name, "q"),
            other => panic!("expected undeclared error, got {other}"),
        }
    }

    #[test]
    fn use_before_declaration_rejected() {
        // same text as a valid model, fields hoisted above declarations
        assert!(parse_model("f u = 1\nstate x\nknown_input u\noutput o = x\n").is_err());
        assert!(parse_model("drift = x\nstate x\noutput o = x\n").is_err());
    }

    #[test]
    fn duplicate_names_rejected() {
        assert!(matches!(
            parse_model("state x x\noutput o = x\n"),
            Err(ModelError::Duplicate { .. })
        ));
        assert!(matches!(
            parse_model("state x\nparam x\noutput o = x\n"),
            Err(ModelError::Duplicate { .. })
        ));
        assert!(matches!(
            parse_model("state x\noutput x = x\n"),
            Err(ModelError::Duplicate { .. })
        ));
    }

    #[test]
    fn missing_field_for_declared_input() {
        assert!(matches!(
            parse_model("state x\nunknown_input w\noutput o = x\n"),
            Err(ModelError::MissingField { .. })
        ));
    }

    #[test]
    fn bad_ranges_rejected() {
        assert!(matches!(
            parse_model("state x\noutput o = x\nrange x 2 1\n"),
            Err(ModelError::BadRange { .. })
        ));
        assert!(matches!(
            parse_model("state x\noutput o = x\nrange y 1 2\n"),
            Err(ModelError::Undeclared { .. })
        ));
    }

    #[test]
    fn comments_and_blanks_ignored() {
        let m = parse_model("\n# top\nstate x  # trailing\n\noutput o = x # expr\n").unwrap();
        assert_eq!(m.n(), 1);
        assert_eq!(m.outputs[0].name, "o");
    }

    #[test]
    fn emit_is_parse_fixed_point() {
        let m1 = parse_model(BASE).unwrap();
        let text1 = emit_model(&m1);
        let m2 = parse_model(&text1).unwrap();
        let text2 = emit_model(&m2);
        assert_eq!(text1, text2);
        assert_eq!(model_digest(&m1), model_digest(&m2));
        // canonical parses agree structurally field by field
        assert_eq!(m2.drift, parse_model(&text2).unwrap().drift);
        assert_eq!(m1.state_names(), m2.state_names());
        assert_eq!(m1.known_inputs, m2.known_inputs);
        assert_eq!(m1.unknown_inputs, m2.unknown_inputs);
    }

    #[test]
    fn drift_defaults_to_zero() {
        let m = parse_model("state x\noutput o = x\n").unwrap();
        assert_eq!(m.drift, vec![Expr::zero()]);
        // and a zero drift is omitted from the canonical form
        assert!(!emit_model(&m).contains("drift"));
    }

    /// Identifier occurrences inside the expression part of a line.
    fn expr_idents(line: &str) -> Vec<(usize, usize)> {
        let eq = match line.find('=') {
            Some(i) => i + 1,
            None => return Vec::new(),
        };
        let bytes = line.as_bytes();
        let mut spans = Vec::new();
        let mut i = eq;
        while i < bytes.len() {
            let c = bytes[i] as char;
            if c.is_ascii_alphabetic() || c == '_' {
                let start = i;
                while i < bytes.len()
                    && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_')
                {
                    i += 1;
                }
                let word = &line[start..i];
                if !RESERVED.contains(&word) {
                    spans.push((start, i));
                }
            } else {
                i += 1;
            }
        }
        spans
    }

    #[test]
    fn mutations_breaking_arity_or_order_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let lines: Vec<&str> = BASE.lines().collect();
        let comma_lines: Vec<usize> = lines
            .iter()
            .enumerate()
            .filter(|(_, l)| l.contains(','))
            .map(|(i, _)| i)
            .collect();
        let movable: Vec<usize> = lines
            .iter()
            .enumerate()
            .filter(|(_, l)| !expr_idents(l).is_empty() || l.starts_with("range"))
            .map(|(i, _)| i)
            .collect();
        let sym_lines: Vec<usize> = lines
            .iter()
            .enumerate()
            .filter(|(_, l)| !expr_idents(l).is_empty())
            .map(|(i, _)| i)
            .collect();

        let mut rejected = 0;
        for case in 0..200 {
            let mut mutated: Vec<String> = lines.iter().map(|s| s.to_string()).collect();
            match case % 5 {
                0 => {
                    // drop the last component: arity too low
                    let li = comma_lines[rng.gen_range(0..comma_lines.len())];
                    let cut = mutated[li].rfind(',').unwrap();
                    mutated[li].truncate(cut);
                }
                1 => {
                    // duplicate the last component: arity too high
                    let li = comma_lines[rng.gen_range(0..comma_lines.len())];
                    let tail = mutated[li][mutated[li].rfind(',').unwrap()..].to_string();
                    mutated[li].push_str(&tail);
                }
                2 => {
                    // hoist a symbol-using line above every declaration
                    let li = movable[rng.gen_range(0..movable.len())];
                    let line = mutated.remove(li);
                    mutated.insert(0, line);
                }
                3 => {
                    // rename one symbol occurrence to something undeclared
                    let li = sym_lines[rng.gen_range(0..sym_lines.len())];
                    let spans = expr_idents(&mutated[li]);
                    let (a, bnd) = spans[rng.gen_range(0..spans.len())];
                    let word = format!("{}q9", &mutated[li][a..bnd]);
                    mutated[li].replace_range(a..bnd, &word);
                }
                _ => {
                    // drop a state name: every field arity breaks
                    let si = mutated.iter().position(|l| l.starts_with("state")).unwrap();
                    let cut = mutated[si].rfind(' ').unwrap();
                    mutated[si].truncate(cut);
                }
            }
            if parse_model(&mutated.join("\n")).is_err() {
                rejected += 1;
            }
        }
        assert_eq!(rejected, 200);
    }
}
