use super::{Expr, SymbolTable};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::pow::Pow as _;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ParseError {
    #[error("unexpected character '{0}' at byte {1}")]
    UnexpectedChar(char, usize),
    #[error("unexpected end of expression")]
    UnexpectedEnd,
    #[error("expected {expected}, found '{found}'")]
    Expected { expected: &'static str, found: String },
    #[error("unknown function '{0}'")]
    UnknownFunction(String),
    #[error("exponent must be an integer literal, found '{0}'")]
    BadExponent(String),
    #[error("trailing input starting at '{0}'")]
    Trailing(String),
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(BigRational),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

fn lex(src: &str) -> Result<Vec<Tok>, ParseError> {
    let bytes = src.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        match c {
            ' ' | '\t' | '\r' | '\n' => i += 1,
            '+' => {
                toks.push(Tok::Plus);
                i += 1;
            }
            '-' => {
                toks.push(Tok::Minus);
                i += 1;
            }
            '*' => {
                toks.push(Tok::Star);
                i += 1;
            }
            '/' => {
                toks.push(Tok::Slash);
                i += 1;
            }
            '^' => {
                toks.push(Tok::Caret);
                i += 1;
            }
            '(' => {
                toks.push(Tok::LParen);
                i += 1;
            }
            ')' => {
                toks.push(Tok::RParen);
                i += 1;
            }
            '0'..='9' | '.' => {
                let start = i;
                let mut seen_dot = false;
                while i < bytes.len() {
                    match bytes[i] as char {
                        '0'..='9' => i += 1,
                        '.' if !seen_dot => {
                            seen_dot = true;
                            i += 1;
                        }
                        _ => break,
                    }
                }
                let text = &src[start..i];
                toks.push(Tok::Num(decimal_to_rational(text)));
            }
            'a'..='z' | 'A'..='Z' | '_' => {
                let start = i;
                while i < bytes.len()
                    && matches!(bytes[i] as char, 'a'..='z' | 'A'..='Z' | '0'..='9' | '_')
                {
                    i += 1;
                }
                toks.push(Tok::Ident(src[start..i].to_string()));
            }
            other => return Err(ParseError::UnexpectedChar(other, i)),
        }
    }
    Ok(toks)
}

/// Decimal literals become exact rationals: "0.25" is 1/4, never a float.
fn decimal_to_rational(text: &str) -> BigRational {
    match text.split_once('.') {
        None => BigRational::from(text.parse::<BigInt>().unwrap_or_default()),
        Some((int, frac)) => {
            let int_part: BigInt = if int.is_empty() {
                BigInt::from(0)
            } else {
                int.parse().unwrap_or_default()
            };
            let frac_part: BigInt = if frac.is_empty() {
                BigInt::from(0)
            } else {
                frac.parse().unwrap_or_default()
            };
            let denom = BigInt::from(10u32).pow(frac.len() as u32);
            BigRational::new(int_part * &denom + frac_part, denom)
        }
    }
}

struct Parser<'a> {
    toks: Vec<Tok>,
    pos: usize,
    syms: &'a mut SymbolTable,
}

/// Parse an expression: `+ - * /`, integer `^`, unary minus, parentheses,
/// and the function set sin/cos/tan/atan/sqrt. Identifiers are interned
/// into the supplied table.
pub fn parse_expr(src: &str, syms: &mut SymbolTable) -> Result<Expr, ParseError> {
    let toks = lex(src)?;
    let mut p = Parser { toks, pos: 0, syms };
    let e = p.expr()?;
    if p.pos < p.toks.len() {
        return Err(ParseError::Trailing(format!("{:?}", p.toks[p.pos])));
    }
    Ok(e)
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut terms = vec![self.term()?];
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.pos += 1;
                    terms.push(self.term()?);
                }
                Some(Tok::Minus) => {
                    self.pos += 1;
                    terms.push(self.term()?.neg());
                }
                _ => break,
            }
        }
        Ok(Expr::add(terms))
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut acc = self.unary()?;
        loop {
            match self.peek() {
                Some(Tok::Star) => {
                    self.pos += 1;
                    let rhs = self.unary()?;
                    acc = Expr::mul(vec![acc, rhs]);
                }
                Some(Tok::Slash) => {
                    self.pos += 1;
                    let rhs = self.unary()?;
                    acc = Expr::div(acc, rhs);
                }
                _ => break,
            }
        }
        Ok(acc)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if matches!(self.peek(), Some(Tok::Minus)) {
            self.pos += 1;
            return Ok(self.unary()?.neg());
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let mut base = self.atom()?;
        while matches!(self.peek(), Some(Tok::Caret)) {
            self.pos += 1;
            let neg = if matches!(self.peek(), Some(Tok::Minus)) {
                self.pos += 1;
                true
            } else {
                false
            };
            match self.next() {
                Some(Tok::Num(r)) if r.is_integer() => {
                    let k: i32 = r
                        .to_integer()
                        .try_into()
                        .map_err(|_| ParseError::BadExponent(r.to_string()))?;
                    base = base.pow(if neg { -k } else { k });
                }
                Some(t) => return Err(ParseError::BadExponent(format!("{t:?}"))),
                None => return Err(ParseError::UnexpectedEnd),
            }
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        match self.next() {
            Some(Tok::Num(r)) => Ok(Expr::num(r)),
            Some(Tok::LParen) => {
                let e = self.expr()?;
                match self.next() {
                    Some(Tok::RParen) => Ok(e),
                    Some(t) => Err(ParseError::Expected {
                        expected: "')'",
                        found: format!("{t:?}"),
                    }),
                    None => Err(ParseError::UnexpectedEnd),
                }
            }
            Some(Tok::Ident(name)) => {
                if matches!(self.peek(), Some(Tok::LParen)) {
                    self.pos += 1;
                    let arg = self.expr()?;
                    match self.next() {
                        Some(Tok::RParen) => {}
                        Some(t) => {
                            return Err(ParseError::Expected {
                                expected: "')'",
                                found: format!("{t:?}"),
                            })
                        }
                        None => return Err(ParseError::UnexpectedEnd),
                    }
                    match name.as_str() {
                        "sin" => Ok(Expr::sin(arg)),
                        "cos" => Ok(Expr::cos(arg)),
                        "tan" => Ok(Expr::tan(arg)),
                        "atan" => Ok(Expr::atan(arg)),
                        "sqrt" => Ok(Expr::sqrt(arg)),
                        _ => Err(ParseError::UnknownFunction(name)),
                    }
                } else {
                    Ok(Expr::sym(self.syms.intern(&name)))
                }
            }
            Some(t) => Err(ParseError::Expected {
                expected: "expression",
                found: format!("{t:?}"),
            }),
            None => Err(ParseError::UnexpectedEnd),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(src: &str) -> Expr {
        let mut t = SymbolTable::new();
        parse_expr(src, &mut t).unwrap()
    }

    #[test]
    fn precedence() {
        assert_eq!(p("1 + 2*3"), Expr::int(7));
        assert_eq!(p("(1 + 2)*3"), Expr::int(9));
        assert_eq!(p("2^3^1"), Expr::int(8)); // chain folds left through pow()
        assert_eq!(p("-2^2"), Expr::int(-4)); // unary minus binds looser than ^
    }

    #[test]
    fn unary_minus() {
        let mut t = SymbolTable::new();
        let e = parse_expr("-x + x", &mut t).unwrap();
        assert!(e.is_zero());
    }

    #[test]
    fn decimals_are_exact() {
        assert_eq!(p("0.5"), Expr::frac(1, 2));
        assert_eq!(p("2.25"), Expr::frac(9, 4));
        assert_eq!(p("1."), Expr::int(1));
    }

    #[test]
    fn negative_exponent() {
        let mut t = SymbolTable::new();
        let e = parse_expr("x^-2", &mut t).unwrap();
        let x = Expr::sym(t.get("x").unwrap());
        assert_eq!(e, Expr::div(Expr::one(), x.pow(2)));
    }

    #[test]
    fn function_calls() {
        let mut t = SymbolTable::new();
        let e = parse_expr("sin(x - y)", &mut t).unwrap();
        let x = Expr::sym(t.get("x").unwrap());
        let y = Expr::sym(t.get("y").unwrap());
        assert_eq!(e, Expr::sin(Expr::sub(x, y)));
    }

    #[test]
    fn rejects_unknown_function() {
        let mut t = SymbolTable::new();
        assert!(matches!(
            parse_expr("foo(x)", &mut t),
            Err(ParseError::UnknownFunction(_))
        ));
    }

    #[test]
    fn rejects_symbolic_exponent() {
        let mut t = SymbolTable::new();
        assert!(matches!(
            parse_expr("x^y", &mut t),
            Err(ParseError::BadExponent(_))
        ));
    }

    #[test]
    fn rejects_trailing_garbage() {
        let mut t = SymbolTable::new();
        assert!(matches!(
            parse_expr("x + 1)", &mut t),
            Err(ParseError::Trailing(_))
        ));
    }
}
