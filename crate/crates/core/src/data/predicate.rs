//! Conjunctive subgroup predicates such as `age>50 & sex=1`.
//!
//! Grammar (whitespace-insensitive):
//!
//! ```text
//! pred    := "" | atom ("&" atom)*
//! atom    := ident op literal
//! op      := "<" | "<=" | ">" | ">=" | "=" | "==" | "!=" | "≤" | "≥" | "≠"
//! literal := number | token
//! ```

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{DataError, Schema};

#[derive(Debug, Clone, PartialEq, Error)]
#[error("syntax error at byte {offset}: {message}")]
pub struct SyntaxError {
    pub offset: usize,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

impl CmpOp {
    pub fn eval(self, lhs: f64, rhs: f64) -> bool {
        match self {
            CmpOp::Lt => lhs < rhs,
            CmpOp::Le => lhs <= rhs,
            CmpOp::Gt => lhs > rhs,
            CmpOp::Ge => lhs >= rhs,
            CmpOp::Eq => lhs == rhs,
            CmpOp::Ne => lhs != rhs,
        }
    }

    fn is_ordering(self) -> bool {
        !matches!(self, CmpOp::Eq | CmpOp::Ne)
    }

    fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
            CmpOp::Eq => "=",
            CmpOp::Ne => "!=",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Literal {
    Number(f64),
    Token(String),
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Number(x) => write!(f, "{x}"),
            Literal::Token(t) => f.write_str(t),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub feature: String,
    pub op: CmpOp,
    pub literal: Literal,
}

/// A conjunction of atoms; the empty conjunction selects every row.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Predicate {
    pub atoms: Vec<Atom>,
}

impl Predicate {
    pub fn all_rows() -> Self {
        Self::default()
    }

    pub fn is_all_rows(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Resolve feature names to columns and literals to numeric codes.
    pub fn bind(&self, schema: &Schema) -> Result<BoundPredicate, DataError> {
        let mut atoms = Vec::with_capacity(self.atoms.len());
        for atom in &self.atoms {
            let col = schema
                .position(&atom.feature)
                .ok_or_else(|| DataError::UnknownFeature(atom.feature.clone()))?;
            let decl = &schema.features()[col];
            let mismatch = |reason: &str| DataError::PredicateType {
                feature: atom.feature.clone(),
                reason: reason.to_string(),
            };
            let value = if decl.is_categorical() {
                if atom.op.is_ordering() && !decl.has_numeric_codes() {
                    return Err(mismatch("ordering comparison on a non-numeric category"));
                }
                let token = atom.literal.to_string();
                decl.code_of(&token)
                    .ok_or_else(|| mismatch(&format!("`{token}` is not in the domain")))?
            } else {
                match atom.literal {
                    Literal::Number(x) => x,
                    Literal::Token(ref t) => {
                        return Err(mismatch(&format!("`{t}` is not a number")));
                    }
                }
            };
            atoms.push((col, atom.op, value));
        }
        Ok(BoundPredicate { atoms })
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, a) in self.atoms.iter().enumerate() {
            if i > 0 {
                f.write_str(" & ")?;
            }
            write!(f, "{} {} {}", a.feature, a.op.symbol(), a.literal)?;
        }
        Ok(())
    }
}

impl FromStr for Predicate {
    type Err = SyntaxError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_predicate(s)
    }
}

/// A predicate resolved against a schema.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BoundPredicate {
    atoms: Vec<(usize, CmpOp, f64)>,
}

impl BoundPredicate {
    pub fn matches(&self, row: &[f64]) -> bool {
        self.atoms.iter().all(|&(c, op, v)| op.eval(row[c], v))
    }

    pub fn columns(&self) -> impl Iterator<Item = usize> + '_ {
        self.atoms.iter().map(|a| a.0)
    }
}

pub fn parse_predicate(text: &str) -> Result<Predicate, SyntaxError> {
    Parser { src: text, pos: 0 }.predicate()
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl Parser<'_> {
    fn err<T>(&self, offset: usize, message: impl Into<String>) -> Result<T, SyntaxError> {
        Err(SyntaxError {
            offset,
            message: message.into(),
        })
    }

    fn rest(&self) -> &str {
        &self.src[self.pos..]
    }

    fn skip_ws(&mut self) {
        let trimmed = self.rest().trim_start();
        self.pos = self.src.len() - trimmed.len();
    }

    fn predicate(&mut self) -> Result<Predicate, SyntaxError> {
        let mut atoms = Vec::new();
        self.skip_ws();
        if self.rest().is_empty() {
            return Ok(Predicate { atoms });
        }
        loop {
            atoms.push(self.atom()?);
            self.skip_ws();
            match self.rest().chars().next() {
                None => break,
                Some('&') => {
                    self.pos += 1;
                    // tolerate `&&`
                    if self.rest().starts_with('&') {
                        self.pos += 1;
                    }
                }
                Some(c) => return self.err(self.pos, format!("expected `&`, found `{c}`")),
            }
        }
        Ok(Predicate { atoms })
    }

    fn atom(&mut self) -> Result<Atom, SyntaxError> {
        self.skip_ws();
        let feature = self.ident()?;
        self.skip_ws();
        let op = self.op()?;
        self.skip_ws();
        let literal = self.literal()?;
        Ok(Atom { feature, op, literal })
    }

    fn ident(&mut self) -> Result<String, SyntaxError> {
        let start = self.pos;
        let mut chars = self.rest().char_indices();
        match chars.next() {
            Some((_, c)) if c.is_alphabetic() || c == '_' => {}
            Some((_, c)) => return self.err(start, format!("expected feature name, found `{c}`")),
            None => return self.err(start, "expected feature name, found end of input"),
        }
        let len = chars
            .find(|(_, c)| !(c.is_alphanumeric() || *c == '_'))
            .map_or(self.rest().len(), |(i, _)| i);
        self.pos += len;
        Ok(self.src[start..self.pos].to_string())
    }

    fn op(&mut self) -> Result<CmpOp, SyntaxError> {
        const OPS: [(&str, CmpOp); 10] = [
            ("<=", CmpOp::Le),
            (">=", CmpOp::Ge),
            ("!=", CmpOp::Ne),
            ("==", CmpOp::Eq),
            ("≤", CmpOp::Le),
            ("≥", CmpOp::Ge),
            ("≠", CmpOp::Ne),
            ("<", CmpOp::Lt),
            (">", CmpOp::Gt),
            ("=", CmpOp::Eq),
        ];
        for (sym, op) in OPS {
            if self.rest().starts_with(sym) {
                self.pos += sym.len();
                return Ok(op);
            }
        }
        match self.rest().chars().next() {
            Some(c) => self.err(self.pos, format!("expected comparison operator, found `{c}`")),
            None => self.err(self.pos, "expected comparison operator, found end of input"),
        }
    }

    fn literal(&mut self) -> Result<Literal, SyntaxError> {
        let start = self.pos;
        let len = self
            .rest()
            .char_indices()
            .find(|(_, c)| !(c.is_alphanumeric() || matches!(c, '_' | '.' | '-' | '+')))
            .map_or(self.rest().len(), |(i, _)| i);
        if len == 0 {
            return match self.rest().chars().next() {
                Some(c) => self.err(start, format!("expected literal, found `{c}`")),
                None => self.err(start, "expected literal, found end of input"),
            };
        }
        self.pos += len;
        let text = &self.src[start..self.pos];
        let starts_numeric = text
            .trim_start_matches(['-', '+'])
            .starts_with(|c: char| c.is_ascii_digit() || c == '.');
        if starts_numeric {
            match text.parse::<f64>() {
                Ok(x) if x.is_finite() => Ok(Literal::Number(x)),
                _ => self.err(start, format!("malformed number `{text}`")),
            }
        } else if text.starts_with(['-', '+']) {
            self.err(start, format!("malformed number `{text}`"))
        } else {
            Ok(Literal::Token(text.to_string()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn atom(f: &str, op: CmpOp, lit: Literal) -> Atom {
        Atom {
            feature: f.into(),
            op,
            literal: lit,
        }
    }

    #[test]
    fn parses_single_atom() {
        let p = parse_predicate("age>50").unwrap();
        assert_eq!(p.atoms, vec![atom("age", CmpOp::Gt, Literal::Number(50.0))]);
    }

    #[test]
    fn empty_is_all_rows() {
        assert!(parse_predicate("").unwrap().is_all_rows());
        assert!(parse_predicate("   ").unwrap().is_all_rows());
    }

    #[test]
    fn parses_conjunction_and_operators() {
        let p = parse_predicate(" age >= 50 &sex=1 & g != m & x<=-2.5e1 & y ≠ 3").unwrap();
        assert_eq!(
            p.atoms,
            vec![
                atom("age", CmpOp::Ge, Literal::Number(50.0)),
                atom("sex", CmpOp::Eq, Literal::Number(1.0)),
                atom("g", CmpOp::Ne, Literal::Token("m".into())),
                atom("x", CmpOp::Le, Literal::Number(-25.0)),
                atom("y", CmpOp::Ne, Literal::Number(3.0)),
            ]
        );
    }

    #[test]
    fn syntax_errors_carry_offsets() {
        let cases = [
            ("age > ", 6),
            ("age 50", 4),
            ("> 50", 0),
            ("age > 50 sex = 1", 9),
            ("age > 50 &", 10),
            ("age > 5x0", 6),
            ("age > -", 6),
        ];
        for (text, offset) in cases {
            let err = parse_predicate(text).unwrap_err();
            assert_eq!(err.offset, offset, "{text:?}: {err}");
        }
    }

    #[test]
    fn display_round_trips() {
        let p = parse_predicate("age>50&sex=1&g!=m").unwrap();
        assert_eq!(p.to_string(), "age > 50 & sex = 1 & g != m");
        assert_eq!(parse_predicate(&p.to_string()).unwrap(), p);
    }
}
