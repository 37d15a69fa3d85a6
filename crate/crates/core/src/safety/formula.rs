//! Boolean constraint language for GR(1) specs.
//!
//! ```text
//! expr    := or ( ("->" | "→") expr )?          right associative
//! or      := and ( ("|" | "∨") and )*
//! and     := unary ( ("&" | "∧") unary )*
//! unary   := ("!" | "¬") unary | atom
//! atom    := "true" | "false" | ident "'"? | "(" expr ")"
//! ident   := [A-Za-z_][A-Za-z0-9_]*
//! ```
//!
//! A primed identifier denotes the value at the next step.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::SafetyError;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Formula {
    Const(bool),
    Var { name: String, primed: bool },
    Not(Box<Formula>),
    And(Box<Formula>, Box<Formula>),
    Or(Box<Formula>, Box<Formula>),
    Implies(Box<Formula>, Box<Formula>),
}

impl Formula {
    pub fn var(name: &str) -> Self {
        Formula::Var { name: name.to_string(), primed: false }
    }

    pub fn next(name: &str) -> Self {
        Formula::Var { name: name.to_string(), primed: true }
    }

    pub fn negate(f: Formula) -> Self {
        Formula::Not(Box::new(f))
    }

    pub fn and(a: Formula, b: Formula) -> Self {
        Formula::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: Formula, b: Formula) -> Self {
        Formula::Or(Box::new(a), Box::new(b))
    }

    pub fn implies(a: Formula, b: Formula) -> Self {
        Formula::Implies(Box::new(a), Box::new(b))
    }

    /// Every `(name, primed)` occurrence, in traversal order.
    pub fn vars(&self) -> Vec<(&str, bool)> {
        let mut out = Vec::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars<'a>(&'a self, out: &mut Vec<(&'a str, bool)>) {
        match self {
            Formula::Const(_) => {}
            Formula::Var { name, primed } => out.push((name, *primed)),
            Formula::Not(a) => a.collect_vars(out),
            Formula::And(a, b) | Formula::Or(a, b) | Formula::Implies(a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
        }
    }

    /// Evaluates with a lookup from `(name, primed)` to a value.
    pub fn eval(&self, val: &impl Fn(&str, bool) -> bool) -> bool {
        match self {
            Formula::Const(b) => *b,
            Formula::Var { name, primed } => val(name, *primed),
            Formula::Not(a) => !a.eval(val),
            Formula::And(a, b) => a.eval(val) && b.eval(val),
            Formula::Or(a, b) => a.eval(val) || b.eval(val),
            Formula::Implies(a, b) => !a.eval(val) || b.eval(val),
        }
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Formula::Const(b) => write!(f, "{b}"),
            Formula::Var { name, primed } => write!(f, "{name}{}", if *primed { "'" } else { "" }),
            Formula::Not(a) => write!(f, "!{a}"),
            Formula::And(a, b) => write!(f, "({a} & {b})"),
            Formula::Or(a, b) => write!(f, "({a} | {b})"),
            Formula::Implies(a, b) => write!(f, "({a} -> {b})"),
        }
    }
}

impl FromStr for Formula {
    type Err = SafetyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let tokens = tokenize(s)?;
        let mut p = Parser { tokens, pos: 0, src: s };
        let f = p.implication()?;
        if p.pos != p.tokens.len() {
            return Err(p.error("unexpected trailing input"));
        }
        Ok(f)
    }
}

impl Serialize for Formula {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Formula {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Prime,
    Not,
    And,
    Or,
    Implies,
    LParen,
    RParen,
}

fn tokenize(s: &str) -> Result<Vec<(usize, Tok)>, SafetyError> {
    let mut out = Vec::new();
    let mut it = s.char_indices().peekable();
    while let Some((i, c)) = it.next() {
        let tok = match c {
            c if c.is_whitespace() => continue,
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            '\'' => Tok::Prime,
            '!' | '¬' => Tok::Not,
            '&' | '∧' => Tok::And,
            '|' | '∨' => Tok::Or,
            '→' => Tok::Implies,
            '-' if it.peek().map(|p| p.1) == Some('>') => {
                it.next();
                Tok::Implies
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut name = String::from(c);
                while let Some(&(_, d)) = it.peek() {
                    if d.is_ascii_alphanumeric() || d == '_' {
                        name.push(d);
                        it.next();
                    } else {
                        break;
                    }
                }
                Tok::Ident(name)
            }
            other => {
                return Err(SafetyError::Parse {
                    input: s.to_string(),
                    pos: i,
                    reason: format!("unexpected {other:?}"),
                })
            }
        };
        out.push((i, tok));
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<(usize, Tok)>,
    pos: usize,
    src: &'a str,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos).map(|t| &t.1)
    }

    fn error(&self, reason: &str) -> SafetyError {
        let pos = self.tokens.get(self.pos).map_or(self.src.len(), |t| t.0);
        SafetyError::Parse { input: self.src.to_string(), pos, reason: reason.to_string() }
    }

    fn implication(&mut self) -> Result<Formula, SafetyError> {
        let lhs = self.disjunction()?;
        if self.peek() == Some(&Tok::Implies) {
            self.pos += 1;
            let rhs = self.implication()?;
            return Ok(Formula::implies(lhs, rhs));
        }
        Ok(lhs)
    }

    fn disjunction(&mut self) -> Result<Formula, SafetyError> {
        let mut f = self.conjunction()?;
        while self.peek() == Some(&Tok::Or) {
            self.pos += 1;
            f = Formula::or(f, self.conjunction()?);
        }
        Ok(f)
    }

    fn conjunction(&mut self) -> Result<Formula, SafetyError> {
        let mut f = self.unary()?;
        while self.peek() == Some(&Tok::And) {
            self.pos += 1;
            f = Formula::and(f, self.unary()?);
        }
        Ok(f)
    }

    fn unary(&mut self) -> Result<Formula, SafetyError> {
        if self.peek() == Some(&Tok::Not) {
            self.pos += 1;
            return Ok(Formula::negate(self.unary()?));
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Formula, SafetyError> {
        match self.peek().cloned() {
            Some(Tok::LParen) => {
                self.pos += 1;
                let f = self.implication()?;
                if self.peek() != Some(&Tok::RParen) {
                    return Err(self.error("expected ')'"));
                }
                self.pos += 1;
                Ok(f)
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                match name.as_str() {
                    "true" => return Ok(Formula::Const(true)),
                    "false" => return Ok(Formula::Const(false)),
                    _ => {}
                }
                let primed = self.peek() == Some(&Tok::Prime);
                if primed {
                    self.pos += 1;
                }
                Ok(Formula::Var { name, primed })
            }
            _ => Err(self.error("expected identifier, constant or '('")),
        }
    }
}
