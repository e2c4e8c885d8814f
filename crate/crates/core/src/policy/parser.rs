use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

use super::ast::{Binding, Expr, Policy, Predicate, Rel, Rule, Sign, Term};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}, column {column}: {kind}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseErrorKind {
    #[error("unexpected character `{0}`")]
    BadChar(char),
    #[error("expected {expected}, found {found}")]
    Unexpected { expected: &'static str, found: String },
    #[error("unbound variable `{0}`")]
    Unbound(String),
    #[error("variable `{0}` bound twice")]
    Duplicate(String),
    #[error("malformed window: {0}")]
    MalformedWindow(String),
    #[error("number `{0}` out of range")]
    Range(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    LParen,
    RParen,
    Colon,
    Comma,
    Dot,
    And,
    Plus,
    Minus,
    Rel(Rel),
    Ident(String),
    Number(String),
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::LParen => f.write_str("`(`"),
            Tok::RParen => f.write_str("`)`"),
            Tok::Colon => f.write_str("`:`"),
            Tok::Comma => f.write_str("`,`"),
            Tok::Dot => f.write_str("`.`"),
            Tok::And => f.write_str("`&&`"),
            Tok::Plus => f.write_str("`+`"),
            Tok::Minus => f.write_str("`-`"),
            Tok::Rel(r) => write!(f, "`{}`", r.as_str()),
            Tok::Ident(s) | Tok::Number(s) => write!(f, "`{s}`"),
            Tok::Eof => f.write_str("end of input"),
        }
    }
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    column: usize,
}

fn lex(src: &str) -> Result<Vec<Spanned>, ParseError> {
    let mut out = Vec::new();
    let chars: Vec<char> = src.chars().collect();
    let (mut i, mut line, mut col) = (0, 1, 1);
    while i < chars.len() {
        let c = chars[i];
        let (l, cl) = (line, col);
        let mut push = |tok, len: usize, i: &mut usize, col: &mut usize| {
            out.push(Spanned { tok, line: l, column: cl });
            *i += len;
            *col += len;
        };
        match c {
            '\n' => {
                i += 1;
                line += 1;
                col = 1;
            }
            c if c.is_whitespace() => {
                i += 1;
                col += 1;
            }
            '#' => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
            }
            '(' => push(Tok::LParen, 1, &mut i, &mut col),
            ')' => push(Tok::RParen, 1, &mut i, &mut col),
            ':' => push(Tok::Colon, 1, &mut i, &mut col),
            ',' => push(Tok::Comma, 1, &mut i, &mut col),
            '.' => push(Tok::Dot, 1, &mut i, &mut col),
            '+' => push(Tok::Plus, 1, &mut i, &mut col),
            '-' => push(Tok::Minus, 1, &mut i, &mut col),
            '&' if chars.get(i + 1) == Some(&'&') => push(Tok::And, 2, &mut i, &mut col),
            '<' | '>' => {
                let eq = chars.get(i + 1) == Some(&'=');
                let rel = match (c, eq) {
                    ('<', false) => Rel::Lt,
                    ('<', true) => Rel::Le,
                    ('>', false) => Rel::Gt,
                    _ => Rel::Ge,
                };
                push(Tok::Rel(rel), if eq { 2 } else { 1 }, &mut i, &mut col)
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let s: String = chars[i..].iter().take_while(|c| c.is_ascii_alphanumeric() || **c == '_').collect();
                let n = s.chars().count();
                push(Tok::Ident(s), n, &mut i, &mut col)
            }
            c if c.is_ascii_digit() => {
                let s: String =
                    chars[i..].iter().take_while(|c| c.is_ascii_hexdigit() || **c == 'x' || **c == 'X').collect();
                let n = s.chars().count();
                push(Tok::Number(s), n, &mut i, &mut col)
            }
            other => {
                return Err(ParseError { line, column: col, kind: ParseErrorKind::BadChar(other) });
            }
        }
    }
    out.push(Spanned { tok: Tok::Eof, line, column: col });
    Ok(out)
}

/// Parses a frame id written in decimal or `0x` hexadecimal.
pub fn parse_frame_id(s: &str) -> Option<u32> {
    match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(hex) if !hex.is_empty() => u32::from_str_radix(hex, 16).ok(),
        Some(_) => None,
        None => s.parse().ok(),
    }
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Spanned {
        &self.toks[self.pos]
    }

    fn peek2(&self) -> &Tok {
        &self.toks[(self.pos + 1).min(self.toks.len() - 1)].tok
    }

    fn bump(&mut self) -> Spanned {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err_at(&self, at: &Spanned, kind: ParseErrorKind) -> ParseError {
        ParseError { line: at.line, column: at.column, kind }
    }

    fn unexpected(&self, expected: &'static str) -> ParseError {
        let at = self.peek();
        self.err_at(at, ParseErrorKind::Unexpected { expected, found: at.tok.to_string() })
    }

    fn expect(&mut self, tok: Tok, expected: &'static str) -> Result<Spanned, ParseError> {
        if self.peek().tok == tok {
            Ok(self.bump())
        } else {
            Err(self.unexpected(expected))
        }
    }

    fn policy(&mut self) -> Result<Policy, ParseError> {
        let mut rules = vec![self.rule()?];
        while self.peek().tok == Tok::And {
            self.bump();
            rules.push(self.rule()?);
        }
        if self.peek().tok != Tok::Eof {
            return Err(self.unexpected("`&&` or end of input"));
        }
        Ok(Policy { rules })
    }

    fn rule(&mut self) -> Result<Rule, ParseError> {
        self.expect(Tok::LParen, "`(`")?;
        let mut bindings: Vec<Binding> = Vec::new();
        let mut bound = BTreeSet::new();
        while matches!(self.peek().tok, Tok::Ident(_)) && *self.peek2() == Tok::Colon {
            let at = self.peek().clone();
            let b = self.binding()?;
            if !bound.insert(b.var.clone()) {
                return Err(self.err_at(&at, ParseErrorKind::Duplicate(b.var)));
            }
            bindings.push(b);
            self.expect(Tok::Dot, "`.`")?;
        }
        if bindings.is_empty() {
            return Err(self.unexpected("a binding `VAR:<FRAMEID,INT>`"));
        }
        let expr = self.expr(&bound)?;
        let rel = match self.bump() {
            Spanned { tok: Tok::Rel(r), .. } => r,
            other => {
                return Err(self.err_at(
                    &other,
                    ParseErrorKind::Unexpected { expected: "a comparison", found: other.tok.to_string() },
                ))
            }
        };
        let threshold = self.threshold()?;
        self.expect(Tok::RParen, "`)`")?;
        Ok(Rule { bindings, predicate: Predicate { expr, rel, threshold } })
    }

    fn binding(&mut self) -> Result<Binding, ParseError> {
        let Tok::Ident(var) = self.bump().tok else { unreachable!("checked by caller") };
        self.expect(Tok::Colon, "`:`")?;
        let open = self.peek().clone();
        if open.tok != Tok::Rel(Rel::Lt) {
            return Err(
                self.err_at(&open, ParseErrorKind::MalformedWindow(format!("expected `<`, found {}", open.tok)))
            );
        }
        self.bump();
        let id_tok = self.bump();
        let frame_id = match &id_tok.tok {
            Tok::Number(s) => parse_frame_id(s)
                .ok_or_else(|| self.err_at(&id_tok, ParseErrorKind::MalformedWindow(format!("bad frame id `{s}`"))))?,
            other => {
                return Err(
                    self.err_at(&id_tok, ParseErrorKind::MalformedWindow(format!("expected frame id, found {other}")))
                )
            }
        };
        let comma = self.bump();
        if comma.tok != Tok::Comma {
            return Err(
                self.err_at(&comma, ParseErrorKind::MalformedWindow(format!("expected `,`, found {}", comma.tok)))
            );
        }
        let h_tok = self.bump();
        let h_ms = match &h_tok.tok {
            Tok::Number(s) => match s.parse::<u64>() {
                Ok(h) if h > 0 => h,
                _ => {
                    return Err(self.err_at(&h_tok, ParseErrorKind::MalformedWindow(format!("bad window length `{s}`"))))
                }
            },
            other => {
                return Err(self
                    .err_at(&h_tok, ParseErrorKind::MalformedWindow(format!("expected window length, found {other}"))))
            }
        };
        let close = self.bump();
        if close.tok != Tok::Rel(Rel::Gt) {
            return Err(
                self.err_at(&close, ParseErrorKind::MalformedWindow(format!("expected `>`, found {}", close.tok)))
            );
        }
        Ok(Binding { var, frame_id, h_ms })
    }

    fn expr(&mut self, bound: &BTreeSet<String>) -> Result<Expr, ParseError> {
        let first = self.term(bound)?;
        let mut rest = Vec::new();
        loop {
            let sign = match self.peek().tok {
                Tok::Plus => Sign::Plus,
                Tok::Minus => Sign::Minus,
                _ => break,
            };
            self.bump();
            rest.push((sign, self.term(bound)?));
        }
        Ok(Expr { first, rest })
    }

    fn term(&mut self, bound: &BTreeSet<String>) -> Result<Term, ParseError> {
        let t = self.peek().clone();
        match &t.tok {
            Tok::Ident(v) => {
                if !bound.contains(v) {
                    return Err(self.err_at(&t, ParseErrorKind::Unbound(v.clone())));
                }
                self.bump();
                Ok(Term::Var(v.clone()))
            }
            Tok::LParen => {
                self.bump();
                let e = self.expr(bound)?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(Term::Group(Box::new(e)))
            }
            _ => Err(self.unexpected("a variable or `(`")),
        }
    }

    fn threshold(&mut self) -> Result<i64, ParseError> {
        let negative = self.peek().tok == Tok::Minus;
        if negative {
            self.bump();
        }
        let t = self.bump();
        match &t.tok {
            Tok::Number(s) => {
                let v: i64 = s.parse().map_err(|_| self.err_at(&t, ParseErrorKind::Range(s.clone())))?;
                Ok(if negative { -v } else { v })
            }
            other => Err(self
                .err_at(&t, ParseErrorKind::Unexpected { expected: "an integer threshold", found: other.to_string() })),
        }
    }
}

/// Parses a policy document. `#` starts a comment running to end of line.
pub fn parse_policy(text: &str) -> Result<Policy, ParseError> {
    let toks = lex(text)?;
    Parser { toks, pos: 0 }.policy()
}
