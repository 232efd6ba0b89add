//! Recursive-descent parser for the expression grammar.
//!
//! Grammar (whitespace insignificant):
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := atom ('^' power)?              // right-associative
//! atom   := NUMBER | IDENT | IDENT '(' expr ')' | '(' expr ')'
//! NUMBER := digits ('.' digits)?           // decimals become exact fractions
//! IDENT  := [A-Za-z_][A-Za-z0-9_]*
//! ```
//!
//! Precedence: `^` over unary `-` over `*` `/` over `+` `-`. The only
//! function is `exp`. Exponents must fold to exact rational constants, so
//! `u^(-2)` and `(x^2-y^2)^(-2/3)` parse while `x^y` is rejected.

use super::{Expr, Rational};
use num::BigInt;
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ParseError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown function `{name}` at byte {offset}")]
    UnknownFunction { offset: usize, name: String },
    #[error("zero literal denominator at byte {offset}")]
    ZeroDenominator { offset: usize },
    #[error("exponent at byte {offset} is not an exact rational constant")]
    NonRationalExponent { offset: usize },
}

/// Maps identifiers to coordinates; `t` is the time variable, every other
/// identifier is a named parameter.
#[derive(Debug, Clone, Default)]
pub struct ParseContext {
    coords: Vec<String>,
}

impl ParseContext {
    pub fn new(coords: &[impl AsRef<str>]) -> Self {
        ParseContext {
            coords: coords.iter().map(|c| c.as_ref().to_string()).collect(),
        }
    }

    pub fn coord_names(&self) -> &[String] {
        &self.coords
    }

    fn resolve(&self, ident: &str) -> Expr {
        if ident == "t" {
            return Expr::time();
        }
        match self.coords.iter().position(|c| c == ident) {
            Some(i) => Expr::coord(i),
            None => Expr::param(ident),
        }
    }
}

/// Parses `text` against the given coordinate context.
pub fn parse(text: &str, ctx: &ParseContext) -> Result<Expr, ParseError> {
    let mut p = Parser {
        bytes: text.as_bytes(),
        pos: 0,
        ctx,
    };
    p.skip_ws();
    let e = p.expr()?;
    p.skip_ws();
    if p.pos != p.bytes.len() {
        return Err(p.err("unexpected trailing input"));
    }
    Ok(e)
}

/// Parses with coordinates `x`, `y`, `z` — convenient in tests and examples.
pub fn parse_simple(text: &str) -> Result<Expr, ParseError> {
    parse(text, &ParseContext::new(&["x", "y", "z"]))
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
    ctx: &'a ParseContext,
}

impl<'a> Parser<'a> {
    fn err(&self, message: &str) -> ParseError {
        ParseError::Syntax {
            offset: self.pos,
            message: message.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            self.skip_ws();
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut terms = vec![self.term()?];
        loop {
            if self.eat(b'+') {
                terms.push(self.term()?);
            } else if self.eat(b'-') {
                terms.push(Expr::neg(self.term()?));
            } else {
                break;
            }
        }
        Ok(Expr::add(terms))
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut acc = self.unary()?;
        loop {
            if self.eat(b'*') {
                acc = Expr::mul2(acc, self.unary()?);
            } else if self.eat(b'/') {
                let offset = self.pos;
                let rhs = self.unary()?;
                if rhs.is_literal_zero() {
                    return Err(ParseError::ZeroDenominator { offset });
                }
                acc = Expr::div(acc, rhs);
            } else {
                break;
            }
        }
        Ok(acc)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.eat(b'-') {
            Ok(Expr::neg(self.unary()?))
        } else {
            self.power()
        }
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if self.eat(b'^') {
            let offset = self.pos;
            let exp_expr = self.power()?;
            let exponent = exp_expr
                .as_rational()
                .cloned()
                .ok_or(ParseError::NonRationalExponent { offset })?;
            Ok(Expr::powr(base, exponent))
        } else {
            Ok(base)
        }
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                self.skip_ws();
                let e = self.expr()?;
                if !self.eat(b')') {
                    return Err(self.err("expected `)`"));
                }
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.identifier(),
            _ => Err(self.err("expected a number, identifier or `(`")),
        }
    }

    fn number(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_digit()) {
            self.pos += 1;
        }
        let int_part = &self.bytes[start..self.pos];
        let mut numer = BigInt::parse_bytes(int_part, 10).ok_or_else(|| self.err("bad number"))?;
        let mut denom = BigInt::from(1u8);
        if self.peek() == Some(b'.') {
            self.pos += 1;
            let fstart = self.pos;
            while self.peek().is_some_and(|c| c.is_ascii_digit()) {
                self.pos += 1;
            }
            if self.pos == fstart {
                return Err(self.err("expected digits after decimal point"));
            }
            let frac = &self.bytes[fstart..self.pos];
            let fdigits = frac.len();
            let fval = BigInt::parse_bytes(frac, 10).ok_or_else(|| self.err("bad number"))?;
            let scale = num::pow::pow(BigInt::from(10u8), fdigits);
            numer = numer * &scale + fval;
            denom = scale;
        }
        self.skip_ws();
        Ok(Expr::rational(Rational::new(numer, denom)))
    }

    fn identifier(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        while self
            .peek()
            .is_some_and(|c| c.is_ascii_alphanumeric() || c == b'_')
        {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.bytes[start..self.pos])
            .map_err(|_| self.err("invalid identifier"))?
            .to_string();
        self.skip_ws();
        if self.peek() == Some(b'(') {
            if name != "exp" {
                return Err(ParseError::UnknownFunction {
                    offset: start,
                    name,
                });
            }
            self.pos += 1;
            self.skip_ws();
            let arg = self.expr()?;
            if !self.eat(b')') {
                return Err(self.err("expected `)` after exp argument"));
            }
            return Ok(Expr::exp(arg));
        }
        Ok(self.ctx.resolve(&name))
    }
}
