//! Expression printing in the input grammar. A printed expression reparses
//! to an expression that evaluates identically (round-trip stability); the
//! node shapes may differ since parsing re-normalizes.

use super::{Expr, ExprNode, Rational};
use num::Signed;
use std::fmt::Write;

impl Expr {
    /// Renders with the given coordinate names.
    pub fn to_text_with(&self, coords: &[String]) -> String {
        let mut s = String::new();
        write_expr(&mut s, self, coords, Prec::Sum);
        s
    }

    /// Renders with placeholder coordinate names `q1..qN`.
    pub fn to_text(&self) -> String {
        let names: Vec<String> = (1..=16).map(|i| format!("q{i}")).collect();
        self.to_text_with(&names)
    }
}

#[derive(PartialEq, PartialOrd, Clone, Copy)]
enum Prec {
    Sum,
    Product,
    Unary,
    Power,
    Atom,
}

fn write_expr(out: &mut String, e: &Expr, coords: &[String], enclosing: Prec) {
    match e.node() {
        ExprNode::Rational(r) => write_rational(out, r, enclosing),
        ExprNode::Coord(i) => {
            let name = coords
                .get(*i)
                .cloned()
                .unwrap_or_else(|| format!("q{}", i + 1));
            out.push_str(&name);
        }
        ExprNode::Time => out.push('t'),
        ExprNode::Param(p) => out.push_str(p),
        ExprNode::Sum(terms) => {
            let need_parens = enclosing > Prec::Sum;
            if need_parens {
                out.push('(');
            }
            for (i, t) in terms.iter().enumerate() {
                let (coeff, _) = super::decompose_term(t);
                if i > 0 {
                    if coeff.is_negative() {
                        out.push_str(" - ");
                        write_expr(out, &Expr::neg(t.clone()), coords, Prec::Product);
                        continue;
                    }
                    out.push_str(" + ");
                }
                write_expr(out, t, coords, Prec::Product);
            }
            if need_parens {
                out.push(')');
            }
        }
        ExprNode::Product(factors) => {
            let need_parens = enclosing > Prec::Product;
            if need_parens {
                out.push('(');
            }
            write_product(out, factors, coords);
            if need_parens {
                out.push(')');
            }
        }
        ExprNode::Power(base, exp) => {
            let need_parens = enclosing > Prec::Power;
            if need_parens {
                out.push('(');
            }
            write_expr(out, base, coords, Prec::Atom);
            out.push('^');
            if exp.is_integer() && !exp.is_negative() {
                let _ = write!(out, "{exp}");
            } else {
                let _ = write!(out, "({exp})");
            }
            if need_parens {
                out.push(')');
            }
        }
        ExprNode::Exp(arg) => {
            out.push_str("exp(");
            write_expr(out, arg, coords, Prec::Sum);
            out.push(')');
        }
    }
}

fn write_rational(out: &mut String, r: &Rational, enclosing: Prec) {
    let needs_parens = (r.is_negative() || !r.is_integer()) && enclosing > Prec::Sum;
    if needs_parens {
        out.push('(');
    }
    let _ = write!(out, "{r}");
    if needs_parens {
        out.push(')');
    }
}

/// Products print with negative-exponent factors gathered into a trailing
/// division, so `8*beta*w*u^(-3)` renders as `8*beta*w/u^3`.
fn write_product(out: &mut String, factors: &[Expr], coords: &[String]) {
    let mut numer: Vec<Expr> = Vec::new();
    let mut denom: Vec<Expr> = Vec::new();
    for f in factors {
        if let ExprNode::Power(base, e) = f.node() {
            if e.is_negative() {
                denom.push(Expr::powr(base.clone(), -e.clone()));
                continue;
            }
        }
        numer.push(f.clone());
    }
    if numer.is_empty() {
        out.push('1');
    } else {
        for (i, f) in numer.iter().enumerate() {
            if i > 0 {
                out.push('*');
            }
            write_expr(out, f, coords, Prec::Unary);
        }
    }
    for d in denom {
        out.push('/');
        write_expr(out, &d, coords, Prec::Unary);
    }
}
