//! Exact symbolic expression kernel.
//!
//! Every tensor component, potential and condition residual in this crate is
//! an [`Expr`]: an immutable tree over exact rational constants, coordinate
//! variables, the time variable, named parameters, sums, products, rational
//! powers and the exponential function. No node ever stores a floating-point
//! constant; floats only appear at evaluation time.
//!
//! Simplification is deliberately conservative: sums and products are
//! flattened and sorted, rational constants are merged, like terms are
//! collected by their canonical factor list, and powers of a common base are
//! combined. There is no factorization and no radical manipulation — deciding
//! whether an expression vanishes is the job of the sampling-based
//! [`ZeroTester`](sample::ZeroTester), so the canonical form only has to be
//! stable, not minimal.

mod dd;
mod eval;
mod parse;
mod print;
mod sample;

pub use dd::Dd;
pub use eval::{
    eval_at_precision, f64_to_rational, rational_to_f64, Bindings, CompiledExpr, EvalError,
    ExactError, Precision, Scalar,
};
pub use parse::{parse, parse_simple, ParseContext, ParseError};
pub use sample::{
    Domain, SampleError, SamplePoint, SplitMix64, ZeroConfig, ZeroTestError, ZeroTester,
    ZeroVerdict,
};

use num::{BigInt, One, Signed, Zero};
use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

/// Exact rational scalar used throughout the crate.
pub type Rational = num::BigRational;

/// Builds a `Rational` from two machine integers. Panics on zero denominator.
pub fn rat(num: i64, den: i64) -> Rational {
    Rational::new(BigInt::from(num), BigInt::from(den))
}

/// A differentiation variable: one of the coordinates, or time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    /// Coordinate `q^a`, 0-based.
    Coord(usize),
    /// The time variable `t`.
    Time,
}

/// Expression tree node.构造 exclusively through the smart constructors on
/// [`Expr`], which maintain the canonical form invariants.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ExprNode {
    /// Exact rational constant, lowest terms, positive denominator.
    Rational(Rational),
    /// Named parameter (e.g. `beta`, `c0`, `k1`).
    Param(String),
    /// Coordinate variable `q^a`, 0-based index.
    Coord(usize),
    /// The time variable.
    Time,
    /// Flattened sum; at least two summands, no nested sums.
    Sum(Vec<Expr>),
    /// Flattened product; an optional leading rational coefficient followed
    /// by sorted non-rational factors.
    Product(Vec<Expr>),
    /// Power with an exact rational exponent.
    Power(Expr, Rational),
    /// Exponential function.
    Exp(Expr),
}

/// Immutable, cheaply clonable symbolic expression.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Expr(Arc<ExprNode>);

impl PartialOrd for Expr {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Expr {
    fn cmp(&self, other: &Self) -> Ordering {
        if Arc::ptr_eq(&self.0, &other.0) {
            return Ordering::Equal;
        }
        self.0.cmp(&other.0)
    }
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_text())
    }
}

impl Expr {
    pub fn node(&self) -> &ExprNode {
        &self.0
    }

    fn new(node: ExprNode) -> Self {
        Expr(Arc::new(node))
    }

    pub fn zero() -> Self {
        Expr::new(ExprNode::Rational(Rational::zero()))
    }

    pub fn one() -> Self {
        Expr::new(ExprNode::Rational(Rational::one()))
    }

    pub fn int(n: i64) -> Self {
        Expr::new(ExprNode::Rational(Rational::from_integer(BigInt::from(n))))
    }

    pub fn rational(r: Rational) -> Self {
        Expr::new(ExprNode::Rational(r))
    }

    pub fn rat(num: i64, den: i64) -> Self {
        Expr::rational(rat(num, den))
    }

    pub fn coord(index: usize) -> Self {
        Expr::new(ExprNode::Coord(index))
    }

    pub fn time() -> Self {
        Expr::new(ExprNode::Time)
    }

    pub fn param(name: impl Into<String>) -> Self {
        Expr::new(ExprNode::Param(name.into()))
    }

    pub fn is_literal_zero(&self) -> bool {
        matches!(self.node(), ExprNode::Rational(r) if r.is_zero())
    }

    pub fn is_literal_one(&self) -> bool {
        matches!(self.node(), ExprNode::Rational(r) if r.is_one())
    }

    /// The exact rational value, if this expression is a rational constant.
    pub fn as_rational(&self) -> Option<&Rational> {
        match self.node() {
            ExprNode::Rational(r) => Some(r),
            _ => None,
        }
    }

    /// Sum of an arbitrary number of terms, with like-term collection.
    pub fn add(terms: impl IntoIterator<Item = Expr>) -> Self {
        // term key = canonical factor list, value = accumulated coefficient
        let mut acc: BTreeMap<Vec<Expr>, Rational> = BTreeMap::new();
        let mut stack: Vec<Expr> = terms.into_iter().collect();
        stack.reverse();
        while let Some(term) = stack.pop() {
            match term.node() {
                ExprNode::Sum(inner) => stack.extend(inner.iter().rev().cloned()),
                _ => {
                    let (coeff, factors) = decompose_term(&term);
                    if !coeff.is_zero() {
                        let slot = acc.entry(factors).or_insert_with(Rational::zero);
                        *slot += coeff;
                    }
                }
            }
        }
        let mut out: Vec<Expr> = Vec::with_capacity(acc.len());
        for (factors, coeff) in acc {
            if coeff.is_zero() {
                continue;
            }
            out.push(recompose_term(coeff, factors));
        }
        match out.len() {
            0 => Expr::zero(),
            1 => out.pop().unwrap(),
            _ => Expr::new(ExprNode::Sum(out)),
        }
    }

    pub fn add2(a: Expr, b: Expr) -> Self {
        Expr::add([a, b])
    }

    pub fn sub(a: Expr, b: Expr) -> Self {
        Expr::add([a, Expr::neg(b)])
    }

    pub fn neg(a: Expr) -> Self {
        Expr::mul([Expr::int(-1), a])
    }

    /// Product of an arbitrary number of factors. Rational factors are folded
    /// into a single coefficient, and powers of a common base are merged.
    pub fn mul(factors: impl IntoIterator<Item = Expr>) -> Self {
        let mut coeff = Rational::one();
        // base -> exponent
        let mut bases: BTreeMap<Expr, Rational> = BTreeMap::new();
        let mut stack: Vec<Expr> = factors.into_iter().collect();
        stack.reverse();
        while let Some(f) = stack.pop() {
            match f.node() {
                ExprNode::Product(inner) => stack.extend(inner.iter().rev().cloned()),
                ExprNode::Rational(r) => {
                    if r.is_zero() {
                        return Expr::zero();
                    }
                    coeff *= r;
                }
                ExprNode::Power(base, e) => {
                    // rational base with integer exponent folds into the coefficient
                    if let (ExprNode::Rational(r), true) = (base.node(), e.is_integer()) {
                        if let Some(f) = pow_rational(r, e) {
                            coeff *= f;
                            continue;
                        }
                    }
                    *bases.entry(base.clone()).or_insert_with(Rational::zero) += e;
                }
                _ => {
                    *bases.entry(f.clone()).or_insert_with(Rational::zero) += Rational::one();
                }
            }
        }
        if coeff.is_zero() {
            return Expr::zero();
        }
        // a rational scale of a lone sum distributes, so differences of
        // identical sums cancel structurally
        if bases.len() == 1 && !coeff.is_one() {
            let (base, e) = bases.iter().next().unwrap();
            if e.is_one() {
                if let ExprNode::Sum(terms) = base.node() {
                    let scaled: Vec<Expr> = terms
                        .iter()
                        .map(|t| Expr::mul([Expr::rational(coeff.clone()), t.clone()]))
                        .collect();
                    return Expr::add(scaled);
                }
            }
        }
        let mut out: Vec<Expr> = Vec::with_capacity(bases.len() + 1);
        if !coeff.is_one() {
            out.push(Expr::rational(coeff));
        }
        for (base, e) in bases {
            if e.is_zero() {
                continue;
            }
            if e.is_one() {
                out.push(base);
            } else {
                out.push(Expr::new(ExprNode::Power(base, e)));
            }
        }
        match out.len() {
            0 => Expr::one(),
            1 => out.pop().unwrap(),
            _ => Expr::new(ExprNode::Product(out)),
        }
    }

    pub fn mul2(a: Expr, b: Expr) -> Self {
        Expr::mul([a, b])
    }

    /// Multiply by an exact rational scale.
    pub fn scale(self, r: Rational) -> Self {
        Expr::mul([Expr::rational(r), self])
    }

    /// Quotient `a / b`, normalized to `a * b^(-1)`.
    pub fn div(a: Expr, b: Expr) -> Self {
        Expr::mul([a, Expr::powr(b, -Rational::one())])
    }

    /// Power with an exact rational exponent.
    pub fn powr(base: Expr, exponent: Rational) -> Self {
        if exponent.is_zero() {
            return Expr::one();
        }
        if exponent.is_one() {
            return base;
        }
        match base.node() {
            ExprNode::Rational(r) => {
                if let Some(v) = pow_rational(r, &exponent) {
                    return Expr::rational(v);
                }
                if r.is_zero() && exponent.is_positive() {
                    return Expr::zero();
                }
            }
            // (b^e1)^e2 collapses when the outer exponent is an integer
            ExprNode::Power(inner, e1) => {
                if exponent.is_integer() {
                    return Expr::powr(inner.clone(), e1 * &exponent);
                }
            }
            // (a*b)^n distributes for integer n
            ExprNode::Product(fs) => {
                if exponent.is_integer() {
                    let fs: Vec<Expr> = fs
                        .iter()
                        .map(|f| Expr::powr(f.clone(), exponent.clone()))
                        .collect();
                    return Expr::mul(fs);
                }
            }
            _ => {}
        }
        Expr::new(ExprNode::Power(base, exponent))
    }

    pub fn powi(base: Expr, exponent: i64) -> Self {
        Expr::powr(base, Rational::from_integer(BigInt::from(exponent)))
    }

    pub fn exp(arg: Expr) -> Self {
        if arg.is_literal_zero() {
            return Expr::one();
        }
        Expr::new(ExprNode::Exp(arg))
    }

    /// Exact partial derivative with respect to a coordinate or to time.
    /// Coordinates, time and parameters are mutually independent.
    pub fn differentiate(&self, wrt: Var) -> Expr {
        match self.node() {
            ExprNode::Rational(_) | ExprNode::Param(_) => Expr::zero(),
            ExprNode::Coord(i) => match wrt {
                Var::Coord(j) if *i == j => Expr::one(),
                _ => Expr::zero(),
            },
            ExprNode::Time => match wrt {
                Var::Time => Expr::one(),
                _ => Expr::zero(),
            },
            ExprNode::Sum(terms) => Expr::add(terms.iter().map(|t| t.differentiate(wrt))),
            ExprNode::Product(factors) => {
                let mut terms = Vec::with_capacity(factors.len());
                for (i, fi) in factors.iter().enumerate() {
                    let d = fi.differentiate(wrt);
                    if d.is_literal_zero() {
                        continue;
                    }
                    let mut fs: Vec<Expr> = Vec::with_capacity(factors.len());
                    for (j, fj) in factors.iter().enumerate() {
                        if i != j {
                            fs.push(fj.clone());
                        }
                    }
                    fs.push(d);
                    terms.push(Expr::mul(fs));
                }
                Expr::add(terms)
            }
            ExprNode::Power(base, e) => {
                let d = base.differentiate(wrt);
                if d.is_literal_zero() {
                    return Expr::zero();
                }
                Expr::mul([
                    Expr::rational(e.clone()),
                    Expr::powr(base.clone(), e - Rational::one()),
                    d,
                ])
            }
            ExprNode::Exp(arg) => {
                let d = arg.differentiate(wrt);
                if d.is_literal_zero() {
                    return Expr::zero();
                }
                Expr::mul([d, self.clone()])
            }
        }
    }

    /// Replaces every occurrence of the named parameter by `value`.
    pub fn subst_param(&self, name: &str, value: &Expr) -> Expr {
        match self.node() {
            ExprNode::Param(p) if p == name => value.clone(),
            ExprNode::Rational(_) | ExprNode::Coord(_) | ExprNode::Time | ExprNode::Param(_) => {
                self.clone()
            }
            ExprNode::Sum(ts) => Expr::add(ts.iter().map(|t| t.subst_param(name, value))),
            ExprNode::Product(fs) => Expr::mul(fs.iter().map(|f| f.subst_param(name, value))),
            ExprNode::Power(b, e) => Expr::powr(b.subst_param(name, value), e.clone()),
            ExprNode::Exp(a) => Expr::exp(a.subst_param(name, value)),
        }
    }

    /// Relabels coordinates: `Coord(i)` becomes `Coord(perm[i])`.
    pub fn permute_coords(&self, perm: &[usize]) -> Expr {
        match self.node() {
            ExprNode::Coord(i) => Expr::coord(perm[*i]),
            ExprNode::Rational(_) | ExprNode::Time | ExprNode::Param(_) => self.clone(),
            ExprNode::Sum(ts) => Expr::add(ts.iter().map(|t| t.permute_coords(perm))),
            ExprNode::Product(fs) => Expr::mul(fs.iter().map(|f| f.permute_coords(perm))),
            ExprNode::Power(b, e) => Expr::powr(b.permute_coords(perm), e.clone()),
            ExprNode::Exp(a) => Expr::exp(a.permute_coords(perm)),
        }
    }

    /// Collects the names of all parameters appearing in the expression.
    pub fn collect_params(&self, out: &mut std::collections::BTreeSet<String>) {
        match self.node() {
            ExprNode::Param(p) => {
                out.insert(p.clone());
            }
            ExprNode::Sum(ts) => ts.iter().for_each(|t| t.collect_params(out)),
            ExprNode::Product(fs) => fs.iter().for_each(|f| f.collect_params(out)),
            ExprNode::Power(b, _) => b.collect_params(out),
            ExprNode::Exp(a) => a.collect_params(out),
            _ => {}
        }
    }

    /// True if the time variable appears anywhere in the expression.
    pub fn mentions_time(&self) -> bool {
        match self.node() {
            ExprNode::Time => true,
            ExprNode::Sum(ts) => ts.iter().any(|t| t.mentions_time()),
            ExprNode::Product(fs) => fs.iter().any(|f| f.mentions_time()),
            ExprNode::Power(b, _) => b.mentions_time(),
            ExprNode::Exp(a) => a.mentions_time(),
            _ => false,
        }
    }
}

/// Splits a term into (rational coefficient, canonical factor list).
fn decompose_term(term: &Expr) -> (Rational, Vec<Expr>) {
    match term.node() {
        ExprNode::Rational(r) => (r.clone(), Vec::new()),
        ExprNode::Product(fs) => {
            let mut coeff = Rational::one();
            let mut rest = Vec::with_capacity(fs.len());
            for f in fs {
                match f.node() {
                    ExprNode::Rational(r) => coeff *= r,
                    _ => rest.push(f.clone()),
                }
            }
            (coeff, rest)
        }
        _ => (Rational::one(), vec![term.clone()]),
    }
}

fn recompose_term(coeff: Rational, factors: Vec<Expr>) -> Expr {
    if factors.is_empty() {
        return Expr::rational(coeff);
    }
    if coeff.is_one() && factors.len() == 1 {
        return factors.into_iter().next().unwrap();
    }
    let mut fs = Vec::with_capacity(factors.len() + 1);
    if !coeff.is_one() {
        fs.push(Expr::rational(coeff));
    }
    fs.extend(factors);
    if fs.len() == 1 {
        fs.pop().unwrap()
    } else {
        Expr::new(ExprNode::Product(fs))
    }
}

/// Exact `r^e` when the result is rational: integer exponents always, and
/// otherwise only when numerator and denominator are perfect powers.
fn pow_rational(r: &Rational, e: &Rational) -> Option<Rational> {
    if e.is_integer() {
        let n = e.to_integer();
        let n: i32 = n.try_into().ok()?;
        if r.is_zero() && n < 0 {
            return None;
        }
        if n >= 0 {
            return Some(num::pow::pow(r.clone(), n as usize));
        }
        return Some(num::pow::pow(r.clone(), (-n) as usize).recip());
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x() -> Expr {
        Expr::coord(0)
    }
    fn y() -> Expr {
        Expr::coord(1)
    }

    #[test]
    fn sums_collapse_like_terms() {
        // x + 2x - 3x = 0
        let e = Expr::add([
            x(),
            Expr::mul([Expr::int(2), x()]),
            Expr::mul([Expr::int(-3), x()]),
        ]);
        assert!(e.is_literal_zero());
    }

    #[test]
    fn products_merge_powers() {
        // x * x^2 = x^3, x * x^-1 = 1
        let e = Expr::mul([x(), Expr::powi(x(), 2)]);
        assert_eq!(e, Expr::powi(x(), 3));
        let e = Expr::mul([x(), Expr::powi(x(), -1)]);
        assert!(e.is_literal_one());
    }

    #[test]
    fn rational_arithmetic_is_exact() {
        let e = Expr::mul([Expr::rat(2, 3), Expr::rat(9, 4)]);
        assert_eq!(e.as_rational().unwrap(), &rat(3, 2));
        let e = Expr::powi(Expr::rat(2, 3), -2);
        assert_eq!(e.as_rational().unwrap(), &rat(9, 4));
    }

    #[test]
    fn power_rule_and_chain_rule() {
        // d/dx x^(-2) = -2 x^(-3)
        let d = Expr::powi(x(), -2).differentiate(Var::Coord(0));
        assert_eq!(d, Expr::mul([Expr::int(-2), Expr::powi(x(), -3)]));
        // d/dy exp(x*y) = x * exp(x*y)
        let e = Expr::exp(Expr::mul([x(), y()]));
        let d = e.differentiate(Var::Coord(1));
        assert_eq!(d, Expr::mul([x(), e.clone()]));
    }

    #[test]
    fn product_rule_cancellation() {
        // (u*w)' - u'w - uw' with respect to coordinate 0 after expansion is
        // identically zero; the simplifier sees the cancellation structurally.
        let u = x();
        let w = Expr::powi(y(), 2);
        let prod = Expr::mul([u.clone(), w.clone()]);
        let lhs = prod.differentiate(Var::Coord(0));
        let rhs = Expr::add([
            Expr::mul([u.differentiate(Var::Coord(0)), w.clone()]),
            Expr::mul([u, w.differentiate(Var::Coord(0))]),
        ]);
        assert!(Expr::sub(lhs, rhs).is_literal_zero());
    }

    #[test]
    fn exp_of_zero_is_one() {
        assert!(Expr::exp(Expr::zero()).is_literal_one());
    }

    #[test]
    fn derivative_keeps_rationals_exact() {
        // d/dx (3/7 x^5) = 15/7 x^4
        let e = Expr::mul([Expr::rat(3, 7), Expr::powi(x(), 5)]);
        let d = e.differentiate(Var::Coord(0));
        let (c, _) = decompose_term(&d);
        assert_eq!(c, rat(15, 7));
    }

    mod properties {
        use super::super::*;
        use crate::expr::sample::Domain;
        use proptest::prelude::*;

        /// Random expression trees over two coordinates and one parameter.
        fn arb_expr() -> impl Strategy<Value = Expr> {
            let leaf = prop_oneof![
                (1i64..20, 1i64..20).prop_map(|(n, d)| Expr::rat(n, d)),
                Just(Expr::coord(0)),
                Just(Expr::coord(1)),
                Just(Expr::time()),
                Just(Expr::param("k")),
            ];
            leaf.prop_recursive(3, 24, 4, |inner| {
                prop_oneof![
                    prop::collection::vec(inner.clone(), 2..4).prop_map(Expr::add),
                    prop::collection::vec(inner.clone(), 2..4).prop_map(Expr::mul),
                    (inner.clone(), -3i64..4).prop_map(|(b, e)| Expr::powr(
                        b,
                        Rational::new(BigInt::from(e), BigInt::from(1))
                    )),
                    (inner.clone(), 1i64..4).prop_map(|(b, d)| Expr::powr(
                        Expr::mul2(b.clone(), b),
                        // even power over denominators keeps the base positive
                        Rational::new(BigInt::from(1), BigInt::from(d))
                    )),
                    inner
                        .clone()
                        .prop_map(|a| Expr::exp(Expr::mul([Expr::rat(1, 50), a]))),
                ]
            })
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(96))]

            /// parse(print(e)) evaluates identically wherever e evaluates.
            #[test]
            fn print_parse_roundtrip(e in arb_expr()) {
                let names = vec!["x".to_string(), "y".to_string()];
                let printed = e.to_text_with(&names);
                let ctx = ParseContext::new(&["x", "y"]);
                let reparsed = parse(&printed, &ctx)
                    .unwrap_or_else(|err| panic!("`{printed}` failed to reparse: {err}"));
                let mut dom = Domain::unit(2);
                dom.param_ranges.insert("k".into(), (rat(1, 2), rat(2, 1)));
                let points = dom.sample_many(50, 17).unwrap();
                for p in points {
                    let b = p.bindings_f64();
                    match (e.eval_f64(&b), reparsed.eval_f64(&b)) {
                        (Ok(a), Ok(c)) => {
                            let scale = a.abs().max(1.0);
                            prop_assert!(
                                (a - c).abs() <= 1e-9 * scale,
                                "`{printed}`: {a} vs {c}"
                            );
                        }
                        // singular points must at least fail consistently
                        (Err(_), Err(_)) => {}
                        (a, c) => prop_assert!(false, "`{printed}`: {a:?} vs {c:?}"),
                    }
                }
            }

            /// Differentiation and simplification keep rational polynomial
            /// data exactly rational.
            #[test]
            fn rational_data_stays_exact(
                coeffs in prop::collection::vec((-9i64..10, 1i64..7), 3),
                exps in prop::collection::vec(0i64..4, 3),
            ) {
                let poly = Expr::add(coeffs.iter().zip(&exps).map(|((n, d), e)| {
                    Expr::mul([
                        Expr::rat(*n, *d),
                        Expr::powi(Expr::coord(0), *e),
                        Expr::powi(Expr::coord(1), (*e + 1) % 3),
                    ])
                }));
                let deriv = poly.differentiate(Var::Coord(0));
                let b = Bindings {
                    time: Rational::zero(),
                    coords: vec![rat(3, 7), rat(-2, 5)],
                    params: Default::default(),
                };
                // exact evaluation must succeed on both (no float leakage)
                prop_assert!(poly.eval_exact(&b).is_ok());
                prop_assert!(deriv.eval_exact(&b).is_ok());
            }
        }
    }
}
