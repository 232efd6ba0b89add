//! Expression evaluation: plain `f64`, extended (double-double) and exact
//! rational paths, plus a compiled stack-machine evaluator for the
//! integration hot loop.

use super::dd::Dd;
use super::{Expr, ExprNode, Rational};
use num::{BigInt, Signed, ToPrimitive, Zero};
use std::collections::BTreeMap;
use thiserror::Error;

/// Evaluation precision selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    #[default]
    Double,
    Extended,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum EvalError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("negative base {base} with non-integer exponent")]
    NegativeBaseFractionalPower { base: f64 },
    #[error("parameter `{0}` is not assigned")]
    UnassignedParam(String),
    #[error("coordinate index {0} out of range")]
    CoordOutOfRange(usize),
    #[error("overflow or non-finite intermediate")]
    NonFinite,
}

/// Why an exact rational evaluation is impossible for an expression.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum ExactError {
    #[error("expression is not rational-valued (exp or fractional power)")]
    NotRational,
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Variable bindings for one evaluation.
#[derive(Debug, Clone)]
pub struct Bindings<T> {
    pub time: T,
    pub coords: Vec<T>,
    pub params: BTreeMap<String, T>,
}

impl<T: Clone> Bindings<T> {
    pub fn new(time: T, coords: Vec<T>) -> Self {
        Bindings {
            time,
            coords,
            params: BTreeMap::new(),
        }
    }

    pub fn with_param(mut self, name: impl Into<String>, value: T) -> Self {
        self.params.insert(name.into(), value);
        self
    }
}

/// Scalar type usable by the generic evaluator.
pub trait Scalar: Copy {
    fn from_rational(r: &Rational) -> Self;
    fn add(self, o: Self) -> Self;
    fn mul(self, o: Self) -> Self;
    fn powi(self, n: i64) -> Self;
    /// Fractional power; the base has already been checked positive.
    fn pow_frac(self, num: f64, den: f64) -> Self;
    fn exp(self) -> Self;
    fn abs_f64(self) -> f64;
    fn is_finite(self) -> bool;
    fn is_neg(self) -> bool;
}

impl Scalar for f64 {
    fn from_rational(r: &Rational) -> Self {
        rational_to_f64(r)
    }
    fn add(self, o: Self) -> Self {
        self + o
    }
    fn mul(self, o: Self) -> Self {
        self * o
    }
    fn powi(self, n: i64) -> Self {
        if let Ok(n) = i32::try_from(n) {
            f64::powi(self, n)
        } else {
            f64::powf(self, n as f64)
        }
    }
    fn pow_frac(self, num: f64, den: f64) -> Self {
        self.powf(num / den)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn abs_f64(self) -> f64 {
        self.abs()
    }
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
    fn is_neg(self) -> bool {
        self < 0.0
    }
}

impl Scalar for Dd {
    fn from_rational(r: &Rational) -> Self {
        rational_to_dd(r)
    }
    fn add(self, o: Self) -> Self {
        Dd::add(self, o)
    }
    fn mul(self, o: Self) -> Self {
        Dd::mul(self, o)
    }
    fn powi(self, n: i64) -> Self {
        Dd::powi(self, n)
    }
    fn pow_frac(self, num: f64, den: f64) -> Self {
        Dd::pow_frac(self, num, den)
    }
    fn exp(self) -> Self {
        Dd::exp(self)
    }
    fn abs_f64(self) -> f64 {
        self.abs_hi()
    }
    fn is_finite(self) -> bool {
        Dd::is_finite(self)
    }
    fn is_neg(self) -> bool {
        self.hi < 0.0
    }
}

/// `f64` value of a rational, computed as numerator/denominator.
pub fn rational_to_f64(r: &Rational) -> f64 {
    r.to_f64().unwrap_or_else(|| {
        let n = r.numer().to_f64().unwrap_or(f64::NAN);
        let d = r.denom().to_f64().unwrap_or(f64::NAN);
        n / d
    })
}

fn rational_to_dd(r: &Rational) -> Dd {
    let hi = rational_to_f64(r);
    if !hi.is_finite() {
        return Dd::from_f64(hi);
    }
    // residual = r - hi, exactly, then rounded once
    let hi_rat = f64_to_rational(hi);
    let lo = rational_to_f64(&(r - hi_rat));
    Dd { hi, lo }.add(Dd::ZERO) // renormalize
}

/// Exact rational equal to a finite f64.
pub fn f64_to_rational(x: f64) -> Rational {
    debug_assert!(x.is_finite());
    let (mantissa, exponent, sign) = integer_decode(x);
    let mut num = BigInt::from(mantissa) * BigInt::from(sign);
    let mut den = BigInt::from(1u8);
    if exponent >= 0 {
        num <<= exponent as usize;
    } else {
        den <<= (-exponent) as usize;
    }
    Rational::new(num, den)
}

fn integer_decode(x: f64) -> (u64, i16, i8) {
    let bits = x.to_bits();
    let sign: i8 = if bits >> 63 == 0 { 1 } else { -1 };
    let mut exponent: i16 = ((bits >> 52) & 0x7ff) as i16;
    let mantissa = if exponent == 0 {
        (bits & 0xf_ffff_ffff_ffff) << 1
    } else {
        (bits & 0xf_ffff_ffff_ffff) | 0x10_0000_0000_0000
    };
    exponent -= 1075;
    (mantissa, exponent, sign)
}

impl Expr {
    /// Evaluates at the given bindings, also reporting the magnitude of the
    /// largest intermediate value encountered (used by the relative-error
    /// term of the zero test).
    pub fn eval_with_magnitude<T: Scalar>(&self, b: &Bindings<T>) -> Result<(T, f64), EvalError> {
        let mut mag = 0.0f64;
        let v = eval_rec(self, b, &mut mag)?;
        Ok((v, mag))
    }

    pub fn eval<T: Scalar>(&self, b: &Bindings<T>) -> Result<T, EvalError> {
        Ok(self.eval_with_magnitude(b)?.0)
    }

    pub fn eval_f64(&self, b: &Bindings<f64>) -> Result<f64, EvalError> {
        self.eval(b)
    }

    /// Exact rational evaluation. Fails with [`ExactError::NotRational`] on
    /// exponentials (except `exp(0)`) and fractional powers.
    pub fn eval_exact(&self, b: &Bindings<Rational>) -> Result<Rational, ExactError> {
        match self.node() {
            ExprNode::Rational(r) => Ok(r.clone()),
            ExprNode::Coord(i) => b
                .coords
                .get(*i)
                .cloned()
                .ok_or(ExactError::Eval(EvalError::CoordOutOfRange(*i))),
            ExprNode::Time => Ok(b.time.clone()),
            ExprNode::Param(p) => b
                .params
                .get(p)
                .cloned()
                .ok_or_else(|| ExactError::Eval(EvalError::UnassignedParam(p.clone()))),
            ExprNode::Sum(ts) => {
                let mut acc = Rational::zero();
                for t in ts {
                    acc += t.eval_exact(b)?;
                }
                Ok(acc)
            }
            ExprNode::Product(fs) => {
                let mut acc = Rational::from_integer(BigInt::from(1));
                for f in fs {
                    acc *= f.eval_exact(b)?;
                }
                Ok(acc)
            }
            ExprNode::Power(base, e) => {
                if !e.is_integer() {
                    return Err(ExactError::NotRational);
                }
                let v = base.eval_exact(b)?;
                let n: i64 = e
                    .to_integer()
                    .to_i64()
                    .ok_or(ExactError::NotRational)?;
                if v.is_zero() && n < 0 {
                    return Err(ExactError::Eval(EvalError::DivisionByZero));
                }
                if n >= 0 {
                    Ok(num::pow::pow(v, n as usize))
                } else {
                    Ok(num::pow::pow(v, (-n) as usize).recip())
                }
            }
            ExprNode::Exp(a) => {
                let v = a.eval_exact(b)?;
                if v.is_zero() {
                    Ok(Rational::from_integer(BigInt::from(1)))
                } else {
                    Err(ExactError::NotRational)
                }
            }
        }
    }
}

fn eval_rec<T: Scalar>(e: &Expr, b: &Bindings<T>, mag: &mut f64) -> Result<T, EvalError> {
    let v = match e.node() {
        ExprNode::Rational(r) => T::from_rational(r),
        ExprNode::Coord(i) => *b.coords.get(*i).ok_or(EvalError::CoordOutOfRange(*i))?,
        ExprNode::Time => b.time,
        ExprNode::Param(p) => *b
            .params
            .get(p)
            .ok_or_else(|| EvalError::UnassignedParam(p.clone()))?,
        ExprNode::Sum(ts) => {
            let mut acc = T::from_rational(&Rational::zero());
            for t in ts {
                acc = acc.add(eval_rec(t, b, mag)?);
            }
            acc
        }
        ExprNode::Product(fs) => {
            let mut acc = T::from_rational(&Rational::from_integer(BigInt::from(1)));
            for f in fs {
                acc = acc.mul(eval_rec(f, b, mag)?);
            }
            acc
        }
        ExprNode::Power(base, exp) => {
            let v = eval_rec(base, b, mag)?;
            power_value(v, exp)?
        }
        ExprNode::Exp(a) => eval_rec(a, b, mag)?.exp(),
    };
    if !v.is_finite() {
        return Err(EvalError::NonFinite);
    }
    let a = v.abs_f64();
    if a > *mag {
        *mag = a;
    }
    Ok(v)
}

fn power_value<T: Scalar>(v: T, exp: &Rational) -> Result<T, EvalError> {
    if exp.is_integer() {
        let n = exp.to_integer().to_i64().ok_or(EvalError::NonFinite)?;
        if v.abs_f64() == 0.0 && n < 0 {
            return Err(EvalError::DivisionByZero);
        }
        return Ok(v.powi(n));
    }
    if v.abs_f64() == 0.0 {
        if exp.is_negative() {
            return Err(EvalError::DivisionByZero);
        }
        return Ok(v); // 0^(positive fraction) = 0
    }
    if v.is_neg() {
        return Err(EvalError::NegativeBaseFractionalPower { base: -v.abs_f64() });
    }
    let num = exp.numer().to_f64().ok_or(EvalError::NonFinite)?;
    let den = exp.denom().to_f64().ok_or(EvalError::NonFinite)?;
    Ok(v.pow_frac(num, den))
}

// ---------------------------------------------------------------------------
// Compiled evaluator
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
enum Instr {
    Const(f64),
    Coord(u16),
    Time,
    /// Fold the top `n` stack values by addition.
    Add(u16),
    /// Fold the top `n` stack values by multiplication.
    Mul(u16),
    PowI(i32),
    /// Fractional power exponent (base must be positive at run time).
    PowF(f64),
    Exp,
}

/// Expression compiled to a flat postfix program over `f64` with all
/// parameters resolved; used in the trajectory integration loop.
#[derive(Debug, Clone)]
pub struct CompiledExpr {
    prog: Vec<Instr>,
    max_stack: usize,
}

impl CompiledExpr {
    pub fn compile(e: &Expr, params: &BTreeMap<String, f64>) -> Result<Self, EvalError> {
        let mut prog = Vec::new();
        compile_rec(e, params, &mut prog)?;
        let mut depth = 0usize;
        let mut max = 0usize;
        for i in &prog {
            match i {
                Instr::Const(_) | Instr::Coord(_) | Instr::Time => depth += 1,
                Instr::Add(n) | Instr::Mul(n) => depth = depth - (*n as usize) + 1,
                _ => {}
            }
            max = max.max(depth);
        }
        Ok(CompiledExpr {
            prog,
            max_stack: max,
        })
    }

    /// Evaluates with an externally provided stack buffer (cleared here).
    pub fn eval_with(&self, time: f64, coords: &[f64], stack: &mut Vec<f64>) -> Result<f64, EvalError> {
        stack.clear();
        stack.reserve(self.max_stack);
        for instr in &self.prog {
            match instr {
                Instr::Const(c) => stack.push(*c),
                Instr::Coord(i) => stack.push(coords[*i as usize]),
                Instr::Time => stack.push(time),
                Instr::Add(n) => {
                    let k = stack.len() - *n as usize;
                    let mut acc = 0.0;
                    for v in stack.drain(k..) {
                        acc += v;
                    }
                    stack.push(acc);
                }
                Instr::Mul(n) => {
                    let k = stack.len() - *n as usize;
                    let mut acc = 1.0;
                    for v in stack.drain(k..) {
                        acc *= v;
                    }
                    stack.push(acc);
                }
                Instr::PowI(n) => {
                    let v = stack.last_mut().unwrap();
                    *v = v.powi(*n);
                }
                Instr::PowF(e) => {
                    let v = stack.last_mut().unwrap();
                    if *v < 0.0 {
                        return Err(EvalError::NegativeBaseFractionalPower { base: *v });
                    }
                    *v = v.powf(*e);
                }
                Instr::Exp => {
                    let v = stack.last_mut().unwrap();
                    *v = v.exp();
                }
            }
        }
        let v = stack.pop().unwrap_or(f64::NAN);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(EvalError::NonFinite)
        }
    }

    pub fn eval(&self, time: f64, coords: &[f64]) -> Result<f64, EvalError> {
        let mut stack = Vec::new();
        self.eval_with(time, coords, &mut stack)
    }
}

fn compile_rec(
    e: &Expr,
    params: &BTreeMap<String, f64>,
    prog: &mut Vec<Instr>,
) -> Result<(), EvalError> {
    match e.node() {
        ExprNode::Rational(r) => prog.push(Instr::Const(rational_to_f64(r))),
        ExprNode::Coord(i) => prog.push(Instr::Coord(*i as u16)),
        ExprNode::Time => prog.push(Instr::Time),
        ExprNode::Param(p) => {
            let v = params
                .get(p)
                .ok_or_else(|| EvalError::UnassignedParam(p.clone()))?;
            prog.push(Instr::Const(*v));
        }
        ExprNode::Sum(ts) => {
            for t in ts {
                compile_rec(t, params, prog)?;
            }
            prog.push(Instr::Add(ts.len() as u16));
        }
        ExprNode::Product(fs) => {
            for f in fs {
                compile_rec(f, params, prog)?;
            }
            prog.push(Instr::Mul(fs.len() as u16));
        }
        ExprNode::Power(base, exp) => {
            compile_rec(base, params, prog)?;
            if exp.is_integer() {
                let n = exp.to_integer().to_i32().ok_or(EvalError::NonFinite)?;
                prog.push(Instr::PowI(n));
            } else {
                prog.push(Instr::PowF(rational_to_f64(exp)));
            }
        }
        ExprNode::Exp(a) => {
            compile_rec(a, params, prog)?;
            prog.push(Instr::Exp);
        }
    }
    Ok(())
}

/// Evaluates an expression at `f64` or extended precision, returning the
/// `f64` image of the result.
pub fn eval_at_precision(
    e: &Expr,
    b64: &Bindings<f64>,
    bdd: &Bindings<Dd>,
    precision: Precision,
) -> Result<f64, EvalError> {
    match precision {
        Precision::Double => e.eval(b64),
        Precision::Extended => Ok(e.eval(bdd)?.hi),
    }
}

#[cfg(test)]
mod tests {
    use super::super::Var;
    use super::*;

    fn b(coords: Vec<f64>) -> Bindings<f64> {
        Bindings::new(0.0, coords)
    }

    #[test]
    fn eval_basic_arithmetic() {
        // 12*beta*w/u^2 at beta=1, w=2, u=2 -> 6
        let e = Expr::div(
            Expr::mul([Expr::int(12), Expr::param("beta"), Expr::coord(1)]),
            Expr::powi(Expr::coord(0), 2),
        );
        let bind = b(vec![2.0, 2.0]).with_param("beta", 1.0);
        assert_eq!(e.eval_f64(&bind).unwrap(), 6.0);
    }

    #[test]
    fn eval_exp_zero_is_one() {
        let e = Expr::exp(Expr::mul([Expr::int(0), Expr::coord(0)]));
        assert_eq!(e.eval_f64(&b(vec![3.0])).unwrap(), 1.0);
    }

    #[test]
    fn division_by_zero_is_an_error() {
        let e = Expr::div(Expr::one(), Expr::coord(0));
        assert_eq!(e.eval_f64(&b(vec![0.0])), Err(EvalError::DivisionByZero));
    }

    #[test]
    fn negative_base_fractional_power_is_an_error() {
        let e = Expr::powr(Expr::coord(0), crate::expr::rat(1, 2));
        assert!(matches!(
            e.eval_f64(&b(vec![-1.0])),
            Err(EvalError::NegativeBaseFractionalPower { .. })
        ));
    }

    #[test]
    fn unassigned_param_is_an_error() {
        let e = Expr::param("nu");
        assert_eq!(
            e.eval_f64(&b(vec![])),
            Err(EvalError::UnassignedParam("nu".into()))
        );
    }

    #[test]
    fn extended_precision_agrees_with_double() {
        let e = Expr::mul([
            Expr::exp(Expr::coord(0)),
            Expr::powr(Expr::coord(1), crate::expr::rat(-2, 3)),
        ]);
        let b64 = b(vec![1.5, 2.0]);
        let bdd = Bindings::new(Dd::ZERO, vec![Dd::from_f64(1.5), Dd::from_f64(2.0)]);
        let v64 = e.eval_f64(&b64).unwrap();
        let vdd = e.eval(&bdd).unwrap();
        assert!((v64 - vdd.hi).abs() <= 1e-15 * v64.abs());
    }

    #[test]
    fn exact_eval_matches_float_for_rational_data() {
        let e = Expr::add([
            Expr::mul([Expr::rat(3, 4), Expr::powi(Expr::coord(0), 3)]),
            Expr::powi(Expr::coord(1), -2),
        ]);
        let exact = e
            .eval_exact(&Bindings::new(
                Rational::zero(),
                vec![crate::expr::rat(1, 2), crate::expr::rat(3, 2)],
            ))
            .unwrap();
        let float = e.eval_f64(&b(vec![0.5, 1.5])).unwrap();
        assert!((rational_to_f64(&exact) - float).abs() < 1e-15);
    }

    #[test]
    fn exact_eval_rejects_exponential()  {
        let e = Expr::exp(Expr::coord(0));
        let r = e.eval_exact(&Bindings::new(Rational::zero(), vec![crate::expr::rat(1, 1)]));
        assert_eq!(r, Err(ExactError::NotRational));
    }

    #[test]
    fn compiled_matches_tree_eval() {
        let e = Expr::add([
            Expr::mul([
                Expr::rat(-3, 2),
                Expr::exp(Expr::mul([Expr::coord(0), Expr::coord(1)])),
            ]),
            Expr::powr(
                Expr::add([Expr::powi(Expr::coord(0), 2), Expr::powi(Expr::coord(1), 2)]),
                crate::expr::rat(1, 2),
            ),
            Expr::mul([Expr::param("k"), Expr::time()]),
        ]);
        let params: BTreeMap<String, f64> = [("k".to_string(), 2.5)].into();
        let c = CompiledExpr::compile(&e, &params).unwrap();
        let bind = Bindings::new(1.25, vec![0.7, 0.3]).with_param("k", 2.5);
        let v_tree = e.eval_f64(&bind).unwrap();
        let v_compiled = c.eval(1.25, &[0.7, 0.3]).unwrap();
        assert!((v_tree - v_compiled).abs() < 1e-14 * v_tree.abs().max(1.0));
    }

    #[test]
    fn derivative_matches_finite_difference() {
        // d/dx (x^2-y^2)^(-2/3) at (2, 1) against a central difference
        let e = Expr::powr(
            Expr::sub(Expr::powi(Expr::coord(0), 2), Expr::powi(Expr::coord(1), 2)),
            crate::expr::rat(-2, 3),
        );
        let d = e.differentiate(Var::Coord(0));
        let h = 1e-6 * 3.0;
        let fp = e.eval_f64(&b(vec![2.0 + h, 1.0])).unwrap();
        let fm = e.eval_f64(&b(vec![2.0 - h, 1.0])).unwrap();
        let fd = (fp - fm) / (2.0 * h);
        let sym = d.eval_f64(&b(vec![2.0, 1.0])).unwrap();
        assert!(
            ((sym - fd) / sym).abs() < 1e-6,
            "sym = {sym}, fd = {fd}"
        );
    }
}
