//! Deterministic domain sampling and the probabilistic zero test.
//!
//! Points are drawn from a seeded 64-bit generator on a fine rational grid
//! inside the declared boxes and rejection-sampled against the strict
//! inequality constraints, so every accept/reject verdict is reproducible
//! from `(seed, sample count)` alone.

use super::dd::Dd;
use super::eval::{rational_to_f64, Bindings, EvalError};
use super::{rat, Expr, Rational};
use num::BigInt;
use std::collections::BTreeMap;
use thiserror::Error;

/// SplitMix64: tiny, seedable, platform-stable 64-bit generator.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Uniform rational on the open interval `(lo, hi)`, drawn from a grid of
    /// 1021 interior points (a prime grid avoids dyadic coincidences).
    pub fn rational_in(&mut self, lo: &Rational, hi: &Rational) -> Rational {
        const GRID: u64 = 1021;
        let k = 1 + self.next_u64() % GRID;
        let frac = Rational::new(BigInt::from(k), BigInt::from(GRID + 1));
        lo + (hi - lo) * frac
    }
}

/// A sampling point: time, coordinates and a full parameter assignment, all
/// exact rationals (the float views are derived).
#[derive(Debug, Clone)]
pub struct SamplePoint {
    pub time: Rational,
    pub coords: Vec<Rational>,
    pub params: BTreeMap<String, Rational>,
}

impl SamplePoint {
    pub fn bindings_f64(&self) -> Bindings<f64> {
        Bindings {
            time: rational_to_f64(&self.time),
            coords: self.coords.iter().map(rational_to_f64).collect(),
            params: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), rational_to_f64(v)))
                .collect(),
        }
    }

    pub fn bindings_dd(&self) -> Bindings<Dd> {
        Bindings {
            time: super::eval::Scalar::from_rational(&self.time),
            coords: self
                .coords
                .iter()
                .map(super::eval::Scalar::from_rational)
                .collect(),
            params: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), super::eval::Scalar::from_rational(v)))
                .collect(),
        }
    }

    pub fn bindings_exact(&self) -> Bindings<Rational> {
        Bindings {
            time: self.time.clone(),
            coords: self.coords.clone(),
            params: self.params.clone(),
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SampleError {
    #[error("domain too thin to sample: rejection rate above 99% ({rejected} rejections)")]
    DomainTooThin { rejected: usize },
    #[error("constraint evaluation failed: {0}")]
    ConstraintEval(#[from] EvalError),
    #[error("free parameter `{0}` has no sampling range")]
    MissingParamRange(String),
}

/// Sampling domain: a box per coordinate, a time range, ranges for free
/// parameters, fixed parameter values, and strict inequality constraints
/// (each expression must evaluate strictly positive).
#[derive(Debug, Clone)]
pub struct Domain {
    pub coord_boxes: Vec<(Rational, Rational)>,
    pub time_range: (Rational, Rational),
    pub param_ranges: BTreeMap<String, (Rational, Rational)>,
    pub fixed_params: BTreeMap<String, Rational>,
    pub constraints: Vec<Expr>,
}

impl Domain {
    /// A unit-ish default box for `dim` coordinates: every coordinate in
    /// (1/2, 2), time in (0, 1), no constraints.
    pub fn unit(dim: usize) -> Self {
        Domain {
            coord_boxes: vec![(rat(1, 2), rat(2, 1)); dim],
            time_range: (rat(0, 1), rat(1, 1)),
            param_ranges: BTreeMap::new(),
            fixed_params: BTreeMap::new(),
            constraints: Vec::new(),
        }
    }

    /// Symmetric box (-b, b) for every coordinate.
    pub fn symmetric(dim: usize, b: Rational) -> Self {
        Domain {
            coord_boxes: vec![(-b.clone(), b.clone()); dim],
            time_range: (rat(0, 1), rat(1, 1)),
            param_ranges: BTreeMap::new(),
            fixed_params: BTreeMap::new(),
            constraints: Vec::new(),
        }
    }

    pub fn with_param_range(mut self, name: &str, lo: Rational, hi: Rational) -> Self {
        self.param_ranges.insert(name.to_string(), (lo, hi));
        self
    }

    pub fn with_fixed_param(mut self, name: &str, v: Rational) -> Self {
        self.fixed_params.insert(name.to_string(), v);
        self
    }

    pub fn with_constraint(mut self, c: Expr) -> Self {
        self.constraints.push(c);
        self
    }

    pub fn dim(&self) -> usize {
        self.coord_boxes.len()
    }

    /// Substitutes fixed values for some free parameters (solver re-checks
    /// families at alternative parameter values this way).
    pub fn fixing_params(&self, fixed: &BTreeMap<String, Rational>) -> Domain {
        let mut d = self.clone();
        for (k, v) in fixed {
            d.param_ranges.remove(k);
            d.fixed_params.insert(k.clone(), v.clone());
        }
        d
    }

    fn draw_raw(&self, rng: &mut SplitMix64, shrink: bool) -> SamplePoint {
        let margin = rat(1, 10);
        let shrink_box = |lo: &Rational, hi: &Rational| -> (Rational, Rational) {
            if shrink {
                let w = hi - lo;
                (lo + &w * &margin, hi - &w * &margin)
            } else {
                (lo.clone(), hi.clone())
            }
        };
        let coords = self
            .coord_boxes
            .iter()
            .map(|(lo, hi)| {
                let (lo, hi) = shrink_box(lo, hi);
                rng.rational_in(&lo, &hi)
            })
            .collect();
        let time = rng.rational_in(&self.time_range.0, &self.time_range.1);
        let mut params = self.fixed_params.clone();
        for (name, (lo, hi)) in &self.param_ranges {
            params.insert(name.clone(), rng.rational_in(lo, hi));
        }
        SamplePoint {
            time,
            coords,
            params,
        }
    }

    /// True when the point satisfies every strict inequality constraint.
    pub fn satisfies_constraints(&self, p: &SamplePoint) -> Result<bool, EvalError> {
        let b = p.bindings_f64();
        for c in &self.constraints {
            match c.eval_f64(&b) {
                Ok(v) if v > 0.0 => continue,
                Ok(_) => return Ok(false),
                Err(_) => return Ok(false), // singular at this point: outside
            }
        }
        Ok(true)
    }

    /// Checks a raw state vector (used along trajectories).
    pub fn state_in_domain(&self, time: f64, coords: &[f64], params: &BTreeMap<String, f64>) -> bool {
        let b = Bindings {
            time,
            coords: coords.to_vec(),
            params: params.clone(),
        };
        self.constraints
            .iter()
            .all(|c| matches!(c.eval_f64(&b), Ok(v) if v > 0.0))
    }

    /// Draws one accepted sample, rejection-sampling against constraints.
    pub fn sample_one(&self, rng: &mut SplitMix64, shrink: bool) -> Result<SamplePoint, SampleError> {
        let mut rejected = 0usize;
        loop {
            let p = self.draw_raw(rng, shrink);
            if self.satisfies_constraints(&p)? {
                return Ok(p);
            }
            rejected += 1;
            if rejected > 200 {
                return Err(SampleError::DomainTooThin { rejected });
            }
        }
    }

    /// Draws `n` accepted samples deterministically from `seed`.
    pub fn sample_many(&self, n: usize, seed: u64) -> Result<Vec<SamplePoint>, SampleError> {
        let mut rng = SplitMix64::new(seed);
        (0..n).map(|_| self.sample_one(&mut rng, false)).collect()
    }
}

/// Zero-test thresholds. At double precision a value passes when
/// `|v| < eps_abs + eps_rel * mag` where `mag` is the largest intermediate
/// magnitude seen during evaluation; the extended precision then has to
/// confirm with its own (much tighter) thresholds.
#[derive(Debug, Clone)]
pub struct ZeroConfig {
    pub samples: usize,
    pub seed: u64,
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub eps_abs_extended: f64,
    pub eps_rel_extended: f64,
}

impl Default for ZeroConfig {
    fn default() -> Self {
        ZeroConfig {
            samples: 16,
            seed: 0xf1a5_7e57,
            eps_abs: 1e-12,
            eps_rel: 1e-9,
            eps_abs_extended: 1e-24,
            eps_rel_extended: 1e-20,
        }
    }
}

impl ZeroConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_samples(mut self, samples: usize) -> Self {
        self.samples = samples.max(8);
        self
    }
}

/// Outcome of a probabilistic zero test.
#[derive(Debug, Clone)]
pub enum ZeroVerdict {
    Zero,
    /// A witness point where the expression is distinguishable from zero,
    /// together with the double-precision value there.
    Nonzero { witness: SamplePoint, value: f64 },
}

impl ZeroVerdict {
    pub fn is_zero(&self) -> bool {
        matches!(self, ZeroVerdict::Zero)
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ZeroTestError {
    #[error(transparent)]
    Sample(#[from] SampleError),
    #[error("evaluation failed inside the declared domain: {0}")]
    Eval(#[from] EvalError),
}

/// Two-precision randomized zero tester over a sampling domain.
#[derive(Debug, Clone)]
pub struct ZeroTester<'a> {
    pub domain: &'a Domain,
    pub config: ZeroConfig,
}

impl<'a> ZeroTester<'a> {
    pub fn new(domain: &'a Domain, config: ZeroConfig) -> Self {
        ZeroTester { domain, config }
    }

    pub fn test(&self, e: &Expr) -> Result<ZeroVerdict, ZeroTestError> {
        let points = self
            .domain
            .sample_many(self.config.samples.max(8), self.config.seed)?;
        self.test_at(e, &points)
    }

    /// Tests against a caller-provided point set (so many expressions can
    /// share one deterministic sample).
    pub fn test_at(&self, e: &Expr, points: &[SamplePoint]) -> Result<ZeroVerdict, ZeroTestError> {
        for p in points {
            let b64 = p.bindings_f64();
            let (v, mag) = e.eval_with_magnitude(&b64)?;
            let pass_double = v.abs() < self.config.eps_abs + self.config.eps_rel * mag;
            let bdd = p.bindings_dd();
            let (vx, magx) = e.eval_with_magnitude(&bdd)?;
            let pass_extended =
                vx.abs_hi() < self.config.eps_abs_extended + self.config.eps_rel_extended * magx;
            if !(pass_double && pass_extended) {
                return Ok(ZeroVerdict::Nonzero {
                    witness: p.clone(),
                    value: v,
                });
            }
        }
        Ok(ZeroVerdict::Zero)
    }
}
