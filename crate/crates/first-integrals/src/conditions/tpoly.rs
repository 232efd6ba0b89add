//! Time-polynomial tensor algebra: the reduction engine behind the
//! structured FI families.
//!
//! A [`TPoly`] is a finite map `t-power -> symmetric tensor field over q`,
//! representing either `Σ_N c_N(q) t^N` or `e^{λt} Σ_N c_N(q) t^N`
//! (the time profile is chosen when differentiating). Building each FI
//! family's coefficient tensors as `TPoly`s and collecting the dI/dt = 0
//! residuals per power of t emits exactly the surviving reduced conditions
//! of the family, with empty index ranges producing no entries — degenerate
//! small orders and small time degrees need no textual special-casing.

use crate::expr::{rat, Expr, Rational};
use crate::geometry::{
    symmetrized_derivative, SymTensorField, SymmetricConnection,
};
use num::{BigInt, One};
use std::collections::BTreeMap;

/// Time profile of a family template.
#[derive(Debug, Clone)]
pub enum TimeProfile {
    /// Plain polynomial in t.
    Poly,
    /// `e^{λt}` times a polynomial in t; residuals share the exponential
    /// factor, which is stripped from the emitted conditions.
    ExpPoly(Expr),
}

/// Polynomial in `t` with symmetric-tensor coefficients.
#[derive(Debug, Clone)]
pub struct TPoly {
    dim: usize,
    rank: usize,
    coeffs: BTreeMap<usize, SymTensorField>,
}

impl TPoly {
    pub fn zero(dim: usize, rank: usize) -> Self {
        TPoly {
            dim,
            rank,
            coeffs: BTreeMap::new(),
        }
    }

    pub fn from_field(field: SymTensorField, power: usize) -> Self {
        let mut p = TPoly::zero(field.dim(), field.rank());
        p.insert_add(power, field);
        p
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn coeffs(&self) -> &BTreeMap<usize, SymTensorField> {
        &self.coeffs
    }

    pub fn insert_add(&mut self, power: usize, field: SymTensorField) {
        debug_assert_eq!(field.rank(), self.rank);
        if field.is_structurally_zero() {
            return;
        }
        match self.coeffs.remove(&power) {
            None => {
                self.coeffs.insert(power, field);
            }
            Some(existing) => {
                let sum = existing.add(&field);
                if !sum.is_structurally_zero() {
                    self.coeffs.insert(power, sum);
                }
            }
        }
    }

    pub fn add(&self, other: &TPoly) -> TPoly {
        let mut out = self.clone();
        for (p, f) in &other.coeffs {
            out.insert_add(*p, f.clone());
        }
        out
    }

    pub fn scale_rat(&self, r: Rational) -> TPoly {
        TPoly {
            dim: self.dim,
            rank: self.rank,
            coeffs: self
                .coeffs
                .iter()
                .map(|(p, f)| (*p, f.scale_rat(r.clone())))
                .collect(),
        }
    }

    pub fn scale_expr(&self, s: &Expr) -> TPoly {
        TPoly {
            dim: self.dim,
            rank: self.rank,
            coeffs: self
                .coeffs
                .iter()
                .map(|(p, f)| (*p, f.scale_expr(s)))
                .collect(),
        }
    }

    /// d/dt under the given time profile.
    pub fn dt(&self, profile: &TimeProfile) -> TPoly {
        let mut out = TPoly::zero(self.dim, self.rank);
        for (p, f) in &self.coeffs {
            if *p > 0 {
                out.insert_add(
                    p - 1,
                    f.scale_rat(Rational::from_integer(BigInt::from(*p as i64))),
                );
            }
            if let TimeProfile::ExpPoly(lambda) = profile {
                out.insert_add(*p, f.scale_expr(lambda));
            }
        }
        out
    }

    /// Symmetrized covariant derivative per coefficient.
    pub fn sym_deriv(&self, conn: &SymmetricConnection) -> TPoly {
        let mut out = TPoly::zero(self.dim, self.rank + 1);
        for (p, f) in &self.coeffs {
            out.insert_add(*p, symmetrized_derivative(f, conn));
        }
        out
    }

    /// Contraction with a vector per coefficient.
    pub fn contract(&self, v: &SymTensorField) -> TPoly {
        let mut out = TPoly::zero(self.dim, self.rank - 1);
        for (p, f) in &self.coeffs {
            out.insert_add(*p, f.contract_with_vector(v));
        }
        out
    }

    /// Collapses to a single field with explicit `t` powers (times the
    /// exponential prefactor when the profile has one).
    pub fn to_expr_field(&self, profile: &TimeProfile) -> SymTensorField {
        let prefactor = match profile {
            TimeProfile::Poly => None,
            TimeProfile::ExpPoly(lambda) => {
                Some(Expr::exp(Expr::mul2(lambda.clone(), Expr::time())))
            }
        };
        SymTensorField::from_fn(self.dim, self.rank, |idx| {
            let mut terms = Vec::new();
            for (p, f) in &self.coeffs {
                let c = f.get(idx);
                if c.is_literal_zero() {
                    continue;
                }
                let mut fs = vec![c.clone()];
                if *p > 0 {
                    fs.push(Expr::powi(Expr::time(), *p as i64));
                }
                if let Some(pre) = &prefactor {
                    fs.push(pre.clone());
                }
                terms.push(Expr::mul(fs));
            }
            Expr::add(terms)
        })
    }
}

/// Collects the residuals of the FI condition `dI/dt = 0` for coefficient
/// tensors given as `TPoly`s, keyed by `(velocity degree, t power)`:
///
/// ```text
/// R_d = d/dt M_d + (M_{d-1})_{(...|..)} - (d+1) M_{d+1} · Q
/// ```
///
/// with out-of-range terms absent. Under the exponential profile the common
/// `e^{λt}` factor is stripped (the map key is the residual polynomial's own
/// t power).
pub fn collect_residuals(
    ms: &[TPoly],
    profile: &TimeProfile,
    conn: &SymmetricConnection,
    forces: &SymTensorField,
) -> BTreeMap<(usize, usize), SymTensorField> {
    let m = ms.len() - 1;
    let dim = forces.dim();
    let mut out = BTreeMap::new();
    for d in 0..=m + 1 {
        let mut r = TPoly::zero(dim, d);
        if d <= m {
            r = r.add(&ms[d].dt(profile));
        }
        if d >= 1 {
            r = r.add(&ms[d - 1].sym_deriv(conn));
        }
        if d + 1 <= m {
            let factor = Rational::from_integer(BigInt::from(-((d + 1) as i64)));
            r = r.add(&ms[d + 1].contract(forces).scale_rat(factor));
        }
        for (p, f) in r.coeffs {
            if !f.is_structurally_zero() {
                out.insert((d, p), f);
            }
        }
    }
    out
}

/// Multiplies by `1/k` (exact).
pub fn inv_int(k: usize) -> Rational {
    Rational::new(BigInt::one(), BigInt::from(k as i64))
}

/// `-1/k` (exact).
pub fn neg_inv_int(k: usize) -> Rational {
    -inv_int(k)
}

#[allow(unused)]
pub fn rat_int(k: i64) -> Rational {
    rat(k, 1)
}
