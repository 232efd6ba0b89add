//! The gauged weak Noether symmetry associated with an FI of a Riemannian
//! (metric) system in the conservative case.
//!
//! For a system with a kinetic metric the generator is
//! `(ξ = 0, η_{i1} = -∂I/∂q̇^{i1}, φ_a = 0, f = I - (∂I/∂q̇^{i1}) q̇^{i1})`;
//! with vanishing non-conservative forces the gauge constraint
//! `φ_a q̇^a + F^a ∂I/∂q̇^a = 0` holds trivially.

use super::FICandidate;
use crate::expr::{Bindings, EvalError, Rational, Scalar};
use crate::geometry::{DynamicalSystem, GeometryError, SymTensorField};
use num::BigInt;

/// Velocity-polynomial data of the generator. The degree-r term of `η_a` is
/// the rank-(r+1) tensor `-(r+1) M_{a i2...i_{r+1}}` with the first index
/// free; the degree-r term of `f` is `(1-r) M_{i1...ir}`.
#[derive(Debug, Clone)]
pub struct NoetherGenerator {
    pub dim: usize,
    pub order: usize,
    pub eta: Vec<SymTensorField>,
    pub f: Vec<SymTensorField>,
}

pub fn noether_from_fi(
    candidate: &FICandidate,
    sys: &DynamicalSystem,
) -> Result<NoetherGenerator, GeometryError> {
    if sys.metric.is_none() {
        return Err(GeometryError::NoMetric);
    }
    let m = candidate.order;
    let eta = (0..m)
        .map(|r| {
            candidate.coeffs[r + 1]
                .scale_rat(Rational::from_integer(BigInt::from(-((r + 1) as i64))))
        })
        .collect();
    let f = (0..=m)
        .map(|r| {
            candidate.coeffs[r]
                .scale_rat(Rational::from_integer(BigInt::from(1 - r as i64)))
        })
        .collect();
    Ok(NoetherGenerator {
        dim: candidate.dim,
        order: m,
        eta,
        f,
    })
}

impl NoetherGenerator {
    /// Evaluates `η_a(t, q, q̇)` for one covariant slot `a`.
    pub fn eval_eta<T: Scalar>(
        &self,
        a: usize,
        b: &Bindings<T>,
        qdot: &[T],
    ) -> Result<T, EvalError> {
        let mut acc = T::from_rational(&crate::expr::rat(0, 1));
        for (r, term) in self.eta.iter().enumerate() {
            // contract the r trailing symmetric slots with q̇; the free index
            // is `a`, so enumerate all r-tuples (full sum, not nondecreasing)
            acc = acc.add(contract_free_index(term, a, r, b, qdot)?);
        }
        Ok(acc)
    }

    /// Evaluates the Noether function `f(t, q, q̇)`.
    pub fn eval_f<T: Scalar>(&self, b: &Bindings<T>, qdot: &[T]) -> Result<T, EvalError> {
        let mut acc = T::from_rational(&crate::expr::rat(0, 1));
        for (r, term) in self.f.iter().enumerate() {
            if r == 1 {
                continue; // coefficient (1 - r) = 0
            }
            for idx in term.indices() {
                let c = term.get(idx);
                if c.is_literal_zero() {
                    continue;
                }
                let mut v = c.eval(b)?;
                for &i in idx {
                    v = v.mul(qdot[i]);
                }
                let mult = T::from_rational(&Rational::from_integer(BigInt::from(
                    crate::geometry::multiplicity(idx),
                )));
                acc = acc.add(v.mul(mult));
            }
        }
        Ok(acc)
    }

    pub fn is_zero_generator(&self) -> bool {
        self.eta.iter().all(|t| t.is_structurally_zero())
            && self.f.iter().all(|t| t.is_structurally_zero())
    }
}

/// Sum over all r-tuples `(i2..i_{r+1})` of `T[a, i2..] q̇^{i2}...q̇^{i_{r+1}}`.
fn contract_free_index<T: Scalar>(
    tensor: &SymTensorField,
    a: usize,
    r: usize,
    b: &Bindings<T>,
    qdot: &[T],
) -> Result<T, EvalError> {
    let dim = tensor.dim();
    let mut acc = T::from_rational(&crate::expr::rat(0, 1));
    let mut tuple = vec![0usize; r];
    loop {
        let mut idx = Vec::with_capacity(r + 1);
        idx.push(a);
        idx.extend_from_slice(&tuple);
        let c = tensor.get(&idx);
        if !c.is_literal_zero() {
            let mut v = c.eval(b)?;
            for &i in &tuple {
                v = v.mul(qdot[i]);
            }
            acc = acc.add(v);
        }
        // advance odometer
        let mut k = r;
        loop {
            if k == 0 {
                return Ok(acc);
            }
            k -= 1;
            tuple[k] += 1;
            if tuple[k] < dim {
                break;
            }
            tuple[k] = 0;
        }
    }
}
