//! FI condition systems.
//!
//! Two routes to the same conditions live here and cross-check each other:
//!
//! 1. [`assemble_pde_system`] writes out the raw PDE system obtained from
//!    `dI/dt = 0` — the top Killing-tensor condition, the force ladder, the
//!    scalar condition, and the two integrability conditions — over
//!    time-dependent unknown coefficient tensors.
//! 2. [`FICandidate::total_derivative_residual`] expands `dI/dt` directly as
//!    a velocity polynomial and returns its coefficient tensors.
//!
//! The structured families (polynomial and exponential time dependence,
//! parity splits) are in [`families`]; they build their coefficient tensors
//! as time polynomials and collect the residuals per power of `t`, so each
//! family's assembler emits exactly the surviving reduced conditions.

pub mod families;
mod noether;
mod tpoly;

pub use families::{
    assemble_integral1, assemble_integral2, assemble_parity_split, kt_assembly,
    kv_assembly, reducible_kt_assembly, reconstruction_residual, SplitPart,
};
pub use noether::{noether_from_fi, NoetherGenerator};
pub use tpoly::{TimeProfile, TPoly};

use crate::expr::{
    rat, Bindings, EvalError, Expr, Rational, Scalar, Var, ZeroConfig, ZeroTestError,
    ZeroVerdict,
};
use crate::geometry::{
    component_count, multi_indices, multiplicity, symmetrized_derivative, DynamicalSystem,
    SymTensorField,
};
use num::BigInt;
use std::collections::BTreeMap;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ConditionError {
    #[error("order {0} is not supported by this family ({1})")]
    UnsupportedOrder(usize, String),
    #[error("order {0} exceeds the configured rank bound")]
    OrderTooLarge(usize),
    #[error("lambda must be a nonzero constant or declared parameter")]
    ZeroLambda,
    #[error("unknown slot `{0}` missing from assignment")]
    MissingSlot(String),
    #[error(transparent)]
    ZeroTest(#[from] ZeroTestError),
}

/// Where a candidate came from.
#[derive(Debug, Clone, PartialEq)]
pub enum Provenance {
    Manual,
    PdeSystem { order: usize },
    Integral1 { order: usize, degree: usize },
    Integral2 { order: usize, lambda: String },
    ParitySplit { order: usize, ell: usize, part: u8 },
}

/// A first-integral candidate: the velocity polynomial
/// `I = Σ_r M_{i1...ir}(t, q) q̇^{i1} ... q̇^{ir}` as its sequence of
/// totally symmetric coefficient tensors.
#[derive(Debug, Clone)]
pub struct FICandidate {
    pub dim: usize,
    pub order: usize,
    /// `coeffs[r]` is the rank-r tensor `M_{i1..ir}(t, q)`.
    pub coeffs: Vec<SymTensorField>,
    pub provenance: Provenance,
}

impl FICandidate {
    pub fn new(coeffs: Vec<SymTensorField>, provenance: Provenance) -> Self {
        assert!(!coeffs.is_empty());
        let dim = coeffs[0].dim();
        for (r, c) in coeffs.iter().enumerate() {
            assert_eq!(c.rank(), r);
            assert_eq!(c.dim(), dim);
        }
        FICandidate {
            dim,
            order: coeffs.len() - 1,
            coeffs,
            provenance,
        }
    }

    pub fn zero(dim: usize, order: usize) -> Self {
        FICandidate::new(
            (0..=order).map(|r| SymTensorField::zeros(dim, r)).collect(),
            Provenance::Manual,
        )
    }

    /// Evaluates `I(t, q, q̇)`.
    pub fn eval<T: Scalar>(&self, b: &Bindings<T>, qdot: &[T]) -> Result<T, EvalError> {
        let mut acc = T::from_rational(&rat(0, 1));
        for coeff in &self.coeffs {
            for idx in coeff.indices() {
                let c = coeff.get(idx);
                if c.is_literal_zero() {
                    continue;
                }
                let mut v = c.eval(b)?;
                for &i in idx {
                    v = v.mul(qdot[i]);
                }
                let mult = T::from_rational(&Rational::from_integer(BigInt::from(
                    multiplicity(idx),
                )));
                acc = acc.add(v.mul(mult));
            }
        }
        Ok(acc)
    }

    pub fn eval_f64(
        &self,
        time: f64,
        coords: &[f64],
        qdot: &[f64],
        params: &BTreeMap<String, f64>,
    ) -> Result<f64, EvalError> {
        let b = Bindings {
            time,
            coords: coords.to_vec(),
            params: params.clone(),
        };
        self.eval(&b, qdot)
    }

    /// The total-time-derivative residual along the dynamical equations:
    /// `dI/dt` collected by velocity monomials. Returns the coefficient
    /// tensors for degrees `0..=m+1`; the candidate is a first integral iff
    /// every component vanishes.
    ///
    /// This expands `dI/dt = ∂_t I + q̇^a ∂_a I + (-Γ^a_bc q̇^b q̇^c - Q^a)
    /// ∂I/∂q̇^a` directly — independent of the covariant-derivative route
    /// used by [`assemble_pde_system`], which it must reproduce.
    pub fn total_derivative_residual(&self, sys: &DynamicalSystem) -> Vec<SymTensorField> {
        let m = self.order;
        let dim = self.dim;
        let mut out = Vec::with_capacity(m + 2);
        for d in 0..=m + 1 {
            let mut r = SymTensorField::zeros(dim, d);
            if d <= m {
                r = r.add(&self.coeffs[d].partial(Var::Time));
            }
            if d >= 1 {
                r = r.add(&partial_shift(&self.coeffs[d - 1], d));
            }
            if d >= 2 {
                r = r.sub(
                    &gamma_shift(&self.coeffs[d - 1], sys, d)
                        .scale_rat(Rational::from_integer(BigInt::from((d - 1) as i64))),
                );
            }
            if d + 1 <= m {
                r = r.sub(
                    &self.coeffs[d + 1]
                        .contract_with_vector(&sys.forces)
                        .scale_rat(Rational::from_integer(BigInt::from((d + 1) as i64))),
                );
            }
            out.push(r);
        }
        out
    }

    /// Runs `is_zero` over every coefficient of the total-derivative
    /// residual; `Ok(Zero)` certifies the candidate on the system's domain.
    pub fn certify_symbolic(
        &self,
        sys: &DynamicalSystem,
        cfg: ZeroConfig,
    ) -> Result<ZeroVerdict, ZeroTestError> {
        for r in self.total_derivative_residual(sys) {
            match sys.tensor_is_zero(&r, cfg.clone())? {
                ZeroVerdict::Zero => continue,
                nz => return Ok(nz),
            }
        }
        Ok(ZeroVerdict::Zero)
    }

    /// `∂I/∂q̇^{i1}` as a velocity polynomial: the degree-r term is
    /// `(r+1) M_{i1 i2...i_{r+1}}` with the first slot free.
    pub fn velocity_gradient(&self) -> Vec<SymTensorField> {
        (0..self.order)
            .map(|r| {
                self.coeffs[r + 1].scale_rat(Rational::from_integer(BigInt::from((r + 1) as i64)))
            })
            .collect()
    }

    pub fn sub(&self, other: &FICandidate) -> FICandidate {
        assert_eq!(self.dim, other.dim);
        let order = self.order.max(other.order);
        let coeffs = (0..=order)
            .map(|r| {
                let a = self
                    .coeffs
                    .get(r)
                    .cloned()
                    .unwrap_or_else(|| SymTensorField::zeros(self.dim, r));
                match other.coeffs.get(r) {
                    Some(b) => a.sub(b),
                    None => a,
                }
            })
            .collect();
        FICandidate::new(coeffs, Provenance::Manual)
    }

    pub fn scale_rat(&self, r: Rational) -> FICandidate {
        FICandidate {
            dim: self.dim,
            order: self.order,
            coeffs: self.coeffs.iter().map(|c| c.scale_rat(r.clone())).collect(),
            provenance: self.provenance.clone(),
        }
    }

    pub fn subst_param(&self, name: &str, value: &Expr) -> FICandidate {
        FICandidate {
            dim: self.dim,
            order: self.order,
            coeffs: self
                .coeffs
                .iter()
                .map(|c| c.subst_param(name, value))
                .collect(),
            provenance: self.provenance.clone(),
        }
    }

    pub fn permute_coords(&self, perm: &[usize]) -> FICandidate {
        FICandidate {
            dim: self.dim,
            order: self.order,
            coeffs: self
                .coeffs
                .iter()
                .map(|c| c.permute_coords(perm))
                .collect(),
            provenance: self.provenance.clone(),
        }
    }

    /// True when some coefficient mentions `t` explicitly.
    pub fn is_time_dependent(&self) -> bool {
        self.coeffs
            .iter()
            .any(|c| c.components().iter().any(|e| e.mentions_time()))
    }
}

/// Symmetrized partial-derivative shift: the degree-d velocity collection of
/// `q̇^a ∂_a I` from the degree-(d-1) coefficient —
/// `S_β = (1/d) Σ_k ∂_{β_k} T[β \ k]`.
fn partial_shift(t: &SymTensorField, d: usize) -> SymTensorField {
    let weight = Rational::new(BigInt::from(1), BigInt::from(d as i64));
    SymTensorField::from_fn(t.dim(), d, |idx| {
        let mut terms = Vec::with_capacity(d);
        let mut rest = Vec::with_capacity(d - 1);
        for k in 0..d {
            rest.clear();
            for (i, &v) in idx.iter().enumerate() {
                if i != k {
                    rest.push(v);
                }
            }
            terms.push(t.get(&rest).differentiate(Var::Coord(idx[k])));
        }
        Expr::add(terms).scale(weight.clone())
    })
}

/// Symmetrized Γ-contraction: the degree-d collection of
/// `Γ^a_bc q̇^b q̇^c · (per-degree slice of ∂I/∂q̇^a)` from the degree-(d-1)
/// coefficient — `(1/C(d,2)) Σ_{j<k} Σ_a Γ^a_{β_j β_k} T[a, β \ {j,k}]`.
fn gamma_shift(t: &SymTensorField, sys: &DynamicalSystem, d: usize) -> SymTensorField {
    let dim = t.dim();
    let pairs = (d * (d - 1) / 2) as i64;
    let weight = Rational::new(BigInt::from(1), BigInt::from(pairs));
    SymTensorField::from_fn(dim, d, |idx| {
        let mut terms = Vec::new();
        for j in 0..d {
            for k in (j + 1)..d {
                let mut rest = Vec::with_capacity(d - 1);
                for (i, &v) in idx.iter().enumerate() {
                    if i != j && i != k {
                        rest.push(v);
                    }
                }
                rest.push(0);
                for a in 0..dim {
                    let g = sys.connection.gamma(a, idx[j], idx[k]);
                    if g.is_literal_zero() {
                        continue;
                    }
                    *rest.last_mut().unwrap() = a;
                    let c = t.get(&rest);
                    if c.is_literal_zero() {
                        continue;
                    }
                    terms.push(Expr::mul2(g.clone(), c.clone()));
                }
            }
        }
        Expr::add(terms).scale(weight.clone())
    })
}

/// An unknown tensor slot of a condition system.
#[derive(Debug, Clone, PartialEq)]
pub struct UnknownSlot {
    pub name: String,
    pub rank: usize,
}

/// Concrete tensor fields substituted for the unknown slots.
#[derive(Debug, Clone, Default)]
pub struct Assignment {
    fields: BTreeMap<String, SymTensorField>,
}

impl Assignment {
    pub fn new() -> Self {
        Assignment::default()
    }

    pub fn set(&mut self, name: impl Into<String>, field: SymTensorField) {
        self.fields.insert(name.into(), field);
    }

    pub fn with(mut self, name: impl Into<String>, field: SymTensorField) -> Self {
        self.set(name, field);
        self
    }

    pub fn get(&self, name: &str) -> Option<&SymTensorField> {
        self.fields.get(name)
    }

    /// Zero fields for every slot (the basis of every linear expansion).
    pub fn zeros(slots: &[UnknownSlot], dim: usize) -> Self {
        let mut a = Assignment::new();
        for s in slots {
            a.set(s.name.clone(), SymTensorField::zeros(dim, s.rank));
        }
        a
    }

    /// Fills any missing slots with zero fields.
    pub fn complete(&self, slots: &[UnknownSlot], dim: usize) -> Assignment {
        let mut a = self.clone();
        for s in slots {
            if !a.fields.contains_key(&s.name) {
                a.set(s.name.clone(), SymTensorField::zeros(dim, s.rank));
            }
        }
        a
    }

    fn field(&self, name: &str) -> &SymTensorField {
        self.fields
            .get(name)
            .unwrap_or_else(|| panic!("assignment is missing slot `{name}`"))
    }
}

/// A named residual entry shape: the builder returns tensors aligned with
/// these, keyed like `v3.t0` (velocity degree 3, t-power 0) for the reduced
/// families or by the raw equation names for the PDE system.
#[derive(Debug, Clone, PartialEq)]
pub struct EntryShape {
    pub name: String,
    pub rank: usize,
}

type Builder = dyn Fn(&Assignment, &DynamicalSystem) -> Vec<SymTensorField> + Send + Sync;

/// A collection of named residual tensors over registered unknown slots;
/// all residuals vanishing (under `is_zero`) encodes membership in the
/// family the set was assembled for.
#[derive(Clone)]
pub struct ConditionSet {
    pub label: String,
    pub dim: usize,
    pub slots: Vec<UnknownSlot>,
    pub entries: Vec<EntryShape>,
    builder: Arc<Builder>,
}

impl std::fmt::Debug for ConditionSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ConditionSet")
            .field("label", &self.label)
            .field("slots", &self.slots)
            .field("entries", &self.entries)
            .finish()
    }
}

impl ConditionSet {
    pub fn new(
        label: impl Into<String>,
        dim: usize,
        slots: Vec<UnknownSlot>,
        entries: Vec<EntryShape>,
        builder: Arc<Builder>,
    ) -> Self {
        ConditionSet {
            label: label.into(),
            dim,
            slots,
            entries,
            builder,
        }
    }

    /// Residual tensors for a concrete assignment, aligned with `entries`.
    /// Missing slots are treated as zero fields.
    pub fn residuals(&self, asg: &Assignment, sys: &DynamicalSystem) -> Vec<SymTensorField> {
        let complete = asg.complete(&self.slots, self.dim);
        (self.builder)(&complete, sys)
    }

    /// Total residual component count (matrix rows per sample point).
    pub fn residual_component_count(&self) -> usize {
        self.entries
            .iter()
            .map(|e| component_count(self.dim, e.rank))
            .sum()
    }

    /// The slot registry as (name, rank) pairs.
    pub fn slot_ranks(&self) -> Vec<(String, usize)> {
        self.slots.iter().map(|s| (s.name.clone(), s.rank)).collect()
    }
}

/// Conditions together with the family's FI template (when there is one).
#[derive(Clone)]
pub struct FamilyAssembly {
    pub name: String,
    pub conditions: ConditionSet,
    pub template: Option<FITemplate>,
}

impl std::fmt::Debug for FamilyAssembly {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FamilyAssembly")
            .field("name", &self.name)
            .field("conditions", &self.conditions)
            .finish()
    }
}

type TemplateFn = dyn Fn(&Assignment) -> FICandidate + Send + Sync;

/// Builds the family's symbolic FI from an assignment of its unknowns.
#[derive(Clone)]
pub struct FITemplate {
    pub slots: Vec<UnknownSlot>,
    pub dim: usize,
    build: Arc<TemplateFn>,
}

impl FITemplate {
    pub fn new(slots: Vec<UnknownSlot>, dim: usize, build: Arc<TemplateFn>) -> Self {
        FITemplate { slots, dim, build }
    }

    pub fn build(&self, asg: &Assignment) -> FICandidate {
        let complete = asg.complete(&self.slots, self.dim);
        (self.build)(&complete)
    }
}

/// Marker assignment used to enumerate which residual entries are
/// structurally present: every slot component gets a distinct parameter
/// times a generic exponential profile, so a residual that simplifies to
/// zero under the markers is zero for every assignment.
pub(crate) fn marker_assignment(slots: &[UnknownSlot], dim: usize) -> Assignment {
    let profile = Expr::exp(Expr::add(
        (0..dim).map(|i| Expr::mul2(Expr::int(i as i64 + 1), Expr::coord(i))),
    ));
    let mut asg = Assignment::new();
    for slot in slots {
        let field = SymTensorField::from_fn(dim, slot.rank, |idx| {
            let tag = idx
                .iter()
                .map(|i| (i + 1).to_string())
                .collect::<Vec<_>>()
                .join("");
            Expr::mul2(
                Expr::param(format!("mk_{}_{}", slot.name, tag)),
                profile.clone(),
            )
        });
        asg.set(slot.name.clone(), field);
    }
    asg
}

/// Assembles the raw PDE system for an order-`m` FI over unknown coefficient
/// tensors `M0..Mm` of `(t, q)`:
///
/// - `kt` — the top generalized-KT condition (degree m+1 collection),
/// - `top` — `∂_t M_m + M_{(i1..i_{m-1}|i_m)}`,
/// - `ladder.r` — `∂_t M_r + M_{(..|i_r)} - (r+1) M_{r+1}·Q` for r = 1..m-1,
/// - `scalar` — `∂_t M_0 - M_a Q^a`,
/// - `int1` — `M_{i1,tt} - 2 M_{i1i2,t} Q^{i2} + (M_c Q^c)_{,i1}`,
/// - `int2[i,j]` — `2 (M_{[i|c|} Q^c)_{|j]} - ∂_t M_{[i|j]}` per pair i<j.
///
/// The two `int` families are the integrability conditions of the scalar
/// coefficient; they are consequences of the others on solutions but are
/// emitted explicitly.
pub fn assemble_pde_system(
    m: usize,
    sys: &DynamicalSystem,
) -> Result<ConditionSet, ConditionError> {
    if m == 0 || m > crate::geometry::MAX_RANK {
        return Err(ConditionError::OrderTooLarge(m));
    }
    let dim = sys.dim;
    let slots: Vec<UnknownSlot> = (0..=m)
        .map(|r| UnknownSlot {
            name: format!("M{r}"),
            rank: r,
        })
        .collect();
    let mut entries = vec![EntryShape {
        name: "kt".into(),
        rank: m + 1,
    }];
    entries.push(EntryShape {
        name: "top".into(),
        rank: m,
    });
    for r in 1..m {
        entries.push(EntryShape {
            name: format!("ladder.r{r}"),
            rank: r,
        });
    }
    entries.push(EntryShape {
        name: "scalar".into(),
        rank: 0,
    });
    entries.push(EntryShape {
        name: "int1".into(),
        rank: 1,
    });
    for ij in multi_indices(dim, 2) {
        if ij[0] < ij[1] {
            entries.push(EntryShape {
                name: format!("int2[{},{}]", ij[0] + 1, ij[1] + 1),
                rank: 0,
            });
        }
    }
    let order = m;
    let builder: Arc<Builder> = Arc::new(move |asg, sys| {
        let dim = sys.dim;
        let ms: Vec<SymTensorField> = (0..=order)
            .map(|r| asg.field(&format!("M{r}")).clone())
            .collect();
        let mut out = Vec::new();
        // kt: degree-(m+1) collection = symmetrized covariant derivative
        out.push(symmetrized_derivative(&ms[order], &sys.connection));
        // top
        let mut top = ms[order].partial(Var::Time);
        top = top.add(&symmetrized_derivative(&ms[order - 1], &sys.connection));
        out.push(top);
        // ladder
        for r in 1..order {
            let mut e = ms[r].partial(Var::Time);
            e = e.add(&symmetrized_derivative(&ms[r - 1], &sys.connection));
            e = e.sub(
                &ms[r + 1]
                    .contract_with_vector(&sys.forces)
                    .scale_rat(Rational::from_integer(BigInt::from((r + 1) as i64))),
            );
            out.push(e);
        }
        // scalar
        let scalar = ms[0]
            .partial(Var::Time)
            .sub(&ms[1].contract_with_vector(&sys.forces));
        out.push(scalar);
        // int1: M_{i1,tt} - 2 M_{i1i2,t} Q^{i2} + (M_c Q^c)_{,i1}
        let mut int1 = ms[1].partial(Var::Time).partial(Var::Time);
        if order >= 2 {
            int1 = int1.sub(
                &ms[2]
                    .partial(Var::Time)
                    .contract_with_vector(&sys.forces)
                    .scale_rat(rat(2, 1)),
            );
        }
        let m1q = ms[1].contract_with_vector(&sys.forces);
        let grad = SymTensorField::from_fn(dim, 1, |idx| {
            m1q.scalar_value().differentiate(Var::Coord(idx[0]))
        });
        out.push(int1.add(&grad));
        // int2 per antisymmetric pair
        let v = if order >= 2 {
            ms[2].contract_with_vector(&sys.forces)
        } else {
            SymTensorField::zeros(dim, 1)
        };
        let a = crate::geometry::antisym_cov_derivative(&v, &sys.connection);
        let b = crate::geometry::antisym_cov_derivative(&ms[1], &sys.connection);
        for ij in multi_indices(dim, 2) {
            let (i, j) = (ij[0], ij[1]);
            if i < j {
                let e = Expr::sub(
                    a[i][j].clone().scale(rat(2, 1)),
                    b[i][j].differentiate(Var::Time),
                );
                out.push(SymTensorField::scalar(dim, e));
            }
        }
        out
    });
    Ok(ConditionSet::new(
        format!("pde-system m={m}"),
        dim,
        slots,
        entries,
        builder,
    ))
}
