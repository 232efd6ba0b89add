//! Linear-ansatz reduction: expand the unknown tensors of a condition set in
//! a declared function basis, sample the residuals at random points, and
//! extract the coefficient nullspace.
//!
//! The pipeline is: assemble the sampled matrix (exact rational entries when
//! every residual evaluates rationally, floating otherwise, with a linearity
//! probe up front) → nullspace (fraction-free elimination on the exact path,
//! rank-revealing SVD on the floating path) → canonicalize the kernel basis
//! by row reduction and snap the floating coordinates to rationals →
//! reconstruct symbolic tensors/candidates → certify every member at fresh
//! sample points through the external residual (total-derivative residual
//! for FI families, Killing residual for tensor searches). Members that fail
//! certification are kept in the report but marked spurious.
//!
//! System parameters are fixed at one generic rational draw while solving;
//! the family's kernel dimension is then re-checked at alternative draws and
//! flagged `parameter-conditional` when it is not stable.

mod exact;

pub use exact::{nullspace_exact, rank_exact};

use crate::conditions::{Assignment, ConditionSet, FICandidate, FamilyAssembly};
use crate::expr::{
    rat, EvalError, Expr, Rational, SampleError, SamplePoint, SplitMix64,
    ZeroConfig, ZeroTestError,
};
use crate::geometry::{DynamicalSystem, SymTensorField};
use nalgebra::DMatrix;
use num::{Signed, Zero};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum SolveError {
    #[error("no basis declared for unknown slot `{0}`")]
    MissingBasis(String),
    #[error("basis for slot `{0}` is empty")]
    EmptyBasis(String),
    #[error("conditions are not linear in the unknown coefficients")]
    NonlinearConditions,
    #[error(
        "ill-conditioned solve: rank decision margin {margin:.2} is below 10; \
         add sample points or switch precision"
    )]
    IllConditioned { margin: f64 },
    #[error(transparent)]
    Sampling(#[from] SampleError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    ZeroTest(#[from] ZeroTestError),
}

/// Monomials in the coordinates up to the given total degree (constant
/// included), in a fixed deterministic order.
pub fn monomials(dim: usize, max_degree: usize) -> Vec<Expr> {
    let mut out = Vec::new();
    let mut exps = vec![0usize; dim];
    collect_monomials(dim, max_degree, 0, &mut exps, &mut out);
    out
}

/// Monomials of total degree 1..=max_degree (no constant); the natural gauge
/// choice for scalar potentials defined up to an additive constant.
pub fn monomials_nonconst(dim: usize, max_degree: usize) -> Vec<Expr> {
    monomials(dim, max_degree)
        .into_iter()
        .filter(|e| e.as_rational().is_none())
        .collect()
}

fn collect_monomials(
    dim: usize,
    budget: usize,
    coord: usize,
    exps: &mut Vec<usize>,
    out: &mut Vec<Expr>,
) {
    if coord == dim {
        let factors: Vec<Expr> = exps
            .iter()
            .enumerate()
            .filter(|(_, &e)| e > 0)
            .map(|(i, &e)| Expr::powi(Expr::coord(i), e as i64))
            .collect();
        out.push(Expr::mul(factors));
        return;
    }
    for e in 0..=budget {
        exps[coord] = e;
        collect_monomials(dim, budget - e, coord + 1, exps, out);
    }
    exps[coord] = 0;
}

/// Multiplies every basis function by a fixed expression.
pub fn scaled_basis(basis: &[Expr], multiplier: &Expr) -> Vec<Expr> {
    basis
        .iter()
        .map(|b| Expr::mul2(multiplier.clone(), b.clone()))
        .collect()
}

/// Per-slot basis declarations.
#[derive(Debug, Clone, Default)]
pub struct AnsatzSpace {
    bases: BTreeMap<String, Vec<Expr>>,
}

impl AnsatzSpace {
    pub fn new() -> Self {
        AnsatzSpace::default()
    }

    pub fn with_basis(mut self, slot: &str, functions: Vec<Expr>) -> Self {
        self.bases.insert(slot.to_string(), functions);
        self
    }

    pub fn set_basis(&mut self, slot: &str, functions: Vec<Expr>) {
        self.bases.insert(slot.to_string(), functions);
    }

    pub fn basis(&self, slot: &str) -> Option<&[Expr]> {
        self.bases.get(slot).map(|v| v.as_slice())
    }

    /// Completes the space against a condition set: the constant slot `s`
    /// defaults to the constant function, everything else must be declared.
    fn resolve(&self, cs: &ConditionSet) -> Result<Vec<(String, usize, Vec<Expr>)>, SolveError> {
        let mut out = Vec::new();
        for slot in &cs.slots {
            let basis = match self.bases.get(&slot.name) {
                Some(b) => b.clone(),
                None if slot.name == "s" => vec![Expr::one()],
                None => return Err(SolveError::MissingBasis(slot.name.clone())),
            };
            if basis.is_empty() {
                return Err(SolveError::EmptyBasis(slot.name.clone()));
            }
            out.push((slot.name.clone(), slot.rank, basis));
        }
        Ok(out)
    }
}

/// One scalar unknown of the linear system: (slot, component multi-index,
/// basis function).
#[derive(Debug, Clone)]
pub struct CoefficientKey {
    pub slot: String,
    pub component: Vec<usize>,
    pub basis: Expr,
}

/// Maps scalar coefficients to tensor assignments and back.
#[derive(Debug, Clone)]
pub struct CoefficientIndex {
    pub dim: usize,
    pub keys: Vec<CoefficientKey>,
    slots: Vec<(String, usize, Vec<Expr>)>,
}

impl CoefficientIndex {
    fn build(cs: &ConditionSet, space: &AnsatzSpace) -> Result<Self, SolveError> {
        let slots = space.resolve(cs)?;
        let mut keys = Vec::new();
        for (name, rank, basis) in &slots {
            for idx in crate::geometry::multi_indices(cs.dim, *rank) {
                for b in basis {
                    keys.push(CoefficientKey {
                        slot: name.clone(),
                        component: idx.clone(),
                        basis: b.clone(),
                    });
                }
            }
        }
        Ok(CoefficientIndex {
            dim: cs.dim,
            keys,
            slots,
        })
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// Assignment with a single unit coefficient.
    fn unit_assignment(&self, k: usize) -> Assignment {
        let key = &self.keys[k];
        let mut asg = Assignment::new();
        for (name, rank, _) in &self.slots {
            let mut field = SymTensorField::zeros(self.dim, *rank);
            if name == &key.slot {
                field.set(&key.component, key.basis.clone());
            }
            asg.set(name.clone(), field);
        }
        asg
    }

    /// Assignment for a full rational coefficient vector.
    pub fn reconstruct(&self, coeffs: &[Rational]) -> Assignment {
        assert_eq!(coeffs.len(), self.keys.len());
        let mut asg = Assignment::new();
        let mut k = 0usize;
        for (name, rank, basis) in &self.slots {
            let mut parts: BTreeMap<Vec<usize>, Vec<Expr>> = BTreeMap::new();
            for idx in crate::geometry::multi_indices(self.dim, *rank) {
                for b in basis {
                    let c = &coeffs[k];
                    k += 1;
                    if c.is_zero() {
                        continue;
                    }
                    parts
                        .entry(idx.clone())
                        .or_default()
                        .push(Expr::mul2(Expr::rational(c.clone()), b.clone()));
                }
            }
            let field = SymTensorField::from_fn(self.dim, *rank, |idx| {
                parts
                    .get(idx)
                    .map(|terms| Expr::add(terms.clone()))
                    .unwrap_or_else(Expr::zero)
            });
            asg.set(name.clone(), field);
        }
        asg
    }
}

/// Sampled linear system `A c = 0`.
#[derive(Debug)]
pub struct LinearSystem {
    pub index: CoefficientIndex,
    pub float_rows: DMatrix<f64>,
    pub exact_rows: Option<Vec<Vec<Rational>>>,
    pub points: Vec<SamplePoint>,
}

/// Rank decision diagnostics of the floating nullspace.
#[derive(Debug, Clone)]
pub struct RankDiagnostics {
    pub sigma_max: f64,
    pub threshold: f64,
    /// Smallest singular value kept above the threshold over the threshold
    /// itself; infinite when the matrix is entirely null.
    pub margin: f64,
    pub rank: usize,
    pub kernel_dim: usize,
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub seed: u64,
    /// Overrides the automatic sample-point count when larger.
    pub points: Option<usize>,
    pub zero_config: ZeroConfig,
    /// Re-solve at 3 alternative parameter draws and compare dimensions.
    pub parameter_recheck: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            seed: 0x5eed,
            points: None,
            zero_config: ZeroConfig::default(),
            parameter_recheck: true,
        }
    }
}

impl SolveOptions {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Draws one generic rational value per free parameter. The grid is kept
/// very coarse (eighths of the declared range) so that products, inverses
/// and elimination minors of parameter values appearing in member
/// coefficients stay snappable from double precision; genuinely
/// parameter-conditional families are still caught by the re-draw check.
fn draw_params(sys: &DynamicalSystem, seed: u64) -> BTreeMap<String, Rational> {
    let mut rng = SplitMix64::new(seed ^ 0xa55a_0f0f_1234_5678);
    let mut out = BTreeMap::new();
    for (name, (lo, hi)) in &sys.domain.param_ranges {
        let k = 1 + rng.next_u64() % 7;
        let frac = Rational::new(num::BigInt::from(k), num::BigInt::from(8u8));
        out.insert(name.clone(), lo + (hi - lo) * frac);
    }
    out
}

/// Samples coordinate/time points with every free parameter fixed to the
/// given values (one generic draw shared by the whole solve).
fn sample_points_fixed_params(
    sys: &DynamicalSystem,
    n: usize,
    seed: u64,
    params: &BTreeMap<String, Rational>,
) -> Result<Vec<SamplePoint>, SampleError> {
    let domain = sys.domain.fixing_params(params);
    domain.sample_many(n, seed)
}

/// Assembles the sampled linear system for the condition set over the space.
pub fn assemble_linear_system(
    cs: &ConditionSet,
    space: &AnsatzSpace,
    sys: &DynamicalSystem,
    opts: &SolveOptions,
    params: &BTreeMap<String, Rational>,
) -> Result<LinearSystem, SolveError> {
    let index = CoefficientIndex::build(cs, space)?;
    let d = index.len();
    let comps = cs.residual_component_count().max(1);
    let min_points = (3 * d).div_ceil(2 * comps).max(4); // ceil(1.5 D / comps)
    let n_points = opts.points.unwrap_or(0).max(min_points);
    let points = sample_points_fixed_params(sys, n_points, opts.seed, params)?;

    linearity_probe(cs, &index, sys, &points, opts.seed)?;

    let rows = n_points * comps;
    // f64 entries go through compiled programs (parameters are fixed for the
    // whole solve); the exact path keeps tree evaluation and is abandoned at
    // the first non-rational component.
    let params_f64: BTreeMap<String, f64> = points
        .first()
        .map(|p| {
            p.params
                .iter()
                .map(|(k, v)| (k.clone(), crate::expr::rational_to_f64(v)))
                .collect()
        })
        .unwrap_or_default();
    let point_coords: Vec<(f64, Vec<f64>)> = points
        .iter()
        .map(|p| {
            let b = p.bindings_f64();
            (b.time, b.coords)
        })
        .collect();
    let mut stack = Vec::new();
    let mut float_cols: Vec<Vec<f64>> = Vec::with_capacity(d);
    let mut exact_cols: Option<Vec<Vec<Rational>>> = Some(Vec::with_capacity(d));
    for k in 0..d {
        let asg = index.unit_assignment(k);
        let tensors = cs.residuals(&asg, sys);
        let mut fcol = Vec::with_capacity(rows);
        let mut ecol: Option<Vec<Rational>> = exact_cols.as_ref().map(|_| Vec::with_capacity(rows));
        let programs: Vec<crate::expr::CompiledExpr> = tensors
            .iter()
            .flat_map(|t| t.components().iter())
            .map(|c| crate::expr::CompiledExpr::compile(c, &params_f64))
            .collect::<Result<_, _>>()?;
        for (pi, (time, coords)) in point_coords.iter().enumerate() {
            for prog in &programs {
                fcol.push(prog.eval_with(*time, coords, &mut stack)?);
            }
            if ecol.is_some() {
                let bex = points[pi].bindings_exact();
                'exact: for t in &tensors {
                    for c in t.components() {
                        match c.eval_exact(&bex) {
                            Ok(v) => ecol.as_mut().unwrap().push(v),
                            Err(crate::expr::ExactError::NotRational) => {
                                ecol = None;
                                exact_cols = None;
                                break 'exact;
                            }
                            Err(crate::expr::ExactError::Eval(err)) => return Err(err.into()),
                        }
                    }
                }
            }
        }
        if let (Some(cols), Some(e)) = (exact_cols.as_mut(), ecol) {
            cols.push(e);
        }
        float_rows_push(&mut float_cols, fcol);
    }
    let float_rows = DMatrix::from_fn(rows, d, |i, j| float_cols[j][i]);
    let exact_rows = exact_cols.map(|cols| {
        (0..rows)
            .map(|i| cols.iter().map(|c| c[i].clone()).collect())
            .collect()
    });
    Ok(LinearSystem {
        index,
        float_rows,
        exact_rows,
        points,
    })
}

fn float_rows_push(cols: &mut Vec<Vec<f64>>, col: Vec<f64>) {
    cols.push(col);
}

/// Checks superposition: residual(c1) + residual(c2) = residual(c1 + c2) at
/// a few points, for random coefficient vectors.
fn linearity_probe(
    cs: &ConditionSet,
    index: &CoefficientIndex,
    sys: &DynamicalSystem,
    points: &[SamplePoint],
    seed: u64,
) -> Result<(), SolveError> {
    let d = index.len();
    let mut rng = SplitMix64::new(seed ^ 0x11b);
    let mut vec1 = vec![Rational::zero(); d];
    let mut vec2 = vec![Rational::zero(); d];
    for k in 0..d {
        vec1[k] = rat((rng.next_u64() % 7) as i64 - 3, 2);
        vec2[k] = rat((rng.next_u64() % 7) as i64 - 3, 3);
    }
    let sum: Vec<Rational> = vec1.iter().zip(&vec2).map(|(a, b)| a + b).collect();
    let r1 = cs.residuals(&index.reconstruct(&vec1), sys);
    let r2 = cs.residuals(&index.reconstruct(&vec2), sys);
    let rs = cs.residuals(&index.reconstruct(&sum), sys);
    for p in points.iter().take(3) {
        let b = p.bindings_f64();
        for ((a, bb), c) in r1.iter().zip(&r2).zip(&rs) {
            for ((x, y), z) in a
                .components()
                .iter()
                .zip(bb.components())
                .zip(c.components())
            {
                let (vx, vy, vz) = (x.eval_f64(&b)?, y.eval_f64(&b)?, z.eval_f64(&b)?);
                let scale = vx.abs().max(vy.abs()).max(vz.abs()).max(1.0);
                if (vx + vy - vz).abs() > 1e-8 * scale {
                    return Err(SolveError::NonlinearConditions);
                }
            }
        }
    }
    Ok(())
}

/// Rank-revealing floating nullspace with the singular-value threshold
/// `σ_max * 1e-10`; errors out when the rank decision is within a factor 10
/// of the threshold.
pub fn nullspace_f64(a: &DMatrix<f64>) -> Result<(Vec<Vec<f64>>, RankDiagnostics), SolveError> {
    let (rows, cols) = a.shape();
    assert!(rows >= cols, "oversample so that rows >= cols");
    // balance row scales (kernel-preserving)
    let mut m = a.clone();
    for mut row in m.row_iter_mut() {
        let maxab = row.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        if maxab > 0.0 {
            row /= maxab;
        }
    }
    let svd = m.svd(false, true);
    let v_t = svd.v_t.expect("requested");
    let mut sigmas: Vec<(usize, f64)> = svd
        .singular_values
        .iter()
        .cloned()
        .enumerate()
        .collect();
    sigmas.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    let sigma_max = sigmas.first().map(|s| s.1).unwrap_or(0.0);
    if sigma_max == 0.0 {
        // structurally zero matrix: every direction is in the kernel
        let kernel = (0..cols)
            .map(|j| {
                let mut v = vec![0.0; cols];
                v[j] = 1.0;
                v
            })
            .collect();
        return Ok((
            kernel,
            RankDiagnostics {
                sigma_max: 0.0,
                threshold: 0.0,
                margin: f64::INFINITY,
                rank: 0,
                kernel_dim: cols,
            },
        ));
    }
    let threshold = sigma_max * 1e-10;
    let kept: Vec<f64> = sigmas
        .iter()
        .map(|s| s.1)
        .filter(|&s| s >= threshold)
        .collect();
    let rank = kept.len();
    let sigma_min_kept = kept.last().cloned().unwrap_or(f64::INFINITY);
    let margin = sigma_min_kept / threshold;
    if rank < cols && margin < 10.0 {
        return Err(SolveError::IllConditioned { margin });
    }
    // also ill-conditioned: a "full rank" decision that barely clears it
    if rank == cols && margin < 10.0 {
        return Err(SolveError::IllConditioned { margin });
    }
    let mut kernel = Vec::new();
    for (i, s) in &sigmas {
        if *s < threshold {
            kernel.push(v_t.row(*i).iter().cloned().collect::<Vec<f64>>());
        }
    }
    let kernel_dim = kernel.len();
    Ok((
        kernel,
        RankDiagnostics {
            sigma_max,
            threshold,
            margin,
            rank,
            kernel_dim,
        },
    ))
}

/// Gauss-Jordan canonicalization of a kernel basis: leading entries become 1
/// in coefficient order, entries below the noise floor are zeroed. This
/// removes the arbitrary rotation a singular basis comes with and makes the
/// reported vectors stable.
pub fn canonicalize_basis(vectors: &mut Vec<Vec<f64>>) {
    if vectors.is_empty() {
        return;
    }
    let cols = vectors[0].len();
    let eps = 1e-8;
    let mut row = 0usize;
    for col in 0..cols {
        if row >= vectors.len() {
            break;
        }
        // pick the row with the largest entry in this column
        let (best, best_abs) = vectors
            .iter()
            .enumerate()
            .skip(row)
            .map(|(i, v)| (i, v[col].abs()))
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap();
        if best_abs < eps {
            continue;
        }
        vectors.swap(row, best);
        let pivot = vectors[row][col];
        for v in vectors[row].iter_mut() {
            *v /= pivot;
        }
        for i in 0..vectors.len() {
            if i != row {
                let f = vectors[i][col];
                if f != 0.0 {
                    for c in 0..cols {
                        let upd = vectors[row][c] * f;
                        vectors[i][c] -= upd;
                    }
                }
            }
        }
        row += 1;
    }
    for v in vectors.iter_mut() {
        for e in v.iter_mut() {
            if e.abs() < eps {
                *e = 0.0;
            }
        }
    }
}

/// Canonicalizes an exact kernel basis the same way (pivots exactly 1).
pub fn canonicalize_basis_exact(vectors: &mut [Vec<Rational>]) {
    if vectors.is_empty() {
        return;
    }
    let cols = vectors[0].len();
    let mut row = 0usize;
    for col in 0..cols {
        if row >= vectors.len() {
            break;
        }
        let Some(p) = (row..vectors.len()).find(|&i| !vectors[i][col].is_zero()) else {
            continue;
        };
        vectors.swap(row, p);
        let pivot = vectors[row][col].clone();
        for e in vectors[row].iter_mut() {
            *e /= &pivot;
        }
        for i in 0..vectors.len() {
            if i != row && !vectors[i][col].is_zero() {
                let f = vectors[i][col].clone();
                for c in 0..cols {
                    let upd = &vectors[row][c] * &f;
                    vectors[i][c] -= upd;
                }
            }
        }
        row += 1;
    }
}

/// Best rational approximation with denominator up to the cap, via
/// continued-fraction convergents; `None` when even the best one misses the
/// tolerance. Taking the best convergent (not the first within tolerance)
/// matters: a true coefficient with a five-digit denominator must not lose
/// to a nearby small-denominator impostor.
pub fn snap_rational(x: f64, rel_tol: f64, max_den: u64) -> Option<Rational> {
    if !x.is_finite() {
        return None;
    }
    if x == 0.0 {
        return Some(Rational::zero());
    }
    let tol = rel_tol * x.abs().max(1.0);
    let (mut p0, mut q0, mut p1, mut q1) = (1i128, 0i128, x.floor() as i128, 1i128);
    let mut frac = x - x.floor();
    let mut best: Option<(f64, i128, i128)> = None;
    for _ in 0..64 {
        let approx = p1 as f64 / q1 as f64;
        let err = (approx - x).abs();
        if q1 as u64 <= max_den && best.as_ref().is_none_or(|(e, _, _)| err < *e) {
            best = Some((err, p1, q1));
        }
        if frac.abs() < 1e-15 || err == 0.0 {
            break;
        }
        let r = 1.0 / frac;
        let a = r.floor();
        frac = r - a;
        let (p2, q2) = (a as i128 * p1 + p0, a as i128 * q1 + q0);
        if q2 as u64 > max_den || p2.abs() > i64::MAX as i128 || q2 > i64::MAX as i128 {
            break;
        }
        (p0, q0, p1, q1) = (p1, q1, p2, q2);
    }
    match best {
        Some((err, p, q)) if err <= tol && q != 0 => Some(rat(p as i64, q as i64)),
        _ => None,
    }
}

/// One member of a solution family.
#[derive(Debug, Clone)]
pub struct FamilyMember {
    pub coeffs_float: Vec<f64>,
    /// Exact (or snapped) coefficients when available.
    pub coeffs: Option<Vec<Rational>>,
    pub assignment: Option<Assignment>,
    pub candidate: Option<FICandidate>,
    pub certified: bool,
    /// Survived sampling but failed fresh-point certification.
    pub spurious: bool,
}

/// Nullspace result with certification record.
#[derive(Debug)]
pub struct SolutionFamily {
    pub dimension: usize,
    pub members: Vec<FamilyMember>,
    pub exact: bool,
    pub diagnostics: Option<RankDiagnostics>,
    /// `Some(false)` when re-solves at other parameter draws disagree in
    /// dimension ("parameter-conditional" family).
    pub parameter_stable: Option<bool>,
    pub coefficient_keys: Vec<CoefficientKey>,
    /// The parameter draw the family was solved at.
    pub params: BTreeMap<String, Rational>,
}

impl SolutionFamily {
    /// Number of members that passed certification.
    pub fn certified_dimension(&self) -> usize {
        self.members.iter().filter(|m| m.certified).count()
    }

    /// Least-squares containment check: the distance of `target` from the
    /// kernel span, relative to the target norm.
    pub fn containment_residual(&self, target: &[f64]) -> f64 {
        let n = target.len();
        let tn = target.iter().map(|v| v * v).sum::<f64>().sqrt();
        if tn == 0.0 {
            return 0.0;
        }
        // Gram-Schmidt the member vectors, then project
        let mut basis: Vec<Vec<f64>> = Vec::new();
        for m in &self.members {
            let mut v = m.coeffs_float.clone();
            for b in &basis {
                let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                for (x, y) in v.iter_mut().zip(b) {
                    *x -= dot * y;
                }
            }
            let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                for x in v.iter_mut() {
                    *x /= norm;
                }
                basis.push(v);
            }
        }
        let mut resid: Vec<f64> = target.to_vec();
        for b in &basis {
            let dot: f64 = resid.iter().zip(b).map(|(x, y)| x * y).sum();
            for (x, y) in resid.iter_mut().zip(b) {
                *x -= dot * y;
            }
        }
        let rn = resid.iter().take(n).map(|v| v * v).sum::<f64>().sqrt();
        rn / tn
    }
}

/// Full pipeline: assemble, solve, reconstruct, certify.
///
/// Sampling starts at the floor `S = ceil(1.5 D / residual components)`;
/// whenever fresh-point certification exposes spurious kernel directions
/// (the sample was too thin for the residual degrees in play) the solve is
/// repeated with the point count doubled, up to a factor of 8.
pub fn solve(
    assembly: &FamilyAssembly,
    space: &AnsatzSpace,
    sys: &DynamicalSystem,
    opts: &SolveOptions,
) -> Result<SolutionFamily, SolveError> {
    // unlucky parameter draws can make kernel coordinates too irrational to
    // reconstruct from double precision; one alternative draw is tried
    let mut best: Option<SolutionFamily> = None;
    for draw in 0..2u64 {
        let params = draw_params(sys, opts.seed.wrapping_add(draw * 0x5bd1));
        let mut multiplier = 1usize;
        let family = loop {
            match solve_at(assembly, space, sys, opts, &params, multiplier) {
                Ok(family) => {
                    let clean = family.members.iter().all(|m| m.certified);
                    if clean || multiplier >= 8 {
                        break Some(family);
                    }
                }
                // an ambiguous rank decision also asks for more points
                Err(SolveError::IllConditioned { .. }) if multiplier < 8 => {}
                Err(e) if draw == 0 => return Err(e),
                Err(_) => break None,
            }
            multiplier *= 2;
        };
        if let Some(family) = family {
            let clean = family.members.iter().all(|m| m.certified);
            let better = match &best {
                None => true,
                Some(b) => family.certified_dimension() > b.certified_dimension(),
            };
            if better {
                best = Some(family);
            }
            if clean {
                break;
            }
        }
    }
    Ok(best.expect("at least the first draw produced a family"))
}

fn solve_at(
    assembly: &FamilyAssembly,
    space: &AnsatzSpace,
    sys: &DynamicalSystem,
    opts: &SolveOptions,
    params: &BTreeMap<String, Rational>,
    multiplier: usize,
) -> Result<SolutionFamily, SolveError> {
    let index = CoefficientIndex::build(&assembly.conditions, space)?;
    let d = index.len();
    let comps = assembly.conditions.residual_component_count().max(1);
    let floor = (3 * d).div_ceil(2 * comps).max(4);
    let n_points = opts.points.unwrap_or(0).max(floor) * multiplier;
    let opts = SolveOptions {
        points: Some(n_points),
        ..opts.clone()
    };
    let opts = &opts;
    let system = assemble_linear_system(&assembly.conditions, space, sys, opts, params)?;
    let (kernel_exact, kernel_float, diagnostics) = match &system.exact_rows {
        Some(rows) => {
            let mut k = nullspace_exact(rows);
            canonicalize_basis_exact(&mut k);
            let kf: Vec<Vec<f64>> = k
                .iter()
                .map(|v| v.iter().map(crate::expr::rational_to_f64).collect())
                .collect();
            (Some(k), kf, None)
        }
        None => {
            let (mut kf, diag) = nullspace_f64(&system.float_rows)?;
            canonicalize_basis(&mut kf);
            (None, kf, Some(diag))
        }
    };

    let dimension = kernel_float.len();
    let fresh_seed = opts.seed.wrapping_mul(0x9e37_79b9).wrapping_add(1);
    let cert_cfg = opts
        .zero_config
        .clone()
        .with_seed(fresh_seed);

    let mut members = Vec::with_capacity(dimension);
    for (i, fv) in kernel_float.iter().enumerate() {
        let rationals: Option<Vec<Rational>> = match &kernel_exact {
            Some(k) => Some(k[i].clone()),
            None => fv
                .iter()
                .map(|&x| snap_rational(x, 1e-9, 1_000_000))
                .collect(),
        };
        let mut member = FamilyMember {
            coeffs_float: fv.clone(),
            coeffs: rationals.clone(),
            assignment: None,
            candidate: None,
            certified: false,
            spurious: false,
        };
        if let Some(coeffs) = rationals {
            let asg = system.index.reconstruct(&coeffs);
            let certified = certify_member(assembly, &asg, sys, params, &cert_cfg)?;
            member.candidate = assembly
                .template
                .as_ref()
                .map(|t| t.build(&asg));
            member.assignment = Some(asg);
            member.certified = certified;
            member.spurious = !certified;
        } else {
            member.spurious = true;
        }
        members.push(member);
    }

    // dimension stability across parameter draws
    let parameter_stable = if opts.parameter_recheck && !sys.domain.param_ranges.is_empty() {
        let mut stable = true;
        for k in 1..=3u64 {
            let alt_params = draw_params(sys, opts.seed.wrapping_add(k * 7919));
            let alt = assemble_linear_system(
                &assembly.conditions,
                space,
                sys,
                &SolveOptions {
                    seed: opts.seed.wrapping_add(k),
                    ..opts.clone()
                },
                &alt_params,
            )?;
            let alt_dim = match &alt.exact_rows {
                Some(rows) => nullspace_exact(rows).len(),
                None => nullspace_f64(&alt.float_rows)?.0.len(),
            };
            if alt_dim != dimension {
                stable = false;
                break;
            }
        }
        Some(stable)
    } else {
        None
    };

    Ok(SolutionFamily {
        dimension,
        members,
        exact: kernel_exact.is_some(),
        diagnostics,
        parameter_stable,
        coefficient_keys: system.index.keys.clone(),
        params: params.clone(),
    })
}

/// External certification: the family's own template residual (total
/// derivative for FI families, Killing residual for tensor searches)
/// evaluated by `is_zero` at fresh points with the solve's parameter draw.
fn certify_member(
    assembly: &FamilyAssembly,
    asg: &Assignment,
    sys: &DynamicalSystem,
    params: &BTreeMap<String, Rational>,
    cfg: &ZeroConfig,
) -> Result<bool, SolveError> {
    let domain = sys.domain.fixing_params(params);
    let points = domain.sample_many(cfg.samples, cfg.seed)?;
    let tester = crate::expr::ZeroTester::new(&domain, cfg.clone());
    let tensors: Vec<SymTensorField> = match &assembly.template {
        Some(t) => t.build(asg).total_derivative_residual(sys),
        None => assembly.conditions.residuals(asg, sys),
    };
    for t in &tensors {
        for c in t.components() {
            if !tester.test_at(c, &points)?.is_zero() {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Finds the coefficient position of `(slot, component, basis)` in a key
/// list; used to build reference vectors in containment checks.
pub fn coefficient_position(
    keys: &[CoefficientKey],
    slot: &str,
    component: &[usize],
    basis: &Expr,
) -> Option<usize> {
    let mut sorted = component.to_vec();
    sorted.sort_unstable();
    keys.iter().position(|k| {
        k.slot == slot && k.component == sorted && &k.basis == basis
    })
}
