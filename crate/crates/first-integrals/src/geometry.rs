//! Totally symmetric tensor fields, symmetric connections, covariant
//! derivatives, curvature, and the generalized Killing tensor residuals.
//!
//! A generalized Killing tensor (KT) of rank `m` for a symmetric connection
//! `Γ^a_bc` is a totally symmetric tensor `T` with vanishing fully
//! symmetrized covariant derivative `T_{(i1...im|im+1)} = 0`. No metric is
//! required; when a kinetic metric is present its Levi-Civita connection is
//! just a special case.

use crate::expr::{
    rat, Domain, EvalError, Expr, Rational, Var, ZeroConfig, ZeroTestError, ZeroTester,
    ZeroVerdict,
};
use num::{BigInt, One};
use std::collections::BTreeMap;
use std::sync::Arc;
use thiserror::Error;

/// Desk-scale bounds; component counts grow combinatorially beyond these.
pub const MAX_DIM: usize = 6;
pub const MAX_RANK: usize = 6;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GeometryError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("dimension {0} exceeds the configured bound {MAX_DIM}")]
    DimensionTooLarge(usize),
    #[error("rank {0} exceeds the configured bound {MAX_RANK}")]
    RankTooLarge(usize),
    #[error("multi-index {0:?} out of range for dimension {1}")]
    IndexOutOfRange(Vec<usize>, usize),
    #[error("the metric is singular (zero determinant expression)")]
    SingularMetric,
    #[error("a system needs a metric for this operation")]
    NoMetric,
    #[error(transparent)]
    ZeroTest(#[from] ZeroTestError),
}

/// All nondecreasing multi-indices of the given rank over `0..dim`, in
/// lexicographic order. Rank 0 yields the single empty index.
pub fn multi_indices(dim: usize, rank: usize) -> Vec<Vec<usize>> {
    if rank == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    let mut cur = vec![0usize; rank];
    loop {
        out.push(cur.clone());
        let mut k = rank;
        loop {
            if k == 0 {
                return out;
            }
            k -= 1;
            if cur[k] + 1 < dim {
                let v = cur[k] + 1;
                for slot in cur.iter_mut().skip(k) {
                    *slot = v;
                }
                break;
            }
        }
    }
}

/// C(dim + rank - 1, rank): number of independent components.
pub fn component_count(dim: usize, rank: usize) -> usize {
    let mut num = 1usize;
    let mut den = 1usize;
    for i in 0..rank {
        num *= dim + i;
        den *= i + 1;
    }
    num / den
}

fn factorial(n: usize) -> u64 {
    (1..=n as u64).product::<u64>().max(1)
}

/// Number of distinct permutations of a nondecreasing multi-index.
pub fn multiplicity(idx: &[usize]) -> u64 {
    let total = factorial(idx.len());
    let mut denom = 1u64;
    let mut run = 1usize;
    for i in 1..=idx.len() {
        if i < idx.len() && idx[i] == idx[i - 1] {
            run += 1;
        } else {
            denom *= factorial(run);
            run = 1;
        }
    }
    total / denom
}

/// Totally symmetric tensor field of fixed rank with [`Expr`] components,
/// stored once per nondecreasing multi-index. Rank 0 is a single scalar.
#[derive(Debug, Clone, PartialEq)]
pub struct SymTensorField {
    dim: usize,
    rank: usize,
    index: Arc<Vec<Vec<usize>>>,
    comps: Vec<Expr>,
}

impl SymTensorField {
    pub fn zeros(dim: usize, rank: usize) -> Self {
        let index = Arc::new(multi_indices(dim, rank));
        let comps = vec![Expr::zero(); index.len()];
        SymTensorField {
            dim,
            rank,
            index,
            comps,
        }
    }

    pub fn scalar(dim: usize, value: Expr) -> Self {
        SymTensorField {
            dim,
            rank: 0,
            index: Arc::new(multi_indices(dim, 0)),
            comps: vec![value],
        }
    }

    /// Builds componentwise from a function of the nondecreasing multi-index.
    pub fn from_fn(dim: usize, rank: usize, mut f: impl FnMut(&[usize]) -> Expr) -> Self {
        let index = Arc::new(multi_indices(dim, rank));
        let comps = index.iter().map(|ix| f(ix)).collect();
        SymTensorField {
            dim,
            rank,
            index,
            comps,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    /// The nondecreasing multi-indices in storage (lexicographic) order.
    pub fn indices(&self) -> &[Vec<usize>] {
        &self.index
    }

    pub fn components(&self) -> &[Expr] {
        &self.comps
    }

    fn position(&self, sorted: &[usize]) -> usize {
        self.index
            .binary_search_by(|probe| probe.as_slice().cmp(sorted))
            .unwrap_or_else(|_| panic!("index {sorted:?} out of range for dim {}", self.dim))
    }

    /// Component lookup; any permutation of the same indices returns the
    /// identical expression.
    pub fn get(&self, idx: &[usize]) -> &Expr {
        debug_assert_eq!(idx.len(), self.rank);
        let mut sorted: Vec<usize> = idx.to_vec();
        sorted.sort_unstable();
        &self.comps[self.position(&sorted)]
    }

    pub fn set(&mut self, idx: &[usize], value: Expr) {
        let mut sorted: Vec<usize> = idx.to_vec();
        sorted.sort_unstable();
        let p = self.position(&sorted);
        self.comps[p] = value;
    }

    pub fn scalar_value(&self) -> &Expr {
        debug_assert_eq!(self.rank, 0);
        &self.comps[0]
    }

    pub fn map(&self, f: impl Fn(&Expr) -> Expr) -> Self {
        SymTensorField {
            dim: self.dim,
            rank: self.rank,
            index: Arc::clone(&self.index),
            comps: self.comps.iter().map(f).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.rank, other.rank);
        assert_eq!(self.dim, other.dim);
        SymTensorField {
            dim: self.dim,
            rank: self.rank,
            index: Arc::clone(&self.index),
            comps: self
                .comps
                .iter()
                .zip(&other.comps)
                .map(|(a, b)| Expr::add2(a.clone(), b.clone()))
                .collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale_rat(rat(-1, 1)))
    }

    pub fn scale_rat(&self, r: Rational) -> Self {
        self.map(|e| e.clone().scale(r.clone()))
    }

    pub fn scale_expr(&self, s: &Expr) -> Self {
        self.map(|e| Expr::mul2(s.clone(), e.clone()))
    }

    pub fn is_structurally_zero(&self) -> bool {
        self.comps.iter().all(|c| c.is_literal_zero())
    }

    /// Contraction with a vector over one symmetric slot:
    /// `(T·V)_{i1...i_{r-1}} = T_{i1...i_{r-1} a} V^a`.
    pub fn contract_with_vector(&self, v: &SymTensorField) -> Self {
        assert!(self.rank >= 1);
        assert_eq!(v.rank(), 1);
        assert_eq!(self.dim, v.dim());
        SymTensorField::from_fn(self.dim, self.rank - 1, |idx| {
            let mut full = idx.to_vec();
            full.push(0);
            Expr::add((0..self.dim).map(|a| {
                *full.last_mut().unwrap() = a;
                Expr::mul2(self.get(&full).clone(), v.get(&[a]).clone())
            }))
        })
    }

    /// Componentwise partial derivative.
    pub fn partial(&self, wrt: Var) -> Self {
        self.map(|e| e.differentiate(wrt))
    }

    pub fn subst_param(&self, name: &str, value: &Expr) -> Self {
        self.map(|e| e.subst_param(name, value))
    }

    pub fn permute_coords(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.dim);
        let src = self.clone();
        SymTensorField::from_fn(self.dim, self.rank, |idx| {
            // new component at idx = old component at perm^{-1}(idx),
            // relabeled by perm
            let pre: Vec<usize> = idx
                .iter()
                .map(|&i| perm.iter().position(|&p| p == i).unwrap())
                .collect();
            src.get(&pre).permute_coords(perm)
        })
    }
}

/// Covariant derivative of a symmetric rank-r field: symmetric in the first
/// r slots, with the derivative slot kept distinguished so both full
/// symmetrization and antisymmetrization over a pair can be formed from it.
#[derive(Debug, Clone)]
pub struct CovDerivative {
    dim: usize,
    base_rank: usize,
    index: Arc<Vec<Vec<usize>>>,
    /// comps[sym_position * dim + j]
    comps: Vec<Expr>,
}

impl CovDerivative {
    pub fn base_rank(&self) -> usize {
        self.base_rank
    }

    pub fn get(&self, base_idx: &[usize], j: usize) -> &Expr {
        let mut sorted = base_idx.to_vec();
        sorted.sort_unstable();
        let p = self
            .index
            .binary_search_by(|probe| probe.as_slice().cmp(sorted.as_slice()))
            .expect("index in range");
        &self.comps[p * self.dim + j]
    }
}

/// Symmetric connection coefficients `Γ^a_bc = Γ^a_cb`, stored for `b <= c`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricConnection {
    dim: usize,
    pairs: Arc<Vec<Vec<usize>>>,
    /// comps[a * pairs.len() + pair_position]
    comps: Vec<Expr>,
}

impl SymmetricConnection {
    pub fn flat(dim: usize) -> Self {
        let pairs = Arc::new(multi_indices(dim, 2));
        SymmetricConnection {
            dim,
            comps: vec![Expr::zero(); dim * pairs.len()],
            pairs,
        }
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize, usize) -> Expr) -> Self {
        let pairs = Arc::new(multi_indices(dim, 2));
        let mut comps = Vec::with_capacity(dim * pairs.len());
        for a in 0..dim {
            for bc in pairs.iter() {
                comps.push(f(a, bc[0], bc[1]));
            }
        }
        SymmetricConnection { dim, pairs, comps }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn pair_position(&self, b: usize, c: usize) -> usize {
        let (b, c) = if b <= c { (b, c) } else { (c, b) };
        self.pairs
            .binary_search_by(|probe| probe.as_slice().cmp([b, c].as_slice()))
            .expect("pair in range")
    }

    /// `Γ^a_bc`; `b` and `c` commute by storage.
    pub fn gamma(&self, a: usize, b: usize, c: usize) -> &Expr {
        let p = self.pair_position(b, c);
        &self.comps[a * self.pairs.len() + p]
    }

    pub fn set_gamma(&mut self, a: usize, b: usize, c: usize, value: Expr) {
        let p = self.pair_position(b, c);
        self.comps[a * self.pairs.len() + p] = value;
    }

    pub fn subst_param(&self, name: &str, value: &Expr) -> Self {
        SymmetricConnection {
            dim: self.dim,
            pairs: Arc::clone(&self.pairs),
            comps: self
                .comps
                .iter()
                .map(|e| e.subst_param(name, value))
                .collect(),
        }
    }

    pub fn permute_coords(&self, perm: &[usize]) -> Self {
        let inv: Vec<usize> = (0..self.dim)
            .map(|i| perm.iter().position(|&p| p == i).unwrap())
            .collect();
        SymmetricConnection::from_fn(self.dim, |a, b, c| {
            self.gamma(inv[a], inv[b], inv[c]).permute_coords(perm)
        })
    }
}

/// Covariant derivative with respect to the connection:
/// `T_{i1...ir|j} = ∂_j T_{i1...ir} - Σ_k Γ^s_{j i_k} T_{i1...s...ir}`.
pub fn cov_derivative(t: &SymTensorField, conn: &SymmetricConnection) -> CovDerivative {
    assert_eq!(t.dim(), conn.dim());
    let dim = t.dim();
    let index = Arc::new(multi_indices(dim, t.rank()));
    let mut comps = Vec::with_capacity(index.len() * dim);
    for base in index.iter() {
        for j in 0..dim {
            let mut terms = vec![t.get(base).differentiate(Var::Coord(j))];
            for (k, &ik) in base.iter().enumerate() {
                for s in 0..dim {
                    let g = conn.gamma(s, j, ik);
                    if g.is_literal_zero() {
                        continue;
                    }
                    let mut swapped = base.clone();
                    swapped[k] = s;
                    let c = t.get(&swapped);
                    if c.is_literal_zero() {
                        continue;
                    }
                    terms.push(Expr::mul([Expr::int(-1), g.clone(), c.clone()]));
                }
            }
            comps.push(Expr::add(terms));
        }
    }
    CovDerivative {
        dim,
        base_rank: t.rank(),
        index,
        comps,
    }
}

/// Fully symmetrized covariant derivative `T_{(i1...ir|ir+1)}`: the average
/// over the `r+1` placements of the derivative index.
pub fn symmetrized_derivative(t: &SymTensorField, conn: &SymmetricConnection) -> SymTensorField {
    let d = cov_derivative(t, conn);
    let rank = t.rank() + 1;
    let weight = Rational::new(BigInt::one(), BigInt::from(rank));
    SymTensorField::from_fn(t.dim(), rank, |idx| {
        let mut terms = Vec::with_capacity(rank);
        let mut rest = Vec::with_capacity(rank - 1);
        for k in 0..rank {
            rest.clear();
            for (i, &v) in idx.iter().enumerate() {
                if i != k {
                    rest.push(v);
                }
            }
            terms.push(d.get(&rest, idx[k]).clone());
        }
        Expr::add(terms).scale(weight.clone())
    })
}

/// Killing-tensor residual: `T` is a generalized KT iff this vanishes.
pub fn kt_residual(t: &SymTensorField, conn: &SymmetricConnection) -> SymTensorField {
    symmetrized_derivative(t, conn)
}

/// Residual for reducible KTs generated by a vector: the KT residual of
/// `B_{(a|b)}`.
pub fn reducible_kt_residual(b: &SymTensorField, conn: &SymmetricConnection) -> SymTensorField {
    assert_eq!(b.rank(), 1);
    let bsym = symmetrized_derivative(b, conn);
    symmetrized_derivative(&bsym, conn)
}

/// Curvature tensor of a symmetric connection, all `N^4` components:
/// `R^a_bcd = Γ^a_bd,c - Γ^a_bc,d + Γ^a_sc Γ^s_bd - Γ^a_sd Γ^s_bc`.
#[derive(Debug, Clone)]
pub struct Curvature {
    dim: usize,
    comps: Vec<Expr>,
}

impl Curvature {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, a: usize, b: usize, c: usize, d: usize) -> &Expr {
        let n = self.dim;
        &self.comps[((a * n + b) * n + c) * n + d]
    }
}

pub fn curvature(conn: &SymmetricConnection) -> Curvature {
    let n = conn.dim();
    let mut comps = Vec::with_capacity(n * n * n * n);
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                for d in 0..n {
                    let mut terms = vec![
                        conn.gamma(a, b, d).differentiate(Var::Coord(c)),
                        Expr::neg(conn.gamma(a, b, c).differentiate(Var::Coord(d))),
                    ];
                    for s in 0..n {
                        terms.push(Expr::mul2(
                            conn.gamma(a, s, c).clone(),
                            conn.gamma(s, b, d).clone(),
                        ));
                        terms.push(Expr::neg(Expr::mul2(
                            conn.gamma(a, s, d).clone(),
                            conn.gamma(s, b, c).clone(),
                        )));
                    }
                    comps.push(Expr::add(terms));
                }
            }
        }
    }
    Curvature { dim: n, comps }
}

/// Symbolic inverse of a rank-2 symmetric tensor via the adjugate; fine for
/// the desk-scale dimensions this crate allows.
pub fn inverse_metric(g: &SymTensorField) -> Result<Vec<Vec<Expr>>, GeometryError> {
    assert_eq!(g.rank(), 2);
    let n = g.dim();
    let full: Vec<Vec<Expr>> = (0..n)
        .map(|i| (0..n).map(|j| g.get(&[i, j]).clone()).collect())
        .collect();
    let det = determinant(&full);
    if det.is_literal_zero() {
        return Err(GeometryError::SingularMetric);
    }
    let inv_det = Expr::powi(det, -1);
    let mut out = vec![vec![Expr::zero(); n]; n];
    #[allow(clippy::needless_range_loop)]
    for i in 0..n {
        for j in 0..n {
            let minor = minor_matrix(&full, j, i);
            let sign = if (i + j) % 2 == 0 { 1 } else { -1 };
            out[i][j] = Expr::mul([Expr::int(sign), determinant(&minor), inv_det.clone()]);
        }
    }
    Ok(out)
}

fn minor_matrix(m: &[Vec<Expr>], row: usize, col: usize) -> Vec<Vec<Expr>> {
    m.iter()
        .enumerate()
        .filter(|(i, _)| *i != row)
        .map(|(_, r)| {
            r.iter()
                .enumerate()
                .filter(|(j, _)| *j != col)
                .map(|(_, e)| e.clone())
                .collect()
        })
        .collect()
}

fn determinant(m: &[Vec<Expr>]) -> Expr {
    let n = m.len();
    if n == 0 {
        return Expr::one();
    }
    if n == 1 {
        return m[0][0].clone();
    }
    let mut terms = Vec::with_capacity(n);
    for j in 0..n {
        if m[0][j].is_literal_zero() {
            continue;
        }
        let minor = minor_matrix(m, 0, j);
        let sign = if j % 2 == 0 { 1 } else { -1 };
        terms.push(Expr::mul([
            Expr::int(sign),
            m[0][j].clone(),
            determinant(&minor),
        ]));
    }
    Expr::add(terms)
}

/// Levi-Civita connection of a metric:
/// `Γ^a_bc = 1/2 g^{ad} (g_db,c + g_dc,b - g_bc,d)`.
pub fn levi_civita(g: &SymTensorField) -> Result<SymmetricConnection, GeometryError> {
    let n = g.dim();
    let ginv = inverse_metric(g)?;
    Ok(SymmetricConnection::from_fn(n, |a, b, c| {
        let mut terms = Vec::new();
        for d in 0..n {
            if ginv[a][d].is_literal_zero() {
                continue;
            }
            let bracket = Expr::add([
                g.get(&[d, b]).differentiate(Var::Coord(c)),
                g.get(&[d, c]).differentiate(Var::Coord(b)),
                Expr::neg(g.get(&[b, c]).differentiate(Var::Coord(d))),
            ]);
            terms.push(Expr::mul2(ginv[a][d].clone(), bracket));
        }
        Expr::add(terms).scale(rat(1, 2))
    }))
}

/// Declared free- and fixed-parameter sets of a system.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    pub fixed: BTreeMap<String, Rational>,
    pub free: Vec<String>,
}

/// An autonomous holonomic dynamical system
/// `q̈^a = -Γ^a_bc q̇^b q̇^c - Q^a(q)` with its sampling domain.
#[derive(Debug, Clone)]
pub struct DynamicalSystem {
    pub dim: usize,
    pub coord_names: Vec<String>,
    pub connection: SymmetricConnection,
    /// Force vector `Q^a` (the generalized forces are `-Q^a`).
    pub forces: SymTensorField,
    /// Optional kinetic metric; when present the connection is Levi-Civita.
    pub metric: Option<SymTensorField>,
    pub domain: Domain,
    pub params: ParamSet,
}

impl DynamicalSystem {
    pub fn new(
        coord_names: Vec<String>,
        connection: SymmetricConnection,
        forces: SymTensorField,
        domain: Domain,
    ) -> Result<Self, GeometryError> {
        let dim = connection.dim();
        if dim > MAX_DIM {
            return Err(GeometryError::DimensionTooLarge(dim));
        }
        if forces.dim() != dim {
            return Err(GeometryError::DimensionMismatch {
                left: dim,
                right: forces.dim(),
            });
        }
        assert_eq!(forces.rank(), 1, "forces must be a rank-1 field");
        assert_eq!(coord_names.len(), dim);
        Ok(DynamicalSystem {
            dim,
            coord_names,
            connection,
            forces,
            metric: None,
            domain,
            params: ParamSet::default(),
        })
    }

    /// Builds a Riemannian system: the connection is derived from the metric.
    pub fn from_metric(
        coord_names: Vec<String>,
        metric: SymTensorField,
        forces: SymTensorField,
        domain: Domain,
    ) -> Result<Self, GeometryError> {
        let conn = levi_civita(&metric)?;
        let mut sys = DynamicalSystem::new(coord_names, conn, forces, domain)?;
        sys.metric = Some(metric);
        Ok(sys)
    }

    pub fn with_params(mut self, params: ParamSet) -> Self {
        self.params = params;
        self
    }

    /// f64 values for all fixed parameters plus a supplied assignment of the
    /// free ones.
    pub fn param_values(
        &self,
        free: &BTreeMap<String, f64>,
    ) -> Result<BTreeMap<String, f64>, EvalError> {
        let mut out: BTreeMap<String, f64> = self
            .params
            .fixed
            .iter()
            .map(|(k, v)| (k.clone(), crate::expr::rational_to_f64(v)))
            .collect();
        for name in &self.params.free {
            let v = free
                .get(name)
                .ok_or_else(|| EvalError::UnassignedParam(name.clone()))?;
            out.insert(name.clone(), *v);
        }
        Ok(out)
    }

    /// Metricity residual `g_{ab|c}`; vanishes for the Levi-Civita pairing.
    pub fn metricity_residual(&self) -> Result<Vec<Expr>, GeometryError> {
        let g = self.metric.as_ref().ok_or(GeometryError::NoMetric)?;
        let d = cov_derivative(g, &self.connection);
        let mut out = Vec::new();
        for ab in multi_indices(self.dim, 2) {
            for c in 0..self.dim {
                out.push(d.get(&ab, c).clone());
            }
        }
        Ok(out)
    }

    /// Checks under `is_zero` that the stored connection is the Levi-Civita
    /// connection of the stored metric.
    pub fn check_levi_civita(&self, cfg: ZeroConfig) -> Result<bool, GeometryError> {
        let g = self.metric.as_ref().ok_or(GeometryError::NoMetric)?;
        let derived = levi_civita(g)?;
        let tester = ZeroTester::new(&self.domain, cfg);
        let points = self
            .domain
            .sample_many(tester.config.samples, tester.config.seed)
            .map_err(ZeroTestError::from)?;
        for a in 0..self.dim {
            for bc in multi_indices(self.dim, 2) {
                let diff = Expr::sub(
                    self.connection.gamma(a, bc[0], bc[1]).clone(),
                    derived.gamma(a, bc[0], bc[1]).clone(),
                );
                if !tester
                    .test_at(&diff, &points)
                    .map_err(GeometryError::from)?
                    .is_zero()
                {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }

    /// Substitutes values for (some) free parameters everywhere in the system.
    pub fn substitute_params(&self, values: &BTreeMap<String, Rational>) -> DynamicalSystem {
        let mut sys = self.clone();
        for (name, v) in values {
            let e = Expr::rational(v.clone());
            sys.connection = sys.connection.subst_param(name, &e);
            sys.forces = sys.forces.subst_param(name, &e);
            sys.metric = sys.metric.map(|m| m.subst_param(name, &e));
            sys.params.free.retain(|p| p != name);
            sys.params.fixed.insert(name.clone(), v.clone());
            sys.domain = sys
                .domain
                .fixing_params(&[(name.clone(), v.clone())].into_iter().collect());
            sys.domain.constraints = sys
                .domain
                .constraints
                .iter()
                .map(|c| c.subst_param(name, &e))
                .collect();
        }
        sys
    }

    /// Relabels coordinates by the permutation `perm` (new index of each old
    /// coordinate). Works on the connection, forces, metric, names and boxes.
    pub fn permute_coords(&self, perm: &[usize]) -> DynamicalSystem {
        assert_eq!(perm.len(), self.dim);
        let mut names = vec![String::new(); self.dim];
        let mut boxes = vec![(rat(0, 1), rat(1, 1)); self.dim];
        for (old, &new) in perm.iter().enumerate() {
            names[new] = self.coord_names[old].clone();
            boxes[new] = self.domain.coord_boxes[old].clone();
        }
        let mut domain = self.domain.clone();
        domain.coord_boxes = boxes;
        domain.constraints = domain
            .constraints
            .iter()
            .map(|c| c.permute_coords(perm))
            .collect();
        DynamicalSystem {
            dim: self.dim,
            coord_names: names,
            connection: self.connection.permute_coords(perm),
            forces: self.forces.permute_coords(perm),
            metric: self.metric.as_ref().map(|m| m.permute_coords(perm)),
            domain,
            params: self.params.clone(),
        }
    }

    /// A tester over this system's own domain.
    pub fn zero_tester(&self, cfg: ZeroConfig) -> ZeroTester<'_> {
        ZeroTester::new(&self.domain, cfg)
    }

    /// `is_zero` across all components of a tensor field, returning the
    /// first witness if any.
    pub fn tensor_is_zero(
        &self,
        t: &SymTensorField,
        cfg: ZeroConfig,
    ) -> Result<ZeroVerdict, ZeroTestError> {
        let tester = self.zero_tester(cfg);
        let points = self
            .domain
            .sample_many(tester.config.samples, tester.config.seed)?;
        for c in t.components() {
            match tester.test_at(c, &points)? {
                ZeroVerdict::Zero => continue,
                nz => return Ok(nz),
            }
        }
        Ok(ZeroVerdict::Zero)
    }
}

/// Antisymmetrized covariant derivative of a rank-1 field:
/// `V_{[i1|i2]} = (V_{i1|i2} - V_{i2|i1}) / 2`, returned as a full matrix.
pub fn antisym_cov_derivative(v: &SymTensorField, conn: &SymmetricConnection) -> Vec<Vec<Expr>> {
    assert_eq!(v.rank(), 1);
    let n = v.dim();
    let d = cov_derivative(v, conn);
    let mut out = vec![vec![Expr::zero(); n]; n];
    #[allow(clippy::needless_range_loop)]
    for i in 0..n {
        for j in 0..n {
            out[i][j] = Expr::sub(d.get(&[i], j).clone(), d.get(&[j], i).clone()).scale(rat(1, 2));
        }
    }
    out
}

/// Checks the dimension/rank bounds before building large tensors.
pub fn check_bounds(dim: usize, rank: usize) -> Result<(), GeometryError> {
    if dim > MAX_DIM {
        return Err(GeometryError::DimensionTooLarge(dim));
    }
    if rank > MAX_RANK {
        return Err(GeometryError::RankTooLarge(rank));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse, ParseContext};

    fn expr(text: &str, coords: &[&str]) -> Expr {
        parse(text, &ParseContext::new(coords)).unwrap()
    }

    /// The non-Riemannian connection of the two-dimensional test system:
    /// Γ^1_11 = Γ^2_12 = -8βw/u³, Γ^1_12 = Γ^2_22 = 4β/u², others zero.
    fn app1_connection() -> SymmetricConnection {
        let c = |t: &str| expr(t, &["u", "w"]);
        let mut conn = SymmetricConnection::flat(2);
        conn.set_gamma(0, 0, 0, c("-8*beta*w/u^3"));
        conn.set_gamma(0, 0, 1, c("4*beta/u^2"));
        conn.set_gamma(1, 0, 1, c("-8*beta*w/u^3"));
        conn.set_gamma(1, 1, 1, c("4*beta/u^2"));
        conn
    }

    fn app1_domain() -> Domain {
        Domain {
            coord_boxes: vec![(rat(5, 2), rat(4, 1)), (rat(1, 2), rat(2, 1))],
            time_range: (rat(0, 1), rat(1, 1)),
            param_ranges: [("beta".to_string(), (rat(1, 3), rat(2, 1)))].into(),
            fixed_params: BTreeMap::new(),
            constraints: vec![expr("u", &["u", "w"])],
        }
    }

    fn app1_kt() -> SymTensorField {
        let mut t = SymTensorField::zeros(2, 2);
        t.set(&[0, 1], expr("exp(12*beta*w/u^2)", &["u", "w"]));
        t
    }

    #[test]
    fn component_counts() {
        assert_eq!(component_count(2, 0), 1);
        assert_eq!(component_count(2, 2), 3);
        assert_eq!(component_count(2, 3), 4);
        assert_eq!(component_count(3, 2), 6);
        assert_eq!(component_count(6, 6), 462);
        assert_eq!(multi_indices(3, 2).len(), 6);
        assert_eq!(multi_indices(2, 0).len(), 1);
    }

    #[test]
    fn storage_is_permutation_invariant() {
        let mut t = SymTensorField::zeros(3, 2);
        t.set(&[2, 1], Expr::coord(0));
        assert_eq!(t.get(&[1, 2]), t.get(&[2, 1]));
        assert_eq!(t.get(&[1, 2]), &Expr::coord(0));
    }

    #[test]
    fn multiplicities() {
        assert_eq!(multiplicity(&[0, 0, 0]), 1);
        assert_eq!(multiplicity(&[0, 0, 1]), 3);
        assert_eq!(multiplicity(&[0, 1, 2]), 6);
        assert_eq!(multiplicity(&[]), 1);
    }

    #[test]
    fn scalar_cov_derivative_is_partial() {
        let conn = app1_connection();
        let g = SymTensorField::scalar(2, expr("u^2*w", &["u", "w"]));
        let d = cov_derivative(&g, &conn);
        assert_eq!(d.get(&[], 0), &expr("2*u*w", &["u", "w"]));
        assert_eq!(d.get(&[], 1), &expr("u^2", &["u", "w"]));
    }

    #[test]
    fn flat_cov_derivative_is_pure_partial() {
        let conn = SymmetricConnection::flat(2);
        let mut t = SymTensorField::zeros(2, 2);
        t.set(&[0, 0], expr("x^3*y", &["x", "y"]));
        let d = cov_derivative(&t, &conn);
        assert_eq!(d.get(&[0, 0], 0), &expr("3*x^2*y", &["x", "y"]));
    }

    #[test]
    fn app1_curvature_components() {
        let conn = app1_connection();
        let r = curvature(&conn);
        let dom = app1_domain();
        let tester = ZeroTester::new(&dom, ZeroConfig::default());
        let c = |t: &str| expr(t, &["u", "w"]);
        let checks = [
            (r.get(0, 0, 0, 1).clone(), c("-32*beta^2*w/u^5")),
            (r.get(1, 1, 1, 0).clone(), c("-32*beta^2*w/u^5")),
            (r.get(1, 1, 0, 1).clone(), c("32*beta^2*w/u^5")),
            (r.get(0, 0, 1, 0).clone(), c("32*beta^2*w/u^5")),
            (r.get(1, 0, 0, 1).clone(), c("24*beta*w/u^4")),
            (r.get(1, 0, 1, 0).clone(), c("-24*beta*w/u^4")),
        ];
        for (got, want) in checks {
            let diff = Expr::sub(got, want);
            assert!(tester.test(&diff).unwrap().is_zero(), "diff = {diff:?}");
        }
    }

    #[test]
    fn flat_curvature_vanishes() {
        let r = curvature(&SymmetricConnection::flat(3));
        for a in 0..3 {
            for b in 0..3 {
                for c in 0..3 {
                    for d in 0..3 {
                        assert!(r.get(a, b, c, d).is_literal_zero());
                    }
                }
            }
        }
    }

    #[test]
    fn curvature_antisymmetry_is_structural() {
        // R^a_b(cd) = 0 must hold identically for any symmetric connection;
        // try a random polynomial one.
        let c = |t: &str| expr(t, &["x", "y"]);
        let mut conn = SymmetricConnection::flat(2);
        conn.set_gamma(0, 0, 0, c("x^2 - 3*y"));
        conn.set_gamma(0, 0, 1, c("x*y"));
        conn.set_gamma(0, 1, 1, c("y^2 + 1/2"));
        conn.set_gamma(1, 0, 0, c("2*x + y"));
        conn.set_gamma(1, 0, 1, c("x - y^3"));
        conn.set_gamma(1, 1, 1, c("x*y + 7"));
        let r = curvature(&conn);
        for a in 0..2 {
            for b in 0..2 {
                for cc in 0..2 {
                    for d in 0..2 {
                        let sum =
                            Expr::add2(r.get(a, b, cc, d).clone(), r.get(a, b, d, cc).clone());
                        assert!(sum.is_literal_zero(), "a={a} b={b} c={cc} d={d}");
                    }
                }
            }
        }
    }

    #[test]
    fn app1_kt_residual_vanishes() {
        let conn = app1_connection();
        let t = app1_kt();
        let resid = kt_residual(&t, &conn);
        let dom = app1_domain();
        let tester = ZeroTester::new(&dom, ZeroConfig::default());
        for comp in resid.components() {
            assert!(tester.test(comp).unwrap().is_zero(), "resid = {comp:?}");
        }
    }

    #[test]
    fn perturbed_kt_residual_has_witness() {
        let conn = app1_connection();
        let mut t = app1_kt();
        t.set(&[0, 0], Expr::one()); // C_ab + diag(1, 0)
        let resid = kt_residual(&t, &conn);
        let dom = app1_domain();
        let tester = ZeroTester::new(&dom, ZeroConfig::default());
        let any_nonzero = resid
            .components()
            .iter()
            .any(|c| !tester.test(c).unwrap().is_zero());
        assert!(any_nonzero);
    }

    #[test]
    fn constant_tensor_is_flat_kt() {
        let conn = SymmetricConnection::flat(2);
        let mut t = SymTensorField::zeros(2, 2);
        t.set(&[0, 0], Expr::int(3));
        t.set(&[0, 1], Expr::rat(-1, 2));
        t.set(&[1, 1], Expr::int(5));
        assert!(kt_residual(&t, &conn).is_structurally_zero());
    }

    #[test]
    fn symmetrized_gradient_rank1_flat() {
        // L_a with flat Γ: result is (∂_a L_b + ∂_b L_a)/2
        let conn = SymmetricConnection::flat(2);
        let mut l = SymTensorField::zeros(2, 1);
        l.set(&[0], expr("x*y", &["x", "y"]));
        l.set(&[1], expr("x^2", &["x", "y"]));
        let s = symmetrized_derivative(&l, &conn);
        assert_eq!(s.get(&[0, 0]), &expr("y", &["x", "y"]));
        // (∂_x x^2 + ∂_y x*y)/2 = (2x + x)/2 = 3/2 x
        assert_eq!(s.get(&[0, 1]), &expr("3/2*x", &["x", "y"]));
        assert_eq!(s.get(&[1, 1]), &Expr::zero());
    }

    /// Brute-force oracle: symmetrization as an explicit average over all
    /// (r+1)! permutations of the covariant-derivative component table.
    fn sym_deriv_brute(t: &SymTensorField, conn: &SymmetricConnection) -> SymTensorField {
        let d = cov_derivative(t, conn);
        let rank = t.rank() + 1;
        SymTensorField::from_fn(t.dim(), rank, |idx| {
            let perms = permutations(idx);
            let k = perms.len() as i64;
            let terms: Vec<Expr> = perms
                .into_iter()
                .map(|p| {
                    let (body, last) = p.split_at(rank - 1);
                    d.get(body, last[0]).clone()
                })
                .collect();
            Expr::div(Expr::add(terms), Expr::int(k))
        })
    }

    fn permutations(idx: &[usize]) -> Vec<Vec<usize>> {
        if idx.is_empty() {
            return vec![Vec::new()];
        }
        let mut out = Vec::new();
        for i in 0..idx.len() {
            let mut rest = idx.to_vec();
            let v = rest.remove(i);
            for mut p in permutations(&rest) {
                p.push(v);
                out.push(p);
            }
        }
        out
    }

    #[test]
    fn symmetrized_derivative_matches_permutation_oracle() {
        // polynomial tensors over a polynomial connection, r <= 3, N = 3
        let names = ["x", "y", "z"];
        let c = |t: &str| expr(t, &names);
        let mut conn = SymmetricConnection::flat(3);
        conn.set_gamma(0, 0, 1, c("x - y"));
        conn.set_gamma(1, 1, 2, c("z^2"));
        conn.set_gamma(2, 0, 0, c("x*y*z"));
        conn.set_gamma(0, 2, 2, c("y + 2"));
        let polys = [
            "x^2*y - z",
            "y^3 + x*z",
            "x - 2*y + 3*z",
            "z^2*x",
            "x*y + y*z",
            "7/3*x^2 - z^3",
            "x + 1",
            "y*z - x^2",
            "2*z - y^2",
            "x^3 - y*x",
        ];
        let dom = Domain::unit(3);
        let tester = ZeroTester::new(&dom, ZeroConfig::default());
        let mut pi = 0usize;
        for rank in 1..=3usize {
            let t = SymTensorField::from_fn(3, rank, |_| {
                pi += 1;
                c(polys[pi % polys.len()])
            });
            let fast = symmetrized_derivative(&t, &conn);
            let slow = sym_deriv_brute(&t, &conn);
            for (a, b) in fast.components().iter().zip(slow.components()) {
                let diff = Expr::sub(a.clone(), b.clone());
                assert!(tester.test(&diff).unwrap().is_zero(), "rank {rank}");
            }
        }
    }

    #[test]
    fn cov_derivative_is_linear() {
        let conn = app1_connection();
        let c = |t: &str| expr(t, &["u", "w"]);
        let t1 = SymTensorField::from_fn(2, 2, |_| c("u*w"));
        let mut t2 = SymTensorField::zeros(2, 2);
        t2.set(&[0, 1], c("u^2"));
        t2.set(&[1, 1], c("w"));
        let combo = t1.scale_rat(rat(2, 3)).add(&t2.scale_rat(rat(-5, 1)));
        let lhs = kt_residual(&combo, &conn);
        let rhs = kt_residual(&t1, &conn)
            .scale_rat(rat(2, 3))
            .add(&kt_residual(&t2, &conn).scale_rat(rat(-5, 1)));
        let dom = app1_domain();
        let tester = ZeroTester::new(&dom, ZeroConfig::default());
        for (a, b) in lhs.components().iter().zip(rhs.components()) {
            let diff = Expr::sub(a.clone(), b.clone());
            assert!(tester.test(&diff).unwrap().is_zero());
        }
    }

    #[test]
    fn polar_metric_is_flat_and_metric_compatible() {
        // Euclidean metric in polar coordinates: g = diag(1, rho^2)
        let names = ["rho", "phi"];
        let mut g = SymTensorField::zeros(2, 2);
        g.set(&[0, 0], Expr::one());
        g.set(&[1, 1], expr("rho^2", &names));
        let conn = levi_civita(&g).unwrap();
        // Γ^1_22 = -rho, Γ^2_12 = 1/rho
        assert_eq!(conn.gamma(0, 1, 1), &expr("-rho", &names));
        assert_eq!(conn.gamma(1, 0, 1), &expr("1/rho", &names));
        let r = curvature(&conn);
        let dom = Domain::unit(2);
        let tester = ZeroTester::new(&dom, ZeroConfig::default());
        for a in 0..2 {
            for b in 0..2 {
                for cc in 0..2 {
                    for d in 0..2 {
                        assert!(tester.test(r.get(a, b, cc, d)).unwrap().is_zero());
                    }
                }
            }
        }
        let sys = DynamicalSystem::from_metric(
            names.iter().map(|s| s.to_string()).collect(),
            g,
            SymTensorField::zeros(2, 1),
            Domain::unit(2),
        )
        .unwrap();
        for e in sys.metricity_residual().unwrap() {
            assert!(tester.test(&e).unwrap().is_zero());
        }
        assert!(sys.check_levi_civita(ZeroConfig::default()).unwrap());
    }

    #[test]
    fn first_bianchi_for_metric_connection() {
        // R^a_(bcd) = 0 at random points for a curved metric
        let names = ["x", "y"];
        let mut g = SymTensorField::zeros(2, 2);
        g.set(&[0, 0], expr("1 + x^2", &names));
        g.set(&[1, 1], expr("1 + y^2 + x^2", &names));
        g.set(&[0, 1], expr("x*y/2", &names));
        let conn = levi_civita(&g).unwrap();
        let r = curvature(&conn);
        let dom = Domain::unit(2);
        let tester = ZeroTester::new(&dom, ZeroConfig::default());
        for a in 0..2 {
            for idx in multi_indices(2, 3) {
                let (b, c, d) = (idx[0], idx[1], idx[2]);
                let perms = [
                    (b, c, d),
                    (b, d, c),
                    (c, b, d),
                    (c, d, b),
                    (d, b, c),
                    (d, c, b),
                ];
                let sum =
                    Expr::add(perms.iter().map(|&(x1, x2, x3)| r.get(a, x1, x2, x3).clone()));
                assert!(tester.test(&sum).unwrap().is_zero());
            }
        }
    }

    #[test]
    fn reducible_kt_of_constant_vector_flat() {
        let conn = SymmetricConnection::flat(2);
        let mut b = SymTensorField::zeros(2, 1);
        b.set(&[0], Expr::int(2));
        b.set(&[1], Expr::int(-7));
        assert!(reducible_kt_residual(&b, &conn).is_structurally_zero());
    }

    #[test]
    fn reducible_kt_matches_brute_force_flat() {
        // flat connection: residual equals fully symmetrized third partials
        let conn = SymmetricConnection::flat(2);
        let c = |t: &str| expr(t, &["x", "y"]);
        let mut b = SymTensorField::zeros(2, 1);
        b.set(&[0], c("x^3 - 2*x*y^2"));
        b.set(&[1], c("y^3 + x^2"));
        let fast = reducible_kt_residual(&b, &conn);
        let slow = sym_deriv_brute(&symmetrized_derivative(&b, &conn), &conn);
        let dom = Domain::unit(2);
        let tester = ZeroTester::new(&dom, ZeroConfig::default());
        for (x, y) in fast.components().iter().zip(slow.components()) {
            let diff = Expr::sub(x.clone(), y.clone());
            assert!(tester.test(&diff).unwrap().is_zero());
        }
    }

    #[test]
    fn permute_coords_swaps_everything() {
        let names = ["x", "y"];
        let c = |t: &str| expr(t, &names);
        let mut q = SymTensorField::zeros(2, 1);
        q.set(&[0], c("2*x"));
        q.set(&[1], c("18*y + 1"));
        let swapped = q.permute_coords(&[1, 0]);
        assert_eq!(swapped.get(&[1]), &c("2*y"));
        assert_eq!(swapped.get(&[0]), &c("18*x + 1"));
    }

    #[test]
    fn bounds_are_enforced() {
        assert!(matches!(
            check_bounds(7, 2),
            Err(GeometryError::DimensionTooLarge(7))
        ));
        assert!(matches!(
            check_bounds(2, 7),
            Err(GeometryError::RankTooLarge(7))
        ));
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn lookup_ignores_index_order(perm_seed in 0u64..1000, rank in 1usize..4) {
                let dim = 3usize;
                let mut counter = 0i64;
                let t = SymTensorField::from_fn(dim, rank, |_| {
                    counter += 1;
                    Expr::int(counter)
                });
                let mut rng = crate::expr::SplitMix64::new(perm_seed);
                for idx in multi_indices(dim, rank) {
                    let mut shuffled = idx.clone();
                    // Fisher-Yates with the deterministic generator
                    for i in (1..shuffled.len()).rev() {
                        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
                        shuffled.swap(i, j);
                    }
                    prop_assert_eq!(t.get(&idx), t.get(&shuffled));
                }
            }
        }
    }
}
