//! Trajectory integration and conservation-drift verification.
//!
//! The equations of motion `q̈^a = -Γ^a_bc q̇^b q̇^c - Q^a` are integrated in
//! first-order form by classic fixed-step fourth-order Runge-Kutta with
//! step halving: the whole span is re-integrated on successively doubled
//! grids until two refinements agree pointwise, which keeps the step
//! sequence documented and the output bit-reproducible for a given system.
//! Candidate FIs are then evaluated along the stored nodes and their drift
//! `max |I(t) - I(t0)|` decides acceptance.

use crate::conditions::FICandidate;
use crate::expr::{rational_to_f64, CompiledExpr, EvalError, SampleError, SplitMix64};
use crate::geometry::{multi_indices, multiplicity, DynamicalSystem};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum DynamicsError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Sample(#[from] SampleError),
    #[error("trajectory left the domain at t = {t:.6}")]
    DomainExit { t: f64 },
    #[error("step floor reached without convergence (last {steps} steps)")]
    StepFloor { steps: usize },
    #[error("initial condition rejected {0} times in a row")]
    RetriesExhausted(usize),
}

/// Integration policy: refinement stops when two successive step halvings
/// agree to `rel_tol` componentwise (scaled by `max(1, |state|)`).
#[derive(Debug, Clone)]
pub struct StepPolicy {
    pub rel_tol: f64,
    pub initial_steps: usize,
    pub max_doublings: usize,
}

impl Default for StepPolicy {
    fn default() -> Self {
        StepPolicy {
            rel_tol: 1e-10,
            initial_steps: 64,
            max_doublings: 16,
        }
    }
}

/// One stored node of a trajectory.
#[derive(Debug, Clone)]
pub struct Node {
    pub t: f64,
    pub q: Vec<f64>,
    pub qdot: Vec<f64>,
}

/// A discrete trajectory on the finest accepted grid.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub nodes: Vec<Node>,
    /// Estimated pointwise error from the last two refinements.
    pub error_estimate: f64,
    /// True when the trajectory was cut short at a domain exit.
    pub truncated: bool,
    pub steps: usize,
}

impl Trajectory {
    pub fn final_node(&self) -> &Node {
        self.nodes.last().expect("nonempty trajectory")
    }
}

/// Compiled right-hand side of the first-order system.
struct CompiledRhs {
    dim: usize,
    /// Γ^a_bc for b <= c with the symmetry multiplicity folded in.
    gammas: Vec<(usize, usize, usize, f64, CompiledExpr)>,
    forces: Vec<CompiledExpr>,
    stack: Vec<f64>,
}

impl CompiledRhs {
    fn new(sys: &DynamicalSystem, params: &BTreeMap<String, f64>) -> Result<Self, EvalError> {
        let dim = sys.dim;
        let mut gammas = Vec::new();
        for a in 0..dim {
            for bc in multi_indices(dim, 2) {
                let g = sys.connection.gamma(a, bc[0], bc[1]);
                if g.is_literal_zero() {
                    continue;
                }
                let mult = if bc[0] == bc[1] { 1.0 } else { 2.0 };
                gammas.push((a, bc[0], bc[1], mult, CompiledExpr::compile(g, params)?));
            }
        }
        let forces = (0..dim)
            .map(|a| CompiledExpr::compile(sys.forces.get(&[a]), params))
            .collect::<Result<_, _>>()?;
        Ok(CompiledRhs {
            dim,
            gammas,
            forces,
            stack: Vec::new(),
        })
    }

    /// `state = (q, q̇)`, `out = (q̇, q̈)`.
    fn eval(&mut self, t: f64, state: &[f64], out: &mut [f64]) -> Result<(), EvalError> {
        let n = self.dim;
        let (q, qd) = state.split_at(n);
        out[..n].copy_from_slice(qd);
        for a in 0..n {
            out[n + a] = -self.forces[a].eval_with(t, q, &mut self.stack)?;
        }
        for (a, b, c, mult, g) in &self.gammas {
            let v = g.eval_with(t, q, &mut self.stack)?;
            out[n + a] -= mult * v * qd[*b] * qd[*c];
        }
        Ok(())
    }
}

fn rk4_fixed(
    rhs: &mut CompiledRhs,
    t0: f64,
    t1: f64,
    state0: &[f64],
    steps: usize,
) -> Result<Vec<Vec<f64>>, EvalError> {
    let n = state0.len();
    let h = (t1 - t0) / steps as f64;
    let mut out = Vec::with_capacity(steps + 1);
    let mut y = state0.to_vec();
    out.push(y.clone());
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    for i in 0..steps {
        let t = t0 + i as f64 * h;
        rhs.eval(t, &y, &mut k1)?;
        for j in 0..n {
            tmp[j] = y[j] + 0.5 * h * k1[j];
        }
        rhs.eval(t + 0.5 * h, &tmp, &mut k2)?;
        for j in 0..n {
            tmp[j] = y[j] + 0.5 * h * k2[j];
        }
        rhs.eval(t + 0.5 * h, &tmp, &mut k3)?;
        for j in 0..n {
            tmp[j] = y[j] + h * k3[j];
        }
        rhs.eval(t + h, &tmp, &mut k4)?;
        for j in 0..n {
            y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        out.push(y.clone());
    }
    Ok(out)
}

/// Integrates on a fixed grid with the given number of RK4 steps (no
/// refinement, no domain checks); the building block of [`integrate`] and
/// of convergence-order measurements.
pub fn integrate_fixed(
    sys: &DynamicalSystem,
    params: &BTreeMap<String, f64>,
    q0: &[f64],
    qdot0: &[f64],
    t0: f64,
    t1: f64,
    steps: usize,
) -> Result<Trajectory, DynamicsError> {
    let all_params = sys.param_values(params)?;
    let mut rhs = CompiledRhs::new(sys, &all_params)?;
    let state0: Vec<f64> = q0.iter().chain(qdot0.iter()).cloned().collect();
    let states = rk4_fixed(&mut rhs, t0, t1, &state0, steps)?;
    Ok(Trajectory {
        nodes: to_nodes(t0, t1, &states, steps, sys.dim),
        error_estimate: f64::NAN,
        truncated: false,
        steps,
    })
}

/// Integrates the dynamical equations from `(q0, qdot0)` over `[t0, t1]`.
///
/// A trajectory that crosses a domain constraint surface (or blows up) is
/// truncated at the last valid node and flagged; the refinement loop treats
/// a consistent truncation as convergence on the surviving prefix.
pub fn integrate(
    sys: &DynamicalSystem,
    params: &BTreeMap<String, f64>,
    q0: &[f64],
    qdot0: &[f64],
    t0: f64,
    t1: f64,
    policy: &StepPolicy,
) -> Result<Trajectory, DynamicsError> {
    assert!(t1 > t0);
    let all_params = sys.param_values(params)?;
    let mut rhs = CompiledRhs::new(sys, &all_params)?;
    let state0: Vec<f64> = q0.iter().chain(qdot0.iter()).cloned().collect();
    let dim = sys.dim;

    let mut steps = policy.initial_steps;
    let mut prev: Option<(Vec<Vec<f64>>, usize)> = None; // (states, valid prefix)
    for _ in 0..=policy.max_doublings {
        let result = rk4_fixed(&mut rhs, t0, t1, &state0, steps);
        let (states, valid) = match result {
            Ok(states) => {
                let valid = valid_prefix(sys, &all_params, t0, t1, &states);
                (states, valid)
            }
            Err(EvalError::NonFinite) | Err(EvalError::DivisionByZero) => (Vec::new(), 0),
            Err(e) => return Err(e.into()),
        };
        if let Some((prev_states, prev_valid)) = &prev {
            if !states.is_empty() && *prev_valid > 1 {
                // compare on the coarse grid nodes of the shared prefix
                let shared_coarse = (*prev_valid).min(states.len().div_ceil(2));
                let mut max_diff = 0.0f64;
                for i in 0..shared_coarse {
                    let a = &prev_states[i];
                    let b = &states[2 * i];
                    for j in 0..2 * dim {
                        let scale = a[j].abs().max(b[j].abs()).max(1.0);
                        max_diff = max_diff.max((a[j] - b[j]).abs() / scale);
                    }
                }
                let fully_valid = valid == states.len() && states.len() == steps + 1;
                let prev_fully_valid = *prev_valid == steps / 2 + 1;
                if max_diff <= policy.rel_tol && fully_valid == prev_fully_valid {
                    let nodes = to_nodes(t0, t1, &states[..valid], steps, dim);
                    return Ok(Trajectory {
                        nodes,
                        error_estimate: max_diff,
                        truncated: !fully_valid,
                        steps,
                    });
                }
            }
        }
        if !states.is_empty() && valid > 0 {
            let mut trimmed = states;
            trimmed.truncate(valid);
            prev = Some((trimmed, valid));
        } else {
            prev = None;
        }
        steps *= 2;
    }
    Err(DynamicsError::StepFloor { steps })
}

/// Number of leading nodes that are finite and inside the domain.
fn valid_prefix(
    sys: &DynamicalSystem,
    params: &BTreeMap<String, f64>,
    t0: f64,
    t1: f64,
    states: &[Vec<f64>],
) -> usize {
    let dim = sys.dim;
    let n = states.len();
    for (i, s) in states.iter().enumerate() {
        let t = t0 + (t1 - t0) * i as f64 / (n - 1).max(1) as f64;
        if !s.iter().all(|v| v.is_finite()) || !sys.domain.state_in_domain(t, &s[..dim], params) {
            return i;
        }
    }
    n
}

fn to_nodes(t0: f64, t1: f64, states: &[Vec<f64>], steps: usize, dim: usize) -> Vec<Node> {
    let h = (t1 - t0) / steps as f64;
    states
        .iter()
        .enumerate()
        .map(|(i, s)| Node {
            t: t0 + i as f64 * h,
            q: s[..dim].to_vec(),
            qdot: s[dim..].to_vec(),
        })
        .collect()
}

/// Drift statistics of one candidate along one trajectory.
#[derive(Debug, Clone)]
pub struct DriftStats {
    pub initial_value: f64,
    pub max_abs_drift: f64,
    pub max_rel_drift: f64,
}

/// Evaluates the candidate at every node and reports the drift. Relative
/// drift is measured against `max(|I(t0)|, 1e-30)`.
pub fn fi_drift(
    traj: &Trajectory,
    candidate: &FICandidate,
    params: &BTreeMap<String, f64>,
) -> Result<DriftStats, DynamicsError> {
    let compiled = CompiledCandidate::new(candidate, params)?;
    let mut initial = 0.0;
    let mut max_abs: f64 = 0.0;
    for (i, node) in traj.nodes.iter().enumerate() {
        let v = compiled.eval(node.t, &node.q, &node.qdot)?;
        if i == 0 {
            initial = v;
        } else {
            max_abs = max_abs.max((v - initial).abs());
        }
    }
    Ok(DriftStats {
        initial_value: initial,
        max_abs_drift: max_abs,
        max_rel_drift: max_abs / initial.abs().max(1e-30),
    })
}

/// Candidate compiled for the node loop: one program per nonzero component.
pub struct CompiledCandidate {
    terms: Vec<(Vec<usize>, f64, CompiledExpr)>,
    stack: std::cell::RefCell<Vec<f64>>,
}

impl CompiledCandidate {
    pub fn new(
        candidate: &FICandidate,
        params: &BTreeMap<String, f64>,
    ) -> Result<Self, EvalError> {
        let mut terms = Vec::new();
        for coeff in &candidate.coeffs {
            for idx in coeff.indices() {
                let c = coeff.get(idx);
                if c.is_literal_zero() {
                    continue;
                }
                terms.push((
                    idx.clone(),
                    multiplicity(idx) as f64,
                    CompiledExpr::compile(c, params)?,
                ));
            }
        }
        Ok(CompiledCandidate {
            terms,
            stack: std::cell::RefCell::new(Vec::new()),
        })
    }

    pub fn eval(&self, t: f64, q: &[f64], qdot: &[f64]) -> Result<f64, EvalError> {
        let mut stack = self.stack.borrow_mut();
        let mut acc = 0.0;
        for (idx, mult, prog) in &self.terms {
            let mut v = prog.eval_with(t, q, &mut stack)? * mult;
            for &i in idx {
                v *= qdot[i];
            }
            acc += v;
        }
        Ok(acc)
    }
}

/// Drift with extended-precision (double-double) tree evaluation; slower,
/// used when the verification precision flag asks for it.
pub fn fi_drift_extended(
    traj: &Trajectory,
    candidate: &FICandidate,
    params: &BTreeMap<String, f64>,
) -> Result<DriftStats, DynamicsError> {
    use crate::expr::{Bindings, Dd, Scalar};
    let dd_params: BTreeMap<String, Dd> = params
        .iter()
        .map(|(k, v)| (k.clone(), Dd::from_f64(*v)))
        .collect();
    let mut initial = 0.0;
    let mut max_abs: f64 = 0.0;
    for (i, node) in traj.nodes.iter().enumerate() {
        let b = Bindings {
            time: Dd::from_f64(node.t),
            coords: node.q.iter().map(|v| Dd::from_f64(*v)).collect(),
            params: dd_params.clone(),
        };
        let qdot: Vec<Dd> = node.qdot.iter().map(|v| Dd::from_f64(*v)).collect();
        let v = candidate.eval(&b, &qdot)?;
        let v = v.abs_f64() * if v.is_neg() { -1.0 } else { 1.0 };
        if i == 0 {
            initial = v;
        } else {
            max_abs = max_abs.max((v - initial).abs());
        }
    }
    Ok(DriftStats {
        initial_value: initial,
        max_abs_drift: max_abs,
        max_rel_drift: max_abs / initial.abs().max(1e-30),
    })
}

/// Verdict for one candidate over a batch of initial conditions.
#[derive(Debug, Clone)]
pub struct CandidateVerdict {
    pub name: String,
    pub conserved: bool,
    pub worst_rel_drift: f64,
    pub drifts: Vec<DriftStats>,
}

/// Per-trajectory record of a verification batch.
#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    pub initial: Node,
    pub span: (f64, f64),
    pub steps: usize,
    pub error_estimate: f64,
    pub truncated: bool,
}

/// Batch verification report: trajectories, per-candidate drift series and
/// accept/reject verdicts.
#[derive(Debug)]
pub struct TrajectoryReport {
    pub records: Vec<TrajectoryRecord>,
    pub verdicts: Vec<CandidateVerdict>,
    pub tolerance: f64,
    pub trajectories: Vec<Trajectory>,
}

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    pub initial_conditions: usize,
    pub span: f64,
    pub tolerance: f64,
    pub seed: u64,
    /// Half-width of the uniform box the initial velocities are drawn from.
    pub velocity_halfwidth: f64,
    pub policy: StepPolicy,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            initial_conditions: 3,
            span: 5.0,
            tolerance: 1e-7,
            seed: 0xd217,
            velocity_halfwidth: 0.5,
            policy: StepPolicy::default(),
        }
    }
}

/// Integrates a batch of initial conditions (positions sampled from the
/// domain box shrunk by 10%, velocities uniform in the velocity box) and
/// measures the drift of every candidate; a candidate is conserved only if
/// it stays within tolerance on every trajectory. Initial conditions whose
/// trajectories exit the domain are resampled, up to 10 retries each.
pub fn batch_verify(
    sys: &DynamicalSystem,
    params: &BTreeMap<String, f64>,
    candidates: &[(String, FICandidate)],
    opts: &VerifyOptions,
) -> Result<TrajectoryReport, DynamicsError> {
    assert!(
        opts.initial_conditions >= 3,
        "need at least 3 initial conditions"
    );
    let mut rng = SplitMix64::new(opts.seed);
    let mut records = Vec::new();
    let mut trajectories = Vec::new();
    let domain = sys.domain.fixing_params(
        &params
            .iter()
            .map(|(k, v)| (k.clone(), crate::expr::f64_to_rational(*v)))
            .collect(),
    );
    for _ in 0..opts.initial_conditions {
        let mut attempts = 0;
        let traj = loop {
            attempts += 1;
            if attempts > 10 {
                return Err(DynamicsError::RetriesExhausted(attempts - 1));
            }
            let p = domain.sample_one(&mut rng, true)?;
            let q0: Vec<f64> = p.coords.iter().map(rational_to_f64).collect();
            let qdot0: Vec<f64> = (0..sys.dim)
                .map(|_| {
                    let u = (rng.next_u64() % 1000) as f64 / 999.0;
                    (2.0 * u - 1.0) * opts.velocity_halfwidth
                })
                .collect();
            match integrate(sys, params, &q0, &qdot0, 0.0, opts.span, &opts.policy) {
                Ok(t) if !t.truncated => break t,
                Ok(_) => continue, // domain exit: resample
                Err(DynamicsError::StepFloor { .. }) => continue,
                Err(e) => return Err(e),
            }
        };
        records.push(TrajectoryRecord {
            initial: traj.nodes[0].clone(),
            span: (0.0, opts.span),
            steps: traj.steps,
            error_estimate: traj.error_estimate,
            truncated: traj.truncated,
        });
        trajectories.push(traj);
    }
    let mut verdicts = Vec::new();
    for (name, cand) in candidates {
        let mut drifts = Vec::new();
        let mut worst: f64 = 0.0;
        for traj in &trajectories {
            let d = fi_drift(traj, cand, params)?;
            worst = worst.max(d.max_rel_drift);
            drifts.push(d);
        }
        verdicts.push(CandidateVerdict {
            name: name.clone(),
            conserved: worst < opts.tolerance,
            worst_rel_drift: worst,
            drifts,
        });
    }
    Ok(TrajectoryReport {
        records,
        verdicts,
        tolerance: opts.tolerance,
        trajectories,
    })
}

/// Plain-text trajectory table: one node per line with columns
/// `t q^1..q^N q̇^1..q̇^N` then one column per monitored FI, 17 significant
/// digits.
pub fn dump_trajectory(
    traj: &Trajectory,
    candidates: &[(String, FICandidate)],
    params: &BTreeMap<String, f64>,
) -> Result<String, DynamicsError> {
    let compiled: Vec<CompiledCandidate> = candidates
        .iter()
        .map(|(_, c)| CompiledCandidate::new(c, params))
        .collect::<Result<_, _>>()?;
    let mut out = String::new();
    out.push_str("# t");
    let dim = traj.nodes[0].q.len();
    for i in 1..=dim {
        let _ = write!(out, " q{i}");
    }
    for i in 1..=dim {
        let _ = write!(out, " qdot{i}");
    }
    for (name, _) in candidates {
        let _ = write!(out, " {name}");
    }
    out.push('\n');
    for node in &traj.nodes {
        let _ = write!(out, "{:.16e}", node.t);
        for v in node.q.iter().chain(&node.qdot) {
            let _ = write!(out, " {v:.16e}");
        }
        for c in &compiled {
            let v = c.eval(node.t, &node.q, &node.qdot)?;
            let _ = write!(out, " {v:.16e}");
        }
        out.push('\n');
    }
    Ok(out)
}
