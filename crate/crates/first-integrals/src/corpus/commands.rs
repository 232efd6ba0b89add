//! Implementations behind the `fint` subcommands. Each command loads a
//! system definition, does its work through the library, and renders a
//! deterministic [`Report`].

use super::fifile::{parse_fi, render_fi};
use super::report::{digest, Report, Section};
use super::sysfile::{parse_system, AnsatzTerm, SystemDefinition};
use crate::conditions::{
    assemble_integral1, assemble_integral2, assemble_parity_split, kt_assembly,
    reducible_kt_assembly, ConditionError, FICandidate, FamilyAssembly,
};
use crate::dynamics::{batch_verify, dump_trajectory, VerifyOptions};
use crate::expr::{parse, ParseContext, Precision, ZeroConfig, ZeroVerdict};
use crate::geometry::{curvature, DynamicalSystem};
use crate::solver::{solve, SolutionFamily, SolveError, SolveOptions};
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Exit codes: 0 success, 2 validation error, 3 ill-conditioned solve,
/// 4 certification failure.
#[derive(Debug, Error)]
pub enum CmdError {
    #[error("{path}: {message}")]
    Validation { path: String, message: String },
    #[error("ill-conditioned solve: {0}")]
    IllConditioned(String),
    #[error("certification failure: {0}")]
    Certification(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl CmdError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CmdError::Validation { .. } | CmdError::Io { .. } => 2,
            CmdError::IllConditioned(_) => 3,
            CmdError::Certification(_) => 4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CommandOptions {
    pub seed: u64,
    pub points: Option<usize>,
    pub tol: Option<f64>,
    pub precision: Precision,
    pub out: Option<PathBuf>,
}

impl Default for CommandOptions {
    fn default() -> Self {
        CommandOptions {
            seed: 42,
            points: None,
            tol: None,
            precision: Precision::Double,
            out: None,
        }
    }
}

/// Which FI family `fi-solve` assembles.
#[derive(Debug, Clone)]
pub enum FamilyArg {
    Integral1 { n: usize },
    Integral2 { lambda: String },
    Split { ell: usize },
}

fn read(path: &Path) -> Result<(String, String), CmdError> {
    let bytes = std::fs::read(path).map_err(|source| CmdError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let text = String::from_utf8_lossy(&bytes).into_owned();
    Ok((text, digest(&bytes)))
}

fn load_system(path: &Path) -> Result<(SystemDefinition, String), CmdError> {
    let (text, sha) = read(path)?;
    let def = parse_system(&text).map_err(|e| CmdError::Validation {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    Ok((def, sha))
}

fn input_section(report: &mut Report, path: &Path, sha: &str, opts: &CommandOptions) {
    report.root.kv("input", path.display());
    report.root.kv("sha256", sha);
    report.root.kv("seed", opts.seed);
}

fn system_section(section: &mut Section, def: &SystemDefinition) {
    section.kv("dim", def.system.dim);
    section.kv("coordinates", def.coord_names.join(", "));
    section.kv(
        "connection",
        if def.system.metric.is_some() {
            "levi-civita (from metric)"
        } else {
            "explicit"
        },
    );
    if !def.system.params.free.is_empty() {
        section.kv("free-parameters", def.system.params.free.join(", "));
    }
    for (k, v) in &def.system.params.fixed {
        section.kv(format!("parameter {k}"), v);
    }
}

/// Generic parameter values for numeric work, drawn from the declared
/// ranges by the command seed (recorded in the report).
fn command_params(sys: &DynamicalSystem, seed: u64) -> BTreeMap<String, f64> {
    let mut rng = crate::expr::SplitMix64::new(seed ^ 0xbeef);
    let mut out = BTreeMap::new();
    for (name, (lo, hi)) in &sys.domain.param_ranges {
        let v = rng.rational_in(lo, hi);
        out.insert(name.clone(), crate::expr::rational_to_f64(&v));
    }
    out
}

/// `curvature`: all nonzero curvature components in canonical order.
pub fn cmd_curvature(path: &Path, opts: &CommandOptions) -> Result<Report, CmdError> {
    let (def, sha) = load_system(path)?;
    let mut report = Report::new("curvature");
    input_section(&mut report, path, &sha, opts);
    system_section(report.root.child("system"), &def);
    let r = curvature(&def.system.connection);
    let n = def.system.dim;
    let section = report.root.child("curvature");
    let mut nonzero = 0usize;
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                for d in 0..n {
                    let comp = r.get(a, b, c, d);
                    if comp.is_literal_zero() {
                        continue;
                    }
                    nonzero += 1;
                    section.kv(
                        format!("R^{}_{}{}{}", a + 1, b + 1, c + 1, d + 1),
                        comp.to_text_with(&def.coord_names),
                    );
                }
            }
        }
    }
    if nonzero == 0 {
        section.kv("all-components", "zero");
    }
    section.kv("nonzero-components", nonzero);
    finish(report, opts)
}

/// `kt-solve`: Killing tensor / Killing vector / reducible-KT search.
pub fn cmd_kt_solve(
    path: &Path,
    rank: usize,
    reducible: bool,
    basis_override: Option<&str>,
    opts: &CommandOptions,
) -> Result<Report, CmdError> {
    let (def, sha) = load_system(path)?;
    let assembly = if reducible {
        reducible_kt_assembly(&def.system)
    } else {
        kt_assembly(rank, &def.system)
    }
    .map_err(|e| validation(path, e))?;
    let mut report = Report::new("kt-solve");
    input_section(&mut report, path, &sha, opts);
    report.root.kv("rank", rank);
    if reducible {
        report.root.kv("kind", "reducible (generated by a vector)");
    }
    system_section(report.root.child("system"), &def);
    let family = run_solve(path, &def, &assembly, basis_override, opts)?;
    family_section(&mut report, &def, &family, &assembly);
    finish(report, opts)
}

/// `fi-solve`: assemble one of the FI families at the given order and solve.
pub fn cmd_fi_solve(
    path: &Path,
    order: usize,
    family_arg: &FamilyArg,
    basis_override: Option<&str>,
    opts: &CommandOptions,
) -> Result<Report, CmdError> {
    let (def, sha) = load_system(path)?;
    let mut report = Report::new("fi-solve");
    input_section(&mut report, path, &sha, opts);
    report.root.kv("order", order);
    let assemblies: Vec<FamilyAssembly> = match family_arg {
        FamilyArg::Integral1 { n } => {
            report.root.kv("family", format!("integral1 n={n}"));
            vec![assemble_integral1(order, *n, &def.system).map_err(|e| validation(path, e))?]
        }
        FamilyArg::Integral2 { lambda } => {
            report.root.kv("family", format!("integral2 lambda={lambda}"));
            let ctx = ParseContext::new(&def.coord_names);
            let lam = parse(lambda, &ctx).map_err(|e| CmdError::Validation {
                path: path.display().to_string(),
                message: format!("bad lambda `{lambda}`: {e}"),
            })?;
            vec![assemble_integral2(order, lam, &def.system).map_err(|e| validation(path, e))?]
        }
        FamilyArg::Split { ell } => {
            report.root.kv("family", format!("split ell={ell}"));
            let (a, b) =
                assemble_parity_split(order, *ell, &def.system).map_err(|e| validation(path, e))?;
            vec![a, b]
        }
    };
    system_section(report.root.child("system"), &def);
    for assembly in &assemblies {
        let family = run_solve(path, &def, assembly, basis_override, opts)?;
        family_section(&mut report, &def, &family, assembly);
    }
    finish(report, opts)
}

fn validation(path: &Path, e: ConditionError) -> CmdError {
    CmdError::Validation {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn run_solve(
    path: &Path,
    def: &SystemDefinition,
    assembly: &FamilyAssembly,
    basis_override: Option<&str>,
    opts: &CommandOptions,
) -> Result<SolutionFamily, CmdError> {
    let override_terms: Option<Vec<AnsatzTerm>> = match basis_override {
        Some(text) => Some(
            super::sysfile::parse_ansatz_override(text, &def.coord_names).map_err(|e| {
                CmdError::Validation {
                    path: path.display().to_string(),
                    message: e.to_string(),
                }
            })?,
        ),
        None => None,
    };
    let slots = assembly.conditions.slot_ranks();
    let space = def
        .ansatz_space(&slots, override_terms.as_deref())
        .map_err(|message| CmdError::Validation {
            path: path.display().to_string(),
            message,
        })?;
    let solve_opts = SolveOptions {
        seed: opts.seed,
        points: opts.points,
        zero_config: ZeroConfig::default().with_seed(opts.seed ^ 0xc0ffee),
        parameter_recheck: true,
    };
    solve(assembly, &space, &def.system, &solve_opts).map_err(|e| match e {
        SolveError::IllConditioned { .. } => CmdError::IllConditioned(e.to_string()),
        other => CmdError::Validation {
            path: path.display().to_string(),
            message: other.to_string(),
        },
    })
}

fn family_section(
    report: &mut Report,
    def: &SystemDefinition,
    family: &SolutionFamily,
    assembly: &FamilyAssembly,
) {
    let section = report.root.child(format!("family {}", assembly.name));
    let cs = &assembly.conditions;
    section.kv(
        "conditions",
        format!(
            "{} entries over {} unknown slots",
            cs.entries.len(),
            cs.slots.len()
        ),
    );
    section.kv("dimension", family.dimension);
    section.kv("arithmetic", if family.exact { "exact" } else { "floating" });
    if let Some(d) = &family.diagnostics {
        section.kv("sigma-max", format!("{:.6e}", d.sigma_max));
        section.kv("rank-margin", format!("{:.3e}", d.margin));
    }
    if !family.params.is_empty() {
        let vals: Vec<String> = family
            .params
            .iter()
            .map(|(k, v)| format!("{k} = {v}"))
            .collect();
        section.kv("solved-at-parameters", vals.join(", "));
    }
    match family.parameter_stable {
        Some(true) => section.kv("parameter-check", "stable across 3 re-draws"),
        Some(false) => section.kv("parameter-check", "parameter-conditional (dimension varies)"),
        None => section.kv("parameter-check", "no free parameters"),
    };
    section.kv(
        "scope",
        "uniqueness/nonexistence statements hold within the declared ansatz space",
    );
    for (i, member) in family.members.iter().enumerate() {
        let ms = section.child(format!("member {}", i + 1));
        ms.kv(
            "certified",
            if member.certified {
                "yes (fresh-point residual test)"
            } else if member.spurious {
                "no — spurious (sampling artifact)"
            } else {
                "no"
            },
        );
        let coeffs = ms.child("coefficients");
        for (k, key) in family.coefficient_keys.iter().enumerate() {
            let val_is_zero = match &member.coeffs {
                Some(cs) => num::Zero::is_zero(&cs[k]),
                None => member.coeffs_float[k].abs() < 1e-9,
            };
            if val_is_zero {
                continue;
            }
            let idx: Vec<String> = key.component.iter().map(|i| (i + 1).to_string()).collect();
            let name = format!(
                "{}[{}] * ({})",
                key.slot,
                idx.join(","),
                key.basis.to_text_with(&def.coord_names)
            );
            match &member.coeffs {
                Some(cs) => coeffs.kv(name, &cs[k]),
                None => coeffs.kv(name, format!("{:.12e}", member.coeffs_float[k])),
            };
        }
        if let Some(c) = &member.candidate {
            let fi = ms.child("first-integral");
            for line in render_fi(c, &def.coord_names).lines() {
                if let Some((k, v)) = line.split_once(" = ") {
                    fi.kv(k, v);
                } else {
                    fi.kv("form", line);
                }
            }
        }
    }
}

/// `verify`: symbolic residual check plus trajectory drift for FI files.
pub fn cmd_verify(
    sys_path: &Path,
    fi_paths: &[PathBuf],
    ics: Option<usize>,
    span: Option<f64>,
    dump_dir: Option<&Path>,
    opts: &CommandOptions,
) -> Result<Report, CmdError> {
    let (def, sha) = load_system(sys_path)?;
    let declared: BTreeSet<String> = def
        .system
        .params
        .fixed
        .keys()
        .cloned()
        .chain(def.system.params.free.iter().cloned())
        .collect();
    let mut candidates: Vec<(String, FICandidate)> = Vec::new();
    let mut report = Report::new("verify");
    input_section(&mut report, sys_path, &sha, opts);
    system_section(report.root.child("system"), &def);
    for p in fi_paths {
        let (text, fi_sha) = read(p)?;
        let cand = parse_fi(&text, &def.coord_names, &declared).map_err(|e| {
            CmdError::Validation {
                path: p.display().to_string(),
                message: e.to_string(),
            }
        })?;
        let name = p
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| p.display().to_string());
        let fs = report.root.child(format!("candidate {name}"));
        fs.kv("file", p.display());
        fs.kv("sha256", fi_sha);
        fs.kv("order", cand.order);
        fs.kv("time-dependent", cand.is_time_dependent());
        candidates.push((name, cand));
    }
    let params = command_params(&def.system, opts.seed);
    if !params.is_empty() {
        let vals: Vec<String> = params.iter().map(|(k, v)| format!("{k} = {v}")).collect();
        report.root.kv("parameters", vals.join(", "));
    }

    // symbolic certification
    let zero_cfg = ZeroConfig::default().with_seed(opts.seed);
    let symbolic = report.root.child("symbolic");
    let mut all_ok = true;
    let mut symbolic_verdicts = Vec::new();
    for (name, cand) in &candidates {
        let verdict = cand
            .certify_symbolic(&def.system, zero_cfg.clone())
            .map_err(|e| CmdError::Validation {
                path: sys_path.display().to_string(),
                message: e.to_string(),
            })?;
        let ok = verdict.is_zero();
        all_ok &= ok;
        symbolic.kv(
            name,
            match &verdict {
                ZeroVerdict::Zero => "residual zero (both precisions)".to_string(),
                ZeroVerdict::Nonzero { value, .. } => {
                    format!("residual nonzero (witness value {value:.3e})")
                }
            },
        );
        symbolic_verdicts.push(ok);
    }

    // drift verification
    let verify_opts = VerifyOptions {
        initial_conditions: ics.unwrap_or(def.verify.initial_conditions),
        span: span.unwrap_or(def.verify.span),
        tolerance: opts.tol.unwrap_or(def.verify.tolerance),
        seed: opts.seed,
        velocity_halfwidth: def.verify.velocity_halfwidth,
        policy: crate::dynamics::StepPolicy {
            rel_tol: def.verify.integrator_rel_tol,
            ..Default::default()
        },
    };
    let batch =
        batch_verify(&def.system, &params, &candidates, &verify_opts).map_err(|e| {
            CmdError::Validation {
                path: sys_path.display().to_string(),
                message: e.to_string(),
            }
        })?;
    let drift = report.root.child("drift");
    drift.kv("tolerance", format!("{:.1e}", batch.tolerance));
    drift.kv("span", format!("{}", verify_opts.span));
    drift.kv("initial-conditions", batch.records.len());
    drift.kv(
        "precision",
        match opts.precision {
            Precision::Double => "double",
            Precision::Extended => "extended (double-double re-evaluation)",
        },
    );
    for (i, rec) in batch.records.iter().enumerate() {
        let t = drift.child(format!("trajectory {}", i + 1));
        let q: Vec<String> = rec.initial.q.iter().map(|v| format!("{v:.6}")).collect();
        let qd: Vec<String> = rec.initial.qdot.iter().map(|v| format!("{v:.6}")).collect();
        t.kv("q0", q.join(", "));
        t.kv("qdot0", qd.join(", "));
        t.kv("steps", rec.steps);
        t.kv("integrator-error", format!("{:.3e}", rec.error_estimate));
    }
    let use_extended = matches!(opts.precision, Precision::Extended);
    let mut conserved_flags = Vec::new();
    for (v, (_, cand)) in batch.verdicts.iter().zip(&candidates) {
        let c = drift.child(format!("verdict {}", v.name));
        let worst = if use_extended {
            let mut w: f64 = 0.0;
            for traj in &batch.trajectories {
                let d = crate::dynamics::fi_drift_extended(traj, cand, &params).map_err(|e| {
                    CmdError::Validation {
                        path: sys_path.display().to_string(),
                        message: e.to_string(),
                    }
                })?;
                w = w.max(d.max_rel_drift);
            }
            w
        } else {
            v.worst_rel_drift
        };
        let conserved = worst < batch.tolerance;
        c.kv("max-relative-drift", format!("{worst:.3e}"));
        c.kv("conserved", conserved);
        conserved_flags.push(conserved);
    }

    if let Some(dir) = dump_dir {
        std::fs::create_dir_all(dir).map_err(|source| CmdError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        for (i, traj) in batch.trajectories.iter().enumerate() {
            let table = dump_trajectory(traj, &candidates, &params).map_err(|e| {
                CmdError::Validation {
                    path: sys_path.display().to_string(),
                    message: e.to_string(),
                }
            })?;
            let path = dir.join(format!("trajectory_{}.dat", i + 1));
            std::fs::write(&path, table).map_err(|source| CmdError::Io {
                path: path.display().to_string(),
                source,
            })?;
        }
        report.root.kv("trajectory-dump", dir.display());
    }

    let rejected: Vec<&str> = batch
        .verdicts
        .iter()
        .zip(&conserved_flags)
        .filter(|(_, ok)| !**ok)
        .map(|(v, _)| v.name.as_str())
        .collect();
    let out = finish(report, opts)?;
    if !all_ok || !rejected.is_empty() {
        // the report still matters when rejecting: print it when it was not
        // already written to a file
        if opts.out.is_none() {
            print!("{}", out.render());
        }
        let mut names: Vec<String> = rejected.iter().map(|s| s.to_string()).collect();
        for ((name, _), ok) in candidates.iter().zip(&symbolic_verdicts) {
            if !ok && !names.contains(name) {
                names.push(name.clone());
            }
        }
        return Err(CmdError::Certification(format!(
            "rejected candidates: {}",
            names.join(", ")
        )));
    }
    Ok(out)
}

/// `report`: validate a system file and summarize what it defines.
pub fn cmd_report(path: &Path, opts: &CommandOptions) -> Result<Report, CmdError> {
    let (def, sha) = load_system(path)?;
    let mut report = Report::new("system");
    input_section(&mut report, path, &sha, opts);
    system_section(report.root.child("system"), &def);
    let domain = report.root.child("domain");
    for (name, (lo, hi)) in def
        .coord_names
        .iter()
        .zip(&def.system.domain.coord_boxes)
        .map(|(n, b)| (n.clone(), b.clone()))
    {
        domain.kv(name, format!("[{lo}, {hi}]"));
    }
    domain.kv(
        "t",
        format!(
            "[{}, {}]",
            def.system.domain.time_range.0, def.system.domain.time_range.1
        ),
    );
    for (p, (lo, hi)) in &def.system.domain.param_ranges {
        domain.kv(p, format!("[{lo}, {hi}]"));
    }
    domain.kv("constraints", def.system.domain.constraints.len());
    let geometry = report.root.child("geometry");
    let r = curvature(&def.system.connection);
    let n = def.system.dim;
    let mut nonzero = 0usize;
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                for d in 0..n {
                    if !r.get(a, b, c, d).is_literal_zero() {
                        nonzero += 1;
                    }
                }
            }
        }
    }
    geometry.kv("curvature-nonzero-components", nonzero);
    if def.system.metric.is_some() {
        let ok = def
            .system
            .check_levi_civita(ZeroConfig::default().with_seed(opts.seed))
            .map_err(|e| CmdError::Validation {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
        geometry.kv("levi-civita-consistency", if ok { "passes" } else { "FAILS" });
    }
    if !def.ansatz.per_slot.is_empty() {
        let slots: Vec<&str> = def.ansatz.per_slot.keys().map(|s| s.as_str()).collect();
        report.root.kv("ansatz-slots", slots.join(", "));
    }
    finish(report, opts)
}

fn finish(report: Report, opts: &CommandOptions) -> Result<Report, CmdError> {
    if let Some(path) = &opts.out {
        std::fs::write(path, report.render()).map_err(|source| CmdError::Io {
            path: path.display().to_string(),
            source,
        })?;
    }
    Ok(report)
}
