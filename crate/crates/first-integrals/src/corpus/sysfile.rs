//! The system-definition file format.
//!
//! Line-oriented sections with `key = expression` pairs, so every diagnostic
//! carries an exact line number:
//!
//! ```text
//! [system]
//! dim = 2
//! coordinates = u, w
//!
//! [connection]            # exactly one of [connection] or [metric]
//! Gamma^1_11 = -8*beta*w/u^3
//!
//! [forces]                 # Q^a lines, or V = <potential> with a metric
//! Q^1 = 1/u^2
//!
//! [parameters]
//! beta = free              # or an exact rational value
//!
//! [domain]
//! u in [5/2, 4]            # coordinate boxes (rational bounds)
//! t in [0, 5]
//! beta in [1/3, 2]         # ranges for free parameters
//! u > 0                    # strict inequality constraints
//!
//! [ansatz]                 # optional: per-slot basis declarations
//! C0 = poly(2) + poly(2, exp(12*beta*w/u^2))
//! default = poly(3)
//!
//! [verify]                 # optional: drift-verification defaults
//! span = 5
//! ics = 3
//! tol = 1e-7
//! vbox = 1/2
//! ```
//!
//! Unlisted connection/metric entries default to zero; entries must use the
//! `b <= c` (resp. `a <= b`) index representative — the symmetric duplicate
//! is rejected. `poly(d)` in `[ansatz]` expands to all coordinate monomials
//! of total degree at most `d` (for the gauge slot `G` the constant is
//! excluded: it never enters the conditions); `poly(d, f)` multiplies each
//! monomial by `f`; `fn(f)` adds the single function `f`.

use crate::expr::{parse, rat, Domain, Expr, ParseContext, Rational};
use crate::geometry::{DynamicalSystem, ParamSet, SymTensorField, SymmetricConnection};
use crate::solver::{monomials, monomials_nonconst, scaled_basis, AnsatzSpace};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
#[error("line {line}: {message}")]
pub struct FileError {
    pub line: usize,
    pub message: String,
}

fn err<T>(line: usize, message: impl Into<String>) -> Result<T, FileError> {
    Err(FileError {
        line,
        message: message.into(),
    })
}

/// Raw ansatz term list per slot, kept textual until a solve needs it.
#[derive(Debug, Clone, Default)]
pub struct AnsatzConfig {
    pub per_slot: BTreeMap<String, Vec<AnsatzTerm>>,
}

#[derive(Debug, Clone)]
pub enum AnsatzTerm {
    Poly { degree: usize },
    ScaledPoly { degree: usize, multiplier: Expr },
    Single(Expr),
}

/// Drift-verification defaults from the `[verify]` block.
#[derive(Debug, Clone)]
pub struct VerifyConfig {
    pub span: f64,
    pub initial_conditions: usize,
    pub tolerance: f64,
    pub velocity_halfwidth: f64,
    /// Pointwise agreement demanded between integrator refinements; worth
    /// tightening for integrals that amplify state error (large exponents).
    pub integrator_rel_tol: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            span: 5.0,
            initial_conditions: 3,
            tolerance: 1e-7,
            velocity_halfwidth: 0.5,
            integrator_rel_tol: 1e-10,
        }
    }
}

/// A parsed system-definition document.
#[derive(Debug, Clone)]
pub struct SystemDefinition {
    pub system: DynamicalSystem,
    pub ansatz: AnsatzConfig,
    pub verify: VerifyConfig,
    pub coord_names: Vec<String>,
}

impl SystemDefinition {
    /// Resolves the declared ansatz into concrete bases for the given slots,
    /// using `default` (or the `--basis` override) for unlisted slots.
    pub fn ansatz_space(
        &self,
        slots: &[(String, usize)],
        override_default: Option<&[AnsatzTerm]>,
    ) -> Result<AnsatzSpace, String> {
        let dim = self.system.dim;
        let mut space = AnsatzSpace::new();
        for (name, _rank) in slots {
            let terms = self
                .ansatz
                .per_slot
                .get(name)
                .map(|t| t.as_slice())
                .or(override_default)
                .or_else(|| self.ansatz.per_slot.get("default").map(|t| t.as_slice()));
            let Some(terms) = terms else {
                if name == "s" {
                    continue; // the constant slot has a built-in basis
                }
                return Err(format!(
                    "no basis for slot `{name}`: add it to [ansatz] or pass --basis"
                ));
            };
            let mut fns = Vec::new();
            for t in terms {
                match t {
                    AnsatzTerm::Poly { degree } => {
                        if name == "G" {
                            fns.extend(monomials_nonconst(dim, *degree));
                        } else {
                            fns.extend(monomials(dim, *degree));
                        }
                    }
                    AnsatzTerm::ScaledPoly { degree, multiplier } => {
                        fns.extend(scaled_basis(&monomials(dim, *degree), multiplier));
                    }
                    AnsatzTerm::Single(e) => fns.push(e.clone()),
                }
            }
            space.set_basis(name, fns);
        }
        Ok(space)
    }
}

struct Line<'a> {
    no: usize,
    text: &'a str,
}

fn logical_lines(text: &str) -> Vec<Line<'_>> {
    text.lines()
        .enumerate()
        .map(|(i, l)| {
            let stripped = match l.find('#') {
                Some(p) => &l[..p],
                None => l,
            };
            Line {
                no: i + 1,
                text: stripped.trim(),
            }
        })
        .filter(|l| !l.text.is_empty())
        .collect()
}

/// Parses a full system-definition document.
pub fn parse_system(text: &str) -> Result<SystemDefinition, FileError> {
    let lines = logical_lines(text);
    // first pass: locate [system] to learn dim and coordinates
    let mut dim: Option<usize> = None;
    let mut coords: Vec<String> = Vec::new();
    {
        let mut in_system = false;
        for l in &lines {
            if l.text.starts_with('[') {
                in_system = l.text == "[system]";
                continue;
            }
            if !in_system {
                continue;
            }
            let (key, value) = split_kv(l)?;
            match key {
                "dim" => {
                    dim = Some(
                        value
                            .parse::<usize>()
                            .map_err(|_| FileError {
                                line: l.no,
                                message: format!("bad dimension `{value}`"),
                            })?,
                    );
                }
                "coordinates" => {
                    coords = value.split(',').map(|c| c.trim().to_string()).collect();
                }
                other => return err(l.no, format!("unknown [system] key `{other}`")),
            }
        }
    }
    let Some(dim) = dim else {
        return err(1, "missing [system] section with `dim`");
    };
    if coords.len() != dim {
        return err(1, format!("expected {dim} coordinate names, got {}", coords.len()));
    }
    if coords.iter().any(|c| c == "t") {
        return err(1, "`t` is reserved for the time variable");
    }
    let ctx = ParseContext::new(&coords);

    // second pass: all other sections
    let mut section = String::new();
    let mut connection: Option<SymmetricConnection> = None;
    let mut metric: Option<SymTensorField> = None;
    let mut seen_conn_entries: BTreeSet<(usize, usize, usize)> = BTreeSet::new();
    let mut seen_metric_entries: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut forces: Option<SymTensorField> = None;
    let mut potential: Option<Expr> = None;
    let mut fixed_params: BTreeMap<String, Rational> = BTreeMap::new();
    let mut free_params: Vec<String> = Vec::new();
    let mut boxes: BTreeMap<String, (Rational, Rational)> = BTreeMap::new();
    let mut constraints: Vec<Expr> = Vec::new();
    let mut ansatz = AnsatzConfig::default();
    let mut verify = VerifyConfig::default();

    for l in &lines {
        if l.text.starts_with('[') {
            section = l.text.to_string();
            match section.as_str() {
                "[system]" | "[connection]" | "[metric]" | "[forces]" | "[parameters]"
                | "[domain]" | "[ansatz]" | "[verify]" => {}
                other => return err(l.no, format!("unknown section `{other}`")),
            }
            if section == "[connection]" && connection.is_none() {
                connection = Some(SymmetricConnection::flat(dim));
            }
            if section == "[metric]" && metric.is_none() {
                metric = Some(SymTensorField::zeros(dim, 2));
            }
            continue;
        }
        match section.as_str() {
            "[system]" => {} // handled in the first pass
            "[connection]" => {
                let (key, value) = split_kv(l)?;
                let (a, b, c) = parse_gamma_key(key, dim, l.no)?;
                if b > c {
                    return err(
                        l.no,
                        format!("Gamma^{}_{}{} duplicates the b <= c entry", a + 1, b + 1, c + 1),
                    );
                }
                if !seen_conn_entries.insert((a, b, c)) {
                    return err(l.no, format!("duplicate entry `{key}`"));
                }
                let e = parse_expr(value, &ctx, l.no)?;
                connection.as_mut().unwrap().set_gamma(a, b, c, e);
            }
            "[metric]" => {
                let (key, value) = split_kv(l)?;
                let (a, b) = parse_metric_key(key, dim, l.no)?;
                if a > b {
                    return err(l.no, format!("g_{}{} duplicates the a <= b entry", a + 1, b + 1));
                }
                if !seen_metric_entries.insert((a, b)) {
                    return err(l.no, format!("duplicate entry `{key}`"));
                }
                let e = parse_expr(value, &ctx, l.no)?;
                metric.as_mut().unwrap().set(&[a, b], e);
            }
            "[forces]" => {
                let (key, value) = split_kv(l)?;
                if key == "V" {
                    potential = Some(parse_expr(value, &ctx, l.no)?);
                } else {
                    let a = parse_force_key(key, dim, l.no)?;
                    let e = parse_expr(value, &ctx, l.no)?;
                    forces
                        .get_or_insert_with(|| SymTensorField::zeros(dim, 1))
                        .set(&[a], e);
                }
            }
            "[parameters]" => {
                let (key, value) = split_kv(l)?;
                if value == "free" {
                    free_params.push(key.to_string());
                } else {
                    let v = parse_rational(value, l.no)?;
                    fixed_params.insert(key.to_string(), v);
                }
            }
            "[domain]" => {
                if let Some((name, lo, hi)) = try_parse_range(l.text) {
                    let lo = parse_rational(&lo, l.no)?;
                    let hi = parse_rational(&hi, l.no)?;
                    if lo >= hi {
                        return err(l.no, "empty range");
                    }
                    boxes.insert(name, (lo, hi));
                } else if let Some((lhs, rhs, flip)) = try_parse_inequality(l.text) {
                    let a = parse_expr(&lhs, &ctx, l.no)?;
                    let b = parse_expr(&rhs, &ctx, l.no)?;
                    let c = if flip { Expr::sub(b, a) } else { Expr::sub(a, b) };
                    constraints.push(c);
                } else {
                    return err(l.no, "expected `name in [lo, hi]` or a strict inequality");
                }
            }
            "[ansatz]" => {
                let (key, value) = split_kv(l)?;
                let terms = parse_ansatz_terms(value, &ctx, l.no)?;
                ansatz.per_slot.insert(key.to_string(), terms);
            }
            "[verify]" => {
                let (key, value) = split_kv(l)?;
                match key {
                    "span" => verify.span = parse_f64(value, l.no)?,
                    "ics" => {
                        verify.initial_conditions = value.parse().map_err(|_| FileError {
                            line: l.no,
                            message: format!("bad integer `{value}`"),
                        })?
                    }
                    "tol" => verify.tolerance = parse_f64(value, l.no)?,
                    "vbox" => verify.velocity_halfwidth = parse_f64(value, l.no)?,
                    "integrator-tol" => verify.integrator_rel_tol = parse_f64(value, l.no)?,
                    other => return err(l.no, format!("unknown [verify] key `{other}`")),
                }
            }
            "" => return err(l.no, "content before the first section header"),
            _ => unreachable!(),
        }
    }

    // assemble and validate
    if connection.is_some() && metric.is_some() {
        return err(1, "declare exactly one of [connection] or [metric], not both");
    }
    let declared: BTreeSet<String> = fixed_params
        .keys()
        .cloned()
        .chain(free_params.iter().cloned())
        .collect();

    let forces = match (forces, potential) {
        (Some(_), Some(_)) => return err(1, "give either Q^a entries or V, not both"),
        (Some(f), None) => f,
        (None, Some(v)) => {
            let Some(g) = &metric else {
                return err(1, "a potential V needs a [metric] section");
            };
            // Q^a = g^{ab} V_{,b}
            let ginv = crate::geometry::inverse_metric(g).map_err(|e| FileError {
                line: 1,
                message: e.to_string(),
            })?;
            SymTensorField::from_fn(dim, 1, |idx| {
                let a = idx[0];
                Expr::add((0..dim).map(|b| {
                    Expr::mul2(
                        ginv[a][b].clone(),
                        v.differentiate(crate::expr::Var::Coord(b)),
                    )
                }))
            })
        }
        (None, None) => SymTensorField::zeros(dim, 1),
    };

    // domain assembly: coordinate boxes by name, time range, parameter ranges
    let mut coord_boxes = Vec::with_capacity(dim);
    for name in &coords {
        match boxes.get(name) {
            Some(b) => coord_boxes.push(b.clone()),
            None => return err(1, format!("missing [domain] box for coordinate `{name}`")),
        }
    }
    let time_range = boxes
        .get("t")
        .cloned()
        .unwrap_or((rat(0, 1), rat(1, 1)));
    let mut param_ranges = BTreeMap::new();
    for p in &free_params {
        match boxes.get(p) {
            Some(b) => {
                param_ranges.insert(p.clone(), b.clone());
            }
            None => {
                return err(
                    1,
                    format!("free parameter `{p}` needs a [domain] range, e.g. `{p} in [1/2, 2]`"),
                )
            }
        }
    }
    for name in boxes.keys() {
        let known = name == "t"
            || coords.contains(name)
            || free_params.contains(name)
            || fixed_params.contains_key(name);
        if !known {
            return err(1, format!("range for unknown name `{name}`"));
        }
    }

    let domain = Domain {
        coord_boxes,
        time_range,
        param_ranges,
        fixed_params: fixed_params.clone(),
        constraints,
    };

    // every identifier used anywhere must be a coordinate, t, or declared
    let mut used = BTreeSet::new();
    if let Some(c) = &connection {
        for a in 0..dim {
            for bc in crate::geometry::multi_indices(dim, 2) {
                c.gamma(a, bc[0], bc[1]).collect_params(&mut used);
            }
        }
    }
    if let Some(g) = &metric {
        for comp in g.components() {
            comp.collect_params(&mut used);
        }
    }
    for comp in forces.components() {
        comp.collect_params(&mut used);
    }
    for c in &domain.constraints {
        c.collect_params(&mut used);
    }
    for u in &used {
        if !declared.contains(u) {
            return err(1, format!("undeclared parameter `{u}` (add it to [parameters])"));
        }
    }

    let system = match (connection, metric) {
        (Some(c), None) => {
            DynamicalSystem::new(coords.clone(), c, forces, domain).map_err(|e| FileError {
                line: 1,
                message: e.to_string(),
            })?
        }
        (None, Some(g)) => DynamicalSystem::from_metric(coords.clone(), g, forces, domain)
            .map_err(|e| FileError {
                line: 1,
                message: e.to_string(),
            })?,
        (None, None) => return err(1, "missing [connection] or [metric] section"),
        (Some(_), Some(_)) => unreachable!(),
    };
    let system = system.with_params(ParamSet {
        fixed: fixed_params,
        free: free_params,
    });
    Ok(SystemDefinition {
        system,
        ansatz,
        verify,
        coord_names: coords,
    })
}

fn split_kv<'a>(l: &Line<'a>) -> Result<(&'a str, &'a str), FileError> {
    match l.text.split_once('=') {
        Some((k, v)) => Ok((k.trim(), v.trim())),
        None => err(l.no, "expected `key = value`"),
    }
}

fn parse_expr(text: &str, ctx: &ParseContext, line: usize) -> Result<Expr, FileError> {
    parse(text, ctx).map_err(|e| FileError {
        line,
        message: e.to_string(),
    })
}

fn parse_rational(text: &str, line: usize) -> Result<Rational, FileError> {
    let no_coords: [&str; 0] = [];
    let ctx = ParseContext::new(&no_coords);
    let e = parse_expr(text, &ctx, line)?;
    e.as_rational().cloned().ok_or(FileError {
        line,
        message: format!("`{text}` is not an exact rational constant"),
    })
}

fn parse_f64(text: &str, line: usize) -> Result<f64, FileError> {
    if let Ok(v) = text.parse::<f64>() {
        return Ok(v);
    }
    parse_rational(text, line).map(|r| crate::expr::rational_to_f64(&r))
}

/// `Gamma^a_bc` with 1-based single-digit indices.
fn parse_gamma_key(key: &str, dim: usize, line: usize) -> Result<(usize, usize, usize), FileError> {
    let rest = key.strip_prefix("Gamma^").ok_or(FileError {
        line,
        message: format!("expected `Gamma^a_bc`, got `{key}`"),
    })?;
    let (a, bc) = rest.split_once('_').ok_or(FileError {
        line,
        message: format!("expected `Gamma^a_bc`, got `{key}`"),
    })?;
    let parse_ix = |s: &str| -> Result<usize, FileError> {
        let v: usize = s.parse().map_err(|_| FileError {
            line,
            message: format!("bad index `{s}`"),
        })?;
        if v == 0 || v > dim {
            return err(line, format!("index {v} out of range 1..{dim}"));
        }
        Ok(v - 1)
    };
    if bc.len() != 2 {
        return err(line, format!("expected two lower indices in `{key}`"));
    }
    Ok((
        parse_ix(a)?,
        parse_ix(&bc[..1])?,
        parse_ix(&bc[1..])?,
    ))
}

/// `g_ab` with 1-based single-digit indices.
fn parse_metric_key(key: &str, dim: usize, line: usize) -> Result<(usize, usize), FileError> {
    let rest = key.strip_prefix("g_").ok_or(FileError {
        line,
        message: format!("expected `g_ab`, got `{key}`"),
    })?;
    if rest.len() != 2 {
        return err(line, format!("expected two indices in `{key}`"));
    }
    let parse_ix = |s: &str| -> Result<usize, FileError> {
        let v: usize = s.parse().map_err(|_| FileError {
            line,
            message: format!("bad index `{s}`"),
        })?;
        if v == 0 || v > dim {
            return err(line, format!("index {v} out of range 1..{dim}"));
        }
        Ok(v - 1)
    };
    Ok((parse_ix(&rest[..1])?, parse_ix(&rest[1..])?))
}

/// `Q^a`, 1-based.
fn parse_force_key(key: &str, dim: usize, line: usize) -> Result<usize, FileError> {
    let rest = key.strip_prefix("Q^").ok_or(FileError {
        line,
        message: format!("expected `Q^a` or `V`, got `{key}`"),
    })?;
    let v: usize = rest.parse().map_err(|_| FileError {
        line,
        message: format!("bad index `{rest}`"),
    })?;
    if v == 0 || v > dim {
        return err(line, format!("index {v} out of range 1..{dim}"));
    }
    Ok(v - 1)
}

/// `name in [lo, hi]`.
fn try_parse_range(text: &str) -> Option<(String, String, String)> {
    let (name, rest) = text.split_once(" in ")?;
    let rest = rest.trim();
    let inner = rest.strip_prefix('[')?.strip_suffix(']')?;
    let (lo, hi) = inner.split_once(',')?;
    Some((
        name.trim().to_string(),
        lo.trim().to_string(),
        hi.trim().to_string(),
    ))
}

/// `lhs > rhs` or `lhs < rhs` (strict). Returns (lhs, rhs, flip).
fn try_parse_inequality(text: &str) -> Option<(String, String, bool)> {
    if let Some((l, r)) = text.split_once('>') {
        return Some((l.trim().to_string(), r.trim().to_string(), false));
    }
    if let Some((l, r)) = text.split_once('<') {
        return Some((l.trim().to_string(), r.trim().to_string(), true));
    }
    None
}

/// Splits `poly(2) + poly(1, exp(x)) + fn(x*y)` at top-level `+`.
fn parse_ansatz_terms(
    text: &str,
    ctx: &ParseContext,
    line: usize,
) -> Result<Vec<AnsatzTerm>, FileError> {
    let mut terms = Vec::new();
    for part in split_top_level(text, '+') {
        let part = part.trim();
        if let Some(inner) = part.strip_prefix("poly(").and_then(|s| s.strip_suffix(')')) {
            let (deg_text, mult) = match split_top_level(inner, ',').as_slice() {
                [d] => (d.trim().to_string(), None),
                [d, m] => (d.trim().to_string(), Some(m.trim().to_string())),
                _ => return err(line, format!("bad poly(...) term `{part}`")),
            };
            let degree: usize = deg_text.parse().map_err(|_| FileError {
                line,
                message: format!("bad degree `{deg_text}`"),
            })?;
            match mult {
                None => terms.push(AnsatzTerm::Poly { degree }),
                Some(m) => terms.push(AnsatzTerm::ScaledPoly {
                    degree,
                    multiplier: parse_expr(&m, ctx, line)?,
                }),
            }
        } else if let Some(inner) = part.strip_prefix("fn(").and_then(|s| s.strip_suffix(')')) {
            terms.push(AnsatzTerm::Single(parse_expr(inner, ctx, line)?));
        } else {
            return err(
                line,
                format!("bad ansatz term `{part}`: expected poly(d), poly(d, f) or fn(f)"),
            );
        }
    }
    if terms.is_empty() {
        return err(line, "empty ansatz");
    }
    Ok(terms)
}

/// Parses a `--basis` override string (same syntax as an `[ansatz]` value).
pub fn parse_ansatz_override(text: &str, coords: &[String]) -> Result<Vec<AnsatzTerm>, FileError> {
    let ctx = ParseContext::new(coords);
    parse_ansatz_terms(text, &ctx, 0)
}

fn split_top_level(text: &str, sep: char) -> Vec<String> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut cur = String::new();
    for ch in text.chars() {
        match ch {
            '(' | '[' => depth += 1,
            ')' | ']' => depth -= 1,
            c if c == sep && depth == 0 => {
                out.push(std::mem::take(&mut cur));
                continue;
            }
            _ => {}
        }
        cur.push(ch);
    }
    out.push(cur);
    out
}
