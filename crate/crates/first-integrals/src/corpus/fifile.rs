//! FI coefficient files: one coefficient per line keyed by velocity
//! multi-index in the same expression grammar as system files.
//!
//! ```text
//! # cubic first integral
//! order = 3
//! M[1,1,1] = -y - c1/(18*c0)
//! M[1,1,2] = x/3
//! M[1] = c1/3*x^2 + 6*c0*x^2*y
//! M[] = 0
//! ```
//!
//! Indices are 1-based and must be nondecreasing (the stored representative
//! of the symmetric tensor). Unlisted components are zero; components may
//! depend on `t` for time-dependent integrals.

use super::sysfile::FileError;
use crate::conditions::{FICandidate, Provenance};
use crate::expr::{parse, Expr, ParseContext};
use crate::geometry::SymTensorField;
use std::collections::BTreeSet;
use std::fmt::Write as _;

/// Parses an FI file against the coordinate context of its system.
pub fn parse_fi(
    text: &str,
    coords: &[String],
    declared_params: &BTreeSet<String>,
) -> Result<FICandidate, FileError> {
    let ctx = ParseContext::new(coords);
    let dim = coords.len();
    let mut order: Option<usize> = None;
    let mut entries: Vec<(usize, Vec<usize>, Expr)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = match raw.find('#') {
            Some(p) => raw[..p].trim(),
            None => raw.trim(),
        };
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or(FileError {
            line: line_no,
            message: "expected `key = value`".into(),
        })?;
        let (key, value) = (key.trim(), value.trim());
        if key == "order" {
            order = Some(value.parse().map_err(|_| FileError {
                line: line_no,
                message: format!("bad order `{value}`"),
            })?);
            continue;
        }
        let idx = parse_m_key(key, dim, line_no)?;
        let e = parse(value, &ctx).map_err(|e| FileError {
            line: line_no,
            message: e.to_string(),
        })?;
        let mut used = BTreeSet::new();
        e.collect_params(&mut used);
        for u in used {
            if !declared_params.contains(&u) {
                return Err(FileError {
                    line: line_no,
                    message: format!("unknown identifier `{u}`"),
                });
            }
        }
        entries.push((line_no, idx, e));
    }
    let Some(order) = order else {
        return Err(FileError {
            line: 1,
            message: "missing `order = m` line".into(),
        });
    };
    let mut coeffs: Vec<SymTensorField> = (0..=order)
        .map(|r| SymTensorField::zeros(dim, r))
        .collect();
    let mut seen: BTreeSet<Vec<usize>> = BTreeSet::new();
    for (line_no, idx, e) in entries {
        if idx.len() > order {
            return Err(FileError {
                line: line_no,
                message: format!("index rank {} exceeds order {order}", idx.len()),
            });
        }
        if !seen.insert(idx.clone()) {
            return Err(FileError {
                line: line_no,
                message: "duplicate component".into(),
            });
        }
        coeffs[idx.len()].set(&idx, e);
    }
    Ok(FICandidate::new(coeffs, Provenance::Manual))
}

/// `M[1,2,...]` (nondecreasing, 1-based) or `M[]` / `M` for the scalar.
fn parse_m_key(key: &str, dim: usize, line: usize) -> Result<Vec<usize>, FileError> {
    if key == "M" {
        return Ok(Vec::new());
    }
    let inner = key
        .strip_prefix("M[")
        .and_then(|s| s.strip_suffix(']'))
        .ok_or(FileError {
            line,
            message: format!("expected `M[indices]`, got `{key}`"),
        })?;
    if inner.trim().is_empty() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for part in inner.split(',') {
        let v: usize = part.trim().parse().map_err(|_| FileError {
            line,
            message: format!("bad index `{part}`"),
        })?;
        if v == 0 || v > dim {
            return Err(FileError {
                line,
                message: format!("index {v} out of range 1..{dim}"),
            });
        }
        out.push(v - 1);
    }
    if out.windows(2).any(|w| w[0] > w[1]) {
        return Err(FileError {
            line,
            message: format!("indices in `{key}` must be nondecreasing"),
        });
    }
    Ok(out)
}

/// Renders a candidate in the FI file format (nonzero components only).
pub fn render_fi(candidate: &FICandidate, coords: &[String]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "order = {}", candidate.order);
    for coeff in &candidate.coeffs {
        for idx in coeff.indices() {
            let c = coeff.get(idx);
            if c.is_literal_zero() {
                continue;
            }
            let key: Vec<String> = idx.iter().map(|i| (i + 1).to_string()).collect();
            let _ = writeln!(out, "M[{}] = {}", key.join(","), c.to_text_with(coords));
        }
    }
    out
}
