//! Conservation-drift verification along integrated trajectories, including
//! a deliberately corrupted control candidate and a trajectory table dump.
//!
//! Run with:
//!   cargo run --example drift_verification

use first_integrals::corpus::{parse_fi, parse_system};
use first_integrals::dynamics::{batch_verify, dump_trajectory, VerifyOptions};
use first_integrals::Expr;
use std::collections::BTreeSet;

fn main() {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/corpus");
    let def = parse_system(&std::fs::read_to_string(format!("{dir}/v1.sys")).unwrap()).unwrap();
    let declared: BTreeSet<String> = def.system.params.free.iter().cloned().collect();
    let load = |name: &str| {
        parse_fi(
            &std::fs::read_to_string(format!("{dir}/fis/{name}")).unwrap(),
            &def.coord_names,
            &declared,
        )
        .unwrap()
    };
    let j1 = load("v1_j1.fi");
    let energy = load("v1_energy.fi");
    let mut corrupted = j1.clone();
    let flipped = Expr::neg(corrupted.coeffs[1].get(&[0]).clone());
    corrupted.coeffs[1].set(&[0], flipped);

    let params = [("c0".to_string(), 1.0), ("c1".to_string(), 1.5)].into();
    let report = batch_verify(
        &def.system,
        &params,
        &[
            ("energy".to_string(), energy),
            ("J1".to_string(), j1),
            ("J1-sign-flipped".to_string(), corrupted),
        ],
        &VerifyOptions::default(),
    )
    .unwrap();

    println!("tolerance: {:.0e}, span: [0, 5], {} trajectories", report.tolerance, report.records.len());
    for v in &report.verdicts {
        println!(
            "  {:18} max relative drift {:.3e}  -> {}",
            v.name,
            v.worst_rel_drift,
            if v.conserved { "conserved" } else { "REJECTED" }
        );
    }

    // first few lines of the node table (17 significant digits per column)
    let names: Vec<(String, _)> = report
        .verdicts
        .iter()
        .take(2)
        .map(|v| (v.name.clone(), ()))
        .collect();
    let _ = names;
    let table = dump_trajectory(
        &report.trajectories[0],
        &[],
        &params,
    )
    .unwrap();
    println!();
    println!("trajectory table head:");
    for line in table.lines().take(4) {
        println!("  {line}");
    }
}
