//! Quadratic first-integral discovery on the non-Riemannian system: the
//! order-2 polynomial-in-time family reduces to a one-dimensional nullspace
//! whose single member is e^{12βw/u²}(u̇ẇ + 1/(12β)).
//!
//! Run with:
//!   cargo run --example qfi_discovery

use first_integrals::conditions::assemble_integral1;
use first_integrals::corpus::{parse_system, render_fi};
use first_integrals::solver::{solve, SolveOptions};

fn main() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/corpus/app1.sys");
    let def = parse_system(&std::fs::read_to_string(path).unwrap()).unwrap();
    let assembly = assemble_integral1(2, 1, &def.system).unwrap();

    println!("conditions of the family:");
    for e in &assembly.conditions.entries {
        println!("  {} (rank {})", e.name, e.rank);
    }

    let space = def
        .ansatz_space(&assembly.conditions.slot_ranks(), None)
        .unwrap();
    let family = solve(&assembly, &space, &def.system, &SolveOptions::default()).unwrap();

    println!();
    println!("family dimension: {}", family.dimension);
    println!(
        "parameter draw:   {}",
        family
            .params
            .iter()
            .map(|(k, v)| format!("{k} = {v}"))
            .collect::<Vec<_>>()
            .join(", ")
    );
    println!(
        "stable across parameter re-draws: {:?}",
        family.parameter_stable
    );
    for member in &family.members {
        println!("certified: {}", member.certified);
        if let Some(c) = &member.candidate {
            println!("--- first integral (coefficient file form) ---");
            print!("{}", render_fi(c, &def.coord_names));
        }
    }
}
