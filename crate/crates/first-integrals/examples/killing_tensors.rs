//! Generalized Killing tensor search over a declared basis: the
//! exponential-connection system admits exactly one rank-2 Killing tensor,
//! no Killing vectors, and no reducible Killing tensors.
//!
//! Run with:
//!   cargo run --example killing_tensors

use first_integrals::conditions::{kt_assembly, kv_assembly, reducible_kt_assembly};
use first_integrals::corpus::parse_system;
use first_integrals::solver::{solve, SolveOptions};

fn main() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/corpus/app1.sys");
    let def = parse_system(&std::fs::read_to_string(path).unwrap()).unwrap();
    let sys = &def.system;
    let opts = SolveOptions::default();

    // the [ansatz] block of the file declares the default basis:
    // monomials of degree <= 2, plain and times exp(12 beta w / u^2)
    for (label, assembly, slot) in [
        ("rank-2 Killing tensors", kt_assembly(2, sys).unwrap(), "T"),
        ("rank-1 Killing vectors", kv_assembly(sys).unwrap(), "T"),
        (
            "reducible Killing tensors (generating vectors)",
            reducible_kt_assembly(sys).unwrap(),
            "B",
        ),
    ] {
        let slots = vec![(slot.to_string(), 0)];
        let _ = slots;
        let space = def
            .ansatz_space(&assembly.conditions.slot_ranks(), None)
            .unwrap();
        let family = solve(&assembly, &space, sys, &opts).unwrap();
        println!(
            "{label}: dimension {} ({} certified)",
            family.dimension,
            family.certified_dimension()
        );
        for member in &family.members {
            for (k, key) in family.coefficient_keys.iter().enumerate() {
                let coeff = member.coeffs.as_ref().map(|c| c[k].clone());
                if let Some(c) = coeff {
                    if !num::Zero::is_zero(&c) {
                        let idx: Vec<String> =
                            key.component.iter().map(|i| (i + 1).to_string()).collect();
                        println!(
                            "    {}[{}] = {} * {}",
                            key.slot,
                            idx.join(","),
                            c,
                            key.basis.to_text_with(&def.coord_names)
                        );
                    }
                }
            }
        }
    }
    println!();
    println!("(nonexistence statements hold within the declared basis span)");
}
