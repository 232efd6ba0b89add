//! Time-dependent first integrals. Two demonstrations:
//!
//! 1. The restricted potential (su1) admits, besides its autonomous cubic
//!    integral, an explicitly time-dependent cubic one — certified both
//!    symbolically and along trajectories.
//! 2. The inverted oscillator q̈ = q carries the exponential-in-time family:
//!    solving at λ = 1, 2, 3 finds one-dimensional families at 1 and 2 and
//!    nothing at 3.
//!
//! Run with:
//!   cargo run --example time_dependent_fi

use first_integrals::conditions::assemble_integral2;
use first_integrals::corpus::{parse_fi, parse_system};
use first_integrals::expr::{rat, Domain, Expr, ZeroConfig};
use first_integrals::geometry::{DynamicalSystem, SymTensorField};
use first_integrals::solver::{monomials, solve, AnsatzSpace, SolveOptions};
use std::collections::BTreeSet;

fn main() {
    // --- the time-dependent cubic on the restricted potential ---
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/corpus");
    let def = parse_system(&std::fs::read_to_string(format!("{dir}/su1.sys")).unwrap()).unwrap();
    let declared: BTreeSet<String> = def.system.params.free.iter().cloned().collect();
    let j2 = parse_fi(
        &std::fs::read_to_string(format!("{dir}/fis/su1_j2.fi")).unwrap(),
        &def.coord_names,
        &declared,
    )
    .unwrap();
    println!("su1 J2 time-dependent: {}", j2.is_time_dependent());
    let verdict = j2.certify_symbolic(&def.system, ZeroConfig::default()).unwrap();
    println!("su1 J2 residual zero:  {}", verdict.is_zero());

    // --- the exponential family on the inverted oscillator ---
    let mut g = SymTensorField::zeros(1, 2);
    g.set(&[0, 0], Expr::one());
    let mut force = SymTensorField::zeros(1, 1);
    force.set(&[0], Expr::neg(Expr::coord(0))); // q̈ = -Q = +q
    let sys = DynamicalSystem::from_metric(
        vec!["q".to_string()],
        g,
        force,
        Domain::symmetric(1, rat(2, 1)),
    )
    .unwrap();
    println!();
    println!("inverted oscillator, exponential family at order 2:");
    for lambda in 1..=3i64 {
        let assembly = assemble_integral2(2, Expr::int(lambda), &sys).unwrap();
        let space = AnsatzSpace::new().with_basis("L1", monomials(1, 3));
        let family = solve(&assembly, &space, &sys, &SolveOptions::default()).unwrap();
        println!(
            "  lambda = {lambda}: family dimension {} ({} certified)",
            family.dimension,
            family.certified_dimension()
        );
        for m in family.members.iter().filter(|m| m.certified) {
            if let Some(c) = &m.candidate {
                let names = vec!["q".to_string()];
                println!(
                    "    I = {} * qdot + {}",
                    c.coeffs[1].get(&[0]).to_text_with(&names),
                    c.coeffs[0].scalar_value().to_text_with(&names)
                );
            }
        }
    }
}
