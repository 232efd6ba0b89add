//! The gauged weak Noether symmetry associated with a first integral of a
//! metric system: ξ = 0, η_a = -∂I/∂q̇^a, f = I - (∂I/∂q̇)·q̇.
//!
//! Run with:
//!   cargo run --example noether_map

use first_integrals::conditions::noether_from_fi;
use first_integrals::corpus::{parse_fi, parse_system};
use first_integrals::expr::Bindings;
use std::collections::BTreeSet;

fn main() {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/corpus");
    let def = parse_system(&std::fs::read_to_string(format!("{dir}/v1.sys")).unwrap()).unwrap();
    let declared: BTreeSet<String> = def.system.params.free.iter().cloned().collect();

    for fi_name in ["v1_energy.fi", "v1_j1.fi"] {
        let cand = parse_fi(
            &std::fs::read_to_string(format!("{dir}/fis/{fi_name}")).unwrap(),
            &def.coord_names,
            &declared,
        )
        .unwrap();
        let gen = noether_from_fi(&cand, &def.system).unwrap();
        println!("{fi_name}: generator with ξ = 0, φ_a = 0");
        for (r, term) in gen.eta.iter().enumerate() {
            if !term.is_structurally_zero() {
                println!("  η degree-{r} tensor:");
                for idx in term.indices() {
                    let c = term.get(idx);
                    if !c.is_literal_zero() {
                        let ix: Vec<String> = idx.iter().map(|i| (i + 1).to_string()).collect();
                        println!("    [{}] = {}", ix.join(","), c.to_text_with(&def.coord_names));
                    }
                }
            }
        }
        // spot-check the defining identity f = I + η·q̇ (η = -∂I/∂q̇)
        let b = Bindings::new(0.3, vec![0.8, -0.4])
            .with_param("c0", 1.0)
            .with_param("c1", 1.25);
        let qd = [0.5, 0.9];
        let f = gen.eval_f(&b, &qd).unwrap();
        let i = cand.eval(&b, &qd).unwrap();
        let eta_dot: f64 = (0..2)
            .map(|a| gen.eval_eta(a, &b, &qd).unwrap() * qd[a])
            .sum();
        println!("  identity |f - I - η·q̇| = {:.2e}", (f - i - eta_dot).abs());
        println!();
    }
}
