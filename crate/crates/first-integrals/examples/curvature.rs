//! Curvature of a symmetric (non-metrical) connection, read straight from a
//! system-definition file.
//!
//! Run with:
//!   cargo run --example curvature

use first_integrals::corpus::parse_system;
use first_integrals::geometry::curvature;

fn main() {
    for file in ["app1.sys", "polar2d.sys"] {
        let path = format!("{}/corpus/{file}", env!("CARGO_MANIFEST_DIR"));
        let def = parse_system(&std::fs::read_to_string(path).unwrap()).unwrap();
        println!("{file}:");
        let r = curvature(&def.system.connection);
        let n = def.system.dim;
        let mut nonzero = 0;
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    for d in 0..n {
                        let comp = r.get(a, b, c, d);
                        if !comp.is_literal_zero() {
                            nonzero += 1;
                            println!(
                                "  R^{}_{}{}{} = {}",
                                a + 1,
                                b + 1,
                                c + 1,
                                d + 1,
                                comp.to_text_with(&def.coord_names)
                            );
                        }
                    }
                }
            }
        }
        if nonzero == 0 {
            println!("  all components zero (flat, even though the connection is not)");
        }
        println!();
    }
}
