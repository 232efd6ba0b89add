//! The exact expression kernel: parsing, differentiation, two-precision
//! evaluation and the randomized zero test.
//!
//! Run with:
//!   cargo run --example expression_kernel

use first_integrals::expr::{
    parse, Bindings, Domain, ParseContext, Var, ZeroConfig, ZeroTester,
};
use first_integrals::Expr;

fn main() {
    let ctx = ParseContext::new(&["u", "w"]);
    let names = vec!["u".to_string(), "w".to_string()];

    // exact rational powers, exponentials, parameters
    let e = parse("exp(12*beta*w/u^2)/(12*beta)", &ctx).unwrap();
    println!("expression   : {}", e.to_text_with(&names));

    let dw = e.differentiate(Var::Coord(1));
    println!("d/dw         : {}", dw.to_text_with(&names));

    let b = Bindings::new(0.0, vec![2.0, 2.0]).with_param("beta", 1.0);
    println!("value at u=w=2, beta=1: {}", e.eval_f64(&b).unwrap());

    // the probabilistic zero test distinguishes identities from near-misses
    let dom = Domain::unit(2).with_param_range("beta", first_integrals::expr::rat(1, 3), first_integrals::expr::rat(2, 1));
    let tester = ZeroTester::new(&dom, ZeroConfig::default());

    let identity = parse("(u + w)^2 - u^2 - 2*u*w - w^2", &ctx).unwrap();
    println!(
        "(u+w)^2 - u^2 - 2uw - w^2 is zero: {}",
        tester.test(&identity).unwrap().is_zero()
    );

    let near_miss = parse("(u + w)^2 - u^2 - 2*u*w - w^2 + u/1000000000", &ctx).unwrap();
    match tester.test(&near_miss).unwrap() {
        first_integrals::ZeroVerdict::Nonzero { value, .. } => {
            println!("perturbed identity caught with witness value {value:.3e}")
        }
        _ => println!("perturbation missed (unexpected)"),
    }

    // round-trip stability: printed text reparses to the same function
    let printed = dw.to_text_with(&names);
    let reparsed = parse(&printed, &ctx).unwrap();
    let diff = Expr::sub(dw, reparsed);
    println!(
        "print -> parse round trip exact: {}",
        tester.test(&diff).unwrap().is_zero()
    );
}
