//! Shared unit-test fixtures: the example systems and their known first
//! integrals, built programmatically.

use crate::conditions::{FICandidate, Provenance};
use crate::expr::{parse, rat, Domain, Expr, ParseContext};
use crate::geometry::{DynamicalSystem, ParamSet, SymTensorField, SymmetricConnection};
use std::collections::BTreeMap;

pub fn ex(text: &str, coords: &[&str]) -> Expr {
    parse(text, &ParseContext::new(coords)).unwrap()
}

/// Non-Riemannian 2d system: ü = -8β/u³(u u̇ ẇ - w u̇²) - 1/u²,
/// ẅ = -4β/u³(u ẇ² - 4w u̇ ẇ) + 2w/u³.
pub fn app1_system() -> DynamicalSystem {
    let names = ["u", "w"];
    let c = |t: &str| ex(t, &names);
    let mut conn = SymmetricConnection::flat(2);
    conn.set_gamma(0, 0, 0, c("-8*beta*w/u^3"));
    conn.set_gamma(0, 0, 1, c("4*beta/u^2"));
    conn.set_gamma(1, 0, 1, c("-8*beta*w/u^3"));
    conn.set_gamma(1, 1, 1, c("4*beta/u^2"));
    let mut q = SymTensorField::zeros(2, 1);
    q.set(&[0], c("1/u^2"));
    q.set(&[1], c("-2*w/u^3"));
    let domain = Domain {
        coord_boxes: vec![(rat(5, 2), rat(4, 1)), (rat(1, 2), rat(2, 1))],
        time_range: (rat(0, 1), rat(5, 1)),
        param_ranges: [("beta".to_string(), (rat(1, 3), rat(2, 1)))].into(),
        fixed_params: BTreeMap::new(),
        constraints: vec![c("u")],
    };
    DynamicalSystem::new(
        names.iter().map(|s| s.to_string()).collect(),
        conn,
        q,
        domain,
    )
    .unwrap()
    .with_params(ParamSet {
        fixed: BTreeMap::new(),
        free: vec!["beta".to_string()],
    })
}

/// The quadratic FI e^{12βw/u²}(u̇ẇ + 1/(12β)) of the system above.
pub fn app1_qfi() -> FICandidate {
    let names = ["u", "w"];
    let c = |t: &str| ex(t, &names);
    let mut m2 = SymTensorField::zeros(2, 2);
    m2.set(&[0, 1], c("exp(12*beta*w/u^2)/2"));
    let m1 = SymTensorField::zeros(2, 1);
    let m0 = SymTensorField::scalar(2, c("exp(12*beta*w/u^2)/(12*beta)"));
    FICandidate::new(vec![m0, m1, m2], Provenance::Manual)
}

fn euclid_metric() -> SymTensorField {
    let mut g = SymTensorField::zeros(2, 2);
    g.set(&[0, 0], Expr::one());
    g.set(&[1, 1], Expr::one());
    g
}

fn conservative_2d(
    potential_grad: [&str; 2],
    domain: Domain,
    free: &[&str],
) -> DynamicalSystem {
    let names = ["x", "y"];
    let mut q = SymTensorField::zeros(2, 1);
    q.set(&[0], ex(potential_grad[0], &names));
    q.set(&[1], ex(potential_grad[1], &names));
    DynamicalSystem::from_metric(
        names.iter().map(|s| s.to_string()).collect(),
        euclid_metric(),
        q,
        domain,
    )
    .unwrap()
    .with_params(ParamSet {
        fixed: BTreeMap::new(),
        free: free.iter().map(|s| s.to_string()).collect(),
    })
}

/// Superintegrable potential V1 = c0(x² + 9y²) + c1 y (so Q = ∇V1).
pub fn v1_system() -> DynamicalSystem {
    let mut domain = Domain::symmetric(2, rat(3, 2));
    domain.param_ranges = [
        ("c0".to_string(), (rat(1, 2), rat(2, 1))),
        ("c1".to_string(), (rat(1, 2), rat(2, 1))),
    ]
    .into();
    domain.time_range = (rat(0, 1), rat(5, 1));
    conservative_2d(["2*c0*x", "18*c0*y + c1"], domain, &["c0", "c1"])
}

/// Cubic FI of V1: (xẏ - yẋ)ẋ² - c1/(18c0) ẋ³ + (c1/3)x²ẋ + 6c0x²yẋ - (2c0/3)x³ẏ.
pub fn v1_j1() -> FICandidate {
    let names = ["x", "y"];
    let c = |t: &str| ex(t, &names);
    let mut m3 = SymTensorField::zeros(2, 3);
    m3.set(&[0, 0, 0], c("-y - c1/(18*c0)"));
    m3.set(&[0, 0, 1], c("x/3"));
    let mut m1 = SymTensorField::zeros(2, 1);
    m1.set(&[0], c("c1/3*x^2 + 6*c0*x^2*y"));
    m1.set(&[1], c("-2*c0/3*x^3"));
    FICandidate::new(
        vec![
            SymTensorField::scalar(2, Expr::zero()),
            m1,
            SymTensorField::zeros(2, 2),
            m3,
        ],
        Provenance::Manual,
    )
}

/// Integrable potential V2 = k (x² - y²)^(-2/3).
pub fn v2_system() -> DynamicalSystem {
    let names = ["x", "y"];
    let domain = Domain {
        coord_boxes: vec![(rat(3, 2), rat(5, 2)), (rat(1, 4), rat(1, 1))],
        time_range: (rat(0, 1), rat(5, 1)),
        param_ranges: [("k".to_string(), (rat(1, 2), rat(2, 1)))].into(),
        fixed_params: BTreeMap::new(),
        constraints: vec![ex("x^2 - y^2", &names)],
    };
    conservative_2d(
        [
            "-4/3*k*x*(x^2 - y^2)^(-5/3)",
            "4/3*k*y*(x^2 - y^2)^(-5/3)",
        ],
        domain,
        &["k"],
    )
}

/// Cubic FI of V2: (xẏ - yẋ)(ẏ² - ẋ²) + 4V2(yẋ + xẏ).
pub fn v2_j2() -> FICandidate {
    let names = ["x", "y"];
    let c = |t: &str| ex(t, &names);
    let mut m3 = SymTensorField::zeros(2, 3);
    m3.set(&[0, 0, 0], c("y"));
    m3.set(&[0, 0, 1], c("-x/3"));
    m3.set(&[0, 1, 1], c("-y/3"));
    m3.set(&[1, 1, 1], c("x"));
    let mut m1 = SymTensorField::zeros(2, 1);
    m1.set(&[0], c("4*k*(x^2 - y^2)^(-2/3)*y"));
    m1.set(&[1], c("4*k*(x^2 - y^2)^(-2/3)*x"));
    FICandidate::new(
        vec![
            SymTensorField::scalar(2, Expr::zero()),
            m1,
            SymTensorField::zeros(2, 2),
            m3,
        ],
        Provenance::Manual,
    )
}

/// Energy FI ½γ_ab q̇^a q̇^b + V of a metric system with potential V.
pub fn energy_fi(sys: &DynamicalSystem, potential: Expr) -> FICandidate {
    let g = sys.metric.as_ref().expect("metric system");
    FICandidate::new(
        vec![
            SymTensorField::scalar(sys.dim, potential),
            SymTensorField::zeros(sys.dim, 1),
            g.scale_rat(rat(1, 2)),
        ],
        Provenance::Manual,
    )
}

/// Free particle on the Euclidean plane.
pub fn euclid2d_system() -> DynamicalSystem {
    let mut domain = Domain::symmetric(2, rat(2, 1));
    domain.time_range = (rat(0, 1), rat(5, 1));
    conservative_2d(["0", "0"], domain, &[])
}

/// One-dimensional harmonic oscillator q̈ = -q.
pub fn oscillator1d_system() -> DynamicalSystem {
    let names = ["q"];
    let mut g = SymTensorField::zeros(1, 2);
    g.set(&[0, 0], Expr::one());
    let mut force = SymTensorField::zeros(1, 1);
    force.set(&[0], ex("q", &names));
    let mut domain = Domain::symmetric(1, rat(2, 1));
    domain.time_range = (rat(0, 1), rat(20, 1));
    DynamicalSystem::from_metric(vec!["q".to_string()], g, force, domain).unwrap()
}

/// Full parameter values for fixtures at generic test parameters.
pub fn test_params(sys: &DynamicalSystem) -> BTreeMap<String, f64> {
    let mut free = BTreeMap::new();
    for (i, name) in sys.params.free.iter().enumerate() {
        free.insert(name.clone(), 1.0 + 0.25 * (i as f64 + 1.0));
    }
    sys.param_values(&free).unwrap()
}
