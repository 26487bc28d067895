#![allow(dead_code)]

use kamrev::revsystem::{random_perturbation, FamilySpec, PerturbationShape, ReversibleFamily};

pub const GOLDEN: f64 = 1.618_033_988_749_895;

/// `n = 2, m = p = s = 1`, `Q(mu) = [[0, 1], [-(2 + mu), 0]]`, `R = diag(1, -1)`.
pub fn base_spec() -> FamilySpec {
    serde_json::from_str(
        r#"{
        "n": 2, "m": 1, "p": 1, "s": 1,
        "R": [[1, 0], [0, -1]],
        "Q": [{"row": 0, "col": 1, "coeff": 1.0},
              {"row": 1, "col": 0, "coeff": -2.0},
              {"row": 1, "col": 0, "coeff": -1.0, "mu": [1]}],
        "xi": [{"component": 0, "coeff": 0.5, "z": [1, 0]},
               {"component": 1, "coeff": 0.3, "y": [2]}],
        "eta": [{"component": 0, "coeff": 0.2, "z": [2, 0]},
                {"component": 0, "coeff": 0.1, "y": [1], "z": [0, 1]}],
        "zeta": [{"component": 0, "coeff": 0.3, "y": [1], "z": [1, 0]},
                 {"component": 0, "coeff": 0.2, "z": [0, 1], "sigma": [1]},
                 {"component": 1, "coeff": 0.25, "z": [2, 0]},
                 {"component": 1, "coeff": 0.1, "z": [1, 0], "sigma": [1]}]
    }"#,
    )
    .unwrap()
}

pub fn unperturbed() -> ReversibleFamily<f64> {
    ReversibleFamily::from_spec(&base_spec()).unwrap()
}

/// The unperturbed family plus a random conforming perturbation of size `delta`.
pub fn perturbed(delta: f64, seed: u64) -> ReversibleFamily<f64> {
    let base = unperturbed();
    let shape = PerturbationShape { max_mode: 3, degree: 2, magnitude: delta };
    let pert = random_perturbation(&base, &shape, seed);
    base.with_perturbation(&pert)
}

pub fn omega0() -> Vec<f64> {
    vec![1.0, GOLDEN]
}
