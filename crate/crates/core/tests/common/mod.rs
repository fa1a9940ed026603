#![allow(dead_code)]

use pseudomode::eikonal::{initial_state, integrate_phase, PhaseTrajectory};
use pseudomode::pipeline::{initial_w2, phase_options, run_audit, RunConfig};
use pseudomode::symbols::{model_from_json, ModelProblem};
use serde_json::{json, Value};

pub fn custom(v: Value) -> ModelProblem {
    model_from_json(&v).expect("valid custom model")
}

/// One x and one y dimension, k = 2, η₀ = ξ₀ = 1; `f` rows as in the model file format.
pub fn model_1x1(f: Value) -> ModelProblem {
    custom(json!({"name": "test", "k": 2, "dims": {"nx": 1, "ny": 1}, "eta0": [1.0], "f_poly": f}))
}

pub fn trajectory_with(m: &ModelProblem, cfg: &RunConfig, lambda: f64) -> PhaseTrajectory {
    let a = run_audit(m, cfg.seed).unwrap();
    let w2 = initial_w2(m, a.sign_change.as_ref().expect("sign change")).unwrap();
    let st = initial_state(m, &w2, cfg.k_trunc, cfg.im_w02_init);
    integrate_phase(m, &st, &phase_options(cfg, lambda)).unwrap()
}

pub fn trajectory(m: &ModelProblem, lambda: f64) -> PhaseTrajectory {
    trajectory_with(m, &RunConfig::default(), lambda)
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}
