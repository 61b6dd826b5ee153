#![allow(dead_code)]

use budgex::model::FeatureMap;
use budgex::synth::{
    CovariateSpec, Environment, HardInstanceSpec, LinearEnvSpec, ObsMarginalSpec, ObsPolicySpec, WorldSpec,
};

pub fn alternating_signs(d: usize) -> Vec<i8> {
    (0..d).map(|j| if j % 2 == 0 { 1 } else { -1 }).collect()
}

pub fn hard_env(d: usize, delta: f64) -> Environment {
    Environment::Hard(HardInstanceSpec { d, delta, theta_signs: alternating_signs(d), norm_budget: None })
}

/// A world whose log is irrelevant (random strategy, theory mode).
pub fn hard_world(d: usize, delta: f64, n_pool: usize) -> WorldSpec {
    WorldSpec {
        environment: hard_env(d, delta),
        obs_policy: ObsPolicySpec::Logistic { weights: vec![0.0; d], bias: 0.0, sharpness: 1.0 },
        obs_marginal: ObsMarginalSpec::None,
        n_pool,
        n_obs: 1,
        seed: 0,
    }
}

/// Uniform covariates on [−1, 1]², φ(x) = (1, x₁, x₂), constant baseline.
pub fn box_env() -> Environment {
    Environment::Linear(LinearEnvSpec {
        covariates: CovariateSpec::Box { dim: 2, half_width: 1.0 },
        feature_map: FeatureMap::affine(
            vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![1.0, 0.0, 0.0],
            3f64.sqrt(),
        ),
        theta_star: vec![0.1, 0.15, -0.1],
        baseline_intercept: 0.5,
        baseline_weights: vec![],
        norm_budget: 0.25,
    })
}

/// Weak overlap: the historical policy treated almost exactly when x₂ > 0, and
/// its log over-represents small x₁.
pub fn weak_overlap_world(n_pool: usize, n_obs: usize, tilt: f64) -> WorldSpec {
    WorldSpec {
        environment: box_env(),
        obs_policy: ObsPolicySpec::ThresholdDeterministic { direction: vec![0.0, 0.0, 1.0], cutoff: 0.0, leak: 0.02 },
        obs_marginal: ObsMarginalSpec::Tilt { direction: vec![0.0, -1.0, 0.0], strength: tilt },
        n_pool,
        n_obs,
        seed: 0,
    }
}
