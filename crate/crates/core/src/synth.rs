//! Two-source synthetic worlds.
//!
//! An [`Environment`] fixes the target covariate marginal ℙ_X, a feature map φ,
//! and the potential-outcome laws. Three families are provided:
//!
//! * [`LinearEnvSpec`]: τ(x) = ⟨θ*, φ(x)⟩ with an affine baseline m(x); outcomes
//!   are Bernoulli with μ₁ = m + τ/2 and μ₀ = m − τ/2. Specs that would push μ
//!   outside [0, 1] anywhere on the support are rejected, never clipped.
//! * [`HardInstanceSpec`]: d equally likely segments with φ(x⁽ʲ⁾) = e_j and
//!   Y(t) | x⁽ʲ⁾ ~ Bern(1/2 ± θ_j/2), θ_j = ±Δ.
//! * [`ScaledOutcomeSpec`]: a single segment where Y(t) = s_t·Bern(q_t), used to
//!   exercise arms with different second moments.
//!
//! Observational logs are drawn from a (possibly tilted) covariate marginal with
//! treatment from a historical policy e_obs; outcome laws are shared with the pool.

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FeatureMap, FeatureMapKind, FeatureVector, ObsRecord, PoolUnit};
use crate::rng::{self, tag, StreamRng};

/// KL constant used to size the hard-instance gap.
pub const C_KL: f64 = 16.0 / 3.0;

/// Support of the target covariate marginal ℙ_X.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CovariateSpec {
    /// Uniform on [−half_width, half_width]^dim.
    Box { dim: usize, half_width: f64 },
    /// Uniform over segment indices 1..=count, stored as a single coordinate.
    Segments { count: usize },
}

impl CovariateSpec {
    fn dim(&self) -> usize {
        match self {
            CovariateSpec::Box { dim, .. } => *dim,
            CovariateSpec::Segments { .. } => 1,
        }
    }

    fn sample(&self, rng: &mut StreamRng) -> Vec<f64> {
        match self {
            CovariateSpec::Box { dim, half_width } => {
                (0..*dim).map(|_| rng.random_range(-*half_width..=*half_width)).collect()
            }
            CovariateSpec::Segments { count } => vec![rng.random_range(1..=*count) as f64],
        }
    }

    fn support_points(&self) -> Option<Vec<Vec<f64>>> {
        match self {
            CovariateSpec::Segments { count } => Some((1..=*count).map(|j| vec![j as f64]).collect()),
            CovariateSpec::Box { .. } => None,
        }
    }
}

/// A linear-realizable CATE world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearEnvSpec {
    pub covariates: CovariateSpec,
    pub feature_map: FeatureMap,
    pub theta_star: Vec<f64>,
    #[serde(default = "half")]
    pub baseline_intercept: f64,
    /// Coefficients of the baseline in φ-space; empty means zero.
    #[serde(default)]
    pub baseline_weights: Vec<f64>,
    /// Norm budget S with ‖θ*‖₂ ≤ S.
    pub norm_budget: f64,
}

fn half() -> f64 {
    0.5
}

/// The d-segment Bernoulli construction behind the √(d/B) lower bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardInstanceSpec {
    pub d: usize,
    pub delta: f64,
    pub theta_signs: Vec<i8>,
    #[serde(default)]
    pub norm_budget: Option<f64>,
}

impl HardInstanceSpec {
    /// All-positive signs with the default gap for budget `budget`.
    pub fn with_default_delta(d: usize, budget: usize) -> Self {
        Self { d, delta: default_hard_delta(d, budget, None), theta_signs: vec![1; d], norm_budget: None }
    }
}

/// Δ = min{1/4, √(d/(16·C_KL·B)), S/√d}.
pub fn default_hard_delta(d: usize, budget: usize, norm_budget: Option<f64>) -> f64 {
    let d_f = d as f64;
    let mut delta = 0.25f64.min((d_f / (16.0 * C_KL * budget.max(1) as f64)).sqrt());
    if let Some(s) = norm_budget {
        delta = delta.min(s / d_f.sqrt());
    }
    delta
}

/// Single-segment world with Y(t) = scale_t · Bern(prob_t).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaledOutcomeSpec {
    pub treated_scale: f64,
    pub treated_prob: f64,
    pub control_scale: f64,
    pub control_prob: f64,
}

/// A synthetic target population with known potential-outcome laws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum Environment {
    Linear(LinearEnvSpec),
    Hard(HardInstanceSpec),
    Scaled(ScaledOutcomeSpec),
}

impl Environment {
    pub fn validate(&self) -> Result<()> {
        match self {
            Environment::Linear(spec) => validate_linear(spec),
            Environment::Hard(spec) => {
                if spec.d == 0 {
                    return Err(Error::InvalidSpec("hard instance needs d >= 1".into()));
                }
                if !(spec.delta > 0.0 && spec.delta <= 0.5) {
                    return Err(Error::InvalidSpec(format!("hard instance needs 0 < delta <= 1/2, got {}", spec.delta)));
                }
                if spec.theta_signs.len() != spec.d || spec.theta_signs.iter().any(|s| s.abs() != 1) {
                    return Err(Error::InvalidSpec("theta_signs must be d entries of +1/-1".into()));
                }
                if let Some(s) = spec.norm_budget {
                    if (spec.d as f64).sqrt() * spec.delta > s * (1.0 + 1e-12) {
                        return Err(Error::InvalidSpec(format!("sqrt(d)*delta exceeds norm budget {s}")));
                    }
                }
                Ok(())
            }
            Environment::Scaled(spec) => {
                let ok = |v: f64| (0.0..=1.0).contains(&v);
                if !(ok(spec.treated_scale) && ok(spec.treated_prob) && ok(spec.control_scale) && ok(spec.control_prob)) {
                    return Err(Error::InvalidSpec("scaled outcome parameters must lie in [0, 1]".into()));
                }
                Ok(())
            }
        }
    }

    pub fn feature_map(&self) -> FeatureMap {
        match self {
            Environment::Linear(spec) => spec.feature_map.clone(),
            Environment::Hard(spec) => FeatureMap::segment_one_hot(spec.d),
            Environment::Scaled(_) => FeatureMap::segment_one_hot(1),
        }
    }

    pub fn dim(&self) -> usize {
        self.feature_map().output_dim()
    }

    pub fn theta_star(&self) -> FeatureVector {
        match self {
            Environment::Linear(spec) => DVector::from_column_slice(&spec.theta_star),
            Environment::Hard(spec) => {
                DVector::from_iterator(spec.d, spec.theta_signs.iter().map(|&s| f64::from(s) * spec.delta))
            }
            Environment::Scaled(spec) => DVector::from_element(
                1,
                spec.treated_scale * spec.treated_prob - spec.control_scale * spec.control_prob,
            ),
        }
    }

    /// The declared S (for the hard instance without one, √d·Δ = ‖θ‖₂).
    pub fn norm_budget(&self) -> f64 {
        match self {
            Environment::Linear(spec) => spec.norm_budget,
            Environment::Hard(spec) => spec.norm_budget.unwrap_or((spec.d as f64).sqrt() * spec.delta),
            Environment::Scaled(_) => self.theta_star().norm(),
        }
    }

    fn covariates(&self) -> CovariateSpec {
        match self {
            Environment::Linear(spec) => spec.covariates.clone(),
            Environment::Hard(spec) => CovariateSpec::Segments { count: spec.d },
            Environment::Scaled(_) => CovariateSpec::Segments { count: 1 },
        }
    }

    pub fn covariate_dim(&self) -> usize {
        self.covariates().dim()
    }

    /// Draws x ~ ℙ_X.
    pub fn sample_covariate(&self, rng: &mut StreamRng) -> Vec<f64> {
        self.covariates().sample(rng)
    }

    /// The support points when ℙ_X is uniform on a finite set.
    pub fn support_points(&self) -> Option<Vec<Vec<f64>>> {
        self.covariates().support_points()
    }

    /// μ_t(x) = E[Y(t) | X = x].
    pub fn mean_outcome(&self, x: &[f64], t: u8) -> Result<f64> {
        match self {
            Environment::Linear(spec) => {
                let phi = spec.feature_map.apply(x)?;
                let tau = dot(&spec.theta_star, &phi);
                let m = spec.baseline_intercept + dot(&spec.baseline_weights, &phi);
                Ok(if t == 1 { m + tau / 2.0 } else { m - tau / 2.0 })
            }
            Environment::Hard(spec) => {
                let j = FeatureMap::segment_one_hot(spec.d).apply(x)?.imax();
                let theta = f64::from(spec.theta_signs[j]) * spec.delta;
                Ok(if t == 1 { 0.5 + theta / 2.0 } else { 0.5 - theta / 2.0 })
            }
            Environment::Scaled(spec) => {
                FeatureMap::segment_one_hot(1).apply(x)?;
                Ok(if t == 1 {
                    spec.treated_scale * spec.treated_prob
                } else {
                    spec.control_scale * spec.control_prob
                })
            }
        }
    }

    /// Ground-truth τ(x).
    pub fn true_cate(&self, x: &[f64]) -> Result<f64> {
        match self {
            Environment::Linear(spec) => Ok(dot(&spec.theta_star, &spec.feature_map.apply(x)?)),
            Environment::Hard(spec) => {
                let j = FeatureMap::segment_one_hot(spec.d).apply(x)?.imax();
                Ok(f64::from(spec.theta_signs[j]) * spec.delta)
            }
            Environment::Scaled(_) => {
                FeatureMap::segment_one_hot(1).apply(x)?;
                Ok(self.theta_star()[0])
            }
        }
    }

    /// (E[Y(1)² | x], E[Y(0)² | x]).
    pub fn second_moments(&self, x: &[f64]) -> Result<(f64, f64)> {
        match self {
            // Y ∈ {0, 1} so E[Y²] = μ.
            Environment::Linear(_) | Environment::Hard(_) => {
                Ok((self.mean_outcome(x, 1)?, self.mean_outcome(x, 0)?))
            }
            Environment::Scaled(spec) => Ok((
                spec.treated_scale.powi(2) * spec.treated_prob,
                spec.control_scale.powi(2) * spec.control_prob,
            )),
        }
    }

    /// Draws Y(t) at x.
    pub fn draw_outcome(&self, x: &[f64], t: u8, rng: &mut StreamRng) -> Result<f64> {
        match self {
            Environment::Scaled(spec) => {
                let (scale, prob) = if t == 1 {
                    (spec.treated_scale, spec.treated_prob)
                } else {
                    (spec.control_scale, spec.control_prob)
                };
                FeatureMap::segment_one_hot(1).apply(x)?;
                Ok(if rng.random::<f64>() < prob { scale } else { 0.0 })
            }
            _ => {
                let mu = self.mean_outcome(x, t)?;
                Ok(if rng.random::<f64>() < mu { 1.0 } else { 0.0 })
            }
        }
    }
}

fn dot(coef: &[f64], phi: &FeatureVector) -> f64 {
    coef.iter().zip(phi.iter()).map(|(a, b)| a * b).sum()
}

/// Range of x ↦ ⟨v, φ(x)⟩ + c over the support.
fn affine_range(spec: &LinearEnvSpec, v: &[f64], c: f64) -> Result<(f64, f64)> {
    match &spec.covariates {
        CovariateSpec::Segments { count } => {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for j in 1..=*count {
                let phi = spec.feature_map.apply_unbounded(&[j as f64])?;
                let val = dot(v, &phi) + c;
                lo = lo.min(val);
                hi = hi.max(val);
            }
            Ok((lo, hi))
        }
        CovariateSpec::Box { dim, half_width } => {
            // φ(x) = M x + b, so ⟨v, φ(x)⟩ = ⟨Mᵀv, x⟩ + ⟨v, b⟩; over the box the
            // range is centre ± a‖Mᵀv‖₁.
            let (slope_l1, centre) = match &spec.feature_map.kind {
                FeatureMapKind::Identity { .. } => (v.iter().map(|a| a.abs()).sum::<f64>(), 0.0),
                FeatureMapKind::AffineProjection { weights, offset } => {
                    let l1 = (0..*dim)
                        .map(|col| weights.iter().zip(v).map(|(row, vi)| row[col] * vi).sum::<f64>().abs())
                        .sum::<f64>();
                    (l1, v.iter().zip(offset).map(|(a, b)| a * b).sum())
                }
                FeatureMapKind::SegmentOneHot { .. } => {
                    return Err(Error::InvalidSpec("segment map needs segment covariates".into()))
                }
            };
            let spread = half_width * slope_l1;
            Ok((centre + c - spread, centre + c + spread))
        }
    }
}

/// Largest ‖φ(x)‖₂ over the support (exact on vertices for small boxes).
fn max_feature_norm(spec: &LinearEnvSpec) -> Result<f64> {
    match &spec.covariates {
        CovariateSpec::Segments { count } => (1..=*count)
            .map(|j| spec.feature_map.apply_unbounded(&[j as f64]).map(|p| p.norm()))
            .try_fold(0.0f64, |acc, n| n.map(|n| acc.max(n))),
        CovariateSpec::Box { dim, half_width } if *dim <= 16 => {
            let mut best = 0.0f64;
            for mask in 0u32..(1 << dim) {
                let vertex: Vec<f64> = (0..*dim)
                    .map(|i| if mask & (1 << i) != 0 { *half_width } else { -*half_width })
                    .collect();
                best = best.max(spec.feature_map.apply_unbounded(&vertex)?.norm());
            }
            Ok(best)
        }
        CovariateSpec::Box { dim, half_width } => {
            let radius = half_width * (*dim as f64).sqrt();
            Ok(match &spec.feature_map.kind {
                FeatureMapKind::AffineProjection { weights, offset } => {
                    let frob = weights.iter().flatten().map(|w| w * w).sum::<f64>().sqrt();
                    frob * radius + offset.iter().map(|b| b * b).sum::<f64>().sqrt()
                }
                _ => radius,
            })
        }
    }
}

fn validate_linear(spec: &LinearEnvSpec) -> Result<()> {
    spec.feature_map.validate()?;
    let d = spec.feature_map.output_dim();
    if spec.covariates.dim() != spec.feature_map.input_dim() {
        return Err(Error::InvalidSpec(format!(
            "covariate dim {} does not match feature map input {}",
            spec.covariates.dim(),
            spec.feature_map.input_dim()
        )));
    }
    if let CovariateSpec::Box { half_width, .. } = spec.covariates {
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(Error::InvalidSpec("box half width must be positive".into()));
        }
    }
    if spec.theta_star.len() != d {
        return Err(Error::InvalidSpec(format!("theta_star has {} entries, map outputs {d}", spec.theta_star.len())));
    }
    if !spec.baseline_weights.is_empty() && spec.baseline_weights.len() != d {
        return Err(Error::InvalidSpec("baseline_weights length must match feature dim".into()));
    }
    let theta_norm = spec.theta_star.iter().map(|t| t * t).sum::<f64>().sqrt();
    if theta_norm > spec.norm_budget * (1.0 + 1e-12) {
        return Err(Error::InvalidSpec(format!("||theta*|| = {theta_norm} exceeds S = {}", spec.norm_budget)));
    }
    let max_norm = max_feature_norm(spec)?;
    if max_norm > spec.feature_map.norm_bound * (1.0 + 1e-12) {
        return Err(Error::InvalidSpec(format!(
            "feature norm reaches {max_norm}, above declared L = {}",
            spec.feature_map.norm_bound
        )));
    }
    let base: Vec<f64> = if spec.baseline_weights.is_empty() { vec![0.0; d] } else { spec.baseline_weights.clone() };
    for sign in [1.0, -1.0] {
        let v: Vec<f64> = base.iter().zip(&spec.theta_star).map(|(w, t)| w + sign * t / 2.0).collect();
        let (lo, hi) = affine_range(spec, &v, spec.baseline_intercept)?;
        if lo < 0.0 || hi > 1.0 {
            return Err(Error::InvalidSpec(format!(
                "mean outcome of arm {} spans [{lo}, {hi}], outside [0, 1]",
                if sign > 0.0 { 1 } else { 0 }
            )));
        }
    }
    Ok(())
}

/// Historical logging policy e_obs(x), expressed on φ(x).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ObsPolicySpec {
    /// e_obs = sigmoid(κ·(⟨w, φ⟩ + bias)).
    Logistic {
        weights: Vec<f64>,
        #[serde(default)]
        bias: f64,
        sharpness: f64,
    },
    /// e_obs = 1 − ε if ⟨a, φ⟩ > c, else ε.
    ThresholdDeterministic { direction: Vec<f64>, cutoff: f64, leak: f64 },
}

impl ObsPolicySpec {
    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            ObsPolicySpec::Logistic { weights, sharpness, .. } => {
                if weights.len() != dim || !sharpness.is_finite() {
                    return Err(Error::InvalidSpec("logistic policy weights must match feature dim".into()));
                }
            }
            ObsPolicySpec::ThresholdDeterministic { direction, leak, .. } => {
                if direction.len() != dim {
                    return Err(Error::InvalidSpec("threshold direction must match feature dim".into()));
                }
                if !(0.0..=0.05).contains(leak) {
                    return Err(Error::InvalidSpec(format!("threshold leak must lie in [0, 0.05], got {leak}")));
                }
            }
        }
        Ok(())
    }

    /// e_obs at a feature vector.
    pub fn propensity(&self, phi: &FeatureVector) -> f64 {
        match self {
            ObsPolicySpec::Logistic { weights, bias, sharpness } => {
                sigmoid(sharpness * (dot(weights, phi) + bias))
            }
            ObsPolicySpec::ThresholdDeterministic { direction, cutoff, leak } => {
                if dot(direction, phi) > *cutoff {
                    1.0 - leak
                } else {
                    *leak
                }
            }
        }
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// How the observational covariate marginal departs from ℙ_X.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ObsMarginalSpec {
    #[default]
    None,
    /// Density ratio ∝ exp(strength·⟨direction, φ(x)⟩) against ℙ_X; support is unchanged.
    Tilt { direction: Vec<f64>, strength: f64 },
}

impl ObsMarginalSpec {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if let ObsMarginalSpec::Tilt { direction, strength } = self {
            if direction.len() != dim || !strength.is_finite() {
                return Err(Error::InvalidSpec("tilt direction must match feature dim".into()));
            }
        }
        Ok(())
    }
}

const MAX_TILT_ATTEMPTS: usize = 1_000_000;

fn sample_obs_covariate(
    env: &Environment,
    map: &FeatureMap,
    marginal: &ObsMarginalSpec,
    tilt_max: f64,
    rng: &mut StreamRng,
) -> Result<Vec<f64>> {
    match marginal {
        ObsMarginalSpec::None => Ok(env.sample_covariate(rng)),
        ObsMarginalSpec::Tilt { direction, strength } => {
            for _ in 0..MAX_TILT_ATTEMPTS {
                let x = env.sample_covariate(rng);
                let phi = map.apply(&x)?;
                let accept = (strength * dot(direction, &phi) - tilt_max).exp();
                if rng.random::<f64>() < accept {
                    return Ok(x);
                }
            }
            Err(Error::InvalidSpec("tilt too strong: rejection sampler did not accept".into()))
        }
    }
}

/// Upper bound on strength·⟨direction, φ(x)⟩ over the support.
fn tilt_ceiling(env: &Environment, map: &FeatureMap, marginal: &ObsMarginalSpec) -> Result<f64> {
    let ObsMarginalSpec::Tilt { direction, strength } = marginal else {
        return Ok(0.0);
    };
    let scaled: Vec<f64> = direction.iter().map(|a| a * strength).collect();
    if let Some(points) = env.support_points() {
        return points
            .iter()
            .map(|x| map.apply(x).map(|phi| dot(&scaled, &phi)))
            .try_fold(f64::NEG_INFINITY, |acc, v| v.map(|v| acc.max(v)));
    }
    match env {
        Environment::Linear(spec) => Ok(affine_range(spec, &scaled, 0.0)?.1),
        _ => Ok(scaled.iter().map(|a| a * a).sum::<f64>().sqrt() * map.norm_bound),
    }
}

/// n_pool i.i.d. units from ℙ_X with ids 0..n_pool.
pub fn sample_pool(env: &Environment, n_pool: usize, seed: u64) -> Result<Vec<PoolUnit>> {
    if n_pool == 0 {
        return Err(Error::InvalidInput("n_pool must be at least 1".into()));
    }
    let map = env.feature_map();
    let mut rng = rng::stream(seed, &[tag::POOL]);
    (0..n_pool)
        .map(|id| {
            let x = env.sample_covariate(&mut rng);
            map.apply(&x)?;
            Ok(PoolUnit { id, x, queried: false })
        })
        .collect()
}

/// An observational log: x from the (shifted) marginal, T ~ Bern(e_obs), Y ~ Y(T).
pub fn sample_obs(
    env: &Environment,
    policy: &ObsPolicySpec,
    marginal: &ObsMarginalSpec,
    n_obs: usize,
    seed: u64,
) -> Result<Vec<ObsRecord>> {
    if n_obs == 0 {
        return Err(Error::InvalidInput("n_obs must be at least 1".into()));
    }
    let map = env.feature_map();
    policy.validate(map.output_dim())?;
    marginal.validate(map.output_dim())?;
    let ceiling = tilt_ceiling(env, &map, marginal)?;
    let mut rng = rng::stream(seed, &[tag::OBS]);
    (0..n_obs)
        .map(|_| {
            let x = sample_obs_covariate(env, &map, marginal, ceiling, &mut rng)?;
            let phi = map.apply(&x)?;
            let t = u8::from(rng.random::<f64>() < policy.propensity(&phi));
            let y = env.draw_outcome(&x, t, &mut rng)?;
            Ok(ObsRecord { x, t, y })
        })
        .collect()
}

/// A held-out randomized test set from ℙ_X with constant assignment probability.
pub fn sample_rct_test(env: &Environment, n: usize, p: f64, seed: u64) -> Result<Vec<ObsRecord>> {
    let map = env.feature_map();
    let mut rng = rng::stream(seed, &[tag::TEST_SET]);
    (0..n)
        .map(|_| {
            let x = env.sample_covariate(&mut rng);
            map.apply(&x)?;
            let t = u8::from(rng.random::<f64>() < p);
            let y = env.draw_outcome(&x, t, &mut rng)?;
            Ok(ObsRecord { x, t, y })
        })
        .collect()
}

/// The complete description of a generated world (the `env.json` document).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub environment: Environment,
    pub obs_policy: ObsPolicySpec,
    #[serde(default)]
    pub obs_marginal: ObsMarginalSpec,
    pub n_pool: usize,
    pub n_obs: usize,
    pub seed: u64,
}

/// The pool and log generated from a [`WorldSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub pool: Vec<PoolUnit>,
    pub obs: Vec<ObsRecord>,
}

impl WorldSpec {
    pub fn validate(&self) -> Result<()> {
        self.environment.validate()?;
        let dim = self.environment.dim();
        self.obs_policy.validate(dim)?;
        self.obs_marginal.validate(dim)?;
        if self.n_pool == 0 || self.n_obs == 0 {
            return Err(Error::InvalidSpec("n_pool and n_obs must be positive".into()));
        }
        Ok(())
    }

    pub fn generate(&self) -> Result<World> {
        self.generate_with_seed(self.seed)
    }

    /// Same world family, different draw.
    pub fn generate_with_seed(&self, seed: u64) -> Result<World> {
        self.validate()?;
        Ok(World {
            pool: sample_pool(&self.environment, self.n_pool, seed)?,
            obs: sample_obs(&self.environment, &self.obs_policy, &self.obs_marginal, self.n_obs, seed)?,
        })
    }
}
