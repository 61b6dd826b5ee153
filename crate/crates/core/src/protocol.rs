//! The round-based experimentation loop.
//!
//! Each round sizes a batch m_k = min(M, B − |D_rct|), selects m_k pool units
//! (by acquisition score or uniformly at random), assigns treatment with a
//! clipped probability and records the outcome. Treatment and outcome draws come
//! from streams keyed by (seed, unit id), so they do not depend on which units
//! were selected before.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::acquisition::{
    composite_score, domain_score, ensemble_variance, overlap_deficit, select_top_m, train_domain_classifier,
    AcquisitionWeights, DomainClassifier, DomainConfig, EnsembleSpec, PropensityConfig, PropensityModel,
    ScoreBreakdown,
};
use crate::error::{Error, Result};
use crate::estimator::{
    compute_alignment_weights, fit_ridge, fit_weighted_ridge, labeled_points, LabeledPoint, RidgeSolution,
};
use crate::model::{FeatureMap, FeatureVector, ObsRecord, PoolUnit, PropensityBounds, RctRecord};
use crate::rng::{self, tag};
use crate::synth::Environment;

/// How the RCT probability f_k(x) is produced before clipping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RandomizationPolicy {
    Constant { p: f64 },
    /// raw = ⟨w, φ(x)⟩ + bias.
    CovariateAffine { weights: Vec<f64>, bias: f64 },
    /// √A/(√A + √B) from the environment's second moments.
    VarianceOptimal,
}

impl Default for RandomizationPolicy {
    fn default() -> Self {
        Self::Constant { p: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Strategy {
    Active {
        #[serde(default)]
        weights: AcquisitionWeights,
        #[serde(default)]
        ensemble: EnsembleSpec,
    },
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Fit on RCT pseudo-outcomes only.
    #[default]
    Theory,
    /// Weight RCT records by their disagreement with the observational policy.
    Fusion,
}

fn default_lambda() -> f64 {
    1.0
}

/// The `protocol.json` document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub budget: usize,
    pub max_rounds: usize,
    pub max_batch: usize,
    #[serde(default)]
    pub bounds: PropensityBounds,
    #[serde(default)]
    pub randomization: RandomizationPolicy,
    pub strategy: Strategy,
    #[serde(default = "default_lambda")]
    pub estimator_lambda: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub mode: Mode,
    /// Add OBS pseudo-labels (with clipped ê_obs) to the ensemble's training set.
    #[serde(default)]
    pub include_obs: bool,
    #[serde(default)]
    pub domain: DomainConfig,
    #[serde(default)]
    pub propensity: PropensityConfig,
}

impl ProtocolConfig {
    /// Defaults elsewhere: constant p = 0.5, bounds [0.2, 0.8], theory mode, λ = 1.
    pub fn new(budget: usize, max_rounds: usize, max_batch: usize, strategy: Strategy) -> Self {
        Self {
            budget,
            max_rounds,
            max_batch,
            bounds: PropensityBounds::default(),
            randomization: RandomizationPolicy::default(),
            strategy,
            estimator_lambda: 1.0,
            seed: 0,
            mode: Mode::Theory,
            include_obs: false,
            domain: DomainConfig::default(),
            propensity: PropensityConfig::default(),
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.max_rounds == 0 || self.max_batch == 0 {
            return Err(Error::InvalidConfig("max_rounds and max_batch must be at least 1".into()));
        }
        self.bounds.validate()?;
        if !(self.estimator_lambda >= 0.0 && self.estimator_lambda.is_finite()) {
            return Err(Error::InvalidConfig("estimator_lambda must be finite and nonnegative".into()));
        }
        match &self.randomization {
            RandomizationPolicy::Constant { p } if !p.is_finite() => {
                return Err(Error::InvalidConfig("constant p must be finite".into()));
            }
            RandomizationPolicy::CovariateAffine { weights, .. } if weights.len() != dim => {
                return Err(Error::DimensionMismatch { expected: dim, got: weights.len() });
            }
            _ => {}
        }
        if let Strategy::Active { weights, ensemble } = &self.strategy {
            weights.validate()?;
            ensemble.validate()?;
        }
        Ok(())
    }

    /// Number of units round k will query given the budget already spent.
    pub fn batch_size(&self, spent: usize) -> usize {
        self.max_batch.min(self.budget.saturating_sub(spent))
    }
}

pub fn clip_probability(raw: f64, bounds: &PropensityBounds) -> f64 {
    raw.max(bounds.f_min).min(bounds.f_max)
}

/// Clip(√A/(√A + √B)); A = B = 0 gives 0.5.
pub fn optimal_p(a: f64, b: f64, bounds: &PropensityBounds) -> Result<f64> {
    if !(a >= 0.0 && b >= 0.0) {
        return Err(Error::InvalidInput(format!("second moments must be nonnegative, got ({a}, {b})")));
    }
    if a == 0.0 && b == 0.0 {
        return Ok(clip_probability(0.5, bounds));
    }
    let (ra, rb) = (a.sqrt(), b.sqrt());
    Ok(clip_probability(ra / (ra + rb), bounds))
}

/// Clipped assignment probability for covariate `x`.
pub fn assignment_probability(config: &ProtocolConfig, env: &Environment, phi: &FeatureVector, x: &[f64]) -> Result<f64> {
    let raw = match &config.randomization {
        RandomizationPolicy::Constant { p } => *p,
        RandomizationPolicy::CovariateAffine { weights, bias } => {
            weights.iter().zip(phi.iter()).map(|(w, v)| w * v).sum::<f64>() + bias
        }
        RandomizationPolicy::VarianceOptimal => {
            let (a, b) = env.second_moments(x)?;
            return optimal_p(a, b, &config.bounds);
        }
    };
    Ok(clip_probability(raw, &config.bounds))
}

/// Draws T ~ Bern(p) and Y ~ env(x, T) from the unit's own streams.
pub fn assign_and_observe(env: &Environment, x: &[f64], p: f64, seed: u64, unit: usize) -> Result<(u8, f64)> {
    let mut t_rng = rng::stream(seed, &[tag::TREATMENT, unit as u64]);
    let t = u8::from(t_rng.random::<f64>() < p);
    let mut y_rng = rng::stream(seed, &[tag::OUTCOME, unit as u64]);
    let y = env.draw_outcome(x, t, &mut y_rng)?;
    Ok((t, y))
}

/// Loop state between rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundState {
    pub round: usize,
    pub records: Vec<RctRecord>,
    /// Unqueried pool ids in ascending order.
    pub remaining: BTreeSet<usize>,
}

impl RoundState {
    pub fn remaining_budget(&self, budget: usize) -> usize {
        budget.saturating_sub(self.records.len())
    }
}

/// What happened in one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundLog {
    pub round: usize,
    pub batch_size: usize,
    /// First seq assigned in this round.
    pub first_seq: u64,
    pub selected: Vec<usize>,
    /// Empty for the random strategy.
    pub scores: Vec<ScoreBreakdown>,
}

/// Final estimator and audit trail of one protocol run.
#[derive(Debug, Clone)]
pub struct ProtocolOutcome {
    pub solution: RidgeSolution,
    pub records: Vec<RctRecord>,
    pub rounds: Vec<RoundLog>,
    pub pool: Vec<PoolUnit>,
}

impl ProtocolOutcome {
    pub fn batch_sizes(&self) -> Vec<usize> {
        self.rounds.iter().map(|r| r.batch_size).collect()
    }
}

/// Frozen inputs shared by all rounds of one run.
pub struct Protocol<'a> {
    config: &'a ProtocolConfig,
    env: &'a Environment,
    map: FeatureMap,
    pool: &'a [PoolUnit],
    pool_phis: Vec<FeatureVector>,
    obs_phis: Vec<FeatureVector>,
    obs_labels: Vec<LabeledPoint>,
    propensity: Option<PropensityModel>,
}

impl<'a> Protocol<'a> {
    pub fn new(config: &'a ProtocolConfig, env: &'a Environment, pool: &'a [PoolUnit], obs: &[ObsRecord]) -> Result<Self> {
        let map = env.feature_map();
        config.validate(map.output_dim())?;
        for (i, unit) in pool.iter().enumerate() {
            if unit.id != i {
                return Err(Error::InvalidInput(format!("pool ids must be 0..n in order; position {i} has id {}", unit.id)));
            }
        }
        if config.mode == Mode::Fusion && obs.is_empty() {
            return Err(Error::InvalidConfig("fusion mode needs an observational log".into()));
        }
        let pool_phis = pool.iter().map(|u| map.apply(&u.x)).collect::<Result<Vec<_>>>()?;
        let obs_phis = obs.iter().map(|r| map.apply(&r.x)).collect::<Result<Vec<_>>>()?;
        let needs_propensity = config.mode == Mode::Fusion || matches!(config.strategy, Strategy::Active { .. });
        let propensity = if needs_propensity && !obs.is_empty() {
            Some(PropensityModel::fit(obs, &map, &config.propensity)?)
        } else {
            None
        };
        let obs_labels = match (&propensity, config.include_obs) {
            (Some(model), true) => obs
                .iter()
                .zip(&obs_phis)
                .map(|(r, phi)| {
                    let e = clip_probability(model.predict(phi), &config.bounds);
                    let t = f64::from(r.t);
                    LabeledPoint { phi: phi.clone(), target: t * r.y / e - (1.0 - t) * r.y / (1.0 - e) }
                })
                .collect(),
            _ => Vec::new(),
        };
        Ok(Self { config, env, map, pool, pool_phis, obs_phis, obs_labels, propensity })
    }

    pub fn feature_map(&self) -> &FeatureMap {
        &self.map
    }

    pub fn propensity(&self) -> Option<&PropensityModel> {
        self.propensity.as_ref()
    }

    pub fn initial_state(&self) -> RoundState {
        RoundState { round: 0, records: Vec::new(), remaining: (0..self.pool.len()).collect() }
    }

    /// Acquisition scores for every remaining unit, computed from `records` alone.
    pub fn score_pool(
        &self,
        weights: &AcquisitionWeights,
        ensemble: &EnsembleSpec,
        round: usize,
        records: &[RctRecord],
        remaining: &BTreeSet<usize>,
    ) -> Result<Vec<ScoreBreakdown>> {
        let ids: Vec<usize> = remaining.iter().copied().collect();
        let candidates: Vec<FeatureVector> = ids.iter().map(|&i| self.pool_phis[i].clone()).collect();

        let mut labeled = labeled_points(records, &self.map)?;
        labeled.extend(self.obs_labels.iter().cloned());
        let member_spec = EnsembleSpec {
            seed: rng::derive_seed(self.config.seed, &[tag::ENSEMBLE, ensemble.seed, round as u64]),
            ..ensemble.clone()
        };
        let v = ensemble_variance(&labeled, self.map.output_dim(), &member_spec, &candidates)?;

        let mut current: Vec<FeatureVector> = self.obs_phis.clone();
        current.extend(records.iter().map(|r| self.map.apply(&r.x)).collect::<Result<Vec<_>>>()?);
        let classifier = if current.is_empty() {
            DomainClassifier {
                weights: FeatureVector::zeros(self.map.output_dim()),
                bias: 0.0,
                config: self.config.domain.clone(),
            }
        } else {
            train_domain_classifier(&candidates, &current, &self.config.domain)?
        };
        let d: Vec<f64> = candidates.iter().map(|phi| domain_score(&classifier, phi)).collect();

        let o: Vec<f64> = match &self.propensity {
            Some(model) => candidates.iter().map(|phi| overlap_deficit(model, phi)).collect::<Result<_>>()?,
            None => vec![0.0; candidates.len()],
        };
        composite_score(&ids, &v, &d, &o, weights)
    }

    /// Runs one round; `None` when the budget, the round limit or the pool is exhausted.
    pub fn run_round(&self, state: &mut RoundState) -> Result<Option<RoundLog>> {
        let cfg = self.config;
        let m = cfg.batch_size(state.records.len()).min(state.remaining.len());
        if m == 0 || state.round >= cfg.max_rounds {
            return Ok(None);
        }
        let (selected, scores) = match &cfg.strategy {
            Strategy::Active { weights, ensemble } => {
                let scores = self.score_pool(weights, ensemble, state.round, &state.records, &state.remaining)?;
                let pairs: Vec<(usize, f64)> = scores.iter().map(|s| (s.id, s.s)).collect();
                (select_top_m(&pairs, m)?, scores)
            }
            Strategy::Random => {
                let ids: Vec<usize> = state.remaining.iter().copied().collect();
                let mut rng = rng::stream(cfg.seed, &[tag::SELECTION, state.round as u64]);
                let picks = rand::seq::index::sample(&mut rng, ids.len(), m);
                (picks.into_iter().map(|i| ids[i]).collect(), Vec::new())
            }
        };

        let first_seq = state.records.len() as u64;
        for &id in &selected {
            let x = &self.pool[id].x;
            let p = assignment_probability(cfg, self.env, &self.pool_phis[id], x)?;
            let (t, y) = assign_and_observe(self.env, x, p, cfg.seed, id)?;
            let seq = state.records.len() as u64;
            state.records.push(RctRecord { x: x.clone(), t, y, p, seq });
            state.remaining.remove(&id);
        }
        let log = RoundLog { round: state.round, batch_size: m, first_seq, selected, scores };
        state.round += 1;
        Ok(Some(log))
    }

    /// The estimator for the records gathered so far.
    pub fn fit(&self, records: &[RctRecord]) -> Result<RidgeSolution> {
        let lambda = self.config.estimator_lambda;
        match (self.config.mode, &self.propensity) {
            (Mode::Fusion, Some(model)) => {
                let weights: Vec<f64> = compute_alignment_weights(records, model, &self.map)?
                    .into_iter()
                    .map(|w| w.weight)
                    .collect();
                fit_weighted_ridge(records, &weights, &self.map, lambda)
            }
            _ => fit_ridge(records, &self.map, lambda),
        }
    }

    pub fn run(&self) -> Result<ProtocolOutcome> {
        let mut state = self.initial_state();
        let mut rounds = Vec::new();
        while let Some(log) = self.run_round(&mut state)? {
            log::debug!("round {} queried {} units", log.round, log.batch_size);
            rounds.push(log);
        }
        let solution = self.fit(&state.records)?;
        let mut pool = self.pool.to_vec();
        for unit in &mut pool {
            unit.queried = !state.remaining.contains(&unit.id);
        }
        Ok(ProtocolOutcome { solution, records: state.records, rounds, pool })
    }
}

/// Runs the whole loop on a generated pool and log.
pub fn run_protocol(
    config: &ProtocolConfig,
    env: &Environment,
    pool: &[PoolUnit],
    obs: &[ObsRecord],
) -> Result<ProtocolOutcome> {
    Protocol::new(config, env, pool, obs)?.run()
}
