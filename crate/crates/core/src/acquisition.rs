//! Acquisition signals for choosing which pool units to randomize.
//!
//! Three per-candidate signals are combined after rank normalization:
//!
//! * `v_u`: disagreement of a bootstrap ridge ensemble at φ(u);
//! * `d_u`: a domain classifier's probability that φ(u) belongs to the remaining
//!   pool rather than to the current training data (OBS ∪ RCT);
//! * `o_u = 2·|ê_obs(φ(u)) − 0.5|`: how deterministic the historical policy was at u.
//!
//! η(a_u) is the fraction of pool values ≤ a_u, and
//! S(u) = α·η(v_u) + β·η(d_u) + γ·η(o_u). The top-m units by S are queried;
//! exact ties go to the smallest id.

use std::collections::HashSet;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{LabeledPoint, RidgeAccumulator};
use crate::model::{FeatureMap, FeatureVector, ObsRecord};
use crate::rng::{self, tag};
use crate::synth::sigmoid;

/// Bootstrap ridge ensemble used as the epistemic-uncertainty proxy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleSpec {
    pub members: usize,
    /// Each member is fit on ⌈fraction·n⌉ resampled points.
    pub resample_fraction: f64,
    /// Member j uses λ·(1 + perturb_lambda·u_j) with u_j ~ U[0, 1).
    pub perturb_lambda: f64,
    pub lambda: f64,
    /// Draw with replacement; when false every member sees the same leading subset.
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for EnsembleSpec {
    fn default() -> Self {
        Self { members: 15, resample_fraction: 0.8, perturb_lambda: 0.0, lambda: 1.0, bootstrap: true, seed: 0 }
    }
}

impl EnsembleSpec {
    pub fn validate(&self) -> Result<()> {
        if self.members < 2 {
            return Err(Error::InvalidConfig("ensemble needs at least 2 members".into()));
        }
        if !(self.resample_fraction > 0.0 && self.resample_fraction <= 1.0) {
            return Err(Error::InvalidConfig("resample_fraction must lie in (0, 1]".into()));
        }
        if !(self.perturb_lambda >= 0.0) || !(self.lambda > 0.0) {
            return Err(Error::InvalidConfig("ensemble lambda must be positive and jitter nonnegative".into()));
        }
        Ok(())
    }
}

/// Population variance (divide by E) of the members' predictions at each candidate.
///
/// With no labeled data every member is the λ-only fit θ = 0, so v_u = 0.
pub fn ensemble_variance(
    labeled: &[LabeledPoint],
    dim: usize,
    spec: &EnsembleSpec,
    candidates: &[FeatureVector],
) -> Result<Vec<f64>> {
    spec.validate()?;
    if labeled.is_empty() {
        return Ok(vec![0.0; candidates.len()]);
    }
    let n = labeled.len();
    let take = ((spec.resample_fraction * n as f64).ceil() as usize).clamp(1, n);
    let mut thetas = DMatrix::zeros(dim, spec.members);
    for j in 0..spec.members {
        let mut rng = rng::stream(spec.seed, &[tag::ENSEMBLE, j as u64]);
        let jitter: f64 = rng.random();
        let mut acc = RidgeAccumulator::new(dim, spec.lambda * (1.0 + spec.perturb_lambda * jitter))?;
        for k in 0..take {
            let idx = if spec.bootstrap { rng.random_range(0..n) } else { k };
            acc.push(&labeled[idx].phi, labeled[idx].target, 1.0);
        }
        thetas.set_column(j, &acc.solve()?.theta_hat);
    }
    let e = spec.members as f64;
    let preds = stack_rows(candidates, dim) * thetas;
    Ok(preds
        .row_iter()
        .map(|row| {
            let mean = row.sum() / e;
            row.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / e
        })
        .collect())
}

/// Candidates as the rows of an n × dim matrix.
fn stack_rows(rows: &[FeatureVector], dim: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), dim, |i, j| rows[i][j])
}

/// Optimizer settings for the domain classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DomainConfig {
    pub learning_rate: f64,
    pub max_steps: usize,
    /// Weight each class to half the loss regardless of size.
    pub balance_classes: bool,
}

impl Default for DomainConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, max_steps: 100, balance_classes: true }
    }
}

/// Affine logistic discriminator of the remaining pool (label 1) against current data (label 0).
#[derive(Debug, Clone, PartialEq)]
pub struct DomainClassifier {
    pub weights: DVector<f64>,
    pub bias: f64,
    pub config: DomainConfig,
}

impl DomainClassifier {
    pub fn logit(&self, phi: &FeatureVector) -> f64 {
        self.weights.dot(phi) + self.bias
    }
}

/// Full-batch gradient descent on cross-entropy from a zero start.
pub fn train_domain_classifier(
    pool: &[FeatureVector],
    current: &[FeatureVector],
    config: &DomainConfig,
) -> Result<DomainClassifier> {
    if pool.is_empty() {
        return Err(Error::EmptyClass("pool (label 1)"));
    }
    if current.is_empty() {
        return Err(Error::EmptyClass("current data (label 0)"));
    }
    let dim = pool[0].len();
    let (w_pos, w_neg) = if config.balance_classes {
        (0.5 / pool.len() as f64, 0.5 / current.len() as f64)
    } else {
        let total = (pool.len() + current.len()) as f64;
        (1.0 / total, 1.0 / total)
    };
    let n = pool.len() + current.len();
    let design = DMatrix::from_fn(n, dim, |i, j| if i < pool.len() { pool[i][j] } else { current[i - pool.len()][j] });
    let is_pool = |i: usize| i < pool.len();
    let mut weights = DVector::zeros(dim);
    let mut bias = 0.0;
    let mut logits = DVector::zeros(n);
    let mut resid = DVector::zeros(n);
    for _ in 0..config.max_steps {
        logits.gemv(1.0, &design, &weights, 0.0);
        for i in 0..n {
            let (label, w) = if is_pool(i) { (1.0, w_pos) } else { (0.0, w_neg) };
            resid[i] = w * (sigmoid(logits[i] + bias) - label);
        }
        weights.gemv_tr(-config.learning_rate, &design, &resid, 1.0);
        bias -= config.learning_rate * resid.sum();
    }
    Ok(DomainClassifier { weights, bias, config: config.clone() })
}

/// d_u = sigmoid(g(φ(u))).
pub fn domain_score(classifier: &DomainClassifier, phi: &FeatureVector) -> f64 {
    sigmoid(classifier.logit(phi))
}

/// Which data a propensity model has seen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub obs_records: usize,
    pub rct_records: usize,
}

/// Newton settings for the observational propensity fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PropensityConfig {
    /// L2 penalty on the slope (keeps separable logs finite).
    pub ridge: f64,
    pub max_iter: usize,
}

impl Default for PropensityConfig {
    fn default() -> Self {
        Self { ridge: 1.0, max_iter: 50 }
    }
}

/// ê_obs(φ) = sigmoid(⟨w, φ⟩ + b), fit on observational records only.
#[derive(Debug, Clone, PartialEq)]
pub struct PropensityModel {
    weights: DVector<f64>,
    bias: f64,
    provenance: Provenance,
}

impl PropensityModel {
    pub fn from_parts(weights: DVector<f64>, bias: f64, provenance: Provenance) -> Self {
        Self { weights, bias, provenance }
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn ensure_obs_only(&self) -> Result<()> {
        if self.provenance.rct_records > 0 {
            return Err(Error::PropensityContaminated { rct_records: self.provenance.rct_records });
        }
        Ok(())
    }

    pub fn predict(&self, phi: &FeatureVector) -> f64 {
        sigmoid(self.weights.dot(phi) + self.bias)
    }

    /// Penalized logistic regression of T on φ(X) by damped Newton steps.
    pub fn fit(obs: &[ObsRecord], map: &FeatureMap, config: &PropensityConfig) -> Result<Self> {
        if obs.is_empty() {
            return Err(Error::EmptyClass("observational log"));
        }
        let d = map.output_dim();
        let design: Vec<DVector<f64>> = obs
            .iter()
            .map(|r| {
                let phi = map.apply(&r.x)?;
                Ok(DVector::from_iterator(d + 1, std::iter::once(1.0).chain(phi.iter().copied())))
            })
            .collect::<Result<_>>()?;
        let labels: Vec<f64> = obs.iter().map(|r| f64::from(r.t)).collect();
        let mut penalty = DMatrix::identity(d + 1, d + 1) * config.ridge;
        penalty[(0, 0)] = 1e-8;

        let objective = |beta: &DVector<f64>| {
            let nll: f64 = design
                .iter()
                .zip(&labels)
                .map(|(z, &y)| {
                    let eta = beta.dot(z);
                    // log(1 + e^η) − yη, computed stably.
                    eta.max(0.0) + (-eta.abs()).exp().ln_1p() - y * eta
                })
                .sum();
            nll + 0.5 * beta.dot(&(&penalty * beta))
        };

        let mut beta = DVector::zeros(d + 1);
        let mut current = objective(&beta);
        for _ in 0..config.max_iter {
            let mut grad = &penalty * &beta;
            let mut hess = penalty.clone();
            for (z, &y) in design.iter().zip(&labels) {
                let p = sigmoid(beta.dot(z));
                grad.axpy(p - y, z, 1.0);
                hess.ger(p * (1.0 - p), z, z, 1.0);
            }
            let Some(step) = hess.cholesky().map(|c| c.solve(&grad)) else {
                break;
            };
            let mut scale = 1.0;
            let mut improved = false;
            for _ in 0..30 {
                let candidate = &beta - &step * scale;
                let value = objective(&candidate);
                if value <= current {
                    improved = current - value > 1e-12 * (1.0 + current.abs());
                    beta = candidate;
                    current = value;
                    break;
                }
                scale *= 0.5;
            }
            if !improved {
                break;
            }
        }
        Ok(Self {
            weights: beta.rows(1, d).into_owned(),
            bias: beta[0],
            provenance: Provenance { obs_records: obs.len(), rct_records: 0 },
        })
    }
}

/// o_u = 2·|ê_obs(φ(u)) − 0.5|.
pub fn overlap_deficit(model: &PropensityModel, phi: &FeatureVector) -> Result<f64> {
    model.ensure_obs_only()?;
    Ok(2.0 * (model.predict(phi) - 0.5).abs())
}

/// η_i = |{j : a_j ≤ a_i}| / n.
pub fn rank_normalize(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    values
        .iter()
        .map(|v| sorted.partition_point(|s| s.total_cmp(v).is_le()) as f64 / n as f64)
        .collect()
}

/// Weights (α, β, γ) on the ranked signals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for AcquisitionWeights {
    fn default() -> Self {
        Self { alpha: 0.5, beta: 1.0, gamma: 0.7 }
    }
}

impl AcquisitionWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha, self.beta, self.gamma];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || all.iter().all(|&w| w == 0.0) {
            return Err(Error::InvalidConfig(
                "acquisition weights must be nonnegative with at least one positive".into(),
            ));
        }
        Ok(())
    }

    pub fn combine(&self, eta_v: f64, eta_d: f64, eta_o: f64) -> f64 {
        self.alpha * eta_v + self.beta * eta_d + self.gamma * eta_o
    }
}

/// Per-candidate signals, their ranks and the composite score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreBreakdown {
    pub id: usize,
    pub v: f64,
    pub d: f64,
    pub o: f64,
    pub eta_v: f64,
    pub eta_d: f64,
    pub eta_o: f64,
    pub s: f64,
}

/// Rank-normalizes raw signals over the current pool and forms S(u).
pub fn composite_score(
    ids: &[usize],
    v: &[f64],
    d: &[f64],
    o: &[f64],
    weights: &AcquisitionWeights,
) -> Result<Vec<ScoreBreakdown>> {
    let n = ids.len();
    if n == 0 {
        return Err(Error::InvalidInput("cannot score an empty pool".into()));
    }
    if v.len() != n || d.len() != n || o.len() != n {
        return Err(Error::InvalidInput("signal lengths differ from candidate count".into()));
    }
    weights.validate()?;
    let (eta_v, eta_d, eta_o) = (rank_normalize(v), rank_normalize(d), rank_normalize(o));
    Ok((0..n)
        .map(|i| ScoreBreakdown {
            id: ids[i],
            v: v[i],
            d: d[i],
            o: o[i],
            eta_v: eta_v[i],
            eta_d: eta_d[i],
            eta_o: eta_o[i],
            s: weights.combine(eta_v[i], eta_d[i], eta_o[i]),
        })
        .collect())
}

/// The m highest-S candidates, ordered by descending S then ascending id.
pub fn select_top_m(scores: &[(usize, f64)], m: usize) -> Result<Vec<usize>> {
    if m > scores.len() {
        return Err(Error::InvalidInput(format!("cannot select {m} from {} candidates", scores.len())));
    }
    let mut order: Vec<(usize, f64)> = scores.to_vec();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(order.into_iter().take(m).map(|(id, _)| id).collect())
}

pub const SCORES_CSV_HEADER: &str = "id,v,d,o,eta_v,eta_d,eta_o,S,selected";

/// Writes a per-round score dump.
pub fn write_scores_csv<W: Write>(mut w: W, rows: &[ScoreBreakdown], selected: &HashSet<usize>) -> Result<()> {
    writeln!(w, "{SCORES_CSV_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.id,
            r.v,
            r.d,
            r.o,
            r.eta_v,
            r.eta_d,
            r.eta_o,
            r.s,
            u8::from(selected.contains(&r.id))
        )?;
    }
    Ok(())
}
