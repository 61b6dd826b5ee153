//! Evaluation: PEHE, uplift curves, confidence-bound audits, normality
//! diagnostics and log-log rate fits.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{beta_bound, sandwich_variance, standard_normal_cdf, ConfidenceParams, RidgeSolution};
use crate::experiment::{evaluation_set, replicate, replication_seed};
use crate::model::FeatureVector;
use crate::protocol::ProtocolConfig;
use crate::synth::{Environment, WorldSpec};

/// Root-mean-square CATE error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeheResult {
    pub value: f64,
    pub n_eval: usize,
}

pub fn pehe_from(estimates: &[f64], truths: &[f64]) -> Result<PeheResult> {
    if estimates.is_empty() {
        return Err(Error::InvalidInput("PEHE needs a nonempty evaluation sample".into()));
    }
    if estimates.len() != truths.len() {
        return Err(Error::DimensionMismatch { expected: truths.len(), got: estimates.len() });
    }
    let mse = estimates.iter().zip(truths).map(|(e, t)| (e - t).powi(2)).sum::<f64>() / estimates.len() as f64;
    Ok(PeheResult { value: mse.sqrt(), n_eval: estimates.len() })
}

/// PEHE of a fitted linear CATE against the environment's ground truth.
pub fn pehe(solution: &RidgeSolution, env: &Environment, eval: &[Vec<f64>]) -> Result<PeheResult> {
    let map = env.feature_map();
    let estimates = eval.iter().map(|x| Ok(solution.predict(&map.apply(x)?))).collect::<Result<Vec<_>>>()?;
    let truths = eval.iter().map(|x| env.true_cate(x)).collect::<Result<Vec<_>>>()?;
    pehe_from(&estimates, &truths)
}

/// A randomized unit with a predicted uplift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpliftUnit {
    pub id: usize,
    pub score: f64,
    pub t: u8,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpliftCurve {
    /// f(1), ..., f(N).
    pub gains: Vec<f64>,
    pub auuc: f64,
}

/// Ranks by descending score (ties by id) and accumulates
/// f(k) = (Y_k^T/N_k^T − Y_k^C/N_k^C)(N_k^T + N_k^C), zero while either arm is empty.
/// AUUC = (1/N) Σ f(k)/|f(N)|.
pub fn uplift_curve(units: &[UpliftUnit]) -> Result<UpliftCurve> {
    if units.len() < 2 {
        return Err(Error::InvalidInput("uplift curve needs at least two units".into()));
    }
    let mut order: Vec<&UpliftUnit> = units.iter().collect();
    order.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.id.cmp(&b.id)));
    let (mut yt, mut yc, mut nt, mut nc) = (0.0, 0.0, 0usize, 0usize);
    let gains: Vec<f64> = order
        .iter()
        .map(|u| {
            if u.t == 1 {
                yt += u.y;
                nt += 1;
            } else {
                yc += u.y;
                nc += 1;
            }
            if nt == 0 || nc == 0 {
                0.0
            } else {
                (yt / nt as f64 - yc / nc as f64) * (nt + nc) as f64
            }
        })
        .collect();
    let total = gains[gains.len() - 1];
    if total == 0.0 {
        return Err(Error::ZeroGlobalLift);
    }
    let auuc = gains.iter().map(|g| g / total.abs()).sum::<f64>() / gains.len() as f64;
    Ok(UpliftCurve { gains, auuc })
}

/// One replication of the ellipsoid and PEHE bound checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub replication: usize,
    /// ‖θ̂ − θ*‖ in the V_λ norm.
    pub distance: f64,
    pub beta: f64,
    pub violated: bool,
    /// PEHE over the replication's pool.
    pub pehe: f64,
    /// β·√(mean pool leverage).
    pub pehe_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheckResult {
    pub replications: usize,
    pub violations: usize,
    pub rate: f64,
    pub delta: f64,
    pub checks: Vec<BoundCheck>,
}

/// Checks ‖θ̂_λ − θ*‖_{V_λ} ≤ β_B(δ) across seeded replications.
pub fn bound_violation_audit(
    world: &WorldSpec,
    protocol: &ProtocolConfig,
    params: &ConfidenceParams,
    replications: usize,
    master_seed: u64,
) -> Result<BoundCheckResult> {
    params.validate()?;
    if !(protocol.estimator_lambda > 0.0) {
        return Err(Error::Unsupported("bound audit needs lambda > 0".into()));
    }
    let env = &world.environment;
    let map = env.feature_map();
    let theta = env.theta_star();
    let checks = (0..replications)
        .into_par_iter()
        .map(|r| {
            let rep = replicate(world, protocol, replication_seed(master_seed, r))?;
            let info = &rep.outcome.solution.info;
            let beta = beta_bound(params, info)?;
            let distance = rep.outcome.solution.ellipsoid_distance(&theta);
            let phis: Vec<FeatureVector> = rep.world.pool.iter().map(|u| map.apply(&u.x)).collect::<Result<_>>()?;
            let xs: Vec<Vec<f64>> = rep.world.pool.iter().map(|u| u.x.clone()).collect();
            let value = pehe(&rep.outcome.solution, env, &xs)?.value;
            let pehe_bound = beta * info.mean_leverage(&phis)?.max(0.0).sqrt();
            Ok(BoundCheck { replication: r, distance, beta, violated: distance > beta, pehe: value, pehe_bound })
        })
        .collect::<Result<Vec<_>>>()?;
    let violations = checks.iter().filter(|c| c.violated).count();
    Ok(BoundCheckResult {
        replications,
        violations,
        rate: violations as f64 / replications.max(1) as f64,
        delta: params.delta,
        checks,
    })
}

/// Kolmogorov–Smirnov distance between the empirical CDF and N(0, 1).
pub fn ks_statistic(samples: &[f64]) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &z)| {
            let f = standard_normal_cdf(z);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalityDiagnostic {
    /// √B(τ̂(x) − τ(x)) / √(φᵀ·avar·φ) per replication.
    pub standardized: Vec<f64>,
    pub ks: f64,
    /// Sample variance of √B(τ̂(x) − τ(x)).
    pub scaled_error_variance: f64,
    /// Set when B < 100·d.
    pub small_budget_warning: bool,
}

/// Standardized errors at `x` using each replication's own sandwich variance.
pub fn clt_diagnostic(
    world: &WorldSpec,
    protocol: &ProtocolConfig,
    replications: usize,
    x: &[f64],
    master_seed: u64,
) -> Result<NormalityDiagnostic> {
    let env = &world.environment;
    let map = env.feature_map();
    let phi = map.apply(x)?;
    if phi.iter().all(|&v| v == 0.0) {
        return Err(Error::InvalidInput("φ(x) = 0 has zero asymptotic variance".into()));
    }
    if replications < 2 {
        return Err(Error::InvalidInput("normality diagnostic needs at least two replications".into()));
    }
    let tau = env.true_cate(x)?;
    let small_budget_warning = protocol.budget < 100 * map.output_dim();
    if small_budget_warning {
        log::warn!("budget {} is below 100·d; normal approximation may be poor", protocol.budget);
    }
    let pairs = (0..replications)
        .into_par_iter()
        .map(|r| {
            let rep = replicate(world, protocol, replication_seed(master_seed, r))?;
            let b = rep.outcome.records.len() as f64;
            let sandwich = sandwich_variance(&rep.outcome.records, &rep.outcome.solution, &map)?;
            let scaled = b.sqrt() * (rep.outcome.solution.predict(&phi) - tau);
            let sd = phi.dot(&(&sandwich.avar * &phi)).sqrt();
            Ok((scaled / sd, scaled))
        })
        .collect::<Result<Vec<_>>>()?;
    let standardized: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let scaled: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mean = scaled.iter().sum::<f64>() / scaled.len() as f64;
    let scaled_error_variance = scaled.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (scaled.len() - 1) as f64;
    Ok(NormalityDiagnostic { ks: ks_statistic(&standardized), standardized, scaled_error_variance, small_budget_warning })
}

/// Least-squares line through (log B, log PEHE).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub budgets: Vec<usize>,
    pub mean_pehe: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
}

pub fn fit_log_log(budgets: &[usize], mean_pehe: &[f64]) -> Result<ScalingFit> {
    if budgets.len() < 4 || budgets.len() != mean_pehe.len() {
        return Err(Error::InvalidInput("scaling fit needs at least 4 (budget, PEHE) pairs".into()));
    }
    if budgets.windows(2).any(|w| w[0] >= w[1]) || budgets[0] == 0 {
        return Err(Error::InvalidInput("budget grid must be positive and strictly increasing".into()));
    }
    if mean_pehe.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::InvalidInput("log-log fit needs positive PEHE values".into()));
    }
    let xs: Vec<f64> = budgets.iter().map(|&b| (b as f64).ln()).collect();
    let ys: Vec<f64> = mean_pehe.iter().map(|v| v.ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    Ok(ScalingFit { budgets: budgets.to_vec(), mean_pehe: mean_pehe.to_vec(), slope, intercept: my - slope * mx })
}

/// Mean PEHE per budget over seeded replications, then the log-log fit.
///
/// Replication r uses the same world and unit streams at every budget.
pub fn scaling_fit(
    world: &WorldSpec,
    template: &ProtocolConfig,
    budgets: &[usize],
    replications: usize,
    master_seed: u64,
) -> Result<ScalingFit> {
    let env = &world.environment;
    let mut means = Vec::with_capacity(budgets.len());
    for &budget in budgets {
        let config = ProtocolConfig { budget, ..template.clone() };
        let values = (0..replications)
            .into_par_iter()
            .map(|r| {
                let seed = replication_seed(master_seed, r);
                let rep = replicate(world, &config, seed)?;
                let eval = evaluation_set(env, 0, seed)?;
                Ok(pehe(&rep.outcome.solution, env, &eval.points)?.value)
            })
            .collect::<Result<Vec<f64>>>()?;
        means.push(values.iter().sum::<f64>() / values.len().max(1) as f64);
    }
    fit_log_log(budgets, &means)
}
