//! Seeded replications and budget/strategy sweeps.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::acquisition::{AcquisitionWeights, EnsembleSpec};
use crate::error::{Error, Result};
use crate::estimator::{InfoMatrix, RidgeSolution};
use crate::metrics::{fit_log_log, pehe, uplift_curve, UpliftUnit};
use crate::model::ObsRecord;
use crate::protocol::{run_protocol, ProtocolConfig, ProtocolOutcome, Strategy};
use crate::rng::{self, tag};
use crate::synth::{sample_rct_test, Environment, World, WorldSpec};

/// Seed of replication `r` under `master`.
pub fn replication_seed(master: u64, r: usize) -> u64 {
    rng::derive_seed(master, &[tag::REPLICATION, r as u64])
}

/// A generated world and the protocol run on it.
#[derive(Debug, Clone)]
pub struct Replication {
    pub seed: u64,
    pub world: World,
    pub outcome: ProtocolOutcome,
}

/// Draws a world with `seed` and runs the protocol with the same seed.
pub fn replicate(world: &WorldSpec, protocol: &ProtocolConfig, seed: u64) -> Result<Replication> {
    let generated = world.generate_with_seed(seed)?;
    let outcome = run_on(&generated, &world.environment, protocol, seed)?;
    Ok(Replication { seed, world: generated, outcome })
}

pub fn run_on(world: &World, env: &Environment, protocol: &ProtocolConfig, seed: u64) -> Result<ProtocolOutcome> {
    let config = ProtocolConfig { seed, ..protocol.clone() };
    run_protocol(&config, env, &world.pool, &world.obs)
}

/// Points for PEHE and a randomized held-out set for AUUC.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// The exact support when it is finite and uniform, else the test covariates.
    pub points: Vec<Vec<f64>>,
    pub test: Vec<ObsRecord>,
}

pub fn evaluation_set(env: &Environment, n_test: usize, seed: u64) -> Result<Evaluation> {
    let test = if n_test > 0 { sample_rct_test(env, n_test, 0.5, seed)? } else { Vec::new() };
    let points = match env.support_points() {
        Some(points) => points,
        None if !test.is_empty() => test.iter().map(|r| r.x.clone()).collect(),
        None => return Err(Error::InvalidConfig("continuous covariates need a positive test-set size".into())),
    };
    Ok(Evaluation { points, test })
}

/// λ_min(V₀/B), or 0 before any record.
pub fn design_min_eigenvalue(info: &InfoMatrix) -> f64 {
    if info.n() == 0 {
        return 0.0;
    }
    let scaled = info.unregularized() / info.n() as f64;
    scaled.symmetric_eigenvalues().min()
}

/// Normalized AUUC of the solution's CATE ranking, `None` at zero global lift.
pub fn solution_auuc(solution: &RidgeSolution, env: &Environment, test: &[ObsRecord]) -> Result<Option<f64>> {
    if test.len() < 2 {
        return Ok(None);
    }
    let map = env.feature_map();
    let units = test
        .iter()
        .enumerate()
        .map(|(id, r)| Ok(UpliftUnit { id, score: solution.predict(&map.apply(&r.x)?), t: r.t, y: r.y }))
        .collect::<Result<Vec<_>>>()?;
    match uplift_curve(&units) {
        Ok(curve) => Ok(Some(curve.auuc)),
        Err(Error::ZeroGlobalLift) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Acquisition variants compared in a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyName {
    ActiveFull,
    ActiveVOnly,
    ActiveDOnly,
    ActiveOOnly,
    ActiveVd,
    ActiveVo,
    ActiveDo,
    Random,
}

impl StrategyName {
    pub const ALL: [StrategyName; 8] = [
        Self::ActiveFull,
        Self::ActiveVOnly,
        Self::ActiveDOnly,
        Self::ActiveOOnly,
        Self::ActiveVd,
        Self::ActiveVo,
        Self::ActiveDo,
        Self::Random,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::ActiveFull => "active-full",
            Self::ActiveVOnly => "active-v-only",
            Self::ActiveDOnly => "active-d-only",
            Self::ActiveOOnly => "active-o-only",
            Self::ActiveVd => "active-vd",
            Self::ActiveVo => "active-vo",
            Self::ActiveDo => "active-do",
            Self::Random => "random",
        }
    }

    /// Which of (v, d, o) the variant keeps.
    fn components(self) -> Option<(bool, bool, bool)> {
        match self {
            Self::ActiveFull => Some((true, true, true)),
            Self::ActiveVOnly => Some((true, false, false)),
            Self::ActiveDOnly => Some((false, true, false)),
            Self::ActiveOOnly => Some((false, false, true)),
            Self::ActiveVd => Some((true, true, false)),
            Self::ActiveVo => Some((true, false, true)),
            Self::ActiveDo => Some((false, true, true)),
            Self::Random => None,
        }
    }

    /// The strategy with unused components zeroed from `base` weights.
    pub fn strategy(self, base: &AcquisitionWeights, ensemble: &EnsembleSpec) -> Strategy {
        match self.components() {
            None => Strategy::Random,
            Some((v, d, o)) => {
                let keep = |on: bool, w: f64| if on { w } else { 0.0 };
                Strategy::Active {
                    weights: AcquisitionWeights {
                        alpha: keep(v, base.alpha),
                        beta: keep(d, base.beta),
                        gamma: keep(o, base.gamma),
                    },
                    ensemble: ensemble.clone(),
                }
            }
        }
    }
}

fn default_n_test() -> usize {
    2000
}

/// The `sweep.json` document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub world: WorldSpec,
    /// Template; `budget` and `strategy` are overridden per cell.
    pub protocol: ProtocolConfig,
    pub budgets: Vec<usize>,
    pub strategies: Vec<StrategyName>,
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_n_test")]
    pub n_test: usize,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        if self.budgets.is_empty() || self.strategies.is_empty() {
            return Err(Error::InvalidConfig("sweep needs a nonempty budget grid and strategy list".into()));
        }
        if self.replications == 0 {
            return Err(Error::InvalidConfig("sweep needs at least one replication".into()));
        }
        for &name in &self.strategies {
            self.cell_config(self.budgets[0], name).validate(self.world.environment.dim())?;
        }
        Ok(())
    }

    pub fn cell_config(&self, budget: usize, name: StrategyName) -> ProtocolConfig {
        let (weights, ensemble) = match &self.protocol.strategy {
            Strategy::Active { weights, ensemble } => (*weights, ensemble.clone()),
            Strategy::Random => (AcquisitionWeights::default(), EnsembleSpec::default()),
        };
        ProtocolConfig { budget, strategy: name.strategy(&weights, &ensemble), ..self.protocol.clone() }
    }
}

/// One metrics.csv row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub budget: usize,
    pub strategy: StrategyName,
    pub replication: usize,
    pub seed: u64,
    pub records: usize,
    pub rounds: usize,
    pub pehe: f64,
    pub auuc: Option<f64>,
    pub min_eigenvalue: f64,
}

pub const METRICS_CSV_HEADER: &str = "budget,strategy,replication,seed,records,rounds,pehe,auuc,min_eigenvalue";

/// Scores one finished run against its evaluation set.
pub fn sweep_row(
    budget: usize,
    strategy: StrategyName,
    replication: usize,
    seed: u64,
    outcome: &ProtocolOutcome,
    env: &Environment,
    eval: &Evaluation,
) -> Result<SweepRow> {
    Ok(SweepRow {
        budget,
        strategy,
        replication,
        seed,
        records: outcome.records.len(),
        rounds: outcome.rounds.len(),
        pehe: pehe(&outcome.solution, env, &eval.points)?.value,
        auuc: solution_auuc(&outcome.solution, env, &eval.test)?,
        min_eigenvalue: design_min_eigenvalue(&outcome.solution.info),
    })
}

/// Runs every (budget, strategy, replication) cell.
///
/// Replication r shares its world, evaluation set and unit streams across cells,
/// so rows with equal `replication` are paired. Row order is budget, then
/// strategy, then replication, independent of thread scheduling.
pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    let env = &spec.world.environment;
    let worlds = (0..spec.replications)
        .into_par_iter()
        .map(|r| {
            let seed = replication_seed(spec.seed, r);
            Ok((seed, spec.world.generate_with_seed(seed)?, evaluation_set(env, spec.n_test, seed)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let cells: Vec<(usize, StrategyName, usize)> = spec
        .budgets
        .iter()
        .flat_map(|&b| spec.strategies.iter().flat_map(move |&s| (0..spec.replications).map(move |r| (b, s, r))))
        .collect();
    cells
        .into_par_iter()
        .map(|(budget, name, r)| {
            let (seed, world, eval) = &worlds[r];
            let outcome = run_on(world, env, &spec.cell_config(budget, name), *seed)?;
            sweep_row(budget, name, r, *seed, &outcome, env, eval)
        })
        .collect()
}

pub fn write_metrics_csv<W: Write>(mut w: W, rows: &[SweepRow]) -> Result<()> {
    writeln!(w, "{METRICS_CSV_HEADER}")?;
    for r in rows {
        let auuc = r.auuc.map(|a| a.to_string()).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.budget,
            r.strategy.as_str(),
            r.replication,
            r.seed,
            r.records,
            r.rounds,
            r.pehe,
            auuc,
            r.min_eigenvalue
        )?;
    }
    Ok(())
}

fn mean_sd(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.len() > 1)
        .then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    (Some(mean), sd)
}

/// Per-cell aggregates, per-strategy log-log slopes and the PEHE ordering of
/// strategies at each budget. Object keys serialize in sorted order.
pub fn sweep_summary(spec: &SweepSpec, rows: &[SweepRow]) -> Value {
    let mut budgets = spec.budgets.clone();
    budgets.sort_unstable();
    budgets.dedup();
    let mut cells = Vec::new();
    let mut slopes = serde_json::Map::new();
    let mut ordering = serde_json::Map::new();
    let mut per_budget: Vec<(usize, Vec<(StrategyName, f64)>)> = budgets.iter().map(|&b| (b, Vec::new())).collect();

    for &name in &spec.strategies {
        let mut means = Vec::new();
        for (bi, &budget) in budgets.iter().enumerate() {
            let cell: Vec<&SweepRow> = rows.iter().filter(|r| r.budget == budget && r.strategy == name).collect();
            let pehes: Vec<f64> = cell.iter().map(|r| r.pehe).collect();
            let auucs: Vec<f64> = cell.iter().filter_map(|r| r.auuc).collect();
            let eigs: Vec<f64> = cell.iter().map(|r| r.min_eigenvalue).collect();
            let (mean_pehe, sd_pehe) = mean_sd(&pehes);
            let (mean_auuc, _) = mean_sd(&auucs);
            let (mean_eig, _) = mean_sd(&eigs);
            cells.push(json!({
                "budget": budget,
                "strategy": name.as_str(),
                "replications": cell.len(),
                "mean_pehe": mean_pehe,
                "sd_pehe": sd_pehe,
                "mean_auuc": mean_auuc,
                "auuc_defined": auucs.len(),
                "mean_min_eigenvalue": mean_eig,
            }));
            if let Some(m) = mean_pehe {
                means.push(m);
                per_budget[bi].1.push((name, m));
            }
        }
        let fit = (means.len() == budgets.len())
            .then(|| fit_log_log(&budgets, &means).ok())
            .flatten()
            .map(|f| json!({ "slope": f.slope, "intercept": f.intercept }));
        slopes.insert(name.as_str().to_string(), fit.unwrap_or(Value::Null));
    }
    for (budget, mut ranked) in per_budget {
        ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        let names: Vec<&str> = ranked.iter().map(|(n, _)| n.as_str()).collect();
        ordering.insert(budget.to_string(), json!(names));
    }
    json!({
        "budgets": budgets,
        "strategies": spec.strategies.iter().map(|s| s.as_str()).collect::<Vec<_>>(),
        "replications": spec.replications,
        "seed": spec.seed,
        "cells": cells,
        "scaling": slopes,
        "pehe_ordering": ordering,
    })
}
