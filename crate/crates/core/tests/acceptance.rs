//! End-to-end acceptance checks. Runs without the libtest harness so that every
//! check prints exactly one PASS/FAIL line; the process fails if any check fails.

mod common;

use std::io::Write;
use std::process::ExitCode;
use std::time::Instant;

use budgex::estimator::{fit_ridge, pseudo_outcome, ConfidenceParams};
use budgex::experiment::{run_sweep, write_metrics_csv, StrategyName, SweepRow, SweepSpec};
use budgex::metrics::{bound_violation_audit, clt_diagnostic, scaling_fit, uplift_curve, UpliftUnit};
use budgex::model::{FeatureMap, PropensityBounds, RctRecord};
use budgex::protocol::{assign_and_observe, optimal_p, run_protocol, ProtocolConfig, Strategy};
use budgex::rng::{self, derive_seed};
use budgex::synth::{
    default_hard_delta, sample_pool, CovariateSpec, Environment, LinearEnvSpec, ObsMarginalSpec, ObsPolicySpec,
    ScaledOutcomeSpec, WorldSpec,
};
use budgex::Error;
use rand::Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};

use common::{box_env, hard_env, hard_world, weak_overlap_world};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn pseudo(x: &[f64], t: u8, y: f64, p: f64) -> f64 {
    pseudo_outcome(&RctRecord { x: x.to_vec(), t, y, p, seq: 0 }).unwrap().value
}

fn unbiasedness() -> Outcome {
    let hard = hard_env(4, 0.25);
    let cases: [(&str, Environment, Vec<Vec<f64>>); 2] = [
        ("linear", box_env(), vec![vec![0.0, 0.0], vec![0.9, -0.4], vec![-0.7, 0.8]]),
        ("hard", hard, vec![vec![1.0], vec![2.0], vec![4.0]]),
    ];
    let mut worst = 0.0f64;
    let mut case = 0u64;
    for (name, env, xs) in &cases {
        for p in [0.2, 0.5, 0.8] {
            for x in xs {
                case += 1;
                let draws: Vec<f64> = (0..100_000)
                    .map(|i| {
                        let (t, y) = assign_and_observe(env, x, p, derive_seed(101, &[case]), i).unwrap();
                        pseudo(x, t, y, p)
                    })
                    .collect();
                let (mean, sd) = mean_sd(&draws);
                let z = (mean - env.true_cate(x).unwrap()).abs() / (sd / (draws.len() as f64).sqrt());
                if z > worst {
                    worst = z;
                }
                if z >= 4.0 {
                    return outcome(false, format!("{name} p={p} x={x:?}: |z| = {z:.2}"));
                }
            }
        }
    }
    outcome(true, format!("18 cells, max |z| = {worst:.2}"))
}

fn conditional_ols() -> Outcome {
    let d = 4;
    let env = hard_env(d, 0.25);
    let world = WorldSpec {
        environment: env.clone(),
        obs_policy: ObsPolicySpec::Logistic { weights: vec![1.0, 0.5, -0.5, -1.0], bias: 0.0, sharpness: 1.0 },
        obs_marginal: ObsMarginalSpec::None,
        n_pool: 1000,
        n_obs: 200,
        seed: 0,
    };
    let generated = world.generate_with_seed(7).unwrap();
    let mut config = ProtocolConfig::new(200, 100, 25, Strategy::Active {
        weights: Default::default(),
        ensemble: Default::default(),
    });
    config.seed = 7;
    let design = run_protocol(&config, &env, &generated.pool, &generated.obs).unwrap().records;
    let map = env.feature_map();
    let mut fits = vec![Vec::new(); d];
    for r in 0..2000u64 {
        let seed = derive_seed(202, &[r]);
        let records: Vec<RctRecord> = design
            .iter()
            .enumerate()
            .map(|(i, rec)| {
                let (t, y) = assign_and_observe(&env, &rec.x, rec.p, seed, i).unwrap();
                RctRecord { t, y, ..rec.clone() }
            })
            .collect();
        let theta = fit_ridge(&records, &map, 0.0).unwrap().theta_hat;
        for j in 0..d {
            fits[j].push(theta[j]);
        }
    }
    let theta_star = env.theta_star();
    let zs: Vec<f64> = (0..d)
        .map(|j| {
            let (mean, sd) = mean_sd(&fits[j]);
            (mean - theta_star[j]).abs() / (sd / 2000f64.sqrt())
        })
        .collect();
    outcome(zs.iter().all(|&z| z < 4.0), format!("|z| per coordinate {zs:.2?}"))
}

fn coverage_and_pehe_bound() -> (Outcome, Outcome) {
    let world = hard_world(4, default_hard_delta(4, 400, None), 1000);
    let env = &world.environment;
    let protocol = ProtocolConfig::new(400, 1, 400, Strategy::Random);
    let params = ConfidenceParams::with_default_sigma(&protocol.bounds, env.norm_budget(), 0.1, 1.0);
    let audit = bound_violation_audit(&world, &protocol, &params, 500, 303).unwrap();
    let counterexamples = audit.checks.iter().filter(|c| !c.violated && c.pehe > c.pehe_bound).count();
    let max_ratio = audit.checks.iter().map(|c| c.distance / c.beta).fold(0.0, f64::max);
    (
        outcome(
            audit.rate <= 0.10,
            format!("violation rate {:.3} over 500 replications, max distance/beta {max_ratio:.3}", audit.rate),
        ),
        outcome(counterexamples == 0, format!("{counterexamples} counterexamples")),
    )
}

fn clt() -> Outcome {
    let world = WorldSpec {
        environment: Environment::Linear(LinearEnvSpec {
            covariates: CovariateSpec::Segments { count: 1 },
            feature_map: FeatureMap::segment_one_hot(1),
            theta_star: vec![0.0],
            baseline_intercept: 0.5,
            baseline_weights: vec![],
            norm_budget: 0.1,
        }),
        obs_policy: ObsPolicySpec::Logistic { weights: vec![0.0], bias: 0.0, sharpness: 1.0 },
        obs_marginal: ObsMarginalSpec::None,
        n_pool: 10_000,
        n_obs: 1,
        seed: 0,
    };
    let mut protocol = ProtocolConfig::new(10_000, 1, 10_000, Strategy::Random);
    protocol.estimator_lambda = 0.0;
    let diag = clt_diagnostic(&world, &protocol, 1000, &[1.0], 505).unwrap();
    let v = diag.scaled_error_variance;
    outcome(diag.ks < 0.06 && (1.8..=2.2).contains(&v), format!("KS {:.4}, variance of sqrt(B) error {v:.3}", diag.ks))
}

fn scaling() -> Outcome {
    let budgets = [250, 500, 1000, 2000, 4000];
    // Δ is held fixed across the grid; the default cap is evaluated at the smallest budget.
    let world = hard_world(8, default_hard_delta(8, budgets[0], None), 4000);
    let template = ProtocolConfig::new(0, 1, 4000, Strategy::Random);
    let fit = scaling_fit(&world, &template, &budgets, 30, 606).unwrap();
    outcome(
        (-0.6..=-0.4).contains(&fit.slope),
        format!("slope {:.3}, mean PEHE {:.4?}", fit.slope, fit.mean_pehe),
    )
}

fn optimal_randomization() -> Outcome {
    let env = Environment::Scaled(ScaledOutcomeSpec {
        treated_scale: 1.0,
        treated_prob: 0.5,
        control_scale: 0.5,
        control_prob: 0.5,
    });
    let x = sample_pool(&env, 1, 0).unwrap().remove(0).x;
    let (a, b) = env.second_moments(&x).unwrap();
    if (a - 4.0 * b).abs() > 1e-12 {
        return outcome(false, format!("second moments ({a}, {b}) are not in ratio 4"));
    }
    let bounds = PropensityBounds::new(0.05, 0.95).unwrap();
    let p_star = optimal_p(a, b, &bounds).unwrap();
    if (p_star - 2.0 / 3.0).abs() > 1e-12 {
        return outcome(false, format!("p* = {p_star}"));
    }
    // Sample variance and its standard error.
    let stats = |p: f64, k: u64| {
        let draws: Vec<f64> = (0..100_000)
            .map(|i| {
                let (t, y) = assign_and_observe(&env, &x, p, derive_seed(707, &[k]), i).unwrap();
                pseudo(&x, t, y, p)
            })
            .collect();
        let n = draws.len() as f64;
        let (mean, sd) = mean_sd(&draws);
        let m4 = draws.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
        let var = sd * sd;
        (var, ((m4 - var * var) / n).sqrt())
    };
    let (v_star, se_star) = stats(p_star, 0);
    let mut margins = Vec::new();
    for (k, p) in [0.3, 0.4, 0.5, 0.6, 0.75].into_iter().enumerate() {
        let (v, se) = stats(p, k as u64 + 1);
        let z = (v_star - v) / (se_star * se_star + se * se).sqrt();
        if z > 4.0 {
            return outcome(false, format!("variance at p*={v_star:.4} exceeds variance at p={p} ({v:.4}), z = {z:.2}"));
        }
        margins.push(z);
    }
    outcome(true, format!("variance at p* {v_star:.4}, z against other p {margins:.2?}"))
}

fn active_vs_random() -> Outcome {
    let spec = SweepSpec {
        world: weak_overlap_world(10_000, 100, 1.0),
        protocol: ProtocolConfig::new(0, 1000, 25, Strategy::Active {
            weights: Default::default(),
            ensemble: Default::default(),
        }),
        budgets: vec![200, 1000],
        strategies: vec![StrategyName::ActiveFull, StrategyName::Random],
        replications: 50,
        seed: 808,
        n_test: 2000,
    };
    let rows = run_sweep(&spec).unwrap();
    let t_dist = StudentsT::new(0.0, 1.0, 49.0).unwrap();
    let mut pass = true;
    let mut details = Vec::new();
    for &budget in &spec.budgets {
        let cell = |s: StrategyName| -> Vec<&SweepRow> {
            rows.iter().filter(|r| r.budget == budget && r.strategy == s).collect()
        };
        let (act, rnd) = (cell(StrategyName::ActiveFull), cell(StrategyName::Random));
        let diffs: Vec<f64> = act.iter().zip(&rnd).map(|(a, r)| a.pehe - r.pehe).collect();
        let (mean, sd) = mean_sd(&diffs);
        let t = mean / (sd / (diffs.len() as f64).sqrt());
        let p = t_dist.cdf(t);
        let wins = act.iter().zip(&rnd).filter(|(a, r)| a.min_eigenvalue > r.min_eigenvalue).count();
        let ok = p < 0.05 && wins * 10 >= 6 * act.len();
        pass &= ok;
        details.push(format!(
            "B={budget}: PEHE active {:.4} random {:.4} paired p={p:.4}, eigenvalue wins {wins}/{}",
            act.iter().map(|r| r.pehe).sum::<f64>() / act.len() as f64,
            rnd.iter().map(|r| r.pehe).sum::<f64>() / rnd.len() as f64,
            act.len()
        ));
    }
    outcome(pass, details.join("; "))
}

/// Exact rational with i128 parts, always reduced with a positive denominator.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Q {
    num: i128,
    den: i128,
}

fn gcd(a: i128, b: i128) -> i128 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

impl Q {
    fn new(num: i128, den: i128) -> Q {
        assert!(den != 0);
        let g = gcd(num, den).max(1);
        let s = if den < 0 { -1 } else { 1 };
        Q { num: s * num / g, den: s * den / g }
    }
    fn int(v: i128) -> Q {
        Q { num: v, den: 1 }
    }
    fn add(self, o: Q) -> Q {
        Q::new(self.num * o.den + o.num * self.den, self.den * o.den)
    }
    fn sub(self, o: Q) -> Q {
        self.add(Q { num: -o.num, den: o.den })
    }
    fn mul(self, o: Q) -> Q {
        Q::new(self.num * o.num, self.den * o.den)
    }
    fn div(self, o: Q) -> Q {
        Q::new(self.num * o.den, self.den * o.num)
    }
    fn abs(self) -> Q {
        Q { num: self.num.abs(), den: self.den }
    }
    fn to_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

/// Brute force: each f(k) is recomputed from scratch over the top-k set, where
/// rank is counted directly from the score/id order.
fn oracle_auuc(scores: &[i64], t: &[u8], y: &[Q]) -> Option<(Vec<Q>, Q)> {
    let n = scores.len();
    let rank = |i: usize| (0..n).filter(|&j| scores[j] > scores[i] || (scores[j] == scores[i] && j < i)).count();
    let gains: Vec<Q> = (1..=n)
        .map(|k| {
            let top: Vec<usize> = (0..n).filter(|&i| rank(i) < k).collect();
            let arm = |a: u8| {
                let members: Vec<usize> = top.iter().copied().filter(|&i| t[i] == a).collect();
                let sum = members.iter().fold(Q::int(0), |acc, &i| acc.add(y[i]));
                (sum, members.len() as i128)
            };
            let ((yt, nt), (yc, nc)) = (arm(1), arm(0));
            if nt == 0 || nc == 0 {
                Q::int(0)
            } else {
                yt.div(Q::int(nt)).sub(yc.div(Q::int(nc))).mul(Q::int(nt + nc))
            }
        })
        .collect();
    let last = gains[n - 1];
    if last.num == 0 {
        return None;
    }
    let total = gains.iter().fold(Q::int(0), |acc, &g| acc.add(g.div(last.abs())));
    Some((gains.clone(), total.div(Q::int(n as i128))))
}

fn auuc_agrees(scores: &[i64], t: &[u8], y: &[Q]) -> Result<(), String> {
    let units: Vec<UpliftUnit> = (0..scores.len())
        .map(|i| UpliftUnit { id: i, score: scores[i] as f64, t: t[i], y: y[i].to_f64() })
        .collect();
    match (uplift_curve(&units), oracle_auuc(scores, t, y)) {
        (Err(Error::ZeroGlobalLift), None) => Ok(()),
        (Ok(curve), Some((gains, auuc))) => {
            let gain_gap = curve.gains.iter().zip(&gains).map(|(a, b)| (a - b.to_f64()).abs()).fold(0.0, f64::max);
            let gap = (curve.auuc - auuc.to_f64()).abs();
            if gap <= 1e-12 && gain_gap <= 1e-12 {
                Ok(())
            } else {
                Err(format!("scores {scores:?} t {t:?}: AUUC {} vs {}", curve.auuc, auuc.to_f64()))
            }
        }
        (lib, oracle) => Err(format!("scores {scores:?} t {t:?}: {:?} vs oracle {:?}", lib.map(|c| c.auuc), oracle)),
    }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

fn auuc_oracle() -> Outcome {
    let mut checked = 0;
    let mut undefined = 0;
    for perm in permutations(4) {
        let scores: Vec<i64> = perm.iter().map(|&r| 10 - r as i64).collect();
        for t_bits in 0..16u32 {
            for y_bits in 0..16u32 {
                let t: Vec<u8> = (0..4).map(|i| ((t_bits >> i) & 1) as u8).collect();
                let y: Vec<Q> = (0..4).map(|i| Q::int(((y_bits >> i) & 1) as i128)).collect();
                if let Err(e) = auuc_agrees(&scores, &t, &y) {
                    return outcome(false, e);
                }
                undefined += usize::from(oracle_auuc(&scores, &t, &y).is_none());
                checked += 1;
            }
        }
    }
    let mut r = rng::stream(909, &[]);
    for _ in 0..100 {
        let scores: Vec<i64> = (0..8).map(|_| r.random_range(0..4)).collect();
        let t: Vec<u8> = (0..8).map(|_| r.random_range(0..2)).collect();
        let y: Vec<Q> = (0..8).map(|_| Q::new(r.random_range(0..9), 4)).collect();
        if let Err(e) = auuc_agrees(&scores, &t, &y) {
            return outcome(false, e);
        }
        checked += 1;
    }
    outcome(true, format!("{checked} instances agree ({undefined} with zero global lift)"))
}

fn determinism() -> Outcome {
    let spec = SweepSpec {
        world: weak_overlap_world(400, 100, 1.0),
        protocol: ProtocolConfig::new(0, 20, 20, Strategy::Active {
            weights: Default::default(),
            ensemble: Default::default(),
        }),
        budgets: vec![40, 80],
        strategies: StrategyName::ALL.to_vec(),
        replications: 3,
        seed: 1010,
        n_test: 500,
    };
    let csv = || {
        let mut bytes = Vec::new();
        write_metrics_csv(&mut bytes, &run_sweep(&spec).unwrap()).unwrap();
        bytes
    };
    let (a, b) = (csv(), csv());
    outcome(a == b, format!("{} bytes, {} rows", a.len(), a.iter().filter(|&&c| c == b'\n').count() - 1))
}

fn main() -> ExitCode {
    let mut failed = 0;
    let mut report = |n: usize, name: &str, run: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let o = run();
        let status = if o.pass { "PASS" } else { "FAIL" };
        failed += usize::from(!o.pass);
        println!("criterion {n:>2} {name:<28} {status} ({:.1}s) {}", start.elapsed().as_secs_f64(), o.detail);
        std::io::stdout().flush().unwrap();
    };
    report(1, "pseudo-outcome unbiasedness", &mut unbiasedness);
    report(2, "conditional OLS unbiasedness", &mut conditional_ols);
    let mut pair = None;
    report(3, "ellipsoid coverage", &mut || {
        let (coverage, pehe) = coverage_and_pehe_bound();
        pair = Some(pehe);
        coverage
    });
    report(4, "PEHE bound", &mut || pair.take().unwrap());
    report(5, "normal approximation", &mut clt);
    report(6, "rate scaling", &mut scaling);
    report(7, "optimal randomization", &mut optimal_randomization);
    report(8, "active vs random", &mut active_vs_random);
    report(9, "AUUC oracle", &mut auuc_oracle);
    report(10, "sweep determinism", &mut determinism);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
