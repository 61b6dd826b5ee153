//! Orthogonalized CATE estimation on an adaptively collected RCT stream.
//!
//! Each randomized record is turned into the inverse-propensity pseudo-outcome
//! Ỹ = T·Y/p − (1−T)·Y/(1−p), whose conditional mean is τ(X) no matter how X was
//! selected. θ̂ then solves the ridge normal equations V_λ θ = b with
//! V_λ = λI + Σ φφᵀ and b = Σ φỸ. The information matrix drives both the
//! self-normalized confidence radius β_B(δ) and the pointwise widths
//! β·√(φᵀV_λ⁻¹φ); the sandwich Σ̂⁻¹Ω̂Σ̂⁻¹ gives asymptotic intervals.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::acquisition::PropensityModel;
use crate::error::{Error, Result};
use crate::model::{FeatureMap, FeatureVector, PropensityBounds, RctRecord};

/// Largest condition number accepted for an unregularized (λ = 0) solve.
pub const MAX_CONDITION: f64 = 1e12;

/// Ỹ for one record, tagged with the record's seq.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoOutcome {
    pub value: f64,
    pub source_seq: u64,
}

pub fn pseudo_outcome(record: &RctRecord) -> Result<PseudoOutcome> {
    if !(record.p > 0.0 && record.p < 1.0) {
        return Err(Error::RejectedRecord { seq: record.seq, reason: format!("p = {} not in (0, 1)", record.p) });
    }
    if record.t > 1 {
        return Err(Error::RejectedRecord { seq: record.seq, reason: format!("treatment {} not binary", record.t) });
    }
    let value = if record.t == 1 { record.y / record.p } else { -record.y / (1.0 - record.p) };
    Ok(PseudoOutcome { value, source_seq: record.seq })
}

/// A regression target in feature space.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPoint {
    pub phi: FeatureVector,
    pub target: f64,
}

/// Converts a record stream into (φ, Ỹ) pairs.
pub fn labeled_points(records: &[RctRecord], map: &FeatureMap) -> Result<Vec<LabeledPoint>> {
    records
        .iter()
        .map(|r| Ok(LabeledPoint { phi: map.apply(&r.x)?, target: pseudo_outcome(r)?.value }))
        .collect()
}

/// V_λ = λI + Σ w_t φ_t φ_tᵀ, maintained by rank-one updates.
#[derive(Debug, Clone, PartialEq)]
pub struct InfoMatrix {
    v: DMatrix<f64>,
    lambda: f64,
    n: usize,
}

impl InfoMatrix {
    pub fn new(dim: usize, lambda: f64) -> Self {
        Self { v: DMatrix::identity(dim, dim) * lambda, lambda, n: 0 }
    }

    /// Recomputes V_λ from scratch.
    pub fn rebuild<'a>(dim: usize, lambda: f64, phis: impl IntoIterator<Item = &'a FeatureVector>) -> Self {
        let mut info = Self::new(dim, lambda);
        for phi in phis {
            info.absorb(phi, 1.0);
        }
        info
    }

    /// V ← V + w·φφᵀ.
    pub fn absorb(&mut self, phi: &FeatureVector, weight: f64) {
        self.v.ger(weight, phi, phi, 1.0);
        self.n += 1;
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.v.nrows()
    }

    /// V₀ = V_λ − λI.
    pub fn unregularized(&self) -> DMatrix<f64> {
        &self.v - DMatrix::identity(self.dim(), self.dim()) * self.lambda
    }

    pub fn eigenvalues(&self) -> DVector<f64> {
        self.v.clone().symmetric_eigenvalues()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().min()
    }

    fn cholesky(&self) -> Result<Cholesky<f64, Dyn>> {
        Cholesky::new(self.v.clone()).ok_or_else(|| Error::SingularDesign { rank: numerical_rank(&self.v), dim: self.dim() })
    }

    /// ln det V_λ.
    pub fn log_det(&self) -> Result<f64> {
        let chol = self.cholesky()?;
        Ok(2.0 * chol.l().diagonal().iter().map(|x| x.ln()).sum::<f64>())
    }

    /// φᵀ V_λ⁻¹ φ.
    pub fn leverage(&self, phi: &FeatureVector) -> Result<f64> {
        let chol = self.cholesky()?;
        Ok(phi.dot(&chol.solve(phi)))
    }

    /// Mean leverage over many points, reusing one factorization.
    pub fn mean_leverage<'a>(&self, phis: impl IntoIterator<Item = &'a FeatureVector>) -> Result<f64> {
        let chol = self.cholesky()?;
        let mut total = 0.0;
        let mut count = 0usize;
        for phi in phis {
            total += phi.dot(&chol.solve(phi));
            count += 1;
        }
        if count == 0 {
            return Err(Error::InvalidInput("mean leverage over an empty set".into()));
        }
        Ok(total / count as f64)
    }
}

fn numerical_rank(m: &DMatrix<f64>) -> usize {
    let eig = m.clone().symmetric_eigenvalues();
    let top = eig.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    if top == 0.0 {
        return 0;
    }
    eig.iter().filter(|&&e| e > top / MAX_CONDITION).count()
}

/// θ̂_λ with the information matrix and moment vector it was solved from.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeSolution {
    pub theta_hat: DVector<f64>,
    pub info: InfoMatrix,
    pub moment: DVector<f64>,
}

impl RidgeSolution {
    pub fn predict(&self, phi: &FeatureVector) -> f64 {
        self.theta_hat.dot(phi)
    }

    /// ‖V_λθ̂ − b‖₂ / (1 + ‖b‖₂).
    pub fn normal_equation_residual(&self) -> f64 {
        (self.info.matrix() * &self.theta_hat - &self.moment).norm() / (1.0 + self.moment.norm())
    }

    /// ‖θ̂ − θ‖_{V_λ}.
    pub fn ellipsoid_distance(&self, theta: &DVector<f64>) -> f64 {
        let diff = &self.theta_hat - theta;
        diff.dot(&(self.info.matrix() * &diff)).max(0.0).sqrt()
    }

    pub fn to_document(&self) -> SolutionDocument {
        let d = self.info.dim();
        let v = self.info.matrix();
        SolutionDocument {
            theta_hat: self.theta_hat.iter().copied().collect(),
            lambda: self.info.lambda,
            n: self.info.n,
            dim: d,
            v: (0..d).flat_map(|i| (0..d).map(move |j| v[(i, j)])).collect(),
            moment: self.moment.iter().copied().collect(),
        }
    }

    pub fn from_document(doc: &SolutionDocument) -> Result<Self> {
        let d = doc.dim;
        if doc.theta_hat.len() != d || doc.moment.len() != d || doc.v.len() != d * d {
            return Err(Error::InvalidInput("solution document has inconsistent dimensions".into()));
        }
        Ok(Self {
            theta_hat: DVector::from_column_slice(&doc.theta_hat),
            info: InfoMatrix { v: DMatrix::from_row_slice(d, d, &doc.v), lambda: doc.lambda, n: doc.n },
            moment: DVector::from_column_slice(&doc.moment),
        })
    }
}

/// On-disk form of a [`RidgeSolution`] (`solution.json`); V is dense row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionDocument {
    pub theta_hat: Vec<f64>,
    pub lambda: f64,
    pub n: usize,
    pub dim: usize,
    pub v: Vec<f64>,
    pub moment: Vec<f64>,
}

/// Streaming builder for the normal equations.
#[derive(Debug, Clone)]
pub struct RidgeAccumulator {
    info: InfoMatrix,
    moment: DVector<f64>,
}

impl RidgeAccumulator {
    pub fn new(dim: usize, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!("ridge lambda must be >= 0, got {lambda}")));
        }
        Ok(Self { info: InfoMatrix::new(dim, lambda), moment: DVector::zeros(dim) })
    }

    pub fn push(&mut self, phi: &FeatureVector, target: f64, weight: f64) {
        self.info.absorb(phi, weight);
        self.moment.axpy(weight * target, phi, 1.0);
    }

    pub fn info(&self) -> &InfoMatrix {
        &self.info
    }

    pub fn solve(&self) -> Result<RidgeSolution> {
        let d = self.info.dim();
        if self.info.lambda == 0.0 {
            let eig = self.info.eigenvalues();
            let top = eig.max();
            let bottom = eig.min();
            if !(bottom > 0.0 && top / bottom < MAX_CONDITION) {
                return Err(Error::SingularDesign { rank: numerical_rank(self.info.matrix()), dim: d });
            }
        }
        let chol = self.info.cholesky()?;
        let mut theta = chol.solve(&self.moment);
        // One step of iterative refinement.
        let residual = &self.moment - self.info.matrix() * &theta;
        theta += chol.solve(&residual);
        Ok(RidgeSolution { theta_hat: theta, info: self.info.clone(), moment: self.moment.clone() })
    }
}

/// Ridge on an arbitrary labeled set with unit weights.
pub fn fit_points(points: &[LabeledPoint], dim: usize, lambda: f64) -> Result<RidgeSolution> {
    let mut acc = RidgeAccumulator::new(dim, lambda)?;
    for p in points {
        if p.phi.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: p.phi.len() });
        }
        acc.push(&p.phi, p.target, 1.0);
    }
    acc.solve()
}

/// θ̂_λ = V_λ⁻¹ b on the pseudo-outcomes of a chronological record stream.
pub fn fit_ridge(records: &[RctRecord], map: &FeatureMap, lambda: f64) -> Result<RidgeSolution> {
    fit_points(&labeled_points(records, map)?, map.output_dim(), lambda)
}

/// Solves (λI + Σ w_t φ_t φ_tᵀ) θ = Σ w_t φ_t Ỹ_t.
pub fn fit_weighted_ridge(
    records: &[RctRecord],
    weights: &[f64],
    map: &FeatureMap,
    lambda: f64,
) -> Result<RidgeSolution> {
    if weights.len() != records.len() {
        return Err(Error::InvalidInput(format!("{} weights for {} records", weights.len(), records.len())));
    }
    let mut acc = RidgeAccumulator::new(map.output_dim(), lambda)?;
    for (r, &w) in records.iter().zip(weights) {
        if !(w > 0.0 && w.is_finite()) {
            return Err(Error::RejectedRecord { seq: r.seq, reason: format!("weight {w} is not positive") });
        }
        acc.push(&map.apply(&r.x)?, pseudo_outcome(r)?.value, w);
    }
    acc.solve()
}

/// ⟨θ̂, φ(x)⟩.
pub fn predict_cate(solution: &RidgeSolution, map: &FeatureMap, x: &[f64]) -> Result<f64> {
    Ok(solution.predict(&map.apply(x)?))
}

/// Inputs to the self-normalized confidence radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceParams {
    /// Sub-Gaussian scale of the pseudo-outcome noise.
    pub sigma: f64,
    /// Norm budget S.
    pub norm_budget: f64,
    pub delta: f64,
    pub lambda: f64,
}

impl ConfidenceParams {
    /// σ = 2·L_p.
    pub fn with_default_sigma(bounds: &PropensityBounds, norm_budget: f64, delta: f64, lambda: f64) -> Self {
        Self { sigma: 2.0 * bounds.pseudo_outcome_bound(), norm_budget, delta, lambda }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) {
            return Err(Error::InvalidConfig(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidConfig(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if self.norm_budget < 0.0 {
            return Err(Error::InvalidConfig("norm budget must be nonnegative".into()));
        }
        Ok(())
    }
}

/// β_B(δ) = σ√(2 log(det(V_λ)^{1/2} / (det(λI)^{1/2} δ))) + √λ·S.
pub fn beta_bound(params: &ConfidenceParams, info: &InfoMatrix) -> Result<f64> {
    params.validate()?;
    if !(params.lambda > 0.0) {
        return Err(Error::Unsupported("the confidence radius needs lambda > 0".into()));
    }
    if (params.lambda - info.lambda()).abs() > 1e-12 * params.lambda.max(1.0) {
        return Err(Error::InvalidConfig(format!(
            "confidence lambda {} differs from the fit's lambda {}",
            params.lambda,
            info.lambda()
        )));
    }
    let log_ratio = 0.5 * (info.log_det()? - info.dim() as f64 * params.lambda.ln());
    let inner = 2.0 * (log_ratio - params.delta.ln());
    Ok(params.sigma * inner.max(0.0).sqrt() + params.lambda.sqrt() * params.norm_budget)
}

/// Half-width β_B(δ)·√(φᵀV_λ⁻¹φ) of the pointwise CATE bound.
pub fn confidence_width(solution: &RidgeSolution, params: &ConfidenceParams, phi: &FeatureVector) -> Result<f64> {
    let beta = beta_bound(params, &solution.info)?;
    Ok(beta * solution.info.leverage(phi)?.max(0.0).sqrt())
}

/// Plug-in sandwich components.
#[derive(Debug, Clone, PartialEq)]
pub struct SandwichEstimate {
    /// Σ̂ = V₀ / B.
    pub sigma_hat: DMatrix<f64>,
    /// Ω̂ = (1/B) Σ ε̂_t² φ_t φ_tᵀ.
    pub omega_hat: DMatrix<f64>,
    /// Σ̂⁻¹ Ω̂ Σ̂⁻¹.
    pub avar: DMatrix<f64>,
    pub budget: usize,
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Estimates the asymptotic covariance of √B(θ̂ − θ*) with residuals from `solution`.
pub fn sandwich_variance(records: &[RctRecord], solution: &RidgeSolution, map: &FeatureMap) -> Result<SandwichEstimate> {
    let d = map.output_dim();
    let b = records.len();
    if b < d {
        return Err(Error::InvalidInput(format!("sandwich needs at least d = {d} records, got {b}")));
    }
    let points = labeled_points(records, map)?;
    let mut gram = DMatrix::zeros(d, d);
    let mut omega = DMatrix::zeros(d, d);
    for p in &points {
        let resid = p.target - solution.predict(&p.phi);
        gram.ger(1.0, &p.phi, &p.phi, 1.0);
        omega.ger(resid * resid, &p.phi, &p.phi, 1.0);
    }
    let scale = 1.0 / b as f64;
    let sigma_hat = gram * scale;
    let omega_hat = omega * scale;
    let eig = sigma_hat.clone().symmetric_eigenvalues();
    if !(eig.min() > 0.0 && eig.max() / eig.min() < MAX_CONDITION) {
        return Err(Error::SingularDesign { rank: numerical_rank(&sigma_hat), dim: d });
    }
    let chol = Cholesky::new(sigma_hat.clone()).ok_or(Error::SingularDesign { rank: numerical_rank(&sigma_hat), dim: d })?;
    let sigma_inv = chol.inverse();
    let avar = symmetrize(&(&sigma_inv * &omega_hat * &sigma_inv));
    Ok(SandwichEstimate { sigma_hat, omega_hat, avar, budget: b })
}

/// τ̂(x) ± z·√(φᵀ·avar·φ / B).
pub fn pointwise_ci(
    solution: &RidgeSolution,
    sandwich: &SandwichEstimate,
    phi: &FeatureVector,
    level: f64,
) -> Result<(f64, f64)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidConfig(format!("confidence level must lie in (0, 1), got {level}")));
    }
    let z = standard_normal_quantile(0.5 + level / 2.0);
    let var = phi.dot(&(&sandwich.avar * phi)).max(0.0);
    let half = z * (var / sandwich.budget as f64).sqrt();
    let centre = solution.predict(phi);
    Ok((centre - half, centre + half))
}

pub fn standard_normal_quantile(q: f64) -> f64 {
    Normal::standard().inverse_cdf(q)
}

pub fn standard_normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

/// Weight for RCT samples that run against the historical assignment.
pub const GOLD_WEIGHT: f64 = 1.0;
/// Weight for RCT samples that agree with the historical assignment.
pub const SILVER_WEIGHT: f64 = 0.2;

/// Propensity-assignment gap and the resulting sample weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignmentWeight {
    pub gap: f64,
    pub weight: f64,
}

impl AlignmentWeight {
    /// gap = |t − ê_obs|; weight 1.0 when gap > 0.5 strictly, else 0.2.
    pub fn new(t: u8, e_obs: f64) -> Self {
        let gap = (f64::from(t) - e_obs).abs();
        Self { gap, weight: if gap > 0.5 { GOLD_WEIGHT } else { SILVER_WEIGHT } }
    }
}

pub fn compute_alignment_weights(
    records: &[RctRecord],
    propensity: &PropensityModel,
    map: &FeatureMap,
) -> Result<Vec<AlignmentWeight>> {
    propensity.ensure_obs_only()?;
    records
        .iter()
        .map(|r| Ok(AlignmentWeight::new(r.t, propensity.predict(&map.apply(&r.x)?))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn rec(x: f64, t: u8, y: f64, p: f64, seq: u64) -> RctRecord {
        RctRecord { x: vec![x], t, y, p, seq }
    }

    #[test]
    fn pseudo_outcome_values() {
        assert_eq!(pseudo_outcome(&rec(1.0, 1, 1.0, 0.5, 1)).unwrap().value, 2.0);
        assert_eq!(pseudo_outcome(&rec(1.0, 0, 1.0, 0.5, 1)).unwrap().value, -2.0);
        let v = pseudo_outcome(&rec(1.0, 1, 0.7, 0.2, 1)).unwrap().value;
        assert_abs_diff_eq!(v, 3.5, epsilon = 1e-15);
        assert!(v <= PropensityBounds::new(0.2, 0.8).unwrap().pseudo_outcome_bound());
        assert!(pseudo_outcome(&rec(1.0, 1, 1.0, 1.0, 4)).is_err());
        assert!(pseudo_outcome(&rec(1.0, 1, 1.0, 0.0, 4)).is_err());
    }

    #[test]
    fn ridge_hand_solutions() {
        let map = FeatureMap::segment_one_hot(2);
        // φ = e₁, Ỹ = 2 (t=1, y=1, p=0.5).
        let one = [rec(1.0, 1, 1.0, 0.5, 1)];
        let sol = fit_ridge(&one, &map, 1.0).unwrap();
        assert_eq!(sol.info.matrix(), &DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]));
        assert_eq!(sol.moment.as_slice(), &[2.0, 0.0]);
        assert_abs_diff_eq!(sol.theta_hat[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(sol.theta_hat[1], 0.0, epsilon = 1e-14);

        let map1 = FeatureMap::segment_one_hot(1);
        let two = [rec(1.0, 1, 1.0, 0.5, 1), rec(1.0, 1, 1.0, 0.5, 2)];
        let sol = fit_ridge(&two, &map1, 0.0).unwrap();
        assert_abs_diff_eq!(sol.theta_hat[0], 2.0, epsilon = 1e-14);

        match fit_ridge(&one, &map, 0.0) {
            Err(Error::SingularDesign { rank, dim }) => assert_eq!((rank, dim), (1, 2)),
            other => panic!("expected singular design, got {other:?}"),
        }
    }

    #[test]
    fn weighted_ridge_hand_mean() {
        let map = FeatureMap::segment_one_hot(1);
        let recs = [rec(1.0, 1, 1.0, 0.5, 1), rec(1.0, 0, 1.0, 0.5, 2)];
        let sol = fit_weighted_ridge(&recs, &[1.0, 0.2], &map, 0.0).unwrap();
        assert_abs_diff_eq!(sol.theta_hat[0], 4.0 / 3.0, epsilon = 1e-14);
        assert_eq!(fit_weighted_ridge(&recs, &[1.0, 1.0], &map, 0.5).unwrap(), fit_ridge(&recs, &map, 0.5).unwrap());
        assert!(fit_weighted_ridge(&recs, &[1.0, 0.0], &map, 0.0).is_err());
        assert!(fit_weighted_ridge(&recs, &[1.0], &map, 0.0).is_err());
    }

    #[test]
    fn predictions() {
        let map = FeatureMap::segment_one_hot(2);
        let recs = [rec(1.0, 1, 1.0, 0.5, 1)];
        let mut sol = fit_ridge(&recs, &map, 1.0).unwrap();
        assert_abs_diff_eq!(predict_cate(&sol, &map, &[1.0]).unwrap(), 1.0, epsilon = 1e-14);
        sol.theta_hat = DVector::zeros(2);
        assert_eq!(predict_cate(&sol, &map, &[2.0]).unwrap(), 0.0);
        sol.theta_hat = DVector::from_column_slice(&[0.3, -0.2]);
        assert_abs_diff_eq!(sol.predict(&DVector::from_column_slice(&[1.0, 1.0])), 0.1, epsilon = 1e-15);
    }

    #[test]
    fn beta_at_empty_design() {
        let info = InfoMatrix::new(3, 1.0);
        let params = ConfidenceParams { sigma: 1.0, norm_budget: 1.0, delta: (-0.5f64).exp(), lambda: 1.0 };
        assert_abs_diff_eq!(beta_bound(&params, &info).unwrap(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn beta_single_record_scalar() {
        // det ratio √2: β = √(2(½ ln 2 + ½)).
        let info = InfoMatrix::rebuild(1, 1.0, [&DVector::from_element(1, 1.0)]);
        let params = ConfidenceParams { sigma: 1.0, norm_budget: 0.0, delta: (-0.5f64).exp(), lambda: 1.0 };
        let expected = (2.0 * (0.5 * 2f64.ln() + 0.5)).sqrt();
        assert_abs_diff_eq!(beta_bound(&params, &info).unwrap(), expected, epsilon = 1e-12);
        assert_abs_diff_eq!(expected, 1.301_210, epsilon = 1e-6);
    }

    #[test]
    fn beta_rejects_bad_params() {
        let info = InfoMatrix::new(2, 0.0);
        let params = ConfidenceParams { sigma: 1.0, norm_budget: 1.0, delta: 0.1, lambda: 0.0 };
        assert!(matches!(beta_bound(&params, &info), Err(Error::Unsupported(_))));
        let info = InfoMatrix::new(2, 1.0);
        for delta in [0.0, 1.0, 1.5] {
            let params = ConfidenceParams { sigma: 1.0, norm_budget: 1.0, delta, lambda: 1.0 };
            assert!(beta_bound(&params, &info).is_err());
        }
    }

    #[test]
    fn beta_decreases_in_delta() {
        let phi = DVector::from_column_slice(&[0.6, 0.8]);
        let info = InfoMatrix::rebuild(2, 1.0, std::iter::repeat_n(&phi, 5));
        let mut prev = f64::INFINITY;
        for delta in [0.01, 0.02, 0.04, 0.08, 0.16, 0.32, 0.64] {
            let b = beta_bound(&ConfidenceParams { sigma: 2.0, norm_budget: 1.0, delta, lambda: 1.0 }, &info).unwrap();
            assert!(b <= prev);
            prev = b;
        }
    }

    #[test]
    fn widths() {
        let map = FeatureMap::segment_one_hot(2);
        let params = ConfidenceParams { sigma: 1.0, norm_budget: 1.0, delta: (-0.5f64).exp(), lambda: 1.0 };
        let empty = fit_ridge(&[], &map, 1.0).unwrap();
        let e1 = DVector::from_column_slice(&[1.0, 0.0]);
        assert_abs_diff_eq!(confidence_width(&empty, &params, &e1).unwrap(), 2.0, epsilon = 1e-12);
        assert_eq!(confidence_width(&empty, &params, &DVector::zeros(2)).unwrap(), 0.0);

        let mut recs = Vec::new();
        let mut prev_leverage = f64::INFINITY;
        for seq in 1..=20 {
            recs.push(rec(1.0, 1, 1.0, 0.5, seq));
            let sol = fit_ridge(&recs, &map, 1.0).unwrap();
            let lev = sol.info.leverage(&e1).unwrap();
            assert!(lev < prev_leverage);
            prev_leverage = lev;
        }
    }

    #[test]
    fn sandwich_zero_residuals() {
        let map = FeatureMap::segment_one_hot(1);
        let recs: Vec<_> = (1..=10).map(|s| rec(1.0, 1, 1.0, 0.5, s)).collect();
        let sol = fit_ridge(&recs, &map, 0.0).unwrap();
        let sw = sandwich_variance(&recs, &sol, &map).unwrap();
        assert_abs_diff_eq!(sw.omega_hat[(0, 0)], 0.0, epsilon = 1e-20);
        assert_abs_diff_eq!(sw.sigma_hat[(0, 0)], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn sandwich_rejects_short_or_singular() {
        let map = FeatureMap::segment_one_hot(2);
        let recs = [rec(1.0, 1, 1.0, 0.5, 1)];
        let sol = fit_ridge(&recs, &map, 1.0).unwrap();
        assert!(sandwich_variance(&recs, &sol, &map).is_err());
        let recs = [rec(1.0, 1, 1.0, 0.5, 1), rec(1.0, 0, 0.0, 0.5, 2)];
        assert!(matches!(sandwich_variance(&recs, &sol, &map), Err(Error::SingularDesign { .. })));
    }

    #[test]
    fn ci_half_widths() {
        let sol = RidgeSolution {
            theta_hat: DVector::from_element(1, 0.3),
            info: InfoMatrix::new(1, 0.0),
            moment: DVector::zeros(1),
        };
        let sw = SandwichEstimate {
            sigma_hat: DMatrix::identity(1, 1),
            omega_hat: DMatrix::from_element(1, 1, 2.0),
            avar: DMatrix::from_element(1, 1, 2.0),
            budget: 200,
        };
        let one = DVector::from_element(1, 1.0);
        let (lo, hi) = pointwise_ci(&sol, &sw, &one, 0.95).unwrap();
        assert_abs_diff_eq!((hi - lo) / 2.0, 0.196, epsilon = 1e-4);
        let (lo, hi) = pointwise_ci(&sol, &sw, &one, 0.5).unwrap();
        assert_abs_diff_eq!((hi - lo) / 2.0, 0.674_49 * 0.1, epsilon = 1e-5);
        let (lo, hi) = pointwise_ci(&sol, &sw, &DVector::zeros(1), 0.95).unwrap();
        assert_eq!((lo, hi), (0.0, 0.0));
    }

    #[test]
    fn alignment_rule() {
        let w = AlignmentWeight::new(0, 0.9);
        assert_abs_diff_eq!(w.gap, 0.9, epsilon = 1e-15);
        assert_eq!(w.weight, 1.0);
        let w = AlignmentWeight::new(1, 0.6);
        assert_abs_diff_eq!(w.gap, 0.4, epsilon = 1e-15);
        assert_eq!(w.weight, 0.2);
        let w = AlignmentWeight::new(1, 0.5);
        assert_eq!((w.gap, w.weight), (0.5, 0.2));
    }

    #[test]
    fn document_round_trip() {
        let map = FeatureMap::identity(2, 10.0);
        let recs = vec![
            RctRecord { x: vec![1.0, 0.3], t: 1, y: 1.0, p: 0.4, seq: 1 },
            RctRecord { x: vec![-0.2, 0.7], t: 0, y: 1.0, p: 0.6, seq: 2 },
        ];
        let sol = fit_ridge(&recs, &map, 0.7).unwrap();
        let text = serde_json::to_string(&sol.to_document()).unwrap();
        let back = RidgeSolution::from_document(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back, sol);
    }
}
