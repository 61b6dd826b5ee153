//! Shared domain types: feature maps, observational and randomized records,
//! the candidate pool, and newline-delimited JSON persistence.

use std::fmt;
use std::io::{BufRead, Write};

use nalgebra::DVector;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A representation vector φ(x).
pub type FeatureVector = DVector<f64>;

/// The shape of a fixed feature map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FeatureMapKind {
    /// φ(x) = x.
    Identity { dim: usize },
    /// The covariate is a single coordinate holding a segment index j ∈ 1..=segments;
    /// φ(x) = e_j.
    SegmentOneHot { segments: usize },
    /// φ(x) = W x + b, with `weights` stored row-major (one row per output coordinate).
    AffineProjection { weights: Vec<Vec<f64>>, offset: Vec<f64> },
}

/// A fixed feature map together with its declared norm bound L.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    #[serde(flatten)]
    pub kind: FeatureMapKind,
    /// Declared bound on ‖φ(x)‖₂.
    pub norm_bound: f64,
}

const NORM_SLACK: f64 = 1e-12;

impl FeatureMap {
    pub fn identity(dim: usize, norm_bound: f64) -> Self {
        Self { kind: FeatureMapKind::Identity { dim }, norm_bound }
    }

    /// One-hot segment map with L = 1.
    pub fn segment_one_hot(segments: usize) -> Self {
        Self { kind: FeatureMapKind::SegmentOneHot { segments }, norm_bound: 1.0 }
    }

    pub fn affine(weights: Vec<Vec<f64>>, offset: Vec<f64>, norm_bound: f64) -> Self {
        Self { kind: FeatureMapKind::AffineProjection { weights, offset }, norm_bound }
    }

    pub fn output_dim(&self) -> usize {
        match &self.kind {
            FeatureMapKind::Identity { dim } => *dim,
            FeatureMapKind::SegmentOneHot { segments } => *segments,
            FeatureMapKind::AffineProjection { offset, .. } => offset.len(),
        }
    }

    pub fn input_dim(&self) -> usize {
        match &self.kind {
            FeatureMapKind::Identity { dim } => *dim,
            FeatureMapKind::SegmentOneHot { .. } => 1,
            FeatureMapKind::AffineProjection { weights, .. } => weights.first().map_or(0, Vec::len),
        }
    }

    /// Checks the map's own shape: positive dimensions, consistent rows, L > 0.
    pub fn validate(&self) -> Result<()> {
        if !(self.norm_bound.is_finite() && self.norm_bound > 0.0) {
            return Err(Error::InvalidSpec(format!("norm bound must be positive, got {}", self.norm_bound)));
        }
        match &self.kind {
            FeatureMapKind::Identity { dim } if *dim == 0 => {
                Err(Error::InvalidSpec("identity map needs dim >= 1".into()))
            }
            FeatureMapKind::SegmentOneHot { segments } if *segments == 0 => {
                Err(Error::InvalidSpec("segment map needs at least one segment".into()))
            }
            FeatureMapKind::AffineProjection { weights, offset } => {
                if weights.is_empty() || weights.len() != offset.len() {
                    return Err(Error::InvalidSpec("affine map needs one weight row per offset entry".into()));
                }
                let cols = weights[0].len();
                if cols == 0 || weights.iter().any(|r| r.len() != cols) {
                    return Err(Error::InvalidSpec("affine map weight rows must share a positive length".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// φ(x) without the norm check.
    pub fn apply_unbounded(&self, x: &[f64]) -> Result<FeatureVector> {
        let expected = self.input_dim();
        if x.len() != expected {
            return Err(Error::DimensionMismatch { expected, got: x.len() });
        }
        match &self.kind {
            FeatureMapKind::Identity { .. } => Ok(DVector::from_column_slice(x)),
            FeatureMapKind::SegmentOneHot { segments } => {
                let j = x[0];
                if j.fract() != 0.0 || j < 1.0 || j > *segments as f64 {
                    return Err(Error::InvalidInput(format!(
                        "segment index {j} outside 1..={segments}"
                    )));
                }
                let mut v = DVector::zeros(*segments);
                v[j as usize - 1] = 1.0;
                Ok(v)
            }
            FeatureMapKind::AffineProjection { weights, offset } => Ok(DVector::from_iterator(
                offset.len(),
                weights
                    .iter()
                    .zip(offset)
                    .map(|(row, b)| row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + b),
            )),
        }
    }

    /// φ(x), rejecting inputs of the wrong dimension and outputs with ‖φ(x)‖₂ > L.
    pub fn apply(&self, x: &[f64]) -> Result<FeatureVector> {
        let phi = self.apply_unbounded(x)?;
        let norm = phi.norm();
        if norm > self.norm_bound * (1.0 + NORM_SLACK) {
            return Err(Error::NormBoundExceeded { norm, bound: self.norm_bound });
        }
        Ok(phi)
    }
}

/// One observational log entry (X, T, Y).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObsRecord {
    pub x: Vec<f64>,
    pub t: u8,
    pub y: f64,
}

/// One adaptively queried randomized unit (X, T, Y, p) with its query index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RctRecord {
    pub x: Vec<f64>,
    pub t: u8,
    pub y: f64,
    pub p: f64,
    pub seq: u64,
}

/// A candidate in the unlabeled target pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolUnit {
    pub id: usize,
    pub x: Vec<f64>,
    #[serde(default)]
    pub queried: bool,
}

/// Bounds [f_min, f_max] on the randomization probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropensityBounds {
    pub f_min: f64,
    pub f_max: f64,
}

impl Default for PropensityBounds {
    fn default() -> Self {
        Self { f_min: 0.2, f_max: 0.8 }
    }
}

impl PropensityBounds {
    pub fn new(f_min: f64, f_max: f64) -> Result<Self> {
        let b = Self { f_min, f_max };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.f_min > 0.0 && self.f_min <= self.f_max && self.f_max < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "propensity bounds must satisfy 0 < f_min <= f_max < 1, got [{}, {}]",
                self.f_min, self.f_max
            )));
        }
        Ok(())
    }

    pub fn contains(&self, p: f64) -> bool {
        p >= self.f_min && p <= self.f_max
    }

    /// L_p = max{1/f_min, 1/(1 − f_max)}: the almost-sure bound on |Ỹ|.
    pub fn pseudo_outcome_bound(&self) -> f64 {
        (1.0 / self.f_min).max(1.0 / (1.0 - self.f_max))
    }
}

/// What went wrong with an RCT stream.
#[derive(Debug, Clone, PartialEq)]
pub enum ViolationKind {
    ProbabilityOutOfBounds { p: f64 },
    TreatmentNotBinary { t: u8 },
    OutcomeOutOfRange { y: f64 },
    SeqNotIncreasing { previous: u64 },
}

/// The first offending record of a stream.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamViolation {
    pub index: usize,
    pub seq: u64,
    pub kind: ViolationKind,
}

impl fmt::Display for StreamViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "record {} (seq {}): ", self.index, self.seq)?;
        match &self.kind {
            ViolationKind::ProbabilityOutOfBounds { p } => write!(f, "p = {p} outside bounds"),
            ViolationKind::TreatmentNotBinary { t } => write!(f, "treatment {t} is not binary"),
            ViolationKind::OutcomeOutOfRange { y } => write!(f, "outcome {y} outside [0, 1]"),
            ViolationKind::SeqNotIncreasing { previous } => {
                write!(f, "seq not increasing after {previous}")
            }
        }
    }
}

/// Checks every record invariant and reports the first violation.
pub fn validate_rct_stream(
    records: &[RctRecord],
    bounds: &PropensityBounds,
) -> std::result::Result<(), StreamViolation> {
    let mut previous: Option<u64> = None;
    for (index, r) in records.iter().enumerate() {
        let fail = |kind| Err(StreamViolation { index, seq: r.seq, kind });
        if r.t > 1 {
            return fail(ViolationKind::TreatmentNotBinary { t: r.t });
        }
        if !(0.0..=1.0).contains(&r.y) {
            return fail(ViolationKind::OutcomeOutOfRange { y: r.y });
        }
        if !bounds.contains(r.p) {
            return fail(ViolationKind::ProbabilityOutOfBounds { p: r.p });
        }
        if let Some(prev) = previous {
            if r.seq <= prev {
                return fail(ViolationKind::SeqNotIncreasing { previous: prev });
            }
        }
        previous = Some(r.seq);
    }
    Ok(())
}

/// Writes one JSON document per line.
pub fn write_jsonl<W: Write, T: Serialize>(mut w: W, items: &[T]) -> Result<()> {
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads newline-delimited JSON, skipping blank lines.
pub fn read_jsonl<R: BufRead, T: DeserializeOwned>(r: R) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}
