//! Labeled-set Gaussian model and Mahalanobis scoring.
//!
//! The labeled features are summarized by their sample mean and unbiased
//! covariance. Because the labeled set is often smaller than the feature
//! dimension, the covariance is shrunk toward a scaled identity before
//! inversion: `Σ + λI` with `λ = ε · trace(Σ) / D`, floored at
//! `1e-12 · max(1, trace(Σ) / D)` so that `λ > 0` always holds.
//!
//! Scores are the *squared* Mahalanobis form `(μ - h)ᵀ (Σ + λI)⁻¹ (μ - h)`.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

pub const GSTA_MAGIC: &[u8; 4] = b"GSTA";
pub const GSTA_VERSION: u32 = 1;

/// Default shrinkage factor ε.
pub const DEFAULT_SHRINKAGE: f64 = 1e-3;

const SHRINKAGE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    inverse: DMatrix<f64>,
    shrinkage: f64,
}

impl GaussianStats {
    /// Builds the model from an explicit mean, covariance and shrinkage λ.
    /// The inverse of `covariance + λI` is computed by Cholesky factorization.
    pub fn from_parts(mean: Vec<f64>, covariance: DMatrix<f64>, shrinkage: f64) -> Result<Self> {
        let dims = mean.len();
        if dims == 0 {
            return Err(Error::InvalidParameter("mean must have at least one entry".into()));
        }
        if covariance.shape() != (dims, dims) {
            return Err(Error::DimensionMismatch {
                expected: dims,
                got: covariance.nrows(),
            });
        }
        if !(shrinkage.is_finite() && shrinkage >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "shrinkage must be finite and non-negative, got {shrinkage}"
            )));
        }
        if mean.iter().chain(covariance.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite mean or covariance".into()));
        }
        let inverse = regularized_inverse(&covariance, shrinkage)?;
        Ok(Self {
            mean: DVector::from_vec(mean),
            covariance,
            inverse,
            shrinkage,
        })
    }

    pub fn dims(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    /// Inverse of `covariance + shrinkage · I`.
    pub fn inverse(&self) -> &DMatrix<f64> {
        &self.inverse
    }

    /// The λ actually added to the covariance diagonal.
    pub fn shrinkage(&self) -> f64 {
        self.shrinkage
    }

    /// `covariance + shrinkage · I`.
    pub fn regularized_covariance(&self) -> DMatrix<f64> {
        &self.covariance + DMatrix::identity(self.dims(), self.dims()) * self.shrinkage
    }

    /// Squared Mahalanobis distance of `h` to the labeled mean.
    pub fn mahalanobis(&self, h: &[f64]) -> Result<f64> {
        if h.len() != self.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                got: h.len(),
            });
        }
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite feature vector".into()));
        }
        let diff = &self.mean - DVector::from_column_slice(h);
        let q = diff.dot(&(&self.inverse * &diff));
        // the inverse is positive definite; only rounding can push q below 0
        Ok(q.max(0.0))
    }

    pub fn to_gsta_bytes(&self) -> Vec<u8> {
        let d = self.dims();
        let mut out = Vec::with_capacity(16 + 8 * (d + 2 * d * d + 1));
        out.extend_from_slice(GSTA_MAGIC);
        out.extend_from_slice(&GSTA_VERSION.to_le_bytes());
        out.extend_from_slice(&(d as u64).to_le_bytes());
        let row_major = |m: &DMatrix<f64>| m.transpose().iter().copied().collect::<Vec<_>>();
        for v in self
            .mean
            .iter()
            .copied()
            .chain(row_major(&self.covariance))
            .chain(row_major(&self.inverse))
            .chain(std::iter::once(self.shrinkage))
        {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_gsta_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != GSTA_MAGIC {
            return Err(Error::format(None, "bad magic, expected \"GSTA\""));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != GSTA_VERSION {
            return Err(Error::format(None, format!("unsupported GSTA version {version}")));
        }
        let d = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        let d = usize::try_from(d)
            .ok()
            .filter(|&d| d >= 1)
            .ok_or_else(|| Error::format(None, format!("invalid dims {d}")))?;
        let count = d
            .checked_mul(d)
            .and_then(|dd| dd.checked_mul(2))
            .and_then(|n| n.checked_add(d + 1))
            .ok_or_else(|| Error::format(None, "dims too large"))?;
        let payload = &bytes[16..];
        if payload.len() != count * 8 {
            return Err(Error::Truncated(format!(
                "expected {} payload bytes for dims {d}, found {}",
                count * 8,
                payload.len()
            )));
        }
        let values: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::format(None, format!("non-finite value at payload index {pos}")));
        }
        let mean = DVector::from_column_slice(&values[..d]);
        let covariance = DMatrix::from_row_slice(d, d, &values[d..d + d * d]);
        let inverse = DMatrix::from_row_slice(d, d, &values[d + d * d..d + 2 * d * d]);
        let shrinkage = values[count - 1];
        Ok(Self {
            mean,
            covariance,
            inverse,
            shrinkage,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&self.to_gsta_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_gsta_bytes(&bytes)
    }
}

fn regularized_inverse(covariance: &DMatrix<f64>, shrinkage: f64) -> Result<DMatrix<f64>> {
    let d = covariance.nrows();
    let regularized = covariance + DMatrix::identity(d, d) * shrinkage;
    let chol = Cholesky::new(regularized).ok_or_else(|| {
        Error::Numerical(format!(
            "covariance + {shrinkage:e}·I is not positive definite"
        ))
    })?;
    let inv = chol.inverse();
    let inv = (&inv + inv.transpose()) * 0.5;
    if inv.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("regularized inverse is not finite".into()));
    }
    Ok(inv)
}

/// Shrinkage λ applied for a covariance with the given trace.
pub fn applied_shrinkage(shrinkage_factor: f64, trace: f64, dims: usize) -> f64 {
    let avg = trace / dims as f64;
    (shrinkage_factor * avg).max(SHRINKAGE_FLOOR * avg.max(1.0))
}

/// Fits the labeled-set Gaussian: sample mean, unbiased covariance and the
/// inverse of the shrunk covariance.
pub fn fit_gaussian(labeled: &FeatureMatrix, shrinkage_factor: f64) -> Result<GaussianStats> {
    let n = labeled.rows();
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    if !(shrinkage_factor.is_finite() && shrinkage_factor >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "shrinkage factor must be finite and non-negative, got {shrinkage_factor}"
        )));
    }
    let d = labeled.dims();
    let x = DMatrix::from_row_slice(n, d, labeled.data());
    let mean = x.row_mean().transpose();
    let mut centered = x;
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let mut covariance = centered.transpose() * &centered / (n - 1) as f64;
    covariance = (&covariance + covariance.transpose()) * 0.5;

    let shrinkage = applied_shrinkage(shrinkage_factor, covariance.trace(), d);
    GaussianStats::from_parts(mean.as_slice().to_vec(), covariance, shrinkage)
}

/// Mahalanobis scores of a set of samples, with population moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceSet {
    ids: Vec<String>,
    distances: Vec<f64>,
    mean: f64,
    stddev: f64,
}

impl DistanceSet {
    /// Builds a set from parallel id and distance lists. Distances must be
    /// finite and non-negative. An empty set has zero mean and deviation.
    pub fn new(ids: Vec<String>, distances: Vec<f64>) -> Result<Self> {
        if ids.len() != distances.len() {
            return Err(Error::DimensionMismatch {
                expected: ids.len(),
                got: distances.len(),
            });
        }
        if let Some(row) = distances.iter().position(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(Error::format(
                Some(row),
                format!("distance {} is not a finite non-negative number", distances[row]),
            ));
        }
        let (mean, stddev) = population_moments(&distances);
        Ok(Self {
            ids,
            distances,
            mean,
            stddev,
        })
    }

    /// Convenience constructor with `row-<index>` ids.
    pub fn from_scores(distances: Vec<f64>) -> Result<Self> {
        let ids = (0..distances.len()).map(crate::features::synthetic_id).collect();
        Self::new(ids, distances)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn distances(&self) -> &[f64] {
        &self.distances
    }

    pub fn len(&self) -> usize {
        self.distances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.distances.is_empty()
    }

    /// Population mean.
    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Population standard deviation.
    pub fn stddev(&self) -> f64 {
        self.stddev
    }

    pub fn min(&self) -> Option<f64> {
        self.distances.iter().copied().reduce(f64::min)
    }

    pub fn max(&self) -> Option<f64> {
        self.distances.iter().copied().reduce(f64::max)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.ids
            .iter()
            .map(String::as_str)
            .zip(self.distances.iter().copied())
    }

    /// Writes one `{"id":..,"distance":..}` JSON object per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (id, distance) in self.iter() {
            let record = serde_json::json!({ "id": id, "distance": distance });
            out.push_str(&record.to_string());
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Record {
            id: String,
            distance: f64,
        }
        let mut ids = Vec::new();
        let mut distances = Vec::new();
        for (row, line) in text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
            let r: Record = serde_json::from_str(line)
                .map_err(|e| Error::format(Some(row), e.to_string()))?;
            ids.push(r.id);
            distances.push(r.distance);
        }
        Self::new(ids, distances)
    }
}

/// Population (divide by N) mean and standard deviation; `(0, 0)` when empty.
pub fn population_moments(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Scores every row of `unlabeled`, preserving input order.
pub fn score_dataset(stats: &GaussianStats, unlabeled: &FeatureMatrix) -> Result<DistanceSet> {
    if unlabeled.dims() != stats.dims() {
        return Err(Error::DimensionMismatch {
            expected: stats.dims(),
            got: unlabeled.dims(),
        });
    }
    let distances = unlabeled
        .iter_rows()
        .map(|(_, row)| stats.mahalanobis(row))
        .collect::<Result<Vec<_>>>()?;
    DistanceSet::new(unlabeled.ids().to_vec(), distances)
}
