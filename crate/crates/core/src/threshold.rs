//! Automatic threshold selection on a score distribution.
//!
//! Otsu's method works on a histogram of the scores and picks the bin split
//! maximizing the between-class variance `ω₀ω₁(μ₀ − μ₁)²`, using bin-center
//! moments. Two-means clustering works on the raw scores with Lloyd
//! iterations seeded at the minimum and maximum score.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::DistanceSet;

pub const DEFAULT_BINS: usize = 64;
pub const DEFAULT_MAX_ITERS: usize = 100;
pub const DEFAULT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdMethod {
    Otsu,
    KMeans,
}

impl FromStr for ThresholdMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "otsu" => Ok(ThresholdMethod::Otsu),
            "kmeans" | "k-means" => Ok(ThresholdMethod::KMeans),
            other => Err(Error::InvalidParameter(format!("unknown threshold method {other:?}"))),
        }
    }
}

impl fmt::Display for ThresholdMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ThresholdMethod::Otsu => f.write_str("otsu"),
            ThresholdMethod::KMeans => f.write_str("kmeans"),
        }
    }
}

/// Equal-width histogram of scores. The last bin is closed on the right.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreHistogram {
    edges: Vec<f64>,
    counts: Vec<u64>,
    total: u64,
}

impl ScoreHistogram {
    /// Wraps precomputed bins. Edges must be strictly ascending, except for
    /// the single-bin histogram of a zero-width range, whose two edges coincide.
    pub fn from_counts(edges: Vec<f64>, counts: Vec<u64>) -> Result<Self> {
        if counts.is_empty() || edges.len() != counts.len() + 1 {
            return Err(Error::InvalidParameter(format!(
                "{} edges for {} bins",
                edges.len(),
                counts.len()
            )));
        }
        if edges.iter().any(|e| !e.is_finite()) {
            return Err(Error::InvalidParameter("non-finite bin edge".into()));
        }
        let ascending = edges.windows(2).all(|w| w[0] < w[1]);
        let degenerate = counts.len() == 1 && edges[0] == edges[1];
        if !(ascending || degenerate) {
            return Err(Error::InvalidParameter("bin edges must be strictly ascending".into()));
        }
        let total = counts.iter().sum();
        Ok(Self {
            edges,
            counts,
            total,
        })
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }
}

/// Bins `d` into `bins` equal-width bins over `[min, max]`. A zero-width range
/// yields a single bin holding every score.
pub fn build_histogram(d: &DistanceSet, bins: usize) -> Result<ScoreHistogram> {
    if bins == 0 {
        return Err(Error::InvalidParameter("bins must be at least 1".into()));
    }
    let (min, max) = match (d.min(), d.max()) {
        (Some(min), Some(max)) => (min, max),
        _ => return Err(Error::EmptyScores),
    };
    let total = d.len() as u64;
    if min == max {
        return ScoreHistogram::from_counts(vec![min, max], vec![total]);
    }
    let width = (max - min) / bins as f64;
    let mut edges: Vec<f64> = (0..bins).map(|i| min + i as f64 * width).collect();
    edges.push(max);
    let mut counts = vec![0u64; bins];
    for &x in d.distances() {
        let idx = (((x - min) / width).floor() as usize).min(bins - 1);
        counts[idx] += 1;
    }
    ScoreHistogram::from_counts(edges, counts)
}

/// Method-specific record of how a threshold was found.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdDiagnostics {
    Otsu {
        /// Between-class variance for each split `k`, where bins `0..=k` form
        /// the lower class.
        between_class_variance: Vec<f64>,
        split: usize,
        bins: usize,
    },
    #[serde(rename = "kmeans")]
    KMeans {
        centroids: [f64; 2],
        iterations: usize,
        converged: bool,
        degenerate: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdResult {
    pub tau: f64,
    pub method: ThresholdMethod,
    pub diagnostics: ThresholdDiagnostics,
}

/// Otsu's threshold: the upper edge of the lower class at the split that
/// maximizes between-class variance. Ties go to the smallest split. A
/// histogram with at most one non-empty bin puts everything in the lower
/// class and returns the last edge.
pub fn otsu_threshold(h: &ScoreHistogram) -> Result<ThresholdResult> {
    if h.total() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: h.total() as usize,
        });
    }
    let bins = h.bins();
    let total = h.total();
    let centers = h.centers();
    let weighted_total: f64 = h
        .counts()
        .iter()
        .zip(&centers)
        .map(|(&n, c)| n as f64 * c)
        .sum();

    // class sizes are accumulated as integers so an empty class is exactly empty
    let mut curve = Vec::with_capacity(bins.saturating_sub(1));
    let mut lower_n = 0u64;
    let mut lower_sum = 0.0;
    for (&n, &c) in h.counts().iter().zip(&centers).take(bins.saturating_sub(1)) {
        lower_n += n;
        lower_sum += n as f64 * c;
        let upper_n = total - lower_n;
        let sigma_b = if lower_n == 0 || upper_n == 0 {
            0.0
        } else {
            let mu0 = lower_sum / lower_n as f64;
            let mu1 = (weighted_total - lower_sum) / upper_n as f64;
            let omega0 = lower_n as f64 / total as f64;
            let omega1 = upper_n as f64 / total as f64;
            omega0 * omega1 * (mu0 - mu1).powi(2)
        };
        curve.push(sigma_b);
    }

    let occupied = h.counts().iter().filter(|&&c| c > 0).count();
    let split = if occupied <= 1 {
        bins - 1
    } else {
        let mut best = 0;
        for (k, &v) in curve.iter().enumerate() {
            if v > curve[best] {
                best = k;
            }
        }
        best
    };
    Ok(ThresholdResult {
        tau: h.edges()[split + 1],
        method: ThresholdMethod::Otsu,
        diagnostics: ThresholdDiagnostics::Otsu {
            between_class_variance: curve,
            split,
            bins,
        },
    })
}

/// Two-means clustering of the scores. Centroids start at the minimum and
/// maximum score; iteration stops when assignments repeat, when no centroid
/// moves by `tol` or more, or after `max_iters` rounds. The threshold is the
/// midpoint of the final centroids. Points equidistant from both centroids
/// join the lower cluster.
pub fn kmeans_threshold(d: &DistanceSet, max_iters: usize, tol: f64) -> Result<ThresholdResult> {
    let (min, max) = match (d.min(), d.max()) {
        (Some(min), Some(max)) => (min, max),
        _ => return Err(Error::EmptyScores),
    };
    if min == max {
        return Ok(ThresholdResult {
            tau: min,
            method: ThresholdMethod::KMeans,
            diagnostics: ThresholdDiagnostics::KMeans {
                centroids: [min, max],
                iterations: 0,
                converged: true,
                degenerate: true,
            },
        });
    }

    let scores = d.distances();
    let mut centroids = [min, max];
    let mut assignment: Vec<bool> = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iters {
        iterations += 1;
        let next: Vec<bool> = scores
            .iter()
            .map(|&x| (x - centroids[0]).abs() > (x - centroids[1]).abs())
            .collect();
        if next == assignment {
            converged = true;
            break;
        }
        assignment = next;

        let mut sums = [0.0; 2];
        let mut counts = [0usize; 2];
        for (&x, &upper) in scores.iter().zip(&assignment) {
            sums[upper as usize] += x;
            counts[upper as usize] += 1;
        }
        let mut moved = 0.0f64;
        for c in 0..2 {
            // an empty cluster keeps its previous centroid
            if counts[c] > 0 {
                let updated = sums[c] / counts[c] as f64;
                moved = moved.max((updated - centroids[c]).abs());
                centroids[c] = updated;
            }
        }
        if moved < tol {
            converged = true;
            break;
        }
    }

    Ok(ThresholdResult {
        tau: 0.5 * (centroids[0] + centroids[1]),
        method: ThresholdMethod::KMeans,
        diagnostics: ThresholdDiagnostics::KMeans {
            centroids,
            iterations,
            converged,
            degenerate: false,
        },
    })
}

/// Runs the chosen method with default iteration settings.
pub fn select_threshold(d: &DistanceSet, method: ThresholdMethod, bins: usize) -> Result<ThresholdResult> {
    match method {
        ThresholdMethod::Otsu => otsu_threshold(&build_histogram(d, bins)?),
        ThresholdMethod::KMeans => kmeans_threshold(d, DEFAULT_MAX_ITERS, DEFAULT_TOL),
    }
}

/// Globally optimal contiguous two-way split of the sorted scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BestSplit {
    /// Number of sorted scores in the lower cluster.
    pub lower_len: usize,
    /// Sum of within-cluster squared deviations.
    pub objective: f64,
    /// Midpoint between the largest lower and smallest upper score.
    pub tau: f64,
}

/// Exhaustive reference for two-means: evaluates the within-cluster sum of
/// squares at every boundary between distinct sorted values and keeps the
/// smallest (earliest on ties). With no distinct boundary, everything is
/// lower and the objective is zero. Quadratic; intended for testing.
pub fn oracle_best_split(d: &DistanceSet) -> Result<BestSplit> {
    if d.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: d.len(),
        });
    }
    let mut sorted = d.distances().to_vec();
    sorted.sort_by(f64::total_cmp);

    let sse = |xs: &[f64]| {
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        xs.iter().map(|x| (x - m).powi(2)).sum::<f64>()
    };
    let mut best: Option<BestSplit> = None;
    for k in 1..sorted.len() {
        if sorted[k - 1] == sorted[k] {
            continue;
        }
        let objective = sse(&sorted[..k]) + sse(&sorted[k..]);
        if best.is_none_or(|b| objective < b.objective) {
            best = Some(BestSplit {
                lower_len: k,
                objective,
                tau: 0.5 * (sorted[k - 1] + sorted[k]),
            });
        }
    }
    Ok(best.unwrap_or(BestSplit {
        lower_len: sorted.len(),
        objective: 0.0,
        tau: sorted[0],
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scores(v: &[f64]) -> DistanceSet {
        DistanceSet::from_scores(v.to_vec()).unwrap()
    }

    #[test]
    fn histogram_direct_binning() {
        let h = build_histogram(&scores(&[1.0, 1.0, 1.0, 9.0, 9.0, 9.0]), 8).unwrap();
        assert_eq!(h.counts(), [3, 0, 0, 0, 0, 0, 0, 3]);
        let expected: Vec<f64> = (1..=9).map(f64::from).collect();
        assert_eq!(h.edges(), expected.as_slice());
        assert_eq!(h.total(), 6);
    }

    #[test]
    fn histogram_of_constant_scores() {
        let h = build_histogram(&scores(&[5.0; 7]), 64).unwrap();
        assert_eq!(h.counts(), [7]);
        assert_eq!(h.edges(), [5.0, 5.0]);
    }

    #[test]
    fn histogram_errors() {
        assert!(matches!(
            build_histogram(&scores(&[]), 4),
            Err(Error::EmptyScores)
        ));
        assert!(build_histogram(&scores(&[1.0]), 0).is_err());
        assert!(ScoreHistogram::from_counts(vec![0.0, 0.0, 1.0], vec![1, 1]).is_err());
    }

    #[test]
    fn otsu_symmetric_tie_goes_to_first_split() {
        let h = ScoreHistogram::from_counts((1..=9).map(f64::from).collect(), vec![3, 0, 0, 0, 0, 0, 0, 3])
            .unwrap();
        let r = otsu_threshold(&h).unwrap();
        let ThresholdDiagnostics::Otsu {
            between_class_variance,
            split,
            ..
        } = &r.diagnostics
        else {
            panic!("wrong diagnostics");
        };
        assert_eq!(between_class_variance.len(), 7);
        // ω₀ = ω₁ = 1/2, μ₀ = 1.5, μ₁ = 8.5 for every split
        assert!(between_class_variance.iter().all(|&v| v == 0.25 * 49.0));
        assert_eq!(*split, 0);
        assert_eq!(r.tau, 2.0);
    }

    #[test]
    fn otsu_single_bin() {
        let h = ScoreHistogram::from_counts(vec![5.0, 5.0], vec![4]).unwrap();
        let r = otsu_threshold(&h).unwrap();
        assert_eq!(r.tau, 5.0);
        let h = ScoreHistogram::from_counts(vec![0.0, 1.0, 2.0, 3.0], vec![0, 4, 0]).unwrap();
        assert_eq!(otsu_threshold(&h).unwrap().tau, 3.0);
    }

    #[test]
    fn otsu_needs_two_samples() {
        let h = ScoreHistogram::from_counts(vec![0.0, 1.0], vec![1]).unwrap();
        assert!(otsu_threshold(&h).is_err());
    }

    #[test]
    fn kmeans_four_points() {
        let r = kmeans_threshold(&scores(&[1.0, 2.0, 9.0, 10.0]), 100, 1e-9).unwrap();
        assert_eq!(r.tau, 5.5);
        match r.diagnostics {
            ThresholdDiagnostics::KMeans {
                centroids,
                converged,
                degenerate,
                ..
            } => {
                assert_eq!(centroids, [1.5, 9.5]);
                assert!(converged && !degenerate);
            }
            _ => panic!("wrong diagnostics"),
        }
    }

    #[test]
    fn kmeans_constant_input_is_degenerate() {
        let r = kmeans_threshold(&scores(&[7.0, 7.0, 7.0]), 100, 1e-9).unwrap();
        assert_eq!(r.tau, 7.0);
        assert!(matches!(
            r.diagnostics,
            ThresholdDiagnostics::KMeans { degenerate: true, .. }
        ));
        assert!(matches!(
            kmeans_threshold(&scores(&[]), 100, 1e-9),
            Err(Error::EmptyScores)
        ));
    }

    #[test]
    fn oracle_small_cases() {
        let b = oracle_best_split(&scores(&[10.0, 1.0, 9.0, 2.0])).unwrap();
        assert_eq!(b.lower_len, 2);
        assert_eq!(b.objective, 1.0);
        assert_eq!(b.tau, 5.5);

        let b = oracle_best_split(&scores(&[0.0, 0.0, 0.0, 1.0])).unwrap();
        assert_eq!((b.lower_len, b.objective), (3, 0.0));

        assert!(oracle_best_split(&scores(&[1.0])).is_err());
    }

    #[test]
    fn method_names() {
        assert_eq!("kmeans".parse::<ThresholdMethod>().unwrap(), ThresholdMethod::KMeans);
        assert_eq!(ThresholdMethod::Otsu.to_string(), "otsu");
        assert_eq!(serde_json::to_string(&ThresholdMethod::KMeans).unwrap(), "\"kmeans\"");
    }
}
