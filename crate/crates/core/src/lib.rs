//! Out-of-distribution filtering of unlabeled feature vectors.
//!
//! A Gaussian model is fitted to labeled features; every unlabeled sample is
//! scored by its squared Mahalanobis distance to that model. A threshold is
//! chosen automatically (Otsu's method on the score histogram, or two-means
//! clustering of the raw scores), and a coefficient-of-variation gate decides
//! whether the scores look bimodal enough to discard the upper partition.
//!
//! ```
//! use oodgate::{generate, run_filter, FilterConfig, GateMode, MixtureSpec};
//!
//! let data = generate(&MixtureSpec::default()).unwrap();
//! let config = FilterConfig { gate_mode: GateMode::Inverted, ..FilterConfig::default() };
//! let report = run_filter(&data.labeled, &data.unlabeled, &config).unwrap();
//! assert_eq!(report.kept_count + report.discarded_count, 90);
//! ```

pub mod error;
pub mod features;
pub mod gate;
pub mod pipeline;
pub mod stats;
pub mod synth;
pub mod threshold;

pub use error::{Error, ErrorClass, Result, Stage};
pub use features::{FeatureFormat, FeatureMatrix};
pub use gate::{
    coefficient_of_variation, evaluate_gate, gate_decision, partition, Decision, DegenerateReason,
    GateConfig, GateMode, GateStats, MomentDivisor, DEFAULT_ALPHA,
};
pub use pipeline::{
    filter_scores, filter_with_stats, run_filter, FilterConfig, FilterReport, Parameters, Verdict,
};
pub use stats::{fit_gaussian, score_dataset, DistanceSet, GaussianStats, DEFAULT_SHRINKAGE};
pub use synth::{evaluate, generate, FilterQuality, GroundTruth, MixtureSpec, SyntheticData};
pub use threshold::{
    build_histogram, kmeans_threshold, oracle_best_split, otsu_threshold, select_threshold,
    BestSplit, ScoreHistogram, ThresholdDiagnostics, ThresholdMethod, ThresholdResult,
    DEFAULT_BINS, DEFAULT_MAX_ITERS, DEFAULT_TOL,
};

pub use nalgebra::DMatrix;
