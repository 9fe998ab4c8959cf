//! Coefficient-of-variation gate.
//!
//! The scores are split at τ into a lower set (`d ≤ τ`) and an upper set
//! (`d > τ`). With `CV = σ / μ`, the gate declares the scores bimodal when
//!
//! ```text
//! α · CV_tot < CV_lt + CV_gt
//! ```
//!
//! and in that case only the lower set is kept; otherwise every sample is
//! kept. The recorded quantities always follow that inequality literally;
//! [`GateMode`] only changes which action is taken.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::DistanceSet;

pub const DEFAULT_ALPHA: f64 = 1.12;

/// Divisor used for the standard deviations inside each CV.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MomentDivisor {
    /// Divide by N.
    #[default]
    Population,
    /// Divide by N − 1.
    Sample,
}

impl FromStr for MomentDivisor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "population" => Ok(MomentDivisor::Population),
            "sample" => Ok(MomentDivisor::Sample),
            other => Err(Error::InvalidParameter(format!("unknown divisor {other:?}"))),
        }
    }
}

impl fmt::Display for MomentDivisor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MomentDivisor::Population => f.write_str("population"),
            MomentDivisor::Sample => f.write_str("sample"),
        }
    }
}

/// How the bimodality verdict maps to an action.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateMode {
    /// Filter when the inequality holds, keep everything otherwise.
    #[default]
    AsWritten,
    /// Filter when the inequality fails, keep everything when it holds.
    Inverted,
    /// Always filter at τ; the gate statistics are still recorded.
    Bypassed,
}

impl fmt::Display for GateMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GateMode::AsWritten => f.write_str("as_written"),
            GateMode::Inverted => f.write_str("inverted"),
            GateMode::Bypassed => f.write_str("bypassed"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    KeepAll,
    Filter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegenerateReason {
    EmptyLower,
    EmptyUpper,
    ZeroMeanTotal,
    ZeroMeanLower,
    ZeroMeanUpper,
    /// Sample divisor with a single element on one side.
    SingletonPartition,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateConfig {
    pub alpha: f64,
    pub mode: GateMode,
    pub divisor: MomentDivisor,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            mode: GateMode::AsWritten,
            divisor: MomentDivisor::Population,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateStats {
    pub cv_tot: Option<f64>,
    pub cv_lt: Option<f64>,
    pub cv_gt: Option<f64>,
    pub alpha: f64,
    /// `α · CV_tot`
    pub lhs: Option<f64>,
    /// `CV_lt + CV_gt`
    pub rhs: Option<f64>,
    pub bimodal: bool,
    pub degenerate: Option<DegenerateReason>,
    pub lower_count: usize,
    pub upper_count: usize,
    pub mode: GateMode,
    pub decision: Decision,
}

/// Splits `d` into `{d ≤ τ}` and `{d > τ}`, keeping ids and input order.
pub fn partition(d: &DistanceSet, tau: f64) -> (DistanceSet, DistanceSet) {
    let mut lower = (Vec::new(), Vec::new());
    let mut upper = (Vec::new(), Vec::new());
    for (id, x) in d.iter() {
        let side = if x <= tau { &mut lower } else { &mut upper };
        side.0.push(id.to_owned());
        side.1.push(x);
    }
    // both halves come from a validated set
    let build = |(ids, xs)| DistanceSet::new(ids, xs).expect("subset of a valid distance set");
    (build(lower), build(upper))
}

/// Population coefficient of variation `σ / μ`. `None` for an empty set or a
/// zero mean.
pub fn coefficient_of_variation(d: &DistanceSet) -> Option<f64> {
    cv_with(d.distances(), MomentDivisor::Population)
}

pub fn cv_with(values: &[f64], divisor: MomentDivisor) -> Option<f64> {
    let n = values.len();
    let denom = match divisor {
        MomentDivisor::Population if n >= 1 => n as f64,
        MomentDivisor::Sample if n >= 2 => (n - 1) as f64,
        _ => return None,
    };
    let mean = values.iter().sum::<f64>() / n as f64;
    if mean == 0.0 {
        return None;
    }
    let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / denom;
    Some(var.sqrt() / mean)
}

/// Literal gate with the population divisor; `invert` flips the action.
pub fn gate_decision(d: &DistanceSet, tau: f64, alpha: f64, invert: bool) -> Result<GateStats> {
    let mode = if invert {
        GateMode::Inverted
    } else {
        GateMode::AsWritten
    };
    evaluate_gate(
        d,
        tau,
        &GateConfig {
            alpha,
            mode,
            divisor: MomentDivisor::Population,
        },
    )
}

/// Computes every gate quantity and the resulting action.
///
/// Undefined statistics (an empty side, a zero mean) mark the run degenerate
/// with `bimodal = false`; the action is then keep-all unless the gate is
/// bypassed.
pub fn evaluate_gate(d: &DistanceSet, tau: f64, config: &GateConfig) -> Result<GateStats> {
    if d.is_empty() {
        return Err(Error::EmptyScores);
    }
    if !(config.alpha.is_finite() && config.alpha > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "alpha must be positive, got {}",
            config.alpha
        )));
    }
    if tau.is_nan() {
        return Err(Error::InvalidParameter("threshold is NaN".into()));
    }
    let (lower, upper) = partition(d, tau);
    let cv_tot = cv_with(d.distances(), config.divisor);
    let cv_lt = cv_with(lower.distances(), config.divisor);
    let cv_gt = cv_with(upper.distances(), config.divisor);

    let degenerate = if lower.is_empty() {
        Some(DegenerateReason::EmptyLower)
    } else if upper.is_empty() {
        Some(DegenerateReason::EmptyUpper)
    } else if d.mean() == 0.0 {
        Some(DegenerateReason::ZeroMeanTotal)
    } else if lower.mean() == 0.0 {
        Some(DegenerateReason::ZeroMeanLower)
    } else if upper.mean() == 0.0 {
        Some(DegenerateReason::ZeroMeanUpper)
    } else if cv_lt.is_none() || cv_gt.is_none() {
        Some(DegenerateReason::SingletonPartition)
    } else {
        None
    };

    let lhs = cv_tot.map(|cv| config.alpha * cv);
    let rhs = cv_lt.zip(cv_gt).map(|(a, b)| a + b);
    let bimodal = match (degenerate, lhs, rhs) {
        (None, Some(l), Some(r)) => l < r,
        _ => false,
    };
    let decision = match (config.mode, degenerate) {
        (GateMode::Bypassed, _) => Decision::Filter,
        (_, Some(_)) => Decision::KeepAll,
        (GateMode::AsWritten, None) if bimodal => Decision::Filter,
        (GateMode::Inverted, None) if !bimodal => Decision::Filter,
        _ => Decision::KeepAll,
    };

    Ok(GateStats {
        cv_tot,
        cv_lt,
        cv_gt,
        alpha: config.alpha,
        lhs,
        rhs,
        bimodal,
        degenerate,
        lower_count: lower.len(),
        upper_count: upper.len(),
        mode: config.mode,
        decision,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scores(v: &[f64]) -> DistanceSet {
        DistanceSet::from_scores(v.to_vec()).unwrap()
    }

    #[test]
    fn partition_boundary_is_inclusive() {
        let (lo, hi) = partition(&scores(&[1.0, 2.0, 3.0]), 2.0);
        assert_eq!(lo.distances(), [1.0, 2.0]);
        assert_eq!(hi.distances(), [3.0]);
        assert_eq!(hi.ids(), ["row-2"]);

        let (lo, hi) = partition(&scores(&[5.0, 5.0]), 5.0);
        assert_eq!(lo.len(), 2);
        assert!(hi.is_empty());
    }

    #[test]
    fn cv_values() {
        assert_eq!(coefficient_of_variation(&scores(&[4.0, 4.0, 4.0])), Some(0.0));
        let cv = coefficient_of_variation(&scores(&[2.0, 4.0])).unwrap();
        assert!((cv - 1.0 / 3.0).abs() < 1e-15);
        let cv = coefficient_of_variation(&scores(&[9.0, 10.0, 11.0])).unwrap();
        assert!((cv - (2.0f64 / 3.0).sqrt() / 10.0).abs() < 1e-15);
        assert_eq!(coefficient_of_variation(&scores(&[0.0, 0.0])), None);
        assert_eq!(coefficient_of_variation(&scores(&[])), None);
        assert_eq!(cv_with(&[3.0], MomentDivisor::Sample), None);
        let cv = cv_with(&[2.0, 4.0], MomentDivisor::Sample).unwrap();
        assert!((cv - 2f64.sqrt() / 3.0).abs() < 1e-15);
    }

    #[test]
    fn two_tight_modes_keep_all_as_written() {
        let d = scores(&[10.0, 10.0, 10.0, 10.0, 10.0, 30.0, 30.0, 30.0, 30.0, 30.0]);
        let g = gate_decision(&d, 20.0, 1.12, false).unwrap();
        assert_eq!(g.cv_tot, Some(0.5));
        assert_eq!((g.cv_lt, g.cv_gt), (Some(0.0), Some(0.0)));
        assert!((g.lhs.unwrap() - 0.56).abs() < 1e-15);
        assert_eq!(g.rhs, Some(0.0));
        assert!(!g.bimodal);
        assert_eq!(g.decision, Decision::KeepAll);

        let inv = gate_decision(&d, 20.0, 1.12, true).unwrap();
        assert!(!inv.bimodal);
        assert_eq!(inv.decision, Decision::Filter);
    }

    #[test]
    fn empty_upper_side_is_degenerate() {
        let d = scores(&[1.0, 2.0, 3.0]);
        for invert in [false, true] {
            let g = gate_decision(&d, 3.0, 1.12, invert).unwrap();
            assert_eq!(g.degenerate, Some(DegenerateReason::EmptyUpper));
            assert!(!g.bimodal);
            assert_eq!(g.decision, Decision::KeepAll);
        }
        let g = evaluate_gate(
            &d,
            3.0,
            &GateConfig {
                mode: GateMode::Bypassed,
                ..GateConfig::default()
            },
        )
        .unwrap();
        assert_eq!(g.decision, Decision::Filter);
    }

    #[test]
    fn zero_lower_mean_is_degenerate() {
        let g = gate_decision(&scores(&[0.0, 0.0, 5.0, 6.0]), 1.0, 1.12, false).unwrap();
        assert_eq!(g.degenerate, Some(DegenerateReason::ZeroMeanLower));
        assert_eq!(g.cv_lt, None);
        assert_eq!(g.decision, Decision::KeepAll);
    }

    #[test]
    fn invalid_alpha() {
        let d = scores(&[1.0, 2.0]);
        assert!(gate_decision(&d, 1.0, 0.0, false).is_err());
        assert!(gate_decision(&d, 1.0, f64::NAN, false).is_err());
        assert!(matches!(
            gate_decision(&scores(&[]), 1.0, 1.12, false),
            Err(Error::EmptyScores)
        ));
    }
}
