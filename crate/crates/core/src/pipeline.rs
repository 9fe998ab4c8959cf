//! End-to-end filter: fit, score, threshold, gate, verdicts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Stage};
use crate::features::FeatureMatrix;
use crate::gate::{
    evaluate_gate, Decision, DegenerateReason, GateConfig, GateMode, GateStats, MomentDivisor,
    DEFAULT_ALPHA,
};
use crate::stats::{fit_gaussian, score_dataset, DistanceSet, GaussianStats, DEFAULT_SHRINKAGE};
use crate::threshold::{
    select_threshold, ThresholdDiagnostics, ThresholdMethod, ThresholdResult, DEFAULT_BINS,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterConfig {
    pub method: ThresholdMethod,
    pub bins: usize,
    pub alpha: f64,
    /// Shrinkage factor ε; the applied λ is `ε · trace(Σ) / D`.
    pub shrinkage: f64,
    pub gate_mode: GateMode,
    pub divisor: MomentDivisor,
    /// Recorded for audit; the filter itself draws no random numbers.
    pub seed: Option<u64>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            method: ThresholdMethod::Otsu,
            bins: DEFAULT_BINS,
            alpha: DEFAULT_ALPHA,
            shrinkage: DEFAULT_SHRINKAGE,
            gate_mode: GateMode::AsWritten,
            divisor: MomentDivisor::Population,
            seed: None,
        }
    }
}

impl FilterConfig {
    pub fn parameters(&self) -> Parameters {
        Parameters {
            method: self.method,
            bins: self.bins,
            alpha: self.alpha,
            shrinkage: self.shrinkage,
            invert_gate: self.gate_mode == GateMode::Inverted,
            bypass_gate: self.gate_mode == GateMode::Bypassed,
            cv_divisor: self.divisor,
            seed: self.seed,
        }
    }

    fn gate(&self) -> GateConfig {
        GateConfig {
            alpha: self.alpha,
            mode: self.gate_mode,
            divisor: self.divisor,
        }
    }
}

/// Resolved configuration as echoed into a report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Parameters {
    pub method: ThresholdMethod,
    pub bins: usize,
    pub alpha: f64,
    pub shrinkage: f64,
    pub invert_gate: bool,
    pub bypass_gate: bool,
    pub cv_divisor: MomentDivisor,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub id: String,
    pub distance: f64,
    pub kept: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterReport {
    pub threshold: ThresholdResult,
    pub gate: GateStats,
    pub verdicts: Vec<Verdict>,
    pub kept_count: usize,
    pub discarded_count: usize,
    pub parameters: Parameters,
    /// λ added to the covariance diagonal, when the report came from features.
    pub applied_shrinkage: Option<f64>,
}

/// First line of a JSONL manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ManifestHeader {
    tau: f64,
    method: ThresholdMethod,
    alpha: f64,
    cv_tot: Option<f64>,
    cv_lt: Option<f64>,
    cv_gt: Option<f64>,
    lhs: Option<f64>,
    rhs: Option<f64>,
    bimodal: bool,
    degenerate: Option<DegenerateReason>,
    gate_mode: GateMode,
    decision: Decision,
    lower_count: usize,
    upper_count: usize,
    kept_count: usize,
    discarded_count: usize,
    applied_shrinkage: Option<f64>,
    diagnostics: ThresholdDiagnostics,
    parameters: Parameters,
}

impl FilterReport {
    pub fn kept_ids(&self) -> impl Iterator<Item = &str> {
        self.verdicts.iter().filter(|v| v.kept).map(|v| v.id.as_str())
    }

    pub fn discarded_ids(&self) -> impl Iterator<Item = &str> {
        self.verdicts.iter().filter(|v| !v.kept).map(|v| v.id.as_str())
    }

    /// Newline-terminated id list of kept samples, in input order.
    pub fn keep_list(&self) -> String {
        self.kept_ids().map(|id| format!("{id}\n")).collect()
    }

    pub fn discard_list(&self) -> String {
        self.discarded_ids().map(|id| format!("{id}\n")).collect()
    }

    /// Header record followed by one `{id, distance, kept}` record per sample.
    pub fn to_jsonl(&self) -> String {
        let header = ManifestHeader {
            tau: self.threshold.tau,
            method: self.threshold.method,
            alpha: self.gate.alpha,
            cv_tot: self.gate.cv_tot,
            cv_lt: self.gate.cv_lt,
            cv_gt: self.gate.cv_gt,
            lhs: self.gate.lhs,
            rhs: self.gate.rhs,
            bimodal: self.gate.bimodal,
            degenerate: self.gate.degenerate,
            gate_mode: self.gate.mode,
            decision: self.gate.decision,
            lower_count: self.gate.lower_count,
            upper_count: self.gate.upper_count,
            kept_count: self.kept_count,
            discarded_count: self.discarded_count,
            applied_shrinkage: self.applied_shrinkage,
            diagnostics: self.threshold.diagnostics.clone(),
            parameters: self.parameters,
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for v in &self.verdicts {
            out.push_str(&serde_json::to_string(v).expect("verdict serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let first = lines
            .next()
            .ok_or_else(|| Error::format(None, "empty manifest"))?;
        let h: ManifestHeader = serde_json::from_str(first)
            .map_err(|e| Error::format(None, format!("manifest header: {e}")))?;
        let verdicts = lines
            .enumerate()
            .map(|(row, line)| {
                serde_json::from_str::<Verdict>(line).map_err(|e| Error::format(Some(row), e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        let kept = verdicts.iter().filter(|v| v.kept).count();
        if kept != h.kept_count || verdicts.len() - kept != h.discarded_count {
            return Err(Error::format(
                None,
                "manifest counts disagree with its records",
            ));
        }
        Ok(Self {
            threshold: ThresholdResult {
                tau: h.tau,
                method: h.method,
                diagnostics: h.diagnostics,
            },
            gate: GateStats {
                cv_tot: h.cv_tot,
                cv_lt: h.cv_lt,
                cv_gt: h.cv_gt,
                alpha: h.alpha,
                lhs: h.lhs,
                rhs: h.rhs,
                bimodal: h.bimodal,
                degenerate: h.degenerate,
                lower_count: h.lower_count,
                upper_count: h.upper_count,
                mode: h.gate_mode,
                decision: h.decision,
            },
            verdicts,
            kept_count: h.kept_count,
            discarded_count: h.discarded_count,
            parameters: h.parameters,
            applied_shrinkage: h.applied_shrinkage,
        })
    }
}

/// Thresholds and gates an existing score set.
pub fn filter_scores(distances: &DistanceSet, config: &FilterConfig) -> Result<FilterReport> {
    if distances.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: distances.len(),
        }
        .at_stage(Stage::Threshold));
    }
    let threshold = select_threshold(distances, config.method, config.bins)
        .map_err(|e| e.at_stage(Stage::Threshold))?;
    let gate = evaluate_gate(distances, threshold.tau, &config.gate())
        .map_err(|e| e.at_stage(Stage::Gate))?;

    let keep_all = gate.decision == Decision::KeepAll;
    let verdicts: Vec<Verdict> = distances
        .iter()
        .map(|(id, distance)| Verdict {
            id: id.to_owned(),
            distance,
            kept: keep_all || distance <= threshold.tau,
        })
        .collect();
    let kept_count = verdicts.iter().filter(|v| v.kept).count();
    Ok(FilterReport {
        discarded_count: verdicts.len() - kept_count,
        kept_count,
        threshold,
        gate,
        verdicts,
        parameters: config.parameters(),
        applied_shrinkage: None,
    })
}

/// Scores `unlabeled` against a fitted model, then filters.
pub fn filter_with_stats(
    stats: &GaussianStats,
    unlabeled: &FeatureMatrix,
    config: &FilterConfig,
) -> Result<FilterReport> {
    let distances = score_dataset(stats, unlabeled).map_err(|e| e.at_stage(Stage::Score))?;
    let mut report = filter_scores(&distances, config)?;
    report.applied_shrinkage = Some(stats.shrinkage());
    Ok(report)
}

/// Full pipeline from labeled and unlabeled features.
pub fn run_filter(
    labeled: &FeatureMatrix,
    unlabeled: &FeatureMatrix,
    config: &FilterConfig,
) -> Result<FilterReport> {
    if labeled.dims() != unlabeled.dims() {
        return Err(Error::DimensionMismatch {
            expected: labeled.dims(),
            got: unlabeled.dims(),
        }
        .at_stage(Stage::Load));
    }
    let stats = fit_gaussian(labeled, config.shrinkage).map_err(|e| e.at_stage(Stage::Fit))?;
    filter_with_stats(&stats, unlabeled, config)
}
