//! Synthetic distribution-mismatch datasets with known ground truth.
//!
//! Labeled rows and in-distribution unlabeled rows are drawn from an
//! isotropic Gaussian at the origin; out-of-distribution rows are shifted by
//! `separation` in every dimension. Randomness comes from a ChaCha8 stream
//! seeded with the 64-bit `seed`. Generated values are rounded to single
//! precision so that datasets survive a trip through the FEAT format intact.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::pipeline::FilterReport;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub dims: usize,
    pub n_labeled: usize,
    pub n_unlabeled: usize,
    pub contamination: f64,
    pub separation: f64,
    pub iod_sd: f64,
    pub ood_sd: f64,
    pub seed: u64,
}

impl Default for MixtureSpec {
    fn default() -> Self {
        Self {
            dims: 16,
            n_labeled: 200,
            n_unlabeled: 90,
            contamination: 0.2,
            separation: 8.0,
            iod_sd: 1.0,
            ood_sd: 1.0,
            seed: 0,
        }
    }
}

impl MixtureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dims == 0 || self.n_labeled == 0 || self.n_unlabeled == 0 {
            return Err(Error::InvalidParameter(
                "dims, n_labeled and n_unlabeled must all be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.contamination) {
            return Err(Error::InvalidParameter(format!(
                "contamination must lie in [0, 1], got {}",
                self.contamination
            )));
        }
        if !self.separation.is_finite() {
            return Err(Error::InvalidParameter("separation must be finite".into()));
        }
        for (name, sd) in [("iod_sd", self.iod_sd), ("ood_sd", self.ood_sd)] {
            if !(sd.is_finite() && sd >= 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be finite and non-negative, got {sd}"
                )));
            }
        }
        Ok(())
    }

    /// Number of out-of-distribution unlabeled rows.
    pub fn ood_count(&self) -> usize {
        (self.contamination * self.n_unlabeled as f64).round() as usize
    }
}

/// Per-id out-of-distribution flags.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GroundTruth(pub BTreeMap<String, bool>);

impl GroundTruth {
    pub fn is_ood(&self, id: &str) -> Option<bool> {
        self.0.get(id).copied()
    }

    pub fn ood_count(&self) -> usize {
        self.0.values().filter(|&&v| v).count()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("map of bools serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::format(None, format!("truth file: {e}")))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub labeled: FeatureMatrix,
    pub unlabeled: FeatureMatrix,
    pub truth: GroundTruth,
}

fn draw_row(rng: &mut ChaCha8Rng, dims: usize, offset: f64, sd: f64) -> Vec<f64> {
    (0..dims)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            f64::from((offset + sd * z) as f32)
        })
        .collect()
}

pub fn generate(spec: &MixtureSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let labeled_rows: Vec<Vec<f64>> = (0..spec.n_labeled)
        .map(|_| draw_row(&mut rng, spec.dims, 0.0, spec.iod_sd))
        .collect();
    let labeled_ids = (0..spec.n_labeled).map(|i| format!("l-{i:05}")).collect();

    let n_ood = spec.ood_count();
    let mut flags: Vec<bool> = (0..spec.n_unlabeled).map(|i| i < n_ood).collect();
    flags.shuffle(&mut rng);

    let mut unlabeled_rows = Vec::with_capacity(spec.n_unlabeled);
    let mut unlabeled_ids = Vec::with_capacity(spec.n_unlabeled);
    let mut truth = BTreeMap::new();
    for (i, &ood) in flags.iter().enumerate() {
        let row = if ood {
            draw_row(&mut rng, spec.dims, spec.separation, spec.ood_sd)
        } else {
            draw_row(&mut rng, spec.dims, 0.0, spec.iod_sd)
        };
        let id = format!("u-{i:05}");
        truth.insert(id.clone(), ood);
        unlabeled_ids.push(id);
        unlabeled_rows.push(row);
    }

    Ok(SyntheticData {
        labeled: FeatureMatrix::from_rows(labeled_ids, &labeled_rows)?,
        unlabeled: FeatureMatrix::from_rows(unlabeled_ids, &unlabeled_rows)?,
        truth: GroundTruth(truth),
    })
}

/// Discard-versus-OOD confusion summary. Ratios with a zero denominator are
/// `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterQuality {
    /// Fraction of true OOD samples that were discarded.
    pub ood_recall: Option<f64>,
    /// Fraction of discarded samples that are truly OOD.
    pub ood_precision: Option<f64>,
    /// Fraction of kept samples that are OOD.
    pub kept_contamination: Option<f64>,
    pub kept_count: usize,
    pub discarded_count: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub true_negatives: usize,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn evaluate(report: &FilterReport, truth: &GroundTruth) -> Result<FilterQuality> {
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for v in &report.verdicts {
        let ood = truth
            .is_ood(&v.id)
            .ok_or_else(|| Error::UnknownId(v.id.clone()))?;
        match (v.kept, ood) {
            (false, true) => tp += 1,
            (false, false) => fp += 1,
            (true, true) => fn_ += 1,
            (true, false) => tn += 1,
        }
    }
    Ok(FilterQuality {
        ood_recall: ratio(tp, tp + fn_),
        ood_precision: ratio(tp, tp + fp),
        kept_contamination: ratio(fn_, fn_ + tn),
        kept_count: fn_ + tn,
        discarded_count: tp + fp,
        true_positives: tp,
        false_positives: fp,
        false_negatives: fn_,
        true_negatives: tn,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gate::{Decision, DegenerateReason, GateMode, GateStats};
    use crate::pipeline::{FilterConfig, Verdict};
    use crate::threshold::{ThresholdDiagnostics, ThresholdMethod, ThresholdResult};

    #[test]
    fn twenty_percent_of_ninety() {
        let data = generate(&MixtureSpec::default()).unwrap();
        assert_eq!(data.truth.ood_count(), 18);
        assert_eq!(data.unlabeled.rows(), 90);
        assert_eq!(data.labeled.rows(), 200);
        assert_eq!(data.labeled.dims(), 16);
        // ids carry no hint of the flag
        assert!(data.unlabeled.ids().iter().all(|id| id.starts_with("u-")));
    }

    #[test]
    fn zero_contamination_is_all_iod() {
        let spec = MixtureSpec {
            contamination: 0.0,
            ..MixtureSpec::default()
        };
        let data = generate(&spec).unwrap();
        assert_eq!(data.truth.ood_count(), 0);
        assert_eq!(data.truth.0.len(), 90);
    }

    #[test]
    fn same_seed_same_data() {
        let spec = MixtureSpec {
            seed: 42,
            ..MixtureSpec::default()
        };
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let other = MixtureSpec { seed: 43, ..spec };
        assert_ne!(generate(&spec).unwrap().unlabeled, generate(&other).unwrap().unlabeled);
    }

    #[test]
    fn invalid_specs() {
        for spec in [
            MixtureSpec { contamination: 1.5, ..MixtureSpec::default() },
            MixtureSpec { contamination: -0.1, ..MixtureSpec::default() },
            MixtureSpec { n_unlabeled: 0, ..MixtureSpec::default() },
            MixtureSpec { dims: 0, ..MixtureSpec::default() },
            MixtureSpec { ood_sd: -1.0, ..MixtureSpec::default() },
        ] {
            assert!(generate(&spec).is_err(), "{spec:?}");
        }
    }

    fn report_from(verdicts: Vec<Verdict>) -> FilterReport {
        let kept = verdicts.iter().filter(|v| v.kept).count();
        FilterReport {
            threshold: ThresholdResult {
                tau: 0.0,
                method: ThresholdMethod::Otsu,
                diagnostics: ThresholdDiagnostics::Otsu {
                    between_class_variance: vec![],
                    split: 0,
                    bins: 1,
                },
            },
            gate: GateStats {
                cv_tot: None,
                cv_lt: None,
                cv_gt: None,
                alpha: 1.12,
                lhs: None,
                rhs: None,
                bimodal: false,
                degenerate: Some(DegenerateReason::EmptyUpper),
                lower_count: 0,
                upper_count: 0,
                mode: GateMode::AsWritten,
                decision: Decision::KeepAll,
            },
            discarded_count: verdicts.len() - kept,
            kept_count: kept,
            verdicts,
            parameters: FilterConfig::default().parameters(),
            applied_shrinkage: None,
        }
    }

    fn verdicts(truth: &GroundTruth, keep: impl Fn(bool) -> bool) -> Vec<Verdict> {
        truth
            .0
            .iter()
            .map(|(id, &ood)| Verdict {
                id: id.clone(),
                distance: 1.0,
                kept: keep(ood),
            })
            .collect()
    }

    #[test]
    fn perfect_filter() {
        let truth = generate(&MixtureSpec::default()).unwrap().truth;
        let q = evaluate(&report_from(verdicts(&truth, |ood| !ood)), &truth).unwrap();
        assert_eq!(q.ood_recall, Some(1.0));
        assert_eq!(q.ood_precision, Some(1.0));
        assert_eq!(q.kept_contamination, Some(0.0));
        assert_eq!(q.kept_count, 72);
    }

    #[test]
    fn keep_all_quality() {
        let truth = generate(&MixtureSpec::default()).unwrap().truth;
        let q = evaluate(&report_from(verdicts(&truth, |_| true)), &truth).unwrap();
        assert_eq!(q.ood_recall, Some(0.0));
        assert_eq!(q.ood_precision, None);
        assert_eq!(q.kept_contamination, Some(0.2));
        assert_eq!(
            q.true_positives + q.false_positives + q.false_negatives + q.true_negatives,
            90
        );
    }

    #[test]
    fn unknown_id_is_an_error() {
        let truth = GroundTruth(BTreeMap::from([("a".to_string(), false)]));
        let r = report_from(vec![Verdict {
            id: "b".into(),
            distance: 0.0,
            kept: true,
        }]);
        assert!(matches!(evaluate(&r, &truth), Err(Error::UnknownId(_))));
    }

    #[test]
    fn truth_json_round_trip() {
        let truth = generate(&MixtureSpec::default()).unwrap().truth;
        assert_eq!(GroundTruth::from_json(&truth.to_json()).unwrap(), truth);
    }
}
