//! Quality measures for fitted solutions and the resampling experiment.
//!
//! * permutation loss: loss on true targets over loss on shuffled targets;
//! * local model stability: Hungarian matching between coefficient sets;
//! * neighbourhood stability: Jaccard overlap of radius-1 neighbourhoods;
//! * explanation quality: fidelity and coverage of local models on neighbours.

mod experiment;
mod hungarian;
mod quality;
mod stability;

use serde::{Deserialize, Serialize};

pub use experiment::{
    required_rows, stability_experiment, ExperimentSettings, StabilityRow, StabilitySummary, StabilityTable,
    LOCAL_MODEL_STABILITY, NEIGHBOURHOOD_STABILITY, PERMUTATION_LOSS,
};
pub use hungarian::hungarian;
pub use quality::{
    explanation_quality, global_model_losses, nearest_neighbours, quality_with_threshold, quantile,
    ExplanationQuality, QualityOptions,
};
pub use stability::{local_model_stability, neighbourhood_stability, neighbourhood_stability_arrays};

use crate::data::{permute_targets, Dataset};
use crate::engine::{fit, Hyperparameters};
use crate::error::{Error, Result};
use crate::derive_seed;

/// Ratio of fitted losses on true and permuted targets for one seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PermutationRun {
    pub seed: u64,
    pub loss: f64,
    pub permuted_loss: f64,
    pub ratio: f64,
}

/// Fit on `data` and on a freshly permuted copy for every seed.
pub fn permutation_runs(data: &Dataset, hyper: &Hyperparameters, seeds: &[u64]) -> Result<Vec<PermutationRun>> {
    if seeds.is_empty() {
        return Err(Error::InvalidParameter("permutation loss needs at least one seed".into()));
    }
    seeds
        .iter()
        .map(|&seed| {
            let loss = fit(data, &hyper.with_seed(seed))?.loss;
            let permuted = permute_targets(data, derive_seed(seed, 0x9E12));
            let permuted_loss = fit(&permuted, &hyper.with_seed(seed))?.loss;
            Ok(PermutationRun {
                seed,
                loss,
                permuted_loss,
                ratio: ratio(loss, permuted_loss),
            })
        })
        .collect()
}

/// Mean of `loss / permuted loss` over seeds.
pub fn permutation_loss(data: &Dataset, hyper: &Hyperparameters, seeds: &[u64]) -> Result<f64> {
    let runs = permutation_runs(data, hyper, seeds)?;
    Ok(runs.iter().map(|r| r.ratio).sum::<f64>() / runs.len() as f64)
}

pub(crate) fn ratio(loss: f64, permuted: f64) -> f64 {
    if permuted == 0.0 {
        if loss == 0.0 { 1.0 } else { f64::INFINITY }
    } else {
        loss / permuted
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportContext {
    pub n: usize,
    pub seeds: Vec<u64>,
    pub k: Option<usize>,
    pub threshold: Option<f64>,
}

/// Metrics computed for one solution; metrics not requested are `null`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MetricReport {
    pub permutation_loss: Option<f64>,
    pub local_model_stability: Option<f64>,
    pub neighbourhood_stability: Option<f64>,
    pub local_loss: Option<f64>,
    pub nn_local_loss: Option<f64>,
    pub nn_coverage: Option<f64>,
    pub context: ReportContext,
}

impl MetricReport {
    pub fn with_quality(mut self, q: &ExplanationQuality) -> Self {
        self.local_loss = Some(q.local_loss);
        self.nn_local_loss = Some(q.nn_local_loss);
        self.nn_coverage = Some(q.nn_coverage);
        self.context.k = Some(q.k);
        self.context.threshold = Some(q.threshold);
        self
    }

    /// Every present value finite, coverage within `[0, 1]`.
    pub fn validate(&self) -> Result<()> {
        let values = [
            self.permutation_loss,
            self.local_model_stability,
            self.neighbourhood_stability,
            self.local_loss,
            self.nn_local_loss,
            self.nn_coverage,
        ];
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("metric report".into()));
        }
        if self.nn_coverage.is_some_and(|c| !(0.0..=1.0).contains(&c)) {
            return Err(Error::InvalidData("coverage outside [0, 1]".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn absent_metrics_serialise_as_null() {
        let report = MetricReport { local_loss: Some(0.5), ..Default::default() };
        let json = serde_json::to_value(&report).unwrap();
        assert!(json["permutationLoss"].is_null());
        assert_eq!(json["localLoss"], 0.5);
        report.validate().unwrap();
    }

    #[test]
    fn ratio_edge_cases() {
        assert_eq!(ratio(0.0, 0.0), 1.0);
        assert_eq!(ratio(1.0, 2.0), 0.5);
    }
}
