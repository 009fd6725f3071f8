use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{local_model_stability, neighbourhood_stability, ratio};
use crate::data::{permute_targets, resample, Dataset};
use crate::derive_seed;
use crate::engine::{fit, Hyperparameters};
use crate::error::{Error, Result};

pub const PERMUTATION_LOSS: &str = "permutation_loss";
pub const LOCAL_MODEL_STABILITY: &str = "local_model_stability";
pub const NEIGHBOURHOOD_STABILITY: &str = "neighbourhood_stability";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSettings {
    pub sizes: Vec<usize>,
    pub repetitions: usize,
    pub seed: u64,
    /// Fraction of items shared by the pair used for neighbourhood stability.
    pub shared_fraction: f64,
    pub neighbourhood_radius: f64,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        Self {
            sizes: vec![100, 200, 400],
            repetitions: 10,
            seed: 0,
            shared_fraction: 0.5,
            neighbourhood_radius: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StabilityRow {
    pub size: usize,
    pub repetition: usize,
    pub metric: String,
    pub value: f64,
    pub baseline_value: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilitySummary {
    pub size: usize,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub baseline_mean: f64,
    /// Repetitions in which the value is below its baseline.
    pub below_baseline: usize,
    pub repetitions: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StabilityTable {
    pub rows: Vec<StabilityRow>,
}

impl StabilityTable {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut writer = csv::Writer::from_path(path)?;
        for row in &self.rows {
            writer.serialize(row)?;
        }
        writer.flush().map_err(|e| Error::io(path, e))
    }

    /// Mean, sample std and baseline mean per (size, metric), in row order.
    pub fn summary(&self) -> Vec<StabilitySummary> {
        let mut keys: Vec<(usize, String)> = Vec::new();
        for row in &self.rows {
            let key = (row.size, row.metric.clone());
            if !keys.contains(&key) {
                keys.push(key);
            }
        }
        keys.into_iter()
            .map(|(size, metric)| {
                let rows: Vec<&StabilityRow> =
                    self.rows.iter().filter(|r| r.size == size && r.metric == metric).collect();
                let k = rows.len() as f64;
                let mean = rows.iter().map(|r| r.value).sum::<f64>() / k;
                let var = if rows.len() > 1 {
                    rows.iter().map(|r| (r.value - mean).powi(2)).sum::<f64>() / (k - 1.0)
                } else {
                    0.0
                };
                StabilitySummary {
                    size,
                    metric,
                    mean,
                    std: var.sqrt(),
                    baseline_mean: rows.iter().map(|r| r.baseline_value).sum::<f64>() / k,
                    below_baseline: rows.iter().filter(|r| r.value < r.baseline_value).count(),
                    repetitions: rows.len(),
                }
            })
            .collect()
    }
}

/// Rows needed so every size can draw its overlapping pair.
pub fn required_rows(size: usize, shared_fraction: f64) -> usize {
    2 * size - (shared_fraction * size as f64).floor() as usize
}

/// Metrics as a function of resampled dataset size.
///
/// Per size and repetition six fits are made: a sample `A`, an independent
/// sample `B`, and a sample `C` sharing `shared_fraction` of its items with
/// `A`, each also with permuted targets. Permutation loss compares `A` with
/// its permuted copy (baseline 1), local model stability compares `A` with
/// `B` (baseline: `A` with permuted `B`), neighbourhood stability compares
/// `A` with `C` on the shared items (baseline: `A` with permuted `C`).
pub fn stability_experiment(data: &Dataset, hyper: &Hyperparameters, settings: &ExperimentSettings) -> Result<StabilityTable> {
    if settings.repetitions == 0 || settings.sizes.is_empty() {
        return Err(Error::InvalidParameter("experiment needs sizes and at least one repetition".into()));
    }
    for &size in &settings.sizes {
        let needed = required_rows(size, settings.shared_fraction);
        if needed > data.n() {
            return Err(Error::InfeasibleResample(format!(
                "size {size} needs {needed} rows for the overlapping pair but the dataset has {}",
                data.n()
            )));
        }
    }
    let jobs: Vec<(usize, usize)> = settings
        .sizes
        .iter()
        .flat_map(|&s| (0..settings.repetitions).map(move |r| (s, r)))
        .collect();
    let results: Vec<Result<Vec<StabilityRow>>> = jobs
        .par_iter()
        .map(|&(size, rep)| repetition(data, hyper, settings, size, rep))
        .collect();
    let mut rows = Vec::new();
    for r in results {
        rows.extend(r?);
    }
    Ok(StabilityTable { rows })
}

fn repetition(
    data: &Dataset,
    hyper: &Hyperparameters,
    settings: &ExperimentSettings,
    size: usize,
    rep: usize,
) -> Result<Vec<StabilityRow>> {
    let seed = derive_seed(settings.seed, ((size as u64) << 20) | rep as u64);
    let stream = |k: u64| derive_seed(seed, k);
    let (a, _) = resample(data, size, None, 0.0, stream(1))?;
    let (b, _) = resample(data, size, None, 0.0, stream(2))?;
    let (c, shared) = resample(data, size, Some(&a), settings.shared_fraction, stream(3))?;
    let a_perm = permute_targets(&a, stream(4));
    let b_perm = permute_targets(&b, stream(5));
    let c_perm = permute_targets(&c, stream(6));

    let samples = [&a, &a_perm, &b, &b_perm, &c, &c_perm];
    let fits = samples
        .par_iter()
        .enumerate()
        .map(|(k, d)| fit(d, &hyper.with_seed(stream(10 + k as u64))))
        .collect::<Result<Vec<_>>>()?;
    let [fa, fa_perm, fb, fb_perm, fc, fc_perm] = <[_; 6]>::try_from(fits).expect("six fits");

    let row = |metric: &str, value: f64, baseline_value: f64| StabilityRow {
        size,
        repetition: rep,
        metric: metric.to_string(),
        value,
        baseline_value,
        seed,
    };
    let radius = settings.neighbourhood_radius;
    Ok(vec![
        row(PERMUTATION_LOSS, ratio(fa.loss, fa_perm.loss), 1.0),
        row(
            LOCAL_MODEL_STABILITY,
            local_model_stability(fa.coefficients.view(), fb.coefficients.view())?,
            local_model_stability(fa.coefficients.view(), fb_perm.coefficients.view())?,
        ),
        row(
            NEIGHBOURHOOD_STABILITY,
            neighbourhood_stability(&fa, &fc, &shared, radius)?,
            neighbourhood_stability(&fa, &fc_perm, &shared, radius)?,
        ),
    ])
}
