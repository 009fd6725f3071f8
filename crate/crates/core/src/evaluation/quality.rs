use ndarray::{Array1, ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::engine::Solution;
use crate::error::{Error, Result};
use crate::local_model::{augment, fit_global_model, losses_of_row, ModelFamily};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityOptions {
    /// `k = ⌊k_fraction · n⌋` nearest neighbours in the embedding.
    pub k_fraction: f64,
    /// Quantile of the global model's per-point losses used as coverage threshold.
    pub coverage_quantile: f64,
    /// Count item `i` among its own neighbours.
    pub include_self: bool,
    /// Fixed coverage threshold instead of the quantile.
    pub threshold: Option<f64>,
}

impl Default for QualityOptions {
    fn default() -> Self {
        Self {
            k_fraction: 0.1,
            coverage_quantile: 0.3,
            include_self: false,
            threshold: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExplanationQuality {
    /// Mean loss of each local model on its own item.
    pub local_loss: f64,
    /// Mean loss of each local model on its embedding neighbours.
    pub nn_local_loss: f64,
    /// Mean fraction of neighbours whose loss is below the threshold.
    pub nn_coverage: f64,
    pub k: usize,
    pub threshold: f64,
}

/// Linear-interpolation quantile (the `(n − 1)·q` rule).
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidData("quantile of an empty set".into()));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidParameter(format!("quantile {q} is outside [0, 1]")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Ok(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

/// Indices of the `k` nearest items to `i` by Euclidean distance, ties by
/// lowest index.
pub fn nearest_neighbours(z: ArrayView2<f64>, i: usize, k: usize, include_self: bool) -> Vec<usize> {
    let zi = z.row(i);
    let mut order: Vec<(f64, usize)> = z
        .rows()
        .into_iter()
        .enumerate()
        .filter(|&(j, _)| include_self || j != i)
        .map(|(j, zj)| {
            let d: f64 = zi.iter().zip(zj).map(|(a, b)| (a - b) * (a - b)).sum();
            (d, j)
        })
        .collect();
    let k = k.min(order.len());
    if k == 0 {
        return Vec::new();
    }
    order.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut nn: Vec<(f64, usize)> = order[..k].to_vec();
    nn.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    nn.into_iter().map(|(_, j)| j).collect()
}

/// Per-point losses of the global model fitted with the solution's ridge.
pub fn global_model_losses(data: &Dataset, lambda_ridge: f64) -> Result<Array1<f64>> {
    let b = fit_global_model(data.family(), data, lambda_ridge)?;
    let x_aug = augment(data.x().view());
    Ok(losses_of_row(data.family(), ArrayView1::from(&b), x_aug.view(), data.y().view()))
}

/// Fidelity, neighbourhood fidelity and neighbourhood coverage of `sol` on `data`.
pub fn explanation_quality(sol: &Solution, data: &Dataset, options: &QualityOptions) -> Result<ExplanationQuality> {
    let threshold = match options.threshold {
        Some(t) => t,
        None => {
            let losses = global_model_losses(data, sol.hyperparameters.lambda_ridge)?;
            quantile(losses.as_slice().expect("contiguous"), options.coverage_quantile)?
        }
    };
    quality_with_threshold(
        sol.embedding.view(),
        sol.coefficients.view(),
        data,
        sol.hyperparameters.family,
        threshold,
        options,
    )
}

pub fn quality_with_threshold(
    z: ArrayView2<f64>,
    b: ArrayView2<f64>,
    data: &Dataset,
    family: ModelFamily,
    threshold: f64,
    options: &QualityOptions,
) -> Result<ExplanationQuality> {
    let n = data.n();
    if z.nrows() != n || b.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "solution has {} rows but the dataset has {n}",
            z.nrows()
        )));
    }
    if b.ncols() != data.m() + 1 {
        return Err(Error::DimensionMismatch(format!(
            "solution has {} coefficients but the dataset needs {}",
            b.ncols(),
            data.m() + 1
        )));
    }
    if !(options.k_fraction > 0.0 && options.k_fraction <= 1.0) {
        return Err(Error::InvalidParameter(format!("k fraction {} is outside (0, 1]", options.k_fraction)));
    }
    let k = (options.k_fraction * n as f64).floor() as usize;
    if k == 0 {
        return Err(Error::InvalidParameter(format!(
            "k = ⌊{} · {n}⌋ is zero; need more items",
            options.k_fraction
        )));
    }
    let x_aug = augment(data.x().view());
    let y = data.y().view();
    let rows: Vec<(f64, f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let losses = losses_of_row(family, b.row(i), x_aug.view(), y);
            let nn = nearest_neighbours(z, i, k, options.include_self);
            let kk = nn.len() as f64;
            let nn_loss = nn.iter().map(|&j| losses[j]).sum::<f64>() / kk;
            let covered = nn.iter().filter(|&&j| losses[j] < threshold).count() as f64 / kk;
            (losses[i], nn_loss, covered)
        })
        .collect();
    let mean = |f: fn(&(f64, f64, f64)) -> f64| rows.iter().map(f).sum::<f64>() / n as f64;
    Ok(ExplanationQuality {
        local_loss: mean(|r| r.0),
        nn_local_loss: mean(|r| r.1),
        nn_coverage: mean(|r| r.2),
        k,
        threshold,
    })
}
