//! Fixed embeddings and local models trained on top of them.
//!
//! Used to compare the jointly learned embedding against unsupervised ones:
//! first an embedding is computed (PCA here, or loaded from a file produced
//! by any other tool), then only the local models are optimised with the
//! embedding frozen.

use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rayon::prelude::*;

use crate::data::Dataset;
use crate::engine::{
    project_radius, softmax_weights, EmbeddingSource, FitDiagnostics, Hyperparameters, Problem,
    Solution,
};
use crate::error::{Error, Result};
use crate::lbfgs::{self, LbfgsStatus};
use crate::local_model::{fit_global_model_arrays, loss_and_slope};

/// Principal components from the eigendecomposition of the covariance matrix.
#[derive(Debug, Clone)]
pub struct Pca {
    pub mean: Array1<f64>,
    /// `m × d`, one unit-length component per column, sorted by variance.
    pub components: Array2<f64>,
    pub explained_variance: Array1<f64>,
    pub explained_variance_ratio: Array1<f64>,
}

impl Pca {
    pub fn fit(x: ArrayView2<f64>, dim: usize) -> Result<Self> {
        let (n, m) = x.dim();
        if dim == 0 || dim > m {
            return Err(Error::InvalidParameter(format!(
                "PCA dimension {dim} must be between 1 and the {m} features"
            )));
        }
        if n < 2 {
            return Err(Error::InvalidData("PCA needs at least 2 rows".into()));
        }
        let mean = x.mean_axis(Axis(0)).expect("non-empty");
        let centred = &x - &mean;
        let cov = centred.t().dot(&centred) / (n as f64 - 1.0);
        let eigen = SymmetricEigen::new(DMatrix::from_fn(m, m, |i, j| cov[[i, j]]));

        let mut order: Vec<usize> = (0..m).collect();
        // descending variance; index breaks ties for determinism
        order.sort_by(|&a, &b| {
            eigen.eigenvalues[b]
                .total_cmp(&eigen.eigenvalues[a])
                .then(a.cmp(&b))
        });
        let mut components = Array2::zeros((m, dim));
        for (c, &k) in order.iter().take(dim).enumerate() {
            let v = eigen.eigenvectors.column(k);
            // largest-magnitude loading positive
            let pivot = (0..m)
                .max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs()).then(b.cmp(&a)))
                .expect("m >= 1");
            let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
            for r in 0..m {
                components[[r, c]] = sign * v[r];
            }
        }
        let total: f64 = eigen.eigenvalues.iter().map(|v| v.max(0.0)).sum();
        let explained_variance: Array1<f64> = order
            .iter()
            .take(dim)
            .map(|&k| eigen.eigenvalues[k].max(0.0))
            .collect();
        let explained_variance_ratio = if total > 0.0 {
            &explained_variance / total
        } else {
            Array1::zeros(dim)
        };
        Ok(Self {
            mean,
            components,
            explained_variance,
            explained_variance_ratio,
        })
    }

    pub fn transform(&self, x: ArrayView2<f64>) -> Array2<f64> {
        (&x - &self.mean).dot(&self.components)
    }

    pub fn inverse_transform(&self, scores: ArrayView2<f64>) -> Array2<f64> {
        scores.dot(&self.components.t()) + &self.mean
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedEmbedding {
    pub z: Array2<f64>,
    pub source: EmbeddingSource,
    pub radius_normalised: bool,
}

impl FixedEmbedding {
    /// Rescale onto the embedding radius.
    pub fn rescaled(&self, radius: f64) -> Result<FixedEmbedding> {
        Ok(FixedEmbedding {
            z: project_radius(self.z.view(), radius)?,
            source: self.source.clone(),
            radius_normalised: true,
        })
    }
}

/// Top-`dim` principal component scores of the features.
pub fn pca_embed(data: &Dataset, dim: usize) -> Result<FixedEmbedding> {
    let pca = Pca::fit(data.x().view(), dim)?;
    Ok(FixedEmbedding {
        z: pca.transform(data.x().view()),
        source: EmbeddingSource::Pca,
        radius_normalised: false,
    })
}

/// Load a headerless `n × d` coordinate file aligned with the dataset rows,
/// rescaled onto `radius` when one is given.
pub fn load_external_embedding(
    path: impl AsRef<Path>,
    data: &Dataset,
    label: &str,
    radius: Option<f64>,
) -> Result<FixedEmbedding> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut values = Vec::new();
    let mut dim = None;
    let mut rows = 0;
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        if *dim.get_or_insert(record.len()) != record.len() {
            return Err(Error::InvalidData(format!(
                "`{}`: row {} has {} columns, expected {}",
                path.display(),
                r + 1,
                record.len(),
                dim.unwrap_or(0)
            )));
        }
        for (c, cell) in record.iter().enumerate() {
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => values.push(v),
                _ => {
                    return Err(Error::InvalidCell {
                        row: r + 1,
                        column: format!("{} of `{}`", c + 1, path.display()),
                        value: cell.to_string(),
                    })
                }
            }
        }
        rows += 1;
    }
    if rows != data.n() {
        return Err(Error::DimensionMismatch(format!(
            "`{}` has {rows} rows but the dataset has {}",
            path.display(),
            data.n()
        )));
    }
    let z = Array2::from_shape_vec((rows, dim.unwrap_or(0)), values)
        .map_err(|e| Error::InvalidData(e.to_string()))?;
    let fixed = FixedEmbedding {
        z,
        source: EmbeddingSource::External(label.to_string()),
        radius_normalised: false,
    };
    match radius {
        None => Ok(fixed),
        Some(r) => fixed.rescaled(r).map_err(|_| {
            Error::InvalidData(format!(
                "`{}` is all zeros and cannot be scaled to the radius",
                path.display()
            ))
        }),
    }
}

/// Minimise the objective over the local models only, with `fixed.z` frozen.
/// Rows are independent problems and are solved in parallel, starting from
/// the global model.
pub fn fit_local_models_on_fixed_embedding(
    data: &Dataset,
    fixed: &FixedEmbedding,
    hyper: &Hyperparameters,
) -> Result<Solution> {
    let global = fit_global_model_arrays(hyper.family, data.x().view(), data.y().view(), hyper.lambda_ridge)?;
    let b0 = Array2::from_shape_fn((data.n(), global.len()), |(_, j)| global[j]);
    fit_local_models_from(data, fixed, hyper, &b0)
}

/// As [`fit_local_models_on_fixed_embedding`], from a given starting `B`.
pub fn fit_local_models_from(
    data: &Dataset,
    fixed: &FixedEmbedding,
    hyper: &Hyperparameters,
    b0: &Array2<f64>,
) -> Result<Solution> {
    hyper.validate()?;
    let n = data.n();
    if fixed.z.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "embedding has {} rows but the dataset has {n}",
            fixed.z.nrows()
        )));
    }
    if fixed.z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("fixed embedding".into()));
    }
    let problem = Problem::from_dataset(data, hyper)?;
    let p = problem.p();
    if b0.dim() != (n, p) {
        return Err(Error::DimensionMismatch(format!(
            "initial coefficients have shape {:?}, expected ({n}, {p})",
            b0.dim()
        )));
    }
    let weights = softmax_weights(fixed.z.view(), hyper.distance);
    let x_aug = problem.x_aug();
    let y = problem.y();
    let family = hyper.family;
    let settings = hyper.optimiser.lbfgs();

    let rows: Vec<Result<lbfgs::LbfgsResult>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let w = weights.row(i);
            let f = |b: &[f64], g: &mut [f64]| -> f64 {
                let b = ndarray::ArrayView1::from(b);
                let s = x_aug.dot(&b);
                let mut coef = Array1::zeros(n);
                let mut loss = 0.0;
                for k in 0..n {
                    let (l, slope) = loss_and_slope(family, s[k], y[k]);
                    loss += w[k] * l;
                    coef[k] = w[k] * slope;
                }
                let mut grad = x_aug.t().dot(&coef);
                problem.add_penalty_gradient(b, grad.view_mut());
                g.copy_from_slice(grad.as_slice().expect("contiguous"));
                loss + problem.penalty(b)
            };
            lbfgs::minimise(b0.row(i).to_vec(), f, &settings)
        })
        .collect();

    let mut b = Array2::zeros((n, p));
    let mut diagnostics = FitDiagnostics::default();
    let mut worst = LbfgsStatus::Converged;
    for (i, row) in rows.into_iter().enumerate() {
        let row = row?;
        b.row_mut(i).assign(&Array1::from(row.x));
        diagnostics.iterations += row.iterations;
        diagnostics.evaluations += row.evaluations;
        diagnostics.gradient_norm = diagnostics.gradient_norm.max(row.gradient_norm);
        if row.status != LbfgsStatus::Converged {
            worst = row.status;
        }
    }
    diagnostics.status = Some(worst);
    let loss = problem.loss(fixed.z.view(), b.view())?;
    diagnostics.phase_losses = vec![loss];
    Ok(Solution {
        embedding: fixed.z.clone(),
        coefficients: b,
        loss,
        hyperparameters: *hyper,
        diagnostics,
        dataset_checksum: data.checksum(),
        coefficient_names: data.coefficient_names(),
        target_name: data.target_name().to_string(),
        row_ids: data.row_ids().to_vec(),
        source: fixed.source.clone(),
        run_config: None,
    })
}
