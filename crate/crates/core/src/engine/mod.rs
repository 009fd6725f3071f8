//! Joint optimisation of the embedding and the local models.
//!
//! The objective is `Σ_i Σ_j W_ij · l(f_i(x_j), y_j)` plus lasso and ridge
//! penalties on every coefficient, where `W` is the row-wise softmax of
//! negative embedding distances. The embedding is kept on the sphere
//! `(1/n) Σ_i ‖z_i‖² = r²`.
//!
//! During optimisation the loss is evaluated at the radius-projected
//! embedding, which makes it invariant to the scale of `Z`. Projecting an
//! iterate back onto the radius after each accepted step therefore never
//! changes its loss, and L-BFGS sees a smooth function.

mod escape;
mod objective;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use log::{debug, info};
use ndarray::{Array2, ArrayView1, ArrayView2};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use escape::{escape, EscapeOutcome};
pub use objective::{
    mean_squared_norm, objective, pairwise_distances, project_radius, softmax_weights,
    ObjectiveValue, Problem,
};

use crate::baseline;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::lbfgs::{self, LbfgsSettings, LbfgsStatus};
use crate::local_model::{fit_global_model_arrays, ModelFamily};
use crate::seeded_rng;

/// Distance used inside the softmax kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DistanceKind {
    #[default]
    Euclidean,
    SquaredEuclidean,
}

impl DistanceKind {
    #[inline]
    pub fn between(self, a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
        let sq: f64 = a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum();
        match self {
            DistanceKind::Euclidean => sq.sqrt(),
            DistanceKind::SquaredEuclidean => sq,
        }
    }
}

impl FromStr for DistanceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(DistanceKind::Euclidean),
            "squared" | "squared_euclidean" => Ok(DistanceKind::SquaredEuclidean),
            other => Err(Error::InvalidParameter(format!("unknown distance `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimiserSettings {
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub history: usize,
    /// Maximum escape-and-reoptimise rounds after the first L-BFGS phase.
    pub escape_rounds: usize,
}

impl Default for OptimiserSettings {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            gradient_tolerance: 1e-4,
            history: 10,
            escape_rounds: 2,
        }
    }
}

impl OptimiserSettings {
    pub fn lbfgs(&self) -> LbfgsSettings {
        LbfgsSettings {
            max_iterations: self.max_iterations,
            gradient_tolerance: self.gradient_tolerance,
            history: self.history,
            ..LbfgsSettings::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    /// Embedding dimension.
    pub dim: usize,
    pub radius: f64,
    pub lambda_lasso: f64,
    pub lambda_ridge: f64,
    pub family: ModelFamily,
    pub distance: DistanceKind,
    /// Whether the intercept is included in the lasso and ridge penalties.
    pub penalise_intercept: bool,
    pub optimiser: OptimiserSettings,
    pub seed: u64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            dim: 2,
            radius: 3.5,
            lambda_lasso: 1e-4,
            lambda_ridge: 1e-4,
            family: ModelFamily::Regression,
            distance: DistanceKind::Euclidean,
            penalise_intercept: true,
            optimiser: OptimiserSettings::default(),
            seed: 0,
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidParameter(msg.to_string()));
        if self.dim < 1 {
            return bad("embedding dimension must be >= 1");
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return bad("radius must be a positive finite number");
        }
        if !(self.lambda_lasso >= 0.0 && self.lambda_lasso.is_finite()) {
            return bad("lambda_lasso must be >= 0");
        }
        if !(self.lambda_ridge >= 0.0 && self.lambda_ridge.is_finite()) {
            return bad("lambda_ridge must be >= 0");
        }
        if self.optimiser.history == 0 {
            return bad("optimiser history must be >= 1");
        }
        if !(self.optimiser.gradient_tolerance > 0.0) {
            return bad("gradient tolerance must be > 0");
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Where the embedding of a [`Solution`] came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingSource {
    /// Learned jointly with the local models.
    #[default]
    Slisemap,
    Pca,
    /// Coordinates ingested from a file, with a user label.
    External(String),
}

impl fmt::Display for EmbeddingSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EmbeddingSource::Slisemap => f.write_str("slisemap"),
            EmbeddingSource::Pca => f.write_str("pca"),
            EmbeddingSource::External(label) => write!(f, "external:{label}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct FitDiagnostics {
    /// L-BFGS iterations summed over all phases.
    pub iterations: usize,
    pub evaluations: usize,
    /// Escape rounds that improved the loss.
    pub escape_rounds: usize,
    /// Items relocated by accepted escape rounds.
    pub relocations: usize,
    /// Infinity norm of the gradient at the end of the last L-BFGS phase.
    pub gradient_norm: f64,
    pub status: Option<LbfgsStatus>,
    /// Loss at the start, and after each optimisation phase.
    pub phase_losses: Vec<f64>,
}

/// A fitted embedding with one local model per item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    #[serde(with = "rows")]
    pub embedding: Array2<f64>,
    #[serde(with = "rows")]
    pub coefficients: Array2<f64>,
    pub loss: f64,
    pub hyperparameters: Hyperparameters,
    pub diagnostics: FitDiagnostics,
    pub dataset_checksum: String,
    /// Coefficient column names: features, then `intercept`.
    pub coefficient_names: Vec<String>,
    pub target_name: String,
    /// Original row ids of the dataset the solution was fitted on.
    pub row_ids: Vec<usize>,
    #[serde(default)]
    pub source: EmbeddingSource,
    /// Provenance attached by callers (e.g. the CLI run configuration).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_config: Option<serde_json::Value>,
}

impl Solution {
    pub fn n(&self) -> usize {
        self.embedding.nrows()
    }

    /// Recompute the objective for this solution on `data`.
    pub fn recompute_loss(&self, data: &Dataset) -> Result<f64> {
        Problem::from_dataset(data, &self.hyperparameters)?
            .loss(self.embedding.view(), self.coefficients.view())
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_string()?).map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let solution: Solution = serde_json::from_str(&text)?;
        solution.check()?;
        Ok(solution)
    }

    fn check(&self) -> Result<()> {
        let n = self.embedding.nrows();
        if self.coefficients.nrows() != n || self.row_ids.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "solution has {n} embedding rows, {} coefficient rows and {} row ids",
                self.coefficients.nrows(),
                self.row_ids.len()
            )));
        }
        if self.coefficients.ncols() != self.coefficient_names.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} coefficient columns but {} names",
                self.coefficients.ncols(),
                self.coefficient_names.len()
            )));
        }
        if !self.loss.is_finite()
            || self.embedding.iter().chain(&self.coefficients).any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite("solution file".into()));
        }
        Ok(())
    }

    /// Embedding as headerless CSV (`n` rows, `d` columns).
    pub fn write_embedding_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_matrix_csv(path.as_ref(), None, self.embedding.view())
    }

    /// Coefficients as CSV with the coefficient names as header.
    pub fn write_coefficients_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_matrix_csv(
            path.as_ref(),
            Some(&self.coefficient_names),
            self.coefficients.view(),
        )
    }
}

pub(crate) fn write_matrix_csv(
    path: &Path,
    header: Option<&[String]>,
    matrix: ArrayView2<f64>,
) -> Result<()> {
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    if let Some(header) = header {
        writer.write_record(header)?;
    }
    for row in matrix.rows() {
        writer.write_record(row.iter().map(|v| v.to_string()))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

/// Row-major nested-array serialisation for matrices.
pub(crate) mod rows {
    use ndarray::Array2;
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Array2<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.rows().into_iter().map(|r| r.to_vec()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Array2<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err(D::Error::custom("ragged matrix rows"));
        }
        Array2::from_shape_vec((n, m), rows.into_iter().flatten().collect())
            .map_err(D::Error::custom)
    }
}

/// Initial embedding: PCA scores of `x` scaled to the radius, or a seeded
/// Gaussian when PCA cannot provide `dim` non-degenerate coordinates.
pub fn initial_embedding(x: ArrayView2<f64>, dim: usize, radius: f64, seed: u64) -> Result<Array2<f64>> {
    if dim <= x.ncols() {
        if let Ok(pca) = baseline::Pca::fit(x, dim) {
            let scores = pca.transform(x);
            if let Ok(z) = project_radius(scores.view(), radius) {
                return Ok(z);
            }
        }
    }
    debug!("falling back to a random initial embedding");
    let mut rng = seeded_rng(seed);
    let z = Array2::from_shape_simple_fn((x.nrows(), dim), || StandardNormal.sample(&mut rng));
    project_radius(z.view(), radius)
}

pub(crate) struct PhaseResult {
    pub z: Array2<f64>,
    pub b: Array2<f64>,
    pub loss: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub gradient_norm: f64,
    pub status: LbfgsStatus,
}

/// One L-BFGS run over `(Z, B)` jointly. `z0` should already be on the radius.
pub(crate) fn optimise_joint(
    problem: &Problem,
    z0: &Array2<f64>,
    b0: &Array2<f64>,
    hyper: &Hyperparameters,
) -> Result<PhaseResult> {
    let (n, d) = z0.dim();
    let p = b0.ncols();
    let nz = n * d;
    let target_norm = hyper.radius * (n as f64).sqrt();
    let mut x0 = Vec::with_capacity(nz + n * p);
    x0.extend(z0.iter());
    x0.extend(b0.iter());

    let mut grad_z = Array2::zeros((n, d));
    let mut grad_b = Array2::zeros((n, p));
    let f = |x: &[f64], g: &mut [f64]| -> f64 {
        let z_raw = ArrayView2::from_shape((n, d), &x[..nz]).expect("shape");
        let b = ArrayView2::from_shape((n, p), &x[nz..]).expect("shape");
        let norm = z_raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return f64::NAN;
        }
        let scale = target_norm / norm;
        let z = z_raw.mapv(|v| v * scale);
        grad_z.fill(0.0);
        grad_b.fill(0.0);
        let loss = problem.evaluate(z.view(), b, Some((&mut grad_z, &mut grad_b)));
        // chain rule through the radius projection
        let radial: f64 = grad_z.iter().zip(z.iter()).map(|(g, v)| g * v).sum::<f64>()
            / (target_norm * target_norm);
        for ((out, &gv), &zv) in g[..nz].iter_mut().zip(grad_z.iter()).zip(z.iter()) {
            *out = scale * (gv - radial * zv);
        }
        g[nz..].copy_from_slice(grad_b.as_slice().expect("standard layout"));
        loss
    };
    let project = |x: &mut [f64], _loss: &mut f64, g: &mut [f64]| {
        let norm = x[..nz].iter().map(|v| v * v).sum::<f64>().sqrt();
        let scale = target_norm / norm;
        x[..nz].iter_mut().for_each(|v| *v *= scale);
        g[..nz].iter_mut().for_each(|v| *v /= scale);
    };
    let result = lbfgs::minimise_projected(x0, f, &hyper.optimiser.lbfgs(), project)?;

    let z = Array2::from_shape_vec((n, d), result.x[..nz].to_vec()).expect("shape");
    // exact re-projection so the constraint holds to rounding
    let z = project_radius(z.view(), hyper.radius)?;
    let b = Array2::from_shape_vec((n, p), result.x[nz..].to_vec()).expect("shape");
    let loss = problem.loss(z.view(), b.view())?;
    Ok(PhaseResult {
        z,
        b,
        loss,
        iterations: result.iterations,
        evaluations: result.evaluations,
        gradient_norm: result.gradient_norm,
        status: result.status,
    })
}

/// Fit an embedding and local models to a (normalised) dataset.
pub fn fit(data: &Dataset, hyper: &Hyperparameters) -> Result<Solution> {
    hyper.validate()?;
    if data.family() != hyper.family {
        return Err(Error::InvalidParameter(format!(
            "dataset is prepared for {} but the hyperparameters ask for {}",
            data.family(),
            hyper.family
        )));
    }
    let problem = Problem::from_dataset(data, hyper)?;
    let n = data.n();
    let z0 = initial_embedding(data.x().view(), hyper.dim, hyper.radius, hyper.seed)?;
    let global = fit_global_model_arrays(hyper.family, data.x().view(), data.y().view(), hyper.lambda_ridge)?;
    let b0 = Array2::from_shape_fn((n, global.len()), |(_, j)| global[j]);

    let mut diagnostics = FitDiagnostics {
        phase_losses: vec![problem.loss(z0.view(), b0.view())?],
        ..Default::default()
    };
    let phase = optimise_joint(&problem, &z0, &b0, hyper)?;
    diagnostics.iterations += phase.iterations;
    diagnostics.evaluations += phase.evaluations;
    diagnostics.gradient_norm = phase.gradient_norm;
    diagnostics.status = Some(phase.status);
    diagnostics.phase_losses.push(phase.loss);
    let (mut z, mut b, mut loss) = (phase.z, phase.b, phase.loss);

    for round in 0..hyper.optimiser.escape_rounds {
        let outcome = escape(&problem, &z, &b, hyper, derive_round_seed(hyper.seed, round))?;
        if !outcome.improved {
            debug!("escape round {round}: no improvement");
            break;
        }
        debug!(
            "escape round {round}: {} relocations, loss {loss:.6} -> {:.6}",
            outcome.relocations, outcome.loss
        );
        diagnostics.escape_rounds += 1;
        diagnostics.relocations += outcome.relocations;
        diagnostics.iterations += outcome.iterations;
        diagnostics.evaluations += outcome.evaluations;
        diagnostics.gradient_norm = outcome.gradient_norm;
        diagnostics.status = outcome.status;
        diagnostics.phase_losses.push(outcome.loss);
        z = outcome.z;
        b = outcome.b;
        loss = outcome.loss;
    }

    if !loss.is_finite() {
        return Err(Error::Optimisation {
            message: "non-finite final loss".into(),
            iterations: diagnostics.iterations,
            gradient_norm: diagnostics.gradient_norm,
        });
    }
    info!(
        "fit n={n}: loss {:.6} -> {loss:.6} in {} iterations ({} escape rounds)",
        diagnostics.phase_losses[0], diagnostics.iterations, diagnostics.escape_rounds
    );
    Ok(Solution {
        embedding: z,
        coefficients: b,
        loss,
        hyperparameters: *hyper,
        diagnostics,
        dataset_checksum: data.checksum(),
        coefficient_names: data.coefficient_names(),
        target_name: data.target_name().to_string(),
        row_ids: data.row_ids().to_vec(),
        source: EmbeddingSource::Slisemap,
        run_config: None,
    })
}

fn derive_round_seed(seed: u64, round: usize) -> u64 {
    crate::derive_seed(seed, 0xE5C0 + round as u64)
}
