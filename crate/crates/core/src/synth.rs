//! Piecewise-linear synthetic data with known regimes.
//!
//! Each item belongs to one of `regimes` groups, and its target is produced
//! by that group's affine model plus Gaussian noise. By default the group is
//! drawn independently of the features, so the regimes are only visible
//! through the targets; `x_separation` shifts the feature means per group.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Normalisation};
use crate::error::{Error, Result};
use crate::local_model::{sigmoid, ModelFamily};
use crate::seeded_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n: usize,
    pub m: usize,
    pub regimes: usize,
    /// Standard deviation of the additive target noise (logit scale for classification).
    pub noise: f64,
    /// Distance between regime feature means; 0 keeps features identically distributed.
    pub x_separation: f64,
    /// Scale of the randomly drawn regime coefficients and intercepts.
    pub coefficient_scale: f64,
    pub family: ModelFamily,
    /// Replace the targets by iid Gaussian noise unrelated to the features.
    pub pure_noise: bool,
    /// Fixed regime coefficients (`regimes × (m + 1)`, intercept last) instead of random ones.
    pub coefficients: Option<Vec<Vec<f64>>>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n: 400,
            m: 5,
            regimes: 3,
            noise: 0.1,
            x_separation: 0.0,
            coefficient_scale: 1.0,
            family: ModelFamily::Regression,
            pure_noise: false,
            coefficients: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    /// Raw (unnormalised) dataset with features `x1..xm` and target `y`.
    pub dataset: Dataset,
    pub labels: Vec<usize>,
    /// Generating coefficients, `regimes × (m + 1)` in raw units, intercept last.
    pub coefficients: Array2<f64>,
}

impl SyntheticData {
    /// Generating coefficients expressed in the units of a normalised dataset.
    ///
    /// For regression both features and target are standardised; for
    /// classification only the features are.
    pub fn normalised_coefficients(&self, normalisation: &Normalisation) -> Array2<f64> {
        let m = self.coefficients.ncols() - 1;
        let mut out = Array2::zeros(self.coefficients.dim());
        let target = normalisation.target;
        for (r, row) in self.coefficients.rows().into_iter().enumerate() {
            let mut intercept = row[m];
            for j in 0..m {
                let f = normalisation.features[j];
                out[[r, j]] = row[j] * f.std / target.std;
                intercept += row[j] * f.mean;
            }
            out[[r, m]] = (intercept - target.mean) / target.std;
        }
        out
    }
}

fn gauss(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn generate(config: &SynthConfig) -> Result<SyntheticData> {
    let SynthConfig { n, m, regimes, noise, .. } = *config;
    if n < 2 || m < 1 || regimes < 1 {
        return Err(Error::InvalidParameter(format!(
            "synthetic data needs n >= 2, m >= 1 and regimes >= 1 (got n={n}, m={m}, regimes={regimes})"
        )));
    }
    if !(noise >= 0.0 && noise.is_finite()) || !config.x_separation.is_finite() {
        return Err(Error::InvalidParameter("noise and separation must be finite, noise >= 0".into()));
    }
    let mut rng = seeded_rng(config.seed);

    let coefficients = match &config.coefficients {
        Some(rows) => {
            if rows.len() != regimes || rows.iter().any(|r| r.len() != m + 1) {
                return Err(Error::DimensionMismatch(format!(
                    "fixed coefficients must be {regimes} rows of {} values",
                    m + 1
                )));
            }
            Array2::from_shape_fn((regimes, m + 1), |(r, j)| rows[r][j])
        }
        None => Array2::from_shape_simple_fn((regimes, m + 1), || config.coefficient_scale * gauss(&mut rng)),
    };
    let centres = Array2::from_shape_simple_fn((regimes, m), || config.x_separation * gauss(&mut rng));

    let mut labels: Vec<usize> = (0..n).map(|i| i % regimes).collect();
    let mut rng = seeded_rng(crate::derive_seed(config.seed, 1));
    labels.shuffle(&mut rng);

    let mut x = Array2::zeros((n, m));
    let mut y = Array1::zeros(n);
    for (i, &r) in labels.iter().enumerate() {
        for j in 0..m {
            x[[i, j]] = centres[[r, j]] + gauss(&mut rng);
        }
        let s: f64 = (0..m).map(|j| coefficients[[r, j]] * x[[i, j]]).sum::<f64>()
            + coefficients[[r, m]];
        let eps: f64 = noise * gauss(&mut rng);
        y[i] = if config.pure_noise {
            match config.family {
                ModelFamily::Regression => gauss(&mut rng),
                ModelFamily::Classification => rng.random::<f64>(),
            }
        } else {
            match config.family {
                ModelFamily::Regression => s + eps,
                ModelFamily::Classification => sigmoid(s + eps),
            }
        };
    }
    let names = (1..=m).map(|j| format!("x{j}")).collect();
    Ok(SyntheticData {
        dataset: Dataset::new(x, y, names, "y", config.family)?,
        labels,
        coefficients,
    })
}
