//! Local white-box model families.
//!
//! A coefficient row `b` has `m + 1` entries: one weight per feature followed
//! by the intercept. Regression rows predict `b · [x; 1]` and are scored with
//! squared error. Classification rows predict `sigmoid(b · [x; 1])` as the
//! class-1 probability and are scored with the Hellinger loss
//! `½[(√p̂ − √p)² + (√(1−p̂) − √(1−p))²]`, which lies in `[0, 1]`.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::lbfgs::{self, LbfgsSettings, LbfgsStatus};

/// Predicted probabilities are clamped to `[PROBABILITY_EPS, 1 - PROBABILITY_EPS]`
/// inside the optimised losses.
pub const PROBABILITY_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ModelFamily {
    /// Linear regression scored with squared error.
    #[default]
    Regression,
    /// Logistic regression scored with the Hellinger loss.
    Classification,
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelFamily::Regression => f.write_str("regression"),
            ModelFamily::Classification => f.write_str("classification"),
        }
    }
}

impl FromStr for ModelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "regression" => Ok(ModelFamily::Regression),
            "classification" => Ok(ModelFamily::Classification),
            other => Err(Error::InvalidParameter(format!(
                "unknown model family `{other}` (expected regression or classification)"
            ))),
        }
    }
}

fn check_dims(b: &[f64], x: &[f64]) -> Result<()> {
    if b.len() != x.len() + 1 {
        return Err(Error::DimensionMismatch(format!(
            "coefficient row has {} entries but {} features need {}",
            b.len(),
            x.len(),
            x.len() + 1
        )));
    }
    Ok(())
}

/// `b · [x; 1]`, assuming the dimensions already match.
#[inline]
pub(crate) fn linear_response(b: &[f64], x: &[f64]) -> f64 {
    let m = x.len();
    b[..m].iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b[m]
}

#[inline]
pub(crate) fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

pub fn predict(family: ModelFamily, b: &[f64], x: &[f64]) -> Result<f64> {
    check_dims(b, x)?;
    let s = linear_response(b, x);
    Ok(match family {
        ModelFamily::Regression => s,
        ModelFamily::Classification => sigmoid(s),
    })
}

#[inline]
fn hellinger(p_hat: f64, p: f64) -> f64 {
    let a = p_hat.sqrt() - p.sqrt();
    let c = (1.0 - p_hat).sqrt() - (1.0 - p).sqrt();
    0.5 * (a * a + c * c)
}

pub fn point_loss(family: ModelFamily, prediction: f64, target: f64) -> Result<f64> {
    match family {
        ModelFamily::Regression => {
            let r = prediction - target;
            Ok(r * r)
        }
        ModelFamily::Classification => {
            for p in [prediction, target] {
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::ProbabilityOutOfRange(p));
                }
            }
            Ok(hellinger(prediction, target))
        }
    }
}

/// Loss and its derivative with respect to the linear response `s = b · [x; 1]`.
///
/// This is the form the optimisers use: classification probabilities are
/// clamped, and the derivative is zero where the clamp is active.
#[inline]
pub(crate) fn loss_and_slope(family: ModelFamily, s: f64, target: f64) -> (f64, f64) {
    match family {
        ModelFamily::Regression => {
            let r = s - target;
            (r * r, 2.0 * r)
        }
        ModelFamily::Classification => {
            let raw = sigmoid(s);
            let p_hat = raw.clamp(PROBABILITY_EPS, 1.0 - PROBABILITY_EPS);
            let loss = hellinger(p_hat, target);
            if p_hat != raw {
                return (loss, 0.0);
            }
            // d/ds of the Hellinger loss through the sigmoid
            let q_hat = 1.0 - p_hat;
            let slope =
                0.5 * (p_hat * ((1.0 - target) * q_hat).sqrt() - q_hat * (target * p_hat).sqrt());
            (loss, slope)
        }
    }
}

#[inline]
pub(crate) fn loss_at(family: ModelFamily, s: f64, target: f64) -> f64 {
    match family {
        ModelFamily::Regression => {
            let r = s - target;
            r * r
        }
        ModelFamily::Classification => hellinger(
            sigmoid(s).clamp(PROBABILITY_EPS, 1.0 - PROBABILITY_EPS),
            target,
        ),
    }
}

/// Gradient of the point loss with respect to the coefficient row `b`.
pub fn point_loss_gradient(
    family: ModelFamily,
    b: &[f64],
    x: &[f64],
    target: f64,
) -> Result<Vec<f64>> {
    check_dims(b, x)?;
    let (_, slope) = loss_and_slope(family, linear_response(b, x), target);
    let mut grad: Vec<f64> = x.iter().map(|v| slope * v).collect();
    grad.push(slope);
    Ok(grad)
}

/// Append the constant-1 intercept column.
pub fn augment(x: ArrayView2<f64>) -> Array2<f64> {
    let (n, m) = x.dim();
    let mut out = Array2::ones((n, m + 1));
    out.slice_mut(ndarray::s![.., ..m]).assign(&x);
    out
}

/// Per-item losses of a single coefficient row over all items.
pub fn losses_of_row(
    family: ModelFamily,
    b: ArrayView1<f64>,
    x_aug: ArrayView2<f64>,
    y: ArrayView1<f64>,
) -> Array1<f64> {
    let s = x_aug.dot(&b);
    s.iter()
        .zip(y)
        .map(|(&s, &t)| loss_at(family, s, t))
        .collect()
}

/// Single coefficient row minimising the mean point loss plus
/// `lambda_ridge · ‖b‖²` over the whole dataset.
pub fn fit_global_model(family: ModelFamily, data: &Dataset, lambda_ridge: f64) -> Result<Vec<f64>> {
    fit_global_model_arrays(family, data.x().view(), data.y().view(), lambda_ridge)
}

pub(crate) fn fit_global_model_arrays(
    family: ModelFamily,
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    lambda_ridge: f64,
) -> Result<Vec<f64>> {
    if lambda_ridge < 0.0 {
        return Err(Error::InvalidParameter("lambda_ridge must be >= 0".into()));
    }
    let x_aug = augment(x);
    let n = x_aug.nrows() as f64;
    let p = x_aug.ncols();
    let objective = |b: &[f64], grad: &mut [f64]| -> f64 {
        let b = ArrayView1::from(b);
        let s = x_aug.dot(&b);
        let mut slopes = Array1::zeros(s.len());
        let mut loss = 0.0;
        for (k, (&s, &t)) in s.iter().zip(y).enumerate() {
            let (l, d) = loss_and_slope(family, s, t);
            loss += l;
            slopes[k] = d / n;
        }
        let g = x_aug.t().dot(&slopes);
        for j in 0..p {
            grad[j] = g[j] + 2.0 * lambda_ridge * b[j];
        }
        loss / n + lambda_ridge * b.dot(&b)
    };
    let settings = LbfgsSettings {
        max_iterations: 2000,
        gradient_tolerance: 1e-10,
        ..LbfgsSettings::default()
    };
    let result = lbfgs::minimise(vec![0.0; p], objective, &settings)?;
    // Line-search stalls at machine precision are fine; real failures are not.
    if result.status != LbfgsStatus::Converged && result.gradient_norm > 1e-5 {
        return Err(Error::Optimisation {
            message: format!("global model did not converge ({:?})", result.status),
            iterations: result.iterations,
            gradient_norm: result.gradient_norm,
        });
    }
    Ok(result.x)
}

/// Mean column of a coefficient matrix; convenience for summaries.
pub fn mean_row(b: ArrayView2<f64>) -> Array1<f64> {
    b.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(b.ncols()))
}
