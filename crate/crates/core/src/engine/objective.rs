use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;

use super::{DistanceKind, Hyperparameters};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::local_model::{augment, loss_and_slope, loss_at, ModelFamily};

/// Distances from row `i` of a flat row-major `n × d` embedding to every row.
#[inline]
fn distance_row(zs: &[f64], d: usize, i: usize, distance: DistanceKind, out: &mut [f64]) {
    let zi = &zs[i * d..(i + 1) * d];
    for (o, zk) in out.iter_mut().zip(zs.chunks_exact(d)) {
        let sq: f64 = zi.iter().zip(zk).map(|(a, b)| (a - b) * (a - b)).sum();
        *o = match distance {
            DistanceKind::Euclidean => sq.sqrt(),
            DistanceKind::SquaredEuclidean => sq,
        };
    }
}

/// Row-stochastic kernel weights `W[i, j] ∝ exp(-D(z_i, z_j))`, self term included.
pub fn softmax_weights(z: ArrayView2<f64>, distance: DistanceKind) -> Array2<f64> {
    let mut w = pairwise_distances(z, distance);
    w.axis_iter_mut(Axis(0))
        .into_par_iter()
        .for_each(|mut row| softmax_in_place(row.as_slice_mut().expect("standard layout")));
    w
}

/// `exp(-d) / Σ exp(-d)` over a row of distances, shifted by the row minimum.
fn softmax_in_place(row: &mut [f64]) {
    let shift = row.iter().copied().fold(f64::INFINITY, f64::min);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (-(*v - shift)).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// Kernel distances between all pairs of embedding rows.
pub fn pairwise_distances(z: ArrayView2<f64>, distance: DistanceKind) -> Array2<f64> {
    let (n, dim) = z.dim();
    let z_std = z.as_standard_layout();
    let zs = z_std.as_slice().expect("standard layout");
    let mut d = Array2::zeros((n, n));
    d.as_slice_mut()
        .expect("fresh array")
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(i, row)| distance_row(zs, dim, i, distance, row));
    d
}

/// Rescale `z` so that the mean squared row norm equals `radius²`.
pub fn project_radius(z: ArrayView2<f64>, radius: f64) -> Result<Array2<f64>> {
    let n = z.nrows() as f64;
    let rms = (z.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
    if rms == 0.0 || !rms.is_finite() {
        return Err(Error::InvalidParameter(
            "cannot project an all-zero (or non-finite) embedding onto the radius".into(),
        ));
    }
    let scale = radius / rms;
    Ok(z.mapv(|v| v * scale))
}

/// `(1/n) Σ_i ‖z_i‖²`.
pub fn mean_squared_norm(z: ArrayView2<f64>) -> f64 {
    z.iter().map(|v| v * v).sum::<f64>() / z.nrows() as f64
}

#[derive(Debug, Clone)]
pub struct ObjectiveValue {
    pub loss: f64,
    pub grad_z: Array2<f64>,
    pub grad_b: Array2<f64>,
}

/// The weighted local-model loss for fixed data and hyperparameters.
#[derive(Debug, Clone)]
pub struct Problem {
    x_aug: Array2<f64>,
    y: Array1<f64>,
    family: ModelFamily,
    lambda_lasso: f64,
    lambda_ridge: f64,
    distance: DistanceKind,
    penalise_intercept: bool,
}

impl Problem {
    /// `x` without the intercept column; it is appended here.
    pub fn new(x: ArrayView2<f64>, y: ArrayView1<f64>, hyper: &Hyperparameters) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} feature rows but {} targets",
                x.nrows(),
                y.len()
            )));
        }
        if x.nrows() == 0 {
            return Err(Error::InvalidData("empty dataset".into()));
        }
        hyper.validate()?;
        Ok(Self {
            x_aug: augment(x),
            y: y.to_owned(),
            family: hyper.family,
            lambda_lasso: hyper.lambda_lasso,
            lambda_ridge: hyper.lambda_ridge,
            distance: hyper.distance,
            penalise_intercept: hyper.penalise_intercept,
        })
    }

    pub fn from_dataset(data: &Dataset, hyper: &Hyperparameters) -> Result<Self> {
        Self::new(data.x().view(), data.y().view(), hyper)
    }

    pub fn n(&self) -> usize {
        self.x_aug.nrows()
    }

    /// Coefficients per local model (features + intercept).
    pub fn p(&self) -> usize {
        self.x_aug.ncols()
    }

    pub fn family(&self) -> ModelFamily {
        self.family
    }

    pub fn distance(&self) -> DistanceKind {
        self.distance
    }

    pub(crate) fn x_aug(&self) -> ArrayView2<'_, f64> {
        self.x_aug.view()
    }

    pub(crate) fn y(&self) -> ArrayView1<'_, f64> {
        self.y.view()
    }

    fn penalised_columns(&self) -> usize {
        if self.penalise_intercept {
            self.p()
        } else {
            self.p() - 1
        }
    }

    /// Lasso plus ridge penalty of one coefficient row.
    pub fn penalty(&self, row: ArrayView1<f64>) -> f64 {
        row.iter()
            .take(self.penalised_columns())
            .map(|v| self.lambda_lasso * v.abs() + self.lambda_ridge * v * v)
            .sum()
    }

    pub(crate) fn add_penalty_gradient(&self, row: ArrayView1<f64>, mut grad: ndarray::ArrayViewMut1<f64>) {
        for j in 0..self.penalised_columns() {
            let v = row[j];
            let sign = if v > 0.0 {
                1.0
            } else if v < 0.0 {
                -1.0
            } else {
                0.0
            };
            grad[j] += self.lambda_lasso * sign + 2.0 * self.lambda_ridge * v;
        }
    }

    fn check_shapes(&self, z: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<()> {
        if z.nrows() != self.n() || b.nrows() != self.n() || b.ncols() != self.p() {
            return Err(Error::DimensionMismatch(format!(
                "expected Z with {} rows and B of shape {}×{}, got Z {:?} and B {:?}",
                self.n(),
                self.n(),
                self.p(),
                z.dim(),
                b.dim()
            )));
        }
        Ok(())
    }

    /// Loss value and exact gradients with respect to `Z` and `B`.
    pub fn objective(&self, z: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<ObjectiveValue> {
        self.check_shapes(z, b)?;
        let mut grad_z = Array2::zeros(z.raw_dim());
        let mut grad_b = Array2::zeros(b.raw_dim());
        let loss = self.evaluate(z, b, Some((&mut grad_z, &mut grad_b)));
        if !loss.is_finite() {
            return Err(self.locate_non_finite(z, b));
        }
        if let Some(((i, k), _)) = grad_z.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of Z at row {i}, column {k}")));
        }
        if let Some(((i, k), _)) = grad_b.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of B at row {i}, column {k}")));
        }
        Ok(ObjectiveValue {
            loss,
            grad_z,
            grad_b,
        })
    }

    pub fn loss(&self, z: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<f64> {
        self.check_shapes(z, b)?;
        let loss = self.evaluate(z, b, None);
        if loss.is_finite() {
            Ok(loss)
        } else {
            Err(self.locate_non_finite(z, b))
        }
    }

    fn locate_non_finite(&self, z: ArrayView2<f64>, b: ArrayView2<f64>) -> Error {
        if let Some(((i, k), _)) = z.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Error::NonFinite(format!("Z at row {i}, column {k}"));
        }
        if let Some(((i, k), _)) = b.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Error::NonFinite(format!("B at row {i}, column {k}"));
        }
        let pred = b.dot(&self.x_aug.t());
        if let Some(((i, j), _)) = pred.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Error::NonFinite(format!("prediction of local model {i} on item {j}"));
        }
        Error::NonFinite("objective".into())
    }

    /// Core evaluation. Rows are processed independently (possibly in
    /// parallel) and reduced in index order, so the result does not depend on
    /// the number of worker threads.
    pub(crate) fn evaluate(
        &self,
        z: ArrayView2<f64>,
        b: ArrayView2<f64>,
        grads: Option<(&mut Array2<f64>, &mut Array2<f64>)>,
    ) -> f64 {
        let n = self.n();
        let d = z.ncols();
        let family = self.family;
        let distance = self.distance;
        let y = self.y.as_slice().expect("owned target");
        let z_std = z.as_standard_layout();
        let zs = z_std.as_slice().expect("standard layout");
        let pred = b.dot(&self.x_aug.t());
        let ps = pred.as_slice().expect("fresh array");
        let mut row_loss = vec![0.0; n];

        let Some((grad_z, grad_b)) = grads else {
            row_loss.par_iter_mut().enumerate().for_each(|(i, out)| {
                let mut w = vec![0.0; n];
                distance_row(zs, d, i, distance, &mut w);
                softmax_in_place(&mut w);
                let pi = &ps[i * n..(i + 1) * n];
                *out = w
                    .iter()
                    .zip(pi)
                    .zip(y)
                    .map(|((w, &s), &t)| w * loss_at(family, s, t))
                    .sum();
            });
            return self.total(&row_loss, b);
        };

        // coef[i, k] = W_ik · ∂l_ik/∂s, dist_grad[i, k] = ∂L/∂D_ik
        let mut coef = vec![0.0; n * n];
        let mut dist = vec![0.0; n * n];
        let mut dist_grad = vec![0.0; n * n];
        coef.par_chunks_mut(n)
            .zip(dist.par_chunks_mut(n))
            .zip(dist_grad.par_chunks_mut(n))
            .zip(row_loss.par_iter_mut())
            .enumerate()
            .for_each(|(i, (((coef_i, dist_i), dg_i), out))| {
                distance_row(zs, d, i, distance, dist_i);
                dg_i.copy_from_slice(dist_i);
                softmax_in_place(dg_i);
                let pi = &ps[i * n..(i + 1) * n];
                let mut losses = vec![0.0; n];
                let mut total = 0.0;
                for k in 0..n {
                    let (l, slope) = loss_and_slope(family, pi[k], y[k]);
                    let w = dg_i[k];
                    total += w * l;
                    coef_i[k] = w * slope;
                    losses[k] = l;
                }
                for k in 0..n {
                    dg_i[k] = -dg_i[k] * (losses[k] - total);
                }
                *out = total;
            });

        let coef = ArrayView2::from_shape((n, n), &coef).expect("square");
        grad_b.assign(&coef.dot(&self.x_aug));
        for (row, g) in b.rows().into_iter().zip(grad_b.rows_mut()) {
            self.add_penalty_gradient(row, g);
        }

        let (dist, dist_grad) = (&dist, &dist_grad);
        let gz = grad_z.as_slice_mut().expect("standard layout");
        gz.par_chunks_mut(d).enumerate().for_each(|(i, gi)| {
            let zi = &zs[i * d..(i + 1) * d];
            for k in 0..n {
                if k == i {
                    continue;
                }
                let g = dist_grad[i * n + k] + dist_grad[k * n + i];
                let factor = match distance {
                    DistanceKind::Euclidean => {
                        let dik = dist[i * n + k];
                        if dik > 0.0 {
                            g / dik
                        } else {
                            continue;
                        }
                    }
                    DistanceKind::SquaredEuclidean => 2.0 * g,
                };
                let zk = &zs[k * d..(k + 1) * d];
                for c in 0..d {
                    gi[c] += factor * (zi[c] - zk[c]);
                }
            }
        });

        self.total(&row_loss, b)
    }

    fn total(&self, row_loss: &[f64], b: ArrayView2<f64>) -> f64 {
        let data_term: f64 = row_loss.iter().sum();
        let penalty: f64 = b.rows().into_iter().map(|r| self.penalty(r)).sum();
        data_term + penalty
    }

    /// `L[i, j]`: loss of local model `i` on item `j`.
    pub(crate) fn loss_matrix(&self, b: ArrayView2<f64>) -> Array2<f64> {
        let mut pred = b.dot(&self.x_aug.t());
        let family = self.family;
        let y = self.y.view();
        pred.axis_iter_mut(Axis(0)).for_each(|mut row| {
            for (v, &t) in row.iter_mut().zip(y) {
                *v = loss_at(family, *v, t);
            }
        });
        pred
    }
}

/// Objective value and gradients of `(Z, B)` on a dataset; shorthand for
/// [`Problem::objective`].
pub fn objective(
    z: ArrayView2<f64>,
    b: ArrayView2<f64>,
    data: &Dataset,
    hyper: &Hyperparameters,
) -> Result<ObjectiveValue> {
    Problem::from_dataset(data, hyper)?.objective(z, b)
}
