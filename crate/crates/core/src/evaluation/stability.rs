use std::collections::HashMap;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

use super::hungarian;
use crate::engine::Solution;
use crate::error::{Error, Result};

/// Minimum matching distance between two sets of coefficient rows,
/// normalised by the mean pairwise distance `Σ_ij ‖a_i − b_j‖ / n`.
///
/// Zero when the sets agree up to a row permutation, and 0 as well when
/// every pairwise distance is zero.
pub fn local_model_stability(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(format!(
            "coefficient sets have shapes {:?} and {:?}",
            a.dim(),
            b.dim()
        )));
    }
    let n = a.nrows();
    if n == 0 {
        return Err(Error::InvalidData("empty coefficient sets".into()));
    }
    let mut cost = Array2::zeros((n, n));
    cost.axis_iter_mut(ndarray::Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(i, mut row)| {
            for j in 0..n {
                row[j] = a
                    .row(i)
                    .iter()
                    .zip(b.row(j))
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt();
            }
        });
    let normaliser = cost.sum() / n as f64;
    if normaliser == 0.0 {
        return Ok(0.0);
    }
    let (_, total) = hungarian(cost.view())?;
    Ok(total / normaliser)
}

/// One minus the mean Jaccard similarity of the radius neighbourhoods of
/// shared items in two embeddings. `shared` holds original row ids, and both
/// solutions must contain all of them.
pub fn neighbourhood_stability(a: &Solution, b: &Solution, shared: &[usize], radius: f64) -> Result<f64> {
    let za = positions_of(a, shared)?;
    let zb = positions_of(b, shared)?;
    neighbourhood_stability_arrays(za.view(), zb.view(), radius)
}

fn positions_of(sol: &Solution, ids: &[usize]) -> Result<Array2<f64>> {
    let index: HashMap<usize, usize> = sol.row_ids.iter().enumerate().map(|(p, &id)| (id, p)).collect();
    let mut z = Array2::zeros((ids.len(), sol.embedding.ncols()));
    for (k, id) in ids.iter().enumerate() {
        let p = *index
            .get(id)
            .ok_or_else(|| Error::InvalidData(format!("shared row id {id} is missing from a solution")))?;
        z.row_mut(k).assign(&sol.embedding.row(p));
    }
    Ok(z)
}

/// As [`neighbourhood_stability`], with row `k` of both arrays being the same item.
pub fn neighbourhood_stability_arrays(za: ArrayView2<f64>, zb: ArrayView2<f64>, radius: f64) -> Result<f64> {
    let s = za.nrows();
    if s == 0 {
        return Err(Error::InvalidData("no shared items for neighbourhood stability".into()));
    }
    if zb.nrows() != s {
        return Err(Error::DimensionMismatch(format!(
            "{s} and {} shared items",
            zb.nrows()
        )));
    }
    let within = |z: ArrayView2<f64>, i: usize, j: usize| -> bool {
        z.row(i).iter().zip(z.row(j)).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt() <= radius
    };
    let similarities: Vec<f64> = (0..s)
        .into_par_iter()
        .map(|i| {
            let mut inter = 0usize;
            let mut union = 0usize;
            for j in 0..s {
                let in_a = within(za, i, j);
                let in_b = within(zb, i, j);
                inter += (in_a && in_b) as usize;
                union += (in_a || in_b) as usize;
            }
            inter as f64 / union as f64
        })
        .collect();
    Ok(1.0 - similarities.iter().sum::<f64>() / s as f64)
}
