//! Greedy relocation pass for leaving local optima.
//!
//! Each item in turn considers jumping onto the position of another item and
//! adopting that item's local model. The change of the full objective caused
//! by such a jump only needs `O(n)` work given cached per-row softmax sums, so
//! every candidate is scored exactly. The best strictly improving jump is
//! applied immediately (lowest index wins ties), then the next item is
//! considered. After the pass the state is re-optimised with L-BFGS, and the
//! round is discarded unless the final loss is strictly lower.

use ndarray::{Array1, Array2, Axis};
use rand::seq::index;
use rayon::prelude::*;

use super::{optimise_joint, project_radius, Hyperparameters, Problem};
use crate::error::Result;
use crate::lbfgs::LbfgsStatus;
use crate::seeded_rng;

/// Candidate positions are capped at this many (seeded sample) for large `n`.
pub const MAX_CANDIDATES: usize = 2000;

#[derive(Debug, Clone)]
pub struct EscapeOutcome {
    pub z: Array2<f64>,
    pub b: Array2<f64>,
    pub loss: f64,
    /// Whether relocations were accepted and lowered the loss after re-optimisation.
    pub improved: bool,
    pub relocations: usize,
    pub iterations: usize,
    pub evaluations: usize,
    pub gradient_norm: f64,
    pub status: Option<LbfgsStatus>,
}

/// Per-row sums of the unnormalised kernel: `num_k = Σ_j e_kj L_kj`, `den_k = Σ_j e_kj`.
struct RowSums {
    num: Array1<f64>,
    den: Array1<f64>,
}

impl RowSums {
    fn compute(kernel: &Array2<f64>, losses: &Array2<f64>) -> Self {
        let num = (kernel * losses).sum_axis(Axis(1));
        let den = kernel.sum_axis(Axis(1));
        Self { num, den }
    }

    fn value(&self, k: usize) -> f64 {
        self.num[k] / self.den[k]
    }
}

/// Exact change in the objective if item `i` moves onto item `j`'s position
/// and adopts its local model.
fn relocation_delta(
    i: usize,
    j: usize,
    kernel: &Array2<f64>,
    losses: &Array2<f64>,
    sums: &RowSums,
    penalties: &Array1<f64>,
) -> f64 {
    let n = kernel.nrows();
    // Row i: distances become those of j (self term e = 1), model becomes j's.
    let e_ji = kernel[[j, i]];
    let l_ji = losses[[j, i]];
    let num_i = sums.num[j] - e_ji * l_ji + l_ji;
    let den_i = sums.den[j] - e_ji + 1.0;
    let mut delta = num_i / den_i - sums.value(i);
    // Rows k != i: only the kernel entry towards i changes; L_ki is unchanged.
    for k in 0..n {
        if k == i {
            continue;
        }
        let change = kernel[[k, j]] - kernel[[k, i]];
        if change == 0.0 {
            continue;
        }
        let l_ki = losses[[k, i]];
        let updated = (sums.num[k] + change * l_ki) / (sums.den[k] + change);
        delta += updated - sums.value(k);
    }
    delta + penalties[j] - penalties[i]
}

pub fn escape(
    problem: &Problem,
    z: &Array2<f64>,
    b: &Array2<f64>,
    hyper: &Hyperparameters,
    seed: u64,
) -> Result<EscapeOutcome> {
    let n = problem.n();
    let loss_before = problem.loss(z.view(), b.view())?;
    let unchanged = || EscapeOutcome {
        z: z.clone(),
        b: b.clone(),
        loss: loss_before,
        improved: false,
        relocations: 0,
        iterations: 0,
        evaluations: 0,
        gradient_norm: f64::NAN,
        status: None,
    };

    let candidates: Vec<usize> = if n <= MAX_CANDIDATES {
        (0..n).collect()
    } else {
        let mut picked = index::sample(&mut seeded_rng(seed), n, MAX_CANDIDATES).into_vec();
        picked.sort_unstable();
        picked
    };

    let mut z_new = z.clone();
    let mut b_new = b.clone();
    let mut kernel = super::pairwise_distances(z.view(), problem.distance()).mapv(|d| (-d).exp());
    let mut losses = problem.loss_matrix(b.view());
    let mut penalties: Array1<f64> = b.rows().into_iter().map(|r| problem.penalty(r)).collect();
    let mut sums = RowSums::compute(&kernel, &losses);
    let tolerance = 1e-12 * loss_before.abs().max(1.0);
    let mut relocations = 0;

    for i in 0..n {
        let deltas: Vec<f64> = candidates
            .par_iter()
            .map(|&j| {
                if j == i {
                    f64::INFINITY
                } else {
                    relocation_delta(i, j, &kernel, &losses, &sums, &penalties)
                }
            })
            .collect();
        let mut best: Option<(usize, f64)> = None;
        for (&j, &delta) in candidates.iter().zip(&deltas) {
            if delta < -tolerance && best.is_none_or(|(_, d)| delta < d) {
                best = Some((j, delta));
            }
        }
        let Some((j, _)) = best else { continue };

        relocations += 1;
        let zj = z_new.row(j).to_owned();
        z_new.row_mut(i).assign(&zj);
        let bj = b_new.row(j).to_owned();
        b_new.row_mut(i).assign(&bj);
        penalties[i] = penalties[j];
        let lj = losses.row(j).to_owned();
        losses.row_mut(i).assign(&lj);
        // i now coincides with j
        for k in 0..n {
            let old = kernel[[k, i]];
            let new = if k == i { 1.0 } else { kernel[[k, j]] };
            if k != i {
                sums.num[k] += (new - old) * losses[[k, i]];
                sums.den[k] += new - old;
            }
            kernel[[k, i]] = new;
            kernel[[i, k]] = new;
        }
        kernel[[i, j]] = 1.0;
        kernel[[j, i]] = 1.0;
        let row_i = &kernel.row(i) * &losses.row(i);
        sums.num[i] = row_i.sum();
        sums.den[i] = kernel.row(i).sum();
    }

    if relocations == 0 {
        return Ok(unchanged());
    }
    let z_proj = project_radius(z_new.view(), hyper.radius)?;
    let phase = optimise_joint(problem, &z_proj, &b_new, hyper)?;
    if phase.loss < loss_before {
        Ok(EscapeOutcome {
            z: phase.z,
            b: phase.b,
            loss: phase.loss,
            improved: true,
            relocations,
            iterations: phase.iterations,
            evaluations: phase.evaluations,
            gradient_norm: phase.gradient_norm,
            status: Some(phase.status),
        })
    } else {
        Ok(unchanged())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::DistanceKind;
    use ndarray::array;

    /// Reference: evaluate the objective before and after an explicit move.
    #[test]
    fn delta_matches_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for distance in [DistanceKind::Euclidean, DistanceKind::SquaredEuclidean] {
            let hyper = Hyperparameters {
                distance,
                lambda_lasso: 0.01,
                lambda_ridge: 0.02,
                ..Default::default()
            };
            let n = 9;
            let x = Array2::from_shape_fn((n, 2), |_| rng.random_range(-1.0..1.0));
            let y = Array1::from_shape_fn(n, |_| rng.random_range(-1.0..1.0));
            let problem = Problem::new(x.view(), y.view(), &hyper).unwrap();
            let z = Array2::from_shape_fn((n, 2), |_| rng.random_range(-2.0..2.0));
            let b = Array2::from_shape_fn((n, 3), |_| rng.random_range(-1.0..1.0));
            let kernel = crate::engine::pairwise_distances(z.view(), distance).mapv(|d| (-d).exp());
            let losses = problem.loss_matrix(b.view());
            let sums = RowSums::compute(&kernel, &losses);
            let penalties: Array1<f64> = b.rows().into_iter().map(|r| problem.penalty(r)).collect();
            let base = problem.loss(z.view(), b.view()).unwrap();
            for i in 0..n {
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let mut z2 = z.clone();
                    let mut b2 = b.clone();
                    z2.row_mut(i).assign(&z.row(j));
                    b2.row_mut(i).assign(&b.row(j));
                    let brute = problem.loss(z2.view(), b2.view()).unwrap() - base;
                    let fast = relocation_delta(i, j, &kernel, &losses, &sums, &penalties);
                    assert!((brute - fast).abs() < 1e-12, "{i}->{j}: {brute} vs {fast}");
                }
            }
        }
    }

    #[test]
    fn optimal_state_is_left_alone() {
        // Every item is explained perfectly by the same model: nothing improves.
        let hyper = Hyperparameters {
            lambda_lasso: 0.0,
            lambda_ridge: 0.0,
            ..Default::default()
        };
        let x = array![[0.0], [1.0], [2.0], [3.0]];
        let y = array![1.0, 3.0, 5.0, 7.0];
        let problem = Problem::new(x.view(), y.view(), &hyper).unwrap();
        let z = project_radius(array![[0.0, 1.0], [1.0, 0.0], [-1.0, 0.0], [0.0, -1.0]].view(), 3.5).unwrap();
        let b = Array2::from_shape_fn((4, 2), |(_, j)| [2.0, 1.0][j]);
        let out = escape(&problem, &z, &b, &hyper, 0).unwrap();
        assert!(!out.improved);
        assert_eq!(out.z, z);
        assert_eq!(out.b, b);
    }
}
