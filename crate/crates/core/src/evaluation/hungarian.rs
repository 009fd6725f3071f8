use ndarray::ArrayView2;

use crate::error::{Error, Result};

/// Minimum-cost perfect assignment on a square cost matrix.
///
/// Returns `π` with row `i` assigned to column `π[i]`, and the total
/// `Σ_i cost[i, π[i]]` summed in row order. Shortest augmenting paths with
/// dual potentials, `O(n³)`.
pub fn hungarian(cost: ArrayView2<f64>) -> Result<(Vec<usize>, f64)> {
    let (n, cols) = cost.dim();
    if n != cols {
        return Err(Error::DimensionMismatch(format!(
            "assignment needs a square cost matrix, got {n}×{cols}"
        )));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("assignment cost matrix".into()));
    }
    if n == 0 {
        return Ok((Vec::new(), 0.0));
    }

    // 1-based arrays; index 0 is the virtual root column/row.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut min_to = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let reduced = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                if reduced < min_to[j] {
                    min_to[j] = reduced;
                    way[j] = j0;
                }
                if min_to[j] < delta {
                    delta = min_to[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_to[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[row_of[j] - 1] = j - 1;
    }
    let total = assignment.iter().enumerate().map(|(i, &j)| cost[[i, j]]).sum();
    Ok((assignment, total))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use rand::{Rng, SeedableRng};

    /// Exhaustive minimum over all permutations (Heap's algorithm).
    pub(crate) fn brute_force(cost: ArrayView2<f64>) -> f64 {
        let n = cost.nrows();
        let mut perm: Vec<usize> = (0..n).collect();
        let total = |p: &[usize]| -> f64 { p.iter().enumerate().map(|(i, &j)| cost[[i, j]]).sum() };
        let mut best = total(&perm);
        let mut c = vec![0; n];
        let mut i = 0;
        while i < n {
            if c[i] < i {
                if i % 2 == 0 {
                    perm.swap(0, i);
                } else {
                    perm.swap(c[i], i);
                }
                best = best.min(total(&perm));
                c[i] += 1;
                i = 0;
            } else {
                c[i] = 0;
                i += 1;
            }
        }
        best
    }

    #[test]
    fn two_by_two_example() {
        let (pi, total) = hungarian(array![[1.0, 2.0], [2.0, 1.0]].view()).unwrap();
        assert_eq!(pi, vec![0, 1]);
        assert_eq!(total, 2.0);
    }

    #[test]
    fn zero_diagonal_gives_identity() {
        let cost = Array2::from_shape_fn((5, 5), |(i, j)| if i == j { 0.0 } else { 1.0 + (i * j) as f64 });
        let (pi, total) = hungarian(cost.view()).unwrap();
        assert_eq!(pi, (0..5).collect::<Vec<_>>());
        assert_eq!(total, 0.0);
    }

    #[test]
    fn constant_costs_total_n_c() {
        let (pi, total) = hungarian(Array2::from_elem((6, 6), 2.5).view()).unwrap();
        let mut sorted = pi.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..6).collect::<Vec<_>>());
        assert_eq!(total, 15.0);
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for n in 1..=6 {
            for _ in 0..30 {
                let cost = Array2::from_shape_fn((n, n), |_| rng.random_range(-5.0..5.0));
                assert_eq!(hungarian(cost.view()).unwrap().1, brute_force(cost.view()));
            }
        }
    }

    #[test]
    fn non_square_is_rejected() {
        assert!(hungarian(Array2::<f64>::zeros((2, 3)).view()).is_err());
    }
}
