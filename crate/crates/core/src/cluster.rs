//! k-means over local-model coefficients, per-cluster summaries and binned
//! embedding medians.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::derive_seed;
use crate::error::{Error, Result};
use crate::seeded_rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeans {
    pub k: usize,
    pub restarts: usize,
    pub max_iterations: usize,
    pub seed: u64,
}

impl KMeans {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            restarts: 10,
            max_iterations: 300,
            seed,
        }
    }

    /// Best of `restarts` k-means++ initialised Lloyd runs by inertia.
    pub fn fit(&self, points: ArrayView2<f64>) -> Result<KMeansResult> {
        let n = points.nrows();
        if self.k == 0 {
            return Err(Error::InvalidParameter("k must be >= 1".into()));
        }
        if self.k > n {
            return Err(Error::InvalidParameter(format!("k = {} exceeds the {n} items", self.k)));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("clustering input".into()));
        }
        let runs: Vec<KMeansResult> = (0..self.restarts.max(1))
            .into_par_iter()
            .map(|r| self.single_run(points, derive_seed(self.seed, r as u64)))
            .collect();
        // first minimum wins, so the result does not depend on scheduling
        let best = runs
            .into_iter()
            .reduce(|best, run| if run.inertia < best.inertia { run } else { best })
            .expect("at least one restart");
        Ok(best)
    }

    fn single_run(&self, points: ArrayView2<f64>, seed: u64) -> KMeansResult {
        let n = points.nrows();
        let mut centroids = plus_plus(points, self.k, seed);
        let mut labels = vec![usize::MAX; n];
        let mut inertia_trace = Vec::new();
        let mut iterations = 0;
        loop {
            let changed = assign(points, centroids.view(), &mut labels);
            repair_empty(points, &mut centroids, &mut labels);
            centroids = means(points, &labels, self.k);
            inertia_trace.push(inertia(points, centroids.view(), &labels));
            iterations += 1;
            if !changed || iterations >= self.max_iterations {
                break;
            }
        }
        let inertia = *inertia_trace.last().expect("one iteration");
        KMeansResult {
            labels,
            centroids,
            inertia,
            iterations,
            inertia_trace,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    #[serde(with = "crate::engine::rows")]
    pub centroids: Array2<f64>,
    pub inertia: f64,
    pub iterations: usize,
    /// Inertia after each Lloyd iteration.
    pub inertia_trace: Vec<f64>,
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum()
}

fn nearest(point: ArrayView1<f64>, centroids: ArrayView2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centre) in centroids.rows().into_iter().enumerate() {
        let d = sq_dist(point, centre);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus(points: ArrayView2<f64>, k: usize, seed: u64) -> Array2<f64> {
    let n = points.nrows();
    let mut rng = seeded_rng(seed);
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = points.rows().into_iter().map(|p| sq_dist(p, points.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 && target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            // guard against rounding landing on a zero-weight tail item
            if d2[pick] == 0.0 {
                pick = d2.iter().rposition(|&w| w > 0.0).expect("positive total");
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        chosen.push(next);
        for (i, p) in points.rows().into_iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, points.row(next)));
        }
    }
    let mut centroids = Array2::zeros((k, points.ncols()));
    for (c, &i) in chosen.iter().enumerate() {
        centroids.row_mut(c).assign(&points.row(i));
    }
    centroids
}

fn assign(points: ArrayView2<f64>, centroids: ArrayView2<f64>, labels: &mut [usize]) -> bool {
    let new: Vec<usize> = points
        .axis_iter(Axis(0))
        .into_par_iter()
        .map(|p| nearest(p, centroids).0)
        .collect();
    let changed = new.as_slice() != labels;
    labels.copy_from_slice(&new);
    changed
}

/// Move the point farthest from its centroid into each empty cluster.
fn repair_empty(points: ArrayView2<f64>, centroids: &mut Array2<f64>, labels: &mut [usize]) {
    let k = centroids.nrows();
    loop {
        let mut counts = vec![0usize; k];
        labels.iter().for_each(|&l| counts[l] += 1);
        let Some(empty) = counts.iter().position(|&c| c == 0) else { return };
        let far = (0..labels.len())
            .filter(|&i| counts[labels[i]] > 1)
            .map(|i| (i, sq_dist(points.row(i), centroids.row(labels[i]))))
            .fold(None, |best: Option<(usize, f64)>, (i, d)| match best {
                Some((_, bd)) if bd >= d => best,
                _ => Some((i, d)),
            });
        let Some((i, _)) = far else { return };
        labels[i] = empty;
        centroids.row_mut(empty).assign(&points.row(i));
    }
}

fn means(points: ArrayView2<f64>, labels: &[usize], k: usize) -> Array2<f64> {
    let mut sums = Array2::zeros((k, points.ncols()));
    let mut counts = vec![0usize; k];
    for (p, &l) in points.rows().into_iter().zip(labels) {
        let mut row = sums.row_mut(l);
        row += &p;
        counts[l] += 1;
    }
    for (mut row, &c) in sums.rows_mut().into_iter().zip(&counts) {
        if c > 0 {
            row /= c as f64;
        }
    }
    sums
}

fn inertia(points: ArrayView2<f64>, centroids: ArrayView2<f64>, labels: &[usize]) -> f64 {
    points
        .rows()
        .into_iter()
        .zip(labels)
        .map(|(p, &l)| sq_dist(p, centroids.row(l)))
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ClusterStats {
    pub cluster: usize,
    pub size: usize,
    pub mean_coefficients: Vec<f64>,
    /// Median target in original units, once target statistics are attached.
    pub median_target: Option<f64>,
    /// Fraction of members with a raw feature value above zero, per feature.
    pub feature_incidence: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ClusterSummary {
    pub k: usize,
    pub labels: Vec<usize>,
    #[serde(with = "crate::engine::rows")]
    pub centroids: Array2<f64>,
    pub inertia: f64,
    pub coefficient_names: Vec<String>,
    pub per_cluster: Vec<ClusterStats>,
    pub global_median_target: Option<f64>,
    /// `(k, inertia)` for neighbouring cluster counts.
    #[serde(default)]
    pub elbow: Vec<(usize, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_config: Option<serde_json::Value>,
}

impl ClusterSummary {
    pub fn from_result(result: &KMeansResult, coefficients: ArrayView2<f64>, coefficient_names: Vec<String>) -> Self {
        let k = result.centroids.nrows();
        let per_cluster = (0..k)
            .map(|c| {
                let members: Vec<usize> = (0..result.labels.len()).filter(|&i| result.labels[i] == c).collect();
                let mean = coefficients.select(Axis(0), &members).mean_axis(Axis(0)).expect("non-empty cluster");
                ClusterStats {
                    cluster: c,
                    size: members.len(),
                    mean_coefficients: mean.to_vec(),
                    median_target: None,
                    feature_incidence: None,
                }
            })
            .collect();
        Self {
            k,
            labels: result.labels.clone(),
            centroids: result.centroids.clone(),
            inertia: result.inertia,
            coefficient_names,
            per_cluster,
            global_median_target: None,
            elbow: Vec::new(),
            run_config: None,
        }
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
        let summary: ClusterSummary = serde_json::from_str(&text)?;
        if summary.labels.iter().any(|&l| l >= summary.k) || summary.centroids.nrows() != summary.k {
            return Err(Error::InvalidData(format!("`{}` is not a consistent cluster summary", path.display())));
        }
        Ok(summary)
    }

    /// Rows are clusters; columns are `cluster`, `size`, then the coefficient names.
    pub fn write_coefficient_table(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut writer = csv::Writer::from_path(path)?;
        let mut header = vec!["cluster".to_string(), "size".to_string()];
        header.extend(self.coefficient_names.iter().cloned());
        writer.write_record(&header)?;
        for stats in &self.per_cluster {
            let mut record = vec![stats.cluster.to_string(), stats.size.to_string()];
            record.extend(self.centroids.row(stats.cluster).iter().map(|v| v.to_string()));
            writer.write_record(&record)?;
        }
        writer.flush().map_err(|e| Error::io(path, e))
    }
}

/// Cluster local-model coefficient rows with k-means.
pub fn kmeans_on_coefficients(
    coefficients: ArrayView2<f64>,
    coefficient_names: Vec<String>,
    k: usize,
    seed: u64,
    restarts: usize,
) -> Result<ClusterSummary> {
    let result = KMeans { restarts, ..KMeans::new(k, seed) }.fit(coefficients)?;
    Ok(ClusterSummary::from_result(&result, coefficients, coefficient_names))
}

/// Inertia for each `k` in `ks` that is between 1 and `n`.
pub fn elbow(coefficients: ArrayView2<f64>, ks: impl IntoIterator<Item = usize>, seed: u64, restarts: usize) -> Result<Vec<(usize, f64)>> {
    ks.into_iter()
        .filter(|&k| k >= 1 && k <= coefficients.nrows())
        .map(|k| Ok((k, KMeans { restarts, ..KMeans::new(k, seed) }.fit(coefficients)?.inertia)))
        .collect()
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = sorted.len() / 2;
    Some(if sorted.len() % 2 == 1 {
        sorted[h]
    } else {
        0.5 * (sorted[h - 1] + sorted[h])
    })
}

/// Attach raw-unit target medians and feature incidence to every cluster.
pub fn cluster_target_stats(summary: &mut ClusterSummary, data: &Dataset) -> Result<()> {
    if data.n() != summary.labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} cluster labels but the dataset has {} rows",
            summary.labels.len(),
            data.n()
        )));
    }
    let y = data.raw_y();
    let x = data.raw_x();
    for stats in &mut summary.per_cluster {
        let members: Vec<usize> = (0..data.n()).filter(|&i| summary.labels[i] == stats.cluster).collect();
        let targets: Vec<f64> = members.iter().map(|&i| y[i]).collect();
        stats.median_target = median(&targets);
        stats.feature_incidence = Some(
            (0..data.m())
                .map(|j| members.iter().filter(|&&i| x[[i, j]] > 0.0).count() as f64 / members.len() as f64)
                .collect(),
        );
    }
    summary.global_median_target = median(y.as_slice().expect("contiguous"));
    Ok(())
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!("labelings of {} and {} items", a.len(), b.len())));
    }
    let n = a.len();
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = Array2::<f64>::zeros((ka, kb));
    for (&u, &v) in a.iter().zip(b) {
        table[[u, v]] += 1.0;
    }
    let choose2 = |x: f64| x * (x - 1.0) / 2.0;
    let index: f64 = table.iter().map(|&c| choose2(c)).sum();
    let rows: f64 = table.sum_axis(Axis(1)).iter().map(|&c| choose2(c)).sum();
    let cols: f64 = table.sum_axis(Axis(0)).iter().map(|&c| choose2(c)).sum();
    let total = choose2(n as f64);
    let expected = rows * cols / total;
    let max = 0.5 * (rows + cols);
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

/// Median of per-item values in the cells of a square grid over the embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BinnedGrid {
    pub grid_size: usize,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    /// Row-major `grid_size × grid_size`, row index along the second axis;
    /// `None` for empty cells.
    pub medians: Vec<Option<f64>>,
    pub counts: Vec<usize>,
    pub min_median: Option<f64>,
    pub max_median: Option<f64>,
}

impl BinnedGrid {
    pub fn cell(&self, col: usize, row: usize) -> Option<f64> {
        self.medians[row * self.grid_size + col]
    }
}

fn bin_of(v: f64, lo: f64, hi: f64, g: usize) -> usize {
    if hi <= lo {
        return 0;
    }
    (((v - lo) / (hi - lo) * g as f64).floor() as usize).min(g - 1)
}

/// Bin the first two embedding axes into a `grid_size²` square grid.
/// One-dimensional embeddings use a single row.
pub fn bin_embedding_medians(z: ArrayView2<f64>, values: ArrayView1<f64>, grid_size: usize) -> Result<BinnedGrid> {
    if grid_size == 0 {
        return Err(Error::InvalidParameter("grid size must be >= 1".into()));
    }
    if z.nrows() != values.len() {
        return Err(Error::DimensionMismatch(format!("{} points but {} values", z.nrows(), values.len())));
    }
    if z.ncols() == 0 || z.nrows() == 0 {
        return Err(Error::InvalidData("empty embedding".into()));
    }
    let range = |col: Option<ArrayView1<f64>>| match col {
        Some(c) => c.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v))),
        None => (0.0, 0.0),
    };
    let second = (z.ncols() > 1).then(|| z.column(1));
    let x_range = range(Some(z.column(0)));
    let y_range = range(second);
    let g = grid_size;
    let mut members: Vec<Vec<f64>> = vec![Vec::new(); g * g];
    for (i, &v) in values.iter().enumerate() {
        let cx = bin_of(z[[i, 0]], x_range.0, x_range.1, g);
        let cy = second.map_or(0, |c| bin_of(c[i], y_range.0, y_range.1, g));
        members[cy * g + cx].push(v);
    }
    let medians: Vec<Option<f64>> = members.iter().map(|m| median(m)).collect();
    let present = medians.iter().flatten();
    let min_median = present.clone().copied().reduce(f64::min);
    let max_median = present.copied().reduce(f64::max);
    Ok(BinnedGrid {
        grid_size: g,
        x_range,
        y_range,
        counts: members.iter().map(Vec::len).collect(),
        medians,
        min_median,
        max_median,
    })
}

/// Column means of a coefficient matrix, the `k = 1` centroid.
pub fn column_means(b: ArrayView2<f64>) -> Array1<f64> {
    crate::local_model::mean_row(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::local_model::ModelFamily;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn blobs(seed: u64) -> (Array2<f64>, Vec<usize>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut points = Array2::zeros((80, 3));
        let mut labels = Vec::new();
        for i in 0..80 {
            let c = i % 2;
            labels.push(c);
            for j in 0..3 {
                let noise: f64 = StandardNormal.sample(&mut rng);
                points[[i, j]] = if c == 0 { -4.0 } else { 4.0 } + 0.5 * noise;
            }
        }
        (points, labels)
    }

    #[test]
    fn single_cluster_is_column_mean() {
        let (points, _) = blobs(1);
        let result = KMeans::new(1, 0).fit(points.view()).unwrap();
        let mean = column_means(points.view());
        for (a, b) in result.centroids.row(0).iter().zip(mean.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn separated_blobs_are_recovered() {
        let (points, truth) = blobs(2);
        let result = KMeans::new(2, 7).fit(points.view()).unwrap();
        assert!(adjusted_rand_index(&result.labels, &truth).unwrap() > 0.95);
    }

    #[test]
    fn k_equal_n_has_zero_inertia() {
        let points = array![[0.0, 1.0], [2.0, 2.0], [5.0, -1.0], [3.0, 3.0]];
        let result = KMeans::new(4, 3).fit(points.view()).unwrap();
        assert_eq!(result.inertia, 0.0);
        let mut labels = result.labels.clone();
        labels.sort_unstable();
        assert_eq!(labels, vec![0, 1, 2, 3]);
    }

    #[test]
    fn invalid_k() {
        let points = Array2::zeros((3, 2));
        assert!(KMeans::new(0, 0).fit(points.view()).is_err());
        assert!(KMeans::new(4, 0).fit(points.view()).is_err());
    }

    #[test]
    fn inertia_non_increasing_and_fixed_point() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let points = Array2::from_shape_simple_fn((120, 2), || StandardNormal.sample(&mut rng));
        let result = KMeans::new(5, 1).fit(points.view()).unwrap();
        for w in result.inertia_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        let mut labels = result.labels.clone();
        assert!(!assign(points.view(), result.centroids.view(), &mut labels));
        let centroids = means(points.view(), &result.labels, 5);
        for (a, b) in centroids.iter().zip(result.centroids.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn same_seed_same_labels() {
        let (points, _) = blobs(5);
        let a = KMeans::new(3, 11).fit(points.view()).unwrap();
        let b = KMeans::new(3, 11).fit(points.view()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ari_examples() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[1, 1, 0, 0]).unwrap(), 1.0);
        let ari = adjusted_rand_index(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap();
        assert!((ari - (-0.5)).abs() < 1e-12);
    }

    #[test]
    fn target_medians_in_raw_units() {
        let x = array![[1.0], [-1.0], [2.0], [0.0], [3.0], [-2.0]];
        let y = array![1.0, 2.0, 3.0, 11.0, 12.0, 13.0];
        let data = Dataset::new(x, y, vec!["a".into()], "y", ModelFamily::Regression).unwrap().normalise();
        let result = KMeansResult {
            labels: vec![0, 0, 0, 1, 1, 1],
            centroids: array![[0.0, 0.0], [1.0, 1.0]],
            inertia: 0.0,
            iterations: 1,
            inertia_trace: vec![0.0],
        };
        let b = array![[0.0, 0.0], [0.0, 0.0], [0.0, 0.0], [1.0, 1.0], [1.0, 1.0], [1.0, 1.0]];
        let mut summary = ClusterSummary::from_result(&result, b.view(), vec!["a".into(), "intercept".into()]);
        cluster_target_stats(&mut summary, &data).unwrap();
        assert!((summary.per_cluster[0].median_target.unwrap() - 2.0).abs() < 1e-12);
        assert!((summary.per_cluster[1].median_target.unwrap() - 12.0).abs() < 1e-12);
        assert!((summary.global_median_target.unwrap() - 7.0).abs() < 1e-12);
        assert_eq!(summary.per_cluster[0].feature_incidence, Some(vec![2.0 / 3.0]));
    }

    #[test]
    fn coefficient_table_rows_are_clusters() {
        let (points, _) = blobs(6);
        let names = vec!["a".into(), "b".into(), "intercept".into()];
        let summary = kmeans_on_coefficients(points.view(), names, 2, 0, 3).unwrap();
        let file = tempfile::NamedTempFile::new().unwrap();
        summary.write_coefficient_table(file.path()).unwrap();
        let text = std::fs::read_to_string(file.path()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "cluster,size,a,b,intercept");
        assert_eq!(lines.len(), 3);
    }

    #[test]
    fn two_by_two_grid_by_hand() {
        let z = array![[0.0, 0.0], [0.1, 0.2], [1.0, 0.0], [1.0, 1.0], [0.0, 0.9]];
        let v = array![1.0, 3.0, 5.0, 7.0, 9.0];
        let grid = bin_embedding_medians(z.view(), v.view(), 2).unwrap();
        assert_eq!(grid.cell(0, 0), Some(2.0));
        assert_eq!(grid.cell(1, 0), Some(5.0));
        assert_eq!(grid.cell(1, 1), Some(7.0));
        assert_eq!(grid.cell(0, 1), Some(9.0));
        assert_eq!((grid.min_median, grid.max_median), (Some(2.0), Some(9.0)));
    }

    #[test]
    fn constant_values_and_single_cell() {
        let z = array![[0.0, 0.0], [1.0, 3.0], [2.0, -1.0]];
        let grid = bin_embedding_medians(z.view(), array![4.0, 4.0, 4.0].view(), 5).unwrap();
        assert!(grid.medians.iter().flatten().all(|&m| m == 4.0));
        assert_eq!(grid.min_median, grid.max_median);
        let one = bin_embedding_medians(z.view(), array![1.0, 2.0, 6.0].view(), 1).unwrap();
        assert_eq!(one.medians, vec![Some(2.0)]);
    }

    proptest! {
        #[test]
        fn binning_is_order_invariant(seed in 0u64..1000) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let z = Array2::from_shape_simple_fn((25, 2), || StandardNormal.sample(&mut rng));
            let v = Array1::from_shape_simple_fn(25, || StandardNormal.sample(&mut rng));
            let order: Vec<usize> = (0..25).rev().collect();
            let a = bin_embedding_medians(z.view(), v.view(), 4).unwrap();
            let b = bin_embedding_medians(z.select(Axis(0), &order).view(), v.select(Axis(0), &order).view(), 4).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
