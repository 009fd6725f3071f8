//! End-to-end acceptance criteria. Each test prints one `PASS`/`FAIL` line
//! straight to stdout, so the lines show up even when output is captured.

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use ndarray::{array, Array1, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use slisemap::baseline::{fit_local_models_on_fixed_embedding, pca_embed, FixedEmbedding};
use slisemap::cluster::{adjusted_rand_index, kmeans_on_coefficients};
use slisemap::engine::{
    fit, mean_squared_norm, DistanceKind, EmbeddingSource, Hyperparameters, OptimiserSettings, Problem,
};
use slisemap::evaluation::{
    explanation_quality, hungarian, local_model_stability, neighbourhood_stability_arrays, permutation_loss,
    quality_with_threshold, stability_experiment, ExperimentSettings, QualityOptions, LOCAL_MODEL_STABILITY,
    PERMUTATION_LOSS,
};
use slisemap::synth::{generate, SynthConfig};
use slisemap::{derive_seed, ClusterSummary, Dataset, ModelFamily, Solution};

fn report(id: u32, name: &str, passed: bool, detail: &str) {
    let line = format!(
        "[{}] criterion {id:>2}: {name} ({detail})\n",
        if passed { "PASS" } else { "FAIL" }
    );
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    assert!(passed, "criterion {id} failed: {name} ({detail})");
}

fn three_regimes(n: usize, seed: u64) -> Dataset {
    generate(&SynthConfig { n, m: 5, regimes: 3, seed, ..Default::default() })
        .unwrap()
        .dataset
        .normalise()
}

fn slisemap_bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_slisemap"));
    for (key, _) in std::env::vars().filter(|(k, _)| k.starts_with("SLISEMAP_")) {
        cmd.env_remove(key);
    }
    cmd
}

fn run_bin(args: &[&str]) -> String {
    let out = slisemap_bin().args(args).output().expect("binary runs");
    assert!(out.status.success(), "{args:?}:\n{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn relative_error(exact: &Array2<f64>, approx: &Array2<f64>) -> f64 {
    let diff = (exact - approx).mapv(|v| v * v).sum().sqrt();
    diff / approx.mapv(|v| v * v).sum().sqrt().max(1e-12)
}

#[test]
fn criterion_01_gradients_match_central_differences() {
    let start = Instant::now();
    let (n, m, h) = (30, 4, 1e-6);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for family in [ModelFamily::Regression, ModelFamily::Classification] {
        let hyper = Hyperparameters { family, lambda_lasso: 0.01, lambda_ridge: 0.01, ..Default::default() };
        for _ in 0..20 {
            let x = Array2::from_shape_fn((n, m), |_| rng.random_range(-2.0..2.0));
            let y = Array1::from_shape_fn(n, |_| match family {
                ModelFamily::Regression => rng.random_range(-2.0..2.0),
                ModelFamily::Classification => rng.random_range(0.0..1.0),
            });
            let problem = Problem::new(x.view(), y.view(), &hyper).unwrap();
            let z = Array2::from_shape_fn((n, 2), |_| rng.random_range(-3.0..3.0));
            // away from zero, where the lasso term has no derivative
            let b = Array2::from_shape_fn((n, m + 1), |_| {
                let v: f64 = rng.random_range(0.05..1.0);
                if rng.random::<bool>() { v } else { -v }
            });
            let exact = problem.objective(z.view(), b.view()).unwrap();
            let loss = |z: &Array2<f64>, b: &Array2<f64>| problem.loss(z.view(), b.view()).unwrap();
            let mut fz = Array2::zeros(z.raw_dim());
            for ((i, k), g) in fz.indexed_iter_mut() {
                let (mut zp, mut zm) = (z.clone(), z.clone());
                zp[[i, k]] += h;
                zm[[i, k]] -= h;
                *g = (loss(&zp, &b) - loss(&zm, &b)) / (2.0 * h);
            }
            let mut fb = Array2::zeros(b.raw_dim());
            for ((i, k), g) in fb.indexed_iter_mut() {
                let (mut bp, mut bm) = (b.clone(), b.clone());
                bp[[i, k]] += h;
                bm[[i, k]] -= h;
                *g = (loss(&z, &bp) - loss(&z, &bm)) / (2.0 * h);
            }
            worst = worst.max(relative_error(&exact.grad_z, &fz)).max(relative_error(&exact.grad_b, &fb));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        1,
        "analytic gradients match central differences",
        worst < 1e-5 && secs < 10.0,
        &format!("worst relative error {worst:.2e}, {secs:.1} s"),
    );
}

#[test]
fn criterion_02_radius_constraint_holds_after_every_fit() {
    let quick = OptimiserSettings { max_iterations: 80, ..Default::default() };
    let mut worst: f64 = 0.0;
    let mut fits = 0;
    let mut check = |sol: &Solution, radius: f64| {
        worst = worst.max((mean_squared_norm(sol.embedding.view()) - radius * radius).abs());
        fits += 1;
    };
    for (seed, (family, distance)) in [
        (ModelFamily::Regression, DistanceKind::Euclidean),
        (ModelFamily::Regression, DistanceKind::SquaredEuclidean),
        (ModelFamily::Classification, DistanceKind::Euclidean),
    ]
    .into_iter()
    .enumerate()
    {
        let data = generate(&SynthConfig { n: 80, m: 3, family, seed: seed as u64, ..Default::default() })
            .unwrap()
            .dataset
            .normalise();
        for (dim, radius) in [(1, 1.0), (2, 3.5), (3, 10.0)] {
            let hyper = Hyperparameters { dim, radius, family, distance, optimiser: quick, ..Default::default() };
            check(&fit(&data, &hyper).unwrap(), radius);
            let pca = pca_embed(&data, dim).unwrap().rescaled(radius).unwrap();
            check(&fit_local_models_on_fixed_embedding(&data, &pca, &hyper).unwrap(), radius);
        }
    }
    let data = three_regimes(120, 4);
    let raw = Array2::from_shape_fn((120, 2), |(i, c)| (i * (c + 2) % 13) as f64 - 4.0);
    let external = FixedEmbedding { z: raw, source: EmbeddingSource::External("grid".into()), radius_normalised: false }
        .rescaled(3.5)
        .unwrap();
    let hyper = Hyperparameters { optimiser: quick, ..Default::default() };
    check(&fit_local_models_on_fixed_embedding(&data, &external, &hyper).unwrap(), 3.5);
    check(&fit(&data, &hyper).unwrap(), 3.5);
    report(
        2,
        "mean squared embedding norm equals r^2 after fitting",
        worst < 1e-9,
        &format!("{fits} fits, worst deviation {worst:.1e}"),
    );
}

#[test]
fn criterion_03_permutation_loss_separates_structure_from_noise() {
    let start = Instant::now();
    let seeds: Vec<u64> = (0..5).collect();
    let hyper = Hyperparameters::default();
    let structured = permutation_loss(&three_regimes(400, 0), &hyper, &seeds).unwrap();
    let noise_data = generate(&SynthConfig { n: 400, m: 5, regimes: 3, pure_noise: true, ..Default::default() })
        .unwrap()
        .dataset
        .normalise();
    let noise = permutation_loss(&noise_data, &hyper, &seeds).unwrap();
    let secs = start.elapsed().as_secs_f64();
    report(
        3,
        "permutation loss < 0.9 on regimes and within 1 +- 0.1 on noise",
        structured < 0.9 && (noise - 1.0).abs() <= 0.1 && secs < 300.0,
        &format!("regimes {structured:.3}, noise {noise:.3}, {secs:.0} s"),
    );
}

#[test]
fn criterion_04_stability_experiment_beats_permuted_baselines() {
    let start = Instant::now();
    let data = three_regimes(600, 11);
    let settings = ExperimentSettings { sizes: vec![100, 200, 400], repetitions: 10, seed: 5, ..Default::default() };
    let table = stability_experiment(&data, &Hyperparameters::default(), &settings).unwrap();
    let summary = table.summary();
    let below = |metric: &str| {
        summary
            .iter()
            .find(|s| s.size == 400 && s.metric == metric)
            .map(|s| (s.below_baseline, s.mean, s.baseline_mean))
            .unwrap()
    };
    let (perm, perm_mean, _) = below(PERMUTATION_LOSS);
    let (stab, stab_mean, stab_base) = below(LOCAL_MODEL_STABILITY);
    report(
        4,
        "permutation loss and local model stability below baseline at size 400",
        perm >= 9 && stab >= 9,
        &format!(
            "permutation {perm}/10 (mean {perm_mean:.3}), stability {stab}/10 (mean {stab_mean:.3} vs {stab_base:.3}), {:.0} s",
            start.elapsed().as_secs_f64()
        ),
    );
}

#[test]
fn criterion_05_compare_ranks_slisemap_above_pca() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let (csv, out) = (dir.path().join("regimes.csv"), dir.path().join("table.json"));
    run_bin(&["-q", "synth", "--n", "500", "--m", "5", "--regimes", "3", "--seed", "2", "--out", p(&csv)]);
    let stdout = run_bin(&[
        "-q", "compare", "--data", p(&csv), "--target", "y", "--repetitions", "5", "--out", p(&out),
    ]);
    let json = read_json(&out);
    let method = |name: &str| json["methods"].as_array().unwrap().iter().find(|m| m["method"] == name).unwrap().clone();
    let (s, pca) = (method("slisemap"), method("pca"));
    let mean = |m: &Value, metric: &str| m[metric]["mean"].as_f64().unwrap();
    let passed = mean(&s, "localLoss") < mean(&pca, "localLoss")
        && mean(&s, "nnLocalLoss") < mean(&pca, "nnLocalLoss")
        && mean(&s, "nnCoverage") > mean(&pca, "nnCoverage");
    print!("{stdout}");
    report(
        5,
        "compare: slisemap beats pca on local loss, nn local loss and coverage",
        passed,
        &format!(
            "local {:.4} vs {:.4}, nn {:.4} vs {:.4}, coverage {:.3} vs {:.3}, {:.0} s",
            mean(&s, "localLoss"),
            mean(&pca, "localLoss"),
            mean(&s, "nnLocalLoss"),
            mean(&pca, "nnLocalLoss"),
            mean(&s, "nnCoverage"),
            mean(&pca, "nnCoverage"),
            start.elapsed().as_secs_f64()
        ),
    );
}

/// Minimum assignment cost over all permutations, each summed in row order.
fn brute_force(cost: ArrayView2<f64>) -> f64 {
    fn recurse(cost: ArrayView2<f64>, row: usize, used: &mut Vec<bool>, partial: f64, best: &mut f64) {
        let n = cost.nrows();
        if row == n {
            *best = best.min(partial);
            return;
        }
        for col in 0..n {
            if !used[col] {
                used[col] = true;
                recurse(cost, row + 1, used, partial + cost[[row, col]], best);
                used[col] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    recurse(cost, 0, &mut vec![false; cost.nrows()], 0.0, &mut best);
    best
}

#[test]
fn criterion_06_hungarian_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut mismatches = 0;
    let mut checked = 0;
    for n in 2..=7 {
        for trial in 0..100 {
            // integer costs produce many ties, continuous costs many distinct optima
            let cost = if trial % 2 == 0 {
                Array2::from_shape_fn((n, n), |_| rng.random_range(0..20) as f64)
            } else {
                Array2::from_shape_fn((n, n), |_| rng.random_range(0.0..10.0))
            };
            let (assignment, total) = hungarian(cost.view()).unwrap();
            let mut seen = assignment.clone();
            seen.sort_unstable();
            let is_permutation = seen == (0..n).collect::<Vec<_>>();
            let recomputed: f64 = assignment.iter().enumerate().map(|(i, &j)| cost[[i, j]]).sum();
            if !is_permutation || total != brute_force(cost.view()) || recomputed != total {
                mismatches += 1;
            }
            checked += 1;
        }
    }
    report(
        6,
        "hungarian assignment cost equals brute force",
        mismatches == 0,
        &format!("{checked} matrices, {mismatches} mismatches"),
    );
}

#[test]
fn criterion_07_metric_identities_hold_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let b = Array2::from_shape_fn((25, 4), |_| rng.random_range(-2.0..2.0));
    let same_models = local_model_stability(b.view(), b.view()).unwrap();
    let z = Array2::from_shape_fn((25, 2), |_| rng.random_range(-3.0..3.0));
    let same_neighbourhoods = neighbourhood_stability_arrays(z.view(), z.view(), 1.0).unwrap();

    // integer data with targets exactly linear in the features
    let x = Array2::from_shape_fn((20, 2), |(i, j)| ((i * (j + 3)) % 7) as f64 - 3.0);
    let y = Array1::from_shape_fn(20, |i| 2.0 * x[[i, 0]] - 3.0 * x[[i, 1]] + 1.0);
    let data = Dataset::new(x, y, vec!["a".into(), "b".into()], "t", ModelFamily::Regression).unwrap();
    let exact = Array2::from_shape_fn((20, 3), |(_, j)| [2.0, -3.0, 1.0][j]);
    let z = Array2::from_shape_fn((20, 2), |(i, c)| (i + c) as f64 * 0.3);
    let options = QualityOptions::default();
    let interpolating =
        quality_with_threshold(z.view(), exact.view(), &data, ModelFamily::Regression, 0.5, &options).unwrap();
    let wrong = Array2::from_shape_fn((20, 3), |(i, j)| (i + j) as f64 * 0.1);
    let unbounded =
        quality_with_threshold(z.view(), wrong.view(), &data, ModelFamily::Regression, f64::INFINITY, &options)
            .unwrap();
    report(
        7,
        "metric identities",
        same_models == 0.0 && same_neighbourhoods == 0.0 && unbounded.nn_coverage == 1.0 && interpolating.local_loss == 0.0,
        &format!(
            "model stability {same_models}, neighbourhood stability {same_neighbourhoods}, coverage at infinite threshold {}, interpolating local loss {}",
            unbounded.nn_coverage, interpolating.local_loss
        ),
    );
}

#[test]
fn criterion_08_two_regimes_are_recovered_by_clustering() {
    let coefficients = vec![vec![1.0, 1.0, 1.0, 5.0], vec![-1.0, -1.0, -1.0, -5.0]];
    let mut worst_ari: f64 = 1.0;
    let mut worst_centroid: f64 = 0.0;
    for seed in 0..5 {
        let gen = generate(&SynthConfig {
            n: 200,
            m: 3,
            regimes: 2,
            noise: 0.1,
            coefficients: Some(coefficients.clone()),
            seed,
            ..Default::default()
        })
        .unwrap();
        let data = gen.dataset.normalise();
        let truth = gen.normalised_coefficients(data.normalisation().unwrap());
        let sol = fit(&data, &Hyperparameters::default().with_seed(seed)).unwrap();
        let summary: ClusterSummary =
            kmeans_on_coefficients(sol.coefficients.view(), sol.coefficient_names.clone(), 2, seed, 10).unwrap();
        worst_ari = worst_ari.min(adjusted_rand_index(&summary.labels, &gen.labels).unwrap());
        // match clusters to regimes by the majority generating label
        for stats in &summary.per_cluster {
            let members: Vec<usize> = (0..200).filter(|&i| summary.labels[i] == stats.cluster).collect();
            let ones = members.iter().filter(|&&i| gen.labels[i] == 1).count();
            let regime = usize::from(2 * ones > members.len());
            let error = stats
                .mean_coefficients
                .iter()
                .zip(truth.row(regime))
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            worst_centroid = worst_centroid.max(error);
        }
    }
    report(
        8,
        "k-means on local models recovers two regimes",
        worst_ari > 0.9 && worst_centroid < 0.1,
        &format!("worst adjusted Rand index {worst_ari:.3}, worst centroid error {worst_centroid:.3} over 5 seeds"),
    );
}

#[test]
fn criterion_09_loss_and_quality_are_rotation_invariant() {
    let data = three_regimes(150, 9);
    let hyper = Hyperparameters::default();
    let sol = fit(&data, &hyper).unwrap();
    let problem = Problem::from_dataset(&data, &hyper).unwrap();
    let options = QualityOptions::default();
    let base_loss = problem.loss(sol.embedding.view(), sol.coefficients.view()).unwrap();
    let base = explanation_quality(&sol, &data, &options).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(9, 1));
    let (mut loss_dev, mut quality_dev): (f64, f64) = (0.0, 0.0);
    for _ in 0..10 {
        let theta: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let (c, s) = (theta.cos(), theta.sin());
        let rotation = if rng.random::<bool>() { array![[c, -s], [s, c]] } else { array![[c, s], [s, -c]] };
        let rotated = Solution { embedding: sol.embedding.dot(&rotation), ..sol.clone() };
        let loss = problem.loss(rotated.embedding.view(), rotated.coefficients.view()).unwrap();
        loss_dev = loss_dev.max((loss - base_loss).abs());
        let q = explanation_quality(&rotated, &data, &options).unwrap();
        for (a, b) in [
            (q.local_loss, base.local_loss),
            (q.nn_local_loss, base.nn_local_loss),
            (q.nn_coverage, base.nn_coverage),
        ] {
            quality_dev = quality_dev.max((a - b).abs());
        }
    }
    report(
        9,
        "objective and explanation quality invariant under orthogonal maps",
        loss_dev < 1e-9 && quality_dev < 1e-9,
        &format!("loss deviation {loss_dev:.1e}, quality deviation {quality_dev:.1e}"),
    );
}

fn max_abs_diff(a: &Value, b: &Value) -> f64 {
    match (a, b) {
        (Value::Array(x), Value::Array(y)) if x.len() == y.len() => {
            x.iter().zip(y).map(|(x, y)| max_abs_diff(x, y)).fold(0.0, f64::max)
        }
        (Value::Number(x), Value::Number(y)) => (x.as_f64().unwrap() - y.as_f64().unwrap()).abs(),
        (x, y) if x == y => 0.0,
        _ => f64::INFINITY,
    }
}

#[test]
fn criterion_10_pipeline_is_independent_of_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("regimes.csv");
    run_bin(&["-q", "synth", "--n", "200", "--m", "4", "--regimes", "3", "--seed", "10", "--out", p(&csv)]);
    let max = std::thread::available_parallelism().map_or(1, |n| n.get()).to_string();
    let mut counts = vec!["1".to_string(), max, "4".to_string()];
    counts.dedup();
    let runs: Vec<_> = counts
        .iter()
        .map(|threads| {
            let out = dir.path().join(format!("threads-{threads}"));
            run_bin(&[
                "-q", "pipeline", "--data", p(&csv), "--target", "y", "--k", "3", "--seed", "3", "--threads", threads,
                "--out", p(&out),
            ]);
            let solution = read_json(&out.join("solution.json"));
            let clusters = read_json(&out.join("clusters.json"));
            let metrics = read_json(&out.join("metrics.json"));
            (solution, clusters, metrics)
        })
        .collect();
    let (s0, c0, m0) = &runs[0];
    let mut worst: f64 = 0.0;
    for (s, c, m) in &runs[1..] {
        worst = worst
            .max(max_abs_diff(&s0["embedding"], &s["embedding"]))
            .max(max_abs_diff(&s0["coefficients"], &s["coefficients"]))
            .max(max_abs_diff(&c0["labels"], &c["labels"]));
        for key in ["localLoss", "nnLocalLoss", "nnCoverage"] {
            worst = worst.max(max_abs_diff(&m0[key], &m[key]));
        }
    }
    let threads_used: Vec<String> = runs.iter().map(|(s, _, _)| s["run_config"]["threads"].to_string()).collect();
    report(
        10,
        "pipeline output identical across thread counts",
        worst < 1e-9,
        &format!("threads {}, worst difference {worst:.1e}", threads_used.join("/")),
    );
}
