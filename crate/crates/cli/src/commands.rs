use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::Serialize;
use slisemap::baseline::{fit_local_models_on_fixed_embedding, load_external_embedding, pca_embed, FixedEmbedding};
use slisemap::cluster::{bin_embedding_medians, cluster_target_stats, elbow, kmeans_on_coefficients, ClusterSummary};
use slisemap::data::{load_csv, resample, CsvOptions};
use slisemap::evaluation::{
    explanation_quality, permutation_runs, stability_experiment, ExperimentSettings, MetricReport, PermutationRun,
    ReportContext, StabilitySummary,
};
use slisemap::lbfgs::LbfgsStatus;
use slisemap::synth::{generate, SynthConfig};
use slisemap::{derive_seed, Dataset, Hyperparameters, ModelFamily, Solution};

use crate::args::{
    ClusterArgs, CompareArgs, DataArgs, EvaluateArgs, FitArgs, GlobalArgs, PipelineArgs, PlotArgs, PlotKind,
    PlotOptions, SynthArgs,
};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::plot;

fn load(args: &DataArgs) -> CliResult<Dataset> {
    let data = load_csv(&args.data, &args.target, &args.csv_options())?;
    info!("loaded {} rows with {} features from {}", data.n(), data.m(), args.data.display());
    Ok(data.normalise())
}

fn load_for_solution(path: &Path, target: &str, delimiter: char, ignore: &[String], sol: &Solution) -> CliResult<Dataset> {
    let options = CsvOptions { delimiter: delimiter as u8, ignore: ignore.to_vec(), family: sol.hyperparameters.family };
    let data = load_csv(path, target, &options)?.normalise();
    check_provenance(sol, &data, path)?;
    Ok(data)
}

fn check_provenance(sol: &Solution, data: &Dataset, path: &Path) -> CliResult<()> {
    if sol.dataset_checksum != data.checksum() {
        return Err(CliError::Provenance(format!(
            "{} is not the dataset the solution was fitted on (checksum mismatch)",
            path.display()
        )));
    }
    Ok(())
}

fn create_parent(path: &Path) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    create_parent(path)?;
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn log_fit(sol: &Solution) {
    let d = &sol.diagnostics;
    let trajectory: Vec<String> = d.phase_losses.iter().map(|l| format!("{l:.6}")).collect();
    info!("loss per phase: {}", trajectory.join(" -> "));
    info!(
        "{} iterations, {} evaluations, {} escape rounds kept ({} relocations), final gradient norm {:.3e}",
        d.iterations, d.evaluations, d.escape_rounds, d.relocations, d.gradient_norm
    );
    match d.status {
        Some(LbfgsStatus::MaxIterations) => warn!("optimiser stopped at the iteration limit"),
        Some(LbfgsStatus::LineSearchFailed) => warn!("optimiser stopped after a failed line search"),
        _ => {}
    }
}

fn fit_solution(data: &Dataset, hyper: &Hyperparameters, config: RunConfig) -> CliResult<Solution> {
    let mut sol = slisemap::engine::fit(data, hyper)?;
    log_fit(&sol);
    let mut value = config.to_value();
    if let Some(norm) = data.normalisation() {
        value["normalisation"] = norm.to_json(data.feature_names(), data.target_name());
    }
    sol.run_config = Some(value);
    Ok(sol)
}

fn write_solution(sol: &Solution, path: &Path) -> CliResult<()> {
    create_parent(path)?;
    sol.write_json(path)?;
    info!("wrote {}", path.display());
    Ok(())
}

pub fn fit(args: &FitArgs, global: &GlobalArgs) -> CliResult<()> {
    let data = load(&args.data)?;
    let hyper = args.hyper.build(args.data.family, global.seed);
    let config = RunConfig::new("fit", global.seed, args)?.input("data", &args.data.data)?.hyperparameters(&hyper);
    let sol = fit_solution(&data, &hyper, config)?;
    write_solution(&sol, &args.out)?;
    if let Some(path) = &args.embedding_csv {
        create_parent(path)?;
        sol.write_embedding_csv(path)?;
    }
    if let Some(path) = &args.coefficients_csv {
        create_parent(path)?;
        sol.write_coefficients_csv(path)?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
struct EvaluationOutput {
    #[serde(flatten)]
    report: MetricReport,
    permutation_runs: Option<Vec<PermutationRun>>,
    stability_summary: Option<Vec<StabilitySummary>>,
    run_config: serde_json::Value,
}

fn permutation_seeds(seed: u64, count: usize) -> Vec<u64> {
    (0..count as u64).map(|k| derive_seed(seed, k)).collect()
}

pub fn evaluate(args: &EvaluateArgs, global: &GlobalArgs) -> CliResult<()> {
    let sol = Solution::read_json(&args.solution)?;
    let data = load_for_solution(&args.data.data, &args.data.target, args.data.delimiter, &args.data.ignore, &sol)?;
    let hyper = sol.hyperparameters;
    let quality = args.quality || (args.permutation.is_none() && args.stability.is_empty());
    let mut report = MetricReport { context: ReportContext { n: data.n(), ..Default::default() }, ..Default::default() };
    if quality {
        report = report.with_quality(&explanation_quality(&sol, &data, &args.quality_options.options())?);
    }
    let mut runs = None;
    if let Some(count) = args.permutation {
        let seeds = permutation_seeds(global.seed, count);
        let r = permutation_runs(&data, &hyper, &seeds)?;
        report.permutation_loss = Some(r.iter().map(|r| r.ratio).sum::<f64>() / r.len() as f64);
        report.context.seeds = seeds;
        runs = Some(r);
    }
    let mut summary = None;
    if !args.stability.is_empty() {
        let settings = ExperimentSettings {
            sizes: args.stability.clone(),
            repetitions: args.repetitions,
            seed: global.seed,
            ..Default::default()
        };
        let table = stability_experiment(&data, &hyper, &settings)?;
        let path = args.stability_out.clone().unwrap_or_else(|| args.out.with_extension("stability.csv"));
        create_parent(&path)?;
        table.write_csv(&path)?;
        info!("wrote {} experiment rows to {}", table.rows.len(), path.display());
        let s = table.summary();
        let largest = *args.stability.iter().max().expect("non-empty");
        let at = |metric: &str| s.iter().find(|r| r.size == largest && r.metric == metric).map(|r| r.mean);
        report.local_model_stability = at(slisemap::evaluation::LOCAL_MODEL_STABILITY);
        report.neighbourhood_stability = at(slisemap::evaluation::NEIGHBOURHOOD_STABILITY);
        if report.permutation_loss.is_none() {
            report.permutation_loss = at(slisemap::evaluation::PERMUTATION_LOSS);
        }
        for row in &s {
            info!(
                "size {:>5} {:<24} mean {:.4} (std {:.4}), baseline {:.4}, below baseline {}/{}",
                row.size, row.metric, row.mean, row.std, row.baseline_mean, row.below_baseline, row.repetitions
            );
        }
        summary = Some(s);
    }
    report.validate()?;
    let config = RunConfig::new("evaluate", global.seed, args)?
        .input("solution", &args.solution)?
        .input("data", &args.data.data)?
        .hyperparameters(&hyper);
    let output = EvaluationOutput {
        report,
        permutation_runs: runs,
        stability_summary: summary,
        run_config: config.to_value(),
    };
    write_json(&args.out, &output)?;
    info!("wrote {}", args.out.display());
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricCell {
    pub mean: f64,
    pub std: f64,
    pub best: bool,
    pub values: Vec<f64>,
}

impl MetricCell {
    fn new(values: Vec<f64>) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self { mean, std: var.sqrt(), best: false, values }
    }
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct MethodRow {
    pub method: String,
    pub local_loss: MetricCell,
    pub nn_local_loss: MetricCell,
    pub nn_coverage: MetricCell,
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
struct Comparison {
    sample_size: usize,
    repetitions: usize,
    methods: Vec<MethodRow>,
    run_config: serde_json::Value,
}

fn flag_best(rows: &mut [MethodRow]) {
    let pick = |rows: &[MethodRow], f: fn(&MethodRow) -> f64, lower: bool| -> Option<f64> {
        rows.iter().map(f).filter(|v| v.is_finite()).reduce(|a, b| if (b < a) == lower { b } else { a })
    };
    let best_local = pick(rows, |r| r.local_loss.mean, true);
    let best_nn = pick(rows, |r| r.nn_local_loss.mean, true);
    let best_cov = pick(rows, |r| r.nn_coverage.mean, false);
    for r in rows {
        r.local_loss.best = Some(r.local_loss.mean) == best_local;
        r.nn_local_loss.best = Some(r.nn_local_loss.mean) == best_nn;
        r.nn_coverage.best = Some(r.nn_coverage.mean) == best_cov;
    }
}

fn parse_external(spec: &str) -> CliResult<(String, PathBuf)> {
    match spec.split_once('=') {
        Some((label, path)) if !label.is_empty() && !path.is_empty() => Ok((label.to_string(), PathBuf::from(path))),
        _ => Err(CliError::Input(format!("--external expects LABEL=PATH, got `{spec}`"))),
    }
}

fn cell_text(c: &MetricCell) -> String {
    format!("{:.4} ± {:.4}{}", c.mean, c.std, if c.best { " *" } else { "" })
}

pub fn compare(args: &CompareArgs, global: &GlobalArgs) -> CliResult<()> {
    if !(args.fraction > 0.0 && args.fraction <= 1.0) {
        return Err(CliError::Input(format!("--fraction must be in (0, 1], got {}", args.fraction)));
    }
    if args.repetitions == 0 {
        return Err(CliError::Input("--repetitions must be at least 1".into()));
    }
    let data = load(&args.data)?;
    let hyper = args.hyper.build(args.data.family, global.seed);
    let options = args.quality_options.options();
    let mut config = RunConfig::new("compare", global.seed, args)?.input("data", &args.data.data)?.hyperparameters(&hyper);
    let mut externals = Vec::new();
    for spec in &args.externals {
        let (label, path) = parse_external(spec)?;
        let fixed = load_external_embedding(&path, &data, &label, (!args.no_rescale).then_some(hyper.radius))?;
        config = config.input(&format!("external:{label}"), &path)?;
        externals.push((label, fixed));
    }
    let size = ((args.fraction * data.n() as f64).floor() as usize).max(1);
    let scale = |e: FixedEmbedding| if args.no_rescale { Ok(e) } else { e.rescaled(hyper.radius) };
    let methods = 2 + externals.len();
    let mut results: Vec<[Vec<f64>; 3]> = vec![Default::default(); methods];
    for rep in 0..args.repetitions {
        let seed = derive_seed(global.seed, rep as u64);
        let (sample, _) = resample(&data, size, None, 0.0, seed)?;
        let hyper = hyper.with_seed(seed);
        let mut record = |method: usize, sol: &Solution| -> CliResult<()> {
            let q = explanation_quality(sol, &sample, &options)?;
            results[method][0].push(q.local_loss);
            results[method][1].push(q.nn_local_loss);
            results[method][2].push(q.nn_coverage);
            Ok(())
        };
        let sol = slisemap::engine::fit(&sample, &hyper)?;
        record(0, &sol)?;
        let pca = scale(pca_embed(&sample, hyper.dim)?)?;
        record(1, &fit_local_models_on_fixed_embedding(&sample, &pca, &hyper)?)?;
        for (e, (_, fixed)) in externals.iter().enumerate() {
            let rows = fixed.z.select(ndarray::Axis(0), sample.row_ids());
            let sub = scale(FixedEmbedding { z: rows, source: fixed.source.clone(), radius_normalised: false })?;
            record(2 + e, &fit_local_models_on_fixed_embedding(&sample, &sub, &hyper)?)?;
        }
        info!("resample {}/{} done", rep + 1, args.repetitions);
    }
    let names = ["slisemap".to_string(), "pca".to_string()]
        .into_iter()
        .chain(externals.iter().map(|(l, _)| l.clone()));
    let mut rows: Vec<MethodRow> = names
        .zip(results)
        .map(|(method, [a, b, c])| MethodRow {
            method,
            local_loss: MetricCell::new(a),
            nn_local_loss: MetricCell::new(b),
            nn_coverage: MetricCell::new(c),
        })
        .collect();
    flag_best(&mut rows);

    println!("{:<14} {:<22} {:<22} {:<22}", "method", "local loss", "nn local loss", "nn coverage");
    for r in &rows {
        println!(
            "{:<14} {:<22} {:<22} {:<22}",
            r.method,
            cell_text(&r.local_loss),
            cell_text(&r.nn_local_loss),
            cell_text(&r.nn_coverage)
        );
    }
    if let Some(path) = &args.csv {
        create_parent(path)?;
        let mut text = String::from("method,metric,mean,std,best\n");
        for r in &rows {
            for (metric, c) in [("localLoss", &r.local_loss), ("nnLocalLoss", &r.nn_local_loss), ("nnCoverage", &r.nn_coverage)] {
                text.push_str(&format!("{},{metric},{},{},{}\n", r.method, c.mean, c.std, c.best));
            }
        }
        fs::write(path, text)?;
    }
    let table = Comparison { sample_size: size, repetitions: args.repetitions, methods: rows, run_config: config.to_value() };
    write_json(&args.out, &table)?;
    info!("wrote {}", args.out.display());
    Ok(())
}

fn cluster_solution(sol: &Solution, k: usize, restarts: usize, seed: u64) -> CliResult<ClusterSummary> {
    if k > sol.n() {
        return Err(CliError::Input(format!("k = {k} exceeds the {} items in the solution", sol.n())));
    }
    let mut summary = kmeans_on_coefficients(sol.coefficients.view(), sol.coefficient_names.clone(), k, seed, restarts)?;
    summary.elbow = elbow(sol.coefficients.view(), k.saturating_sub(2).max(1)..=k + 2, seed, restarts)?;
    println!("k\tinertia");
    for (k, inertia) in &summary.elbow {
        println!("{k}\t{inertia:.6}");
    }
    Ok(summary)
}

fn write_clusters(summary: &ClusterSummary, out: &Path, table: &Path) -> CliResult<()> {
    create_parent(out)?;
    summary.write_json(out)?;
    create_parent(table)?;
    summary.write_coefficient_table(table)?;
    info!("wrote {} and {}", out.display(), table.display());
    Ok(())
}

pub fn cluster(args: &ClusterArgs, global: &GlobalArgs) -> CliResult<()> {
    let sol = Solution::read_json(&args.solution)?;
    let mut summary = cluster_solution(&sol, args.k as usize, args.restarts, global.seed)?;
    let mut config = RunConfig::new("cluster", global.seed, args)?.input("solution", &args.solution)?;
    if let (Some(path), Some(target)) = (&args.data, &args.target) {
        let data = load_for_solution(path, target, args.delimiter, &args.ignore, &sol)?;
        cluster_target_stats(&mut summary, &data)?;
        config = config.input("data", path)?;
    }
    summary.run_config = Some(config.to_value());
    let table = args.table.clone().unwrap_or_else(|| args.out.with_extension("csv"));
    write_clusters(&summary, &args.out, &table)
}

/// Draw the requested plots into `dir`, returning the written paths.
fn draw(
    sol: &Solution,
    clusters: Option<&ClusterSummary>,
    data: Option<&Dataset>,
    kinds: &[PlotKind],
    options: &PlotOptions,
    dir: &Path,
    metadata: &str,
) -> CliResult<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let clusters = clusters.filter(|c| !c.per_cluster.is_empty());
    if let Some(c) = clusters {
        if c.labels.len() != sol.n() {
            return Err(CliError::Input(format!(
                "cluster summary has {} labels but the solution has {} items",
                c.labels.len(),
                sol.n()
            )));
        }
    }
    let kinds: Vec<PlotKind> = if clusters.is_none() {
        warn!("no cluster summary given; drawing the scatter plot only");
        vec![PlotKind::Scatter]
    } else if kinds.is_empty() {
        vec![PlotKind::Scatter, PlotKind::Coefficients, PlotKind::Heatmap]
    } else {
        kinds.to_vec()
    };
    let mut written = Vec::new();
    for kind in kinds {
        let (name, svg) = match kind {
            PlotKind::Scatter => {
                ("embedding.svg", plot::scatter(sol.embedding.view(), clusters.map(|c| c.labels.as_slice()), options, metadata))
            }
            PlotKind::Coefficients => ("coefficients.svg", plot::coefficients(clusters.expect("clusters"), options, metadata)),
            PlotKind::Heatmap => {
                let Some(data) = data else {
                    warn!("the heat map needs --data and --target; skipped");
                    continue;
                };
                let values = data.raw_y();
                let grid = bin_embedding_medians(sol.embedding.view(), values.view(), options.grid_size)?;
                let lo = options.color_min.or(grid.min_median).unwrap_or(0.0);
                let hi = options.color_max.or(grid.max_median).unwrap_or(1.0);
                if hi < lo {
                    return Err(CliError::Input(format!("colour scale bounds are reversed: {lo} > {hi}")));
                }
                ("heatmap.svg", plot::heatmap(&grid, (lo, hi), data.target_name(), options, metadata))
            }
        };
        let path = dir.join(name);
        fs::write(&path, svg)?;
        info!("wrote {}", path.display());
        written.push(path);
    }
    Ok(written)
}

pub fn plot(args: &PlotArgs, global: &GlobalArgs) -> CliResult<()> {
    let sol = Solution::read_json(&args.solution)?;
    let mut config = RunConfig::new("plot", global.seed, args)?.input("solution", &args.solution)?;
    let clusters = match &args.clusters {
        Some(path) => {
            config = config.input("clusters", path)?;
            Some(ClusterSummary::read_json(path)?)
        }
        None => None,
    };
    let data = match (&args.data, &args.target) {
        (Some(path), Some(target)) => {
            config = config.input("data", path)?;
            Some(load_for_solution(path, target, args.delimiter, &args.ignore, &sol)?)
        }
        _ => None,
    };
    let metadata = serde_json::to_string(&config.to_value())?;
    draw(&sol, clusters.as_ref(), data.as_ref(), &args.kinds, &args.plot, &args.out, &metadata)?;
    Ok(())
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
struct Truth {
    labels: Vec<usize>,
    coefficients: Vec<Vec<f64>>,
    run_config: serde_json::Value,
}

pub fn synth(args: &SynthArgs, global: &GlobalArgs) -> CliResult<()> {
    let config = SynthConfig {
        n: args.n,
        m: args.m,
        regimes: args.regimes,
        noise: args.noise,
        x_separation: args.x_separation,
        coefficient_scale: args.coefficient_scale,
        family: ModelFamily::from(args.family),
        pure_noise: args.pure_noise,
        coefficients: None,
        seed: global.seed,
    };
    let generated = generate(&config)?;
    create_parent(&args.out)?;
    generated.dataset.write_csv(&args.out)?;
    info!("wrote {} rows to {}", generated.dataset.n(), args.out.display());
    if let Some(path) = &args.truth {
        let truth = Truth {
            labels: generated.labels,
            coefficients: generated.coefficients.rows().into_iter().map(|r| r.to_vec()).collect(),
            run_config: RunConfig::new("synth", global.seed, args)?.to_value(),
        };
        write_json(path, &truth)?;
    }
    Ok(())
}

pub fn pipeline(args: &PipelineArgs, global: &GlobalArgs) -> CliResult<()> {
    let data = load(&args.data)?;
    let hyper = args.hyper.build(args.data.family, global.seed);
    let config = RunConfig::new("pipeline", global.seed, args)?.input("data", &args.data.data)?.hyperparameters(&hyper);
    let dir = &args.out;
    fs::create_dir_all(dir)?;

    let sol = fit_solution(&data, &hyper, config.clone())?;
    write_solution(&sol, &dir.join("solution.json"))?;

    let mut summary = cluster_solution(&sol, args.k as usize, args.restarts, global.seed)?;
    cluster_target_stats(&mut summary, &data)?;
    summary.run_config = Some(config.to_value());
    write_clusters(&summary, &dir.join("clusters.json"), &dir.join("clusters.csv"))?;

    let metadata = serde_json::to_string(&config.to_value())?;
    draw(&sol, Some(&summary), Some(&data), &[], &args.plot, dir, &metadata)?;

    let quality = explanation_quality(&sol, &data, &args.quality_options.options())?;
    let mut report = MetricReport { context: ReportContext { n: data.n(), ..Default::default() }, ..Default::default() }
        .with_quality(&quality);
    let mut runs = None;
    if args.permutation > 0 {
        let seeds = permutation_seeds(global.seed, args.permutation);
        let r = permutation_runs(&data, &hyper, &seeds)?;
        report.permutation_loss = Some(r.iter().map(|r| r.ratio).sum::<f64>() / r.len() as f64);
        report.context.seeds = seeds;
        runs = Some(r);
    }
    report.validate()?;
    let output = EvaluationOutput { report, permutation_runs: runs, stability_summary: None, run_config: config.to_value() };
    write_json(&dir.join("metrics.json"), &output)?;
    info!(
        "local loss {:.4}, nn local loss {:.4}, nn coverage {:.3}",
        quality.local_loss, quality.nn_local_loss, quality.nn_coverage
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: &str, local: f64, nn: f64, cov: f64) -> MethodRow {
        MethodRow {
            method: method.into(),
            local_loss: MetricCell::new(vec![local]),
            nn_local_loss: MetricCell::new(vec![nn]),
            nn_coverage: MetricCell::new(vec![cov]),
        }
    }

    #[test]
    fn best_is_lowest_loss_and_highest_coverage() {
        let mut rows = vec![row("a", 0.1, 0.5, 0.9), row("b", 0.2, 0.4, 0.3)];
        flag_best(&mut rows);
        assert!(rows[0].local_loss.best && !rows[1].local_loss.best);
        assert!(!rows[0].nn_local_loss.best && rows[1].nn_local_loss.best);
        assert!(rows[0].nn_coverage.best && !rows[1].nn_coverage.best);
    }

    #[test]
    fn metric_cell_uses_sample_std() {
        let c = MetricCell::new(vec![1.0, 3.0]);
        assert_eq!(c.mean, 2.0);
        assert!((c.std - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn external_specs_need_label_and_path() {
        assert_eq!(parse_external("tsne=a.csv").unwrap(), ("tsne".into(), PathBuf::from("a.csv")));
        assert!(parse_external("a.csv").is_err());
        assert!(parse_external("=a.csv").is_err());
    }
}
