//! Subcommand implementations: JSON reports to disk, aligned tables to
//! stdout.

use crate::Command;
use anyhow::{anyhow, Context};
use mrhp_core::config::TrainConfig;
use mrhp_core::dataset::{generate_synthetic, load_dataset, save_dataset, SyntheticSpec};
use mrhp_core::harness::{
    distance_analysis, evaluate, load_checkpoint, save_checkpoint, significance_test, train,
    EvalOptions, EvalReport, HarnessError, LossReport, ProductEval,
};
use mrhp_core::verification::{end_to_end_check, op_suite, END_TO_END_TOL};
use std::fs;
use std::path::Path;

/// Validation errors (bad inputs) exit 1; runtime failures exit 2.
pub enum CliError {
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    pub fn inner(&self) -> &anyhow::Error {
        match self {
            CliError::Validation(e) | CliError::Runtime(e) => e,
        }
    }
}

fn validation(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Validation(e.into())
}

fn runtime(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Runtime(e.into())
}

/// Training failures are runtime, everything else about a harness call is a
/// bad-input problem.
fn classify(e: HarnessError) -> CliError {
    match e {
        HarnessError::Diverged { .. } | HarnessError::Tensor(_) | HarnessError::Io { .. } => {
            runtime(e)
        }
        _ => validation(e),
    }
}

pub fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Generate { config, out, seed } => generate(&config, &out, seed),
        Command::Train {
            config,
            data,
            out,
            seed,
        } => run_train(config.as_deref(), &data, &out, seed),
        Command::Eval {
            checkpoint,
            data,
            out,
            tau,
        } => run_eval(&checkpoint, &data, out.as_deref(), tau),
        Command::Gradcheck {
            seed,
            points,
            corrupt,
        } => run_gradcheck(seed.unwrap_or(17), points, corrupt.as_deref()),
        Command::Sigtest {
            a,
            b,
            metric,
            out,
            resamples,
            seed,
        } => run_sigtest(&a, &b, &metric, out.as_deref(), resamples, seed),
        Command::Distances {
            checkpoint,
            data,
            out,
            groups,
        } => run_distances(&checkpoint, &data, out.as_deref(), groups.as_deref()),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<T, CliError> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {what} {}", path.display()))
        .map_err(validation)?;
    serde_json::from_str(&text)
        .with_context(|| format!("parsing {what} {}", path.display()))
        .map_err(validation)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)
                .with_context(|| format!("creating {}", parent.display()))
                .map_err(runtime)?;
        }
    }
    let json = serde_json::to_string_pretty(value).expect("report serializes");
    fs::write(path, json)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(runtime)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn generate(config: &Path, out: &Path, seed: Option<u64>) -> Result<(), CliError> {
    let mut spec: SyntheticSpec = read_json(config, "synthetic spec")?;
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    let dataset = generate_synthetic(&spec).map_err(validation)?;
    let manifest = save_dataset(&dataset, out).map_err(runtime)?;

    let mut label_counts = [0usize; 5];
    for product in &dataset.products {
        for review in &product.reviews {
            label_counts[review.label as usize] += 1;
        }
    }
    println!("generated {}", manifest.display());
    println!(
        "  products {}  reviews {}  vocab {}  feature_dim {}  seed {}",
        dataset.products.len(),
        dataset.total_reviews(),
        dataset.vocab_size,
        dataset.feature_dim,
        spec.seed
    );
    println!(
        "  labels 0..4: {} {} {} {} {}",
        label_counts[0], label_counts[1], label_counts[2], label_counts[3], label_counts[4]
    );
    Ok(())
}

fn epoch_rows(losses: &[LossReport]) -> Vec<(usize, usize, f64, f64, f64)> {
    let mut rows = Vec::new();
    let max_epoch = losses.iter().map(|l| l.epoch).max();
    let Some(max_epoch) = max_epoch else {
        return rows;
    };
    for epoch in 0..=max_epoch {
        let batch: Vec<&LossReport> = losses.iter().filter(|l| l.epoch == epoch).collect();
        if batch.is_empty() {
            continue;
        }
        let n = batch.len() as f64;
        rows.push((
            epoch,
            batch.len(),
            batch.iter().map(|l| l.ranking).sum::<f64>() / n,
            batch.iter().map(|l| l.contrastive).sum::<f64>() / n,
            batch.iter().map(|l| l.total).sum::<f64>() / n,
        ));
    }
    rows
}

fn run_train(
    config: Option<&Path>,
    data: &Path,
    out: &Path,
    seed: Option<u64>,
) -> Result<(), CliError> {
    let mut config: TrainConfig = match config {
        Some(path) => read_json(path, "train config")?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = seed {
        config.seed = seed;
    }
    let dataset = load_dataset(data).map_err(validation)?;
    log::info!(
        "training on {} products / {} reviews, seed {}",
        dataset.products.len(),
        dataset.total_reviews(),
        config.seed
    );
    let started = std::time::Instant::now();
    let outcome = train(&config, &dataset).map_err(classify)?;
    log::info!("trained {} steps in {:?}", outcome.step, started.elapsed());

    fs::create_dir_all(out)
        .with_context(|| format!("creating {}", out.display()))
        .map_err(runtime)?;
    let ckpt = out.join("model.ckpt");
    save_checkpoint(&outcome.model, outcome.step, &ckpt).map_err(classify)?;
    println!("wrote {}", ckpt.display());
    write_json(&out.join("losses.json"), &outcome.losses)?;

    println!("epoch  batches  ranking     contrastive  total");
    for (epoch, batches, ranking, contrastive, total) in epoch_rows(&outcome.losses) {
        println!("{epoch:>5}  {batches:>7}  {ranking:>10.4}  {contrastive:>11.4}  {total:>10.4}");
    }
    Ok(())
}

fn run_eval(
    checkpoint: &Path,
    data: &Path,
    out: Option<&Path>,
    tau: Option<u8>,
) -> Result<(), CliError> {
    let (model, step) = load_checkpoint(checkpoint).map_err(validation)?;
    let dataset = load_dataset(data).map_err(validation)?;
    let opts = EvalOptions {
        tau: tau.unwrap_or(model.config.helpful_threshold),
        ..EvalOptions::default()
    };
    let report = evaluate(&model, &dataset, &opts).map_err(classify)?;
    print_eval(&report, step);
    if let Some(out) = out {
        write_json(out, &report)?;
    }
    Ok(())
}

fn print_eval(report: &EvalReport, step: u64) {
    println!(
        "checkpoint step {step}, τ = {}, gain = {:?}",
        report.tau, report.gain
    );
    println!("MAP     {:.4}", report.map);
    println!("NDCG@3  {:.4}", report.ndcg3);
    println!("NDCG@5  {:.4}", report.ndcg5);
    println!(
        "products {}  reviews {}  skipped (no relevant) {}",
        report.counts.products, report.counts.reviews, report.counts.skipped_no_relevant
    );
}

fn run_gradcheck(seed: u64, points: usize, corrupt: Option<&str>) -> Result<(), CliError> {
    let corruption = corrupt.map(|op| (op, 1.25));
    let results = op_suite(points, corruption)
        .map_err(|e| runtime(anyhow!("op suite failed to evaluate: {e}")))?;
    println!("op                 points   max rel err   status");
    let mut all_ok = true;
    for check in &results {
        let status = if check.passed() { "ok" } else { "FAIL" };
        all_ok &= check.passed();
        println!(
            "{:<18} {:>6}   {:>11.3e}   {status}",
            check.name, check.points, check.max_rel_err
        );
    }
    let (err, worst) = end_to_end_check(seed)
        .map_err(|e| runtime(anyhow!("end-to-end check failed to evaluate: {e}")))?;
    let e2e_ok = err <= END_TO_END_TOL;
    all_ok &= e2e_ok;
    println!(
        "end-to-end         {:>6}   {:>11.3e}   {}",
        "-",
        err,
        if e2e_ok { "ok" } else { "FAIL" }
    );
    if !e2e_ok {
        println!("worst parameter: {worst}");
    }
    if all_ok {
        println!("gradient verification passed");
        Ok(())
    } else {
        Err(runtime(anyhow!("gradient verification failed")))
    }
}

/// Paired per-product metric values, keyed by product id and aligned across
/// the two reports.
fn paired_metric(a: &EvalReport, b: &EvalReport, metric: &str) -> Result<(Vec<f64>, Vec<f64>), CliError> {
    let pick = |p: &ProductEval| -> Option<f64> {
        match metric {
            "MAP" => p.average_precision,
            "NDCG@3" => Some(p.ndcg3),
            "NDCG@5" => Some(p.ndcg5),
            _ => None,
        }
    };
    if !matches!(metric, "MAP" | "NDCG@3" | "NDCG@5") {
        return Err(validation(anyhow!(
            "unknown metric {metric}; expected MAP, NDCG@3, or NDCG@5"
        )));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for pa in &a.per_product {
        let Some(pb) = b.per_product.iter().find(|p| p.product_id == pa.product_id) else {
            continue;
        };
        if let (Some(x), Some(y)) = (pick(pa), pick(pb)) {
            xs.push(x);
            ys.push(y);
        }
    }
    Ok((xs, ys))
}

fn run_sigtest(
    a: &Path,
    b: &Path,
    metric: &str,
    out: Option<&Path>,
    resamples: usize,
    seed: u64,
) -> Result<(), CliError> {
    let report_a: EvalReport = read_json(a, "eval report")?;
    let report_b: EvalReport = read_json(b, "eval report")?;
    let (xs, ys) = paired_metric(&report_a, &report_b, metric)?;
    let result = significance_test(&xs, &ys, metric, resamples, seed).map_err(classify)?;
    println!(
        "{} over {} paired products ({}):",
        result.metric,
        xs.len(),
        result.method
    );
    println!("  mean A {:.4}  mean B {:.4}  diff {:+.4}", result.mean_a, result.mean_b, result.mean_diff);
    println!("  p = {:.6}  ({} resamples, seed {})", result.p_value, result.n_resamples, result.seed);
    if let Some(out) = out {
        write_json(out, &result)?;
    }
    Ok(())
}

fn parse_groups(groups: Option<&str>) -> Result<Vec<u8>, CliError> {
    match groups {
        None => Ok(vec![0, 1, 2, 3, 4]),
        Some(text) => text
            .split(',')
            .map(|part| {
                part.trim()
                    .parse::<u8>()
                    .ok()
                    .filter(|&l| l <= 4)
                    .ok_or_else(|| validation(anyhow!("bad label group {part:?}; labels are 0..=4")))
            })
            .collect(),
    }
}

fn run_distances(
    checkpoint: &Path,
    data: &Path,
    out: Option<&Path>,
    groups: Option<&str>,
) -> Result<(), CliError> {
    let (model, _) = load_checkpoint(checkpoint).map_err(validation)?;
    let dataset = load_dataset(data).map_err(validation)?;
    let labels = parse_groups(groups)?;
    let report = distance_analysis(&model, &dataset, &labels).map_err(classify)?;
    println!("label  samples  relation      CS mean ± std        L2 mean ± std");
    for group in &report.groups {
        for (name, stat) in [
            ("intra-modal", &group.intra_modal),
            ("inter-modal", &group.inter_modal),
            ("intra-review", &group.intra_review),
        ] {
            println!(
                "{:>5}  {:>7}  {:<12}  {:>7.4} ± {:<7.4}  {:>8.4} ± {:<8.4}",
                group.label, group.samples, name, stat.cs_mean, stat.cs_std, stat.l2_mean, stat.l2_std
            );
        }
    }
    if let Some(out) = out {
        write_json(out, &report)?;
    }
    Ok(())
}
