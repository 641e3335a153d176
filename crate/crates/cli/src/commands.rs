use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mogge_core::io::{self, fmt_f64};
use mogge_core::metrics::match_by_distance;
use mogge_core::path::path_rows;
use mogge_core::select::{bic_value, select_row};
use mogge_core::simulate::reference_scenario;
use mogge_core::*;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::Layered;
use crate::output::{display, replicate_dirs, require_files, write_manifest, Manifest, OutDir};
use crate::{CaArgs, Cli, Command, EmArgs, EvaluateArgs, FitArgs, PathArgs, SelectArgs, SimulateArgs};

const DEFAULT_OUT_DIR: &str = "out";
const MAX_PENALTY: usize = 25;
const DEFAULT_PATH_STEPS: usize = 20;

struct Run {
    cfg: Layered,
    /// Seed given by flag or config, if any.
    explicit_seed: Option<u64>,
    seed: u64,
    out: OutDir,
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = Layered::load(cli.config.as_deref(), cli.command.name())?;
    let explicit_seed = cfg.get(cli.seed, "seed")?;
    let jobs: usize = cfg.or(cli.jobs, "jobs", 0)?;
    if jobs > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global().context("configuring worker threads")?;
    }
    let out_dir: PathBuf = cfg.or(cli.out_dir, "out_dir", PathBuf::from(DEFAULT_OUT_DIR))?;
    // Inputs are validated before the output directory is touched.
    let ctx = |cfg: Layered| -> Result<Run> {
        Ok(Run { cfg, explicit_seed, seed: explicit_seed.unwrap_or(0), out: OutDir::create(&out_dir)? })
    };
    match cli.command {
        Command::Simulate(args) => simulate(cfg, ctx, args),
        Command::Fit(args) => fit(cfg, ctx, args),
        Command::Select(args) => select(cfg, ctx, args),
        Command::LassoPath(args) => lasso_path_cmd(cfg, ctx, args),
        Command::Evaluate(args) => evaluate(cfg, ctx, args),
    }
}

fn fit_options(cfg: &Layered, em: EmArgs, seed: u64, gating_cov: CovarianceKind) -> Result<FitOptions> {
    let d = FitOptions::default();
    let opts = FitOptions {
        max_iter: cfg.or(em.max_iter, "max_iter", d.max_iter)?,
        tol: cfg.or(em.tol, "tol", d.tol)?,
        n_starts: cfg.or(em.n_starts, "n_starts", d.n_starts)?,
        seed,
        init_strategy: cfg.or(em.init, "init", d.init_strategy)?,
        gating_cov,
    };
    opts.validate()?;
    Ok(opts)
}

fn penalty_config(cfg: &Layered, ca: CaArgs, lambda: f64, gamma: f64) -> Result<PenaltyConfig> {
    let d = PenaltyConfig::default();
    let penalty = PenaltyConfig {
        lambda,
        gamma,
        ca_max_iter: cfg.or(ca.ca_max_iter, "ca_max_iter", d.ca_max_iter)?,
        ca_tol: cfg.or(ca.ca_tol, "ca_tol", d.ca_tol)?,
    };
    penalty.validate()?;
    Ok(penalty)
}

fn read_data(path: &Path) -> Result<(DataSet, Option<Vec<usize>>)> {
    io::read_dataset_csv(path).with_context(|| format!("reading {}", path.display()))
}

/// Collects per-input outcomes; failures are listed in the manifest and
/// turn into a nonzero exit.
fn finish(ctx: Run, manifest: Manifest, outcomes: Vec<Result<()>>, inputs: &[PathBuf]) -> Result<()> {
    let failures: Vec<String> = outcomes
        .into_iter()
        .zip(inputs)
        .filter_map(|(r, p)| r.err().map(|e| format!("{}: {e:#}", p.display())))
        .collect();
    for f in &failures {
        eprintln!("failed: {f}");
    }
    let count = failures.len();
    write_manifest(&ctx.out, Manifest { failures, ..manifest })?;
    if count > 0 {
        bail!("{count} of {} inputs failed", inputs.len());
    }
    Ok(())
}

fn simulate(cfg: Layered, ctx: impl FnOnce(Layered) -> Result<Run>, args: SimulateArgs) -> Result<()> {
    let replicates: usize = cfg.or(args.replicates, "replicates", 1)?;
    if replicates == 0 {
        bail!("--replicates must be at least 1");
    }
    let built_in = cfg.switch(args.paper_scenario, "paper_scenario")?;
    let scenario_file: Option<PathBuf> = cfg.get(args.scenario, "scenario")?;
    let convention: InterceptConvention = cfg.or(args.intercept_convention, "intercept_convention", Default::default())?;
    let size: Option<usize> = cfg.get(args.n, "n")?;
    let ctx = ctx(cfg)?;
    let mut scenario = match (built_in, &scenario_file) {
        (true, None) => reference_scenario(convention, ctx.seed),
        (false, Some(path)) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let mut s = io::scenario_from_json(&text).with_context(|| format!("invalid scenario {}", path.display()))?;
            if let Some(seed) = ctx.explicit_seed {
                s.seed = seed;
            }
            s
        }
        (true, Some(_)) => bail!("--paper-scenario and --scenario are mutually exclusive"),
        (false, None) => bail!("give --paper-scenario or --scenario FILE"),
    };
    if let Some(n) = size {
        scenario.n = n;
    }

    let width = replicates.to_string().len().max(3);
    let names: Vec<String> = (1..=replicates).map(|r| format!("replicate_{r:0width$}.csv")).collect();
    names
        .par_iter()
        .enumerate()
        .map(|(r, name)| {
            let (data, labels) = sample_replicate(&scenario, r as u64)?;
            ctx.out.write(Path::new(name), &io::dataset_csv(&data, Some(&labels))?)
        })
        .collect::<Result<Vec<()>>>()?;
    ctx.out.write(Path::new("scenario.json"), (io::scenario_to_json(&scenario)? + "\n").as_bytes())?;

    let config = json!({
        "scenario": scenario_file.as_ref().map(|p| p.display().to_string()).unwrap_or_else(|| "built-in".into()),
        "intercept_convention": scenario.intercept_convention,
        "n": scenario.n,
        "replicates": replicates,
        "streams": "replicate r (1-based) draws from stream r - 1 of the scenario seed",
    });
    println!("wrote {replicates} replicate(s) of n = {} to {}", scenario.n, ctx_out(&ctx));
    write_manifest(
        &ctx.out,
        Manifest {
            command: "simulate",
            version: env!("CARGO_PKG_VERSION"),
            seed: scenario.seed,
            config,
            inputs: scenario_file.iter().map(|p| p.display().to_string()).collect(),
            outputs: vec![],
            failures: vec![],
        },
    )
}

fn ctx_out(ctx: &Run) -> String {
    ctx.out.root().display().to_string()
}

#[derive(Serialize)]
struct FitSummary {
    data: String,
    method: &'static str,
    k: usize,
    lambda: f64,
    gamma: f64,
    converged: bool,
    n_iter: usize,
    objective: f64,
    loglik: f64,
    df: Option<usize>,
    bic: Option<f64>,
}

fn fit(cfg: Layered, ctx: impl FnOnce(Layered) -> Result<Run>, args: FitArgs) -> Result<()> {
    let inputs: Vec<PathBuf> = cfg.list(args.data, "data")?.unwrap_or_default();
    require_files(&inputs, "data file")?;
    let k: usize = cfg.get(args.k, "k")?.context("--k is required")?;
    let lambda: Option<f64> = cfg.get(args.lambda, "lambda")?;
    let gamma: Option<f64> = cfg.get(args.gamma, "gamma")?;
    let penalized = lambda.is_some() || gamma.is_some();
    let requested_cov: Option<CovarianceKind> = cfg.get(args.gating_cov, "gating_cov")?;
    let gating_cov = match (penalized, requested_cov) {
        (true, Some(CovarianceKind::Full)) => bail!("EM-Lasso requires --gating-cov diagonal"),
        (true, _) => CovarianceKind::Diagonal,
        (false, c) => c.unwrap_or_default(),
    };
    let (lambda, gamma) = (lambda.unwrap_or(0.0), gamma.unwrap_or(0.0));
    let ctx = ctx(cfg)?;
    let opts = fit_options(&ctx.cfg, args.em, ctx.seed, gating_cov)?;
    let penalty = penalty_config(&ctx.cfg, args.ca, lambda, gamma)?;
    let dirs = replicate_dirs(&inputs)?;

    let outcomes: Vec<Result<()>> = inputs
        .par_iter()
        .zip(&dirs)
        .map(|(input, dir)| -> Result<()> {
            let (data, _) = read_data(input)?;
            let result = if penalized {
                fit_em_lasso(&data, k, &penalty, &opts)?
            } else {
                fit_em(&data, k, &opts)?
            };
            let loglik = joint_loglik(&data, &result.params)?;
            let df = (result.params.has_diagonal_gating() && data.d() == 1).then(|| count_df(&result.params)).transpose()?;
            let summary = FitSummary {
                data: input.display().to_string(),
                method: if penalized { "em-lasso" } else { "em" },
                k,
                lambda,
                gamma,
                converged: result.converged,
                n_iter: result.n_iter,
                objective: result.objective,
                loglik,
                df,
                bic: df.map(|df| bic_value(loglik, df, data.n())),
            };
            ctx.out.write(&dir.join("params.json"), (io::params_to_json(&result.params)? + "\n").as_bytes())?;
            ctx.out.write(&dir.join("trace.csv"), &io::trace_csv(&result.loglik_trace)?)?;
            ctx.out.write_json(&dir.join("summary.json"), &summary)?;
            println!(
                "{}: {} after {} iterations, objective {}",
                input.display(),
                if result.converged { "converged" } else { "stopped" },
                result.n_iter,
                fmt_f64(result.objective)
            );
            Ok(())
        })
        .collect();

    let config = json!({
        "k": k,
        "method": if penalized { "em-lasso" } else { "em" },
        "lambda": lambda,
        "gamma": gamma,
        "fit": opts,
        "ca_max_iter": penalty.ca_max_iter,
        "ca_tol": penalty.ca_tol,
    });
    let manifest = manifest("fit", ctx.seed, config, &inputs);
    finish(ctx, manifest, outcomes, &inputs)
}

fn manifest(command: &'static str, seed: u64, config: Value, inputs: &[PathBuf]) -> Manifest {
    Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        seed,
        config,
        inputs: display(inputs),
        outputs: vec![],
        failures: vec![],
    }
}

fn default_penalties() -> Vec<f64> {
    (0..=MAX_PENALTY).map(|v| v as f64).collect()
}

fn select(cfg: Layered, ctx: impl FnOnce(Layered) -> Result<Run>, args: SelectArgs) -> Result<()> {
    let inputs: Vec<PathBuf> = cfg.list(args.data, "data")?.unwrap_or_default();
    require_files(&inputs, "data file")?;
    let grid = GridSpec::new(
        cfg.list(args.ks, "ks")?.unwrap_or_else(|| vec![2]),
        cfg.list(args.lambdas, "lambdas")?.unwrap_or_else(default_penalties),
        cfg.list(args.gammas, "gammas")?.unwrap_or_else(default_penalties),
    )?;
    let warm_start = !cfg.switch(args.no_warm_start, "no_warm_start")?;
    let ctx = ctx(cfg)?;
    let fit = fit_options(&ctx.cfg, args.em, ctx.seed, CovarianceKind::Diagonal)?;
    let ca = penalty_config(&ctx.cfg, args.ca, 0.0, 0.0)?;
    let search = SearchOptions { fit, ca_max_iter: ca.ca_max_iter, ca_tol: ca.ca_tol, warm_start };
    let dirs = replicate_dirs(&inputs)?;

    // Replicates run one after another; each grid search parallelizes over K and starts.
    let outcomes: Vec<Result<()>> = inputs
        .iter()
        .zip(&dirs)
        .map(|(input, dir)| -> Result<()> {
            let (data, _) = read_data(input)?;
            let rows = grid_rows(&data, &grid, &search)?;
            let selected = select_row(&rows);
            ctx.out.write(&dir.join("selection.csv"), &io::selection_csv(&rows, selected)?)?;
            let Some(best) = selected.map(|i| &rows[i]) else {
                bail!("none of the {} grid points converged; see selection.csv", rows.len());
            };
            let fit = best.fit.as_ref().expect("selected rows carry their fit");
            ctx.out.write(&dir.join("best_params.json"), (io::params_to_json(&fit.params)? + "\n").as_bytes())?;
            ctx.out.write(&dir.join("best_trace.csv"), &io::trace_csv(&fit.loglik_trace)?)?;
            ctx.out.write_json(
                &dir.join("summary.json"),
                &json!({
                    "data": input.display().to_string(),
                    "k": best.k,
                    "lambda": best.lambda,
                    "gamma": best.gamma,
                    "loglik": best.loglik,
                    "df": best.df,
                    "bic": best.bic,
                    "grid_points": rows.len(),
                    "converged_points": rows.iter().filter(|r| r.converged).count(),
                }),
            )?;
            println!(
                "{}: selected K = {}, lambda = {}, gamma = {} (BIC {})",
                input.display(),
                best.k,
                fmt_f64(best.lambda),
                fmt_f64(best.gamma),
                fmt_f64(best.bic)
            );
            Ok(())
        })
        .collect();

    let config = json!({ "grid": grid, "search": {
        "fit": search.fit, "ca_max_iter": search.ca_max_iter, "ca_tol": search.ca_tol, "warm_start": search.warm_start,
    }});
    let manifest = manifest("select", ctx.seed, config, &inputs);
    finish(ctx, manifest, outcomes, &inputs)
}

fn lasso_path_cmd(cfg: Layered, ctx: impl FnOnce(Layered) -> Result<Run>, args: PathArgs) -> Result<()> {
    let input: PathBuf = cfg.get(args.data, "data")?.context("--data is required")?;
    require_files(std::slice::from_ref(&input), "data file")?;
    let k: usize = cfg.get(args.k, "k")?.context("--k is required")?;
    let blocks: PathBlocks = cfg.or(args.blocks, "blocks", PathBlocks::Both)?;
    let values: Option<Vec<f64>> = cfg.list(args.values, "values")?;
    let ratios: Option<Vec<f64>> = cfg.list(args.ratios, "ratios")?;
    if values.is_some() && ratios.is_some() {
        bail!("give either penalty values or ratios, not both");
    }
    if ratios.iter().flatten().any(|r| !(0.0..=1.0).contains(r)) {
        bail!("ratios must lie in [0, 1]");
    }
    let ctx = ctx(cfg)?;
    let fit = fit_options(&ctx.cfg, args.em, ctx.seed, CovarianceKind::Diagonal)?;
    let ca = penalty_config(&ctx.cfg, args.ca, 0.0, 0.0)?;
    let search = SearchOptions { fit, ca_max_iter: ca.ca_max_iter, ca_tol: ca.ca_tol, warm_start: true };
    let (data, _) = read_data(&input)?;

    let (values, full) = match values {
        Some(v) => (v, None),
        None => {
            let full = full_shrinkage_penalty(&data, k, blocks, &search)?;
            let ratios = ratios.unwrap_or_else(|| {
                (0..=DEFAULT_PATH_STEPS).map(|i| i as f64 / DEFAULT_PATH_STEPS as f64).collect()
            });
            (ratios.iter().map(|r| r * full).collect(), Some(full))
        }
    };
    let points = lasso_path(&data, k, &values, blocks, &search)?;
    let rows = path_rows(&points);
    ctx.out.write(Path::new("path.csv"), &io::path_csv(&rows)?)?;
    println!(
        "{}: {} penalty values from {} down to {}",
        input.display(),
        points.len(),
        fmt_f64(points.first().map_or(0.0, |p| p.value)),
        fmt_f64(points.last().map_or(0.0, |p| p.value))
    );

    let config = json!({
        "k": k,
        "blocks": blocks,
        "values": points.iter().map(|p| p.value).collect::<Vec<_>>(),
        "full_shrinkage_penalty": full,
        "converged": points.iter().map(|p| p.fit.converged).collect::<Vec<_>>(),
        "search": { "fit": search.fit, "ca_max_iter": search.ca_max_iter, "ca_tol": search.ca_tol },
    });
    write_manifest(&ctx.out, manifest("lasso_path", ctx.seed, config, std::slice::from_ref(&input)))
}

#[derive(Serialize)]
struct ReplicateMetrics {
    data: String,
    params: String,
    classification_rate: Option<f64>,
    ari: Option<f64>,
    sparsity: Option<SparsityReport>,
}

fn read_truth(path: &Path) -> Result<MoggeParams> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    io::params_from_json(&text)
        .or_else(|_| io::scenario_from_json(&text).map(|s| s.true_params))
        .with_context(|| format!("{} is neither a parameter nor a scenario file", path.display()))
}

fn evaluate_one(
    data_path: &Path,
    params_path: &Path,
    truth: Option<&MoggeParams>,
    warnings: &mut Vec<String>,
) -> Result<ReplicateMetrics> {
    let (data, labels) = read_data(data_path)?;
    let params = io::read_params(params_path).with_context(|| format!("reading {}", params_path.display()))?;
    params.check_data(&data)?;
    let estimated = bayes_labels(&data, &params)?;
    let mut record = ReplicateMetrics {
        data: data_path.display().to_string(),
        params: params_path.display().to_string(),
        classification_rate: None,
        ari: None,
        sparsity: None,
    };
    let mut perm = None;
    match &labels {
        Some(labels) => {
            let k = params.k().max(labels.iter().copied().max().unwrap_or(1));
            let (rate, p) = best_permutation(labels, &estimated, k)?;
            record.classification_rate = Some(rate);
            record.ari = Some(adjusted_rand_index(labels, &estimated)?);
            if k == params.k() {
                perm = Some(p);
            }
        }
        None => warnings.push(format!(
            "{}: no label column; classification rate and ARI skipped",
            data_path.display()
        )),
    }
    if let Some(truth) = truth {
        if truth.k() == params.k() && truth.p() == params.p() && truth.d() == 1 && params.d() == 1 {
            let perm = match perm {
                Some(p) => p,
                None => match_by_distance(truth, &params)?,
            };
            record.sparsity = Some(sensitivity_specificity(truth, &params, &perm)?);
        } else {
            warnings.push(format!("{}: shape differs from the true parameters; sparsity skipped", params_path.display()));
        }
    }
    Ok(record)
}

fn mean_sd<I: IntoIterator<Item = Option<f64>>>(values: I) -> Option<MeanSd> {
    MeanSd::of(&values.into_iter().flatten().collect::<Vec<_>>())
}

fn cell(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn evaluate(cfg: Layered, ctx: impl FnOnce(Layered) -> Result<Run>, args: EvaluateArgs) -> Result<()> {
    let data: Vec<PathBuf> = cfg.list(args.data, "data")?.unwrap_or_default();
    let params: Vec<PathBuf> = cfg.list(args.params, "params")?.unwrap_or_default();
    require_files(&data, "data file")?;
    require_files(&params, "parameter file")?;
    if data.len() != params.len() {
        bail!("{} data files but {} parameter files", data.len(), params.len());
    }
    let truth_path: Option<PathBuf> = cfg.get(args.true_params, "true_params")?;
    let truth = truth_path.as_deref().map(read_truth).transpose()?;
    let ctx = ctx(cfg)?;

    let mut warnings = Vec::new();
    let records: Vec<ReplicateMetrics> = data
        .iter()
        .zip(&params)
        .map(|(d, p)| evaluate_one(d, p, truth.as_ref(), &mut warnings))
        .collect::<Result<_>>()?;

    let blocks = truth.as_ref().map_or(0, |t| t.k());
    let block_name = |b: usize| if b < blocks { format!("expert_{}", b + 1) } else { "gate".to_string() };
    let block_of = |r: &ReplicateMetrics, b: usize| {
        r.sparsity.as_ref().map(|s| if b < blocks { s.experts[b] } else { *s.gate() })
    };
    let mut sensitivity = serde_json::Map::new();
    let mut specificity = serde_json::Map::new();
    if truth.is_some() {
        for b in 0..=blocks {
            sensitivity.insert(block_name(b), json!(mean_sd(records.iter().map(|r| block_of(r, b).and_then(|s| s.sensitivity)))));
            specificity.insert(block_name(b), json!(mean_sd(records.iter().map(|r| block_of(r, b).and_then(|s| s.specificity)))));
        }
    }
    let rate = mean_sd(records.iter().map(|r| r.classification_rate));
    let ari = mean_sd(records.iter().map(|r| r.ari));
    let aggregate = json!({
        "classification_rate": rate,
        "ari": ari,
        "sensitivity": sensitivity,
        "specificity": specificity,
    });
    ctx.out.write_json(
        Path::new("metrics.json"),
        &json!({ "replicates": records, "aggregate": aggregate, "warnings": warnings }),
    )?;

    let mut header = vec!["data".to_string(), "params".into(), "classification_rate".into(), "ari".into()];
    if truth.is_some() {
        for b in 0..=blocks {
            header.push(format!("s1_{}", block_name(b)));
            header.push(format!("s2_{}", block_name(b)));
        }
    }
    let mut table = Vec::new();
    for r in &records {
        let mut row = vec![r.data.clone(), r.params.clone(), cell(r.classification_rate), cell(r.ari)];
        if truth.is_some() {
            for b in 0..=blocks {
                let score = block_of(r, b);
                row.push(cell(score.and_then(|s| s.sensitivity)));
                row.push(cell(score.and_then(|s| s.specificity)));
            }
        }
        table.push(row);
    }
    ctx.out.write(Path::new("metrics.csv"), &io::csv_table(&header, table)?)?;

    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let pct = |m: Option<MeanSd>| m.map_or("n/a".to_string(), |m| format!("{:.2}% ({:.3}%)", 100.0 * m.mean, 100.0 * m.sd));
    println!("classification rate {}, ARI {} over {} replicate(s)", pct(rate), pct(ari), records.len());

    let config = json!({ "params": display(&params), "true_params": truth_path.map(|p| p.display().to_string()) });
    write_manifest(&ctx.out, manifest("evaluate", ctx.seed, config, &data))
}
