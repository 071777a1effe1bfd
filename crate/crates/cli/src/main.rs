//! `deepsta`: generate scenarios, embed road districts, train and evaluate
//! models, and run the baseline, ablation and sweep experiments.
//!
//! Exit codes: 0 success, 1 other failure, 2 invalid configuration,
//! 3 missing artifact or unreachable districts, 4 numeric divergence.

mod manifest;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use deepsta::autodiff::checkpoint;
use deepsta::config::RunConfig;
use deepsta::graphs::build_district_graph;
use deepsta::model::DeepSta;
use deepsta::node2vec::{embed, DistrictEmbedding};
use deepsta::scenario::{
    export_panel, generate, import_panel, prepare, Panel, Split, CENTROIDS_FILE, PANEL_FILE, ROAD_EDGES_FILE,
    ROAD_NODES_FILE, SCHEMA_FILE,
};
use deepsta::training::{
    ablation_csv, evaluate, mean_metrics, run_ablations, run_seeds, sweep, sweep_csv, train_seeds, ExperimentConfig,
    MetricsReport, SweepParam, TrainingData,
};
use deepsta::{Error, ParamStore, Result};
use manifest::Run;

/// Resolved configuration saved next to generated data.
const CONFIG_FILE: &str = "config.cfg";
const NORM_FILE: &str = "norm_stats.json";
const EMBEDDING_CSV: &str = "embedding.csv";
const EMBEDDING_BIN: &str = "embedding.bin";
const RESULTS_ENV: &str = "DEEPSTA_RESULTS";

#[derive(Parser)]
#[command(name = "deepsta", version, about = "Courier timely-rate forecasting experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Flat `key = value` file; applied over the data directory's saved config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set train.epochs=20`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Directory written by `gen`.
    #[arg(long, default_value = "data")]
    data: PathBuf,
    /// District embedding CSV [default: <data>/embedding.csv].
    #[arg(long)]
    embedding: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Results directory [default: $DEEPSTA_RESULTS, else ./results].
    #[arg(long)]
    out: Option<PathBuf>,
    /// A seed count (`5` runs train.seed..train.seed+4) or a list (`0,3,7`).
    #[arg(long, default_value = "1")]
    seeds: String,
    /// Runs trained in parallel.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic panel with road network and normalization stats.
    Gen {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Embed the road districts with node2vec.
    Embed {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value = "data")]
        data: PathBuf,
        /// Output directory [default: the data directory].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one model per seed and write checkpoints plus a summary.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Score a checkpoint on one split.
    Eval {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Moving average, persistence, linear regression and plain LSTM.
    Baseline {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        run: RunArgs,
    },
    /// The full model and its six ablations.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Sweep the history length (T) or the number of memory slots (L_m).
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        param: String,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Missing(_) | Error::Unreachable { .. } | Error::Parse { .. } => 3,
        Error::Diverged { .. } | Error::Numeric(_) => 4,
        _ => 1,
    }
}

fn results_dir(out: &Option<PathBuf>) -> PathBuf {
    out.clone()
        .or_else(|| std::env::var_os(RESULTS_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("results"))
}

/// Saved data config, then `--config`, then each `--set`.
fn resolve_config(base: Option<&Path>, args: &ConfigArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut files: Vec<&Path> = base.filter(|p| p.is_file()).into_iter().collect();
    if let Some(p) = &args.config {
        if !p.is_file() {
            return Err(Error::Config(format!("config file {} not found", p.display())));
        }
        files.push(p);
    }
    for f in files {
        cfg.apply_text(&fs::read_to_string(f)?)?;
    }
    for kv in &args.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set {kv:?}: expected KEY=VALUE")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_seeds(arg: &str, base: u64) -> Result<Vec<u64>> {
    let bad = || Error::Config(format!("--seeds {arg:?}: expected a count or a comma-separated list"));
    if arg.contains(',') {
        return arg.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect();
    }
    let n: u64 = arg.trim().parse().map_err(|_| bad())?;
    if n == 0 {
        return Err(bad());
    }
    Ok((base..base + n).collect())
}

fn load_panel(run: &mut Run, dir: &Path) -> Result<Panel> {
    for f in [PANEL_FILE, SCHEMA_FILE, CENTROIDS_FILE, ROAD_NODES_FILE, ROAD_EDGES_FILE] {
        run.input(&dir.join(f))?;
    }
    import_panel(dir)
}

fn load_training_data(run: &mut Run, data: &DataArgs) -> Result<TrainingData> {
    let panel = load_panel(run, &data.data)?;
    let emb_path = data.embedding.clone().unwrap_or_else(|| data.data.join(EMBEDDING_CSV));
    run.input(&emb_path)?;
    TrainingData::with_embedding(&panel, DistrictEmbedding::read_csv(&emb_path)?)
}

fn report_row(s: &mut String, r: &MetricsReport) {
    writeln!(
        s,
        "{},{},{},{},{},{},{},{},{}",
        r.method, r.seed, r.test.mae, r.test.mse, r.val.mae, r.val.mse, r.train.mae, r.train.mse, r.best_epoch
    )
    .unwrap();
}

/// Per-seed rows plus one `mean` row per method.
fn reports_csv(groups: &[Vec<MetricsReport>]) -> String {
    let mut s = String::from("method,seed,test_mae,test_mse,val_mae,val_mse,train_mae,train_mse,best_epoch\n");
    for reports in groups {
        for r in reports {
            report_row(&mut s, r);
        }
        if let Some(first) = reports.first() {
            let (mae, mse) = mean_metrics(reports);
            let n = reports.len() as f64;
            let avg = |f: fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
            writeln!(
                s,
                "{},mean,{mae},{mse},{},{},{},{},",
                first.method,
                avg(|r| r.val.mae),
                avg(|r| r.val.mse),
                avg(|r| r.train.mae),
                avg(|r| r.train.mse)
            )
            .unwrap();
        }
    }
    s
}

fn print_summary(groups: &[Vec<MetricsReport>]) {
    println!("{:<22} {:>5} {:>10} {:>10}", "method", "seeds", "test MAE", "test MSE");
    for reports in groups.iter().filter(|g| !g.is_empty()) {
        let (mae, mse) = mean_metrics(reports);
        println!("{:<22} {:>5} {:>10.5} {:>10.5}", reports[0].method, reports.len(), mae, mse);
    }
}

fn cmd_gen(run: &mut Run, cfg: &ConfigArgs) -> Result<()> {
    if let Some(p) = &cfg.config {
        if p.is_file() {
            run.input(p)?;
        }
    }
    let config = resolve_config(None, cfg)?;
    run.config = Some(config.clone());
    run.seed = Some(config.scenario.seed);
    let panel = generate(&config.scenario)?;
    for p in export_panel(&panel, &run.out)? {
        run.output(p);
    }
    let (_, stats) = prepare(&panel)?;
    for w in &stats.warnings {
        log::warn!("{w}");
    }
    run.write(NORM_FILE, serde_json::to_string_pretty(&stats)? + "\n")?;
    run.write(CONFIG_FILE, config.to_text())?;
    let s = panel.splits;
    println!(
        "{} couriers, {} districts, {} days; train {:?}, val {:?}, test {:?}",
        config.scenario.n_couriers,
        config.scenario.n_districts,
        config.scenario.n_days,
        s.train(),
        s.val(),
        s.test()
    );
    Ok(())
}

fn cmd_embed(run: &mut Run, cfg: &ConfigArgs, data: &Path) -> Result<()> {
    let config = resolve_config(Some(&data.join(CONFIG_FILE)), cfg)?;
    run.config = Some(config.clone());
    run.seed = Some(config.walk.seed);
    let panel = load_panel(run, data)?;
    let district = build_district_graph(&panel.roads, &panel.centroids)?;
    let out = embed(&district.walk_graph(), &config.walk)?;
    let emb = out.embedding;
    run.write(EMBEDDING_CSV, emb.to_csv())?;
    let mut store = ParamStore::new();
    store.insert("embedding", emb.0.clone());
    let meta = serde_json::json!({ "kind": "district_embedding", "walk": config.walk });
    run.write(EMBEDDING_BIN, checkpoint::encode(&store, &meta)?)?;
    println!(
        "{} districts x {} dims; skip-gram loss {:.4} -> {:.4}",
        emb.district_count(),
        emb.dim(),
        out.epoch_losses.first().copied().unwrap_or(f64::NAN),
        out.epoch_losses.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

/// Shared setup for the experiment commands.
fn experiment_setup(run: &mut Run, cfg: &ConfigArgs, data: &DataArgs, r: &RunArgs) -> Result<(TrainingData, ExperimentConfig, Vec<u64>)> {
    let config = resolve_config(Some(&data.data.join(CONFIG_FILE)), cfg)?;
    let seeds = parse_seeds(&r.seeds, config.train.seed)?;
    run.config = Some(config.clone());
    run.seed = seeds.first().copied();
    let td = load_training_data(run, data)?;
    Ok((td, config.train, seeds))
}

fn cmd_train(run: &mut Run, cfg: &ConfigArgs, data: &DataArgs, r: &RunArgs) -> Result<()> {
    let (td, train, seeds) = experiment_setup(run, cfg, data, r)?;
    let trained = train_seeds(&train, &td, &seeds, r.jobs)?;
    let mut reports = Vec::new();
    for t in trained {
        let meta = serde_json::json!({ "model": t.model.cfg, "experiment": ExperimentConfig { seed: t.report.seed, ..train.clone() } });
        run.write(&format!("checkpoints/{}_seed{}.ckpt", train.variant, t.report.seed), checkpoint::encode(&t.model.params, &meta)?)?;
        reports.push(t.report);
    }
    run.write("train_reports.json", serde_json::to_string_pretty(&reports)? + "\n")?;
    let groups = [reports];
    run.write("train.csv", reports_csv(&groups))?;
    print_summary(&groups);
    Ok(())
}

fn cmd_eval(run: &mut Run, data: &DataArgs, ckpt: &Path, split: &str) -> Result<()> {
    let split: Split = split.parse()?;
    run.input(ckpt)?;
    let (params, meta) = checkpoint::load(ckpt)?;
    let model_cfg = serde_json::from_value(meta["model"].clone())
        .map_err(|e| Error::Data(format!("{}: not a model checkpoint ({e})", ckpt.display())))?;
    let model = DeepSta { cfg: model_cfg, params };
    if let Ok(exp) = serde_json::from_value::<ExperimentConfig>(meta["experiment"].clone()) {
        run.seed = Some(exp.seed);
    }
    let td = load_training_data(run, data)?;
    let inputs = td.inputs(&model.cfg)?;
    let m = evaluate(&model, &inputs, &td.samples(split, model.cfg.window))?;
    let name = format!("{split:?}").to_lowercase();
    let body = serde_json::json!({ "checkpoint": ckpt.display().to_string(), "split": name, "mae": m.mae, "mse": m.mse, "n": m.n });
    run.write(&format!("eval_{name}.json"), serde_json::to_string_pretty(&body)? + "\n")?;
    println!("{} on {name}: MAE {:.6} MSE {:.6} over {} samples", model.cfg.variant, m.mae, m.mse, m.n);
    Ok(())
}

fn cmd_baseline(run: &mut Run, cfg: &ConfigArgs, data: &DataArgs, r: &RunArgs) -> Result<()> {
    let (td, train, seeds) = experiment_setup(run, cfg, data, r)?;
    let mut groups = Vec::new();
    for tag in ["baseline:ma", "baseline:persistence", "baseline:lr", "baseline:lstm"] {
        let c = ExperimentConfig {
            variant: tag.into(),
            ..train.clone()
        };
        // The closed-form baselines ignore the seed.
        let s = if tag == "baseline:lstm" { &seeds[..] } else { &seeds[..1] };
        groups.push(run_seeds(&c, &td, s, r.jobs)?);
    }
    run.write("baselines.csv", reports_csv(&groups))?;
    print_summary(&groups);
    Ok(())
}

fn cmd_ablate(run: &mut Run, cfg: &ConfigArgs, data: &DataArgs, r: &RunArgs) -> Result<()> {
    let (td, train, seeds) = experiment_setup(run, cfg, data, r)?;
    let rows = run_ablations(&train, &td, &seeds, r.jobs)?;
    run.write("ablation.csv", ablation_csv(&rows))?;
    print_summary(&rows.into_iter().map(|r| r.reports).collect::<Vec<_>>());
    Ok(())
}

fn cmd_sweep(run: &mut Run, cfg: &ConfigArgs, data: &DataArgs, r: &RunArgs, param: &str) -> Result<()> {
    let param: SweepParam = param.parse()?;
    let (td, train, seeds) = experiment_setup(run, cfg, data, r)?;
    let points = sweep(param, &train, &td, &seeds, r.jobs)?;
    run.write(&format!("sweep_{}.csv", param.name().replace('_', "")), sweep_csv(param, &points))?;
    println!("{:>5} {:>10} {:>10}", param.name(), "test MAE", "test MSE");
    for p in &points {
        let (mae, mse) = mean_metrics(&p.reports);
        println!("{:>5} {:>10.5} {:>10.5}", p.value, mae, mse);
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (name, out) = match &cli.command {
        Command::Gen { out, .. } => ("gen", out.clone()),
        Command::Embed { data, out, .. } => ("embed", out.clone().unwrap_or_else(|| data.clone())),
        Command::Train { run, .. } => ("train", results_dir(&run.out)),
        Command::Eval { out, .. } => ("eval", results_dir(out)),
        Command::Baseline { run, .. } => ("baseline", results_dir(&run.out)),
        Command::Ablate { run, .. } => ("ablate", results_dir(&run.out)),
        Command::Sweep { run, .. } => ("sweep", results_dir(&run.out)),
    };
    let mut run = Run::new(name, out);
    let result = match &cli.command {
        Command::Gen { cfg, .. } => cmd_gen(&mut run, cfg),
        Command::Embed { cfg, data, .. } => cmd_embed(&mut run, cfg, data),
        Command::Train { cfg, data, run: r } => cmd_train(&mut run, cfg, data, r),
        Command::Eval {
            data,
            checkpoint,
            split,
            ..
        } => cmd_eval(&mut run, data, checkpoint, split),
        Command::Baseline { cfg, data, run: r } => cmd_baseline(&mut run, cfg, data, r),
        Command::Ablate { cfg, data, run: r } => cmd_ablate(&mut run, cfg, data, r),
        Command::Sweep {
            cfg,
            data,
            run: r,
            param,
        } => cmd_sweep(&mut run, cfg, data, r, param),
    };
    let (error, code) = match &result {
        Ok(()) => (None, 0),
        Err(e) => (Some(e.to_string()), exit_code(e)),
    };
    if let Err(e) = run.finish(error.clone(), code as i32) {
        eprintln!("deepsta: could not write manifest: {e}");
    }
    if let Some(msg) = error {
        eprintln!("deepsta {name}: {msg}");
    }
    ExitCode::from(code)
}
