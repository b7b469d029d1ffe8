use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use whitebench::aggregate::aggregate_dir;
use whitebench::calibrate::calibrate_alpha;
use whitebench::config::{BenchConfig, CellSelector, CellSpec};
use whitebench::manifest::CellStatus;
use whitebench::pipeline::{attribution_batch, correct_test_ids, dataset_stage, evaluate_batch, run};
use whitebench_core::attribution::{AttributionBatch, Method};
use whitebench_core::datagen::{Background, Dataset, Scenario};
use whitebench_core::metrics::write_metrics_csv;
use whitebench_core::models::{train, Architecture, TrainedModel};
use whitebench_core::theory2d::{boundary_csv, default_grid, scatter_csv, verify_closed_forms, SuppressorModel};
use whitebench_core::whitening::{whiten_dataset, WhiteningMethod};

/// Whitening and attribution-correctness benchmark.
///
/// Every global flag can also be set through an environment variable with
/// the `WHITEBENCH_` prefix (`WHITEBENCH_CONFIG`, `WHITEBENCH_SEED`,
/// `WHITEBENCH_OUT`, `WHITEBENCH_JOBS`, `WHITEBENCH_CELL`). Flags override
/// the config file; the config file overrides built-in defaults. Log level
/// follows `RUST_LOG` (default `info`).
#[derive(Debug, Parser)]
#[command(name = "whitebench", version)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// TOML config file.
    #[arg(long, global = true, env = "WHITEBENCH_CONFIG")]
    config: Option<PathBuf>,
    /// Global seed for data, initialization and sampling-based methods.
    #[arg(long, global = true, env = "WHITEBENCH_SEED")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, env = "WHITEBENCH_OUT")]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "WHITEBENCH_JOBS")]
    jobs: Option<usize>,
    /// Cell selectors `SCENARIO/BACKGROUND/whitening/MODEL` with `*` wildcards, comma-separated.
    #[arg(long, global = true, env = "WHITEBENCH_CELL", value_delimiter = ',')]
    cell: Vec<CellSelector>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate one dataset.
    Generate {
        #[arg(long)]
        scenario: Scenario,
        #[arg(long)]
        background: Background,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Fit a whitening transform on a dataset's train split and transform all samples.
    Whiten {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        method: WhiteningMethod,
        /// Feature ordering for Cholesky whitening (comma-separated permutation).
        #[arg(long, value_delimiter = ',')]
        ordering: Vec<usize>,
    },
    /// Train a model on a dataset.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        model: Architecture,
    },
    /// Attributions for the correctly classified test samples.
    Explain {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Comma-separated methods.
        #[arg(long, value_delimiter = ',', required = true)]
        method: Vec<Method>,
    },
    /// Score attribution batches against a dataset's ground truth.
    Evaluate {
        #[arg(long)]
        dataset: PathBuf,
        /// Attribution batch manifests (`<method>.json`).
        #[arg(long, required = true, num_args = 1..)]
        attributions: Vec<PathBuf>,
        /// Whitening label recorded in the metrics rows.
        #[arg(long, default_value = "none")]
        whitening: WhiteningMethod,
        /// Model label; defaults to the architecture recorded in the batch.
        #[arg(long)]
        model: Option<Architecture>,
    },
    /// Verify the two-feature suppressor closed forms and export scatter data.
    Theory2d {
        #[arg(long, default_value_t = 1.0)]
        s1: f64,
        #[arg(long, default_value_t = 1.0)]
        s2: f64,
        #[arg(long, default_value_t = 0.8)]
        c: f64,
        #[arg(long, default_value_t = 1000)]
        n: usize,
    },
    /// Smallest α (1/64 grid) at which a model reaches the target test accuracy.
    CalibrateAlpha {
        #[arg(long)]
        scenario: Scenario,
        #[arg(long)]
        background: Background,
        #[arg(long)]
        model: Architecture,
        #[arg(long, default_value_t = 0.8)]
        target: f64,
    },
    /// Run every planned cell; exit status is nonzero iff a cell errored.
    Run,
    /// Summary statistics and heatmaps from a run directory.
    Aggregate {
        /// Run directory (default: the output directory).
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

fn load_config(g: &GlobalArgs) -> Result<BenchConfig> {
    let mut cfg = match &g.config {
        Some(p) => BenchConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => BenchConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
        cfg.methods.seed = s;
    }
    if let Some(o) = &g.out {
        cfg.out = o.clone();
    }
    if g.jobs.is_some() {
        cfg.jobs = g.jobs;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    Dataset::load(path).with_context(|| format!("loading dataset {}", path.display()))
}

fn execute(cli: Cli) -> Result<ExitCode> {
    let cfg = load_config(&cli.global)?;
    let out = cfg.out.clone();
    if let Some(j) = cfg.jobs {
        rayon::ThreadPoolBuilder::new().num_threads(j).build_global()?;
    }
    match cli.command {
        Command::Generate {
            scenario,
            background,
            samples,
            alpha,
        } => {
            let mut sc = cfg.data.scenario_config(scenario, background, cfg.seed)?;
            if let Some(n) = samples {
                sc.n_samples = n;
            }
            if let Some(a) = alpha {
                sc.alpha = a;
            }
            sc.validate()?;
            let stage = dataset_stage(&out, &sc)?;
            println!("{}", stage.dir.join("dataset.json").display());
        }
        Command::Whiten { dataset, method, ordering } => {
            let ds = load_dataset(&dataset)?;
            let ordering = (!ordering.is_empty()).then_some(ordering);
            let white = whiten_dataset(&ds, method, ordering.as_deref())?;
            let dir = out.join(format!("whitened-{method}"));
            let path = white.data.save(&dir, "dataset")?;
            white.transform.save(&dir.join("transform.bin"))?;
            println!("{}", path.display());
        }
        Command::Train { dataset, model } => {
            let ds = load_dataset(&dataset)?;
            let tc = cfg.train.train_config(ds.config.scenario, cfg.seed);
            let trained = train(&cfg.model.spec(model), &ds, &tc)?;
            let path = trained.save(&out, &format!("model-{model}"))?;
            info!(
                "test accuracy {:.4} (gate {})",
                trained.test_accuracy,
                if trained.passes_gate() { "passed" } else { "failed" }
            );
            println!("{}", path.display());
        }
        Command::Explain { model, dataset, method } => {
            let trained = TrainedModel::load(&model).with_context(|| format!("loading model {}", model.display()))?;
            let ds = load_dataset(&dataset)?;
            let ids = correct_test_ids(&trained, &ds)?;
            let tag = trained.spec.architecture.to_string();
            for m in method {
                let batch = attribution_batch(&trained, &tag, m, &ds, &ids, &cfg.methods)?;
                println!("{}", batch.save(&out, m.as_str())?.display());
            }
        }
        Command::Evaluate {
            dataset,
            attributions,
            whitening,
            model,
        } => {
            let ds = load_dataset(&dataset)?;
            let mut rows = Vec::new();
            for path in &attributions {
                let batch = AttributionBatch::load(path).with_context(|| format!("loading {}", path.display()))?;
                let arch = match model {
                    Some(a) => a,
                    None => batch
                        .model
                        .split('@')
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| anyhow!("{}: cannot infer model; pass --model", path.display()))?,
                };
                let cell = CellSpec {
                    scenario: ds.config.scenario,
                    background: ds.config.background,
                    whitening,
                    model: arch,
                    methods: vec![batch.method],
                };
                let ids = if batch.sample_ids.is_empty() {
                    ds.splits.test.clone()
                } else {
                    batch.sample_ids.clone()
                };
                rows.extend(evaluate_batch(&cell, &batch, &ds, &ids)?);
            }
            fs::create_dir_all(&out)?;
            let path = out.join("metrics.csv");
            write_metrics_csv(&path, &rows)?;
            println!("{}", path.display());
        }
        Command::Theory2d { s1, s2, c, n } => {
            let report = verify_closed_forms(&default_grid())?;
            let dir = out.join("theory2d");
            fs::create_dir_all(&dir)?;
            fs::write(dir.join("report.csv"), report.to_csv())?;
            let model = SuppressorModel::new(s1, s2, c).with_n(n).with_seed(cfg.seed);
            fs::write(dir.join("scatter.csv"), scatter_csv(&model)?)?;
            fs::write(dir.join("boundary.csv"), boundary_csv(&model)?)?;
            let failures = report.failures().count();
            let discrepancies = report.discrepancies().count();
            println!(
                "{} rows, {failures} failed checks, {discrepancies} reported-only discrepancies -> {}",
                report.rows.len(),
                dir.display()
            );
            if failures > 0 {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::CalibrateAlpha {
            scenario,
            background,
            model,
            target,
        } => {
            let cal = calibrate_alpha(scenario, background, model, target, &cfg.data, &cfg.train, &cfg.model, cfg.seed)?;
            let dir = out.join("calibration");
            fs::create_dir_all(&dir)?;
            let json = serde_json::to_string_pretty(&cal)?;
            fs::write(dir.join(format!("{}.json", cal.cell.replace('/', "_"))), &json)?;
            println!("{json}");
        }
        Command::Run => {
            let plan = cfg.plan(&cli.global.cell)?;
            if plan.cells.is_empty() {
                info!("plan has no cells");
            }
            let outcome = run(&plan)?;
            println!(
                "run {}: {} completed, {} cached, {} excluded, {} failed; {} metrics rows -> {}",
                outcome.run,
                outcome.count(CellStatus::Completed),
                outcome.count(CellStatus::Cached),
                outcome.count(CellStatus::Excluded),
                outcome.count(CellStatus::Failed),
                outcome.metrics.len(),
                outcome.manifest_path.display()
            );
            if outcome.any_failed() {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Aggregate { input } => {
            let input = input.unwrap_or_else(|| out.clone());
            let agg = aggregate_dir(&input, &out)?;
            println!("{} summary rows, {} heatmaps -> {}", agg.rows, agg.heatmaps.len(), agg.summary.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}
