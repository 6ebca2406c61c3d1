//! `metaqa` — hallucination detection for LLM answers and the evaluation
//! harness around it.
//!
//! Commands: `detect` (one question), `run` (a dataset), `label` /
//! `review` (ground truth), `eval` / `sweep` / `report` (results), and
//! `cache` (response-cache maintenance). Configuration comes from defaults,
//! then an optional `--config` file, then flags.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use metaqa::RunConfig;

#[derive(Parser)]
#[command(name = "metaqa", version, about = "Detect fact-conflicting hallucinations in LLM answers by mutation testing", long_about = None)]
struct Cli {
    #[command(flatten)]
    overrides: ConfigOverrides,

    #[command(subcommand)]
    command: Command,
}

/// Flag-level overrides applied on top of the config file and defaults.
#[derive(Args, Clone)]
struct ConfigOverrides {
    /// Config file (flat key = value TOML mirroring RunConfig fields).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Model identifier sent to the backend.
    #[arg(long, global = true)]
    model: Option<String>,
    /// Chat-completions endpoint URL.
    #[arg(long, global = true)]
    endpoint_url: Option<String>,
    /// Generation/verification temperature.
    #[arg(long, global = true)]
    temperature: Option<f64>,
    /// Classification threshold in [0, 1].
    #[arg(long, global = true)]
    threshold: Option<String>,
    /// Synonym mutations per question.
    #[arg(long, global = true)]
    syn_count: Option<usize>,
    /// Antonym mutations per question.
    #[arg(long, global = true)]
    ant_count: Option<usize>,
    /// Baseline samples per question.
    #[arg(long, global = true)]
    baseline_k: Option<usize>,
    /// Baseline sampling temperature.
    #[arg(long, global = true)]
    baseline_temperature: Option<f64>,
    /// Seed for deterministic sampling.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Response-cache directory.
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    /// Disable the response cache.
    #[arg(long, global = true)]
    no_cache: bool,
    /// Prompt catalog file overriding the built-in catalog.
    #[arg(long, global = true)]
    prompt_catalog: Option<PathBuf>,
    /// Dataset file (one JSON record per line).
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    /// Scripted mock backend (JSON); no live calls when set.
    #[arg(long, global = true)]
    mock_script: Option<PathBuf>,
    /// Output file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

impl ConfigOverrides {
    fn effective_config(&self) -> Result<RunConfig> {
        let mut config = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = &self.model {
            config.model_id = v.clone();
        }
        if let Some(v) = &self.endpoint_url {
            config.endpoint_url = v.clone();
        }
        if let Some(v) = self.temperature {
            config.temperature = v;
        }
        if let Some(v) = &self.threshold {
            config.threshold = v.clone();
        }
        if let Some(v) = self.syn_count {
            config.syn_count = v;
        }
        if let Some(v) = self.ant_count {
            config.ant_count = v;
        }
        if let Some(v) = self.baseline_k {
            config.baseline_k = v;
        }
        if let Some(v) = self.baseline_temperature {
            config.baseline_temperature = v;
        }
        if let Some(v) = self.seed {
            config.seed = v;
        }
        if let Some(v) = &self.cache_dir {
            config.cache_dir = Some(v.clone());
        }
        if self.no_cache {
            config.cache_dir = None;
        }
        if let Some(v) = &self.prompt_catalog {
            config.prompt_catalog_path = Some(v.clone());
        }
        if let Some(v) = &self.dataset {
            config.dataset_path = Some(v.clone());
        }
        if let Some(v) = &self.mock_script {
            config.mock_script = Some(v.clone());
        }
        if let Some(v) = &self.out {
            config.output_path = Some(v.clone());
        }
        config
            .validate()
            .map_err(|reason| anyhow::anyhow!("invalid config: {reason}"))?;
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Detect hallucination in the answer to a single question.
    Detect {
        /// The question to ask.
        #[arg(long)]
        question: String,
        /// Base response to test; when omitted, the model answers first.
        #[arg(long)]
        answer: Option<String>,
        /// Identifier recorded in the trace.
        #[arg(long, default_value = "q0")]
        id: String,
        /// Extra thresholds to classify at (comma-separated), besides the
        /// configured one.
        #[arg(long, value_delimiter = ',')]
        thresholds: Vec<String>,
    },
    /// Run detection (and/or the baseline) over a dataset.
    Run {
        /// metaqa, baseline, or both.
        #[arg(long, default_value = "metaqa")]
        method: String,
        /// Keep only records in these categories (repeatable).
        #[arg(long = "category")]
        categories: Vec<String>,
        /// Process a deterministic sample of this many records.
        #[arg(long)]
        sample_k: Option<usize>,
        /// Process a deterministic sample of this fraction of records.
        #[arg(long, conflicts_with = "sample_k")]
        sample_frac: Option<f64>,
    },
    /// Auto-label the base responses of a run against reference answers.
    Label {
        /// Run output file to label.
        #[arg(long)]
        run: PathBuf,
        /// Model used for the validation calls (defaults to the configured
        /// model, matching a single-model setup).
        #[arg(long)]
        labeler_model: Option<String>,
    },
    /// Export or import the manual-review queue.
    Review {
        #[command(subcommand)]
        action: ReviewAction,
    },
    /// Precision/recall/F1 of a labeled run at one threshold.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// metaqa or baseline.
        #[arg(long, default_value = "metaqa")]
        method: String,
        /// human or json.
        #[arg(long, default_value = "human")]
        format: String,
        /// Drop degraded traces (shortfalls, failed calls) before scoring.
        #[arg(long)]
        exclude_degraded: bool,
    },
    /// Metrics across a threshold grid.
    Sweep {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// Comma-separated thresholds (default: the 13-point grid).
        #[arg(long, value_delimiter = ',')]
        grid: Vec<String>,
        /// metaqa, baseline, or both (both adds paired deltas).
        #[arg(long, default_value = "metaqa")]
        method: String,
        #[arg(long, default_value = "human")]
        format: String,
        /// Drop degraded traces (shortfalls, failed calls) before scoring.
        #[arg(long)]
        exclude_degraded: bool,
    },
    /// Result surfaces: stability, sensitivity, categories, heatmap, cost,
    /// reference-identity.
    Report {
        #[command(subcommand)]
        surface: ReportSurface,
    },
    /// Response-cache maintenance.
    Cache {
        #[command(subcommand)]
        action: CacheAction,
    },
}

#[derive(Subcommand)]
enum ReviewAction {
    /// Write every needs-review item to a human-editable queue file.
    Export {
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        run: PathBuf,
    },
    /// Read back a filled queue and finalize the labels.
    Import {
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        queue: PathBuf,
    },
}

#[derive(Subcommand)]
enum ReportSurface {
    /// Mean/deviation of metrics across repeated runs.
    Stability {
        #[arg(long)]
        labels: PathBuf,
        /// Two or more run files over the same questions.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        grid: Vec<String>,
        #[arg(long, default_value = "human")]
        format: String,
    },
    /// Metrics as a function of mutation count (first-k truncation by
    /// default).
    Sensitivity {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// Mutation counts to evaluate.
        #[arg(long, value_delimiter = ',', default_values_t = vec![2usize, 4, 6, 8, 10])]
        k_grid: Vec<usize>,
        /// Thresholds to evaluate at.
        #[arg(long, value_delimiter = ',', default_values = ["0.5", "0.55", "0.6"])]
        thetas: Vec<String>,
        /// Pick k verdicts per question by seeded random subsampling
        /// instead of generation order.
        #[arg(long)]
        subsample_seed: Option<u64>,
        #[arg(long, default_value = "human")]
        format: String,
    },
    /// Per-category hallucination rates and detection.
    Categories {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value = "human")]
        format: String,
    },
    /// Hallucination-rate grid over label files (one cell per file).
    Heatmap {
        #[arg(required = true)]
        labels: Vec<PathBuf>,
        #[arg(long, default_value = "human")]
        format: String,
    },
    /// Token-cost summary of a run.
    Cost {
        #[arg(long)]
        run: PathBuf,
    },
    /// F1 harmonic-mean identity check over a reference-results file.
    Identity {
        #[arg(long)]
        reference: PathBuf,
        #[arg(long, default_value_t = 0.001)]
        tolerance: f64,
    },
}

#[derive(Subcommand)]
enum CacheAction {
    /// Entry count and location.
    Stats,
    /// Remove every cached response.
    Clear,
}

fn main() -> ExitCode {
    // Die quietly when a downstream pager/head closes the pipe.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let config = cli.overrides.effective_config()?;
    match cli.command {
        Command::Detect {
            question,
            answer,
            id,
            thresholds,
        } => commands::detect(config, &question, answer.as_deref(), &id, &thresholds),
        Command::Run {
            method,
            categories,
            sample_k,
            sample_frac,
        } => {
            let method = method.parse().map_err(|e: String| anyhow::anyhow!(e))?;
            commands::run_dataset(config, method, &categories, sample_k, sample_frac)
        }
        Command::Label { run, labeler_model } => {
            commands::label(config, &run, labeler_model.as_deref())
        }
        Command::Review { action } => match action {
            ReviewAction::Export { labels, run } => commands::review_export(config, &labels, &run),
            ReviewAction::Import { labels, queue } => {
                commands::review_import(config, &labels, &queue)
            }
        },
        Command::Eval {
            run,
            labels,
            method,
            format,
            exclude_degraded,
        } => commands::eval(config, &run, &labels, &method, &format, exclude_degraded),
        Command::Sweep {
            run,
            labels,
            grid,
            method,
            format,
            exclude_degraded,
        } => commands::sweep(
            config,
            &run,
            &labels,
            &grid,
            &method,
            &format,
            exclude_degraded,
        ),
        Command::Report { surface } => match surface {
            ReportSurface::Stability {
                labels,
                runs,
                grid,
                format,
            } => commands::report_stability(config, &labels, &runs, &grid, &format),
            ReportSurface::Sensitivity {
                run,
                labels,
                k_grid,
                thetas,
                subsample_seed,
                format,
            } => commands::report_sensitivity(
                config,
                &run,
                &labels,
                &k_grid,
                &thetas,
                subsample_seed,
                &format,
            ),
            ReportSurface::Categories {
                run,
                labels,
                format,
            } => commands::report_categories(config, &run, &labels, &format),
            ReportSurface::Heatmap { labels, format } => {
                commands::report_heatmap(config, &labels, &format)
            }
            ReportSurface::Cost { run } => commands::report_cost(config, &run),
            ReportSurface::Identity {
                reference,
                tolerance,
            } => commands::report_identity(config, &reference, tolerance),
        },
        Command::Cache { action } => {
            let Some(dir) = config.cache_dir.clone() else {
                bail!("no cache directory configured");
            };
            match action {
                CacheAction::Stats => commands::cache_stats(&dir),
                CacheAction::Clear => commands::cache_clear(&dir),
            }
        }
    }
}

/// Parses a comma-separated threshold list already split by clap.
pub(crate) fn parse_thresholds(values: &[String]) -> Result<Vec<metaqa::Threshold>> {
    values
        .iter()
        .map(|v| {
            v.parse::<metaqa::Threshold>()
                .with_context(|| format!("bad threshold `{v}`"))
        })
        .collect()
}
