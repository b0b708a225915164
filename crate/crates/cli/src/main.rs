//! Command-line pipeline: corpus -> search/baselines -> train -> eval -> report.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use recheck_core::baselines::BaselineMethod;
use recheck_core::config::PipelineConfig;
use recheck_core::exec::{configure_jobs, ExecMode};
use recheck_core::pipeline::{Pipeline, SEARCH_METHOD};
use recheck_core::Error;

#[derive(Parser)]
#[command(
    name = "recheck",
    about = "Uncertainty-adaptive trajectory search and dense-reward policy training on synthetic sycophancy tasks",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML configuration file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory override (also: RECHECK_OUT environment variable).
    #[arg(long)]
    out_dir: Option<String>,
    /// Global seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for cross-task stages (0 = library default).
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Force the sequential execution path.
    #[arg(long)]
    sequential: bool,
}

impl Common {
    fn load(&self) -> Result<PipelineConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        if let Some(out) = &self.out_dir {
            cfg.out_dir = out.clone();
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn mode(&self) -> ExecMode {
        if self.sequential {
            ExecMode::Sequential
        } else {
            configure_jobs(self.jobs);
            ExecMode::Parallel
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    PromptN,
    CotSingle,
    TemperatureSampling,
    BestOfN,
}

impl From<MethodArg> for BaselineMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::PromptN => BaselineMethod::PromptN,
            MethodArg::CotSingle => BaselineMethod::CoTSingle,
            MethodArg::TemperatureSampling => BaselineMethod::TemperatureSampling,
            MethodArg::BestOfN => BaselineMethod::BestOfN,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the task corpus and its manifest.
    GenTasks {
        #[command(flatten)]
        common: Common,
        /// Number of tasks override.
        #[arg(long)]
        n: Option<usize>,
        /// Type-1 fraction override.
        #[arg(long)]
        type1_fraction: Option<f64>,
    },
    /// Stage 1: uncertainty-adaptive search over the training split.
    Search {
        #[command(flatten)]
        common: Common,
    },
    /// Generate a baseline trajectory dataset.
    Baseline {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        method: MethodArg,
    },
    /// Stage 2: train on a stored dataset (search dataset by default).
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset method tag to train on.
        #[arg(long, default_value = SEARCH_METHOD)]
        dataset: String,
    },
    /// Evaluate a trained snapshot on the held-out splits.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = SEARCH_METHOD)]
        dataset: String,
    },
    /// Aggregate stored artifacts into the report CSVs.
    Report {
        #[command(flatten)]
        common: Common,
    },
    /// Run the whole pipeline end to end.
    RunAll {
        #[command(flatten)]
        common: Common,
    },
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::GenTasks {
            common,
            n,
            type1_fraction,
        } => {
            let mut cfg = common.load()?;
            if let Some(n) = n {
                cfg.tasks.n = n;
            }
            if let Some(f) = type1_fraction {
                cfg.tasks.type1_fraction = f;
            }
            cfg.validate()?;
            let pipeline = Pipeline::new(cfg);
            let (tasks, hash) = pipeline.gen_tasks()?;
            println!(
                "wrote {} tasks to {} (corpus {hash})",
                tasks.len(),
                pipeline.tasks_path().display()
            );
        }
        Command::Search { common } => {
            let pipeline = Pipeline::new(common.load()?);
            let manifest = pipeline.search_stage(common.mode())?;
            println!(
                "wrote {} trajectories to {} (content {})",
                manifest.record_count,
                pipeline.dataset_path(SEARCH_METHOD).display(),
                manifest.content_hash
            );
        }
        Command::Baseline { common, method } => {
            let method: BaselineMethod = method.into();
            let pipeline = Pipeline::new(common.load()?);
            let manifest = pipeline.baseline_stage(method, common.mode())?;
            println!(
                "wrote {} trajectories to {} (content {})",
                manifest.record_count,
                pipeline.dataset_path(method.tag()).display(),
                manifest.content_hash
            );
        }
        Command::Train { common, dataset } => {
            let pipeline = Pipeline::new(common.load()?);
            let outcome = pipeline.train_stage(&dataset)?;
            for row in &outcome.log {
                println!(
                    "epoch {}: objective {:.6}, mean return {:.6}, kl {:.6}, dev truthfulness {}",
                    row.epoch,
                    row.objective,
                    row.mean_return,
                    row.kl,
                    row.dev_truthfulness
                        .map(|v| format!("{v:.4}"))
                        .unwrap_or_else(|| "-".to_string())
                );
            }
            if let Some(epoch) = outcome.diverged_at {
                return Err(Error::NumericalDivergence { epoch });
            }
            println!(
                "wrote checkpoint {}",
                pipeline.trained_policy_path(&dataset).display()
            );
        }
        Command::Eval { common, dataset } => {
            let pipeline = Pipeline::new(common.load()?);
            for (method, seed, split, value) in pipeline.eval_stage(&dataset)? {
                println!("{method} seed {seed} {split}: {value:.4}");
            }
        }
        Command::Report { common } => {
            let pipeline = Pipeline::new(common.load()?);
            pipeline.report_stage()?;
            println!("wrote reports under {}", pipeline.report_path("").display());
        }
        Command::RunAll { common } => {
            let pipeline = Pipeline::new(common.load()?);
            pipeline.run_all(common.mode())?;
            println!("pipeline complete under {}", pipeline.out_dir().display());
        }
    }
    Ok(())
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Validation(_) | Error::CorpusMismatch { .. } | Error::VersionMismatch { .. } => 2,
        Error::NumericalDivergence { .. } => 3,
        Error::Io { .. } | Error::Parse { .. } => 4,
        Error::EnumerationOverflow { .. } | Error::RemoteUnavailable { .. } => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
