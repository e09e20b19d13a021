use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use koopman_flow_cli::commands::{self, DATASET_FILE};
use koopman_flow_cli::reproduce::{self, ReproduceOptions, TARGETS};
use koopman_flow_cli::{CliError, ExperimentConfig, Result};

#[derive(Parser)]
#[command(name = "koopman-flow", version = koopman_flow_cli::VERSION, about = "Koopman embeddings with coupling flows and DMD")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a dataset.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Train FlowDMD.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset file; generated from the configuration when omitted.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate reconstruction methods on a dataset.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Comma-separated list of flowdmd, exact_dmd, ae_baseline.
        #[arg(long, value_delimiter = ',')]
        methods: Vec<String>,
    },
    /// Run a reference experiment and compare with published values.
    Reproduce {
        /// One of fig1, fig7, fig10, table_rank, table_alpha, fig2, fig14.
        target: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Replaces the default epoch budget.
        #[arg(long)]
        max_epochs: Option<usize>,
        /// Number of seeds for fig14.
        #[arg(long, default_value_t = 15)]
        seeds: usize,
    },
}

fn load_config(common: &Common, fallback_system: Option<&str>) -> Result<ExperimentConfig> {
    let mut cfg = match (&common.config, fallback_system) {
        (Some(p), _) => ExperimentConfig::load(p)?,
        (None, Some(sys)) => ExperimentConfig::for_system(sys)?,
        (None, None) => return Err(CliError::Usage("--config is required".into())),
    };
    if let Some(s) = common.seed {
        cfg.seed = Some(s);
    }
    Ok(cfg)
}

fn out_dir(common: &Common, cfg: &ExperimentConfig) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { common } => {
            let cfg = load_config(&common, None)?;
            let out = out_dir(&common, &cfg);
            commands::generate(&cfg, &out)?;
            println!("{}", out.join(DATASET_FILE).display());
        }
        Command::Train {
            common,
            dataset,
            resume,
        } => {
            let cfg = load_config(&common, None)?;
            let out = out_dir(&common, &cfg);
            let model = commands::train(&cfg, dataset.as_deref(), resume.as_deref(), &out)?;
            if let Some(last) = model.history.last() {
                println!(
                    "epoch {} best {} val_total {:e}",
                    last.epoch, model.best_epoch, last.val_total
                );
            }
        }
        Command::Evaluate {
            common,
            dataset,
            checkpoint,
            methods,
        } => {
            let cfg = match &common.config {
                Some(_) => load_config(&common, None)?,
                None => {
                    let ds = commands::load_dataset(&dataset)?;
                    load_config(&common, Some(ds.system.name()))?
                }
            };
            let out = out_dir(&common, &cfg);
            let methods = if methods.is_empty() { cfg.methods() } else { methods };
            let eval = commands::evaluate(&cfg, checkpoint.as_deref(), &dataset, &methods, &out)?;
            for m in commands::parse_methods(&methods)? {
                if let Some(v) = eval.mean(&m) {
                    println!("{m} mean_trl2e {v:e}");
                }
            }
        }
        Command::Reproduce {
            target,
            seed,
            out,
            max_epochs,
            seeds,
        } => {
            if !TARGETS.contains(&target.as_str()) {
                return Err(CliError::Usage(format!(
                    "unknown target `{target}`; valid targets: {}",
                    TARGETS.join(", ")
                )));
            }
            let opts = ReproduceOptions {
                seed: seed.unwrap_or(0),
                max_epochs,
                seeds,
            };
            let out = out.unwrap_or_else(|| PathBuf::from("out").join(&target));
            let rep = reproduce::run(&target, &opts, &out)?;
            print!("{rep}");
            println!("{}: {}", target, if rep.passed() { "pass" } else { "fail" });
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
