//! Command-line interface.

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use umaea_core::kgdata::SyntheticConfig;
use umaea_core::trainer::StageSelection;

use crate::commands;
use crate::config::RunConfig;

/// Multi-modal entity alignment with missing visual features.
///
/// Set UMAEA_THREADS to cap worker threads.
#[derive(Parser)]
#[command(name = "umaea", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Stage {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    All,
}

impl From<Stage> for StageSelection {
    fn from(s: Stage) -> Self {
        match s {
            Stage::One => StageSelection::One,
            Stage::Two => StageSelection::Two,
            Stage::All => StageSelection::All,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic raw dataset (two noisy isomorphic graphs).
    Synth {
        #[arg(long, default_value_t = 200)]
        entities: usize,
        #[arg(long, default_value_t = 20)]
        relations: usize,
        #[arg(long, default_value_t = 50)]
        attrs: usize,
        #[arg(long, default_value_t = 16)]
        d_v: usize,
        /// Fraction of KG2 triples rewired at random.
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Validate raw graphs, split the seed pairs and write a prepared dataset.
    Prepare {
        /// Directory with triples.txt, attrs.txt, mask.txt and features.txt.
        #[arg(long)]
        kg1: PathBuf,
        #[arg(long)]
        kg2: PathBuf,
        /// Aligned pairs, one tab-separated `kg1_id kg2_id` per line.
        #[arg(long)]
        pairs: PathBuf,
        /// Fraction of pairs used as training seeds.
        #[arg(long, default_value_t = 0.3)]
        rsa: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Dataset name recorded in the manifest [default: output directory name]
        #[arg(long)]
        name: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate image-availability split manifests.
    GenUmvm {
        /// Prepared dataset directory.
        #[arg(long)]
        data: PathBuf,
        /// Dataset name; standard names enforce their maximum rate
        /// [default: name in the prepared manifest]
        #[arg(long)]
        dataset: Option<String>,
        /// Requested fraction of entities keeping an image.
        #[arg(long, conflicts_with = "grid", required_unless_present = "grid")]
        rimg: Option<f64>,
        /// Emit the standard rate grid of --dataset.
        #[arg(long)]
        grid: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the selected stages.
    Train {
        /// Run configuration (`key = value` lines); see `umaea defaults`.
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        stage: Stage,
        /// Enable probation-based seed expansion.
        #[arg(long)]
        iterative: bool,
        /// Continue from completed stages in the output directory.
        #[arg(long)]
        resume: bool,
        /// Override a config entry, `key=value`; repeatable.
        #[arg(long = "set")]
        overrides: Vec<String>,
    },
    /// Evaluate a stage checkpoint and write its metrics report.
    Eval {
        /// Stage directory, e.g. `<out>/stage2_2`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// [default: run.conf next to the checkpoint]
        #[arg(long)]
        config: Option<PathBuf>,
        /// Split manifest overriding the config's.
        #[arg(long)]
        split: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate across image-availability rates.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Standard dataset whose grid to sweep.
        #[arg(long, conflicts_with = "rates", required_unless_present = "rates")]
        grid: Option<String>,
        /// Comma-separated rates.
        #[arg(long, value_delimiter = ',')]
        rates: Option<Vec<f64>>,
        /// Comma-separated global seeds.
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        #[arg(long = "set")]
        overrides: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Merge metrics reports into a CSV.
    Report {
        /// Report files or directories holding `metrics_*.json`.
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        csv: PathBuf,
    },
    /// Print the default run configuration with descriptions.
    Defaults,
}

fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("UMAEA_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .with_context(|| format!("UMAEA_THREADS must be a positive integer, got `{v}`"))?;
    if n == 0 {
        bail!("UMAEA_THREADS must be positive");
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("configuring worker threads")
}

fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    match cli.command {
        Command::Synth {
            entities,
            relations,
            attrs,
            d_v,
            noise,
            seed,
            out,
        } => {
            let cfg = SyntheticConfig {
                n_entities: entities,
                n_relations: relations,
                n_attrs: attrs,
                d_v,
                noise,
                seed,
                ..SyntheticConfig::default()
            };
            commands::synth(&cfg, &out)
        }
        Command::Prepare {
            kg1,
            kg2,
            pairs,
            rsa,
            seed,
            name,
            out,
        } => commands::prepare(&kg1, &kg2, &pairs, rsa, seed, name.as_deref(), &out),
        Command::GenUmvm {
            data,
            dataset,
            rimg,
            grid,
            seed,
            out,
        } => {
            let rates = if grid {
                let Some(name) = dataset.as_deref() else {
                    bail!("--grid needs --dataset");
                };
                commands::grid_rates(name)?
            } else {
                vec![rimg.expect("clap enforces --rimg")]
            };
            commands::gen_umvm(&data, dataset.as_deref(), &rates, seed, &out).map(|_| ())
        }
        Command::Train {
            config,
            stage,
            iterative,
            resume,
            overrides,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            cfg.apply_overrides(&overrides)?;
            if iterative {
                cfg.train.iterative = true;
            }
            commands::train(&cfg, stage.into(), resume).map(|_| ())
        }
        Command::Eval {
            checkpoint,
            config,
            split,
            out,
        } => commands::eval(&checkpoint, config.as_deref(), split.as_deref(), &out).map(|_| ()),
        Command::Sweep {
            config,
            grid,
            rates,
            seeds,
            overrides,
            out,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            cfg.apply_overrides(&overrides)?;
            let rates = match (&grid, rates) {
                (Some(name), _) => commands::grid_rates(name)?,
                (None, Some(r)) => r,
                (None, None) => bail!("give --grid or --rates"),
            };
            commands::sweep(&cfg, grid.as_deref(), &rates, &seeds, &out)
        }
        Command::Report { runs, csv } => commands::report(&runs, &csv).map(|_| ()),
        Command::Defaults => {
            print!("{}", RunConfig::default().to_text());
            Ok(())
        }
    }
}

/// Parses `args` (program name first) and runs the command, printing any
/// error to stderr.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
