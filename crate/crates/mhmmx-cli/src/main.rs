//! `mhmmx`: fit, select, and score mixture hidden Markov models for
//! longitudinal symptom trajectories, with reproducible seeded runs.
//!
//! Exit codes: 0 ok, 2 usage, 3 input error, 4 numerical failure. Every run
//! writes `resolved_config.json` and `manifest.json` (config hash, input
//! hashes, seed) next to its outputs; re-running a command from its
//! persisted config reproduces all outputs byte-identically.

use clap::{Args, Parser, Subcommand};
use mhmmx_cli::artifacts::RunRecorder;
use mhmmx_cli::commands::{self, AssignCliMode, DataPaths, FitMode};
use mhmmx_cli::config::RunConfig;
use mhmmx_cli::error::{CliError, CliResult};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "mhmmx", version, about = "Mixture HMM subgrouping of longitudinal symptom trajectories")]
struct Cli {
    /// JSON run configuration; omitted fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Caps internal parallelism (default: available cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Directory receiving all outputs and the manifest.
    #[arg(long, global = true, default_value = ".")]
    output_dir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct DataArgs {
    /// Baseline risk-factor CSV (one row per patient).
    #[arg(long)]
    baseline: PathBuf,
    /// Long-format trajectory CSV (id, week, pain, disability).
    #[arg(long)]
    trajectory: PathBuf,
    /// Dataset schema JSON (columns, horizon, symptom maxima).
    #[arg(long)]
    schema: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset from the frozen recovery benchmark.
    Simulate {
        /// Number of patients.
        #[arg(long)]
        n: Option<usize>,
        /// Weeks per trajectory.
        #[arg(long)]
        t: Option<usize>,
        /// Per-component missingness probability.
        #[arg(long)]
        missingness: Option<f64>,
    },
    /// Fit one model configuration (MAP or MCMC).
    Fit {
        #[command(flatten)]
        data: DataArgs,
        /// Number of latent subgroups.
        #[arg(long)]
        k: Option<usize>,
        /// Number of latent states.
        #[arg(long)]
        s: Option<usize>,
        #[arg(long, value_enum, default_value = "mcmc")]
        mode: FitMode,
        /// Posterior draws (MCMC mode).
        #[arg(long)]
        draws: Option<usize>,
        /// Warmup iterations (MCMC mode).
        #[arg(long)]
        warmup: Option<usize>,
    },
    /// Sweep candidate (K, S) configurations and recommend by
    /// out-of-sample deviance.
    Select {
        #[command(flatten)]
        data: DataArgs,
        /// Candidate subgroup counts, e.g. `--k-values 1,2,3`.
        #[arg(long, value_delimiter = ',', required = true)]
        k_values: Vec<usize>,
        /// Candidate state counts.
        #[arg(long, value_delimiter = ',', required = true)]
        s_values: Vec<usize>,
        /// Training fraction of the split.
        #[arg(long)]
        split: Option<f64>,
    },
    /// Assign patients to subgroups, offline or online.
    Assign {
        #[command(flatten)]
        data: DataArgs,
        /// Fitted model JSON.
        #[arg(long)]
        model: PathBuf,
        /// Posterior draws JSON for draw-averaged assignment.
        #[arg(long)]
        draws: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "online")]
        mode: AssignCliMode,
        /// Prefix length for online mode (default: full trajectory).
        #[arg(long)]
        t: Option<usize>,
    },
    /// Viterbi-decode latent state paths under each patient's assigned
    /// subgroup.
    Decode {
        #[command(flatten)]
        data: DataArgs,
        /// Fitted model JSON.
        #[arg(long)]
        model: PathBuf,
    },
    /// Cluster validity indices per symptom panel for an assignment.
    Cvi {
        #[command(flatten)]
        data: DataArgs,
        /// Assignment CSV (as written by `assign`).
        #[arg(long)]
        assignments: PathBuf,
        /// Method name recorded in the output table.
        #[arg(long, default_value = "mhmmx")]
        method: String,
    },
    /// Accuracy-over-time of online assignments against final labels.
    Accuracy {
        #[command(flatten)]
        data: DataArgs,
        /// Fitted model JSON.
        #[arg(long)]
        model: PathBuf,
        /// Posterior draws JSON for draw-averaged assignment.
        #[arg(long)]
        draws: Option<PathBuf>,
        /// Smoothing window in weeks.
        #[arg(long)]
        window: Option<usize>,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::usage("--threads must be at least 1"));
        }
        // a later duplicate initialization is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }

    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }

    // fold command-line overrides into the resolved config before hashing it
    let command_name = match &cli.command {
        Command::Simulate { n, t, missingness } => {
            if let Some(n) = n {
                cfg.simulate.n = *n;
            }
            if let Some(t) = t {
                cfg.simulate.t = *t;
            }
            if let Some(m) = missingness {
                cfg.simulate.missingness = *m;
            }
            "simulate"
        }
        Command::Fit {
            k, s, draws, warmup, ..
        } => {
            if let Some(k) = k {
                cfg.k = *k;
            }
            if let Some(s) = s {
                cfg.s = *s;
            }
            if let Some(d) = draws {
                cfg.sampler.n_draws = *d;
            }
            if let Some(w) = warmup {
                cfg.sampler.n_warmup = *w;
            }
            "fit"
        }
        Command::Select { split, .. } => {
            if let Some(f) = split {
                cfg.split_fraction = *f;
            }
            "select"
        }
        Command::Assign { .. } => "assign",
        Command::Decode { .. } => "decode",
        Command::Cvi { .. } => "cvi",
        Command::Accuracy { window, .. } => {
            if let Some(w) = window {
                cfg.window = *w;
            }
            "accuracy"
        }
    };

    let mut rec = RunRecorder::new(command_name, cfg.seed, &cli.output_dir, &cfg.to_json()?)?;

    match &cli.command {
        Command::Simulate { .. } => commands::cmd_simulate(&cfg, &mut rec)?,
        Command::Fit { data, mode, .. } => {
            commands::cmd_fit(&cfg, &data_paths(data), *mode, &mut rec)?
        }
        Command::Select {
            data,
            k_values,
            s_values,
            ..
        } => commands::cmd_select(&cfg, &data_paths(data), k_values, s_values, &mut rec)?,
        Command::Assign {
            data,
            model,
            draws,
            mode,
            t,
        } => commands::cmd_assign(
            &cfg,
            &data_paths(data),
            model,
            draws.as_deref(),
            *mode,
            *t,
            &mut rec,
        )?,
        Command::Decode { data, model } => {
            commands::cmd_decode(&cfg, &data_paths(data), model, &mut rec)?
        }
        Command::Cvi {
            data,
            assignments,
            method,
        } => commands::cmd_cvi(&cfg, &data_paths(data), assignments, method, &mut rec)?,
        Command::Accuracy {
            data,
            model,
            draws,
            ..
        } => commands::cmd_accuracy(&cfg, &data_paths(data), model, draws.as_deref(), &mut rec)?,
    }

    rec.finish()
}

fn data_paths(d: &DataArgs) -> DataPaths<'_> {
    DataPaths {
        baseline: &d.baseline,
        trajectory: &d.trajectory,
        schema: &d.schema,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!(
                "{}",
                serde_json::to_string(&e).unwrap_or_else(|_| format!("{{\"error\":\"{}\"}}", e.error))
            );
            ExitCode::from(e.exit_code)
        }
    }
}
