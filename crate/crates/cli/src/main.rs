//! `headway` — train, evaluate, and stress-test the vehicle-following
//! control stack from the command line.
//!
//! Configuration precedence everywhere: built-in defaults, then the
//! `--config` TOML file, then explicit flags.  Every run writes a resolved
//! configuration snapshot and a manifest into its output directory; rerunning
//! with an identical snapshot reproduces logs and checkpoints byte for byte.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use headway_core::ddpg::Variant;
use headway_core::CoreError;

use config::{resolve_out_dir, sha256_hex, RunConfig};

/// CLI failure: `usage` selects exit code 2 (operator mistake) over 1
/// (runtime failure).
#[derive(Debug)]
pub struct CliError {
    message: String,
    usage: bool,
}

impl CliError {
    fn new(message: impl Into<String>) -> Self {
        CliError { message: message.into(), usage: false }
    }

    fn usage(message: impl Into<String>) -> Self {
        CliError { message: message.into(), usage: true }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        CliError::new(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Toggle {
    On,
    Off,
}

impl Toggle {
    fn as_bool(self) -> bool {
        self == Toggle::On
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum VariantArg {
    Deep,
    Shallow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum VelRange {
    /// Lead cruising speeds 17-40 m/s.
    High,
    /// Lead cruising speeds 12-30 m/s.
    Low,
}

#[derive(Parser)]
#[command(
    name = "headway",
    version,
    about = "Longitudinal vehicle-following: training, safety cages, evaluation, adversarial testing"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a policy (writes logs, checkpoints, and a reward curve).
    Train {
        /// TOML run configuration (defaults apply when omitted).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Train under the rule-based safety cage.
        #[arg(long, value_enum)]
        cage: Option<Toggle>,
        /// Apply the -0.1 reward penalty on cage interventions.
        #[arg(long, value_enum)]
        penalty: Option<Toggle>,
        /// Actor architecture.
        #[arg(long, value_enum)]
        variant: Option<VariantArg>,
        /// Training seed (overrides [ddpg] seed).
        #[arg(long)]
        seed: Option<u64>,
        /// Training episodes (overrides [ddpg] episodes).
        #[arg(long)]
        episodes: Option<u32>,
        /// Also write a per-step trace.csv.
        #[arg(long)]
        trace: bool,
        /// Output directory (default: $HEADWAY_OUT_ROOT/train-<hash>).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint over a naturalistic scenario campaign.
    Eval {
        /// Actor checkpoint to evaluate.
        #[arg(long)]
        model: PathBuf,
        /// TOML run configuration (defaults apply when omitted).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Campaign episodes (overrides [campaign] episodes).
        #[arg(long)]
        episodes: Option<u32>,
        /// Campaign seed (overrides [campaign] seed).
        #[arg(long)]
        seed: Option<u64>,
        /// Evaluate with the safety cage active.
        #[arg(long, value_enum)]
        cage: Option<Toggle>,
        /// Output directory (default: $HEADWAY_OUT_ROOT/eval-<hash>).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train adversarial lead vehicles against a frozen checkpoint.
    AdvEval {
        /// Host actor checkpoint under attack.
        #[arg(long)]
        model: PathBuf,
        /// TOML run configuration (defaults apply when omitted).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Lead cruising-speed preset (overrides [env] lead_vel_range).
        #[arg(long, value_enum)]
        vel_range: Option<VelRange>,
        /// Independent adversary runs (overrides [campaign] adversary_runs).
        #[arg(long)]
        runs: Option<u32>,
        /// Adversary training episodes (overrides [adversary] episodes).
        #[arg(long)]
        episodes: Option<u32>,
        /// Adversary seed (overrides [adversary] seed).
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default: $HEADWAY_OUT_ROOT/adv-eval-<hash>).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the rule-based braking demand for a headway and/or
    /// time-to-collision value.
    CageCheck {
        /// Time headway, s.
        #[arg(long)]
        th: Option<f64>,
        /// Time to collision, s.
        #[arg(long)]
        ttc: Option<f64>,
    },
    /// Summarize the logs in a run directory as plain-text tables.
    Report {
        /// Run directory holding episodes.csv / eval.csv / adv_run*.csv.
        #[arg(long)]
        logs: PathBuf,
    },
    /// Render a log file as a PNG curve (type detected from the header).
    Plot {
        /// Log file to render.
        #[arg(long)]
        log: PathBuf,
        /// Output image path (default: log path with .png extension).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Moving-average smoothing window.
        #[arg(long, default_value_t = 50)]
        window: usize,
    },
}

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig, CliError> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::Train { config, cage, penalty, variant, seed, episodes, trace, out } => {
            let mut cfg = load_config(&config)?;
            if let Some(t) = cage {
                cfg.ddpg.cage_enabled = t.as_bool();
            }
            if let Some(t) = penalty {
                cfg.ddpg.penalty_enabled = t.as_bool();
            }
            if let Some(v) = variant {
                cfg.ddpg.variant = match v {
                    VariantArg::Deep => Variant::Deep,
                    VariantArg::Shallow => Variant::Shallow,
                };
            }
            if let Some(s) = seed {
                cfg.ddpg.seed = s;
            }
            if let Some(n) = episodes {
                cfg.ddpg.episodes = n;
            }
            if trace {
                cfg.campaign.trace = true;
            }
            cfg.validate()?;
            let hash = sha256_hex(cfg.to_toml()?.as_bytes());
            let out_dir = resolve_out_dir(out, "train", &hash);
            commands::cmd_train(&cfg, &out_dir)
        }
        Cmd::Eval { model, config, episodes, seed, cage, out } => {
            let mut cfg = load_config(&config)?;
            if let Some(n) = episodes {
                cfg.campaign.episodes = n;
            }
            if let Some(s) = seed {
                cfg.campaign.seed = s;
            }
            if let Some(t) = cage {
                cfg.campaign.cage_enabled = t.as_bool();
            }
            cfg.validate()?;
            let hash = sha256_hex(cfg.to_toml()?.as_bytes());
            let out_dir = resolve_out_dir(out, "eval", &hash);
            commands::cmd_eval(&cfg, &model, &out_dir)
        }
        Cmd::AdvEval { model, config, vel_range, runs, episodes, seed, out } => {
            let mut cfg = load_config(&config)?;
            if let Some(r) = vel_range {
                cfg.env.lead_vel_range = match r {
                    VelRange::High => [17.0, 40.0],
                    VelRange::Low => [12.0, 30.0],
                };
            }
            if let Some(r) = runs {
                cfg.campaign.adversary_runs = r;
            }
            if let Some(n) = episodes {
                cfg.adversary.episodes = n;
            }
            if let Some(s) = seed {
                cfg.adversary.seed = s;
            }
            cfg.validate()?;
            let hash = sha256_hex(cfg.to_toml()?.as_bytes());
            let out_dir = resolve_out_dir(out, "adv-eval", &hash);
            commands::cmd_adv_eval(&cfg, &model, &out_dir)
        }
        Cmd::CageCheck { th, ttc } => commands::cmd_cage_check(th, ttc),
        Cmd::Report { logs } => commands::cmd_report(&logs),
        Cmd::Plot { log, out, window } => commands::cmd_plot(&log, out, window),
    }
}

fn main() {
    // clap itself exits with 2 on unknown subcommands or malformed flags
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(if e.usage { 2 } else { 1 });
    }
}
