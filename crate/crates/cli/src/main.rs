use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use lyapnav::harness::{
    self, emit_learning_curve, format_summary_table, load_config, read_log_csv, read_log_dir, summarize,
    summarize_per_seed, summary_csv, Algorithm,
};

#[derive(Parser)]
#[command(name = "lyapnav", version, about = "Train and evaluate shaped DDPG/PPO navigation agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgoArg {
    Ddpg,
    Ppo,
}

#[derive(Clone, Copy, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Subcommand)]
enum Command {
    /// Run one training job per seed and write per-run CSV logs.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        algo: Option<AlgoArg>,
        #[arg(long, value_enum)]
        shaping: Option<Toggle>,
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long)]
        episodes: Option<usize>,
        /// Repeat to run several seeds.
        #[arg(long = "seed", num_args = 1..)]
        seeds: Vec<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pool every run CSV in a directory into a min/max/avg table.
    Summarize {
        #[arg(long = "in")]
        input: PathBuf,
        /// Summary CSV path; the per-seed breakdown goes next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Trailing moving average of one run's rewards, as CSV on stdout.
    Curve {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 20)]
        window: usize,
    },
}

fn train(
    config: PathBuf,
    algo: Option<AlgoArg>,
    shaping: Option<Toggle>,
    eta: Option<f64>,
    episodes: Option<usize>,
    seeds: Vec<u64>,
    out: Option<PathBuf>,
) -> Result<bool> {
    let mut cfg = load_config(&config).with_context(|| format!("loading {}", config.display()))?;
    if let Some(a) = algo {
        cfg.algorithm = match a {
            AlgoArg::Ddpg => Algorithm::Ddpg,
            AlgoArg::Ppo => Algorithm::Ppo,
        };
    }
    if let Some(s) = shaping {
        cfg.shaping.enabled = matches!(s, Toggle::On);
    }
    if let Some(e) = eta {
        cfg.shaping.eta = e;
    }
    if let Some(n) = episodes {
        cfg.episodes = n;
    }
    if !seeds.is_empty() {
        cfg.seeds = seeds;
    }
    if let Some(o) = out {
        cfg.output_dir = o;
    }
    let outcomes = harness::run_experiment(&cfg)?;
    let mut all_ok = true;
    for o in outcomes {
        match o.result {
            Ok(log) => {
                let avg = log.rewards().iter().sum::<f64>() / log.records.len().max(1) as f64;
                println!(
                    "seed {}: {} episodes, avg reward {:.2}, {:.1}s -> {}",
                    o.seed,
                    log.records.len(),
                    avg,
                    log.wall_clock_secs,
                    o.csv_path.display()
                );
            }
            Err(e) => {
                all_ok = false;
                eprintln!("seed {}: failed: {e}", o.seed);
            }
        }
    }
    Ok(all_ok)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train { config, algo, shaping, eta, episodes, seeds, out } => {
            train(config, algo, shaping, eta, episodes, seeds, out)
        }
        Command::Summarize { input, out } => {
            let logs = read_log_dir(&input)?;
            if logs.is_empty() {
                bail!("no run logs found in {}", input.display());
            }
            let rows = summarize(&logs)?;
            print!("{}", format_summary_table(&rows));
            fs::write(&out, summary_csv(&rows)).with_context(|| format!("writing {}", out.display()))?;
            let per_seed = summarize_per_seed(&logs)?;
            let per_seed_path = out.with_extension("per_seed.csv");
            fs::write(&per_seed_path, summary_csv(&per_seed))
                .with_context(|| format!("writing {}", per_seed_path.display()))?;
            Ok(true)
        }
        Command::Curve { input, window } => {
            let log = read_log_csv(&input)?;
            print!("{}", emit_learning_curve(&log, window)?);
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
