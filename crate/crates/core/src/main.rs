use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use stochastic_liquidation::config::{load_config, ExperimentConfig};
use stochastic_liquidation::report::{cmd_montecarlo, cmd_path, cmd_verify};
use stochastic_liquidation::Result;

#[derive(Parser)]
#[command(name = "liquidate", version, about = "Liquidation strategies under stochastic price impact")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to `output.dir` from the config, then `out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override `sim.master_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Override `sim.M`.
    #[arg(long)]
    paths: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Write one simulated trajectory per strategy as CSV.
    Path {
        #[command(flatten)]
        common: Common,
        /// Which path of the seeded family to write.
        #[arg(long, default_value_t = 0)]
        path_index: u64,
    },
    /// Run the Monte Carlo comparison and write summary.json and per_path.csv.
    Montecarlo {
        #[command(flatten)]
        common: Common,
    },
    /// Check every closed form against its numerical oracle; exits 1 on failure.
    Verify {
        #[command(flatten)]
        common: Common,
    },
}

fn prepare(common: &Common) -> Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = load_config(&common.config)?;
    if let Some(seed) = common.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(paths) = common.paths {
        cfg = cfg.with_paths(paths)?;
    }
    for w in &cfg.feller_warnings {
        eprintln!("warning: {w}");
    }
    let out = common.out.clone().or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
    Ok((cfg, out))
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Path { common, path_index } => {
            let (cfg, out) = prepare(&common)?;
            for f in cmd_path(&cfg, &out, path_index)? {
                println!("{}", f.display());
            }
            Ok(true)
        }
        Command::Montecarlo { common } => {
            let (cfg, out) = prepare(&common)?;
            let outcome = cmd_montecarlo(&cfg, &out)?;
            let s = &outcome.summary;
            println!("{} paths, seed {}, regime {}", s.paths, s.master_seed, s.regime);
            for (label, (m, se)) in s.strategies.iter().zip(s.mean_phi.iter().zip(&s.se_phi)) {
                println!("  mean phi [{label}] = {m:.6} (se {se:.6})");
            }
            for r in &s.relative {
                println!(
                    "  {} over {}: ratio of means {:.4} bp (se {:.4}), mean of ratios {} bp",
                    r.candidate,
                    r.baseline,
                    r.ratio_of_means_bp,
                    r.ratio_of_means_se_bp,
                    r.mean_bp.map_or("n/a".into(), |m| format!("{m:.4}")),
                );
            }
            println!("wrote {}", out.display());
            Ok(true)
        }
        Command::Verify { common } => {
            let (cfg, out) = prepare(&common)?;
            let file = cmd_verify(&cfg, &out)?;
            for r in &file.reports {
                println!("{:?} {} max_rel={:e} tol={:e}", r.status, r.name, r.max_rel, r.tolerance);
            }
            println!("wrote {}", out.join("verify.json").display());
            Ok(file.all_passed)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
