//! File outputs of the `path`, `montecarlo` and `verify` commands.
//!
//! Nothing written here depends on wall-clock time or the environment, so
//! rerunning a command with the same config reproduces its files byte for
//! byte.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::{ExperimentConfig, RawConfig};
use crate::error::Result;
use crate::montecarlo::{run_experiment, ExperimentOutcome, PerformanceSummary};
use crate::sim::{midprice_noise, simulate_execution, simulate_impact_path, ExecutionTrajectory};
use crate::strategy::Strategy;
use crate::verify::{run_suite, LibraryForms, ResidualReport, SuitePoint};

pub const TRAJECTORY_HEADER: &str = "t,a,b,S,Q,X,nu";

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_num(x: f64) -> String {
    format!("{x:.16e}")
}

/// File-name-safe labels, suffixed with their position when repeated.
fn unique_labels(strategies: &[Strategy]) -> Vec<String> {
    let labels: Vec<String> = strategies.iter().map(Strategy::label).collect();
    labels
        .iter()
        .enumerate()
        .map(|(k, l)| if labels.iter().filter(|m| *m == l).count() > 1 { format!("{l}-{k}") } else { l.clone() })
        .collect()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| crate::Error::Io(e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn trajectory_csv(traj: &ExecutionTrajectory, a: &[f64], b: &[f64]) -> String {
    let mut out = String::with_capacity(160 * traj.times.len());
    out.push_str(TRAJECTORY_HEADER);
    out.push('\n');
    for k in 0..traj.times.len() {
        let row = [traj.times[k], a[k], b[k], traj.s[k], traj.q[k], traj.x[k], traj.nu[k]];
        let cells: Vec<String> = row.iter().map(|v| fmt_num(*v)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

#[derive(Debug, Serialize)]
struct PathMetadata<'a> {
    name: &'a str,
    master_seed: u64,
    path_index: u64,
    n_steps: usize,
    clamps: usize,
    files: BTreeMap<String, String>,
    units: BTreeMap<&'static str, &'static str>,
    config: &'a RawConfig,
}

fn column_units() -> BTreeMap<&'static str, &'static str> {
    BTreeMap::from([
        ("t", "time, same unit as penalties.T"),
        ("a", "temporary impact state; f(a) in price per share per (share per unit time)"),
        ("b", "permanent impact state; g(b) in price per share per share"),
        ("S", "midprice, price per share"),
        ("Q", "inventory, shares"),
        ("X", "cash, price units"),
        ("nu", "liquidation rate on [t_k, t_k+1), shares per unit time; last row is 0"),
    ])
}

/// Simulates path `path_index` once and writes one trajectory CSV per
/// strategy plus `path_meta.json`. Returns the written files.
pub fn cmd_path(cfg: &ExperimentConfig, out_dir: &Path, path_index: u64) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let horizon = cfg.penalties.horizon;
    let path = simulate_impact_path(&cfg.model, &cfg.sim, horizon, cfg.setup.a0, cfg.setup.b0, path_index)?;
    let noise = midprice_noise(&cfg.sim, path_index);
    let mut written = Vec::new();
    let mut files = BTreeMap::new();
    for (strategy, label) in cfg.strategies.iter().zip(unique_labels(&cfg.strategies)) {
        let traj = simulate_execution(&path, strategy, &cfg.model, &cfg.penalties, &cfg.sim, cfg.setup.init, &noise)?;
        let name = format!("path_{label}.csv");
        let file = out_dir.join(&name);
        fs::write(&file, trajectory_csv(&traj, &path.a, &path.b))?;
        files.insert(label, name);
        written.push(file);
    }
    let meta = PathMetadata {
        name: &cfg.name,
        master_seed: cfg.sim.master_seed,
        path_index,
        n_steps: cfg.sim.n_steps,
        clamps: path.clamps,
        files,
        units: column_units(),
        config: &cfg.raw,
    };
    let meta_file = out_dir.join("path_meta.json");
    write_json(&meta_file, &meta)?;
    written.push(meta_file);
    Ok(written)
}

#[derive(Debug, Serialize)]
struct SummaryFile<'a> {
    name: &'a str,
    summary: &'a PerformanceSummary,
    feller_warnings: &'a [String],
    config: &'a RawConfig,
}

/// Per-path CSV: `path_index`, one `phi_<label>` column per strategy and one
/// `r_<candidate>_over_<baseline>` column per ordered pair (basis points,
/// empty when the baseline value is not positive).
pub fn per_path_csv(outcome: &ExperimentOutcome, labels: &[String]) -> String {
    let n = labels.len();
    let pairs: Vec<(usize, usize)> =
        (0..n).flat_map(|b| (0..n).filter(move |&c| c != b).map(move |c| (b, c))).collect();
    let mut out = String::from("path_index");
    for l in labels {
        let _ = write!(out, ",phi_{l}");
    }
    for &(b, c) in &pairs {
        let _ = write!(out, ",r_{}_over_{}", labels[c], labels[b]);
    }
    out.push('\n');
    for s in &outcome.samples {
        let _ = write!(out, "{}", s.path_index);
        for v in &s.phi {
            let _ = write!(out, ",{}", fmt_num(*v));
        }
        for &(b, c) in &pairs {
            let (pb, pc) = (s.phi[b], s.phi[c]);
            if pb > 0.0 {
                let _ = write!(out, ",{}", fmt_num((pc - pb) / pb * 1e4));
            } else {
                out.push(',');
            }
        }
        out.push('\n');
    }
    out
}

/// Runs the Monte Carlo experiment and writes `summary.json` and `per_path.csv`.
pub fn cmd_montecarlo(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentOutcome> {
    fs::create_dir_all(out_dir)?;
    let outcome = run_experiment(&cfg.model, &cfg.penalties, &cfg.sim, &cfg.strategies, &cfg.setup)?;
    let file = SummaryFile {
        name: &cfg.name,
        summary: &outcome.summary,
        feller_warnings: &cfg.feller_warnings,
        config: &cfg.raw,
    };
    write_json(&out_dir.join("summary.json"), &file)?;
    fs::write(out_dir.join("per_path.csv"), per_path_csv(&outcome, &unique_labels(&cfg.strategies)))?;
    Ok(outcome)
}

#[derive(Debug, Serialize)]
pub struct VerifyFile {
    pub name: String,
    pub all_passed: bool,
    pub expansion_point: SuitePoint,
    pub reports: Vec<ResidualReport>,
}

/// Runs the verification suite at the config's initial impact state and
/// writes `verify.json`.
pub fn cmd_verify(cfg: &ExperimentConfig, out_dir: &Path) -> Result<VerifyFile> {
    fs::create_dir_all(out_dir)?;
    let point = SuitePoint { abar: cfg.setup.a0, bbar: cfg.setup.b0 };
    let reports = run_suite(&LibraryForms, &cfg.model, &cfg.penalties, point)?;
    let file = VerifyFile {
        name: cfg.name.clone(),
        all_passed: reports.iter().all(ResidualReport::passed),
        expansion_point: point,
        reports,
    };
    write_json(&out_dir.join("verify.json"), &file)?;
    Ok(file)
}
