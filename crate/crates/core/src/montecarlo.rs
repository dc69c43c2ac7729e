//! Monte Carlo evaluation of the performance criterion under common random
//! numbers, and the relative-performance statistics built on top of it.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{MarketModel, PenaltyParams, Regime};
use crate::sim::{
    midprice_noise, simulate_execution, simulate_impact_path, ExecutionTrajectory, InitialState, SimConfig,
};
use crate::strategy::Strategy;

pub const QUANTILE_LEVELS: [f64; 5] = [0.05, 0.25, 0.50, 0.75, 0.95];
const BP: f64 = 1e4;
const MAX_BINS: usize = 2_000;

/// Realised value of one trajectory.
///
/// The running penalty is the left-endpoint sum `phi * sum_k Q_k^2 dt`.
pub fn performance(traj: &ExecutionTrajectory, penalties: &PenaltyParams) -> f64 {
    let n = traj.times.len() - 1;
    let (x_t, s_t, q_t) = traj.terminal();
    let running = || {
        let dt = penalties.horizon / n as f64;
        penalties.phi * traj.q[..n].iter().map(|q| q * q).sum::<f64>() * dt
    };
    match penalties.regime {
        Regime::Nonlimiting => x_t + q_t * (s_t - penalties.kappa * q_t) - running(),
        Regime::KappaInfinity => x_t - running(),
        Regime::KappaInfinityPhiZero => x_t,
    }
}

/// Everything the runner needs besides the model and penalties.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExperimentSetup {
    pub init: InitialState,
    pub a0: f64,
    pub b0: f64,
    pub paths: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerformanceSample {
    pub path_index: u64,
    /// One value per strategy, in the order the strategies were given.
    pub phi: Vec<f64>,
    pub clamps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    /// Observations outside the central 99% that were left out.
    pub trimmed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelativePerformance {
    pub baseline: String,
    pub candidate: String,
    /// Mean over paths of `(phi_c - phi_b) / phi_b * 1e4`.
    pub mean_bp: Option<f64>,
    pub se_bp: Option<f64>,
    /// `(mean phi_c - mean phi_b) / mean phi_b * 1e4`.
    pub ratio_of_means_bp: f64,
    /// Delta-method standard error of `ratio_of_means_bp`.
    pub ratio_of_means_se_bp: f64,
    pub quantile_levels: [f64; 5],
    pub quantiles: Option<[f64; 5]>,
    pub histogram: Option<Histogram>,
    /// Paths with a non-positive baseline value, excluded from the per-path statistic.
    pub non_positive_baseline: Vec<u64>,
    #[serde(skip)]
    pub per_path_bp: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerformanceSummary {
    pub paths: usize,
    pub master_seed: u64,
    pub n_steps: usize,
    pub regime: Regime,
    pub strategies: Vec<String>,
    pub mean_phi: Vec<f64>,
    pub se_phi: Vec<f64>,
    pub clamp_fraction: f64,
    pub relative: Vec<RelativePerformance>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentOutcome {
    pub summary: PerformanceSummary,
    pub samples: Vec<PerformanceSample>,
}

fn simulate_path(
    index: u64,
    model: &MarketModel,
    penalties: &PenaltyParams,
    cfg: &SimConfig,
    strategies: &[Strategy],
    setup: &ExperimentSetup,
) -> Result<PerformanceSample> {
    let path = simulate_impact_path(model, cfg, penalties.horizon, setup.a0, setup.b0, index)?;
    let noise = midprice_noise(cfg, index);
    let phi = strategies
        .iter()
        .map(|s| {
            simulate_execution(&path, s, model, penalties, cfg, setup.init, &noise).map(|tr| performance(&tr, penalties))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PerformanceSample { path_index: index, phi, clamps: path.clamps })
}

/// Simulates every strategy on paths `0..setup.paths` and aggregates.
///
/// All strategies on a given path see the same impact path and midprice
/// noise. The first failing path (in index order) aborts the run.
pub fn run_experiment(
    model: &MarketModel,
    penalties: &PenaltyParams,
    cfg: &SimConfig,
    strategies: &[Strategy],
    setup: &ExperimentSetup,
) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    if setup.paths == 0 {
        return Err(Error::invalid("paths", "must be at least 1"));
    }
    if strategies.is_empty() {
        return Err(Error::invalid("strategies", "at least one strategy is required"));
    }
    let results: Vec<Result<PerformanceSample>> = (0..setup.paths as u64)
        .into_par_iter()
        .map(|i| simulate_path(i, model, penalties, cfg, strategies, setup))
        .collect();
    let mut samples = Vec::with_capacity(results.len());
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(s) => samples.push(s),
            Err(e) => return Err(Error::PathFailed { path_index: i as u64, source: Box::new(e) }),
        }
    }
    let summary = summarize(&samples, strategies, penalties, cfg);
    Ok(ExperimentOutcome { summary, samples })
}

fn mean_and_se(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    if n < 2.0 {
        return (mean, 0.0);
    }
    let var = xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn summarize(
    samples: &[PerformanceSample],
    strategies: &[Strategy],
    penalties: &PenaltyParams,
    cfg: &SimConfig,
) -> PerformanceSummary {
    let labels: Vec<String> = strategies.iter().map(Strategy::label).collect();
    let (mean_phi, se_phi): (Vec<f64>, Vec<f64>) = (0..strategies.len())
        .map(|j| mean_and_se(samples.iter().map(move |s| s.phi[j])))
        .unzip();
    let mut relative = Vec::new();
    for b in 0..strategies.len() {
        for c in 0..strategies.len() {
            if b != c {
                let mut r = relative_performance(samples, b, c);
                r.baseline = labels[b].clone();
                r.candidate = labels[c].clone();
                relative.push(r);
            }
        }
    }
    let clamps: usize = samples.iter().map(|s| s.clamps).sum();
    PerformanceSummary {
        paths: samples.len(),
        master_seed: cfg.master_seed,
        n_steps: cfg.n_steps,
        regime: penalties.regime,
        strategies: labels,
        mean_phi,
        se_phi,
        clamp_fraction: clamps as f64 / (2 * cfg.n_steps * samples.len()) as f64,
        relative,
    }
}

/// Relative performance of strategy column `candidate` against `baseline`.
pub fn relative_performance(samples: &[PerformanceSample], baseline: usize, candidate: usize) -> RelativePerformance {
    let mut per_path = Vec::with_capacity(samples.len());
    let mut excluded = Vec::new();
    for s in samples {
        let (pb, pc) = (s.phi[baseline], s.phi[candidate]);
        if pb > 0.0 {
            per_path.push((pc - pb) / pb * BP);
        } else {
            excluded.push(s.path_index);
        }
    }

    let (mb, _) = mean_and_se(samples.iter().map(|s| s.phi[baseline]));
    let (mc, _) = mean_and_se(samples.iter().map(|s| s.phi[candidate]));
    let ratio = mc / mb;
    let (_, se_resid) = mean_and_se(samples.iter().map(|s| s.phi[candidate] - ratio * s.phi[baseline]));

    let (mean_bp, se_bp, quantiles, histogram) = if per_path.is_empty() {
        (None, None, None, None)
    } else {
        let (m, se) = mean_and_se(per_path.iter().copied());
        let mut sorted = per_path.clone();
        sorted.sort_by(f64::total_cmp);
        let q = QUANTILE_LEVELS.map(|p| nearest_rank(&sorted, p));
        (Some(m), Some(se), Some(q), Some(freedman_diaconis(&sorted)))
    };

    RelativePerformance {
        baseline: baseline.to_string(),
        candidate: candidate.to_string(),
        mean_bp,
        se_bp,
        ratio_of_means_bp: (mc - mb) / mb * BP,
        ratio_of_means_se_bp: se_resid / mb.abs() * BP,
        quantile_levels: QUANTILE_LEVELS,
        quantiles,
        histogram,
        non_positive_baseline: excluded,
        per_path_bp: per_path,
    }
}

/// Nearest-rank quantile of sorted data: the `ceil(p n)`-th smallest value.
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = ((p * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

/// Freedman-Diaconis histogram of the central 99% of `sorted`.
pub fn freedman_diaconis(sorted: &[f64]) -> Histogram {
    let lo = nearest_rank(sorted, 0.005);
    let hi = nearest_rank(sorted, 0.995);
    let kept: Vec<f64> = sorted.iter().copied().filter(|&x| x >= lo && x <= hi).collect();
    let trimmed = sorted.len() - kept.len();
    let iqr = nearest_rank(&kept, 0.75) - nearest_rank(&kept, 0.25);
    let width = 2.0 * iqr / (kept.len() as f64).cbrt();
    let span = hi - lo;
    let bins = if width > 0.0 && span > 0.0 {
        ((span / width).ceil() as usize).clamp(1, MAX_BINS)
    } else {
        1
    };
    let (start, step) = if span > 0.0 { (lo, span / bins as f64) } else { (lo - 0.5, 1.0) };
    let edges: Vec<f64> = (0..=bins).map(|k| start + k as f64 * step).collect();
    let mut counts = vec![0u64; bins];
    for x in kept {
        let k = (((x - start) / step) as usize).min(bins - 1);
        counts[k] += 1;
    }
    Histogram { edges, counts, trimmed }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CirParams;
    use crate::strategy::StrategyKind;
    use approx::assert_relative_eq;

    fn example2() -> MarketModel {
        MarketModel::linear_cir(
            CirParams { lambda: 1.0, theta: 1e-4, sigma: 8e-3 },
            CirParams { lambda: 1.0, theta: 5e-4, sigma: 8e-3 },
            0.7,
            0.2,
        )
        .unwrap()
    }

    fn setup(paths: usize) -> ExperimentSetup {
        ExperimentSetup { init: InitialState { x0: 0.0, s0: 40.0, q0: 5000.0 }, a0: 1e-4, b0: 5e-4, paths }
    }

    fn sample(i: u64, phi: Vec<f64>) -> PerformanceSample {
        PerformanceSample { path_index: i, phi, clamps: 0 }
    }

    #[test]
    fn hold_value_without_volatility() {
        let m = {
            let mut m = example2();
            m.sigma = 0.0;
            m
        };
        let pen = PenaltyParams::new(10.0, 0.01, 1.0, Regime::Nonlimiting).unwrap();
        let cfg = SimConfig::new(100, 0).unwrap();
        let s = setup(1);
        let path = simulate_impact_path(&m, &cfg, 1.0, s.a0, s.b0, 0).unwrap();
        let tr = simulate_execution(
            &path,
            &Strategy::new(StrategyKind::Hold),
            &m,
            &pen,
            &cfg,
            s.init,
            &midprice_noise(&cfg, 0),
        )
        .unwrap();
        let q0 = s.init.q0;
        let expected = q0 * (40.0 - 10.0 * q0) - 0.01 * q0 * q0;
        assert_relative_eq!(performance(&tr, &pen), expected, max_relative = 1e-12);
    }

    #[test]
    fn limiting_value_is_terminal_cash() {
        let m = example2();
        let pen = PenaltyParams::new(0.0, 0.0, 1.0, Regime::KappaInfinityPhiZero).unwrap();
        let cfg = SimConfig::new(100, 3).unwrap();
        let path = simulate_impact_path(&m, &cfg, 1.0, 1e-4, 5e-4, 0).unwrap();
        let tr = simulate_execution(
            &path,
            &Strategy::new(StrategyKind::Order1),
            &m,
            &pen,
            &cfg,
            setup(1).init,
            &midprice_noise(&cfg, 0),
        )
        .unwrap();
        assert_eq!(performance(&tr, &pen), tr.x[100]);
    }

    #[test]
    fn nonlimiting_value_against_direct_loop() {
        let m = example2();
        let pen = PenaltyParams::new(10.0, 0.01, 1.0, Regime::Nonlimiting).unwrap();
        let cfg = SimConfig::new(1_000, 17).unwrap();
        let path = simulate_impact_path(&m, &cfg, 1.0, 1.5e-4, 7.5e-4, 4).unwrap();
        let noise = midprice_noise(&cfg, 4);
        let tr = simulate_execution(&path, &Strategy::new(StrategyKind::Order0), &m, &pen, &cfg, setup(1).init, &noise)
            .unwrap();
        let dt = 1e-3;
        let (mut x, mut s, mut q, mut pen_sum) = (0.0, 40.0, 5000.0, 0.0);
        for k in 0..1_000 {
            pen_sum += q * q * dt;
            let v = tr.nu[k];
            x += v * (s - path.a[k] * v) * dt;
            s += -path.b[k] * v * dt + 0.2 * dt.sqrt() * noise.xi[k];
            q -= v * dt;
        }
        let direct = x + q * (s - 10.0 * q) - 0.01 * pen_sum;
        assert_relative_eq!(performance(&tr, &pen), direct, max_relative = 1e-12);
    }

    #[test]
    fn nearest_rank_quantiles_of_one_to_hundred() {
        let xs: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(QUANTILE_LEVELS.map(|p| nearest_rank(&xs, p)), [5.0, 25.0, 50.0, 75.0, 95.0]);
    }

    #[test]
    fn constant_ratio_gives_one_basis_point() {
        let samples: Vec<_> = (0..50).map(|i| sample(i, vec![100.0 + i as f64, 1.0001 * (100.0 + i as f64)])).collect();
        let r = relative_performance(&samples, 0, 1);
        assert_relative_eq!(r.mean_bp.unwrap(), 1.0, max_relative = 1e-9);
        assert_relative_eq!(r.ratio_of_means_bp, 1.0, max_relative = 1e-9);
        for q in r.quantiles.unwrap() {
            assert_relative_eq!(q, 1.0, max_relative = 1e-9);
        }
    }

    #[test]
    fn non_positive_baselines_are_excluded_and_reported() {
        let samples = vec![sample(0, vec![1.0, 2.0]), sample(1, vec![-1.0, 2.0]), sample(2, vec![3.0, 2.0])];
        let r = relative_performance(&samples, 0, 1);
        assert_eq!(r.non_positive_baseline, vec![1]);
        assert_relative_eq!(r.mean_bp.unwrap(), 0.5 * (1e4 - 1e4 / 3.0), max_relative = 1e-14);
        // The ratio of means still uses every path.
        assert_relative_eq!(r.ratio_of_means_bp, 1e4, max_relative = 1e-14);
        let all_bad = relative_performance(&samples[1..2], 0, 1);
        assert!(all_bad.mean_bp.is_none() && all_bad.quantiles.is_none());
    }

    #[test]
    fn histogram_counts_central_mass() {
        let xs: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        let h = freedman_diaconis(&xs);
        assert_eq!(h.counts.iter().sum::<u64>() as usize + h.trimmed, 1000);
        assert_eq!(h.edges.len(), h.counts.len() + 1);
        assert!(h.trimmed <= 10);
        let flat = freedman_diaconis(&[3.0; 20]);
        assert_eq!(flat.counts, vec![20]);
    }

    #[test]
    fn identical_strategies_give_zero_relative_performance() {
        let m = example2();
        let pen = PenaltyParams::new(10.0, 0.01, 1.0, Regime::Nonlimiting).unwrap();
        let cfg = SimConfig::new(100, 5).unwrap();
        let s = Strategy::new(StrategyKind::Order0);
        let out = run_experiment(&m, &pen, &cfg, &[s, s], &setup(20)).unwrap();
        let r = &out.summary.relative[0];
        assert_eq!(r.mean_bp, Some(0.0));
        assert_eq!(r.ratio_of_means_bp, 0.0);
        assert_eq!(r.quantiles, Some([0.0; 5]));
    }

    #[test]
    fn single_path_mean_equals_sample() {
        let m = example2();
        let pen = PenaltyParams::new(10.0, 0.01, 1.0, Regime::Nonlimiting).unwrap();
        let cfg = SimConfig::new(100, 5).unwrap();
        let out = run_experiment(&m, &pen, &cfg, &[Strategy::new(StrategyKind::Order1)], &setup(1)).unwrap();
        assert_eq!(out.summary.mean_phi[0], out.samples[0].phi[0]);
    }

    #[test]
    fn results_do_not_depend_on_order_workers_or_extra_strategies() {
        let m = example2();
        let pen = PenaltyParams::new(10.0, 0.01, 1.0, Regime::Nonlimiting).unwrap();
        let cfg = SimConfig::new(200, 42).unwrap();
        let ac = Strategy::new(StrategyKind::AlmgrenChriss { a: 1e-4, b: 5e-4 });
        let o0 = Strategy::new(StrategyKind::Order0);
        let o1 = Strategy::new(StrategyKind::Order1);
        let st = setup(16);
        let base = run_experiment(&m, &pen, &cfg, &[ac, o0], &st).unwrap();
        let swapped = run_experiment(&m, &pen, &cfg, &[o0, ac], &st).unwrap();
        let extended = run_experiment(&m, &pen, &cfg, &[ac, o1, o0], &st).unwrap();
        let single = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| run_experiment(&m, &pen, &cfg, &[ac, o0], &st).unwrap());
        for i in 0..16 {
            let p = &base.samples[i].phi;
            assert_eq!(p[0].to_bits(), swapped.samples[i].phi[1].to_bits());
            assert_eq!(p[1].to_bits(), swapped.samples[i].phi[0].to_bits());
            assert_eq!(p[0].to_bits(), extended.samples[i].phi[0].to_bits());
            assert_eq!(p[1].to_bits(), extended.samples[i].phi[2].to_bits());
        }
        assert_eq!(base, single);
    }

    #[test]
    fn failing_path_is_reported() {
        let mut m = example2();
        m.f = crate::model::ImpactFunction::linear(-1.0);
        let pen = PenaltyParams::new(10.0, 0.01, 1.0, Regime::Nonlimiting).unwrap();
        let cfg = SimConfig::new(10, 0).unwrap();
        let err = run_experiment(&m, &pen, &cfg, &[Strategy::new(StrategyKind::Order0)], &setup(3)).unwrap_err();
        assert!(matches!(err, Error::PathFailed { path_index: 0, .. }));
    }
}
