//! Euler simulation of the impact diffusions, the midprice and the trader's
//! book on a uniform grid.
//!
//! Randomness is keyed to `(master_seed, path_index)`: every path owns three
//! ChaCha streams (midprice `W`, the `B1` driver and the residual of `B2`), so
//! a path is reproducible regardless of which worker computes it or which
//! strategies are run against it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DiffusionSpec, MarketModel, PenaltyParams};
use crate::strategy::{rate, Strategy, StrategyKind};

pub const DEFAULT_STEPS: usize = 1_000;

const STREAM_MIDPRICE: u64 = 0;
const STREAM_B1: u64 = 1;
const STREAM_B2_RESIDUAL: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    #[default]
    EulerFullTruncation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_steps: usize,
    pub master_seed: u64,
    pub scheme: Scheme,
    pub force_final_liquidation: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_steps: DEFAULT_STEPS,
            master_seed: 0,
            scheme: Scheme::EulerFullTruncation,
            force_final_liquidation: true,
        }
    }
}

impl SimConfig {
    pub fn new(n_steps: usize, master_seed: u64) -> Result<Self> {
        let cfg = Self { n_steps, master_seed, ..Self::default() };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_steps < 2 {
            return Err(Error::invalid("n_steps", format!("must be at least 2, got {}", self.n_steps)));
        }
        Ok(())
    }

    pub fn dt(&self, horizon: f64) -> f64 {
        horizon / self.n_steps as f64
    }

    pub fn times(&self, horizon: f64) -> Vec<f64> {
        let dt = self.dt(horizon);
        let mut t: Vec<f64> = (0..=self.n_steps).map(|k| k as f64 * dt).collect();
        t[self.n_steps] = horizon;
        t
    }
}

/// One ChaCha stream of path `path_index`.
pub fn path_rng(master_seed: u64, path_index: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(3 * path_index + stream);
    rng
}

fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImpactPath {
    pub path_index: u64,
    pub times: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// Standard normals driving `B1` (and hence `b`), one per step.
    pub z_b1: Vec<f64>,
    /// Independent standard normals completing `B2 = rho B1 + sqrt(1 - rho^2) B_perp`.
    pub z_perp: Vec<f64>,
    /// Number of post-step states clamped to zero, summed over `a` and `b`.
    pub clamps: usize,
}

/// Standard normals `xi_k` driving the midprice on one path.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MidpriceNoise {
    pub xi: Vec<f64>,
}

pub fn midprice_noise(cfg: &SimConfig, path_index: u64) -> MidpriceNoise {
    let mut rng = path_rng(cfg.master_seed, path_index, STREAM_MIDPRICE);
    MidpriceNoise { xi: normals(&mut rng, cfg.n_steps) }
}

fn check_initial(name: &str, x0: f64, spec: &DiffusionSpec) -> Result<()> {
    if !x0.is_finite() {
        return Err(Error::InvalidInitialState(format!("{name}0 = {x0} is not finite")));
    }
    if spec.as_cir().is_some() && x0 <= 0.0 {
        return Err(Error::InvalidInitialState(format!("{name}0 = {x0} must be positive for CIR dynamics")));
    }
    Ok(())
}

fn euler_step(spec: &DiffusionSpec, x: f64, dt: f64, sqrt_dt: f64, z: f64, clamps: &mut usize) -> f64 {
    let next = x + spec.drift(x) * dt + spec.diffusion(x.max(0.0)) * sqrt_dt * z;
    if spec.as_cir().is_some() && next < 0.0 {
        *clamps += 1;
        0.0
    } else {
        next
    }
}

/// Simulates `(a, b)` on the grid of `cfg` from `(a0, b0)`.
pub fn simulate_impact_path(
    model: &MarketModel,
    cfg: &SimConfig,
    horizon: f64,
    a0: f64,
    b0: f64,
    path_index: u64,
) -> Result<ImpactPath> {
    cfg.validate()?;
    check_initial("a", a0, &model.a_dyn)?;
    check_initial("b", b0, &model.b_dyn)?;
    let n = cfg.n_steps;
    let dt = cfg.dt(horizon);
    let sqrt_dt = dt.sqrt();
    let z_b1 = normals(&mut path_rng(cfg.master_seed, path_index, STREAM_B1), n);
    let z_perp = normals(&mut path_rng(cfg.master_seed, path_index, STREAM_B2_RESIDUAL), n);
    let rho = model.rho;
    let rho_perp = (1.0 - rho * rho).max(0.0).sqrt();

    let mut a = Vec::with_capacity(n + 1);
    let mut b = Vec::with_capacity(n + 1);
    a.push(a0);
    b.push(b0);
    let mut clamps = 0;
    for k in 0..n {
        let za = rho * z_b1[k] + rho_perp * z_perp[k];
        a.push(euler_step(&model.a_dyn, a[k], dt, sqrt_dt, za, &mut clamps));
        b.push(euler_step(&model.b_dyn, b[k], dt, sqrt_dt, z_b1[k], &mut clamps));
    }
    Ok(ImpactPath { path_index, times: cfg.times(horizon), a, b, z_b1, z_perp, clamps })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialState {
    pub x0: f64,
    pub s0: f64,
    pub q0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExecutionTrajectory {
    pub strategy: Strategy,
    pub init: InitialState,
    pub times: Vec<f64>,
    pub x: Vec<f64>,
    pub s: Vec<f64>,
    pub q: Vec<f64>,
    /// Rate applied on `[t_k, t_{k+1})`; the final entry is 0.
    pub nu: Vec<f64>,
}

impl ExecutionTrajectory {
    pub fn terminal(&self) -> (f64, f64, f64) {
        let n = self.times.len() - 1;
        (self.x[n], self.s[n], self.q[n])
    }
}

/// Runs `strategy` against a fixed impact path and midprice noise.
///
/// In the limiting regimes (and unless disabled in `cfg`) the last step sells
/// whatever remains, `nu = Q / dt`, and `Q_T` is set to exactly 0. The `Hold`
/// benchmark is never forced to trade.
pub fn simulate_execution(
    path: &ImpactPath,
    strategy: &Strategy,
    model: &MarketModel,
    penalties: &PenaltyParams,
    cfg: &SimConfig,
    init: InitialState,
    noise: &MidpriceNoise,
) -> Result<ExecutionTrajectory> {
    cfg.validate()?;
    let n = cfg.n_steps;
    if path.a.len() != n + 1 || noise.xi.len() != n {
        return Err(Error::invalid("path", "impact path or noise does not match the step count"));
    }
    let dt = cfg.dt(penalties.horizon);
    let vol_step = model.sigma * dt.sqrt();
    let force = cfg.force_final_liquidation
        && penalties.regime.is_limiting()
        && strategy.kind != StrategyKind::Hold;

    let mut x = Vec::with_capacity(n + 1);
    let mut s = Vec::with_capacity(n + 1);
    let mut q = Vec::with_capacity(n + 1);
    let mut nu = Vec::with_capacity(n + 1);
    x.push(init.x0);
    s.push(init.s0);
    q.push(init.q0);
    for k in 0..n {
        let (ak, bk) = (path.a[k], path.b[k]);
        let v = if force && k == n - 1 {
            q[k] / dt
        } else if q[k] == 0.0 {
            0.0
        } else {
            rate(strategy, path.times[k], q[k], ak, bk, model, penalties)?
        };
        nu.push(v);
        x.push(x[k] + v * (s[k] - model.f.value(ak) * v) * dt);
        s.push(s[k] - model.g.value(bk) * v * dt + vol_step * noise.xi[k]);
        q.push(q[k] - v * dt);
    }
    nu.push(0.0);
    if force {
        q[n] = 0.0;
    }
    Ok(ExecutionTrajectory { strategy: *strategy, init, times: path.times.clone(), x, s, q, nu })
}
