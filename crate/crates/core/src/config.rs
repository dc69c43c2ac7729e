//! Experiment configuration files.
//!
//! Configs are TOML documents (conventionally with a `.cfg` extension). Every
//! table rejects unknown keys, and missing required fields are reported by
//! their dotted path, e.g. `penalties.T`. See `configs/example2.cfg` for a
//! complete file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{feller_check, DiffusionSpec, ImpactFunction, MarketModel, PenaltyParams, Regime};
use crate::montecarlo::ExperimentSetup;
use crate::sim::{InitialState, SimConfig, DEFAULT_STEPS};
use crate::strategy::{Strategy, StrategyKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RawImpact {
    pub kind: Option<String>,
    pub slope: Option<f64>,
    pub coefficients: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RawDiffusion {
    pub kind: Option<String>,
    pub lambda: Option<f64>,
    pub theta: Option<f64>,
    pub sigma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RawModel {
    pub f: Option<RawImpact>,
    pub g: Option<RawImpact>,
    pub a: Option<RawDiffusion>,
    pub b: Option<RawDiffusion>,
    pub rho: Option<f64>,
    pub sigma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RawPenalties {
    pub kappa: Option<f64>,
    pub phi: Option<f64>,
    #[serde(rename = "T")]
    pub horizon: Option<f64>,
    pub regime: Option<Regime>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RawSim {
    pub n_steps: Option<usize>,
    pub master_seed: Option<u64>,
    #[serde(rename = "M")]
    pub paths: Option<usize>,
    pub force_final_liquidation: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RawInit {
    #[serde(rename = "X0")]
    pub x0: Option<f64>,
    #[serde(rename = "S0")]
    pub s0: Option<f64>,
    #[serde(rename = "Q0")]
    pub q0: Option<f64>,
    pub a0: Option<f64>,
    pub b0: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RawStrategy {
    pub kind: Option<String>,
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub no_buy: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RawOutput {
    pub dir: Option<PathBuf>,
}

/// The config file as written, before validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub name: Option<String>,
    pub model: Option<RawModel>,
    pub penalties: Option<RawPenalties>,
    pub sim: Option<RawSim>,
    pub init: Option<RawInit>,
    pub strategies: Option<Vec<RawStrategy>>,
    pub output: Option<RawOutput>,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub name: String,
    pub model: MarketModel,
    pub penalties: PenaltyParams,
    pub sim: SimConfig,
    pub setup: ExperimentSetup,
    pub strategies: Vec<Strategy>,
    pub output_dir: Option<PathBuf>,
    /// Human-readable notes for CIR specs that violate the Feller condition.
    pub feller_warnings: Vec<String>,
    pub raw: RawConfig,
}

impl ExperimentConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.sim.master_seed = seed;
        self.raw.sim.get_or_insert_with(RawSim::default).master_seed = Some(seed);
        self
    }

    pub fn with_paths(mut self, paths: usize) -> Result<Self> {
        if paths == 0 {
            return Err(Error::Validation("sim.M".into()));
        }
        self.setup.paths = paths;
        self.raw.sim.get_or_insert_with(RawSim::default).paths = Some(paths);
        Ok(self)
    }
}

fn line_col(src: &str, offset: usize) -> (usize, usize) {
    let before = &src[..offset.min(src.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(before.len(), |i| before.len() - i - 1) + 1;
    (line, column)
}

pub fn parse_config(src: &str) -> Result<ExperimentConfig> {
    let raw: RawConfig = toml::from_str(src).map_err(|e| {
        let (line, column) = e.span().map_or((0, 0), |s| line_col(src, s.start));
        Error::Parse { line, column, message: e.message().to_string() }
    })?;
    validate(raw)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let src = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_config(&src)
}

fn need<T: Clone>(v: &Option<T>, field: &str) -> Result<T> {
    v.clone().ok_or_else(|| Error::Validation(field.to_string()))
}

/// Maps a constructor error onto the dotted config field it came from.
fn at<T>(field: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::InvalidParameter { name, reason } => Error::Validation(format!("{field}.{name}: {reason}")),
        other => Error::Validation(format!("{field}: {other}")),
    })
}

fn impact(raw: &Option<RawImpact>, field: &str) -> Result<ImpactFunction> {
    let raw = need(raw, field)?;
    let kind = need(&raw.kind, &format!("{field}.kind"))?;
    match kind.as_str() {
        "linear" => {
            if raw.coefficients.is_some() {
                return Err(Error::Validation(format!("{field}.coefficients: not used by kind = \"linear\"")));
            }
            Ok(ImpactFunction::linear(need(&raw.slope, &format!("{field}.slope"))?))
        }
        "polynomial" => {
            if raw.slope.is_some() {
                return Err(Error::Validation(format!("{field}.slope: not used by kind = \"polynomial\"")));
            }
            at(field, ImpactFunction::polynomial(need(&raw.coefficients, &format!("{field}.coefficients"))?))
        }
        other => Err(Error::Validation(format!("{field}.kind: unknown impact kind {other:?}"))),
    }
}

fn diffusion(raw: &Option<RawDiffusion>, field: &str) -> Result<DiffusionSpec> {
    let raw = need(raw, field)?;
    let kind = need(&raw.kind, &format!("{field}.kind"))?;
    match kind.as_str() {
        "cir" => at(
            field,
            DiffusionSpec::cir(
                need(&raw.lambda, &format!("{field}.lambda"))?,
                need(&raw.theta, &format!("{field}.theta"))?,
                need(&raw.sigma, &format!("{field}.sigma"))?,
            ),
        ),
        "frozen" => {
            if raw.lambda.is_some() || raw.theta.is_some() || raw.sigma.is_some() {
                return Err(Error::Validation(format!("{field}: kind = \"frozen\" takes no parameters")));
            }
            Ok(DiffusionSpec::frozen())
        }
        other => Err(Error::Validation(format!("{field}.kind: unknown diffusion kind {other:?}"))),
    }
}

fn strategy(raw: &RawStrategy, field: &str, a0: f64, b0: f64) -> Result<Strategy> {
    let kind = need(&raw.kind, &format!("{field}.kind"))?;
    let frozen_only = |k: StrategyKind| {
        if raw.a.is_some() || raw.b.is_some() {
            Err(Error::Validation(format!("{field}: a and b are only used by almgren-chriss")))
        } else {
            Ok(k)
        }
    };
    let kind = match kind.as_str() {
        "almgren-chriss" => StrategyKind::AlmgrenChriss { a: raw.a.unwrap_or(a0), b: raw.b.unwrap_or(b0) },
        "order0" => frozen_only(StrategyKind::Order0)?,
        "order1" => frozen_only(StrategyKind::Order1)?,
        "hold" => frozen_only(StrategyKind::Hold)?,
        other => return Err(Error::Validation(format!("{field}.kind: unknown strategy {other:?}"))),
    };
    Ok(Strategy { kind, no_buy: raw.no_buy.unwrap_or(false) })
}

fn validate(raw: RawConfig) -> Result<ExperimentConfig> {
    let m = need(&raw.model, "model")?;
    let model = at(
        "model",
        MarketModel::new(
            impact(&m.f, "model.f")?,
            impact(&m.g, "model.g")?,
            diffusion(&m.a, "model.a")?,
            diffusion(&m.b, "model.b")?,
            need(&m.rho, "model.rho")?,
            need(&m.sigma, "model.sigma")?,
        ),
    )?;

    let p = need(&raw.penalties, "penalties")?;
    let regime = need(&p.regime, "penalties.regime")?;
    let horizon = need(&p.horizon, "penalties.T")?;
    let kappa = match regime {
        Regime::Nonlimiting => need(&p.kappa, "penalties.kappa")?,
        _ => p.kappa.unwrap_or(0.0),
    };
    let phi = match regime {
        Regime::KappaInfinityPhiZero => p.phi.unwrap_or(0.0),
        _ => need(&p.phi, "penalties.phi")?,
    };
    let penalties = at("penalties", PenaltyParams::new(kappa, phi, horizon, regime))?;

    let s = need(&raw.sim, "sim")?;
    let sim = SimConfig {
        n_steps: s.n_steps.unwrap_or(DEFAULT_STEPS),
        master_seed: need(&s.master_seed, "sim.master_seed")?,
        force_final_liquidation: s.force_final_liquidation.unwrap_or(true),
        ..SimConfig::default()
    };
    at("sim", sim.validate())?;
    let paths = need(&s.paths, "sim.M")?;
    if paths == 0 {
        return Err(Error::Validation("sim.M: must be at least 1".into()));
    }

    let i = need(&raw.init, "init")?;
    let init = InitialState {
        x0: need(&i.x0, "init.X0")?,
        s0: need(&i.s0, "init.S0")?,
        q0: need(&i.q0, "init.Q0")?,
    };
    let (a0, b0) = (need(&i.a0, "init.a0")?, need(&i.b0, "init.b0")?);

    let raw_strats = need(&raw.strategies, "strategies")?;
    if raw_strats.is_empty() {
        return Err(Error::Validation("strategies: at least one strategy is required".into()));
    }
    let strategies = raw_strats
        .iter()
        .enumerate()
        .map(|(k, r)| strategy(r, &format!("strategies[{k}]"), a0, b0))
        .collect::<Result<Vec<_>>>()?;

    let mut feller_warnings = Vec::new();
    for (label, spec) in [("model.a", &model.a_dyn), ("model.b", &model.b_dyn)] {
        if let Ok(false) = feller_check(spec) {
            feller_warnings.push(format!("{label}: Feller condition 2 lambda theta > sigma^2 fails"));
        }
    }

    Ok(ExperimentConfig {
        name: raw.name.clone().unwrap_or_else(|| "experiment".into()),
        model,
        penalties,
        sim,
        setup: ExperimentSetup { init, a0, b0, paths },
        strategies,
        output_dir: raw.output.as_ref().and_then(|o| o.dir.clone()),
        feller_warnings,
        raw,
    })
}
