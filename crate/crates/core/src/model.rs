//! Market model: impact functions, impact-parameter dynamics, penalties, and
//! the local Taylor data of the transformed-value PDE at an expansion point.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Relative tolerance of the finite-difference check applied to user-defined
/// impact derivatives.
pub const DERIVATIVE_CHECK_TOL: f64 = 1e-6;

#[derive(Clone)]
enum ImpactKind {
    Linear { slope: f64 },
    Polynomial { coefficients: Vec<f64> },
    Custom { value: ScalarFn, derivative: ScalarFn },
}

/// A price impact function together with its analytic first derivative.
#[derive(Clone)]
pub struct ImpactFunction {
    kind: ImpactKind,
}

impl ImpactFunction {
    /// `x -> slope * x`.
    pub fn linear(slope: f64) -> Self {
        Self {
            kind: ImpactKind::Linear { slope },
        }
    }

    /// `x -> c[0] + c[1] x + c[2] x^2 + ...`
    pub fn polynomial(coefficients: Vec<f64>) -> Result<Self> {
        if coefficients.is_empty() {
            return Err(Error::invalid("coefficients", "at least one coefficient is required"));
        }
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("coefficients", "coefficients must be finite"));
        }
        Ok(Self {
            kind: ImpactKind::Polynomial { coefficients },
        })
    }

    /// User-supplied value and derivative. The derivative is checked against a
    /// centered finite difference at every point of `sample_points`.
    pub fn custom(value: ScalarFn, derivative: ScalarFn, sample_points: &[f64]) -> Result<Self> {
        if sample_points.is_empty() {
            return Err(Error::invalid(
                "sample_points",
                "custom impact functions need at least one check point",
            ));
        }
        for &x in sample_points {
            let h = 1e-6 * x.abs().max(1.0);
            let fd = (value(x + h) - value(x - h)) / (2.0 * h);
            let d = derivative(x);
            let scale = d.abs().max(1e-8);
            if !fd.is_finite() || !d.is_finite() || (fd - d).abs() > DERIVATIVE_CHECK_TOL * scale {
                return Err(Error::invalid(
                    "derivative",
                    format!("derivative {d} disagrees with finite difference {fd} at x = {x}"),
                ));
            }
        }
        Ok(Self {
            kind: ImpactKind::Custom { value, derivative },
        })
    }

    pub fn value(&self, x: f64) -> f64 {
        match &self.kind {
            ImpactKind::Linear { slope } => slope * x,
            ImpactKind::Polynomial { coefficients } => {
                coefficients.iter().rev().fold(0.0, |acc, c| acc * x + c)
            }
            ImpactKind::Custom { value, .. } => value(x),
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match &self.kind {
            ImpactKind::Linear { slope } => *slope,
            ImpactKind::Polynomial { coefficients } => coefficients
                .iter()
                .enumerate()
                .skip(1)
                .rev()
                .fold(0.0, |acc, (k, c)| acc * x + k as f64 * c),
            ImpactKind::Custom { derivative, .. } => derivative(x),
        }
    }

    pub fn kind_tag(&self) -> &'static str {
        match self.kind {
            ImpactKind::Linear { .. } => "builtin-linear",
            ImpactKind::Polynomial { .. } => "builtin-polynomial",
            ImpactKind::Custom { .. } => "user-defined",
        }
    }
}

impl fmt::Debug for ImpactFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            ImpactKind::Linear { slope } => f.debug_struct("Linear").field("slope", slope).finish(),
            ImpactKind::Polynomial { coefficients } => f
                .debug_struct("Polynomial")
                .field("coefficients", coefficients)
                .finish(),
            ImpactKind::Custom { .. } => f.write_str("Custom(..)"),
        }
    }
}

/// Cox-Ingersoll-Ross parameters: `dx = lambda (theta - x) dt + sigma sqrt(x) dB`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CirParams {
    pub lambda: f64,
    pub theta: f64,
    pub sigma: f64,
}

/// Dynamics of one impact parameter: drift (state per unit time) and
/// diffusion coefficient (state per square-root time).
#[derive(Clone)]
pub enum DiffusionSpec {
    Cir(CirParams),
    Custom { drift: ScalarFn, diffusion: ScalarFn },
}

impl DiffusionSpec {
    pub fn cir(lambda: f64, theta: f64, sigma: f64) -> Result<Self> {
        for (name, v) in [("lambda", lambda), ("theta", theta), ("sigma", sigma)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, format!("CIR parameter must be positive, got {v}")));
            }
        }
        Ok(DiffusionSpec::Cir(CirParams { lambda, theta, sigma }))
    }

    pub fn custom(drift: ScalarFn, diffusion: ScalarFn) -> Self {
        DiffusionSpec::Custom { drift, diffusion }
    }

    /// Zero drift and zero diffusion: the impact parameter stays at its
    /// initial value.
    pub fn frozen() -> Self {
        Self::custom(Arc::new(|_| 0.0), Arc::new(|_| 0.0))
    }

    pub fn drift(&self, x: f64) -> f64 {
        match self {
            DiffusionSpec::Cir(p) => p.lambda * (p.theta - x),
            DiffusionSpec::Custom { drift, .. } => drift(x),
        }
    }

    pub fn diffusion(&self, x: f64) -> f64 {
        match self {
            DiffusionSpec::Cir(p) => p.sigma * x.max(0.0).sqrt(),
            DiffusionSpec::Custom { diffusion, .. } => diffusion(x),
        }
    }

    pub fn as_cir(&self) -> Option<&CirParams> {
        match self {
            DiffusionSpec::Cir(p) => Some(p),
            DiffusionSpec::Custom { .. } => None,
        }
    }

    pub fn kind_tag(&self) -> &'static str {
        match self {
            DiffusionSpec::Cir(_) => "builtin-CIR",
            DiffusionSpec::Custom { .. } => "user-defined",
        }
    }
}

impl fmt::Debug for DiffusionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DiffusionSpec::Cir(p) => f.debug_tuple("Cir").field(p).finish(),
            DiffusionSpec::Custom { .. } => f.write_str("Custom(..)"),
        }
    }
}

/// Feller condition `2 lambda theta > sigma^2` for CIR dynamics.
pub fn feller_check(spec: &DiffusionSpec) -> Result<bool> {
    match spec {
        DiffusionSpec::Cir(p) => Ok(2.0 * p.lambda * p.theta > p.sigma * p.sigma),
        DiffusionSpec::Custom { .. } => Err(Error::NotApplicable(
            "Feller condition is defined for CIR dynamics only".into(),
        )),
    }
}

#[derive(Debug, Clone)]
pub struct MarketModel {
    /// Temporary impact `f`.
    pub f: ImpactFunction,
    /// Permanent impact `g`.
    pub g: ImpactFunction,
    /// Dynamics of the temporary impact state `a`.
    pub a_dyn: DiffusionSpec,
    /// Dynamics of the permanent impact state `b`.
    pub b_dyn: DiffusionSpec,
    /// Correlation between the Brownian drivers of `a` and `b`.
    pub rho: f64,
    /// Midprice volatility.
    pub sigma: f64,
}

impl MarketModel {
    pub fn new(
        f: ImpactFunction,
        g: ImpactFunction,
        a_dyn: DiffusionSpec,
        b_dyn: DiffusionSpec,
        rho: f64,
        sigma: f64,
    ) -> Result<Self> {
        if !(-1.0..=1.0).contains(&rho) {
            return Err(Error::invalid("rho", format!("must lie in [-1, 1], got {rho}")));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::invalid("sigma", format!("must be positive, got {sigma}")));
        }
        Ok(Self { f, g, a_dyn, b_dyn, rho, sigma })
    }

    /// Linear impacts `f(a) = a`, `g(b) = b` with CIR dynamics for both states.
    pub fn linear_cir(a: CirParams, b: CirParams, rho: f64, sigma: f64) -> Result<Self> {
        Self::new(
            ImpactFunction::linear(1.0),
            ImpactFunction::linear(1.0),
            DiffusionSpec::cir(a.lambda, a.theta, a.sigma)?,
            DiffusionSpec::cir(b.lambda, b.theta, b.sigma)?,
            rho,
            sigma,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    Nonlimiting,
    KappaInfinity,
    KappaInfinityPhiZero,
}

impl Regime {
    pub fn is_limiting(self) -> bool {
        !matches!(self, Regime::Nonlimiting)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Nonlimiting => "nonlimiting",
            Regime::KappaInfinity => "kappa-infinity",
            Regime::KappaInfinityPhiZero => "kappa-infinity-phi-zero",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Terminal penalty `kappa`, running inventory penalty `phi`, horizon `T`.
///
/// `kappa` is ignored outside the nonlimiting regime and `phi` is ignored in
/// the `(kappa, phi) -> (inf, 0)` regime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyParams {
    pub kappa: f64,
    pub phi: f64,
    pub horizon: f64,
    pub regime: Regime,
}

impl PenaltyParams {
    pub fn new(kappa: f64, phi: f64, horizon: f64, regime: Regime) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::invalid("T", format!("horizon must be positive, got {horizon}")));
        }
        match regime {
            Regime::Nonlimiting => {
                if !(kappa > 0.0 && kappa.is_finite()) {
                    return Err(Error::invalid("kappa", format!("must be positive, got {kappa}")));
                }
                if !(phi > 0.0 && phi.is_finite()) {
                    return Err(Error::invalid("phi", format!("must be positive, got {phi}")));
                }
            }
            Regime::KappaInfinity => {
                if !(phi > 0.0 && phi.is_finite()) {
                    return Err(Error::invalid("phi", format!("must be positive, got {phi}")));
                }
            }
            Regime::KappaInfinityPhiZero => {
                if !(phi >= 0.0 && phi.is_finite()) {
                    return Err(Error::invalid("phi", format!("must be non-negative, got {phi}")));
                }
            }
        }
        Ok(Self { kappa, phi, horizon, regime })
    }

    pub fn with_regime(self, regime: Regime) -> Result<Self> {
        Self::new(self.kappa, self.phi, self.horizon, regime)
    }
}

/// Zeroth- and first-order Taylor data of the PDE coefficients at `(abar, bbar)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LocalCoefficients {
    pub abar: f64,
    pub bbar: f64,
    pub f0: f64,
    pub g0: f64,
    pub df0: f64,
    pub dg0: f64,
    pub mu0: f64,
    pub eta0: f64,
    /// `omega(abar)^2 / 2`
    pub om0sq_half: f64,
    /// `psi(bbar)^2 / 2`
    pub psi0sq_half: f64,
    /// `rho omega(abar) psi(bbar)`
    pub rho_om_psi0: f64,
    /// `sqrt(phi / f0)`
    pub gamma: f64,
    /// Terminal-shape constant; `None` in the limiting regimes, where the
    /// strategies use the closed `kappa -> inf` forms (formally `zeta = 1`).
    pub zeta: Option<f64>,
    /// `zeta - 1`, computed as `2 sqrt(phi f0) / (kappa - g0/2 - sqrt(phi f0))`
    /// so that it carries full precision when `zeta` is close to one.
    pub zeta_m1: Option<f64>,
}

impl LocalCoefficients {
    /// `sqrt(phi f0)`, written as `f0 gamma`.
    pub fn sqrt_phi_f0(&self) -> f64 {
        self.f0 * self.gamma
    }
}

pub fn local_coefficients(
    model: &MarketModel,
    penalties: &PenaltyParams,
    abar: f64,
    bbar: f64,
) -> Result<LocalCoefficients> {
    let f0 = model.f.value(abar);
    if !(f0 > 0.0) {
        return Err(Error::NonPositiveTemporaryImpact { a: abar, value: f0 });
    }
    let g0 = model.g.value(bbar);
    let om0 = model.a_dyn.diffusion(abar);
    let psi0 = model.b_dyn.diffusion(bbar);
    let gamma = (penalties.phi / f0).sqrt();

    let (zeta, zeta_m1) = match penalties.regime {
        Regime::Nonlimiting => {
            let root = (penalties.phi * f0).sqrt();
            let base = penalties.kappa - 0.5 * g0;
            let den = base - root;
            if den == 0.0 || den.abs() <= 4.0 * f64::EPSILON * base.abs().max(root) {
                return Err(Error::DegenerateZeta);
            }
            let zeta = (base + root) / den;
            if let Some(t) = denominator_root(zeta, gamma, penalties.horizon) {
                return Err(Error::SingularDenominator { t });
            }
            (Some(zeta), Some(2.0 * root / den))
        }
        Regime::KappaInfinity | Regime::KappaInfinityPhiZero => (None, None),
    };

    Ok(LocalCoefficients {
        abar,
        bbar,
        f0,
        g0,
        df0: model.f.derivative(abar),
        dg0: model.g.derivative(bbar),
        mu0: model.a_dyn.drift(abar),
        eta0: model.b_dyn.drift(bbar),
        om0sq_half: 0.5 * om0 * om0,
        psi0sq_half: 0.5 * psi0 * psi0,
        rho_om_psi0: model.rho * om0 * psi0,
        gamma,
        zeta,
        zeta_m1,
    })
}

/// Time `t` in `[0, T]` at which `1 - zeta exp(2 gamma (T - t))` vanishes, if any.
///
/// A root exists iff `zeta` lies in `[exp(-2 gamma T), 1]`; it sits at
/// `T - t = -ln(zeta) / (2 gamma)`.
pub fn denominator_root(zeta: f64, gamma: f64, horizon: f64) -> Option<f64> {
    if !(zeta > 0.0 && zeta <= 1.0) {
        return None;
    }
    if gamma == 0.0 {
        return (zeta == 1.0).then_some(horizon);
    }
    let tau = -zeta.ln() / (2.0 * gamma);
    (tau <= horizon).then_some(horizon - tau)
}

/// Grid scan (1,024 points) plus bisection for a sign change of
/// `1 - zeta exp(2 gamma (T - t))` on `[0, T]`.
///
/// Independent of [`denominator_root`]; the two are cross-checked in tests.
pub fn scan_denominator_root(zeta: f64, gamma: f64, horizon: f64) -> Option<f64> {
    const GRID: usize = 1024;
    let den = |t: f64| 1.0 - zeta * (2.0 * gamma * (horizon - t)).exp();
    let mut t_prev = 0.0;
    let mut d_prev = den(0.0);
    if d_prev == 0.0 {
        return Some(0.0);
    }
    for k in 1..=GRID {
        let t = horizon * k as f64 / GRID as f64;
        let d = den(t);
        if d == 0.0 {
            return Some(t);
        }
        if d.signum() != d_prev.signum() {
            let (mut lo, mut hi) = (t_prev, t);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if den(mid).signum() == d_prev.signum() {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            return Some(0.5 * (lo + hi));
        }
        t_prev = t;
        d_prev = d;
    }
    None
}
