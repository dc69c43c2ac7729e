//! Closed-form transformed value function `h0`, first-order correction `h1`,
//! and the liquidation rates built from them.
//!
//! All exponentials are written in terms of `u = exp(-2 gamma (T - t))` and
//! `w = 1 - u` (evaluated with `expm1`), so that nothing grows like
//! `exp(2 gamma T)`. With `D = (zeta - 1) + w` the nonlimiting shape function is
//! `theta0 = -(2 + (zeta - 1) - w) / D`; the `kappa -> inf` forms are the same
//! expressions at `zeta = 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{local_coefficients, LocalCoefficients, MarketModel, PenaltyParams, Regime};

/// Which approximation of the optimal rate a trader follows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StrategyKind {
    /// Zeroth-order formula with impact parameters frozen at `(a, b)`.
    AlmgrenChriss { a: f64, b: f64 },
    /// Zeroth-order approximation, recalibrated at the current `(a, b)`.
    Order0,
    /// First-order approximation, recalibrated at the current `(a, b)`.
    Order1,
    /// Never trade. Benchmark only.
    Hold,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Strategy {
    pub kind: StrategyKind,
    /// Truncate the rate to `max(0, nu)`.
    #[serde(default)]
    pub no_buy: bool,
}

impl Strategy {
    pub const fn new(kind: StrategyKind) -> Self {
        Self { kind, no_buy: false }
    }

    pub const fn no_buy(kind: StrategyKind) -> Self {
        Self { kind, no_buy: true }
    }

    pub fn label(&self) -> String {
        let base = match self.kind {
            StrategyKind::AlmgrenChriss { .. } => "almgren-chriss",
            StrategyKind::Order0 => "order0",
            StrategyKind::Order1 => "order1",
            StrategyKind::Hold => "hold",
        };
        if self.no_buy {
            format!("{base}-nobuy")
        } else {
            base.to_string()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Order {
    Zero,
    One,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ValueExpansion {
    pub h0: f64,
    pub h1: f64,
    pub hbar: f64,
    pub order: Order,
}

fn time_to_horizon(t: f64, horizon: f64) -> Result<f64> {
    if !(0.0..=horizon).contains(&t) {
        return Err(Error::invalid("t", format!("must lie in [0, {horizon}], got {t}")));
    }
    Ok(horizon - t)
}

fn positive_time_to_horizon(t: f64, horizon: f64) -> Result<f64> {
    let tau = time_to_horizon(t, horizon)?;
    if tau <= 0.0 {
        return Err(Error::HorizonBoundary { t });
    }
    Ok(tau)
}

fn nonlimiting_zeta(co: &LocalCoefficients) -> Result<(f64, f64)> {
    match (co.zeta, co.zeta_m1) {
        (Some(z), Some(zm1)) => Ok((z, zm1)),
        _ => Err(Error::NotApplicable(
            "coefficients were built for a limiting regime".into(),
        )),
    }
}

/// `1 - exp(-x)` for `x >= 0`.
fn one_minus_exp_neg(x: f64) -> f64 {
    -(-x).exp_m1()
}

/// `(1 - e^{-x}(1 + x)) / x^2`, i.e. `x^{-2} int_0^x r e^{-r} dr`.
fn ramp_decay(x: f64) -> f64 {
    if x < 0.5 {
        // sum_{k>=2} (-1)^k (k-1) x^{k-2} / k!
        let mut term = 0.5;
        let mut sum = 0.0;
        for k in 2..24 {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            sum += sign * (k - 1) as f64 * term;
            term *= x / (k + 1) as f64;
        }
        sum
    } else {
        let u = (-x).exp();
        (one_minus_exp_neg(x) - x * u) / (x * x)
    }
}

/// `(x - 1 + e^{-x}) / x^2`, i.e. `x^{-2} e^{-x} int_0^x r e^{r} dr` times `e^{x}`.
fn ramp_growth(x: f64) -> f64 {
    if x < 0.5 {
        // sum_{k>=2} (-1)^k x^{k-2} / k!
        let mut term = 0.5;
        let mut sum = 0.0;
        for k in 2..24 {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            sum += sign * term;
            term *= x / (k + 1) as f64;
        }
        sum
    } else {
        (x - one_minus_exp_neg(x)) / (x * x)
    }
}

/// The shape function of `h0`.
///
/// Nonlimiting: `(1 + zeta e^{2 gamma (T-t)}) / (1 - zeta e^{2 gamma (T-t)})`.
/// `kappa -> inf`: `-coth(gamma (T - t))`, undefined at `t = T`.
pub fn theta0(t: f64, co: &LocalCoefficients, penalties: &PenaltyParams) -> Result<f64> {
    match penalties.regime {
        Regime::Nonlimiting => {
            let tau = time_to_horizon(t, penalties.horizon)?;
            let (_, zm1) = nonlimiting_zeta(co)?;
            let w = one_minus_exp_neg(2.0 * co.gamma * tau);
            Ok(-(2.0 + zm1 - w) / (zm1 + w))
        }
        Regime::KappaInfinity => {
            let tau = positive_time_to_horizon(t, penalties.horizon)?;
            let w = one_minus_exp_neg(2.0 * co.gamma * tau);
            Ok(-(2.0 - w) / w)
        }
        Regime::KappaInfinityPhiZero => Err(Error::NotApplicable(
            "theta0 degenerates as phi -> 0; use h0 directly".into(),
        )),
    }
}

/// Zeroth-order transformed value function.
pub fn h0(t: f64, co: &LocalCoefficients, penalties: &PenaltyParams) -> Result<f64> {
    match penalties.regime {
        Regime::Nonlimiting => {
            if t == penalties.horizon {
                return Ok(-penalties.kappa);
            }
            Ok(-0.5 * co.g0 + co.sqrt_phi_f0() * theta0(t, co, penalties)?)
        }
        Regime::KappaInfinity => Ok(-0.5 * co.g0 + co.sqrt_phi_f0() * theta0(t, co, penalties)?),
        Regime::KappaInfinityPhiZero => {
            let tau = positive_time_to_horizon(t, penalties.horizon)?;
            Ok(-0.5 * co.g0 - co.f0 / tau)
        }
    }
}

/// `Psi0(t, s) = exp(2 gamma int_t^s theta0)`, the discount factor of the
/// Duhamel representation.
pub fn psi0(t: f64, s: f64, co: &LocalCoefficients, penalties: &PenaltyParams) -> Result<f64> {
    if s < t {
        return Err(Error::OrderViolation { t, s });
    }
    let tau_t = time_to_horizon(t, penalties.horizon)?;
    let tau_s = time_to_horizon(s, penalties.horizon)?;
    if s == t {
        return Ok(1.0);
    }
    let g = co.gamma;
    match penalties.regime {
        Regime::Nonlimiting => {
            let (_, zm1) = nonlimiting_zeta(co)?;
            let ratio = (zm1 + one_minus_exp_neg(2.0 * g * tau_s)) / (zm1 + one_minus_exp_neg(2.0 * g * tau_t));
            Ok((-2.0 * g * (s - t)).exp() * ratio * ratio)
        }
        Regime::KappaInfinity => {
            let ratio = one_minus_exp_neg(2.0 * g * tau_s) / one_minus_exp_neg(2.0 * g * tau_t);
            Ok((-2.0 * g * (s - t)).exp() * ratio * ratio)
        }
        Regime::KappaInfinityPhiZero => {
            let ratio = tau_s / tau_t;
            Ok(ratio * ratio)
        }
    }
}

/// The four time integrals entering `h1`:
///
/// `I1 = int_t^T s theta0^2 Psi0`, `I2 = int_t^T theta0^2 Psi0`,
/// `I3 = int_t^T s theta0 Psi0`, `I4 = int_t^T theta0 Psi0`.
pub fn integrals_i(t: f64, co: &LocalCoefficients, penalties: &PenaltyParams) -> Result<[f64; 4]> {
    match penalties.regime {
        Regime::Nonlimiting => {
            let tau = time_to_horizon(t, penalties.horizon)?;
            if tau == 0.0 {
                return Ok([0.0; 4]);
            }
            let (zeta, zm1) = nonlimiting_zeta(co)?;
            Ok(integrals_closed_form(t, tau, co.gamma, zeta, zm1, false))
        }
        Regime::KappaInfinity => {
            let tau = positive_time_to_horizon(t, penalties.horizon)?;
            Ok(integrals_closed_form(t, tau, co.gamma, 1.0, 0.0, true))
        }
        Regime::KappaInfinityPhiZero => Err(Error::NotApplicable(
            "the (kappa, phi) -> (inf, 0) regime uses the assembled products".into(),
        )),
    }
}

// With r = s - t, x = 2 gamma tau, u = e^{-x}, w = 1 - u, D = zeta - u:
//   I4 = -w (zeta^2 - u) / (2 gamma D^2)
//   I2 = (w (zeta^2 + u) + 2 x zeta u) / (2 gamma D^2)
//   I3 = t I4 - tau^2 / D^2 (zeta^2 R(x) - u G(x))
//   I1 = t I2 + tau^2 / D^2 (u G(x) + zeta u + zeta^2 R(x))
// where R = ramp_decay, G = ramp_growth.
fn integrals_closed_form(t: f64, tau: f64, gamma: f64, zeta: f64, zm1: f64, kappa_limit: bool) -> [f64; 4] {
    let x = 2.0 * gamma * tau;
    let w = one_minus_exp_neg(x);
    let u = (-x).exp();
    let d = zm1 + w;
    let d2 = d * d;
    let zeta2 = zeta * zeta;
    let zeta2_m1 = zm1 * (2.0 + zm1);

    let i4 = if kappa_limit {
        -0.5 / gamma
    } else {
        -w * (zeta2_m1 + w) / (2.0 * gamma * d2)
    };
    let i2 = (w * (zeta2 + u) + 2.0 * x * zeta * u) / (2.0 * gamma * d2);
    let rd = ramp_decay(x);
    let rg = ramp_growth(x);
    let scale = tau * tau / d2;
    let j3 = -scale * (zeta2 * rd - u * rg);
    let j1 = scale * (u * rg + zeta * u + zeta2 * rd);
    [t * i2 + j1, i2, t * i4 + j3, i4]
}

/// Coefficients `c1..c4` multiplying `I1..I4` in `h1`.
pub fn h1_coefficients(t: f64, a: f64, b: f64, co: &LocalCoefficients) -> [f64; 4] {
    let g = co.gamma;
    [
        -g * g * co.df0 * co.mu0,
        -g * g * co.df0 * (a - co.abar - t * co.mu0),
        g * co.dg0 * co.eta0,
        g * co.dg0 * (b - co.bbar - t * co.eta0),
    ]
}

/// The `(kappa, phi) -> (inf, 0)` limits of the four products `c_i I_i`.
pub fn limit_products(t: f64, a: f64, b: f64, co: &LocalCoefficients, horizon: f64) -> Result<[f64; 4]> {
    let tau = positive_time_to_horizon(t, horizon)?;
    Ok([
        -co.df0 * co.mu0 * (horizon + t) / (2.0 * tau),
        -co.df0 * (a - co.abar - t * co.mu0) / tau,
        -co.dg0 * co.eta0 * (horizon + 2.0 * t) / 6.0,
        -0.5 * co.dg0 * (b - co.bbar - t * co.eta0),
    ])
}

/// First-order correction `h1(t, a, b)` with the expansion point held at
/// `(co.abar, co.bbar)`.
pub fn h1(t: f64, a: f64, b: f64, co: &LocalCoefficients, penalties: &PenaltyParams) -> Result<f64> {
    match penalties.regime {
        Regime::Nonlimiting | Regime::KappaInfinity => {
            let c = h1_coefficients(t, a, b, co);
            let i = integrals_i(t, co, penalties)?;
            Ok(c.iter().zip(i.iter()).map(|(c, i)| c * i).sum())
        }
        Regime::KappaInfinityPhiZero => {
            let tau = positive_time_to_horizon(t, penalties.horizon)?;
            Ok(-co.df0 / (2.0 * tau) * (2.0 * (a - co.abar) + co.mu0 * tau)
                - co.dg0 / 6.0 * (3.0 * (b - co.bbar) + co.eta0 * tau))
        }
    }
}

/// `-(g0/2 + h0) / f0`, the zeroth-order rate per share, in closed form.
fn zeroth_order_speed(t: f64, co: &LocalCoefficients, penalties: &PenaltyParams) -> Result<f64> {
    match penalties.regime {
        Regime::Nonlimiting => Ok(-co.gamma * theta0(t, co, penalties)?),
        Regime::KappaInfinity => Ok(-co.gamma * theta0(t, co, penalties)?),
        Regime::KappaInfinityPhiZero => Ok(1.0 / positive_time_to_horizon(t, penalties.horizon)?),
    }
}

/// Liquidation rate (shares per unit time) of `strategy` in state `(t, q, a, b)`.
///
/// Recalibrating strategies rebuild the local coefficients at `(a, b)` on
/// every call; Almgren-Chriss uses its frozen pair throughout.
pub fn rate(
    strategy: &Strategy,
    t: f64,
    q: f64,
    a: f64,
    b: f64,
    model: &MarketModel,
    penalties: &PenaltyParams,
) -> Result<f64> {
    let speed = match strategy.kind {
        StrategyKind::Hold => 0.0,
        StrategyKind::AlmgrenChriss { a: fa, b: fb } => {
            let co = local_coefficients(model, penalties, fa, fb)?;
            zeroth_order_speed(t, &co, penalties)?
        }
        StrategyKind::Order0 => {
            let co = local_coefficients(model, penalties, a, b)?;
            zeroth_order_speed(t, &co, penalties)?
        }
        StrategyKind::Order1 => {
            let co = local_coefficients(model, penalties, a, b)?;
            zeroth_order_speed(t, &co, penalties)? - h1(t, a, b, &co, penalties)? / co.f0
        }
    };
    let nu = speed * q;
    Ok(if strategy.no_buy { nu.max(0.0) } else { nu })
}

/// `hbar_N(t, a, b)` with the expansion point at `(a, b)`.
pub fn value_expansion(
    order: Order,
    t: f64,
    a: f64,
    b: f64,
    model: &MarketModel,
    penalties: &PenaltyParams,
) -> Result<ValueExpansion> {
    let co = local_coefficients(model, penalties, a, b)?;
    let h0 = h0(t, &co, penalties)?;
    let (h1, hbar) = match order {
        Order::Zero => (0.0, h0),
        Order::One => {
            let h1 = if penalties.regime == Regime::Nonlimiting && t == penalties.horizon {
                0.0
            } else {
                h1(t, a, b, &co, penalties)?
            };
            (h1, h0 + h1)
        }
    };
    Ok(ValueExpansion { h0, h1, hbar, order })
}

/// Approximate value function `x + q s + q^2 hbar_N(t, a, b)`.
#[allow(clippy::too_many_arguments)]
pub fn full_value(
    t: f64,
    x: f64,
    s: f64,
    q: f64,
    a: f64,
    b: f64,
    order: Order,
    model: &MarketModel,
    penalties: &PenaltyParams,
) -> Result<f64> {
    let v = value_expansion(order, t, a, b, model, penalties)?;
    Ok(x + q * s + q * q * v.hbar)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CirParams, DiffusionSpec, ImpactFunction};
    use approx::assert_relative_eq;

    const THETA_A: f64 = 1e-4;
    const THETA_B: f64 = 5e-4;

    fn model() -> MarketModel {
        MarketModel::linear_cir(
            CirParams { lambda: 1.0, theta: THETA_A, sigma: 8e-3 },
            CirParams { lambda: 1.0, theta: THETA_B, sigma: 8e-3 },
            0.7,
            0.2,
        )
        .unwrap()
    }

    fn pen(regime: Regime) -> PenaltyParams {
        PenaltyParams::new(10.0, 0.01, 1.0, regime).unwrap()
    }

    fn co(regime: Regime, a: f64, b: f64) -> LocalCoefficients {
        local_coefficients(&model(), &pen(regime), a, b).unwrap()
    }

    #[test]
    fn ramp_series_and_direct_forms_agree_at_the_switch() {
        let direct_decay = |x: f64| (one_minus_exp_neg(x) - x * (-x).exp()) / (x * x);
        let direct_growth = |x: f64| (x - one_minus_exp_neg(x)) / (x * x);
        for x in [0.3, 0.4999, 0.5] {
            assert_relative_eq!(ramp_decay(x), direct_decay(x), max_relative = 1e-13);
            assert_relative_eq!(ramp_growth(x), direct_growth(x), max_relative = 1e-13);
        }
        assert_relative_eq!(ramp_decay(1e-9), 0.5, max_relative = 1e-8);
        assert_relative_eq!(ramp_growth(1e-9), 0.5, max_relative = 1e-8);
    }

    #[test]
    fn theta0_terminal_value_identity() {
        let p = pen(Regime::Nonlimiting);
        let c = co(Regime::Nonlimiting, THETA_A, THETA_B);
        let expected = -(p.kappa - 0.5 * c.g0) / c.sqrt_phi_f0();
        assert_relative_eq!(theta0(1.0, &c, &p).unwrap(), expected, max_relative = 1e-12);
    }

    #[test]
    fn theta0_example2_midpoint() {
        // 40-digit evaluation of the unfactored expression.
        let c = co(Regime::Nonlimiting, THETA_A, THETA_B);
        let v = theta0(0.5, &c, &pen(Regime::Nonlimiting)).unwrap();
        assert_relative_eq!(v, -1.000_090_785_821_760_6, max_relative = 1e-13);
    }

    #[test]
    fn theta0_is_negative_before_horizon() {
        let p = pen(Regime::Nonlimiting);
        let c = co(Regime::Nonlimiting, THETA_A, THETA_B);
        for k in 0..100 {
            assert!(theta0(k as f64 / 100.0, &c, &p).unwrap() < 0.0);
        }
    }

    #[test]
    fn theta0_kappa_limit_is_minus_coth() {
        let p = pen(Regime::KappaInfinity);
        let c = co(Regime::KappaInfinity, THETA_A, THETA_B);
        for t in [0.0, 0.5, 0.97] {
            let expected = -1.0 / (c.gamma * (1.0 - t)).tanh();
            assert_relative_eq!(theta0(t, &c, &p).unwrap(), expected, max_relative = 1e-14);
        }
        assert!(matches!(theta0(1.0, &c, &p), Err(Error::HorizonBoundary { .. })));
    }

    #[test]
    fn h0_terminal_and_limiting_values() {
        let c = co(Regime::Nonlimiting, THETA_A, THETA_B);
        assert_eq!(h0(1.0, &c, &pen(Regime::Nonlimiting)).unwrap(), -10.0);
        let p0 = PenaltyParams::new(0.0, 0.0, 1.0, Regime::KappaInfinityPhiZero).unwrap();
        let c0 = local_coefficients(&model(), &p0, THETA_A, THETA_B).unwrap();
        assert_relative_eq!(h0(0.0, &c0, &p0).unwrap(), -3.5e-4, max_relative = 1e-14);
        assert!(matches!(h0(1.0, &c0, &p0), Err(Error::HorizonBoundary { .. })));
    }

    #[test]
    fn h0_matches_rk4_integration_of_the_riccati_ode() {
        let p = pen(Regime::Nonlimiting);
        let c = co(Regime::Nonlimiting, THETA_A, THETA_B);
        // h' = -(h^2/f0 + g0 h/f0 + g0^2/(4 f0) - phi), integrated backwards from h(T) = -kappa.
        let rhs = |h: f64| -(h * h / c.f0 + c.g0 * h / c.f0 + c.g0 * c.g0 / (4.0 * c.f0) - p.phi);
        let n = 100_000;
        let dt = -1.0 / n as f64;
        let mut h = -p.kappa;
        for _ in 0..n {
            let k1 = rhs(h);
            let k2 = rhs(h + 0.5 * dt * k1);
            let k3 = rhs(h + 0.5 * dt * k2);
            let k4 = rhs(h + dt * k3);
            h += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        let closed = h0(0.0, &c, &p).unwrap();
        assert_relative_eq!(closed, h, max_relative = 1e-9);
        // 40-digit evaluation.
        assert_relative_eq!(closed, -0.001_250_000_004_121_482_9, max_relative = 1e-12);
    }

    #[test]
    fn psi0_values() {
        let p = pen(Regime::Nonlimiting);
        let c = co(Regime::Nonlimiting, THETA_A, THETA_B);
        assert_eq!(psi0(0.3, 0.3, &c, &p).unwrap(), 1.0);
        // 40-digit evaluation of both the closed form and exp(2 gamma int theta0).
        assert_relative_eq!(
            psi0(0.2, 0.7, &c, &p).unwrap(),
            4.517_519_342_455_313_7e-5,
            max_relative = 1e-12
        );
        assert!(matches!(psi0(0.7, 0.2, &c, &p), Err(Error::OrderViolation { .. })));
    }

    #[test]
    fn integrals_example2_at_t_03() {
        // 40-digit quadrature of the defining integrands.
        let c = co(Regime::Nonlimiting, THETA_A, THETA_B);
        let i = integrals_i(0.3, &c, &pen(Regime::Nonlimiting)).unwrap();
        let expected = [
            0.017_500_781_465_331_161,
            0.050_001_247_029_015_432,
            -0.017_499_945_960_515_966,
            -0.049_999_999_999_998_337,
        ];
        for k in 0..4 {
            assert_relative_eq!(i[k], expected[k], max_relative = 1e-12);
        }
        assert_eq!(integrals_i(1.0, &c, &pen(Regime::Nonlimiting)).unwrap(), [0.0; 4]);
    }

    #[test]
    fn kappa_limit_i4_is_constant() {
        let p = pen(Regime::KappaInfinity);
        let c = co(Regime::KappaInfinity, THETA_A, THETA_B);
        for t in [0.0, 0.4, 0.99] {
            assert_eq!(integrals_i(t, &c, &p).unwrap()[3], -1.0 / (2.0 * c.gamma));
        }
    }

    #[test]
    fn refactored_integrals_match_unfactored_expressions() {
        // Direct transcription of the growing-exponential closed forms; safe at gamma T = 10.
        let c = co(Regime::Nonlimiting, 1.3 * THETA_A, 0.8 * THETA_B);
        let p = pen(Regime::Nonlimiting);
        let (g, z, tt) = (c.gamma, c.zeta.unwrap(), 1.0f64);
        for t in [0.0, 0.25, 0.6, 0.95] {
            let e = |k: f64| k.exp();
            let den = (e(2.0 * g * t) - z * e(2.0 * g * tt)).powi(2);
            let i1 = (e(2.0 * g * (t + tt))
                * (4.0 * g * g * z * (tt * tt - t * t) - z * z * (2.0 * g * tt + 1.0) + 2.0 * g * tt - 1.0)
                + e(4.0 * g * t) * (1.0 - 2.0 * g * t)
                + z * z * (2.0 * g * t + 1.0) * e(4.0 * g * tt))
                / (4.0 * g * g * den);
            let i2 = -(e(4.0 * g * t) + e(2.0 * g * (t + tt)) * (z * z + 4.0 * g * z * (t - tt) - 1.0)
                - z * z * e(4.0 * g * tt))
                / (2.0 * g * den);
            let i3 = (e(4.0 * g * t) * (1.0 - 2.0 * g * t) - z * z * (2.0 * g * t + 1.0) * e(4.0 * g * tt)
                + e(2.0 * g * (t + tt)) * (z * z + 2.0 * g * (z * z + 1.0) * tt - 1.0))
                / (4.0 * g * g * den);
            let i4 = -(e(2.0 * g * t) - e(2.0 * g * tt)) * (e(2.0 * g * t) - z * z * e(2.0 * g * tt)) / (2.0 * g * den);
            let got = integrals_i(t, &c, &p).unwrap();
            for (k, want) in [i1, i2, i3, i4].into_iter().enumerate() {
                assert_relative_eq!(got[k], want, max_relative = 1e-8);
            }
        }
    }

    #[test]
    fn h1_vanishes_at_long_run_mean_expansion() {
        let p = pen(Regime::Nonlimiting);
        let c = co(Regime::Nonlimiting, THETA_A, THETA_B);
        assert_eq!(h1(0.4, THETA_A, THETA_B, &c, &p).unwrap(), 0.0);
        let c = co(Regime::Nonlimiting, 1.7 * THETA_A, 0.2 * THETA_B);
        assert_eq!(h1(1.0, 1.7 * THETA_A, 0.2 * THETA_B, &c, &p).unwrap(), 0.0);
    }

    #[test]
    fn h1_example2_above_mean() {
        // 40-digit nested quadrature of the Duhamel integral.
        let p = pen(Regime::Nonlimiting);
        let (a, b) = (1.5 * THETA_A, 1.5 * THETA_B);
        let v = value_expansion(Order::One, 0.5, a, b, &model(), &p).unwrap();
        assert_relative_eq!(v.h1, 2.036_054_311_553_448_9e-5, max_relative = 1e-10);
        assert_relative_eq!(v.h0, -1.600_441_647_364_075_1e-3, max_relative = 1e-12);
        assert_eq!(v.hbar, v.h0 + v.h1);
    }

    #[test]
    fn h1_kappa_phi_limit_at_expansion_point() {
        let p = PenaltyParams::new(0.0, 0.0, 1.0, Regime::KappaInfinityPhiZero).unwrap();
        let (a, b) = (2.0 * THETA_A, 0.5 * THETA_B);
        let c = local_coefficients(&model(), &p, a, b).unwrap();
        let t = 0.3;
        let mu0 = THETA_A - a;
        let eta0 = THETA_B - b;
        let expected = -mu0 / 2.0 - eta0 * (1.0 - t) / 6.0;
        assert_relative_eq!(h1(t, a, b, &c, &p).unwrap(), expected, max_relative = 1e-14);
    }

    #[test]
    fn limit_products_sum_to_two_term_formula() {
        let p = PenaltyParams::new(0.0, 0.0, 1.0, Regime::KappaInfinityPhiZero).unwrap();
        let c = local_coefficients(&model(), &p, 1.4 * THETA_A, 0.6 * THETA_B).unwrap();
        let (a, b, t) = (1.1 * THETA_A, 0.9 * THETA_B, 0.35);
        let sum: f64 = limit_products(t, a, b, &c, 1.0).unwrap().iter().sum();
        assert_relative_eq!(sum, h1(t, a, b, &c, &p).unwrap(), max_relative = 1e-12);
    }

    #[test]
    fn corrected_twap_rate() {
        let p = PenaltyParams::new(0.0, 0.0, 1.0, Regime::KappaInfinityPhiZero).unwrap();
        let m = model();
        let (t, q, a, b) = (0.25, 1234.0, 1.6 * THETA_A, 0.7 * THETA_B);
        let nu = rate(&Strategy::new(StrategyKind::Order1), t, q, a, b, &m, &p).unwrap();
        let tau = 1.0 - t;
        let expected = q * (1.0 / tau + (THETA_A - a) / (2.0 * a) + tau * (THETA_B - b) / (6.0 * a));
        assert_relative_eq!(nu, expected, max_relative = 1e-13);
        let twap = rate(&Strategy::new(StrategyKind::Order0), t, q, a, b, &m, &p).unwrap();
        assert_eq!(twap, q / tau);
    }

    #[test]
    fn rate_equals_feedback_formula_through_h() {
        let m = model();
        for regime in [Regime::Nonlimiting, Regime::KappaInfinity, Regime::KappaInfinityPhiZero] {
            let p = pen(regime);
            let (t, q, a, b) = (0.4, 5000.0, 1.3 * THETA_A, 1.2 * THETA_B);
            let v = value_expansion(Order::One, t, a, b, &m, &p).unwrap();
            let expected = -(0.5 * b + v.hbar) / a * q;
            let nu = rate(&Strategy::new(StrategyKind::Order1), t, q, a, b, &m, &p).unwrap();
            assert_relative_eq!(nu, expected, max_relative = 1e-10);
        }
    }

    #[test]
    fn order0_equals_almgren_chriss_under_frozen_impact() {
        let m = MarketModel::new(
            ImpactFunction::linear(1.0),
            ImpactFunction::linear(1.0),
            DiffusionSpec::frozen(),
            DiffusionSpec::frozen(),
            0.0,
            0.2,
        )
        .unwrap();
        let (a, b) = (THETA_A, THETA_B);
        let ac = Strategy::new(StrategyKind::AlmgrenChriss { a, b });
        for regime in [Regime::Nonlimiting, Regime::KappaInfinity, Regime::KappaInfinityPhiZero] {
            let p = pen(regime);
            for &(t, q) in &[(0.0, 5000.0), (0.3, 100.0), (0.9, -20.0)] {
                let r0 = rate(&Strategy::new(StrategyKind::Order0), t, q, a, b, &m, &p).unwrap();
                let rac = rate(&ac, t, q, a, b, &m, &p).unwrap();
                assert_eq!(r0.to_bits(), rac.to_bits());
                let r1 = rate(&Strategy::new(StrategyKind::Order1), t, q, a, b, &m, &p).unwrap();
                assert_eq!(r1, r0);
            }
        }
    }

    #[test]
    fn full_value_terminal_and_empty_inventory() {
        let m = model();
        let p = pen(Regime::Nonlimiting);
        assert_eq!(full_value(0.2, 7.0, 40.0, 0.0, THETA_A, THETA_B, Order::One, &m, &p).unwrap(), 7.0);
        let v = full_value(1.0, 1.0, 40.0, 5.0, 2.0 * THETA_A, THETA_B, Order::One, &m, &p).unwrap();
        assert_eq!(v, 1.0 + 5.0 * 40.0 - 10.0 * 25.0);
    }

    #[test]
    fn no_overflow_for_large_urgency() {
        // gamma = 300 / T at T = 1.
        let p = PenaltyParams::new(10.0, 9.0, 1.0, Regime::Nonlimiting).unwrap();
        let c = local_coefficients(&model(), &p, 1e-4, THETA_B).unwrap();
        assert!(c.gamma >= 300.0);
        let th = theta0(0.0, &c, &p).unwrap();
        assert!(th.is_finite());
        let ps = psi0(0.0, 0.5, &c, &p).unwrap();
        assert!(ps.is_finite() && ps >= 0.0);
        assert!(integrals_i(0.0, &c, &p).unwrap().iter().all(|v| v.is_finite()));
        let pk = pen(Regime::KappaInfinity);
        let pk = PenaltyParams { phi: 9.0, ..pk };
        let ck = local_coefficients(&model(), &pk, 1e-4, THETA_B).unwrap();
        assert!(theta0(0.0, &ck, &pk).unwrap().is_finite());
        assert!(psi0(0.0, 0.9, &ck, &pk).unwrap().is_finite());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use crate::strategy::Strategy;

        proptest! {
            #[test]
            fn no_buy_truncates_only_negative_rates(
                t in 0.0f64..0.99,
                q in -5000.0f64..5000.0,
                a in 0.2f64..3.0,
                b in 0.2f64..3.0,
            ) {
                let m = model();
                let p = PenaltyParams::new(0.0, 0.0, 1.0, Regime::KappaInfinityPhiZero).unwrap();
                let raw = rate(&Strategy::new(StrategyKind::Order1), t, q, a * THETA_A, b * THETA_B, &m, &p).unwrap();
                let nb = rate(&Strategy::no_buy(StrategyKind::Order1), t, q, a * THETA_A, b * THETA_B, &m, &p).unwrap();
                prop_assert!(nb >= 0.0);
                if raw >= 0.0 {
                    prop_assert_eq!(nb, raw);
                }
            }

            #[test]
            fn psi0_is_positive_and_at_most_one(
                t in 0.0f64..1.0,
                frac in 0.0f64..1.0,
                phi in 1e-3f64..1.0,
            ) {
                let p = PenaltyParams::new(10.0, phi, 1.0, Regime::Nonlimiting).unwrap();
                let c = local_coefficients(&model(), &p, THETA_A, THETA_B).unwrap();
                let s = t + frac * (1.0 - t);
                let v = psi0(t, s, &c, &p).unwrap();
                prop_assert!(v > 0.0 || (s - t) * c.gamma > 300.0);
                prop_assert!(v <= 1.0 + 1e-15);
            }
        }
    }
}
