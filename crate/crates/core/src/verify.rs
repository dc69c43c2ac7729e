//! Independent numerical oracles for the closed forms in [`crate::strategy`].
//!
//! Every check goes through the [`ClosedForms`] trait, so the suite can be
//! pointed at a deliberately broken implementation to confirm it notices.
//! The oracles themselves use the unfactored growing-exponential expressions
//! and never call back into the strategy module.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{local_coefficients, LocalCoefficients, MarketModel, PenaltyParams, Regime};
use crate::strategy;

pub const MAX_DEPTH: u32 = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckStatus {
    Pass,
    Fail,
    NotApplicable,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualReport {
    pub name: String,
    pub grid: String,
    pub max_abs: f64,
    pub max_rel: f64,
    pub tolerance: f64,
    pub status: CheckStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl ResidualReport {
    fn judged(name: &str, grid: String, max_abs: f64, max_rel: f64, tolerance: f64) -> Self {
        let ok = max_rel.is_finite() && max_abs.is_finite() && max_rel < tolerance;
        Self {
            name: name.to_string(),
            grid,
            max_abs,
            max_rel,
            tolerance,
            status: if ok { CheckStatus::Pass } else { CheckStatus::Fail },
            note: None,
        }
    }

    fn not_applicable(name: &str, reason: impl Into<String>) -> Self {
        Self {
            name: name.to_string(),
            grid: String::new(),
            max_abs: 0.0,
            max_rel: 0.0,
            tolerance: 0.0,
            status: CheckStatus::NotApplicable,
            note: Some(reason.into()),
        }
    }

    fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }

    pub fn passed(&self) -> bool {
        self.status != CheckStatus::Fail
    }
}

/// The closed forms under test. The default methods are the library's.
pub trait ClosedForms: Sync {
    fn h0(&self, t: f64, co: &LocalCoefficients, pen: &PenaltyParams) -> Result<f64> {
        strategy::h0(t, co, pen)
    }
    fn psi0(&self, t: f64, s: f64, co: &LocalCoefficients, pen: &PenaltyParams) -> Result<f64> {
        strategy::psi0(t, s, co, pen)
    }
    fn integrals_i(&self, t: f64, co: &LocalCoefficients, pen: &PenaltyParams) -> Result<[f64; 4]> {
        strategy::integrals_i(t, co, pen)
    }
    fn h1(&self, t: f64, a: f64, b: f64, co: &LocalCoefficients, pen: &PenaltyParams) -> Result<f64> {
        strategy::h1(t, a, b, co, pen)
    }
    fn limit_products(&self, t: f64, a: f64, b: f64, co: &LocalCoefficients, horizon: f64) -> Result<[f64; 4]> {
        strategy::limit_products(t, a, b, co, horizon)
    }
}

/// The implementation shipped in [`crate::strategy`].
#[derive(Debug, Clone, Copy, Default)]
pub struct LibraryForms;

impl ClosedForms for LibraryForms {}

fn rel_err(got: f64, want: f64) -> f64 {
    if got == want {
        0.0
    } else {
        (got - want).abs() / want.abs().max(f64::MIN_POSITIVE)
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
}

// ---------------------------------------------------------------------------
// Adaptive Simpson

/// Adaptive Simpson quadrature of `f` on `[a, b]` to relative tolerance `tol`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    // A coarse composite pass fixes the absolute target.
    let coarse = composite_simpson(f, a, b, 16);
    let abs_tol = tol * coarse.abs().max(f64::MIN_POSITIVE);
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, abs_tol, 0)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Result<f64> {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if !delta.is_finite() {
        return Err(Error::NonConvergence { a, b, max_depth: MAX_DEPTH });
    }
    if delta.abs() <= 15.0 * tol || delta.abs() <= 1e-15 * (left + right).abs() {
        return Ok(left + right + delta / 15.0);
    }
    if depth >= MAX_DEPTH {
        return Err(Error::NonConvergence { a, b, max_depth: MAX_DEPTH });
    }
    Ok(simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth + 1)?
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth + 1)?)
}

fn composite_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut sum = f(a) + f(b);
    for k in 1..n {
        sum += if k % 2 == 1 { 4.0 } else { 2.0 } * f(a + k as f64 * h);
    }
    sum * h / 3.0
}

// ---------------------------------------------------------------------------
// Oracle expressions, written directly from the defining formulas.

/// `(theta0, theta0 * Psi0, theta0^2 * Psi0)` at `s` for fixed `t`.
fn oracle_integrands(t: f64, s: f64, co: &LocalCoefficients, pen: &PenaltyParams) -> Result<(f64, f64, f64)> {
    let (g, big_t) = (co.gamma, pen.horizon);
    match pen.regime {
        Regime::Nonlimiting => {
            let z = co.zeta.ok_or_else(|| Error::NotApplicable("no zeta".into()))?;
            let ez = z * (2.0 * g * big_t).exp();
            let es = (2.0 * g * s).exp();
            let et = (2.0 * g * t).exp();
            let theta = (es + ez) / (es - ez);
            let psi = (-2.0 * g * (s - t)).exp() * ((ez - es) / (ez - et)).powi(2);
            Ok((theta, theta * psi, theta * theta * psi))
        }
        Regime::KappaInfinity => {
            // theta0 = -coth(g (T - s)), Psi0 = sinh^2(g (T - s)) / sinh^2(g (T - t)).
            let (ch, sh) = ((g * (big_t - s)).cosh(), (g * (big_t - s)).sinh());
            let sh_t2 = (g * (big_t - t)).sinh().powi(2);
            Ok((-ch / sh, -ch * sh / sh_t2, ch * ch / sh_t2))
        }
        Regime::KappaInfinityPhiZero => Err(Error::NotApplicable("no shape function as phi -> 0".into())),
    }
}

fn oracle_psi0(t: f64, s: f64, co: &LocalCoefficients, pen: &PenaltyParams) -> Result<f64> {
    let (theta, theta_psi, _) = oracle_integrands(t, s, co, pen)?;
    Ok(theta_psi / theta)
}

/// `I^{(i)}(t)` by adaptive quadrature of its defining integrand, `i` in 1..=4.
pub fn quadrature_i(i: usize, t: f64, co: &LocalCoefficients, pen: &PenaltyParams, tol: f64) -> Result<f64> {
    if !(1..=4).contains(&i) {
        return Err(Error::invalid("i", format!("must be 1..4, got {i}")));
    }
    if tol <= 0.0 {
        return Err(Error::invalid("tol", "must be positive"));
    }
    if pen.regime == Regime::KappaInfinityPhiZero {
        return Err(Error::NotApplicable("integrals are only defined for phi > 0".into()));
    }
    if t >= pen.horizon {
        return Ok(0.0);
    }
    let integrand = |s: f64| {
        let (_, tp, t2p) = oracle_integrands(t, s, co, pen).unwrap_or((f64::NAN, f64::NAN, f64::NAN));
        match i {
            1 => s * t2p,
            2 => t2p,
            3 => s * tp,
            _ => tp,
        }
    };
    adaptive_simpson(&integrand, t, pen.horizon, tol)
}

// ---------------------------------------------------------------------------
// Checks

/// Closed-form `I1..I4` against quadrature on a time grid, relative tolerance `tol`.
pub fn integrals_check(
    forms: &dyn ClosedForms,
    co: &LocalCoefficients,
    pen: &PenaltyParams,
    times: &[f64],
    tol: f64,
) -> Result<ResidualReport> {
    let name = format!("integrals-i1-i4-{}", pen.regime);
    let (mut max_abs, mut max_rel) = (0.0f64, 0.0f64);
    for &t in times {
        let closed = forms.integrals_i(t, co, pen)?;
        for (k, c) in closed.iter().enumerate() {
            let q = quadrature_i(k + 1, t, co, pen, 1e-13)?;
            max_abs = max_abs.max((c - q).abs());
            max_rel = max_rel.max(rel_err(*c, q));
        }
    }
    Ok(ResidualReport::judged(&name, format!("t in {times:?}"), max_abs, max_rel, tol))
}

/// Closed-form `Psi0(t, s)` against `exp(2 gamma int_t^s theta0)` by quadrature.
pub fn psi0_check(
    forms: &dyn ClosedForms,
    co: &LocalCoefficients,
    pen: &PenaltyParams,
    pairs: &[(f64, f64)],
    tol: f64,
) -> Result<ResidualReport> {
    let name = format!("psi0-quadrature-{}", pen.regime);
    let (mut max_abs, mut max_rel) = (0.0f64, 0.0f64);
    for &(t, s) in pairs {
        let theta = |r: f64| oracle_integrands(t, r, co, pen).map(|v| v.0).unwrap_or(f64::NAN);
        let integral = adaptive_simpson(&theta, t, s, 1e-14)?;
        let want = (2.0 * co.gamma * integral).exp();
        let got = forms.psi0(t, s, co, pen)?;
        max_abs = max_abs.max((got - want).abs());
        max_rel = max_rel.max(rel_err(got, want));
    }
    Ok(ResidualReport::judged(&name, format!("(t, s) in {pairs:?}"), max_abs, max_rel, tol))
}

/// Residual of the Riccati equation
/// `h0' + h0^2/f0 + (g0/f0) h0 + g0^2/(4 f0) - phi = 0` on a uniform grid of
/// `[0, T - 1e-6 T]`, plus the terminal condition `h0(T) = -kappa`.
///
/// The centered-difference step is `min(1e-6 T, 1e-4 (T - t))`: near the
/// horizon `h0` varies on the scale `f0 / kappa + (T - t)`, and a fixed step
/// would be dominated by truncation error there.
/// Each residual is normalised by the largest term in the equation.
pub fn riccati_residual(
    forms: &dyn ClosedForms,
    co: &LocalCoefficients,
    pen: &PenaltyParams,
    n_grid: usize,
) -> Result<ResidualReport> {
    let name = "riccati-h0";
    if pen.regime != Regime::Nonlimiting {
        return Ok(ResidualReport::not_applicable(name, "defined for the nonlimiting regime"));
    }
    let big_t = pen.horizon;
    let (f0, g0, phi) = (co.f0, co.g0, pen.phi);
    let (mut max_abs, mut max_rel) = (0.0f64, 0.0f64);
    for t in linspace(0.0, big_t - 1e-6 * big_t, n_grid) {
        let step = (1e-6 * big_t).min(1e-4 * (big_t - t));
        let hp = forms.h0(t + step, co, pen)?;
        let hm = forms.h0((t - step).max(0.0), co, pen)?;
        let dh = (hp - hm) / (t + step - (t - step).max(0.0));
        let h = forms.h0(t, co, pen)?;
        let terms = [dh, h * h / f0, g0 * h / f0, g0 * g0 / (4.0 * f0), phi];
        let r = terms[0] + terms[1] + terms[2] + terms[3] - terms[4];
        let scale = terms.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        max_abs = max_abs.max(r.abs());
        max_rel = max_rel.max(r.abs() / scale);
    }
    let terminal = (forms.h0(big_t, co, pen)? + pen.kappa).abs();
    let terminal_tol = 1e-12 * pen.kappa.max(1.0);
    let mut report = ResidualReport::judged(
        name,
        format!("{n_grid} points on [0, T - 1e-6 T]"),
        max_abs,
        max_rel,
        1e-7 * phi.max(1.0),
    );
    if terminal >= terminal_tol {
        report.status = CheckStatus::Fail;
    }
    Ok(report.with_note(format!("|h0(T) + kappa| = {terminal:e} (tolerance {terminal_tol:e})")))
}

/// First-order Taylor pieces of `1/f`, `g/f` and `g^2/(4f)` about `(abar, bbar)`.
fn taylor_source(co: &LocalCoefficients, alpha: f64, beta: f64, h0: f64) -> f64 {
    let (f, g, df, dg) = (co.f0, co.g0, co.df0, co.dg0);
    let (da, db) = (alpha - co.abar, beta - co.bbar);
    let inv_f = -df / (f * f) * da;
    let g_over_f = -df * g / (f * f) * da + dg / f * db;
    let g2_over_4f = -df * g * g / (4.0 * f * f) * da + g * dg / (2.0 * f) * db;
    inv_f * h0 * h0 + g_over_f * h0 + g2_over_4f
}

/// Finite-difference steps for the `h1` residual.
///
/// `h1` is affine in `(a, b)`, so the spatial differences carry no truncation
/// error; their steps are kept at 1% of the state so that the cancellation in
/// the second differences stays below the time-truncation error being measured.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FdSteps {
    pub dt: f64,
    pub da: f64,
    pub db: f64,
}

impl FdSteps {
    pub fn default_for(horizon: f64, a: f64, b: f64, co: &LocalCoefficients) -> Self {
        Self {
            dt: 1e-5 * horizon,
            da: 1e-2 * a.abs().max(co.abar.abs()),
            db: 1e-2 * b.abs().max(co.bbar.abs()),
        }
    }

    fn with_dt(self, dt: f64) -> Self {
        Self { dt, ..self }
    }
}

/// `(abs residual, normalised residual)` of
/// `(d_t + L0 + 2 gamma theta0) h1 + F1` at one point.
fn h1_residual_at(
    forms: &dyn ClosedForms,
    t: f64,
    a: f64,
    b: f64,
    co: &LocalCoefficients,
    pen: &PenaltyParams,
    st: FdSteps,
) -> Result<(f64, f64)> {
    let h = |t: f64, a: f64, b: f64| forms.h1(t, a, b, co, pen);
    let c = h(t, a, b)?;
    let d_t = (h(t + st.dt, a, b)? - h(t - st.dt, a, b)?) / (2.0 * st.dt);
    let (ap, am) = (h(t, a + st.da, b)?, h(t, a - st.da, b)?);
    let (bp, bm) = (h(t, a, b + st.db)?, h(t, a, b - st.db)?);
    let d_a = (ap - am) / (2.0 * st.da);
    let d_b = (bp - bm) / (2.0 * st.db);
    let d_aa = (ap - 2.0 * c + am) / (st.da * st.da);
    let d_bb = (bp - 2.0 * c + bm) / (st.db * st.db);
    let d_ab = (h(t, a + st.da, b + st.db)? - h(t, a + st.da, b - st.db)? - h(t, a - st.da, b + st.db)?
        + h(t, a - st.da, b - st.db)?)
        / (4.0 * st.da * st.db);
    let h0 = forms.h0(t, co, pen)?;
    // 2 gamma theta0 = 2 h0 / f0 + g0 / f0, written without theta0.
    let potential = (2.0 * h0 + co.g0) / co.f0;
    let terms = [
        d_t,
        co.mu0 * d_a,
        co.eta0 * d_b,
        co.om0sq_half * d_aa,
        co.rho_om_psi0 * d_ab,
        co.psi0sq_half * d_bb,
        potential * c,
        taylor_source(co, a, b, h0),
    ];
    let r: f64 = terms.iter().sum();
    let scale = terms.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    Ok((r.abs(), if scale > 0.0 { r.abs() / scale } else { r.abs() }))
}

/// Normalised residual above which truncation error dominates rounding in the
/// step-halving test.
const TRUNCATION_FLOOR: f64 = 1e-9;

/// `h1` PDE residual at the probe points, with a step-halving convergence test.
///
/// The residual is reported at the tuned steps of [`FdSteps::default_for`].
/// The convergence order is measured by halving a coarse `dt` that starts at
/// `1e-3 T` and doubles (up to a quarter of the distance to either end of the
/// horizon) until the normalised residual exceeds `TRUNCATION_FLOOR`, so that
/// truncation rather than rounding is measured. Passes when every probe has
/// normalised residual below `1e-4` and every measured halving ratio lies in
/// `[3, 5]`. A probe whose truncation error stays below the floor at the
/// largest admissible step has no measurable order; it is reported in the note.
pub fn h1_pde_residual(
    forms: &dyn ClosedForms,
    probes: &[(f64, f64, f64)],
    co: &LocalCoefficients,
    pen: &PenaltyParams,
) -> Result<ResidualReport> {
    let name = format!("h1-pde-{}", pen.regime);
    if pen.regime == Regime::KappaInfinityPhiZero {
        return Ok(ResidualReport::not_applicable(&name, "phi = 0 has no potential term to test"));
    }
    let (mut max_abs, mut max_rel) = (0.0f64, 0.0f64);
    let mut ratios = Vec::new();
    let mut unresolved = Vec::new();
    for &(t, a, b) in probes {
        let st = FdSteps::default_for(pen.horizon, a, b, co);
        let (abs_r, rel_r) = h1_residual_at(forms, t, a, b, co, pen, st)?;
        max_abs = max_abs.max(abs_r);
        max_rel = max_rel.max(rel_r);

        let dt_cap = 0.25 * t.min(pen.horizon - t);
        let mut coarse_dt = (1e-3 * pen.horizon).min(dt_cap);
        let mut coarse = h1_residual_at(forms, t, a, b, co, pen, st.with_dt(coarse_dt))?;
        while coarse.1 < TRUNCATION_FLOOR && 2.0 * coarse_dt <= dt_cap {
            coarse_dt *= 2.0;
            coarse = h1_residual_at(forms, t, a, b, co, pen, st.with_dt(coarse_dt))?;
        }
        if coarse.1 < TRUNCATION_FLOOR {
            unresolved.push((t, a, b));
            continue;
        }
        let (abs_f, _) = h1_residual_at(forms, t, a, b, co, pen, st.with_dt(0.5 * coarse_dt))?;
        if abs_f >= coarse.0 {
            return Err(Error::StepTooSmall { coarse: coarse.0, fine: abs_f });
        }
        ratios.push(coarse.0 / abs_f);
    }
    let mut report =
        ResidualReport::judged(&name, format!("probes (t, a, b) = {probes:?}"), max_abs, max_rel, 1e-4);
    if ratios.iter().any(|r| !(3.0..=5.0).contains(r)) {
        report.status = CheckStatus::Fail;
    }
    let mut note = format!("step-halving ratios {ratios:?}");
    if !unresolved.is_empty() {
        note.push_str(&format!(
            "; truncation error below rounding at every admissible step for probes {unresolved:?}, order not measurable"
        ));
    }
    Ok(report.with_note(note))
}

/// Zeroth and first moments of the Gaussian kernel `Gamma0(t, a, b; s, ., .)`
/// by tensor Simpson quadrature over +-8 standard deviations, compared to
/// `Psi0(t, s)`, `Psi0 (a + mu0 (s - t))` and `Psi0 (b + eta0 (s - t))`.
pub fn gamma0_moment_check(
    forms: &dyn ClosedForms,
    pairs: &[(f64, f64)],
    a: f64,
    b: f64,
    co: &LocalCoefficients,
    pen: &PenaltyParams,
) -> Result<ResidualReport> {
    let name = format!("gamma0-moments-{}", pen.regime);
    if pen.regime == Regime::KappaInfinityPhiZero {
        return Ok(ResidualReport::not_applicable(&name, "no closed-form Psi0 as phi -> 0"));
    }
    let (mut max_abs, mut max_rel) = (0.0f64, 0.0f64);
    for &(t, s) in pairs {
        let moments = match gaussian_moments(t, s, a, b, co, pen) {
            Ok(m) => m,
            Err(Error::SingularCovariance) => {
                return Ok(ResidualReport::not_applicable(&name, "covariance is singular (|rho| = 1)"));
            }
            Err(e) => return Err(e),
        };
        let psi = forms.psi0(t, s, co, pen)?;
        let want = [psi, psi * (a + co.mu0 * (s - t)), psi * (b + co.eta0 * (s - t))];
        for (got, want) in moments.iter().zip(want) {
            max_abs = max_abs.max((got - want).abs());
            max_rel = max_rel.max(rel_err(*got, want));
        }
    }
    Ok(ResidualReport::judged(&name, format!("(t, s) in {pairs:?}, 2-D Simpson 320 x 320"), max_abs, max_rel, 1e-6))
}

fn gaussian_moments(t: f64, s: f64, a: f64, b: f64, co: &LocalCoefficients, pen: &PenaltyParams) -> Result<[f64; 3]> {
    if !(t < s && s <= pen.horizon) {
        return Err(Error::OrderViolation { t, s });
    }
    let dt = s - t;
    let c11 = 2.0 * co.om0sq_half * dt;
    let c22 = 2.0 * co.psi0sq_half * dt;
    let c12 = co.rho_om_psi0 * dt;
    let det = c11 * c22 - c12 * c12;
    if !(det > 1e-12 * c11 * c22) {
        return Err(Error::SingularCovariance);
    }
    let (m1, m2) = (a + co.mu0 * dt, b + co.eta0 * dt);
    let (s1, s2) = (c11.sqrt(), c22.sqrt());
    let psi = oracle_psi0(t, s, co, pen)?;
    let norm = psi / (2.0 * std::f64::consts::PI * det.sqrt());
    let (i11, i22, i12) = (c22 / det, c11 / det, -c12 / det);
    let n = 320;
    let (h1, h2) = (16.0 * s1 / n as f64, 16.0 * s2 / n as f64);
    let weight = |k: usize| if k == 0 || k == n { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
    let mut acc = [0.0f64; 3];
    for i in 0..=n {
        let alpha = m1 - 8.0 * s1 + i as f64 * h1;
        let x = alpha - m1;
        let wi = weight(i);
        for j in 0..=n {
            let beta = m2 - 8.0 * s2 + j as f64 * h2;
            let y = beta - m2;
            let q = i11 * x * x + 2.0 * i12 * x * y + i22 * y * y;
            let dens = wi * weight(j) * norm * (-0.5 * q).exp();
            acc[0] += dens;
            acc[1] += dens * alpha;
            acc[2] += dens * beta;
        }
    }
    let cell = h1 * h2 / 9.0;
    Ok(acc.map(|v| v * cell))
}

/// Agreement of the nonlimiting forms at large `kappa` with the `kappa -> inf`
/// forms, and of those at tiny `phi` with the `(inf, 0)` forms, for
/// `t <= 0.99 T`.
///
/// The tiny-`phi` comparisons use an absolute tolerance `1e-6` times the
/// largest magnitude of the reference over the grid.
#[allow(clippy::too_many_arguments)]
pub fn limit_consistency(
    forms: &dyn ClosedForms,
    model: &MarketModel,
    pen: &PenaltyParams,
    abar: f64,
    bbar: f64,
    a: f64,
    b: f64,
    times: &[f64],
) -> Result<Vec<ResidualReport>> {
    let big_t = pen.horizon;
    let grid = format!("{} points on [0, 0.99 T]", times.len());
    if pen.phi <= 0.0 {
        return Ok(vec![ResidualReport::not_applicable("limit-kappa", "needs phi > 0")]);
    }
    let big_kappa = PenaltyParams::new(1e8, pen.phi, big_t, Regime::Nonlimiting)?;
    let kinf = PenaltyParams::new(0.0, pen.phi, big_t, Regime::KappaInfinity)?;
    let co_big = local_coefficients(model, &big_kappa, abar, bbar)?;
    let co_inf = local_coefficients(model, &kinf, abar, bbar)?;

    let tiny_phi = PenaltyParams::new(0.0, 1e-12, big_t, Regime::KappaInfinity)?;
    let lim = PenaltyParams::new(0.0, 0.0, big_t, Regime::KappaInfinityPhiZero)?;
    let co_tiny = local_coefficients(model, &tiny_phi, abar, bbar)?;
    let co_lim = local_coefficients(model, &lim, abar, bbar)?;

    let mut h0k = (0.0f64, 0.0f64);
    let mut h1k = (0.0f64, 0.0f64);
    let mut h0p = (0.0f64, 0.0f64);
    let mut h1p = (0.0f64, 0.0f64);
    let mut prod = (0.0f64, 0.0f64);
    for &t in times {
        let tau = big_t - t;
        // kappa -> inf: -g0/2 - f0 gamma coth(gamma tau).
        let h0_inf = -0.5 * co_inf.g0 - co_inf.f0 * co_inf.gamma / (co_inf.gamma * tau).tanh();
        let v = forms.h0(t, &co_big, &big_kappa)?;
        h0k = (h0k.0.max((v - h0_inf).abs()), h0k.1.max(rel_err(v, h0_inf)));
        let v_inf = forms.h0(t, &co_inf, &kinf)?;
        h0k = (h0k.0.max((v_inf - h0_inf).abs()), h0k.1.max(rel_err(v_inf, h0_inf)));

        let h1_big = forms.h1(t, a, b, &co_big, &big_kappa)?;
        let h1_inf = forms.h1(t, a, b, &co_inf, &kinf)?;
        h1k = (h1k.0.max((h1_big - h1_inf).abs()), h1k.1.max(rel_err(h1_big, h1_inf)));

        // phi -> 0: -g0/2 - f0/tau.
        let h0_lim = -0.5 * co_lim.g0 - co_lim.f0 / tau;
        let d = (forms.h0(t, &co_tiny, &tiny_phi)? - h0_lim).abs();
        h0p = (h0p.0.max(d), h0p.1.max(h0_lim.abs()));

        let h1_lim = forms.h1(t, a, b, &co_lim, &lim)?;
        let d = (forms.h1(t, a, b, &co_tiny, &tiny_phi)? - h1_lim).abs();
        h1p = (h1p.0.max(d), h1p.1.max(h1_lim.abs()));

        let c = strategy::h1_coefficients(t, a, b, &co_tiny);
        let i = forms.integrals_i(t, &co_tiny, &tiny_phi)?;
        let stated = forms.limit_products(t, a, b, &co_lim, big_t)?;
        for k in 0..4 {
            let d = (c[k] * i[k] - stated[k]).abs();
            prod = (prod.0.max(d), prod.1.max(stated[k].abs()));
        }
    }
    let scaled = |name: &str, (abs, scale): (f64, f64)| {
        let rel = if scale > 0.0 { abs / scale } else { abs };
        ResidualReport::judged(name, grid.clone(), abs, rel, 1e-6)
            .with_note("max_rel = max_abs / max |reference| over the grid")
    };
    Ok(vec![
        ResidualReport::judged("limit-kappa-h0", grid.clone(), h0k.0, h0k.1, 1e-4),
        ResidualReport::judged("limit-kappa-h1", grid.clone(), h1k.0, h1k.1, 1e-4),
        scaled("limit-phi-h0", h0p),
        scaled("limit-phi-h1", h1p),
        scaled("limit-phi-products", prod),
    ])
}

/// Points at which the suite probes the closed forms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SuitePoint {
    pub abar: f64,
    pub bbar: f64,
}

/// Runs every check at `point` using the penalties' `kappa`, `phi` and `T`
/// (the regime field is ignored: each check picks the regimes it needs).
pub fn run_suite(
    forms: &dyn ClosedForms,
    model: &MarketModel,
    pen: &PenaltyParams,
    point: SuitePoint,
) -> Result<Vec<ResidualReport>> {
    let big_t = pen.horizon;
    let SuitePoint { abar, bbar } = point;
    let mut out = Vec::new();
    let unavailable = |names: &[&str], why: &str, out: &mut Vec<ResidualReport>| {
        for n in names {
            out.push(ResidualReport::not_applicable(n, why));
        }
    };

    let nl = PenaltyParams::new(pen.kappa, pen.phi, big_t, Regime::Nonlimiting);
    let ki = PenaltyParams::new(pen.kappa, pen.phi, big_t, Regime::KappaInfinity);
    let times: Vec<f64> = [0.0, 0.3, 0.6, 0.9].iter().map(|x| x * big_t).collect();
    let probes = [
        (0.5 * big_t, 1.2 * abar, 0.8 * bbar),
        (0.2 * big_t, 0.7 * abar, 1.3 * bbar),
        (0.8 * big_t, 1.5 * abar, 1.5 * bbar),
    ];
    let pairs = [(0.2 * big_t, 0.6 * big_t), (0.0, 0.9 * big_t)];

    match nl {
        Ok(nl) => {
            let co = local_coefficients(model, &nl, abar, bbar)?;
            out.push(riccati_residual(forms, &co, &nl, 1_000)?);
            out.push(integrals_check(forms, &co, &nl, &times, 1e-8)?);
            out.push(psi0_check(forms, &co, &nl, &pairs, 1e-10)?);
            out.push(h1_pde_residual(forms, &probes, &co, &nl)?);
            out.push(gamma0_moment_check(forms, &pairs, 1.2 * abar, 0.8 * bbar, &co, &nl)?);
        }
        Err(_) => unavailable(
            &["riccati-h0", "integrals-i1-i4-nonlimiting", "psi0-quadrature-nonlimiting", "h1-pde-nonlimiting", "gamma0-moments-nonlimiting"],
            "needs kappa > 0 and phi > 0",
            &mut out,
        ),
    }
    match ki {
        Ok(ki) => {
            let co = local_coefficients(model, &ki, abar, bbar)?;
            out.push(integrals_check(forms, &co, &ki, &times, 1e-8)?);
            let pairs_k = [(0.2 * big_t, 0.6 * big_t), (0.0, 0.9 * big_t)];
            out.push(psi0_check(forms, &co, &ki, &pairs_k, 1e-10)?);
            out.push(h1_pde_residual(forms, &probes, &co, &ki)?);
            let limit_times = linspace(0.0, 0.99 * big_t, 100);
            out.extend(limit_consistency(forms, model, pen, abar, bbar, 1.2 * abar, 0.8 * bbar, &limit_times)?);
        }
        Err(_) => unavailable(&["integrals-i1-i4-kappa-infinity", "limit-kappa"], "needs phi > 0", &mut out),
    }
    Ok(out)
}
