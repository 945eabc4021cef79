//! Reference solutions in closed or quadrature form.
//!
//! For the linear flux the viscous solution is the heat semigroup applied
//! to shifted data; for the quadratic flux the log transform turns the
//! equation into the heat equation and gives an integral formula; for
//! convex fluxes the inviscid limit is the Hopf-Lax infimum. These are the
//! yardsticks the finite-difference runs are measured against.

use crate::hamiltonians::{Flux1D, HamError, InitialDatum1D};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClosedFormError {
    #[error("quadrature failed to reach tolerance {tol:e} within {max_subdivisions} subdivisions")]
    QuadratureFailure { tol: f64, max_subdivisions: usize },
    #[error("minimizer search failed: {0}")]
    MinimizationFailure(String),
    #[error("Legendre conjugate requires a convex flux")]
    NonConvexFlux,
    #[error("argument outside the domain of the formula: {0}")]
    DomainError(String),
}

impl From<HamError> for ClosedFormError {
    fn from(e: HamError) -> Self {
        match e {
            HamError::NonConvexFlux => ClosedFormError::NonConvexFlux,
            other => ClosedFormError::DomainError(other.to_string()),
        }
    }
}

/// Controls for adaptive quadrature and the integral truncation windows.
#[derive(Debug, Clone, Copy)]
pub struct QuadratureConfig {
    /// Absolute tolerance for adaptive integration.
    pub abs_tol: f64,
    /// Integrand mass below this relative level is cut off when choosing
    /// truncation windows for integrals over the whole line.
    pub truncation_threshold: f64,
    /// Budget of adaptive subdivisions before reporting failure.
    pub max_subdivisions: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig {
            abs_tol: 1e-10,
            truncation_threshold: 1e-16,
            max_subdivisions: 2000,
        }
    }
}

/// Error function to about 1e-12 absolute accuracy.
///
/// Maclaurin series erf(x) = (2/sqrt pi) sum_k (-1)^k x^{2k+1} / (k! (2k+1))
/// for |x| <= 3; for larger |x| the complementary function via the Laplace
/// continued fraction erfc(x) = e^{-x^2}/sqrt(pi) / (x + 1/(2x + 2/(x + 3/(2x + ...)))).
pub fn erf(x: f64) -> f64 {
    let ax = x.abs();
    let val = if ax <= 3.0 {
        let x2 = ax * ax;
        let mut term = ax;
        let mut sum = ax;
        let mut k = 0u32;
        loop {
            k += 1;
            // term_k = (-1)^k x^{2k+1} / (k! (2k+1)); ratio to the previous
            // term is -x^2 (2k-1) / (k (2k+1)).
            term *= -x2 * (2.0 * k as f64 - 1.0) / (k as f64 * (2.0 * k as f64 + 1.0));
            sum += term;
            if term.abs() < 1e-17 || k > 200 {
                break;
            }
        }
        2.0 / PI.sqrt() * sum
    } else if ax >= 6.0 {
        1.0
    } else {
        // Backward evaluation of the continued fraction tail.
        let mut tail = 0.0;
        for k in (1..=40u32).rev() {
            let den = if k % 2 == 1 { 2.0 * ax } else { ax };
            tail = k as f64 / (den + tail);
        }
        let erfc = (-ax * ax).exp() / PI.sqrt() / (ax + tail);
        1.0 - erfc
    };
    if x < 0.0 {
        -val
    } else {
        val
    }
}

/// Adaptive Simpson integration of f over [a, b] to cfg.abs_tol. The
/// interval is pre-split into uniform panels so that narrow features are
/// seen before the adaptive refinement starts.
pub fn integrate<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    cfg: &QuadratureConfig,
) -> Result<f64, ClosedFormError> {
    if !(b > a) {
        return Err(ClosedFormError::DomainError(format!(
            "integration interval [{a}, {b}] is empty"
        )));
    }
    const PANELS: usize = 32;
    let mut budget = cfg.max_subdivisions;
    let mut total = 0.0;
    for i in 0..PANELS {
        let pa = a + (b - a) * i as f64 / PANELS as f64;
        let pb = a + (b - a) * (i + 1) as f64 / PANELS as f64;
        let m = 0.5 * (pa + pb);
        let (fa, fm, fb) = (f(pa), f(m), f(pb));
        let whole = (pb - pa) / 6.0 * (fa + 4.0 * fm + fb);
        let tol = cfg.abs_tol / PANELS as f64;
        total += simpson_step(f, pa, pb, fa, fm, fb, whole, tol, &mut budget).ok_or(
            ClosedFormError::QuadratureFailure {
                tol: cfg.abs_tol,
                max_subdivisions: cfg.max_subdivisions,
            },
        )?;
    }
    Ok(total)
}

fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    budget: &mut usize,
) -> Option<f64> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    // Standard Richardson acceptance: Simpson halving gains a factor 15.
    if delta.abs() <= 15.0 * tol || (b - a) < 1e-14 * (1.0 + a.abs() + b.abs()) {
        return Some(left + right + delta / 15.0);
    }
    if *budget == 0 {
        return None;
    }
    *budget -= 1;
    let l = simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, budget)?;
    let r = simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, budget)?;
    Some(l + r)
}

/// Viscous solution for the linear flux F(p) = p:
/// u(x,t) = (4 pi eps t)^{-1/2} Int exp(-|x-y|^2/(4 eps t)) g(y-t) dy,
/// i.e. the heat kernel of conductivity eps applied to g and shifted by t.
pub fn heat_kernel_solution(
    datum: InitialDatum1D,
    eps: f64,
    x: f64,
    t: f64,
    cfg: &QuadratureConfig,
) -> Result<f64, ClosedFormError> {
    if !(eps > 0.0) || !(t > 0.0) {
        return Err(ClosedFormError::DomainError(format!(
            "heat kernel requires eps > 0 and t > 0, got eps={eps}, t={t}"
        )));
    }
    let a = eps * t;
    let z = x - t;
    // Gaussian factor drops below truncation_threshold at |w - z| = radius;
    // the extra width accounts for the linear growth of the data.
    let radius = (4.0 * a * (1.0 / cfg.truncation_threshold).ln()).sqrt() + 4.0 * a + 1.0;
    let norm = (4.0 * PI * a).sqrt();
    let f = |w: f64| (-(z - w) * (z - w) / (4.0 * a)).exp() * datum.eval(w);
    let integral = integrate(&f, z - radius, z + radius, cfg)?;
    Ok(integral / norm)
}

/// Heat smoothing of the Hat datum in closed form. Equals
/// `heat_kernel_solution(Hat, ...)` and serves as its cross-check: the
/// Gaussian moments over each linear piece of the hat reduce to erf and
/// exponential terms.
pub fn hat_heat_closed_form(eps: f64, x: f64, t: f64) -> Result<f64, ClosedFormError> {
    if !(eps > 0.0) || !(t > 0.0) {
        return Err(ClosedFormError::DomainError(format!(
            "heat kernel requires eps > 0 and t > 0, got eps={eps}, t={t}"
        )));
    }
    let theta = (4.0 * eps * t).sqrt();
    let z = x - t;
    // m0(al, be) = Int_al^be K(z - w) dw, m1 the first moment in w.
    let m0 = |al: f64, be: f64| 0.5 * (erf((z - al) / theta) - erf((z - be) / theta));
    let m1 = |al: f64, be: f64| {
        z * m0(al, be)
            + theta / (2.0 * PI.sqrt())
                * ((-((z - al) / theta).powi(2)).exp() - (-((z - be) / theta).powi(2)).exp())
    };
    // Hat(w) = 1 + w on [-1, 0] and 1 - w on [0, 1].
    Ok(m0(-1.0, 0.0) + m1(-1.0, 0.0) + m0(0.0, 1.0) - m1(0.0, 1.0))
}

/// Viscous solution for the quadratic flux F(p) = |p|^2 / 2 via the log
/// transform:
/// u(x,t) = -2 eps log[(4 pi eps t)^{-1/2} Int exp(-|x-y|^2/(4 eps t) - g(y)/(2 eps)) dy].
/// The exponent is shifted by its maximum before integrating, so the
/// formula is stable for small eps.
pub fn hopf_cole_quadratic(
    datum: InitialDatum1D,
    eps: f64,
    x: f64,
    t: f64,
    cfg: &QuadratureConfig,
) -> Result<f64, ClosedFormError> {
    if !(eps > 0.0) || !(t > 0.0) {
        return Err(ClosedFormError::DomainError(format!(
            "log-transform formula requires eps > 0 and t > 0, got eps={eps}, t={t}"
        )));
    }
    let exponent = |y: f64| -(x - y) * (x - y) / (4.0 * eps * t) - datum.eval(y) / (2.0 * eps);
    let (y_star, e_max) = maximize_scalar(&exponent, x - 1.0, x + 1.0)?;
    let cut = (1.0 / cfg.truncation_threshold).ln() + 5.0;
    let (lo, hi) = expand_until_below(&exponent, y_star, e_max - cut)?;
    let f = |y: f64| (exponent(y) - e_max).exp();
    let integral = integrate(&f, lo, hi, cfg)?;
    if !(integral > 0.0) {
        return Err(ClosedFormError::MinimizationFailure(
            "log-transform integral vanished".into(),
        ));
    }
    Ok(-2.0 * eps * (e_max + integral.ln() - 0.5 * (4.0 * PI * eps * t).ln()))
}

/// Closed form of the quadratic-flux solution for g(x) = -|x| at x = 0:
/// u(0,t) = -t/2 - 2 eps log(1 + erf(sqrt t / (2 sqrt eps))).
pub fn neg_abs_closed_form(eps: f64, t: f64) -> Result<f64, ClosedFormError> {
    if !(eps > 0.0) || !(t > 0.0) {
        return Err(ClosedFormError::DomainError(format!(
            "closed form requires eps > 0 and t > 0, got eps={eps}, t={t}"
        )));
    }
    Ok(-0.5 * t - 2.0 * eps * (1.0 + erf(t.sqrt() / (2.0 * eps.sqrt()))).ln())
}

/// Pointwise error of the quadratic-flux problem at (x,t) = (0,1) in
/// integral form:
/// u^eps(0,1) - u(0,1) = -2 eps log[(4 pi eps)^{-1/2} Int exp(-(h(y) - h(ybar))/(2 eps)) dy]
/// with h(y) = g(y) + y^2/2 and ybar a global minimizer of h on [-10, 10].
pub fn quad_log_error(
    datum: InitialDatum1D,
    eps: f64,
    cfg: &QuadratureConfig,
) -> Result<f64, ClosedFormError> {
    if !(eps > 0.0) {
        return Err(ClosedFormError::DomainError(format!(
            "requires eps > 0, got {eps}"
        )));
    }
    let h = |y: f64| datum.eval(y) + 0.5 * y * y;
    let h_min = minimize_on_grid(&h, -10.0, 10.0, 100_000)?;
    let exponent = |y: f64| -(h(y) - h_min.1) / (2.0 * eps);
    let cut = (1.0 / cfg.truncation_threshold).ln() + 5.0;
    let (lo, hi) = expand_until_below(&exponent, h_min.0, -cut)?;
    let f = |y: f64| exponent(y).exp();
    let integral = integrate(&f, lo, hi, cfg)?;
    if !(integral > 0.0) {
        return Err(ClosedFormError::MinimizationFailure(
            "log-transform integral vanished".into(),
        ));
    }
    Ok(-2.0 * eps * (integral.ln() - 0.5 * (4.0 * PI * eps).ln()))
}

/// Hopf-Lax solution of the inviscid problem for a convex flux:
/// u(x,t) = inf_y { g(y) + t L((x - y)/t) } with L the Legendre conjugate.
pub fn hopf_lax(
    flux: Flux1D,
    datum: InitialDatum1D,
    x: f64,
    t: f64,
    cfg: &QuadratureConfig,
) -> Result<f64, ClosedFormError> {
    if !(t > 0.0) {
        return Err(ClosedFormError::DomainError(format!(
            "Hopf-Lax requires t > 0, got {t}"
        )));
    }
    let _ = cfg;
    match flux {
        Flux1D::OddPower { .. } => Err(ClosedFormError::NonConvexFlux),
        // L is the indicator of {1}: pure transport.
        Flux1D::Linear => Ok(datum.eval(x - t)),
        // L is the indicator of [-c, c]: windowed minimum of the datum.
        Flux1D::Abs => minimize_scalar_value(&|y| datum.eval(y), x - t, x + t),
        Flux1D::AbsPower { c, m } if m == 1.0 => {
            minimize_scalar_value(&|y| datum.eval(y), x - c * t, x + c * t)
        }
        Flux1D::AbsPower { .. } => {
            let lip = datum.lipschitz_bound((x - 100.0, x + 100.0)).max(1.0);
            // The objective g(y) + t L((x-y)/t) exceeds its value at y = x
            // once t L(d/t) > lip d; L is strictly superlinear here.
            let mut d = t.max(1.0);
            while t * flux.legendre_conjugate(d / t).unwrap_or(f64::INFINITY) <= lip * d + 1.0 {
                d *= 2.0;
                if d > 1e12 {
                    return Err(ClosedFormError::MinimizationFailure(
                        "Hopf-Lax bracket did not close".into(),
                    ));
                }
            }
            let objective = |y: f64| {
                datum.eval(y) + t * flux.legendre_conjugate((x - y) / t).unwrap_or(f64::INFINITY)
            };
            minimize_scalar_value(&objective, x - d, x + d)
        }
    }
}

/// Exact vanishing-viscosity limits of the four convex-catalog Cauchy
/// problems that admit one:
/// `"5.1"`/`"5.2"`: u = -|x| - t; `"5.3"`: u = max(1 - |x| - t, 0);
/// `"5.4"`: u = (-2x/3)^{3/2} (3 - 2t)^{-1/2} on x <= 0, t <= 1.
pub fn exact_limit_solution(example: &str, x: f64, t: f64) -> Result<f64, ClosedFormError> {
    match example {
        "5.1" | "5.2" => Ok(-x.abs() - t),
        "5.3" => Ok((1.0 - x.abs() - t).max(0.0)),
        "5.4" => {
            if x > 0.0 || t > 1.0 || t < 0.0 {
                return Err(ClosedFormError::DomainError(format!(
                    "limit formula of 5.4 needs x <= 0 and 0 <= t <= 1, got x={x}, t={t}"
                )));
            }
            Ok((-2.0 * x / 3.0).powf(1.5) / (3.0 - 2.0 * t).sqrt())
        }
        other => Err(ClosedFormError::DomainError(format!(
            "no closed-form limit for example {other}"
        ))),
    }
}

/// Stationary profile of the Dirichlet problem 2 u^3 = eps u'' on (0, inf)
/// with u(0) = 1 and decay at infinity: u(x) = sqrt(eps)/(x + sqrt(eps)).
pub fn dirichlet_ode_solution(eps: f64, x: f64) -> Result<f64, ClosedFormError> {
    if !(eps > 0.0) || x < 0.0 {
        return Err(ClosedFormError::DomainError(format!(
            "profile defined for eps > 0 and x >= 0, got eps={eps}, x={x}"
        )));
    }
    Ok(eps.sqrt() / (x + eps.sqrt()))
}

/// Golden-section maximum of f starting from a coarse bracket around
/// [lo, hi], expanding the bracket first if the maximum sits on its edge.
fn maximize_scalar<F: Fn(f64) -> f64>(
    f: &F,
    lo: f64,
    hi: f64,
) -> Result<(f64, f64), ClosedFormError> {
    let neg = |y: f64| -f(y);
    let (arg, val) = minimize_scalar(&neg, lo, hi)?;
    Ok((arg, -val))
}

/// Scan-based global minimum on a fixed interval followed by golden-section
/// refinement around every local minimum of the scan. Returns (argmin, min).
fn minimize_on_grid<F: Fn(f64) -> f64>(
    f: &F,
    lo: f64,
    hi: f64,
    n: usize,
) -> Result<(f64, f64), ClosedFormError> {
    let vals: Vec<f64> = (0..=n)
        .map(|i| f(lo + (hi - lo) * i as f64 / n as f64))
        .collect();
    let node = |i: usize| lo + (hi - lo) * i as f64 / n as f64;
    let mut best = (node(0), vals[0]);
    let mut candidates: Vec<usize> = Vec::new();
    for i in 0..=n {
        if vals[i] < best.1 {
            best = (node(i), vals[i]);
        }
        let left_up = i == 0 || vals[i] <= vals[i - 1];
        let right_up = i == n || vals[i] <= vals[i + 1];
        if left_up && right_up && vals[i].is_finite() {
            candidates.push(i);
        }
    }
    if !best.1.is_finite() {
        return Err(ClosedFormError::MinimizationFailure(
            "objective has no finite values on the search interval".into(),
        ));
    }
    for i in candidates {
        let a = node(i.saturating_sub(1));
        let b = node((i + 1).min(n));
        let (arg, val) = golden_section_min(f, a, b, 1e-10);
        if val < best.1 {
            best = (arg, val);
        }
    }
    Ok(best)
}

fn minimize_scalar<F: Fn(f64) -> f64>(
    f: &F,
    lo: f64,
    hi: f64,
) -> Result<(f64, f64), ClosedFormError> {
    minimize_on_grid(f, lo, hi, 4096)
}

fn minimize_scalar_value<F: Fn(f64) -> f64>(
    f: &F,
    lo: f64,
    hi: f64,
) -> Result<f64, ClosedFormError> {
    minimize_scalar(f, lo, hi).map(|(_, v)| v)
}

/// Golden-section minimization on [a, b] assuming a single interior
/// minimum; returns (argmin, value) once the bracket is below tol.
fn golden_section_min<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (a, b);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    let mid = 0.5 * (a + b);
    (mid, f(mid))
}

/// Expand symmetric bounds around `center` until the exponent drops below
/// `level` on both sides (the integrand is negligible beyond).
fn expand_until_below<F: Fn(f64) -> f64>(
    exponent: &F,
    center: f64,
    level: f64,
) -> Result<(f64, f64), ClosedFormError> {
    let mut w = 1.0;
    for _ in 0..200 {
        if exponent(center - w) < level && exponent(center + w) < level {
            return Ok((center - w, center + w));
        }
        w *= 1.5;
    }
    Err(ClosedFormError::MinimizationFailure(
        "integrand support window did not close".into(),
    ))
}
