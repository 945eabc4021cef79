//! Explicit monotone finite differences for u_t + F(u_x) + V(x/eps) = eps u_xx.
//!
//! The gradient is discretized centrally and the viscosity term with the
//! standard three-point Laplacian.  Monotonicity of the update map requires
//! two coupled restrictions: the viscosity must dominate the flux slope on
//! the gradient range actually visited (`eps >= eps_min`), and the time step
//! must satisfy the parabolic bound `dt <= dx^2 / (2 eps)`.  Both are
//! enforced at configuration time; the solver additionally monitors the
//! discrete gradient during the run and aborts if it leaves the range the
//! viscosity floor was sized for, since past that point the scheme may lose
//! the comparison principle silently.

use crate::hamiltonians::{Flux1D, Potential1D};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FdError {
    #[error("invalid {name}: {reason}")]
    InvalidConfig { name: &'static str, reason: String },
    #[error("solution lost finiteness at step {step} (t = {time:.6e})")]
    BlowUp { step: u64, time: f64 },
    #[error(
        "discrete gradient reached {grad:.6e} at t = {time:.6e}, outside the \
         configured radius {radius:.6e}; the monotonicity floor no longer applies"
    )]
    GradientBound { grad: f64, radius: f64, time: f64 },
    #[error("window [{lo}, {hi}] contains no grid nodes")]
    EmptyWindow { lo: f64, hi: f64 },
}

/// Uniform grid on [a, b] with `n_cells + 1` nodes, including both endpoints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid1D {
    a: f64,
    b: f64,
    n_cells: usize,
}

impl Grid1D {
    pub fn new(a: f64, b: f64, n_cells: usize) -> Result<Self, FdError> {
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(FdError::InvalidConfig {
                name: "interval",
                reason: format!("need finite a < b, got [{a}, {b}]"),
            });
        }
        if n_cells < 2 {
            return Err(FdError::InvalidConfig {
                name: "n_cells",
                reason: format!("need at least 2 cells, got {n_cells}"),
            });
        }
        Ok(Self { a, b, n_cells })
    }

    /// Grid covering [a, b] with spacing as close to `dx` as the interval
    /// allows (the cell count is rounded to the nearest integer).
    pub fn with_spacing(a: f64, b: f64, dx: f64) -> Result<Self, FdError> {
        if !(dx.is_finite() && dx > 0.0) {
            return Err(FdError::InvalidConfig {
                name: "dx",
                reason: format!("need dx > 0, got {dx}"),
            });
        }
        let n = ((b - a) / dx).round() as usize;
        Self::new(a, b, n.max(2))
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn n_nodes(&self) -> usize {
        self.n_cells + 1
    }

    pub fn dx(&self) -> f64 {
        (self.b - self.a) / self.n_cells as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        self.a + i as f64 * self.dx()
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_nodes()).map(move |i| self.node(i))
    }
}

/// Grid values at one time level.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction1D {
    pub grid: Grid1D,
    pub values: Vec<f64>,
    pub time: f64,
}

impl GridFunction1D {
    pub fn sample<G: Fn(f64) -> f64>(grid: Grid1D, g: G) -> Self {
        let values = grid.nodes().map(g).collect();
        Self {
            grid,
            values,
            time: 0.0,
        }
    }

    /// Largest |u_{i+1} - u_i| / dx over the grid.
    pub fn max_difference_quotient(&self) -> f64 {
        let inv_dx = 1.0 / self.grid.dx();
        self.values
            .windows(2)
            .map(|w| (w[1] - w[0]).abs() * inv_dx)
            .fold(0.0, f64::max)
    }
}

/// Smallest viscosity for which the update map stays monotone on states whose
/// discrete gradients lie in [-gradient_radius, gradient_radius].
pub fn eps_min(dx: f64, flux: Flux1D, gradient_radius: f64) -> f64 {
    0.5 * dx * flux.lipschitz_bound(gradient_radius)
}

/// Descending viscosity schedule 2^k * eps_min(dx, ...) for k = k_max, ..., 0.
///
/// Halving eps down the schedule keeps every member admissible for the same
/// grid, so one dx serves the whole sweep.
pub fn eps_schedule(dx: f64, flux: Flux1D, gradient_radius: f64, k_max: u32) -> Vec<f64> {
    let floor = eps_min(dx, flux, gradient_radius);
    (0..=k_max).rev().map(|k| (1u64 << k) as f64 * floor).collect()
}

/// Far-field cutoff for the sampled potential: factor 1 on |x| <= flat_until,
/// a half-cosine ramp down on (flat_until, zero_from), and 0 beyond.
///
/// The ghost closure zeroes the second difference at the two boundary nodes,
/// so they evolve without any viscosity; a potential that keeps oscillating
/// up to the boundary can feed their one-sided slopes indefinitely (observed
/// as slow gradient growth pinned to the last few nodes under the sine
/// potentials, while the interior stays put). Fading the potential to a
/// constant outside the error window's domain of influence leaves every
/// windowed value unchanged to rounding and makes the boundary dynamics
/// contraction-dominated. `flat_until` must therefore cover the window
/// radius plus `max|F'| * T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PotentialTaper {
    flat_until: f64,
    zero_from: f64,
}

impl PotentialTaper {
    pub fn new(flat_until: f64, zero_from: f64) -> Result<Self, FdError> {
        if !(flat_until.is_finite() && zero_from.is_finite() && 0.0 < flat_until && flat_until < zero_from) {
            return Err(FdError::InvalidConfig {
                name: "taper",
                reason: format!("need 0 < flat_until < zero_from, got ({flat_until}, {zero_from})"),
            });
        }
        Ok(Self {
            flat_until,
            zero_from,
        })
    }

    pub fn flat_until(&self) -> f64 {
        self.flat_until
    }

    pub fn zero_from(&self) -> f64 {
        self.zero_from
    }

    /// Cutoff factor at position `x` (even in x, C^1, non-increasing in |x|).
    pub fn factor(&self, x: f64) -> f64 {
        let r = x.abs();
        if r <= self.flat_until {
            1.0
        } else if r >= self.zero_from {
            0.0
        } else {
            let s = (r - self.flat_until) / (self.zero_from - self.flat_until);
            0.5 * (1.0 + (std::f64::consts::PI * s).cos())
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FDConfig {
    eps: f64,
    t_final: f64,
    c_cfl: f64,
    gradient_radius: f64,
}

impl FDConfig {
    /// `eps` is checked against the monotonicity floor for this grid spacing,
    /// flux, and gradient radius.  The time-step factor defaults to 0.9.
    pub fn new(
        eps: f64,
        t_final: f64,
        dx: f64,
        flux: Flux1D,
        gradient_radius: f64,
    ) -> Result<Self, FdError> {
        if !(eps.is_finite() && eps > 0.0) {
            return Err(FdError::InvalidConfig {
                name: "eps",
                reason: format!("need eps > 0, got {eps}"),
            });
        }
        if !(t_final.is_finite() && t_final >= 0.0) {
            return Err(FdError::InvalidConfig {
                name: "t_final",
                reason: format!("need t_final >= 0, got {t_final}"),
            });
        }
        if !(gradient_radius.is_finite() && gradient_radius > 0.0) {
            return Err(FdError::InvalidConfig {
                name: "gradient_radius",
                reason: format!("need a positive radius, got {gradient_radius}"),
            });
        }
        let floor = eps_min(dx, flux, gradient_radius);
        // The relative slack absorbs rounding when callers rebuild the floor
        // themselves; schedule members hit it exactly.
        if eps < floor * (1.0 - 1e-12) {
            return Err(FdError::InvalidConfig {
                name: "eps",
                reason: format!(
                    "eps = {eps:.6e} is below the monotonicity floor {floor:.6e} \
                     for dx = {dx:.6e} and gradient radius {gradient_radius}"
                ),
            });
        }
        Ok(Self {
            eps,
            t_final,
            c_cfl: 0.9,
            gradient_radius,
        })
    }

    pub fn with_cfl_factor(mut self, c_cfl: f64) -> Result<Self, FdError> {
        if !(c_cfl > 0.0 && c_cfl <= 1.0) {
            return Err(FdError::InvalidConfig {
                name: "c_cfl",
                reason: format!("need 0 < c_cfl <= 1, got {c_cfl}"),
            });
        }
        self.c_cfl = c_cfl;
        Ok(self)
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    pub fn gradient_radius(&self) -> f64 {
        self.gradient_radius
    }
}

/// One explicit step of length `dt` on `src`, written into `dst`.
///
/// Boundary nodes use the linearly extrapolated ghosts u_{-1} = 2u_0 - u_1
/// and u_{n+1} = 2u_n - u_{n-1}, which zero the second difference there and
/// continue the incoming slope.  Returns the value sum (NaN-propagating, for
/// blow-up detection) and the largest |central gradient| seen.
#[inline]
fn step_into<F: Fn(f64) -> f64>(
    flux_eval: &F,
    vpot: &[f64],
    src: &[f64],
    dst: &mut [f64],
    dt: f64,
    dx: f64,
    eps: f64,
) -> (f64, f64) {
    let n = src.len();
    assert!(n >= 3 && dst.len() == n && vpot.len() == n);
    let inv_2dx = 0.5 / dx;
    let lam = eps / (dx * dx);
    let mut sum = 0.0;
    let mut gmax = 0.0f64;
    for i in 0..n {
        let c = src[i];
        let (um, up) = if i == 0 {
            (2.0 * c - src[1], src[1])
        } else if i == n - 1 {
            (src[n - 2], 2.0 * c - src[n - 2])
        } else {
            (src[i - 1], src[i + 1])
        };
        let grad = (up - um) * inv_2dx;
        let lap = up - 2.0 * c + um;
        let next = c - dt * (flux_eval(grad) + vpot[i] - lam * lap);
        dst[i] = next;
        sum += next;
        gmax = gmax.max(grad.abs());
    }
    (sum, gmax)
}

fn run<F: Fn(f64) -> f64>(
    flux_eval: F,
    vpot: &[f64],
    grid: Grid1D,
    mut cur: Vec<f64>,
    cfg: &FDConfig,
) -> Result<GridFunction1D, FdError> {
    let dx = grid.dx();
    let dt_nominal = cfg.c_cfl * dx * dx / (2.0 * cfg.eps);
    let mut next = vec![0.0; cur.len()];
    let mut time = 0.0;
    let mut step: u64 = 0;
    // Slightly slack bound: a state may legitimately sit right on the radius.
    let grad_cap = cfg.gradient_radius * (1.0 + 1e-9) + 1e-12;
    while time < cfg.t_final {
        let remaining = cfg.t_final - time;
        // Land exactly on t_final; stretching the last step by up to 1e-9
        // relative avoids a vanishing trailing step.
        let (dt, last) = if dt_nominal >= remaining * (1.0 - 1e-9) {
            (remaining, true)
        } else {
            (dt_nominal, false)
        };
        let (sum, gmax) = step_into(&flux_eval, vpot, &cur, &mut next, dt, dx, cfg.eps);
        step += 1;
        time = if last { cfg.t_final } else { time + dt };
        if !sum.is_finite() {
            return Err(FdError::BlowUp { step, time });
        }
        if gmax > grad_cap {
            return Err(FdError::GradientBound {
                grad: gmax,
                radius: cfg.gradient_radius,
                time,
            });
        }
        std::mem::swap(&mut cur, &mut next);
        if last {
            break;
        }
    }
    Ok(GridFunction1D {
        grid,
        values: cur,
        time: cfg.t_final,
    })
}

/// Run the scheme to `cfg.t_final()` from explicit initial node values.
///
/// The flux is dispatched once here so the inner loop sees a concrete
/// closure; the common exponents get hand-specialized fast paths.
pub fn solve_from_values(
    grid: Grid1D,
    initial: Vec<f64>,
    flux: Flux1D,
    potential: Potential1D,
    cfg: &FDConfig,
) -> Result<GridFunction1D, FdError> {
    solve_from_values_tapered(grid, initial, flux, potential, None, cfg)
}

/// Like `solve_from_values`, with the sampled potential multiplied by the
/// far-field cutoff (see `PotentialTaper` for when this is sound).
pub fn solve_from_values_tapered(
    grid: Grid1D,
    initial: Vec<f64>,
    flux: Flux1D,
    potential: Potential1D,
    taper: Option<PotentialTaper>,
    cfg: &FDConfig,
) -> Result<GridFunction1D, FdError> {
    if initial.len() != grid.n_nodes() {
        return Err(FdError::InvalidConfig {
            name: "initial",
            reason: format!(
                "grid has {} nodes but {} values were supplied",
                grid.n_nodes(),
                initial.len()
            ),
        });
    }
    if cfg.t_final == 0.0 {
        return Ok(GridFunction1D {
            grid,
            values: initial,
            time: 0.0,
        });
    }
    let vpot: Vec<f64> = grid
        .nodes()
        .map(|x| {
            let factor = taper.map_or(1.0, |t| t.factor(x));
            factor * potential.eval(x / cfg.eps)
        })
        .collect();
    match flux {
        Flux1D::AbsPower { c, m } if m == 2.0 => run(|p| c * p * p, &vpot, grid, initial, cfg),
        Flux1D::AbsPower { c, m } if m == 4.0 => run(
            |p| {
                let q = p * p;
                c * q * q
            },
            &vpot,
            grid,
            initial,
            cfg,
        ),
        Flux1D::AbsPower { c, m } if m == 1.5 => run(
            |p| {
                let a = p.abs();
                c * a * a.sqrt()
            },
            &vpot,
            grid,
            initial,
            cfg,
        ),
        Flux1D::AbsPower { c, m } if m == 1.0 => run(|p| c * p.abs(), &vpot, grid, initial, cfg),
        Flux1D::OddPower { c, m } if m == 3 => run(|p| c * p * p * p, &vpot, grid, initial, cfg),
        other => run(move |p| other.eval(p), &vpot, grid, initial, cfg),
    }
}

/// Run the scheme to `cfg.t_final()` from a sampled initial datum.
pub fn solve<G: Fn(f64) -> f64>(
    grid: Grid1D,
    datum: G,
    flux: Flux1D,
    potential: Potential1D,
    cfg: &FDConfig,
) -> Result<GridFunction1D, FdError> {
    let initial = grid.nodes().map(datum).collect();
    solve_from_values(grid, initial, flux, potential, cfg)
}

/// One explicit step from `state`, honoring the same step-size rule as the
/// full run (so repeated calls land exactly on `cfg.t_final()`).
pub fn advance(
    state: &GridFunction1D,
    flux: Flux1D,
    potential: Potential1D,
    cfg: &FDConfig,
) -> Result<GridFunction1D, FdError> {
    if state.values.len() != state.grid.n_nodes() {
        return Err(FdError::InvalidConfig {
            name: "state",
            reason: "value count does not match the grid".into(),
        });
    }
    let grid = state.grid;
    let dx = grid.dx();
    let remaining = cfg.t_final - state.time;
    if remaining <= 0.0 {
        return Ok(state.clone());
    }
    let dt_nominal = cfg.c_cfl * dx * dx / (2.0 * cfg.eps);
    let (dt, new_time) = if dt_nominal >= remaining * (1.0 - 1e-9) {
        (remaining, cfg.t_final)
    } else {
        (dt_nominal, state.time + dt_nominal)
    };
    let vpot: Vec<f64> = grid.nodes().map(|x| potential.eval(x / cfg.eps)).collect();
    let mut next = vec![0.0; state.values.len()];
    let eval = |p: f64| flux.eval(p);
    let (sum, gmax) = step_into(&eval, &vpot, &state.values, &mut next, dt, dx, cfg.eps);
    if !sum.is_finite() {
        return Err(FdError::BlowUp {
            step: 1,
            time: new_time,
        });
    }
    let grad_cap = cfg.gradient_radius * (1.0 + 1e-9) + 1e-12;
    if gmax > grad_cap {
        return Err(FdError::GradientBound {
            grad: gmax,
            radius: cfg.gradient_radius,
            time: new_time,
        });
    }
    Ok(GridFunction1D {
        grid,
        values: next,
        time: new_time,
    })
}

/// Sup-norm distance from `u` to a reference function over nodes inside the
/// closed window.
pub fn sup_error<R: Fn(f64) -> f64>(
    u: &GridFunction1D,
    reference: R,
    window: (f64, f64),
) -> Result<f64, FdError> {
    let (lo, hi) = window;
    let mut best: Option<f64> = None;
    for (i, x) in u.grid.nodes().enumerate() {
        if x >= lo - 1e-14 && x <= hi + 1e-14 {
            let e = (u.values[i] - reference(x)).abs();
            best = Some(best.map_or(e, |b: f64| b.max(e)));
        }
    }
    best.ok_or(FdError::EmptyWindow { lo, hi })
}

/// Sup-norm difference of two solutions on the same grid, over a window.
pub fn sup_diff(
    u: &GridFunction1D,
    v: &GridFunction1D,
    window: (f64, f64),
) -> Result<f64, FdError> {
    if u.grid != v.grid {
        return Err(FdError::InvalidConfig {
            name: "grids",
            reason: "sup_diff needs both solutions on the same grid".into(),
        });
    }
    let (lo, hi) = window;
    let mut best: Option<f64> = None;
    for (i, x) in u.grid.nodes().enumerate() {
        if x >= lo - 1e-14 && x <= hi + 1e-14 {
            let e = (u.values[i] - v.values[i]).abs();
            best = Some(best.map_or(e, |b: f64| b.max(e)));
        }
    }
    best.ok_or(FdError::EmptyWindow { lo, hi })
}
