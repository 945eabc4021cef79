//! Catalog of Hamiltonians and initial data.
//!
//! One-dimensional problems use separable Hamiltonians H(y,p) = F(p) + V(y)
//! with a flux F and a bounded periodic potential V. Two-dimensional
//! problems on the torus come from optimal control,
//! H(y,p) = sup_a { -b(y,a).p - f(y,a) }.

use std::f64::consts::TAU;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum HamError {
    #[error("invalid {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("Legendre conjugate requires a convex flux")]
    NonConvexFlux,
    #[error("Hamiltonian dimension mismatch: expected {expected}-dimensional arguments")]
    DimensionMismatch { expected: usize },
}

/// Flux F(p) of a separable 1-D Hamiltonian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Flux1D {
    /// F(p) = c|p|^m with c > 0 and m >= 1. Convex.
    AbsPower { c: f64, m: f64 },
    /// F(p) = c p^m with odd integer m >= 3. Coercive but not convex.
    OddPower { c: f64, m: u32 },
    /// F(p) = p.
    Linear,
    /// F(p) = |p|.
    Abs,
}

impl Flux1D {
    pub fn abs_power(c: f64, m: f64) -> Result<Self, HamError> {
        if !(c > 0.0) || !c.is_finite() {
            return Err(HamError::InvalidParameter {
                name: "c",
                reason: format!("must be positive and finite, got {c}"),
            });
        }
        if !(m >= 1.0) || !m.is_finite() {
            return Err(HamError::InvalidParameter {
                name: "m",
                reason: format!("must be >= 1, got {m}"),
            });
        }
        Ok(Flux1D::AbsPower { c, m })
    }

    pub fn odd_power(c: f64, m: u32) -> Result<Self, HamError> {
        if !(c != 0.0) || !c.is_finite() {
            return Err(HamError::InvalidParameter {
                name: "c",
                reason: format!("must be nonzero and finite, got {c}"),
            });
        }
        if m < 3 || m % 2 == 0 {
            return Err(HamError::InvalidParameter {
                name: "m",
                reason: format!("must be an odd integer >= 3, got {m}"),
            });
        }
        Ok(Flux1D::OddPower { c, m })
    }

    /// F(p). Common exponents avoid `powf`, which dominates the
    /// time-stepping loop otherwise.
    #[inline]
    pub fn eval(&self, p: f64) -> f64 {
        match *self {
            Flux1D::AbsPower { c, m } => {
                let a = p.abs();
                if m == 2.0 {
                    c * a * a
                } else if m == 4.0 {
                    let q = a * a;
                    c * q * q
                } else if m == 1.5 {
                    c * a * a.sqrt()
                } else if m == 1.0 {
                    c * a
                } else {
                    c * a.powf(m)
                }
            }
            Flux1D::OddPower { c, m } => {
                if m == 3 {
                    c * p * p * p
                } else {
                    c * p.powi(m as i32)
                }
            }
            Flux1D::Linear => p,
            Flux1D::Abs => p.abs(),
        }
    }

    /// max over |p| <= radius of |F'(p)|. This is the constant entering the
    /// monotonicity requirement eps >= dx/2 * lipschitz_bound(radius) of the
    /// explicit scheme.
    pub fn lipschitz_bound(&self, radius: f64) -> f64 {
        match *self {
            Flux1D::AbsPower { c, m } => c * m * radius.powf(m - 1.0),
            Flux1D::OddPower { c, m } => c.abs() * m as f64 * radius.powi(m as i32 - 1),
            Flux1D::Linear | Flux1D::Abs => 1.0,
        }
    }

    /// Legendre conjugate L(v) = sup_p { p v - F(p) }.
    ///
    /// Closed forms: for F = c|p|^m with m > 1,
    /// L(v) = (1 - 1/m) (c m)^{-1/(m-1)} |v|^{m/(m-1)};
    /// for F = c|p|, L(v) = 0 on |v| <= c and +inf outside;
    /// for F = p, L(v) = 0 at v = 1 and +inf elsewhere.
    /// `OddPower` is not convex and has no conjugate in this sense.
    pub fn legendre_conjugate(&self, v: f64) -> Result<f64, HamError> {
        match *self {
            Flux1D::OddPower { .. } => Err(HamError::NonConvexFlux),
            Flux1D::AbsPower { c, m } if m > 1.0 => {
                let dual = m / (m - 1.0);
                Ok((1.0 - 1.0 / m) * (c * m).powf(-1.0 / (m - 1.0)) * v.abs().powf(dual))
            }
            Flux1D::AbsPower { c, .. } => {
                Ok(if v.abs() <= c { 0.0 } else { f64::INFINITY })
            }
            Flux1D::Abs => Ok(if v.abs() <= 1.0 { 0.0 } else { f64::INFINITY }),
            Flux1D::Linear => Ok(if v == 1.0 { 0.0 } else { f64::INFINITY }),
        }
    }

    /// Whether the conjugate is a finite strictly superlinear function
    /// (AbsPower with m > 1), as opposed to an indicator of an interval.
    pub fn has_superlinear_conjugate(&self) -> bool {
        matches!(*self, Flux1D::AbsPower { m, .. } if m > 1.0)
    }
}

/// Bounded periodic potential V(y) of a separable 1-D Hamiltonian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Potential1D {
    Zero,
    /// Distance to the nearest integer: min_k |y - k|. Period 1, range [0, 1/2].
    TriangleWave,
    /// Squared distance to the nearest integer: min_k |y - k|^2. Period 1, range [0, 1/4].
    ParabolaWave,
    /// sin(2 pi y / period).
    Sine { period: f64 },
}

impl Potential1D {
    pub fn sine(period: f64) -> Result<Self, HamError> {
        if !(period > 0.0) || !period.is_finite() {
            return Err(HamError::InvalidParameter {
                name: "period",
                reason: format!("must be positive and finite, got {period}"),
            });
        }
        Ok(Potential1D::Sine { period })
    }

    #[inline]
    pub fn eval(&self, y: f64) -> f64 {
        match *self {
            Potential1D::Zero => 0.0,
            Potential1D::TriangleWave => {
                let f = y.rem_euclid(1.0);
                f.min(1.0 - f)
            }
            Potential1D::ParabolaWave => {
                let f = y.rem_euclid(1.0);
                let d = f.min(1.0 - f);
                d * d
            }
            Potential1D::Sine { period } => (TAU * y / period).sin(),
        }
    }

    pub fn period(&self) -> f64 {
        match *self {
            Potential1D::Zero | Potential1D::TriangleWave | Potential1D::ParabolaWave => 1.0,
            Potential1D::Sine { period } => period,
        }
    }

    /// sup_y |V(y)|.
    pub fn sup_bound(&self) -> f64 {
        match *self {
            Potential1D::Zero => 0.0,
            Potential1D::TriangleWave => 0.5,
            Potential1D::ParabolaWave => 0.25,
            Potential1D::Sine { .. } => 1.0,
        }
    }

    /// max V - min V, which bounds how much the Hamiltonian can lift the
    /// gradient of solutions above the initial Lipschitz constant.
    pub fn oscillation(&self) -> f64 {
        match *self {
            Potential1D::Zero => 0.0,
            Potential1D::TriangleWave => 0.5,
            Potential1D::ParabolaWave => 0.25,
            Potential1D::Sine { .. } => 2.0,
        }
    }
}

/// Control set of the 2-D HJB Hamiltonians.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlSet {
    /// The single control a = 0; the Hamiltonian is linear in p.
    Singleton,
    /// The closed Euclidean unit ball.
    UnitBall,
}

/// Data of the 2-D control Hamiltonian
/// H(y,p) = sup_{a} { -b(y,a).p - f(y,a) } on the unit torus, with
/// b(y,a) = b0(y) + a (a = 0 for the singleton set),
/// b0(y) = (cos(2 pi y1)/(2 pi), 0) and f(y,a) = 1 + sin(2 pi y1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HJBData2D {
    pub control: ControlSet,
    /// sup over y and admissible a of |b(y,a)|.
    pub drift_bound: f64,
}

impl HJBData2D {
    pub fn new(control: ControlSet) -> Self {
        let base = 1.0 / TAU;
        let drift_bound = match control {
            ControlSet::Singleton => base,
            ControlSet::UnitBall => base + 1.0,
        };
        HJBData2D { control, drift_bound }
    }

    #[inline]
    pub fn drift_base(y: [f64; 2]) -> [f64; 2] {
        [(TAU * y[0]).cos() / TAU, 0.0]
    }

    #[inline]
    pub fn cost_base(y: [f64; 2]) -> f64 {
        1.0 + (TAU * y[0]).sin()
    }

    pub fn drift(&self, y: [f64; 2], a: [f64; 2]) -> [f64; 2] {
        let b0 = Self::drift_base(y);
        match self.control {
            ControlSet::Singleton => b0,
            ControlSet::UnitBall => [b0[0] + a[0], b0[1] + a[1]],
        }
    }

    pub fn cost(&self, y: [f64; 2], _a: [f64; 2]) -> f64 {
        Self::cost_base(y)
    }

    /// Discount threshold drift_bound^2 / 4 above which the weak form of
    /// the discounted corrector problem is strongly monotone.
    pub fn min_discount(&self) -> f64 {
        self.drift_bound * self.drift_bound / 4.0
    }

    /// H(y,p). The supremum over the unit ball of -a.p is |p|.
    pub fn eval_h(&self, y: [f64; 2], p: [f64; 2]) -> f64 {
        let b0 = Self::drift_base(y);
        let lin = -(b0[0] * p[0] + b0[1] * p[1]) - Self::cost_base(y);
        match self.control {
            ControlSet::Singleton => lin,
            ControlSet::UnitBall => lin + (p[0] * p[0] + p[1] * p[1]).sqrt(),
        }
    }
}

/// A Hamiltonian from the experiment catalog.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HamiltonianSpec {
    /// H(y,p) = F(p) + V(y) in one dimension.
    Separable { flux: Flux1D, potential: Potential1D },
    /// Control Hamiltonian on the 2-torus.
    HJB2D(HJBData2D),
}

impl HamiltonianSpec {
    pub fn eval_1d(&self, y: f64, p: f64) -> Result<f64, HamError> {
        match self {
            HamiltonianSpec::Separable { flux, potential } => {
                Ok(flux.eval(p) + potential.eval(y))
            }
            HamiltonianSpec::HJB2D(_) => Err(HamError::DimensionMismatch { expected: 2 }),
        }
    }

    pub fn eval_2d(&self, y: [f64; 2], p: [f64; 2]) -> Result<f64, HamError> {
        match self {
            HamiltonianSpec::Separable { .. } => Err(HamError::DimensionMismatch { expected: 1 }),
            HamiltonianSpec::HJB2D(data) => Ok(data.eval_h(y, p)),
        }
    }
}

/// Initial datum g of the 1-D Cauchy problems.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialDatum1D {
    /// g(x) = -|x|.
    NegAbs,
    /// g(x) = max(1 - |x|, 0).
    Hat,
    /// g(x) = M min(|x|, |x - 1/2| - 1/4) with scale M > 0.
    DoubleWell { m: f64 },
    /// g(x) = (2 sqrt 2 / 9)(-x)^{3/2} on x <= 0, extended by 0 on x > 0.
    /// The extension is C^1 and reproduces the quadrant problem with
    /// boundary value 0 at x = 0 for times t <= 1.
    Power32,
    /// g(x) = max(-x^2/2, |x| - 3/2); equals -x^2/2 exactly on [-1, 1].
    CappedParabola,
}

impl InitialDatum1D {
    pub fn double_well(m: f64) -> Result<Self, HamError> {
        if !(m > 0.0) || !m.is_finite() {
            return Err(HamError::InvalidParameter {
                name: "M",
                reason: format!("must be positive and finite, got {m}"),
            });
        }
        Ok(InitialDatum1D::DoubleWell { m })
    }

    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            InitialDatum1D::NegAbs => -x.abs(),
            InitialDatum1D::Hat => (1.0 - x.abs()).max(0.0),
            InitialDatum1D::DoubleWell { m } => m * x.abs().min((x - 0.5).abs() - 0.25),
            InitialDatum1D::Power32 => {
                if x <= 0.0 {
                    2.0 * std::f64::consts::SQRT_2 / 9.0 * (-x).powf(1.5)
                } else {
                    0.0
                }
            }
            InitialDatum1D::CappedParabola => (-x * x / 2.0).max(x.abs() - 1.5),
        }
    }

    /// Lipschitz constant of g restricted to [a, b]. All data are piecewise
    /// C^1; only Power32 has a slope growing with |x| (like sqrt(-x) on the
    /// negative axis), so the bound depends on the interval.
    pub fn lipschitz_bound(&self, interval: (f64, f64)) -> f64 {
        let (a, b) = interval;
        match *self {
            InitialDatum1D::NegAbs | InitialDatum1D::Hat => 1.0,
            InitialDatum1D::DoubleWell { m } => m,
            InitialDatum1D::Power32 => {
                let deepest = (-a.min(b)).max(0.0);
                std::f64::consts::SQRT_2 / 3.0 * deepest.sqrt()
            }
            InitialDatum1D::CappedParabola => 1.0,
        }
    }
}
