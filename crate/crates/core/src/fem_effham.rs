//! Effective Hamiltonians on the 2-torus by discounted correctors.
//!
//! For a control Hamiltonian H(y, q) = sup_a { -b(y,a).q - f(y,a) } the
//! discounted corrector v solves  sigma v + H(y, p + Dv) = Lap v  on the unit
//! torus, and -sigma * mean(v) approximates Hbar(p) to first order in sigma.
//! The discretization is periodic P1 finite elements on a uniform right
//! triangulation with a 3-point edge-midpoint quadrature (exact for the
//! quadratic products of P1 bases); the nonlinearity is handled by policy
//! iteration: freeze the maximizing control field, solve the resulting
//! nonsymmetric sparse linear system, re-maximize, repeat.

use crate::closed_form::{integrate, ClosedFormError, QuadratureConfig};
use crate::hamiltonians::{ControlSet, HJBData2D};
use rustfft::{num_complex::Complex, Fft, FftPlanner};
use std::f64::consts::TAU;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FemError {
    #[error("invalid {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error(
        "linear solver stalled after {iters} iterations (relative residual {residual:.3e})"
    )]
    LinearSolveFailure { iters: usize, residual: f64 },
    #[error(
        "policy iteration did not converge in {max_iters} iterations \
         (last value change {last_diff:.3e})"
    )]
    NoConvergence { max_iters: usize, last_diff: f64 },
    #[error(transparent)]
    Quadrature(#[from] ClosedFormError),
}

/// Problem data the assembly consumes: an affine-in-control drift
/// b(y, a) = drift_base(y) + a over `control_set`, and a control-independent
/// running cost.  Implementations must be 1-periodic in both components of y.
pub trait ControlProblem2D {
    fn control_set(&self) -> ControlSet;
    fn drift_base(&self, y: [f64; 2]) -> [f64; 2];
    fn cost(&self, y: [f64; 2]) -> f64;
    /// Upper bound for |b(y, a)| over y and admissible a.
    fn drift_bound(&self) -> f64;

    /// Discount threshold above which the frozen-policy weak forms are
    /// uniformly strongly monotone.
    fn min_discount(&self) -> f64 {
        let b = self.drift_bound();
        b * b / 4.0
    }
}

impl ControlProblem2D for HJBData2D {
    fn control_set(&self) -> ControlSet {
        self.control
    }

    fn drift_base(&self, y: [f64; 2]) -> [f64; 2] {
        HJBData2D::drift_base(y)
    }

    fn cost(&self, y: [f64; 2]) -> f64 {
        HJBData2D::cost_base(y)
    }

    fn drift_bound(&self) -> f64 {
        self.drift_bound
    }
}

/// Uniform periodic triangulation of the unit torus: N x N nodes, each grid
/// square split along its lower-left to upper-right diagonal.  Connectivity
/// is derived from indices, so the mesh itself stores only N.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PeriodicMesh2D {
    n: usize,
}

/// Vertex order inside a triangle is (A, B, C) counterclockwise; quadrature
/// points are the edge midpoints in the order (AB, BC, CA).
#[derive(Debug, Clone, Copy)]
pub struct Triangle {
    pub nodes: [usize; 3],
    /// Constant gradients of the three nodal basis functions.
    pub grads: [[f64; 2]; 3],
    /// Edge midpoints in unwrapped coordinates (data must be periodic).
    pub midpoints: [[f64; 2]; 3],
}

/// Basis values at the edge midpoints: PHI[vertex][midpoint].
const PHI: [[f64; 3]; 3] = [
    [0.5, 0.0, 0.5],
    [0.5, 0.5, 0.0],
    [0.0, 0.5, 0.5],
];

impl PeriodicMesh2D {
    pub fn build(n: usize) -> Result<Self, FemError> {
        if n < 2 {
            return Err(FemError::InvalidParameter {
                name: "n_per_side",
                reason: format!("need N >= 2, got {n}"),
            });
        }
        Ok(Self { n })
    }

    pub fn n_per_side(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn n_nodes(&self) -> usize {
        self.n * self.n
    }

    pub fn n_triangles(&self) -> usize {
        2 * self.n * self.n
    }

    pub fn triangle_area(&self) -> f64 {
        0.5 * self.h() * self.h()
    }

    #[inline]
    pub fn node_index(&self, i: usize, j: usize) -> usize {
        (j % self.n) * self.n + (i % self.n)
    }

    /// Triangle 2*(j*N+i) is the lower half of cell (i, j), 2*(j*N+i)+1 the
    /// upper half.
    pub fn triangle(&self, t: usize) -> Triangle {
        let n = self.n;
        let h = self.h();
        let cell = t / 2;
        let (i, j) = (cell % n, cell / n);
        let (x0, y0) = (i as f64 * h, j as f64 * h);
        let inv = 1.0 / h;
        if t % 2 == 0 {
            // A = (x0,y0), B = (x0+h,y0), C = (x0+h,y0+h).
            Triangle {
                nodes: [
                    self.node_index(i, j),
                    self.node_index(i + 1, j),
                    self.node_index(i + 1, j + 1),
                ],
                grads: [[-inv, 0.0], [inv, -inv], [0.0, inv]],
                midpoints: [
                    [x0 + 0.5 * h, y0],
                    [x0 + h, y0 + 0.5 * h],
                    [x0 + 0.5 * h, y0 + 0.5 * h],
                ],
            }
        } else {
            // A = (x0,y0), B = (x0+h,y0+h), C = (x0,y0+h).
            Triangle {
                nodes: [
                    self.node_index(i, j),
                    self.node_index(i + 1, j + 1),
                    self.node_index(i, j + 1),
                ],
                grads: [[0.0, -inv], [inv, 0.0], [-inv, inv]],
                midpoints: [
                    [x0 + 0.5 * h, y0 + 0.5 * h],
                    [x0 + 0.5 * h, y0 + h],
                    [x0, y0 + 0.5 * h],
                ],
            }
        }
    }
}

/// Continuous piecewise-linear function given by periodic nodal values.
#[derive(Debug, Clone, PartialEq)]
pub struct P1Function {
    pub mesh: PeriodicMesh2D,
    pub nodal_values: Vec<f64>,
}

impl P1Function {
    pub fn zero(mesh: PeriodicMesh2D) -> Self {
        Self {
            mesh,
            nodal_values: vec![0.0; mesh.n_nodes()],
        }
    }

    /// Exact integral over the torus, element by element: each triangle
    /// contributes area/3 times its vertex sum.
    pub fn integral(&self) -> f64 {
        let third = self.mesh.triangle_area() / 3.0;
        (0..self.mesh.n_triangles())
            .map(|t| {
                let tri = self.mesh.triangle(t);
                third
                    * (self.nodal_values[tri.nodes[0]]
                        + self.nodal_values[tri.nodes[1]]
                        + self.nodal_values[tri.nodes[2]])
            })
            .sum()
    }

    /// The same integral collapsed node-wise: every node carries weight h^2
    /// because it touches six triangles.
    pub fn integral_lumped(&self) -> f64 {
        let h = self.mesh.h();
        h * h * self.nodal_values.iter().sum::<f64>()
    }

    /// Constant gradient on triangle `t`.
    pub fn gradient_on(&self, tri: &Triangle) -> [f64; 2] {
        let mut g = [0.0, 0.0];
        for (v, grad) in tri.nodes.iter().zip(&tri.grads) {
            let w = self.nodal_values[*v];
            g[0] += w * grad[0];
            g[1] += w * grad[1];
        }
        g
    }
}

/// One control per quadrature point, stored triangle-major in the midpoint
/// order (AB, BC, CA).
#[derive(Debug, Clone, PartialEq)]
pub struct ControlField {
    pub controls: Vec<[f64; 2]>,
}

impl ControlField {
    pub fn zeros(mesh: &PeriodicMesh2D) -> Self {
        Self {
            controls: vec![[0.0, 0.0]; 3 * mesh.n_triangles()],
        }
    }
}

/// Pointwise maximizer of -(drift_base(y_q) + a) . q - cost(y_q) over the
/// control set, with q = p + Dw on the triangle containing y_q.  The
/// y-dependent terms do not involve a, so on the unit ball the maximizer is
/// -q/|q|, with 0 as the tie-break at q = 0.
pub fn select_controls<P: ControlProblem2D>(
    w: &P1Function,
    p: [f64; 2],
    data: &P,
) -> ControlField {
    let mesh = w.mesh;
    let mut controls = vec![[0.0, 0.0]; 3 * mesh.n_triangles()];
    if data.control_set() == ControlSet::UnitBall {
        for t in 0..mesh.n_triangles() {
            let tri = mesh.triangle(t);
            let g = w.gradient_on(&tri);
            let q = [p[0] + g[0], p[1] + g[1]];
            let norm = (q[0] * q[0] + q[1] * q[1]).sqrt();
            let a = if norm > 1e-14 {
                [-q[0] / norm, -q[1] / norm]
            } else {
                [0.0, 0.0]
            };
            controls[3 * t] = a;
            controls[3 * t + 1] = a;
            controls[3 * t + 2] = a;
        }
    }
    ControlField { controls }
}

#[derive(Debug, Clone, Copy)]
pub struct HowardConfig {
    pub sigma: f64,
    pub tol_policy: f64,
    pub max_policy_iters: usize,
    pub linear_tol: f64,
    pub max_linear_iters: usize,
    pub warn_below_min_discount: bool,
}

impl HowardConfig {
    pub fn new(sigma: f64) -> Result<Self, FemError> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(FemError::InvalidParameter {
                name: "sigma",
                reason: format!("need sigma > 0, got {sigma}"),
            });
        }
        Ok(Self {
            sigma,
            tol_policy: 1e-10,
            max_policy_iters: 100,
            linear_tol: 1e-12,
            max_linear_iters: 50_000,
            warn_below_min_discount: true,
        })
    }
}

#[derive(Debug, Clone)]
pub struct HowardDiagnostics {
    /// Number of linear solves performed.
    pub policy_iterations: usize,
    /// Last max-node value change, 0 when the policy repeated exactly.
    pub final_policy_residual: f64,
    /// Max-node value change per iteration.
    pub value_diffs: Vec<f64>,
    /// Sup norm of the nonlinear algebraic residual at each iterate, starting
    /// from the initial guess.
    pub nonlinear_residuals: Vec<f64>,
    pub linear_iterations_total: usize,
    pub min_discount_satisfied: bool,
}

#[derive(Debug, Clone)]
pub struct EffHamResult {
    pub p: [f64; 2],
    pub sigma: f64,
    pub h: f64,
    /// The approximation -sigma * integral of the discrete corrector.
    pub value: f64,
    pub policy_iterations: usize,
    pub final_policy_residual: f64,
    pub min_discount_satisfied: bool,
}

/// Compressed sparse rows with a precomputed symmetric stencil pattern: row i
/// holds the (sorted, deduplicated) periodic neighbors of node i.
pub struct Csr {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl Csr {
    fn with_stencil(mesh: &PeriodicMesh2D) -> Self {
        let n_side = mesh.n_per_side();
        let n = mesh.n_nodes();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        row_ptr.push(0);
        let mut scratch = Vec::with_capacity(7);
        for j in 0..n_side {
            for i in 0..n_side {
                scratch.clear();
                // Seven-point stencil of the diagonal split; wrapping can
                // collapse entries for tiny N, hence the dedup.
                for (di, dj) in [
                    (0, 0),
                    (1, 0),
                    (n_side - 1, 0),
                    (0, 1),
                    (0, n_side - 1),
                    (1, 1),
                    (n_side - 1, n_side - 1),
                ] {
                    scratch.push(mesh.node_index(i + di, j + dj));
                }
                scratch.sort_unstable();
                scratch.dedup();
                cols.extend_from_slice(&scratch);
                row_ptr.push(cols.len());
            }
        }
        let nnz = cols.len();
        Csr {
            n,
            row_ptr,
            cols,
            vals: vec![0.0; nnz],
        }
    }

    #[inline]
    fn add(&mut self, row: usize, col: usize, v: f64) {
        let lo = self.row_ptr[row];
        let hi = self.row_ptr[row + 1];
        // Rows have at most 7 entries; linear scan beats binary search.
        for k in lo..hi {
            if self.cols[k] == col {
                self.vals[k] += v;
                return;
            }
        }
        unreachable!("column {col} outside the stencil of row {row}");
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            y[i] = acc;
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                if self.cols[k] == i {
                    d[i] = self.vals[k];
                }
            }
        }
        d
    }

    fn to_dense(&self) -> Vec<f64> {
        let mut a = vec![0.0; self.n * self.n];
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                a[i * self.n + self.cols[k]] = self.vals[k];
            }
        }
        a
    }
}

/// Assemble the frozen-policy system  (Dw, Dphi) + sigma (w, phi)
/// - (b . Dw, phi) = (b . p + f, phi)  with all products by the 3-point rule.
/// Assembly runs in fixed triangle order, so the result is bit-reproducible.
pub fn assemble<P: ControlProblem2D>(
    mesh: &PeriodicMesh2D,
    field: &ControlField,
    p: [f64; 2],
    data: &P,
    sigma: f64,
) -> (Csr, Vec<f64>) {
    assert_eq!(field.controls.len(), 3 * mesh.n_triangles());
    let mut a = Csr::with_stencil(mesh);
    let mut rhs = vec![0.0; mesh.n_nodes()];
    let area = mesh.triangle_area();
    let third = area / 3.0;
    let ball = data.control_set() == ControlSet::UnitBall;
    for t in 0..mesh.n_triangles() {
        let tri = mesh.triangle(t);
        // Quadrature-point drifts and costs for this triangle.
        let mut b_q = [[0.0; 2]; 3];
        let mut g_q = [0.0; 3];
        for q in 0..3 {
            let y = tri.midpoints[q];
            let base = data.drift_base(y);
            let alpha = field.controls[3 * t + q];
            let b = if ball {
                [base[0] + alpha[0], base[1] + alpha[1]]
            } else {
                base
            };
            b_q[q] = b;
            g_q[q] = b[0] * p[0] + b[1] * p[1] + data.cost(y);
        }
        for va in 0..3 {
            let ia = tri.nodes[va];
            // Load vector: (b.p + f, phi_a).
            let mut load = 0.0;
            for q in 0..3 {
                load += PHI[va][q] * g_q[q];
            }
            rhs[ia] += third * load;
            for vb in 0..3 {
                let ib = tri.nodes[vb];
                // Stiffness, exact for constant gradients.
                let stiff = area
                    * (tri.grads[va][0] * tri.grads[vb][0]
                        + tri.grads[va][1] * tri.grads[vb][1]);
                // Mass and convection by the midpoint rule.
                let mut mass = 0.0;
                let mut conv = 0.0;
                for q in 0..3 {
                    mass += PHI[va][q] * PHI[vb][q];
                    conv += PHI[va][q]
                        * (b_q[q][0] * tri.grads[vb][0] + b_q[q][1] * tri.grads[vb][1]);
                }
                a.add(ia, ib, stiff + third * (sigma * mass - conv));
            }
        }
    }
    (a, rhs)
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Subtract the mean, in place.
fn project_out_mean(v: &mut [f64]) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
}

/// BiCGStab on an abstract operator.  `apply` must be linear; the iteration
/// stops when the recursive residual reaches `target` in the 2-norm.
/// Returns the solution estimate, iteration count, and whether the target
/// was met.  Shadow-product breakdowns restart from the current residual.
fn bicgstab_core<F: FnMut(&[f64], &mut [f64])>(
    mut apply: F,
    b: &[f64],
    mut x: Vec<f64>,
    target: f64,
    max_iters: usize,
) -> (Vec<f64>, usize, bool) {
    let n = b.len();
    let mut r = vec![0.0; n];
    apply(&x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    if norm2(&r) <= target {
        return (x, 0, true);
    }
    let mut r_hat = r.clone();
    let mut rho = 1.0;
    let mut alpha = 1.0;
    let mut omega = 1.0;
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut t_vec = vec![0.0; n];
    let mut restarts = 0;
    let mut iters = 0;
    while iters < max_iters {
        iters += 1;
        let rho_new = dot(&r_hat, &r);
        let rnorm = norm2(&r);
        if rho_new.abs() < 1e-60 * rnorm * rnorm || !rho_new.is_finite() {
            if restarts >= 20 {
                return (x, iters, false);
            }
            restarts += 1;
            r_hat.copy_from_slice(&r);
            p.copy_from_slice(&r);
            rho = dot(&r_hat, &r);
            apply(&p, &mut v);
            if rho == 0.0 {
                return (x, iters, rnorm <= target);
            }
        } else {
            let beta = (rho_new / rho) * (alpha / omega);
            for i in 0..n {
                p[i] = r[i] + beta * (p[i] - omega * v[i]);
            }
            apply(&p, &mut v);
            rho = rho_new;
        }
        let denom = dot(&r_hat, &v);
        if denom == 0.0 || !denom.is_finite() {
            return (x, iters, norm2(&r) <= target);
        }
        alpha = rho / denom;
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if norm2(&s) <= target {
            for i in 0..n {
                x[i] += alpha * p[i];
            }
            r.copy_from_slice(&s);
            return (x, iters, true);
        }
        apply(&s, &mut t_vec);
        let tt = dot(&t_vec, &t_vec);
        omega = if tt > 0.0 { dot(&t_vec, &s) / tt } else { 0.0 };
        if omega == 0.0 || !omega.is_finite() {
            return (x, iters, false);
        }
        for i in 0..n {
            x[i] += alpha * p[i] + omega * s[i];
            r[i] = s[i] - omega * t_vec[i];
        }
        if norm2(&r) <= target {
            return (x, iters, true);
        }
    }
    (x, max_iters, false)
}

fn inf_norm_rows(a: &Csr) -> f64 {
    (0..a.n)
        .map(|i| {
            (a.row_ptr[i]..a.row_ptr[i + 1])
                .map(|k| a.vals[k].abs())
                .sum::<f64>()
        })
        .fold(0.0, f64::max)
}

/// Residual allowance for the verification step: the requested tolerance on
/// the data norm plus the roundoff floor of evaluating b - Ax itself, which
/// dominates when the solution carries a large constant component (small
/// discounts).
fn residual_allowance(a: &Csr, b: &[f64], x: &[f64], tol: f64) -> f64 {
    tol * norm2(b) + 16.0 * f64::EPSILON * inf_norm_rows(a) * norm2(x)
}

/// Jacobi-preconditioned BiCGStab on the full system, verified on the true
/// residual.
pub fn bicgstab(
    a: &Csr,
    b: &[f64],
    x0: Vec<f64>,
    tol: f64,
    max_iters: usize,
) -> Result<(Vec<f64>, usize), FemError> {
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        return Ok((vec![0.0; a.n], 0));
    }
    let inv_d: Vec<f64> = a.diagonal().iter().map(|d| 1.0 / d).collect();
    let bp: Vec<f64> = b.iter().zip(&inv_d).map(|(v, d)| v * d).collect();
    let mut tmp = vec![0.0; a.n];
    let (x, iters, _) = bicgstab_core(
        |z, out| {
            a.matvec(z, &mut tmp);
            for i in 0..a.n {
                out[i] = tmp[i] * inv_d[i];
            }
        },
        &bp,
        x0,
        tol * norm2(&bp),
        max_iters,
    );
    let mut r = vec![0.0; a.n];
    a.matvec(&x, &mut r);
    for i in 0..a.n {
        r[i] = b[i] - r[i];
    }
    let res = norm2(&r);
    if res <= residual_allowance(a, b, &x, tol) {
        Ok((x, iters))
    } else {
        Err(FemError::LinearSolveFailure {
            iters,
            residual: res / bnorm,
        })
    }
}

/// Exact Fourier inverse of the drift-free part sigma M + S of the assembled
/// operator.  On the uniform mesh both matrices are translation-invariant:
/// the right-triangle split makes the stiffness couple each node only to its
/// four axis neighbours (the two hypotenuse gradients are orthogonal, so that
/// coupling cancels), and the mass stencil covers the six surrounding nodes.
/// Plane waves with angles th = 2 pi k h, ph = 2 pi l h therefore diagonalize
/// the sum with symbol
///
///   (4 - 2 cos th - 2 cos ph)
///     + sigma h^2 (1/2 + (cos th + cos ph + cos(th + ph)) / 6).
///
/// Used as a right preconditioner the convection term is all that remains
/// for the Krylov iteration, and its preconditioned norm stays O(h |b|), so
/// iteration counts are bounded independently of the mesh.  The constant
/// mode (symbol sigma h^2) is handled by the deflation in `solve_deflated`,
/// never by this inverse: its weight is pinned to zero.
pub struct SpectralPoisson {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    symbol: Vec<f64>,
    inv_symbol: Vec<f64>,
}

impl SpectralPoisson {
    pub fn new(mesh: &PeriodicMesh2D, sigma: f64) -> Self {
        let n = mesh.n_per_side();
        let h2 = mesh.h() * mesh.h();
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let mut symbol = vec![0.0; n * n];
        for k in 0..n {
            let th = TAU * k as f64 / n as f64;
            for l in 0..n {
                let ph = TAU * l as f64 / n as f64;
                let stiffness = 4.0 - 2.0 * th.cos() - 2.0 * ph.cos();
                let mass = h2 * (0.5 + (th.cos() + ph.cos() + (th + ph).cos()) / 6.0);
                symbol[k * n + l] = stiffness + sigma * mass;
            }
        }
        let inv_symbol = symbol
            .iter()
            .enumerate()
            .map(|(m, s)| if m == 0 { 0.0 } else { 1.0 / s })
            .collect();
        Self {
            n,
            fwd,
            inv,
            symbol,
            inv_symbol,
        }
    }

    /// Two-dimensional FFT round trip with a diagonal filter in between.
    /// The symbol is symmetric under swapping the two frequencies, so the
    /// frequency-domain layout does not need to match the mesh's node order.
    fn filtered(&self, input: &[f64], weights: &[f64], out: &mut [f64]) {
        let n = self.n;
        let mut buf: Vec<Complex<f64>> = input.iter().map(|&v| Complex::new(v, 0.0)).collect();
        let mut scratch = vec![Complex::new(0.0, 0.0); n * n];
        let transpose = |buf: &mut Vec<Complex<f64>>, scratch: &mut Vec<Complex<f64>>| {
            for a in 0..n {
                for b in 0..n {
                    scratch[b * n + a] = buf[a * n + b];
                }
            }
            std::mem::swap(buf, scratch);
        };
        self.fwd.process(&mut buf);
        transpose(&mut buf, &mut scratch);
        self.fwd.process(&mut buf);
        for (z, w) in buf.iter_mut().zip(weights) {
            *z *= *w;
        }
        self.inv.process(&mut buf);
        transpose(&mut buf, &mut scratch);
        self.inv.process(&mut buf);
        // rustfft transforms are unnormalized; a forward/inverse pair per
        // dimension scales by n, hence n^2 overall.
        let scale = 1.0 / (n as f64 * n as f64);
        for (o, z) in out.iter_mut().zip(&buf) {
            *o = z.re * scale;
        }
    }

    /// (sigma M + S)^{-1} restricted to mean-zero vectors; constants map to 0.
    pub fn apply_inverse(&self, r: &[f64], out: &mut [f64]) {
        self.filtered(r, &self.inv_symbol, out);
    }

    /// sigma M + S itself (used to translate a warm start into the
    /// preconditioned variable).
    pub fn apply_forward(&self, v: &[f64], out: &mut [f64]) {
        self.filtered(v, &self.symbol, out);
    }
}

/// Deflated solve for the assembled systems, which satisfy A.1 = c.1 with
/// c = sigma h^2 (stiffness and convection annihilate constants).  The
/// constant right-eigenvector's eigenvalue c is tiny for small discounts and
/// ruins Krylov convergence, so the mean-zero part is solved iteratively
/// with the mean projected out of every operator application, and the mean
/// itself is recovered algebraically from the row-sum identity:
/// mean(A(z + m.1)) = mean(Az) + c m  must equal  mean(b).
///
/// With a `SpectralPoisson` the mean-zero part is right-preconditioned, so
/// the iterated residual is exactly the projected true residual; without one
/// the operator is Jacobi-scaled.  Either way the answer is checked against
/// the unprojected system before it is returned.
pub fn solve_deflated(
    a: &Csr,
    b: &[f64],
    x0: Vec<f64>,
    constant_eigenvalue: f64,
    tol: f64,
    max_iters: usize,
    precond: Option<&SpectralPoisson>,
) -> Result<(Vec<f64>, usize), FemError> {
    let n = a.n;
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        return Ok((vec![0.0; n], 0));
    }
    let mut b_perp = b.to_vec();
    project_out_mean(&mut b_perp);
    let mut z0 = x0;
    project_out_mean(&mut z0);
    let mut tmp = vec![0.0; n];
    let (z, iters) = match precond {
        Some(sp) => {
            if norm2(&b_perp) == 0.0 {
                (vec![0.0; n], 0)
            } else {
                // Solve (Pi A P^{-1}) y = Pi b, then undo x = P^{-1} y.  The
                // warm start must be mapped the other way, y0 = P z0.
                let mut y0 = vec![0.0; n];
                sp.apply_forward(&z0, &mut y0);
                let target = tol * norm2(&b_perp);
                let (y, iters, _) = bicgstab_core(
                    |v, out| {
                        sp.apply_inverse(v, &mut tmp);
                        a.matvec(&tmp, out);
                        project_out_mean(out);
                    },
                    &b_perp,
                    y0,
                    target,
                    max_iters,
                );
                let mut z = vec![0.0; n];
                sp.apply_inverse(&y, &mut z);
                (z, iters)
            }
        }
        None => {
            let inv_d: Vec<f64> = a.diagonal().iter().map(|d| 1.0 / d).collect();
            // Jacobi-scaled projected right-hand side and operator.
            let mut bp: Vec<f64> = b_perp.iter().zip(&inv_d).map(|(v, d)| v * d).collect();
            project_out_mean(&mut bp);
            if norm2(&bp) == 0.0 {
                (vec![0.0; n], 0)
            } else {
                let (z, iters, _) = bicgstab_core(
                    |v, out| {
                        a.matvec(v, &mut tmp);
                        project_out_mean(&mut tmp);
                        for i in 0..n {
                            out[i] = tmp[i] * inv_d[i];
                        }
                        project_out_mean(out);
                    },
                    &bp,
                    z0,
                    tol * norm2(&bp),
                    max_iters,
                );
                (z, iters)
            }
        }
    };
    a.matvec(&z, &mut tmp);
    let mean_b = b.iter().sum::<f64>() / n as f64;
    let mean_az = tmp.iter().sum::<f64>() / n as f64;
    let m = (mean_b - mean_az) / constant_eigenvalue;
    let x: Vec<f64> = z.iter().map(|v| v + m).collect();
    let mut r = vec![0.0; n];
    a.matvec(&x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let res = norm2(&r);
    if res <= residual_allowance(a, b, &x, tol) {
        Ok((x, iters))
    } else {
        Err(FemError::LinearSolveFailure {
            iters,
            residual: res / bnorm,
        })
    }
}

/// Gaussian elimination with partial pivoting on the densified matrix.
/// Only sensible for the small meshes used in tests (N <= 16).
pub fn solve_dense(a: &Csr, b: &[f64]) -> Result<Vec<f64>, FemError> {
    let n = a.n;
    let mut m = a.to_dense();
    let mut x = b.to_vec();
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&r1, &r2| {
                m[r1 * n + col]
                    .abs()
                    .total_cmp(&m[r2 * n + col].abs())
            })
            .unwrap();
        if m[pivot_row * n + col].abs() < 1e-300 {
            return Err(FemError::LinearSolveFailure {
                iters: 0,
                residual: f64::INFINITY,
            });
        }
        if pivot_row != col {
            for k in 0..n {
                m.swap(col * n + k, pivot_row * n + k);
            }
            x.swap(col, pivot_row);
        }
        let pivot = m[col * n + col];
        for row in col + 1..n {
            let factor = m[row * n + col] / pivot;
            if factor != 0.0 {
                for k in col..n {
                    m[row * n + k] -= factor * m[col * n + k];
                }
                x[row] -= factor * x[col];
            }
        }
    }
    for row in (0..n).rev() {
        let mut acc = x[row];
        for k in row + 1..n {
            acc -= m[row * n + k] * x[k];
        }
        x[row] = acc / m[row * n + row];
    }
    Ok(x)
}

/// Solve the frozen-policy linear problem.  The deflated iterative path is
/// the default; on failure, meshes small enough for a dense solve fall back
/// to elimination so tests below the strong-monotonicity threshold stay
/// usable.
pub fn assemble_and_solve_linear<P: ControlProblem2D>(
    mesh: &PeriodicMesh2D,
    field: &ControlField,
    p: [f64; 2],
    data: &P,
    cfg: &HowardConfig,
    initial_guess: Option<Vec<f64>>,
    precond: Option<&SpectralPoisson>,
) -> Result<(P1Function, usize), FemError> {
    let (a, rhs) = assemble(mesh, field, p, data, cfg.sigma);
    let x0 = initial_guess.unwrap_or_else(|| vec![0.0; mesh.n_nodes()]);
    let h = mesh.h();
    match solve_deflated(
        &a,
        &rhs,
        x0,
        cfg.sigma * h * h,
        cfg.linear_tol,
        cfg.max_linear_iters,
        precond,
    ) {
        Ok((values, iters)) => Ok((
            P1Function {
                mesh: *mesh,
                nodal_values: values,
            },
            iters,
        )),
        Err(e) => {
            if mesh.n_per_side() <= 16 {
                let values = solve_dense(&a, &rhs)?;
                Ok((
                    P1Function {
                        mesh: *mesh,
                        nodal_values: values,
                    },
                    0,
                ))
            } else {
                Err(e)
            }
        }
    }
}

/// Sup norm of the nonlinear algebraic residual A(w)w - F(w), with the
/// policy re-selected from w itself.
fn nonlinear_residual<P: ControlProblem2D>(
    mesh: &PeriodicMesh2D,
    w: &P1Function,
    p: [f64; 2],
    data: &P,
    sigma: f64,
) -> f64 {
    let field = select_controls(w, p, data);
    let (a, rhs) = assemble(mesh, &field, p, data, sigma);
    let mut aw = vec![0.0; mesh.n_nodes()];
    a.matvec(&w.nodal_values, &mut aw);
    aw.iter()
        .zip(&rhs)
        .map(|(l, r)| (l - r).abs())
        .fold(0.0, f64::max)
}

/// Howard's policy iteration from w = 0.  Stops when consecutive values
/// agree to tol_policy or the control field repeats exactly; the latter
/// reports residual 0, since the fixed point has been reached up to the
/// linear tolerance.
pub fn howard_solve<P: ControlProblem2D>(
    p: [f64; 2],
    data: &P,
    mesh: &PeriodicMesh2D,
    cfg: &HowardConfig,
) -> Result<(P1Function, HowardDiagnostics), FemError> {
    let min_discount_satisfied = cfg.sigma > data.min_discount();
    if !min_discount_satisfied && cfg.warn_below_min_discount {
        eprintln!(
            "warning: sigma = {:.3e} is at or below the strong-monotonicity \
             threshold {:.3e}; proceeding anyway",
            cfg.sigma,
            data.min_discount()
        );
    }
    let mut w = P1Function::zero(*mesh);
    let mut field = select_controls(&w, p, data);
    let mut value_diffs = Vec::new();
    let mut nonlinear_residuals =
        vec![nonlinear_residual(mesh, &w, p, data, cfg.sigma)];
    let mut linear_iterations_total = 0;
    // Shared across policy iterations: the drift-free symbol depends only on
    // the mesh and sigma, not on the frozen control field.
    let precond = SpectralPoisson::new(mesh, cfg.sigma);
    for iter in 1..=cfg.max_policy_iters {
        let (w_new, lin_iters) = assemble_and_solve_linear(
            mesh,
            &field,
            p,
            data,
            cfg,
            Some(w.nodal_values.clone()),
            Some(&precond),
        )?;
        linear_iterations_total += lin_iters;
        let diff = w
            .nodal_values
            .iter()
            .zip(&w_new.nodal_values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        value_diffs.push(diff);
        nonlinear_residuals.push(nonlinear_residual(mesh, &w_new, p, data, cfg.sigma));
        let field_new = select_controls(&w_new, p, data);
        let policy_stable = field_new == field;
        w = w_new;
        field = field_new;
        if policy_stable || diff <= cfg.tol_policy {
            let diagnostics = HowardDiagnostics {
                policy_iterations: iter,
                final_policy_residual: if policy_stable { 0.0 } else { diff },
                value_diffs,
                nonlinear_residuals,
                linear_iterations_total,
                min_discount_satisfied,
            };
            return Ok((w, diagnostics));
        }
    }
    Err(FemError::NoConvergence {
        max_iters: cfg.max_policy_iters,
        last_diff: value_diffs.last().copied().unwrap_or(f64::NAN),
    })
}

/// Approximate effective Hamiltonian -sigma * integral(corrector).
pub fn eff_ham_approx<P: ControlProblem2D>(
    p: [f64; 2],
    data: &P,
    sigma: f64,
    n: usize,
) -> Result<EffHamResult, FemError> {
    eff_ham_approx_with(p, data, n, &HowardConfig::new(sigma)?)
}

pub fn eff_ham_approx_with<P: ControlProblem2D>(
    p: [f64; 2],
    data: &P,
    n: usize,
    cfg: &HowardConfig,
) -> Result<EffHamResult, FemError> {
    let mesh = PeriodicMesh2D::build(n)?;
    let (w, diag) = howard_solve(p, data, &mesh, cfg)?;
    Ok(EffHamResult {
        p,
        sigma: cfg.sigma,
        h: mesh.h(),
        value: -cfg.sigma * w.integral(),
        policy_iterations: diag.policy_iterations,
        final_policy_residual: diag.final_policy_residual,
        min_discount_satisfied: diag.min_discount_satisfied,
    })
}

/// Effective Hamiltonian of the linear (singleton-control) catalog problem,
/// independently of the mesh pipeline.  Averaging the corrector equation
/// against the invariant weight exp(B), B(y) = sin(2 pi y)/(4 pi^2), kills
/// the drift and diffusion terms, leaving
///   Hbar = -(1 + Int sin(2 pi t) e^{B(t)} dt / Int e^{B(s)} ds),
/// a value independent of p (the drift has zero weighted mean, so the b.p
/// contribution vanishes).  p is accepted to mirror the sweep call sites.
pub fn exact_linear_effham(
    _p: [f64; 2],
    cfg: &QuadratureConfig,
) -> Result<f64, FemError> {
    // 4 pi^2 = TAU^2.
    let weight = |t: f64| ((TAU * t).sin() / (TAU * TAU)).exp();
    let num = integrate(&|t: f64| (TAU * t).sin() * weight(t), 0.0, 1.0, cfg)?;
    let den = integrate(&weight, 0.0, 1.0, cfg)?;
    Ok(-(1.0 + num / den))
}
