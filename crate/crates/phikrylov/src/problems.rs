//! Stiff PDE benchmark problems on finite-difference grids.
//!
//! Five classic stiff test problems, each spatially discretized with
//! second-order centered differences and exposed as a matrix-free
//! [`OdeProblem`]: a 2D Allen-Cahn equation, a 2D advection-diffusion-reaction
//! equation, the 2D Brusselator, 2D Gray-Scott, and a 1D semilinear parabolic
//! equation with a nonlocal integral term whose exact solution is
//! `x (1 - x) e^t`. Construct them by id with [`make_problem`].
//!
//! Boundary handling: no-flow and homogeneous Neumann conditions use mirror
//! ghost nodes (`u_{-1} = u_1`), which keeps the stencil second order and
//! every row sum zero; periodic grids wrap; the Dirichlet grid stores
//! interior nodes only with the zero boundary values folded into the
//! right-hand side. Two-species fields are stored as `[all u, all v]`.

use crate::epirk::OdeProblem;
use crate::{Error, Result};

/// Boundary closure of a grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryKind {
    /// Homogeneous Neumann (no-flow) via mirror ghost nodes.
    Neumann,
    /// Periodic wrap-around.
    Periodic,
    /// Homogeneous Dirichlet; the grid stores interior nodes only.
    Dirichlet,
}

/// Uniform square grid on `[a, b]^2` with `n` points per dimension.
#[derive(Debug, Clone, Copy)]
pub struct Grid2D {
    pub n: usize,
    pub a: f64,
    pub b: f64,
    pub delta: f64,
    pub boundary: BoundaryKind,
}

impl Grid2D {
    pub fn new(n: usize, a: f64, b: f64, boundary: BoundaryKind) -> Self {
        let delta = match boundary {
            // node-inclusive layouts
            BoundaryKind::Neumann | BoundaryKind::Dirichlet => (b - a) / (n - 1) as f64,
            BoundaryKind::Periodic => (b - a) / n as f64,
        };
        Self {
            n,
            a,
            b,
            delta,
            boundary,
        }
    }

    /// Number of unknowns per field.
    pub fn field_len(&self) -> usize {
        match self.boundary {
            BoundaryKind::Dirichlet => (self.n - 2) * (self.n - 2),
            _ => self.n * self.n,
        }
    }

    /// Number of stored points per dimension.
    fn side(&self) -> usize {
        match self.boundary {
            BoundaryKind::Dirichlet => self.n - 2,
            _ => self.n,
        }
    }

    /// Coordinate of stored index `i` along one axis.
    pub fn coord(&self, i: usize) -> f64 {
        match self.boundary {
            BoundaryKind::Dirichlet => self.a + (i + 1) as f64 * self.delta,
            _ => self.a + i as f64 * self.delta,
        }
    }

    /// Five-point Laplacian with the grid's boundary closure.
    pub fn laplacian_apply(&self, field: &[f64], out: &mut [f64]) -> Result<()> {
        if field.len() != self.field_len() || out.len() != self.field_len() {
            return Err(Error::Dimension(format!(
                "field length {} does not match grid ({} unknowns)",
                field.len(),
                self.field_len()
            )));
        }
        let s = self.side();
        let inv_d2 = 1.0 / (self.delta * self.delta);
        for j in 0..s {
            for i in 0..s {
                let c = field[j * s + i];
                let (left, right, down, up) = match self.boundary {
                    BoundaryKind::Neumann => (
                        field[j * s + if i == 0 { 1 } else { i - 1 }],
                        field[j * s + if i == s - 1 { s - 2 } else { i + 1 }],
                        field[if j == 0 { 1 } else { j - 1 } * s + i],
                        field[if j == s - 1 { s - 2 } else { j + 1 } * s + i],
                    ),
                    BoundaryKind::Periodic => (
                        field[j * s + (i + s - 1) % s],
                        field[j * s + (i + 1) % s],
                        field[((j + s - 1) % s) * s + i],
                        field[((j + 1) % s) * s + i],
                    ),
                    BoundaryKind::Dirichlet => (
                        if i == 0 { 0.0 } else { field[j * s + i - 1] },
                        if i == s - 1 { 0.0 } else { field[j * s + i + 1] },
                        if j == 0 { 0.0 } else { field[(j - 1) * s + i] },
                        if j == s - 1 { 0.0 } else { field[(j + 1) * s + i] },
                    ),
                };
                out[j * s + i] = (left + right + down + up - 4.0 * c) * inv_d2;
            }
        }
        Ok(())
    }

    /// Centered first-derivative sum `u_x + u_y` with the grid's closure.
    /// With mirror ghosts the normal derivative vanishes on the boundary.
    pub fn advection_apply(&self, field: &[f64], out: &mut [f64]) -> Result<()> {
        if field.len() != self.field_len() || out.len() != self.field_len() {
            return Err(Error::Dimension("field length mismatch".into()));
        }
        let s = self.side();
        let inv_2d = 1.0 / (2.0 * self.delta);
        for j in 0..s {
            for i in 0..s {
                let (left, right, down, up) = match self.boundary {
                    BoundaryKind::Neumann => (
                        field[j * s + if i == 0 { 1 } else { i - 1 }],
                        field[j * s + if i == s - 1 { s - 2 } else { i + 1 }],
                        field[if j == 0 { 1 } else { j - 1 } * s + i],
                        field[if j == s - 1 { s - 2 } else { j + 1 } * s + i],
                    ),
                    BoundaryKind::Periodic => (
                        field[j * s + (i + s - 1) % s],
                        field[j * s + (i + 1) % s],
                        field[((j + s - 1) % s) * s + i],
                        field[((j + 1) % s) * s + i],
                    ),
                    BoundaryKind::Dirichlet => (
                        if i == 0 { 0.0 } else { field[j * s + i - 1] },
                        if i == s - 1 { 0.0 } else { field[j * s + i + 1] },
                        if j == 0 { 0.0 } else { field[(j - 1) * s + i] },
                        if j == s - 1 { 0.0 } else { field[(j + 1) * s + i] },
                    ),
                };
                out[j * s + i] = ((right - left) + (up - down)) * inv_2d;
            }
        }
        Ok(())
    }

    /// Trapezoidal quadrature weight of a stored node along one axis.
    /// Node-inclusive grids weight boundary nodes by half; a Dirichlet grid
    /// never stores them, so every stored node gets a full weight.
    pub fn quad_weight_1d(&self, i: usize) -> f64 {
        match self.boundary {
            BoundaryKind::Neumann => {
                if i == 0 || i == self.n - 1 {
                    0.5 * self.delta
                } else {
                    self.delta
                }
            }
            BoundaryKind::Periodic => self.delta,
            BoundaryKind::Dirichlet => self.delta,
        }
    }
}

pub const PROBLEM_IDS: [&str; 5] = ["allen-cahn", "adr", "brusselator", "gray-scott", "semilinear"];

/// Builds one of the benchmark problems with `n` grid points per dimension.
pub fn make_problem(name: &str, n: usize) -> Result<OdeProblem> {
    if n < 8 {
        return Err(Error::InvalidRequest(format!(
            "grid resolution {} is too coarse (need n >= 8)",
            n
        )));
    }
    match name {
        "allen-cahn" => Ok(allen_cahn(n)),
        "adr" => Ok(adr(n)),
        "brusselator" => Ok(brusselator(n)),
        "gray-scott" => Ok(gray_scott(n)),
        "semilinear" => Ok(semilinear(n)),
        other => Err(Error::UnknownProblem(other.to_string())),
    }
}

/// Exact endpoint values for problems that have a closed-form solution, over
/// the observable entries. Only the semilinear problem provides one.
pub fn exact_solution(name: &str, n: usize, t: f64) -> Option<Vec<f64>> {
    if name != "semilinear" {
        return None;
    }
    let grid = Grid1D::dirichlet(n);
    Some(
        (0..grid.interior)
            .map(|i| {
                let x = grid.coord(i);
                x * (1.0 - x) * t.exp()
            })
            .collect(),
    )
}

/// u_t = alpha lap(u) + u - u^3 on [-1, 1]^2, no-flow boundary.
fn allen_cahn(n: usize) -> OdeProblem {
    let grid = Grid2D::new(n, -1.0, 1.0, BoundaryKind::Neumann);
    let alpha = 0.1;
    let dim = grid.field_len();
    let mut initial = vec![0.0; dim];
    for j in 0..n {
        for i in 0..n {
            let (x, y) = (grid.coord(i), grid.coord(j));
            initial[j * n + i] = 0.1
                + 0.1
                    * (2.0 * std::f64::consts::PI * x).cos()
                    * (2.0 * std::f64::consts::PI * y).cos();
        }
    }
    let g1 = grid;
    let g2 = grid;
    OdeProblem {
        dim,
        rhs: Box::new(move |u, out| {
            g1.laplacian_apply(u, out).unwrap();
            for i in 0..u.len() {
                out[i] = alpha * out[i] + u[i] - u[i] * u[i] * u[i];
            }
        }),
        jacobian: Box::new(move |u, x, out| {
            g2.laplacian_apply(x, out).unwrap();
            for i in 0..x.len() {
                out[i] = alpha * out[i] + (1.0 - 3.0 * u[i] * u[i]) * x[i];
            }
        }),
        initial,
        t_span: (0.0, 1.0),
        nnz_hint: Some(5 * dim),
        observable_dim: dim,
    }
}

/// u_t = eps lap(u) - alpha (u_x + u_y) + gamma u (u - 1/2)(1 - u) on
/// [0, 1]^2 with homogeneous Neumann boundary.
fn adr(n: usize) -> OdeProblem {
    let grid = Grid2D::new(n, 0.0, 1.0, BoundaryKind::Neumann);
    let eps = 0.01;
    let alpha = -10.0;
    let gamma = 100.0;
    let dim = grid.field_len();
    let mut initial = vec![0.0; dim];
    for j in 0..n {
        for i in 0..n {
            let (x, y) = (grid.coord(i), grid.coord(j));
            let poly = x * y * (1.0 - x) * (1.0 - y);
            initial[j * n + i] = 256.0 * poly * poly + 0.3;
        }
    }
    let g1 = grid;
    let g2 = grid;
    OdeProblem {
        dim,
        rhs: Box::new(move |u, out| {
            let mut adv = vec![0.0; u.len()];
            g1.laplacian_apply(u, out).unwrap();
            g1.advection_apply(u, &mut adv).unwrap();
            for i in 0..u.len() {
                let reaction = gamma * u[i] * (u[i] - 0.5) * (1.0 - u[i]);
                out[i] = eps * out[i] - alpha * adv[i] + reaction;
            }
        }),
        jacobian: Box::new(move |u, x, out| {
            let mut adv = vec![0.0; x.len()];
            g2.laplacian_apply(x, out).unwrap();
            g2.advection_apply(x, &mut adv).unwrap();
            for i in 0..x.len() {
                let dreaction = gamma * (3.0 * u[i] - 3.0 * u[i] * u[i] - 0.5);
                out[i] = eps * out[i] - alpha * adv[i] + dreaction * x[i];
            }
        }),
        initial,
        t_span: (0.0, 0.1),
        nnz_hint: Some(9 * dim),
        observable_dim: dim,
    }
}

/// Brusselator reaction-diffusion pair on [0, 1]^2, homogeneous Neumann.
fn brusselator(n: usize) -> OdeProblem {
    let grid = Grid2D::new(n, 0.0, 1.0, BoundaryKind::Neumann);
    let alpha = 0.02;
    let nn = grid.field_len();
    let dim = 2 * nn;
    let mut initial = vec![0.0; dim];
    for j in 0..n {
        for i in 0..n {
            let (x, y) = (grid.coord(i), grid.coord(j));
            initial[j * n + i] = 2.0 + 0.25 * y;
            initial[nn + j * n + i] = 1.0 + 0.8 * x;
        }
    }
    let g1 = grid;
    let g2 = grid;
    OdeProblem {
        dim,
        rhs: Box::new(move |state, out| {
            let (u, v) = state.split_at(nn);
            let (ou, ov) = out.split_at_mut(nn);
            g1.laplacian_apply(u, ou).unwrap();
            g1.laplacian_apply(v, ov).unwrap();
            for i in 0..nn {
                let uv2 = u[i] * u[i] * v[i];
                let lu = ou[i];
                let lv = ov[i];
                ou[i] = 1.0 + uv2 - 4.0 * u[i] + alpha * lu;
                ov[i] = 3.0 * u[i] - uv2 + alpha * lv;
            }
        }),
        jacobian: Box::new(move |state, x, out| {
            let (u, v) = state.split_at(nn);
            let (xu, xv) = x.split_at(nn);
            let (ou, ov) = out.split_at_mut(nn);
            g2.laplacian_apply(xu, ou).unwrap();
            g2.laplacian_apply(xv, ov).unwrap();
            for i in 0..nn {
                let lu = ou[i];
                let lv = ov[i];
                ou[i] = alpha * lu + (2.0 * u[i] * v[i] - 4.0) * xu[i] + u[i] * u[i] * xv[i];
                ov[i] = alpha * lv + (3.0 - 2.0 * u[i] * v[i]) * xu[i] - u[i] * u[i] * xv[i];
            }
        }),
        initial,
        t_span: (0.0, 1.0),
        nnz_hint: Some(7 * dim),
        observable_dim: dim,
    }
}

/// Gray-Scott autocatalytic pair on [0, 1]^2 with periodic boundary.
/// The literature leaves the time horizon open; it defaults to 0.1 and the
/// benchmark harness can override it.
fn gray_scott(n: usize) -> OdeProblem {
    let grid = Grid2D::new(n, 0.0, 1.0, BoundaryKind::Periodic);
    let (du, dv, a, b) = (0.2, 0.1, 0.04, 0.06);
    let nn = grid.field_len();
    let dim = 2 * nn;
    let mut initial = vec![0.0; dim];
    for j in 0..n {
        for i in 0..n {
            let (x, y) = (grid.coord(i), grid.coord(j));
            let dx2 = (x - 0.5) * (x - 0.5);
            let dy2 = (y - 0.5) * (y - 0.5);
            initial[j * n + i] = 1.0 - (-150.0 * (dx2 + dy2)).exp();
            initial[nn + j * n + i] = (-150.0 * (dx2 + 2.0 * dy2)).exp();
        }
    }
    let g1 = grid;
    let g2 = grid;
    OdeProblem {
        dim,
        rhs: Box::new(move |state, out| {
            let (u, v) = state.split_at(nn);
            let (ou, ov) = out.split_at_mut(nn);
            g1.laplacian_apply(u, ou).unwrap();
            g1.laplacian_apply(v, ov).unwrap();
            for i in 0..nn {
                let uvv = u[i] * v[i] * v[i];
                let lu = ou[i];
                let lv = ov[i];
                ou[i] = du * lu - uvv + a * (1.0 - u[i]);
                ov[i] = dv * lv + uvv - (a + b) * v[i];
            }
        }),
        jacobian: Box::new(move |state, x, out| {
            let (u, v) = state.split_at(nn);
            let (xu, xv) = x.split_at(nn);
            let (ou, ov) = out.split_at_mut(nn);
            g2.laplacian_apply(xu, ou).unwrap();
            g2.laplacian_apply(xv, ov).unwrap();
            for i in 0..nn {
                let lu = ou[i];
                let lv = ov[i];
                let v2 = v[i] * v[i];
                let cross = 2.0 * u[i] * v[i];
                ou[i] = du * lu - v2 * xu[i] - cross * xv[i] - a * xu[i];
                ov[i] = dv * lv + v2 * xu[i] + cross * xv[i] - (a + b) * xv[i];
            }
        }),
        initial,
        t_span: (0.0, 0.1),
        nnz_hint: Some(7 * dim),
        observable_dim: dim,
    }
}

/// One-dimensional node-inclusive grid with interior storage, for the
/// semilinear problem.
#[derive(Debug, Clone, Copy)]
struct Grid1D {
    interior: usize,
    delta: f64,
}

impl Grid1D {
    fn dirichlet(n: usize) -> Self {
        Self {
            interior: n - 2,
            delta: 1.0 / (n - 1) as f64,
        }
    }

    fn coord(&self, i: usize) -> f64 {
        (i + 1) as f64 * self.delta
    }
}

/// 1D semilinear parabolic equation with a nonlocal integral term:
///
/// ```text
/// U_t - U_xx = int_0^1 U dx + Phi(x, t),   U(0) = U(1) = 0,
/// ```
///
/// with the source chosen so that `U = x (1 - x) e^t` solves it exactly:
/// `Phi(x, t) = e^t (x (1 - x) + 11/6)`. The time dependence is folded into
/// an autonomous system by appending the time itself as a trailing state
/// entry with unit derivative, so the stored dimension is `(n - 2) + 1`; the
/// trailing entry is excluded from `observable_dim`. The integral uses
/// trapezoidal weights (boundary values vanish), entering the Jacobian as a
/// rank-one term applied matrix-free.
fn semilinear(n: usize) -> OdeProblem {
    let grid = Grid1D::dirichlet(n);
    let k = grid.interior;
    let dim = k + 1;
    let delta = grid.delta;
    let phi_vec: Vec<f64> = (0..k)
        .map(|i| {
            let x = grid.coord(i);
            x * (1.0 - x) + 11.0 / 6.0
        })
        .collect();
    let mut initial = vec![0.0; dim];
    for i in 0..k {
        let x = grid.coord(i);
        initial[i] = x * (1.0 - x);
    }
    initial[k] = 0.0; // time starts at t_0 = 0

    let phi_rhs = phi_vec.clone();
    let phi_jac = phi_vec;
    OdeProblem {
        dim,
        rhs: Box::new(move |state, out| {
            let (u, theta) = (&state[..k], state[k]);
            let source_scale = theta.exp();
            let inv_d2 = 1.0 / (delta * delta);
            let integral: f64 = u.iter().sum::<f64>() * delta;
            for i in 0..k {
                let left = if i == 0 { 0.0 } else { u[i - 1] };
                let right = if i == k - 1 { 0.0 } else { u[i + 1] };
                out[i] = (left - 2.0 * u[i] + right) * inv_d2
                    + integral
                    + source_scale * phi_rhs[i];
            }
            out[k] = 1.0;
        }),
        jacobian: Box::new(move |state, x, out| {
            let theta = state[k];
            let source_scale = theta.exp();
            let (xu, xtheta) = (&x[..k], x[k]);
            let inv_d2 = 1.0 / (delta * delta);
            let integral: f64 = xu.iter().sum::<f64>() * delta;
            for i in 0..k {
                let left = if i == 0 { 0.0 } else { xu[i - 1] };
                let right = if i == k - 1 { 0.0 } else { xu[i + 1] };
                out[i] = (left - 2.0 * xu[i] + right) * inv_d2
                    + integral
                    + source_scale * phi_jac[i] * xtheta;
            }
            out[k] = 0.0;
        }),
        initial,
        t_span: (0.0, 1.0),
        nnz_hint: Some(k * k + 4 * k),
        observable_dim: k,
    }
}
