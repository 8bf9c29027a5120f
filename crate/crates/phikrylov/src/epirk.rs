//! Exponential time integrators of Runge-Kutta type.
//!
//! Four fixed-step schemes for stiff systems `du/dt = f(u)`: two stiffly
//! accurate fourth-order three-stage methods, a classical fifth-order method,
//! and a stiffly accurate fifth-order Rosenbrock-type method. Every stage
//! combines products of phi functions of the scaled Jacobian `h J_n` with
//! vectors built from `h f(u_n)` and the nonlinear remainder
//!
//! ```text
//! r(u) = f(u) - f(u_n) - J_n (u - u_n),
//! ```
//!
//! which vanishes identically for linear problems. The phi products are
//! grouped so that a fourth-order step costs two solver calls and a
//! fifth-order step three: terms sharing one phi index and one vector are
//! evaluated at several times in a single call, and the final update of the
//! stiffly accurate schemes is one linear-combination call at time one. The
//! Krylov dimension that finished one step seeds the next step's solver
//! calls.

use crate::operator::LinearOperator;
use crate::solver::{kiops, PhiRequest, SolveStats, Task};
use crate::{Error, Result};

/// A stiff initial value problem in matrix-free form.
///
/// `rhs` evaluates `f(u)`; `jacobian` applies the Jacobian at the first
/// argument to the second, `(u, x) -> J(u) x`. Both must be pure.
pub struct OdeProblem {
    pub dim: usize,
    pub rhs: Box<dyn Fn(&[f64], &mut [f64]) + Send + Sync>,
    pub jacobian: Box<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync>,
    pub initial: Vec<f64>,
    pub t_span: (f64, f64),
    /// Estimated Jacobian nonzeros, for the solver's cost diagnostics.
    pub nnz_hint: Option<usize>,
    /// Number of leading state entries that carry physical meaning; entries
    /// beyond this (such as an autonomization variable) are excluded from
    /// error measurements.
    pub observable_dim: usize,
}

impl OdeProblem {
    pub fn eval_rhs(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        (self.rhs)(u, &mut out);
        out
    }
}

/// The Jacobian at a frozen state, scaled by the step size, viewed as a
/// linear operator for the solver.
struct ScaledJacobian<'a> {
    problem: &'a OdeProblem,
    state: &'a [f64],
    scale: f64,
}

impl LinearOperator for ScaledJacobian<'_> {
    fn dim(&self) -> usize {
        self.problem.dim
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        (self.problem.jacobian)(self.state, x, out);
        if self.scale != 1.0 {
            for v in out.iter_mut() {
                *v *= self.scale;
            }
        }
    }

    fn nnz_hint(&self) -> Option<usize> {
        self.problem.nnz_hint
    }
}

/// Scheme selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpirkScheme {
    Epirk4s3,
    Epirk4s3a,
    Epirk5p1,
    Exprb5s3,
}

impl EpirkScheme {
    pub fn id(&self) -> &'static str {
        match self {
            EpirkScheme::Epirk4s3 => "epirk4s3",
            EpirkScheme::Epirk4s3a => "epirk4s3a",
            EpirkScheme::Epirk5p1 => "epirk5p1",
            EpirkScheme::Exprb5s3 => "exprb5s3",
        }
    }

    pub fn all() -> [EpirkScheme; 4] {
        [
            EpirkScheme::Epirk4s3,
            EpirkScheme::Epirk4s3a,
            EpirkScheme::Epirk5p1,
            EpirkScheme::Exprb5s3,
        ]
    }

    /// Classical order of the scheme.
    pub fn order(&self) -> usize {
        match self {
            EpirkScheme::Epirk4s3 | EpirkScheme::Epirk4s3a => 4,
            EpirkScheme::Epirk5p1 | EpirkScheme::Exprb5s3 => 5,
        }
    }
}

impl std::str::FromStr for EpirkScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "epirk4s3" => Ok(EpirkScheme::Epirk4s3),
            "epirk4s3a" => Ok(EpirkScheme::Epirk4s3a),
            "epirk5p1" => Ok(EpirkScheme::Epirk5p1),
            "exprb5s3" => Ok(EpirkScheme::Exprb5s3),
            other => Err(Error::UnknownScheme(other.to_string())),
        }
    }
}

// Fifth-order coefficient set for the classical scheme.
const A11: f64 = 0.3512959269505819;
const A21: f64 = 0.8440547201165712;
const A22: f64 = 1.690589160956896;
const B1: f64 = 1.0;
const B2: f64 = 1.272712731735689;
const B3: f64 = 2.271459926542262;
const G11: f64 = 0.3512959269505819;
const G21: f64 = 0.8440547201165712;
const G22: f64 = 1.0;
const G31: f64 = 1.0;
const G32: f64 = 0.71111109536436687;
const G33: f64 = 0.6237811195337149;

/// Nonlinear remainder of the linearization at `u_n`:
/// `r(u) = f(u) - f_n - J(u_n) (u - u_n)`.
pub fn remainder(problem: &OdeProblem, u_n: &[f64], f_n: &[f64], u: &[f64]) -> Result<Vec<f64>> {
    let n = problem.dim;
    let mut f_u = vec![0.0; n];
    (problem.rhs)(u, &mut f_u);
    if !f_u.iter().all(|v| v.is_finite()) {
        return Err(Error::Domain(
            "right-hand side returned non-finite values".into(),
        ));
    }
    let du: Vec<f64> = u.iter().zip(u_n.iter()).map(|(a, b)| a - b).collect();
    let mut jdu = vec![0.0; n];
    (problem.jacobian)(u_n, &du, &mut jdu);
    for i in 0..n {
        f_u[i] -= f_n[i] + jdu[i];
    }
    Ok(f_u)
}

/// One solver call for `phi_q(T_l h J) b` at the listed times.
fn phi_call(
    problem: &OdeProblem,
    u_n: &[f64],
    h: f64,
    times: Vec<f64>,
    q: usize,
    b: Vec<f64>,
    tol: f64,
    m_hint: usize,
    stats: &mut SolveStats,
) -> Result<(Vec<Vec<f64>>, usize)> {
    let n = problem.dim;
    if b.iter().all(|&v| v == 0.0) {
        // phi_q of anything applied to a zero vector is zero; remainder
        // vectors vanish identically on linear problems.
        return Ok((vec![vec![0.0; n]; times.len()], m_hint));
    }
    let op = ScaledJacobian {
        problem,
        state: u_n,
        scale: h,
    };
    let mut u = vec![vec![0.0; n]; q + 1];
    u[0] = b;
    let req = PhiRequest::new(times, &op, u, Task::SinglePhi)
        .with_tol(tol)
        .with_krylov_bounds(m_hint, 10, 128);
    let out = kiops(&req)?;
    stats.merge(&out.stats);
    Ok((out.outputs, out.final_m))
}

/// One solver call for the full linear combination at time one. `u` lists
/// `[b_p, ..., b_1, b_0]`.
fn combination_call(
    problem: &OdeProblem,
    u_n: &[f64],
    h: f64,
    u: Vec<Vec<f64>>,
    tol: f64,
    m_hint: usize,
    stats: &mut SolveStats,
) -> Result<(Vec<f64>, usize)> {
    let op = ScaledJacobian {
        problem,
        state: u_n,
        scale: h,
    };
    let req = PhiRequest::new(vec![1.0], &op, u, Task::Combination)
        .with_tol(tol)
        .with_krylov_bounds(m_hint, 10, 128);
    let out = kiops(&req)?;
    stats.merge(&out.stats);
    Ok((out.outputs.into_iter().next().unwrap(), out.final_m))
}

fn scaled(v: &[f64], s: f64) -> Vec<f64> {
    v.iter().map(|x| x * s).collect()
}

fn add_scaled_into(acc: &mut [f64], v: &[f64], s: f64) {
    for (a, b) in acc.iter_mut().zip(v.iter()) {
        *a += s * b;
    }
}

/// Outcome of one time step.
pub struct StepOutcome {
    pub u_next: Vec<f64>,
    /// Final Krylov dimension of the step's last solver call; pass it back in
    /// as `m_hint` for the next step.
    pub m_hint: usize,
    pub stats: SolveStats,
}

/// Advances the solution by one step of size `h`.
pub fn step(
    scheme: EpirkScheme,
    problem: &OdeProblem,
    u_n: &[f64],
    h: f64,
    tol: f64,
    m_hint: usize,
) -> Result<StepOutcome> {
    if h <= 0.0 || !h.is_finite() {
        return Err(Error::InvalidRequest("step size must be positive".into()));
    }
    let n = problem.dim;
    if u_n.len() != n {
        return Err(Error::Dimension(format!(
            "state has length {}, problem dimension is {}",
            u_n.len(),
            n
        )));
    }
    let mut stats = SolveStats::default();
    let f_n = problem.eval_rhs(u_n);
    if !f_n.iter().all(|v| v.is_finite()) {
        return Err(Error::Domain(
            "right-hand side returned non-finite values".into(),
        ));
    }
    let hf = scaled(&f_n, h);
    let zero = vec![0.0; n];

    let (u_next, m_out) = match scheme {
        EpirkScheme::Epirk4s3 => {
            let (stage, m1) = phi_call(
                problem,
                u_n,
                h,
                vec![1.0 / 9.0, 1.0 / 8.0],
                1,
                hf.clone(),
                tol,
                m_hint,
                &mut stats,
            )?;
            let mut u3 = u_n.to_vec();
            add_scaled_into(&mut u3, &stage[0], 1.0 / 9.0);
            let mut u2 = u_n.to_vec();
            add_scaled_into(&mut u2, &stage[1], 1.0 / 8.0);
            let r2 = remainder(problem, u_n, &f_n, &u2)?;
            let r3 = remainder(problem, u_n, &f_n, &u3)?;
            // d = r(U3) - 2 r(U2)
            let mut b3 = vec![0.0; n];
            let mut b4 = vec![0.0; n];
            for i in 0..n {
                let d = r3[i] - 2.0 * r2[i];
                b3[i] = h * (1892.0 * r2[i] + 1458.0 * d);
                b4[i] = h * (-42336.0 * r2[i] - 34992.0 * d);
            }
            let (w, m2) = combination_call(
                problem,
                u_n,
                h,
                vec![b4, b3, zero.clone(), hf, zero],
                tol,
                m1,
                &mut stats,
            )?;
            let mut u_next = u_n.to_vec();
            add_scaled_into(&mut u_next, &w, 1.0);
            (u_next, m2)
        }
        EpirkScheme::Epirk4s3a => {
            let (stage, m1) = phi_call(
                problem,
                u_n,
                h,
                vec![0.5, 2.0 / 3.0],
                1,
                hf.clone(),
                tol,
                m_hint,
                &mut stats,
            )?;
            let mut u2 = u_n.to_vec();
            add_scaled_into(&mut u2, &stage[0], 0.5);
            let mut u3 = u_n.to_vec();
            add_scaled_into(&mut u3, &stage[1], 2.0 / 3.0);
            let r2 = remainder(problem, u_n, &f_n, &u2)?;
            let r3 = remainder(problem, u_n, &f_n, &u3)?;
            let mut b3 = vec![0.0; n];
            let mut b4 = vec![0.0; n];
            for i in 0..n {
                b3[i] = h * (32.0 * r2[i] - 13.5 * r3[i]);
                b4[i] = h * (-144.0 * r2[i] + 81.0 * r3[i]);
            }
            let (w, m2) = combination_call(
                problem,
                u_n,
                h,
                vec![b4, b3, zero.clone(), hf, zero],
                tol,
                m1,
                &mut stats,
            )?;
            let mut u_next = u_n.to_vec();
            add_scaled_into(&mut u_next, &w, 1.0);
            (u_next, m2)
        }
        EpirkScheme::Epirk5p1 => {
            // One call covers all three phi_1 products of h f(u_n).
            let (c1, m1) = phi_call(
                problem,
                u_n,
                h,
                vec![G11, G21, G31],
                1,
                hf.clone(),
                tol,
                m_hint,
                &mut stats,
            )?;
            let mut u2 = u_n.to_vec();
            add_scaled_into(&mut u2, &c1[0], A11);
            let r2 = remainder(problem, u_n, &f_n, &u2)?;
            let hr2 = scaled(&r2, h);
            let (c2, m2) = phi_call(
                problem,
                u_n,
                h,
                vec![G32, G22],
                1,
                hr2,
                tol,
                m1,
                &mut stats,
            )?;
            let mut u3 = u_n.to_vec();
            add_scaled_into(&mut u3, &c1[1], A21);
            add_scaled_into(&mut u3, &c2[1], A22);
            let r3 = remainder(problem, u_n, &f_n, &u3)?;
            let mut b: Vec<f64> = vec![0.0; n];
            for i in 0..n {
                b[i] = h * (-2.0 * r2[i] + r3[i]);
            }
            let (c3, m3) = phi_call(problem, u_n, h, vec![G33], 3, b, tol, m2, &mut stats)?;
            let mut u_next = u_n.to_vec();
            add_scaled_into(&mut u_next, &c1[2], B1);
            add_scaled_into(&mut u_next, &c2[0], B2);
            add_scaled_into(&mut u_next, &c3[0], B3);
            (u_next, m3)
        }
        EpirkScheme::Exprb5s3 => {
            let (c1, m1) = phi_call(
                problem,
                u_n,
                h,
                vec![0.5, 0.9],
                1,
                hf.clone(),
                tol,
                m_hint,
                &mut stats,
            )?;
            let mut u2 = u_n.to_vec();
            add_scaled_into(&mut u2, &c1[0], 0.5);
            let r2 = remainder(problem, u_n, &f_n, &u2)?;
            let hr2 = scaled(&r2, h);
            let (c2, m2) = phi_call(
                problem,
                u_n,
                h,
                vec![0.5, 0.9],
                3,
                hr2.clone(),
                tol,
                m1,
                &mut stats,
            )?;
            let mut u3 = u_n.to_vec();
            add_scaled_into(&mut u3, &c1[1], 0.9);
            add_scaled_into(&mut u3, &c2[0], 27.0 / 25.0);
            add_scaled_into(&mut u3, &c2[1], 729.0 / 125.0);
            let r3 = remainder(problem, u_n, &f_n, &u3)?;
            let mut b3 = vec![0.0; n];
            let mut b4 = vec![0.0; n];
            for i in 0..n {
                b3[i] = h * (18.0 * r2[i] - 250.0 / 81.0 * r3[i]);
                b4[i] = h * (-60.0 * r2[i] + 500.0 / 27.0 * r3[i]);
            }
            let (w, m3) = combination_call(
                problem,
                u_n,
                h,
                vec![b4, b3, zero.clone(), hf, zero],
                tol,
                m2,
                &mut stats,
            )?;
            let mut u_next = u_n.to_vec();
            add_scaled_into(&mut u_next, &w, 1.0);
            (u_next, m3)
        }
    };

    Ok(StepOutcome {
        u_next,
        m_hint: m_out,
        stats,
    })
}

/// Result of a constant-step integration over the problem's time span.
pub struct Integration {
    pub endpoint: Vec<f64>,
    pub steps: usize,
    pub stats: SolveStats,
}

/// Integrates the problem from `t_0` to `t_end` with constant step `h`,
/// chaining the Krylov warm-start hint across steps. The span must be an
/// integer number of steps to within one percent.
pub fn integrate(
    scheme: EpirkScheme,
    problem: &OdeProblem,
    h: f64,
    tol: f64,
) -> Result<Integration> {
    let (t0, t1) = problem.t_span;
    let span = t1 - t0;
    if !(h > 0.0) || span <= 0.0 {
        return Err(Error::InvalidRequest(
            "need a positive step over a positive time span".into(),
        ));
    }
    let steps_f = span / h;
    let steps = steps_f.round();
    if steps < 1.0 || (steps_f - steps).abs() > 0.01 {
        return Err(Error::InvalidRequest(format!(
            "step {} does not divide the time span {} into whole steps",
            h, span
        )));
    }
    let steps = steps as usize;
    let mut u = problem.initial.clone();
    let mut m_hint = 10;
    let mut stats = SolveStats::default();
    for k in 0..steps {
        let out = step(scheme, problem, &u, h, tol, m_hint).map_err(|e| Error::StepFailed {
            step: k,
            t: t0 + k as f64 * h,
            source: Box::new(e),
        })?;
        u = out.u_next;
        m_hint = out.m_hint;
        stats.merge(&out.stats);
    }
    Ok(Integration {
        endpoint: u,
        steps,
        stats,
    })
}

/// Central-difference consistency check of the Jacobian action against the
/// right-hand side, on one probe direction.
pub fn jacobian_consistency(problem: &OdeProblem, u: &[f64], x: &[f64]) -> f64 {
    let n = problem.dim;
    let norm_u = crate::dense::norm2(u);
    let norm_x = crate::dense::norm2(x).max(1e-300);
    let eps = 1e-6 * (1.0 + norm_u / norm_x);
    let plus: Vec<f64> = u.iter().zip(x.iter()).map(|(a, b)| a + eps * b).collect();
    let minus: Vec<f64> = u.iter().zip(x.iter()).map(|(a, b)| a - eps * b).collect();
    let f_plus = problem.eval_rhs(&plus);
    let f_minus = problem.eval_rhs(&minus);
    let mut jx = vec![0.0; n];
    (problem.jacobian)(u, x, &mut jx);
    let mut err = 0.0f64;
    let mut mag = 0.0f64;
    for i in 0..n {
        let fd = (f_plus[i] - f_minus[i]) / (2.0 * eps);
        err = err.max((jx[i] - fd).abs());
        mag = mag.max(jx[i].abs());
    }
    err / mag.max(1e-300)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::{expm, DenseMatrix};
    use crate::phi::phi_dense;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn linear_problem(a: DenseMatrix, u0: Vec<f64>) -> OdeProblem {
        let n = a.rows();
        let a2 = a.clone();
        OdeProblem {
            dim: n,
            rhs: Box::new(move |u, out| {
                out.copy_from_slice(&a.matvec(u).unwrap());
            }),
            jacobian: Box::new(move |_, x, out| {
                out.copy_from_slice(&a2.matvec(x).unwrap());
            }),
            initial: u0,
            t_span: (0.0, 1.0),
            nnz_hint: None,
            observable_dim: n,
        }
    }

    /// f_i(u) = (A u)_i + u_i^2, a dense quadratic test system.
    fn quadratic_problem(a: DenseMatrix, u0: Vec<f64>) -> OdeProblem {
        let n = a.rows();
        let a2 = a.clone();
        OdeProblem {
            dim: n,
            rhs: Box::new(move |u, out| {
                let au = a.matvec(u).unwrap();
                for i in 0..u.len() {
                    out[i] = au[i] + u[i] * u[i];
                }
            }),
            jacobian: Box::new(move |u, x, out| {
                let ax = a2.matvec(x).unwrap();
                for i in 0..u.len() {
                    out[i] = ax[i] + 2.0 * u[i] * x[i];
                }
            }),
            initial: u0,
            t_span: (0.0, 1.0),
            nnz_hint: None,
            observable_dim: n,
        }
    }

    fn rel_max_err(got: &[f64], want: &[f64]) -> f64 {
        let num = crate::dense::max_abs_diff(got, want);
        let den = crate::dense::max_abs(want).max(1e-300);
        num / den
    }

    #[test]
    fn scheme_ids_round_trip() {
        for scheme in EpirkScheme::all() {
            let parsed: EpirkScheme = scheme.id().parse().unwrap();
            assert_eq!(parsed, scheme);
        }
        assert!("rk4".parse::<EpirkScheme>().is_err());
    }

    #[test]
    fn fifth_order_coefficients_spot_check() {
        assert_eq!(A11, 0.3512959269505819);
        assert_eq!(G33, 0.6237811195337149);
        assert_eq!(G32, 0.71111109536436687);
        assert_eq!(B3, 2.271459926542262);
    }

    #[test]
    fn remainder_vanishes_at_linearization_point_and_for_linear_f() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = DenseMatrix::from_fn(5, 5, |_, _| rng.gen_range(-1.0..1.0));
        let prob = linear_problem(a, vec![0.0; 5]);
        let u_n: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let f_n = prob.eval_rhs(&u_n);
        let r = remainder(&prob, &u_n, &f_n, &u_n).unwrap();
        assert!(crate::dense::max_abs(&r) < 1e-14);
        let u: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let r = remainder(&prob, &u_n, &f_n, &u).unwrap();
        assert!(crate::dense::max_abs(&r) < 1e-13);
    }

    #[test]
    fn remainder_scalar_square() {
        // f(u) = u^2 at u_n = 1: r(1 + h) = h^2.
        let prob = OdeProblem {
            dim: 1,
            rhs: Box::new(|u, out| out[0] = u[0] * u[0]),
            jacobian: Box::new(|u, x, out| out[0] = 2.0 * u[0] * x[0]),
            initial: vec![1.0],
            t_span: (0.0, 1.0),
            nnz_hint: None,
            observable_dim: 1,
        };
        let f_n = prob.eval_rhs(&[1.0]);
        let h = 0.125;
        let r = remainder(&prob, &[1.0], &f_n, &[1.0 + h]).unwrap();
        assert!((r[0] - h * h).abs() < 1e-15);
    }

    #[test]
    fn linear_problems_are_propagated_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut a = DenseMatrix::from_fn(12, 12, |_, _| rng.gen_range(-1.0..1.0));
        for i in 0..12 {
            a.set(i, i, a.get(i, i) - 3.0);
        }
        let u0: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let prob = linear_problem(a.clone(), u0.clone());
        let h = 0.3;
        let (e, _) = expm(&a, h).unwrap();
        let want = e.matvec(&u0).unwrap();
        for scheme in EpirkScheme::all() {
            let out = step(scheme, &prob, &u0, h, 1e-12, 10).unwrap();
            let err = rel_max_err(&out.u_next, &want);
            assert!(err < 1e-9, "{}: err {}", scheme.id(), err);
        }
    }

    #[test]
    fn grouped_step_matches_naive_per_term_evaluation() {
        // Assemble one fourth-order step term by term from dense phi
        // matrices and compare with the grouped two-call implementation.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 8;
        let mut a = DenseMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        for i in 0..n {
            a.set(i, i, a.get(i, i) - 2.0);
        }
        let u0: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let prob = quadratic_problem(a.clone(), u0.clone());
        let h = 0.2;
        let u_n = &u0;

        // dense Jacobian at u_n
        let jac = DenseMatrix::from_fn(n, n, |i, j| {
            a.get(i, j) + if i == j { 2.0 * u_n[i] } else { 0.0 }
        });
        let f_n = prob.eval_rhs(u_n);
        let hf: Vec<f64> = f_n.iter().map(|v| v * h).collect();

        let phi18 = phi_dense(&jac, h / 8.0, 1).unwrap();
        let phi19 = phi_dense(&jac, h / 9.0, 1).unwrap();
        let mut u2 = u_n.clone();
        add_scaled_into(&mut u2, &phi18.matvec(&hf).unwrap(), 1.0 / 8.0);
        let mut u3 = u_n.clone();
        add_scaled_into(&mut u3, &phi19.matvec(&hf).unwrap(), 1.0 / 9.0);
        let r2 = remainder(&prob, u_n, &f_n, &u2).unwrap();
        let r3 = remainder(&prob, u_n, &f_n, &u3).unwrap();
        let mut b3 = vec![0.0; n];
        let mut b4 = vec![0.0; n];
        for i in 0..n {
            let d = r3[i] - 2.0 * r2[i];
            b3[i] = h * (1892.0 * r2[i] + 1458.0 * d);
            b4[i] = h * (-42336.0 * r2[i] - 34992.0 * d);
        }
        let phi1 = phi_dense(&jac, h, 1).unwrap();
        let phi3 = phi_dense(&jac, h, 3).unwrap();
        let phi4 = phi_dense(&jac, h, 4).unwrap();
        let mut naive = u_n.clone();
        add_scaled_into(&mut naive, &phi1.matvec(&hf).unwrap(), 1.0);
        add_scaled_into(&mut naive, &phi3.matvec(&b3).unwrap(), 1.0);
        add_scaled_into(&mut naive, &phi4.matvec(&b4).unwrap(), 1.0);

        let grouped = step(EpirkScheme::Epirk4s3, &prob, u_n, h, 1e-12, 10).unwrap();
        let err = rel_max_err(&grouped.u_next, &naive);
        assert!(err < 1e-9, "err {}", err);
    }

    #[test]
    fn integrate_scalar_decay() {
        for scheme in EpirkScheme::all() {
            let prob = OdeProblem {
                dim: 1,
                rhs: Box::new(|u, out| out[0] = -u[0]),
                jacobian: Box::new(|_, x, out| out[0] = -x[0]),
                initial: vec![1.0],
                t_span: (0.0, 1.0),
                nnz_hint: None,
                observable_dim: 1,
            };
            let out = integrate(scheme, &prob, 0.1, 1e-12).unwrap();
            assert_eq!(out.steps, 10);
            let want = (-1.0f64).exp();
            assert!(
                (out.endpoint[0] - want).abs() < 1e-9,
                "{}: {}",
                scheme.id(),
                out.endpoint[0]
            );
        }
    }

    #[test]
    fn integrate_single_step_equals_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut a = DenseMatrix::from_fn(6, 6, |_, _| rng.gen_range(-1.0..1.0));
        for i in 0..6 {
            a.set(i, i, a.get(i, i) - 2.0);
        }
        let u0: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut prob = quadratic_problem(a, u0.clone());
        prob.t_span = (0.0, 0.25);
        let whole = integrate(EpirkScheme::Epirk4s3a, &prob, 0.25, 1e-12).unwrap();
        let single = step(EpirkScheme::Epirk4s3a, &prob, &u0, 0.25, 1e-12, 10).unwrap();
        assert_eq!(whole.endpoint, single.u_next);
    }

    #[test]
    fn integrate_rejects_non_divisible_span() {
        let prob = OdeProblem {
            dim: 1,
            rhs: Box::new(|u, out| out[0] = -u[0]),
            jacobian: Box::new(|_, x, out| out[0] = -x[0]),
            initial: vec![1.0],
            t_span: (0.0, 1.0),
            nnz_hint: None,
            observable_dim: 1,
        };
        assert!(integrate(EpirkScheme::Epirk4s3, &prob, 0.4, 1e-10).is_err());
    }

    #[test]
    fn step_failure_carries_context() {
        let prob = OdeProblem {
            dim: 1,
            rhs: Box::new(|_, out| out[0] = f64::NAN),
            jacobian: Box::new(|_, x, out| out[0] = x[0]),
            initial: vec![1.0],
            t_span: (0.0, 1.0),
            nnz_hint: None,
            observable_dim: 1,
        };
        match integrate(EpirkScheme::Epirk4s3, &prob, 0.5, 1e-10) {
            Err(Error::StepFailed { step, .. }) => assert_eq!(step, 0),
            other => panic!("expected step failure, got {:?}", other.is_ok()),
        }
    }

    #[test]
    fn jacobian_consistency_on_quadratic_problem() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let a = DenseMatrix::from_fn(6, 6, |_, _| rng.gen_range(-1.0..1.0));
        let prob = quadratic_problem(a, vec![0.1; 6]);
        let u: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        assert!(jacobian_consistency(&prob, &u, &x) < 1e-5);
    }
}
