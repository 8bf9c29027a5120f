//! Adaptive Krylov evaluation of phi-function linear combinations.
//!
//! [`kiops`] evaluates
//!
//! ```text
//! w(T) = phi_0(T A) b_0 + T phi_1(T A) b_1 + ... + T^p phi_p(T A) b_p
//! ```
//!
//! for one or more output times `T`, given only the action of `A`. The
//! computation runs as the exponential of the augmented operator applied to a
//! start vector, advanced over substeps `exp(tau_i * Atil)` whose sizes and
//! Krylov dimensions are chosen adaptively. Each substep projects the
//! exponential onto a length-two incompletely orthogonalized Krylov basis,
//! extracts an a-posteriori error estimate from an embedded exponential at
//! almost no extra cost, and accepts or rejects against the scaled-error test
//! `omega = T_end * eps / (tau * tol) <= 1.4`. On rejection the existing
//! basis is extended rather than rebuilt while the dimension is below its cap,
//! and only then is the substep shortened.
//!
//! Two request flavours exist: evaluating a single `phi_q` against one vector
//! at several times (the raw results carry a factor `T^q` which is divided
//! out), and evaluating the full linear combination at a single time.

use crate::dense::{axpy, expm, norm2, DenseMatrix};
use crate::iop::{iop_extend, KrylovState};
use crate::operator::{tail_exact, AugmentedSystem, LinearOperator};
use crate::{Error, Result};

/// Acceptance threshold for the scaled error.
pub const DELTA: f64 = 1.4;
/// Default safety factor for stepsize updates.
const SAFETY: f64 = 0.9;
/// Tighter safety factor once the Krylov dimension has hit its cap.
const SAFETY_AT_MMAX: f64 = 0.6;
/// Stepsize may move by at most this factor per update.
const TAU_CLIP: f64 = 5.0;
/// Dimension may shrink by 25% or grow by 33% per update.
const M_SHRINK: f64 = 0.75;
const M_GROW: f64 = 1.33;
/// Bounds for the convergence-rate estimate.
const KAPPA_MIN: f64 = 1.1;
const KAPPA_MAX: f64 = 10.0;
/// The order estimate is kept strictly positive.
const Q_FLOOR: f64 = 0.1;

/// What a request asks the solver to produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    /// A single `phi_q(T A) b_q` for every requested time, obtained from the
    /// linear-combination machinery and rescaled by `1 / T^q`.
    SinglePhi,
    /// The full linear combination at exactly one time.
    Combination,
}

/// A solve request. `u` lists the vectors as `[b_p, ..., b_1, b_0]`.
pub struct PhiRequest<'a> {
    pub times: Vec<f64>,
    pub operator: &'a dyn LinearOperator,
    pub u: Vec<Vec<f64>>,
    pub task: Task,
    /// Per-substep tolerance for the scaled error test.
    pub tol: f64,
    pub m_init: usize,
    pub m_min: usize,
    pub m_max: usize,
    /// Rescale the augmented block by a power of two (set by default).
    pub normalize_b: bool,
    /// Hard budget on substep attempts before giving up.
    pub max_substeps: usize,
}

impl<'a> PhiRequest<'a> {
    pub fn new(
        times: Vec<f64>,
        operator: &'a dyn LinearOperator,
        u: Vec<Vec<f64>>,
        task: Task,
    ) -> Self {
        Self {
            times,
            operator,
            u,
            task,
            tol: 1e-7,
            m_init: 10,
            m_min: 10,
            m_max: 128,
            normalize_b: true,
            max_substeps: 10_000,
        }
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_krylov_bounds(mut self, m_init: usize, m_min: usize, m_max: usize) -> Self {
        self.m_init = m_init;
        self.m_min = m_min;
        self.m_max = m_max;
        self
    }

    /// Checks the request invariants. Returns the phi index used for the
    /// final rescaling of single-phi requests (zero when `p == 0`).
    fn validate(&self) -> Result<usize> {
        let n = self.operator.dim();
        if self.times.is_empty() {
            return Err(Error::InvalidRequest("no output times requested".into()));
        }
        let mut prev = 0.0;
        for &t in &self.times {
            if !t.is_finite() || t <= prev {
                return Err(Error::InvalidRequest(
                    "output times must be finite, positive and strictly increasing".into(),
                ));
            }
            prev = t;
        }
        if self.u.is_empty() {
            return Err(Error::InvalidRequest("need at least the b_0 vector".into()));
        }
        for (idx, col) in self.u.iter().enumerate() {
            if col.len() != n {
                return Err(Error::Dimension(format!(
                    "vector {} has length {}, operator dimension is {}",
                    idx,
                    col.len(),
                    n
                )));
            }
            if !col.iter().all(|v| v.is_finite()) {
                return Err(Error::Domain(format!("vector {} has non-finite entries", idx)));
            }
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(Error::InvalidRequest("tolerance must be positive".into()));
        }
        if self.m_min == 0 || self.m_min > self.m_max {
            return Err(Error::InvalidRequest(format!(
                "need 1 <= m_min <= m_max, got {}..{}",
                self.m_min, self.m_max
            )));
        }
        let p = self.u.len() - 1;
        match self.task {
            Task::Combination => {
                if self.times.len() != 1 {
                    return Err(Error::InvalidRequest(
                        "linear-combination requests take exactly one output time".into(),
                    ));
                }
                Ok(0)
            }
            Task::SinglePhi => {
                if p == 0 {
                    return Ok(0);
                }
                let nonzero: Vec<usize> = (0..p)
                    .filter(|&idx| self.u[idx].iter().any(|&v| v != 0.0))
                    .collect();
                if nonzero.len() != 1 {
                    return Err(Error::InvalidRequest(format!(
                        "single-phi requests need exactly one nonzero vector among b_1..b_p, found {}",
                        nonzero.len()
                    )));
                }
                if self.u[p].iter().any(|&v| v != 0.0) {
                    return Err(Error::InvalidRequest(
                        "single-phi requests with q >= 1 require b_0 = 0; the rescaled result would be meaningless otherwise"
                            .into(),
                    ));
                }
                // u[idx] holds b_{p - idx}.
                Ok(p - nonzero[0])
            }
        }
    }
}

/// Work counters for one solve.
#[derive(Debug, Default, Clone, Copy)]
pub struct SolveStats {
    /// Accepted substeps.
    pub substeps: usize,
    /// Rejected substep attempts.
    pub rejections: usize,
    /// Applications of the user operator.
    pub matvecs: usize,
    /// Dense exponentials evaluated (substep attempts plus intermediate
    /// output times).
    pub dense_exp_calls: usize,
    /// Dense matrix multiplications spent inside those exponentials.
    pub expm_mults: usize,
    /// Sum of the Krylov dimensions of accepted substeps.
    pub krylov_dim_sum: usize,
    /// Largest deviation of the augmented tail entries in use at each substep
    /// from their closed-form polynomial values.
    pub max_tail_deviation: f64,
}

impl SolveStats {
    pub fn merge(&mut self, other: &SolveStats) {
        self.substeps += other.substeps;
        self.rejections += other.rejections;
        self.matvecs += other.matvecs;
        self.dense_exp_calls += other.dense_exp_calls;
        self.expm_mults += other.expm_mults;
        self.krylov_dim_sum += other.krylov_dim_sum;
        self.max_tail_deviation = self.max_tail_deviation.max(other.max_tail_deviation);
    }

    pub fn avg_krylov_dim(&self) -> f64 {
        if self.substeps == 0 {
            0.0
        } else {
            self.krylov_dim_sum as f64 / self.substeps as f64
        }
    }
}

/// Result of a solve: one output vector per requested time.
#[derive(Debug, Clone)]
pub struct SolveResult {
    pub outputs: Vec<Vec<f64>>,
    /// Krylov dimension in effect when the solve finished; a good warm-start
    /// guess for a similar follow-up solve.
    pub final_m: usize,
    pub stats: SolveStats,
}

#[derive(Debug, Clone, Copy)]
struct Rejection {
    omega: f64,
    epsilon: f64,
    tau: f64,
    m: usize,
}

/// Chooses the next substep size and Krylov dimension.
///
/// While the dimension is below its cap the stepsize stays fixed and the
/// dimension follows the error-versus-dimension model `eps ~ C kappa^{-m}`;
/// once the cap is reached the stepsize follows the usual order-based update
/// `eps ~ C tau^{q+1}`. Suggested values are clipped to a factor of five in
/// stepsize, minus 25 to plus 33 percent in dimension, and never beyond the
/// remaining integration interval. Clipping happens here, inside the
/// suggestion, not after the fact.
#[derive(Debug, Clone)]
pub struct StepController {
    pub tau: f64,
    pub m: usize,
    pub m_min: usize,
    pub m_max: usize,
    q: f64,
    kappa: f64,
    rejection: Option<Rejection>,
}

impl StepController {
    pub fn new(tau: f64, m: usize, m_min: usize, m_max: usize) -> Self {
        debug_assert!(m_min <= m && m <= m_max);
        Self {
            tau,
            m,
            m_min,
            m_max,
            q: (m as f64 / 4.0 - 1.0).max(Q_FLOOR),
            kappa: 2.0,
            rejection: None,
        }
    }

    /// Latest order estimate for the stepsize model.
    pub fn q(&self) -> f64 {
        self.q
    }

    /// Latest convergence-rate estimate for the dimension model.
    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// Records a rejected attempt; its numbers feed the next estimates.
    pub fn note_rejection(&mut self, omega: f64, epsilon: f64, tau: f64, m: usize) {
        self.rejection = Some(Rejection {
            omega,
            epsilon,
            tau,
            m,
        });
    }

    /// An accepted substep invalidates the rejected-attempt bookkeeping.
    pub fn note_acceptance(&mut self) {
        self.rejection = None;
    }

    /// Suggests `(tau_new, m_new)` after an attempt with scaled error `omega`,
    /// raw error estimate `epsilon`, breakdown flag `happy` and completed
    /// Krylov dimension `j`. `t_remaining` is what is left of the interval
    /// once the attempt's outcome is applied.
    pub fn suggest(
        &mut self,
        omega: f64,
        epsilon: f64,
        happy: bool,
        j: usize,
        t_remaining: f64,
    ) -> (f64, usize) {
        let tau = self.tau;
        let m = self.m;
        if happy {
            // Exact in the invariant subspace: keep the dimension, just do
            // not step past the end.
            return (cap_to_remaining(tau, t_remaining), m);
        }
        if j >= self.m_max {
            // Dimension is capped; move the stepsize.
            self.q = self.order_estimate(epsilon);
            if omega > DELTA {
                let raw = tau * (SAFETY_AT_MMAX / omega).powf(1.0 / self.q);
                let t = cap_to_remaining(raw.max(tau / TAU_CLIP), t_remaining);
                (t, j)
            } else {
                let raw = stepsize_update(tau, omega, SAFETY, self.q);
                let t = cap_to_remaining(raw.max(tau / TAU_CLIP).min(TAU_CLIP * tau), t_remaining);
                (t, m)
            }
        } else {
            // Move the dimension, keep the stepsize.
            self.kappa = self.rate_estimate(omega);
            let shift = (omega / SAFETY).ln() / self.kappa.ln();
            let raw = m as f64 + shift;
            let lo = (((M_SHRINK * m as f64).ceil()) as usize).max(self.m_min);
            let hi = (((M_GROW * m as f64).floor()) as usize).min(self.m_max);
            let mut m_new = if raw.is_nan() {
                m
            } else {
                raw.max(lo as f64).min(hi as f64).round() as usize
            };
            m_new = m_new.clamp(lo, hi);
            if omega > DELTA {
                // A rejection must enlarge the basis or it would repeat the
                // identical attempt.
                m_new = m_new.max((m + 1).min(hi));
            }
            (cap_to_remaining(tau, t_remaining), m_new)
        }
    }

    fn order_estimate(&self, epsilon: f64) -> f64 {
        let fallback = (self.m as f64 / 4.0 - 1.0).max(Q_FLOOR);
        let Some(rej) = self.rejection else {
            return fallback;
        };
        if epsilon <= 0.0 || rej.epsilon <= 0.0 || rej.tau <= 0.0 {
            return fallback;
        }
        let denom = (epsilon / rej.epsilon).ln();
        if denom.abs() < 1e-12 {
            return fallback;
        }
        let q = (self.tau / rej.tau).ln() / denom - 1.0;
        if q.is_finite() && q > 0.0 {
            q
        } else {
            fallback
        }
    }

    fn rate_estimate(&self, omega: f64) -> f64 {
        match self.rejection {
            Some(rej) if rej.m != self.m && omega > 0.0 && rej.omega > 0.0 => {
                kappa_update(omega, rej.omega, self.m, rej.m)
            }
            _ => 2.0,
        }
    }
}

fn cap_to_remaining(tau: f64, t_remaining: f64) -> f64 {
    if t_remaining > 0.0 {
        tau.min(t_remaining)
    } else {
        tau
    }
}

/// Stepsize model update `tau * (gamma / omega)^(1/(q+1))`.
pub fn stepsize_update(tau: f64, omega: f64, gamma: f64, q: f64) -> f64 {
    tau * (gamma / omega).powf(1.0 / (q + 1.0))
}

/// Convergence-rate update `(omega / omega_old)^(1/(m_old - m))`, clamped to
/// a sane range; degenerate inputs fall back to the default rate of two.
pub fn kappa_update(omega: f64, omega_old: f64, m: usize, m_old: usize) -> f64 {
    if m == m_old || omega <= 0.0 || omega_old <= 0.0 {
        return 2.0;
    }
    let raw = (omega / omega_old).powf(1.0 / (m_old as f64 - m as f64));
    if raw.is_finite() {
        raw.clamp(KAPPA_MIN, KAPPA_MAX)
    } else {
        2.0
    }
}

/// Scaled-error acceptance test: `omega = t_end * epsilon / (tau * tol)`,
/// accepted when `omega <= 1.4`.
pub fn acceptance(epsilon_m: f64, tau: f64, t_end: f64, tol: f64) -> (f64, bool) {
    let omega = t_end * epsilon_m / (tau * tol);
    (omega, omega <= DELTA)
}

/// Cost of `m` orthogonalization steps, in floating-point operations.
pub fn cost_iop(m: usize, n: usize, p: usize, nnz: usize) -> f64 {
    let (m, n, p, nnz) = (m as f64, n as f64, p as f64, nnz as f64);
    m * (2.0 * nnz + (2.0 * p - 1.0) * n + p) + 8.0 * (n + p) - 4.0 * (n + p) + 3.0 * (n + p) * m
}

/// Cost of one dense exponential of dimension `m + p` that performs `n_mult`
/// matrix multiplications.
pub fn cost_exp(n_mult: usize, m: usize, p: usize) -> f64 {
    let s = (m + p) as f64;
    n_mult as f64 * (2.0 * s - 1.0) * s * s
}

/// Lower bound on the cost of finishing the interval with fixed parameters:
/// number of remaining substeps times the per-substep cost. Diagnostic only;
/// the controller itself follows the branch policy above.
pub fn cost_model(
    m: usize,
    tau: f64,
    t_remaining: f64,
    n: usize,
    p: usize,
    nnz: usize,
    n_mult: usize,
) -> f64 {
    let steps = (t_remaining / tau).ceil().max(1.0);
    steps * (cost_iop(m, n, p, nnz) + cost_exp(n_mult, m, p))
}

/// Projects the substep exponential and extracts the error estimate.
///
/// Embeds the projected matrix `H_j` into `[[H_j, e_1], [0, 0]]`, whose
/// exponential carries `tau * phi_1(tau H_j) e_1` in its last column, so one
/// dense exponential yields both the propagator `F` and the leading error
/// term `eps = |beta * h_{j+1,j} * F(j, j+1)|`. Returns `(F, n_mult, eps)`;
/// after a happy breakdown the estimate is zero by definition.
pub fn projected_step(
    state: &KrylovState,
    tau: f64,
    beta: f64,
) -> Result<(DenseMatrix, usize, f64)> {
    let j = state.completed();
    if j == 0 {
        return Err(Error::InvalidRequest(
            "projected step needs at least one completed Krylov column".into(),
        ));
    }
    let mut embedded = DenseMatrix::zeros(j + 1, j + 1);
    for r in 0..j {
        for c in 0..j {
            let v = state.h().get(r, c);
            if v != 0.0 {
                embedded.set(r, c, v);
            }
        }
    }
    embedded.set(0, j, 1.0);
    let (f, n_mult) = expm(&embedded, tau)?;
    let eps = if state.happy() {
        0.0
    } else {
        (beta * state.h_sub() * f.get(j - 1, j)).abs()
    };
    Ok((f, n_mult, eps))
}

fn project_full(state: &KrylovState, f: &DenseMatrix, beta: f64, j: usize) -> Vec<f64> {
    let mut out = vec![0.0; state.dim()];
    for c in 0..j {
        let w = beta * f.get(c, 0);
        if w != 0.0 {
            axpy(&mut out, w, state.column(c));
        }
    }
    out
}

fn project_head(state: &KrylovState, f: &DenseMatrix, beta: f64, n: usize, j: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for c in 0..j {
        let w = beta * f.get(c, 0);
        if w != 0.0 {
            axpy(&mut out, w, &state.column(c)[..n]);
        }
    }
    out
}

/// Evaluates the requested phi-function products. See the module docs.
pub fn kiops(req: &PhiRequest<'_>) -> Result<SolveResult> {
    let q_rescale = req.validate()?;
    let n = req.operator.dim();
    let p = req.u.len() - 1;
    let n_times = req.times.len();
    let t_end = *req.times.last().unwrap();

    let sys = AugmentedSystem::build_with_normalization(req.operator, &req.u, req.normalize_b)?;
    let dim = n + p;

    let mut stats = SolveStats::default();
    let mut outputs: Vec<Option<Vec<f64>>> = vec![None; n_times];
    let mut w = vec![0.0; dim];
    w[..n].copy_from_slice(sys.b0());

    let m_start = req.m_init.clamp(req.m_min, req.m_max);
    let mut ctrl = StepController::new(t_end, m_start, req.m_min, req.m_max);
    let mut state = KrylovState::new(dim, req.m_max);
    let mut t_now = 0.0f64;
    let mut ell = 0usize;
    let mut beta = 0.0f64;
    let mut fresh = true;
    let mut attempts = 0usize;
    let mut all_zero = false;

    while t_now < t_end {
        attempts += 1;
        if attempts > req.max_substeps {
            return Err(Error::NoConvergence(format!(
                "substep budget {} exhausted at t = {:.6e} of {:.6e} (tau = {:.3e}, m = {}, {} rejections so far)",
                req.max_substeps, t_now, t_end, ctrl.tau, ctrl.m, stats.rejections
            )));
        }
        let remaining = t_end - t_now;
        let mut tau = ctrl.tau.min(remaining);
        // A substep below the rounding granularity of t_now cannot advance
        // the loop; take the whole remaining interval instead.
        if t_now + tau <= t_now || remaining <= 4.0 * f64::EPSILON * t_end {
            tau = remaining;
        }
        ctrl.tau = tau;

        if fresh {
            state.restart();
            if p > 0 {
                // The trailing entries are known in closed form; rewrite them
                // instead of carrying rounding noise across substeps. (The
                // projected tail of an aggressive substep can be off by far
                // more than the head because the intermediate entries of the
                // small exponential are large; it is never reused.)
                let tail = tail_exact(t_now, 0.0, p);
                for (slot, value) in w[n..].iter_mut().zip(tail) {
                    *slot = sys.mu() * value;
                }
                // Record how far the tail entries entering this substep are
                // from a directly evaluated power formula.
                let mut dev = 0.0f64;
                for i in 0..p {
                    let d = p - 1 - i;
                    let fact = (1..=d).fold(1.0, |a, k| a * k as f64);
                    let direct = t_now.powi(d as i32) / fact;
                    dev = dev.max((w[n + i] / sys.mu() - direct).abs());
                }
                stats.max_tail_deviation = stats.max_tail_deviation.max(dev);
            }
            beta = norm2(&w);
            if !beta.is_finite() {
                return Err(Error::Domain(
                    "carried vector became non-finite".into(),
                ));
            }
            if beta == 0.0 {
                // Only possible without augmentation and with b_0 = 0.
                all_zero = true;
                break;
            }
            state.set_start_vector(&w, beta);
            fresh = false;
        }

        stats.matvecs += iop_extend(&sys, &mut state, ctrl.m)?;
        let j = state.completed();
        let (f, n_mult, eps) = projected_step(&state, tau, beta)?;
        stats.dense_exp_calls += 1;
        stats.expm_mults += n_mult;

        let (omega, accept) = acceptance(eps, tau, t_end, req.tol);
        let happy = state.happy();
        let suggest_remaining = if accept { remaining - tau } else { remaining };
        let (tau_new, m_new) = ctrl.suggest(omega, eps, happy, j, suggest_remaining);

        if accept {
            let t_next = if tau >= remaining { t_end } else { t_now + tau };
            if req.task == Task::SinglePhi {
                // Output times strictly inside the substep are served from
                // the same basis with their own small exponential.
                while ell < n_times && req.times[ell] < t_next {
                    let h_block = state.h().leading_block(j);
                    let (f2, n_mult2) = expm(&h_block, req.times[ell] - t_now)?;
                    stats.dense_exp_calls += 1;
                    stats.expm_mults += n_mult2;
                    outputs[ell] = Some(project_head(&state, &f2, beta, n, j));
                    ell += 1;
                }
            }
            w = project_full(&state, &f, beta, j);
            if ell < n_times && req.times[ell] == t_next {
                outputs[ell] = Some(w[..n].to_vec());
                ell += 1;
            }
            t_now = t_next;
            fresh = true;
            ctrl.note_acceptance();
            stats.substeps += 1;
            stats.krylov_dim_sum += j;
        } else {
            ctrl.note_rejection(omega, eps, tau, j);
            stats.rejections += 1;
            if tau_new == tau && m_new == ctrl.m {
                // Degenerate bound combination left nothing to change; force
                // the stepsize down so the loop cannot spin.
                ctrl.tau = tau / TAU_CLIP;
                continue;
            }
        }
        ctrl.tau = tau_new;
        ctrl.m = m_new;
    }

    let mut result = Vec::with_capacity(n_times);
    for (k, slot) in outputs.into_iter().enumerate() {
        let mut v = match slot {
            Some(v) => v,
            None if all_zero => vec![0.0; n],
            None => {
                return Err(Error::NoConvergence(format!(
                    "output time {} was never materialized",
                    req.times[k]
                )))
            }
        };
        if req.task == Task::SinglePhi && q_rescale > 0 {
            let scale = req.times[k].powi(q_rescale as i32);
            for x in v.iter_mut() {
                *x /= scale;
            }
        }
        if !v.iter().all(|x| x.is_finite()) {
            return Err(Error::Domain(
                "solver produced a non-finite output vector".into(),
            ));
        }
        result.push(v);
    }
    Ok(SolveResult {
        outputs: result,
        final_m: ctrl.m,
        stats,
    })
}
