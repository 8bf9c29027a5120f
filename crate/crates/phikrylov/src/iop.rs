//! Incomplete orthogonalization of length two.
//!
//! Builds a Krylov basis `V_m` for the augmented operator together with the
//! small projected matrix `H_m`, satisfying the factorization
//!
//! ```text
//! Atil V_m = V_m H_m + h_{m+1,m} v_{m+1} e_m^T.
//! ```
//!
//! Unlike the full Arnoldi procedure, each new vector is orthogonalized
//! against only the two previous basis vectors, so the cost of `m` steps is
//! `O(m (N + p))` and `H_m` is tridiagonal. The columns of `V_m` still have
//! unit norm and full rank, but they are not mutually orthogonal in general.
//! When the candidate vector vanishes the recurrence has found an invariant
//! subspace ("happy breakdown") and the projected exponential is exact.

use crate::dense::{axpy, dot, norm2, DenseMatrix};
use crate::operator::AugmentedSystem;
use crate::{Error, Result};

/// Relative happy-breakdown threshold against the candidate norm before
/// orthogonalization, with an absolute floor for exactly-zero candidates.
const BREAKDOWN_REL: f64 = 1e-12;
const BREAKDOWN_FLOOR: f64 = 1e-14;

/// Krylov basis, projection coefficients, and breakdown flag.
///
/// The basis is stored column-major with room for `m_max + 1` columns of
/// length `N + p`; `j` counts completed orthogonalization steps, so columns
/// `0..j` form the basis and column `j` holds the next normalized candidate
/// (absent after a breakdown).
pub struct KrylovState {
    v: Vec<f64>,
    h: DenseMatrix,
    dim: usize,
    m_max: usize,
    j: usize,
    happy: bool,
}

impl KrylovState {
    pub fn new(dim: usize, m_max: usize) -> Self {
        Self {
            v: vec![0.0; dim * (m_max + 1)],
            h: DenseMatrix::zeros(m_max + 1, m_max + 1),
            dim,
            m_max,
            j: 0,
            happy: false,
        }
    }

    /// Completed steps, which is also the number of usable basis columns.
    pub fn completed(&self) -> usize {
        self.j
    }

    pub fn happy(&self) -> bool {
        self.happy
    }

    pub fn m_max(&self) -> usize {
        self.m_max
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn h(&self) -> &DenseMatrix {
        &self.h
    }

    /// Subdiagonal residual coupling `h_{j+1, j}` of the current factorization.
    pub fn h_sub(&self) -> f64 {
        if self.j == 0 {
            0.0
        } else {
            self.h.get(self.j, self.j - 1)
        }
    }

    pub fn column(&self, idx: usize) -> &[f64] {
        &self.v[idx * self.dim..(idx + 1) * self.dim]
    }

    fn column_mut(&mut self, idx: usize) -> &mut [f64] {
        &mut self.v[idx * self.dim..(idx + 1) * self.dim]
    }

    /// Clears the state for a fresh substep: no columns, zero projection.
    pub fn restart(&mut self) {
        self.j = 0;
        self.happy = false;
        self.h.fill(0.0);
    }

    /// Sets the first basis column to `w / beta`.
    pub fn set_start_vector(&mut self, w: &[f64], beta: f64) {
        debug_assert_eq!(w.len(), self.dim);
        debug_assert!(beta > 0.0);
        let dim = self.dim;
        let col = &mut self.v[..dim];
        for (c, x) in col.iter_mut().zip(w.iter()) {
            *c = x / beta;
        }
    }
}

/// Extends the basis up to `m_target` completed steps.
///
/// Resuming an existing state with a larger target produces bitwise the same
/// columns as one uninterrupted run; the solver relies on this to reuse the
/// basis after a rejected step. Returns the number of operator applications
/// performed.
pub fn iop_extend(
    sys: &AugmentedSystem<'_>,
    state: &mut KrylovState,
    m_target: usize,
) -> Result<usize> {
    if m_target > state.m_max {
        return Err(Error::InvalidRequest(format!(
            "requested Krylov dimension {} exceeds m_max {}",
            m_target, state.m_max
        )));
    }
    if state.j >= m_target {
        return Ok(0);
    }
    if state.happy {
        return Err(Error::InvalidRequest(
            "cannot extend a basis after happy breakdown".into(),
        ));
    }
    debug_assert_eq!(sys.dim_total(), state.dim);

    let dim = state.dim;
    let mut candidate = vec![0.0; dim];
    let mut matvecs = 0;

    while state.j < m_target {
        let c = state.j;
        sys.matvec(state.column(c), &mut candidate);
        matvecs += 1;
        let pre_norm = norm2(&candidate);
        if !pre_norm.is_finite() {
            return Err(Error::Domain(
                "operator produced non-finite values during basis extension".into(),
            ));
        }
        // Orthogonalize against the previous two columns only.
        let lo = c.saturating_sub(1);
        for i in lo..=c {
            let hic = dot(state.column(i), &candidate);
            state.h.set(i, c, hic);
            axpy(&mut candidate, -hic, state.column(i));
        }
        let s = norm2(&candidate);
        state.j = c + 1;
        if s <= (BREAKDOWN_REL * pre_norm).max(BREAKDOWN_FLOOR) {
            state.happy = true;
            break;
        }
        state.h.set(c + 1, c, s);
        let inv = 1.0 / s;
        let col = state.column_mut(c + 1);
        for (dst, src) in col.iter_mut().zip(candidate.iter()) {
            *dst = src * inv;
        }
    }
    Ok(matvecs)
}
