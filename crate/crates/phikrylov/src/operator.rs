//! Matrix-free operators and the augmented system.
//!
//! The central trick of the solver is that the linear combination
//!
//! ```text
//! phi_0(tau A) b_0 + tau phi_1(tau A) b_1 + ... + tau^p phi_p(tau A) b_p
//! ```
//!
//! equals the first `N` entries of `exp(tau * Atil) * v` for the block matrix
//!
//! ```text
//! Atil = [ A  B ]      B = [b_p, ..., b_1],   K = upper shift on R^p,
//!        [ 0  K ]      v = [b_0; 0; ...; 0; 1],
//! ```
//!
//! while the trailing `p` entries of the product are the known polynomial
//! `[tau^{p-1}/(p-1)!, ..., tau, 1]`. [`AugmentedSystem`] provides the action
//! of `Atil` without ever assembling it: one user matvec plus a rank-p update
//! and a shift. The `B` block is rescaled by a power of two so that its
//! column sums sit near one, which costs nothing in exact arithmetic and
//! reduces rounding noise; the inverse power is applied to the tail of every
//! start vector so the overall result is unchanged.

use crate::{Error, Result};

/// Matrix-free linear operator on `R^N`.
///
/// This is the library's extension point: implementors supply the action
/// `x -> A x`. The contract is that `apply` is deterministic, linear up to
/// rounding, and free of side effects; the solver may call it any number of
/// times. Implementations that are `Sync` may be shared across concurrent
/// solves.
pub trait LinearOperator {
    /// Problem dimension `N`.
    fn dim(&self) -> usize;

    /// Writes `A x` into `out`. Both slices have length [`dim`](Self::dim).
    fn apply(&self, x: &[f64], out: &mut [f64]);

    /// Optional count of nonzero entries, used only by cost diagnostics.
    fn nnz_hint(&self) -> Option<usize> {
        None
    }
}

/// A dense matrix viewed as a [`LinearOperator`]. Mostly for tests and small
/// reference computations.
pub struct DenseOperator {
    matrix: crate::dense::DenseMatrix,
}

impl DenseOperator {
    pub fn new(matrix: crate::dense::DenseMatrix) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::Dimension("operator matrix must be square".into()));
        }
        Ok(Self { matrix })
    }

    pub fn matrix(&self) -> &crate::dense::DenseMatrix {
        &self.matrix
    }
}

impl LinearOperator for DenseOperator {
    fn dim(&self) -> usize {
        self.matrix.rows()
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for i in 0..self.matrix.rows() {
            let row = self.matrix.row(i);
            let mut s = 0.0;
            for (a, b) in row.iter().zip(x.iter()) {
                s += a * b;
            }
            out[i] = s;
        }
    }

    fn nnz_hint(&self) -> Option<usize> {
        Some(self.matrix.rows() * self.matrix.cols())
    }
}

/// The exact tail of the augmented vector at time `t_now + tau`:
/// `[(t_now+tau)^{p-1}/(p-1)!, ..., (t_now+tau), 1]`.
///
/// The solver overwrites the trailing entries of its carried vector with
/// these values between substeps instead of propagating them numerically.
pub fn tail_exact(t_now: f64, tau: f64, p: usize) -> Vec<f64> {
    let t = t_now + tau;
    let mut tail = vec![0.0; p];
    if p == 0 {
        return tail;
    }
    tail[p - 1] = 1.0;
    let mut value = 1.0;
    for d in 1..p {
        value *= t / d as f64;
        tail[p - 1 - d] = value;
    }
    tail
}

/// Matrix-free action of the augmented block matrix.
pub struct AugmentedSystem<'a> {
    operator: &'a dyn LinearOperator,
    /// Columns `[b_p, ..., b_1]`, already scaled by `nu`.
    b_cols: Vec<Vec<f64>>,
    b0: Vec<f64>,
    n: usize,
    p: usize,
    nu: f64,
    mu: f64,
}

impl<'a> AugmentedSystem<'a> {
    /// Builds the system from `u = [b_p, ..., b_1, b_0]` with the power-of-two
    /// normalization of the `B` block enabled.
    pub fn build(operator: &'a dyn LinearOperator, u: &[Vec<f64>]) -> Result<Self> {
        Self::build_with_normalization(operator, u, true)
    }

    /// As [`build`](Self::build), optionally skipping the normalization.
    pub fn build_with_normalization(
        operator: &'a dyn LinearOperator,
        u: &[Vec<f64>],
        normalize: bool,
    ) -> Result<Self> {
        let n = operator.dim();
        if n == 0 {
            return Err(Error::Dimension("operator dimension is zero".into()));
        }
        if u.is_empty() {
            return Err(Error::InvalidRequest(
                "need at least the b_0 vector".into(),
            ));
        }
        for (idx, col) in u.iter().enumerate() {
            if col.len() != n {
                return Err(Error::Dimension(format!(
                    "vector {} has length {}, operator dimension is {}",
                    idx,
                    col.len(),
                    n
                )));
            }
        }
        let p = u.len() - 1;
        let b0 = u[p].clone();
        let mut b_cols: Vec<Vec<f64>> = u[..p].to_vec();

        // ||B||_1 over the N x p block: maximum absolute column sum.
        let b_norm_1 = b_cols
            .iter()
            .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0f64, f64::max);

        let (nu, mu) = if normalize && p > 0 && b_norm_1 > 0.0 {
            let e = b_norm_1.log2().ceil() as i32;
            (2.0f64.powi(-e), 2.0f64.powi(e))
        } else {
            (1.0, 1.0)
        };
        if nu != 1.0 {
            for col in &mut b_cols {
                for v in col.iter_mut() {
                    *v *= nu;
                }
            }
        }
        Ok(Self {
            operator,
            b_cols,
            b0,
            n,
            p,
            nu,
            mu,
        })
    }

    pub fn operator(&self) -> &dyn LinearOperator {
        self.operator
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// Total dimension `N + p` of the augmented space.
    pub fn dim_total(&self) -> usize {
        self.n + self.p
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn b0(&self) -> &[f64] {
        &self.b0
    }

    /// Applies the augmented matrix to `v`, calling the user operator exactly
    /// once. The first `N` entries get `A v[..N] + B v[N..]`; the tail is
    /// shifted up with a zero fed in at the bottom.
    pub fn matvec(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.n + self.p);
        debug_assert_eq!(out.len(), self.n + self.p);
        self.operator.apply(&v[..self.n], &mut out[..self.n]);
        for (c, col) in self.b_cols.iter().enumerate() {
            let weight = v[self.n + c];
            if weight != 0.0 {
                for (o, b) in out[..self.n].iter_mut().zip(col.iter()) {
                    *o += weight * b;
                }
            }
        }
        for c in 0..self.p {
            out[self.n + c] = if c + 1 < self.p { v[self.n + c + 1] } else { 0.0 };
        }
    }

    /// Cost-model estimate of the number of nonzeros in the augmented matrix:
    /// the user's hint when present, else a stencil-like `10 N` proxy.
    pub fn nnz_estimate(&self) -> usize {
        self.operator.nnz_hint().unwrap_or(10 * self.n)
    }
}

/// Statistical linearity check for operator implementations: verifies that
/// `A(alpha x + beta y)` matches `alpha A x + beta A y` within rounding on a
/// handful of supplied probes. Intended for tests and problem validation.
pub fn check_linearity(
    op: &dyn LinearOperator,
    probes: &[(f64, f64, Vec<f64>, Vec<f64>)],
) -> Result<()> {
    let n = op.dim();
    let mut ax = vec![0.0; n];
    let mut ay = vec![0.0; n];
    let mut axy = vec![0.0; n];
    for (alpha, beta, x, y) in probes {
        op.apply(x, &mut ax);
        op.apply(y, &mut ay);
        let combo: Vec<f64> = x
            .iter()
            .zip(y.iter())
            .map(|(a, b)| alpha * a + beta * b)
            .collect();
        op.apply(&combo, &mut axy);
        let norm_ax = crate::dense::norm2(&ax);
        let norm_ay = crate::dense::norm2(&ay);
        let mut err = 0.0f64;
        for i in 0..n {
            err += (axy[i] - alpha * ax[i] - beta * ay[i]).powi(2);
        }
        let err = err.sqrt();
        if err > 1e-12 * (alpha.abs() * norm_ax + beta.abs() * norm_ay).max(1e-300) {
            return Err(Error::Domain(format!(
                "operator is not linear to rounding: residual {:.3e}",
                err
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::DenseMatrix;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::cell::Cell;

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn tail_exact_values() {
        assert_eq!(tail_exact(0.0, 0.0, 4), vec![0.0, 0.0, 0.0, 1.0]);
        let t1 = tail_exact(0.4, 0.6, 4);
        let expect = [1.0 / 6.0, 0.5, 1.0, 1.0];
        for (a, b) in t1.iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
        let t2 = tail_exact(0.0, 0.3, 3);
        let expect = [0.045, 0.3, 1.0];
        for (a, b) in t2.iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-16);
        }
        assert!(tail_exact(0.0, 0.5, 0).is_empty());
    }

    #[test]
    fn normalization_constants() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = DenseMatrix::identity(4);
        let op = DenseOperator::new(a).unwrap();

        // p = 0: no block, no scaling.
        let sys = AugmentedSystem::build(&op, &[random_vec(&mut rng, 4)]).unwrap();
        assert_eq!(sys.p(), 0);
        assert_eq!(sys.nu(), 1.0);
        assert_eq!(sys.mu(), 1.0);

        // ||B||_1 = 5 -> ceil(log2 5) = 3 -> nu = 1/8.
        let b1 = vec![5.0, 0.0, 0.0, 0.0];
        let b0 = vec![0.0; 4];
        let sys = AugmentedSystem::build(&op, &[b1, b0.clone()]).unwrap();
        assert_eq!(sys.nu(), 0.125);
        assert_eq!(sys.mu(), 8.0);
        assert_eq!(sys.nu() * sys.mu(), 1.0);

        // ||B||_1 = 8 exactly: still 1/8.
        let b1 = vec![2.0, 2.0, 2.0, 2.0];
        let sys = AugmentedSystem::build(&op, &[b1, b0.clone()]).unwrap();
        assert_eq!(sys.nu(), 0.125);
        assert_eq!(sys.mu(), 8.0);

        // Zero block: normalization skipped.
        let sys = AugmentedSystem::build(&op, &[vec![0.0; 4], b0]).unwrap();
        assert_eq!(sys.nu(), 1.0);
        assert_eq!(sys.mu(), 1.0);
    }

    #[test]
    fn matvec_p1_by_hand() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 5;
        let a = DenseMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let op = DenseOperator::new(a.clone()).unwrap();
        let b1 = random_vec(&mut rng, n);
        let x = random_vec(&mut rng, n);
        let sys =
            AugmentedSystem::build_with_normalization(&op, &[b1.clone(), vec![0.0; n]], false)
                .unwrap();
        let mut v = x.clone();
        v.push(1.0);
        let mut out = vec![0.0; n + 1];
        sys.matvec(&v, &mut out);
        let ax = a.matvec(&x).unwrap();
        for i in 0..n {
            assert!((out[i] - (ax[i] + b1[i])).abs() < 1e-14);
        }
        assert_eq!(out[n], 0.0);
    }

    #[test]
    fn matvec_tail_block_by_hand() {
        // With a zero head, the head output is the weighted sum of the b
        // columns and the tail shifts up.
        let n = 4;
        let op = DenseOperator::new(DenseMatrix::zeros(n, n)).unwrap();
        let b3 = vec![1.0, 0.0, 0.0, 0.0];
        let b2 = vec![0.0, 1.0, 0.0, 0.0];
        let b1 = vec![0.0, 0.0, 1.0, 0.0];
        let u = vec![b3, b2, b1, vec![0.0; n]];
        let sys = AugmentedSystem::build_with_normalization(&op, &u, false).unwrap();
        let (c3, c2, c1) = (0.3, -0.7, 2.0);
        let v = vec![0.0, 0.0, 0.0, 0.0, c3, c2, c1];
        let mut out = vec![0.0; n + 3];
        sys.matvec(&v, &mut out);
        assert_eq!(&out[..n], &[c3, c2, c1, 0.0]);
        assert_eq!(&out[n..], &[c2, c1, 0.0]);
    }

    #[test]
    fn matvec_matches_dense_assembly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 10;
        let p = 4;
        let a = DenseMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let op = DenseOperator::new(a.clone()).unwrap();
        let mut u: Vec<Vec<f64>> = (0..p).map(|_| random_vec(&mut rng, n)).collect();
        u.push(random_vec(&mut rng, n));
        let sys = AugmentedSystem::build_with_normalization(&op, &u, false).unwrap();
        let aug = crate::phi::assemble_augmented(&a, &u[..p].to_vec());
        for _ in 0..5 {
            let v = random_vec(&mut rng, n + p);
            let mut out = vec![0.0; n + p];
            sys.matvec(&v, &mut out);
            let dense = aug.matvec(&v).unwrap();
            for i in 0..n + p {
                assert!((out[i] - dense[i]).abs() <= 1e-14 * dense[i].abs().max(1.0));
            }
        }
    }

    #[test]
    fn matvec_calls_operator_exactly_once() {
        struct Counting {
            calls: Cell<usize>,
        }
        impl LinearOperator for Counting {
            fn dim(&self) -> usize {
                3
            }
            fn apply(&self, x: &[f64], out: &mut [f64]) {
                self.calls.set(self.calls.get() + 1);
                out.copy_from_slice(x);
            }
        }
        let op = Counting {
            calls: Cell::new(0),
        };
        let u = vec![vec![1.0, 2.0, 3.0], vec![0.0; 3]];
        let sys = AugmentedSystem::build(&op, &u).unwrap();
        let v = vec![1.0, 1.0, 1.0, 1.0];
        let mut out = vec![0.0; 4];
        sys.matvec(&v, &mut out);
        assert_eq!(op.calls.get(), 1);
    }

    #[test]
    fn matvec_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 6;
        let p = 3;
        let a = DenseMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let op = DenseOperator::new(a).unwrap();
        let mut u: Vec<Vec<f64>> = (0..p).map(|_| random_vec(&mut rng, n)).collect();
        u.push(random_vec(&mut rng, n));
        let sys = AugmentedSystem::build(&op, &u).unwrap();
        for _ in 0..5 {
            let x = random_vec(&mut rng, n + p);
            let y = random_vec(&mut rng, n + p);
            let (alpha, beta) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let combo: Vec<f64> = x
                .iter()
                .zip(y.iter())
                .map(|(a, b)| alpha * a + beta * b)
                .collect();
            let mut ax = vec![0.0; n + p];
            let mut ay = vec![0.0; n + p];
            let mut axy = vec![0.0; n + p];
            sys.matvec(&x, &mut ax);
            sys.matvec(&y, &mut ay);
            sys.matvec(&combo, &mut axy);
            let mut err = 0.0f64;
            for i in 0..n + p {
                err = err.max((axy[i] - alpha * ax[i] - beta * ay[i]).abs());
            }
            let scale = crate::dense::norm2(&ax) + crate::dense::norm2(&ay);
            assert!(err <= 1e-12 * scale.max(1.0));
        }
    }

    #[test]
    fn normalization_is_neutral_for_the_combination() {
        // exp of the normalized system applied to the mu-scaled start vector
        // reproduces the unnormalized head entries.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 8;
        let p = 3;
        let a = DenseMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let cols: Vec<Vec<f64>> = (0..p)
            .map(|_| (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect())
            .collect();
        let b0 = random_vec(&mut rng, n);
        let tau = 0.7;

        let plain = crate::phi::assemble_augmented(&a, &cols);
        let mut v = vec![0.0; n + p];
        v[..n].copy_from_slice(&b0);
        v[n + p - 1] = 1.0;
        let (e_plain, _) = crate::dense::expm(&plain, tau).unwrap();
        let w_plain = e_plain.matvec(&v).unwrap();

        let op = DenseOperator::new(a.clone()).unwrap();
        let mut u = cols.clone();
        u.push(b0.clone());
        let sys = AugmentedSystem::build(&op, &u).unwrap();
        let scaled_cols: Vec<Vec<f64>> = cols
            .iter()
            .map(|c| c.iter().map(|x| x * sys.nu()).collect())
            .collect();
        let scaled = crate::phi::assemble_augmented(&a, &scaled_cols);
        let mut v_scaled = v.clone();
        for entry in v_scaled[n..].iter_mut() {
            *entry *= sys.mu();
        }
        let (e_scaled, _) = crate::dense::expm(&scaled, tau).unwrap();
        let w_scaled = e_scaled.matvec(&v_scaled).unwrap();

        for i in 0..n {
            assert!(
                (w_plain[i] - w_scaled[i]).abs() <= 1e-12 * w_plain[i].abs().max(1.0),
                "head entry {}",
                i
            );
        }
    }

    #[test]
    fn build_rejects_bad_shapes() {
        let op = DenseOperator::new(DenseMatrix::identity(3)).unwrap();
        assert!(AugmentedSystem::build(&op, &[]).is_err());
        assert!(AugmentedSystem::build(&op, &[vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn dense_operator_linearity_helper() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let op = DenseOperator::new(DenseMatrix::from_fn(5, 5, |_, _| {
            rng.gen_range(-1.0..1.0)
        }))
        .unwrap();
        let probes: Vec<(f64, f64, Vec<f64>, Vec<f64>)> = (0..4)
            .map(|_| {
                (
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    random_vec(&mut rng, 5),
                    random_vec(&mut rng, 5),
                )
            })
            .collect();
        check_linearity(&op, &probes).unwrap();
    }
}
