//! Reference evaluation of phi functions and their linear combinations.
//!
//! The functions here are deliberately slow and simple: they exist so that
//! the fast Krylov path can be checked against an independent computation on
//! small instances. `phi_dense` reads phi_k off the exponential of a block
//! matrix; `phi_dense_series` evaluates the defining power series with
//! compensated summation. The two routes share nothing beyond the dense
//! exponential kernel and must agree tightly.
//!
//! phi_0(z) = e^z and for k >= 1
//!
//! ```text
//! phi_k(z) = sum_{i>=0} z^i / (i + k)!,   phi_{k+1}(z) = (phi_k(z) - 1/k!) / z.
//! ```

use crate::dense::{expm, DenseMatrix};
use crate::{Error, Result};

/// Largest matrix dimension the oracle accepts. It builds dense augmented
/// matrices of dimension up to `(k+1) * n`, so keep inputs desk-scale.
pub const MAX_ORACLE_DIM: usize = 256;

/// Largest phi index the oracle supports.
pub const MAX_PHI_INDEX: usize = 8;

fn factorial(k: usize) -> f64 {
    (1..=k).fold(1.0, |acc, i| acc * i as f64)
}

/// Scalar phi_k. Uses the upward recurrence away from zero and the power
/// series below |z| = 0.1 where the recurrence would cancel.
pub fn phi_scalar(z: f64, k: usize) -> f64 {
    if k == 0 {
        return z.exp();
    }
    if z.abs() < 0.1 {
        // sum_{i>=0} z^i / (i+k)!
        let mut term = 1.0 / factorial(k);
        let mut sum = term;
        for i in 1..60 {
            term *= z / (i + k) as f64;
            sum += term;
            if term.abs() <= f64::EPSILON * sum.abs() {
                break;
            }
        }
        sum
    } else {
        let mut phi = z.exp();
        let mut fact = 1.0;
        for j in 0..k {
            if j > 0 {
                fact *= j as f64;
            }
            phi = (phi - 1.0 / fact) / z;
        }
        phi
    }
}

fn check_oracle_input(a: &DenseMatrix, k: usize) -> Result<()> {
    if !a.is_square() {
        return Err(Error::Dimension(format!(
            "phi oracle needs a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    if a.rows() > MAX_ORACLE_DIM {
        return Err(Error::Domain(format!(
            "phi oracle is desk-scale only: dimension {} exceeds {}",
            a.rows(),
            MAX_ORACLE_DIM
        )));
    }
    if k > MAX_PHI_INDEX {
        return Err(Error::Domain(format!(
            "phi index {} out of range (max {})",
            k, MAX_PHI_INDEX
        )));
    }
    Ok(())
}

/// Dense phi_k(tau * A) via one exponential of a block matrix.
///
/// The block matrix stacks `A` against a nilpotent chain of `k` identity
/// blocks; the top-right block of its exponential is `tau^k phi_k(tau A)`.
pub fn phi_dense(a: &DenseMatrix, tau: f64, k: usize) -> Result<DenseMatrix> {
    check_oracle_input(a, k)?;
    let n = a.rows();
    if k == 0 {
        return Ok(expm(a, tau)?.0);
    }
    if tau == 0.0 {
        let mut id = DenseMatrix::identity(n);
        id.scale(1.0 / factorial(k));
        return Ok(id);
    }
    let dim = n * (k + 1);
    let mut aug = DenseMatrix::zeros(dim, dim);
    for i in 0..n {
        for j in 0..n {
            aug.set(i, j, a.get(i, j));
        }
    }
    // Identity blocks chaining block-column b to block-column b+1.
    for b in 0..k {
        for i in 0..n {
            aug.set(b * n + i, (b + 1) * n + i, 1.0);
        }
    }
    let (e, _) = expm(&aug, tau)?;
    let scale = tau.powi(k as i32);
    Ok(DenseMatrix::from_fn(n, n, |i, j| {
        e.get(i, k * n + j) / scale
    }))
}

/// Dense phi_k(tau * A) from the power series, with Kahan-compensated
/// entrywise accumulation. Converges for moderate `||tau * A||` and serves
/// as the second, independent route.
pub fn phi_dense_series(a: &DenseMatrix, tau: f64, k: usize, terms: usize) -> Result<DenseMatrix> {
    check_oracle_input(a, k)?;
    let n = a.rows();
    let mut scaled = a.clone();
    scaled.scale(tau);

    let mut sum = DenseMatrix::identity(n);
    sum.scale(1.0 / factorial(k));
    let mut comp = DenseMatrix::zeros(n, n);
    let mut term = DenseMatrix::identity(n);
    term.scale(1.0 / factorial(k));
    for i in 1..=terms {
        term = term.mul(&scaled);
        term.scale(1.0 / (i + k) as f64);
        // Kahan step: sum += term with a running compensation matrix.
        for idx in 0..n * n {
            let y = term.data()[idx] - comp.data()[idx];
            let t = sum.data()[idx] + y;
            let c = (t - sum.data()[idx]) - y;
            let row = idx / n;
            let col = idx % n;
            comp.set(row, col, c);
            sum.set(row, col, t);
        }
    }
    Ok(sum)
}

/// Builds the block matrix `[[A, B], [0, K]]` with `B = [b_p, ..., b_1]` and
/// `K` the upper shift. Test and oracle use only; the solver never forms it.
pub(crate) fn assemble_augmented(a: &DenseMatrix, b_cols: &[Vec<f64>]) -> DenseMatrix {
    let n = a.rows();
    let p = b_cols.len();
    let mut aug = DenseMatrix::zeros(n + p, n + p);
    for i in 0..n {
        for j in 0..n {
            aug.set(i, j, a.get(i, j));
        }
    }
    for (c, col) in b_cols.iter().enumerate() {
        for i in 0..n {
            aug.set(i, n + c, col[i]);
        }
    }
    for c in 0..p.saturating_sub(1) {
        aug.set(n + c, n + c + 1, 1.0);
    }
    aug
}

/// Dense reference for the linear combination
///
/// ```text
/// sum_{j=0}^{p} tau^j phi_j(tau A) b_j
/// ```
///
/// evaluated by exponentiating the `(N+p)`-dimensional block matrix once and
/// reading the first `N` entries. `b` lists the vectors as `[b_0, ..., b_p]`.
pub fn phi_combination_dense(a: &DenseMatrix, tau: f64, b: &[Vec<f64>]) -> Result<Vec<f64>> {
    if b.is_empty() {
        return Err(Error::InvalidRequest("need at least b_0".into()));
    }
    let p = b.len() - 1;
    check_oracle_input(a, p)?;
    let n = a.rows();
    for (j, col) in b.iter().enumerate() {
        if col.len() != n {
            return Err(Error::Dimension(format!(
                "b_{} has length {}, expected {}",
                j,
                col.len(),
                n
            )));
        }
    }
    if tau == 0.0 {
        return Ok(b[0].clone());
    }
    if p == 0 {
        let (e, _) = expm(a, tau)?;
        return e.matvec(&b[0]);
    }
    // Column order [b_p, ..., b_1].
    let cols: Vec<Vec<f64>> = (1..=p).rev().map(|j| b[j].clone()).collect();
    let aug = assemble_augmented(a, &cols);
    let (e, _) = expm(&aug, tau)?;
    let mut v = vec![0.0; n + p];
    v[..n].copy_from_slice(&b[0]);
    v[n + p - 1] = 1.0;
    let w = e.matvec(&v)?;
    Ok(w[..n].to_vec())
}
