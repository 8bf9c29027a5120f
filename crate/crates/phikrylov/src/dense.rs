//! Small dense matrix kernels.
//!
//! The solver projects the action of a large operator onto a Krylov subspace
//! and then needs the exponential of the small projected matrix. That
//! exponential is computed here with a diagonal Padé approximation combined
//! with scaling and squaring, degree 13 at most, following the standard
//! order-selection cascade. The kernel also reports how many dense
//! matrix-matrix multiplications it performed, which feeds the solver's cost
//! diagnostics.

use crate::{Error, Result};

/// Dense row-major matrix of `f64` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from row-major data. Errors if the length is inconsistent.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{}x{} matrix needs {} entries, got {}",
                rows,
                cols,
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.data[i * cols + j] = f(i, j);
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Leading `k`-by-`k` block as a new matrix.
    pub fn leading_block(&self, k: usize) -> DenseMatrix {
        debug_assert!(k <= self.rows && k <= self.cols);
        DenseMatrix::from_fn(k, k, |i, j| self.get(i, j))
    }

    pub fn fill(&mut self, v: f64) {
        self.data.fill(v);
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    /// `self += s * other`, entrywise.
    pub fn add_scaled(&mut self, other: &DenseMatrix, s: f64) {
        debug_assert_eq!(self.rows, other.rows);
        debug_assert_eq!(self.cols, other.cols);
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += s * b;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Maximum absolute column sum.
    pub fn norm_1(&self) -> f64 {
        let mut best = 0.0f64;
        for j in 0..self.cols {
            let mut s = 0.0;
            for i in 0..self.rows {
                s += self.get(i, j).abs();
            }
            best = best.max(s);
        }
        best
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Dense matrix product. Panics on inner-dimension mismatch.
    pub fn mul(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.cols, other.rows, "matmul inner dimension mismatch");
        let (n, k, m) = (self.rows, self.cols, other.cols);
        let mut out = DenseMatrix::zeros(n, m);
        // i-k-j loop order keeps the inner loop contiguous in both operands.
        for i in 0..n {
            let arow = &self.data[i * k..(i + 1) * k];
            let orow = &mut out.data[i * m..(i + 1) * m];
            for (kk, &aik) in arow.iter().enumerate() {
                if aik == 0.0 {
                    continue;
                }
                let brow = &other.data[kk * m..(kk + 1) * m];
                for (o, &b) in orow.iter_mut().zip(brow.iter()) {
                    *o += aik * b;
                }
            }
        }
        out
    }

    /// Dense matrix-vector product.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::Dimension(format!(
                "matvec: matrix has {} columns, vector has length {}",
                self.cols,
                x.len()
            )));
        }
        let mut out = vec![0.0; self.rows];
        for i in 0..self.rows {
            let row = self.row(i);
            let mut s = 0.0;
            for (a, b) in row.iter().zip(x.iter()) {
                s += a * b;
            }
            out[i] = s;
        }
        Ok(out)
    }

    /// Determinant via LU factorization with partial pivoting.
    pub fn det(&self) -> Result<f64> {
        if !self.is_square() {
            return Err(Error::Dimension("det of non-square matrix".into()));
        }
        let n = self.rows;
        let mut lu = self.data.clone();
        let mut det = 1.0;
        for k in 0..n {
            let mut piv = k;
            let mut best = lu[k * n + k].abs();
            for i in (k + 1)..n {
                let v = lu[i * n + k].abs();
                if v > best {
                    best = v;
                    piv = i;
                }
            }
            if best == 0.0 {
                return Ok(0.0);
            }
            if piv != k {
                for j in 0..n {
                    lu.swap(k * n + j, piv * n + j);
                }
                det = -det;
            }
            let pivot = lu[k * n + k];
            det *= pivot;
            for i in (k + 1)..n {
                let factor = lu[i * n + k] / pivot;
                lu[i * n + k] = factor;
                for j in (k + 1)..n {
                    lu[i * n + j] -= factor * lu[k * n + j];
                }
            }
        }
        Ok(det)
    }
}

/// Solves `A X = B` in place of `B` using LU with partial pivoting.
///
/// `A` is consumed as scratch. Used for the Padé solve; the coefficient
/// matrix there is well conditioned by construction.
fn solve_in_place(mut a: DenseMatrix, b: &mut DenseMatrix) -> Result<()> {
    let n = a.rows;
    assert!(a.is_square() && b.rows == n);
    let m = b.cols;
    for k in 0..n {
        let mut piv = k;
        let mut best = a.get(k, k).abs();
        for i in (k + 1)..n {
            let v = a.get(i, k).abs();
            if v > best {
                best = v;
                piv = i;
            }
        }
        if best == 0.0 {
            return Err(Error::Domain("singular matrix in dense solve".into()));
        }
        if piv != k {
            for j in 0..n {
                let t = a.get(k, j);
                a.set(k, j, a.get(piv, j));
                a.set(piv, j, t);
            }
            for j in 0..m {
                let t = b.get(k, j);
                b.set(k, j, b.get(piv, j));
                b.set(piv, j, t);
            }
        }
        let pivot = a.get(k, k);
        for i in (k + 1)..n {
            let factor = a.get(i, k) / pivot;
            if factor == 0.0 {
                continue;
            }
            a.set(i, k, factor);
            for j in (k + 1)..n {
                let v = a.get(i, j) - factor * a.get(k, j);
                a.set(i, j, v);
            }
            for j in 0..m {
                let v = b.get(i, j) - factor * b.get(k, j);
                b.set(i, j, v);
            }
        }
    }
    // Back substitution.
    for i in (0..n).rev() {
        let pivot = a.get(i, i);
        for j in 0..m {
            let mut s = b.get(i, j);
            for k in (i + 1)..n {
                s -= a.get(i, k) * b.get(k, j);
            }
            b.set(i, j, s / pivot);
        }
    }
    Ok(())
}

// Order-selection thresholds for the 1-norm of the scaled matrix.
const THETA_3: f64 = 1.495_585_217_958_292e-2;
const THETA_5: f64 = 2.539_398_330_063_230e-1;
const THETA_7: f64 = 9.504_178_996_162_932e-1;
const THETA_9: f64 = 2.097_847_961_257_068e0;
const THETA_13: f64 = 5.371_920_351_148_152e0;

const PADE_3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE_5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE_7: [f64; 8] = [
    17_297_280.0,
    8_648_640.0,
    1_995_840.0,
    277_200.0,
    25_200.0,
    1_512.0,
    56.0,
    1.0,
];
const PADE_9: [f64; 10] = [
    17_643_225_600.0,
    8_821_612_800.0,
    2_075_673_600.0,
    302_702_400.0,
    30_270_240.0,
    2_162_160.0,
    110_880.0,
    3_960.0,
    90.0,
    1.0,
];
const PADE_13: [f64; 14] = [
    64_764_752_532_480_000.0,
    32_382_376_266_240_000.0,
    7_771_770_303_897_600.0,
    1_187_353_796_428_800.0,
    129_060_195_264_000.0,
    10_559_470_521_600.0,
    670_442_572_800.0,
    33_522_128_640.0,
    1_323_241_920.0,
    40_840_800.0,
    960_960.0,
    16_380.0,
    182.0,
    1.0,
];

/// Computes `exp(scale * m)`.
///
/// Returns the exponential together with `n_mult`, the number of dense
/// matrix-matrix multiplications performed (squarings included), which is the
/// quantity the solver's cost model is expressed in.
pub fn expm(m: &DenseMatrix, scale: f64) -> Result<(DenseMatrix, usize)> {
    if !m.is_square() {
        return Err(Error::Dimension(format!(
            "expm needs a square matrix, got {}x{}",
            m.rows, m.cols
        )));
    }
    if !scale.is_finite() || !m.all_finite() {
        return Err(Error::Domain("expm input has non-finite entries".into()));
    }
    let n = m.rows;
    if n == 0 {
        return Ok((DenseMatrix::zeros(0, 0), 0));
    }

    let mut a = m.clone();
    a.scale(scale);
    let norm = a.norm_1();

    let mut n_mult = 0usize;
    let mut result = if norm <= THETA_9 {
        let coeffs: &[f64] = if norm <= THETA_3 {
            &PADE_3
        } else if norm <= THETA_5 {
            &PADE_5
        } else if norm <= THETA_7 {
            &PADE_7
        } else {
            &PADE_9
        };
        pade_low(&a, coeffs, &mut n_mult)?
    } else {
        // Scale down below the degree-13 threshold, then square back up.
        let mut s = ((norm / THETA_13).log2().ceil()) as i32;
        if s < 0 {
            s = 0;
        }
        a.scale(0.5f64.powi(s));
        let mut f = pade_13(&a, &mut n_mult)?;
        for _ in 0..s {
            f = f.mul(&f);
            n_mult += 1;
        }
        f
    };

    if !result.all_finite() {
        return Err(Error::Domain(
            "expm produced non-finite entries (overflow)".into(),
        ));
    }
    // Guard against -0.0 artifacts in exactly-representable cases.
    for v in &mut result.data {
        if *v == 0.0 {
            *v = 0.0;
        }
    }
    Ok((result, n_mult))
}

/// Padé approximant of odd degree 3..=9 with coefficient table `b`.
fn pade_low(a: &DenseMatrix, b: &[f64], n_mult: &mut usize) -> Result<DenseMatrix> {
    let n = a.rows;
    let degree = b.len() - 1;
    // Even powers a^2, a^4, ... up to a^(degree-1).
    let mut powers: Vec<DenseMatrix> = Vec::new();
    let a2 = a.mul(a);
    *n_mult += 1;
    powers.push(a2);
    while powers.len() < (degree - 1) / 2 {
        let next = powers.last().unwrap().mul(&powers[0]);
        *n_mult += 1;
        powers.push(next);
    }

    // U = A * (b[degree]*A^(degree-1) + ... + b[3]*A^2 + b[1]*I)
    let mut u_inner = DenseMatrix::identity(n);
    u_inner.scale(b[1]);
    for (idx, p) in powers.iter().enumerate() {
        u_inner.add_scaled(p, b[2 * idx + 3]);
    }
    let u = a.mul(&u_inner);
    *n_mult += 1;

    // V = b[degree-1]*A^(degree-1) + ... + b[2]*A^2 + b[0]*I
    let mut v = DenseMatrix::identity(n);
    v.scale(b[0]);
    for (idx, p) in powers.iter().enumerate() {
        v.add_scaled(p, b[2 * idx + 2]);
    }

    pade_solve(u, v)
}

fn pade_13(a: &DenseMatrix, n_mult: &mut usize) -> Result<DenseMatrix> {
    let n = a.rows;
    let b = &PADE_13;
    let a2 = a.mul(a);
    let a4 = a2.mul(&a2);
    let a6 = a2.mul(&a4);
    *n_mult += 3;

    let mut w1 = DenseMatrix::zeros(n, n);
    w1.add_scaled(&a6, b[13]);
    w1.add_scaled(&a4, b[11]);
    w1.add_scaled(&a2, b[9]);
    let mut w = a6.mul(&w1);
    *n_mult += 1;
    w.add_scaled(&a6, b[7]);
    w.add_scaled(&a4, b[5]);
    w.add_scaled(&a2, b[3]);
    let mut ident = DenseMatrix::identity(n);
    ident.scale(b[1]);
    w.add_scaled(&ident, 1.0);
    let u = a.mul(&w);
    *n_mult += 1;

    let mut z1 = DenseMatrix::zeros(n, n);
    z1.add_scaled(&a6, b[12]);
    z1.add_scaled(&a4, b[10]);
    z1.add_scaled(&a2, b[8]);
    let mut v = a6.mul(&z1);
    *n_mult += 1;
    v.add_scaled(&a6, b[6]);
    v.add_scaled(&a4, b[4]);
    v.add_scaled(&a2, b[2]);
    let mut ident = DenseMatrix::identity(n);
    ident.scale(b[0]);
    v.add_scaled(&ident, 1.0);

    pade_solve(u, v)
}

/// Solves `(V - U) F = (V + U)` for the rational approximant `F`.
fn pade_solve(u: DenseMatrix, v: DenseMatrix) -> Result<DenseMatrix> {
    let mut denom = v.clone();
    denom.add_scaled(&u, -1.0);
    let mut numer = v;
    numer.add_scaled(&u, 1.0);
    solve_in_place(denom, &mut numer)?;
    Ok(numer)
}

// Plain vector helpers used throughout the crate.

#[inline]
pub(crate) fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[inline]
pub(crate) fn dot(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    x.iter().zip(y.iter()).map(|(a, b)| a * b).sum()
}

#[inline]
pub(crate) fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x.iter()) {
        *yi += alpha * xi;
    }
}

/// Largest entrywise absolute difference of two equal-length slices.
pub fn max_abs_diff(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    x.iter()
        .zip(y.iter())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
}

/// Largest absolute entry of a slice.
pub fn max_abs(x: &[f64]) -> f64 {
    x.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}
