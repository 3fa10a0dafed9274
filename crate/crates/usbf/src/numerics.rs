//! Dense complex linear algebra and scalar special functions used by the
//! schedulers.
//!
//! Everything here is sized for small systems (tens of antennas, tens of
//! users), so the kernels are plain row-major loops rather than bindings to an
//! external BLAS. Two routes exist for inverting the uplink covariance
//! `I + sum_k q_k h_k h_k^H`:
//!
//! * [`hermitian_inverse`] — Cholesky factorization, `O(N^3)`, used as the
//!   reference path and for general positive-definite systems;
//! * [`sherman_morrison_chain`] — `K` rank-1 inverse updates, `O(K N^2)`,
//!   the fast path that avoids the cubic factorization entirely.

use num_complex::Complex64;

use crate::{Error, Result};

/// Denominators below this are treated as a rank-1 update breakdown.
pub const BREAKDOWN_THRESHOLD: f64 = 1e-14;

// ---------------------------------------------------------------------------
// Vectors
// ---------------------------------------------------------------------------

/// Fixed-length complex column vector.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexVector {
    data: Vec<Complex64>,
}

impl ComplexVector {
    pub fn from_vec(data: Vec<Complex64>) -> Self {
        Self { data }
    }

    pub fn zeros(n: usize) -> Self {
        Self { data: vec![Complex64::new(0.0, 0.0); n] }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Complex64> {
        self.data.iter()
    }

    /// Hermitian inner product `self^H other`.
    #[inline]
    pub fn dot_h(&self, other: &Self) -> Complex64 {
        debug_assert_eq!(self.len(), other.len());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    /// Squared Euclidean norm.
    #[inline]
    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    #[inline]
    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { data: self.data.iter().map(|z| z * factor).collect() }
    }

    /// Unit-norm copy. Errors on the zero vector.
    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm();
        if n <= 0.0 || !n.is_finite() {
            return Err(Error::InvalidArgument(
                "cannot normalize a zero or non-finite vector".into(),
            ));
        }
        Ok(self.scaled(1.0 / n))
    }
}

impl std::ops::Index<usize> for ComplexVector {
    type Output = Complex64;
    #[inline]
    fn index(&self, i: usize) -> &Complex64 {
        &self.data[i]
    }
}

impl std::ops::IndexMut<usize> for ComplexVector {
    #[inline]
    fn index_mut(&mut self, i: usize) -> &mut Complex64 {
        &mut self.data[i]
    }
}

// ---------------------------------------------------------------------------
// Matrices
// ---------------------------------------------------------------------------

/// Dense row-major complex matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![Complex64::new(0.0, 0.0); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = Complex64::new(1.0, 0.0);
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[Complex64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Matrix-vector product `self * x`.
    pub fn matvec(&self, x: &ComplexVector) -> ComplexVector {
        debug_assert_eq!(self.cols, x.len());
        let mut out = ComplexVector::zeros(self.rows);
        for i in 0..self.rows {
            let row = self.row(i);
            let mut acc = Complex64::new(0.0, 0.0);
            for (a, b) in row.iter().zip(x.iter()) {
                acc += a * b;
            }
            out[i] = acc;
        }
        out
    }

    /// Matrix product `self * other`.
    pub fn mul(&self, other: &Self) -> Self {
        debug_assert_eq!(self.cols, other.rows);
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == Complex64::new(0.0, 0.0) {
                    continue;
                }
                let orow = &other.data[k * other.cols..(k + 1) * other.cols];
                let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, b) in out_row.iter_mut().zip(orow.iter()) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Frobenius norm of `self - other`.
    pub fn frobenius_distance(&self, other: &Self) -> f64 {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// Adds `alpha * u u^H` in place (`alpha` real keeps the matrix Hermitian).
    pub fn add_scaled_outer(&mut self, alpha: f64, u: &ComplexVector) {
        debug_assert_eq!(self.rows, self.cols);
        debug_assert_eq!(self.rows, u.len());
        let n = self.rows;
        for i in 0..n {
            let aui = alpha * u[i];
            for j in i..n {
                let delta = aui * u[j].conj();
                self.data[i * n + j] += delta;
                if i != j {
                    self.data[j * n + i] = self.data[i * n + j].conj();
                }
            }
        }
    }
}

impl std::ops::Index<(usize, usize)> for ComplexMatrix {
    type Output = Complex64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for ComplexMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        &mut self.data[i * self.cols + j]
    }
}

// ---------------------------------------------------------------------------
// Hermitian inversion (reference path)
// ---------------------------------------------------------------------------

/// Inverts a Hermitian positive-definite matrix by Cholesky factorization.
///
/// Only the lower triangle (and real diagonal) of `a` is read. Fails with
/// [`Error::NonSquare`] on rectangular input and
/// [`Error::NotPositiveDefinite`] when a pivot is not strictly positive.
pub fn hermitian_inverse(a: &ComplexMatrix) -> Result<ComplexMatrix> {
    if a.rows != a.cols {
        return Err(Error::NonSquare { rows: a.rows, cols: a.cols });
    }
    let n = a.rows;
    let zero = Complex64::new(0.0, 0.0);

    // Cholesky factor L with a = L L^H.
    let mut l = vec![zero; n * n];
    for j in 0..n {
        let mut diag = a[(j, j)].re;
        for k in 0..j {
            diag -= l[j * n + k].norm_sqr();
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return Err(Error::NotPositiveDefinite { pivot: j });
        }
        let ljj = diag.sqrt();
        l[j * n + j] = Complex64::new(ljj, 0.0);
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k].conj();
            }
            l[i * n + j] = s / ljj;
        }
    }

    // M = L^{-1}, lower triangular.
    let mut m = vec![zero; n * n];
    for j in 0..n {
        m[j * n + j] = Complex64::new(1.0 / l[j * n + j].re, 0.0);
        for i in (j + 1)..n {
            let mut s = zero;
            for k in j..i {
                s += l[i * n + k] * m[k * n + j];
            }
            m[i * n + j] = -s / l[i * n + i].re;
        }
    }

    // a^{-1} = M^H M; fill the upper triangle and mirror to keep the result
    // exactly Hermitian.
    let mut inv = ComplexMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let mut s = zero;
            for k in j..n {
                s += m[k * n + i].conj() * m[k * n + j];
            }
            if i == j {
                s = Complex64::new(s.re, 0.0);
            }
            inv[(i, j)] = s;
            if i != j {
                inv[(j, i)] = s.conj();
            }
        }
    }
    Ok(inv)
}

// ---------------------------------------------------------------------------
// Rank-1 inverse update chain (fast path)
// ---------------------------------------------------------------------------

/// Computes `(I_n + sum_k q_k h_k h_k^H)^{-1}` by chaining rank-1 inverse
/// updates, starting from the identity:
///
/// `T_k = T_{k-1} - q_k (T_{k-1} h_k)(T_{k-1} h_k)^H / (1 + q_k h_k^H T_{k-1} h_k)`
///
/// Each step costs `O(n^2)`, so the whole chain is `O(K n^2)` and never
/// factorizes the `n x n` matrix. Zero weights are skipped, which leaves the
/// running inverse bit-for-bit untouched. A denominator with magnitude below
/// [`BREAKDOWN_THRESHOLD`] aborts with [`Error::NumericalBreakdown`] (it
/// cannot occur for nonnegative weights and finite channels).
pub fn sherman_morrison_chain(
    channels: &[ComplexVector],
    weights: &[f64],
    n: usize,
) -> Result<ComplexMatrix> {
    if channels.len() != weights.len() {
        return Err(Error::DimensionMismatch {
            context: "sherman_morrison_chain weights",
            expected: channels.len(),
            found: weights.len(),
        });
    }
    for (k, h) in channels.iter().enumerate() {
        if h.len() != n {
            return Err(Error::DimensionMismatch {
                context: "sherman_morrison_chain channel length",
                expected: n,
                found: h.len(),
            });
        }
        if weights[k] < 0.0 || !weights[k].is_finite() {
            return Err(Error::InvalidArgument(format!(
                "rank-1 weight {k} must be finite and nonnegative, got {}",
                weights[k]
            )));
        }
    }

    let mut t = ComplexMatrix::identity(n);
    let mut u = ComplexVector::zeros(n);
    for (h, &q) in channels.iter().zip(weights) {
        if q == 0.0 {
            continue;
        }
        // u = T h (T is Hermitian, so h^H T h = h^H u is real).
        for i in 0..n {
            let row = t.row(i);
            let mut acc = Complex64::new(0.0, 0.0);
            for (a, b) in row.iter().zip(h.iter()) {
                acc += a * b;
            }
            u[i] = acc;
        }
        let quad: f64 = h
            .iter()
            .zip(u.iter())
            .map(|(a, b)| (a.conj() * b).re)
            .sum();
        let denom = 1.0 + q * quad;
        if denom.abs() < BREAKDOWN_THRESHOLD || !denom.is_finite() {
            return Err(Error::NumericalBreakdown(format!(
                "rank-1 update denominator {denom:e}"
            )));
        }
        t.add_scaled_outer(-q / denom, &u);
    }
    Ok(t)
}

// ---------------------------------------------------------------------------
// Gaussian tail probability
// ---------------------------------------------------------------------------

/// Gaussian tail probability `Q(x) = P(Z > x)` for standard normal `Z`.
#[inline]
pub fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

/// Inverse Gaussian tail probability on `0 < eps <= 0.5`.
///
/// Bisection brackets the root of `Q(x) = eps`, then Newton steps polish it;
/// the result satisfies `|Q(x) - eps| <= 1e-10` (far tighter in practice).
pub fn q_function_inverse(eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps <= 0.5) || !eps.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "tail probability must lie in (0, 0.5], got {eps}"
        )));
    }
    if eps == 0.5 {
        return Ok(0.0);
    }

    let (mut lo, mut hi) = (0.0_f64, 40.0_f64);
    while hi - lo > 1e-8 {
        let mid = 0.5 * (lo + hi);
        if q_function(mid) > eps {
            lo = mid;
        } else {
            hi = mid;
        }
    }

    // Newton polish: Q'(x) = -phi(x).
    let mut x = 0.5 * (lo + hi);
    for _ in 0..6 {
        let phi = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        if phi == 0.0 {
            break;
        }
        // f(x) = Q(x) - eps has f'(x) = -phi(x), so the Newton step is +f/phi.
        x += (q_function(x) - eps) / phi;
        x = x.clamp(lo - 1.0, hi + 1.0);
    }
    Ok(x)
}

// ---------------------------------------------------------------------------
