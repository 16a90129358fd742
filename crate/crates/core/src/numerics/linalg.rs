//! Dense symmetric positive-definite linear algebra.
//!
//! Everything works on column-major `nalgebra` storage, with the inner
//! loops written over contiguous column slices so they vectorize.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative jitter levels tried, in order, when a factorization fails.
/// Each level is multiplied by the mean diagonal of the input.
const JITTER_LEVELS: [f64; 5] = [1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

const SYMMETRY_TOL: f64 = 1e-8;

/// Which way a rank-one modification goes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Add,
    Remove,
}

/// Lower-triangular Cholesky factor `L` with `L Lᵀ = A`.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor {
    l: DMatrix<f64>,
    jitter: f64,
}

/// Factor a symmetric positive-definite matrix.
///
/// When a pivot fails the diagonal is jittered by `1e-10 · mean(diag A)`,
/// escalating by powers of ten up to `1e-6 · mean(diag A)`, before giving up.
pub fn cholesky(a: &DMatrix<f64>) -> Result<CholeskyFactor> {
    let n = check_square(a)?;
    check_symmetric(a)?;
    if n == 0 {
        return Err(Error::InvalidParameter("empty matrix".into()));
    }
    let mut work = a.clone();
    let mut last_pivot = match factor_in_place(work.as_mut_slice(), n) {
        Ok(()) => return Ok(CholeskyFactor { l: work, jitter: 0.0 }),
        Err(pivot) => pivot,
    };
    let mean_diag = a.diagonal().mean();
    if !(mean_diag > 0.0) {
        return Err(Error::NotPositiveDefinite { pivot: last_pivot });
    }
    for level in JITTER_LEVELS {
        let jitter = level * mean_diag;
        work.copy_from(a);
        for i in 0..n {
            work[(i, i)] += jitter;
        }
        match factor_in_place(work.as_mut_slice(), n) {
            Ok(()) => {
                log::debug!("cholesky needed jitter {jitter:e} (n = {n})");
                return Ok(CholeskyFactor { l: work, jitter });
            }
            Err(pivot) => last_pivot = pivot,
        }
    }
    Err(Error::NotPositiveDefinite { pivot: last_pivot })
}

/// Dot product with independent partial sums so the loop vectorizes.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 8];
    let chunks = n / 8;
    for c in 0..chunks {
        let (xa, xb) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for k in 0..8 {
            acc[k] += xa[k] * xb[k];
        }
    }
    let mut tail = 0.0;
    for i in chunks * 8..n {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[4]) + (acc[1] + acc[5]) + (acc[2] + acc[6]) + (acc[3] + acc[7]) + tail
}

fn check_square(a: &DMatrix<f64>) -> Result<usize> {
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            found: a.ncols(),
        });
    }
    Ok(a.nrows())
}

fn check_symmetric(a: &DMatrix<f64>) -> Result<()> {
    let n = a.nrows();
    let scale = a.amax().max(1.0);
    for j in 0..n {
        for i in (j + 1)..n {
            if (a[(i, j)] - a[(j, i)]).abs() > SYMMETRY_TOL * scale {
                return Err(Error::InvalidParameter(format!(
                    "matrix is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    Ok(())
}

/// Left-looking column Cholesky on a column-major buffer. Reads the lower
/// triangle only; on success the buffer holds `L` with a zeroed upper part.
/// On failure returns the index of the first non-positive pivot.
fn factor_in_place(a: &mut [f64], n: usize) -> std::result::Result<(), usize> {
    for j in 0..n {
        let (done, rest) = a.split_at_mut(j * n);
        let col_j = &mut rest[j..n];
        for k in 0..j {
            let col_k = &done[k * n + j..k * n + n];
            let ljk = col_k[0];
            if ljk != 0.0 {
                for (c, &l) in col_j.iter_mut().zip(col_k) {
                    *c -= ljk * l;
                }
            }
        }
        let pivot = col_j[0];
        if !(pivot > 0.0) || !pivot.is_finite() {
            return Err(j);
        }
        let d = pivot.sqrt();
        col_j[0] = d;
        let inv = 1.0 / d;
        for v in &mut col_j[1..] {
            *v *= inv;
        }
    }
    for j in 1..n {
        for v in &mut a[j * n..j * n + j] {
            *v = 0.0;
        }
    }
    Ok(())
}

impl CholeskyFactor {
    /// Wraps an already lower-triangular factor. Diagonal must be positive.
    pub fn from_lower(l: DMatrix<f64>) -> Result<Self> {
        let n = check_square(&l)?;
        for i in 0..n {
            if !(l[(i, i)] > 0.0) {
                return Err(Error::NotPositiveDefinite { pivot: i });
            }
        }
        Ok(Self { l, jitter: 0.0 })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            l: DMatrix::identity(dim, dim),
            jitter: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn lower(&self) -> &DMatrix<f64> {
        &self.l
    }

    /// Diagonal jitter that had to be added to factor the input (0 if none).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn recompose(&self) -> DMatrix<f64> {
        &self.l * self.l.transpose()
    }

    /// `log |A| = 2 Σ log L_ii`.
    pub fn log_det(&self) -> f64 {
        2.0 * self.l.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// Solves `L y = b` in place.
    pub fn forward_in_place(&self, b: &mut [f64]) {
        let n = self.dim();
        let l = self.l.as_slice();
        for k in 0..n {
            let col = &l[k * n + k..(k + 1) * n];
            let yk = b[k] / col[0];
            b[k] = yk;
            if yk != 0.0 {
                for (bi, &lik) in b[k + 1..].iter_mut().zip(&col[1..]) {
                    *bi -= yk * lik;
                }
            }
        }
    }

    /// Solves `Lᵀ x = y` in place.
    pub fn backward_in_place(&self, y: &mut [f64]) {
        let n = self.dim();
        let l = self.l.as_slice();
        for i in (0..n).rev() {
            let col = &l[i * n + i..(i + 1) * n];
            y[i] = (y[i] - dot(&col[1..], &y[i + 1..])) / col[0];
        }
    }

    /// `L⁻¹ b`.
    pub fn solve_lower(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_len(b.len())?;
        let mut out = b.clone();
        self.forward_in_place(out.as_mut_slice());
        Ok(out)
    }

    /// `A⁻¹ b`.
    pub fn solve_vec(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_len(b.len())?;
        let mut out = b.clone();
        self.forward_in_place(out.as_mut_slice());
        self.backward_in_place(out.as_mut_slice());
        Ok(out)
    }

    /// `A⁻¹ B`, column by column.
    pub fn solve(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_len(b.nrows())?;
        let mut out = b.clone();
        let n = self.dim();
        for col in out.as_mut_slice().chunks_exact_mut(n.max(1)) {
            self.forward_in_place(col);
            self.backward_in_place(col);
        }
        Ok(out)
    }

    /// Returns `(A⁻¹ B, log |A|)`.
    pub fn solve_and_logdet(&self, b: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
        Ok((self.solve(b)?, self.log_det()))
    }

    /// Explicit `A⁻¹ = L⁻ᵀ L⁻¹`, exploiting the triangular structure of `L⁻¹`.
    pub fn inverse(&self) -> DMatrix<f64> {
        let n = self.dim();
        let l = self.l.as_slice();
        // Columns of L⁻¹; column j is zero above row j.
        let mut linv = vec![0.0; n * n];
        for j in 0..n {
            let x = &mut linv[j * n..(j + 1) * n];
            x[j] = 1.0;
            for k in j..n {
                let col = &l[k * n + k..(k + 1) * n];
                let xk = x[k] / col[0];
                x[k] = xk;
                if xk != 0.0 {
                    for (xi, &lik) in x[k + 1..].iter_mut().zip(&col[1..]) {
                        *xi -= xk * lik;
                    }
                }
            }
        }
        let mut inv = DMatrix::zeros(n, n);
        for j in 0..n {
            for i in j..n {
                // (L⁻ᵀL⁻¹)_ij = Σ_{k ≥ i} L⁻¹_ki L⁻¹_kj for i ≥ j.
                let ci = &linv[i * n + i..(i + 1) * n];
                let cj = &linv[j * n + i..(j + 1) * n];
                let v = dot(ci, cj);
                inv[(i, j)] = v;
                inv[(j, i)] = v;
            }
        }
        inv
    }

    /// Replaces this factor by the factor of `A ± v vᵀ` in O(dim²).
    ///
    /// A failed downdate leaves the factor untouched and returns
    /// [`Error::DowndateFailure`].
    pub fn update_in_place(&mut self, v: &[f64], direction: Direction) -> Result<()> {
        self.check_len(v.len())?;
        match direction {
            Direction::Add => {
                rank_one_add(&mut self.l, v);
                Ok(())
            }
            Direction::Remove => {
                let backup = self.l.clone();
                if rank_one_remove(&mut self.l, v) {
                    Ok(())
                } else {
                    self.l = backup;
                    Err(Error::DowndateFailure)
                }
            }
        }
    }

    /// Returns the factor of `A ± v vᵀ`.
    pub fn rank_one_update(&self, v: &[f64], direction: Direction) -> Result<Self> {
        let mut out = self.clone();
        out.update_in_place(v, direction)?;
        Ok(out)
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: len,
            });
        }
        Ok(())
    }
}

fn rank_one_add(l: &mut DMatrix<f64>, v: &[f64]) {
    let n = l.nrows();
    let mut w = v.to_vec();
    let data = l.as_mut_slice();
    for k in 0..n {
        let col = &mut data[k * n + k..(k + 1) * n];
        let lkk = col[0];
        let r = lkk.hypot(w[k]);
        let c = r / lkk;
        let s = w[k] / lkk;
        col[0] = r;
        for (lik, wi) in col[1..].iter_mut().zip(&mut w[k + 1..]) {
            *lik = (*lik + s * *wi) / c;
            *wi = c * *wi - s * *lik;
        }
    }
}

/// Returns false when `A - v vᵀ` is not (numerically) positive definite.
fn rank_one_remove(l: &mut DMatrix<f64>, v: &[f64]) -> bool {
    let n = l.nrows();
    let mut w = v.to_vec();
    let data = l.as_mut_slice();
    for k in 0..n {
        let col = &mut data[k * n + k..(k + 1) * n];
        let lkk = col[0];
        let r2 = (lkk - w[k]) * (lkk + w[k]);
        if !(r2 > f64::EPSILON * lkk * lkk) || !r2.is_finite() {
            return false;
        }
        let r = r2.sqrt();
        let c = r / lkk;
        let s = w[k] / lkk;
        col[0] = r;
        for (lik, wi) in col[1..].iter_mut().zip(&mut w[k + 1..]) {
            *lik = (*lik - s * *wi) / c;
            *wi = c * *wi - s * *lik;
        }
    }
    true
}
