//! Dense symmetric matrices, guarded Cholesky factorization, half-vectorization
//! and compensated summation.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{MeloError, Result};

/// Relative jitter base added to the diagonal when a Cholesky factorization fails.
pub const JITTER_BASE: f64 = 1e-10;
/// Number of escalating jitter retries after the first failed factorization.
pub const JITTER_RETRIES: usize = 3;

/// Square symmetric matrix. The stored matrix is exactly symmetric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymmetricMatrix(DMatrix<f64>);

impl SymmetricMatrix {
    /// Accepts a square matrix whose asymmetry is within 1e-8 relative; the stored value is (A + A')/2.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(MeloError::DimensionMismatch(format!(
                "symmetric matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(MeloError::InvalidParameter("matrix has non-finite entries".into()));
        }
        let scale = m.amax().max(1.0);
        let asym = (&m - m.transpose()).amax();
        if asym > 1e-8 * scale {
            return Err(MeloError::InvalidParameter(format!(
                "matrix is not symmetric (max asymmetry {asym:e})"
            )));
        }
        Ok(Self::symmetrized(m))
    }

    /// Symmetrizes without checking; for matrices symmetric up to rounding by construction.
    pub fn symmetrized(m: DMatrix<f64>) -> Self {
        let t = m.transpose();
        Self((m + t) * 0.5)
    }

    pub fn identity(d: usize) -> Self {
        Self(DMatrix::identity(d, d))
    }

    pub fn zeros(d: usize) -> Self {
        Self(DMatrix::zeros(d, d))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        Self(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    /// Builds from a lower-triangle row-major packing (the `vech` convention).
    pub fn from_vech(d: usize, v: &[f64]) -> Result<Self> {
        if v.len() != vech_len(d) {
            return Err(MeloError::DimensionMismatch(format!(
                "vech of a {d}x{d} matrix has {} entries, got {}",
                vech_len(d),
                v.len()
            )));
        }
        let mut m = DMatrix::zeros(d, d);
        let mut k = 0;
        for i in 0..d {
            for j in 0..=i {
                m[(i, j)] = v[k];
                m[(j, i)] = v[k];
                k += 1;
            }
        }
        Ok(Self(m))
    }

    /// Lower triangle, row-major.
    pub fn vech(&self) -> Vec<f64> {
        let d = self.dim();
        let mut out = Vec::with_capacity(vech_len(d));
        for i in 0..d {
            for j in 0..=i {
                out.push(self.0[(i, j)]);
            }
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn scaled(&self, f: f64) -> Self {
        Self(&self.0 * f)
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    /// Cholesky factorization under the jitter policy: on failure add
    /// `JITTER_BASE·10^r·trace/d` to the diagonal for r = 0..JITTER_RETRIES.
    pub fn cholesky(&self) -> Result<Cholesky<f64, Dyn>> {
        cholesky_with_jitter(&self.0)
    }

    /// Exact Cholesky without jitter; `None` when not numerically positive definite.
    pub fn cholesky_strict(&self) -> Option<Cholesky<f64, Dyn>> {
        Cholesky::new(self.0.clone())
    }

    pub fn inverse(&self) -> Result<Self> {
        let c = self.cholesky()?;
        Ok(Self::symmetrized(c.inverse()))
    }

    /// A factor F with F F' = self. Cholesky when possible, otherwise an
    /// eigen-decomposition with tiny negative eigenvalues clipped at zero.
    pub fn psd_factor(&self) -> Result<DMatrix<f64>> {
        if let Ok(c) = self.cholesky() {
            return Ok(c.l());
        }
        let eig = SymmetricEigen::new(self.0.clone());
        let max_abs = eig.eigenvalues.amax();
        let tol = 1e-8 * max_abs.max(f64::MIN_POSITIVE);
        if eig.eigenvalues.iter().any(|&l| l < -tol) {
            return Err(MeloError::NonPositiveDefinite(
                "covariance has a materially negative eigenvalue".into(),
            ));
        }
        let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
        Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots))
    }
}

pub fn cholesky_with_jitter(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok(c);
    }
    let d = m.nrows().max(1);
    let base = JITTER_BASE * m.trace() / d as f64;
    if base > 0.0 && base.is_finite() {
        let mut eps = base;
        for _ in 0..JITTER_RETRIES {
            let mut j = m.clone();
            for i in 0..m.nrows() {
                j[(i, i)] += eps;
            }
            if let Some(c) = Cholesky::new(j) {
                log::debug!("cholesky succeeded after diagonal jitter {eps:e}");
                return Ok(c);
            }
            eps *= 10.0;
        }
    }
    Err(MeloError::NonPositiveDefinite(format!(
        "cholesky failed for a {}x{} matrix after jitter",
        m.nrows(),
        m.ncols()
    )))
}

pub fn vech_len(d: usize) -> usize {
    d * (d + 1) / 2
}

/// (i, j) index pairs in vech order.
pub fn vech_indices(d: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(vech_len(d));
    for i in 0..d {
        for j in 0..=i {
            out.push((i, j));
        }
    }
    out
}

pub fn kronecker(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// Block-diagonal assembly of square blocks.
pub fn block_diag(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let n: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(n, n);
    let mut off = 0;
    for b in blocks {
        out.view_mut((off, off), (b.nrows(), b.ncols())).copy_from(b);
        off += b.nrows();
    }
    out
}

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Debug, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Compensated sum over a slice.
pub fn kahan_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut k = KahanSum::default();
    for x in xs {
        k.add(x);
    }
    k.value()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vech_round_trip() {
        let m = SymmetricMatrix::new(DMatrix::from_row_slice(
            3,
            3,
            &[1.0, 2.0, 4.0, 2.0, 3.0, 5.0, 4.0, 5.0, 6.0],
        ))
        .unwrap();
        assert_eq!(m.vech(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(SymmetricMatrix::from_vech(3, &m.vech()).unwrap(), m);
    }

    #[test]
    fn rejects_asymmetric() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(SymmetricMatrix::new(m).is_err());
    }

    #[test]
    fn jitter_rescues_semidefinite() {
        let v = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let m = &v * v.transpose();
        assert!(Cholesky::new(m.clone()).is_none());
        assert!(cholesky_with_jitter(&m).is_ok());
    }

    #[test]
    fn psd_factor_of_zero_is_zero() {
        let f = SymmetricMatrix::zeros(2).psd_factor().unwrap();
        assert_eq!(f.amax(), 0.0);
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let xs = std::iter::once(1e16).chain(std::iter::repeat(1.0).take(1000)).chain(std::iter::once(-1e16));
        assert_eq!(kahan_sum(xs), 1000.0);
    }
}
