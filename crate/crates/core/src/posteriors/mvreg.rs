//! Multivariate regression Y = X B + E with rows of E i.i.d. N(0, Σ) and a diffuse prior.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{ols, vech_names, PosteriorDraws};
use crate::distributions::InverseWishart;
use crate::error::{MeloError, Result};
use crate::linalg::{vech_len, SymmetricMatrix};

/// Least-squares statistics B̂ (k×m), S = Ê'Ê and X'X.
///
/// Σ | Y ~ IW(N − k, S) and vec(B) | Σ, Y ~ N(vec(B̂), Σ ⊗ (X'X)⁻¹).
#[derive(Clone, Debug)]
pub struct MultivariateRegressionPosterior {
    pub b_hat: DMatrix<f64>,
    pub s_matrix: SymmetricMatrix,
    pub xtx: SymmetricMatrix,
    pub xtx_inv: SymmetricMatrix,
    pub n_obs: usize,
}

pub fn multivariate_regression_gibbs<R: Rng + ?Sized>(
    y: &DMatrix<f64>,
    x: &DMatrix<f64>,
    iters: usize,
    rng: &mut R,
) -> Result<PosteriorDraws> {
    MultivariateRegressionPosterior::fit(y, x)?.sample(iters, rng)
}

/// Column-stacked vec of a matrix.
pub fn vec_column_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.as_slice().to_vec()
}

impl MultivariateRegressionPosterior {
    pub fn fit(y: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<Self> {
        let (n, k) = x.shape();
        let m = y.ncols();
        if n <= k + m + 1 {
            return Err(MeloError::InsufficientData { needed: k + m + 1, got: n });
        }
        let fit = ols(y, x)?;
        let s = SymmetricMatrix::symmetrized(fit.residuals.tr_mul(&fit.residuals));
        Ok(Self { b_hat: fit.coef, s_matrix: s, xtx: fit.xtx, xtx_inv: fit.xtx_inv, n_obs: n })
    }

    pub fn from_statistics(b_hat: DMatrix<f64>, s_matrix: SymmetricMatrix, xtx: SymmetricMatrix, n_obs: usize) -> Result<Self> {
        let (k, m) = b_hat.shape();
        if xtx.dim() != k || s_matrix.dim() != m {
            return Err(MeloError::DimensionMismatch("B̂, S and X'X dimensions disagree".into()));
        }
        if n_obs <= k + m + 1 {
            return Err(MeloError::InsufficientData { needed: k + m + 1, got: n_obs });
        }
        let xtx_inv = xtx.inverse()?;
        Ok(Self { b_hat, s_matrix, xtx, xtx_inv, n_obs })
    }

    pub fn n_regressors(&self) -> usize {
        self.b_hat.nrows()
    }

    pub fn n_equations(&self) -> usize {
        self.b_hat.ncols()
    }

    /// N − k.
    pub fn dof(&self) -> usize {
        self.n_obs - self.n_regressors()
    }

    /// S/(N − k).
    pub fn sigma_hat(&self) -> SymmetricMatrix {
        self.s_matrix.scaled(1.0 / self.dof() as f64)
    }

    pub fn param_names(&self) -> Vec<String> {
        let (k, m) = self.b_hat.shape();
        let mut names: Vec<String> = (0..m)
            .flat_map(|j| (0..k).map(move |i| format!("b_{}_{}", i + 1, j + 1)))
            .collect();
        names.extend(vech_names("sigma", m));
        names
    }

    /// i.i.d. draws of (vec B, vech Σ).
    pub fn sample<R: Rng + ?Sized>(&self, iters: usize, rng: &mut R) -> Result<PosteriorDraws> {
        let (k, m) = self.b_hat.shape();
        let iw = InverseWishart::new(self.dof() as f64, &self.s_matrix)?;
        let fx = self.xtx_inv.psd_factor()?;
        let mut values = Vec::with_capacity(iters * (k * m + vech_len(m)));
        let mut z = DMatrix::zeros(k, m);
        for _ in 0..iters {
            let sigma = iw.sample(rng);
            let g = sigma.cholesky()?.l();
            for zi in z.iter_mut() {
                *zi = rng.sample(StandardNormal);
            }
            let b = &self.b_hat + &fx * &z * g.transpose();
            values.extend(b.iter());
            values.extend(sigma.vech());
        }
        PosteriorDraws::new(self.param_names(), values, 0)
    }

    /// Posterior mean of vec(B).
    pub fn vec_b_hat(&self) -> DVector<f64> {
        DVector::from_column_slice(self.b_hat.as_slice())
    }
}
