//! Unknown mean and covariance of i.i.d. multivariate normal observations.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{indexed_names, vech_names, PosteriorDraws};
use crate::distributions::InverseWishart;
use crate::error::{MeloError, Result};
use crate::linalg::{vech_len, SymmetricMatrix};

/// Statistics (μ̂, S) of T observations; Σ | R ~ IW(T − 1, S), μ | Σ, R ~ N(μ̂, Σ/T).
#[derive(Clone, Debug)]
pub struct MvnMeanCovPosterior {
    pub mu_hat: DVector<f64>,
    pub s_matrix: SymmetricMatrix,
    pub t: usize,
}

pub fn mvn_mean_cov_gibbs<R: Rng + ?Sized>(returns: &DMatrix<f64>, iters: usize, rng: &mut R) -> Result<PosteriorDraws> {
    MvnMeanCovPosterior::from_returns(returns)?.sample(iters, rng)
}

impl MvnMeanCovPosterior {
    pub fn from_returns(r: &DMatrix<f64>) -> Result<Self> {
        let (t, l) = r.shape();
        if t <= l + 2 {
            return Err(MeloError::InsufficientData { needed: l + 2, got: t });
        }
        let mu_hat = r.row_mean().transpose();
        let centered = DMatrix::from_fn(t, l, |i, j| r[(i, j)] - mu_hat[j]);
        let s = SymmetricMatrix::symmetrized(centered.tr_mul(&centered));
        Ok(Self { mu_hat, s_matrix: s, t })
    }

    pub fn from_statistics(mu_hat: DVector<f64>, s_matrix: SymmetricMatrix, t: usize) -> Result<Self> {
        let l = mu_hat.len();
        if s_matrix.dim() != l {
            return Err(MeloError::DimensionMismatch(format!("S is {0}x{0}, μ̂ has {l}", s_matrix.dim())));
        }
        if t <= l + 2 {
            return Err(MeloError::InsufficientData { needed: l + 2, got: t });
        }
        Ok(Self { mu_hat, s_matrix, t })
    }

    pub fn dim(&self) -> usize {
        self.mu_hat.len()
    }

    /// Unbiased covariance estimate S/(T − 1).
    pub fn sigma_hat(&self) -> SymmetricMatrix {
        self.s_matrix.scaled(1.0 / (self.t - 1) as f64)
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut n = indexed_names("mu", self.dim());
        n.extend(vech_names("sigma", self.dim()));
        n
    }

    /// i.i.d. draws of (μ, vech Σ); the Σ marginal is exact so no burn-in is needed.
    pub fn sample<R: Rng + ?Sized>(&self, iters: usize, rng: &mut R) -> Result<PosteriorDraws> {
        let l = self.dim();
        let iw = InverseWishart::new((self.t - 1) as f64, &self.s_matrix)?;
        let inv_sqrt_t = 1.0 / (self.t as f64).sqrt();
        let mut values = Vec::with_capacity(iters * (l + vech_len(l)));
        let mut z = DVector::zeros(l);
        for _ in 0..iters {
            let sigma = iw.sample(rng);
            let chol = sigma.cholesky()?;
            for zi in z.iter_mut() {
                *zi = rng.sample(StandardNormal);
            }
            let mu = &self.mu_hat + (chol.l() * &z) * inv_sqrt_t;
            values.extend(mu.iter());
            values.extend(sigma.vech());
        }
        PosteriorDraws::new(self.param_names(), values, 0)
    }
}
