//! Probit regression by Gibbs sampling with latent Gaussian utilities.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{indexed_names, ols, IterationStat, PosteriorDraws};
use crate::distributions::{sample_truncated_normal, TruncationSide};
use crate::error::{MeloError, Result};
use crate::linalg::SymmetricMatrix;

/// Gaussian prior β ~ N(mean, cov).
#[derive(Clone, Debug)]
pub struct ProbitPrior {
    pub mean: DVector<f64>,
    pub cov: SymmetricMatrix,
}

impl ProbitPrior {
    /// Zero-mean prior with covariance `variance·I`.
    pub fn vague(q: usize, variance: f64) -> Self {
        Self { mean: DVector::zeros(q), cov: SymmetricMatrix::identity(q).scaled(variance) }
    }
}

/// 20% of the chain.
pub fn default_burn_in(iters: usize) -> usize {
    iters / 5
}

pub(crate) fn validate_binary(y: &[f64]) -> Result<()> {
    if let Some(v) = y.iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(MeloError::InvalidParameter(format!("binary response must be 0 or 1, found {v}")));
    }
    let ones = y.iter().filter(|&&v| v == 1.0).count();
    if ones == 0 || ones == y.len() {
        return Err(MeloError::CompleteSeparation("response contains a single class".into()));
    }
    Ok(())
}

/// Two-block Gibbs sampler starting from β = 0.
///
/// Each iteration draws y* | β from truncated normals and β | y* ~ N(B₁(X'y* + B₀⁻¹β₀), B₁)
/// with B₁ = (X'X + B₀⁻¹)⁻¹. Retained draws carry the latent-data statistics
/// β̂ = (X'X)⁻¹X'y* and s² = RSS/(N − q) of the y* that generated them.
pub fn probit_gibbs<R: Rng + ?Sized>(
    y: &[f64],
    x: &DMatrix<f64>,
    prior: &ProbitPrior,
    iters: usize,
    burn_in: usize,
    rng: &mut R,
) -> Result<PosteriorDraws> {
    let (n, q) = x.shape();
    if y.len() != n {
        return Err(MeloError::DimensionMismatch(format!("{} responses for {n} design rows", y.len())));
    }
    if prior.mean.len() != q || prior.cov.dim() != q {
        return Err(MeloError::DimensionMismatch(format!("prior dimension differs from q = {q}")));
    }
    if burn_in >= iters {
        return Err(MeloError::InvalidParameter(format!("burn-in {burn_in} must be below iterations {iters}")));
    }
    if n <= q {
        return Err(MeloError::InsufficientData { needed: q, got: n });
    }
    validate_binary(y)?;
    let b0_inv = prior
        .cov
        .cholesky_strict()
        .ok_or_else(|| MeloError::NonPositiveDefinite("probit prior covariance".into()))?
        .inverse();
    let zero = DMatrix::zeros(n, 1);
    let fit = ols(&zero, x)?;
    let xtx = fit.xtx.matrix();
    let xtx_inv = fit.xtx_inv.matrix();
    let b1 = SymmetricMatrix::symmetrized(xtx + &b0_inv).inverse()?;
    let b1_factor = b1.psd_factor()?;
    let prior_shift = &b0_inv * &prior.mean;

    let kept = iters - burn_in;
    let mut values = Vec::with_capacity(kept * q);
    let mut stats = Vec::with_capacity(kept);
    let mut beta = DVector::zeros(q);
    let mut ystar = DVector::zeros(n);
    let mut z = DVector::zeros(q);
    let sides: Vec<TruncationSide> = y
        .iter()
        .map(|&v| if v == 1.0 { TruncationSide::AboveZero } else { TruncationSide::BelowZero })
        .collect();
    for g in 0..iters {
        let mean = x * &beta;
        for i in 0..n {
            ystar[i] = sample_truncated_normal(mean[i], 1.0, sides[i], rng);
        }
        let xty = x.tr_mul(&ystar);
        let post_mean = b1.matrix() * (&xty + &prior_shift);
        for zi in z.iter_mut() {
            *zi = rng.sample(StandardNormal);
        }
        beta = &post_mean + &b1_factor * &z;
        if g >= burn_in {
            let bhat = xtx_inv * &xty;
            let rss = (&ystar - x * &bhat).norm_squared();
            values.extend(beta.iter());
            stats.push(IterationStat { beta_hat: bhat.iter().copied().collect(), s2: rss / (n - q) as f64 });
        }
    }
    PosteriorDraws::new(indexed_names("beta", q), values, burn_in)?.with_iteration_stats(stats)
}
