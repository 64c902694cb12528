//! Frequentist covariance of MELO estimates.
//!
//! The gradient of ω̂* with respect to the sufficient statistic θ̂ is a weighted
//! posterior covariance between the target and the score α(θ) = ∇_θ̂ log f(θ̂ | θ);
//! the delta method then propagates the sampling covariance of θ̂.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{MeloError, Result};
use crate::estimator::{melo_from_draws, MeloEstimate, OptimalInputStats, RationalTarget, TargetEval};
use crate::linalg::{block_diag, vech_indices, vech_len, KahanSum, SymmetricMatrix};
use crate::posteriors::{
    IterationStat, LinearModelPosterior, MultivariateRegressionPosterior, MvnMeanCovPosterior, PosteriorDraws,
};

/// Largest asset count for which the portfolio delta-method covariance is assembled.
pub const MAX_PORTFOLIO_ASSETS: usize = 10;

/// Score α(θ) of the sampling density of θ̂, evaluated at a posterior draw.
pub trait Score: Send + Sync {
    fn dim(&self) -> usize;
    /// `draw` is the row index of θ within its draw matrix.
    fn score(&self, theta: &[f64], draw: usize, out: &mut [f64]) -> Result<()>;
}

/// θ̂, its sampling covariance at plug-in values, and the score.
pub struct SufficientStatistic {
    pub theta_hat: Vec<f64>,
    pub sigma_theta_hat: SymmetricMatrix,
    pub score: Box<dyn Score>,
}

impl std::fmt::Debug for SufficientStatistic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SufficientStatistic")
            .field("theta_hat", &self.theta_hat)
            .field("sigma_theta_hat", &self.sigma_theta_hat)
            .finish_non_exhaustive()
    }
}

/// ∇_θ̂ ω̂*, K×P.
#[derive(Clone, Debug, PartialEq)]
pub struct MeloGradient {
    pub matrix: DMatrix<f64>,
}

/// How the probit latent-data statistics enter the score.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbitStatAveraging {
    /// One statistic, the iteration average of β̂⁽ᵍ⁾ and s²⁽ᵍ⁾, scores every draw.
    #[default]
    Pooled,
    /// Draw g is scored against its own iteration statistic.
    PerIteration,
}

fn s2_score(s2: f64, sigma2: f64, dof: f64) -> f64 {
    (dof / 2.0 - 1.0) / s2 - dof / (2.0 * sigma2)
}

/// Score of (β̂, s²) for the normal linear model at θ = (β, σ²).
pub fn score_linear(theta: &[f64], post: &LinearModelPosterior) -> Vec<f64> {
    let q = post.n_coef();
    let mut out = vec![0.0; q + 1];
    linear_block(&theta[..q], theta[q], post.beta_hat.as_slice(), post.s2, post.xtx.matrix(), post.dof() as f64, &mut out);
    out
}

fn linear_block(beta: &[f64], sigma2: f64, beta_hat: &[f64], s2: f64, xtx: &DMatrix<f64>, dof: f64, out: &mut [f64]) {
    let q = beta.len();
    for i in 0..q {
        let mut acc = 0.0;
        for j in 0..q {
            acc += xtx[(i, j)] * (beta[j] - beta_hat[j]);
        }
        out[i] = acc / sigma2;
    }
    out[q] = s2_score(s2, sigma2, dof);
}

/// Probit latent-data score at σ² = 1 against one iteration statistic.
pub fn score_probit_per_iteration(beta: &[f64], stat: &IterationStat, xtx: &SymmetricMatrix, n_obs: usize) -> Vec<f64> {
    let q = beta.len();
    let mut out = vec![0.0; q + 1];
    linear_block(beta, 1.0, &stat.beta_hat, stat.s2, xtx.matrix(), (n_obs - q) as f64, &mut out);
    out
}

struct LinearScore {
    beta_hat: Vec<f64>,
    s2: f64,
    xtx: DMatrix<f64>,
    dof: f64,
}

impl Score for LinearScore {
    fn dim(&self) -> usize {
        self.beta_hat.len() + 1
    }
    fn score(&self, theta: &[f64], _draw: usize, out: &mut [f64]) -> Result<()> {
        let q = self.beta_hat.len();
        linear_block(&theta[..q], theta[q], &self.beta_hat, self.s2, &self.xtx, self.dof, out);
        Ok(())
    }
}

struct ProbitScore {
    xtx: DMatrix<f64>,
    dof: f64,
    q: usize,
    pooled: Option<IterationStat>,
    per_iteration: Vec<IterationStat>,
}

impl Score for ProbitScore {
    fn dim(&self) -> usize {
        self.q + 1
    }
    fn score(&self, theta: &[f64], draw: usize, out: &mut [f64]) -> Result<()> {
        let stat = match &self.pooled {
            Some(s) => s,
            None => self.per_iteration.get(draw).ok_or(MeloError::MissingAugmentation)?,
        };
        linear_block(&theta[..self.q], 1.0, &stat.beta_hat, stat.s2, &self.xtx, self.dof, out);
        Ok(())
    }
}

/// vech of ((dof − d − 1)/2)S⁻¹ − ½Σ⁻¹ with off-diagonal entries doubled.
fn wishart_block(s_inv: &DMatrix<f64>, sigma_inv: &DMatrix<f64>, dof: f64, out: &mut [f64]) {
    let d = s_inv.nrows();
    let c = (dof - d as f64 - 1.0) / 2.0;
    for (k, (i, j)) in vech_indices(d).into_iter().enumerate() {
        let v = c * s_inv[(i, j)] - 0.5 * sigma_inv[(i, j)];
        out[k] = if i == j { v } else { 2.0 * v };
    }
}

fn inverse_of_draw(vech: &[f64], d: usize) -> Result<DMatrix<f64>> {
    Ok(SymmetricMatrix::from_vech(d, vech)?.cholesky()?.inverse())
}

/// Score of (μ̂, vech S) with μ̂ ~ N(μ, Σ/T) and S ~ W(T − 1, Σ), at θ = (μ, vech Σ).
pub fn score_portfolio(theta: &[f64], post: &MvnMeanCovPosterior) -> Result<Vec<f64>> {
    let s = PortfolioScore::new(post)?;
    let mut out = vec![0.0; s.dim()];
    s.score(theta, 0, &mut out)?;
    Ok(out)
}

struct PortfolioScore {
    mu_hat: DVector<f64>,
    s_inv: DMatrix<f64>,
    t: f64,
}

impl PortfolioScore {
    fn new(post: &MvnMeanCovPosterior) -> Result<Self> {
        let s_inv = post
            .s_matrix
            .cholesky_strict()
            .ok_or_else(|| MeloError::NonPositiveDefinite("scatter matrix S".into()))?
            .inverse();
        Ok(Self { mu_hat: post.mu_hat.clone(), s_inv, t: post.t as f64 })
    }
}

impl Score for PortfolioScore {
    fn dim(&self) -> usize {
        let l = self.mu_hat.len();
        l + vech_len(l)
    }
    fn score(&self, theta: &[f64], _draw: usize, out: &mut [f64]) -> Result<()> {
        let l = self.mu_hat.len();
        let sigma_inv = inverse_of_draw(&theta[l..], l)?;
        let dev = DVector::from_iterator(l, theta[..l].iter().zip(self.mu_hat.iter()).map(|(a, b)| a - b));
        let g = (&sigma_inv * dev) * self.t;
        out[..l].copy_from_slice(g.as_slice());
        wishart_block(&self.s_inv, &sigma_inv, self.t - 1.0, &mut out[l..]);
        Ok(())
    }
}

/// Score of (vec B̂, vech S) with vec B̂ ~ N(vec B, Σ ⊗ (X'X)⁻¹) and S ~ W(N − k, Σ).
pub fn score_structural(theta: &[f64], post: &MultivariateRegressionPosterior) -> Result<Vec<f64>> {
    let s = StructuralScore::new(post)?;
    let mut out = vec![0.0; s.dim()];
    s.score(theta, 0, &mut out)?;
    Ok(out)
}

struct StructuralScore {
    b_hat: DMatrix<f64>,
    s_inv: DMatrix<f64>,
    xtx: DMatrix<f64>,
    dof: f64,
}

impl StructuralScore {
    fn new(post: &MultivariateRegressionPosterior) -> Result<Self> {
        let s_inv = post
            .s_matrix
            .cholesky_strict()
            .ok_or_else(|| MeloError::NonPositiveDefinite("residual cross-product S".into()))?
            .inverse();
        Ok(Self { b_hat: post.b_hat.clone(), s_inv, xtx: post.xtx.matrix().clone(), dof: post.dof() as f64 })
    }
}

impl Score for StructuralScore {
    fn dim(&self) -> usize {
        let m = self.b_hat.ncols();
        self.b_hat.len() + vech_len(m)
    }
    fn score(&self, theta: &[f64], _draw: usize, out: &mut [f64]) -> Result<()> {
        let (k, m) = self.b_hat.shape();
        let km = k * m;
        let sigma_inv = inverse_of_draw(&theta[km..], m)?;
        let dev = DMatrix::from_column_slice(k, m, &theta[..km]) - &self.b_hat;
        // (Σ⁻¹ ⊗ X'X) vec(D) = vec(X'X D Σ⁻¹)
        let g = &self.xtx * dev * &sigma_inv;
        out[..km].copy_from_slice(g.as_slice());
        wishart_block(&self.s_inv, &sigma_inv, self.dof, &mut out[km..]);
        Ok(())
    }
}

/// blockdiag(s²(X'X)⁻¹, 2s⁴/(N − q)).
pub fn stat_covariance_linear(post: &LinearModelPosterior) -> SymmetricMatrix {
    let b = post.xtx_inv.scaled(post.s2).into_matrix();
    let v = DMatrix::from_element(1, 1, 2.0 * post.s2 * post.s2 / post.dof() as f64);
    SymmetricMatrix::symmetrized(block_diag(&[&b, &v]))
}

/// Cov(vech S) for S ~ W(dof, Σ): Cov(S_ij, S_kl) = dof(σ_ik σ_jl + σ_il σ_jk).
pub fn stat_covariance_wishart(sigma_hat: &SymmetricMatrix, dof: f64) -> SymmetricMatrix {
    let idx = vech_indices(sigma_hat.dim());
    let p = idx.len();
    let s = sigma_hat.matrix();
    let m = DMatrix::from_fn(p, p, |a, b| {
        let (i, j) = idx[a];
        let (k, l) = idx[b];
        dof * (s[(i, k)] * s[(j, l)] + s[(i, l)] * s[(j, k)])
    });
    SymmetricMatrix::symmetrized(m)
}

impl SufficientStatistic {
    /// (β̂, s²) of the normal linear model.
    pub fn linear(post: &LinearModelPosterior) -> Self {
        let mut theta_hat: Vec<f64> = post.beta_hat.iter().copied().collect();
        theta_hat.push(post.s2);
        Self {
            theta_hat,
            sigma_theta_hat: stat_covariance_linear(post),
            score: Box::new(LinearScore {
                beta_hat: post.beta_hat.iter().copied().collect(),
                s2: post.s2,
                xtx: post.xtx.matrix().clone(),
                dof: post.dof() as f64,
            }),
        }
    }

    /// Latent-data statistics of a probit chain; the covariance is that of (β̂, s²) at σ² = 1.
    pub fn probit(draws: &PosteriorDraws, x: &DMatrix<f64>, mode: ProbitStatAveraging) -> Result<Self> {
        let stats = draws.iteration_stats().ok_or(MeloError::MissingAugmentation)?;
        let (n, q) = x.shape();
        if stats.is_empty() || stats[0].beta_hat.len() != q {
            return Err(MeloError::DimensionMismatch("iteration statistics do not match the design".into()));
        }
        let xtx = SymmetricMatrix::symmetrized(x.tr_mul(x));
        let xtx_inv = xtx.inverse()?;
        let dof = (n - q) as f64;
        let mut pooled_b = vec![KahanSum::default(); q];
        let mut pooled_s2 = KahanSum::default();
        for st in stats {
            for (acc, b) in pooled_b.iter_mut().zip(&st.beta_hat) {
                acc.add(*b);
            }
            pooled_s2.add(st.s2);
        }
        let g = stats.len() as f64;
        let pooled = IterationStat {
            beta_hat: pooled_b.iter().map(|k| k.value() / g).collect(),
            s2: pooled_s2.value() / g,
        };
        let mut theta_hat = pooled.beta_hat.clone();
        theta_hat.push(pooled.s2);
        let var_s2 = DMatrix::from_element(1, 1, 2.0 / dof);
        let cov = SymmetricMatrix::symmetrized(block_diag(&[xtx_inv.matrix(), &var_s2]));
        let score = ProbitScore {
            xtx: xtx.into_matrix(),
            dof,
            q,
            pooled: (mode == ProbitStatAveraging::Pooled).then_some(pooled),
            per_iteration: if mode == ProbitStatAveraging::PerIteration { stats.to_vec() } else { Vec::new() },
        };
        Ok(Self { theta_hat, sigma_theta_hat: cov, score: Box::new(score) })
    }

    /// (μ̂, vech S) with covariance blockdiag(Σ̂/T, Cov_W(Σ̂, T − 1)), Σ̂ = S/(T − 1).
    pub fn portfolio(post: &MvnMeanCovPosterior) -> Result<Self> {
        let l = post.dim();
        if l > MAX_PORTFOLIO_ASSETS {
            return Err(MeloError::UnsupportedDimension(format!(
                "portfolio covariance is limited to {MAX_PORTFOLIO_ASSETS} assets, got {l}"
            )));
        }
        let sigma_hat = post.sigma_hat();
        let t = post.t as f64;
        let mu_block = sigma_hat.scaled(1.0 / t).into_matrix();
        let s_block = stat_covariance_wishart(&sigma_hat, t - 1.0).into_matrix();
        let mut theta_hat: Vec<f64> = post.mu_hat.iter().copied().collect();
        theta_hat.extend(post.s_matrix.vech());
        Ok(Self {
            theta_hat,
            sigma_theta_hat: SymmetricMatrix::symmetrized(block_diag(&[&mu_block, &s_block])),
            score: Box::new(PortfolioScore::new(post)?),
        })
    }

    /// (vec B̂, vech S) with covariance blockdiag(Σ̂ ⊗ (X'X)⁻¹, Cov_W(Σ̂, N − k)), Σ̂ = S/(N − k).
    pub fn structural(post: &MultivariateRegressionPosterior) -> Result<Self> {
        let sigma_hat = post.sigma_hat();
        let b_block = sigma_hat.matrix().kronecker(post.xtx_inv.matrix());
        let s_block = stat_covariance_wishart(&sigma_hat, post.dof() as f64).into_matrix();
        let mut theta_hat = post.b_hat.as_slice().to_vec();
        theta_hat.extend(post.s_matrix.vech());
        Ok(Self {
            theta_hat,
            sigma_theta_hat: SymmetricMatrix::symmetrized(block_diag(&[&b_block, &s_block])),
            score: Box::new(StructuralScore::new(post)?),
        })
    }

    pub fn dim(&self) -> usize {
        self.theta_hat.len()
    }
}

/// Row k: Σ_s h_k(g_k − ω̂*_k)α_s / Σ_s h_k, which equals
/// E[h g α]/E[h] − E[h g]E[h α]/E[h]² with draw averages in place of expectations.
pub fn melo_gradient<T: RationalTarget + ?Sized>(
    draws: &PosteriorDraws,
    target: &T,
    stat: &SufficientStatistic,
) -> Result<MeloGradient> {
    let est = melo_from_draws(draws, target)?;
    gradient_given_estimate(draws, target, stat, &est.omega_star)
}

fn gradient_given_estimate<T: RationalTarget + ?Sized>(
    draws: &PosteriorDraws,
    target: &T,
    stat: &SufficientStatistic,
    omega: &[f64],
) -> Result<MeloGradient> {
    let k = target.dim();
    let p = stat.score.dim();
    if p != stat.dim() {
        return Err(MeloError::DimensionMismatch(format!("score has {p} entries, statistic {}", stat.dim())));
    }
    let mut ev = TargetEval::new(k);
    let mut alpha = vec![0.0; p];
    let mut sum_h = vec![KahanSum::default(); k];
    let mut acc = vec![KahanSum::default(); k * p];
    for (s, theta) in draws.rows().enumerate() {
        ev.evaluate(target, theta, s)?;
        if ev.h.iter().all(|&h| h == 0.0) {
            continue;
        }
        stat.score.score(theta, s, &mut alpha)?;
        for c in 0..k {
            sum_h[c].add(ev.h[c]);
            let centered = ev.hg[c] - ev.h[c] * omega[c];
            if centered == 0.0 {
                continue;
            }
            for j in 0..p {
                acc[c * p + j].add(centered * alpha[j]);
            }
        }
    }
    let mut m = DMatrix::zeros(k, p);
    for c in 0..k {
        let total = sum_h[c].value();
        if !(total > 0.0) {
            return Err(MeloError::DegenerateWeights { component: c });
        }
        for j in 0..p {
            m[(c, j)] = acc[c * p + j].value() / total;
        }
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(MeloError::NonFiniteTarget { component: 0, draw: 0 });
    }
    Ok(MeloGradient { matrix: m })
}

/// G Σ_θ̂ G', symmetrized; diagonal entries in (−tol, 0) are clipped to zero.
pub fn delta_variance(grad: &MeloGradient, stat_cov: &SymmetricMatrix) -> Result<SymmetricMatrix> {
    let g = &grad.matrix;
    if g.ncols() != stat_cov.dim() {
        return Err(MeloError::DimensionMismatch(format!(
            "gradient has {} columns, covariance is {}x{}",
            g.ncols(),
            stat_cov.dim(),
            stat_cov.dim()
        )));
    }
    let mut v = SymmetricMatrix::symmetrized(g * stat_cov.matrix() * g.transpose()).into_matrix();
    let tol = 1e-12 * v.amax().max(1.0);
    for i in 0..v.nrows() {
        let d = v[(i, i)];
        if d < 0.0 {
            if d > -tol {
                log::warn!("delta variance diagonal {d:e} clipped to zero");
                v[(i, i)] = 0.0;
            } else {
                return Err(MeloError::NonPositiveDefinite(format!("delta variance diagonal {d:e}")));
            }
        }
    }
    Ok(SymmetricMatrix::symmetrized(v))
}

/// Sampled estimate with its delta-method covariance attached.
pub fn melo_with_variance<T: RationalTarget + ?Sized>(
    draws: &PosteriorDraws,
    target: &T,
    stat: &SufficientStatistic,
) -> Result<MeloEstimate> {
    let mut est = melo_from_draws(draws, target)?;
    let grad = gradient_given_estimate(draws, target, stat, &est.omega_star)?;
    est.freq_cov = Some(delta_variance(&grad, &stat.sigma_theta_hat)?);
    Ok(est)
}

/// Delta variance of the closed-form optimal-input MELO using its exact gradient in (β̂₁, β̂₂, s²).
pub fn optimal_input_closed_form_variance(post: &LinearModelPosterior, w_over_p: f64) -> Result<f64> {
    let grad = OptimalInputStats::from_posterior(post)?.gradient(w_over_p)?;
    let g = MeloGradient { matrix: DMatrix::from_row_slice(1, 3, &grad) };
    Ok(delta_variance(&g, &stat_covariance_linear(post))?.get(0, 0))
}

/// Log sampling densities of the sufficient statistics, up to additive constants in θ̂.
pub mod log_density {
    use nalgebra::DMatrix;

    use crate::linalg::SymmetricMatrix;

    /// s² ~ (σ²/dof)χ²_dof.
    pub fn scaled_chisq(s2: f64, sigma2: f64, dof: f64) -> f64 {
        (dof / 2.0 - 1.0) * s2.ln() - dof * s2 / (2.0 * sigma2)
    }

    /// β̂ ~ N(β, σ²(X'X)⁻¹).
    pub fn coefficient(beta_hat: &[f64], beta: &[f64], sigma2: f64, xtx: &DMatrix<f64>) -> f64 {
        let q = beta.len();
        let mut acc = 0.0;
        for i in 0..q {
            for j in 0..q {
                acc += (beta_hat[i] - beta[i]) * xtx[(i, j)] * (beta_hat[j] - beta[j]);
            }
        }
        -0.5 * acc / sigma2
    }

    /// S ~ W(dof, Σ), as a function of S.
    pub fn wishart(s: &SymmetricMatrix, sigma_inv: &DMatrix<f64>, dof: f64) -> f64 {
        let d = s.dim() as f64;
        let logdet = s.matrix().clone().determinant().ln();
        0.5 * (dof - d - 1.0) * logdet - 0.5 * (sigma_inv * s.matrix()).trace()
    }

    /// x ~ N(mean, cov) with precision `prec`, as a function of x.
    pub fn gaussian(x: &[f64], mean: &[f64], prec: &DMatrix<f64>) -> f64 {
        let n = x.len();
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                acc += (x[i] - mean[i]) * prec[(i, j)] * (x[j] - mean[j]);
            }
        }
        -0.5 * acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_gradient_returns_covariance() {
        let c = SymmetricMatrix::new(DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0])).unwrap();
        let g = MeloGradient { matrix: DMatrix::identity(2, 2) };
        assert_eq!(delta_variance(&g, &c).unwrap(), c);
    }

    #[test]
    fn scalar_delta_method() {
        let g = MeloGradient { matrix: DMatrix::from_element(1, 1, 3.0) };
        let v = delta_variance(&g, &SymmetricMatrix::from_diagonal(&[0.5])).unwrap();
        assert!((v.get(0, 0) - 4.5).abs() < 1e-15);
    }

    #[test]
    fn delta_dimension_mismatch() {
        let g = MeloGradient { matrix: DMatrix::zeros(1, 3) };
        assert!(delta_variance(&g, &SymmetricMatrix::identity(2)).is_err());
    }

    #[test]
    fn wishart_cross_term() {
        let s = SymmetricMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.6, 0.6, 2.0])).unwrap();
        let c = stat_covariance_wishart(&s, 29.0);
        // vech order: (0,0), (1,0), (1,1)
        assert!((c.get(0, 2) - 2.0 * 29.0 * 0.36).abs() < 1e-12);
        assert!((c.get(0, 0) - 2.0 * 29.0).abs() < 1e-12);
        assert!((c.get(1, 1) - 29.0 * (0.36 + 2.0)).abs() < 1e-12);
    }

    #[test]
    fn linear_score_zero_at_mode_and_scales() {
        let post = LinearModelPosterior::from_statistics(
            DVector::from_vec(vec![1.0, -2.0]),
            0.7,
            SymmetricMatrix::new(DMatrix::from_row_slice(2, 2, &[10.0, 1.0, 1.0, 5.0])).unwrap(),
            40,
        )
        .unwrap();
        let a = score_linear(&[1.0, -2.0, 0.9], &post);
        assert_eq!(&a[..2], &[0.0, 0.0]);
        let b1 = score_linear(&[1.5, -1.0, 0.9], &post);
        let b2 = score_linear(&[1.5, -1.0, 1.8], &post);
        assert!((b1[0] - 2.0 * b2[0]).abs() < 1e-12 && (b1[1] - 2.0 * b2[1]).abs() < 1e-12);
    }
}
