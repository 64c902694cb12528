//! Normal linear regression under the diffuse prior p(β, σ) ∝ 1/σ.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use super::{indexed_names, ols, PosteriorDraws};
use crate::distributions::sample_mvt;
use crate::error::{MeloError, Result};
use crate::linalg::SymmetricMatrix;

/// Sufficient statistics (β̂, s², X'X) and the implied posterior:
/// β ~ t_v(β̂, s²(X'X)⁻¹) and σ² ~ v s²/χ²_v with v = N − q.
#[derive(Clone, Debug)]
pub struct LinearModelPosterior {
    pub beta_hat: DVector<f64>,
    pub s2: f64,
    pub n_obs: usize,
    pub xtx: SymmetricMatrix,
    pub xtx_inv: SymmetricMatrix,
    /// True when the residual sum of squares is zero (perfect fit).
    pub degenerate_residual: bool,
}

pub fn fit_linear_model(y: &DVector<f64>, x: &DMatrix<f64>) -> Result<LinearModelPosterior> {
    LinearModelPosterior::fit(y, x)
}

impl LinearModelPosterior {
    pub fn fit(y: &DVector<f64>, x: &DMatrix<f64>) -> Result<Self> {
        let (n, q) = x.shape();
        if n <= q + 2 {
            return Err(MeloError::InsufficientData { needed: q + 2, got: n });
        }
        let yy = DMatrix::from_column_slice(y.len(), 1, y.as_slice());
        let fit = ols(&yy, x)?;
        let rss = fit.residuals.norm_squared();
        let tss = y.norm_squared().max(f64::MIN_POSITIVE);
        let s2 = rss / (n - q) as f64;
        Ok(Self {
            beta_hat: fit.coef.column(0).into_owned(),
            s2,
            n_obs: n,
            xtx: fit.xtx,
            xtx_inv: fit.xtx_inv,
            degenerate_residual: rss <= 1e-24 * tss,
        })
    }

    /// Rebuilds the posterior from its sufficient statistics.
    pub fn from_statistics(beta_hat: DVector<f64>, s2: f64, xtx: SymmetricMatrix, n_obs: usize) -> Result<Self> {
        let q = beta_hat.len();
        if xtx.dim() != q {
            return Err(MeloError::DimensionMismatch(format!("X'X is {}x{}, β̂ has {q}", xtx.dim(), xtx.dim())));
        }
        if n_obs <= q {
            return Err(MeloError::InsufficientData { needed: q, got: n_obs });
        }
        if !(s2 >= 0.0) {
            return Err(MeloError::InvalidParameter(format!("s2 must be non-negative, got {s2}")));
        }
        let xtx_inv = xtx.inverse()?;
        Ok(Self { beta_hat, s2, n_obs, xtx, xtx_inv, degenerate_residual: s2 == 0.0 })
    }

    pub fn n_coef(&self) -> usize {
        self.beta_hat.len()
    }

    /// v = N − q.
    pub fn dof(&self) -> usize {
        self.n_obs - self.n_coef()
    }

    pub fn posterior_mean(&self) -> &DVector<f64> {
        &self.beta_hat
    }

    /// Cov(β | y) = (X'X)⁻¹ v s²/(v − 2).
    pub fn posterior_cov(&self) -> Result<SymmetricMatrix> {
        let v = self.dof() as f64;
        if v <= 2.0 {
            return Err(MeloError::MomentsUndefined { dof: v });
        }
        Ok(self.xtx_inv.scaled(self.s2 * v / (v - 2.0)))
    }

    /// Scale matrix s²(X'X)⁻¹ of the Student-t marginal.
    pub fn beta_scale(&self) -> SymmetricMatrix {
        self.xtx_inv.scaled(self.s2)
    }

    pub fn draw_beta<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<DMatrix<f64>> {
        sample_mvt(&self.beta_hat, &self.beta_scale(), self.dof() as f64, n, rng)
    }

    pub fn draw_sigma2<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        let v = self.dof() as f64;
        let chi = ChiSquared::new(v).expect("dof >= 1");
        (0..n).map(|_| v * self.s2 / chi.sample(rng)).collect()
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = indexed_names("beta", self.n_coef());
        names.push("sigma2".into());
        names
    }

    /// Joint draws of (β, σ²): σ² from the scaled inverse chi-square, then β | σ² ~ N(β̂, σ²(X'X)⁻¹).
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<PosteriorDraws> {
        let q = self.n_coef();
        let factor = self.xtx_inv.psd_factor()?;
        let sig = self.draw_sigma2(n, rng);
        let mut values = Vec::with_capacity(n * (q + 1));
        let mut z = DVector::zeros(q);
        for s2 in sig {
            for zi in z.iter_mut() {
                *zi = rng.sample(StandardNormal);
            }
            let b = &self.beta_hat + (&factor * &z) * s2.sqrt();
            values.extend(b.iter());
            values.push(s2);
        }
        PosteriorDraws::new(self.param_names(), values, 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RandomStream;

    #[test]
    fn perfect_fit_is_flagged() {
        let x = DMatrix::from_fn(10, 2, |i, j| if j == 0 { 1.0 } else { i as f64 });
        let y = &x * DVector::from_vec(vec![2.0, -0.5]);
        let p = fit_linear_model(&y, &x).unwrap();
        assert!((p.beta_hat[0] - 2.0).abs() < 1e-10 && (p.beta_hat[1] + 0.5).abs() < 1e-10);
        assert!(p.degenerate_residual);
    }

    #[test]
    fn too_few_rows() {
        let x = DMatrix::from_element(4, 2, 1.0);
        let y = DVector::zeros(4);
        assert!(matches!(fit_linear_model(&y, &x), Err(MeloError::InsufficientData { .. })));
    }

    #[test]
    fn moments_undefined_for_small_dof() {
        let p = LinearModelPosterior::from_statistics(
            DVector::from_vec(vec![1.0]),
            1.0,
            SymmetricMatrix::identity(1),
            3,
        )
        .unwrap();
        assert!(matches!(p.posterior_cov(), Err(MeloError::MomentsUndefined { .. })));
    }

    #[test]
    fn joint_sample_shape() {
        let p = LinearModelPosterior::from_statistics(
            DVector::from_vec(vec![1.0, 2.0]),
            0.5,
            SymmetricMatrix::identity(2),
            30,
        )
        .unwrap();
        let d = p.sample(200, &mut RandomStream::new(9).rng()).unwrap();
        assert_eq!(d.n_params(), 3);
        assert_eq!(d.names()[2], "sigma2");
        assert!(d.column(2).iter().all(|&v| v > 0.0));
    }
}
