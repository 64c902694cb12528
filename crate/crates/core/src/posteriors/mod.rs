//! Conjugate posteriors and Gibbs samplers for the four model families.

mod linear;
mod mvn;
mod mvreg;
mod probit;

pub use linear::{fit_linear_model, LinearModelPosterior};
pub use mvn::{mvn_mean_cov_gibbs, MvnMeanCovPosterior};
pub use mvreg::{multivariate_regression_gibbs, vec_column_major, MultivariateRegressionPosterior};
pub use probit::{default_burn_in, probit_gibbs, ProbitPrior};
pub(crate) use probit::validate_binary as validate_binary_response;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{MeloError, Result};
use crate::linalg::SymmetricMatrix;

/// Latent-data statistics recorded at one probit Gibbs iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationStat {
    pub beta_hat: Vec<f64>,
    pub s2: f64,
}

/// S×L draw matrix stored row-major, one row per retained draw.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorDraws {
    values: Vec<f64>,
    n_params: usize,
    names: Vec<String>,
    burn_in: usize,
    iteration_stats: Option<Vec<IterationStat>>,
}

impl PosteriorDraws {
    pub fn new(names: Vec<String>, values: Vec<f64>, burn_in: usize) -> Result<Self> {
        let l = names.len();
        if l == 0 {
            return Err(MeloError::DimensionMismatch("draws need at least one parameter".into()));
        }
        if values.is_empty() || values.len() % l != 0 {
            return Err(MeloError::DimensionMismatch(format!(
                "{} values do not form rows of {l} parameters",
                values.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for n in &names {
            if !seen.insert(n.as_str()) {
                return Err(MeloError::InvalidParameter(format!("duplicate parameter label '{n}'")));
            }
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(MeloError::SamplerQuality(format!(
                "non-finite value in draw {} parameter '{}'",
                pos / l,
                names[pos % l]
            )));
        }
        Ok(Self { values, n_params: l, names, burn_in, iteration_stats: None })
    }

    /// Builds from a draw matrix with one row per draw.
    pub fn from_matrix(names: Vec<String>, m: &DMatrix<f64>, burn_in: usize) -> Result<Self> {
        if m.ncols() != names.len() {
            return Err(MeloError::DimensionMismatch(format!(
                "{} labels for {} columns",
                names.len(),
                m.ncols()
            )));
        }
        let mut values = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            values.extend(m.row(i).iter());
        }
        Self::new(names, values, burn_in)
    }

    /// The same parameter vector repeated `n` times.
    pub fn point_mass(names: Vec<String>, theta: &[f64], n: usize) -> Result<Self> {
        let values = theta.iter().copied().cycle().take(theta.len() * n).collect();
        Self::new(names, values, 0)
    }

    pub fn with_iteration_stats(mut self, stats: Vec<IterationStat>) -> Result<Self> {
        if stats.len() != self.n_draws() {
            return Err(MeloError::DimensionMismatch(format!(
                "{} iteration statistics for {} draws",
                stats.len(),
                self.n_draws()
            )));
        }
        self.iteration_stats = Some(stats);
        Ok(self)
    }

    pub fn n_draws(&self) -> usize {
        self.values.len() / self.n_params
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn burn_in(&self) -> usize {
        self.burn_in
    }

    pub fn iteration_stats(&self) -> Option<&[IterationStat]> {
        self.iteration_stats.as_deref()
    }

    pub fn draw(&self, s: usize) -> &[f64] {
        &self.values[s * self.n_params..(s + 1) * self.n_params]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.n_params)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn mean(&self) -> DVector<f64> {
        let mut m = DVector::zeros(self.n_params);
        for r in self.rows() {
            for (a, b) in m.iter_mut().zip(r) {
                *a += b;
            }
        }
        m / self.n_draws() as f64
    }

    /// Sample covariance with divisor S − 1.
    pub fn covariance(&self) -> SymmetricMatrix {
        let mean = self.mean();
        let l = self.n_params;
        let mut c = DMatrix::zeros(l, l);
        for r in self.rows() {
            let d = DVector::from_iterator(l, r.iter().zip(mean.iter()).map(|(a, b)| a - b));
            c += &d * d.transpose();
        }
        SymmetricMatrix::symmetrized(c / (self.n_draws().max(2) - 1) as f64)
    }
}

/// Least-squares fit of possibly several responses on a common design.
#[derive(Clone, Debug)]
pub(crate) struct OlsFit {
    pub coef: DMatrix<f64>,
    pub residuals: DMatrix<f64>,
    pub xtx: SymmetricMatrix,
    pub xtx_inv: SymmetricMatrix,
}

/// QR-based OLS; rank deficiency is judged on the singular values of R.
pub(crate) fn ols(y: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<OlsFit> {
    let (n, k) = x.shape();
    if y.nrows() != n {
        return Err(MeloError::DimensionMismatch(format!("{} responses for {n} design rows", y.nrows())));
    }
    if n < k || k == 0 {
        return Err(MeloError::InsufficientData { needed: k, got: n });
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(MeloError::InvalidParameter("non-finite data".into()));
    }
    let qr = x.clone().qr();
    let r = qr.r();
    let sv = r.clone().singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    if !(smin > 1e-10 * smax) {
        return Err(MeloError::SingularDesign);
    }
    let qty = qr.q().tr_mul(y);
    let coef = r.solve_upper_triangular(&qty).ok_or(MeloError::SingularDesign)?;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(k, k))
        .ok_or(MeloError::SingularDesign)?;
    let xtx_inv = SymmetricMatrix::symmetrized(&r_inv * r_inv.transpose());
    let xtx = SymmetricMatrix::symmetrized(x.tr_mul(x));
    let residuals = y - x * &coef;
    Ok(OlsFit { coef, residuals, xtx, xtx_inv })
}

pub(crate) fn indexed_names(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

pub(crate) fn vech_names(prefix: &str, d: usize) -> Vec<String> {
    crate::linalg::vech_indices(d)
        .into_iter()
        .map(|(i, j)| format!("{prefix}_{}_{}", i + 1, j + 1))
        .collect()
}
