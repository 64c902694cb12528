//! Frequentist competitors: plug-in estimators with delta-method variances,
//! probit maximum likelihood, and ILS/2SLS for the supply–demand system.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::distributions::{normal_cdf, normal_pdf, normal_sf};
use crate::error::{MeloError, Result};
use crate::linalg::SymmetricMatrix;
use crate::posteriors::{LinearModelPosterior, MultivariateRegressionPosterior};

/// Odds are reported as infinite when 1 − Φ(x'β̂) falls below this.
pub const ODDS_TAIL_CUTOFF: f64 = 1e-12;
/// Newton–Raphson stops once the score's ∞-norm is below this.
pub const MLE_GRADIENT_TOL: f64 = 1e-8;
pub const MLE_MAX_ITER: usize = 100;
/// Any coefficient beyond this magnitude signals separation.
pub const MLE_COEF_BOUND: f64 = 1e3;

/// Point value with optional delta-method covariance; `finite[k]` is false exactly where value[k] is ±∞ or NaN.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PluginEstimate {
    pub value: Vec<f64>,
    pub variance: Option<SymmetricMatrix>,
    pub finite: Vec<bool>,
}

impl PluginEstimate {
    fn new(value: Vec<f64>, variance: Option<SymmetricMatrix>) -> Self {
        let finite = value.iter().map(|v| v.is_finite()).collect();
        Self { value, variance, finite }
    }

    fn all_non_finite(k: usize) -> Self {
        Self { value: vec![f64::INFINITY; k], variance: None, finite: vec![false; k] }
    }

    pub fn all_finite(&self) -> bool {
        self.finite.iter().all(|&f| f)
    }

    pub fn std_errors(&self) -> Option<Vec<f64>> {
        self.variance.as_ref().map(|c| (0..c.dim()).map(|k| c.get(k, k).sqrt()).collect())
    }
}

/// (w/p − β̂₁)/(2β̂₂) with variance (Var β̂₁ + 4x²Var β̂₂ + 4x Cov(β̂₁, β̂₂))/(4β̂₂²).
pub fn plugin_optimal_input(post: &LinearModelPosterior, w_over_p: f64) -> PluginEstimate {
    let (b1, b2) = (post.beta_hat[0], post.beta_hat[1]);
    let x = (w_over_p - b1) / (2.0 * b2);
    if !x.is_finite() {
        return PluginEstimate::all_non_finite(1);
    }
    let v = post.xtx_inv.scaled(post.s2);
    let var = (v.get(0, 0) + 4.0 * x * x * v.get(1, 1) + 4.0 * x * v.get(0, 1)) / (4.0 * b2 * b2);
    PluginEstimate::new(vec![x], Some(SymmetricMatrix::from_diagonal(&[var.max(0.0)])))
}

/// Probit maximum-likelihood fit.
#[derive(Clone, Debug)]
pub struct ProbitMle {
    pub beta: DVector<f64>,
    /// Inverse observed information.
    pub cov: SymmetricMatrix,
    pub iterations: usize,
    pub log_likelihood: f64,
    pub gradient_norm: f64,
}

/// ln Φ(z), using the Mills-ratio asymptote far in the lower tail.
fn log_cdf(z: f64) -> f64 {
    if z > -30.0 {
        normal_cdf(z).ln()
    } else {
        let z2 = z * z;
        -0.5 * z2 - 0.5 * (2.0 * std::f64::consts::PI).ln() - (-z).ln() + (1.0 - 1.0 / z2 + 3.0 / (z2 * z2)).ln()
    }
}

/// Inverse Mills ratio φ(z)/Φ(z).
fn mills(z: f64) -> f64 {
    if z > -30.0 {
        normal_pdf(z) / normal_cdf(z)
    } else {
        let z2 = z * z;
        -z / (1.0 - 1.0 / z2 + 3.0 / (z2 * z2))
    }
}

fn probit_loglik(y: &[f64], eta: &DVector<f64>) -> f64 {
    y.iter().zip(eta.iter()).map(|(&yi, &e)| if yi == 1.0 { log_cdf(e) } else { log_cdf(-e) }).sum()
}

/// Score and observed information at β.
fn probit_derivatives(y: &[f64], x: &DMatrix<f64>, eta: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let q = x.ncols();
    let mut grad = DVector::zeros(q);
    let mut info = DMatrix::zeros(q, q);
    for i in 0..x.nrows() {
        let e = eta[i];
        let (g, w) = if y[i] == 1.0 {
            let l = mills(e);
            (l, l * (l + e))
        } else {
            let l = mills(-e);
            (-l, l * (l - e))
        };
        let row = x.row(i);
        for a in 0..q {
            grad[a] += g * row[a];
            for b in 0..=a {
                info[(a, b)] += w * row[a] * row[b];
            }
        }
    }
    for a in 0..q {
        for b in 0..a {
            info[(b, a)] = info[(a, b)];
        }
    }
    (grad, info)
}

/// Newton–Raphson with step halving from β = 0.
pub fn probit_mle(y: &[f64], x: &DMatrix<f64>) -> Result<ProbitMle> {
    let (n, q) = x.shape();
    if y.len() != n {
        return Err(MeloError::DimensionMismatch(format!("{} responses for {n} design rows", y.len())));
    }
    crate::posteriors::validate_binary_response(y)?;
    let mut beta = DVector::zeros(q);
    let mut eta = x * &beta;
    let mut ll = probit_loglik(y, &eta);
    let mut iterations = 0;
    loop {
        let (grad, info) = probit_derivatives(y, x, &eta);
        let gnorm = grad.amax();
        if gnorm < MLE_GRADIENT_TOL || iterations >= MLE_MAX_ITER {
            check_not_separated(y, &eta)?;
            let cov = SymmetricMatrix::symmetrized(info).inverse()?;
            return Ok(ProbitMle { beta, cov, iterations, log_likelihood: ll, gradient_norm: gnorm });
        }
        let chol = SymmetricMatrix::symmetrized(info)
            .cholesky()
            .map_err(|_| MeloError::CompleteSeparation("information matrix became singular".into()))?;
        let step = chol.solve(&grad);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand = &beta + &step * t;
            let cand_eta = x * &cand;
            let cand_ll = probit_loglik(y, &cand_eta);
            if cand_ll.is_finite() && cand_ll >= ll - 1e-12 * ll.abs() {
                beta = cand;
                eta = cand_eta;
                ll = cand_ll;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        iterations += 1;
        if beta.amax() > MLE_COEF_BOUND {
            return Err(MeloError::CompleteSeparation(format!("coefficient exceeded {MLE_COEF_BOUND}")));
        }
        if !accepted {
            let (grad, info) = probit_derivatives(y, x, &eta);
            let cov = SymmetricMatrix::symmetrized(info).inverse()?;
            return Ok(ProbitMle { beta, cov, iterations, log_likelihood: ll, gradient_norm: grad.amax() });
        }
    }
}

/// Rejects fits that classify every observation with certainty.
fn check_not_separated(y: &[f64], eta: &DVector<f64>) -> Result<()> {
    let perfect = y.iter().zip(eta.iter()).all(|(&yi, &e)| {
        let miss = if yi == 1.0 { normal_sf(e) } else { normal_cdf(e) };
        miss < 1e-8
    });
    if perfect {
        return Err(MeloError::CompleteSeparation("fitted probabilities are all 0 or 1".into()));
    }
    Ok(())
}

/// Φ/(1 − Φ) at x'β̂ with variance Φ/(N(1 − Φ)³).
pub fn plugin_odds_ratio(beta_hat: &[f64], x: &[f64], n_obs: usize) -> PluginEstimate {
    let eta: f64 = beta_hat.iter().zip(x).map(|(b, v)| b * v).sum();
    let p = normal_cdf(eta);
    let tail = normal_sf(eta);
    if tail < ODDS_TAIL_CUTOFF {
        return PluginEstimate::all_non_finite(1);
    }
    let var = p / (n_obs as f64 * tail.powi(3));
    PluginEstimate::new(vec![p / tail], Some(SymmetricMatrix::from_diagonal(&[var])))
}

/// Σ̂⁻¹μ̂ normalized to sum to one.
pub fn plugin_tangency_portfolio(mu_hat: &DVector<f64>, sigma_hat: &SymmetricMatrix) -> Result<PluginEstimate> {
    let l = mu_hat.len();
    if sigma_hat.dim() != l {
        return Err(MeloError::DimensionMismatch(format!("Σ̂ is {0}x{0}, μ̂ has {l}", sigma_hat.dim())));
    }
    let z = sigma_hat.cholesky()?.solve(mu_hat);
    let c: f64 = z.iter().sum();
    if !(c.abs() >= 1e-12 * z.lp_norm(1)) {
        return Ok(PluginEstimate::all_non_finite(l));
    }
    Ok(PluginEstimate::new(z.iter().map(|v| v / c).collect(), None))
}

/// (β₁, β₂, α₁, α₂) from reduced-form slopes (π₁, π₂, γ₁, γ₂).
pub fn structural_from_reduced_form(pi1: f64, pi2: f64, gamma1: f64, gamma2: f64) -> [f64; 4] {
    [pi2 / gamma2, pi1 - gamma1 * pi2 / gamma2, pi1 / gamma1, pi2 - gamma2 * pi1 / gamma1]
}

/// Instrumental-variables fit with homoskedastic covariance σ̂²(Ŵ'Ŵ)⁻¹, σ̂² = RSS/(N − k).
#[derive(Clone, Debug)]
pub struct TslsFit {
    pub coef: DVector<f64>,
    pub cov: SymmetricMatrix,
    pub sigma2: f64,
}

pub fn two_stage_least_squares(y: &DVector<f64>, w: &DMatrix<f64>, z: &DMatrix<f64>) -> Result<TslsFit> {
    let (n, k) = w.shape();
    if z.nrows() != n || y.len() != n {
        return Err(MeloError::DimensionMismatch("2SLS rows disagree".into()));
    }
    if z.ncols() < k {
        return Err(MeloError::InvalidParameter("fewer instruments than regressors".into()));
    }
    if n <= k {
        return Err(MeloError::InsufficientData { needed: k, got: n });
    }
    let ztz_inv = SymmetricMatrix::symmetrized(z.tr_mul(z)).inverse()?;
    let ztw = z.tr_mul(w);
    let a = SymmetricMatrix::symmetrized(ztw.transpose() * ztz_inv.matrix() * &ztw);
    let a_inv = a.cholesky_strict().ok_or(MeloError::SingularDesign)?.inverse();
    let coef = &a_inv * (ztw.transpose() * ztz_inv.matrix() * z.tr_mul(y));
    let resid = y - w * &coef;
    let sigma2 = resid.norm_squared() / (n - k) as f64;
    Ok(TslsFit { coef, cov: SymmetricMatrix::symmetrized(a_inv * sigma2), sigma2 })
}

/// ILS structural estimates with 2SLS standard errors.
#[derive(Clone, Debug)]
pub struct IlsEstimate {
    pub estimate: PluginEstimate,
    pub std_errors: Vec<f64>,
}

/// Exactly identified supply–demand system. `y` = [q p], `x` = [1 z₁ z₂]; demand
/// excludes z₂ and supply excludes z₁.
pub fn ils_exactly_identified(y: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<IlsEstimate> {
    if y.ncols() != 2 || x.ncols() != 3 {
        return Err(MeloError::DimensionMismatch(format!(
            "structural system needs Y with 2 columns and X with 3, got {} and {}",
            y.ncols(),
            x.ncols()
        )));
    }
    let rf = MultivariateRegressionPosterior::fit(y, x)?;
    let b = &rf.b_hat;
    let value = structural_from_reduced_form(b[(1, 0)], b[(2, 0)], b[(1, 1)], b[(2, 1)]);
    let mut estimate = PluginEstimate::new(value.to_vec(), None);
    if !estimate.all_finite() {
        estimate.finite = value.iter().map(|v| v.is_finite()).collect();
        return Ok(IlsEstimate { estimate, std_errors: vec![f64::NAN; 4] });
    }
    let n = x.nrows();
    let q = y.column(0).into_owned();
    let p = y.column(1);
    let w_d = DMatrix::from_fn(n, 3, |i, j| [1.0, p[i], x[(i, 1)]][j]);
    let w_s = DMatrix::from_fn(n, 3, |i, j| [1.0, p[i], x[(i, 2)]][j]);
    let se = match (two_stage_least_squares(&q, &w_d, x), two_stage_least_squares(&q, &w_s, x)) {
        (Ok(d), Ok(s)) => {
            let sd = |f: &TslsFit, i: usize| f.cov.get(i, i).sqrt();
            vec![sd(&d, 1), sd(&d, 2), sd(&s, 1), sd(&s, 2)]
        }
        _ => vec![f64::NAN; 4],
    };
    let cov = SymmetricMatrix::from_diagonal(&se.iter().map(|s| s * s).collect::<Vec<_>>());
    estimate.variance = se.iter().all(|s| s.is_finite()).then_some(cov);
    Ok(IlsEstimate { estimate, std_errors: se })
}
