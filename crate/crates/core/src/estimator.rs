//! The MELO engine: weighted posterior averages of rational targets, plus the
//! closed forms available for the optimal-input and structural problems.
//!
//! For a target with components g_k = l_k/m_k and weights h_k (default m_k²),
//! ω̂*_k = Σ_s h_k g_k / Σ_s h_k over posterior draws.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::distributions::{normal_cdf, normal_sf};
use crate::error::{MeloError, Result};
use crate::linalg::{KahanSum, SymmetricMatrix};
use crate::posteriors::{LinearModelPosterior, MultivariateRegressionPosterior, PosteriorDraws};

/// Vector target whose components are ratios l_k(θ)/m_k(θ).
pub trait RationalTarget: Sync {
    fn dim(&self) -> usize;

    fn labels(&self) -> Vec<String> {
        (1..=self.dim()).map(|k| format!("g{k}")).collect()
    }

    /// Writes numerators l_k(θ) and denominators m_k(θ).
    fn ratio_parts(&self, theta: &[f64], numer: &mut [f64], denom: &mut [f64]) -> Result<()>;

    /// Writes non-default weights h_k(θ) and returns true; the default is h_k = m_k².
    fn custom_weights(&self, _theta: &[f64], _h: &mut [f64]) -> bool {
        false
    }
}

/// Per-draw evaluation buffers: g, h and the product h·g.
pub(crate) struct TargetEval {
    pub numer: Vec<f64>,
    pub denom: Vec<f64>,
    pub h: Vec<f64>,
    pub hg: Vec<f64>,
}

impl TargetEval {
    pub fn new(k: usize) -> Self {
        Self { numer: vec![0.0; k], denom: vec![0.0; k], h: vec![0.0; k], hg: vec![0.0; k] }
    }

    /// h·g is formed as l·m·(h/m²), which is l·m under default weights and finite at m = 0.
    pub fn evaluate<T: RationalTarget + ?Sized>(&mut self, target: &T, theta: &[f64], draw: usize) -> Result<()> {
        target.ratio_parts(theta, &mut self.numer, &mut self.denom)?;
        if target.custom_weights(theta, &mut self.h) {
            for k in 0..self.h.len() {
                let (l, m) = (self.numer[k], self.denom[k]);
                self.hg[k] = l * m * (self.h[k] / (m * m));
            }
        } else {
            for k in 0..self.h.len() {
                let (l, m) = (self.numer[k], self.denom[k]);
                self.h[k] = m * m;
                self.hg[k] = l * m;
            }
        }
        for k in 0..self.h.len() {
            if !self.hg[k].is_finite() || !self.h[k].is_finite() || self.h[k] < 0.0 {
                return Err(MeloError::NonFiniteTarget { component: k, draw });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateMethod {
    Analytical,
    Sampled,
}

/// Point estimate with its normalized draw weights (rows sum to 1).
#[derive(Clone, Debug)]
pub struct MeloEstimate {
    pub omega_star: Vec<f64>,
    pub labels: Vec<String>,
    /// K rows of S weights.
    pub weights: Vec<Vec<f64>>,
    pub ess: Vec<f64>,
    pub freq_cov: Option<SymmetricMatrix>,
    pub method: EstimateMethod,
    /// Draws excluded by the portfolio positive-definiteness policy.
    pub skipped_draws: usize,
}

impl MeloEstimate {
    /// Frequentist standard deviations when a covariance is attached.
    pub fn std_errors(&self) -> Option<Vec<f64>> {
        self.freq_cov.as_ref().map(|c| (0..c.dim()).map(|k| c.get(k, k).sqrt()).collect())
    }

    /// Σ_s w_ks g_k(θ_s) over draws with positive weight.
    pub fn weighted_target_average<T: RationalTarget + ?Sized>(&self, draws: &PosteriorDraws, target: &T) -> Result<Vec<f64>> {
        let k = target.dim();
        let mut acc = vec![KahanSum::default(); k];
        let mut ev = TargetEval::new(k);
        for (s, theta) in draws.rows().enumerate() {
            ev.evaluate(target, theta, s)?;
            for c in 0..k {
                let w = self.weights[c][s];
                if w > 0.0 {
                    acc[c].add(w * ev.numer[c] / ev.denom[c]);
                }
            }
        }
        Ok(acc.iter().map(KahanSum::value).collect())
    }
}

/// Minimum draw count accepted by the sampled estimator.
pub const MIN_DRAWS: usize = 100;

/// Maximum share of portfolio draws that may be skipped as non-positive-definite.
pub const MAX_SKIP_FRACTION: f64 = 0.01;

pub fn melo_from_draws<T: RationalTarget + ?Sized>(draws: &PosteriorDraws, target: &T) -> Result<MeloEstimate> {
    accumulate(draws, target, false)
}

fn accumulate<T: RationalTarget + ?Sized>(draws: &PosteriorDraws, target: &T, skip_non_pd: bool) -> Result<MeloEstimate> {
    let n = draws.n_draws();
    if n < MIN_DRAWS {
        return Err(MeloError::InsufficientData { needed: MIN_DRAWS, got: n });
    }
    let k = target.dim();
    let mut sum_h = vec![KahanSum::default(); k];
    let mut sum_hg = vec![KahanSum::default(); k];
    let mut h_store = vec![vec![0.0; n]; k];
    let mut ev = TargetEval::new(k);
    let mut skipped = 0usize;
    for (s, theta) in draws.rows().enumerate() {
        match ev.evaluate(target, theta, s) {
            Ok(()) => {}
            Err(MeloError::NonPositiveDefinite(_)) if skip_non_pd => {
                skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        }
        for c in 0..k {
            sum_h[c].add(ev.h[c]);
            sum_hg[c].add(ev.hg[c]);
            h_store[c][s] = ev.h[c];
        }
    }
    if skip_non_pd && skipped as f64 > MAX_SKIP_FRACTION * n as f64 {
        return Err(MeloError::SamplerQuality(format!(
            "{skipped} of {n} covariance draws were not positive definite"
        )));
    }
    let mut omega = Vec::with_capacity(k);
    let mut ess = Vec::with_capacity(k);
    for c in 0..k {
        let total = sum_h[c].value();
        if !(total > 0.0) {
            return Err(MeloError::DegenerateWeights { component: c });
        }
        omega.push(sum_hg[c].value() / total);
        let mut sq = KahanSum::default();
        for w in h_store[c].iter_mut() {
            *w /= total;
            sq.add(*w * *w);
        }
        ess.push(1.0 / sq.value());
    }
    Ok(MeloEstimate {
        omega_star: omega,
        labels: target.labels(),
        weights: h_store,
        ess,
        freq_cov: None,
        method: EstimateMethod::Sampled,
        skipped_draws: skipped,
    })
}

/// Input level for a quadratic production function: g = (w/p − β₁)/(2β₂).
#[derive(Clone, Copy, Debug)]
pub struct OptimalInputTarget {
    pub w_over_p: f64,
}

impl RationalTarget for OptimalInputTarget {
    fn dim(&self) -> usize {
        1
    }
    fn labels(&self) -> Vec<String> {
        vec!["x_opt".into()]
    }
    fn ratio_parts(&self, theta: &[f64], numer: &mut [f64], denom: &mut [f64]) -> Result<()> {
        numer[0] = self.w_over_p - theta[0];
        denom[0] = 2.0 * theta[1];
        Ok(())
    }
}

/// Probit odds Φ(x'β)/(1 − Φ(x'β)).
#[derive(Clone, Debug)]
pub struct OddsRatioTarget {
    pub x: Vec<f64>,
}

fn linear_index(x: &[f64], beta: &[f64]) -> f64 {
    x.iter().zip(beta).map(|(a, b)| a * b).sum()
}

impl RationalTarget for OddsRatioTarget {
    fn dim(&self) -> usize {
        1
    }
    fn labels(&self) -> Vec<String> {
        vec!["odds".into()]
    }
    fn ratio_parts(&self, theta: &[f64], numer: &mut [f64], denom: &mut [f64]) -> Result<()> {
        let eta = linear_index(&self.x, &theta[..self.x.len()]);
        numer[0] = normal_cdf(eta);
        denom[0] = normal_sf(eta);
        Ok(())
    }
}

/// Probit probability Φ(x'β) with constant weight.
#[derive(Clone, Debug)]
pub struct ProbabilityTarget {
    pub x: Vec<f64>,
}

impl RationalTarget for ProbabilityTarget {
    fn dim(&self) -> usize {
        1
    }
    fn labels(&self) -> Vec<String> {
        vec!["probability".into()]
    }
    fn ratio_parts(&self, theta: &[f64], numer: &mut [f64], denom: &mut [f64]) -> Result<()> {
        numer[0] = normal_cdf(linear_index(&self.x, &theta[..self.x.len()]));
        denom[0] = 1.0;
        Ok(())
    }
}

/// Tangency weights Σ⁻¹μ/(1'Σ⁻¹μ) over θ = (μ, vech Σ); every component shares m = 1'Σ⁻¹μ.
#[derive(Clone, Copy, Debug)]
pub struct TangencyTarget {
    pub n_assets: usize,
}

impl RationalTarget for TangencyTarget {
    fn dim(&self) -> usize {
        self.n_assets
    }
    fn labels(&self) -> Vec<String> {
        (1..=self.n_assets).map(|k| format!("w{k}")).collect()
    }
    fn ratio_parts(&self, theta: &[f64], numer: &mut [f64], denom: &mut [f64]) -> Result<()> {
        let l = self.n_assets;
        let mu = DVector::from_column_slice(&theta[..l]);
        let sigma = SymmetricMatrix::from_vech(l, &theta[l..])?;
        let z = sigma.cholesky()?.solve(&mu);
        let c: f64 = z.iter().sum();
        numer.copy_from_slice(z.as_slice());
        denom.fill(c);
        Ok(())
    }
}

/// Structural coefficients (β₁, β₂, α₁, α₂) of the exactly identified supply–demand
/// system, from draws of (vec B, vech Σ) with B = [π γ] over regressors (1, z₁, z₂).
#[derive(Clone, Copy, Debug, Default)]
pub struct StructuralTarget;

/// Positions of (π₁, π₂, γ₁, γ₂) inside vec B.
pub const STRUCTURAL_INDICES: [usize; 4] = [1, 2, 4, 5];

impl RationalTarget for StructuralTarget {
    fn dim(&self) -> usize {
        4
    }
    fn labels(&self) -> Vec<String> {
        ["beta1", "beta2", "alpha1", "alpha2"].iter().map(|s| s.to_string()).collect()
    }
    fn ratio_parts(&self, theta: &[f64], numer: &mut [f64], denom: &mut [f64]) -> Result<()> {
        let [p1, p2, g1, g2] = STRUCTURAL_INDICES.map(|i| theta[i]);
        numer[0] = p2;
        denom[0] = g2;
        numer[1] = p1 * g2 - g1 * p2;
        denom[1] = g2;
        numer[2] = p1;
        denom[2] = g1;
        numer[3] = p2 * g1 - g2 * p1;
        denom[3] = g1;
        Ok(())
    }
}

/// g = θ_j with unit weight.
#[derive(Clone, Copy, Debug)]
pub struct LinearTarget {
    pub index: usize,
}

impl RationalTarget for LinearTarget {
    fn dim(&self) -> usize {
        1
    }
    fn ratio_parts(&self, theta: &[f64], numer: &mut [f64], denom: &mut [f64]) -> Result<()> {
        numer[0] = theta[self.index];
        denom[0] = 1.0;
        Ok(())
    }
}

/// g = c with unit weight.
#[derive(Clone, Copy, Debug)]
pub struct ConstantTarget {
    pub value: f64,
}

impl RationalTarget for ConstantTarget {
    fn dim(&self) -> usize {
        1
    }
    fn ratio_parts(&self, _theta: &[f64], numer: &mut [f64], denom: &mut [f64]) -> Result<()> {
        numer[0] = self.value;
        denom[0] = 1.0;
        Ok(())
    }
}

type PartsFn = dyn Fn(&[f64], &mut [f64], &mut [f64]) + Sync;
type WeightFn = dyn Fn(&[f64], &mut [f64]) + Sync;

/// Target defined by closures, with optional custom weights.
pub struct FnTarget {
    dim: usize,
    parts: Box<PartsFn>,
    weights: Option<Box<WeightFn>>,
}

impl FnTarget {
    pub fn new(dim: usize, parts: impl Fn(&[f64], &mut [f64], &mut [f64]) + Sync + 'static) -> Self {
        Self { dim, parts: Box::new(parts), weights: None }
    }

    pub fn with_weights(mut self, h: impl Fn(&[f64], &mut [f64]) + Sync + 'static) -> Self {
        self.weights = Some(Box::new(h));
        self
    }
}

impl RationalTarget for FnTarget {
    fn dim(&self) -> usize {
        self.dim
    }
    fn ratio_parts(&self, theta: &[f64], numer: &mut [f64], denom: &mut [f64]) -> Result<()> {
        (self.parts)(theta, numer, denom);
        Ok(())
    }
    fn custom_weights(&self, theta: &[f64], h: &mut [f64]) -> bool {
        match &self.weights {
            Some(f) => {
                f(theta, h);
                true
            }
            None => false,
        }
    }
}

pub fn melo_odds_ratio(draws: &PosteriorDraws, x: &[f64]) -> Result<MeloEstimate> {
    melo_from_draws(draws, &OddsRatioTarget { x: x.to_vec() })
}

pub fn melo_probability(draws: &PosteriorDraws, x: &[f64]) -> Result<MeloEstimate> {
    melo_from_draws(draws, &ProbabilityTarget { x: x.to_vec() })
}

/// Sampled tangency MELO over draws of (μ, vech Σ); non-positive-definite Σ draws are
/// skipped and more than 1% skipped is an error.
pub fn melo_tangency_portfolio(draws: &PosteriorDraws, n_assets: usize) -> Result<MeloEstimate> {
    let l = n_assets;
    if draws.n_params() != l + l * (l + 1) / 2 {
        return Err(MeloError::DimensionMismatch(format!(
            "draws have {} parameters, expected {} for {l} assets",
            draws.n_params(),
            l + l * (l + 1) / 2
        )));
    }
    accumulate(draws, &TangencyTarget { n_assets }, true)
}

/// Inputs of the optimal-input closed form: β̂ = (β̂₁, β̂₂), s², (X'X)⁻¹ and dof.
#[derive(Clone, Copy, Debug)]
pub struct OptimalInputStats {
    pub b1: f64,
    pub b2: f64,
    pub s2: f64,
    pub v11: f64,
    pub v12: f64,
    pub v22: f64,
    pub dof: f64,
}

impl OptimalInputStats {
    pub fn from_posterior(post: &LinearModelPosterior) -> Result<Self> {
        if post.n_coef() != 2 {
            return Err(MeloError::DimensionMismatch(format!("optimal input needs 2 coefficients, got {}", post.n_coef())));
        }
        let v = &post.xtx_inv;
        Ok(Self {
            b1: post.beta_hat[0],
            b2: post.beta_hat[1],
            s2: post.s2,
            v11: v.get(0, 0),
            v12: v.get(0, 1),
            v22: v.get(1, 1),
            dof: post.dof() as f64,
        })
    }

    fn inflation(&self) -> Result<f64> {
        if self.dof <= 2.0 {
            return Err(MeloError::MomentsUndefined { dof: self.dof });
        }
        Ok(self.dof / (self.dof - 2.0))
    }

    /// ω̂* = (a E β₂ − E β₁β₂)/(2 E β₂²) from Student-t moments, a = w/p.
    pub fn value(&self, a: f64) -> Result<f64> {
        let c = self.inflation()?;
        let e12 = c * self.s2 * self.v12 + self.b1 * self.b2;
        let e22 = c * self.s2 * self.v22 + self.b2 * self.b2;
        if !(e22 > 0.0) {
            return Err(MeloError::DegenerateWeights { component: 0 });
        }
        Ok((a * self.b2 - e12) / (2.0 * e22))
    }

    /// ∂ω̂*/∂(β̂₁, β̂₂, s²) holding (X'X)⁻¹ fixed.
    pub fn gradient(&self, a: f64) -> Result<[f64; 3]> {
        let c = self.inflation()?;
        let num = a * self.b2 - c * self.s2 * self.v12 - self.b1 * self.b2;
        let den = 2.0 * (c * self.s2 * self.v22 + self.b2 * self.b2);
        if !(den > 0.0) {
            return Err(MeloError::DegenerateWeights { component: 0 });
        }
        let d_b1 = -self.b2 / den;
        let d_b2 = (a - self.b1) / den - num * 4.0 * self.b2 / (den * den);
        let d_s2 = -c * self.v12 / den - num * 2.0 * c * self.v22 / (den * den);
        Ok([d_b1, d_b2, d_s2])
    }
}

pub fn melo_optimal_input_closed_form(post: &LinearModelPosterior, w_over_p: f64) -> Result<f64> {
    OptimalInputStats::from_posterior(post)?.value(w_over_p)
}

/// First and second posterior moments of (π₁, π₂, γ₁, γ₂).
#[derive(Clone, Debug, PartialEq)]
pub struct ReducedFormMoments {
    pub mean: [f64; 4],
    pub cov: [[f64; 4]; 4],
}

impl ReducedFormMoments {
    pub fn point_mass(pi1: f64, pi2: f64, gamma1: f64, gamma2: f64) -> Self {
        Self { mean: [pi1, pi2, gamma1, gamma2], cov: [[0.0; 4]; 4] }
    }

    fn from_blocks(post: &MultivariateRegressionPosterior, scale: [[f64; 2]; 2]) -> Result<Self> {
        if post.n_regressors() != 3 || post.n_equations() != 2 {
            return Err(MeloError::DimensionMismatch(format!(
                "structural moments need 3 regressors and 2 equations, got {} and {}",
                post.n_regressors(),
                post.n_equations()
            )));
        }
        let b = &post.b_hat;
        let mean = [b[(1, 0)], b[(2, 0)], b[(1, 1)], b[(2, 1)]];
        // (equation, regressor) of each moment slot
        let slots = [(0, 1), (0, 2), (1, 1), (1, 2)];
        let mut cov = [[0.0; 4]; 4];
        for (a, &(ea, ra)) in slots.iter().enumerate() {
            for (c, &(ec, rc)) in slots.iter().enumerate() {
                cov[a][c] = scale[ea][ec] * post.xtx_inv.get(ra, rc);
            }
        }
        Ok(Self { mean, cov })
    }

    /// Exact moments of the joint posterior: Cov(vec B) = S/(N − k − m − 1) ⊗ (X'X)⁻¹.
    pub fn from_posterior(post: &MultivariateRegressionPosterior) -> Result<Self> {
        let nu = post.dof() as f64 - post.n_equations() as f64 - 1.0;
        if nu <= 0.0 {
            return Err(MeloError::MomentsUndefined { dof: post.dof() as f64 });
        }
        let s = &post.s_matrix;
        let scale = [[s.get(0, 0) / nu, s.get(0, 1) / nu], [s.get(1, 0) / nu, s.get(1, 1) / nu]];
        Self::from_blocks(post, scale)
    }

    /// Each reduced-form equation as its own diffuse-prior regression, independent across
    /// equations: Cov = S_jj/(N − k − 2)·(X'X)⁻¹ within equation j, zero across.
    pub fn independent_equations(post: &MultivariateRegressionPosterior) -> Result<Self> {
        let v = post.dof() as f64;
        if v <= 2.0 {
            return Err(MeloError::MomentsUndefined { dof: v });
        }
        let s = &post.s_matrix;
        let scale = [[s.get(0, 0) / (v - 2.0), 0.0], [0.0, s.get(1, 1) / (v - 2.0)]];
        Self::from_blocks(post, scale)
    }

    fn second(&self, a: usize, b: usize) -> f64 {
        self.mean[a] * self.mean[b] + self.cov[a][b]
    }

    /// E(abc) for a posterior with vanishing central third moments.
    fn third(&self, a: usize, b: usize, c: usize) -> f64 {
        let m = &self.mean;
        m[a] * m[b] * m[c] + m[a] * self.cov[b][c] + m[b] * self.cov[a][c] + m[c] * self.cov[a][b]
    }
}

/// (β₁*, β₂*, α₁*, α₂*) as ratios of posterior moments under Q = diag(γ₂², γ₂², γ₁², γ₁²).
pub fn melo_structural_closed_form(m: &ReducedFormMoments) -> Result<[f64; 4]> {
    const P1: usize = 0;
    const P2: usize = 1;
    const G1: usize = 2;
    const G2: usize = 3;
    let e_g2g2 = m.second(G2, G2);
    let e_g1g1 = m.second(G1, G1);
    if !(e_g2g2 > 0.0) {
        return Err(MeloError::DegenerateWeights { component: 0 });
    }
    if !(e_g1g1 > 0.0) {
        return Err(MeloError::DegenerateWeights { component: 2 });
    }
    Ok([
        m.second(P2, G2) / e_g2g2,
        (m.third(P1, G2, G2) - m.third(G1, G2, P2)) / e_g2g2,
        m.second(P1, G1) / e_g1g1,
        (m.third(P2, G1, G1) - m.third(G1, G2, P1)) / e_g1g1,
    ])
}
