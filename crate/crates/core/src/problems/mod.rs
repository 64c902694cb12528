//! The four worked problems: data-generating processes, targets, truth values,
//! and the wiring from a dataset to each estimation method.

mod dgp;

pub use dgp::*;

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::baselines::{ils_exactly_identified, plugin_odds_ratio, plugin_optimal_input, plugin_tangency_portfolio, probit_mle};
use crate::distributions::{normal_cdf, normal_sf};
use crate::error::{MeloError, Result};
use crate::estimator::{
    melo_from_draws, melo_optimal_input_closed_form, melo_structural_closed_form, melo_tangency_portfolio,
    OptimalInputTarget, RationalTarget, ReducedFormMoments, StructuralTarget, TangencyTarget,
};
use crate::frequentist::{
    delta_variance, melo_gradient, melo_with_variance, optimal_input_closed_form_variance, ProbitStatAveraging,
    SufficientStatistic, MAX_PORTFOLIO_ASSETS,
};
use crate::posteriors::{
    fit_linear_model, probit_gibbs, LinearModelPosterior, MultivariateRegressionPosterior, MvnMeanCovPosterior,
    ProbitPrior,
};
use crate::rng::StreamRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    #[serde(alias = "optimal-input")]
    OptimalInput,
    #[serde(alias = "odds-ratio")]
    OddsRatio,
    Portfolio,
    Structural,
}

impl ProblemKind {
    pub const ALL: [ProblemKind; 4] = [Self::OptimalInput, Self::OddsRatio, Self::Portfolio, Self::Structural];

    pub fn name(self) -> &'static str {
        match self {
            Self::OptimalInput => "optimal-input",
            Self::OddsRatio => "odds-ratio",
            Self::Portfolio => "portfolio",
            Self::Structural => "structural",
        }
    }

    pub fn supported_methods(self) -> &'static [Method] {
        use Method::*;
        match self {
            Self::OptimalInput => &[Plugin, MeloAnalytical, MeloSampled],
            Self::OddsRatio => &[Plugin, MeloSampled],
            Self::Portfolio => &[Plugin, MeloSampled],
            Self::Structural => &[Ils2sls, MeloAnalytical, MeloSampled],
        }
    }

    /// Portfolio errors are pooled over the weight vector within a replication.
    pub fn pools_components(self) -> bool {
        self == Self::Portfolio
    }
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProblemKind {
    type Err = MeloError;
    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('_', "-");
        Self::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .ok_or_else(|| MeloError::Config(format!("unknown problem '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "plugin")]
    Plugin,
    #[serde(rename = "melo_analytical")]
    MeloAnalytical,
    #[serde(rename = "melo_sampled")]
    MeloSampled,
    #[serde(rename = "ils_2sls")]
    Ils2sls,
}

impl Method {
    pub const ALL: [Method; 4] = [Self::Plugin, Self::MeloAnalytical, Self::MeloSampled, Self::Ils2sls];

    pub fn name(self) -> &'static str {
        match self {
            Self::Plugin => "plugin",
            Self::MeloAnalytical => "melo_analytical",
            Self::MeloSampled => "melo_sampled",
            Self::Ils2sls => "ils_2sls",
        }
    }

    /// Whether the method draws random numbers.
    pub fn is_stochastic(self) -> bool {
        self == Self::MeloSampled
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = MeloError;
    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        Self::ALL
            .into_iter()
            .find(|m| m.name() == norm)
            .ok_or_else(|| MeloError::Config(format!("unknown method '{s}'")))
    }
}

/// Observed data for one problem.
#[derive(Clone, Debug)]
pub enum Dataset {
    /// Input levels and outputs of the production function.
    Production { input: Vec<f64>, output: Vec<f64> },
    /// Binary response and design (intercept included).
    Binary { y: Vec<f64>, x: DMatrix<f64> },
    /// T×L asset returns.
    Returns { returns: DMatrix<f64> },
    /// Y = [q p] and X = [1 z₁ z₂].
    System { y: DMatrix<f64>, x: DMatrix<f64> },
}

impl Dataset {
    pub fn n_obs(&self) -> usize {
        match self {
            Self::Production { input, .. } => input.len(),
            Self::Binary { y, .. } => y.len(),
            Self::Returns { returns } => returns.nrows(),
            Self::System { y, .. } => y.nrows(),
        }
    }
}

/// A problem with its truth, true parameters and target definition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemInstance {
    pub kind: ProblemKind,
    pub truth: Vec<f64>,
    /// Parameters in the layout of the problem's posterior draws.
    pub true_theta: Vec<f64>,
    /// Price ratio (optimal input only).
    pub w_over_p: f64,
    /// Covariate rows for the odds ratio.
    pub evaluation_points: Vec<Vec<f64>>,
}

impl ProblemInstance {
    /// Instance for user data, where no truth is known.
    pub fn for_estimation(kind: ProblemKind, n_targets: usize, w_over_p: f64, evaluation_points: Vec<Vec<f64>>) -> Self {
        Self { kind, truth: vec![f64::NAN; n_targets], true_theta: Vec::new(), w_over_p, evaluation_points }
    }

    pub fn target(&self) -> Box<dyn RationalTarget> {
        match self.kind {
            ProblemKind::OptimalInput => Box::new(OptimalInputTarget { w_over_p: self.w_over_p }),
            ProblemKind::OddsRatio => Box::new(OddsAtPoints { points: self.evaluation_points.clone() }),
            ProblemKind::Portfolio => Box::new(TangencyTarget { n_assets: self.truth.len() }),
            ProblemKind::Structural => Box::new(StructuralTarget),
        }
    }

    pub fn labels(&self) -> Vec<String> {
        self.target().labels()
    }
}

/// Odds Φ(x'β)/(1 − Φ(x'β)) at several covariate rows.
#[derive(Clone, Debug)]
pub struct OddsAtPoints {
    pub points: Vec<Vec<f64>>,
}

impl RationalTarget for OddsAtPoints {
    fn dim(&self) -> usize {
        self.points.len()
    }
    fn labels(&self) -> Vec<String> {
        self.points
            .iter()
            .map(|p| format!("odds@({})", p.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(",")))
            .collect()
    }
    fn ratio_parts(&self, theta: &[f64], numer: &mut [f64], denom: &mut [f64]) -> Result<()> {
        for (k, x) in self.points.iter().enumerate() {
            let eta: f64 = x.iter().zip(theta).map(|(a, b)| a * b).sum();
            numer[k] = normal_cdf(eta);
            denom[k] = normal_sf(eta);
        }
        Ok(())
    }
}

/// Controls for the posterior-based methods.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitSettings {
    /// Retained posterior draws.
    pub draws: usize,
    /// Discarded initial Gibbs iterations (probit only).
    pub burn_in: usize,
    /// Prior variance of each probit coefficient (zero prior mean).
    pub prior_variance: f64,
    pub with_std_errors: bool,
    pub probit_stats: ProbitStatAveraging,
}

impl Default for FitSettings {
    fn default() -> Self {
        Self {
            draws: 10_000,
            burn_in: 2_500,
            prior_variance: 10_000.0,
            with_std_errors: false,
            probit_stats: ProbitStatAveraging::Pooled,
        }
    }
}

/// One method's estimate; `std_errors` are frequentist (delta method).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodOutput {
    pub value: Vec<f64>,
    pub std_errors: Option<Vec<f64>>,
}

impl MethodOutput {
    pub fn finite(&self) -> Vec<bool> {
        self.value.iter().map(|v| v.is_finite()).collect()
    }
}

fn unsupported(kind: ProblemKind, method: Method) -> MeloError {
    MeloError::Config(format!("method '{method}' is not available for problem '{kind}'"))
}

fn diag_sd(c: &crate::linalg::SymmetricMatrix) -> Vec<f64> {
    (0..c.dim()).map(|k| c.get(k, k).max(0.0).sqrt()).collect()
}

/// Runs one method on a dataset.
pub fn fit_method(
    instance: &ProblemInstance,
    data: &Dataset,
    method: Method,
    settings: &FitSettings,
    rng: &mut StreamRng,
) -> Result<MethodOutput> {
    let kind = instance.kind;
    if !kind.supported_methods().contains(&method) {
        return Err(unsupported(kind, method));
    }
    match (kind, data) {
        (ProblemKind::OptimalInput, Dataset::Production { input, output }) => {
            let (y, x) = mean_deviated_quadratic(input, output);
            let post = fit_linear_model(&y, &x)?;
            fit_optimal_input(&post, instance.w_over_p, method, settings, rng)
        }
        (ProblemKind::OddsRatio, Dataset::Binary { y, x }) => fit_odds_ratio(instance, y, x, method, settings, rng),
        (ProblemKind::Portfolio, Dataset::Returns { returns }) => fit_portfolio(returns, method, settings, rng),
        (ProblemKind::Structural, Dataset::System { y, x }) => fit_structural(y, x, method, settings, rng),
        _ => Err(MeloError::Config(format!("dataset does not match problem '{kind}'"))),
    }
}

fn fit_optimal_input(
    post: &LinearModelPosterior,
    w_over_p: f64,
    method: Method,
    settings: &FitSettings,
    rng: &mut StreamRng,
) -> Result<MethodOutput> {
    match method {
        Method::Plugin => {
            let e = plugin_optimal_input(post, w_over_p);
            Ok(MethodOutput { std_errors: e.std_errors(), value: e.value })
        }
        Method::MeloAnalytical => {
            let v = melo_optimal_input_closed_form(post, w_over_p)?;
            let se = if settings.with_std_errors {
                Some(vec![optimal_input_closed_form_variance(post, w_over_p)?.sqrt()])
            } else {
                None
            };
            Ok(MethodOutput { value: vec![v], std_errors: se })
        }
        Method::MeloSampled => {
            let draws = post.sample(settings.draws, rng)?;
            let target = OptimalInputTarget { w_over_p };
            if settings.with_std_errors {
                let e = melo_with_variance(&draws, &target, &SufficientStatistic::linear(post))?;
                Ok(MethodOutput { std_errors: e.std_errors(), value: e.omega_star })
            } else {
                Ok(MethodOutput { value: melo_from_draws(&draws, &target)?.omega_star, std_errors: None })
            }
        }
        Method::Ils2sls => Err(unsupported(ProblemKind::OptimalInput, method)),
    }
}

fn fit_odds_ratio(
    instance: &ProblemInstance,
    y: &[f64],
    x: &DMatrix<f64>,
    method: Method,
    settings: &FitSettings,
    rng: &mut StreamRng,
) -> Result<MethodOutput> {
    let points = &instance.evaluation_points;
    if points.iter().any(|p| p.len() != x.ncols()) {
        return Err(MeloError::DimensionMismatch(format!(
            "evaluation points must have {} entries (intercept included)",
            x.ncols()
        )));
    }
    match method {
        Method::Plugin => {
            let mle = probit_mle(y, x)?;
            let mut value = Vec::with_capacity(points.len());
            let mut se = Vec::with_capacity(points.len());
            for p in points {
                let e = plugin_odds_ratio(mle.beta.as_slice(), p, y.len());
                value.push(e.value[0]);
                se.push(e.std_errors().map_or(f64::NAN, |s| s[0]));
            }
            Ok(MethodOutput { value, std_errors: settings.with_std_errors.then_some(se) })
        }
        Method::MeloSampled => {
            let prior = ProbitPrior::vague(x.ncols(), settings.prior_variance);
            let iters = settings.burn_in + settings.draws;
            let draws = probit_gibbs(y, x, &prior, iters, settings.burn_in, rng)?;
            let target = OddsAtPoints { points: points.clone() };
            if settings.with_std_errors {
                let stat = SufficientStatistic::probit(&draws, x, settings.probit_stats)?;
                let e = melo_with_variance(&draws, &target, &stat)?;
                Ok(MethodOutput { std_errors: e.std_errors(), value: e.omega_star })
            } else {
                Ok(MethodOutput { value: melo_from_draws(&draws, &target)?.omega_star, std_errors: None })
            }
        }
        _ => Err(unsupported(ProblemKind::OddsRatio, method)),
    }
}

fn fit_portfolio(returns: &DMatrix<f64>, method: Method, settings: &FitSettings, rng: &mut StreamRng) -> Result<MethodOutput> {
    let post = MvnMeanCovPosterior::from_returns(returns)?;
    match method {
        Method::Plugin => {
            let e = plugin_tangency_portfolio(&post.mu_hat, &post.sigma_hat())?;
            Ok(MethodOutput { value: e.value, std_errors: None })
        }
        Method::MeloSampled => {
            let l = post.dim();
            let draws = post.sample(settings.draws, rng)?;
            let mut e = melo_tangency_portfolio(&draws, l)?;
            if settings.with_std_errors && l <= MAX_PORTFOLIO_ASSETS {
                let stat = SufficientStatistic::portfolio(&post)?;
                let g = melo_gradient(&draws, &TangencyTarget { n_assets: l }, &stat)?;
                e.freq_cov = Some(delta_variance(&g, &stat.sigma_theta_hat)?);
            }
            Ok(MethodOutput { std_errors: e.freq_cov.as_ref().map(diag_sd), value: e.omega_star })
        }
        _ => Err(unsupported(ProblemKind::Portfolio, method)),
    }
}

fn fit_structural(
    y: &DMatrix<f64>,
    x: &DMatrix<f64>,
    method: Method,
    settings: &FitSettings,
    rng: &mut StreamRng,
) -> Result<MethodOutput> {
    match method {
        Method::Ils2sls => {
            let e = ils_exactly_identified(y, x)?;
            Ok(MethodOutput { value: e.estimate.value, std_errors: Some(e.std_errors) })
        }
        Method::MeloAnalytical => {
            let post = MultivariateRegressionPosterior::fit(y, x)?;
            let v = melo_structural_closed_form(&ReducedFormMoments::from_posterior(&post)?)?;
            Ok(MethodOutput { value: v.to_vec(), std_errors: None })
        }
        Method::MeloSampled => {
            let post = MultivariateRegressionPosterior::fit(y, x)?;
            let draws = post.sample(settings.draws, rng)?;
            if settings.with_std_errors {
                let e = melo_with_variance(&draws, &StructuralTarget, &SufficientStatistic::structural(&post)?)?;
                Ok(MethodOutput { std_errors: e.std_errors(), value: e.omega_star })
            } else {
                Ok(MethodOutput { value: melo_from_draws(&draws, &StructuralTarget)?.omega_star, std_errors: None })
            }
        }
        Method::Plugin => Err(unsupported(ProblemKind::Structural, method)),
    }
}

/// Builds the optimal-input design from raw input/output columns.
pub fn production_design(input: &[f64], output: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
    mean_deviated_quadratic(input, output)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RandomStream;

    #[test]
    fn names_parse() {
        for k in ProblemKind::ALL {
            assert_eq!(k.name().parse::<ProblemKind>().unwrap(), k);
        }
        assert_eq!("optimal_input".parse::<ProblemKind>().unwrap(), ProblemKind::OptimalInput);
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("bogus".parse::<Method>().is_err());
    }

    #[test]
    fn target_round_trip_at_truth() {
        let mut rng = RandomStream::new(5).rng();
        let cases = [
            gen_optimal_input(50, 1.0, INPUT_PRICE, OUTPUT_PRICE, &mut rng).unwrap().1,
            gen_odds_ratio(50, &default_odds_points(), &mut rng).unwrap().1,
            gen_portfolio(4, 30, &mut rng).unwrap().1,
            gen_structural(50, 1.0, &mut rng).unwrap().1,
        ];
        for inst in cases {
            let t = inst.target();
            let k = t.dim();
            let (mut l, mut m) = (vec![0.0; k], vec![0.0; k]);
            t.ratio_parts(&inst.true_theta, &mut l, &mut m).unwrap();
            for c in 0..k {
                let g = l[c] / m[c];
                assert!((g - inst.truth[c]).abs() <= 1e-12 * inst.truth[c].abs().max(1.0), "{:?}", inst.kind);
            }
        }
    }

    #[test]
    fn unsupported_method_is_config_error() {
        let mut rng = RandomStream::new(1).rng();
        let (d, inst) = gen_structural(50, 1.0, &mut rng).unwrap();
        let r = fit_method(&inst, &d, Method::Plugin, &FitSettings::default(), &mut rng);
        assert!(matches!(r, Err(MeloError::Config(_))));
    }
}
