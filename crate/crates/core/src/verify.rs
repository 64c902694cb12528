//! Self-checks against independent oracles: finite-difference scores and
//! gradients, Monte-Carlo Wishart moments, point-mass reductions to plug-in
//! estimators, closed-form versus sampled MELO, and large-sample consistency.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::baselines::{
    ils_exactly_identified, plugin_odds_ratio, plugin_optimal_input, plugin_tangency_portfolio, probit_mle,
    structural_from_reduced_form,
};
use crate::distributions::MvnSampler;
use crate::error::Result;
use crate::estimator::{
    melo_from_draws, melo_optimal_input_closed_form, melo_structural_closed_form, OptimalInputStats,
    OptimalInputTarget, ReducedFormMoments, StructuralTarget, TangencyTarget,
};
use crate::frequentist::{
    log_density, melo_gradient, score_linear, score_portfolio, score_probit_per_iteration, score_structural,
    stat_covariance_linear, stat_covariance_wishart, SufficientStatistic,
};
use crate::linalg::{vech_indices, SymmetricMatrix};
use crate::posteriors::{
    fit_linear_model, IterationStat, LinearModelPosterior, MultivariateRegressionPosterior, MvnMeanCovPosterior,
    PosteriorDraws,
};
use crate::problems::{
    default_odds_points, gen_odds_ratio, gen_optimal_input, gen_portfolio, gen_structural, mean_deviated_quadratic,
    Dataset, OddsAtPoints, INPUT_PRICE, OUTPUT_PRICE,
};
use crate::rng::{RandomStream, StreamRng};

/// Outcome of one oracle comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// Largest observed discrepancy in the check's own units.
    pub discrepancy: f64,
    pub tolerance: f64,
}

impl Check {
    fn new(name: impl Into<String>, discrepancy: f64, tolerance: f64) -> Self {
        Self { name: name.into(), passed: discrepancy <= tolerance, discrepancy, tolerance }
    }
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {}: discrepancy {:.3e} (tolerance {:.1e})",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.discrepancy,
            self.tolerance
        )
    }
}

pub const SCORE_FD_TOL: f64 = 1e-5;
pub const GRADIENT_TOL: f64 = 0.01;
pub const WISHART_TOL: f64 = 0.03;
pub const POINT_MASS_TOL: f64 = 1e-8;
pub const CONSISTENCY_RATE: f64 = 0.95;

fn rng(seed: u64, tag: u64) -> StreamRng {
    RandomStream::new(seed).derive(&[tag]).rng()
}

/// Central difference of `f` in coordinate j with step relative to |x_j|.
fn central_difference(f: &dyn Fn(&[f64]) -> f64, x: &[f64], j: usize) -> f64 {
    let h = 1e-5 * x[j].abs().max(1e-3);
    let mut up = x.to_vec();
    let mut dn = x.to_vec();
    up[j] += h;
    dn[j] -= h;
    (f(&up) - f(&dn)) / (2.0 * h)
}

/// max_j |fd_j − a_j| / max(|a_j|, 1e-6·‖a‖∞).
fn score_discrepancy(analytic: &[f64], f: &dyn Fn(&[f64]) -> f64, at: &[f64]) -> f64 {
    let norm = analytic.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    (0..at.len())
        .map(|j| {
            let fd = central_difference(f, at, j);
            (fd - analytic[j]).abs() / analytic[j].abs().max(1e-6 * norm).max(f64::MIN_POSITIVE)
        })
        .fold(0.0, f64::max)
}

fn linear_posterior(seed: u64) -> Result<LinearModelPosterior> {
    let (data, _) = gen_optimal_input(60, 1.0, INPUT_PRICE, OUTPUT_PRICE, &mut rng(seed, 1))?;
    let Dataset::Production { input, output } = data else { unreachable!("production dataset") };
    let (y, x) = mean_deviated_quadratic(&input, &output);
    fit_linear_model(&y, &x)
}

fn structural_posterior(n: usize, sn: f64, r: &mut StreamRng) -> Result<MultivariateRegressionPosterior> {
    let (data, _) = gen_structural(n, sn, r)?;
    let Dataset::System { y, x } = data else { unreachable!("system dataset") };
    MultivariateRegressionPosterior::fit(&y, &x)
}

fn portfolio_posterior(seed: u64) -> Result<MvnMeanCovPosterior> {
    let (data, _) = gen_portfolio(3, 40, &mut rng(seed, 3))?;
    let Dataset::Returns { returns } = data else { unreachable!("returns dataset") };
    MvnMeanCovPosterior::from_returns(&returns)
}

/// Splits (vech-style) statistic vectors back into a symmetric matrix.
fn sym_from(d: usize, v: &[f64]) -> SymmetricMatrix {
    SymmetricMatrix::from_vech(d, v).expect("vech length matches")
}

/// Score of every model against finite differences of its log sampling density.
pub fn check_scores(seed: u64) -> Result<Vec<Check>> {
    let mut out = Vec::new();

    let post = linear_posterior(seed)?;
    let theta = post.sample(1, &mut rng(seed, 10))?.draw(0).to_vec();
    let (beta, sigma2, q) = (&theta[..2], theta[2], 2);
    let xtx = post.xtx.matrix().clone();
    let dof = post.dof() as f64;
    let f = |stat: &[f64]| {
        log_density::coefficient(&stat[..q], beta, sigma2, &xtx) + log_density::scaled_chisq(stat[q], sigma2, dof)
    };
    let mut at: Vec<f64> = post.beta_hat.iter().copied().collect();
    at.push(post.s2);
    out.push(Check::new("score/linear", score_discrepancy(&score_linear(&theta, &post), &f, &at), SCORE_FD_TOL));

    let stat = IterationStat { beta_hat: vec![0.3, -0.7, 1.1], s2: 0.9 };
    let xtx3 = SymmetricMatrix::new(DMatrix::from_row_slice(3, 3, &[40.0, 3.0, -2.0, 3.0, 35.0, 1.5, -2.0, 1.5, 45.0]))?;
    let beta3 = [0.5, -0.6, 1.3];
    let n_obs = 40;
    let f = |s: &[f64]| {
        log_density::coefficient(&s[..3], &beta3, 1.0, xtx3.matrix())
            + log_density::scaled_chisq(s[3], 1.0, (n_obs - 3) as f64)
    };
    let at = [stat.beta_hat.clone(), vec![stat.s2]].concat();
    let a = score_probit_per_iteration(&beta3, &stat, &xtx3, n_obs);
    out.push(Check::new("score/probit", score_discrepancy(&a, &f, &at), SCORE_FD_TOL));

    let post = portfolio_posterior(seed)?;
    let l = post.dim();
    let theta = post.sample(1, &mut rng(seed, 11))?.draw(0).to_vec();
    let sigma = sym_from(l, &theta[l..]);
    let prec = sigma.inverse()?.into_matrix();
    let t = post.t as f64;
    let mean_prec = &prec * t;
    let mu = theta[..l].to_vec();
    let f = |s: &[f64]| {
        log_density::gaussian(&s[..l], &mu, &mean_prec) + log_density::wishart(&sym_from(l, &s[l..]), &prec, t - 1.0)
    };
    let at = [post.mu_hat.as_slice().to_vec(), post.s_matrix.vech()].concat();
    out.push(Check::new("score/portfolio", score_discrepancy(&score_portfolio(&theta, &post)?, &f, &at), SCORE_FD_TOL));

    let post = structural_posterior(40, 1.0, &mut rng(seed, 4))?;
    let (k, m) = post.b_hat.shape();
    let theta = post.sample(1, &mut rng(seed, 12))?.draw(0).to_vec();
    let sigma = sym_from(m, &theta[k * m..]);
    let sigma_inv = sigma.inverse()?.into_matrix();
    let coef_prec = sigma_inv.kronecker(post.xtx.matrix());
    let vec_b = theta[..k * m].to_vec();
    let dof = post.dof() as f64;
    let f = |s: &[f64]| {
        log_density::gaussian(&s[..k * m], &vec_b, &coef_prec)
            + log_density::wishart(&sym_from(m, &s[k * m..]), &sigma_inv, dof)
    };
    let at = [post.vec_b_hat().as_slice().to_vec(), post.s_matrix.vech()].concat();
    out.push(Check::new("score/structural", score_discrepancy(&score_structural(&theta, &post)?, &f, &at), SCORE_FD_TOL));
    Ok(out)
}

/// Relative error of `a` against `b`.
fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

/// Finite differences of the closed-form optimal-input MELO in (β̂₁, β̂₂, s²).
pub fn optimal_input_fd_gradient(post: &LinearModelPosterior, a: f64) -> Result<[f64; 3]> {
    let base = [post.beta_hat[0], post.beta_hat[1], post.s2];
    let eval = |v: &[f64]| -> f64 {
        let p = LinearModelPosterior::from_statistics(
            DVector::from_vec(vec![v[0], v[1]]),
            v[2],
            post.xtx.clone(),
            post.n_obs,
        )
        .expect("perturbed statistics stay valid");
        melo_optimal_input_closed_form(&p, a).expect("closed form defined")
    };
    let mut g = [0.0; 3];
    for (j, gj) in g.iter_mut().enumerate() {
        *gj = central_difference(&eval, &base, j);
    }
    Ok(g)
}

/// The draw-based gradient of the optimal-input MELO against finite differences of
/// the closed form: each coefficient entry, and the implied delta standard error.
pub fn check_gradient(seed: u64, draws: usize) -> Result<Vec<Check>> {
    let post = linear_posterior(seed)?;
    let a = INPUT_PRICE / OUTPUT_PRICE;
    let fd = optimal_input_fd_gradient(&post, a)?;
    let analytic = OptimalInputStats::from_posterior(&post)?.gradient(a)?;
    let d = post.sample(draws, &mut rng(seed, 20))?;
    let g = melo_gradient(&d, &OptimalInputTarget { w_over_p: a }, &SufficientStatistic::linear(&post))?;
    let sampled: Vec<f64> = g.matrix.row(0).iter().copied().collect();
    let cov = stat_covariance_linear(&post);
    let sd = |v: &[f64]| {
        let g = DVector::from_column_slice(v);
        (g.transpose() * cov.matrix() * &g)[(0, 0)].sqrt()
    };
    Ok(vec![
        Check::new(
            "gradient/closed-form-vs-fd",
            (0..3).map(|j| rel(analytic[j], fd[j])).fold(0.0, f64::max),
            1e-5,
        ),
        Check::new("gradient/sampled-vs-fd/beta1", rel(sampled[0], fd[0]), GRADIENT_TOL),
        Check::new("gradient/sampled-vs-fd/beta2", rel(sampled[1], fd[1]), GRADIENT_TOL),
        Check::new("gradient/sampled-vs-fd/delta-sd", rel(sd(&sampled), sd(&fd)), GRADIENT_TOL),
    ])
}

/// Wishart covariance of vech S, assembled analytically, against Monte Carlo.
///
/// Discrepancy is |Ĉ_ab − C_ab| / √(C_aa C_bb) over all entries.
pub fn check_wishart_covariance(seed: u64, samples: usize) -> Result<Check> {
    let sigma = SymmetricMatrix::new(DMatrix::from_row_slice(3, 3, &[2.0, 0.6, -0.4, 0.6, 1.0, 0.3, -0.4, 0.3, 1.5]))?;
    let dof = 12usize;
    let c = stat_covariance_wishart(&sigma, dof as f64);
    let sampler = MvnSampler::new(DVector::zeros(3), &sigma)?;
    let mut r = rng(seed, 30);
    let idx = vech_indices(3);
    let p = idx.len();
    let mut rows = DMatrix::zeros(samples, p);
    for s in 0..samples {
        let mut w = DMatrix::<f64>::zeros(3, 3);
        for _ in 0..dof {
            let z = sampler.sample(&mut r);
            w += &z * z.transpose();
        }
        for (a, &(i, j)) in idx.iter().enumerate() {
            rows[(s, a)] = w[(i, j)];
        }
    }
    let mc = PosteriorDraws::from_matrix((0..p).map(|a| format!("s{a}")).collect(), &rows, 0)?.covariance();
    let mut worst = 0.0_f64;
    for a in 0..p {
        for b in 0..p {
            let scale = (c.get(a, a) * c.get(b, b)).sqrt();
            worst = worst.max((mc.get(a, b) - c.get(a, b)).abs() / scale);
        }
    }
    Ok(Check::new("wishart/covariance-vs-monte-carlo", worst, WISHART_TOL))
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / y.abs().max(1.0)).fold(0.0, f64::max)
}

/// A point-mass posterior at the estimate must give the plug-in value.
pub fn check_point_mass(seed: u64) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let a = INPUT_PRICE / OUTPUT_PRICE;

    let post = linear_posterior(seed)?;
    let theta = [post.beta_hat[0], post.beta_hat[1], post.s2];
    let d = PosteriorDraws::point_mass(post.param_names(), &theta, 200)?;
    let melo = melo_from_draws(&d, &OptimalInputTarget { w_over_p: a })?.omega_star;
    out.push(Check::new("point-mass/optimal-input", max_abs_diff(&melo, &plugin_optimal_input(&post, a).value), POINT_MASS_TOL));

    let (data, inst) = gen_odds_ratio(300, &default_odds_points(), &mut rng(seed, 40))?;
    let Dataset::Binary { y, x } = data else { unreachable!("binary dataset") };
    let mle = probit_mle(&y, &x)?;
    let names = (1..=3).map(|i| format!("beta{i}")).collect();
    let d = PosteriorDraws::point_mass(names, mle.beta.as_slice(), 200)?;
    let melo = melo_from_draws(&d, &OddsAtPoints { points: inst.evaluation_points.clone() })?.omega_star;
    let plug: Vec<f64> =
        inst.evaluation_points.iter().map(|p| plugin_odds_ratio(mle.beta.as_slice(), p, y.len()).value[0]).collect();
    out.push(Check::new("point-mass/odds-ratio", max_abs_diff(&melo, &plug), POINT_MASS_TOL));

    let post = portfolio_posterior(seed)?;
    let sigma_hat = post.sigma_hat();
    let theta = [post.mu_hat.as_slice().to_vec(), sigma_hat.vech()].concat();
    let d = PosteriorDraws::point_mass(post.param_names(), &theta, 200)?;
    let melo = melo_from_draws(&d, &TangencyTarget { n_assets: post.dim() })?.omega_star;
    let plug = plugin_tangency_portfolio(&post.mu_hat, &sigma_hat)?.value;
    out.push(Check::new("point-mass/portfolio", max_abs_diff(&melo, &plug), POINT_MASS_TOL));

    let (data, _) = gen_structural(80, 1.0, &mut rng(seed, 41))?;
    let Dataset::System { y, x } = data else { unreachable!("system dataset") };
    let post = MultivariateRegressionPosterior::fit(&y, &x)?;
    let theta = [post.vec_b_hat().as_slice().to_vec(), post.sigma_hat().vech()].concat();
    let d = PosteriorDraws::point_mass(post.param_names(), &theta, 200)?;
    let melo = melo_from_draws(&d, &StructuralTarget)?.omega_star;
    let ils = ils_exactly_identified(&y, &x)?.estimate.value;
    out.push(Check::new("point-mass/structural", max_abs_diff(&melo, &ils), POINT_MASS_TOL));
    let b = &post.b_hat;
    let m = ReducedFormMoments::point_mass(b[(1, 0)], b[(2, 0)], b[(1, 1)], b[(2, 1)]);
    let closed = melo_structural_closed_form(&m)?;
    let direct = structural_from_reduced_form(b[(1, 0)], b[(2, 0)], b[(1, 1)], b[(2, 1)]);
    out.push(Check::new("point-mass/structural-closed-form", max_abs_diff(&closed, &direct), POINT_MASS_TOL));
    Ok(out)
}

/// Closed-form and sampled MELO agree on the optimal-input and structural problems.
pub fn check_closed_vs_sampled(seed: u64, draws: usize) -> Result<Vec<Check>> {
    let a = INPUT_PRICE / OUTPUT_PRICE;
    let post = linear_posterior(seed)?;
    let closed = melo_optimal_input_closed_form(&post, a)?;
    let d = post.sample(draws, &mut rng(seed, 50))?;
    let sampled = melo_from_draws(&d, &OptimalInputTarget { w_over_p: a })?.omega_star[0];
    let post_s = structural_posterior(500, 1.0, &mut rng(seed, 51))?;
    let closed_s = melo_structural_closed_form(&ReducedFormMoments::from_posterior(&post_s)?)?;
    let d = post_s.sample(draws, &mut rng(seed, 52))?;
    let sampled_s = melo_from_draws(&d, &StructuralTarget)?.omega_star;
    let worst = (0..4).map(|j| rel(sampled_s[j], closed_s[j])).fold(0.0, f64::max);
    Ok(vec![
        Check::new("closed-vs-sampled/optimal-input", rel(sampled, closed), 0.01),
        Check::new("closed-vs-sampled/structural", worst, 0.01),
    ])
}

/// Share of paired replications (S/N = 5) in which the analytical structural MELO
/// has a smaller mean absolute error at `large_n` than at N = 20.
pub fn consistency_rate(seed: u64, reps: usize, large_n: usize) -> Result<f64> {
    let truth = crate::problems::STRUCTURAL_TRUTH;
    let root = RandomStream::new(seed).derive(&[60]);
    let mae = |post: &MultivariateRegressionPosterior| -> Result<f64> {
        let est = melo_structural_closed_form(&ReducedFormMoments::from_posterior(post)?)?;
        Ok(est.iter().zip(truth).map(|(e, t)| (e - t).abs()).sum::<f64>() / 4.0)
    };
    let mut wins = 0usize;
    for rep in 0..reps {
        let mut r = root.derive(&[rep as u64]).rng();
        let small = structural_posterior(20, 5.0, &mut r)?;
        let large = structural_posterior(large_n, 5.0, &mut r)?;
        if mae(&large)? < mae(&small)? {
            wins += 1;
        }
    }
    Ok(wins as f64 / reps as f64)
}

/// Runs every oracle check.
pub fn run_all(seed: u64) -> Result<Vec<Check>> {
    let mut out = check_scores(seed)?;
    out.extend(check_gradient(seed, 8_000_000)?);
    out.push(check_wishart_covariance(seed, 100_000)?);
    out.extend(check_point_mass(seed)?);
    out.extend(check_closed_vs_sampled(seed, 100_000)?);
    let rate = consistency_rate(seed, 200, 20_000)?;
    out.push(Check::new("consistency/structural-n20000-vs-n20 (loss share)", 1.0 - rate, 1.0 - CONSISTENCY_RATE));
    Ok(out)
}
