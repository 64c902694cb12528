use melo::baselines::probit_mle;
use melo::linalg::SymmetricMatrix;
use melo::posteriors::{probit_gibbs, LinearModelPosterior, MultivariateRegressionPosterior, MvnMeanCovPosterior, ProbitPrior};
use melo::problems::{gen_odds_ratio, gen_structural, Dataset};
use melo::rng::RandomStream;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

fn linear_data(n: usize, seed: u64) -> (DVector<f64>, DMatrix<f64>) {
    let mut rng = RandomStream::new(seed).rng();
    let x = DMatrix::from_fn(n, 2, |_, j| if j == 0 { 1.0 } else { rng.sample(StandardNormal) });
    let y = DVector::from_fn(n, |i, _| 1.0 + 2.0 * x[(i, 1)] + 0.5 * rng.sample::<f64, _>(StandardNormal));
    (y, x)
}

#[test]
fn linear_posterior_moments() {
    let (y, x) = linear_data(30, 1);
    let post = LinearModelPosterior::fit(&y, &x).unwrap();
    let nu = post.dof() as f64;
    assert_eq!(post.dof(), 28);
    let d = post.sample(400_000, &mut RandomStream::new(2).rng()).unwrap();
    let m = d.mean();
    let c = d.covariance();
    let inflate = nu / (nu - 2.0);
    for j in 0..2 {
        let sd = (inflate * post.s2 * post.xtx_inv.get(j, j)).sqrt();
        assert!((m[j] - post.beta_hat[j]).abs() < 0.01 * sd);
        assert!((c.get(j, j) / (sd * sd) - 1.0).abs() < 0.02);
    }
    assert!((m[2] / (inflate * post.s2) - 1.0).abs() < 0.01);
}

#[test]
fn linear_posterior_rejects_too_few_rows() {
    let (y, x) = linear_data(2, 1);
    assert!(LinearModelPosterior::fit(&y, &x).is_err());
}

#[test]
fn probit_gibbs_centers_on_the_mle_in_large_samples() {
    let mut rng = RandomStream::new(3).rng();
    let (data, _) = gen_odds_ratio(3000, &[vec![1.0, 0.0, 0.0]], &mut rng).unwrap();
    let Dataset::Binary { y, x } = data else { panic!("binary data expected") };
    let mle = probit_mle(&y, &x).unwrap();
    let d = probit_gibbs(&y, &x, &ProbitPrior::vague(3, 1e4), 3000, 500, &mut rng).unwrap();
    assert_eq!(d.n_draws(), 2500);
    assert_eq!(d.iteration_stats().unwrap().len(), 2500);
    let m = d.mean();
    for j in 0..3 {
        let sd = mle.cov.get(j, j).sqrt();
        assert!((m[j] - mle.beta[j]).abs() < 0.2 * sd, "coef {j}: {} vs {}", m[j], mle.beta[j]);
    }
}

#[test]
fn probit_gibbs_rejects_single_class() {
    let x = DMatrix::from_fn(10, 2, |i, j| if j == 0 { 1.0 } else { i as f64 });
    let y = vec![1.0; 10];
    let r = probit_gibbs(&y, &x, &ProbitPrior::vague(2, 1e4), 200, 50, &mut RandomStream::new(1).rng());
    assert!(r.is_err());
}

#[test]
fn mean_cov_posterior_centers_on_sample_mean() {
    let mu_hat = DVector::from_vec(vec![0.01, 0.02, -0.005]);
    let s = SymmetricMatrix::from_diagonal(&[0.4, 0.9, 0.25]);
    let post = MvnMeanCovPosterior::from_statistics(mu_hat.clone(), s, 60).unwrap();
    let d = post.sample(100_000, &mut RandomStream::new(4).rng()).unwrap();
    assert_eq!(d.n_params(), 3 + 6);
    let m = d.mean();
    for j in 0..3 {
        assert!((m[j] - mu_hat[j]).abs() < 2e-3);
    }
    // E Σ = S/(T − 1 − L − 1) for the inverse Wishart with dof T − 1.
    assert!((m[3] / (0.4 / 55.0) - 1.0).abs() < 0.02);
}

#[test]
fn mean_cov_posterior_needs_enough_periods() {
    let s = SymmetricMatrix::identity(4);
    assert!(MvnMeanCovPosterior::from_statistics(DVector::zeros(4), s, 6).is_err());
}

#[test]
fn reduced_form_draws_use_column_major_vec() {
    let mut rng = RandomStream::new(5).rng();
    let (data, _) = gen_structural(200, 1.0, &mut rng).unwrap();
    let Dataset::System { y, x } = data else { panic!("system data expected") };
    let post = MultivariateRegressionPosterior::fit(&y, &x).unwrap();
    let d = post.sample(50_000, &mut rng).unwrap();
    assert_eq!(d.names()[..6], ["b_1_1", "b_2_1", "b_3_1", "b_1_2", "b_2_2", "b_3_2"]);
    let m = d.mean();
    let v = post.vec_b_hat();
    for j in 0..6 {
        assert!((m[j] - v[j]).abs() < 0.01, "vec B entry {j}");
    }
    assert_eq!(v[1], post.b_hat[(1, 0)]);
    assert_eq!(v[4], post.b_hat[(1, 1)]);
}
