use approx::assert_relative_eq;
use melo::baselines::{
    ils_exactly_identified, plugin_odds_ratio, plugin_tangency_portfolio, probit_mle, structural_from_reduced_form,
    two_stage_least_squares,
};
use melo::distributions::{normal_cdf, normal_sf};
use melo::linalg::SymmetricMatrix;
use melo::problems::{gen_structural, Dataset};
use melo::rng::RandomStream;
use nalgebra::{DMatrix, DVector, Matrix2, Vector2};

fn challenger() -> (Vec<f64>, DMatrix<f64>) {
    let temp = [66., 70., 69., 68., 67., 72., 73., 70., 57., 63., 70., 78., 67., 53., 67., 75., 70., 81., 76., 79., 75., 76., 58.];
    let fail = [0., 1., 0., 0., 0., 0., 0., 0., 1., 1., 1., 0., 0., 1., 0., 0., 0., 0., 0., 0., 1., 0., 1.];
    let x = DMatrix::from_fn(23, 2, |i, j| if j == 0 { 1.0 } else { temp[i] });
    (fail.to_vec(), x)
}

#[test]
fn ils_equals_two_stage_least_squares_when_exactly_identified() {
    let mut rng = RandomStream::new(21).rng();
    let (data, _) = gen_structural(300, 0.5, &mut rng).unwrap();
    let Dataset::System { y, x } = data else { panic!("system data expected") };
    let ils = ils_exactly_identified(&y, &x).unwrap();
    let n = x.nrows();
    let q = y.column(0).into_owned();
    let w_d = DMatrix::from_fn(n, 3, |i, j| [1.0, y[(i, 1)], x[(i, 1)]][j]);
    let w_s = DMatrix::from_fn(n, 3, |i, j| [1.0, y[(i, 1)], x[(i, 2)]][j]);
    let d = two_stage_least_squares(&q, &w_d, &x).unwrap();
    let s = two_stage_least_squares(&q, &w_s, &x).unwrap();
    let tsls = [d.coef[1], d.coef[2], s.coef[1], s.coef[2]];
    for k in 0..4 {
        assert_relative_eq!(ils.estimate.value[k], tsls[k], max_relative = 1e-9);
        assert!(ils.std_errors[k] > 0.0);
    }
}

#[test]
fn reduced_form_inversion_matches_elimination() {
    let (pi1, pi2, g1, g2) = (0.9, -0.4, 0.75, 0.5);
    let s = structural_from_reduced_form(pi1, pi2, g1, g2);
    // Demand q = a + β₁p + β₂z₁: the reduced-form slopes satisfy π = β₁γ + β₂e₁.
    let demand = Matrix2::new(g1, 1.0, g2, 0.0).lu().solve(&Vector2::new(pi1, pi2)).unwrap();
    let supply = Matrix2::new(g1, 0.0, g2, 1.0).lu().solve(&Vector2::new(pi1, pi2)).unwrap();
    assert_relative_eq!(s[0], demand[0], epsilon = 1e-12);
    assert_relative_eq!(s[1], demand[1], epsilon = 1e-12);
    assert_relative_eq!(s[2], supply[0], epsilon = 1e-12);
    assert_relative_eq!(s[3], supply[1], epsilon = 1e-12);
}

#[test]
fn challenger_probit_mle_is_a_stationary_maximum() {
    let (y, x) = challenger();
    let fit = probit_mle(&y, &x).unwrap();
    assert!(fit.gradient_norm < 1e-8);
    let ll = |b: &[f64]| -> f64 {
        (0..23)
            .map(|i| {
                let e = b[0] + b[1] * x[(i, 1)];
                if y[i] == 1.0 { normal_cdf(e).ln() } else { normal_sf(e).ln() }
            })
            .sum()
    };
    let b = [fit.beta[0], fit.beta[1]];
    assert_relative_eq!(ll(&b), fit.log_likelihood, max_relative = 1e-10);
    for (d0, d1) in [(1e-3, 0.0), (-1e-3, 0.0), (0.0, 1e-4), (0.0, -1e-4)] {
        assert!(ll(&[b[0] + d0, b[1] + d1]) < fit.log_likelihood);
    }
}

#[test]
fn challenger_plugin_odds() {
    let (y, x) = challenger();
    let fit = probit_mle(&y, &x).unwrap();
    let e = plugin_odds_ratio(fit.beta.as_slice(), &[1.0, 69.56], 23);
    assert!((e.value[0] - 0.363).abs() < 0.005, "{}", e.value[0]);
    let e45 = plugin_odds_ratio(fit.beta.as_slice(), &[1.0, 45.0], 23);
    assert!((e45.value[0] - 283.644).abs() < 1.0, "{}", e45.value[0]);
}

#[test]
fn probit_mle_detects_separation() {
    let x = DMatrix::from_fn(12, 2, |i, j| if j == 0 { 1.0 } else { i as f64 });
    let y: Vec<f64> = (0..12).map(|i| if i < 6 { 0.0 } else { 1.0 }).collect();
    assert!(probit_mle(&y, &x).is_err());
}

#[test]
fn tangency_two_asset_hand_case() {
    // Σ⁻¹μ ∝ (2, 1) for diagonal Σ = diag(1, 2) and μ = (2, 2).
    let mu = DVector::from_vec(vec![2.0, 2.0]);
    let sigma = SymmetricMatrix::from_diagonal(&[1.0, 2.0]);
    let e = plugin_tangency_portfolio(&mu, &sigma).unwrap();
    assert_relative_eq!(e.value[0], 2.0 / 3.0, epsilon = 1e-14);
    assert_relative_eq!(e.value[1], 1.0 / 3.0, epsilon = 1e-14);
}

#[test]
fn tangency_is_non_finite_when_exposure_vanishes() {
    let mu = DVector::from_vec(vec![1.0, -1.0]);
    let e = plugin_tangency_portfolio(&mu, &SymmetricMatrix::identity(2)).unwrap();
    assert!(!e.all_finite());
}
