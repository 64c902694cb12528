use approx::assert_relative_eq;
use melo::distributions::{
    normal_cdf, normal_pdf, normal_quantile, normal_sf, sample_mvn, sample_mvt, sample_scaled_chisq,
    sample_std_normal_above, sample_truncated_normal, InverseWishart, MvnSampler, TruncationSide,
};
use melo::linalg::SymmetricMatrix;
use melo::rng::RandomStream;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn cov2() -> SymmetricMatrix {
    SymmetricMatrix::new(DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 1.0])).unwrap()
}

#[test]
fn normal_cdf_known_values() {
    assert_relative_eq!(normal_cdf(0.0), 0.5, epsilon = 1e-15);
    assert_relative_eq!(normal_cdf(1.959963984540054), 0.975, epsilon = 1e-11);
    assert_relative_eq!(normal_sf(8.0), 6.22096057427174e-16, max_relative = 1e-9);
    assert_relative_eq!(normal_pdf(1.0), 0.24197072451914337, epsilon = 1e-15);
}

#[test]
fn mvn_sample_moments() {
    let mut rng = RandomStream::new(11).rng();
    let mean = DVector::from_vec(vec![1.0, -2.0]);
    let s = MvnSampler::new(mean.clone(), &cov2()).unwrap();
    let n = 200_000;
    let (mut m, mut c) = (DVector::<f64>::zeros(2), DMatrix::<f64>::zeros(2, 2));
    for _ in 0..n {
        let x = s.sample(&mut rng);
        m += &x;
        let d = &x - &mean;
        c += &d * d.transpose();
    }
    m /= n as f64;
    c /= n as f64;
    assert!((&m - &mean).amax() < 0.015);
    assert!((c - cov2().matrix()).amax() < 0.03);
}

#[test]
fn mvn_and_mvt_batch_shapes() {
    let mut rng = RandomStream::new(2).rng();
    let mean = DVector::from_vec(vec![0.0, 0.0]);
    let a = sample_mvn(&mean, &cov2(), 7, &mut rng).unwrap();
    let b = sample_mvt(&mean, &cov2(), 5.0, 9, &mut rng).unwrap();
    assert_eq!((a.nrows(), a.ncols()), (7, 2));
    assert_eq!((b.nrows(), b.ncols()), (9, 2));
}

#[test]
fn mvt_variance_is_scale_times_dof_ratio() {
    let mut rng = RandomStream::new(5).rng();
    let mean = DVector::from_vec(vec![0.0, 0.0]);
    let dof = 8.0;
    let d = sample_mvt(&mean, &cov2(), dof, 200_000, &mut rng).unwrap();
    let v0 = d.column(0).iter().map(|x| x * x).sum::<f64>() / d.nrows() as f64;
    assert_relative_eq!(v0, 2.0 * dof / (dof - 2.0), max_relative = 0.03);
}

#[test]
fn inverse_wishart_mean() {
    let mut rng = RandomStream::new(3).rng();
    let dof = 10.0;
    let iw = InverseWishart::new(dof, &cov2()).unwrap();
    let n = 100_000;
    let mut acc = DMatrix::<f64>::zeros(2, 2);
    for _ in 0..n {
        acc += iw.sample(&mut rng).matrix();
    }
    acc /= n as f64;
    let expect = cov2().matrix() / (dof - 2.0 - 1.0);
    assert!((acc - expect).amax() < 0.01);
}

#[test]
fn inverse_wishart_rejects_small_dof() {
    assert!(InverseWishart::new(1.0, &cov2()).is_err());
}

#[test]
fn truncated_tail_mean_matches_mills_ratio() {
    for a in [-1.0, 0.5, 3.0, 6.0, 9.0] {
        let mut rng = RandomStream::new(17).derive(&[(a * 10.0) as u64]).rng();
        let n = 100_000;
        let m = (0..n).map(|_| sample_std_normal_above(a, &mut rng)).sum::<f64>() / n as f64;
        let oracle = normal_pdf(a) / normal_sf(a);
        assert_relative_eq!(m, oracle, max_relative = 0.01);
    }
}

#[test]
fn scaled_chisq_mean_is_scale() {
    let mut rng = RandomStream::new(8).rng();
    let d = sample_scaled_chisq(7.0, 2.5, 200_000, &mut rng).unwrap();
    assert_relative_eq!(d.iter().sum::<f64>() / d.len() as f64, 2.5, max_relative = 0.01);
    assert!(sample_scaled_chisq(0.5, 1.0, 1, &mut rng).is_err());
}

proptest! {
    #[test]
    fn truncated_normal_respects_support(mean in -40.0f64..40.0, sd in 0.01f64..5.0, seed in 0u64..1000, above in any::<bool>()) {
        let mut rng = RandomStream::new(seed).rng();
        let side = if above { TruncationSide::AboveZero } else { TruncationSide::BelowZero };
        for _ in 0..20 {
            let z = sample_truncated_normal(mean, sd * sd, side, &mut rng);
            prop_assert!(z.is_finite());
            if above { prop_assert!(z > 0.0) } else { prop_assert!(z <= 0.0) }
        }
    }

    #[test]
    fn quantile_inverts_cdf(p in 1e-12f64..(1.0 - 1e-12)) {
        let x = normal_quantile(p);
        prop_assert!((normal_cdf(x) - p).abs() <= 1e-13 + 1e-9 * p.min(1.0 - p));
    }

    #[test]
    fn cdf_and_sf_sum_to_one(x in -30.0f64..30.0) {
        prop_assert!((normal_cdf(x) + normal_sf(x) - 1.0).abs() < 1e-15);
    }
}
