//! Sampling kernels for the posterior families: multivariate normal and
//! Student-t, inverse Wishart, one-sided truncated normal and scaled chi-square.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erfc, erfc_inv};

use crate::error::{MeloError, Result};
use crate::linalg::SymmetricMatrix;

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standardized truncation point above which the exponential-proposal sampler is used.
pub const TAIL_SWITCH: f64 = 5.0;

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Upper tail 1 − Φ(x), accurate for large x.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * erfc(x / SQRT_2)
}

pub fn normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Φ⁻¹(p): inverse-erfc start refined by one Halley step on the lower-tail side.
pub fn normal_quantile(p: f64) -> f64 {
    if p > 0.5 {
        return -normal_quantile(1.0 - p);
    }
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let x = -SQRT_2 * erfc_inv(2.0 * p);
    if !x.is_finite() {
        return x;
    }
    let e = normal_cdf(x) - p;
    let u = e / normal_pdf(x);
    if !u.is_finite() {
        return x;
    }
    x - u / (1.0 + 0.5 * x * u)
}

fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

fn chi_square<R: Rng + ?Sized>(dof: f64, rng: &mut R) -> f64 {
    ChiSquared::new(dof).expect("chi-square dof validated by caller").sample(rng)
}

fn check_dim(what: &str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(MeloError::DimensionMismatch(format!("{what}: expected {expected}, got {got}")));
    }
    Ok(())
}

/// Reusable N(mean, cov) sampler holding a square-root factor of `cov`.
#[derive(Clone, Debug)]
pub struct MvnSampler {
    mean: DVector<f64>,
    factor: DMatrix<f64>,
}

impl MvnSampler {
    pub fn new(mean: DVector<f64>, cov: &SymmetricMatrix) -> Result<Self> {
        check_dim("mvn covariance dimension", mean.len(), cov.dim())?;
        Ok(Self { mean, factor: cov.psd_factor()? })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.dim(), |_, _| std_normal(rng));
        &self.mean + &self.factor * z
    }
}

/// n i.i.d. rows from N(mean, cov); `cov` may be semidefinite.
pub fn sample_mvn<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    cov: &SymmetricMatrix,
    n: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let s = MvnSampler::new(mean.clone(), cov)?;
    let mut out = DMatrix::zeros(n, s.dim());
    for i in 0..n {
        out.row_mut(i).copy_from(&s.sample(rng).transpose());
    }
    Ok(out)
}

/// n i.i.d. rows from the multivariate Student-t with the given location, scale matrix and dof.
pub fn sample_mvt<R: Rng + ?Sized>(
    location: &DVector<f64>,
    scale: &SymmetricMatrix,
    dof: f64,
    n: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    if !(dof > 0.0) || !dof.is_finite() {
        return Err(MeloError::InvalidParameter(format!("Student-t dof must be positive, got {dof}")));
    }
    check_dim("mvt scale dimension", location.len(), scale.dim())?;
    let factor = scale.psd_factor()?;
    let d = location.len();
    let mut out = DMatrix::zeros(n, d);
    for i in 0..n {
        let z = DVector::from_fn(d, |_, _| std_normal(rng));
        let w = (dof / chi_square(dof, rng)).sqrt();
        let x = location + (&factor * z) * w;
        out.row_mut(i).copy_from(&x.transpose());
    }
    Ok(out)
}

/// Inverse-Wishart sampler via the Bartlett decomposition of the matching Wishart.
///
/// With S = U U' and A the lower Bartlett factor (A_ii² ~ χ²(dof − i), A_ij ~ N(0,1)),
/// the draw is (A⁻¹U')'(A⁻¹U').
#[derive(Clone, Debug)]
pub struct InverseWishart {
    dof: f64,
    upper_t: DMatrix<f64>,
}

impl InverseWishart {
    pub fn new(dof: f64, scale: &SymmetricMatrix) -> Result<Self> {
        let d = scale.dim();
        if !(dof > d as f64 - 1.0) {
            return Err(MeloError::InvalidParameter(format!(
                "inverse-Wishart dof {dof} must exceed dimension - 1 = {}",
                d as f64 - 1.0
            )));
        }
        let chol = scale.cholesky_strict().ok_or_else(|| {
            MeloError::NonPositiveDefinite("inverse-Wishart scale matrix".into())
        })?;
        Ok(Self { dof, upper_t: chol.l().transpose() })
    }

    pub fn dim(&self) -> usize {
        self.upper_t.nrows()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SymmetricMatrix {
        let d = self.dim();
        let mut a = DMatrix::zeros(d, d);
        for i in 0..d {
            a[(i, i)] = chi_square(self.dof - i as f64, rng).sqrt();
            for j in 0..i {
                a[(i, j)] = std_normal(rng);
            }
        }
        let x = a
            .solve_lower_triangular(&self.upper_t)
            .expect("Bartlett factor has a positive diagonal");
        SymmetricMatrix::symmetrized(x.transpose() * x)
    }
}

pub fn sample_inverse_wishart<R: Rng + ?Sized>(
    dof: f64,
    scale: &SymmetricMatrix,
    n: usize,
    rng: &mut R,
) -> Result<Vec<SymmetricMatrix>> {
    let iw = InverseWishart::new(dof, scale)?;
    Ok((0..n).map(|_| iw.sample(rng)).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruncationSide {
    BelowZero,
    AboveZero,
}

/// Standard normal conditioned on Z > a.
pub fn sample_std_normal_above<R: Rng + ?Sized>(a: f64, rng: &mut R) -> f64 {
    if a < 0.0 {
        loop {
            let z = std_normal(rng);
            if z > a {
                return z;
            }
        }
    } else if a <= TAIL_SWITCH {
        let tail = normal_sf(a);
        loop {
            let u: f64 = rng.gen();
            let z = SQRT_2 * erfc_inv(2.0 * u * tail);
            if z.is_finite() && z > a {
                return z;
            }
            if z.is_finite() && z == a {
                return a;
            }
        }
    } else {
        let lambda = 0.5 * (a + (a * a + 4.0).sqrt());
        let exp = Exp::new(lambda).expect("positive rate");
        loop {
            let z = a + exp.sample(rng);
            let u: f64 = rng.gen();
            let d = z - lambda;
            if u <= (-0.5 * d * d).exp() {
                return z;
            }
        }
    }
}

/// Draw from N(mean, var) restricted to (−∞, 0] or (0, ∞).
pub fn sample_truncated_normal<R: Rng + ?Sized>(
    mean: f64,
    var: f64,
    side: TruncationSide,
    rng: &mut R,
) -> f64 {
    debug_assert!(var > 0.0);
    let sd = var.sqrt();
    match side {
        TruncationSide::AboveZero => {
            let z = sample_std_normal_above(-mean / sd, rng);
            (mean + sd * z).max(f64::MIN_POSITIVE)
        }
        TruncationSide::BelowZero => {
            let z = sample_std_normal_above(mean / sd, rng);
            (mean - sd * z).min(0.0)
        }
    }
}

/// n draws of scale·χ²_dof/dof.
pub fn sample_scaled_chisq<R: Rng + ?Sized>(
    dof: f64,
    scale: f64,
    n: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !(dof >= 1.0) || !(scale > 0.0) {
        return Err(MeloError::InvalidParameter(format!(
            "scaled chi-square needs dof >= 1 and scale > 0, got dof={dof}, scale={scale}"
        )));
    }
    Ok((0..n).map(|_| scale * chi_square(dof, rng) / dof).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RandomStream;

    #[test]
    fn cdf_identities() {
        assert_eq!(normal_cdf(0.0), 0.5);
        assert!((normal_cdf(1.0) + normal_sf(1.0) - 1.0).abs() < 1e-15);
        assert!((normal_quantile(normal_cdf(1.3)) - 1.3).abs() < 1e-10);
        assert!(normal_sf(9.0) > 0.0);
    }

    #[test]
    fn zero_covariance_returns_mean() {
        let mut rng = RandomStream::new(1).rng();
        let mean = DVector::from_vec(vec![1.0, -2.0]);
        let d = sample_mvn(&mean, &SymmetricMatrix::zeros(2), 5, &mut rng).unwrap();
        for i in 0..5 {
            assert_eq!(d[(i, 0)], 1.0);
            assert_eq!(d[(i, 1)], -2.0);
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let mut rng = RandomStream::new(1).rng();
        let r = sample_mvn(&DVector::zeros(3), &SymmetricMatrix::identity(2), 1, &mut rng);
        assert!(matches!(r, Err(MeloError::DimensionMismatch(_))));
    }

    #[test]
    fn mvt_rejects_bad_dof() {
        let mut rng = RandomStream::new(1).rng();
        let r = sample_mvt(&DVector::zeros(1), &SymmetricMatrix::identity(1), 0.0, 1, &mut rng);
        assert!(r.is_err());
    }

    #[test]
    fn inverse_wishart_rejects_small_dof() {
        assert!(InverseWishart::new(0.5, &SymmetricMatrix::identity(2)).is_err());
    }

    #[test]
    fn truncated_tail_is_finite() {
        let mut rng = RandomStream::new(3).rng();
        for _ in 0..1000 {
            let x = sample_truncated_normal(-8.0, 1.0, TruncationSide::AboveZero, &mut rng);
            assert!(x.is_finite() && x > 0.0);
            let y = sample_truncated_normal(8.0, 1.0, TruncationSide::BelowZero, &mut rng);
            assert!(y.is_finite() && y <= 0.0);
        }
    }
}
