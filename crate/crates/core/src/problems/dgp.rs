//! Data-generating processes for the four simulation studies.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};

use super::{Dataset, ProblemInstance, ProblemKind};
use crate::baselines::plugin_tangency_portfolio;
use crate::distributions::{normal_cdf, normal_sf, MvnSampler};
use crate::error::{MeloError, Result};
use crate::linalg::SymmetricMatrix;

pub const INPUT_MEAN: f64 = 187.5;
pub const INPUT_SD: f64 = 70.0;
/// Production function y = 1.5x − 0.002x².
pub const PRODUCTION_COEF: [f64; 2] = [1.5, -0.002];
pub const INPUT_PRICE: f64 = 3000.0;
pub const OUTPUT_PRICE: f64 = 4000.0;

/// Latent utility coefficients of the probit study.
pub const PROBIT_COEF: [f64; 3] = [0.5, 0.8, -1.2];

/// Reduced form of the supply–demand study: q = π'(1, z₁, z₂), p = γ'(1, z₁, z₂).
pub const REDUCED_PI: [f64; 3] = [-0.08, 0.9, -0.4];
pub const REDUCED_GAMMA: [f64; 3] = [0.35, 0.75, 0.5];
/// (β₁, β₂, α₁, α₂).
pub const STRUCTURAL_TRUTH: [f64; 4] = [-0.8, 1.5, 1.2, -1.0];

/// Var(a x + b x²) for x ~ N(m, s²): (a + 2bm)²s² + 2b²s⁴.
pub fn quadratic_signal_variance(a: f64, b: f64, mean: f64, sd: f64) -> f64 {
    let s2 = sd * sd;
    (a + 2.0 * b * mean).powi(2) * s2 + 2.0 * b * b * s2 * s2
}

/// Profit-maximizing input (w/p − β₁)/(2β₂).
pub fn optimal_input_truth(w_over_p: f64) -> f64 {
    (w_over_p - PRODUCTION_COEF[0]) / (2.0 * PRODUCTION_COEF[1])
}

pub fn odds_truth(x: &[f64]) -> f64 {
    let eta: f64 = x.iter().zip(PROBIT_COEF.iter()).map(|(a, b)| a * b).sum();
    normal_cdf(eta) / normal_sf(eta)
}

fn normal_vec<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn check_signal_noise(sn: f64) -> Result<()> {
    if !(sn > 0.0) {
        return Err(MeloError::InvalidParameter(format!("signal-to-noise must be positive, got {sn}")));
    }
    Ok(())
}

/// Mean-deviated design (x − x̄, x² − mean x²) and response y − ȳ.
pub fn mean_deviated_quadratic(input: &[f64], output: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
    let n = input.len();
    let nf = n as f64;
    let xbar = input.iter().sum::<f64>() / nf;
    let x2bar = input.iter().map(|v| v * v).sum::<f64>() / nf;
    let ybar = output.iter().sum::<f64>() / nf;
    let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { input[i] - xbar } else { input[i] * input[i] - x2bar });
    let y = DVector::from_iterator(n, output.iter().map(|v| v - ybar));
    (y, x)
}

/// x ~ N(187.5, 70²), y = 1.5x − 0.002x² + u with Var(signal)/Var(u) = `signal_noise`.
pub fn gen_optimal_input<R: Rng + ?Sized>(
    n: usize,
    signal_noise: f64,
    w: f64,
    p: f64,
    rng: &mut R,
) -> Result<(Dataset, ProblemInstance)> {
    if n < 5 {
        return Err(MeloError::InsufficientData { needed: 4, got: n });
    }
    check_signal_noise(signal_noise)?;
    let [a, b] = PRODUCTION_COEF;
    let noise_var = quadratic_signal_variance(a, b, INPUT_MEAN, INPUT_SD) / signal_noise;
    let input_dist = Normal::new(INPUT_MEAN, INPUT_SD).expect("valid normal");
    let noise_sd = noise_var.sqrt();
    let mut input = Vec::with_capacity(n);
    let mut output = Vec::with_capacity(n);
    for _ in 0..n {
        let x = input_dist.sample(rng);
        let u: f64 = rng.sample(StandardNormal);
        input.push(x);
        output.push(a * x + b * x * x + noise_sd * u);
    }
    let w_over_p = w / p;
    let instance = ProblemInstance {
        kind: ProblemKind::OptimalInput,
        truth: vec![optimal_input_truth(w_over_p)],
        true_theta: vec![a, b, noise_var],
        w_over_p,
        evaluation_points: Vec::new(),
    };
    Ok((Dataset::Production { input, output }, instance))
}

pub fn default_odds_points() -> Vec<Vec<f64>> {
    vec![vec![1.0, 0.0, 0.0], vec![1.0, 1.0, 1.0]]
}

/// y = 1{0.5 + 0.8x₁ − 1.2x₂ + u > 0} with x₁, x₂, u standard normal.
pub fn gen_odds_ratio<R: Rng + ?Sized>(n: usize, points: &[Vec<f64>], rng: &mut R) -> Result<(Dataset, ProblemInstance)> {
    if n < 5 {
        return Err(MeloError::InsufficientData { needed: 4, got: n });
    }
    if points.is_empty() || points.iter().any(|p| p.len() != 3) {
        return Err(MeloError::InvalidParameter("odds-ratio evaluation points need 3 entries each".into()));
    }
    let mut x = DMatrix::zeros(n, 3);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let v = normal_vec(3, rng);
        x[(i, 0)] = 1.0;
        x[(i, 1)] = v[0];
        x[(i, 2)] = v[1];
        let ystar = PROBIT_COEF[0] + PROBIT_COEF[1] * v[0] + PROBIT_COEF[2] * v[1] + v[2];
        y.push(if ystar > 0.0 { 1.0 } else { 0.0 });
    }
    let instance = ProblemInstance {
        kind: ProblemKind::OddsRatio,
        truth: points.iter().map(|p| odds_truth(p)).collect(),
        true_theta: PROBIT_COEF.to_vec(),
        w_over_p: f64::NAN,
        evaluation_points: points.to_vec(),
    };
    Ok((Dataset::Binary { y, x }, instance))
}

/// Population mean and covariance of the asset returns.
#[derive(Clone, Debug)]
pub struct PortfolioSetting {
    pub mu: DVector<f64>,
    pub sigma: SymmetricMatrix,
}

impl PortfolioSetting {
    /// μ_l ~ U(−0.2, 0.2) and Σ = A'A/L + 0.01·I with A standard normal.
    pub fn draw<R: Rng + ?Sized>(l: usize, rng: &mut R) -> Result<Self> {
        if l == 0 {
            return Err(MeloError::InvalidParameter("portfolio needs at least one asset".into()));
        }
        let u = Uniform::new(-0.2, 0.2);
        let mu = DVector::from_iterator(l, (0..l).map(|_| u.sample(rng)));
        let a = DMatrix::from_iterator(l, l, normal_vec(l * l, rng));
        let mut s = a.tr_mul(&a) / l as f64;
        for i in 0..l {
            s[(i, i)] += 0.01;
        }
        Ok(Self { mu, sigma: SymmetricMatrix::symmetrized(s) })
    }

    pub fn instance(&self) -> Result<ProblemInstance> {
        let w = plugin_tangency_portfolio(&self.mu, &self.sigma)?;
        if !w.all_finite() {
            return Err(MeloError::InvalidParameter("true tangency portfolio is undefined".into()));
        }
        let mut theta: Vec<f64> = self.mu.iter().copied().collect();
        theta.extend(self.sigma.vech());
        Ok(ProblemInstance {
            kind: ProblemKind::Portfolio,
            truth: w.value,
            true_theta: theta,
            w_over_p: f64::NAN,
            evaluation_points: Vec::new(),
        })
    }

    /// T i.i.d. rows from N(μ, Σ).
    pub fn returns<R: Rng + ?Sized>(&self, t: usize, rng: &mut R) -> Result<DMatrix<f64>> {
        let l = self.mu.len();
        if t <= l + 2 {
            return Err(MeloError::InsufficientData { needed: l + 2, got: t });
        }
        let s = MvnSampler::new(self.mu.clone(), &self.sigma)?;
        let mut r = DMatrix::zeros(t, l);
        for i in 0..t {
            r.row_mut(i).copy_from(&s.sample(rng).transpose());
        }
        Ok(r)
    }
}

/// Draws a setting and T returns from it.
pub fn gen_portfolio<R: Rng + ?Sized>(l: usize, t: usize, rng: &mut R) -> Result<(Dataset, ProblemInstance)> {
    let setting = PortfolioSetting::draw(l, rng)?;
    let returns = setting.returns(t, rng)?;
    Ok((Dataset::Returns { returns }, setting.instance()?))
}

/// Error variances (q, p) giving Var(systematic)/Var(error) = `signal_noise` per equation.
pub fn structural_error_variances(signal_noise: f64) -> [f64; 2] {
    let sys = |c: &[f64; 3]| c[1] * c[1] + c[2] * c[2];
    [sys(&REDUCED_PI) / signal_noise, sys(&REDUCED_GAMMA) / signal_noise]
}

/// Independent reduced-form equations in standard normal instruments z₁, z₂.
pub fn gen_structural<R: Rng + ?Sized>(n: usize, signal_noise: f64, rng: &mut R) -> Result<(Dataset, ProblemInstance)> {
    if n < 10 {
        return Err(MeloError::InsufficientData { needed: 9, got: n });
    }
    check_signal_noise(signal_noise)?;
    let [vq, vp] = structural_error_variances(signal_noise);
    let (sq, sp) = (vq.sqrt(), vp.sqrt());
    let mut y = DMatrix::zeros(n, 2);
    let mut x = DMatrix::zeros(n, 3);
    for i in 0..n {
        let v = normal_vec(4, rng);
        let (z1, z2) = (v[0], v[1]);
        x[(i, 0)] = 1.0;
        x[(i, 1)] = z1;
        x[(i, 2)] = z2;
        y[(i, 0)] = REDUCED_PI[0] + REDUCED_PI[1] * z1 + REDUCED_PI[2] * z2 + sq * v[2];
        y[(i, 1)] = REDUCED_GAMMA[0] + REDUCED_GAMMA[1] * z1 + REDUCED_GAMMA[2] * z2 + sp * v[3];
    }
    let mut theta: Vec<f64> = REDUCED_PI.iter().chain(REDUCED_GAMMA.iter()).copied().collect();
    theta.extend([vq, 0.0, vp]);
    let instance = ProblemInstance {
        kind: ProblemKind::Structural,
        truth: STRUCTURAL_TRUTH.to_vec(),
        true_theta: theta,
        w_over_p: f64::NAN,
        evaluation_points: Vec::new(),
    };
    Ok((Dataset::System { y, x }, instance))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn signal_variance_value() {
        let v = quadratic_signal_variance(1.5, -0.002, INPUT_MEAN, INPUT_SD);
        assert!((v - (4900.0 * 0.5625 + 2.0 * 4e-6 * 4900.0 * 4900.0)).abs() < 1e-9);
    }

    #[test]
    fn truths() {
        assert!((optimal_input_truth(0.75) - 187.5).abs() < 1e-12);
        assert!((odds_truth(&[1.0, 0.0, 0.0]) - 2.2411).abs() < 1e-4);
        assert!((odds_truth(&[1.0, 1.0, 1.0]) - 1.1731).abs() < 1e-4);
    }
}
