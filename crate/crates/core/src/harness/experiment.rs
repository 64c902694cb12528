//! Simulation studies: configuration grid, replication loop and aggregation.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{error_metrics, summarize, ErrorMetrics, Summary};
use crate::error::{MeloError, Result};
use crate::estimator::MIN_DRAWS;
use crate::frequentist::ProbitStatAveraging;
use crate::problems::{
    default_odds_points, fit_method, gen_odds_ratio, gen_optimal_input, gen_portfolio, gen_structural, odds_truth,
    optimal_input_truth, Dataset, FitSettings, Method, ProblemInstance, ProblemKind, INPUT_PRICE, OUTPUT_PRICE,
    STRUCTURAL_TRUTH,
};
use crate::rng::RandomStream;

const TAG_DATA: u64 = 1;
const TAG_METHOD: u64 = 2;

fn default_draws() -> usize {
    10_000
}

fn default_prior_variance() -> f64 {
    10_000.0
}

/// A simulation study over a grid of sample sizes and noise levels (or asset counts).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub problem: ProblemKind,
    /// N, or T for the portfolio problem.
    pub sample_sizes: Vec<usize>,
    /// Required for optimal-input and structural.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub signal_noise_levels: Vec<f64>,
    /// Asset counts L (portfolio only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub n_assets: Vec<usize>,
    pub replications: usize,
    /// Retained posterior draws S.
    #[serde(default = "default_draws")]
    pub draws: usize,
    /// Gibbs burn-in (probit); defaults to draws / 4.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<usize>,
    pub methods: Vec<Method>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_price: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_price: Option<f64>,
    /// Covariate rows (intercept first) for the odds ratio.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evaluation_points: Option<Vec<Vec<f64>>>,
    #[serde(default = "default_prior_variance")]
    pub prior_variance: f64,
    /// Also compute delta-method standard errors for every replication.
    #[serde(default)]
    pub std_errors: bool,
    #[serde(default)]
    pub probit_stats: ProbitStatAveraging,
}

/// One cell of the study grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigPoint {
    pub label: String,
    pub sample_size: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub signal_noise: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_assets: Option<usize>,
}

impl ConfigPoint {
    fn key(&self, kind: ProblemKind) -> [u64; 4] {
        [
            kind as u64,
            self.sample_size as u64,
            self.signal_noise.map_or(0, f64::to_bits),
            self.n_assets.unwrap_or(0) as u64,
        ]
    }
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text).map_err(|e| MeloError::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn burn_in(&self) -> usize {
        self.burn_in.unwrap_or(self.draws / 4)
    }

    pub fn w_over_p(&self) -> f64 {
        self.input_price.unwrap_or(INPUT_PRICE) / self.output_price.unwrap_or(OUTPUT_PRICE)
    }

    pub fn odds_points(&self) -> Vec<Vec<f64>> {
        self.evaluation_points.clone().unwrap_or_else(default_odds_points)
    }

    pub fn fit_settings(&self) -> FitSettings {
        FitSettings {
            draws: self.draws,
            burn_in: self.burn_in(),
            prior_variance: self.prior_variance,
            with_std_errors: self.std_errors,
            probit_stats: self.probit_stats,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(MeloError::Config(m));
        if self.replications == 0 {
            return cfg("replications must be at least 1".into());
        }
        if self.draws < MIN_DRAWS {
            return cfg(format!("draws must be at least {MIN_DRAWS}, got {}", self.draws));
        }
        if self.methods.is_empty() {
            return cfg("methods must not be empty".into());
        }
        let supported = self.problem.supported_methods();
        if let Some(m) = self.methods.iter().find(|m| !supported.contains(m)) {
            return cfg(format!("methods: '{m}' is not available for problem '{}'", self.problem));
        }
        for (i, m) in self.methods.iter().enumerate() {
            if self.methods[..i].contains(m) {
                return cfg(format!("methods: '{m}' listed twice"));
            }
        }
        if self.sample_sizes.is_empty() {
            return cfg("sample_sizes must not be empty".into());
        }
        let needs_sn = matches!(self.problem, ProblemKind::OptimalInput | ProblemKind::Structural);
        if needs_sn && self.signal_noise_levels.is_empty() {
            return cfg(format!("signal_noise_levels is required for problem '{}'", self.problem));
        }
        if !needs_sn && !self.signal_noise_levels.is_empty() {
            return cfg(format!("signal_noise_levels does not apply to problem '{}'", self.problem));
        }
        if let Some(sn) = self.signal_noise_levels.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return cfg(format!("signal_noise_levels: {sn} is not a positive number"));
        }
        let is_portfolio = self.problem == ProblemKind::Portfolio;
        if is_portfolio && self.n_assets.is_empty() {
            return cfg("n_assets is required for problem 'portfolio'".into());
        }
        if !is_portfolio && !self.n_assets.is_empty() {
            return cfg(format!("n_assets does not apply to problem '{}'", self.problem));
        }
        if self.evaluation_points.is_some() && self.problem != ProblemKind::OddsRatio {
            return cfg(format!("evaluation_points does not apply to problem '{}'", self.problem));
        }
        if self.problem == ProblemKind::OddsRatio {
            let pts = self.odds_points();
            if pts.is_empty() || pts.iter().any(|p| p.len() != 3) {
                return cfg("evaluation_points: each row needs 3 entries (intercept, x1, x2)".into());
            }
        }
        if !(self.prior_variance > 0.0) {
            return cfg("prior_variance must be positive".into());
        }
        let w = self.w_over_p();
        if !(w.is_finite() && w > 0.0) {
            return cfg("input_price and output_price must be positive".into());
        }
        let min_n = match self.problem {
            ProblemKind::OptimalInput | ProblemKind::OddsRatio => 5,
            ProblemKind::Structural => 10,
            ProblemKind::Portfolio => 0,
        };
        if let Some(n) = self.sample_sizes.iter().find(|&&n| n < min_n) {
            return cfg(format!("sample_sizes: {n} is below the minimum {min_n}"));
        }
        if is_portfolio {
            for &l in &self.n_assets {
                if let Some(t) = self.sample_sizes.iter().find(|&&t| t <= l + 2) {
                    return cfg(format!("sample_sizes: T = {t} must exceed L + 2 = {}", l + 2));
                }
            }
        }
        Ok(())
    }

    /// Grid cells in a fixed order.
    pub fn configs(&self) -> Vec<ConfigPoint> {
        let mut out = Vec::new();
        match self.problem {
            ProblemKind::OptimalInput | ProblemKind::Structural => {
                for &sn in &self.signal_noise_levels {
                    for &n in &self.sample_sizes {
                        out.push(ConfigPoint {
                            label: format!("SN={sn} N={n}"),
                            sample_size: n,
                            signal_noise: Some(sn),
                            n_assets: None,
                        });
                    }
                }
            }
            ProblemKind::OddsRatio => {
                for &n in &self.sample_sizes {
                    out.push(ConfigPoint { label: format!("N={n}"), sample_size: n, signal_noise: None, n_assets: None });
                }
            }
            ProblemKind::Portfolio => {
                for &l in &self.n_assets {
                    for &t in &self.sample_sizes {
                        out.push(ConfigPoint {
                            label: format!("L={l} T={t}"),
                            sample_size: t,
                            signal_noise: None,
                            n_assets: Some(l),
                        });
                    }
                }
            }
        }
        out
    }
}

/// One method's outcome in one replication.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub method: Method,
    pub estimate: Vec<f64>,
    pub finite: Vec<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub std_errors: Option<Vec<f64>>,
    /// Target truth, when it varies across replications.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<ErrorMetrics>,
    /// Failure message when the method did not produce an estimate.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ReplicationRecord {
    pub fn usable(&self, component: Option<usize>) -> bool {
        match component {
            Some(k) => self.finite.get(k).copied().unwrap_or(false),
            None => !self.finite.is_empty() && self.finite.iter().all(|&f| f),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigResult {
    pub config: ConfigPoint,
    /// Empty when each replication carries its own truth.
    pub truth: Vec<f64>,
    pub components: Vec<String>,
    /// Ordered by replication, then by the spec's method order.
    pub records: Vec<ReplicationRecord>,
}

impl ConfigResult {
    pub fn records_for(&self, method: Method) -> impl Iterator<Item = &ReplicationRecord> {
        self.records.iter().filter(move |r| r.method == method)
    }
}

/// One summary table row; `summary` is absent when every replication was discarded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Method,
    pub config: String,
    pub component: String,
    pub metric: String,
    pub summary: Option<Summary>,
    /// Replications excluded from this row under the pairwise-fair rule.
    pub discards: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub spec: ExperimentSpec,
    pub configs: Vec<ConfigResult>,
    pub summaries: Vec<SummaryRow>,
    /// Replications in which a method's own estimate was non-finite or failed.
    pub discard_counts: BTreeMap<Method, usize>,
}

impl ExperimentResult {
    pub fn summary(&self, method: Method, config: &str, component: &str, metric: &str) -> Option<&Summary> {
        self.summaries
            .iter()
            .find(|r| r.method == method && r.config == config && r.component == component && r.metric == metric)
            .and_then(|r| r.summary.as_ref())
    }
}

/// Component label used for problems whose errors are pooled over components.
pub const POOLED_COMPONENT: &str = "all";

/// Runs every configuration and replication; output is independent of `threads`.
pub fn run_experiment(spec: &ExperimentSpec, threads: Option<usize>) -> Result<ExperimentResult> {
    spec.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t.max(1));
    }
    let pool = builder.build().map_err(|e| MeloError::Config(format!("thread pool: {e}")))?;
    pool.install(|| run_in_pool(spec))
}

fn run_in_pool(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    let root = RandomStream::new(spec.seed);
    let settings = spec.fit_settings();
    let points = spec.configs();
    let mut configs = Vec::with_capacity(points.len());
    for point in points {
        let records: Vec<ReplicationRecord> = (0..spec.replications)
            .into_par_iter()
            .map(|rep| run_replication(spec, &settings, &point, root, rep))
            .collect::<Vec<_>>()
            .into_iter()
            .flatten()
            .collect();
        let n_targets = spec.n_targets(&point);
        let components = ProblemInstance::for_estimation(spec.problem, n_targets, spec.w_over_p(), spec.odds_points()).labels();
        configs.push(ConfigResult { truth: spec.fixed_truth(), config: point, components, records });
    }
    let summaries = summarize_configs(spec, &configs);
    let mut discard_counts: BTreeMap<Method, usize> = spec.methods.iter().map(|&m| (m, 0)).collect();
    for c in &configs {
        for r in &c.records {
            if !r.usable(None) {
                *discard_counts.entry(r.method).or_default() += 1;
            }
        }
    }
    Ok(ExperimentResult { spec: spec.clone(), configs, summaries, discard_counts })
}

impl ExperimentSpec {
    fn n_targets(&self, point: &ConfigPoint) -> usize {
        match self.problem {
            ProblemKind::OptimalInput => 1,
            ProblemKind::OddsRatio => self.odds_points().len(),
            ProblemKind::Portfolio => point.n_assets.expect("grid has asset count"),
            ProblemKind::Structural => STRUCTURAL_TRUTH.len(),
        }
    }

    /// Truth shared by all replications; empty when it is redrawn per replication.
    fn fixed_truth(&self) -> Vec<f64> {
        match self.problem {
            ProblemKind::OptimalInput => vec![optimal_input_truth(self.w_over_p())],
            ProblemKind::OddsRatio => self.odds_points().iter().map(|p| odds_truth(p)).collect(),
            ProblemKind::Portfolio => Vec::new(),
            ProblemKind::Structural => STRUCTURAL_TRUTH.to_vec(),
        }
    }
}

/// Dataset and instance for one replication; the portfolio population is redrawn each time.
fn generate(spec: &ExperimentSpec, point: &ConfigPoint, stream: RandomStream) -> Result<(Dataset, ProblemInstance)> {
    let mut rng = stream.rng();
    let n = point.sample_size;
    match spec.problem {
        ProblemKind::OptimalInput => {
            gen_optimal_input(n, point.signal_noise.expect("grid has signal-noise"), spec.w_over_p(), 1.0, &mut rng)
        }
        ProblemKind::OddsRatio => gen_odds_ratio(n, &spec.odds_points(), &mut rng),
        ProblemKind::Structural => gen_structural(n, point.signal_noise.expect("grid has signal-noise"), &mut rng),
        ProblemKind::Portfolio => gen_portfolio(point.n_assets.expect("grid has asset count"), n, &mut rng),
    }
}

fn method_tag(m: Method) -> u64 {
    Method::ALL.iter().position(|&x| x == m).expect("method listed in ALL") as u64
}

fn run_replication(
    spec: &ExperimentSpec,
    settings: &FitSettings,
    point: &ConfigPoint,
    root: RandomStream,
    rep: usize,
) -> Vec<ReplicationRecord> {
    let key = point.key(spec.problem);
    let rep_stream = root.derive(&[key[0], key[1], key[2], key[3], rep as u64]);
    let generated = generate(spec, point, rep_stream.derive(&[TAG_DATA]));
    let per_rep_truth = spec.problem == ProblemKind::Portfolio;
    spec.methods
        .iter()
        .map(|&method| {
            let outcome = generated.as_ref().map_err(|e| e.to_string()).and_then(|(d, instance)| {
                let mut rng = rep_stream.derive(&[TAG_METHOD, method_tag(method)]).rng();
                fit_method(instance, d, method, settings, &mut rng)
                    .map(|out| (out, instance))
                    .map_err(|e| e.to_string())
            });
            match outcome {
                Ok((out, instance)) => ReplicationRecord {
                    replication: rep,
                    method,
                    finite: out.finite(),
                    metrics: error_metrics(&out.value, &instance.truth).ok(),
                    estimate: out.value,
                    std_errors: out.std_errors,
                    truth: per_rep_truth.then(|| instance.truth.clone()),
                    error: None,
                },
                Err(msg) => {
                    log::debug!("{} {} rep {rep} {method}: {msg}", spec.problem, point.label);
                    let k = spec.n_targets(point);
                    ReplicationRecord {
                        replication: rep,
                        method,
                        estimate: vec![f64::NAN; k],
                        finite: vec![false; k],
                        std_errors: None,
                        truth: None,
                        metrics: None,
                        error: Some(msg),
                    }
                }
            }
        })
        .collect()
}

const METRICS: [&str; 3] = ["mse", "mae", "mape"];

fn metric_value(m: &ErrorMetrics, metric: &str, component: Option<usize>) -> f64 {
    match (metric, component) {
        ("mse", None) => m.mse,
        ("mae", None) => m.mae,
        ("mape", None) => m.mape,
        ("mse", Some(k)) => m.se[k],
        ("mae", Some(k)) => m.ae[k],
        ("mape", Some(k)) => m.ape[k],
        _ => unreachable!("metric names are fixed"),
    }
}

/// Pairwise-fair summaries: a replication enters a row only if every method
/// produced a finite value for that component.
fn summarize_configs(spec: &ExperimentSpec, configs: &[ConfigResult]) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    for c in configs {
        let reps = spec.replications;
        let mut by_rep: Vec<Vec<&ReplicationRecord>> = vec![Vec::new(); reps];
        for r in &c.records {
            by_rep[r.replication].push(r);
        }
        let components: Vec<(Option<usize>, String)> = if spec.problem.pools_components() {
            vec![(None, POOLED_COMPONENT.to_string())]
        } else {
            c.components.iter().cloned().enumerate().map(|(k, l)| (Some(k), l)).collect()
        };
        for (component, label) in &components {
            let kept: Vec<usize> = (0..reps).filter(|&i| by_rep[i].iter().all(|r| r.usable(*component))).collect();
            let discards = reps - kept.len();
            for &method in &spec.methods {
                for metric in METRICS {
                    let values: Vec<f64> = kept
                        .iter()
                        .map(|&i| {
                            let r = by_rep[i].iter().find(|r| r.method == method).expect("record per method");
                            r.metrics.as_ref().map_or(f64::NAN, |m| metric_value(m, metric, *component))
                        })
                        .collect();
                    let summary = summarize(&values, true).ok().map(|mut s| {
                        s.discards += discards;
                        s
                    });
                    rows.push(SummaryRow {
                        method,
                        config: c.config.label.clone(),
                        component: label.clone(),
                        metric: metric.to_string(),
                        discards: summary.map_or(reps, |s| s.discards),
                        summary,
                    });
                }
            }
        }
    }
    rows
}

impl ExperimentSpec {
    /// The default study grid for each problem.
    pub fn default_for(problem: ProblemKind) -> Self {
        use Method::*;
        let base = Self {
            problem,
            sample_sizes: Vec::new(),
            signal_noise_levels: Vec::new(),
            n_assets: Vec::new(),
            replications: 1000,
            draws: default_draws(),
            burn_in: None,
            methods: Vec::new(),
            seed: 1,
            input_price: None,
            output_price: None,
            evaluation_points: None,
            prior_variance: default_prior_variance(),
            std_errors: false,
            probit_stats: ProbitStatAveraging::default(),
        };
        match problem {
            ProblemKind::OptimalInput => Self {
                sample_sizes: vec![20, 50, 500],
                signal_noise_levels: vec![0.1, 1.0, 5.0, 20.0],
                methods: vec![Plugin, MeloAnalytical, MeloSampled],
                ..base
            },
            ProblemKind::OddsRatio => Self {
                sample_sizes: vec![20, 50, 500, 1000],
                draws: 2000,
                burn_in: Some(500),
                methods: vec![Plugin, MeloSampled],
                ..base
            },
            ProblemKind::Portfolio => Self {
                sample_sizes: vec![120, 240],
                n_assets: vec![10, 25, 50, 100],
                replications: 100,
                draws: 1000,
                methods: vec![Plugin, MeloSampled],
                ..base
            },
            ProblemKind::Structural => Self {
                sample_sizes: vec![20, 50, 100, 1000, 20_000],
                signal_noise_levels: vec![0.1, 0.5, 1.0, 5.0],
                methods: vec![Ils2sls, MeloAnalytical],
                ..base
            },
        }
    }
}
