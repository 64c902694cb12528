//! Monte-Carlo studies, summary tables and estimation on user data.

mod experiment;
mod io;
mod metrics;

pub use experiment::*;
pub use io::*;
pub use metrics::*;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::problems::{fit_method, Dataset, FitSettings, Method, ProblemInstance};
use crate::rng::RandomStream;

/// One line of the `estimate` output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub method: Method,
    pub component: String,
    pub estimate: f64,
    pub std_error: Option<f64>,
}

/// Runs `methods` on one dataset with frequentist standard errors.
///
/// Each method draws from its own stream derived from `seed`, so results do not
/// depend on which other methods are requested.
pub fn estimate_dataset(
    instance: &ProblemInstance,
    data: &Dataset,
    methods: &[Method],
    settings: &FitSettings,
    seed: u64,
) -> Result<Vec<EstimateRow>> {
    let root = RandomStream::new(seed);
    let labels = instance.labels();
    let mut rows = Vec::new();
    for &m in methods {
        let tag = Method::ALL.iter().position(|&x| x == m).expect("method listed in ALL") as u64;
        let mut rng = root.derive(&[tag]).rng();
        let out = fit_method(instance, data, m, settings, &mut rng)?;
        for (k, label) in labels.iter().enumerate() {
            rows.push(EstimateRow {
                method: m,
                component: label.clone(),
                estimate: out.value[k],
                std_error: out.std_errors.as_ref().map(|s| s[k]),
            });
        }
    }
    Ok(rows)
}

pub fn write_estimates_csv(rows: &[EstimateRow], out: impl std::io::Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "component", "estimate", "std_error"])?;
    for r in rows {
        w.write_record([
            r.method.name().to_string(),
            r.component.clone(),
            format_value(r.estimate),
            r.std_error.map_or("NA".into(), format_value),
        ])?;
    }
    w.flush()?;
    Ok(())
}
