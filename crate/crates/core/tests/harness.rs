use std::io::Write;

use melo::harness::{
    format_value, load_csv_dataset, parse_value, read_summaries_csv, run_experiment, summarize, write_experiment_outputs,
    write_summaries_csv, DataSchema, ExperimentSpec, SUMMARIES_FILE,
};
use melo::problems::{Dataset, Method, ProblemKind};
use melo::MeloError;
use proptest::prelude::*;

fn spec(json: &str) -> ExperimentSpec {
    ExperimentSpec::from_json(json).unwrap()
}

fn small(kind: ProblemKind) -> ExperimentSpec {
    let mut s = ExperimentSpec::default_for(kind);
    s.replications = 4;
    s.draws = 300;
    s.burn_in = Some(100);
    s
}

fn csv_file(text: &str) -> tempfile::NamedTempFile {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    f.write_all(text.as_bytes()).unwrap();
    f
}

#[test]
fn runs_are_deterministic_and_thread_independent() {
    for kind in ProblemKind::ALL {
        let s = small(kind);
        let a = run_experiment(&s, Some(1)).unwrap();
        let b = run_experiment(&s, Some(4)).unwrap();
        let c = run_experiment(&s, Some(4)).unwrap();
        assert_eq!(a, b, "{kind}");
        assert_eq!(b, c, "{kind}");
    }
}

#[test]
fn seeds_change_results() {
    let mut s = small(ProblemKind::OptimalInput);
    let a = run_experiment(&s, Some(1)).unwrap();
    s.seed += 1;
    let b = run_experiment(&s, Some(1)).unwrap();
    assert_ne!(a.summaries, b.summaries);
}

#[test]
fn config_streams_do_not_depend_on_the_grid() {
    let full = spec(r#"{"problem":"structural","sample_sizes":[20,50],"signal_noise_levels":[1],"replications":3,"methods":["ils_2sls"],"seed":4}"#);
    let one = spec(r#"{"problem":"structural","sample_sizes":[50],"signal_noise_levels":[1],"replications":3,"methods":["ils_2sls"],"seed":4}"#);
    let a = run_experiment(&full, Some(1)).unwrap();
    let b = run_experiment(&one, Some(1)).unwrap();
    assert_eq!(a.configs[1].records, b.configs[0].records);
}

#[test]
fn every_summary_row_is_consistent() {
    for kind in ProblemKind::ALL {
        let r = run_experiment(&small(kind), Some(2)).unwrap();
        assert!(!r.summaries.is_empty());
        for row in &r.summaries {
            if let Some(s) = &row.summary {
                assert!(s.is_consistent(), "{kind} {row:?}");
                assert_eq!(s.n + row.discards, r.spec.replications, "{kind} {row:?}");
            }
        }
    }
}

#[test]
fn noiseless_optimal_input_recovers_the_truth() {
    let s = spec(
        r#"{"problem":"optimal_input","sample_sizes":[50],"signal_noise_levels":[1e16],"replications":5,"draws":500,
            "methods":["plugin","melo_analytical","melo_sampled"],"seed":1}"#,
    );
    let r = run_experiment(&s, Some(1)).unwrap();
    for rec in &r.configs[0].records {
        assert!((rec.estimate[0] - 187.5).abs() < 1e-5, "{rec:?}");
    }
    for m in [Method::Plugin, Method::MeloAnalytical, Method::MeloSampled] {
        assert!(r.summary(m, &r.configs[0].config.label, "x_opt", "mse").unwrap().max < 1e-9);
    }
}

#[test]
fn summaries_round_trip_through_csv() {
    let r = run_experiment(&small(ProblemKind::OddsRatio), Some(1)).unwrap();
    let mut buf = Vec::new();
    write_summaries_csv(&r.summaries, &mut buf).unwrap();
    let back = read_summaries_csv(buf.as_slice()).unwrap();
    assert_eq!(back.len(), r.summaries.len());
    let mut again = Vec::new();
    write_summaries_csv(&back, &mut again).unwrap();
    assert_eq!(buf, again);
}

#[test]
fn outputs_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let r = run_experiment(&small(ProblemKind::Portfolio), Some(1)).unwrap();
    write_experiment_outputs(&r, dir.path()).unwrap();
    let text = std::fs::read_to_string(dir.path().join(SUMMARIES_FILE)).unwrap();
    assert!(text.starts_with("method,config,component,metric,min,q1,median,mean,q3,max,range,n,discards"));
    assert!(text.contains(",all,mse,"));
}

#[test]
fn invalid_specs_are_config_errors() {
    let bad = [
        r#"{"problem":"structural","sample_sizes":[20],"signal_noise_levels":[1],"replications":2,"methods":["ils_3sls"],"seed":1}"#,
        r#"{"problem":"structural","sample_sizes":[20],"signal_noise_levels":[1],"replications":0,"methods":["ils_2sls"],"seed":1}"#,
        r#"{"problem":"odds_ratio","sample_sizes":[20],"replications":2,"methods":["melo_analytical"],"seed":1}"#,
        r#"{"problem":"portfolio","n_assets":[10],"sample_sizes":[12],"replications":2,"methods":["plugin"],"seed":1}"#,
        r#"{"problem":"optimal_input","sample_sizes":[20],"signal_noise_levels":[1],"replications":2,"methods":["plugin"],"seed":1,"colour":3}"#,
    ];
    for b in bad {
        let r = ExperimentSpec::from_json(b).and_then(|s| s.validate());
        assert!(matches!(r, Err(MeloError::Config(_))), "{b}: {r:?}");
    }
}

#[test]
fn loader_reads_challenger() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/data/challenger.csv");
    let schema = DataSchema::Binary { response: "failure".into(), covariates: vec!["temperature".into()] };
    let d = load_csv_dataset(path, &schema).unwrap();
    assert_eq!(d.n_rows, 23);
    let Dataset::Binary { y, x } = d.dataset else { panic!("binary data expected") };
    assert_eq!(y.iter().sum::<f64>(), 7.0);
    assert_eq!(x.ncols(), 2);
    assert!(x.column(0).iter().all(|&v| v == 1.0));
}

#[test]
fn loader_errors() {
    let prod = DataSchema::Production { input: "x".into(), output: "y".into() };
    let bin = DataSchema::Binary { response: "y".into(), covariates: vec!["x".into()] };
    assert!(matches!(load_csv_dataset(csv_file("").path(), &prod), Err(MeloError::EmptyFile(_))));
    assert!(matches!(load_csv_dataset(csv_file("x,y\n").path(), &prod), Err(MeloError::EmptyFile(_))));
    assert!(matches!(load_csv_dataset(csv_file("x,z\n1,2\n").path(), &prod), Err(MeloError::MissingColumn(c)) if c == "y"));
    match load_csv_dataset(csv_file("x,y\n1,2\n3,abc\n").path(), &prod) {
        Err(MeloError::Parse { row, column, value }) => assert_eq!((row, column.as_str(), value.as_str()), (2, "y", "abc")),
        other => panic!("{other:?}"),
    }
    assert!(matches!(load_csv_dataset(csv_file("x,y\n1,\n").path(), &prod), Err(MeloError::InvalidValue { .. })));
    assert!(matches!(load_csv_dataset(csv_file("x,y\n1,inf\n").path(), &prod), Err(MeloError::InvalidValue { .. })));
    assert!(matches!(load_csv_dataset(csv_file("x,y\n1,2\n2,0.5\n").path(), &bin), Err(MeloError::InvalidValue { .. })));
    assert!(matches!(load_csv_dataset("/nonexistent/file.csv", &prod), Err(MeloError::Io(_))));
}

#[test]
fn empty_summary_is_an_error() {
    assert!(matches!(summarize(&[f64::NAN, f64::INFINITY], true), Err(MeloError::EmptySummary)));
}

proptest! {
    #[test]
    fn summary_invariants(v in proptest::collection::vec(-1e9f64..1e9, 1..200)) {
        let s = summarize(&v, false).unwrap();
        prop_assert!(s.is_consistent());
        prop_assert_eq!(s.n, v.len());
        let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assert_eq!(s.min, min);
    }

    #[test]
    fn formatted_values_parse_back(x in prop_oneof![-1e12f64..1e12, -1e-5f64..1e-5]) {
        let back = parse_value(&format_value(x)).unwrap();
        let tol = if x.abs() >= 1e6 || (x != 0.0 && x.abs() < 1e-6) { 1e-4 * x.abs() } else { 5e-5 };
        prop_assert!((back - x).abs() <= tol, "{} -> {}", x, back);
    }
}
