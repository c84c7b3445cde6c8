use std::fs;

use car_heavytail::designs::{Assignment, DesignConfig};
use car_heavytail::estimators::TrialData;
use car_heavytail::inference::VarianceKind;
use car_heavytail::io::{
    self, AnalysisReport, Emittable, Envelope, Format, RunConfig, REPORT_COLUMNS,
};
use car_heavytail::pipeline::{EstimatorKind, EstimatorSpec};
use car_heavytail::Error;

const FIXTURE: &str = "\
outcome,treatment,stratum,cov_age
1.25,1,F<35,young
-0.5,0,F\u{2265}35,old
3.125,0,F<35,young
0.75,1,F\u{2265}35,young
";

#[test]
fn dataset_round_trips_exactly() {
    let ds = io::read_dataset(FIXTURE.as_bytes()).unwrap();
    assert_eq!(ds.data.len(), 4);
    assert_eq!(ds.data.strata, vec![0, 1, 0, 1]);
    assert_eq!(ds.covariate_names, vec!["cov_age".to_string()]);
    let mut buf = Vec::new();
    io::write_dataset(&ds, &mut buf).unwrap();
    let again = io::read_dataset(buf.as_slice()).unwrap();
    assert_eq!(again, ds);
}

#[test]
fn bad_treatment_reports_row() {
    let mut text = String::from("outcome,treatment,stratum\n");
    for i in 0..6 {
        text.push_str(&format!("{i},{},a\n", i % 2));
    }
    text.push_str("7,2,a\n");
    match io::read_dataset(text.as_bytes()) {
        Err(Error::Parse { row, .. }) => assert_eq!(row, 7),
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn load_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trial.csv");
    fs::write(&path, FIXTURE).unwrap();
    let ds = io::load_dataset(&path).unwrap();
    assert_eq!(ds.data.y, vec![1.25, -0.5, 3.125, 0.75]);
    assert!(matches!(
        io::load_dataset(&dir.path().join("missing.csv")),
        Err(Error::Io(_))
    ));
}

fn identical_arms(n_per_cell: usize) -> TrialData {
    let mut y = Vec::new();
    let mut a = Vec::new();
    let mut s = Vec::new();
    for k in 0..2 {
        for arm in 0..2u8 {
            for i in 0..n_per_cell {
                // Same outcome multiset in both arms of each stratum.
                y.push(((i * 37 + k * 11) % 101) as f64 / 10.0 - 5.0);
                a.push(arm);
                s.push(k);
            }
        }
    }
    TrialData::new(y, Assignment::new(a).unwrap(), s).unwrap()
}

#[test]
fn identical_arms_estimate_zero() {
    let data = identical_arms(60);
    let report = io::analyze(&data, &RunConfig::default()).unwrap();
    assert!(report.failures.is_empty(), "{:?}", report.failures);
    for r in &report.reports {
        match r.se {
            // Cross-fitting splits the two arms differently, so the one-step
            // estimators are only zero up to sampling noise.
            Some(se) => {
                assert!(
                    r.tau_hat.abs() < se,
                    "{} gave {} (se {se})",
                    r.estimator,
                    r.tau_hat
                );
                assert_eq!(
                    r.covers(0.0),
                    Some(true),
                    "{} interval misses zero",
                    r.estimator
                );
            }
            None => assert!(r.tau_hat.abs() < 1e-9, "{} gave {}", r.estimator, r.tau_hat),
        }
    }
}

#[test]
fn minimization_refuses_tdim_variance_only() {
    let data = identical_arms(60);
    let cfg = RunConfig {
        estimators: vec![
            EstimatorSpec::new(EstimatorKind::Tdim),
            EstimatorSpec::new(EstimatorKind::Str),
        ],
        design: Some(DesignConfig::minimization(0.5, 0.85, vec![1.0])),
        ..RunConfig::default()
    };
    let report = io::analyze(&data, &cfg).unwrap();
    let tdim = &report.reports[0];
    assert!(tdim.se.is_none());
    assert!(tdim
        .note
        .as_deref()
        .unwrap()
        .contains("not universally applicable"));
    assert!(report.reports[1].se.is_some());
}

#[test]
fn failures_are_isolated() {
    // A singleton cell breaks the stratified variance but not the medians.
    let y = vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
    let a = Assignment::new(vec![0, 1, 0, 1, 0, 1, 1]).unwrap();
    let data = TrialData::new(y, a, vec![0, 0, 0, 0, 1, 1, 1]).unwrap();
    let cfg = RunConfig {
        estimators: vec![
            EstimatorSpec::new(EstimatorKind::Md),
            EstimatorSpec::new(EstimatorKind::StrDim),
        ],
        ..RunConfig::default()
    };
    let report = io::analyze(&data, &cfg).unwrap();
    assert_eq!(report.reports.len(), 1);
    assert_eq!(report.failures.len(), 1);
    assert_eq!(report.failures[0].estimator, "str_dim");
}

#[test]
fn same_seed_same_report() {
    let data = identical_arms(80);
    let mut shifted = data.clone();
    for i in 0..shifted.len() {
        shifted.y[i] += f64::from(shifted.arm(i)) * 0.3 + (i as f64 * 0.7).sin();
    }
    let cfg = RunConfig {
        seed: 17,
        ..RunConfig::default()
    };
    assert_eq!(
        io::analyze(&shifted, &cfg).unwrap(),
        io::analyze(&shifted, &cfg).unwrap()
    );
}

#[test]
fn empty_report_is_header_only_csv() {
    let empty = AnalysisReport {
        reports: vec![],
        failures: vec![],
    };
    let mut buf = Vec::new();
    io::emit(Emittable::Analysis(&empty), Format::Csv, &mut buf).unwrap();
    assert_eq!(
        String::from_utf8(buf).unwrap().trim_end(),
        REPORT_COLUMNS.join(",")
    );
}

#[test]
fn csv_columns_and_significant_digits() {
    let r = car_heavytail::inference::wald_ci(0.123456789, 2.0, 100, 0.05).unwrap();
    let report = AnalysisReport {
        reports: vec![r],
        failures: vec![],
    };
    let mut buf = Vec::new();
    io::emit(Emittable::Analysis(&report), Format::Csv, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "estimator,tau_hat,se,ci_lo,ci_hi,length"
    );
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[1], "0.123457");
}

#[test]
fn json_round_trip() {
    let data = identical_arms(40);
    let cfg = RunConfig {
        estimators: vec![
            EstimatorSpec::new(EstimatorKind::NaiveDim),
            EstimatorSpec::new(EstimatorKind::Md),
            EstimatorSpec::new(EstimatorKind::Tdim).with_variance(VarianceKind::Conservative),
        ],
        ..RunConfig::default()
    };
    let report = io::analyze(&data, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("out.json");
    io::emit_to_path(Emittable::Analysis(&report), Format::Json, &path).unwrap();
    let back: Envelope<AnalysisReport> =
        serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(back.schema_version, io::SCHEMA_VERSION);
    assert_eq!(back.kind, "analysis");
    assert_eq!(back.payload.reports.len(), report.reports.len());
    for (b, r) in back.payload.reports.iter().zip(&report.reports) {
        assert_eq!(b.estimator, r.estimator);
        assert_eq!(b.note, r.note);
        let close = |x: Option<f64>, y: Option<f64>| match (x, y) {
            (Some(x), Some(y)) => (x - y).abs() <= 1e-5 * y.abs().max(1e-12),
            (None, None) => true,
            _ => false,
        };
        assert!(
            close(Some(b.tau_hat), Some(r.tau_hat))
                && close(b.se, r.se)
                && close(b.length, r.length)
        );
    }
    let reparsed: Envelope<AnalysisReport> =
        serde_json::from_str(&serde_json::to_string(&back).unwrap()).unwrap();
    assert_eq!(reparsed, back);
}

#[test]
fn config_rejects_unknown_keys_and_bad_alpha() {
    assert!(RunConfig::from_json(r#"{"alpah": 0.1}"#).is_err());
    assert!(RunConfig::from_json(r#"{"alpha": 1.5}"#)
        .unwrap_err()
        .is_validation());
    let ok = RunConfig::from_json(
        r#"{"estimators": [{"kind": "str", "initial": "diff_medians"}], "alpha": 0.1}"#,
    )
    .unwrap();
    assert_eq!(ok.estimators.len(), 1);
}
