//! Dataset loading, run configuration and report serialization.
//!
//! Datasets are CSV files with a header and the columns `outcome`,
//! `treatment` (0/1) and `stratum` (any label), plus optional categorical
//! covariates named `cov_*`. Labels are mapped to dense ids in order of first
//! appearance. Row numbers in error messages count data rows from 1.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::designs::{Assignment, DesignConfig};
use crate::error::{Error, Result};
use crate::estimators::{EstimatorConfig, TrialData};
use crate::inference::{self, DesignQ, EstimateReport};
use crate::pipeline::{self, EstimatorKind, EstimatorSpec};
use crate::sim::GridCell;

/// Version tag written into every JSON document.
pub const SCHEMA_VERSION: u32 = 1;

/// Dense ids for string labels, in order of first appearance.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelMap {
    pub labels: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl LabelMap {
    pub fn id(&mut self, label: &str) -> usize {
        if let Some(&i) = self.index.get(label) {
            return i;
        }
        let i = self.labels.len();
        self.labels.push(label.to_string());
        self.index.insert(label.to_string(), i);
        i
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// A loaded dataset with the label maps needed to write it back.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub data: TrialData,
    pub strata: LabelMap,
    pub covariate_names: Vec<String>,
    pub covariate_levels: Vec<LabelMap>,
}

/// Unit-level design input: stratum labels and optional covariates, with no
/// outcome or treatment. Used by `assign`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitTable {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub strata: Vec<usize>,
    pub stratum_labels: LabelMap,
    pub covariates: Option<Vec<Vec<usize>>>,
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::InvalidData(format!("missing column '{name}'")))
}

fn covariate_columns(headers: &csv::StringRecord) -> Vec<(usize, String)> {
    headers
        .iter()
        .enumerate()
        .filter(|(_, h)| h.trim().starts_with("cov_"))
        .map(|(i, h)| (i, h.trim().to_string()))
        .collect()
}

fn field(rec: &csv::StringRecord, col: usize, row: usize) -> Result<&str> {
    rec.get(col).map(str::trim).ok_or_else(|| Error::Parse {
        row,
        msg: "record is missing fields".into(),
    })
}

/// Parses a dataset from any reader.
pub fn read_dataset<R: Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let c_y = column(&headers, "outcome")?;
    let c_a = column(&headers, "treatment")?;
    let c_s = column(&headers, "stratum")?;
    let covs = covariate_columns(&headers);

    let mut y = Vec::new();
    let mut a = Vec::new();
    let mut s = Vec::new();
    let mut strata = LabelMap::default();
    let mut levels = vec![LabelMap::default(); covs.len()];
    let mut cov_rows = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let row = idx + 1;
        let rec = rec.map_err(|e| Error::Parse {
            row,
            msg: e.to_string(),
        })?;
        let raw_y = field(&rec, c_y, row)?;
        let value: f64 = raw_y.parse().map_err(|_| Error::Parse {
            row,
            msg: format!("outcome '{raw_y}' is not a number"),
        })?;
        if !value.is_finite() {
            return Err(Error::Parse {
                row,
                msg: format!("outcome '{raw_y}' is not finite"),
            });
        }
        let raw_a = field(&rec, c_a, row)?;
        let arm = match raw_a {
            "0" => 0u8,
            "1" => 1u8,
            other => {
                return Err(Error::Parse {
                    row,
                    msg: format!("treatment '{other}' is not 0 or 1"),
                })
            }
        };
        s.push(strata.id(field(&rec, c_s, row)?));
        y.push(value);
        a.push(arm);
        if !covs.is_empty() {
            let mut r = Vec::with_capacity(covs.len());
            for (j, (c, _)) in covs.iter().enumerate() {
                r.push(levels[j].id(field(&rec, *c, row)?));
            }
            cov_rows.push(r);
        }
    }
    let mut data = TrialData::with_strata_count(y, Assignment::new(a)?, s, strata.len())?;
    if !covs.is_empty() {
        data = data.with_covariates(cov_rows)?;
    }
    Ok(Dataset {
        data,
        strata,
        covariate_names: covs.into_iter().map(|(_, n)| n).collect(),
        covariate_levels: levels,
    })
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    read_dataset(std::fs::File::open(path)?)
}

/// Writes a dataset in the format [`read_dataset`] accepts. Outcomes use
/// Rust's shortest round-trip representation, so reloading is exact.
pub fn write_dataset<W: Write>(ds: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["outcome".to_string(), "treatment".into(), "stratum".into()];
    header.extend(ds.covariate_names.iter().cloned());
    w.write_record(&header)?;
    for i in 0..ds.data.len() {
        let mut rec = vec![
            ds.data.y[i].to_string(),
            ds.data.arm(i).to_string(),
            ds.strata.labels[ds.data.strata[i]].clone(),
        ];
        if let Some(c) = &ds.data.covariates {
            for (j, &lvl) in c[i].iter().enumerate() {
                rec.push(ds.covariate_levels[j].labels[lvl].clone());
            }
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a unit table for assignment: a `stratum` column (or, failing that,
/// a single implicit stratum) and optional `cov_*` columns. All columns are
/// kept so they can be echoed next to the assignment.
pub fn read_units<R: Read>(reader: R) -> Result<UnitTable> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(reader);
    let headers = rdr.headers()?.clone();
    let c_s = headers.iter().position(|h| h.trim() == "stratum");
    let covs = covariate_columns(&headers);
    let mut rows = Vec::new();
    let mut strata = Vec::new();
    let mut labels = LabelMap::default();
    let mut levels = vec![LabelMap::default(); covs.len()];
    let mut cov_rows = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let row = idx + 1;
        let rec = rec.map_err(|e| Error::Parse {
            row,
            msg: e.to_string(),
        })?;
        strata.push(match c_s {
            Some(c) => labels.id(field(&rec, c, row)?),
            None => labels.id(""),
        });
        if !covs.is_empty() {
            let mut r = Vec::with_capacity(covs.len());
            for (j, (c, _)) in covs.iter().enumerate() {
                r.push(levels[j].id(field(&rec, *c, row)?));
            }
            cov_rows.push(r);
        }
        rows.push(rec.iter().map(str::to_string).collect());
    }
    Ok(UnitTable {
        headers: headers.iter().map(str::to_string).collect(),
        rows,
        strata,
        stratum_labels: labels,
        covariates: (!covs.is_empty()).then_some(cov_rows),
    })
}

/// Writes the unit table with a `treatment` column appended.
pub fn write_assignment<W: Write>(units: &UnitTable, a: &Assignment, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = units.headers.clone();
    header.push("treatment".into());
    w.write_record(&header)?;
    for (row, t) in units.rows.iter().zip(a.as_slice()) {
        let mut rec = row.clone();
        rec.push(t.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn default_estimators() -> Vec<EstimatorSpec> {
    vec![
        EstimatorSpec::new(EstimatorKind::NaiveDim),
        EstimatorSpec::new(EstimatorKind::StrDim),
        EstimatorSpec::new(EstimatorKind::Md),
        EstimatorSpec::new(EstimatorKind::WtMd),
        EstimatorSpec::new(EstimatorKind::Tdim),
        EstimatorSpec::new(EstimatorKind::Str),
    ]
}

fn default_alpha() -> f64 {
    0.05
}

/// Configuration of `analyze`.
///
/// `design` supplies the target probability and the design's imbalance
/// variance. Without it the target is the realized `n_1/n` and simple
/// randomization is assumed, which is the largest imbalance variance and
/// therefore the cautious choice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_estimators")]
    pub estimators: Vec<EstimatorSpec>,
    #[serde(default)]
    pub design: Option<DesignConfig>,
    #[serde(default)]
    pub estimator_config: EstimatorConfig,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            estimators: default_estimators(),
            design: None,
            estimator_config: EstimatorConfig::default(),
            alpha: default_alpha(),
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if let Some(d) = &self.design {
            d.validate()?;
        }
        self.estimator_config.validate()
    }
}

/// Failure of a single estimator inside an analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorFailure {
    pub estimator: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub reports: Vec<EstimateReport>,
    pub failures: Vec<EstimatorFailure>,
}

/// Runs every requested estimator. A failing estimator is recorded in
/// `failures` and does not stop the others.
pub fn analyze(data: &TrialData, config: &RunConfig) -> Result<AnalysisReport> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidData("dataset is empty".into()));
    }
    let (pi, q) = match &config.design {
        Some(d) => (d.pi, inference::q_for_design(d, d.pi)),
        None => {
            let p = data.a.n_treated() as f64 / data.len() as f64;
            (p, DesignQ::Known(p * (1.0 - p)))
        }
    };
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for spec in &config.estimators {
        match pipeline::evaluate(
            data,
            spec,
            &config.estimator_config,
            pi,
            q,
            config.alpha,
            config.seed,
        ) {
            Ok(r) => reports.push(r),
            Err(e) => failures.push(EstimatorFailure {
                estimator: spec.label(),
                message: e.to_string(),
            }),
        }
    }
    Ok(AnalysisReport { reports, failures })
}

/// Rounds to six significant digits.
pub fn round_sig(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.5e}").parse().unwrap_or(x)
}

/// Six-significant-digit rendering; empty for missing values.
pub fn fmt_sig(x: Option<f64>) -> String {
    match x {
        Some(v) if v.is_finite() => round_sig(v).to_string(),
        Some(v) => v.to_string(),
        None => String::new(),
    }
}

/// Column order of the report CSV.
pub const REPORT_COLUMNS: [&str; 6] = ["estimator", "tau_hat", "se", "ci_lo", "ci_hi", "length"];

pub fn write_reports_csv<W: Write>(reports: &[EstimateReport], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(REPORT_COLUMNS)?;
    for r in reports {
        w.write_record([
            r.estimator.clone(),
            fmt_sig(Some(r.tau_hat)),
            fmt_sig(r.se),
            fmt_sig(r.ci_lo),
            fmt_sig(r.ci_hi),
            fmt_sig(r.length),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Column order of the simulation CSV.
pub const SIM_COLUMNS: [&str; 13] = [
    "model",
    "tail",
    "design",
    "n",
    "estimator",
    "reps",
    "bias",
    "sd",
    "se",
    "cp",
    "length",
    "rmse",
    "note",
];

pub fn write_grid_csv<W: Write>(cells: &[GridCell], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(SIM_COLUMNS)?;
    for c in cells {
        for r in &c.result.rows {
            w.write_record([
                c.model_id.to_string(),
                c.tail.name().to_string(),
                c.design.clone(),
                c.n.to_string(),
                r.estimator.clone(),
                r.reps.to_string(),
                fmt_sig(Some(r.bias)),
                fmt_sig(Some(r.sd)),
                fmt_sig(r.se),
                fmt_sig(r.cp),
                fmt_sig(r.length),
                fmt_sig(Some(r.rmse)),
                r.note.clone().unwrap_or_default(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Versioned JSON envelope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub schema_version: u32,
    pub kind: String,
    pub payload: T,
}

fn round_json(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Number(n) if n.is_f64() => {
            if let Some(r) = n
                .as_f64()
                .map(round_sig)
                .and_then(serde_json::Number::from_f64)
            {
                *n = r;
            }
        }
        serde_json::Value::Array(a) => a.iter_mut().for_each(round_json),
        serde_json::Value::Object(o) => o.values_mut().for_each(round_json),
        _ => {}
    }
}

/// Serializes `payload` inside an [`Envelope`], with floats rounded to six
/// significant digits.
pub fn write_json<T: Serialize, W: Write>(kind: &str, payload: &T, mut writer: W) -> Result<()> {
    let mut v = serde_json::to_value(Envelope {
        schema_version: SCHEMA_VERSION,
        kind: kind.to_string(),
        payload,
    })?;
    round_json(&mut v);
    serde_json::to_writer_pretty(&mut writer, &v)?;
    writeln!(writer)?;
    Ok(())
}

/// Output format of [`emit`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::InvalidConfig(format!("unknown format '{other}'"))),
        }
    }
}

/// Things [`emit`] can write.
pub enum Emittable<'a> {
    Analysis(&'a AnalysisReport),
    Grid(&'a [GridCell]),
}

pub fn emit<W: Write>(item: Emittable<'_>, format: Format, writer: W) -> Result<()> {
    match (item, format) {
        (Emittable::Analysis(r), Format::Csv) => write_reports_csv(&r.reports, writer),
        (Emittable::Analysis(r), Format::Json) => write_json("analysis", r, writer),
        (Emittable::Grid(g), Format::Csv) => write_grid_csv(g, writer),
        (Emittable::Grid(g), Format::Json) => write_json("simulation", &g, writer),
    }
}

/// [`emit`] to a file path.
pub fn emit_to_path(item: Emittable<'_>, format: Format, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    emit(item, format, std::io::BufWriter::new(file))
}
