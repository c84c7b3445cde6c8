//! Estimator selection and the estimate-then-infer step shared by the
//! simulation harness and the `analyze` command.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{self, EstimatorConfig, InitialEstimator, Transformed, TrialData};
use crate::inference::{self, DesignQ, EstimateReport, VarianceKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    NaiveDim,
    StrDim,
    Md,
    WtMd,
    StrMd,
    Tdim,
    Str,
}

impl EstimatorKind {
    pub fn label(self) -> &'static str {
        match self {
            EstimatorKind::NaiveDim => "naive_dim",
            EstimatorKind::StrDim => "str_dim",
            EstimatorKind::Md => "md",
            EstimatorKind::WtMd => "wt_md",
            EstimatorKind::StrMd => "str_md",
            EstimatorKind::Tdim => "tdim",
            EstimatorKind::Str => "str",
        }
    }

    /// Variance reported when none is requested explicitly.
    pub fn default_variance(self) -> Option<VarianceKind> {
        match self {
            EstimatorKind::NaiveDim | EstimatorKind::Tdim => Some(VarianceKind::Tdim),
            EstimatorKind::StrDim | EstimatorKind::Str => Some(VarianceKind::Str),
            EstimatorKind::Md | EstimatorKind::WtMd | EstimatorKind::StrMd => None,
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "naive_dim" | "dim" => EstimatorKind::NaiveDim,
            "str_dim" => EstimatorKind::StrDim,
            "md" => EstimatorKind::Md,
            "wt_md" => EstimatorKind::WtMd,
            "str_md" => EstimatorKind::StrMd,
            "tdim" => EstimatorKind::Tdim,
            "str" => EstimatorKind::Str,
            other => return Err(Error::InvalidConfig(format!("unknown estimator '{other}'"))),
        })
    }
}

/// One requested estimator with optional overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSpec {
    pub kind: EstimatorKind,
    /// Initial estimator for `tdim`/`str`; the shared config's default otherwise.
    #[serde(default)]
    pub initial: Option<InitialEstimator>,
    /// Variance estimator; the estimator's default otherwise.
    #[serde(default)]
    pub variance: Option<VarianceKind>,
}

impl EstimatorSpec {
    pub fn new(kind: EstimatorKind) -> Self {
        Self {
            kind,
            initial: None,
            variance: None,
        }
    }

    pub fn with_initial(mut self, initial: InitialEstimator) -> Self {
        self.initial = Some(initial);
        self
    }

    pub fn with_variance(mut self, variance: VarianceKind) -> Self {
        self.variance = Some(variance);
        self
    }

    pub fn variance_kind(&self) -> Option<VarianceKind> {
        self.variance.or(self.kind.default_variance())
    }

    /// Report label: the estimator name, with the variance appended when it
    /// differs from the estimator's default.
    pub fn label(&self) -> String {
        match self.variance {
            Some(v) if Some(v) != self.kind.default_variance() => {
                format!("{}[{}]", self.kind.label(), v.label())
            }
            _ => self.kind.label().to_string(),
        }
    }
}

/// The estimator set of the simulation tables: both differences in means,
/// both median estimators, `tdim` started from `md` and `str` from `wt_md`.
pub fn table_estimators() -> Vec<EstimatorSpec> {
    vec![
        EstimatorSpec::new(EstimatorKind::NaiveDim),
        EstimatorSpec::new(EstimatorKind::StrDim),
        EstimatorSpec::new(EstimatorKind::Md),
        EstimatorSpec::new(EstimatorKind::WtMd),
        EstimatorSpec::new(EstimatorKind::Tdim).with_initial(InitialEstimator::DiffMedians),
        EstimatorSpec::new(EstimatorKind::Str).with_initial(InitialEstimator::DiffWeightedMedians),
    ]
}

const MEDIAN_NOTE: &str = "no variance estimator for median-based estimators";
const VANISHED_NOTE: &str = "estimated score vanished; no interval for the initial estimate";

/// Computes one estimate with its interval.
///
/// A variance that does not apply to the design (for example the `tdim`
/// variance under minimization) yields a point-only report whose `note`
/// carries the refusal. So does a score that vanished in the variance step,
/// since every transformed outcome is then zero. Every other error is
/// returned.
pub fn evaluate(
    data: &TrialData,
    spec: &EstimatorSpec,
    config: &EstimatorConfig,
    pi: f64,
    design_q: DesignQ,
    alpha: f64,
    seed: u64,
) -> Result<EstimateReport> {
    let n = data.len();
    let label = spec.label();
    let (tau_hat, z, pi_used, fisher) = match spec.kind {
        EstimatorKind::Md => {
            let t = estimators::diff_in_medians(data)?;
            return Ok(point_only(&label, t, n, alpha, MEDIAN_NOTE));
        }
        EstimatorKind::WtMd => {
            let t = estimators::diff_in_weighted_medians(data, &data.treated_fractions())?;
            return Ok(point_only(&label, t, n, alpha, MEDIAN_NOTE));
        }
        EstimatorKind::StrMd => {
            let t = estimators::stratified_diff_in_medians(data)?;
            return Ok(point_only(&label, t, n, alpha, MEDIAN_NOTE));
        }
        EstimatorKind::NaiveDim => (estimators::naive_dim(data)?, data.y.clone(), pi, None),
        EstimatorKind::StrDim => (estimators::stratified_dim(data)?, data.y.clone(), pi, None),
        EstimatorKind::Tdim | EstimatorKind::Str => {
            let kind = if spec.kind == EstimatorKind::Tdim {
                Transformed::Tdim
            } else {
                Transformed::Str
            };
            let mut cfg = config.clone();
            if let Some(init) = spec.initial {
                cfg.initial = init;
            }
            let est = estimators::transformed_estimate(data, kind, &cfg, pi, seed)?;
            (est.tau_hat, est.z.z_hat, est.pi, Some(est.var_fisher_hat))
        }
    };
    let Some(vkind) = spec.variance_kind() else {
        return Ok(point_only(&label, tau_hat, n, alpha, MEDIAN_NOTE));
    };
    if fisher == Some(0.0) {
        return Ok(point_only(&label, tau_hat, n, alpha, VANISHED_NOTE));
    }
    let sigma2 = match inference::select_variance(vkind, &z, data, pi_used, design_q, fisher) {
        Ok(v) => v,
        Err(Error::NotApplicable(msg)) => return Ok(point_only(&label, tau_hat, n, alpha, &msg)),
        Err(e) => return Err(e),
    };
    let mut report = inference::wald_ci(tau_hat, sigma2, n, alpha)?;
    report.estimator = label;
    report.variance = Some(vkind.label().to_string());
    Ok(report)
}

fn point_only(label: &str, tau_hat: f64, n: usize, alpha: f64, note: &str) -> EstimateReport {
    EstimateReport::point_only(label, tau_hat, n, alpha, note)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_and_parsing() {
        assert_eq!(
            "str-dim".parse::<EstimatorKind>().unwrap(),
            EstimatorKind::StrDim
        );
        assert!("foo".parse::<EstimatorKind>().is_err());
        let s = EstimatorSpec::new(EstimatorKind::Tdim).with_variance(VarianceKind::Conservative);
        assert_eq!(s.label(), "tdim[conservative]");
        let s = EstimatorSpec::new(EstimatorKind::Str).with_variance(VarianceKind::Str);
        assert_eq!(s.label(), "str");
    }
}
