//! Kernel estimates of the control-outcome density and its score `f'/f`.
//!
//! The density is the exact kernel sum `(1/(m h)) Σ K((y - Y_i)/h)`; its first
//! two derivatives are the analytic derivatives of that sum. The score is
//! truncated to zero outside the region where the density is above a floor,
//! `|y|` is within a domain half-width, and both derivative ratios are capped.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest fitting sample accepted by [`fit_score`].
pub const MIN_FIT_SIZE: usize = 20;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
const TRIWEIGHT_NORM: f64 = 35.0 / 32.0;

/// Converts the Gaussian rule-of-thumb bandwidth into a triweight half-width.
/// Matching kernel variances would give 3 (the triweight on `[-1, 1]` has
/// variance 1/9). The smaller value keeps the Fisher information estimate
/// close to its target at a few thousand observations.
pub const TRIWEIGHT_BANDWIDTH_FACTOR: f64 = 2.7 / BANDWIDTH_CONSTANT;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Gaussian,
    #[default]
    Triweight,
}

impl KernelKind {
    /// `(K(u), K'(u), K''(u))`.
    #[inline]
    fn eval(self, u: f64) -> (f64, f64, f64) {
        match self {
            KernelKind::Gaussian => {
                let k = INV_SQRT_2PI * (-0.5 * u * u).exp();
                (k, -u * k, (u * u - 1.0) * k)
            }
            KernelKind::Triweight => {
                if u.abs() >= 1.0 {
                    return (0.0, 0.0, 0.0);
                }
                let v = 1.0 - u * u;
                (
                    TRIWEIGHT_NORM * v * v * v,
                    -6.0 * TRIWEIGHT_NORM * u * v * v,
                    TRIWEIGHT_NORM * (24.0 * u * u * v - 6.0 * v * v),
                )
            }
        }
    }

    /// Half-width of the support in bandwidth units, if compact.
    fn support(self) -> Option<f64> {
        match self {
            KernelKind::Gaussian => None,
            KernelKind::Triweight => Some(1.0),
        }
    }
}

/// Kernel family plus bandwidth. For the triweight kernel the bandwidth is
/// the support half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub bandwidth: f64,
}

/// Truncation field for the score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    /// Cap on `|f''| / f`.
    pub b_n: f64,
    /// Cap on `|f'| / f`, hence on `|score|`.
    pub c_n: f64,
    /// Density floor.
    pub d_n: f64,
    /// Domain half-width: the score is zero for `|y| > e_n`.
    pub e_n: f64,
}

impl Thresholds {
    /// Thresholds that never truncate anything.
    pub fn wide() -> Self {
        Self {
            b_n: f64::INFINITY,
            c_n: f64::INFINITY,
            d_n: 0.0,
            e_n: f64::INFINITY,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = |v: f64| v >= 0.0 && !v.is_nan();
        if ok(self.b_n) && ok(self.c_n) && ok(self.d_n) && ok(self.e_n) {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "truncation thresholds must be nonnegative: {self:?}"
            )))
        }
    }
}

/// How automatic thresholds are derived from the fitting sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdRule {
    /// Domain from the 0.5%/99.5% quantiles, a density floor proportional to
    /// the inverse robust scale, and derivative caps loose enough that they
    /// only remove numerically unstable points. Calibrated for efficiency.
    #[default]
    Calibrated,
    /// `c_n = 1/(h log m)`, `b_n = 1/(h^2 log m)`, `d_n = 0.01/e_n`. These
    /// shrink `h c_n` toward zero and pass [`validate_rates`], at the cost of
    /// truncating most of a light-tailed score.
    RateConforming,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdChoice {
    Auto(ThresholdRule),
    Explicit(Thresholds),
}

impl Default for ThresholdChoice {
    fn default() -> Self {
        ThresholdChoice::Auto(ThresholdRule::default())
    }
}

/// Everything needed to turn a fitting sample into a [`ScoreModel`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoreOptions {
    pub kernel: KernelKind,
    /// Fixed bandwidth; `None` selects it from the data.
    pub bandwidth: Option<f64>,
    /// Multiplier applied to the bandwidth after selection.
    pub bandwidth_scale: f64,
    pub thresholds: ThresholdChoice,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        Self {
            kernel: KernelKind::Triweight,
            bandwidth: None,
            bandwidth_scale: 1.0,
            thresholds: ThresholdChoice::default(),
        }
    }
}

/// Fitted kernel density and truncated score. Immutable once fitted apart
/// from the Fisher information, which is only known after cross-fitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreModel {
    sample: Vec<f64>,
    kernel: KernelSpec,
    thresholds: Thresholds,
    fisher_hat: Option<f64>,
}

/// Density and its first two derivatives at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityJet {
    pub f: f64,
    pub f1: f64,
    pub f2: f64,
}

impl ScoreModel {
    /// Builds a model from explicit parts. The sample is sorted internally;
    /// evaluation results do not depend on its order.
    pub fn new(sample: &[f64], kernel: KernelSpec, thresholds: Thresholds) -> Result<Self> {
        if sample.is_empty() {
            return Err(Error::NoFittingData);
        }
        if sample.iter().any(|y| !y.is_finite()) {
            return Err(Error::InvalidData(
                "non-finite value in fitting sample".into(),
            ));
        }
        if !(kernel.bandwidth > 0.0 && kernel.bandwidth.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "bandwidth must be positive, got {}",
                kernel.bandwidth
            )));
        }
        thresholds.validate()?;
        let mut sample = sample.to_vec();
        sample.sort_by(f64::total_cmp);
        Ok(Self {
            sample,
            kernel,
            thresholds,
            fisher_hat: None,
        })
    }

    pub fn sample(&self) -> &[f64] {
        &self.sample
    }

    pub fn kernel(&self) -> KernelSpec {
        self.kernel
    }

    pub fn bandwidth(&self) -> f64 {
        self.kernel.bandwidth
    }

    pub fn thresholds(&self) -> Thresholds {
        self.thresholds
    }

    pub fn fisher_hat(&self) -> Option<f64> {
        self.fisher_hat
    }

    pub fn set_fisher_hat(&mut self, value: f64) {
        self.fisher_hat = Some(value);
    }

    /// Same sample and thresholds with the bandwidth multiplied by `scale`.
    pub fn rescaled(&self, scale: f64) -> Result<Self> {
        let kernel = KernelSpec {
            bandwidth: self.kernel.bandwidth * scale,
            ..self.kernel
        };
        ScoreModel::new(&self.sample, kernel, self.thresholds)
    }

    /// Kernel sum and its derivatives at `y`.
    pub fn jet(&self, y: f64) -> DensityJet {
        let h = self.kernel.bandwidth;
        let kind = self.kernel.kind;
        let window = match kind.support() {
            Some(w) => {
                let lo = self.sample.partition_point(|&s| s < y - w * h);
                let hi = self.sample.partition_point(|&s| s <= y + w * h);
                &self.sample[lo..hi]
            }
            None => &self.sample[..],
        };
        let (mut k0, mut k1, mut k2) = (0.0, 0.0, 0.0);
        for &s in window {
            let (a, b, c) = kind.eval((y - s) / h);
            k0 += a;
            k1 += b;
            k2 += c;
        }
        let mh = self.sample.len() as f64 * h;
        DensityJet {
            f: k0 / mh,
            f1: k1 / (mh * h),
            f2: k2 / (mh * h * h),
        }
    }

    pub fn density(&self, y: f64) -> f64 {
        self.jet(y).f
    }

    pub fn density_deriv(&self, y: f64) -> f64 {
        self.jet(y).f1
    }

    pub fn density_deriv2(&self, y: f64) -> f64 {
        self.jet(y).f2
    }

    fn in_domain(&self, y: f64, j: &DensityJet) -> bool {
        let t = &self.thresholds;
        j.f > 0.0
            && j.f >= t.d_n
            && y.abs() <= t.e_n
            && j.f1.abs() <= t.c_n * j.f
            && j.f2.abs() <= t.b_n * j.f
    }

    /// Whether `y` lies in the truncation field.
    pub fn in_truncation_field(&self, y: f64) -> bool {
        self.in_domain(y, &self.jet(y))
    }

    /// Truncated score `f'/f`, zero outside the truncation field.
    pub fn score(&self, y: f64) -> f64 {
        let j = self.jet(y);
        if self.in_domain(y, &j) {
            j.f1 / j.f
        } else {
            0.0
        }
    }

    /// Derivative of the score, `f''/f - (f'/f)^2`, zero outside the field.
    pub fn score_deriv(&self, y: f64) -> f64 {
        let j = self.jet(y);
        if self.in_domain(y, &j) {
            let r = j.f1 / j.f;
            j.f2 / j.f - r * r
        } else {
            0.0
        }
    }

    /// Score and its derivative from one kernel pass.
    pub fn score_and_deriv(&self, y: f64) -> (f64, f64) {
        let j = self.jet(y);
        if self.in_domain(y, &j) {
            let r = j.f1 / j.f;
            (r, j.f2 / j.f - r * r)
        } else {
            (0.0, 0.0)
        }
    }
}

/// Empirical quantile with linear interpolation between order statistics
/// (type 7). `sorted` must be ascending and non-empty.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = p.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub(crate) fn median_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Normal-consistent median absolute deviation of a sorted sample.
pub fn mad_scale(sorted: &[f64]) -> f64 {
    let med = median_sorted(sorted);
    let mut dev: Vec<f64> = sorted.iter().map(|y| (y - med).abs()).collect();
    dev.sort_by(f64::total_cmp);
    median_sorted(&dev) / 0.674_489_750_196_081_7
}

/// Robust scale with one adaptive refinement: the MAD is re-evaluated on the
/// central 98% of the sample.
pub fn refined_scale(sorted: &[f64]) -> f64 {
    let lo = quantile_sorted(sorted, 0.01);
    let hi = quantile_sorted(sorted, 0.99);
    let central: Vec<f64> = sorted
        .iter()
        .copied()
        .filter(|&y| (lo..=hi).contains(&y))
        .collect();
    let s = if central.len() >= 2 {
        mad_scale(&central)
    } else {
        mad_scale(sorted)
    };
    if s > 0.0 {
        s
    } else {
        // Heavily tied data: fall back to the spread of the central range.
        ((hi - lo) / 4.65).max(f64::MIN_POSITIVE)
    }
}

/// Gaussian-equivalent bandwidth for `m` observations with robust scale `s`.
pub const BANDWIDTH_CONSTANT: f64 = 1.06;
pub const BANDWIDTH_RATE: f64 = 0.2;

/// Data-driven bandwidth for the given kernel.
pub fn auto_bandwidth(sorted: &[f64], kind: KernelKind) -> f64 {
    let m = sorted.len() as f64;
    let gaussian = BANDWIDTH_CONSTANT * refined_scale(sorted) * m.powf(-BANDWIDTH_RATE);
    match kind {
        KernelKind::Gaussian => gaussian,
        KernelKind::Triweight => TRIWEIGHT_BANDWIDTH_FACTOR * gaussian,
    }
}

/// Density floor of the calibrated rule, in units of `1 / robust scale`.
pub const CALIBRATED_FLOOR: f64 = 0.01;

/// Automatic thresholds for a sorted fitting sample and bandwidth.
pub fn auto_thresholds(sorted: &[f64], bandwidth: f64, rule: ThresholdRule) -> Thresholds {
    let e_n = quantile_sorted(sorted, 0.005)
        .abs()
        .max(quantile_sorted(sorted, 0.995).abs());
    let m = sorted.len() as f64;
    match rule {
        ThresholdRule::Calibrated => {
            let s = refined_scale(sorted);
            Thresholds {
                b_n: 1e4 / (s * s),
                c_n: 1e2 / s,
                d_n: CALIBRATED_FLOOR / s,
                e_n,
            }
        }
        ThresholdRule::RateConforming => {
            let log_m = m.ln().max(1.0);
            Thresholds {
                b_n: 1.0 / (bandwidth * bandwidth * log_m),
                c_n: 1.0 / (bandwidth * log_m),
                d_n: 0.01 / e_n.max(f64::MIN_POSITIVE),
                e_n,
            }
        }
    }
}

/// Fits a truncated score model to `sample`.
pub fn fit_score(sample: &[f64], options: &ScoreOptions) -> Result<ScoreModel> {
    if sample.is_empty() {
        return Err(Error::NoFittingData);
    }
    if sample.len() < MIN_FIT_SIZE {
        return Err(Error::InsufficientData {
            got: sample.len(),
            need: MIN_FIT_SIZE,
        });
    }
    if !(options.bandwidth_scale > 0.0) {
        return Err(Error::InvalidConfig(
            "bandwidth_scale must be positive".into(),
        ));
    }
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let bandwidth = options.bandwidth_scale
        * match options.bandwidth {
            Some(h) => h,
            None => auto_bandwidth(&sorted, options.kernel),
        };
    let thresholds = match options.thresholds {
        ThresholdChoice::Auto(rule) => auto_thresholds(&sorted, bandwidth, rule),
        ThresholdChoice::Explicit(t) => t,
    };
    ScoreModel::new(
        &sorted,
        KernelSpec {
            kind: options.kernel,
            bandwidth,
        },
        thresholds,
    )
}

/// One clause of the hyperparameter rate check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateClause {
    pub name: String,
    pub value: f64,
    pub limit: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub pass: bool,
    pub clauses: Vec<RateClause>,
    pub warnings: Vec<String>,
}

/// Finite-sample surrogate for the hyperparameter rate conditions: `h c_n`
/// small, `e_n h^-5` below `n`, positive floor and bandwidth. Advisory only.
pub fn validate_rates(n: usize, thresholds: &Thresholds, bandwidth: f64) -> RateReport {
    let n = n as f64;
    let mut clauses = vec![
        RateClause {
            name: "bandwidth * c_n < 0.5".into(),
            value: bandwidth * thresholds.c_n,
            limit: 0.5,
            pass: bandwidth * thresholds.c_n < 0.5,
        },
        RateClause {
            name: "e_n * bandwidth^-5 < n".into(),
            value: thresholds.e_n * bandwidth.powi(-5),
            limit: n,
            pass: thresholds.e_n * bandwidth.powi(-5) < n,
        },
    ];
    clauses.push(RateClause {
        name: "d_n > 0".into(),
        value: thresholds.d_n,
        limit: 0.0,
        pass: thresholds.d_n > 0.0,
    });
    clauses.push(RateClause {
        name: "bandwidth > 0".into(),
        value: bandwidth,
        limit: 0.0,
        pass: bandwidth > 0.0,
    });
    let mut warnings = Vec::new();
    if thresholds.c_n == 0.0 {
        warnings.push("c_n = 0: the estimated score is identically zero".to_string());
    }
    for c in clauses.iter().filter(|c| !c.pass) {
        warnings.push(format!(
            "rate clause failed: {} ({} vs {})",
            c.name, c.value, c.limit
        ));
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    RateReport {
        pass: clauses.iter().all(|c| c.pass) && warnings.is_empty(),
        clauses,
        warnings,
    }
}

/// Fisher information as the mean squared cross-fitted score over control
/// units. Returns 0 (with a warning) when every score is zero.
pub fn fisher_info_hat(scores: &[f64]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::NoFittingData);
    }
    let v = scores.iter().map(|g| g * g).sum::<f64>() / scores.len() as f64;
    if v == 0.0 {
        log::warn!("estimated score is identically zero on the control units");
    }
    Ok(v)
}

/// Fisher information of the fitted density, `-mean[(f f'' - f'^2)/f^2]`
/// over `outcomes`, with points outside the truncation field contributing 0.
pub fn fisher_info_alt(model: &ScoreModel, outcomes: &[f64]) -> Result<f64> {
    if outcomes.is_empty() {
        return Err(Error::NoFittingData);
    }
    let v = -outcomes.iter().map(|&y| model.score_deriv(y)).sum::<f64>() / outcomes.len() as f64;
    if v == 0.0 {
        log::warn!("estimated score derivative is identically zero on the evaluation points");
    }
    Ok(v)
}
