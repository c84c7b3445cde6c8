//! Point estimators: median-based initial estimates, plain and stratified
//! differences in means, and the cross-fitted transformed estimators
//! `tdim` and `str`.
//!
//! The transformed estimators share one pipeline. Units are split into two
//! folds, a score model is fitted on the control outcomes of each fold, and
//! every unit is evaluated with the model of the fold it does not belong to:
//!
//! ```text
//! Z_i = -g_(other fold)(Y_i - A_i * tau_init) / I_hat
//! ```
//!
//! `tdim` adds the inverse-probability weighted mean of `Z` to the initial
//! estimate; `str` does the same within each stratum with the realized
//! treated fraction and averages with stratum weights.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::designs::{Assignment, StratumId};
use crate::error::{Error, Result};
use crate::rng::{self, tag};
use crate::score::{self, fit_score, ScoreModel, ScoreOptions};

/// Observed trial: outcomes, assignments, strata and optional covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialData {
    pub y: Vec<f64>,
    pub a: Assignment,
    pub strata: Vec<StratumId>,
    pub n_strata: usize,
    pub covariates: Option<Vec<Vec<usize>>>,
}

impl TrialData {
    pub fn new(y: Vec<f64>, a: Assignment, strata: Vec<StratumId>) -> Result<Self> {
        let n_strata = crate::designs::n_strata(&strata);
        Self::with_strata_count(y, a, strata, n_strata)
    }

    /// Like [`TrialData::new`] but with an explicit number of strata, which
    /// may exceed the largest observed label.
    pub fn with_strata_count(
        y: Vec<f64>,
        a: Assignment,
        strata: Vec<StratumId>,
        n_strata: usize,
    ) -> Result<Self> {
        if y.len() != a.len() || y.len() != strata.len() {
            return Err(Error::InvalidData(format!(
                "length mismatch: {} outcomes, {} assignments, {} strata",
                y.len(),
                a.len(),
                strata.len()
            )));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!("outcome {i} is not finite")));
        }
        if let Some(&k) = strata.iter().find(|&&k| k >= n_strata) {
            return Err(Error::InvalidData(format!(
                "stratum id {k} out of range for {n_strata} strata"
            )));
        }
        Ok(Self {
            y,
            a,
            strata,
            n_strata,
            covariates: None,
        })
    }

    pub fn with_covariates(mut self, covariates: Vec<Vec<usize>>) -> Result<Self> {
        if covariates.len() != self.len() {
            return Err(Error::InvalidData(format!(
                "{} covariate rows for {} units",
                covariates.len(),
                self.len()
            )));
        }
        self.covariates = Some(covariates);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn arm(&self, i: usize) -> u8 {
        self.a.as_slice()[i]
    }

    /// `[n_[k]0, n_[k]1]` per stratum.
    pub fn cell_counts(&self) -> Vec<[usize; 2]> {
        self.a.cell_counts(&self.strata, self.n_strata)
    }

    /// Outcomes of one arm, in unit order.
    pub fn arm_outcomes(&self, arm: u8) -> Vec<f64> {
        self.y
            .iter()
            .zip(self.a.as_slice())
            .filter(|(_, &a)| a == arm)
            .map(|(&y, _)| y)
            .collect()
    }

    /// Stratum proportions `p_n[k] = n_[k] / n`.
    pub fn stratum_proportions(&self) -> Vec<f64> {
        let n = self.len() as f64;
        self.cell_counts()
            .iter()
            .map(|[c0, c1]| (c0 + c1) as f64 / n)
            .collect()
    }

    /// Realized treated fractions `pi_n[k] = n_[k]1 / n_[k]` (0 for empty strata).
    pub fn treated_fractions(&self) -> Vec<f64> {
        self.cell_counts()
            .iter()
            .map(|[c0, c1]| {
                let nk = c0 + c1;
                if nk == 0 {
                    0.0
                } else {
                    *c1 as f64 / nk as f64
                }
            })
            .collect()
    }

    /// Errors on the first `(stratum, arm)` cell with fewer than `min` units.
    /// Strata with no units at all are skipped.
    pub fn require_cells(&self, min: usize) -> Result<()> {
        for (k, counts) in self.cell_counts().iter().enumerate() {
            if counts[0] + counts[1] == 0 {
                continue;
            }
            for arm in 0..2u8 {
                let c = counts[arm as usize];
                if c == 0 {
                    return Err(Error::EmptyCell { stratum: k, arm });
                }
                if c < min {
                    return Err(Error::SingletonCell { stratum: k, arm });
                }
            }
        }
        Ok(())
    }

    fn require_arms(&self) -> Result<()> {
        let n1 = self.a.n_treated();
        if n1 == 0 {
            return Err(Error::InvalidData("treated arm is empty".into()));
        }
        if n1 == self.len() {
            return Err(Error::InvalidData("control arm is empty".into()));
        }
        Ok(())
    }
}

/// Two-fold partition of the units. Fold ids are 1 and 2.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub fold_of: Vec<u8>,
}

impl FoldSplit {
    pub fn sizes(&self) -> [usize; 2] {
        let f1 = self.fold_of.iter().filter(|&&f| f == 1).count();
        [f1, self.fold_of.len() - f1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Split every `(stratum, arm)` cell, putting `floor(n/2)` in fold 1.
    #[default]
    Car,
    /// Split all units into halves, ignoring strata and arms.
    Sr,
}

/// Splits units into two folds. Each cell uses its own RNG stream.
pub fn split_samples(data: &TrialData, mode: SplitMode, seed: u64) -> FoldSplit {
    let n = data.len();
    let mut fold_of = vec![2u8; n];
    match mode {
        SplitMode::Car => {
            let mut cells: Vec<[Vec<usize>; 2]> = vec![[Vec::new(), Vec::new()]; data.n_strata];
            for i in 0..n {
                cells[data.strata[i]][data.arm(i) as usize].push(i);
            }
            for (k, cell) in cells.iter_mut().enumerate() {
                for (arm, members) in cell.iter_mut().enumerate() {
                    let mut rng = rng::stream(seed, &[tag::SPLIT, k as u64, arm as u64]);
                    members.shuffle(&mut rng);
                    for &i in &members[..members.len() / 2] {
                        fold_of[i] = 1;
                    }
                }
            }
        }
        SplitMode::Sr => {
            let mut idx: Vec<usize> = (0..n).collect();
            let mut rng = rng::stream(seed, &[tag::SPLIT, u64::MAX]);
            idx.shuffle(&mut rng);
            for &i in &idx[..n / 2] {
                fold_of[i] = 1;
            }
        }
    }
    FoldSplit { fold_of }
}

fn sorted_copy(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Sample median; the midpoint of the two central values for even counts.
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidData("median of an empty sample".into()));
    }
    Ok(score::median_sorted(&sorted_copy(values)))
}

/// Weighted median: the smallest value at which the cumulative weight
/// reaches half the total. When it hits exactly half, the midpoint with the
/// next order statistic is returned.
pub fn weighted_median(values: &[f64], weights: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidData(
            "weighted median of an empty sample".into(),
        ));
    }
    if values.len() != weights.len() {
        return Err(Error::InvalidData(
            "values and weights differ in length".into(),
        ));
    }
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::InvalidData(
            "weights must be finite and nonnegative".into(),
        ));
    }
    let mut pairs: Vec<(f64, f64)> = values
        .iter()
        .copied()
        .zip(weights.iter().copied())
        .collect();
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidData("weights sum to zero".into()));
    }
    let half = 0.5 * total;
    let tol = 1e-12 * total;
    let mut cum = 0.0;
    for (j, &(v, w)) in pairs.iter().enumerate() {
        cum += w;
        if cum >= half - tol {
            if (cum - half).abs() <= tol && j + 1 < pairs.len() {
                return Ok(0.5 * (v + pairs[j + 1].0));
            }
            return Ok(v);
        }
    }
    Ok(pairs[pairs.len() - 1].0)
}

pub fn diff_in_medians(data: &TrialData) -> Result<f64> {
    data.require_arms()?;
    Ok(median(&data.arm_outcomes(1))? - median(&data.arm_outcomes(0))?)
}

/// Difference of weighted medians with inverse treated-fraction weights
/// `1/pi_nk` for treated units and `1/(1 - pi_nk)` for controls.
pub fn diff_in_weighted_medians(data: &TrialData, pi_nk: &[f64]) -> Result<f64> {
    data.require_arms()?;
    if pi_nk.len() < data.n_strata {
        return Err(Error::InvalidData(format!(
            "{} treated fractions for {} strata",
            pi_nk.len(),
            data.n_strata
        )));
    }
    let mut occupied = vec![false; data.n_strata];
    for &k in &data.strata {
        occupied[k] = true;
    }
    for (k, &p) in pi_nk.iter().enumerate().take(data.n_strata) {
        if occupied[k] && !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidData(format!(
                "treated fraction {p} in stratum {k} is degenerate"
            )));
        }
    }
    let mut parts = [(Vec::new(), Vec::new()), (Vec::new(), Vec::new())];
    for i in 0..data.len() {
        let p = pi_nk[data.strata[i]];
        let arm = data.arm(i) as usize;
        let w = if arm == 1 { 1.0 / p } else { 1.0 / (1.0 - p) };
        parts[arm].0.push(data.y[i]);
        parts[arm].1.push(w);
    }
    Ok(weighted_median(&parts[1].0, &parts[1].1)? - weighted_median(&parts[0].0, &parts[0].1)?)
}

fn cell_values(data: &TrialData) -> Vec<[Vec<f64>; 2]> {
    let mut cells: Vec<[Vec<f64>; 2]> = vec![[Vec::new(), Vec::new()]; data.n_strata];
    for i in 0..data.len() {
        cells[data.strata[i]][data.arm(i) as usize].push(data.y[i]);
    }
    cells
}

/// `sum_k p_nk (median_k1 - median_k0)`.
pub fn stratified_diff_in_medians(data: &TrialData) -> Result<f64> {
    data.require_cells(1)?;
    let p = data.stratum_proportions();
    let mut total = 0.0;
    for (k, cell) in cell_values(data).iter().enumerate() {
        if p[k] > 0.0 {
            total += p[k] * (median(&cell[1])? - median(&cell[0])?);
        }
    }
    Ok(total)
}

pub fn naive_dim(data: &TrialData) -> Result<f64> {
    data.require_arms()?;
    let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
    Ok(mean(data.arm_outcomes(1)) - mean(data.arm_outcomes(0)))
}

pub fn stratified_dim(data: &TrialData) -> Result<f64> {
    data.require_cells(1)?;
    let p = data.stratum_proportions();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(cell_values(data)
        .iter()
        .enumerate()
        .filter(|(k, _)| p[*k] > 0.0)
        .map(|(k, c)| p[k] * (mean(&c[1]) - mean(&c[0])))
        .sum())
}

/// Initial estimator for the one-step update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitialEstimator {
    DiffMedians,
    #[default]
    DiffWeightedMedians,
    StratifiedDiffMedians,
}

impl InitialEstimator {
    pub fn estimate(self, data: &TrialData) -> Result<f64> {
        match self {
            InitialEstimator::DiffMedians => diff_in_medians(data),
            InitialEstimator::DiffWeightedMedians => {
                diff_in_weighted_medians(data, &data.treated_fractions())
            }
            InitialEstimator::StratifiedDiffMedians => stratified_diff_in_medians(data),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            InitialEstimator::DiffMedians => "md",
            InitialEstimator::DiffWeightedMedians => "wt_md",
            InitialEstimator::StratifiedDiffMedians => "str_md",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FisherMethod {
    /// Mean of the squared cross-fitted score over control units.
    #[default]
    SquaredScore,
    /// Minus the mean cross-fitted score derivative over control units.
    AltSecondDeriv,
}

/// Treated probability used in the update weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PiMode {
    /// The design target.
    #[default]
    Known,
    /// The realized fraction `n_1 / n`.
    Estimate,
}

/// Which outcomes the per-fold score models are fitted on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScoreArm {
    #[default]
    Control,
    /// Controls plus treated outcomes shifted back by the initial estimate.
    Pooled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorConfig {
    pub initial: InitialEstimator,
    pub splitting: SplitMode,
    pub fisher: FisherMethod,
    pub pi_mode: PiMode,
    pub score_arm: ScoreArm,
    /// Average fold-specific one-step estimates, each with an initial
    /// estimate computed on its own fold.
    pub fold_average: bool,
    pub score: ScoreOptions,
    /// Bandwidth multiplier for the score models used in variance estimation.
    /// The default of 1.2 offsets the extra variance that score estimation
    /// adds to the point estimate in samples of a few hundred per fold.
    pub var_bandwidth_scale: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            initial: InitialEstimator::default(),
            splitting: SplitMode::default(),
            fisher: FisherMethod::default(),
            pi_mode: PiMode::default(),
            score_arm: ScoreArm::default(),
            fold_average: false,
            score: ScoreOptions::default(),
            var_bandwidth_scale: 1.2,
        }
    }
}

impl EstimatorConfig {
    pub fn with_initial(mut self, initial: InitialEstimator) -> Self {
        self.initial = initial;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.var_bandwidth_scale > 0.0 && self.var_bandwidth_scale.is_finite()) {
            return Err(Error::InvalidConfig(
                "var_bandwidth_scale must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Cross-fitted transformed outcomes with the fold bookkeeping needed to
/// audit them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformedOutcomes {
    pub z_hat: Vec<f64>,
    /// Fold of each unit.
    pub fold_of: Vec<u8>,
    /// Fold whose fitted model produced each `z_hat`.
    pub model_fold: Vec<u8>,
}

/// Evaluates `Z_i = -g_(3-j)(Y_i - A_i tau_tilde) / fisher_hat`.
pub fn transformed_outcomes(
    data: &TrialData,
    split: &FoldSplit,
    models: &[ScoreModel; 2],
    tau_tilde: f64,
    fisher_hat: f64,
) -> Result<TransformedOutcomes> {
    if !(fisher_hat > 0.0) || !fisher_hat.is_finite() {
        return Err(Error::DegenerateFisher(fisher_hat));
    }
    let n = data.len();
    let mut z_hat = Vec::with_capacity(n);
    let mut model_fold = Vec::with_capacity(n);
    for i in 0..n {
        let other = 3 - split.fold_of[i];
        let shifted = data.y[i] - f64::from(data.arm(i)) * tau_tilde;
        z_hat.push(-models[(other - 1) as usize].score(shifted) / fisher_hat);
        model_fold.push(other);
    }
    Ok(TransformedOutcomes {
        z_hat,
        fold_of: split.fold_of.clone(),
        model_fold,
    })
}

/// Fits one score model per fold.
pub fn fit_fold_models(
    data: &TrialData,
    split: &FoldSplit,
    tau_tilde: f64,
    arm: ScoreArm,
    options: &ScoreOptions,
) -> Result<[ScoreModel; 2]> {
    let fit = |fold: u8| {
        let sample: Vec<f64> = (0..data.len())
            .filter(|&i| split.fold_of[i] == fold)
            .filter_map(|i| match (data.arm(i), arm) {
                (0, _) => Some(data.y[i]),
                (_, ScoreArm::Pooled) => Some(data.y[i] - tau_tilde),
                _ => None,
            })
            .collect();
        fit_score(&sample, options)
    };
    Ok([fit(1)?, fit(2)?])
}

/// Fisher information from cross-fitted evaluations on control units.
pub fn cross_fitted_fisher(
    data: &TrialData,
    split: &FoldSplit,
    models: &[ScoreModel; 2],
    method: FisherMethod,
) -> Result<f64> {
    let controls = (0..data.len()).filter(|&i| data.arm(i) == 0);
    let model_for = |i: usize| &models[(2 - split.fold_of[i]) as usize];
    match method {
        FisherMethod::SquaredScore => {
            let g: Vec<f64> = controls.map(|i| model_for(i).score(data.y[i])).collect();
            score::fisher_info_hat(&g)
        }
        FisherMethod::AltSecondDeriv => {
            let mut per_fold = [0.0; 2];
            for fold in 1..=2u8 {
                let ys: Vec<f64> = (0..data.len())
                    .filter(|&i| data.arm(i) == 0 && split.fold_of[i] == fold)
                    .map(|i| data.y[i])
                    .collect();
                per_fold[(fold - 1) as usize] =
                    score::fisher_info_alt(&models[(2 - fold) as usize], &ys)?;
            }
            Ok(0.5 * (per_fold[0] + per_fold[1]))
        }
    }
}

/// Which transformed estimator to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transformed {
    Tdim,
    Str,
}

/// Point estimate from a transformed estimator plus everything inference
/// needs afterwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformedEstimate {
    pub tau_hat: f64,
    pub tau_tilde: f64,
    pub fisher_hat: f64,
    /// Fisher information of the variance-step models; equals `fisher_hat`
    /// unless `var_bandwidth_scale` differs from one.
    pub var_fisher_hat: f64,
    pub pi: f64,
    pub fold_sizes: [usize; 2],
    /// Transformed outcomes used for variance estimation.
    pub z: TransformedOutcomes,
    /// Imbalance diagnostic `max_k |n_[k]a / n_a - p_n[k]|` over both arms.
    pub delta_n: f64,
}

/// Update term `mean(A Z / pi - (1 - A) Z / (1 - pi))` over `units`.
fn tdim_update(data: &TrialData, z: &[f64], pi: f64, units: &[usize]) -> f64 {
    units
        .iter()
        .map(|&i| {
            if data.arm(i) == 1 {
                z[i] / pi
            } else {
                -z[i] / (1.0 - pi)
            }
        })
        .sum::<f64>()
        / units.len() as f64
}

/// Stratified update `sum_k p_k mean_k(A Z / pi_k - (1 - A) Z / (1 - pi_k))`
/// over `units`, with proportions and fractions computed on `units`.
fn str_update(data: &TrialData, z: &[f64], units: &[usize]) -> f64 {
    let k = data.n_strata;
    let mut counts = vec![[0usize; 2]; k];
    let mut sums = vec![[0.0f64; 2]; k];
    for &i in units {
        let a = data.arm(i) as usize;
        counts[data.strata[i]][a] += 1;
        sums[data.strata[i]][a] += z[i];
    }
    let n = units.len() as f64;
    (0..k)
        .filter(|&s| counts[s][0] + counts[s][1] > 0)
        .map(|s| {
            let nk = (counts[s][0] + counts[s][1]) as f64;
            let pi_k = counts[s][1] as f64 / nk;
            let treated = if counts[s][1] > 0 {
                sums[s][1] / nk / pi_k
            } else {
                0.0
            };
            let control = if counts[s][0] > 0 {
                sums[s][0] / nk / (1.0 - pi_k)
            } else {
                0.0
            };
            (nk / n) * (treated - control)
        })
        .sum()
}

/// `max_k |n_[k]a / n_a - p_n[k]|` over both arms.
pub fn delta_n(data: &TrialData) -> f64 {
    let counts = data.cell_counts();
    let n = data.len() as f64;
    let n_arm = [data.a.n_control() as f64, data.a.n_treated() as f64];
    let mut worst = 0.0f64;
    for c in &counts {
        let p = (c[0] + c[1]) as f64 / n;
        for arm in 0..2 {
            if n_arm[arm] > 0.0 {
                worst = worst.max((c[arm] as f64 / n_arm[arm] - p).abs());
            }
        }
    }
    worst
}

/// Runs the cross-fitted pipeline and returns the requested estimate.
///
/// `pi_target` is the design's treated probability; it is replaced by
/// `n_1/n` under [`PiMode::Estimate`]. `seed` drives the fold split only.
pub fn transformed_estimate(
    data: &TrialData,
    kind: Transformed,
    config: &EstimatorConfig,
    pi_target: f64,
    seed: u64,
) -> Result<TransformedEstimate> {
    config.validate()?;
    data.require_arms()?;
    if kind == Transformed::Str {
        data.require_cells(1)?;
    }
    let pi = match config.pi_mode {
        PiMode::Known => pi_target,
        PiMode::Estimate => data.a.n_treated() as f64 / data.len() as f64,
    };
    if !(pi > 0.0 && pi < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "treated probability {pi} outside (0, 1)"
        )));
    }
    let tau_tilde = config.initial.estimate(data)?;
    let split = split_samples(data, config.splitting, seed);
    let models = fit_fold_models(data, &split, tau_tilde, config.score_arm, &config.score)?;
    let fisher_hat = cross_fitted_fisher(data, &split, &models, config.fisher)?;
    let z = outcomes_or_zero(data, &split, &models, tau_tilde, fisher_hat)?;

    let all: Vec<usize> = (0..data.len()).collect();
    let update = |units: &[usize], z: &[f64]| match kind {
        Transformed::Tdim => tdim_update(data, z, pi, units),
        Transformed::Str => str_update(data, z, units),
    };

    let tau_hat = if config.fold_average {
        let mut halves = [0.0; 2];
        for fold in 1..=2u8 {
            let units: Vec<usize> = all
                .iter()
                .copied()
                .filter(|&i| split.fold_of[i] == fold)
                .collect();
            let sub = subset(data, &units)?;
            let tilde_j = config.initial.estimate(&sub)?;
            let z_j = outcomes_or_zero(data, &split, &models, tilde_j, fisher_hat)?;
            halves[(fold - 1) as usize] = tilde_j + update(&units, &z_j.z_hat);
        }
        0.5 * (halves[0] + halves[1])
    } else {
        tau_tilde + update(&all, &z.z_hat)
    };

    let (z_var, var_fisher_hat) = if config.var_bandwidth_scale != 1.0 {
        let scaled = [
            models[0].rescaled(config.var_bandwidth_scale)?,
            models[1].rescaled(config.var_bandwidth_scale)?,
        ];
        let fisher_var = cross_fitted_fisher(data, &split, &scaled, config.fisher)?;
        (
            outcomes_or_zero(data, &split, &scaled, tau_tilde, fisher_var)?,
            fisher_var,
        )
    } else {
        (z, fisher_hat)
    };

    Ok(TransformedEstimate {
        tau_hat,
        tau_tilde,
        fisher_hat,
        var_fisher_hat,
        pi,
        fold_sizes: split.sizes(),
        z: z_var,
        delta_n: delta_n(data),
    })
}

/// Like [`transformed_outcomes`], except that a Fisher information of exactly
/// zero (the score vanished on every control) yields all-zero outcomes, so
/// the estimate falls back to the initial estimator.
fn outcomes_or_zero(
    data: &TrialData,
    split: &FoldSplit,
    models: &[ScoreModel; 2],
    tau_tilde: f64,
    fisher_hat: f64,
) -> Result<TransformedOutcomes> {
    if fisher_hat == 0.0 {
        log::warn!("estimated score vanished; returning the initial estimate");
        return Ok(TransformedOutcomes {
            z_hat: vec![0.0; data.len()],
            fold_of: split.fold_of.clone(),
            model_fold: split.fold_of.iter().map(|f| 3 - f).collect(),
        });
    }
    transformed_outcomes(data, split, models, tau_tilde, fisher_hat)
}

fn subset(data: &TrialData, units: &[usize]) -> Result<TrialData> {
    let y = units.iter().map(|&i| data.y[i]).collect();
    let a = Assignment::new(units.iter().map(|&i| data.arm(i)).collect())?;
    let s = units.iter().map(|&i| data.strata[i]).collect();
    TrialData::with_strata_count(y, a, s, data.n_strata)
}

pub fn tdim(
    data: &TrialData,
    config: &EstimatorConfig,
    pi: f64,
    seed: u64,
) -> Result<TransformedEstimate> {
    transformed_estimate(data, Transformed::Tdim, config, pi, seed)
}

pub fn str_estimate(
    data: &TrialData,
    config: &EstimatorConfig,
    pi: f64,
    seed: u64,
) -> Result<TransformedEstimate> {
    transformed_estimate(data, Transformed::Str, config, pi, seed)
}
