//! Monte Carlo harness: outcome models, replications and summary tables.
//!
//! Each replication derives its own seed from the master seed and its index,
//! so results are identical whether replications run sequentially or on the
//! rayon pool, and in any order.

use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::designs::{self, Assignment, DesignConfig, Scheme};
use crate::error::{Error, Result};
use crate::estimators::{EstimatorConfig, TrialData};
use crate::inference::{self, EstimateReport};
use crate::pipeline::{self, EstimatorSpec};
use crate::rng::{self, tag};

/// Replications are re-drawn at most this many times after a data shortfall.
pub const MAX_RETRIES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tail {
    Normal,
    Laplace,
    Cauchy,
}

impl Tail {
    pub fn sample<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            Tail::Normal => rng.sample(StandardNormal),
            Tail::Laplace => {
                let u: f64 = rng.random::<f64>() - 0.5;
                -u.signum() * (1.0 - 2.0 * u.abs()).ln()
            }
            Tail::Cauchy => (std::f64::consts::PI * (rng.random::<f64>() - 0.5)).tan(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Tail::Normal => "normal",
            Tail::Laplace => "laplace",
            Tail::Cauchy => "cauchy",
        }
    }
}

impl FromStr for Tail {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "normal" | "gaussian" => Ok(Tail::Normal),
            "laplace" => Ok(Tail::Laplace),
            "cauchy" => Ok(Tail::Cauchy),
            other => Err(Error::InvalidConfig(format!("unknown tail '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeModelSpec {
    pub model_id: u8,
    pub tail: Tail,
    pub tau: f64,
    pub n: usize,
    pub pi: f64,
}

impl OutcomeModelSpec {
    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.model_id) {
            return Err(Error::InvalidConfig(format!(
                "model_id must be 1, 2 or 3, got {}",
                self.model_id
            )));
        }
        if self.n < 16 {
            return Err(Error::InvalidConfig(format!(
                "n = {} is too small to populate four strata",
                self.n
            )));
        }
        if !(self.pi > 0.0 && self.pi < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "pi must lie in (0, 1), got {}",
                self.pi
            )));
        }
        if !self.tau.is_finite() {
            return Err(Error::InvalidConfig("tau must be finite".into()));
        }
        Ok(())
    }
}

/// The four equally likely values of the stratifying covariate.
pub const X2_LEVELS: [f64; 4] = [-1.0, -1.0 / 3.0, 1.0 / 3.0, 1.0];

/// Simulated units with both potential outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialOutcomes {
    pub y0: Vec<f64>,
    pub y1: Vec<f64>,
    pub strata: Vec<usize>,
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    /// Dichotomized `(x1, x2)` used by minimization.
    pub covariates: Vec<Vec<usize>>,
}

impl PotentialOutcomes {
    pub fn len(&self) -> usize {
        self.y0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y0.is_empty()
    }

    /// Observed trial under an assignment.
    pub fn observe(&self, a: Assignment) -> Result<TrialData> {
        let y = a
            .as_slice()
            .iter()
            .enumerate()
            .map(|(i, &t)| if t == 1 { self.y1[i] } else { self.y0[i] })
            .collect();
        TrialData::with_strata_count(y, a, self.strata.clone(), X2_LEVELS.len())?
            .with_covariates(self.covariates.clone())
    }
}

/// Baseline outcome of one unit, without noise.
pub fn model_mean(model_id: u8, x1: f64, x2: f64) -> f64 {
    match model_id {
        1 => 0.75 * x1 + x2,
        2 => {
            let z = 0.75 * x1 + x2;
            0.5 * (z.exp() + (0.5 * z).exp())
        }
        _ => {
            let z = x1 + x1 * x2;
            assert!(z >= 0.0, "model 3 index must be nonnegative, got {z}");
            0.5 * (z + z.sqrt())
        }
    }
}

/// Draws `spec.n` units. Model 3 uses `x1 = exp(u)` with `u ~ U(-1, 1)`.
pub fn generate(spec: &OutcomeModelSpec, seed: u64) -> Result<PotentialOutcomes> {
    spec.validate()?;
    let mut rng = rng::stream(seed, &[tag::GENERATE]);
    let n = spec.n;
    let mut out = PotentialOutcomes {
        y0: Vec::with_capacity(n),
        y1: Vec::with_capacity(n),
        strata: Vec::with_capacity(n),
        x1: Vec::with_capacity(n),
        x2: Vec::with_capacity(n),
        covariates: Vec::with_capacity(n),
    };
    let x1_cut = if spec.model_id == 3 { 1.0 } else { 0.0 };
    for _ in 0..n {
        let u: f64 = rng.random_range(-1.0..1.0);
        let x1 = if spec.model_id == 3 { u.exp() } else { u };
        let k = rng.random_range(0..X2_LEVELS.len());
        let x2 = X2_LEVELS[k];
        let y0 = model_mean(spec.model_id, x1, x2) + spec.tail.sample(&mut rng);
        out.y0.push(y0);
        out.y1.push(y0 + spec.tau);
        out.strata.push(k);
        out.x1.push(x1);
        out.x2.push(x2);
        out.covariates
            .push(vec![usize::from(x1 > x1_cut), usize::from(x2 > 0.0)]);
    }
    Ok(out)
}

fn default_alpha() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub outcome: OutcomeModelSpec,
    pub design: DesignConfig,
    #[serde(default = "pipeline::table_estimators")]
    pub estimators: Vec<EstimatorSpec>,
    #[serde(default)]
    pub estimator_config: EstimatorConfig,
    pub reps: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub master_seed: u64,
}

impl SimConfig {
    pub fn new(outcome: OutcomeModelSpec, design: DesignConfig, reps: usize) -> Self {
        Self {
            outcome,
            design,
            estimators: pipeline::table_estimators(),
            estimator_config: EstimatorConfig::default(),
            reps,
            alpha: 0.05,
            master_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.outcome.validate()?;
        self.design.validate()?;
        self.estimator_config.validate()?;
        if self.reps == 0 {
            return Err(Error::InvalidConfig("reps must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidConfig("alpha must lie in (0, 1)".into()));
        }
        if (self.design.pi - self.outcome.pi).abs() > 1e-12 {
            return Err(Error::InvalidConfig(
                "design pi and outcome pi disagree".into(),
            ));
        }
        Ok(())
    }
}

/// Reports from one replication, one per requested estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationOutput {
    pub index: usize,
    pub reports: Vec<EstimateReport>,
    /// Re-draws needed before the replication succeeded.
    pub retries: usize,
}

fn attempt(config: &SimConfig, seed: u64) -> Result<Vec<EstimateReport>> {
    let units = generate(&config.outcome, seed)?;
    let design = config
        .design
        .clone()
        .with_seed(rng::derive_seed(seed, &[tag::ASSIGN]));
    let covariates = (config.design.scheme == Scheme::PocockSimonMinimization)
        .then_some(units.covariates.as_slice());
    let a = designs::assign(&design, &units.strata, covariates)?;
    let data = units.observe(a)?;
    let q = inference::q_for_design(&config.design, config.outcome.pi);
    let split_seed = rng::derive_seed(seed, &[tag::SPLIT]);
    config
        .estimators
        .iter()
        .map(|spec| {
            pipeline::evaluate(
                &data,
                spec,
                &config.estimator_config,
                config.outcome.pi,
                q,
                config.alpha,
                split_seed,
            )
        })
        .collect()
}

/// Runs replication `index`. Data shortfalls (empty or singleton cells, too
/// few controls to fit a score) trigger a re-draw with a derived seed, at
/// most [`MAX_RETRIES`] times.
pub fn run_replication(config: &SimConfig, index: usize) -> Result<ReplicationOutput> {
    let mut last = None;
    for retry in 0..=MAX_RETRIES {
        let seed = rng::derive_seed(
            config.master_seed,
            &[tag::REPLICATION, index as u64, retry as u64],
        );
        match attempt(config, seed) {
            Ok(reports) => {
                return Ok(ReplicationOutput {
                    index,
                    reports,
                    retries: retry,
                })
            }
            Err(e) if e.is_data_shortfall() => {
                log::info!("replication {index} attempt {retry} re-drawn: {e}");
                last = Some(e);
            }
            Err(e) => return Err(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

/// Summary of one estimator over replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimRow {
    pub estimator: String,
    pub reps: usize,
    pub bias: f64,
    pub sd: f64,
    pub rmse: f64,
    pub se: Option<f64>,
    pub cp: Option<f64>,
    pub length: Option<f64>,
    /// Mean of the variance estimates `sigma2` (not divided by `n`).
    pub mean_sigma2: Option<f64>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub rows: Vec<SimRow>,
    /// Replications that still failed after all re-draws.
    pub failures: usize,
    /// Total re-draws across successful replications.
    pub retries: usize,
}

impl SimResult {
    pub fn row(&self, estimator: &str) -> Option<&SimRow> {
        self.rows.iter().find(|r| r.estimator == estimator)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation with the `R - 1` denominator (0 for `R < 2`).
pub fn sample_sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Aggregates replication outputs. Outputs are sorted by index first, so
/// the result does not depend on completion order.
pub fn aggregate(outputs: &[ReplicationOutput], true_tau: f64) -> SimResult {
    let mut sorted: Vec<&ReplicationOutput> = outputs.iter().collect();
    sorted.sort_by_key(|o| o.index);
    let n_est = sorted.first().map_or(0, |o| o.reports.len());
    let rows = (0..n_est)
        .map(|j| {
            let reports: Vec<&EstimateReport> = sorted.iter().map(|o| &o.reports[j]).collect();
            summarize(&reports, true_tau)
        })
        .collect();
    SimResult {
        rows,
        failures: 0,
        retries: sorted.iter().map(|o| o.retries).sum(),
    }
}

fn summarize(reports: &[&EstimateReport], tau: f64) -> SimRow {
    let r = reports.len();
    let taus: Vec<f64> = reports.iter().map(|x| x.tau_hat).collect();
    let bias = mean(&taus) - tau;
    let sd = sample_sd(&taus);
    let rmse = if r > 0 {
        (bias * bias + sd * sd * (r as f64 - 1.0) / r as f64).sqrt()
    } else {
        f64::NAN
    };
    let with_ci: Vec<&&EstimateReport> = reports.iter().filter(|x| x.se.is_some()).collect();
    let full = !with_ci.is_empty() && with_ci.len() == r;
    let opt_mean = |f: &dyn Fn(&EstimateReport) -> f64| {
        full.then(|| with_ci.iter().map(|x| f(x)).sum::<f64>() / r as f64)
    };
    SimRow {
        estimator: reports
            .first()
            .map_or_else(String::new, |x| x.estimator.clone()),
        reps: r,
        bias,
        sd,
        rmse,
        se: opt_mean(&|x| x.se.unwrap_or(f64::NAN)),
        cp: opt_mean(&|x| f64::from(u8::from(x.covers(tau).unwrap_or(false)))),
        length: opt_mean(&|x| x.length.unwrap_or(f64::NAN)),
        mean_sigma2: opt_mean(&|x| x.sigma2.unwrap_or(f64::NAN)),
        note: if full {
            None
        } else {
            reports.iter().find_map(|x| x.note.clone())
        },
    }
}

/// How replications are scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    Sequential,
    /// Rayon's global pool; sequential when built without `parallel`.
    #[default]
    Parallel,
}

/// Maps `f` over `0..reps` with the requested execution mode.
pub fn map_replications<T, F>(reps: usize, exec: Execution, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec {
        Execution::Sequential => (0..reps).map(f).collect(),
        Execution::Parallel => parallel_map(reps, f),
    }
}

#[cfg(feature = "parallel")]
fn parallel_map<T: Send, F: Fn(usize) -> T + Sync + Send>(reps: usize, f: F) -> Vec<T> {
    use rayon::prelude::*;
    (0..reps).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn parallel_map<T: Send, F: Fn(usize) -> T + Sync + Send>(reps: usize, f: F) -> Vec<T> {
    (0..reps).map(f).collect()
}

/// Runs every replication and aggregates. Replications that fail after all
/// re-draws are counted in `failures`; any other error aborts the run.
pub fn run_simulation(config: &SimConfig, exec: Execution) -> Result<SimResult> {
    config.validate()?;
    let results = map_replications(config.reps, exec, |i| run_replication(config, i));
    let mut outputs = Vec::with_capacity(results.len());
    let mut failures = 0;
    for r in results {
        match r {
            Ok(o) => outputs.push(o),
            Err(e) if e.is_data_shortfall() => {
                log::warn!("replication dropped after {MAX_RETRIES} re-draws: {e}");
                failures += 1;
            }
            Err(e) => return Err(e),
        }
    }
    let mut result = aggregate(&outputs, config.outcome.tau);
    result.failures = failures;
    Ok(result)
}

/// A grid of simulation cells sharing everything except tail and design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub model_id: u8,
    pub n: usize,
    pub pi: f64,
    #[serde(default)]
    pub tau: f64,
    pub tails: Vec<Tail>,
    pub designs: Vec<DesignConfig>,
    #[serde(default = "pipeline::table_estimators")]
    pub estimators: Vec<EstimatorSpec>,
    #[serde(default)]
    pub estimator_config: EstimatorConfig,
    pub reps: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub seed: u64,
}

impl GridConfig {
    /// One [`SimConfig`] per (tail, design), each with its own master seed.
    pub fn cells(&self) -> Vec<SimConfig> {
        let mut out = Vec::new();
        for (ti, &tail) in self.tails.iter().enumerate() {
            for (di, design) in self.designs.iter().enumerate() {
                out.push(SimConfig {
                    outcome: OutcomeModelSpec {
                        model_id: self.model_id,
                        tail,
                        tau: self.tau,
                        n: self.n,
                        pi: self.pi,
                    },
                    design: DesignConfig {
                        pi: self.pi,
                        ..design.clone()
                    },
                    estimators: self.estimators.clone(),
                    estimator_config: self.estimator_config.clone(),
                    reps: self.reps,
                    alpha: self.alpha,
                    master_seed: rng::derive_seed(self.seed, &[ti as u64, di as u64]),
                });
            }
        }
        out
    }
}

/// Result of one grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub model_id: u8,
    pub tail: Tail,
    pub design: String,
    pub n: usize,
    pub result: SimResult,
}

pub fn run_grid(grid: &GridConfig, exec: Execution) -> Result<Vec<GridCell>> {
    grid.cells()
        .iter()
        .map(|cell| {
            let result = run_simulation(cell, exec)?;
            Ok(GridCell {
                model_id: cell.outcome.model_id,
                tail: cell.outcome.tail,
                design: cell.design.scheme.short_name().to_string(),
                n: cell.outcome.n,
                result,
            })
        })
        .collect()
}

/// Resampling study on real data: units are bootstrapped, the missing
/// potential outcome is imputed with `Y(1) = Y(0) + tau_assumed`, treatment is
/// re-assigned by `design`, and the estimators are summarized against
/// `tau_assumed`.
#[allow(clippy::too_many_arguments)]
pub fn synthetic_resample(
    real: &TrialData,
    tau_assumed: f64,
    design: &DesignConfig,
    estimators: &[EstimatorSpec],
    estimator_config: &EstimatorConfig,
    reps: usize,
    alpha: f64,
    seed: u64,
    exec: Execution,
) -> Result<SimResult> {
    if real.is_empty() {
        return Err(Error::InvalidData(
            "cannot resample an empty dataset".into(),
        ));
    }
    design.validate()?;
    let n = real.len();
    let y0: Vec<f64> = (0..n)
        .map(|i| real.y[i] - f64::from(real.arm(i)) * tau_assumed)
        .collect();
    let q = inference::q_for_design(design, design.pi);

    let one = |index: usize| -> Result<ReplicationOutput> {
        let mut last = None;
        for retry in 0..=MAX_RETRIES {
            let rep_seed = rng::derive_seed(seed, &[tag::RESAMPLE, index as u64, retry as u64]);
            let mut rng = rng::stream(rep_seed, &[tag::GENERATE]);
            let picks: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let strata: Vec<usize> = picks.iter().map(|&i| real.strata[i]).collect();
            let covs: Option<Vec<Vec<usize>>> = real
                .covariates
                .as_ref()
                .map(|c| picks.iter().map(|&i| c[i].clone()).collect());
            let d = design
                .clone()
                .with_seed(rng::derive_seed(rep_seed, &[tag::ASSIGN]));
            let run = || -> Result<Vec<EstimateReport>> {
                let a = designs::assign(&d, &strata, covs.as_deref())?;
                let y = picks
                    .iter()
                    .zip(a.as_slice())
                    .map(|(&i, &t)| y0[i] + f64::from(t) * tau_assumed)
                    .collect();
                let data = TrialData::with_strata_count(y, a, strata.clone(), real.n_strata)?;
                let split_seed = rng::derive_seed(rep_seed, &[tag::SPLIT]);
                estimators
                    .iter()
                    .map(|s| {
                        pipeline::evaluate(
                            &data,
                            s,
                            estimator_config,
                            design.pi,
                            q,
                            alpha,
                            split_seed,
                        )
                    })
                    .collect()
            };
            match run() {
                Ok(reports) => {
                    return Ok(ReplicationOutput {
                        index,
                        reports,
                        retries: retry,
                    })
                }
                Err(e) if e.is_data_shortfall() => last = Some(e),
                Err(e) => return Err(e),
            }
        }
        Err(last.expect("at least one attempt"))
    };

    let results = map_replications(reps, exec, one);
    let mut outputs = Vec::new();
    let mut failures = 0;
    for r in results {
        match r {
            Ok(o) => outputs.push(o),
            Err(e) if e.is_data_shortfall() => failures += 1,
            Err(e) => return Err(e),
        }
    }
    let mut result = aggregate(&outputs, tau_assumed);
    result.failures = failures;
    Ok(result)
}
