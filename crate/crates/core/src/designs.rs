//! Covariate-adaptive treatment assignment.
//!
//! Four schemes are supported: simple randomization, stratified permuted
//! blocks, the stratified (generalized Efron) biased coin and Pocock–Simon
//! minimization. Stratum ids are dense integers `0..K`.
//!
//! Stratified schemes draw from one RNG stream per stratum, keyed by
//! `(seed, stratum id)`, so relabeling strata relabels the per-stratum output
//! and nothing else.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, tag};

pub type StratumId = usize;

/// Tolerance used when deciding whether an imbalance is exactly zero.
const IMBALANCE_EPS: f64 = 1e-9;

/// Binary treatment indicators, one per unit (1 = treated).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment(Vec<u8>);

impl Assignment {
    pub fn new(a: Vec<u8>) -> Result<Self> {
        if let Some(pos) = a.iter().position(|&v| v > 1) {
            return Err(Error::InvalidData(format!(
                "treatment indicator at position {pos} is {}, expected 0 or 1",
                a[pos]
            )));
        }
        Ok(Self(a))
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_treated(&self, i: usize) -> bool {
        self.0[i] == 1
    }

    pub fn n_treated(&self) -> usize {
        self.0.iter().filter(|&&v| v == 1).count()
    }

    pub fn n_control(&self) -> usize {
        self.len() - self.n_treated()
    }

    /// `[n_[k]0, n_[k]1]` for every stratum.
    pub fn cell_counts(&self, strata: &[StratumId], n_strata: usize) -> Vec<[usize; 2]> {
        let mut counts = vec![[0usize; 2]; n_strata];
        for (&a, &k) in self.0.iter().zip(strata) {
            counts[k][a as usize] += 1;
        }
        counts
    }

    /// Per-stratum imbalance `n_[k]1 - pi * n_[k]`.
    pub fn imbalance(&self, strata: &[StratumId], n_strata: usize, pi: f64) -> Vec<f64> {
        self.cell_counts(strata, n_strata)
            .iter()
            .map(|[c0, c1]| *c1 as f64 - pi * (c0 + c1) as f64)
            .collect()
    }

    pub fn into_inner(self) -> Vec<u8> {
        self.0
    }
}

impl From<Assignment> for Vec<u8> {
    fn from(a: Assignment) -> Self {
        a.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[serde(alias = "sr", alias = "simple")]
    SimpleRandomization,
    #[serde(alias = "str", alias = "block")]
    StratifiedPermutedBlock,
    #[serde(alias = "biased_coin", alias = "coin")]
    StratifiedBiasedCoin,
    #[serde(alias = "min", alias = "minimization")]
    PocockSimonMinimization,
}

impl Scheme {
    pub fn short_name(self) -> &'static str {
        match self {
            Scheme::SimpleRandomization => "SR",
            Scheme::StratifiedPermutedBlock => "STR",
            Scheme::StratifiedBiasedCoin => "BCD",
            Scheme::PocockSimonMinimization => "MIN",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "sr" | "simple" | "simple_randomization" => Ok(Scheme::SimpleRandomization),
            "str" | "block" | "stratified_permuted_block" => Ok(Scheme::StratifiedPermutedBlock),
            "bcd" | "coin" | "biased_coin" | "stratified_biased_coin" => {
                Ok(Scheme::StratifiedBiasedCoin)
            }
            "min" | "minimization" | "pocock_simon_minimization" => {
                Ok(Scheme::PocockSimonMinimization)
            }
            other => Err(Error::InvalidConfig(format!("unknown scheme '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignConfig {
    pub scheme: Scheme,
    pub pi: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coin_p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default)]
    pub seed: u64,
}

impl DesignConfig {
    pub fn simple(pi: f64) -> Self {
        Self {
            scheme: Scheme::SimpleRandomization,
            pi,
            block_size: None,
            coin_p: None,
            weights: None,
            seed: 0,
        }
    }

    pub fn block(pi: f64, block_size: usize) -> Self {
        Self {
            scheme: Scheme::StratifiedPermutedBlock,
            block_size: Some(block_size),
            ..Self::simple(pi)
        }
    }

    pub fn biased_coin(pi: f64, coin_p: f64) -> Self {
        Self {
            scheme: Scheme::StratifiedBiasedCoin,
            coin_p: Some(coin_p),
            ..Self::simple(pi)
        }
    }

    pub fn minimization(pi: f64, coin_p: f64, weights: Vec<f64>) -> Self {
        Self {
            scheme: Scheme::PocockSimonMinimization,
            coin_p: Some(coin_p),
            weights: Some(weights),
            ..Self::simple(pi)
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Checks that the parameters required by the scheme are present and in
    /// range. Minimization weights are checked (and normalized) at
    /// assignment time, once the number of covariates is known.
    pub fn validate(&self) -> Result<()> {
        if !(self.pi > 0.0 && self.pi < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "pi must lie in (0, 1), got {}",
                self.pi
            )));
        }
        match self.scheme {
            Scheme::SimpleRandomization => Ok(()),
            Scheme::StratifiedPermutedBlock => match self.block_size {
                Some(b) if b >= 1 => Ok(()),
                Some(_) => Err(Error::InvalidConfig("block_size must be >= 1".into())),
                None => Err(Error::InvalidConfig(
                    "stratified permuted block design requires block_size".into(),
                )),
            },
            Scheme::StratifiedBiasedCoin | Scheme::PocockSimonMinimization => {
                let p = self.coin_p.ok_or_else(|| {
                    Error::InvalidConfig(format!("{:?} requires coin_p", self.scheme))
                })?;
                check_coin(p)
            }
        }
    }
}

fn check_coin(p: f64) -> Result<()> {
    if (0.5..1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "coin_p must lie in [0.5, 1), got {p}"
        )))
    }
}

pub(crate) fn n_strata(strata: &[StratumId]) -> usize {
    strata.iter().max().map_or(0, |&k| k + 1)
}

/// Unit indices grouped by stratum, each group in enrollment order.
fn members_by_stratum(strata: &[StratumId]) -> Vec<Vec<usize>> {
    let mut groups = vec![Vec::new(); n_strata(strata)];
    for (i, &k) in strata.iter().enumerate() {
        groups[k].push(i);
    }
    groups
}

/// Independent Bernoulli(pi) assignment. `pi` of exactly 0 or 1 is accepted
/// and yields a forced assignment.
pub fn assign_simple(strata: &[StratumId], pi: f64, seed: u64) -> Assignment {
    let mut a = vec![0u8; strata.len()];
    for (k, members) in members_by_stratum(strata).into_iter().enumerate() {
        let mut rng = rng::stream(seed, &[tag::ASSIGN, k as u64]);
        for i in members {
            a[i] = u8::from(rng.random::<f64>() < pi);
        }
    }
    Assignment(a)
}

/// Stratified permuted-block randomization.
///
/// Every complete block of `block_size` units within a stratum receives
/// exactly `round(pi * block_size)` treatments. A trailing partial block takes
/// the first slots of a freshly permuted full block.
pub fn assign_stratified_block(
    strata: &[StratumId],
    pi: f64,
    block_size: usize,
    seed: u64,
) -> Result<Assignment> {
    if block_size < 1 {
        return Err(Error::InvalidConfig("block_size must be >= 1".into()));
    }
    let exact = pi * block_size as f64;
    let per_block = exact.round() as usize;
    if (exact - per_block as f64).abs() > IMBALANCE_EPS {
        log::warn!(
            "pi * block_size = {exact} is not an integer; using {per_block} treated per block"
        );
    }
    let mut template = vec![0u8; block_size];
    template[..per_block].fill(1);

    let mut a = vec![0u8; strata.len()];
    for (k, members) in members_by_stratum(strata).into_iter().enumerate() {
        let mut rng = rng::stream(seed, &[tag::ASSIGN, k as u64]);
        for chunk in members.chunks(block_size) {
            let mut block = template.clone();
            block.shuffle(&mut rng);
            for (&i, &v) in chunk.iter().zip(&block) {
                a[i] = v;
            }
        }
    }
    Ok(Assignment(a))
}

/// Probability of treatment under the generalized Efron rule given the
/// current stratum imbalance `n_[k]1 - pi * n_[k]`.
pub fn biased_coin_probability(imbalance: f64, pi: f64, coin_p: f64) -> f64 {
    if imbalance > IMBALANCE_EPS {
        1.0 - coin_p
    } else if imbalance < -IMBALANCE_EPS {
        coin_p
    } else {
        pi
    }
}

/// Stratified biased-coin design, processed in enrollment order.
pub fn assign_biased_coin(
    strata: &[StratumId],
    pi: f64,
    coin_p: f64,
    seed: u64,
) -> Result<Assignment> {
    check_coin(coin_p)?;
    let mut a = vec![0u8; strata.len()];
    for (k, members) in members_by_stratum(strata).into_iter().enumerate() {
        let mut rng = rng::stream(seed, &[tag::ASSIGN, k as u64]);
        let (mut n, mut n1) = (0usize, 0usize);
        for i in members {
            let d = n1 as f64 - pi * n as f64;
            let treat = rng.random::<f64>() < biased_coin_probability(d, pi, coin_p);
            a[i] = u8::from(treat);
            n += 1;
            n1 += usize::from(treat);
        }
    }
    Ok(Assignment(a))
}

/// Marginal counts for Pocock–Simon minimization: `counts[j][level] = [n0, n1]`.
#[derive(Debug, Clone)]
pub struct MarginCounts {
    counts: Vec<Vec<[usize; 2]>>,
}

impl MarginCounts {
    pub fn new(levels_per_covariate: &[usize]) -> Self {
        Self {
            counts: levels_per_covariate
                .iter()
                .map(|&l| vec![[0usize; 2]; l])
                .collect(),
        }
    }

    pub fn add(&mut self, categories: &[usize], arm: u8) {
        for (j, &level) in categories.iter().enumerate() {
            self.counts[j][level][arm as usize] += 1;
        }
    }

    pub fn get(&self, covariate: usize, level: usize) -> [usize; 2] {
        self.counts[covariate][level]
    }

    /// Weighted sum over covariates of the hypothetical imbalance at the new
    /// unit's levels if it were assigned to `arm`. Counts are scaled by the
    /// target allocation so that the ideal split has zero imbalance; at
    /// `pi = 1/2` this is the plain range `|n1 - n0|`.
    pub fn hypothetical_imbalance(
        &self,
        categories: &[usize],
        arm: u8,
        weights: &[f64],
        pi: f64,
    ) -> f64 {
        categories
            .iter()
            .zip(weights)
            .enumerate()
            .map(|(j, (&level, &w))| {
                let [mut c0, mut c1] = self.counts[j][level];
                if arm == 1 {
                    c1 += 1;
                } else {
                    c0 += 1;
                }
                w * (2.0 * (1.0 - pi) * c1 as f64 - 2.0 * pi * c0 as f64).abs()
            })
            .sum()
    }
}

/// Normalizes minimization weights to sum to one, warning when they did not.
pub fn normalize_weights(weights: &[f64], n_covariates: usize) -> Result<Vec<f64>> {
    if weights.len() != n_covariates {
        return Err(Error::InvalidConfig(format!(
            "{} minimization weights given for {} covariates",
            weights.len(),
            n_covariates
        )));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::InvalidConfig(
            "minimization weights must be finite and nonnegative".into(),
        ));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidConfig(
            "minimization weights must not all be zero".into(),
        ));
    }
    if (total - 1.0).abs() > 1e-9 {
        log::warn!("minimization weights sum to {total}; normalizing");
    }
    Ok(weights.iter().map(|w| w / total).collect())
}

/// Pocock–Simon minimization over categorical covariates.
///
/// `covariates[i][j]` is unit `i`'s level for covariate `j`. Units are
/// processed in order; the arm with the smaller weighted hypothetical
/// imbalance is chosen with probability `coin_p`, ties are broken by a
/// `pi`-coin.
pub fn assign_minimization(
    covariates: &[Vec<usize>],
    weights: &[f64],
    coin_p: f64,
    pi: f64,
    seed: u64,
) -> Result<Assignment> {
    check_coin(coin_p)?;
    let n_cov = covariates.first().map_or(weights.len(), Vec::len);
    if let Some(i) = covariates.iter().position(|c| c.len() != n_cov) {
        return Err(Error::InvalidData(format!(
            "unit {i} has {} covariate levels, expected {n_cov}",
            covariates[i].len()
        )));
    }
    let weights = normalize_weights(weights, n_cov)?;
    let mut levels = vec![0usize; n_cov];
    for unit in covariates {
        for (j, &l) in unit.iter().enumerate() {
            levels[j] = levels[j].max(l + 1);
        }
    }

    let mut margins = MarginCounts::new(&levels);
    let mut rng = rng::stream(seed, &[tag::ASSIGN, u64::MAX]);
    let mut a = Vec::with_capacity(covariates.len());
    for unit in covariates {
        let g1 = margins.hypothetical_imbalance(unit, 1, &weights, pi);
        let g0 = margins.hypothetical_imbalance(unit, 0, &weights, pi);
        let p_treat = if (g1 - g0).abs() <= IMBALANCE_EPS {
            pi
        } else if g1 < g0 {
            coin_p
        } else {
            1.0 - coin_p
        };
        let arm = u8::from(rng.random::<f64>() < p_treat);
        margins.add(unit, arm);
        a.push(arm);
    }
    Ok(Assignment(a))
}

/// Runs the scheme named in `config`. Minimization uses `covariates` when
/// given and otherwise treats the stratum label as its single covariate.
pub fn assign(
    config: &DesignConfig,
    strata: &[StratumId],
    covariates: Option<&[Vec<usize>]>,
) -> Result<Assignment> {
    config.validate()?;
    let seed = config.seed;
    match config.scheme {
        Scheme::SimpleRandomization => Ok(assign_simple(strata, config.pi, seed)),
        Scheme::StratifiedPermutedBlock => {
            assign_stratified_block(strata, config.pi, config.block_size.unwrap_or(0), seed)
        }
        Scheme::StratifiedBiasedCoin => {
            assign_biased_coin(strata, config.pi, config.coin_p.unwrap_or(0.0), seed)
        }
        Scheme::PocockSimonMinimization => {
            let coin_p = config.coin_p.unwrap_or(0.0);
            let fallback;
            let covs = match covariates {
                Some(c) => c,
                None => {
                    fallback = strata.iter().map(|&k| vec![k]).collect::<Vec<_>>();
                    &fallback
                }
            };
            let n_cov = covs.first().map_or(1, Vec::len);
            let weights = config
                .weights
                .clone()
                .unwrap_or_else(|| vec![1.0 / n_cov as f64; n_cov]);
            assign_minimization(covs, &weights, coin_p, config.pi, seed)
        }
    }
}

/// Replication summaries of per-stratum imbalance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignDiagnostics {
    /// Mean over replications of `D_n[k] = n_[k]1 - pi n_[k]`.
    pub d_nk_mean: Vec<f64>,
    /// Largest `|D_n[k]|` seen in any replication.
    pub d_nk_max_abs: Vec<f64>,
    /// Sample variance of `D_n[k]` over replications divided by `n_[k]`.
    pub q_hat: Vec<f64>,
}

/// Summarizes replicated assignments of the same units.
pub fn design_diagnostics(
    replicates: &[Assignment],
    strata: &[StratumId],
    pi: f64,
) -> Result<DesignDiagnostics> {
    if replicates.len() < 2 {
        return Err(Error::InvalidConfig(
            "design diagnostics need at least two replications".into(),
        ));
    }
    let k = n_strata(strata);
    let mut sizes = vec![0usize; k];
    for &s in strata {
        sizes[s] += 1;
    }
    let imbalances: Vec<Vec<f64>> = replicates
        .iter()
        .map(|a| a.imbalance(strata, k, pi))
        .collect();
    let r = replicates.len() as f64;

    let mut d_nk_mean = vec![0.0; k];
    let mut d_nk_max_abs = vec![0.0f64; k];
    let mut q_hat = vec![0.0; k];
    for s in 0..k {
        let mean = imbalances.iter().map(|d| d[s]).sum::<f64>() / r;
        let var = imbalances
            .iter()
            .map(|d| (d[s] - mean).powi(2))
            .sum::<f64>()
            / (r - 1.0);
        d_nk_mean[s] = mean;
        d_nk_max_abs[s] = imbalances.iter().map(|d| d[s].abs()).fold(0.0, f64::max);
        q_hat[s] = if sizes[s] > 0 {
            var / sizes[s] as f64
        } else {
            0.0
        };
    }
    Ok(DesignDiagnostics {
        d_nk_mean,
        d_nk_max_abs,
        q_hat,
    })
}
