//! Variance estimators and Wald intervals.

use serde::{Deserialize, Serialize};

use crate::designs::{DesignConfig, Scheme};
use crate::error::{Error, Result};
use crate::estimators::TrialData;

/// Message returned when a design-dependent variance is requested under
/// minimization.
pub const MINIMIZATION_REFUSAL: &str =
    "the tdim variance is not universally applicable under minimization; use str with its stratified variance";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceComponents {
    /// Within-stratum component.
    pub v_z2: f64,
    /// Between-stratum heterogeneity component.
    pub v_h2: f64,
    /// Assignment-imbalance component.
    pub v_a2: f64,
}

/// Per-stratum imbalance variances `q_[k]` implied by a design.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignQ {
    /// The same value in every stratum.
    Known(f64),
    /// The design does not satisfy the imbalance assumption (minimization).
    Undefined,
}

impl DesignQ {
    pub fn per_stratum(self, n_strata: usize) -> Option<Vec<f64>> {
        match self {
            DesignQ::Known(q) => Some(vec![q; n_strata]),
            DesignQ::Undefined => None,
        }
    }
}

pub fn q_for_design(config: &DesignConfig, pi: f64) -> DesignQ {
    match config.scheme {
        Scheme::SimpleRandomization => DesignQ::Known(pi * (1.0 - pi)),
        Scheme::StratifiedPermutedBlock | Scheme::StratifiedBiasedCoin => DesignQ::Known(0.0),
        Scheme::PocockSimonMinimization => DesignQ::Undefined,
    }
}

/// Plug-in components from transformed outcomes `z`.
///
/// Cell variances use the `1/n` convention. Every populated stratum must have
/// at least two units in each arm.
pub fn variance_components(
    z: &[f64],
    data: &TrialData,
    pi: f64,
    q: &[f64],
) -> Result<VarianceComponents> {
    if z.len() != data.len() {
        return Err(Error::InvalidData(format!(
            "{} transformed outcomes for {} units",
            z.len(),
            data.len()
        )));
    }
    if !(pi > 0.0 && pi < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "treated probability {pi} outside (0, 1)"
        )));
    }
    let k = data.n_strata;
    if q.len() < k {
        return Err(Error::InvalidConfig(format!(
            "{} q values for {k} strata",
            q.len()
        )));
    }
    if let Some(bad) = q.iter().find(|&&v| !(v >= 0.0)) {
        return Err(Error::InvalidConfig(format!("q value {bad} is negative")));
    }
    data.require_cells(2)?;

    let mut count = vec![[0usize; 2]; k];
    let mut sum = vec![[0.0f64; 2]; k];
    let mut arm_sum = [0.0f64; 2];
    for i in 0..data.len() {
        let a = data.arm(i) as usize;
        count[data.strata[i]][a] += 1;
        sum[data.strata[i]][a] += z[i];
        arm_sum[a] += z[i];
    }
    let n_arm = [data.a.n_control() as f64, data.a.n_treated() as f64];
    let grand = [arm_sum[0] / n_arm[0], arm_sum[1] / n_arm[1]];
    let mean: Vec<[f64; 2]> = (0..k)
        .map(|s| {
            [0, 1].map(|a| {
                if count[s][a] > 0 {
                    sum[s][a] / count[s][a] as f64
                } else {
                    0.0
                }
            })
        })
        .collect();
    let mut ss = vec![[0.0f64; 2]; k];
    for (i, &zi) in z.iter().enumerate() {
        let (s, a) = (data.strata[i], data.arm(i) as usize);
        ss[s][a] += (zi - mean[s][a]).powi(2);
    }

    let n = data.len() as f64;
    let (mut v_z2, mut v_h2, mut v_a2) = (0.0, 0.0, 0.0);
    for s in 0..k {
        let nk = count[s][0] + count[s][1];
        if nk == 0 {
            continue;
        }
        let p = nk as f64 / n;
        let s1 = ss[s][1] / count[s][1] as f64;
        let s0 = ss[s][0] / count[s][0] as f64;
        v_z2 += p * (s1 / pi + s0 / (1.0 - pi));
        let d1 = mean[s][1] - grand[1];
        let d0 = mean[s][0] - grand[0];
        v_h2 += p * (d1 - d0).powi(2);
        v_a2 += p * q[s] * (d1 / pi + d0 / (1.0 - pi)).powi(2);
    }
    Ok(VarianceComponents { v_z2, v_h2, v_a2 })
}

pub fn variance_tdim(c: &VarianceComponents) -> f64 {
    c.v_z2 + c.v_h2 + c.v_a2
}

pub fn variance_str(c: &VarianceComponents) -> f64 {
    c.v_z2 + c.v_h2
}

/// `1 / (pi (1 - pi) I_hat)`.
pub fn variance_conservative(fisher_hat: f64, pi: f64) -> Result<f64> {
    if !(fisher_hat > 0.0) || !fisher_hat.is_finite() {
        return Err(Error::DegenerateFisher(fisher_hat));
    }
    Ok(1.0 / (pi * (1.0 - pi) * fisher_hat))
}

/// Inverse standard normal CDF (Acklam's rational approximation, relative
/// error below 1.2e-9).
pub fn normal_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.02425;

    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let tail = |q: f64| {
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    if p < P_LOW {
        tail((-2.0 * p.ln()).sqrt())
    } else if p > 1.0 - P_LOW {
        -tail((-2.0 * (1.0 - p).ln()).sqrt())
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    }
}

/// Point estimate with optional inference. Median estimators carry no
/// variance, in which case the interval fields are `None` and `note` says why.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub estimator: String,
    pub variance: Option<String>,
    pub tau_hat: f64,
    pub sigma2: Option<f64>,
    pub se: Option<f64>,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    pub length: Option<f64>,
    pub alpha: f64,
    pub n: usize,
    pub note: Option<String>,
}

impl EstimateReport {
    pub fn point_only(estimator: &str, tau_hat: f64, n: usize, alpha: f64, note: &str) -> Self {
        Self {
            estimator: estimator.to_string(),
            variance: None,
            tau_hat,
            sigma2: None,
            se: None,
            ci_lo: None,
            ci_hi: None,
            length: None,
            alpha,
            n,
            note: Some(note.to_string()),
        }
    }

    pub fn covers(&self, tau: f64) -> Option<bool> {
        Some(self.ci_lo? <= tau && tau <= self.ci_hi?)
    }
}

/// `tau_hat -/+ z_(alpha/2) sigma / sqrt(n)`.
pub fn wald_ci(tau_hat: f64, sigma2: f64, n: usize, alpha: f64) -> Result<EstimateReport> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    if !(sigma2 >= 0.0) {
        return Err(Error::InvalidData(format!("variance {sigma2} is negative")));
    }
    if n == 0 {
        return Err(Error::InvalidData("sample size is zero".into()));
    }
    let se = (sigma2 / n as f64).sqrt();
    let half = normal_quantile(1.0 - alpha / 2.0) * se;
    Ok(EstimateReport {
        estimator: String::new(),
        variance: None,
        tau_hat,
        sigma2: Some(sigma2),
        se: Some(se),
        ci_lo: Some(tau_hat - half),
        ci_hi: Some(tau_hat + half),
        length: Some(2.0 * half),
        alpha,
        n,
        note: None,
    })
}

/// Variance estimator attached to a point estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceKind {
    /// `v_z2 + v_h2 + v_a2`; needs the design's `q`.
    Tdim,
    /// `v_z2 + v_h2`; valid under every supported design.
    Str,
    /// `1 / (pi (1 - pi) I_hat)`.
    Conservative,
}

impl VarianceKind {
    pub fn label(self) -> &'static str {
        match self {
            VarianceKind::Tdim => "tdim",
            VarianceKind::Str => "str",
            VarianceKind::Conservative => "conservative",
        }
    }
}

/// Evaluates the requested variance from transformed outcomes.
/// `fisher_hat` is only used by [`VarianceKind::Conservative`].
pub fn select_variance(
    kind: VarianceKind,
    z: &[f64],
    data: &TrialData,
    pi: f64,
    design_q: DesignQ,
    fisher_hat: Option<f64>,
) -> Result<f64> {
    match kind {
        VarianceKind::Conservative => variance_conservative(
            fisher_hat.ok_or_else(|| {
                Error::NotApplicable("conservative variance needs a Fisher information".into())
            })?,
            pi,
        ),
        VarianceKind::Str => {
            let c = variance_components(z, data, pi, &vec![0.0; data.n_strata])?;
            Ok(variance_str(&c))
        }
        VarianceKind::Tdim => {
            let q = design_q
                .per_stratum(data.n_strata)
                .ok_or_else(|| Error::NotApplicable(MINIMIZATION_REFUSAL.into()))?;
            Ok(variance_tdim(&variance_components(z, data, pi, &q)?))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::designs::Assignment;
    use approx::assert_relative_eq;

    fn data(a: &[u8], s: &[usize]) -> TrialData {
        TrialData::new(
            vec![0.0; a.len()],
            Assignment::new(a.to_vec()).unwrap(),
            s.to_vec(),
        )
        .unwrap()
    }

    #[test]
    fn hand_case_components() {
        let d = data(&[1, 1, 0, 0, 1, 1, 0, 0], &[0, 0, 0, 0, 1, 1, 1, 1]);
        let z = [1.0, 1.0, 0.0, 0.0, -1.0, -1.0, 0.0, 0.0];
        let c = variance_components(&z, &d, 0.5, &[0.25, 0.25]).unwrap();
        assert_eq!(c.v_z2, 0.0);
        assert_relative_eq!(c.v_h2, 1.0);
        assert_relative_eq!(c.v_a2, 1.0);
        let c0 = variance_components(&z, &d, 0.5, &[0.0, 0.0]).unwrap();
        assert_eq!(c0.v_a2, 0.0);
        assert_eq!(variance_tdim(&c) - variance_str(&c), c.v_a2);
    }

    #[test]
    fn single_stratum_no_heterogeneity() {
        let d = data(&[1, 1, 0, 0], &[0; 4]);
        let c = variance_components(&[1.0, 3.0, -1.0, 2.0], &d, 0.5, &[0.25]).unwrap();
        assert!(c.v_h2.abs() < 1e-15);
        assert!(c.v_a2.abs() < 1e-15);
        // s1 = 1, s0 = 2.25.
        assert_relative_eq!(c.v_z2, 2.0 * 1.0 + 2.0 * 2.25);
    }

    #[test]
    fn singleton_cell_rejected() {
        let d = data(&[1, 0, 0], &[0; 3]);
        assert!(matches!(
            variance_components(&[0.0; 3], &d, 0.5, &[0.0]),
            Err(Error::SingletonCell { stratum: 0, arm: 1 })
        ));
    }

    #[test]
    fn conservative_values() {
        assert_eq!(variance_conservative(1.0, 0.5).unwrap(), 4.0);
        assert_eq!(variance_conservative(0.5, 0.5).unwrap(), 8.0);
        assert!(variance_conservative(0.0, 0.5).is_err());
    }

    #[test]
    fn quantile_accuracy() {
        assert!((normal_quantile(0.975) - 1.959_963_984_540_054).abs() < 1e-8);
        assert!((normal_quantile(0.5)).abs() < 1e-15);
        assert!((normal_quantile(0.001) + 3.090_232_306_167_813_5).abs() < 1e-8);
        assert!((normal_quantile(0.99) - 2.326_347_874_040_841).abs() < 1e-8);
    }

    #[test]
    fn wald_examples() {
        let r = wald_ci(0.0, 1.0, 100, 0.05).unwrap();
        assert!((r.ci_hi.unwrap() - 0.195_996).abs() < 1e-6);
        assert!((r.ci_lo.unwrap() + 0.195_996).abs() < 1e-6);
        let r = wald_ci(1.5, 0.0, 10, 0.05).unwrap();
        assert_eq!((r.ci_lo, r.ci_hi), (Some(1.5), Some(1.5)));
        assert!(wald_ci(0.0, 1.0, 10, 1.0).is_err());
        assert!(wald_ci(0.0, 1.0, 10, 0.0).is_err());
    }

    #[test]
    fn design_q_values() {
        assert_eq!(
            q_for_design(&DesignConfig::simple(0.5), 0.5),
            DesignQ::Known(0.25)
        );
        assert_eq!(
            q_for_design(&DesignConfig::block(0.5, 4), 0.5),
            DesignQ::Known(0.0)
        );
        assert_eq!(
            q_for_design(&DesignConfig::biased_coin(0.5, 0.85), 0.5),
            DesignQ::Known(0.0)
        );
        let min = DesignConfig::minimization(0.5, 0.85, vec![0.5, 0.5]);
        assert_eq!(q_for_design(&min, 0.5), DesignQ::Undefined);
        let d = data(&[1, 1, 0, 0], &[0; 4]);
        let err = select_variance(
            VarianceKind::Tdim,
            &[0.0; 4],
            &d,
            0.5,
            DesignQ::Undefined,
            None,
        )
        .unwrap_err();
        assert!(err
            .to_string()
            .contains("not universally applicable under minimization"));
    }
}
