use car_heavytail::designs::{self, Assignment, DesignConfig};
use car_heavytail::rng;

fn replicate(
    cfg: &DesignConfig,
    strata: &[usize],
    covs: Option<&[Vec<usize>]>,
    reps: usize,
) -> Vec<Assignment> {
    (0..reps)
        .map(|r| {
            let c = cfg
                .clone()
                .with_seed(rng::derive_seed(cfg.seed, &[r as u64]));
            designs::assign(&c, strata, covs).unwrap()
        })
        .collect()
}

#[test]
fn simple_randomization_q_is_quarter() {
    let strata: Vec<usize> = (0..400).map(|i| i % 2).collect();
    let reps = replicate(&DesignConfig::simple(0.5).with_seed(1), &strata, None, 3000);
    let d = designs::design_diagnostics(&reps, &strata, 0.5).unwrap();
    for q in d.q_hat {
        assert!((q - 0.25).abs() < 0.025, "q_hat {q}");
    }
}

#[test]
fn block_partial_stratum_of_six() {
    let strata = vec![0; 6];
    for a in replicate(
        &DesignConfig::block(0.5, 4).with_seed(2),
        &strata,
        None,
        500,
    ) {
        let n1 = a.n_treated();
        assert!((2..=4).contains(&n1) && n1.abs_diff(3) <= 1, "n1 = {n1}");
    }
}

#[test]
fn block_design_q_is_zero() {
    let strata: Vec<usize> = (0..400).map(|i| i % 4).collect();
    let reps = replicate(
        &DesignConfig::block(0.5, 4).with_seed(3),
        &strata,
        None,
        500,
    );
    let d = designs::design_diagnostics(&reps, &strata, 0.5).unwrap();
    assert!(d.q_hat.iter().all(|&q| q == 0.0));
}

#[test]
fn biased_coin_is_strongly_balanced() {
    let strata: Vec<usize> = (0..200).map(|i| i % 2).collect();
    let reps = replicate(
        &DesignConfig::biased_coin(0.5, 0.85).with_seed(4),
        &strata,
        None,
        5000,
    );
    let d = designs::design_diagnostics(&reps, &strata, 0.5).unwrap();
    assert!(d.q_hat.iter().all(|&q| q < 0.05), "{:?}", d.q_hat);
}

#[test]
fn minimization_treats_half_on_average() {
    let n = 200;
    let strata: Vec<usize> = (0..n).map(|i| i % 4).collect();
    let covs: Vec<Vec<usize>> = (0..n).map(|i| vec![i % 2, (i / 2) % 2]).collect();
    let cfg = DesignConfig::minimization(0.5, 0.85, vec![0.5, 0.5]).with_seed(5);
    let reps = replicate(&cfg, &strata, Some(&covs), 2000);
    let frac = reps.iter().map(|a| a.n_treated() as f64).sum::<f64>() / (2000.0 * n as f64);
    assert!((frac - 0.5).abs() < 0.01, "treated fraction {frac}");
}

#[test]
fn same_seed_same_assignment() {
    let strata: Vec<usize> = (0..300).map(|i| i % 3).collect();
    for cfg in [
        DesignConfig::simple(0.5),
        DesignConfig::block(0.5, 4),
        DesignConfig::biased_coin(0.5, 0.75),
    ] {
        let cfg = cfg.with_seed(42);
        assert_eq!(
            designs::assign(&cfg, &strata, None).unwrap(),
            designs::assign(&cfg, &strata, None).unwrap()
        );
    }
}
