use car_heavytail::designs::DesignConfig;
use car_heavytail::estimators::{EstimatorConfig, InitialEstimator};
use car_heavytail::pipeline::{EstimatorKind, EstimatorSpec};
use car_heavytail::score::{ThresholdChoice, Thresholds};
use car_heavytail::sim::{self, Execution, GridConfig, OutcomeModelSpec, SimConfig, Tail};

fn model1(tail: Tail, design: DesignConfig, reps: usize, seed: u64) -> SimConfig {
    let outcome = OutcomeModelSpec {
        model_id: 1,
        tail,
        tau: 0.0,
        n: 1000,
        pi: 0.5,
    };
    let mut cfg = SimConfig::new(outcome, design, reps);
    cfg.master_seed = seed;
    cfg
}

#[test]
fn normal_tail_simple_randomization() {
    let res = sim::run_simulation(
        &model1(Tail::Normal, DesignConfig::simple(0.5), 500, 21),
        Execution::Parallel,
    )
    .unwrap();
    let tdim = res.row("tdim").unwrap();
    assert!((tdim.sd - 0.090).abs() <= 0.01, "tdim sd {}", tdim.sd);
    let se = res.row("str").unwrap().se.unwrap();
    assert!((se - 0.082).abs() <= 0.01, "str se {se}");
}

#[test]
fn normal_tail_stratified_blocks() {
    let res = sim::run_simulation(
        &model1(Tail::Normal, DesignConfig::block(0.5, 4), 500, 22),
        Execution::Parallel,
    )
    .unwrap();
    let sd = res.row("tdim").unwrap().sd;
    assert!((sd - 0.078).abs() <= 0.01, "tdim sd {sd}");
}

#[test]
fn cauchy_difference_in_means_is_unstable() {
    let mut cfg = model1(Tail::Cauchy, DesignConfig::simple(0.5), 200, 23);
    cfg.estimators = vec![EstimatorSpec::new(EstimatorKind::NaiveDim)];
    let res = sim::run_simulation(&cfg, Execution::Sequential).unwrap();
    assert!(res.row("naive_dim").unwrap().sd > 10.0);
}

#[test]
fn zero_score_returns_initial_estimate_every_replication() {
    let mut cfg = model1(Tail::Laplace, DesignConfig::simple(0.5), 20, 24);
    cfg.estimators = vec![
        EstimatorSpec::new(EstimatorKind::Md),
        EstimatorSpec::new(EstimatorKind::Tdim).with_initial(InitialEstimator::DiffMedians),
    ];
    cfg.estimator_config = EstimatorConfig {
        var_bandwidth_scale: 1.0,
        ..EstimatorConfig::default()
    };
    cfg.estimator_config.score.thresholds = ThresholdChoice::Explicit(Thresholds {
        c_n: 0.0,
        ..Thresholds::wide()
    });
    for i in 0..cfg.reps {
        let out = sim::run_replication(&cfg, i).unwrap();
        assert_eq!(out.reports[0].tau_hat, out.reports[1].tau_hat);
        assert!(out.reports[1].se.is_none());
        assert!(out.reports[1].note.is_some());
    }
}

#[test]
fn grid_is_reproducible_across_execution_modes() {
    let grid = GridConfig {
        model_id: 2,
        n: 300,
        pi: 0.5,
        tau: 1.0,
        tails: vec![Tail::Normal, Tail::Cauchy],
        designs: vec![
            DesignConfig::simple(0.5),
            DesignConfig::biased_coin(0.5, 0.75),
        ],
        estimators: car_heavytail::pipeline::table_estimators(),
        estimator_config: EstimatorConfig::default(),
        reps: 12,
        alpha: 0.05,
        seed: 5,
    };
    let a = sim::run_grid(&grid, Execution::Sequential).unwrap();
    let b = sim::run_grid(&grid, Execution::Parallel).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 4);
}

#[test]
fn model_three_with_minimization_runs() {
    let outcome = OutcomeModelSpec {
        model_id: 3,
        tail: Tail::Laplace,
        tau: 0.5,
        n: 400,
        pi: 0.5,
    };
    let mut cfg = SimConfig::new(
        outcome,
        DesignConfig::minimization(0.5, 0.85, vec![0.5, 0.5]),
        10,
    );
    cfg.master_seed = 25;
    let res = sim::run_simulation(&cfg, Execution::Parallel).unwrap();
    assert_eq!(res.failures, 0);
    let tdim = res.row("tdim").unwrap();
    assert!(tdim.se.is_none() && tdim.note.is_some());
    assert!(res.row("str").unwrap().se.is_some());
}

#[test]
fn resampling_null_effect() {
    let units = sim::generate(
        &OutcomeModelSpec {
            model_id: 1,
            tail: Tail::Normal,
            tau: 0.0,
            n: 600,
            pi: 0.5,
        },
        26,
    )
    .unwrap();
    let design = DesignConfig::block(0.5, 4).with_seed(1);
    let a = car_heavytail::designs::assign(&design, &units.strata, None).unwrap();
    let real = units.observe(a).unwrap();
    let ests = vec![
        EstimatorSpec::new(EstimatorKind::StrDim),
        EstimatorSpec::new(EstimatorKind::Str),
    ];
    let run = || {
        sim::synthetic_resample(
            &real,
            0.0,
            &design,
            &ests,
            &EstimatorConfig::default(),
            60,
            0.05,
            9,
            Execution::Parallel,
        )
        .unwrap()
    };
    let first = run();
    assert_eq!(first, run());
    for row in &first.rows {
        assert!(
            row.bias.abs() < 3.0 * row.sd / 60f64.sqrt() + 0.01,
            "{row:?}"
        );
    }
}
