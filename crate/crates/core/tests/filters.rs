//! Filtering regressions on the rotation benchmark.

use kbrkit::baselines::{pf_run, OscillatorModel};
use kbrkit::benchmarks::dynamics::{simulate_dynamics, DynamicsSpec};
use kbrkit::benchmarks::experiments::{tune_hyperparams, TuningGrid};
use kbrkit::kbf::{correct_step, init_state, mean_squared_error, predict_step, KbfConfig, KbfModel};
use kbrkit::kbr::{weighted_mean, KbrConfig, Variant};
use kbrkit::rng::{algorithm_stream, derive_seed, streams};
use nalgebra::DMatrix;

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) }
}

#[test]
fn correction_beats_prediction() {
    let fractions: Vec<f64> = (0..10u64)
        .map(|seed| {
            let train = simulate_dynamics(&DynamicsSpec::rotation(50, derive_seed(seed, 0, streams::DATA))).unwrap();
            let test = simulate_dynamics(&DynamicsSpec::rotation(50, derive_seed(seed, 0, streams::TEST))).unwrap();
            let cfg = KbfConfig::new(KbrConfig { eta: 1e-2, lambda: 1e-3, ..KbrConfig::default() });
            let model = KbfModel::fit(&train.samples(), &cfg).unwrap();
            let mut state = init_state(model.len(), None).unwrap();
            let mut improved = 0;
            for t in 0..test.len() {
                let x: Vec<f64> = test.x.row(t).iter().copied().collect();
                let truth = test.z.row(t).transpose();
                let before = (weighted_mean(model.anchors(), &state.weights) - &truth).norm();
                let (filtered, _) = correct_step(&model, &state, &x).unwrap();
                let after = (weighted_mean(model.anchors(), &filtered.weights) - &truth).norm();
                if after < before {
                    improved += 1;
                }
                state = predict_step(&model, &filtered).unwrap();
            }
            improved as f64 / test.len() as f64
        })
        .collect();
    let med = median(fractions.clone());
    assert!(med >= 0.6, "median improved fraction {med}, per seed {fractions:?}");
}

#[test]
fn more_particles_lower_error_on_rotation() {
    let mse = |n: usize, seed: u64| {
        let trace = simulate_dynamics(&DynamicsSpec::rotation(100, seed)).unwrap();
        let model = OscillatorModel::from(&trace.spec);
        let mut g = algorithm_stream(seed, 0, n as u64);
        // initial particles spread around the unit circle the state lives near
        let parts = DMatrix::from_fn(n, 2, |i, c| {
            let a = i as f64 * std::f64::consts::TAU / n as f64;
            if c == 0 { a.cos() } else { a.sin() }
        });
        let run = pf_run(&model, &parts, &trace.x, &mut g).unwrap();
        mean_squared_error(&run.means, &trace.z).unwrap()
    };
    let small = median((0..10).map(|s| mse(100, s)).collect());
    let large = median((0..10).map(|s| mse(2000, s)).collect());
    assert!(large <= small, "N=2000 median {large} vs N=100 median {small}");
}

#[test]
fn tuning_never_loses_to_default_pair() {
    // the default (β = 1, λ = 0.01) is in the grid, so the selected pair can
    // only match or beat it on the validation suffix
    let grid = TuningGrid {
        betas: vec![0.5, 1.0, 2.0],
        lambdas: vec![1e-3, 1e-2, 1e-1],
        validation_len: 60,
        ..TuningGrid::default()
    };
    let mut wins = 0;
    for seed in 0..30u64 {
        let trace = simulate_dynamics(&DynamicsSpec::rotation(120, seed)).unwrap();
        let tuned = tune_hyperparams(&trace, Variant::Iw, &grid).unwrap();
        let default = tuned.score_of(1.0, 1e-2).unwrap();
        assert!(tuned.table.iter().all(|e| tuned.best.score <= e.score));
        if tuned.best.score <= default {
            wins += 1;
        }
    }
    assert!(wins >= 20, "{wins}/30");
}
