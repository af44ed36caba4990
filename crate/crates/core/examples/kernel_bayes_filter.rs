//! Kernel Bayes filter on a noisy rotation, learned from a training trace
//! of latent states and observations; an EKF with the true model is shown
//! for reference.

use kbrkit::baselines::{ekf_run, OscillatorModel};
use kbrkit::benchmarks::dynamics::{simulate_dynamics, DynamicsSpec};
use kbrkit::kbf::{mean_squared_error, run_filter, KbfConfig, KbfModel};
use kbrkit::kbr::{KbrConfig, Variant};
use kbrkit::Result;
use nalgebra::{DMatrix, DVector};

fn main() -> Result<()> {
    let train = simulate_dynamics(&DynamicsSpec::rotation(400, 1))?;
    let test = simulate_dynamics(&DynamicsSpec::rotation(200, 2))?;

    for variant in [Variant::Iw, Variant::Original] {
        let cfg = KbfConfig::new(KbrConfig { eta: 1e-2, lambda: 1e-3, variant, ..KbrConfig::default() });
        let model = KbfModel::fit(&train.samples(), &cfg)?;
        let run = run_filter(&model, &test.x)?;
        println!("{:>10}  mse {:.4}  smallest ratio {:.3}", format!("kbf-{}", variant.name()), run.mse(&test.z)?, run.min_ratio);
    }

    let model = OscillatorModel::from(&test.spec);
    let m0 = DVector::from_iterator(2, train.z.column_iter().map(|c| c.mean()));
    let ekf = ekf_run(&model, &m0, &DMatrix::identity(2, 2), &test.x)?;
    println!("{:>10}  mse {:.4}", "ekf", mean_squared_error(&ekf.means, &test.z)?);
    println!("{:>10}  mse {:.4}", "raw obs", mean_squared_error(&test.x, &test.z)?);
    Ok(())
}
