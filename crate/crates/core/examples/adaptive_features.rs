//! Learning a feature map for the conditioning step by gradient descent on
//! the weighted regression loss, then reading off posterior weights.

use kbrkit::adaptive::{adaptive_posterior_weights, gradient_check, train_features, FeatureNet, TrainConfig};
use kbrkit::kbr::weighted_mean;
use kbrkit::rng::{algorithm_stream, stream, streams};
use kbrkit::{gram, KernelSpec, Result};
use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal};

fn main() -> Result<()> {
    let n = 100;
    let mut rng = stream(5, 0, streams::DATA);
    let unit = Normal::new(0.0f64, 1.0).unwrap();
    let z: DMatrix<f64> = DMatrix::from_fn(n, 1, |_, _| unit.sample(&mut rng));
    let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { z[(i, 0)].sin() } else { z[(i, 0)] } + 0.1 * unit.sample(&mut rng));
    let g_z = gram(&KernelSpec::gaussian(1.0)?, &z, &z)?.into_entries();
    // unit importance weights: the prior equals the training marginal
    let r = DVector::from_element(n, 1.0);

    let mut net = FeatureNet::new(&[2, 16, 8], &mut algorithm_stream(5, 0, 0))?;
    let cfg = TrainConfig { steps: 300, step_size: 1e-3, ..TrainConfig::default() };
    let report = train_features(&mut net, &x, &g_z, &r, 0.1, &cfg)?;
    println!("loss {:.3} -> {:.3}", report.initial_loss(), report.final_loss());

    let w = adaptive_posterior_weights(&net, &x, &r, &[0.5, 0.6], 0.1)?;
    println!("posterior mean of z given x = (0.5, 0.6): {:.3}", weighted_mean(&z, &w)[0]);

    let check = gradient_check(0, 5, 10, 3)?;
    println!("gradient check over 5 nets: max relative error {:.2e}", check.max_rel_error);
    Ok(())
}
