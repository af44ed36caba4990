//! Conditioning a kernel prior on an observation: IW vs original KBR on a
//! Gaussian task whose posterior mean is known in closed form.
//!
//!     cargo run --release --example posterior_mean -- 8

use kbrkit::benchmarks::gaussian_task::{gen_gaussian_task, GaussianTaskSpec};
use kbrkit::kbr::{weighted_mean, KbrConfig, KbrModel, Variant};
use kbrkit::kbf::mean_squared_error;
use kbrkit::{empirical_embedding, Result};
use nalgebra::DMatrix;

fn main() -> Result<()> {
    let d: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2);
    let task = gen_gaussian_task(&GaussianTaskSpec::new(d, 1, 0))?;
    let truth = task.test_targets();

    for variant in [Variant::Iw, Variant::Original] {
        let model = KbrModel::fit(&task.train, &KbrConfig { variant, ..KbrConfig::default() })?;
        let prior = empirical_embedding(&task.prior_samples, *model.kernel_z())?;
        // the ratio solve depends only on the prior, so it is shared by all test points
        let update = model.condition(&prior, None)?;

        let mut est = DMatrix::zeros(truth.nrows(), d);
        for (i, row) in task.test_x.row_iter().enumerate() {
            let x: Vec<f64> = row.iter().copied().collect();
            let post = model.posterior(&update, &x)?;
            est.row_mut(i).copy_from(&weighted_mean(&task.train.z, post.weights()).transpose());
        }
        println!("{:>8}  mse {:.4}", variant.name(), mean_squared_error(&est, &truth)?);
    }

    let x0: Vec<f64> = task.test_x.row(0).iter().copied().collect();
    println!("oracle posterior mean at first test point: {:?}", task.oracle.posterior_mean(&x0).as_slice());
    Ok(())
}
