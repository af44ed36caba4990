//! KuLSIF density-ratio fit between N(0, 1) and N(0, 2), with the
//! regularizer picked by held-out score.

use kbrkit::benchmarks::rate::{rate_kernel, true_ratio};
use kbrkit::density_ratio::{default_eta_grid, kulsif_evaluate, tune_eta, RatioFunction};
use kbrkit::rng::{stream, streams};
use kbrkit::{empirical_embedding, Result};
use nalgebra::DMatrix;
use rand_distr::{Distribution, Normal};

fn main() -> Result<()> {
    let n = 500;
    let mut rng = stream(3, 0, streams::DATA);
    let p = Normal::new(0.0, std::f64::consts::SQRT_2).unwrap();
    let pi = Normal::new(0.0, 1.0).unwrap();
    let train_z = DMatrix::from_fn(n, 1, |_, _| p.sample(&mut rng));
    let prior_z = DMatrix::from_fn(n, 1, |_, _| pi.sample(&mut rng));

    let kernel = rate_kernel();
    let sel = tune_eta(&train_z, &prior_z, &kernel, &default_eta_grid())?;
    println!("selected eta {:.3e}", sel.eta);

    let prior = empirical_embedding(&prior_z, kernel)?;
    let f = RatioFunction::fit(&train_z, &prior, sel.eta)?;
    println!("{:>6} {:>9} {:>9}", "z", "r_hat", "r_true");
    for z in [-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0] {
        println!("{z:>6.2} {:>9.4} {:>9.4}", kulsif_evaluate(&f, &[z])?, true_ratio(z));
    }
    let clipped = f.estimate().gamma.iter().filter(|g| **g < 0.0).count();
    println!("{clipped} of {n} training ratios truncated at zero");
    Ok(())
}
