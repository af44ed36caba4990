//! Kalman filter, EKF and bootstrap particle filter on a scalar random walk.

use kbrkit::baselines::{ekf_run, kalman_filter, pf_run, LinearGaussianModel};
use kbrkit::rng::{algorithm_stream, stream, streams};
use kbrkit::Result;
use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal};

fn main() -> Result<()> {
    let model = LinearGaussianModel {
        a: DMatrix::from_element(1, 1, 0.95),
        c: DMatrix::from_element(1, 1, 1.0),
        q: DMatrix::from_element(1, 1, 0.1),
        r: DMatrix::from_element(1, 1, 0.5),
    };
    let steps = 100;
    let mut rng = stream(0, 0, streams::DATA);
    let unit = Normal::new(0.0, 1.0).unwrap();
    let (mut z, mut obs, mut truth) = (0.0, DMatrix::zeros(steps, 1), Vec::new());
    for t in 0..steps {
        z = 0.95 * z + 0.1f64.sqrt() * unit.sample(&mut rng);
        obs[(t, 0)] = z + 0.5f64.sqrt() * unit.sample(&mut rng);
        truth.push(z);
    }

    let (m0, p0) = (DVector::zeros(1), DMatrix::identity(1, 1));
    let kf = kalman_filter(&model, &m0, &p0, &obs)?;
    let ekf = ekf_run(&model, &m0, &p0, &obs)?;
    let mut pf_rng = algorithm_stream(0, 0, 1);
    let particles = DMatrix::from_fn(2000, 1, |_, _| unit.sample(&mut pf_rng));
    let pf = pf_run(&model, &particles, &obs, &mut pf_rng)?;

    let mse = |m: &DMatrix<f64>| truth.iter().enumerate().map(|(t, z)| (m[(t, 0)] - z).powi(2)).sum::<f64>() / steps as f64;
    println!("kalman mse {:.4}", mse(&kf.means));
    println!("ekf - kalman max gap {:.2e}", (&ekf.means - &kf.means).amax());
    println!("pf mse {:.4}  resampled {} times", mse(&pf.means), pf.resample_count);
    Ok(())
}
