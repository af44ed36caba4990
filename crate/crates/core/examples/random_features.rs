//! Random Fourier features as a finite-dimensional stand-in for the
//! Gaussian kernel: the Gram error shrinks like 1/sqrt(D).

use kbrkit::kernel::{rff_features, RffMap};
use kbrkit::rng::{algorithm_stream, stream, streams};
use kbrkit::{gram, KernelSpec, Result};
use nalgebra::DMatrix;
use rand_distr::{Distribution, Normal};

fn main() -> Result<()> {
    let mut rng = stream(2, 0, streams::DATA);
    let unit = Normal::new(0.0, 1.0).unwrap();
    let points = DMatrix::from_fn(200, 3, |_, _| unit.sample(&mut rng));
    let sigma = 1.5;
    let exact = gram(&KernelSpec::gaussian(sigma)?, &points, &points)?.into_entries();

    for d_rff in [16, 64, 256, 1024, 4096] {
        let map = RffMap::sample(3, d_rff, sigma, &mut algorithm_stream(2, 0, d_rff as u64))?;
        let feats = rff_features(&map, &points)?;
        let approx = &feats * feats.transpose();
        println!("D = {d_rff:>5}  max |K - ZZ'| = {:.4}", (approx - &exact).amax());
    }
    Ok(())
}
