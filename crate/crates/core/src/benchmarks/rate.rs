//! Sup-norm convergence of the truncated ratio estimate on a one-dimensional
//! problem with a known ratio.
//!
//! `π = N(0, 1)`, `p = N(0, 2)`, so `r₀(z) = √2 · exp(-z²/4)`. The kernel is
//! `exp(-(z - z')²/4)`.

use nalgebra::DMatrix;
use rand_distr::{Distribution, Normal};

use crate::density_ratio::RatioFunction;
use crate::embedding::empirical_embedding;
use crate::error::Result;
use crate::kernel::KernelSpec;
use crate::rng::{self, streams};

pub const DEFAULT_ETA0: f64 = 0.05;
pub const DEFAULT_SIZES: [usize; 4] = [250, 500, 1000, 2000];
pub const GRID_HALF_WIDTH: f64 = 2.0;
pub const GRID_POINTS: usize = 81;

/// `η(n) = η₀ · (n / 250)^(-1/3)` with the default `η₀`.
pub fn rate_eta(n: usize) -> f64 {
    rate_eta_with(DEFAULT_ETA0, n)
}

pub fn rate_eta_with(eta0: f64, n: usize) -> f64 {
    eta0 * (n as f64 / 250.0).powf(-1.0 / 3.0)
}

pub fn true_ratio(z: f64) -> f64 {
    std::f64::consts::SQRT_2 * (-z * z / 4.0).exp()
}

pub fn rate_kernel() -> KernelSpec {
    KernelSpec::Gaussian { bandwidth: std::f64::consts::SQRT_2 }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatePoint {
    pub n: usize,
    pub run_id: usize,
    pub seed: u64,
    pub sup_error: f64,
}

impl RatePoint {
    pub const CSV_HEADER: &'static str = "n,run_id,seed,sup_error";

    pub fn to_csv(&self) -> String {
        format!("{},{},{},{}", self.n, self.run_id, self.seed, self.sup_error)
    }
}

/// Draws `n` samples from each of `p` and `π` and returns the grid sup-norm
/// error of the fit with regularizer `eta`.
pub fn sup_error(n: usize, eta: f64, seed: u64, run_id: usize) -> Result<f64> {
    let mut data = rng::stream(seed, run_id as u64, streams::DATA);
    let mut prior = rng::stream(seed, run_id as u64, streams::PRIOR);
    let p = Normal::new(0.0, std::f64::consts::SQRT_2).expect("valid normal");
    let pi = Normal::new(0.0, 1.0).expect("valid normal");
    let z = DMatrix::from_fn(n, 1, |_, _| p.sample(&mut data));
    let zp = DMatrix::from_fn(n, 1, |_, _| pi.sample(&mut prior));
    let kernel = rate_kernel();
    let f = RatioFunction::fit(&z, &empirical_embedding(&zp, kernel)?, eta)?;
    let mut worst = 0.0f64;
    for i in 0..GRID_POINTS {
        let t = -GRID_HALF_WIDTH + 2.0 * GRID_HALF_WIDTH * i as f64 / (GRID_POINTS - 1) as f64;
        let est = f.untruncated(&[t])?.max(0.0);
        worst = worst.max((est - true_ratio(t)).abs());
    }
    Ok(worst)
}

pub fn rate_study(sizes: &[usize], runs: usize, seed: u64, eta0: f64) -> Result<Vec<RatePoint>> {
    let mut out = Vec::with_capacity(sizes.len() * runs);
    for &n in sizes {
        for run_id in 0..runs {
            let sup = sup_error(n, rate_eta_with(eta0, n), seed, run_id)?;
            out.push(RatePoint { n, run_id, seed, sup_error: sup });
        }
    }
    Ok(out)
}

/// Median sup-norm error per sample size, in the order of `sizes`.
pub fn median_by_size(points: &[RatePoint], sizes: &[usize]) -> Vec<(usize, f64)> {
    sizes
        .iter()
        .map(|&n| {
            let mut v: Vec<f64> = points.iter().filter(|p| p.n == n).map(|p| p.sup_error).collect();
            (n, crate::kernel::median_in_place(&mut v))
        })
        .collect()
}
