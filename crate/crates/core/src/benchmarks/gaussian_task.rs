//! Synthetic Gaussian posterior-mean task with a closed-form answer.
//!
//! Training pairs come from `P = N((1_d, 0_d), V)` with `V = AᵀA/(2d) + 2I`
//! and `A` a `2d × 2d` standard normal matrix; the first `d` coordinates are
//! `x`, the last `d` are `z`. The prior is `Π = N(0, V_ZZ/2)`, so the true
//! density ratio is `2^{d/2} exp(-zᵀ V_ZZ⁻¹ z / 2)`.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal};

use crate::embedding::SampleSet;
use crate::error::{Error, Result};
use crate::rng::{self, streams, Rng};

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianTaskSpec {
    pub d: usize,
    pub n_train: usize,
    pub n_prior: usize,
    pub n_test: usize,
    pub seed: u64,
    pub run_id: u64,
    /// Replaces the random `A` when set; must be `2d × 2d`.
    pub a_override: Option<DMatrix<f64>>,
}

impl GaussianTaskSpec {
    pub fn new(d: usize, seed: u64, run_id: u64) -> Self {
        GaussianTaskSpec { d, n_train: 200, n_prior: 200, n_test: 100, seed, run_id, a_override: None }
    }
}

/// Conjugate-Gaussian posterior for the task. The likelihood is
/// `X | z ~ N(1 + B z, R)`.
#[derive(Debug, Clone)]
pub struct PosteriorOracle {
    d: usize,
    gain: DMatrix<f64>,
    v_zz_inv: DMatrix<f64>,
    prior_cov: DMatrix<f64>,
    b: DMatrix<f64>,
    r: DMatrix<f64>,
}

impl PosteriorOracle {
    pub fn new(v: &DMatrix<f64>, d: usize) -> Result<Self> {
        if v.nrows() != 2 * d || v.ncols() != 2 * d {
            return Err(Error::DimensionMismatch { expected: 2 * d, got: v.nrows() });
        }
        let v_xx = v.view((0, 0), (d, d)).into_owned();
        let v_xz = v.view((0, d), (d, d)).into_owned();
        let v_zz = v.view((d, d), (d, d)).into_owned();
        let v_zz_inv = v_zz.clone().cholesky().ok_or(Error::Singular)?.inverse();
        let b = &v_xz * &v_zz_inv;
        let r = &v_xx - &b * v_xz.transpose();
        let prior_cov = v_zz * 0.5;
        let s = &b * &prior_cov * b.transpose() + &r;
        let s_inv = s.cholesky().ok_or(Error::Singular)?.inverse();
        let gain = &prior_cov * b.transpose() * s_inv;
        Ok(PosteriorOracle { d, gain, v_zz_inv, prior_cov, b, r })
    }

    /// `E[Z | X = x]` under the prior.
    pub fn posterior_mean(&self, x: &[f64]) -> DVector<f64> {
        let centered = DVector::from_iterator(self.d, x.iter().map(|v| v - 1.0));
        &self.gain * centered
    }

    pub fn true_ratio(&self, z: &[f64]) -> f64 {
        let z = DVector::from_column_slice(z);
        let q = (z.transpose() * &self.v_zz_inv * &z)[0];
        2f64.powf(self.d as f64 / 2.0) * (-0.5 * q).exp()
    }

    pub fn prior_cov(&self) -> &DMatrix<f64> {
        &self.prior_cov
    }

    pub fn likelihood_gain(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn likelihood_cov(&self) -> &DMatrix<f64> {
        &self.r
    }
}

#[derive(Debug, Clone)]
pub struct GaussianTask {
    pub v: DMatrix<f64>,
    pub train: SampleSet,
    pub prior_samples: DMatrix<f64>,
    pub test_x: DMatrix<f64>,
    pub oracle: PosteriorOracle,
}

impl GaussianTask {
    /// Oracle posterior means, one row per test point.
    pub fn test_targets(&self) -> DMatrix<f64> {
        let d = self.test_x.ncols();
        let mut out = DMatrix::zeros(self.test_x.nrows(), d);
        for (i, row) in self.test_x.row_iter().enumerate() {
            let x: Vec<f64> = row.iter().copied().collect();
            out.row_mut(i).copy_from(&self.oracle.posterior_mean(&x).transpose());
        }
        out
    }
}

fn gaussian_rows(rng: &mut Rng, n: usize, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let l = cov.clone().cholesky().ok_or(Error::Singular)?.unpack();
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let dim = mean.len();
    let mut out = DMatrix::zeros(n, dim);
    for i in 0..n {
        let xi = DVector::from_fn(dim, |_, _| normal.sample(rng));
        out.row_mut(i).copy_from(&(mean + &l * xi).transpose());
    }
    Ok(out)
}

pub fn gen_gaussian_task(spec: &GaussianTaskSpec) -> Result<GaussianTask> {
    let d = spec.d;
    if d == 0 {
        return Err(Error::InvalidParameter("dimension must be at least 1".into()));
    }
    let mut data = rng::stream(spec.seed, spec.run_id, streams::DATA);
    let a = match &spec.a_override {
        Some(a) if a.nrows() != 2 * d || a.ncols() != 2 * d => {
            return Err(Error::DimensionMismatch { expected: 2 * d, got: a.nrows() })
        }
        Some(a) => a.clone(),
        None => {
            let normal = Normal::new(0.0, 1.0).expect("unit normal");
            DMatrix::from_fn(2 * d, 2 * d, |_, _| normal.sample(&mut data))
        }
    };
    let v = a.tr_mul(&a) / (2.0 * d as f64) + DMatrix::identity(2 * d, 2 * d) * 2.0;
    let oracle = PosteriorOracle::new(&v, d)?;

    let mut mean = DVector::zeros(2 * d);
    mean.rows_mut(0, d).fill(1.0);
    let joint = gaussian_rows(&mut data, spec.n_train, &mean, &v)?;
    let train = SampleSet {
        x: joint.columns(0, d).into_owned(),
        z: joint.columns(d, d).into_owned(),
    };

    let mut prior_rng = rng::stream(spec.seed, spec.run_id, streams::PRIOR);
    let prior_samples = gaussian_rows(&mut prior_rng, spec.n_prior, &DVector::zeros(d), oracle.prior_cov())?;

    let mut test_rng = rng::stream(spec.seed, spec.run_id, streams::TEST);
    let v_xx = v.view((0, 0), (d, d)).into_owned();
    let test_x = gaussian_rows(&mut test_rng, spec.n_test, &DVector::zeros(d), &v_xx)?;

    Ok(GaussianTask { v, train, prior_samples, test_x, oracle })
}
