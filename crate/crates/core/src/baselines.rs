//! Model-based filters used as references: the Kalman filter, the extended
//! Kalman filter and a bootstrap particle filter.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::benchmarks::dynamics::{oscillator_step, DynamicsSpec};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Additive-Gaussian state-space model
/// `z_{t+1} = f(z_t) + ε_Z`, `x_t = h(z_t) + ε_X`.
pub trait StateSpaceModel {
    fn state_dim(&self) -> usize;
    fn obs_dim(&self) -> usize;
    fn transition(&self, z: &DVector<f64>) -> Result<DVector<f64>>;
    fn transition_jacobian(&self, z: &DVector<f64>) -> Result<DMatrix<f64>>;
    fn observe(&self, z: &DVector<f64>) -> DVector<f64>;
    fn observation_jacobian(&self, z: &DVector<f64>) -> DMatrix<f64>;
    fn process_cov(&self) -> DMatrix<f64>;
    fn obs_cov(&self) -> DMatrix<f64>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearGaussianModel {
    pub a: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl StateSpaceModel for LinearGaussianModel {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    fn obs_dim(&self) -> usize {
        self.c.nrows()
    }
    fn transition(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(&self.a * z)
    }
    fn transition_jacobian(&self, _z: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(self.a.clone())
    }
    fn observe(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.c * z
    }
    fn observation_jacobian(&self, _z: &DVector<f64>) -> DMatrix<f64> {
        self.c.clone()
    }
    fn process_cov(&self) -> DMatrix<f64> {
        self.q.clone()
    }
    fn obs_cov(&self) -> DMatrix<f64> {
        self.r.clone()
    }
}

/// The oscillator dynamics of [`crate::benchmarks::dynamics`] with identity
/// observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OscillatorModel {
    pub omega: f64,
    pub b: f64,
    pub m: f64,
    pub sigma_z: f64,
    pub sigma_x: f64,
}

impl From<&DynamicsSpec> for OscillatorModel {
    fn from(s: &DynamicsSpec) -> Self {
        OscillatorModel { omega: s.omega, b: s.b, m: s.m, sigma_z: s.sigma_z, sigma_x: s.sigma_x }
    }
}

const NEAR_ORIGIN: f64 = 1e-9;
const FD_STEP: f64 = 1e-6;

impl StateSpaceModel for OscillatorModel {
    fn state_dim(&self) -> usize {
        2
    }
    fn obs_dim(&self) -> usize {
        2
    }
    fn transition(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        let f = oscillator_step([z[0], z[1]], self.omega, self.b, self.m)?;
        Ok(DVector::from_column_slice(&f))
    }

    fn transition_jacobian(&self, z: &DVector<f64>) -> Result<DMatrix<f64>> {
        let (u, v) = (z[0], z[1]);
        let r2 = u * u + v * v;
        if r2.sqrt() < NEAR_ORIGIN {
            let mut j = DMatrix::zeros(2, 2);
            for k in 0..2 {
                let mut hi = z.clone();
                let mut lo = z.clone();
                hi[k] += FD_STEP;
                lo[k] -= FD_STEP;
                let col = (self.transition(&hi)? - self.transition(&lo)?) / (2.0 * FD_STEP);
                j.set_column(k, &col);
            }
            return Ok(j);
        }
        let theta = v.atan2(u);
        let phi = theta + self.omega;
        let rho = 1.0 + self.b * (self.m * theta).sin();
        let drho = self.b * self.m * (self.m * theta).cos();
        let df_dtheta = [drho * phi.cos() - rho * phi.sin(), drho * phi.sin() + rho * phi.cos()];
        let grad = [-v / r2, u / r2];
        Ok(DMatrix::from_fn(2, 2, |i, k| df_dtheta[i] * grad[k]))
    }

    fn observe(&self, z: &DVector<f64>) -> DVector<f64> {
        z.clone()
    }
    fn observation_jacobian(&self, _z: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(2, 2)
    }
    fn process_cov(&self) -> DMatrix<f64> {
        DMatrix::identity(2, 2) * self.sigma_z.powi(2)
    }
    fn obs_cov(&self) -> DMatrix<f64> {
        DMatrix::identity(2, 2) * self.sigma_x.powi(2)
    }
}

fn symmetrize(p: &mut DMatrix<f64>) {
    let t = p.transpose();
    *p += t;
    *p *= 0.5;
}

fn row(m: &DMatrix<f64>, t: usize) -> DVector<f64> {
    m.row(t).transpose()
}

fn check_obs(model: &dyn StateSpaceModel, obs: &DMatrix<f64>) -> Result<()> {
    if obs.ncols() != model.obs_dim() {
        return Err(Error::DimensionMismatch { expected: model.obs_dim(), got: obs.ncols() });
    }
    if obs.nrows() == 0 {
        return Err(Error::Empty("observation sequence"));
    }
    Ok(())
}

/// Filtered means, one row per step.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianFilterRun {
    pub means: DMatrix<f64>,
    pub covs: Vec<DMatrix<f64>>,
}

/// Extended Kalman filter. `(init_mean, init_cov)` is the prior for the
/// first state, so step 1 is a pure measurement update.
pub fn ekf_run(
    model: &dyn StateSpaceModel,
    init_mean: &DVector<f64>,
    init_cov: &DMatrix<f64>,
    obs: &DMatrix<f64>,
) -> Result<GaussianFilterRun> {
    check_obs(model, obs)?;
    let d = model.state_dim();
    if init_mean.len() != d || init_cov.shape() != (d, d) {
        return Err(Error::DimensionMismatch { expected: d, got: init_mean.len() });
    }
    let (q, r) = (model.process_cov(), model.obs_cov());
    let mut m = init_mean.clone();
    let mut p = init_cov.clone();
    let mut means = DMatrix::zeros(obs.nrows(), d);
    let mut covs = Vec::with_capacity(obs.nrows());
    for t in 0..obs.nrows() {
        if t > 0 {
            let f = model.transition_jacobian(&m)?;
            m = model.transition(&m)?;
            p = &f * &p * f.transpose() + &q;
            symmetrize(&mut p);
        }
        let c = model.observation_jacobian(&m);
        let s = &c * &p * c.transpose() + &r;
        let s_chol = s.cholesky().ok_or(Error::SingularInnovation)?;
        let pct = &p * c.transpose();
        let k = s_chol.solve(&pct.transpose()).transpose();
        let innov = row(obs, t) - model.observe(&m);
        m += &k * innov;
        p = (DMatrix::identity(d, d) - &k * &c) * &p;
        symmetrize(&mut p);
        if !m.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite);
        }
        means.set_row(t, &m.transpose());
        covs.push(p.clone());
    }
    Ok(GaussianFilterRun { means, covs })
}

/// Textbook Kalman filter for a linear model, written with explicit inverses.
pub fn kalman_filter(
    model: &LinearGaussianModel,
    init_mean: &DVector<f64>,
    init_cov: &DMatrix<f64>,
    obs: &DMatrix<f64>,
) -> Result<GaussianFilterRun> {
    check_obs(model, obs)?;
    let d = model.state_dim();
    let mut m = init_mean.clone();
    let mut p = init_cov.clone();
    let mut means = DMatrix::zeros(obs.nrows(), d);
    let mut covs = Vec::with_capacity(obs.nrows());
    for t in 0..obs.nrows() {
        if t > 0 {
            m = &model.a * &m;
            p = &model.a * &p * model.a.transpose() + &model.q;
        }
        let s = &model.c * &p * model.c.transpose() + &model.r;
        let s_inv = s.try_inverse().ok_or(Error::SingularInnovation)?;
        let k = &p * model.c.transpose() * s_inv;
        m = &m + &k * (row(obs, t) - &model.c * &m);
        p = &p - &k * &model.c * &p;
        means.set_row(t, &m.transpose());
        covs.push(p.clone());
    }
    Ok(GaussianFilterRun { means, covs })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleFilterRun {
    pub means: DMatrix<f64>,
    /// Effective sample size after weighting, before any resampling.
    pub ess: Vec<f64>,
    pub resample_count: usize,
}

fn noise_factor(q: &DMatrix<f64>) -> Result<Option<DMatrix<f64>>> {
    if q.iter().all(|&v| v == 0.0) {
        return Ok(None);
    }
    let l = q.clone().cholesky().ok_or(Error::InvalidParameter("process covariance is not positive definite".into()))?;
    Ok(Some(l.unpack()))
}

/// `ESS = 1 / Σ w_i²` for normalized weights.
pub fn effective_sample_size(weights: &[f64]) -> f64 {
    1.0 / weights.iter().map(|w| w * w).sum::<f64>()
}

/// Systematic resampling: one uniform offset, `N` evenly spaced pointers.
pub fn systematic_resample(weights: &[f64], rng: &mut Rng) -> Vec<usize> {
    let n = weights.len();
    let u0: f64 = rng.gen::<f64>() / n as f64;
    let mut out = Vec::with_capacity(n);
    let mut cum = weights[0];
    let mut j = 0;
    for i in 0..n {
        let u = u0 + i as f64 / n as f64;
        while u > cum && j + 1 < n {
            j += 1;
            cum += weights[j];
        }
        out.push(j);
    }
    out
}

/// Bootstrap particle filter with systematic resampling whenever the
/// effective sample size drops below half the particle count. `particles`
/// holds draws from the prior of the first state, one per row.
pub fn pf_run(
    model: &dyn StateSpaceModel,
    particles: &DMatrix<f64>,
    obs: &DMatrix<f64>,
    rng: &mut Rng,
) -> Result<ParticleFilterRun> {
    check_obs(model, obs)?;
    let d = model.state_dim();
    let n = particles.nrows();
    if n == 0 {
        return Err(Error::Empty("particle set"));
    }
    if particles.ncols() != d {
        return Err(Error::DimensionMismatch { expected: d, got: particles.ncols() });
    }
    let noise = noise_factor(&model.process_cov())?;
    let r_chol = model
        .obs_cov()
        .cholesky()
        .ok_or(Error::InvalidParameter("observation covariance must be positive definite".into()))?;
    let normal = Normal::new(0.0, 1.0).expect("unit normal");

    let mut parts: Vec<DVector<f64>> = (0..n).map(|i| row(particles, i)).collect();
    let mut logw = vec![-(n as f64).ln(); n];
    let mut means = DMatrix::zeros(obs.nrows(), d);
    let mut ess = Vec::with_capacity(obs.nrows());
    let mut resample_count = 0;

    for t in 0..obs.nrows() {
        if t > 0 {
            for p in parts.iter_mut() {
                let mut next = model.transition(p)?;
                if let Some(l) = &noise {
                    next += l * DVector::from_fn(d, |_, _| normal.sample(rng));
                }
                *p = next;
            }
        }
        let x = row(obs, t);
        for (lw, p) in logw.iter_mut().zip(&parts) {
            let e = r_chol.l().solve_lower_triangular(&(&x - model.observe(p))).ok_or(Error::SingularInnovation)?;
            *lw += -0.5 * e.norm_squared();
        }
        let top = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !top.is_finite() {
            return Err(Error::ParticleDegeneracy);
        }
        let mut w: Vec<f64> = logw.iter().map(|lw| (lw - top).exp()).collect();
        let total: f64 = w.iter().sum();
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::ParticleDegeneracy);
        }
        w.iter_mut().for_each(|v| *v /= total);

        let mut mean = DVector::zeros(d);
        for (wi, p) in w.iter().zip(&parts) {
            mean += p * *wi;
        }
        means.set_row(t, &mean.transpose());
        let e = effective_sample_size(&w);
        ess.push(e);

        if e < n as f64 / 2.0 {
            let idx = systematic_resample(&w, rng);
            parts = idx.iter().map(|&i| parts[i].clone()).collect();
            logw.iter_mut().for_each(|v| *v = -(n as f64).ln());
            resample_count += 1;
        } else {
            for (lw, wi) in logw.iter_mut().zip(&w) {
                *lw = wi.ln();
            }
        }
    }
    Ok(ParticleFilterRun { means, ess, resample_count })
}
