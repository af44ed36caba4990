//! Two-dimensional oscillator state-space model.
//!
//! With `θ_t` the angle of `z_t = (u_t, v_t)`,
//!
//! ```text
//! z_{t+1} = (1 + b·sin(Mθ_t)) (cos(θ_t + ω), sin(θ_t + ω)) + ε_Z,   ε_Z ~ N(0, σ_Z² I)
//! x_t     = z_t + ε_X,                                             ε_X ~ N(0, σ_X² I)
//! ```

use nalgebra::DMatrix;
use rand_distr::{Distribution, Normal};

use crate::embedding::SampleSet;
use crate::error::{Error, Result};
use crate::rng::{self, streams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DynamicsSpec {
    pub omega: f64,
    pub b: f64,
    pub m: f64,
    pub sigma_x: f64,
    pub sigma_z: f64,
    /// Number of recorded steps.
    pub len: usize,
    /// Steps simulated and discarded before recording, starting from `(1, 0)`.
    pub burn_in: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DynamicsKind {
    Rotation,
    Oscillatory,
}

impl DynamicsKind {
    pub fn name(self) -> &'static str {
        match self {
            DynamicsKind::Rotation => "rotation",
            DynamicsKind::Oscillatory => "oscillatory",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "rotation" => Some(DynamicsKind::Rotation),
            "oscillatory" => Some(DynamicsKind::Oscillatory),
            _ => None,
        }
    }

    pub fn spec(self, len: usize, seed: u64) -> DynamicsSpec {
        match self {
            DynamicsKind::Rotation => DynamicsSpec::rotation(len, seed),
            DynamicsKind::Oscillatory => DynamicsSpec::oscillatory(len, seed),
        }
    }
}

pub const DEFAULT_BURN_IN: usize = 100;

impl DynamicsSpec {
    /// `ω = 0.3, b = 0`, `σ_X = σ_Z = 0.2`.
    pub fn rotation(len: usize, seed: u64) -> Self {
        DynamicsSpec { omega: 0.3, b: 0.0, m: 0.0, sigma_x: 0.2, sigma_z: 0.2, len, burn_in: DEFAULT_BURN_IN, seed }
    }

    /// `ω = 0.4, b = 0.4, M = 8`, `σ_X = σ_Z = 0.2`.
    pub fn oscillatory(len: usize, seed: u64) -> Self {
        DynamicsSpec { omega: 0.4, b: 0.4, m: 8.0, sigma_x: 0.2, sigma_z: 0.2, len, burn_in: DEFAULT_BURN_IN, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_x >= 0.0 && self.sigma_z >= 0.0) {
            return Err(Error::InvalidParameter("noise scales must be nonnegative".into()));
        }
        if self.len == 0 {
            return Err(Error::Empty("trace length"));
        }
        Ok(())
    }

    /// Noise-free transition `f(z)`.
    pub fn step(&self, z: [f64; 2]) -> Result<[f64; 2]> {
        oscillator_step(z, self.omega, self.b, self.m)
    }
}

/// Noise-free oscillator transition. Errors at the origin, where the angle
/// is undefined.
pub fn oscillator_step(z: [f64; 2], omega: f64, b: f64, m: f64) -> Result<[f64; 2]> {
    let r = z[0].hypot(z[1]);
    if r == 0.0 {
        return Err(Error::ZeroState);
    }
    let theta = z[1].atan2(z[0]);
    let radius = 1.0 + b * (m * theta).sin();
    Ok([radius * (theta + omega).cos(), radius * (theta + omega).sin()])
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceTrace {
    /// Latent states, one per row.
    pub z: DMatrix<f64>,
    /// Observations, one per row.
    pub x: DMatrix<f64>,
    pub spec: DynamicsSpec,
}

impl StateSpaceTrace {
    pub fn samples(&self) -> SampleSet {
        SampleSet { x: self.x.clone(), z: self.z.clone() }
    }

    pub fn len(&self) -> usize {
        self.z.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.z.nrows() == 0
    }

    /// Rows `start..start+len` as a new trace.
    pub fn window(&self, start: usize, len: usize) -> StateSpaceTrace {
        StateSpaceTrace { z: self.z.rows(start, len).into_owned(), x: self.x.rows(start, len).into_owned(), spec: self.spec }
    }
}

pub fn simulate_dynamics(spec: &DynamicsSpec) -> Result<StateSpaceTrace> {
    spec.validate()?;
    let mut latent_rng = rng::stream(spec.seed, 0, streams::DATA);
    let mut obs_rng = rng::stream(spec.seed, 0, streams::NOISE);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let draw = |rng: &mut rng::Rng, s: f64| s * std_normal.sample(rng);

    let mut z = [1.0 + draw(&mut latent_rng, spec.sigma_z), draw(&mut latent_rng, spec.sigma_z)];
    for _ in 0..spec.burn_in {
        let f = spec.step(z)?;
        z = [f[0] + draw(&mut latent_rng, spec.sigma_z), f[1] + draw(&mut latent_rng, spec.sigma_z)];
    }
    let mut zs = DMatrix::zeros(spec.len, 2);
    let mut xs = DMatrix::zeros(spec.len, 2);
    for t in 0..spec.len {
        if t > 0 {
            let f = spec.step(z)?;
            z = [f[0] + draw(&mut latent_rng, spec.sigma_z), f[1] + draw(&mut latent_rng, spec.sigma_z)];
        }
        zs[(t, 0)] = z[0];
        zs[(t, 1)] = z[1];
        xs[(t, 0)] = z[0] + draw(&mut obs_rng, spec.sigma_x);
        xs[(t, 1)] = z[1] + draw(&mut obs_rng, spec.sigma_x);
    }
    Ok(StateSpaceTrace { z: zs, x: xs, spec: *spec })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn pure_rotation_step() {
        let out = oscillator_step([1.0, 0.0], FRAC_PI_2, 0.0, 0.0).unwrap();
        assert!(out[0].abs() < 1e-15 && (out[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn oscillatory_step_at_zero_angle() {
        let out = oscillator_step([1.0, 0.0], 0.4, 0.4, 8.0).unwrap();
        assert!((out[0] - 0.4f64.cos()).abs() < 1e-15 && (out[1] - 0.4f64.sin()).abs() < 1e-15);
        assert!(matches!(oscillator_step([0.0, 0.0], 0.4, 0.4, 8.0), Err(Error::ZeroState)));
    }

    #[test]
    fn noiseless_rotation_stays_on_circle() {
        let spec = DynamicsSpec { sigma_x: 0.0, sigma_z: 0.0, ..DynamicsSpec::rotation(300, 1) };
        let tr = simulate_dynamics(&spec).unwrap();
        for row in tr.z.row_iter() {
            assert!((row.norm() - 1.0).abs() < 1e-12);
        }
        assert_eq!(tr.x, tr.z);
    }

    #[test]
    fn noiseless_oscillator_radius_band() {
        let spec = DynamicsSpec { sigma_x: 0.0, sigma_z: 0.0, ..DynamicsSpec::oscillatory(300, 1) };
        let a = simulate_dynamics(&spec).unwrap();
        let b = simulate_dynamics(&DynamicsSpec { seed: 99, ..spec }).unwrap();
        assert_eq!(a.z, b.z);
        for row in a.z.row_iter().skip(1) {
            let r = row.norm();
            assert!(r >= 0.6 - 1e-12 && r <= 1.4 + 1e-12, "{r}");
        }
    }

    #[test]
    fn reproducible_given_seed() {
        let spec = DynamicsSpec::oscillatory(50, 17);
        assert_eq!(simulate_dynamics(&spec).unwrap(), simulate_dynamics(&spec).unwrap());
        let other = simulate_dynamics(&DynamicsSpec { seed: 18, ..spec }).unwrap();
        assert_ne!(simulate_dynamics(&spec).unwrap().z, other.z);
    }

    #[test]
    fn observation_noise_has_requested_scale() {
        let tr = simulate_dynamics(&DynamicsSpec::rotation(4000, 3)).unwrap();
        let resid = &tr.x - &tr.z;
        let var = resid.norm_squared() / (2.0 * 4000.0);
        assert!((var.sqrt() - 0.2).abs() < 0.01);
    }
}
