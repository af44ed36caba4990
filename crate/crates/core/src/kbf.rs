//! Kernel Bayes filter: a transition operator learned from consecutive latent
//! pairs of a training trace, alternated with a KBR correction at every
//! observation.
//!
//! Filter states are weight vectors over the `T` training anchors
//! `z_1..z_T`. The transition solve produces weights for `z_2..z_T`; they are
//! stored in a full-length vector with `w_1 = 0`.

use nalgebra::{DMatrix, DVector};

use crate::embedding::{MeanEmbedding, SampleSet};
use crate::error::{Error, Result};
use crate::kbr::{weighted_mean, KbrConfig, KbrModel, Variant};
use crate::kernel::{KernelSpec, PsdFactor};

/// Weights whose ℓ1 norm exceeds this are treated as a diverged filter.
pub const DIVERGENCE_L1: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KbfConfig {
    pub kbr: KbrConfig,
    /// Transition ridge λ'. Defaults to η when unset.
    pub lambda_prime: Option<f64>,
}

impl KbfConfig {
    pub fn new(kbr: KbrConfig) -> Self {
        KbfConfig { kbr, lambda_prime: None }
    }

    pub fn lambda_prime(&self) -> f64 {
        self.lambda_prime.unwrap_or(self.kbr.eta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateKind {
    Filtered,
    Predicted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub weights: DVector<f64>,
    /// 1-based time index the state refers to.
    pub t: usize,
    pub kind: StateKind,
}

#[derive(Debug, Clone)]
pub struct KbfModel {
    kbr: KbrModel,
    transition: PsdFactor,
    /// `k(z_i, z_j)` for `i ≤ T-1`, all `j ≤ T`.
    cross: DMatrix<f64>,
    cfg: KbfConfig,
}

impl KbfModel {
    /// Fits on a training trace; kernels from the median heuristic scaled by
    /// `cfg.kbr.bandwidth_scale` unless pinned.
    pub fn fit(trace: &SampleSet, cfg: &KbfConfig) -> Result<Self> {
        let (kx, kz) = crate::kbr::resolve_kernels(trace, &cfg.kbr)?;
        Self::fit_with_kernels(trace, cfg, kx, kz)
    }

    pub fn fit_with_kernels(trace: &SampleSet, cfg: &KbfConfig, kernel_x: KernelSpec, kernel_z: KernelSpec) -> Result<Self> {
        let t = trace.len();
        if t < 2 {
            return Err(Error::TooFewPoints { needed: 2, got: t });
        }
        if cfg.kbr.variant == Variant::IwTrueRatio {
            return Err(Error::InvalidParameter("the filter supports the iw and original variants".into()));
        }
        let lp = cfg.lambda_prime();
        if !(lp > 0.0) {
            return Err(Error::InvalidParameter(format!("lambda' must be positive, got {lp}")));
        }
        let kbr = KbrModel::fit_with_kernels(trace, &cfg.kbr, kernel_x, kernel_z)?;
        let cross = kbr.g_z().rows(0, t - 1).into_owned();
        let prev = cross.columns(0, t - 1).into_owned();
        let transition = PsdFactor::new(&prev, (t - 1) as f64 * lp)?;
        Ok(KbfModel { kbr, transition, cross, cfg: *cfg })
    }

    pub fn len(&self) -> usize {
        self.kbr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kbr.is_empty()
    }

    pub fn kbr(&self) -> &KbrModel {
        &self.kbr
    }

    pub fn config(&self) -> &KbfConfig {
        &self.cfg
    }

    pub fn anchors(&self) -> &DMatrix<f64> {
        &self.kbr.samples().z
    }
}

/// Initial predicted state for `t = 1`: uniform `1/T`, or the weights of a
/// prior embedded over the training anchors.
pub fn init_state(t_len: usize, prior: Option<(&MeanEmbedding, &DMatrix<f64>)>) -> Result<FilterState> {
    if t_len < 2 {
        return Err(Error::TooFewPoints { needed: 2, got: t_len });
    }
    let weights = match prior {
        None => DVector::from_element(t_len, 1.0 / t_len as f64),
        Some((emb, anchors)) => {
            if emb.anchors() != anchors {
                return Err(Error::InvalidParameter("prior anchors must be the training anchors".into()));
            }
            emb.weights().clone()
        }
    };
    Ok(FilterState { weights, t: 1, kind: StateKind::Predicted })
}

fn check_state(model: &KbfModel, state: &FilterState, kind: StateKind) -> Result<()> {
    if state.kind != kind {
        return Err(Error::InvalidParameter(format!("expected a {kind:?} state, got {:?}", state.kind)));
    }
    if state.weights.len() != model.len() {
        return Err(Error::DimensionMismatch { expected: model.len(), got: state.weights.len() });
    }
    Ok(())
}

fn check_weights(w: &DVector<f64>, step: usize) -> Result<()> {
    if w.iter().all(|v| v.is_finite()) && w.lp_norm(1) <= DIVERGENCE_L1 {
        Ok(())
    } else {
        Err(Error::FilterDiverged(step))
    }
}

/// `w_{2:T} = (G_{Z-1} + (T-1)λ'I)⁻¹ G̃_{Z-1} w`, `w_1 = 0`.
pub fn predict_step(model: &KbfModel, state: &FilterState) -> Result<FilterState> {
    check_state(model, state, StateKind::Filtered)?;
    let solved = model.transition.solve_vec(&(&model.cross * &state.weights))?;
    let mut weights = DVector::zeros(model.len());
    weights.rows_mut(1, model.len() - 1).copy_from(&solved);
    Ok(FilterState { weights, t: state.t + 1, kind: StateKind::Predicted })
}

/// Solver facts from one correction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDiagnostics {
    /// Jitter the IW factorization needed.
    pub jitter: f64,
    /// Smallest truncated ratio estimate.
    pub min_ratio: f64,
}

/// KBR correction with the predicted state as prior embedding.
pub fn correct_step(model: &KbfModel, state: &FilterState, x: &[f64]) -> Result<(FilterState, StepDiagnostics)> {
    check_state(model, state, StateKind::Predicted)?;
    let update = model.kbr.condition_on_anchor_weights(&state.weights, None)?;
    let post = model.kbr.posterior(&update, x)?;
    let weights = post.embedding.weights().clone();
    let min_ratio = update.ratio().map_or(f64::INFINITY, |r| r.r_hat.min());
    Ok((FilterState { weights, t: state.t, kind: StateKind::Filtered }, StepDiagnostics { jitter: post.jitter, min_ratio }))
}

#[derive(Debug, Clone)]
pub struct FilterRun {
    /// `Σ w_i z_i` for each filtered state, one per row.
    pub means: DMatrix<f64>,
    pub states: Vec<FilterState>,
    /// Largest jitter any correction solve needed.
    pub max_jitter: f64,
    /// Smallest truncated ratio estimate over all corrections.
    pub min_ratio: f64,
}

impl FilterRun {
    /// Mean squared Euclidean error against the true latents (one per row).
    pub fn mse(&self, truth: &DMatrix<f64>) -> Result<f64> {
        mean_squared_error(&self.means, truth)
    }
}

/// Average over rows of the squared Euclidean distance between estimate and
/// truth.
pub fn mean_squared_error(estimates: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<f64> {
    if estimates.shape() != truth.shape() {
        return Err(Error::DimensionMismatch { expected: truth.nrows(), got: estimates.nrows() });
    }
    if estimates.nrows() == 0 {
        return Err(Error::Empty("estimates"));
    }
    Ok((estimates - truth).norm_squared() / estimates.nrows() as f64)
}

/// Filters a test observation sequence (one observation per row), starting
/// from the uniform prior.
pub fn run_filter(model: &KbfModel, test_x: &DMatrix<f64>) -> Result<FilterRun> {
    run_filter_from(model, test_x, init_state(model.len(), None)?)
}

pub fn run_filter_from(model: &KbfModel, test_x: &DMatrix<f64>, init: FilterState) -> Result<FilterRun> {
    let steps = test_x.nrows();
    if steps == 0 {
        return Err(Error::Empty("test sequence"));
    }
    let mut predicted = init;
    let dim = model.anchors().ncols();
    let mut run = FilterRun { means: DMatrix::zeros(steps, dim), states: Vec::with_capacity(steps), max_jitter: 0.0, min_ratio: f64::INFINITY };
    for t in 0..steps {
        let x: Vec<f64> = test_x.row(t).iter().copied().collect();
        let (filtered, diag) = correct_step(model, &predicted, &x).map_err(|e| match e {
            Error::Singular | Error::IllConditioned => Error::FilterDiverged(t + 1),
            other => other,
        })?;
        check_weights(&filtered.weights, t + 1)?;
        run.max_jitter = run.max_jitter.max(diag.jitter);
        run.min_ratio = run.min_ratio.min(diag.min_ratio);
        run.means.set_row(t, &weighted_mean(model.anchors(), &filtered.weights).transpose());
        if t + 1 < steps {
            predicted = predict_step(model, &filtered)?;
            check_weights(&predicted.weights, t + 1)?;
        }
        run.states.push(filtered);
    }
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks::dynamics::{simulate_dynamics, DynamicsSpec};
    use crate::embedding::empirical_embedding;
    use crate::kbr::kbr_posterior;
    use proptest::prelude::*;

    fn line_trace(t: usize) -> SampleSet {
        let z = DMatrix::from_fn(t, 1, |i, _| i as f64);
        SampleSet::new(z.clone(), z).unwrap()
    }

    fn pinned(variant: Variant) -> KbfConfig {
        KbfConfig::new(KbrConfig { variant, bandwidths: Some((0.5, 0.5)), eta: 0.01, lambda: 0.01, ..KbrConfig::default() })
    }

    #[test]
    fn init_examples() {
        let s = init_state(4, None).unwrap();
        assert_eq!(s.weights.as_slice(), &[0.25; 4]);
        assert!(init_state(1, None).is_err());
        let anchors = DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 2.0]);
        let prior = MeanEmbedding::new(anchors.clone(), DVector::from_vec(vec![0.2, -0.1, 0.9]), KernelSpec::Linear).unwrap();
        assert_eq!(init_state(3, Some((&prior, &anchors))).unwrap().weights, *prior.weights());
        let other = DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 5.0]);
        assert!(init_state(3, Some((&prior, &other))).is_err());
    }

    #[test]
    fn transition_shifts_point_mass() {
        let trace = line_trace(5);
        let mut cfg = pinned(Variant::Iw);
        cfg.lambda_prime = Some(1e-12);
        let model = KbfModel::fit(&trace, &cfg).unwrap();
        for j in 0..4 {
            let mut w = DVector::zeros(5);
            w[j] = 1.0;
            let out = predict_step(&model, &FilterState { weights: w, t: 1, kind: StateKind::Filtered }).unwrap();
            for i in 0..5 {
                let expected = if i == j + 1 { 1.0 } else { 0.0 };
                assert!((out.weights[i] - expected).abs() < 1e-4, "j={j} i={i} {}", out.weights[i]);
            }
        }
    }

    #[test]
    fn transition_zero_and_large_ridge() {
        let trace = line_trace(6);
        let model = KbfModel::fit(&trace, &pinned(Variant::Iw)).unwrap();
        let zero = FilterState { weights: DVector::zeros(6), t: 1, kind: StateKind::Filtered };
        assert!(predict_step(&model, &zero).unwrap().weights.iter().all(|&v| v == 0.0));
        let mut cfg = pinned(Variant::Iw);
        cfg.lambda_prime = Some(1e12);
        let big = KbfModel::fit(&trace, &cfg).unwrap();
        let s = FilterState { weights: DVector::from_element(6, 1.0), t: 1, kind: StateKind::Filtered };
        assert!(predict_step(&big, &s).unwrap().weights.norm() < 1e-10);
        assert!(predict_step(&big, &FilterState { kind: StateKind::Predicted, ..s }).is_err());
    }

    #[test]
    fn correction_with_uniform_prior_is_plain_kbr() {
        let trace = simulate_dynamics(&DynamicsSpec::rotation(60, 4)).unwrap().samples();
        let cfg = KbfConfig::new(KbrConfig::default());
        let model = KbfModel::fit(&trace, &cfg).unwrap();
        let x = [0.6, 0.7];
        let (filtered, _) = correct_step(&model, &init_state(60, None).unwrap(), &x).unwrap();
        let prior = empirical_embedding(&trace.z, *model.kbr().kernel_z()).unwrap();
        let post = kbr_posterior(&trace, &prior, &x, &cfg.kbr, None).unwrap();
        assert!((filtered.weights - post.weights()).amax() < 1e-12);
    }

    #[test]
    fn correction_accepts_signed_prior() {
        let trace = simulate_dynamics(&DynamicsSpec::rotation(40, 5)).unwrap().samples();
        for variant in [Variant::Iw, Variant::Original] {
            let model = KbfModel::fit(&trace, &KbfConfig::new(KbrConfig { variant, ..KbrConfig::default() })).unwrap();
            let w = DVector::from_fn(40, |i, _| if i % 3 == 0 { -0.05 } else { 0.04 });
            let (out, _) = correct_step(&model, &FilterState { weights: w, t: 3, kind: StateKind::Predicted }, &[1.0, 0.0]).unwrap();
            assert!(out.weights.iter().all(|v| v.is_finite()));
            assert_eq!(out.kind, StateKind::Filtered);
        }
    }

    #[test]
    fn single_step_run() {
        let trace = simulate_dynamics(&DynamicsSpec::rotation(30, 6)).unwrap().samples();
        let model = KbfModel::fit(&trace, &KbfConfig::new(KbrConfig::default())).unwrap();
        let run = run_filter(&model, &DMatrix::from_row_slice(1, 2, &[0.9, 0.1])).unwrap();
        assert_eq!(run.means.nrows(), 1);
        assert_eq!(run.states[0].kind, StateKind::Filtered);
        assert!(run_filter(&model, &DMatrix::zeros(0, 2)).is_err());
    }

    #[test]
    fn identity_dynamics_tracks_closely() {
        // z_{t+1} = z_t drifting slowly along a line, x_t = z_t + N(0, 0.05²)
        use crate::rng;
        use rand_distr::{Distribution, Normal};
        let mut r = rng::stream(8, 0, 0);
        let noise = Normal::new(0.0, 0.05).unwrap();
        let t = 200;
        let z = DMatrix::from_fn(t, 1, |i, _| (i as f64 / 20.0).sin());
        let x = z.map(|v| v + noise.sample(&mut r));
        let trace = SampleSet::new(x.clone(), z.clone()).unwrap();
        let cfg = KbfConfig::new(KbrConfig { eta: 1e-3, lambda: 1e-3, ..KbrConfig::default() });
        let model = KbfModel::fit(&trace, &cfg).unwrap();
        let test_z = DMatrix::from_fn(t, 1, |i, _| (i as f64 / 20.0 + 0.3).sin());
        let test_x = test_z.map(|v| v + noise.sample(&mut r));
        let run = run_filter(&model, &test_x).unwrap();
        let mse = run.mse(&test_z).unwrap();
        assert!(mse < 1e-2, "mse {mse}");
    }

    #[test]
    fn runs_are_deterministic() {
        let trace = simulate_dynamics(&DynamicsSpec::oscillatory(80, 9)).unwrap();
        let test = simulate_dynamics(&DynamicsSpec::oscillatory(30, 10)).unwrap();
        let model = KbfModel::fit(&trace.samples(), &KbfConfig::new(KbrConfig::default())).unwrap();
        let a = run_filter(&model, &test.x).unwrap();
        let b = run_filter(&model, &test.x).unwrap();
        assert_eq!(a.means, b.means);
        for s in &a.states {
            assert!(s.weights.iter().all(|v| v.is_finite()) && s.weights.lp_norm(1) <= DIVERGENCE_L1);
        }
    }

    proptest! {
        #[test]
        fn predict_is_linear(
            w1 in proptest::collection::vec(-1.0f64..1.0, 12),
            w2 in proptest::collection::vec(-1.0f64..1.0, 12),
            alpha in -3.0f64..3.0,
        ) {
            let trace = simulate_dynamics(&DynamicsSpec::rotation(12, 1)).unwrap().samples();
            let model = KbfModel::fit(&trace, &KbfConfig::new(KbrConfig::default())).unwrap();
            let st = |w: DVector<f64>| FilterState { weights: w, t: 1, kind: StateKind::Filtered };
            let (a, b) = (DVector::from_vec(w1), DVector::from_vec(w2));
            let lhs = predict_step(&model, &st(&a * alpha + &b)).unwrap().weights;
            let rhs = predict_step(&model, &st(a)).unwrap().weights * alpha + predict_step(&model, &st(b)).unwrap().weights;
            prop_assert!((lhs - rhs).amax() < 1e-10);
        }
    }
}
