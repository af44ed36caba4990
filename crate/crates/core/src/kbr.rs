//! Kernel Bayes' rule: the importance-weighted estimator and the original
//! double-regularized estimator, in Gram-matrix coordinates.
//!
//! Both produce a weight vector `w` over the training anchors `z_i`, so that
//! the posterior embedding is `Σ w_i φ(z_i)`.

use nalgebra::{DMatrix, DVector};

use crate::density_ratio::{kulsif_fit_factored, RatioEstimate};
use crate::embedding::{embedding_inner_products, MeanEmbedding, SampleSet};
use crate::error::{Error, Result};
use crate::kernel::{gram, gram_column, GramMatrix, KernelSpec, PsdFactor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    /// Importance weights from truncated KuLSIF.
    Iw,
    /// Signed KuLSIF weights with squared-operator regularization.
    Original,
    /// Importance weights from a caller-supplied exact density ratio.
    IwTrueRatio,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Iw => "iw",
            Variant::Original => "original",
            Variant::IwTrueRatio => "iw_true_ratio",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "iw" => Some(Variant::Iw),
            "original" => Some(Variant::Original),
            "iw_true_ratio" => Some(Variant::IwTrueRatio),
            _ => None,
        }
    }
}

/// How the ridge λ enters the original estimator's `(ΛG)² + cI` system.
///
/// With unnormalized covariance estimates `Σ γ_i ψ(x_i)⊗ψ(x_i)` the operator
/// regularizer λ appears as `c = λ` in Gram coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RidgeScaling {
    /// `c = nλ`, the same scaling as the IW solve.
    PerSample,
    /// `c = λ`.
    Unscaled,
}

impl RidgeScaling {
    pub fn ridge(self, lambda: f64, n: usize) -> f64 {
        match self {
            RidgeScaling::PerSample => n as f64 * lambda,
            RidgeScaling::Unscaled => lambda,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KbrConfig {
    pub eta: f64,
    pub lambda: f64,
    /// Multiplier β on the median-heuristic bandwidths.
    pub bandwidth_scale: f64,
    pub variant: Variant,
    pub original_ridge: RidgeScaling,
    /// Pinned `(σ_X, σ_Z)`; overrides the median heuristic when set.
    pub bandwidths: Option<(f64, f64)>,
}

impl Default for KbrConfig {
    fn default() -> Self {
        KbrConfig {
            eta: 0.2,
            lambda: 0.2,
            bandwidth_scale: 1.0,
            variant: Variant::Iw,
            original_ridge: RidgeScaling::Unscaled,
            bandwidths: None,
        }
    }
}

impl KbrConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("eta", self.eta), ("lambda", self.lambda), ("bandwidth scale", self.bandwidth_scale)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Gaussian kernels for X and Z, from the pinned bandwidths or `β × median`.
pub fn resolve_kernels(samples: &SampleSet, cfg: &KbrConfig) -> Result<(KernelSpec, KernelSpec)> {
    match cfg.bandwidths {
        Some((bx, bz)) => Ok((KernelSpec::gaussian(bx)?, KernelSpec::gaussian(bz)?)),
        None => Ok((
            KernelSpec::gaussian_median(&samples.x, cfg.bandwidth_scale)?,
            KernelSpec::gaussian_median(&samples.z, cfg.bandwidth_scale)?,
        )),
    }
}

/// Posterior weights together with the jitter the solve needed (0 when the
/// regularized system factorized as given).
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSolve {
    pub weights: DVector<f64>,
    pub jitter: f64,
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

fn check_importance_weights(r_hat: &DVector<f64>) -> Result<()> {
    match r_hat.iter().position(|&r| !(r >= 0.0)) {
        Some(index) => Err(Error::NegativeWeight { index, value: r_hat[index] }),
        None => Ok(()),
    }
}

/// Symmetric within `1e-12` relative to the largest entry.
pub(crate) fn is_symmetric(m: &DMatrix<f64>) -> bool {
    let scale = m.amax().max(f64::MIN_POSITIVE);
    let n = m.nrows();
    m.is_square() && (0..n).all(|i| (0..i).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= 1e-12 * scale))
}

/// Factor of the IW system `√D G_X √D + ridge·I`, shared across conditioning points.
#[derive(Debug, Clone)]
pub struct IwSystem {
    sqrt_d: DVector<f64>,
    factor: PsdFactor,
}

impl IwSystem {
    pub fn new(g_x: &DMatrix<f64>, r_hat: &DVector<f64>, ridge: f64) -> Result<Self> {
        check_len(g_x.nrows(), r_hat.len())?;
        check_importance_weights(r_hat)?;
        if !is_symmetric(g_x) {
            return Err(Error::InvalidParameter("G_X must be symmetric".into()));
        }
        let sqrt_d = r_hat.map(f64::sqrt);
        let mut system = g_x.clone();
        for j in 0..system.ncols() {
            for i in 0..system.nrows() {
                system[(i, j)] *= sqrt_d[i] * sqrt_d[j];
            }
        }
        let factor = PsdFactor::new(&system, ridge)?;
        Ok(IwSystem { sqrt_d, factor })
    }

    pub fn jitter(&self) -> f64 {
        self.factor.jitter()
    }

    /// `√D (√D G √D + ridge·I)⁻¹ √D g`.
    pub fn weights(&self, g_x: &DVector<f64>) -> Result<DVector<f64>> {
        check_len(self.sqrt_d.len(), g_x.len())?;
        let rhs = g_x.component_mul(&self.sqrt_d);
        Ok(self.factor.solve_vec(&rhs)?.component_mul(&self.sqrt_d))
    }
}

/// `w = √D(√D G_X √D + nλI)⁻¹√D g_x̃` with `D = diag(r̂)`.
pub fn iw_kbr_weights(g_x: &GramMatrix, r_hat: &DVector<f64>, g_xt: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    let n = g_x.nrows();
    Ok(iw_kbr_weights_with_ridge(g_x.entries(), r_hat, g_xt, n as f64 * lambda)?.weights)
}

/// IW weights with the total ridge given directly.
pub fn iw_kbr_weights_with_ridge(
    g_x: &DMatrix<f64>,
    r_hat: &DVector<f64>,
    g_xt: &DVector<f64>,
    ridge: f64,
) -> Result<WeightSolve> {
    let system = IwSystem::new(g_x, r_hat, ridge)?;
    Ok(WeightSolve { weights: system.weights(g_xt)?, jitter: system.jitter() })
}

/// LU factor of `(ΛG_X)² + ridge·I` for the original estimator.
#[derive(Debug, Clone)]
pub struct OriginalSystem {
    lambda_g: DMatrix<f64>,
    gamma: DVector<f64>,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl OriginalSystem {
    pub fn new(g_x: &DMatrix<f64>, gamma: &DVector<f64>, ridge: f64) -> Result<Self> {
        let n = g_x.nrows();
        check_len(n, gamma.len())?;
        check_len(n, g_x.ncols())?;
        let mut lambda_g = g_x.clone();
        for (i, mut row) in lambda_g.row_iter_mut().enumerate() {
            row *= gamma[i];
        }
        let mut system = &lambda_g * &lambda_g;
        for i in 0..n {
            system[(i, i)] += ridge;
        }
        let lu = system.lu();
        if !lu.is_invertible() {
            return Err(Error::Singular);
        }
        Ok(OriginalSystem { lambda_g, gamma: gamma.clone(), lu })
    }

    /// `ΛG((ΛG)² + ridge·I)⁻¹Λg`.
    pub fn weights(&self, g_x: &DVector<f64>) -> Result<DVector<f64>> {
        check_len(self.gamma.len(), g_x.len())?;
        let rhs = g_x.component_mul(&self.gamma);
        let y = self.lu.solve(&rhs).ok_or(Error::Singular)?;
        let w = &self.lambda_g * y;
        if w.iter().all(|v| v.is_finite()) {
            Ok(w)
        } else {
            Err(Error::Singular)
        }
    }
}

/// `w = ΛG_X((ΛG_X)² + cI)⁻¹Λg_x̃` with `Λ = diag(γ)` and `c` from `scaling`.
pub fn original_kbr_weights(
    g_x: &GramMatrix,
    gamma: &DVector<f64>,
    g_xt: &DVector<f64>,
    lambda: f64,
    scaling: RidgeScaling,
) -> Result<DVector<f64>> {
    let ridge = scaling.ridge(lambda, g_x.nrows());
    OriginalSystem::new(g_x.entries(), gamma, ridge)?.weights(g_xt)
}

/// Posterior embedding over the training z-anchors, with the conditioning
/// point it was computed for.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorEmbedding {
    pub embedding: MeanEmbedding,
    pub conditioning: DVector<f64>,
    /// Jitter added to the IW system (always 0 for a valid PSD system).
    pub jitter: f64,
}

impl PosteriorEmbedding {
    pub fn weights(&self) -> &DVector<f64> {
        self.embedding.weights()
    }
}

/// Readout feature for a posterior embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Readout {
    /// `φ̃(z) = z`, giving the posterior mean.
    Linear,
    /// The embedding itself.
    Kernel,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expectation {
    Mean(DVector<f64>),
    Embedding(MeanEmbedding),
}

pub fn posterior_expectation(post: &PosteriorEmbedding, readout: Readout) -> Expectation {
    match readout {
        Readout::Linear => Expectation::Mean(weighted_mean(post.embedding.anchors(), post.weights())),
        Readout::Kernel => Expectation::Embedding(post.embedding.clone()),
    }
}

/// `Σ_i w_i z_i` for anchors stored one per row.
pub fn weighted_mean(anchors: &DMatrix<f64>, w: &DVector<f64>) -> DVector<f64> {
    anchors.tr_mul(w)
}

/// Training Grams and kernels for KBR, reusable across priors and
/// conditioning points.
#[derive(Debug, Clone)]
pub struct KbrModel {
    samples: SampleSet,
    kernel_x: KernelSpec,
    kernel_z: KernelSpec,
    g_x: DMatrix<f64>,
    g_z: DMatrix<f64>,
    cfg: KbrConfig,
    kulsif: PsdFactor,
}

impl KbrModel {
    pub fn fit(samples: &SampleSet, cfg: &KbrConfig) -> Result<Self> {
        let (kx, kz) = resolve_kernels(samples, cfg)?;
        Self::fit_with_kernels(samples, cfg, kx, kz)
    }

    pub fn fit_with_kernels(samples: &SampleSet, cfg: &KbrConfig, kernel_x: KernelSpec, kernel_z: KernelSpec) -> Result<Self> {
        cfg.validate()?;
        if samples.is_empty() {
            return Err(Error::Empty("sample set"));
        }
        let g_x = gram(&kernel_x, &samples.x, &samples.x)?.into_entries();
        let g_z = gram(&kernel_z, &samples.z, &samples.z)?.into_entries();
        let kulsif = PsdFactor::new(&g_z, samples.len() as f64 * cfg.eta)?;
        Ok(KbrModel { samples: samples.clone(), kernel_x, kernel_z, g_x, g_z, cfg: *cfg, kulsif })
    }

    pub fn kernel_x(&self) -> &KernelSpec {
        &self.kernel_x
    }

    pub fn kernel_z(&self) -> &KernelSpec {
        &self.kernel_z
    }

    pub fn g_z(&self) -> &DMatrix<f64> {
        &self.g_z
    }

    pub fn samples(&self) -> &SampleSet {
        &self.samples
    }

    pub fn config(&self) -> &KbrConfig {
        &self.cfg
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Condition on a prior given as an arbitrary embedding under `k_Z`.
    pub fn condition(&self, prior: &MeanEmbedding, true_ratio: Option<&dyn Fn(&[f64]) -> f64>) -> Result<KbrUpdate> {
        let g_pi = embedding_inner_products(prior, &self.samples.z, &self.kernel_z)?;
        self.condition_on_inner_products(&g_pi, true_ratio)
    }

    /// Condition on a prior `Σ v_i φ(z_i)` over the training anchors, so
    /// `g_Π = G_Z v`.
    pub fn condition_on_anchor_weights(&self, v: &DVector<f64>, true_ratio: Option<&dyn Fn(&[f64]) -> f64>) -> Result<KbrUpdate> {
        check_len(self.len(), v.len())?;
        self.condition_on_inner_products(&(&self.g_z * v), true_ratio)
    }

    pub fn condition_on_inner_products(&self, g_pi: &DVector<f64>, true_ratio: Option<&dyn Fn(&[f64]) -> f64>) -> Result<KbrUpdate> {
        let n = self.len();
        check_len(n, g_pi.len())?;
        match self.cfg.variant {
            Variant::Iw => {
                let ratio = kulsif_fit_factored(&self.kulsif, g_pi, self.cfg.eta)?;
                let system = IwSystem::new(&self.g_x, &ratio.r_hat, n as f64 * self.cfg.lambda)?;
                Ok(KbrUpdate { solver: Solver::Iw(system), ratio: Some(ratio) })
            }
            Variant::IwTrueRatio => {
                let f = true_ratio.ok_or_else(|| Error::InvalidParameter("iw_true_ratio needs a true density ratio".into()))?;
                let r: DVector<f64> = DVector::from_iterator(
                    n,
                    self.samples.z.row_iter().map(|row| f(row.transpose().as_slice())),
                );
                let system = IwSystem::new(&self.g_x, &r, n as f64 * self.cfg.lambda)?;
                Ok(KbrUpdate { solver: Solver::Iw(system), ratio: None })
            }
            Variant::Original => {
                let ratio = kulsif_fit_factored(&self.kulsif, g_pi, self.cfg.eta)?;
                let ridge = self.cfg.original_ridge.ridge(self.cfg.lambda, n);
                let system = OriginalSystem::new(&self.g_x, &ratio.gamma, ridge)?;
                Ok(KbrUpdate { solver: Solver::Original(system), ratio: Some(ratio) })
            }
        }
    }

    /// Posterior weights at `x` for an already conditioned prior.
    pub fn posterior(&self, update: &KbrUpdate, x: &[f64]) -> Result<PosteriorEmbedding> {
        let g_xt = gram_column(&self.kernel_x, &self.samples.x, x)?;
        let (weights, jitter) = match &update.solver {
            Solver::Iw(s) => (s.weights(&g_xt)?, s.jitter()),
            Solver::Original(s) => (s.weights(&g_xt)?, 0.0),
        };
        Ok(PosteriorEmbedding {
            embedding: MeanEmbedding::new(self.samples.z.clone(), weights, self.kernel_z)?,
            conditioning: DVector::from_column_slice(x),
            jitter,
        })
    }
}

#[derive(Debug, Clone)]
enum Solver {
    Iw(IwSystem),
    Original(OriginalSystem),
}

/// A prior folded into the KBR solve: the density-ratio estimate and the
/// factorized system, ready for any number of conditioning points.
#[derive(Debug, Clone)]
pub struct KbrUpdate {
    solver: Solver,
    ratio: Option<RatioEstimate>,
}

impl KbrUpdate {
    /// The KuLSIF estimate (absent for the true-ratio variant).
    pub fn ratio(&self) -> Option<&RatioEstimate> {
        self.ratio.as_ref()
    }

    pub fn jitter(&self) -> f64 {
        match &self.solver {
            Solver::Iw(s) => s.jitter(),
            Solver::Original(_) => 0.0,
        }
    }
}

/// The whole pipeline for one conditioning point: Grams, `g_Π`, density
/// ratio, weight solve.
pub fn kbr_posterior(
    samples: &SampleSet,
    prior: &MeanEmbedding,
    x: &[f64],
    cfg: &KbrConfig,
    true_ratio: Option<&dyn Fn(&[f64]) -> f64>,
) -> Result<PosteriorEmbedding> {
    // k_Z is whatever the prior was embedded with
    let (kernel_x, _) = resolve_kernels(samples, cfg)?;
    let model = KbrModel::fit_with_kernels(samples, cfg, kernel_x, *prior.kernel())?;
    let update = model.condition(prior, true_ratio)?;
    model.posterior(&update, x)
}
