//! KuLSIF density-ratio estimation.
//!
//! The unregularized minimizer of `½⟨r, Ĉ_ZZ r⟩ − ⟨r, m̂_Π⟩ + (η/2)‖r‖²` has the
//! closed form
//!
//! ```text
//! r̃(z) = (1/η) · ( m̂_Π(z) − Σ_i c_i k(z_i, z) ),   c = (G_Z + nηI)⁻¹ g_Π,
//! ```
//!
//! so at training points `r̃(z_i) = γ_i = n·c_i`. The truncated estimate is
//! `r̂ = max(0, r̃)`.

use nalgebra::{DMatrix, DVector};

use crate::embedding::{embedding_inner_products, MeanEmbedding};
use crate::error::{Error, Result};
use crate::kernel::{gram, gram_column, PsdFactor};

/// Default 5-fold CV grid: `10^-4 ..= 10^0`, 9 log-spaced points.
pub fn default_eta_grid() -> Vec<f64> {
    (0..9).map(|i| 10f64.powf(-4.0 + 0.5 * i as f64)).collect()
}

pub const DEFAULT_FOLDS: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct RatioEstimate {
    /// Untruncated values `γ_i` at the training points.
    pub gamma: DVector<f64>,
    /// `max(0, γ_i)`.
    pub r_hat: DVector<f64>,
    /// `c = (G_Z + nηI)⁻¹ g_Π`.
    pub coefficients: DVector<f64>,
    pub eta: f64,
}

impl RatioEstimate {
    fn from_coefficients(coefficients: DVector<f64>, eta: f64) -> Self {
        let n = coefficients.len() as f64;
        let gamma = &coefficients * n;
        let r_hat = gamma.map(|g| g.max(0.0));
        RatioEstimate { gamma, r_hat, coefficients, eta }
    }

    pub fn len(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty()
    }
}

fn check_eta(eta: f64) -> Result<()> {
    if eta > 0.0 && eta.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("eta must be positive, got {eta}")))
    }
}

/// `γ = n(G_Z + nηI)⁻¹ g_Π`, `r̂ = max(0, γ)`.
pub fn kulsif_fit(g_z: &DMatrix<f64>, g_pi: &DVector<f64>, eta: f64) -> Result<RatioEstimate> {
    check_eta(eta)?;
    let n = g_z.nrows();
    if g_pi.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: g_pi.len() });
    }
    let factor = PsdFactor::new(g_z, n as f64 * eta)?;
    kulsif_fit_factored(&factor, g_pi, eta)
}

/// As [`kulsif_fit`] with a precomputed factor of `G_Z + nηI`.
pub fn kulsif_fit_factored(factor: &PsdFactor, g_pi: &DVector<f64>, eta: f64) -> Result<RatioEstimate> {
    check_eta(eta)?;
    let c = factor.solve_vec(g_pi)?;
    Ok(RatioEstimate::from_coefficients(c, eta))
}

/// A fitted KuLSIF ratio that can be evaluated away from the training points.
#[derive(Debug, Clone)]
pub struct RatioFunction {
    estimate: RatioEstimate,
    train_z: DMatrix<f64>,
    prior: MeanEmbedding,
}

impl RatioFunction {
    pub fn fit(train_z: &DMatrix<f64>, prior: &MeanEmbedding, eta: f64) -> Result<Self> {
        let kernel = *prior.kernel();
        let g_z = gram(&kernel, train_z, train_z)?;
        let g_pi = embedding_inner_products(prior, train_z, &kernel)?;
        let estimate = kulsif_fit(g_z.entries(), &g_pi, eta)?;
        Ok(RatioFunction { estimate, train_z: train_z.clone(), prior: prior.clone() })
    }

    pub fn estimate(&self) -> &RatioEstimate {
        &self.estimate
    }

    /// `r̃(z)` before truncation.
    pub fn untruncated(&self, z: &[f64]) -> Result<f64> {
        let k = gram_column(self.prior.kernel(), &self.train_z, z)?;
        let prior_term = self.prior.evaluate(z)?;
        Ok((prior_term - k.dot(&self.estimate.coefficients)) / self.estimate.eta)
    }
}

/// `r̂(z) = max(0, r̃(z))`.
pub fn kulsif_evaluate(f: &RatioFunction, z: &[f64]) -> Result<f64> {
    Ok(f.untruncated(z)?.max(0.0))
}

/// Result of [`tune_eta`]: the selected value and the held-out score per grid entry.
#[derive(Debug, Clone, PartialEq)]
pub struct EtaSelection {
    pub eta: f64,
    pub scores: Vec<f64>,
}

fn fold_indices(len: usize, folds: usize, fold: usize) -> (Vec<usize>, Vec<usize>) {
    (0..len).partition(|i| i % folds != fold)
}

fn select_rows(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    m.select_rows(idx.iter())
}

/// Held-out KuLSIF objective `½·mean_p[r̃²] − mean_π[r̃]` averaged over
/// `folds` interleaved splits of both samples, one score per grid value.
pub fn heldout_scores(
    train_z: &DMatrix<f64>,
    prior_samples: &DMatrix<f64>,
    kernel: &crate::kernel::KernelSpec,
    grid: &[f64],
    folds: usize,
) -> Result<Vec<f64>> {
    if grid.is_empty() {
        return Err(Error::Empty("eta grid"));
    }
    for &eta in grid {
        check_eta(eta)?;
    }
    let min_len = train_z.nrows().min(prior_samples.nrows());
    if min_len < 2 {
        return Err(Error::TooFewPoints { needed: 2, got: min_len });
    }
    let folds = folds.clamp(2, min_len);
    let mut totals = vec![0.0; grid.len()];
    for fold in 0..folds {
        let (p_fit, p_out) = fold_indices(train_z.nrows(), folds, fold);
        let (q_fit, q_out) = fold_indices(prior_samples.nrows(), folds, fold);
        let zp = select_rows(train_z, &p_fit);
        let zq = select_rows(prior_samples, &q_fit);
        let (zp_out, zq_out) = (select_rows(train_z, &p_out), select_rows(prior_samples, &q_out));
        let m_fit = zq.nrows() as f64;

        let g_pp = gram(kernel, &zp, &zp)?.into_entries();
        let g_pi = gram(kernel, &zp, &zq)?.into_entries().column_sum() / m_fit;
        // held-out points against fit anchors and fit prior samples
        let p_out_vs_fit = gram(kernel, &zp_out, &zp)?.into_entries();
        let p_out_prior = gram(kernel, &zp_out, &zq)?.into_entries().column_sum() / m_fit;
        let q_out_vs_fit = gram(kernel, &zq_out, &zp)?.into_entries();
        let q_out_prior = gram(kernel, &zq_out, &zq)?.into_entries().column_sum() / m_fit;

        let n = zp.nrows() as f64;
        for (slot, &eta) in totals.iter_mut().zip(grid) {
            let c = PsdFactor::new(&g_pp, n * eta)?.solve_vec(&g_pi)?;
            let r_p = (&p_out_prior - &p_out_vs_fit * &c) / eta;
            let r_q = (&q_out_prior - &q_out_vs_fit * &c) / eta;
            let score = 0.5 * r_p.norm_squared() / r_p.len() as f64 - r_q.mean();
            *slot += score / folds as f64;
        }
    }
    Ok(totals)
}

/// Picks the grid value minimizing the cross-validated KuLSIF objective.
/// Ties go to the earlier grid entry.
pub fn tune_eta(
    train_z: &DMatrix<f64>,
    prior_samples: &DMatrix<f64>,
    kernel: &crate::kernel::KernelSpec,
    grid: &[f64],
) -> Result<EtaSelection> {
    if grid.len() == 1 {
        check_eta(grid[0])?;
        return Ok(EtaSelection { eta: grid[0], scores: vec![f64::NAN] });
    }
    let scores = heldout_scores(train_z, prior_samples, kernel, grid, DEFAULT_FOLDS)?;
    let best = scores
        .iter()
        .enumerate()
        .fold(0, |best, (i, s)| if *s < scores[best] { i } else { best });
    Ok(EtaSelection { eta: grid[best], scores })
}
