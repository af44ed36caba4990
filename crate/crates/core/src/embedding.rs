//! Empirical mean embeddings and the conditional mean embedding, both kept in
//! weight-vector form over sample anchors.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernel::{gram, gram_column, KernelSpec, PsdFactor};

/// Paired draws `(x_i, z_i)` from the training distribution, one pair per row.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub x: DMatrix<f64>,
    pub z: DMatrix<f64>,
}

impl SampleSet {
    pub fn new(x: DMatrix<f64>, z: DMatrix<f64>) -> Result<Self> {
        if x.nrows() != z.nrows() {
            return Err(Error::DimensionMismatch { expected: x.nrows(), got: z.nrows() });
        }
        Ok(SampleSet { x, z })
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }
}

/// `Σ_j w_j φ(anchor_j)`. Weights may be signed and need not sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanEmbedding {
    anchors: DMatrix<f64>,
    weights: DVector<f64>,
    kernel: KernelSpec,
}

impl MeanEmbedding {
    pub fn new(anchors: DMatrix<f64>, weights: DVector<f64>, kernel: KernelSpec) -> Result<Self> {
        if anchors.nrows() != weights.len() {
            return Err(Error::DimensionMismatch { expected: anchors.nrows(), got: weights.len() });
        }
        if !weights.iter().all(|w| w.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(MeanEmbedding { anchors, weights, kernel })
    }

    pub fn anchors(&self) -> &DMatrix<f64> {
        &self.anchors
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// `⟨m̂, φ(z)⟩`.
    pub fn evaluate(&self, z: &[f64]) -> Result<f64> {
        Ok(gram_column(&self.kernel, &self.anchors, z)?.dot(&self.weights))
    }
}

/// Uniform-weight embedding of a sample.
pub fn empirical_embedding(samples: &DMatrix<f64>, kernel: KernelSpec) -> Result<MeanEmbedding> {
    let m = samples.nrows();
    if m == 0 {
        return Err(Error::Empty("sample set"));
    }
    MeanEmbedding::new(samples.clone(), DVector::from_element(m, 1.0 / m as f64), kernel)
}

/// `(g)_i = Σ_j w_j k(anchor_j, z_i)` for every evaluation point `z_i`.
///
/// `kernel` is the kernel the caller evaluates under; it must be the one the
/// embedding was built with.
pub fn embedding_inner_products(
    embedding: &MeanEmbedding,
    eval_points: &DMatrix<f64>,
    kernel: &KernelSpec,
) -> Result<DVector<f64>> {
    if embedding.kernel != *kernel {
        return Err(Error::KernelMismatch);
    }
    let cross = gram(kernel, eval_points, &embedding.anchors)?;
    Ok(cross.entries() * &embedding.weights)
}

/// Kernel ridge regression of `φ(z)` on `ψ(x)`, stored as the factorization of
/// `G_X + nλI`.
#[derive(Debug, Clone)]
pub struct ConditionalOperator {
    train_x: DMatrix<f64>,
    train_z: DMatrix<f64>,
    kernel_x: KernelSpec,
    kernel_z: KernelSpec,
    lambda: f64,
    factor: PsdFactor,
}

pub fn fit_cme(
    samples: &SampleSet,
    lambda: f64,
    kernel_x: KernelSpec,
    kernel_z: KernelSpec,
) -> Result<ConditionalOperator> {
    let n = samples.len();
    if n == 0 {
        return Err(Error::Empty("sample set"));
    }
    if !(lambda > 0.0) {
        return Err(Error::InvalidParameter(format!("lambda must be positive, got {lambda}")));
    }
    let gx = gram(&kernel_x, &samples.x, &samples.x)?;
    let factor = PsdFactor::new(gx.entries(), n as f64 * lambda)?;
    Ok(ConditionalOperator {
        train_x: samples.x.clone(),
        train_z: samples.z.clone(),
        kernel_x,
        kernel_z,
        lambda,
        factor,
    })
}

impl ConditionalOperator {
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn len(&self) -> usize {
        self.train_x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.train_x.nrows() == 0
    }

    /// `w = (G_X + nλI)⁻¹ g_x̃`.
    pub fn weights(&self, x: &[f64]) -> Result<DVector<f64>> {
        let g = gram_column(&self.kernel_x, &self.train_x, x)?;
        self.factor.solve_vec(&g)
    }

    pub fn predict_embedding(&self, x: &[f64]) -> Result<MeanEmbedding> {
        MeanEmbedding::new(self.train_z.clone(), self.weights(x)?, self.kernel_z)
    }
}
