//! Learned observation features for IW-KBR.
//!
//! A small tanh network `ψ_θ` replaces the observation kernel. With `Ψ` the
//! `n × d` table of features (one row per training point), `D = diag(r̂)` and
//! `G` the latent Gram matrix, the profile loss is
//!
//! ```text
//! ℓ(θ) = tr(G D) − tr(G DΨ (ΨᵀDΨ + λI)⁻¹ ΨᵀD)
//! ```
//!
//! and the posterior weights for a conditioning point `x̃` are
//! `w = DΨ (ΨᵀDΨ + λI)⁻¹ ψ(x̃)`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::kernel::{gram, KernelSpec};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out × in`.
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

/// Multilayer perceptron with tanh hidden units and a linear output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureNet {
    layers: Vec<Layer>,
}

/// Per-layer gradients, shaped like the network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct NetGradient {
    pub layers: Vec<Layer>,
}

struct Activations {
    /// `outputs[0]` is the input; `outputs[l + 1]` is the output of layer `l`.
    outputs: Vec<DMatrix<f64>>,
}

impl FeatureNet {
    /// `sizes = [d_in, hidden.., d_out]`. Weights are drawn
    /// `Uniform(±1/√fan_in)`, biases start at zero.
    pub fn new(sizes: &[usize], rng: &mut Rng) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::InvalidParameter("a network needs input and output sizes".into()));
        }
        if sizes.iter().any(|&s| s == 0) {
            return Err(Error::InvalidParameter("layer sizes must be positive".into()));
        }
        let layers = sizes
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                Layer {
                    weights: DMatrix::from_fn(w[1], w[0], |_, _| rng.gen_range(-bound..bound)),
                    bias: DVector::zeros(w[1]),
                }
            })
            .collect();
        Ok(FeatureNet { layers })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Empty("layer list"));
        }
        for pair in layers.windows(2) {
            if pair[1].weights.ncols() != pair[0].weights.nrows() {
                return Err(Error::DimensionMismatch { expected: pair[0].weights.nrows(), got: pair[1].weights.ncols() });
            }
        }
        for l in &layers {
            if l.bias.len() != l.weights.nrows() {
                return Err(Error::DimensionMismatch { expected: l.weights.nrows(), got: l.bias.len() });
            }
            if !l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()) {
                return Err(Error::NonFinite);
            }
        }
        Ok(FeatureNet { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].weights.nrows()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// All parameters, layer by layer, weights (column-major) then bias.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend(l.weights.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::DimensionMismatch { expected: self.num_params(), got: params.len() });
        }
        let mut k = 0;
        for l in &mut self.layers {
            for v in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *v = params[k];
                k += 1;
            }
        }
        Ok(())
    }

    fn forward_cached(&self, x: &DMatrix<f64>) -> Result<Activations> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), got: x.ncols() });
        }
        let last = self.layers.len() - 1;
        let mut outputs = Vec::with_capacity(self.layers.len() + 1);
        outputs.push(x.clone());
        for (li, l) in self.layers.iter().enumerate() {
            let mut z = outputs[li].clone() * l.weights.transpose();
            for mut row in z.row_iter_mut() {
                row += l.bias.transpose();
            }
            if li < last {
                z.apply(|v| *v = v.tanh());
            }
            outputs.push(z);
        }
        Ok(Activations { outputs })
    }

    /// Feature table `Ψ`, one row per input row.
    pub fn forward(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.forward_cached(x)?.outputs.pop().expect("nonempty"))
    }

    fn backward(&self, acts: &Activations, d_out: &DMatrix<f64>) -> NetGradient {
        let last = self.layers.len() - 1;
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = d_out.clone();
        for li in (0..=last).rev() {
            if li < last {
                let h = &acts.outputs[li + 1];
                delta.zip_apply(h, |d, hv| *d *= 1.0 - hv * hv);
            }
            let input = &acts.outputs[li];
            let weights = delta.transpose() * input;
            let bias = DVector::from_iterator(delta.ncols(), delta.column_iter().map(|c| c.sum()));
            let next = &delta * &self.layers[li].weights;
            grads.push(Layer { weights, bias });
            delta = next;
        }
        grads.reverse();
        NetGradient { layers: grads }
    }

    /// `θ ← θ − step · grad`.
    pub fn apply_gradient(&mut self, grad: &NetGradient, step: f64) {
        for (l, g) in self.layers.iter_mut().zip(&grad.layers) {
            l.weights -= &g.weights * step;
            l.bias -= &g.bias * step;
        }
    }
}

impl NetGradient {
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(l.weights.iter());
            out.extend(l.bias.iter());
        }
        out
    }
}

fn check_inputs(g_z: &DMatrix<f64>, r: &DVector<f64>, psi: &DMatrix<f64>, lambda: f64) -> Result<()> {
    let n = r.len();
    if g_z.shape() != (n, n) {
        return Err(Error::DimensionMismatch { expected: n, got: g_z.nrows() });
    }
    check_weighting(r, psi, lambda)
}

fn check_weighting(r: &DVector<f64>, psi: &DMatrix<f64>, lambda: f64) -> Result<()> {
    let n = r.len();
    if psi.nrows() != n {
        return Err(Error::DimensionMismatch { expected: n, got: psi.nrows() });
    }
    if !(lambda > 0.0) {
        return Err(Error::InvalidParameter(format!("lambda must be positive, got {lambda}")));
    }
    if let Some((index, &value)) = r.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
        return Err(Error::NegativeWeight { index, value });
    }
    Ok(())
}

struct LossParts {
    loss: f64,
    /// `S = DΨ`.
    s: DMatrix<f64>,
    a_chol: Cholesky<f64, Dyn>,
}

/// `S = DΨ` and the Cholesky factor of `A = ΨᵀDΨ + λI`.
fn weighted_system(r: &DVector<f64>, psi: &DMatrix<f64>, lambda: f64) -> Result<(DMatrix<f64>, Cholesky<f64, Dyn>)> {
    let d = psi.ncols();
    let mut s = psi.clone();
    for (i, mut row) in s.row_iter_mut().enumerate() {
        row *= r[i];
    }
    let a = psi.tr_mul(&s) + DMatrix::identity(d, d) * lambda;
    let a_chol = a.cholesky().ok_or(Error::Singular)?;
    Ok((s, a_chol))
}

fn loss_parts(g_z: &DMatrix<f64>, r: &DVector<f64>, psi: &DMatrix<f64>, lambda: f64) -> Result<LossParts> {
    check_inputs(g_z, r, psi, lambda)?;
    let (s, a_chol) = weighted_system(r, psi, lambda)?;
    let gs = g_z * &s;
    let explained = (s.transpose() * &gs).component_mul(&a_chol.inverse()).sum();
    let total: f64 = (0..r.len()).map(|i| g_z[(i, i)] * r[i]).sum();
    Ok(LossParts { loss: total - explained, s, a_chol })
}

/// `ℓ = tr(G D) − tr(G DΨ (ΨᵀDΨ + λI)⁻¹ ΨᵀD)` for a feature table `Ψ`
/// (`n × d`).
pub fn adaptive_loss(g_z: &DMatrix<f64>, r: &DVector<f64>, psi: &DMatrix<f64>, lambda: f64) -> Result<f64> {
    Ok(loss_parts(g_z, r, psi, lambda)?.loss)
}

/// Loss and `∂ℓ/∂Ψ = −2D [G S A⁻¹ − Ψ A⁻¹ SᵀG S A⁻¹]` with `S = DΨ`,
/// `A = ΨᵀDΨ + λI`.
pub fn adaptive_loss_feature_grad(
    g_z: &DMatrix<f64>,
    r: &DVector<f64>,
    psi: &DMatrix<f64>,
    lambda: f64,
) -> Result<(f64, DMatrix<f64>)> {
    let parts = loss_parts(g_z, r, psi, lambda)?;
    let a_inv = parts.a_chol.inverse();
    let gsa = g_z * &parts.s * &a_inv;
    let inner = &a_inv * parts.s.transpose() * &gsa;
    let mut grad = (gsa - psi * inner) * -2.0;
    for (i, mut row) in grad.row_iter_mut().enumerate() {
        row *= r[i];
    }
    Ok((parts.loss, grad))
}

/// Loss and parameter gradient for the network evaluated on the training
/// inputs `x`.
pub fn adaptive_loss_grad(
    net: &FeatureNet,
    x: &DMatrix<f64>,
    g_z: &DMatrix<f64>,
    r: &DVector<f64>,
    lambda: f64,
) -> Result<(f64, NetGradient)> {
    let acts = net.forward_cached(x)?;
    let psi = acts.outputs.last().expect("nonempty");
    let (loss, d_psi) = adaptive_loss_feature_grad(g_z, r, psi, lambda)?;
    Ok((loss, net.backward(&acts, &d_psi)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub step_size: f64,
    /// Step at iteration `t` is `step_size / (1 + decay·t)`.
    pub decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { steps: 500, step_size: 1e-3, decay: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Loss before each update, plus the final loss.
    pub losses: Vec<f64>,
    pub warning: Option<String>,
}

impl TrainReport {
    pub fn initial_loss(&self) -> f64 {
        self.losses[0]
    }

    pub fn final_loss(&self) -> f64 {
        *self.losses.last().expect("nonempty")
    }
}

/// Fixed-step gradient descent on `ℓ(θ)`. Aborts on a non-finite loss.
pub fn train_features(
    net: &mut FeatureNet,
    x: &DMatrix<f64>,
    g_z: &DMatrix<f64>,
    r: &DVector<f64>,
    lambda: f64,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    if cfg.steps == 0 {
        return Err(Error::InvalidParameter("steps must be at least 1".into()));
    }
    if !(cfg.step_size > 0.0 && cfg.decay >= 0.0) {
        return Err(Error::InvalidParameter("step size must be positive and decay nonnegative".into()));
    }
    let mut losses = Vec::with_capacity(cfg.steps + 1);
    for t in 0..cfg.steps {
        let (loss, grad) = adaptive_loss_grad(net, x, g_z, r, lambda)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss(t));
        }
        losses.push(loss);
        net.apply_gradient(&grad, cfg.step_size / (1.0 + cfg.decay * t as f64));
    }
    let last = adaptive_loss(g_z, r, &net.forward(x)?, lambda)?;
    if !last.is_finite() {
        return Err(Error::NonFiniteLoss(cfg.steps));
    }
    losses.push(last);
    let warning = (last > losses[0]).then(|| format!("loss increased from {} to {}", losses[0], last));
    Ok(TrainReport { losses, warning })
}

/// Posterior weights under learned features, factorized once for repeated
/// conditioning points.
#[derive(Debug, Clone)]
pub struct AdaptivePosterior {
    s: DMatrix<f64>,
    a_chol: Cholesky<f64, Dyn>,
}

impl AdaptivePosterior {
    pub fn new(psi: &DMatrix<f64>, r: &DVector<f64>, lambda: f64) -> Result<Self> {
        check_weighting(r, psi, lambda)?;
        let (s, a_chol) = weighted_system(r, psi, lambda)?;
        Ok(AdaptivePosterior { s, a_chol })
    }

    /// `w = DΨ (ΨᵀDΨ + λI)⁻¹ ψ(x̃)`.
    pub fn weights(&self, psi_test: &DVector<f64>) -> Result<DVector<f64>> {
        if psi_test.len() != self.s.ncols() {
            return Err(Error::DimensionMismatch { expected: self.s.ncols(), got: psi_test.len() });
        }
        Ok(&self.s * self.a_chol.solve(psi_test))
    }
}

pub fn adaptive_posterior_weights(
    net: &FeatureNet,
    train_x: &DMatrix<f64>,
    r: &DVector<f64>,
    x_test: &[f64],
    lambda: f64,
) -> Result<DVector<f64>> {
    let psi = net.forward(train_x)?;
    let psi_test = net.forward(&DMatrix::from_row_slice(1, x_test.len(), x_test))?.row(0).transpose();
    AdaptivePosterior::new(&psi, r, lambda)?.weights(&psi_test)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Largest relative error over all coordinates of every net.
    pub max_rel_error: f64,
    /// Per-net maxima.
    pub per_net: Vec<f64>,
}

pub const GRADCHECK_STEP: f64 = 1e-5;
/// Denominator floor for relative errors, so coordinates whose gradient is
/// essentially zero are compared absolutely.
pub const GRADCHECK_FLOOR: f64 = 1e-6;

/// Relative error of the analytic gradient against central differences for
/// one net and problem.
pub fn gradient_rel_error(
    net: &FeatureNet,
    x: &DMatrix<f64>,
    g_z: &DMatrix<f64>,
    r: &DVector<f64>,
    lambda: f64,
) -> Result<f64> {
    let (_, grad) = adaptive_loss_grad(net, x, g_z, r, lambda)?;
    let analytic = grad.flatten();
    let base = net.params();
    let mut probe = net.clone();
    let mut worst = 0.0f64;
    for k in 0..base.len() {
        let mut p = base.clone();
        p[k] = base[k] + GRADCHECK_STEP;
        probe.set_params(&p)?;
        let hi = adaptive_loss(g_z, r, &probe.forward(x)?, lambda)?;
        p[k] = base[k] - GRADCHECK_STEP;
        probe.set_params(&p)?;
        let lo = adaptive_loss(g_z, r, &probe.forward(x)?, lambda)?;
        let fd = (hi - lo) / (2.0 * GRADCHECK_STEP);
        let denom = analytic[k].abs().max(fd.abs()).max(GRADCHECK_FLOOR);
        worst = worst.max((analytic[k] - fd).abs() / denom);
    }
    Ok(worst)
}

/// Finite-difference check over `nets` random networks on random problems
/// with `n` points and `d` output features.
pub fn gradient_check(seed: u64, nets: usize, n: usize, d: usize) -> Result<GradCheckReport> {
    let mut per_net = Vec::with_capacity(nets);
    for k in 0..nets {
        let mut rng = crate::rng::algorithm_stream(seed, k as u64, 7);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let x = DMatrix::from_fn(n, 2, |_, _| normal.sample(&mut rng));
        let z = DMatrix::from_fn(n, 2, |_, _| normal.sample(&mut rng));
        let g_z = gram(&KernelSpec::gaussian_median(&z, 1.0)?, &z, &z)?.into_entries();
        let r = DVector::from_fn(n, |_, _| rng.gen_range(0.2..1.8));
        let net = FeatureNet::new(&[2, 8, d], &mut rng)?;
        per_net.push(gradient_rel_error(&net, &x, &g_z, &r, 0.1)?);
    }
    let max_rel_error = per_net.iter().copied().fold(0.0, f64::max);
    Ok(GradCheckReport { max_rel_error, per_net })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kbr::iw_kbr_weights_with_ridge;
    use crate::rng;
    use proptest::prelude::*;

    fn random_matrix(rng: &mut crate::rng::Rng, r: usize, c: usize) -> DMatrix<f64> {
        let normal = Normal::new(0.0, 1.0).unwrap();
        DMatrix::from_fn(r, c, |_, _| normal.sample(rng))
    }

    fn problem(seed: u64, n: usize) -> (DMatrix<f64>, DMatrix<f64>, DVector<f64>) {
        let mut g = rng::stream(seed, 0, 0);
        let x = random_matrix(&mut g, n, 2);
        let z = random_matrix(&mut g, n, 2);
        let g_z = gram(&KernelSpec::gaussian(1.0).unwrap(), &z, &z).unwrap().into_entries();
        let r = DVector::from_fn(n, |_, _| g.gen_range(0.0..2.0));
        (x, g_z, r)
    }

    #[test]
    fn zero_weights_give_zero_loss_and_gradient() {
        let (x, g_z, _) = problem(1, 8);
        let net = FeatureNet::new(&[2, 5, 3], &mut rng::stream(1, 1, 0)).unwrap();
        let r = DVector::zeros(8);
        let (loss, grad) = adaptive_loss_grad(&net, &x, &g_z, &r, 0.1).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.flatten().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn large_ridge_leaves_total_variance() {
        let (x, g_z, r) = problem(2, 8);
        let psi = FeatureNet::new(&[2, 5, 3], &mut rng::stream(2, 1, 0)).unwrap().forward(&x).unwrap();
        let total: f64 = (0..8).map(|i| g_z[(i, i)] * r[i]).sum();
        let loss = adaptive_loss(&g_z, &r, &psi, 1e12).unwrap();
        assert!((loss - total).abs() < 1e-9);
    }

    #[test]
    fn matches_primal_objective() {
        // explicit latent features Φ (n × p), G = ΦΦᵀ
        let mut g = rng::stream(3, 0, 0);
        let (n, d, p) = (3, 2, 4);
        let psi = random_matrix(&mut g, n, d);
        let phi = random_matrix(&mut g, n, p);
        let r = DVector::from_vec(vec![0.5, 1.2, 0.8]);
        let lambda = 0.3;
        let dm = DMatrix::from_diagonal(&r);
        let e = (psi.transpose() * &dm * &psi + DMatrix::identity(d, d) * lambda)
            .try_inverse()
            .unwrap()
            * psi.transpose()
            * &dm
            * &phi;
        let mut primal = lambda * e.norm_squared();
        for i in 0..n {
            let resid = phi.row(i).transpose() - e.transpose() * psi.row(i).transpose();
            primal += r[i] * resid.norm_squared();
        }
        let dual = adaptive_loss(&(&phi * phi.transpose()), &r, &psi, lambda).unwrap();
        assert!((primal - dual).abs() < 1e-10, "{primal} vs {dual}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let report = gradient_check(0, 20, 10, 3).unwrap();
        assert_eq!(report.per_net.len(), 20);
        assert!(report.max_rel_error < 1e-4, "{}", report.max_rel_error);
    }

    #[test]
    fn duplicate_rows_contribute_identically() {
        let (mut x, mut g_z, r0) = problem(4, 6);
        // make row 5 a copy of row 0
        let row0 = x.row(0).into_owned();
        x.set_row(5, &row0);
        let col0 = g_z.column(0).into_owned();
        g_z.set_column(5, &col0);
        let row0 = g_z.row(0).into_owned();
        g_z.set_row(5, &row0);
        let mut r = r0;
        r[5] = r[0];
        let net = FeatureNet::new(&[2, 4, 2], &mut rng::stream(4, 1, 0)).unwrap();
        let psi = net.forward(&x).unwrap();
        let (_, dpsi) = adaptive_loss_feature_grad(&g_z, &r, &psi, 0.2).unwrap();
        assert!((dpsi.row(0) - dpsi.row(5)).amax() < 1e-12);
    }

    #[test]
    fn loss_is_nonnegative() {
        for seed in 0..10 {
            let (x, g_z, r) = problem(seed, 12);
            let psi = FeatureNet::new(&[2, 6, 4], &mut rng::stream(seed, 2, 0)).unwrap().forward(&x).unwrap();
            assert!(adaptive_loss(&g_z, &r, &psi, 1e-3).unwrap() >= -1e-8);
        }
    }

    #[test]
    fn single_step_updates_once() {
        let (x, g_z, r) = problem(5, 10);
        let mut net = FeatureNet::new(&[2, 4, 2], &mut rng::stream(5, 1, 0)).unwrap();
        let before = net.clone();
        let (_, grad) = adaptive_loss_grad(&net, &x, &g_z, &r, 0.1).unwrap();
        let report = train_features(&mut net, &x, &g_z, &r, 0.1, &TrainConfig { steps: 1, step_size: 0.01, decay: 0.0 }).unwrap();
        assert_eq!(report.losses.len(), 2);
        let mut expected = before;
        expected.apply_gradient(&grad, 0.01);
        assert_eq!(net, expected);
        let zero = TrainConfig { steps: 0, ..TrainConfig::default() };
        assert!(train_features(&mut net, &x, &g_z, &r, 0.1, &zero).is_err());
    }

    #[test]
    fn learns_linear_teacher() {
        let mut g = rng::stream(6, 0, 0);
        let n = 100;
        let x = random_matrix(&mut g, n, 3);
        let b = DMatrix::from_row_slice(2, 3, &[1.0, -0.5, 0.3, 0.2, 0.8, -1.0]);
        let z = &x * b.transpose() + random_matrix(&mut g, n, 2) * 0.1;
        let g_z = gram(&KernelSpec::Linear, &z, &z).unwrap().into_entries();
        let r = DVector::from_element(n, 1.0);
        let mut net = FeatureNet::new(&[3, 16, 2], &mut rng::stream(6, 1, 0)).unwrap();
        let cfg = TrainConfig { steps: 500, step_size: 1e-3, decay: 0.0 };
        let report = train_features(&mut net, &x, &g_z, &r, 10.0, &cfg).unwrap();
        assert!(report.losses.iter().all(|l| l.is_finite()));
        assert!(report.final_loss() < 0.5 * report.initial_loss(), "{} -> {}", report.initial_loss(), report.final_loss());
        assert!(report.warning.is_none());
    }

    #[test]
    fn posterior_weight_reductions() {
        let (x, _, _) = problem(7, 6);
        let net = FeatureNet::new(&[2, 4, 3], &mut rng::stream(7, 1, 0)).unwrap();
        let xt = [0.3, -0.2];
        let zero = adaptive_posterior_weights(&net, &x, &DVector::zeros(6), &xt, 0.1).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));

        // D = I is the CME under the learned linear kernel
        let psi = net.forward(&x).unwrap();
        let psi_t = net.forward(&DMatrix::from_row_slice(1, 2, &xt)).unwrap().row(0).transpose();
        let w = adaptive_posterior_weights(&net, &x, &DVector::from_element(6, 1.0), &xt, 0.1).unwrap();
        let cme = (&psi * psi.transpose() + DMatrix::identity(6, 6) * 0.1).try_inverse().unwrap() * (&psi * psi_t);
        assert!((w - cme).amax() < 1e-10);
    }

    #[test]
    fn rotation_of_features_leaves_loss_unchanged() {
        let (x, g_z, r) = problem(8, 9);
        let psi = FeatureNet::new(&[2, 5, 3], &mut rng::stream(8, 1, 0)).unwrap().forward(&x).unwrap();
        let q = random_matrix(&mut rng::stream(8, 2, 0), 3, 3).qr().q();
        let a = adaptive_loss(&g_z, &r, &psi, 0.05).unwrap();
        let b = adaptive_loss(&g_z, &r, &(&psi * q), 0.05).unwrap();
        assert!((a - b).abs() < 1e-8);
    }

    proptest! {
        #[test]
        fn weights_match_iw_under_learned_kernel(seed in 0u64..10_000, lambda in 0.01f64..2.0) {
            let mut g = rng::stream(seed, 0, 0);
            let x = random_matrix(&mut g, 4, 2);
            let r = DVector::from_fn(4, |_, _| g.gen_range(0.0..2.0));
            let net = FeatureNet::new(&[2, 3, 2], &mut g).unwrap();
            let xt = [g.gen_range(-2.0..2.0), g.gen_range(-2.0..2.0)];
            let w = adaptive_posterior_weights(&net, &x, &r, &xt, lambda).unwrap();
            let psi = net.forward(&x).unwrap();
            let psi_t = net.forward(&DMatrix::from_row_slice(1, 2, &xt)).unwrap().row(0).transpose();
            let iw = iw_kbr_weights_with_ridge(&(&psi * psi.transpose()), &r, &(&psi * psi_t), lambda).unwrap();
            prop_assert!((w - iw.weights).amax() < 1e-8);
        }

        #[test]
        fn loss_rotation_invariant(seed in 0u64..10_000) {
            let (x, g_z, r) = problem(seed, 7);
            let mut g = rng::stream(seed, 3, 0);
            let psi = FeatureNet::new(&[2, 4, 3], &mut g).unwrap().forward(&x).unwrap();
            let q = random_matrix(&mut g, 3, 3).qr().q();
            let a = adaptive_loss(&g_z, &r, &psi, 0.1).unwrap();
            let b = adaptive_loss(&g_z, &r, &(&psi * q), 0.1).unwrap();
            prop_assert!((a - b).abs() < 1e-8);
        }
    }
}
