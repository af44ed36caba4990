//! Kernels, Gram matrices, bandwidth selection, ridge-regularized PSD solves
//! and random Fourier features.
//!
//! Point sets are `DMatrix<f64>` with one point per row. The Gaussian kernel
//! uses the convention `k(x, x') = exp(-‖x - x'‖² / (2σ²))` everywhere,
//! including the frequency scale of [`RffMap`].

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Error, Result};

/// Point sets larger than this use a random subsample of pairs for the median.
pub const MEDIAN_EXACT_LIMIT: usize = 2000;
const MEDIAN_SAMPLED_PAIRS: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelSpec {
    Gaussian { bandwidth: f64 },
    Linear,
}

impl KernelSpec {
    pub fn gaussian(bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "gaussian bandwidth must be positive, got {bandwidth}"
            )));
        }
        Ok(KernelSpec::Gaussian { bandwidth })
    }

    /// Gaussian kernel with bandwidth `scale * median_heuristic(points)`.
    pub fn gaussian_median(points: &DMatrix<f64>, scale: f64) -> Result<Self> {
        Self::gaussian(scale * median_heuristic(points)?)
    }

    #[inline]
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            KernelSpec::Gaussian { bandwidth } => {
                let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-sq / (2.0 * bandwidth * bandwidth)).exp()
            }
            KernelSpec::Linear => a.iter().zip(b).map(|(x, y)| x * y).sum(),
        }
    }

    pub fn bandwidth(&self) -> Option<f64> {
        match *self {
            KernelSpec::Gaussian { bandwidth } => Some(bandwidth),
            KernelSpec::Linear => None,
        }
    }
}

/// Kernel evaluation table `entries[(i, j)] = k(a_i, b_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    entries: DMatrix<f64>,
    square: bool,
}

impl GramMatrix {
    /// Wraps an arbitrary table, e.g. a Gram built elsewhere. `square` is set
    /// when the table is square; symmetry is not checked.
    pub fn from_entries(entries: DMatrix<f64>) -> Self {
        let square = entries.is_square();
        GramMatrix { entries, square }
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_entries(self) -> DMatrix<f64> {
        self.entries
    }

    pub fn is_square(&self) -> bool {
        self.square
    }

    pub fn nrows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.entries.ncols()
    }
}

impl std::ops::Index<(usize, usize)> for GramMatrix {
    type Output = f64;
    fn index(&self, idx: (usize, usize)) -> &f64 {
        &self.entries[idx]
    }
}

fn rows_as_columns(points: &DMatrix<f64>) -> DMatrix<f64> {
    points.transpose()
}

fn check_finite(points: &DMatrix<f64>) -> Result<()> {
    if points.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite)
    }
}

/// Median of all pairwise Euclidean distances over distinct index pairs.
///
/// Sets with more than [`MEDIAN_EXACT_LIMIT`] points need an RNG; use
/// [`median_heuristic_sampled`] for those. This function falls back to a
/// fixed-seed subsample so it stays deterministic.
pub fn median_heuristic(points: &DMatrix<f64>) -> Result<f64> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x6d65_6469_616e);
    median_heuristic_sampled(points, &mut rng)
}

pub fn median_heuristic_sampled<R: Rng + ?Sized>(points: &DMatrix<f64>, rng: &mut R) -> Result<f64> {
    let n = points.nrows();
    if n < 2 {
        return Err(Error::TooFewPoints { needed: 2, got: n });
    }
    check_finite(points)?;
    let cols = rows_as_columns(points);
    let dist = |i: usize, j: usize| (cols.column(i) - cols.column(j)).norm();

    let mut distances: Vec<f64> = if n <= MEDIAN_EXACT_LIMIT {
        let mut d = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in (i + 1)..n {
                d.push(dist(i, j));
            }
        }
        d
    } else {
        (0..MEDIAN_SAMPLED_PAIRS)
            .map(|_| {
                let pair = sample(rng, n, 2);
                dist(pair.index(0), pair.index(1))
            })
            .collect()
    };
    let median = median_in_place(&mut distances);
    if median > 0.0 {
        Ok(median)
    } else {
        Err(Error::DegenerateSample)
    }
}

/// Median with the midpoint convention for even counts. Panics on empty input.
pub(crate) fn median_in_place(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let m = values.len();
    if m % 2 == 1 {
        values[m / 2]
    } else {
        0.5 * (values[m / 2 - 1] + values[m / 2])
    }
}

/// Gram table between two point sets (rows are points).
pub fn gram(spec: &KernelSpec, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<GramMatrix> {
    if a.ncols() != b.ncols() {
        return Err(Error::DimensionMismatch { expected: a.ncols(), got: b.ncols() });
    }
    check_finite(a)?;
    check_finite(b)?;
    let ac = rows_as_columns(a);
    let bc = rows_as_columns(b);
    let (n, m) = (a.nrows(), b.nrows());
    let same = std::ptr::eq(a, b) || a == b;
    let mut out = DMatrix::zeros(n, m);
    if same {
        for j in 0..m {
            let bj = bc.column(j);
            for i in 0..=j {
                let v = spec.eval(ac.column(i).as_slice(), bj.as_slice());
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
    } else {
        for j in 0..m {
            let bj = bc.column(j);
            for i in 0..n {
                out[(i, j)] = spec.eval(ac.column(i).as_slice(), bj.as_slice());
            }
        }
    }
    Ok(GramMatrix::from_entries(out))
}

/// Kernel values `k(a_i, x)` against a single point.
pub fn gram_column(spec: &KernelSpec, a: &DMatrix<f64>, x: &[f64]) -> Result<DVector<f64>> {
    if a.ncols() != x.len() {
        return Err(Error::DimensionMismatch { expected: a.ncols(), got: x.len() });
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let ac = rows_as_columns(a);
    Ok(DVector::from_iterator(
        a.nrows(),
        (0..a.nrows()).map(|i| spec.eval(ac.column(i).as_slice(), x)),
    ))
}

/// Cholesky factor of `G + (ridge + jitter)·I`, reusable across right-hand sides.
#[derive(Debug, Clone)]
pub struct PsdFactor {
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
}

impl PsdFactor {
    /// Factorizes `G + ridge·I`. On failure retries with jitter
    /// `1e-10·tr(G)/n`, doubling up to 8 times.
    pub fn new(g: &DMatrix<f64>, ridge: f64) -> Result<Self> {
        if !g.is_square() {
            return Err(Error::DimensionMismatch { expected: g.nrows(), got: g.ncols() });
        }
        if !(ridge >= 0.0) {
            return Err(Error::InvalidParameter(format!("ridge must be nonnegative, got {ridge}")));
        }
        let n = g.nrows();
        if n == 0 {
            return Err(Error::Empty("Gram matrix"));
        }
        let mut system = g.clone();
        system.fill_diagonal(0.0);
        let diag = g.diagonal();
        let attempt = |jitter: f64, system: &mut DMatrix<f64>| {
            for i in 0..n {
                system[(i, i)] = diag[i] + ridge + jitter;
            }
            Cholesky::new(system.clone())
        };
        if let Some(chol) = attempt(0.0, &mut system) {
            return Ok(PsdFactor { chol, jitter: 0.0 });
        }
        let base = 1e-10 * (g.trace() + n as f64 * ridge).abs() / n as f64;
        let mut jitter = base;
        for _ in 0..8 {
            if jitter > 0.0 {
                if let Some(chol) = attempt(jitter, &mut system) {
                    return Ok(PsdFactor { chol, jitter });
                }
            }
            jitter *= 2.0;
        }
        Err(Error::IllConditioned)
    }

    /// Jitter that had to be added on top of the requested ridge (0 if none).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    pub fn solve(&self, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if rhs.nrows() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: rhs.nrows() });
        }
        Ok(self.chol.solve(rhs))
    }

    pub fn solve_vec(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        if rhs.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: rhs.len() });
        }
        Ok(self.chol.solve(rhs))
    }
}

/// `(G + ridge·I)⁻¹ rhs` by Cholesky with jitter escalation.
pub fn psd_solve(g: &DMatrix<f64>, ridge: f64, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    PsdFactor::new(g, ridge)?.solve(rhs)
}

pub fn psd_solve_vec(g: &DMatrix<f64>, ridge: f64, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    PsdFactor::new(g, ridge)?.solve_vec(rhs)
}

/// Random Fourier feature map approximating a Gaussian kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct RffMap {
    /// `d_rff × d_in`, entries drawn `Normal(0, 1/σ²)`.
    pub frequencies: DMatrix<f64>,
    /// Uniform on `[0, 2π)`.
    pub phases: DVector<f64>,
    pub scale: f64,
}

impl RffMap {
    pub fn sample<R: Rng + ?Sized>(d_in: usize, d_rff: usize, bandwidth: f64, rng: &mut R) -> Result<Self> {
        if !(bandwidth > 0.0) {
            return Err(Error::InvalidParameter(format!("bandwidth must be positive, got {bandwidth}")));
        }
        if d_rff == 0 || d_in == 0 {
            return Err(Error::Empty("feature dimension"));
        }
        let normal = Normal::new(0.0, 1.0 / bandwidth).expect("finite std");
        let uniform = Uniform::new(0.0, 2.0 * std::f64::consts::PI);
        let frequencies = DMatrix::from_fn(d_rff, d_in, |_, _| normal.sample(rng));
        let phases = DVector::from_fn(d_rff, |_, _| uniform.sample(rng));
        Ok(RffMap { frequencies, phases, scale: (2.0 / d_rff as f64).sqrt() })
    }

    pub fn d_rff(&self) -> usize {
        self.frequencies.nrows()
    }

    pub fn d_in(&self) -> usize {
        self.frequencies.ncols()
    }
}

/// Feature table, one row per point: `scale·cos(W x_i + b)`.
pub fn rff_features(map: &RffMap, points: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if points.ncols() != map.d_in() {
        return Err(Error::DimensionMismatch { expected: map.d_in(), got: points.ncols() });
    }
    let mut proj = points * map.frequencies.transpose();
    for mut row in proj.row_iter_mut() {
        for (v, b) in row.iter_mut().zip(map.phases.iter()) {
            *v = map.scale * (*v + b).cos();
        }
    }
    Ok(proj)
}
