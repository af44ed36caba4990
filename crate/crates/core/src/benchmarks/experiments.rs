//! Replicated experiment runners producing per-run MSE rows.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rayon::prelude::*;

use crate::baselines::{ekf_run, pf_run, OscillatorModel};
use crate::benchmarks::dynamics::{simulate_dynamics, DynamicsKind, StateSpaceTrace};
use crate::benchmarks::gaussian_task::{gen_gaussian_task, GaussianTaskSpec};
use crate::density_ratio::{default_eta_grid, tune_eta};
use crate::embedding::empirical_embedding;
use crate::error::{Error, Result};
use crate::kbf::{mean_squared_error, run_filter, KbfConfig, KbfModel};
use crate::kbr::{weighted_mean, KbrConfig, KbrModel, RidgeScaling, Variant};
use crate::kernel::KernelSpec;
use crate::rng;

pub const POSTERIOR_MEAN: &str = "posterior-mean";
pub const KBF: &str = "kbf";

/// One `(method, setting, run)` outcome. Only the first seven fields are
/// written to CSV; the rest feed invariant checks.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub experiment: String,
    pub method: String,
    /// Dimension for the posterior-mean task, dynamics name for filtering.
    pub setting: String,
    pub run_id: usize,
    pub seed: u64,
    pub mse: f64,
    pub wall_ms: f64,
    /// Largest jitter any IW factorization needed (0 for a PSD system).
    pub max_jitter: f64,
    /// Smallest truncated ratio estimate seen (`+∞` when not applicable).
    pub min_ratio: f64,
}

impl ResultRow {
    pub const CSV_HEADER: &'static str = "experiment,method,setting,run_id,seed,mse,wall_ms";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{:.3}",
            self.experiment, self.method, self.setting, self.run_id, self.seed, self.mse, self.wall_ms
        )
    }
}

/// Runs `f(run_id)` for every replicate on `jobs` worker threads, keeping
/// replicate order.
pub fn run_replicates<T, F>(runs: usize, jobs: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| (0..runs).into_par_iter().map(&f).collect())
}

fn elapsed_ms(t0: Instant) -> f64 {
    t0.elapsed().as_secs_f64() * 1e3
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMeanConfig {
    pub dims: Vec<usize>,
    pub variants: Vec<Variant>,
    pub runs: usize,
    pub seed: u64,
    pub n_train: usize,
    pub n_prior: usize,
    pub n_test: usize,
    /// Variant field is ignored; each entry of `variants` is run.
    pub kbr: KbrConfig,
    pub jobs: usize,
}

impl Default for PosteriorMeanConfig {
    fn default() -> Self {
        PosteriorMeanConfig {
            dims: vec![2, 8, 32],
            variants: vec![Variant::Iw, Variant::Original],
            runs: 30,
            seed: 0,
            n_train: 200,
            n_prior: 200,
            n_test: 100,
            kbr: KbrConfig::default(),
            jobs: 1,
        }
    }
}

/// One replicate of the posterior-mean task at dimension `d`, all variants on
/// the same draws.
pub fn posterior_mean_run(cfg: &PosteriorMeanConfig, d: usize, run_id: usize) -> Result<Vec<ResultRow>> {
    let spec = GaussianTaskSpec {
        d,
        n_train: cfg.n_train,
        n_prior: cfg.n_prior,
        n_test: cfg.n_test,
        seed: cfg.seed,
        run_id: run_id as u64,
        a_override: None,
    };
    let task = gen_gaussian_task(&spec)?;
    let targets = task.test_targets();
    let true_ratio = |z: &[f64]| task.oracle.true_ratio(z);
    let mut rows = Vec::with_capacity(cfg.variants.len());
    for &variant in &cfg.variants {
        let t0 = Instant::now();
        let model = KbrModel::fit(&task.train, &KbrConfig { variant, ..cfg.kbr })?;
        let prior = empirical_embedding(&task.prior_samples, *model.kernel_z())?;
        let update = model.condition(&prior, Some(&true_ratio))?;
        let mut means = DMatrix::zeros(task.test_x.nrows(), d);
        for (i, row) in task.test_x.row_iter().enumerate() {
            let x: Vec<f64> = row.iter().copied().collect();
            let post = model.posterior(&update, &x)?;
            means.set_row(i, &weighted_mean(&task.train.z, post.weights()).transpose());
        }
        let mse = mean_squared_error(&means, &targets)?;
        rows.push(ResultRow {
            experiment: POSTERIOR_MEAN.into(),
            method: variant.name().into(),
            setting: d.to_string(),
            run_id,
            seed: cfg.seed,
            mse,
            wall_ms: elapsed_ms(t0),
            max_jitter: update.jitter(),
            min_ratio: update.ratio().map_or(f64::INFINITY, |r| r.r_hat.min()),
        });
    }
    Ok(rows)
}

/// All `(d, run)` replicates, rows sorted by method, dimension (config
/// order) and run.
pub fn run_posterior_mean_experiment(cfg: &PosteriorMeanConfig) -> Result<Vec<ResultRow>> {
    if cfg.variants.is_empty() || cfg.dims.is_empty() {
        return Err(Error::Config("posterior-mean needs at least one variant and one dimension".into()));
    }
    let jobs: Vec<(usize, usize)> = (0..cfg.dims.len()).flat_map(|di| (0..cfg.runs).map(move |r| (di, r))).collect();
    let per_job = run_replicates(jobs.len(), cfg.jobs, |k| {
        let (di, run) = jobs[k];
        posterior_mean_run(cfg, cfg.dims[di], run)
    })?;
    let mut keyed = Vec::new();
    for (k, rows) in per_job.into_iter().enumerate() {
        let (di, run) = jobs[k];
        for (vi, row) in rows.into_iter().enumerate() {
            keyed.push(((vi, di, run), row));
        }
    }
    keyed.sort_by_key(|(key, _)| *key);
    Ok(keyed.into_iter().map(|(_, r)| r).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KbfMethod {
    Iw,
    Original,
    Ekf,
    Pf,
}

impl KbfMethod {
    pub fn name(self) -> &'static str {
        match self {
            KbfMethod::Iw => "iw",
            KbfMethod::Original => "original",
            KbfMethod::Ekf => "ekf",
            KbfMethod::Pf => "pf",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "iw" => Some(KbfMethod::Iw),
            "original" => Some(KbfMethod::Original),
            "ekf" => Some(KbfMethod::Ekf),
            "pf" => Some(KbfMethod::Pf),
            _ => None,
        }
    }

    fn id(self) -> u64 {
        self as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuningGrid {
    pub betas: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub eta_grid: Vec<f64>,
    /// Length of the validation suffix.
    pub validation_len: usize,
    /// Ridge scaling for the original estimator.
    pub ridge: RidgeScaling,
}

impl Default for TuningGrid {
    fn default() -> Self {
        TuningGrid {
            betas: vec![0.25, 0.5, 1.0, 2.0, 4.0],
            lambdas: vec![1e-4, 10f64.powf(-3.5), 1e-3, 10f64.powf(-2.5), 1e-2, 10f64.powf(-1.5), 1e-1],
            eta_grid: default_eta_grid(),
            validation_len: 200,
            ridge: RidgeScaling::Unscaled,
        }
    }
}

/// Smallest prefix the tuner will fit on.
pub const MIN_FIT_LEN: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TuneEntry {
    pub beta: f64,
    pub lambda: f64,
    pub eta: f64,
    /// Validation filtering MSE; `+∞` when the filter failed numerically.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneResult {
    pub best: TuneEntry,
    pub table: Vec<TuneEntry>,
}

impl TuneResult {
    /// Validation score of a grid pair, if it was evaluated.
    pub fn score_of(&self, beta: f64, lambda: f64) -> Option<f64> {
        self.table.iter().find(|e| e.beta == beta && e.lambda == lambda).map(|e| e.score)
    }
}

fn kernels_for(trace: &StateSpaceTrace, beta: f64) -> Result<(KernelSpec, KernelSpec)> {
    Ok((KernelSpec::gaussian_median(&trace.x, beta)?, KernelSpec::gaussian_median(&trace.z, beta)?))
}

fn kbf_config(variant: Variant, ridge: RidgeScaling, beta: f64, lambda: f64, eta: f64) -> KbfConfig {
    KbfConfig::new(KbrConfig { eta, lambda, bandwidth_scale: beta, variant, original_ridge: ridge, ..KbrConfig::default() })
}

fn validation_score(
    prefix: &StateSpaceTrace,
    validation: &StateSpaceTrace,
    cfg: &KbfConfig,
    kernels: (KernelSpec, KernelSpec),
) -> Result<f64> {
    let attempt = KbfModel::fit_with_kernels(&prefix.samples(), cfg, kernels.0, kernels.1)
        .and_then(|m| run_filter(&m, &validation.x))
        .and_then(|run| run.mse(&validation.z));
    match attempt {
        Ok(mse) => Ok(mse),
        Err(e) if e.is_numerical() => Ok(f64::INFINITY),
        Err(e) => Err(e),
    }
}

/// Grid search over `(β, λ)` with `η` chosen per `β` by [`tune_eta`]; models
/// are fit on the prefix and scored by filtering the validation suffix.
pub fn tune_hyperparams(trace: &StateSpaceTrace, variant: Variant, grid: &TuningGrid) -> Result<TuneResult> {
    let needed = grid.validation_len + MIN_FIT_LEN;
    if trace.len() < needed {
        return Err(Error::TooFewPoints { needed, got: trace.len() });
    }
    if grid.betas.is_empty() || grid.lambdas.is_empty() {
        return Err(Error::Empty("tuning grid"));
    }
    let fit_len = trace.len() - grid.validation_len;
    let prefix = trace.window(0, fit_len);
    let validation = trace.window(fit_len, grid.validation_len);
    let mut table = Vec::with_capacity(grid.betas.len() * grid.lambdas.len());
    for &beta in &grid.betas {
        let kernels = kernels_for(&prefix, beta)?;
        let eta = tune_eta(&prefix.z, &validation.z, &kernels.1, &grid.eta_grid)?.eta;
        for &lambda in &grid.lambdas {
            let score = validation_score(&prefix, &validation, &kbf_config(variant, grid.ridge, beta, lambda, eta), kernels)?;
            table.push(TuneEntry { beta, lambda, eta, score });
        }
    }
    let best = *table
        .iter()
        .reduce(|best, e| if e.score < best.score { e } else { best })
        .expect("nonempty grid");
    Ok(TuneResult { best, table })
}

#[derive(Debug, Clone, PartialEq)]
pub struct KbfExperimentConfig {
    pub dynamics: DynamicsKind,
    pub methods: Vec<KbfMethod>,
    pub runs: usize,
    pub seed: u64,
    pub t_train: usize,
    pub t_test: usize,
    pub sigma_x: f64,
    pub sigma_z: f64,
    pub particles: usize,
    pub tuning: TuningGrid,
    pub jobs: usize,
}

impl Default for KbfExperimentConfig {
    fn default() -> Self {
        KbfExperimentConfig {
            dynamics: DynamicsKind::Oscillatory,
            methods: vec![KbfMethod::Iw, KbfMethod::Original, KbfMethod::Ekf, KbfMethod::Pf],
            runs: 30,
            seed: 0,
            t_train: 400,
            t_test: 200,
            sigma_x: 0.2,
            sigma_z: 0.2,
            particles: 1000,
            tuning: TuningGrid::default(),
            jobs: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KbfRunOutput {
    pub rows: Vec<ResultRow>,
    /// Tuning outcome for each kernel method, in method order.
    pub tuning: Vec<(KbfMethod, TuneResult)>,
}

fn traces(cfg: &KbfExperimentConfig, run_id: usize) -> Result<(StateSpaceTrace, StateSpaceTrace)> {
    let base = |len: usize, tag: u64| {
        let mut spec = cfg.dynamics.spec(len, rng::derive_seed(cfg.seed, run_id as u64, tag));
        spec.sigma_x = cfg.sigma_x;
        spec.sigma_z = cfg.sigma_z;
        spec
    };
    let train = simulate_dynamics(&base(cfg.t_train, rng::streams::DATA))?;
    let test = simulate_dynamics(&base(cfg.t_test, rng::streams::TEST))?;
    Ok((train, test))
}

fn column_mean_cov(z: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = z.nrows() as f64;
    let mean = z.row_mean().transpose();
    let mut centered = z.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let cov = centered.tr_mul(&centered) / (n - 1.0);
    (mean, cov)
}

/// One replicate of the filtering benchmark.
pub fn kbf_run(cfg: &KbfExperimentConfig, run_id: usize) -> Result<KbfRunOutput> {
    let (train, test) = traces(cfg, run_id)?;
    let mut rows = Vec::with_capacity(cfg.methods.len());
    let mut tuning = Vec::new();
    for &method in &cfg.methods {
        let t0 = Instant::now();
        let (estimates, max_jitter, min_ratio) = match method {
            KbfMethod::Iw | KbfMethod::Original => {
                let variant = if method == KbfMethod::Iw { Variant::Iw } else { Variant::Original };
                let tuned = tune_hyperparams(&train, variant, &cfg.tuning)?;
                let b = tuned.best;
                tuning.push((method, tuned));
                let model = KbfModel::fit(&train.samples(), &kbf_config(variant, cfg.tuning.ridge, b.beta, b.lambda, b.eta))?;
                let run = run_filter(&model, &test.x)?;
                (run.means, run.max_jitter, run.min_ratio)
            }
            KbfMethod::Ekf => {
                let model = OscillatorModel::from(&test.spec);
                let (m0, p0) = column_mean_cov(&train.z);
                (ekf_run(&model, &m0, &p0, &test.x)?.means, 0.0, f64::INFINITY)
            }
            KbfMethod::Pf => {
                let model = OscillatorModel::from(&test.spec);
                let mut g = rng::algorithm_stream(cfg.seed, run_id as u64, method.id());
                let picks: Vec<usize> = (0..cfg.particles).map(|_| g.gen_range(0..train.len())).collect();
                let init = train.z.select_rows(picks.iter());
                (pf_run(&model, &init, &test.x, &mut g)?.means, 0.0, f64::INFINITY)
            }
        };
        rows.push(ResultRow {
            experiment: KBF.into(),
            method: method.name().into(),
            setting: cfg.dynamics.name().into(),
            run_id,
            seed: cfg.seed,
            mse: mean_squared_error(&estimates, &test.z)?,
            wall_ms: elapsed_ms(t0),
            max_jitter,
            min_ratio,
        });
    }
    Ok(KbfRunOutput { rows, tuning })
}

/// All replicates; rows sorted by method (config order) then run.
pub fn run_kbf_experiment(cfg: &KbfExperimentConfig) -> Result<(Vec<ResultRow>, Vec<KbfRunOutput>)> {
    if cfg.methods.is_empty() {
        return Err(Error::Config("kbf needs at least one method".into()));
    }
    let outputs = run_replicates(cfg.runs, cfg.jobs, |run| kbf_run(cfg, run))?;
    let mut keyed = Vec::new();
    for (run, out) in outputs.iter().enumerate() {
        for (mi, row) in out.rows.iter().enumerate() {
            keyed.push(((mi, run), row.clone()));
        }
    }
    keyed.sort_by_key(|(key, _)| *key);
    Ok((keyed.into_iter().map(|(_, r)| r).collect(), outputs))
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub setting: String,
    pub method: String,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    pub runs: usize,
}

impl SummaryRow {
    pub const CSV_HEADER: &'static str = "setting,method,median,q25,q75,runs";

    pub fn to_csv(&self) -> String {
        format!("{},{},{},{},{},{}", self.setting, self.method, self.median, self.q25, self.q75, self.runs)
    }
}

/// Median and quartiles of the MSE per `(setting, method)`, in order of first
/// appearance of each setting and method.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut settings: Vec<&str> = Vec::new();
    let mut methods: Vec<&str> = Vec::new();
    for r in rows {
        if !settings.contains(&r.setting.as_str()) {
            settings.push(&r.setting);
        }
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    let mut out = Vec::new();
    for s in &settings {
        for m in &methods {
            let mut v: Vec<f64> = rows.iter().filter(|r| r.setting == *s && r.method == *m).map(|r| r.mse).collect();
            if v.is_empty() {
                continue;
            }
            v.sort_by(f64::total_cmp);
            out.push(SummaryRow {
                setting: s.to_string(),
                method: m.to_string(),
                median: quantile(&v, 0.5),
                q25: quantile(&v, 0.25),
                q75: quantile(&v, 0.75),
                runs: v.len(),
            });
        }
    }
    out
}

/// MSEs of one method at one setting, ordered by run.
pub fn mse_by_run(rows: &[ResultRow], method: &str, setting: &str) -> Vec<f64> {
    let mut v: Vec<(usize, f64)> =
        rows.iter().filter(|r| r.method == method && r.setting == setting).map(|r| (r.run_id, r.mse)).collect();
    v.sort_by_key(|p| p.0);
    v.into_iter().map(|p| p.1).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks::dynamics::DynamicsSpec;

    #[test]
    fn quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.5), 2.5);
        assert_eq!(quantile(&v, 0.25), 1.75);
        assert_eq!(quantile(&[7.0], 0.75), 7.0);
    }

    #[test]
    fn single_variant_single_row() {
        let cfg = PosteriorMeanConfig {
            dims: vec![2],
            variants: vec![Variant::Iw],
            runs: 1,
            n_train: 40,
            n_prior: 40,
            n_test: 5,
            ..PosteriorMeanConfig::default()
        };
        let rows = run_posterior_mean_experiment(&cfg).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!((rows[0].method.as_str(), rows[0].setting.as_str()), ("iw", "2"));
        assert!(rows[0].mse.is_finite() && rows[0].max_jitter == 0.0 && rows[0].min_ratio >= 0.0);
    }

    #[test]
    fn rows_sorted_and_reproducible() {
        let cfg = PosteriorMeanConfig {
            dims: vec![3, 1],
            runs: 2,
            n_train: 30,
            n_prior: 30,
            n_test: 4,
            jobs: 2,
            ..PosteriorMeanConfig::default()
        };
        let a = run_posterior_mean_experiment(&cfg).unwrap();
        let keys: Vec<(String, String, usize)> = a.iter().map(|r| (r.method.clone(), r.setting.clone(), r.run_id)).collect();
        assert_eq!(keys[0], ("iw".into(), "3".into(), 0));
        assert_eq!(keys[3], ("iw".into(), "1".into(), 1));
        assert_eq!(keys[4], ("original".into(), "3".into(), 0));
        let b = run_posterior_mean_experiment(&PosteriorMeanConfig { jobs: 1, ..cfg }).unwrap();
        let mses = |rows: &[ResultRow]| rows.iter().map(|r| r.mse).collect::<Vec<_>>();
        assert_eq!(mses(&a), mses(&b));
    }

    fn short_trace(len: usize, seed: u64) -> StateSpaceTrace {
        simulate_dynamics(&DynamicsSpec::rotation(len, seed)).unwrap()
    }

    #[test]
    fn one_by_one_grid_returns_its_pair() {
        let grid = TuningGrid { betas: vec![0.5], lambdas: vec![0.02], eta_grid: vec![0.1], validation_len: 30, ..TuningGrid::default() };
        let t = tune_hyperparams(&short_trace(70, 1), Variant::Iw, &grid).unwrap();
        assert_eq!((t.best.beta, t.best.lambda, t.best.eta), (0.5, 0.02, 0.1));
        assert_eq!(t.table.len(), 1);
    }

    #[test]
    fn tuning_picks_grid_minimum() {
        let grid = TuningGrid { betas: vec![0.5, 1.0], lambdas: vec![1e-3, 1e-1], eta_grid: vec![0.01, 0.1], validation_len: 30, ..TuningGrid::default() };
        let t = tune_hyperparams(&short_trace(80, 2), Variant::Iw, &grid).unwrap();
        assert_eq!(t.table.len(), 4);
        assert!(t.table.iter().all(|e| e.score >= t.best.score));
        assert_eq!(t.score_of(t.best.beta, t.best.lambda), Some(t.best.score));
    }

    #[test]
    fn tuning_rejects_short_trace() {
        let grid = TuningGrid { validation_len: 30, ..TuningGrid::default() };
        assert!(matches!(
            tune_hyperparams(&short_trace(35, 3), Variant::Iw, &grid),
            Err(Error::TooFewPoints { .. })
        ));
    }

    #[test]
    fn single_method_single_run() {
        let cfg = KbfExperimentConfig {
            methods: vec![KbfMethod::Ekf],
            runs: 1,
            t_train: 50,
            t_test: 20,
            ..KbfExperimentConfig::default()
        };
        let (rows, _) = run_kbf_experiment(&cfg).unwrap();
        assert_eq!(rows.len(), 1);
        assert!(rows[0].mse.is_finite());
    }

    #[test]
    fn summary_statistics() {
        let row = |method: &str, mse: f64, run_id: usize| ResultRow {
            experiment: KBF.into(),
            method: method.into(),
            setting: "rotation".into(),
            run_id,
            seed: 0,
            mse,
            wall_ms: 0.0,
            max_jitter: 0.0,
            min_ratio: 0.0,
        };
        let rows = vec![row("iw", 3.0, 0), row("iw", 1.0, 1), row("iw", 2.0, 2), row("ekf", 5.0, 0)];
        let s = summarize(&rows);
        assert_eq!(s.len(), 2);
        assert_eq!((s[0].method.as_str(), s[0].median, s[0].q25, s[0].q75, s[0].runs), ("iw", 2.0, 1.5, 2.5, 3));
        assert_eq!(mse_by_run(&rows, "iw", "rotation"), vec![3.0, 1.0, 2.0]);
    }
}
