//! Config resolution: built-in defaults, then a `key=value` file, then flags.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Arg, ArgAction};

use crate::benchmarks::dynamics::DynamicsKind;
use crate::benchmarks::experiments::{KbfExperimentConfig, KbfMethod, PosteriorMeanConfig, TuningGrid};
use crate::error::{Error, Result};
use crate::kbr::{KbrConfig, RidgeScaling, Variant};

/// Environment variable consulted when no seed is given.
pub const SEED_ENV: &str = "KBRKIT_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    PosteriorMean,
    Kbf,
    RateStudy,
    Gradcheck,
}

impl Command {
    pub const ALL: [Command; 4] = [Command::PosteriorMean, Command::Kbf, Command::RateStudy, Command::Gradcheck];

    pub fn name(self) -> &'static str {
        match self {
            Command::PosteriorMean => "posterior-mean",
            Command::Kbf => "kbf",
            Command::RateStudy => "rate-study",
            Command::Gradcheck => "gradcheck",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Command::ALL.into_iter().find(|c| c.name() == s)
    }

    fn about(self) -> &'static str {
        match self {
            Command::PosteriorMean => "Gaussian posterior-mean benchmark: IW vs original KBR across dimensions",
            Command::Kbf => "Kernel Bayes filter benchmark with EKF and particle filter baselines",
            Command::RateStudy => "Sup-norm error of KuLSIF on a Gaussian pair as the sample size grows",
            Command::Gradcheck => "Finite-difference check of the adaptive-feature loss gradient",
        }
    }

    /// Keys accepted by this command, common keys first.
    pub fn keys(self) -> Vec<Key> {
        let runs = match self {
            Command::PosteriorMean | Command::Kbf => "30",
            Command::RateStudy => "10",
            Command::Gradcheck => "20",
        };
        let mut keys = vec![
            Key::new("seed", "", "base seed (falls back to KBRKIT_SEED, then 0)"),
            Key::new("runs", runs, "number of replicates (random nets for gradcheck)"),
            Key::new("jobs", "1", "worker threads for replicates"),
            Key::new("out", "results", "output directory"),
        ];
        keys.extend(match self {
            Command::PosteriorMean => vec![
                Key::new("d", "2,8,32", "comma-separated dimensions"),
                Key::new("variants", "iw,original,iw_true_ratio", "estimators to compare"),
                Key::new("n-train", "200", "joint training pairs"),
                Key::new("n-prior", "200", "prior samples"),
                Key::new("n-test", "100", "conditioning points per run"),
                Key::new("eta", "0.2", "KuLSIF regularizer"),
                Key::new("lambda", "0.2", "conditioning ridge"),
                Key::new("beta", "1", "bandwidth multiplier on the median heuristic"),
                Key::new("ridge", "unscaled", "original-KBR ridge scaling: unscaled or per-sample"),
            ],
            Command::Kbf => vec![
                Key::new("dynamics", "oscillatory", "oscillatory or rotation"),
                Key::new("methods", "iw,original,ekf,pf", "filters to run"),
                Key::new("t-train", "400", "training trace length"),
                Key::new("t-test", "200", "test trace length"),
                Key::new("sigma-x", "0.2", "observation noise"),
                Key::new("sigma-z", "0.2", "process noise"),
                Key::new("particles", "1000", "particle filter size"),
                Key::new("validation-len", "200", "training suffix held out for tuning"),
                Key::new("ridge", "unscaled", "original-KBR ridge scaling: unscaled or per-sample"),
            ],
            Command::RateStudy => vec![
                Key::new("sizes", "250,500,1000,2000", "sample sizes"),
                Key::new("eta0", "0.05", "regularizer at n = 250; scaled as n^(-1/3)"),
            ],
            Command::Gradcheck => vec![
                Key::new("n", "10", "samples per net"),
                Key::new("d", "3", "feature dimension"),
            ],
        });
        keys
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Key {
    pub name: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

impl Key {
    const fn new(name: &'static str, default: &'static str, help: &'static str) -> Self {
        Key { name, default, help }
    }
}

#[derive(Debug, Clone)]
pub enum CommandSpec {
    PosteriorMean(PosteriorMeanConfig),
    Kbf(KbfExperimentConfig),
    RateStudy { sizes: Vec<usize>, eta0: f64 },
    Gradcheck { n: usize, d: usize },
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub command: Command,
    pub seed: u64,
    pub runs: usize,
    pub jobs: usize,
    pub out: PathBuf,
    pub spec: CommandSpec,
    /// Every key with its resolved value, for the sidecar echo.
    pub resolved: BTreeMap<String, String>,
}

impl RunConfig {
    /// `key=value` lines, `command` first, then keys in sorted order.
    pub fn echo(&self) -> String {
        let mut s = format!("command={}\n", self.command.name());
        for (k, v) in &self.resolved {
            s.push_str(&format!("{k}={v}\n"));
        }
        s
    }
}

/// Outcome of argument parsing that is not a config.
#[derive(Debug)]
pub enum ParseOutcome {
    Run(RunConfig),
    /// Help or version text; print and exit 0.
    Info(String),
}

pub fn cli_definition() -> clap::Command {
    let mut root = clap::Command::new("kbrkit")
        .about("Kernel Bayes' rule benchmarks")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true);
    for cmd in Command::ALL {
        let mut sub = clap::Command::new(cmd.name()).about(cmd.about()).args_override_self(true).arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .help("key=value file; flags override its entries"),
        );
        for key in cmd.keys() {
            let help = if key.default.is_empty() {
                key.help.to_string()
            } else {
                format!("{} [default: {}]", key.help, key.default)
            };
            sub = sub.arg(
                Arg::new(key.name)
                    .long(key.name)
                    .value_name("VALUE")
                    .action(ArgAction::Set)
                    .allow_negative_numbers(true)
                    .help(help),
            );
        }
        root = root.subcommand(sub);
    }
    root
}

/// Parses `key=value` lines. `#` starts a comment; blank lines are skipped.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value", lineno + 1)))?;
        let k = k.trim().to_string();
        if out.iter().any(|(seen, _)| *seen == k) {
            return Err(Error::Config(format!("line {}: duplicate key '{k}'", lineno + 1)));
        }
        out.push((k, v.trim().to_string()));
    }
    Ok(out)
}

fn read_config_file(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_kv(&text)
}

/// Resolves argv (including the program name) into a run config.
/// `env_seed` is the value of [`SEED_ENV`], if set.
pub fn parse_config<I, T>(argv: I, env_seed: Option<&str>) -> Result<ParseOutcome>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match cli_definition().try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => Ok(ParseOutcome::Info(e.render().to_string())),
                ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => Ok(ParseOutcome::Info(e.render().to_string())),
                _ => Err(Error::Config(e.render().to_string().trim_end().to_string())),
            };
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let command = Command::parse(name).expect("registered subcommand");
    let keys = command.keys();

    let mut values: BTreeMap<String, String> =
        keys.iter().map(|k| (k.name.to_string(), k.default.to_string())).collect();
    if let Some(path) = sub.get_one::<String>("config") {
        for (k, v) in read_config_file(Path::new(path))? {
            if k == "command" {
                if v != command.name() {
                    return Err(Error::Config(format!(
                        "config file is for '{v}' but the command is '{}'",
                        command.name()
                    )));
                }
                continue;
            }
            if !values.contains_key(&k) {
                return Err(Error::Config(format!("unknown key '{k}' for {}", command.name())));
            }
            values.insert(k, v);
        }
    }
    for key in &keys {
        if let Some(v) = sub.get_one::<String>(key.name) {
            values.insert(key.name.to_string(), v.clone());
        }
    }
    if values["seed"].is_empty() {
        let fallback = env_seed.map(str::trim).filter(|s| !s.is_empty()).unwrap_or("0");
        values.insert("seed".into(), fallback.to_string());
    }
    build(command, values).map(ParseOutcome::Run)
}

fn scalar<T: FromStr>(values: &BTreeMap<String, String>, key: &str) -> Result<T>
where
    T::Err: Display,
{
    let raw = &values[key];
    raw.parse().map_err(|e| Error::Config(format!("{key}: invalid value '{raw}': {e}")))
}

fn list<T: FromStr>(values: &BTreeMap<String, String>, key: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    let raw = &values[key];
    let items: Vec<&str> = raw.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if items.is_empty() {
        return Err(Error::Config(format!("{key}: empty list")));
    }
    items
        .into_iter()
        .map(|s| s.parse().map_err(|e| Error::Config(format!("{key}: invalid value '{s}': {e}"))))
        .collect()
}

fn at_least(key: &str, value: usize, min: usize) -> Result<()> {
    if value < min {
        return Err(Error::Config(format!("{key} must be at least {min}, got {value}")));
    }
    Ok(())
}

fn positive(key: &str, value: f64) -> Result<()> {
    if !(value.is_finite() && value > 0.0) {
        return Err(Error::Config(format!("{key} must be positive and finite, got {value}")));
    }
    Ok(())
}

fn ridge(values: &BTreeMap<String, String>) -> Result<RidgeScaling> {
    match values["ridge"].as_str() {
        "unscaled" => Ok(RidgeScaling::Unscaled),
        "per-sample" => Ok(RidgeScaling::PerSample),
        other => Err(Error::Config(format!("ridge: unknown scaling '{other}' (expected unscaled, per-sample)"))),
    }
}

fn build(command: Command, values: BTreeMap<String, String>) -> Result<RunConfig> {
    let seed: u64 = scalar(&values, "seed")?;
    let runs: usize = scalar(&values, "runs")?;
    let jobs: usize = scalar(&values, "jobs")?;
    at_least("runs", runs, 1)?;
    at_least("jobs", jobs, 1)?;
    let out = PathBuf::from(&values["out"]);
    if values["out"].is_empty() {
        return Err(Error::Config("out: empty path".into()));
    }

    let spec = match command {
        Command::PosteriorMean => {
            let dims: Vec<usize> = list(&values, "d")?;
            for &d in &dims {
                at_least("d", d, 1)?;
            }
            let variants = list::<String>(&values, "variants")?
                .iter()
                .map(|s| {
                    Variant::parse(s).ok_or_else(|| {
                        Error::Config(format!("unknown variant '{s}' (expected iw, original, iw_true_ratio)"))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let n_train: usize = scalar(&values, "n-train")?;
            let n_prior: usize = scalar(&values, "n-prior")?;
            let n_test: usize = scalar(&values, "n-test")?;
            at_least("n-train", n_train, 2)?;
            at_least("n-prior", n_prior, 1)?;
            at_least("n-test", n_test, 1)?;
            let kbr = KbrConfig {
                eta: scalar(&values, "eta")?,
                lambda: scalar(&values, "lambda")?,
                bandwidth_scale: scalar(&values, "beta")?,
                original_ridge: ridge(&values)?,
                ..KbrConfig::default()
            };
            positive("eta", kbr.eta)?;
            positive("lambda", kbr.lambda)?;
            positive("beta", kbr.bandwidth_scale)?;
            CommandSpec::PosteriorMean(PosteriorMeanConfig {
                dims,
                variants,
                runs,
                seed,
                n_train,
                n_prior,
                n_test,
                kbr,
                jobs,
            })
        }
        Command::Kbf => {
            let dynamics_name = &values["dynamics"];
            let dynamics = DynamicsKind::parse(dynamics_name).ok_or_else(|| {
                Error::Config(format!("unknown dynamics '{dynamics_name}' (expected oscillatory, rotation)"))
            })?;
            let methods = list::<String>(&values, "methods")?
                .iter()
                .map(|s| {
                    KbfMethod::parse(s)
                        .ok_or_else(|| Error::Config(format!("unknown method '{s}' (expected iw, original, ekf, pf)")))
                })
                .collect::<Result<Vec<_>>>()?;
            let t_train: usize = scalar(&values, "t-train")?;
            let t_test: usize = scalar(&values, "t-test")?;
            let validation_len: usize = scalar(&values, "validation-len")?;
            let particles: usize = scalar(&values, "particles")?;
            at_least("t-test", t_test, 1)?;
            at_least("particles", particles, 1)?;
            at_least("validation-len", validation_len, 1)?;
            at_least("t-train", t_train, validation_len + crate::benchmarks::experiments::MIN_FIT_LEN)?;
            let sigma_x: f64 = scalar(&values, "sigma-x")?;
            let sigma_z: f64 = scalar(&values, "sigma-z")?;
            positive("sigma-x", sigma_x)?;
            positive("sigma-z", sigma_z)?;
            let tuning = TuningGrid { validation_len, ridge: ridge(&values)?, ..TuningGrid::default() };
            CommandSpec::Kbf(KbfExperimentConfig {
                dynamics,
                methods,
                runs,
                seed,
                t_train,
                t_test,
                sigma_x,
                sigma_z,
                particles,
                tuning,
                jobs,
            })
        }
        Command::RateStudy => {
            let sizes: Vec<usize> = list(&values, "sizes")?;
            for &n in &sizes {
                at_least("sizes", n, 2)?;
            }
            let eta0: f64 = scalar(&values, "eta0")?;
            positive("eta0", eta0)?;
            CommandSpec::RateStudy { sizes, eta0 }
        }
        Command::Gradcheck => {
            let n: usize = scalar(&values, "n")?;
            let d: usize = scalar(&values, "d")?;
            at_least("n", n, 1)?;
            at_least("d", d, 1)?;
            CommandSpec::Gradcheck { n, d }
        }
    };
    Ok(RunConfig { command, seed, runs, jobs, out, spec, resolved: values })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(args: &[&str]) -> Result<RunConfig> {
        run_env(args, None)
    }

    fn run_env(args: &[&str], env: Option<&str>) -> Result<RunConfig> {
        let argv = std::iter::once("kbrkit").chain(args.iter().copied());
        match parse_config(argv, env)? {
            ParseOutcome::Run(cfg) => Ok(cfg),
            ParseOutcome::Info(s) => panic!("unexpected info: {s}"),
        }
    }

    #[test]
    fn flags_fill_fields() {
        let cfg = run(&["posterior-mean", "--d", "8", "--runs", "30", "--seed", "7"]).unwrap();
        assert_eq!(cfg.command, Command::PosteriorMean);
        assert_eq!((cfg.seed, cfg.runs), (7, 30));
        match cfg.spec {
            CommandSpec::PosteriorMean(pm) => {
                assert_eq!(pm.dims, vec![8]);
                assert_eq!((pm.runs, pm.seed), (30, 7));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn flag_beats_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "# replicates\nruns = 10\neta=0.1\n").unwrap();
        let p = path.to_str().unwrap();
        let cfg = run(&["posterior-mean", "--config", p, "--runs", "30"]).unwrap();
        assert_eq!(cfg.runs, 30);
        assert_eq!(cfg.resolved["eta"], "0.1");
        let cfg = run(&["posterior-mean", "--config", p]).unwrap();
        assert_eq!(cfg.runs, 10);
    }

    #[test]
    fn negative_dimension_rejected() {
        let err = run(&["posterior-mean", "--d", "-1"]).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
        assert!(run(&["posterior-mean", "--d", "0"]).is_err());
    }

    #[test]
    fn unknown_keys_and_methods_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.cfg");
        std::fs::write(&path, "particles=10\n").unwrap();
        let err = run(&["posterior-mean", "--config", path.to_str().unwrap()]).unwrap_err();
        assert!(err.to_string().contains("unknown key"));
        assert!(run(&["kbf", "--nonsense", "1"]).is_err());
        let err = run(&["kbf", "--methods", "iw,ukf"]).unwrap_err();
        assert!(err.to_string().contains("unknown method 'ukf'"));
    }

    #[test]
    fn conflicting_command_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kbf.cfg");
        std::fs::write(&path, "command=kbf\nruns=3\n").unwrap();
        let p = path.to_str().unwrap();
        assert!(run(&["kbf", "--config", p]).is_ok());
        let err = run(&["rate-study", "--config", p]).unwrap_err();
        assert!(err.to_string().contains("'kbf'"));
    }

    #[test]
    fn seed_falls_back_to_env_then_zero() {
        assert_eq!(run_env(&["gradcheck"], Some("42")).unwrap().seed, 42);
        assert_eq!(run_env(&["gradcheck", "--seed", "5"], Some("42")).unwrap().seed, 5);
        assert_eq!(run(&["gradcheck"]).unwrap().seed, 0);
        assert!(run_env(&["gradcheck"], Some("minus one")).is_err());
        let max = u64::MAX.to_string();
        assert_eq!(run(&["gradcheck", "--seed", &max]).unwrap().seed, u64::MAX);
    }

    #[test]
    fn malformed_lines() {
        assert!(parse_kv("runs 10").is_err());
        assert!(parse_kv("runs=1\nruns=2").is_err());
        assert_eq!(parse_kv("\n a = b # note\n").unwrap(), vec![("a".to_string(), "b".to_string())]);
    }

    #[test]
    fn echo_round_trips() {
        let cfg = run(&["kbf", "--dynamics", "rotation", "--runs", "4"]).unwrap();
        let echo = cfg.echo();
        assert!(echo.starts_with("command=kbf\n"));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("echo.cfg");
        std::fs::write(&path, &echo).unwrap();
        let again = run(&["kbf", "--config", path.to_str().unwrap()]).unwrap();
        assert_eq!(again.resolved, cfg.resolved);
    }

    #[test]
    fn help_is_info() {
        let out = parse_config(["kbrkit", "--help"], None).unwrap();
        assert!(matches!(out, ParseOutcome::Info(_)));
    }
}
