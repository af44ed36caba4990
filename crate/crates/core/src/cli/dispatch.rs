//! Runs a resolved config and writes its artifacts.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use super::config::{parse_config, CommandSpec, ParseOutcome, RunConfig};
use crate::adaptive::gradient_check;
use crate::benchmarks::experiments::{
    run_kbf_experiment, run_posterior_mean_experiment, summarize, ResultRow, SummaryRow,
};
use crate::benchmarks::rate::{rate_study, RatePoint};
use crate::error::{Error, Result};

pub const EXIT_OK: u8 = 0;
pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_NUMERICAL: u8 = 2;

/// Header of the gradcheck results file.
pub const GRADCHECK_CSV_HEADER: &str = "net,max_rel_error";

#[derive(Debug, Clone)]
pub struct Artifacts {
    pub sidecar: PathBuf,
    pub results: PathBuf,
    /// Per-setting median and quartiles; absent for gradcheck.
    pub plot: Option<PathBuf>,
    /// Human-readable summary for stdout.
    pub report: String,
}

pub fn exit_code(err: &Error) -> u8 {
    if err.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_CONFIG
    }
}

fn write_csv(path: &Path, header: &str, lines: impl IntoIterator<Item = String>) -> Result<()> {
    let mut text = String::from(header);
    text.push('\n');
    for line in lines {
        text.push_str(&line);
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

fn summary_report(summary: &[SummaryRow]) -> String {
    let mut s = format!("{:<14} {:<14} {:>12} {:>12} {:>12}\n", "setting", "method", "median", "q25", "q75");
    for r in summary {
        s.push_str(&format!("{:<14} {:<14} {:>12.5e} {:>12.5e} {:>12.5e}\n", r.setting, r.method, r.median, r.q25, r.q75));
    }
    s
}

fn write_experiment(cfg: &RunConfig, rows: &[ResultRow], sidecar: PathBuf) -> Result<Artifacts> {
    let name = cfg.command.name();
    let results = cfg.out.join(format!("{name}.csv"));
    let plot = cfg.out.join(format!("{name}-plot.csv"));
    write_csv(&results, ResultRow::CSV_HEADER, rows.iter().map(ResultRow::to_csv))?;
    let summary = summarize(rows);
    write_csv(&plot, SummaryRow::CSV_HEADER, summary.iter().map(SummaryRow::to_csv))?;
    Ok(Artifacts { sidecar, results, plot: Some(plot), report: summary_report(&summary) })
}

/// Runs the experiment named by `cfg`. The resolved config is echoed to
/// `<out>/<command>.config` before any work starts.
pub fn dispatch(cfg: &RunConfig) -> Result<Artifacts> {
    fs::create_dir_all(&cfg.out)
        .map_err(|e| Error::Config(format!("cannot create {}: {e}", cfg.out.display())))?;
    let name = cfg.command.name();
    let sidecar = cfg.out.join(format!("{name}.config"));
    fs::write(&sidecar, cfg.echo()).map_err(|e| Error::Config(format!("cannot write {}: {e}", sidecar.display())))?;

    match &cfg.spec {
        CommandSpec::PosteriorMean(pm) => {
            let rows = run_posterior_mean_experiment(pm)?;
            write_experiment(cfg, &rows, sidecar)
        }
        CommandSpec::Kbf(kc) => {
            let (rows, _) = run_kbf_experiment(kc)?;
            write_experiment(cfg, &rows, sidecar)
        }
        CommandSpec::RateStudy { sizes, eta0 } => {
            let points = rate_study(sizes, cfg.runs, cfg.seed, *eta0)?;
            let results = cfg.out.join(format!("{name}.csv"));
            write_csv(&results, RatePoint::CSV_HEADER, points.iter().map(RatePoint::to_csv))?;
            // Reuse the experiment summary with the sample size as the x-axis.
            let as_rows: Vec<ResultRow> = points
                .iter()
                .map(|p| ResultRow {
                    experiment: name.into(),
                    method: "kulsif".into(),
                    setting: p.n.to_string(),
                    run_id: p.run_id,
                    seed: p.seed,
                    mse: p.sup_error,
                    wall_ms: 0.0,
                    max_jitter: 0.0,
                    min_ratio: 0.0,
                })
                .collect();
            let summary = summarize(&as_rows);
            let plot = cfg.out.join(format!("{name}-plot.csv"));
            write_csv(&plot, SummaryRow::CSV_HEADER, summary.iter().map(SummaryRow::to_csv))?;
            Ok(Artifacts { sidecar, results, plot: Some(plot), report: summary_report(&summary) })
        }
        CommandSpec::Gradcheck { n, d } => {
            let report = gradient_check(cfg.seed, cfg.runs, *n, *d)?;
            let results = cfg.out.join(format!("{name}.csv"));
            write_csv(
                &results,
                GRADCHECK_CSV_HEADER,
                report.per_net.iter().enumerate().map(|(k, e)| format!("{k},{e}")),
            )?;
            Ok(Artifacts {
                sidecar,
                results,
                plot: None,
                report: format!("max relative error {:.3e} over {} nets\n", report.max_rel_error, cfg.runs),
            })
        }
    }
}

/// Full command-line entry point; returns the process exit code.
pub fn run<I, T>(argv: I, env_seed: Option<&str>) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cfg = match parse_config(argv, env_seed) {
        Ok(ParseOutcome::Run(cfg)) => cfg,
        Ok(ParseOutcome::Info(text)) => {
            print!("{text}");
            return EXIT_OK;
        }
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    match dispatch(&cfg) {
        Ok(art) => {
            print!("{}", art.report);
            println!("results: {}", art.results.display());
            if let Some(plot) = &art.plot {
                println!("plot data: {}", plot.display());
            }
            println!("config: {}", art.sidecar.display());
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
