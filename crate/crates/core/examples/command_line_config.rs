//! Driving the benchmark harness from code: parse a config the way the
//! `kbrkit` binary does, then run it into a scratch directory.

use kbrkit::cli::{dispatch, parse_config, ParseOutcome};
use kbrkit::Result;

fn main() -> Result<()> {
    let out = std::env::temp_dir().join("kbrkit-example");
    let out = out.to_str().expect("utf-8 temp path");
    let argv = ["kbrkit", "rate-study", "--sizes", "100,200,400", "--runs", "3", "--seed", "11", "--out", out];
    let cfg = match parse_config(argv, None)? {
        ParseOutcome::Run(cfg) => cfg,
        ParseOutcome::Info(text) => {
            println!("{text}");
            return Ok(());
        }
    };
    print!("{}", cfg.echo());
    let art = dispatch(&cfg)?;
    print!("{}", art.report);
    println!("{}", std::fs::read_to_string(&art.results)?);
    Ok(())
}
