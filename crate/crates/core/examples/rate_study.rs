//! Sup-norm error of the KuLSIF ratio on a grid as the sample size grows.

use kbrkit::benchmarks::rate::{median_by_size, rate_study, DEFAULT_ETA0};
use kbrkit::Result;

fn main() -> Result<()> {
    let sizes = [125, 250, 500, 1000];
    let points = rate_study(&sizes, 5, 0, DEFAULT_ETA0)?;
    for (n, med) in median_by_size(&points, &sizes) {
        println!("n = {n:>5}  median sup error {med:.4}");
    }
    Ok(())
}
