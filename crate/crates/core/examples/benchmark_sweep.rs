//! Blur x noise sweep over the phantom benchmark. Writes `sweep.csv` and
//! `summary.json` to the directory given as the first argument.
//!
//!     cargo run --release --example benchmark_sweep -- out/sweep 3

use std::path::PathBuf;

use phaseseg::eval::{sweep, SweepSpec};

fn main() -> phaseseg::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "target/sweep".into()));
    let reps = args.next().map_or(2, |s| s.parse().expect("repetition count"));

    let spec = SweepSpec {
        repetitions: reps,
        ..SweepSpec::default()
    };
    let report = sweep(&spec)?;
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("sweep.csv"), report.to_csv())?;
    std::fs::write(dir.join("summary.json"), report.summary_json())?;

    println!("{:>4} {:>5} {:<15} {:>8} {:>8} {:>7}", "blur", "noise", "method", "ME", "sd", "sec");
    for c in &report.cells {
        println!(
            "{:4} {:5} {:<15} {:8.4} {:8.4} {:7.2}",
            c.blur, c.noise, c.method, c.me_mean, c.me_std, c.seconds_mean
        );
    }
    Ok(())
}
