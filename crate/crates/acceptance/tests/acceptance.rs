//! Full acceptance battery. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use bloch_zener::acceptance::{run_battery, AcceptanceOptions};

fn main() {
    // `cargo test` passes harness flags such as `--nocapture`; only a
    // filter of `quick` changes the run
    let quick = std::env::args().skip(1).any(|a| a == "quick");
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let opts = AcceptanceOptions { quick, ..Default::default() };
    let results = run_battery(&opts, |r| println!("{}", r.line()));
    let failed: Vec<usize> = results.iter().filter(|r| !r.passed).map(|r| r.id).collect();
    println!(
        "acceptance: {} passed, {} failed{}",
        results.len() - failed.len(),
        failed.len(),
        if failed.is_empty() { String::new() } else { format!(" ({failed:?})") }
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
