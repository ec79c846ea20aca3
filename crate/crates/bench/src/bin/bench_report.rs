//! Prints the SpMMV benchmark report. Build with `--release`.

use sellkit_bench::{run_report, ReportConfig};

fn main() {
    match run_report(&ReportConfig::default()) {
        Ok(r) => print!("{}", r.render()),
        Err(e) => {
            eprintln!("benchmark failed: {e}");
            std::process::exit(1);
        }
    }
}
