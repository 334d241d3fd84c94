//! Acceptance criteria 1 to 9, one line each. Exits non-zero if any fails.

use std::process::ExitCode;

use trome_lab::verify::{run_all, VerifyOptions};

fn main() -> ExitCode {
    let rows = run_all(&VerifyOptions::default());
    for r in &rows {
        println!("criterion {}: {} - {}: {} (target: {})", r.id, if r.pass { "PASS" } else { "FAIL" }, r.check, r.measured, r.target);
    }
    let failed = rows.iter().filter(|r| !r.pass).count();
    println!("acceptance: {} passed, {failed} failed", rows.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
