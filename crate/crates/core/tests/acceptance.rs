//! Runs every acceptance criterion and prints one verdict line each.
//! Pass `--quick` after `--` for the reduced scale.

use std::process::ExitCode;

use joinopt::acceptance::{self, Scale};

fn main() -> ExitCode {
    let quick = std::env::args().any(|a| a == "--quick");
    let scale = if quick { Scale::quick() } else { Scale::full() };
    println!("acceptance criteria at {} scale", if quick { "quick" } else { "full" });
    let mut failed = 0;
    for v in acceptance::run_all(&scale) {
        println!("{v}");
        if !v.passed {
            failed += 1;
        }
    }
    println!("{failed} of 10 criteria failed");
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
