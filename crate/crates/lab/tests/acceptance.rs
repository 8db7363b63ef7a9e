//! One PASS/FAIL line per acceptance criterion. Criterion numbers given as
//! arguments select a subset.

use std::process::ExitCode;
use std::time::Instant;

fn main() -> ExitCode {
    let picked: Vec<u8> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let numbers: Vec<u8> = if picked.is_empty() { (1..=7).collect() } else { picked };
    let mut failed = 0;
    for n in numbers {
        let started = Instant::now();
        let Some(report) = tsc_lab::oracle::by_number(n) else {
            eprintln!("no criterion {n}");
            return ExitCode::FAILURE;
        };
        println!("{report} [{:.1} s]", started.elapsed().as_secs_f64());
        failed += usize::from(!report.pass);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
