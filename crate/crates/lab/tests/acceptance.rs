//! The twelve acceptance criteria, one line each.
//!
//! Run with `cargo test -p hclm-lab --test acceptance -- --nocapture` to see
//! the report.

use std::path::PathBuf;

use hclm_lab::checks::{run_criterion, CheckOptions, CRITERIA};

#[test]
fn acceptance_criteria() {
    let artifacts = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance-regime");
    std::fs::create_dir_all(&artifacts).unwrap();
    let jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
    let opts = CheckOptions {
        jobs,
        artifact_dir: Some(&artifacts),
    };
    let mut failed = Vec::new();
    for id in 1..=CRITERIA.len() {
        let outcome = run_criterion(id, &opts);
        println!("{outcome}");
        if !outcome.passed {
            failed.push(id);
        }
    }
    println!("regime sweep plots: {}", artifacts.display());
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
