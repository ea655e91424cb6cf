//! Finite-difference audit of every layer combination the presets use,
//! plus the deliberately broken gradient it must reject.

use nsfold::gradcheck::{audit_cases, run_audit_suite, CheckOptions};

fn main() -> nsfold::error::Result<()> {
    let cases = audit_cases();
    let opts = CheckOptions::default();
    for run in run_audit_suite(&cases, 0..3, 2, &opts)? {
        println!(
            "{:<20} seed {}  max rel {:.2e}  excluded {}  {}",
            run.case,
            run.seed,
            run.report.max_rel(),
            run.report.excluded(),
            if run.report.passed() { "ok" } else { "FAIL" }
        );
    }
    let broken = CheckOptions {
        inject: Some((0, 1.01)),
        ..opts
    };
    let runs = run_audit_suite(&cases, 0..3, 2, &broken)?;
    let caught = runs.iter().filter(|r| !r.report.passed()).count();
    println!("1% error injected into the first tensor: caught {caught}/{}", runs.len());
    println!("\nfull report for the first broken case (expected to fail):\n{}", runs[0].report);
    Ok(())
}
