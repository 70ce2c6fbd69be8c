//! The repository's exit gate: every one of the ten acceptance criteria
//! must pass at the default configuration. Each criterion prints one
//! pass/fail line with the numbers that decided it.

use scolab::accept::run_acceptance;
use scolab::config::load_config;

#[test]
fn acceptance_gate() {
    let config = load_config(None, &[]).expect("default configuration is valid");
    let report = run_acceptance(&config, &mut |outcome| println!("{}", outcome.line()))
        .expect("acceptance gate ran to completion");
    println!(
        "acceptance: {}/10 passed in {:.1} s",
        report.outcomes.iter().filter(|o| o.pass).count(),
        report.elapsed_s
    );
    assert!(report.all_pass, "at least one acceptance criterion failed; see lines above");
}
