//! Acceptance suite: one test per gate, every tolerance pinned in
//! `hypojump::selftest`. Run with `cargo test -p hypojump --test acceptance
//! -- --nocapture` to see one pass/fail line per criterion.

use hypojump::selftest::{self, CheckReport};

fn gate(report: hypojump::Result<CheckReport>) {
    let report = report.expect("check must run to completion");
    println!(
        "[{}] criterion: {} ({:.1}s) — {}",
        if report.passed { "PASS" } else { "FAIL" },
        report.name,
        report.seconds,
        report.details
    );
    assert!(report.passed, "{}: {}", report.name, report.details);
}

#[test]
fn criterion_01_bracket_oracles() {
    gate(selftest::check_bracket_oracles());
}

#[test]
fn criterion_02_hormander_check() {
    gate(selftest::check_hormander());
}

#[test]
fn criterion_03_symmetrization() {
    gate(selftest::check_symmetrization());
}

#[test]
fn criterion_04_flow_consistency() {
    gate(selftest::check_flow_consistency());
}

#[test]
fn criterion_05_kolmogorov_covariance() {
    gate(selftest::check_kolmogorov_covariance());
}

#[test]
fn criterion_06_laplace_decay() {
    gate(selftest::check_laplace_decay());
}

#[test]
fn criterion_07_gv_identity() {
    gate(selftest::check_gv_identity());
}

#[test]
fn criterion_08_semigroup_generator() {
    gate(selftest::check_semigroup_generator());
}

#[test]
fn criterion_09_smoothness_proxies() {
    gate(selftest::check_smoothness_proxies());
}

#[test]
fn criterion_10_excursion_tail() {
    gate(selftest::check_excursion_tail());
}

#[test]
fn criterion_11_determinism() {
    gate(selftest::check_determinism());
}
