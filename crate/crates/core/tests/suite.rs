use tvjko::jko::JkoConfig;
use tvjko::properties::{run_suite, run_suite_with, SuiteOptions, Verdict};

#[test]
fn default_seed_passes_with_the_guard_skipped() {
    let report = run_suite(0).unwrap();
    let failing: Vec<_> = report
        .cases
        .iter()
        .filter(|c| c.verdict == Verdict::Fail)
        .map(|c| (&c.case, &c.detail))
        .collect();
    assert!(report.passed(), "{failing:?}");
    assert_eq!(report.failures(), 0);
    let guard = report
        .cases
        .iter()
        .find(|c| c.case == "min_principle_1d_vacuum_guard")
        .unwrap();
    assert_eq!(guard.verdict, Verdict::Skipped);
    assert!(report.cases.len() >= 30);
}

#[test]
fn capped_iterations_make_certificate_cases_fail() {
    let mut opts = SuiteOptions::new(0);
    opts.solver = JkoConfig {
        max_outer_iter: 1,
        ..opts.solver
    };
    let report = run_suite_with(&opts).unwrap();
    assert!(!report.passed());
    assert!(report.failures() >= 5, "only {} failures", report.failures());
}

#[test]
fn report_is_deterministic_and_well_formed() {
    let a = run_suite(3).unwrap();
    let b = run_suite(3).unwrap();
    let (mut ca, mut cb) = (Vec::new(), Vec::new());
    a.write_csv(&mut ca).unwrap();
    b.write_csv(&mut cb).unwrap();
    assert_eq!(ca, cb);
    let text = String::from_utf8(ca).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("case,seed,margin,tolerance,verdict,paper_anchor"));
    assert_eq!(lines.count(), a.cases.len());
}
