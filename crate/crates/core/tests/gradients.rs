mod support;

use support::grad::{model_cases, op_cases, GradCase};

fn assert_all(cases: &[GradCase]) {
    let bad: Vec<String> = cases
        .iter()
        .filter(|c| !c.passed())
        .map(|c| {
            format!(
                "{}: max rel error {:.3e} over {} coords ({} excluded), tolerance {:.0e}",
                c.name,
                c.report.max_rel_error,
                c.report.checked,
                c.report.excluded,
                c.tolerance()
            )
        })
        .collect();
    assert!(bad.is_empty(), "{}", bad.join("\n"));
}

#[test]
fn every_op_matches_central_differences_over_five_seeds() {
    for seed in 0..5 {
        assert_all(&op_cases(seed).unwrap());
    }
}

#[test]
fn reduced_networks_match_central_differences_over_five_seeds() {
    for seed in 0..5 {
        let cases = model_cases(seed, 2, 12).unwrap();
        assert_eq!(cases.len(), 4);
        assert_all(&cases);
    }
}
