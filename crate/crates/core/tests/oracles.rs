mod support;

use support::oracle::{ci_oracle, oracle_cases, Dd};

#[test]
fn kernels_and_metrics_agree_with_brute_force() {
    for seed in [0, 1] {
        for case in oracle_cases(seed).unwrap() {
            assert!(
                case.passed(),
                "{}: {} instances, max error {:.3e}",
                case.name,
                case.instances,
                case.max_error
            );
        }
    }
}

#[test]
fn double_double_oracle_is_exact_on_simple_cases() {
    // 0.5·0.5/4 = 1/16, sqrt = 1/4.
    assert_eq!(ci_oracle(0.5, 4, 1.0), 0.25);
    let third = Dd::from(1.0).div(Dd::from(3.0));
    let back = third.mul(Dd::from(3.0));
    assert!((back.hi - 1.0).abs() + back.lo.abs() < 1e-30);
    let two = Dd::from(2.0).sqrt();
    let sq = two.mul(two);
    assert!((sq.hi - 2.0 + sq.lo).abs() < 1e-30);
}
