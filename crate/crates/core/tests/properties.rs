mod support;

use cbstm_core::data::{split_groups, Label};
use cbstm_core::metrics::{
    confidence_interval, confusion_from_predictions, detection_metrics, dice, iou, pr_curve, roc_curve, ConfusionCounts,
    Z_95,
};
use proptest::prelude::*;
use support::oracle::{mann_whitney_auc, mask_tensor};

fn labels_from(bits: &[bool]) -> Vec<Label> {
    bits.iter().map(|&b| if b { Label::Covid } else { Label::Healthy }).collect()
}

/// Scores on a coarse grid so ties are common.
fn scored_labels(max: usize) -> impl Strategy<Value = (Vec<f64>, Vec<Label>)> {
    prop::collection::vec((0u8..=20, any::<bool>()), 1..=max)
        .prop_map(|v| (v.iter().map(|(s, _)| f64::from(*s) / 20.0).collect(), v.iter().map(|(_, b)| *b).collect::<Vec<_>>()))
        .prop_map(|(s, b)| (s, labels_from(&b)))
}

fn mask_pair() -> impl Strategy<Value = (usize, usize, Vec<bool>, Vec<bool>)> {
    (1usize..10, 1usize..10).prop_flat_map(|(h, w)| {
        (
            Just(h),
            Just(w),
            prop::collection::vec(any::<bool>(), h * w),
            prop::collection::vec(any::<bool>(), h * w),
        )
    })
}

proptest! {
    #[test]
    fn detection_rates_stay_in_range(tp in 0u64..1000, tn in 0u64..1000, fp in 0u64..1000, fn_ in 0u64..1000) {
        prop_assume!(tp + tn + fp + fn_ > 0);
        let r = detection_metrics(&ConfusionCounts { tp, tn, fp, fn_ }).unwrap();
        for v in [r.accuracy, r.precision, r.recall, r.specificity, r.f_score] {
            prop_assert!((0.0..=1.0).contains(&v), "{v}");
        }
        prop_assert!((-1.0..=1.0).contains(&r.mcc));
    }

    #[test]
    fn raising_the_threshold_never_adds_positive_calls((scores, labels) in scored_labels(60), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let c_lo = confusion_from_predictions(&scores, &labels, lo).unwrap();
        let c_hi = confusion_from_predictions(&scores, &labels, hi).unwrap();
        prop_assert!(c_hi.tp <= c_lo.tp);
        prop_assert!(c_hi.fp <= c_lo.fp);
        prop_assert_eq!(c_hi.total(), c_lo.total());
    }

    #[test]
    fn overlap_scores_are_symmetric_and_related((h, w, a, b) in mask_pair()) {
        let (ta, tb) = (mask_tensor(&a, h, w), mask_tensor(&b, h, w));
        let (j, d) = (iou(&ta, &tb).unwrap().value, dice(&ta, &tb).unwrap().value);
        prop_assert_eq!(j, iou(&tb, &ta).unwrap().value);
        prop_assert_eq!(d, dice(&tb, &ta).unwrap().value);
        prop_assert!((0.0..=1.0).contains(&j) && (0.0..=1.0).contains(&d));
        prop_assert!((d - 2.0 * j / (1.0 + j)).abs() <= 1e-12);
        prop_assert!(j <= d);
    }

    #[test]
    fn roc_area_is_the_mann_whitney_statistic((scores, labels) in scored_labels(200)) {
        prop_assume!(labels.contains(&Label::Covid) && labels.contains(&Label::Healthy));
        let (curve, auc) = roc_curve(&scores, &labels).unwrap();
        prop_assert!((auc - mann_whitney_auc(&scores, &labels)).abs() <= 1e-12);
        let last = curve.points.last().unwrap();
        prop_assert_eq!((last.x, last.y), (1.0, 1.0));
        prop_assert!(curve.points.windows(2).all(|w| w[0].x <= w[1].x && w[0].y <= w[1].y));
    }

    #[test]
    fn pr_area_is_a_probability((scores, labels) in scored_labels(100)) {
        prop_assume!(labels.contains(&Label::Covid));
        let (_, auc) = pr_curve(&scores, &labels).unwrap();
        prop_assert!((0.0..=1.0).contains(&auc));
    }

    #[test]
    fn interval_shrinks_with_sample_size(e in 0.0f64..=1.0, n in 1u64..100_000) {
        let a = confidence_interval(e, n, Z_95).unwrap();
        let b = confidence_interval(e, n + 1, Z_95).unwrap();
        prop_assert!(a >= 0.0 && b <= a);
        prop_assert!(a <= Z_95 * 0.5);
    }

    #[test]
    fn split_partitions_records_without_splitting_groups(
        groups in prop::collection::vec(0u8..12, 5..80),
        seed in any::<u64>(),
    ) {
        let ids: Vec<String> = groups.iter().map(|g| format!("vol{g}")).collect();
        let distinct = {
            let mut d = groups.clone();
            d.sort_unstable();
            d.dedup();
            d.len()
        };
        let Ok(split) = split_groups(&ids, seed, 0.2, 0.2) else {
            prop_assert!(distinct < 3);
            return Ok(());
        };
        let mut all: Vec<usize> = split.train.iter().chain(&split.validation).chain(&split.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..ids.len()).collect::<Vec<_>>());
        let assignment = split.assignment(ids.len());
        for i in 0..ids.len() {
            for j in 0..ids.len() {
                if ids[i] == ids[j] {
                    prop_assert_eq!(assignment[i], assignment[j]);
                }
            }
        }
        prop_assert_eq!(split_groups(&ids, seed, 0.2, 0.2).unwrap(), split);
    }
}
