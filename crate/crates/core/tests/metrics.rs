mod common;

use common::{brute_force_indices, random_mask};
use fcnseg::metrics::{aggregate, compute_metrics, confusion, ConfusionCounts, Index};
use fcnseg::SegmentationMask;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(tp: u64, tn: u64, fp: u64, fn_: u64) -> fcnseg::metrics::MetricReport {
    compute_metrics(&ConfusionCounts { tp, tn, fp, fn_ }).unwrap()
}

#[test]
fn confusion_of_identical_and_complementary_masks() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let m = random_mask(16, 12, 0.4, &mut rng);
    let c = confusion(&m, &m).unwrap();
    assert_eq!((c.fp, c.fn_), (0, 0));
    let c = confusion(&m.complement(), &m).unwrap();
    assert_eq!((c.tp, c.tn), (0, 0));
    assert_eq!(c.total(), 16 * 12);
}

#[test]
fn confusion_rejects_mismatched_dims() {
    assert!(confusion(&SegmentationMask::empty(4, 4), &SegmentationMask::empty(4, 5)).is_err());
}

#[test]
fn matches_brute_force_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..200 {
        let (p, q) = (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
        let pred = random_mask(64, 64, p, &mut rng);
        let gt = random_mask(64, 64, q, &mut rng);
        let (counts, expect) = brute_force_indices(&pred, &gt);
        let c = confusion(&pred, &gt).unwrap();
        assert_eq!([c.tp, c.tn, c.fp, c.fn_], counts);
        let r = compute_metrics(&c).unwrap();
        for (i, index) in Index::ALL.into_iter().enumerate() {
            assert_eq!(r.get(index), expect[i], "{index}");
        }
    }
}

#[test]
fn hand_evaluated_examples() {
    assert_eq!(report(45, 45, 5, 5).mcc, 0.8);

    let r = report(6, 88, 2, 4);
    assert_eq!(r.jsi, Some(0.5));
    assert!((r.dsc.unwrap() - 12.0 / 18.0).abs() < 1e-15);
    assert!((r.dsc.unwrap() - 2.0 * 0.5 / 1.5).abs() < 1e-15);

    let r = report(30, 70, 0, 0);
    for index in Index::ALL {
        assert_eq!(r.get(index), Some(1.0), "{index}");
    }
}

#[test]
fn degenerate_denominators() {
    // Ground truth and prediction both all-background.
    let r = report(0, 100, 0, 0);
    assert_eq!((r.jsi, r.dsc, r.sensitivity), (None, None, None));
    assert_eq!(r.specificity, Some(1.0));
    assert_eq!(r.mcc, 0.0);
    assert!(compute_metrics(&ConfusionCounts::default()).is_err());
}

#[test]
fn aggregate_means_and_exclusions() {
    let a = report(9, 90, 1, 0); // jsi 0.9
    let b = report(19, 80, 1, 0); // jsi 0.95
    let agg = aggregate(&[a, b]).unwrap();
    assert!((agg.mean(Index::Jsi).unwrap() - 0.925).abs() < 1e-15);
    let sd = agg.get(Index::Jsi).sd.unwrap();
    assert!((sd - (2.0f64 * 0.025 * 0.025).sqrt()).abs() < 1e-15);

    let single = aggregate(&[a]).unwrap();
    assert_eq!(single.mean(Index::Jsi), a.jsi);
    assert_eq!(single.get(Index::Jsi).sd, Some(0.0));

    let same = aggregate(&[b, b, b]).unwrap();
    for index in Index::ALL {
        assert!((same.mean(index).unwrap() - b.get(index).unwrap()).abs() < 1e-15);
    }

    let empty_gt = report(0, 100, 0, 0);
    let agg = aggregate(&[a, empty_gt]).unwrap();
    assert_eq!(agg.get(Index::Jsi).excluded, 1);
    assert_eq!(agg.get(Index::Jsi).n, 1);
    assert_eq!(agg.mean(Index::Jsi), a.jsi);
    assert_eq!(agg.get(Index::Specificity).excluded, 0);
    assert!(aggregate(&[]).is_err());
    assert!(agg.to_kv("x.").contains("x.jsi.excluded=1\n"));
}

proptest! {
    #[test]
    fn jaccard_dice_ordering_and_identity(tp in 1u64..500, tn in 0u64..500, fp in 0u64..500, fn_ in 0u64..500) {
        let r = report(tp, tn, fp, fn_);
        let (j, d) = (r.jsi.unwrap(), r.dsc.unwrap());
        prop_assert!(0.0 <= j && j <= d && d <= 1.0);
        prop_assert!((d - 2.0 * j / (1.0 + j)).abs() < 1e-12);
        prop_assert!((-1.0..=1.0).contains(&r.mcc));
    }

    #[test]
    fn mcc_symmetric_under_class_swap(tp in 0u64..500, tn in 0u64..500, fp in 0u64..500, fn_ in 0u64..500) {
        prop_assume!(tp + tn + fp + fn_ > 0);
        prop_assert_eq!(report(tp, tn, fp, fn_).mcc, report(tn, tp, fn_, fp).mcc);
    }

    #[test]
    fn self_comparison_is_perfect(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = random_mask(20, 20, 0.5, &mut rng);
        m.set(0, 0, true);
        m.set(0, 1, false);
        let r = compute_metrics(&confusion(&m, &m).unwrap()).unwrap();
        for index in Index::ALL {
            prop_assert_eq!(r.get(index), Some(1.0));
        }
    }
}
