mod common;

use proptest::prelude::*;
use segrsd_core::lengths::{sample_lengths, update_theta, LengthModel};
use segrsd_core::metrics::{hungarian_accuracy, mae_minutes};
use segrsd_core::rsd::{
    corr_smooth_l1, corridor_alpha, corridor_border, corridor_weight, smooth_l1, CorridorParams,
};
use segrsd_core::{Matrix, VideoSequence};

fn corridor() -> impl Strategy<Value = (f64, f64, f64, f64)> {
    // (t_median, t, gt, y) in minutes
    (1.0..120.0f64, 0.0..150.0f64, 0.0..150.0f64, -50.0..200.0f64)
        .prop_filter("progress defined", |(_, t, gt, _)| t + gt > 0.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn weight_is_bounded((tm, t, gt, y) in corridor()) {
        let cp = CorridorParams::new(tm).unwrap();
        let pi = corridor_weight(y, t, gt, &cp);
        prop_assert!((0.0..=1.0).contains(&pi));
    }

    #[test]
    fn weight_anchors((tm, t, gt, _) in corridor()) {
        let cp = CorridorParams::new(tm).unwrap();
        let c = corridor_border(t, gt, &cp).unwrap();
        if c != gt {
            prop_assert_eq!(corridor_weight(gt, t, gt, &cp), 0.0);
            prop_assert!((corridor_weight(c, t, gt, &cp) - 1.0).abs() < 1e-12);
        } else {
            prop_assert_eq!(corridor_weight(gt, t, gt, &cp), 1.0);
        }
    }

    #[test]
    fn corridor_never_exceeds_plain((tm, t, gt, y) in corridor()) {
        let cp = CorridorParams::new(tm).unwrap();
        let plain = smooth_l1(cp.scale * y, cp.scale * gt, cp.beta);
        prop_assert!(corr_smooth_l1(y, t, gt, &cp) <= plain);
    }

    #[test]
    fn weight_is_continuous_across_the_border((tm, t, gt, _) in corridor()) {
        let cp = CorridorParams::new(tm).unwrap();
        let c = corridor_border(t, gt, &cp).unwrap();
        prop_assume!((c - gt).abs() > 1e-3);
        let step = (c - gt) * 1e-7;
        let inside = corridor_weight(c - step, t, gt, &cp);
        let outside = corridor_weight(c + step, t, gt, &cp);
        prop_assert!((inside - outside).abs() < 1e-6);
    }

    #[test]
    fn border_gap_shrinks_with_progress(p1 in 0.0..1.0f64, p2 in 0.0..1.0f64) {
        let (lo, hi) = if p1 < p2 { (p1, p2) } else { (p2, p1) };
        prop_assume!(hi - lo > 1e-9);
        prop_assert!(corridor_alpha(lo) < corridor_alpha(hi));
        prop_assert!(1.0 - corridor_alpha(hi) < 1.0 - corridor_alpha(lo));
    }

    #[test]
    fn lengths_cover_the_video(t in 1usize..300, k in 1usize..8, seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let lm = LengthModel::uniform(k);
        let present: Vec<usize> = (0..k.min(t)).collect();
        let l = sample_lengths(&lm, &present, t, &mut r).unwrap();
        prop_assert_eq!(l.len(), present.len());
        prop_assert_eq!(l.iter().sum::<usize>(), t);
        prop_assert!(l.iter().all(|&x| x >= 1));
    }

    #[test]
    fn theta_is_a_simplex(counts in proptest::collection::vec(0usize..1000, 1..10), alpha in 0.01..5.0f64) {
        let theta = update_theta(&counts, alpha).unwrap();
        prop_assert!((theta.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(theta.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn mapping_accuracy_ignores_relabeling(
        pred in proptest::collection::vec(0usize..4, 1..60),
        seed in any::<u64>(),
    ) {
        let mut r = common::rng(seed);
        let reference: Vec<usize> = pred.iter().map(|_| rand::Rng::random_range(&mut r, 0..3)).collect();
        let perm = [3, 1, 0, 2];
        let relabeled: Vec<usize> = pred.iter().map(|&l| perm[l]).collect();
        let a = hungarian_accuracy(&pred, &reference).unwrap().accuracy;
        let b = hungarian_accuracy(&relabeled, &reference).unwrap().accuracy;
        prop_assert_eq!(a, b);
        prop_assert_eq!(hungarian_accuracy(&reference, &reference).unwrap().accuracy, 1.0);
    }

    #[test]
    fn mae_is_zero_only_on_ground_truth(t in 2usize..50, period in 0.5..120.0f64, bump in 1usize..50) {
        let v = VideoSequence::new("v", Matrix::zeros(t, 1), period, None).unwrap();
        let mut pred: Vec<f64> = (0..t).map(|f| v.remaining_min(f)).collect();
        prop_assert_eq!(mae_minutes(&[pred.clone()], &[&v]).unwrap(), 0.0);
        pred[bump % t] += 0.5;
        prop_assert!(mae_minutes(&[pred], &[&v]).unwrap() > 0.0);
    }
}

#[test]
fn corridor_dominated_on_a_million_samples() {
    use rand::Rng;
    let mut r = common::rng(77);
    for _ in 0..1_000_000 {
        let cp = CorridorParams::new(r.random_range(1.0..120.0)).unwrap();
        let t = r.random_range(0.0..150.0);
        let gt = r.random_range(0.001..150.0);
        let y = r.random_range(-50.0..200.0);
        assert!(corr_smooth_l1(y, t, gt, &cp) <= smooth_l1(cp.scale * y, cp.scale * gt, cp.beta));
    }
}
