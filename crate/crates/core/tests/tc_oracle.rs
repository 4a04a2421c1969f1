mod common;

use common::*;
use rand::Rng;
use segrsd_core::seg_trainer::{best_coherent_match, tc_measure};
use segrsd_core::VideoSequence;

#[test]
fn coherent_match_equals_brute_force() {
    let mut r = rng(1);
    for _ in 0..100 {
        let k = r.random_range(1..=5);
        let t = r.random_range(2..=30);
        let pred = random_labels(&mut r, k, t);
        let got = best_coherent_match(&pred, k);
        let (order, matches) = brute_force(&pred);
        assert!(got.exact);
        assert_eq!(got.matches, matches, "{pred:?}");
        assert_eq!(got.order, order, "{pred:?}");
        assert_eq!(got.accuracy, matches as f64 / t as f64);
    }
}

#[test]
fn tc_measure_equals_brute_force() {
    let mut r = rng(2);
    for _ in 0..20 {
        let k = r.random_range(2..=5);
        let model = label_echo_model(k);
        let labels: Vec<Vec<usize>> = (0..5)
            .map(|_| {
                let t = r.random_range(2..=30);
                random_labels(&mut r, k, t)
            })
            .collect();
        let videos: Vec<VideoSequence> = labels.iter().enumerate().map(|(i, l)| one_hot_video(&format!("v{i}"), l, k)).collect();
        let refs: Vec<&VideoSequence> = videos.iter().collect();
        let want = labels.iter().map(|l| brute_force(l).1 as f64 / l.len() as f64).sum::<f64>() / labels.len() as f64;
        assert_eq!(tc_measure(&model, &refs).unwrap(), want);
    }
}

#[test]
fn alternating_labels_score_half() {
    for t in 4..=8 {
        let pred: Vec<usize> = (0..t).map(|i| i % 2).collect();
        let got = best_coherent_match(&pred, 2);
        let (_, m) = brute_force(&pred);
        assert_eq!(got.matches, m);
        assert!((got.accuracy - 0.5).abs() <= 1.0 / t as f64);
    }
}

#[test]
fn relabeling_preserves_accuracy() {
    let mut r = rng(3);
    for _ in 0..50 {
        let pred = random_labels(&mut r, 4, 25);
        let perm = [2, 0, 3, 1];
        let relabeled: Vec<usize> = pred.iter().map(|&l| perm[l]).collect();
        assert_eq!(best_coherent_match(&pred, 4).matches, best_coherent_match(&relabeled, 4).matches);
    }
}

#[test]
fn many_labels_use_local_search() {
    let mut r = rng(4);
    let k = 10;
    // coherent sequence in a shuffled order is found exactly
    let mut order: Vec<usize> = (0..k).collect();
    for i in (1..k).rev() {
        order.swap(i, r.random_range(0..=i));
    }
    let pred: Vec<usize> = order.iter().flat_map(|&l| std::iter::repeat_n(l, 3 + l)).collect();
    let got = best_coherent_match(&pred, k);
    assert!(!got.exact);
    assert_eq!(got.accuracy, 1.0);
    assert_eq!(got.order, order);

    let noisy = random_labels(&mut r, k, 60);
    let got = best_coherent_match(&noisy, k);
    assert!(got.accuracy > 0.0 && got.accuracy <= 1.0);
    assert_eq!(got, best_coherent_match(&noisy, k));
}
