use std::collections::BTreeSet;

use proptest::prelude::*;
use segrsd::split::{split_corpus, split_sizes, DEFAULT_RATIOS};
use segrsd::synth::{synth_generate, SynthConfig};
use segrsd_core::metrics::mean_std;
use segrsd_core::Split;

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("video{i:03}")).collect()
}

fn count(split: &std::collections::BTreeMap<String, Split>, which: Split) -> usize {
    split.values().filter(|&&s| s == which).count()
}

#[test]
fn reference_split_sizes() {
    let s = split_corpus(&ids(80), DEFAULT_RATIOS, 3).unwrap();
    assert_eq!(
        [count(&s, Split::Train), count(&s, Split::Val), count(&s, Split::Test)],
        [50, 10, 20]
    );
    let s = split_corpus(&ids(8), DEFAULT_RATIOS, 3).unwrap();
    assert_eq!(
        [count(&s, Split::Train), count(&s, Split::Val), count(&s, Split::Test)],
        [5, 1, 2]
    );
    // 10 * (5, 1, 2) / 8 = (6.25, 1.25, 2.5): the largest remainder gets the spare video
    assert_eq!(split_sizes(10, DEFAULT_RATIOS).unwrap(), [6, 1, 3]);
    assert_eq!(split_sizes(9, DEFAULT_RATIOS).unwrap(), [6, 1, 2]);
    assert!(split_corpus(&ids(7), DEFAULT_RATIOS, 0).is_err());
    assert!(split_sizes(5, (0, 0, 0)).is_err());
}

#[test]
fn split_is_seeded_and_order_free() {
    let a = split_corpus(&ids(40), DEFAULT_RATIOS, 11).unwrap();
    let mut reversed = ids(40);
    reversed.reverse();
    assert_eq!(a, split_corpus(&reversed, DEFAULT_RATIOS, 11).unwrap());
    assert_ne!(a, split_corpus(&ids(40), DEFAULT_RATIOS, 12).unwrap());
    let mut dup = ids(10);
    dup.push("video000".into());
    assert!(split_corpus(&dup, DEFAULT_RATIOS, 0).is_err());
}

proptest! {
    #[test]
    fn split_is_a_partition(n in 8usize..200, a in 1usize..6, b in 0usize..4, c in 0usize..4, seed in any::<u64>()) {
        prop_assume!(n >= a + b + c);
        let all = ids(n);
        let s = split_corpus(&all, (a, b, c), seed).unwrap();
        prop_assert_eq!(s.keys().cloned().collect::<BTreeSet<_>>(), all.iter().cloned().collect::<BTreeSet<_>>());
        let sizes = split_sizes(n, (a, b, c)).unwrap();
        prop_assert_eq!(sizes.iter().sum::<usize>(), n);
        let total = (a + b + c) as f64;
        for (size, r) in sizes.iter().zip([a, b, c]) {
            prop_assert!((*size as f64 - n as f64 * r as f64 / total).abs() < 1.0);
        }
        prop_assert_eq!(count(&s, Split::Train), sizes[0]);
        prop_assert_eq!(count(&s, Split::Val), sizes[1]);
    }
}

fn base() -> SynthConfig {
    SynthConfig {
        n_videos: 12,
        k_true: 4,
        dim: 6,
        duration_mean_min: 1.0,
        duration_jitter: 0.3,
        seed: 21,
        ..SynthConfig::default()
    }
}

#[test]
fn noiseless_features_sit_on_their_centers() {
    let cfg = SynthConfig {
        noise_sigma: 0.0,
        skip_prob: 0.0,
        progress_gain: 0.0,
        ..base()
    };
    let s = synth_generate(&cfg).unwrap();
    for (v, seg) in s.corpus.videos.iter().zip(&s.truth) {
        let labels = v.phase_labels.as_ref().unwrap();
        assert_eq!(labels, &seg.to_labels().0);
        let mut present = seg.order();
        present.sort();
        assert_eq!(present, vec![0, 1, 2, 3]);
        for (t, &l) in labels.iter().enumerate() {
            for j in 0..cfg.dim {
                let center = if j == l { cfg.cluster_separation } else { 0.0 };
                assert_eq!(v.features.get(t, j), center);
            }
            // nearest center recovers the label
            let nearest = (0..cfg.k_true)
                .min_by(|&a, &b| {
                    let d = |k: usize| (0..cfg.dim).map(|j| (v.features.get(t, j) - if j == k { 4.0 } else { 0.0 }).powi(2)).sum::<f64>();
                    d(a).total_cmp(&d(b))
                })
                .unwrap();
            assert_eq!(nearest, l);
        }
    }
}

#[test]
fn zero_jitter_fixes_the_duration() {
    let s = synth_generate(&SynthConfig {
        duration_jitter: 0.0,
        duration_mean_min: 2.5,
        frame_period_s: 1.5,
        ..base()
    })
    .unwrap();
    for (v, d) in s.corpus.videos.iter().zip(&s.durations_min) {
        assert_eq!(*d, 2.5);
        assert_eq!(v.len(), 100);
        assert!((v.duration_min() - 2.5).abs() < 1e-12);
    }
}

#[test]
fn duration_mean_within_three_standard_errors() {
    let cfg = SynthConfig {
        n_videos: 1000,
        k_true: 2,
        dim: 2,
        duration_mean_min: 0.5,
        duration_jitter: 0.4,
        seed: 8,
        ..SynthConfig::default()
    };
    let s = synth_generate(&cfg).unwrap();
    let (mean, _) = mean_std(&s.durations_min);
    // U(-j, j) has variance j^2 / 3
    let se = cfg.duration_mean_min * cfg.duration_jitter / (3.0f64 * 1000.0).sqrt();
    assert!((mean - cfg.duration_mean_min).abs() < 3.0 * se, "{mean} vs {}", cfg.duration_mean_min);
    assert!(s
        .durations_min
        .iter()
        .all(|d| (0.3..=0.7).contains(d)));
}

#[test]
fn skipped_subactivities_leave_at_least_two() {
    let s = synth_generate(&SynthConfig {
        skip_prob: 0.6,
        n_videos: 200,
        duration_mean_min: 0.2,
        ..base()
    })
    .unwrap();
    let mut sizes = BTreeSet::new();
    for seg in &s.truth {
        assert!(seg.order().len() >= 2);
        sizes.insert(seg.order().len());
    }
    assert!(sizes.contains(&2) && sizes.contains(&4), "{sizes:?}");
}

#[test]
fn generation_is_reproducible_and_validated() {
    let a = synth_generate(&base()).unwrap();
    let b = synth_generate(&base()).unwrap();
    assert_eq!(a.corpus, b.corpus);
    assert_eq!(a.truth, b.truth);
    let c = synth_generate(&SynthConfig { seed: 22, ..base() }).unwrap();
    assert_ne!(a.corpus, c.corpus);
    assert_eq!(a.corpus.videos_in(Split::Train).len() + a.corpus.videos_in(Split::Val).len() + a.corpus.videos_in(Split::Test).len(), 12);

    for bad in [
        SynthConfig { k_true: 7, ..base() },
        SynthConfig { k_true: 1, ..base() },
        SynthConfig { duration_jitter: 1.0, ..base() },
        SynthConfig { cluster_separation: 0.0, ..base() },
        SynthConfig { noise_sigma: -1.0, ..base() },
        SynthConfig { skip_prob: 1.0, ..base() },
        SynthConfig { n_videos: 0, ..base() },
    ] {
        assert!(synth_generate(&bad).is_err(), "{bad:?}");
    }
    let small = synth_generate(&SynthConfig { n_videos: 3, ..base() }).unwrap();
    assert_eq!(small.corpus.videos_in(Split::Train).len(), 3);
}
