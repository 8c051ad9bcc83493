use embfuse::metrics::{
    accuracy, average_precision, eventize, mean_average_precision, onset_fms, EventList,
    EventizerConfig, Onset,
};
use ndarray::{Array2, Axis};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// AP by definition: for each positive, count the samples ranked at or above
/// it (higher score, or equal score with a lower index) and how many of those
/// are positive.
fn brute_force_ap(scores: &[f64], positives: &[bool]) -> Option<f64> {
    let n = scores.len();
    let total = positives.iter().filter(|&&p| p).count();
    if total == 0 {
        return None;
    }
    let ranks_above =
        |i: usize, j: usize| scores[j] > scores[i] || (scores[j] == scores[i] && j <= i);
    let mut sum = 0.0;
    for i in (0..n).filter(|&i| positives[i]) {
        let rank = (0..n).filter(|&j| ranks_above(i, j)).count();
        let hits = (0..n)
            .filter(|&j| positives[j] && ranks_above(i, j))
            .count();
        sum += hits as f64 / rank as f64;
    }
    Some(sum / total as f64)
}

fn seeded_instance(seed: u64, n: usize, k: usize) -> (Array2<f64>, Array2<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // coarse scores so ties occur
    let scores = Array2::from_shape_fn((n, k), |_| f64::from(rng.random_range(0..10u8)) / 10.0);
    let mut labels = Array2::from_shape_fn((n, k), |_| rng.random_bool(0.3));
    for c in 0..k {
        labels[[c, c]] = true;
    }
    (scores, labels)
}

#[test]
fn map_equals_brute_force_on_seeded_instances() {
    for seed in 0..20 {
        let (scores, labels) = seeded_instance(seed, 30, 4);
        let got = mean_average_precision(scores.view(), labels.view()).unwrap();
        let per_class: Vec<f64> = (0..4)
            .map(|c| {
                brute_force_ap(&scores.column(c).to_vec(), &labels.column(c).to_vec()).unwrap()
            })
            .collect();
        let oracle = per_class.iter().sum::<f64>() / 4.0;
        assert!(
            (got.value - oracle).abs() < 1e-9,
            "seed {seed}: {} vs {oracle}",
            got.value
        );
    }
}

#[test]
fn map_hand_case() {
    let ap = average_precision(&[0.9, 0.8, 0.1], &[true, false, true]).unwrap();
    assert!((ap - 0.8333).abs() < 1e-4);
    assert!((ap - 5.0 / 6.0).abs() < 1e-12);
}

#[test]
fn map_without_any_positive_is_undefined() {
    let scores = Array2::from_elem((3, 2), 0.5);
    let labels = Array2::from_elem((3, 2), false);
    assert!(mean_average_precision(scores.view(), labels.view()).is_err());
}

proptest! {
    #[test]
    fn map_depends_only_on_ranks(seed in 0u64..1000, shift in -5.0f64..5.0, scale in 0.1f64..10.0) {
        // distinct scores so a monotone map preserves the tie structure exactly
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scores = Array2::from_shape_fn((25, 3), |_| rng.random_range(-1.0..1.0));
        let mut labels = Array2::from_shape_fn((25, 3), |_| rng.random_bool(0.4));
        for c in 0..3 { labels[[c, c]] = true; }
        let base = mean_average_precision(scores.view(), labels.view()).unwrap().value;
        let warped = scores.mapv(|s: f64| (scale * s + shift).exp().atan());
        let after = mean_average_precision(warped.view(), labels.view()).unwrap().value;
        prop_assert!((base - after).abs() < 1e-12);
    }

    #[test]
    fn map_and_accuracy_ignore_sample_order(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scores = Array2::from_shape_fn((20, 3), |_| rng.random_range(0.0..1.0));
        let mut labels = Array2::from_shape_fn((20, 3), |_| rng.random_bool(0.4));
        for c in 0..3 { labels[[c, c]] = true; }
        let mut order: Vec<usize> = (0..20).collect();
        order.shuffle(&mut rng);
        let a = mean_average_precision(scores.view(), labels.view()).unwrap().value;
        let b = mean_average_precision(
            scores.select(Axis(0), &order).view(),
            labels.select(Axis(0), &order).view(),
        ).unwrap().value;
        prop_assert!((a - b).abs() < 1e-12);

        let pred: Vec<usize> = (0..20).map(|_| rng.random_range(0..3)).collect();
        let truth: Vec<usize> = (0..20).map(|_| rng.random_range(0..3)).collect();
        let pp: Vec<usize> = order.iter().map(|&i| pred[i]).collect();
        let tp: Vec<usize> = order.iter().map(|&i| truth[i]).collect();
        prop_assert_eq!(accuracy(&pred, &truth).unwrap(), accuracy(&pp, &tp).unwrap());
    }

    #[test]
    fn onset_scores_are_symmetric(
        pred in prop::collection::vec((0.0f64..3.0, 0usize..3), 0..10),
        reference in prop::collection::vec((0.0f64..3.0, 0usize..3), 0..10),
        tolerance in 0.01f64..0.3,
    ) {
        let list = |v: &[(f64, usize)]| {
            EventList::new(v.iter().map(|&(time_s, label)| Onset { time_s, label }).collect()).unwrap()
        };
        let (p, r) = (list(&pred), list(&reference));
        let forward = onset_fms(&p, &r, tolerance).unwrap();
        let backward = onset_fms(&r, &p, tolerance).unwrap();
        prop_assert_eq!(forward.precision, backward.recall);
        prop_assert_eq!(forward.recall, backward.precision);
        prop_assert!((forward.f1 - backward.f1).abs() < 1e-12);
    }

    #[test]
    fn onset_score_is_one_exactly_for_a_bijection(
        count in 1usize..8,
        jitter in prop::collection::vec(-0.04f64..0.04, 8),
    ) {
        // references spaced well beyond twice the tolerance
        let reference: Vec<Onset> = (0..count)
            .map(|i| Onset { time_s: 1.0 + i as f64, label: 0 }).collect();
        let pred: Vec<Onset> = reference.iter().zip(&jitter)
            .map(|(o, j)| Onset { time_s: o.time_s + j, label: 0 }).collect();
        let full = onset_fms(&EventList::new(pred.clone()).unwrap(), &EventList::new(reference.clone()).unwrap(), 0.05).unwrap();
        prop_assert_eq!(full.f1, 1.0);
        let mut extra = pred;
        extra.push(Onset { time_s: 0.2, label: 0 });
        let partial = onset_fms(&EventList::new(extra).unwrap(), &EventList::new(reference).unwrap(), 0.05).unwrap();
        prop_assert!(partial.f1 < 1.0);
    }
}

#[test]
fn onset_hand_case() {
    let pred = EventList::new(vec![
        Onset {
            time_s: 0.0,
            label: 0,
        },
        Onset {
            time_s: 1.0,
            label: 0,
        },
    ])
    .unwrap();
    let reference = EventList::new(vec![
        Onset {
            time_s: 0.0,
            label: 0,
        },
        Onset {
            time_s: 1.06,
            label: 0,
        },
    ])
    .unwrap();
    let s = onset_fms(&pred, &reference, 0.05).unwrap();
    assert_eq!((s.precision, s.recall, s.f1), (0.5, 0.5, 0.5));
}

/// Active frames after median filtering and thresholding, by direct scan.
fn active_frames(column: &[f64], window: usize, threshold: f64) -> Vec<bool> {
    let half = window / 2;
    let n = column.len();
    (0..n)
        .map(|i| {
            let mut w: Vec<f64> = (0..window)
                .map(|j| column[(i + j).saturating_sub(half).min(n - 1)])
                .collect();
            w.sort_by(f64::total_cmp);
            w[half] >= threshold
        })
        .collect()
}

/// Raising the threshold only shrinks the active region, so every onset
/// found at a higher threshold lies on a frame that was already active.
#[test]
fn higher_thresholds_only_find_onsets_inside_lower_threshold_regions() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let rate = 50.0;
    for trial in 0..200 {
        let frames = rng.random_range(5..80);
        let probs = Array2::from_shape_fn((frames, 2), |_| rng.random_range(0.0..1.0));
        let times: Vec<f64> = (0..frames).map(|i| i as f64 / rate).collect();
        let mut thresholds: Vec<f64> = (0..6).map(|_| rng.random_range(0.05..0.95)).collect();
        thresholds.sort_by(f64::total_cmp);
        let window = [1, 3, 5][trial % 3];
        for pair in thresholds.windows(2) {
            let (lo, hi) = (pair[0], pair[1]);
            for min_duration_s in [0.0, 0.05] {
                let cfg = |threshold| EventizerConfig {
                    threshold,
                    min_duration_s,
                    median_window: window,
                };
                let high = eventize(probs.view(), &times, &cfg(hi)).unwrap();
                for onset in high.onsets() {
                    let frame = (onset.time_s * rate).round() as usize;
                    let column = probs.column(onset.label).to_vec();
                    assert!(
                        active_frames(&column, window, lo)[frame],
                        "trial {trial}: onset at frame {frame} not active at threshold {lo}"
                    );
                }
            }
        }
    }
}

/// The stronger reading "raising the threshold never adds an onset" does
/// not hold: a dip between two peaks splits one run into two.
#[test]
fn raising_the_threshold_can_split_a_run() {
    let probs = Array2::from_shape_vec((3, 1), vec![0.9, 0.6, 0.9]).unwrap();
    let times = [0.0, 0.1, 0.2];
    let cfg = |threshold| EventizerConfig {
        threshold,
        min_duration_s: 0.0,
        median_window: 1,
    };
    assert_eq!(eventize(probs.view(), &times, &cfg(0.5)).unwrap().len(), 1);
    assert_eq!(eventize(probs.view(), &times, &cfg(0.7)).unwrap().len(), 2);
}
