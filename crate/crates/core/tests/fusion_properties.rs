use std::collections::BTreeMap;

use embfuse::fusion::{
    average_features, concat_features, fuse, grouped_pool, layer_aggregate, mean_pool, resample,
    scene_embed, Combine, EmbeddingSequence, FusionConfig, LayerStack,
};
use ndarray::{s, Array1, Array2};
use proptest::prelude::*;

fn matrix(max_t: usize, max_c: usize) -> impl Strategy<Value = Array2<f32>> {
    (1..=max_t, 1..=max_c).prop_flat_map(|(t, c)| {
        prop::collection::vec(-10.0f32..10.0, t * c)
            .prop_map(move |v| Array2::from_shape_vec((t, c), v).unwrap())
    })
}

fn same_shape(n: usize, t: usize, c: usize) -> impl Strategy<Value = Vec<Array2<f32>>> {
    prop::collection::vec(
        prop::collection::vec(-10.0f32..10.0, t * c)
            .prop_map(move |v| Array2::from_shape_vec((t, c), v).unwrap()),
        n,
    )
}

fn seq(data: Array2<f32>) -> EmbeddingSequence {
    EmbeddingSequence::new(data, 50.0, 0.0125).unwrap()
}

fn max_abs_diff(a: &Array2<f32>, b: &Array2<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(&x, &y)| (f64::from(x) - y).abs())
        .fold(0.0, f64::max)
}

/// Source coordinate of output sample `j` when resampling `n` samples to `m`.
/// A single output sits at the source midpoint, where an affine signal takes its mean.
fn coord(j: usize, n: usize, m: usize) -> f64 {
    if m == 1 {
        (n as f64 - 1.0) / 2.0
    } else if n == 1 {
        0.0
    } else {
        j as f64 * (n - 1) as f64 / (m - 1) as f64
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn layer_aggregate_is_the_mean_in_any_layer_order(
        (layers, rot) in (1usize..5, 1usize..6, 1usize..6)
            .prop_flat_map(|(l, t, c)| (same_shape(l, t, c), 0..l))
    ) {
        let stack = LayerStack::new(layers.clone(), 100.0, 0.0).unwrap();
        let got = layer_aggregate(&stack);
        let (t, c) = layers[0].dim();
        let mut oracle = Array2::<f64>::zeros((t, c));
        for i in 0..t {
            for j in 0..c {
                oracle[[i, j]] = layers.iter().map(|m| f64::from(m[[i, j]])).sum::<f64>()
                    / layers.len() as f64;
            }
        }
        prop_assert!(max_abs_diff(got.data(), &oracle) < 1e-6);

        let mut rotated = layers.clone();
        rotated.rotate_left(rot);
        let permuted = layer_aggregate(&LayerStack::new(rotated, 100.0, 0.0).unwrap());
        let diff = max_abs_diff(permuted.data(), &got.data().mapv(f64::from));
        prop_assert!(diff < 1e-6);
    }

    /// Quarter-step coefficients keep the source exactly representable and
    /// every value below 32, so only the final f32 rounding remains.
    #[test]
    fn resample_reproduces_affine_functions(
        t in 1usize..12, c in 1usize..12, tt in 1usize..20, ct in 1usize..20,
        a in -4i32..=4, b in -4i32..=4, d in -8i32..=8,
    ) {
        let (a, b, d) = (f64::from(a) / 4.0, f64::from(b) / 4.0, f64::from(d) / 4.0);
        let src = Array2::from_shape_fn((t, c), |(i, j)| (a * i as f64 + b * j as f64 + d) as f32);
        let out = resample(&seq(src), tt, ct).unwrap();
        prop_assert_eq!(out.data().dim(), (tt, ct));
        let oracle = Array2::from_shape_fn((tt, ct), |(i, j)| {
            a * coord(i, t, tt) + b * coord(j, c, ct) + d
        });
        prop_assert!(max_abs_diff(out.data(), &oracle) < 1e-6);
    }

    #[test]
    fn resample_to_own_shape_is_identity(m in matrix(10, 10)) {
        let (t, c) = m.dim();
        let s = seq(m);
        prop_assert_eq!(resample(&s, t, c).unwrap(), s);
    }

    #[test]
    fn resample_keeps_endpoints(m in matrix(10, 10), tt in 2usize..20, ct in 2usize..20) {
        let (t, c) = m.dim();
        prop_assume!(t > 1 && c > 1);
        let out = resample(&seq(m.clone()), tt, ct).unwrap();
        let d = out.data();
        for (oi, si) in [(0, 0), (tt - 1, t - 1)] {
            for (oj, sj) in [(0, 0), (ct - 1, c - 1)] {
                prop_assert_eq!(d[[oi, oj]], m[[si, sj]]);
            }
        }
    }

    #[test]
    fn concat_slices_recover_members_and_pool_per_channel(
        (a, b) in (1usize..8).prop_flat_map(|t| (
            (1usize..6).prop_flat_map(move |c| same_shape(1, t, c)),
            (1usize..6).prop_flat_map(move |c| same_shape(1, t, c)),
        ))
    ) {
        let (a, b) = (seq(a[0].clone()), seq(b[0].clone()));
        let cat = concat_features(&[a.clone(), b.clone()]).unwrap();
        let ca = a.channels();
        prop_assert_eq!(cat.data().slice(s![.., ..ca]), a.data().view());
        prop_assert_eq!(cat.data().slice(s![.., ca..]), b.data().view());

        let pooled = mean_pool(&cat).into_values();
        let mut parts = mean_pool(&a).into_values().to_vec();
        parts.extend(mean_pool(&b).into_values());
        let diff = pooled.iter().zip(&parts).map(|(x, y)| (x - y).abs()).fold(0.0f32, f32::max);
        prop_assert!(diff < 1e-6);
    }

    #[test]
    fn grouped_pool_single_group_is_mean_pool(m in matrix(12, 6)) {
        let s = seq(m);
        prop_assert_eq!(grouped_pool(&s, 1).unwrap(), mean_pool(&s));
    }

    #[test]
    fn grouped_pool_of_constant_sequence_tiles_the_row(
        row in prop::collection::vec(-5.0f32..5.0, 1..6), t in 1usize..12, k in 1usize..9,
    ) {
        let c = row.len();
        let data = Array2::from_shape_fn((t, c), |(_, j)| row[j]);
        let got = grouped_pool(&seq(data), k).unwrap();
        let tiled: Array1<f32> = (0..k * c).map(|i| row[i % c]).collect();
        prop_assert_eq!(got.values(), &tiled);
    }

    #[test]
    fn grouped_pool_matches_partition_oracle(m in matrix(15, 5), k in 1usize..8) {
        let (t, c) = m.dim();
        prop_assume!(k <= t);
        let got = grouped_pool(&seq(m.clone()), k).unwrap();
        for g in 0..k {
            let (lo, hi) = (g * t / k, (g + 1) * t / k);
            for j in 0..c {
                let mean = (lo..hi).map(|i| f64::from(m[[i, j]])).sum::<f64>() / (hi - lo) as f64;
                prop_assert!((f64::from(got.values()[g * c + j]) - mean).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn average_of_identical_members_is_the_member(m in matrix(8, 8), n in 1usize..5) {
        let s = seq(m);
        let copies = vec![s.clone(); n];
        prop_assert_eq!(average_features(&copies).unwrap(), s);
    }

    #[test]
    fn fuse_is_deterministic(
        a in same_shape(3, 6, 4), b in same_shape(2, 9, 5), grouped in any::<bool>(), avg in any::<bool>(),
    ) {
        let mut stacks = BTreeMap::new();
        stacks.insert("a".to_string(), LayerStack::new(a, 50.0, 0.01).unwrap());
        stacks.insert("b".to_string(), LayerStack::new(b, 75.0, 0.02).unwrap());
        let mut cfg = FusionConfig::concat(["a", "b"]);
        if avg { cfg = cfg.with_combine(Combine::Average); }
        if grouped { cfg = cfg.grouped(5); }
        let first = fuse(&stacks, &cfg).unwrap();
        let second = fuse(&stacks, &cfg).unwrap();
        prop_assert_eq!(&first, &second);
        prop_assert_eq!(scene_embed(&first, &cfg).unwrap(), scene_embed(&second, &cfg).unwrap());
    }

    /// Pooling is per channel, so grouping before or after joining members agrees.
    #[test]
    fn grouping_commutes_with_concatenation(a in same_shape(1, 11, 3), b in same_shape(1, 11, 2), k in 1usize..7) {
        let (a, b) = (seq(a[0].clone()), seq(b[0].clone()));
        let after = grouped_pool(&concat_features(&[a.clone(), b.clone()]).unwrap(), k).unwrap();
        let (ga, gb) = (grouped_pool(&a, k).unwrap(), grouped_pool(&b, k).unwrap());
        let before: Vec<f32> = (0..k)
            .flat_map(|g| {
                let ra = ga.values().slice(s![g * 3..(g + 1) * 3]).to_vec();
                let rb = gb.values().slice(s![g * 2..(g + 1) * 2]).to_vec();
                ra.into_iter().chain(rb)
            })
            .collect();
        prop_assert_eq!(after.values().to_vec(), before);
    }
}
