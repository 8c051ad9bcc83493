use std::collections::BTreeMap;
use std::ops::Range;

use ndarray::{Array1, Array2, Axis};

use super::types::{Combine, EmbeddingSequence, FusionConfig, LayerStack, SceneMode, SceneVector};
use crate::error::{Error, Result};

/// Fair mean over all layers of a stack.
pub fn layer_aggregate(stack: &LayerStack) -> EmbeddingSequence {
    let (frames, channels) = (stack.frames(), stack.channels());
    let mut acc = Array2::<f64>::zeros((frames, channels));
    for layer in stack.layers() {
        acc.zip_mut_with(layer, |a, &v| *a += f64::from(v));
    }
    let scale = 1.0 / stack.layer_count() as f64;
    EmbeddingSequence::from_parts(
        acc.mapv(|v| (v * scale) as f32),
        stack.frame_rate_hz(),
        stack.t_start_s(),
    )
}

/// Endpoint-aligned linear interpolation of `src` along `axis` to `target` samples.
///
/// Output sample `j` reads source coordinate `j * (n - 1) / (target - 1)`.
/// A single-sample target is the mean along the axis; a single-sample source is replicated.
fn interpolate_axis(src: &Array2<f64>, axis: Axis, target: usize) -> Array2<f64> {
    let n = src.len_of(axis);
    if target == n {
        return src.clone();
    }
    let mut out_dim = src.raw_dim();
    out_dim[axis.index()] = target;
    let mut out = Array2::<f64>::zeros(out_dim);

    if target == 1 {
        let mean = src.sum_axis(axis) / n as f64;
        out.index_axis_mut(axis, 0).assign(&mean);
        return out;
    }
    if n == 1 {
        let only = src.index_axis(axis, 0);
        for mut lane in out.axis_iter_mut(axis) {
            lane.assign(&only);
        }
        return out;
    }

    let span = (n - 1) as f64;
    let steps = (target - 1) as f64;
    for (j, mut lane) in out.axis_iter_mut(axis).enumerate() {
        let x = (j * (n - 1)) as f64 / steps;
        let lo = (x.floor() as usize).min(n - 2);
        let frac = x - lo as f64;
        debug_assert!(x <= span);
        let a = src.index_axis(axis, lo);
        let b = src.index_axis(axis, lo + 1);
        ndarray::Zip::from(&mut lane)
            .and(&a)
            .and(&b)
            .for_each(|o, &a, &b| *o = a * (1.0 - frac) + b * frac);
    }
    out
}

/// Resamples a sequence to `t_target x c_target`, time axis first, then features.
pub fn resample(
    seq: &EmbeddingSequence,
    t_target: usize,
    c_target: usize,
) -> Result<EmbeddingSequence> {
    if t_target == 0 || c_target == 0 {
        return Err(Error::Input(format!(
            "resample target must be at least 1x1, got {t_target}x{c_target}"
        )));
    }
    let (frames, channels) = (seq.frames(), seq.channels());
    if (frames, channels) == (t_target, c_target) {
        return Ok(seq.clone());
    }
    let wide = seq.data().mapv(f64::from);
    let timed = interpolate_axis(&wide, Axis(0), t_target);
    let out = interpolate_axis(&timed, Axis(1), c_target);

    let frame_rate_hz = if t_target > 1 && frames > 1 {
        seq.frame_rate_hz() * (t_target as f64 / frames as f64)
    } else {
        seq.frame_rate_hz()
    };
    Ok(EmbeddingSequence::from_parts(
        out.mapv(|v| v as f32),
        frame_rate_hz,
        seq.t_start_s(),
    ))
}

fn ensure_common_timing(seqs: &[EmbeddingSequence], need_same_channels: bool) -> Result<()> {
    let first = seqs
        .first()
        .ok_or_else(|| Error::Input("need at least one sequence".into()))?;
    for (m, s) in seqs.iter().enumerate().skip(1) {
        if s.frames() != first.frames() {
            return Err(Error::Shape(format!(
                "member {m} has {} frames, member 0 has {}",
                s.frames(),
                first.frames()
            )));
        }
        if need_same_channels && s.channels() != first.channels() {
            return Err(Error::Shape(format!(
                "member {m} has {} channels, member 0 has {}",
                s.channels(),
                first.channels()
            )));
        }
        if !s.same_timing(first) {
            return Err(Error::Shape(format!(
                "member {m} timing ({} Hz, {} s) differs from member 0 ({} Hz, {} s)",
                s.frame_rate_hz(),
                s.t_start_s(),
                first.frame_rate_hz(),
                first.t_start_s()
            )));
        }
    }
    Ok(())
}

/// Joins members along the feature axis, in order.
pub fn concat_features(seqs: &[EmbeddingSequence]) -> Result<EmbeddingSequence> {
    ensure_common_timing(seqs, false)?;
    let views: Vec<_> = seqs.iter().map(|s| s.data().view()).collect();
    let data = ndarray::concatenate(Axis(1), &views)
        .map_err(|e| Error::Shape(format!("concatenation failed: {e}")))?;
    let first = &seqs[0];
    Ok(EmbeddingSequence::from_parts(
        data,
        first.frame_rate_hz(),
        first.t_start_s(),
    ))
}

/// Elementwise mean of equally shaped members.
pub fn average_features(seqs: &[EmbeddingSequence]) -> Result<EmbeddingSequence> {
    ensure_common_timing(seqs, true)?;
    let first = &seqs[0];
    let mut acc = Array2::<f64>::zeros(first.data().raw_dim());
    for s in seqs {
        acc.zip_mut_with(s.data(), |a, &v| *a += f64::from(v));
    }
    let scale = 1.0 / seqs.len() as f64;
    Ok(EmbeddingSequence::from_parts(
        acc.mapv(|v| (v * scale) as f32),
        first.frame_rate_hz(),
        first.t_start_s(),
    ))
}

fn rows_mean(seq: &EmbeddingSequence, rows: Range<usize>) -> Array1<f64> {
    let mut acc = Array1::<f64>::zeros(seq.channels());
    let count = rows.len() as f64;
    for row in seq.data().slice(ndarray::s![rows, ..]).rows() {
        acc.zip_mut_with(&row, |a, &v| *a += f64::from(v));
    }
    acc / count
}

/// Time-mean of a sequence.
pub fn mean_pool(seq: &EmbeddingSequence) -> SceneVector {
    let mean = rows_mean(seq, 0..seq.frames());
    SceneVector::from_values(mean.mapv(|v| v as f32))
}

/// Row ranges `[floor(gT/k), floor((g+1)T/k))` for `g` in `0..k`.
pub fn group_bounds(frames: usize, k: usize) -> Vec<Range<usize>> {
    (0..k)
        .map(|g| (g * frames / k)..((g + 1) * frames / k))
        .collect()
}

/// Splits the time axis into `k` contiguous groups, time-means each and
/// concatenates the group means in order.
///
/// When `k > T` some groups are empty; they repeat the nearest preceding
/// non-empty group, or the nearest following one for leading empties.
pub fn grouped_pool(seq: &EmbeddingSequence, k: usize) -> Result<SceneVector> {
    if k == 0 {
        return Err(Error::Input("group count must be at least 1".into()));
    }
    let bounds = group_bounds(seq.frames(), k);
    let means: Vec<Option<Array1<f64>>> = bounds
        .iter()
        .map(|r| (!r.is_empty()).then(|| rows_mean(seq, r.clone())))
        .collect();
    let channels = seq.channels();
    let mut out = Array1::<f32>::zeros(k * channels);
    for g in 0..k {
        let mean = (0..=g)
            .rev()
            .find_map(|i| means[i].as_ref())
            .or_else(|| means[g..].iter().find_map(Option::as_ref))
            .expect("at least one group is non-empty since T >= 1");
        out.slice_mut(ndarray::s![g * channels..(g + 1) * channels])
            .assign(&mean.mapv(|v| v as f32));
    }
    Ok(SceneVector::from_values(out))
}

/// Per-member representation before alignment.
fn member_sequence(stack: &LayerStack, aggregate: bool) -> EmbeddingSequence {
    if aggregate {
        layer_aggregate(stack)
    } else {
        stack.last_layer()
    }
}

/// Runs the whole ensemble: per-member layer handling, resampling to the
/// reference member's `(T, C)`, then concatenation or averaging.
///
/// The result carries the reference member's timing.
pub fn fuse(
    stacks: &BTreeMap<String, LayerStack>,
    cfg: &FusionConfig,
) -> Result<EmbeddingSequence> {
    fuse_with(|id| stacks.get(id), cfg)
}

/// [`fuse`] over an arbitrary lookup.
pub fn fuse_with<'a, F>(lookup: F, cfg: &FusionConfig) -> Result<EmbeddingSequence>
where
    F: Fn(&str) -> Option<&'a LayerStack>,
{
    cfg.validate()?;
    let reference_id = cfg.reference().expect("validated config has a reference");
    let mut sequences = Vec::with_capacity(cfg.members.len());
    for member in &cfg.members {
        let stack = lookup(&member.id)
            .ok_or_else(|| Error::Lookup(format!("no layer stack for member {:?}", member.id)))?;
        sequences.push((
            member.id.as_str(),
            member_sequence(stack, member.aggregate_layers),
        ));
    }
    let reference = sequences
        .iter()
        .find(|(id, _)| *id == reference_id)
        .map(|(_, s)| s.clone())
        .expect("validated reference is a member");
    let (t_ref, c_ref) = (reference.frames(), reference.channels());

    let aligned = sequences
        .into_iter()
        .map(|(id, seq)| {
            if id == reference_id {
                Ok(seq)
            } else {
                resample(&seq, t_ref, c_ref)?
                    .with_timing(reference.frame_rate_hz(), reference.t_start_s())
            }
        })
        .collect::<Result<Vec<_>>>()?;

    match cfg.combine {
        Combine::Concat => concat_features(&aligned),
        Combine::Average => average_features(&aligned),
    }
}

/// Scene embedding of a fused sequence in the configured mode.
pub fn scene_embed(seq: &EmbeddingSequence, cfg: &FusionConfig) -> Result<SceneVector> {
    match cfg.scene_mode {
        SceneMode::Mean => Ok(mean_pool(seq)),
        SceneMode::Grouped => grouped_pool(seq, cfg.group_count),
    }
}

/// Scene-vector length a config produces for a fused sequence with `channels` columns.
pub fn scene_dim(channels: usize, cfg: &FusionConfig) -> usize {
    match cfg.scene_mode {
        SceneMode::Mean => channels,
        SceneMode::Grouped => cfg.group_count * channels,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn seq(data: Array2<f32>) -> EmbeddingSequence {
        EmbeddingSequence::new(data, 50.0, 0.0125).unwrap()
    }

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f32> {
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0f32..1.0))
    }

    fn max_abs_diff(a: &Array2<f32>, b: &Array2<f32>) -> f64 {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| (f64::from(*x) - f64::from(*y)).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn aggregate_single_layer_is_identity() {
        let m = array![[1.5f32, -2.0], [0.25, 4.0]];
        let stack = LayerStack::new(vec![m.clone()], 50.0, 0.0).unwrap();
        assert_eq!(layer_aggregate(&stack).data(), &m);
    }

    #[test]
    fn aggregate_two_layers() {
        let stack = LayerStack::new(
            vec![array![[0.0f32, 2.0]], array![[2.0f32, 4.0]]],
            50.0,
            0.5,
        )
        .unwrap();
        let out = layer_aggregate(&stack);
        assert_eq!(out.data(), &array![[1.0f32, 3.0]]);
        assert_eq!(out.frame_rate_hz(), 50.0);
        assert_eq!(out.t_start_s(), 0.5);
    }

    #[test]
    fn aggregate_matches_elementwise_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let layers: Vec<_> = (0..3).map(|_| random(4, 3, &mut rng)).collect();
        let stack = LayerStack::new(layers.clone(), 50.0, 0.0).unwrap();
        let out = layer_aggregate(&stack);
        let mut expected = Array2::<f32>::zeros((4, 3));
        for t in 0..4 {
            for c in 0..3 {
                let s: f64 = layers.iter().map(|l| f64::from(l[[t, c]])).sum();
                expected[[t, c]] = (s / 3.0) as f32;
            }
        }
        assert!(max_abs_diff(out.data(), &expected) < 1e-6);
    }

    #[test]
    fn stack_rejects_mismatched_layers_and_nan() {
        let err = LayerStack::new(
            vec![Array2::zeros((2, 3)), Array2::zeros((3, 3))],
            50.0,
            0.0,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
        let err = LayerStack::new(vec![array![[f32::NAN]]], 50.0, 0.0).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
        let err = EmbeddingSequence::new(array![[f32::INFINITY]], 50.0, 0.0).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn resample_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = seq(random(6, 5, &mut rng));
        let out = resample(&s, 6, 5).unwrap();
        assert_eq!(out, s);
    }

    #[test]
    fn resample_midpoint() {
        let s = seq(array![[0.0f32, 0.0], [2.0, 2.0]]);
        let out = resample(&s, 3, 2).unwrap();
        assert_eq!(out.data(), &array![[0.0f32, 0.0], [1.0, 1.0], [2.0, 2.0]]);
        assert_eq!(out.frame_rate_hz(), 75.0);
        assert_eq!(out.t_start_s(), s.t_start_s());
    }

    #[test]
    fn resample_reproduces_affine_closed_form() {
        let src = Array2::from_shape_fn((5, 4), |(t, c)| 3.0 * t as f32 - 2.0 * c as f32);
        let out = resample(&seq(src), 9, 7).unwrap();
        let expected = Array2::from_shape_fn((9, 7), |(j, k)| {
            let t = j as f64 * 4.0 / 8.0;
            let c = k as f64 * 3.0 / 6.0;
            (3.0 * t - 2.0 * c) as f32
        });
        assert!(max_abs_diff(out.data(), &expected) < 1e-6);
    }

    #[test]
    fn resample_single_target_row_is_time_mean() {
        let s = seq(array![[1.0f32, 2.0], [3.0, 6.0]]);
        let out = resample(&s, 1, 2).unwrap();
        assert_eq!(out.data(), &array![[2.0f32, 4.0]]);
        assert_eq!(out.frame_rate_hz(), s.frame_rate_hz());
    }

    #[test]
    fn resample_degenerate_source_replicates() {
        let s = seq(array![[1.0f32, -1.0]]);
        let out = resample(&s, 4, 2).unwrap();
        for row in out.data().rows() {
            assert_eq!(row.to_vec(), vec![1.0, -1.0]);
        }
        assert_eq!(out.frame_rate_hz(), s.frame_rate_hz());
    }

    #[test]
    fn resample_preserves_endpoints() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = seq(random(7, 6, &mut rng));
        let out = resample(&s, 13, 6).unwrap();
        assert_eq!(out.data().row(0), s.data().row(0));
        assert_eq!(out.data().row(12), s.data().row(6));
    }

    #[test]
    fn resample_rejects_zero_target() {
        let s = seq(array![[1.0f32]]);
        assert!(matches!(resample(&s, 0, 1), Err(Error::Input(_))));
    }

    #[test]
    fn concat_single_member_identity() {
        let s = seq(array![[1.0f32, 2.0]]);
        assert_eq!(concat_features(std::slice::from_ref(&s)).unwrap(), s);
    }

    #[test]
    fn concat_exhaustive_index_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = seq(random(5, 3, &mut rng));
        let b = seq(random(5, 4, &mut rng));
        let out = concat_features(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(out.data().dim(), (5, 7));
        for t in 0..5 {
            for c in 0..7 {
                let expected = if c < 3 {
                    a.data()[[t, c]]
                } else {
                    b.data()[[t, c - 3]]
                };
                assert_eq!(out.data()[[t, c]].to_bits(), expected.to_bits());
            }
        }
    }

    #[test]
    fn concat_rejects_mismatch() {
        let a = seq(Array2::zeros((3, 2)));
        let b = seq(Array2::zeros((4, 2)));
        assert!(matches!(
            concat_features(&[a.clone(), b]),
            Err(Error::Shape(_))
        ));
        let c = EmbeddingSequence::new(Array2::zeros((3, 2)), 49.0, 0.0125).unwrap();
        assert!(matches!(concat_features(&[a, c]), Err(Error::Shape(_))));
    }

    #[test]
    fn average_cases() {
        let s = seq(array![[2.0f32]]);
        assert_eq!(average_features(std::slice::from_ref(&s)).unwrap(), s);
        let out = average_features(&[seq(array![[2.0f32]]), seq(array![[4.0f32]])]).unwrap();
        assert_eq!(out.data(), &array![[3.0f32]]);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let members: Vec<_> = (0..3).map(|_| seq(random(6, 5, &mut rng))).collect();
        let out = average_features(&members).unwrap();
        let expected = Array2::from_shape_fn((6, 5), |(t, c)| {
            let s: f64 = members.iter().map(|m| f64::from(m.data()[[t, c]])).sum();
            (s / 3.0) as f32
        });
        assert!(max_abs_diff(out.data(), &expected) < 1e-6);

        let wrong = seq(Array2::zeros((6, 4)));
        assert!(matches!(
            average_features(&[members[0].clone(), wrong]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn mean_pool_cases() {
        let constant = seq(Array2::from_shape_fn((4, 3), |(_, c)| c as f32 + 0.5));
        assert_eq!(mean_pool(&constant).values().to_vec(), vec![0.5, 1.5, 2.5]);
        let two = seq(array![[1.0f32, 3.0], [3.0, 5.0]]);
        assert_eq!(mean_pool(&two).values().to_vec(), vec![2.0, 4.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = seq(random(50, 12, &mut rng));
        let pooled = mean_pool(&s);
        for c in 0..12 {
            let m: f64 = (0..50).map(|t| f64::from(s.data()[[t, c]])).sum::<f64>() / 50.0;
            assert!((f64::from(pooled.values()[c]) - m).abs() < 1e-6);
        }
    }

    #[test]
    fn grouped_pool_k1_is_mean_pool() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let s = seq(random(17, 4, &mut rng));
        assert_eq!(grouped_pool(&s, 1).unwrap(), mean_pool(&s));
    }

    #[test]
    fn grouped_pool_pairs() {
        let s = seq(Array2::from_shape_fn((10, 2), |(t, c)| {
            (t / 2) as f32 * 10.0 + c as f32
        }));
        let out = grouped_pool(&s, 5).unwrap();
        assert_eq!(
            out.values().to_vec(),
            vec![0.0, 1.0, 10.0, 11.0, 20.0, 21.0, 30.0, 31.0, 40.0, 41.0]
        );
    }

    #[test]
    fn grouped_pool_uneven_partition() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let s = seq(random(7, 3, &mut rng));
        let out = grouped_pool(&s, 5).unwrap();
        // floor(g*7/5): 0,1,2,4,5,7
        let edges = [0usize, 1, 2, 4, 5, 7];
        for g in 0..5 {
            for c in 0..3 {
                let rows = edges[g]..edges[g + 1];
                let n = rows.len() as f64;
                let m: f64 = rows.map(|t| f64::from(s.data()[[t, c]])).sum::<f64>() / n;
                assert!((f64::from(out.values()[g * 3 + c]) - m).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn grouped_pool_more_groups_than_frames() {
        let s = seq(array![[1.0f32], [3.0]]);
        // bounds for T=2, k=5: [0,0) [0,0) [0,1) [1,1) [1,2)
        let out = grouped_pool(&s, 5).unwrap();
        assert_eq!(out.values().to_vec(), vec![1.0, 1.0, 1.0, 1.0, 3.0]);
        assert!(matches!(grouped_pool(&s, 0), Err(Error::Input(_))));
    }

    fn stack(layers: usize, t: usize, c: usize, rng: &mut ChaCha8Rng, rate: f64) -> LayerStack {
        LayerStack::new(
            (0..layers).map(|_| random(t, c, rng)).collect(),
            rate,
            0.0125,
        )
        .unwrap()
    }

    #[test]
    fn fuse_single_member_last_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let st = stack(3, 4, 2, &mut rng, 50.0);
        let map = BTreeMap::from([("a".to_string(), st.clone())]);
        let cfg = FusionConfig::concat(["a"]).with_aggregation(false);
        assert_eq!(fuse(&map, &cfg).unwrap(), st.last_layer());
    }

    #[test]
    fn fuse_average_matches_manual_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let a = stack(2, 9, 6, &mut rng, 50.0);
        let b = stack(3, 17, 4, &mut rng, 100.0);
        let map = BTreeMap::from([("a".to_string(), a.clone()), ("b".to_string(), b.clone())]);
        let cfg = FusionConfig::concat(["a", "b"]).with_combine(Combine::Average);
        let fused = fuse(&map, &cfg).unwrap();

        let ra = layer_aggregate(&a);
        let rb = resample(&layer_aggregate(&b), 9, 6)
            .unwrap()
            .with_timing(ra.frame_rate_hz(), ra.t_start_s())
            .unwrap();
        let manual = average_features(&[ra, rb]).unwrap();
        assert_eq!(fused, manual);
    }

    #[test]
    fn fuse_missing_member() {
        let cfg = FusionConfig::concat(["a"]);
        let err = fuse(&BTreeMap::new(), &cfg).unwrap_err();
        assert!(matches!(err, Error::Lookup(_)));
    }

    #[test]
    fn fuse_respects_explicit_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let a = stack(1, 9, 6, &mut rng, 50.0);
        let b = stack(1, 17, 4, &mut rng, 100.0);
        let map = BTreeMap::from([("a".to_string(), a), ("b".to_string(), b.clone())]);
        let cfg = FusionConfig::concat(["a", "b"]).with_reference("b");
        let fused = fuse(&map, &cfg).unwrap();
        assert_eq!(fused.data().dim(), (17, 8));
        assert_eq!(fused.frame_rate_hz(), b.frame_rate_hz());
    }

    #[test]
    fn config_validation() {
        assert!(FusionConfig::concat(Vec::<String>::new())
            .validate()
            .is_err());
        assert!(FusionConfig::concat(["a", "a"]).validate().is_err());
        assert!(FusionConfig::concat(["a"])
            .with_reference("z")
            .validate()
            .is_err());
        assert!(FusionConfig::concat(["a"]).grouped(0).validate().is_err());
        assert!(FusionConfig::concat(["a", "b"]).validate().is_ok());
    }

    #[test]
    fn scene_embed_modes() {
        let s = seq(Array2::from_elem((8, 3), 2.5));
        let mean = FusionConfig::concat(["a"]);
        assert_eq!(
            scene_embed(&s, &mean).unwrap().values().to_vec(),
            vec![2.5; 3]
        );
        let grouped = FusionConfig::concat(["a"]).grouped(1);
        assert_eq!(
            scene_embed(&s, &grouped).unwrap(),
            scene_embed(&s, &mean).unwrap()
        );
        let g5 = FusionConfig::concat(["a"]).grouped(5);
        assert_eq!(scene_embed(&s, &g5).unwrap().len(), 15);
        assert_eq!(scene_dim(3, &g5), 15);
    }
}
