mod common;

use common::equivariance::permute_joints;
use common::{random, rng, small_config};
use proptest::prelude::*;
use unik::data::{center, compute_bones, pad_replay, remap_joints, JointLayout, JointMapping, SkeletonSequence};
use unik::layers::Pass;
use unik::slsu::{Slsu, SlsuConfig};
use unik::tensor::{LrSchedule, NormMode, ParamKind, ParamStore, Sgd, SgdConfig};
use unik::tlsu::{Tlsu, TlsuConfig};
use unik::train::{fuse_scores, ScoreTable};
use unik::{Graph, Tensor, Unik};

fn finite_vec(len: usize, scale: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-scale..scale, len)
}

/// `(frames, joints, channels, data)` for one person.
fn clip_parts() -> impl Strategy<Value = (usize, usize, usize, Vec<f32>)> {
    (1usize..6, 2usize..7, prop_oneof![Just(2usize), Just(3usize)])
        .prop_flat_map(|(t, v, c)| prop::collection::vec(-5.0f32..5.0, t * v * c).prop_map(move |d| (t, v, c, d)))
}

fn clip((t, v, c, data): (usize, usize, usize, Vec<f32>)) -> SkeletonSequence {
    SkeletonSequence::new("p", 0, t, v, c, vec![data]).unwrap()
}

fn translate(seq: &SkeletonSequence, offsets: &[f32]) -> SkeletonSequence {
    let (v, c) = (seq.joints(), seq.channels());
    let mut data = seq.person(0).to_vec();
    for (t, frame) in data.chunks_exact_mut(v * c).enumerate() {
        for joint in frame.chunks_exact_mut(c) {
            for (k, x) in joint.iter_mut().enumerate() {
                *x += offsets[(t * c + k) % offsets.len()];
            }
        }
    }
    SkeletonSequence::new("p", 0, seq.frames(), v, c, vec![data]).unwrap()
}

fn close(a: &[f32], b: &[f32], tol: f32) -> bool {
    a.len() == b.len()
        && a.iter()
            .zip(b)
            .all(|(x, y)| (x - y).abs() <= tol * (1.0 + x.abs().max(y.abs())))
}

proptest! {
    #[test]
    fn softmax_rows_normalized_and_shift_invariant(
        rows in 1usize..5,
        data in finite_vec(20, 50.0),
        shift in -100.0f64..100.0,
    ) {
        let n = data.len() / rows;
        let x = Tensor::<f64>::from_f64([rows, n], &data[..rows * n]).unwrap();
        let shifted = Tensor::<f64>::from_f64([rows, n], &data[..rows * n].iter().map(|v| v + shift).collect::<Vec<_>>()).unwrap();
        let mut g = Graph::new();
        let (a, b) = (g.constant(x), g.constant(shifted));
        let (sa, sb) = (g.softmax_rows(a).unwrap(), g.softmax_rows(b).unwrap());
        let (pa, pb) = (g.value(sa).data().to_vec(), g.value(sb).data().to_vec());
        for row in pa.chunks(n) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
        for (p, q) in pa.iter().zip(&pb) {
            prop_assert!((p - q).abs() < 1e-9);
        }
    }

    #[test]
    fn batch_norm_train_mode_standardizes(
        batch in 8usize..12,
        channels in 1usize..4,
        seed in any::<u64>(),
        scale in 0.1f64..10.0,
        offset in -5.0f64..5.0,
    ) {
        let mut x = random::<f64>(&[batch, channels, 3], scale, &mut rng(seed));
        x.data_mut().iter_mut().for_each(|v| *v += offset);
        let mut g = Graph::new();
        let xv = g.constant(x);
        let gamma = g.constant(Tensor::ones([channels]));
        let beta = g.constant(Tensor::zeros([channels]));
        let ones = vec![1.0; channels];
        let zeros = vec![0.0; channels];
        let out = g.batch_norm(xv, gamma, beta, NormMode::Train, &zeros, &ones, 1e-5).unwrap().out;
        let y = g.value(out);
        let xs = g.value(xv).clone();
        for c in 0..channels {
            let pick = |t: &Tensor<f64>| -> Vec<f64> {
                (0..batch).flat_map(|b| (0..3).map(move |i| (b, i))).map(|(b, i)| t.at(&[b, c, i])).collect()
            };
            let moments = |v: &[f64]| {
                let m = v.iter().sum::<f64>() / v.len() as f64;
                (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64)
            };
            let (m, var) = moments(&pick(y));
            let (_, var_in) = moments(&pick(&xs));
            prop_assert!(m.abs() < 1e-4);
            // Exactly var/(var + eps); within 1e-4 of one whenever var >= 0.1.
            prop_assert!((var - var_in / (var_in + 1e-5)).abs() < 1e-9, "variance {}", var);
            if var_in >= 0.1 {
                prop_assert!((var - 1.0).abs() < 1e-4, "variance {}", var);
            }
        }
    }

    #[test]
    fn sgd_without_momentum_or_decay_is_plain_descent(
        w in finite_vec(6, 10.0),
        grad in finite_vec(6, 10.0),
        lr in 1e-4f64..1.0,
        steps in 1usize..4,
    ) {
        let mut store = ParamStore::<f64>::new();
        let id = store.insert("w", Tensor::from_f64([6], &w).unwrap(), ParamKind::Learnable);
        let mut opt = Sgd::new(SgdConfig { lr, momentum: 0.0, weight_decay: 0.0 }).unwrap();
        let mut expected = w.clone();
        for _ in 0..steps {
            store.get_mut(id).grad_mut().unwrap().copy_from_slice(&grad);
            opt.step(&mut store).unwrap();
            for (e, g) in expected.iter_mut().zip(&grad) {
                *e -= lr * g;
            }
        }
        prop_assert_eq!(store.get(id).data(), &expected[..]);
    }

    #[test]
    fn two_backward_sweeps_double_leaf_gradients(data in finite_vec(12, 3.0), seed in any::<u64>()) {
        let mut store = ParamStore::<f64>::new();
        let id = store.insert("x", Tensor::from_f64([3, 4], &data).unwrap(), ParamKind::Learnable);
        let r = random::<f64>(&[3, 4], 1.0, &mut rng(seed));
        let sweep = |store: &mut ParamStore<f64>| {
            let mut g = Graph::new();
            let x = g.param(store, id);
            let s = g.softmax_rows(x).unwrap();
            let rv = g.constant(r.clone());
            let p = g.mul(s, rv).unwrap();
            let y = g.sum(p);
            g.backward_into(y, store).unwrap();
        };
        sweep(&mut store);
        let once = store.get(id).grad().unwrap().to_vec();
        sweep(&mut store);
        let twice = store.get(id).grad().unwrap();
        for (a, b) in once.iter().zip(twice) {
            prop_assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn tensor_shape_must_cover_data(shape in prop::collection::vec(1usize..4, 1..4), extra in 1usize..3) {
        let n: usize = shape.iter().product();
        prop_assert!(Tensor::<f32>::new(shape.clone(), vec![0.0; n]).is_ok());
        prop_assert!(Tensor::<f32>::new(shape, vec![0.0; n + extra]).is_err());
    }

    #[test]
    fn lr_schedule_closed_form(
        lr0 in 1e-4f64..1.0,
        mut decays in prop::collection::btree_set(1usize..100, 0..4),
        factor in 0.05f64..0.9,
        epoch in 0usize..120,
    ) {
        let decays: Vec<usize> = std::mem::take(&mut decays).into_iter().collect();
        let lr = LrSchedule::step_decay(lr0, &decays, factor).lr_at(epoch);
        let k = decays.iter().filter(|&&d| d <= epoch).count();
        let expected = lr0 * factor.powi(k as i32);
        prop_assert!((lr - expected).abs() <= 1e-12 * expected);
    }

    #[test]
    fn centering_is_idempotent(parts in clip_parts()) {
        let seq = clip(parts);
        let layout = JointLayout::generic(seq.joints()).unwrap();
        let once = center(&seq, &layout).unwrap();
        let twice = center(&once, &layout).unwrap();
        prop_assert_eq!(once.person(0), twice.person(0));
    }

    #[test]
    fn replay_padding_cycles_frames(parts in clip_parts(), extra in 0usize..12) {
        let seq = clip(parts);
        let target = seq.frames() + extra;
        let padded = pad_replay(&seq, target).unwrap();
        prop_assert_eq!(padded.frames(), target);
        for k in 0..target {
            prop_assert_eq!(padded.frame(0, k), seq.frame(0, k % seq.frames()));
        }
    }

    #[test]
    fn bones_are_translation_invariant(parts in clip_parts(), offsets in prop::collection::vec(-20.0f32..20.0, 1..8)) {
        let seq = clip(parts);
        let layout = JointLayout::generic(seq.joints()).unwrap();
        let a = compute_bones(&seq, &layout).unwrap();
        let b = compute_bones(&translate(&seq, &offsets), &layout).unwrap();
        prop_assert!(close(a.person(0), b.person(0), 1e-5));
    }

    #[test]
    fn convex_remapping_commutes_with_translation(
        parts in clip_parts(),
        offsets in prop::collection::vec(-20.0f32..20.0, 1..8),
        picks in prop::collection::vec((0usize..100, 0usize..100, 0.0f64..1.0), 1..6),
    ) {
        let seq = clip(parts);
        let v = seq.joints();
        let sources: Vec<Vec<(usize, f64)>> = picks
            .iter()
            .map(|&(a, b, w)| if a % v == b % v { vec![(a % v, 1.0)] } else { vec![(a % v, w), (b % v, 1.0 - w)] })
            .collect();
        let target = JointLayout::generic(sources.len()).unwrap();
        let mapping = JointMapping::new(v, target, sources).unwrap();
        let a = translate(&remap_joints(&seq, &mapping).unwrap(), &offsets);
        let b = remap_joints(&translate(&seq, &offsets), &mapping).unwrap();
        prop_assert!(close(a.person(0), b.person(0), 1e-5));
    }

    #[test]
    fn self_fusion_equals_the_stream(rows in prop::collection::vec(finite_vec(4, 5.0), 1..6)) {
        let scores: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| {
                let e: Vec<f64> = r.iter().map(|v| v.exp()).collect();
                let s: f64 = e.iter().sum();
                e.iter().map(|v| v / s).collect()
            })
            .collect();
        let table = ScoreTable {
            clip_ids: (0..scores.len()).map(|i| format!("c{i}")).collect(),
            scores,
        };
        let fused = fuse_scores(&table, &table).unwrap();
        let labels: Vec<usize> = (0..table.scores.len()).map(|i| i % 4).collect();
        let single = unik::train::Metrics::from_scores(&table.scores, &labels, 4).unwrap();
        let both = unik::train::Metrics::from_scores(&fused.scores, &labels, 4).unwrap();
        prop_assert_eq!(single, both);
    }
}

fn slsu_fixture(attention: bool, seed: u64) -> (ParamStore<f64>, Slsu) {
    let mut store = ParamStore::new();
    let cfg = SlsuConfig {
        attention,
        ..SlsuConfig::new(3, 4)
    };
    let unit = Slsu::new(&mut store, "s", cfg, 5, &mut rng(seed)).unwrap();
    (store, unit)
}

fn run_slsu(store: &ParamStore<f64>, unit: &Slsu, x: &Tensor<f64>) -> Tensor<f64> {
    let mut pass = Pass::new(store, NormMode::Eval);
    let xv = pass.input(x.clone());
    let y = unit.forward(&mut pass, xv).unwrap();
    pass.graph.value(y).clone()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn attention_rows_are_distributions(seed in any::<u64>(), scale in 0.0f64..20.0, frames in 1usize..6) {
        let (store, unit) = slsu_fixture(true, seed);
        let x = random::<f64>(&[2, 3, frames, 5], scale.max(1e-9), &mut rng(seed ^ 1));
        let mut pass = Pass::new(&store, NormMode::Eval);
        let xv = pass.input(x);
        for h in 0..unit.heads.len() {
            let a = unit.attention_map(&mut pass, xv, h).unwrap();
            for row in pass.graph.value(a).data().chunks(5) {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
                prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
            }
        }
    }

    #[test]
    fn slsu_without_attention_is_linear(seed in any::<u64>(), alpha in -3.0f64..3.0, beta in -3.0f64..3.0) {
        let (store, unit) = slsu_fixture(false, seed);
        let x1 = random::<f64>(&[1, 3, 4, 5], 1.0, &mut rng(seed ^ 2));
        let x2 = random::<f64>(&[1, 3, 4, 5], 1.0, &mut rng(seed ^ 3));
        let mix: Vec<f64> = x1.data().iter().zip(x2.data()).map(|(a, b)| alpha * a + beta * b).collect();
        let xm = Tensor::from_f64(x1.shape().to_vec(), &mix).unwrap();
        let (y1, y2, ym) = (run_slsu(&store, &unit, &x1), run_slsu(&store, &unit, &x2), run_slsu(&store, &unit, &xm));
        for ((a, b), m) in y1.data().iter().zip(y2.data()).zip(ym.data()) {
            prop_assert!((alpha * a + beta * b - m).abs() < 1e-5);
        }
    }

    #[test]
    fn tlsu_commutes_with_joint_permutation(seed in any::<u64>(), perm in Just((0..6).collect::<Vec<usize>>()).prop_shuffle(), dilation in 1usize..4) {
        let mut store = ParamStore::<f64>::new();
        let unit = Tlsu::new(&mut store, "t", TlsuConfig::new(3, dilation), &mut rng(seed)).unwrap();
        let x = random::<f64>(&[1, 3, 7, 6], 1.0, &mut rng(seed ^ 4));
        let permute = |t: &Tensor<f64>| permute_joints(t, &perm);
        let run = |x: &Tensor<f64>| {
            let mut pass = Pass::new(&store, NormMode::Eval);
            let xv = pass.input(x.clone());
            let y = unit.forward(&mut pass, xv).unwrap();
            pass.graph.value(y).clone()
        };
        let a = permute(&run(&x));
        let b = run(&permute(&x));
        prop_assert!(a.max_abs_diff(&b) < 1e-5);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn network_shapes_propagate(frames in 4usize..20, joints in 1usize..8, classes in 1usize..6, batch in 1usize..3) {
        let model = Unik::<f32>::new(small_config(joints, classes), 3).unwrap();
        let x = random::<f32>(&[batch, 1, 2, frames, joints], 1.0, &mut rng(5));
        let logits = model.logits(&x).unwrap();
        prop_assert_eq!(logits.shape(), &[batch, classes][..]);
        prop_assert!(logits.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn eval_logits_do_not_depend_on_batch_mates(seed in any::<u64>(), batch in 2usize..4) {
        let model = Unik::<f32>::new(small_config(5, 3), seed).unwrap();
        let x = random::<f32>(&[batch, 1, 2, 8, 5], 1.0, &mut rng(seed ^ 5));
        let all = model.logits(&x).unwrap();
        let n = x.numel() / batch;
        for b in 0..batch {
            let one = Tensor::new([1, 1, 2, 8, 5], x.data()[b * n..(b + 1) * n].to_vec()).unwrap();
            let alone = model.logits(&one).unwrap();
            prop_assert_eq!(alone.data(), &all.data()[b * 3..(b + 1) * 3]);
        }
    }
}
