//! Finite-difference gradient checks. Each check is a plain function so the
//! acceptance runner can call them through [`CHECKS`].

pub mod common;

use common::{random, rng, tiny_config};
use unik::layers::Pass;
use unik::net::Block;
use unik::slsu::{Slsu, SlsuConfig};
use unik::tensor::gradcheck::{grad_check, grad_check_params, max_relative_error, ParamCheck};
use unik::tensor::{NormMode, ParamKind, ParamStore};
use unik::tlsu::{Tlsu, TlsuConfig};
use unik::{Graph, Result, Tensor, Unik, Var};

const EPS: f64 = 1e-3;
const OP_TOL: f64 = 1e-6;

/// Scalarizes `y` as `Σ y ⊙ r` with fixed random weights so that every
/// output element reaches the loss with a distinct coefficient.
fn weighted_sum(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let r = random::<f64>(g.shape(y), 1.0, &mut rng(seed));
    let r = g.constant(r);
    let p = g.mul(y, r)?;
    Ok(g.sum(p))
}

fn check<F>(name: &str, x: &Tensor<f64>, f: F)
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    let err = grad_check(|g, v| f(g, v).and_then(|y| weighted_sum(g, y, 99)), x, EPS).unwrap();
    assert!(err < OP_TOL, "{name} {:?}: relative error {err:.3e}", x.shape());
}

fn worst(checks: &[ParamCheck]) -> (&str, f64) {
    checks
        .iter()
        .map(|c| (c.name.as_str(), c.max_rel_error))
        .fold(("", 0.0), |a, b| if b.1 > a.1 { b } else { a })
}

pub fn grad_check_of_sum_is_exact() {
    let x = random::<f64>(&[3, 4], 1.0, &mut rng(0));
    let err = grad_check(|g, v| Ok(g.sum(v)), &x, EPS).unwrap();
    assert!(err < 1e-10, "{err}");
}

pub fn grad_check_of_softmax_sum_of_squares() {
    let x = random::<f64>(&[4, 6], 2.0, &mut rng(1));
    let err = grad_check(
        |g, v| {
            let s = g.softmax_rows(v)?;
            let sq = g.mul(s, s)?;
            Ok(g.sum(sq))
        },
        &x,
        EPS,
    )
    .unwrap();
    assert!(err < OP_TOL, "{err}");
}

pub fn relu() {
    for (i, shape) in [vec![7], vec![3, 4], vec![2, 3, 4, 5]].iter().enumerate() {
        check("relu", &random(shape, 1.0, &mut rng(i as u64)), |g, v| Ok(g.relu(v)));
    }
}

pub fn softmax_rows() {
    for (i, shape) in [vec![5], vec![3, 4], vec![2, 3, 6]].iter().enumerate() {
        check("softmax", &random(shape, 3.0, &mut rng(i as u64)), |g, v| {
            g.softmax_rows(v)
        });
    }
}

pub fn cross_entropy() {
    for (i, (b, c)) in [(1, 3), (4, 5), (6, 2)].into_iter().enumerate() {
        let labels: Vec<usize> = (0..b).map(|k| (k * 7 + 1) % c).collect();
        let x = random(&[b, c], 2.0, &mut rng(i as u64));
        let err = grad_check(|g, v| g.cross_entropy(v, &labels), &x, EPS).unwrap();
        assert!(err < OP_TOL, "cross_entropy {b}x{c}: {err:.3e}");
    }
}

pub fn matmul_both_operands() {
    for (i, (m, k, n)) in [(2, 3, 4), (1, 5, 1), (4, 4, 2)].into_iter().enumerate() {
        let a = random::<f64>(&[m, k], 1.0, &mut rng(i as u64));
        let b = random::<f64>(&[k, n], 1.0, &mut rng(10 + i as u64));
        check("matmul lhs", &a, |g, v| {
            let b = g.constant(b.clone());
            g.matmul(v, b)
        });
        check("matmul rhs", &b, |g, v| {
            let a = g.constant(a.clone());
            g.matmul(a, v)
        });
    }
}

pub fn embed_both_operands() {
    let cases = [([1, 2, 3, 4], 3), ([2, 3, 5, 2], 1), ([3, 1, 2, 6], 4)];
    for (i, (xs, c_out)) in cases.into_iter().enumerate() {
        let x = random::<f64>(&xs, 1.0, &mut rng(i as u64));
        let w = random::<f64>(&[c_out, xs[1]], 1.0, &mut rng(20 + i as u64));
        check("embed x", &x, |g, v| {
            let w = g.constant(w.clone());
            g.embed(v, w)
        });
        check("embed w", &w, |g, v| {
            let x = g.constant(x.clone());
            g.embed(x, v)
        });
    }
}

pub fn gram_both_operands() {
    for (i, shape) in [vec![1, 2, 3], vec![2, 3, 4, 5], vec![3, 2, 2, 4]].iter().enumerate() {
        let a = random::<f64>(shape, 1.0, &mut rng(i as u64));
        let b = random::<f64>(shape, 1.0, &mut rng(30 + i as u64));
        check("gram theta", &a, |g, v| {
            let b = g.constant(b.clone());
            g.gram(v, b)
        });
        check("gram phi", &b, |g, v| {
            let a = g.constant(a.clone());
            g.gram(a, v)
        });
    }
}

pub fn joint_mix_both_operands() {
    let cases = [
        ([1, 2, 3, 4], [1, 4, 4]),
        ([2, 3, 2, 5], [2, 5, 3]),
        ([3, 1, 4, 2], [1, 2, 6]),
    ];
    for (i, (xs, ms)) in cases.into_iter().enumerate() {
        let x = random::<f64>(&xs, 1.0, &mut rng(i as u64));
        let m = random::<f64>(&ms, 1.0, &mut rng(40 + i as u64));
        check("joint_mix x", &x, |g, v| {
            let m = g.constant(m.clone());
            g.joint_mix(v, m)
        });
        check("joint_mix m", &m, |g, v| {
            let x = g.constant(x.clone());
            g.joint_mix(x, v)
        });
    }
}

pub fn temporal_conv_both_operands() {
    // (x shape, c_out, kernel, dilation, stride)
    let cases = [
        ([1, 2, 7, 3], 3, 3, 1, 1),
        ([2, 3, 9, 2], 2, 3, 2, 2),
        ([1, 1, 12, 4], 2, 5, 3, 1),
    ];
    for (i, (xs, c_out, t, d, s)) in cases.into_iter().enumerate() {
        let x = random::<f64>(&xs, 1.0, &mut rng(i as u64));
        let w = random::<f64>(&[c_out, xs[1], t, 1], 1.0, &mut rng(50 + i as u64));
        check("temporal_conv x", &x, |g, v| {
            let w = g.constant(w.clone());
            g.temporal_conv(v, w, d, s)
        });
        check("temporal_conv w", &w, |g, v| {
            let x = g.constant(x.clone());
            g.temporal_conv(x, v, d, s)
        });
    }
}

pub fn batch_norm_all_inputs_both_modes() {
    for (i, shape) in [vec![4, 3], vec![2, 3, 5], vec![3, 2, 4, 3]].iter().enumerate() {
        let c = shape[1];
        let x = random::<f64>(shape, 2.0, &mut rng(i as u64));
        let gamma = random::<f64>(&[c], 1.0, &mut rng(60 + i as u64));
        let beta = random::<f64>(&[c], 1.0, &mut rng(70 + i as u64));
        let mean: Vec<f64> = (0..c).map(|k| 0.1 * k as f64).collect();
        let var: Vec<f64> = (0..c).map(|k| 0.5 + k as f64).collect();
        for mode in [NormMode::Train, NormMode::Eval] {
            let bn = |g: &mut Graph<f64>, x: Var, gm: Var, bt: Var| {
                g.batch_norm(x, gm, bt, mode, &mean, &var, 1e-5).map(|o| o.out)
            };
            check("batch_norm x", &x, |g, v| {
                let (gm, bt) = (g.constant(gamma.clone()), g.constant(beta.clone()));
                bn(g, v, gm, bt)
            });
            check("batch_norm gamma", &gamma, |g, v| {
                let (xv, bt) = (g.constant(x.clone()), g.constant(beta.clone()));
                bn(g, xv, v, bt)
            });
            check("batch_norm beta", &beta, |g, v| {
                let (xv, gm) = (g.constant(x.clone()), g.constant(gamma.clone()));
                bn(g, xv, gm, v)
            });
        }
    }
}

pub fn elementwise_and_reductions() {
    for (i, shape) in [vec![5], vec![2, 3], vec![2, 3, 4]].iter().enumerate() {
        let x = random::<f64>(shape, 1.0, &mut rng(i as u64));
        let other = random::<f64>(shape, 1.0, &mut rng(80 + i as u64));
        let suffix = random::<f64>(&shape[1..], 1.0, &mut rng(90 + i as u64));
        check("add", &x, |g, v| {
            let o = g.constant(other.clone());
            g.add(v, o)
        });
        check("mul", &x, |g, v| {
            let o = g.constant(other.clone());
            g.mul(o, v)
        });
        check("add_broadcast lhs", &x, |g, v| {
            let s = g.constant(suffix.clone());
            g.add_broadcast(v, s)
        });
        check("add_broadcast rhs", &suffix, |g, v| {
            let a = g.constant(x.clone());
            g.add_broadcast(a, v)
        });
        check("scale", &x, |g, v| Ok(g.scale(v, -1.7)));
        check("sum", &x, |g, v| Ok(g.sum(v)));
        check("mean", &x, |g, v| Ok(g.mean(v)));
        let n = x.numel();
        check("reshape", &x, |g, v| g.reshape(v, &[n]));
        for axis in 0..shape.len() {
            check("mean_axis", &x, |g, v| g.mean_axis(v, axis));
        }
    }
}

pub fn transpose_last2() {
    for (i, shape) in [vec![2, 3], vec![1, 4, 2], vec![2, 2, 3, 5]].iter().enumerate() {
        check("transpose", &random(shape, 1.0, &mut rng(i as u64)), |g, v| {
            g.transpose_last2(v)
        });
    }
}

pub fn window_unfold_and_reduce() {
    for (i, (shape, tau)) in [([1, 2, 5, 2], 3), ([2, 1, 4, 3], 2), ([1, 3, 6, 2], 6)]
        .into_iter()
        .enumerate()
    {
        let x = random::<f64>(&shape, 1.0, &mut rng(i as u64));
        check("window_unfold", &x, |g, v| g.window_unfold(v, tau));
        let mut wide = shape;
        wide[3] *= tau;
        let u = random::<f64>(&wide, 1.0, &mut rng(100 + i as u64));
        check("window_reduce", &u, |g, v| g.window_reduce(v, tau));
    }
}

fn learnable(store: &ParamStore<f64>) -> Vec<unik::tensor::ParamId> {
    store
        .ids()
        .filter(|&id| store.kind(id) == ParamKind::Learnable)
        .collect()
}

pub fn slsu_gradients_wrt_input_and_every_head_tensor() {
    for tau in [1, 3] {
        let mut store = ParamStore::<f64>::new();
        let cfg = SlsuConfig {
            tau,
            ..SlsuConfig::new(2, 4)
        };
        let unit = Slsu::new(&mut store, "s", cfg, 4, &mut rng(3)).unwrap();
        // One 2×6×4 clip, batch of one.
        let x = random::<f64>(&[1, 2, 6, 4], 1.0, &mut rng(4));
        let loss = |g: &mut Graph<f64>, store: &ParamStore<f64>, x: Var| {
            let mut pass = Pass::with_graph(store, NormMode::Train, std::mem::take(g));
            let y = unit.forward(&mut pass, x)?;
            *g = pass.finish().0;
            weighted_sum(g, y, 5)
        };
        let err = grad_check(|g, v| loss(g, &store, v), &x, EPS).unwrap();
        assert!(err < 1e-5, "tau {tau} input: {err:.3e}");
        let checks = grad_check_params(
            |g, s| {
                let xv = g.constant(x.clone());
                loss(g, s, xv)
            },
            &store,
            &learnable(&store),
            EPS,
        )
        .unwrap();
        assert_eq!(checks.len(), 4 * unit.heads.len() + 1);
        let (name, err) = worst(&checks);
        assert!(err < 1e-5, "tau {tau} {name}: {err:.3e}");
    }
}

pub fn tlsu_gradients() {
    for (dilation, stride) in [(1, 1), (3, 1), (2, 2)] {
        let mut store = ParamStore::<f64>::new();
        let cfg = TlsuConfig {
            stride,
            kernel: 5,
            ..TlsuConfig::new(3, dilation)
        };
        let unit = Tlsu::new(&mut store, "t", cfg, &mut rng(6)).unwrap();
        let x = random::<f64>(&[2, 3, 10, 4], 1.0, &mut rng(7));
        let loss = |g: &mut Graph<f64>, store: &ParamStore<f64>, x: Var| {
            let mut pass = Pass::with_graph(store, NormMode::Train, std::mem::take(g));
            let y = unit.forward(&mut pass, x)?;
            *g = pass.finish().0;
            weighted_sum(g, y, 8)
        };
        let err = grad_check(|g, v| loss(g, &store, v), &x, EPS).unwrap();
        assert!(err < 1e-5, "d {dilation} s {stride} input: {err:.3e}");
        let checks = grad_check_params(
            |g, s| {
                let xv = g.constant(x.clone());
                loss(g, s, xv)
            },
            &store,
            &learnable(&store),
            EPS,
        )
        .unwrap();
        let (name, err) = worst(&checks);
        assert!(err < 1e-5, "d {dilation} s {stride} {name}: {err:.3e}");
    }
}

/// A block on two 2×8×5 clips widening to 4 channels (projection residual).
fn block_fixture() -> (ParamStore<f64>, Block, Tensor<f64>) {
    let mut store = ParamStore::<f64>::new();
    let s = SlsuConfig::new(2, 4);
    let t = TlsuConfig {
        kernel: 3,
        ..TlsuConfig::new(4, 2)
    };
    let block = Block::new(&mut store, "b", s, t, 5, &mut rng(11)).unwrap();
    let x = random::<f64>(&[2, 2, 8, 5], 1.0, &mut rng(12));
    (store, block, x)
}

fn block_loss<T: unik::tensor::Real>(
    g: &mut Graph<T>,
    block: &Block,
    store: &ParamStore<T>,
    x: Var,
    mode: NormMode,
) -> Result<Var> {
    let mut pass = Pass::with_graph(store, mode, std::mem::take(g));
    let y = block.forward(&mut pass, x)?;
    *g = pass.finish().0;
    let n = g.shape(y).iter().product::<usize>();
    let w: Vec<f64> = (0..n).map(|i| ((i as f64) * 0.37).sin()).collect();
    let r = g.constant(Tensor::from_f64(g.shape(y).to_vec(), &w)?);
    let p = g.mul(y, r)?;
    Ok(g.sum(p))
}

pub fn block_gradients_at_64_bit() {
    let (store, block, x) = block_fixture();
    for mode in [NormMode::Train, NormMode::Eval] {
        let err = grad_check(|g, v| block_loss(g, &block, &store, v, mode), &x, EPS).unwrap();
        assert!(err < 1e-5, "{mode:?} input: {err:.3e}");
        let checks = grad_check_params(
            |g, s| {
                let xv = g.constant(x.clone());
                block_loss(g, &block, s, xv, mode)
            },
            &store,
            &learnable(&store),
            EPS,
        )
        .unwrap();
        let (name, err) = worst(&checks);
        assert!(err < 1e-5, "{mode:?} {name}: {err:.3e}");
    }
}

/// Analytic gradients computed in 32-bit against a 64-bit difference oracle.
pub fn block_gradients_at_32_bit() {
    let (store, block, x) = block_fixture();
    let ids = learnable(&store);
    let mut store32: ParamStore<f32> = store.cast();
    let mut g = Graph::<f32>::new();
    let xv = g.constant(x.cast());
    let y = block_loss(&mut g, &block, &store32, xv, NormMode::Train).unwrap();
    g.backward_into(y, &mut store32).unwrap();

    let mut base = store.clone();
    let mut g = Graph::<f64>::recording_relu_patterns();
    let xv = g.constant(x.clone());
    let y = block_loss(&mut g, &block, &base, xv, NormMode::Train).unwrap();
    g.backward_into(y, &mut base).unwrap();
    let patterns = g.into_relu_patterns();

    for &id in &ids {
        let original = store.get(id).clone();
        let mut probe = store.clone();
        let numeric = unik::tensor::gradcheck::central_differences(original.data(), EPS, |vals| {
            probe.set_value(id, &Tensor::from_f64(original.shape().to_vec(), vals)?)?;
            let mut g = Graph::with_relu_patterns(patterns.clone());
            let xv = g.constant(x.clone());
            let y = block_loss(&mut g, &block, &probe, xv, NormMode::Train)?;
            Ok(g.value(y).data()[0])
        })
        .unwrap();
        let analytic: Vec<f64> = store32.get(id).grad().unwrap().iter().map(|&v| v as f64).collect();
        let err = max_relative_error(&analytic, &numeric);
        assert!(err < 1e-4, "{}: {err:.3e}", store.name(id));
    }
}

/// Composed S-LSU → T-LSU graph, analytic gradients in 32-bit.
pub fn composed_units_at_32_bit() {
    let mut store = ParamStore::<f64>::new();
    let s = Slsu::new(&mut store, "s", SlsuConfig::new(2, 3), 4, &mut rng(13)).unwrap();
    let t = Tlsu::new(
        &mut store,
        "t",
        TlsuConfig {
            kernel: 3,
            ..TlsuConfig::new(3, 1)
        },
        &mut rng(14),
    )
    .unwrap();
    let x = random::<f64>(&[2, 2, 6, 4], 1.0, &mut rng(15));
    fn loss<T: unik::tensor::Real>(g: &mut Graph<T>, s: &Slsu, t: &Tlsu, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let mut pass = Pass::with_graph(store, NormMode::Train, std::mem::take(g));
        let y = s.forward(&mut pass, x)?;
        let y = t.forward(&mut pass, y)?;
        *g = pass.finish().0;
        let sq = g.mul(y, y)?;
        Ok(g.mean(sq))
    }
    let mut store32: ParamStore<f32> = store.cast();
    let mut g = Graph::<f32>::new();
    let xv = g.constant(x.cast());
    let y = loss(&mut g, &s, &t, &store32, xv).unwrap();
    g.backward_into(y, &mut store32).unwrap();
    for id in learnable(&store) {
        let original = store.get(id).clone();
        let mut probe = store.clone();
        let numeric = unik::tensor::gradcheck::central_differences(original.data(), EPS, |vals| {
            probe.set_value(id, &Tensor::from_f64(original.shape().to_vec(), vals)?)?;
            let mut g = Graph::new();
            let xv = g.constant(x.clone());
            let y = loss(&mut g, &s, &t, &probe, xv)?;
            Ok(g.value(y).data()[0])
        })
        .unwrap();
        let analytic: Vec<f64> = store32.get(id).grad().unwrap().iter().map(|&v| v as f64).collect();
        let err = max_relative_error(&analytic, &numeric);
        assert!(err < 1e-4, "{}: {err:.3e}", store.name(id));
    }
}

fn network_loss<'a>(
    model: &'a Unik<f64>,
    x: &Tensor<f64>,
    labels: &[usize],
    mode: NormMode,
) -> impl Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var> + 'a {
    let x = x.clone();
    let labels = labels.to_vec();
    move |g, store| {
        let mut pass = Pass::with_graph(store, mode, std::mem::take(g));
        let xv = pass.input(x.clone());
        let y = model.forward(&mut pass, xv)?;
        let loss = pass.graph.cross_entropy(y, &labels)?;
        *g = pass.finish().0;
        Ok(loss)
    }
}

pub fn tiny_network_every_parameter() {
    let model = Unik::<f64>::new(tiny_config(3), 1).unwrap();
    let x = random::<f64>(&[2, 1, 2, 12, 5], 1.0, &mut rng(16));
    for mode in [NormMode::Train, NormMode::Eval] {
        let checks = grad_check_params(
            network_loss(&model, &x, &[0, 2], mode),
            &model.store,
            &learnable(&model.store),
            2e-2,
        )
        .unwrap();
        let (name, err) = worst(&checks);
        assert!(err < 1e-5, "{mode:?} {name}: {err:.3e}");
    }
}

macro_rules! checks {
    ($($name:ident),* $(,)?) => {
        pub const CHECKS: &[(&str, fn())] = &[$((stringify!($name), $name)),*];

        mod tests {
            $(#[test]
            fn $name() {
                super::$name()
            })*
        }
    };
}

checks!(
    grad_check_of_sum_is_exact,
    grad_check_of_softmax_sum_of_squares,
    relu,
    softmax_rows,
    cross_entropy,
    matmul_both_operands,
    embed_both_operands,
    gram_both_operands,
    joint_mix_both_operands,
    temporal_conv_both_operands,
    batch_norm_all_inputs_both_modes,
    elementwise_and_reductions,
    transpose_last2,
    window_unfold_and_reduce,
    slsu_gradients_wrt_input_and_every_head_tensor,
    tlsu_gradients,
    block_gradients_at_64_bit,
    block_gradients_at_32_bit,
    composed_units_at_32_bit,
    tiny_network_every_parameter,
);
