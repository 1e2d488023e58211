use unik::layers::Pass;
use unik::slsu::{Slsu, SlsuConfig};
use unik::tensor::{NormMode, ParamStore};
use unik::Tensor;

use super::{random, rng};

pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

/// `out[..., v] = t[..., perm[v]]` on the last axis.
pub fn permute_joints(t: &Tensor<f64>, perm: &[usize]) -> Tensor<f64> {
    let v = perm.len();
    let data: Vec<f64> = t
        .data()
        .chunks(v)
        .flat_map(|row| perm.iter().map(move |&p| row[p]))
        .collect();
    Tensor::new(t.shape().to_vec(), data).unwrap()
}

/// Running the unit on `P(x)` with every `W` conjugated reproduces `P(y)`.
pub fn slsu_conjugation_error(joints: usize) -> f64 {
    let mut store = ParamStore::<f64>::new();
    let unit = Slsu::new(&mut store, "s", SlsuConfig::new(3, 4), joints, &mut rng(21)).unwrap();
    let x = random::<f64>(&[2, 3, 5, joints], 1.0, &mut rng(22));
    let run = |store: &ParamStore<f64>, x: &Tensor<f64>| {
        let mut pass = Pass::new(store, NormMode::Eval);
        let xv = pass.input(x.clone());
        let y = unit.forward(&mut pass, xv).unwrap();
        pass.graph.value(y).clone()
    };
    let y = run(&store, &x);
    let mut worst = 0.0f64;
    for perm in permutations(joints) {
        let mut conj = store.clone();
        for head in &unit.heads {
            let w = store.get(head.w);
            let mut pw = w.clone();
            for i in 0..joints {
                for j in 0..joints {
                    let dst = pw.offset(&[i, j]);
                    pw.data_mut()[dst] = w.at(&[perm[i], perm[j]]);
                }
            }
            conj.set_value(head.w, &pw).unwrap();
        }
        let py = run(&conj, &permute_joints(&x, &perm));
        worst = worst.max(py.max_abs_diff(&permute_joints(&y, &perm)));
    }
    worst
}
