//! Attention maps of a freshly initialized S-LSU on a synthetic clip: rows
//! are distributions over joints, near uniform at initialization and exactly
//! uniform for a zero input.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use unik::data::{batch_tensor, prepare, JointLayout, Stream, SynthSpec};
use unik::layers::Pass;
use unik::slsu::{Slsu, SlsuConfig};
use unik::tensor::{NormMode, ParamStore};
use unik::Tensor;

fn main() -> unik::Result<()> {
    let layout = JointLayout::posetics17();
    let (split, _) = SynthSpec::new(3, 1, 32, layout.clone()).generate()?;
    let prepared = prepare(&split, &layout, Stream::Joint)?;
    let x = batch_tensor(&[&prepared.sequences[0]], 1)?.cast::<f64>();
    let shape = x.shape();
    let x = x.reshaped([shape[0] * shape[1], shape[2], shape[3], shape[4]])?;

    let mut store = ParamStore::<f64>::new();
    let unit = Slsu::new(
        &mut store,
        "slsu",
        SlsuConfig::new(2, 16),
        layout.joints(),
        &mut ChaCha8Rng::seed_from_u64(0),
    )?;
    for (label, input) in [("clip", x.clone()), ("zeros", Tensor::zeros(x.shape().to_vec()))] {
        let mut pass = Pass::new(&store, NormMode::Eval);
        let xv = pass.input(input);
        for h in 0..unit.heads.len() {
            let a = unit.attention_map(&mut pass, xv, h)?;
            let map = pass.graph.value(a).data();
            let v = layout.joints();
            let worst = map
                .chunks(v)
                .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
                .fold(0.0, f64::max);
            let spread = map.iter().map(|p| (p * v as f64 - 1.0).abs()).fold(0.0, f64::max);
            println!(
                "{label} head {h}: worst row-sum error {worst:.1e}, max relative deviation from uniform {spread:.2e}"
            );
        }
    }
    Ok(())
}
