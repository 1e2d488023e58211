//! Writes a synthetic dataset and reads it back.

use unik::data::{parse_dataset, write_synth, JointLayout, SynthSpec};

fn main() -> unik::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "synth_out".into());
    let out = std::path::Path::new(&out);
    let mut spec = SynthSpec::new(4, 16, 64, JointLayout::posetics17());
    spec.val_samples_per_class = 4;
    spec.noise = 0.02;
    spec.seed = 7;
    write_synth(&spec, out)?;
    let train = parse_dataset(&out.join("train.jsonl"), &spec.layout)?;
    println!("wrote {} training clips to {}", train.len(), out.display());
    for (k, name) in train.class_names.iter().enumerate() {
        println!("  class {k}: {name}");
    }
    Ok(())
}
