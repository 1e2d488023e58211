//! Joint and bone streams trained separately, fused by summing softmax scores.

use unik::data::{prepare, JointLayout, Stream, SynthSpec};
use unik::train::{fuse_scores, Metrics, TrainConfig, Trainer};

fn main() -> unik::Result<()> {
    let layout = JointLayout::posetics17();
    let mut spec = SynthSpec::new(4, 16, 64, layout.clone());
    spec.val_samples_per_class = 16;
    spec.noise = 0.15;
    spec.seed = 1;
    let (train, val) = spec.generate()?;
    let val = val.expect("requested");

    let mut scores = Vec::new();
    for stream in [Stream::Joint, Stream::Bone] {
        let mut cfg = TrainConfig::new("synthetic", "posetics17");
        cfg.network.channels = vec![16, 16, 32, 32, 64, 64];
        cfg.network.dilations = vec![1, 2, 3, 1, 2, 3];
        cfg.network.kernel = 5;
        cfg.stream = stream;
        cfg.epochs = 30;
        cfg.decay_epochs = vec![20];
        cfg.lr0 = 0.05;
        let mut trainer = Trainer::with_data(cfg, layout.clone(), &train, None)?;
        trainer.run()?;
        let (m, s) = trainer.evaluate(&prepare(&val, &layout, stream)?)?;
        println!("{stream:?}: {m}");
        scores.push(s);
    }
    let fused = fuse_scores(&scores[0], &scores[1])?;
    println!("fused: {}", Metrics::from_scores(&fused.scores, &val.labels(), 4)?);
    Ok(())
}
