//! Pretrains on an 8-class synthetic source, then fits linear classifiers on
//! a related 4-class target over frozen pretrained and random features.

use unik::data::{prepare, JointLayout, Stream, SynthSpec};
use unik::tensor::SgdConfig;
use unik::train::{linear_probe, ProbeOptions, TrainConfig, Trainer};
use unik::Unik;

fn main() -> unik::Result<()> {
    let layout = JointLayout::posetics17();
    let mut source = SynthSpec::new(8, 16, 64, layout.clone());
    source.seed = 100;
    let (source, _) = source.generate()?;
    let mut target = SynthSpec::new(4, 8, 64, layout.clone());
    target.class_offset = 12;
    target.val_samples_per_class = 16;
    target.seed = 200;
    let (t_train, t_val) = target.generate()?;
    let t_train = prepare(&t_train, &layout, Stream::Joint)?;
    let t_val = prepare(t_val.as_ref().expect("requested"), &layout, Stream::Joint)?;

    let mut cfg = TrainConfig::new("synthetic", "posetics17");
    cfg.network.channels = vec![16, 16, 32, 32, 64, 64];
    cfg.network.dilations = vec![1, 2, 3, 1, 2, 3];
    cfg.network.kernel = 5;
    cfg.epochs = 30;
    cfg.decay_epochs = vec![20];
    cfg.lr0 = 0.05;
    let mut trainer = Trainer::with_data(cfg, layout, &source, None)?;
    let report = trainer.run()?;
    println!(
        "source train top1 {:.3}",
        report.curve.last().map_or(0.0, |r| r.train_top1)
    );

    let opts = ProbeOptions {
        epochs: 100,
        sgd: SgdConfig {
            lr: 0.1,
            ..SgdConfig::default()
        },
        ..ProbeOptions::default()
    };
    let random = Unik::new(trainer.model.config.clone(), 1000)?;
    for (name, backbone) in [("pretrained", &trainer.model), ("random", &random)] {
        let r = linear_probe(backbone, &t_train, Some(&t_val), &opts)?;
        let val = r.val.expect("validation split given");
        println!(
            "{name:<10} features: {} trainable, target val top1 {:.3}",
            r.trainable_params, val.top1
        );
    }
    Ok(())
}
