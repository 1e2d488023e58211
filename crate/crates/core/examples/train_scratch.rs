//! Trains a compact network from scratch on synthetic clips and reports the
//! learning curve and validation metrics.

use unik::data::{JointLayout, SynthSpec};
use unik::train::{TrainConfig, Trainer};

fn main() -> unik::Result<()> {
    let layout = JointLayout::posetics17();
    let mut spec = SynthSpec::new(4, 16, 64, layout.clone());
    spec.val_samples_per_class = 8;
    spec.noise = 0.02;
    let (train, val) = spec.generate()?;

    let mut cfg = TrainConfig::new("synthetic", "posetics17");
    cfg.network.channels = vec![16, 16, 32, 32, 64, 64];
    cfg.network.dilations = vec![1, 2, 3, 1, 2, 3];
    cfg.network.kernel = 5;
    cfg.epochs = 20;
    cfg.decay_epochs = vec![14];
    cfg.lr0 = 0.05;
    let mut trainer = Trainer::with_data(cfg, layout, &train, val.as_ref())?;
    while !trainer.is_done() {
        let r = trainer.run_epoch()?;
        let val = r
            .val
            .as_ref()
            .map_or(String::new(), |m| format!("  val top1 {:.3}", m.top1));
        println!(
            "epoch {:>2}  lr {:.4}  loss {:.4}  train top1 {:.3}{val}",
            r.epoch, r.lr, r.train_loss, r.train_top1
        );
    }
    if let Some(m) = trainer.finish()?.val {
        println!("final validation: {m}");
    }
    Ok(())
}
