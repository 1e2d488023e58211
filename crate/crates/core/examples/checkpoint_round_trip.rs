//! Saves a checkpoint, reloads it bit-exactly and restores only its backbone
//! into a network with a different class count.

use unik::net::{load_pretrained_partial, LoadPolicy, TrainingMeta};
use unik::{NetworkConfig, Unik};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("unik_checkpoint_demo");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("model.ckpt");

    let model = Unik::<f32>::new(NetworkConfig::new(17, 2, 31), 3)?;
    model.save(&path, TrainingMeta { epoch: 12, seed: 3 })?;
    let (back, meta) = Unik::load_any(&path)?;
    let exact = model.store.ids().all(|id| {
        let (a, b) = (model.store.get(id).data(), back.store.get(id).data());
        a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
    });
    println!(
        "reloaded epoch {} seed {}, bitwise identical: {exact}",
        meta.epoch, meta.seed
    );

    let part = load_pretrained_partial(&path, &NetworkConfig::new(17, 2, 15), LoadPolicy::BackboneOnly, 0)?;
    println!("restored {} tensors, fresh: {:?}", part.restored.len(), part.fresh);
    let mut probe = part.model;
    probe.freeze_backbone(true);
    println!(
        "trainable parameters with a frozen backbone: {}",
        probe.store.trainable_count()
    );
    Ok(())
}
