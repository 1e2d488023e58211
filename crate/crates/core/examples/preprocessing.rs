//! The preprocessing chain on one clip: joint remapping, centering, bones
//! and replay padding.

use unik::data::{center, compute_bones, pad_replay, remap_joints, JointLayout, JointMapping, SkeletonSequence};

fn main() -> unik::Result<()> {
    let (t, v, c) = (3, 25, 3);
    let data: Vec<f32> = (0..t * v * c)
        .map(|i| ((i % 75) as f32 * 0.1).sin() + (i / 75) as f32 * 0.05)
        .collect();
    let ntu = SkeletonSequence::new("demo", 0, t, v, c, vec![data])?;

    let posetics = JointLayout::posetics17();
    let seq = remap_joints(&ntu, &JointMapping::ntu25_to_posetics17())?;
    println!("remapped {} joints -> {}", ntu.joints(), seq.joints());

    let centered = center(&seq, &posetics)?;
    println!(
        "center joint after centering: {:?}",
        centered.joint(0, 0, posetics.center_index)
    );

    let bones = compute_bones(&seq, &posetics)?;
    for j in 0..4 {
        println!("bone {j}: {:?}", bones.joint(0, 0, j));
    }

    let padded = pad_replay(&seq, 8)?;
    let replayed: Vec<bool> = (0..8)
        .map(|f| padded.joint(0, f, 1) == seq.joint(0, f % t, 1))
        .collect();
    println!(
        "padded to {} frames, replay matches source: {replayed:?}",
        padded.frames()
    );
    Ok(())
}
