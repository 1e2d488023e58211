//! Pure per-clip transforms.

use rand::Rng;

use super::{JointLayout, JointMapping, SkeletonSequence};
use crate::error::{Error, Result};

/// Maps 2D pixel coordinates into `[−1, 1]` along the width, keeping the
/// aspect ratio: `x' = 2x/w − 1`, `y' = 2y/w − h/w`. 3D clips are unchanged.
pub fn scale_to_unit(seq: &SkeletonSequence) -> Result<SkeletonSequence> {
    if seq.channels() == 3 {
        return Ok(seq.clone());
    }
    let [w, h] = seq
        .resolution
        .ok_or_else(|| Error::data(format!("clip `{}`: 2D coordinates need a resolution", seq.id)))?;
    if !(w > 0.0 && h > 0.0) {
        return Err(Error::data(format!("clip `{}`: invalid resolution {w}x{h}", seq.id)));
    }
    let persons = seq
        .persons()
        .iter()
        .map(|p| {
            p.chunks_exact(2)
                .flat_map(|xy| {
                    let x = xy[0] as f64 * 2.0 / w - 1.0;
                    let y = xy[1] as f64 * 2.0 / w - h / w;
                    [x as f32, y as f32]
                })
                .collect()
        })
        .collect();
    Ok(seq.with_persons(seq.frames(), seq.joints(), persons))
}

/// Subtracts the center joint: per frame for 2D clips, the first frame's
/// center for 3D clips. Persons that are entirely zero stay zero.
pub fn center(seq: &SkeletonSequence, layout: &JointLayout) -> Result<SkeletonSequence> {
    check_layout(seq, layout)?;
    let (t, v, c) = (seq.frames(), seq.joints(), seq.channels());
    let ci = layout.center_index;
    let persons = seq
        .persons()
        .iter()
        .map(|p| {
            let mut out = p.clone();
            if p.iter().all(|&x| x == 0.0) {
                return out;
            }
            let origin0: Vec<f32> = p[ci * c..][..c].to_vec();
            for ti in 0..t {
                let frame = &mut out[ti * v * c..][..v * c];
                let origin = if c == 2 {
                    frame[ci * c..][..c].to_vec()
                } else {
                    origin0.clone()
                };
                for joint in frame.chunks_exact_mut(c) {
                    joint.iter_mut().zip(&origin).for_each(|(x, o)| *x -= o);
                }
            }
            out
        })
        .collect();
    Ok(seq.with_persons(t, v, persons))
}

/// [`scale_to_unit`] followed by [`center`].
pub fn normalize_center(seq: &SkeletonSequence, layout: &JointLayout) -> Result<SkeletonSequence> {
    center(&scale_to_unit(seq)?, layout)
}

fn check_layout(seq: &SkeletonSequence, layout: &JointLayout) -> Result<()> {
    if seq.joints() != layout.joints() {
        return Err(Error::data(format!(
            "clip `{}` has {} joints, layout `{}` has {}",
            seq.id,
            seq.joints(),
            layout.name,
            layout.joints()
        )));
    }
    Ok(())
}

/// Repeats frames cyclically: output frame `k` is input frame `k mod T`.
pub fn pad_replay(seq: &SkeletonSequence, target: usize) -> Result<SkeletonSequence> {
    let t = seq.frames();
    if target < t {
        return Err(Error::data(format!(
            "clip `{}`: cannot replay-pad {t} frames down to {target}",
            seq.id
        )));
    }
    let n = seq.joints() * seq.channels();
    let persons = seq
        .persons()
        .iter()
        .map(|p| {
            (0..target)
                .flat_map(|k| p[(k % t) * n..][..n].iter().copied())
                .collect()
        })
        .collect();
    Ok(seq.with_persons(target, seq.joints(), persons))
}

fn crop(seq: &SkeletonSequence, start: usize, len: usize) -> SkeletonSequence {
    let n = seq.joints() * seq.channels();
    let persons = seq
        .persons()
        .iter()
        .map(|p| p[start * n..(start + len) * n].to_vec())
        .collect();
    seq.with_persons(len, seq.joints(), persons)
}

/// Uniformly random contiguous window of `len` frames, or a replay-padded
/// clip when the clip is shorter.
pub fn sample_window<R: Rng + ?Sized>(seq: &SkeletonSequence, len: usize, rng: &mut R) -> Result<SkeletonSequence> {
    if len == 0 {
        return Err(Error::config("sample length must be >= 1"));
    }
    let t = seq.frames();
    if t < len {
        return pad_replay(seq, len);
    }
    let start = rng.gen_range(0..=t - len);
    Ok(crop(seq, start, len))
}

/// Keeps the first `max` frames and replay-pads clips shorter than `min`.
pub fn fit_length(seq: &SkeletonSequence, min: usize, max: usize) -> Result<SkeletonSequence> {
    let t = seq.frames();
    if t > max {
        Ok(crop(seq, 0, max))
    } else if t < min {
        pad_replay(seq, min)
    } else {
        Ok(seq.clone())
    }
}

/// Bone vectors `child − parent`, stored at the child joint; the center
/// holds zeros.
pub fn compute_bones(seq: &SkeletonSequence, layout: &JointLayout) -> Result<SkeletonSequence> {
    layout.validate()?;
    check_layout(seq, layout)?;
    let c = seq.channels();
    let parents = layout.parents();
    let persons = seq
        .persons()
        .iter()
        .map(|p| {
            let mut out = vec![0.0f32; p.len()];
            for (frame, dst) in p
                .chunks_exact(seq.joints() * c)
                .zip(out.chunks_exact_mut(seq.joints() * c))
            {
                for (j, parent) in parents.iter().enumerate() {
                    if let Some(pj) = *parent {
                        for k in 0..c {
                            dst[j * c + k] = frame[j * c + k] - frame[pj * c + k];
                        }
                    }
                }
            }
            out
        })
        .collect();
    Ok(seq.with_persons(seq.frames(), seq.joints(), persons))
}

/// Applies a joint mapping. Single-source joints are copied bit-exactly;
/// weighted joints are convex combinations computed in double precision.
pub fn remap_joints(seq: &SkeletonSequence, mapping: &JointMapping) -> Result<SkeletonSequence> {
    mapping.validate()?;
    if seq.joints() != mapping.source_joints {
        return Err(Error::data(format!(
            "clip `{}` has {} joints, mapping expects {}",
            seq.id,
            seq.joints(),
            mapping.source_joints
        )));
    }
    let c = seq.channels();
    let (v_in, v_out) = (seq.joints(), mapping.target.joints());
    let persons = seq
        .persons()
        .iter()
        .map(|p| {
            let mut out = Vec::with_capacity(seq.frames() * v_out * c);
            for frame in p.chunks_exact(v_in * c) {
                for src in &mapping.sources {
                    for k in 0..c {
                        out.push(match src.as_slice() {
                            [(j, w)] if *w == 1.0 => frame[j * c + k],
                            _ => src.iter().map(|&(j, w)| w * frame[j * c + k] as f64).sum::<f64>() as f32,
                        });
                    }
                }
            }
            out
        })
        .collect();
    Ok(seq.with_persons(seq.frames(), v_out, persons))
}

/// Fills `NaN` joints by linear interpolation between the nearest valid
/// frames of the same joint (holding the edge value past the ends), or with
/// the center joint when the joint is never observed.
pub(crate) fn impute_missing(data: &mut [f32], frames: usize, joints: usize, channels: usize, center: usize) {
    let idx = |t: usize, v: usize| (t * joints + v) * channels;
    let valid = |d: &[f32], t: usize, v: usize| d[idx(t, v)..][..channels].iter().all(|x| x.is_finite());
    let order: Vec<usize> = std::iter::once(center)
        .chain((0..joints).filter(|&v| v != center))
        .collect();
    for v in order {
        let observed: Vec<usize> = (0..frames).filter(|&t| valid(data, t, v)).collect();
        for t in 0..frames {
            if valid(data, t, v) {
                continue;
            }
            let prev = observed.iter().rev().find(|&&o| o < t).copied();
            let next = observed.iter().find(|&&o| o > t).copied();
            for k in 0..channels {
                data[idx(t, v) + k] = match (prev, next) {
                    (Some(a), Some(b)) => {
                        let w = (t - a) as f64 / (b - a) as f64;
                        let (xa, xb) = (data[idx(a, v) + k] as f64, data[idx(b, v) + k] as f64);
                        (xa + w * (xb - xa)) as f32
                    }
                    (Some(a), None) => data[idx(a, v) + k],
                    (None, Some(b)) => data[idx(b, v) + k],
                    (None, None) if v != center => data[idx(t, center) + k],
                    (None, None) => 0.0,
                };
            }
        }
    }
}
