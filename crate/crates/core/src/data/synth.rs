//! Synthetic skeleton clips whose label lives in the motion, not the pose.
//!
//! Class `k` (after `class_offset`) moves one joint group with one motion
//! family: family `k mod 3`, group `(k / 3) mod G`, frequency multiplier
//! `1 + k / (3G)`. Every motion offset is zero at frame 0, so the first frame
//! carries no label information.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{write_dataset, DatasetSplit, JointLayout, SkeletonSequence, DEFAULT_RESOLUTION};
use crate::error::{Error, Result};
use crate::kv::KeyValues;

/// Pixels per body unit when emitting 2D coordinates.
const PIXELS_PER_UNIT: f64 = 100.0;
const MOTION_RADIUS: f64 = 0.3;
const BASE_CYCLES: f64 = 2.0;
const MAX_GROUPS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MotionFamily {
    Circular,
    Linear,
    Oscillatory,
}

impl MotionFamily {
    pub fn of_class(k: usize) -> Self {
        [MotionFamily::Circular, MotionFamily::Linear, MotionFamily::Oscillatory][k % 3]
    }

    fn name(self) -> &'static str {
        match self {
            MotionFamily::Circular => "circular",
            MotionFamily::Linear => "linear",
            MotionFamily::Oscillatory => "oscillatory",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub val_samples_per_class: usize,
    pub frames: usize,
    pub layout: JointLayout,
    pub channels: usize,
    /// Standard deviation of per-coordinate noise, in body units.
    pub noise: f64,
    pub seed: u64,
    /// Shifts the generator's class index, giving disjoint but related
    /// class sets for transfer experiments.
    pub class_offset: usize,
}

const SPEC_KEYS: &[&str] = &[
    "num_classes",
    "samples_per_class",
    "val_samples_per_class",
    "frames",
    "layout",
    "channels",
    "noise",
    "seed",
    "class_offset",
];

impl SynthSpec {
    pub fn new(num_classes: usize, samples_per_class: usize, frames: usize, layout: JointLayout) -> Self {
        SynthSpec {
            num_classes,
            samples_per_class,
            val_samples_per_class: 0,
            frames,
            layout,
            channels: 2,
            noise: 0.0,
            seed: 0,
            class_offset: 0,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let kv = KeyValues::parse(text)?;
        kv.check_keys(SPEC_KEYS)?;
        let spec = SynthSpec {
            num_classes: kv.require("num_classes")?,
            samples_per_class: kv.require("samples_per_class")?,
            val_samples_per_class: kv.get_or("val_samples_per_class", 0)?,
            frames: kv.get_or("frames", 64)?,
            layout: JointLayout::resolve(kv.raw("layout").unwrap_or("posetics17"))?,
            channels: kv.get_or("channels", 2)?,
            noise: kv.get_or("noise", 0.0)?,
            seed: kv.get_or("seed", 0)?,
            class_offset: kv.get_or("class_offset", 0)?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.samples_per_class == 0 {
            return Err(Error::config(
                "synthetic spec needs at least one class and one sample per class",
            ));
        }
        if self.frames == 0 {
            return Err(Error::config("synthetic clips need at least one frame"));
        }
        if !matches!(self.channels, 2 | 3) {
            return Err(Error::config("synthetic channels must be 2 or 3"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::config("noise must be a finite non-negative number"));
        }
        Ok(())
    }

    /// Joint groups: non-center joints dealt round-robin into at most four groups.
    pub fn joint_groups(&self) -> Vec<Vec<usize>> {
        let center = self.layout.center_index;
        let movable: Vec<usize> = (0..self.layout.joints()).filter(|&j| j != center).collect();
        if movable.is_empty() {
            return vec![vec![center]];
        }
        let g = movable.len().min(MAX_GROUPS);
        (0..g)
            .map(|i| movable.iter().copied().skip(i).step_by(g).collect())
            .collect()
    }

    pub fn class_name(&self, k: usize) -> String {
        let global = self.class_offset + k;
        let g = self.joint_groups().len();
        format!(
            "{}-g{}-f{}",
            MotionFamily::of_class(global).name(),
            (global / 3) % g,
            1 + global / (3 * g)
        )
    }
}

/// Rest pose: each joint sits at a fixed offset from its parent.
fn rest_pose(layout: &JointLayout) -> Vec<[f64; 3]> {
    let parents = layout.parents();
    let mut pos = vec![None; layout.joints()];
    pos[layout.center_index] = Some([0.0; 3]);
    fn place(j: usize, parents: &[Option<usize>], pos: &mut Vec<Option<[f64; 3]>>) -> [f64; 3] {
        if let Some(p) = pos[j] {
            return p;
        }
        let parent = place(parents[j].expect("tree"), parents, pos);
        let angle = j as f64 * 2.399_963_229_728_653;
        let p = [
            parent[0] + 0.25 * angle.cos(),
            parent[1] + 0.25 * angle.sin(),
            parent[2] + 0.1 * (1.7 * angle).sin(),
        ];
        pos[j] = Some(p);
        p
    }
    (0..layout.joints()).map(|j| place(j, &parents, &mut pos)).collect()
}

fn motion(family: MotionFamily, t: usize, frames: usize, omega: f64, amp: f64, phase: f64) -> [f64; 3] {
    let r = amp * MOTION_RADIUS;
    match family {
        MotionFamily::Circular => [
            r * ((omega * t as f64 + phase).cos() - phase.cos()),
            r * ((omega * t as f64 + phase).sin() - phase.sin()),
            0.0,
        ],
        MotionFamily::Linear => {
            let s = 2.0 * r * t as f64 / (frames.max(2) - 1) as f64;
            [s * phase.cos(), s * phase.sin(), 0.0]
        }
        MotionFamily::Oscillatory => [r * ((omega * t as f64 + phase).sin() - phase.sin()), 0.0, 0.0],
    }
}

fn clip<R: Rng + ?Sized>(spec: &SynthSpec, id: String, k: usize, rng: &mut R) -> Result<SkeletonSequence> {
    let (t_len, c) = (spec.frames, spec.channels);
    let groups = spec.joint_groups();
    let global = spec.class_offset + k;
    let family = MotionFamily::of_class(global);
    let group = &groups[(global / 3) % groups.len()];
    let freq = 1.0 + (global / (3 * groups.len())) as f64;
    let omega = 2.0 * std::f64::consts::PI * BASE_CYCLES * freq / t_len as f64;

    let rest = rest_pose(&spec.layout);
    let unit = Normal::new(0.0, 1.0).expect("valid normal");
    let translation: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-0.3..0.3));
    let jitter: Vec<[f64; 3]> = rest
        .iter()
        .map(|_| std::array::from_fn(|_| 0.02 * unit.sample(rng)))
        .collect();
    let amp = rng.gen_range(0.8..1.2);
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);

    let v = rest.len();
    let mut data = Vec::with_capacity(t_len * v * c);
    for t in 0..t_len {
        let off = motion(family, t, t_len, omega, amp, phase);
        for j in 0..v {
            let moving = group.contains(&j);
            for a in 0..c {
                let mut x = rest[j][a] + jitter[j][a] + translation[a];
                if moving {
                    x += off[a];
                }
                if spec.noise > 0.0 {
                    x += spec.noise * unit.sample(rng);
                }
                data.push(if c == 2 {
                    let centre = if a == 0 {
                        DEFAULT_RESOLUTION[0]
                    } else {
                        DEFAULT_RESOLUTION[1]
                    } / 2.0;
                    (centre + PIXELS_PER_UNIT * x) as f32
                } else {
                    x as f32
                });
            }
        }
    }
    let mut seq = SkeletonSequence::new(id, k, t_len, v, c, vec![data])?;
    seq.fps = Some(30.0);
    if c == 2 {
        seq.resolution = Some(DEFAULT_RESOLUTION);
    }
    Ok(seq)
}

fn split<R: Rng + ?Sized>(spec: &SynthSpec, prefix: &str, per_class: usize, rng: &mut R) -> Result<DatasetSplit> {
    let mut sequences = Vec::with_capacity(spec.num_classes * per_class);
    for i in 0..per_class {
        for k in 0..spec.num_classes {
            sequences.push(clip(spec, format!("{prefix}{k:03}_{i:04}"), k, rng)?);
        }
    }
    DatasetSplit::new(sequences, (0..spec.num_classes).map(|k| spec.class_name(k)).collect())
}

/// Training split drawn from `rng`.
pub fn synth_generate<R: Rng + ?Sized>(spec: &SynthSpec, rng: &mut R) -> Result<DatasetSplit> {
    spec.validate()?;
    split(spec, "s", spec.samples_per_class, rng)
}

impl SynthSpec {
    /// Training split and, when requested, a validation split, both seeded
    /// from `seed`.
    pub fn generate(&self) -> Result<(DatasetSplit, Option<DatasetSplit>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let train = synth_generate(self, &mut rng)?;
        let val = if self.val_samples_per_class > 0 {
            Some(split(self, "v", self.val_samples_per_class, &mut rng)?)
        } else {
            None
        };
        Ok((train, val))
    }
}

/// Writes `train.jsonl`, optional `val.jsonl`, `labels.json` and
/// `layout.json` into `dir`.
pub fn write_synth(spec: &SynthSpec, dir: &Path) -> Result<()> {
    let (train, val) = spec.generate()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_dataset(&train, &dir.join("train.jsonl"))?;
    if let Some(val) = val {
        write_dataset(&val, &dir.join("val.jsonl"))?;
    }
    let layout_path = dir.join("layout.json");
    std::fs::write(&layout_path, spec.layout.to_json() + "\n").map_err(|e| Error::io(&layout_path, e))
}
