//! Skeleton clips, datasets, preprocessing and synthetic data.

mod io;
mod layout;
mod preprocess;
mod synth;

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use io::{parse_dataset, parse_jsonl, read_labels, write_dataset, write_jsonl, write_labels, DEFAULT_RESOLUTION};
pub use layout::{JointLayout, JointMapping};
pub use preprocess::{
    center, compute_bones, fit_length, normalize_center, pad_replay, remap_joints, sample_window, scale_to_unit,
};
pub use synth::{synth_generate, write_synth, MotionFamily, SynthSpec};

/// One labeled clip. Person arrays are `T×V×C`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonSequence {
    pub id: String,
    pub label: usize,
    frames: usize,
    joints: usize,
    channels: usize,
    persons: Vec<Vec<f32>>,
    pub fps: Option<f64>,
    /// Image `[width, height]` of 2D pixel coordinates.
    pub resolution: Option<[f64; 2]>,
}

impl SkeletonSequence {
    pub fn new(
        id: impl Into<String>,
        label: usize,
        frames: usize,
        joints: usize,
        channels: usize,
        persons: Vec<Vec<f32>>,
    ) -> Result<Self> {
        let id = id.into();
        if frames == 0 || joints == 0 || persons.is_empty() {
            return Err(Error::data(format!("clip `{id}`: needs T >= 1, V >= 1 and one person")));
        }
        if !matches!(channels, 2 | 3) {
            return Err(Error::data(format!(
                "clip `{id}`: coordinates must be 2D or 3D, got {channels}"
            )));
        }
        let n = frames * joints * channels;
        if let Some(p) = persons.iter().position(|p| p.len() != n) {
            return Err(Error::data(format!(
                "clip `{id}`: person {p} has {} values, expected {n}",
                persons[p].len()
            )));
        }
        if persons.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::data(format!("clip `{id}`: non-finite coordinate")));
        }
        Ok(SkeletonSequence {
            id,
            label,
            frames,
            joints,
            channels,
            persons,
            fps: None,
            resolution: None,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn num_persons(&self) -> usize {
        self.persons.len()
    }

    pub fn person(&self, m: usize) -> &[f32] {
        &self.persons[m]
    }

    pub fn persons(&self) -> &[Vec<f32>] {
        &self.persons
    }

    /// `V×C` values of one frame.
    pub fn frame(&self, m: usize, t: usize) -> &[f32] {
        let n = self.joints * self.channels;
        &self.persons[m][t * n..][..n]
    }

    /// Coordinates of one joint.
    pub fn joint(&self, m: usize, t: usize, v: usize) -> &[f32] {
        &self.frame(m, t)[v * self.channels..][..self.channels]
    }

    /// Same metadata, new coordinates.
    pub(crate) fn with_persons(&self, frames: usize, joints: usize, persons: Vec<Vec<f32>>) -> Self {
        debug_assert!(persons.iter().all(|p| p.len() == frames * joints * self.channels));
        SkeletonSequence {
            id: self.id.clone(),
            label: self.label,
            frames,
            joints,
            channels: self.channels,
            persons,
            fps: self.fps,
            resolution: self.resolution,
        }
    }

    /// Writes the clip into a `[M, C, T, V]` slot; extra persons are dropped
    /// and missing persons stay zero.
    pub fn write_into(&self, slot: &mut [f32], persons: usize) {
        let (t, v, c) = (self.frames, self.joints, self.channels);
        debug_assert_eq!(slot.len(), persons * c * t * v);
        slot.iter_mut().for_each(|x| *x = 0.0);
        for (m, data) in self.persons.iter().take(persons).enumerate() {
            let dst = &mut slot[m * c * t * v..][..c * t * v];
            for ti in 0..t {
                for vi in 0..v {
                    for ci in 0..c {
                        dst[(ci * t + ti) * v + vi] = data[(ti * v + vi) * c + ci];
                    }
                }
            }
        }
    }
}

/// `[B, M, C, T, V]` network input; every clip must share `T`, `V` and `C`.
pub fn batch_tensor(clips: &[&SkeletonSequence], persons: usize) -> Result<Tensor<f32>> {
    let first = clips.first().ok_or_else(|| Error::data("empty batch"))?;
    let (t, v, c) = (first.frames, first.joints, first.channels);
    if let Some(bad) = clips.iter().find(|s| (s.frames, s.joints, s.channels) != (t, v, c)) {
        return Err(Error::dim(format!(
            "clip `{}` is {}x{}x{}, batch is {t}x{v}x{c}",
            bad.id, bad.frames, bad.joints, bad.channels
        )));
    }
    let per = persons * c * t * v;
    let mut data = vec![0.0f32; clips.len() * per];
    for (clip, slot) in clips.iter().zip(data.chunks_exact_mut(per)) {
        clip.write_into(slot, persons);
    }
    Tensor::new(vec![clips.len(), persons, c, t, v], data)
}

/// Labeled clips plus the class vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub sequences: Vec<SkeletonSequence>,
    pub num_classes: usize,
    pub class_names: Vec<String>,
}

impl DatasetSplit {
    pub fn new(sequences: Vec<SkeletonSequence>, class_names: Vec<String>) -> Result<Self> {
        let split = DatasetSplit {
            num_classes: class_names.len(),
            sequences,
            class_names,
        };
        split.validate()?;
        Ok(split)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes != self.class_names.len() {
            return Err(Error::data("class name count differs from num_classes"));
        }
        if let Some(s) = self.sequences.iter().find(|s| s.label >= self.num_classes) {
            return Err(Error::data(format!(
                "clip `{}` has label {} but there are {} classes",
                s.id, s.label, self.num_classes
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.sequences.iter().map(|s| s.label).collect()
    }

    /// Coordinate dimensionality shared by every clip.
    pub fn channels(&self) -> Option<usize> {
        self.sequences.first().map(|s| s.channels)
    }

    pub fn joints(&self) -> Option<usize> {
        self.sequences.first().map(|s| s.joints)
    }

    pub fn max_persons(&self) -> usize {
        self.sequences.iter().map(|s| s.num_persons()).max().unwrap_or(0)
    }

    /// Applies `f` to every clip.
    pub fn map(&self, f: impl Fn(&SkeletonSequence) -> Result<SkeletonSequence>) -> Result<Self> {
        Ok(DatasetSplit {
            sequences: self.sequences.iter().map(f).collect::<Result<_>>()?,
            num_classes: self.num_classes,
            class_names: self.class_names.clone(),
        })
    }
}

/// Input representation fed to a network.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Joint,
    Bone,
}

impl FromStr for Stream {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(Stream::Joint),
            "bone" => Ok(Stream::Bone),
            _ => Err(Error::config(format!("stream must be `joint` or `bone`, got `{s}`"))),
        }
    }
}

impl std::fmt::Display for Stream {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stream::Joint => "joint",
            Stream::Bone => "bone",
        })
    }
}

/// Normalization, centering and optional bone derivation for a whole split.
pub fn prepare(split: &DatasetSplit, layout: &JointLayout, stream: Stream) -> Result<DatasetSplit> {
    split.map(|s| {
        if s.joints() != layout.joints() {
            return Err(Error::data(format!(
                "clip `{}` has {} joints, layout `{}` has {}",
                s.id,
                s.joints(),
                layout.name,
                layout.joints()
            )));
        }
        let s = normalize_center(s, layout)?;
        match stream {
            Stream::Joint => Ok(s),
            Stream::Bone => compute_bones(&s, layout),
        }
    })
}
