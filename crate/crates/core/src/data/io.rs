//! JSON Lines dataset files and the `labels.json` sidecar.
//!
//! One object per line:
//! `{"id": "...", "label": 3, "persons": [[[[x, y], ...V], ...T], ...M],
//!   "fps": 30, "resolution": [640, 480]}`.
//! A `null` joint or coordinate marks a missing detection.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::preprocess::impute_missing;
use super::{DatasetSplit, JointLayout, SkeletonSequence};
use crate::error::{Error, Result};

/// Resolution assumed for 2D clips that do not state one.
pub const DEFAULT_RESOLUTION: [f64; 2] = [640.0, 480.0];

pub const LABELS_FILE: &str = "labels.json";

/// One joint as written: `null` when missing, coordinates possibly `null`.
type RawJoint = Option<Vec<Option<f64>>>;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawClip {
    id: String,
    label: usize,
    persons: Vec<Vec<Vec<RawJoint>>>,
    #[serde(default)]
    fps: Option<f64>,
    #[serde(default)]
    resolution: Option<[f64; 2]>,
}

#[derive(Serialize)]
struct OutClip<'a> {
    id: &'a str,
    label: usize,
    persons: Vec<Vec<Vec<Vec<f64>>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    resolution: Option<[f64; 2]>,
}

fn sidecar(path: &Path) -> PathBuf {
    path.parent().unwrap_or(Path::new(".")).join(LABELS_FILE)
}

pub fn read_labels(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

pub fn write_labels(path: &Path, names: &[String]) -> Result<()> {
    let text = serde_json::to_string_pretty(names).expect("strings serialize");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Reads a JSONL split and its `labels.json` sidecar (when present; without
/// it the class count is inferred from the largest label).
pub fn parse_dataset(path: &Path, layout: &JointLayout) -> Result<DatasetSplit> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let labels_path = sidecar(path);
    let names = if labels_path.exists() {
        Some(read_labels(&labels_path)?)
    } else {
        None
    };
    parse_jsonl(&text, path, layout, names)
}

pub fn parse_jsonl(
    text: &str,
    path: &Path,
    layout: &JointLayout,
    class_names: Option<Vec<String>>,
) -> Result<DatasetSplit> {
    let fail = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut sequences = Vec::new();
    let mut lines = Vec::new();
    let mut channels = None;
    let mut seen = std::collections::HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let clip: RawClip = serde_json::from_str(raw).map_err(|e| fail(line, e.to_string()))?;
        let seq = convert(clip, layout, &mut channels).map_err(|m| fail(line, m))?;
        if !seen.insert(seq.id.clone()) {
            return Err(fail(line, format!("duplicate clip id `{}`", seq.id)));
        }
        if let Some(names) = &class_names {
            if seq.label >= names.len() {
                return Err(fail(
                    line,
                    format!("label {} but only {} classes", seq.label, names.len()),
                ));
            }
        }
        sequences.push(seq);
        lines.push(line);
    }
    let names = class_names.unwrap_or_else(|| {
        let n = sequences.iter().map(|s| s.label + 1).max().unwrap_or(0);
        (0..n).map(|k| format!("class_{k}")).collect()
    });
    DatasetSplit::new(sequences, names)
}

fn convert(
    clip: RawClip,
    layout: &JointLayout,
    channels: &mut Option<usize>,
) -> std::result::Result<SkeletonSequence, String> {
    let RawClip {
        id,
        label,
        persons,
        fps,
        resolution,
    } = clip;
    let frames = persons.first().map_or(0, Vec::len);
    if persons.is_empty() || frames == 0 {
        return Err(format!("clip `{id}` has no persons or no frames"));
    }
    let joints = layout.joints();
    let c = match *channels {
        Some(c) => c,
        None => {
            let c = persons
                .iter()
                .flatten()
                .flatten()
                .flatten()
                .map(Vec::len)
                .next()
                .ok_or_else(|| format!("clip `{id}` has no observed joint"))?;
            if !matches!(c, 2 | 3) {
                return Err(format!("coordinates must have 2 or 3 components, got {c}"));
            }
            *channels = Some(c);
            c
        }
    };
    let mut out = Vec::with_capacity(persons.len());
    for (m, person) in persons.into_iter().enumerate() {
        if person.len() != frames {
            return Err(format!("person {m} has {} frames, person 0 has {frames}", person.len()));
        }
        let mut data = Vec::with_capacity(frames * joints * c);
        for (t, frame) in person.into_iter().enumerate() {
            if frame.len() != joints {
                return Err(format!(
                    "person {m} frame {t} has {} joints, layout `{}` has {joints}",
                    frame.len(),
                    layout.name
                ));
            }
            for (v, joint) in frame.into_iter().enumerate() {
                match joint {
                    None => data.extend(std::iter::repeat_n(f32::NAN, c)),
                    Some(coords) => {
                        if coords.len() != c {
                            return Err(format!(
                                "joint {v} at frame {t} has {} coordinates, expected {c}",
                                coords.len()
                            ));
                        }
                        let missing = coords.iter().any(Option::is_none);
                        for x in coords {
                            let x = if missing { f32::NAN } else { x.unwrap() as f32 };
                            if !missing && !x.is_finite() {
                                return Err(format!("non-finite coordinate at person {m} frame {t} joint {v}"));
                            }
                            data.push(x);
                        }
                    }
                }
            }
        }
        impute_missing(&mut data, frames, joints, c, layout.center_index);
        out.push(data);
    }
    let mut seq = SkeletonSequence::new(id, label, frames, joints, c, out).map_err(|e| e.to_string())?;
    seq.fps = fps;
    seq.resolution = match (resolution, c) {
        (Some(r), _) => Some(r),
        (None, 2) => Some(DEFAULT_RESOLUTION),
        (None, _) => None,
    };
    Ok(seq)
}

/// One JSON object per clip; coordinates are written with enough digits to
/// re-parse bit-exactly.
pub fn write_jsonl(split: &DatasetSplit, path: &Path) -> Result<()> {
    let mut text = String::new();
    for s in &split.sequences {
        let (t, v, c) = (s.frames(), s.joints(), s.channels());
        let persons = s
            .persons()
            .iter()
            .map(|p| {
                (0..t)
                    .map(|ti| {
                        (0..v)
                            .map(|vi| p[(ti * v + vi) * c..][..c].iter().map(|&x| x as f64).collect())
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let clip = OutClip {
            id: &s.id,
            label: s.label,
            persons,
            fps: s.fps,
            resolution: s.resolution,
        };
        let line = serde_json::to_string(&clip).expect("clip serializes");
        writeln!(text, "{line}").expect("string write");
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// [`write_jsonl`] plus the `labels.json` sidecar next to it.
pub fn write_dataset(split: &DatasetSplit, path: &Path) -> Result<()> {
    write_jsonl(split, path)?;
    write_labels(&sidecar(path), &split.class_names)
}
