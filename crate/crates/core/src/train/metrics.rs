//! Classification metrics and per-clip score tables.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    pub top1: f64,
    pub top5: f64,
    /// Unweighted mean over classes with at least one sample.
    pub mean_per_class: f64,
    /// `None` for classes without samples.
    pub per_class: Vec<Option<f64>>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub count: usize,
}

/// Whether `label` is among the `k` best scores. Ties rank lower indices first.
pub fn in_top_k(row: &[f64], label: usize, k: usize) -> bool {
    let s = row[label];
    let better = row
        .iter()
        .enumerate()
        .filter(|&(j, &v)| v > s || (v == s && j < label))
        .count();
    better < k
}

impl Metrics {
    /// Metrics of score rows (any monotone score; argmax is the prediction).
    pub fn from_scores(scores: &[Vec<f64>], labels: &[usize], num_classes: usize) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::data("cannot compute metrics of an empty split"));
        }
        if scores.len() != labels.len() {
            return Err(Error::data(format!(
                "{} score rows for {} labels",
                scores.len(),
                labels.len()
            )));
        }
        let mut confusion = vec![vec![0usize; num_classes]; num_classes];
        let (mut hit1, mut hit5) = (0usize, 0usize);
        for (row, &label) in scores.iter().zip(labels) {
            if row.len() != num_classes || label >= num_classes {
                return Err(Error::data(format!(
                    "score row of length {} / label {label} for {num_classes} classes",
                    row.len()
                )));
            }
            let pred = (0..num_classes).find(|&j| in_top_k(row, j, 1)).expect("non-empty row");
            confusion[label][pred] += 1;
            hit1 += usize::from(pred == label);
            hit5 += usize::from(in_top_k(row, label, 5));
        }
        let per_class: Vec<Option<f64>> = confusion
            .iter()
            .enumerate()
            .map(|(c, row)| {
                let n: usize = row.iter().sum();
                (n > 0).then(|| row[c] as f64 / n as f64)
            })
            .collect();
        let present: Vec<f64> = per_class.iter().flatten().copied().collect();
        let n = scores.len() as f64;
        Ok(Metrics {
            top1: hit1 as f64 / n,
            top5: hit5 as f64 / n,
            mean_per_class: present.iter().sum::<f64>() / present.len() as f64,
            per_class,
            confusion,
            count: scores.len(),
        })
    }
}

impl std::fmt::Display for Metrics {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "top1 {:.4}  top5 {:.4}  mean-per-class {:.4}  ({} clips)",
            self.top1, self.top5, self.mean_per_class, self.count
        )
    }
}

/// Softmax score rows keyed by clip id.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreTable {
    pub clip_ids: Vec<String>,
    pub scores: Vec<Vec<f64>>,
}

impl ScoreTable {
    pub fn num_classes(&self) -> usize {
        self.scores.first().map_or(0, Vec::len)
    }

    /// `clip_id,p_0,...,p_{C-1}` with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("clip_id");
        for k in 0..self.num_classes() {
            write!(out, ",p_{k}").expect("string write");
        }
        out.push('\n');
        for (id, row) in self.clip_ids.iter().zip(&self.scores) {
            out.push_str(id);
            for p in row {
                write!(out, ",{p}").expect("string write");
            }
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let fail = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| fail(1, "empty score file".into()))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.first() != Some(&"clip_id") || cols.len() < 2 {
            return Err(fail(1, "header must be `clip_id,p_0,...`".into()));
        }
        let classes = cols.len() - 1;
        let mut table = ScoreTable {
            clip_ids: Vec::new(),
            scores: Vec::new(),
        };
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            let id = fields.next().unwrap_or_default().to_string();
            let row = fields
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| fail(i + 1, e.to_string()))?;
            if row.len() != classes {
                return Err(fail(i + 1, format!("{} scores, header has {classes}", row.len())));
            }
            table.clip_ids.push(id);
            table.scores.push(row);
        }
        Ok(table)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Labels for each row from an id → label map.
    pub fn labels(&self, labels: &HashMap<String, usize>) -> Result<Vec<usize>> {
        self.clip_ids
            .iter()
            .map(|id| {
                labels
                    .get(id)
                    .copied()
                    .ok_or_else(|| Error::data(format!("no label for clip `{id}`")))
            })
            .collect()
    }
}

/// Per-clip sum of two softmax tables. Rows must cover the same clip ids
/// and each row must sum to 1 within `1e-4`.
pub fn fuse_scores(joint: &ScoreTable, bone: &ScoreTable) -> Result<ScoreTable> {
    let check = |t: &ScoreTable, name: &str| -> Result<()> {
        for (id, row) in t.clip_ids.iter().zip(&t.scores) {
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-4 || row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::data(format!(
                    "{name} scores of clip `{id}` are not a distribution (sum {s})"
                )));
            }
        }
        Ok(())
    };
    check(joint, "joint")?;
    check(bone, "bone")?;
    if joint.num_classes() != bone.num_classes() {
        return Err(Error::data(format!(
            "joint scores have {} classes, bone scores {}",
            joint.num_classes(),
            bone.num_classes()
        )));
    }
    let index: HashMap<&str, usize> = bone
        .clip_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    if let Some(id) = joint.clip_ids.iter().find(|id| !index.contains_key(id.as_str())) {
        return Err(Error::data(format!(
            "clip `{id}` is in the joint scores but not the bone scores"
        )));
    }
    let jset: std::collections::HashSet<&str> = joint.clip_ids.iter().map(String::as_str).collect();
    if let Some(id) = bone.clip_ids.iter().find(|id| !jset.contains(id.as_str())) {
        return Err(Error::data(format!(
            "clip `{id}` is in the bone scores but not the joint scores"
        )));
    }
    let scores = joint
        .clip_ids
        .iter()
        .zip(&joint.scores)
        .map(|(id, j)| {
            j.iter()
                .zip(&bone.scores[index[id.as_str()]])
                .map(|(a, b)| a + b)
                .collect()
        })
        .collect();
    Ok(ScoreTable {
        clip_ids: joint.clip_ids.clone(),
        scores,
    })
}

/// Fuses two score tables and scores the result against `labels`.
pub fn fuse_two_stream(
    joint: &ScoreTable,
    bone: &ScoreTable,
    labels: &HashMap<String, usize>,
) -> Result<(ScoreTable, Metrics)> {
    let fused = fuse_scores(joint, bone)?;
    let metrics = Metrics::from_scores(&fused.scores, &fused.labels(labels)?, fused.num_classes())?;
    Ok((fused, metrics))
}
