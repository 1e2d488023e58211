//! Joint layouts (bone trees) and joint remapping tables.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Joint names, body center and the bone tree rooted at the center.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointLayout {
    pub name: String,
    pub joint_names: Vec<String>,
    pub center_index: usize,
    /// `(child, parent)` pairs; every joint except the center is a child once.
    pub bone_pairs: Vec<(usize, usize)>,
}

impl JointLayout {
    pub fn new(name: &str, joint_names: &[&str], center_index: usize, bone_pairs: &[(usize, usize)]) -> Result<Self> {
        let layout = JointLayout {
            name: name.to_string(),
            joint_names: joint_names.iter().map(|s| s.to_string()).collect(),
            center_index,
            bone_pairs: bone_pairs.to_vec(),
        };
        layout.validate()?;
        Ok(layout)
    }

    pub fn joints(&self) -> usize {
        self.joint_names.len()
    }

    /// Parent of every joint; `None` for the center.
    pub fn parents(&self) -> Vec<Option<usize>> {
        let mut parents = vec![None; self.joints()];
        for &(c, p) in &self.bone_pairs {
            if c < parents.len() {
                parents[c] = Some(p);
            }
        }
        parents
    }

    /// Checks that the bone pairs form a tree rooted at the center.
    pub fn validate(&self) -> Result<()> {
        let v = self.joints();
        if v == 0 {
            return Err(Error::config(format!("layout `{}` has no joints", self.name)));
        }
        if self.center_index >= v {
            return Err(Error::config(format!(
                "layout `{}`: center {} out of range",
                self.name, self.center_index
            )));
        }
        let mut parent = vec![None; v];
        for &(c, p) in &self.bone_pairs {
            if c >= v || p >= v {
                return Err(Error::config(format!(
                    "layout `{}`: bone ({c}, {p}) out of range",
                    self.name
                )));
            }
            if c == self.center_index {
                return Err(Error::config(format!(
                    "layout `{}`: center joint has a parent",
                    self.name
                )));
            }
            if parent[c].replace(p).is_some() {
                return Err(Error::config(format!(
                    "layout `{}`: joint {c} has two parents",
                    self.name
                )));
            }
        }
        for start in 0..v {
            let (mut j, mut steps) = (start, 0);
            while j != self.center_index {
                j = parent[j].ok_or_else(|| {
                    Error::config(format!(
                        "layout `{}`: joint {start} is not connected to the center",
                        self.name
                    ))
                })?;
                steps += 1;
                if steps > v {
                    return Err(Error::config(format!(
                        "layout `{}`: bone cycle through joint {start}",
                        self.name
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let layout: JointLayout = serde_json::from_str(text).map_err(|e| Error::config(format!("layout json: {e}")))?;
        layout.validate()?;
        Ok(layout)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("layout serializes")
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Built-in layout name (`posetics17`, `ntu25`, `lcr13`, `genericN`) or a
    /// path to a layout file.
    pub fn resolve(spec: &str) -> Result<Self> {
        match spec {
            "posetics17" => Ok(Self::posetics17()),
            "ntu25" => Ok(Self::ntu25()),
            "lcr13" => Ok(Self::lcr13()),
            _ => match spec.strip_prefix("generic").and_then(|n| n.parse().ok()) {
                Some(v) => Self::generic(v),
                None => Self::read(Path::new(spec)),
            },
        }
    }

    /// 17-joint body: 13 detector joints plus interpolated hip, chest, neck
    /// and nose. Center is the hip.
    pub fn posetics17() -> Self {
        Self::new(
            "posetics17",
            &[
                "hip",
                "r_hip",
                "r_knee",
                "r_ankle",
                "l_hip",
                "l_knee",
                "l_ankle",
                "chest",
                "neck",
                "nose",
                "head",
                "l_shoulder",
                "l_elbow",
                "l_wrist",
                "r_shoulder",
                "r_elbow",
                "r_wrist",
            ],
            0,
            &[
                (1, 0),
                (2, 1),
                (3, 2),
                (4, 0),
                (5, 4),
                (6, 5),
                (7, 0),
                (8, 7),
                (9, 8),
                (10, 9),
                (11, 8),
                (12, 11),
                (13, 12),
                (14, 8),
                (15, 14),
                (16, 15),
            ],
        )
        .expect("valid built-in layout")
    }

    /// 13-joint detector output. Rooted at the right hip.
    pub fn lcr13() -> Self {
        Self::new(
            "lcr13",
            &[
                "r_ankle",
                "l_ankle",
                "r_knee",
                "l_knee",
                "r_hip",
                "l_hip",
                "r_wrist",
                "l_wrist",
                "r_elbow",
                "l_elbow",
                "r_shoulder",
                "l_shoulder",
                "head",
            ],
            4,
            &[
                (2, 4),
                (0, 2),
                (5, 4),
                (3, 5),
                (1, 3),
                (10, 4),
                (8, 10),
                (6, 8),
                (11, 5),
                (9, 11),
                (7, 9),
                (12, 10),
            ],
        )
        .expect("valid built-in layout")
    }

    /// 25-joint depth-sensor body, centered on the spine-shoulder joint.
    pub fn ntu25() -> Self {
        let one_based = [
            (1, 2),
            (2, 21),
            (3, 21),
            (4, 3),
            (5, 21),
            (6, 5),
            (7, 6),
            (8, 7),
            (9, 21),
            (10, 9),
            (11, 10),
            (12, 11),
            (13, 1),
            (14, 13),
            (15, 14),
            (16, 15),
            (17, 1),
            (18, 17),
            (19, 18),
            (20, 19),
            (22, 23),
            (23, 8),
            (24, 25),
            (25, 12),
        ];
        let pairs: Vec<_> = one_based.iter().map(|&(c, p)| (c - 1, p - 1)).collect();
        Self::new(
            "ntu25",
            &[
                "spine_base",
                "spine_mid",
                "neck",
                "head",
                "l_shoulder",
                "l_elbow",
                "l_wrist",
                "l_hand",
                "r_shoulder",
                "r_elbow",
                "r_wrist",
                "r_hand",
                "l_hip",
                "l_knee",
                "l_ankle",
                "l_foot",
                "r_hip",
                "r_knee",
                "r_ankle",
                "r_foot",
                "spine_shoulder",
                "l_hand_tip",
                "l_thumb",
                "r_hand_tip",
                "r_thumb",
            ],
            20,
            &pairs,
        )
        .expect("valid built-in layout")
    }

    /// Binary tree over `V` joints rooted at joint 0.
    pub fn generic(joints: usize) -> Result<Self> {
        let names: Vec<String> = (0..joints).map(|j| format!("j{j}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let pairs: Vec<_> = (1..joints).map(|j| (j, (j - 1) / 2)).collect();
        Self::new(&format!("generic{joints}"), &refs, 0, &pairs)
    }
}

/// Output joint `k` is `Σ w·source[j]` over `sources[k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct JointMapping {
    pub source_joints: usize,
    pub target: JointLayout,
    pub sources: Vec<Vec<(usize, f64)>>,
}

impl JointMapping {
    pub fn new(source_joints: usize, target: JointLayout, sources: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let m = JointMapping {
            source_joints,
            target,
            sources,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sources.len() != self.target.joints() {
            return Err(Error::config(format!(
                "mapping defines {} joints, target layout has {}",
                self.sources.len(),
                self.target.joints()
            )));
        }
        for (k, src) in self.sources.iter().enumerate() {
            if src.is_empty() {
                return Err(Error::config(format!("mapped joint {k} has no sources")));
            }
            if let Some(&(j, _)) = src.iter().find(|(j, _)| *j >= self.source_joints) {
                return Err(Error::config(format!("mapped joint {k}: source {j} out of range")));
            }
            let total: f64 = src.iter().map(|(_, w)| w).sum();
            if (total - 1.0).abs() > 1e-6 {
                return Err(Error::config(format!(
                    "mapped joint {k}: weights sum to {total}, expected 1"
                )));
            }
        }
        Ok(())
    }

    pub fn identity(layout: &JointLayout) -> Self {
        JointMapping {
            source_joints: layout.joints(),
            target: layout.clone(),
            sources: (0..layout.joints()).map(|j| vec![(j, 1.0)]).collect(),
        }
    }

    /// 13 detector joints to the 17-joint body.
    pub fn lcr13_to_posetics17() -> Self {
        let (ra, la, rk, lk, rh, lh, rw, lw, re, le, rs, ls, head) = (0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12);
        let one = |j| vec![(j, 1.0)];
        let sources = vec![
            vec![(rh, 0.5), (lh, 0.5)],
            one(rh),
            one(rk),
            one(ra),
            one(lh),
            one(lk),
            one(la),
            vec![(rh, 0.25), (lh, 0.25), (rs, 0.25), (ls, 0.25)],
            vec![(rs, 0.5), (ls, 0.5)],
            vec![(head, 0.5), (rs, 0.25), (ls, 0.25)],
            one(head),
            one(ls),
            one(le),
            one(lw),
            one(rs),
            one(re),
            one(rw),
        ];
        Self::new(13, JointLayout::posetics17(), sources).expect("valid built-in mapping")
    }

    /// Subset of the 25-joint depth-sensor body matching the 17-joint body.
    pub fn ntu25_to_posetics17() -> Self {
        let select = [0, 16, 17, 18, 12, 13, 14, 1, 20, 2, 3, 4, 5, 6, 8, 9, 10];
        let sources = select.iter().map(|&j| vec![(j, 1.0)]).collect();
        Self::new(25, JointLayout::posetics17(), sources).expect("valid built-in mapping")
    }
}
