//! Binary checkpoint format.
//!
//! ```text
//! "UNIK" | u32 version | u32 fingerprint | u32 count |
//!   count × ( u32 name_len | name | u8 rank | rank × u32 extent | f32 values )
//! ```
//!
//! All integers and floats are little-endian. Training metadata and the
//! architecture text travel as ordinary tensors under the `meta.` prefix.

use std::path::Path;

use super::{NetworkConfig, Unik};
use crate::error::{Error, Result};
use crate::tensor::{ParamId, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"UNIK";
pub const CHECKPOINT_VERSION: u32 = 1;

const META_CONFIG: &str = "meta.config";
const META_EPOCH: &str = "meta.epoch";
const META_SEED: &str = "meta.seed";

/// Training metadata stored alongside the weights.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TrainingMeta {
    pub epoch: u32,
    pub seed: u64,
}

/// Parsed checkpoint: fingerprint plus named tensors in file order.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub fingerprint: u32,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::CorruptCheckpoint(format!("truncated while reading {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
}

/// Magic, version and fingerprint; no tensor is touched.
fn read_header(r: &mut Reader<'_>) -> Result<u32> {
    if r.bytes.len() < 4 {
        return Err(Error::CorruptCheckpoint("file shorter than the magic bytes".into()));
    }
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic);
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    r.u32("fingerprint")
}

fn read_tensors(r: &mut Reader<'_>) -> Result<Vec<(String, Tensor<f32>)>> {
    let count = r.u32("tensor count")? as usize;
    let mut tensors = Vec::with_capacity(count.min(4096));
    for i in 0..count {
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::CorruptCheckpoint(format!("tensor {i}: name is not UTF-8")))?
            .to_string();
        let rank = r.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("extent")? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &b| a.checked_mul(b))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::CorruptCheckpoint(format!("`{name}`: shape overflow")))?;
        let data = r
            .take(numel, &format!("values of `{name}`"))?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        tensors.push((name, Tensor::from_parts(shape, data)));
    }
    if r.pos != r.bytes.len() {
        return Err(Error::CorruptCheckpoint(format!(
            "{} trailing bytes",
            r.bytes.len() - r.pos
        )));
    }
    Ok(tensors)
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

impl Checkpoint {
    /// Every store entry plus the architecture text and `meta`.
    pub fn from_model(model: &Unik<f32>, meta: TrainingMeta) -> Self {
        let mut tensors: Vec<(String, Tensor<f32>)> = model
            .store
            .ids()
            .map(|id| (model.store.name(id).to_string(), model.store.get(id).value_only()))
            .collect();
        let text: Vec<f32> = model.config.to_text().bytes().map(f32::from).collect();
        tensors.push((META_CONFIG.into(), Tensor::from_parts(vec![text.len()], text)));
        tensors.push((
            META_EPOCH.into(),
            Tensor::from_parts(vec![1], vec![f32::from_bits(meta.epoch)]),
        ));
        let seed = vec![
            f32::from_bits(meta.seed as u32),
            f32::from_bits((meta.seed >> 32) as u32),
        ];
        tensors.push((META_SEED.into(), Tensor::from_parts(vec![2], seed)));
        Checkpoint {
            fingerprint: model.config.fingerprint(),
            tensors,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.fingerprint.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.rank() as u8);
            for &e in t.shape() {
                out.extend_from_slice(&(e as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let fingerprint = read_header(&mut r)?;
        let tensors = read_tensors(&mut r)?;
        Ok(Checkpoint { fingerprint, tensors })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }

    /// Reads the file only if its fingerprint equals `expected`; the check
    /// runs before any tensor is decoded.
    pub fn read_expecting(path: &Path, expected: u32) -> Result<Self> {
        let bytes = read_file(path)?;
        let mut r = Reader { bytes: &bytes, pos: 0 };
        let found = read_header(&mut r)?;
        if found != expected {
            return Err(Error::ArchitectureMismatch { expected, found });
        }
        let tensors = read_tensors(&mut r)?;
        Ok(Checkpoint {
            fingerprint: found,
            tensors,
        })
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Architecture stored in the file.
    pub fn config(&self) -> Result<NetworkConfig> {
        let t = self
            .tensor(META_CONFIG)
            .ok_or_else(|| Error::CorruptCheckpoint(format!("missing `{META_CONFIG}`")))?;
        let bytes: Vec<u8> = t.data().iter().map(|&v| v as u8).collect();
        let text = String::from_utf8(bytes).map_err(|_| Error::CorruptCheckpoint("config text is not UTF-8".into()))?;
        let cfg =
            NetworkConfig::from_text(&text).map_err(|e| Error::CorruptCheckpoint(format!("stored config: {e}")))?;
        if cfg.fingerprint() != self.fingerprint {
            return Err(Error::CorruptCheckpoint(
                "stored config does not match the fingerprint".into(),
            ));
        }
        Ok(cfg)
    }

    pub fn meta(&self) -> TrainingMeta {
        let epoch = self.tensor(META_EPOCH).map_or(0, |t| t.data()[0].to_bits());
        let seed = self.tensor(META_SEED).filter(|t| t.numel() == 2).map_or(0, |t| {
            t.data()[0].to_bits() as u64 | ((t.data()[1].to_bits() as u64) << 32)
        });
        TrainingMeta { epoch, seed }
    }

    fn restore(&self, model: &mut Unik<f32>, id: ParamId) -> Result<()> {
        let name = model.store.name(id).to_string();
        let t = self
            .tensor(&name)
            .ok_or_else(|| Error::CorruptCheckpoint(format!("missing tensor `{name}`")))?;
        model.store.set_value(id, t)
    }

    /// Rebuilds the full model described by the stored configuration.
    pub fn to_model(&self) -> Result<Unik<f32>> {
        let mut model = Unik::new(self.config()?, 0)?;
        for id in model.store.ids().collect::<Vec<_>>() {
            self.restore(&mut model, id)?;
        }
        Ok(model)
    }
}

impl Unik<f32> {
    pub fn save(&self, path: &Path, meta: TrainingMeta) -> Result<()> {
        Checkpoint::from_model(self, meta).write(path)
    }

    /// Loads a checkpoint that must match `config` exactly.
    pub fn load(path: &Path, config: &NetworkConfig) -> Result<(Self, TrainingMeta)> {
        let ckpt = Checkpoint::read_expecting(path, config.fingerprint())?;
        Ok((ckpt.to_model()?, ckpt.meta()))
    }

    /// Loads a checkpoint using the architecture stored inside it.
    pub fn load_any(path: &Path) -> Result<(Self, TrainingMeta)> {
        let ckpt = Checkpoint::read(path)?;
        Ok((ckpt.to_model()?, ckpt.meta()))
    }
}

/// What to restore from a pretrained checkpoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LoadPolicy {
    /// Every tensor; the architectures must match exactly.
    Full,
    /// Backbone tensors only; the classifier is freshly initialized.
    BackboneOnly,
}

#[derive(Clone, Debug)]
pub struct PartialLoad {
    pub model: Unik<f32>,
    pub restored: Vec<String>,
    pub fresh: Vec<String>,
    pub meta: TrainingMeta,
}

/// Builds a model for `config` and fills it from the checkpoint at `path`.
/// `seed` drives the initialization of tensors that are not restored.
pub fn load_pretrained_partial(
    path: &Path,
    config: &NetworkConfig,
    policy: LoadPolicy,
    seed: u64,
) -> Result<PartialLoad> {
    let ckpt = match policy {
        LoadPolicy::Full => Checkpoint::read_expecting(path, config.fingerprint())?,
        LoadPolicy::BackboneOnly => Checkpoint::read(path)?,
    };
    let mut model = Unik::new(config.clone(), seed)?;
    let (mut restored, mut fresh) = (Vec::new(), Vec::new());
    for id in model.store.ids().collect::<Vec<_>>() {
        let name = model.store.name(id).to_string();
        if policy == LoadPolicy::BackboneOnly && model.is_classifier(id) {
            fresh.push(name);
            continue;
        }
        ckpt.restore(&mut model, id)?;
        restored.push(name);
    }
    Ok(PartialLoad {
        model,
        restored,
        fresh,
        meta: ckpt.meta(),
    })
}
