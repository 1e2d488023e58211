//! Training configuration files (`key = value`, one per line).

use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{JointLayout, Stream};
use crate::error::{Error, Result};
use crate::kv::{join, KeyValues};
use crate::net::{NetworkConfig, DEFAULT_CHANNELS, DEFAULT_DILATIONS};
use crate::tensor::{LrSchedule, SgdConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainMode {
    /// Random initialization.
    Scratch,
    /// Every tensor trainable, initialized from a checkpoint.
    Finetune,
    /// Frozen backbone from a checkpoint; only the classifier trains.
    Probe,
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scratch" => Ok(TrainMode::Scratch),
            "finetune" => Ok(TrainMode::Finetune),
            "probe" => Ok(TrainMode::Probe),
            _ => Err(Error::config(format!(
                "mode must be scratch, finetune or probe, got `{s}`"
            ))),
        }
    }
}

impl std::fmt::Display for TrainMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TrainMode::Scratch => "scratch",
            TrainMode::Finetune => "finetune",
            TrainMode::Probe => "probe",
        })
    }
}

/// Architecture keys that do not depend on the data.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSettings {
    pub channels: Vec<usize>,
    pub dilations: Vec<usize>,
    pub kernel: usize,
    pub heads: usize,
    pub tau: usize,
    pub persons: usize,
}

impl Default for NetworkSettings {
    fn default() -> Self {
        NetworkSettings {
            channels: DEFAULT_CHANNELS.to_vec(),
            dilations: DEFAULT_DILATIONS.to_vec(),
            kernel: 9,
            heads: 3,
            tau: 1,
            persons: 1,
        }
    }
}

impl NetworkSettings {
    pub fn network(&self, joints: usize, in_channels: usize, num_classes: usize) -> Result<NetworkConfig> {
        let cfg = NetworkConfig {
            channels: self.channels.clone(),
            dilations: self.dilations.clone(),
            kernel: self.kernel,
            heads: self.heads,
            tau: self.tau,
            joints,
            in_channels,
            num_classes,
            persons: self.persons,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub train_data: PathBuf,
    pub val_data: Option<PathBuf>,
    /// Built-in layout name or layout file.
    pub layout: String,
    pub stream: Stream,
    pub epochs: usize,
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
    pub batch_size: usize,
    pub t_sample: usize,
    pub seed: u64,
    pub mode: TrainMode,
    pub init_checkpoint: Option<PathBuf>,
    pub network: NetworkSettings,
    /// Optional checks against the data.
    pub num_classes: Option<usize>,
    pub in_channels: Option<usize>,
    /// Longest clip evaluated in one pass.
    pub max_eval_frames: usize,
    /// Where curves and checkpoints go; nothing is written when unset.
    pub out_dir: Option<PathBuf>,
}

pub const CONFIG_KEYS: &[&str] = &[
    "train_data",
    "val_data",
    "layout",
    "stream",
    "epochs",
    "lr0",
    "momentum",
    "weight_decay",
    "decay_epochs",
    "decay_factor",
    "batch_size",
    "t_sample",
    "seed",
    "mode",
    "init_checkpoint",
    "channels",
    "dilations",
    "kernel",
    "heads",
    "tau",
    "persons",
    "num_classes",
    "in_channels",
    "max_eval_frames",
    "out_dir",
];

impl TrainConfig {
    /// Defaults for everything except the data.
    pub fn new(train_data: impl Into<PathBuf>, layout: &str) -> Self {
        TrainConfig {
            train_data: train_data.into(),
            val_data: None,
            layout: layout.to_string(),
            stream: Stream::Joint,
            epochs: 50,
            lr0: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
            decay_epochs: vec![30, 40],
            decay_factor: 0.1,
            batch_size: 16,
            t_sample: 64,
            seed: 0,
            mode: TrainMode::Scratch,
            init_checkpoint: None,
            network: NetworkSettings::default(),
            num_classes: None,
            in_channels: None,
            max_eval_frames: 1200,
            out_dir: None,
        }
    }

    /// Relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let kv = KeyValues::parse(text)?;
        kv.check_keys(CONFIG_KEYS)?;
        let path = |key: &str| kv.raw(key).filter(|v| !v.is_empty()).map(|v| base.join(v));
        let train_data = path("train_data").ok_or_else(|| Error::config("missing required key `train_data`"))?;
        let mut cfg = TrainConfig::new(train_data, kv.raw("layout").unwrap_or("posetics17"));
        if let Some(l) = kv.raw("layout") {
            if !matches!(l, "posetics17" | "ntu25" | "lcr13") && !l.starts_with("generic") {
                cfg.layout = base.join(l).to_string_lossy().into_owned();
            }
        }
        let net = NetworkSettings::default();
        cfg.val_data = path("val_data");
        cfg.init_checkpoint = path("init_checkpoint");
        cfg.out_dir = path("out_dir");
        cfg.stream = kv.get_or("stream", cfg.stream)?;
        cfg.epochs = kv.get_or("epochs", cfg.epochs)?;
        cfg.lr0 = kv.get_or("lr0", cfg.lr0)?;
        cfg.momentum = kv.get_or("momentum", cfg.momentum)?;
        cfg.weight_decay = kv.get_or("weight_decay", cfg.weight_decay)?;
        cfg.decay_epochs = kv.list("decay_epochs")?.unwrap_or(cfg.decay_epochs);
        cfg.decay_factor = kv.get_or("decay_factor", cfg.decay_factor)?;
        cfg.batch_size = kv.get_or("batch_size", cfg.batch_size)?;
        cfg.t_sample = kv.get_or("t_sample", cfg.t_sample)?;
        cfg.seed = kv.get_or("seed", cfg.seed)?;
        cfg.mode = kv.get_or("mode", cfg.mode)?;
        cfg.network = NetworkSettings {
            channels: kv.list("channels")?.unwrap_or(net.channels),
            dilations: kv.list("dilations")?.unwrap_or(net.dilations),
            kernel: kv.get_or("kernel", net.kernel)?,
            heads: kv.get_or("heads", net.heads)?,
            tau: kv.get_or("tau", net.tau)?,
            persons: kv.get_or("persons", net.persons)?,
        };
        cfg.num_classes = kv.get("num_classes")?;
        cfg.in_channels = kv.get("in_channels")?;
        cfg.max_eval_frames = kv.get_or("max_eval_frames", cfg.max_eval_frames)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.decay_epochs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config("decay_epochs must be strictly increasing"));
        }
        if self.decay_epochs.iter().any(|&e| e >= self.epochs) {
            return Err(Error::config(format!(
                "decay_epochs {:?} must all be below epochs = {}",
                self.decay_epochs, self.epochs
            )));
        }
        if matches!(self.mode, TrainMode::Probe | TrainMode::Finetune) && self.init_checkpoint.is_none() {
            return Err(Error::config(format!("mode `{}` requires init_checkpoint", self.mode)));
        }
        if self.lr0.is_nan()
            || self.lr0 <= 0.0
            || !(0.0..1.0).contains(&self.momentum)
            || self.weight_decay.is_nan()
            || self.weight_decay < 0.0
        {
            return Err(Error::config("need lr0 > 0, momentum in [0, 1) and weight_decay >= 0"));
        }
        if self.decay_factor.is_nan() || self.decay_factor <= 0.0 {
            return Err(Error::config("decay_factor must be positive"));
        }
        if self.batch_size == 0 || self.t_sample == 0 || self.max_eval_frames < 4 {
            return Err(Error::config(
                "batch_size and t_sample must be >= 1, max_eval_frames >= 4",
            ));
        }
        if self.network.channels.len() != self.network.dilations.len() {
            return Err(Error::config("channels and dilations must have the same length"));
        }
        Ok(())
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule::step_decay(self.lr0, &self.decay_epochs, self.decay_factor)
    }

    pub fn sgd(&self) -> SgdConfig {
        SgdConfig {
            lr: self.lr0,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
        }
    }

    pub fn resolve_layout(&self) -> Result<JointLayout> {
        JointLayout::resolve(&self.layout)
    }

    /// Canonical text; parses back to the same configuration.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "train_data = {}\nlayout = {}\nstream = {}\nepochs = {}\nlr0 = {}\nmomentum = {}\nweight_decay = {}\n\
             decay_epochs = {}\ndecay_factor = {}\nbatch_size = {}\nt_sample = {}\nseed = {}\nmode = {}\n\
             channels = {}\ndilations = {}\nkernel = {}\nheads = {}\ntau = {}\npersons = {}\nmax_eval_frames = {}\n",
            self.train_data.display(),
            self.layout,
            self.stream,
            self.epochs,
            self.lr0,
            self.momentum,
            self.weight_decay,
            join(&self.decay_epochs),
            self.decay_factor,
            self.batch_size,
            self.t_sample,
            self.seed,
            self.mode,
            join(&self.network.channels),
            join(&self.network.dilations),
            self.network.kernel,
            self.network.heads,
            self.network.tau,
            self.network.persons,
            self.max_eval_frames,
        );
        for (k, v) in [
            ("val_data", &self.val_data),
            ("init_checkpoint", &self.init_checkpoint),
            ("out_dir", &self.out_dir),
        ] {
            if let Some(p) = v {
                s += &format!("{k} = {}\n", p.display());
            }
        }
        if let Some(n) = self.num_classes {
            s += &format!("num_classes = {n}\n");
        }
        if let Some(c) = self.in_channels {
            s += &format!("in_channels = {c}\n");
        }
        s
    }
}
