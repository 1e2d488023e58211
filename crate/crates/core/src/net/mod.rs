//! Full network: input normalization, K spatial/temporal blocks with
//! residuals, global average pooling, person pooling and a linear classifier.

mod checkpoint;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kv::{join, KeyValues};
use crate::layers::{apply_updates, uniform_bound, uniform_tensor, BatchNorm, Pass, NEGATIVE_SLOPE};
use crate::slsu::{default_embed_channels, Slsu, SlsuConfig};
use crate::tensor::{NormMode, ParamId, ParamKind, ParamStore, Real, Sgd, Tensor, Var};
use crate::tlsu::{Tlsu, TlsuConfig};

pub use checkpoint::{load_pretrained_partial, Checkpoint, LoadPolicy, PartialLoad, TrainingMeta, CHECKPOINT_VERSION};

pub const DEFAULT_CHANNELS: [usize; 10] = [64, 64, 64, 64, 128, 128, 128, 256, 256, 256];
pub const DEFAULT_DILATIONS: [usize; 10] = [1, 3, 3, 3, 3, 1, 1, 1, 1, 1];

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    /// Output channels per block; its length is the block count K.
    pub channels: Vec<usize>,
    pub dilations: Vec<usize>,
    pub kernel: usize,
    pub heads: usize,
    pub tau: usize,
    pub joints: usize,
    pub in_channels: usize,
    pub num_classes: usize,
    pub persons: usize,
}

impl NetworkConfig {
    /// Default ten-block architecture.
    pub fn new(joints: usize, in_channels: usize, num_classes: usize) -> Self {
        NetworkConfig {
            channels: DEFAULT_CHANNELS.to_vec(),
            dilations: DEFAULT_DILATIONS.to_vec(),
            kernel: 9,
            heads: 3,
            tau: 1,
            joints,
            in_channels,
            num_classes,
            persons: 1,
        }
    }

    pub fn blocks(&self) -> usize {
        self.channels.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.channels.last().copied().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() {
            return Err(Error::config("network needs at least one block"));
        }
        if self.channels.len() != self.dilations.len() {
            return Err(Error::config(format!(
                "{} channel entries but {} dilations",
                self.channels.len(),
                self.dilations.len()
            )));
        }
        if self.channels.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::config("channel schedule must be non-decreasing"));
        }
        if self.channels.contains(&0) {
            return Err(Error::config("channel counts must be >= 1"));
        }
        if self.joints == 0 || self.num_classes == 0 || self.persons == 0 {
            return Err(Error::config("joints, num_classes and persons must be >= 1"));
        }
        if !matches!(self.in_channels, 2 | 3) {
            return Err(Error::config(format!(
                "in_channels must be 2 or 3, got {}",
                self.in_channels
            )));
        }
        if self.heads == 0 || self.tau == 0 {
            return Err(Error::config("heads and tau must be >= 1"));
        }
        TlsuConfig {
            kernel: self.kernel,
            dilation: 1,
            stride: 1,
            channels: 1,
        }
        .validate()?;
        if self.dilations.contains(&0) {
            return Err(Error::config("dilations must be >= 1"));
        }
        Ok(())
    }

    /// Temporal stride per block: 2 where the channel count grows, else 1.
    pub fn strides(&self) -> Vec<usize> {
        (0..self.channels.len())
            .map(|i| {
                if i > 0 && self.channels[i] > self.channels[i - 1] {
                    2
                } else {
                    1
                }
            })
            .collect()
    }

    /// Block input channel counts.
    pub fn block_inputs(&self) -> Vec<usize> {
        std::iter::once(self.in_channels)
            .chain(self.channels.iter().copied())
            .take(self.channels.len())
            .collect()
    }

    /// Canonical `key = value` text; also the fingerprint input.
    pub fn to_text(&self) -> String {
        format!(
            "channels = {}\ndilations = {}\nkernel = {}\nheads = {}\ntau = {}\njoints = {}\nin_channels = {}\nnum_classes = {}\npersons = {}\n",
            join(&self.channels),
            join(&self.dilations),
            self.kernel,
            self.heads,
            self.tau,
            self.joints,
            self.in_channels,
            self.num_classes,
            self.persons
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let kv = KeyValues::parse(text)?;
        let cfg = NetworkConfig {
            channels: kv.list("channels")?.ok_or_else(|| Error::config("missing channels"))?,
            dilations: kv
                .list("dilations")?
                .ok_or_else(|| Error::config("missing dilations"))?,
            kernel: kv.require("kernel")?,
            heads: kv.require("heads")?,
            tau: kv.require("tau")?,
            joints: kv.require("joints")?,
            in_channels: kv.require("in_channels")?,
            num_classes: kv.require("num_classes")?,
            persons: kv.require("persons")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// 32-bit FNV-1a hash of [`NetworkConfig::to_text`].
    pub fn fingerprint(&self) -> u32 {
        self.to_text()
            .bytes()
            .fold(0x811c_9dc5u32, |h, b| (h ^ b as u32).wrapping_mul(0x0100_0193))
    }

    fn slsu_config(&self, block: usize) -> SlsuConfig {
        let c_in = self.block_inputs()[block];
        let c_out = self.channels[block];
        SlsuConfig {
            heads: self.heads,
            tau: self.tau,
            c_in,
            c_out,
            c_embed: default_embed_channels(c_out),
            negative_slope: NEGATIVE_SLOPE,
            attention: true,
            residual: true,
        }
    }

    fn tlsu_config(&self, block: usize) -> TlsuConfig {
        TlsuConfig {
            kernel: self.kernel,
            dilation: self.dilations[block],
            stride: self.strides()[block],
            channels: self.channels[block],
        }
    }
}

/// Learnable parameter totals (running statistics excluded).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamCount {
    pub input_norm: usize,
    pub blocks: Vec<usize>,
    pub classifier: usize,
}

impl ParamCount {
    pub fn backbone(&self) -> usize {
        self.input_norm + self.blocks.iter().sum::<usize>()
    }

    pub fn total(&self) -> usize {
        self.backbone() + self.classifier
    }
}

/// Dense layer `m→n` with bias.
pub fn linear_param_count(inputs: usize, outputs: usize) -> usize {
    inputs * outputs + outputs
}

pub fn count_params(cfg: &NetworkConfig) -> Result<ParamCount> {
    cfg.validate()?;
    let inputs = cfg.block_inputs();
    let strides = cfg.strides();
    let blocks = (0..cfg.blocks())
        .map(|i| {
            let c = cfg.channels[i];
            let residual = if inputs[i] != c || strides[i] != 1 {
                c * inputs[i]
            } else {
                0
            };
            Slsu::param_count(&cfg.slsu_config(i), cfg.joints)
                + Tlsu::param_count(&cfg.tlsu_config(i))
                + 4 * c
                + residual
        })
        .collect();
    Ok(ParamCount {
        input_norm: 2 * cfg.in_channels * cfg.joints,
        blocks,
        classifier: linear_param_count(cfg.feature_dim(), cfg.num_classes),
    })
}

/// Residual path of a block.
#[derive(Clone, Debug)]
pub enum BlockResidual {
    Identity,
    /// Bias-free 1×1 projection `[C_out, C_in, 1, 1]` applied with the
    /// block's temporal stride.
    Projection {
        weight: ParamId,
        stride: usize,
    },
}

/// `relu(BN(T-LSU(BN(S-LSU(x)))) + R(x))`
#[derive(Clone, Debug)]
pub struct Block {
    pub slsu: Slsu,
    pub slsu_norm: BatchNorm,
    pub tlsu: Tlsu,
    pub tlsu_norm: BatchNorm,
    pub residual: BlockResidual,
}

impl Block {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        prefix: &str,
        slsu: SlsuConfig,
        tlsu: TlsuConfig,
        joints: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let (c_in, c_out, stride) = (slsu.c_in, slsu.c_out, tlsu.stride);
        if tlsu.channels != c_out {
            return Err(Error::config("T-LSU width must equal S-LSU output width"));
        }
        let s = Slsu::new(store, &format!("{prefix}.slsu"), slsu, joints, rng)?;
        let slsu_norm = BatchNorm::new(store, &format!("{prefix}.slsu_bn"), c_out);
        let t = Tlsu::new(store, &format!("{prefix}.tlsu"), tlsu, rng)?;
        let tlsu_norm = BatchNorm::new(store, &format!("{prefix}.tlsu_bn"), c_out);
        let residual = if c_in == c_out && stride == 1 {
            BlockResidual::Identity
        } else {
            let w = uniform_tensor(&[c_out, c_in, 1, 1], uniform_bound(c_in, NEGATIVE_SLOPE), rng);
            BlockResidual::Projection {
                weight: store.insert(format!("{prefix}.residual"), w, ParamKind::Learnable),
                stride,
            }
        };
        Ok(Block {
            slsu: s,
            slsu_norm,
            tlsu: t,
            tlsu_norm,
            residual,
        })
    }

    pub fn forward<T: Real>(&self, pass: &mut Pass<'_, T>, x: Var) -> Result<Var> {
        let s = self.slsu.forward(pass, x)?;
        let s = self.slsu_norm.forward(pass, s)?;
        let t = self.tlsu.forward(pass, s)?;
        let t = self.tlsu_norm.forward(pass, t)?;
        let r = match &self.residual {
            BlockResidual::Identity => x,
            BlockResidual::Projection { weight, stride } => {
                let w = pass.param(*weight);
                pass.graph.temporal_conv(x, w, 1, *stride)?
            }
        };
        let sum = pass.graph.add(t, r)?;
        Ok(pass.graph.relu(sum))
    }
}

pub const CLASSIFIER_WEIGHT: &str = "fc.weight";
pub const CLASSIFIER_BIAS: &str = "fc.bias";

/// The assembled network together with its parameters.
#[derive(Clone, Debug)]
pub struct Unik<T: Real = f32> {
    pub config: NetworkConfig,
    pub store: ParamStore<T>,
    pub input_norm: BatchNorm,
    pub blocks: Vec<Block>,
    pub fc_weight: ParamId,
    pub fc_bias: ParamId,
}

/// Loss and correct-prediction count of one optimization step.
#[derive(Clone, Copy, Debug)]
pub struct StepStats {
    pub loss: f64,
    pub correct: usize,
}

impl<T: Real> Unik<T> {
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mut blocks = Vec::with_capacity(config.blocks());
        for i in 0..config.blocks() {
            blocks.push(Block::new(
                &mut store,
                &format!("blocks.{i}"),
                config.slsu_config(i),
                config.tlsu_config(i),
                config.joints,
                &mut rng,
            )?);
        }
        let input_norm = BatchNorm::new(&mut store, "input_bn", config.in_channels * config.joints);
        let (fc_weight, fc_bias) = Self::insert_classifier(&mut store, &config, &mut rng);
        Ok(Unik {
            config,
            store,
            input_norm,
            blocks,
            fc_weight,
            fc_bias,
        })
    }

    fn insert_classifier(
        store: &mut ParamStore<T>,
        config: &NetworkConfig,
        rng: &mut ChaCha8Rng,
    ) -> (ParamId, ParamId) {
        let (f, n) = (config.feature_dim(), config.num_classes);
        let bound = uniform_bound(f, NEGATIVE_SLOPE);
        (
            store.insert(
                CLASSIFIER_WEIGHT,
                uniform_tensor(&[f, n], bound, rng),
                ParamKind::Learnable,
            ),
            store.insert(CLASSIFIER_BIAS, uniform_tensor(&[n], bound, rng), ParamKind::Learnable),
        )
    }

    pub fn is_classifier(&self, id: ParamId) -> bool {
        id == self.fc_weight || id == self.fc_bias
    }

    pub fn backbone_ids(&self) -> Vec<ParamId> {
        self.store.ids().filter(|&id| !self.is_classifier(id)).collect()
    }

    /// Freezes or unfreezes every backbone tensor.
    pub fn freeze_backbone(&mut self, frozen: bool) {
        for id in self.backbone_ids() {
            if self.store.kind(id) == ParamKind::Learnable {
                self.store.set_frozen(id, frozen);
            }
        }
    }

    /// Pooled `[B, F]` features of a `[B, M, C, T, V]` batch.
    pub fn features(&self, pass: &mut Pass<'_, T>, x: Var) -> Result<Var> {
        let cfg = &self.config;
        let shape = pass.graph.shape(x).to_vec();
        if shape.len() != 5
            || shape[1] != cfg.persons
            || shape[2] != cfg.in_channels
            || shape[4] != cfg.joints
            || shape[3] == 0
        {
            return Err(Error::dim(format!(
                "network expects [B, {}, {}, T, {}], got {shape:?}",
                cfg.persons, cfg.in_channels, cfg.joints
            )));
        }
        let (b, m, c, t, v) = (shape[0], shape[1], shape[2], shape[3], shape[4]);
        let g = &mut pass.graph;
        let h = g.reshape(x, &[b * m, c, t, v])?;
        let h = g.transpose_last2(h)?;
        let h = g.reshape(h, &[b * m, c * v, t])?;
        let h = self.input_norm.forward(pass, h)?;
        let g = &mut pass.graph;
        let h = g.reshape(h, &[b * m, c, v, t])?;
        let mut h = g.transpose_last2(h)?;
        for block in &self.blocks {
            h = block.forward(pass, h)?;
        }
        let g = &mut pass.graph;
        let s = g.shape(h).to_vec();
        let h = g.reshape(h, &[b * m, s[1], s[2] * s[3]])?;
        let h = g.mean_axis(h, 2)?;
        let h = g.reshape(h, &[b, m, s[1]])?;
        g.mean_axis(h, 1)
    }

    /// `[B, F]` features to `[B, num_classes]` logits.
    pub fn classify(&self, pass: &mut Pass<'_, T>, features: Var) -> Result<Var> {
        let w = pass.param(self.fc_weight);
        let bias = pass.param(self.fc_bias);
        let z = pass.graph.matmul(features, w)?;
        pass.graph.add_broadcast(z, bias)
    }

    pub fn forward(&self, pass: &mut Pass<'_, T>, x: Var) -> Result<Var> {
        let f = self.features(pass, x)?;
        self.classify(pass, f)
    }

    /// Eval-mode logits of a `[B, M, C, T, V]` batch.
    pub fn logits(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let mut pass = Pass::new(&self.store, NormMode::Eval);
        let x = pass.input(input.value_only());
        let y = self.forward(&mut pass, x)?;
        Ok(pass.graph.value(y).value_only())
    }

    /// Eval-mode pooled features.
    pub fn extract_features(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let mut pass = Pass::new(&self.store, NormMode::Eval);
        let x = pass.input(input.value_only());
        let y = self.features(&mut pass, x)?;
        Ok(pass.graph.value(y).value_only())
    }

    /// One SGD step on cross-entropy. `mode` selects batch or running
    /// statistics; with `Eval` the running statistics are left untouched.
    pub fn train_step(
        &mut self,
        input: &Tensor<T>,
        labels: &[usize],
        opt: &mut Sgd<T>,
        mode: NormMode,
    ) -> Result<StepStats> {
        self.store.zero_grad();
        let (graph, updates, loss, logits) = {
            let mut pass = Pass::new(&self.store, mode);
            let x = pass.input(input.value_only());
            let logits = self.forward(&mut pass, x)?;
            let loss = pass.graph.cross_entropy(logits, labels)?;
            let (graph, updates) = pass.finish();
            (graph, updates, loss, logits)
        };
        graph.backward_into(loss, &mut self.store)?;
        apply_updates(&mut self.store, updates);
        opt.step(&mut self.store)?;
        let n = self.config.num_classes;
        let correct = graph
            .value(logits)
            .data()
            .chunks_exact(n)
            .zip(labels)
            .filter(|(row, &l)| argmax(row) == l)
            .count();
        Ok(StepStats {
            loss: graph.value(loss).data()[0].to_f64_lossy(),
            correct,
        })
    }

    /// Replaces the classifier with a freshly initialized one for
    /// `num_classes` outputs.
    pub fn reset_classifier(&mut self, num_classes: usize, seed: u64) -> Result<()> {
        let mut config = self.config.clone();
        config.num_classes = num_classes;
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (f, n) = (config.feature_dim(), num_classes);
        let bound = uniform_bound(f, NEGATIVE_SLOPE);
        // Rebuild the store so the classifier keeps its trailing position.
        let mut store = ParamStore::new();
        for id in self.backbone_ids() {
            let nid = store.insert(
                self.store.name(id),
                self.store.get(id).value_only(),
                self.store.kind(id),
            );
            store.set_frozen(nid, self.store.is_frozen(id));
        }
        self.fc_weight = store.insert(
            CLASSIFIER_WEIGHT,
            uniform_tensor(&[f, n], bound, &mut rng),
            ParamKind::Learnable,
        );
        self.fc_bias = store.insert(
            CLASSIFIER_BIAS,
            uniform_tensor(&[n], bound, &mut rng),
            ParamKind::Learnable,
        );
        self.store = store;
        self.config = config;
        Ok(())
    }

    /// Copy with another scalar type.
    pub fn cast<U: Real>(&self) -> Unik<U> {
        Unik {
            config: self.config.clone(),
            store: self.store.cast(),
            input_norm: self.input_norm.clone(),
            blocks: self.blocks.clone(),
            fc_weight: self.fc_weight,
            fc_bias: self.fc_bias,
        }
    }
}

/// Index of the first maximum.
pub fn argmax<T: PartialOrd + Copy>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
