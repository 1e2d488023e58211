//! Training, evaluation, linear probing and two-stream fusion.

mod config;
mod metrics;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{batch_tensor, fit_length, parse_dataset, prepare, sample_window, DatasetSplit, JointLayout};
use crate::error::{Error, Result};
use crate::layers::Pass;
use crate::net::{argmax, load_pretrained_partial, Checkpoint, LoadPolicy, NetworkConfig, TrainingMeta, Unik};
use crate::tensor::{LrSchedule, NormMode, Sgd, SgdConfig, Tensor};

pub use config::{NetworkSettings, TrainConfig, TrainMode, CONFIG_KEYS};
pub use metrics::{fuse_scores, fuse_two_stream, in_top_k, Metrics, ScoreTable};

/// Shortest clip the network is evaluated on.
pub const MIN_EVAL_FRAMES: usize = 4;

pub const CURVE_HEADER: &str = "epoch,lr,train_loss,train_top1,val_top1,val_top5,val_mpc";

/// One row of the learning curve.
#[derive(Clone, Debug, PartialEq)]
pub struct CurveRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_top1: f64,
    pub val: Option<Metrics>,
}

pub fn curve_csv(records: &[CurveRecord]) -> String {
    let mut out = format!("{CURVE_HEADER}\n");
    for r in records {
        let (a, b, c) = r
            .val
            .as_ref()
            .map_or((String::new(), String::new(), String::new()), |m| {
                (m.top1.to_string(), m.top5.to_string(), m.mean_per_class.to_string())
            });
        writeln!(
            out,
            "{},{},{},{},{a},{b},{c}",
            r.epoch, r.lr, r.train_loss, r.train_top1
        )
        .expect("string write");
    }
    out
}

/// Row-wise softmax in double precision.
pub fn softmax_scores(logits: &[f32], classes: usize) -> Vec<Vec<f64>> {
    logits
        .chunks_exact(classes)
        .map(|row| {
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
            let e: Vec<f64> = row.iter().map(|&v| (v as f64 - max).exp()).collect();
            let s: f64 = e.iter().sum();
            e.into_iter().map(|v| v / s).collect()
        })
        .collect()
}

/// Runs `f` over consecutive runs of equal-length clips, at most `batch`
/// per call, after fitting every clip into `[MIN_EVAL_FRAMES, max_frames]`.
fn for_each_eval_batch(
    split: &DatasetSplit,
    max_frames: usize,
    batch: usize,
    persons: usize,
    mut f: impl FnMut(&Tensor<f32>) -> Result<()>,
) -> Result<()> {
    if split.is_empty() {
        return Err(Error::data("cannot evaluate an empty split"));
    }
    let clips = split
        .sequences
        .iter()
        .map(|s| fit_length(s, MIN_EVAL_FRAMES, max_frames))
        .collect::<Result<Vec<_>>>()?;
    let mut start = 0;
    while start < clips.len() {
        let t = clips[start].frames();
        let mut end = start + 1;
        while end < clips.len() && end - start < batch.max(1) && clips[end].frames() == t {
            end += 1;
        }
        let refs: Vec<_> = clips[start..end].iter().collect();
        f(&batch_tensor(&refs, persons)?)?;
        start = end;
    }
    Ok(())
}

/// Eval-mode metrics and softmax scores over full clips of a prepared split.
pub fn evaluate(
    model: &Unik<f32>,
    split: &DatasetSplit,
    max_frames: usize,
    batch: usize,
) -> Result<(Metrics, ScoreTable)> {
    let n = model.config.num_classes;
    if split.num_classes > n {
        return Err(Error::data(format!(
            "split has {} classes, model predicts {n}",
            split.num_classes
        )));
    }
    let mut scores = Vec::with_capacity(split.len());
    for_each_eval_batch(split, max_frames, batch, model.config.persons, |x| {
        scores.extend(softmax_scores(model.logits(x)?.data(), n));
        Ok(())
    })?;
    let metrics = Metrics::from_scores(&scores, &split.labels(), n)?;
    let table = ScoreTable {
        clip_ids: split.sequences.iter().map(|s| s.id.clone()).collect(),
        scores,
    };
    Ok((metrics, table))
}

/// Eval-mode pooled features `[N, F]` of a prepared split.
pub fn extract_features(
    model: &Unik<f32>,
    split: &DatasetSplit,
    max_frames: usize,
    batch: usize,
) -> Result<Tensor<f32>> {
    let f = model.config.feature_dim();
    let mut data = Vec::with_capacity(split.len() * f);
    for_each_eval_batch(split, max_frames, batch, model.config.persons, |x| {
        data.extend_from_slice(model.extract_features(x)?.data());
        Ok(())
    })?;
    Tensor::new(vec![split.len(), f], data)
}

/// Id → label map of a split.
pub fn label_map(split: &DatasetSplit) -> HashMap<String, usize> {
    split.sequences.iter().map(|s| (s.id.clone(), s.label)).collect()
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng
}

/// One pass of classifier-only SGD over fixed features. Returns mean loss
/// and correct count.
fn head_epoch(
    model: &mut Unik<f32>,
    opt: &mut Sgd<f32>,
    features: &Tensor<f32>,
    labels: &[usize],
    batch: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, usize)> {
    let f = features.shape()[1];
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.shuffle(rng);
    let (mut loss, mut correct) = (0.0, 0);
    for chunk in order.chunks(batch.max(1)) {
        let data: Vec<f32> = chunk
            .iter()
            .flat_map(|&i| features.data()[i * f..][..f].iter().copied())
            .collect();
        let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
        model.store.zero_grad();
        let (graph, l, logits) = {
            let mut pass = Pass::new(&model.store, NormMode::Eval);
            let x = pass.input(Tensor::new(vec![chunk.len(), f], data)?);
            let logits = model.classify(&mut pass, x)?;
            let l = pass.graph.cross_entropy(logits, &y)?;
            (pass.finish().0, l, logits)
        };
        graph.backward_into(l, &mut model.store)?;
        opt.step(&mut model.store)?;
        loss += graph.value(l).data()[0] as f64 * chunk.len() as f64;
        let n = model.config.num_classes;
        correct += graph
            .value(logits)
            .data()
            .chunks_exact(n)
            .zip(&y)
            .filter(|(r, &t)| argmax(r) == t)
            .count();
    }
    Ok((loss / labels.len() as f64, correct))
}

/// Metrics of the classifier alone on `[N, F]` features.
pub fn head_metrics(model: &Unik<f32>, features: &Tensor<f32>, labels: &[usize]) -> Result<Metrics> {
    let mut pass = Pass::new(&model.store, NormMode::Eval);
    let x = pass.input(features.clone());
    let logits = model.classify(&mut pass, x)?;
    let n = model.config.num_classes;
    let scores = softmax_scores(pass.graph.value(logits).data(), n);
    Metrics::from_scores(&scores, labels, n)
}

/// Loads, prepares and validates the splits named by a configuration.
pub fn load_splits(config: &TrainConfig) -> Result<(JointLayout, DatasetSplit, Option<DatasetSplit>)> {
    let layout = config.resolve_layout()?;
    let train = parse_dataset(&config.train_data, &layout)?;
    let val = config
        .val_data
        .as_deref()
        .map(|p| parse_dataset(p, &layout))
        .transpose()?;
    Ok((layout, train, val))
}

/// Layout file written next to generated datasets.
pub const LAYOUT_FILE: &str = "layout.json";

/// The named layout, or else `layout.json` beside the data file.
pub fn data_layout(layout: Option<&str>, data: &Path) -> Result<JointLayout> {
    if let Some(l) = layout {
        return JointLayout::resolve(l);
    }
    let beside = data.parent().unwrap_or(Path::new(".")).join(LAYOUT_FILE);
    if beside.exists() {
        return JointLayout::read(&beside);
    }
    Err(Error::config(format!(
        "no layout given and no {LAYOUT_FILE} next to {}",
        data.display()
    )))
}

/// Epoch-by-epoch trainer for all three modes.
pub struct Trainer {
    pub config: TrainConfig,
    pub layout: JointLayout,
    /// Prepared (normalized, stream-converted) splits.
    pub train: DatasetSplit,
    pub val: Option<DatasetSplit>,
    pub model: Unik<f32>,
    pub curve: Vec<CurveRecord>,
    /// Restored and freshly initialized tensor names in transfer modes.
    pub restored: Vec<String>,
    pub fresh: Vec<String>,
    opt: Sgd<f32>,
    schedule: LrSchedule,
    epoch: usize,
    best: Option<f64>,
    probe_features: Option<(Tensor<f32>, Option<Tensor<f32>>)>,
}

impl Trainer {
    /// Reads the data named in `config`.
    pub fn new(config: TrainConfig) -> Result<Self> {
        let (layout, train, val) = load_splits(&config)?;
        Self::with_data(config, layout, &train, val.as_ref())
    }

    /// Uses raw (unnormalized) splits already in memory.
    pub fn with_data(
        config: TrainConfig,
        layout: JointLayout,
        train: &DatasetSplit,
        val: Option<&DatasetSplit>,
    ) -> Result<Self> {
        config.validate()?;
        layout.validate()?;
        let train = prepare(train, &layout, config.stream)?;
        let val = val.map(|v| prepare(v, &layout, config.stream)).transpose()?;
        let channels = train.channels().ok_or_else(|| Error::data("training split is empty"))?;
        if let Some(v) = &val {
            if v.num_classes != train.num_classes || v.channels().is_some_and(|c| c != channels) {
                return Err(Error::data(
                    "validation split differs from the training split in classes or channels",
                ));
            }
        }
        if config.in_channels.is_some_and(|c| c != channels) {
            return Err(Error::config(format!(
                "in_channels = {:?} but the data has {channels}",
                config.in_channels
            )));
        }
        if config.num_classes.is_some_and(|n| n != train.num_classes) {
            return Err(Error::config(format!(
                "num_classes = {:?} but the data has {}",
                config.num_classes, train.num_classes
            )));
        }
        let net = config.network.network(layout.joints(), channels, train.num_classes)?;
        let (mut model, restored, fresh) = match (config.mode, &config.init_checkpoint) {
            (TrainMode::Scratch, _) => (Unik::new(net, config.seed)?, Vec::new(), Vec::new()),
            (mode, Some(path)) => {
                let same = Checkpoint::read(path)?.fingerprint == net.fingerprint();
                let policy = if mode == TrainMode::Finetune && same {
                    LoadPolicy::Full
                } else {
                    LoadPolicy::BackboneOnly
                };
                let p = load_pretrained_partial(path, &net, policy, config.seed)?;
                (p.model, p.restored, p.fresh)
            }
            (mode, None) => return Err(Error::config(format!("mode `{mode}` requires init_checkpoint"))),
        };
        if config.mode == TrainMode::Probe {
            model.freeze_backbone(true);
        }
        let opt = Sgd::new(config.sgd())?;
        let schedule = config.schedule();
        Ok(Trainer {
            config,
            layout,
            train,
            val,
            model,
            curve: Vec::new(),
            restored,
            fresh,
            opt,
            schedule,
            epoch: 0,
            best: None,
            probe_features: None,
        })
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn is_done(&self) -> bool {
        self.epoch >= self.config.epochs
    }

    pub fn network(&self) -> &NetworkConfig {
        &self.model.config
    }

    fn meta(&self) -> TrainingMeta {
        TrainingMeta {
            epoch: self.epoch as u32,
            seed: self.config.seed,
        }
    }

    fn eval_batch(&self) -> usize {
        self.config.batch_size
    }

    /// Metrics on full clips of a prepared split.
    pub fn evaluate(&self, split: &DatasetSplit) -> Result<(Metrics, ScoreTable)> {
        evaluate(&self.model, split, self.config.max_eval_frames, self.eval_batch())
    }

    fn train_epoch_full(&mut self, rng: &mut ChaCha8Rng) -> Result<(f64, usize)> {
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(rng);
        let (mut loss, mut correct) = (0.0, 0);
        for chunk in order.chunks(self.config.batch_size) {
            let clips = chunk
                .iter()
                .map(|&i| sample_window(&self.train.sequences[i], self.config.t_sample, rng))
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<_> = clips.iter().collect();
            let x = batch_tensor(&refs, self.model.config.persons)?;
            let labels: Vec<usize> = clips.iter().map(|c| c.label).collect();
            let s = self.model.train_step(&x, &labels, &mut self.opt, NormMode::Train)?;
            loss += s.loss * chunk.len() as f64;
            correct += s.correct;
        }
        Ok((loss / self.train.len() as f64, correct))
    }

    fn train_epoch_probe(&mut self, rng: &mut ChaCha8Rng) -> Result<(f64, usize)> {
        if self.probe_features.is_none() {
            let (max, batch) = (self.config.max_eval_frames, self.eval_batch());
            let tf = extract_features(&self.model, &self.train, max, batch)?;
            let vf = self
                .val
                .as_ref()
                .map(|v| extract_features(&self.model, v, max, batch))
                .transpose()?;
            self.probe_features = Some((tf, vf));
        }
        let (tf, _) = self.probe_features.as_ref().expect("just extracted");
        let labels = self.train.labels();
        head_epoch(&mut self.model, &mut self.opt, tf, &labels, self.config.batch_size, rng)
    }

    fn val_metrics(&self) -> Result<Option<Metrics>> {
        let Some(val) = &self.val else { return Ok(None) };
        if let Some((_, Some(vf))) = &self.probe_features {
            return head_metrics(&self.model, vf, &val.labels()).map(Some);
        }
        self.evaluate(val).map(|(m, _)| Some(m))
    }

    /// Trains one epoch, evaluates and (with an output directory) writes the
    /// curve and the best checkpoint.
    pub fn run_epoch(&mut self) -> Result<&CurveRecord> {
        let lr = self.schedule.lr_at(self.epoch);
        self.opt.set_lr(lr);
        let mut rng = epoch_rng(self.config.seed, self.epoch);
        let (train_loss, correct) = match self.config.mode {
            TrainMode::Probe => self.train_epoch_probe(&mut rng)?,
            _ => self.train_epoch_full(&mut rng)?,
        };
        let val = self.val_metrics()?;
        self.epoch += 1;
        let train_top1 = correct as f64 / self.train.len() as f64;
        let score = val.as_ref().map_or(train_top1, |m| m.top1);
        let improved = self.best.is_none_or(|b| score > b);
        if improved {
            self.best = Some(score);
        }
        self.curve.push(CurveRecord {
            epoch: self.epoch,
            lr,
            train_loss,
            train_top1,
            val,
        });
        if let Some(dir) = self.config.out_dir.clone() {
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            if improved {
                self.model.save(&dir.join("best.ckpt"), self.meta())?;
            }
            self.write_curve(&dir)?;
        }
        Ok(self.curve.last().expect("just pushed"))
    }

    fn write_curve(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("curve.csv");
        std::fs::write(&path, curve_csv(&self.curve)).map_err(|e| Error::io(&path, e))
    }

    /// Runs the remaining epochs and writes `final.ckpt`.
    pub fn run(&mut self) -> Result<TrainReport> {
        while !self.is_done() {
            self.run_epoch()?;
        }
        self.finish()
    }

    pub fn finish(&self) -> Result<TrainReport> {
        let mut checkpoint = None;
        if let Some(dir) = &self.config.out_dir {
            self.write_curve(dir)?;
            let path = dir.join("final.ckpt");
            self.model.save(&path, self.meta())?;
            checkpoint = Some(path);
        }
        Ok(TrainReport {
            curve: self.curve.clone(),
            val: self.curve.last().and_then(|r| r.val.clone()),
            checkpoint,
        })
    }
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub curve: Vec<CurveRecord>,
    pub val: Option<Metrics>,
    pub checkpoint: Option<PathBuf>,
}

/// Runs a whole configuration.
pub fn train(config: TrainConfig) -> Result<(Unik<f32>, TrainReport)> {
    let mut trainer = Trainer::new(config)?;
    let report = trainer.run()?;
    Ok((trainer.model, report))
}

/// Classifier-only training settings.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeOptions {
    pub epochs: usize,
    pub sgd: SgdConfig,
    pub batch_size: usize,
    pub seed: u64,
    pub max_eval_frames: usize,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        ProbeOptions {
            epochs: 30,
            sgd: SgdConfig::default(),
            batch_size: 16,
            seed: 0,
            max_eval_frames: 1200,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ProbeReport {
    pub model: Unik<f32>,
    pub trainable_params: usize,
    pub train: Metrics,
    pub val: Option<Metrics>,
    pub losses: Vec<f64>,
}

/// Classifier-only SGD on fixed `[N, F]` features; returns per-epoch mean
/// losses. Only trainable store entries change.
pub fn fit_head(
    model: &mut Unik<f32>,
    features: &Tensor<f32>,
    labels: &[usize],
    opts: &ProbeOptions,
) -> Result<Vec<f64>> {
    if features.rank() != 2 || features.shape()[0] != labels.len() {
        return Err(Error::dim(format!(
            "features {:?} do not match {} labels",
            features.shape(),
            labels.len()
        )));
    }
    let mut opt = Sgd::new(opts.sgd)?;
    let mut losses = Vec::with_capacity(opts.epochs);
    for epoch in 0..opts.epochs {
        let mut rng = epoch_rng(opts.seed, epoch);
        losses.push(head_epoch(model, &mut opt, features, labels, opts.batch_size.max(1), &mut rng)?.0);
    }
    Ok(losses)
}

/// Fits a fresh classifier on frozen backbone features extracted once from
/// full clips of the prepared splits.
pub fn linear_probe(
    backbone: &Unik<f32>,
    train: &DatasetSplit,
    val: Option<&DatasetSplit>,
    opts: &ProbeOptions,
) -> Result<ProbeReport> {
    let mut model = backbone.clone();
    model.reset_classifier(train.num_classes, opts.seed)?;
    model.freeze_backbone(true);
    let trainable_params = model.store.trainable_count();
    let batch = opts.batch_size.max(1);
    let tf = extract_features(&model, train, opts.max_eval_frames, batch)?;
    let labels = train.labels();
    let losses = fit_head(&mut model, &tf, &labels, opts)?;
    let train_metrics = head_metrics(&model, &tf, &labels)?;
    let val = val
        .map(|v| {
            let vf = extract_features(&model, v, opts.max_eval_frames, batch)?;
            head_metrics(&model, &vf, &v.labels())
        })
        .transpose()?;
    Ok(ProbeReport {
        model,
        trainable_params,
        train: train_metrics,
        val,
        losses,
    })
}
