use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use unik::data::{parse_dataset, prepare, write_synth, Stream, SynthSpec};
use unik::net::{count_params, TrainingMeta};
use unik::tensor::SgdConfig;
use unik::train::{
    data_layout, evaluate, fuse_scores, label_map, linear_probe, Metrics, ProbeOptions, ScoreTable, TrainConfig,
    Trainer,
};
use unik::{Error, NetworkConfig, Result, Unik};

#[derive(Parser)]
#[command(name = "unik", version, about = "Skeleton action recognition with the UNIK network")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from scratch, fine-tune or linear-probe as the config says.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on full-length clips.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Built-in layout name or layout file; defaults to layout.json beside the data.
        #[arg(long)]
        layout: Option<String>,
        #[arg(long, default_value = "joint")]
        stream: Stream,
        #[arg(long)]
        scores_out: Option<PathBuf>,
        #[arg(long, default_value_t = 1200)]
        max_frames: usize,
        #[arg(long, default_value_t = 16)]
        batch: usize,
    },
    /// Fit a new classifier on frozen backbone features.
    Probe {
        #[arg(long)]
        ckpt: PathBuf,
        /// Training split for the classifier.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long)]
        layout: Option<String>,
        #[arg(long, default_value = "joint")]
        stream: Stream,
        #[arg(long, default_value_t = 30)]
        epochs: usize,
        #[arg(long, default_value_t = 0.1)]
        lr: f64,
        #[arg(long, default_value_t = 16)]
        batch: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Where to write the backbone with its new classifier.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sum joint-stream and bone-stream softmax scores per clip.
    Fuse {
        #[arg(long)]
        joint: PathBuf,
        #[arg(long)]
        bone: PathBuf,
        /// Dataset supplying the labels; without it only scores are fused.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        layout: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic dataset.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print parameter counts of the configured network.
    Params {
        #[arg(long)]
        config: PathBuf,
        /// Class counts for which to report linear-probe head sizes.
        #[arg(long, value_delimiter = ',')]
        probe_classes: Vec<usize>,
    },
}

fn print_metrics(label: &str, m: &Metrics) {
    println!("{label}: {m}");
}

fn train(config: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    let mut cfg = TrainConfig::read(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if out.is_some() {
        cfg.out_dir = out;
    }
    let mut trainer = Trainer::new(cfg)?;
    println!(
        "mode {}  network {} blocks, {} joints, {} classes  ({} train clips)",
        trainer.config.mode,
        trainer.network().blocks(),
        trainer.network().joints,
        trainer.network().num_classes,
        trainer.train.len()
    );
    while !trainer.is_done() {
        let r = trainer.run_epoch()?;
        let val = r.val.as_ref().map(|m| format!("  val {m}")).unwrap_or_default();
        println!(
            "epoch {:>3}  lr {:.4}  loss {:.4}  train top1 {:.4}{val}",
            r.epoch, r.lr, r.train_loss, r.train_top1
        );
    }
    let report = trainer.finish()?;
    if let Some(m) = &report.val {
        print_metrics("final val", m);
    }
    if let Some(p) = &report.checkpoint {
        println!("wrote {}", p.display());
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn eval(
    ckpt: &Path,
    data: &Path,
    layout: Option<&str>,
    stream: Stream,
    scores_out: Option<&Path>,
    max_frames: usize,
    batch: usize,
) -> Result<()> {
    let (model, _) = Unik::load_any(ckpt)?;
    let layout = data_layout(layout, data)?;
    let split = prepare(&parse_dataset(data, &layout)?, &layout, stream)?;
    let (metrics, scores) = evaluate(&model, &split, max_frames, batch)?;
    print_metrics("eval", &metrics);
    if let Some(p) = scores_out {
        scores.write(p)?;
        println!("wrote {}", p.display());
    }
    Ok(())
}

struct ProbeArgs {
    ckpt: PathBuf,
    data: PathBuf,
    val: Option<PathBuf>,
    layout: Option<String>,
    stream: Stream,
    epochs: usize,
    lr: f64,
    batch: usize,
    seed: u64,
    out: Option<PathBuf>,
}

fn probe(a: ProbeArgs) -> Result<()> {
    let (backbone, _) = Unik::load_any(&a.ckpt)?;
    let layout = data_layout(a.layout.as_deref(), &a.data)?;
    let train = prepare(&parse_dataset(&a.data, &layout)?, &layout, a.stream)?;
    let val = a
        .val
        .as_deref()
        .map(|p| parse_dataset(p, &layout).and_then(|v| prepare(&v, &layout, a.stream)))
        .transpose()?;
    let opts = ProbeOptions {
        epochs: a.epochs,
        sgd: SgdConfig {
            lr: a.lr,
            ..SgdConfig::default()
        },
        batch_size: a.batch,
        seed: a.seed,
        ..ProbeOptions::default()
    };
    let report = linear_probe(&backbone, &train, val.as_ref(), &opts)?;
    println!("trainable parameters: {}", report.trainable_params);
    print_metrics("probe train", &report.train);
    if let Some(m) = &report.val {
        print_metrics("probe val", m);
    }
    if let Some(p) = &a.out {
        let meta = TrainingMeta {
            epoch: a.epochs as u32,
            seed: a.seed,
        };
        report.model.save(p, meta)?;
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn fuse(joint: &Path, bone: &Path, data: Option<&Path>, layout: Option<&str>, out: Option<&Path>) -> Result<()> {
    let j = ScoreTable::read(joint)?;
    let b = ScoreTable::read(bone)?;
    let fused = fuse_scores(&j, &b)?;
    if let Some(data) = data {
        let layout = data_layout(layout, data)?;
        let labels = label_map(&parse_dataset(data, &layout)?);
        let n = fused.num_classes();
        for (name, t) in [("joint", &j), ("bone", &b), ("fused", &fused)] {
            print_metrics(name, &Metrics::from_scores(&t.scores, &t.labels(&labels)?, n)?);
        }
    }
    match out {
        Some(p) => {
            fused.write(p)?;
            println!("wrote {}", p.display());
        }
        None if data.is_none() => print!("{}", fused.to_csv()),
        None => {}
    }
    Ok(())
}

fn synth(spec: &Path, out: &Path) -> Result<()> {
    let spec = SynthSpec::read(spec)?;
    write_synth(&spec, out)?;
    println!(
        "wrote {} classes x {} clips to {}",
        spec.num_classes,
        spec.samples_per_class,
        out.display()
    );
    Ok(())
}

fn params(config: &Path, probe_classes: &[usize]) -> Result<()> {
    let cfg = TrainConfig::read(config)?;
    let layout = cfg.resolve_layout()?;
    let num_classes = match cfg.num_classes {
        Some(n) => n,
        None => {
            let labels = cfg.train_data.parent().unwrap_or(Path::new(".")).join("labels.json");
            unik::data::read_labels(&labels)
                .map_err(|_| Error::Config("set num_classes or provide labels.json beside the training data".into()))?
                .len()
        }
    };
    let net: NetworkConfig = cfg
        .network
        .network(layout.joints(), cfg.in_channels.unwrap_or(2), num_classes)?;
    let counts = count_params(&net)?;
    println!("input norm   {:>10}", counts.input_norm);
    for (i, c) in counts.blocks.iter().enumerate() {
        println!("block {i:<6} {c:>10}");
    }
    println!("backbone     {:>10}", counts.backbone());
    println!("classifier   {:>10}", counts.classifier);
    println!("total        {:>10}", counts.total());
    for &n in probe_classes {
        println!(
            "probe head ({n} classes) {}",
            unik::net::linear_param_count(net.feature_dim(), n)
        );
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, seed, out } => train(&config, seed, out),
        Command::Eval {
            ckpt,
            data,
            layout,
            stream,
            scores_out,
            max_frames,
            batch,
        } => eval(
            &ckpt,
            &data,
            layout.as_deref(),
            stream,
            scores_out.as_deref(),
            max_frames,
            batch,
        ),
        Command::Probe {
            ckpt,
            data,
            val,
            layout,
            stream,
            epochs,
            lr,
            batch,
            seed,
            out,
        } => probe(ProbeArgs {
            ckpt,
            data,
            val,
            layout,
            stream,
            epochs,
            lr,
            batch,
            seed,
            out,
        }),
        Command::Fuse {
            joint,
            bone,
            data,
            layout,
            out,
        } => fuse(&joint, &bone, data.as_deref(), layout.as_deref(), out.as_deref()),
        Command::Synth { spec, out } => synth(&spec, &out),
        Command::Params { config, probe_classes } => params(&config, &probe_classes),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
