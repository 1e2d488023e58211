//! Acceptance runner: one PASS/FAIL line per criterion, run serially so the
//! timed criteria measure a quiet machine.

#[allow(dead_code)]
#[path = "gradients.rs"]
mod gradients;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use gradients::common::equivariance::{permutations, permute_joints, slsu_conjugation_error};
use gradients::common::{random, rng, small_config};
use unik::data::{parse_dataset, prepare, write_dataset, DatasetSplit, JointLayout, Stream, SynthSpec};
use unik::layers::Pass;
use unik::net::{count_params, linear_param_count, TrainingMeta};
use unik::slsu::{init_dependency, Slsu, SlsuConfig};
use unik::tensor::{NormMode, ParamStore, SgdConfig};
use unik::tlsu::{Tlsu, TlsuConfig};
use unik::train::{fuse_scores, linear_probe, Metrics, ProbeOptions, TrainConfig, Trainer};
use unik::{NetworkConfig, Tensor, Unik};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Runs every check, stopping at none; the outcome carries all details.
fn all(parts: Vec<Outcome>) -> Outcome {
    let failed = parts.iter().any(Result::is_err);
    let text = parts
        .into_iter()
        .map(|p| p.unwrap_or_else(|e| e))
        .collect::<Vec<_>>()
        .join("; ");
    check(!failed, text)
}

fn run(name: &str, f: fn() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let secs = start.elapsed().as_secs_f64();
    let (tag, detail) = match &outcome {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    println!("{tag} {name} ({secs:.1}s): {detail}");
    outcome.is_ok()
}

fn gradient_fidelity() -> Outcome {
    let checks = gradients::CHECKS;
    let start = Instant::now();
    let failed: Vec<&str> = checks
        .iter()
        .filter(|(_, f)| catch_unwind(*f).is_err())
        .map(|(name, _)| *name)
        .collect();
    let secs = start.elapsed().as_secs_f64();
    all(vec![
        check(failed.is_empty(), format!("{} checks, failed {failed:?}", checks.len())),
        check(secs < 120.0, format!("{secs:.1}s of 120s")),
    ])
}

fn initialization_law() -> Outcome {
    let mut parts = Vec::new();
    for joints in [17usize, 25] {
        let bound = 1.0 / (joints as f64).sqrt();
        let mut r = rng(1000 + joints as u64);
        let mut draws = Vec::new();
        while draws.len() < 100_000 {
            draws.extend_from_slice(
                init_dependency::<f64, _>(joints, 1, 5f64.sqrt(), &mut r)
                    .unwrap()
                    .data(),
            );
        }
        let inside = draws.iter().all(|v| v.abs() <= bound);
        let n = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / n;
        let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let rel = var / (bound * bound / 3.0) - 1.0;
        parts.push(check(
            inside && rel.abs() < 0.05,
            format!("V={joints} in bound {inside}, variance off by {:.2}%", 100.0 * rel),
        ));
    }
    all(parts)
}

fn attention_normalization() -> Outcome {
    let joints = 6;
    let mut store = ParamStore::<f64>::new();
    let unit = Slsu::new(&mut store, "s", SlsuConfig::new(3, 8), joints, &mut rng(30)).unwrap();
    let maps = |x: &Tensor<f64>| -> Vec<Vec<f64>> {
        let mut pass = Pass::new(&store, NormMode::Eval);
        let xv = pass.input(x.clone());
        (0..unit.heads.len())
            .map(|h| {
                let a = unit.attention_map(&mut pass, xv, h).unwrap();
                pass.graph.value(a).data().to_vec()
            })
            .collect()
    };
    let mut worst = 0.0f64;
    for i in 0..100u64 {
        let scale = [0.01, 1.0, 10.0, 50.0][i as usize % 4];
        let x = random::<f64>(&[2, 3, 1 + i as usize % 7, joints], scale, &mut rng(31 + i));
        for map in maps(&x) {
            for row in map.chunks(joints) {
                worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
            }
        }
    }
    let uniform = 1.0 / joints as f64;
    let zero = maps(&Tensor::zeros(vec![2, 3, 4, joints]));
    let exact = zero.iter().flatten().all(|&p| p == uniform);
    all(vec![
        check(
            worst < 1e-6,
            format!("100 inputs x {} heads, worst row error {worst:.1e}", unit.heads.len()),
        ),
        check(exact, format!("zero input uniform exactly: {exact}")),
    ])
}

fn parameter_counts() -> Outcome {
    let backbone = count_params(&NetworkConfig::new(17, 2, 31)).unwrap().backbone();
    let mut model = Unik::<f32>::new(NetworkConfig::new(17, 2, 31), 0).unwrap();
    let mut parts = Vec::new();
    for (classes, expected) in [(31, 7_967), (15, 3_855)] {
        model.reset_classifier(classes, 0).unwrap();
        model.freeze_backbone(true);
        let n = model.store.trainable_count();
        parts.push(check(
            n == expected && linear_param_count(model.config.feature_dim(), classes) == expected,
            format!("{classes}-class probe head {n}"),
        ));
    }
    parts.push(check(
        (3_000_000..=3_900_000).contains(&backbone),
        format!("backbone {backbone}"),
    ));
    all(parts)
}

fn synth(classes: usize, per_class: usize, val_per_class: usize, seed: u64) -> SynthSpec {
    let mut spec = SynthSpec::new(classes, per_class, 64, JointLayout::posetics17());
    spec.val_samples_per_class = val_per_class;
    spec.seed = seed;
    spec
}

fn overfit() -> Outcome {
    const BUDGET: Duration = Duration::from_secs(600);
    let (train, _) = synth(4, 16, 0, 1).generate().unwrap();
    let mut cfg = TrainConfig::new("synthetic", "posetics17");
    cfg.epochs = 200;
    cfg.lr0 = 0.01;
    cfg.decay_epochs = vec![8, 14];
    cfg.batch_size = 16;
    cfg.seed = 1;
    let start = Instant::now();
    let mut trainer = Trainer::with_data(cfg, JointLayout::posetics17(), &train, None).unwrap();
    let prepared = trainer.train.clone();
    while !trainer.is_done() && start.elapsed() < BUDGET {
        let running = trainer.run_epoch().unwrap().train_top1;
        if running < 0.99 {
            continue;
        }
        let top1 = trainer.evaluate(&prepared).unwrap().0.top1;
        if top1 >= 0.99 {
            let secs = start.elapsed().as_secs_f64();
            return check(
                secs < BUDGET.as_secs_f64(),
                format!("train top-1 {top1:.3} at epoch {} after {secs:.0}s", trainer.epoch()),
            );
        }
    }
    Err(format!(
        "no 99% train top-1 by epoch {} ({:.0}s)",
        trainer.epoch(),
        start.elapsed().as_secs_f64()
    ))
}

/// A compact network for the multi-run criteria.
fn compact(cfg: &mut TrainConfig) {
    cfg.network.channels = vec![16, 16, 32, 32, 64, 64];
    cfg.network.dilations = vec![1, 2, 3, 1, 2, 3];
    cfg.network.kernel = 5;
}

fn transfer() -> Outcome {
    let mut gaps = Vec::new();
    let mut lines = Vec::new();
    for seed in 0..3u64 {
        let (source, _) = synth(8, 16, 0, 100 + seed).generate().unwrap();
        let mut target = synth(4, 8, 16, 200 + seed);
        target.class_offset = 12;
        let (t_train, t_val) = target.generate().unwrap();
        let mut cfg = TrainConfig::new("synthetic", "posetics17");
        compact(&mut cfg);
        cfg.epochs = 30;
        cfg.decay_epochs = vec![20];
        cfg.lr0 = 0.05;
        cfg.seed = seed;
        let layout = JointLayout::posetics17();
        let mut trainer = Trainer::with_data(cfg, layout.clone(), &source, None).unwrap();
        trainer.run().unwrap();
        let t_train = prepare(&t_train, &layout, Stream::Joint).unwrap();
        let t_val = prepare(t_val.as_ref().unwrap(), &layout, Stream::Joint).unwrap();
        let opts = ProbeOptions {
            epochs: 100,
            sgd: SgdConfig {
                lr: 0.1,
                ..SgdConfig::default()
            },
            seed,
            ..ProbeOptions::default()
        };
        let probe = |model: &Unik<f32>| {
            linear_probe(model, &t_train, Some(&t_val), &opts)
                .unwrap()
                .val
                .unwrap()
                .top1
        };
        let pretrained = probe(&trainer.model);
        let random_init = probe(&Unik::new(trainer.model.config.clone(), 1000 + seed).unwrap());
        lines.push(format!("seed {seed}: {pretrained:.3} vs {random_init:.3}"));
        gaps.push(100.0 * (pretrained - random_init));
    }
    let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
    check(
        mean >= 15.0,
        format!("mean gap {mean:.1} points ({})", lines.join(", ")),
    )
}

fn fusion() -> Outcome {
    let layout = JointLayout::posetics17();
    let (mut joint, mut bone, mut fused) = (0.0, 0.0, 0.0);
    let mut self_exact = true;
    for seed in 1..=3u64 {
        let mut spec = synth(4, 16, 16, seed);
        spec.noise = 0.15;
        let (train, val) = spec.generate().unwrap();
        let val = val.unwrap();
        let stream_scores = |stream: Stream| {
            let mut cfg = TrainConfig::new("synthetic", "posetics17");
            compact(&mut cfg);
            cfg.stream = stream;
            cfg.epochs = 30;
            cfg.decay_epochs = vec![20];
            cfg.lr0 = 0.05;
            cfg.seed = seed;
            let mut trainer = Trainer::with_data(cfg, layout.clone(), &train, None).unwrap();
            trainer.run().unwrap();
            trainer.evaluate(&prepare(&val, &layout, stream).unwrap()).unwrap()
        };
        let (jm, js) = stream_scores(Stream::Joint);
        let (bm, bs) = stream_scores(Stream::Bone);
        let labels = val.labels();
        let fm = Metrics::from_scores(&fuse_scores(&js, &bs).unwrap().scores, &labels, 4).unwrap();
        let selfed = fuse_scores(&js, &js).unwrap();
        self_exact &= Metrics::from_scores(&selfed.scores, &labels, 4).unwrap() == jm
            && selfed
                .scores
                .iter()
                .flatten()
                .zip(js.scores.iter().flatten())
                .all(|(f, s)| f.to_bits() == (2.0 * s).to_bits());
        joint += jm.top1 / 3.0;
        bone += bm.top1 / 3.0;
        fused += fm.top1 / 3.0;
    }
    all(vec![
        check(
            fused >= joint.max(bone) - 0.01,
            format!("mean over 3 seeds: joint {joint:.3}, bone {bone:.3}, fused {fused:.3}"),
        ),
        check(self_exact, format!("self-fusion exact: {self_exact}")),
    ])
}

fn small_run(train: &DatasetSplit, val: &DatasetSplit) -> (Unik<f32>, Metrics) {
    let mut cfg = TrainConfig::new("synthetic", "posetics17");
    let net = small_config(17, 3);
    cfg.network.channels = net.channels;
    cfg.network.dilations = net.dilations;
    cfg.network.kernel = net.kernel;
    cfg.network.heads = net.heads;
    cfg.epochs = 3;
    cfg.decay_epochs = vec![2];
    cfg.lr0 = 0.05;
    cfg.batch_size = 4;
    cfg.t_sample = 16;
    cfg.seed = 42;
    let mut trainer = Trainer::with_data(cfg, JointLayout::posetics17(), train, Some(val)).unwrap();
    let report = trainer.run().unwrap();
    (trainer.model, report.val.unwrap())
}

fn bits(m: &Metrics) -> Vec<u64> {
    [m.top1, m.top5, m.mean_per_class].iter().map(|v| v.to_bits()).collect()
}

fn determinism_and_round_trips() -> Outcome {
    let mut spec = SynthSpec::new(3, 4, 20, JointLayout::posetics17());
    spec.val_samples_per_class = 2;
    spec.noise = 0.02;
    let (train, val) = spec.generate().unwrap();
    let val = val.unwrap();
    let (a, ma) = small_run(&train, &val);
    let (_, mb) = small_run(&train, &val);
    let same_metrics = bits(&ma) == bits(&mb) && ma == mb;

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    a.save(&path, TrainingMeta { epoch: 3, seed: 42 }).unwrap();
    let (back, meta) = Unik::load_any(&path).unwrap();
    let ckpt_exact = meta == TrainingMeta { epoch: 3, seed: 42 }
        && a.store.ids().all(|id| {
            let (x, y) = (a.store.get(id).data(), back.store.get(id).data());
            x.len() == y.len() && x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits())
        });

    let first = dir.path().join("one.jsonl");
    let second = dir.path().join("two.jsonl");
    write_dataset(&train, &first).unwrap();
    let parsed = parse_dataset(&first, &JointLayout::posetics17()).unwrap();
    write_dataset(&parsed, &second).unwrap();
    let data_exact = parsed == train && std::fs::read(&first).unwrap() == std::fs::read(&second).unwrap();
    all(vec![
        check(same_metrics, format!("repeat run metrics identical: {same_metrics}")),
        check(ckpt_exact, format!("checkpoint bitwise: {ckpt_exact}")),
        check(data_exact, format!("dataset bitwise: {data_exact}")),
    ])
}

fn tlsu_equivariance_error() -> f64 {
    let joints = 5;
    let mut worst = 0.0f64;
    for (i, perm) in permutations(joints).into_iter().enumerate().step_by(7) {
        let mut store = ParamStore::<f64>::new();
        let unit = Tlsu::new(&mut store, "t", TlsuConfig::new(3, 1 + i % 3), &mut rng(40 + i as u64)).unwrap();
        let x = random::<f64>(&[2, 3, 9, joints], 1.0, &mut rng(41 + i as u64));
        let run = |x: &Tensor<f64>| {
            let mut pass = Pass::new(&store, NormMode::Eval);
            let xv = pass.input(x.clone());
            let y = unit.forward(&mut pass, xv).unwrap();
            pass.graph.value(y).clone()
        };
        let lhs = permute_joints(&run(&x), &perm);
        let rhs = run(&permute_joints(&x, &perm));
        worst = worst.max(lhs.max_abs_diff(&rhs));
    }
    worst
}

fn equivariance() -> Outcome {
    let slsu = (1..=4).map(slsu_conjugation_error).fold(0.0f64, f64::max);
    let tlsu = tlsu_equivariance_error();
    all(vec![
        check(slsu < 1e-5, format!("S-LSU conjugation V<=4 worst {slsu:.1e}")),
        check(tlsu < 1e-5, format!("T-LSU permutation worst {tlsu:.1e}")),
    ])
}

fn main() -> ExitCode {
    std::panic::set_hook(Box::new(|_| {}));
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [Criterion; 9] = [
        ("gradient-fidelity", gradient_fidelity),
        ("initialization-law", initialization_law),
        ("attention-normalization", attention_normalization),
        ("parameter-counts", parameter_counts),
        ("overfit", overfit),
        ("transfer", transfer),
        ("fusion", fusion),
        ("determinism-round-trips", determinism_and_round_trips),
        ("equivariance", equivariance),
    ];
    let mut failures = 0;
    for (name, f) in criteria {
        if filter.is_empty() || filter.iter().any(|p| name.contains(p.as_str())) {
            failures += usize::from(!run(name, f));
        }
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} criteria failed");
        ExitCode::FAILURE
    }
}
