//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits nonzero when any criterion fails.

use std::cell::RefCell;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use mtrnet_core::checkpoint;
use mtrnet_core::corpus::{gen_corpus, CorpusConfig, CorpusSpec, Utterance};
use mtrnet_core::lstmp::{step_backward_into, step_forward, CellDims, CellState, LstmpParams};
use mtrnet_core::multitask::{
    augmented_input, build_augmented_equivalent, mt_step_backward_into, mt_step_forward, FeedbackConfig, JointState,
    MultiTaskParams,
};
use mtrnet_core::network::{
    aligned_target, evaluate, frame_errors, infer, InitConfig, Masking, MetricsReport, Mode, Model, ModelSpec,
    TowerSize,
};
use mtrnet_core::numkit::{Rng, Vector};
use mtrnet_core::params::Params;
use mtrnet_core::sweep::{train_model, Experiment};
use mtrnet_core::trainer::TrainConfig;

type Outcome = Result<String, String>;

fn mtrnet(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_mtrnet"))
        .args(args)
        .output()
        .expect("run mtrnet")
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn dims(nx: usize, nc: usize, nr: usize, np: usize, ny: usize) -> CellDims {
    CellDims {
        input_dim: nx,
        cell_dim: nc,
        rproj_dim: nr,
        pproj_dim: np,
        output_dim: ny,
    }
}

fn random_seq(rng: &mut Rng, frames: usize, dim: usize) -> Vec<Vector> {
    (0..frames).map(|_| (0..dim).map(|_| rng.normal()).collect()).collect()
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

// 1
fn gradient_exactness() -> Outcome {
    let start = Instant::now();
    let out = mtrnet(&["gradcheck"]);
    let secs = start.elapsed().as_secs_f64();
    let text = String::from_utf8_lossy(&out.stdout).into_owned();
    ensure(out.status.success(), || format!("gradcheck exited {:?}:\n{text}", out.status.code()))?;
    let lines: Vec<&str> = text.lines().filter(|l| l.starts_with("PASS")).collect();
    ensure(lines.len() == 15, || format!("expected 15 passing checks:\n{text}"))?;
    for label in ["cell-a", "cell-l", "single"]
        .into_iter()
        .map(String::from)
        .chain(FeedbackConfig::sweep_grid().iter().map(|c| c.to_string()))
    {
        ensure(lines.iter().any(|l| l.split_whitespace().nth(1) == Some(label.as_str())), || {
            format!("no check for {label}")
        })?;
    }
    let worst = lines
        .iter()
        .filter_map(|l| l.split_whitespace().find_map(|w| w.strip_prefix("max_rel_err=")))
        .filter_map(|v| v.parse::<f64>().ok())
        .fold(0.0, f64::max);
    ensure(worst < 1e-5, || format!("max relative error {worst:e}"))?;
    ensure(secs < 120.0, || format!("took {secs:.1}s"))?;
    Ok(format!("15 checks, max_rel_err={worst:.2e}, {secs:.1}s"))
}

// 2
fn decoupling_equivalence() -> Outcome {
    let mut rng = Rng::new(2024);
    let da = dims(4, 6, 3, 2, 5);
    let dl = dims(4, 4, 2, 3, 2);
    let mut frames = 0;
    for seq in 0..10 {
        let config = FeedbackConfig::sweep_grid()[seq % 12].clone();
        let config = if seq % 2 == 0 { FeedbackConfig::full() } else { config };
        let mut m = MultiTaskParams::init(da, dl, config, &mut rng, 0.5, 1.0).map_err(|e| e.to_string())?;
        m.cross.fill(0.0);
        let xs = random_seq(&mut rng, 10, 4);
        let dys_a = random_seq(&mut rng, 10, 5);
        let dys_l = random_seq(&mut rng, 10, 2);

        let mut joint = JointState::zeros(&m);
        let (mut sa, mut sl) = (CellState::zeros(da), CellState::zeros(dl));
        let (mut mt_caches, mut a_caches, mut l_caches) = (Vec::new(), Vec::new(), Vec::new());
        for (t, x) in xs.iter().enumerate() {
            let out = mt_step_forward(&m, x, &joint).map_err(|e| e.to_string())?;
            let a = step_forward(&m.tower_a, x, &sa).map_err(|e| e.to_string())?;
            let l = step_forward(&m.tower_l, x, &sl).map_err(|e| e.to_string())?;
            ensure(bits(&out.y_a) == bits(&a.y) && bits(&out.y_l) == bits(&l.y), || {
                format!("sequence {seq} frame {t}: outputs differ")
            })?;
            joint = out.state;
            sa = a.state;
            sl = l.state;
            mt_caches.push(out.cache);
            a_caches.push(a.cache);
            l_caches.push(l.cache);
            frames += 1;
        }

        let mut g_mt = m.zeros_like();
        let mut g_a = LstmpParams::zeros(da);
        let mut g_l = LstmpParams::zeros(dl);
        let mut d_joint = JointState::zeros(&m);
        let (mut d_a, mut d_l) = (CellState::zeros(da), CellState::zeros(dl));
        for t in (0..xs.len()).rev() {
            let b = mt_step_backward_into(&m, &mt_caches[t], &dys_a[t], &dys_l[t], &d_joint, &mut g_mt)
                .map_err(|e| e.to_string())?;
            let ba = step_backward_into(&m.tower_a, &a_caches[t], &dys_a[t], &d_a, &mut g_a).map_err(|e| e.to_string())?;
            let bl = step_backward_into(&m.tower_l, &l_caches[t], &dys_l[t], &d_l, &mut g_l).map_err(|e| e.to_string())?;
            let dx: Vec<f64> = ba.dx.iter().zip(&bl.dx).map(|(a, b)| a + b).collect();
            ensure(bits(&b.dx) == bits(&dx), || format!("sequence {seq} frame {t}: input gradients differ"))?;
            d_joint = b.dprev;
            d_a = ba.dprev;
            d_l = bl.dprev;
        }
        ensure(bits(&g_mt.tower_a.to_flat()) == bits(&g_a.to_flat()), || {
            format!("sequence {seq}: tower a gradients differ")
        })?;
        ensure(bits(&g_mt.tower_l.to_flat()) == bits(&g_l.to_flat()), || {
            format!("sequence {seq}: tower l gradients differ")
        })?;
    }
    Ok(format!("10 sequences, {frames} frames, outputs and gradients bit-identical"))
}

// 3
fn augmentation_equivalence() -> Outcome {
    let mut rng = Rng::new(77);
    let da = dims(5, 6, 3, 4, 7);
    let dl = dims(5, 4, 2, 3, 2);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let m = MultiTaskParams::init(da, dl, FeedbackConfig::full(), &mut rng, 0.6, 1.0).map_err(|e| e.to_string())?;
        let (aug_a, aug_l) = build_augmented_equivalent(&m).map_err(|e| e.to_string())?;
        let xs = random_seq(&mut rng, 8, 5);
        let mut joint = JointState::zeros(&m);
        let (mut sa, mut sl) = (CellState::zeros(aug_a.dims()), CellState::zeros(aug_l.dims()));
        for x in &xs {
            let out = mt_step_forward(&m, x, &joint).map_err(|e| e.to_string())?;
            let a = step_forward(&aug_a, &augmented_input(x, &sl), &sa).map_err(|e| e.to_string())?;
            let l = step_forward(&aug_l, &augmented_input(x, &sa), &sl).map_err(|e| e.to_string())?;
            for (u, v) in out.y_a.iter().zip(&a.y).chain(out.y_l.iter().zip(&l.y)) {
                worst = worst.max((u - v).abs());
            }
            joint = out.state;
            sa = a.state;
            sl = l.state;
        }
    }
    ensure(worst <= 1e-12, || format!("max abs error {worst:e}"))?;
    Ok(format!("10 sequences x 8 frames, max abs error {worst:.2e}"))
}

// 4
fn peephole_probe(p: &LstmpParams, rng: &mut Rng) -> Result<usize, String> {
    let d = p.dims();
    let x: Vector = (0..d.input_dim).map(|_| rng.normal()).collect();
    let prev = CellState {
        c: (0..d.cell_dim).map(|_| rng.normal()).collect(),
        r: (0..d.rproj_dim).map(|_| rng.normal()).collect(),
        p: (0..d.pproj_dim).map(|_| rng.normal()).collect(),
    };
    let base = step_forward(p, &x, &prev).map_err(|e| e.to_string())?.cache;
    let mut probes = 0;
    for j in 0..d.cell_dim {
        let mut bumped = prev.clone();
        bumped.c[j] += 0.5;
        let out = step_forward(p, &x, &bumped).map_err(|e| e.to_string())?.cache;
        for k in (0..d.cell_dim).filter(|&k| k != j) {
            for (name, a, b) in [("i", &base.i, &out.i), ("f", &base.f, &out.f), ("o", &base.o, &out.o)] {
                ensure(a[k].to_bits() == b[k].to_bits(), || {
                    format!("gate {name}[{k}] moved when c_prev[{j}] changed")
                })?;
                probes += 1;
            }
        }
        ensure(base.i[j] != out.i[j] && base.f[j] != out.f[j], || {
            format!("gates i/f[{j}] ignore their own peephole")
        })?;
    }
    Ok(probes)
}

fn diagonal_peepholes() -> Outcome {
    let mut rng = Rng::new(4);
    let spec = ModelSpec {
        mode: Mode::SingleBilingual,
        feat_dim: 3,
        splice_context: 0,
        asr: TowerSize { cell: 6, rproj: 3, pproj: 2 },
        lr: TowerSize { cell: 4, rproj: 2, pproj: 2 },
        feedback: FeedbackConfig::none(),
        phone_classes: 4,
        language_classes: 2,
        target_delay: 0,
        lambda_asr: 1.0,
        lambda_lr: 1.0,
    };
    let mut model = Model::init(spec.clone(), &InitConfig { seed: 4, scale: 0.5, forget_bias: 1.0 })
        .map_err(|e| e.to_string())?;
    let mut probes = peephole_probe(model.params.asr_tower(), &mut rng)?;

    let cfg = CorpusConfig {
        seed: 8,
        phones_per_language: 2,
        feat_dim: 3,
        utterances_per_language: 10,
        frames_min: 6,
        frames_max: 10,
        ..CorpusConfig::default()
    };
    let data = gen_corpus(&CorpusSpec::from_config(&cfg).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?
        .train;
    // 18 utterances, batch 9: two steps per epoch
    let train = TrainConfig { epochs: 50, batch_size: 9, lr_halving: false, ..TrainConfig::default() };
    let before = model.params.asr_tower().w_ic.clone();
    mtrnet_core::trainer::train(&mut model, &data, &[], &train).map_err(|e| e.to_string())?;
    let tower = model.params.asr_tower();
    ensure(tower.w_ic != before, || "peepholes did not train".into())?;
    let n = spec.asr.cell;
    let mut shapes = Vec::new();
    tower.visit(&mut |name, d| {
        if name.starts_with("w_") && name.ends_with('c') {
            shapes.push((name.to_string(), d.len()));
        }
    });
    ensure(shapes.len() == 3 && shapes.iter().all(|(_, len)| *len == n), || {
        format!("peephole blocks {shapes:?}, expected 3 of length {n}")
    })?;
    probes += peephole_probe(tower, &mut rng)?;
    Ok(format!("{probes} off-diagonal probes unchanged; peepholes stay {n}-vectors after 100 steps"))
}

// 5
fn end_to_end_determinism() -> Outcome {
    let tmp = tempfile::TempDir::new().map_err(|e| e.to_string())?;
    let run = |dir: &Path| -> Result<(Vec<u8>, String), String> {
        let s = |p: &Path| p.to_str().unwrap().to_string();
        let call = |args: Vec<String>| -> Result<String, String> {
            let refs: Vec<&str> = args.iter().map(String::as_str).collect();
            let out = mtrnet(&refs);
            ensure(out.status.success(), || {
                format!("mtrnet {refs:?}: {}", String::from_utf8_lossy(&out.stderr))
            })?;
            Ok(String::from_utf8_lossy(&out.stdout).into_owned())
        };
        call(vec!["gen".into(), "--out-dir".into(), s(dir)])?;
        let ckpt = dir.join("model.ckpt");
        call(vec![
            "train".into(),
            "--train".into(),
            s(&dir.join("train.txt")),
            "--out".into(),
            s(&ckpt),
            "--epochs".into(),
            "3".into(),
        ])?;
        let table = call(vec![
            "eval".into(),
            "--checkpoint".into(),
            s(&ckpt),
            "--test".into(),
            s(&dir.join("test.txt")),
            "--masked".into(),
        ])?;
        Ok((std::fs::read(&ckpt).map_err(|e| e.to_string())?, table))
    };
    let (c1, t1) = run(&tmp.path().join("one"))?;
    let (c2, t2) = run(&tmp.path().join("two"))?;
    ensure(c1 == c2, || "checkpoints differ".into())?;
    ensure(t1 == t2, || format!("tables differ:\n{t1}\n{t2}"))?;
    Ok(format!("checkpoints ({} bytes) and metric tables identical", c1.len()))
}

// 6
const LEARNING_SEEDS: [u64; 3] = [1, 2, 3];

fn learning_experiment(seed: u64) -> Experiment {
    Experiment {
        spec: ModelSpec {
            mode: Mode::Multitask,
            feat_dim: 8,
            splice_context: 2,
            asr: TowerSize { cell: 64, rproj: 16, pproj: 16 },
            lr: TowerSize { cell: 32, rproj: 8, pproj: 8 },
            feedback: FeedbackConfig::parse("g:r").unwrap(),
            phone_classes: 20,
            language_classes: 2,
            target_delay: 0,
            lambda_asr: 1.0,
            lambda_lr: 1.0,
        },
        init: InitConfig { seed: seed + 6, scale: 0.1, forget_bias: 1.0 },
        train: TrainConfig {
            learning_rate: 0.05,
            momentum: 0.9,
            clip_norm: 5.0,
            epochs: 25,
            batch_size: 8,
            seed,
            lr_halving: false,
        },
        holdout_fraction: 0.1,
    }
}

fn pooled_fer(report: &MetricsReport, test: &[Utterance]) -> f64 {
    let mut frames = vec![0usize; report.fer.len()];
    for u in test {
        frames[u.language] += u.len();
    }
    let errors: f64 = report.fer.iter().zip(&frames).map(|(r, &n)| r * n as f64).sum();
    errors / frames.iter().sum::<usize>() as f64
}

fn majority_class_error(test: &[Utterance], classes: usize, delay: usize) -> f64 {
    let mut counts = vec![0usize; classes];
    for u in test {
        for t in 0..u.len() {
            counts[u.phones[aligned_target(t, delay)]] += 1;
        }
    }
    let total: usize = counts.iter().sum();
    1.0 - *counts.iter().max().unwrap() as f64 / total as f64
}

fn synthetic_learning(trained: &RefCell<Vec<Model>>) -> Outcome {
    let start = Instant::now();
    let corpus = gen_corpus(&CorpusSpec::from_config(&CorpusConfig::default()).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let majority = majority_class_error(&corpus.test, 20, 0);
    let mut passed = 0;
    let mut notes = Vec::new();
    for seed in LEARNING_SEEDS {
        let exp = learning_experiment(seed);
        let (base, _) = train_model(&exp, Mode::SingleBilingual, FeedbackConfig::none(), &corpus.train)
            .map_err(|e| e.to_string())?;
        let base_r = evaluate(&base, &corpus.test, "baseline").map_err(|e| e.to_string())?;
        let (gr, _) = train_model(&exp, Mode::Multitask, exp.spec.feedback.clone(), &corpus.train)
            .map_err(|e| e.to_string())?;
        let gr_r = evaluate(&gr, &corpus.test, "g:r").map_err(|e| e.to_string())?;
        trained.borrow_mut().push(gr);

        let base_fer = pooled_fer(&base_r, &corpus.test);
        let ok = base_fer < majority && gr_r.language_accuracy >= 0.95 && gr_r.confusion < base_r.confusion;
        passed += ok as usize;
        notes.push(format!(
            "seed {seed} {}: baseline fer {base_fer:.3} (majority {majority:.3}) confusion {:.4}; g:r lang_acc {:.4} confusion {:.4}",
            if ok { "ok" } else { "miss" },
            base_r.confusion,
            gr_r.language_accuracy,
            gr_r.confusion
        ));
    }
    let secs = start.elapsed().as_secs_f64();
    for n in &notes {
        println!("    {n}");
    }
    ensure(passed >= 2, || format!("{passed} of 3 seeds met every condition"))?;
    ensure(secs < 15.0 * 60.0, || format!("took {secs:.0}s"))?;
    Ok(format!("{passed} of 3 seeds, {secs:.0}s"))
}

// 7
fn masking_never_hurts(trained: &RefCell<Vec<Model>>) -> Outcome {
    let cfg = CorpusConfig { seed: 3, utterances_per_language: 40, ..CorpusConfig::default() };
    let corpus = gen_corpus(&CorpusSpec::from_config(&cfg).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let mut models: Vec<Model> = trained.borrow().clone();
    for (k, fb) in FeedbackConfig::sweep_grid().into_iter().enumerate() {
        let mut spec = learning_experiment(1).spec;
        spec.feedback = fb;
        spec.target_delay = k % 3;
        spec.asr = TowerSize { cell: 16, rproj: 4, pproj: 4 };
        spec.lr = TowerSize { cell: 8, rproj: 2, pproj: 2 };
        models.push(Model::init(spec, &InitConfig { seed: k as u64, scale: 0.8, forget_bias: 1.0 }).map_err(|e| e.to_string())?);
    }
    let (mut utts, mut strict) = (0, 0);
    for model in &models {
        // through the on-disk format, as a checkpoint
        let model = checkpoint::decode(&checkpoint::encode(model)).map_err(|e| e.to_string())?;
        let partition = model.spec.partition();
        for u in corpus.test.iter().chain(&corpus.train) {
            if u.phones.iter().any(|&p| partition.language_of(p) != u.language) {
                continue;
            }
            let rec = infer(&model, u).map_err(|e| e.to_string())?;
            let delay = model.spec.target_delay;
            let (plain, _) = frame_errors(&rec, u, delay, &partition, Masking::None).map_err(|e| e.to_string())?;
            let (masked, _) = frame_errors(&rec, u, delay, &partition, Masking::Oracle(u.language))
                .map_err(|e| e.to_string())?;
            ensure(masked <= plain, || format!("{}: masked {masked} > unmasked {plain}", u.id))?;
            utts += 1;
            strict += (masked < plain) as usize;
        }
    }
    Ok(format!(
        "{} checkpoints, {utts} utterance checks, masked < unmasked on {strict}",
        models.len()
    ))
}

// 8
fn sweep_structure() -> Outcome {
    let tmp = tempfile::TempDir::new().map_err(|e| e.to_string())?;
    let dir = tmp.path().to_str().unwrap();
    let out = mtrnet(&[
        "gen", "--out-dir", dir, "--utterances-per-language", "20", "--frames-min", "10", "--frames-max", "20",
    ]);
    ensure(out.status.success(), || String::from_utf8_lossy(&out.stderr).into_owned())?;
    let train = format!("{dir}/train.txt");
    let test = format!("{dir}/test.txt");
    let args = [
        "sweep", "--train", &train, "--test", &test, "--epochs", "2", "--cell-dim", "8", "--proj-dim", "4",
        "--lr-cell-dim", "4", "--lr-proj-dim", "2",
    ];
    let run = || -> Result<String, String> {
        let out = mtrnet(&args);
        ensure(out.status.success(), || String::from_utf8_lossy(&out.stderr).into_owned())?;
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    };
    let first = run()?;
    let second = run()?;
    ensure(first == second, || "sweep tables differ between runs".into())?;
    let labels: Vec<&str> = first
        .lines()
        .filter(|l| !l.starts_with('#'))
        .filter_map(|l| l.split_whitespace().next())
        .collect();
    let mut expected = vec!["baseline".to_string()];
    expected.extend(FeedbackConfig::sweep_grid().iter().map(|c| c.to_string()));
    ensure(labels == expected, || format!("rows {labels:?}"))?;
    Ok(format!("13 identical rows: {}", labels.join(" ")))
}

fn main() -> ExitCode {
    let trained = RefCell::new(Vec::new());
    let checks: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("gradient exactness", Box::new(gradient_exactness)),
        ("decoupling equivalence", Box::new(decoupling_equivalence)),
        ("augmentation equivalence", Box::new(augmentation_equivalence)),
        ("diagonal peepholes", Box::new(diagonal_peepholes)),
        ("end-to-end determinism", Box::new(end_to_end_determinism)),
        ("synthetic-task learning", Box::new(|| synthetic_learning(&trained))),
        ("language-aware masking", Box::new(|| masking_never_hurts(&trained))),
        ("sweep structure", Box::new(sweep_structure)),
    ];
    let mut failures = 0;
    for (k, (name, check)) in checks.iter().enumerate() {
        let start = Instant::now();
        let outcome = check();
        let took = start.elapsed();
        match outcome {
            Ok(detail) => println!("PASS [{}] {name}: {detail} ({took:.1?})", k + 1),
            Err(why) => {
                failures += 1;
                println!("FAIL [{}] {name}: {why} ({took:.1?})", k + 1);
            }
        }
    }
    println!("acceptance: {} of {} criteria passed", checks.len() - failures, checks.len());
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
