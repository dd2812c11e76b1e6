//! Acceptance suite: one PASS/FAIL line per criterion.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use ndarray::{Array2, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use intformer::checkpoint::{encode, CheckpointMeta};
use intformer::dataset::{
    compute_class_weight, extract_windows, generate_synthetic, split_by_video, windows_for_tracks, DatasetSplit,
    SignalSpec, SplitRatios, SyntheticFrames, TrackAnnotation, WindowOptions, ANNOTATION_SCHEMA_VERSION,
};
use intformer::evaluation::{
    ablation_run, accuracy, assemble_all, auc_roc, f1_score, measure_throughput, AblationOptions,
};
use intformer::preprocess::{InputGeometry, NormStats, Preprocessor};
use intformer::training::{history_jsonl, train, weighted_bce, weighted_bce_grad, Profile, TrainConfig};
use intformer::video_encoder::{learnable_shift, learnable_shift_backward};
use intformer::{FeatureMask, IntFormer, IntFormerConfig};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed < limit, || format!("took {elapsed:.1?}, limit {limit:?}"))
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let rel = |num: f64, ana: f64, floor: f64| (num - ana).abs() / num.abs().max(ana.abs()).max(floor);
    let mut worst_shift = 0.0f64;
    let mut worst_bce = 0.0f64;
    let h = 1e-6;
    for _ in 0..100 {
        let dim = (rng.random_range(2..5), rng.random_range(1..4), rng.random_range(3..7), rng.random_range(3..7));
        let x = Array4::from_shape_fn(dim, |_| rng.random_range(-1.0..1.0));
        let offsets = Array2::from_shape_fn((dim.1, 3), |_| rng.random_range(-1.9..1.9));
        let probe = Array4::from_shape_fn(dim, |_| rng.random_range(-1.0..1.0));
        let loss = |x: &Array4<f64>, o: &Array2<f64>| (&learnable_shift(x.view(), o.view()).unwrap() * &probe).sum();
        let (dx, doff) = learnable_shift_backward(x.view(), offsets.view(), probe.view()).map_err(|e| e.to_string())?;
        let idx = (
            rng.random_range(0..dim.0),
            rng.random_range(0..dim.1),
            rng.random_range(0..dim.2),
            rng.random_range(0..dim.3),
        );
        let (mut xp, mut xm) = (x.clone(), x.clone());
        xp[idx] += h;
        xm[idx] -= h;
        let num = (loss(&xp, &offsets) - loss(&xm, &offsets)) / (2.0 * h);
        worst_shift = worst_shift.max(rel(num, dx[idx], 1e-6));
        for k in 0..3 {
            let oi = (rng.random_range(0..dim.1), k);
            let (mut op, mut om) = (offsets.clone(), offsets.clone());
            op[oi] += h;
            om[oi] -= h;
            let num = (loss(&x, &op) - loss(&x, &om)) / (2.0 * h);
            worst_shift = worst_shift.max(rel(num, doff[oi], 1e-6));
        }

        let z: f64 = rng.random_range(-15.0..15.0);
        let y = rng.random_range(0..2u8);
        let w = rng.random_range(0.1..10.0);
        let hz = 1e-5;
        let num = (weighted_bce(z + hz, y, w).unwrap() - weighted_bce(z - hz, y, w).unwrap()) / (2.0 * hz);
        worst_bce = worst_bce.max(rel(num, weighted_bce_grad(z, y, w).unwrap(), 1e-3));
    }
    ensure(worst_shift < 1e-4, || format!("shift relative error {worst_shift:.2e}"))?;
    ensure(worst_bce < 1e-6, || format!("loss relative error {worst_bce:.2e}"))?;
    within(start.elapsed(), Duration::from_secs(30))?;
    Ok(format!(
        "100 cases, max rel err shift {worst_shift:.1e}, loss {worst_bce:.1e}, {:.1?}",
        start.elapsed()
    ))
}

fn loss_formula() -> Outcome {
    let ln2 = std::f64::consts::LN_2;
    let a = weighted_bce(0.0f64, 1, 4.0).unwrap();
    ensure((a - 4.0 * ln2).abs() <= 1e-12, || format!("weighted_bce(0,1,4) = {a}"))?;
    for w in [1e-3, 0.5, 1.0, 4.0, 17.0, 1e6] {
        let b = weighted_bce(0.0f64, 0, w).unwrap();
        ensure((b - ln2).abs() <= 1e-12, || format!("weighted_bce(0,0,{w}) = {b}"))?;
    }
    Ok(format!("4 ln 2 = {a:.12}"))
}

fn shape_contracts() -> Outcome {
    let spec = SignalSpec::all_channels();
    let tracks = generate_synthetic(4, &spec, 5).map_err(|e| e.to_string())?;
    let frames = SyntheticFrames::new(&tracks, &spec, 5);
    let windows = windows_for_tracks(&tracks, &WindowOptions { stride: 31, ..WindowOptions::default() }).unwrap();
    let geometry = InputGeometry::default();
    let stats = NormStats::fit(&windows, &geometry);
    let pre = Preprocessor::new(&geometry, &stats, Some(&frames));
    let b = pre.assemble::<f32>(&windows[0], FeatureMask::ALL).map_err(|e| e.to_string())?;
    let v = b.video_stack.as_ref().ok_or("no video stack")?.dim();
    ensure(v == (24, 112, 112), || format!("video stack {v:?}"))?;
    let (bx, po, sp) = (
        b.box_seq.as_ref().unwrap().dim(),
        b.pose_seq.as_ref().unwrap().dim(),
        b.speed_seq.as_ref().unwrap().dim(),
    );
    ensure(bx == (16, 4) && po == (16, 36) && sp == (16, 1), || format!("sequences {bx:?} {po:?} {sp:?}"))?;
    Ok(format!("video {v:?}, box {bx:?}, pose {po:?}, speed {sp:?}"))
}

fn metric_oracles() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut done = 0;
    while done < 1000 {
        let n = rng.random_range(2..=50);
        let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let preds: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let levels = rng.random_range(2..20);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 / levels as f64).collect();
        let (mut tp, mut fp, mut tn, mut fne) = (0usize, 0usize, 0usize, 0usize);
        for (&p, &y) in preds.iter().zip(&labels) {
            match (p, y) {
                (1, 1) => tp += 1,
                (1, 0) => fp += 1,
                (0, 0) => tn += 1,
                _ => fne += 1,
            }
        }
        let acc = (tp + tn) as f64 / n as f64;
        let f1 = if tp == 0 { 0.0 } else { 2.0 * tp as f64 / (2 * tp + fp + fne) as f64 };
        let got_acc = accuracy(&preds, &labels).unwrap();
        ensure(got_acc == acc, || format!("accuracy {got_acc} vs {acc}"))?;
        let got_f1 = f1_score(&preds, &labels).unwrap();
        ensure((got_f1 - f1).abs() <= 4.0 * f64::EPSILON, || format!("f1 {got_f1} vs {f1}"))?;
        if labels.contains(&0) && labels.contains(&1) {
            let (mut num, mut den) = (0.0, 0.0);
            for i in 0..n {
                for j in 0..n {
                    if labels[i] == 1 && labels[j] == 0 {
                        den += 1.0;
                        num += if scores[i] > scores[j] {
                            1.0
                        } else if scores[i] == scores[j] {
                            0.5
                        } else {
                            0.0
                        };
                    }
                }
            }
            let got = auc_roc(&scores, &labels).unwrap();
            ensure((got - num / den).abs() < 1e-9, || format!("auc {got} vs {}", num / den))?;
        }
        done += 1;
    }
    within(start.elapsed(), Duration::from_secs(60))?;
    Ok(format!("1000 instances, {:.1?}", start.elapsed()))
}

fn class_weight() -> Outcome {
    let spec = SignalSpec {
        class_ratio: [4, 1],
        ..SignalSpec::speed_only()
    };
    let tracks = generate_synthetic(50, &spec, 7).map_err(|e| e.to_string())?;
    let windows = windows_for_tracks(&tracks, &WindowOptions::default()).unwrap();
    let w = compute_class_weight(&windows).map_err(|e| e.to_string())?;
    ensure(w.value() == 4.0, || format!("W_c = {}", w.value()))?;
    Ok(format!("{} non-crossing / {} crossing windows, W_c = {}", w.non_crossing, w.crossing, w.value()))
}

fn random_track(rng: &mut ChaCha8Rng, i: usize) -> TrackAnnotation {
    let len = rng.random_range(1..140);
    let first = rng.random_range(0..500u32);
    let event_idx = rng.random_range(0..len);
    TrackAnnotation {
        schema_version: ANNOTATION_SCHEMA_VERSION,
        track_id: format!("r{i}"),
        video_id: format!("v{i}"),
        frames: (first..first + len as u32).collect(),
        boxes: vec![[10.0, 10.0, 50.0, 120.0]; len],
        pose: vec![vec![0.0; 36]; len],
        ego_speed: Some(vec![10.0; len]),
        label: rng.random_range(0..2),
        event_frame: first + event_idx as u32,
    }
}

fn window_extraction() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let opts = WindowOptions::default();
    let mut total = 0;
    for i in 0..200 {
        let t = random_track(&mut rng, i);
        let mut expected = Vec::new();
        for start in 0..t.frames.len() {
            let Some(&last) = t.frames.get(start + opts.obs_len - 1) else { break };
            if t.event_frame >= last {
                let tte = t.event_frame - last;
                if (opts.tte_min..=opts.tte_max).contains(&tte) {
                    expected.push((t.frames[start], tte));
                }
            }
        }
        let got: Vec<(u32, u32)> = extract_windows(&t, &opts)
            .map_err(|e| e.to_string())?
            .iter()
            .map(|w| (w.start_frame, w.tte))
            .collect();
        ensure(got == expected, || format!("track {i}: {got:?} vs {expected:?}"))?;
        total += got.len();
    }
    Ok(format!("200 tracks, {total} windows"))
}

fn speed_windows(n_tracks: usize, stride: usize, seed: u64) -> Vec<intformer::dataset::ObservationWindow> {
    let tracks = generate_synthetic(n_tracks, &SignalSpec::speed_only(), seed).unwrap();
    windows_for_tracks(&tracks, &WindowOptions { stride, ..WindowOptions::default() }).unwrap()
}

fn overfit_sanity() -> Outcome {
    let start = Instant::now();
    let windows = speed_windows(25, 4, 11);
    ensure(windows.len() == 200, || format!("{} windows", windows.len()))?;
    let split = DatasetSplit {
        train: windows,
        val: Vec::new(),
        test: Vec::new(),
        train_videos: Vec::new(),
        val_videos: Vec::new(),
        test_videos: Vec::new(),
    };
    let geometry = InputGeometry::default();
    let stats = NormStats::fit(&split.train, &geometry);
    let pre = Preprocessor::new(&geometry, &stats, None);
    let model = IntFormer::<f32>::new(IntFormerConfig::default().with_mask(FeatureMask::new(false, false, false, true)), 11)
        .map_err(|e| e.to_string())?;
    let config = TrainConfig {
        epochs: 30,
        seed: 11,
        ..TrainConfig::profile(Profile::Synthetic)
    };
    let out = train(model, &split, &pre, &config, |_| {}).map_err(|e| e.to_string())?;
    let (epoch, acc) = out
        .history
        .iter()
        .map(|r| (r.epoch, r.train_acc))
        .find(|&(_, a)| a >= 0.95)
        .unwrap_or_else(|| (0, out.history.iter().map(|r| r.train_acc).fold(0.0, f64::max)));
    ensure(epoch > 0, || format!("best train accuracy {acc:.3} after 30 epochs"))?;
    within(start.elapsed(), Duration::from_secs(300))?;
    Ok(format!("train acc {acc:.3} at epoch {epoch}, {:.1?}", start.elapsed()))
}

fn ablation_fidelity() -> Outcome {
    let start = Instant::now();
    let defaults = AblationOptions::default();
    ensure(defaults.masks.len() == 15, || format!("{} default masks", defaults.masks.len()))?;
    let spec = SignalSpec::speed_only();
    let tracks = generate_synthetic(40, &spec, 21).map_err(|e| e.to_string())?;
    let frames = SyntheticFrames::new(&tracks, &spec, 21);
    let split = split_by_video(&tracks, SplitRatios::new(0.6, 0.2, 0.2), 21, &WindowOptions { stride: 6, ..WindowOptions::default() })
        .map_err(|e| e.to_string())?;
    let base = IntFormerConfig::compact();
    let stats = NormStats::fit(&split.train, &base.input);
    let pre = Preprocessor::new(&base.input, &stats, Some(&frames));
    let config = TrainConfig {
        epochs: 8,
        ..TrainConfig::profile(Profile::Synthetic)
    };
    let table = ablation_run::<f32>(&base, &config, &split, &pre, &defaults).map_err(|e| e.to_string())?;
    let masks = table.masks();
    ensure(masks == defaults.masks, || "row order differs from the study order".into())?;
    let failed: Vec<_> = table.rows.iter().filter(|r| r.report.is_none()).collect();
    ensure(failed.is_empty(), || format!("{} failed rows: {:?}", failed.len(), failed[0].status))?;
    let speed = table.mean_auc(FeatureMask::new(false, false, false, true)).ok_or("no speed AUC")?;
    let pose = table.mean_auc(FeatureMask::new(false, false, true, false)).ok_or("no pose AUC")?;
    println!("{}", table.render());
    ensure(speed - pose >= 0.2, || format!("speed AUC {speed:.3} vs pose AUC {pose:.3}"))?;
    Ok(format!(
        "15 combinations x 3 seeds, speed AUC {speed:.3} vs pose AUC {pose:.3}, {:.1?}",
        start.elapsed()
    ))
}

fn budget() -> Outcome {
    let model = IntFormer::<f32>::new(IntFormerConfig::default(), 0).map_err(|e| e.to_string())?;
    let n = model.parameter_count();
    ensure(n <= 5_000_000, || format!("{n} parameters"))?;
    let spec = SignalSpec::all_channels();
    let tracks = generate_synthetic(8, &spec, 3).map_err(|e| e.to_string())?;
    let frames = SyntheticFrames::new(&tracks, &spec, 3);
    let windows = windows_for_tracks(&tracks, &WindowOptions { stride: 31, ..WindowOptions::default() }).unwrap();
    let geometry = InputGeometry::default();
    let stats = NormStats::fit(&windows, &geometry);
    let pre = Preprocessor::new(&geometry, &stats, Some(&frames));
    let bundles = assemble_all::<f32>(&windows[..8], &pre, FeatureMask::ALL).map_err(|e| e.to_string())?;
    let sps = measure_throughput(&model, &bundles, 1, 3).map_err(|e| e.to_string())?;
    ensure(sps > 0.0, || "non-positive throughput".into())?;
    Ok(format!("{n} parameters, {sps:.1} sequences/s (full model, batch 8)"))
}

fn determinism() -> Outcome {
    let run = || -> Result<(String, Vec<u8>), String> {
        let tracks = generate_synthetic(12, &SignalSpec::all_channels(), 31).map_err(|e| e.to_string())?;
        let frames = SyntheticFrames::new(&tracks, &SignalSpec::all_channels(), 31);
        let split = split_by_video(&tracks, SplitRatios::default(), 31, &WindowOptions { stride: 10, ..WindowOptions::default() })
            .map_err(|e| e.to_string())?;
        let base = IntFormerConfig::compact();
        let stats = NormStats::fit(&split.train, &base.input);
        let pre = Preprocessor::new(&base.input, &stats, Some(&frames));
        let model = IntFormer::<f32>::new(base.clone(), 31).map_err(|e| e.to_string())?;
        let config = TrainConfig {
            epochs: 2,
            seed: 31,
            ..TrainConfig::profile(Profile::Synthetic)
        };
        let out = train(model, &split, &pre, &config, |_| {}).map_err(|e| e.to_string())?;
        let meta = CheckpointMeta::new(Profile::Synthetic, 31, out.best_epoch);
        Ok((history_jsonl(&out.history), encode(&out.best, &stats, &meta)))
    };
    let (h1, c1) = run()?;
    let (h2, c2) = run()?;
    ensure(h1 == h2, || "history differs".into())?;
    ensure(c1 == c2, || "checkpoint differs".into())?;
    Ok(format!("history {} bytes, checkpoint {} bytes identical", h1.len(), c1.len()))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("gradient correctness", gradient_correctness),
        ("loss formula", loss_formula),
        ("shape contracts", shape_contracts),
        ("metric oracles", metric_oracles),
        ("class weight", class_weight),
        ("window extraction", window_extraction),
        ("overfit sanity", overfit_sanity),
        ("ablation shape fidelity", ablation_fidelity),
        ("budget", budget),
        ("determinism", determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failures = 0;
    for (name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        match check() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failures += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
