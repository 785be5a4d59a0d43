//! Acceptance suite. Runs every criterion, prints one line per criterion and
//! exits nonzero if any of them fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use ndarray::{array, Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use trajkit::classify::{Classifier, ClassifyConfig};
use trajkit::eval::{evaluate, per_frame_accuracy, EvalConfig, PredTrack};
use trajkit::fusion::*;
use trajkit::ingest::{write_weights, GroundTruthTrack};
use trajkit::synth::{gen_scene, make_train_pairs, random_occlusions, Augmentations, SynthConfig, SynthScene};
use trajkit::tcr::{run_sequence, update_memory, TrackerConfig, Track};
use trajkit::train::*;

type Outcome = Result<String, String>;

/// Subcommand name, its arguments and the primary outputs to compare.
type Case<'a> = (&'a str, Vec<String>, Vec<&'a str>);

type Check<'a> = Box<dyn Fn() -> Outcome + 'a>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

fn pred_tracks(tracks: &[Track], label: impl Fn(&Track) -> Option<u32>) -> Vec<PredTrack> {
    tracks
        .iter()
        .map(|t| PredTrack {
            track_id: t.id,
            label: label(t),
            boxes: t.observations.iter().map(|o| (o.frame, o.bbox)).collect(),
        })
        .collect()
}

fn identity_sets(scene: &SynthScene, tracks: &[Track]) -> Vec<BTreeSet<u64>> {
    tracks
        .iter()
        .map(|t| {
            t.observations
                .iter()
                .filter_map(|o| scene.det_identity[&o.frame][o.det_index])
                .collect()
        })
        .collect()
}

fn c1_equation_fidelity() -> Outcome {
    let start = Instant::now();
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    let mut note = |name: &'static str, e: f64| {
        let w = worst.entry(name).or_insert(0.0);
        *w = w.max(e);
    };
    let instances = 60;
    for seed in 0..instances {
        let mut r = common::rng(1000 + seed);
        let d = r.random_range(1..=16);
        let n = r.random_range(1..=4);
        let heads = common::rand_heads(&mut r, d);
        let x = common::rand_mat(&mut r, n, d, 1.0);
        let xm = common::mat(&x);
        let ln1 = common::rand_ln(&mut r, d);
        let ln2 = common::rand_ln(&mut r, d);
        let attn = common::rand_attn(&mut r, d);
        let mlp = common::rand_mlp(&mut r, d, 4 * d);
        let cat = common::rand_concat(&mut r, d);
        let lang = common::rand_vec(&mut r, d, 1.0);

        let mem: Vec<f32> = (0..d).map(|_| r.random_range(-1.0f32..1.0)).collect();
        let det: Vec<f32> = (0..d).map(|_| r.random_range(-1.0f32..1.0)).collect();
        let alpha = r.random_range(0.0..1.0);
        let got: Vec<f64> = update_memory(&mem, &det, alpha).unwrap().iter().map(|&v| v as f64).collect();
        note("update_memory", common::rel_err(&got, &common::update_memory(&mem, &det, alpha)));

        let fa = common::rand_vec(&mut r, d, 1.0).to_vec();
        let fb = common::rand_vec(&mut r, d, 1.0).to_vec();
        for y in [0u8, 1] {
            let got = contrastive_loss(&fa, &fb, y, 0.5, Distance::Euclidean).unwrap();
            note("contrastive_loss", common::rel_err(&[got], &[common::contrastive_loss(&fa, &fb, y, 0.5)]));
        }

        note("layer_norm", common::rel_err_mat(&common::mat(&layer_norm(x.view(), &ln1)), &common::layer_norm(&xm, &ln1)));
        note(
            "self_attention",
            common::rel_err_mat(&common::mat(&self_attention(x.view(), &attn, heads).unwrap()), &common::attention(&xm, &xm, &attn, heads)),
        );
        note("mlp_block", common::rel_err_mat(&common::mat(&mlp_block(x.view(), &mlp).unwrap()), &common::mlp(&xm, &mlp)));
        let v = |a: Array1<f64>| a.to_vec();
        note("fuse_average", common::rel_err(&v(fuse_average(x.view()).unwrap()), &common::fuse_average(&xm)));
        note(
            "fuse_attention",
            common::rel_err(&v(fuse_attention(x.view(), &attn, heads).unwrap()), &common::fuse_attention(&xm, &attn, heads)),
        );
        note(
            "fuse_self",
            common::rel_err(
                &v(fuse_self(x.view(), &ln1, &attn, &ln2, &mlp, heads).unwrap()),
                &common::fuse_self(&xm, &ln1, &attn, &ln2, &mlp, heads),
            ),
        );
        note(
            "fuse_self_noresidual",
            common::rel_err(
                &v(fuse_self_noresidual(x.view(), &attn, &mlp, heads).unwrap()),
                &common::fuse_self_noresidual(&xm, &attn, &mlp, heads),
            ),
        );
        note("fuse_cross", common::rel_err(&v(fuse_cross(x.view(), &attn, heads).unwrap()), &common::fuse_cross(&xm, &attn, heads)));
        let got = concat_score(x.view(), lang.view(), &attn, &cat, heads).unwrap();
        let want = common::concat_score(&xm, lang.as_slice().unwrap(), &attn, &cat, heads);
        note("concat_score", common::rel_err(&[got], &[want]));
    }
    let elapsed = start.elapsed();
    let max = worst.values().copied().fold(0.0, f64::max);
    let detail = format!(
        "{instances} instances, max rel err {max:.2e} ({}), {:.2}s",
        worst.iter().map(|(k, v)| format!("{k} {v:.1e}")).collect::<Vec<_>>().join(", "),
        secs(elapsed)
    );
    check(max < 1e-6 && elapsed < Duration::from_secs(10), detail)
}

fn c2_gradient_check() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for seed in 0..50u64 {
        let mut r = common::rng(2000 + seed);
        let d = r.random_range(2..=8);
        let n = r.random_range(1..=4);
        let hidden = 4 * d;
        let params = SelfFusionParams {
            ln1: common::rand_ln(&mut r, d),
            attn: common::rand_attn(&mut r, d),
            ln2: common::rand_ln(&mut r, d),
            mlp: common::rand_mlp(&mut r, d, hidden),
        };
        let pair = TrainPair {
            clip_a: common::rand_mat(&mut r, n, d, 1.0),
            clip_b: common::rand_mat(&mut r, n, d, 1.0),
            y: (seed % 2) as u8,
        };
        let cfg = TrainConfig { d, hidden, ..Default::default() };
        let (_, g) = analytic_gradients(&pair, &params, &cfg).unwrap();
        let mut work = params.clone();
        let num = numeric_gradient(
            |t| {
                work.set_flat(t);
                pair_loss(&pair, &work, &cfg).unwrap()
            },
            &params.to_flat(),
            1e-5,
        );
        for (a, b) in g.to_flat().iter().zip(&num) {
            worst = worst.max((a - b).abs() / a.abs().max(b.abs()).max(1e-6));
        }
    }
    let elapsed = start.elapsed();
    check(
        worst < 1e-4 && elapsed < Duration::from_secs(30),
        format!("50 instances, max rel err {worst:.2e}, {:.2}s", secs(elapsed)),
    )
}

fn c3_zero_noise() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for seed in 0..3u64 {
        let cfg = SynthConfig { seed, ..Default::default() };
        let scene = gen_scene(&cfg).unwrap();
        let start = Instant::now();
        let tracks = run_sequence(&scene.detections, &TrackerConfig::default()).unwrap();
        let classifier = Classifier::new(
            &scene.vocabulary,
            None,
            ClassifyConfig { fusion: FusionKind::Average, ..Default::default() },
        )
        .unwrap();
        let preds = pred_tracks(&tracks, |t| Some(classifier.classify(t).unwrap().label));
        let rep = evaluate(&preds, &scene.gt_tracks, &EvalConfig::default()).overall;
        let elapsed = start.elapsed();
        let sets = identity_sets(&scene, &tracks);
        let switches = sets.iter().map(|s| s.len().saturating_sub(1)).sum::<usize>()
            + (sets.len() - sets.iter().flatten().collect::<BTreeSet<_>>().len());
        let pass = tracks.len() == 20
            && switches == 0
            && rep.loc_a == 100.0
            && rep.ass_a == 100.0
            && rep.cls_a == 100.0
            && elapsed < Duration::from_secs(1);
        ok &= pass;
        lines.push(format!(
            "seed {seed}: {} tracks, {switches} switches, LocA {} AssA {} ClsA {}, {:.3}s",
            tracks.len(),
            rep.loc_a,
            rep.ass_a,
            rep.cls_a,
            secs(elapsed)
        ));
    }
    check(ok, lines.join("; "))
}

fn occlusion_scene(seed: u64) -> SynthScene {
    let n_ids = 10;
    gen_scene(&SynthConfig {
        n_identities: n_ids,
        n_frames: 100,
        n_categories: 4,
        n_novel: 2,
        embed_dim: 8,
        noise_sigma: 0.2,
        identity_spread: 1.0,
        occlusions: random_occlusions(n_ids, 100, (5, 10), seed + 1000),
        seed,
        ..Default::default()
    })
    .unwrap()
}

fn c4_bank_under_occlusion() -> Outcome {
    let mut deltas = Vec::new();
    let (mut sum_bank, mut sum_mem) = (0.0, 0.0);
    for seed in 0..10u64 {
        let scene = occlusion_scene(seed);
        let ass = |n_bank: usize| {
            let tracks = run_sequence(&scene.detections, &TrackerConfig { n_bank, ..Default::default() }).unwrap();
            let preds = pred_tracks(&tracks, |_| None);
            evaluate(&preds, &scene.gt_tracks, &EvalConfig::default()).overall.ass_a
        };
        let (a15, a1) = (ass(15), ass(1));
        sum_bank += a15;
        sum_mem += a1;
        deltas.push(a15 - a1);
    }
    let (m15, m1) = (sum_bank / 10.0, sum_mem / 10.0);
    check(
        m15 > m1,
        format!(
            "mean AssA n_bank=15 {m15:.2} vs n_bank=1 {m1:.2}; per-seed deltas [{}]",
            deltas.iter().map(|d| format!("{d:+.2}")).collect::<Vec<_>>().join(", ")
        ),
    )
}

fn c5_voting_over_frames() -> Outcome {
    let mut margins = Vec::new();
    let mut all_positive = true;
    for seed in 0..10u64 {
        let scene = gen_scene(&SynthConfig {
            label_flip_prob: 0.3,
            noise_sigma: 0.05,
            seed,
            ..Default::default()
        })
        .unwrap();
        let tracks = run_sequence(&scene.detections, &TrackerConfig::default()).unwrap();
        let classifier = Classifier::new(
            &scene.vocabulary,
            None,
            ClassifyConfig { fusion: FusionKind::Average, ..Default::default() },
        )
        .unwrap();
        let preds = pred_tracks(&tracks, |t| Some(classifier.classify(t).unwrap().det.label));
        let traj = evaluate(&preds, &scene.gt_tracks, &EvalConfig::default()).overall.cls_a;
        let frame_cat: Vec<BTreeMap<u64, u32>> = tracks
            .iter()
            .map(|t| t.observations.iter().map(|o| (o.frame, o.category_id)).collect())
            .collect();
        let per_frame = per_frame_accuracy(&preds, &scene.gt_tracks, 0.5, |p, f| frame_cat[p].get(&f).copied());
        all_positive &= traj > per_frame;
        margins.push(traj - per_frame);
    }
    let mean = margins.iter().sum::<f64>() / margins.len() as f64;
    check(
        all_positive && mean >= 5.0,
        format!(
            "mean margin {mean:.2} points; per-seed [{}]",
            margins.iter().map(|m| format!("{m:+.1}")).collect::<Vec<_>>().join(", ")
        ),
    )
}

fn c6_fusion_degeneracy() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..100u64 {
        let mut r = common::rng(6000 + seed);
        let d = r.random_range(2..=16);
        let n = r.random_range(1..=6);
        let heads = common::rand_heads(&mut r, d);
        let mut attn = common::rand_attn(&mut r, d);
        let mut mlp = common::rand_mlp(&mut r, d, 4 * d);
        attn.wo.fill(0.0);
        attn.bo.fill(0.0);
        mlp.w2.fill(0.0);
        mlp.b2.fill(0.0);
        let x = common::rand_mat(&mut r, n, d, 1.0);
        let a = fuse_self(x.view(), &common::rand_ln(&mut r, d), &attn, &common::rand_ln(&mut r, d), &mlp, heads).unwrap();
        let b = fuse_average(x.view()).unwrap();
        worst = worst.max(common::rel_err(a.as_slice().unwrap(), b.as_slice().unwrap()));
    }
    check(worst < 1e-6, format!("100 clips, max rel err {worst:.2e}"))
}

fn c7_permutation() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..100u64 {
        let mut r = common::rng(7000 + seed);
        let d = r.random_range(2..=16);
        let n = r.random_range(2..=6);
        let heads = common::rand_heads(&mut r, d);
        let (ln1, ln2) = (common::rand_ln(&mut r, d), common::rand_ln(&mut r, d));
        let attn = common::rand_attn(&mut r, d);
        let mlp = common::rand_mlp(&mut r, d, 4 * d);
        let x = common::rand_mat(&mut r, n, d, 1.0);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut r);
        let xp = x.select(Axis(0), &perm);
        let pairs = [
            (fuse_average(x.view()).unwrap(), fuse_average(xp.view()).unwrap()),
            (fuse_attention(x.view(), &attn, heads).unwrap(), fuse_attention(xp.view(), &attn, heads).unwrap()),
            (
                fuse_self(x.view(), &ln1, &attn, &ln2, &mlp, heads).unwrap(),
                fuse_self(xp.view(), &ln1, &attn, &ln2, &mlp, heads).unwrap(),
            ),
        ];
        for (a, b) in pairs {
            worst = worst.max(common::rel_err(a.as_slice().unwrap(), b.as_slice().unwrap()));
        }
    }
    // Two rows, identity projections. Querying row 1 with row 2 returns
    // row 2's value and the reverse returns row 1's.
    let eye: Array2<f64> = Array2::eye(2);
    let w = AttentionParams { wq: eye.clone(), wk: eye.clone(), wv: eye.clone(), wo: eye, ..AttentionParams::zeros(2) };
    let x = array![[1.0, 0.0], [0.0, 1.0]];
    let xr = array![[0.0, 1.0], [1.0, 0.0]];
    let a = fuse_cross(x.view(), &w, 1).unwrap();
    let b = fuse_cross(xr.view(), &w, 1).unwrap();
    let gap = (&a - &b).iter().map(|v| v.abs()).fold(0.0, f64::max);
    check(
        worst < 1e-6 && gap > 0.5,
        format!("300 permutation checks, max rel err {worst:.2e}; fuse_cross [{:.1}, {:.1}] vs reversed [{:.1}, {:.1}]", a[0], a[1], b[0], b[1]),
    )
}

fn c8_trainability() -> Outcome {
    let start = Instant::now();
    let mut reductions = Vec::new();
    for seed in 0..5u64 {
        let scene = gen_scene(&SynthConfig {
            n_identities: 8,
            n_frames: 30,
            n_categories: 2,
            n_novel: 0,
            embed_dim: 16,
            noise_sigma: 0.05,
            identity_spread: 0.5,
            seed,
            ..Default::default()
        })
        .unwrap();
        let pairs = make_train_pairs(&scene, 5, 64, &Augmentations::default(), seed).unwrap();
        let cfg = TrainConfig { d: 16, steps: 500, batch_size: 8, learning_rate: 0.05, seed, ..Default::default() };
        let init = init_self_fusion(16, 64, seed);
        let before = mean_loss(&pairs, &init, &cfg).unwrap();
        let out = train_fusion(&pairs, init, &cfg).unwrap();
        let after = mean_loss(&pairs, &out.params, &cfg).unwrap();
        reductions.push(1.0 - after / before);
    }
    let elapsed = start.elapsed();
    check(
        reductions.iter().all(|&r| r >= 0.5) && elapsed < Duration::from_secs(60),
        format!(
            "loss reduction per seed [{}], {:.2}s",
            reductions.iter().map(|r| format!("{:.1}%", 100.0 * r)).collect::<Vec<_>>().join(", "),
            secs(elapsed)
        ),
    )
}

fn c9_evaluator() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let (opreds, gts) = common::micro_scene(9000 + seed);
        let preds: Vec<PredTrack> = opreds
            .iter()
            .enumerate()
            .map(|(i, p)| PredTrack { track_id: i as u64 + 1, label: Some(p.label), boxes: p.boxes.clone() })
            .collect();
        let got = evaluate(&preds, &gts, &EvalConfig::default()).overall;
        let (loc, ass, cls) = common::evaluate(&opreds, &gts, 0.5);
        worst = worst.max((got.loc_a - loc).abs()).max((got.ass_a - ass).abs()).max((got.cls_a - cls).abs());
    }
    let a = [0.0, 0.0, 10.0, 10.0];
    let b = [100.0, 0.0, 10.0, 10.0];
    let gt = |id, bx: [f64; 4]| GroundTruthTrack { track_id: id, category_id: 1, boxes: (0..4).map(|f| (f, bx)).collect() };
    let swap = |id, first: [f64; 4], second: [f64; 4]| PredTrack {
        track_id: id,
        label: Some(1),
        boxes: [(0, first), (1, first), (2, second), (3, second)].into_iter().collect(),
    };
    let rep = evaluate(&[swap(1, a, b), swap(2, b, a)], &[gt(1, a), gt(2, b)], &EvalConfig::default()).overall;
    check(
        worst < 1e-9 && rep.loc_a == 100.0 && rep.ass_a < 100.0 && rep.cls_a == 100.0,
        format!(
            "20 micro-scenes, max abs diff {worst:.1e}; id swap LocA {} AssA {:.2} ClsA {}",
            rep.loc_a, rep.ass_a, rep.cls_a
        ),
    )
}

fn run(bin: &str, out: &Path, args: &[&str]) -> Result<(), String> {
    let o = Command::new(bin)
        .args(args)
        .arg("--out-dir")
        .arg(out)
        .output()
        .map_err(|e| e.to_string())?;
    if o.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&o.stderr)))
    }
}

fn c10_throughput(bin: &str, dir: &Path) -> Outcome {
    let d = 768;
    let scene = gen_scene(&SynthConfig { embed_dim: d, noise_sigma: 0.02, seed: 10, ..Default::default() }).unwrap();
    let sdir = dir.join("c10");
    scene.write(&sdir, false).map_err(|e| e.to_string())?;
    let weights = init_fusion_weights(d, 4 * d, 10).to_bundle().map_err(|e| e.to_string())?;
    write_weights(&weights, sdir.join("weights.twb")).map_err(|e| e.to_string())?;
    let det = sdir.join("detections.jsonl");
    let voc = sdir.join("vocabulary.json");
    let w = sdir.join("weights.twb");
    let mut times = Vec::new();
    for _ in 0..3 {
        let start = Instant::now();
        run(
            bin,
            &dir.join("c10_out"),
            &["--threads", "1", "track", "--detections", det.to_str().unwrap(), "--vocab", voc.to_str().unwrap(), "--weights", w.to_str().unwrap()],
        )?;
        times.push(start.elapsed());
    }
    let best = times.iter().min().copied().unwrap();
    check(
        best < Duration::from_secs(1),
        format!(
            "d=768, 20 objects, 100 frames, self fusion: best of 3 {:.3}s ({})",
            secs(best),
            times.iter().map(|t| format!("{:.3}", secs(*t))).collect::<Vec<_>>().join(", ")
        ),
    )
}

fn c11_determinism(bin: &str, dir: &Path) -> Outcome {
    let root = dir.join("c11");
    let base = root.join("base");
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let synth_args = ["--seed", "5", "synth", "--identities", "6", "--frames", "30", "--sigma", "0.1", "--flip", "0.2", "--fp-rate", "0.5"];
    run(bin, &base.join("synth"), &synth_args)?;
    let train_args = ["--seed", "5", "train", "--steps", "40", "--pairs", "16"];
    run(bin, &base.join("train"), &train_args)?;
    let det = s(&base.join("synth/detections.jsonl"));
    let gt = s(&base.join("synth/groundtruth.jsonl"));
    let voc = s(&base.join("synth/vocabulary.json"));
    let w = s(&base.join("train/weights.twb"));
    let track_args: Vec<String> = ["--seed", "5", "track", "--detections", &det, "--vocab", &voc, "--weights", &w, "--events"]
        .map(String::from)
        .to_vec();
    run(bin, &base.join("track"), &track_args.iter().map(String::as_str).collect::<Vec<_>>())?;
    let tracks = s(&base.join("track/tracks.jsonl"));

    let cases: Vec<Case> = vec![
        ("synth", synth_args.map(String::from).to_vec(), vec!["detections.jsonl", "groundtruth.jsonl", "vocabulary.json"]),
        ("train", train_args.map(String::from).to_vec(), vec!["weights.twb", "loss.json"]),
        ("track", track_args.clone(), vec!["tracks.jsonl", "events.jsonl"]),
        (
            "classify",
            ["--seed", "5", "classify", "--detections", &det, "--vocab", &voc, "--tracks", &tracks, "--weights", &w]
                .map(String::from)
                .to_vec(),
            vec!["tracks.jsonl"],
        ),
        ("eval", ["--seed", "5", "eval", "--pred", &tracks, "--gt", &gt, "--vocab", &voc].map(String::from).to_vec(), vec!["report.json", "report.txt"]),
        ("bench-fusion", ["--seed", "5", "bench-fusion", "--scenes", "2"].map(String::from).to_vec(), vec!["bench.json", "bench.txt"]),
    ];
    let mut checked = 0;
    for (name, args, outputs) in &cases {
        let first = root.join(format!("{name}-1"));
        let args_ref: Vec<&str> = args.iter().map(String::as_str).collect();
        run(bin, &first, &args_ref)?;
        let manifest = s(&first.join("manifest.json"));
        let mut again: Vec<&str> = vec!["--config", &manifest];
        again.extend(&args_ref);
        let second = root.join(format!("{name}-2"));
        run(bin, &second, &again)?;
        let mut threaded: Vec<&str> = vec!["--threads", "4"];
        threaded.extend(&args_ref);
        let third = root.join(format!("{name}-3"));
        run(bin, &third, &threaded)?;
        for file in outputs {
            let a = std::fs::read(first.join(file)).map_err(|e| format!("{name}/{file}: {e}"))?;
            for other in [&second, &third] {
                let b = std::fs::read(other.join(file)).map_err(|e| format!("{name}/{file}: {e}"))?;
                if a != b {
                    return Err(format!("{name}: {file} differs between {} and {}", first.display(), other.display()));
                }
            }
            checked += 1;
        }
    }
    Ok(format!(
        "{} subcommands, {checked} primary outputs byte-identical across repeat, manifest replay and --threads 4",
        cases.len()
    ))
}

fn main() -> ExitCode {
    let bin = env!("CARGO_BIN_EXE_trajkit");
    let dir = tempfile::tempdir().expect("temp dir");
    let criteria: Vec<(&str, Check)> = vec![
        ("1 equation fidelity", Box::new(c1_equation_fidelity)),
        ("2 gradient check", Box::new(c2_gradient_check)),
        ("3 zero-noise oracle", Box::new(c3_zero_noise)),
        ("4 bank under occlusion", Box::new(c4_bank_under_occlusion)),
        ("5 voting over frames", Box::new(c5_voting_over_frames)),
        ("6 fusion degeneracy", Box::new(c6_fusion_degeneracy)),
        ("7 permutation properties", Box::new(c7_permutation)),
        ("8 trainability", Box::new(c8_trainability)),
        ("9 evaluator correctness", Box::new(c9_evaluator)),
        ("10 throughput", Box::new(|| c10_throughput(bin, dir.path()))),
        ("11 determinism", Box::new(|| c11_determinism(bin, dir.path()))),
    ];
    let mut failed = 0;
    for (name, f) in &criteria {
        match f() {
            Ok(detail) => println!("[PASS] criterion {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("[FAIL] criterion {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
