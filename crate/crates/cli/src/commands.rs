use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use trajkit::classify::Classifier;
use trajkit::eval::{evaluate, EvalConfig, EvalReport, PredTrack};
use trajkit::fusion::{FusionKind, FusionWeights};
use trajkit::ingest::{
    load_detections_with_vocab, load_groundtruth, load_vocabulary, load_weights, read_tracks, write_tracks, write_weights,
    TrackRecord, Vocabulary,
};
use trajkit::synth::{gen_scene, make_train_pairs};
use trajkit::tcr::{run_sequence, run_sequence_with_events, Track};
use trajkit::train::{init_fusion_weights, init_self_fusion, mean_loss, train_fusion};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::{BenchArgs, ClassifyArgs, EvalArgs, SynthArgs, TrackArgs, TrainArgs};

#[derive(Serialize)]
struct Manifest<'a, A: Serialize> {
    subcommand: &'static str,
    config: &'a RunConfig,
    args: &'a A,
    out_dir: &'a Path,
    outputs: Vec<&'static str>,
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::new("Io", format!("{}: {e}", path.display()))
}

fn require(paths: &[&Path]) -> Result<(), CliError> {
    for p in paths {
        if !p.is_file() {
            return Err(CliError::new("MissingInput", format!("{} does not exist", p.display())));
        }
    }
    Ok(())
}

fn write_manifest<A: Serialize>(
    out: &Path,
    subcommand: &'static str,
    run: &RunConfig,
    args: &A,
    mut outputs: Vec<&'static str>,
) -> Result<(), CliError> {
    outputs.push("manifest.json");
    let m = Manifest {
        subcommand,
        config: run,
        args,
        out_dir: out,
        outputs,
    };
    write_json(&out.join("manifest.json"), &m)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| io_error(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| io_error(path, e))
}

fn load_fusion_weights(path: Option<&PathBuf>) -> Result<Option<FusionWeights>, CliError> {
    match path {
        Some(p) => {
            require(&[p])?;
            Ok(Some(FusionWeights::from_bundle(&load_weights(p)?)?))
        }
        None => Ok(None),
    }
}

const CLASSIFY_BATCH: usize = 64;

fn classify_all(classifier: &Classifier, tracks: &[Track]) -> Result<Vec<TrackRecord>, CliError> {
    // Fixed batch size keeps the output independent of the thread count.
    let batches = tracks
        .par_chunks(CLASSIFY_BATCH)
        .map(|batch| {
            let labels = classifier.classify_many(batch)?;
            Ok(batch
                .iter()
                .zip(labels)
                .map(|(t, cls)| {
                    let mut rec = t.to_record();
                    rec.label = Some(cls.to_record());
                    rec
                })
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    Ok(batches.into_iter().flatten().collect())
}

pub fn track(run: &RunConfig, a: &TrackArgs, out: &Path) -> Result<(), CliError> {
    require(&[&a.detections, &a.vocab])?;
    let vocab = load_vocabulary(&a.vocab)?;
    let weights = load_fusion_weights(a.weights.as_ref())?;
    // Fail on missing weights before doing any association work.
    let classifier = Classifier::with_weights(&vocab, weights.unwrap_or_default(), run.classify.clone())?;
    let dets = load_detections_with_vocab(&a.detections, run.score_scale, &vocab)?;
    let (tracks, events) = run_sequence_with_events(&dets, &run.tracker)?;
    let records = classify_all(&classifier, &tracks)?;
    write_tracks(&records, out.join("tracks.jsonl"))?;
    let mut outputs = vec!["tracks.jsonl"];
    if a.events {
        let path = out.join("events.jsonl");
        let mut w = BufWriter::new(File::create(&path).map_err(|e| io_error(&path, e))?);
        for ev in &events {
            serde_json::to_writer(&mut w, ev)?;
            w.write_all(b"\n").map_err(|e| io_error(&path, e))?;
        }
        w.flush().map_err(|e| io_error(&path, e))?;
        outputs.push("events.jsonl");
    }
    write_manifest(out, "track", run, a, outputs)?;
    let n_dets: usize = dets.values().map(Vec::len).sum();
    println!("{} tracks from {} detections over {} frames", records.len(), n_dets, dets.len());
    Ok(())
}

pub fn classify(run: &RunConfig, a: &ClassifyArgs, out: &Path) -> Result<(), CliError> {
    require(&[&a.detections, &a.vocab, &a.tracks])?;
    let vocab = load_vocabulary(&a.vocab)?;
    let weights = load_fusion_weights(a.weights.as_ref())?;
    let classifier = Classifier::with_weights(&vocab, weights.unwrap_or_default(), run.classify.clone())?;
    let dets = load_detections_with_vocab(&a.detections, run.score_scale, &vocab)?;
    let tracks = read_tracks(&a.tracks)?
        .iter()
        .map(|r| Track::from_record(r, &dets))
        .collect::<Result<Vec<_>, _>>()?;
    let records = classify_all(&classifier, &tracks)?;
    write_tracks(&records, out.join("tracks.jsonl"))?;
    write_manifest(out, "classify", run, a, vec!["tracks.jsonl"])?;
    println!("classified {} tracks", records.len());
    Ok(())
}

fn eval_config(run: &RunConfig, vocab: Option<&Vocabulary>) -> EvalConfig {
    EvalConfig {
        iou_threshold: run.eval.iou_threshold,
        splits: vocab.map(Vocabulary::splits).unwrap_or_default(),
    }
}

pub fn eval(run: &RunConfig, a: &EvalArgs, out: &Path) -> Result<(), CliError> {
    require(&[&a.pred, &a.gt])?;
    if !(run.eval.iou_threshold > 0.0 && run.eval.iou_threshold <= 1.0) {
        return Err(CliError::new("InvalidConfig", "iou_threshold must lie in (0, 1]"));
    }
    let vocab = match &a.vocab {
        Some(p) => {
            require(&[p])?;
            Some(load_vocabulary(p)?)
        }
        None => None,
    };
    let preds: Vec<PredTrack> = read_tracks(&a.pred)?.iter().map(PredTrack::from_record).collect();
    let gts = load_groundtruth(&a.gt)?;
    let report = evaluate(&preds, &gts, &eval_config(run, vocab.as_ref()));
    write_json(&out.join("report.json"), &report)?;
    write_text(&out.join("report.txt"), &report.to_string())?;
    write_manifest(out, "eval", run, a, vec!["report.json", "report.txt"])?;
    print!("{report}");
    Ok(())
}

pub fn synth(run: &RunConfig, a: &SynthArgs, out: &Path) -> Result<(), CliError> {
    let scene = gen_scene(&run.synth)?;
    scene.write(out, a.sidecar)?;
    let mut outputs = vec!["detections.jsonl", "groundtruth.jsonl", "vocabulary.json"];
    if a.sidecar {
        outputs.push("detections.embin");
    }
    write_manifest(out, "synth", run, a, outputs)?;
    let n_dets: usize = scene.detections.values().map(Vec::len).sum();
    println!(
        "{} identities, {} detections over {} frames",
        scene.gt_tracks.len(),
        n_dets,
        scene.detections.len()
    );
    Ok(())
}

#[derive(Serialize)]
struct LossCurve<'a> {
    initial_mean_loss: f64,
    final_mean_loss: f64,
    losses: &'a [f64],
}

pub fn train(run: &RunConfig, a: &TrainArgs, out: &Path) -> Result<(), CliError> {
    let t = &run.train;
    let scene = gen_scene(&run.synth)?;
    let pairs = make_train_pairs(&scene, t.n_clip, t.n_pairs, &t.augment, run.seed)?;
    let cfg = &t.optimizer;
    let init = init_self_fusion(cfg.d, cfg.hidden_width(), run.seed);
    let initial = mean_loss(&pairs, &init, cfg)?;
    let outcome = train_fusion(&pairs, init, cfg)?;
    let fin = mean_loss(&pairs, &outcome.params, cfg)?;
    let bundle = FusionWeights::default().with_self_fusion(outcome.params).to_bundle()?;
    write_weights(&bundle, out.join("weights.twb"))?;
    write_json(
        &out.join("loss.json"),
        &LossCurve {
            initial_mean_loss: initial,
            final_mean_loss: fin,
            losses: &outcome.losses,
        },
    )?;
    write_manifest(out, "train", run, a, vec!["weights.twb", "loss.json"])?;
    println!("mean pair loss {initial:.6} -> {fin:.6} after {} steps", cfg.steps);
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct BenchRow {
    mechanism: &'static str,
    teta: f64,
    loc_a: f64,
    ass_a: f64,
    cls_a: f64,
    cls_a_base: f64,
    cls_a_novel: f64,
}

pub fn bench_fusion(run: &RunConfig, a: &BenchArgs, out: &Path) -> Result<(), CliError> {
    let scenes = run.bench.scenes;
    if scenes == 0 {
        return Err(CliError::new("InvalidConfig", "bench needs at least one scene"));
    }
    let d = run.bench.scene.embed_dim;
    let hidden = if run.bench.hidden == 0 { 4 * d } else { run.bench.hidden };
    let weights = match load_fusion_weights(a.weights.as_ref())? {
        Some(w) => w,
        None => init_fusion_weights(d, hidden, run.seed),
    };
    let reports: Vec<Vec<EvalReport>> = (0..scenes as u64)
        .into_par_iter()
        .map(|i| -> Result<Vec<EvalReport>, CliError> {
            let mut cfg = run.bench.scene.clone();
            cfg.seed = run.seed.wrapping_add(i);
            let scene = gen_scene(&cfg)?;
            let tracks = run_sequence(&scene.detections, &run.tracker)?;
            let ecfg = eval_config(run, Some(&scene.vocabulary));
            FusionKind::ALL
                .iter()
                .map(|&kind| {
                    let mut ccfg = run.classify.clone();
                    ccfg.fusion = kind;
                    let classifier = Classifier::new(&scene.vocabulary, Some(&weights), ccfg)?;
                    let records = classify_all(&classifier, &tracks)?;
                    let preds: Vec<PredTrack> = records.iter().map(PredTrack::from_record).collect();
                    Ok(evaluate(&preds, &scene.gt_tracks, &ecfg))
                })
                .collect()
        })
        .collect::<Result<_, _>>()?;

    let n = scenes as f64;
    let rows: Vec<BenchRow> = FusionKind::ALL
        .iter()
        .enumerate()
        .map(|(k, kind)| {
            let mean = |f: &dyn Fn(&EvalReport) -> f64| reports.iter().map(|r| f(&r[k])).sum::<f64>() / n;
            BenchRow {
                mechanism: kind.as_str(),
                teta: mean(&|r| r.overall.teta),
                loc_a: mean(&|r| r.overall.loc_a),
                ass_a: mean(&|r| r.overall.ass_a),
                cls_a: mean(&|r| r.overall.cls_a),
                cls_a_base: mean(&|r| r.base.cls_a),
                cls_a_novel: mean(&|r| r.novel.cls_a),
            }
        })
        .collect();

    let mut table = format!(
        "{:<16} {:>7} {:>7} {:>7} {:>7} {:>9} {:>10}\n",
        "mechanism", "TETA", "LocA", "AssA", "ClsA", "ClsA-base", "ClsA-novel"
    );
    for r in &rows {
        table += &format!(
            "{:<16} {:>7.2} {:>7.2} {:>7.2} {:>7.2} {:>9.2} {:>10.2}\n",
            r.mechanism, r.teta, r.loc_a, r.ass_a, r.cls_a, r.cls_a_base, r.cls_a_novel
        );
    }
    let per_scene: BTreeMap<String, Vec<f64>> = FusionKind::ALL
        .iter()
        .enumerate()
        .map(|(k, kind)| (kind.as_str().to_string(), reports.iter().map(|r| r[k].overall.cls_a).collect()))
        .collect();
    #[derive(Serialize)]
    struct Bench<'a> {
        rows: &'a [BenchRow],
        per_scene_cls_a: BTreeMap<String, Vec<f64>>,
    }
    write_json(
        &out.join("bench.json"),
        &Bench {
            rows: &rows,
            per_scene_cls_a: per_scene,
        },
    )?;
    write_text(&out.join("bench.txt"), &table)?;
    write_manifest(out, "bench-fusion", run, a, vec!["bench.json", "bench.txt"])?;
    print!("{table}");
    Ok(())
}
