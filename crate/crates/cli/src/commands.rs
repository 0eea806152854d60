//! Command implementations behind the `relpose` binary.

use std::path::{Path, PathBuf};

use relpose_core::autodiff::Checkpoint;
use relpose_core::data::{format_pairs, load_pairs, split, synth_scene, write_scene, Convention, PairRecord, SynthConfig};
use relpose_core::geometry::{quat_normalize_canonical, RelativePose, RelativeRecord};
use relpose_core::regressor::PosePrediction;
use relpose_core::train::{load_train_pairs, log_csv, EpochLog, Trainer};
use relpose_core::{Error, PoseNet, Result, Variant};

use crate::config::RunConfig;
use crate::eval::{error_charts, evaluate, write_files, EvalOptions, EvalReport};
use crate::report;

pub const BEST_CHECKPOINT: &str = "best.rpck";
pub const LAST_CHECKPOINT: &str = "last.rpck";
pub const TRAIN_LOG: &str = "train_log.csv";

#[derive(Debug)]
pub struct TrainOutcome {
    pub logs: Vec<EpochLog>,
    pub best: PathBuf,
    pub last: PathBuf,
    pub splits: [Vec<PairRecord>; 3],
}

fn absolute(path: &Path) -> Result<PathBuf> {
    std::fs::canonicalize(path).map_err(|e| Error::io(path, e))
}

/// Trains on the configured split and writes the best and last
/// checkpoints, the epoch log and the split manifests into `out_dir`.
pub fn train(cfg: &RunConfig, mut on_epoch: impl FnMut(&EpochLog)) -> Result<TrainOutcome> {
    let records = load_pairs(absolute(&cfg.pairs)?, cfg.convention, cfg.swap)?;
    let (train_set, val_set, test_set) = split(&records, cfg.split, cfg.split_seed)?;
    if train_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let channels = cfg.model.extractor.image_channels;
    let train_pairs = load_train_pairs(&train_set, channels)?;
    let val_pairs = load_train_pairs(&val_set, channels)?;

    let mut trainer = match &cfg.resume {
        Some(path) => {
            let mut t = Trainer::resume(&Checkpoint::load(path)?, cfg.train.clone())?;
            if t.net.config() != &cfg.model {
                return Err(Error::CheckpointMismatch {
                    msg: format!("{} was trained with a different model config", path.display()),
                });
            }
            let previous_best = cfg.out_dir.join(BEST_CHECKPOINT);
            if previous_best.is_file() {
                t.set_best_checkpoint(Checkpoint::load(&previous_best)?);
            }
            t
        }
        None => {
            let (net, store) = PoseNet::new::<f32>(cfg.model.clone(), cfg.train.seed)?;
            Trainer::new(net, store, cfg.train.clone())
        }
    };
    let logs = trainer.run(&train_pairs, &val_pairs, |log, _| {
        on_epoch(log);
        Ok(())
    })?;

    let out = &cfg.out_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let best = out.join(BEST_CHECKPOINT);
    let last = out.join(LAST_CHECKPOINT);
    let best_ck = trainer.best_checkpoint().cloned().unwrap_or_else(|| trainer.net.to_checkpoint(&trainer.store));
    best_ck.save(&best)?;
    trainer.resume_checkpoint().save(&last)?;
    let mut log = log_csv(&logs);
    if cfg.resume.is_some() {
        log = merge_log(&out.join(TRAIN_LOG), &log, logs.first().map_or(usize::MAX, |l| l.epoch));
    }
    let mut files = vec![(TRAIN_LOG.to_string(), log)];
    let out_abs = absolute(out)?;
    for (name, set) in [("train", &train_set), ("val", &val_set), ("test", &test_set)] {
        if !set.is_empty() {
            files.push((format!("{name}_pairs.txt"), format_pairs(set, &out_abs)?));
        }
    }
    write_files(out, &files)?;
    Ok(TrainOutcome {
        logs,
        best,
        last,
        splits: [train_set, val_set, test_set],
    })
}

/// Earlier rows of an existing log (epochs before `first_new`) followed by
/// the rows of `fresh`. A missing or unreadable log contributes nothing.
fn merge_log(path: &Path, fresh: &str, first_new: usize) -> String {
    let Ok(old) = std::fs::read_to_string(path) else {
        return fresh.to_string();
    };
    let mut lines = fresh.lines();
    let mut out = String::new();
    if let Some(header) = lines.next() {
        out.push_str(header);
        out.push('\n');
    }
    for row in old.lines().skip(1) {
        let epoch = row.split(',').next().and_then(|e| e.parse::<usize>().ok());
        if epoch.is_some_and(|e| e < first_new) {
            out.push_str(row);
            out.push('\n');
        }
    }
    for row in lines {
        out.push_str(row);
        out.push('\n');
    }
    out
}

/// Runs the network on every record; pairs whose images fail to load are errors.
pub fn predict_all(net: &PoseNet, store: &relpose_core::autodiff::ParamStore<f32>, records: &[PairRecord]) -> Result<Vec<Option<PosePrediction>>> {
    let channels = net.config().extractor.image_channels;
    records
        .iter()
        .map(|r| {
            let (a, b) = (r.image_a.load(channels)?, r.image_b.load(channels)?);
            match net.predict(store, &a, &b) {
                Ok((p, _)) => Ok(Some(p)),
                Err(Error::NonFiniteValue { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect()
}

/// One `scene pair_id qw qx qy qz tx ty tz` line per usable prediction.
pub fn predictions_text(records: &[PairRecord], preds: &[Option<PosePrediction>]) -> String {
    let mut out = String::new();
    for (r, p) in records.iter().zip(preds) {
        let Some(p) = p else { continue };
        let Ok(rotation) = quat_normalize_canonical(p.quaternion) else { continue };
        let rec = RelativeRecord {
            scene: r.scene.clone(),
            pair_id: r.pair_id.clone(),
            pose: RelativePose {
                rotation,
                translation: p.translation,
            },
        };
        out.push_str(&rec.to_string());
        out.push('\n');
    }
    out
}

#[derive(Clone, Debug)]
pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub pairs: PathBuf,
    pub out: PathBuf,
    pub options: EvalOptions,
    /// Expected architecture; its parameters must match the checkpoint.
    pub config: Option<PathBuf>,
}

/// Evaluates a checkpoint on a manifest and writes the report files.
pub fn eval(args: &EvalArgs) -> Result<EvalReport> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let (net, store, convention, swap) = match &args.config {
        Some(path) => {
            let cfg = RunConfig::load(path)?;
            let (net, store) = PoseNet::from_checkpoint_with::<f32>(cfg.model, &ck)?;
            (net, store, cfg.convention, cfg.swap)
        }
        None => {
            let (net, store) = PoseNet::from_checkpoint::<f32>(&ck)?;
            (net, store, Convention::Rectified, false)
        }
    };
    let records = load_pairs(&args.pairs, convention, swap)?;
    let preds = predict_all(&net, &store, &records)?;
    let report = evaluate(&records, &preds, args.options)?;
    let mut files = report.files()?;
    files.push(("predictions.txt".into(), predictions_text(&records, &preds)));
    write_files(&args.out, &files)?;
    Ok(report)
}

/// Trains the given variant into `out_dir/<variant>` and evaluates it on the
/// test split, or on the training split when the test split is empty.
pub fn ablate(cfg: &RunConfig, variant: Variant, on_epoch: impl FnMut(&EpochLog)) -> Result<EvalReport> {
    let mut cfg = cfg.clone().with_variant(variant);
    cfg.out_dir = cfg.out_dir.join(variant.name());
    cfg.resume = None;
    let outcome = train(&cfg, on_epoch)?;
    let [train_set, _, test_set] = &outcome.splits;
    let records = if test_set.is_empty() { train_set } else { test_set };
    let (net, store) = PoseNet::from_checkpoint::<f32>(&Checkpoint::load(&outcome.best)?)?;
    let preds = predict_all(&net, &store, records)?;
    let report = evaluate(records, &preds, EvalOptions::default())?;
    let mut files = report.files()?;
    files.push(("predictions.txt".into(), predictions_text(records, &preds)));
    write_files(&cfg.out_dir.join("eval"), &files)?;
    Ok(report)
}

/// Writes a synthetic scene (images, manifest, correspondences) into `out`.
pub fn synth(cfg: &SynthConfig, out: &Path) -> Result<Vec<PairRecord>> {
    let (scene, records) = synth_scene(cfg)?;
    write_scene(&scene, &records, out)
}

#[derive(Clone, Debug)]
pub struct ReportArgs {
    pub errors: PathBuf,
    pub out: PathBuf,
    pub cutoff_deg: Option<f64>,
    pub bin_width: f64,
    pub bin_width_m: f64,
}

/// CDF and histogram files for the error columns found in a CSV.
///
/// `rotation_deg` honours the degree cutoff; `translation_m` and a generic
/// `error` column are charted in full.
pub fn report(args: &ReportArgs) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(&args.errors).map_err(|e| Error::io(&args.errors, e))?;
    let mut files = Vec::new();
    let series = [
        ("rotation_deg", "rotation", "rotation error (deg)", args.bin_width, args.cutoff_deg),
        ("translation_m", "translation", "translation error (m)", args.bin_width_m, None),
        ("error", "error", "error", args.bin_width, args.cutoff_deg),
    ];
    for (column, name, label, width, cutoff) in series {
        match report::read_column(&text, column) {
            Ok(values) => files.extend(error_charts(&values, name, label, width, cutoff)?),
            Err(Error::ParseError { line: 1, .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    if files.is_empty() {
        return Err(Error::EmptyInput {
            what: format!("{} has no rotation_deg, translation_m or error column", args.errors.display()),
        });
    }
    write_files(&args.out, &files)?;
    Ok(files.into_iter().map(|(name, _)| name).collect())
}
