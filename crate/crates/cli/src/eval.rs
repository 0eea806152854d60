//! Per-pair errors, per-scene medians and the summary tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use relpose_core::data::PairRecord;
use relpose_core::geometry::{align_scale, median, rotation_error_deg, translation_error, ScaleMode};
use relpose_core::regressor::PosePrediction;
use relpose_core::{Error, Result};

use crate::report;

#[derive(Clone, Debug, PartialEq)]
pub struct PairError {
    pub scene: String,
    pub pair_id: String,
    pub rotation_deg: f64,
    pub translation_m: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSummary {
    pub scene: String,
    pub pairs: usize,
    pub median_rotation_deg: f64,
    pub median_translation_m: f64,
    /// Factor applied to predicted translations, when aligned.
    pub scale: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub pairs: Vec<PairError>,
    pub scenes: Vec<SceneSummary>,
    /// Mean of the per-scene medians.
    pub average_rotation_deg: f64,
    pub average_translation_m: f64,
    /// Medians over all pairs regardless of scene, when requested.
    pub pooled: Option<(f64, f64)>,
    /// Pairs without a usable prediction.
    pub skipped: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EvalOptions {
    pub scale_align: bool,
    pub pooled: bool,
}

/// Scores predictions against the records' targets; `None` marks a pair
/// whose prediction failed and is counted as skipped.
pub fn evaluate(records: &[PairRecord], preds: &[Option<PosePrediction>], opts: EvalOptions) -> Result<EvalReport> {
    if records.len() != preds.len() {
        return Err(Error::shape("evaluate", (records.len(), preds.len())));
    }
    let mut by_scene: BTreeMap<&str, Vec<(usize, &PosePrediction, f64)>> = BTreeMap::new();
    let mut skipped = 0;
    for (i, (rec, pred)) in records.iter().zip(preds).enumerate() {
        let Some(p) = pred else {
            skipped += 1;
            continue;
        };
        match rotation_error_deg(&rec.target.rotation, p.quaternion) {
            Ok(r) => by_scene.entry(rec.scene.as_str()).or_default().push((i, p, r)),
            Err(Error::NearZeroQuaternion { .. }) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    if by_scene.is_empty() {
        return Err(Error::EmptyInput {
            what: "evaluable pairs".into(),
        });
    }

    let mut pairs = Vec::new();
    let mut scenes = Vec::new();
    for (scene, items) in &by_scene {
        let predicted: Vec<_> = items.iter().map(|(_, p, _)| p.translation).collect();
        let truth: Vec<_> = items.iter().map(|(i, _, _)| records[*i].target.translation).collect();
        let (scale, t_errs) = if opts.scale_align {
            let al = align_scale(&predicted, &truth, ScaleMode::LeastSquares)?;
            (Some(al.scale), al.errors)
        } else {
            let errs = predicted.iter().zip(&truth).map(|(p, g)| translation_error(g, p)).collect();
            (None, errs)
        };
        let r_errs: Vec<f64> = items.iter().map(|(_, _, r)| *r).collect();
        for ((i, _, r), t) in items.iter().zip(&t_errs) {
            pairs.push(PairError {
                scene: scene.to_string(),
                pair_id: records[*i].pair_id.clone(),
                rotation_deg: *r,
                translation_m: *t,
            });
        }
        scenes.push(SceneSummary {
            scene: scene.to_string(),
            pairs: items.len(),
            median_rotation_deg: median(&r_errs).expect("non-empty"),
            median_translation_m: median(&t_errs).expect("non-empty"),
            scale,
        });
    }
    let n = scenes.len() as f64;
    let pooled = opts.pooled.then(|| {
        let r: Vec<f64> = pairs.iter().map(|p| p.rotation_deg).collect();
        let t: Vec<f64> = pairs.iter().map(|p| p.translation_m).collect();
        (median(&r).expect("non-empty"), median(&t).expect("non-empty"))
    });
    Ok(EvalReport {
        average_rotation_deg: scenes.iter().map(|s| s.median_rotation_deg).sum::<f64>() / n,
        average_translation_m: scenes.iter().map(|s| s.median_translation_m).sum::<f64>() / n,
        pairs,
        scenes,
        pooled,
        skipped,
    })
}

impl EvalReport {
    pub fn per_pair_csv(&self) -> String {
        let mut out = String::from("scene,pair_id,rotation_deg,translation_m\n");
        for p in &self.pairs {
            let _ = writeln!(out, "{},{},{},{}", p.scene, p.pair_id, p.rotation_deg, p.translation_m);
        }
        out
    }

    pub fn per_scene_csv(&self) -> String {
        let mut out = String::from("scene,pairs,median_rotation_deg,median_translation_m,scale\n");
        for s in &self.scenes {
            let scale = s.scale.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                s.scene, s.pairs, s.median_rotation_deg, s.median_translation_m, scale
            );
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        let _ = writeln!(out, "pairs,{}", self.pairs.len());
        let _ = writeln!(out, "skipped,{}", self.skipped);
        let _ = writeln!(out, "scenes,{}", self.scenes.len());
        let _ = writeln!(out, "average_rotation_deg,{}", self.average_rotation_deg);
        let _ = writeln!(out, "average_translation_m,{}", self.average_translation_m);
        if let Some((r, t)) = self.pooled {
            let _ = writeln!(out, "pooled_median_rotation_deg,{r}");
            let _ = writeln!(out, "pooled_median_translation_m,{t}");
        }
        out
    }

    /// Tables, CDFs and histograms as `(file name, contents)`.
    pub fn files(&self) -> Result<Vec<(String, String)>> {
        let rot: Vec<f64> = self.pairs.iter().map(|p| p.rotation_deg).collect();
        let trans: Vec<f64> = self.pairs.iter().map(|p| p.translation_m).collect();
        let mut files = vec![
            ("per_pair.csv".to_string(), self.per_pair_csv()),
            ("per_scene.csv".to_string(), self.per_scene_csv()),
            ("summary.csv".to_string(), self.summary_csv()),
        ];
        files.extend(error_charts(&rot, "rotation", "rotation error (deg)", 1.0, None)?);
        files.extend(error_charts(&trans, "translation", "translation error (m)", 0.05, None)?);
        Ok(files)
    }
}

/// CDF and histogram tables plus SVG charts for one error series.
pub fn error_charts(
    errors: &[f64],
    name: &str,
    label: &str,
    bin_width: f64,
    cutoff: Option<f64>,
) -> Result<Vec<(String, String)>> {
    let mut points = report::cdf(errors)?;
    if let Some(c) = cutoff {
        points = report::truncate(&points, c);
    }
    let bins = report::histogram(errors, bin_width, cutoff)?;
    Ok(vec![
        (format!("cdf_{name}.csv"), report::cdf_csv(&points)),
        (format!("hist_{name}.csv"), report::histogram_csv(&bins)),
        (format!("cdf_{name}.svg"), report::cdf_svg(&points, &format!("{name} CDF"), label, cutoff)),
        (format!("hist_{name}.svg"), report::histogram_svg(&bins, &format!("{name} histogram"), label)),
    ])
}

/// Writes every file into `dir`, creating it first.
pub fn write_files(dir: &Path, files: &[(String, String)]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, contents) in files {
        let path = dir.join(name);
        std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
