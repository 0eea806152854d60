//! Pair manifests: one pair per line,
//! `scene img_a img_b qwA qxA qyA qzA txA tyA tzA qwB qxB qyB qzB txB tyB tzB`.
//! Blank lines and lines starting with `#` are ignored.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::{
    erroneous_relative_translation, parse_floats, quat_normalize_canonical, relative_pose, AbsolutePose,
    RelativePose,
};
use crate::image::Image;

/// How relative targets are derived from the absolute poses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Convention {
    /// `t = t_A - Rᵀ t_B`, norm equal to the center distance.
    #[default]
    Rectified,
    /// `t = t_A - t_B`, kept to reproduce datasets that ship it.
    Erroneous,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ImageRef {
    Path(PathBuf),
    Embedded(Image),
}

impl ImageRef {
    pub fn load(&self, channels: usize) -> Result<Image> {
        match self {
            ImageRef::Path(p) => Image::load(p, channels),
            ImageRef::Embedded(img) => img.clone().with_channels(channels),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairRecord {
    pub scene: String,
    pub pair_id: String,
    pub image_a: ImageRef,
    pub image_b: ImageRef,
    pub pose_a: AbsolutePose,
    pub pose_b: AbsolutePose,
    pub target: RelativePose,
}

impl PairRecord {
    pub fn new(
        scene: impl Into<String>,
        pair_id: impl Into<String>,
        image_a: ImageRef,
        image_b: ImageRef,
        pose_a: AbsolutePose,
        pose_b: AbsolutePose,
        convention: Convention,
    ) -> Self {
        let mut target = relative_pose(&pose_a, &pose_b);
        if convention == Convention::Erroneous {
            target.translation = erroneous_relative_translation(&pose_a, &pose_b);
        }
        Self {
            scene: scene.into(),
            pair_id: pair_id.into(),
            image_a,
            image_b,
            pose_a,
            pose_b,
            target,
        }
    }
}

fn parse_pose(nums: &[f64], line: usize) -> Result<AbsolutePose> {
    let rotation =
        quat_normalize_canonical([nums[0], nums[1], nums[2], nums[3]]).map_err(|_| Error::BadQuaternion { line })?;
    Ok(AbsolutePose::new(rotation, Vector3::new(nums[4], nums[5], nums[6])))
}

/// Parses manifest text; relative image paths are resolved against `base_dir`.
pub fn parse_pairs(text: &str, base_dir: &Path, convention: Convention, swap: bool) -> Result<Vec<PairRecord>> {
    let mut records = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 17 {
            return Err(Error::ParseError {
                line: line_no,
                msg: format!("expected 17 fields, found {}", fields.len()),
            });
        }
        let nums = parse_floats(&fields[3..], line_no)?;
        let mut pose_a = parse_pose(&nums[..7], line_no)?;
        let mut pose_b = parse_pose(&nums[7..], line_no)?;
        let mut img_a = ImageRef::Path(base_dir.join(fields[1]));
        let mut img_b = ImageRef::Path(base_dir.join(fields[2]));
        if swap {
            std::mem::swap(&mut pose_a, &mut pose_b);
            std::mem::swap(&mut img_a, &mut img_b);
        }
        let pair_id = records.len().to_string();
        records.push(PairRecord::new(fields[0], pair_id, img_a, img_b, pose_a, pose_b, convention));
    }
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(records)
}

pub fn load_pairs(path: impl AsRef<Path>, convention: Convention, swap: bool) -> Result<Vec<PairRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_pairs(&text, base, convention, swap)
}

fn write_pose(out: &mut String, p: &AbsolutePose) {
    let t = &p.translation;
    let _ = write!(out, " {} {} {} {}", p.rotation, t.x, t.y, t.z);
}

/// Manifest text; paths under `base_dir` are written relative to it.
pub fn format_pairs(records: &[PairRecord], base_dir: &Path) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&r.scene);
        for img in [&r.image_a, &r.image_b] {
            let ImageRef::Path(p) = img else {
                return Err(Error::Format {
                    path: base_dir.to_path_buf(),
                    msg: format!("pair {} has an embedded image; write it to disk first", r.pair_id),
                });
            };
            let rel = p.strip_prefix(base_dir).unwrap_or(p);
            let _ = write!(out, " {}", rel.display());
        }
        write_pose(&mut out, &r.pose_a);
        write_pose(&mut out, &r.pose_b);
        out.push('\n');
    }
    Ok(out)
}

pub fn save_pairs(records: &[PairRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("."));
    std::fs::write(path, format_pairs(records, base)?).map_err(|e| Error::io(path, e))
}
