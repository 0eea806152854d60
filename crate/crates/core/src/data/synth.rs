//! Synthetic scenes with known geometry.
//!
//! A random point cloud is observed by pinhole camera pairs and rendered as
//! Gaussian splats of per-point brightness. For each pair the planted
//! relative pose is the target, and cell-level correspondences at grid
//! resolution are recorded for cells whose brightest point is covisible.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rand::Rng;

use super::manifest::{save_pairs, Convention, ImageRef, PairRecord};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::extractor::GRID_STRIDE;
use crate::geometry::{AbsolutePose, UnitQuaternion};
use crate::image::Image;
use crate::init::{rng, Rng64};

/// Points closer than this to a camera plane count as behind it.
pub const MIN_DEPTH: f64 = 0.1;
const MIN_COVISIBLE: usize = 8;
const MAX_ATTEMPTS: usize = 2000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intrinsics {
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    /// Centered principal point, focal length `focal_ratio * width`.
    pub fn centered(height: usize, width: usize, focal_ratio: f64) -> Self {
        Self {
            focal: focal_ratio * width as f64,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
            width,
            height,
        }
    }

    /// Pixel `(u, v)` and depth of a world point; pixel centers sit on integers.
    pub fn project(&self, pose: &AbsolutePose, p: &Vector3<f64>) -> Option<(f64, f64, f64)> {
        let pc = pose.transform_point(p);
        (pc.z > MIN_DEPTH).then(|| {
            (
                self.focal * pc.x / pc.z + self.cx,
                self.focal * pc.y / pc.z + self.cy,
                pc.z,
            )
        })
    }

    /// Grid cell `(row, col)` containing a pixel, if it lies on the coarse grid.
    pub fn cell_of(&self, u: f64, v: f64) -> Option<(usize, usize)> {
        let s = GRID_STRIDE as f64;
        let (col, row) = (((u + 0.5) / s).floor(), ((v + 0.5) / s).floor());
        let (h, w) = (self.height / GRID_STRIDE, self.width / GRID_STRIDE);
        (col >= 0.0 && row >= 0.0 && (row as usize) < h && (col as usize) < w).then(|| (row as usize, col as usize))
    }

    pub fn grid_width(&self) -> usize {
        self.width / GRID_STRIDE
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_points: usize,
    pub n_pairs: usize,
    /// Camera-center distance range, meters.
    pub baseline: (f64, f64),
    /// Relative rotation angle range, degrees (upper end at most 60).
    pub rotation_deg: (f64, f64),
    pub height: usize,
    pub width: usize,
    pub focal_ratio: f64,
    /// Splat standard deviation in pixels.
    pub splat_sigma: f64,
    /// Distance from the first camera of a pair to the scene center, meters.
    pub camera_distance: f64,
    pub scene: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_points: 400,
            n_pairs: 32,
            baseline: (0.2, 1.0),
            rotation_deg: (2.0, 30.0),
            height: 64,
            width: 64,
            focal_ratio: 0.9,
            splat_sigma: 1.0,
            camera_distance: 3.5,
            scene: "synth".into(),
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: &str| {
            Err(Error::Config {
                key: key.into(),
                msg: msg.into(),
            })
        };
        if !(self.baseline.0 > 0.0 && self.baseline.0 <= self.baseline.1) {
            return bad("baseline", "range must be positive and ordered");
        }
        if !(self.rotation_deg.0 >= 0.0 && self.rotation_deg.0 <= self.rotation_deg.1 && self.rotation_deg.1 > 0.0) {
            return bad("rotation_deg", "range must be positive and ordered");
        }
        if self.rotation_deg.1 > 60.0 {
            return bad("rotation_deg", "upper end must be at most 60 degrees");
        }
        if self.n_points == 0 || self.n_pairs == 0 {
            return bad("n_points", "point and pair counts must be positive");
        }
        if self.height < GRID_STRIDE || self.width < GRID_STRIDE {
            return Err(Error::TooSmall {
                height: self.height,
                width: self.width,
            });
        }
        Ok(())
    }
}

/// One ground-truth correspondence between flattened grid cells.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CellMatch {
    pub cell_a: usize,
    pub cell_b: usize,
}

#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub points: Vec<Vector3<f64>>,
    pub brightness: Vec<f64>,
    pub intrinsics: Intrinsics,
    /// Cameras `2k` and `2k+1` form pair `k`.
    pub poses: Vec<AbsolutePose>,
    pub images: Vec<Image>,
    pub correspondences: Vec<Vec<CellMatch>>,
}

impl SyntheticScene {
    /// CSV `pair_id,cell_a,cell_b`.
    pub fn correspondences_csv(&self) -> String {
        let mut out = String::from("pair_id,cell_a,cell_b\n");
        for (k, matches) in self.correspondences.iter().enumerate() {
            for m in matches {
                let _ = writeln!(out, "{k},{},{}", m.cell_a, m.cell_b);
            }
        }
        out
    }
}

/// Renders the point cloud as splats with intensity `1 - exp(-Σ b·g)`.
pub fn render(points: &[Vector3<f64>], brightness: &[f64], intr: &Intrinsics, pose: &AbsolutePose, sigma: f64) -> Image {
    let (h, w) = (intr.height, intr.width);
    let mut acc = vec![0.0f64; h * w];
    let radius = (3.0 * sigma).ceil() as i64;
    let inv = 1.0 / (2.0 * sigma * sigma);
    for (p, &b) in points.iter().zip(brightness) {
        let Some((u, v, _)) = intr.project(pose, p) else { continue };
        let (uc, vc) = (u.round() as i64, v.round() as i64);
        for y in (vc - radius).max(0)..=(vc + radius).min(h as i64 - 1) {
            for x in (uc - radius).max(0)..=(uc + radius).min(w as i64 - 1) {
                let d2 = (x as f64 - u).powi(2) + (y as f64 - v).powi(2);
                acc[y as usize * w + x as usize] += b * (-d2 * inv).exp();
            }
        }
    }
    let data = acc.iter().map(|&a| (1.0 - (-a).exp()) as f32).collect();
    Image::new(Tensor::new(vec![1, h, w], data).expect("non-empty")).expect("3-D")
}

/// Cells of A whose brightest projected point is also on B's grid.
pub fn cell_correspondences(
    points: &[Vector3<f64>],
    brightness: &[f64],
    intr: &Intrinsics,
    pose_a: &AbsolutePose,
    pose_b: &AbsolutePose,
) -> Vec<CellMatch> {
    let gw = intr.grid_width();
    let n_cells = (intr.height / GRID_STRIDE) * gw;
    let mut dominant: Vec<Option<usize>> = vec![None; n_cells];
    for (k, p) in points.iter().enumerate() {
        let Some((u, v, _)) = intr.project(pose_a, p) else { continue };
        let Some((r, c)) = intr.cell_of(u, v) else { continue };
        let slot = &mut dominant[r * gw + c];
        if slot.map_or(true, |j| brightness[k] > brightness[j]) {
            *slot = Some(k);
        }
    }
    dominant
        .iter()
        .enumerate()
        .filter_map(|(cell_a, k)| {
            let (u, v, _) = intr.project(pose_b, &points[(*k)?])?;
            let (r, c) = intr.cell_of(u, v)?;
            Some(CellMatch {
                cell_a,
                cell_b: r * gw + c,
            })
        })
        .collect()
}

/// World-to-camera rotation looking from `center` towards `target`, rolled
/// by `roll` radians about the optical axis.
pub fn look_at(center: &Vector3<f64>, target: &Vector3<f64>, roll: f64) -> UnitQuaternion {
    let z = (target - center).normalize();
    let hint = if z.y.abs() < 0.9 { Vector3::y() } else { Vector3::x() };
    let x = hint.cross(&z).normalize();
    let y = z.cross(&x);
    let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
    let roll = UnitQuaternion::from_axis_angle(Vector3::z(), roll);
    roll.compose(UnitQuaternion::from_rotation_matrix(&r))
}

fn in_front(points: &[Vector3<f64>], pose: &AbsolutePose) -> bool {
    points.iter().all(|p| pose.transform_point(p).z > MIN_DEPTH)
}

fn jitter(r: &mut Rng64, amp: f64) -> Vector3<f64> {
    Vector3::new(r.gen_range(-amp..=amp), r.gen_range(-amp..=amp), r.gen_range(-amp..=amp))
}

fn sample_pair(
    cfg: &SynthConfig,
    r: &mut Rng64,
    points: &[Vector3<f64>],
    brightness: &[f64],
    intr: &Intrinsics,
) -> Result<(AbsolutePose, AbsolutePose)> {
    let (rot_lo, rot_hi) = (cfg.rotation_deg.0.to_radians(), cfg.rotation_deg.1.to_radians());
    for _ in 0..MAX_ATTEMPTS {
        let c_a = Vector3::new(r.gen_range(-0.5..=0.5), r.gen_range(-0.5..=0.5), -cfg.camera_distance);
        let roll_a = r.gen_range(-0.2..=0.2);
        let pose_a = AbsolutePose::from_center(look_at(&c_a, &jitter(r, 0.2), roll_a), c_a);

        let dist = r.gen_range(cfg.baseline.0..=cfg.baseline.1);
        let dir = loop {
            let d = jitter(r, 1.0);
            if d.norm() > 1e-3 && d.norm() <= 1.0 {
                break d.normalize();
            }
        };
        let c_b = c_a + dir * dist;
        let roll_b = roll_a + r.gen_range(-0.3..=0.3);
        let pose_b = AbsolutePose::from_center(look_at(&c_b, &jitter(r, 0.2), roll_b), c_b);

        let rel = pose_b.rotation.compose(pose_a.rotation.inverse()).angle();
        if rel < rot_lo || rel > rot_hi || !in_front(points, &pose_a) || !in_front(points, &pose_b) {
            continue;
        }
        let covisible = points
            .iter()
            .filter(|p| {
                [&pose_a, &pose_b].iter().all(|pose| {
                    intr.project(pose, p)
                        .is_some_and(|(u, v, _)| intr.cell_of(u, v).is_some())
                })
            })
            .count();
        if covisible >= MIN_COVISIBLE && !cell_correspondences(points, brightness, intr, &pose_a, &pose_b).is_empty() {
            return Ok((pose_a, pose_b));
        }
    }
    Err(Error::DegenerateGeometry {
        msg: format!("no camera pair with at least {MIN_COVISIBLE} covisible points after {MAX_ATTEMPTS} attempts"),
    })
}

/// Generates a scene and its pair records (images embedded).
pub fn synth_scene(cfg: &SynthConfig) -> Result<(SyntheticScene, Vec<PairRecord>)> {
    cfg.validate()?;
    let mut r = rng(cfg.seed);
    let points: Vec<Vector3<f64>> = (0..cfg.n_points)
        .map(|_| {
            Vector3::new(
                r.gen_range(-1.5..=1.5),
                r.gen_range(-1.5..=1.5),
                r.gen_range(-0.5..=0.5),
            )
        })
        .collect();
    let brightness: Vec<f64> = (0..cfg.n_points).map(|_| r.gen_range(0.3..=1.0)).collect();
    let intr = Intrinsics::centered(cfg.height, cfg.width, cfg.focal_ratio);

    let mut scene = SyntheticScene {
        points,
        brightness,
        intrinsics: intr,
        poses: Vec::with_capacity(2 * cfg.n_pairs),
        images: Vec::with_capacity(2 * cfg.n_pairs),
        correspondences: Vec::with_capacity(cfg.n_pairs),
    };
    let mut records = Vec::with_capacity(cfg.n_pairs);
    for k in 0..cfg.n_pairs {
        let (pose_a, pose_b) = sample_pair(cfg, &mut r, &scene.points, &scene.brightness, &intr)?;
        let img_a = render(&scene.points, &scene.brightness, &intr, &pose_a, cfg.splat_sigma);
        let img_b = render(&scene.points, &scene.brightness, &intr, &pose_b, cfg.splat_sigma);
        scene
            .correspondences
            .push(cell_correspondences(&scene.points, &scene.brightness, &intr, &pose_a, &pose_b));
        records.push(PairRecord::new(
            cfg.scene.clone(),
            k.to_string(),
            ImageRef::Embedded(img_a.clone()),
            ImageRef::Embedded(img_b.clone()),
            pose_a,
            pose_b,
            Convention::Rectified,
        ));
        scene.poses.extend([pose_a, pose_b]);
        scene.images.extend([img_a, img_b]);
    }
    Ok((scene, records))
}

/// Writes `img_XXXX.rptn` files, `pairs.txt` and `correspondences.csv` into
/// `dir`, returning the records with on-disk image paths.
pub fn write_scene(scene: &SyntheticScene, records: &[PairRecord], dir: &Path) -> Result<Vec<PairRecord>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut on_disk = Vec::with_capacity(records.len());
    for (k, rec) in records.iter().enumerate() {
        let mut rec = rec.clone();
        let path_a = dir.join(format!("img_{:04}.rptn", 2 * k));
        let path_b = dir.join(format!("img_{:04}.rptn", 2 * k + 1));
        scene.images[2 * k].save_rptn(&path_a)?;
        scene.images[2 * k + 1].save_rptn(&path_b)?;
        rec.image_a = ImageRef::Path(path_a);
        rec.image_b = ImageRef::Path(path_b);
        on_disk.push(rec);
    }
    save_pairs(&on_disk, dir.join("pairs.txt"))?;
    let csv = dir.join("correspondences.csv");
    std::fs::write(&csv, scene.correspondences_csv()).map_err(|e| Error::io(&csv, e))?;
    Ok(on_disk)
}
