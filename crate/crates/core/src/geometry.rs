//! Rotation and pose conventions, pose error metrics and their aggregation.
//!
//! Absolute poses map world points into the camera frame, `x_cam = R * x_world + t`.
//! The relative pose of a pair `(A, B)` is `R = R_B * R_Aᵀ`, `t = t_A - Rᵀ * t_B`,
//! which equals `R_A * (c_B - c_A)`: its norm is the distance between the two
//! camera centers.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{Matrix3, Rotation3, Vector3};

use crate::error::{Error, Result};

/// Norm below which a quaternion is treated as degenerate.
pub const QUAT_EPS: f64 = 1e-12;

/// Unit quaternion `(w, x, y, z)` kept in canonical form `w >= 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnitQuaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

/// Normalizes `q` and flips its sign so that the scalar part is non-negative.
pub fn quat_normalize_canonical(q: [f64; 4]) -> Result<UnitQuaternion> {
    let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > QUAT_EPS) {
        return Err(Error::NearZeroQuaternion { norm });
    }
    let sign = if q[0] < 0.0 { -1.0 } else { 1.0 };
    // already unit up to rounding: keep the bits so text round-trips are exact
    let s = if (norm - 1.0).abs() <= 4.0 * f64::EPSILON {
        sign
    } else {
        sign / norm
    };
    Ok(UnitQuaternion {
        w: q[0] * s,
        x: q[1] * s,
        y: q[2] * s,
        z: q[3] * s,
    })
}

impl UnitQuaternion {
    pub const IDENTITY: UnitQuaternion = UnitQuaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn new(q: [f64; 4]) -> Result<Self> {
        quat_normalize_canonical(q)
    }

    /// Rotation of `angle` radians about `axis` (any non-zero length).
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64) -> Self {
        let axis = axis.normalize();
        let (s, c) = (angle / 2.0).sin_cos();
        quat_normalize_canonical([c, axis.x * s, axis.y * s, axis.z * s])
            .expect("unit axis gives a unit quaternion")
    }

    pub fn from_rotation_matrix(m: &Matrix3<f64>) -> Self {
        let rot = Rotation3::from_matrix_unchecked(*m);
        let q = nalgebra::UnitQuaternion::from_rotation_matrix(&rot);
        quat_normalize_canonical([q.w, q.i, q.j, q.k]).expect("rotation matrix gives a unit quaternion")
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn to_rotation_matrix(self) -> Matrix3<f64> {
        let UnitQuaternion { w, x, y, z } = self;
        Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }

    /// Hamilton product `self * other`, canonicalized.
    pub fn compose(self, other: UnitQuaternion) -> UnitQuaternion {
        let (a, b) = (self, other);
        quat_normalize_canonical([
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        ])
        .expect("product of unit quaternions is unit")
    }

    pub fn inverse(self) -> UnitQuaternion {
        UnitQuaternion {
            w: self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    /// Rotation angle in radians, in `[0, pi]`.
    pub fn angle(self) -> f64 {
        2.0 * self.w.abs().min(1.0).acos()
    }
}

impl fmt::Display for UnitQuaternion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {} {}", self.w, self.x, self.y, self.z)
    }
}

/// World-to-camera rigid transform.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AbsolutePose {
    pub rotation: UnitQuaternion,
    pub translation: Vector3<f64>,
}

impl AbsolutePose {
    pub fn new(rotation: UnitQuaternion, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    /// Pose whose camera sits at `center` with the given orientation.
    pub fn from_center(rotation: UnitQuaternion, center: Vector3<f64>) -> Self {
        let r = rotation.to_rotation_matrix();
        Self {
            rotation,
            translation: -(r * center),
        }
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix()
    }

    /// Camera center in world coordinates, `c = -Rᵀ t`.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation_matrix().transpose() * self.translation)
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation_matrix() * p + self.translation
    }
}

/// Rotation and metric translation from camera A to camera B.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RelativePose {
    pub rotation: UnitQuaternion,
    pub translation: Vector3<f64>,
}

/// Relative pose of `b` with respect to `a` under the rectified convention.
pub fn relative_pose(a: &AbsolutePose, b: &AbsolutePose) -> RelativePose {
    let ra = a.rotation_matrix();
    let rb = b.rotation_matrix();
    let r = rb * ra.transpose();
    let translation = a.translation - r.transpose() * b.translation;
    RelativePose {
        rotation: UnitQuaternion::from_rotation_matrix(&r),
        translation,
    }
}

/// The uncorrected `t_A - t_B` translation some datasets ship with.
pub fn erroneous_relative_translation(a: &AbsolutePose, b: &AbsolutePose) -> Vector3<f64> {
    a.translation - b.translation
}

/// Angle in degrees between ground truth `q` and an unnormalized prediction.
pub fn rotation_error_deg(q: &UnitQuaternion, q_hat: [f64; 4]) -> Result<f64> {
    let norm = q_hat.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > QUAT_EPS) {
        return Err(Error::NearZeroQuaternion { norm });
    }
    // 2·acos(|q̂ᵀq| / ‖q̂‖), evaluated as an atan2 of the scalar and vector
    // parts of q⁻¹q̂, which stays accurate near zero and π
    let [w, x, y, z] = q_hat;
    let dot = q.w * w + q.x * x + q.y * y + q.z * z;
    let v = Vector3::new(
        q.w * x - w * q.x - (q.y * z - q.z * y),
        q.w * y - w * q.y - (q.z * x - q.x * z),
        q.w * z - w * q.z - (q.x * y - q.y * x),
    );
    Ok((2.0 * v.norm().atan2(dot.abs())).to_degrees())
}

pub fn translation_error(t: &Vector3<f64>, t_hat: &Vector3<f64>) -> f64 {
    (t_hat - t).norm()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ScaleMode {
    /// Closed-form least squares over all pairs.
    #[default]
    LeastSquares,
    /// Golden-section search minimizing the median error.
    Median,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScaleAlignment {
    pub scale: f64,
    pub errors: Vec<f64>,
}

const SCALE_EPS: f64 = 1e-12;
const SCALE_RANGE: (f64, f64) = (1e-3, 1e3);

/// Finds the global scale applied to `pred` that best matches `gt`.
pub fn align_scale(
    pred: &[Vector3<f64>],
    gt: &[Vector3<f64>],
    mode: ScaleMode,
) -> Result<ScaleAlignment> {
    if pred.len() != gt.len() {
        return Err(Error::shape("align_scale", (pred.len(), gt.len())));
    }
    if pred.is_empty() {
        return Err(Error::EmptyInput {
            what: "scale alignment pairs".into(),
        });
    }
    let sum_sq: f64 = pred.iter().map(|p| p.norm_squared()).sum();
    if !(sum_sq > SCALE_EPS) {
        return Err(Error::DegenerateScale { sum_sq });
    }
    let errors_at = |s: f64| -> Vec<f64> {
        pred.iter()
            .zip(gt)
            .map(|(p, g)| (p * s - g).norm())
            .collect()
    };
    let scale = match mode {
        ScaleMode::LeastSquares => {
            let cross: f64 = pred.iter().zip(gt).map(|(p, g)| p.dot(g)).sum();
            cross / sum_sq
        }
        ScaleMode::Median => golden_section(SCALE_RANGE.0, SCALE_RANGE.1, |s| {
            median(&errors_at(s)).unwrap_or(f64::INFINITY)
        }),
    };
    Ok(ScaleAlignment {
        scale,
        errors: errors_at(scale),
    })
}

fn golden_section(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - inv_phi * (hi - lo);
    let mut b = lo + inv_phi * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    for _ in 0..200 {
        if hi - lo <= 1e-14 * (1.0 + a.abs()) {
            break;
        }
        if fa <= fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - inv_phi * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + inv_phi * (hi - lo);
            fb = f(b);
        }
    }
    if fa <= fb {
        a
    } else {
        b
    }
}

/// Median with the even-count convention of averaging the two central values.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    Some(if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        0.5 * (sorted[mid - 1] + sorted[mid])
    })
}

/// One evaluated pair.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorRecord {
    pub scene: String,
    pub rotation_deg: f64,
    pub translation_m: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneErrorSummary {
    pub scene: String,
    pub median_rotation_deg: f64,
    pub median_translation_m: f64,
    pub pair_count: usize,
}

/// Per-scene medians, sorted by scene id.
pub fn per_scene_median(records: &[ErrorRecord]) -> Result<Vec<SceneErrorSummary>> {
    if records.is_empty() {
        return Err(Error::EmptyInput {
            what: "error records".into(),
        });
    }
    let mut by_scene: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in records {
        let entry = by_scene.entry(&r.scene).or_default();
        entry.0.push(r.rotation_deg);
        entry.1.push(r.translation_m);
    }
    Ok(by_scene
        .into_iter()
        .map(|(scene, (rot, trans))| SceneErrorSummary {
            scene: scene.to_string(),
            median_rotation_deg: median(&rot).expect("non-empty"),
            median_translation_m: median(&trans).expect("non-empty"),
            pair_count: rot.len(),
        })
        .collect())
}

/// Relative pose record `scene_id pair_id qw qx qy qz tx ty tz`.
#[derive(Clone, Debug, PartialEq)]
pub struct RelativeRecord {
    pub scene: String,
    pub pair_id: String,
    pub pose: RelativePose,
}

impl RelativeRecord {
    pub fn parse_line(line: &str, line_no: usize) -> Result<Self> {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 9 {
            return Err(Error::ParseError {
                line: line_no,
                msg: format!("expected 9 fields, found {}", fields.len()),
            });
        }
        let nums = parse_floats(&fields[2..], line_no)?;
        let rotation = quat_normalize_canonical([nums[0], nums[1], nums[2], nums[3]])
            .map_err(|_| Error::BadQuaternion { line: line_no })?;
        Ok(Self {
            scene: fields[0].to_string(),
            pair_id: fields[1].to_string(),
            pose: RelativePose {
                rotation,
                translation: Vector3::new(nums[4], nums[5], nums[6]),
            },
        })
    }
}

impl fmt::Display for RelativeRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let t = &self.pose.translation;
        write!(
            f,
            "{} {} {} {} {} {}",
            self.scene, self.pair_id, self.pose.rotation, t.x, t.y, t.z
        )
    }
}

pub(crate) fn parse_floats(fields: &[&str], line_no: usize) -> Result<Vec<f64>> {
    fields
        .iter()
        .map(|s| {
            s.parse::<f64>().map_err(|e| Error::ParseError {
                line: line_no,
                msg: format!("`{s}`: {e}"),
            })
        })
        .collect()
}
