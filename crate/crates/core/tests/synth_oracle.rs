//! Independent reprojection oracle for synthetic scenes.

use std::collections::BTreeMap;

use nalgebra::{Quaternion, UnitQuaternion as NaQuat, Vector3};
use relpose_core::data::{synth_scene, SynthConfig};
use relpose_core::geometry::{relative_pose, AbsolutePose};

struct Camera {
    rot: NaQuat<f64>,
    t: Vector3<f64>,
    f: f64,
    cx: f64,
    cy: f64,
}

impl Camera {
    fn new(p: &AbsolutePose, width: usize, height: usize, focal_ratio: f64) -> Self {
        let q = p.rotation;
        Self {
            rot: NaQuat::from_quaternion(Quaternion::new(q.w, q.x, q.y, q.z)),
            t: p.translation,
            f: focal_ratio * width as f64,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
        }
    }

    fn project(&self, x: &Vector3<f64>) -> Option<(f64, f64)> {
        let c = self.rot * x + self.t;
        (c.z > 0.1).then(|| (self.f * c.x / c.z + self.cx, self.f * c.y / c.z + self.cy))
    }
}

/// Cell `(row, col)` over 8-pixel cells, plus the distance to the nearest cell edge.
fn cell(u: f64, v: f64, gh: usize, gw: usize) -> Option<((usize, usize), f64)> {
    let (cu, cv) = ((u + 0.5) / 8.0, (v + 0.5) / 8.0);
    if cu < 0.0 || cv < 0.0 || cu >= gw as f64 || cv >= gh as f64 {
        return None;
    }
    let edge = [cu.fract(), 1.0 - cu.fract(), cv.fract(), 1.0 - cv.fract()]
        .into_iter()
        .fold(f64::INFINITY, f64::min)
        * 8.0;
    Some(((cv as usize, cu as usize), edge))
}

#[test]
fn correspondences_match_independent_reprojection() {
    let cfg = SynthConfig {
        n_pairs: 6,
        height: 48,
        width: 64,
        ..SynthConfig::default()
    };
    let (scene, records) = synth_scene(&cfg).unwrap();
    let (gh, gw) = (cfg.height / 8, cfg.width / 8);
    let mut agree = 0;
    for k in 0..cfg.n_pairs {
        let cam_a = Camera::new(&scene.poses[2 * k], cfg.width, cfg.height, cfg.focal_ratio);
        let cam_b = Camera::new(&scene.poses[2 * k + 1], cfg.width, cfg.height, cfg.focal_ratio);
        // brightest point per A cell
        let mut best: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
        let mut near_edge = false;
        for (i, p) in scene.points.iter().enumerate() {
            let Some((u, v)) = cam_a.project(p) else { continue };
            let Some(((r, c), edge)) = cell(u, v, gh, gw) else { continue };
            near_edge |= edge < 1e-6;
            let e = best.entry(r * gw + c).or_insert((i, scene.brightness[i]));
            if scene.brightness[i] > e.1 {
                *e = (i, scene.brightness[i]);
            }
        }
        let mut expected = Vec::new();
        for (&cell_a, &(i, _)) in &best {
            if let Some((u, v)) = cam_b.project(&scene.points[i]) {
                if let Some(((r, c), edge)) = cell(u, v, gh, gw) {
                    near_edge |= edge < 1e-6;
                    expected.push((cell_a, r * gw + c));
                }
            }
        }
        let got: Vec<(usize, usize)> = scene.correspondences[k].iter().map(|m| (m.cell_a, m.cell_b)).collect();
        if !near_edge {
            assert_eq!(got, expected, "pair {k}");
        }
        agree += (got == expected) as usize;

        let rel = relative_pose(&scene.poses[2 * k], &scene.poses[2 * k + 1]);
        assert_eq!(records[k].target, rel);
        // every point lies in front of both cameras
        for p in &scene.points {
            assert!(cam_a.project(p).is_some() && cam_b.project(p).is_some());
        }
    }
    assert!(agree >= cfg.n_pairs - 1);
}

#[test]
fn bright_points_light_up_their_pixels() {
    let cfg = SynthConfig {
        n_pairs: 2,
        ..SynthConfig::default()
    };
    let (scene, _) = synth_scene(&cfg).unwrap();
    // one splat of brightness b at ≤ √0.5 px from the pixel center
    let floor = |b: f64| 1.0 - (-b * (-0.25f64).exp()).exp();
    for (k, pose) in scene.poses.iter().enumerate() {
        let cam = Camera::new(pose, cfg.width, cfg.height, cfg.focal_ratio);
        let img = &scene.images[k];
        for (p, &b) in scene.points.iter().zip(&scene.brightness) {
            let Some((u, v)) = cam.project(p) else { continue };
            let (x, y) = (u.round(), v.round());
            if x < 0.0 || y < 0.0 || x >= cfg.width as f64 || y >= cfg.height as f64 {
                continue;
            }
            let val = img.tensor.data()[y as usize * cfg.width + x as usize] as f64;
            assert!(val >= floor(b) - 1e-6, "pixel ({x},{y}) = {val}, brightness {b}");
        }
    }
}
