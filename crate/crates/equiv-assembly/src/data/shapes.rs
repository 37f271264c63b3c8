//! Parametric surface primitives, sampled uniformly by area and scaled into
//! the unit sphere.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{PointCloud, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeType {
    Sphere,
    Box,
    Cylinder,
    Ellipsoid,
}

/// Cuboid half-extents before unit-sphere scaling. Deliberately non-cubic so
/// generic fragments carry no rotational symmetry.
pub const BOX_HALF_EXTENTS: [f32; 3] = [0.9, 0.63, 0.45];
/// Cylinder radius and half-height before scaling.
pub const CYLINDER_RADIUS: f32 = 0.7;
pub const CYLINDER_HALF_HEIGHT: f32 = 0.9;
/// Ellipsoid semi-axes (max axis 1, already unit-sphere scale).
pub const ELLIPSOID_SEMI_AXES: [f32; 3] = [1.0, 0.75, 0.5];

/// `m` points uniform on the primitive surface, scaled so the shape fits the
/// unit sphere with its farthest point at radius 1.
pub fn sample_shape<R: Rng>(shape: ShapeType, m: usize, rng: &mut R) -> PointCloud {
    assert!(m >= 256, "sample_shape needs m >= 256, got {m}");
    let points = match shape {
        ShapeType::Sphere => (0..m).map(|_| sphere_point(rng)).collect(),
        ShapeType::Box => {
            let s = 1.0 / norm(BOX_HALF_EXTENTS);
            (0..m)
                .map(|_| scale(box_point(rng, BOX_HALF_EXTENTS), s))
                .collect()
        }
        ShapeType::Cylinder => {
            let s = 1.0
                / (CYLINDER_RADIUS * CYLINDER_RADIUS
                    + CYLINDER_HALF_HEIGHT * CYLINDER_HALF_HEIGHT)
                    .sqrt();
            (0..m)
                .map(|_| scale(cylinder_point(rng, CYLINDER_RADIUS, CYLINDER_HALF_HEIGHT), s))
                .collect()
        }
        ShapeType::Ellipsoid => (0..m)
            .map(|_| ellipsoid_point(rng, ELLIPSOID_SEMI_AXES))
            .collect(),
    };
    PointCloud::new(points)
}

fn norm(v: [f32; 3]) -> f32 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn scale(v: Vec3, s: f32) -> Vec3 {
    [v[0] * s, v[1] * s, v[2] * s]
}

fn sphere_point<R: Rng>(rng: &mut R) -> Vec3 {
    loop {
        let v = [
            rng.sample::<f64, _>(rand_distr::StandardNormal),
            rng.sample::<f64, _>(rand_distr::StandardNormal),
            rng.sample::<f64, _>(rand_distr::StandardNormal),
        ];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-9 {
            return [(v[0] / n) as f32, (v[1] / n) as f32, (v[2] / n) as f32];
        }
    }
}

/// Face index 0..6 encodes (axis, sign); faces are drawn proportionally to
/// their areas.
fn box_point<R: Rng>(rng: &mut R, half: [f32; 3]) -> Vec3 {
    let areas = [
        half[1] * half[2], // x faces
        half[0] * half[2], // y faces
        half[0] * half[1], // z faces
    ];
    let total = 2.0 * (areas[0] + areas[1] + areas[2]);
    let mut pick = rng.gen_range(0.0..total);
    let mut axis = 2;
    let mut sign = 1.0f32;
    for a in 0..3 {
        for s in [-1.0f32, 1.0] {
            if pick < areas[a] {
                axis = a;
                sign = s;
                pick = -1.0;
                break;
            }
            pick -= areas[a];
        }
        if pick < 0.0 {
            break;
        }
    }
    let mut p = [0.0f32; 3];
    p[axis] = sign * half[axis];
    let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
    p[u] = rng.gen_range(-half[u]..half[u]);
    p[v] = rng.gen_range(-half[v]..half[v]);
    p
}

fn cylinder_point<R: Rng>(rng: &mut R, r: f32, h: f32) -> Vec3 {
    let side_area = 4.0 * std::f32::consts::PI * r * h;
    let cap_area = std::f32::consts::PI * r * r;
    let pick = rng.gen_range(0.0..side_area + 2.0 * cap_area);
    let theta = rng.gen_range(0.0..2.0 * std::f32::consts::PI);
    if pick < side_area {
        let z = rng.gen_range(-h..h);
        [r * theta.cos(), r * theta.sin(), z]
    } else {
        let z = if pick < side_area + cap_area { h } else { -h };
        let rad = r * rng.gen_range(0.0f32..1.0).sqrt();
        [rad * theta.cos(), rad * theta.sin(), z]
    }
}

/// Rejection sampling: map uniform sphere directions through the axis scaling
/// and accept proportionally to the local area distortion.
fn ellipsoid_point<R: Rng>(rng: &mut R, axes: [f32; 3]) -> Vec3 {
    let (a, b, c) = (axes[0], axes[1], axes[2]);
    let g_max = (b * c).max(a * c).max(a * b);
    loop {
        let u = sphere_point(rng);
        let g = ((b * c * u[0]).powi(2) + (a * c * u[1]).powi(2) + (a * b * u[2]).powi(2)).sqrt();
        if rng.gen_range(0.0..g_max) < g {
            return [a * u[0], b * u[1], c * u[2]];
        }
    }
}
