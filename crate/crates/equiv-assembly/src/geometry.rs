//! Rotation and distance math shared by data generation, losses, and metrics.
//!
//! Convention used throughout the crate: points are row vectors and rotations
//! act by right multiplication, `p' = p * R`. Euler angles are intrinsic
//! X-Y-Z in degrees, each in (-180, 180].

use rand::Rng;

/// 3-vector of f32, row-vector semantics.
pub type Vec3 = [f32; 3];

pub fn add3(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub3(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn dot3(a: Vec3, b: Vec3) -> f32 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn norm3(a: Vec3) -> f32 {
    dot3(a, a).sqrt()
}

pub fn dist_sq3(a: Vec3, b: Vec3) -> f32 {
    let d = sub3(a, b);
    dot3(d, d)
}

/// 3x3 rotation matrix, row-major. `RotationMatrix` values satisfy
/// `R^T R = I` within 1e-6 and `det R = +1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat3(pub [[f32; 3]; 3]);

impl Mat3 {
    pub const IDENTITY: Mat3 = Mat3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    pub fn from_rows(r0: Vec3, r1: Vec3, r2: Vec3) -> Mat3 {
        Mat3([r0, r1, r2])
    }

    /// Row-major flat view, 9 entries.
    pub fn flat(&self) -> [f32; 9] {
        let m = &self.0;
        [
            m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
        ]
    }

    pub fn from_flat(v: &[f32]) -> Mat3 {
        assert_eq!(v.len(), 9, "flat rotation needs 9 entries");
        Mat3([[v[0], v[1], v[2]], [v[3], v[4], v[5]], [v[6], v[7], v[8]]])
    }

    pub fn transpose(&self) -> Mat3 {
        let m = &self.0;
        Mat3([
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ])
    }

    pub fn mul(&self, other: &Mat3) -> Mat3 {
        let a = &self.0;
        let b = &other.0;
        let mut out = [[0.0f32; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
            }
        }
        Mat3(out)
    }

    /// Apply to a row vector: `v * R`.
    pub fn apply(&self, v: Vec3) -> Vec3 {
        let m = &self.0;
        [
            v[0] * m[0][0] + v[1] * m[1][0] + v[2] * m[2][0],
            v[0] * m[0][1] + v[1] * m[1][1] + v[2] * m[2][1],
            v[0] * m[0][2] + v[1] * m[1][2] + v[2] * m[2][2],
        ]
    }

    pub fn det(&self) -> f32 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn trace(&self) -> f32 {
        self.0[0][0] + self.0[1][1] + self.0[2][2]
    }

    /// Max absolute entry of `R^T R - I`; 0 for a perfect rotation.
    pub fn orthonormality_error(&self) -> f32 {
        let g = self.transpose().mul(self);
        let mut err = 0.0f32;
        for i in 0..3 {
            for j in 0..3 {
                let target = if i == j { 1.0 } else { 0.0 };
                err = err.max((g.0[i][j] - target).abs());
            }
        }
        err
    }
}

/// Rotation about the x axis by `deg` degrees (row-vector convention).
pub fn rot_x(deg: f32) -> Mat3 {
    let (s, c) = deg.to_radians().sin_cos();
    Mat3([[1.0, 0.0, 0.0], [0.0, c, s], [0.0, -s, c]])
}

pub fn rot_y(deg: f32) -> Mat3 {
    let (s, c) = deg.to_radians().sin_cos();
    Mat3([[c, 0.0, -s], [0.0, 1.0, 0.0], [s, 0.0, c]])
}

pub fn rot_z(deg: f32) -> Mat3 {
    let (s, c) = deg.to_radians().sin_cos();
    Mat3([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])
}

/// Euler angles in degrees, intrinsic X-Y-Z, each in (-180, 180].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EulerAngles {
    pub rx: f32,
    pub ry: f32,
    pub rz: f32,
}

/// Compose the rotation described by intrinsic X-Y-Z Euler angles.
pub fn matrix_from_euler(e: EulerAngles) -> Mat3 {
    rot_x(e.rx).mul(&rot_y(e.ry)).mul(&rot_z(e.rz))
}

/// Decompose a rotation into intrinsic X-Y-Z Euler angles.
///
/// Gimbal lock (|ry| = 90 degrees) is resolved by setting rz = 0.
pub fn euler_from_matrix(r: &Mat3) -> EulerAngles {
    let m = &r.0;
    // matrix_from_euler gives m[0][2] = -sin(ry)
    let sy = (-m[0][2]).clamp(-1.0, 1.0);
    if sy.abs() > 1.0 - 1e-6 {
        // cos(ry) ~ 0: rx and rz rotate about the same axis; fold into rx.
        let ry = if sy > 0.0 { 90.0 } else { -90.0 };
        let rx = f32::atan2(sy * m[1][0], m[1][1]).to_degrees();
        EulerAngles { rx, ry, rz: 0.0 }
    } else {
        EulerAngles {
            rx: f32::atan2(m[1][2], m[2][2]).to_degrees(),
            ry: sy.asin().to_degrees(),
            rz: f32::atan2(m[0][1], m[0][0]).to_degrees(),
        }
    }
}

/// Haar-uniform random rotation via a normalized Gaussian quaternion.
pub fn random_rotation_uniform<R: Rng>(rng: &mut R) -> Mat3 {
    let mut q = [0.0f64; 4];
    loop {
        let mut n = 0.0;
        for qi in q.iter_mut() {
            let v: f64 = rng.sample(rand_distr::StandardNormal);
            *qi = v;
            n += v * v;
        }
        if n > 1e-12 {
            let inv = 1.0 / n.sqrt();
            for qi in q.iter_mut() {
                *qi *= inv;
            }
            break;
        }
    }
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    // Column-convention quaternion matrix, transposed into row convention.
    let m = [
        [
            (1.0 - 2.0 * (y * y + z * z)) as f32,
            (2.0 * (x * y + z * w)) as f32,
            (2.0 * (x * z - y * w)) as f32,
        ],
        [
            (2.0 * (x * y - z * w)) as f32,
            (1.0 - 2.0 * (x * x + z * z)) as f32,
            (2.0 * (y * z + x * w)) as f32,
        ],
        [
            (2.0 * (x * z + y * w)) as f32,
            (2.0 * (y * z - x * w)) as f32,
            (1.0 - 2.0 * (x * x + y * y)) as f32,
        ],
    ];
    Mat3(m)
}

/// Geodesic distance between two rotations in radians:
/// `arccos((tr(Ra Rb^T) - 1) / 2)`, argument clamped to [-1, 1].
pub fn geodesic(ra: &Mat3, rb: &Mat3) -> f32 {
    let t = ra.mul(&rb.transpose()).trace();
    let arg = ((t - 1.0) / 2.0).clamp(-1.0, 1.0);
    arg.acos()
}

/// Rigid pose: rotation plus translation, applied as `(P - centroid) * R + T`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Pose {
    pub const IDENTITY: Pose = Pose {
        rotation: Mat3::IDENTITY,
        translation: [0.0; 3],
    };
}

/// A bag of 3D points.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Self {
        PointCloud { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Gravity center, accumulated in f64.
    pub fn centroid(&self) -> Vec3 {
        assert!(!self.is_empty(), "centroid of empty cloud");
        let mut acc = [0.0f64; 3];
        for p in &self.points {
            for a in 0..3 {
                acc[a] += p[a] as f64;
            }
        }
        let n = self.points.len() as f64;
        [
            (acc[0] / n) as f32,
            (acc[1] / n) as f32,
            (acc[2] / n) as f32,
        ]
    }

    /// Flat row-major coordinates, n*3 floats.
    pub fn flat(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.points.len() * 3);
        for p in &self.points {
            out.extend_from_slice(p);
        }
        out
    }

    pub fn from_flat(data: &[f32]) -> Self {
        assert_eq!(data.len() % 3, 0, "flat cloud length must be divisible by 3");
        PointCloud {
            points: data.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
        }
    }
}

/// Re-pose a cloud: `(P - centroid) * R + T`.
pub fn apply_pose(cloud: &PointCloud, pose: &Pose, centroid: Vec3) -> PointCloud {
    let points = cloud
        .points
        .iter()
        .map(|&p| add3(pose.rotation.apply(sub3(p, centroid)), pose.translation))
        .collect();
    PointCloud { points }
}

/// Symmetric squared chamfer distance with per-direction means:
/// `(1/|P|) sum_p min_q |p-q|^2 + (1/|Q|) sum_q min_p |p-q|^2`.
///
/// Exhaustive O(|P||Q|) search; accumulation in f64.
pub fn chamfer(p: &PointCloud, q: &PointCloud) -> f32 {
    assert!(!p.is_empty() && !q.is_empty(), "chamfer of empty cloud");
    (chamfer_one_way(p, q) + chamfer_one_way(q, p)) as f32
}

fn chamfer_one_way(p: &PointCloud, q: &PointCloud) -> f64 {
    let (acc, _) = nearest_sq_sum(&p.flat(), &q.flat());
    acc / p.points.len() as f64
}

/// Sum over rows of `p` of the squared distance to the nearest row of `q`,
/// plus the index of that nearest row. Rows are xyz triples.
pub(crate) fn nearest_sq_sum(p: &[f32], q: &[f32]) -> (f64, Vec<usize>) {
    let n = p.len() / 3;
    let m = q.len() / 3;
    let mut acc = 0.0f64;
    let mut nn = Vec::with_capacity(n);
    for i in 0..n {
        let a = [p[i * 3], p[i * 3 + 1], p[i * 3 + 2]];
        let mut best = f32::INFINITY;
        let mut best_j = 0usize;
        for j in 0..m {
            let d = dist_sq3(a, [q[j * 3], q[j * 3 + 1], q[j * 3 + 2]]);
            if d < best {
                best = d;
                best_j = j;
            }
        }
        acc += best as f64;
        nn.push(best_j);
    }
    (acc, nn)
}

/// Chamfer over flat xyz buffers along with both directions' nearest-neighbor
/// assignments; the differentiable chamfer op routes gradients through these.
pub(crate) fn chamfer_flat_with_argmin(p: &[f32], q: &[f32]) -> (f32, Vec<usize>, Vec<usize>) {
    assert!(
        !p.is_empty() && !q.is_empty() && p.len() % 3 == 0 && q.len() % 3 == 0,
        "chamfer needs non-empty xyz clouds"
    );
    let (sum_pq, nn_pq) = nearest_sq_sum(p, q);
    let (sum_qp, nn_qp) = nearest_sq_sum(q, p);
    let value = sum_pq / (p.len() / 3) as f64 + sum_qp / (q.len() / 3) as f64;
    (value as f32, nn_pq, nn_qp)
}

/// Indices of the k nearest neighbors of each row of `points` (self excluded),
/// by squared Euclidean distance over `dim`-length rows. Distances are
/// compared in f64; exact ties break toward the lower index.
pub fn knn_indices(points: &[f32], dim: usize, k: usize) -> Vec<Vec<usize>> {
    assert!(dim > 0 && points.len() % dim == 0);
    let n = points.len() / dim;
    assert!(k < n, "knn requires k < n (k={k}, n={n})");
    let mut out = Vec::with_capacity(n);
    let mut scratch: Vec<(f32, usize)> = Vec::with_capacity(n - 1);
    for i in 0..n {
        scratch.clear();
        let pi = &points[i * dim..(i + 1) * dim];
        for j in 0..n {
            if j == i {
                continue;
            }
            let pj = &points[j * dim..(j + 1) * dim];
            let mut d = 0.0f32;
            for (a, b) in pi.iter().zip(pj) {
                let diff = a - b;
                d += diff * diff;
            }
            scratch.push((d, j));
        }
        scratch.sort_by(|a, b| a.partial_cmp(b).expect("NaN distance in knn"));
        out.push(scratch[..k].iter().map(|&(_, j)| j).collect());
    }
    out
}
