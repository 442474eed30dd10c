//! Small fixed-size linear algebra plus the cylindrical/Cartesian conversions
//! used by partitioning.
//!
//! Quaternions are stored as `(w, x, y, z)`, scalar first.

use std::f64::consts::PI;
use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3(pub [f64; 3]);

impl Vec3 {
    pub const ZERO: Vec3 = Vec3([0.0; 3]);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3([x, y, z])
    }

    pub fn splat(v: f64) -> Self {
        Vec3([v; 3])
    }

    pub fn x(&self) -> f64 {
        self.0[0]
    }

    pub fn y(&self) -> f64 {
        self.0[1]
    }

    pub fn z(&self) -> f64 {
        self.0[2]
    }

    pub fn dot(&self, o: &Vec3) -> f64 {
        self.0[0] * o.0[0] + self.0[1] * o.0[1] + self.0[2] * o.0[2]
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn distance(&self, o: &Vec3) -> f64 {
        (*self - *o).norm()
    }

    pub fn scale(&self, k: f64) -> Vec3 {
        Vec3([self.0[0] * k, self.0[1] * k, self.0[2] * k])
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Vec3 {
        Vec3([f(self.0[0]), f(self.0[1]), f(self.0[2])])
    }

    pub fn mul_elem(&self, o: &Vec3) -> Vec3 {
        Vec3([self.0[0] * o.0[0], self.0[1] * o.0[1], self.0[2] * o.0[2]])
    }

    pub fn div_elem(&self, o: &Vec3) -> Vec3 {
        Vec3([self.0[0] / o.0[0], self.0[1] / o.0[1], self.0[2] / o.0[2]])
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3([self.0[0] + o.0[0], self.0[1] + o.0[1], self.0[2] + o.0[2]])
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        for i in 0..3 {
            self.0[i] += o.0[i];
        }
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3([self.0[0] - o.0[0], self.0[1] - o.0[1], self.0[2] - o.0[2]])
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        self.scale(-1.0)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, k: f64) -> Vec3 {
        self.scale(k)
    }
}

impl Index<usize> for Vec3 {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for Vec3 {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

/// Row-major 3×3 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat3(pub [[f64; 3]; 3]);

impl Mat3 {
    pub const IDENTITY: Mat3 = Mat3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    pub fn diag(d: Vec3) -> Mat3 {
        Mat3([[d[0], 0.0, 0.0], [0.0, d[1], 0.0], [0.0, 0.0, d[2]]])
    }

    pub fn transpose(&self) -> Mat3 {
        let m = &self.0;
        Mat3([[m[0][0], m[1][0], m[2][0]], [m[0][1], m[1][1], m[2][1]], [m[0][2], m[1][2], m[2][2]]])
    }

    pub fn mul_vec(&self, v: &Vec3) -> Vec3 {
        let m = &self.0;
        Vec3([
            m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
        ])
    }

    /// `selfᵀ · v` without materializing the transpose.
    pub fn tmul_vec(&self, v: &Vec3) -> Vec3 {
        let m = &self.0;
        Vec3([
            m[0][0] * v[0] + m[1][0] * v[1] + m[2][0] * v[2],
            m[0][1] * v[0] + m[1][1] * v[1] + m[2][1] * v[2],
            m[0][2] * v[0] + m[1][2] * v[1] + m[2][2] * v[2],
        ])
    }

    pub fn mul_mat(&self, o: &Mat3) -> Mat3 {
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = (0..3).map(|k| self.0[i][k] * o.0[k][j]).sum();
            }
        }
        Mat3(out)
    }

    pub fn det(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn col(&self, j: usize) -> Vec3 {
        Vec3([self.0[0][j], self.0[1][j], self.0[2][j]])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Default for Quaternion {
    fn default() -> Self {
        Quaternion::IDENTITY
    }
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion { w: 1.0, x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quaternion { w, x, y, z }
    }

    /// Rotation of `angle` radians about `axis` (need not be unit length).
    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Self {
        let a = axis.scale(1.0 / axis.norm());
        let (s, c) = (angle * 0.5).sin_cos();
        Quaternion::new(c, a[0] * s, a[1] * s, a[2] * s)
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Quaternion::new(a[0], a[1], a[2], a[3])
    }

    pub fn norm(&self) -> f64 {
        self.as_array().iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn normalized(&self) -> Result<Quaternion> {
        let n = self.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::invalid("quaternion has zero or non-finite norm"));
        }
        Ok(Quaternion::new(self.w / n, self.x / n, self.y / n, self.z / n))
    }
}

/// Rotation matrix of `q` after normalization. Zero quaternions are rejected.
pub fn quat_to_rotation(q: &Quaternion) -> Result<Mat3> {
    Ok(unit_quat_to_rotation(&q.normalized()?))
}

/// Rotation matrix of an already-normalized quaternion.
pub(crate) fn unit_quat_to_rotation(q: &Quaternion) -> Mat3 {
    let Quaternion { w, x, y, z } = *q;
    Mat3([
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ])
}

/// Partial derivatives of the rotation matrix with respect to the four
/// (unit) quaternion components, in `(w, x, y, z)` order.
pub(crate) fn rotation_partials(q: &Quaternion) -> [Mat3; 4] {
    let Quaternion { w, x, y, z } = *q;
    let t = 2.0;
    [
        Mat3([[0.0, -t * z, t * y], [t * z, 0.0, -t * x], [-t * y, t * x, 0.0]]),
        Mat3([[0.0, t * y, t * z], [t * y, -2.0 * t * x, -t * w], [t * z, t * w, -2.0 * t * x]]),
        Mat3([[-2.0 * t * y, t * x, t * w], [t * x, 0.0, t * z], [-t * w, t * z, -2.0 * t * y]]),
        Mat3([[-2.0 * t * z, -t * w, t * x], [t * w, -2.0 * t * z, t * y], [t * x, t * y, 0.0]]),
    ]
}

/// `(r, θ, z)` → Cartesian.
pub fn cyl_to_cart(r: f64, theta: f64, z: f64) -> Vec3 {
    let (s, c) = theta.sin_cos();
    Vec3::new(r * c, r * s, z)
}

/// Cartesian → `(r, θ, z)` with θ in `[−π, π)`; θ = 0 when r = 0.
pub fn cart_to_cyl(p: &Vec3) -> (f64, f64, f64) {
    let r = p[0].hypot(p[1]);
    if r == 0.0 {
        return (0.0, 0.0, p[2]);
    }
    let mut theta = p[1].atan2(p[0]);
    if theta >= PI {
        theta = -PI;
    }
    (r, theta, p[2])
}

/// Cylindrical lattice: radius `[r_min, r_max)`, angle `[−π, π)`, height
/// `[z_min, z_max)`, with `n_r × n_theta × n_z` bins.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CylindricalSpec {
    pub r_min: f64,
    pub r_max: f64,
    pub z_min: f64,
    pub z_max: f64,
    pub n_r: usize,
    pub n_theta: usize,
    pub n_z: usize,
}

impl CylindricalSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_r == 0 || self.n_theta == 0 || self.n_z == 0 {
            return Err(Error::invalid("cylindrical bin counts must be >= 1"));
        }
        if !(self.r_min >= 0.0) || !(self.r_max > self.r_min) {
            return Err(Error::invalid("cylindrical radius range must satisfy 0 <= r_min < r_max"));
        }
        if !(self.z_max > self.z_min) {
            return Err(Error::invalid("cylindrical z range must satisfy z_min < z_max"));
        }
        Ok(())
    }

    pub fn bin_sizes(&self) -> (f64, f64, f64) {
        (
            (self.r_max - self.r_min) / self.n_r as f64,
            2.0 * PI / self.n_theta as f64,
            (self.z_max - self.z_min) / self.n_z as f64,
        )
    }

    /// Bin index for a Cartesian point, or `None` when it falls outside the
    /// half-open ranges.
    pub fn bin_of(&self, p: &Vec3) -> Option<(usize, usize, usize)> {
        let (r, theta, z) = cart_to_cyl(p);
        if !(r >= self.r_min && r < self.r_max && z >= self.z_min && z < self.z_max) {
            return None;
        }
        let (dr, dt, dz) = self.bin_sizes();
        let ir = (((r - self.r_min) / dr) as usize).min(self.n_r - 1);
        let it = (((theta + PI) / dt) as usize).min(self.n_theta - 1);
        let iz = (((z - self.z_min) / dz) as usize).min(self.n_z - 1);
        Some((ir, it, iz))
    }

    /// Cartesian position of a bin centre.
    pub fn bin_center(&self, idx: (usize, usize, usize)) -> Vec3 {
        let (dr, dt, dz) = self.bin_sizes();
        let r = self.r_min + (idx.0 as f64 + 0.5) * dr;
        let theta = -PI + (idx.1 as f64 + 0.5) * dt;
        let z = self.z_min + (idx.2 as f64 + 0.5) * dz;
        cyl_to_cart(r, theta, z)
    }
}
