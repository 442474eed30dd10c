//! Per-camera depth-bin maps: lidar projection, camera/lidar fusion,
//! pyramid downsampling and pseudo point cloud extraction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Mat3, Vec3};
use crate::skeleton::{PointCloud, PointSource};

pub const DEFAULT_BIN_INTERVAL: f64 = 0.5;
pub const DEFAULT_TOP_K: usize = 3;

/// `height × width × num_bins` occupancy probabilities, bin-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub num_bins: usize,
    pub bin_interval: f64,
    pub data: Vec<f64>,
}

impl DepthMap {
    pub fn zeros(height: usize, width: usize, num_bins: usize, bin_interval: f64) -> Self {
        DepthMap { width, height, num_bins, bin_interval, data: vec![0.0; width * height * num_bins] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.num_bins == 0 {
            return Err(Error::invalid("depth map dims must be >= 1"));
        }
        if !(self.bin_interval > 0.0) {
            return Err(Error::invalid("depth bin interval must be positive"));
        }
        if self.data.len() != self.width * self.height * self.num_bins {
            return Err(Error::invalid("depth map payload length does not match dims"));
        }
        if self.data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("depth probabilities must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn offset(&self, row: usize, col: usize, bin: usize) -> usize {
        (row * self.width + col) * self.num_bins + bin
    }

    pub fn get(&self, row: usize, col: usize, bin: usize) -> f64 {
        self.data[self.offset(row, col, bin)]
    }

    pub fn set(&mut self, row: usize, col: usize, bin: usize, v: f64) {
        let o = self.offset(row, col, bin);
        self.data[o] = v;
    }

    pub fn ray(&self, row: usize, col: usize) -> &[f64] {
        let o = self.offset(row, col, 0);
        &self.data[o..o + self.num_bins]
    }

    fn same_layout(&self, o: &DepthMap) -> bool {
        self.width == o.width
            && self.height == o.height
            && self.num_bins == o.num_bins
            && self.bin_interval == o.bin_interval
    }
}

/// Pinhole camera with a world→camera extrinsic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub intrinsic: [[f64; 3]; 3],
    pub extrinsic: [[f64; 4]; 4],
    pub width: usize,
    pub height: usize,
}

impl CameraModel {
    /// Camera at the world origin looking down +z.
    pub fn simple(focal: f64, width: usize, height: usize) -> Self {
        CameraModel {
            intrinsic: [[focal, 0.0, width as f64 / 2.0], [0.0, focal, height as f64 / 2.0], [0.0, 0.0, 1.0]],
            extrinsic: [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]],
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.intrinsic[0][0] > 0.0 && self.intrinsic[1][1] > 0.0) {
            return Err(Error::invalid("camera focal lengths must be positive"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("camera image size must be positive"));
        }
        let r = self.rotation();
        let rrt = r.mul_mat(&r.transpose());
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                if (rrt.0[i][j] - want).abs() > 1e-6 {
                    return Err(Error::invalid("camera extrinsic rotation is not orthonormal"));
                }
            }
        }
        Ok(())
    }

    fn rotation(&self) -> Mat3 {
        let e = &self.extrinsic;
        Mat3([[e[0][0], e[0][1], e[0][2]], [e[1][0], e[1][1], e[1][2]], [e[2][0], e[2][1], e[2][2]]])
    }

    fn translation(&self) -> Vec3 {
        Vec3::new(self.extrinsic[0][3], self.extrinsic[1][3], self.extrinsic[2][3])
    }

    pub fn world_to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation().mul_vec(p) + self.translation()
    }

    pub fn camera_to_world(&self, p: &Vec3) -> Vec3 {
        self.rotation().tmul_vec(&(*p - self.translation()))
    }

    /// Image-plane coordinates of a camera-frame point with positive depth.
    fn project(&self, pc: &Vec3) -> (f64, f64) {
        let k = &self.intrinsic;
        let x = pc[0] / pc[2];
        let y = pc[1] / pc[2];
        (k[0][0] * x + k[0][1] * y + k[0][2], k[1][1] * y + k[1][2])
    }

    /// Camera-frame point at z-depth `depth` behind image coordinates `(u, v)`.
    fn unproject(&self, u: f64, v: f64, depth: f64) -> Vec3 {
        let k = &self.intrinsic;
        let y = (v - k[1][2]) / k[1][1];
        let x = (u - k[0][2] - k[0][1] * y) / k[0][0];
        Vec3::new(x * depth, y * depth, depth)
    }
}

/// Lidar depth map: one-hot per pixel ray at the nearest point's bin.
/// Bins are `[k·Δ, (k+1)·Δ)` in camera z-depth; points behind the camera,
/// outside the image or beyond the last bin are ignored.
pub fn project_points_to_depth(
    points: &PointCloud,
    cam: &CameraModel,
    height: usize,
    width: usize,
    num_bins: usize,
    bin_interval: f64,
) -> Result<DepthMap> {
    cam.validate()?;
    let mut map = DepthMap::zeros(height, width, num_bins, bin_interval);
    map.validate()?;
    let sx = width as f64 / cam.width as f64;
    let sy = height as f64 / cam.height as f64;
    let mut nearest: Vec<Option<usize>> = vec![None; width * height];
    for p in &points.points {
        let pc = cam.world_to_camera(p);
        if !(pc[2] > 0.0) {
            continue;
        }
        let (u, v) = cam.project(&pc);
        let (col, row) = ((u * sx).floor(), (v * sy).floor());
        if col < 0.0 || row < 0.0 || col >= width as f64 || row >= height as f64 {
            continue;
        }
        let bin = (pc[2] / bin_interval).floor();
        if bin >= num_bins as f64 {
            continue;
        }
        let slot = &mut nearest[row as usize * width + col as usize];
        let bin = bin as usize;
        if slot.is_none_or(|b| bin < b) {
            *slot = Some(bin);
        }
    }
    for (pix, bin) in nearest.iter().enumerate() {
        if let Some(b) = bin {
            map.data[pix * num_bins + b] = 1.0;
        }
    }
    Ok(map)
}

/// Elementwise `clamp(cam + lidar, 0, 1)`.
pub fn fuse_depth(cam: &DepthMap, lidar: &DepthMap) -> Result<DepthMap> {
    if !cam.same_layout(lidar) {
        return Err(Error::invalid("depth maps differ in shape or bin interval"));
    }
    let data = cam.data.iter().zip(&lidar.data).map(|(a, b)| (a + b).clamp(0.0, 1.0)).collect();
    Ok(DepthMap { width: cam.width, height: cam.height, num_bins: cam.num_bins, bin_interval: cam.bin_interval, data })
}

/// Halves the spatial resolution (floor) with per-bin bilinear sampling at
/// output pixel centres.
pub fn downsample_depth(map: &DepthMap, factor: f64) -> Result<DepthMap> {
    if factor != 0.5 {
        return Err(Error::invalid("only a 0.5 downsampling factor is supported"));
    }
    if map.width < 2 || map.height < 2 {
        return Err(Error::invalid("depth map too small to downsample"));
    }
    let (ow, oh) = (map.width / 2, map.height / 2);
    let mut out = DepthMap::zeros(oh, ow, map.num_bins, map.bin_interval);
    let scale_x = map.width as f64 / ow as f64;
    let scale_y = map.height as f64 / oh as f64;
    let sample_axis = |o: usize, scale: f64, n: usize| {
        let c = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = c.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, c - i0 as f64)
    };
    for row in 0..oh {
        let (y0, y1, ty) = sample_axis(row, scale_y, map.height);
        for col in 0..ow {
            let (x0, x1, tx) = sample_axis(col, scale_x, map.width);
            for b in 0..map.num_bins {
                let top = map.get(y0, x0, b) * (1.0 - tx) + map.get(y0, x1, b) * tx;
                let bottom = map.get(y1, x0, b) * (1.0 - tx) + map.get(y1, x1, b) * tx;
                out.set(row, col, b, top * (1.0 - ty) + bottom * ty);
            }
        }
    }
    Ok(out)
}

/// The depth map followed by `levels` successive halvings.
pub fn depth_pyramid(map: &DepthMap, levels: usize) -> Result<Vec<DepthMap>> {
    let mut out = vec![map.clone()];
    for _ in 0..levels {
        let next = downsample_depth(out.last().expect("non-empty"), 0.5)?;
        out.push(next);
    }
    Ok(out)
}

/// Back-projects the `top_k` most probable bins of every pixel ray (ties go
/// to the nearer bin) to points at the bin-centre depth. Zero-probability
/// bins are never emitted.
pub fn pseudo_pointcloud(map: &DepthMap, cam: &CameraModel, top_k: usize) -> Result<PointCloud> {
    if top_k == 0 {
        return Err(Error::invalid("top_k must be >= 1"));
    }
    cam.validate()?;
    let sx = cam.width as f64 / map.width as f64;
    let sy = cam.height as f64 / map.height as f64;
    let mut points = Vec::new();
    let mut order: Vec<usize> = Vec::with_capacity(map.num_bins);
    for row in 0..map.height {
        for col in 0..map.width {
            let ray = map.ray(row, col);
            order.clear();
            order.extend((0..map.num_bins).filter(|b| ray[*b] > 0.0));
            order.sort_by(|a, b| ray[*b].total_cmp(&ray[*a]).then(a.cmp(b)));
            let (u, v) = ((col as f64 + 0.5) * sx, (row as f64 + 0.5) * sy);
            for &b in order.iter().take(top_k) {
                let depth = (b as f64 + 0.5) * map.bin_interval;
                points.push(cam.camera_to_world(&cam.unproject(u, v, depth)));
            }
        }
    }
    Ok(PointCloud::with_source(points, PointSource::Camera))
}
