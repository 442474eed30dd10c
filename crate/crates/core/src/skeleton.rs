//! Anchor initialization: cylindrical voxelization of point clouds, farthest
//! point sampling and the lidar-main / camera-augment skeleton merge.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::geometry::{CylindricalSpec, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointSource {
    Lidar,
    Camera,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub source: Option<PointSource>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Self {
        PointCloud { points, source: None }
    }

    pub fn with_source(points: Vec<Vec3>, source: PointSource) -> Self {
        PointCloud { points, source: Some(source) }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

pub type BinIndex = (usize, usize, usize);

/// Occupied cylindrical bins with their Cartesian centres, ordered by index.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelSet {
    pub spec: CylindricalSpec,
    pub occupied: BTreeMap<BinIndex, Vec3>,
}

impl VoxelSet {
    pub fn len(&self) -> usize {
        self.occupied.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occupied.is_empty()
    }

    pub fn centers(&self) -> Vec<Vec3> {
        self.occupied.values().copied().collect()
    }
}

/// Bins every in-range point; points outside the half-open ranges are dropped.
pub fn cylindrical_partition(pc: &PointCloud, spec: &CylindricalSpec) -> Result<VoxelSet> {
    spec.validate()?;
    let mut occupied = BTreeMap::new();
    for p in &pc.points {
        if let Some(idx) = spec.bin_of(p) {
            occupied.entry(idx).or_insert_with(|| spec.bin_center(idx));
        }
    }
    Ok(VoxelSet { spec: *spec, occupied })
}

/// Greedy farthest point sampling starting from `seed_index`. Ties go to the
/// lowest index.
pub fn farthest_point_sampling(points: &[Vec3], k: usize, seed_index: usize) -> Result<Vec<usize>> {
    if k > points.len() {
        return Err(Error::invalid(format!("cannot sample {k} points from {}", points.len())));
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    if seed_index >= points.len() {
        return Err(Error::invalid(format!("seed index {seed_index} out of range")));
    }
    let mut selected = Vec::with_capacity(k);
    let mut taken = vec![false; points.len()];
    let mut min_dist = vec![f64::INFINITY; points.len()];
    let mut current = seed_index;
    loop {
        selected.push(current);
        taken[current] = true;
        if selected.len() == k {
            break;
        }
        let anchor = points[current];
        let mut best: Option<usize> = None;
        for (i, p) in points.iter().enumerate() {
            let d = p.distance(&anchor);
            if d < min_dist[i] {
                min_dist[i] = d;
            }
            if !taken[i] && best.is_none_or(|b| min_dist[i] > min_dist[b]) {
                best = Some(i);
            }
        }
        current = best.expect("k <= points.len() leaves a candidate");
    }
    Ok(selected)
}

/// Splits an anchor budget by an `M:N` ratio, rounding the lidar share.
pub fn split_budget(total: usize, ratio: (usize, usize)) -> Result<(usize, usize)> {
    let sum = ratio.0 + ratio.1;
    if sum == 0 {
        return Err(Error::invalid("anchor ratio must not be 0:0"));
    }
    let m = ((total * ratio.0) as f64 / sum as f64).round() as usize;
    Ok((m, total - m))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonAnchors {
    /// Lidar anchors first, then camera anchors.
    pub anchors: Vec<Vec3>,
    pub lidar_count: usize,
    pub camera_count: usize,
    /// Camera voxels left after overlap removal and range filtering.
    pub camera_survivors: usize,
    /// Requested camera anchors that could not be supplied.
    pub shortfall: usize,
}

impl SkeletonAnchors {
    pub fn lidar(&self) -> &[Vec3] {
        &self.anchors[..self.lidar_count]
    }

    pub fn camera(&self) -> &[Vec3] {
        &self.anchors[self.lidar_count..]
    }
}

/// Samples `m` lidar anchors, drops camera voxels sharing a bin with a lidar
/// anchor or lying farther than `range_filter` from every lidar anchor, and
/// samples up to `n` camera anchors from what is left.
pub fn skeleton_merge(
    lidar: &VoxelSet,
    camera: &VoxelSet,
    m: usize,
    n: usize,
    range_filter: f64,
    seed_index: usize,
) -> Result<SkeletonAnchors> {
    if m > lidar.len() {
        return Err(Error::invalid(format!("requested {m} lidar anchors from {} occupied voxels", lidar.len())));
    }
    let lidar_keys: Vec<BinIndex> = lidar.occupied.keys().copied().collect();
    let lidar_centers = lidar.centers();
    let seed = if lidar_centers.is_empty() { 0 } else { seed_index.min(lidar_centers.len() - 1) };
    let picks = farthest_point_sampling(&lidar_centers, m, seed)?;
    let anchor_bins: BTreeSet<BinIndex> = picks.iter().map(|i| lidar_keys[*i]).collect();
    let lidar_anchors: Vec<Vec3> = picks.iter().map(|i| lidar_centers[*i]).collect();

    let survivors: Vec<Vec3> = camera
        .occupied
        .iter()
        .filter(|(idx, _)| !anchor_bins.contains(idx))
        .filter(|(_, c)| lidar_anchors.iter().any(|a| a.distance(c) <= range_filter))
        .map(|(_, c)| *c)
        .collect();

    let take = n.min(survivors.len());
    let cam_picks = if take == 0 { Vec::new() } else { farthest_point_sampling(&survivors, take, 0)? };

    let mut anchors = lidar_anchors;
    anchors.extend(cam_picks.iter().map(|i| survivors[*i]));
    Ok(SkeletonAnchors {
        anchors,
        lidar_count: m,
        camera_count: take,
        camera_survivors: survivors.len(),
        shortfall: n - take,
    })
}
