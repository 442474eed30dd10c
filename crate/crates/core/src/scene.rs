//! Aggregation of primitives into occupancy probabilities, mixture semantics
//! and dense semantic grids.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::primitives::{basis_abs_bounds, kernel_level, PreparedPrimitive, Primitive, PrimitiveKind, NU_MIN};

/// Mixture denominators below this fall back to a uniform class distribution.
pub const DENSITY_FLOOR: f64 = 1e-30;

/// Rounds of the warp-displacement bound refinement in [`support_bounds`].
const WARP_BOUND_ROUNDS: usize = 3;

/// How a primitive's stored opacity enters its geometric occupancy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OpacityCoupling {
    /// `αᵢ(x) = opacityᵢ · kernelᵢ(x)`.
    #[default]
    Multiplicative,
    /// `αᵢ(x) = kernelᵢ(x)`; opacity only acts as the mixture prior.
    KernelOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub num_classes: usize,
    pub primitives: Vec<Primitive>,
    #[serde(default)]
    pub coupling: OpacityCoupling,
}

impl Scene {
    pub fn new(num_classes: usize, primitives: Vec<Primitive>) -> Self {
        Scene { num_classes, primitives, coupling: OpacityCoupling::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::invalid("scene needs at least one semantic class"));
        }
        if self.num_classes > 255 {
            return Err(Error::invalid("at most 255 semantic classes are supported"));
        }
        for (i, p) in self.primitives.iter().enumerate() {
            p.validate().map_err(|e| Error::invalid(format!("primitive {i}: {e}")))?;
            if p.num_classes() != self.num_classes {
                return Err(Error::invalid(format!(
                    "primitive {i} has {} semantic logits, scene has {} classes",
                    p.num_classes(),
                    self.num_classes
                )));
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    /// Validates and caches every primitive for evaluation.
    pub fn prepare(&self) -> Result<PreparedScene<'_>> {
        self.validate()?;
        let prims = self.primitives.iter().map(PreparedPrimitive::new).collect::<Result<Vec<_>>>()?;
        let opacity_sum: f64 = self.primitives.iter().map(|p| p.opacity).sum();
        let softmax = self.primitives.iter().map(|p| softmax(&p.semantics)).collect();
        Ok(PreparedScene { scene: self, prims, opacity_sum, softmax })
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub struct PreparedScene<'a> {
    pub scene: &'a Scene,
    pub prims: Vec<PreparedPrimitive<'a>>,
    pub opacity_sum: f64,
    /// Softmax-normalized semantics per primitive.
    pub softmax: Vec<Vec<f64>>,
}

impl PreparedScene<'_> {
    /// l1-normalized opacity prior of primitive `i`.
    pub fn prior(&self, i: usize) -> f64 {
        if self.opacity_sum > 0.0 {
            self.scene.primitives[i].opacity / self.opacity_sum
        } else {
            0.0
        }
    }

    /// Geometric occupancy `αᵢ` for a given kernel value.
    pub fn alpha(&self, i: usize, kernel: f64) -> f64 {
        match self.scene.coupling {
            OpacityCoupling::Multiplicative => self.scene.primitives[i].opacity * kernel,
            OpacityCoupling::KernelOnly => kernel,
        }
    }

    pub fn accumulate(&self, i: usize, x: &Vec3, acc: &mut VoxelAccumulator) {
        let (k, d) = self.prims[i].eval(x);
        acc.add(self.alpha(i, k), d * self.prior(i), &self.softmax[i]);
    }

    /// Untruncated per-point accumulation over every primitive.
    pub fn accumulate_all(&self, x: &Vec3) -> VoxelAccumulator {
        let mut acc = VoxelAccumulator::new(self.scene.num_classes);
        for i in 0..self.prims.len() {
            self.accumulate(i, x, &mut acc);
        }
        acc
    }
}

/// Running per-point sums: `Σ ln(1 − αᵢ)`, `Σ wᵢ` and `Σ wᵢ·c̃ᵢ`.
#[derive(Debug, Clone)]
pub struct VoxelAccumulator {
    pub log_empty: f64,
    pub weight: f64,
    pub weighted: Vec<f64>,
}

impl VoxelAccumulator {
    pub fn new(num_classes: usize) -> Self {
        VoxelAccumulator { log_empty: 0.0, weight: 0.0, weighted: vec![0.0; num_classes] }
    }

    pub fn add(&mut self, alpha: f64, weight: f64, semantics: &[f64]) {
        self.log_empty += (-alpha).ln_1p();
        if weight > 0.0 {
            self.weight += weight;
            for (acc, c) in self.weighted.iter_mut().zip(semantics) {
                *acc += weight * c;
            }
        }
    }

    pub fn occupancy(&self) -> f64 {
        1.0 - self.log_empty.exp()
    }

    pub fn expectation(&self) -> Vec<f64> {
        let c = self.weighted.len();
        if self.weight < DENSITY_FLOOR {
            return vec![1.0 / c as f64; c];
        }
        self.weighted.iter().map(|w| w / self.weight).collect()
    }

    /// `[1 − α; α·e]`.
    pub fn compose(&self) -> Vec<f64> {
        let alpha = self.occupancy();
        let mut out = Vec::with_capacity(self.weighted.len() + 1);
        out.push(1.0 - alpha);
        out.extend(self.expectation().into_iter().map(|e| alpha * e));
        out
    }
}

/// `α(x) = 1 − Πᵢ(1 − αᵢ(x))`.
pub fn occupancy_probability(x: &Vec3, scene: &Scene) -> Result<f64> {
    Ok(scene.prepare()?.accumulate_all(x).occupancy())
}

/// Mixture expectation of softmax semantics with opacity priors.
pub fn semantic_expectation(x: &Vec3, scene: &Scene) -> Result<Vec<f64>> {
    Ok(scene.prepare()?.accumulate_all(x).expectation())
}

/// `(C+1)` probability vector with the empty class at index 0.
pub fn compose_occ(x: &Vec3, scene: &Scene) -> Result<Vec<f64>> {
    Ok(scene.prepare()?.accumulate_all(x).compose())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn from_center_half(center: Vec3, half: Vec3) -> Self {
        Aabb { min: center - half, max: center + half }
    }

    pub fn half_extent(&self) -> Vec3 {
        (self.max - self.min).scale(0.5)
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn contains_box(&self, o: &Aabb) -> bool {
        (0..3).all(|i| o.min[i] >= self.min[i] && o.max[i] <= self.max[i])
    }

    pub fn intersect(&self, o: &Aabb) -> Aabb {
        let mut min = Vec3::ZERO;
        let mut max = Vec3::ZERO;
        for i in 0..3 {
            min[i] = self.min[i].max(o.min[i]);
            max[i] = self.max[i].min(o.max[i]);
        }
        Aabb { min, max }
    }

    pub fn corners(&self) -> [Vec3; 8] {
        let mut out = [Vec3::ZERO; 8];
        for (n, c) in out.iter_mut().enumerate() {
            for a in 0..3 {
                c[a] = if n >> a & 1 == 0 { self.min[a] } else { self.max[a] };
            }
        }
        out
    }
}

/// Axis-aligned voxel lattice. Voxel `(i, j, k)` has its centre at
/// `origin + (i + ½, j + ½, k + ½)·voxel_size`; linear order is x-fastest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin: Vec3,
    pub extent: Vec3,
    pub dims: [usize; 3],
}

impl GridSpec {
    pub fn new(origin: Vec3, extent: Vec3, dims: [usize; 3]) -> Result<Self> {
        let spec = GridSpec { origin, extent, dims };
        spec.validate()?;
        Ok(spec)
    }

    /// 200×200×16 over x, y ∈ [−50, 50] m and z ∈ [−5, 3] m.
    pub fn occupancy_default() -> Self {
        GridSpec { origin: Vec3::new(-50.0, -50.0, -5.0), extent: Vec3::new(100.0, 100.0, 8.0), dims: [200, 200, 16] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) {
            return Err(Error::invalid("grid dims must be >= 1"));
        }
        if !self.extent.0.iter().all(|e| *e > 0.0 && e.is_finite()) || !self.origin.is_finite() {
            return Err(Error::invalid("grid extent must be positive and finite"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn voxel_size(&self) -> Vec3 {
        Vec3::new(
            self.extent[0] / self.dims[0] as f64,
            self.extent[1] / self.dims[1] as f64,
            self.extent[2] / self.dims[2] as f64,
        )
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.dims[0];
        let j = (idx / self.dims[0]) % self.dims[1];
        let k = idx / (self.dims[0] * self.dims[1]);
        [i, j, k]
    }

    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> Vec3 {
        let h = self.voxel_size();
        Vec3::new(
            self.origin[0] + (i as f64 + 0.5) * h[0],
            self.origin[1] + (j as f64 + 0.5) * h[1],
            self.origin[2] + (k as f64 + 0.5) * h[2],
        )
    }

    pub fn center_of(&self, idx: usize) -> Vec3 {
        let [i, j, k] = self.coords(idx);
        self.voxel_center(i, j, k)
    }

    pub fn bounds(&self) -> Aabb {
        Aabb { min: self.origin, max: self.origin + self.extent }
    }

    /// Inclusive index ranges of voxels whose centres lie in `b`, or `None`
    /// when no centre does.
    pub fn voxel_range(&self, b: &Aabb) -> Option<[(usize, usize); 3]> {
        let h = self.voxel_size();
        let mut out = [(0, 0); 3];
        for a in 0..3 {
            let lo = ((b.min[a] - self.origin[a]) / h[a] - 0.5).ceil().max(0.0);
            let hi = ((b.max[a] - self.origin[a]) / h[a] - 0.5).floor().min(self.dims[a] as f64 - 1.0);
            if !(lo <= hi) {
                return None;
            }
            out[a] = (lo as usize, hi as usize);
        }
        Some(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GridData {
    /// One label per voxel, 0 = empty, 1..=C semantic.
    Labels(Vec<u8>),
    /// `C + 1` probabilities per voxel, voxel-major.
    Probabilities(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemanticGrid {
    pub spec: GridSpec,
    pub num_classes: usize,
    pub data: GridData,
}

impl SemanticGrid {
    pub fn empty_labels(spec: GridSpec, num_classes: usize) -> Self {
        SemanticGrid { spec, num_classes, data: GridData::Labels(vec![0; spec.len()]) }
    }

    pub fn from_labels(spec: GridSpec, num_classes: usize, labels: Vec<u8>) -> Result<Self> {
        let g = SemanticGrid { spec, num_classes, data: GridData::Labels(labels) };
        g.validate()?;
        Ok(g)
    }

    pub fn from_probabilities(spec: GridSpec, num_classes: usize, probs: Vec<f64>) -> Result<Self> {
        let g = SemanticGrid { spec, num_classes, data: GridData::Probabilities(probs) };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        match &self.data {
            GridData::Labels(l) => {
                if l.len() != self.spec.len() {
                    return Err(Error::invalid("label payload length does not match grid dims"));
                }
                if let Some(bad) = l.iter().find(|v| **v as usize > self.num_classes) {
                    return Err(Error::invalid(format!("label {bad} exceeds class count {}", self.num_classes)));
                }
            }
            GridData::Probabilities(p) => {
                let stride = self.num_classes + 1;
                if p.len() != self.spec.len() * stride {
                    return Err(Error::invalid("probability payload length does not match grid dims"));
                }
                for row in p.chunks(stride) {
                    let sum: f64 = row.iter().sum();
                    if (sum - 1.0).abs() > 1e-6 || row.iter().any(|v| !(0.0..=1.0 + 1e-9).contains(v)) {
                        return Err(Error::invalid("probability rows must lie in [0, 1] and sum to 1"));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn is_labels(&self) -> bool {
        matches!(self.data, GridData::Labels(_))
    }

    /// Probability row of voxel `idx` (probability grids only).
    pub fn probs(&self, idx: usize) -> Option<&[f64]> {
        match &self.data {
            GridData::Probabilities(p) => {
                let s = self.num_classes + 1;
                Some(&p[idx * s..(idx + 1) * s])
            }
            GridData::Labels(_) => None,
        }
    }

    /// Per-voxel labels; probability grids are reduced by argmax with ties
    /// going to the lower class index.
    pub fn labels(&self) -> Vec<u8> {
        match &self.data {
            GridData::Labels(l) => l.clone(),
            GridData::Probabilities(p) => p.chunks(self.num_classes + 1).map(|row| argmax(row) as u8).collect(),
        }
    }

    pub fn to_labels(&self) -> SemanticGrid {
        SemanticGrid { spec: self.spec, num_classes: self.num_classes, data: GridData::Labels(self.labels()) }
    }

    pub fn occupied_count(&self) -> usize {
        self.labels().iter().filter(|l| **l != 0).count()
    }
}

/// Index of the largest value; the first one wins on ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Bound on the normalized local coordinates `|u|` of the level set `f ≤ level`
/// before any warp.
fn unwarped_radius(p: &Primitive, level: f64) -> f64 {
    match p.kind {
        PrimitiveKind::Tp => level.sqrt(),
        // |u_z|^(2/ε1) ≤ f and |u_x|^(2/ε2) ≤ h ≤ f^(ε1/ε2) both give |u| ≤ f^(ε1/2)
        PrimitiveKind::Tsq | PrimitiveKind::Tsqiw => level.powf(p.eps1 / 2.0),
    }
}

fn warp_displacement_bound(p: &Primitive, u_bound: &Vec3) -> Vec3 {
    let mut d = Vec3::ZERO;
    for (b, w) in basis_abs_bounds(u_bound).iter().zip(&p.warp) {
        if *w != 0.0 {
            d += b.scale(w.abs());
        }
    }
    d
}

fn world_box(prep: &PreparedPrimitive<'_>, u_bound: &Vec3) -> Aabb {
    let p = prep.prim;
    if p.kind == PrimitiveKind::Tp && u_bound[0] == u_bound[1] && u_bound[1] == u_bound[2] {
        // tight box of the ellipsoid q ≤ ρ²: half-width ρ·sqrt(Σ_kk)
        let r = &prep.rotation.0;
        let rho = u_bound[0];
        let mut half = Vec3::ZERO;
        for k in 0..3 {
            let var: f64 = (0..3).map(|a| (r[k][a] * p.scale[a]).powi(2)).sum();
            half[k] = rho * var.sqrt();
        }
        return Aabb::from_center_half(p.center, half);
    }
    let local_half = u_bound.mul_elem(&p.scale);
    let r = &prep.rotation.0;
    let mut half = Vec3::ZERO;
    for k in 0..3 {
        half[k] = (0..3).map(|a| r[k][a].abs() * local_half[a]).sum();
    }
    Aabb::from_center_half(p.center, half)
}

fn is_warped(p: &Primitive) -> bool {
    p.kind.has_warp() && p.warp.iter().any(|w| *w != 0.0)
}

fn level_bounds(prep: &PreparedPrimitive<'_>, level: f64) -> Aabb {
    let p = prep.prim;
    let rho = unwarped_radius(p, level);
    let mut u = Vec3::splat(rho);
    if is_warped(p) {
        for _ in 0..WARP_BOUND_ROUNDS {
            let next = Vec3::splat(rho) + warp_displacement_bound(p, &u).div_elem(&p.scale);
            if next == u {
                break;
            }
            u = next;
        }
    }
    world_box(prep, &u)
}

fn level_bounds_within(prep: &PreparedPrimitive<'_>, level: f64, domain: &Aabb) -> Aabb {
    let p = prep.prim;
    let rho = unwarped_radius(p, level);
    if !is_warped(p) {
        return world_box(prep, &Vec3::splat(rho)).intersect(domain);
    }
    // Start from the domain itself expressed in normalized local coordinates;
    // every refinement round keeps all in-domain level-set points.
    let mut u = Vec3::ZERO;
    for c in domain.corners() {
        let local = prep.local(&c).div_elem(&p.scale);
        for a in 0..3 {
            u[a] = u[a].max(local[a].abs());
        }
    }
    for _ in 0..WARP_BOUND_ROUNDS {
        let cand = Vec3::splat(rho) + warp_displacement_bound(p, &u).div_elem(&p.scale);
        let next = Vec3::new(u[0].min(cand[0]), u[1].min(cand[1]), u[2].min(cand[2]));
        if next == u {
            break;
        }
        u = next;
    }
    world_box(prep, &u).intersect(domain)
}

/// Box containing `{x : kernel(x) ≥ threshold}` around the primitive's centre.
///
/// For warped superquadrics the displacement bound is iterated outward from
/// the unwarped level-set box; lobes of the warped level set that are not
/// connected to that region are not covered. Use [`support_bounds_within`]
/// when a containing domain is known.
pub fn support_bounds(p: &Primitive, threshold: f64) -> Result<Aabb> {
    check_threshold(threshold)?;
    let prep = p.prepare()?;
    Ok(level_bounds(&prep, kernel_level(threshold, p.nu)))
}

/// Box containing every point of `domain` where `kernel(x) ≥ threshold`,
/// including all lobes of warped primitives.
pub fn support_bounds_within(p: &Primitive, threshold: f64, domain: &Aabb) -> Result<Aabb> {
    check_threshold(threshold)?;
    let prep = p.prepare()?;
    Ok(level_bounds_within(&prep, kernel_level(threshold, p.nu), domain))
}

fn check_threshold(t: f64) -> Result<()> {
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::invalid(format!("support threshold {t} must lie in (0, 1)")));
    }
    Ok(())
}

/// Degrees of freedom from the number of voxel centres inside the unit level
/// set (`f ≤ 1`), minus one, floored at 1.
pub fn estimate_dof(p: &Primitive, spec: &GridSpec) -> Result<f64> {
    spec.validate()?;
    let prep = p.prepare()?;
    let count = count_inside(&prep, spec);
    Ok(((count as f64) - 1.0).max(NU_MIN))
}

fn count_inside(prep: &PreparedPrimitive<'_>, spec: &GridSpec) -> usize {
    let bounds = level_bounds_within(prep, 1.0, &spec.bounds());
    let Some(range) = spec.voxel_range(&bounds) else {
        return 0;
    };
    let mut count = 0;
    for k in range[2].0..=range[2].1 {
        for j in range[1].0..=range[1].1 {
            for i in range[0].0..=range[0].1 {
                if prep.implicit(&spec.voxel_center(i, j, k)) <= 1.0 {
                    count += 1;
                }
            }
        }
    }
    count
}

/// Re-estimates ν for every primitive of `scene` on `spec`.
pub fn refresh_dof(scene: &mut Scene, spec: &GridSpec) -> Result<()> {
    for p in scene.primitives.iter_mut() {
        p.nu = estimate_dof(p, spec)?;
    }
    Ok(())
}

/// Voxel index ranges each primitive may touch at `threshold`
/// (`threshold ≤ 0` disables truncation).
///
/// A primitive is cut where its kernel drops below
/// `threshold · min(1, d_min / dᵢ)`, with `dᵢ` its density factor and
/// `d_min` the smallest in the scene. Outside that box it changes `α` by less
/// than `threshold·opacity`, and it changes `α·e` by at most the same amount
/// even when a neighbour's mixture weight uses a much smaller density factor.
pub fn primitive_ranges(prep: &PreparedScene<'_>, spec: &GridSpec, threshold: f64) -> Vec<Option<[(usize, usize); 3]>> {
    let domain = spec.bounds();
    let full = [(0, spec.dims[0] - 1), (0, spec.dims[1] - 1), (0, spec.dims[2] - 1)];
    let d_min = prep.prims.iter().map(|p| p.density_factor()).fold(f64::INFINITY, f64::min);
    prep.prims
        .iter()
        .map(|pp| {
            if threshold <= 0.0 {
                Some(full)
            } else {
                let t = threshold.min(1.0 - 1e-12) * (d_min / pp.density_factor()).min(1.0);
                let level = kernel_level(t, pp.prim.nu);
                spec.voxel_range(&level_bounds_within(pp, level, &domain))
            }
        })
        .collect()
}

/// Per-voxel accumulators for the whole grid, computed slab by slab in z.
/// Within a voxel, primitives are always visited in scene order.
pub fn accumulate_grid(prep: &PreparedScene<'_>, spec: &GridSpec, threshold: f64) -> Vec<VoxelAccumulator> {
    let ranges = primitive_ranges(prep, spec, threshold);
    let c = prep.scene.num_classes;
    let slab = spec.dims[0] * spec.dims[1];
    let mut out = vec![VoxelAccumulator::new(c); spec.len()];
    out.par_chunks_mut(slab).enumerate().for_each(|(k, slab_acc)| {
        for (i, range) in ranges.iter().enumerate() {
            let Some(r) = range else { continue };
            if k < r[2].0 || k > r[2].1 {
                continue;
            }
            for y in r[1].0..=r[1].1 {
                for x in r[0].0..=r[0].1 {
                    let center = spec.voxel_center(x, y, k);
                    prep.accumulate(i, &center, &mut slab_acc[x + spec.dims[0] * y]);
                }
            }
        }
    });
    out
}

/// Splats `scene` into a probability grid. Each primitive only contributes
/// to voxels inside its `threshold` support box; `threshold ≤ 0` evaluates
/// every primitive at every voxel.
pub fn splat(scene: &Scene, spec: &GridSpec, threshold: f64) -> Result<SemanticGrid> {
    spec.validate()?;
    if threshold >= 1.0 {
        return Err(Error::invalid("splat threshold must be < 1"));
    }
    let prep = scene.prepare()?;
    let acc = accumulate_grid(&prep, spec, threshold);
    let mut probs = Vec::with_capacity(spec.len() * (scene.num_classes + 1));
    for a in &acc {
        probs.extend(a.compose());
    }
    Ok(SemanticGrid { spec: *spec, num_classes: scene.num_classes, data: GridData::Probabilities(probs) })
}
