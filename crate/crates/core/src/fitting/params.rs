//! Flat unconstrained parameter vectors for a scene.
//!
//! Per primitive: center(3), scale(3), rotation(4), opacity(1), semantics(C),
//! then eps(2) for superquadrics and warp(24) for warped superquadrics.
//! Scales pass through softplus, opacity through a sigmoid, shape exponents
//! through a sigmoid rescaled to `[EPS_MIN, EPS_MAX]` and warp weights
//! through tanh. Centers, raw quaternion components and semantic logits are
//! stored as-is.

use crate::error::{Error, Result};
use crate::geometry::{Quaternion, Vec3};
use crate::primitives::{ParamGrad, Primitive, PrimitiveKind, EPS_MAX, EPS_MIN, NUM_BASIS_FIELDS};
use crate::scene::Scene;

/// Distance kept from open-interval boundaries when inverting squashings.
const BOUNDARY_MARGIN: f64 = 1e-9;
/// Smallest scale a raw value can map to; softplus underflows to zero otherwise.
const SCALE_FLOOR: f64 = 1e-6;

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(BOUNDARY_MARGIN, 1.0 - BOUNDARY_MARGIN);
    (p / (1.0 - p)).ln()
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn scale_from_raw(x: f64) -> f64 {
    softplus(x).max(SCALE_FLOOR)
}

fn inv_softplus(y: f64) -> f64 {
    // ln(e^y − 1) = y + ln(1 − e^−y)
    y + (-(-y).exp()).ln_1p()
}

fn eps_from_raw(x: f64) -> f64 {
    EPS_MIN + (EPS_MAX - EPS_MIN) * sigmoid(x)
}

fn eps_to_raw(e: f64) -> f64 {
    logit((e - EPS_MIN) / (EPS_MAX - EPS_MIN))
}

fn warp_to_raw(w: f64) -> f64 {
    w.clamp(-1.0 + BOUNDARY_MARGIN, 1.0 - BOUNDARY_MARGIN).atanh()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockLayout {
    pub offset: usize,
    pub kind: PrimitiveKind,
    pub num_classes: usize,
}

impl BlockLayout {
    pub fn len(&self) -> usize {
        block_len(self.kind, self.num_classes)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn semantics(&self) -> usize {
        self.offset + 11
    }

    fn eps(&self) -> usize {
        self.semantics() + self.num_classes
    }

    fn warp(&self) -> usize {
        self.eps() + 2
    }

    /// Human-readable name of local coordinate `i` of this block.
    fn name(&self, i: usize) -> String {
        let c = self.num_classes;
        match i {
            0..=2 => format!("center[{i}]"),
            3..=5 => format!("scale[{}]", i - 3),
            6..=9 => format!("rotation[{}]", i - 6),
            10 => "opacity".to_string(),
            _ if i < 11 + c => format!("semantics[{}]", i - 11),
            _ if i < 13 + c => format!("eps{}", i - 11 - c + 1),
            _ => format!("warp[{}]", i - 13 - c + 1),
        }
    }
}

fn block_len(kind: PrimitiveKind, num_classes: usize) -> usize {
    11 + num_classes
        + match kind {
            PrimitiveKind::Tp => 0,
            PrimitiveKind::Tsq => 2,
            PrimitiveKind::Tsqiw => 2 + NUM_BASIS_FIELDS,
        }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    pub blocks: Vec<BlockLayout>,
    pub len: usize,
}

impl ParamLayout {
    pub fn for_scene(scene: &Scene) -> Self {
        let mut offset = 0;
        let blocks = scene
            .primitives
            .iter()
            .map(|p| {
                let b = BlockLayout { offset, kind: p.kind, num_classes: p.num_classes() };
                offset += b.len();
                b
            })
            .collect();
        ParamLayout { blocks, len: offset }
    }

    /// `"primitive 2 scale[1]"` style name of a flat coordinate.
    pub fn name(&self, index: usize) -> String {
        for (i, b) in self.blocks.iter().enumerate() {
            if index >= b.offset && index < b.offset + b.len() {
                return format!("primitive {i} {}", b.name(index - b.offset));
            }
        }
        format!("parameter {index}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub layout: ParamLayout,
    pub values: Vec<f64>,
}

impl ParamVector {
    pub fn zeros(layout: ParamLayout) -> Self {
        let values = vec![0.0; layout.len];
        ParamVector { layout, values }
    }

    pub fn from_scene(scene: &Scene) -> Self {
        let layout = ParamLayout::for_scene(scene);
        let mut values = vec![0.0; layout.len];
        for (b, p) in layout.blocks.iter().zip(&scene.primitives) {
            let o = b.offset;
            values[o..o + 3].copy_from_slice(&p.center.0);
            for a in 0..3 {
                values[o + 3 + a] = inv_softplus(p.scale[a]);
            }
            values[o + 6..o + 10].copy_from_slice(&p.rotation.as_array());
            values[o + 10] = logit(p.opacity);
            values[b.semantics()..b.semantics() + b.num_classes].copy_from_slice(&p.semantics);
            if p.kind.has_shape_exponents() {
                values[b.eps()] = eps_to_raw(p.eps1);
                values[b.eps() + 1] = eps_to_raw(p.eps2);
            }
            if p.kind.has_warp() {
                for (i, w) in p.warp.iter().enumerate() {
                    values[b.warp() + i] = warp_to_raw(*w);
                }
            }
        }
        ParamVector { layout, values }
    }

    /// Rebuilds a scene; kinds, degrees of freedom and coupling come from `template`.
    pub fn to_scene(&self, template: &Scene) -> Result<Scene> {
        if template.primitives.len() != self.layout.blocks.len() {
            return Err(Error::invalid("parameter layout does not match scene"));
        }
        let v = &self.values;
        let primitives = self
            .layout
            .blocks
            .iter()
            .zip(&template.primitives)
            .map(|(b, t)| {
                let o = b.offset;
                let mut p = Primitive {
                    kind: t.kind,
                    center: Vec3::new(v[o], v[o + 1], v[o + 2]),
                    scale: Vec3::new(scale_from_raw(v[o + 3]), scale_from_raw(v[o + 4]), scale_from_raw(v[o + 5])),
                    rotation: Quaternion::new(v[o + 6], v[o + 7], v[o + 8], v[o + 9]),
                    opacity: sigmoid(v[o + 10]),
                    semantics: v[b.semantics()..b.semantics() + b.num_classes].to_vec(),
                    eps1: t.eps1,
                    eps2: t.eps2,
                    warp: [0.0; NUM_BASIS_FIELDS],
                    nu: t.nu,
                };
                if b.kind.has_shape_exponents() {
                    p.eps1 = eps_from_raw(v[b.eps()]);
                    p.eps2 = eps_from_raw(v[b.eps() + 1]);
                }
                if b.kind.has_warp() {
                    for i in 0..NUM_BASIS_FIELDS {
                        p.warp[i] = v[b.warp() + i].tanh();
                    }
                }
                p
            })
            .collect();
        Ok(Scene { num_classes: template.num_classes, primitives, coupling: template.coupling })
    }

    /// Rescales every raw quaternion to unit norm.
    pub fn normalize_rotations(&mut self) {
        for b in &self.layout.blocks {
            let q = &mut self.values[b.offset + 6..b.offset + 10];
            let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 0.0 {
                q.iter_mut().for_each(|x| *x /= n);
            }
        }
    }

    /// Chains natural-parameter gradients (one per primitive) through the
    /// reparameterizations at the current values.
    pub fn chain_gradient(&self, natural: &[ParamGrad]) -> ParamVector {
        let mut out = ParamVector::zeros(self.layout.clone());
        let v = &self.values;
        for (b, g) in self.layout.blocks.iter().zip(natural) {
            let o = b.offset;
            let dst = &mut out.values;
            dst[o..o + 3].copy_from_slice(&g.center.0);
            for a in 0..3 {
                if softplus(v[o + 3 + a]) > SCALE_FLOOR {
                    dst[o + 3 + a] = g.scale[a] * sigmoid(v[o + 3 + a]);
                }
            }
            dst[o + 6..o + 10].copy_from_slice(&g.rotation);
            let s = sigmoid(v[o + 10]);
            dst[o + 10] = g.opacity * s * (1.0 - s);
            dst[b.semantics()..b.semantics() + b.num_classes].copy_from_slice(&g.semantics);
            if b.kind.has_shape_exponents() {
                for k in 0..2 {
                    let s = sigmoid(v[b.eps() + k]);
                    dst[b.eps() + k] = g.eps[k] * (EPS_MAX - EPS_MIN) * s * (1.0 - s);
                }
            }
            if b.kind.has_warp() {
                for i in 0..NUM_BASIS_FIELDS {
                    let t = v[b.warp() + i].tanh();
                    dst[b.warp() + i] = g.warp[i] * (1.0 - t * t);
                }
            }
        }
        out
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}
