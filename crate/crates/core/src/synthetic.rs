//! Ground-truth scenes for fit and eval round trips.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{Quaternion, Vec3};
use crate::primitives::{Primitive, NUM_BASIS_FIELDS};
use crate::scene::{refresh_dof, splat, GridSpec, Scene, SemanticGrid};

/// Truncation used when rendering preset targets.
pub const SYNTHETIC_THRESHOLD: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    ThreeBoxes,
    DrivingToy,
}

impl Preset {
    pub const ALL: [Preset; 2] = [Preset::ThreeBoxes, Preset::DrivingToy];

    pub fn name(self) -> &'static str {
        match self {
            Preset::ThreeBoxes => "three-boxes",
            Preset::DrivingToy => "driving-toy",
        }
    }

    pub fn class_names(self) -> Vec<String> {
        let names: &[&str] = match self {
            Preset::ThreeBoxes => &["red", "green", "blue"],
            Preset::DrivingToy => &["ground", "wall", "car", "pedestrian", "vegetation"],
        };
        names.iter().map(|s| s.to_string()).collect()
    }

    pub fn grid_spec(self) -> GridSpec {
        match self {
            Preset::ThreeBoxes => GridSpec {
                origin: Vec3::new(-16.0, -16.0, -4.0),
                extent: Vec3::new(32.0, 32.0, 8.0),
                dims: [32, 32, 8],
            },
            Preset::DrivingToy => GridSpec {
                origin: Vec3::new(-32.0, -32.0, -2.0),
                extent: Vec3::new(64.0, 64.0, 8.0),
                dims: [64, 64, 8],
            },
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown preset {s:?} (expected three-boxes or driving-toy)")))
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCase {
    pub preset: Preset,
    pub scene: Scene,
    pub spec: GridSpec,
    pub labels: SemanticGrid,
}

fn one_hot(class: usize, classes: usize) -> Vec<f64> {
    (0..classes).map(|c| if c == class { 4.0 } else { 0.0 }).collect()
}

fn yaw(angle: f64) -> Quaternion {
    Quaternion::from_axis_angle(Vec3::new(0.0, 0.0, 1.0), angle)
}

fn three_boxes(rng: &mut ChaCha8Rng) -> Scene {
    let anchors = [Vec3::new(-8.0, -6.0, 0.0), Vec3::new(7.0, -5.0, -0.5), Vec3::new(0.0, 8.0, 0.5)];
    let primitives = anchors
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let center =
                *a + Vec3::new(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5), rng.random_range(-0.5..0.5));
            let scale = Vec3::new(rng.random_range(3.0..5.0), rng.random_range(3.0..5.0), rng.random_range(1.5..2.5));
            let rotation = yaw(rng.random_range(-0.6..0.6));
            let eps1 = rng.random_range(0.2..0.3);
            let eps2 = rng.random_range(0.2..0.3);
            Primitive::tsq(center, scale, rotation, 0.98, one_hot(i, 3), eps1, eps2, 1.0)
        })
        .collect();
    Scene::new(3, primitives)
}

fn driving_toy(rng: &mut ChaCha8Rng) -> Scene {
    let mut prims = Vec::new();
    // ground slab just below z = 0
    prims.push(Primitive::tsq(
        Vec3::new(0.0, 0.0, -1.0),
        Vec3::new(30.0, 30.0, 0.6),
        Quaternion::IDENTITY,
        0.97,
        one_hot(0, 5),
        0.2,
        0.2,
        1.0,
    ));
    // walls along both sides of the road
    for side in [-1.0, 1.0] {
        let x = side * rng.random_range(17.0..20.0);
        prims.push(Primitive::tsq(
            Vec3::new(x, 0.0, 2.0),
            Vec3::new(0.8, 28.0, 2.5),
            Quaternion::IDENTITY,
            0.95,
            one_hot(1, 5),
            0.2,
            0.2,
            1.0,
        ));
    }
    // car
    let car = Vec3::new(rng.random_range(-8.0..8.0), rng.random_range(-15.0..-5.0), 0.8);
    prims.push(Primitive::tsq(
        car,
        Vec3::new(2.0, 4.5, 1.2),
        yaw(rng.random_range(-0.3..0.3)),
        0.95,
        one_hot(2, 5),
        0.4,
        0.5,
        1.0,
    ));
    // pedestrian
    let ped = Vec3::new(rng.random_range(-10.0..10.0), rng.random_range(5.0..15.0), 1.0);
    prims.push(Primitive::tp(ped, Vec3::new(0.8, 0.8, 1.6), Quaternion::IDENTITY, 0.9, one_hot(3, 5), 1.0));
    // bush, bent by a few basis fields
    let mut w = [0.0; NUM_BASIS_FIELDS];
    for v in w.iter_mut().take(12) {
        *v = rng.random_range(-0.08..0.08);
    }
    let bush = Vec3::new(rng.random_range(8.0..14.0), rng.random_range(-20.0..20.0), 1.5);
    prims.push(
        Primitive::tsq(bush, Vec3::new(2.5, 2.5, 2.0), Quaternion::IDENTITY, 0.9, one_hot(4, 5), 1.0, 1.0, 1.0)
            .with_warp(w),
    );
    Scene::new(5, prims)
}

/// Scene, grid spec and label target for `preset`; identical for equal seeds.
pub fn generate(preset: Preset, seed: u64) -> Result<SyntheticCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = preset.grid_spec();
    let mut scene = match preset {
        Preset::ThreeBoxes => three_boxes(&mut rng),
        Preset::DrivingToy => driving_toy(&mut rng),
    };
    refresh_dof(&mut scene, &spec)?;
    scene.validate()?;
    let labels = splat(&scene, &spec, SYNTHETIC_THRESHOLD)?.to_labels();
    Ok(SyntheticCase { preset, scene, spec, labels })
}

/// Moves every center by `±voxels` voxel sizes along each axis, signs drawn from `seed`.
pub fn jitter_centers(scene: &Scene, spec: &GridSpec, voxels: f64, seed: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = spec.voxel_size();
    let mut out = scene.clone();
    for p in &mut out.primitives {
        for a in 0..3 {
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            p.center[a] += sign * voxels * size[a];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{confusion, miou};
    use crate::primitives::PrimitiveKind;

    #[test]
    fn presets_parse_by_name() {
        for p in Preset::ALL {
            assert_eq!(p.name().parse::<Preset>().unwrap(), p);
        }
        assert!("four-boxes".parse::<Preset>().is_err());
    }

    #[test]
    fn three_boxes_shape() {
        let case = generate(Preset::ThreeBoxes, 3).unwrap();
        assert_eq!(case.scene.primitives.len(), 3);
        assert!(case.scene.primitives.iter().all(|p| p.kind == PrimitiveKind::Tsq));
        assert_eq!(case.spec.dims, [32, 32, 8]);
        let pred = splat(&case.scene, &case.spec, SYNTHETIC_THRESHOLD).unwrap().to_labels();
        let counts = confusion(&pred, &case.labels).unwrap();
        assert_eq!(miou(&counts), Some(1.0));
        for c in 1..=3u8 {
            assert!(case.labels.labels().contains(&c), "class {c} missing");
        }
    }

    #[test]
    fn driving_toy_shape() {
        let case = generate(Preset::DrivingToy, 1).unwrap();
        assert_eq!(case.scene.primitives.len(), 6);
        assert_eq!(case.spec.dims, [64, 64, 8]);
        let labels = case.labels.labels();
        for c in 1..=5u8 {
            assert!(labels.contains(&c), "class {c} missing");
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(Preset::DrivingToy, 9).unwrap();
        let b = generate(Preset::DrivingToy, 9).unwrap();
        assert_eq!(a.scene, b.scene);
        assert_eq!(a.labels, b.labels);
        let c = generate(Preset::DrivingToy, 10).unwrap();
        assert_ne!(a.scene, c.scene);
    }

    #[test]
    fn jitter_moves_each_axis_by_half_a_voxel() {
        let case = generate(Preset::ThreeBoxes, 0).unwrap();
        let j = jitter_centers(&case.scene, &case.spec, 0.5, 4);
        for (a, b) in case.scene.primitives.iter().zip(&j.primitives) {
            for k in 0..3 {
                assert!(((a.center[k] - b.center[k]).abs() - 0.5).abs() < 1e-12);
            }
        }
    }
}
