//! Browser bindings: kernel cross-sections, scene splatting and a live fit.
//!
//! Every export is a thin wrapper over a plain Rust function so the same
//! code paths run in native tests.

use wasm_bindgen::prelude::*;

use tprim::fitting::{total_loss, Adam, FitOptions, ParamVector, DEFAULT_LAMBDA};
use tprim::geometry::{Quaternion, Vec3};
use tprim::io::SceneFile;
use tprim::metrics::{confusion, miou};
use tprim::primitives::{Primitive, PrimitiveKind, NUM_BASIS_FIELDS};
use tprim::scene::{refresh_dof, splat, GridSpec, Scene, SemanticGrid};
use tprim::synthetic::{generate, jitter_centers, Preset};

/// Kernel values on the `z = 0` plane of a unit-scale primitive, row-major
/// `size × size` over `[-2, 2]²`.
pub fn kernel_image(
    kind: &str,
    eps1: f64,
    eps2: f64,
    nu: f64,
    field: usize,
    weight: f64,
    size: usize,
) -> Result<Vec<f32>, String> {
    let kind = match kind {
        "tp" => PrimitiveKind::Tp,
        "tsq" => PrimitiveKind::Tsq,
        "tsqiw" => PrimitiveKind::Tsqiw,
        _ => return Err(format!("unknown primitive kind {kind:?}")),
    };
    if size == 0 || size > 1024 {
        return Err("image size must be in 1..=1024".into());
    }
    let mut p = Primitive::tsq(Vec3::ZERO, Vec3::splat(1.0), Quaternion::IDENTITY, 1.0, vec![0.0], eps1, eps2, nu);
    p.kind = kind;
    if kind == PrimitiveKind::Tp {
        p.eps1 = 1.0;
        p.eps2 = 1.0;
    }
    if kind == PrimitiveKind::Tsqiw {
        if !(1..=NUM_BASIS_FIELDS).contains(&field) {
            return Err(format!("basis field must be in 1..={NUM_BASIS_FIELDS}"));
        }
        p.warp[field - 1] = weight;
    }
    let prep = p.prepare().map_err(|e| e.to_string())?;
    p.validate().map_err(|e| e.to_string())?;
    let step = 4.0 / size as f64;
    let mut out = Vec::with_capacity(size * size);
    for row in 0..size {
        let y = 2.0 - (row as f64 + 0.5) * step;
        for col in 0..size {
            let x = -2.0 + (col as f64 + 0.5) * step;
            out.push(prep.kernel(&Vec3::new(x, y, 0.0)) as f32);
        }
    }
    Ok(out)
}

fn demo_spec() -> GridSpec {
    GridSpec { origin: Vec3::new(-16.0, -16.0, -4.0), extent: Vec3::new(32.0, 32.0, 8.0), dims: [32, 32, 8] }
}

/// Labels of slice `z` (x-fastest) from splatting a scene file onto a
/// 32×32×8 grid over `[-16, 16]² × [-4, 4]`.
pub fn splat_labels(scene_json: &str, z: usize, threshold: f64) -> Result<Vec<u8>, String> {
    let scene = SceneFile::parse(scene_json, false).and_then(|f| f.to_scene()).map_err(|e| e.to_string())?;
    let spec = demo_spec();
    if z >= spec.dims[2] {
        return Err(format!("slice index must be < {}", spec.dims[2]));
    }
    let grid = splat(&scene, &spec, threshold).map_err(|e| e.to_string())?;
    Ok(slice(&grid.labels(), &spec, z))
}

fn slice(labels: &[u8], spec: &GridSpec, z: usize) -> Vec<u8> {
    let n = spec.dims[0] * spec.dims[1];
    labels[z * n..(z + 1) * n].to_vec()
}

/// Incremental fit of a jittered "three-boxes" scene against its own target.
#[wasm_bindgen]
pub struct FitSession {
    template: Scene,
    target: SemanticGrid,
    spec: GridSpec,
    params: ParamVector,
    adam: Adam,
    opts: FitOptions,
    iteration: usize,
    loss: f64,
}

impl FitSession {
    pub fn create(seed: u64, jitter: f64, step_size: f64) -> Result<FitSession, String> {
        let case = generate(Preset::ThreeBoxes, seed).map_err(|e| e.to_string())?;
        let start = jitter_centers(&case.scene, &case.spec, jitter, seed);
        let params = ParamVector::from_scene(&start);
        let opts = FitOptions { iterations: 1, step_size, ..FitOptions::default() };
        opts.validate().map_err(|e| e.to_string())?;
        let mut s = FitSession {
            template: start,
            target: case.labels,
            spec: case.spec,
            adam: Adam::new(params.values.len(), step_size),
            params,
            opts,
            iteration: 0,
            loss: f64::NAN,
        };
        s.loss = s.current_loss()?;
        Ok(s)
    }

    fn scene(&self) -> Result<Scene, String> {
        let mut scene = self.params.to_scene(&self.template).map_err(|e| e.to_string())?;
        refresh_dof(&mut scene, &self.spec).map_err(|e| e.to_string())?;
        Ok(scene)
    }

    fn current_loss(&self) -> Result<f64, String> {
        let pred = splat(&self.scene()?, &self.spec, self.opts.threshold).map_err(|e| e.to_string())?;
        Ok(total_loss(&pred, &self.target, DEFAULT_LAMBDA).map_err(|e| e.to_string())?.total)
    }

    /// Runs `n` optimizer steps and returns the loss afterwards.
    pub fn advance(&mut self, n: usize) -> Result<f64, String> {
        for _ in 0..n {
            let scene = self.scene()?;
            let grad = tprim::fitting::loss_gradient(&scene, &self.target, &self.spec, &self.opts)
                .map_err(|e| e.to_string())?;
            self.adam.step(&mut self.params.values, &grad.values);
            self.params.normalize_rotations();
            self.iteration += 1;
        }
        self.loss = self.current_loss()?;
        Ok(self.loss)
    }

    pub fn predicted_labels(&self, z: usize) -> Result<Vec<u8>, String> {
        let grid = splat(&self.scene()?, &self.spec, self.opts.threshold).map_err(|e| e.to_string())?;
        Ok(slice(&grid.labels(), &self.spec, z.min(self.spec.dims[2] - 1)))
    }

    pub fn current_miou(&self) -> Result<f64, String> {
        let pred = splat(&self.scene()?, &self.spec, self.opts.threshold).map_err(|e| e.to_string())?.to_labels();
        let counts = confusion(&pred, &self.target).map_err(|e| e.to_string())?;
        Ok(miou(&counts).unwrap_or(0.0))
    }
}

fn js_err(e: String) -> JsError {
    JsError::new(&e)
}

#[wasm_bindgen(js_name = kernelImage)]
pub fn kernel_image_js(
    kind: &str,
    eps1: f64,
    eps2: f64,
    nu: f64,
    field: usize,
    weight: f64,
    size: usize,
) -> Result<Vec<f32>, JsError> {
    kernel_image(kind, eps1, eps2, nu, field, weight, size).map_err(js_err)
}

#[wasm_bindgen(js_name = splatLabels)]
pub fn splat_labels_js(scene_json: &str, z: usize, threshold: f64) -> Result<Vec<u8>, JsError> {
    splat_labels(scene_json, z, threshold).map_err(js_err)
}

#[wasm_bindgen(js_name = threeBoxesScene)]
pub fn three_boxes_scene(seed: u64) -> Result<String, JsError> {
    let case = generate(Preset::ThreeBoxes, seed).map_err(|e| js_err(e.to_string()))?;
    Ok(SceneFile::from_scene(&case.scene, Preset::ThreeBoxes.class_names()).to_json())
}

#[wasm_bindgen]
impl FitSession {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64, jitter: f64, step_size: f64) -> Result<FitSession, JsError> {
        FitSession::create(seed, jitter, step_size).map_err(js_err)
    }

    pub fn step(&mut self, n: usize) -> Result<f64, JsError> {
        self.advance(n).map_err(js_err)
    }

    #[wasm_bindgen(getter)]
    pub fn iteration(&self) -> usize {
        self.iteration
    }

    #[wasm_bindgen(getter)]
    pub fn loss(&self) -> f64 {
        self.loss
    }

    pub fn miou(&self) -> Result<f64, JsError> {
        self.current_miou().map_err(js_err)
    }

    pub fn labels(&self, z: usize) -> Result<Vec<u8>, JsError> {
        self.predicted_labels(z).map_err(js_err)
    }

    #[wasm_bindgen(js_name = targetLabels)]
    pub fn target_labels(&self, z: usize) -> Vec<u8> {
        slice(&self.target.labels(), &self.spec, z.min(self.spec.dims[2] - 1))
    }
}
