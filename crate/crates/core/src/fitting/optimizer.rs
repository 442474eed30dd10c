use std::io::Write;

use serde::{Deserialize, Serialize};

use super::gradient::{evaluate, loss_and_gradient};
use super::params::ParamVector;
use super::FitOptions;
use crate::error::{Error, Result};
use crate::scene::{refresh_dof, GridSpec, Scene, SemanticGrid};
use crate::synthetic::jitter_centers;

const DIVERGENCE_FACTOR: f64 = 10.0;
const DIVERGENCE_PATIENCE: usize = 20;

/// Bias-corrected adaptive-moment updates without weight decay.
#[derive(Debug, Clone)]
pub struct Adam {
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(len: usize, step_size: f64) -> Self {
        Adam { step_size, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.step_size * mh / (vh.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub lovasz: f64,
    pub bce: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// Lowest-loss scene seen.
    pub scene: Scene,
    pub best_loss: f64,
    /// Loss before each step, plus one entry for the final parameters.
    pub trace: Vec<TraceEntry>,
}

fn current_scene(params: &ParamVector, template: &Scene, spec: &GridSpec, opts: &FitOptions) -> Result<Scene> {
    let mut scene = params.to_scene(template)?;
    if opts.refresh_dof {
        refresh_dof(&mut scene, spec)?;
    }
    Ok(scene)
}

pub fn fit(init: &Scene, target: &SemanticGrid, spec: &GridSpec, opts: &FitOptions) -> Result<FitResult> {
    opts.validate()?;
    init.validate()?;
    if init.is_empty() {
        return Err(Error::invalid("cannot fit an empty scene"));
    }
    let start =
        if opts.init_jitter > 0.0 { jitter_centers(init, spec, opts.init_jitter, opts.rng_seed) } else { init.clone() };

    let mut params = ParamVector::from_scene(&start);
    let mut adam = Adam::new(params.values.len(), opts.step_size);
    let mut trace = Vec::with_capacity(opts.iterations + 1);
    let mut best: Option<(f64, Scene)> = None;
    let mut initial = None;
    let mut over = 0;

    for it in 0..=opts.iterations {
        let scene = current_scene(&params, &start, spec, opts)?;
        let last = it == opts.iterations;
        let (loss, grad) = if last {
            (evaluate(&scene, target, spec, opts)?, None)
        } else {
            let (l, g) = loss_and_gradient(&scene, target, spec, opts)?;
            (l, Some(g))
        };
        if !loss.total.is_finite() {
            return Err(Error::Numerical(format!("loss became non-finite at iteration {it}")));
        }
        trace.push(TraceEntry { iteration: it, lovasz: loss.lovasz, bce: loss.bce, total: loss.total });
        if best.as_ref().is_none_or(|(b, _)| loss.total < *b) {
            best = Some((loss.total, scene));
        }
        let first = *initial.get_or_insert(loss.total);
        if loss.total > DIVERGENCE_FACTOR * first {
            over += 1;
            if over >= DIVERGENCE_PATIENCE {
                return Err(Error::Numerical(format!(
                    "fit diverged: loss {:.6} exceeded {DIVERGENCE_FACTOR}x the initial {first:.6} for {DIVERGENCE_PATIENCE} steps",
                    loss.total
                )));
            }
        } else {
            over = 0;
        }
        if let Some(g) = grad {
            adam.step(&mut params.values, &g.values);
            params.normalize_rotations();
        }
    }
    let (best_loss, scene) = best.expect("at least one iteration");
    Ok(FitResult { scene, best_loss, trace })
}

/// Writes `iteration,lovasz,bce,total` rows.
pub fn write_trace_csv<W: Write>(mut w: W, trace: &[TraceEntry]) -> Result<()> {
    writeln!(w, "iteration,lovasz,bce,total")?;
    for e in trace {
        writeln!(w, "{},{},{},{}", e.iteration, e.lovasz, e.bce, e.total)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Quaternion, Vec3};
    use crate::primitives::Primitive;
    use crate::scene::splat;

    fn spec() -> GridSpec {
        GridSpec::new(Vec3::new(-4.0, -4.0, -2.0), Vec3::new(8.0, 8.0, 4.0), [8, 8, 4]).unwrap()
    }

    #[test]
    fn adam_first_step_moves_by_step_size() {
        let mut adam = Adam::new(2, 0.1);
        let mut p = vec![1.0, 1.0];
        adam.step(&mut p, &[3.0, -0.5]);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] - 1.1).abs() < 1e-6);
    }

    #[test]
    fn trace_running_minimum_and_best_scene() {
        let truth = Scene::new(
            1,
            vec![Primitive::tp(Vec3::ZERO, Vec3::splat(1.2), Quaternion::IDENTITY, 0.95, vec![0.0], 4.0)],
        );
        let mut truth = truth;
        refresh_dof(&mut truth, &spec()).unwrap();
        let target = splat(&truth, &spec(), 1e-3).unwrap().to_labels();
        let mut init = truth.clone();
        init.primitives[0].center = Vec3::new(0.7, -0.4, 0.2);
        let opts = FitOptions { iterations: 30, step_size: 0.05, ..FitOptions::default() };
        let r = fit(&init, &target, &spec(), &opts).unwrap();
        assert_eq!(r.trace.len(), 31);
        let min = r.trace.iter().map(|e| e.total).fold(f64::INFINITY, f64::min);
        assert_eq!(min, r.best_loss);
        assert!(r.best_loss < r.trace[0].total);
        let mut out = Vec::new();
        write_trace_csv(&mut out, &r.trace).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("iteration,lovasz,bce,total\n0,"));
        assert_eq!(text.lines().count(), 32);
    }

    #[test]
    fn opacity_is_recovered() {
        let spec = spec();
        let mut truth = Scene::new(
            1,
            vec![Primitive::tp(Vec3::ZERO, Vec3::new(1.5, 1.5, 1.0), Quaternion::IDENTITY, 1.0, vec![0.0], 4.0)],
        );
        refresh_dof(&mut truth, &spec).unwrap();
        let target = splat(&truth, &spec, 1e-3).unwrap().to_labels();
        let mut init = truth.clone();
        init.primitives[0].opacity = 0.5;
        let opts = FitOptions { iterations: 200, step_size: 0.05, ..FitOptions::default() };
        let r = fit(&init, &target, &spec, &opts).unwrap();
        assert!(r.scene.primitives[0].opacity > 0.9, "opacity {}", r.scene.primitives[0].opacity);
    }

    #[test]
    fn rejects_bad_options() {
        let scene =
            Scene::new(1, vec![Primitive::tp(Vec3::ZERO, Vec3::splat(1.0), Quaternion::IDENTITY, 0.5, vec![0.0], 4.0)]);
        let target = SemanticGrid::empty_labels(spec(), 1);
        let opts = FitOptions { iterations: 0, ..FitOptions::default() };
        assert!(fit(&scene, &target, &spec(), &opts).is_err());
        let opts = FitOptions { step_size: 0.0, ..FitOptions::default() };
        assert!(fit(&scene, &target, &spec(), &opts).is_err());
    }
}
