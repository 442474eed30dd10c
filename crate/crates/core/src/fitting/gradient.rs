use rayon::prelude::*;

use super::loss::{total_loss_with, total_loss_with_grad, LossBreakdown};
use super::params::ParamVector;
use super::{FitOptions, GradientMode};
use crate::error::{Error, Result};
use crate::primitives::ParamGrad;
use crate::scene::{
    accumulate_grid, primitive_ranges, splat, GridData, GridSpec, OpacityCoupling, PreparedScene, Scene, SemanticGrid,
    DENSITY_FLOOR,
};

fn check_target(scene: &Scene, target: &SemanticGrid, spec: &GridSpec) -> Result<Vec<u8>> {
    if scene.is_empty() {
        return Err(Error::invalid("cannot differentiate an empty scene"));
    }
    if target.spec != *spec || target.num_classes != scene.num_classes {
        return Err(Error::invalid("target grid does not match the grid spec or class count"));
    }
    let GridData::Labels(labels) = &target.data else {
        return Err(Error::invalid("target must be a label grid"));
    };
    Ok(labels.clone())
}

/// Loss of `splat(scene)` against `target`.
pub(crate) fn evaluate(
    scene: &Scene,
    target: &SemanticGrid,
    spec: &GridSpec,
    opts: &FitOptions,
) -> Result<LossBreakdown> {
    let pred = splat(scene, spec, opts.threshold)?;
    total_loss_with(&pred, target, opts.lambda, opts.lovasz_classes)
}

/// Gradient of the total loss with respect to the unconstrained parameters
/// of `scene`. Degrees of freedom are held constant.
pub fn loss_gradient(scene: &Scene, target: &SemanticGrid, spec: &GridSpec, opts: &FitOptions) -> Result<ParamVector> {
    Ok(loss_and_gradient(scene, target, spec, opts)?.1)
}

pub fn loss_and_gradient(
    scene: &Scene,
    target: &SemanticGrid,
    spec: &GridSpec,
    opts: &FitOptions,
) -> Result<(LossBreakdown, ParamVector)> {
    scene.validate()?;
    spec.validate()?;
    let labels = check_target(scene, target, spec)?;
    let (loss, grad) = match opts.gradient_mode {
        GradientMode::Analytic => analytic(scene, &labels, spec, opts)?,
        GradientMode::FiniteDifference => finite_difference(scene, target, spec, opts)?,
    };
    if let Some(i) = grad.values.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numerical(format!("non-finite gradient for {}", grad.layout.name(i))));
    }
    Ok((loss, grad))
}

fn finite_difference(
    scene: &Scene,
    target: &SemanticGrid,
    spec: &GridSpec,
    opts: &FitOptions,
) -> Result<(LossBreakdown, ParamVector)> {
    let loss = evaluate(scene, target, spec, opts)?;
    let base = ParamVector::from_scene(scene);
    let h = opts.fd_epsilon;
    let values = (0..base.values.len())
        .into_par_iter()
        .map(|i| {
            let at = |delta: f64| -> Result<f64> {
                let mut v = base.clone();
                v.values[i] += delta;
                Ok(evaluate(&v.to_scene(scene)?, target, spec, opts)?.total)
            };
            Ok((at(h)? - at(-h)?) / (2.0 * h))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok((loss, ParamVector { layout: base.layout, values }))
}

fn analytic(scene: &Scene, labels: &[u8], spec: &GridSpec, opts: &FitOptions) -> Result<(LossBreakdown, ParamVector)> {
    let prep = scene.prepare()?;
    let c = scene.num_classes;
    let stride = c + 1;
    let acc = accumulate_grid(&prep, spec, opts.threshold);
    let mut probs = Vec::with_capacity(spec.len() * stride);
    for a in &acc {
        probs.extend(a.compose());
    }
    let (loss, g_occ) = total_loss_with_grad(&probs, labels, stride, opts.lambda, opts.lovasz_classes);

    let ranges = primitive_ranges(&prep, spec, opts.threshold);
    let slab = spec.dims[0] * spec.dims[1];
    let partials: Vec<Vec<ParamGrad>> = (0..spec.dims[2])
        .into_par_iter()
        .map(|k| {
            let mut grads = vec![ParamGrad::zeros(c); prep.prims.len()];
            let mut active = Vec::with_capacity(prep.prims.len());
            for j in 0..spec.dims[1] {
                for i in 0..spec.dims[0] {
                    active.clear();
                    for (p, r) in ranges.iter().enumerate() {
                        if let Some(r) = r {
                            if (r[0].0..=r[0].1).contains(&i)
                                && (r[1].0..=r[1].1).contains(&j)
                                && (r[2].0..=r[2].1).contains(&k)
                            {
                                active.push(p);
                            }
                        }
                    }
                    if active.is_empty() {
                        continue;
                    }
                    let idx = i + spec.dims[0] * j + slab * k;
                    let g = &g_occ[idx * stride..(idx + 1) * stride];
                    let x = spec.voxel_center(i, j, k);
                    backprop_voxel(&prep, &active, &x, g, &mut grads);
                }
            }
            grads
        })
        .collect();

    let mut total = vec![ParamGrad::zeros(c); prep.prims.len()];
    for slab_grads in &partials {
        for (t, g) in total.iter_mut().zip(slab_grads) {
            t.add_assign(g);
        }
    }
    // semantics so far hold ∂L/∂softmax; apply the softmax Jacobian
    for (t, sm) in total.iter_mut().zip(&prep.softmax) {
        let dot: f64 = t.semantics.iter().zip(sm).map(|(a, b)| a * b).sum();
        for (g, p) in t.semantics.iter_mut().zip(sm) {
            *g = p * (*g - dot);
        }
    }
    let params = ParamVector::from_scene(scene);
    Ok((loss, params.chain_gradient(&total)))
}

/// Backpropagates `g = ∂L/∂occ` at one voxel through the composition of the
/// `active` primitives.
fn backprop_voxel(
    prep: &PreparedScene<'_>,
    active: &[usize],
    x: &crate::geometry::Vec3,
    g: &[f64],
    grads: &mut [ParamGrad],
) {
    let c = prep.scene.num_classes;
    let mut kd = Vec::with_capacity(active.len());
    let mut alphas = Vec::with_capacity(active.len());
    let mut log_empty = 0.0;
    let mut weight = 0.0;
    let mut weighted = vec![0.0; c];
    for &p in active {
        let (k, d) = prep.prims[p].eval(x);
        let a = prep.alpha(p, k);
        log_empty += (-a).ln_1p();
        let w = d * prep.prior(p);
        if w > 0.0 {
            weight += w;
            for (acc, s) in weighted.iter_mut().zip(&prep.softmax[p]) {
                *acc += w * s;
            }
        }
        kd.push((k, d));
        alphas.push(a);
    }
    let q = log_empty.exp();
    let alpha = 1.0 - q;
    let has_weight = weight >= DENSITY_FLOOR;
    let e: Vec<f64> = if has_weight { weighted.iter().map(|v| v / weight).collect() } else { vec![1.0 / c as f64; c] };

    let g_alpha = -g[0] + (0..c).map(|cl| g[1 + cl] * e[cl]).sum::<f64>();
    for (slot, &p) in active.iter().enumerate() {
        let (k, d) = kd[slot];
        let a_i = alphas[slot];
        let others = if 1.0 - a_i > 1e-12 {
            q / (1.0 - a_i)
        } else {
            alphas.iter().enumerate().filter(|(s, _)| *s != slot).map(|(_, a)| 1.0 - a).product()
        };
        let g_ai = g_alpha * others;
        let opacity = prep.scene.primitives[p].opacity;
        let out = &mut grads[p];
        let g_kernel = match prep.scene.coupling {
            OpacityCoupling::Multiplicative => {
                out.opacity += g_ai * k;
                g_ai * opacity
            }
            OpacityCoupling::KernelOnly => g_ai,
        };
        let mut g_density = 0.0;
        if has_weight && d * prep.prior(p) > 0.0 {
            let sm = &prep.softmax[p];
            let w = d * prep.prior(p);
            let mut g_w = 0.0;
            for cl in 0..c {
                g_w += g[1 + cl] * alpha * (sm[cl] - e[cl]) / weight;
                out.semantics[cl] += g[1 + cl] * alpha * w / weight;
            }
            // the 1/Σo part of the prior cancels because the expectation
            // is invariant to a common rescaling of all weights
            out.opacity += g_w * d / prep.opacity_sum;
            g_density = g_w * prep.prior(p);
        }
        prep.prims[p].backprop(x, g_kernel, g_density, out);
    }
}
