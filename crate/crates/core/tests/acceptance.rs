//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails. Reference values are computed here
//! from closed forms, independent of the library code paths.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tprim::depth::{fuse_depth, DepthMap};
use tprim::fitting::{fit, loss_gradient, lovasz_softmax_loss_with, FitOptions, GradientMode, LovaszClasses};
use tprim::geometry::{CylindricalSpec, Quaternion, Vec3};
use tprim::io::{decode_grid, encode_grid, SceneFile};
use tprim::metrics::{confusion, iou, miou, range_masked_eval, ConfusionCounts, RangeMode, SECTOR_BANDS};
use tprim::primitives::{basis_field, eval_kernel, Primitive, NUM_BASIS_FIELDS};
use tprim::scene::{compose_occ, semantic_expectation, splat, GridSpec, OpacityCoupling, Scene, SemanticGrid};
use tprim::skeleton::{cylindrical_partition, farthest_point_sampling, skeleton_merge, split_budget, PointCloud};
use tprim::synthetic::{generate, jitter_centers, Preset};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform(r: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    r.random_range(lo..hi)
}

fn random_quat(r: &mut ChaCha8Rng) -> Quaternion {
    Quaternion::new(uniform(r, -1.0, 1.0), uniform(r, -1.0, 1.0), uniform(r, -1.0, 1.0), uniform(r, -1.0, 1.0))
}

fn logits(r: &mut ChaCha8Rng, c: usize) -> Vec<f64> {
    (0..c).map(|_| uniform(r, -2.0, 2.0)).collect()
}

fn small_warp(r: &mut ChaCha8Rng, amp: f64) -> [f64; NUM_BASIS_FIELDS] {
    std::array::from_fn(|_| uniform(r, -amp, amp))
}

/// Rotation matrix of a quaternion (w, x, y, z), normalized first.
fn rotation(q: &Quaternion) -> [[f64; 3]; 3] {
    let n = (q.w * q.w + q.x * q.x + q.y * q.y + q.z * q.z).sqrt();
    let (w, x, y, z) = (q.w / n, q.x / n, q.y / n, q.z / n);
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

/// Mahalanobis distance through an explicit Σ = R S² Rᵀ and its adjugate inverse.
fn mahalanobis(x: &Vec3, p: &Primitive) -> f64 {
    let r = rotation(&p.rotation);
    let mut sigma = [[0.0; 3]; 3];
    for (i, row) in sigma.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (0..3).map(|k| r[i][k] * p.scale[k] * p.scale[k] * r[j][k]).sum();
        }
    }
    let s = sigma;
    let cof = |a: usize, b: usize, c: usize, d: usize| s[a][c] * s[b][d] - s[a][d] * s[b][c];
    let adj = [
        [cof(1, 2, 1, 2), -cof(0, 2, 1, 2), cof(0, 1, 1, 2)],
        [-cof(1, 2, 0, 2), cof(0, 2, 0, 2), -cof(0, 1, 0, 2)],
        [cof(1, 2, 0, 1), -cof(0, 2, 0, 1), cof(0, 1, 0, 1)],
    ];
    let det = s[0][0] * adj[0][0] + s[0][1] * adj[1][0] + s[0][2] * adj[2][0];
    let d = [x[0] - p.center[0], x[1] - p.center[1], x[2] - p.center[2]];
    let mut q = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            q += d[i] * adj[i][j] / det * d[j];
        }
    }
    q
}

fn student_kernel(q: f64, nu: f64) -> f64 {
    (1.0 + q / nu).powf(-(nu + 3.0) / 2.0)
}

/// Point inside the primitive's local box `[-1, 1]³ · s`, mapped to world.
fn point_near(r: &mut ChaCha8Rng, p: &Primitive) -> Vec3 {
    let rm = rotation(&p.rotation);
    let l: Vec<f64> = (0..3).map(|a| uniform(r, -1.0, 1.0) * p.scale[a]).collect();
    Vec3::new(
        p.center[0] + rm[0][0] * l[0] + rm[0][1] * l[1] + rm[0][2] * l[2],
        p.center[1] + rm[1][0] * l[0] + rm[1][1] * l[1] + rm[1][2] * l[2],
        p.center[2] + rm[2][0] * l[0] + rm[2][1] * l[1] + rm[2][2] * l[2],
    )
}

fn random_primitive(r: &mut ChaCha8Rng, family: usize, classes: usize, center_box: f64) -> Primitive {
    let c = Vec3::new(uniform(r, -center_box, center_box), uniform(r, -center_box, center_box), uniform(r, -1.0, 1.0));
    let s = Vec3::new(uniform(r, 0.6, 3.0), uniform(r, 0.6, 3.0), uniform(r, 0.5, 2.0));
    let q = random_quat(r);
    let o = uniform(r, 0.3, 1.0);
    let sem = logits(r, classes);
    let nu = uniform(r, 1.0, 30.0);
    match family {
        0 => Primitive::tp(c, s, q, o, sem, nu),
        1 => Primitive::tsq(c, s, q, o, sem, uniform(r, 0.3, 1.8), uniform(r, 0.3, 1.8), nu),
        _ => Primitive::tsq(c, s, q, o, sem, uniform(r, 0.3, 1.8), uniform(r, 0.3, 1.8), nu)
            .with_warp(small_warp(r, 0.3)),
    }
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let mut r = rng(1);
    let mut notes = Vec::new();
    let mut ok = true;

    // value at the center
    for family in 0..3 {
        let mut p = random_primitive(&mut r, family, 2, 5.0);
        p.warp = [0.0; NUM_BASIS_FIELDS];
        let k = eval_kernel(&p.center, &p).unwrap();
        if k != 1.0 {
            ok = false;
            notes.push(format!("family {family} center value {k}"));
        }
    }

    // range on 10⁴ pairs per family
    for family in 0..3 {
        let mut worst = (f64::INFINITY, f64::NEG_INFINITY);
        for _ in 0..10_000 {
            let p = random_primitive(&mut r, family, 2, 5.0);
            let x = point_near(&mut r, &p);
            let k = eval_kernel(&x, &p).unwrap();
            worst = (worst.0.min(k), worst.1.max(k));
        }
        if !(worst.0 > 0.0 && worst.1 <= 1.0) {
            ok = false;
            notes.push(format!("family {family} range [{:e}, {}]", worst.0, worst.1));
        }
    }

    // large ν approaches the Gaussian
    let mut gauss_err: f64 = 0.0;
    for i in 0..=900 {
        let q = i as f64 * 0.01;
        let p = Primitive::tp(
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 1.0, 1.0),
            Quaternion::IDENTITY,
            1.0,
            vec![0.0],
            1e6,
        );
        let x = Vec3::new(q.sqrt(), 0.0, 0.0);
        gauss_err = gauss_err.max((eval_kernel(&x, &p).unwrap() - (-q / 2.0).exp()).abs());
    }
    if gauss_err > 1e-3 {
        ok = false;
    }
    notes.push(format!("gaussian err {gauss_err:.2e}"));

    // TSQ with unit exponents against the covariance form, and TP against the same oracle
    let mut sq_err: f64 = 0.0;
    let mut tp_err: f64 = 0.0;
    for i in 0..1000 {
        let mut p = random_primitive(&mut r, 1, 2, 5.0);
        p.eps1 = 1.0;
        p.eps2 = 1.0;
        if i % 2 == 0 {
            p.rotation = Quaternion::IDENTITY;
        }
        let x = point_near(&mut r, &p);
        let oracle = student_kernel(mahalanobis(&x, &p), p.nu);
        sq_err = sq_err.max((eval_kernel(&x, &p).unwrap() - oracle).abs());
        let tp = Primitive::tp(p.center, p.scale, p.rotation, p.opacity, p.semantics.clone(), p.nu);
        tp_err = tp_err.max((eval_kernel(&x, &tp).unwrap() - oracle).abs());
    }
    if sq_err > 1e-12 || tp_err > 1e-12 {
        ok = false;
    }
    notes.push(format!("tsq(eps=1) vs oracle {sq_err:.2e}, tp vs oracle {tp_err:.2e}"));

    // zero-weight TSQIW
    let mut iw_err: f64 = 0.0;
    for _ in 0..1000 {
        let p = random_primitive(&mut r, 1, 2, 5.0);
        let w = p.clone().with_warp([0.0; NUM_BASIS_FIELDS]);
        let x = point_near(&mut r, &p);
        iw_err = iw_err.max((eval_kernel(&x, &w).unwrap() - eval_kernel(&x, &p).unwrap()).abs());
    }
    if iw_err > 1e-12 {
        ok = false;
    }
    notes.push(format!("tsqiw(w=0) vs tsq {iw_err:.2e}"));

    timed(ok, notes, t.elapsed(), Duration::from_secs(10))
}

fn timed(mut ok: bool, mut notes: Vec<String>, took: Duration, limit: Duration) -> Outcome {
    if took > limit {
        ok = false;
    }
    notes.push(format!("{:.2}s (limit {}s)", took.as_secs_f64(), limit.as_secs()));
    outcome(ok, notes.join("; "))
}

/// Rows transcribed from the basis-field table.
fn table_row(i: usize, u: f64, v: f64, w: f64) -> [f64; 3] {
    match i {
        1 => [1.0, 0.0, 0.0],
        2 => [0.0, 1.0, 0.0],
        3 => [0.0, 0.0, 1.0],
        4 => [u, 0.0, 0.0],
        5 => [0.0, v, 0.0],
        6 => [0.0, 0.0, w],
        7 => [v, 0.0, 0.0],
        8 => [w, 0.0, 0.0],
        9 => [0.0, w, 0.0],
        10 => [0.0, u, 0.0],
        11 => [0.0, 0.0, u],
        12 => [0.0, 0.0, v],
        13 => [-w * v, w * u, 0.0],
        14 => [0.0, -u * w, u * v],
        15 => [v * w, 0.0, -v * u],
        16 => [w * w, 0.0, 0.0],
        17 => [0.0, w * w, 0.0],
        18 => [0.0, 0.0, u * u + v * v],
        19 => [u * u, 0.0, 0.0],
        20 => [0.0, v * v, 0.0],
        21 => [0.0, 0.0, w * w],
        22 => [(u * u + v * v) * u, (u * u + v * v) * v, 0.0],
        23 => [u * v, u * v, 0.0],
        24 => [u * v * v, u * u * v, 0.0],
        _ => unreachable!(),
    }
}

fn criterion_2() -> Outcome {
    let mut r = rng(2);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let (u, v, w) = (uniform(&mut r, -3.0, 3.0), uniform(&mut r, -3.0, 3.0), uniform(&mut r, -3.0, 3.0));
        for i in 1..=24 {
            let got = basis_field(i, u, v, w).unwrap();
            let want = table_row(i, u, v, w);
            for a in 0..3 {
                worst = worst.max((got[a] - want[a]).abs() / want[a].abs().max(1.0));
            }
        }
    }
    let b1 = basis_field(1, 0.3, -7.0, 2.0).unwrap().0;
    let b13 = basis_field(13, 2.0, 3.0, 4.0).unwrap().0;
    let b18 = basis_field(18, 1.0, 2.0, 3.0).unwrap().0;
    let spots = b1 == [1.0, 0.0, 0.0] && b13 == [-12.0, 8.0, 0.0] && b18 == [0.0, 0.0, 5.0];
    let bad_index = basis_field(0, 0.0, 0.0, 0.0).is_err() && basis_field(25, 0.0, 0.0, 0.0).is_err();
    outcome(
        worst <= 1e-12 && spots && bad_index,
        format!("24 rows x 200 points max err {worst:.2e}; spot values {spots}; out-of-range rejected {bad_index}"),
    )
}

/// Student-t density with closed-form gamma ratios for ν ∈ {1, 2, 3}.
fn t_density_closed_form(x: &Vec3, p: &Primitive) -> f64 {
    let z = match p.nu as u32 {
        1 => 1.0 / (PI * PI),
        2 => 0.75 * PI.sqrt() / (2.0 * PI).powf(1.5),
        3 => 4.0 / (PI.sqrt() * (3.0 * PI).powf(1.5)),
        _ => unreachable!(),
    };
    let det_sqrt = p.scale[0] * p.scale[1] * p.scale[2];
    z / det_sqrt * student_kernel(mahalanobis(x, p), p.nu)
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

fn criterion_3() -> Outcome {
    let mut r = rng(3);
    let mut notes = Vec::new();
    let mut ok = true;

    let mut sum_err: f64 = 0.0;
    for _ in 0..10_000 {
        let n = r.random_range(1..5);
        let classes = r.random_range(1..6);
        let prims = (0..n)
            .map(|_| {
                let family = r.random_range(0..3);
                random_primitive(&mut r, family, classes, 4.0)
            })
            .collect();
        let scene = Scene::new(classes, prims);
        let x = Vec3::new(uniform(&mut r, -8.0, 8.0), uniform(&mut r, -8.0, 8.0), uniform(&mut r, -3.0, 3.0));
        let occ = compose_occ(&x, &scene).unwrap();
        sum_err = sum_err.max((occ.iter().sum::<f64>() - 1.0).abs());
    }
    ok &= sum_err <= 1e-9;
    notes.push(format!("sum-to-one err {sum_err:.2e}"));

    let half = |c: f64| {
        Primitive::tp(Vec3::new(c, 0.0, 0.0), Vec3::new(1.0, 1.0, 1.0), Quaternion::IDENTITY, 0.5, vec![0.0], 2.0)
    };
    let two = Scene::new(1, vec![half(0.0), half(0.0)]);
    let occ = compose_occ(&Vec3::new(0.0, 0.0, 0.0), &two).unwrap();
    let alpha = 1.0 - occ[0];
    ok &= alpha == 0.75;
    notes.push(format!("two halves alpha {alpha}"));

    // three-primitive hand cases, mixing densities and kernels
    let mut e_err: f64 = 0.0;
    let cases: Vec<Scene> = vec![
        Scene::new(
            3,
            vec![
                Primitive::tp(
                    Vec3::new(0.0, 0.0, 0.0),
                    Vec3::new(1.0, 2.0, 0.5),
                    Quaternion::IDENTITY,
                    0.9,
                    vec![2.0, 0.0, -1.0],
                    1.0,
                ),
                Primitive::tp(
                    Vec3::new(1.0, 0.5, 0.0),
                    Vec3::new(0.7, 0.7, 0.7),
                    Quaternion::from_axis_angle(Vec3::new(0.0, 0.0, 1.0), 0.4),
                    0.6,
                    vec![0.0, 1.5, 0.0],
                    2.0,
                ),
                Primitive::tp(
                    Vec3::new(-0.5, 1.0, 0.3),
                    Vec3::new(1.5, 1.0, 1.0),
                    Quaternion::new(0.9, 0.1, -0.2, 0.3),
                    0.3,
                    vec![-1.0, 0.0, 3.0],
                    3.0,
                ),
            ],
        ),
        Scene::new(
            2,
            vec![
                Primitive::tp(
                    Vec3::new(0.2, 0.0, 0.0),
                    Vec3::new(1.0, 1.0, 1.0),
                    Quaternion::IDENTITY,
                    0.8,
                    vec![1.0, -1.0],
                    3.0,
                ),
                Primitive::tsq(
                    Vec3::new(-0.4, 0.3, 0.1),
                    Vec3::new(1.2, 0.8, 0.6),
                    Quaternion::IDENTITY,
                    0.7,
                    vec![-0.5, 0.5],
                    0.5,
                    0.8,
                    2.0,
                ),
                Primitive::tsq(
                    Vec3::new(0.0, -0.6, 0.0),
                    Vec3::new(0.9, 0.9, 1.4),
                    Quaternion::new(0.8, 0.0, 0.6, 0.0),
                    0.4,
                    vec![0.3, 0.0],
                    1.5,
                    1.0,
                    1.0,
                )
                .with_warp(std::array::from_fn(|i| if i % 5 == 0 { 0.2 } else { 0.0 })),
            ],
        ),
    ];
    for scene in &cases {
        for _ in 0..200 {
            let x = Vec3::new(uniform(&mut r, -2.0, 2.0), uniform(&mut r, -2.0, 2.0), uniform(&mut r, -1.0, 1.0));
            let mut num = vec![0.0; scene.num_classes];
            let mut den = 0.0;
            for p in &scene.primitives {
                let lik = match p.kind {
                    tprim::PrimitiveKind::Tp => t_density_closed_form(&x, p),
                    _ => eval_kernel(&x, p).unwrap(),
                };
                let w = lik * p.opacity;
                den += w;
                for (n, c) in num.iter_mut().zip(softmax(&p.semantics)) {
                    *n += w * c;
                }
            }
            let got = semantic_expectation(&x, scene).unwrap();
            for (g, n) in got.iter().zip(&num) {
                e_err = e_err.max((g - n / den).abs());
            }
        }
    }
    ok &= e_err <= 1e-12;
    notes.push(format!("mixture expectation err {e_err:.2e}"));
    outcome(ok, notes.join("; "))
}

fn criterion_4() -> Outcome {
    let t = Instant::now();
    let spec = GridSpec::new(Vec3::new(-8.0, -8.0, -4.0), Vec3::new(16.0, 16.0, 8.0), [16, 16, 8]).unwrap();
    let mut r = rng(4);
    let mut max_err: f64 = 0.0;
    let mut label_mismatch = 0usize;
    let scenes = 40;
    for s in 0..scenes {
        let classes = r.random_range(2..5);
        let prims: Vec<Primitive> = (0..3).map(|i| random_primitive(&mut r, (i + s) % 3, classes, 6.0)).collect();
        let mut scene = Scene::new(classes, prims);
        if s % 4 == 3 {
            scene.coupling = OpacityCoupling::KernelOnly;
        }
        let grid = splat(&scene, &spec, 1e-3).unwrap();
        let labels = grid.labels();
        for (idx, label) in labels.iter().enumerate() {
            let exact = compose_occ(&spec.center_of(idx), &scene).unwrap();
            let got = grid.probs(idx).unwrap();
            for (a, b) in got.iter().zip(&exact) {
                max_err = max_err.max((a - b).abs());
            }
            let mut order: Vec<usize> = (0..exact.len()).collect();
            order.sort_by(|a, b| exact[*b].total_cmp(&exact[*a]));
            if exact[order[0]] - exact[order[1]] > 5e-3 && *label as usize != order[0] {
                label_mismatch += 1;
            }
        }
    }
    let ok = max_err <= 2e-3 && label_mismatch == 0;
    timed(
        ok,
        vec![format!("{scenes} scenes, max component err {max_err:.2e}, label mismatches {label_mismatch}")],
        t.elapsed(),
        Duration::from_secs(30),
    )
}

fn criterion_5() -> Outcome {
    let t = Instant::now();
    let spec = GridSpec::new(Vec3::new(-4.0, -4.0, -2.0), Vec3::new(8.0, 8.0, 4.0), [8, 8, 4]).unwrap();
    let mut r = rng(5);
    let mut worst: f64 = 0.0;
    let mut worst_name = String::new();
    let mut active = 0usize;
    let mut ok = true;
    for s in 0..6 {
        let classes = 3;
        let prims: Vec<Primitive> = (0..3)
            .map(|family| {
                let mut p = random_primitive(&mut r, family, classes, 2.5);
                p.scale = Vec3::new(uniform(&mut r, 0.8, 2.0), uniform(&mut r, 0.8, 2.0), uniform(&mut r, 0.6, 1.5));
                p.nu = uniform(&mut r, 1.0, 8.0);
                p.opacity = uniform(&mut r, 0.3, 0.9);
                p
            })
            .collect();
        let mut scene = Scene::new(classes, prims);
        if s % 3 == 2 {
            scene.coupling = OpacityCoupling::KernelOnly;
        }
        let labels: Vec<u8> = (0..spec.len()).map(|_| r.random_range(0..=classes as u8)).collect();
        let target = SemanticGrid::from_labels(spec, classes, labels).unwrap();
        let base = FitOptions { threshold: 0.0, ..FitOptions::default() };
        let analytic = loss_gradient(&scene, &target, &spec, &base).unwrap();
        let fd = loss_gradient(
            &scene,
            &target,
            &spec,
            &FitOptions { gradient_mode: GradientMode::FiniteDifference, fd_epsilon: 1e-4, ..base },
        )
        .unwrap();
        for (i, (a, f)) in analytic.values.iter().zip(&fd.values).enumerate() {
            let mag = a.abs().max(f.abs());
            if mag <= 1e-6 {
                continue;
            }
            active += 1;
            let rel = (a - f).abs() / mag;
            if rel > worst {
                worst = rel;
                worst_name = format!("scene {s} {}", analytic.layout.name(i));
            }
        }
    }
    ok &= worst <= 1e-3;
    timed(
        ok,
        vec![format!("{active} active coordinates, max relative err {worst:.2e} ({worst_name})")],
        t.elapsed(),
        Duration::from_secs(60),
    )
}

fn criterion_6() -> Outcome {
    let t = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let results: Vec<(u64, f64, f64)> = pool.install(|| {
        (0..5u64)
            .map(|seed| {
                let case = generate(Preset::ThreeBoxes, seed).unwrap();
                let init = jitter_centers(&case.scene, &case.spec, 0.5, seed);
                let start =
                    miou(&confusion(&splat(&init, &case.spec, 1e-3).unwrap().to_labels(), &case.labels).unwrap())
                        .unwrap();
                let opts = FitOptions { iterations: 500, ..FitOptions::default() };
                let result = fit(&init, &case.labels, &case.spec, &opts).unwrap();
                let pred = splat(&result.scene, &case.spec, 1e-3).unwrap().to_labels();
                (seed, start, miou(&confusion(&pred, &case.labels).unwrap()).unwrap())
            })
            .collect()
    });
    let ok = results.iter().all(|(_, _, m)| *m >= 0.9);
    let detail = results.iter().map(|(s, a, b)| format!("seed {s} {a:.3}->{b:.4}")).collect::<Vec<_>>();
    timed(ok, vec![format!("mIoU {}", detail.join(", "))], t.elapsed(), Duration::from_secs(300))
}

fn fps_oracle(points: &[[f64; 3]], k: usize, seed: usize) -> Vec<usize> {
    let dist =
        |a: &[f64; 3], b: &[f64; 3]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
    let mut chosen = vec![seed];
    while chosen.len() < k {
        let mut best: Option<(usize, f64)> = None;
        for (i, p) in points.iter().enumerate() {
            if chosen.contains(&i) {
                continue;
            }
            let d = chosen.iter().map(|c| dist(p, &points[*c])).fold(f64::INFINITY, f64::min);
            if best.is_none_or(|(_, bd)| d > bd) {
                best = Some((i, d));
            }
        }
        chosen.push(best.unwrap().0);
    }
    chosen
}

fn criterion_7() -> Outcome {
    let mut r = rng(7);
    let mut mismatches = 0;
    for case in 0..100 {
        let n = r.random_range(1..=500);
        let k = r.random_range(0..=32.min(n));
        // every fourth case sits on a small integer lattice so ties and duplicates occur
        let pts: Vec<[f64; 3]> = (0..n)
            .map(|_| {
                if case % 4 == 0 {
                    [r.random_range(0..4) as f64, r.random_range(0..4) as f64, r.random_range(0..2) as f64]
                } else {
                    [uniform(&mut r, -50.0, 50.0), uniform(&mut r, -50.0, 50.0), uniform(&mut r, -5.0, 3.0)]
                }
            })
            .collect();
        let seed = r.random_range(0..n);
        let vecs: Vec<Vec3> = pts.iter().map(|p| Vec3(*p)).collect();
        let got = farthest_point_sampling(&vecs, k, seed).unwrap();
        let want = if k == 0 { Vec::new() } else { fps_oracle(&pts, k, seed) };
        if got != want {
            mismatches += 1;
        }
    }
    outcome(mismatches == 0, format!("100 inputs, {mismatches} mismatches"))
}

fn cloud(r: &mut ChaCha8Rng, n: usize, r_lo: f64, r_hi: f64, theta_lo: f64, theta_hi: f64) -> PointCloud {
    PointCloud::new(
        (0..n)
            .map(|_| {
                let rad = uniform(r, r_lo, r_hi);
                let th = uniform(r, theta_lo, theta_hi);
                Vec3::new(rad * th.cos(), rad * th.sin(), uniform(r, -5.0, 3.0))
            })
            .collect(),
    )
}

fn criterion_8() -> Outcome {
    let spec = CylindricalSpec { r_min: 0.0, r_max: 50.0, z_min: -5.0, z_max: 3.0, n_r: 100, n_theta: 360, n_z: 16 };
    let mut r = rng(8);
    let mut failures = Vec::new();
    let mut shortfalls = 0;
    for case in 0..20 {
        let lidar = cylindrical_partition(&cloud(&mut r, 3000, 2.0, 40.0, -PI, PI), &spec).unwrap();
        // camera points overlap the lidar area and spill past it
        let cam_spread = if case % 2 == 0 { 48.0 } else { 20.0 };
        let camera = cylindrical_partition(
            &cloud(&mut r, [30, 200, 600, 1000, 1800][case % 5], 1.0, cam_spread, -PI, PI),
            &spec,
        )
        .unwrap();
        let total = [40, 200, 400, 800][case % 4];
        let (m, n) = split_budget(total, (3, 1)).unwrap();
        let merged = skeleton_merge(&lidar, &camera, m, n, 5.0, 0).unwrap();
        let lidar_bins: BTreeSet<_> = merged.lidar().iter().map(|a| spec.bin_of(a).unwrap()).collect();
        for a in merged.camera() {
            let near = merged.lidar().iter().map(|l| l.distance(a)).fold(f64::INFINITY, f64::min);
            if near > 5.0 {
                failures.push(format!("case {case}: camera anchor {near:.2} m from lidar"));
            }
            if lidar_bins.contains(&spec.bin_of(a).unwrap()) {
                failures.push(format!("case {case}: camera anchor shares a lidar bin"));
            }
        }
        let expected = m + n.min(merged.camera_survivors);
        if merged.anchors.len() != expected || merged.lidar().len() != m {
            failures.push(format!("case {case}: {} anchors, expected {expected}", merged.anchors.len()));
        }
        if merged.camera_survivors < n {
            shortfalls += 1;
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "20 merges ({shortfalls} camera-limited){}",
            failures.first().map(|f| format!("; {f}")).unwrap_or_default()
        ),
    )
}

fn depth_map(r: &mut ChaCha8Rng, h: usize, w: usize, b: usize, f: impl Fn(&mut ChaCha8Rng) -> f64) -> DepthMap {
    let mut m = DepthMap::zeros(h, w, b, 0.5);
    for v in m.data.iter_mut() {
        *v = f(r);
    }
    m
}

fn criterion_9() -> Outcome {
    let mut r = rng(9);
    let mut ok = true;
    for _ in 0..50 {
        let a = depth_map(&mut r, 6, 8, 12, |r| uniform(r, 0.0, 1.0));
        let b = depth_map(&mut r, 6, 8, 12, |r| uniform(r, 0.0, 1.0));
        let ab = fuse_depth(&a, &b).unwrap();
        let ba = fuse_depth(&b, &a).unwrap();
        ok &= ab.data.iter().all(|v| (0.0..=1.0).contains(v));
        ok &= ab == ba;
    }
    let range_ok = ok;

    let zero = DepthMap::zeros(4, 5, 10, 0.5);
    let mut one_hot = DepthMap::zeros(4, 5, 10, 0.5);
    for row in 0..4 {
        for col in 0..5 {
            one_hot.set(row, col, r.random_range(0..10), 1.0);
        }
    }
    let identity = fuse_depth(&zero, &one_hot).unwrap() == one_hot;

    let mut c = DepthMap::zeros(1, 1, 1, 0.5);
    let mut l = DepthMap::zeros(1, 1, 1, 0.5);
    c.data[0] = 0.8;
    l.data[0] = 1.0;
    let clamp = fuse_depth(&c, &l).unwrap().data[0] == 1.0;

    outcome(range_ok && identity && clamp, format!("range+commutative {range_ok}; identity {identity}; clamp {clamp}"))
}

fn hard_probs(labels: &[u8], classes: usize) -> Vec<f64> {
    labels.iter().flat_map(|l| (0..=classes).map(move |c| if c == *l as usize { 1.0 } else { 0.0 })).collect()
}

fn jaccard_oracle(pred: &[u8], gt: &[u8], classes: usize, include_empty: bool) -> f64 {
    let first = if include_empty { 0 } else { 1 };
    let present: Vec<u8> = (first..=classes as u8).filter(|c| gt.contains(c)).collect();
    let losses: Vec<f64> = present
        .iter()
        .map(|c| {
            let inter = pred.iter().zip(gt).filter(|(p, g)| *p == c && *g == c).count();
            let union = pred.iter().zip(gt).filter(|(p, g)| *p == c || *g == c).count();
            1.0 - inter as f64 / union as f64
        })
        .collect();
    losses.iter().sum::<f64>() / losses.len() as f64
}

fn criterion_10() -> Outcome {
    let mut notes = Vec::new();
    let spec = GridSpec::new(Vec3::new(0.0, 0.0, 0.0), Vec3::new(20.0, 1.0, 1.0), [20, 1, 1]).unwrap();
    // 5 hits, 3 false alarms, 2 misses, 10 agreeing empties
    let mut gt = vec![0u8; 20];
    let mut pred = vec![0u8; 20];
    gt[..5].fill(1);
    pred[..5].fill(1);
    pred[5..8].fill(1);
    gt[8..10].fill(1);
    let g = SemanticGrid::from_labels(spec, 1, gt).unwrap();
    let p = SemanticGrid::from_labels(spec, 1, pred).unwrap();
    let hand = iou(&confusion(&p, &g).unwrap(), 1);
    let hand_ok = hand == Some(0.5);
    notes.push(format!("hand IoU {hand:?}"));

    let mut r = rng(10);
    let big = GridSpec::occupancy_default();
    let classes = 4;
    let rand_labels = |r: &mut ChaCha8Rng| -> Vec<u8> {
        (0..big.len()).map(|_| if r.random_bool(0.6) { 0 } else { r.random_range(1..=classes as u8) }).collect()
    };
    let bg = SemanticGrid::from_labels(big, classes, rand_labels(&mut r)).unwrap();
    let bp = SemanticGrid::from_labels(big, classes, rand_labels(&mut r)).unwrap();
    let ego = Vec3::new(0.0, 0.0, 0.0);
    let whole = range_masked_eval(&bp, &bg, RangeMode::Radius(50.0), &ego).unwrap();
    let mut summed = ConfusionCounts::new(classes);
    let mut voxels = 0;
    for (lo, hi) in SECTOR_BANDS {
        let band = range_masked_eval(&bp, &bg, RangeMode::Sector(lo, hi), &ego).unwrap();
        summed.merge(&band.counts);
        voxels += band.voxels;
    }
    let sector_ok = summed == whole.counts && voxels == whole.voxels;
    notes.push(format!("sector sums match radius 50 {sector_ok} ({voxels} voxels)"));

    let mut lov_err: f64 = 0.0;
    let small = GridSpec::new(Vec3::new(0.0, 0.0, 0.0), Vec3::new(10.0, 10.0, 4.0), [10, 10, 4]).unwrap();
    for _ in 0..20 {
        let c = r.random_range(1..6);
        let gl: Vec<u8> = (0..small.len()).map(|_| r.random_range(0..=c as u8)).collect();
        let pl: Vec<u8> =
            gl.iter().map(|l| if r.random_bool(0.3) { r.random_range(0..=c as u8) } else { *l }).collect();
        let target = SemanticGrid::from_labels(small, c, gl.clone()).unwrap();
        let pred = SemanticGrid::from_probabilities(small, c, hard_probs(&pl, c)).unwrap();
        for (variant, empty) in [(LovaszClasses::PresentWithEmpty, true), (LovaszClasses::PresentSemantic, false)] {
            if !empty && gl.iter().all(|l| *l == 0) {
                continue;
            }
            let got = lovasz_softmax_loss_with(&pred, &target, variant).unwrap();
            lov_err = lov_err.max((got - jaccard_oracle(&pl, &gl, c, empty)).abs());
        }
    }
    let lov_ok = lov_err <= 1e-12;
    notes.push(format!("lovasz vs 1-jaccard err {lov_err:.2e}"));
    outcome(hand_ok && sector_ok && lov_ok, notes.join("; "))
}

fn run_cli(args: &[&str]) -> i32 {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = tprim::cli::main_with_args(std::iter::once("tprim").chain(args.iter().copied()), &mut out, &mut err);
    if code != 0 {
        eprintln!("{}", String::from_utf8_lossy(&err));
    }
    code
}

fn criterion_11() -> Outcome {
    let mut notes = Vec::new();
    let mut r = rng(11);

    let mut scene_ok = true;
    for _ in 0..20 {
        let classes = r.random_range(1..5);
        let prims = (0..6).map(|i| random_primitive(&mut r, i % 3, classes, 20.0)).collect();
        let scene = Scene::new(classes, prims);
        let file = SceneFile::from_scene(&scene, (0..classes).map(|c| format!("class{c}")).collect());
        let text = file.to_json();
        let back = SceneFile::parse(&text, true).unwrap();
        let again = back.to_scene().unwrap();
        scene_ok &= again == scene && back.to_json() == text;
    }
    notes.push(format!("scene files {scene_ok}"));

    let mut grid_ok = true;
    let spec = GridSpec::new(Vec3::new(-3.5, 2.25, -1.0), Vec3::new(7.0, 3.0, 2.5), [7, 5, 3]).unwrap();
    for _ in 0..10 {
        let c = r.random_range(1..6);
        let labels: Vec<u8> = (0..spec.len()).map(|_| r.random_range(0..=c as u8)).collect();
        let lg = SemanticGrid::from_labels(spec, c, labels).unwrap();
        let bytes = encode_grid(&lg).unwrap();
        grid_ok &= decode_grid(&bytes).unwrap() == lg;
        let probs: Vec<f64> = (0..spec.len())
            .flat_map(|_| {
                let row: Vec<f64> = (0..=c).map(|_| r.random::<f64>() as f32 as f64).collect();
                let s: f32 = row.iter().map(|v| *v as f32).sum();
                row.into_iter().map(move |v| (v as f32 / s) as f64)
            })
            .collect();
        let pg = SemanticGrid::from_probabilities(spec, c, probs).unwrap();
        let pbytes = encode_grid(&pg).unwrap();
        let decoded = decode_grid(&pbytes).unwrap();
        grid_ok &= decoded == pg && encode_grid(&decoded).unwrap() == pbytes;
    }
    notes.push(format!("grid files {grid_ok}"));

    let dir = tempfile::tempdir().unwrap();
    let scene = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/sample_scene.json");
    let scene = scene.to_str().unwrap();
    let outs: Vec<PathBuf> = (0..3).map(|i| dir.path().join(format!("out{i}.grid"))).collect();
    let codes = [
        run_cli(&["splat", "--scene", scene, "--out", outs[0].to_str().unwrap()]),
        run_cli(&["splat", "--scene", scene, "--out", outs[1].to_str().unwrap()]),
        run_cli(&["--threads", "3", "splat", "--scene", scene, "--out", outs[2].to_str().unwrap()]),
    ];
    let files: Vec<Vec<u8>> = outs.iter().map(|p| std::fs::read(p).unwrap_or_default()).collect();
    let splat_ok = codes == [0, 0, 0] && !files[0].is_empty() && files.iter().all(|f| *f == files[0]);
    notes.push(format!("splat runs identical {splat_ok}"));

    let d = GridSpec::occupancy_default();
    let mut spec_ok = d.dims == [200, 200, 16]
        && d.origin == Vec3::new(-50.0, -50.0, -5.0)
        && d.extent == Vec3::new(100.0, 100.0, 8.0);
    if let Ok(g) = decode_grid(&files[0]) {
        spec_ok &= g.spec == d;
    } else {
        spec_ok = false;
    }
    notes.push(format!("default grid 200x200x16 over [-50,50]^2 x [-5,3] {spec_ok}"));
    outcome(scene_ok && grid_ok && splat_ok && spec_ok, notes.join("; "))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 11] = [
        ("kernels", criterion_1),
        ("basis fields", criterion_2),
        ("composition", criterion_3),
        ("splat oracle", criterion_4),
        ("gradient check", criterion_5),
        ("synthetic recovery", criterion_6),
        ("fps oracle", criterion_7),
        ("skeleton merge", criterion_8),
        ("depth fusion", criterion_9),
        ("metrics", criterion_10),
        ("formats", criterion_11),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.is_some_and(|o| o != n) {
            continue;
        }
        let result = std::panic::catch_unwind(run).unwrap_or_else(|_| outcome(false, "panicked"));
        if !result.pass {
            failed += 1;
        }
        println!("criterion {n} ({name}): {} - {}", if result.pass { "PASS" } else { "FAIL" }, result.detail);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
