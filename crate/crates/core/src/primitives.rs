//! Student-t primitives: the general ellipsoidal T-primitive, the
//! T-superquadric, and the T-superquadric with a 24-field inverse warp.
//!
//! Every family maps a world point to a non-negative scalar `f` in the
//! primitive's normalized local frame (`f = 1` on the unit level set) and
//! turns it into an occupancy kernel `(1 + f/ν)^(−(ν+3)/2)`.
//!
//! Local coordinates are `Rᵀ(x − m)` where `R` is the rotation of the stored
//! quaternion, so the covariance of a T-primitive is `R·diag(s²)·Rᵀ`.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::geometry::{rotation_partials, unit_quat_to_rotation, Mat3, Quaternion, Vec3};

pub const NUM_BASIS_FIELDS: usize = 24;
pub const EPS_MIN: f64 = 0.2;
pub const EPS_MAX: f64 = 2.0;
pub const NU_MIN: f64 = 1.0;
/// Kernel values below this are flushed to zero.
pub const KERNEL_FLOOR: f64 = 1e-30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrimitiveKind {
    /// General T-primitive (ellipsoidal Mahalanobis kernel).
    Tp,
    /// T-superquadric.
    Tsq,
    /// T-superquadric with inverse warp.
    Tsqiw,
}

impl PrimitiveKind {
    pub fn has_shape_exponents(self) -> bool {
        !matches!(self, PrimitiveKind::Tp)
    }

    pub fn has_warp(self) -> bool {
        matches!(self, PrimitiveKind::Tsqiw)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub kind: PrimitiveKind,
    pub center: Vec3,
    pub scale: Vec3,
    pub rotation: Quaternion,
    pub opacity: f64,
    /// Raw semantic logits, one per class.
    pub semantics: Vec<f64>,
    pub eps1: f64,
    pub eps2: f64,
    pub warp: [f64; NUM_BASIS_FIELDS],
    pub nu: f64,
}

impl Primitive {
    pub fn tp(center: Vec3, scale: Vec3, rotation: Quaternion, opacity: f64, semantics: Vec<f64>, nu: f64) -> Self {
        Primitive {
            kind: PrimitiveKind::Tp,
            center,
            scale,
            rotation,
            opacity,
            semantics,
            eps1: 1.0,
            eps2: 1.0,
            warp: [0.0; NUM_BASIS_FIELDS],
            nu,
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn tsq(
        center: Vec3,
        scale: Vec3,
        rotation: Quaternion,
        opacity: f64,
        semantics: Vec<f64>,
        eps1: f64,
        eps2: f64,
        nu: f64,
    ) -> Self {
        Primitive {
            kind: PrimitiveKind::Tsq,
            eps1,
            eps2,
            ..Primitive::tp(center, scale, rotation, opacity, semantics, nu)
        }
    }

    /// Converts a superquadric into its warped variant with the given weights.
    pub fn with_warp(mut self, warp: [f64; NUM_BASIS_FIELDS]) -> Self {
        self.kind = PrimitiveKind::Tsqiw;
        self.warp = warp;
        self
    }

    pub fn num_classes(&self) -> usize {
        self.semantics.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !self.center.is_finite() {
            return Err(Error::invalid("primitive center must be finite"));
        }
        if !self.scale.0.iter().all(|s| *s > 0.0 && s.is_finite()) {
            return Err(Error::invalid("primitive scales must be positive and finite"));
        }
        self.rotation.normalized()?;
        if !(0.0..=1.0).contains(&self.opacity) {
            return Err(Error::invalid("opacity must lie in [0, 1]"));
        }
        if self.semantics.is_empty() || !self.semantics.iter().all(|c| c.is_finite()) {
            return Err(Error::invalid("semantic logits must be a non-empty finite vector"));
        }
        if self.kind.has_shape_exponents() {
            for e in [self.eps1, self.eps2] {
                if !(EPS_MIN..=EPS_MAX).contains(&e) {
                    return Err(Error::invalid(format!("shape exponent {e} outside [{EPS_MIN}, {EPS_MAX}]")));
                }
            }
        }
        if self.kind.has_warp() {
            if !self.warp.iter().all(|w| (-1.0..=1.0).contains(w)) {
                return Err(Error::invalid("warp weights must lie in [-1, 1]"));
            }
        } else if self.warp.iter().any(|w| *w != 0.0) {
            return Err(Error::invalid("only tsqiw primitives carry warp weights"));
        }
        if !(self.nu >= NU_MIN) || !self.nu.is_finite() {
            return Err(Error::invalid(format!("degrees of freedom must be finite and >= {NU_MIN}")));
        }
        Ok(())
    }

    pub fn prepare(&self) -> Result<PreparedPrimitive<'_>> {
        PreparedPrimitive::new(self)
    }
}

/// `R·diag(s²)·Rᵀ`.
pub fn covariance_from(scale: &Vec3, rotation: &Quaternion) -> Result<Mat3> {
    let r = unit_quat_to_rotation(&rotation.normalized()?);
    let d = Mat3::diag(scale.mul_elem(scale));
    Ok(r.mul_mat(&d).mul_mat(&r.transpose()))
}

/// Student-t occupancy kernel as a function of the normalized squared
/// distance (or superquadric implicit value) `f`.
pub fn t_kernel(f: f64, nu: f64) -> f64 {
    let k = (1.0 + f / nu).powf(-(nu + 3.0) / 2.0);
    if k < KERNEL_FLOOR {
        0.0
    } else {
        k
    }
}

fn t_kernel_derivative(f: f64, nu: f64) -> f64 {
    -(nu + 3.0) / (2.0 * nu) * (1.0 + f / nu).powf(-(nu + 5.0) / 2.0)
}

/// Level `f` at which the kernel drops to `threshold`.
pub fn kernel_level(threshold: f64, nu: f64) -> f64 {
    nu * (threshold.powf(-2.0 / (nu + 3.0)) - 1.0)
}

/// `Γ((ν+3)/2) / (Γ(ν/2)·(νπ)^{3/2})`, the unit-covariance normalizer of the
/// trivariate t density.
pub fn t_density_normalizer(nu: f64) -> f64 {
    (ln_gamma((nu + 3.0) / 2.0) - ln_gamma(nu / 2.0) - 1.5 * (nu * std::f64::consts::PI).ln()).exp()
}

/// Superquadric inside-outside function on unnormalized local coordinates.
pub fn sq_implicit(x_local: &Vec3, scale: &Vec3, eps1: f64, eps2: f64) -> f64 {
    sq_implicit_normalized(&x_local.div_elem(scale), eps1, eps2)
}

fn sq_implicit_normalized(u: &Vec3, eps1: f64, eps2: f64) -> f64 {
    let p2 = 2.0 / eps2;
    let p1 = 2.0 / eps1;
    let h = u[0].abs().powf(p2) + u[1].abs().powf(p2);
    h.powf(eps2 / eps1) + u[2].abs().powf(p1)
}

struct ImplicitGrad {
    f: f64,
    du: Vec3,
    deps1: f64,
    deps2: f64,
}

/// `d|t|^p / dt` for `p ≥ 1`, zero at the origin.
fn abs_pow_derivative(t: f64, p: f64) -> f64 {
    if t == 0.0 {
        0.0
    } else {
        p * t.abs().powf(p - 1.0) * t.signum()
    }
}

fn ln_abs_or_zero(t: f64) -> f64 {
    if t == 0.0 {
        0.0
    } else {
        t.abs().ln()
    }
}

fn sq_implicit_grad(u: &Vec3, eps1: f64, eps2: f64) -> ImplicitGrad {
    let p2 = 2.0 / eps2;
    let p1 = 2.0 / eps1;
    let ratio = eps2 / eps1;
    let a = u[0].abs().powf(p2);
    let b = u[1].abs().powf(p2);
    let c = u[2].abs().powf(p1);
    let h = a + b;
    let hp = h.powf(ratio);
    let f = hp + c;

    let mut du = Vec3::ZERO;
    let mut deps1 = 0.0;
    let mut deps2 = 0.0;
    if h > 0.0 {
        let outer = ratio * hp / h;
        du[0] = outer * abs_pow_derivative(u[0], p2);
        du[1] = outer * abs_pow_derivative(u[1], p2);
        let ln_h = h.ln();
        deps1 += hp * ln_h * (-eps2 / (eps1 * eps1));
        let dh_deps2 = (a * ln_abs_or_zero(u[0]) + b * ln_abs_or_zero(u[1])) * (-2.0 / (eps2 * eps2));
        deps2 += hp * ln_h / eps1 + outer * dh_deps2;
    }
    du[2] = abs_pow_derivative(u[2], p1);
    deps1 += c * ln_abs_or_zero(u[2]) * (-2.0 / (eps1 * eps1));
    ImplicitGrad { f, du, deps1, deps2 }
}

/// The `index`-th deformation basis field (1-based, 1..=24).
pub fn basis_field(index: usize, u: f64, v: f64, w: f64) -> Result<Vec3> {
    if !(1..=NUM_BASIS_FIELDS).contains(&index) {
        return Err(Error::invalid(format!("basis field index {index} outside 1..=24")));
    }
    Ok(basis_fields(&Vec3::new(u, v, w))[index - 1])
}

pub(crate) fn basis_fields(p: &Vec3) -> [Vec3; NUM_BASIS_FIELDS] {
    let (u, v, w) = (p[0], p[1], p[2]);
    let r2 = u * u + v * v;
    [
        Vec3::new(1.0, 0.0, 0.0),
        Vec3::new(0.0, 1.0, 0.0),
        Vec3::new(0.0, 0.0, 1.0),
        Vec3::new(u, 0.0, 0.0),
        Vec3::new(0.0, v, 0.0),
        Vec3::new(0.0, 0.0, w),
        Vec3::new(v, 0.0, 0.0),
        Vec3::new(w, 0.0, 0.0),
        Vec3::new(0.0, w, 0.0),
        Vec3::new(0.0, u, 0.0),
        Vec3::new(0.0, 0.0, u),
        Vec3::new(0.0, 0.0, v),
        // twists
        Vec3::new(-w * v, w * u, 0.0),
        Vec3::new(0.0, -u * w, u * v),
        Vec3::new(v * w, 0.0, -v * u),
        // bends
        Vec3::new(w * w, 0.0, 0.0),
        Vec3::new(0.0, w * w, 0.0),
        Vec3::new(0.0, 0.0, r2),
        Vec3::new(u * u, 0.0, 0.0),
        Vec3::new(0.0, v * v, 0.0),
        Vec3::new(0.0, 0.0, w * w),
        // bulge and corners
        Vec3::new(r2 * u, r2 * v, 0.0),
        Vec3::new(u * v, u * v, 0.0),
        Vec3::new(u * v * v, u * u * v, 0.0),
    ]
}

/// `jac[i][j]` is the partial of field `i` with respect to input `j` of `(u, v, w)`.
fn basis_jacobians(p: &Vec3) -> [[Vec3; 3]; NUM_BASIS_FIELDS] {
    let (u, v, w) = (p[0], p[1], p[2]);
    let z = Vec3::ZERO;
    let ex = Vec3::new(1.0, 0.0, 0.0);
    let ey = Vec3::new(0.0, 1.0, 0.0);
    let ez = Vec3::new(0.0, 0.0, 1.0);
    [
        [z, z, z],
        [z, z, z],
        [z, z, z],
        [ex, z, z],
        [z, ey, z],
        [z, z, ez],
        [z, ex, z],
        [z, z, ex],
        [z, z, ey],
        [ey, z, z],
        [ez, z, z],
        [z, ez, z],
        [Vec3::new(0.0, w, 0.0), Vec3::new(-w, 0.0, 0.0), Vec3::new(-v, u, 0.0)],
        [Vec3::new(0.0, -w, v), Vec3::new(0.0, 0.0, u), Vec3::new(0.0, -u, 0.0)],
        [Vec3::new(0.0, 0.0, -v), Vec3::new(w, 0.0, -u), Vec3::new(v, 0.0, 0.0)],
        [z, z, Vec3::new(2.0 * w, 0.0, 0.0)],
        [z, z, Vec3::new(0.0, 2.0 * w, 0.0)],
        [Vec3::new(0.0, 0.0, 2.0 * u), Vec3::new(0.0, 0.0, 2.0 * v), z],
        [Vec3::new(2.0 * u, 0.0, 0.0), z, z],
        [z, Vec3::new(0.0, 2.0 * v, 0.0), z],
        [z, z, Vec3::new(0.0, 0.0, 2.0 * w)],
        [Vec3::new(3.0 * u * u + v * v, 2.0 * u * v, 0.0), Vec3::new(2.0 * u * v, u * u + 3.0 * v * v, 0.0), z],
        [Vec3::new(v, v, 0.0), Vec3::new(u, u, 0.0), z],
        [Vec3::new(v * v, 2.0 * u * v, 0.0), Vec3::new(2.0 * u * v, u * u, 0.0), z],
    ]
}

/// Componentwise bound on `|B_i(u, v, w)|` over the box `|u| ≤ U, |v| ≤ V, |w| ≤ W`.
pub(crate) fn basis_abs_bounds(b: &Vec3) -> [Vec3; NUM_BASIS_FIELDS] {
    // Every component is a monomial (or sum of even monomials times a
    // monomial), so evaluating at the box corner bounds its magnitude.
    let mut out = basis_fields(&Vec3::new(b[0].abs(), b[1].abs(), b[2].abs()));
    for f in out.iter_mut() {
        *f = f.map(f64::abs);
    }
    out
}

/// Inverse warp of local coordinates: `x_local − Σ ωᵢ·Bᵢ(x_local / s)`.
pub fn warp(x_local: &Vec3, scale: &Vec3, weights: &[f64; NUM_BASIS_FIELDS]) -> Vec3 {
    let u = x_local.div_elem(scale);
    *x_local - warp_displacement(&u, weights)
}

fn warp_displacement(u: &Vec3, weights: &[f64; NUM_BASIS_FIELDS]) -> Vec3 {
    let mut d = Vec3::ZERO;
    if weights.iter().all(|w| *w == 0.0) {
        return d;
    }
    for (b, w) in basis_fields(u).iter().zip(weights) {
        if *w != 0.0 {
            d += b.scale(*w);
        }
    }
    d
}

/// Gradient of a scalar with respect to one primitive's natural parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad {
    pub center: Vec3,
    pub scale: Vec3,
    /// With respect to the raw (unnormalized) quaternion components.
    pub rotation: [f64; 4],
    pub opacity: f64,
    /// With respect to the raw semantic logits.
    pub semantics: Vec<f64>,
    pub eps: [f64; 2],
    pub warp: [f64; NUM_BASIS_FIELDS],
}

impl ParamGrad {
    pub fn zeros(num_classes: usize) -> Self {
        ParamGrad {
            center: Vec3::ZERO,
            scale: Vec3::ZERO,
            rotation: [0.0; 4],
            opacity: 0.0,
            semantics: vec![0.0; num_classes],
            eps: [0.0; 2],
            warp: [0.0; NUM_BASIS_FIELDS],
        }
    }

    pub fn add_assign(&mut self, o: &ParamGrad) {
        self.center += o.center;
        self.scale += o.scale;
        for i in 0..4 {
            self.rotation[i] += o.rotation[i];
        }
        self.opacity += o.opacity;
        for (a, b) in self.semantics.iter_mut().zip(&o.semantics) {
            *a += b;
        }
        self.eps[0] += o.eps[0];
        self.eps[1] += o.eps[1];
        for (a, b) in self.warp.iter_mut().zip(&o.warp) {
            *a += b;
        }
    }
}

/// A primitive with its rotation and normalizers cached for repeated
/// evaluation.
#[derive(Debug, Clone)]
pub struct PreparedPrimitive<'a> {
    pub prim: &'a Primitive,
    pub rotation: Mat3,
    unit_q: Quaternion,
    q_norm: f64,
    /// Multiplier turning the kernel into `p(x | primitive)`.
    density_factor: f64,
    warped: bool,
}

impl<'a> PreparedPrimitive<'a> {
    pub fn new(prim: &'a Primitive) -> Result<Self> {
        let unit_q = prim.rotation.normalized()?;
        let density_factor = match prim.kind {
            PrimitiveKind::Tp => t_density_normalizer(prim.nu) / (prim.scale[0] * prim.scale[1] * prim.scale[2]),
            PrimitiveKind::Tsq | PrimitiveKind::Tsqiw => 1.0,
        };
        Ok(PreparedPrimitive {
            prim,
            rotation: unit_quat_to_rotation(&unit_q),
            unit_q,
            q_norm: prim.rotation.norm(),
            density_factor,
            warped: prim.kind.has_warp() && prim.warp.iter().any(|w| *w != 0.0),
        })
    }

    /// Rotated, unnormalized local coordinates `Rᵀ(x − m)`.
    pub fn local(&self, x: &Vec3) -> Vec3 {
        self.rotation.tmul_vec(&(*x - self.prim.center))
    }

    /// Normalized coordinates after the (optional) inverse warp.
    fn warped_normalized(&self, x: &Vec3) -> Vec3 {
        let y = self.local(x);
        let s = &self.prim.scale;
        if self.warped {
            let u = y.div_elem(s);
            (y - warp_displacement(&u, &self.prim.warp)).div_elem(s)
        } else {
            y.div_elem(s)
        }
    }

    /// Implicit value `f`: Mahalanobis² for TP, superquadric function otherwise.
    pub fn implicit(&self, x: &Vec3) -> f64 {
        let u = self.warped_normalized(x);
        match self.prim.kind {
            PrimitiveKind::Tp => u.norm_sq(),
            PrimitiveKind::Tsq | PrimitiveKind::Tsqiw => sq_implicit_normalized(&u, self.prim.eps1, self.prim.eps2),
        }
    }

    pub fn kernel(&self, x: &Vec3) -> f64 {
        t_kernel(self.implicit(x), self.prim.nu)
    }

    /// Conditional density `p(x | primitive)` used by the mixture
    /// expectation: the normalized t density for TP, the kernel otherwise.
    pub fn density(&self, x: &Vec3) -> f64 {
        self.kernel(x) * self.density_factor
    }

    /// Ratio `density / kernel`: the t normalizer over `sx·sy·sz` for TP, 1 otherwise.
    pub fn density_factor(&self) -> f64 {
        self.density_factor
    }

    /// `(kernel, density)` at `x`.
    pub fn eval(&self, x: &Vec3) -> (f64, f64) {
        let k = self.kernel(x);
        (k, k * self.density_factor)
    }

    /// Adds `g_kernel·∂kernel/∂θ + g_density·∂density/∂θ` at `x` into `out`.
    /// Degrees of freedom are treated as constant.
    pub fn backprop(&self, x: &Vec3, g_kernel: f64, g_density: f64, out: &mut ParamGrad) {
        let prim = self.prim;
        let s = prim.scale;
        let d = *x - prim.center;
        let y = self.rotation.tmul_vec(&d);
        let u = y.div_elem(&s);
        // zero weights still have a gradient, so warped kinds always take this path
        let (yt, ut, basis) = if prim.kind.has_warp() {
            let basis = basis_fields(&u);
            let mut disp = Vec3::ZERO;
            for (b, w) in basis.iter().zip(&prim.warp) {
                disp += b.scale(*w);
            }
            let yt = y - disp;
            (yt, yt.div_elem(&s), Some(basis))
        } else {
            (y, u, None)
        };

        let (f, g_ut, g_eps) = match prim.kind {
            PrimitiveKind::Tp => (ut.norm_sq(), ut.scale(2.0), [0.0, 0.0]),
            PrimitiveKind::Tsq | PrimitiveKind::Tsqiw => {
                let g = sq_implicit_grad(&ut, prim.eps1, prim.eps2);
                (g.f, g.du, [g.deps1, g.deps2])
            }
        };
        let k = t_kernel(f, prim.nu);
        if k == 0.0 {
            return;
        }
        let dk_df = t_kernel_derivative(f, prim.nu);
        // dL/df through both the kernel and the density.
        let g_f = (g_kernel + g_density * self.density_factor) * dk_df;
        if g_f == 0.0 && g_density == 0.0 {
            return;
        }

        if prim.kind == PrimitiveKind::Tp {
            // density = Z/(sx·sy·sz)·k
            let dens = k * self.density_factor;
            for a in 0..3 {
                out.scale[a] -= g_density * dens / s[a];
            }
        }

        out.eps[0] += g_f * g_eps[0];
        out.eps[1] += g_f * g_eps[1];

        let g_ut = g_ut.scale(g_f);
        let g_yt = g_ut.div_elem(&s);
        for a in 0..3 {
            out.scale[a] -= g_ut[a] * yt[a] / (s[a] * s[a]);
        }
        let mut g_y = g_yt;
        if let Some(basis) = basis {
            let jac = basis_jacobians(&u);
            let mut g_u = Vec3::ZERO;
            for i in 0..NUM_BASIS_FIELDS {
                out.warp[i] -= basis[i].dot(&g_yt);
                let w = prim.warp[i];
                if w != 0.0 {
                    for j in 0..3 {
                        g_u[j] -= w * jac[i][j].dot(&g_yt);
                    }
                }
            }
            for a in 0..3 {
                g_y[a] += g_u[a] / s[a];
                out.scale[a] -= g_u[a] * y[a] / (s[a] * s[a]);
            }
        }

        // y = Rᵀ d
        let g_d = self.rotation.mul_vec(&g_y);
        out.center += -g_d;
        let partials = rotation_partials(&self.unit_q);
        let mut g_qhat = [0.0; 4];
        for (k, part) in partials.iter().enumerate() {
            // y_b = Σ_a R_ab d_a
            let mut acc = 0.0;
            for a in 0..3 {
                for b in 0..3 {
                    acc += part.0[a][b] * d[a] * g_y[b];
                }
            }
            g_qhat[k] = acc;
        }
        let qhat = self.unit_q.as_array();
        let proj: f64 = qhat.iter().zip(&g_qhat).map(|(a, b)| a * b).sum();
        for k in 0..4 {
            out.rotation[k] += (g_qhat[k] - qhat[k] * proj) / self.q_norm;
        }
    }
}

fn check_kind(p: &Primitive, kind: PrimitiveKind) -> Result<()> {
    if p.kind != kind {
        return Err(Error::invalid(format!("expected a {kind:?} primitive, got {:?}", p.kind)));
    }
    Ok(())
}

/// `[1 + (x−m)ᵀΣ⁻¹(x−m)/ν]^(−(ν+3)/2)`.
pub fn tp_kernel(x: &Vec3, p: &Primitive) -> Result<f64> {
    check_kind(p, PrimitiveKind::Tp)?;
    Ok(p.prepare()?.kernel(x))
}

/// Normalized trivariate Student-t density.
pub fn tp_density(x: &Vec3, p: &Primitive) -> Result<f64> {
    check_kind(p, PrimitiveKind::Tp)?;
    Ok(p.prepare()?.density(x))
}

pub fn sq_kernel(x: &Vec3, p: &Primitive) -> Result<f64> {
    check_kind(p, PrimitiveKind::Tsq)?;
    Ok(p.prepare()?.kernel(x))
}

pub fn sqiw_kernel(x: &Vec3, p: &Primitive) -> Result<f64> {
    check_kind(p, PrimitiveKind::Tsqiw)?;
    Ok(p.prepare()?.kernel(x))
}

pub fn eval_kernel(x: &Vec3, p: &Primitive) -> Result<f64> {
    Ok(p.prepare()?.kernel(x))
}
