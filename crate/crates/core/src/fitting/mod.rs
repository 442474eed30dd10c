//! Losses and gradient-based fitting of primitive scenes to target grids.

mod gradient;
mod loss;
mod optimizer;
mod params;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use gradient::{loss_and_gradient, loss_gradient};
pub use loss::{
    bce_loss, bce_with_grad, lovasz_softmax_loss, lovasz_softmax_loss_with, lovasz_with_grad, total_loss,
    total_loss_with, LossBreakdown, LovaszClasses, BCE_CLIP, DEFAULT_LAMBDA,
};
pub use optimizer::{fit, write_trace_csv, Adam, FitResult, TraceEntry};
pub use params::{BlockLayout, ParamLayout, ParamVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradientMode {
    #[default]
    Analytic,
    FiniteDifference,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub iterations: usize,
    pub step_size: f64,
    pub lambda: f64,
    /// Splat truncation threshold; `≤ 0` evaluates every primitive everywhere.
    pub threshold: f64,
    pub gradient_mode: GradientMode,
    pub fd_epsilon: f64,
    /// Seeds the optional initial center jitter.
    pub rng_seed: u64,
    /// Initial centers are moved by `±init_jitter` voxels per axis.
    pub init_jitter: f64,
    pub lovasz_classes: LovaszClasses,
    /// Re-estimate every ν from the grid before each iteration.
    pub refresh_dof: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            iterations: 100,
            step_size: 1e-2,
            lambda: DEFAULT_LAMBDA,
            threshold: 1e-3,
            gradient_mode: GradientMode::Analytic,
            fd_epsilon: 1e-4,
            rng_seed: 0,
            init_jitter: 0.0,
            lovasz_classes: LovaszClasses::default(),
            refresh_dof: true,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        if self.iterations < 1 {
            return Err(Error::invalid("iterations must be at least 1"));
        }
        if !(self.step_size > 0.0) {
            return Err(Error::invalid("step size must be positive"));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::invalid("lambda must be non-negative"));
        }
        if !(self.fd_epsilon > 0.0) {
            return Err(Error::invalid("finite-difference epsilon must be positive"));
        }
        if self.threshold >= 1.0 || self.threshold.is_nan() {
            return Err(Error::invalid("threshold must be < 1"));
        }
        if !(self.init_jitter >= 0.0) {
            return Err(Error::invalid("init jitter must be non-negative"));
        }
        Ok(())
    }
}
