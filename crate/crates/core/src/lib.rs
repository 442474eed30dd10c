//! Student-t scene primitives (ellipsoidal, superquadric and warped
//! superquadric), their splatting into semantic occupancy grids, fitting of
//! primitive parameters to target grids, and the supporting point-cloud,
//! depth-map and evaluation procedures.
// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod depth;
pub mod error;
pub mod fitting;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod primitives;
pub mod scene;
pub mod skeleton;
pub mod synthetic;

pub use error::{Error, Result};
pub use geometry::{Quaternion, Vec3};
pub use primitives::{Primitive, PrimitiveKind};
pub use scene::{GridSpec, Scene, SemanticGrid};
