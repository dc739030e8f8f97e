//! Orientation-aware trajectory planning through Gaussian-splat scenes.
//!
//! The robot and the environment are both sets of 3D Gaussians. Their
//! collision is measured by the overlap integral of the two density fields,
//! which is smooth in the robot pose. A cubic B-spline over (x, y, z, yaw) is
//! seeded by A* on a coarse occupancy grid and refined by an augmented
//! Lagrangian solver that trades collision against jerk and goal distance
//! under start, height and convex-hull velocity/acceleration constraints.
//!
//! The crate is `no_std` and needs only `alloc`. Parallel evaluation plugs in
//! through [`collision::BatchExecutor`].

#![no_std]
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod bspline;
pub mod collision;
pub mod error;
pub mod linalg;
pub mod optimizer;
pub mod scene_gen;
pub mod seed;
pub mod splat;
pub mod sqn;
pub mod validate;

pub use error::{Error, Result};
