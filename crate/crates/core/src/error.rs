use alloc::string::String;

/// Errors raised by the planning core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid gaussian: {0}")]
    InvalidGaussian(String),
    #[error("covariance is not symmetric positive-definite: {0}")]
    NotSpd(String),
    #[error("scene contains no gaussians")]
    EmptyScene,
    #[error("robot model has no bodies")]
    EmptyRobot,
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("value {value} outside domain {domain}")]
    Domain { value: f64, domain: String },
    #[error("singular joint covariance")]
    Singular,
    #[error("occupancy grid of {voxels} voxels exceeds cap {cap}")]
    Resource { voxels: u64, cap: u64 },
    #[error("no free voxel within snapping radius of {which} ({x:.3}, {y:.3}, {z:.3})")]
    Snap { which: &'static str, x: f64, y: f64, z: f64 },
    #[error("goal is unreachable from start on the occupancy grid")]
    Unreachable,
}

pub type Result<T> = core::result::Result<T, Error>;
