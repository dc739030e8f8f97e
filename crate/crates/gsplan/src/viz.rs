//! Posed robot Gaussians as a splat PLY for external viewers.

use std::path::Path;

use gsplan_core::splat::{robot_gaussians_at_pose, Pose, RobotModel};

use crate::error::Result;
use crate::ply::{record_from_gaussian, write_splat_ply, Rgb};

pub const FRONT: Rgb = [0.0, 1.0, 0.0];
pub const MIDDLE: Rgb = [1.0, 0.0, 0.0];
pub const REAR: Rgb = [0.0, 0.0, 1.0];

/// Color of each body: the one farthest forward along body x is green, the
/// one farthest back blue, the rest red.
pub fn body_colors(robot: &RobotModel) -> Vec<Rgb> {
    let xs: Vec<f64> = robot.bodies.iter().map(|b| b.offset[0]).collect();
    if xs.len() < 2 {
        return vec![MIDDLE; xs.len()];
    }
    let front = (0..xs.len()).fold(0, |a, i| if xs[i] > xs[a] { i } else { a });
    let rear = (0..xs.len()).fold(0, |a, i| if xs[i] < xs[a] { i } else { a });
    (0..xs.len())
        .map(|i| {
            if i == front {
                FRONT
            } else if i == rear {
                REAR
            } else {
                MIDDLE
            }
        })
        .collect()
}

pub fn write_robot_poses(path: &Path, robot: &RobotModel, poses: &[Pose]) -> Result<()> {
    let palette = body_colors(robot);
    let mut records = Vec::with_capacity(poses.len() * robot.len());
    let mut colors = Vec::with_capacity(records.capacity());
    for pose in poses {
        for (g, c) in robot_gaussians_at_pose(robot, pose).iter().zip(&palette) {
            records.push(record_from_gaussian(g));
            colors.push(*c);
        }
    }
    write_splat_ply(path, &records, Some(&colors))
}
