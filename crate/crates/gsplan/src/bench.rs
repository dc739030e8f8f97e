//! Collision-evaluation timing and linear fits of time against robot size.

use std::time::Instant;

use gsplan_core::collision::{batch_collision, BatchExecutor};
use gsplan_core::linalg;
use gsplan_core::splat::{Pose, RobotBody, RobotModel, SplatScene};

/// `m` bodies with the legged-robot covariance, spaced evenly over the same
/// 0.7 m body length.
pub fn robot_with_bodies(m: usize) -> gsplan_core::Result<RobotModel> {
    let cov = linalg::diag([0.028, 0.016, 0.016]);
    let bodies = (0..m)
        .map(|j| {
            let x = if m == 1 { 0.0 } else { 0.35 - 0.7 * j as f64 / (m - 1) as f64 };
            RobotBody { offset: [x, 0.0, 0.0], cov, weight: 1.0 }
        })
        .collect();
    RobotModel::new(format!("bench-{m}"), bodies)
}

/// `k` poses on the diagonal of the scene bounds at height `h`, yaw sweeping
/// one turn.
pub fn diagonal_poses(scene: &SplatScene, k: usize, h: f64) -> Vec<Pose> {
    let b = scene.bounds();
    (0..k)
        .map(|i| {
            let t = (i as f64 + 0.5) / k as f64;
            let x = b.min[0] + t * (b.max[0] - b.min[0]);
            let y = b.min[1] + t * (b.max[1] - b.min[1]);
            Pose::new([x, y, h], std::f64::consts::TAU * t)
        })
        .collect()
}

/// Fastest of `repeats` full-sum batch evaluations, in seconds.
pub fn time_collision(
    scene: &SplatScene,
    robot: &RobotModel,
    poses: &[Pose],
    exec: &dyn BatchExecutor,
    repeats: usize,
) -> gsplan_core::Result<f64> {
    let mut best = f64::INFINITY;
    for _ in 0..repeats.max(1) {
        let t = Instant::now();
        let out = batch_collision(scene, robot, poses, None, exec)?;
        std::hint::black_box(out);
        best = best.min(t.elapsed().as_secs_f64());
    }
    Ok(best)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Ordinary least squares `y ≈ slope·x + intercept`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<LinearFit> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = y.iter().map(|v| (v - my) * (v - my)).sum();
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - slope * a - intercept).powi(2)).sum();
    let r2 = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Some(LinearFit { slope, intercept, r2 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_exact_line() {
        let f = linear_fit(&[1.0, 2.0, 4.0, 8.0], &[3.0, 5.0, 9.0, 17.0]).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12 && (f.intercept - 1.0).abs() < 1e-12);
        assert!((f.r2 - 1.0).abs() < 1e-12);
        assert!(linear_fit(&[1.0], &[1.0]).is_none());
    }

    #[test]
    fn bench_robots() {
        let r = robot_with_bodies(4).unwrap();
        assert_eq!(r.len(), 4);
        assert_eq!(r.bodies[0].offset[0], 0.35);
        assert!((r.bodies[3].offset[0] + 0.35).abs() < 1e-15);
    }
}
