//! Dense after-the-fact checks of a planned trajectory.

use alloc::vec::Vec;

use crate::bspline::{TrajectorySpline, PROGRESS_EPSILON};
use crate::collision::{TreeSum, NORMALIZATION};
use crate::linalg::{self, Mat3, Vec3};
use crate::optimizer::PlanningProblem;
use crate::splat::{robot_gaussians_at_pose, Gaussian3, Pose};
use crate::Result;

/// How densely to sample the trajectory.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Sampling {
    /// Fixed number of samples, uniform in progress.
    Count(usize),
    /// Enough uniform-progress samples that no robot body moves farther than
    /// this many meters between consecutive samples.
    Spacing(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ValidationThresholds {
    /// Largest admissible collision measure at any sample.
    pub collision_peak: f64,
    /// Ellipsoid scale, in standard deviations, of the penetration scan.
    pub sigma_scale: f64,
    pub goal_position: f64,
    pub goal_yaw: f64,
    /// Tolerance added to the derivative bounds.
    pub bound_slack: f64,
    pub height: f64,
}

impl Default for ValidationThresholds {
    fn default() -> Self {
        Self {
            collision_peak: 100.0,
            sigma_scale: 2.0,
            goal_position: 0.25,
            goal_yaw: 0.35,
            bound_slack: 1e-5,
            height: 1e-6,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub value: f64,
    pub limit: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValidationReport {
    pub progress: Vec<f64>,
    pub times: Vec<f64>,
    pub poses: Vec<Pose>,
    /// Collision measure over all pairs at each sample.
    pub collision_profile: Vec<f64>,
    pub collision_peak: f64,
    /// Smallest joint Mahalanobis form `dᵀ(Σ + Σ̄)⁻¹d` over samples and pairs.
    pub min_clearance: f64,
    /// Sample and pair count of intersecting k-σ ellipsoids.
    pub penetrations: usize,
    /// Sample index of the first penetration.
    pub first_penetration: Option<usize>,
    pub max_speed: f64,
    pub max_acceleration: f64,
    pub max_yaw_rate: f64,
    pub max_yaw_acceleration: f64,
    pub max_height_error: f64,
    pub goal_distance: f64,
    pub goal_yaw_error: f64,
    pub checks: Vec<Check>,
    pub pass: bool,
}

impl ValidationReport {
    pub fn failed(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.pass)
    }
}

/// True when `{x : (x−μa)ᵀ(k²Σa)⁻¹(x−μa) ≤ 1}` and the same set for `b`
/// share a point. Uses the contact function
/// `F(λ) = λ(1−λ) rᵀ[(1−λ)A + λB]⁻¹ r`, concave on `[0, 1]`, whose maximum
/// is below one exactly when the ellipsoids overlap.
pub fn ellipsoids_intersect(a: &Gaussian3, b: &Gaussian3, k: f64) -> bool {
    let k2 = k * k;
    let r = linalg::sub(b.mean, a.mean);
    let ma = scaled(&a.cov, k2);
    let mb = scaled(&b.cov, k2);
    let f = |l: f64| -> f64 {
        let m = linalg::mat_add(&scaled(&ma, 1.0 - l), &scaled(&mb, l));
        match linalg::sym_det_inverse(&m) {
            Some((_, inv)) => l * (1.0 - l) * linalg::dot(r, linalg::mat_vec(&inv, r)),
            None => 0.0,
        }
    };
    const G: f64 = 0.618_033_988_749_894_9;
    let (mut lo, mut hi) = (0.0, 1.0);
    let mut x1 = hi - G * (hi - lo);
    let mut x2 = lo + G * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > 1e-10 {
        if f1.max(f2) >= 1.0 {
            return false;
        }
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + G * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - G * (hi - lo);
            f1 = f(x1);
        }
    }
    f1.max(f2) < 1.0
}

fn scaled(m: &Mat3, s: f64) -> Mat3 {
    m.map(|row| row.map(|v| v * s))
}

/// Progress values for the requested density.
pub fn sample_progress(spline: &TrajectorySpline, reach: f64, sampling: Sampling) -> Vec<f64> {
    let end = spline.progress_end() - PROGRESS_EPSILON;
    let n = match sampling {
        Sampling::Count(n) => n.max(2),
        Sampling::Spacing(ds) => {
            let fine = 64 * spline.segments();
            let mut rate = 0.0f64;
            for i in 0..=fine {
                let s = i as f64 * end / fine as f64;
                if let Ok(d) = spline.evaluate(s, 1, false) {
                    let v = libm::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
                    rate = rate.max(v + reach * libm::fabs(d[3]));
                }
            }
            // 10% headroom for the speed peak between fine samples
            (libm::ceil(1.1 * rate * end / ds) as usize + 1).max(2)
        }
    };
    (0..n).map(|i| i as f64 * end / (n - 1) as f64).collect()
}

struct PairScan {
    value: f64,
    min_clearance: f64,
    penetrations: usize,
}

fn scan_pose(env: &[Gaussian3], bodies: &[Gaussian3], k: f64) -> Result<PairScan> {
    let mut acc = TreeSum::<1>::default();
    let mut min_clearance = f64::INFINITY;
    let mut penetrations = 0;
    for rob in bodies {
        for e in env {
            let s = linalg::mat_add(&e.cov, &rob.cov);
            let (det, inv) = linalg::sym_det_inverse(&s).ok_or(crate::Error::Singular)?;
            let d: Vec3 = linalg::sub(rob.mean, e.mean);
            let q = linalg::dot(d, linalg::mat_vec(&inv, d));
            acc.push([e.weight * rob.weight * NORMALIZATION / libm::sqrt(det) * libm::exp(-0.5 * q)]);
            min_clearance = min_clearance.min(q);
            // F(½) = q / 2k² bounds the contact function from below.
            if q < 2.0 * k * k && ellipsoids_intersect(rob, e, k) {
                penetrations += 1;
            }
        }
    }
    Ok(PairScan { value: acc.finish()[0], min_clearance, penetrations })
}

/// Densely samples `spline` and checks derivatives, height, collision and
/// goal attainment against the problem's bounds and `thresholds`.
pub fn validate_plan(
    problem: &PlanningProblem,
    spline: &TrajectorySpline,
    sampling: Sampling,
    thresholds: &ValidationThresholds,
) -> Result<ValidationReport> {
    let reach = problem
        .robot
        .bodies
        .iter()
        .map(|b| libm::sqrt(b.offset[0] * b.offset[0] + b.offset[1] * b.offset[1]))
        .fold(0.0, f64::max);
    let progress = sample_progress(spline, reach, sampling);
    let m = spline.time_regulation;
    let env = problem.scene.gaussians();
    let mut rep = ValidationReport {
        times: progress.iter().map(|s| s / m).collect(),
        progress: Vec::with_capacity(progress.len()),
        poses: Vec::with_capacity(progress.len()),
        collision_profile: Vec::with_capacity(progress.len()),
        collision_peak: 0.0,
        min_clearance: f64::INFINITY,
        penetrations: 0,
        first_penetration: None,
        max_speed: 0.0,
        max_acceleration: 0.0,
        max_yaw_rate: 0.0,
        max_yaw_acceleration: 0.0,
        max_height_error: 0.0,
        goal_distance: 0.0,
        goal_yaw_error: 0.0,
        checks: Vec::new(),
        pass: false,
    };
    let norm3 = |v: &[f64; 4]| libm::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    for (i, &s) in progress.iter().enumerate() {
        let x = spline.evaluate(s, 0, true)?;
        let v = spline.evaluate(s, 1, true)?;
        let a = spline.evaluate(s, 2, true)?;
        rep.max_speed = rep.max_speed.max(norm3(&v));
        rep.max_acceleration = rep.max_acceleration.max(norm3(&a));
        rep.max_yaw_rate = rep.max_yaw_rate.max(libm::fabs(v[3]));
        rep.max_yaw_acceleration = rep.max_yaw_acceleration.max(libm::fabs(a[3]));
        rep.max_height_error = rep.max_height_error.max(libm::fabs(x[2] - problem.height));
        let pose = Pose::unwrapped([x[0], x[1], x[2]], x[3]);
        let scan = scan_pose(env, &robot_gaussians_at_pose(problem.robot, &pose), thresholds.sigma_scale)?;
        rep.collision_profile.push(scan.value);
        rep.collision_peak = rep.collision_peak.max(scan.value);
        rep.min_clearance = rep.min_clearance.min(scan.min_clearance);
        if scan.penetrations > 0 && rep.first_penetration.is_none() {
            rep.first_penetration = Some(i);
        }
        rep.penetrations += scan.penetrations;
        rep.progress.push(s);
        rep.poses.push(pose);
    }
    let last = rep.poses[rep.poses.len() - 1];
    rep.goal_distance = linalg::norm(linalg::sub(last.position, problem.goal.position));
    rep.goal_yaw_error = libm::fabs(crate::splat::normalize_angle(last.yaw - problem.goal.yaw));

    let b = problem.bounds;
    let t = thresholds;
    let mut check = |name, value: f64, limit: f64| rep.checks.push(Check { name, value, limit, pass: value <= limit });
    check("velocity", rep.max_speed, b.velocity + t.bound_slack);
    check("acceleration", rep.max_acceleration, b.acceleration + t.bound_slack);
    check("yaw_rate", rep.max_yaw_rate, b.yaw_rate + t.bound_slack);
    check("yaw_acceleration", rep.max_yaw_acceleration, b.yaw_acceleration + t.bound_slack);
    check("height", rep.max_height_error, t.height);
    check("collision", rep.collision_peak, t.collision_peak);
    check("clearance", rep.penetrations as f64, 0.0);
    check("goal_position", rep.goal_distance, t.goal_position);
    check("goal_yaw", rep.goal_yaw_error, t.goal_yaw);
    rep.pass = rep.checks.iter().all(|c| c.pass);
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn touching_spheres() {
        let a = Gaussian3::isotropic([0.0; 3], 1.0).unwrap();
        // 2σ radii of 2 each: centers 3.99 apart overlap, 4.01 apart do not.
        let near = Gaussian3::isotropic([3.99, 0.0, 0.0], 1.0).unwrap();
        let far = Gaussian3::isotropic([4.01, 0.0, 0.0], 1.0).unwrap();
        assert!(ellipsoids_intersect(&a, &near, 2.0));
        assert!(!ellipsoids_intersect(&a, &far, 2.0));
    }

    #[test]
    fn flat_ellipsoids_crossing() {
        let thin = |mean: Vec3, cov: Vec3| Gaussian3::new(mean, linalg::diag(cov), 1.0).unwrap();
        // A long needle along x and one along y, crossing at the origin.
        let a = thin([0.0, 0.0, 0.0], [1.0, 1e-4, 1e-4]);
        let b = thin([0.5, 0.0, 0.0], [1e-4, 1.0, 1e-4]);
        assert!(ellipsoids_intersect(&a, &b, 2.0));
        let c = thin([0.5, 0.0, 0.1], [1e-4, 1.0, 1e-4]);
        assert!(!ellipsoids_intersect(&a, &c, 2.0));
    }
}
