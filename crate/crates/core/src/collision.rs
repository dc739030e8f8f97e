//! Overlap-integral collision measure between a posed robot and a scene.
//!
//! The overlap of two normalized Gaussian densities integrates in closed form
//! to a single Gaussian evaluated at the difference of the means with the
//! summed covariance:
//!
//! ```text
//! ∫ N(r; μ, Σ) N(r; μ̄, Σ̄) dV = N(μ̄; μ, Σ + Σ̄)
//! ```
//!
//! Summed over every (environment, robot) pair this gives a smooth,
//! nonnegative measure that decays with Mahalanobis distance.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{self, Mat3, Vec3};
use crate::splat::{self, robot_gaussians_at_pose, Gaussian3, Pose, RobotModel, SplatScene};

/// (2π)^(−3/2)
pub const NORMALIZATION: f64 = 0.063_493_635_934_240_97;

/// Default Mahalanobis cutoff for culling.
pub const DEFAULT_CUTOFF: f64 = 6.0;

/// Collision value and its gradient with respect to (x, y, z, yaw).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CollisionEval {
    pub value: f64,
    pub grad: [f64; 4],
}

/// Cascade (pairwise tree) summation with a fixed reduction order.
#[derive(Clone)]
pub struct TreeSum<const D: usize> {
    levels: [[f64; D]; 64],
    occupied: u64,
}

impl<const D: usize> Default for TreeSum<D> {
    fn default() -> Self {
        Self { levels: [[0.0; D]; 64], occupied: 0 }
    }
}

impl<const D: usize> TreeSum<D> {
    #[inline]
    pub fn push(&mut self, x: [f64; D]) {
        let mut carry = x;
        let mut level = 0;
        while self.occupied & (1 << level) != 0 {
            let l = &self.levels[level];
            for d in 0..D {
                carry[d] += l[d];
            }
            self.occupied &= !(1 << level);
            level += 1;
        }
        self.levels[level] = carry;
        self.occupied |= 1 << level;
    }

    pub fn finish(&self) -> [f64; D] {
        let mut out = [0.0; D];
        let mut first = true;
        for level in 0..64 {
            if self.occupied & (1 << level) != 0 {
                let l = &self.levels[level];
                if first {
                    out = *l;
                    first = false;
                } else {
                    for d in 0..D {
                        out[d] += l[d];
                    }
                }
            }
        }
        out
    }
}

/// Pairwise-tree sum of a slice.
pub fn tree_sum(values: &[f64]) -> f64 {
    let mut acc = TreeSum::<1>::default();
    for &v in values {
        acc.push([v]);
    }
    acc.finish()[0]
}

/// Overlap integral of two weighted Gaussian densities.
pub fn pair_overlap(env: &Gaussian3, rob: &Gaussian3) -> Result<f64> {
    let s = linalg::mat_add(&env.cov, &rob.cov);
    let (det, inv) = linalg::sym_det_inverse(&s).ok_or(Error::Singular)?;
    let d = linalg::sub(rob.mean, env.mean);
    let q = linalg::dot(d, linalg::mat_vec(&inv, d));
    Ok(env.weight * rob.weight * NORMALIZATION / libm::sqrt(det) * libm::exp(-0.5 * q))
}

/// Squared Mahalanobis distance of the two means under the joint covariance.
pub fn joint_mahalanobis_sq(env: &Gaussian3, rob: &Gaussian3) -> Result<f64> {
    let s = linalg::mat_add(&env.cov, &rob.cov);
    let (_, inv) = linalg::sym_det_inverse(&s).ok_or(Error::Singular)?;
    let d = linalg::sub(rob.mean, env.mean);
    Ok(linalg::dot(d, linalg::mat_vec(&inv, d)))
}

/// Environment/robot pairs kept for exact evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct CullSet {
    /// Environment indices per robot body, ascending.
    by_body: Vec<Vec<u32>>,
    cutoff: f64,
}

impl CullSet {
    /// Every pair of a scene/robot combination.
    pub fn full(scene: &SplatScene, robot: &RobotModel) -> Self {
        let all: Vec<u32> = (0..scene.len() as u32).collect();
        Self { by_body: vec![all; robot.len()], cutoff: f64::INFINITY }
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    pub fn len(&self) -> usize {
        self.by_body.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn body_count(&self) -> usize {
        self.by_body.len()
    }

    /// Retained environment indices for body `j`.
    pub fn env_indices(&self, j: usize) -> &[u32] {
        &self.by_body[j]
    }

    /// Retained `(environment index, body index)` pairs.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.by_body.iter().enumerate().flat_map(|(j, is)| is.iter().map(move |&i| (i as usize, j)))
    }
}

fn body_eig_ranges(robot: &RobotModel) -> Vec<[f64; 2]> {
    robot
        .bodies
        .iter()
        .map(|b| {
            let v = linalg::sym_eigen(&b.cov).0;
            [v[0], v[2]]
        })
        .collect()
}

/// Retains every pair whose center distance, minimized over `poses`, is at
/// most `cutoff · sqrt(λmax(Σᵢ) + λmax(Σ̄ⱼ))`. In addition, at each pose every
/// pair is kept whose term may exceed `exp(−cutoff²/2)` times the largest
/// term there, so poses in sparse parts of the scene still get a set that is
/// accurate relative to their (tiny) collision value. The relative rule only
/// applies while the posed body lies within the scene bounds grown by its
/// absolute radius; beyond that the set holds the absolute pairs alone.
pub fn build_cull_set(scene: &SplatScene, robot: &RobotModel, poses: &[Pose], cutoff: f64) -> Result<CullSet> {
    cull(scene, robot, poses, cutoff, 0.0, true)
}

/// The absolute-radius part of [`build_cull_set`], with the distance test
/// relaxed by `margin` meters so the set stays valid while poses move by less
/// than `margin`.
pub fn build_cull_set_with_margin(
    scene: &SplatScene,
    robot: &RobotModel,
    poses: &[Pose],
    cutoff: f64,
    margin: f64,
) -> Result<CullSet> {
    cull(scene, robot, poses, cutoff, margin, false)
}

fn cull(
    scene: &SplatScene,
    robot: &RobotModel,
    poses: &[Pose],
    cutoff: f64,
    margin: f64,
    relative: bool,
) -> Result<CullSet> {
    if !(cutoff >= 3.0) {
        return Err(Error::Parameter(alloc::format!("cutoff {cutoff} must be >= 3")));
    }
    if !cutoff.is_finite() {
        return Ok(CullSet::full(scene, robot));
    }
    let n = scene.len();
    let eig_env = scene.max_eigenvalues();
    let eig_env_max = scene.largest_eigenvalue();
    let eig_body = body_eig_ranges(robot);
    let words = n.div_ceil(64);
    let mut by_body = Vec::with_capacity(robot.len());
    for (j, body) in robot.bodies.iter().enumerate() {
        let mut mark = vec![0u64; words];
        let radius = cutoff * libm::sqrt(eig_env_max + eig_body[j][1]) + margin;
        for pose in poses {
            let rot = linalg::rot_z(pose.yaw);
            let c = linalg::add(pose.position, linalg::mat_vec(&rot, body.offset));
            scene.index().for_each_near(c, radius, |i| {
                let limit = cutoff * libm::sqrt(eig_env[i] + eig_body[j][1]) + margin;
                let d = linalg::sub(scene.gaussians()[i].mean, c);
                if linalg::dot(d, d) <= limit * limit {
                    mark[i / 64] |= 1 << (i % 64);
                }
            });
            if relative && near_bounds(scene, c, radius) {
                mark_relative(scene, body.weight, eig_body[j], c, cutoff, radius, &mut mark);
            }
        }
        let mut kept = Vec::new();
        for (w, &bits) in mark.iter().enumerate() {
            let mut b = bits;
            while b != 0 {
                let t = b.trailing_zeros() as usize;
                kept.push((w * 64 + t) as u32);
                b &= b - 1;
            }
        }
        by_body.push(kept);
    }
    Ok(CullSet { by_body, cutoff })
}

fn near_bounds(scene: &SplatScene, c: Vec3, radius: f64) -> bool {
    let b = scene.bounds();
    (0..3).all(|a| c[a] >= b.min[a] - radius && c[a] <= b.max[a] + radius)
}

/// Marks the pairs of one posed body whose term may be within
/// `exp(−cutoff²/2)` of the largest term. Uses
/// `λmin(Σᵢ)+λmin(Σ̄) ≤ eig(Σᵢ+Σ̄) ≤ λmax(Σᵢ)+λmax(Σ̄)` to bound every term
/// from above and below in log space.
fn mark_relative(
    scene: &SplatScene,
    weight: f64,
    body_eig: [f64; 2],
    c: Vec3,
    cutoff: f64,
    start_radius: f64,
    mark: &mut [u64],
) {
    const SAFE: f64 = 1e-9;
    let env = scene.gaussians();
    let (lo_env, hi_env) = (scene.min_eigenvalues(), scene.max_eigenvalues());
    let (lo_b, hi_b) = (body_eig[0] * (1.0 - SAFE), body_eig[1] * (1.0 + SAFE));
    if !(weight > 0.0) {
        return;
    }
    let base = libm::log(NORMALIZATION * weight);
    let log_lower = |i: usize, d2: f64| {
        let (lo, hi) = (lo_env[i] * (1.0 - SAFE) + lo_b, hi_env[i] * (1.0 + SAFE) + hi_b);
        libm::log(env[i].weight) + base - 1.5 * libm::log(hi) - 0.5 * d2 / lo
    };
    let log_upper = |i: usize, d2: f64| {
        let (lo, hi) = (lo_env[i] * (1.0 - SAFE) + lo_b, hi_env[i] * (1.0 + SAFE) + hi_b);
        libm::log(env[i].weight) + base - 1.5 * libm::log(lo) - 0.5 * d2 / hi
    };
    let dist2 = |i: usize| {
        let d = linalg::sub(env[i].mean, c);
        linalg::dot(d, d)
    };

    // A lower bound on the largest term, from the nearest populated shell.
    let b = scene.bounds();
    let far: f64 = (0..3)
        .map(|a| {
            let e = libm::fabs(c[a] - b.min[a]).max(libm::fabs(c[a] - b.max[a]));
            e * e
        })
        .sum::<f64>();
    let far = libm::sqrt(far);
    let mut r = start_radius.max(scene.index().cell_size());
    let mut best = f64::NEG_INFINITY;
    loop {
        scene.index().for_each_near(c, r, |i| best = best.max(log_lower(i, dist2(i))));
        if best > f64::NEG_INFINITY || r > far {
            break;
        }
        r *= 2.0;
    }
    if best == f64::NEG_INFINITY {
        return;
    }
    let threshold = best - 0.5 * cutoff * cutoff;
    let w_max = env.iter().map(|g| g.weight).fold(0.0, f64::max);
    let lo_min = lo_env.iter().copied().fold(f64::INFINITY, f64::min) * (1.0 - SAFE) + lo_b;
    let hi_max = scene.largest_eigenvalue() * (1.0 + SAFE) + hi_b;
    let slack = libm::log(w_max) + base - 1.5 * libm::log(lo_min) - threshold;
    if slack <= 0.0 {
        return;
    }
    let reach = libm::sqrt(2.0 * hi_max * slack);
    scene.index().for_each_near(c, reach, |i| {
        if log_upper(i, dist2(i)) >= threshold {
            mark[i / 64] |= 1 << (i % 64);
        }
    });
}

/// Sum of pair overlaps between the scene and a set of world-frame robot
/// Gaussians, over all pairs or the culled subset.
pub fn collision_measure(scene: &SplatScene, robot_gaussians: &[Gaussian3], cull: Option<&CullSet>) -> Result<f64> {
    if robot_gaussians.is_empty() {
        return Err(Error::EmptyRobot);
    }
    let env = scene.gaussians();
    let mut acc = TreeSum::<1>::default();
    for (j, rob) in robot_gaussians.iter().enumerate() {
        match cull {
            Some(c) => {
                for &i in c.env_indices(j) {
                    acc.push([pair_overlap(&env[i as usize], rob)?]);
                }
            }
            None => {
                for e in env {
                    acc.push([pair_overlap(e, rob)?]);
                }
            }
        }
    }
    Ok(acc.finish()[0])
}

/// A robot body placed at a pose, with the yaw derivatives needed for the
/// gradient.
#[derive(Clone, Copy, Debug)]
struct PosedBody {
    mean: Vec3,
    cov: Mat3,
    weight: f64,
    /// ∂mean/∂ψ
    dmean: Vec3,
    /// R'·Σ_body·Rᵀ; ∂Σ̄/∂ψ is this plus its transpose.
    /// dΣ̄/dψ, symmetric.
    dcov: Mat3,
}

fn pose_bodies(robot: &RobotModel, pose: &Pose) -> Vec<PosedBody> {
    let rot = linalg::rot_z(pose.yaw);
    let drot = linalg::rot_z_derivative(pose.yaw);
    let rot_t = linalg::transpose(&rot);
    robot
        .bodies
        .iter()
        .map(|b| PosedBody {
            mean: linalg::add(pose.position, linalg::mat_vec(&rot, b.offset)),
            cov: splat::rotate_cov(&rot, &b.cov),
            weight: b.weight,
            dmean: linalg::mat_vec(&drot, b.offset),
            dcov: if splat::yaw_invariant(&b.cov) {
                [[0.0; 3]; 3]
            } else {
                let a = linalg::mat_mul(&linalg::mat_mul(&drot, &b.cov), &rot_t);
                linalg::mat_add(&a, &linalg::transpose(&a))
            },
        })
        .collect()
}

/// Value and (x, y, z, ψ) gradient of one pair term.
#[inline]
fn pair_term_with_grad(env: &Gaussian3, body: &PosedBody) -> Result<[f64; 5]> {
    let s = linalg::mat_add(&env.cov, &body.cov);
    let (det, inv) = linalg::sym_det_inverse(&s).ok_or(Error::Singular)?;
    let d = linalg::sub(body.mean, env.mean);
    let u = linalg::mat_vec(&inv, d);
    let q = linalg::dot(d, u);
    let value = env.weight * body.weight * NORMALIZATION / libm::sqrt(det) * libm::exp(-0.5 * q);
    let gp = linalg::scale(u, -value);
    // ½·tr((u uᵀ − S⁻¹)·dΣ̄/dψ)
    let a = &body.dcov;
    let mut tr = 0.0;
    for r in 0..3 {
        for c in 0..3 {
            tr += (u[r] * u[c] - inv[r][c]) * a[c][r];
        }
    }
    let gyaw = linalg::dot(gp, body.dmean) + 0.5 * value * tr;
    Ok([value, gp[0], gp[1], gp[2], gyaw])
}

/// Collision value and gradient with respect to the pose.
pub fn collision_gradient(
    scene: &SplatScene,
    robot: &RobotModel,
    pose: &Pose,
    cull: Option<&CullSet>,
) -> Result<CollisionEval> {
    let bodies = pose_bodies(robot, pose);
    let env = scene.gaussians();
    let mut acc = TreeSum::<5>::default();
    for (j, body) in bodies.iter().enumerate() {
        match cull {
            Some(c) => {
                for &i in c.env_indices(j) {
                    acc.push(pair_term_with_grad(&env[i as usize], body)?);
                }
            }
            None => {
                for e in env {
                    acc.push(pair_term_with_grad(e, body)?);
                }
            }
        }
    }
    let s = acc.finish();
    Ok(CollisionEval { value: s[0], grad: [s[1], s[2], s[3], s[4]] })
}

/// Evaluates independent tasks, possibly in parallel. Implementations must
/// return results in task order.
pub trait BatchExecutor: Sync {
    fn run(&self, count: usize, task: &(dyn Fn(usize) -> Result<CollisionEval> + Sync)) -> Vec<Result<CollisionEval>>;
}

/// In-thread executor.
#[derive(Clone, Copy, Debug, Default)]
pub struct Serial;

impl BatchExecutor for Serial {
    fn run(&self, count: usize, task: &(dyn Fn(usize) -> Result<CollisionEval> + Sync)) -> Vec<Result<CollisionEval>> {
        (0..count).map(task).collect()
    }
}

/// [`collision_gradient`] at every pose with one shared cull set. Each pose is
/// reduced in a fixed order, so results do not depend on the executor.
pub fn batch_collision(
    scene: &SplatScene,
    robot: &RobotModel,
    poses: &[Pose],
    cull: Option<&CullSet>,
    exec: &dyn BatchExecutor,
) -> Result<Vec<CollisionEval>> {
    if poses.is_empty() {
        return Err(Error::Parameter(alloc::string::String::from("empty pose list")));
    }
    exec.run(poses.len(), &|k| collision_gradient(scene, robot, &poses[k], cull)).into_iter().collect()
}

/// [`collision_gradient`] at every pose, each with its own cull set.
pub fn batch_collision_per_pose(
    scene: &SplatScene,
    robot: &RobotModel,
    poses: &[Pose],
    culls: &[CullSet],
    exec: &dyn BatchExecutor,
) -> Result<Vec<CollisionEval>> {
    if poses.is_empty() || poses.len() != culls.len() {
        return Err(Error::Parameter(alloc::format!("{} poses with {} cull sets", poses.len(), culls.len())));
    }
    exec.run(poses.len(), &|k| collision_gradient(scene, robot, &poses[k], Some(&culls[k]))).into_iter().collect()
}

/// Collision value at a pose, evaluated through [`collision_measure`].
pub fn collision_at_pose(scene: &SplatScene, robot: &RobotModel, pose: &Pose, cull: Option<&CullSet>) -> Result<f64> {
    collision_measure(scene, &robot_gaussians_at_pose(robot, pose), cull)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::diag;
    use crate::splat::RobotBody;

    #[test]
    fn normalization_constant() {
        let c = libm::pow(2.0 * core::f64::consts::PI, -1.5);
        assert!((NORMALIZATION - c).abs() < 1e-17);
    }

    #[test]
    fn zero_separation_closed_form() {
        let a = Gaussian3::isotropic([0.0; 3], 1.0).unwrap();
        let v = pair_overlap(&a, &a).unwrap();
        let expect = NORMALIZATION / (2.0 * libm::sqrt(2.0));
        assert!((v - expect).abs() < 1e-16);
    }

    #[test]
    fn far_separation_decays() {
        let a = Gaussian3::new([0.0; 3], diag([0.1, 0.2, 0.3]), 1.0).unwrap();
        let peak = pair_overlap(&a, &a).unwrap();
        let sigma = libm::sqrt(0.6);
        let b = Gaussian3 { mean: [10.0 * sigma, 0.0, 0.0], ..a };
        assert!(pair_overlap(&a, &b).unwrap() < 1e-10 * peak);
    }

    #[test]
    fn symmetric_exactly() {
        let a = Gaussian3::new([0.1, -0.3, 0.2], [[0.2, 0.05, 0.0], [0.05, 0.1, 0.01], [0.0, 0.01, 0.3]], 0.7).unwrap();
        let b = Gaussian3::new([0.4, 0.1, -0.2], diag([0.05, 0.3, 0.1]), 1.3).unwrap();
        assert_eq!(pair_overlap(&a, &b).unwrap(), pair_overlap(&b, &a).unwrap());
    }

    #[test]
    fn single_pair_measure_equals_overlap() {
        let e = Gaussian3::new([0.3, 0.0, 0.0], diag([0.01, 0.02, 0.03]), 1.0).unwrap();
        let scene = SplatScene::new(vec![e]).unwrap();
        let r = Gaussian3::isotropic([0.0; 3], 0.04).unwrap();
        assert_eq!(collision_measure(&scene, &[r], None).unwrap(), pair_overlap(&e, &r).unwrap());
    }

    #[test]
    fn mirrored_scene_has_zero_position_gradient() {
        let e1 = Gaussian3::new([0.5, 0.2, 0.1], diag([0.02, 0.03, 0.01]), 1.0).unwrap();
        let e2 = Gaussian3::new([-0.5, -0.2, -0.1], diag([0.02, 0.03, 0.01]), 1.0).unwrap();
        let scene = SplatScene::new(vec![e1, e2]).unwrap();
        let robot = RobotModel::sphere(0.04).unwrap();
        let ev = collision_gradient(&scene, &robot, &Pose::new([0.0; 3], 0.3), None).unwrap();
        for a in 0..3 {
            assert!(ev.grad[a].abs() < 1e-12, "{:?}", ev.grad);
        }
    }

    #[test]
    fn isotropic_centered_body_has_zero_yaw_gradient() {
        let e = Gaussian3::new([0.2, 0.1, 0.0], [[0.03, 0.01, 0.0], [0.01, 0.02, 0.0], [0.0, 0.0, 0.01]], 1.0).unwrap();
        let scene = SplatScene::new(vec![e]).unwrap();
        let robot = RobotModel::sphere(0.05).unwrap();
        let ev = collision_gradient(&scene, &robot, &Pose::new([0.0; 3], 1.1), None).unwrap();
        assert_eq!(ev.grad[3], 0.0);
    }

    #[test]
    fn tree_sum_is_exact_for_small_integers() {
        let v: Vec<f64> = (1..=1000).map(|i| i as f64).collect();
        assert_eq!(tree_sum(&v), 500_500.0);
        assert_eq!(tree_sum(&[]), 0.0);
    }

    #[test]
    fn cull_extremes() {
        let gs: Vec<Gaussian3> =
            (0..50).map(|i| Gaussian3::isotropic([i as f64 * 0.1, 0.0, 0.0], 0.001).unwrap()).collect();
        let scene = SplatScene::new(gs).unwrap();
        let robot = RobotModel::new(
            "two",
            vec![
                RobotBody { offset: [0.1, 0.0, 0.0], cov: diag([0.01; 3]), weight: 1.0 },
                RobotBody { offset: [-0.1, 0.0, 0.0], cov: diag([0.01; 3]), weight: 1.0 },
            ],
        )
        .unwrap();
        let pose = [Pose::new([2.0, 0.0, 0.0], 0.0)];
        let all = build_cull_set(&scene, &robot, &pose, f64::INFINITY).unwrap();
        assert_eq!(all.len(), 100);
        let far = [Pose::new([100.0, 100.0, 0.0], 0.0)];
        assert!(build_cull_set(&scene, &robot, &far, 6.0).unwrap().is_empty());
        assert!(build_cull_set(&scene, &robot, &pose, 2.0).is_err());
    }
}
