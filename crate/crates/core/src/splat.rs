//! Gaussian, scene and robot types.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{Error, Result};
use crate::linalg::{self, Mat3, Vec3};

/// Eigenvalue floor applied to every covariance (m²).
pub const COVARIANCE_FLOOR: f64 = 1e-8;

/// One anisotropic 3D Gaussian.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gaussian3 {
    pub mean: Vec3,
    pub cov: Mat3,
    pub weight: f64,
}

impl Gaussian3 {
    /// Validates and regularizes a Gaussian: the covariance is symmetrized and
    /// eigenvalues below [`COVARIANCE_FLOOR`] are raised to it. Covariances with
    /// a clearly negative eigenvalue are rejected.
    pub fn new(mean: Vec3, cov: Mat3, weight: f64) -> Result<Self> {
        if !mean.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidGaussian(format!("non-finite mean {mean:?}")));
        }
        if !(weight >= 0.0) || !weight.is_finite() {
            return Err(Error::InvalidGaussian(format!("weight {weight} must be finite and >= 0")));
        }
        if !cov.iter().flatten().all(|v| v.is_finite()) {
            return Err(Error::InvalidGaussian(String::from("non-finite covariance")));
        }
        let sym = linalg::symmetrize(&cov);
        let (vals, vecs) = linalg::sym_eigen(&sym);
        let tol = 1e-12 * libm::fabs(vals[2]).max(1.0);
        if vals[0] < -tol {
            return Err(Error::NotSpd(format!("eigenvalues {vals:?}")));
        }
        let cov = if vals[0] < COVARIANCE_FLOOR {
            let clamped = vals.map(|v| v.max(COVARIANCE_FLOOR));
            linalg::from_eigen(clamped, &vecs)
        } else {
            sym
        };
        Ok(Self { mean, cov, weight })
    }

    /// Unit-weight isotropic Gaussian.
    pub fn isotropic(mean: Vec3, variance: f64) -> Result<Self> {
        Self::new(mean, linalg::diag([variance; 3]), 1.0)
    }

    pub fn max_eigenvalue(&self) -> f64 {
        linalg::sym_eigen(&self.cov).0[2]
    }

    /// Smallest and largest covariance eigenvalue.
    pub fn eigenvalue_range(&self) -> [f64; 2] {
        let v = linalg::sym_eigen(&self.cov).0;
        [v[0], v[2]]
    }
}

/// Robot base pose: position plus yaw about the world z-axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub position: Vec3,
    pub yaw: f64,
}

/// Wrap an angle to (−π, π].
pub fn normalize_angle(a: f64) -> f64 {
    let mut r = libm::fmod(a, 2.0 * PI);
    if r <= -PI {
        r += 2.0 * PI;
    } else if r > PI {
        r -= 2.0 * PI;
    }
    r
}

impl Pose {
    pub fn new(position: Vec3, yaw: f64) -> Self {
        Self { position, yaw: normalize_angle(yaw) }
    }

    /// Pose without yaw normalization; used for spline samples whose yaw is
    /// an unwrapped real number.
    pub fn unwrapped(position: Vec3, yaw: f64) -> Self {
        Self { position, yaw }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.position[0], self.position[1], self.position[2], self.yaw]
    }

    pub fn from_array(x: [f64; 4]) -> Self {
        Self::unwrapped([x[0], x[1], x[2]], x[3])
    }
}

/// A rigid body Gaussian expressed in the robot frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RobotBody {
    pub offset: Vec3,
    pub cov: Mat3,
    pub weight: f64,
}

/// Robot modeled as `M` body-frame Gaussians.
#[derive(Clone, Debug, PartialEq)]
pub struct RobotModel {
    pub name: String,
    pub bodies: Vec<RobotBody>,
}

impl RobotModel {
    /// Validates that there is at least one body and every covariance is SPD.
    pub fn new(name: impl Into<String>, bodies: Vec<RobotBody>) -> Result<Self> {
        if bodies.is_empty() {
            return Err(Error::EmptyRobot);
        }
        let mut checked = Vec::with_capacity(bodies.len());
        for (j, b) in bodies.into_iter().enumerate() {
            let asym = (0..3)
                .flat_map(|r| (0..3).map(move |c| (r, c)))
                .map(|(r, c)| libm::fabs(b.cov[r][c] - b.cov[c][r]))
                .fold(0.0, f64::max);
            let scale = b.cov.iter().flatten().map(|v| libm::fabs(*v)).fold(0.0, f64::max);
            if asym > 1e-12 * scale.max(1e-300) {
                return Err(Error::NotSpd(format!("body {j}: covariance is not symmetric")));
            }
            if linalg::cholesky3(&b.cov).is_none() {
                return Err(Error::NotSpd(format!("body {j}: covariance {:?}", b.cov)));
            }
            if !b.offset.iter().all(|v| v.is_finite()) || !(b.weight >= 0.0) {
                return Err(Error::InvalidGaussian(format!("body {j}: bad offset or weight")));
            }
            let g = Gaussian3::new(b.offset, b.cov, b.weight)?;
            checked.push(RobotBody { offset: b.offset, cov: g.cov, weight: b.weight });
        }
        Ok(Self { name: name.into(), bodies: checked })
    }

    /// The 3-body legged-robot model: front, middle and rear Gaussians spaced
    /// 0.35 m along the body x-axis.
    pub fn anymal() -> Self {
        let cov = linalg::diag([0.028, 0.016, 0.016]);
        let bodies =
            [0.35, 0.0, -0.35].iter().map(|&x| RobotBody { offset: [x, 0.0, 0.0], cov, weight: 1.0 }).collect();
        Self::new("anymal", bodies).expect("static model is valid")
    }

    /// Single isotropic body at the origin.
    pub fn sphere(variance: f64) -> Result<Self> {
        Self::new("sphere", vec![RobotBody { offset: [0.0; 3], cov: linalg::diag([variance; 3]), weight: 1.0 }])
    }

    pub fn len(&self) -> usize {
        self.bodies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bodies.is_empty()
    }

    /// Radius of the smallest origin-centred sphere containing every body's
    /// `k`-sigma ellipsoid.
    pub fn bounding_radius(&self, k: f64) -> f64 {
        self.bodies
            .iter()
            .map(|b| linalg::norm(b.offset) + k * libm::sqrt(linalg::sym_eigen(&b.cov).0[2]))
            .fold(0.0, f64::max)
    }
}

/// True when rotating `cov` about the z-axis leaves it unchanged.
pub fn yaw_invariant(cov: &Mat3) -> bool {
    cov[0][0] == cov[1][1] && cov[0][1] == 0.0 && cov[0][2] == 0.0 && cov[1][2] == 0.0
}

/// Body covariance rotated by `rot`.
pub fn rotate_cov(rot: &Mat3, cov: &Mat3) -> Mat3 {
    if yaw_invariant(cov) {
        *cov
    } else {
        linalg::symmetrize(&linalg::congruence(rot, cov))
    }
}

/// World-frame Gaussians of the robot at `pose`.
pub fn robot_gaussians_at_pose(robot: &RobotModel, pose: &Pose) -> Vec<Gaussian3> {
    let rot = linalg::rot_z(pose.yaw);
    robot
        .bodies
        .iter()
        .map(|b| Gaussian3 {
            mean: linalg::add(pose.position, linalg::mat_vec(&rot, b.offset)),
            cov: rotate_cov(&rot, &b.cov),
            weight: b.weight,
        })
        .collect()
}

/// Axis-aligned box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn contains(&self, p: Vec3) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }

    pub fn around(points: impl IntoIterator<Item = Vec3>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = it.next()?;
        let mut b = Aabb { min: first, max: first };
        for p in it {
            b.expand(p);
        }
        Some(b)
    }

    pub fn expand(&mut self, p: Vec3) {
        for a in 0..3 {
            self.min[a] = self.min[a].min(p[a]);
            self.max[a] = self.max[a].max(p[a]);
        }
    }

    pub fn extent(&self) -> Vec3 {
        linalg::sub(self.max, self.min)
    }
}

/// Uniform-grid buckets over the Gaussian means, stored in CSR form.
#[derive(Clone, Debug)]
pub struct SpatialIndex {
    origin: Vec3,
    cell: f64,
    dims: [usize; 3],
    starts: Vec<u32>,
    items: Vec<u32>,
}

/// Upper bound on index cells.
const MAX_INDEX_CELLS: usize = 1 << 21;

impl SpatialIndex {
    fn build(means: &[Vec3], bounds: &Aabb, cell_hint: f64) -> Self {
        let ext = bounds.extent();
        let mut cell = cell_hint.max(1e-6);
        let mut dims;
        loop {
            dims = ext.map(|e| (libm::floor(e / cell) as usize + 1).max(1));
            if dims[0].saturating_mul(dims[1]).saturating_mul(dims[2]) <= MAX_INDEX_CELLS {
                break;
            }
            cell *= 1.25;
        }
        let ncells = dims[0] * dims[1] * dims[2];
        let mut counts = vec![0u32; ncells + 1];
        let cell_ids: Vec<usize> = means
            .iter()
            .map(|m| {
                let c = Self::coords(bounds.min, cell, dims, *m);
                (c[2] * dims[1] + c[1]) * dims[0] + c[0]
            })
            .collect();
        for &c in &cell_ids {
            counts[c + 1] += 1;
        }
        for i in 0..ncells {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut items = vec![0u32; means.len()];
        for (i, &c) in cell_ids.iter().enumerate() {
            items[fill[c] as usize] = i as u32;
            fill[c] += 1;
        }
        Self { origin: bounds.min, cell, dims, starts: counts, items }
    }

    fn coords(origin: Vec3, cell: f64, dims: [usize; 3], p: Vec3) -> [usize; 3] {
        let mut c = [0usize; 3];
        for a in 0..3 {
            let f = libm::floor((p[a] - origin[a]) / cell);
            c[a] = if f < 0.0 { 0 } else { (f as usize).min(dims[a] - 1) };
        }
        c
    }

    pub fn cell_size(&self) -> f64 {
        self.cell
    }

    /// Total number of indexed entries.
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Calls `visit` with every index whose mean lies in a cell overlapping the
    /// axis-aligned cube of half-width `radius` around `center`.
    pub fn for_each_near(&self, center: Vec3, radius: f64, mut visit: impl FnMut(usize)) {
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        for a in 0..3 {
            let l = libm::floor((center[a] - radius - self.origin[a]) / self.cell);
            let h = libm::floor((center[a] + radius - self.origin[a]) / self.cell);
            if h < 0.0 || l > (self.dims[a] - 1) as f64 {
                return;
            }
            lo[a] = if l < 0.0 { 0 } else { l as usize };
            hi[a] = (h as usize).min(self.dims[a] - 1);
        }
        for z in lo[2]..=hi[2] {
            for y in lo[1]..=hi[1] {
                let row = (z * self.dims[1] + y) * self.dims[0];
                let s = self.starts[row + lo[0]] as usize;
                let e = self.starts[row + hi[0] + 1] as usize;
                for &i in &self.items[s..e] {
                    visit(i as usize);
                }
            }
        }
    }
}

/// Immutable environment of `N` Gaussians with a spatial index.
#[derive(Clone, Debug)]
pub struct SplatScene {
    gaussians: Vec<Gaussian3>,
    min_eig: Vec<f64>,
    max_eig: Vec<f64>,
    bounds: Aabb,
    index: SpatialIndex,
}

impl SplatScene {
    /// Builds a scene whose bounds are the box around the means.
    pub fn new(gaussians: Vec<Gaussian3>) -> Result<Self> {
        let bounds = Aabb::around(gaussians.iter().map(|g| g.mean)).ok_or(Error::EmptyScene)?;
        Self::with_bounds(gaussians, bounds)
    }

    /// Builds a scene with explicit bounds, which must contain every mean.
    pub fn with_bounds(gaussians: Vec<Gaussian3>, bounds: Aabb) -> Result<Self> {
        if gaussians.is_empty() {
            return Err(Error::EmptyScene);
        }
        if let Some(g) = gaussians.iter().find(|g| !bounds.contains(g.mean)) {
            return Err(Error::Parameter(format!("mean {:?} outside scene bounds", g.mean)));
        }
        let (min_eig, max_eig): (Vec<f64>, Vec<f64>) =
            gaussians.iter().map(|g| g.eigenvalue_range()).map(|[a, b]| (a, b)).unzip();
        let mut sigmas: Vec<f64> = max_eig.iter().map(|&l| libm::sqrt(l)).collect();
        sigmas.sort_by(|a, b| a.partial_cmp(b).unwrap_or(core::cmp::Ordering::Equal));
        let median_sigma = sigmas[sigmas.len() / 2];
        let ext = bounds.extent();
        let volume = ext.iter().map(|e| e.max(1e-3)).product::<f64>();
        let occupancy_cell = libm::cbrt(volume / gaussians.len() as f64);
        let cell = (3.0 * median_sigma).max(occupancy_cell);
        let means: Vec<Vec3> = gaussians.iter().map(|g| g.mean).collect();
        let index = SpatialIndex::build(&means, &bounds, cell);
        Ok(Self { gaussians, min_eig, max_eig, bounds, index })
    }

    pub fn gaussians(&self) -> &[Gaussian3] {
        &self.gaussians
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn bounds(&self) -> &Aabb {
        &self.bounds
    }

    pub fn index(&self) -> &SpatialIndex {
        &self.index
    }

    /// Largest covariance eigenvalue of every Gaussian, in scene order.
    pub fn max_eigenvalues(&self) -> &[f64] {
        &self.max_eig
    }

    /// Smallest covariance eigenvalue of every Gaussian, in scene order.
    pub fn min_eigenvalues(&self) -> &[f64] {
        &self.min_eig
    }

    pub fn largest_eigenvalue(&self) -> f64 {
        self.max_eig.iter().copied().fold(0.0, f64::max)
    }

    /// Translated copy of the scene.
    pub fn translated(&self, by: Vec3) -> Result<Self> {
        let g = self.gaussians.iter().map(|g| Gaussian3 { mean: linalg::add(g.mean, by), ..*g }).collect();
        let b = Aabb { min: linalg::add(self.bounds.min, by), max: linalg::add(self.bounds.max, by) };
        Self::with_bounds(g, b)
    }
}

/// A raw splat record as stored in the standard splat PLY layout.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplatRecord {
    pub position: Vec3,
    pub log_scale: Vec3,
    /// Quaternion, w first; normalized on conversion.
    pub rotation: [f64; 4],
    pub opacity_logit: f64,
}

/// How splat opacity is turned into Gaussian weight.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OpacityPolicy {
    /// Records with `sigmoid(opacity_logit)` below this are dropped.
    pub threshold: f64,
    /// Carry the opacity as the Gaussian weight instead of 1.
    pub opacity_as_weight: bool,
}

impl Default for OpacityPolicy {
    fn default() -> Self {
        Self { threshold: 0.3, opacity_as_weight: false }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-x))
}

/// Covariance `R · diag(exp(2·log_scale)) · Rᵀ` from a splat record.
pub fn covariance_from_splat(log_scale: Vec3, rotation: [f64; 4]) -> Result<Mat3> {
    let rot = linalg::quat_to_rotation(rotation)
        .ok_or_else(|| Error::InvalidGaussian(String::from("zero rotation quaternion")))?;
    let d = log_scale.map(|s| libm::exp(2.0 * s));
    Ok(linalg::symmetrize(&linalg::congruence(&rot, &linalg::diag(d))))
}

impl SplatRecord {
    pub fn to_gaussian(&self, weight: f64) -> Result<Gaussian3> {
        Gaussian3::new(self.position, covariance_from_splat(self.log_scale, self.rotation)?, weight)
    }
}

/// Converts raw splat records into a scene, applying the opacity policy.
pub fn scene_from_records(records: &[SplatRecord], policy: OpacityPolicy) -> Result<SplatScene> {
    if !(0.0..=1.0).contains(&policy.threshold) {
        return Err(Error::Parameter(format!("opacity threshold {} not in [0,1]", policy.threshold)));
    }
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        let alpha = sigmoid(r.opacity_logit);
        if alpha < policy.threshold {
            continue;
        }
        let w = if policy.opacity_as_weight { alpha } else { 1.0 };
        out.push(r.to_gaussian(w)?);
    }
    SplatScene::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(opacity: f64) -> SplatRecord {
        let logit = libm::log(opacity / (1.0 - opacity));
        SplatRecord {
            position: [0.0, 0.0, 0.0],
            log_scale: [0.0; 3],
            rotation: [1.0, 0.0, 0.0, 0.0],
            opacity_logit: logit,
        }
    }

    #[test]
    fn opacity_filtering() {
        let policy = OpacityPolicy { threshold: 0.5, opacity_as_weight: false };
        let all = [rec(0.99), rec(0.99), rec(0.99)];
        assert_eq!(scene_from_records(&all, policy).unwrap().len(), 3);
        let some = [rec(0.99), rec(0.01), rec(0.99)];
        assert_eq!(scene_from_records(&some, policy).unwrap().len(), 2);
        let none = [rec(0.01)];
        assert_eq!(scene_from_records(&none, policy).unwrap_err(), Error::EmptyScene);
    }

    #[test]
    fn opacity_as_weight() {
        let policy = OpacityPolicy { threshold: 0.5, opacity_as_weight: true };
        let s = scene_from_records(&[rec(0.8)], policy).unwrap();
        assert!((s.gaussians()[0].weight - 0.8).abs() < 1e-12);
    }

    #[test]
    fn unit_scale_identity_rotation_is_identity() {
        let c = covariance_from_splat([0.0; 3], [1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(c, linalg::IDENTITY);
    }

    #[test]
    fn covariance_floor_applies() {
        let g = Gaussian3::new([0.0; 3], linalg::diag([1.0, 1.0, 0.0]), 1.0).unwrap();
        let (vals, _) = linalg::sym_eigen(&g.cov);
        assert!((vals[0] - COVARIANCE_FLOOR).abs() < 1e-15);
        assert!(Gaussian3::new([0.0; 3], linalg::diag([1.0, 1.0, -1.0]), 1.0).is_err());
        assert!(Gaussian3::new([0.0; 3], linalg::IDENTITY, -1.0).is_err());
    }

    #[test]
    fn pose_examples() {
        let robot = RobotModel::anymal();
        let g = robot_gaussians_at_pose(&robot, &Pose::new([1.0, 2.0, 3.0], 0.0));
        assert_eq!(g[0].mean, [1.35, 2.0, 3.0]);
        assert_eq!(g[0].cov, robot.bodies[0].cov);

        let g = robot_gaussians_at_pose(&robot, &Pose::new([0.0; 3], PI / 2.0));
        assert!(g[0].mean[0].abs() < 1e-15 && (g[0].mean[1] - 0.35).abs() < 1e-15);

        let g = robot_gaussians_at_pose(&robot, &Pose::new([0.0; 3], PI));
        for r in 0..3 {
            for c in 0..3 {
                assert!((g[1].cov[r][c] - robot.bodies[1].cov[r][c]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn robot_validation() {
        let bad = RobotBody { offset: [0.0; 3], cov: linalg::diag([1.0, 1.0, -1.0]), weight: 1.0 };
        assert!(matches!(RobotModel::new("x", vec![bad]), Err(Error::NotSpd(_))));
        assert_eq!(RobotModel::new("x", vec![]).unwrap_err(), Error::EmptyRobot);
        assert_eq!(RobotModel::sphere(0.04).unwrap().len(), 1);
    }

    #[test]
    fn yaw_normalization() {
        assert!((Pose::new([0.0; 3], 3.0 * PI).yaw - PI).abs() < 1e-12);
        assert!((Pose::new([0.0; 3], -PI).yaw - PI).abs() < 1e-12);
        assert!((Pose::new([0.0; 3], 0.5).yaw - 0.5).abs() < 1e-15);
    }

    #[test]
    fn spatial_index_covers_each_once() {
        let gs: Vec<Gaussian3> = (0..200)
            .map(|i| {
                let f = i as f64;
                Gaussian3::isotropic([libm::sin(f) * 3.0, libm::cos(f * 0.7) * 2.0, (f * 0.01)], 0.01).unwrap()
            })
            .collect();
        let s = SplatScene::new(gs).unwrap();
        let mut seen = vec![0u32; s.len()];
        s.index().for_each_near([0.0, 0.0, 1.0], 100.0, |i| seen[i] += 1);
        assert!(seen.iter().all(|&c| c == 1));
    }
}
