//! Initial guess: occupancy grid over splat means, A*, and a spline fit with
//! a tangent-following yaw profile.

use alloc::collections::BinaryHeap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::{Ordering, Reverse};

use crate::bspline::{self, Point4, TrajectorySpline};
use crate::error::{Error, Result};
use crate::linalg::Vec3;
use crate::splat::{Aabb, Pose, SplatScene};

/// Default cap on grid voxels.
pub const DEFAULT_VOXEL_CAP: u64 = 100_000_000;

/// Dense 3D occupancy bitmap.
#[derive(Clone, Debug, PartialEq)]
pub struct OccupancyGrid {
    pub origin: Vec3,
    pub voxel_size: f64,
    pub dims: [usize; 3],
    occupied: Vec<u64>,
}

impl OccupancyGrid {
    /// Empty grid.
    pub fn new(origin: Vec3, voxel_size: f64, dims: [usize; 3]) -> Self {
        let n = dims[0] * dims[1] * dims[2];
        Self { origin, voxel_size, dims, occupied: vec![0; n.div_ceil(64)] }
    }

    pub fn voxel_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    #[inline]
    pub fn linear(&self, v: [usize; 3]) -> usize {
        (v[2] * self.dims[1] + v[1]) * self.dims[0] + v[0]
    }

    #[inline]
    pub fn unlinear(&self, i: usize) -> [usize; 3] {
        let x = i % self.dims[0];
        let y = (i / self.dims[0]) % self.dims[1];
        let z = i / (self.dims[0] * self.dims[1]);
        [x, y, z]
    }

    /// Voxel containing `p`, if inside the grid.
    pub fn voxel_of(&self, p: Vec3) -> Option<[usize; 3]> {
        let mut v = [0usize; 3];
        for a in 0..3 {
            let f = libm::floor((p[a] - self.origin[a]) / self.voxel_size);
            if f < 0.0 || f >= self.dims[a] as f64 {
                return None;
            }
            v[a] = f as usize;
        }
        Some(v)
    }

    pub fn center(&self, v: [usize; 3]) -> Vec3 {
        core::array::from_fn(|a| self.origin[a] + (v[a] as f64 + 0.5) * self.voxel_size)
    }

    #[inline]
    pub fn is_occupied(&self, v: [usize; 3]) -> bool {
        let i = self.linear(v);
        self.occupied[i / 64] & (1 << (i % 64)) != 0
    }

    pub fn set_occupied(&mut self, v: [usize; 3]) {
        let i = self.linear(v);
        self.occupied[i / 64] |= 1 << (i % 64);
    }

    /// Occupancy at a world point; points outside the grid are free.
    pub fn occupied_at(&self, p: Vec3) -> bool {
        self.voxel_of(p).is_some_and(|v| self.is_occupied(v))
    }

    pub fn occupied_count(&self) -> usize {
        self.occupied.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Run-length encoding of the occupancy in linear order, starting with a
    /// run of free voxels (possibly empty).
    pub fn run_lengths(&self) -> Vec<usize> {
        let mut runs = Vec::new();
        let mut state = false;
        let mut len = 0usize;
        for i in 0..self.voxel_count() {
            let occ = self.occupied[i / 64] & (1 << (i % 64)) != 0;
            if occ != state {
                runs.push(len);
                state = occ;
                len = 0;
            }
            len += 1;
        }
        runs.push(len);
        runs
    }

    /// Morphological dilation by a Euclidean ball of `radius` voxels.
    pub fn dilate(&self, radius: usize) -> Self {
        if radius == 0 {
            return self.clone();
        }
        let r = radius as isize;
        let mut offsets = Vec::new();
        for dz in -r..=r {
            for dy in -r..=r {
                for dx in -r..=r {
                    if dx * dx + dy * dy + dz * dz <= r * r {
                        offsets.push([dx, dy, dz]);
                    }
                }
            }
        }
        let mut out = Self::new(self.origin, self.voxel_size, self.dims);
        for i in 0..self.voxel_count() {
            if self.occupied[i / 64] & (1 << (i % 64)) == 0 {
                continue;
            }
            let v = self.unlinear(i);
            for o in &offsets {
                if let Some(n) = self.offset(v, *o) {
                    out.set_occupied(n);
                }
            }
        }
        out
    }

    #[inline]
    fn offset(&self, v: [usize; 3], o: [isize; 3]) -> Option<[usize; 3]> {
        let mut n = [0usize; 3];
        for a in 0..3 {
            let c = v[a] as isize + o[a];
            if c < 0 || c >= self.dims[a] as isize {
                return None;
            }
            n[a] = c as usize;
        }
        Some(n)
    }
}

/// Occupancy grid over the scene bounds padded by one voxel; a voxel is
/// occupied iff it contains a Gaussian mean, then dilated by `inflation`
/// voxels.
pub fn voxelize(scene: &SplatScene, voxel_size: f64, inflation: usize) -> Result<OccupancyGrid> {
    voxelize_region(scene, scene.bounds(), voxel_size, inflation, DEFAULT_VOXEL_CAP)
}

/// [`voxelize`] over an explicit region (padded by one voxel).
pub fn voxelize_region(
    scene: &SplatScene,
    region: &Aabb,
    voxel_size: f64,
    inflation: usize,
    cap: u64,
) -> Result<OccupancyGrid> {
    if !(voxel_size > 0.0) || !voxel_size.is_finite() {
        return Err(Error::Parameter(format!("voxel size {voxel_size} must be > 0")));
    }
    let origin: Vec3 = core::array::from_fn(|a| region.min[a] - voxel_size);
    let dims_f: [f64; 3] = core::array::from_fn(|a| libm::floor((region.max[a] - region.min[a]) / voxel_size) + 3.0);
    let total = dims_f[0] * dims_f[1] * dims_f[2];
    if total > cap as f64 {
        return Err(Error::Resource { voxels: total as u64, cap });
    }
    let dims = dims_f.map(|d| d as usize);
    let mut grid = OccupancyGrid::new(origin, voxel_size, dims);
    for g in scene.gaussians() {
        if let Some(v) = grid.voxel_of(g.mean) {
            grid.set_occupied(v);
        }
    }
    Ok(grid.dilate(inflation))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Connectivity {
    Six,
    #[default]
    TwentySix,
}

impl TryFrom<u32> for Connectivity {
    type Error = Error;
    fn try_from(v: u32) -> Result<Self> {
        match v {
            6 => Ok(Self::Six),
            26 => Ok(Self::TwentySix),
            _ => Err(Error::Parameter(format!("connectivity {v} not in {{6, 26}}"))),
        }
    }
}

/// Grid path from start to goal.
#[derive(Clone, Debug, PartialEq)]
pub struct SeedPath {
    pub voxels: Vec<[usize; 3]>,
    /// Voxel centers, meters.
    pub waypoints: Vec<Vec3>,
    /// Path length, meters.
    pub cost: f64,
}

/// Search options beyond connectivity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SearchOptions {
    pub connectivity: Connectivity,
    /// Voxels whose center z lies outside this band are treated as blocked.
    pub z_band: Option<(f64, f64)>,
    /// Start/goal snapping radius in voxels.
    pub snap_radius: usize,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self { connectivity: Connectivity::TwentySix, z_band: None, snap_radius: 2 }
    }
}

const SQRT2: f64 = core::f64::consts::SQRT_2;
const SQRT3: f64 = 1.732_050_807_568_877_2;

/// Path length as counts of axis, face-diagonal and space-diagonal steps, so
/// equal paths get bit-identical costs regardless of step order.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StepCounts(pub [u32; 3]);

impl StepCounts {
    /// Length in voxel units.
    pub fn length(&self) -> f64 {
        self.0[0] as f64 + self.0[1] as f64 * SQRT2 + self.0[2] as f64 * SQRT3
    }

    pub fn step(&self, kind: usize) -> Self {
        let mut c = self.0;
        c[kind] += 1;
        Self(c)
    }
}

/// Neighbor offsets and their step kind (number of nonzero axes − 1).
pub fn neighbor_offsets(connectivity: Connectivity) -> Vec<([isize; 3], usize)> {
    let mut out = Vec::new();
    for dz in -1isize..=1 {
        for dy in -1isize..=1 {
            for dx in -1isize..=1 {
                let nz = (dx != 0) as usize + (dy != 0) as usize + (dz != 0) as usize;
                if nz == 0 || (connectivity == Connectivity::Six && nz > 1) {
                    continue;
                }
                out.push(([dx, dy, dz], nz - 1));
            }
        }
    }
    out
}

#[derive(Clone, Copy, PartialEq)]
struct OpenEntry {
    f: f64,
    voxel: [usize; 3],
    index: usize,
}

impl Eq for OpenEntry {}

impl Ord for OpenEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.f.total_cmp(&other.f).then_with(|| self.voxel.cmp(&other.voxel))
    }
}

impl PartialOrd for OpenEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn blocked(grid: &OccupancyGrid, v: [usize; 3], band: Option<(f64, f64)>) -> bool {
    if grid.is_occupied(v) {
        return true;
    }
    match band {
        Some((lo, hi)) => {
            let z = grid.center(v)[2];
            z < lo || z > hi
        }
        None => false,
    }
}

/// True when every point of segment `a`–`b`, sampled at quarter-voxel steps,
/// lies in a free in-bounds voxel.
pub fn segment_free(grid: &OccupancyGrid, a: Vec3, b: Vec3, band: Option<(f64, f64)>) -> bool {
    let d: Vec3 = core::array::from_fn(|k| b[k] - a[k]);
    let len = libm::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
    let steps = (libm::ceil(4.0 * len / grid.voxel_size) as usize).max(1);
    (0..=steps).all(|s| {
        let t = s as f64 / steps as f64;
        match grid.voxel_of(core::array::from_fn(|k| a[k] + t * d[k])) {
            Some(v) => !blocked(grid, v, band),
            None => false,
        }
    })
}

/// Nearest free voxel to `p` within the snapping radius; ties broken by
/// lexicographic voxel index.
fn snap(grid: &OccupancyGrid, p: Vec3, opts: &SearchOptions, which: &'static str) -> Result<[usize; 3]> {
    let err = || Error::Snap { which, x: p[0], y: p[1], z: p[2] };
    let base = grid.voxel_of(p).ok_or_else(err)?;
    if !blocked(grid, base, opts.z_band) {
        return Ok(base);
    }
    let r = opts.snap_radius as isize;
    let mut best: Option<(f64, [usize; 3])> = None;
    for dz in -r..=r {
        for dy in -r..=r {
            for dx in -r..=r {
                if dx * dx + dy * dy + dz * dz > r * r {
                    continue;
                }
                let Some(v) = grid.offset(base, [dx, dy, dz]) else { continue };
                if blocked(grid, v, opts.z_band) {
                    continue;
                }
                let c = grid.center(v);
                let d: f64 = (0..3).map(|a| (c[a] - p[a]) * (c[a] - p[a])).sum();
                let better = match best {
                    None => true,
                    Some((bd, bv)) => d < bd || (d == bd && v < bv),
                };
                if better {
                    best = Some((d, v));
                }
            }
        }
    }
    best.map(|(_, v)| v).ok_or_else(err)
}

/// A diagonal step is allowed only when every voxel of the block it spans is
/// free.
fn cuts_corner(grid: &OccupancyGrid, v: [usize; 3], o: [isize; 3], band: Option<(f64, f64)>) -> bool {
    let axes: Vec<usize> = (0..3).filter(|&a| o[a] != 0).collect();
    if axes.len() < 2 {
        return false;
    }
    // proper nonempty subsets of the moving axes
    for mask in 1..(1usize << axes.len()) - 1 {
        let mut p = [0isize; 3];
        for (bit, &a) in axes.iter().enumerate() {
            if mask & (1 << bit) != 0 {
                p[a] = o[a];
            }
        }
        match grid.offset(v, p) {
            Some(w) if !blocked(grid, w, band) => {}
            _ => return true,
        }
    }
    false
}

/// A* with 6/26 connectivity, Euclidean edge costs and heuristic; diagonal
/// steps never cut past an occupied voxel.
pub fn astar(grid: &OccupancyGrid, start: Vec3, goal: Vec3, connectivity: Connectivity) -> Result<SeedPath> {
    astar_with(grid, start, goal, &SearchOptions { connectivity, ..SearchOptions::default() })
}

/// A* with explicit search options.
pub fn astar_with(grid: &OccupancyGrid, start: Vec3, goal: Vec3, opts: &SearchOptions) -> Result<SeedPath> {
    let s = snap(grid, start, opts, "start")?;
    let g = snap(grid, goal, opts, "goal")?;
    let n = grid.voxel_count();
    let mut best: Vec<Option<StepCounts>> = vec![None; n];
    let mut parent = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let offsets = neighbor_offsets(opts.connectivity);
    let heuristic = |v: [usize; 3]| {
        let d: f64 = (0..3).map(|a| (v[a] as f64 - g[a] as f64) * (v[a] as f64 - g[a] as f64)).sum();
        libm::sqrt(d)
    };
    let si = grid.linear(s);
    let gi = grid.linear(g);
    best[si] = Some(StepCounts::default());
    let mut open = BinaryHeap::new();
    open.push(Reverse(OpenEntry { f: heuristic(s), voxel: s, index: si }));
    while let Some(Reverse(cur)) = open.pop() {
        if closed[cur.index] {
            continue;
        }
        closed[cur.index] = true;
        if cur.index == gi {
            break;
        }
        let cost = best[cur.index].expect("reached voxels have a cost");
        for &(o, kind) in &offsets {
            let Some(nv) = grid.offset(cur.voxel, o) else { continue };
            let ni = grid.linear(nv);
            if closed[ni] || blocked(grid, nv, opts.z_band) || cuts_corner(grid, cur.voxel, o, opts.z_band) {
                continue;
            }
            let cand = cost.step(kind);
            if best[ni].is_none_or(|b| cand.length() < b.length()) {
                best[ni] = Some(cand);
                parent[ni] = cur.index;
                open.push(Reverse(OpenEntry { f: cand.length() + heuristic(nv), voxel: nv, index: ni }));
            }
        }
    }
    let total = best[gi].ok_or(Error::Unreachable)?;
    let mut voxels = vec![g];
    let mut at = gi;
    while at != si {
        at = parent[at];
        voxels.push(grid.unlinear(at));
    }
    voxels.reverse();
    let waypoints = voxels.iter().map(|&v| grid.center(v)).collect();
    Ok(SeedPath { voxels, waypoints, cost: total.length() * grid.voxel_size })
}

/// Parameters of [`seed_trajectory`].
#[derive(Clone, Debug, PartialEq)]
pub struct SeedParams {
    pub voxel_size: f64,
    pub inflation: usize,
    pub connectivity: Connectivity,
    /// Trajectory height `h`.
    pub height: f64,
    /// Control point count `H`.
    pub control_points: usize,
    pub v_max: f64,
    pub omega_max: f64,
    /// A* may leave the height by at most this much; `None` searches the
    /// whole grid.
    pub max_climb: Option<f64>,
    pub snap_radius: usize,
    pub voxel_cap: u64,
    /// Path length over which start/goal yaw blend into the tangent heading.
    pub yaw_blend: f64,
    /// Extra margin around start and goal when sizing the grid.
    pub region_margin: f64,
}

impl Default for SeedParams {
    fn default() -> Self {
        Self {
            voxel_size: 0.25,
            inflation: 0,
            connectivity: Connectivity::TwentySix,
            height: 0.5,
            control_points: 20,
            v_max: 1.0,
            omega_max: 1.5,
            max_climb: Some(0.5),
            snap_radius: 2,
            voxel_cap: DEFAULT_VOXEL_CAP,
            yaw_blend: 1.0,
            region_margin: 1.0,
        }
    }
}

/// Seed spline plus the intermediate products.
#[derive(Clone, Debug)]
pub struct Seed {
    pub spline: TrajectorySpline,
    pub path: SeedPath,
    pub grid: OccupancyGrid,
    pub fit_residual: f64,
    /// Waypoints passed to the fit (x, y, z, yaw).
    pub waypoints: Vec<Point4>,
}

fn smoothstep(x: f64) -> f64 {
    let t = x.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Yaw at each waypoint: unwrapped heading of the path after line-of-sight
/// simplification, lightly smoothed at corners, blended from the start yaw
/// and into the goal yaw over `blend` meters. `visible(a, b)` reports whether
/// the straight segment from `a` to `b` is free.
pub fn yaw_profile(
    points: &[Vec3],
    start_yaw: f64,
    goal_yaw: f64,
    blend: f64,
    visible: &dyn Fn(Vec3, Vec3) -> bool,
) -> Vec<f64> {
    let n = points.len();
    if n < 2 {
        return vec![start_yaw; n];
    }
    let mut raw = vec![0.0; n];
    let mut i = 0;
    while i < n - 1 {
        let mut j = i + 1;
        while j + 1 < n && visible(points[i], points[j + 1]) {
            j += 1;
        }
        let (a, b) = (points[i], points[j]);
        let h = libm::atan2(b[1] - a[1], b[0] - a[0]);
        raw[i..j].iter_mut().for_each(|v| *v = h);
        raw[j] = h;
        i = j;
    }
    // anchor the unwrapped headings next to the start yaw
    raw.insert(0, start_yaw);
    bspline::unwrap_angles(&mut raw);
    raw.remove(0);
    let w = 2usize;
    let heading: Vec<f64> = (0..n)
        .map(|k| {
            let (lo, hi) = (k.saturating_sub(w), (k + w).min(n - 1));
            raw[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect();
    let mut cum = vec![0.0; n];
    for k in 1..n {
        let d: f64 = (0..2)
            .map(|a| {
                let t = points[k][a] - points[k - 1][a];
                t * t
            })
            .sum();
        cum[k] = cum[k - 1] + libm::sqrt(d);
    }
    let total = cum[n - 1];
    let blend = blend.min(total / 3.0).max(1e-9);
    let mut goal = goal_yaw;
    {
        let last = heading[n - 1];
        let two_pi = 2.0 * core::f64::consts::PI;
        goal -= two_pi * libm::round((goal - last) / two_pi);
    }
    let mut out: Vec<f64> = (0..n)
        .map(|k| {
            let ws = 1.0 - smoothstep(cum[k] / blend);
            let wg = 1.0 - smoothstep((total - cum[k]) / blend);
            let base = heading[k];
            base + ws * (start_yaw - base) + wg * (goal - base)
        })
        .collect();
    out[0] = start_yaw;
    out[n - 1] = goal;
    out
}

/// A* seed fitted with a spline; `m` is set so the largest B-spline-hull
/// speed is 0.8·v_max (and yaw rate at most 0.8·ω_max).
pub fn seed_trajectory(scene: &SplatScene, start: &Pose, goal: &Pose, params: &SeedParams) -> Result<Seed> {
    let h = params.height;
    let mut region = *scene.bounds();
    for p in [start.position, goal.position] {
        let m = params.region_margin;
        region.expand([p[0] - m, p[1] - m, h - m]);
        region.expand([p[0] + m, p[1] + m, h + m]);
    }
    let grid = voxelize_region(scene, &region, params.voxel_size, params.inflation, params.voxel_cap)?;
    let opts = SearchOptions {
        connectivity: params.connectivity,
        z_band: params.max_climb.map(|c| (h - c, h + c)),
        snap_radius: params.snap_radius,
    };
    let s_at = [start.position[0], start.position[1], h];
    let g_at = [goal.position[0], goal.position[1], h];
    let path = astar_with(&grid, s_at, g_at, &opts)?;
    let mut pts: Vec<Vec3> = path.waypoints.iter().map(|p| [p[0], p[1], h]).collect();
    if pts.len() == 1 {
        pts = vec![s_at, g_at];
    } else {
        pts[0] = s_at;
        let last = pts.len() - 1;
        pts[last] = g_at;
    }
    let visible = |a: Vec3, b: Vec3| segment_free(&grid, a, b, opts.z_band);
    let yaws = yaw_profile(&pts, start.yaw, goal.yaw, params.yaw_blend, &visible);
    let waypoints: Vec<Point4> = pts.iter().zip(&yaws).map(|(p, &y)| [p[0], p[1], p[2], y]).collect();
    let dense = densify(&waypoints, 0.25 * params.voxel_size, 4 * params.control_points);
    let fit = bspline::fit_spline_to_path(&dense, params.control_points)?;
    let mut q = fit.spline.control_points;
    for c in &mut q {
        c[2] = h;
    }
    let m = time_regulation_for(&q, params.v_max, params.omega_max);
    let spline = TrajectorySpline::new(q, m)?;
    Ok(Seed { spline, path, grid, fit_residual: fit.max_residual, waypoints })
}

/// Linear subdivision so no piece is longer than `step` (positionally) and
/// there are at least `min_count` points.
fn densify(points: &[Point4], step: f64, min_count: usize) -> Vec<Point4> {
    let len = |a: &Point4, b: &Point4| libm::sqrt((0..3).map(|k| (b[k] - a[k]) * (b[k] - a[k])).sum::<f64>());
    let total: f64 = points.windows(2).map(|w| len(&w[0], &w[1])).sum();
    let step = step.min(total / min_count as f64).max(1e-9);
    let mut out = vec![points[0]];
    for w in points.windows(2) {
        let pieces = (libm::ceil(len(&w[0], &w[1]) / step) as usize).max(1);
        for k in 1..=pieces {
            let t = k as f64 / pieces as f64;
            out.push(core::array::from_fn(|a| w[0][a] + t * (w[1][a] - w[0][a])));
        }
    }
    out
}

/// Time regulation putting the largest B-spline-hull speed at 0.8·v_max and
/// the largest yaw rate at no more than 0.8·ω_max.
pub fn time_regulation_for(q: &[Point4], v_max: f64, omega_max: f64) -> f64 {
    let mut vp: f64 = 0.0;
    let mut vy: f64 = 0.0;
    for w in q.windows(2) {
        let d: [f64; 4] = core::array::from_fn(|a| w[1][a] - w[0][a]);
        vp = vp.max(libm::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]));
        vy = vy.max(libm::fabs(d[3]));
    }
    let mut m = f64::INFINITY;
    if vp > 1e-12 {
        m = m.min(0.8 * v_max / vp);
    }
    if vy > 1e-12 {
        m = m.min(0.8 * omega_max / vy);
    }
    if m.is_finite() {
        m
    } else {
        1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::splat::Gaussian3;

    #[test]
    fn single_gaussian_one_voxel() {
        let scene = SplatScene::new(vec![Gaussian3::isotropic([0.0; 3], 0.01).unwrap()]).unwrap();
        let g = voxelize(&scene, 0.5, 0).unwrap();
        assert_eq!(g.occupied_count(), 1);
        assert!(g.occupied_at([0.01, 0.01, 0.01]));
        assert!(!g.occupied_at([5.0, 5.0, 5.0]));
        assert!(voxelize(&scene, 0.0, 0).is_err());
    }

    #[test]
    fn voxel_cap() {
        let scene = SplatScene::new(vec![
            Gaussian3::isotropic([0.0; 3], 0.01).unwrap(),
            Gaussian3::isotropic([100.0; 3], 0.01).unwrap(),
        ])
        .unwrap();
        let err = voxelize_region(&scene, scene.bounds(), 0.1, 0, 1_000_000).unwrap_err();
        assert!(matches!(err, Error::Resource { .. }));
    }

    #[test]
    fn straight_path_in_empty_grid() {
        let grid = OccupancyGrid::new([0.0; 3], 0.5, [20, 5, 5]);
        let p = astar(&grid, [0.25, 1.25, 1.25], [5.25, 1.25, 1.25], Connectivity::Six).unwrap();
        assert_eq!(p.cost, 10.0 * 0.5);
        assert_eq!(p.voxels.len(), 11);
    }

    #[test]
    fn walled_goal_unreachable() {
        let mut grid = OccupancyGrid::new([0.0; 3], 1.0, [9, 9, 9]);
        for z in 3..=5 {
            for y in 3..=5 {
                for x in 3..=5 {
                    if [x, y, z] != [4, 4, 4] {
                        grid.set_occupied([x, y, z]);
                    }
                }
            }
        }
        let r = astar(&grid, [0.5, 0.5, 0.5], [4.5, 4.5, 4.5], Connectivity::TwentySix);
        assert_eq!(r.unwrap_err(), Error::Unreachable);
    }

    #[test]
    fn snapping() {
        let mut grid = OccupancyGrid::new([0.0; 3], 1.0, [10, 3, 3]);
        grid.set_occupied([0, 1, 1]);
        let p = astar(&grid, [0.5, 1.5, 1.5], [9.5, 1.5, 1.5], Connectivity::Six).unwrap();
        assert_ne!(p.voxels[0], [0, 1, 1]);
        let all = OccupancyGrid { occupied: vec![u64::MAX; 2], ..grid.clone() };
        assert!(matches!(astar(&all, [0.5, 1.5, 1.5], [9.5, 1.5, 1.5], Connectivity::Six), Err(Error::Snap { .. })));
    }

    #[test]
    fn run_lengths_sum_to_voxels() {
        let mut grid = OccupancyGrid::new([0.0; 3], 1.0, [4, 4, 4]);
        grid.set_occupied([0, 0, 0]);
        grid.set_occupied([3, 3, 3]);
        let r = grid.run_lengths();
        assert_eq!(r.iter().sum::<usize>(), 64);
        assert_eq!(r, vec![0, 1, 62, 1]);
    }
}
