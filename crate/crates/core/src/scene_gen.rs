//! Seeded synthetic environments: a wall with a single opening, and a field
//! of cylindrical pillars. Surfaces are tiled with flat, surface-aligned
//! Gaussians whose 2σ ellipsoids stay inside the solid.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{self, Vec3};
use crate::splat::{Aabb, Gaussian3, SplatScene};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SceneKind {
    Corridor,
    Pillars,
}

/// Parameters for [`generate_synthetic_scene`]. Fields not used by a kind are
/// ignored.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneParams {
    /// Gaussians per m² of solid surface.
    pub density: f64,
    pub seed: u64,
    /// Tangential σ as a fraction of the sample spacing.
    pub tangential_sigma_factor: f64,
    /// Normal σ as a fraction of the tangential σ.
    pub normal_sigma_factor: f64,

    pub wall_length: f64,
    pub wall_height: f64,
    pub wall_thickness: f64,
    pub opening: f64,
    /// Free space on each side of the wall along x.
    pub room_depth: f64,

    pub pillar_count: usize,
    pub pillar_radius: f64,
    pub pillar_height: f64,
    /// Minimum free gap between pillar surfaces.
    pub pillar_gap: f64,
    /// Half-extents of the region pillar centers are drawn from.
    pub pillar_region: [f64; 2],
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            density: 200.0,
            seed: 7,
            tangential_sigma_factor: 0.5,
            normal_sigma_factor: 0.25,
            wall_length: 4.0,
            wall_height: 1.5,
            wall_thickness: 0.2,
            opening: 0.6,
            room_depth: 3.0,
            pillar_count: 4,
            pillar_radius: 0.3,
            pillar_height: 1.5,
            pillar_gap: 1.2,
            pillar_region: [2.0, 1.5],
        }
    }
}

struct Tiler<'a> {
    rng: ChaCha8Rng,
    spacing: f64,
    sigma_t: f64,
    sigma_n: f64,
    out: &'a mut Vec<Gaussian3>,
}

impl Tiler<'_> {
    fn push(&mut self, mean: Vec3, u: Vec3, v: Vec3, n: Vec3) {
        let rot = [[u[0], v[0], n[0]], [u[1], v[1], n[1]], [u[2], v[2], n[2]]];
        let st2 = self.sigma_t * self.sigma_t;
        let sn2 = self.sigma_n * self.sigma_n;
        let cov = linalg::congruence(&rot, &linalg::diag([st2, st2, sn2]));
        self.out.push(Gaussian3::new(mean, cov, 1.0).expect("generated covariance is SPD"));
    }

    /// Jittered stratified coordinates covering `[lo, hi]` at the tiling
    /// density of a face `len` long.
    fn strata(&mut self, lo: f64, hi: f64, len: f64) -> Vec<f64> {
        let n = (libm::ceil(len / self.spacing) as usize).max(1);
        if hi <= lo {
            return alloc::vec![0.5 * (lo + hi); n];
        }
        let w = (hi - lo) / n as f64;
        (0..n).map(|k| lo + (k as f64 + self.rng.gen_range(0.1..0.9)) * w).collect()
    }

    /// Tile a rectangular face given by its center, unit tangents `u`, `v`,
    /// outward normal `n` and half-extents.
    fn face(&mut self, center: Vec3, u: Vec3, v: Vec3, n: Vec3, half_u: f64, half_v: f64) {
        let m = 2.0 * self.sigma_t;
        let us = self.strata(-half_u + m, half_u - m, 2.0 * half_u);
        let vs = self.strata(-half_v + m, half_v - m, 2.0 * half_v);
        let inset = linalg::scale(n, -2.0 * self.sigma_n);
        for &a in &us {
            for &b in &vs {
                let p = linalg::add(center, linalg::add(linalg::scale(u, a), linalg::scale(v, b)));
                self.push(linalg::add(p, inset), u, v, n);
            }
        }
    }

    /// Tile every face of a box except the bottom.
    fn solid_box(&mut self, min: Vec3, max: Vec3) {
        let c = [0.5 * (min[0] + max[0]), 0.5 * (min[1] + max[1]), 0.5 * (min[2] + max[2])];
        let h = [0.5 * (max[0] - min[0]), 0.5 * (max[1] - min[1]), 0.5 * (max[2] - min[2])];
        let (ex, ey, ez) = ([1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]);
        for s in [-1.0, 1.0] {
            self.face([c[0] + s * h[0], c[1], c[2]], ey, ez, [s, 0.0, 0.0], h[1], h[2]);
            self.face([c[0], c[1] + s * h[1], c[2]], ex, ez, [0.0, s, 0.0], h[0], h[2]);
        }
        self.face([c[0], c[1], max[2]], ex, ey, ez, h[0], h[1]);
    }

    fn pillar(&mut self, cx: f64, cy: f64, radius: f64, height: f64) {
        let m = 2.0 * self.sigma_t;
        let nt = (libm::ceil(2.0 * PI * radius / self.spacing) as usize).max(3);
        let zs = self.strata(m, height - m, height);
        let r_in = radius - 2.0 * self.sigma_n;
        for k in 0..nt {
            for &z in &zs {
                let th = (k as f64 + self.rng.gen_range(0.1..0.9)) * 2.0 * PI / nt as f64;
                let (s, c) = libm::sincos(th);
                let n = [c, s, 0.0];
                let u = [-s, c, 0.0];
                self.push([cx + r_in * c, cy + r_in * s, z], u, [0.0, 0.0, 1.0], n);
            }
        }
        // top cap
        let cap_r = radius - m;
        if cap_r > 0.0 {
            let xs = self.strata(-cap_r, cap_r, 2.0 * radius);
            let ys = self.strata(-cap_r, cap_r, 2.0 * radius);
            for &x in &xs {
                for &y in &ys {
                    if x * x + y * y <= cap_r * cap_r {
                        let z = height - 2.0 * self.sigma_n;
                        self.push([cx + x, cy + y, z], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]);
                    }
                }
            }
        }
    }
}

/// Deterministic synthetic scene of the given kind.
pub fn generate_synthetic_scene(kind: SceneKind, params: &SceneParams) -> Result<SplatScene> {
    let p = params;
    if !(p.density > 0.0) {
        return Err(Error::EmptyScene);
    }
    let spacing = 1.0 / libm::sqrt(p.density);
    let sigma_t = p.tangential_sigma_factor * spacing;
    let mut out = Vec::new();
    let mut tiler = Tiler {
        rng: ChaCha8Rng::seed_from_u64(p.seed),
        spacing,
        sigma_t,
        sigma_n: p.normal_sigma_factor * sigma_t,
        out: &mut out,
    };
    let bounds = match kind {
        SceneKind::Corridor => {
            if !(p.opening > 0.0) {
                return Err(Error::Parameter(format!("opening width {} must be > 0", p.opening)));
            }
            if p.opening >= p.wall_length {
                return Err(Error::Parameter(format!(
                    "opening {} must be narrower than the wall {}",
                    p.opening, p.wall_length
                )));
            }
            if !(p.wall_thickness > 0.0 && p.wall_height > 0.0 && p.room_depth > p.wall_thickness) {
                return Err(Error::Parameter(format!("bad wall dimensions {p:?}")));
            }
            let (hx, hl, hw) = (0.5 * p.wall_thickness, 0.5 * p.wall_length, 0.5 * p.opening);
            tiler.solid_box([-hx, -hl, 0.0], [hx, -hw, p.wall_height]);
            tiler.solid_box([-hx, hw, 0.0], [hx, hl, p.wall_height]);
            Aabb { min: [-p.room_depth, -hl, 0.0], max: [p.room_depth, hl, p.wall_height] }
        }
        SceneKind::Pillars => {
            if p.pillar_count == 0 || !(p.pillar_radius > 0.0) || !(p.pillar_height > 0.0) {
                return Err(Error::Parameter(format!("bad pillar parameters {p:?}")));
            }
            let min_sep = 2.0 * p.pillar_radius + p.pillar_gap;
            let [rx, ry] = p.pillar_region;
            let mut centers: Vec<[f64; 2]> = Vec::new();
            let mut tries = 0usize;
            while centers.len() < p.pillar_count {
                tries += 1;
                if tries > 100_000 {
                    return Err(Error::Parameter(format!(
                        "cannot place {} pillars with gap {} in region {:?}",
                        p.pillar_count, p.pillar_gap, p.pillar_region
                    )));
                }
                let c = [tiler.rng.gen_range(-rx..=rx), tiler.rng.gen_range(-ry..=ry)];
                let ok = centers.iter().all(|o| {
                    let (dx, dy) = (o[0] - c[0], o[1] - c[1]);
                    dx * dx + dy * dy >= min_sep * min_sep
                });
                if ok {
                    centers.push(c);
                }
            }
            for c in &centers {
                tiler.pillar(c[0], c[1], p.pillar_radius, p.pillar_height);
            }
            let pad = p.pillar_radius + 1.5;
            Aabb { min: [-rx - pad, -ry - pad, 0.0], max: [rx + pad, ry + pad, p.pillar_height] }
        }
    };
    SplatScene::with_bounds(out, bounds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corridor(density: f64, opening: f64) -> Result<SplatScene> {
        let params = SceneParams { density, opening, ..SceneParams::default() };
        generate_synthetic_scene(SceneKind::Corridor, &params)
    }

    #[test]
    fn corridor_means_in_slabs_with_single_gap() {
        let s = corridor(200.0, 0.6).unwrap();
        for g in s.gaussians() {
            let m = g.mean;
            assert!(m[0].abs() <= 0.1 + 1e-12, "{m:?}");
            assert!(m[1].abs() >= 0.3 - 1e-12 && m[1].abs() <= 2.0 + 1e-12, "{m:?}");
            assert!(m[2] >= 0.0 && m[2] <= 1.5);
        }
        // both slabs populated and nothing within the opening
        assert!(s.gaussians().iter().any(|g| g.mean[1] < 0.0));
        assert!(s.gaussians().iter().any(|g| g.mean[1] > 0.0));
    }

    #[test]
    fn corridor_rejects_bad_parameters() {
        assert!(matches!(corridor(200.0, -1.0), Err(Error::Parameter(_))));
        assert!(matches!(corridor(200.0, 0.0), Err(Error::Parameter(_))));
        assert_eq!(corridor(0.0, 0.6).unwrap_err(), Error::EmptyScene);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = corridor(150.0, 0.6).unwrap();
        let b = corridor(150.0, 0.6).unwrap();
        assert_eq!(a.gaussians(), b.gaussians());
    }
}
