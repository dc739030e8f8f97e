use std::cmp::Reverse;
use std::collections::BinaryHeap;

use gsplan_core::bspline::TrajectorySpline;
use gsplan_core::linalg::Vec3;
use gsplan_core::scene_gen::{generate_synthetic_scene, SceneKind, SceneParams};
use gsplan_core::seed::*;
use gsplan_core::splat::{Aabb, Gaussian3, Pose, SplatScene};
use gsplan_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Plain Dijkstra over the same neighborhood, with f64 edge costs.
fn dijkstra(grid: &OccupancyGrid, s: [usize; 3], g: [usize; 3], six: bool) -> Option<f64> {
    let n = grid.voxel_count();
    let mut dist = vec![f64::INFINITY; n];
    let mut heap = BinaryHeap::new();
    dist[grid.linear(s)] = 0.0;
    heap.push(Reverse((ordered(0.0), grid.linear(s))));
    while let Some(Reverse((d, i))) = heap.pop() {
        let d = f64::from_bits(d);
        if d > dist[i] {
            continue;
        }
        let v = grid.unlinear(i);
        for dz in -1i64..=1 {
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let k = [dx, dy, dz].iter().filter(|c| **c != 0).count();
                    if k == 0 || (six && k > 1) {
                        continue;
                    }
                    let w = [v[0] as i64 + dx, v[1] as i64 + dy, v[2] as i64 + dz];
                    if (0..3).any(|a| w[a] < 0 || w[a] >= grid.dims[a] as i64) {
                        continue;
                    }
                    let w = [w[0] as usize, w[1] as usize, w[2] as usize];
                    // every voxel of the spanned block must be free
                    let mut clear = true;
                    for bz in v[2].min(w[2])..=v[2].max(w[2]) {
                        for by in v[1].min(w[1])..=v[1].max(w[1]) {
                            for bx in v[0].min(w[0])..=v[0].max(w[0]) {
                                clear &= !grid.is_occupied([bx, by, bz]);
                            }
                        }
                    }
                    if !clear {
                        continue;
                    }
                    let nd = d + (k as f64).sqrt();
                    let j = grid.linear(w);
                    if nd < dist[j] {
                        dist[j] = nd;
                        heap.push(Reverse((ordered(nd), j)));
                    }
                }
            }
        }
    }
    let d = dist[grid.linear(g)];
    d.is_finite().then_some(d * grid.voxel_size)
}

/// Order-preserving bits for nonnegative floats.
fn ordered(x: f64) -> u64 {
    x.to_bits()
}

fn random_grid(rng: &mut impl Rng, fill: f64) -> OccupancyGrid {
    let mut grid = OccupancyGrid::new([0.0; 3], 1.0, [20, 20, 20]);
    for z in 0..20 {
        for y in 0..20 {
            for x in 0..20 {
                if rng.gen_bool(fill) {
                    grid.set_occupied([x, y, z]);
                }
            }
        }
    }
    grid
}

fn random_free(rng: &mut impl Rng, grid: &OccupancyGrid) -> [usize; 3] {
    loop {
        let v = [rng.gen_range(0..20), rng.gen_range(0..20), rng.gen_range(0..20)];
        if !grid.is_occupied(v) {
            return v;
        }
    }
}

#[test]
fn astar_equals_dijkstra_on_random_grids() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut reached = 0;
    for trial in 0..60 {
        let fill = [0.2, 0.35, 0.5][trial % 3];
        let grid = random_grid(&mut rng, fill);
        let (s, g) = (random_free(&mut rng, &grid), random_free(&mut rng, &grid));
        for conn in [Connectivity::Six, Connectivity::TwentySix] {
            let oracle = dijkstra(&grid, s, g, conn == Connectivity::Six);
            match astar(&grid, grid.center(s), grid.center(g), conn) {
                Ok(path) => {
                    let d = oracle.expect("oracle also reaches the goal");
                    assert!((path.cost - d).abs() <= 1e-9 * d.max(1.0), "{} vs {d}", path.cost);
                    for w in path.voxels.windows(2) {
                        assert!((0..3).all(|a| w[0][a].abs_diff(w[1][a]) <= 1));
                    }
                    assert!(path.voxels.iter().all(|v| !grid.is_occupied(*v)));
                    reached += 1;
                }
                Err(Error::Unreachable) => assert!(oracle.is_none()),
                Err(e) => panic!("{e}"),
            }
        }
    }
    assert!(reached > 30);
}

#[test]
fn astar_examples() {
    let vs = 0.25;
    let grid = OccupancyGrid::new([0.0; 3], vs, [16, 8, 8]);
    let p = astar(&grid, grid.center([2, 3, 3]), grid.center([12, 3, 3]), Connectivity::Six).unwrap();
    assert_eq!(p.voxels.len(), 11);
    assert!((p.cost - 10.0 * vs).abs() < 1e-12);
    assert!(p.voxels.iter().all(|v| v[1] == 3 && v[2] == 3));

    // goal boxed in by a shell thicker than the snapping radius
    let mut walled = OccupancyGrid::new([0.0; 3], vs, [16, 16, 16]);
    for z in 4..13 {
        for y in 4..13 {
            for x in 4..13 {
                let inner = (7..10).contains(&x) && (7..10).contains(&y) && (7..10).contains(&z);
                if !inner {
                    walled.set_occupied([x, y, z]);
                }
            }
        }
    }
    let r = astar(&walled, walled.center([0, 0, 0]), walled.center([8, 8, 8]), Connectivity::TwentySix);
    assert_eq!(r.unwrap_err(), Error::Unreachable);

    // single wall at x = 8 with a gap at (y, z) = (5, 5)
    let mut wall = OccupancyGrid::new([0.0; 3], vs, [16, 12, 12]);
    for z in 0..12 {
        for y in 0..12 {
            if (y, z) != (5, 5) {
                wall.set_occupied([8, y, z]);
            }
        }
    }
    for conn in [Connectivity::Six, Connectivity::TwentySix] {
        let (s, g) = ([2, 1, 9], [14, 10, 2]);
        let p = astar(&wall, wall.center(s), wall.center(g), conn).unwrap();
        assert!(p.voxels.contains(&[8, 5, 5]));
        let d = dijkstra(&wall, s, g, conn == Connectivity::Six).unwrap();
        assert!((p.cost - d).abs() <= 1e-12, "{} {d}", p.cost);
    }
}

#[test]
fn voxelize_examples() {
    let one = SplatScene::new(vec![Gaussian3::isotropic([0.0; 3], 0.01).unwrap()]).unwrap();
    let grid = voxelize(&one, 0.5, 0).unwrap();
    assert_eq!(grid.occupied_count(), 1);
    assert!(grid.occupied_at([0.0; 3]));
    assert!(!grid.occupied_at([0.6, 0.0, 0.0]));
    assert!(matches!(voxelize(&one, 0.0, 0), Err(Error::Parameter(_))));
    let big = Aabb { min: [0.0; 3], max: [1000.0; 3] };
    assert!(matches!(voxelize_region(&one, &big, 0.01, 0, DEFAULT_VOXEL_CAP), Err(Error::Resource { .. })));
}

#[test]
fn corridor_voxels_form_two_slabs() {
    let scene = generate_synthetic_scene(SceneKind::Corridor, &SceneParams::default()).unwrap();
    let grid = voxelize(&scene, 0.25, 0).unwrap();
    let half = 0.125 + 1e-12;
    let mut sides = [false; 2];
    for i in 0..grid.voxel_count() {
        let v = grid.unlinear(i);
        if !grid.is_occupied(v) {
            continue;
        }
        let c = grid.center(v);
        assert!(c[0].abs() <= 0.1 + half, "{c:?}");
        assert!(c[1].abs() >= 0.3 - half && c[1].abs() <= 2.0 + half, "{c:?}");
        sides[(c[1] > 0.0) as usize] = true;
    }
    assert_eq!(sides, [true, true]);
    // the opening is free at the planning height
    assert!(!grid.occupied_at([0.0, 0.0, 0.5]));
}

#[test]
fn voxelize_is_deterministic_and_idempotent() {
    let params = SceneParams { density: 300.0, ..SceneParams::default() };
    let scene = generate_synthetic_scene(SceneKind::Pillars, &params).unwrap();
    let a = voxelize(&scene, 0.25, 1).unwrap();
    let b = voxelize(&scene, 0.25, 1).unwrap();
    assert_eq!(a, b);
    // a scene made of the occupied centers voxelizes back to the same grid
    let raw = voxelize(&scene, 0.25, 0).unwrap();
    let centers: Vec<Gaussian3> = (0..raw.voxel_count())
        .map(|i| raw.unlinear(i))
        .filter(|v| raw.is_occupied(*v))
        .map(|v| Gaussian3::isotropic(raw.center(v), 1e-4).unwrap())
        .collect();
    let again = SplatScene::with_bounds(centers, *scene.bounds()).unwrap();
    assert_eq!(voxelize(&again, 0.25, 0).unwrap(), raw);
}

fn samples(spline: &TrajectorySpline, n: usize) -> Vec<[f64; 4]> {
    let end = spline.progress_end();
    (0..n).map(|k| spline.evaluate(k as f64 * (end - 1e-9) / (n - 1) as f64, 0, false).unwrap()).collect()
}

fn empty_scene() -> SplatScene {
    // a single far-away Gaussian keeps the grid bounded
    SplatScene::new(vec![Gaussian3::isotropic([0.0, 0.0, -5.0], 1e-4).unwrap()]).unwrap()
}

#[test]
fn free_space_seed_is_straight() {
    let seed = seed_trajectory(
        &empty_scene(),
        &Pose::new([-2.0, 0.0, 0.5], 0.0),
        &Pose::new([2.0, 0.0, 0.5], 0.0),
        &SeedParams::default(),
    )
    .unwrap();
    for p in samples(&seed.spline, 400) {
        assert!(p[3].abs() < 1e-3, "yaw {}", p[3]);
        assert!(p[1].abs() <= 0.25 && (p[2] - 0.5).abs() < 1e-12);
    }
}

#[test]
fn goal_behind_unwraps_without_jumps() {
    let seed = seed_trajectory(
        &empty_scene(),
        &Pose::new([1.5, 0.0, 0.5], 0.0),
        &Pose::new([-1.5, 0.0, 0.5], core::f64::consts::PI),
        &SeedParams::default(),
    )
    .unwrap();
    let s = samples(&seed.spline, 400);
    let max_step = s.windows(2).map(|w| (w[1][3] - w[0][3]).abs()).fold(0.0, f64::max);
    assert!(max_step < 0.5, "{max_step}");
    let end = s.last().unwrap()[3];
    assert!((end.abs() - core::f64::consts::PI).abs() < 1e-3, "{end}");
    let sign = end.signum();
    // monotone up to the fit's ringing
    let mut peak = s[0][3] * sign;
    for p in &s {
        assert!(p[3] * sign >= peak - 1e-2, "yaw turns back: {} after {}", p[3], peak * sign);
        peak = peak.max(p[3] * sign);
    }
}

/// Distance from `p` to the nearest occupied voxel center.
fn clearance(grid: &OccupancyGrid, p: Vec3) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..grid.voxel_count() {
        let v = grid.unlinear(i);
        if grid.is_occupied(v) {
            let c = grid.center(v);
            best = best.min(((c[0] - p[0]).powi(2) + (c[1] - p[1]).powi(2) + (c[2] - p[2]).powi(2)).sqrt());
        }
    }
    best
}

#[test]
fn corridor_seed_passes_through_opening() {
    let scene = generate_synthetic_scene(SceneKind::Corridor, &SceneParams::default()).unwrap();
    let yaw = core::f64::consts::FRAC_PI_2;
    let seed = seed_trajectory(
        &scene,
        &Pose::new([-2.0, 0.0, 0.5], yaw),
        &Pose::new([2.0, 0.0, 0.5], yaw),
        &SeedParams::default(),
    )
    .unwrap();
    let s = samples(&seed.spline, 500);
    let crossing = s.iter().filter(|p| p[0].abs() < 0.1).all(|p| p[1].abs() < 0.3);
    assert!(crossing);
    for p in &s {
        let d = clearance(&seed.grid, [p[0], p[1], p[2]]);
        assert!(d >= seed.grid.voxel_size, "sample {p:?} is {d} from an occupied voxel");
    }
}

fn assert_samples_free(seed: &Seed) {
    if seed.fit_residual < 0.5 * seed.grid.voxel_size {
        for p in samples(&seed.spline, 1000) {
            assert!(!seed.grid.occupied_at([p[0], p[1], p[2]]), "{p:?}");
        }
    }
}

#[test]
fn pillar_seed_stays_free() {
    let scene = generate_synthetic_scene(SceneKind::Pillars, &SceneParams::default()).unwrap();
    let seed = seed_trajectory(
        &scene,
        &Pose::new([-4.0, 0.0, 0.5], 0.0),
        &Pose::new([4.0, 0.0, 0.5], 0.0),
        &SeedParams::default(),
    )
    .unwrap();
    assert!(seed.fit_residual < 0.125);
    assert_samples_free(&seed);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn seed_samples_avoid_occupied_voxels(scene_seed in 0u64..1000, count in 2usize..7) {
        let params = SceneParams { seed: scene_seed, pillar_count: count, pillar_region: [2.5, 2.0], pillar_gap: 0.8, ..SceneParams::default() };
        let scene = generate_synthetic_scene(SceneKind::Pillars, &params).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(scene_seed);
        let start = Pose::new([-4.5, rng.gen_range(-2.0..2.0), 0.5], 0.0);
        let goal = Pose::new([4.5, rng.gen_range(-2.0..2.0), 0.5], 0.0);
        let seed = seed_trajectory(&scene, &start, &goal, &SeedParams::default()).unwrap();
        assert_samples_free(&seed);
    }
}
