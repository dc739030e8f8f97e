use gsplan_core::collision::*;
use gsplan_core::linalg::{self, Mat3, Vec3};
use gsplan_core::scene_gen::{generate_synthetic_scene, SceneKind, SceneParams};
use gsplan_core::splat::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_rotation(rng: &mut impl Rng) -> Mat3 {
    let q: [f64; 4] = core::array::from_fn(|_| rng.gen_range(-1.0..1.0));
    linalg::quat_to_rotation(q).unwrap()
}

fn random_cov(rng: &mut impl Rng, lo: f64, hi: f64) -> Mat3 {
    let s: Vec3 = core::array::from_fn(|_| rng.gen_range(lo..hi));
    linalg::symmetrize(&linalg::congruence(&random_rotation(rng), &linalg::diag(s.map(|v| v * v))))
}

fn random_gaussian(rng: &mut impl Rng, spread: f64) -> Gaussian3 {
    let mean: Vec3 = core::array::from_fn(|_| rng.gen_range(-spread..spread));
    Gaussian3::new(mean, random_cov(rng, 0.05, 0.5), 1.0).unwrap()
}

fn random_robot(rng: &mut impl Rng, m: usize) -> RobotModel {
    let bodies = (0..m)
        .map(|_| RobotBody {
            offset: [rng.gen_range(-0.4..0.4), rng.gen_range(-0.2..0.2), rng.gen_range(-0.1..0.1)],
            cov: random_cov(rng, 0.08, 0.3),
            weight: 1.0,
        })
        .collect();
    RobotModel::new("random", bodies).unwrap()
}

fn random_scene(rng: &mut impl Rng, n: usize, spread: f64) -> SplatScene {
    SplatScene::new((0..n).map(|_| random_gaussian(rng, spread)).collect()).unwrap()
}

fn density(g: &Gaussian3, x: Vec3) -> f64 {
    let (det, inv) = linalg::sym_det_inverse(&g.cov).unwrap();
    let d = linalg::sub(x, g.mean);
    NORMALIZATION / det.sqrt() * (-0.5 * linalg::dot(d, linalg::mat_vec(&inv, d))).exp()
}

#[test]
fn splat_covariance_examples() {
    let c = covariance_from_splat([0.0; 3], [1.0, 0.0, 0.0, 0.0]).unwrap();
    for (row, id) in c.iter().zip(linalg::IDENTITY) {
        for (a, b) in row.iter().zip(id) {
            assert!((a - b).abs() < 1e-15);
        }
    }
    let bad = RobotBody { offset: [0.0; 3], cov: linalg::diag([1.0, 1.0, -1.0]), weight: 1.0 };
    assert!(RobotModel::new("bad", vec![bad]).is_err());
    assert!(matches!(RobotModel::new("none", vec![]), Err(gsplan_core::Error::EmptyRobot)));
}

#[test]
fn opacity_filter_examples() {
    let rec = |alpha: f64| SplatRecord {
        position: [0.0; 3],
        log_scale: [-2.0; 3],
        rotation: [1.0, 0.0, 0.0, 0.0],
        opacity_logit: (alpha / (1.0 - alpha)).ln(),
    };
    let policy = OpacityPolicy { threshold: 0.5, opacity_as_weight: false };
    assert_eq!(scene_from_records(&[rec(0.99), rec(0.99), rec(0.99)], policy).unwrap().len(), 3);
    assert_eq!(scene_from_records(&[rec(0.99), rec(0.01), rec(0.99)], policy).unwrap().len(), 2);
    assert!(matches!(scene_from_records(&[rec(0.01)], policy), Err(gsplan_core::Error::EmptyScene)));
}

#[test]
fn robot_pose_examples() {
    let robot = RobotModel::anymal();
    let g = robot_gaussians_at_pose(&robot, &Pose::new([1.0, 2.0, 3.0], 0.0));
    assert_eq!(g[0].mean, [1.35, 2.0, 3.0]);
    assert_eq!(g[0].cov, robot.bodies[0].cov);
    let g = robot_gaussians_at_pose(&robot, &Pose::new([0.0; 3], core::f64::consts::FRAC_PI_2));
    assert!(linalg::norm(linalg::sub(g[0].mean, [0.0, 0.35, 0.0])) < 1e-15);
    let g = robot_gaussians_at_pose(&robot, &Pose::new([0.0; 3], core::f64::consts::PI));
    for r in 0..3 {
        for k in 0..3 {
            assert!((g[1].cov[r][k] - robot.bodies[1].cov[r][k]).abs() < 1e-15);
        }
    }
}

#[test]
fn anymal_two_sigma_footprint() {
    // 2σ extents against the 1.0 m × 0.5 m footprint
    let robot = RobotModel::anymal();
    let b = &robot.bodies[0];
    let length = 2.0 * (b.offset[0] + 2.0 * b.cov[0][0].sqrt());
    let width = 2.0 * 2.0 * b.cov[1][1].sqrt();
    assert!((width - 0.5).abs() < 0.01, "{width}");
    // the published length is covered, with the outer bodies reaching past it
    assert!(length >= 1.0, "{length}");
}

#[test]
fn synthetic_pillars_form_disjoint_clusters() {
    let params = SceneParams { pillar_count: 4, pillar_radius: 0.3, ..SceneParams::default() };
    let scene = generate_synthetic_scene(SceneKind::Pillars, &params).unwrap();
    let means: Vec<Vec3> = scene.gaussians().iter().map(|g| g.mean).collect();
    // union-find at 0.3 m linkage
    let mut parent: Vec<usize> = (0..means.len()).collect();
    fn find(p: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while p[r] != r {
            r = p[r];
        }
        p[i] = r;
        r
    }
    for i in 0..means.len() {
        for j in i + 1..means.len() {
            if linalg::norm(linalg::sub(means[i], means[j])) <= 0.3 {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a] = b;
            }
        }
    }
    let mut roots: Vec<usize> = (0..means.len()).map(|i| find(&mut parent, i)).collect();
    roots.sort_unstable();
    roots.dedup();
    assert_eq!(roots.len(), 4);
    let empty = SceneParams { density: 0.0, ..SceneParams::default() };
    assert!(generate_synthetic_scene(SceneKind::Pillars, &empty).is_err());
}

#[test]
fn overlap_matches_grid_quadrature() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..5 {
        let a = random_gaussian(&mut rng, 0.3);
        let b = random_gaussian(&mut rng, 0.3);
        let exact = pair_overlap(&a, &b).unwrap();
        let (lo, hi, n) = (-2.5, 2.5, 160);
        let h = (hi - lo) / n as f64;
        let mut sum = 0.0;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let x = [lo + (i as f64 + 0.5) * h, lo + (j as f64 + 0.5) * h, lo + (k as f64 + 0.5) * h];
                    sum += density(&a, x) * density(&b, x);
                }
            }
        }
        let quad = sum * h * h * h;
        assert!((quad - exact).abs() <= 1e-3 * exact, "{quad} vs {exact}");
    }
}

#[test]
fn decay_and_single_pair_examples() {
    let cov = linalg::diag([0.04, 0.09, 0.01]);
    let a = Gaussian3::new([0.0; 3], cov, 1.0).unwrap();
    let peak = pair_overlap(&a, &a).unwrap();
    let joint_sigma = (2.0f64 * 0.09).sqrt();
    let far = Gaussian3::new([10.0 * joint_sigma, 0.0, 0.0], cov, 1.0).unwrap();
    assert!(pair_overlap(&a, &far).unwrap() < 1e-10 * peak);

    let scene = SplatScene::new(vec![a]).unwrap();
    let robot = RobotModel::new("one", vec![RobotBody { offset: [0.0; 3], cov, weight: 1.0 }]).unwrap();
    let pose = Pose::new([0.1, -0.05, 0.02], 0.0);
    let g = robot_gaussians_at_pose(&robot, &pose);
    assert_eq!(collision_measure(&scene, &g, None).unwrap(), pair_overlap(&scene.gaussians()[0], &g[0]).unwrap());
    let away = Pose::new([10.0, 0.0, 0.0], 0.0);
    assert!(collision_at_pose(&scene, &robot, &away, None).unwrap() < 1e-10 * peak);
}

#[test]
fn symmetric_scene_has_zero_position_gradient() {
    let cov = linalg::diag([0.02, 0.05, 0.03]);
    let p = [0.4, -0.2, 0.1];
    let env = vec![Gaussian3::new(p, cov, 1.0).unwrap(), Gaussian3::new(p.map(|v| -v), cov, 1.0).unwrap()];
    let scene = SplatScene::new(env).unwrap();
    let robot = RobotModel::sphere(0.04).unwrap();
    let e = collision_gradient(&scene, &robot, &Pose::new([0.0; 3], 0.3), None).unwrap();
    let scale = e.value / 0.05;
    assert!(e.grad[..3].iter().all(|v| v.abs() < 1e-12 * scale.max(1.0)), "{:?} {}", e.grad, e.value);
    assert_eq!(e.grad[3], 0.0);
}

#[test]
fn isotropic_robot_has_zero_yaw_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let scene = random_scene(&mut rng, 20, 1.0);
    let robot = RobotModel::sphere(0.05).unwrap();
    for _ in 0..20 {
        let pose = Pose::new(core::array::from_fn(|_| rng.gen_range(-1.0..1.0)), rng.gen_range(-3.0..3.0));
        assert_eq!(collision_gradient(&scene, &robot, &pose, None).unwrap().grad[3], 0.0);
    }
}

#[test]
fn gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let h = 1e-5;
    for _ in 0..100 {
        let (n, m) = (rng.gen_range(1..12), rng.gen_range(1..4));
        let scene = random_scene(&mut rng, n, 0.8);
        let robot = random_robot(&mut rng, m);
        let x: [f64; 4] =
            [rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.3..0.3), rng.gen_range(-3.0..3.0)];
        let e = collision_gradient(&scene, &robot, &Pose::from_array(x), None).unwrap();
        let gmax = e.grad.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for k in 0..4 {
            let (mut xp, mut xm) = (x, x);
            xp[k] += h;
            xm[k] -= h;
            let fp = collision_at_pose(&scene, &robot, &Pose::from_array(xp), None).unwrap();
            let fm = collision_at_pose(&scene, &robot, &Pose::from_array(xm), None).unwrap();
            let fd = (fp - fm) / (2.0 * h);
            // components far below the largest one are compared on its scale
            let denom = fd.abs().max(e.grad[k].abs()).max(1e-3 * gmax).max(1e-300);
            assert!((fd - e.grad[k]).abs() / denom < 1e-5, "k={k} fd={fd} an={}", e.grad[k]);
        }
    }
}

#[test]
fn culled_matches_full_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let scene = random_scene(&mut rng, 100, 2.0);
    let robot = random_robot(&mut rng, 3);
    for _ in 0..20 {
        let pose = Pose::new(core::array::from_fn(|_| rng.gen_range(-1.5..1.5)), rng.gen_range(-3.0..3.0));
        let cull = build_cull_set(&scene, &robot, &[pose], DEFAULT_CUTOFF).unwrap();
        let full = collision_at_pose(&scene, &robot, &pose, None).unwrap();
        let culled = collision_at_pose(&scene, &robot, &pose, Some(&cull)).unwrap();
        assert!((full - culled).abs() <= 1e-6 * full, "{full} {culled}");
    }
}

#[test]
fn cull_extremes() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let scene = random_scene(&mut rng, 30, 1.0);
    let robot = random_robot(&mut rng, 3);
    let pose = Pose::new([0.0; 3], 0.0);
    assert_eq!(build_cull_set(&scene, &robot, &[pose], f64::INFINITY).unwrap().len(), 90);
    let far = Pose::new([100.0, 0.0, 0.0], 0.0);
    assert!(build_cull_set(&scene, &robot, &[far], 6.0).unwrap().is_empty());
    assert!(build_cull_set(&scene, &robot, &[pose], 2.0).is_err());
}

#[test]
fn batch_matches_single_and_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let scene = random_scene(&mut rng, 200, 2.0);
    let robot = RobotModel::anymal();
    let poses: Vec<Pose> = (0..64)
        .map(|_| Pose::new(core::array::from_fn(|_| rng.gen_range(-1.5..1.5)), rng.gen_range(-3.0..3.0)))
        .collect();
    let one = batch_collision(&scene, &robot, &poses[..1], None, &Serial).unwrap();
    assert_eq!(one[0], collision_gradient(&scene, &robot, &poses[0], None).unwrap());
    let a = batch_collision(&scene, &robot, &poses, None, &Serial).unwrap();
    let b = batch_collision(&scene, &robot, &poses, None, &Serial).unwrap();
    assert_eq!(a, b);
    assert!(batch_collision(&scene, &robot, &[], None, &Serial).is_err());
}

#[test]
fn tree_sum_is_close_to_naive() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let v: Vec<f64> = (0..10_007).map(|_| rng.gen_range(0.0..1.0)).collect();
    let naive: f64 = v.iter().sum();
    assert!((tree_sum(&v) - naive).abs() <= 1e-12 * naive);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn covariance_round_trip(ls in prop::array::uniform3(-4.0f64..1.0), q in prop::array::uniform4(-1.0f64..1.0)) {
        prop_assume!(q.iter().map(|v| v * v).sum::<f64>() > 1e-3);
        let c = covariance_from_splat(ls, q).unwrap();
        prop_assert!(linalg::cholesky3(&c).is_some());
        let (mut got, _) = linalg::sym_eigen(&c);
        let mut want = ls.map(|s| (2.0 * s).exp());
        got.sort_by(f64::total_cmp);
        want.sort_by(f64::total_cmp);
        for k in 0..3 {
            prop_assert!((got[k] - want[k]).abs() <= 1e-9 * want[k].max(1.0), "{got:?} {want:?}");
        }
    }

    #[test]
    fn pose_identity_and_spectrum(seed in 0u64..10_000, yaw in -10.0f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let robot = random_robot(&mut rng, 3);
        let id = robot_gaussians_at_pose(&robot, &Pose::new([0.0; 3], 0.0));
        for (g, b) in id.iter().zip(&robot.bodies) {
            prop_assert_eq!(g.mean, b.offset);
            prop_assert_eq!(g.cov, b.cov);
        }
        let pose = Pose::new(core::array::from_fn(|_| rng.gen_range(-5.0..5.0)), yaw);
        for (g, b) in robot_gaussians_at_pose(&robot, &pose).iter().zip(&robot.bodies) {
            let mut a = linalg::sym_eigen(&g.cov).0;
            let mut c = linalg::sym_eigen(&b.cov).0;
            a.sort_by(f64::total_cmp);
            c.sort_by(f64::total_cmp);
            for k in 0..3 {
                prop_assert!((a[k] - c[k]).abs() <= 1e-12 * c[2]);
            }
        }
    }

    #[test]
    fn overlap_symmetric_and_nonnegative(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_gaussian(&mut rng, 2.0);
        let b = random_gaussian(&mut rng, 2.0);
        let ab = pair_overlap(&a, &b).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(ab, pair_overlap(&b, &a).unwrap());
    }

    #[test]
    fn overlap_decays_along_rays(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_gaussian(&mut rng, 1.0);
        let b = Gaussian3::new(a.mean, random_cov(&mut rng, 0.05, 0.5), 1.0).unwrap();
        let dir: Vec3 = core::array::from_fn(|_| rng.gen_range(-1.0..1.0));
        let mut prev = f64::INFINITY;
        for step in 0..60 {
            let shift = linalg::scale(dir, step as f64 * 0.02);
            let moved = Gaussian3::new(linalg::add(b.mean, shift), b.cov, 1.0).unwrap();
            let v = pair_overlap(&a, &moved).unwrap();
            // strict decrease while the value is still representable
            if v > 1e-280 {
                prop_assert!(v < prev, "step {step}: {v} >= {prev}");
            }
            prev = v;
        }
    }

    #[test]
    fn translation_equivariance(seed in 0u64..10_000, t in prop::array::uniform3(-50.0f64..50.0)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scene = random_scene(&mut rng, 10, 0.8);
        let robot = random_robot(&mut rng, 2);
        let pose = Pose::new(core::array::from_fn(|_| rng.gen_range(-0.5..0.5)), rng.gen_range(-3.0..3.0));
        let moved_pose = Pose::new(linalg::add(pose.position, t), pose.yaw);
        let v0 = collision_at_pose(&scene, &robot, &pose, None).unwrap();
        let v1 = collision_at_pose(&scene.translated(t).unwrap(), &robot, &moved_pose, None).unwrap();
        prop_assert!((v0 - v1).abs() <= 1e-12 * v0.max(1e-300), "{v0} {v1}");
    }

    #[test]
    fn measure_is_nonnegative(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scene = random_scene(&mut rng, 15, 3.0);
        let robot = random_robot(&mut rng, 3);
        let pose = Pose::new(core::array::from_fn(|_| rng.gen_range(-3.0..3.0)), rng.gen_range(-3.0..3.0));
        prop_assert!(collision_at_pose(&scene, &robot, &pose, None).unwrap() >= 0.0);
    }
}
