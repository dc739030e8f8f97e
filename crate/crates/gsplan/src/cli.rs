//! `gsplan` command line: `gen`, `plan`, `check`, `bench`.

use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use gsplan_core::collision::BatchExecutor;
use gsplan_core::optimizer::objective_terms;
use gsplan_core::scene_gen::{generate_synthetic_scene, SceneKind, SceneParams};
use gsplan_core::splat::{Pose, RobotModel, SplatScene};
use gsplan_core::validate::ValidationReport;

use crate::bench::{diagonal_poses, linear_fit, robot_with_bodies, time_collision};
use crate::config::{load_robot_model, BoundList, PlanConfig, WeightList};
use crate::exec::{RayonExecutor, THREADS_ENV};
use crate::export::TrajectoryExport;
use crate::grid::write_grid;
use crate::pipeline::{self, build_problem, ExportContext};
use crate::ply::{load_splat_ply, write_scene_ply};
use crate::viz::write_robot_poses;

/// Exit status of a check or plan whose validation failed.
pub const EXIT_CHECK_FAILED: u8 = 2;

#[derive(Parser, Debug)]
#[command(name = "gsplan", version, about = "Orientation-aware trajectory planning in Gaussian-splat scenes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic scene as a splat PLY.
    Gen(GenArgs),
    /// Plan a trajectory and validate it.
    Plan(PlanArgs),
    /// Re-validate a stored trajectory.
    Check(CheckArgs),
    /// Time collision evaluation against robot size and parallelism.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Kind {
    Corridor,
    Pillars,
}

#[derive(Args, Debug)]
pub struct GenArgs {
    pub kind: Kind,
    #[arg(long)]
    pub out: PathBuf,
    /// Gaussians per m² of surface.
    #[arg(long, default_value_t = 200.0)]
    pub density: f64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, allow_negative_numbers = true)]
    pub opening: Option<f64>,
    #[arg(long)]
    pub wall_length: Option<f64>,
    #[arg(long)]
    pub wall_thickness: Option<f64>,
    #[arg(long)]
    pub wall_height: Option<f64>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub radius: Option<f64>,
    #[arg(long)]
    pub pillar_height: Option<f64>,
    #[arg(long)]
    pub gap: Option<f64>,
}

#[derive(Args, Debug)]
pub struct ThreadArgs {
    /// Worker threads for collision evaluation; 0 uses every core.
    #[arg(long, env = THREADS_ENV, default_value_t = 0)]
    pub threads: usize,
}

impl ThreadArgs {
    fn executor(&self) -> anyhow::Result<RayonExecutor> {
        RayonExecutor::new(self.threads).context("building thread pool")
    }
}

#[derive(Args, Debug)]
pub struct SceneArgs {
    #[arg(long)]
    pub scene: PathBuf,
    /// Drop splats whose opacity is below this.
    #[arg(long)]
    pub opacity_threshold: Option<f64>,
    /// Use splat opacity as the Gaussian weight.
    #[arg(long)]
    pub opacity_weight: bool,
}

#[derive(Args, Debug)]
pub struct PlanArgs {
    #[command(flatten)]
    pub scene: SceneArgs,
    #[arg(long)]
    pub robot: PathBuf,
    /// `x y [z] yaw_deg`; z defaults to the trajectory height.
    #[arg(long, num_args = 3..=4, allow_negative_numbers = true, required = true)]
    pub start: Vec<f64>,
    #[arg(long, num_args = 3..=4, allow_negative_numbers = true, required = true)]
    pub goal: Vec<f64>,
    /// TOML planner configuration; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub height: Option<f64>,
    /// `w1,w2,w3`: collision, jerk, goal.
    #[arg(long, value_delimiter = ',')]
    pub weights: Option<Vec<f64>>,
    /// `v,a,w,alpha`
    #[arg(long, value_delimiter = ',')]
    pub bounds: Option<Vec<f64>>,
    #[arg(long = "ctrl-points")]
    pub ctrl_points: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long, value_parser = ["bspline", "minvo"])]
    pub hull: Option<String>,
    /// Keep yaw at the start yaw.
    #[arg(long)]
    pub freeze_yaw: bool,
    #[command(flatten)]
    pub threads: ThreadArgs,
    /// Recorded in the export; planning itself is deterministic.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub viz_ply: Option<PathBuf>,
    /// Occupancy grid of the seed search, run-length encoded.
    #[arg(long)]
    pub grid_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CheckArgs {
    /// Trajectory written by `plan`.
    pub trajectory: PathBuf,
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub robot: PathBuf,
    #[command(flatten)]
    pub threads: ThreadArgs,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long)]
    pub scene: PathBuf,
    /// Body counts to sweep.
    #[arg(long = "bodies", default_value = "1,2,4,8")]
    pub bodies: String,
    /// Thread counts to sweep; `max` is every core.
    #[arg(long, default_value = "1,max")]
    pub parallel: String,
    #[arg(long, default_value_t = 64)]
    pub samples: usize,
    #[arg(long, default_value_t = 0.5)]
    pub height: f64,
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    /// Also plan between these poses (`x y [z] yaw_deg`) for the solve-time
    /// column.
    #[arg(long, num_args = 3..=4, allow_negative_numbers = true, requires = "goal")]
    pub start: Option<Vec<f64>>,
    #[arg(long, num_args = 3..=4, allow_negative_numbers = true, requires = "start")]
    pub goal: Option<Vec<f64>>,
    /// CSV output; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn main_with(args: impl IntoIterator<Item = std::ffi::OsString>) -> ExitCode {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let out = match cli.command {
        Command::Gen(a) => cmd_gen(&a),
        Command::Plan(a) => cmd_plan(&a),
        Command::Check(a) => cmd_check(&a),
        Command::Bench(a) => cmd_bench(&a),
    };
    match out {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

pub fn cmd_gen(a: &GenArgs) -> anyhow::Result<u8> {
    let mut p = SceneParams { density: a.density, seed: a.seed, ..SceneParams::default() };
    let set = |dst: &mut f64, v: Option<f64>| {
        if let Some(v) = v {
            *dst = v;
        }
    };
    set(&mut p.opening, a.opening);
    set(&mut p.wall_length, a.wall_length);
    set(&mut p.wall_thickness, a.wall_thickness);
    set(&mut p.wall_height, a.wall_height);
    set(&mut p.pillar_radius, a.radius);
    set(&mut p.pillar_height, a.pillar_height);
    set(&mut p.pillar_gap, a.gap);
    if let Some(c) = a.count {
        p.pillar_count = c;
    }
    let kind = match a.kind {
        Kind::Corridor => SceneKind::Corridor,
        Kind::Pillars => SceneKind::Pillars,
    };
    let scene = generate_synthetic_scene(kind, &p)?;
    write_scene_ply(&a.out, &scene)?;
    println!("N = {}", scene.len());
    Ok(0)
}

fn parse_pose(v: &[f64], height: f64) -> Pose {
    let (x, y, z, yaw) = match *v {
        [x, y, yaw] => (x, y, height, yaw),
        [x, y, z, yaw] => (x, y, z, yaw),
        _ => unreachable!("clap enforces 3 or 4 values"),
    };
    Pose::new([x, y, z], yaw.to_radians())
}

fn load_scene(a: &SceneArgs, config: &mut PlanConfig) -> anyhow::Result<SplatScene> {
    if let Some(t) = a.opacity_threshold {
        config.scene.opacity_threshold = t;
    }
    config.scene.opacity_as_weight |= a.opacity_weight;
    load_splat_ply(&a.scene, config.scene.policy()).with_context(|| format!("loading {}", a.scene.display()))
}

fn plan_config(a: &PlanArgs) -> anyhow::Result<PlanConfig> {
    let mut c = match &a.config {
        Some(p) => PlanConfig::load(p)?,
        None => PlanConfig::default(),
    };
    if let Some(h) = a.height {
        c.height = h;
    }
    if let Some(w) = &a.weights {
        if w.len() != 3 {
            bail!("--weights takes 3 comma-separated values, got {}", w.len());
        }
        c.weights = WeightList([w[0], w[1], w[2]]);
    }
    if let Some(b) = &a.bounds {
        if b.len() != 4 {
            bail!("--bounds takes 4 comma-separated values, got {}", b.len());
        }
        c.bounds = BoundList([b[0], b[1], b[2], b[3]]);
    }
    if let Some(h) = a.ctrl_points {
        c.control_points = h;
    }
    if let Some(k) = a.samples {
        c.samples = k;
    }
    if let Some(h) = &a.hull {
        c.hull.clone_from(h);
    }
    c.solver.freeze_yaw |= a.freeze_yaw;
    Ok(c)
}

fn print_validation(v: &ValidationReport) {
    for c in &v.checks {
        println!("  {:<18} {:>12.5e} <= {:<12.5e} {}", c.name, c.value, c.limit, if c.pass { "pass" } else { "FAIL" });
    }
    println!("min clearance (squared Mahalanobis): {}", v.min_clearance);
    if let Some(i) = v.first_penetration {
        let p = v.poses[i];
        println!(
            "first penetration at t = {:.3}s, pose ({:.3}, {:.3}, {:.3}, {:.3})",
            v.times[i], p.position[0], p.position[1], p.position[2], p.yaw
        );
    }
    println!("validation: {}", if v.pass { "pass" } else { "FAIL" });
}

pub fn cmd_plan(a: &PlanArgs) -> anyhow::Result<u8> {
    let mut config = plan_config(a)?;
    let scene = load_scene(&a.scene, &mut config)?;
    let robot = load_robot_model(&a.robot)?;
    let start = parse_pose(&a.start, config.height);
    let goal = parse_pose(&a.goal, config.height);
    let exec = a.threads.executor()?;
    let outcome = pipeline::plan(&scene, &robot, start, goal, &config, &exec)?;
    let r = &outcome.result;
    println!(
        "scene: {} gaussians, robot '{}' with {} bodies, {} threads",
        scene.len(),
        robot.name,
        robot.len(),
        exec.threads()
    );
    println!("seed: {}s solve: {}s", r.timings.seed, r.timings.solve);
    let t = r.objective_terms;
    println!(
        "objective: {} (collision {} jerk {} goal {}); seed collision {}",
        r.objective, t.collision, t.jerk, t.goal, outcome.seed_terms.collision
    );
    println!(
        "converged: {} after {} outer / {} inner iterations, {} evaluations",
        r.converged, r.iterations, r.inner_iterations, r.evaluations
    );
    for (name, v) in r.constraint_report.entries() {
        println!("  constraint {name:<17} {v:.3e}");
    }
    print_validation(&outcome.validation);

    let problem = build_problem(&scene, &robot, start, goal, &config)?;
    let ctx = ExportContext { scene_path: &a.scene.scene.to_string_lossy(), run_seed: a.seed, config: &config };
    let export = pipeline::export(&problem, &outcome, &ctx, &exec)?;
    if let Some(path) = &a.out {
        export.write(path)?;
        println!("wrote {}", path.display());
    }
    if let Some(path) = &a.viz_ply {
        let poses: Vec<Pose> = export.samples.iter().map(|s| Pose::unwrapped(s.position, s.yaw)).collect();
        write_robot_poses(path, &robot, &poses)?;
        println!("wrote {}", path.display());
    }
    if let Some(path) = &a.grid_out {
        write_grid(path, &outcome.seed.grid)?;
        println!("wrote {}", path.display());
    }
    Ok(0)
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

pub fn cmd_check(a: &CheckArgs) -> anyhow::Result<u8> {
    let export = TrajectoryExport::read(&a.trajectory)?;
    let meta = &export.meta;
    let mut config = meta.config.clone();
    let scene_args = SceneArgs { scene: a.scene.clone(), opacity_threshold: None, opacity_weight: false };
    let scene = load_scene(&scene_args, &mut config)?;
    let robot: RobotModel = load_robot_model(&a.robot)?;
    if robot.len() != meta.bodies {
        bail!("robot '{}' has {} bodies, the trajectory was planned for {}", robot.name, robot.len(), meta.bodies);
    }
    if scene.len() != meta.scene_gaussians {
        bail!("scene has {} gaussians, the trajectory was planned with {}", scene.len(), meta.scene_gaussians);
    }
    let exec = a.threads.executor()?;
    let spline = meta.spline()?;
    let start = Pose::unwrapped([meta.start[0], meta.start[1], meta.start[2]], meta.start[3]);
    let goal = Pose::unwrapped([meta.goal[0], meta.goal[1], meta.goal[2]], meta.goal[3]);
    let ge = meta.goal_effective;
    let effective = Pose::unwrapped([ge[0], ge[1], ge[2]], ge[3]);

    let measured = build_problem(&scene, &robot, start, effective, &config)?;
    let terms = objective_terms(&measured, &spline, &exec)?;
    let rec = &meta.result;
    let terms_match =
        close(terms.collision, rec.collision) && close(terms.jerk, rec.jerk) && close(terms.goal, rec.goal);
    println!(
        "objective terms: collision {} jerk {} goal {} ({})",
        terms.collision,
        terms.jerk,
        terms.goal,
        if terms_match { "match" } else { "MISMATCH with recorded" }
    );
    let problem = build_problem(&scene, &robot, start, goal, &config)?;
    let v = pipeline::validate(&problem, &spline, &config)?;
    print_validation(&v);
    Ok(if v.pass && terms_match { 0 } else { EXIT_CHECK_FAILED })
}

fn parse_list<T>(s: &str, what: &str, item: impl Fn(&str) -> anyhow::Result<T>) -> anyhow::Result<Vec<T>> {
    let v: Vec<T> = s.split(',').map(str::trim).filter(|t| !t.is_empty()).map(item).collect::<anyhow::Result<_>>()?;
    if v.is_empty() {
        bail!("empty {what} sweep");
    }
    Ok(v)
}

pub fn cmd_bench(a: &BenchArgs) -> anyhow::Result<u8> {
    let bodies = parse_list(&a.bodies, "body count", |t| {
        let m: usize = t.parse().with_context(|| format!("body count '{t}'"))?;
        if m == 0 {
            bail!("body count must be positive");
        }
        Ok(m)
    })?;
    let parallel = parse_list(&a.parallel, "parallelism", |t| {
        if t == "max" {
            Ok(0)
        } else {
            t.parse::<usize>().with_context(|| format!("thread count '{t}'"))
        }
    })?;
    let mut config = PlanConfig { samples: a.samples, height: a.height, ..PlanConfig::default() };
    let scene_args = SceneArgs { scene: a.scene.clone(), opacity_threshold: None, opacity_weight: false };
    let scene = load_scene(&scene_args, &mut config)?;
    let poses = diagonal_poses(&scene, a.samples, a.height);
    let endpoints = match (&a.start, &a.goal) {
        (Some(s), Some(g)) => Some((parse_pose(s, a.height), parse_pose(g, a.height))),
        _ => None,
    };

    let mut csv = String::from("n,m,k,parallelism,eval_seconds,solve_seconds\n");
    let mut by_threads: Vec<(usize, Vec<f64>, Vec<f64>)> = Vec::new();
    for &threads in &parallel {
        let exec = RayonExecutor::new(threads)?;
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for &m in &bodies {
            let robot = robot_with_bodies(m)?;
            let eval = time_collision(&scene, &robot, &poses, &exec, a.repeats)?;
            let solve = match endpoints {
                Some((s, g)) => solve_time(&scene, &robot, s, g, &config, &exec)?,
                None => f64::NAN,
            };
            csv += &format!("{},{},{},{},{},{}\n", scene.len(), m, a.samples, exec.threads(), eval, solve);
            xs.push(m as f64);
            ys.push(eval);
        }
        by_threads.push((exec.threads(), xs, ys));
    }
    let mut report = String::new();
    for (threads, xs, ys) in &by_threads {
        match linear_fit(xs, ys) {
            Some(f) => {
                report += &format!(
                    "threads {threads}: eval seconds = {:.4e}·M + {:.4e}, R² = {:.4}\n",
                    f.slope, f.intercept, f.r2
                )
            }
            None => report += &format!("threads {threads}: fewer than two body counts, no fit\n"),
        }
    }
    if let [(t1, _, y1), .., (tn, _, yn)] = by_threads.as_slice() {
        let speedup: Vec<String> = y1.iter().zip(yn).map(|(a, b)| format!("{:.2}", a / b)).collect();
        report += &format!("speedup {tn} vs {t1} threads per body count: {}\n", speedup.join(" "));
    }
    match &a.out {
        Some(path) => {
            std::fs::write(path, &csv).with_context(|| format!("writing {}", path.display()))?;
            print!("{report}");
        }
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(csv.as_bytes())?;
            for line in report.lines() {
                writeln!(out, "# {line}")?;
            }
        }
    }
    Ok(0)
}

fn solve_time(
    scene: &SplatScene,
    robot: &RobotModel,
    start: Pose,
    goal: Pose,
    config: &PlanConfig,
    exec: &dyn BatchExecutor,
) -> anyhow::Result<f64> {
    let outcome = pipeline::plan(scene, robot, start, goal, config, exec)?;
    Ok(outcome.result.timings.solve)
}
