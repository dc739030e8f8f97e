//! Seed, optimize and validate in one call, with wall-clock timings.

use std::time::Instant;

use gsplan_core::bspline::{progress_values, HullBasis, TrajectorySpline};
use gsplan_core::collision::{batch_collision_per_pose, BatchExecutor};
use gsplan_core::optimizer::{
    objective_terms, optimize, sample_cull_sets, ObjectiveTerms, PlanResult, PlanningProblem,
};
use gsplan_core::seed::{seed_trajectory, Seed};
use gsplan_core::splat::{Pose, RobotModel, SplatScene};
use gsplan_core::validate::{validate_plan, Sampling, ValidationReport};

use crate::config::PlanConfig;
use crate::export::{ExportMeta, ResultInfo, SampleRow, TimingInfo, TrajectoryExport, FORMAT_VERSION};

pub struct PlanOutcome {
    pub seed: Seed,
    pub seed_terms: ObjectiveTerms,
    pub result: PlanResult,
    pub validation: ValidationReport,
}

/// Problem described by `config`, borrowing the scene and robot.
pub fn build_problem<'a>(
    scene: &'a SplatScene,
    robot: &'a RobotModel,
    start: Pose,
    goal: Pose,
    config: &PlanConfig,
) -> gsplan_core::Result<PlanningProblem<'a>> {
    let mut p = PlanningProblem::new(scene, robot, start, goal, config.height);
    p.weights = config.weights.weights();
    p.bounds = config.bounds.bounds();
    p.control_points = config.control_points;
    p.samples = config.samples;
    p.hull_basis = config.hull.parse::<HullBasis>()?;
    p.settings = config.solver.settings();
    p.validate()?;
    Ok(p)
}

pub fn plan(
    scene: &SplatScene,
    robot: &RobotModel,
    start: Pose,
    goal: Pose,
    config: &PlanConfig,
    exec: &dyn BatchExecutor,
) -> gsplan_core::Result<PlanOutcome> {
    let problem = build_problem(scene, robot, start, goal, config)?;
    let t0 = Instant::now();
    let seed = seed_trajectory(scene, &start, &goal, &config.seed_params()?)?;
    let t_seed = t0.elapsed().as_secs_f64();
    let seed_terms = objective_terms(&problem, &seed.spline, exec)?;
    let t1 = Instant::now();
    let mut result = optimize(&problem, &seed.spline, exec)?;
    result.timings.seed = t_seed;
    result.timings.solve = t1.elapsed().as_secs_f64();
    let validation = validate(&problem, &result.spline, config)?;
    Ok(PlanOutcome { seed, seed_terms, result, validation })
}

pub fn validate(
    problem: &PlanningProblem,
    spline: &TrajectorySpline,
    config: &PlanConfig,
) -> gsplan_core::Result<ValidationReport> {
    validate_plan(problem, spline, Sampling::Spacing(config.validation.spacing), &config.validation.thresholds())
}

/// Pose, velocity and collision value at each of the problem's samples.
pub fn sample_rows(
    problem: &PlanningProblem,
    spline: &TrajectorySpline,
    exec: &dyn BatchExecutor,
) -> gsplan_core::Result<Vec<SampleRow>> {
    let m = spline.time_regulation;
    let progress = progress_values(problem.control_points, problem.samples);
    let mut poses = Vec::with_capacity(progress.len());
    let mut rows = Vec::with_capacity(progress.len());
    for &s in &progress {
        let x = spline.evaluate(s, 0, true)?;
        let v = spline.evaluate(s, 1, true)?;
        poses.push(Pose::unwrapped([x[0], x[1], x[2]], x[3]));
        rows.push(SampleRow {
            time: s / m,
            position: [x[0], x[1], x[2]],
            yaw: x[3],
            velocity: [v[0], v[1], v[2]],
            collision: 0.0,
        });
    }
    let culls = sample_cull_sets(problem, &poses, 0.0)?;
    let evals = batch_collision_per_pose(problem.scene, problem.robot, &poses, &culls, exec)?;
    rows.iter_mut().zip(evals).for_each(|(r, e)| r.collision = e.value);
    Ok(rows)
}

pub struct ExportContext<'a> {
    pub scene_path: &'a str,
    pub run_seed: u64,
    pub config: &'a PlanConfig,
}

pub fn export(
    problem: &PlanningProblem,
    outcome: &PlanOutcome,
    ctx: &ExportContext,
    exec: &dyn BatchExecutor,
) -> gsplan_core::Result<TrajectoryExport> {
    let r = &outcome.result;
    let v = &outcome.validation;
    let c = r.constraint_report;
    let meta = ExportMeta {
        format: FORMAT_VERSION,
        version: env!("CARGO_PKG_VERSION").into(),
        scene_path: ctx.scene_path.into(),
        scene_gaussians: problem.scene.len(),
        robot: problem.robot.name.clone(),
        bodies: problem.robot.len(),
        run_seed: ctx.run_seed,
        start: problem.start.as_array(),
        goal: problem.goal.as_array(),
        goal_effective: r.goal.as_array(),
        time_regulation: r.spline.time_regulation,
        control_points: r.spline.control_points.clone(),
        result: ResultInfo {
            converged: r.converged,
            iterations: r.iterations,
            inner_iterations: r.inner_iterations,
            evaluations: r.evaluations,
            objective: r.objective,
            collision: r.objective_terms.collision,
            jerk: r.objective_terms.jerk,
            goal: r.objective_terms.goal,
            start_drift: r.start_drift,
            constraints: [c.start, c.height, c.velocity, c.acceleration, c.yaw_rate, c.yaw_acceleration],
            validation_pass: v.pass,
            min_clearance: v.min_clearance,
            penetrations: v.penetrations,
        },
        timings: TimingInfo { seed: r.timings.seed, solve: r.timings.solve },
        config: ctx.config.clone(),
    };
    Ok(TrajectoryExport { meta, samples: sample_rows(problem, &r.spline, exec)? })
}
