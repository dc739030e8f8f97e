//! Trajectory optimization over spline control points.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::bspline::{build_discretization, hull_weights, DiscretizationPlan, HullBasis, Point4, TrajectorySpline};
use crate::collision::{
    batch_collision, batch_collision_per_pose, build_cull_set_with_margin, BatchExecutor, CullSet, TreeSum,
    DEFAULT_CUTOFF,
};
use crate::splat::{Pose, RobotModel, SplatScene};
use crate::sqn::{self, Evaluation, SqnSettings, SqnStatus};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Weights {
    pub collision: f64,
    pub jerk: f64,
    pub goal: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Self { collision: 0.1, jerk: 40.0, goal: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bounds {
    /// m/s
    pub velocity: f64,
    /// m/s²
    pub acceleration: f64,
    /// rad/s
    pub yaw_rate: f64,
    /// rad/s²
    pub yaw_acceleration: f64,
}

impl Default for Bounds {
    fn default() -> Self {
        Self { velocity: 1.0, acceleration: 2.0, yaw_rate: 1.5, yaw_acceleration: 3.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverSettings {
    pub eq_tol: f64,
    pub ineq_tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    /// Inner stationarity tolerance, relative to `max(1, |L|)`.
    pub inner_gtol: f64,
    pub penalty_init: f64,
    pub penalty_growth: f64,
    pub penalty_max: f64,
    /// Weight of the violation sum in the merit function.
    pub merit_penalty: f64,
    /// ε of the smoothed norm `sqrt(‖·‖² + ε²) − ε`.
    pub smoothing: f64,
    /// ε of the first outer iteration; divided by ten per iteration down to
    /// `smoothing`.
    pub smoothing_start: f64,
    pub cull_cutoff: f64,
    /// Slack added to each cull radius; a sample's set is rebuilt once its
    /// bodies have moved farther than this.
    pub cull_margin: f64,
    /// Keep yaw fixed at the start yaw.
    pub freeze_yaw: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            eq_tol: 1e-6,
            ineq_tol: 1e-6,
            max_outer: 30,
            max_inner: 200,
            inner_gtol: 1e-6,
            penalty_init: 10.0,
            penalty_growth: 10.0,
            penalty_max: 1e8,
            merit_penalty: 1e3,
            smoothing: 1e-6,
            smoothing_start: 1e-1,
            cull_cutoff: DEFAULT_CUTOFF,
            cull_margin: 0.25,
            freeze_yaw: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PlanningProblem<'a> {
    pub scene: &'a SplatScene,
    pub robot: &'a RobotModel,
    pub start: Pose,
    pub goal: Pose,
    pub weights: Weights,
    pub bounds: Bounds,
    pub height: f64,
    pub control_points: usize,
    pub samples: usize,
    pub hull_basis: HullBasis,
    pub settings: SolverSettings,
}

impl<'a> PlanningProblem<'a> {
    /// Problem with default weights, bounds and solver settings.
    pub fn new(scene: &'a SplatScene, robot: &'a RobotModel, start: Pose, goal: Pose, height: f64) -> Self {
        Self {
            scene,
            robot,
            start,
            goal,
            weights: Weights::default(),
            bounds: Bounds::default(),
            height,
            control_points: 20,
            samples: 64,
            hull_basis: HullBasis::default(),
            settings: SolverSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.weights;
        if [w.collision, w.jerk, w.goal].iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::Parameter(format!("weights must be >= 0, got {w:?}")));
        }
        let b = self.bounds;
        if [b.velocity, b.acceleration, b.yaw_rate, b.yaw_acceleration].iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Parameter(format!("bounds must be > 0, got {b:?}")));
        }
        if self.control_points < 4 {
            return Err(Error::Parameter(format!("H = {} < 4", self.control_points)));
        }
        if self.samples < self.control_points {
            return Err(Error::Parameter(format!("K = {} < H = {}", self.samples, self.control_points)));
        }
        if !self.height.is_finite() {
            return Err(Error::Parameter(format!("height {}", self.height)));
        }
        if self.robot.is_empty() {
            return Err(Error::EmptyRobot);
        }
        Ok(())
    }

    fn check_spline(&self, spline: &TrajectorySpline) -> Result<()> {
        if spline.control_points.len() != self.control_points {
            return Err(Error::Parameter(format!(
                "spline has {} control points, problem expects {}",
                spline.control_points.len(),
                self.control_points
            )));
        }
        if spline.control_points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Parameter("non-finite control point".into()));
        }
        Ok(())
    }
}

/// Unweighted objective terms.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ObjectiveTerms {
    /// Collision measure summed over the samples.
    pub collision: f64,
    /// Smoothed jerk norm summed over the samples.
    pub jerk: f64,
    /// Smoothed distance of the final sample to the goal.
    pub goal: f64,
}

impl ObjectiveTerms {
    pub fn weighted(&self, w: &Weights) -> f64 {
        w.collision * self.collision + w.jerk * self.jerk + w.goal * self.goal
    }
}

/// Which environment Gaussians enter the collision term.
#[derive(Clone, Copy, Debug)]
pub enum CollisionMode<'c> {
    /// Every pair.
    Full,
    /// One cull set per sample.
    PerSample(&'c [CullSet]),
    /// Cull sets rebuilt at the given poses with cutoff and no margin.
    Fresh,
}

#[inline]
fn smoothed_norm(v: &[f64; 4], eps: f64) -> (f64, f64) {
    let n = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>() + eps * eps);
    (n - eps, n)
}

pub(crate) fn sample_poses(plan: &DiscretizationPlan, q: &[Point4]) -> Vec<Pose> {
    plan.apply(0, q).into_iter().map(|x| Pose::unwrapped([x[0], x[1], x[2]], x[3])).collect()
}

/// Per-sample cull sets at `poses`.
pub fn sample_cull_sets(problem: &PlanningProblem, poses: &[Pose], margin: f64) -> Result<Vec<CullSet>> {
    poses
        .iter()
        .map(|p| {
            build_cull_set_with_margin(
                problem.scene,
                problem.robot,
                core::slice::from_ref(p),
                problem.settings.cull_cutoff,
                margin,
            )
        })
        .collect()
}

/// Per-sample pieces of one objective evaluation.
struct SampleTerms {
    terms: ObjectiveTerms,
    /// ω₁-weighted collision gradient at each sample.
    collision: Vec<Point4>,
    /// Time-domain jerk at each sample and `sqrt(‖j‖² + ε²)`.
    jerk: Vec<(Point4, f64)>,
    goal_diff: Point4,
    goal_norm: f64,
}

fn evaluate(
    problem: &PlanningProblem,
    plan: &DiscretizationPlan,
    spline: &TrajectorySpline,
    mode: CollisionMode,
    exec: &dyn BatchExecutor,
    eps: f64,
) -> Result<SampleTerms> {
    let q = &spline.control_points;
    let m = spline.time_regulation;
    let w = problem.weights;
    let k = plan.samples();
    let x = plan.apply(0, q);
    let poses: Vec<Pose> = x.iter().map(|p| Pose::unwrapped([p[0], p[1], p[2]], p[3])).collect();

    let evals = match mode {
        CollisionMode::Full => batch_collision(problem.scene, problem.robot, &poses, None, exec)?,
        CollisionMode::PerSample(c) => batch_collision_per_pose(problem.scene, problem.robot, &poses, c, exec)?,
        CollisionMode::Fresh => {
            let culls = sample_cull_sets(problem, &poses, 0.0)?;
            batch_collision_per_pose(problem.scene, problem.robot, &poses, &culls, exec)?
        }
    };
    let mut acc = TreeSum::<1>::default();
    let collision_grad = evals
        .iter()
        .map(|e| {
            acc.push([e.value]);
            e.grad.map(|g| w.collision * g)
        })
        .collect();
    let collision = acc.finish()[0];

    let m3 = m * m * m;
    let mut acc = TreeSum::<1>::default();
    let jerk_samples = plan
        .apply(3, q)
        .into_iter()
        .map(|j| {
            let jt = j.map(|v| v * m3);
            let (val, n) = smoothed_norm(&jt, eps);
            acc.push([val]);
            (jt, n)
        })
        .collect();
    let jerk = acc.finish()[0];

    let target = problem.goal.as_array();
    let last = x[k - 1];
    let goal_diff = core::array::from_fn(|d| last[d] - target[d]);
    let (goal, goal_norm) = smoothed_norm(&goal_diff, eps);
    Ok(SampleTerms {
        terms: ObjectiveTerms { collision, jerk, goal },
        collision: collision_grad,
        jerk: jerk_samples,
        goal_diff,
        goal_norm,
    })
}

impl SampleTerms {
    /// Gradient of the jerk and goal terms with respect to the control points.
    fn smooth_grad(&self, problem: &PlanningProblem, plan: &DiscretizationPlan, m: f64, out: &mut [Point4]) {
        let w = problem.weights;
        let m3 = m * m * m;
        let g3: Vec<Point4> = self.jerk.iter().map(|(j, n)| j.map(|v| w.jerk * m3 * v / n)).collect();
        plan.accumulate_transpose(3, &g3, out);
        let last = plan.rows(0)[plan.samples() - 1];
        for (c, &wc) in last.weights.iter().enumerate() {
            for d in 0..4 {
                out[last.first + c][d] += wc * w.goal * self.goal_diff[d] / self.goal_norm;
            }
        }
    }

    fn collision_grad(&self, plan: &DiscretizationPlan, out: &mut [Point4]) {
        plan.accumulate_transpose(0, &self.collision, out);
    }

    /// Hessian of the jerk and goal terms, row-major over `(i, d) ↦ 4i + d`.
    fn smooth_hessian(&self, problem: &PlanningProblem, plan: &DiscretizationPlan, m: f64, out: &mut [f64]) {
        let w = problem.weights;
        let m3 = m * m * m;
        let n4 = 4 * plan.control_count;
        let mut add_block = |row: &crate::bspline::BasisRow, scale: f64, v: &Point4, n: f64| {
            // Hessian of sqrt(‖v‖² + ε²): (I − v vᵀ / n²) / n.
            let mut a = [[0.0; 4]; 4];
            for c in 0..4 {
                for d in 0..4 {
                    let id = if c == d { 1.0 } else { 0.0 };
                    a[c][d] = scale * (id - v[c] * v[d] / (n * n)) / n;
                }
            }
            for (ia, &wa) in row.weights.iter().enumerate() {
                for (ib, &wb) in row.weights.iter().enumerate() {
                    let (ra, rb) = (4 * (row.first + ia), 4 * (row.first + ib));
                    for c in 0..4 {
                        for d in 0..4 {
                            out[(ra + c) * n4 + rb + d] += wa * wb * a[c][d];
                        }
                    }
                }
            }
        };
        for (row, (j, n)) in plan.rows(3).iter().zip(&self.jerk) {
            add_block(row, w.jerk * m3 * m3, j, *n);
        }
        let last = plan.rows(0)[plan.samples() - 1];
        add_block(&last, w.goal, &self.goal_diff, self.goal_norm);
    }
}

/// Weighted objective and its gradient with respect to the control points,
/// summing collision over every pair.
pub fn objective_and_grad(
    problem: &PlanningProblem,
    spline: &TrajectorySpline,
    exec: &dyn BatchExecutor,
) -> Result<(f64, Vec<Point4>)> {
    objective_and_grad_with(problem, spline, CollisionMode::Full, exec)
}

pub fn objective_and_grad_with(
    problem: &PlanningProblem,
    spline: &TrajectorySpline,
    mode: CollisionMode,
    exec: &dyn BatchExecutor,
) -> Result<(f64, Vec<Point4>)> {
    problem.check_spline(spline)?;
    let plan = build_discretization(problem.control_points, problem.samples)?;
    let mut grad = vec![[0.0; 4]; problem.control_points];
    let e = evaluate(problem, &plan, spline, mode, exec, problem.settings.smoothing)?;
    e.smooth_grad(problem, &plan, spline.time_regulation, &mut grad);
    e.collision_grad(&plan, &mut grad);
    Ok((e.terms.weighted(&problem.weights), grad))
}

/// Objective terms with collision summed over fresh per-sample cull sets.
pub fn objective_terms(
    problem: &PlanningProblem,
    spline: &TrajectorySpline,
    exec: &dyn BatchExecutor,
) -> Result<ObjectiveTerms> {
    objective_terms_with(problem, spline, CollisionMode::Fresh, exec)
}

pub fn objective_terms_with(
    problem: &PlanningProblem,
    spline: &TrajectorySpline,
    mode: CollisionMode,
    exec: &dyn BatchExecutor,
) -> Result<ObjectiveTerms> {
    problem.check_spline(spline)?;
    let plan = build_discretization(problem.control_points, problem.samples)?;
    Ok(evaluate(problem, &plan, spline, mode, exec, problem.settings.smoothing)?.terms)
}

/// Constraint residuals; negative inequality residuals are satisfied.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ResidualBundle {
    /// First sample minus the start pose.
    pub start: [f64; 4],
    /// Sample z minus h.
    pub height: Vec<f64>,
    /// Hull-point speed minus v_max, per segment and hull point.
    pub velocity: Vec<f64>,
    pub acceleration: Vec<f64>,
    pub yaw_rate: Vec<f64>,
    pub yaw_acceleration: Vec<f64>,
}

/// Largest residual of each constraint family, clamped at zero for
/// inequalities.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ConstraintReport {
    pub start: f64,
    pub height: f64,
    pub velocity: f64,
    pub acceleration: f64,
    pub yaw_rate: f64,
    pub yaw_acceleration: f64,
}

impl ConstraintReport {
    pub fn max_equality(&self) -> f64 {
        self.start.max(self.height)
    }

    pub fn max_inequality(&self) -> f64 {
        self.velocity.max(self.acceleration).max(self.yaw_rate).max(self.yaw_acceleration)
    }

    pub fn entries(&self) -> [(&'static str, f64); 6] {
        [
            ("start", self.start),
            ("height", self.height),
            ("velocity", self.velocity),
            ("acceleration", self.acceleration),
            ("yaw_rate", self.yaw_rate),
            ("yaw_acceleration", self.yaw_acceleration),
        ]
    }
}

impl ResidualBundle {
    pub fn report(&self) -> ConstraintReport {
        let abs_max = |v: &mut dyn Iterator<Item = f64>| v.fold(0.0f64, |m, x| m.max(libm::fabs(x)));
        let pos_max = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(*x));
        ConstraintReport {
            start: abs_max(&mut self.start.iter().copied()),
            height: abs_max(&mut self.height.iter().copied()),
            velocity: pos_max(&self.velocity),
            acceleration: pos_max(&self.acceleration),
            yaw_rate: pos_max(&self.yaw_rate),
            yaw_acceleration: pos_max(&self.yaw_acceleration),
        }
    }

    pub fn inequalities_satisfied(&self) -> bool {
        [&self.velocity, &self.acceleration, &self.yaw_rate, &self.yaw_acceleration]
            .iter()
            .all(|v| v.iter().all(|r| *r <= 0.0))
    }
}

pub fn constraint_residuals(problem: &PlanningProblem, spline: &TrajectorySpline) -> Result<ResidualBundle> {
    problem.check_spline(spline)?;
    let plan = build_discretization(problem.control_points, problem.samples)?;
    let q = &spline.control_points;
    let m = spline.time_regulation;
    let x = plan.apply(0, q);
    let s0 = problem.start.as_array();
    let start = core::array::from_fn(|d| x[0][d] - s0[d]);
    let height = x.iter().map(|p| p[2] - problem.height).collect();
    let mut out = ResidualBundle { start, height, ..ResidualBundle::default() };
    let b = problem.bounds;
    for (order, scale, pos_bound, yaw_bound) in
        [(1usize, m, b.velocity, b.yaw_rate), (2, m * m, b.acceleration, b.yaw_acceleration)]
    {
        let rows = hull_weights(order, problem.hull_basis)?;
        for seg in 0..q.len() - 3 {
            for r in &rows {
                let v = combine(&q[seg..seg + 4], r);
                let speed = scale * libm::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
                let yaw = scale * libm::fabs(v[3]);
                let (pos, ang) = if order == 1 {
                    (&mut out.velocity, &mut out.yaw_rate)
                } else {
                    (&mut out.acceleration, &mut out.yaw_acceleration)
                };
                pos.push(speed - pos_bound);
                ang.push(yaw - yaw_bound);
            }
        }
    }
    Ok(out)
}

#[inline]
fn combine(points: &[Point4], w: &[f64; 4]) -> Point4 {
    let mut out = [0.0; 4];
    for (p, &wi) in points.iter().zip(w) {
        for d in 0..4 {
            out[d] += wi * p[d];
        }
    }
    out
}

/// Wall-clock seconds per phase; left at zero where no clock is available.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Timings {
    pub seed: f64,
    pub solve: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlanResult {
    pub spline: TrajectorySpline,
    pub objective_terms: ObjectiveTerms,
    pub objective: f64,
    pub constraint_report: ConstraintReport,
    /// Outer iterations.
    pub iterations: usize,
    pub inner_iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub timings: Timings,
    /// Merit value of the seed followed by each accepted outer iterate.
    pub merit_history: Vec<f64>,
    pub outer_log: Vec<OuterRecord>,
    /// Largest deviation of the first sample from the start pose over every
    /// iterate the solver evaluated.
    pub start_drift: f64,
    /// Goal pose the objective was measured against, with its yaw moved to
    /// the branch nearest the seed's final yaw.
    pub goal: Pose,
}

/// Summary of one outer iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OuterRecord {
    pub smoothing: f64,
    pub status: SqnStatus,
    pub inner_iterations: usize,
    pub objective: f64,
    pub merit: f64,
    pub max_violation: f64,
    pub penalty: f64,
    pub accepted: bool,
}

/// One smooth inequality `g(Q) ≤ 0` on a hull point.
#[derive(Clone, Copy, Debug)]
struct HullConstraint {
    segment: usize,
    weights: [f64; 4],
    /// `m^order`
    scale: f64,
    bound: f64,
    kind: HullKind,
}

#[derive(Clone, Copy, Debug)]
enum HullKind {
    /// `(s²‖v_xyz‖² − b²) / 2b`, zero exactly where `s‖v_xyz‖ = b`.
    Norm,
    /// `sign · s · v_ψ − b`
    Yaw(f64),
}

impl HullConstraint {
    fn value(&self, q: &[Point4]) -> f64 {
        let v = combine(&q[self.segment..self.segment + 4], &self.weights);
        match self.kind {
            HullKind::Norm => {
                let s2 = self.scale * self.scale;
                (s2 * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]) - self.bound * self.bound) / (2.0 * self.bound)
            }
            HullKind::Yaw(sign) => sign * self.scale * v[3] - self.bound,
        }
    }

    /// Adds `coef · ∇g` to `grad`.
    fn add_grad(&self, q: &[Point4], coef: f64, grad: &mut [Point4]) {
        let v = combine(&q[self.segment..self.segment + 4], &self.weights);
        for (c, &w) in self.weights.iter().enumerate() {
            let row = &mut grad[self.segment + c];
            match self.kind {
                HullKind::Norm => {
                    let f = coef * w * self.scale * self.scale / self.bound;
                    for d in 0..3 {
                        row[d] += f * v[d];
                    }
                }
                HullKind::Yaw(sign) => row[3] += coef * w * sign * self.scale,
            }
        }
    }
}

fn hull_constraints(problem: &PlanningProblem, m: f64) -> Result<Vec<HullConstraint>> {
    let b = problem.bounds;
    let mut out = Vec::new();
    for (order, scale, pos_bound, yaw_bound) in
        [(1usize, m, b.velocity, b.yaw_rate), (2, m * m, b.acceleration, b.yaw_acceleration)]
    {
        let rows = hull_weights(order, problem.hull_basis)?;
        for segment in 0..problem.control_points - 3 {
            for r in &rows {
                let base = HullConstraint { segment, weights: *r, scale, bound: pos_bound, kind: HullKind::Norm };
                out.push(base);
                if !problem.settings.freeze_yaw {
                    for sign in [1.0, -1.0] {
                        out.push(HullConstraint { bound: yaw_bound, kind: HullKind::Yaw(sign), ..base });
                    }
                }
            }
        }
    }
    Ok(out)
}

impl HullConstraint {
    /// Sparse gradient as `(4i + d, value)` entries.
    fn grad_entries(&self, q: &[Point4]) -> Vec<(usize, f64)> {
        let mut g = vec![[0.0; 4]; 4];
        let shifted = HullConstraint { segment: 0, ..*self };
        shifted.add_grad(&q[self.segment..self.segment + 4], 1.0, &mut g);
        let mut out = Vec::with_capacity(12);
        for (c, row) in g.iter().enumerate() {
            for (d, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    out.push((4 * (self.segment + c) + d, v));
                }
            }
        }
        out
    }

    /// Adds `rho ∇g∇gᵀ + t ∇²g` to a row-major Hessian of width `n4`.
    fn add_hessian(&self, q: &[Point4], t: f64, rho: f64, out: &mut [f64], n4: usize) {
        let g = self.grad_entries(q);
        for &(i, gi) in &g {
            for &(j, gj) in &g {
                out[i * n4 + j] += rho * gi * gj;
            }
        }
        if let HullKind::Norm = self.kind {
            let f = t * self.scale * self.scale / self.bound;
            for (a, &wa) in self.weights.iter().enumerate() {
                for (b, &wb) in self.weights.iter().enumerate() {
                    for d in 0..3 {
                        out[(4 * (self.segment + a) + d) * n4 + 4 * (self.segment + b) + d] += f * wa * wb;
                    }
                }
            }
        }
    }
}

/// Maps the free variables to control points. Row 0 is eliminated through
/// the start condition `(q₀ + 4q₁ + q₂)/6 = x_start`; z is fixed to `h`; yaw
/// is fixed to the start yaw when frozen.
#[derive(Clone, Debug)]
struct VariableMap {
    h: usize,
    start: Point4,
    height: f64,
    yaw: Option<f64>,
}

impl VariableMap {
    fn dims(&self) -> usize {
        if self.yaw.is_some() {
            2
        } else {
            3
        }
    }

    fn len(&self) -> usize {
        (self.h - 1) * self.dims()
    }

    fn columns(&self) -> &'static [usize] {
        if self.yaw.is_some() {
            &[0, 1]
        } else {
            &[0, 1, 3]
        }
    }

    fn pack(&self, q: &[Point4]) -> Vec<f64> {
        let cols = self.columns();
        q[1..].iter().flat_map(|r| cols.iter().map(move |&c| r[c])).collect()
    }

    fn unpack(&self, z: &[f64]) -> Vec<Point4> {
        let cols = self.columns();
        let mut q = vec![[0.0; 4]; self.h];
        for (i, row) in q.iter_mut().enumerate().skip(1) {
            let off = (i - 1) * cols.len();
            row[2] = self.height;
            if let Some(y) = self.yaw {
                row[3] = y;
            }
            for (k, &c) in cols.iter().enumerate() {
                row[c] = z[off + k];
            }
        }
        let (q1, q2) = (q[1], q[2]);
        for d in 0..4 {
            q[0][d] = 6.0 * self.start[d] - 4.0 * q1[d] - q2[d];
        }
        q
    }

    /// Control-point entries `(4i + d, coefficient)` that variable `v` enters.
    fn column(&self, v: usize) -> [(usize, f64); 2] {
        let cols = self.columns();
        let i = v / cols.len() + 1;
        let c = cols[v % cols.len()];
        let chain = match i {
            1 => -4.0,
            2 => -1.0,
            _ => 0.0,
        };
        [(4 * i + c, 1.0), (c, chain)]
    }

    /// `Aᵀ H A` for the linear map `A` from free variables to control points.
    fn pull_back_hessian(&self, hq: &[f64]) -> Vec<f64> {
        let n = self.len();
        let n4 = 4 * self.h;
        let cols: Vec<[(usize, f64); 2]> = (0..n).map(|v| self.column(v)).collect();
        let mut out = vec![0.0; n * n];
        for (a, ca) in cols.iter().enumerate() {
            for (b, cb) in cols.iter().enumerate().skip(a) {
                let mut s = 0.0;
                for &(i, wi) in ca {
                    if wi == 0.0 {
                        continue;
                    }
                    for &(j, wj) in cb {
                        if wj != 0.0 {
                            s += wi * wj * hq[i * n4 + j];
                        }
                    }
                }
                out[a * n + b] = s;
                out[b * n + a] = s;
            }
        }
        out
    }

    /// Chain rule from a control-point gradient to the free variables.
    fn pull_back(&self, g: &[Point4], out: &mut [f64]) {
        let cols = self.columns();
        for i in 1..self.h {
            let chain = match i {
                1 => -4.0,
                2 => -1.0,
                _ => 0.0,
            };
            let off = (i - 1) * cols.len();
            for (k, &c) in cols.iter().enumerate() {
                out[off + k] = g[i][c] + chain * g[0][c];
            }
        }
    }
}

/// Per-sample cull sets that follow the samples, rebuilt when a sample's
/// bodies move farther than the margin from where its set was built.
struct MovingCulls {
    anchors: Vec<Pose>,
    sets: Vec<CullSet>,
    reach: f64,
    margin: f64,
    rebuilds: usize,
}

impl MovingCulls {
    fn new(problem: &PlanningProblem, poses: &[Pose]) -> Result<Self> {
        let margin = problem.settings.cull_margin;
        let reach = problem
            .robot
            .bodies
            .iter()
            .map(|b| libm::sqrt(b.offset[0] * b.offset[0] + b.offset[1] * b.offset[1]))
            .fold(0.0, f64::max);
        Ok(Self {
            anchors: poses.to_vec(),
            sets: sample_cull_sets(problem, poses, margin)?,
            reach,
            margin,
            rebuilds: 0,
        })
    }

    fn refresh(&mut self, problem: &PlanningProblem, poses: &[Pose]) -> Result<()> {
        for (k, p) in poses.iter().enumerate() {
            let a = &self.anchors[k];
            let dp = crate::linalg::norm(crate::linalg::sub(p.position, a.position));
            if dp + self.reach * libm::fabs(p.yaw - a.yaw) > self.margin {
                self.sets[k] = build_cull_set_with_margin(
                    problem.scene,
                    problem.robot,
                    core::slice::from_ref(p),
                    problem.settings.cull_cutoff,
                    self.margin,
                )?;
                self.anchors[k] = *p;
                self.rebuilds += 1;
            }
        }
        Ok(())
    }
}

/// Minimizes the weighted objective from `initial`, keeping its time
/// regulation. The start condition is eliminated, z is pinned to `h`, and
/// the hull inequalities are handled by an augmented Lagrangian.
pub fn optimize(problem: &PlanningProblem, initial: &TrajectorySpline, exec: &dyn BatchExecutor) -> Result<PlanResult> {
    problem.validate()?;
    problem.check_spline(initial)?;
    let st = problem.settings;
    let m = initial.time_regulation;
    let h = problem.control_points;
    let plan = build_discretization(h, problem.samples)?;

    // Start pose with z = h, and the goal yaw on the branch nearest the seed's
    // final yaw.
    let mut problem = problem.clone();
    let mut start = problem.start.as_array();
    start[2] = problem.height;
    let seed_end = plan.apply(0, &initial.control_points)[problem.samples - 1][3];
    let turns = libm::round((seed_end - problem.goal.yaw) / core::f64::consts::TAU);
    problem.goal = Pose::unwrapped(problem.goal.position, problem.goal.yaw + turns * core::f64::consts::TAU);
    let problem = &problem;

    let map = VariableMap { h, start, height: problem.height, yaw: st.freeze_yaw.then_some(start[3]) };
    let mut q0 = initial.control_points.clone();
    if let Some(y) = map.yaw {
        q0.iter_mut().for_each(|r| r[3] = y);
    }
    let mut z = map.pack(&q0);
    let constraints = hull_constraints(problem, m)?;
    let mut lambda = vec![0.0; constraints.len()];
    let mut rho = st.penalty_init;
    let spline_of = |z: &[f64]| TrajectorySpline { control_points: map.unpack(z), time_regulation: m };
    let mut culls = MovingCulls::new(problem, &sample_poses(&plan, &map.unpack(&z)))?;

    let violations = |q: &[Point4]| -> (f64, f64) {
        let mut sum = 0.0;
        let mut max = 0.0f64;
        for c in &constraints {
            let g = c.value(q).max(0.0);
            sum += g;
            max = max.max(g);
        }
        (sum, max)
    };
    let objective_at = |z: &[f64], culls: &mut MovingCulls| -> Result<f64> {
        let s = spline_of(z);
        culls.refresh(problem, &sample_poses(&plan, &s.control_points))?;
        let e = evaluate(problem, &plan, &s, CollisionMode::PerSample(&culls.sets), exec, st.smoothing)?;
        Ok(e.terms.weighted(&problem.weights))
    };

    let f_init = objective_at(&z, &mut culls)?;
    if !f_init.is_finite() {
        return Err(Error::Parameter(format!("objective at the initial guess is {f_init}")));
    }
    let (viol_sum, mut viol_max) = violations(&map.unpack(&z));
    let mut best_vmax = viol_max;
    let mut best_z = z.clone();
    let mut best_merit = f_init + st.merit_penalty * viol_sum;
    let mut best_f = f_init;
    let mut merit_history = vec![best_merit];
    let mut outer_log = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut inner_iterations = 0;
    let mut evaluations = 1;
    let inner = SqnSettings { max_iterations: st.max_inner, gtol: st.inner_gtol, ..SqnSettings::default() };
    let n4 = 4 * h;
    let mut start_drift = 0.0f64;

    for outer in 0..st.max_outer {
        iterations += 1;
        // Norm smoothing starts coarse and shrinks to its final value.
        let eps = st.smoothing_start * libm::pow(0.1, outer as f64);
        let eps = if eps < st.smoothing * (1.0 + 1e-9) { st.smoothing } else { eps };
        let report = sqn::minimize(
            &mut z,
            |zz: &[f64]| -> Result<Evaluation> {
                let s = spline_of(zz);
                let q = &s.control_points;
                for d in 0..4 {
                    let first = (q[0][d] + 4.0 * q[1][d] + q[2][d]) / 6.0;
                    start_drift = start_drift.max(libm::fabs(first - start[d]));
                }
                culls.refresh(problem, &sample_poses(&plan, q))?;
                let e = evaluate(problem, &plan, &s, CollisionMode::PerSample(&culls.sets), exec, eps)?;
                let mut value = e.terms.weighted(&problem.weights);
                let mut g_smooth = vec![[0.0; 4]; h];
                e.smooth_grad(problem, &plan, m, &mut g_smooth);
                let mut hq = vec![0.0; n4 * n4];
                e.smooth_hessian(problem, &plan, m, &mut hq);
                for (c, &l) in constraints.iter().zip(&lambda) {
                    let g = c.value(q);
                    let t = l + rho * g;
                    if t > 0.0 {
                        value += (t * t - l * l) / (2.0 * rho);
                        c.add_grad(q, t, &mut g_smooth);
                        c.add_hessian(q, t, rho, &mut hq, n4);
                    } else {
                        value -= l * l / (2.0 * rho);
                    }
                }
                let mut g_coll = vec![[0.0; 4]; h];
                e.collision_grad(&plan, &mut g_coll);
                let mut grad = vec![0.0; map.len()];
                let mut secant_grad = vec![0.0; map.len()];
                map.pull_back(&g_smooth, &mut grad);
                map.pull_back(&g_coll, &mut secant_grad);
                grad.iter_mut().zip(&secant_grad).for_each(|(a, b)| *a += b);
                Ok(Evaluation { value, grad, secant_grad, hessian: map.pull_back_hessian(&hq) })
            },
            &inner,
        )?;
        inner_iterations += report.iterations;
        evaluations += report.evaluations;
        if z.iter().any(|v| !v.is_finite()) {
            z.clone_from(&best_z);
            break;
        }

        let q = map.unpack(&z);
        let f = objective_at(&z, &mut culls)?;
        evaluations += 1;
        let (viol_sum, vmax) = violations(&q);
        let merit = f + st.merit_penalty * viol_sum;
        let accepted = merit.is_finite() && merit <= best_merit;
        let f_prev = best_f;
        if accepted {
            best_merit = merit;
            best_z.clone_from(&z);
            best_f = f;
            best_vmax = vmax;
            merit_history.push(merit);
        }
        outer_log.push(OuterRecord {
            smoothing: eps,
            status: report.status,
            inner_iterations: report.iterations,
            objective: f,
            merit,
            max_violation: vmax,
            penalty: rho,
            accepted,
        });
        let inner_done = !matches!(report.status, SqnStatus::MaxIterations);
        let active = lambda.iter().any(|l| *l > 0.0);
        // A rejected step that changed nothing leaves the retained iterate as
        // the candidate.
        let settled = libm::fabs(f - f_prev) <= 1e-6 * f.abs().max(1.0);
        if eps == st.smoothing && best_vmax <= st.ineq_tol && inner_done && (!active || settled) {
            converged = true;
            break;
        }
        for (c, l) in constraints.iter().zip(lambda.iter_mut()) {
            *l = (*l + rho * c.value(&q)).max(0.0);
        }
        if vmax > st.ineq_tol && vmax > 0.25 * viol_max {
            rho = (rho * st.penalty_growth).min(st.penalty_max);
        }
        viol_max = vmax;
        if !accepted {
            z.clone_from(&best_z);
        }
    }

    let spline = spline_of(&best_z);
    let objective_terms = objective_terms(problem, &spline, exec)?;
    let constraint_report = constraint_residuals(problem, &spline)?.report();
    let converged =
        converged && constraint_report.max_equality() <= st.eq_tol && constraint_report.max_inequality() <= st.ineq_tol;
    Ok(PlanResult {
        objective: objective_terms.weighted(&problem.weights),
        spline,
        objective_terms,
        constraint_report,
        iterations,
        inner_iterations,
        evaluations,
        converged,
        timings: Timings::default(),
        merit_history,
        outer_log,
        start_drift,
        goal: problem.goal,
    })
}
