//! TOML robot definitions and planner configuration.

use std::path::Path;

use gsplan_core::optimizer::{Bounds, SolverSettings, Weights};
use gsplan_core::seed::{Connectivity, SeedParams};
use gsplan_core::splat::{OpacityPolicy, RobotBody, RobotModel};
use gsplan_core::validate::ValidationThresholds;
use serde::{Deserialize, Serialize};

use crate::error::{io, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BodyFile {
    pub offset: [f64; 3],
    pub cov: [[f64; 3]; 3],
    #[serde(default = "one")]
    pub weight: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotFile {
    pub name: String,
    #[serde(default)]
    pub bodies: Vec<BodyFile>,
}

impl RobotFile {
    pub fn from_model(robot: &RobotModel) -> Self {
        Self {
            name: robot.name.clone(),
            bodies: robot.bodies.iter().map(|b| BodyFile { offset: b.offset, cov: b.cov, weight: b.weight }).collect(),
        }
    }

    pub fn to_model(&self) -> gsplan_core::Result<RobotModel> {
        let bodies = self.bodies.iter().map(|b| RobotBody { offset: b.offset, cov: b.cov, weight: b.weight }).collect();
        RobotModel::new(self.name.clone(), bodies)
    }
}

pub fn parse_robot(text: &str, path: &Path) -> Result<RobotModel> {
    let file: RobotFile =
        toml::from_str(text).map_err(|e| Error::Config { path: path.to_path_buf(), message: e.to_string() })?;
    Ok(file.to_model()?)
}

pub fn load_robot_model(path: &Path) -> Result<RobotModel> {
    let text = std::fs::read_to_string(path).map_err(io(path))?;
    parse_robot(&text, path)
}

pub fn write_robot_model(path: &Path, robot: &RobotModel) -> Result<()> {
    let text = toml::to_string(&RobotFile::from_model(robot))
        .map_err(|e| Error::Config { path: path.to_path_buf(), message: e.to_string() })?;
    std::fs::write(path, text).map_err(io(path))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSection {
    pub opacity_threshold: f64,
    pub opacity_as_weight: bool,
}

impl Default for SceneSection {
    fn default() -> Self {
        let p = OpacityPolicy::default();
        Self { opacity_threshold: p.threshold, opacity_as_weight: p.opacity_as_weight }
    }
}

impl SceneSection {
    pub fn policy(&self) -> OpacityPolicy {
        OpacityPolicy { threshold: self.opacity_threshold, opacity_as_weight: self.opacity_as_weight }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeedSection {
    pub voxel_size: f64,
    pub inflation: usize,
    pub connectivity: u32,
    /// Largest departure from the trajectory height A* may take; negative
    /// searches the full grid.
    pub max_climb: f64,
    pub snap_radius: usize,
    pub voxel_cap: u64,
    pub yaw_blend: f64,
    pub region_margin: f64,
}

impl Default for SeedSection {
    fn default() -> Self {
        let p = SeedParams::default();
        Self {
            voxel_size: p.voxel_size,
            inflation: p.inflation,
            connectivity: match p.connectivity {
                Connectivity::Six => 6,
                Connectivity::TwentySix => 26,
            },
            max_climb: p.max_climb.unwrap_or(-1.0),
            snap_radius: p.snap_radius,
            voxel_cap: p.voxel_cap,
            yaw_blend: p.yaw_blend,
            region_margin: p.region_margin,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub eq_tol: f64,
    pub ineq_tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub inner_gtol: f64,
    pub penalty_init: f64,
    pub penalty_growth: f64,
    pub penalty_max: f64,
    pub merit_penalty: f64,
    pub smoothing: f64,
    pub smoothing_start: f64,
    pub cull_cutoff: f64,
    pub cull_margin: f64,
    pub freeze_yaw: bool,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self::from(&SolverSettings::default())
    }
}

impl From<&SolverSettings> for SolverSection {
    fn from(s: &SolverSettings) -> Self {
        Self {
            eq_tol: s.eq_tol,
            ineq_tol: s.ineq_tol,
            max_outer: s.max_outer,
            max_inner: s.max_inner,
            inner_gtol: s.inner_gtol,
            penalty_init: s.penalty_init,
            penalty_growth: s.penalty_growth,
            penalty_max: s.penalty_max,
            merit_penalty: s.merit_penalty,
            smoothing: s.smoothing,
            smoothing_start: s.smoothing_start,
            cull_cutoff: s.cull_cutoff,
            cull_margin: s.cull_margin,
            freeze_yaw: s.freeze_yaw,
        }
    }
}

impl SolverSection {
    pub fn settings(&self) -> SolverSettings {
        SolverSettings {
            eq_tol: self.eq_tol,
            ineq_tol: self.ineq_tol,
            max_outer: self.max_outer,
            max_inner: self.max_inner,
            inner_gtol: self.inner_gtol,
            penalty_init: self.penalty_init,
            penalty_growth: self.penalty_growth,
            penalty_max: self.penalty_max,
            merit_penalty: self.merit_penalty,
            smoothing: self.smoothing,
            smoothing_start: self.smoothing_start,
            cull_cutoff: self.cull_cutoff,
            cull_margin: self.cull_margin,
            freeze_yaw: self.freeze_yaw,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidationSection {
    pub collision_peak: f64,
    pub sigma_scale: f64,
    pub goal_position: f64,
    pub goal_yaw: f64,
    pub bound_slack: f64,
    pub height: f64,
    /// Largest body displacement between validation samples, meters.
    pub spacing: f64,
}

impl Default for ValidationSection {
    fn default() -> Self {
        let t = ValidationThresholds::default();
        Self {
            collision_peak: t.collision_peak,
            sigma_scale: t.sigma_scale,
            goal_position: t.goal_position,
            goal_yaw: t.goal_yaw,
            bound_slack: t.bound_slack,
            height: t.height,
            spacing: 0.05,
        }
    }
}

impl ValidationSection {
    pub fn thresholds(&self) -> ValidationThresholds {
        ValidationThresholds {
            collision_peak: self.collision_peak,
            sigma_scale: self.sigma_scale,
            goal_position: self.goal_position,
            goal_yaw: self.goal_yaw,
            bound_slack: self.bound_slack,
            height: self.height,
        }
    }
}

/// `[w1, w2, w3]`: collision, jerk, goal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightList(pub [f64; 3]);

impl Default for WeightList {
    fn default() -> Self {
        let w = Weights::default();
        Self([w.collision, w.jerk, w.goal])
    }
}

impl WeightList {
    pub fn weights(&self) -> Weights {
        Weights { collision: self.0[0], jerk: self.0[1], goal: self.0[2] }
    }
}

/// `[v, a, ω, α]`
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundList(pub [f64; 4]);

impl Default for BoundList {
    fn default() -> Self {
        let b = Bounds::default();
        Self([b.velocity, b.acceleration, b.yaw_rate, b.yaw_acceleration])
    }
}

impl BoundList {
    pub fn bounds(&self) -> Bounds {
        Bounds { velocity: self.0[0], acceleration: self.0[1], yaw_rate: self.0[2], yaw_acceleration: self.0[3] }
    }
}

/// Everything `plan` reads from a config file. Command-line flags override
/// the matching fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanConfig {
    pub height: f64,
    pub weights: WeightList,
    pub bounds: BoundList,
    pub control_points: usize,
    pub samples: usize,
    pub hull: String,
    pub scene: SceneSection,
    pub seed: SeedSection,
    pub solver: SolverSection,
    pub validation: ValidationSection,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            height: 0.5,
            weights: WeightList::default(),
            bounds: BoundList::default(),
            control_points: 20,
            samples: 64,
            hull: "minvo".into(),
            scene: SceneSection::default(),
            seed: SeedSection::default(),
            solver: SolverSection::default(),
            validation: ValidationSection::default(),
        }
    }
}

impl PlanConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io(path))?;
        toml::from_str(&text).map_err(|e| Error::Config { path: path.to_path_buf(), message: e.to_string() })
    }

    /// Seed parameters; speed limits come from the planner bounds.
    pub fn seed_params(&self) -> gsplan_core::Result<SeedParams> {
        let s = &self.seed;
        Ok(SeedParams {
            voxel_size: s.voxel_size,
            inflation: s.inflation,
            connectivity: Connectivity::try_from(s.connectivity)?,
            height: self.height,
            control_points: self.control_points,
            v_max: self.bounds.0[0],
            omega_max: self.bounds.0[2],
            max_climb: (s.max_climb >= 0.0).then_some(s.max_climb),
            snap_radius: s.snap_radius,
            voxel_cap: s.voxel_cap,
            yaw_blend: s.yaw_blend,
            region_margin: s.region_margin,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn robot_file_round_trip() {
        let robot = RobotModel::anymal();
        let text = toml::to_string(&RobotFile::from_model(&robot)).unwrap();
        assert_eq!(parse_robot(&text, Path::new("x")).unwrap(), robot);
    }

    #[test]
    fn config_defaults_and_partial_override() {
        let c: PlanConfig = toml::from_str("samples = 32\n[solver]\nmax_outer = 5\n").unwrap();
        assert_eq!(c.samples, 32);
        assert_eq!(c.solver.max_outer, 5);
        assert_eq!(c.solver.smoothing, SolverSettings::default().smoothing);
        assert_eq!(c.seed_params().unwrap().control_points, 20);
        assert!(toml::from_str::<PlanConfig>("bogus = 1").is_err());
    }
}
