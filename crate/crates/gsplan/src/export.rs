//! Line-oriented trajectory export: a TOML metadata block whose lines start
//! with `#! `, then one whitespace-separated sample per line.

use std::fmt::Write as _;
use std::path::Path;

use gsplan_core::bspline::TrajectorySpline;
use serde::{Deserialize, Serialize};

use crate::config::PlanConfig;
use crate::error::{io, Error, Result};

pub const FORMAT_VERSION: u32 = 1;
const META_PREFIX: &str = "#! ";
const COLUMNS: &str = "# time x y z yaw vx vy vz collision";

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleRow {
    pub time: f64,
    pub position: [f64; 3],
    pub yaw: f64,
    pub velocity: [f64; 3],
    pub collision: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultInfo {
    pub converged: bool,
    pub iterations: usize,
    pub inner_iterations: usize,
    pub evaluations: usize,
    pub objective: f64,
    pub collision: f64,
    pub jerk: f64,
    pub goal: f64,
    pub start_drift: f64,
    /// Largest violation per family: start, height, velocity, acceleration,
    /// yaw rate, yaw acceleration.
    pub constraints: [f64; 6],
    pub validation_pass: bool,
    pub min_clearance: f64,
    pub penetrations: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingInfo {
    pub seed: f64,
    pub solve: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExportMeta {
    pub format: u32,
    pub version: String,
    pub scene_path: String,
    pub scene_gaussians: usize,
    pub robot: String,
    pub bodies: usize,
    pub run_seed: u64,
    pub start: [f64; 4],
    pub goal: [f64; 4],
    /// Goal as measured by the objective, yaw on the unwrapped branch.
    pub goal_effective: [f64; 4],
    pub time_regulation: f64,
    pub control_points: Vec<[f64; 4]>,
    pub result: ResultInfo,
    pub timings: TimingInfo,
    pub config: PlanConfig,
}

impl ExportMeta {
    pub fn spline(&self) -> gsplan_core::Result<TrajectorySpline> {
        TrajectorySpline::new(self.control_points.clone(), self.time_regulation)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryExport {
    pub meta: ExportMeta,
    pub samples: Vec<SampleRow>,
}

impl TrajectoryExport {
    pub fn to_text(&self) -> Result<String> {
        let meta = toml::to_string(&self.meta).map_err(|e| Error::Export(e.to_string()))?;
        let mut out = String::from("# gsplan trajectory\n");
        for line in meta.lines() {
            out.push_str(META_PREFIX);
            out.push_str(line);
            out.push('\n');
        }
        out.push_str(COLUMNS);
        out.push('\n');
        for s in &self.samples {
            let p = s.position;
            let v = s.velocity;
            writeln!(
                out,
                "{:?} {:?} {:?} {:?} {:?} {:?} {:?} {:?} {:?}",
                s.time, p[0], p[1], p[2], s.yaw, v[0], v[1], v[2], s.collision
            )
            .unwrap();
        }
        Ok(out)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut meta = String::new();
        let mut samples = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if let Some(m) = line.strip_prefix(META_PREFIX).or_else(|| (line == "#!").then_some("")) {
                meta.push_str(m);
                meta.push('\n');
                continue;
            }
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let v: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Export(format!("line {}: {e}", n + 1)))?;
            if v.len() != 9 {
                return Err(Error::Export(format!("line {}: expected 9 columns, found {}", n + 1, v.len())));
            }
            samples.push(SampleRow {
                time: v[0],
                position: [v[1], v[2], v[3]],
                yaw: v[4],
                velocity: [v[5], v[6], v[7]],
                collision: v[8],
            });
        }
        if meta.is_empty() {
            return Err(Error::Export("no metadata header".into()));
        }
        let meta: ExportMeta = toml::from_str(&meta).map_err(|e| Error::Export(e.to_string()))?;
        if meta.format != FORMAT_VERSION {
            return Err(Error::Export(format!("format {} is not supported", meta.format)));
        }
        if samples.windows(2).any(|w| w[1].time.partial_cmp(&w[0].time) != Some(core::cmp::Ordering::Greater)) {
            return Err(Error::Export("sample times are not strictly increasing".into()));
        }
        Ok(Self { meta, samples })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()?).map_err(io(path))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path).map_err(io(path))?)
    }
}
