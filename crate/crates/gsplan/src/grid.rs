//! Occupancy grid dump: TOML with the grid geometry and run lengths of the
//! occupancy in x-fastest order, alternating free and occupied, free first.

use std::path::Path;

use gsplan_core::seed::OccupancyGrid;
use serde::{Deserialize, Serialize};

use crate::error::{io, Error, Result};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridDump {
    dims: [usize; 3],
    voxel_size: f64,
    origin: [f64; 3],
    occupied: usize,
    runs: Vec<usize>,
}

pub fn grid_to_text(grid: &OccupancyGrid) -> Result<String> {
    let dump = GridDump {
        dims: grid.dims,
        voxel_size: grid.voxel_size,
        origin: grid.origin,
        occupied: grid.occupied_count(),
        runs: grid.run_lengths(),
    };
    let body = toml::to_string(&dump).map_err(|e| Error::Export(e.to_string()))?;
    Ok(format!("# gsplan occupancy grid\n{body}"))
}

pub fn parse_grid(text: &str) -> Result<OccupancyGrid> {
    let d: GridDump = toml::from_str(text).map_err(|e| Error::Export(e.to_string()))?;
    let mut grid = OccupancyGrid::new(d.origin, d.voxel_size, d.dims);
    let total: usize = d.runs.iter().sum();
    if total != grid.voxel_count() {
        return Err(Error::Export(format!("runs cover {total} voxels, grid has {}", grid.voxel_count())));
    }
    let mut at = 0;
    for (k, &len) in d.runs.iter().enumerate() {
        if k % 2 == 1 {
            for i in at..at + len {
                grid.set_occupied(grid.unlinear(i));
            }
        }
        at += len;
    }
    if grid.occupied_count() != d.occupied {
        return Err(Error::Export(format!(
            "runs give {} occupied voxels, header says {}",
            grid.occupied_count(),
            d.occupied
        )));
    }
    Ok(grid)
}

pub fn write_grid(path: &Path, grid: &OccupancyGrid) -> Result<()> {
    std::fs::write(path, grid_to_text(grid)?).map_err(io(path))
}

pub fn read_grid(path: &Path) -> Result<OccupancyGrid> {
    parse_grid(&std::fs::read_to_string(path).map_err(io(path))?)
}
