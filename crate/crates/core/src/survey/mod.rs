//! Synthetic bathymetric surveys: analytic terrain, lawnmower trajectory
//! with dead-reckoning drift, multibeam pings and uncertain-input datasets.

mod dataset;
mod io;
mod sonar;
mod terrain;
mod trajectory;

pub use dataset::{build_dataset, split_survey, PropagationConfig, SplitMasks};
pub use io::{
    decode_dataset, encode_dataset, read_dataset, read_point_cloud, read_survey, trajectory_csv, write_dataset,
    write_point_cloud, write_survey, write_trajectory_csv, DATASET_MAGIC,
};
pub use sonar::{cast_ray, take_ping, BeamStats, MbesConfig, Ping};
pub use terrain::{generate_terrain, BoundingBox, Bump, Terrain, TerrainConfig, Wave};
pub use trajectory::{
    arc_displacement, lawnmower, motion_step, simulate_trajectory, transect, Control, DriftConfig, Plan, PlanConfig,
    PlanarState, Trajectory, TrajectoryPoint,
};

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurveyConfig {
    pub terrain: TerrainConfig,
    pub plan: PlanConfig,
    pub mbes: MbesConfig,
    pub drift: DriftConfig,
}

/// Everything a simulated survey produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurveyDataset {
    pub terrain: Terrain,
    pub trajectory: Trajectory,
    pub pings: Vec<Ping>,
    pub stats: BeamStats,
}

impl SurveyDataset {
    pub fn num_beams(&self) -> usize {
        self.pings.iter().map(|p| p.beams.len()).sum()
    }

    /// Dead-reckoned point cloud, ping by ping.
    pub fn beams(&self) -> impl Iterator<Item = &Vector3<f64>> {
        self.pings.iter().flat_map(|p| p.beams.iter())
    }

    pub fn truth(&self) -> impl Iterator<Item = &Vector3<f64>> {
        self.pings.iter().flat_map(|p| p.truth.iter())
    }
}

/// Flies `plan` over `terrain`, pinging at every trajectory record. Drift
/// and sensor noise use separate random streams of `seed`.
pub fn simulate_plan(terrain: &Terrain, plan: &Plan, config: &SurveyConfig, seed: u64) -> Result<SurveyDataset> {
    config.mbes.validate()?;
    let mut drift_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sensor_rng = ChaCha8Rng::seed_from_u64(seed);
    sensor_rng.set_stream(1);
    let trajectory = simulate_trajectory(plan, &config.plan, &config.drift, &mut drift_rng)?;
    let start = plan.start;
    let floor = terrain.height(start.x, start.y);
    if start.z <= floor {
        return Err(Error::InvalidArgument(format!(
            "vehicle z {} starts below the seabed at {floor}",
            start.z
        )));
    }
    let directions = config.mbes.beam_directions();
    let mut stats = BeamStats::default();
    let pings = trajectory
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let (sensor, beams, truth) =
                take_ping(terrain, &p.gt, &p.dr, &directions, &config.mbes, &mut sensor_rng, &mut stats);
            Ping {
                time: p.time,
                pose_index: i,
                sensor,
                beams,
                truth,
            }
        })
        .collect();
    Ok(SurveyDataset {
        terrain: terrain.clone(),
        trajectory,
        pings,
        stats,
    })
}

/// Lawnmower survey of the whole terrain box.
pub fn simulate_survey(terrain: &Terrain, config: &SurveyConfig, seed: u64) -> Result<SurveyDataset> {
    let plan = lawnmower(&terrain.bbox, &config.plan)?;
    simulate_plan(terrain, &plan, config, seed)
}
