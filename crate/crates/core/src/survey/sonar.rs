use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::terrain::Terrain;
use crate::error::{Error, Result};
use crate::geometry::Pose6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MbesConfig {
    pub n_beams: usize,
    /// Full across-track opening angle (degrees).
    pub swath_deg: f64,
    pub max_range: f64,
    /// Diagonal of the sensor-frame noise covariance `Q` (m²).
    pub noise_diag: [f64; 3],
    /// Smallest ray-marching step (m).
    pub min_step: f64,
}

impl Default for MbesConfig {
    fn default() -> Self {
        Self {
            n_beams: 64,
            swath_deg: 120.0,
            max_range: 150.0,
            noise_diag: [0.01; 3],
            min_step: 0.05,
        }
    }
}

impl MbesConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_beams == 0 {
            return Err(Error::InvalidArgument("n_beams must be at least 1".into()));
        }
        if !(self.swath_deg >= 0.0 && self.swath_deg < 180.0) {
            return Err(Error::InvalidArgument("swath_deg must lie in [0, 180)".into()));
        }
        if !(self.max_range > 0.0 && self.min_step > 0.0) || self.noise_diag.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidArgument("invalid MBES range, step or noise".into()));
        }
        Ok(())
    }

    /// Unit beam directions in the sensor frame (x forward, y port, z up):
    /// an across-track fan `(0, sin θ, −cos θ)`.
    pub fn beam_directions(&self) -> Vec<Vector3<f64>> {
        let half = 0.5 * self.swath_deg.to_radians();
        (0..self.n_beams)
            .map(|i| {
                let theta = if self.n_beams == 1 {
                    0.0
                } else {
                    -half + 2.0 * half * i as f64 / (self.n_beams - 1) as f64
                };
                Vector3::new(0.0, theta.sin(), -theta.cos())
            })
            .collect()
    }
}

const BISECTION_ITERS: usize = 200;

/// Range along `dir` (unit) from `origin` to the first crossing of the
/// height field, or `None` if the ray leaves the terrain box or exceeds
/// `max_range` first, or starts below the seabed.
///
/// Marching steps are `f / L` with `f` the height above the seabed and `L` a
/// Lipschitz bound on its rate of change, so no crossing is skipped; the
/// bracket is then refined by bisection.
pub fn cast_ray(
    terrain: &Terrain,
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
    max_range: f64,
    min_step: f64,
) -> Option<f64> {
    let clearance = |s: f64| {
        let p = origin + dir * s;
        (p.z - terrain.height(p.x, p.y), p)
    };
    let inside = |p: &Vector3<f64>| terrain.bbox.contains(p.x, p.y);
    let lipschitz = dir.z.abs() + terrain.slope_bound() * dir.x.hypot(dir.y);
    let (mut f_prev, p0) = clearance(0.0);
    if f_prev <= 0.0 || !inside(&p0) || lipschitz <= 0.0 {
        return None;
    }
    let mut s_prev = 0.0;
    loop {
        let s = (s_prev + (f_prev / lipschitz).max(min_step)).min(max_range);
        let (f, p) = clearance(s);
        if !inside(&p) {
            return None;
        }
        if f <= 0.0 {
            let (mut lo, mut hi) = (s_prev, s);
            for _ in 0..BISECTION_ITERS {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if clearance(mid).0 > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            return Some(0.5 * (lo + hi));
        }
        if s >= max_range {
            return None;
        }
        s_prev = s;
        f_prev = f;
    }
}

/// One multibeam ping. All beam lists have equal length and order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ping {
    pub time: f64,
    /// Index of the trajectory record this ping was taken at.
    pub pose_index: usize,
    /// Noisy returns in the sensor frame.
    pub sensor: Vec<Vector3<f64>>,
    /// Noisy returns georeferenced with the dead-reckoned pose.
    pub beams: Vec<Vector3<f64>>,
    /// Noise-free seabed hits in the map frame.
    pub truth: Vec<Vector3<f64>>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BeamStats {
    pub cast: usize,
    pub dropped: usize,
}

/// Casts the fan from the true pose, perturbs each return by `N(0, Q)` in the
/// sensor frame and georeferences it with the dead-reckoned pose.
pub fn take_ping<R: Rng + ?Sized>(
    terrain: &Terrain,
    gt: &Pose6,
    dr: &Pose6,
    directions: &[Vector3<f64>],
    config: &MbesConfig,
    rng: &mut R,
    stats: &mut BeamStats,
) -> (Vec<Vector3<f64>>, Vec<Vector3<f64>>, Vec<Vector3<f64>>) {
    let q = config.noise_diag.map(f64::sqrt);
    let mut sensor = Vec::with_capacity(directions.len());
    let mut beams = Vec::with_capacity(directions.len());
    let mut truth = Vec::with_capacity(directions.len());
    for d in directions {
        stats.cast += 1;
        let world_dir = gt.rotation * d;
        // Noise is drawn for every beam so that the random stream does not
        // depend on which beams hit.
        let e = Vector3::new(
            q[0] * rng.sample::<f64, _>(StandardNormal),
            q[1] * rng.sample::<f64, _>(StandardNormal),
            q[2] * rng.sample::<f64, _>(StandardNormal),
        );
        match cast_ray(terrain, &gt.translation, &world_dir, config.max_range, config.min_step) {
            Some(range) => {
                let local = d * range;
                let noisy = local + e;
                truth.push(gt.transform_point(&local));
                beams.push(dr.transform_point(&noisy));
                sensor.push(noisy);
            }
            None => stats.dropped += 1,
        }
    }
    (sensor, beams, truth)
}
