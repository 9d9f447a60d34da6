use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::terrain::BoundingBox;
use super::SurveyDataset;
use crate::error::{Error, Result};
use crate::geometry::{PoseCovariance, SigmaSet, DEFAULT_KAPPA};
use crate::optim::InputMode;
use crate::svgp::UncertainInput;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PropagationConfig {
    pub kappa: f64,
    /// Diagonal of the seabed patch covariance `Ω` (m²).
    pub patch_cov_diag: [f64; 3],
}

impl Default for PropagationConfig {
    fn default() -> Self {
        Self {
            kappa: DEFAULT_KAPPA,
            patch_cov_diag: [0.01; 3],
        }
    }
}

/// One uncertain input per beam, in ping order. DI mode keeps the
/// dead-reckoned beam position with zero covariance; UI mode propagates the
/// EKF pose covariance at the ping and `Ω` through the sigma-point transform
/// and keeps the xy block. The depth target is the beam z in both modes.
pub fn build_dataset(
    survey: &SurveyDataset,
    mode: InputMode,
    config: &PropagationConfig,
) -> Result<Vec<UncertainInput>> {
    let mut out = Vec::with_capacity(survey.num_beams());
    let omega = Matrix3::from_diagonal(&Vector3::from_row_slice(&config.patch_cov_diag));
    for ping in &survey.pings {
        match mode {
            InputMode::Di => out.extend(
                ping.beams
                    .iter()
                    .map(|b| UncertainInput::deterministic([b.x, b.y], b.z)),
            ),
            InputMode::Ui => {
                let point = survey.trajectory.points.get(ping.pose_index).ok_or_else(|| {
                    Error::InvalidArgument(format!("ping references missing pose {}", ping.pose_index))
                })?;
                let cov = PoseCovariance::from_additive(&point.ekf_cov, &point.dr)?;
                let set = SigmaSet::new(&cov, &omega, config.kappa)?;
                for b in &ping.beams {
                    let d = set.propagate(b);
                    let c = d.covariance;
                    out.push(UncertainInput {
                        mean_xy: [d.mean.x, d.mean.y],
                        cov_xy: [[c[(0, 0)], c[(0, 1)]], [c[(1, 0)], c[(1, 1)]]],
                        depth: b.z,
                    });
                }
            }
        }
    }
    Ok(out)
}

/// Training and held-out beam masks, in dataset order.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitMasks {
    pub train: Vec<bool>,
    pub heldout: Vec<bool>,
    /// Held-out rectangle; everything outside it trains.
    pub region: BoundingBox,
}

impl SplitMasks {
    pub fn select<T: Clone>(items: &[T], mask: &[bool]) -> Vec<T> {
        items.iter().zip(mask).filter(|(_, m)| **m).map(|(v, _)| v.clone()).collect()
    }
}

/// Holds out beams whose dead-reckoned position lies in a centered rectangle
/// covering `heldout_fraction` of the terrain box; the outer loops train.
pub fn split_survey(survey: &SurveyDataset, heldout_fraction: f64) -> Result<SplitMasks> {
    if !(0.0..=1.0).contains(&heldout_fraction) {
        return Err(Error::InvalidArgument(format!(
            "held-out fraction {heldout_fraction} outside [0, 1]"
        )));
    }
    let region = survey.terrain.bbox.centered_fraction(heldout_fraction);
    let heldout: Vec<bool> = survey
        .beams()
        .map(|b| heldout_fraction > 0.0 && region.contains(b.x, b.y))
        .collect();
    let train = heldout.iter().map(|h| !h).collect();
    Ok(SplitMasks { train, heldout, region })
}
