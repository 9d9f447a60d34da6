use nalgebra::{Matrix6, Vector6};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::terrain::BoundingBox;
use crate::error::{Error, Result};
use crate::geometry::Pose6;

/// Body-frame surge speed (m/s) and yaw rate (rad/s), held over one step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Control {
    pub surge: f64,
    pub yaw_rate: f64,
}

/// Level vehicle state: position and heading. Roll and pitch stay zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanarState {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
}

impl PlanarState {
    pub fn pose(&self) -> Pose6 {
        Pose6::from_xyz_yaw(self.x, self.y, self.z, self.yaw)
    }

    pub fn from_pose(p: &Pose6) -> Self {
        Self {
            x: p.translation.x,
            y: p.translation.y,
            z: p.translation.z,
            yaw: p.yaw(),
        }
    }
}

/// Map-frame displacement of a constant-rate arc starting at heading `yaw`.
pub fn arc_displacement(yaw: f64, surge: f64, yaw_rate: f64, dt: f64) -> (f64, f64) {
    let dpsi = yaw_rate * dt;
    if dpsi.abs() < 1e-9 {
        let mid = yaw + 0.5 * dpsi;
        (surge * dt * mid.cos(), surge * dt * mid.sin())
    } else {
        let r = surge / yaw_rate;
        (r * ((yaw + dpsi).sin() - yaw.sin()), -r * ((yaw + dpsi).cos() - yaw.cos()))
    }
}

/// Point-mass motion model `g(r, c)` integrated exactly over `dt`.
pub fn motion_step(s: &PlanarState, c: &Control, dt: f64) -> PlanarState {
    let (dx, dy) = arc_displacement(s.yaw, c.surge, c.yaw_rate, dt);
    PlanarState {
        x: s.x + dx,
        y: s.y + dy,
        z: s.z,
        yaw: s.yaw + c.yaw_rate * dt,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanConfig {
    pub speed: f64,
    /// Vehicle z (m, up positive); must stay above the seabed.
    pub vehicle_z: f64,
    pub line_spacing: f64,
    /// Distance between the outermost lines and the box edge.
    pub margin: f64,
    /// Navigation integration step (s).
    pub nav_dt: f64,
    /// Navigation steps between pings.
    pub ping_every: usize,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            speed: 2.0,
            vehicle_z: -10.0,
            line_spacing: 40.0,
            margin: 20.0,
            nav_dt: 0.1,
            ping_every: 17,
        }
    }
}

impl PlanConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.speed > 0.0 && self.nav_dt > 0.0 && self.line_spacing > 0.0 && self.margin >= 0.0) {
            return Err(Error::InvalidArgument(
                "plan needs positive speed, nav_dt and line_spacing".into(),
            ));
        }
        if self.ping_every == 0 {
            return Err(Error::InvalidArgument("ping_every must be at least 1".into()));
        }
        Ok(())
    }

    pub fn ping_dt(&self) -> f64 {
        self.nav_dt * self.ping_every as f64
    }
}

/// Start state and navigation-rate controls of a plan.
#[derive(Clone, Debug, PartialEq)]
pub struct Plan {
    pub start: PlanarState,
    pub controls: Vec<Control>,
}

fn straight(controls: &mut Vec<Control>, length: f64, speed: f64, dt: f64) {
    let n = (length / (speed * dt)).ceil().max(1.0) as usize;
    let surge = length / (n as f64 * dt);
    controls.extend(std::iter::repeat_n(Control { surge, yaw_rate: 0.0 }, n));
}

fn half_turn(controls: &mut Vec<Control>, radius: f64, left: bool, speed: f64, dt: f64) {
    let n = (std::f64::consts::PI * radius / (speed * dt)).ceil().max(1.0) as usize;
    let duration = n as f64 * dt;
    let rate = std::f64::consts::PI / duration;
    let c = Control {
        surge: rate * radius,
        yaw_rate: if left { rate } else { -rate },
    };
    controls.extend(std::iter::repeat_n(c, n));
}

/// Boustrophedon survey: lines along +y/−y spaced `line_spacing` apart,
/// joined by semicircular turns.
pub fn lawnmower(bbox: &BoundingBox, plan: &PlanConfig) -> Result<Plan> {
    plan.validate()?;
    bbox.validate()?;
    let x0 = bbox.min[0] + plan.margin;
    let x1 = bbox.max[0] - plan.margin;
    let (y0, y1) = (bbox.min[1] + plan.margin, bbox.max[1] - plan.margin);
    if x1 < x0 || y1 <= y0 {
        return Err(Error::InvalidArgument("plan margin leaves no room inside the box".into()));
    }
    let n_lines = ((x1 - x0) / plan.line_spacing).floor() as usize + 1;
    let mut controls = Vec::new();
    for k in 0..n_lines {
        straight(&mut controls, y1 - y0, plan.speed, plan.nav_dt);
        if k + 1 < n_lines {
            // Northbound legs turn right (clockwise) toward +x, southbound left.
            half_turn(&mut controls, 0.5 * plan.line_spacing, k % 2 == 1, plan.speed, plan.nav_dt);
        }
    }
    Ok(Plan {
        start: PlanarState {
            x: x0,
            y: y0,
            z: plan.vehicle_z,
            yaw: std::f64::consts::FRAC_PI_2,
        },
        controls,
    })
}

/// Straight run of `length` meters from `start` at the plan speed.
pub fn transect(start: PlanarState, length: f64, plan: &PlanConfig) -> Result<Plan> {
    plan.validate()?;
    if !(length > 0.0) {
        return Err(Error::InvalidArgument("transect length must be positive".into()));
    }
    let mut controls = Vec::new();
    straight(&mut controls, length, plan.speed, plan.nav_dt);
    Ok(Plan { start, controls })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriftConfig {
    /// Standard deviation of the iid yaw-rate error (rad/s) per navigation step.
    pub yaw_drift_std: f64,
    /// Additive per-step EKF process noise `W` over `[x, y, z, roll, pitch, yaw]`.
    pub process_noise_diag: [f64; 6],
    pub initial_cov_diag: [f64; 6],
}

impl Default for DriftConfig {
    fn default() -> Self {
        Self {
            yaw_drift_std: 1e-3,
            process_noise_diag: [0.0; 6],
            initial_cov_diag: [0.0; 6],
        }
    }
}

impl DriftConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.yaw_drift_std >= 0.0
            && self.process_noise_diag.iter().chain(&self.initial_cov_diag).all(|v| *v >= 0.0);
        if !ok {
            return Err(Error::InvalidArgument("drift noise parameters must be non-negative".into()));
        }
        Ok(())
    }
}

/// One record per ping: ground truth, dead reckoning and its EKF covariance
/// over additive `[δp; δθ]` errors, plus the mean true and measured controls
/// since the previous record.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub time: f64,
    pub gt: Pose6,
    pub dr: Pose6,
    pub ekf_cov: Matrix6<f64>,
    pub control: Control,
    pub measured: Control,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub points: Vec<TrajectoryPoint>,
}

/// EKF covariance prediction for one navigation step of the dead-reckoned
/// state.
fn ekf_predict(p: &Matrix6<f64>, s: &PlanarState, c: &Control, dt: f64, drift: &DriftConfig) -> Matrix6<f64> {
    let (dx, dy) = arc_displacement(s.yaw, c.surge, c.yaw_rate, dt);
    let mut f = Matrix6::identity();
    f[(0, 5)] = -dy;
    f[(1, 5)] = dx;
    // Sensitivity of the step to the yaw rate (midpoint arc approximation).
    let g = Vector6::new(-0.5 * dy * dt, 0.5 * dx * dt, 0.0, 0.0, 0.0, dt);
    let w = Matrix6::from_diagonal(&Vector6::from_row_slice(&drift.process_noise_diag));
    let out = f * p * f.transpose() + g * g.transpose() * drift.yaw_drift_std.powi(2) + w;
    (out + out.transpose()) * 0.5
}

/// Integrates the plan for ground truth and for dead reckoning (the same
/// controls with iid yaw-rate noise), recording one point every
/// `ping_every` navigation steps starting at the initial state.
pub fn simulate_trajectory<R: Rng + ?Sized>(
    plan: &Plan,
    config: &PlanConfig,
    drift: &DriftConfig,
    rng: &mut R,
) -> Result<Trajectory> {
    config.validate()?;
    drift.validate()?;
    let dt = config.nav_dt;
    let mut gt = plan.start;
    let mut dr = plan.start;
    let mut cov = Matrix6::from_diagonal(&Vector6::from_row_slice(&drift.initial_cov_diag));
    let mut points = vec![TrajectoryPoint {
        time: 0.0,
        gt: gt.pose(),
        dr: dr.pose(),
        ekf_cov: cov,
        control: Control::default(),
        measured: Control::default(),
    }];
    let mut acc_true = Control::default();
    let mut acc_meas = Control::default();
    for (k, c) in plan.controls.iter().enumerate() {
        let noise: f64 = rng.sample(StandardNormal);
        let measured = Control {
            surge: c.surge,
            yaw_rate: c.yaw_rate + drift.yaw_drift_std * noise,
        };
        cov = ekf_predict(&cov, &dr, &measured, dt, drift);
        gt = motion_step(&gt, c, dt);
        dr = motion_step(&dr, &measured, dt);
        acc_true.surge += c.surge;
        acc_true.yaw_rate += c.yaw_rate;
        acc_meas.surge += measured.surge;
        acc_meas.yaw_rate += measured.yaw_rate;
        if (k + 1) % config.ping_every == 0 {
            let n = config.ping_every as f64;
            points.push(TrajectoryPoint {
                time: (k + 1) as f64 * dt,
                gt: gt.pose(),
                dr: dr.pose(),
                ekf_cov: cov,
                control: Control {
                    surge: acc_true.surge / n,
                    yaw_rate: acc_true.yaw_rate / n,
                },
                measured: Control {
                    surge: acc_meas.surge / n,
                    yaw_rate: acc_meas.yaw_rate / n,
                },
            });
            acc_true = Control::default();
            acc_meas = Control::default();
        }
    }
    Ok(Trajectory { points })
}
