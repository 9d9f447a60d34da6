//! Particle-filter localization against a trained map: point-mass
//! prediction, factorized Gaussian beam likelihoods from the GP posterior
//! and residual resampling.

use std::fmt::Write as _;

use nalgebra::Vector3;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Pose6;
use crate::kernels::Input;
use crate::survey::{motion_step, Control, PlanarState, SurveyDataset};
use crate::svgp::Posterior;

/// Weighted pose hypotheses. `log_weights` are the logs of the normalized
/// `weights`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleSet {
    pub particles: Vec<Pose6>,
    pub weights: Vec<f64>,
    pub log_weights: Vec<f64>,
}

impl ParticleSet {
    pub fn uniform(particles: Vec<Pose6>) -> Result<Self> {
        if particles.is_empty() {
            return Err(Error::InvalidArgument("particle set needs at least one particle".into()));
        }
        let j = particles.len();
        Ok(Self {
            particles,
            weights: vec![1.0 / j as f64; j],
            log_weights: vec![-(j as f64).ln(); j],
        })
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    /// Effective sample size `1 / Σ w²`.
    pub fn ess(&self) -> f64 {
        1.0 / self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    /// Normalizes unnormalized log-weights in place, subtracting the maximum
    /// before exponentiation.
    fn normalize_from_logs(&mut self, logs: Vec<f64>) -> Result<()> {
        let max = logs.iter().copied().filter(|v| v.is_finite()).fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::DegenerateWeights);
        }
        let unnorm: Vec<f64> = logs
            .iter()
            .map(|l| if l.is_nan() { 0.0 } else { (l - max).exp() })
            .collect();
        let total: f64 = unnorm.iter().sum();
        let log_total = total.ln();
        self.weights = unnorm.iter().map(|u| u / total).collect();
        self.log_weights = logs
            .iter()
            .map(|l| if l.is_nan() { f64::NEG_INFINITY } else { l - max - log_total })
            .collect();
        Ok(())
    }

    fn reset_uniform(&mut self) {
        let j = self.len() as f64;
        self.weights.fill(1.0 / j);
        self.log_weights.fill(-j.ln());
    }

    /// Weighted mean position with the chordal mean heading.
    pub fn estimate(&self) -> PoseEstimate {
        let mut mean = Vector3::zeros();
        let (mut s, mut c) = (0.0, 0.0);
        for (p, w) in self.particles.iter().zip(&self.weights) {
            mean += p.translation * *w;
            let yaw = p.yaw();
            s += w * yaw.sin();
            c += w * yaw.cos();
        }
        let mut cov = [[0.0; 2]; 2];
        for (p, w) in self.particles.iter().zip(&self.weights) {
            let d = p.translation.xy() - mean.xy();
            for (i, row) in cov.iter_mut().enumerate() {
                for (j, c) in row.iter_mut().enumerate() {
                    *c += w * d[i] * d[j];
                }
            }
        }
        PoseEstimate {
            pose: Pose6::from_xyz_yaw(mean.x, mean.y, mean.z, s.atan2(c)),
            position_cov: cov,
            position_std: (cov[0][0] + cov[1][1]).sqrt(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseEstimate {
    pub pose: Pose6,
    /// Weighted horizontal position covariance (m²).
    pub position_cov: [[f64; 2]; 2],
    /// Square root of its trace (m).
    pub position_std: f64,
}

/// Process noise of the filter's motion model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionNoise {
    /// Yaw-rate variance (rad²/s²); the heading increment has variance
    /// `yaw_rate_var · dt²`.
    pub yaw_rate_var: f64,
    /// Horizontal position variance added per step (m²).
    pub position_var: f64,
}

impl Default for MotionNoise {
    fn default() -> Self {
        Self {
            yaw_rate_var: 1e-4,
            position_var: 0.05,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResamplePolicy {
    /// Resample when the effective sample size drops below `ess_fraction · J`.
    Ess,
    EveryStep,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PfConfig {
    pub num_particles: usize,
    pub motion: MotionNoise,
    /// Depth measurement variance `Q_z` (m²) added to the GP variance.
    pub depth_noise_var: f64,
    pub beams_per_ping: usize,
    pub resample: ResamplePolicy,
    pub ess_fraction: f64,
    /// Horizontal offset of the initial estimate from the true start (m).
    pub initial_offset: [f64; 2],
    /// Spread of the initial particles around the initial estimate (m).
    pub initial_position_std: f64,
    pub initial_yaw_std: f64,
    pub seed: u64,
}

impl Default for PfConfig {
    fn default() -> Self {
        Self {
            num_particles: 60,
            motion: MotionNoise::default(),
            depth_noise_var: 16.0,
            beams_per_ping: 16,
            resample: ResamplePolicy::Ess,
            ess_fraction: 0.5,
            initial_offset: [20.0 * std::f64::consts::FRAC_1_SQRT_2; 2],
            initial_position_std: 10.0,
            initial_yaw_std: 0.01,
            seed: 0,
        }
    }
}

impl PfConfig {
    pub fn validate(&self) -> Result<()> {
        let m = &self.motion;
        if self.num_particles == 0 || self.beams_per_ping == 0 {
            return Err(Error::InvalidArgument("num_particles and beams_per_ping must be at least 1".into()));
        }
        let noises = [m.yaw_rate_var, m.position_var, self.depth_noise_var, self.initial_position_std, self.initial_yaw_std];
        if noises.iter().any(|v| !(*v >= 0.0)) || !(0.0..=1.0).contains(&self.ess_fraction) {
            return Err(Error::InvalidArgument("PF noises must be non-negative and ess_fraction in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Propagates every particle through the motion model with independent
/// yaw-rate and position noise; weights are untouched.
pub fn predict_step<R: Rng + ?Sized>(
    set: &ParticleSet,
    control: &Control,
    dt: f64,
    noise: &MotionNoise,
    rng: &mut R,
) -> Result<ParticleSet> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    let yaw_std = noise.yaw_rate_var.sqrt();
    let pos_std = noise.position_var.sqrt();
    let particles = set
        .particles
        .iter()
        .map(|p| {
            let c = Control {
                surge: control.surge,
                yaw_rate: control.yaw_rate + yaw_std * rng.sample::<f64, _>(StandardNormal),
            };
            let mut s = motion_step(&PlanarState::from_pose(p), &c, dt);
            s.x += pos_std * rng.sample::<f64, _>(StandardNormal);
            s.y += pos_std * rng.sample::<f64, _>(StandardNormal);
            s.pose()
        })
        .collect();
    Ok(ParticleSet {
        particles,
        weights: set.weights.clone(),
        log_weights: set.log_weights.clone(),
    })
}

/// Per-particle log-likelihood of a sensor-frame ping: each beam is
/// re-expressed under the particle pose, and its depth scored against
/// `N(GP mean, GP variance + Q_z)` at its horizontal position. All `J × n`
/// query points go through one batched prediction.
pub fn ping_log_likelihoods(particles: &[Pose6], ping: &[Vector3<f64>], posterior: &Posterior, q_z: f64) -> Vec<f64> {
    let n = ping.len();
    let mut xs: Vec<Input> = Vec::with_capacity(particles.len() * n);
    let mut zs = Vec::with_capacity(particles.len() * n);
    for p in particles {
        for b in ping {
            let w = p.transform_point(b);
            xs.push([w.x, w.y]);
            zs.push(w.z);
        }
    }
    let (mean, var) = posterior.predict(&xs);
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    (0..particles.len())
        .map(|j| {
            (j * n..(j + 1) * n)
                .map(|k| {
                    let v = var[k] + q_z;
                    let r = zs[k] - mean[k];
                    -0.5 * (r * r / v + v.ln() + ln2pi)
                })
                .sum()
        })
        .collect()
}

/// Multiplies the weights by the ping likelihoods and renormalizes. On total
/// underflow the set is reset to uniform weights and `DegenerateWeights` is
/// returned alongside it.
pub fn weight_step(
    set: &ParticleSet,
    ping: &[Vector3<f64>],
    posterior: &Posterior,
    q_z: f64,
) -> (ParticleSet, Result<()>) {
    let ll = ping_log_likelihoods(&set.particles, ping, posterior, q_z);
    let logs: Vec<f64> = set.log_weights.iter().zip(&ll).map(|(a, b)| a + b).collect();
    let mut out = set.clone();
    match out.normalize_from_logs(logs) {
        Ok(()) => (out, Ok(())),
        Err(e) => {
            out.reset_uniform();
            (out, Err(e))
        }
    }
}

/// Residual resampling: `⌊J w_j⌋` deterministic copies of each particle,
/// then the remaining draws multinomially on the residual weights. Output
/// weights are uniform.
pub fn residual_resample<R: Rng + ?Sized>(set: &ParticleSet, rng: &mut R) -> ParticleSet {
    let j = set.len();
    let jf = j as f64;
    // The small guard keeps exactly representable shares such as 1/J from
    // flooring to zero through rounding.
    let counts: Vec<usize> = set.weights.iter().map(|w| (jf * w + 1e-9).floor() as usize).collect();
    let mut particles = Vec::with_capacity(j);
    for (p, c) in set.particles.iter().zip(&counts) {
        particles.extend(std::iter::repeat_n(*p, *c));
    }
    let remaining = j.saturating_sub(particles.len());
    if remaining > 0 {
        let residual: Vec<f64> = set
            .weights
            .iter()
            .zip(&counts)
            .map(|(w, c)| (jf * w - *c as f64).max(0.0))
            .collect();
        match WeightedIndex::new(&residual) {
            Ok(dist) => {
                for _ in 0..remaining {
                    particles.push(set.particles[dist.sample(rng)]);
                }
            }
            Err(_) => {
                let dist = WeightedIndex::new(&set.weights).expect("weights sum to one");
                for _ in 0..remaining {
                    particles.push(set.particles[dist.sample(rng)]);
                }
            }
        }
    }
    particles.truncate(j);
    ParticleSet::uniform(particles).expect("non-empty")
}

/// Evenly spaced subset of at most `k` beams.
pub fn subsample_beams(beams: &[Vector3<f64>], k: usize) -> Vec<Vector3<f64>> {
    if beams.len() <= k {
        return beams.to_vec();
    }
    (0..k)
        .map(|i| beams[(i * (beams.len() - 1)) / (k - 1).max(1)])
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalizationStep {
    pub time: f64,
    pub gt: Pose6,
    pub dr: Pose6,
    pub estimate: Pose6,
    pub position_cov: [[f64; 2]; 2],
    pub position_std: f64,
    pub ess: f64,
    pub resampled: bool,
    pub degenerate: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalizationResult {
    pub steps: Vec<LocalizationStep>,
}

fn horizontal_error(a: &Pose6, b: &Pose6) -> f64 {
    (a.translation.xy() - b.translation.xy()).norm()
}

fn rmse(values: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for v in values {
        s += v * v;
        n += 1;
    }
    (s / n.max(1) as f64).sqrt()
}

impl LocalizationResult {
    pub fn pf_rmse(&self) -> f64 {
        rmse(self.steps.iter().map(|s| horizontal_error(&s.estimate, &s.gt)))
    }

    pub fn dr_rmse(&self) -> f64 {
        rmse(self.steps.iter().map(|s| horizontal_error(&s.dr, &s.gt)))
    }

    pub fn initial_error(&self) -> f64 {
        self.steps.first().map_or(0.0, |s| horizontal_error(&s.dr, &s.gt))
    }

    pub fn final_error(&self) -> f64 {
        self.steps.last().map_or(0.0, |s| horizontal_error(&s.estimate, &s.gt))
    }

    pub fn degenerate_steps(&self) -> usize {
        self.steps.iter().filter(|s| s.degenerate).count()
    }

    /// CSV with columns t, gt pose, dr pose, pf mean pose (each x, y, z,
    /// yaw), pf position std and ess.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "t,gt_x,gt_y,gt_z,gt_yaw,dr_x,dr_y,dr_z,dr_yaw,pf_x,pf_y,pf_z,pf_yaw,pf_pos_std,ess\n",
        );
        for st in &self.steps {
            let _ = write!(s, "{:?}", st.time);
            for p in [&st.gt, &st.dr, &st.estimate] {
                let t = p.translation;
                let _ = write!(s, ",{:?},{:?},{:?},{:?}", t.x, t.y, t.z, p.yaw());
            }
            let _ = writeln!(s, ",{:?},{:?}", st.position_std, st.ess);
        }
        s
    }
}

/// Runs the filter along a survey run over a trained map. The filter and the
/// dead-reckoning baseline both start from the true initial pose shifted by
/// `initial_offset` and integrate the measured (noisy) controls; pings are
/// the sensor-frame returns.
pub fn run_localization(run: &SurveyDataset, posterior: &Posterior, config: &PfConfig) -> Result<LocalizationResult> {
    config.validate()?;
    let points = &run.trajectory.points;
    if run.pings.is_empty() || points.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let gt0 = points[0].gt;
    let mut start = PlanarState::from_pose(&gt0);
    start.x += config.initial_offset[0];
    start.y += config.initial_offset[1];
    let mut dr = start;
    let particles = (0..config.num_particles)
        .map(|_| {
            let mut s = start;
            s.x += config.initial_position_std * rng.sample::<f64, _>(StandardNormal);
            s.y += config.initial_position_std * rng.sample::<f64, _>(StandardNormal);
            s.yaw += config.initial_yaw_std * rng.sample::<f64, _>(StandardNormal);
            s.pose()
        })
        .collect();
    let mut set = ParticleSet::uniform(particles)?;
    let threshold = config.ess_fraction * config.num_particles as f64;
    let mut steps = Vec::with_capacity(run.pings.len());
    let mut prev_time = None;
    for ping in &run.pings {
        let point = points
            .get(ping.pose_index)
            .ok_or_else(|| Error::InvalidArgument(format!("ping references missing pose {}", ping.pose_index)))?;
        if let Some(t0) = prev_time {
            let dt = point.time - t0;
            set = predict_step(&set, &point.measured, dt, &config.motion, &mut rng)?;
            dr = motion_step(&dr, &point.measured, dt);
        }
        prev_time = Some(point.time);
        let beams = subsample_beams(&ping.sensor, config.beams_per_ping);
        let mut degenerate = false;
        if !beams.is_empty() {
            let (next, status) = weight_step(&set, &beams, posterior, config.depth_noise_var);
            if let Err(e) = status {
                log::warn!("t = {:.1} s: {e}; weights reset to uniform", point.time);
                degenerate = true;
            }
            set = next;
        }
        let est = set.estimate();
        let ess = set.ess();
        let resampled = match config.resample {
            ResamplePolicy::EveryStep => true,
            ResamplePolicy::Ess => ess < threshold,
        };
        steps.push(LocalizationStep {
            time: point.time,
            gt: point.gt,
            dr: dr.pose(),
            estimate: est.pose,
            position_cov: est.position_cov,
            position_std: est.position_std,
            ess,
            resampled,
            degenerate,
        });
        if resampled {
            set = residual_resample(&set, &mut rng);
        }
    }
    Ok(LocalizationResult { steps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelParams;
    use crate::survey::{BoundingBox, Terrain};
    use crate::svgp::{InducingSet, SvgpModel};
    use nalgebra::DVector;

    fn flat_posterior(depth: f64, tight: bool) -> Posterior {
        // A model whose q(u) is pinned at zero offset with tiny covariance:
        // the posterior mean is `depth` everywhere near the inducing grid.
        let mut z = Vec::new();
        for i in 0..10 {
            for j in 0..10 {
                z.push([i as f64 * 10.0, j as f64 * 10.0]);
            }
        }
        let s = z.len();
        let kernel = KernelParams::new(30.0, 1.0);
        let mut m = SvgpModel::with_prior(kernel, InducingSet::new(z).unwrap(), 0.01, 100, depth).unwrap();
        if tight {
            m.variational.mean = DVector::zeros(s);
            m.variational.chol_cov = nalgebra::DMatrix::identity(s, s) * 1e-4;
        }
        Posterior::new(&m).unwrap()
    }

    fn poses(n: usize) -> Vec<Pose6> {
        (0..n).map(|i| Pose6::from_xyz_yaw(10.0 + i as f64, 20.0, -10.0, 0.1 * i as f64)).collect()
    }

    #[test]
    fn noiseless_motion_moves_every_particle_alike() {
        let set = ParticleSet::uniform(vec![Pose6::from_xyz_yaw(1.0, 2.0, -3.0, 0.5); 5]).unwrap();
        let c = Control { surge: 1.5, yaw_rate: 0.05 };
        let none = MotionNoise { yaw_rate_var: 0.0, position_var: 0.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = predict_step(&set, &c, 2.0, &none, &mut rng).unwrap();
        assert!(out.particles.iter().all(|p| *p == out.particles[0]));
        let still = predict_step(&set, &Control::default(), 2.0, &none, &mut rng).unwrap();
        for (a, b) in still.particles.iter().zip(&set.particles) {
            assert!((a.translation - b.translation).norm() < 1e-12);
            assert!((a.yaw() - b.yaw()).abs() < 1e-12);
        }
        assert_eq!(out.weights, set.weights);
        assert!(predict_step(&set, &c, 0.0, &none, &mut rng).is_err());
    }

    #[test]
    fn yaw_noise_statistics() {
        let n = 100_000;
        let set = ParticleSet::uniform(vec![Pose6::identity(); n]).unwrap();
        let dt = 1.7;
        let noise = MotionNoise { yaw_rate_var: 1e-4, position_var: 0.0 };
        let out = predict_step(&set, &Control::default(), dt, &noise, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let var = out.particles.iter().map(|p| p.yaw().powi(2)).sum::<f64>() / n as f64;
        let model = 1e-4 * dt * dt;
        assert!((var / model - 1.0).abs() < 0.03, "{var} vs {model}");
    }

    #[test]
    fn particle_at_truth_gets_the_largest_weight() {
        let post = flat_posterior(-30.0, true);
        let truth = Pose6::from_xyz_yaw(45.0, 45.0, -10.0, 0.0);
        let ping: Vec<Vector3<f64>> = (-3..=3).map(|i| Vector3::new(0.0, i as f64 * 3.0, -20.0)).collect();
        let mut ps = vec![truth];
        ps.push(Pose6::from_xyz_yaw(45.0, 45.0, -9.0, 0.0));
        ps.push(Pose6::from_xyz_yaw(45.0, 45.0, -11.5, 0.0));
        let set = ParticleSet::uniform(ps).unwrap();
        let (out, ok) = weight_step(&set, &ping, &post, 0.01);
        ok.unwrap();
        assert!(out.weights[0] > out.weights[1] && out.weights[0] > out.weights[2]);
        assert!((out.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identical_particles_get_identical_weights() {
        let post = flat_posterior(-30.0, false);
        let p = Pose6::from_xyz_yaw(40.0, 50.0, -10.0, 0.3);
        let set = ParticleSet::uniform(vec![p, p, p]).unwrap();
        let ping = vec![Vector3::new(0.0, 2.0, -19.0), Vector3::new(0.0, -4.0, -21.0)];
        let (out, _) = weight_step(&set, &ping, &post, 0.1);
        assert_eq!(out.weights[0], out.weights[1]);
        assert_eq!(out.weights[1], out.weights[2]);
    }

    #[test]
    fn weights_match_hand_computed_gaussians() {
        let post = flat_posterior(-30.0, false);
        let q = 0.3;
        let ps = vec![
            Pose6::from_xyz_yaw(30.0, 30.0, -10.0, 0.0),
            Pose6::from_xyz_yaw(50.0, 60.0, -9.5, 0.0),
            Pose6::from_xyz_yaw(70.0, 40.0, -10.8, 0.0),
        ];
        let beam = Vector3::new(0.0, 0.0, -20.0);
        let set = ParticleSet::uniform(ps.clone()).unwrap();
        let (out, _) = weight_step(&set, &[beam], &post, q);
        // Oracle: scalar Gaussian densities at each particle's query point,
        // normalized by their sum.
        let dens: Vec<f64> = ps
            .iter()
            .map(|p| {
                let w = p.transform_point(&beam);
                let (m, v) = post.predict_point(&[w.x, w.y]);
                let s2 = v + q;
                (-(w.z - m).powi(2) / (2.0 * s2)).exp() / (2.0 * std::f64::consts::PI * s2).sqrt()
            })
            .collect();
        let total: f64 = dens.iter().sum();
        for (w, d) in out.weights.iter().zip(&dens) {
            assert!((w - d / total).abs() < 1e-12);
        }
    }

    #[test]
    fn weighting_ignores_prior_weight_scale() {
        let post = flat_posterior(-30.0, false);
        let ping = vec![Vector3::new(0.0, 1.0, -20.5)];
        let mut set = ParticleSet::uniform(poses(6)).unwrap();
        set.normalize_from_logs(vec![0.0, -1.0, -2.0, 0.5, -0.3, 0.2]).unwrap();
        let mut scaled = set.clone();
        scaled.log_weights.iter_mut().for_each(|l| *l += 7.3f64.ln());
        let (a, _) = weight_step(&set, &ping, &post, 0.2);
        let (b, _) = weight_step(&scaled, &ping, &post, 0.2);
        for (x, y) in a.weights.iter().zip(&b.weights) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_weights_reset_to_uniform() {
        let mut set = ParticleSet::uniform(poses(4)).unwrap();
        set.log_weights = vec![f64::NEG_INFINITY; 4];
        let post = flat_posterior(-30.0, false);
        let (out, status) = weight_step(&set, &[Vector3::new(0.0, 0.0, -20.0)], &post, 0.1);
        assert!(matches!(status, Err(Error::DegenerateWeights)));
        assert!(out.weights.iter().all(|w| *w == 0.25));
    }

    #[test]
    fn batched_likelihood_equals_per_particle_loop() {
        let post = flat_posterior(-28.0, false);
        let ps = poses(7);
        let ping: Vec<Vector3<f64>> = (0..5).map(|i| Vector3::new(0.5 * i as f64, i as f64 - 2.0, -19.0)).collect();
        let batched = ping_log_likelihoods(&ps, &ping, &post, 0.1);
        for (j, p) in ps.iter().enumerate() {
            let single = ping_log_likelihoods(std::slice::from_ref(p), &ping, &post, 0.1);
            assert_eq!(batched[j], single[0]);
        }
    }

    #[test]
    fn uniform_weights_resample_to_identity_without_randomness() {
        let set = ParticleSet::uniform(poses(7)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let before = rng.clone();
        let out = residual_resample(&set, &mut rng);
        assert_eq!(out.particles, set.particles);
        assert_eq!(rng, before);
    }

    #[test]
    fn zero_residual_mass_copies_deterministically() {
        let mut set = ParticleSet::uniform(poses(4)).unwrap();
        set.weights = vec![0.5, 0.5, 0.0, 0.0];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let before = rng.clone();
        let out = residual_resample(&set, &mut rng);
        assert_eq!(out.particles, vec![set.particles[0], set.particles[0], set.particles[1], set.particles[1]]);
        assert_eq!(rng, before);
        assert!(out.weights.iter().all(|w| *w == 0.25));
    }

    #[test]
    fn residual_resampling_is_unbiased() {
        let w = [0.31, 0.02, 0.17, 0.0, 0.245, 0.255];
        let mut set = ParticleSet::uniform(poses(6)).unwrap();
        set.weights = w.to_vec();
        let trials = 100_000;
        let mut counts = [0usize; 6];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..trials {
            let out = residual_resample(&set, &mut rng);
            assert_eq!(out.len(), 6);
            for p in &out.particles {
                counts[set.particles.iter().position(|q| q == p).unwrap()] += 1;
            }
        }
        for (c, wj) in counts.iter().zip(&w) {
            let expected = 6.0 * wj;
            let got = *c as f64 / trials as f64;
            if expected == 0.0 {
                assert_eq!(got, 0.0);
            } else {
                assert!((got / expected - 1.0).abs() < 0.02, "{got} vs {expected}");
            }
        }
    }

    #[test]
    fn estimate_uses_chordal_yaw_and_weighted_spread() {
        let mut set = ParticleSet::uniform(vec![
            Pose6::from_xyz_yaw(0.0, 0.0, -5.0, 3.1),
            Pose6::from_xyz_yaw(2.0, 0.0, -5.0, -3.1),
        ])
        .unwrap();
        let e = set.estimate();
        assert!((e.pose.yaw().abs() - std::f64::consts::PI).abs() < 1e-12);
        assert!((e.pose.translation.x - 1.0).abs() < 1e-15);
        assert!((e.position_cov[0][0] - 1.0).abs() < 1e-15 && e.position_cov[1][1] == 0.0);
        set.weights = vec![1.0, 0.0];
        assert_eq!(set.estimate().position_std, 0.0);
        assert_eq!(set.ess(), 1.0);
    }

    proptest::proptest! {
        #[test]
        fn weights_stay_normalized(logs in proptest::collection::vec(-800.0f64..50.0, 1..20)) {
            let mut set = ParticleSet::uniform(poses(logs.len())).unwrap();
            set.normalize_from_logs(logs).unwrap();
            proptest::prop_assert!((set.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            proptest::prop_assert!(set.weights.iter().all(|w| *w >= 0.0));
            let out = residual_resample(&set, &mut ChaCha8Rng::seed_from_u64(0));
            proptest::prop_assert_eq!(out.len(), set.len());
            proptest::prop_assert!((out.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn subsampling_spans_the_swath() {
        let beams: Vec<Vector3<f64>> = (0..64).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect();
        let sub = subsample_beams(&beams, 16);
        assert_eq!(sub.len(), 16);
        assert_eq!(sub[0].x, 0.0);
        assert_eq!(sub[15].x, 63.0);
        assert_eq!(subsample_beams(&beams[..5], 16).len(), 5);
    }

    #[test]
    fn exact_filter_stays_on_truth() {
        use crate::survey::{simulate_plan, transect, DriftConfig, SurveyConfig};
        let bbox = BoundingBox::new([0.0, 0.0], [100.0, 100.0]).unwrap();
        let terrain = Terrain::flat(bbox, -30.0);
        let mut cfg = SurveyConfig::default();
        cfg.drift = DriftConfig {
            yaw_drift_std: 0.0,
            ..DriftConfig::default()
        };
        cfg.mbes.noise_diag = [0.0; 3];
        let start = PlanarState { x: 20.0, y: 50.0, z: -10.0, yaw: 0.0 };
        let plan = transect(start, 60.0, &cfg.plan).unwrap();
        let run = simulate_plan(&terrain, &plan, &cfg, 0).unwrap();
        let post = flat_posterior(-30.0, true);
        let pf = PfConfig {
            motion: MotionNoise { yaw_rate_var: 0.0, position_var: 0.0 },
            initial_offset: [0.0, 0.0],
            initial_position_std: 0.0,
            initial_yaw_std: 0.0,
            num_particles: 10,
            ..PfConfig::default()
        };
        let res = run_localization(&run, &post, &pf).unwrap();
        for s in &res.steps {
            assert!(horizontal_error(&s.estimate, &s.gt) < 1e-9);
        }
        assert_eq!(res.degenerate_steps(), 0);
        assert_eq!(res.to_csv().lines().count(), res.steps.len() + 1);
    }
}
