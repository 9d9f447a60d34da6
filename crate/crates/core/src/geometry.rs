//! SE(3) pose algebra and sigma-point propagation of pose and seabed-patch
//! uncertainty to georeferenced beams.
//!
//! Pose perturbations are 6-vectors `ξ = [ρ; φ]` (translation first, then
//! rotation) applied on the left: `r = exp(ξ^) · r̄`.

use nalgebra::{DMatrix, Matrix3, Matrix4, Matrix6, SMatrix, SVector, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{check_psd, semidefinite_cholesky};

pub type Matrix9 = SMatrix<f64, 9, 9>;
pub type Vector9 = SVector<f64, 9>;

/// Dimension of the compounded pose + patch state.
pub const SIGMA_DIM: usize = 9;
/// Default sigma-point spread parameter.
pub const DEFAULT_KAPPA: f64 = 0.0;

const SMALL_ANGLE: f64 = 1e-6;

/// Skew-symmetric matrix `v^` with `v^ w = v × w`.
pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Rigid transform in SE(3).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose6 {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose6 {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose6 {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    /// Z-Y-X (yaw, pitch, roll) Euler construction.
    pub fn from_euler(translation: Vector3<f64>, roll: f64, pitch: f64, yaw: f64) -> Self {
        let r = nalgebra::Rotation3::from_euler_angles(roll, pitch, yaw);
        Self::new(*r.matrix(), translation)
    }

    pub fn from_xyz_yaw(x: f64, y: f64, z: f64, yaw: f64) -> Self {
        Self::from_euler(Vector3::new(x, y, z), 0.0, 0.0, yaw)
    }

    /// Roll, pitch, yaw of the rotation.
    pub fn euler(&self) -> (f64, f64, f64) {
        nalgebra::Rotation3::from_matrix_unchecked(self.rotation).euler_angles()
    }

    pub fn yaw(&self) -> f64 {
        self.rotation[(1, 0)].atan2(self.rotation[(0, 0)])
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn from_homogeneous(m: &Matrix4<f64>) -> Self {
        Self::new(
            m.fixed_view::<3, 3>(0, 0).into_owned(),
            m.fixed_view::<3, 1>(0, 3).into_owned(),
        )
    }

    /// `self ∘ other`, i.e. `T(self) · T(other)`.
    pub fn compose(&self, other: &Pose6) -> Pose6 {
        Pose6::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> Pose6 {
        let rt = self.rotation.transpose();
        Pose6::new(rt, -(rt * self.translation))
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn inverse_transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p - self.translation)
    }

    /// Orthonormality and unit determinant within `tol`.
    pub fn is_valid(&self, tol: f64) -> bool {
        let rtr = self.rotation.transpose() * self.rotation;
        (rtr - Matrix3::identity()).amax() <= tol
            && (self.rotation.determinant() - 1.0).abs() <= tol
            && self.translation.iter().all(|v| v.is_finite())
    }
}

/// SO(3) exponential and the left Jacobian of SO(3), evaluated together.
fn so3_exp_and_jacobian(phi: &Vector3<f64>) -> (Matrix3<f64>, Matrix3<f64>) {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let k = hat(phi);
    let k2 = k * k;
    let (a, b, c) = if theta < SMALL_ANGLE {
        (
            1.0 - theta2 / 6.0,
            0.5 - theta2 / 24.0,
            1.0 / 6.0 - theta2 / 120.0,
        )
    } else {
        let (s, co) = theta.sin_cos();
        (s / theta, (1.0 - co) / theta2, (theta - s) / (theta2 * theta))
    };
    let eye = Matrix3::identity();
    (eye + k * a + k2 * b, eye + k * b + k2 * c)
}

/// SE(3) exponential of `ξ = [ρ; φ]`.
pub fn exp_se3(xi: &Vector6<f64>) -> Pose6 {
    let rho = xi.fixed_rows::<3>(0).into_owned();
    let phi = xi.fixed_rows::<3>(3).into_owned();
    let (rot, jac) = so3_exp_and_jacobian(&phi);
    Pose6::new(rot, jac * rho)
}

/// SO(3) logarithm, valid for rotation angles below π.
pub fn log_so3(r: &Matrix3<f64>) -> Vector3<f64> {
    let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = cos.acos();
    let skew = vee(&(r - r.transpose()));
    if theta < SMALL_ANGLE {
        skew * (0.5 + theta * theta / 12.0)
    } else {
        skew * (theta / (2.0 * theta.sin()))
    }
}

/// SE(3) logarithm; inverse of [`exp_se3`] for rotation angles below π.
pub fn log_se3(pose: &Pose6) -> Vector6<f64> {
    let phi = log_so3(&pose.rotation);
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let k = hat(&phi);
    let coeff = if theta < SMALL_ANGLE {
        1.0 / 12.0 + theta2 / 720.0
    } else {
        let (s, c) = theta.sin_cos();
        1.0 / theta2 - (1.0 + c) / (2.0 * theta * s)
    };
    let jinv = Matrix3::identity() - k * 0.5 + k * k * coeff;
    let rho = jinv * pose.translation;
    let mut out = Vector6::zeros();
    out.fixed_rows_mut::<3>(0).copy_from(&rho);
    out.fixed_rows_mut::<3>(3).copy_from(&phi);
    out
}

const COV_SYM_TOL: f64 = 1e-12;
const COV_EIG_TOL: f64 = 1e-12;

fn validate<const N: usize>(m: &SMatrix<f64, N, N>, what: &str) -> Result<()> {
    let d = DMatrix::from_iterator(N, N, m.iter().copied());
    check_psd(&d, COV_SYM_TOL, COV_EIG_TOL, what)
}

/// 6×6 covariance of a left pose perturbation `[ρ; φ]` (m², rad²).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseCovariance(pub Matrix6<f64>);

impl PoseCovariance {
    pub fn zeros() -> Self {
        Self(Matrix6::zeros())
    }

    pub fn new(m: Matrix6<f64>) -> Result<Self> {
        validate(&m, "pose covariance")?;
        Ok(Self(m))
    }

    pub fn from_diagonal(d: &Vector6<f64>) -> Result<Self> {
        Self::new(Matrix6::from_diagonal(d))
    }

    /// Converts a covariance over additive map-frame errors `[δp; δθ]` at
    /// `pose` (what a dead-reckoning EKF tracks) to the left-perturbation
    /// convention. For a left perturbation `t' ≈ t + ρ + φ × t`, so
    /// `ρ = δp + t^ δθ`.
    pub fn from_additive(additive: &Matrix6<f64>, pose: &Pose6) -> Result<Self> {
        let mut a = Matrix6::identity();
        a.fixed_view_mut::<3, 3>(0, 3).copy_from(&hat(&pose.translation));
        let m = a * additive * a.transpose();
        Self::new((m + m.transpose()) * 0.5)
    }

    pub fn matrix(&self) -> &Matrix6<f64> {
        &self.0
    }
}

/// Gaussian seabed patch hit by a beam.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PatchDistribution {
    pub mean: Vector3<f64>,
    pub covariance: Matrix3<f64>,
}

impl PatchDistribution {
    pub fn new(mean: Vector3<f64>, covariance: Matrix3<f64>) -> Result<Self> {
        validate(&covariance, "patch covariance")?;
        Ok(Self { mean, covariance })
    }
}

/// Block-diagonal 9×9 covariance of the stacked pose and patch perturbations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CompoundCovariance(pub Matrix9);

impl CompoundCovariance {
    pub fn matrix(&self) -> &Matrix9 {
        &self.0
    }
}

pub fn compound_covariance(
    pose_cov: &PoseCovariance,
    patch_cov: &Matrix3<f64>,
) -> Result<CompoundCovariance> {
    validate(&pose_cov.0, "pose covariance")?;
    validate(patch_cov, "patch covariance")?;
    let mut m = Matrix9::zeros();
    m.fixed_view_mut::<6, 6>(0, 0).copy_from(&pose_cov.0);
    m.fixed_view_mut::<3, 3>(6, 6).copy_from(patch_cov);
    Ok(CompoundCovariance(m))
}

/// One sigma point, split into its pose and patch parts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SigmaSample {
    pub xi: Vector6<f64>,
    pub zeta: Vector3<f64>,
}

impl SigmaSample {
    pub fn stacked(&self) -> Vector9 {
        let mut v = Vector9::zeros();
        v.fixed_rows_mut::<6>(0).copy_from(&self.xi);
        v.fixed_rows_mut::<3>(6).copy_from(&self.zeta);
        v
    }
}

/// Weights of the `2L + 1` sigma points: `κ/(L+κ)` for the center and
/// `1/(2(L+κ))` for the rest.
pub fn sigma_weights(kappa: f64) -> Vec<f64> {
    let l = SIGMA_DIM as f64;
    let mut w = vec![1.0 / (2.0 * (l + kappa)); 2 * SIGMA_DIM + 1];
    w[0] = kappa / (l + kappa);
    w
}

fn check_kappa(kappa: f64) -> Result<()> {
    if !(kappa >= 0.0 && kappa.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "kappa must be finite and non-negative, got {kappa}"
        )));
    }
    Ok(())
}

/// Lower Cholesky factor of a compounded covariance, retrying once with a
/// `1e-9 · trace/9` diagonal jitter.
pub fn compound_cholesky(xi_cov: &CompoundCovariance) -> Result<Matrix9> {
    let d = DMatrix::from_iterator(9, 9, xi_cov.0.iter().copied());
    let l = semidefinite_cholesky(&d).or_else(|| {
        let jitter = 1e-9 * d.trace() / 9.0;
        let mut j = d.clone();
        for i in 0..9 {
            j[(i, i)] += jitter;
        }
        semidefinite_cholesky(&j)
    });
    match l {
        Some(l) => Ok(Matrix9::from_iterator(l.iter().copied())),
        None => Err(Error::InvalidCovariance(
            "compound covariance is indefinite".into(),
        )),
    }
}

/// The `2L + 1` symmetric sigma points of a zero-mean Gaussian with
/// covariance `xi_cov`, with `L = 9`.
pub fn sigma_points(xi_cov: &CompoundCovariance, kappa: f64) -> Result<Vec<SigmaSample>> {
    check_kappa(kappa)?;
    let c = compound_cholesky(xi_cov)?;
    let scale = (SIGMA_DIM as f64 + kappa).sqrt();
    let split = |v: Vector9| SigmaSample {
        xi: v.fixed_rows::<6>(0).into_owned(),
        zeta: v.fixed_rows::<3>(6).into_owned(),
    };
    let mut out = Vec::with_capacity(2 * SIGMA_DIM + 1);
    out.push(split(Vector9::zeros()));
    for l in 0..SIGMA_DIM {
        out.push(split(c.column(l) * scale));
    }
    for l in 0..SIGMA_DIM {
        out.push(split(c.column(l) * -scale));
    }
    Ok(out)
}

/// Georeferenced beam as a Gaussian in the map frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BeamDistribution {
    pub mean: Vector3<f64>,
    pub covariance: Matrix3<f64>,
}

/// Measurement model used during propagation: the nominal map-frame point
/// re-expressed under the perturbed pose, `T(r) · T(r̄)⁻¹ · e`.
pub fn reproject(perturbed: &Pose6, nominal: &Pose6, patch: &Vector3<f64>) -> Vector3<f64> {
    perturbed.transform_point(&nominal.inverse_transform_point(patch))
}

/// Sigma points and weights for one compounded covariance, reusable across
/// every beam of a ping (the pose and patch covariances are shared).
#[derive(Clone, Debug)]
pub struct SigmaSet {
    pub samples: Vec<SigmaSample>,
    pub weights: Vec<f64>,
    perturbations: Vec<Pose6>,
}

impl SigmaSet {
    pub fn new(pose_cov: &PoseCovariance, patch_cov: &Matrix3<f64>, kappa: f64) -> Result<Self> {
        let xi = compound_covariance(pose_cov, patch_cov)?;
        let samples = sigma_points(&xi, kappa)?;
        let perturbations = samples.iter().map(|s| exp_se3(&s.xi)).collect();
        Ok(Self {
            samples,
            weights: sigma_weights(kappa),
            perturbations,
        })
    }

    /// Pushes the sigma points through the measurement model for one patch.
    /// With `r_l = exp(ξ_l)·r̄` the model `T(r_l)·T(r̄)⁻¹·e_l` reduces to
    /// `exp(ξ_l)·e_l`, so the nominal pose cancels. Moments are accumulated as
    /// offsets from the patch mean, which keeps a noiseless set exact.
    pub fn propagate(&self, patch_mean: &Vector3<f64>) -> BeamDistribution {
        let offsets: Vec<Vector3<f64>> = self
            .samples
            .iter()
            .zip(&self.perturbations)
            .map(|(s, dp)| dp.transform_point(&(patch_mean + s.zeta)) - patch_mean)
            .collect();
        let shift = offsets
            .iter()
            .zip(&self.weights)
            .fold(Vector3::zeros(), |acc, (p, w)| acc + p * *w);
        let mut cov = Matrix3::zeros();
        for (p, w) in offsets.iter().zip(&self.weights) {
            let d = p - shift;
            cov += d * d.transpose() * *w;
        }
        BeamDistribution {
            mean: patch_mean + shift,
            covariance: (cov + cov.transpose()) * 0.5,
        }
    }
}

/// Mean and covariance of a georeferenced beam under pose and patch noise.
pub fn propagate_beam(
    pose_mean: &Pose6,
    patch: &PatchDistribution,
    pose_cov: &PoseCovariance,
    kappa: f64,
) -> Result<BeamDistribution> {
    if !pose_mean.is_valid(1e-9) {
        return Err(Error::InvalidArgument("pose rotation is not orthonormal".into()));
    }
    let set = SigmaSet::new(pose_cov, &patch.covariance, kappa)?;
    Ok(set.propagate(&patch.mean))
}
