use nalgebra::{DMatrix, DVector};

use super::SvgpModel;
use crate::error::Result;
use crate::kernels::{distance, Input, KernelParams};

/// Precomputed predictive quantities for an immutable model snapshot.
///
/// With `A = K_*s K_ss⁻¹`, the predictive mean is `A m` and the marginal
/// variance is `k_** − diag(A K_s*) + diag(A S Aᵀ)`, which is evaluated as
/// `σ² + k_*ᵀ (K⁻¹ S K⁻¹ − K⁻¹) k_*` row by row. Each query row is
/// processed independently, so batched and per-point calls agree exactly.
#[derive(Clone, Debug)]
pub struct Posterior {
    kernel: KernelParams,
    z: Vec<Input>,
    /// `K_ss⁻¹ m`.
    weights: DVector<f64>,
    /// `K⁻¹ S K⁻¹ − K⁻¹`, symmetric.
    var_matrix: DMatrix<f64>,
    mean_offset: f64,
}

impl Posterior {
    pub fn new(model: &SvgpModel) -> Result<Self> {
        let (chol, _) = model.kss_cholesky()?;
        let kinv = crate::linalg::inverse_from_cholesky(chol.l_dirty());
        let s = model.variational.covariance();
        let t = &kinv * s * &kinv;
        let var_matrix = (&t + t.transpose()) * 0.5 - &kinv;
        Ok(Self {
            kernel: model.kernel,
            z: model.inducing.z.clone(),
            weights: kinv * &model.variational.mean,
            var_matrix,
            mean_offset: model.mean_offset,
        })
    }

    fn cross_row(&self, x: &Input, out: &mut [f64]) {
        let var = self.kernel.signal_variance();
        let inv_ell = 1.0 / self.kernel.lengthscale();
        for (o, z) in out.iter_mut().zip(&self.z) {
            *o = var * (-distance(x, z) * inv_ell).exp();
        }
    }

    /// Mean and variance at a single location.
    pub fn predict_point(&self, x: &Input) -> (f64, f64) {
        let mut k = vec![0.0; self.z.len()];
        self.point_with_buffer(x, &mut k)
    }

    fn point_with_buffer(&self, x: &Input, k: &mut [f64]) -> (f64, f64) {
        self.cross_row(x, k);
        let mean = self.mean_offset + dot(k, self.weights.as_slice());
        let s = self.z.len();
        let data = self.var_matrix.as_slice();
        let mut quad = 0.0;
        for (j, kj) in k.iter().enumerate() {
            quad += kj * dot(&data[j * s..(j + 1) * s], k);
        }
        let var = self.kernel.signal_variance() + quad;
        (mean, var.max(0.0))
    }

    /// Marginal predictive means and variances at every query location.
    pub fn predict(&self, xs: &[Input]) -> (DVector<f64>, DVector<f64>) {
        let mut k = vec![0.0; self.z.len()];
        let mut mean = DVector::zeros(xs.len());
        let mut var = DVector::zeros(xs.len());
        for (i, x) in xs.iter().enumerate() {
            let (m, v) = self.point_with_buffer(x, &mut k);
            mean[i] = m;
            var[i] = v;
        }
        (mean, var)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Predictive mean and marginal variance of `f` at `xs`.
pub fn predict(model: &SvgpModel, xs: &[Input]) -> Result<(DVector<f64>, DVector<f64>)> {
    Ok(Posterior::new(model)?.predict(xs))
}
