//! Matérn-1/2 (exponential) covariance on 2-D inputs and its gradients.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// A 2-D map-frame input location (m).
pub type Input = [f64; 2];

/// Positive kernel hyperparameters, stored as unconstrained log-values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub log_lengthscale: f64,
    pub log_signal_variance: f64,
}

impl KernelParams {
    pub fn new(lengthscale: f64, signal_variance: f64) -> Self {
        assert!(lengthscale > 0.0 && signal_variance > 0.0);
        Self {
            log_lengthscale: lengthscale.ln(),
            log_signal_variance: signal_variance.ln(),
        }
    }

    pub fn lengthscale(&self) -> f64 {
        self.log_lengthscale.exp()
    }

    pub fn signal_variance(&self) -> f64 {
        self.log_signal_variance.exp()
    }
}

#[inline]
pub fn distance(a: &Input, b: &Input) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

#[inline]
pub fn matern12(x1: &Input, x2: &Input, params: &KernelParams) -> f64 {
    params.signal_variance() * (-distance(x1, x2) * (1.0 / params.lengthscale())).exp()
}

/// `∂k(x1, x2)/∂x1`. The kernel has a cusp at `x1 = x2`; the zero
/// subgradient is returned there.
pub fn matern12_grad_x1(x1: &Input, x2: &Input, params: &KernelParams) -> [f64; 2] {
    let r = distance(x1, x2);
    if r == 0.0 {
        return [0.0, 0.0];
    }
    let ell = params.lengthscale();
    let k = params.signal_variance() * (-r / ell).exp();
    let s = -k / (ell * r);
    [s * (x1[0] - x2[0]), s * (x1[1] - x2[1])]
}

/// Gram matrix `K[i, j] = k(x1[i], x2[j])`.
pub fn gram(x1: &[Input], x2: &[Input], params: &KernelParams) -> DMatrix<f64> {
    let var = params.signal_variance();
    let inv_ell = 1.0 / params.lengthscale();
    DMatrix::from_fn(x1.len(), x2.len(), |i, j| {
        var * (-distance(&x1[i], &x2[j]) * inv_ell).exp()
    })
}

/// Gram matrix together with the pairwise distances it was built from.
pub fn gram_with_distances(
    x1: &[Input],
    x2: &[Input],
    params: &KernelParams,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let var = params.signal_variance();
    let inv_ell = 1.0 / params.lengthscale();
    let r = DMatrix::from_fn(x1.len(), x2.len(), |i, j| distance(&x1[i], &x2[j]));
    let k = r.map(|d| var * (-d * inv_ell).exp());
    (k, r)
}

/// Elementwise derivatives of a Gram matrix with respect to the log
/// hyperparameters.
#[derive(Clone, Debug)]
pub struct GramGrad {
    pub d_log_lengthscale: DMatrix<f64>,
    pub d_log_signal_variance: DMatrix<f64>,
}

pub fn gram_grad(x1: &[Input], x2: &[Input], params: &KernelParams) -> GramGrad {
    let (k, r) = gram_with_distances(x1, x2, params);
    let inv_ell = 1.0 / params.lengthscale();
    GramGrad {
        d_log_lengthscale: k.zip_map(&r, |kv, rv| kv * rv * inv_ell),
        d_log_signal_variance: k,
    }
}
