//! Sparse variational GP regression on 2-D inputs.
//!
//! The variational posterior `q(u) = N(m, L Lᵀ)` over the inducing values is
//! parameterized directly (no whitening). Every positive quantity is handled
//! in log space by the optimizer; [`SvgpModel::params`] and
//! [`SvgpModel::set_params`] expose the flat unconstrained vector that
//! [`crate::optim`] updates.

mod elbo;
mod init;
mod io;
mod minibatch;
mod predict;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{gram, Input, KernelParams};

pub use elbo::{elbo, elbo_with_grad, optimal_variational, ElboTerms};
pub use init::{init_model, InitStrategy};
pub use io::{decode_model, encode_model, read_model, write_model, MODEL_MAGIC};
pub use minibatch::{draw_inputs, sample_minibatch, select_indices, CovarianceFactor};
pub use predict::{predict, Posterior};

/// Jitter schedule for `K_ss`, as multiples of the signal variance. A clean
/// factorization is attempted first.
pub const JITTER_LEVELS: [f64; 6] = [0.0, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2];

/// Smallest accepted squared Cholesky pivot of `K_ss`, relative to the
/// signal variance.
const MIN_PIVOT: f64 = 1e-12;

/// Index of the first inducing coordinate in the flat parameter vector.
pub const PARAM_Z_OFFSET: usize = 3;

/// A 2-D input distribution with a deterministic depth target.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UncertainInput {
    pub mean_xy: Input,
    /// Row-major 2×2 covariance.
    pub cov_xy: [[f64; 2]; 2],
    pub depth: f64,
}

impl UncertainInput {
    pub fn deterministic(mean_xy: Input, depth: f64) -> Self {
        Self {
            mean_xy,
            cov_xy: [[0.0; 2]; 2],
            depth,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InducingSet {
    pub z: Vec<Input>,
}

impl InducingSet {
    pub fn new(z: Vec<Input>) -> Result<Self> {
        if z.is_empty() {
            return Err(Error::InvalidArgument("at least one inducing point required".into()));
        }
        if z.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite inducing location".into()));
        }
        Ok(Self { z })
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }
}

/// `q(u) = N(mean, chol_cov chol_covᵀ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct VariationalDistribution {
    pub mean: DVector<f64>,
    /// Lower triangular with a strictly positive diagonal.
    pub chol_cov: DMatrix<f64>,
}

impl VariationalDistribution {
    pub fn covariance(&self) -> DMatrix<f64> {
        &self.chol_cov * self.chol_cov.transpose()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SvgpModel {
    pub kernel: KernelParams,
    pub inducing: InducingSet,
    pub variational: VariationalDistribution,
    pub log_noise_variance: f64,
    /// Number of training points `N` the data term is scaled to.
    pub n_total: usize,
    /// Constant prior mean subtracted from the targets.
    pub mean_offset: f64,
}

impl SvgpModel {
    /// A model whose variational distribution equals the prior `p(u)`.
    pub fn with_prior(
        kernel: KernelParams,
        inducing: InducingSet,
        noise_variance: f64,
        n_total: usize,
        mean_offset: f64,
    ) -> Result<Self> {
        if !(noise_variance > 0.0) {
            return Err(Error::InvalidArgument("noise variance must be positive".into()));
        }
        let s = inducing.len();
        let mut model = Self {
            kernel,
            inducing,
            variational: VariationalDistribution {
                mean: DVector::zeros(s),
                chol_cov: DMatrix::identity(s, s),
            },
            log_noise_variance: noise_variance.ln(),
            n_total,
            mean_offset,
        };
        let (chol, _) = model.kss_cholesky()?;
        model.variational.chol_cov = chol.l();
        Ok(model)
    }

    pub fn num_inducing(&self) -> usize {
        self.inducing.len()
    }

    pub fn noise_variance(&self) -> f64 {
        self.log_noise_variance.exp()
    }

    /// Raw `K_ss` without jitter.
    pub fn kss(&self) -> DMatrix<f64> {
        gram(&self.inducing.z, &self.inducing.z, &self.kernel)
    }

    /// Cholesky factor of `K_ss + jitter·I` following [`JITTER_LEVELS`].
    /// Returns the factorization and the jitter that was added.
    pub fn kss_cholesky(&self) -> Result<(Cholesky<f64, Dyn>, f64)> {
        kss_cholesky_of(self.kss(), self.kernel.signal_variance())
    }

    pub fn check(&self) -> Result<()> {
        let s = self.num_inducing();
        let v = &self.variational;
        if v.mean.len() != s || v.chol_cov.nrows() != s || v.chol_cov.ncols() != s {
            return Err(Error::InvalidArgument("variational shape mismatch".into()));
        }
        for i in 0..s {
            if !(v.chol_cov[(i, i)] > 0.0) {
                return Err(Error::InvalidArgument("variational Cholesky diagonal must be positive".into()));
            }
            for j in (i + 1)..s {
                if v.chol_cov[(i, j)] != 0.0 {
                    return Err(Error::InvalidArgument("variational Cholesky must be lower triangular".into()));
                }
            }
        }
        Ok(())
    }

    /// Length of the flat parameter vector.
    pub fn num_params(&self) -> usize {
        let s = self.num_inducing();
        PARAM_Z_OFFSET + 2 * s + s + s * (s + 1) / 2
    }

    /// Flat unconstrained parameters:
    /// `[log ℓ, log σ², log σ_n², Z (row-major), m, packed lower L]`, where
    /// the packed Cholesky is row by row and its diagonal is stored as logs.
    pub fn params(&self) -> DVector<f64> {
        let s = self.num_inducing();
        let mut p = Vec::with_capacity(self.num_params());
        p.push(self.kernel.log_lengthscale);
        p.push(self.kernel.log_signal_variance);
        p.push(self.log_noise_variance);
        for z in &self.inducing.z {
            p.extend_from_slice(z);
        }
        p.extend(self.variational.mean.iter().copied());
        let l = &self.variational.chol_cov;
        for i in 0..s {
            for j in 0..i {
                p.push(l[(i, j)]);
            }
            p.push(l[(i, i)].ln());
        }
        DVector::from_vec(p)
    }

    pub fn set_params(&mut self, p: &DVector<f64>) {
        assert_eq!(p.len(), self.num_params(), "parameter vector length");
        let s = self.num_inducing();
        self.kernel.log_lengthscale = p[0];
        self.kernel.log_signal_variance = p[1];
        self.log_noise_variance = p[2];
        let mut k = PARAM_Z_OFFSET;
        for z in self.inducing.z.iter_mut() {
            *z = [p[k], p[k + 1]];
            k += 2;
        }
        for i in 0..s {
            self.variational.mean[i] = p[k];
            k += 1;
        }
        let l = &mut self.variational.chol_cov;
        for i in 0..s {
            for j in 0..i {
                l[(i, j)] = p[k];
                k += 1;
            }
            l[(i, i)] = p[k].exp();
            k += 1;
        }
    }

    /// Offsets of the mean and packed-Cholesky blocks in the flat vector.
    pub fn param_layout(&self) -> ParamLayout {
        let s = self.num_inducing();
        ParamLayout {
            num_inducing: s,
            mean: PARAM_Z_OFFSET + 2 * s,
            chol: PARAM_Z_OFFSET + 3 * s,
            len: self.num_params(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamLayout {
    pub num_inducing: usize,
    pub mean: usize,
    pub chol: usize,
    pub len: usize,
}

impl ParamLayout {
    pub fn hyper(&self) -> std::ops::Range<usize> {
        0..PARAM_Z_OFFSET
    }

    pub fn inducing(&self) -> std::ops::Range<usize> {
        PARAM_Z_OFFSET..self.mean
    }

    pub fn variational(&self) -> std::ops::Range<usize> {
        self.mean..self.len
    }
}

pub(crate) fn kss_cholesky_of(kss: DMatrix<f64>, signal_variance: f64) -> Result<(Cholesky<f64, Dyn>, f64)> {
    for level in JITTER_LEVELS {
        let jitter = level * signal_variance;
        let mut k = kss.clone();
        for i in 0..k.nrows() {
            k[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(k) {
            let min_pivot = MIN_PIVOT * signal_variance;
            if c.l_dirty().diagonal().iter().all(|d| d * d > min_pivot && d.is_finite()) {
                return Ok((c, jitter));
            }
        }
    }
    Err(Error::JitterExhausted {
        max_jitter: JITTER_LEVELS[JITTER_LEVELS.len() - 1] * signal_variance,
    })
}
