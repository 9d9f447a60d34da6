use nalgebra::{DMatrix, DVector};

use super::{kss_cholesky_of, SvgpModel, PARAM_Z_OFFSET};
use crate::error::{Error, Result};
use crate::kernels::{gram_with_distances, Input};
use crate::linalg::{inverse_from_cholesky, symmetrize};

/// The ELBO and its two components for one minibatch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElboTerms {
    pub elbo: f64,
    /// `(N/m) Σᵢ E_q[log N(yᵢ | f(xᵢ), σ_n²)]`.
    pub data_term: f64,
    pub kl: f64,
}

fn check_batch(x: &[Input], y: &[f64]) -> Result<()> {
    if x.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if x.len() != y.len() {
        return Err(Error::InvalidArgument(format!(
            "batch has {} inputs but {} targets",
            x.len(),
            y.len()
        )));
    }
    Ok(())
}

pub fn elbo(model: &SvgpModel, x: &[Input], y: &[f64]) -> Result<ElboTerms> {
    Ok(evaluate(model, x, y, false)?.0)
}

/// ELBO together with its exact gradient in the layout of
/// [`SvgpModel::params`].
pub fn elbo_with_grad(model: &SvgpModel, x: &[Input], y: &[f64]) -> Result<(ElboTerms, DVector<f64>)> {
    let (terms, grad) = evaluate(model, x, y, true)?;
    Ok((terms, grad.expect("gradient requested")))
}

fn evaluate(
    model: &SvgpModel,
    x: &[Input],
    y: &[f64],
    want_grad: bool,
) -> Result<(ElboTerms, Option<DVector<f64>>)> {
    check_batch(x, y)?;
    let s = model.num_inducing();
    let b = x.len();
    let z = &model.inducing.z;
    let kernel = &model.kernel;
    let sig2 = kernel.signal_variance();
    let ell = kernel.lengthscale();
    let noise = model.noise_variance();
    let eps = model.n_total as f64 / b as f64;

    let (kss_raw, rss) = gram_with_distances(z, z, kernel);
    let (chol, jitter) = kss_cholesky_of(kss_raw.clone(), sig2)?;
    let kinv = inverse_from_cholesky(chol.l_dirty());
    let logdet_k = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();

    let (kbs, rbs) = gram_with_distances(x, z, kernel);
    let m = &model.variational.mean;
    let l = &model.variational.chol_cov;
    // K⁻¹L, so that S-products reduce to products of S×S factors.
    let kinv_l = &kinv * l;

    let c = &kinv * m;
    let mu = &kbs * &c;
    let p = symmetrize(&(kbs.transpose() * &kbs));
    let kinv_p_kinv = {
        let t = &kinv * &p * &kinv;
        symmetrize(&t)
    };
    let tr_kinv_p = kinv.component_mul(&p).sum();
    let kpk_l = &kinv_p_kinv * l;
    let tr_s_kpk = kpk_l.component_mul(l).sum();
    let sum_var = b as f64 * sig2 - tr_kinv_p + tr_s_kpk;

    let resid = DVector::from_iterator(
        b,
        y.iter().zip(mu.iter()).map(|(yi, mi)| yi - model.mean_offset - mi),
    );
    let sse = resid.norm_squared();
    let data_term = eps
        * (-0.5 * b as f64 * (2.0 * std::f64::consts::PI * noise).ln() - (sse + sum_var) / (2.0 * noise));

    let logdet_s = 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let kl = 0.5 * (kinv_l.component_mul(l).sum() + m.dot(&c) - s as f64 + logdet_k - logdet_s);
    let terms = ElboTerms {
        elbo: data_term - kl,
        data_term,
        kl,
    };
    if !want_grad {
        return Ok((terms, None));
    }

    let h = -eps / (2.0 * noise);
    let g = &resid * (eps / noise);

    let kinv_s_kinv = symmetrize(&(&kinv_l * kinv_l.transpose()));
    let big_m = &kinv_s_kinv - &kinv;
    // ∂F/∂K_bs
    let mut g_kbs = &kbs * &big_m * (2.0 * h);
    g_kbs.ger(1.0, &g, &c, 1.0);

    let a_t_g = &kinv * kbs.tr_mul(&g);
    let bmat = &kpk_l * kinv_l.transpose();
    // ∂ELBO/∂K_ss, including the KL term.
    let mut g_kss = (&kinv_p_kinv - &bmat - bmat.transpose()) * h
        + (&kinv_s_kinv - &kinv) * 0.5;
    g_kss.ger(-1.0, &a_t_g, &c, 1.0);
    g_kss.ger(0.5, &c, &c, 1.0);

    let layout = model.param_layout();
    let mut grad = DVector::zeros(layout.len);

    let inv_ell = 1.0 / ell;
    let mut d_log_ls = 0.0;
    let mut d_log_var = h * b as f64 * sig2 + jitter * g_kss.trace();
    for j in 0..s {
        for i in 0..s {
            let gk = g_kss[(i, j)] * kss_raw[(i, j)];
            d_log_var += gk;
            d_log_ls += gk * rss[(i, j)] * inv_ell;
        }
        for i in 0..b {
            let gk = g_kbs[(i, j)] * kbs[(i, j)];
            d_log_var += gk;
            d_log_ls += gk * rbs[(i, j)] * inv_ell;
        }
    }
    grad[0] = d_log_ls;
    grad[1] = d_log_var;
    grad[2] = eps * (-0.5 * b as f64 + (sse + sum_var) / (2.0 * noise));

    // Inducing locations: column s of K_bs and row/column s of K_ss.
    for t in 0..s {
        let zt = z[t];
        let (mut gx, mut gy) = (0.0, 0.0);
        for i in 0..b {
            let r = rbs[(i, t)];
            if r > 0.0 {
                let w = g_kbs[(i, t)] * kbs[(i, t)] * inv_ell / r;
                gx += w * (x[i][0] - zt[0]);
                gy += w * (x[i][1] - zt[1]);
            }
        }
        for u in 0..s {
            let r = rss[(t, u)];
            if u != t && r > 0.0 {
                let w = (g_kss[(t, u)] + g_kss[(u, t)]) * kss_raw[(t, u)] * inv_ell / r;
                gx -= w * (zt[0] - z[u][0]);
                gy -= w * (zt[1] - z[u][1]);
            }
        }
        grad[PARAM_Z_OFFSET + 2 * t] = gx;
        grad[PARAM_Z_OFFSET + 2 * t + 1] = gy;
    }

    let d_m = &a_t_g - &c;
    grad.rows_mut(layout.mean, s).copy_from(&d_m);

    let d_l: DMatrix<f64> = &kpk_l * (2.0 * h) - &kinv_l;
    let mut k = layout.chol;
    for i in 0..s {
        for j in 0..i {
            grad[k] = d_l[(i, j)];
            k += 1;
        }
        let lii = l[(i, i)];
        grad[k] = (d_l[(i, i)] + 1.0 / lii) * lii;
        k += 1;
    }
    Ok((terms, Some(grad)))
}

/// Closed-form optimal `q(u)` for a Gaussian likelihood on the full dataset
/// `(x, y)`, holding hyperparameters and inducing locations fixed.
pub fn optimal_variational(model: &SvgpModel, x: &[Input], y: &[f64]) -> Result<SvgpModel> {
    check_batch(x, y)?;
    let noise = model.noise_variance();
    let (chol, jitter) = model.kss_cholesky()?;
    let mut kss = model.kss();
    for i in 0..kss.nrows() {
        kss[(i, i)] += jitter;
    }
    drop(chol);
    let ksn = crate::kernels::gram(&model.inducing.z, x, &model.kernel);
    let a = &kss + &ksn * ksn.transpose() / noise;
    let a_chol = nalgebra::Cholesky::new(a)
        .ok_or_else(|| Error::InvalidCovariance("optimal variational system is not SPD".into()))?;
    let yc = DVector::from_iterator(y.len(), y.iter().map(|v| v - model.mean_offset));
    let mean = &kss * a_chol.solve(&(&ksn * yc)) / noise;
    let cov = &kss * a_chol.solve(&kss);
    let cov = (&cov + cov.transpose()) * 0.5;
    let l = nalgebra::Cholesky::new(cov)
        .ok_or_else(|| Error::InvalidCovariance("optimal variational covariance is not SPD".into()))?
        .l();
    let mut out = model.clone();
    out.variational.mean = mean;
    out.variational.chol_cov = l;
    Ok(out)
}
