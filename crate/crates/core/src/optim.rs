//! Adam optimization of the minibatch ELBO with an EMA stopping rule.

use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::Input;
use crate::svgp::{draw_inputs, elbo_with_grad, select_indices, CovarianceFactor, SvgpModel, UncertainInput};

/// Deterministic inputs (means only) or uncertain inputs (one Monte Carlo
/// draw per selected input and step).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputMode {
    Di,
    Ui,
}

impl InputMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            InputMode::Di => "di",
            InputMode::Ui => "ui",
        }
    }
}

impl FromStr for InputMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "di" => Ok(Self::Di),
            "ui" => Ok(Self::Ui),
            other => Err(Error::InvalidArgument(format!("unknown input mode {other:?}, expected di or ui"))),
        }
    }
}

impl std::fmt::Display for InputMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub minibatch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub ema_window: usize,
    pub ema_rel_tol: f64,
    pub max_steps: usize,
    pub seed: u64,
    /// Monte Carlo draws per selected input in UI mode.
    pub samples_per_input: usize,
    pub freeze_inducing: bool,
    /// Keep kernel and noise hyperparameters fixed.
    pub freeze_hyperparameters: bool,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            minibatch_size: 1000,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            ema_window: 100,
            ema_rel_tol: 1e-4,
            max_steps: 5000,
            seed: 0,
            samples_per_input: 1,
            freeze_inducing: false,
            freeze_hyperparameters: false,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return bad("beta1 and beta2 must lie in (0, 1)");
        }
        if self.minibatch_size == 0 || self.samples_per_input == 0 {
            return bad("minibatch_size and samples_per_input must be at least 1");
        }
        if self.ema_window < 2 {
            return bad("ema_window must be at least 2");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingTrace {
    pub elbo: Vec<f64>,
    pub ema: Vec<f64>,
    /// Milliseconds since the start of training, per step.
    pub wall_ms: Vec<f64>,
    pub converged: bool,
}

impl TrainingTrace {
    pub fn steps(&self) -> usize {
        self.elbo.len()
    }

    pub fn wall_time_s(&self) -> f64 {
        self.wall_ms.last().copied().unwrap_or(0.0) / 1e3
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,elbo,ema,wall_ms\n");
        for i in 0..self.elbo.len() {
            let _ = writeln!(s, "{},{:e},{:e},{:.3}", i + 1, self.elbo[i], self.ema[i], self.wall_ms[i]);
        }
        s
    }
}

/// Adam with bias correction; minimizes.
#[derive(Clone, Debug)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: DVector<f64>,
    v: DVector<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, learning_rate: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            learning_rate,
            beta1,
            beta2,
            eps,
            m: DVector::zeros(n),
            v: DVector::zeros(n),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut DVector<f64>, grad: &DVector<f64>) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            params[i] -= self.learning_rate * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

fn ema_alpha(window: usize) -> f64 {
    2.0 / (window as f64 + 1.0)
}

/// Exponential moving average with smoothing `2/(window+1)`, seeded with the
/// first value.
pub fn ema_series(series: &[f64], window: usize) -> Vec<f64> {
    let a = ema_alpha(window);
    let mut out = Vec::with_capacity(series.len());
    for (i, v) in series.iter().enumerate() {
        out.push(if i == 0 { *v } else { (1.0 - a) * out[i - 1] + a * v });
    }
    out
}

fn ema_converged(ema: &[f64], window: usize, rel_tol: f64) -> bool {
    let t = ema.len();
    if t <= window {
        return false;
    }
    let now = ema[t - 1];
    let then = ema[t - 1 - window];
    (now - then).abs() / (then.abs() + 1e-12) < rel_tol
}

/// True when the EMA of `series` moved by less than `rel_tol` (relative)
/// over the last `window` steps.
pub fn ema_stop(series: &[f64], window: usize, rel_tol: f64) -> bool {
    ema_converged(&ema_series(series, window), window, rel_tol)
}

/// Stochastic ELBO maximization. The minibatch selection and the input
/// draws use separate random streams derived from `config.seed`, so UI
/// training on zero-covariance inputs retraces DI training exactly.
pub fn train(
    model: &SvgpModel,
    dataset: &[UncertainInput],
    config: &OptimConfig,
    mode: InputMode,
) -> Result<(SvgpModel, TrainingTrace)> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    config.validate()?;
    let n = dataset.len();
    let m = config.minibatch_size.min(n);
    let factors = match mode {
        InputMode::Ui => dataset
            .iter()
            .map(|u| CovarianceFactor::new(&u.cov_xy))
            .collect::<Result<Vec<_>>>()?,
        InputMode::Di => Vec::new(),
    };
    let mut select_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(config.seed);
    noise_rng.set_stream(1);

    let mut model = model.clone();
    let layout = model.param_layout();
    let mut params = model.params();
    let mut adam = Adam::new(params.len(), config.learning_rate, config.beta1, config.beta2, config.eps);
    let mut trace = TrainingTrace::default();
    let alpha = ema_alpha(config.ema_window);
    let start = Instant::now();

    for step in 0..config.max_steps {
        let idx = select_indices(n, m, &mut select_rng)?;
        let (x, y): (Vec<Input>, Vec<f64>) = match mode {
            InputMode::Di => idx.iter().map(|&i| (dataset[i].mean_xy, dataset[i].depth)).unzip(),
            InputMode::Ui => draw_inputs(dataset, &factors, &idx, config.samples_per_input, &mut noise_rng),
        };
        let (terms, mut grad) = elbo_with_grad(&model, &x, &y)?;
        if !terms.elbo.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::DivergedTraining {
                step,
                trace: Box::new(trace),
            });
        }
        let ema = match trace.ema.last() {
            Some(prev) => (1.0 - alpha) * prev + alpha * terms.elbo,
            None => terms.elbo,
        };
        trace.elbo.push(terms.elbo);
        trace.ema.push(ema);
        trace.wall_ms.push(start.elapsed().as_secs_f64() * 1e3);

        if config.freeze_hyperparameters {
            grad.rows_range_mut(layout.hyper()).fill(0.0);
        }
        if config.freeze_inducing {
            grad.rows_range_mut(layout.inducing()).fill(0.0);
        }
        grad.neg_mut();
        adam.step(&mut params, &grad);
        model.set_params(&params);

        if ema_converged(&trace.ema, config.ema_window, config.ema_rel_tol) {
            trace.converged = true;
            break;
        }
    }
    Ok((model, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::svgp::{init_model, predict, InitStrategy};
    use rand::Rng;

    #[test]
    fn adam_first_step_on_quadratic() {
        // f(w) = w², w0 = 1: g = 2, m = 0.2, v = 0.004, m̂ = 2, v̂ = 4, so the
        // bias-corrected step is lr · 2 / (2 + eps).
        let mut adam = Adam::new(1, 0.1, 0.9, 0.999, 1e-8);
        let mut w = DVector::from_element(1, 1.0);
        let g = &w * 2.0;
        adam.step(&mut w, &g);
        let expected = 1.0 - 0.1 * 2.0 / (2.0 + 1e-8);
        assert!((w[0] - expected).abs() < 1e-15);
        assert!((w[0] - 0.9).abs() < 1e-8);
    }

    #[test]
    fn ema_stop_cases() {
        let constant = vec![3.0; 10];
        assert!(!ema_stop(&constant[..5], 5, 1e-6));
        assert!(ema_stop(&constant[..6], 5, 1e-6));
        let linear: Vec<f64> = (0..500).map(|i| 100.0 + i as f64).collect();
        for t in 10..500 {
            assert!(!ema_stop(&linear[..t], 10, 1e-9));
        }
    }

    #[test]
    fn ema_stop_on_geometric_series_matches_closed_form() {
        // x_t = c - d q^t. With e_t = c - EMA_t the recursion
        // e_t = (1-α) e_{t-1} + α d q^t, e_0 = d, has the closed form
        // e_t = d[(1-α)^t + α q (q^t - (1-α)^t) / (q - (1-α))].
        let (c, d, q, window, tol) = (-500.0, 400.0, 0.97_f64, 20usize, 1e-4);
        let a = 2.0 / (window as f64 + 1.0);
        let r = 1.0 - a;
        let e = |t: i32| d * (r.powi(t) + a * q * (q.powi(t) - r.powi(t)) / (q - r));
        let predicted = (window as i32..2000)
            .find(|&t| {
                let then = c - e(t - window as i32);
                ((c - e(t)) - then).abs() / (then.abs() + 1e-12) < tol
            })
            .unwrap() as usize;
        let series: Vec<f64> = (0..2000).map(|t| c - d * q.powi(t)).collect();
        let observed = (1..=series.len()).find(|&len| ema_stop(&series[..len], window, tol)).unwrap() - 1;
        assert_eq!(observed, predicted);
    }

    fn flat_dataset(n: usize, seed: u64, cov: f64) -> Vec<UncertainInput> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| UncertainInput {
                mean_xy: [rng.random_range(0.0..50.0), rng.random_range(0.0..50.0)],
                cov_xy: [[cov, 0.0], [0.0, cov]],
                depth: 0.0,
            })
            .collect()
    }

    #[test]
    fn flat_terrain_is_recovered() {
        let data = flat_dataset(100, 1, 0.0);
        let model = init_model(&data, 10, InitStrategy::Kmeans, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let config = OptimConfig {
            minibatch_size: 50,
            max_steps: 300,
            ..OptimConfig::default()
        };
        let (trained, _) = train(&model, &data, &config, InputMode::Di).unwrap();
        let xs: Vec<Input> = data.iter().map(|u| u.mean_xy).collect();
        let (mean, _) = predict(&trained, &xs).unwrap();
        assert!(mean.amax() < 0.05);
    }

    #[test]
    fn full_batch_elbo_rises_over_windows() {
        let data = flat_dataset(100, 3, 0.0);
        let model = init_model(&data, 10, InitStrategy::Kmeans, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let config = OptimConfig {
            minibatch_size: 100,
            max_steps: 600,
            ema_rel_tol: 0.0,
            ..OptimConfig::default()
        };
        let (_, trace) = train(&model, &data, &config, InputMode::Di).unwrap();
        assert_eq!(trace.steps(), 600);
        let windows: Vec<bool> = (100..trace.steps() - 50).map(|t| trace.elbo[t + 50] >= trace.elbo[t]).collect();
        let violations = windows.iter().filter(|ok| !**ok).count();
        assert!(violations as f64 <= 0.05 * windows.len() as f64, "{violations} of {}", windows.len());
    }

    #[test]
    fn zero_covariance_ui_retraces_di() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data: Vec<UncertainInput> = (0..200)
            .map(|_| {
                let p = [rng.random_range(0.0..20.0), rng.random_range(0.0..20.0)];
                UncertainInput::deterministic(p, (p[0] * 0.3).sin() + 0.2 * p[1])
            })
            .collect();
        let model = init_model(&data, 12, InitStrategy::Grid, &mut rng).unwrap();
        let config = OptimConfig {
            minibatch_size: 40,
            max_steps: 60,
            seed: 77,
            ..OptimConfig::default()
        };
        let (a, ta) = train(&model, &data, &config, InputMode::Di).unwrap();
        let (b, tb) = train(&model, &data, &config, InputMode::Ui).unwrap();
        assert_eq!(a.params().as_slice(), b.params().as_slice());
        assert_eq!(ta.elbo, tb.elbo);
    }

    #[test]
    fn training_is_reproducible_and_ui_is_stochastic() {
        let data = flat_dataset(150, 2, 4.0)
            .into_iter()
            .map(|mut u| {
                u.depth = (u.mean_xy[0] / 5.0).sin();
                u
            })
            .collect::<Vec<_>>();
        let model = init_model(&data, 8, InitStrategy::Grid, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let config = OptimConfig {
            minibatch_size: 150,
            max_steps: 40,
            freeze_hyperparameters: true,
            freeze_inducing: true,
            ..OptimConfig::default()
        };
        let (a, ta) = train(&model, &data, &config, InputMode::Ui).unwrap();
        let (b, tb) = train(&model, &data, &config, InputMode::Ui).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta.elbo, tb.elbo);
        // Parameters are frozen except q(u), so step-to-step ELBO changes
        // carry the input sampling noise.
        let diffs: Vec<f64> = ta.elbo.windows(2).map(|w| w[1] - w[0]).collect();
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / diffs.len() as f64;
        assert!(var > 0.0);
    }

    #[test]
    fn rejects_invalid_config() {
        let data = flat_dataset(10, 0, 0.0);
        let model = init_model(&data, 2, InitStrategy::Grid, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let bad = OptimConfig {
            learning_rate: 0.0,
            ..OptimConfig::default()
        };
        assert!(train(&model, &data, &bad, InputMode::Di).is_err());
        assert!(matches!(
            train(&model, &[], &OptimConfig::default(), InputMode::Di),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn trace_csv_has_one_row_per_step() {
        let trace = TrainingTrace {
            elbo: vec![-3.0, -2.0],
            ema: vec![-3.0, -2.9],
            wall_ms: vec![1.0, 2.0],
            converged: false,
        };
        let csv = trace.to_csv();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.starts_with("step,elbo,ema,wall_ms\n1,"));
    }
}
