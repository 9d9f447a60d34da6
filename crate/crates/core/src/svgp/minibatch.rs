use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;

use super::UncertainInput;
use crate::error::{Error, Result};
use crate::kernels::Input;

/// Lower Cholesky factor of a 2×2 input covariance. Semidefinite inputs
/// (including the all-zero covariance of a deterministic input) are allowed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CovarianceFactor {
    pub l11: f64,
    pub l21: f64,
    pub l22: f64,
}

impl CovarianceFactor {
    pub fn new(cov: &[[f64; 2]; 2]) -> Result<Self> {
        let (a, b, b2, d) = (cov[0][0], cov[0][1], cov[1][0], cov[1][1]);
        let scale = a.abs().max(d.abs()).max(b.abs()).max(1.0);
        let bad = |why: &str| Error::InvalidCovariance(format!("input covariance {cov:?} {why}"));
        if ![a, b, b2, d].iter().all(|v| v.is_finite()) {
            return Err(bad("is not finite"));
        }
        if (b - b2).abs() > 1e-12 * scale {
            return Err(bad("is not symmetric"));
        }
        let tol = 1e-12 * scale;
        if a < -tol || d < -tol || a * d - b * b < -tol * scale {
            return Err(bad("is not positive semidefinite"));
        }
        let l11 = a.max(0.0).sqrt();
        let l21 = if l11 > 0.0 { b / l11 } else { 0.0 };
        let l22 = (d - l21 * l21).max(0.0).sqrt();
        Ok(Self { l11, l21, l22 })
    }

    #[inline]
    pub fn apply(&self, mean: &Input, e0: f64, e1: f64) -> Input {
        [mean[0] + self.l11 * e0, mean[1] + (self.l21 * e0 + self.l22 * e1)]
    }
}

/// `m` distinct dataset indices drawn uniformly without replacement.
pub fn select_indices<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> Result<Vec<usize>> {
    if m > n {
        return Err(Error::InvalidArgument(format!(
            "minibatch of {m} requested from {n} inputs"
        )));
    }
    Ok(index::sample(rng, n, m).into_vec())
}

/// One Gaussian draw per selected input (repeated `samples_per_input`
/// times), paired with that input's depth.
pub fn draw_inputs<R: Rng + ?Sized>(
    dataset: &[UncertainInput],
    factors: &[CovarianceFactor],
    indices: &[usize],
    samples_per_input: usize,
    rng: &mut R,
) -> (Vec<Input>, Vec<f64>) {
    let mut xs = Vec::with_capacity(indices.len() * samples_per_input);
    let mut ys = Vec::with_capacity(indices.len() * samples_per_input);
    for &i in indices {
        for _ in 0..samples_per_input {
            let e0: f64 = rng.sample(StandardNormal);
            let e1: f64 = rng.sample(StandardNormal);
            xs.push(factors[i].apply(&dataset[i].mean_xy, e0, e1));
            ys.push(dataset[i].depth);
        }
    }
    (xs, ys)
}

/// Selects `m` distinct inputs uniformly at random and draws one sample
/// `x ~ N(mean_xy, cov_xy)` from each.
pub fn sample_minibatch<R: Rng + ?Sized>(
    dataset: &[UncertainInput],
    m: usize,
    rng: &mut R,
) -> Result<(Vec<Input>, Vec<f64>)> {
    let indices = select_indices(dataset.len(), m, rng)?;
    let factors = indices
        .iter()
        .map(|&i| CovarianceFactor::new(&dataset[i].cov_xy))
        .collect::<Result<Vec<_>>>()?;
    let local: Vec<usize> = (0..indices.len()).collect();
    let selected: Vec<UncertainInput> = indices.iter().map(|&i| dataset[i]).collect();
    Ok(draw_inputs(&selected, &factors, &local, 1, rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid_dataset(n: usize, cov: [[f64; 2]; 2]) -> Vec<UncertainInput> {
        (0..n)
            .map(|i| UncertainInput {
                mean_xy: [i as f64, -(i as f64) * 0.5],
                cov_xy: cov,
                depth: i as f64 * 0.1,
            })
            .collect()
    }

    #[test]
    fn zero_covariance_returns_means() {
        let data = grid_dataset(40, [[0.0; 2]; 2]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (x, y) = sample_minibatch(&data, 15, &mut rng).unwrap();
        for (xi, yi) in x.iter().zip(&y) {
            let k = xi[0] as usize;
            assert_eq!(*xi, data[k].mean_xy);
            assert_eq!(*yi, data[k].depth);
        }
    }

    #[test]
    fn full_batch_selects_each_input_once() {
        let data = grid_dataset(25, [[0.0; 2]; 2]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (x, _) = sample_minibatch(&data, 25, &mut rng).unwrap();
        let mut seen: Vec<usize> = x.iter().map(|p| p[0] as usize).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..25).collect::<Vec<_>>());
    }

    #[test]
    fn oversized_batch_is_rejected() {
        let data = grid_dataset(3, [[0.0; 2]; 2]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!(sample_minibatch(&data, 4, &mut rng).is_err());
    }

    #[test]
    fn indefinite_covariance_is_rejected() {
        let data = grid_dataset(3, [[1.0, 2.0], [2.0, 1.0]]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!(matches!(
            sample_minibatch(&data, 2, &mut rng),
            Err(Error::InvalidCovariance(_))
        ));
    }

    #[test]
    fn draws_follow_input_distribution() {
        let ui = UncertainInput {
            mean_xy: [3.0, -2.0],
            cov_xy: [[1.0, 0.0], [0.0, 1.0]],
            depth: 5.0,
        };
        let data = [ui];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 100_000;
        let mut sum = [0.0; 2];
        let mut sq = [[0.0; 2]; 2];
        let samples: Vec<Input> = (0..n)
            .map(|_| sample_minibatch(&data, 1, &mut rng).unwrap().0[0])
            .collect();
        for p in &samples {
            sum[0] += p[0];
            sum[1] += p[1];
        }
        let mean = [sum[0] / n as f64, sum[1] / n as f64];
        for p in &samples {
            let d = [p[0] - mean[0], p[1] - mean[1]];
            for a in 0..2 {
                for b in 0..2 {
                    sq[a][b] += d[a] * d[b] / (n - 1) as f64;
                }
            }
        }
        assert!((mean[0] - 3.0).abs() < 0.02 && (mean[1] + 2.0).abs() < 0.02);
        assert!((sq[0][0] - 1.0).abs() < 0.03 && (sq[1][1] - 1.0).abs() < 0.03);
        assert!(sq[0][1].abs() < 0.03);
    }

    #[test]
    fn sampling_is_reproducible() {
        let data = grid_dataset(50, [[0.3, 0.1], [0.1, 0.2]]);
        let a = sample_minibatch(&data, 20, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sample_minibatch(&data, 20, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }
}
