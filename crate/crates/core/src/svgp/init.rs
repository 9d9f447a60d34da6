use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{InducingSet, SvgpModel, UncertainInput};
use crate::error::{Error, Result};
use crate::kernels::{Input, KernelParams};

/// How inducing locations are placed before training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitStrategy {
    /// A uniformly random subset of the input means, kept in dataset order.
    Subset,
    /// A regular grid of cell centers over the bounding box of the means.
    Grid,
    /// k-means++ seeding followed by Lloyd iterations on the means.
    Kmeans,
}

impl FromStr for InitStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "subset" => Ok(Self::Subset),
            "grid" => Ok(Self::Grid),
            "kmeans" | "kmeans-like" => Ok(Self::Kmeans),
            other => Err(Error::InvalidArgument(format!("unknown init strategy {other:?}"))),
        }
    }
}

const LLOYD_ITERATIONS: usize = 25;
const MIN_VARIANCE: f64 = 1e-6;

fn bounding_box(points: &[Input]) -> ([f64; 2], [f64; 2]) {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in points {
        for d in 0..2 {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    (lo, hi)
}

fn grid_locations(points: &[Input], s: usize) -> Vec<Input> {
    let (lo, hi) = bounding_box(points);
    let w = (hi[0] - lo[0]).max(f64::EPSILON);
    let h = (hi[1] - lo[1]).max(f64::EPSILON);
    let nx = ((s as f64 * w / h).sqrt().round() as usize).clamp(1, s);
    let ny = s.div_ceil(nx);
    let mut out = Vec::with_capacity(s);
    'outer: for j in 0..ny {
        for i in 0..nx {
            if out.len() == s {
                break 'outer;
            }
            out.push([
                lo[0] + w * (i as f64 + 0.5) / nx as f64,
                lo[1] + h * (j as f64 + 0.5) / ny as f64,
            ]);
        }
    }
    out
}

fn sq_dist(a: &Input, b: &Input) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

fn nearest(p: &Input, centers: &[Input]) -> (usize, f64) {
    centers
        .iter()
        .enumerate()
        .map(|(k, c)| (k, sq_dist(p, c)))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

pub(crate) fn kmeans<R: Rng + ?Sized>(points: &[Input], k: usize, rng: &mut R) -> Vec<Input> {
    let mut centers = Vec::with_capacity(k);
    centers.push(points[rng.random_range(0..points.len())]);
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = points.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                if target < *d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            rng.random_range(0..points.len())
        };
        let c = points[next];
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
        centers.push(c);
    }
    let mut assign = vec![usize::MAX; points.len()];
    for _ in 0..LLOYD_ITERATIONS {
        let mut changed = false;
        for (a, p) in assign.iter_mut().zip(points) {
            let (best, _) = nearest(p, &centers);
            if *a != best {
                *a = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![[0.0f64; 3]; k];
        for (a, p) in assign.iter().zip(points) {
            sums[*a][0] += p[0];
            sums[*a][1] += p[1];
            sums[*a][2] += 1.0;
        }
        for (c, s) in centers.iter_mut().zip(&sums) {
            if s[2] > 0.0 {
                *c = [s[0] / s[2], s[1] / s[2]];
            }
        }
    }
    centers
}

/// Builds an untrained model: inducing locations per `strategy`, `q(u)` at
/// the prior, lengthscale a tenth of the bounding-box diagonal, signal
/// variance the depth variance and noise variance 1% of it. The constant
/// prior mean is the mean depth.
pub fn init_model<R: Rng + ?Sized>(
    dataset: &[UncertainInput],
    s: usize,
    strategy: InitStrategy,
    rng: &mut R,
) -> Result<SvgpModel> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = dataset.len();
    if s == 0 || s > n {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= S <= N, got S = {s}, N = {n}"
        )));
    }
    let means: Vec<Input> = dataset.iter().map(|u| u.mean_xy).collect();
    let z = match strategy {
        InitStrategy::Subset => {
            let mut idx = index::sample(rng, n, s).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| means[i]).collect()
        }
        InitStrategy::Grid => grid_locations(&means, s),
        InitStrategy::Kmeans => kmeans(&means, s, rng),
    };

    let (lo, hi) = bounding_box(&means);
    let diag = (hi[0] - lo[0]).hypot(hi[1] - lo[1]);
    let lengthscale = if diag > 0.0 { diag / 10.0 } else { 1.0 };
    let mean_depth = dataset.iter().map(|u| u.depth).sum::<f64>() / n as f64;
    let depth_var = dataset
        .iter()
        .map(|u| (u.depth - mean_depth).powi(2))
        .sum::<f64>()
        / n as f64;
    let signal_variance = depth_var.max(MIN_VARIANCE);
    SvgpModel::with_prior(
        KernelParams::new(lengthscale, signal_variance),
        InducingSet::new(z)?,
        0.01 * signal_variance,
        n,
        mean_depth,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn dataset(points: &[Input]) -> Vec<UncertainInput> {
        points
            .iter()
            .enumerate()
            .map(|(i, p)| UncertainInput::deterministic(*p, (i % 7) as f64))
            .collect()
    }

    #[test]
    fn subset_with_all_points_copies_means_in_order() {
        let pts: Vec<Input> = (0..30).map(|i| [i as f64, (i * i) as f64 * 0.1]).collect();
        let m = init_model(&dataset(&pts), 30, InitStrategy::Subset, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(m.inducing.z, pts);
    }

    #[test]
    fn grid_stays_inside_bounding_box() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<Input> = (0..200)
            .map(|_| [rng.random_range(-20.0..35.0), rng.random_range(4.0..9.0)])
            .collect();
        let m = init_model(&dataset(&pts), 37, InitStrategy::Grid, &mut rng).unwrap();
        let (lo, hi) = bounding_box(&pts);
        assert_eq!(m.inducing.len(), 37);
        for z in &m.inducing.z {
            assert!(z[0] >= lo[0] && z[0] <= hi[0] && z[1] >= lo[1] && z[1] <= hi[1]);
        }
    }

    #[test]
    fn kmeans_finds_two_clusters() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let noise = Normal::new(0.0, 0.3).unwrap();
        let truth = [[-5.0, 2.0], [6.0, -3.0]];
        let mut pts = Vec::new();
        for c in &truth {
            for _ in 0..500 {
                pts.push([c[0] + noise.sample(&mut rng), c[1] + noise.sample(&mut rng)]);
            }
        }
        // Brute-force oracle: the empirical mean of each generated cluster.
        let oracle: Vec<Input> = pts
            .chunks(500)
            .map(|c| {
                let s = c.iter().fold([0.0, 0.0], |a, p| [a[0] + p[0], a[1] + p[1]]);
                [s[0] / 500.0, s[1] / 500.0]
            })
            .collect();
        let m = init_model(&dataset(&pts), 2, InitStrategy::Kmeans, &mut rng).unwrap();
        for o in &oracle {
            let (_, d2) = nearest(o, &m.inducing.z);
            assert!(d2.sqrt() < 0.1, "{o:?} vs {:?}", m.inducing.z);
        }
    }

    #[test]
    fn hyperparameter_defaults() {
        let pts: Vec<Input> = vec![[0.0, 0.0], [30.0, 40.0], [10.0, 10.0]];
        let data: Vec<UncertainInput> = pts
            .iter()
            .zip([1.0, 2.0, 3.0])
            .map(|(p, d)| UncertainInput::deterministic(*p, d))
            .collect();
        let m = init_model(&data, 2, InitStrategy::Subset, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!((m.kernel.lengthscale() - 5.0).abs() < 1e-12);
        assert!((m.kernel.signal_variance() - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.noise_variance() - 2.0 / 300.0).abs() < 1e-12);
        assert!((m.mean_offset - 2.0).abs() < 1e-15);
        assert_eq!(m.n_total, 3);
    }

    #[test]
    fn empty_dataset_is_an_error() {
        assert!(matches!(
            init_model(&[], 1, InitStrategy::Grid, &mut ChaCha8Rng::seed_from_u64(0)),
            Err(Error::EmptyDataset)
        ));
    }
}
