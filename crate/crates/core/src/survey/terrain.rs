use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned rectangle in the map plane (m).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl BoundingBox {
    pub fn new(min: [f64; 2], max: [f64; 2]) -> Result<Self> {
        let b = Self { min, max };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.min.iter().chain(&self.max).all(|v| v.is_finite());
        if !finite || self.max[0] <= self.min[0] || self.max[1] <= self.min[1] {
            return Err(Error::InvalidArgument(format!("degenerate bounding box {self:?}")));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.max[0] - self.min[0]
    }

    pub fn height(&self) -> f64 {
        self.max[1] - self.min[1]
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> [f64; 2] {
        [0.5 * (self.min[0] + self.max[0]), 0.5 * (self.min[1] + self.max[1])]
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.min[0] && x <= self.max[0] && y >= self.min[1] && y <= self.max[1]
    }

    /// Rectangle with the same center and `fraction` of the area.
    pub fn centered_fraction(&self, fraction: f64) -> BoundingBox {
        let c = self.center();
        let s = fraction.clamp(0.0, 1.0).sqrt() * 0.5;
        BoundingBox {
            min: [c[0] - s * self.width(), c[1] - s * self.height()],
            max: [c[0] + s * self.width(), c[1] + s * self.height()],
        }
    }
}

/// Isotropic Gaussian bump `a · exp(−‖x − c‖² / (2w²))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub center: [f64; 2],
    pub amplitude: f64,
    pub width: f64,
}

/// Plane wave `a · sin(k·x + φ)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Wave {
    pub wavevector: [f64; 2],
    pub phase: f64,
    pub amplitude: f64,
}

/// Analytic seabed height field `z = T(x, y)`; z is up, so depths are
/// negative.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Terrain {
    pub bbox: BoundingBox,
    pub base_depth: f64,
    pub bumps: Vec<Bump>,
    pub waves: Vec<Wave>,
}

impl Terrain {
    pub fn flat(bbox: BoundingBox, depth: f64) -> Self {
        Self {
            bbox,
            base_depth: depth,
            bumps: Vec::new(),
            waves: Vec::new(),
        }
    }

    pub fn height(&self, x: f64, y: f64) -> f64 {
        let mut z = self.base_depth;
        for b in &self.bumps {
            let (dx, dy) = (x - b.center[0], y - b.center[1]);
            z += b.amplitude * (-(dx * dx + dy * dy) / (2.0 * b.width * b.width)).exp();
        }
        for w in &self.waves {
            z += w.amplitude * (w.wavevector[0] * x + w.wavevector[1] * y + w.phase).sin();
        }
        z
    }

    /// `(∂T/∂x, ∂T/∂y)`.
    pub fn gradient(&self, x: f64, y: f64) -> [f64; 2] {
        let mut g = [0.0; 2];
        for b in &self.bumps {
            let (dx, dy) = (x - b.center[0], y - b.center[1]);
            let w2 = b.width * b.width;
            let e = b.amplitude * (-(dx * dx + dy * dy) / (2.0 * w2)).exp();
            g[0] -= e * dx / w2;
            g[1] -= e * dy / w2;
        }
        for w in &self.waves {
            let c = w.amplitude * (w.wavevector[0] * x + w.wavevector[1] * y + w.phase).cos();
            g[0] += c * w.wavevector[0];
            g[1] += c * w.wavevector[1];
        }
        g
    }

    /// Upper bound on `|T − base_depth|`.
    pub fn relief_bound(&self) -> f64 {
        self.bumps.iter().map(|b| b.amplitude.abs()).sum::<f64>()
            + self.waves.iter().map(|w| w.amplitude.abs()).sum::<f64>()
    }

    /// Upper bound on the slope magnitude, used to size ray-marching steps.
    pub fn slope_bound(&self) -> f64 {
        // max of |a| r/w² · exp(−r²/2w²) is |a| / (w √e).
        self.bumps
            .iter()
            .map(|b| b.amplitude.abs() / (b.width * std::f64::consts::E.sqrt()))
            .sum::<f64>()
            + self
                .waves
                .iter()
                .map(|w| w.amplitude.abs() * w.wavevector[0].hypot(w.wavevector[1]))
                .sum::<f64>()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TerrainConfig {
    pub bbox: BoundingBox,
    pub base_depth: f64,
    pub n_bumps: usize,
    /// Range of bump amplitude magnitudes (m); signs are random.
    pub amplitude_range: [f64; 2],
    pub width_range: [f64; 2],
    pub n_waves: usize,
    pub wave_amplitude: f64,
    pub wavelength_range: [f64; 2],
}

impl Default for TerrainConfig {
    fn default() -> Self {
        Self {
            bbox: BoundingBox {
                min: [0.0, 0.0],
                max: [320.0, 320.0],
            },
            base_depth: -30.0,
            n_bumps: 30,
            amplitude_range: [2.0, 6.0],
            width_range: [8.0, 30.0],
            n_waves: 3,
            wave_amplitude: 1.5,
            wavelength_range: [60.0, 200.0],
        }
    }
}

fn check_range(r: [f64; 2], what: &str, positive: bool) -> Result<()> {
    if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]) || (positive && r[0] <= 0.0) || r[0] < 0.0 {
        return Err(Error::InvalidArgument(format!("invalid {what} range {r:?}")));
    }
    Ok(())
}

fn sample_in<R: Rng>(rng: &mut R, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.random_range(r[0]..r[1])
    } else {
        r[0]
    }
}

/// Random terrain, deterministic in `seed`.
pub fn generate_terrain(seed: u64, config: &TerrainConfig) -> Result<Terrain> {
    config.bbox.validate()?;
    check_range(config.amplitude_range, "amplitude", false)?;
    check_range(config.width_range, "bump width", true)?;
    check_range(config.wavelength_range, "wavelength", true)?;
    if !(config.wave_amplitude >= 0.0) {
        return Err(Error::InvalidArgument("wave_amplitude must be non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = config.bbox;
    let bumps = (0..config.n_bumps)
        .map(|_| {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            Bump {
                center: [
                    rng.random_range(b.min[0]..b.max[0]),
                    rng.random_range(b.min[1]..b.max[1]),
                ],
                amplitude: sign * sample_in(&mut rng, config.amplitude_range),
                width: sample_in(&mut rng, config.width_range),
            }
        })
        .collect();
    let waves = (0..config.n_waves)
        .map(|_| {
            let wavelength = sample_in(&mut rng, config.wavelength_range);
            let dir = rng.random_range(0.0..std::f64::consts::TAU);
            let k = std::f64::consts::TAU / wavelength;
            Wave {
                wavevector: [k * dir.cos(), k * dir.sin()],
                phase: rng.random_range(0.0..std::f64::consts::TAU),
                amplitude: config.wave_amplitude * rng.random_range(0.5..1.0),
            }
        })
        .collect();
    Ok(Terrain {
        bbox: b,
        base_depth: config.base_depth,
        bumps,
        waves,
    })
}
