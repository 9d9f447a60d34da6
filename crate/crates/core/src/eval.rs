//! Gridded map-quality metrics: reconstruction and prediction RMSE against
//! ground truth, and posterior variance summaries.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::Input;
use crate::survey::{BoundingBox, Terrain};
use crate::svgp::{Posterior, SvgpModel};

/// `n × n` cell grid over a box; cells are indexed row-major with x fastest.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub bbox: BoundingBox,
    pub n: usize,
}

impl GridSpec {
    pub fn new(bbox: BoundingBox, n: usize) -> Result<Self> {
        bbox.validate()?;
        if n == 0 {
            return Err(Error::InvalidArgument("grid size must be at least 1".into()));
        }
        Ok(Self { bbox, n })
    }

    pub fn num_cells(&self) -> usize {
        self.n * self.n
    }

    pub fn cell_size(&self) -> [f64; 2] {
        [self.bbox.width() / self.n as f64, self.bbox.height() / self.n as f64]
    }

    pub fn centers(&self) -> Vec<Input> {
        let [dx, dy] = self.cell_size();
        let mut out = Vec::with_capacity(self.num_cells());
        for j in 0..self.n {
            for i in 0..self.n {
                out.push([
                    self.bbox.min[0] + (i as f64 + 0.5) * dx,
                    self.bbox.min[1] + (j as f64 + 0.5) * dy,
                ]);
            }
        }
        out
    }

    /// Cell holding `(x, y)`, or `None` outside the box.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<usize> {
        if !self.bbox.contains(x, y) {
            return None;
        }
        let [dx, dy] = self.cell_size();
        let i = (((x - self.bbox.min[0]) / dx) as usize).min(self.n - 1);
        let j = (((y - self.bbox.min[1]) / dy) as usize).min(self.n - 1);
        Some(j * self.n + i)
    }
}

/// Ground truth a map is compared against.
#[derive(Clone, Copy, Debug)]
pub enum Reference<'a> {
    /// Analytic height field sampled at cell centers.
    Terrain(&'a Terrain),
    /// Average depth of the cloud points falling in each cell; empty cells
    /// have no reference.
    Cloud(&'a [Vector3<f64>]),
}

impl Reference<'_> {
    fn sample(&self, spec: &GridSpec, centers: &[Input]) -> Vec<Option<f64>> {
        match self {
            Reference::Terrain(t) => centers.iter().map(|c| Some(t.height(c[0], c[1]))).collect(),
            Reference::Cloud(points) => {
                let mut sum = vec![0.0; spec.num_cells()];
                let mut count = vec![0usize; spec.num_cells()];
                for p in points.iter() {
                    if let Some(k) = spec.cell_of(p.x, p.y) {
                        sum[k] += p.z;
                        count[k] += 1;
                    }
                }
                sum.iter()
                    .zip(&count)
                    .map(|(s, c)| (*c > 0).then(|| s / *c as f64))
                    .collect()
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CellRegion {
    Train,
    Heldout,
}

/// Per-cell posterior and error against a reference.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorGrid {
    pub spec: GridSpec,
    pub centers: Vec<Input>,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    /// `|mean − reference|`, `None` where the reference is missing.
    pub error: Vec<Option<f64>>,
    pub region: Vec<CellRegion>,
}

/// Root mean square of the values; errors on an empty set.
pub fn rmse<I: IntoIterator<Item = f64>>(values: I) -> Result<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for v in values {
        s += v * v;
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyRegion);
    }
    Ok((s / n as f64).sqrt())
}

impl ErrorGrid {
    /// Evaluates the posterior on every cell center. Cells whose center
    /// lies in `heldout` are labeled held-out, all others train.
    pub fn evaluate(
        posterior: &Posterior,
        reference: Reference<'_>,
        spec: GridSpec,
        heldout: Option<&BoundingBox>,
    ) -> Self {
        let centers = spec.centers();
        let (mean, variance) = posterior.predict(&centers);
        let truth = reference.sample(&spec, &centers);
        let error = truth
            .iter()
            .zip(mean.iter())
            .map(|(t, m)| t.map(|t| (m - t).abs()))
            .collect();
        let region = centers
            .iter()
            .map(|c| match heldout {
                Some(b) if b.contains(c[0], c[1]) => CellRegion::Heldout,
                _ => CellRegion::Train,
            })
            .collect();
        Self {
            spec,
            centers,
            mean: mean.as_slice().to_vec(),
            variance: variance.as_slice().to_vec(),
            error,
            region,
        }
    }

    fn in_region(&self, region: Option<CellRegion>) -> impl Iterator<Item = usize> + '_ {
        (0..self.centers.len()).filter(move |k| region.is_none_or(|r| self.region[*k] == r))
    }

    /// RMSE over cells of `region` (all cells for `None`) that have a
    /// reference value.
    pub fn rmse(&self, region: Option<CellRegion>) -> Result<f64> {
        rmse(self.in_region(region).filter_map(|k| self.error[k]))
    }

    /// Mean posterior variance over `region`.
    pub fn mean_variance(&self, region: Option<CellRegion>) -> Result<f64> {
        let v: Vec<f64> = self.in_region(region).map(|k| self.variance[k]).collect();
        if v.is_empty() {
            return Err(Error::EmptyRegion);
        }
        Ok(v.iter().sum::<f64>() / v.len() as f64)
    }

    /// `cell_x, cell_y, error, mask`; missing errors are written as `nan`,
    /// the mask is `train` or `heldout`.
    pub fn error_csv(&self) -> String {
        let mut s = String::from("cell_x,cell_y,error,mask\n");
        for k in 0..self.centers.len() {
            let c = self.centers[k];
            let mask = match self.region[k] {
                CellRegion::Train => "train",
                CellRegion::Heldout => "heldout",
            };
            let _ = writeln!(s, "{:?},{:?},{:?},{mask}", c[0], c[1], self.error[k].unwrap_or(f64::NAN));
        }
        s
    }

    /// `cell_x, cell_y, mean, variance` of the posterior.
    pub fn prediction_csv(&self) -> String {
        let mut s = String::from("cell_x,cell_y,mean,variance\n");
        for k in 0..self.centers.len() {
            let c = self.centers[k];
            let _ = writeln!(s, "{:?},{:?},{:?},{:?}", c[0], c[1], self.mean[k], self.variance[k]);
        }
        s
    }
}

/// Reconstruction error of the posterior mean against `reference` over the
/// train region of the grid.
pub fn consistency_error(
    posterior: &Posterior,
    reference: Reference<'_>,
    heldout: Option<&BoundingBox>,
    spec: GridSpec,
) -> Result<(ErrorGrid, f64)> {
    let grid = ErrorGrid::evaluate(posterior, reference, spec, heldout);
    let r = grid.rmse(Some(CellRegion::Train))?;
    Ok((grid, r))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionError {
    /// RMSE over held-out cells.
    pub heldout: f64,
    /// RMSE over every cell.
    pub full: f64,
    /// Full-grid RMSE minus train-region RMSE.
    pub subtracted: f64,
}

pub fn prediction_error(grid: &ErrorGrid) -> Result<PredictionError> {
    let heldout = grid.rmse(Some(CellRegion::Heldout))?;
    let full = grid.rmse(None)?;
    let train = grid.rmse(Some(CellRegion::Train))?;
    Ok(PredictionError {
        heldout,
        full,
        subtracted: full - train,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceSummary {
    /// `Tr(K_ss)` at the inducing locations.
    pub trace_kss: f64,
    pub mean_var_train: f64,
    pub mean_var_heldout: f64,
}

/// Kernel trace and per-region mean posterior variance. A region without
/// cells reports zero.
pub fn variance_summary(model: &SvgpModel, grid: &ErrorGrid) -> VarianceSummary {
    VarianceSummary {
        trace_kss: model.kss().trace(),
        mean_var_train: grid.mean_variance(Some(CellRegion::Train)).unwrap_or(0.0),
        mean_var_heldout: grid.mean_variance(Some(CellRegion::Heldout)).unwrap_or(0.0),
    }
}

/// Summary of one trained map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rmse_train: f64,
    pub rmse_heldout: Option<f64>,
    pub rmse_full: f64,
    pub rmse_heldout_subtracted: Option<f64>,
    pub trace_kss: f64,
    pub mean_var_train: f64,
    pub mean_var_heldout: Option<f64>,
    pub steps: usize,
    pub cells: usize,
}

impl EvalReport {
    /// Builds the report from an evaluated grid. Held-out fields are `None`
    /// when the grid has no held-out cell.
    pub fn new(model: &SvgpModel, grid: &ErrorGrid, steps: usize) -> Result<Self> {
        let v = variance_summary(model, grid);
        let pred = prediction_error(grid).ok();
        Ok(Self {
            rmse_train: grid.rmse(Some(CellRegion::Train))?,
            rmse_heldout: pred.map(|p| p.heldout),
            rmse_full: grid.rmse(None)?,
            rmse_heldout_subtracted: pred.map(|p| p.subtracted),
            trace_kss: v.trace_kss,
            mean_var_train: v.mean_var_train,
            mean_var_heldout: pred.map(|_| v.mean_var_heldout),
            steps,
            cells: grid.spec.num_cells(),
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format("report", path, e.to_string()))
    }
}
