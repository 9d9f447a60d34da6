//! End-to-end stages shared by the command line and the experiment matrix:
//! simulate, build datasets, train, evaluate and localize.

use std::fmt::Write as _;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{Config, StageSeeds};
use crate::error::Result;
use crate::eval::{ErrorGrid, EvalReport, GridSpec, Reference};
use crate::optim::{train, InputMode, TrainingTrace};
use crate::pf::{run_localization, LocalizationResult};
use crate::survey::{
    build_dataset, generate_terrain, simulate_plan, simulate_survey, split_survey, transect, BoundingBox, PlanarState,
    SplitMasks, SurveyDataset, Terrain,
};
use crate::svgp::{init_model, Posterior, SvgpModel, UncertainInput};

/// Terrain and lawnmower survey for the configured master seed.
pub fn simulate(cfg: &Config) -> Result<SurveyDataset> {
    let seeds = cfg.stage_seeds();
    let terrain = generate_terrain(seeds.terrain, &cfg.survey.terrain)?;
    simulate_survey(&terrain, &cfg.survey, seeds.survey)
}

pub fn split(cfg: &Config, survey: &SurveyDataset) -> Result<SplitMasks> {
    split_survey(survey, cfg.eval.heldout_fraction)
}

/// Full per-beam dataset in `mode`, in beam order.
pub fn dataset(cfg: &Config, survey: &SurveyDataset, mode: InputMode) -> Result<Vec<UncertainInput>> {
    build_dataset(survey, mode, &cfg.propagation)
}

/// Beams outside the held-out rectangle.
pub fn training_subset(dataset: &[UncertainInput], masks: &SplitMasks) -> Vec<UncertainInput> {
    SplitMasks::select(dataset, &masks.train)
}

/// Initializes and trains a map. Initialization and minibatch sampling use
/// the init and train stage seeds, so both modes see the same random
/// streams.
pub fn train_map(cfg: &Config, training: &[UncertainInput], mode: InputMode) -> Result<(SvgpModel, TrainingTrace)> {
    let seeds = cfg.stage_seeds();
    let mut rng = ChaCha8Rng::seed_from_u64(seeds.init);
    let s = cfg.model.num_inducing.min(training.len().max(1));
    let model = init_model(training, s, cfg.model.init, &mut rng)?;
    let optim = crate::optim::OptimConfig {
        seed: seeds.train,
        ..cfg.optim.clone()
    };
    train(&model, training, &optim, mode)
}

pub fn grid_spec(cfg: &Config, terrain: &Terrain) -> Result<GridSpec> {
    GridSpec::new(terrain.bbox, cfg.eval.grid_n)
}

fn heldout_region(cfg: &Config, terrain: &Terrain) -> Option<BoundingBox> {
    (cfg.eval.heldout_fraction > 0.0).then(|| terrain.bbox.centered_fraction(cfg.eval.heldout_fraction))
}

/// Grid evaluation of a map against the analytic terrain.
pub fn evaluate(cfg: &Config, terrain: &Terrain, model: &SvgpModel, steps: usize) -> Result<(ErrorGrid, EvalReport)> {
    let posterior = Posterior::new(model)?;
    let region = heldout_region(cfg, terrain);
    let grid = ErrorGrid::evaluate(&posterior, Reference::Terrain(terrain), grid_spec(cfg, terrain)?, region.as_ref());
    let report = EvalReport::new(model, &grid, steps)?;
    Ok((grid, report))
}

/// Straight eastbound run across the middle of the held-out rectangle (the
/// whole box, inside the plan margin, when nothing is held out), flown with
/// the survey's drift and sensor models.
pub fn localization_run(cfg: &Config, terrain: &Terrain) -> Result<SurveyDataset> {
    let bbox = terrain.bbox;
    let margin = cfg.survey.plan.margin;
    let (x0, x1) = match heldout_region(cfg, terrain) {
        Some(r) => (r.min[0], r.max[0]),
        None => (bbox.min[0] + margin, bbox.max[0] - margin),
    };
    let start = PlanarState {
        x: x0,
        y: bbox.center()[1],
        z: cfg.survey.plan.vehicle_z,
        yaw: 0.0,
    };
    let plan = transect(start, x1 - x0, &cfg.survey.plan)?;
    simulate_plan(terrain, &plan, &cfg.survey, cfg.stage_seeds().localization_run)
}

pub fn localize(cfg: &Config, run: &SurveyDataset, model: &SvgpModel) -> Result<LocalizationResult> {
    let posterior = Posterior::new(model)?;
    let pf = crate::pf::PfConfig {
        seed: cfg.stage_seeds().filter,
        ..cfg.pf.clone()
    };
    run_localization(run, &posterior, &pf)
}

/// One trained map of the experiment matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub noise: f64,
    pub seed: u64,
    pub mode: InputMode,
    pub steps: usize,
    pub converged: bool,
    pub rmse_train: f64,
    pub rmse_heldout: f64,
    pub rmse_heldout_subtracted: f64,
    pub trace_kss: f64,
    pub mean_var_train: f64,
    pub mean_var_heldout: f64,
    pub pf_rmse: f64,
    pub pf_final_error: f64,
    pub dr_rmse: f64,
    pub train_wall_s: f64,
}

pub const RECORD_METRICS: [&str; 11] = [
    "steps",
    "rmse_train",
    "rmse_heldout",
    "rmse_heldout_subtracted",
    "trace_kss",
    "mean_var_train",
    "mean_var_heldout",
    "pf_rmse",
    "pf_final_error",
    "dr_rmse",
    "train_wall_s",
];

impl RunRecord {
    pub fn metric(&self, name: &str) -> f64 {
        match name {
            "steps" => self.steps as f64,
            "rmse_train" => self.rmse_train,
            "rmse_heldout" => self.rmse_heldout,
            "rmse_heldout_subtracted" => self.rmse_heldout_subtracted,
            "trace_kss" => self.trace_kss,
            "mean_var_train" => self.mean_var_train,
            "mean_var_heldout" => self.mean_var_heldout,
            "pf_rmse" => self.pf_rmse,
            "pf_final_error" => self.pf_final_error,
            "dr_rmse" => self.dr_rmse,
            "train_wall_s" => self.train_wall_s,
            other => panic!("unknown metric {other}"),
        }
    }
}

/// Everything one matrix cell (noise level and master seed) produces.
#[derive(Clone, Debug)]
pub struct CellOutput {
    pub survey: SurveyDataset,
    pub models: Vec<(InputMode, SvgpModel, TrainingTrace)>,
    pub records: Vec<RunRecord>,
}

/// Simulates one survey at `cfg`'s master seed and noise level, then trains,
/// evaluates and (optionally) localizes with a map for each mode.
pub fn run_cell(cfg: &Config, modes: &[InputMode], localize_maps: bool) -> Result<CellOutput> {
    let survey = simulate(cfg)?;
    let masks = split(cfg, &survey)?;
    let run = if localize_maps {
        Some(localization_run(cfg, &survey.terrain)?)
    } else {
        None
    };
    let mut models = Vec::new();
    let mut records = Vec::new();
    for &mode in modes {
        let data = dataset(cfg, &survey, mode)?;
        let training = training_subset(&data, &masks);
        let t0 = Instant::now();
        let (model, trace) = train_map(cfg, &training, mode)?;
        let train_wall_s = t0.elapsed().as_secs_f64();
        let (_, report) = evaluate(cfg, &survey.terrain, &model, trace.steps())?;
        let (pf_rmse, pf_final_error, dr_rmse) = match &run {
            Some(run) => {
                let loc = localize(cfg, run, &model)?;
                (loc.pf_rmse(), loc.final_error(), loc.dr_rmse())
            }
            None => (f64::NAN, f64::NAN, f64::NAN),
        };
        log::info!(
            "seed {} noise {:e} {mode}: {} steps, rmse train {:.3} heldout {:?}",
            cfg.seed,
            cfg.survey.drift.yaw_drift_std,
            trace.steps(),
            report.rmse_train,
            report.rmse_heldout
        );
        records.push(RunRecord {
            noise: cfg.survey.drift.yaw_drift_std,
            seed: cfg.seed,
            mode,
            steps: trace.steps(),
            converged: trace.converged,
            rmse_train: report.rmse_train,
            rmse_heldout: report.rmse_heldout.unwrap_or(f64::NAN),
            rmse_heldout_subtracted: report.rmse_heldout_subtracted.unwrap_or(f64::NAN),
            trace_kss: report.trace_kss,
            mean_var_train: report.mean_var_train,
            mean_var_heldout: report.mean_var_heldout.unwrap_or(f64::NAN),
            pf_rmse,
            pf_final_error,
            dr_rmse,
            train_wall_s,
        });
        models.push((mode, model, trace));
    }
    Ok(CellOutput {
        survey,
        models,
        records,
    })
}

/// Configuration of one matrix cell: the master seed is offset by the seed
/// index and the drift level replaced.
pub fn cell_config(cfg: &Config, noise: f64, seed_index: usize) -> Config {
    let mut c = cfg.clone();
    c.seed = cfg.seed.wrapping_add(seed_index as u64);
    c.survey.drift.yaw_drift_std = noise;
    c
}

/// Runs the full matrix of noise levels × seeds × modes. Cells share the
/// terrain for a given seed index across noise levels.
pub fn run_experiment(cfg: &Config) -> Result<Vec<RunRecord>> {
    let e = &cfg.experiment;
    let mut out = Vec::new();
    for &noise in &e.noise_levels {
        for i in 0..e.num_seeds {
            let cell = run_cell(&cell_config(cfg, noise, i), &e.modes, e.localize)?;
            out.extend(cell.records);
        }
    }
    Ok(out)
}

/// Linear-interpolation quantile of sorted finite values.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Median and quartiles of one metric over the runs of one matrix cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub noise: f64,
    pub mode: InputMode,
    pub metric: String,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub n: usize,
}

pub fn summarize(records: &[RunRecord]) -> Vec<CellSummary> {
    let mut keys: Vec<(f64, InputMode)> = Vec::new();
    for r in records {
        if !keys.contains(&(r.noise, r.mode)) {
            keys.push((r.noise, r.mode));
        }
    }
    let mut out = Vec::new();
    for (noise, mode) in keys {
        for metric in RECORD_METRICS {
            let mut v: Vec<f64> = records
                .iter()
                .filter(|r| r.noise == noise && r.mode == mode)
                .map(|r| r.metric(metric))
                .filter(|v| v.is_finite())
                .collect();
            v.sort_by(f64::total_cmp);
            out.push(CellSummary {
                noise,
                mode,
                metric: metric.to_string(),
                median: quantile(&v, 0.5),
                q1: quantile(&v, 0.25),
                q3: quantile(&v, 0.75),
                n: v.len(),
            });
        }
    }
    out
}

pub fn records_csv(records: &[RunRecord]) -> String {
    let mut s = String::from("noise,seed,mode,converged");
    for m in RECORD_METRICS {
        let _ = write!(s, ",{m}");
    }
    s.push('\n');
    for r in records {
        let _ = write!(s, "{:?},{},{},{}", r.noise, r.seed, r.mode, r.converged);
        for m in RECORD_METRICS {
            let _ = write!(s, ",{:?}", r.metric(m));
        }
        s.push('\n');
    }
    s
}

pub fn summary_csv(summary: &[CellSummary]) -> String {
    let mut s = String::from("noise,mode,metric,median,q1,q3,n\n");
    for c in summary {
        let _ = writeln!(
            s,
            "{:?},{},{},{:?},{:?},{:?},{}",
            c.noise, c.mode, c.metric, c.median, c.q1, c.q3, c.n
        );
    }
    s
}

/// Human-readable table: one row per noise level and mode, median [IQR].
pub fn summary_text(summary: &[CellSummary]) -> String {
    let shown = ["steps", "rmse_train", "rmse_heldout", "mean_var_heldout", "pf_rmse", "dr_rmse"];
    let mut s = format!("{:<9} {:<4}", "noise", "mode");
    for m in shown {
        let _ = write!(s, " {m:>26}");
    }
    s.push('\n');
    let mut keys: Vec<(f64, InputMode)> = Vec::new();
    for c in summary {
        if !keys.contains(&(c.noise, c.mode)) {
            keys.push((c.noise, c.mode));
        }
    }
    for (noise, mode) in keys {
        let _ = write!(s, "{noise:<9e} {mode:<4}");
        for m in shown {
            match summary.iter().find(|c| c.noise == noise && c.mode == mode && c.metric == m) {
                Some(c) if c.n > 0 => {
                    let cell = format!("{:.4} [{:.4}, {:.4}]", c.median, c.q1, c.q3);
                    let _ = write!(s, " {cell:>26}");
                }
                _ => {
                    let _ = write!(s, " {:>26}", "-");
                }
            }
        }
        s.push('\n');
    }
    s
}

/// Seeds used by a run, recorded in manifests.
pub fn seeds_of(cfg: &Config) -> StageSeeds {
    cfg.stage_seeds()
}
