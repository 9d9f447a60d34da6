use std::path::{Path, PathBuf};

use gpmap::config::Config;
use gpmap::eval::EvalReport;
use gpmap::optim::InputMode;
use gpmap::pipeline;
use gpmap::survey::{read_dataset, read_survey, write_dataset, write_point_cloud, write_survey, write_trajectory_csv};
use gpmap::svgp::{read_model, write_model, SvgpModel};
use gpmap::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::manifest::RunManifest;

/// Artifact names inside the output directory.
pub struct Layout {
    pub dir: PathBuf,
}

impl Layout {
    pub fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        Ok(Self { dir: dir.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn survey(&self) -> PathBuf {
        self.path("survey.json")
    }

    pub fn dataset(&self, mode: InputMode) -> PathBuf {
        self.path(&format!("dataset_{mode}.bin"))
    }

    pub fn model(&self, mode: InputMode) -> PathBuf {
        self.path(&format!("model_{mode}.bin"))
    }

    pub fn trace(&self, mode: InputMode) -> PathBuf {
        self.path(&format!("trace_{mode}.csv"))
    }

    pub fn report(&self, mode: InputMode) -> PathBuf {
        self.path(&format!("report_{mode}.json"))
    }
}

fn io(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| io(path, e))
}

/// Fails with a path-bearing error naming the command that produces a
/// missing upstream artifact.
fn require(path: &Path, producer: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, format!("not found; run `gpmap {producer}` first")),
        ))
    }
}

/// Lines printed to stdout unless `--quiet`.
pub type Summary = Vec<String>;

pub fn simulate(cfg: &Config, out: &Layout) -> Result<Summary> {
    let mut m = RunManifest::new("simulate", cfg);
    let survey = m.time("simulate", || pipeline::simulate(cfg))?;
    let header = format!("seed {} yaw_drift_std {:e}", cfg.seed, cfg.survey.drift.yaw_drift_std);
    m.time("write", || {
        write_survey(&out.survey(), &survey)?;
        write_trajectory_csv(&out.path("trajectory.csv"), &survey.trajectory)?;
        write_point_cloud(&out.path("cloud_dr.xyz"), survey.beams(), &format!("dead-reckoned beams\n{header}"))?;
        write_point_cloud(&out.path("cloud_truth.xyz"), survey.truth(), &format!("true seabed hits\n{header}"))
    })?;
    for name in ["survey.json", "trajectory.csv", "cloud_dr.xyz", "cloud_truth.xyz"] {
        m.output(&out.path(name));
    }
    m.write(&out.path("manifest_simulate.json"))?;
    Ok(vec![format!(
        "simulated {} pings, {} beams ({} dropped) over {:.0} s",
        survey.pings.len(),
        survey.num_beams(),
        survey.stats.dropped,
        survey.trajectory.points.last().map_or(0.0, |p| p.time)
    )])
}

pub fn propagate(cfg: &Config, mode: InputMode, out: &Layout) -> Result<Summary> {
    let mut m = RunManifest::new("propagate", cfg);
    require(&out.survey(), "simulate")?;
    m.input(&out.survey());
    let survey = m.time("read", || read_survey(&out.survey()))?;
    let data = m.time("propagate", || pipeline::dataset(cfg, &survey, mode))?;
    write_dataset(&out.dataset(mode), &data)?;
    m.output(&out.dataset(mode));
    m.write(&out.path(&format!("manifest_propagate_{mode}.json")))?;
    let mean_trace = data.iter().map(|u| u.cov_xy[0][0] + u.cov_xy[1][1]).sum::<f64>() / data.len().max(1) as f64;
    Ok(vec![format!(
        "wrote {} {mode} inputs, mean covariance trace {mean_trace:.4} m²",
        data.len()
    )])
}

fn load_training(cfg: &Config, mode: InputMode, out: &Layout) -> Result<Vec<gpmap::svgp::UncertainInput>> {
    require(&out.survey(), "simulate")?;
    require(&out.dataset(mode), &format!("propagate --mode {mode}"))?;
    let survey = read_survey(&out.survey())?;
    let data = read_dataset(&out.dataset(mode))?;
    if data.len() != survey.num_beams() {
        return Err(Error::Format {
            kind: "dataset",
            path: out.dataset(mode),
            reason: format!("{} records but the survey has {} beams", data.len(), survey.num_beams()),
        });
    }
    let masks = pipeline::split(cfg, &survey)?;
    Ok(pipeline::training_subset(&data, &masks))
}

pub fn train(cfg: &Config, mode: InputMode, out: &Layout) -> Result<Summary> {
    let mut m = RunManifest::new("train", cfg);
    let training = m.time("read", || load_training(cfg, mode, out))?;
    m.input(&out.survey());
    m.input(&out.dataset(mode));
    let (model, trace) = m.time("train", || pipeline::train_map(cfg, &training, mode))?;
    write_model(&model, &out.model(mode))?;
    write_text(&out.trace(mode), &trace.to_csv())?;
    m.output(&out.model(mode));
    m.output(&out.trace(mode));
    m.write(&out.path(&format!("manifest_train_{mode}.json")))?;
    Ok(vec![format!(
        "trained {mode} map on {} inputs: {} steps ({}), final ELBO {:.3}",
        training.len(),
        trace.steps(),
        if trace.converged { "converged" } else { "step limit" },
        trace.elbo.last().copied().unwrap_or(f64::NAN)
    )])
}

fn load_model(out: &Layout, mode: InputMode, m: &mut RunManifest) -> Result<(gpmap::survey::SurveyDataset, SvgpModel)> {
    require(&out.survey(), "simulate")?;
    require(&out.model(mode), &format!("train --mode {mode}"))?;
    m.input(&out.survey());
    m.input(&out.model(mode));
    Ok((read_survey(&out.survey())?, read_model(&out.model(mode))?))
}

pub fn predict(cfg: &Config, mode: InputMode, out: &Layout) -> Result<Summary> {
    let mut m = RunManifest::new("predict", cfg);
    let (survey, model) = load_model(out, mode, &mut m)?;
    let (grid, _) = m.time("predict", || pipeline::evaluate(cfg, &survey.terrain, &model, 0))?;
    let pred = out.path(&format!("grid_{mode}.csv"));
    let err = out.path(&format!("errors_{mode}.csv"));
    write_text(&pred, &grid.prediction_csv())?;
    write_text(&err, &grid.error_csv())?;
    m.output(&pred);
    m.output(&err);
    m.write(&out.path(&format!("manifest_predict_{mode}.json")))?;
    Ok(vec![format!("predicted {} grid cells", grid.centers.len())])
}

pub fn evaluate(cfg: &Config, mode: InputMode, out: &Layout) -> Result<Summary> {
    let mut m = RunManifest::new("evaluate", cfg);
    let (survey, model) = load_model(out, mode, &mut m)?;
    let steps = match std::fs::read_to_string(out.trace(mode)) {
        Ok(text) => {
            m.input(&out.trace(mode));
            text.lines().count().saturating_sub(1)
        }
        Err(_) => 0,
    };
    let (_, report) = m.time("evaluate", || pipeline::evaluate(cfg, &survey.terrain, &model, steps))?;
    report.write(&out.report(mode))?;
    m.output(&out.report(mode));
    m.write(&out.path(&format!("manifest_evaluate_{mode}.json")))?;
    Ok(report_lines(&report, cfg))
}

fn report_lines(r: &EvalReport, cfg: &Config) -> Summary {
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
    let mut lines = vec![
        format!("rmse_train {:.4} m, rmse_heldout {} m, rmse_full {:.4} m", r.rmse_train, opt(r.rmse_heldout), r.rmse_full),
        format!(
            "trace_kss {:.3}, mean_var_train {:.4}, mean_var_heldout {}",
            r.trace_kss,
            r.mean_var_train,
            opt(r.mean_var_heldout)
        ),
    ];
    let t = cfg.eval.sanity_threshold;
    lines.push(if r.rmse_train < t {
        format!("rmse_train below sanity threshold {t} m")
    } else {
        format!("rmse_train above sanity threshold {t} m")
    });
    lines
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalizationSummary {
    pub pf_rmse: f64,
    pub dr_rmse: f64,
    pub initial_error: f64,
    pub final_error: f64,
    pub steps: usize,
    pub degenerate_steps: usize,
}

pub fn localize(cfg: &Config, mode: InputMode, out: &Layout) -> Result<Summary> {
    let mut m = RunManifest::new("localize", cfg);
    let (survey, model) = load_model(out, mode, &mut m)?;
    let run = m.time("simulate", || pipeline::localization_run(cfg, &survey.terrain))?;
    let result = m.time("filter", || pipeline::localize(cfg, &run, &model))?;
    let trace = out.path(&format!("pf_{mode}.csv"));
    let summary_path = out.path(&format!("localization_{mode}.json"));
    write_text(&trace, &result.to_csv())?;
    let summary = LocalizationSummary {
        pf_rmse: result.pf_rmse(),
        dr_rmse: result.dr_rmse(),
        initial_error: result.initial_error(),
        final_error: result.final_error(),
        steps: result.steps.len(),
        degenerate_steps: result.degenerate_steps(),
    };
    write_text(&summary_path, &(serde_json::to_string_pretty(&summary).expect("serializes") + "\n"))?;
    m.output(&trace);
    m.output(&summary_path);
    m.write(&out.path(&format!("manifest_localize_{mode}.json")))?;
    Ok(vec![format!(
        "PF RMSE {:.2} m, DR RMSE {:.2} m, final error {:.2} m (initial {:.2} m) over {} pings",
        summary.pf_rmse, summary.dr_rmse, summary.final_error, summary.initial_error, summary.steps
    )])
}

pub fn experiment(cfg: &Config, out: &Layout) -> Result<Summary> {
    let mut m = RunManifest::new("experiment", cfg);
    let records = m.time("experiment", || pipeline::run_experiment(cfg))?;
    let summary = pipeline::summarize(&records);
    let text = pipeline::summary_text(&summary);
    for (name, body) in [
        ("experiment_runs.csv", pipeline::records_csv(&records)),
        ("experiment_summary.csv", pipeline::summary_csv(&summary)),
        ("experiment_summary.txt", text.clone()),
    ] {
        write_text(&out.path(name), &body)?;
        m.output(&out.path(name));
    }
    m.write(&out.path("manifest_experiment.json"))?;
    let mut lines = vec![format!("{} training runs", records.len())];
    lines.extend(text.lines().map(str::to_string));
    Ok(lines)
}
