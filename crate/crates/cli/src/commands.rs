use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};

use gpmpc_core::mpc::{write_diagnostics_jsonl, DisturbanceModel, ZeroDisturbance};
use gpmpc_core::planner::{self, Path as PlannerPath, World};
use gpmpc_core::sim::{self, Metrics, Scenario, TrajectoryLog};
use gpmpc_core::sysid::{self, LinearFit, MaeReport, ModelBundle, RawTrajectory};
use gpmpc_core::Vec2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ReferenceSection, RunConfig};
use crate::error::{CliError, CliResult};
use crate::svg::{self, Disc, Panel, Series};

pub const RESOLVED_CONFIG: &str = "resolved_config.json";

fn write_bytes(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::BadInput(e.to_string()))?;
    s.push('\n');
    write_bytes(path, s.as_bytes())
}

fn write_with<F>(path: &Path, f: F) -> CliResult<()>
where
    F: FnOnce(&mut Vec<u8>) -> gpmpc_core::Result<()>,
{
    let mut buf = Vec::new();
    f(&mut buf).map_err(|e| CliError::core_at(path, e))?;
    write_bytes(path, &buf)
}

fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| CliError::io(path, e))
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn echo_config(cfg: &RunConfig, dir: &Path) -> CliResult<()> {
    write_json(&dir.join(RESOLVED_CONFIG), cfg)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GenerateSummary {
    pub seed: u64,
    pub rows: usize,
    pub grid_cells: usize,
    pub dt: f64,
    pub data: PathBuf,
    pub config: RunConfig,
}

/// Open-loop training sweep against the configured plant.
pub fn generate(cfg: &RunConfig) -> CliResult<Vec<String>> {
    let sweep = cfg.sweep.sweep();
    let traj = sim::generate_training_run(&cfg.ground_truth, &sweep, cfg.sweep.dt, cfg.seed)?;
    let out = &cfg.output_dir;
    let data = out.join("sweep.csv");
    write_with(&data, |w| traj.write_csv(w))?;
    let summary = GenerateSummary {
        seed: cfg.seed,
        rows: traj.len(),
        grid_cells: sweep.grid()?.len(),
        dt: cfg.sweep.dt,
        data: data.clone(),
        config: cfg.clone(),
    };
    write_json(&out.join("generate.json"), &summary)?;
    echo_config(cfg, out)?;
    Ok(vec![format!("wrote {} ({} rows)", data.display(), traj.len())])
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SysIdSummary {
    pub seed: u64,
    pub data: PathBuf,
    pub a0_hat: f64,
    pub linear_fit: LinearFit,
    pub n_samples: usize,
    pub mae: MaeReport,
    pub config: RunConfig,
}

/// Identification from a logged run into a model bundle.
pub fn sysid(cfg: &RunConfig, data: &Path) -> CliResult<Vec<String>> {
    let traj = RawTrajectory::read_csv(open(data)?).map_err(|e| CliError::core_at(data, e))?;
    let bundle = sysid::identify(&traj, &cfg.sysid_config(), cfg.seed)?;
    let out = &cfg.output_dir;
    let model = out.join("model.json");
    write_with(&model, |w| {
        w.extend_from_slice(bundle.to_json()?.as_bytes());
        w.push(b'\n');
        Ok(())
    })?;
    let summary = SysIdSummary {
        seed: cfg.seed,
        data: data.to_path_buf(),
        a0_hat: bundle.a0_hat,
        linear_fit: bundle.linear_fit,
        n_samples: bundle.n_samples,
        mae: bundle.mae,
        config: cfg.clone(),
    };
    write_json(&out.join("mae_report.json"), &summary)?;
    echo_config(cfg, out)?;
    let pct = |v: Option<f64>| v.map_or("n/a".to_string(), |p| format!("{p:.2}%"));
    Ok(vec![
        format!("a0_hat = {:.6}", bundle.a0_hat),
        format!(
            "held-out MAE: x {} y {}",
            pct(bundle.mae.x.mae_pct),
            pct(bundle.mae.y.mae_pct)
        ),
        format!("wrote {}", model.display()),
    ])
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PlanSummary {
    pub world: PathBuf,
    pub start: [f64; 2],
    pub goal: [f64; 2],
    pub cost: f64,
    pub straight_line: f64,
    pub waypoints: usize,
    pub nodes: usize,
    /// Incumbent cost after each iteration; `null` before the first solution.
    pub cost_history: Vec<Option<f64>>,
    pub config: RunConfig,
}

pub fn plan(cfg: &RunConfig, world_path: &Path, start: [f64; 2], goal: [f64; 2]) -> CliResult<Vec<String>> {
    let world = World::from_json(&read_text(world_path)?).map_err(|e| CliError::core_at(world_path, e))?;
    if !world.point_free(Vec2::from(goal)) {
        return Err(CliError::NoPath(format!(
            "goal ({}, {}) is outside the bounds or within clearance of an obstacle",
            goal[0], goal[1]
        )));
    }
    let res = match planner::plan(Vec2::from(start), Vec2::from(goal), &world, &cfg.planner) {
        Ok(r) => r,
        Err(e @ gpmpc_core::Error::NoPathFound { .. }) => return Err(CliError::NoPath(e.to_string())),
        Err(e) => return Err(e.into()),
    };
    let out = &cfg.output_dir;
    let path_csv = out.join("path.csv");
    write_with(&path_csv, |w| res.path.write_csv(w))?;
    let summary = PlanSummary {
        world: world_path.to_path_buf(),
        start,
        goal,
        cost: res.path.cost,
        straight_line: (Vec2::from(goal) - Vec2::from(start)).norm(),
        waypoints: res.path.waypoints.len(),
        nodes: res.nodes,
        cost_history: res.cost_history.iter().map(|c| c.is_finite().then_some(*c)).collect(),
        config: cfg.clone(),
    };
    write_json(&out.join("plan.json"), &summary)?;
    echo_config(cfg, out)?;
    Ok(vec![format!(
        "path cost {:.4} ({} waypoints), wrote {}",
        res.path.cost,
        res.path.waypoints.len(),
        path_csv.display()
    )])
}

/// Materialises the configured reference for a given gain estimate.
pub fn build_reference(cfg: &RunConfig, a0_hat: f64) -> CliResult<Vec<Vec2>> {
    let dt = cfg.scenario.dt;
    match &cfg.scenario.reference {
        ReferenceSection::Circle {
            radius,
            angular_speed,
            duration,
        } => Ok(sim::circle_reference(*radius, *angular_speed, dt, *duration)?),
        ReferenceSection::PlannerPath {
            path_csv, nominal_freq, ..
        } => {
            let path = PlannerPath::read_csv(open(path_csv)?).map_err(|e| CliError::core_at(path_csv, e))?;
            Ok(planner::resample_path(&path, a0_hat * nominal_freq * dt)?)
        }
        ReferenceSection::Custom { waypoints_csv } => {
            let path = PlannerPath::read_csv(open(waypoints_csv)?).map_err(|e| CliError::core_at(waypoints_csv, e))?;
            Ok(path.waypoints)
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunSummary {
    /// `gp` or `baseline`.
    pub controller: String,
    pub log: String,
    pub metrics: Metrics,
    pub nonconverged_steps: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrackSummary {
    pub seed: u64,
    pub model: PathBuf,
    pub a0_hat: f64,
    pub dt: f64,
    pub reference_points: usize,
    pub runs: Vec<RunSummary>,
    pub config: RunConfig,
}

#[derive(Clone, Debug, Default)]
pub struct TrackOptions {
    pub baseline: bool,
    pub seeds: Option<Vec<u64>>,
    pub diagnostics: bool,
}

fn obstacle_discs(cfg: &RunConfig) -> CliResult<Vec<Disc>> {
    let ReferenceSection::PlannerPath { world: Some(path), .. } = &cfg.scenario.reference else {
        return Ok(Vec::new());
    };
    let world = World::from_json(&read_text(path)?).map_err(|e| CliError::core_at(path, e))?;
    Ok(world
        .obstacles
        .iter()
        .map(|c| Disc {
            cx: c.center[0],
            cy: c.center[1],
            r: c.radius,
        })
        .collect())
}

fn xy_panel<'a>(reference: &[Vec2], logs: &[(&'a str, &'a str, &TrajectoryLog)], discs: Vec<Disc>) -> Panel<'a> {
    let mut series = vec![Series {
        label: "reference",
        color: "#222",
        dashed: true,
        points: reference.iter().map(|p| (p.x, p.y)).collect(),
    }];
    for (label, color, log) in logs {
        series.push(Series {
            label,
            color,
            dashed: false,
            points: log.records.iter().map(|r| (r.position[0], r.position[1])).collect(),
        });
    }
    Panel {
        title: "Reference and actual path",
        x_label: "x (um)",
        y_label: "y (um)",
        series,
        discs,
        equal_aspect: true,
    }
}

fn time_panel<'a>(axis: usize, logs: &[(&'a str, &'a str, &TrajectoryLog)]) -> Panel<'a> {
    let (title, y_label) = if axis == 0 {
        ("x(t)", "x (um)")
    } else {
        ("y(t)", "y (um)")
    };
    let mut series = Vec::new();
    if let Some((_, _, log)) = logs.first() {
        series.push(Series {
            label: "reference",
            color: "#222",
            dashed: true,
            points: log.records.iter().map(|r| (r.t, r.reference[axis])).collect(),
        });
    }
    for (label, color, log) in logs {
        series.push(Series {
            label,
            color,
            dashed: false,
            points: log.records.iter().map(|r| (r.t, r.position[axis])).collect(),
        });
    }
    Panel {
        title,
        x_label: "t (s)",
        y_label,
        series,
        discs: Vec::new(),
        equal_aspect: false,
    }
}

#[allow(clippy::too_many_arguments)]
fn track_one(
    cfg: &RunConfig,
    model_path: &Path,
    bundle: &ModelBundle,
    reference: &[Vec2],
    discs: &[Disc],
    seed: u64,
    dir: &Path,
    opts: &TrackOptions,
) -> CliResult<TrackSummary> {
    let scenario = Scenario {
        reference: reference.to_vec(),
        dt: cfg.scenario.dt,
        mpc: cfg.mpc.clone(),
        ground_truth: cfg.ground_truth.clone(),
    };
    let mut controllers: Vec<(&str, &str, &dyn DisturbanceModel)> = vec![("gp", "#1f77b4", &bundle.gps)];
    if opts.baseline {
        controllers.push(("baseline", "#d62728", &ZeroDisturbance));
    }

    let mut runs = Vec::new();
    let mut logs = Vec::new();
    for (name, color, model) in controllers {
        let log = sim::simulate_closed_loop(&scenario, bundle.a0_hat, model, seed)?;
        let suffix = if name == "gp" {
            String::new()
        } else {
            format!("_{name}")
        };
        let log_name = format!("track{suffix}.csv");
        write_with(&dir.join(&log_name), |w| log.write_csv(w))?;
        let metrics = sim::metrics(&log)?;
        write_json(&dir.join(format!("metrics{suffix}.json")), &metrics)?;
        if opts.diagnostics {
            write_with(&dir.join(format!("diagnostics{suffix}.jsonl")), |w| {
                write_diagnostics_jsonl(&log.diagnostics, w)
            })?;
        }
        runs.push(RunSummary {
            controller: name.to_string(),
            log: log_name,
            metrics,
            nonconverged_steps: log.records.iter().filter(|r| !r.converged).count(),
        });
        logs.push((name, color, log));
    }

    let plotted: Vec<(&str, &str, &TrajectoryLog)> = logs.iter().map(|(n, c, l)| (*n, *c, l)).collect();
    write_bytes(
        &dir.join("xy.svg"),
        svg::render(&[xy_panel(reference, &plotted, discs.to_vec())]).as_bytes(),
    )?;
    write_bytes(
        &dir.join("xt.svg"),
        svg::render(&[time_panel(0, &plotted), time_panel(1, &plotted)]).as_bytes(),
    )?;

    let summary = TrackSummary {
        seed,
        model: model_path.to_path_buf(),
        a0_hat: bundle.a0_hat,
        dt: cfg.scenario.dt,
        reference_points: reference.len(),
        runs,
        config: RunConfig {
            seed,
            output_dir: dir.to_path_buf(),
            ..cfg.clone()
        },
    };
    write_json(&dir.join("summary.json"), &summary)?;
    echo_config(&summary.config, dir)?;
    Ok(summary)
}

/// Closed-loop tracking with the identified model (and optionally the
/// no-learning baseline); several seeds run in parallel into `seed_<n>/`.
pub fn track(cfg: &RunConfig, model_path: &Path, opts: &TrackOptions) -> CliResult<Vec<String>> {
    let bundle = ModelBundle::from_json(&read_text(model_path)?).map_err(|e| CliError::core_at(model_path, e))?;
    let reference = build_reference(cfg, bundle.a0_hat)?;
    let discs = obstacle_discs(cfg)?;

    let jobs: Vec<(u64, PathBuf)> = match &opts.seeds {
        Some(seeds) => seeds
            .iter()
            .map(|&s| (s, cfg.output_dir.join(format!("seed_{s}"))))
            .collect(),
        None => vec![(cfg.seed, cfg.output_dir.clone())],
    };
    let results: Vec<CliResult<TrackSummary>> = jobs
        .par_iter()
        .map(|(seed, dir)| track_one(cfg, model_path, &bundle, &reference, &discs, *seed, dir, opts))
        .collect();

    let mut lines = Vec::new();
    let mut nonconverged = 0;
    for (res, (_, dir)) in results.into_iter().zip(&jobs) {
        let summary = res?;
        for run in &summary.runs {
            nonconverged += run.nonconverged_steps;
            lines.push(format!(
                "seed {} {}: rms {:.4} um, max {:.4} um ({})",
                summary.seed,
                run.controller,
                run.metrics.rms_error,
                run.metrics.max_error,
                dir.join(&run.log).display()
            ));
        }
    }
    if nonconverged > 0 {
        for l in &lines {
            println!("{l}");
        }
        return Err(CliError::NotConverged { steps: nonconverged });
    }
    Ok(lines)
}

pub const REPORT_HEADER: &str =
    "summary,seed,controller,steps,rms_error,max_error,mean_abs_dhat_error,mean_control_norm,nonconverged_steps,rms_ratio_to_baseline";

/// One CSV row per controller run across the given track summaries.
pub fn report(summaries: &[PathBuf], out: &Path) -> CliResult<Vec<String>> {
    let mut csv = String::from(REPORT_HEADER);
    csv.push('\n');
    let mut rows = 0;
    for path in summaries {
        let summary: TrackSummary = serde_json::from_str(&read_text(path)?)
            .map_err(|e| CliError::BadInput(format!("{}: {e}", path.display())))?;
        let baseline = summary
            .runs
            .iter()
            .find(|r| r.controller == "baseline")
            .map(|r| r.metrics.rms_error);
        for run in &summary.runs {
            let m = &run.metrics;
            let ratio = match baseline {
                Some(b) if b > 0.0 => (m.rms_error / b).to_string(),
                _ => String::new(),
            };
            csv.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                path.display(),
                summary.seed,
                run.controller,
                m.steps,
                m.rms_error,
                m.max_error,
                m.mean_abs_dhat_error,
                m.mean_control_norm,
                run.nonconverged_steps,
                ratio
            ));
            rows += 1;
        }
    }
    write_bytes(out, csv.as_bytes())?;
    Ok(vec![format!("wrote {} ({rows} rows)", out.display())])
}
