//! Synthetic plant and closed-loop harness.
//!
//! The plant is the kinematic model with the true gain, a smooth disturbance
//! field `D*(alpha, f)` and optional Brownian increments. Brownian motion only
//! ever enters the plant, never a controller model.

use std::f64::consts::TAU;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dynamics::{self, u_to_polar, ControlU, ModelParams, PolarControl};
use crate::error::{Error, Result};
use crate::mpc::{self, DisturbanceModel, MpcConfig, StepDiagnostics};
use crate::planner::{self, PlannerConfig, World};
use crate::sysid::RawTrajectory;
use crate::Vec2;

/// One axis of the disturbance field:
/// `s(f) * sum_k (cos[k] cos((k+1) alpha) + sin[k] sin((k+1) alpha))`
/// with `s(f) = f_poly[0] + f_poly[1] f + f_poly[2] f^2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AxisField {
    pub cos: [f64; 3],
    pub sin: [f64; 3],
    pub f_poly: [f64; 3],
}

impl Default for AxisField {
    fn default() -> Self {
        Self {
            cos: [0.0; 3],
            sin: [0.0; 3],
            f_poly: [1.0, 0.0, 0.0],
        }
    }
}

impl AxisField {
    pub fn eval(&self, alpha: f64, freq: f64) -> f64 {
        let mut series = 0.0;
        for k in 0..3 {
            let arg = (k + 1) as f64 * alpha;
            series += self.cos[k] * arg.cos() + self.sin[k] * arg.sin();
        }
        let [p0, p1, p2] = self.f_poly;
        (p0 + freq * (p1 + freq * p2)) * series
    }

    fn is_finite(&self) -> bool {
        self.cos
            .iter()
            .chain(&self.sin)
            .chain(&self.f_poly)
            .all(|v| v.is_finite())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DisturbanceField {
    pub x: AxisField,
    pub y: AxisField,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroundTruthModel {
    /// True effective radius, um/(s Hz).
    pub a0_true: f64,
    /// Constant disturbance, um/s.
    pub bias: [f64; 2],
    pub field: DisturbanceField,
    /// Brownian intensity, um/sqrt(s).
    pub brownian_sigma: f64,
}

impl Default for GroundTruthModel {
    /// Smooth field with no first-order correlation between `D_x` and
    /// `f cos(alpha)` (or `D_y` and `f sin(alpha)`) over a full sweep.
    fn default() -> Self {
        Self {
            a0_true: 1.5,
            bias: [6.0, -4.0],
            field: DisturbanceField {
                x: AxisField {
                    cos: [0.0, 2.0, 0.0],
                    sin: [3.0, 0.0, 1.0],
                    f_poly: [1.0, 0.02, 0.0],
                },
                y: AxisField {
                    cos: [2.5, 0.0, 0.8],
                    sin: [0.0, 1.5, 0.0],
                    f_poly: [1.0, 0.03, 0.0],
                },
            },
            brownian_sigma: 0.3,
        }
    }
}

impl GroundTruthModel {
    /// Constant disturbance only.
    pub fn constant(a0_true: f64, bias: Vec2, brownian_sigma: f64) -> Self {
        Self {
            a0_true,
            bias: [bias.x, bias.y],
            field: DisturbanceField::default(),
            brownian_sigma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a0_true > 0.0 && self.a0_true.is_finite()) {
            return Err(Error::invalid(format!(
                "a0_true must be positive, got {}",
                self.a0_true
            )));
        }
        if !(self.brownian_sigma >= 0.0 && self.brownian_sigma.is_finite()) {
            return Err(Error::invalid("brownian_sigma must be non-negative"));
        }
        if !(self.bias.iter().all(|v| v.is_finite()) && self.field.x.is_finite() && self.field.y.is_finite()) {
            return Err(Error::invalid("disturbance coefficients must be finite"));
        }
        Ok(())
    }

    /// Plant step; returns the new position and the deterministic disturbance
    /// that was applied. The RNG is only drawn from when `brownian_sigma > 0`.
    pub fn step<R: Rng>(&self, p: Vec2, u: ControlU, dt: f64, rng: &mut R) -> (Vec2, Vec2) {
        let pc = u_to_polar(u);
        let d = eval_disturbance(self, pc.heading, pc.freq);
        let params = ModelParams { a0: self.a0_true, dt };
        let mut next = dynamics::step(p, u, d, &params);
        if self.brownian_sigma > 0.0 {
            let s = self.brownian_sigma * dt.sqrt();
            next.x += s * rng.sample::<f64, _>(StandardNormal);
            next.y += s * rng.sample::<f64, _>(StandardNormal);
        }
        (next, d)
    }
}

/// Deterministic part of the disturbance at heading `alpha` and frequency `f`.
pub fn eval_disturbance(model: &GroundTruthModel, alpha: f64, freq: f64) -> Vec2 {
    Vec2::new(
        model.bias[0] + model.field.x.eval(alpha, freq),
        model.bias[1] + model.field.y.eval(alpha, freq),
    )
}

/// Open-loop excitation grid: frequency outer, heading inner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sweep {
    pub f_max: f64,
    pub f_step: f64,
    pub alpha_step_deg: f64,
    /// Plant steps each grid command is held for.
    pub dwell_steps: usize,
    /// Keep every `stride`-th grid cell.
    pub stride: usize,
}

impl Default for Sweep {
    fn default() -> Self {
        Self {
            f_max: 40.0,
            f_step: 1.0,
            alpha_step_deg: 1.0,
            dwell_steps: 3,
            stride: 1,
        }
    }
}

impl Sweep {
    fn validate(&self) -> Result<()> {
        if !(self.f_max >= 0.0 && self.f_step > 0.0 && self.alpha_step_deg > 0.0 && self.alpha_step_deg <= 360.0) {
            return Err(Error::invalid("sweep needs f_max >= 0 and positive steps"));
        }
        if self.dwell_steps < 2 {
            return Err(Error::invalid(format!(
                "dwell_steps must be at least 2, got {}",
                self.dwell_steps
            )));
        }
        if self.stride == 0 {
            return Err(Error::invalid("stride must be at least 1"));
        }
        Ok(())
    }

    /// Grid commands in sweep order, after striding.
    pub fn grid(&self) -> Result<Vec<PolarControl>> {
        self.validate()?;
        let n_f = (self.f_max / self.f_step + 1e-9).floor() as usize + 1;
        let n_alpha = (360.0 / self.alpha_step_deg - 1e-9).ceil() as usize;
        let mut out = Vec::with_capacity(n_f * n_alpha / self.stride + 1);
        let mut idx = 0usize;
        for i in 0..n_f {
            let f = i as f64 * self.f_step;
            for j in 0..n_alpha {
                if idx.is_multiple_of(self.stride) {
                    out.push(PolarControl::new(f, (j as f64 * self.alpha_step_deg).to_radians())?);
                }
                idx += 1;
            }
        }
        Ok(out)
    }
}

/// Applies `commands[k]` over `[k dt, (k + 1) dt)` starting from `p0`, logging
/// the position at the start of each interval.
pub fn simulate_open_loop(
    model: &GroundTruthModel,
    commands: &[ControlU],
    p0: Vec2,
    dt: f64,
    seed: u64,
) -> Result<RawTrajectory> {
    model.validate()?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::invalid(format!("dt must be positive, got {dt}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = p0;
    let mut times = Vec::with_capacity(commands.len());
    let mut positions = Vec::with_capacity(commands.len());
    for (k, &u) in commands.iter().enumerate() {
        times.push(k as f64 * dt);
        positions.push(p);
        p = model.step(p, u, dt, &mut rng).0;
    }
    RawTrajectory::new(times, positions, commands.to_vec())
}

/// Logged sweep over the grid, each command held for `dwell_steps`.
pub fn generate_training_run(model: &GroundTruthModel, sweep: &Sweep, dt: f64, seed: u64) -> Result<RawTrajectory> {
    let grid = sweep.grid()?;
    let commands: Vec<ControlU> = grid
        .iter()
        .flat_map(|&pc| std::iter::repeat_n(dynamics::polar_to_u(pc), sweep.dwell_steps))
        .collect();
    simulate_open_loop(model, &commands, Vec2::zeros(), dt, seed)
}

/// `r_k = radius (cos(w k dt), sin(w k dt))` for `k = 0 ..= round(duration / dt)`.
pub fn circle_reference(radius: f64, angular_speed: f64, dt: f64, duration: f64) -> Result<Vec<Vec2>> {
    if !(radius > 0.0 && angular_speed >= 0.0 && dt > 0.0 && duration >= 0.0) {
        return Err(Error::invalid(
            "circle needs positive radius and dt, non-negative speed and duration",
        ));
    }
    let steps = (duration / dt).round() as usize;
    Ok((0..=steps)
        .map(|k| {
            let th = angular_speed * k as f64 * dt;
            Vec2::new(radius * th.cos(), radius * th.sin())
        })
        .collect())
}

/// Where the tracking reference comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReferenceSpec {
    Circle {
        radius: f64,
        angular_speed: f64,
        duration: f64,
    },
    /// RRT* path resampled at `a0_hat * nominal_freq * dt`.
    PlannerPath {
        world: World,
        start: [f64; 2],
        goal: [f64; 2],
        #[serde(default)]
        planner: PlannerConfig,
        nominal_freq: f64,
    },
    Custom {
        waypoints: Vec<[f64; 2]>,
    },
}

impl Default for ReferenceSpec {
    fn default() -> Self {
        ReferenceSpec::Circle {
            radius: 50.0,
            angular_speed: 0.05,
            duration: TAU / 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub reference: ReferenceSpec,
    /// Plant step; must equal the controller's `dt`.
    pub dt: f64,
    pub mpc: MpcConfig,
    pub ground_truth: GroundTruthModel,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            reference: ReferenceSpec::default(),
            dt: 0.03,
            mpc: MpcConfig::default(),
            ground_truth: GroundTruthModel::default(),
        }
    }
}

impl ScenarioConfig {
    /// Materialises the reference; planner paths need `a0_hat` for spacing.
    pub fn build(&self, a0_hat: f64) -> Result<Scenario> {
        let reference = match &self.reference {
            ReferenceSpec::Circle {
                radius,
                angular_speed,
                duration,
            } => circle_reference(*radius, *angular_speed, self.dt, *duration)?,
            ReferenceSpec::PlannerPath {
                world,
                start,
                goal,
                planner: cfg,
                nominal_freq,
            } => {
                let spacing = a0_hat * nominal_freq * self.dt;
                let res = planner::plan(Vec2::from(*start), Vec2::from(*goal), world, cfg)?;
                planner::resample_path(&res.path, spacing)?
            }
            ReferenceSpec::Custom { waypoints } => waypoints.iter().map(|w| Vec2::from(*w)).collect(),
        };
        Ok(Scenario {
            reference,
            dt: self.dt,
            mpc: self.mpc.clone(),
            ground_truth: self.ground_truth.clone(),
        })
    }
}

/// A fully materialised run: the robot starts on `reference[0]` and one
/// control is applied per reference point.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub reference: Vec<Vec2>,
    pub dt: f64,
    pub mpc: MpcConfig,
    pub ground_truth: GroundTruthModel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub t: f64,
    pub reference: [f64; 2],
    pub position: [f64; 2],
    pub u: [f64; 2],
    pub d_hat: [f64; 2],
    pub d_true: [f64; 2],
    pub objective: f64,
    pub converged: bool,
}

impl LogRecord {
    pub fn error(&self) -> f64 {
        (Vec2::from(self.position) - Vec2::from(self.reference)).norm()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrajectoryLog {
    pub records: Vec<LogRecord>,
    pub diagnostics: Vec<StepDiagnostics>,
}

const LOG_HEADER: &str = "t,ref_x,ref_y,x,y,ux,uy,dhat_x,dhat_y,dtrue_x,dtrue_y,objective,converged";

impl TrajectoryLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{LOG_HEADER}")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.t,
                r.reference[0],
                r.reference[1],
                r.position[0],
                r.position[1],
                r.u[0],
                r.u[1],
                r.d_hat[0],
                r.d_hat[1],
                r.d_true[0],
                r.d_true[1],
                r.objective,
                u8::from(r.converged)
            )?;
        }
        Ok(())
    }

    /// Reads the CSV written by [`TrajectoryLog::write_csv`] (diagnostics are
    /// not part of the CSV).
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().transpose()?.unwrap_or_default();
        if header.trim() != LOG_HEADER {
            return Err(Error::Parse {
                line: 1,
                message: "unexpected trajectory log header".into(),
            });
        }
        let mut records = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let v = crate::sysid::parse_row::<13>(&line, i + 2)?;
            records.push(LogRecord {
                t: v[0],
                reference: [v[1], v[2]],
                position: [v[3], v[4]],
                u: [v[5], v[6]],
                d_hat: [v[7], v[8]],
                d_true: [v[9], v[10]],
                objective: v[11],
                converged: v[12] != 0.0,
            });
        }
        Ok(Self {
            records,
            diagnostics: Vec::new(),
        })
    }
}

/// Runs the receding-horizon loop against the plant.
///
/// Brownian increments are drawn from a generator seeded with `seed`; the
/// controller itself is deterministic.
pub fn simulate_closed_loop(
    scenario: &Scenario,
    a0_hat: f64,
    model: &dyn DisturbanceModel,
    seed: u64,
) -> Result<TrajectoryLog> {
    scenario.mpc.validate()?;
    scenario.ground_truth.validate()?;
    if scenario.dt != scenario.mpc.dt {
        return Err(Error::invalid(format!(
            "plant dt {} differs from controller dt {}",
            scenario.dt, scenario.mpc.dt
        )));
    }
    if !(a0_hat > 0.0 && a0_hat.is_finite()) {
        return Err(Error::invalid(format!("a0_hat must be positive, got {a0_hat}")));
    }
    let reference = &scenario.reference;
    let Some(&start) = reference.first() else {
        return Err(Error::invalid("reference is empty"));
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut log = TrajectoryLog {
        records: Vec::with_capacity(reference.len()),
        diagnostics: Vec::with_capacity(reference.len()),
    };
    let mut p = start;
    let mut u_prev = ControlU::ZERO;
    for (k, r) in reference.iter().enumerate() {
        let (u, diag) =
            mpc::mpc_step(p, reference, k, model, a0_hat, &scenario.mpc, u_prev).map_err(|e| Error::Controller {
                step: k,
                source: Box::new(e),
            })?;
        let (next, d_true) = scenario.ground_truth.step(p, u, scenario.dt, &mut rng);
        log.records.push(LogRecord {
            t: k as f64 * scenario.dt,
            reference: [r.x, r.y],
            position: [p.x, p.y],
            u: [u.ux, u.uy],
            d_hat: diag.d_hat,
            d_true: [d_true.x, d_true.y],
            objective: diag.objective,
            converged: diag.converged,
        });
        log.diagnostics.push(diag);
        p = next;
        u_prev = u;
    }
    Ok(log)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rms_error: f64,
    pub max_error: f64,
    pub mean_abs_dhat_error: f64,
    pub mean_control_norm: f64,
    pub steps: usize,
}

/// Tracking metrics over the whole log.
pub fn metrics(log: &TrajectoryLog) -> Result<Metrics> {
    metrics_from(log, 0)
}

/// Metrics over records `start..`, e.g. to exclude the initial transient.
pub fn metrics_from(log: &TrajectoryLog, start: usize) -> Result<Metrics> {
    let recs = log.records.get(start..).unwrap_or(&[]);
    if recs.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let n = recs.len() as f64;
    let mut sq = 0.0;
    let mut max = 0.0f64;
    let mut dhat = 0.0;
    let mut unorm = 0.0;
    for r in recs {
        let e = r.error();
        sq += e * e;
        max = max.max(e);
        dhat += (Vec2::from(r.d_hat) - Vec2::from(r.d_true)).norm();
        unorm += Vec2::from(r.u).norm();
    }
    Ok(Metrics {
        rms_error: (sq / n).sqrt(),
        max_error: max,
        mean_abs_dhat_error: dhat / n,
        mean_control_norm: unorm / n,
        steps: recs.len(),
    })
}
