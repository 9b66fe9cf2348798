//! Offline identification: logged positions and commands in, nominal gain
//! and per-axis disturbance GPs out.
//!
//! The steps are
//!
//! 1. optional zero-phase low-pass of the positions,
//! 2. finite-difference velocities,
//! 3. per-axis least squares `v = a0_axis * u + dc_axis`,
//! 4. `a0_hat = |(a0x, a0y)| / sqrt(2)`,
//! 5. residuals `v - a0_hat * u`, learned as functions of `(alpha, f)`.
//!
//! The GPs model the full residual including the constant part, so the
//! estimated disturbance is `y_mean + posterior` with nothing added on top.

use std::f64::consts::PI;
use std::io::{BufRead, Write};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{u_to_polar, ControlU};
use crate::error::{Error, Result};
use crate::gp::{self, InputScaling, SearchSpace, TrainedGP};
use crate::mpc::DisturbanceModel;
use crate::Vec2;

/// Allowed relative deviation of any sampling interval from the nominal one.
pub const SAMPLING_TOLERANCE: f64 = 0.01;

const BUNDLE_SCHEMA_VERSION: u32 = 1;

/// Logged run: `commands[k]` is applied over `[times[k], times[k + 1])`.
#[derive(Clone, Debug, PartialEq)]
pub struct RawTrajectory {
    pub times: Vec<f64>,
    pub positions: Vec<Vec2>,
    pub commands: Vec<ControlU>,
}

impl RawTrajectory {
    pub fn new(times: Vec<f64>, positions: Vec<Vec2>, commands: Vec<ControlU>) -> Result<Self> {
        let traj = Self {
            times,
            positions,
            commands,
        };
        traj.validate()?;
        Ok(traj)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.times.len();
        if self.positions.len() != n || self.commands.len() != n {
            return Err(Error::invalid(format!(
                "trajectory columns differ in length: {} times, {} positions, {} commands",
                n,
                self.positions.len(),
                self.commands.len()
            )));
        }
        for (k, w) in self.times.windows(2).enumerate() {
            if !(w[1] > w[0]) {
                return Err(Error::invalid(format!(
                    "times must be strictly increasing (row {})",
                    k + 1
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Writes the `t,x,y,ux,uy` CSV form.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,x,y,ux,uy")?;
        for k in 0..self.len() {
            let (p, u) = (self.positions[k], self.commands[k]);
            writeln!(w, "{},{},{},{},{}", self.times[k], p.x, p.y, u.ux, u.uy)?;
        }
        Ok(())
    }

    /// Reads the `t,x,y,ux,uy` CSV form. Errors carry 1-based line numbers.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().transpose()?.ok_or_else(|| Error::Parse {
            line: 1,
            message: "empty file".into(),
        })?;
        if header.trim() != "t,x,y,ux,uy" {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected header `t,x,y,ux,uy`, found `{}`", header.trim()),
            });
        }
        let (mut times, mut positions, mut commands) = (Vec::new(), Vec::new(), Vec::new());
        for (i, line) in lines.enumerate() {
            let line_no = i + 2;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields = parse_row::<5>(&line, line_no)?;
            if let Some(&prev) = times.last() {
                if !(fields[0] > prev) {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!("time {} does not increase past {}", fields[0], prev),
                    });
                }
            }
            times.push(fields[0]);
            positions.push(Vec2::new(fields[1], fields[2]));
            commands.push(ControlU::new(fields[3], fields[4]));
        }
        Self::new(times, positions, commands)
    }
}

pub(crate) fn parse_row<const N: usize>(line: &str, line_no: usize) -> Result<[f64; N]> {
    let mut out = [0.0; N];
    let mut count = 0;
    for (j, field) in line.split(',').enumerate() {
        if j >= N {
            count = j + 1;
            break;
        }
        let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("column {} is not a number: `{}`", j + 1, field.trim()),
        })?;
        if !v.is_finite() {
            return Err(Error::Parse {
                line: line_no,
                message: format!("column {} is not finite", j + 1),
            });
        }
        out[j] = v;
        count = j + 1;
    }
    if count != N {
        return Err(Error::Parse {
            line: line_no,
            message: format!("expected {N} columns"),
        });
    }
    Ok(out)
}

/// Velocities paired with the command that produced them.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct VelocityDataset {
    /// `(alpha, f)` per row.
    pub inputs: Vec<[f64; 2]>,
    pub controls: Vec<ControlU>,
    pub velocities: Vec<Vec2>,
}

impl VelocityDataset {
    pub fn len(&self) -> usize {
        self.velocities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.velocities.is_empty()
    }

    pub fn push(&mut self, u: ControlU, v: Vec2) {
        let pc = u_to_polar(u);
        self.inputs.push([pc.heading, pc.freq]);
        self.controls.push(u);
        self.velocities.push(v);
    }
}

/// Per-axis regression `v = a0_axis * u + dc_axis`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub a0x: f64,
    pub a0y: f64,
    pub dcx: f64,
    pub dcy: f64,
    pub r2x: f64,
    pub r2y: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ResidualDataset {
    pub inputs: Vec<[f64; 2]>,
    pub residuals_x: Vec<f64>,
    pub residuals_y: Vec<f64>,
}

impl ResidualDataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

fn nominal_interval(times: &[f64]) -> Result<f64> {
    let n = times.len();
    let nominal = (times[n - 1] - times[0]) / (n - 1) as f64;
    for (index, w) in times.windows(2).enumerate() {
        let interval = w[1] - w[0];
        if (interval - nominal).abs() > SAMPLING_TOLERANCE * nominal {
            return Err(Error::NonUniformSampling {
                index,
                interval,
                nominal,
            });
        }
    }
    Ok(nominal)
}

/// Central differences inside, one-sided differences at both ends.
pub fn differentiate(traj: &RawTrajectory) -> Result<Vec<Vec2>> {
    traj.validate()?;
    let n = traj.len();
    if n < 3 {
        return Err(Error::InsufficientData { needed: 3, got: n });
    }
    nominal_interval(&traj.times)?;
    let (t, p) = (&traj.times, &traj.positions);
    let mut v = Vec::with_capacity(n);
    v.push((p[1] - p[0]) / (t[1] - t[0]));
    for k in 1..n - 1 {
        v.push((p[k + 1] - p[k - 1]) / (t[k + 1] - t[k - 1]));
    }
    v.push((p[n - 1] - p[n - 2]) / (t[n - 1] - t[n - 2]));
    Ok(v)
}

/// Zero-phase single-pole low-pass: `y_k = a y_{k-1} + (1 - a) x_k` with
/// `a = exp(-2 pi cutoff / sample)`, run forward then backward.
///
/// Both ends are padded by odd reflection so that straight lines pass
/// through unchanged.
pub fn lowpass(signal: &[Vec2], cutoff_hz: f64, sample_hz: f64) -> Result<Vec<Vec2>> {
    if !(cutoff_hz > 0.0 && sample_hz > 0.0) {
        return Err(Error::invalid("cutoff and sample rate must be positive"));
    }
    if cutoff_hz >= 0.5 * sample_hz {
        return Err(Error::invalid(format!(
            "cutoff {cutoff_hz} Hz is not below the Nyquist rate of {} Hz",
            0.5 * sample_hz
        )));
    }
    if signal.len() < 2 {
        return Ok(signal.to_vec());
    }
    let a = (-2.0 * PI * cutoff_hz / sample_hz).exp();
    let pad = ((1e-12f64).ln() / a.ln()).ceil() as usize;
    let pad = pad.clamp(1, signal.len() - 1);

    let mut out = vec![Vec2::zeros(); signal.len()];
    for axis in 0..2 {
        let x: Vec<f64> = signal.iter().map(|p| p[axis]).collect();
        let filtered = filtfilt(&x, a, pad);
        for (o, f) in out.iter_mut().zip(filtered) {
            o[axis] = f;
        }
    }
    Ok(out)
}

fn filtfilt(x: &[f64], a: f64, pad: usize) -> Vec<f64> {
    let n = x.len();
    let (first, last) = (x[0], x[n - 1]);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|k| 2.0 * first - x[k]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|k| 2.0 * last - x[n - 1 - k]));

    let b = 1.0 - a;
    let mut state = ext[0];
    for v in ext.iter_mut() {
        state = a * state + b * *v;
        *v = state;
    }
    let mut state = ext[ext.len() - 1];
    for v in ext.iter_mut().rev() {
        state = a * state + b * *v;
        *v = state;
    }
    ext[pad..pad + n].to_vec()
}

/// Builds the regression dataset from a logged run.
///
/// Only rows whose central difference spans a single held command are
/// kept (interior samples whose previous command equals their own).
pub fn velocity_dataset(traj: &RawTrajectory, lowpass_cutoff_hz: Option<f64>) -> Result<VelocityDataset> {
    traj.validate()?;
    if traj.len() < 3 {
        return Err(Error::InsufficientData {
            needed: 3,
            got: traj.len(),
        });
    }
    let dt = nominal_interval(&traj.times)?;
    let velocities = match lowpass_cutoff_hz {
        Some(cutoff) => {
            let smoothed = RawTrajectory {
                times: traj.times.clone(),
                positions: lowpass(&traj.positions, cutoff, 1.0 / dt)?,
                commands: traj.commands.clone(),
            };
            differentiate(&smoothed)?
        }
        None => differentiate(traj)?,
    };
    let mut data = VelocityDataset::default();
    let interior = traj.commands.windows(2).zip(&velocities[1..]).take(traj.len() - 2);
    for (pair, &v) in interior {
        if pair[0] == pair[1] {
            data.push(pair[1], v);
        }
    }
    Ok(data)
}

struct Ols {
    slope: f64,
    intercept: f64,
    r2: f64,
}

fn ols(x: &[f64], y: &[f64], axis: char) -> Result<Ols> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let scale: f64 = x.iter().map(|v| v * v).sum();
    if !(sxx > f64::EPSILON * scale) || sxx == 0.0 {
        return Err(Error::DegenerateDesign { axis });
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let r = b - (slope * a + intercept);
            r * r
        })
        .sum();
    let r2 = if syy > 0.0 {
        1.0 - ss_res / syy
    } else if ss_res == 0.0 {
        1.0
    } else {
        f64::NEG_INFINITY
    };
    Ok(Ols { slope, intercept, r2 })
}

/// Ordinary least squares with intercept, independently per axis.
pub fn fit_linear(data: &VelocityDataset) -> Result<LinearFit> {
    if data.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: data.len(),
        });
    }
    let ux: Vec<f64> = data.controls.iter().map(|u| u.ux).collect();
    let uy: Vec<f64> = data.controls.iter().map(|u| u.uy).collect();
    let vx: Vec<f64> = data.velocities.iter().map(|v| v.x).collect();
    let vy: Vec<f64> = data.velocities.iter().map(|v| v.y).collect();
    let fx = ols(&ux, &vx, 'x')?;
    let fy = ols(&uy, &vy, 'y')?;
    Ok(LinearFit {
        a0x: fx.slope,
        a0y: fy.slope,
        dcx: fx.intercept,
        dcy: fy.intercept,
        r2x: fx.r2,
        r2y: fy.r2,
    })
}

/// Combined gain: RMS of the two per-axis slopes.
pub fn effective_radius(fit: &LinearFit) -> f64 {
    (0.5 * (fit.a0x * fit.a0x + fit.a0y * fit.a0y)).sqrt()
}

pub fn residuals(data: &VelocityDataset, a0_hat: f64) -> ResidualDataset {
    let mut out = ResidualDataset {
        inputs: data.inputs.clone(),
        residuals_x: Vec::with_capacity(data.len()),
        residuals_y: Vec::with_capacity(data.len()),
    };
    for (u, v) in data.controls.iter().zip(&data.velocities) {
        out.residuals_x.push(v.x - a0_hat * u.ux);
        out.residuals_y.push(v.y - a0_hat * u.uy);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub train_fraction: f64,
    /// Cap on GP training points (exact GP cost is cubic).
    pub max_train_points: usize,
    /// Size of the stratified subset used for hyperparameter search.
    pub hyperopt_points: usize,
    /// Grid of `(alpha, f)` cells used for stratified subsampling.
    pub strata: [usize; 2],
    pub search: SearchSpace,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            max_train_points: 2000,
            hyperopt_points: 300,
            strata: [24, 8],
            search: SearchSpace::default(),
        }
    }
}

/// Held-out error on one axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisMae {
    /// Mean absolute error in um/s.
    pub mae_abs: f64,
    /// `mae_abs` as a percentage of the test residuals' peak-to-peak range;
    /// `None` when that range is zero but the error is not.
    pub mae_pct: Option<f64>,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaeReport {
    pub x: AxisMae,
    pub y: AxisMae,
}

/// The two per-axis GPs used as the disturbance estimate.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DisturbanceGps {
    pub x: TrainedGP,
    pub y: TrainedGP,
}

impl DisturbanceModel for DisturbanceGps {
    fn estimate(&self, alpha: f64, freq: f64) -> Vec2 {
        let q = [alpha, freq];
        // both GPs are two-dimensional by construction
        Vec2::new(
            self.x.predict_mean(&q).unwrap_or(0.0),
            self.y.predict_mean(&q).unwrap_or(0.0),
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainedDisturbance {
    pub gps: DisturbanceGps,
    pub report: MaeReport,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

/// Deterministic shuffled split; the first `round(fraction * n)` shuffled
/// indices train, the rest test.
pub fn split_indices(n: usize, train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let n_train = ((train_fraction * n as f64).round() as usize).min(n);
    let test = idx.split_off(n_train);
    (idx, test)
}

/// Orders `candidates` so that every prefix is spread over the `(alpha, f)`
/// grid: indices are bucketed into cells, then taken round-robin.
fn stratified_order(inputs: &[[f64; 2]], candidates: &[usize], strata: [usize; 2]) -> Vec<usize> {
    let [na, nf] = [strata[0].max(1), strata[1].max(1)];
    let f_max = candidates.iter().map(|&i| inputs[i][1]).fold(0.0f64, f64::max);
    let mut cells: Vec<Vec<usize>> = vec![Vec::new(); na * nf];
    for &i in candidates {
        let [alpha, f] = inputs[i];
        let ia = ((alpha / (2.0 * PI)) * na as f64).floor().clamp(0.0, (na - 1) as f64) as usize;
        let jf = if f_max > 0.0 {
            ((f / f_max) * nf as f64).floor().clamp(0.0, (nf - 1) as f64) as usize
        } else {
            0
        };
        cells[ia * nf + jf].push(i);
    }
    let mut order = Vec::with_capacity(candidates.len());
    let mut round = 0;
    while order.len() < candidates.len() {
        for cell in &cells {
            if let Some(&i) = cell.get(round) {
                order.push(i);
            }
        }
        round += 1;
    }
    order
}

fn train_axis(
    inputs: &[[f64; 2]],
    targets: &[f64],
    order: &[usize],
    cfg: &TrainingConfig,
    seed: u64,
) -> Result<TrainedGP> {
    let n_fit = order.len().min(cfg.max_train_points);
    let fit_idx = &order[..n_fit];
    let x = DMatrix::from_row_iterator(n_fit, 2, fit_idx.iter().flat_map(|&i| inputs[i]));
    let y: Vec<f64> = fit_idx.iter().map(|&i| targets[i]).collect();
    let scaling = InputScaling::zscore(&x);
    let xs = scaling.apply_matrix(&x);

    let n_opt = n_fit.min(cfg.hyperopt_points.max(1));
    let x_opt = xs.rows(0, n_opt).into_owned();
    let hyper = gp::optimize_hyperparameters(&x_opt, &y[..n_opt], &cfg.search, seed)?;
    gp::fit_scaled(&x, &y, &hyper.params, scaling)
}

fn axis_mae(gp: &TrainedGP, inputs: &[[f64; 2]], targets: &[f64], test: &[usize]) -> Result<(f64, Option<f64>)> {
    if test.is_empty() {
        return Ok((0.0, Some(0.0)));
    }
    let mut abs_sum = 0.0;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &i in test {
        let pred = gp.predict_mean(&inputs[i])?;
        abs_sum += (pred - targets[i]).abs();
        lo = lo.min(targets[i]);
        hi = hi.max(targets[i]);
    }
    let mae = abs_sum / test.len() as f64;
    let range = hi - lo;
    let pct = if range > 0.0 {
        Some(100.0 * mae / range)
    } else if mae == 0.0 {
        Some(0.0)
    } else {
        None
    };
    Ok((mae, pct))
}

/// Splits 80/20 (by default), trains one GP per residual axis on `(alpha, f)`
/// and reports held-out MAE.
pub fn train_disturbance_models(
    res: &ResidualDataset,
    split_seed: u64,
    cfg: &TrainingConfig,
) -> Result<TrainedDisturbance> {
    let n = res.len();
    if n < 10 {
        return Err(Error::InsufficientData { needed: 10, got: n });
    }
    if res.residuals_x.len() != n || res.residuals_y.len() != n {
        return Err(Error::invalid("residual columns differ in length"));
    }
    if !(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0) {
        return Err(Error::invalid("train fraction must lie in (0, 1)"));
    }
    let (train, test) = split_indices(n, cfg.train_fraction, split_seed);
    let order = stratified_order(&res.inputs, &train, cfg.strata);

    let (gx, gy) = rayon::join(
        || train_axis(&res.inputs, &res.residuals_x, &order, cfg, split_seed),
        || train_axis(&res.inputs, &res.residuals_y, &order, cfg, split_seed.wrapping_add(1)),
    );
    let (gx, gy) = (gx?, gy?);

    let n_train = order.len().min(cfg.max_train_points);
    let (mx, px) = axis_mae(&gx, &res.inputs, &res.residuals_x, &test)?;
    let (my, py) = axis_mae(&gy, &res.inputs, &res.residuals_y, &test)?;
    let axis = |mae_abs, mae_pct| AxisMae {
        mae_abs,
        mae_pct,
        n_train,
        n_test: test.len(),
        seed: split_seed,
    };
    Ok(TrainedDisturbance {
        gps: DisturbanceGps { x: gx, y: gy },
        report: MaeReport {
            x: axis(mx, px),
            y: axis(my, py),
        },
        train_indices: train,
        test_indices: test,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SysIdConfig {
    /// Position low-pass cutoff; `None` differentiates the raw positions.
    pub lowpass_cutoff_hz: Option<f64>,
    pub training: TrainingConfig,
}

impl Default for SysIdConfig {
    fn default() -> Self {
        Self {
            lowpass_cutoff_hz: Some(2.0),
            training: TrainingConfig::default(),
        }
    }
}

/// Everything the controller needs, plus how it was obtained.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelBundle {
    pub schema_version: u32,
    pub a0_hat: f64,
    pub linear_fit: LinearFit,
    pub n_samples: usize,
    pub mae: MaeReport,
    pub gps: DisturbanceGps,
}

impl ModelBundle {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let bundle: ModelBundle = serde_json::from_str(s)?;
        if bundle.schema_version != BUNDLE_SCHEMA_VERSION {
            return Err(Error::SchemaVersion(bundle.schema_version));
        }
        Ok(bundle)
    }
}

/// Runs the full identification pipeline on one logged run.
pub fn identify(traj: &RawTrajectory, cfg: &SysIdConfig, seed: u64) -> Result<ModelBundle> {
    let data = velocity_dataset(traj, cfg.lowpass_cutoff_hz)?;
    let linear_fit = fit_linear(&data)?;
    let a0_hat = effective_radius(&linear_fit);
    let res = residuals(&data, a0_hat);
    let trained = train_disturbance_models(&res, seed, &cfg.training)?;
    Ok(ModelBundle {
        schema_version: BUNDLE_SCHEMA_VERSION,
        a0_hat,
        linear_fit,
        n_samples: data.len(),
        mae: trained.report,
        gps: trained.gps,
    })
}
