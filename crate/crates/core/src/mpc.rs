//! Receding-horizon tracking with a constant disturbance estimate.
//!
//! Over a horizon of `T` steps the model
//!
//! ```text
//! p_t = p_{t-1} + a0_hat * dt * u_t + d_hat * dt,   t = 1..T
//! ```
//!
//! is rolled out symbolically so the positions disappear and the cost
//! `sum_t (p_t - r_t)' Q (p_t - r_t) + u_t' R u_t` becomes a box-constrained
//! QP in the stacked controls `U = (u_1, ..., u_T)`:
//!
//! ```text
//! min 0.5 U' H U + g' U + c   s.t.  u_min <= u_t <= u_max
//! ```
//!
//! `d_hat` is the disturbance estimate at the previously applied control and
//! is held fixed across the horizon.

use std::io::Write;

use nalgebra::{Cholesky, DMatrix, DVector, Matrix2};
use serde::{Deserialize, Serialize};

use crate::dynamics::{self, u_to_polar, ControlU, ModelParams};
use crate::error::{Error, Result};
use crate::Vec2;

/// Source of the disturbance estimate `D_hat(alpha, f)` in um/s.
pub trait DisturbanceModel: Sync {
    fn estimate(&self, alpha: f64, freq: f64) -> Vec2;
}

/// Nominal model only; the no-learning baseline.
#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroDisturbance;

impl DisturbanceModel for ZeroDisturbance {
    fn estimate(&self, _alpha: f64, _freq: f64) -> Vec2 {
        Vec2::zeros()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ConstantDisturbance(pub Vec2);

impl DisturbanceModel for ConstantDisturbance {
    fn estimate(&self, _alpha: f64, _freq: f64) -> Vec2 {
        self.0
    }
}

/// Largest per-component control magnitude such that `|u| <= 40 Hz` always.
pub const DEFAULT_U_LIMIT: f64 = 40.0 / std::f64::consts::SQRT_2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcConfig {
    /// Tracking weight (row-major 2x2, symmetric PSD).
    pub q: [[f64; 2]; 2],
    /// Control weight (row-major 2x2, symmetric PSD).
    pub r: [[f64; 2]; 2],
    pub horizon: usize,
    pub dt: f64,
    pub u_min: [f64; 2],
    pub u_max: [f64; 2],
    pub solver_tol: f64,
    pub max_iters: usize,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            q: [[1.0, 0.0], [0.0, 1.0]],
            r: [[0.01, 0.0], [0.0, 0.01]],
            horizon: 5,
            dt: 0.03,
            u_min: [-DEFAULT_U_LIMIT; 2],
            u_max: [DEFAULT_U_LIMIT; 2],
            solver_tol: 1e-8,
            max_iters: 20_000,
        }
    }
}

fn check_psd(name: &str, m: &[[f64; 2]; 2]) -> Result<()> {
    let finite = m.iter().flatten().all(|v| v.is_finite());
    let symmetric = m[0][1] == m[1][0];
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if !(finite && symmetric && m[0][0] >= 0.0 && m[1][1] >= 0.0 && det >= 0.0) {
        return Err(Error::invalid(format!(
            "{name} must be symmetric positive semidefinite"
        )));
    }
    Ok(())
}

impl MpcConfig {
    /// Settings of the 10 Hz hardware loop: `dt = 0.1`, `T = 6`.
    pub fn experiment() -> Self {
        Self {
            horizon: 6,
            dt: 0.1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_psd("Q", &self.q)?;
        check_psd("R", &self.r)?;
        if self.horizon == 0 {
            return Err(Error::invalid("horizon must be at least 1"));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid(format!("dt must be positive, got {}", self.dt)));
        }
        for i in 0..2 {
            if !(self.u_min[i] < self.u_max[i]) {
                return Err(Error::invalid(format!(
                    "control bounds need u_min < u_max, got [{}, {}]",
                    self.u_min[i], self.u_max[i]
                )));
            }
        }
        if !(self.solver_tol > 0.0) || self.max_iters == 0 {
            return Err(Error::invalid("solver needs a positive tolerance and iteration cap"));
        }
        Ok(())
    }

    pub fn q_matrix(&self) -> Matrix2<f64> {
        Matrix2::new(self.q[0][0], self.q[0][1], self.q[1][0], self.q[1][1])
    }

    pub fn r_matrix(&self) -> Matrix2<f64> {
        Matrix2::new(self.r[0][0], self.r[0][1], self.r[1][0], self.r[1][1])
    }
}

/// `min 0.5 u'Hu + g'u + offset` over the box `[lower, upper]`.
#[derive(Clone, Debug, PartialEq)]
pub struct QpProblem {
    pub hessian: DMatrix<f64>,
    pub gradient: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    /// Constant dropped from the quadratic form; added back in objectives.
    pub offset: f64,
}

impl QpProblem {
    pub fn dim(&self) -> usize {
        self.gradient.len()
    }

    pub fn objective(&self, u: &DVector<f64>) -> f64 {
        0.5 * u.dot(&(&self.hessian * u)) + self.gradient.dot(u) + self.offset
    }

    pub fn project(&self, u: &DVector<f64>) -> DVector<f64> {
        u.zip_zip_map(&self.lower, &self.upper, |v, lo, hi| v.clamp(lo, hi))
    }

    /// Norm of `u - P(u - grad f(u))`, zero exactly at a KKT point.
    pub fn kkt_residual(&self, u: &DVector<f64>) -> f64 {
        let g = &self.hessian * u + &self.gradient;
        (u - self.project(&(u - g))).norm()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QpSolution {
    pub u: DVector<f64>,
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
    pub kkt_residual: f64,
}

/// Condenses the tracking problem over `reference.len()` steps.
pub fn build_qp(p0: Vec2, reference: &[Vec2], d_hat: Vec2, a0_hat: f64, cfg: &MpcConfig) -> Result<QpProblem> {
    cfg.validate()?;
    let t_len = cfg.horizon;
    if reference.len() != t_len {
        return Err(Error::DimensionMismatch {
            expected: t_len,
            got: reference.len(),
        });
    }
    if !a0_hat.is_finite() {
        return Err(Error::invalid("a0_hat must be finite"));
    }
    let q = cfg.q_matrix();
    let r = cfg.r_matrix();
    let b = a0_hat * cfg.dt;
    let drift = d_hat * cfg.dt;

    // free response error e_t = p0 + t * drift - r_t
    let errors: Vec<Vec2> = (1..=t_len).map(|t| p0 + drift * t as f64 - reference[t - 1]).collect();

    let n = 2 * t_len;
    let mut hessian = DMatrix::zeros(n, n);
    for i in 0..t_len {
        for j in 0..t_len {
            // u_i and u_j both act on every position from max(i, j) onward
            let count = (t_len - i.max(j)) as f64;
            let mut block = q * (2.0 * b * b * count);
            if i == j {
                block += r * 2.0;
            }
            hessian.fixed_view_mut::<2, 2>(2 * i, 2 * j).copy_from(&block);
        }
    }

    let mut gradient = DVector::zeros(n);
    let mut tail = Vec2::zeros();
    for i in (0..t_len).rev() {
        tail += q * errors[i];
        gradient.fixed_rows_mut::<2>(2 * i).copy_from(&(tail * (2.0 * b)));
    }
    let offset = errors.iter().map(|e| e.dot(&(q * e))).sum();

    if Cholesky::new(hessian.clone()).is_none() {
        return Err(Error::invalid(
            "condensed Hessian is not positive definite (R and Q are both singular along some direction)",
        ));
    }

    let lower = DVector::from_fn(n, |k, _| cfg.u_min[k % 2]);
    let upper = DVector::from_fn(n, |k, _| cfg.u_max[k % 2]);
    Ok(QpProblem {
        hessian,
        gradient,
        lower,
        upper,
        offset,
    })
}

/// Upper bound on the largest eigenvalue (Gershgorin row sums).
fn gershgorin_bound(h: &DMatrix<f64>) -> f64 {
    h.row_iter()
        .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Accelerated projected gradient with step `1/L` and gradient-based
/// momentum restart. Starts from the projection of zero.
pub fn solve_qp(qp: &QpProblem, cfg: &MpcConfig) -> QpSolution {
    solve_qp_from(qp, &DVector::zeros(qp.dim()), cfg.solver_tol, cfg.max_iters)
}

pub fn solve_qp_from(qp: &QpProblem, start: &DVector<f64>, tol: f64, max_iters: usize) -> QpSolution {
    let lipschitz = gershgorin_bound(&qp.hessian).max(f64::MIN_POSITIVE);
    let step = 1.0 / lipschitz;

    let mut x = qp.project(start);
    let mut best = x.clone();
    let mut best_obj = qp.objective(&x);
    let mut residual = qp.kkt_residual(&x);
    if residual <= tol {
        return QpSolution {
            objective: best_obj,
            u: x,
            converged: true,
            iterations: 0,
            kkt_residual: residual,
        };
    }

    let mut y = x.clone();
    let mut t = 1.0f64;
    for iter in 1..=max_iters {
        let g = &qp.hessian * &y + &qp.gradient;
        let x_next = qp.project(&(&y - g * step));

        let grad_next = &qp.hessian * &x_next + &qp.gradient;
        residual = (&x_next - qp.project(&(&x_next - &grad_next))).norm();
        let obj = qp.objective(&x_next);
        if obj < best_obj {
            best_obj = obj;
            best.copy_from(&x_next);
        }
        if residual <= tol {
            return QpSolution {
                objective: obj,
                u: x_next,
                converged: true,
                iterations: iter,
                kkt_residual: residual,
            };
        }

        if (&y - &x_next).dot(&(&x_next - &x)) > 0.0 {
            t = 1.0;
            y.copy_from(&x_next);
        } else {
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            y = &x_next + (&x_next - &x) * ((t - 1.0) / t_next);
            t = t_next;
        }
        x = x_next;
    }

    QpSolution {
        kkt_residual: qp.kkt_residual(&best),
        u: best,
        objective: best_obj,
        converged: false,
        iterations: max_iters,
    }
}

/// Optimised horizon plan with the positions the model predicts for it.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlSequence {
    pub controls: Vec<ControlU>,
    pub predicted_positions: Vec<Vec2>,
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
    pub kkt_residual: f64,
}

/// Builds and solves the horizon problem, then rolls the model forward.
pub fn solve_horizon(
    p0: Vec2,
    reference: &[Vec2],
    d_hat: Vec2,
    a0_hat: f64,
    cfg: &MpcConfig,
) -> Result<ControlSequence> {
    let qp = build_qp(p0, reference, d_hat, a0_hat, cfg)?;
    let sol = solve_qp(&qp, cfg);
    let controls: Vec<ControlU> = sol
        .u
        .as_slice()
        .chunks_exact(2)
        .map(|c| ControlU::new(c[0], c[1]))
        .collect();
    let model = ModelParams { a0: a0_hat, dt: cfg.dt };
    let mut p = p0;
    let predicted_positions = controls
        .iter()
        .map(|&u| {
            p = dynamics::step(p, u, d_hat, &model);
            p
        })
        .collect();
    Ok(ControlSequence {
        controls,
        predicted_positions,
        objective: sol.objective,
        converged: sol.converged,
        iterations: sol.iterations,
        kkt_residual: sol.kkt_residual,
    })
}

/// Reference rows `step + 1 ..= step + T`, repeating the last waypoint past
/// the end.
pub fn reference_window(full_ref: &[Vec2], step_index: usize, horizon: usize) -> Vec<Vec2> {
    let last = full_ref.len().saturating_sub(1);
    (1..=horizon).map(|k| full_ref[(step_index + k).min(last)]).collect()
}

/// Per-step controller record, one JSON object per line on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub step: usize,
    pub alpha: f64,
    pub freq: f64,
    pub d_hat: [f64; 2],
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub predicted_positions: Vec<[f64; 2]>,
}

pub fn write_diagnostics_jsonl<W: Write>(diags: &[StepDiagnostics], mut w: W) -> Result<()> {
    for d in diags {
        serde_json::to_writer(&mut w, d)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// One receding-horizon step.
///
/// The disturbance is queried at the `(alpha, f)` of `u_prev` (zero at the
/// first step) and held over the horizon. Non-convergence is not an error:
/// the best iterate is applied and `converged` is false in the diagnostics.
#[allow(clippy::too_many_arguments)]
pub fn mpc_step(
    p0: Vec2,
    full_ref: &[Vec2],
    step_index: usize,
    model: &dyn DisturbanceModel,
    a0_hat: f64,
    cfg: &MpcConfig,
    u_prev: ControlU,
) -> Result<(ControlU, StepDiagnostics)> {
    if full_ref.is_empty() {
        return Err(Error::invalid("reference is empty"));
    }
    if step_index >= full_ref.len() {
        return Err(Error::invalid(format!(
            "step {step_index} is past the end of a {}-point reference",
            full_ref.len()
        )));
    }
    let pc = u_to_polar(u_prev);
    let d_hat = model.estimate(pc.heading, pc.freq);
    let window = reference_window(full_ref, step_index, cfg.horizon);
    let seq = solve_horizon(p0, &window, d_hat, a0_hat, cfg)?;
    let diag = StepDiagnostics {
        step: step_index,
        alpha: pc.heading,
        freq: pc.freq,
        d_hat: [d_hat.x, d_hat.y],
        objective: seq.objective,
        converged: seq.converged,
        iterations: seq.iterations,
        kkt_residual: seq.kkt_residual,
        predicted_positions: seq.predicted_positions.iter().map(|p| [p.x, p.y]).collect(),
    };
    Ok((seq.controls[0], diag))
}
