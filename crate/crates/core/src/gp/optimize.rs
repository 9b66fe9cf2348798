//! Hyperparameter selection by maximising the log marginal likelihood.
//!
//! Multi-start coordinate search in log space: every restart draws a
//! log-uniform initial point from the bounds, then sweeps the coordinates,
//! running a golden-section search along each one inside a bracket that
//! halves every sweep. A coordinate move is only kept when it improves the
//! likelihood, so each restart ends at least as good as where it began.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kernel::KernelParams;
use super::model::log_marginal_likelihood;
use crate::error::{Error, Result};

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Inclusive bounds of one hyperparameter (positive, searched in log space).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogBounds {
    pub lo: f64,
    pub hi: f64,
}

impl LogBounds {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    fn ln(&self) -> (f64, f64) {
        (self.lo.ln(), self.hi.ln())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSpace {
    pub scale: LogBounds,
    /// Shared by every input dimension; each length scale moves independently.
    pub length_scale: LogBounds,
    pub noise_var: LogBounds,
    pub restarts: usize,
    pub sweeps: usize,
    pub golden_iters: usize,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            scale: LogBounds::new(1e-3, 1e3),
            length_scale: LogBounds::new(1e-2, 1e2),
            noise_var: LogBounds::new(1e-8, 1e2),
            restarts: 8,
            sweeps: 3,
            golden_iters: 18,
        }
    }
}

impl SearchSpace {
    fn validate(&self) -> Result<()> {
        for (name, b) in [
            ("scale", self.scale),
            ("length_scale", self.length_scale),
            ("noise_var", self.noise_var),
        ] {
            if !(b.lo > 0.0 && b.hi >= b.lo && b.hi.is_finite()) {
                return Err(Error::invalid(format!(
                    "search bounds for {name} must satisfy 0 < lo <= hi, got [{}, {}]",
                    b.lo, b.hi
                )));
            }
        }
        if self.restarts == 0 {
            return Err(Error::invalid("need at least one restart"));
        }
        Ok(())
    }

    fn bounds(&self, dim: usize) -> Vec<(f64, f64)> {
        let mut b = Vec::with_capacity(dim + 2);
        b.push(self.scale.ln());
        b.extend(std::iter::repeat_n(self.length_scale.ln(), dim));
        b.push(self.noise_var.ln());
        b
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RestartTrace {
    pub initial: KernelParams,
    pub initial_log_likelihood: f64,
    pub final_params: KernelParams,
    pub final_log_likelihood: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperparameterFit {
    pub params: KernelParams,
    pub log_likelihood: f64,
    pub restarts: Vec<RestartTrace>,
}

fn to_params(theta: &[f64]) -> KernelParams {
    let d = theta.len() - 2;
    KernelParams {
        scale: theta[0].exp(),
        length_scales: theta[1..=d].iter().map(|v| v.exp()).collect(),
        noise_var: theta[d + 1].exp(),
    }
}

fn objective(x: &DMatrix<f64>, y: &[f64], theta: &[f64]) -> f64 {
    match log_marginal_likelihood(x, y, &to_params(theta)) {
        Ok(v) if v.is_finite() => v,
        _ => f64::NEG_INFINITY,
    }
}

/// Golden-section maximisation of `f` over `[a, b]`; returns the best probe.
fn golden_max(mut a: f64, mut b: f64, iters: usize, mut f: impl FnMut(f64) -> f64) -> (f64, f64) {
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..iters {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    if fc >= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

fn local_search(
    x: &DMatrix<f64>,
    y: &[f64],
    bounds: &[(f64, f64)],
    start: Vec<f64>,
    space: &SearchSpace,
) -> (Vec<f64>, f64) {
    let mut theta = start;
    let mut best = objective(x, y, &theta);
    for sweep in 0..space.sweeps {
        for i in 0..theta.len() {
            let (lo, hi) = bounds[i];
            let half = 0.5 * (hi - lo) / f64::from(1u32 << sweep.min(30));
            let a = (theta[i] - half).max(lo);
            let b = (theta[i] + half).min(hi);
            if b - a <= f64::EPSILON {
                continue;
            }
            let mut probe = theta.clone();
            let (arg, val) = golden_max(a, b, space.golden_iters, |v| {
                probe[i] = v;
                objective(x, y, &probe)
            });
            if val > best {
                theta[i] = arg;
                best = val;
            }
        }
    }
    (theta, best)
}

/// Picks kernel hyperparameters for `(x, y)`; deterministic for a given seed.
pub fn optimize_hyperparameters(
    x: &DMatrix<f64>,
    y: &[f64],
    space: &SearchSpace,
    seed: u64,
) -> Result<HyperparameterFit> {
    space.validate()?;
    if x.nrows() == 0 || x.nrows() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            got: y.len(),
        });
    }
    let bounds = space.bounds(x.ncols());

    let starts: Vec<Vec<f64>> = (0..space.restarts)
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            bounds
                .iter()
                .map(|&(lo, hi)| if hi > lo { rng.random_range(lo..=hi) } else { lo })
                .collect()
        })
        .collect();

    let traces: Vec<(RestartTrace, Vec<f64>)> = starts
        .into_par_iter()
        .map(|start| {
            let initial_ll = objective(x, y, &start);
            let (theta, ll) = local_search(x, y, &bounds, start.clone(), space);
            (
                RestartTrace {
                    initial: to_params(&start),
                    initial_log_likelihood: initial_ll,
                    final_params: to_params(&theta),
                    final_log_likelihood: ll,
                },
                theta,
            )
        })
        .collect();

    // ties go to the lowest restart index
    let best = traces
        .iter()
        .enumerate()
        .filter(|(_, (t, _))| t.final_log_likelihood.is_finite())
        .fold(None::<(usize, f64)>, |acc, (i, (t, _))| match acc {
            Some((_, v)) if v >= t.final_log_likelihood => acc,
            _ => Some((i, t.final_log_likelihood)),
        });
    let (idx, ll) = best.ok_or(Error::AllRestartsFailed)?;
    let params = to_params(&traces[idx].1);
    Ok(HyperparameterFit {
        params,
        log_likelihood: ll,
        restarts: traces.into_iter().map(|(t, _)| t).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::kernel::gram_matrix;
    use nalgebra::{Cholesky, DVector};
    use rand_distr::StandardNormal;

    #[test]
    fn golden_section_finds_parabola_peak() {
        let (arg, val) = golden_max(-3.0, 5.0, 60, |v| -(v - 1.25) * (v - 1.25));
        assert!((arg - 1.25).abs() < 1e-6);
        assert!(val > -1e-12);
    }

    fn sample_gp_1d(n: usize, length: f64, noise: f64, seed: u64) -> (DMatrix<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, 1, |_, _| rng.random_range(0.0..10.0));
        let p = KernelParams::isotropic(1.0, length, 0.0, 1).unwrap();
        let mut k = gram_matrix(&x, &p, false).unwrap();
        for i in 0..n {
            k[(i, i)] += 1e-8;
        }
        let l = Cholesky::new(k).unwrap().unpack();
        let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let f = l * z;
        let y = f
            .iter()
            .map(|v| v + noise * rng.sample::<f64, _>(StandardNormal))
            .collect();
        (x, y)
    }

    #[test]
    fn recovers_length_scale_from_gp_draw() {
        let (x, y) = sample_gp_1d(80, 1.0, 0.05, 21);
        let fit = optimize_hyperparameters(&x, &y, &SearchSpace::default(), 3).unwrap();
        let l = fit.params.length_scales[0];
        assert!((0.5..=2.0).contains(&l), "recovered length scale {l}");
    }

    #[test]
    fn never_worse_than_initial_points() {
        let (x, y) = sample_gp_1d(30, 0.7, 0.1, 5);
        let fit = optimize_hyperparameters(&x, &y, &SearchSpace::default(), 9).unwrap();
        assert_eq!(fit.restarts.len(), 8);
        for r in &fit.restarts {
            assert!(r.final_log_likelihood >= r.initial_log_likelihood);
            assert!(fit.log_likelihood >= r.initial_log_likelihood);
        }
    }

    #[test]
    fn constant_targets_do_not_crash() {
        let x = DMatrix::from_fn(20, 2, |i, j| (i * 3 + j) as f64 * 0.1);
        let y = vec![4.2; 20];
        let fit = optimize_hyperparameters(&x, &y, &SearchSpace::default(), 0).unwrap();
        fit.params.validate().unwrap();
        assert!(fit.log_likelihood.is_finite());
    }

    #[test]
    fn deterministic_under_seed() {
        let (x, y) = sample_gp_1d(25, 1.5, 0.1, 8);
        let a = optimize_hyperparameters(&x, &y, &SearchSpace::default(), 77).unwrap();
        let b = optimize_hyperparameters(&x, &y, &SearchSpace::default(), 77).unwrap();
        assert_eq!(a.params.scale.to_bits(), b.params.scale.to_bits());
        assert_eq!(a.params.length_scales[0].to_bits(), b.params.length_scales[0].to_bits());
        assert_eq!(a.params.noise_var.to_bits(), b.params.noise_var.to_bits());
    }

    #[test]
    fn rejects_bad_bounds() {
        let x = DMatrix::from_element(3, 1, 1.0);
        let space = SearchSpace {
            scale: LogBounds::new(0.0, 1.0),
            ..SearchSpace::default()
        };
        assert!(optimize_hyperparameters(&x, &[1.0, 2.0, 3.0], &space, 0).is_err());
    }
}
