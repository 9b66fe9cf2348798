use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative diagonal jitter added to every Gram matrix.
pub const BASE_JITTER: f64 = 1e-10;

/// Hyperparameters of `scale * RBF_ard(x, x') + noise_var * delta(x, x')`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub scale: f64,
    pub length_scales: Vec<f64>,
    pub noise_var: f64,
}

impl KernelParams {
    pub fn new(scale: f64, length_scales: Vec<f64>, noise_var: f64) -> Result<Self> {
        let params = Self {
            scale,
            length_scales,
            noise_var,
        };
        params.validate()?;
        Ok(params)
    }

    /// Same length scale on every one of `dim` inputs.
    pub fn isotropic(scale: f64, length_scale: f64, noise_var: f64, dim: usize) -> Result<Self> {
        Self::new(scale, vec![length_scale; dim], noise_var)
    }

    pub fn dim(&self) -> usize {
        self.length_scales.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::invalid(format!(
                "kernel scale must be positive, got {}",
                self.scale
            )));
        }
        if self.length_scales.is_empty() {
            return Err(Error::invalid("kernel needs at least one length scale"));
        }
        if let Some(l) = self.length_scales.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            return Err(Error::invalid(format!("length scales must be positive, got {l}")));
        }
        if !(self.noise_var >= 0.0 && self.noise_var.is_finite()) {
            return Err(Error::invalid(format!(
                "noise variance must be non-negative, got {}",
                self.noise_var
            )));
        }
        Ok(())
    }

    /// Prior variance of the latent function at any point.
    pub fn prior_variance(&self) -> f64 {
        self.scale
    }

    #[inline]
    pub(crate) fn rbf(&self, x: &[f64], x_prime: &[f64]) -> f64 {
        let sq: f64 = x
            .iter()
            .zip(x_prime)
            .zip(&self.length_scales)
            .map(|((a, b), l)| {
                let d = (a - b) / l;
                d * d
            })
            .sum();
        self.scale * (-0.5 * sq).exp()
    }
}

/// Scaled RBF covariance between two points. The white-noise term only ever
/// appears on the Gram diagonal, so it is not part of this value.
pub fn kernel_eval(x: &[f64], x_prime: &[f64], params: &KernelParams) -> Result<f64> {
    check_dim(params.dim(), x.len())?;
    check_dim(params.dim(), x_prime.len())?;
    Ok(params.rbf(x, x_prime))
}

/// Gram matrix over the rows of `x`, with `BASE_JITTER * scale` on the diagonal
/// and optionally the noise variance.
pub fn gram_matrix(x: &DMatrix<f64>, params: &KernelParams, add_noise: bool) -> Result<DMatrix<f64>> {
    let jitter = BASE_JITTER * params.scale;
    gram_with_jitter(x, params, add_noise, jitter)
}

pub(crate) fn gram_with_jitter(
    x: &DMatrix<f64>,
    params: &KernelParams,
    add_noise: bool,
    jitter: f64,
) -> Result<DMatrix<f64>> {
    params.validate()?;
    check_dim(params.dim(), x.ncols())?;
    let n = x.nrows();
    if n == 0 {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let rows = row_vectors(x);
    let noise = if add_noise { params.noise_var } else { 0.0 };
    let diag = params.scale + noise + jitter;
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = diag;
        for j in 0..i {
            let v = params.rbf(&rows[i], &rows[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

pub(crate) fn row_vectors(x: &DMatrix<f64>) -> Vec<Vec<f64>> {
    x.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
