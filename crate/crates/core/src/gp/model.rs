use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::kernel::{check_dim, gram_with_jitter, row_vectors, KernelParams, BASE_JITTER};
use crate::error::{Error, Result};

/// Number of times the diagonal jitter is multiplied by ten after a failed
/// factorisation.
pub const JITTER_RETRIES: usize = 3;

const SCHEMA_VERSION: u32 = 1;

/// Per-dimension affine map applied to inputs before they reach the kernel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputScaling {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl InputScaling {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    /// Z-scores each column. Constant columns keep unit scale.
    pub fn zscore(x: &DMatrix<f64>) -> Self {
        let n = x.nrows().max(1) as f64;
        let mut mean = Vec::with_capacity(x.ncols());
        let mut scale = Vec::with_capacity(x.ncols());
        for col in x.column_iter() {
            let m = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            let s = var.sqrt();
            mean.push(m);
            scale.push(if s > 0.0 && s.is_finite() { s } else { 1.0 });
        }
        Self { mean, scale }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn apply_matrix(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = x.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            let (m, s) = (self.mean[j], self.scale[j]);
            col.apply(|v| *v = (*v - m) / s);
        }
        out
    }
}

/// Posterior of the latent function at one query point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpPrediction {
    pub mean: f64,
    pub variance: f64,
}

/// A fitted zero-mean GP (after centering the targets on their mean).
///
/// Immutable once built; prediction only reads.
#[derive(Clone, Debug)]
pub struct TrainedGP {
    params: KernelParams,
    scaling: InputScaling,
    /// Scaled training inputs, one row per point.
    inputs: Vec<Vec<f64>>,
    weights: DVector<f64>,
    chol_factor: DMatrix<f64>,
    y_mean: f64,
    jitter: f64,
}

struct Factorization {
    chol_factor: DMatrix<f64>,
    weights: DVector<f64>,
    y_centered: DVector<f64>,
    y_mean: f64,
    jitter: f64,
}

fn factorize(x: &DMatrix<f64>, y: &[f64], params: &KernelParams) -> Result<Factorization> {
    params.validate()?;
    check_dim(params.dim(), x.ncols())?;
    if x.nrows() == 0 {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    check_dim(x.nrows(), y.len())?;
    if y.iter().any(|v| !v.is_finite()) || x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("training data must be finite"));
    }

    let y_mean = y.iter().sum::<f64>() / y.len() as f64;
    let y_centered = DVector::from_iterator(y.len(), y.iter().map(|v| v - y_mean));

    let (chol, jitter) = cholesky_with_jitter(x, params)?;
    let weights = chol.solve(&y_centered);
    Ok(Factorization {
        chol_factor: chol.unpack(),
        weights,
        y_centered,
        y_mean,
        jitter,
    })
}

fn cholesky_with_jitter(x: &DMatrix<f64>, params: &KernelParams) -> Result<(Cholesky<f64, nalgebra::Dyn>, f64)> {
    let mut jitter = BASE_JITTER * params.scale;
    for attempt in 0..=JITTER_RETRIES {
        if attempt > 0 {
            jitter *= 10.0;
        }
        let k = gram_with_jitter(x, params, true, jitter)?;
        if let Some(chol) = Cholesky::new(k) {
            return Ok((chol, jitter));
        }
    }
    Err(Error::NotPositiveDefinite { jitter })
}

/// Fits on raw inputs (identity scaling).
pub fn fit(x: &DMatrix<f64>, y: &[f64], params: &KernelParams) -> Result<TrainedGP> {
    fit_scaled(x, y, params, InputScaling::identity(x.ncols()))
}

/// Fits after mapping inputs through `scaling`; predictions apply the same map.
pub fn fit_scaled(x: &DMatrix<f64>, y: &[f64], params: &KernelParams, scaling: InputScaling) -> Result<TrainedGP> {
    check_dim(x.ncols(), scaling.dim())?;
    let xs = scaling.apply_matrix(x);
    let f = factorize(&xs, y, params)?;
    Ok(TrainedGP {
        params: params.clone(),
        scaling,
        inputs: row_vectors(&xs),
        weights: f.weights,
        chol_factor: f.chol_factor,
        y_mean: f.y_mean,
        jitter: f.jitter,
    })
}

/// `log p(y | X, params)` of the centered targets.
pub fn log_marginal_likelihood(x: &DMatrix<f64>, y: &[f64], params: &KernelParams) -> Result<f64> {
    let f = factorize(x, y, params)?;
    let n = y.len() as f64;
    let quad = f.y_centered.dot(&f.weights);
    let log_det: f64 = 2.0 * f.chol_factor.diagonal().iter().map(|d| d.ln()).sum::<f64>();
    Ok(-0.5 * quad - 0.5 * log_det - 0.5 * n * (2.0 * PI).ln())
}

impl TrainedGP {
    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn scaling(&self) -> &InputScaling {
        &self.scaling
    }

    pub fn y_mean(&self) -> f64 {
        self.y_mean
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn chol_factor(&self) -> &DMatrix<f64> {
        &self.chol_factor
    }

    /// Jitter that was on the diagonal when the factorisation succeeded.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn n_train(&self) -> usize {
        self.inputs.len()
    }

    pub fn dim(&self) -> usize {
        self.params.dim()
    }

    fn cross_covariance(&self, xs: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.inputs.len(), self.inputs.iter().map(|xi| self.params.rbf(xi, xs)))
    }

    /// Posterior mean only; skips the triangular solve.
    pub fn predict_mean(&self, x_star: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x_star.len())?;
        let xs = self.scaling.apply(x_star);
        let mean = self
            .inputs
            .iter()
            .zip(self.weights.iter())
            .map(|(xi, w)| self.params.rbf(xi, &xs) * w)
            .sum::<f64>();
        Ok(self.y_mean + mean)
    }

    pub fn predict(&self, x_star: &[f64]) -> Result<GpPrediction> {
        check_dim(self.dim(), x_star.len())?;
        let xs = self.scaling.apply(x_star);
        let k_star = self.cross_covariance(&xs);
        let mean = self.y_mean + k_star.dot(&self.weights);
        let v = self
            .chol_factor
            .solve_lower_triangular(&k_star)
            .expect("cholesky factor has a positive diagonal");
        let variance = (self.params.prior_variance() - v.dot(&v)).max(0.0);
        Ok(GpPrediction { mean, variance })
    }

    pub fn to_document(&self) -> GpDocument {
        GpDocument {
            schema_version: SCHEMA_VERSION,
            params: self.params.clone(),
            scaling: self.scaling.clone(),
            inputs: self.inputs.clone(),
            weights: self.weights.iter().copied().collect(),
            y_mean: self.y_mean,
            jitter: self.jitter,
        }
    }

    /// Rebuilds the model from its serialized form. The Cholesky factor is not
    /// stored; it is recomputed from the inputs with the recorded jitter, which
    /// reproduces the original factor exactly.
    pub fn from_document(doc: GpDocument) -> Result<Self> {
        if doc.schema_version != SCHEMA_VERSION {
            return Err(Error::SchemaVersion(doc.schema_version));
        }
        doc.params.validate()?;
        let dim = doc.params.dim();
        check_dim(dim, doc.scaling.dim())?;
        check_dim(doc.inputs.len(), doc.weights.len())?;
        for row in &doc.inputs {
            check_dim(dim, row.len())?;
        }
        let n = doc.inputs.len();
        let x = DMatrix::from_row_iterator(n, dim, doc.inputs.iter().flatten().copied());
        let k = gram_with_jitter(&x, &doc.params, true, doc.jitter)?;
        let chol = Cholesky::new(k).ok_or(Error::NotPositiveDefinite { jitter: doc.jitter })?;
        Ok(Self {
            params: doc.params,
            scaling: doc.scaling,
            inputs: doc.inputs,
            weights: DVector::from_vec(doc.weights),
            chol_factor: chol.unpack(),
            y_mean: doc.y_mean,
            jitter: doc.jitter,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_document())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_document(serde_json::from_str(s)?)
    }
}

/// JSON form of a [`TrainedGP`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpDocument {
    pub schema_version: u32,
    pub params: KernelParams,
    pub scaling: InputScaling,
    /// Training inputs after scaling.
    pub inputs: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub y_mean: f64,
    pub jitter: f64,
}

impl Serialize for TrainedGP {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_document().serialize(s)
    }
}

impl<'de> Deserialize<'de> for TrainedGP {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let doc = GpDocument::deserialize(d)?;
        TrainedGP::from_document(doc).map_err(serde::de::Error::custom)
    }
}
