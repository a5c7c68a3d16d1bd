//! Fixed downstream decoder: band-pass, shrinkage covariance, tangent-space
//! projection at the training Riemannian mean, logistic regression.

pub mod crossval;
pub mod filter;
pub mod logreg;
pub mod spd;

use ndarray::{Array2, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{FaarError, Result};
use logreg::{logreg_fit, LogisticModel};
use spd::{covariance, riemannian_mean, SpdMatrix, TangentSpace};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecoderConfig {
    pub band: (f64, f64),
    pub shrinkage: f64,
    pub l2: f64,
    pub mean_tol: f64,
    pub mean_max_iter: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            band: filter::MI_BAND,
            shrinkage: spd::DEFAULT_SHRINKAGE,
            l2: logreg::DEFAULT_L2,
            mean_tol: 1e-8,
            mean_max_iter: 50,
        }
    }
}

/// Covariance + tangent-space + logistic-regression classifier.
/// Tangent features are standardized with training statistics before the
/// regression, which only conditions the gradient descent.
#[derive(Debug, Clone)]
pub struct TangentClassifier {
    pub tangent: TangentSpace,
    pub feature_mean: Vec<f64>,
    pub feature_scale: Vec<f64>,
    pub logistic: LogisticModel,
    pub mean_converged: bool,
    shrinkage: f64,
}

fn covariances(epochs: ArrayView3<'_, f64>, shrinkage: f64) -> Result<Vec<SpdMatrix>> {
    epochs.axis_iter(Axis(0)).map(|ep| SpdMatrix::new(covariance(ep, shrinkage)?)).collect()
}

fn tangent_features(ts: &TangentSpace, covs: &[SpdMatrix]) -> Result<Array2<f64>> {
    let mut x = Array2::zeros((covs.len(), ts.dim()));
    for (mut row, c) in x.outer_iter_mut().zip(covs) {
        for (dst, v) in row.iter_mut().zip(ts.project(c)?) {
            *dst = v;
        }
    }
    Ok(x)
}

impl TangentClassifier {
    /// `epochs` are `[epochs × channels × samples]`, already band-passed.
    pub fn fit(epochs: ArrayView3<'_, f64>, labels: &[u32], cfg: &DecoderConfig) -> Result<Self> {
        if epochs.len_of(Axis(0)) != labels.len() {
            return Err(FaarError::ShapeMismatch("epoch and label counts differ".into()));
        }
        if labels.is_empty() {
            return Err(FaarError::EmptyInput("no training epochs".into()));
        }
        let covs = covariances(epochs, cfg.shrinkage)?;
        let mean = riemannian_mean(&covs, cfg.mean_tol, cfg.mean_max_iter)?;
        let tangent = TangentSpace::new(mean.mean);
        let mut x = tangent_features(&tangent, &covs)?;
        let n = x.nrows() as f64;
        let feature_mean: Vec<f64> = x.axis_iter(Axis(1)).map(|c| c.sum() / n).collect();
        let feature_scale: Vec<f64> = x
            .axis_iter(Axis(1))
            .zip(&feature_mean)
            .map(|(c, m)| {
                let sd = (c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
                if sd > 1e-12 { sd } else { 1.0 }
            })
            .collect();
        standardize(&mut x, &feature_mean, &feature_scale);
        let fit = logreg_fit(x.view(), labels, cfg.l2)?;
        Ok(Self {
            tangent,
            feature_mean,
            feature_scale,
            logistic: fit.model,
            mean_converged: mean.converged,
            shrinkage: cfg.shrinkage,
        })
    }

    /// Probability of the positive class (`classes()[1]`).
    pub fn predict_proba(&self, epochs: ArrayView3<'_, f64>) -> Result<Vec<f64>> {
        let covs = covariances(epochs, self.shrinkage)?;
        let mut x = tangent_features(&self.tangent, &covs)?;
        standardize(&mut x, &self.feature_mean, &self.feature_scale);
        self.logistic.predict_proba(x.view())
    }

    pub fn predict(&self, epochs: ArrayView3<'_, f64>) -> Result<Vec<u32>> {
        let c = self.classes();
        Ok(self.predict_proba(epochs)?.into_iter().map(|p| if p >= 0.5 { c[1] } else { c[0] }).collect())
    }

    pub fn classes(&self) -> [u32; 2] {
        self.logistic.classes
    }
}

fn standardize(x: &mut Array2<f64>, mean: &[f64], scale: &[f64]) {
    for mut row in x.outer_iter_mut() {
        for ((v, m), s) in row.iter_mut().zip(mean).zip(scale) {
            *v = (*v - m) / s;
        }
    }
}
