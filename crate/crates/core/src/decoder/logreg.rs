//! L2-regularized binary logistic regression fitted by full-batch gradient
//! descent with Armijo backtracking.

use ndarray::{Array1, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{FaarError, Result};

pub const DEFAULT_L2: f64 = 1e-2;
pub const GRAD_TOL: f64 = 1e-6;
pub const MAX_ITER: usize = 5000;
const ARMIJO_C: f64 = 1e-4;
const MIN_STEP: f64 = 1e-20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub l2: f64,
    /// `classes[1]` is the positive class.
    pub classes: [u32; 2],
}

#[derive(Debug, Clone)]
pub struct LogisticFit {
    pub model: LogisticModel,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after every accepted step, starting from the initial point.
    pub losses: Vec<f64>,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() }
}

/// Mean log-loss plus `(l2/2)‖w‖²`; the bias is not penalized.
/// `params = [w..., b]`, `y ∈ {0, 1}`.
pub fn objective(x: ArrayView2<'_, f64>, y: &[f64], params: &[f64], l2: f64) -> f64 {
    let d = x.ncols();
    let (w, b) = (ArrayView1::from(&params[..d]), params[d]);
    let n = x.nrows() as f64;
    let data: f64 = x.outer_iter().zip(y).map(|(row, yi)| {
        let z = row.dot(&w) + b;
        softplus(z) - yi * z
    }).sum::<f64>() / n;
    data + 0.5 * l2 * w.dot(&w)
}

/// Gradient of [`objective`] with respect to `params`.
pub fn gradient(x: ArrayView2<'_, f64>, y: &[f64], params: &[f64], l2: f64) -> Vec<f64> {
    let d = x.ncols();
    let w = ArrayView1::from(&params[..d]);
    let b = params[d];
    let n = x.nrows() as f64;
    let mut g = Array1::<f64>::zeros(d + 1);
    for (row, yi) in x.outer_iter().zip(y) {
        let r = sigmoid(row.dot(&w) + b) - yi;
        g.slice_mut(ndarray::s![..d]).scaled_add(r, &row);
        g[d] += r;
    }
    g /= n;
    g.slice_mut(ndarray::s![..d]).scaled_add(l2, &w);
    g.to_vec()
}

/// Fits on `x` (`[samples × features]`) and labels drawn from exactly two classes.
pub fn logreg_fit(x: ArrayView2<'_, f64>, labels: &[u32], l2: f64) -> Result<LogisticFit> {
    if x.nrows() != labels.len() {
        return Err(FaarError::ShapeMismatch(format!("{} rows but {} labels", x.nrows(), labels.len())));
    }
    if x.nrows() == 0 {
        return Err(FaarError::EmptyInput("no training samples".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(FaarError::NonFinite("training features".into()));
    }
    if !(l2 >= 0.0) {
        return Err(FaarError::BadConfig(format!("l2 {l2} must be ≥ 0")));
    }
    let mut classes: Vec<u32> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    match classes.len() {
        1 => return Err(FaarError::SingleClass),
        2 => {}
        k => return Err(FaarError::BadConfig(format!("binary decoder got {k} classes"))),
    }
    let classes = [classes[0], classes[1]];
    let y: Vec<f64> = labels.iter().map(|l| if *l == classes[1] { 1.0 } else { 0.0 }).collect();

    let d = x.ncols();
    let mut p = vec![0.0; d + 1];
    let mut f = objective(x, &y, &p, l2);
    let mut losses = vec![f];
    let mut step: f64 = 1.0;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITER {
        let g = gradient(x, &y, &p, l2);
        if g.iter().fold(0.0f64, |m, v| m.max(v.abs())) < GRAD_TOL {
            converged = true;
            break;
        }
        let g2: f64 = g.iter().map(|v| v * v).sum();
        step = (step * 2.0).min(1e6);
        let accepted = loop {
            let trial: Vec<f64> = p.iter().zip(&g).map(|(pi, gi)| pi - step * gi).collect();
            let ft = objective(x, &y, &trial, l2);
            if ft <= f - ARMIJO_C * step * g2 {
                break Some((trial, ft));
            }
            step *= 0.5;
            if step < MIN_STEP {
                break None;
            }
        };
        iterations += 1;
        let Some((trial, ft)) = accepted else { break };
        p = trial;
        f = ft;
        losses.push(f);
    }
    let bias = p.pop().unwrap_or(0.0);
    Ok(LogisticFit { model: LogisticModel { weights: p, bias, l2, classes }, iterations, converged, losses })
}

impl LogisticModel {
    /// Probability of `classes[1]` for each row.
    pub fn predict_proba(&self, x: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.weights.len() {
            return Err(FaarError::ShapeMismatch(format!(
                "{} features, model has {}",
                x.ncols(),
                self.weights.len()
            )));
        }
        let w = ArrayView1::from(&self.weights);
        Ok(x.outer_iter().map(|row| sigmoid(row.dot(&w) + self.bias)).collect())
    }

    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Vec<u32>> {
        Ok(self.predict_proba(x)?.into_iter().map(|p| if p >= 0.5 { self.classes[1] } else { self.classes[0] }).collect())
    }
}
