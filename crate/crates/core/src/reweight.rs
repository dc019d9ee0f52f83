//! Importance weights over aggregated training samples.
//!
//! The weights `P = softmax(p)` form a distribution over the `N` training
//! samples. They are fitted so that the `P`-weighted training gradient lines
//! up with the average gradient of the current test batch:
//!
//! ```text
//! J(P) = || sum_n P_n g_n - g_test ||^2
//! dJ/dP_m = 2 g_m . (sum_n P_n g_n - g_test)
//! dJ/dp   = (diag(P) - P P^T) dJ/dP
//! ```
//!
//! Gradients are flat vectors in the [`crate::policy`] layout, so the
//! contractions above are plain dot products.

use crate::error::{check_len, invalid, Error, Result};
use crate::policy::{softmax, GradientVec, PolicyParams, Sample};

/// Logits and their softmax image.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightState {
    logits: Vec<f64>,
    weights: Vec<f64>,
}

impl WeightState {
    /// Zero logits, i.e. uniform weights over `n` samples.
    pub fn uniform(n: usize) -> Result<Self> {
        Self::from_logits(vec![0.0; n])
    }

    pub fn from_logits(logits: Vec<f64>) -> Result<Self> {
        let weights = softmax_weights(&logits)?;
        Ok(WeightState { logits, weights })
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }
}

/// Per-sample training gradients stacked as an `N x D` row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GradMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl GradMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map(Vec::len).ok_or(Error::Empty("gradient rows"))?;
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            check_len("gradient row", cols, r.len())?;
            data.extend_from_slice(r);
        }
        Ok(GradMatrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// Per-sample NLL gradients of `params` on every sample, in sample order.
    pub fn per_sample(params: &PolicyParams, samples: &[Sample]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Empty("samples"));
        }
        let cols = params.num_params();
        let mut data = vec![0.0; samples.len() * cols];
        for (s, row) in samples.iter().zip(data.chunks_exact_mut(cols)) {
            params.per_sample_grad_into(s, row)?;
        }
        Ok(GradMatrix {
            rows: samples.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols)
    }
}

/// Max-subtracted softmax over the logits.
pub fn softmax_weights(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::Empty("logits"));
    }
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(invalid("logits", "entries must be finite"));
    }
    Ok(softmax(logits))
}

/// Explicit `N x N` Jacobian of the softmax, `diag(P) - P P^T`.
///
/// Only small problems should build this; [`softmax_vjp`] applies it in
/// `O(N)`.
pub fn softmax_jacobian(weights: &[f64]) -> Vec<Vec<f64>> {
    weights
        .iter()
        .enumerate()
        .map(|(i, pi)| {
            weights
                .iter()
                .enumerate()
                .map(|(j, pj)| if i == j { pi * (1.0 - pj) } else { -pi * pj })
                .collect()
        })
        .collect()
}

/// Jacobian-vector product `(diag(P) - P P^T) v = P * (v - <P, v>)`.
pub fn softmax_vjp(weights: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    check_len("softmax cotangent", weights.len(), v.len())?;
    let mean: f64 = weights.iter().zip(v).map(|(p, x)| p * x).sum();
    Ok(weights.iter().zip(v).map(|(p, x)| p * (x - mean)).collect())
}

/// `sum_n P_n g_n`, accumulated in row order.
pub fn weighted_grad(weights: &[f64], grads: &GradMatrix) -> Result<GradientVec> {
    check_len("weights", grads.rows, weights.len())?;
    let mut acc = vec![0.0; grads.cols];
    for (p, row) in weights.iter().zip(grads.iter_rows()) {
        for (a, g) in acc.iter_mut().zip(row) {
            *a += p * g;
        }
    }
    Ok(GradientVec::new(acc))
}

fn residual(weights: &[f64], grads: &GradMatrix, target: &[f64]) -> Result<Vec<f64>> {
    check_len("target gradient", grads.cols, target.len())?;
    let combined = weighted_grad(weights, grads)?;
    Ok(combined.iter().zip(target).map(|(c, t)| c - t).collect())
}

/// Squared distance between the weighted training gradient and `target`.
pub fn alignment_cost(weights: &[f64], grads: &GradMatrix, target: &[f64]) -> Result<f64> {
    Ok(residual(weights, grads, target)?.iter().map(|r| r * r).sum())
}

/// `dJ/dP_m = 2 g_m . r` with `r` the alignment residual.
pub fn grad_wrt_weights(weights: &[f64], grads: &GradMatrix, target: &[f64]) -> Result<Vec<f64>> {
    let r = residual(weights, grads, target)?;
    Ok(grads
        .iter_rows()
        .map(|row| 2.0 * row.iter().zip(&r).map(|(g, r)| g * r).sum::<f64>())
        .collect())
}

/// Chain rule through the softmax: `dJ/dp = J_sigma^T dJ/dP`.
pub fn grad_wrt_logits(state: &WeightState, grads: &GradMatrix, target: &[f64]) -> Result<Vec<f64>> {
    let dw = grad_wrt_weights(&state.weights, grads, target)?;
    // the softmax Jacobian is symmetric, so J^T v = J v
    softmax_vjp(&state.weights, &dw)
}

/// `k` gradient-descent steps of size `gamma` on the logits, recomputing the
/// weights after each step.
pub fn update_logits(
    state: &WeightState,
    grads: &GradMatrix,
    target: &[f64],
    gamma: f64,
    k: usize,
) -> Result<WeightState> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(invalid("gamma", format!("must be positive, got {gamma}")));
    }
    if k == 0 {
        return Err(invalid("K", "need at least one update"));
    }
    let mut current = state.clone();
    for _ in 0..k {
        let g = grad_wrt_logits(&current, grads, target)?;
        let logits = current.logits.iter().zip(&g).map(|(p, g)| p - gamma * g).collect();
        current = WeightState::from_logits(logits)?;
    }
    Ok(current)
}
