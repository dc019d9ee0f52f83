//! Single-layer softmax policy over discretized actions.
//!
//! The policy maps a state vector `s` to `softmax(W s + b)`. Training
//! minimizes the mean negative log-likelihood of expert labels, so every
//! gradient here is a descent direction for that loss.
//!
//! Parameters and gradients share one flat layout: the rows of `W` in
//! row-major order followed by `b`, for `A * d + A` entries in total.

use std::ops::Deref;

use rand::Rng;

use crate::error::{check_len, invalid, Error, Result};

/// Weight matrix (A x d, row-major) and bias (A) of the policy.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    actions: usize,
    dim: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

/// One labelled state. `corrupted` records provenance for analysis only; no
/// learning code reads it.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub state: Vec<f64>,
    pub action: usize,
    pub task_id: u64,
    pub corrupted: bool,
}

impl Sample {
    pub fn new(state: Vec<f64>, action: usize, task_id: u64) -> Self {
        Sample {
            state,
            action,
            task_id,
            corrupted: false,
        }
    }
}

/// Flat gradient in the [`PolicyParams`] layout.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVec(Vec<f64>);

impl GradientVec {
    pub fn new(values: Vec<f64>) -> Self {
        GradientVec(values)
    }

    pub fn zeros(len: usize) -> Self {
        GradientVec(vec![0.0; len])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl Deref for GradientVec {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl PolicyParams {
    pub fn zeros(actions: usize, dim: usize) -> Self {
        PolicyParams {
            actions,
            dim,
            weights: vec![0.0; actions * dim],
            bias: vec![0.0; actions],
        }
    }

    pub fn from_parts(actions: usize, dim: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if actions == 0 {
            return Err(invalid("actions", "need at least one action"));
        }
        check_len("weights", actions * dim, weights.len())?;
        check_len("bias", actions, bias.len())?;
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(invalid("params", "entries must be finite"));
        }
        Ok(PolicyParams {
            actions,
            dim,
            weights,
            bias,
        })
    }

    /// Unflattens a vector laid out as weight rows then bias.
    pub fn from_flat(actions: usize, dim: usize, flat: &[f64]) -> Result<Self> {
        check_len("flat params", actions * dim + actions, flat.len())?;
        let (w, b) = flat.split_at(actions * dim);
        Self::from_parts(actions, dim, w.to_vec(), b.to_vec())
    }

    /// Every entry drawn uniformly from `[-scale, scale]`.
    pub fn random_uniform<R: Rng + ?Sized>(actions: usize, dim: usize, scale: f64, rng: &mut R) -> Self {
        let mut draw = |n: usize| (0..n).map(|_| rng.gen_range(-scale..=scale)).collect::<Vec<_>>();
        let weights = draw(actions * dim);
        let bias = draw(actions);
        PolicyParams {
            actions,
            dim,
            weights,
            bias,
        }
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Length of the flattened parameter vector, `A * d + A`.
    pub fn num_params(&self) -> usize {
        self.actions * self.dim + self.actions
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn weight_row(&self, action: usize) -> &[f64] {
        &self.weights[action * self.dim..(action + 1) * self.dim]
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.num_params());
        flat.extend_from_slice(&self.weights);
        flat.extend_from_slice(&self.bias);
        flat
    }

    fn check_state(&self, state: &[f64]) -> Result<()> {
        check_len("state", self.dim, state.len())
    }

    fn check_sample(&self, sample: &Sample) -> Result<()> {
        self.check_state(&sample.state)?;
        if sample.action >= self.actions {
            return Err(invalid(
                "action",
                format!("{} is out of range for {} actions", sample.action, self.actions),
            ));
        }
        Ok(())
    }

    /// Raw scores `W s + b`.
    pub fn logits(&self, state: &[f64]) -> Result<Vec<f64>> {
        self.check_state(state)?;
        Ok(self.logits_unchecked(state))
    }

    fn logits_unchecked(&self, state: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.dim.max(1))
            .take(self.actions)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(state).map(|(w, s)| w * s).sum::<f64>() + b)
            .collect()
    }

    fn probs_unchecked(&self, state: &[f64]) -> Vec<f64> {
        if self.dim == 0 {
            return softmax(&self.bias);
        }
        softmax(&self.logits_unchecked(state))
    }

    /// Action probabilities `softmax(W s + b)`.
    pub fn forward(&self, state: &[f64]) -> Result<Vec<f64>> {
        self.check_state(state)?;
        Ok(self.probs_unchecked(state))
    }

    /// Negative log-likelihood of the sample's label.
    pub fn nll_loss(&self, sample: &Sample) -> Result<f64> {
        self.check_sample(sample)?;
        let mut logits = if self.dim == 0 {
            self.bias.clone()
        } else {
            self.logits_unchecked(&sample.state)
        };
        // log-sum-exp form stays accurate when the label's probability underflows
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for l in &mut logits {
            *l -= max;
        }
        let lse = logits.iter().map(|l| l.exp()).sum::<f64>().ln();
        Ok((lse - logits[sample.action]).max(0.0))
    }

    /// Mean NLL over a non-empty batch.
    pub fn mean_nll(&self, samples: &[Sample]) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::Empty("samples"));
        }
        let mut total = 0.0;
        for s in samples {
            total += self.nll_loss(s)?;
        }
        Ok(total / samples.len() as f64)
    }

    /// Gradient of [`nll_loss`](Self::nll_loss): row `k` of the weight block
    /// is `(pi_k - e_k) * s`, bias entry `k` is `pi_k - e_k`.
    pub fn per_sample_grad(&self, sample: &Sample) -> Result<GradientVec> {
        let mut out = GradientVec::zeros(self.num_params());
        self.per_sample_grad_into(sample, out.as_mut_slice())?;
        Ok(out)
    }

    /// Writes the per-sample gradient into `out` (length `num_params`).
    pub fn per_sample_grad_into(&self, sample: &Sample, out: &mut [f64]) -> Result<()> {
        self.check_sample(sample)?;
        check_len("gradient buffer", self.num_params(), out.len())?;
        let mut residual = self.probs_unchecked(&sample.state);
        residual[sample.action] -= 1.0;
        let (w_block, b_block) = out.split_at_mut(self.actions * self.dim);
        if self.dim > 0 {
            for (row, r) in w_block.chunks_exact_mut(self.dim).zip(&residual) {
                for (g, s) in row.iter_mut().zip(&sample.state) {
                    *g = r * s;
                }
            }
        }
        b_block.copy_from_slice(&residual);
        Ok(())
    }

    /// Mean of the per-sample gradients, accumulated left to right as
    /// `sum_n (1/N) * g_n`. This is the same accumulation that
    /// [`crate::reweight::weighted_grad`] performs under uniform weights, so
    /// the two agree bit for bit.
    pub fn batch_grad(&self, samples: &[Sample]) -> Result<GradientVec> {
        if samples.is_empty() {
            return Err(Error::Empty("samples"));
        }
        let w = 1.0 / samples.len() as f64;
        let mut acc = vec![0.0; self.num_params()];
        let mut g = vec![0.0; self.num_params()];
        for s in samples {
            self.per_sample_grad_into(s, &mut g)?;
            for (a, gi) in acc.iter_mut().zip(&g) {
                *a += w * gi;
            }
        }
        Ok(GradientVec(acc))
    }

    /// `params - step * grad`.
    pub fn sgd_step(&self, grad: &GradientVec, step: f64) -> Result<PolicyParams> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(invalid("step", format!("must be positive and finite, got {step}")));
        }
        check_len("gradient", self.num_params(), grad.len())?;
        let (gw, gb) = grad.split_at(self.weights.len());
        let update = |p: &[f64], g: &[f64]| p.iter().zip(g).map(|(p, g)| p - step * g).collect::<Vec<_>>();
        let next = PolicyParams {
            actions: self.actions,
            dim: self.dim,
            weights: update(&self.weights, gw),
            bias: update(&self.bias, gb),
        };
        if next.weights.iter().chain(&next.bias).any(|v| !v.is_finite()) {
            return Err(invalid("params", "update produced a non-finite entry"));
        }
        Ok(next)
    }

    /// Most probable action; ties go to the lowest index.
    pub fn predict(&self, state: &[f64]) -> Result<usize> {
        self.check_state(state)?;
        let logits = if self.dim == 0 {
            self.bias.clone()
        } else {
            self.logits_unchecked(state)
        };
        Ok(argmax(&logits))
    }

    /// Fraction of samples whose label equals [`predict`](Self::predict).
    pub fn accuracy(&self, samples: &[Sample]) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::Empty("samples"));
        }
        let mut hits = 0usize;
        for s in samples {
            if self.predict(&s.state)? == s.action {
                hits += 1;
            }
        }
        Ok(hits as f64 / samples.len() as f64)
    }
}

/// Numerically stable softmax (max-subtracted). Empty input gives empty output.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Index of the largest entry, first one on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
