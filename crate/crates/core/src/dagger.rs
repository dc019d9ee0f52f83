//! Training and adaptation loops.
//!
//! Phase one trains a base policy with DAGGER over the training tasks: the
//! current policy drives, the expert labels, the data is aggregated and the
//! policy is refit on everything gathered so far. Phase two adapts that
//! policy to an unseen task by reweighting the aggregated training samples
//! so that their weighted gradient matches the gradient on the few test
//! rollouts, and stepping along the weighted gradient.
//!
//! Every rollout draws from its own ChaCha stream keyed by `(seed, purpose,
//! task, trial)`, so results depend only on the configuration.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::envs::{corrupt_count, rollout, Actor, RolloutLog, TaskSpec};
use crate::error::{check_len, invalid, Error, Result};
use crate::policy::{PolicyParams, Sample};
use crate::reweight::{update_logits, weighted_grad, GradMatrix, WeightState};

/// Optimisation and data-collection settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Base-policy step size.
    pub alpha: f64,
    /// Adaptation step size for the policy.
    pub beta: f64,
    /// Step size for the importance logits.
    pub gamma: f64,
    /// Logit updates per adaptation iteration.
    pub k: usize,
    /// Gradient steps after each aggregation during training.
    pub tau: usize,
    /// Outer adaptation iterations.
    pub tau_hat: usize,
    pub n_train_tasks: usize,
    pub trajectories_per_task: usize,
    pub seed: u64,
    /// Test-task rollouts collected during adaptation and by the baselines.
    pub test_trials: usize,
    /// Fresh rollouts used to score a policy.
    pub eval_trials: usize,
    /// Fraction of each newly collected training batch whose labels are corrupted.
    pub corrupt_frac: f64,
    /// Initial parameters are uniform in `[-init_scale, init_scale]`.
    pub init_scale: f64,
    /// Keep every n-th weight snapshot during adaptation.
    pub trace_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl TrainConfig {
    /// Full-length schedule.
    pub fn paper() -> Self {
        TrainConfig {
            alpha: 0.01,
            beta: 0.01,
            gamma: 0.05,
            k: 10,
            tau: 3000,
            tau_hat: 4000,
            n_train_tasks: 6,
            trajectories_per_task: 4,
            seed: 0,
            test_trials: 5,
            eval_trials: 10,
            corrupt_frac: 0.0,
            init_scale: 0.1,
            trace_every: 200,
        }
    }

    /// The same schedule with a tenth of the iterations.
    pub fn desk() -> Self {
        TrainConfig {
            tau: 300,
            tau_hat: 400,
            trace_every: 20,
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(name, format!("must be positive, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.corrupt_frac) {
            return Err(invalid(
                "corrupt_frac",
                format!("must lie in [0, 1], got {}", self.corrupt_frac),
            ));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(invalid("init_scale", "must be nonnegative"));
        }
        if self.trace_every == 0 {
            return Err(invalid("trace_every", "must be positive"));
        }
        Ok(())
    }
}

/// Purposes for rng streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum StreamTag {
    Init = 1,
    TrainRollout = 2,
    Corrupt = 3,
    TestRollout = 4,
    Eval = 5,
}

/// Deterministic rng stream for one `(purpose, task, trial)` under `seed`.
pub fn stream(seed: u64, tag: StreamTag, task: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let id = (tag as u64) << 56 ^ task.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ trial;
    rng.set_stream(id);
    rng
}

/// Outcome of one rollout, for scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialMetrics {
    pub trial: usize,
    pub steps: usize,
    /// Steps where the learner's proposal matched the expert.
    pub correct: usize,
    /// Steps at which overrides began.
    pub override_steps: Vec<usize>,
    /// Overrides in this and all earlier trials.
    pub overrides_cum: usize,
}

impl TrialMetrics {
    fn from_log(trial: usize, log: &RolloutLog, previous_cum: usize) -> Self {
        TrialMetrics {
            trial,
            steps: log.len(),
            correct: log.correct(),
            override_steps: log.overrides.clone(),
            overrides_cum: previous_cum + log.overrides.len(),
        }
    }

    pub fn accuracy(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.correct as f64 / self.steps as f64
        }
    }

    pub fn overrides(&self) -> usize {
        self.override_steps.len()
    }
}

/// Scores over several trials.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalMetrics {
    pub trials: Vec<TrialMetrics>,
}

impl EvalMetrics {
    fn push(&mut self, log: &RolloutLog) {
        let cum = self.overrides();
        let trial = self.trials.len();
        self.trials.push(TrialMetrics::from_log(trial, log, cum));
    }

    /// Fraction of all scored steps where the policy agreed with the expert.
    pub fn accuracy(&self) -> f64 {
        let steps: usize = self.trials.iter().map(|t| t.steps).sum();
        let correct: usize = self.trials.iter().map(|t| t.correct).sum();
        if steps == 0 {
            0.0
        } else {
            correct as f64 / steps as f64
        }
    }

    /// Cumulative override count.
    pub fn overrides(&self) -> usize {
        self.trials.last().map_or(0, |t| t.overrides_cum)
    }
}

/// Result of adapting to one task.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptResult {
    pub final_params: PolicyParams,
    /// `(iteration, weights after that iteration's logit updates)`.
    pub weight_trace: Vec<(usize, WeightState)>,
    /// Parameters after every outer iteration.
    pub params_trace: Vec<PolicyParams>,
    /// Parameters at the end of each trial's block of iterations.
    pub checkpoints: Vec<PolicyParams>,
    /// Metrics of the test rollouts gathered while adapting.
    pub metrics: EvalMetrics,
    pub test_data: Vec<Sample>,
}

impl AdaptResult {
    pub fn final_weights(&self) -> Option<&WeightState> {
        self.weight_trace.last().map(|(_, w)| w)
    }
}

/// Result of a baseline run on the test task.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineResult {
    pub params: PolicyParams,
    /// Parameters after each test trial and its refit.
    pub checkpoints: Vec<PolicyParams>,
    pub metrics: EvalMetrics,
}

fn check_tasks(tasks: &[TaskSpec]) -> Result<()> {
    let first = tasks.first().ok_or(Error::Empty("train tasks"))?;
    for t in tasks {
        check_len("task state dimension", first.dim(), t.dim())?;
        check_len("task action count", first.actions(), t.actions())?;
    }
    Ok(())
}

fn initial_params(task: &TaskSpec, config: &TrainConfig) -> PolicyParams {
    let mut rng = stream(config.seed, StreamTag::Init, 0, 0);
    PolicyParams::random_uniform(task.actions(), task.dim(), config.init_scale, &mut rng)
}

/// Aggregated dataset plus the parameters fitted to it.
struct Aggregator<'a> {
    config: &'a TrainConfig,
    params: PolicyParams,
    data: Vec<Sample>,
}

impl<'a> Aggregator<'a> {
    fn collect(&mut self, task: &TaskSpec, tag: StreamTag, trial: u64) -> Result<RolloutLog> {
        let mut rng = stream(self.config.seed, tag, task.task_seed, trial);
        rollout(&mut &self.params, task, &mut rng)
    }

    /// Appends a batch, corrupting just enough labels that the whole
    /// aggregate holds `floor(corrupt_frac * N)` corrupted samples.
    fn aggregate(&mut self, batch: Vec<Sample>, task: &TaskSpec) -> Result<()> {
        let before = self.data.len();
        let frac = self.config.corrupt_frac;
        let batch = if frac > 0.0 {
            let target = (frac * (before + batch.len()) as f64).floor() as usize;
            let have = (frac * before as f64).floor() as usize;
            let mut rng = stream(self.config.seed, StreamTag::Corrupt, task.task_seed, before as u64);
            corrupt_count(&batch, target - have, task.actions(), &mut rng)?
        } else {
            batch
        };
        self.data.extend(batch);
        Ok(())
    }

    fn fit(&mut self, steps: usize, rate: f64) -> Result<()> {
        for _ in 0..steps {
            let g = self.params.batch_grad(&self.data)?;
            self.params = self.params.sgd_step(&g, rate)?;
        }
        Ok(())
    }

    /// One DAGGER round on a training task.
    fn train_round(&mut self, task: &TaskSpec) -> Result<()> {
        let mut batch = Vec::new();
        for j in 0..self.config.trajectories_per_task {
            batch.extend(self.collect(task, StreamTag::TrainRollout, j as u64)?.samples);
        }
        self.aggregate(batch, task)?;
        if !self.data.is_empty() {
            self.fit(self.config.tau, self.config.alpha)?;
        }
        Ok(())
    }

    /// Test-task trials: roll out, aggregate clean labels, refit.
    fn test_rounds(&mut self, task: &TaskSpec) -> Result<BaselineResult> {
        let mut metrics = EvalMetrics { trials: Vec::new() };
        let mut checkpoints = Vec::new();
        for j in 0..self.config.test_trials {
            let log = self.collect(task, StreamTag::TestRollout, j as u64)?;
            metrics.push(&log);
            self.data.extend(log.samples);
            self.fit(self.config.tau, self.config.alpha)?;
            checkpoints.push(self.params.clone());
        }
        Ok(BaselineResult {
            params: self.params.clone(),
            checkpoints,
            metrics,
        })
    }
}

/// Trains the base policy over `tasks` in order. Returns the parameters and
/// the aggregated training set.
pub fn train_base(tasks: &[TaskSpec], config: &TrainConfig) -> Result<(PolicyParams, Vec<Sample>)> {
    check_tasks(tasks)?;
    config.validate()?;
    let mut agg = Aggregator {
        config,
        params: initial_params(&tasks[0], config),
        data: Vec::new(),
    };
    for task in tasks {
        agg.train_round(task)?;
    }
    Ok((agg.params, agg.data))
}

/// Adapts `theta_star` to `test_task` by importance-weighting `train_data`.
///
/// For each of the `test_trials` trials the current parameters are rolled
/// out on the test task and the labelled states join the test set. Then
/// `tau_hat` outer iterations follow, each of which recomputes the
/// per-sample training gradients at the current parameters, runs `k` logit
/// updates against the mean gradient of all test data so far, and takes one
/// step of size `beta` along the weighted training gradient. The logits
/// carry over between iterations and trials. With `k = 0` the weights stay
/// uniform and the loop is plain full-batch gradient descent on `train_data`.
pub fn adapt(
    theta_star: &PolicyParams,
    train_data: &[Sample],
    test_task: &TaskSpec,
    config: &TrainConfig,
) -> Result<AdaptResult> {
    if train_data.is_empty() {
        return Err(Error::Empty("train dataset"));
    }
    config.validate()?;
    check_len("policy state dimension", test_task.dim(), theta_star.dim())?;
    check_len("policy action count", test_task.actions(), theta_star.actions())?;

    let mut phi = theta_star.clone();
    let mut weights = WeightState::uniform(train_data.len())?;
    let mut result = AdaptResult {
        final_params: phi.clone(),
        weight_trace: Vec::new(),
        params_trace: Vec::new(),
        checkpoints: Vec::new(),
        metrics: EvalMetrics { trials: Vec::new() },
        test_data: Vec::new(),
    };
    if config.tau_hat == 0 {
        return Ok(result);
    }
    let total = config.test_trials * config.tau_hat;
    let mut iteration = 0;
    for trial in 0..config.test_trials {
        let mut rng = stream(config.seed, StreamTag::TestRollout, test_task.task_seed, trial as u64);
        let log = rollout(&mut &phi, test_task, &mut rng)?;
        result.metrics.push(&log);
        result.test_data.extend(log.samples);
        for _ in 0..config.tau_hat {
            let grads = GradMatrix::per_sample(&phi, train_data)?;
            if config.k > 0 {
                let target = phi.batch_grad(&result.test_data)?;
                weights = update_logits(&weights, &grads, &target, config.gamma, config.k)?;
            }
            let step = weighted_grad(weights.weights(), &grads)?;
            phi = phi.sgd_step(&step, config.beta)?;
            if iteration % config.trace_every == 0 || iteration + 1 == total {
                result.weight_trace.push((iteration, weights.clone()));
            }
            result.params_trace.push(phi.clone());
            iteration += 1;
        }
        result.checkpoints.push(phi.clone());
    }
    result.final_params = phi;
    Ok(result)
}

/// DAGGER on the training tasks followed by the test task's trials, all in
/// one uniformly weighted aggregate.
pub fn baseline_dagger(train_tasks: &[TaskSpec], test_task: &TaskSpec, config: &TrainConfig) -> Result<BaselineResult> {
    check_tasks(train_tasks)?;
    check_tasks(std::slice::from_ref(test_task))?;
    check_len("test task state dimension", train_tasks[0].dim(), test_task.dim())?;
    config.validate()?;
    let mut agg = Aggregator {
        config,
        params: initial_params(&train_tasks[0], config),
        data: Vec::new(),
    };
    for task in train_tasks {
        agg.train_round(task)?;
    }
    agg.test_rounds(test_task)
}

/// DAGGER on the test task alone, from a fresh initialisation.
pub fn baseline_finetune(test_task: &TaskSpec, config: &TrainConfig) -> Result<BaselineResult> {
    config.validate()?;
    let mut agg = Aggregator {
        config,
        params: initial_params(test_task, config),
        data: Vec::new(),
    };
    agg.test_rounds(test_task)
}

/// Scores `actor` on `n_trials` fresh rollouts. Nothing is learned.
pub fn evaluate(actor: &mut dyn Actor, task: &TaskSpec, n_trials: usize, seed: u64) -> Result<EvalMetrics> {
    if n_trials == 0 {
        return Err(invalid("n_trials", "need at least one trial"));
    }
    let mut metrics = EvalMetrics { trials: Vec::new() };
    for j in 0..n_trials {
        let mut rng = stream(seed, StreamTag::Eval, task.task_seed, j as u64);
        metrics.push(&rollout(actor, task, &mut rng)?);
    }
    Ok(metrics)
}
