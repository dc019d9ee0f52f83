//! End-to-end studies built from the training loops.

use crate::dagger::{
    adapt, baseline_dagger, baseline_finetune, evaluate, train_base, AdaptResult, EvalMetrics, TrainConfig,
};
use crate::envs::{expert_action, make_task, rollout, EnvConfig, ExpertActor, TaskSpec};
use crate::error::{invalid, Result};
use crate::policy::{PolicyParams, Sample};

/// Seed offset of the held-out test task.
pub const TEST_TASK_OFFSET: u64 = 999;

/// Environment plus training settings for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub env: EnvConfig,
    pub train: TrainConfig,
}

impl Scenario {
    pub fn desk(seed: u64) -> Self {
        Scenario {
            env: EnvConfig::default(),
            train: TrainConfig {
                seed,
                ..TrainConfig::desk()
            },
        }
    }

    pub fn train_task_seed(&self, i: usize) -> u64 {
        self.train.seed.wrapping_mul(1000).wrapping_add(i as u64)
    }

    pub fn test_task_seed(&self) -> u64 {
        self.train.seed.wrapping_mul(1000).wrapping_add(TEST_TASK_OFFSET)
    }

    pub fn train_tasks(&self) -> Result<Vec<TaskSpec>> {
        (0..self.train.n_train_tasks)
            .map(|i| make_task(self.train_task_seed(i), &self.env))
            .collect()
    }

    pub fn test_task(&self) -> Result<TaskSpec> {
        make_task(self.test_task_seed(), &self.env)
    }

    /// Seed for scoring rollouts, kept apart from the training streams.
    pub fn eval_seed(&self) -> u64 {
        self.train.seed ^ 0x00E0_A100_0000_0000
    }
}

/// Test-task results of one method.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodReport {
    pub method: &'static str,
    /// Rollouts collected on the test task while learning.
    pub trial_metrics: EvalMetrics,
    /// `(trials, accuracy on fresh rollouts)` after that many trials.
    pub accuracy_after: Vec<(usize, f64)>,
    pub params: PolicyParams,
}

impl MethodReport {
    pub fn accuracy_at(&self, trials: usize) -> Option<f64> {
        self.accuracy_after.iter().find(|(t, _)| *t == trials).map(|(_, a)| *a)
    }

    pub fn final_overrides(&self) -> usize {
        self.trial_metrics.overrides()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub theta_star: PolicyParams,
    pub train_data: Vec<Sample>,
    pub ours: MethodReport,
    pub adapt: AdaptResult,
    pub dagger: MethodReport,
    pub finetune: MethodReport,
}

impl Comparison {
    pub fn methods(&self) -> [&MethodReport; 3] {
        [&self.dagger, &self.finetune, &self.ours]
    }
}

pub fn score_checkpoints(
    checkpoints: &[PolicyParams],
    at: &[usize],
    task: &TaskSpec,
    scenario: &Scenario,
) -> Result<Vec<(usize, f64)>> {
    at.iter()
        .filter(|n| **n >= 1 && **n <= checkpoints.len())
        .map(|&n| {
            let m = evaluate(
                &mut &checkpoints[n - 1],
                task,
                scenario.train.eval_trials,
                scenario.eval_seed(),
            )?;
            Ok((n, m.accuracy()))
        })
        .collect()
}

/// Scores `checkpoints[n - 1]` on fresh rollouts for each `n` in `at` that
/// has a checkpoint.
///
/// Runs all three methods on the held-out task and scores each after the
/// given trial counts.
pub fn compare_methods(scenario: &Scenario, score_at: &[usize]) -> Result<Comparison> {
    let tasks = scenario.train_tasks()?;
    let test = scenario.test_task()?;
    let (theta_star, train_data) = train_base(&tasks, &scenario.train)?;
    let adapted = adapt(&theta_star, &train_data, &test, &scenario.train)?;
    let ours = MethodReport {
        method: "ours",
        trial_metrics: adapted.metrics.clone(),
        accuracy_after: score_checkpoints(&adapted.checkpoints, score_at, &test, scenario)?,
        params: adapted.final_params.clone(),
    };
    let dagger_run = baseline_dagger(&tasks, &test, &scenario.train)?;
    let dagger = MethodReport {
        method: "dagger",
        accuracy_after: score_checkpoints(&dagger_run.checkpoints, score_at, &test, scenario)?,
        trial_metrics: dagger_run.metrics,
        params: dagger_run.params,
    };
    let ft_run = baseline_finetune(&test, &scenario.train)?;
    let finetune = MethodReport {
        method: "finetune",
        accuracy_after: score_checkpoints(&ft_run.checkpoints, score_at, &test, scenario)?,
        trial_metrics: ft_run.metrics,
        params: ft_run.params,
    };
    Ok(Comparison {
        theta_star,
        train_data,
        ours,
        adapt: adapted,
        dagger,
        finetune,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorruptionReport {
    pub train_data: Vec<Sample>,
    pub adapt: AdaptResult,
    pub mean_weight_corrupted: f64,
    pub mean_weight_clean: f64,
}

/// Trains with a fraction of every collected batch mislabelled, adapts to the
/// held-out task and compares the importance weights of clean and corrupted
/// samples.
pub fn corruption_study(scenario: &Scenario) -> Result<CorruptionReport> {
    if scenario.train.corrupt_frac <= 0.0 {
        return Err(invalid(
            "corrupt_frac",
            "the study needs a positive corruption fraction",
        ));
    }
    let tasks = scenario.train_tasks()?;
    let test = scenario.test_task()?;
    let (theta_star, train_data) = train_base(&tasks, &scenario.train)?;
    let adapted = adapt(&theta_star, &train_data, &test, &scenario.train)?;
    let (mut sum_c, mut n_c, mut sum_k, mut n_k) = (0.0, 0usize, 0.0, 0usize);
    if let Some(w) = adapted.final_weights() {
        for (s, p) in train_data.iter().zip(w.weights()) {
            if s.corrupted {
                sum_c += p;
                n_c += 1;
            } else {
                sum_k += p;
                n_k += 1;
            }
        }
    }
    let mean = |s: f64, n: usize| if n == 0 { f64::NAN } else { s / n as f64 };
    Ok(CorruptionReport {
        train_data,
        adapt: adapted,
        mean_weight_corrupted: mean(sum_c, n_c),
        mean_weight_clean: mean(sum_k, n_k),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryReport {
    pub task_index: usize,
    pub base_accuracy: f64,
    pub adapted_accuracy: f64,
}

/// Re-adapts the base policy to one of its own training tasks for
/// `iterations` outer iterations and scores both policies there.
pub fn train_task_recovery(scenario: &Scenario, task_index: usize, iterations: usize) -> Result<RecoveryReport> {
    let tasks = scenario.train_tasks()?;
    let task = tasks
        .get(task_index)
        .ok_or_else(|| invalid("task_index", format!("only {} training tasks", tasks.len())))?;
    let (theta_star, train_data) = train_base(&tasks, &scenario.train)?;
    let cfg = TrainConfig {
        tau_hat: iterations,
        test_trials: 1,
        ..scenario.train.clone()
    };
    let adapted = adapt(&theta_star, &train_data, task, &cfg)?;
    let n = scenario.train.eval_trials;
    let base = evaluate(&mut &theta_star, task, n, scenario.eval_seed())?;
    let after = evaluate(&mut &adapted.final_params, task, n, scenario.eval_seed())?;
    Ok(RecoveryReport {
        task_index,
        base_accuracy: base.accuracy(),
        adapted_accuracy: after.accuracy(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SanityReport {
    pub tasks: usize,
    pub steps: usize,
    pub overrides: usize,
    /// Fraction of visited states where re-querying the expert returns the
    /// action it took.
    pub self_consistency: f64,
    pub max_deviation: f64,
}

/// Drives the expert closed loop on `n_tasks` generated tasks.
pub fn expert_sanity(env: &EnvConfig, n_tasks: usize, seed: u64) -> Result<SanityReport> {
    let mut report = SanityReport {
        tasks: n_tasks,
        steps: 0,
        overrides: 0,
        self_consistency: 1.0,
        max_deviation: 0.0,
    };
    let mut consistent = 0usize;
    for i in 0..n_tasks {
        let task = make_task(seed.wrapping_mul(1000).wrapping_add(i as u64), env)?;
        let mut rng = crate::dagger::stream(seed, crate::dagger::StreamTag::Eval, task.task_seed, 0);
        let log = rollout(&mut ExpertActor, &task, &mut rng)?;
        report.overrides += log.overrides.len();
        for (agent, taken) in log.trajectory.iter().zip(&log.agent_actions) {
            report.steps += 1;
            report.max_deviation = report.max_deviation.max(task.deviation(agent));
            if expert_action(&task, agent) == *taken {
                consistent += 1;
            }
        }
    }
    if report.steps > 0 {
        report.self_consistency = consistent as f64 / report.steps as f64;
    }
    Ok(report)
}
