//! Browser bindings. Every export returns a JSON string that the page in
//! `www/` draws on a canvas.

use iwil::dagger::{adapt, baseline_dagger, baseline_finetune, evaluate, train_base, TrainConfig};
use iwil::envs::{make_task, rollout, Actor, EnvConfig, ExpertActor, UniformActor};
use iwil::experiments::Scenario;
use iwil::reweight::{alignment_cost, update_logits, GradMatrix, WeightState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct ToyRun {
    rows: Vec<Vec<f64>>,
    target: Vec<f64>,
    costs: Vec<f64>,
    weights: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct Drive {
    centerline: Vec<[f64; 2]>,
    half_width: f64,
    path: Vec<[f64; 2]>,
    override_steps: Vec<usize>,
    accuracy: f64,
}

#[derive(Serialize)]
struct Curve {
    method: &'static str,
    accuracy: Vec<f64>,
    overrides_cum: Vec<usize>,
}

#[derive(Serialize)]
struct AdaptRun {
    samples: usize,
    /// Task id of every training sample, for grouping the weight columns.
    sample_task: Vec<u64>,
    iters: Vec<usize>,
    weights: Vec<Vec<f64>>,
    curves: Vec<Curve>,
}

fn json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).unwrap_or_else(|e| format!("{{\"error\":\"{e}\"}}"))
}

fn error(e: impl std::fmt::Display) -> String {
    json(&serde_json::json!({ "error": e.to_string() }))
}

/// Random `n x dim` gradient rows and target; `steps` single logit updates at
/// rate `gamma`, recording the cost and weights after each.
#[wasm_bindgen]
pub fn reweight_toy(n: usize, dim: usize, seed: u64, steps: usize, gamma: f64) -> String {
    if n == 0 || dim == 0 {
        return error("n and dim must be positive");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..=1.0)).collect())
        .collect();
    let target: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    let g = match GradMatrix::from_rows(&rows) {
        Ok(g) => g,
        Err(e) => return error(e),
    };
    let mut state = WeightState::uniform(n).expect("n > 0");
    let mut run = ToyRun {
        costs: vec![alignment_cost(state.weights(), &g, &target).unwrap_or(f64::NAN)],
        weights: vec![state.weights().to_vec()],
        rows,
        target,
    };
    for _ in 0..steps {
        state = match update_logits(&state, &g, &run.target, gamma, 1) {
            Ok(s) => s,
            Err(e) => return error(e),
        };
        run.costs
            .push(alignment_cost(state.weights(), &g, &run.target).unwrap_or(f64::NAN));
        run.weights.push(state.weights().to_vec());
    }
    json(&run)
}

/// One episode on the corridor generated from `task_seed`, driven by the
/// scripted `"expert"` or a `"random"` policy.
#[wasm_bindgen]
pub fn drive(task_seed: u64, driver: &str, seed: u64) -> String {
    let task = match make_task(task_seed, &EnvConfig::default()) {
        Ok(t) => t,
        Err(e) => return error(e),
    };
    let mut expert = ExpertActor;
    let mut random = UniformActor::new(seed);
    let actor: &mut dyn Actor = match driver {
        "expert" => &mut expert,
        "random" => &mut random,
        other => return error(format!("unknown driver {other:?}")),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match rollout(actor, &task, &mut rng) {
        Ok(log) => json(&Drive {
            centerline: task.track.waypoints().to_vec(),
            half_width: task.env.half_width,
            path: log.trajectory.iter().map(|a| a.position).collect(),
            accuracy: log.correct() as f64 / log.len().max(1) as f64,
            override_steps: log.overrides,
        }),
        Err(e) => error(e),
    }
}

/// Small end-to-end run: base training, adaptation to the held-out task and
/// both baselines. Returns the weight trace and per-trial curves.
#[wasm_bindgen]
pub fn adapt_demo(seed: u64, trials: usize) -> String {
    let scn = Scenario {
        env: EnvConfig {
            episode_len: 60,
            ..EnvConfig::default()
        },
        train: TrainConfig {
            seed,
            tau: 100,
            tau_hat: 60,
            n_train_tasks: 4,
            trajectories_per_task: 2,
            test_trials: trials.max(1),
            eval_trials: 3,
            trace_every: 6,
            ..TrainConfig::desk()
        },
    };
    match run_adapt(&scn) {
        Ok(run) => json(&run),
        Err(e) => error(e),
    }
}

fn run_adapt(scn: &Scenario) -> iwil::Result<AdaptRun> {
    let tasks = scn.train_tasks()?;
    let test = scn.test_task()?;
    let (theta, data) = train_base(&tasks, &scn.train)?;
    let ours = adapt(&theta, &data, &test, &scn.train)?;
    let dagger = baseline_dagger(&tasks, &test, &scn.train)?;
    let finetune = baseline_finetune(&test, &scn.train)?;
    let mut curves = Vec::new();
    for (method, checkpoints, metrics) in [
        ("ours", &ours.checkpoints, &ours.metrics),
        ("dagger", &dagger.checkpoints, &dagger.metrics),
        ("finetune", &finetune.checkpoints, &finetune.metrics),
    ] {
        let accuracy = checkpoints
            .iter()
            .map(|p| Ok(evaluate(&mut &*p, &test, scn.train.eval_trials, scn.eval_seed())?.accuracy()))
            .collect::<iwil::Result<Vec<f64>>>()?;
        curves.push(Curve {
            method,
            accuracy,
            overrides_cum: metrics.trials.iter().map(|t| t.overrides_cum).collect(),
        });
    }
    Ok(AdaptRun {
        samples: data.len(),
        sample_task: data.iter().map(|s| s.task_id).collect(),
        iters: ours.weight_trace.iter().map(|(i, _)| *i).collect(),
        weights: ours.weight_trace.iter().map(|(_, w)| w.weights().to_vec()).collect(),
        curves,
    })
}
