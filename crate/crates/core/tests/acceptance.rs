//! End-to-end acceptance checks. Every criterion prints one PASS/FAIL line;
//! the test fails if any criterion does.
//!
//! Run with `cargo test --release -p iwil --test acceptance -- --nocapture`
//! to see the report.

use std::time::{Duration, Instant};

use iwil::dagger::{adapt, train_base, TrainConfig};
use iwil::envs::EnvConfig;
use iwil::experiments::{compare_methods, corruption_study, expert_sanity, train_task_recovery, Scenario};
use iwil::io::{write_accuracy_table, write_metrics, write_weights};
use iwil::policy::{PolicyParams, Sample};
use iwil::reweight::{
    alignment_cost, grad_wrt_logits, grad_wrt_weights, softmax_jacobian, softmax_weights, update_logits, weighted_grad,
    GradMatrix, WeightState,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
    csv: Vec<Vec<u8>>,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome {
            pass,
            detail: detail.into(),
            csv: Vec::new(),
        }
    }
}

fn uniform_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect()
}

fn central_diff(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let h = 1e-5;
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn rel_err(a: &[f64], n: &[f64]) -> f64 {
    let diff = a.iter().zip(n).map(|(a, n)| (a - n) * (a - n)).sum::<f64>().sqrt();
    diff / n.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-3)
}

fn gradient_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let a = rng.gen_range(2..=5);
        let d = rng.gen_range(1..=4);
        let n = rng.gen_range(1..=10);
        let p = PolicyParams::random_uniform(a, d, 1.0, &mut rng);
        let s = Sample::new(uniform_vec(&mut rng, d), rng.gen_range(0..a), 0);
        let fd = central_diff(&p.to_flat(), |x| {
            PolicyParams::from_flat(a, d, x).unwrap().nll_loss(&s).unwrap()
        });
        worst = worst.max(rel_err(&p.per_sample_grad(&s).unwrap(), &fd));

        let batch: Vec<Sample> = (0..n)
            .map(|_| Sample::new(uniform_vec(&mut rng, d), rng.gen_range(0..a), 0))
            .collect();
        let g = GradMatrix::per_sample(&p, &batch).unwrap();
        let target = uniform_vec(&mut rng, g.cols());
        let logits = uniform_vec(&mut rng, n);
        let state = WeightState::from_logits(logits.clone()).unwrap();
        let fd = central_diff(state.weights(), |w| alignment_cost(w, &g, &target).unwrap());
        worst = worst.max(rel_err(&grad_wrt_weights(state.weights(), &g, &target).unwrap(), &fd));
        let fd = central_diff(&logits, |l| {
            alignment_cost(&softmax_weights(l).unwrap(), &g, &target).unwrap()
        });
        worst = worst.max(rel_err(&grad_wrt_logits(&state, &g, &target).unwrap(), &fd));
    }
    Outcome::new(worst < 1e-6, format!("worst relative error {worst:.2e}"))
}

fn simplex_structure() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut ok = true;
    for _ in 0..1000 {
        let n = rng.gen_range(1..=12);
        let dim = rng.gen_range(1..=6);
        let logits: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..=3.0)).collect();
        let w = softmax_weights(&logits).unwrap();
        ok &= (w.iter().sum::<f64>() - 1.0).abs() <= 1e-12;
        let shifted: Vec<f64> = logits.iter().map(|l| l + 7.3).collect();
        ok &= w
            .iter()
            .zip(softmax_weights(&shifted).unwrap())
            .all(|(a, b)| (a - b).abs() <= 1e-12);
        let jac = softmax_jacobian(&w);
        for i in 0..n {
            ok &= jac[i].iter().sum::<f64>().abs() <= 1e-12;
            ok &= (0..n).all(|j| jac[i][j] == jac[j][i]);
        }
        let rows: Vec<Vec<f64>> = (0..n).map(|_| uniform_vec(&mut rng, dim)).collect();
        let g = GradMatrix::from_rows(&rows).unwrap();
        let target = uniform_vec(&mut rng, dim);
        let state = WeightState::from_logits(logits).unwrap();
        ok &= grad_wrt_logits(&state, &g, &target).unwrap().iter().sum::<f64>().abs() <= 1e-10;
        let avg = weighted_grad(&vec![1.0 / n as f64; n], &g).unwrap();
        for (c, col) in avg.iter().zip(0..dim) {
            let mean = rows.iter().map(|r| r[col]).sum::<f64>() / n as f64;
            ok &= (c - mean).abs() <= 1e-12;
        }
    }
    Outcome::new(ok, "1000 instances")
}

fn worked_example() -> Outcome {
    let g = GradMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    let t = [1.0, 0.0];
    let s = WeightState::uniform(2).unwrap();
    let sigma = 1.0 / (1.0 + (-0.05f64).exp());
    let next = update_logits(&s, &g, &t, 0.05, 1).unwrap();
    let ok = alignment_cost(s.weights(), &g, &t).unwrap() == 0.5
        && grad_wrt_weights(s.weights(), &g, &t).unwrap() == [-1.0, 1.0]
        && grad_wrt_logits(&s, &g, &t).unwrap() == [-0.5, 0.5]
        && (next.weights()[0] - sigma).abs() <= 1e-9
        && (next.weights()[1] - (1.0 - sigma)).abs() <= 1e-9
        && (sigma - 0.512497).abs() < 1e-6;
    Outcome::new(
        ok,
        format!("post-step weights [{:.9}, {:.9}]", next.weights()[0], next.weights()[1]),
    )
}

fn reduction_identity() -> Outcome {
    let scn = Scenario::desk(0);
    let tasks = scn.train_tasks().unwrap();
    let (theta, data) = train_base(&tasks, &scn.train).unwrap();
    let cfg = TrainConfig {
        k: 0,
        ..scn.train.clone()
    };
    let res = adapt(&theta, &data, &scn.test_task().unwrap(), &cfg).unwrap();
    let mut phi = theta;
    let mut identical = res.params_trace.len() == cfg.tau_hat * cfg.test_trials;
    for p in &res.params_trace {
        phi = phi.sgd_step(&phi.batch_grad(&data).unwrap(), cfg.beta).unwrap();
        identical &= phi
            .to_flat()
            .iter()
            .zip(p.to_flat())
            .all(|(a, b)| a.to_bits() == b.to_bits());
    }
    Outcome::new(
        identical,
        format!("{} iterations compared bitwise", res.params_trace.len()),
    )
}

fn corruption() -> Outcome {
    let mut wins = 0;
    let mut csv = Vec::new();
    let mut ns = Vec::new();
    for seed in 0..10 {
        let mut scn = Scenario::desk(seed);
        scn.train.corrupt_frac = 0.5;
        let r = corruption_study(&scn).unwrap();
        if r.mean_weight_corrupted < r.mean_weight_clean {
            wins += 1;
        }
        ns.push(r.train_data.len());
        let mut buf = Vec::new();
        write_weights(&mut buf, &r.adapt.weight_trace, &r.train_data).unwrap();
        csv.push(buf);
    }
    Outcome {
        pass: wins >= 9,
        detail: format!("corrupted weight below clean in {wins}/10 seeds, N = {ns:?}"),
        csv,
    }
}

fn baselines() -> (Outcome, Outcome) {
    let (mut beat_ft, mut beat_dagger, mut fewer_overrides) = (0, 0, 0);
    let mut ours_mean = [0.0; 3];
    let mut csv = Vec::new();
    for seed in 0..5 {
        let c = compare_methods(&Scenario::desk(seed), &[1, 2, 5]).unwrap();
        let at = |r: &iwil::experiments::MethodReport, n| r.accuracy_at(n).unwrap();
        if at(&c.ours, 5) > at(&c.finetune, 5) {
            beat_ft += 1;
        }
        if at(&c.ours, 5) > at(&c.dagger, 5) {
            beat_dagger += 1;
        }
        for (k, n) in [1, 2, 5].into_iter().enumerate() {
            ours_mean[k] += at(&c.ours, n) / 5.0;
        }
        let o = c.ours.final_overrides();
        if o <= c.dagger.final_overrides() && o <= c.finetune.final_overrides() {
            fewer_overrides += 1;
        }
        for m in c.methods() {
            let mut buf = Vec::new();
            write_metrics(&mut buf, m.method, &m.trial_metrics).unwrap();
            csv.push(buf);
        }
        let mut buf = Vec::new();
        write_accuracy_table(&mut buf, &c.methods()).unwrap();
        csv.push(buf);
    }
    let monotone = ours_mean[0] <= ours_mean[1] && ours_mean[1] <= ours_mean[2];
    let ordering = Outcome {
        pass: beat_ft >= 4 && beat_dagger >= 4 && monotone,
        detail: format!(
            "ours > fine-tune in {beat_ft}/5, ours > dagger in {beat_dagger}/5, ours mean after 1/2/5 trials {:.3}/{:.3}/{:.3}",
            ours_mean[0], ours_mean[1], ours_mean[2]
        ),
        csv,
    };
    let overrides = Outcome::new(
        fewer_overrides >= 4,
        format!("ours has fewest overrides in {fewer_overrides}/5 seeds"),
    );
    (ordering, overrides)
}

fn recovery() -> Outcome {
    let mut ok = 0;
    let mut rows = String::from("seed,base_accuracy,adapted_accuracy\n");
    for seed in 0..5 {
        let r = train_task_recovery(&Scenario::desk(seed), 0, 1).unwrap();
        if r.adapted_accuracy >= r.base_accuracy {
            ok += 1;
        }
        rows.push_str(&format!("{seed},{},{}\n", r.base_accuracy, r.adapted_accuracy));
    }
    Outcome {
        pass: ok >= 4,
        detail: format!("adapted >= base in {ok}/5 seeds"),
        csv: vec![rows.into_bytes()],
    }
}

fn sanity() -> Outcome {
    let r = expert_sanity(&EnvConfig::default(), 100, 0).unwrap();
    Outcome::new(
        r.overrides == 0 && r.self_consistency >= 0.99,
        format!(
            "{} steps, {} overrides, self-consistency {:.4}, max deviation {:.3}",
            r.steps, r.overrides, r.self_consistency, r.max_deviation
        ),
    )
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed())
}

#[test]
fn acceptance() {
    let mut lines = Vec::new();
    let mut all = true;
    let mut report = |id: u32, name: &str, o: &Outcome, took: Duration, limit: Duration| {
        let pass = o.pass && took <= limit;
        all &= pass;
        lines.push(format!(
            "{} {id:>2} {name}: {} ({:.1}s, limit {}s)",
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            took.as_secs_f64(),
            limit.as_secs()
        ));
    };
    let secs = Duration::from_secs;

    let (o, t) = timed(gradient_correctness);
    report(1, "gradient correctness", &o, t, secs(5));
    let (o, t) = timed(simplex_structure);
    report(2, "simplex and Jacobian structure", &o, t, secs(5));
    let (o, t) = timed(worked_example);
    report(3, "two-sample worked example", &o, t, secs(1));
    let (o, t) = timed(reduction_identity);
    report(4, "K = 0 reduces to full-batch SGD", &o, t, secs(30));
    let (c5, t) = timed(corruption);
    report(5, "corrupted samples get lower weight", &c5, t, secs(300));
    let ((c6, c7), t) = timed(baselines);
    report(6, "baseline ordering", &c6, t, secs(600));
    report(7, "override counts", &c7, t, secs(600));
    let (c8, t) = timed(recovery);
    report(8, "train-task recovery", &c8, t, secs(120));
    let (o, t) = timed(sanity);
    report(9, "expert sanity gate", &o, t, secs(60));

    let (rerun, t) = timed(|| {
        let c5b = corruption();
        let (c6b, _) = baselines();
        let c8b = recovery();
        c5.csv == c5b.csv && c6.csv == c6b.csv && c8.csv == c8b.csv
    });
    let n_files = c5.csv.len() + c6.csv.len() + c8.csv.len();
    report(
        10,
        "determinism",
        &Outcome::new(rerun, format!("{n_files} CSV outputs compared byte for byte")),
        t,
        secs(1200),
    );

    for l in &lines {
        println!("{l}");
    }
    assert!(all, "acceptance failures:\n{}", lines.join("\n"));
}
