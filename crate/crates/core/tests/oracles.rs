//! Finite-difference and brute-force checks of the analytic code paths.

use iwil::policy::{argmax, softmax, PolicyParams, Sample};
use iwil::reweight::{
    alignment_cost, grad_wrt_logits, grad_wrt_weights, softmax_jacobian, softmax_vjp, softmax_weights, update_logits,
    weighted_grad, GradMatrix, WeightState,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;

fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..=scale)).collect()
}

fn random_params(rng: &mut ChaCha8Rng, a: usize, d: usize) -> PolicyParams {
    PolicyParams::random_uniform(a, d, 1.0, rng)
}

fn random_sample(rng: &mut ChaCha8Rng, a: usize, d: usize) -> Sample {
    Sample::new(uniform_vec(rng, d, 1.0), rng.gen_range(0..a), 0)
}

fn central_diff(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + H;
            let up = f(&probe);
            probe[i] = x[i] - H;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * H)
        })
        .collect()
}

fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n) * (a - n))
        .sum::<f64>()
        .sqrt();
    let scale: f64 = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    diff / scale.max(1e-3)
}

fn random_instance(rng: &mut ChaCha8Rng, max_n: usize, max_d: usize) -> (GradMatrix, Vec<f64>) {
    let n = rng.gen_range(1..=max_n);
    let d = rng.gen_range(1..=max_d);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| uniform_vec(rng, d, 1.0)).collect();
    (GradMatrix::from_rows(&rows).unwrap(), uniform_vec(rng, d, 1.0))
}

#[test]
fn per_sample_grad_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let a = rng.gen_range(2..=5);
        let d = rng.gen_range(1..=4);
        let p = random_params(&mut rng, a, d);
        let s = random_sample(&mut rng, a, d);
        let numeric = central_diff(&p.to_flat(), |x| {
            PolicyParams::from_flat(a, d, x).unwrap().nll_loss(&s).unwrap()
        });
        let analytic = p.per_sample_grad(&s).unwrap();
        assert!(rel_err(&analytic, &numeric) < 1e-6);
    }
}

#[test]
fn batch_grad_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let a = rng.gen_range(2..=5);
        let d = rng.gen_range(1..=4);
        let p = random_params(&mut rng, a, d);
        let n = rng.gen_range(1..=10);
        let batch: Vec<Sample> = (0..n).map(|_| random_sample(&mut rng, a, d)).collect();
        let numeric = central_diff(&p.to_flat(), |x| {
            PolicyParams::from_flat(a, d, x).unwrap().mean_nll(&batch).unwrap()
        });
        assert!(rel_err(&p.batch_grad(&batch).unwrap(), &numeric) < 1e-6);
    }
}

#[test]
fn forward_matches_direct_exponentials() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..1000 {
        let a = rng.gen_range(2..=5);
        let d = rng.gen_range(1..=4);
        let p = random_params(&mut rng, a, d);
        let s = uniform_vec(&mut rng, d, 1.0);
        let probs = p.forward(&s).unwrap();
        let exps: Vec<f64> = (0..a)
            .map(|k| {
                let z: f64 = p.weight_row(k).iter().zip(&s).map(|(w, x)| w * x).sum::<f64>() + p.bias()[k];
                z.exp()
            })
            .collect();
        let total: f64 = exps.iter().sum();
        for (pk, ek) in probs.iter().zip(&exps) {
            assert!((pk - ek / total).abs() < 1e-14);
        }
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn grad_wrt_weights_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..100 {
        let (g, t) = random_instance(&mut rng, 10, 12);
        let w = softmax_weights(&uniform_vec(&mut rng, g.rows(), 2.0)).unwrap();
        let numeric = central_diff(&w, |x| alignment_cost(x, &g, &t).unwrap());
        assert!(rel_err(&grad_wrt_weights(&w, &g, &t).unwrap(), &numeric) < 1e-6);
    }
}

#[test]
fn grad_wrt_logits_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let (g, t) = random_instance(&mut rng, 10, 12);
        let logits = uniform_vec(&mut rng, g.rows(), 2.0);
        let state = WeightState::from_logits(logits.clone()).unwrap();
        let numeric = central_diff(&logits, |x| {
            alignment_cost(&softmax_weights(x).unwrap(), &g, &t).unwrap()
        });
        assert!(rel_err(&grad_wrt_logits(&state, &g, &t).unwrap(), &numeric) < 1e-6);
    }
}

#[test]
fn simplex_and_jacobian_structure() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..1000 {
        let (g, t) = random_instance(&mut rng, 12, 6);
        let n = g.rows();
        let logits = uniform_vec(&mut rng, n, 3.0);
        let w = softmax_weights(&logits).unwrap();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(w.iter().all(|p| *p > 0.0));
        let shifted: Vec<f64> = logits.iter().map(|l| l + 7.3).collect();
        for (a, b) in w.iter().zip(softmax_weights(&shifted).unwrap()) {
            assert!((a - b).abs() < 1e-12);
        }

        let jac = softmax_jacobian(&w);
        let v = uniform_vec(&mut rng, n, 1.0);
        for i in 0..n {
            assert!(jac[i].iter().sum::<f64>().abs() < 1e-12);
            for j in 0..n {
                assert_eq!(jac[i][j], jac[j][i]);
            }
        }
        let jv: Vec<f64> = jac
            .iter()
            .map(|row| row.iter().zip(&v).map(|(a, b)| a * b).sum())
            .collect();
        let quad: f64 = jv.iter().zip(&v).map(|(a, b)| a * b).sum();
        assert!(quad >= -1e-12);
        for (a, b) in jv.iter().zip(softmax_vjp(&w, &v).unwrap()) {
            assert!((a - b).abs() < 1e-12);
        }

        let state = WeightState::from_logits(logits).unwrap();
        assert!(grad_wrt_logits(&state, &g, &t).unwrap().iter().sum::<f64>().abs() < 1e-10);

        let uniform = vec![1.0 / n as f64; n];
        let combined = weighted_grad(&uniform, &g).unwrap();
        for (c, col) in combined.iter().zip(0..g.cols()) {
            let mean = g.iter_rows().map(|r| r[col]).sum::<f64>() / n as f64;
            assert!((c - mean).abs() < 1e-12);
        }
    }
}

#[test]
fn alignment_cost_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..200 {
        let (g, t) = random_instance(&mut rng, 10, 8);
        let w = softmax_weights(&uniform_vec(&mut rng, g.rows(), 2.0)).unwrap();
        let mut brute = 0.0;
        for col in 0..g.cols() {
            let mut s = -t[col];
            for row in 0..g.rows() {
                s += w[row] * g.row(row)[col];
            }
            brute += s * s;
        }
        let cost = alignment_cost(&w, &g, &t).unwrap();
        assert!(cost >= 0.0);
        assert!((cost - brute).abs() < 1e-12 * brute.max(1.0));

        let hit = weighted_grad(&w, &g).unwrap();
        assert!(alignment_cost(&w, &g, &hit).unwrap() < 1e-28);
    }
}

#[test]
fn logit_updates_descend_on_small_instances() {
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let (g, t) = random_instance(&mut rng, 20, 8);
        let start = WeightState::uniform(g.rows()).unwrap();
        let end = update_logits(&start, &g, &t, 0.05, 10).unwrap();
        let before = alignment_cost(start.weights(), &g, &t).unwrap();
        let after = alignment_cost(end.weights(), &g, &t).unwrap();
        assert!(after <= before, "seed {seed}: {before} -> {after}");
        assert!((end.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn predict_agrees_with_argmax_and_ignores_bias_shift() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..1000 {
        let a = rng.gen_range(2..=5);
        let d = rng.gen_range(1..=4);
        let p = random_params(&mut rng, a, d);
        let s = uniform_vec(&mut rng, d, 1.0);
        let k = p.predict(&s).unwrap();
        assert_eq!(k, argmax(&p.forward(&s).unwrap()));
        assert_eq!(k, argmax(&softmax(&p.logits(&s).unwrap())));
        let shifted_bias: Vec<f64> = p.bias().iter().map(|b| b + 3.5).collect();
        let q = PolicyParams::from_parts(a, d, p.weights().to_vec(), shifted_bias).unwrap();
        assert_eq!(q.predict(&s).unwrap(), k);
    }
}

/// Multiclass perceptron with bias. Returns true once an epoch makes no
/// mistakes, which certifies the data is linearly separable.
fn perceptron_separates(samples: &[Sample], actions: usize, epochs: usize) -> bool {
    let dim = samples[0].state.len();
    let mut w = vec![vec![0.0; dim + 1]; actions];
    let score = |w: &[f64], s: &[f64]| w[dim] + w.iter().zip(s).map(|(a, b)| a * b).sum::<f64>();
    for _ in 0..epochs {
        let mut mistakes = 0;
        for s in samples {
            let scores: Vec<f64> = w.iter().map(|row| score(row, &s.state)).collect();
            let best = (0..actions)
                .filter(|k| *k != s.action)
                .max_by(|a, b| scores[*a].total_cmp(&scores[*b]))
                .unwrap();
            if scores[best] >= scores[s.action] {
                mistakes += 1;
                for (i, x) in s.state.iter().chain(std::iter::once(&1.0)).enumerate() {
                    w[s.action][i] += x;
                    w[best][i] -= x;
                }
            }
        }
        if mistakes == 0 {
            return true;
        }
    }
    false
}

#[test]
fn base_training_fits_separable_data() {
    use iwil::dagger::{train_base, TrainConfig};
    use iwil::envs::{make_task, EnvConfig};

    let env = EnvConfig {
        episode_len: 12,
        ..EnvConfig::default()
    };
    let task = make_task(3, &env).unwrap();
    let probe = TrainConfig {
        tau: 0,
        n_train_tasks: 1,
        trajectories_per_task: 1,
        ..TrainConfig::desk()
    };
    let (_, data) = train_base(std::slice::from_ref(&task), &probe).unwrap();
    assert!(perceptron_separates(&data, env.actions, 100_000), "generated data is not separable");

    let cfg = TrainConfig {
        alpha: 0.5,
        tau: 20_000,
        ..probe
    };
    let (theta, fitted) = train_base(&[task], &cfg).unwrap();
    assert_eq!(fitted, data);
    assert!(theta.accuracy(&data).unwrap() >= 0.99);
}
