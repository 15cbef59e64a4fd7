mod common;

use common::*;
use flowcast::deepnet::*;
use flowcast::linalg::Matrix;
use rand::Rng;

fn random_net(seed: u64, input: usize, widths: Vec<usize>, output: usize, act: Activation, lam: f64) -> DeepNet {
    let cfg = NetConfig {
        input_dim: input,
        hidden_widths: widths,
        activation: act,
        output_dim: output,
        penalty_weight: lam,
        seed,
        ..Default::default()
    };
    let mut net = init_network(&cfg).unwrap();
    // non-zero biases so every parameter matters
    let mut r = rng(seed + 1);
    let theta: Vec<f64> = net.parameters().iter().map(|w| w + r.random_range(-0.3..0.3)).collect();
    net.set_parameters(&theta).unwrap();
    net
}

/// Largest relative gap between analytic and central-difference gradients.
fn gradient_error(net: &DeepNet, x: &Matrix, y: &Matrix) -> f64 {
    let (_, g) = loss_and_gradients(net, x, y, None).unwrap();
    let g = g.flatten();
    let theta = net.parameters();
    let h = 1e-5;
    let mut probe = net.clone();
    let mut worst = 0.0f64;
    for i in 0..theta.len() {
        let mut t = theta.clone();
        t[i] = theta[i] + h;
        probe.set_parameters(&t).unwrap();
        let up = loss_and_gradients(&probe, x, y, None).unwrap().0;
        t[i] = theta[i] - h;
        probe.set_parameters(&t).unwrap();
        let down = loss_and_gradients(&probe, x, y, None).unwrap().0;
        let fd = (up - down) / (2.0 * h);
        let rel = (g[i] - fd).abs() / g[i].abs().max(fd.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    worst
}

#[test]
fn gradients_match_finite_differences() {
    let mut r = rng(1);
    for inst in 0..10u64 {
        let depth = 1 + (inst % 3) as usize;
        let input = r.random_range(2..=5);
        let output = r.random_range(1..=2);
        let widths: Vec<usize> = (0..depth).map(|_| r.random_range(2..=6)).collect();
        let net = random_net(10 + inst, input, widths.clone(), output, Activation::Tanh, 1e-3);
        assert!(net.n_parameters() <= 200);
        let x = normal_matrix(&mut r, 7, input);
        let y = normal_matrix(&mut r, 7, output);
        let err = gradient_error(&net, &x, &y);
        assert!(err < 1e-5, "instance {inst} widths {widths:?}: relative error {err}");
    }
}

#[test]
fn relu_gradients_away_from_kinks() {
    let mut r = rng(2);
    let net = random_net(20, 3, vec![5, 4], 1, Activation::Relu, 0.0);
    let x = normal_matrix(&mut r, 6, 3);
    let y = normal_matrix(&mut r, 6, 1);
    // skip the check if a pre-activation sits within a step of zero
    let mut near_kink = false;
    for i in 0..6 {
        let mut a = x.row(i).to_vec();
        for l in &net.layers[..2] {
            let z: Vec<f64> = (0..l.weights.rows())
                .map(|o| l.weights.row(o).iter().zip(&a).map(|(w, v)| w * v).sum::<f64>() + l.biases[o])
                .collect();
            near_kink |= z.iter().any(|v| v.abs() < 1e-3);
            a = z.iter().map(|v| v.max(0.0)).collect();
        }
    }
    assert!(!near_kink, "choose another seed");
    assert!(gradient_error(&net, &x, &y) < 1e-5);
}

#[test]
fn dropout_gradients_match_masked_differences() {
    let mut r = rng(3);
    let cfg = NetConfig {
        input_dim: 4,
        hidden_widths: vec![5, 3],
        dropout_p: 0.4,
        seed: 30,
        ..Default::default()
    };
    let net = init_network(&cfg).unwrap();
    let x = normal_matrix(&mut r, 5, 4);
    let y = normal_matrix(&mut r, 5, 1);
    let mask = DropoutMask::sample(&cfg, 5, &mut r);
    let (_, g) = loss_and_gradients(&net, &x, &y, Some(&mask)).unwrap();
    let g = g.flatten();
    let theta = net.parameters();
    let mut probe = net.clone();
    for i in 0..theta.len() {
        let mut t = theta.clone();
        t[i] += 1e-5;
        probe.set_parameters(&t).unwrap();
        let up = loss_and_gradients(&probe, &x, &y, Some(&mask)).unwrap().0;
        t[i] -= 2e-5;
        probe.set_parameters(&t).unwrap();
        let down = loss_and_gradients(&probe, &x, &y, Some(&mask)).unwrap().0;
        let fd = (up - down) / 2e-5;
        assert!((g[i] - fd).abs() / g[i].abs().max(fd.abs()).max(1e-6) < 1e-5, "parameter {i}");
    }
}

/// Mean and standard error of `‖y − (M∘X)w‖²` over Bernoulli keep masks,
/// evaluated through the network code with a linear net.
fn dropout_monte_carlo(x: &Matrix, y: &[f64], w: &[f64], keep: f64, masks: usize, seed: u64) -> (f64, f64) {
    let cfg = NetConfig {
        input_dim: x.cols(),
        output_dim: 1,
        dropout_p: 1.0 - keep,
        penalty_weight: 0.0,
        ..Default::default()
    };
    let mut net = init_network(&cfg).unwrap();
    let mut theta = w.to_vec();
    theta.push(0.0);
    net.set_parameters(&theta).unwrap();
    let ym = column_vector(y);
    let mut r = rng(seed);
    let (mut s, mut s2) = (0.0, 0.0);
    for _ in 0..masks {
        let mask = DropoutMask::sample(&cfg, x.rows(), &mut r);
        let (loss, _) = loss_and_gradients(&net, x, &ym, Some(&mask)).unwrap();
        let v = 2.0 * x.rows() as f64 * loss;
        s += v;
        s2 += v * v;
    }
    let n = masks as f64;
    let mean = s / n;
    (mean, ((s2 / n - mean * mean) / (n - 1.0)).sqrt())
}

#[test]
fn dropout_matches_scaled_ridge_in_expectation() {
    let mut r = rng(4);
    for inst in 0..5 {
        let (t, p) = (r.random_range(5..15), r.random_range(2..6));
        let x = normal_matrix(&mut r, t, p);
        let y = normal_vec(&mut r, t);
        let w = normal_vec(&mut r, p);
        let keep = r.random_range(0.3..0.95);
        let (mean, se) = dropout_monte_carlo(&x, &y, &w, keep, 100_000, 40 + inst);
        let fit: f64 = (0..t)
            .map(|i| (y[i] - keep * x.row(i).iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()).powi(2))
            .sum();
        let want = fit + dropout_ridge_penalty(&x, &w, keep).unwrap();
        assert!((mean - want).abs() < 3.0 * se, "instance {inst}: MC {mean} ± {se}, identity {want}");
    }
}

#[test]
fn ridge_penalty_with_unit_columns() {
    let x = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.6], vec![0.0, 0.8]]).unwrap();
    let w = [2.0, -3.0];
    let v = dropout_ridge_penalty(&x, &w, 0.3).unwrap();
    assert!((v - 0.3 * 0.7 * 13.0).abs() < 1e-12);
    assert_eq!(dropout_ridge_penalty(&x, &w, 0.0).unwrap(), 0.0);
}

fn linear_data(seed: u64, t: usize, noise: f64) -> (Matrix, Vec<f64>) {
    let mut r = rng(seed);
    let x = normal_matrix(&mut r, t, 3);
    let y = (0..t)
        .map(|i| 1.5 * x.row(i)[0] - 0.7 * x.row(i)[1] + 0.2 * x.row(i)[2] + 4.0 + noise * r.random_range(-1.0..1.0))
        .collect();
    (x, y)
}

#[test]
fn linear_net_reaches_least_squares_fit() {
    let (x, y) = linear_data(5, 256, 0.0);
    let d = design_from(x, column_vector(&y));
    let cfg = NetConfig {
        input_dim: 3,
        penalty_weight: 0.0,
        epochs: 200,
        ..Default::default()
    };
    let net = sgd_train(&init_network(&cfg).unwrap(), &d, &d).unwrap();
    let pred = predict(&net, &d).unwrap();
    let mse = pred.as_slice().iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64;
    assert!(mse < 1e-4, "training MSE {mse}");
    assert!(ols_mse(&d.x, &y) < 1e-20);
}

#[test]
fn training_is_deterministic() {
    let (x, y) = linear_data(6, 120, 0.5);
    let d = design_from(x, column_vector(&y));
    let cfg = NetConfig {
        input_dim: 3,
        hidden_widths: vec![6, 4],
        dropout_p: 0.2,
        penalty_weight: 1e-3,
        epochs: 15,
        seed: 9,
        ..Default::default()
    };
    let a = sgd_train(&init_network(&cfg).unwrap(), &d, &d).unwrap();
    let b = sgd_train(&init_network(&cfg).unwrap(), &d, &d).unwrap();
    assert_eq!(a.loss_trace, b.loss_trace);
    assert_eq!(a.parameters(), b.parameters());
}

#[test]
fn stronger_penalty_shrinks_weights() {
    let (x, y) = linear_data(7, 200, 0.3);
    let d = design_from(x, column_vector(&y));
    let norms: Vec<f64> = [0.0, 1e-3, 1e-2]
        .iter()
        .map(|&lam| {
            let cfg = NetConfig {
                input_dim: 3,
                hidden_widths: vec![8],
                penalty_weight: lam,
                epochs: 40,
                seed: 3,
                ..Default::default()
            };
            sgd_train(&init_network(&cfg).unwrap(), &d, &d).unwrap().weight_norm()
        })
        .collect();
    assert!(norms.windows(2).all(|w| w[1] <= w[0]), "{norms:?}");
}

#[test]
fn hidden_unit_permutation_leaves_predictions_unchanged() {
    let (x, y) = linear_data(8, 100, 0.5);
    let d = design_from(x.clone(), column_vector(&y));
    let cfg = NetConfig {
        input_dim: 3,
        hidden_widths: vec![5, 4],
        epochs: 10,
        seed: 4,
        ..Default::default()
    };
    let net = sgd_train(&init_network(&cfg).unwrap(), &d, &d).unwrap();
    let mut perm = net.clone();
    let order = [3usize, 0, 4, 1, 2];
    {
        let (first, rest) = perm.layers.split_at_mut(1);
        let l0 = &mut first[0];
        let l1 = &mut rest[0];
        let w0 = net.layers[0].weights.clone();
        let w1 = net.layers[1].weights.clone();
        for (new, &old) in order.iter().enumerate() {
            l0.weights.row_mut(new).copy_from_slice(w0.row(old));
            l0.biases[new] = net.layers[0].biases[old];
            for o in 0..w1.rows() {
                l1.weights.set(o, new, w1.get(o, old));
            }
        }
    }
    let a = predict(&net, &d).unwrap();
    let b = predict(&perm, &d).unwrap();
    assert!(max_abs_diff(a.as_slice(), b.as_slice()) < 1e-12);
}

#[test]
fn predict_agrees_with_forward() {
    let (x, y) = linear_data(9, 40, 0.5);
    let d = design_from(x.clone(), column_vector(&y));
    let cfg = NetConfig {
        input_dim: 3,
        hidden_widths: vec![4],
        epochs: 3,
        ..Default::default()
    };
    let net = sgd_train(&init_network(&cfg).unwrap(), &d, &d).unwrap();
    let p = predict(&net, &d).unwrap();
    for i in 0..x.rows() {
        let (f, acts) = forward(&net, x.row(i)).unwrap();
        assert_eq!(acts.len(), 1);
        assert!((f[0] - p.get(i, 0)).abs() < 1e-12);
    }
    // identical rows, identical predictions
    let twins = Matrix::from_rows(&[x.row(0).to_vec(), x.row(0).to_vec()]).unwrap();
    let q = predict_matrix(&net, &twins).unwrap();
    assert_eq!(q.get(0, 0), q.get(1, 0));
    assert!(forward(&net, &[1.0]).is_err());
}

#[test]
fn zero_network_predicts_its_bias() {
    let cfg = NetConfig {
        input_dim: 3,
        hidden_widths: vec![4],
        ..Default::default()
    };
    let mut net = init_network(&cfg).unwrap();
    let mut theta = vec![0.0; net.n_parameters()];
    *theta.last_mut().unwrap() = 2.5;
    net.set_parameters(&theta).unwrap();
    let mut r = rng(10);
    let p = predict_matrix(&net, &normal_matrix(&mut r, 6, 3)).unwrap();
    assert!(p.as_slice().iter().all(|&v| v == 2.5));
}
