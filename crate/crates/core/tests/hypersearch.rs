mod common;

use common::*;
use flowcast::deepnet::{Activation, LearningRate, NetConfig};
use flowcast::hypersearch::*;
use flowcast::linalg::Matrix;
use proptest::prelude::*;
use rand::Rng;

fn linear_split(seed: u64) -> (flowcast::datastore::LagDesign, flowcast::datastore::LagDesign, Matrix, Vec<f64>) {
    let mut r = rng(seed);
    let x = normal_matrix(&mut r, 400, 4);
    let y: Vec<f64> = (0..400)
        .map(|i| {
            let row = x.row(i);
            2.0 * row[0] - row[1] + 0.5 * row[3] + 10.0 + 0.5 * r.sample::<f64, _>(rand_distr::StandardNormal)
        })
        .collect();
    let train_idx: Vec<usize> = (0..300).collect();
    let valid_idx: Vec<usize> = (300..400).collect();
    let d = design_from(x.clone(), column_vector(&y));
    (d.select_rows(&train_idx), d.select_rows(&valid_idx), x, y)
}

/// Validation MSE of least squares fitted on the training rows.
fn ols_validation_mse(x: &Matrix, y: &[f64]) -> f64 {
    use nalgebra::{DMatrix, DVector};
    let z = |rows: std::ops::Range<usize>| DMatrix::from_fn(rows.len(), 5, |i, j| if j == 4 { 1.0 } else { x.get(rows.start + i, j) });
    let beta = z(0..300).svd(true, true).solve(&DVector::from_column_slice(&y[..300]), 1e-12).unwrap();
    let resid = DVector::from_column_slice(&y[300..]) - z(300..400) * beta;
    resid.norm_squared() / 100.0
}

fn small_space(budget: usize) -> SearchSpace {
    SearchSpace {
        activations: vec![Activation::Tanh],
        depth_range: (0, 1),
        width_range: (1, 8),
        lambda_range: (1e-6, 1e-4),
        budget,
        search_epochs: 40,
        base: NetConfig {
            epochs: 100,
            ..Default::default()
        },
        seed: 5,
    }
}

#[test]
fn search_gets_within_five_percent_of_least_squares() {
    let (train, valid, x, y) = linear_split(1);
    let out = random_search(&train, &valid, &small_space(6), 1).unwrap();
    let best = out.leaderboard[0].val_mse;
    let ols = ols_validation_mse(&x, &y);
    assert!(best <= ols * 1.05, "search {best} vs least squares {ols}");
}

#[test]
fn results_do_not_depend_on_worker_count() {
    let (train, valid, _, _) = linear_split(2);
    let space = SearchSpace {
        depth_range: (1, 3),
        activations: vec![Activation::Tanh, Activation::Relu],
        ..small_space(5)
    };
    let a = random_search(&train, &valid, &space, 1).unwrap();
    let b = random_search(&train, &valid, &space, 3).unwrap();
    let strip = |o: &SearchOutcome| -> Vec<(usize, NetConfig, f64, f64)> {
        o.leaderboard
            .iter()
            .map(|r| (r.index, r.config.clone(), r.val_mse, r.train_mse))
            .collect()
    };
    assert_eq!(strip(&a), strip(&b));
    assert_eq!(a.best.parameters(), b.best.parameters());
}

#[test]
fn leaderboard_is_sorted_and_headed_by_best() {
    let (train, valid, _, _) = linear_split(3);
    let out = random_search(&train, &valid, &small_space(4), 1).unwrap();
    assert_eq!(out.leaderboard.len(), 4);
    assert!(out.leaderboard.windows(2).all(|w| w[0].val_mse <= w[1].val_mse));
    let head = &out.leaderboard[0].config;
    assert_eq!(out.best.config.hidden_widths, head.hidden_widths);
    assert_eq!(out.best.config.penalty_weight, head.penalty_weight);
    assert_eq!(out.best.config.epochs, 100);

    let one = random_search(&train, &valid, &small_space(1), 1).unwrap();
    assert_eq!(one.leaderboard.len(), 1);
    assert_eq!(one.best.config.hidden_widths, one.leaderboard[0].config.hidden_widths);
}

#[test]
fn every_candidate_diverging_is_an_error() {
    let (train, valid, _, _) = linear_split(4);
    let mut space = small_space(3);
    space.base.learning_rate = LearningRate {
        initial: 1e4,
        decay: 0.0,
    };
    space.depth_range = (2, 2);
    match random_search(&train, &valid, &space, 1) {
        Err(e) => assert!(e.to_string().contains("every candidate failed"), "{e}"),
        Ok(o) => panic!("expected divergence, got {:?}", o.leaderboard),
    }
}

#[test]
fn leaderboard_csv_has_one_row_per_candidate() {
    let (train, valid, _, _) = linear_split(5);
    let out = random_search(&train, &valid, &small_space(3), 1).unwrap();
    let mut buf = Vec::new();
    write_leaderboard(&out.leaderboard, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.starts_with("rank,depth,widths,activation,lambda,val_mse,train_mse,seconds"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn samples_stay_inside_the_space(
        seed in any::<u64>(),
        d0 in 0usize..6, dspan in 0usize..6,
        w0 in 1usize..50, wspan in 0usize..100,
        l0 in -6.0f64..-1.0, lspan in 0.0f64..3.0,
        both in any::<bool>(),
    ) {
        let space = SearchSpace {
            activations: if both { vec![Activation::Tanh, Activation::Relu] } else { vec![Activation::Relu] },
            depth_range: (d0, d0 + dspan),
            width_range: (w0, w0 + wspan),
            lambda_range: (10f64.powf(l0), 10f64.powf(l0 + lspan)),
            ..Default::default()
        };
        let mut r = rng(seed);
        for _ in 0..100 {
            let c = sample_config(&space, &mut r);
            prop_assert!(space.contains(&c), "{:?} outside {:?}", c, space);
        }
    }
}

#[test]
fn penalty_draws_are_log_uniform() {
    let space = SearchSpace {
        lambda_range: (1e-4, 1e-2),
        ..Default::default()
    };
    let mut r = rng(6);
    let n = 20_000;
    let below = (0..n)
        .filter(|_| sample_config(&space, &mut r).penalty_weight < 1e-3)
        .count();
    // 1e-3 is the geometric midpoint
    assert!((below as f64 / n as f64 - 0.5).abs() < 0.02);
}
