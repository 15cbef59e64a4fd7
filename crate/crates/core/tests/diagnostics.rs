mod common;

use common::*;
use flowcast::diagnostics::dist::{chi2_sf, f_sf, kolmogorov_pvalue, lilliefors_pvalue, mackinnon_pvalue};
use flowcast::diagnostics::*;
use flowcast::linalg::Matrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const MC: usize = 1_000_000;

fn z(r: &mut ChaCha8Rng) -> f64 {
    r.sample(StandardNormal)
}

/// Statistics at the given upper-tail probabilities of a Monte Carlo sample.
fn upper_quantiles(mut sample: Vec<f64>, probs: &[f64]) -> Vec<f64> {
    sample.sort_by(f64::total_cmp);
    let n = sample.len();
    probs
        .iter()
        .map(|p| sample[((1.0 - p) * n as f64) as usize])
        .collect()
}

const TAILS: [f64; 6] = [0.5, 0.2, 0.1, 0.05, 0.025, 0.01];

#[test]
fn chi_square_tail_matches_simulation() {
    let mut r = rng(1);
    let k = 5;
    let sample: Vec<f64> = (0..MC).map(|_| (0..k).map(|_| z(&mut r).powi(2)).sum()).collect();
    for (p, q) in TAILS.iter().zip(upper_quantiles(sample, &TAILS)) {
        let got = chi2_sf(q, k as f64);
        assert!((got - p).abs() < 0.02, "tail {p}: chi2_sf({q}) = {got}");
    }
}

#[test]
fn f_tail_matches_simulation() {
    let mut r = rng(2);
    let (d1, d2) = (3usize, 30usize);
    let sample: Vec<f64> = (0..MC)
        .map(|_| {
            let a: f64 = (0..d1).map(|_| z(&mut r).powi(2)).sum::<f64>() / d1 as f64;
            let b: f64 = (0..d2).map(|_| z(&mut r).powi(2)).sum::<f64>() / d2 as f64;
            a / b
        })
        .collect();
    for (p, q) in TAILS.iter().zip(upper_quantiles(sample, &TAILS)) {
        let got = f_sf(q, d1 as f64, d2 as f64);
        assert!((got - p).abs() < 0.02, "tail {p}: f_sf({q}) = {got}");
    }
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

/// KS distance of a sorted sample from a CDF.
fn ks_distance(sorted: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = cdf(v);
            ((i + 1) as f64 / n - f).max(f - i as f64 / n)
        })
        .fold(0.0, f64::max)
}

#[test]
fn lilliefors_tail_matches_simulation() {
    let mut r = rng(3);
    let n = 100;
    let mut buf = vec![0.0; n];
    let sample: Vec<f64> = (0..MC)
        .map(|_| {
            buf.iter_mut().for_each(|v| *v = z(&mut r));
            let m = buf.iter().sum::<f64>() / n as f64;
            let sd = (buf.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64).sqrt();
            buf.iter_mut().for_each(|v| *v = (*v - m) / sd);
            buf.sort_by(f64::total_cmp);
            ks_distance(&buf, normal_cdf)
        })
        .collect();
    for (p, q) in TAILS.iter().zip(upper_quantiles(sample, &TAILS)) {
        let got = lilliefors_pvalue(q, n);
        assert!((got - p).abs() < 0.02, "tail {p}: lilliefors({q}) = {got}");
    }
}

#[test]
fn kolmogorov_tail_matches_simulation() {
    let mut r = rng(4);
    let n = 200;
    let mut buf = vec![0.0; n];
    let sample: Vec<f64> = (0..MC)
        .map(|_| {
            buf.iter_mut().for_each(|v| *v = r.random::<f64>());
            buf.sort_by(f64::total_cmp);
            ks_distance(&buf, |u| u)
        })
        .collect();
    for (p, q) in TAILS.iter().zip(upper_quantiles(sample, &TAILS)) {
        let got = kolmogorov_pvalue(q, n);
        assert!((got - p).abs() < 0.02, "tail {p}: kolmogorov({q}) = {got}");
    }
}

/// Dickey-Fuller t-ratio without augmentation, from the normal equations.
fn df_tau(y: &[f64], trend: bool) -> f64 {
    use nalgebra::{DMatrix, DVector};
    let rows = y.len() - 1;
    let k = if trend { 3 } else { 2 };
    let zm = DMatrix::from_fn(rows, k, |i, j| match (j, trend) {
        (0, _) => 1.0,
        (1, true) => (i + 1) as f64,
        _ => y[i],
    });
    let dy = DVector::from_fn(rows, |i, _| y[i + 1] - y[i]);
    let inv = (zm.transpose() * &zm).try_inverse().unwrap();
    let beta = &inv * zm.transpose() * &dy;
    let resid = dy - &zm * &beta;
    let s2 = resid.norm_squared() / (rows - k) as f64;
    beta[k - 1] / (s2 * inv[(k - 1, k - 1)]).sqrt()
}

#[test]
fn dickey_fuller_surface_matches_simulation() {
    let n = 250;
    for (spec, trend, seed) in [(AdfSpec::Constant, false, 5), (AdfSpec::ConstantTrend, true, 6)] {
        let mut r = rng(seed);
        let mut y = vec![0.0; n];
        let mut sample = Vec::with_capacity(MC);
        for rep in 0..MC {
            for t in 1..n {
                y[t] = y[t - 1] + z(&mut r);
            }
            let tau = df_tau(&y, trend);
            if rep < 3 {
                let lib = adf(&y, 0, spec).unwrap().statistic;
                assert!((lib - tau).abs() < 1e-9 * tau.abs().max(1.0), "{lib} vs {tau}");
            }
            sample.push(tau);
        }
        // lower tail: P(τ ≤ q)
        sample.sort_by(f64::total_cmp);
        for p in [0.01, 0.025, 0.05, 0.1, 0.2, 0.5, 0.8] {
            let q = sample[(p * MC as f64) as usize];
            let got = mackinnon_pvalue(q, spec);
            assert!((got - p).abs() < 0.02, "{spec:?} at {p}: p({q}) = {got}");
        }
    }
}

#[test]
fn acf_white_noise_and_ar1() {
    let mut r = rng(7);
    let n = 5000;
    let wn: Vec<f64> = (0..n).map(|_| z(&mut r)).collect();
    let a = acf(&wn, 20).unwrap();
    assert!((a[0] - 1.0).abs() < 1e-12);
    let band = 3.0 / (n as f64).sqrt();
    assert!(a[1..].iter().filter(|v| v.abs() < band).count() >= 19);

    let mut ar = vec![0.0; n];
    for t in 1..n {
        ar[t] = 0.9 * ar[t - 1] + z(&mut r);
    }
    let a = acf(&ar, 3).unwrap();
    assert!((0.85..=0.95).contains(&a[1]), "ρ̂₁ = {}", a[1]);
    assert!(acf(&[2.0; 10], 2).is_err());
}

fn ar1(r: &mut ChaCha8Rng, n: usize, phi: f64) -> Vec<f64> {
    let mut out = vec![0.0; n];
    out[0] = z(r) / (1.0 - phi * phi).sqrt();
    for t in 1..n {
        out[t] = phi * out[t - 1] + z(r);
    }
    out
}

fn one_regressor(r: &mut ChaCha8Rng, n: usize) -> Matrix {
    normal_matrix(r, n, 1)
}

#[test]
fn designated_alternatives_are_detected() {
    let mut r = rng(8);
    let n = 1000;
    let ar = ar1(&mut r, n, 0.9);
    for v in [Portmanteau::BoxPierce, Portmanteau::LjungBox] {
        assert!(box_pierce(&ar, 24, v).unwrap().p_value < 0.001);
    }
    let x = one_regressor(&mut r, n);
    let ar8 = ar1(&mut r, n, 0.8);
    assert!(breusch_godfrey(&ar8, &x, 4).unwrap().p_value < 0.01);

    let het: Vec<f64> = (0..n).map(|i| z(&mut r) * (0.5 * x.get(i, 0)).exp()).collect();
    assert!(breusch_pagan(&het, &x).unwrap().p_value < 0.01);

    let quad: Vec<f64> = (0..n).map(|i| x.get(i, 0).powi(2) - 1.0 + 0.5 * z(&mut r)).collect();
    assert!(lee_white_granger(&quad, &x, 10, 3).unwrap().p_value < 0.01);

    let unif: Vec<f64> = (0..2000).map(|_| r.random::<f64>()).collect();
    assert!(ks_normality(&unif).unwrap().p_value < 0.01);
}

#[test]
fn adf_power_and_sign() {
    let mut r = rng(9);
    let reps = 200;
    let rejected = (0..reps)
        .filter(|_| adf(&ar1(&mut r, 500, 0.5), 0, AdfSpec::Constant).unwrap().p_value < 0.05)
        .count();
    assert!(rejected as f64 >= 0.9 * reps as f64, "{rejected}/{reps}");
    let negative = (0..reps)
        .filter(|_| {
            let wn: Vec<f64> = (0..200).map(|_| z(&mut r)).collect();
            adf(&wn, 0, AdfSpec::Constant).unwrap().statistic < 0.0
        })
        .count();
    assert!(negative as f64 >= 0.99 * reps as f64);
    assert!(adf(&[1.0, 2.0, 3.0], 2, AdfSpec::Constant).is_err());
}

#[test]
fn ks_accepts_normal_samples() {
    let mut r = rng(10);
    let reps = 200;
    let mut accepted = 0;
    for _ in 0..reps {
        let s: Vec<f64> = (0..2000).map(|_| 3.0 + 2.0 * z(&mut r)).collect();
        let t = ks_normality(&s).unwrap();
        assert!((0.0..=1.0).contains(&t.statistic));
        if t.p_value > 0.05 {
            accepted += 1;
        }
    }
    assert!(accepted as f64 >= 0.9 * reps as f64, "{accepted}/{reps}");
}

#[test]
fn results_are_well_formed_and_deterministic() {
    let mut r = rng(11);
    let n = 300;
    let resid: Vec<f64> = (0..n).map(|_| z(&mut r)).collect();
    let x = one_regressor(&mut r, n);
    let a = lee_white_granger(&resid, &x, 10, 42).unwrap();
    let b = lee_white_granger(&resid, &x, 10, 42).unwrap();
    assert_eq!(a.statistic, b.statistic);
    for t in [
        box_pierce(&resid, 24, Portmanteau::LjungBox).unwrap(),
        breusch_godfrey(&resid, &x, 4).unwrap(),
        breusch_pagan(&resid, &x).unwrap(),
        a,
        adf(&resid, schwert_lags(n), AdfSpec::Constant).unwrap(),
        ks_normality(&resid).unwrap(),
    ] {
        assert!(t.statistic.is_finite(), "{}", t.name);
        assert!((0.0..=1.0).contains(&t.p_value), "{}", t.name);
    }
    let y: Vec<f64> = (0..n).map(|i| 50.0 + resid[i]).collect();
    let yhat = vec![50.0; n];
    let opts = DiagnosticsOptions::default();
    let one = diagnostics_report(&y, &yhat, Some(&x), &opts).unwrap();
    let two = diagnostics_report(&y, &yhat, Some(&x), &opts).unwrap();
    assert_eq!(serde_json::to_string(&one).unwrap(), serde_json::to_string(&two).unwrap());
    assert!((one.acf[0] - 1.0).abs() < 1e-12);
}
