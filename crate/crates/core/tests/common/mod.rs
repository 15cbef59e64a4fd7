//! Helpers shared by the integration tests: random data, hand-built designs
//! and brute-force oracles that do not reuse library solvers.
#![allow(dead_code)]

use flowcast::datastore::{LagColumn, LagDesign};
use flowcast::linalg::Matrix;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(rows, cols, normal_vec(rng, rows * cols)).unwrap()
}

/// A design with unit column map and no standardization, for feeding
/// hand-made data to the training code.
pub fn design_from(x: Matrix, y: Matrix) -> LagDesign {
    let rows = x.rows();
    let column_map = (0..x.cols())
        .map(|j| LagColumn {
            sensor: j,
            sensor_id: format!("X{j}"),
            lag: 0,
        })
        .collect();
    let target_ids = (0..y.cols()).map(|j| format!("Y{j}")).collect();
    LagDesign {
        k: 1,
        h: 1,
        target_sensors: (0..y.cols()).collect(),
        target_ids,
        column_map,
        standardization: None,
        row_days: vec![0; rows],
        row_origins: (0..rows).collect(),
        x,
        y,
    }
}

pub fn column_vector(v: &[f64]) -> Matrix {
    Matrix::from_vec(v.len(), 1, v.to_vec()).unwrap()
}

/// `1/(2T)‖y − Xw − b‖² + λ‖w‖₁`, written out independently of the library.
pub fn lasso_value(x: &Matrix, y: &[f64], w: &[f64], b: f64, lambda: f64) -> f64 {
    let t = y.len() as f64;
    let sse: f64 = (0..x.rows())
        .map(|i| {
            let fit: f64 = x.row(i).iter().zip(w).map(|(a, c)| a * c).sum::<f64>() + b;
            (y[i] - fit).powi(2)
        })
        .sum();
    sse / (2.0 * t) + lambda * w.iter().map(|v| v.abs()).sum::<f64>()
}

/// Exact lasso minimum by enumerating every sign pattern `s ∈ {−1,0,1}^p`.
/// For each pattern the restricted stationarity equation
/// `G_AA w_A = c_A − λ s_A` is solved and the true objective evaluated; the
/// optimum's own pattern is among the candidates, so the minimum is exact.
pub fn lasso_oracle(x: &Matrix, y: &[f64], lambda: f64) -> (f64, Vec<f64>, f64) {
    let (t, p) = x.shape();
    let tf = t as f64;
    let xm: Vec<f64> = (0..p).map(|j| (0..t).map(|i| x.get(i, j)).sum::<f64>() / tf).collect();
    let ym = y.iter().sum::<f64>() / tf;
    let xc = DMatrix::from_fn(t, p, |i, j| x.get(i, j) - xm[j]);
    let yc = DVector::from_iterator(t, y.iter().map(|v| v - ym));
    let g = xc.transpose() * &xc / tf;
    let c = xc.transpose() * &yc / tf;

    let mut best = (f64::INFINITY, vec![0.0; p], ym);
    let mut signs = vec![0i32; p];
    loop {
        let active: Vec<usize> = (0..p).filter(|&j| signs[j] != 0).collect();
        let mut w = vec![0.0; p];
        let solved = if active.is_empty() {
            true
        } else {
            let k = active.len();
            let ga = DMatrix::from_fn(k, k, |a, b| g[(active[a], active[b])]);
            let rhs = DVector::from_fn(k, |a, _| c[active[a]] - lambda * signs[active[a]] as f64);
            match ga.lu().solve(&rhs) {
                Some(sol) => {
                    for (a, &j) in active.iter().enumerate() {
                        w[j] = sol[a];
                    }
                    true
                }
                None => false,
            }
        };
        if solved {
            let b = ym - xm.iter().zip(&w).map(|(m, v)| m * v).sum::<f64>();
            let v = lasso_value(x, y, &w, b, lambda);
            if v < best.0 {
                best = (v, w, b);
            }
        }
        // next pattern in base 3
        let mut j = 0;
        loop {
            if j == p {
                return best;
            }
            // 0 → 1 → −1 → 0, carrying on the wrap back to 0
            signs[j] = match signs[j] {
                0 => 1,
                1 => -1,
                _ => 0,
            };
            if signs[j] != 0 {
                break;
            }
            j += 1;
        }
    }
}

/// Dense difference matrix of the given order, `(n − order) × n`.
pub fn dense_difference(order: usize, n: usize) -> DMatrix<f64> {
    let mut d = DMatrix::<f64>::identity(n, n);
    for _ in 0..order {
        let m = d.nrows() - 1;
        d = DMatrix::from_fn(m, n, |i, j| d[(i + 1, j)] - d[(i, j)]);
    }
    d
}

/// Trend-filter fit from the dual box QP
/// `min ½ uᵀ(DDᵀ)u − (Dy)ᵀu  s.t. |u_i| ≤ λ`, with `f = y − Dᵀu`.
/// A log-barrier interior-point method gets close, then the active set it
/// identifies is solved exactly and accepted if it satisfies the KKT conditions.
pub fn trend_filter_oracle(y: &[f64], lambda: f64, order: usize) -> Vec<f64> {
    let n = y.len();
    let d = dense_difference(order, n);
    let m = d.nrows();
    let yv = DVector::from_column_slice(y);
    let mm = &d * d.transpose();
    let b = &d * &yv;
    let fitted = |u: &DVector<f64>| -> Vec<f64> { (&yv - d.transpose() * u).iter().copied().collect() };
    if lambda == 0.0 {
        return y.to_vec();
    }
    let q = |u: &DVector<f64>| 0.5 * u.dot(&(&mm * u)) - b.dot(u);

    let mut u = DVector::<f64>::zeros(m);
    let mut t = 1.0 / (lambda * lambda).max(1e-12);
    while (m as f64) / t > 1e-10 * (1.0 + b.amax() * lambda) {
        for _ in 0..200 {
            let slack_hi = u.map(|v| lambda - v);
            let slack_lo = u.map(|v| lambda + v);
            let grad = (&mm * &u - &b) * t + slack_hi.map(|s| 1.0 / s) - slack_lo.map(|s| 1.0 / s);
            let mut hess = &mm * t;
            for i in 0..m {
                hess[(i, i)] += 1.0 / slack_hi[i].powi(2) + 1.0 / slack_lo[i].powi(2);
            }
            let step = match hess.clone().cholesky() {
                Some(ch) => -ch.solve(&grad),
                None => -hess.lu().solve(&grad).expect("barrier Hessian is positive definite"),
            };
            let decrement = -grad.dot(&step);
            if decrement / 2.0 < 1e-12 {
                break;
            }
            let barrier = |v: &DVector<f64>| -> f64 {
                if v.iter().any(|x| x.abs() >= lambda) {
                    return f64::INFINITY;
                }
                t * q(v) - v.iter().map(|x| (lambda - x).ln() + (lambda + x).ln()).sum::<f64>()
            };
            let f0 = barrier(&u);
            let mut s = 1.0;
            loop {
                let cand = &u + &step * s;
                if barrier(&cand) <= f0 - 0.25 * s * decrement {
                    u = cand;
                    break;
                }
                s *= 0.5;
                if s < 1e-14 {
                    break;
                }
            }
            if s < 1e-14 {
                break;
            }
        }
        t *= 8.0;
    }

    // polish: fix coordinates pinned at the bounds and solve for the rest
    let near = 1e-6 * lambda;
    let pinned: Vec<Option<f64>> = u
        .iter()
        .map(|&v| {
            if v > lambda - near {
                Some(lambda)
            } else if v < -lambda + near {
                Some(-lambda)
            } else {
                None
            }
        })
        .collect();
    let free: Vec<usize> = (0..m).filter(|&i| pinned[i].is_none()).collect();
    let mut exact = DVector::from_fn(m, |i, _| pinned[i].unwrap_or(0.0));
    if !free.is_empty() {
        let a = DMatrix::from_fn(free.len(), free.len(), |r, c| mm[(free[r], free[c])]);
        let fixed_part = &mm * &exact;
        let rhs = DVector::from_fn(free.len(), |r, _| b[free[r]] - fixed_part[free[r]]);
        if let Some(sol) = a.cholesky().map(|ch| ch.solve(&rhs)) {
            for (r, &i) in free.iter().enumerate() {
                exact[i] = sol[r];
            }
        } else {
            return fitted(&u);
        }
    }
    let g = &mm * &exact - &b;
    let scale = 1.0 + b.amax();
    let kkt = (0..m).all(|i| match pinned[i] {
        None => exact[i].abs() <= lambda,
        Some(v) if v > 0.0 => g[i] <= 1e-9 * scale,
        Some(_) => g[i] >= -1e-9 * scale,
    });
    if kkt {
        fitted(&exact)
    } else {
        fitted(&u)
    }
}

/// Mean squared residual of the least-squares fit with intercept.
pub fn ols_mse(x: &Matrix, y: &[f64]) -> f64 {
    let (t, p) = x.shape();
    let z = DMatrix::from_fn(t, p + 1, |i, j| if j == p { 1.0 } else { x.get(i, j) });
    let yv = DVector::from_column_slice(y);
    let beta = z.clone().svd(true, true).solve(&yv, 1e-12).unwrap();
    (&yv - z * beta).norm_squared() / t as f64
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
