//! Sparse linear vector autoregression `ŷ^{t+h|t} = A x^t + b`.
//!
//! Each row of `A` is an independent lasso fit
//!
//! ```text
//! minimize  1/(2T) ‖y − X w − b‖² + λ‖w‖₁
//! ```
//!
//! solved by cyclic coordinate descent with covariance updates. The objective
//! decouples over rows of `A`, so fitting targets one at a time solves the
//! joint ℓ1 problem exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datastore::{LagColumn, LagDesign, Standardization};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Coordinate-descent settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LassoOptions {
    /// Stop once no coefficient moves more than this in a full cycle.
    pub tol: f64,
    pub max_cycles: usize,
    pub record_trace: bool,
}

impl Default for LassoOptions {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            max_cycles: 10_000,
            record_trace: false,
        }
    }
}

/// Convergence record of one lasso fit.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LassoMeta {
    pub cycles: usize,
    /// Largest KKT violation at the returned point (a duality-gap proxy).
    pub kkt_violation: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub objective_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoFit {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub meta: LassoMeta,
}

/// Centred sufficient statistics of a design; shared across targets and λ values.
#[derive(Debug, Clone)]
pub struct Gram {
    t: usize,
    p: usize,
    x_mean: Vec<f64>,
    /// `X_cᵀ X_c / T`, row-major `p × p`.
    gram: Vec<f64>,
}

impl Gram {
    pub fn new(x: &Matrix) -> Result<Self> {
        let (t, p) = x.shape();
        if t == 0 || p == 0 {
            return Err(Error::Empty("lasso design has no rows or columns".into()));
        }
        let mut x_mean = vec![0.0; p];
        for i in 0..t {
            for (m, v) in x_mean.iter_mut().zip(x.row(i)) {
                *m += v;
            }
        }
        x_mean.iter_mut().for_each(|m| *m /= t as f64);
        let mut xc = x.as_slice().to_vec();
        for row in xc.chunks_mut(p) {
            for (v, m) in row.iter_mut().zip(&x_mean) {
                *v -= m;
            }
        }
        let mut gram = vec![0.0; p * p];
        // gram = xcᵀ xc / t
        unsafe {
            matrixmultiply::dgemm(
                p,
                t,
                p,
                1.0 / t as f64,
                xc.as_ptr(),
                1,
                p as isize,
                xc.as_ptr(),
                p as isize,
                1,
                0.0,
                gram.as_mut_ptr(),
                p as isize,
                1,
            );
        }
        Ok(Self { t, p, x_mean, gram })
    }

    /// `X_cᵀ (y − ȳ) / T` and `ȳ`.
    fn correlations(&self, x: &Matrix, y: &[f64]) -> (Vec<f64>, f64) {
        let ym = y.iter().sum::<f64>() / y.len() as f64;
        let mut c = vec![0.0; self.p];
        for (i, &yi) in y.iter().enumerate() {
            let r = yi - ym;
            for (cj, xj) in c.iter_mut().zip(x.row(i)) {
                *cj += xj * r;
            }
        }
        c.iter_mut().for_each(|v| *v /= self.t as f64);
        (c, ym)
    }
}

/// `(1/T) ‖Xᵀ(y − ȳ)‖∞`: the smallest λ with an all-zero lasso solution.
pub fn lambda_max(x: &Matrix, y: &[f64]) -> Result<f64> {
    if x.rows() == 0 || x.cols() == 0 {
        return Err(Error::Empty("lambda_max of an empty design".into()));
    }
    if y.len() != x.rows() {
        return Err(Error::Dimension(format!("{} targets for {} rows", y.len(), x.rows())));
    }
    let ym = y.iter().sum::<f64>() / y.len() as f64;
    let mut c = vec![0.0; x.cols()];
    for (i, &yi) in y.iter().enumerate() {
        for (cj, xj) in c.iter_mut().zip(x.row(i)) {
            *cj += xj * (yi - ym);
        }
    }
    Ok(c.iter().fold(0.0f64, |m, v| m.max(v.abs())) / x.rows() as f64)
}

/// `1/(2T)‖y − Xw − b‖² + λ‖w‖₁`.
pub fn lasso_objective(x: &Matrix, y: &[f64], w: &[f64], b: f64, lambda: f64) -> f64 {
    let t = x.rows() as f64;
    let rss: f64 = (0..x.rows())
        .map(|i| {
            let pred: f64 = x.row(i).iter().zip(w).map(|(a, c)| a * c).sum::<f64>() + b;
            (y[i] - pred).powi(2)
        })
        .sum();
    rss / (2.0 * t) + lambda * w.iter().map(|v| v.abs()).sum::<f64>()
}

fn soft(v: f64, k: f64) -> f64 {
    if v > k {
        v - k
    } else if v < -k {
        v + k
    } else {
        0.0
    }
}

/// Coordinate descent on precomputed statistics, optionally warm-started.
fn coordinate_descent(
    gram: &Gram,
    c: &[f64],
    y_var: f64,
    lambda: f64,
    opts: &LassoOptions,
    warm: Option<&[f64]>,
) -> Result<(Vec<f64>, LassoMeta)> {
    let p = gram.p;
    let g = &gram.gram;
    let mut w = warm.map_or_else(|| vec![0.0; p], <[f64]>::to_vec);
    // q = G w
    let mut q = vec![0.0; p];
    for j in 0..p {
        if w[j] != 0.0 {
            for k in 0..p {
                q[k] += g[k * p + j] * w[j];
            }
        }
    }
    // ½wᵀGw − cᵀw + ½ var(y) + λ‖w‖₁ equals the centred objective
    let objective = |w: &[f64], q: &[f64]| {
        let quad: f64 = w.iter().zip(q).map(|(a, b)| a * b).sum::<f64>() * 0.5;
        let lin: f64 = w.iter().zip(c).map(|(a, b)| a * b).sum();
        quad - lin + 0.5 * y_var + lambda * w.iter().map(|v| v.abs()).sum::<f64>()
    };
    let mut meta = LassoMeta::default();
    for cycle in 1..=opts.max_cycles {
        let mut max_delta = 0.0f64;
        for j in 0..p {
            let gjj = g[j * p + j];
            if gjj <= 1e-14 {
                continue;
            }
            let rho = c[j] - q[j] + gjj * w[j];
            let new = soft(rho, lambda) / gjj;
            let delta = new - w[j];
            if delta != 0.0 {
                w[j] = new;
                let col = &g[j * p..(j + 1) * p];
                for (qk, gk) in q.iter_mut().zip(col) {
                    *qk += gk * delta;
                }
                max_delta = max_delta.max(delta.abs());
            }
        }
        if opts.record_trace {
            meta.objective_trace.push(objective(&w, &q));
        }
        if max_delta < opts.tol {
            meta.cycles = cycle;
            meta.kkt_violation = kkt_violation(g, p, c, &w, &q, lambda);
            return Ok((w, meta));
        }
    }
    Err(Error::NonConvergence {
        iterations: opts.max_cycles,
        primal: kkt_violation(g, p, c, &w, &q, lambda),
        dual: 0.0,
    })
}

fn kkt_violation(g: &[f64], p: usize, c: &[f64], w: &[f64], q: &[f64], lambda: f64) -> f64 {
    (0..p)
        .filter(|&j| g[j * p + j] > 1e-14)
        .map(|j| {
            let corr = c[j] - q[j];
            if w[j] != 0.0 {
                (corr - lambda * w[j].signum()).abs()
            } else {
                (corr.abs() - lambda).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

/// Lasso with an unpenalised intercept.
pub fn lasso_fit(x: &Matrix, y: &[f64], lambda: f64, opts: &LassoOptions) -> Result<LassoFit> {
    let gram = Gram::new(x)?;
    lasso_fit_gram(&gram, x, y, lambda, opts, None)
}

/// Lasso reusing a precomputed [`Gram`] of `x`.
pub fn lasso_fit_gram(
    gram: &Gram,
    x: &Matrix,
    y: &[f64],
    lambda: f64,
    opts: &LassoOptions,
    warm: Option<&[f64]>,
) -> Result<LassoFit> {
    if y.len() != x.rows() {
        return Err(Error::Dimension(format!("{} targets for {} rows", y.len(), x.rows())));
    }
    if !(lambda >= 0.0) {
        return Err(Error::Param(format!("lasso lambda {lambda} must be ≥ 0")));
    }
    if y.iter().any(|v| !v.is_finite()) || x.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::Param("lasso inputs must be finite".into()));
    }
    let (c, ym) = gram.correlations(x, y);
    let y_var = y.iter().map(|v| (v - ym) * (v - ym)).sum::<f64>() / y.len() as f64;
    let (w, meta) = coordinate_descent(gram, &c, y_var, lambda, opts, warm)?;
    let intercept = ym - w.iter().zip(&gram.x_mean).map(|(a, b)| a * b).sum::<f64>();
    Ok(LassoFit {
        coefficients: w,
        intercept,
        meta,
    })
}

/// Fitted sparse VAR. `a` and `intercept` act on raw (unstandardized) lag vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseVarModel {
    pub a: Matrix,
    pub intercept: Vec<f64>,
    /// Coefficients on the standardized scale the lasso was solved on.
    pub a_standardized: Matrix,
    pub intercept_standardized: Vec<f64>,
    pub standardization: Option<Standardization>,
    pub lambda: f64,
    pub column_map: Vec<LagColumn>,
    pub target_ids: Vec<String>,
    pub residual_variance: Vec<f64>,
    pub fit_meta: Vec<LassoMeta>,
}

impl SparseVarModel {
    pub fn support_mask(&self) -> Vec<Vec<bool>> {
        (0..self.a.rows())
            .map(|i| self.a.row(i).iter().map(|v| v.abs() > 0.0).collect())
            .collect()
    }

    pub fn target_index(&self, target: &str) -> Result<usize> {
        self.target_ids
            .iter()
            .position(|t| t == target)
            .ok_or_else(|| Error::UnknownSensor(target.to_string()))
    }

    /// Predict from a standardized lag vector.
    pub fn forecast_standardized(&self, x_std: &[f64]) -> Result<Vec<f64>> {
        affine(&self.a_standardized, &self.intercept_standardized, x_std)
    }

    /// Predictions for every row of a design (raw or standardized, read from
    /// the design itself).
    pub fn predict_design(&self, design: &LagDesign) -> Result<Matrix> {
        let x = design.raw_x();
        let mut out = Matrix::zeros(x.rows(), self.a.rows());
        for i in 0..x.rows() {
            let p = var_forecast(self, x.row(i))?;
            out.row_mut(i).copy_from_slice(&p);
        }
        Ok(out)
    }
}

fn affine(a: &Matrix, b: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != a.cols() {
        return Err(Error::Dimension(format!(
            "lag vector has {} entries, model expects {}",
            x.len(),
            a.cols()
        )));
    }
    Ok((0..a.rows())
        .map(|i| a.row(i).iter().zip(x).map(|(c, v)| c * v).sum::<f64>() + b[i])
        .collect())
}

/// Fit one lasso per target of a lag design.
pub fn fit_sparse_var(design: &LagDesign, lambda: f64) -> Result<SparseVarModel> {
    fit_sparse_var_with(design, lambda, &LassoOptions::default())
}

pub fn fit_sparse_var_with(
    design: &LagDesign,
    lambda: f64,
    opts: &LassoOptions,
) -> Result<SparseVarModel> {
    fit_sparse_var_warm(design, lambda, opts, None)
}

/// As [`fit_sparse_var_with`], starting coordinate descent for target `j` from
/// `warm[j]` (standardized scale) when given.
pub fn fit_sparse_var_warm(
    design: &LagDesign,
    lambda: f64,
    opts: &LassoOptions,
    warm: Option<&[Vec<f64>]>,
) -> Result<SparseVarModel> {
    if design.rows() < 2 {
        return Err(Error::Param("sparse VAR needs at least two rows".into()));
    }
    let gram = Gram::new(&design.x)?;
    let n_t = design.y.cols();
    let p = design.x.cols();
    let mut a_std = Matrix::zeros(n_t, p);
    let mut b_std = vec![0.0; n_t];
    let mut metas = Vec::with_capacity(n_t);
    let mut resid_var = Vec::with_capacity(n_t);
    for j in 0..n_t {
        let y = design.target(j);
        let start = warm.and_then(|w| w.get(j)).filter(|w| w.len() == p);
        let fit = lasso_fit_gram(&gram, &design.x, &y, lambda, opts, start.map(Vec::as_slice))?;
        let mse = (0..design.rows())
            .map(|i| {
                let pred: f64 = design
                    .x
                    .row(i)
                    .iter()
                    .zip(&fit.coefficients)
                    .map(|(a, c)| a * c)
                    .sum::<f64>()
                    + fit.intercept;
                (y[i] - pred).powi(2)
            })
            .sum::<f64>()
            / design.rows() as f64;
        a_std.row_mut(j).copy_from_slice(&fit.coefficients);
        b_std[j] = fit.intercept;
        metas.push(fit.meta);
        resid_var.push(mse);
    }
    let (a, intercept) = match &design.standardization {
        Some(st) => destandardize(&a_std, &b_std, st),
        None => (a_std.clone(), b_std.clone()),
    };
    Ok(SparseVarModel {
        a,
        intercept,
        a_standardized: a_std,
        intercept_standardized: b_std,
        standardization: design.standardization.clone(),
        lambda,
        column_map: design.column_map.clone(),
        target_ids: design.target_ids.clone(),
        residual_variance: resid_var,
        fit_meta: metas,
    })
}

/// Map coefficients on `(x − center)/scale` back to raw `x`.
fn destandardize(a_std: &Matrix, b_std: &[f64], st: &Standardization) -> (Matrix, Vec<f64>) {
    let mut a = a_std.clone();
    let mut b = b_std.to_vec();
    for i in 0..a.rows() {
        let row = a.row_mut(i);
        for j in 0..row.len() {
            let w = row[j];
            row[j] = w / st.scale[j];
            b[i] -= w * st.center[j] / st.scale[j];
        }
    }
    (a, b)
}

/// One selected predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedPredictor {
    pub column: usize,
    pub sensor_id: String,
    pub lag: usize,
    pub coefficient: f64,
}

/// Columns of the target's row with `|A| > threshold`, by descending magnitude.
pub fn support(model: &SparseVarModel, target: &str, threshold: f64) -> Result<Vec<SelectedPredictor>> {
    let i = model.target_index(target)?;
    let mut out: Vec<SelectedPredictor> = model
        .a
        .row(i)
        .iter()
        .enumerate()
        .filter(|(_, v)| v.abs() > threshold)
        .map(|(j, &v)| SelectedPredictor {
            column: j,
            sensor_id: model.column_map[j].sensor_id.clone(),
            lag: model.column_map[j].lag,
            coefficient: v,
        })
        .collect();
    out.sort_by(|a, b| {
        b.coefficient
            .abs()
            .total_cmp(&a.coefficient.abs())
            .then(a.column.cmp(&b.column))
    });
    Ok(out)
}

/// `A x_t + b` for a raw lag vector ordered like `column_map`.
pub fn var_forecast(model: &SparseVarModel, x_t: &[f64]) -> Result<Vec<f64>> {
    affine(&model.a, &model.intercept, x_t)
}

/// Validation curve of a λ grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaSelection {
    pub lambda: f64,
    /// Grid points actually fitted; the path stops early if a fit fails to converge.
    pub grid: Vec<f64>,
    pub validation_mse: Vec<f64>,
    /// Standardized coefficients at the chosen λ, usable as a warm start.
    pub coefficients: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stopped_early: Option<String>,
}

/// `count` values log-spaced from `λ_max` down to `λ_max · min_ratio`.
pub fn lambda_grid(lmax: f64, count: usize, min_ratio: f64) -> Vec<f64> {
    if count <= 1 {
        return vec![lmax];
    }
    (0..count)
        .map(|i| lmax * min_ratio.powf(i as f64 / (count - 1) as f64))
        .collect()
}

/// Pick λ for one target by validation MSE along a warm-started path from
/// `λ_max` downwards. `valid` must share the training design's standardization.
/// If coordinate descent fails to converge at some grid point the path ends
/// there and the best λ seen so far is kept.
pub fn select_lambda(
    train: &LagDesign,
    valid: &LagDesign,
    target: usize,
    count: usize,
    min_ratio: f64,
) -> Result<LambdaSelection> {
    let y = train.target(target);
    let gram = Gram::new(&train.x)?;
    let lmax = lambda_max(&train.x, &y)?;
    let full_grid = lambda_grid(lmax, count, min_ratio);
    let yv = valid.target(target);
    let mut warm: Option<Vec<f64>> = None;
    let mut grid = Vec::with_capacity(full_grid.len());
    let mut mses = Vec::with_capacity(full_grid.len());
    let mut best: Option<(f64, f64, Vec<f64>)> = None;
    let mut stopped_early = None;
    for &lam in &full_grid {
        let fit = match lasso_fit_gram(&gram, &train.x, &y, lam, &LassoOptions::default(), warm.as_deref()) {
            Ok(f) => f,
            Err(e @ Error::NonConvergence { .. }) if best.is_some() => {
                stopped_early = Some(format!("at lambda {lam:e}: {e}"));
                break;
            }
            Err(e) => return Err(e),
        };
        let mse = (0..valid.rows())
            .map(|i| {
                let p: f64 = valid
                    .x
                    .row(i)
                    .iter()
                    .zip(&fit.coefficients)
                    .map(|(a, c)| a * c)
                    .sum::<f64>()
                    + fit.intercept;
                (yv[i] - p).powi(2)
            })
            .sum::<f64>()
            / valid.rows() as f64;
        grid.push(lam);
        mses.push(mse);
        if best.as_ref().is_none_or(|(m, _, _)| mse < *m) {
            best = Some((mse, lam, fit.coefficients.clone()));
        }
        warm = Some(fit.coefficients);
    }
    let (_, lambda, coefficients) = best.expect("the first grid point always fits");
    Ok(LambdaSelection {
        lambda,
        grid,
        validation_mse: mses,
        coefficients,
        stopped_early,
    })
}

const MODEL_VERSION: u32 = 1;

/// On-disk form of a [`SparseVarModel`].
#[derive(Debug, Clone, Serialize, Deserialize)]
struct SparseVarFile {
    version: u32,
    lambda: f64,
    target_ids: Vec<String>,
    column_map: Vec<LagColumn>,
    /// Dense `A` in raw units, one inner vector per target (zeros included).
    a: Vec<Vec<f64>>,
    intercepts: Vec<f64>,
    residual_variances: Vec<f64>,
    #[serde(default)]
    standardization: Option<Standardization>,
    #[serde(default)]
    a_standardized: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    intercepts_standardized: Option<Vec<f64>>,
    #[serde(default)]
    fit_meta: Vec<LassoMeta>,
}

impl SparseVarModel {
    pub fn to_json(&self) -> Result<String> {
        let rows = |m: &Matrix| (0..m.rows()).map(|i| m.row(i).to_vec()).collect::<Vec<_>>();
        let file = SparseVarFile {
            version: MODEL_VERSION,
            lambda: self.lambda,
            target_ids: self.target_ids.clone(),
            column_map: self.column_map.clone(),
            a: rows(&self.a),
            intercepts: self.intercept.clone(),
            residual_variances: self.residual_variance.clone(),
            standardization: self.standardization.clone(),
            a_standardized: Some(rows(&self.a_standardized)),
            intercepts_standardized: Some(self.intercept_standardized.clone()),
            fit_meta: self.fit_meta.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: SparseVarFile = serde_json::from_str(s)?;
        if f.version != MODEL_VERSION {
            return Err(Error::Param(format!("unsupported model version {}", f.version)));
        }
        let a = Matrix::from_rows(&f.a)?;
        if a.cols() != f.column_map.len() || a.rows() != f.target_ids.len() {
            return Err(Error::Dimension("coefficient matrix does not match column map".into()));
        }
        let a_standardized = match f.a_standardized {
            Some(r) => Matrix::from_rows(&r)?,
            None => a.clone(),
        };
        Ok(Self {
            a,
            intercept_standardized: f.intercepts_standardized.unwrap_or_else(|| f.intercepts.clone()),
            intercept: f.intercepts,
            a_standardized,
            standardization: f.standardization,
            lambda: f.lambda,
            column_map: f.column_map,
            target_ids: f.target_ids,
            residual_variance: f.residual_variances,
            fit_meta: f.fit_meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}
