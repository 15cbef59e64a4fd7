//! Per-sensor denoising: exponential smoothing, median filtering and ℓ1 trend
//! filtering.
//!
//! Trend filtering solves
//!
//! ```text
//! minimize  ½‖y − f‖² + λ‖D f‖₁
//! ```
//!
//! where `D` is the first (order 1, piecewise-constant fits) or second (order 2,
//! piecewise-linear fits) difference operator. The solver is ADMM on the split
//! `D f = z`; the `f`-update is a banded SPD solve and the `z`-update a
//! soft-threshold, so `z` is exactly sparse and its support gives the kinks.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datastore::{SpeedField, TIMESTAMP_FORMAT};
use crate::error::{Error, Result};
use crate::linalg::{
    apply_difference, apply_difference_transpose, gram_ddt_entry, gram_dtd_entry, BandedCholesky,
};

/// Exponentially weighted moving average, seeded with the first value.
pub fn ewma(series: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Param(format!("ewma alpha {alpha} outside (0, 1]")));
    }
    let first = *series
        .first()
        .ok_or_else(|| Error::Param("ewma of an empty series".into()))?;
    let mut out = Vec::with_capacity(series.len());
    let mut prev = first;
    for &x in series {
        prev = alpha * x + (1.0 - alpha) * prev;
        out.push(prev);
    }
    out[0] = first;
    Ok(out)
}

/// Running median.
///
/// Odd windows are centred; even windows are trailing (the current value and
/// the `window − 1` before it), which keeps the filter causal. Windows are
/// truncated at the series ends and the lower median is taken when the window
/// holds an even number of values, so every output is an input value.
pub fn median_filter(series: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 {
        return Err(Error::Param("median window must be at least 1".into()));
    }
    if series.is_empty() {
        return Err(Error::Param("median of an empty series".into()));
    }
    let n = series.len();
    let mut buf = Vec::with_capacity(window);
    Ok((0..n)
        .map(|t| {
            let (lo, hi) = if window % 2 == 1 {
                let half = window / 2;
                (t.saturating_sub(half), (t + half).min(n - 1))
            } else {
                (t.saturating_sub(window - 1), t)
            };
            buf.clear();
            buf.extend_from_slice(&series[lo..=hi]);
            buf.sort_by(f64::total_cmp);
            buf[(buf.len() - 1) / 2]
        })
        .collect())
}

/// ADMM settings for [`trend_filter_with`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmmOptions {
    /// Initial penalty; `None` uses λ.
    pub rho: Option<f64>,
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_iter: usize,
    /// Residual-balancing ratio that triggers a ρ update.
    pub balance_ratio: f64,
    /// Multiplicative ρ update.
    pub rho_factor: f64,
    pub record_trace: bool,
}

impl Default for AdmmOptions {
    fn default() -> Self {
        Self {
            rho: None,
            abs_tol: 1e-8,
            rel_tol: 1e-6,
            max_iter: 50_000,
            balance_ratio: 10.0,
            rho_factor: 2.0,
            record_trace: false,
        }
    }
}

/// Result of [`trend_filter`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendFilterFit {
    pub input: Vec<f64>,
    pub fitted: Vec<f64>,
    pub order: usize,
    pub lambda: f64,
    pub objective: f64,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    /// The sparse split variable `z ≈ D f`.
    pub differences: Vec<f64>,
    /// Dual variable `ν` with `y − f ≈ Dᵀν` and `‖ν‖∞ ≤ λ`.
    pub dual: Vec<f64>,
    pub kinks: Vec<usize>,
    /// Lowest objective reached by the iterates up to each iteration (only
    /// when requested). Individual ADMM iterates are not monotone.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub objective_trace: Vec<f64>,
}

impl TrendFilterFit {
    /// Kinks at the default threshold `1e-8 · max |z|`.
    pub fn default_kinks(&self) -> Vec<usize> {
        let zmax = self.differences.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        kinks(self, 1e-8 * zmax)
    }

    /// Piecewise segments `[start, end]` between consecutive kinks, with the
    /// least-squares intercept and slope of the fitted values on each.
    pub fn segments(&self) -> Vec<(usize, usize, f64, f64)> {
        let n = self.fitted.len();
        let mut bounds = vec![0];
        bounds.extend(self.kinks.iter().copied().filter(|&k| k > 0 && k < n));
        bounds.push(n);
        bounds
            .windows(2)
            .filter(|w| w[1] > w[0])
            .map(|w| {
                let (a, b) = (w[0], w[1]);
                let ts: Vec<f64> = (a..b).map(|t| t as f64).collect();
                let ys = &self.fitted[a..b];
                let tm = ts.iter().sum::<f64>() / ts.len() as f64;
                let ym = ys.iter().sum::<f64>() / ys.len() as f64;
                let sxx: f64 = ts.iter().map(|t| (t - tm) * (t - tm)).sum();
                let sxy: f64 = ts.iter().zip(ys).map(|(t, y)| (t - tm) * (y - ym)).sum();
                let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
                (a, b - 1, ym - slope * tm, slope)
            })
            .collect()
    }
}

/// `½‖y − f‖² + λ‖D f‖₁`.
pub fn trend_objective(y: &[f64], f: &[f64], lambda: f64, order: usize) -> f64 {
    let fit: f64 = y.iter().zip(f).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() * 0.5;
    let pen: f64 = apply_difference(order, f).iter().map(|v| v.abs()).sum();
    fit + lambda * pen
}

fn check_order(order: usize, n: usize) -> Result<()> {
    if !(order == 1 || order == 2) {
        return Err(Error::Param(format!("trend filter order {order} is not 1 or 2")));
    }
    if n < order + 1 {
        return Err(Error::Param(format!(
            "series of length {n} is too short for order {order}"
        )));
    }
    Ok(())
}

/// `(D Dᵀ)⁻¹ D y`, the dual solution at which every difference is fused.
fn fused_dual(y: &[f64], order: usize) -> Result<Vec<f64>> {
    let m = y.len() - order;
    let chol = BandedCholesky::factor(m, order, |_, d| gram_ddt_entry(order, d))?;
    let mut w = apply_difference(order, y);
    chol.solve_in_place(&mut w);
    Ok(w)
}

/// Smallest λ at which the fit has no kinks: `‖(D Dᵀ)⁻¹ D y‖∞`.
pub fn trend_lambda_max(y: &[f64], order: usize) -> Result<f64> {
    check_order(order, y.len())?;
    Ok(fused_dual(y, order)?
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs())))
}

pub fn trend_filter(series: &[f64], lambda: f64, order: usize) -> Result<TrendFilterFit> {
    trend_filter_with(series, lambda, order, &AdmmOptions::default())
}

pub fn trend_filter_with(
    y: &[f64],
    lambda: f64,
    order: usize,
    opts: &AdmmOptions,
) -> Result<TrendFilterFit> {
    let n = y.len();
    check_order(order, n)?;
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Param(format!("lambda {lambda} must be finite and ≥ 0")));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Param("trend filter input must be finite".into()));
    }
    let m = n - order;
    let finish = |fitted: Vec<f64>, z: Vec<f64>, dual: Vec<f64>, it, r, s, trace| {
        let mut fit = TrendFilterFit {
            input: y.to_vec(),
            objective: trend_objective(y, &fitted, lambda, order),
            fitted,
            order,
            lambda,
            iterations: it,
            primal_residual: r,
            dual_residual: s,
            differences: z,
            dual,
            kinks: Vec::new(),
            objective_trace: trace,
        };
        fit.kinks = fit.default_kinks();
        fit
    };

    if lambda == 0.0 {
        let z = apply_difference(order, y);
        return Ok(finish(y.to_vec(), z, vec![0.0; m], 0, 0.0, 0.0, Vec::new()));
    }
    // beyond λ_max the minimiser is the projection onto the null space of D
    let w = fused_dual(y, order)?;
    let lmax = w.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if lambda >= lmax {
        let dtw = apply_difference_transpose(order, &w, n);
        let fitted: Vec<f64> = y.iter().zip(&dtw).map(|(a, b)| a - b).collect();
        return Ok(finish(fitted, vec![0.0; m], w, 0, 0.0, 0.0, Vec::new()));
    }

    let mut rho = opts.rho.unwrap_or(lambda).max(1e-12);
    let factor = |rho: f64| {
        BandedCholesky::factor(n, order, |i, d| {
            rho * gram_dtd_entry(order, n, i, d) + if d == 0 { 1.0 } else { 0.0 }
        })
    };
    let mut chol = factor(rho)?;
    let mut f = y.to_vec();
    let mut z = apply_difference(order, &f);
    let mut u = vec![0.0; m];
    let mut trace = Vec::new();
    let (mut r_norm, mut s_norm) = (f64::INFINITY, f64::INFINITY);
    let sqrt_m = (m as f64).sqrt();
    let sqrt_n = (n as f64).sqrt();
    let mut rhs_buf = vec![0.0; m];
    let mut pattern: Vec<i8> = z.iter().map(|v| sign_of(*v)).collect();
    let mut stable = 0usize;

    for it in 1..=opts.max_iter {
        // f-update: (I + ρ DᵀD) f = y + ρ Dᵀ(z − u)
        for ((b, zi), ui) in rhs_buf.iter_mut().zip(&z).zip(&u) {
            *b = zi - ui;
        }
        let dt = apply_difference_transpose(order, &rhs_buf, n);
        for ((fi, yi), di) in f.iter_mut().zip(y).zip(&dt) {
            *fi = yi + rho * di;
        }
        chol.solve_in_place(&mut f);
        let df = apply_difference(order, &f);

        // z-update: soft threshold at λ/ρ
        let kappa = lambda / rho;
        let mut dz_sq = Vec::with_capacity(m);
        for i in 0..m {
            let v = df[i] + u[i];
            let zn = if v > kappa {
                v - kappa
            } else if v < -kappa {
                v + kappa
            } else {
                0.0
            };
            dz_sq.push(zn - z[i]);
            z[i] = zn;
        }
        for i in 0..m {
            u[i] += df[i] - z[i];
        }

        // once the sign pattern of z has settled, try to finish exactly on it
        let same = z.iter().zip(&pattern).all(|(v, p)| sign_of(*v) == *p);
        if same {
            stable += 1;
        } else {
            pattern.iter_mut().zip(&z).for_each(|(p, v)| *p = sign_of(*v));
            stable = 0;
        }
        if stable % 200 == 10 {
            if let Some((fitted, diffs, dual, resid)) = polish(y, order, lambda, &pattern)? {
                if opts.record_trace {
                    let obj = trend_objective(y, &fitted, lambda, order);
                    trace.push(trace.last().map_or(obj, |b: &f64| b.min(obj)));
                }
                return Ok(finish(fitted, diffs, dual, it, resid, 0.0, trace));
            }
        }

        r_norm = df.iter().zip(&z).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        s_norm = rho
            * apply_difference_transpose(order, &dz_sq, n)
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
        if opts.record_trace {
            let obj = trend_objective(y, &f, lambda, order);
            trace.push(trace.last().map_or(obj, |b: &f64| b.min(obj)));
        }

        let df_norm = df.iter().map(|v| v * v).sum::<f64>().sqrt();
        let z_norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        let eps_pri = sqrt_m * opts.abs_tol + opts.rel_tol * df_norm.max(z_norm);
        let dual_norm = rho
            * apply_difference_transpose(order, &u, n)
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
        let eps_dual = sqrt_n * opts.abs_tol + opts.rel_tol * dual_norm;
        if r_norm <= eps_pri && s_norm <= eps_dual {
            let dual: Vec<f64> = u.iter().map(|v| v * rho).collect();
            return Ok(finish(f, z, dual, it, r_norm, s_norm, trace));
        }

        // residual balancing; u is scaled by 1/ρ so it is rescaled with ρ
        let new_rho = if r_norm > opts.balance_ratio * s_norm {
            rho * opts.rho_factor
        } else if s_norm > opts.balance_ratio * r_norm {
            rho / opts.rho_factor
        } else {
            rho
        };
        if new_rho != rho {
            let ratio = rho / new_rho;
            u.iter_mut().for_each(|v| *v *= ratio);
            rho = new_rho;
            chol = factor(rho)?;
        }
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iter,
        primal: r_norm,
        dual: s_norm,
    })
}

fn sign_of(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

/// Exact solution for a guessed sign pattern of `D f`, if the guess is right.
///
/// With `S` the nonzero rows and `F` the rest, optimality means `ν_S = λ s_S`,
/// `(D f)_F = 0` and `‖ν_F‖∞ ≤ λ`, where `f = y − Dᵀν`. The middle condition is
/// the banded system `(D Dᵀ)_FF ν_F = (D y)_F − (D Dᵀ)_FS ν_S`; the candidate is
/// accepted only when the other two conditions and the signs on `S` check out.
fn polish(
    y: &[f64],
    order: usize,
    lambda: f64,
    pattern: &[i8],
) -> Result<Option<(Vec<f64>, Vec<f64>, Vec<f64>, f64)>> {
    let n = y.len();
    let free: Vec<usize> = (0..pattern.len()).filter(|&i| pattern[i] == 0).collect();
    if free.len() == pattern.len() {
        return Ok(None);
    }
    let mut nu: Vec<f64> = pattern.iter().map(|&p| lambda * p as f64).collect();
    if !free.is_empty() {
        let pushed = apply_difference(order, &apply_difference_transpose(order, &nu, n));
        let dy = apply_difference(order, y);
        let mut rhs: Vec<f64> = free.iter().map(|&i| dy[i] - pushed[i]).collect();
        // dropping rows and columns of a band matrix keeps it inside the band
        let chol = match BandedCholesky::factor(free.len(), order, |i, d| {
            let gap = free.get(i + d).map_or(usize::MAX, |&j| j - free[i]);
            if gap <= order {
                gram_ddt_entry(order, gap)
            } else {
                0.0
            }
        }) {
            Ok(c) => c,
            Err(_) => return Ok(None),
        };
        chol.solve_in_place(&mut rhs);
        for (&i, v) in free.iter().zip(&rhs) {
            if v.abs() > lambda * (1.0 + 1e-12) {
                return Ok(None);
            }
            nu[i] = *v;
        }
    }
    let dtn = apply_difference_transpose(order, &nu, n);
    let fitted: Vec<f64> = y.iter().zip(&dtn).map(|(a, b)| a - b).collect();
    let mut df = apply_difference(order, &fitted);
    let mut resid = 0.0f64;
    for (v, &p) in df.iter_mut().zip(pattern) {
        if p == 0 {
            resid = resid.max(v.abs());
            *v = 0.0;
        } else if sign_of(*v) != p {
            return Ok(None);
        }
    }
    Ok(Some((fitted, df, nu, resid)))
}

/// Indices where the fit changes level (order 1) or slope (order 2): positions
/// `i + 1` for every difference row `i` with `|z_i| > tol`. The index is the
/// first sample of the new piece.
pub fn kinks(fit: &TrendFilterFit, tol: f64) -> Vec<usize> {
    fit.differences
        .iter()
        .enumerate()
        .filter(|(_, v)| v.abs() > tol)
        .map(|(i, _)| i + 1)
        .collect()
}

/// Filter applied to every sensor, day by day.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FilterSpec {
    None,
    Median { window: usize },
    /// Fitted to each sensor-day as a whole, so a filtered value depends on
    /// later readings of the same day.
    TrendFilter { lambda: f64, order: usize },
    Ewma { alpha: f64 },
}

impl fmt::Display for FilterSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FilterSpec::None => write!(f, ""),
            FilterSpec::Median { window } => write!(f, "M{window}"),
            FilterSpec::TrendFilter { lambda, order: 2 } => write!(f, "TF{lambda}"),
            FilterSpec::TrendFilter { lambda, order } => write!(f, "TF{lambda}o{order}"),
            FilterSpec::Ewma { alpha } => write!(f, "E{alpha}"),
        }
    }
}

impl FromStr for FilterSpec {
    type Err = Error;

    /// Parses the short labels `none`, `M8`, `TF15`, `TF15o1`, `E0.3`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Param(format!("unrecognised filter label `{s}`"));
        if s.is_empty() || s.eq_ignore_ascii_case("none") {
            return Ok(FilterSpec::None);
        }
        if let Some(rest) = s.strip_prefix("TF") {
            let (lam, order) = match rest.split_once('o') {
                Some((l, o)) => (l, o.parse().map_err(|_| bad())?),
                None => (rest, 2),
            };
            return Ok(FilterSpec::TrendFilter {
                lambda: lam.parse().map_err(|_| bad())?,
                order,
            });
        }
        if let Some(rest) = s.strip_prefix('M') {
            return Ok(FilterSpec::Median {
                window: rest.parse().map_err(|_| bad())?,
            });
        }
        if let Some(rest) = s.strip_prefix('E') {
            return Ok(FilterSpec::Ewma {
                alpha: rest.parse().map_err(|_| bad())?,
            });
        }
        Err(bad())
    }
}

/// Apply one filter to a series.
pub fn filter_series(series: &[f64], spec: &FilterSpec) -> Result<Vec<f64>> {
    match *spec {
        FilterSpec::None => Ok(series.to_vec()),
        FilterSpec::Median { window } => median_filter(series, window),
        FilterSpec::TrendFilter { lambda, order } => Ok(trend_filter(series, lambda, order)?.fitted),
        FilterSpec::Ewma { alpha } => ewma(series, alpha),
    }
}

/// Filter every sensor independently within each day.
pub fn filter_field(field: &SpeedField, spec: &FilterSpec) -> Result<SpeedField> {
    if *spec == FilterSpec::None {
        return Ok(field.clone());
    }
    for s in 0..field.n_sensors() {
        if let Some(c) = field.missing_row(s).iter().position(|&m| m) {
            return Err(Error::IncompleteData {
                sensor: field.sensor_ids()[s].clone(),
                timestamp: field.timestamps()[c].format(TIMESTAMP_FORMAT).to_string(),
            });
        }
    }
    let ranges = field.day_ranges();
    let jobs: Vec<(usize, usize)> = (0..field.n_sensors())
        .flat_map(|s| (0..ranges.len()).map(move |d| (s, d)))
        .collect();
    let pieces: Vec<Vec<f64>> = jobs
        .par_iter()
        .map(|&(s, d)| filter_series(&field.series(s)[ranges[d].clone()], spec))
        .collect::<Result<_>>()?;
    let mut series = vec![Vec::with_capacity(field.n_times()); field.n_sensors()];
    for ((s, _), piece) in jobs.iter().zip(pieces) {
        series[*s].extend(piece);
    }
    field.with_series(series)
}
