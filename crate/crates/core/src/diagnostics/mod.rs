//! Residual diagnostics: autocorrelation, heteroskedasticity, neglected
//! nonlinearity, unit roots and normality.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{least_squares, Matrix};

pub mod dist;
mod lilliefors_table;

pub use dist::AdfSpec;

/// Outcome of one hypothesis test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub name: String,
    pub statistic: f64,
    pub p_value: f64,
    /// Reference distribution, e.g. `chi2(24)` or `F(4, 990)`.
    pub df: String,
    pub null_hypothesis: String,
    /// Alternative forms of the statistic and auxiliary quantities.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, f64>,
}

impl TestResult {
    fn new(name: &str, null: &str, statistic: f64, p_value: f64, df: String) -> Self {
        Self {
            name: name.into(),
            statistic,
            p_value: p_value.clamp(0.0, 1.0),
            df,
            null_hypothesis: null.into(),
            extra: BTreeMap::new(),
        }
    }

    fn with(mut self, key: &str, v: f64) -> Self {
        self.extra.insert(key.into(), v);
        self
    }
}

fn centred_sum_squares(x: &[f64]) -> (f64, f64) {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    (m, x.iter().map(|v| (v - m) * (v - m)).sum())
}

/// Sample autocorrelations `ρ̂_0..ρ̂_max_lag` with the full-sample variance as
/// denominator.
pub fn acf(series: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    if series.len() <= max_lag {
        return Err(Error::Param(format!(
            "acf to lag {max_lag} needs more than {} points",
            series.len()
        )));
    }
    let (m, ss) = centred_sum_squares(series);
    if !(ss > 1e-300) || !ss.is_finite() {
        return Err(Error::Degenerate("series has zero variance".into()));
    }
    let c: Vec<f64> = series.iter().map(|v| v - m).collect();
    Ok((0..=max_lag)
        .map(|k| {
            if k == 0 {
                1.0
            } else {
                c[k..].iter().zip(&c).map(|(a, b)| a * b).sum::<f64>() / ss
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Portmanteau {
    BoxPierce,
    LjungBox,
}

/// Box–Pierce `T Σ ρ̂_k²` or Ljung–Box `T(T+2) Σ ρ̂_k²/(T−k)` against `χ²(lags)`.
pub fn box_pierce(resid: &[f64], lags: usize, variant: Portmanteau) -> Result<TestResult> {
    if lags == 0 {
        return Err(Error::Param("portmanteau test needs at least one lag".into()));
    }
    let r = acf(resid, lags)?;
    let t = resid.len() as f64;
    let q = match variant {
        Portmanteau::BoxPierce => t * r[1..].iter().map(|v| v * v).sum::<f64>(),
        Portmanteau::LjungBox => {
            t * (t + 2.0)
                * r.iter()
                    .enumerate()
                    .skip(1)
                    .map(|(k, v)| v * v / (t - k as f64))
                    .sum::<f64>()
        }
    };
    let name = match variant {
        Portmanteau::BoxPierce => "Box-Pierce",
        Portmanteau::LjungBox => "Ljung-Box",
    };
    Ok(TestResult::new(
        name,
        "no autocorrelations",
        q,
        dist::chi2_sf(q, lags as f64),
        format!("chi2({lags})"),
    ))
}

/// `[1, non-constant regressor columns]`.
fn with_intercept(regressors: &Matrix, rows: usize) -> Result<DMatrix<f64>> {
    if regressors.rows() != rows && regressors.cols() > 0 {
        return Err(Error::Dimension(format!(
            "{} regressor rows for {rows} residuals",
            regressors.rows()
        )));
    }
    let keep: Vec<usize> = (0..regressors.cols())
        .filter(|&j| {
            let col = regressors.column(j);
            let (m, ss) = centred_sum_squares(&col);
            ss > 1e-20 * (1.0 + m * m) * rows as f64
        })
        .collect();
    let mut z = DMatrix::from_element(rows, keep.len() + 1, 1.0);
    for (c, &j) in keep.iter().enumerate() {
        for i in 0..rows {
            z[(i, c + 1)] = regressors.get(i, j);
        }
    }
    Ok(z)
}

fn append_columns(z: &DMatrix<f64>, cols: &[Vec<f64>]) -> DMatrix<f64> {
    let mut out = z.clone().resize_horizontally(z.ncols() + cols.len(), 0.0);
    for (c, col) in cols.iter().enumerate() {
        for (i, v) in col.iter().enumerate() {
            out[(i, z.ncols() + c)] = *v;
        }
    }
    out
}

fn check_finite(name: &str, x: &[f64]) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Param(format!("{name} contains non-finite values")))
    }
}

/// Which form of a regression-based statistic a report leads with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatForm {
    F,
    Lm,
}

/// Breusch–Godfrey test of `order` lagged residuals (zero-padded) added to an
/// auxiliary regression on `[1, regressors]`.
///
/// The F form compares the restricted and augmented fits; the LM form is
/// `T·(SSR_r − SSR_u)/SSR_r`, which equals the usual `T·R²` when the residuals
/// come from least squares on the same regressors.
pub fn breusch_godfrey(resid: &[f64], regressors: &Matrix, order: usize) -> Result<TestResult> {
    breusch_godfrey_form(resid, regressors, order, StatForm::F)
}

pub fn breusch_godfrey_form(
    resid: &[f64],
    regressors: &Matrix,
    order: usize,
    form: StatForm,
) -> Result<TestResult> {
    if order == 0 {
        return Err(Error::Param("Breusch-Godfrey order must be at least 1".into()));
    }
    check_finite("residuals", resid)?;
    let t = resid.len();
    let z = with_intercept(regressors, t)?;
    if t <= z.ncols() + order {
        return Err(Error::RankDeficient(format!("{t} observations for {} columns", z.ncols() + order)));
    }
    let y = DVector::from_column_slice(resid);
    let restricted = least_squares(&z, &y)?;
    if !(restricted.sse > 0.0) {
        return Err(Error::Degenerate("residuals are explained exactly by the regressors".into()));
    }
    let lags: Vec<Vec<f64>> = (1..=order)
        .map(|l| (0..t).map(|i| if i >= l { resid[i - l] } else { 0.0 }).collect())
        .collect();
    let zu = append_columns(&z, &lags);
    let full = least_squares(&zu, &y)?;
    let dfd = (t - zu.ncols()) as f64;
    let f = ((restricted.sse - full.sse).max(0.0) / order as f64) / (full.sse / dfd);
    let lm = t as f64 * (restricted.sse - full.sse).max(0.0) / restricted.sse;
    let p_f = dist::f_sf(f, order as f64, dfd);
    let p_lm = dist::chi2_sf(lm, order as f64);
    let base = match form {
        StatForm::F => TestResult::new(
            "Breusch-Godfrey",
            "no autocorrelations",
            f,
            p_f,
            format!("F({order}, {dfd})"),
        ),
        StatForm::Lm => TestResult::new(
            "Breusch-Godfrey",
            "no autocorrelations",
            lm,
            p_lm,
            format!("chi2({order})"),
        ),
    };
    Ok(base.with("f", f).with("f_p", p_f).with("lm", lm).with("lm_p", p_lm))
}

/// Breusch–Pagan test: squared residuals regressed on `[1, regressors]`,
/// `LM = T·R² ~ χ²(k)` (the studentized form, robust to non-normal errors).
/// The original `ESS/2` statistic on `r²/σ̂²` is reported as `classic`.
pub fn breusch_pagan(resid: &[f64], regressors: &Matrix) -> Result<TestResult> {
    check_finite("residuals", resid)?;
    let t = resid.len();
    let z = with_intercept(regressors, t)?;
    let k = z.ncols() - 1;
    let name = "Breusch-Pagan";
    let null = "homoscedasticity";
    if k == 0 {
        return Ok(TestResult::new(name, null, 0.0, 1.0, "chi2(0)".into()).with("classic", 0.0));
    }
    if t <= z.ncols() {
        return Err(Error::RankDeficient(format!("{t} observations for {} columns", z.ncols())));
    }
    let sq: Vec<f64> = resid.iter().map(|r| r * r).collect();
    let (_, sst) = centred_sum_squares(&sq);
    if !(sst > 0.0) {
        return Err(Error::Degenerate("squared residuals are constant".into()));
    }
    let fit = least_squares(&z, &DVector::from_vec(sq.clone()))?;
    let r2 = 1.0 - fit.sse / sst;
    let lm = t as f64 * r2;
    let sigma2 = sq.iter().sum::<f64>() / t as f64;
    let classic = 0.5 * (sst - fit.sse) / (sigma2 * sigma2);
    Ok(TestResult::new(name, null, lm, dist::chi2_sf(lm, k as f64), format!("chi2({k})"))
        .with("classic", classic)
        .with("classic_p", dist::chi2_sf(classic, k as f64)))
}

/// Lee–White–Granger neural-network test for neglected nonlinearity in mean.
///
/// `q` phantom units `tanh(γᵀx̃)`, with `γ ~ U[−2, 2]` over the standardized
/// regressors plus an intercept, are projected off `[1, X]`; their leading
/// principal components (99% of variance, at most `q`) enter an auxiliary
/// regression of the residuals, and `T·R² ~ χ²(kept)`.
pub fn lee_white_granger(resid: &[f64], regressors: &Matrix, q: usize, seed: u64) -> Result<TestResult> {
    if q == 0 {
        return Err(Error::Param("Lee-White-Granger needs at least one phantom unit".into()));
    }
    check_finite("residuals", resid)?;
    let t = resid.len();
    let z = with_intercept(regressors, t)?;
    let k = z.ncols();
    if k == 1 {
        return Err(Error::Degenerate("Lee-White-Granger needs a non-constant regressor".into()));
    }
    // standardized copy for the phantom units
    let mut zs = z.clone();
    for j in 1..k {
        let col: Vec<f64> = z.column(j).iter().copied().collect();
        let (m, ss) = centred_sum_squares(&col);
        let sd = (ss / t as f64).sqrt();
        for i in 0..t {
            zs[(i, j)] = (z[(i, j)] - m) / sd;
        }
    }
    let y = DVector::from_column_slice(resid);
    let restricted = least_squares(&z, &y)?;
    if !(restricted.sse > 0.0) {
        return Err(Error::Degenerate("residuals are explained exactly by the regressors".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _attempt in 0..10 {
        let gamma = DMatrix::from_fn(k, q, |_, _| rng.random_range(-2.0..=2.0));
        let act = (&zs * gamma).map(f64::tanh);
        let mut proj = DMatrix::zeros(t, q);
        for c in 0..q {
            let fit = least_squares(&z, &act.column(c).into_owned())?;
            proj.set_column(c, &fit.residuals);
        }
        let cov = proj.transpose() * &proj / t as f64;
        let total = cov.trace();
        if !(total > 1e-10) {
            continue;
        }
        let eig = SymmetricEigen::new(cov);
        let mut idx: Vec<usize> = (0..q).collect();
        idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let mut kept = 0;
        let mut acc = 0.0;
        while kept < q && acc < 0.99 * total {
            acc += eig.eigenvalues[idx[kept]].max(0.0);
            kept += 1;
        }
        let pcs: Vec<Vec<f64>> = idx[..kept]
            .iter()
            .map(|&c| (&proj * eig.eigenvectors.column(c)).iter().copied().collect())
            .collect();
        let zu = append_columns(&z, &pcs);
        if t <= zu.ncols() {
            return Err(Error::RankDeficient(format!("{t} observations for {} columns", zu.ncols())));
        }
        let full = match least_squares(&zu, &y) {
            Ok(f) => f,
            Err(Error::RankDeficient(_)) => continue,
            Err(e) => return Err(e),
        };
        let drop = (restricted.sse - full.sse).max(0.0);
        let lm = t as f64 * drop / restricted.sse;
        let dfd = (t - zu.ncols()) as f64;
        let f = (drop / kept as f64) / (full.sse / dfd);
        return Ok(TestResult::new(
            "Lee-White-Granger",
            "linearity in mean",
            lm,
            dist::chi2_sf(lm, kept as f64),
            format!("chi2({kept})"),
        )
        .with("components", kept as f64)
        .with("f", f)
        .with("f_p", dist::f_sf(f, kept as f64, dfd)));
    }
    Err(Error::Degenerate(
        "phantom-unit activations degenerate after 10 draws".into(),
    ))
}

/// Augmented Dickey–Fuller t-test on `γ` in
/// `Δy_t = α (+ βt) + γ y_{t−1} + Σ δ_i Δy_{t−i} + e_t`.
pub fn adf(series: &[f64], lags: usize, spec: AdfSpec) -> Result<TestResult> {
    check_finite("series", series)?;
    let n = series.len();
    let n_det = match spec {
        AdfSpec::Constant => 1,
        AdfSpec::ConstantTrend => 2,
    };
    let cols = n_det + 1 + lags;
    if n <= lags + 2 || n - 1 - lags <= cols {
        return Err(Error::Param(format!("series of length {n} too short for {lags} lags")));
    }
    let dy: Vec<f64> = series.windows(2).map(|w| w[1] - w[0]).collect();
    // equations for Δy[j] with j = lags..n-2 (Δy[j] = y[j+1] − y[j])
    let rows = dy.len() - lags;
    let mut z = DMatrix::zeros(rows, cols);
    let mut target = DVector::zeros(rows);
    for r in 0..rows {
        let j = r + lags;
        target[r] = dy[j];
        z[(r, 0)] = 1.0;
        if n_det == 2 {
            z[(r, 1)] = (j + 1) as f64;
        }
        z[(r, n_det)] = series[j];
        for i in 1..=lags {
            z[(r, n_det + i)] = dy[j - i];
        }
    }
    let fit = least_squares(&z, &target)?;
    let sigma2 = fit.sse / (rows - cols) as f64;
    if !(sigma2 > 0.0) {
        return Err(Error::Degenerate("ADF regression fits exactly".into()));
    }
    let gamma = fit.coefficients[n_det];
    let tau = gamma / (sigma2 * fit.inverse_gram_diagonal[n_det]).sqrt();
    let label = match spec {
        AdfSpec::Constant => "constant",
        AdfSpec::ConstantTrend => "constant+trend",
    };
    Ok(TestResult::new(
        "Dickey-Fuller",
        "non-stationary",
        tau,
        dist::mackinnon_pvalue(tau, spec),
        format!("MacKinnon {label}, {lags} lags"),
    )
    .with("gamma", gamma)
    .with("lags", lags as f64))
}

/// Schwert's rule `⌊12 (T/100)^{1/4}⌋` for the ADF lag order.
pub fn schwert_lags(n: usize) -> usize {
    (12.0 * (n as f64 / 100.0).powf(0.25)).floor() as usize
}

/// Kolmogorov–Smirnov distance of standardized residuals from `N(0, 1)`.
///
/// Because mean and variance are estimated, the reported p-value uses the
/// Lilliefors null distribution; the plain Kolmogorov-series value (which
/// ignores the estimation and is conservative) is kept as `kolmogorov_p`.
pub fn ks_normality(resid: &[f64]) -> Result<TestResult> {
    let n = resid.len();
    if n < 8 {
        return Err(Error::Param(format!("KS normality needs at least 8 points, got {n}")));
    }
    check_finite("residuals", resid)?;
    let (m, ss) = centred_sum_squares(resid);
    let sd = (ss / n as f64).sqrt();
    if !(sd > 0.0) {
        return Err(Error::Degenerate("residuals have zero variance".into()));
    }
    let mut z: Vec<f64> = resid.iter().map(|v| (v - m) / sd).collect();
    z.sort_by(f64::total_cmp);
    let nf = n as f64;
    let d = z
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = dist::normal_cdf(v);
            ((i + 1) as f64 / nf - f).max(f - i as f64 / nf)
        })
        .fold(0.0, f64::max);
    Ok(TestResult::new(
        "Kolmogorov-Smirnov",
        "normality",
        d,
        dist::lilliefors_pvalue(d, n),
        format!("Lilliefors(n={n})"),
    )
    .with("kolmogorov_p", dist::kolmogorov_pvalue(d, n)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiagnosticsOptions {
    pub acf_max_lag: usize,
    pub portmanteau_lags: usize,
    pub bg_order: usize,
    pub bg_form: StatForm,
    /// `None` selects Schwert's rule.
    pub adf_lags: Option<usize>,
    pub adf_spec: AdfSpec,
    pub lwg_units: usize,
    pub seed: u64,
}

impl Default for DiagnosticsOptions {
    fn default() -> Self {
        Self {
            acf_max_lag: 24,
            portmanteau_lags: 24,
            bg_order: 4,
            bg_form: StatForm::F,
            adf_lags: None,
            adf_spec: AdfSpec::Constant,
            lwg_units: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub n: usize,
    pub residual_mean: f64,
    pub residual_variance: f64,
    /// Empty when the residuals are constant.
    pub acf: Vec<f64>,
    pub tests: Vec<TestResult>,
    /// Tests that could not be run, with the reason.
    pub degenerate: BTreeMap<String, String>,
}

impl DiagnosticsReport {
    pub fn test(&self, name: &str) -> Option<&TestResult> {
        self.tests.iter().find(|t| t.name == name)
    }
}

/// Full battery on `r = y − ŷ`. Without explicit regressors the forecasts `ŷ`
/// serve as the single regressor for Breusch–Godfrey, Breusch–Pagan and
/// Lee–White–Granger.
pub fn diagnostics_report(
    y: &[f64],
    yhat: &[f64],
    regressors: Option<&Matrix>,
    opts: &DiagnosticsOptions,
) -> Result<DiagnosticsReport> {
    if y.len() != yhat.len() {
        return Err(Error::Dimension(format!("{} observations, {} forecasts", y.len(), yhat.len())));
    }
    if y.is_empty() {
        return Err(Error::Empty("no observations to diagnose".into()));
    }
    check_finite("observations", y)?;
    check_finite("forecasts", yhat)?;
    let resid: Vec<f64> = y.iter().zip(yhat).map(|(a, b)| a - b).collect();
    let n = resid.len();
    let (mean, ss) = centred_sum_squares(&resid);
    let default_reg;
    let reg = match regressors {
        Some(r) => r,
        None => {
            default_reg = Matrix::from_vec(n, 1, yhat.to_vec())?;
            &default_reg
        }
    };
    let mut degenerate = BTreeMap::new();
    let acf_v = match acf(&resid, opts.acf_max_lag.min(n.saturating_sub(1))) {
        Ok(v) => v,
        Err(e) => {
            degenerate.insert("ACF".to_string(), e.to_string());
            Vec::new()
        }
    };
    let adf_lags = opts.adf_lags.unwrap_or_else(|| schwert_lags(n));
    let runs: Vec<(&str, Result<TestResult>)> = vec![
        ("Breusch-Godfrey", breusch_godfrey_form(&resid, reg, opts.bg_order, opts.bg_form)),
        ("Box-Pierce", box_pierce(&resid, opts.portmanteau_lags, Portmanteau::BoxPierce)),
        ("Ljung-Box", box_pierce(&resid, opts.portmanteau_lags, Portmanteau::LjungBox)),
        ("Breusch-Pagan", breusch_pagan(&resid, reg)),
        ("Lee-White-Granger", lee_white_granger(&resid, reg, opts.lwg_units, opts.seed)),
        ("Dickey-Fuller", adf(&resid, adf_lags, opts.adf_spec)),
        ("Kolmogorov-Smirnov", ks_normality(&resid)),
    ];
    let mut tests = Vec::new();
    for (name, r) in runs {
        match r {
            Ok(t) if t.statistic.is_finite() => tests.push(t),
            Ok(t) => {
                degenerate.insert(name.to_string(), format!("non-finite statistic {}", t.statistic));
            }
            Err(e) => {
                degenerate.insert(name.to_string(), e.to_string());
            }
        }
    }
    Ok(DiagnosticsReport {
        n,
        residual_mean: mean,
        residual_variance: ss / n as f64,
        acf: acf_v,
        tests,
        degenerate,
    })
}

/// The five rows of the classic residual-test table.
pub const TABLE_TESTS: [&str; 5] = [
    "Breusch-Godfrey",
    "Box-Pierce",
    "Breusch-Pagan",
    "Lee-White-Granger",
    "Dickey-Fuller",
];

/// Plain-text table with one column per model, cells `statistic (p)`.
pub fn format_table(models: &[(&str, &DiagnosticsReport)], rows: &[&str]) -> String {
    let cell = |r: &DiagnosticsReport, name: &str| match r.test(name) {
        Some(t) => format!("{} ({})", sig(t.statistic), sig(t.p_value)),
        None => "n/a".to_string(),
    };
    let null_of = |name: &str| {
        models
            .iter()
            .find_map(|(_, r)| r.test(name).map(|t| t.null_hypothesis.clone()))
            .unwrap_or_default()
    };
    let mut table: Vec<Vec<String>> = vec![{
        let mut h = vec!["Test".to_string(), "Null hypothesis".to_string()];
        h.extend(models.iter().map(|(m, _)| m.to_string()));
        h
    }];
    for &name in rows {
        let mut line = vec![name.to_string(), null_of(name)];
        line.extend(models.iter().map(|(_, r)| cell(r, name)));
        table.push(line);
    }
    let widths: Vec<usize> = (0..table[0].len())
        .map(|c| table.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &table {
        let cells: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(s, w)| format!("{s:<w$}"))
            .collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
    }
    out
}

/// Four significant digits, without exponent for everyday magnitudes.
fn sig(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let mag = v.abs().log10().floor() as i32;
    if !(-4..6).contains(&mag) {
        return format!("{v:.3e}");
    }
    let decimals = (3 - mag).max(0) as usize;
    let s = format!("{v:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}
