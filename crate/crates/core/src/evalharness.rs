//! Pipelines of filter → lag design → optional lasso selection → model, scored
//! in and out of sample.

use std::collections::BTreeSet;
use std::fmt;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datastore::{
    build_lag_design, split_by_days, split_train_test, write_wide_with, LagDesign, SpeedField, SplitPolicy,
};
use crate::deepnet::{init_network, predict, sgd_train, DeepNet, NetConfig};
use crate::error::{Error, Result};
use crate::filters::{filter_field, FilterSpec};
use crate::hypersearch::{random_search, LeaderboardRow, SearchSpace};
use crate::sparsevar::{
    fit_sparse_var, fit_sparse_var_warm, select_lambda, support, LambdaSelection, LassoOptions, SelectedPredictor,
    SparseVarModel,
};

/// Mean squared difference.
pub fn mse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    if y.len() != yhat.len() {
        return Err(Error::Dimension(format!("{} observations, {} forecasts", y.len(), yhat.len())));
    }
    if y.is_empty() {
        return Err(Error::Empty("mse of no observations".into()));
    }
    Ok(y.iter().zip(yhat).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64)
}

/// `1 − SSE/SST`, with `SST` about the mean of `y`.
pub fn r2(y: &[f64], yhat: &[f64]) -> Result<f64> {
    let e = mse(y, yhat)?;
    let m = y.iter().sum::<f64>() / y.len() as f64;
    let sst = y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / y.len() as f64;
    if !(sst > 0.0) {
        return Err(Error::Degenerate("R² is undefined for a constant series".into()));
    }
    Ok(1.0 - e / sst)
}

/// Persistence forecast `ŷ_{t+h} = y_t` for every sensor, aligned with the
/// field's columns. The first `h` steps of each day have no forecast (`NaN`).
pub fn naive_forecast(field: &SpeedField, h: usize) -> Result<Vec<Vec<f64>>> {
    if h == 0 {
        return Err(Error::Param("forecast horizon must be at least 1".into()));
    }
    let ranges = field.day_ranges();
    Ok((0..field.n_sensors())
        .map(|s| {
            let y = field.series(s);
            let mut out = vec![f64::NAN; y.len()];
            for r in &ranges {
                for c in r.start + h..r.end {
                    out[c] = y[c - h];
                }
            }
            out
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Selector {
    None,
    /// Lasso support with threshold 0; `lambda: null` picks λ on the validation days.
    Lasso { lambda: Option<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Naive,
    /// Sparse VAR; `lambda: null` picks λ on the validation days.
    Var { lambda: Option<f64> },
    Dl { config: NetConfig },
    DlSearch { space: SearchSpace },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSpec {
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default = "default_filter")]
    pub filter: FilterSpec,
    #[serde(default = "default_selector")]
    pub selector: Selector,
    pub model: ModelSpec,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_lags")]
    pub lags: usize,
    pub target: String,
}

fn default_filter() -> FilterSpec {
    FilterSpec::None
}
fn default_selector() -> Selector {
    Selector::None
}
fn default_horizon() -> usize {
    8
}
fn default_lags() -> usize {
    12
}

impl PipelineSpec {
    /// `DLM8L`-style name unless an explicit label was given.
    pub fn label(&self) -> String {
        if let Some(l) = &self.label {
            return l.clone();
        }
        let model = match self.model {
            ModelSpec::Naive => "naive",
            ModelSpec::Var { .. } => "VAR",
            ModelSpec::Dl { .. } | ModelSpec::DlSearch { .. } => "DL",
        };
        let sel = match self.selector {
            Selector::Lasso { .. } if !matches!(self.model, ModelSpec::Naive) => "L",
            _ => "",
        };
        format!("{model}{}{sel}", self.filter)
    }
}

/// Knobs shared by every pipeline of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    /// Share of training days (the latest ones) held out for λ selection and
    /// early stopping.
    pub valid_fraction: f64,
    pub lambda_grid: usize,
    pub lambda_min_ratio: f64,
    pub workers: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            valid_fraction: 0.2,
            lambda_grid: 30,
            lambda_min_ratio: 1e-2,
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub label: String,
    pub is_mse: f64,
    pub is_r2: f64,
    pub os_mse: f64,
    pub os_r2: f64,
    pub n_train: usize,
    pub n_test: usize,
}

/// Forecasts for one side of the split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predictions {
    /// Field column of the forecast origin; the forecast is for `origin + h`.
    pub origins: Vec<usize>,
    pub y: Vec<f64>,
    pub yhat: Vec<f64>,
}

impl Predictions {
    fn from_design(d: &LagDesign, yhat: Vec<f64>) -> Self {
        Self {
            origins: d.row_origins.clone(),
            y: d.target(0),
            yhat,
        }
    }

    pub fn residuals(&self) -> Vec<f64> {
        self.y.iter().zip(&self.yhat).map(|(a, b)| a - b).collect()
    }
}

#[derive(Debug, Clone)]
pub struct PipelineResult {
    pub spec: PipelineSpec,
    pub row: EvalRow,
    pub train: Predictions,
    pub test: Predictions,
    pub target_sensor: usize,
    pub horizon: usize,
    /// Columns kept by the lasso selector.
    pub selected: Option<Vec<SelectedPredictor>>,
    pub lambda_selection: Option<LambdaSelection>,
    pub var_model: Option<SparseVarModel>,
    pub net: Option<DeepNet>,
    pub leaderboard: Option<Vec<LeaderboardRow>>,
    /// Model inputs of the test rows (standardized as the model saw them).
    pub test_inputs: crate::linalg::Matrix,
}

impl PipelineResult {
    /// Forecasts placed at their target columns (`NaN` where none exists).
    pub fn aligned(&self, n_times: usize) -> Vec<f64> {
        let mut out = vec![f64::NAN; n_times];
        for p in [&self.train, &self.test] {
            for (&o, &v) in p.origins.iter().zip(&p.yhat) {
                out[o + self.horizon] = v;
            }
        }
        out
    }
}

/// Split the training design's days into a fitting part and the trailing
/// validation days.
fn validation_split(train: &LagDesign, frac: f64) -> Result<(LagDesign, LagDesign)> {
    let days = train.days();
    if days.len() < 2 {
        return Err(Error::Param("validation needs at least two training days".into()));
    }
    let n_valid = ((days.len() as f64 * frac).round() as usize).clamp(1, days.len() - 1);
    let fit: BTreeSet<usize> = days[..days.len() - n_valid].iter().copied().collect();
    split_by_days(train, &fit)
}

fn choose_lambda(fit: &LagDesign, valid: &LagDesign, opts: &EvalOptions) -> Result<LambdaSelection> {
    select_lambda(fit, valid, 0, opts.lambda_grid, opts.lambda_min_ratio)
}

/// Final lasso fit on the whole training block, warm-started from the
/// validation path when there was one.
fn fit_selected(train: &LagDesign, lambda: f64, sel: Option<&LambdaSelection>) -> Result<SparseVarModel> {
    match sel {
        Some(s) => fit_sparse_var_warm(
            train,
            lambda,
            &LassoOptions::default(),
            Some(std::slice::from_ref(&s.coefficients)),
        ),
        None => fit_sparse_var(train, lambda),
    }
}

fn var_predictions(model: &SparseVarModel, d: &LagDesign) -> Result<Vec<f64>> {
    (0..d.rows())
        .map(|i| model.forecast_standardized(d.x.row(i)).map(|v| v[0]))
        .collect()
}

/// Run one pipeline: filter, build the lag design, split by days, select,
/// fit on the training days and score both sides. The filter only touches
/// the model inputs; targets are always the measured speeds.
pub fn run_pipeline(
    spec: &PipelineSpec,
    field: &SpeedField,
    split: &SplitPolicy,
    opts: &EvalOptions,
) -> Result<PipelineResult> {
    let target = field.sensor_index(&spec.target)?;
    let filtered = filter_field(field, &spec.filter)?;
    let mut design = build_lag_design(&filtered, spec.lags, spec.horizon, &[target], true)?;
    if filtered != *field {
        // inputs are filtered, forecasts are fitted and scored against measurements
        design.retarget(field)?;
    }
    let (train, test) = split_train_test(&design, split)?;

    let mut out = PipelineResult {
        spec: spec.clone(),
        row: EvalRow {
            label: spec.label(),
            is_mse: f64::NAN,
            is_r2: f64::NAN,
            os_mse: f64::NAN,
            os_r2: f64::NAN,
            n_train: train.rows(),
            n_test: test.rows(),
        },
        train: Predictions::from_design(&train, Vec::new()),
        test: Predictions::from_design(&test, Vec::new()),
        target_sensor: target,
        horizon: spec.horizon,
        selected: None,
        lambda_selection: None,
        var_model: None,
        net: None,
        leaderboard: None,
        test_inputs: test.x.clone(),
    };

    let (train_hat, test_hat) = match &spec.model {
        ModelSpec::Naive => {
            let latest = filtered.series(target);
            let own = |d: &LagDesign| d.row_origins.iter().map(|&o| latest[o]).collect();
            (own(&train), own(&test))
        }
        ModelSpec::Var { lambda } => {
            let lam = match (lambda, &spec.selector) {
                (Some(l), _) => *l,
                (None, Selector::Lasso { lambda: Some(l) }) => *l,
                (None, _) => {
                    let (fit, valid) = validation_split(&train, opts.valid_fraction)?;
                    let sel = choose_lambda(&fit, &valid, opts)?;
                    let l = sel.lambda;
                    out.lambda_selection = Some(sel);
                    l
                }
            };
            let model = fit_selected(&train, lam, out.lambda_selection.as_ref())?;
            if matches!(spec.selector, Selector::Lasso { .. }) {
                out.selected = Some(support(&model, &spec.target, 0.0)?);
            }
            let r = (var_predictions(&model, &train)?, var_predictions(&model, &test)?);
            out.var_model = Some(model);
            r
        }
        ModelSpec::Dl { .. } | ModelSpec::DlSearch { .. } => {
            let (fit, valid) = validation_split(&train, opts.valid_fraction)?;
            let cols: Vec<usize> = match &spec.selector {
                Selector::None => (0..train.x.cols()).collect(),
                Selector::Lasso { lambda } => {
                    let lam = match lambda {
                        Some(l) => *l,
                        None => {
                            let sel = choose_lambda(&fit, &valid, opts)?;
                            let l = sel.lambda;
                            out.lambda_selection = Some(sel);
                            l
                        }
                    };
                    let lasso = fit_selected(&train, lam, out.lambda_selection.as_ref())?;
                    let mut chosen = support(&lasso, &spec.target, 0.0)?;
                    if chosen.is_empty() {
                        // nothing survives the penalty: keep the target's latest reading
                        let own = target * spec.lags;
                        chosen.push(SelectedPredictor {
                            column: own,
                            sensor_id: spec.target.clone(),
                            lag: 0,
                            coefficient: 0.0,
                        });
                    }
                    let mut cols: Vec<usize> = chosen.iter().map(|p| p.column).collect();
                    cols.sort_unstable();
                    out.selected = Some(chosen);
                    cols
                }
            };
            let fit = fit.select_columns(&cols);
            let valid = valid.select_columns(&cols);
            let st = fit.standardization.clone().expect("lag designs are standardized");
            let train_in = train.select_columns(&cols).standardized_like(&st);
            let test_in = test.select_columns(&cols).standardized_like(&st);
            let net = match &spec.model {
                ModelSpec::Dl { config } => {
                    let cfg = NetConfig {
                        input_dim: cols.len(),
                        output_dim: 1,
                        ..config.clone()
                    };
                    sgd_train(&init_network(&cfg)?, &fit, &valid)?
                }
                ModelSpec::DlSearch { space } => {
                    let res = random_search(&fit, &valid, space, opts.workers)?;
                    out.leaderboard = Some(res.leaderboard);
                    res.best
                }
                _ => unreachable!(),
            };
            let r = (predict(&net, &train_in)?.column(0), predict(&net, &test_in)?.column(0));
            out.test_inputs = test_in.x;
            out.net = Some(net);
            r
        }
    };
    out.train.yhat = train_hat;
    out.test.yhat = test_hat;
    // every training row is scored in sample and every test row out of sample
    debug_assert_eq!(out.train.yhat.len(), out.row.n_train);
    debug_assert_eq!(out.test.yhat.len(), out.row.n_test);
    out.row.is_mse = mse(&out.train.y, &out.train.yhat)?;
    out.row.os_mse = mse(&out.test.y, &out.test.yhat)?;
    out.row.is_r2 = r2(&out.train.y, &out.train.yhat)?;
    out.row.os_r2 = r2(&out.test.y, &out.test.yhat)?;
    if !(out.row.is_mse.is_finite() && out.row.os_mse.is_finite()) {
        return Err(Error::Numeric(format!("{} produced non-finite forecasts", out.row.label)));
    }
    Ok(out)
}

/// Outcome of one spec in a comparison; failures do not stop the others.
#[derive(Debug)]
pub struct Comparison {
    pub results: Vec<std::result::Result<PipelineResult, (String, Error)>>,
}

impl Comparison {
    pub fn rows(&self) -> Vec<std::result::Result<&EvalRow, &str>> {
        self.results
            .iter()
            .map(|r| match r {
                Ok(p) => Ok(&p.row),
                Err((label, _)) => Err(label.as_str()),
            })
            .collect()
    }

    pub fn get(&self, label: &str) -> Option<&PipelineResult> {
        self.results.iter().filter_map(|r| r.as_ref().ok()).find(|p| p.row.label == label)
    }

    /// Metrics as rows and specs as columns.
    pub fn write_table<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["metric".to_string()];
        header.extend(self.results.iter().map(|r| match r {
            Ok(p) => p.row.label.clone(),
            Err((l, _)) => l.clone(),
        }));
        w.write_record(&header)?;
        let metrics: [(&str, fn(&EvalRow) -> f64); 4] = [
            ("IS MSE", |r| r.is_mse),
            ("IS R2", |r| r.is_r2),
            ("OS MSE", |r| r.os_mse),
            ("OS R2", |r| r.os_r2),
        ];
        for (name, get) in metrics {
            let mut rec = vec![name.to_string()];
            rec.extend(self.results.iter().map(|r| match r {
                Ok(p) => format!("{:.4}", get(&p.row)),
                Err(_) => "failed".to_string(),
            }));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let labels: Vec<String> = self
            .results
            .iter()
            .map(|r| match r {
                Ok(p) => p.row.label.clone(),
                Err((l, _)) => l.clone(),
            })
            .collect();
        let width = labels.iter().map(|l| l.len()).max().unwrap_or(0).max(9);
        write!(f, "{:<8}", "")?;
        for l in &labels {
            write!(f, " {l:>width$}")?;
        }
        writeln!(f)?;
        let metrics: [(&str, fn(&EvalRow) -> f64); 4] = [
            ("IS MSE", |r| r.is_mse),
            ("IS R2", |r| r.is_r2),
            ("OS MSE", |r| r.os_mse),
            ("OS R2", |r| r.os_r2),
        ];
        for (name, get) in metrics {
            write!(f, "{name:<8}")?;
            for r in &self.results {
                match r {
                    Ok(p) => write!(f, " {:>width$.3}", get(&p.row))?,
                    Err(_) => write!(f, " {:>width$}", "failed")?,
                }
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Run every spec (concurrently, up to `opts.workers`), keeping spec order.
pub fn compare_models(
    specs: &[PipelineSpec],
    field: &SpeedField,
    split: &SplitPolicy,
    opts: &EvalOptions,
) -> Result<Comparison> {
    if specs.is_empty() {
        return Err(Error::Param("no pipelines to compare".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers.max(1))
        .build()
        .map_err(|e| Error::Param(format!("thread pool: {e}")))?;
    let results = pool.install(|| {
        specs
            .par_iter()
            .map(|s| run_pipeline(s, field, split, opts).map_err(|e| (s.label(), e)))
            .collect()
    });
    Ok(Comparison { results })
}

/// Wide grid (`timestamp` plus one column per sensor) with the target sensor's
/// column replaced by `predictions` (one value per field column; `NaN` leaves
/// the cell empty).
pub fn export_heatmap<W: Write>(field: &SpeedField, predictions: &[f64], target: usize, writer: W) -> Result<()> {
    if predictions.len() != field.n_times() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} timestamps",
            predictions.len(),
            field.n_times()
        )));
    }
    if target >= field.n_sensors() {
        return Err(Error::UnknownSensor(target.to_string()));
    }
    write_wide_with(field, Some((target, predictions)), writer)
}

/// Forecast file: `timestamp, y, yhat, split` for every scored row.
pub fn write_predictions<W: Write>(field: &SpeedField, result: &PipelineResult, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["timestamp", "y", "yhat", "split"])?;
    for (name, p) in [("train", &result.train), ("test", &result.test)] {
        for ((&o, y), yhat) in p.origins.iter().zip(&p.y).zip(&p.yhat) {
            let ts = field.timestamps()[o + result.horizon]
                .format(crate::datastore::TIMESTAMP_FORMAT)
                .to_string();
            w.write_record([ts, y.to_string(), yhat.to_string(), name.to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}
