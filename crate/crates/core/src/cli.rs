//! The `flowcast` executable: one subcommand per pipeline stage.
//!
//! Every run resolves its settings (flags over `--config` over defaults),
//! writes its outputs and a manifest recording the resolved settings and a
//! SHA-256 of each primary output. `flowcast replay` reruns a manifest and
//! checks those hashes.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datastore::{
    build_lag_design, load_speed_csv, split_by_days, write_sensor_meta, write_speed_csv, CsvSchema, LagDesign,
    SpeedField, SplitPolicy, Standardization,
};
use crate::deepnet::{init_network, sgd_train, Activation, DeepNet, NetConfig};
use crate::diagnostics::{diagnostics_report, format_table, DiagnosticsOptions, DiagnosticsReport, TABLE_TESTS};
use crate::error::Error;
use crate::evalharness::{
    compare_models, export_heatmap, write_predictions, EvalOptions, ModelSpec, PipelineSpec,
};
use crate::filters::{filter_field, FilterSpec};
use crate::hypersearch::{random_search, write_leaderboard, SearchSpace};
use crate::linalg::Matrix;
use crate::sparsevar::{fit_sparse_var, select_lambda, support};
use crate::synthgen::{gen_dataset_detailed, CorridorParams, DayMix};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Pipeline(#[from] Error),
    #[error("replay differs from the manifest: {0}")]
    Mismatch(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Pipeline(e) if e.is_numerical() => EXIT_NUMERICAL,
            CliError::Pipeline(Error::Param(_)) => EXIT_USAGE,
            CliError::Pipeline(_) => EXIT_DATA,
            CliError::Mismatch(_) => EXIT_NUMERICAL,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "flowcast", version, about = "Short-term traffic speed forecasting pipeline")]
pub struct Cli {
    /// Cap on worker threads (default: available parallelism).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// JSON file with the subcommand's settings; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corridor dataset.
    Synth(SynthArgs),
    /// Filter every sensor's series day by day.
    Filter(FilterArgs),
    /// Fit a sparse VAR on all days.
    FitVar(FitVarArgs),
    /// Train one network for a target sensor.
    FitDl(FitDlArgs),
    /// Random search over network architectures.
    Search(SearchArgs),
    /// Run and compare pipelines on a train/test split.
    Eval(EvalArgs),
    /// Residual diagnostics for a `y,yhat` CSV.
    Diagnose(DiagnoseArgs),
    /// Rerun a manifest and check its primary outputs are unchanged.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Long-format speed CSV (`timestamp,sensor_id,speed`).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// `sensor_id,milepost` CSV fixing the sensor order.
    #[arg(long)]
    pub meta: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DesignArgs {
    #[arg(long)]
    pub target: Option<String>,
    #[arg(long)]
    pub lags: Option<usize>,
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Filter label applied before building the design: none, M8, TF15, E0.3.
    #[arg(long)]
    pub filter: Option<FilterSpec>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub days: Option<usize>,
    #[arg(long)]
    pub sensors: Option<usize>,
    /// Day-type shares, e.g. `normal=0.8,event=0.1,weather=0.1`.
    #[arg(long)]
    pub mix: Option<DayMix>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_parser = ["median", "tf", "ewma", "none"])]
    pub method: Option<String>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub order: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitVarArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub design: DesignArgs,
    /// Penalty; when omitted it is chosen on trailing validation days (needs `--target`).
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitDlArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub design: DesignArgs,
    /// Hidden widths, e.g. `7,3`.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub activation: Option<Activation>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub design: DesignArgs,
    #[arg(long)]
    pub budget: Option<usize>,
    /// JSON search space; `budget` and `seed` flags override its fields.
    #[arg(long)]
    pub space: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// JSON array of pipeline specs.
    #[arg(long)]
    pub specs: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    /// Root seed; when given, every spec's network seed is derived from it.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    /// CSV with columns `y` and `yhat`; other columns are ignored.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Numeric CSV of regressors, one row per observation.
    #[arg(long)]
    pub regressors: Option<PathBuf>,
    /// Use only rows of this split when the input has a `split` column.
    #[arg(long)]
    pub split: Option<String>,
    /// Column name in the text table.
    #[arg(long)]
    pub label: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
    /// Write the replayed outputs here instead of over the originals.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

// ---------------------------------------------------------------------------
// resolved settings

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DesignConfig {
    pub target: Option<String>,
    pub lags: usize,
    pub horizon: usize,
    pub filter: FilterSpec,
    /// Trailing share of days used for validation.
    pub valid_fraction: f64,
}

impl Default for DesignConfig {
    fn default() -> Self {
        Self {
            target: None,
            lags: 12,
            horizon: 8,
            filter: FilterSpec::None,
            valid_fraction: 0.2,
        }
    }
}

impl DesignConfig {
    fn apply(&mut self, a: &DesignArgs) {
        set(&mut self.target, a.target.clone().map(Some));
        set(&mut self.lags, a.lags);
        set(&mut self.horizon, a.horizon);
        set(&mut self.filter, a.filter);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub days: usize,
    pub mix: DayMix,
    pub corridor: CorridorParams,
    pub out: PathBuf,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            days: 120,
            mix: DayMix::default(),
            corridor: CorridorParams {
                seed: 7,
                ..Default::default()
            },
            out: "speeds.csv".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub data: PathBuf,
    pub meta: Option<PathBuf>,
    pub filter: FilterSpec,
    pub out: PathBuf,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            data: "speeds.csv".into(),
            meta: None,
            filter: FilterSpec::Median { window: 8 },
            out: "filtered.csv".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitVarConfig {
    pub data: PathBuf,
    pub meta: Option<PathBuf>,
    pub design: DesignConfig,
    pub lambda: Option<f64>,
    pub lambda_grid: usize,
    pub lambda_min_ratio: f64,
    pub out: PathBuf,
}

impl Default for FitVarConfig {
    fn default() -> Self {
        let e = EvalOptions::default();
        Self {
            data: "speeds.csv".into(),
            meta: None,
            design: DesignConfig::default(),
            lambda: None,
            lambda_grid: e.lambda_grid,
            lambda_min_ratio: e.lambda_min_ratio,
            out: "var".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitDlConfig {
    pub data: PathBuf,
    pub meta: Option<PathBuf>,
    pub design: DesignConfig,
    pub net: NetConfig,
    pub out: PathBuf,
}

impl Default for FitDlConfig {
    fn default() -> Self {
        Self {
            data: "speeds.csv".into(),
            meta: None,
            design: DesignConfig::default(),
            net: NetConfig::default(),
            out: "dl".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub data: PathBuf,
    pub meta: Option<PathBuf>,
    pub design: DesignConfig,
    pub space: SearchSpace,
    pub out: PathBuf,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            data: "speeds.csv".into(),
            meta: None,
            design: DesignConfig::default(),
            space: SearchSpace::default(),
            out: "search".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub data: PathBuf,
    pub meta: Option<PathBuf>,
    pub specs: Vec<PipelineSpec>,
    pub split: SplitPolicy,
    pub options: EvalOptions,
    pub diagnostics: DiagnosticsOptions,
    pub seed: Option<u64>,
    pub out: PathBuf,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            data: "speeds.csv".into(),
            meta: None,
            specs: Vec::new(),
            split: SplitPolicy::FirstHalfDays,
            options: EvalOptions::default(),
            diagnostics: DiagnosticsOptions::default(),
            seed: None,
            out: "report".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiagnoseConfig {
    pub input: PathBuf,
    pub regressors: Option<PathBuf>,
    /// Keep only rows whose `split` column has this value (`train`/`test`).
    pub split: Option<String>,
    pub label: String,
    pub options: DiagnosticsOptions,
    pub out: PathBuf,
}

impl Default for DiagnoseConfig {
    fn default() -> Self {
        Self {
            input: "predictions.csv".into(),
            regressors: None,
            split: None,
            label: "model".into(),
            options: DiagnosticsOptions::default(),
            out: "diagnostics".into(),
        }
    }
}

/// A fully resolved run, as stored in a manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "subcommand", content = "config", rename_all = "kebab-case")]
pub enum Run {
    Synth(SynthConfig),
    Filter(FilterConfig),
    FitVar(FitVarConfig),
    FitDl(FitDlConfig),
    Search(SearchConfig),
    Eval(EvalConfig),
    Diagnose(DiagnoseConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    /// Relative to the manifest's directory.
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outputs {
    /// Deterministic given the resolved config.
    pub primary: Vec<OutputFile>,
    /// Informational files that may differ between runs (timings).
    pub auxiliary: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    #[serde(flatten)]
    pub run: Run,
    pub tool_version: String,
    pub inputs: Vec<PathBuf>,
    pub outputs: Outputs,
    pub seeds: BTreeMap<String, u64>,
    pub workers: usize,
    pub wall_seconds: f64,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&s).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn base<T: DeserializeOwned + Default>(config: Option<&Path>) -> CliResult<T> {
    config.map_or_else(|| Ok(T::default()), read_json)
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

impl Run {
    /// Merge flags over the config file over defaults.
    pub fn resolve(command: Command, config: Option<&Path>) -> CliResult<Run> {
        let run = match command {
            Command::Synth(a) => {
                let mut c: SynthConfig = base(config)?;
                set(&mut c.days, a.days);
                if let Some(n) = a.sensors {
                    // keep the bottleneck at the same relative position
                    let c0 = &c.corridor;
                    let rel = c0.bottleneck as f64 / c0.n_sensors as f64;
                    c.corridor.bottleneck = ((rel * n as f64).round() as usize).clamp(1, n.max(1));
                    c.corridor.n_sensors = n;
                }
                set(&mut c.mix, a.mix);
                set(&mut c.corridor.seed, a.seed);
                set(&mut c.out, a.out);
                Run::Synth(c)
            }
            Command::Filter(a) => {
                let mut c: FilterConfig = base(config)?;
                set(&mut c.data, a.data.data);
                set(&mut c.meta, a.data.meta.map(Some));
                set(&mut c.out, a.out);
                c.filter = match a.method.as_deref() {
                    None => c.filter,
                    Some("none") => FilterSpec::None,
                    Some("median") => FilterSpec::Median {
                        window: a.window.unwrap_or(8),
                    },
                    Some("tf") => FilterSpec::TrendFilter {
                        lambda: a.lambda.unwrap_or(15.0),
                        order: a.order.unwrap_or(2),
                    },
                    Some("ewma") => FilterSpec::Ewma {
                        alpha: a.alpha.unwrap_or(0.3),
                    },
                    Some(m) => return Err(CliError::Usage(format!("unknown filter method {m}"))),
                };
                if a.method.is_none() {
                    // parameter flags adjust the configured method
                    match &mut c.filter {
                        FilterSpec::Median { window } => set(window, a.window),
                        FilterSpec::TrendFilter { lambda, order } => {
                            set(lambda, a.lambda);
                            set(order, a.order);
                        }
                        FilterSpec::Ewma { alpha } => set(alpha, a.alpha),
                        FilterSpec::None => {}
                    }
                }
                Run::Filter(c)
            }
            Command::FitVar(a) => {
                let mut c: FitVarConfig = base(config)?;
                set(&mut c.data, a.data.data);
                set(&mut c.meta, a.data.meta.map(Some));
                c.design.apply(&a.design);
                set(&mut c.lambda, a.lambda.map(Some));
                set(&mut c.out, a.out);
                Run::FitVar(c)
            }
            Command::FitDl(a) => {
                let mut c: FitDlConfig = base(config)?;
                set(&mut c.data, a.data.data);
                set(&mut c.meta, a.data.meta.map(Some));
                c.design.apply(&a.design);
                set(&mut c.net.hidden_widths, a.hidden);
                set(&mut c.net.activation, a.activation);
                set(&mut c.net.penalty_weight, a.lambda);
                set(&mut c.net.dropout_p, a.dropout);
                set(&mut c.net.epochs, a.epochs);
                set(&mut c.net.seed, a.seed);
                set(&mut c.out, a.out);
                Run::FitDl(c)
            }
            Command::Search(a) => {
                let mut c: SearchConfig = base(config)?;
                set(&mut c.data, a.data.data);
                set(&mut c.meta, a.data.meta.map(Some));
                c.design.apply(&a.design);
                if let Some(p) = &a.space {
                    c.space = read_json(p)?;
                }
                set(&mut c.space.budget, a.budget);
                set(&mut c.space.seed, a.seed);
                set(&mut c.out, a.out);
                Run::Search(c)
            }
            Command::Eval(a) => {
                let mut c: EvalConfig = base(config)?;
                set(&mut c.data, a.data.data);
                set(&mut c.meta, a.data.meta.map(Some));
                if let Some(p) = &a.specs {
                    c.specs = read_json(p)?;
                }
                set(&mut c.seed, a.seed.map(Some));
                set(&mut c.out, a.out);
                Run::Eval(c)
            }
            Command::Diagnose(a) => {
                let mut c: DiagnoseConfig = base(config)?;
                set(&mut c.input, a.input);
                set(&mut c.regressors, a.regressors.map(Some));
                set(&mut c.split, a.split.map(Some));
                set(&mut c.label, a.label);
                set(&mut c.options.seed, a.seed);
                set(&mut c.out, a.out);
                Run::Diagnose(c)
            }
            Command::Replay(_) => return Err(CliError::Usage("replay has no settings of its own".into())),
        };
        Ok(run.absolutized())
    }

    /// Input paths made absolute so a manifest can be replayed from anywhere.
    fn absolutized(mut self) -> Run {
        let fix = |p: &mut PathBuf| *p = absolute(p);
        let fix_opt = |p: &mut Option<PathBuf>| {
            if let Some(p) = p {
                *p = absolute(p);
            }
        };
        match &mut self {
            Run::Synth(c) => fix(&mut c.out),
            Run::Filter(c) => {
                fix(&mut c.data);
                fix_opt(&mut c.meta);
                fix(&mut c.out);
            }
            Run::FitVar(c) => {
                fix(&mut c.data);
                fix_opt(&mut c.meta);
                fix(&mut c.out);
            }
            Run::FitDl(c) => {
                fix(&mut c.data);
                fix_opt(&mut c.meta);
                fix(&mut c.out);
            }
            Run::Search(c) => {
                fix(&mut c.data);
                fix_opt(&mut c.meta);
                fix(&mut c.out);
            }
            Run::Eval(c) => {
                fix(&mut c.data);
                fix_opt(&mut c.meta);
                fix(&mut c.out);
            }
            Run::Diagnose(c) => {
                fix(&mut c.input);
                fix_opt(&mut c.regressors);
                fix(&mut c.out);
            }
        }
        self
    }

    pub fn name(&self) -> &'static str {
        match self {
            Run::Synth(_) => "synth",
            Run::Filter(_) => "filter",
            Run::FitVar(_) => "fit-var",
            Run::FitDl(_) => "fit-dl",
            Run::Search(_) => "search",
            Run::Eval(_) => "eval",
            Run::Diagnose(_) => "diagnose",
        }
    }

    /// Whether `out` names a file (as opposed to a directory).
    fn writes_file(&self) -> bool {
        matches!(self, Run::Synth(_) | Run::Filter(_))
    }

    fn out_mut(&mut self) -> &mut PathBuf {
        match self {
            Run::Synth(c) => &mut c.out,
            Run::Filter(c) => &mut c.out,
            Run::FitVar(c) => &mut c.out,
            Run::FitDl(c) => &mut c.out,
            Run::Search(c) => &mut c.out,
            Run::Eval(c) => &mut c.out,
            Run::Diagnose(c) => &mut c.out,
        }
    }

    fn out(&self) -> &Path {
        match self {
            Run::Synth(c) => &c.out,
            Run::Filter(c) => &c.out,
            Run::FitVar(c) => &c.out,
            Run::FitDl(c) => &c.out,
            Run::Search(c) => &c.out,
            Run::Eval(c) => &c.out,
            Run::Diagnose(c) => &c.out,
        }
    }

    /// Where the manifest goes: `<file>.manifest.json` or `<dir>/manifest.json`.
    pub fn manifest_path(&self) -> PathBuf {
        let out = self.out();
        if self.writes_file() {
            let mut name = out.file_name().unwrap_or_default().to_os_string();
            name.push(".manifest.json");
            out.with_file_name(name)
        } else {
            out.join("manifest.json")
        }
    }

    /// Move the outputs into `dir`, keeping file names.
    pub fn relocate(&mut self, dir: &Path) {
        let dir = absolute(dir);
        let file = self.writes_file();
        let out = self.out_mut();
        *out = if file {
            dir.join(out.file_name().unwrap_or_default())
        } else {
            dir
        };
    }
}

// ---------------------------------------------------------------------------
// execution

struct Produced {
    inputs: Vec<PathBuf>,
    primary: Vec<PathBuf>,
    auxiliary: Vec<PathBuf>,
    seeds: BTreeMap<String, u64>,
}

impl Produced {
    fn new(inputs: Vec<PathBuf>) -> Self {
        Self {
            inputs,
            primary: Vec::new(),
            auxiliary: Vec::new(),
            seeds: BTreeMap::new(),
        }
    }
}

fn create_file(path: &Path) -> CliResult<std::fs::File> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(std::fs::File::create(path).map_err(|e| Error::io(path, e))?)
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    use std::io::Write;
    create_file(path)?
        .write_all(text.as_bytes())
        .map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> CliResult<()> {
    let mut s = serde_json::to_string_pretty(v).map_err(Error::from)?;
    s.push('\n');
    write_text(path, &s)
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().unwrap_or_default().to_string_lossy();
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn load(data: &Path, meta: Option<&Path>) -> CliResult<SpeedField> {
    Ok(load_speed_csv(data, &CsvSchema::default(), meta)?)
}

fn data_inputs(data: &Path, meta: Option<&Path>) -> Vec<PathBuf> {
    std::iter::once(data.to_path_buf()).chain(meta.map(Path::to_path_buf)).collect()
}

/// Seed for stage `stream` of a run rooted at `root`.
pub fn derive_seed(root: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(root);
    rng.set_stream(stream);
    rng.next_u64()
}

/// Design for one target with trailing validation days split off.
struct Prepared {
    field: SpeedField,
    design: LagDesign,
    fit: LagDesign,
    valid: LagDesign,
}

fn prepare(field: SpeedField, d: &DesignConfig, target: &str) -> CliResult<Prepared> {
    let t = field.sensor_index(target)?;
    let filtered = filter_field(&field, &d.filter)?;
    let mut design = build_lag_design(&filtered, d.lags, d.horizon, &[t], true)?;
    // targets stay the measured speeds
    design.retarget(&field)?;
    let days = design.days();
    if days.len() < 2 {
        return Err(Error::Param("validation needs at least two days".into()).into());
    }
    let n_valid = ((days.len() as f64 * d.valid_fraction).round() as usize).clamp(1, days.len() - 1);
    let keep: std::collections::BTreeSet<usize> = days[..days.len() - n_valid].iter().copied().collect();
    let (fit, valid) = split_by_days(&design, &keep)?;
    Ok(Prepared {
        field,
        design,
        fit,
        valid,
    })
}

fn need_target(d: &DesignConfig) -> CliResult<String> {
    d.target
        .clone()
        .ok_or_else(|| CliError::Usage("--target is required".into()))
}

/// A trained network with what is needed to feed it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DlArtifact {
    pub version: u32,
    pub target: String,
    pub lags: usize,
    pub horizon: usize,
    pub filter: FilterSpec,
    pub input_standardization: Standardization,
    pub net: DeepNet,
}

fn run_synth(c: &SynthConfig) -> CliResult<Produced> {
    let data = gen_dataset_detailed(&c.corridor, c.days, &c.mix)?;
    let mut p = Produced::new(Vec::new());
    write_speed_csv(&data.field, create_file(&c.out)?)?;
    let meta = sibling(&c.out, "sensors.csv");
    write_sensor_meta(&data.field, create_file(&meta)?)?;
    let days = sibling(&c.out, "days.csv");
    let mut w = csv::Writer::from_writer(create_file(&days)?);
    w.write_record(["date", "day_type"]).map_err(Error::from)?;
    for (d, t) in data.field.days().iter().zip(&data.day_types) {
        w.write_record([d.to_string(), t.to_string()]).map_err(Error::from)?;
    }
    w.flush().map_err(|e| Error::io(&days, e))?;
    p.primary = vec![c.out.clone(), meta, days];
    p.seeds.insert("corridor".into(), c.corridor.seed);
    Ok(p)
}

fn run_filter(c: &FilterConfig) -> CliResult<Produced> {
    let field = load(&c.data, c.meta.as_deref())?;
    let out = filter_field(&field, &c.filter)?;
    write_speed_csv(&out, create_file(&c.out)?)?;
    let mut p = Produced::new(data_inputs(&c.data, c.meta.as_deref()));
    p.primary.push(c.out.clone());
    Ok(p)
}

fn run_fit_var(c: &FitVarConfig) -> CliResult<Produced> {
    let field = load(&c.data, c.meta.as_deref())?;
    let mut p = Produced::new(data_inputs(&c.data, c.meta.as_deref()));
    let (design, lambda, selection) = match &c.design.target {
        Some(target) => {
            let prep = prepare(field, &c.design, target)?;
            match c.lambda {
                Some(l) => (prep.design, l, None),
                None => {
                    let sel = select_lambda(&prep.fit, &prep.valid, 0, c.lambda_grid, c.lambda_min_ratio)?;
                    (prep.design, sel.lambda, Some(sel))
                }
            }
        }
        None => {
            let lambda = c
                .lambda
                .ok_or_else(|| CliError::Usage("--lambda is required when fitting every sensor".into()))?;
            let filtered = filter_field(&field, &c.design.filter)?;
            let all: Vec<usize> = (0..field.n_sensors()).collect();
            let mut design = build_lag_design(&filtered, c.design.lags, c.design.horizon, &all, true)?;
            design.retarget(&field)?;
            (design, lambda, None)
        }
    };
    let model = fit_sparse_var(&design, lambda)?;
    let model_path = c.out.join("model.json");
    model.save(&model_path).map_err(CliError::from)?;
    p.primary.push(model_path);
    let sup = c.out.join("support.csv");
    let mut w = csv::Writer::from_writer(create_file(&sup)?);
    w.write_record(["target", "column", "sensor_id", "lag", "coefficient"])
        .map_err(Error::from)?;
    for t in &model.target_ids {
        for s in support(&model, t, 0.0)? {
            w.write_record([
                t.clone(),
                s.column.to_string(),
                s.sensor_id,
                s.lag.to_string(),
                s.coefficient.to_string(),
            ])
            .map_err(Error::from)?;
        }
    }
    w.flush().map_err(|e| Error::io(&sup, e))?;
    p.primary.push(sup);
    if let Some(sel) = selection {
        let path = c.out.join("lambda_path.json");
        write_json(&path, &sel)?;
        p.primary.push(path);
    }
    Ok(p)
}

fn dl_artifact(c: &DesignConfig, target: &str, fit: &LagDesign, net: DeepNet) -> DlArtifact {
    DlArtifact {
        version: 1,
        target: target.to_string(),
        lags: c.lags,
        horizon: c.horizon,
        filter: c.filter,
        input_standardization: fit.standardization.clone().expect("lag designs are standardized"),
        net,
    }
}

fn run_fit_dl(c: &FitDlConfig) -> CliResult<Produced> {
    let target = need_target(&c.design)?;
    let prep = prepare(load(&c.data, c.meta.as_deref())?, &c.design, &target)?;
    let cfg = NetConfig {
        input_dim: prep.fit.x.cols(),
        output_dim: 1,
        ..c.net.clone()
    };
    let net = sgd_train(&init_network(&cfg)?, &prep.fit, &prep.valid)?;
    let mut p = Produced::new(data_inputs(&c.data, c.meta.as_deref()));
    p.seeds.insert("net".into(), cfg.seed);
    let path = c.out.join("model.json");
    write_json(&path, &dl_artifact(&c.design, &target, &prep.fit, net))?;
    p.primary.push(path);
    Ok(p)
}

fn run_search(c: &SearchConfig, workers: usize) -> CliResult<Produced> {
    let target = need_target(&c.design)?;
    let prep = prepare(load(&c.data, c.meta.as_deref())?, &c.design, &target)?;
    let outcome = random_search(&prep.fit, &prep.valid, &c.space, workers)?;
    let mut p = Produced::new(data_inputs(&c.data, c.meta.as_deref()));
    p.seeds.insert("search".into(), c.space.seed);
    let best = c.out.join("best.json");
    write_json(&best, &dl_artifact(&c.design, &target, &prep.fit, outcome.best))?;
    p.primary.push(best);
    let board = c.out.join("leaderboard.csv");
    write_leaderboard(&outcome.leaderboard, create_file(&board)?)?;
    p.auxiliary.push(board);
    for (i, e) in &outcome.failures {
        eprintln!("candidate {i} failed: {e}");
    }
    drop(prep.field);
    Ok(p)
}

fn file_label(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect()
}

fn run_eval(c: &EvalConfig, workers: usize) -> CliResult<Produced> {
    if c.specs.is_empty() {
        return Err(CliError::Usage("eval needs at least one pipeline spec (--specs)".into()));
    }
    let field = load(&c.data, c.meta.as_deref())?;
    let mut p = Produced::new(data_inputs(&c.data, c.meta.as_deref()));
    let mut specs = c.specs.clone();
    let mut diag_opts = c.diagnostics.clone();
    if let Some(root) = c.seed {
        p.seeds.insert("root".into(), root);
        diag_opts.seed = derive_seed(root, u64::MAX);
        for (i, s) in specs.iter_mut().enumerate() {
            let seed = derive_seed(root, i as u64);
            match &mut s.model {
                ModelSpec::Dl { config } => config.seed = seed,
                ModelSpec::DlSearch { space } => space.seed = seed,
                _ => continue,
            }
            p.seeds.insert(s.label(), seed);
        }
    }
    let labels: Vec<String> = specs.iter().map(|s| s.label()).collect();
    if let Some(dup) = labels.iter().enumerate().find(|(i, l)| labels[..*i].contains(l)) {
        return Err(CliError::Usage(format!("two specs share the label {}", dup.1)));
    }
    let opts = EvalOptions {
        workers,
        ..c.options.clone()
    };
    let cmp = compare_models(&specs, &field, &c.split, &opts)?;
    let table = c.out.join("table.csv");
    cmp.write_table(create_file(&table)?)?;
    p.primary.push(table);
    let mut reports: Vec<(String, DiagnosticsReport)> = Vec::new();
    for r in &cmp.results {
        let res = match r {
            Ok(res) => res,
            Err((label, e)) => {
                eprintln!("{label} failed: {e}");
                continue;
            }
        };
        let name = file_label(&res.row.label);
        let pred = c.out.join(format!("predictions_{name}.csv"));
        write_predictions(&field, res, create_file(&pred)?)?;
        let heat = c.out.join(format!("heatmap_{name}.csv"));
        export_heatmap(&field, &res.aligned(field.n_times()), res.target_sensor, create_file(&heat)?)?;
        p.primary.extend([pred, heat]);
        // residuals of the test rows, with the forecasts as the regressor
        let report = diagnostics_report(&res.test.y, &res.test.yhat, None, &diag_opts)?;
        let diag = c.out.join(format!("diagnostics_{name}.json"));
        write_json(&diag, &report)?;
        p.primary.push(diag);
        if let Some(board) = &res.leaderboard {
            let path = c.out.join(format!("leaderboard_{name}.csv"));
            write_leaderboard(board, create_file(&path)?)?;
            p.auxiliary.push(path);
        }
        reports.push((res.row.label.clone(), report));
    }
    if !reports.is_empty() {
        let refs: Vec<(&str, &DiagnosticsReport)> = reports.iter().map(|(l, r)| (l.as_str(), r)).collect();
        let text = c.out.join("diagnostics.txt");
        write_text(&text, &format_table(&refs, &TABLE_TESTS))?;
        p.primary.push(text);
    }
    print!("{cmp}");
    let failed = cmp.results.iter().filter(|r| r.is_err()).count();
    if failed == cmp.results.len() {
        let (_, e) = cmp.results.into_iter().find_map(|r| r.err()).expect("all failed");
        return Err(e.into());
    }
    Ok(p)
}

/// Numeric columns of a CSV. `only` limits parsing to the named columns;
/// `filter` keeps rows whose column `.0` equals `.1`.
fn read_numeric_csv(
    path: &Path,
    only: Option<&[&str]>,
    filter: Option<(&str, &str)>,
) -> CliResult<(Vec<String>, Vec<Vec<f64>>)> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(f);
    let headers: Vec<String> = rdr.headers().map_err(Error::from)?.iter().map(|h| h.trim().to_string()).collect();
    let missing = |name: &str| {
        CliError::Pipeline(Error::Parse {
            row: 1,
            message: format!("{} lacks a `{name}` column", path.display()),
        })
    };
    let wanted: Vec<usize> = match only {
        Some(names) => names
            .iter()
            .map(|n| headers.iter().position(|h| h == n).ok_or_else(|| missing(n)))
            .collect::<CliResult<_>>()?,
        None => (0..headers.len()).collect(),
    };
    let filter = match filter {
        Some((col, value)) => Some((headers.iter().position(|h| h == col).ok_or_else(|| missing(col))?, value)),
        None => None,
    };
    let mut cols = vec![Vec::new(); wanted.len()];
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(Error::from)?;
        if let Some((j, value)) = filter {
            if rec.get(j).map(str::trim) != Some(value) {
                continue;
            }
        }
        for (out, &j) in cols.iter_mut().zip(&wanted) {
            let v = rec.get(j).unwrap_or("").trim();
            out.push(v.parse().map_err(|_| Error::Parse {
                row: i + 2,
                message: format!("`{v}` in column {} is not a number", headers[j]),
            })?);
        }
    }
    let names = wanted.iter().map(|&j| headers[j].clone()).collect();
    Ok((names, cols))
}

fn run_diagnose(c: &DiagnoseConfig) -> CliResult<Produced> {
    let filter = c.split.as_deref().map(|s| ("split", s));
    let (_, mut cols) = read_numeric_csv(&c.input, Some(&["y", "yhat"]), filter)?;
    let yhat = cols.pop().expect("two columns");
    let y = cols.pop().expect("two columns");
    let mut p = Produced::new(vec![c.input.clone()]);
    let regressors = match &c.regressors {
        Some(path) => {
            p.inputs.push(path.clone());
            let (_, rc) = read_numeric_csv(path, None, None)?;
            let n = rc.first().map_or(0, Vec::len);
            let mut m = Matrix::zeros(n, rc.len());
            for (j, col) in rc.iter().enumerate() {
                for (i, v) in col.iter().enumerate() {
                    m.row_mut(i)[j] = *v;
                }
            }
            Some(m)
        }
        None => None,
    };
    let report = diagnostics_report(&y, &yhat, regressors.as_ref(), &c.options)?;
    p.seeds.insert("lee_white_granger".into(), c.options.seed);
    let json = c.out.join("report.json");
    write_json(&json, &report)?;
    let table = format_table(&[(c.label.as_str(), &report)], &TABLE_TESTS);
    let text = c.out.join("table.txt");
    write_text(&text, &table)?;
    print!("{table}");
    for (name, why) in &report.degenerate {
        eprintln!("{name}: {why}");
    }
    p.primary.extend([json, text]);
    Ok(p)
}

fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

fn relative_to(path: &Path, dir: &Path) -> PathBuf {
    path.strip_prefix(dir).map_or_else(|_| path.to_path_buf(), Path::to_path_buf)
}

/// Execute a resolved run and write its manifest.
pub fn execute(run: &Run, workers: usize) -> CliResult<RunManifest> {
    let started = Instant::now();
    if !run.writes_file() {
        std::fs::create_dir_all(run.out()).map_err(|e| Error::io(run.out(), e))?;
    }
    let produced = match run {
        Run::Synth(c) => run_synth(c)?,
        Run::Filter(c) => run_filter(c)?,
        Run::FitVar(c) => run_fit_var(c)?,
        Run::FitDl(c) => run_fit_dl(c)?,
        Run::Search(c) => run_search(c, workers)?,
        Run::Eval(c) => run_eval(c, workers)?,
        Run::Diagnose(c) => run_diagnose(c)?,
    };
    let manifest_path = run.manifest_path();
    let dir = manifest_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let primary = produced
        .primary
        .iter()
        .map(|p| {
            Ok(OutputFile {
                path: relative_to(p, &dir),
                sha256: sha256_file(p)?,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    let manifest = RunManifest {
        run: run.clone(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        inputs: produced.inputs,
        outputs: Outputs {
            primary,
            auxiliary: produced.auxiliary.iter().map(|p| relative_to(p, &dir)).collect(),
        },
        seeds: produced.seeds,
        workers,
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    write_json(&manifest_path, &manifest)?;
    Ok(manifest)
}

/// Rerun a manifest, optionally into another directory, and compare hashes.
pub fn replay(manifest: &Path, out: Option<&Path>, workers: usize) -> CliResult<RunManifest> {
    let old: RunManifest = read_json(manifest)?;
    let mut run = old.run.clone();
    if let Some(dir) = out {
        run.relocate(dir);
    }
    let new = execute(&run, workers)?;
    let differing: Vec<String> = old
        .outputs
        .primary
        .iter()
        .filter(|o| !new.outputs.primary.iter().any(|n| n.path == o.path && n.sha256 == o.sha256))
        .map(|o| o.path.display().to_string())
        .collect();
    if !differing.is_empty() || old.outputs.primary.len() != new.outputs.primary.len() {
        return Err(CliError::Mismatch(differing.join(", ")));
    }
    Ok(new)
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Parse `args` and run; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let workers = cli.workers.unwrap_or_else(default_workers).max(1);
    let result = match cli.command {
        Command::Replay(a) => replay(&a.manifest, a.out.as_deref(), workers).map(|m| {
            eprintln!("replay: {} primary outputs identical", m.outputs.primary.len());
        }),
        command => Run::resolve(command, cli.config.as_deref())
            .and_then(|run| execute(&run, workers))
            .map(|m| eprintln!("{}: wrote {} outputs", m.run.name(), m.outputs.primary.len() + m.outputs.auxiliary.len())),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
