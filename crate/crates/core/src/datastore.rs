//! Loop-detector speed data: CSV ingestion, spatial imputation, day screening
//! and lagged regression designs.
//!
//! A [`SpeedField`] is a sensors × time grid. Columns are grouped into calendar
//! days; inside a day the columns are contiguous at a fixed step, between days
//! the grid may jump (weekends, dropped days).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use chrono::{DateTime, Datelike, NaiveDate, NaiveDateTime, Weekday};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

/// Speeds on a sensors × time grid with a missing-value mask.
#[derive(Debug, Clone)]
pub struct SpeedField {
    sensor_ids: Vec<String>,
    mileposts: Vec<f64>,
    step_minutes: i64,
    timestamps: Vec<NaiveDateTime>,
    day_labels: Vec<usize>,
    days: Vec<NaiveDate>,
    speeds: Vec<f64>,
    missing: Vec<bool>,
}

/// Speeds compare bitwise, so missing cells (always `NaN`) are equal.
impl PartialEq for SpeedField {
    fn eq(&self, other: &Self) -> bool {
        self.sensor_ids == other.sensor_ids
            && self.mileposts == other.mileposts
            && self.step_minutes == other.step_minutes
            && self.timestamps == other.timestamps
            && self.missing == other.missing
            && self.speeds.len() == other.speeds.len()
            && self.speeds.iter().zip(&other.speeds).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl SpeedField {
    /// Build a field from row-major `[sensor][time]` speeds. Missing cells may hold
    /// any value; they are normalised to `NaN`.
    pub fn new(
        sensor_ids: Vec<String>,
        mileposts: Vec<f64>,
        step_minutes: i64,
        timestamps: Vec<NaiveDateTime>,
        mut speeds: Vec<f64>,
        missing: Vec<bool>,
    ) -> Result<Self> {
        let n = sensor_ids.len();
        let t = timestamps.len();
        if n == 0 {
            return Err(Error::Grid("field needs at least one sensor".into()));
        }
        if mileposts.len() != n {
            return Err(Error::Dimension(format!(
                "{} mileposts for {n} sensors",
                mileposts.len()
            )));
        }
        if mileposts.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Grid("mileposts must be strictly increasing".into()));
        }
        if step_minutes <= 0 {
            return Err(Error::Grid("time step must be positive".into()));
        }
        if speeds.len() != n * t || missing.len() != n * t {
            return Err(Error::Dimension(format!(
                "expected {} cells for {n} sensors x {t} times",
                n * t
            )));
        }
        for (v, &m) in speeds.iter_mut().zip(&missing) {
            if m {
                *v = f64::NAN;
            } else if !v.is_finite() || *v < 0.0 {
                return Err(Error::Param(format!("speed {v} is not a finite non-negative value")));
            }
        }
        let mut days: Vec<NaiveDate> = Vec::new();
        let mut day_labels = Vec::with_capacity(t);
        for (c, ts) in timestamps.iter().enumerate() {
            let date = ts.date();
            if days.last() != Some(&date) {
                if days.last().is_some_and(|d| *d > date) {
                    return Err(Error::Grid("timestamps are not increasing".into()));
                }
                days.push(date);
            } else {
                let gap = (*ts - timestamps[c - 1]).num_minutes();
                if (*ts - timestamps[c - 1]).num_seconds() != step_minutes * 60 {
                    return Err(Error::Grid(format!(
                        "gap of {gap} minutes inside {date}, step is {step_minutes}"
                    )));
                }
            }
            day_labels.push(days.len() - 1);
        }
        Ok(Self {
            sensor_ids,
            mileposts,
            step_minutes,
            timestamps,
            day_labels,
            days,
            speeds,
            missing,
        })
    }

    pub fn n_sensors(&self) -> usize {
        self.sensor_ids.len()
    }

    pub fn n_times(&self) -> usize {
        self.timestamps.len()
    }

    pub fn n_days(&self) -> usize {
        self.days.len()
    }

    pub fn sensor_ids(&self) -> &[String] {
        &self.sensor_ids
    }

    pub fn mileposts(&self) -> &[f64] {
        &self.mileposts
    }

    pub fn step_minutes(&self) -> i64 {
        self.step_minutes
    }

    pub fn timestamps(&self) -> &[NaiveDateTime] {
        &self.timestamps
    }

    /// Day index of every column.
    pub fn day_labels(&self) -> &[usize] {
        &self.day_labels
    }

    pub fn days(&self) -> &[NaiveDate] {
        &self.days
    }

    pub fn sensor_index(&self, id: &str) -> Result<usize> {
        self.sensor_ids
            .iter()
            .position(|s| s == id)
            .ok_or_else(|| Error::UnknownSensor(id.to_string()))
    }

    /// Speeds of one sensor over all columns (`NaN` where missing).
    pub fn series(&self, sensor: usize) -> &[f64] {
        let t = self.n_times();
        &self.speeds[sensor * t..(sensor + 1) * t]
    }

    pub fn missing_row(&self, sensor: usize) -> &[bool] {
        let t = self.n_times();
        &self.missing[sensor * t..(sensor + 1) * t]
    }

    pub fn speed(&self, sensor: usize, col: usize) -> Option<f64> {
        let i = sensor * self.n_times() + col;
        (!self.missing[i]).then_some(self.speeds[i])
    }

    pub fn is_missing(&self, sensor: usize, col: usize) -> bool {
        self.missing[sensor * self.n_times() + col]
    }

    pub fn missing_count(&self) -> usize {
        self.missing.iter().filter(|&&m| m).count()
    }

    /// Column ranges of each day, in day order.
    pub fn day_ranges(&self) -> Vec<Range<usize>> {
        let mut out: Vec<Range<usize>> = Vec::with_capacity(self.days.len());
        for (c, &d) in self.day_labels.iter().enumerate() {
            if d == out.len() {
                out.push(c..c + 1);
            } else {
                out[d].end = c + 1;
            }
        }
        out
    }

    /// Replace the speeds of one sensor over a column range (used by filters).
    pub(crate) fn with_series(&self, series: Vec<Vec<f64>>) -> Result<Self> {
        if series.len() != self.n_sensors() || series.iter().any(|s| s.len() != self.n_times()) {
            return Err(Error::Dimension("replacement series shape".into()));
        }
        let mut out = self.clone();
        out.speeds = series.concat();
        for (v, &m) in out.speeds.iter_mut().zip(&out.missing) {
            if m {
                *v = f64::NAN;
            }
        }
        Ok(out)
    }

    /// Keep only the listed days (by current index), relabelling them `0..`.
    pub fn select_days(&self, keep: &[usize]) -> Result<Self> {
        let keep: BTreeSet<usize> = keep.iter().copied().collect();
        if let Some(&bad) = keep.iter().find(|&&d| d >= self.n_days()) {
            return Err(Error::UnknownDay(bad));
        }
        if keep.is_empty() {
            return Err(Error::Empty("no days selected".into()));
        }
        let cols: Vec<usize> = (0..self.n_times())
            .filter(|&c| keep.contains(&self.day_labels[c]))
            .collect();
        let t = self.n_times();
        let mut speeds = Vec::with_capacity(self.n_sensors() * cols.len());
        let mut missing = Vec::with_capacity(self.n_sensors() * cols.len());
        for s in 0..self.n_sensors() {
            for &c in &cols {
                speeds.push(self.speeds[s * t + c]);
                missing.push(self.missing[s * t + c]);
            }
        }
        Self::new(
            self.sensor_ids.clone(),
            self.mileposts.clone(),
            self.step_minutes,
            cols.iter().map(|&c| self.timestamps[c]).collect(),
            speeds,
            missing,
        )
    }
}

/// Column names of the long-format speed CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CsvSchema {
    pub timestamp: String,
    pub sensor_id: String,
    pub speed: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            timestamp: "timestamp".into(),
            sensor_id: "sensor_id".into(),
            speed: "speed".into(),
        }
    }
}

pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    for fmt in [
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M:%S%.f",
        "%Y-%m-%d %H:%M",
    ] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(t);
        }
    }
    DateTime::parse_from_rfc3339(s).ok().map(|t| t.naive_local())
}

fn read_mileposts<R: Read>(reader: R) -> Result<HashMap<String, f64>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Parse {
                row: 1,
                message: format!("sensor metadata lacks column `{name}`"),
            })
    };
    let (id_col, mp_col) = (col("sensor_id")?, col("milepost")?);
    let mut out = HashMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        let mp: f64 = rec
            .get(mp_col)
            .unwrap_or("")
            .trim()
            .parse()
            .map_err(|_| Error::Parse {
                row,
                message: "milepost is not a number".into(),
            })?;
        out.insert(rec.get(id_col).unwrap_or("").trim().to_string(), mp);
    }
    Ok(out)
}

/// Parse a long-format speed CSV (`timestamp,sensor_id,speed`).
///
/// Row numbers in errors count the header as row 1.
pub fn read_speed_csv<R: Read, M: Read>(
    reader: R,
    schema: &CsvSchema,
    sensor_meta: Option<M>,
) -> Result<SpeedField> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Parse {
                row: 1,
                message: format!("missing column `{name}`"),
            })
    };
    let (ts_col, id_col, sp_col) = (
        col(&schema.timestamp)?,
        col(&schema.sensor_id)?,
        col(&schema.speed)?,
    );

    let mut sensor_order: Vec<String> = Vec::new();
    let mut sensor_pos: HashMap<String, usize> = HashMap::new();
    let mut cells: HashMap<(usize, NaiveDateTime), Option<f64>> = HashMap::new();
    let mut times: BTreeSet<NaiveDateTime> = BTreeSet::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        let raw_ts = rec.get(ts_col).unwrap_or("");
        let ts = parse_timestamp(raw_ts).ok_or_else(|| Error::Parse {
            row,
            message: format!("malformed timestamp `{raw_ts}`"),
        })?;
        let id = rec.get(id_col).unwrap_or("").trim().to_string();
        if id.is_empty() {
            return Err(Error::Parse {
                row,
                message: "empty sensor_id".into(),
            });
        }
        let raw_speed = rec.get(sp_col).unwrap_or("").trim();
        let speed = if raw_speed.is_empty() {
            None
        } else {
            let v: f64 = raw_speed.parse().map_err(|_| Error::Parse {
                row,
                message: format!("malformed speed `{raw_speed}`"),
            })?;
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Parse {
                    row,
                    message: format!("speed {v} is not a finite non-negative value"),
                });
            }
            Some(v)
        };
        let s = *sensor_pos.entry(id.clone()).or_insert_with(|| {
            sensor_order.push(id.clone());
            sensor_order.len() - 1
        });
        if cells.insert((s, ts), speed).is_some() {
            return Err(Error::Conflict {
                sensor: id,
                timestamp: ts.format(TIMESTAMP_FORMAT).to_string(),
                row,
            });
        }
        times.insert(ts);
    }
    if times.is_empty() {
        return Err(Error::Empty("speed file has no records".into()));
    }

    // step = smallest gap; every instant must sit on that lattice
    let times: Vec<NaiveDateTime> = times.into_iter().collect();
    let step_secs = times
        .windows(2)
        .map(|w| (w[1] - w[0]).num_seconds())
        .min()
        .unwrap_or(300);
    if step_secs % 60 != 0 {
        return Err(Error::Grid(format!("time step of {step_secs} s is not whole minutes")));
    }
    if let Some(t) = times
        .iter()
        .find(|t| (**t - times[0]).num_seconds() % step_secs != 0)
    {
        return Err(Error::Grid(format!(
            "timestamp {} is off the {}-minute grid",
            t.format(TIMESTAMP_FORMAT),
            step_secs / 60
        )));
    }
    // per day, fill the lattice between first and last instant
    let mut grid: Vec<NaiveDateTime> = Vec::new();
    let mut by_day: BTreeMap<NaiveDate, (NaiveDateTime, NaiveDateTime)> = BTreeMap::new();
    for &t in &times {
        by_day
            .entry(t.date())
            .and_modify(|e| e.1 = t)
            .or_insert((t, t));
    }
    for (_, (first, last)) in by_day {
        let mut t = first;
        while t <= last {
            grid.push(t);
            t += chrono::Duration::seconds(step_secs);
        }
    }

    let (order, mileposts): (Vec<usize>, Vec<f64>) = match sensor_meta {
        Some(meta) => {
            let mp = read_mileposts(meta)?;
            let mut idx: Vec<(usize, f64)> = Vec::with_capacity(sensor_order.len());
            for (s, id) in sensor_order.iter().enumerate() {
                let m = mp.get(id).ok_or_else(|| {
                    Error::Grid(format!("sensor {id} has no milepost in the metadata"))
                })?;
                idx.push((s, *m));
            }
            idx.sort_by(|a, b| a.1.total_cmp(&b.1));
            idx.into_iter().unzip()
        }
        None => ((0..sensor_order.len()).collect(), (0..sensor_order.len()).map(|i| i as f64).collect()),
    };

    let mut speeds = Vec::with_capacity(order.len() * grid.len());
    let mut missing = Vec::with_capacity(order.len() * grid.len());
    for &s in &order {
        for t in &grid {
            match cells.get(&(s, *t)) {
                Some(Some(v)) => {
                    speeds.push(*v);
                    missing.push(false);
                }
                _ => {
                    speeds.push(f64::NAN);
                    missing.push(true);
                }
            }
        }
    }
    SpeedField::new(
        order.iter().map(|&s| sensor_order[s].clone()).collect(),
        mileposts,
        step_secs / 60,
        grid,
        speeds,
        missing,
    )
}

/// Load a long-format speed CSV, optionally with a `sensor_id,milepost` file.
pub fn load_speed_csv(
    path: &Path,
    schema: &CsvSchema,
    sensor_meta: Option<&Path>,
) -> Result<SpeedField> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    match sensor_meta {
        Some(m) => {
            let mf = std::fs::File::open(m).map_err(|e| Error::io(m, e))?;
            read_speed_csv(f, schema, Some(mf))
        }
        None => read_speed_csv(f, schema, None::<std::fs::File>),
    }
}

/// Long-format export; missing cells are written with an empty speed.
pub fn write_speed_csv<W: Write>(field: &SpeedField, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["timestamp", "sensor_id", "speed"])?;
    for (c, ts) in field.timestamps.iter().enumerate() {
        let ts = ts.format(TIMESTAMP_FORMAT).to_string();
        for s in 0..field.n_sensors() {
            let v = field.speed(s, c).map(|v| v.to_string()).unwrap_or_default();
            w.write_record([ts.as_str(), field.sensor_ids[s].as_str(), v.as_str()])?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

pub fn write_sensor_meta<W: Write>(field: &SpeedField, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["sensor_id", "milepost"])?;
    for (id, mp) in field.sensor_ids.iter().zip(&field.mileposts) {
        w.write_record([id.clone(), mp.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// Wide export: `timestamp` followed by one column per sensor in milepost order.
pub fn write_wide_csv<W: Write>(field: &SpeedField, writer: W) -> Result<()> {
    write_wide_with(field, None, writer)
}

pub(crate) fn write_wide_with<W: Write>(
    field: &SpeedField,
    replace: Option<(usize, &[f64])>,
    writer: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["timestamp".to_string()];
    header.extend(field.sensor_ids.iter().cloned());
    w.write_record(&header)?;
    for (c, ts) in field.timestamps.iter().enumerate() {
        let mut rec = vec![ts.format(TIMESTAMP_FORMAT).to_string()];
        for s in 0..field.n_sensors() {
            let v = match replace {
                Some((target, values)) if target == s => {
                    Some(values[c]).filter(|v| v.is_finite())
                }
                _ => field.speed(s, c),
            };
            rec.push(v.map(|v| v.to_string()).unwrap_or_default());
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// What [`impute_spatial`] could not fill.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ImputeSummary {
    pub imputed: usize,
    pub remaining_missing: usize,
    /// Columns missing at every sensor.
    pub empty_columns: Vec<usize>,
}

/// Fill a missing cell from its spatial neighbours: the mean of both neighbours
/// for interior sensors, a copy of the single neighbour for the end sensors.
/// Only originally observed values are used as donors, so the operation is
/// idempotent.
pub fn impute_spatial(field: &SpeedField) -> (SpeedField, ImputeSummary) {
    let n = field.n_sensors();
    let t = field.n_times();
    let mut out = field.clone();
    let mut imputed = 0;
    for s in 0..n {
        for c in 0..t {
            if !field.is_missing(s, c) {
                continue;
            }
            let below = s.checked_sub(1).and_then(|i| field.speed(i, c));
            let above = (s + 1 < n).then(|| field.speed(s + 1, c)).flatten();
            let value = if s == 0 || s + 1 == n {
                below.or(above)
            } else {
                below.zip(above).map(|(a, b)| (a + b) / 2.0)
            };
            if let Some(v) = value {
                out.speeds[s * t + c] = v;
                out.missing[s * t + c] = false;
                imputed += 1;
            }
        }
    }
    let empty_columns = (0..t)
        .filter(|&c| (0..n).all(|s| field.is_missing(s, c)))
        .collect();
    let summary = ImputeSummary {
        imputed,
        remaining_missing: out.missing_count(),
        empty_columns,
    };
    (out, summary)
}

/// Calendar days to remove regardless of data quality.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct DayExclusions {
    #[serde(default)]
    pub dates: Vec<NaiveDate>,
    #[serde(default)]
    pub weekends: bool,
}

/// Drop days whose missing fraction exceeds `max_missing_frac`, plus excluded
/// dates and (optionally) weekends.
pub fn drop_bad_days(
    field: &SpeedField,
    max_missing_frac: f64,
    exclude: &DayExclusions,
) -> Result<SpeedField> {
    if !(0.0..=1.0).contains(&max_missing_frac) {
        return Err(Error::Param(format!(
            "max_missing_frac {max_missing_frac} outside [0, 1]"
        )));
    }
    let n = field.n_sensors();
    let keep: Vec<usize> = field
        .day_ranges()
        .into_iter()
        .enumerate()
        .filter(|(d, cols)| {
            let date = field.days[*d];
            if exclude.dates.contains(&date)
                || (exclude.weekends && matches!(date.weekday(), Weekday::Sat | Weekday::Sun))
            {
                return false;
            }
            let miss = (0..n)
                .map(|s| cols.clone().filter(|&c| field.is_missing(s, c)).count())
                .sum::<usize>();
            miss as f64 / (n * cols.len()) as f64 <= max_missing_frac
        })
        .map(|(d, _)| d)
        .collect();
    if keep.is_empty() {
        return Err(Error::Empty("every day was removed".into()));
    }
    field.select_days(&keep)
}

/// Provenance of one design column.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LagColumn {
    pub sensor: usize,
    pub sensor_id: String,
    pub lag: usize,
}

/// Per-column affine map applied to a design: `x_std = (x - center) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardization {
    /// Population mean and standard deviation of each column; constant columns
    /// keep scale 1.
    pub fn fit(x: &Matrix) -> Self {
        let (rows, cols) = x.shape();
        let mut center = vec![0.0; cols];
        let mut scale = vec![0.0; cols];
        for i in 0..rows {
            for (c, v) in center.iter_mut().zip(x.row(i)) {
                *c += v;
            }
        }
        center.iter_mut().for_each(|c| *c /= rows as f64);
        for i in 0..rows {
            for ((s, c), v) in scale.iter_mut().zip(&center).zip(x.row(i)) {
                *s += (v - c) * (v - c);
            }
        }
        for s in &mut scale {
            let sd = (*s / rows as f64).sqrt();
            *s = if sd > 1e-12 { sd } else { 1.0 };
        }
        Self { center, scale }
    }

    pub fn apply(&self, x: &mut Matrix) {
        for i in 0..x.rows() {
            for ((v, c), s) in x.row_mut(i).iter_mut().zip(&self.center).zip(&self.scale) {
                *v = (*v - c) / s;
            }
        }
    }

    pub fn apply_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(&self.center)
            .zip(&self.scale)
            .map(|((v, c), s)| (v - c) / s)
            .collect()
    }

    pub fn invert(&self, x: &mut Matrix) {
        for i in 0..x.rows() {
            for ((v, c), s) in x.row_mut(i).iter_mut().zip(&self.center).zip(&self.scale) {
                *v = *v * s + c;
            }
        }
    }

    pub fn select(&self, cols: &[usize]) -> Self {
        Self {
            center: cols.iter().map(|&j| self.center[j]).collect(),
            scale: cols.iter().map(|&j| self.scale[j]).collect(),
        }
    }
}

/// Supervised design built from lagged speeds.
#[derive(Debug, Clone, PartialEq)]
pub struct LagDesign {
    /// `[rows × (n·k)]`, standardized when `standardization` is set.
    pub x: Matrix,
    /// `[rows × targets]`, always in mi/h.
    pub y: Matrix,
    pub k: usize,
    pub h: usize,
    pub target_sensors: Vec<usize>,
    pub target_ids: Vec<String>,
    pub column_map: Vec<LagColumn>,
    pub standardization: Option<Standardization>,
    /// Day index of each row.
    pub row_days: Vec<usize>,
    /// Field column of the forecast origin `t` of each row; the target sits at `t + h`.
    pub row_origins: Vec<usize>,
}

impl LagDesign {
    pub fn rows(&self) -> usize {
        self.x.rows()
    }

    /// Distinct days in row order.
    pub fn days(&self) -> Vec<usize> {
        let mut out: Vec<usize> = Vec::new();
        for &d in &self.row_days {
            if !out.contains(&d) {
                out.push(d);
            }
        }
        out
    }

    pub fn target(&self, j: usize) -> Vec<f64> {
        self.y.column(j)
    }

    /// Design matrix in original units.
    pub fn raw_x(&self) -> Matrix {
        let mut x = self.x.clone();
        if let Some(s) = &self.standardization {
            s.invert(&mut x);
        }
        x
    }

    pub fn select_rows(&self, idx: &[usize]) -> LagDesign {
        LagDesign {
            x: self.x.select_rows(idx),
            y: self.y.select_rows(idx),
            row_days: idx.iter().map(|&i| self.row_days[i]).collect(),
            row_origins: idx.iter().map(|&i| self.row_origins[i]).collect(),
            ..self.clone()
        }
    }

    /// Restrict to a subset of predictor columns.
    pub fn select_columns(&self, cols: &[usize]) -> LagDesign {
        LagDesign {
            x: self.x.select_columns(cols),
            column_map: cols.iter().map(|&j| self.column_map[j].clone()).collect(),
            standardization: self.standardization.as_ref().map(|s| s.select(cols)),
            ..self.clone()
        }
    }

    /// Re-standardize with statistics fitted on this design's own rows.
    pub fn restandardized(&self) -> LagDesign {
        let mut x = self.raw_x();
        let st = Standardization::fit(&x);
        st.apply(&mut x);
        LagDesign {
            x,
            standardization: Some(st),
            ..self.clone()
        }
    }

    /// Apply another design's standardization to this design's raw values.
    pub fn standardized_like(&self, st: &Standardization) -> LagDesign {
        let mut x = self.raw_x();
        st.apply(&mut x);
        LagDesign {
            x,
            standardization: Some(st.clone()),
            ..self.clone()
        }
    }

    /// Take targets from `field` (usually the unfiltered measurements) and keep
    /// the inputs. `field` must share the grid the design was built on.
    pub fn retarget(&mut self, field: &SpeedField) -> Result<()> {
        for (j, &s) in self.target_sensors.iter().enumerate() {
            let series = field.series(s);
            for (i, &o) in self.row_origins.iter().enumerate() {
                let c = o + self.h;
                if field.is_missing(s, c) {
                    return Err(Error::IncompleteData {
                        sensor: field.sensor_ids[s].clone(),
                        timestamp: field.timestamps[c].format(TIMESTAMP_FORMAT).to_string(),
                    });
                }
                self.y.set(i, j, series[c]);
            }
        }
        Ok(())
    }
}

/// Lagged design: row for origin `t` holds speeds at `t, t-1, …, t-k+1` of every
/// sensor (column `sensor·k + lag`) and targets at `t + h`. Windows never cross
/// day boundaries.
pub fn build_lag_design(
    field: &SpeedField,
    k: usize,
    h: usize,
    targets: &[usize],
    standardize: bool,
) -> Result<LagDesign> {
    if k == 0 || h == 0 {
        return Err(Error::Param("lag count and horizon must be at least 1".into()));
    }
    if targets.is_empty() {
        return Err(Error::Param("at least one target sensor is required".into()));
    }
    let n = field.n_sensors();
    if let Some(&bad) = targets.iter().find(|&&s| s >= n) {
        return Err(Error::UnknownSensor(format!("index {bad}")));
    }
    let ranges = field.day_ranges();
    for (d, r) in ranges.iter().enumerate() {
        if r.len() < k + h {
            return Err(Error::Window(format!(
                "day {} has {} steps, lags {k} + horizon {h} need {}",
                field.days[d],
                r.len(),
                k + h
            )));
        }
    }
    let mut xdata = Vec::new();
    let mut ydata = Vec::new();
    let mut row_days = Vec::new();
    let mut row_origins = Vec::new();
    for (d, r) in ranges.iter().enumerate() {
        // validate the used block once per day
        for s in 0..n {
            if let Some(c) = r.clone().find(|&c| field.is_missing(s, c)) {
                return Err(Error::IncompleteData {
                    sensor: field.sensor_ids[s].clone(),
                    timestamp: field.timestamps[c].format(TIMESTAMP_FORMAT).to_string(),
                });
            }
        }
        for t in (r.start + k - 1)..(r.end - h) {
            for s in 0..n {
                let row = field.series(s);
                xdata.extend((0..k).map(|lag| row[t - lag]));
            }
            ydata.extend(targets.iter().map(|&s| field.series(s)[t + h]));
            row_days.push(d);
            row_origins.push(t);
        }
    }
    let rows = row_days.len();
    let mut x = Matrix::from_vec(rows, n * k, xdata)?;
    let y = Matrix::from_vec(rows, targets.len(), ydata)?;
    let column_map = (0..n)
        .flat_map(|s| {
            (0..k).map(move |lag| LagColumn {
                sensor: s,
                sensor_id: field.sensor_ids[s].clone(),
                lag,
            })
        })
        .collect();
    let standardization = standardize.then(|| {
        let st = Standardization::fit(&x);
        st.apply(&mut x);
        st
    });
    Ok(LagDesign {
        x,
        y,
        k,
        h,
        target_sensors: targets.to_vec(),
        target_ids: targets.iter().map(|&s| field.sensor_ids[s].clone()).collect(),
        column_map,
        standardization,
        row_days,
        row_origins,
    })
}

/// How days are assigned to the training side of a split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitPolicy {
    /// First `⌊days/2⌋` days train, the rest test.
    FirstHalfDays,
    /// Listed day indices train, the rest test.
    DayList(Vec<usize>),
}

/// Split rows by whole days. Standardization (when present) is refitted on the
/// training rows and applied to both sides.
pub fn split_train_test(design: &LagDesign, policy: &SplitPolicy) -> Result<(LagDesign, LagDesign)> {
    let days = design.days();
    if days.len() < 2 {
        return Err(Error::Param("a split needs at least two days".into()));
    }
    let train_days: BTreeSet<usize> = match policy {
        SplitPolicy::FirstHalfDays => days[..days.len() / 2].iter().copied().collect(),
        SplitPolicy::DayList(list) => {
            if let Some(&bad) = list.iter().find(|d| !days.contains(d)) {
                return Err(Error::UnknownDay(bad));
            }
            list.iter().copied().collect()
        }
    };
    split_by_days(design, &train_days)
}

/// Split rows by an explicit set of training days; see [`split_train_test`].
pub fn split_by_days(
    design: &LagDesign,
    train_days: &BTreeSet<usize>,
) -> Result<(LagDesign, LagDesign)> {
    let (train_idx, test_idx): (Vec<usize>, Vec<usize>) =
        (0..design.rows()).partition(|&i| train_days.contains(&design.row_days[i]));
    if train_idx.is_empty() || test_idx.is_empty() {
        return Err(Error::Empty("split leaves one side without rows".into()));
    }
    let mut train = design.select_rows(&train_idx);
    let mut test = design.select_rows(&test_idx);
    if design.standardization.is_some() {
        train = train.restandardized();
        let st = train.standardization.clone().expect("standardized");
        test = test.standardized_like(&st);
    }
    Ok((train, test))
}
