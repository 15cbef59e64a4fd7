//! Synthetic corridor speeds with recurrent morning congestion.
//!
//! Each day is a sum of congestion windows on a free-flow baseline. A window
//! opens at the bottleneck and spreads upstream one sensor every
//! `1/wave_speed` steps; by default the recovery front follows it upstream
//! at a slower pace, so queues at upstream sensors are shorter. Transitions are logistic ramps a few steps wide.

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, Weekday};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::datastore::SpeedField;
use crate::error::{Error, Result};

pub const STEPS_PER_DAY: usize = 288;
pub const STEP_MINUTES: i64 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DayType {
    Normal,
    Event,
    Weather,
}

impl std::fmt::Display for DayType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DayType::Normal => "normal",
            DayType::Event => "event",
            DayType::Weather => "weather",
        })
    }
}

/// Corridor geometry, regime timing and noise. Times are in 5-minute steps
/// after midnight; sensor indices are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorridorParams {
    pub n_sensors: usize,
    /// Distance between neighbouring sensors in miles; sensor 1 sits at `first_milepost`.
    pub sensor_spacing: f64,
    pub first_milepost: f64,
    pub free_flow_speed: f64,
    pub congested_speed: f64,
    /// Day-to-day spread (uniform half-width) of the congested plateau.
    pub congested_jitter: f64,
    pub bottleneck: usize,
    pub breakdown_step: f64,
    pub breakdown_jitter: f64,
    pub recovery_step: f64,
    pub recovery_jitter: f64,
    /// Sensors per step the congestion front travels upstream.
    pub wave_speed: f64,
    /// Relative day-to-day spread of `wave_speed`.
    pub wave_speed_jitter: f64,
    /// Steps by which recovery at a sensor precedes its downstream neighbour.
    /// Negative values make recovery travel upstream as well, behind the
    /// congestion front.
    pub recovery_lead: f64,
    /// Range of upstream queue extents (in sensors) drawn per day.
    pub queue_extent: (usize, usize),
    /// Width of a breakdown or recovery ramp, in steps.
    pub transition_steps: f64,
    pub noise_sd: f64,
    /// Probability of a random-time incident on any day.
    pub event_prob: f64,
    /// Speed drop of evening events and incidents.
    pub event_magnitude: f64,
    pub event_start_step: f64,
    pub event_length: f64,
    /// Corridor-wide free-flow reduction on weather days.
    pub weather_drop: f64,
    /// Probability that a single reading is a detector glitch.
    pub glitch_prob: f64,
    pub start_date: NaiveDate,
    pub seed: u64,
}

impl Default for CorridorParams {
    fn default() -> Self {
        Self {
            n_sensors: 21,
            sensor_spacing: 0.5,
            first_milepost: 1.0,
            free_flow_speed: 70.0,
            congested_speed: 20.0,
            congested_jitter: 5.0,
            bottleneck: 17,
            breakdown_step: 81.0,
            breakdown_jitter: 4.0,
            recovery_step: 117.0,
            recovery_jitter: 5.0,
            wave_speed: 0.6,
            wave_speed_jitter: 0.2,
            recovery_lead: -1.0,
            queue_extent: (4, 16),
            transition_steps: 3.0,
            noise_sd: 3.0,
            event_prob: 0.0,
            event_magnitude: 35.0,
            event_start_step: 210.0,
            event_length: 24.0,
            weather_drop: 15.0,
            glitch_prob: 0.002,
            start_date: NaiveDate::from_ymd_opt(2013, 1, 7).expect("valid date"),
            seed: 0,
        }
    }
}

impl CorridorParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Param(m.to_string()));
        if self.n_sensors == 0 {
            return bad("corridor needs at least one sensor");
        }
        if !(1..=self.n_sensors).contains(&self.bottleneck) {
            return bad("bottleneck must lie in 1..=n_sensors");
        }
        if !(self.congested_speed > 0.0) || !(self.congested_speed < self.free_flow_speed) {
            return bad("need 0 < congested_speed < free_flow_speed");
        }
        if self.congested_speed - self.congested_jitter <= 0.0 {
            return bad("congested jitter would produce non-positive speeds");
        }
        if !(self.wave_speed > 0.0) || !(0.0..1.0).contains(&self.wave_speed_jitter) {
            return bad("wave speed must be positive with relative jitter in [0, 1)");
        }
        if !(self.noise_sd >= 0.0) || !(self.transition_steps > 0.0) || !(self.sensor_spacing > 0.0) {
            return bad("noise, transition width and spacing must be positive");
        }
        if !(0.0..=1.0).contains(&self.event_prob) || !(0.0..=1.0).contains(&self.glitch_prob) {
            return bad("probabilities must lie in [0, 1]");
        }
        if self.queue_extent.0 > self.queue_extent.1 {
            return bad("queue extent range is reversed");
        }
        if self.recovery_step <= self.breakdown_step {
            return bad("recovery must follow breakdown");
        }
        Ok(())
    }

    pub fn sensor_ids(&self) -> Vec<String> {
        (1..=self.n_sensors).map(|i| format!("S{i:02}")).collect()
    }

    pub fn mileposts(&self) -> Vec<f64> {
        (0..self.n_sensors)
            .map(|i| self.first_milepost + i as f64 * self.sensor_spacing)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    Peak,
    Event,
    Incident,
    Weather,
}

/// One congestion window at one sensor: speeds ramp from `free` down to `floor`
/// around `onset` and back around `recovery`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Regime {
    pub sensor: usize,
    pub kind: WindowKind,
    pub onset: f64,
    pub recovery: f64,
    pub free: f64,
    pub floor: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedDay {
    pub day_type: DayType,
    /// `[sensor][step]`.
    pub speeds: Vec<Vec<f64>>,
    /// Ground-truth windows that produced the day.
    pub regimes: Vec<Regime>,
    pub wave_speed: f64,
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Window opening at sensor `b0` (0-based) and spreading upstream.
#[allow(clippy::too_many_arguments)]
fn queue_windows(
    p: &CorridorParams,
    kind: WindowKind,
    b0: usize,
    start: f64,
    end: f64,
    wave: f64,
    extent: usize,
    drop: f64,
    downstream: bool,
    out: &mut Vec<Regime>,
) {
    for i in 0..p.n_sensors {
        let (dist, up) = if i <= b0 { (b0 - i, true) } else { (i - b0, false) };
        if up && dist > extent {
            continue;
        }
        if !up && !downstream {
            continue;
        }
        let delay = if wave.is_infinite() { 0.0 } else { dist as f64 / wave };
        let onset = start + delay;
        let recovery = if up { end - dist as f64 * p.recovery_lead } else { end };
        if recovery - onset < p.transition_steps {
            continue;
        }
        let depth = if up {
            drop * (1.0 - 0.3 * dist as f64 / (extent.max(1) as f64 + 1.0))
        } else {
            // past the bottleneck traffic accelerates away; only a shallow dip
            drop * 0.3 / dist as f64
        };
        out.push(Regime {
            sensor: i,
            kind,
            onset,
            recovery,
            free: 0.0,
            floor: depth,
        });
    }
}

/// Speeds for one day, noise and glitches included.
pub fn gen_day<R: Rng>(params: &CorridorParams, day_type: DayType, rng: &mut R) -> Result<GeneratedDay> {
    params.validate()?;
    let p = params;
    let n = p.n_sensors;
    let b0 = p.bottleneck - 1;
    let free: Vec<f64> = (0..n).map(|_| p.free_flow_speed - rng.random_range(0.0..=2.0)).collect();
    let wave = if p.wave_speed.is_infinite() {
        f64::INFINITY
    } else {
        p.wave_speed * (1.0 + rng.random_range(-p.wave_speed_jitter..=p.wave_speed_jitter))
    };
    let mut start = p.breakdown_step + p.breakdown_jitter * rng.random_range(-1.0..=1.0);
    let mut end = p.recovery_step + p.recovery_jitter * rng.random_range(-1.0..=1.0);
    let mut congested = p.congested_speed + p.congested_jitter * rng.random_range(-1.0..=1.0);
    let mut extent = rng.random_range(p.queue_extent.0..=p.queue_extent.1);
    let mut base_drop = 0.0;
    if day_type == DayType::Weather {
        start -= 3.0;
        end += 12.0;
        congested = (congested - 5.0).max(0.5 * p.congested_speed);
        extent = n;
        base_drop = p.weather_drop;
    }

    let mut windows = Vec::new();
    queue_windows(p, WindowKind::Peak, b0, start, end, wave, extent, 0.0, true, &mut windows);
    // peak depth brings the bottleneck down to the day's congested speed
    for w in &mut windows {
        let level = free[w.sensor] - base_drop;
        let full = (level - congested).max(0.0);
        w.floor = if w.sensor <= b0 {
            let dist = b0 - w.sensor;
            full * (1.0 - 0.3 * dist as f64 / (extent.max(1) as f64 + 1.0))
        } else {
            full * 0.3 / (w.sensor - b0) as f64
        };
    }
    if day_type == DayType::Event {
        let s = p.event_start_step + rng.random_range(-3.0..=3.0);
        let ext = rng.random_range(p.queue_extent.0..=p.queue_extent.1);
        queue_windows(
            p,
            WindowKind::Event,
            b0,
            s,
            s + p.event_length,
            wave,
            ext,
            p.event_magnitude,
            true,
            &mut windows,
        );
    }
    if rng.random::<f64>() < p.event_prob {
        let site = rng.random_range(0..n);
        let s = rng.random_range(72.0..240.0);
        let len = rng.random_range(6.0..18.0);
        let ext = rng.random_range(1..=p.queue_extent.1.max(1));
        queue_windows(p, WindowKind::Incident, site, s, s + len, wave, ext, p.event_magnitude, false, &mut windows);
    }
    if day_type == DayType::Weather {
        for i in 0..n {
            windows.push(Regime {
                sensor: i,
                kind: WindowKind::Weather,
                onset: 60.0,
                recovery: 240.0,
                free: 0.0,
                floor: base_drop,
            });
        }
    }

    let tau = p.transition_steps / (2.0 * 9f64.ln());
    let floor_speed = 0.25 * p.congested_speed;
    let mut speeds = vec![vec![0.0; STEPS_PER_DAY]; n];
    for (i, row) in speeds.iter_mut().enumerate() {
        for (t, v) in row.iter_mut().enumerate() {
            let tf = t as f64;
            let dip: f64 = windows
                .iter()
                .filter(|w| w.sensor == i)
                .map(|w| w.floor * (logistic((tf - w.onset) / tau) - logistic((tf - w.recovery) / tau)))
                .sum();
            *v = (free[i] - dip).max(floor_speed);
        }
    }
    for w in &mut windows {
        w.free = free[w.sensor];
        w.floor = (free[w.sensor] - w.floor).max(floor_speed);
    }

    if p.noise_sd > 0.0 || p.glitch_prob > 0.0 {
        let noise = Normal::new(0.0, p.noise_sd.max(f64::MIN_POSITIVE)).expect("finite sd");
        let cap = 4.0 * p.noise_sd;
        for row in &mut speeds {
            for v in row.iter_mut() {
                if p.glitch_prob > 0.0 && rng.random::<f64>() < p.glitch_prob {
                    *v = rng.random_range(0.0..=p.free_flow_speed);
                } else if p.noise_sd > 0.0 {
                    *v = (*v + noise.sample(rng).clamp(-cap, cap)).max(0.0);
                }
            }
        }
    }
    Ok(GeneratedDay {
        day_type,
        speeds,
        regimes: windows,
        wave_speed: wave,
    })
}

/// Fractions of day types; must sum to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DayMix {
    pub normal: f64,
    pub event: f64,
    pub weather: f64,
}

impl Default for DayMix {
    fn default() -> Self {
        Self {
            normal: 0.8,
            event: 0.1,
            weather: 0.1,
        }
    }
}

impl std::str::FromStr for DayMix {
    type Err = Error;
    /// `normal=0.8,event=0.1,weather=0.1`; omitted types get zero.
    fn from_str(s: &str) -> Result<Self> {
        let mut mix = DayMix {
            normal: 0.0,
            event: 0.0,
            weather: 0.0,
        };
        for part in s.split(',').filter(|p| !p.trim().is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::Param(format!("mix entry {part:?} is not key=value")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::Param(format!("mix fraction {v:?} is not a number")))?;
            match k.trim() {
                "normal" => mix.normal = v,
                "event" => mix.event = v,
                "weather" => mix.weather = v,
                other => return Err(Error::Param(format!("unknown day type {other:?}"))),
            }
        }
        mix.validate()?;
        Ok(mix)
    }
}

impl std::fmt::Display for DayMix {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "normal={},event={},weather={}", self.normal, self.event, self.weather)
    }
}

impl DayMix {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.normal, self.event, self.weather];
        if parts.iter().any(|v| !(*v >= 0.0)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Param(format!("day mix {self} must be non-negative and sum to 1")));
        }
        Ok(())
    }

    /// Day types for `n` days: counts by largest remainder, order shuffled.
    fn allocate<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<DayType> {
        let types = [DayType::Normal, DayType::Event, DayType::Weather];
        let fr = [self.normal, self.event, self.weather];
        let mut counts: Vec<usize> = fr.iter().map(|f| (f * n as f64).floor() as usize).collect();
        let mut rema: Vec<(usize, f64)> = fr.iter().enumerate().map(|(i, f)| (i, f * n as f64 - counts[i] as f64)).collect();
        rema.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let mut left = n - counts.iter().sum::<usize>();
        for (i, _) in rema {
            if left == 0 {
                break;
            }
            if fr[i] > 0.0 {
                counts[i] += 1;
                left -= 1;
            }
        }
        let mut out: Vec<DayType> = types
            .iter()
            .zip(&counts)
            .flat_map(|(t, &c)| std::iter::repeat_n(*t, c))
            .collect();
        out.shuffle(rng);
        out
    }
}

/// Generated field plus the type of each day.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub field: SpeedField,
    pub day_types: Vec<DayType>,
}

pub fn gen_dataset(params: &CorridorParams, n_days: usize, mix: &DayMix) -> Result<SpeedField> {
    Ok(gen_dataset_detailed(params, n_days, mix)?.field)
}

/// Consecutive weekdays from `start_date`, each day on its own random stream
/// derived from `seed`.
pub fn gen_dataset_detailed(params: &CorridorParams, n_days: usize, mix: &DayMix) -> Result<SynthData> {
    params.validate()?;
    mix.validate()?;
    if n_days == 0 {
        return Err(Error::Param("need at least one day".into()));
    }
    let mut type_rng = ChaCha8Rng::seed_from_u64(params.seed);
    type_rng.set_stream(u64::MAX);
    let day_types = mix.allocate(n_days, &mut type_rng);

    let dates = weekdays(params.start_date, n_days);
    let days: Vec<GeneratedDay> = day_types
        .iter()
        .enumerate()
        .map(|(d, &ty)| {
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
            rng.set_stream(d as u64);
            gen_day(params, ty, &mut rng)
        })
        .collect::<Result<_>>()?;

    let n = params.n_sensors;
    let t_total = n_days * STEPS_PER_DAY;
    let mut timestamps: Vec<NaiveDateTime> = Vec::with_capacity(t_total);
    for date in &dates {
        let midnight = date.and_hms_opt(0, 0, 0).expect("midnight");
        timestamps.extend((0..STEPS_PER_DAY).map(|s| midnight + Duration::minutes(STEP_MINUTES * s as i64)));
    }
    let mut speeds = Vec::with_capacity(n * t_total);
    for s in 0..n {
        for day in &days {
            speeds.extend_from_slice(&day.speeds[s]);
        }
    }
    let field = SpeedField::new(
        params.sensor_ids(),
        params.mileposts(),
        STEP_MINUTES,
        timestamps,
        speeds,
        vec![false; n * t_total],
    )?;
    Ok(SynthData { field, day_types })
}

fn weekdays(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut d = start;
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d += Duration::days(1);
    }
    out
}
