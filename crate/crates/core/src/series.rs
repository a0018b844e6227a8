//! Traffic series ingestion, daily-periodic decomposition and a seeded
//! generator of spiky synthetic traffic.
//!
//! A series is a contiguous run of slots of fixed width. The daily baseline is
//! the per-slot-of-day mean over complete days; the residual is what is left
//! after subtracting the tiled baseline and is the component the forecasters
//! model.

use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, SecondsFormat, TimeDelta, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_SLOT_MINUTES: i64 = 15;
const SECONDS_PER_DAY: i64 = 86_400;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    #[default]
    Downlink,
    Uplink,
}

/// Uniformly sampled traffic volumes.
#[derive(Clone, Debug, PartialEq)]
pub struct TrafficSeries {
    start_time: DateTime<Utc>,
    slot_width: TimeDelta,
    values: Vec<f64>,
    direction: Direction,
}

impl TrafficSeries {
    /// Builds a series, checking that it is nonempty, finite and has a
    /// positive slot width. Residual series may hold negative values, so
    /// nonnegativity is enforced at ingestion instead of here.
    pub fn new(start_time: DateTime<Utc>, slot_width: TimeDelta, values: Vec<f64>) -> Result<Self> {
        if slot_width <= TimeDelta::zero() {
            return Err(Error::invalid("slot width must be positive"));
        }
        if values.is_empty() {
            return Err(Error::TooShort { needed: 1, got: 0 });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("value at index {i} is not finite")));
        }
        Ok(Self {
            start_time,
            slot_width,
            values,
            direction: Direction::Downlink,
        })
    }

    pub fn with_direction(mut self, direction: Direction) -> Self {
        self.direction = direction;
        self
    }

    pub fn start_time(&self) -> DateTime<Utc> {
        self.start_time
    }

    pub fn slot_width(&self) -> TimeDelta {
        self.slot_width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn timestamp(&self, index: usize) -> DateTime<Utc> {
        self.start_time + self.slot_width * index as i32
    }

    /// Number of slots in one day; the slot width must divide a day evenly.
    pub fn slots_per_day(&self) -> Result<usize> {
        slots_per_day(self.slot_width)
    }

    /// Copy of the slots in `range`, with the start time shifted accordingly.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.len() {
            return Err(Error::Range {
                from: range.start,
                to: range.end.saturating_sub(1),
                len: self.len(),
            });
        }
        let start = self.timestamp(range.start);
        Ok(
            Self::new(start, self.slot_width, self.values[range].to_vec())?
                .with_direction(self.direction),
        )
    }

    /// Writes `timestamp,value` rows with RFC-3339 timestamps.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(["timestamp", "value"])?;
        for (i, v) in self.values.iter().enumerate() {
            out.write_record([format_timestamp(self.timestamp(i)), v.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

pub fn slots_per_day(slot_width: TimeDelta) -> Result<usize> {
    let secs = slot_width.num_seconds();
    if secs <= 0 || SECONDS_PER_DAY % secs != 0 {
        return Err(Error::invalid(format!(
            "slot width of {secs}s does not divide a day"
        )));
    }
    Ok((SECONDS_PER_DAY / secs) as usize)
}

pub fn format_timestamp(ts: DateTime<Utc>) -> String {
    ts.to_rfc3339_opts(SecondsFormat::Secs, true)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum TimestampFormat {
    EpochSeconds,
    Rfc3339,
}

fn detect_format(raw: &str) -> TimestampFormat {
    if raw.parse::<f64>().is_ok() {
        TimestampFormat::EpochSeconds
    } else {
        TimestampFormat::Rfc3339
    }
}

fn parse_timestamp(raw: &str, format: TimestampFormat, line: usize) -> Result<DateTime<Utc>> {
    let bad = |message: String| Error::Parse { line, message };
    match format {
        TimestampFormat::EpochSeconds => {
            let secs: f64 = raw
                .parse()
                .map_err(|_| bad(format!("expected epoch seconds, got {raw:?}")))?;
            if !secs.is_finite() || secs.fract() != 0.0 {
                return Err(bad(format!("epoch seconds must be whole, got {raw:?}")));
            }
            Utc.timestamp_opt(secs as i64, 0)
                .single()
                .ok_or_else(|| bad(format!("epoch {raw} out of range")))
        }
        TimestampFormat::Rfc3339 => DateTime::parse_from_rfc3339(raw)
            .map(|t| t.with_timezone(&Utc))
            .map_err(|e| bad(format!("bad RFC-3339 timestamp {raw:?}: {e}"))),
    }
}

/// Reads a `timestamp,value` CSV file into a contiguous series.
pub fn ingest_csv(path: impl AsRef<Path>, slot_width: TimeDelta) -> Result<TrafficSeries> {
    let file = std::fs::File::open(path)?;
    read_csv(file, slot_width)
}

/// Reads `timestamp,value` rows. The timestamp format (epoch seconds or
/// RFC-3339) is detected from the first row and must hold for the whole file.
/// Missing slots are rejected, not imputed.
pub fn read_csv<R: Read>(reader: R, slot_width: TimeDelta) -> Result<TrafficSeries> {
    if slot_width <= TimeDelta::zero() {
        return Err(Error::invalid("slot width must be positive"));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.len() < 2 || &headers[0] != "timestamp" || &headers[1] != "value" {
        return Err(Error::Parse {
            line: 1,
            message: "expected header `timestamp,value`".into(),
        });
    }

    let mut format = None;
    let mut start = None;
    let mut prev: Option<DateTime<Utc>> = None;
    let mut values = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        // header is line 1
        let line = row + 2;
        let record = record.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        if record.len() < 2 {
            return Err(Error::Parse {
                line,
                message: "expected two columns".into(),
            });
        }
        let fmt = *format.get_or_insert_with(|| detect_format(&record[0]));
        let ts = parse_timestamp(&record[0], fmt, line)?;
        let value: f64 = record[1].parse().map_err(|_| Error::Parse {
            line,
            message: format!("bad value {:?}", &record[1]),
        })?;
        if !value.is_finite() {
            return Err(Error::Parse {
                line,
                message: format!("value {value} is not finite"),
            });
        }
        if value < 0.0 {
            return Err(Error::NegativeValue { line, value });
        }
        if let Some(p) = prev {
            let step = ts - p;
            if step <= TimeDelta::zero() {
                return Err(Error::NonIncreasing { line });
            }
            if step != slot_width {
                let ratio = step.num_seconds() as f64 / slot_width.num_seconds() as f64;
                if ratio.fract() == 0.0 && ratio > 1.0 {
                    return Err(Error::Gap {
                        line,
                        missing: format_timestamp(p + slot_width),
                    });
                }
                return Err(Error::Misaligned { line });
            }
        } else {
            start = Some(ts);
        }
        prev = Some(ts);
        values.push(value);
    }
    let start = start.ok_or(Error::TooShort { needed: 1, got: 0 })?;
    TrafficSeries::new(start, slot_width, values)
}

/// Daily-periodic baseline plus aperiodic residual.
#[derive(Clone, Debug, PartialEq)]
pub struct Decomposition {
    pub baseline: Vec<f64>,
    pub residual: TrafficSeries,
}

impl Decomposition {
    pub fn slots_per_day(&self) -> usize {
        self.baseline.len()
    }

    pub fn baseline_at(&self, index: usize) -> f64 {
        self.baseline[index % self.baseline.len()]
    }

    /// Tiled baseline plus residual.
    pub fn recompose(&self) -> Vec<f64> {
        self.residual
            .values()
            .iter()
            .enumerate()
            .map(|(i, r)| self.baseline_at(i) + r)
            .collect()
    }

    /// Writes `timestamp,raw,baseline,residual` rows.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(["timestamp", "raw", "baseline", "residual"])?;
        for (i, r) in self.residual.values().iter().enumerate() {
            let b = self.baseline_at(i);
            out.write_record([
                format_timestamp(self.residual.timestamp(i)),
                (b + r).to_string(),
                b.to_string(),
                r.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Per-slot-of-day mean over the complete days of `values`. A trailing
/// partial day is ignored.
pub fn daily_baseline(values: &[f64], slots_per_day: usize) -> Result<Vec<f64>> {
    if slots_per_day == 0 {
        return Err(Error::invalid("slots per day must be positive"));
    }
    let days = values.len() / slots_per_day;
    if days == 0 {
        return Err(Error::TooShort {
            needed: slots_per_day,
            got: values.len(),
        });
    }
    let mut baseline = vec![0.0; slots_per_day];
    for day in values.chunks_exact(slots_per_day) {
        for (b, v) in baseline.iter_mut().zip(day) {
            *b += v;
        }
    }
    baseline.iter_mut().for_each(|b| *b /= days as f64);
    Ok(baseline)
}

/// Subtracts a tiled baseline from `values`.
pub fn residual_from(values: &[f64], baseline: &[f64]) -> Vec<f64> {
    values
        .iter()
        .enumerate()
        .map(|(i, v)| v - baseline[i % baseline.len()])
        .collect()
}

pub fn decompose(series: &TrafficSeries) -> Result<Decomposition> {
    let s = series.slots_per_day()?;
    let baseline = daily_baseline(series.values(), s)?;
    let residual = residual_from(series.values(), &baseline);
    let residual = TrafficSeries::new(series.start_time(), series.slot_width(), residual)?
        .with_direction(series.direction());
    Ok(Decomposition { baseline, residual })
}

/// Smooth diurnal profile `level + amplitude * cos(2π (slot/S − phase))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiurnalShape {
    pub level: f64,
    pub amplitude: f64,
    /// Fraction of a day at which the profile peaks.
    pub phase: f64,
}

impl DiurnalShape {
    pub fn profile(&self, slots_per_day: usize) -> Vec<f64> {
        (0..slots_per_day)
            .map(|j| {
                let x = j as f64 / slots_per_day as f64 - self.phase;
                self.level + self.amplitude * (2.0 * std::f64::consts::PI * x).cos()
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub days: usize,
    pub slots_per_day: usize,
    pub baseline: DiurnalShape,
    pub noise_std: f64,
    /// Expected spike onsets per day.
    pub spike_rate: f64,
    pub spike_height: f64,
    /// Multipliers applied to the event height from onset onwards.
    pub spike_template: Vec<f64>,
    /// Expected trough onsets per day.
    pub trough_rate: f64,
    pub trough_depth: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            seed: 7,
            days: 14,
            slots_per_day: 96,
            baseline: DiurnalShape {
                level: 100.0,
                amplitude: 40.0,
                phase: 0.6,
            },
            noise_std: 3.0,
            spike_rate: 2.5,
            spike_height: 45.0,
            spike_template: vec![0.35, 0.8, 1.0, 0.75, 0.5, 0.3, 0.15],
            trough_rate: 0.5,
            trough_depth: 30.0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(format!(
                    "{name} must be finite and >= 0, got {v}"
                )))
            }
        };
        if self.days == 0 {
            return Err(Error::invalid("days must be positive"));
        }
        if self.slots_per_day == 0 {
            return Err(Error::invalid("slots_per_day must be positive"));
        }
        finite_nonneg("noise_std", self.noise_std)?;
        finite_nonneg("spike_rate", self.spike_rate)?;
        finite_nonneg("trough_rate", self.trough_rate)?;
        finite_nonneg("spike_height", self.spike_height)?;
        finite_nonneg("trough_depth", self.trough_depth)?;
        if self.spike_template.iter().any(|m| !m.is_finite()) {
            return Err(Error::invalid("spike_template must be finite"));
        }
        let b = &self.baseline;
        if !(b.level.is_finite() && b.amplitude.is_finite() && b.phase.is_finite()) {
            return Err(Error::invalid("baseline shape must be finite"));
        }
        Ok(())
    }

    pub fn slot_width(&self) -> TimeDelta {
        TimeDelta::seconds(SECONDS_PER_DAY / self.slots_per_day as i64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Spike,
    Trough,
}

/// One injected event, as recorded by the generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InjectedEvent {
    pub kind: EventKind,
    pub onset: usize,
    pub height: f64,
}

#[derive(Clone, Debug)]
pub struct Synthetic {
    pub series: TrafficSeries,
    /// Diurnal profile without noise or events, one entry per slot of day.
    pub profile: Vec<f64>,
    /// Events sorted by onset.
    pub events: Vec<InjectedEvent>,
}

/// Fixed start of synthetic series (a Monday, midnight UTC).
pub fn synthetic_epoch() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2020, 1, 6, 0, 0, 0).unwrap()
}

pub fn synthesize(spec: &SyntheticSpec) -> Result<TrafficSeries> {
    Ok(synthesize_with_events(spec)?.series)
}

/// Diurnal profile + Gaussian noise + Poisson-placed spike and trough events
/// shaped by the template. Values are clamped at zero.
pub fn synthesize_with_events(spec: &SyntheticSpec) -> Result<Synthetic> {
    spec.validate()?;
    let s = spec.slots_per_day;
    let n = spec.days * s;
    let profile = spec.baseline.profile(s);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut values: Vec<f64> = (0..n).map(|i| profile[i % s]).collect();
    if spec.noise_std > 0.0 {
        let noise = Normal::new(0.0, spec.noise_std).map_err(|e| Error::invalid(e.to_string()))?;
        for v in values.iter_mut() {
            *v += noise.sample(&mut rng);
        }
    }

    let mut events = Vec::new();
    for (kind, rate, size) in [
        (EventKind::Spike, spec.spike_rate, spec.spike_height),
        (EventKind::Trough, spec.trough_rate, -spec.trough_depth),
    ] {
        if rate <= 0.0 {
            continue;
        }
        let counts = Poisson::new(rate).map_err(|e| Error::invalid(e.to_string()))?;
        for day in 0..spec.days {
            let k = counts.sample(&mut rng) as usize;
            for _ in 0..k {
                let onset = day * s + rng.random_range(0..s);
                let height = size * rng.random_range(0.75..1.25);
                events.push(InjectedEvent {
                    kind,
                    onset,
                    height,
                });
            }
        }
    }
    events.sort_by_key(|e| e.onset);

    for e in &events {
        for (k, m) in spec.spike_template.iter().enumerate() {
            if let Some(v) = values.get_mut(e.onset + k) {
                *v += e.height * m;
            }
        }
    }
    values.iter_mut().for_each(|v| *v = v.max(0.0));

    let series = TrafficSeries::new(synthetic_epoch(), spec.slot_width(), values)?;
    Ok(Synthetic {
        series,
        profile,
        events,
    })
}
