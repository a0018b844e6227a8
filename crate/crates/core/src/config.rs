//! Run configuration: a `key = value` text file whose keys can each be
//! overridden by a same-named command-line flag.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureConfig, StdMode};
use crate::gp::PrunePolicy;
use crate::sarima::SarimaOrder;
use crate::series::SyntheticSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Fegp,
    NaiveGp,
    Sarima,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Fegp, Method::NaiveGp, Method::Sarima];

    pub fn name(self) -> &'static str {
        match self {
            Method::Fegp => "fegp",
            Method::NaiveGp => "naive_gp",
            Method::Sarima => "sarima",
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "fegp" => Ok(Method::Fegp),
            "naive_gp" => Ok(Method::NaiveGp),
            "sarima" => Ok(Method::Sarima),
            other => Err(Error::Config(format!("unknown method `{other}`"))),
        }
    }
}

/// How the feature-embedded model treats its noise level.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NoiseSetting {
    /// Optimized jointly with the other hyper-parameters.
    Fit,
    /// Fixed at a robust estimate from the training residual's first
    /// differences.
    Robust,
    Fixed(f64),
}

impl FromStr for NoiseSetting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "fit" => Ok(NoiseSetting::Fit),
            "robust" => Ok(NoiseSetting::Robust),
            v => match v.parse::<f64>() {
                Ok(x) if x.is_finite() && x >= 0.0 => Ok(NoiseSetting::Fixed(x)),
                _ => Err(Error::Config(format!(
                    "fegp_noise is fit, robust or a nonnegative number, got `{v}`"
                ))),
            },
        }
    }
}

impl std::fmt::Display for NoiseSetting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NoiseSetting::Fit => f.write_str("fit"),
            NoiseSetting::Robust => f.write_str("robust"),
            NoiseSetting::Fixed(x) => write!(f, "{x}"),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// CSV input; `None` means generate from `synthetic`.
    pub input: Option<PathBuf>,
    pub slot_minutes: i64,
    pub synthetic: SyntheticSpec,
    /// First test index. Defaults to the start of the second half of the
    /// series, rounded down to whole days.
    pub train_end: Option<usize>,
    /// One past the last test index. Defaults to the series length.
    pub test_end: Option<usize>,
    pub methods: Vec<Method>,
    pub xi: f64,
    pub features: FeatureConfig,
    pub prune: PrunePolicy,
    pub fegp_noise: NoiseSetting,
    pub sarima_order: SarimaOrder,
    /// Season length for SARIMA; defaults to one day of slots.
    pub sarima_period: Option<usize>,
    /// Demand intervals for risk; empty means the 5th to 95th percentile of
    /// the training span.
    pub risk_intervals: Vec<(f64, f64)>,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub restarts: usize,
    /// Refit hyper-parameters every this many steps; `None` never refits.
    pub refit_every: Option<usize>,
    pub segment_pad: usize,
    /// Components kept per step in the JSONL records.
    pub top_k: usize,
    pub write_steps: bool,
    /// Model file for the `train` and `forecast` subcommands.
    pub model_path: Option<PathBuf>,
    /// Index to forecast with the `forecast` subcommand (default: the slot
    /// after the last observation).
    pub forecast_at: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            input: None,
            slot_minutes: crate::series::DEFAULT_SLOT_MINUTES,
            synthetic: SyntheticSpec::default(),
            train_end: None,
            test_end: None,
            methods: Method::ALL.to_vec(),
            xi: 0.9,
            features: FeatureConfig::default(),
            prune: PrunePolicy::default(),
            fegp_noise: NoiseSetting::Fit,
            sarima_order: SarimaOrder::default(),
            sarima_period: None,
            risk_intervals: Vec::new(),
            output_dir: PathBuf::from("out"),
            seed: 0,
            restarts: 5,
            refit_every: None,
            segment_pad: 2,
            top_k: 10,
            write_steps: false,
            model_path: None,
            forecast_at: None,
        }
    }
}

pub const KEYS: &[&str] = &[
    "input",
    "slot_minutes",
    "synth_seed",
    "synth_days",
    "synth_slots_per_day",
    "synth_level",
    "synth_amplitude",
    "synth_phase",
    "synth_noise_std",
    "synth_spike_rate",
    "synth_spike_height",
    "synth_spike_template",
    "synth_trough_rate",
    "synth_trough_depth",
    "train_end",
    "test_end",
    "methods",
    "xi",
    "lag_depth",
    "ratio_epsilon",
    "std_mode",
    "max_size",
    "extreme_keep_fraction",
    "fegp_noise",
    "sarima_order",
    "sarima_seasonal_order",
    "sarima_period",
    "risk_intervals",
    "output_dir",
    "seed",
    "restarts",
    "refit_every",
    "segment_pad",
    "top_k",
    "write_steps",
    "model_path",
    "forecast_at",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("cannot parse `{value}` for key `{key}`")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn parse_triple(key: &str, value: &str) -> Result<(usize, usize, usize)> {
    match parse_list::<usize>(key, value)?[..] {
        [a, b, c] => Ok((a, b, c)),
        _ => Err(Error::Config(format!(
            "`{key}` needs three comma-separated integers"
        ))),
    }
}

fn parse_optional_index(key: &str, value: &str) -> Result<Option<usize>> {
    match value.trim() {
        "" | "auto" | "none" => Ok(None),
        v => parse(key, v).map(Some),
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("`{key}` must be true or false"))),
    }
}

/// `low:high` pairs separated by `;`. `-inf`/`inf` are accepted.
fn parse_intervals(key: &str, value: &str) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::new();
    for part in value.split(';').map(str::trim).filter(|s| !s.is_empty()) {
        if part == "auto" {
            continue;
        }
        let (lo, hi) = part.split_once(':').ok_or_else(|| {
            Error::Config(format!("`{key}` entries look like low:high, got `{part}`"))
        })?;
        let (lo, hi): (f64, f64) = (parse(key, lo)?, parse(key, hi)?);
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(Error::Config(format!("interval `{part}` is empty")));
        }
        out.push((lo, hi));
    }
    Ok(out)
}

impl RunConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    /// Applies `--key value` and `--key=value` arguments.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, args: &[S]) -> Result<()> {
        let mut i = 0;
        while i < args.len() {
            let arg = args[i].as_ref();
            let flag = arg
                .strip_prefix("--")
                .ok_or_else(|| Error::Config(format!("expected --key, got `{arg}`")))?;
            if let Some((k, v)) = flag.split_once('=') {
                self.set(k, v)?;
                i += 1;
            } else {
                let v = args
                    .get(i + 1)
                    .ok_or_else(|| Error::Config(format!("flag --{flag} needs a value")))?;
                self.set(flag, v.as_ref())?;
                i += 2;
            }
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let s = &mut self.synthetic;
        match key.replace('-', "_").as_str() {
            "input" => {
                self.input = Some(PathBuf::from(value))
                    .filter(|p| !p.as_os_str().is_empty() && value != "synthetic")
            }
            "slot_minutes" => self.slot_minutes = parse(key, value)?,
            "synth_seed" => s.seed = parse(key, value)?,
            "synth_days" => s.days = parse(key, value)?,
            "synth_slots_per_day" => s.slots_per_day = parse(key, value)?,
            "synth_level" => s.baseline.level = parse(key, value)?,
            "synth_amplitude" => s.baseline.amplitude = parse(key, value)?,
            "synth_phase" => s.baseline.phase = parse(key, value)?,
            "synth_noise_std" => s.noise_std = parse(key, value)?,
            "synth_spike_rate" => s.spike_rate = parse(key, value)?,
            "synth_spike_height" => s.spike_height = parse(key, value)?,
            "synth_spike_template" => s.spike_template = parse_list(key, value)?,
            "synth_trough_rate" => s.trough_rate = parse(key, value)?,
            "synth_trough_depth" => s.trough_depth = parse(key, value)?,
            "train_end" => self.train_end = parse_optional_index(key, value)?,
            "test_end" => self.test_end = parse_optional_index(key, value)?,
            "methods" => {
                let mut methods: Vec<Method> = parse_list(key, value)?;
                methods.sort();
                methods.dedup();
                self.methods = methods;
            }
            "xi" => self.xi = parse(key, value)?,
            "lag_depth" => self.features.lag_depth = parse(key, value)?,
            "ratio_epsilon" => self.features.ratio_epsilon = parse(key, value)?,
            "std_mode" => {
                self.features.std_mode = match value.trim() {
                    "population" => StdMode::Population,
                    "sample" => StdMode::Sample,
                    _ => return Err(Error::Config("std_mode is population or sample".into())),
                }
            }
            "max_size" => self.prune.max_size = parse(key, value)?,
            "extreme_keep_fraction" => self.prune.extreme_keep_fraction = parse(key, value)?,
            "fegp_noise" => self.fegp_noise = value.parse()?,
            "sarima_order" => {
                let (p, d, q) = parse_triple(key, value)?;
                (
                    self.sarima_order.p,
                    self.sarima_order.d,
                    self.sarima_order.q,
                ) = (p, d, q);
            }
            "sarima_seasonal_order" => {
                let (p, d, q) = parse_triple(key, value)?;
                (
                    self.sarima_order.sp,
                    self.sarima_order.sd,
                    self.sarima_order.sq,
                ) = (p, d, q);
            }
            "sarima_period" => self.sarima_period = parse_optional_index(key, value)?,
            "risk_intervals" => self.risk_intervals = parse_intervals(key, value)?,
            "output_dir" => self.output_dir = PathBuf::from(value),
            "seed" => self.seed = parse(key, value)?,
            "restarts" => self.restarts = parse(key, value)?,
            "refit_every" => {
                self.refit_every = parse_optional_index(key, value)?.filter(|r| *r > 0)
            }
            "segment_pad" => self.segment_pad = parse(key, value)?,
            "top_k" => self.top_k = parse(key, value)?,
            "write_steps" => self.write_steps = parse_bool(key, value)?,
            "model_path" => {
                self.model_path =
                    (!matches!(value.trim(), "" | "auto")).then(|| PathBuf::from(value))
            }
            "forecast_at" => self.forecast_at = parse_optional_index(key, value)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::Config("at least one method is required".into()));
        }
        if !(self.xi > 0.0 && self.xi < 1.0) {
            return Err(Error::Config(format!(
                "xi must lie in (0, 1), got {}",
                self.xi
            )));
        }
        if self.slot_minutes <= 0 {
            return Err(Error::Config("slot_minutes must be positive".into()));
        }
        if self.restarts == 0 {
            return Err(Error::Config("restarts must be at least 1".into()));
        }
        self.features.validate()?;
        self.prune.validate()?;
        if self.input.is_none() {
            self.synthetic.validate()?;
        }
        Ok(())
    }

    pub fn model_path(&self) -> PathBuf {
        self.model_path
            .clone()
            .unwrap_or_else(|| self.output_dir.join("model_fegp.json"))
    }

    /// Renders the effective configuration as a config file.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let s = &self.synthetic;
        let opt = |v: Option<usize>| v.map_or("auto".to_string(), |v| v.to_string());
        let list = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
        let o = &self.sarima_order;
        let mut line = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        line(
            "input",
            self.input
                .as_ref()
                .map_or("synthetic".into(), |p| p.display().to_string()),
        );
        line("slot_minutes", self.slot_minutes.to_string());
        line("synth_seed", s.seed.to_string());
        line("synth_days", s.days.to_string());
        line("synth_slots_per_day", s.slots_per_day.to_string());
        line("synth_level", s.baseline.level.to_string());
        line("synth_amplitude", s.baseline.amplitude.to_string());
        line("synth_phase", s.baseline.phase.to_string());
        line("synth_noise_std", s.noise_std.to_string());
        line("synth_spike_rate", s.spike_rate.to_string());
        line("synth_spike_height", s.spike_height.to_string());
        line("synth_spike_template", list(&s.spike_template));
        line("synth_trough_rate", s.trough_rate.to_string());
        line("synth_trough_depth", s.trough_depth.to_string());
        line("train_end", opt(self.train_end));
        line("test_end", opt(self.test_end));
        line(
            "methods",
            self.methods
                .iter()
                .map(|m| m.name())
                .collect::<Vec<_>>()
                .join(","),
        );
        line("xi", self.xi.to_string());
        line("lag_depth", self.features.lag_depth.to_string());
        line("ratio_epsilon", self.features.ratio_epsilon.to_string());
        line(
            "std_mode",
            match self.features.std_mode {
                StdMode::Population => "population".into(),
                StdMode::Sample => "sample".into(),
            },
        );
        line("max_size", self.prune.max_size.to_string());
        line(
            "extreme_keep_fraction",
            self.prune.extreme_keep_fraction.to_string(),
        );
        line("fegp_noise", self.fegp_noise.to_string());
        line("sarima_order", format!("{},{},{}", o.p, o.d, o.q));
        line(
            "sarima_seasonal_order",
            format!("{},{},{}", o.sp, o.sd, o.sq),
        );
        line("sarima_period", opt(self.sarima_period));
        line(
            "risk_intervals",
            if self.risk_intervals.is_empty() {
                "auto".into()
            } else {
                self.risk_intervals
                    .iter()
                    .map(|(a, b)| format!("{a}:{b}"))
                    .collect::<Vec<_>>()
                    .join(";")
            },
        );
        line("output_dir", self.output_dir.display().to_string());
        line("seed", self.seed.to_string());
        line("restarts", self.restarts.to_string());
        line("refit_every", opt(self.refit_every));
        line("segment_pad", self.segment_pad.to_string());
        line("top_k", self.top_k.to_string());
        line("write_steps", self.write_steps.to_string());
        line(
            "model_path",
            self.model_path
                .as_ref()
                .map_or("auto".into(), |p| p.display().to_string()),
        );
        line("forecast_at", opt(self.forecast_at));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_flags() {
        let mut c = RunConfig::default();
        c.apply_text("# comment\nxi = 0.8  # trailing\nmethods = sarima, fegp\n\nsynth_days=4\n")
            .unwrap();
        assert_eq!(c.xi, 0.8);
        assert_eq!(c.methods, vec![Method::Fegp, Method::Sarima]);
        assert_eq!(c.synthetic.days, 4);
        c.apply_overrides(&[
            "--xi",
            "0.7",
            "--max_size=50",
            "--risk-intervals",
            "-inf:10;20:inf",
        ])
        .unwrap();
        assert_eq!(c.xi, 0.7);
        assert_eq!(c.prune.max_size, 50);
        assert_eq!(
            c.risk_intervals,
            vec![(f64::NEG_INFINITY, 10.0), (20.0, f64::INFINITY)]
        );
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        let mut c = RunConfig::default();
        assert!(c.apply_text("colour = blue").is_err());
        assert!(c.apply_overrides(&["--xi"]).is_err());
        assert!(c.apply_overrides(&["--xi", "lots"]).is_err());
        assert!(c.apply_overrides(&["--methods", "arima"]).is_err());
        assert!(c.apply_overrides(&["--risk_intervals", "5:1"]).is_err());
    }

    #[test]
    fn every_key_round_trips_through_text() {
        let mut c = RunConfig::default();
        c.apply_overrides(&[
            "--refit_every",
            "24",
            "--train_end",
            "300",
            "--risk_intervals",
            "0:50",
            "--input",
            "x.csv",
        ])
        .unwrap();
        let text = c.to_text();
        for key in KEYS {
            assert!(text.contains(&format!("{key} = ")), "{key}");
        }
        let mut back = RunConfig::default();
        back.apply_text(&text).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn validation() {
        let mut c = RunConfig::default();
        c.methods.clear();
        assert!(c.validate().is_err());
        let c = RunConfig {
            xi: 1.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        assert!(RunConfig::default().validate().is_ok());
    }
}
