//! Rolling one-step-ahead evaluation: data preparation, the three
//! forecasters, ACE bookkeeping and report files.

use std::cell::Cell;
use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use chrono::TimeDelta;
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::config::{Method, NoiseSetting, RunConfig};
use crate::error::{Error, Result, StageExt};
use crate::features::{featurize_series, FeatureVector, FeatureWeights, Standardizer, FEATURE_DIM};
use crate::forecast::{
    map_point, predict_from_features, risk, ForecastRecord, GaussianPosterior, MixturePosterior,
    NaivePredictor, Posterior,
};
use crate::gp::{
    fit_report, noise_from_differences, prune, FeatureMap, FitOptions, FitReport, GpModel,
    Hyperparams, KernelKind, ModelDocument, NoiseMode, PrunePolicy, TrainingWindow,
    MODEL_FORMAT_VERSION,
};
use crate::relief::{optimize_weights, tag_categories, CategoryTag, DeltaThreshold, ReliefResult};
use crate::sarima::{fit_sarima, SarimaModel, SarimaOrder};
use crate::series::{
    daily_baseline, ingest_csv, residual_from, synthesize_with_events, InjectedEvent, TrafficSeries,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentLabel {
    Average,
    Spike,
}

impl SegmentLabel {
    pub fn name(self) -> &'static str {
        match self {
            SegmentLabel::Average => "average",
            SegmentLabel::Spike => "spike",
        }
    }
}

/// Inclusive index range with a label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub label: SegmentLabel,
    pub from: usize,
    pub to: usize,
}

/// Absolute cumulative error `Σ |forecast − actual|` over `from..=to`.
pub fn ace(forecasts: &[f64], actuals: &[f64], from: usize, to: usize) -> Result<f64> {
    if forecasts.len() != actuals.len() {
        return Err(Error::DimensionMismatch {
            left: forecasts.len(),
            right: actuals.len(),
        });
    }
    if from > to || to >= actuals.len() {
        return Err(Error::Range {
            from,
            to,
            len: actuals.len(),
        });
    }
    Ok((from..=to).map(|i| (forecasts[i] - actuals[i]).abs()).sum())
}

/// Splits `0..actuals.len()` into spike and average segments.
///
/// Points whose first difference is extreme (same rule as the Relief tags)
/// are widened by `pad` slots on each side; maximal runs of the widened set
/// are spike segments and the gaps between them are average segments.
pub fn segment_spikes(actuals: &[f64], xi: f64, pad: usize) -> Result<Vec<Segment>> {
    let n = actuals.len();
    if n == 0 {
        return Err(Error::TooShort { needed: 1, got: 0 });
    }
    let mut spike = vec![false; n];
    if n >= 3 {
        for tag in tag_categories(actuals, xi)? {
            if tag.category == crate::relief::Category::Extreme {
                let lo = tag.index.saturating_sub(pad);
                let hi = (tag.index + pad).min(n - 1);
                spike[lo..=hi].iter_mut().for_each(|s| *s = true);
            }
        }
    } else {
        central_xi_check(xi)?;
    }
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=n {
        if i == n || spike[i] != spike[start] {
            out.push(Segment {
                label: if spike[start] {
                    SegmentLabel::Spike
                } else {
                    SegmentLabel::Average
                },
                from: start,
                to: i - 1,
            });
            start = i;
        }
    }
    Ok(out)
}

fn central_xi_check(xi: f64) -> Result<()> {
    crate::relief::central_quantile(xi).map(|_| ())
}

/// Read guard over the observed series. Every read during a step is checked
/// against the step's forecast index and the largest index read is kept.
pub struct Observations<'a> {
    raw: &'a [f64],
    baseline: &'a [f64],
    limit: Cell<usize>,
    max_read: Cell<Option<usize>>,
}

impl<'a> Observations<'a> {
    pub fn new(raw: &'a [f64], baseline: &'a [f64]) -> Self {
        Self {
            raw,
            baseline,
            limit: Cell::new(0),
            max_read: Cell::new(None),
        }
    }

    /// Starts forecasting index `t`: only indices below `t` may be read.
    pub fn begin_step(&self, t: usize) {
        self.limit.set(t);
        self.max_read.set(None);
    }

    pub fn max_read(&self) -> Option<usize> {
        self.max_read.get()
    }

    fn touch(&self, i: usize) -> Result<()> {
        if i >= self.limit.get() {
            return Err(Error::invalid(format!(
                "causality violation: read index {i} while forecasting index {}",
                self.limit.get()
            )));
        }
        if i >= self.raw.len() {
            return Err(Error::Range {
                from: i,
                to: i,
                len: self.raw.len(),
            });
        }
        self.max_read
            .set(Some(self.max_read.get().map_or(i, |m| m.max(i))));
        Ok(())
    }

    pub fn raw(&self, i: usize) -> Result<f64> {
        self.touch(i)?;
        Ok(self.raw[i])
    }

    pub fn residual(&self, i: usize) -> Result<f64> {
        self.touch(i)?;
        Ok(self.raw[i] - self.baseline[i % self.baseline.len()])
    }

    pub fn residuals(&self, range: std::ops::Range<usize>) -> Result<Vec<f64>> {
        range.map(|i| self.residual(i)).collect()
    }

    /// All observations before the current step.
    pub fn raw_prefix(&self) -> Result<&'a [f64]> {
        let t = self.limit.get().min(self.raw.len());
        if t > 0 {
            self.touch(t - 1)?;
        }
        Ok(&self.raw[..t])
    }
}

/// Loaded series split into a training span and a test span, with the
/// diurnal baseline estimated on the training span only.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub series: TrafficSeries,
    pub slots_per_day: usize,
    pub train_end: usize,
    pub test_end: usize,
    pub baseline: Vec<f64>,
    /// Raw minus tiled baseline, for every index.
    pub residual: Vec<f64>,
    /// Generator events when the data is synthetic.
    pub events: Vec<InjectedEvent>,
}

impl Prepared {
    pub fn raw(&self) -> &[f64] {
        self.series.values()
    }

    pub fn baseline_at(&self, i: usize) -> f64 {
        self.baseline[i % self.slots_per_day]
    }
}

pub fn load_series(cfg: &RunConfig) -> Result<(TrafficSeries, Vec<InjectedEvent>)> {
    match &cfg.input {
        Some(path) => Ok((
            ingest_csv(path, TimeDelta::minutes(cfg.slot_minutes))?,
            Vec::new(),
        )),
        None => {
            let s = synthesize_with_events(&cfg.synthetic)?;
            Ok((s.series, s.events))
        }
    }
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    cfg.validate().stage("config", None)?;
    let (series, events) = load_series(cfg).stage("ingest", None)?;
    prepare_series(cfg, series, events)
}

pub fn prepare_series(
    cfg: &RunConfig,
    series: TrafficSeries,
    events: Vec<InjectedEvent>,
) -> Result<Prepared> {
    let s = series.slots_per_day().stage("decompose", None)?;
    let len = series.len();
    let train_end = cfg.train_end.unwrap_or((len / s / 2) * s);
    let test_end = cfg.test_end.unwrap_or(len);
    if train_end < s {
        return Err(Error::Config(format!(
            "train_end {train_end} leaves less than one day ({s} slots) for training"
        ))
        .in_stage("config", None));
    }
    if test_end > len || train_end >= test_end {
        return Err(Error::Range {
            from: train_end,
            to: test_end,
            len,
        }
        .in_stage("config", None));
    }
    let baseline = daily_baseline(&series.values()[..train_end], s).stage("decompose", None)?;
    let residual = residual_from(series.values(), &baseline);
    Ok(Prepared {
        series,
        slots_per_day: s,
        train_end,
        test_end,
        baseline,
        residual,
        events,
    })
}

/// Linear-interpolated percentile of `values` (`q` in `[0, 1]`).
fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

/// Configured risk intervals, or the training 5th to 95th percentile.
pub fn risk_intervals(cfg: &RunConfig, p: &Prepared) -> Vec<(f64, f64)> {
    if !cfg.risk_intervals.is_empty() {
        return cfg.risk_intervals.clone();
    }
    let train = &p.raw()[..p.train_end];
    vec![(percentile(train, 0.05), percentile(train, 0.95))]
}

fn fit_options(cfg: &RunConfig, noise: NoiseMode) -> FitOptions {
    FitOptions {
        restarts: cfg.restarts,
        seed: cfg.seed,
        noise,
        ..Default::default()
    }
}

fn fegp_noise(cfg: &RunConfig, r_train: &[f64]) -> NoiseMode {
    match cfg.fegp_noise {
        NoiseSetting::Fit => NoiseMode::Optimize,
        NoiseSetting::Robust => NoiseMode::Fixed(noise_from_differences(r_train)),
        NoiseSetting::Fixed(s) => NoiseMode::Fixed(s),
    }
}

/// Everything learned on the training span for the feature-embedded model.
#[derive(Clone, Debug)]
pub struct FegpTraining {
    pub model: GpModel,
    pub threshold: DeltaThreshold,
    /// Tags for residual indices `1..train_end`.
    pub tags: Vec<CategoryTag>,
    pub relief: ReliefResult,
    pub fit: FitReport,
}

impl FegpTraining {
    pub fn document(&self, p: &Prepared) -> ModelDocument {
        let mut doc = self.model.to_document();
        doc.format_version = MODEL_FORMAT_VERSION;
        doc.baseline = Some(p.baseline.clone());
        doc.delta_threshold = Some(self.threshold);
        doc
    }
}

pub fn train_fegp(p: &Prepared, cfg: &RunConfig) -> Result<FegpTraining> {
    let r_train = &p.residual[..p.train_end];
    let raw_feats = featurize_series(r_train, &cfg.features).stage("features", None)?;
    let standardizer = Standardizer::fit(&raw_feats).stage("features", None)?;
    let feats = standardizer.apply_all(&raw_feats);

    let threshold = DeltaThreshold::fit(r_train, cfg.xi).stage("tag", None)?;
    let tags: Vec<CategoryTag> = (1..r_train.len())
        .map(|i| threshold.tag(r_train, i))
        .collect();
    let relief = match optimize_weights(&feats, &tags) {
        Ok(r) => r.with_xi(cfg.xi),
        Err(Error::EmptyCategory(c)) => {
            warn!("no {c} points in the training span; using uniform feature weights");
            ReliefResult {
                weights: FeatureWeights::uniform(FEATURE_DIM),
                margins: Vec::new(),
                xi_used: Some(cfg.xi),
            }
        }
        Err(e) => return Err(e.in_stage("relief", None)),
    };
    info!("feature weights {:?}", relief.weights.as_slice());

    let indices: Vec<usize> = feats.iter().map(|f| f.time_index).collect();
    let targets: Vec<f64> = indices.iter().map(|&i| r_train[i]).collect();
    let window = TrainingWindow::new(indices, targets, feats, 0.0).stage("fit", None)?;
    let window = prune(&window, &tags, &cfg.prune);
    let fit = fit_report(
        &window,
        &relief.weights,
        KernelKind::FeatureEmbedded,
        &fit_options(cfg, fegp_noise(cfg, r_train)),
    )
    .stage("fit", None)?;
    info!("fegp hyper-parameters {:?} (nlml {})", fit.hyper, fit.nlml);
    let feature_map = FeatureMap {
        config: cfg.features.clone(),
        standardizer,
    };
    let model = GpModel::new(
        window,
        relief.weights.clone(),
        fit.hyper,
        KernelKind::FeatureEmbedded,
        feature_map,
    )
    .stage("fit", None)?;
    Ok(FegpTraining {
        model,
        threshold,
        tags,
        relief,
        fit,
    })
}

pub fn train_naive(p: &Prepared, cfg: &RunConfig) -> Result<(GpModel, FitReport)> {
    let r_train = &p.residual[..p.train_end];
    let n = cfg.prune.max_size.min(p.train_end);
    let indices: Vec<usize> = (p.train_end - n..p.train_end).collect();
    let targets: Vec<f64> = indices.iter().map(|&i| r_train[i]).collect();
    let window = TrainingWindow::new(indices, targets, Vec::new(), 0.0).stage("fit", None)?;
    let weights = FeatureWeights::uniform(FEATURE_DIM);
    let fit = fit_report(
        &window,
        &weights,
        KernelKind::NaiveTime,
        &fit_options(cfg, NoiseMode::Optimize),
    )
    .stage("fit", None)?;
    info!("naive hyper-parameters {:?} (nlml {})", fit.hyper, fit.nlml);
    let model = GpModel::new(
        window,
        weights,
        fit.hyper,
        KernelKind::NaiveTime,
        FeatureMap::default(),
    )
    .stage("fit", None)?;
    Ok((model, fit))
}

pub fn sarima_order(cfg: &RunConfig, p: &Prepared) -> SarimaOrder {
    SarimaOrder {
        s: cfg.sarima_period.unwrap_or(p.slots_per_day),
        ..cfg.sarima_order
    }
}

/// One evaluated step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub index: usize,
    pub actual: f64,
    pub forecast: f64,
    pub prob_below: f64,
    pub prob_above: f64,
    /// Largest observation index read while forecasting this step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_index_read: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: Method,
    pub ace_total: f64,
    /// Cumulative absolute error after each step.
    pub ace_curve: Vec<f64>,
    /// Summed ACE per segment label.
    pub segment_aces: BTreeMap<SegmentLabel, f64>,
    /// Absolute index ranges.
    pub segments: Vec<Segment>,
    pub forecasts: Vec<StepRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hyperparams: Option<Hyperparams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_weights: Option<FeatureWeights>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sarima: Option<SarimaModel>,
}

impl EvalReport {
    /// Builds the ACE curve and segment totals from per-step records, which
    /// must cover consecutive indices.
    pub fn from_steps(
        method: Method,
        forecasts: Vec<StepRecord>,
        xi: f64,
        pad: usize,
    ) -> Result<Self> {
        if forecasts.is_empty() {
            return Err(Error::TooShort { needed: 1, got: 0 });
        }
        let first = forecasts[0].index;
        if forecasts
            .iter()
            .enumerate()
            .any(|(k, s)| s.index != first + k)
        {
            return Err(Error::invalid(
                "step records must cover consecutive indices",
            ));
        }
        let mut total = 0.0;
        let ace_curve: Vec<f64> = forecasts
            .iter()
            .map(|s| {
                total += (s.forecast - s.actual).abs();
                total
            })
            .collect();
        let actuals: Vec<f64> = forecasts.iter().map(|s| s.actual).collect();
        let predicted: Vec<f64> = forecasts.iter().map(|s| s.forecast).collect();
        let rel = segment_spikes(&actuals, xi, pad)?;
        let mut segment_aces =
            BTreeMap::from([(SegmentLabel::Average, 0.0), (SegmentLabel::Spike, 0.0)]);
        for seg in &rel {
            *segment_aces
                .get_mut(&seg.label)
                .expect("both labels present") += ace(&predicted, &actuals, seg.from, seg.to)?;
        }
        let segments = rel
            .into_iter()
            .map(|s| Segment {
                from: s.from + first,
                to: s.to + first,
                ..s
            })
            .collect();
        Ok(Self {
            method,
            ace_total: total,
            ace_curve,
            segment_aces,
            segments,
            forecasts,
            hyperparams: None,
            feature_weights: None,
            sarima: None,
        })
    }

    pub fn spike_ace(&self) -> f64 {
        self.segment_aces[&SegmentLabel::Spike]
    }

    pub fn average_ace(&self) -> f64 {
        self.segment_aces[&SegmentLabel::Average]
    }
}

/// Per-method results of a full run.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub reports: Vec<EvalReport>,
    /// Per-step mixture records for the feature-embedded method.
    pub records: Vec<ForecastRecord>,
    pub fegp: Option<FegpTraining>,
    pub prepared: Prepared,
}

impl RunOutput {
    pub fn report(&self, method: Method) -> Option<&EvalReport> {
        self.reports.iter().find(|r| r.method == method)
    }
}

fn refit_due(cfg: &RunConfig, p: &Prepared, t: usize) -> bool {
    matches!(cfg.refit_every, Some(r) if t > p.train_end && (t - p.train_end).is_multiple_of(r))
}

fn step_record<P: Posterior>(
    index: usize,
    actual: f64,
    forecast: f64,
    post: &P,
    interval: Option<(f64, f64)>,
) -> Result<StepRecord> {
    let (prob_below, prob_above) = match interval {
        Some((lo, hi)) => {
            let r = risk(post, lo, hi)?;
            (r.prob_below, r.prob_above)
        }
        None => (f64::NAN, f64::NAN),
    };
    Ok(StepRecord {
        index,
        actual,
        forecast,
        prob_below,
        prob_above,
        max_index_read: None,
    })
}

pub fn run_fegp(
    p: &Prepared,
    cfg: &RunConfig,
    training: &FegpTraining,
    intervals: &[(f64, f64)],
) -> Result<(Vec<StepRecord>, Vec<ForecastRecord>, Hyperparams)> {
    let obs = Observations::new(p.raw(), &p.baseline);
    let l = cfg.features.lag_depth;
    let mut model = training.model.clone();
    let mut tags = training.tags.clone();
    let mut steps = Vec::new();
    let mut records = Vec::new();
    for t in p.train_end..p.test_end {
        obs.begin_step(t);
        let stage = |e: Error| e.in_stage("fegp forecast", Some(t));
        if t > p.train_end {
            let i = t - 1;
            let hist = obs.residuals(i - l..i).map_err(stage)?;
            let f: FeatureVector = model.feature_map.embed(&hist, l).map_err(stage)?;
            let f = FeatureVector::new(i, f.values);
            let target = obs.residual(i).map_err(stage)?;
            let delta = target - obs.residual(i - 1).map_err(stage)?;
            tags.push(CategoryTag {
                index: i,
                delta_y: delta,
                category: training.threshold.classify(delta),
            });
            model.window.push(i, target, Some(f));
            model.window = prune(&model.window, &tags, &cfg.prune);
            if refit_due(cfg, p, t) {
                model.hyper = fit_report(
                    &model.window,
                    &model.weights,
                    KernelKind::FeatureEmbedded,
                    &fit_options(cfg, fegp_noise(cfg, &p.residual[..p.train_end])),
                )
                .map_err(|e| e.in_stage("fegp refit", Some(t)))?
                .hyper;
            }
        }
        let hist = obs.residuals(t - l..t).map_err(stage)?;
        let f = model.feature_map.embed(&hist, l).map_err(stage)?;
        let mixture = predict_from_features(&model, &FeatureVector::new(t, f.values))
            .map_err(stage)?
            .shifted(p.baseline_at(t));
        let map = map_point(&mixture);
        let max_read = obs.max_read().max(model.window.indices.last().copied());

        let mut step =
            step_record(t, p.raw()[t], map, &mixture, intervals.first().copied()).map_err(stage)?;
        step.max_index_read = max_read;
        steps.push(step);
        if cfg.write_steps {
            records.push(
                ForecastRecord::from_mixture(t, &mixture, map, Some(cfg.top_k), intervals)
                    .map_err(stage)?,
            );
        }
    }
    Ok((steps, records, model.hyper))
}

fn run_naive(
    p: &Prepared,
    cfg: &RunConfig,
    model: &GpModel,
    intervals: &[(f64, f64)],
) -> Result<(Vec<StepRecord>, Hyperparams)> {
    let obs = Observations::new(p.raw(), &p.baseline);
    let mut model = model.clone();
    let policy = PrunePolicy {
        extreme_keep_fraction: 0.0,
        ..cfg.prune
    };
    let mut predictor = NaivePredictor::new(&model).stage("naive forecast", Some(p.train_end))?;
    let mut steps = Vec::new();
    for t in p.train_end..p.test_end {
        obs.begin_step(t);
        let stage = |e: Error| e.in_stage("naive forecast", Some(t));
        if t > p.train_end {
            let target = obs.residual(t - 1).map_err(stage)?;
            model.window.push(t - 1, target, None);
            model.window = prune(&model.window, &[], &policy);
            if refit_due(cfg, p, t) {
                model.hyper = fit_report(
                    &model.window,
                    &model.weights,
                    KernelKind::NaiveTime,
                    &fit_options(cfg, NoiseMode::Optimize),
                )
                .map_err(|e| e.in_stage("naive refit", Some(t)))?
                .hyper;
                predictor = NaivePredictor::new(&model).map_err(stage)?;
            } else if !predictor.matches(&model.window.indices) {
                predictor = NaivePredictor::new(&model).map_err(stage)?;
            }
        }
        // the window targets were read through the guard when appended
        let post = predictor
            .predict(&model.window.indices, &model.window.targets, t)
            .map_err(stage)?
            .shifted(p.baseline_at(t));
        let mut step = step_record(
            t,
            p.raw()[t],
            map_point(&post),
            &post,
            intervals.first().copied(),
        )
        .map_err(stage)?;
        step.max_index_read = obs.max_read().max(model.window.indices.last().copied());
        steps.push(step);
    }
    Ok((steps, model.hyper))
}

fn run_sarima(
    p: &Prepared,
    cfg: &RunConfig,
    intervals: &[(f64, f64)],
) -> Result<(Vec<StepRecord>, SarimaModel)> {
    let order = sarima_order(cfg, p);
    let mut model = fit_sarima(&p.raw()[..p.train_end], order).stage("sarima fit", None)?;
    info!("sarima {order}: {model:?}");
    let obs = Observations::new(p.raw(), &p.baseline);
    let mut steps = Vec::new();
    for t in p.train_end..p.test_end {
        obs.begin_step(t);
        let stage = |e: Error| e.in_stage("sarima forecast", Some(t));
        let history = obs.raw_prefix().map_err(stage)?;
        if refit_due(cfg, p, t) {
            model = fit_sarima(history, order).map_err(|e| e.in_stage("sarima refit", Some(t)))?;
        }
        let f = model.forecast_one(history).map_err(stage)?;
        let post =
            GaussianPosterior::new(f, model.resid_var.max(f64::MIN_POSITIVE)).map_err(stage)?;
        let mut step =
            step_record(t, p.raw()[t], f, &post, intervals.first().copied()).map_err(stage)?;
        step.max_index_read = obs.max_read();
        steps.push(step);
    }
    Ok((steps, model))
}

/// Runs every configured method over the test span.
pub fn evaluate(cfg: &RunConfig) -> Result<RunOutput> {
    let p = prepare(cfg)?;
    evaluate_prepared(cfg, p)
}

pub fn evaluate_prepared(cfg: &RunConfig, p: Prepared) -> Result<RunOutput> {
    let intervals = risk_intervals(cfg, &p);
    let mut reports = Vec::new();
    let mut records = Vec::new();
    let mut fegp = None;
    for &method in &cfg.methods {
        info!("running {method}");
        let report = match method {
            Method::Fegp => {
                let training = train_fegp(&p, cfg)?;
                let (steps, recs, hyper) = run_fegp(&p, cfg, &training, &intervals)?;
                records = recs;
                let mut r = EvalReport::from_steps(method, steps, cfg.xi, cfg.segment_pad)
                    .stage("report", None)?;
                r.hyperparams = Some(hyper);
                r.feature_weights = Some(training.relief.weights.clone());
                fegp = Some(training);
                r
            }
            Method::NaiveGp => {
                let (model, _) = train_naive(&p, cfg)?;
                let (steps, hyper) = run_naive(&p, cfg, &model, &intervals)?;
                let mut r = EvalReport::from_steps(method, steps, cfg.xi, cfg.segment_pad)
                    .stage("report", None)?;
                r.hyperparams = Some(hyper);
                r
            }
            Method::Sarima => {
                let (steps, model) = run_sarima(&p, cfg, &intervals)?;
                let mut r = EvalReport::from_steps(method, steps, cfg.xi, cfg.segment_pad)
                    .stage("report", None)?;
                r.sarima = Some(model);
                r
            }
        };
        reports.push(report);
    }
    Ok(RunOutput {
        reports,
        records,
        fegp,
        prepared: p,
    })
}

fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        v.to_string()
    }
}

pub fn write_forecast_csv<W: Write>(steps: &[StepRecord], writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record([
        "index",
        "actual",
        "map_forecast",
        "prob_below",
        "prob_above",
    ])?;
    for s in steps {
        out.write_record([
            s.index.to_string(),
            fmt_num(s.actual),
            fmt_num(s.forecast),
            fmt_num(s.prob_below),
            fmt_num(s.prob_above),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_forecast_csv(path: impl AsRef<Path>) -> Result<Vec<StepRecord>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (n, row) in reader.records().enumerate() {
        let row = row?;
        let num = |k: usize| -> Result<f64> {
            let field = row.get(k).unwrap_or("");
            if field.is_empty() {
                return Ok(f64::NAN);
            }
            field.parse().map_err(|_| Error::Parse {
                line: n + 2,
                message: format!("bad number `{field}`"),
            })
        };
        out.push(StepRecord {
            index: row.get(0).unwrap_or("").parse().map_err(|_| Error::Parse {
                line: n + 2,
                message: "bad index".into(),
            })?,
            actual: num(1)?,
            forecast: num(2)?,
            prob_below: num(3)?,
            prob_above: num(4)?,
            max_index_read: None,
        });
    }
    Ok(out)
}

pub fn write_ace_curves<W: Write>(reports: &[EvalReport], writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    let mut header = vec!["step".to_string()];
    header.extend(Method::ALL.iter().map(|m| m.name().to_string()));
    out.write_record(&header)?;
    let len = reports.iter().map(|r| r.ace_curve.len()).max().unwrap_or(0);
    for k in 0..len {
        let mut row = vec![k.to_string()];
        for m in Method::ALL {
            row.push(
                reports
                    .iter()
                    .find(|r| r.method == m)
                    .and_then(|r| r.ace_curve.get(k))
                    .map(|v| v.to_string())
                    .unwrap_or_default(),
            );
        }
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Writes per-method CSV and JSON reports, the ACE curves and (optionally)
/// per-step JSONL records into `dir`.
pub fn write_outputs(out: &RunOutput, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for r in &out.reports {
        write_forecast_csv(
            &r.forecasts,
            create(&dir.join(format!("forecast_{}.csv", r.method)))?,
        )?;
        write_json(r, &dir.join(format!("report_{}.json", r.method)))?;
    }
    write_ace_curves(&out.reports, create(&dir.join("ace_curves.csv"))?)?;
    if !out.records.is_empty() {
        let mut w = create(&dir.join("steps_fegp.jsonl"))?;
        for rec in &out.records {
            serde_json::to_writer(&mut w, rec)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
    }
    Ok(())
}

pub fn run(cfg: &RunConfig) -> Result<Vec<EvalReport>> {
    let out = evaluate(cfg)?;
    write_outputs(&out, &cfg.output_dir).stage("write", None)?;
    Ok(out.reports)
}

/// Rebuilds reports and ACE curves from the forecast CSVs in `dir`.
/// Model details already present in an earlier JSON report are kept.
pub fn rerender(cfg: &RunConfig, dir: &Path) -> Result<Vec<EvalReport>> {
    let mut reports = Vec::new();
    for &m in &cfg.methods {
        let csv_path = dir.join(format!("forecast_{m}.csv"));
        if !csv_path.exists() {
            continue;
        }
        let steps = read_forecast_csv(&csv_path)?;
        let mut r = EvalReport::from_steps(m, steps, cfg.xi, cfg.segment_pad)?;
        let json_path = dir.join(format!("report_{m}.json"));
        if let Ok(text) = fs::read_to_string(&json_path) {
            if let Ok(old) = serde_json::from_str::<EvalReport>(&text) {
                r.hyperparams = old.hyperparams;
                r.feature_weights = old.feature_weights;
                r.sarima = old.sarima;
                for (new, old) in r.forecasts.iter_mut().zip(&old.forecasts) {
                    if new.index == old.index {
                        new.max_index_read = old.max_index_read;
                    }
                }
            }
        }
        write_json(&r, &json_path)?;
        reports.push(r);
    }
    if reports.is_empty() {
        return Err(Error::invalid(format!(
            "no forecast CSVs found in {}",
            dir.display()
        )));
    }
    write_ace_curves(&reports, create(&dir.join("ace_curves.csv"))?)?;
    Ok(reports)
}

/// Posterior for raw index `t` from a saved model, reading `series[..t]`.
pub fn mixture_from_document(
    doc: &ModelDocument,
    series: &[f64],
    t: usize,
) -> Result<MixturePosterior> {
    let model = GpModel::from_document(doc)?;
    let baseline = doc
        .baseline
        .as_ref()
        .filter(|b| !b.is_empty())
        .ok_or_else(|| Error::invalid("model document has no baseline"))?;
    let l = model.feature_map.config.lag_depth;
    if t < l || t > series.len() {
        return Err(Error::InsufficientHistory {
            needed: l,
            got: t.min(series.len()),
        });
    }
    let obs = Observations::new(series, baseline);
    obs.begin_step(t);
    let hist = obs.residuals(t - l..t)?;
    let f = model.feature_map.embed(&hist, l)?;
    Ok(
        predict_from_features(&model, &FeatureVector::new(t, f.values))?
            .shifted(baseline[t % baseline.len()]),
    )
}

/// Forecast record for raw index `t` from a saved model, on the raw scale.
pub fn forecast_from_document(
    doc: &ModelDocument,
    series: &[f64],
    t: usize,
    intervals: &[(f64, f64)],
    top_k: Option<usize>,
) -> Result<ForecastRecord> {
    let mixture = mixture_from_document(doc, series, t)?;
    let map = map_point(&mixture);
    ForecastRecord::from_mixture(t, &mixture, map, top_k, intervals)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ace_examples() {
        assert_eq!(ace(&[1.0, 2.0, 3.0], &[2.0, 2.0, 1.0], 0, 2).unwrap(), 3.0);
        assert_eq!(ace(&[4.0; 5], &[4.0; 5], 0, 4).unwrap(), 0.0);
        assert_eq!(ace(&[1.5; 6], &[1.0; 6], 1, 4).unwrap(), 2.0);
        assert!(ace(&[1.0; 3], &[1.0; 3], 2, 1).is_err());
        assert!(ace(&[1.0; 3], &[1.0; 3], 0, 3).is_err());
        assert!(ace(&[1.0; 3], &[1.0; 2], 0, 1).is_err());
    }

    #[test]
    fn flat_span_is_one_average_segment() {
        let s = segment_spikes(&[5.0; 40], 0.9, 2).unwrap();
        assert_eq!(
            s,
            vec![Segment {
                label: SegmentLabel::Average,
                from: 0,
                to: 39
            }]
        );
    }

    #[test]
    fn isolated_jump_is_padded() {
        // alternating small steps, one large jump at index 20
        let mut y: Vec<f64> = (0..40)
            .map(|i| if i % 2 == 0 { 0.0 } else { 1.0 })
            .collect();
        for v in &mut y[20..] {
            *v += 50.0;
        }
        let s = segment_spikes(&y, 0.9, 2).unwrap();
        let spikes: Vec<_> = s
            .iter()
            .filter(|s| s.label == SegmentLabel::Spike)
            .collect();
        assert_eq!(spikes.len(), 1);
        assert_eq!((spikes[0].from, spikes[0].to), (18, 22));
        // segments partition the span
        assert_eq!(s.first().unwrap().from, 0);
        assert_eq!(s.last().unwrap().to, 39);
        assert!(s.windows(2).all(|w| w[1].from == w[0].to + 1));
    }

    #[test]
    fn pad_is_clipped_at_bounds() {
        let mut y: Vec<f64> = (0..30).map(|i| (i % 2) as f64).collect();
        y[1] += 40.0;
        let s = segment_spikes(&y, 0.9, 2).unwrap();
        assert_eq!(s[0].label, SegmentLabel::Spike);
        assert_eq!(s[0].from, 0);
    }

    #[test]
    fn guard_rejects_future_reads() {
        let raw = [1.0, 2.0, 3.0, 4.0];
        let base = [0.5];
        let obs = Observations::new(&raw, &base);
        obs.begin_step(2);
        assert_eq!(obs.residual(1).unwrap(), 1.5);
        assert!(obs.raw(2).is_err());
        assert_eq!(obs.max_read(), Some(1));
        assert_eq!(obs.raw_prefix().unwrap(), &[1.0, 2.0]);
        obs.begin_step(3);
        assert_eq!(obs.max_read(), None);
    }

    #[test]
    fn report_curve_is_prefix_sum() {
        let steps: Vec<StepRecord> = (0..10)
            .map(|k| StepRecord {
                index: 100 + k,
                actual: k as f64,
                forecast: k as f64 + if k % 3 == 0 { 1.0 } else { -0.5 },
                prob_below: 0.1,
                prob_above: 0.1,
                max_index_read: Some(99 + k),
            })
            .collect();
        let r = EvalReport::from_steps(Method::Sarima, steps, 0.9, 2).unwrap();
        let mut acc = 0.0;
        for (k, c) in r.ace_curve.iter().enumerate() {
            acc += if k % 3 == 0 { 1.0 } else { 0.5 };
            assert!((c - acc).abs() < 1e-12);
        }
        assert_eq!(r.ace_total, *r.ace_curve.last().unwrap());
        assert!((r.spike_ace() + r.average_ace() - r.ace_total).abs() < 1e-12);
        assert_eq!(r.segments[0].from, 100);
    }

    #[test]
    fn forecast_csv_round_trip() {
        let steps = vec![
            StepRecord {
                index: 3,
                actual: 1.25,
                forecast: 0.1 + 0.2,
                prob_below: f64::NAN,
                prob_above: 0.5,
                max_index_read: None,
            },
            StepRecord {
                index: 4,
                actual: 2.0,
                forecast: -1e-300,
                prob_below: 0.0,
                prob_above: 1.0,
                max_index_read: None,
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csv");
        write_forecast_csv(&steps, File::create(&path).unwrap()).unwrap();
        let back = read_forecast_csv(&path).unwrap();
        assert_eq!(back[1], steps[1]);
        assert_eq!(back[0].forecast, steps[0].forecast);
        assert!(back[0].prob_below.is_nan());
    }

    #[test]
    fn percentile_interpolates() {
        let v = [4.0, 1.0, 3.0, 2.0, 5.0];
        assert_eq!(percentile(&v, 0.0), 1.0);
        assert_eq!(percentile(&v, 1.0), 5.0);
        assert_eq!(percentile(&v, 0.5), 3.0);
        assert!((percentile(&v, 0.05) - 1.2).abs() < 1e-12);
    }
}
