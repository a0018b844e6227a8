//! Gaussian process prior, kernels and hyper-parameter training.
//!
//! Two kernels share one squared-exponential form `σ² exp(-d² / 2β²)`:
//! the feature-embedded kernel measures `d` between weighted feature vectors,
//! the naive kernel measures it along the time axis. Hyper-parameters are
//! trained by minimizing `(y-M)ᵀ C⁻¹ (y-M) + log|C|` with `C = K + σ_n² I`,
//! in log-parameter space.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{
    embed_at, weighted_sq_distance, FeatureConfig, FeatureVector, FeatureWeights, Standardizer,
    TrafficFeatures, FEATURE_DIM,
};
use crate::optimize::{minimize, OptimizerSettings};
use crate::relief::{Category, CategoryTag};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Jitter ladder relative to σ²: first rung, growth factor, cap.
const JITTER_START: f64 = 1e-10;
const JITTER_GROWTH: f64 = 10.0;
const JITTER_CAP: f64 = 1e-6;

/// Smallest noise std used when optimizing in log space.
const MIN_NOISE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub sigma: f64,
    pub beta: f64,
    pub sigma_n: f64,
}

impl Hyperparams {
    pub fn new(sigma: f64, beta: f64, sigma_n: f64) -> Result<Self> {
        let h = Self {
            sigma,
            beta,
            sigma_n,
        };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::invalid(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(Error::invalid(format!(
                "beta must be positive, got {}",
                self.beta
            )));
        }
        if !(self.sigma_n.is_finite() && self.sigma_n >= 0.0) {
            return Err(Error::invalid(format!(
                "sigma_n must be >= 0, got {}",
                self.sigma_n
            )));
        }
        Ok(())
    }

    /// `(ln σ, ln β, ln σ_n)`, with σ_n floored so the log is finite.
    pub fn to_log(&self) -> [f64; 3] {
        [
            self.sigma.ln(),
            self.beta.ln(),
            self.sigma_n.max(MIN_NOISE).ln(),
        ]
    }

    pub fn from_log(p: [f64; 3]) -> Self {
        Self {
            sigma: p[0].exp(),
            beta: p[1].exp(),
            sigma_n: p[2].exp(),
        }
    }

    pub fn signal_variance(&self) -> f64 {
        self.sigma * self.sigma
    }

    pub fn noise_variance(&self) -> f64 {
        self.sigma_n * self.sigma_n
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    FeatureEmbedded,
    NaiveTime,
}

#[inline]
fn se_from_sq(d2: f64, h: &Hyperparams) -> f64 {
    h.signal_variance() * (-d2 / (2.0 * h.beta * h.beta)).exp()
}

/// Feature-embedded RBF kernel between two time points.
pub fn kernel(
    a: &FeatureVector,
    b: &FeatureVector,
    w: &FeatureWeights,
    h: &Hyperparams,
) -> Result<f64> {
    if a.dim() != b.dim() || a.dim() != w.dim() {
        return Err(Error::DimensionMismatch {
            left: a.dim(),
            right: if a.dim() != b.dim() { b.dim() } else { w.dim() },
        });
    }
    Ok(se_from_sq(
        weighted_sq_distance(&a.values, &b.values, w.as_slice()),
        h,
    ))
}

/// Squared-exponential kernel over the time axis.
pub fn naive_kernel(t_i: usize, t_j: usize, h: &Hyperparams) -> f64 {
    let d = t_i as f64 - t_j as f64;
    se_from_sq(d * d, h)
}

/// Retained training points with their targets and (model-space) features.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingWindow {
    pub indices: Vec<usize>,
    pub targets: Vec<f64>,
    /// Aligned with `indices`. May be empty for windows used only with the
    /// time kernel.
    pub features: Vec<FeatureVector>,
    /// Constant prior mean `M(t)`.
    pub mean: f64,
}

impl TrainingWindow {
    pub fn new(
        indices: Vec<usize>,
        targets: Vec<f64>,
        features: Vec<FeatureVector>,
        mean: f64,
    ) -> Result<Self> {
        let w = Self {
            indices,
            targets,
            features,
            mean,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.indices.len();
        if n == 0 {
            return Err(Error::TooShort { needed: 1, got: 0 });
        }
        if self.targets.len() != n {
            return Err(Error::DimensionMismatch {
                left: n,
                right: self.targets.len(),
            });
        }
        if !self.features.is_empty() && self.features.len() != n {
            return Err(Error::DimensionMismatch {
                left: n,
                right: self.features.len(),
            });
        }
        if self.targets.iter().any(|v| !v.is_finite()) || !self.mean.is_finite() {
            return Err(Error::invalid("window targets must be finite"));
        }
        if self
            .features
            .iter()
            .any(|f| f.values.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::invalid("window features must be finite"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn push(&mut self, index: usize, target: f64, feature: Option<FeatureVector>) {
        self.indices.push(index);
        self.targets.push(target);
        if let Some(f) = feature {
            self.features.push(f);
        }
    }

    fn centered_targets(&self) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.targets.iter().map(|y| y - self.mean))
    }

    fn require_features(&self, kind: KernelKind) -> Result<()> {
        if kind == KernelKind::FeatureEmbedded && self.features.len() != self.len() {
            return Err(Error::invalid(
                "feature-embedded kernel needs a feature per window point",
            ));
        }
        Ok(())
    }
}

/// Pairwise squared distances of a window under the chosen kernel geometry.
fn sq_distances(
    window: &TrainingWindow,
    weights: &FeatureWeights,
    kind: KernelKind,
) -> Result<DMatrix<f64>> {
    window.require_features(kind)?;
    let n = window.len();
    if kind == KernelKind::FeatureEmbedded {
        if let Some(f) = window.features.iter().find(|f| f.dim() != weights.dim()) {
            return Err(Error::DimensionMismatch {
                left: weights.dim(),
                right: f.dim(),
            });
        }
    }
    let w = weights.as_slice();
    let mut d2 = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = match kind {
                KernelKind::FeatureEmbedded => {
                    weighted_sq_distance(&window.features[i].values, &window.features[j].values, w)
                }
                KernelKind::NaiveTime => {
                    let d = window.indices[i] as f64 - window.indices[j] as f64;
                    d * d
                }
            };
            d2[(i, j)] = v;
            d2[(j, i)] = v;
        }
    }
    Ok(d2)
}

fn kernel_matrix(d2: &DMatrix<f64>, h: &Hyperparams) -> DMatrix<f64> {
    d2.map(|v| se_from_sq(v, h))
}

/// Cholesky of `c`, retrying with a growing diagonal jitter.
/// Returns the factor and the jitter that was needed (0 if none).
fn factorize(c: &DMatrix<f64>, signal_variance: f64) -> Result<(Cholesky<f64, Dyn>, f64)> {
    if let Some(ch) = Cholesky::new(c.clone()) {
        return Ok((ch, 0.0));
    }
    let mut rel = JITTER_START;
    while rel <= JITTER_CAP * (1.0 + 1e-9) {
        let jitter = rel * signal_variance;
        let mut cj = c.clone();
        for i in 0..cj.nrows() {
            cj[(i, i)] += jitter;
        }
        if let Some(ch) = Cholesky::new(cj) {
            return Ok((ch, jitter));
        }
        rel *= JITTER_GROWTH;
    }
    Err(Error::Factorization {
        jitter: JITTER_CAP * signal_variance,
    })
}

/// Regularized covariance `C = K + σ_n² I` and its factorization.
#[derive(Clone, Debug)]
pub struct Covariance {
    /// `K + σ_n² I`, without jitter.
    pub matrix: DMatrix<f64>,
    /// Diagonal jitter added before factorizing.
    pub jitter: f64,
    pub cholesky: Cholesky<f64, Dyn>,
}

impl Covariance {
    fn from_sq_distances(d2: &DMatrix<f64>, h: &Hyperparams) -> Result<Self> {
        let mut matrix = kernel_matrix(d2, h);
        for i in 0..matrix.nrows() {
            matrix[(i, i)] += h.noise_variance();
        }
        let (cholesky, jitter) = factorize(&matrix, h.signal_variance())?;
        Ok(Self {
            matrix,
            jitter,
            cholesky,
        })
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self
            .cholesky
            .l_dirty()
            .diagonal()
            .iter()
            .map(|d| d.ln())
            .sum::<f64>()
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.cholesky.solve(b)
    }
}

pub fn build_covariance(
    window: &TrainingWindow,
    weights: &FeatureWeights,
    h: &Hyperparams,
    kind: KernelKind,
) -> Result<Covariance> {
    window.validate()?;
    h.validate()?;
    Covariance::from_sq_distances(&sq_distances(window, weights, kind)?, h)
}

/// Negative log marginal likelihood (up to constants and a factor of 2).
pub fn nlml(
    window: &TrainingWindow,
    weights: &FeatureWeights,
    h: &Hyperparams,
    kind: KernelKind,
) -> Result<f64> {
    NlmlProblem::new(window, weights, kind)?.value(h)
}

/// Objective and its gradient with respect to `(ln σ, ln β, ln σ_n)`.
pub fn nlml_with_gradient(
    window: &TrainingWindow,
    weights: &FeatureWeights,
    h: &Hyperparams,
    kind: KernelKind,
) -> Result<(f64, [f64; 3])> {
    NlmlProblem::new(window, weights, kind)?.value_and_gradient(h)
}

/// Objective with the (hyper-parameter independent) distances precomputed.
struct NlmlProblem {
    d2: DMatrix<f64>,
    y: DVector<f64>,
}

impl NlmlProblem {
    fn new(window: &TrainingWindow, weights: &FeatureWeights, kind: KernelKind) -> Result<Self> {
        window.validate()?;
        Ok(Self {
            d2: sq_distances(window, weights, kind)?,
            y: window.centered_targets(),
        })
    }

    fn value(&self, h: &Hyperparams) -> Result<f64> {
        h.validate()?;
        let cov = Covariance::from_sq_distances(&self.d2, h)?;
        let alpha = cov.solve(&self.y);
        let v = self.y.dot(&alpha) + cov.log_det();
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite)
        }
    }

    fn value_and_gradient(&self, h: &Hyperparams) -> Result<(f64, [f64; 3])> {
        h.validate()?;
        let cov = Covariance::from_sq_distances(&self.d2, h)?;
        let alpha = cov.solve(&self.y);
        let value = self.y.dot(&alpha) + cov.log_det();
        let c_inv = cov.cholesky.inverse();
        let n = self.y.len();
        let inv_beta2 = 1.0 / (h.beta * h.beta);
        // dl/dθ = -tr((ααᵀ - C⁻¹) dC/dθ)
        let (mut g_sigma, mut g_beta, mut g_noise) = (0.0, 0.0, 0.0);
        for j in 0..n {
            for i in 0..n {
                let w = alpha[i] * alpha[j] - c_inv[(i, j)];
                let k = cov.matrix[(i, j)] - if i == j { h.noise_variance() } else { 0.0 };
                g_sigma += w * 2.0 * k;
                g_beta += w * k * self.d2[(i, j)] * inv_beta2;
                if i == j {
                    g_noise += w * 2.0 * h.noise_variance();
                }
            }
        }
        let grad = [-g_sigma, -g_beta, -g_noise];
        if value.is_finite() && grad.iter().all(|g| g.is_finite()) {
            Ok((value, grad))
        } else {
            Err(Error::NonFinite)
        }
    }

    /// Median pairwise distance, used to seed β.
    fn median_distance(&self) -> f64 {
        let n = self.d2.nrows();
        let mut v: Vec<f64> = (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .map(|(i, j)| self.d2[(i, j)])
            .filter(|d| *d > 0.0)
            .collect();
        if v.is_empty() {
            return 1.0;
        }
        let mid = v.len() / 2;
        let (_, m, _) = v.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
        m.sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// σ_n is trained jointly with σ and β.
    Optimize,
    /// σ_n is held at the given value.
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub restarts: usize,
    pub seed: u64,
    pub noise: NoiseMode,
    pub optimizer: OptimizerSettings,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            restarts: 5,
            seed: 0,
            noise: NoiseMode::Optimize,
            optimizer: OptimizerSettings::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RestartOutcome {
    pub start: Hyperparams,
    pub start_nlml: Option<f64>,
    pub result: Option<(Hyperparams, f64)>,
    pub converged: bool,
}

#[derive(Clone, Debug)]
pub struct FitReport {
    pub hyper: Hyperparams,
    pub nlml: f64,
    pub restarts: Vec<RestartOutcome>,
}

/// Noise std from the median absolute first difference of `y`. For white
/// noise of std s the differences have std s·√2 and median absolute value
/// 0.6745·s·√2; occasional large jumps barely move the median.
pub fn noise_from_differences(y: &[f64]) -> f64 {
    if y.len() < 2 {
        return 0.0;
    }
    let mut d: Vec<f64> = y.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    d.sort_by(f64::total_cmp);
    let n = d.len();
    let median = if n % 2 == 1 {
        d[n / 2]
    } else {
        0.5 * (d[n / 2 - 1] + d[n / 2])
    };
    median / (0.674_489_750_196_081_7 * std::f64::consts::SQRT_2)
}

pub fn fit(
    window: &TrainingWindow,
    weights: &FeatureWeights,
    kind: KernelKind,
    opts: &FitOptions,
) -> Result<Hyperparams> {
    fit_report(window, weights, kind, opts).map(|r| r.hyper)
}

/// Multi-start minimization of the NLML. Restart 0 starts from data-driven
/// values; the others perturb it with seeded draws. Returns the best end
/// point over all restarts that succeeded.
pub fn fit_report(
    window: &TrainingWindow,
    weights: &FeatureWeights,
    kind: KernelKind,
    opts: &FitOptions,
) -> Result<FitReport> {
    if window.len() < 2 {
        return Err(Error::TooShort {
            needed: 2,
            got: window.len(),
        });
    }
    let problem = NlmlProblem::new(window, weights, kind)?;
    let n = window.len() as f64;
    let var = problem.y.iter().map(|v| v * v).sum::<f64>() / n;
    let sd = var.sqrt().max(1e-6);
    let base = match opts.noise {
        NoiseMode::Optimize => [sd.ln(), problem.median_distance().ln(), (0.3 * sd).ln()],
        NoiseMode::Fixed(s) => [
            sd.ln(),
            problem.median_distance().ln(),
            s.max(MIN_NOISE).ln(),
        ],
    };
    let fixed_noise = match opts.noise {
        NoiseMode::Fixed(s) => Some(s),
        NoiseMode::Optimize => None,
    };

    let to_hyper = |p: &[f64]| -> Hyperparams {
        match fixed_noise {
            Some(s) => Hyperparams {
                sigma: p[0].exp(),
                beta: p[1].exp(),
                sigma_n: s,
            },
            None => Hyperparams::from_log([p[0], p[1], p[2]]),
        }
    };
    let dims = if fixed_noise.is_some() { 2 } else { 3 };

    let mut outcomes = Vec::new();
    let mut best: Option<(Hyperparams, f64)> = None;
    for r in 0..opts.restarts.max(1) {
        let mut start = base;
        if r > 0 {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(r as u64));
            start[0] += rng.random_range(-1.0..1.0);
            start[1] += rng.random_range(-1.5..1.5);
            start[2] += rng.random_range(-1.5..1.5);
        }
        let start_h = to_hyper(&start[..dims]);
        let objective = |p: &[f64]| -> Result<(f64, Vec<f64>)> {
            let (v, g) = problem.value_and_gradient(&to_hyper(p))?;
            Ok((v, g[..dims].to_vec()))
        };
        let start_nlml = problem.value(&start_h).ok();
        let outcome = match minimize(objective, &start[..dims], &opts.optimizer) {
            Ok(m) => {
                let h = to_hyper(&m.x);
                if best.as_ref().is_none_or(|(_, v)| m.value < *v) {
                    best = Some((h, m.value));
                }
                RestartOutcome {
                    start: start_h,
                    start_nlml,
                    result: Some((h, m.value)),
                    converged: m.converged,
                }
            }
            Err(_) => RestartOutcome {
                start: start_h,
                start_nlml,
                result: None,
                converged: false,
            },
        };
        outcomes.push(outcome);
    }
    let (hyper, nlml) = best.ok_or(Error::Factorization { jitter: JITTER_CAP })?;
    Ok(FitReport {
        hyper,
        nlml,
        restarts: outcomes,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrunePolicy {
    pub max_size: usize,
    pub extreme_keep_fraction: f64,
}

impl Default for PrunePolicy {
    fn default() -> Self {
        Self {
            max_size: 672,
            extreme_keep_fraction: 0.2,
        }
    }
}

impl PrunePolicy {
    pub fn validate(&self) -> Result<()> {
        if self.max_size == 0 {
            return Err(Error::invalid("max_size must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.extreme_keep_fraction) {
            return Err(Error::invalid("extreme_keep_fraction must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Caps the window at `max_size` points.
///
/// The `floor(fraction * max_size)` most recent extreme points are reserved;
/// the remaining slots go to the most recent of all other points. With a
/// fraction of zero this is plain reverse-chronological truncation. Points
/// without a tag count as typical. Output keeps the input order.
pub fn prune(
    window: &TrainingWindow,
    tags: &[CategoryTag],
    policy: &PrunePolicy,
) -> TrainingWindow {
    let n = window.len();
    let max = policy.max_size.max(1);
    if n <= max {
        return window.clone();
    }
    let mut sorted_tags: Vec<(usize, Category)> =
        tags.iter().map(|t| (t.index, t.category)).collect();
    sorted_tags.sort_by_key(|t| t.0);
    let is_extreme = |idx: usize| {
        sorted_tags
            .binary_search_by_key(&idx, |t| t.0)
            .map(|p| sorted_tags[p].1 == Category::Extreme)
            .unwrap_or(false)
    };

    // positions ordered most recent first
    let mut by_recency: Vec<usize> = (0..n).collect();
    by_recency.sort_by(|&a, &b| window.indices[b].cmp(&window.indices[a]).then(b.cmp(&a)));

    let quota = (policy.extreme_keep_fraction.clamp(0.0, 1.0) * max as f64).floor() as usize;
    let mut keep = vec![false; n];
    let mut kept = 0;
    for &p in &by_recency {
        if kept == quota {
            break;
        }
        if is_extreme(window.indices[p]) {
            keep[p] = true;
            kept += 1;
        }
    }
    for &p in &by_recency {
        if kept == max {
            break;
        }
        if !keep[p] {
            keep[p] = true;
            kept += 1;
        }
    }

    let mut out = TrainingWindow {
        indices: Vec::with_capacity(max),
        targets: Vec::with_capacity(max),
        features: Vec::with_capacity(if window.features.is_empty() { 0 } else { max }),
        mean: window.mean,
    };
    for p in (0..n).filter(|&p| keep[p]) {
        out.indices.push(window.indices[p]);
        out.targets.push(window.targets[p]);
        if !window.features.is_empty() {
            out.features.push(window.features[p].clone());
        }
    }
    out
}

/// How raw lag windows are turned into model-space feature vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub config: FeatureConfig,
    pub standardizer: Standardizer,
}

impl Default for FeatureMap {
    fn default() -> Self {
        Self {
            config: FeatureConfig::default(),
            standardizer: Standardizer::identity(FEATURE_DIM),
        }
    }
}

impl FeatureMap {
    /// Model-space features of point `l` from the values before it.
    pub fn embed(&self, history: &[f64], l: usize) -> Result<FeatureVector> {
        self.config.validate()?;
        let gen = TrafficFeatures {
            config: self.config.clone(),
        };
        Ok(self.standardizer.apply(&embed_at(&gen, history, l)?))
    }
}

/// Fitted GP: training window, feature weights, hyper-parameters, kernel.
#[derive(Clone, Debug, PartialEq)]
pub struct GpModel {
    pub window: TrainingWindow,
    pub weights: FeatureWeights,
    pub hyper: Hyperparams,
    pub kind: KernelKind,
    pub feature_map: FeatureMap,
}

impl GpModel {
    pub fn new(
        window: TrainingWindow,
        weights: FeatureWeights,
        hyper: Hyperparams,
        kind: KernelKind,
        feature_map: FeatureMap,
    ) -> Result<Self> {
        window.validate()?;
        window.require_features(kind)?;
        hyper.validate()?;
        Ok(Self {
            window,
            weights,
            hyper,
            kind,
            feature_map,
        })
    }

    /// Kernel between a forecast point and window point `i`.
    pub fn cross_kernel(&self, f: &FeatureVector, i: usize) -> Result<f64> {
        match self.kind {
            KernelKind::FeatureEmbedded => {
                kernel(f, &self.window.features[i], &self.weights, &self.hyper)
            }
            KernelKind::NaiveTime => Ok(naive_kernel(
                f.time_index,
                self.window.indices[i],
                &self.hyper,
            )),
        }
    }

    pub fn self_kernel(&self) -> f64 {
        self.hyper.signal_variance()
    }

    pub fn to_document(&self) -> ModelDocument {
        ModelDocument {
            format_version: MODEL_FORMAT_VERSION,
            kernel_kind: self.kind,
            hyperparams: self.hyper,
            weights: self.weights.clone(),
            feature_map: self.feature_map.clone(),
            window: WindowDocument {
                mean: self.window.mean,
                indices: self.window.indices.clone(),
                targets: self.window.targets.clone(),
                features: self
                    .window
                    .features
                    .iter()
                    .map(|f| f.values.clone())
                    .collect(),
            },
            baseline: None,
            delta_threshold: None,
        }
    }

    pub fn from_document(doc: &ModelDocument) -> Result<Self> {
        if doc.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported model format version {}",
                doc.format_version
            )));
        }
        let w = &doc.window;
        let features = if w.features.is_empty() {
            Vec::new()
        } else {
            if w.features.len() != w.indices.len() {
                return Err(Error::DimensionMismatch {
                    left: w.indices.len(),
                    right: w.features.len(),
                });
            }
            w.indices
                .iter()
                .zip(&w.features)
                .map(|(&i, v)| FeatureVector::new(i, v.clone()))
                .collect()
        };
        let window = TrainingWindow::new(w.indices.clone(), w.targets.clone(), features, w.mean)?;
        Self::new(
            window,
            doc.weights.clone(),
            doc.hyperparams,
            doc.kernel_kind,
            doc.feature_map.clone(),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowDocument {
    pub mean: f64,
    pub indices: Vec<usize>,
    pub targets: Vec<f64>,
    pub features: Vec<Vec<f64>>,
}

/// JSON form of a fitted model. Field order is fixed by declaration order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub format_version: u32,
    pub kernel_kind: KernelKind,
    pub hyperparams: Hyperparams,
    pub weights: FeatureWeights,
    pub feature_map: FeatureMap,
    pub window: WindowDocument,
    /// Daily baseline the model's residuals were taken against.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_threshold: Option<crate::relief::DeltaThreshold>,
}

impl ModelDocument {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}
