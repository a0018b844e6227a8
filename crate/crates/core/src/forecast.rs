//! One-step-ahead posteriors.
//!
//! The feature-embedded forecaster conditions the forecast point on each
//! training point separately and averages the resulting Gaussians with equal
//! weights. The naive forecaster conditions on the whole window jointly and
//! yields a single Gaussian.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::gp::{build_covariance, naive_kernel, Covariance, GpModel, Hyperparams, KernelKind};

/// Posterior variances are floored at this fraction of σ².
const VAR_FLOOR: f64 = 1e-10;

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

fn normal_pdf(x: f64, mu: f64, var: f64) -> f64 {
    let z = (x - mu) / var.sqrt();
    FRAC_1_SQRT_2PI / var.sqrt() * (-0.5 * z * z).exp()
}

fn normal_cdf(x: f64, mu: f64, var: f64) -> f64 {
    if x == f64::INFINITY {
        return 1.0;
    }
    if x == f64::NEG_INFINITY {
        return 0.0;
    }
    0.5 * erfc(-(x - mu) / (var.sqrt() * std::f64::consts::SQRT_2))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorComponent {
    pub mu: f64,
    pub var: f64,
    pub source_index: usize,
}

/// A predictive distribution over one future value.
pub trait Posterior {
    fn pdf(&self, x: f64) -> f64;
    fn cdf(&self, x: f64) -> f64;
    /// Location of the global density maximum.
    fn map_point_with(&self, settings: &MapSettings) -> f64;
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapSettings {
    pub grid_points: usize,
}

impl Default for MapSettings {
    fn default() -> Self {
        Self { grid_points: 4096 }
    }
}

/// Maximum a posteriori point with the default grid.
pub fn map_point<P: Posterior + ?Sized>(post: &P) -> f64 {
    post.map_point_with(&MapSettings::default())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianPosterior {
    pub mu: f64,
    pub var: f64,
}

impl GaussianPosterior {
    pub fn new(mu: f64, var: f64) -> Result<Self> {
        if !mu.is_finite() || !(var.is_finite() && var > 0.0) {
            return Err(Error::invalid(format!("invalid Gaussian N({mu}, {var})")));
        }
        Ok(Self { mu, var })
    }

    pub fn shifted(&self, offset: f64) -> Self {
        Self {
            mu: self.mu + offset,
            var: self.var,
        }
    }
}

impl Posterior for GaussianPosterior {
    fn pdf(&self, x: f64) -> f64 {
        normal_pdf(x, self.mu, self.var)
    }

    fn cdf(&self, x: f64) -> f64 {
        normal_cdf(x, self.mu, self.var)
    }

    fn map_point_with(&self, _: &MapSettings) -> f64 {
        self.mu
    }
}

/// Equal-weight Gaussian mixture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixturePosterior {
    components: Vec<PosteriorComponent>,
}

impl MixturePosterior {
    pub fn new(components: Vec<PosteriorComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::TooShort { needed: 1, got: 0 });
        }
        if let Some(c) = components
            .iter()
            .find(|c| !c.mu.is_finite() || !(c.var.is_finite() && c.var > 0.0))
        {
            return Err(Error::invalid(format!(
                "invalid component N({}, {})",
                c.mu, c.var
            )));
        }
        Ok(Self { components })
    }

    pub fn components(&self) -> &[PosteriorComponent] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn weight(&self) -> f64 {
        1.0 / self.components.len() as f64
    }

    pub fn mean(&self) -> f64 {
        self.components.iter().map(|c| c.mu).sum::<f64>() * self.weight()
    }

    pub fn shifted(&self, offset: f64) -> Self {
        Self {
            components: self
                .components
                .iter()
                .map(|c| PosteriorComponent {
                    mu: c.mu + offset,
                    ..*c
                })
                .collect(),
        }
    }
}

impl Posterior for MixturePosterior {
    fn pdf(&self, x: f64) -> f64 {
        self.components
            .iter()
            .map(|c| normal_pdf(x, c.mu, c.var))
            .sum::<f64>()
            * self.weight()
    }

    fn cdf(&self, x: f64) -> f64 {
        let s = self
            .components
            .iter()
            .map(|c| normal_cdf(x, c.mu, c.var))
            .sum::<f64>()
            * self.weight();
        s.clamp(0.0, 1.0)
    }

    /// Dense grid over `[min μ - 4 max σ, max μ + 4 max σ]`, then
    /// golden-section refinement between the neighbours of the best grid
    /// point. Exact ties go to the lower value.
    fn map_point_with(&self, settings: &MapSettings) -> f64 {
        if self.components.len() == 1 {
            return self.components[0].mu;
        }
        // canonical order so the density sum does not depend on input order
        let mut comps: Vec<(f64, f64, f64)> = self
            .components
            .iter()
            .map(|c| (c.mu, -0.5 / c.var, FRAC_1_SQRT_2PI / c.var.sqrt()))
            .collect();
        comps.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
        let density = |x: f64| -> f64 {
            comps
                .iter()
                .map(|&(mu, a, c)| c * (a * (x - mu) * (x - mu)).exp())
                .sum()
        };

        let max_sd = self
            .components
            .iter()
            .map(|c| c.var.sqrt())
            .fold(0.0, f64::max);
        let lo = comps.first().unwrap().0 - 4.0 * max_sd;
        let hi = comps.last().unwrap().0 + 4.0 * max_sd;
        let m = settings.grid_points.max(3);
        let step = (hi - lo) / (m - 1) as f64;

        let mut best_i = 0;
        let mut best_p = f64::NEG_INFINITY;
        for i in 0..m {
            let p = density(lo + step * i as f64);
            if p > best_p * (1.0 + 1e-12) || best_p == f64::NEG_INFINITY {
                best_p = p;
                best_i = i;
            }
        }
        let a = lo + step * best_i.saturating_sub(1) as f64;
        let b = lo + step * (best_i + 1).min(m - 1) as f64;
        let (x_ref, p_ref) = golden_max(&density, a, b);
        if p_ref >= best_p {
            x_ref
        } else {
            lo + step * best_i as f64
        }
    }
}

fn golden_max<F: Fn(f64) -> f64>(f: &F, mut a: f64, mut b: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs())) {
            break;
        }
        // ">=" keeps the lower side on ties
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub low: f64,
    pub high: f64,
    pub prob_below: f64,
    pub prob_within: f64,
    pub prob_above: f64,
}

/// Probability mass below, inside and above `[low, high]`.
pub fn risk<P: Posterior + ?Sized>(post: &P, low: f64, high: f64) -> Result<RiskReport> {
    if low.is_nan() || high.is_nan() || low > high {
        return Err(Error::invalid(format!(
            "risk interval [{low}, {high}] is empty"
        )));
    }
    let c_low = post.cdf(low);
    let c_high = post.cdf(high).max(c_low);
    Ok(RiskReport {
        low,
        high,
        prob_below: c_low,
        prob_within: c_high - c_low,
        prob_above: 1.0 - c_high,
    })
}

/// Posterior of the forecast point conditioned on window point `i` alone.
/// `f_features` must already be in the model's feature space.
pub fn component(
    model: &GpModel,
    f_features: &FeatureVector,
    i: usize,
) -> Result<PosteriorComponent> {
    let w = &model.window;
    if i >= w.len() {
        return Err(Error::Range {
            from: i,
            to: i,
            len: w.len(),
        });
    }
    let h = &model.hyper;
    let k_fi = model.cross_kernel(f_features, i)?;
    let k_ii = model.self_kernel();
    let k_ff = model.self_kernel();
    let denom = k_ii + h.noise_variance();
    let mu = w.mean + k_fi / denom * (w.targets[i] - w.mean);
    let var = h.noise_variance() + k_ff - k_fi * k_fi / denom;
    Ok(PosteriorComponent {
        mu,
        var: var.max(VAR_FLOOR * h.signal_variance()),
        source_index: w.indices[i],
    })
}

/// Mixture over all window points for a forecast point with known features.
pub fn predict_from_features(
    model: &GpModel,
    f_features: &FeatureVector,
) -> Result<MixturePosterior> {
    let components = (0..model.window.len())
        .map(|i| component(model, f_features, i))
        .collect::<Result<Vec<_>>>()?;
    MixturePosterior::new(components)
}

/// Forecast of the value following `recent_history` (residual scale).
pub fn predict_fegp(model: &GpModel, recent_history: &[f64]) -> Result<MixturePosterior> {
    if model.kind != KernelKind::FeatureEmbedded {
        return Err(Error::invalid(
            "predict_fegp needs a feature-embedded model",
        ));
    }
    let f = model
        .feature_map
        .embed(recent_history, recent_history.len())?;
    predict_from_features(model, &f)
}

/// Full-conditioning GP posterior at time index `t_f`.
pub fn predict_naive(model: &GpModel, t_f: usize) -> Result<GaussianPosterior> {
    if model.kind != KernelKind::NaiveTime {
        return Err(Error::invalid("predict_naive needs a time-kernel model"));
    }
    NaivePredictor::new(model)?.predict(&model.window.indices, &model.window.targets, t_f)
}

/// Factorized time-kernel covariance that can be reused for any window whose
/// indices are a time shift of the factorized ones (the kernel is
/// stationary, so the covariance is unchanged).
#[derive(Clone, Debug)]
pub struct NaivePredictor {
    hyper: Hyperparams,
    mean: f64,
    indices: Vec<usize>,
    cov: Covariance,
}

impl NaivePredictor {
    pub fn new(model: &GpModel) -> Result<Self> {
        let cov = build_covariance(
            &model.window,
            &model.weights,
            &model.hyper,
            KernelKind::NaiveTime,
        )?;
        Ok(Self {
            hyper: model.hyper,
            mean: model.window.mean,
            indices: model.window.indices.clone(),
            cov,
        })
    }

    /// Whether `indices` equal the factorized indices up to a constant shift.
    pub fn matches(&self, indices: &[usize]) -> bool {
        if indices.len() != self.indices.len() {
            return false;
        }
        let shift = indices[0] as i64 - self.indices[0] as i64;
        indices
            .iter()
            .zip(&self.indices)
            .all(|(&a, &b)| a as i64 - b as i64 == shift)
    }

    pub fn predict(
        &self,
        indices: &[usize],
        targets: &[f64],
        t_f: usize,
    ) -> Result<GaussianPosterior> {
        if !self.matches(indices) {
            return Err(Error::invalid(
                "window is not a time shift of the factorized window",
            ));
        }
        if targets.len() != indices.len() {
            return Err(Error::DimensionMismatch {
                left: indices.len(),
                right: targets.len(),
            });
        }
        let h = &self.hyper;
        let k_star = DVector::from_iterator(
            indices.len(),
            indices.iter().map(|&t| naive_kernel(t_f, t, h)),
        );
        let y = DVector::from_iterator(targets.len(), targets.iter().map(|v| v - self.mean));
        let alpha = self.cov.solve(&y);
        let v = self.cov.solve(&k_star);
        let mu = self.mean + k_star.dot(&alpha);
        let var = h.signal_variance() + h.noise_variance() - k_star.dot(&v);
        GaussianPosterior::new(mu, var.max(VAR_FLOOR * h.signal_variance()))
    }
}

/// Per-step forecast record written as one JSON line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    pub index: usize,
    pub map: f64,
    pub components: Vec<PosteriorComponent>,
    /// True when `components` holds only the top contributors at the MAP.
    pub truncated: bool,
    pub risk: Vec<RiskReport>,
}

impl ForecastRecord {
    /// Builds a record; with `top_k` set, keeps the components with the
    /// largest density contribution at `map`.
    pub fn from_mixture(
        index: usize,
        mixture: &MixturePosterior,
        map: f64,
        top_k: Option<usize>,
        intervals: &[(f64, f64)],
    ) -> Result<Self> {
        let mut components = mixture.components().to_vec();
        let truncated = matches!(top_k, Some(k) if k < components.len());
        if let Some(k) = top_k.filter(|_| truncated) {
            components.sort_by(|a, b| {
                normal_pdf(map, b.mu, b.var)
                    .total_cmp(&normal_pdf(map, a.mu, a.var))
                    .then(a.source_index.cmp(&b.source_index))
            });
            components.truncate(k);
        }
        let risk = intervals
            .iter()
            .map(|&(lo, hi)| risk(mixture, lo, hi))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            index,
            map,
            components,
            truncated,
            risk,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{FeatureWeights, FEATURE_DIM};
    use crate::gp::{FeatureMap, TrainingWindow};
    use approx::assert_relative_eq;

    fn comp(mu: f64, var: f64, i: usize) -> PosteriorComponent {
        PosteriorComponent {
            mu,
            var,
            source_index: i,
        }
    }

    fn fe_model(feats: Vec<Vec<f64>>, targets: Vec<f64>, hp: Hyperparams) -> GpModel {
        let n = feats.len();
        let fv = feats
            .into_iter()
            .enumerate()
            .map(|(i, v)| FeatureVector::new(i, v))
            .collect();
        let dim = FEATURE_DIM;
        let w = TrainingWindow::new((0..n).collect(), targets, fv, 0.0).unwrap();
        GpModel::new(
            w,
            FeatureWeights::uniform(dim),
            hp,
            KernelKind::FeatureEmbedded,
            FeatureMap::default(),
        )
        .unwrap()
    }

    #[test]
    fn zero_cross_covariance_collapses_to_prior() {
        let hp = Hyperparams::new(1.3, 0.01, 0.4).unwrap();
        let m = fe_model(vec![vec![0.0; FEATURE_DIM]], vec![5.0], hp);
        let far = FeatureVector::new(9, vec![100.0; FEATURE_DIM]);
        let c = component(&m, &far, 0).unwrap();
        assert_eq!(c.mu, 0.0);
        assert_relative_eq!(c.var, 0.16 + 1.69, epsilon = 1e-12);
    }

    #[test]
    fn identical_features_without_noise_reproduce_target() {
        let hp = Hyperparams::new(2.0, 1.0, 0.0).unwrap();
        let m = fe_model(vec![vec![0.5; FEATURE_DIM]], vec![3.25], hp);
        let c = component(&m, &FeatureVector::new(1, vec![0.5; FEATURE_DIM]), 0).unwrap();
        assert_eq!(c.mu, 3.25);
        assert!(c.var > 0.0 && c.var <= 1e-9);
    }

    #[test]
    fn single_point_mixture_is_its_component() {
        let hp = Hyperparams::new(1.0, 2.0, 0.3).unwrap();
        let m = fe_model(vec![vec![0.1; FEATURE_DIM]], vec![1.5], hp);
        let hist: Vec<f64> = vec![0.2, 0.1, 0.0, 0.3, 0.1, 0.2];
        let mix = predict_fegp(&m, &hist).unwrap();
        let f = m.feature_map.embed(&hist, hist.len()).unwrap();
        assert_eq!(mix.components(), &[component(&m, &f, 0).unwrap()]);
        assert_eq!(map_point(&mix), mix.components()[0].mu);
    }

    #[test]
    fn identical_components_match_one_gaussian() {
        let mix = MixturePosterior::new(vec![comp(1.0, 0.5, 0); 4]).unwrap();
        let g = GaussianPosterior::new(1.0, 0.5).unwrap();
        for x in [-2.0, 0.0, 0.7, 1.0, 3.0] {
            assert_relative_eq!(mix.pdf(x), g.pdf(x), max_relative = 1e-14);
        }
    }

    #[test]
    fn three_component_pdf_matches_hand_sum() {
        let cs = [comp(-1.0, 0.25, 0), comp(0.5, 1.0, 1), comp(2.0, 0.09, 2)];
        let mix = MixturePosterior::new(cs.to_vec()).unwrap();
        for k in 0..10 {
            let x = -3.0 + 0.6 * k as f64;
            let expected: f64 = cs
                .iter()
                .map(|c| {
                    (-(x - c.mu).powi(2) / (2.0 * c.var)).exp()
                        / (2.0 * std::f64::consts::PI * c.var).sqrt()
                })
                .sum::<f64>()
                / 3.0;
            assert_relative_eq!(mix.pdf(x), expected, max_relative = 1e-13);
        }
    }

    #[test]
    fn map_of_single_gaussian_is_mean() {
        assert_eq!(map_point(&GaussianPosterior::new(-4.5, 2.0).unwrap()), -4.5);
    }

    #[test]
    fn symmetric_tie_goes_to_lower_mean() {
        let mix = MixturePosterior::new(vec![comp(10.0, 1.0, 0), comp(-10.0, 1.0, 1)]).unwrap();
        let m = map_point(&mix);
        assert!((m + 10.0).abs() < 1e-6, "{m}");
    }

    #[test]
    fn map_matches_dense_grid() {
        let mix = MixturePosterior::new(vec![comp(0.0, 1.0, 0), comp(5.0, 4.0, 1)]).unwrap();
        let (lo, hi) = (-10.0, 15.0);
        let n = 1_000_000;
        let mut best = (lo, f64::NEG_INFINITY);
        for i in 0..=n {
            let x = lo + (hi - lo) * i as f64 / n as f64;
            let p = mix.pdf(x);
            if p > best.1 {
                best = (x, p);
            }
        }
        assert!((map_point(&mix) - best.0).abs() < 1e-3);
    }

    #[test]
    fn risk_cases() {
        let g = GaussianPosterior::new(0.0, 1.0).unwrap();
        let r = risk(&g, f64::NEG_INFINITY, f64::INFINITY).unwrap();
        assert_eq!((r.prob_below, r.prob_within, r.prob_above), (0.0, 1.0, 0.0));
        let r = risk(&g, -1.96, 1.96).unwrap();
        assert!((r.prob_within - 0.95).abs() < 1e-3);
        assert!((r.prob_below + r.prob_within + r.prob_above - 1.0).abs() < 1e-12);
        assert!(risk(&g, 1.0, 0.0).is_err());
    }

    #[test]
    fn naive_with_zero_cross_covariance() {
        let hp = Hyperparams::new(1.0, 0.5, 0.2).unwrap();
        let w = TrainingWindow::new(vec![0, 1, 2], vec![1.0, 2.0, 3.0], vec![], 0.5).unwrap();
        let m = GpModel::new(
            w,
            FeatureWeights::uniform(FEATURE_DIM),
            hp,
            KernelKind::NaiveTime,
            FeatureMap::default(),
        )
        .unwrap();
        let g = predict_naive(&m, 500).unwrap();
        assert_relative_eq!(g.mu, 0.5, epsilon = 1e-12);
        assert_relative_eq!(g.var, 1.04, epsilon = 1e-12);
    }

    #[test]
    fn naive_single_point_equals_component() {
        let hp = Hyperparams::new(1.4, 3.0, 0.3).unwrap();
        let w = TrainingWindow::new(vec![10], vec![2.5], vec![], 0.0).unwrap();
        let m = GpModel::new(
            w,
            FeatureWeights::uniform(FEATURE_DIM),
            hp,
            KernelKind::NaiveTime,
            FeatureMap::default(),
        )
        .unwrap();
        let g = predict_naive(&m, 12).unwrap();
        let c = component(&m, &FeatureVector::new(12, vec![]), 0).unwrap();
        assert_relative_eq!(g.mu, c.mu, max_relative = 1e-12);
        assert_relative_eq!(g.var, c.var, max_relative = 1e-12);
    }

    #[test]
    fn naive_predictor_reuses_shifted_windows() {
        let hp = Hyperparams::new(1.0, 2.0, 0.3).unwrap();
        let w =
            TrainingWindow::new(vec![0, 1, 2, 3], vec![0.1, 0.4, -0.2, 0.3], vec![], 0.0).unwrap();
        let m = GpModel::new(
            w,
            FeatureWeights::uniform(FEATURE_DIM),
            hp,
            KernelKind::NaiveTime,
            FeatureMap::default(),
        )
        .unwrap();
        let p = NaivePredictor::new(&m).unwrap();
        let targets = [0.4, -0.2, 0.3, 0.9];
        let shifted = p.predict(&[1, 2, 3, 4], &targets, 5).unwrap();
        let w2 = TrainingWindow::new(vec![1, 2, 3, 4], targets.to_vec(), vec![], 0.0).unwrap();
        let m2 = GpModel {
            window: w2,
            ..m.clone()
        };
        let direct = predict_naive(&m2, 5).unwrap();
        assert_relative_eq!(shifted.mu, direct.mu, max_relative = 1e-12);
        assert!(p.predict(&[1, 2, 4, 5], &targets, 6).is_err());
    }

    #[test]
    fn record_truncates_to_top_contributors() {
        let mix = MixturePosterior::new(vec![
            comp(0.0, 1.0, 3),
            comp(0.1, 1.0, 4),
            comp(9.0, 1.0, 5),
        ])
        .unwrap();
        let map = map_point(&mix);
        let r = ForecastRecord::from_mixture(7, &mix, map, Some(2), &[(-1.0, 1.0)]).unwrap();
        assert!(r.truncated);
        assert_eq!(r.components.len(), 2);
        assert!(r.components.iter().all(|c| c.source_index != 5));
        let full = ForecastRecord::from_mixture(7, &mix, map, Some(10), &[]).unwrap();
        assert!(!full.truncated);
        assert_eq!(full.components.len(), 3);
    }
}
