//! Lag-window feature embedding of a residual series.
//!
//! Each time point `l` is mapped to a vector of statistics of the values that
//! precede it: four raw lags (baseline level), two absolute trend terms, two
//! relative trend ratios and the spread of the last five values.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dimension of the default feature set.
pub const FEATURE_DIM: usize = 9;
/// Lags consumed by the default feature set.
pub const MIN_LAG_DEPTH: usize = 5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StdMode {
    #[default]
    Population,
    Sample,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    /// Number of preceding values required before a point can be embedded.
    pub lag_depth: usize,
    /// Ratio denominators smaller than this in magnitude are clamped to it.
    pub ratio_epsilon: f64,
    pub std_mode: StdMode,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            lag_depth: MIN_LAG_DEPTH,
            ratio_epsilon: 1e-6,
            std_mode: StdMode::Population,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lag_depth < MIN_LAG_DEPTH {
            return Err(Error::invalid(format!(
                "lag_depth must be at least {MIN_LAG_DEPTH}, got {}",
                self.lag_depth
            )));
        }
        if !(self.ratio_epsilon.is_finite() && self.ratio_epsilon > 0.0) {
            return Err(Error::invalid("ratio_epsilon must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub time_index: usize,
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn new(time_index: usize, values: Vec<f64>) -> Self {
        Self { time_index, values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Nonnegative feature weights with unit L2 norm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FeatureWeights(Vec<f64>);

impl FeatureWeights {
    /// Normalizes `raw` to unit length. Fails on negative, non-finite or
    /// all-zero input.
    pub fn new(raw: Vec<f64>) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::invalid("weights must be nonempty"));
        }
        if raw.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid("weights must be finite and nonnegative"));
        }
        let norm = raw.iter().map(|w| w * w).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::invalid("weights must not all be zero"));
        }
        Ok(Self(raw.into_iter().map(|w| w / norm).collect()))
    }

    /// Equal weights `1/sqrt(dim)`.
    pub fn uniform(dim: usize) -> Self {
        Self(vec![1.0 / (dim as f64).sqrt(); dim])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Vectors that are already unit length (to 1e-9) are kept bit for bit, so
/// stored weights survive a save and load unchanged.
impl TryFrom<Vec<f64>> for FeatureWeights {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        let norm = v.iter().map(|w| w * w).sum::<f64>().sqrt();
        let w = Self::new(v.clone())?;
        if (norm - 1.0).abs() <= 1e-9 {
            Ok(Self(v))
        } else {
            Ok(w)
        }
    }
}

impl From<FeatureWeights> for Vec<f64> {
    fn from(w: FeatureWeights) -> Self {
        w.0
    }
}

/// Maps the window of preceding values to a feature vector.
///
/// `lags[0]` is the most recent value `y(l-1)`, `lags[1]` is `y(l-2)`, and so on.
pub trait FeatureGenerator {
    fn dim(&self) -> usize;
    fn lag_depth(&self) -> usize;
    fn generate(&self, lags: &[f64]) -> Vec<f64>;
}

/// The nine-feature traffic event embedding.
#[derive(Clone, Debug, Default)]
pub struct TrafficFeatures {
    pub config: FeatureConfig,
}

impl TrafficFeatures {
    fn clamp_denominator(&self, d: f64) -> f64 {
        let eps = self.config.ratio_epsilon;
        if d.abs() < eps {
            if d < 0.0 {
                -eps
            } else {
                eps
            }
        } else {
            d
        }
    }
}

impl FeatureGenerator for TrafficFeatures {
    fn dim(&self) -> usize {
        FEATURE_DIM
    }

    fn lag_depth(&self) -> usize {
        self.config.lag_depth
    }

    fn generate(&self, lags: &[f64]) -> Vec<f64> {
        let (y1, y2, y3, y4, y5) = (lags[0], lags[1], lags[2], lags[3], lags[4]);
        let window = &lags[..5];
        // offsets from y1 keep a flat window exactly flat
        let offset_mean = window.iter().map(|v| v - y1).sum::<f64>() / 5.0;
        let ss: f64 = window.iter().map(|v| (v - y1 - offset_mean).powi(2)).sum();
        let divisor = match self.config.std_mode {
            StdMode::Population => 5.0,
            StdMode::Sample => 4.0,
        };
        vec![
            y1,
            y2,
            y3,
            y4,
            y2 - y5,
            y3 + y4,
            (y2 - y1) / self.clamp_denominator(y3 - y2),
            (y2 - y3) / self.clamp_denominator(y3 - y4),
            (ss / divisor).sqrt(),
        ]
    }
}

/// Embeds time point `l` of `history` using the values before it.
/// `l` may equal `history.len()` (the next, unobserved point).
pub fn featurize(history: &[f64], l: usize, cfg: &FeatureConfig) -> Result<FeatureVector> {
    cfg.validate()?;
    embed_at(
        &TrafficFeatures {
            config: cfg.clone(),
        },
        history,
        l,
    )
}

pub fn embed_at<G: FeatureGenerator>(gen: &G, history: &[f64], l: usize) -> Result<FeatureVector> {
    let depth = gen.lag_depth();
    if l < depth || l > history.len() {
        return Err(Error::InsufficientHistory {
            needed: depth,
            got: l.min(history.len()),
        });
    }
    let lags: Vec<f64> = history[l - depth..l].iter().rev().copied().collect();
    if lags.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid(format!(
            "non-finite history before index {l}"
        )));
    }
    Ok(FeatureVector::new(l, gen.generate(&lags)))
}

/// One feature vector per index in `lag_depth..len`, in order.
pub fn featurize_series(residual: &[f64], cfg: &FeatureConfig) -> Result<Vec<FeatureVector>> {
    cfg.validate()?;
    if residual.len() <= cfg.lag_depth {
        return Err(Error::TooShort {
            needed: cfg.lag_depth + 1,
            got: residual.len(),
        });
    }
    let gen = TrafficFeatures {
        config: cfg.clone(),
    };
    (cfg.lag_depth..residual.len())
        .map(|l| embed_at(&gen, residual, l))
        .collect()
}

fn check_dims(a: &FeatureVector, b: &FeatureVector, w: &FeatureWeights) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    if a.dim() != w.dim() {
        return Err(Error::DimensionMismatch {
            left: a.dim(),
            right: w.dim(),
        });
    }
    Ok(())
}

/// Squared Euclidean distance between the weighted vectors. Assumes equal
/// dimensions.
pub(crate) fn weighted_sq_distance(a: &[f64], b: &[f64], w: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .zip(w)
        .map(|((x, y), w)| {
            let d = w * x - w * y;
            d * d
        })
        .sum()
}

/// Euclidean distance between the weighted vectors `w∘a` and `w∘b`.
pub fn weighted_distance(a: &FeatureVector, b: &FeatureVector, w: &FeatureWeights) -> Result<f64> {
    check_dims(a, b, w)?;
    Ok(weighted_sq_distance(&a.values, &b.values, w.as_slice()).sqrt())
}

/// Per-dimension z-score transform fitted on a training set. Dimensions with
/// zero spread are only centered.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    pub fn fit(features: &[FeatureVector]) -> Result<Self> {
        let first = features
            .first()
            .ok_or(Error::TooShort { needed: 1, got: 0 })?;
        let dim = first.dim();
        let n = features.len() as f64;
        let mut mean = vec![0.0; dim];
        for f in features {
            if f.dim() != dim {
                return Err(Error::DimensionMismatch {
                    left: dim,
                    right: f.dim(),
                });
            }
            mean.iter_mut().zip(&f.values).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for f in features {
            var.iter_mut()
                .zip(f.values.iter().zip(&mean))
                .for_each(|(s, (v, m))| *s += (v - m).powi(2));
        }
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 0.0 && sd.is_finite() {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, scale })
    }

    pub fn apply(&self, f: &FeatureVector) -> FeatureVector {
        let values = f
            .values
            .iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect();
        FeatureVector::new(f.time_index, values)
    }

    pub fn apply_all(&self, features: &[FeatureVector]) -> Vec<FeatureVector> {
        features.iter().map(|f| self.apply(f)).collect()
    }
}

/// Writes `index,lambda1..lambdaN` rows for inspection.
pub fn write_feature_csv<W: Write>(features: &[FeatureVector], writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    let dim = features.first().map_or(FEATURE_DIM, FeatureVector::dim);
    let mut header = vec!["index".to_string()];
    header.extend((1..=dim).map(|k| format!("lambda{k}")));
    out.write_record(&header)?;
    for f in features {
        let mut row = vec![f.time_index.to_string()];
        row.extend(f.values.iter().map(f64::to_string));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    /// History whose last five values, most recent first, are `lags`.
    fn history_from_lags(lags: &[f64]) -> Vec<f64> {
        lags.iter().rev().copied().collect()
    }

    #[test]
    fn constant_history() {
        let c = 3.5;
        let f = featurize(&[c; 8], 8, &FeatureConfig::default()).unwrap();
        assert_eq!(f.values, vec![c, c, c, c, 0.0, 2.0 * c, 0.0, 0.0, 0.0]);
        assert_eq!(f.time_index, 8);
    }

    #[test]
    fn geometric_lags() {
        let h = history_from_lags(&[16.0, 8.0, 4.0, 2.0, 1.0]);
        let f = featurize(&h, 5, &FeatureConfig::default()).unwrap();
        assert_eq!(&f.values[..8], &[16.0, 8.0, 4.0, 2.0, 7.0, 6.0, 2.0, 2.0]);
        // mean 6.2, squared deviations sum to 148.8
        assert_relative_eq!(f.values[8], (148.8f64 / 5.0).sqrt(), epsilon = 1e-12);
        assert_relative_eq!(f.values[8], 5.455, epsilon = 1e-3);
    }

    #[test]
    fn linear_lags() {
        let h = history_from_lags(&[5.0, 4.0, 3.0, 2.0, 1.0]);
        let f = featurize(&h, 5, &FeatureConfig::default()).unwrap();
        assert_eq!(f.values[4], 3.0);
        assert_eq!(f.values[5], 5.0);
        assert_eq!(f.values[6], 1.0);
        assert_eq!(f.values[7], 1.0);
    }

    #[test]
    fn sample_std_mode() {
        let h = history_from_lags(&[16.0, 8.0, 4.0, 2.0, 1.0]);
        let cfg = FeatureConfig {
            std_mode: StdMode::Sample,
            ..Default::default()
        };
        let f = featurize(&h, 5, &cfg).unwrap();
        assert_relative_eq!(f.values[8], (148.8f64 / 4.0).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn ratio_denominator_clamped_with_sign() {
        // y3 - y2 = -1e-9 -> clamped to -eps; numerator y2 - y1 = 1
        let h = history_from_lags(&[0.0, 1.0, 1.0 - 1e-9, 0.0, 0.0]);
        let cfg = FeatureConfig::default();
        let f = featurize(&h, 5, &cfg).unwrap();
        assert_relative_eq!(f.values[6], 1.0 / -1e-6, max_relative = 1e-12);
        assert!(f.values.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn insufficient_history() {
        let cfg = FeatureConfig::default();
        assert!(matches!(
            featurize(&[1.0; 10], 4, &cfg),
            Err(Error::InsufficientHistory { .. })
        ));
        assert!(featurize(&[1.0; 10], 11, &cfg).is_err());
        let short = FeatureConfig {
            lag_depth: 4,
            ..Default::default()
        };
        assert!(featurize(&[1.0; 10], 6, &short).is_err());
    }

    #[test]
    fn series_boundaries() {
        let cfg = FeatureConfig::default();
        assert_eq!(featurize_series(&[1.0; 6], &cfg).unwrap().len(), 1);
        assert!(matches!(
            featurize_series(&[1.0; 5], &cfg),
            Err(Error::TooShort { .. })
        ));
    }

    #[test]
    fn series_matches_pointwise() {
        let values: Vec<f64> = (0..100)
            .map(|i| ((i * 37) % 11) as f64 + 0.5 * i as f64)
            .collect();
        let cfg = FeatureConfig::default();
        let all = featurize_series(&values, &cfg).unwrap();
        assert_eq!(all.len(), 95);
        let lag1: Vec<f64> = all.iter().map(|f| f.values[0]).collect();
        assert_eq!(lag1, values[4..99].to_vec());
        for f in &all {
            assert_eq!(f, &featurize(&values, f.time_index, &cfg).unwrap());
        }
    }

    #[test]
    fn distance_cases() {
        let a = FeatureVector::new(0, vec![1.0, 2.0, 3.0]);
        let w = FeatureWeights::new(vec![1.0, 0.0, 0.0]).unwrap();
        assert_eq!(weighted_distance(&a, &a, &w).unwrap(), 0.0);
        let b = FeatureVector::new(1, vec![-1.5, 2.0, 3.0]);
        assert_relative_eq!(weighted_distance(&a, &b, &w).unwrap(), 2.5);

        let w9 = FeatureWeights::uniform(9);
        let z = FeatureVector::new(0, vec![0.0; 9]);
        let o = FeatureVector::new(1, vec![1.0; 9]);
        assert_relative_eq!(
            weighted_distance(&z, &o, &w9).unwrap(),
            1.0,
            epsilon = 1e-12
        );

        let c = FeatureVector::new(2, vec![1.0; 4]);
        assert!(matches!(
            weighted_distance(&a, &c, &w),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn weights_are_normalized() {
        let w = FeatureWeights::new(vec![3.0, 4.0]).unwrap();
        assert_eq!(w.as_slice(), &[0.6, 0.8]);
        assert!(FeatureWeights::new(vec![0.0, 0.0]).is_err());
        assert!(FeatureWeights::new(vec![1.0, -0.1]).is_err());
        let json = serde_json::to_string(&w).unwrap();
        let back: FeatureWeights = serde_json::from_str(&json).unwrap();
        assert_eq!(back, w);
        let unnormalized: FeatureWeights = serde_json::from_str("[3.0, 4.0]").unwrap();
        assert_eq!(unnormalized, w);
    }

    proptest! {
        #[test]
        fn stored_weights_reload_bit_for_bit(raw in prop::collection::vec(0.01f64..10.0, 1..12)) {
            let w = FeatureWeights::new(raw).unwrap();
            let back: FeatureWeights = serde_json::from_str(&serde_json::to_string(&w).unwrap()).unwrap();
            prop_assert_eq!(back.as_slice(), w.as_slice());
        }
    }

    #[test]
    fn standardizer_zero_mean_unit_scale() {
        let fs: Vec<_> = (0..20)
            .map(|i| FeatureVector::new(i, vec![i as f64, 2.0 * i as f64 + 1.0, 4.0]))
            .collect();
        let st = Standardizer::fit(&fs).unwrap();
        let z = st.apply_all(&fs);
        for d in 0..2 {
            let m: f64 = z.iter().map(|f| f.values[d]).sum::<f64>() / 20.0;
            let v: f64 = z.iter().map(|f| f.values[d].powi(2)).sum::<f64>() / 20.0;
            assert!(m.abs() < 1e-12);
            assert_relative_eq!(v, 1.0, epsilon = 1e-12);
        }
        assert!(z.iter().all(|f| f.values[2] == 0.0));
    }

    fn lags5() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-1e3f64..1e3, 5)
    }

    proptest! {
        #[test]
        fn translation_moves_only_level_features(lags in lags5(), c in -500f64..500.0) {
            let cfg = FeatureConfig::default();
            let h = history_from_lags(&lags);
            let shifted: Vec<f64> = h.iter().map(|v| v + c).collect();
            let f = featurize(&h, 5, &cfg).unwrap().values;
            let g = featurize(&shifted, 5, &cfg).unwrap().values;
            let tol = 1e-9 * (1.0 + c.abs() + lags.iter().map(|v| v.abs()).fold(0.0, f64::max));
            for k in 0..4 {
                prop_assert!((g[k] - f[k] - c).abs() <= tol);
            }
            prop_assert!((g[5] - f[5] - 2.0 * c).abs() <= tol);
            prop_assert!((g[4] - f[4]).abs() <= tol);
            prop_assert!((g[8] - f[8]).abs() <= tol);
            // ratios, away from the clamped region
            if (lags[2] - lags[1]).abs() > 1.0 && (lags[2] - lags[3]).abs() > 1.0 {
                for k in [6, 7] {
                    prop_assert!((g[k] - f[k]).abs() <= 1e-6 * (1.0 + f[k].abs()));
                }
            }
        }

        #[test]
        fn spread_is_nonnegative_and_zero_iff_flat(lags in lags5(), flat in any::<bool>()) {
            let lags = if flat { vec![lags[0]; 5] } else { lags };
            let f = featurize(&history_from_lags(&lags), 5, &FeatureConfig::default()).unwrap();
            prop_assert!(f.values[8] >= 0.0);
            let all_equal = lags.iter().all(|v| *v == lags[0]);
            prop_assert_eq!(f.values[8] == 0.0, all_equal);
        }

        #[test]
        fn distance_is_a_pseudometric(
            a in prop::collection::vec(-10f64..10.0, 9),
            b in prop::collection::vec(-10f64..10.0, 9),
            c in prop::collection::vec(-10f64..10.0, 9),
            w in prop::collection::vec(0f64..1.0, 9),
        ) {
            prop_assume!(w.iter().any(|x| *x > 1e-3));
            let w = FeatureWeights::new(w).unwrap();
            let (a, b, c) = (FeatureVector::new(0, a), FeatureVector::new(1, b), FeatureVector::new(2, c));
            let ab = weighted_distance(&a, &b, &w).unwrap();
            let ba = weighted_distance(&b, &a, &w).unwrap();
            let bc = weighted_distance(&b, &c, &w).unwrap();
            let ac = weighted_distance(&a, &c, &w).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert_eq!(weighted_distance(&a, &a, &w).unwrap(), 0.0);
            prop_assert!(ac <= ab + bc + 1e-12);
        }
    }
}
