//! Extreme/typical tagging of time points and Relief-style feature weighting.
//!
//! A point is extreme when its first difference falls outside the central
//! `xi` interval of a Gaussian fitted to all first differences. Weights then
//! maximize the summed weighted L1 margin between each extreme point and its
//! nearest typical point, on the unit sphere intersected with the
//! nonnegative orthant. That problem is linear in the weights, so the
//! maximizer is the normalized per-dimension margin vector.

use log::warn;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::features::{FeatureVector, FeatureWeights};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    /// Category A: an extreme change.
    Extreme,
    /// Category B: a typical change.
    Typical,
}

impl Category {
    pub fn name(self) -> &'static str {
        match self {
            Category::Extreme => "extreme",
            Category::Typical => "typical",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryTag {
    pub index: usize,
    pub delta_y: f64,
    pub category: Category,
}

/// Two-sided standard-normal quantile for a central interval of mass `xi`.
pub fn central_quantile(xi: f64) -> Result<f64> {
    if !(xi > 0.0 && xi < 1.0) {
        return Err(Error::invalid(format!("xi must lie in (0, 1), got {xi}")));
    }
    let n = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(n.inverse_cdf(0.5 + xi / 2.0))
}

/// Gaussian fitted to first differences, with its extreme-change cutoff.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaThreshold {
    pub xi: f64,
    pub mean: f64,
    pub std: f64,
    pub z: f64,
}

impl DeltaThreshold {
    /// Fits mean and (maximum-likelihood) std of `y[i] - y[i-1]`.
    pub fn fit(residual: &[f64], xi: f64) -> Result<Self> {
        let z = central_quantile(xi)?;
        if residual.len() < 3 {
            return Err(Error::TooShort {
                needed: 3,
                got: residual.len(),
            });
        }
        let deltas: Vec<f64> = residual.windows(2).map(|w| w[1] - w[0]).collect();
        let n = deltas.len() as f64;
        let mean = deltas.iter().sum::<f64>() / n;
        let std = (deltas.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n).sqrt();
        Ok(Self { xi, mean, std, z })
    }

    pub fn classify(&self, delta: f64) -> Category {
        if self.std > 0.0 && (delta - self.mean).abs() > self.z * self.std {
            Category::Extreme
        } else {
            Category::Typical
        }
    }

    /// Tag for index `i >= 1` of `series`.
    pub fn tag(&self, series: &[f64], i: usize) -> CategoryTag {
        let delta_y = series[i] - series[i - 1];
        CategoryTag {
            index: i,
            delta_y,
            category: self.classify(delta_y),
        }
    }
}

/// Tags indices `1..len` of `residual`. A constant residual (zero spread of
/// differences) tags everything typical.
pub fn tag_categories(residual: &[f64], xi: f64) -> Result<Vec<CategoryTag>> {
    let threshold = DeltaThreshold::fit(residual, xi)?;
    if threshold.std == 0.0 {
        warn!("first differences have zero spread; tagging all points typical");
    }
    Ok((1..residual.len())
        .map(|i| threshold.tag(residual, i))
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointMargin {
    pub index: usize,
    pub nearest_typical: usize,
    pub margin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReliefResult {
    pub weights: FeatureWeights,
    pub margins: Vec<PointMargin>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub xi_used: Option<f64>,
}

impl ReliefResult {
    pub fn with_xi(mut self, xi: f64) -> Self {
        self.xi_used = Some(xi);
        self
    }
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Closed-form Relief weights from extreme/typical tags.
///
/// Features and tags are joined on time index; untagged features are ignored.
/// Neighbors are found under unweighted L1 distance with ties going to the
/// lowest time index. Callers are expected to standardize features first.
pub fn optimize_weights(features: &[FeatureVector], tags: &[CategoryTag]) -> Result<ReliefResult> {
    let dim = features
        .first()
        .map(FeatureVector::dim)
        .ok_or(Error::EmptyCategory("extreme"))?;
    let mut by_index: Vec<(usize, Category)> = tags.iter().map(|t| (t.index, t.category)).collect();
    by_index.sort_by_key(|t| t.0);

    let mut extreme = Vec::new();
    let mut typical = Vec::new();
    for f in features {
        if f.dim() != dim {
            return Err(Error::DimensionMismatch {
                left: dim,
                right: f.dim(),
            });
        }
        if let Ok(pos) = by_index.binary_search_by_key(&f.time_index, |t| t.0) {
            match by_index[pos].1 {
                Category::Extreme => extreme.push(f),
                Category::Typical => typical.push(f),
            }
        }
    }
    if extreme.is_empty() {
        return Err(Error::EmptyCategory(Category::Extreme.name()));
    }
    if typical.is_empty() {
        return Err(Error::EmptyCategory(Category::Typical.name()));
    }
    typical.sort_by_key(|f| f.time_index);

    let mut margin_sum = vec![0.0; dim];
    let mut pairs = Vec::with_capacity(extreme.len());
    for a in &extreme {
        let mut best = typical[0];
        let mut best_d = l1(&a.values, &best.values);
        for b in &typical[1..] {
            let d = l1(&a.values, &b.values);
            if d < best_d {
                best = b;
                best_d = d;
            }
        }
        for (z, (x, y)) in margin_sum.iter_mut().zip(a.values.iter().zip(&best.values)) {
            *z += (x - y).abs();
        }
        pairs.push((a, best));
    }

    let weights = match FeatureWeights::new(margin_sum) {
        Ok(w) => w,
        Err(_) => {
            warn!("all Relief margins are zero; falling back to uniform weights");
            FeatureWeights::uniform(dim)
        }
    };
    let w = weights.as_slice();
    let margins = pairs
        .into_iter()
        .map(|(a, b)| PointMargin {
            index: a.time_index,
            nearest_typical: b.time_index,
            margin: a
                .values
                .iter()
                .zip(&b.values)
                .zip(w)
                .map(|((x, y), w)| w * (x - y).abs())
                .sum(),
        })
        .collect();
    Ok(ReliefResult {
        weights,
        margins,
        xi_used: None,
    })
}
