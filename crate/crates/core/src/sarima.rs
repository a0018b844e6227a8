//! Seasonal ARIMA baseline fitted by conditional sum of squares.
//!
//! On the differenced series `w`, the model is
//! `φ(B)Φ(B^s)(w_t − μ) = θ(B)Θ(B^s)e_t` with `φ(B) = 1 − Σφ_i B^i` and
//! `θ(B) = 1 + Σθ_i B^i`. The intercept `μ` is estimated only when no
//! differencing is applied.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimize::{minimize, OptimizerSettings};

/// Inverse roots above this modulus are penalized (roots inside |z| <= 1.01).
const ROOT_MARGIN: f64 = 1.0 / 1.01;
const PENALTY_WEIGHT: f64 = 1e4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SarimaOrder {
    pub p: usize,
    pub d: usize,
    pub q: usize,
    #[serde(rename = "seasonal_p")]
    pub sp: usize,
    #[serde(rename = "seasonal_d")]
    pub sd: usize,
    #[serde(rename = "seasonal_q")]
    pub sq: usize,
    pub s: usize,
}

impl Default for SarimaOrder {
    fn default() -> Self {
        Self {
            p: 1,
            d: 0,
            q: 1,
            sp: 0,
            sd: 1,
            sq: 1,
            s: 96,
        }
    }
}

impl SarimaOrder {
    pub fn new(
        p: usize,
        d: usize,
        q: usize,
        sp: usize,
        sd: usize,
        sq: usize,
        s: usize,
    ) -> Result<Self> {
        let o = Self {
            p,
            d,
            q,
            sp,
            sd,
            sq,
            s,
        };
        o.validate()?;
        Ok(o)
    }

    pub fn validate(&self) -> Result<()> {
        if self.s == 0 {
            return Err(Error::invalid("season length must be at least 1"));
        }
        Ok(())
    }

    /// Number of observations consumed by differencing.
    pub fn diff_span(&self) -> usize {
        self.d + self.sd * self.s
    }

    pub fn ar_lag(&self) -> usize {
        self.p + self.s * self.sp
    }

    pub fn ma_lag(&self) -> usize {
        self.q + self.s * self.sq
    }

    pub fn coefficient_count(&self) -> usize {
        self.p + self.q + self.sp + self.sq
    }

    pub fn has_intercept(&self) -> bool {
        self.d + self.sd == 0
    }

    /// Minimum history for a one-step forecast.
    pub fn min_history(&self) -> usize {
        let spec = self
            .p
            .max(self.q)
            .max(self.s * self.sp)
            .max(self.s * self.sq)
            .max(self.diff_span());
        spec.max(self.diff_span() + self.ar_lag()).max(1)
    }
}

impl std::fmt::Display for SarimaOrder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "({},{},{})({},{},{})_{}",
            self.p, self.d, self.q, self.sp, self.sd, self.sq, self.s
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SarimaModel {
    pub order: SarimaOrder,
    pub phi: Vec<f64>,
    pub theta: Vec<f64>,
    pub seasonal_phi: Vec<f64>,
    pub seasonal_theta: Vec<f64>,
    pub intercept: f64,
    pub resid_var: f64,
}

/// Fitted model plus optimizer trace.
#[derive(Clone, Debug)]
pub struct SarimaFit {
    pub model: SarimaModel,
    /// Penalized mean squared residual after each accepted step.
    pub objective_history: Vec<f64>,
    pub iterations: usize,
}

/// Coefficients of `(1 − B)^d (1 − B^s)^D`, lowest lag first.
fn diff_polynomial(d: usize, sd: usize, s: usize) -> Vec<f64> {
    let mut poly = vec![1.0];
    for _ in 0..d {
        poly = poly_mul(&poly, &[1.0, -1.0]);
    }
    let mut seasonal = vec![0.0; s + 1];
    seasonal[0] = 1.0;
    seasonal[s] = -1.0;
    for _ in 0..sd {
        poly = poly_mul(&poly, &seasonal);
    }
    poly
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        if *x == 0.0 {
            continue;
        }
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Applies `(1 − B)^d (1 − B^s)^D`; the output is `d + D·s` shorter.
pub fn difference(series: &[f64], d: usize, sd: usize, s: usize) -> Result<Vec<f64>> {
    if s == 0 {
        return Err(Error::invalid("season length must be at least 1"));
    }
    let m = d + sd * s;
    if series.len() <= m {
        return Err(Error::TooShort {
            needed: m + 1,
            got: series.len(),
        });
    }
    let delta = diff_polynomial(d, sd, s);
    let lags: Vec<(usize, f64)> = delta
        .iter()
        .copied()
        .enumerate()
        .filter(|(_, c)| *c != 0.0)
        .collect();
    Ok((m..series.len())
        .map(|t| lags.iter().map(|&(k, c)| c * series[t - k]).sum())
        .collect())
}

/// Inverts [`difference`] given the first `d + D·s` original values.
pub fn undifference(
    diffs: &[f64],
    head: &[f64],
    d: usize,
    sd: usize,
    s: usize,
) -> Result<Vec<f64>> {
    let m = d + sd * s;
    if head.len() != m {
        return Err(Error::DimensionMismatch {
            left: m,
            right: head.len(),
        });
    }
    let delta = diff_polynomial(d, sd, s);
    let mut y = head.to_vec();
    y.reserve(diffs.len());
    for (i, w) in diffs.iter().enumerate() {
        let t = m + i;
        let carried: f64 = (1..=m).map(|k| delta[k] * y[t - k]).sum();
        y.push(w - carried);
    }
    Ok(y)
}

/// Lag-polynomial coefficients of the model, in the form
/// `w_t − μ = Σ ar_k (w_{t−k} − μ) + e_t + Σ ma_k e_{t−k}`.
#[derive(Clone, Debug)]
struct Expanded {
    ar: Vec<(usize, f64)>,
    ma: Vec<(usize, f64)>,
}

/// Parameter layout: `[phi.., theta.., seasonal_phi.., seasonal_theta.., intercept?]`.
#[derive(Clone, Copy, Debug)]
struct Layout {
    order: SarimaOrder,
}

impl Layout {
    fn len(&self) -> usize {
        self.order.coefficient_count() + usize::from(self.order.has_intercept())
    }

    fn split<'a>(&self, x: &'a [f64]) -> (&'a [f64], &'a [f64], &'a [f64], &'a [f64], f64) {
        let o = &self.order;
        let (phi, rest) = x.split_at(o.p);
        let (theta, rest) = rest.split_at(o.q);
        let (sphi, rest) = rest.split_at(o.sp);
        let (stheta, rest) = rest.split_at(o.sq);
        (
            phi,
            theta,
            sphi,
            stheta,
            rest.first().copied().unwrap_or(0.0),
        )
    }
}

/// `1 + sign·Σ c_i B^{i·stride}` as a dense polynomial.
fn lag_poly(coefs: &[f64], stride: usize, sign: f64) -> Vec<f64> {
    let mut poly = vec![0.0; coefs.len() * stride + 1];
    poly[0] = 1.0;
    for (i, c) in coefs.iter().enumerate() {
        poly[(i + 1) * stride] = sign * c;
    }
    poly
}

fn sparse(poly: &[f64], scale: f64) -> Vec<(usize, f64)> {
    poly.iter()
        .enumerate()
        .skip(1)
        .filter(|(_, c)| **c != 0.0)
        .map(|(k, c)| (k, scale * c))
        .collect()
}

fn expand(layout: &Layout, x: &[f64]) -> Expanded {
    let s = layout.order.s;
    let (phi, theta, sphi, stheta, _) = layout.split(x);
    let ar_poly = poly_mul(&lag_poly(phi, 1, -1.0), &lag_poly(sphi, s, -1.0));
    let ma_poly = poly_mul(&lag_poly(theta, 1, 1.0), &lag_poly(stheta, s, 1.0));
    Expanded {
        ar: sparse(&ar_poly, -1.0),
        ma: sparse(&ma_poly, 1.0),
    }
}

/// Sparse polynomial as `(lag, coefficient)` pairs.
type SparseLags = Vec<(usize, f64)>;

/// Derivatives of the expanded `ar` and `ma` coefficients with respect to
/// each coefficient parameter, as sparse lag lists.
fn expand_derivatives(layout: &Layout, x: &[f64]) -> Vec<(SparseLags, SparseLags)> {
    let o = layout.order;
    let s = o.s;
    let (phi, theta, sphi, stheta, _) = layout.split(x);
    let shift = |poly: Vec<f64>, by: usize| -> Vec<f64> {
        let mut out = vec![0.0; by];
        out.extend(poly);
        out
    };
    let mut out = Vec::with_capacity(layout.len());
    // d ar / d φ_i: B^i · Φ(B^s) with the ar sign flip absorbed
    let s_ar = lag_poly(sphi, s, -1.0);
    for i in 1..=o.p {
        out.push((sparse(&shift(s_ar.clone(), i), 1.0), Vec::new()));
    }
    let ns_ma = lag_poly(theta, 1, 1.0);
    let s_ma = lag_poly(stheta, s, 1.0);
    for i in 1..=o.q {
        out.push((Vec::new(), sparse(&shift(s_ma.clone(), i), 1.0)));
    }
    let ns_ar = lag_poly(phi, 1, -1.0);
    for j in 1..=o.sp {
        out.push((sparse(&shift(ns_ar.clone(), j * s), 1.0), Vec::new()));
    }
    for j in 1..=o.sq {
        out.push((Vec::new(), sparse(&shift(ns_ma.clone(), j * s), 1.0)));
    }
    out
}

/// Residuals with pre-sample residuals set to zero; the first `ar_lag`
/// points only serve as conditioning values.
fn residuals(w: &[f64], ex: &Expanded, mu: f64, start: usize) -> Vec<f64> {
    let mut e = vec![0.0; w.len()];
    for t in start..w.len() {
        let mut v = w[t] - mu;
        for &(k, c) in &ex.ar {
            v -= c * (w[t - k] - mu);
        }
        for &(k, c) in &ex.ma {
            if k <= t {
                v -= c * e[t - k];
            }
        }
        e[t] = v;
    }
    e
}

struct CssProblem<'a> {
    w: &'a [f64],
    layout: Layout,
    start: usize,
}

impl CssProblem<'_> {
    fn n_eff(&self) -> f64 {
        (self.w.len() - self.start) as f64
    }

    /// Mean squared residual and its gradient.
    fn mse_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let ex = expand(&self.layout, x);
        let derivs = expand_derivatives(&self.layout, x);
        let (_, _, _, _, mu) = self.layout.split(x);
        let np = self.layout.len();
        let n = self.w.len();
        let e = residuals(self.w, &ex, mu, self.start);
        // de[t * np + j]
        let mut de = vec![0.0; n * np];
        let ar_sum: f64 = ex.ar.iter().map(|(_, c)| c).sum();
        let mut css = 0.0;
        let mut grad = vec![0.0; np];
        for t in self.start..n {
            for j in 0..np {
                let mut g = 0.0;
                if j < derivs.len() {
                    let (dar, dma) = &derivs[j];
                    for &(k, c) in dar {
                        g -= c * (self.w[t - k] - mu);
                    }
                    for &(k, c) in dma {
                        if k <= t {
                            g -= c * e[t - k];
                        }
                    }
                } else {
                    g = -1.0 + ar_sum;
                }
                for &(k, c) in &ex.ma {
                    if k <= t {
                        g -= c * de[(t - k) * np + j];
                    }
                }
                de[t * np + j] = g;
                grad[j] += 2.0 * e[t] * g;
            }
            css += e[t] * e[t];
        }
        let n_eff = self.n_eff();
        grad.iter_mut().for_each(|g| *g /= n_eff);
        (css / n_eff, grad)
    }
}

/// Moduli of the inverse roots of `1 − Σ c_i z^i`.
fn inverse_root_moduli(coefs: &[f64]) -> Vec<f64> {
    let k = coefs.len();
    if k == 0 {
        return Vec::new();
    }
    if k == 1 {
        return vec![coefs[0].abs()];
    }
    let mut m = DMatrix::<f64>::zeros(k, k);
    for (j, c) in coefs.iter().enumerate() {
        m[(0, j)] = *c;
    }
    for i in 1..k {
        m[(i, i - 1)] = 1.0;
    }
    m.complex_eigenvalues().iter().map(|z| z.norm()).collect()
}

fn root_penalty(layout: &Layout, x: &[f64]) -> f64 {
    let (phi, theta, sphi, stheta, _) = layout.split(x);
    let neg = |v: &[f64]| -> Vec<f64> { v.iter().map(|c| -c).collect() };
    [phi.to_vec(), neg(theta), sphi.to_vec(), neg(stheta)]
        .iter()
        .flat_map(|c| inverse_root_moduli(c))
        .map(|r| (r - ROOT_MARGIN).max(0.0).powi(2))
        .sum()
}

/// Fits coefficients by minimizing the conditional sum of squares from a
/// zero start.
pub fn fit_sarima(series: &[f64], order: SarimaOrder) -> Result<SarimaModel> {
    fit_sarima_report(
        series,
        order,
        &OptimizerSettings {
            max_iter: 500,
            ..Default::default()
        },
    )
    .map(|f| f.model)
}

pub fn fit_sarima_report(
    series: &[f64],
    order: SarimaOrder,
    settings: &OptimizerSettings,
) -> Result<SarimaFit> {
    order.validate()?;
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let w = difference(series, order.d, order.sd, order.s)?;
    let needed = 10 * (order.coefficient_count() + 1);
    let start = order.ar_lag();
    if w.len() < needed.max(start + 1) {
        return Err(Error::TooShort {
            needed: needed.max(start + 1) + order.diff_span(),
            got: series.len(),
        });
    }
    let layout = Layout { order };
    let problem = CssProblem {
        w: &w,
        layout,
        start,
    };
    let x0 = vec![0.0; layout.len()];
    let scale = problem.mse_and_gradient(&x0).0.max(f64::MIN_POSITIVE);

    let objective = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
        let (mse, mut g) = problem.mse_and_gradient(x);
        let pen = root_penalty(&layout, x);
        let value = mse + PENALTY_WEIGHT * scale * pen;
        // the penalty is piecewise smooth; central differences suffice
        for j in 0..order.coefficient_count() {
            let h = 1e-7 * (1.0 + x[j].abs());
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[j] += h;
            xm[j] -= h;
            let dp = root_penalty(&layout, &xp) - root_penalty(&layout, &xm);
            g[j] += PENALTY_WEIGHT * scale * dp / (2.0 * h);
        }
        Ok((value, g))
    };
    let min = minimize(objective, &x0, settings)?;
    if !min.converged {
        return Err(Error::NoConvergence(min.iterations));
    }

    let x = min.x;
    let (phi, theta, sphi, stheta, mu) = layout.split(&x);
    let (mse, _) = problem.mse_and_gradient(&x);
    if !mse.is_finite() {
        return Err(Error::NonFinite);
    }
    Ok(SarimaFit {
        model: SarimaModel {
            order,
            phi: phi.to_vec(),
            theta: theta.to_vec(),
            seasonal_phi: sphi.to_vec(),
            seasonal_theta: stheta.to_vec(),
            intercept: mu,
            resid_var: mse,
        },
        objective_history: min.history,
        iterations: min.iterations,
    })
}

impl SarimaModel {
    fn params(&self) -> Vec<f64> {
        let mut x = Vec::new();
        x.extend(&self.phi);
        x.extend(&self.theta);
        x.extend(&self.seasonal_phi);
        x.extend(&self.seasonal_theta);
        if self.order.has_intercept() {
            x.push(self.intercept);
        }
        x
    }

    /// One-step-ahead conditional mean given all observations so far.
    pub fn forecast_one(&self, history: &[f64]) -> Result<f64> {
        let o = self.order;
        let needed = o.min_history();
        if history.len() < needed {
            return Err(Error::InsufficientHistory {
                needed,
                got: history.len(),
            });
        }
        let m = o.diff_span();
        let ex = expand(&Layout { order: o }, &self.params());
        let mu = self.intercept;
        let w = if m == 0 {
            history.to_vec()
        } else if history.len() > m {
            difference(history, o.d, o.sd, o.s)?
        } else {
            Vec::new()
        };
        let e = residuals(&w, &ex, mu, o.ar_lag().min(w.len()));
        let n = w.len();
        let mut w_next = mu;
        for &(k, c) in &ex.ar {
            w_next += c * (w[n - k] - mu);
        }
        for &(k, c) in &ex.ma {
            if k <= n {
                w_next += c * e[n - k];
            }
        }
        let delta = diff_polynomial(o.d, o.sd, o.s);
        let t = history.len();
        let carried: f64 = (1..=m).map(|k| delta[k] * history[t - k]).sum();
        Ok(w_next - carried)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn noise(seed: u64, n: usize, sd: f64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Normal::new(0.0, sd).unwrap();
        (0..n).map(|_| d.sample(&mut rng)).collect()
    }

    #[test]
    fn first_difference() {
        assert_eq!(
            difference(&[1.0, 3.0, 6.0, 10.0], 1, 0, 1).unwrap(),
            vec![2.0, 3.0, 4.0]
        );
    }

    #[test]
    fn seasonal_difference() {
        assert_eq!(
            difference(&[1.0, 2.0, 3.0, 4.0, 5.0], 0, 1, 2).unwrap(),
            vec![2.0, 2.0, 2.0]
        );
    }

    #[test]
    fn zero_order_difference_is_identity() {
        let y = [3.0, -1.0, 2.5];
        assert_eq!(difference(&y, 0, 0, 4).unwrap(), y.to_vec());
        assert!(difference(&y, 1, 1, 2).is_err());
    }

    #[test]
    fn difference_round_trip() {
        let y = noise(3, 50, 2.0);
        let w = difference(&y, 1, 1, 7).unwrap();
        let back = undifference(&w, &y[..8], 1, 1, 7).unwrap();
        for (a, b) in back.iter().zip(&y) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn ar1_recovery() {
        let e = noise(42, 2000, 1.0);
        let mut y = vec![0.0; 2000];
        for t in 1..2000 {
            y[t] = 0.8 * y[t - 1] + e[t];
        }
        let m = fit_sarima(&y, SarimaOrder::new(1, 0, 0, 0, 0, 0, 1).unwrap()).unwrap();
        assert!((0.75..=0.85).contains(&m.phi[0]), "{}", m.phi[0]);
    }

    #[test]
    fn white_noise_degenerate_order() {
        let y: Vec<f64> = noise(5, 500, 2.0).iter().map(|v| v + 10.0).collect();
        let m = fit_sarima(&y, SarimaOrder::new(0, 0, 0, 0, 0, 0, 1).unwrap()).unwrap();
        let mean = y.iter().sum::<f64>() / 500.0;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 500.0;
        assert!((m.intercept - mean).abs() < 1e-6);
        assert!((m.resid_var - var).abs() < 1e-6 * var);
    }

    #[test]
    fn seasonal_random_walk_is_pure_differencing() {
        let e = noise(9, 400, 1.0);
        let mut y = e[..4].to_vec();
        for t in 4..400 {
            y.push(y[t - 4] + e[t]);
        }
        let order = SarimaOrder::new(0, 0, 0, 0, 1, 0, 4).unwrap();
        let m = fit_sarima(&y, order).unwrap();
        assert_eq!(m.intercept, 0.0);
        let w = difference(&y, 0, 1, 4).unwrap();
        let css = w.iter().map(|v| v * v).sum::<f64>() / w.len() as f64;
        assert!((m.resid_var - css).abs() < 1e-12 * css);
        assert_eq!(m.forecast_one(&y).unwrap(), y[396]);
    }

    #[test]
    fn random_walk_forecast_is_last_value() {
        let m = SarimaModel {
            order: SarimaOrder::new(0, 1, 0, 0, 0, 0, 1).unwrap(),
            phi: vec![],
            theta: vec![],
            seasonal_phi: vec![],
            seasonal_theta: vec![],
            intercept: 0.0,
            resid_var: 1.0,
        };
        assert_eq!(m.forecast_one(&[1.0, 4.0, 2.5]).unwrap(), 2.5);
    }

    #[test]
    fn ar1_forecast_is_scaled_last_value() {
        let m = SarimaModel {
            order: SarimaOrder::new(1, 0, 0, 0, 0, 0, 1).unwrap(),
            phi: vec![0.6],
            theta: vec![],
            seasonal_phi: vec![],
            seasonal_theta: vec![],
            intercept: 0.0,
            resid_var: 1.0,
        };
        assert!((m.forecast_one(&[3.0, -2.0, 5.0]).unwrap() - 3.0).abs() < 1e-15);
        assert!(m.forecast_one(&[]).is_err());
    }

    #[test]
    fn periodic_series_is_exact_after_one_season() {
        let s = 6;
        let y: Vec<f64> = (0..60).map(|t| ((t % s) as f64).powi(2)).collect();
        let m = SarimaModel {
            order: SarimaOrder::new(0, 0, 0, 0, 1, 0, s).unwrap(),
            phi: vec![],
            theta: vec![],
            seasonal_phi: vec![],
            seasonal_theta: vec![],
            intercept: 0.0,
            resid_var: 1.0,
        };
        for t in s..60 {
            assert_eq!(m.forecast_one(&y[..t]).unwrap(), y[t]);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let y = noise(1, 300, 1.0);
        let order = SarimaOrder::new(1, 0, 1, 1, 0, 1, 5).unwrap();
        let layout = Layout { order };
        let p = CssProblem {
            w: &y,
            layout,
            start: order.ar_lag(),
        };
        let x = vec![0.3, -0.2, 0.25, 0.1, 0.05];
        let (_, g) = p.mse_and_gradient(&x);
        for j in 0..x.len() {
            let h = 1e-6;
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let fd = (p.mse_and_gradient(&xp).0 - p.mse_and_gradient(&xm).0) / (2.0 * h);
            assert!(
                (fd - g[j]).abs() < 1e-6 * (1.0 + fd.abs()),
                "param {j}: {fd} vs {}",
                g[j]
            );
        }
    }

    #[test]
    fn objective_history_never_increases() {
        let e = noise(2, 600, 1.0);
        let mut y = vec![0.0; 600];
        for t in 1..600 {
            y[t] = 0.5 * y[t - 1] + e[t] + 0.3 * e[t - 1];
        }
        let fit = fit_sarima_report(
            &y,
            SarimaOrder::new(1, 0, 1, 0, 0, 0, 1).unwrap(),
            &OptimizerSettings::default(),
        )
        .unwrap();
        assert!(fit.objective_history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn explosive_roots_are_penalized() {
        let layout = Layout {
            order: SarimaOrder::new(2, 0, 0, 0, 0, 0, 1).unwrap(),
        };
        assert_eq!(root_penalty(&layout, &[0.5, 0.2]), 0.0);
        assert!(root_penalty(&layout, &[1.5, 0.0]) > 0.0);
        let moduli = inverse_root_moduli(&[0.0, 0.25]);
        assert!(moduli.iter().all(|m| (m - 0.5).abs() < 1e-12));
    }

    #[test]
    fn short_series_is_rejected() {
        assert!(fit_sarima(&[1.0; 29], SarimaOrder::new(1, 0, 1, 0, 0, 0, 1).unwrap()).is_err());
    }
}
