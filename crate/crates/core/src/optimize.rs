//! Small unconstrained minimizer: steepest descent or BFGS, both with an
//! Armijo backtracking line search.
//!
//! Objective evaluations may fail (e.g. a covariance that cannot be
//! factorized); the line search treats a failed trial point as an infinite
//! objective and shrinks the step.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Descent {
    GradientDescent,
    Bfgs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSettings {
    pub method: Descent,
    pub max_iter: usize,
    /// Stop when `max |g_i| <= grad_tol * max(1, |f|)`.
    pub grad_tol: f64,
    /// Stop when an accepted step changes `f` by less than `f_tol * max(1, |f|)`.
    pub f_tol: f64,
    pub initial_step: f64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            method: Descent::Bfgs,
            max_iter: 200,
            grad_tol: 1e-7,
            f_tol: 1e-12,
            initial_step: 1.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after each accepted step, starting with the initial value.
    pub history: Vec<f64>,
}

const ARMIJO_C: f64 = 1e-4;
const MIN_STEP: f64 = 1e-14;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Minimizes `f`, which returns the objective and its gradient.
///
/// Returns the best point found; `converged` is false if `max_iter` ran out
/// first. Fails only if the starting point cannot be evaluated.
pub fn minimize<F>(mut f: F, x0: &[f64], settings: &OptimizerSettings) -> Result<Minimum>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let (mut fx, mut g) = f(&x)?;
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let mut history = vec![fx];
    // inverse Hessian approximation, row-major
    let mut h = identity(n);
    let mut step_scale = settings.initial_step;

    for iter in 0..settings.max_iter {
        if inf_norm(&g) <= settings.grad_tol * fx.abs().max(1.0) {
            return Ok(Minimum {
                x,
                value: fx,
                gradient: g,
                iterations: iter,
                converged: true,
                history,
            });
        }
        let mut dir: Vec<f64> = match settings.method {
            Descent::GradientDescent => g.iter().map(|v| -v).collect(),
            Descent::Bfgs => (0..n).map(|i| -dot(&h[i * n..(i + 1) * n], &g)).collect(),
        };
        let mut slope = dot(&dir, &g);
        if slope >= 0.0 {
            // lost descent direction; reset curvature
            h = identity(n);
            dir = g.iter().map(|v| -v).collect();
            slope = dot(&dir, &g);
        }

        let mut t = match settings.method {
            Descent::GradientDescent => step_scale,
            Descent::Bfgs => 1.0,
        };
        // cap the first trial step in parameter space
        let max_move = inf_norm(&dir) * t;
        if max_move > 5.0 {
            t *= 5.0 / max_move;
        }

        let mut accepted = None;
        while t > MIN_STEP {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + t * di).collect();
            if let Ok((ft, gt)) = f(&trial) {
                if ft.is_finite()
                    && gt.iter().all(|v| v.is_finite())
                    && ft <= fx + ARMIJO_C * t * slope
                {
                    accepted = Some((trial, ft, gt));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            // no decrease possible at machine precision
            return Ok(Minimum {
                x,
                value: fx,
                gradient: g,
                iterations: iter,
                converged: true,
                history,
            });
        };

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        if settings.method == Descent::Bfgs {
            bfgs_update(&mut h, &s, &y, iter == 0);
        } else {
            step_scale = (t * 2.0).min(1e3);
        }

        let change = fx - f_new;
        x = x_new;
        fx = f_new;
        g = g_new;
        history.push(fx);
        if change.abs() <= settings.f_tol * fx.abs().max(1.0) {
            return Ok(Minimum {
                x,
                value: fx,
                gradient: g,
                iterations: iter + 1,
                converged: true,
                history,
            });
        }
    }
    Ok(Minimum {
        x,
        value: fx,
        gradient: g,
        iterations: settings.max_iter,
        converged: false,
        history,
    })
}

fn identity(n: usize) -> Vec<f64> {
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        h[i * n + i] = 1.0;
    }
    h
}

fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], first: bool) {
    let n = s.len();
    let sy = dot(s, y);
    if sy <= 1e-12 * dot(s, s).sqrt() * dot(y, y).sqrt() {
        return;
    }
    if first {
        // scale initial inverse Hessian
        let scale = sy / dot(y, y);
        h.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            h[i * n + i] = scale;
        }
    }
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| dot(&h[i * n..(i + 1) * n], y)).collect();
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] +=
                (1.0 + rho * yhy) * rho * s[i] * s[j] - rho * (hy[i] * s[j] + s[i] * hy[j]);
        }
    }
}
