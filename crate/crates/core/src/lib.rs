//! Feature-embedding Gaussian process forecaster for bursty traffic series.
//!
//! The pipeline splits a traffic series into a daily baseline and an
//! aperiodic residual, embeds every time point as a vector of lag, trend and
//! fluctuation statistics, weights those features so that extreme changes
//! separate from typical ones, and forecasts the next residual with a
//! Gaussian process whose kernel works on the weighted features. A naive
//! time-kernel GP and a seasonal ARIMA model serve as baselines.

pub mod config;
pub mod error;
pub mod eval;
pub mod features;
pub mod forecast;
pub mod gp;
pub mod optimize;
pub mod relief;
pub mod sarima;
pub mod series;

pub use config::{Method, RunConfig};
pub use error::{Error, Result};
pub use eval::{evaluate, run, EvalReport};
pub use forecast::{map_point, GaussianPosterior, MixturePosterior, Posterior};
pub use gp::{GpModel, Hyperparams, KernelKind};
pub use series::{SyntheticSpec, TrafficSeries};
