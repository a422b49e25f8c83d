//! Head-orientation forecasting.
//!
//! Every predictor works on one Euler component at a time, given as an
//! unwrapped series in degrees sampled at a nominal period. Errors are
//! scored with [`nrmse`], which divides the RMSE by the component's full
//! nominal range.

mod arima;
mod baseline;
mod bilstm;

pub use arima::{fit_arima, predict_arima, ArimaModel, ArimaOrder, FitOptions};
pub use baseline::{nrmse, predict_moving_average, predict_persistence, select_horizon};
pub use bilstm::{predict_bilstm, train_bilstm, BiLstmConfig, BiLstmModel, TrainReport};

use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::geometry::Component;

/// Nominal HMD sample period used for horizon arithmetic, seconds.
pub const NOMINAL_SAMPLE_PERIOD: f64 = 0.015;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PredictionError {
    #[error("history is empty")]
    EmptyHistory,
    #[error("no samples inside the averaging window")]
    EmptyWindow,
    #[error("history has {got} samples, model needs {needed}")]
    InsufficientHistory { needed: usize, got: usize },
    #[error("predicted and actual sequences differ in length ({0} vs {1}) or are empty")]
    LengthMismatch(usize, usize),
    #[error("camera speed must be positive, got {0}")]
    NonPositiveCameraSpeed(f64),
    #[error("series of {got} samples too short after differencing; need {needed}")]
    SeriesTooShort { needed: usize, got: usize },
    #[error("ARIMA fit did not converge after {iterations} iterations (gradient norm {grad_norm:e}, objective {objective:e})")]
    NotConverged {
        iterations: usize,
        grad_norm: f64,
        objective: f64,
    },
    #[error("differenced series failed the stationarity check: {0}")]
    NonStationary(String),
    #[error("model has not been fitted")]
    Unfitted,
    #[error("training loss diverged at epoch {epoch}; reduce the learning rate (currently {learning_rate})")]
    Diverged { epoch: usize, learning_rate: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("no training windows could be built from the supplied traces")]
    NoTrainingData,
}

/// One forecast query on a single component.
#[derive(Debug, Clone, Copy)]
pub struct ForecastRequest<'a> {
    /// Unwrapped angle samples, oldest first, degrees.
    pub history: &'a [f64],
    pub horizon_samples: usize,
    /// Seconds between samples.
    pub sample_period: f64,
}

impl<'a> ForecastRequest<'a> {
    pub fn new(history: &'a [f64], horizon_samples: usize, sample_period: f64) -> Self {
        Self {
            history,
            horizon_samples,
            sample_period,
        }
    }
}

/// Scores of one method on one component at one horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionMetrics {
    pub method: String,
    pub component: Component,
    pub horizon_samples: usize,
    pub speed_bin: Option<f64>,
    pub nrmse: f64,
}

/// A trained, immutable single-component predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Predictor {
    Persistence,
    MovingAverage { window_s: f64 },
    Arima(ArimaModel),
    BiLstm(BiLstmModel),
}

impl Predictor {
    pub fn name(&self) -> &'static str {
        match self {
            Predictor::Persistence => "persistence",
            Predictor::MovingAverage { .. } => "moving_average",
            Predictor::Arima(_) => "arima",
            Predictor::BiLstm(_) => "bilstm",
        }
    }

    pub fn forecast(&self, req: &ForecastRequest<'_>) -> Result<f64, PredictionError> {
        match self {
            Predictor::Persistence => predict_persistence(req),
            Predictor::MovingAverage { window_s } => predict_moving_average(req, *window_s),
            Predictor::Arima(m) => predict_arima(m, req),
            Predictor::BiLstm(m) => predict_bilstm(m, req),
        }
    }

    /// Shortest history the predictor accepts.
    pub fn min_history(&self) -> usize {
        match self {
            Predictor::Persistence | Predictor::MovingAverage { .. } => 1,
            Predictor::Arima(m) => m.min_history(),
            Predictor::BiLstm(m) => m.window(),
        }
    }
}

/// Rolling-origin evaluation: for every origin `t` in `[start, len - h)`,
/// forecast sample `t + h` from `series[..=t]` (at most `max_history`
/// trailing samples). Returns `(predicted, actual)`.
pub fn rolling_forecast(
    predictor: &Predictor,
    series: &[f64],
    horizon: usize,
    sample_period: f64,
    start: usize,
    max_history: usize,
) -> Result<(Vec<f64>, Vec<f64>), PredictionError> {
    let first = start.max(predictor.min_history().saturating_sub(1));
    let mut pred = Vec::new();
    let mut actual = Vec::new();
    let mut t = first;
    while t + horizon < series.len() {
        let lo = (t + 1).saturating_sub(max_history);
        let req = ForecastRequest::new(&series[lo..=t], horizon, sample_period);
        pred.push(predictor.forecast(&req)?);
        actual.push(series[t + horizon]);
        t += 1;
    }
    Ok((pred, actual))
}
