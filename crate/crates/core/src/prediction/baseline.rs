use libm::{ceil, floor, sqrt};

use super::{ForecastRequest, PredictionError};
use crate::geometry::Component;

/// Last observed value, whatever the horizon.
pub fn predict_persistence(req: &ForecastRequest<'_>) -> Result<f64, PredictionError> {
    req.history.last().copied().ok_or(PredictionError::EmptyHistory)
}

/// Mean of the samples inside the trailing `window_s` seconds.
pub fn predict_moving_average(req: &ForecastRequest<'_>, window_s: f64) -> Result<f64, PredictionError> {
    if req.history.is_empty() {
        return Err(PredictionError::EmptyHistory);
    }
    if !(req.sample_period > 0.0) || !(window_s > 0.0) {
        return Err(PredictionError::EmptyWindow);
    }
    // small slack so that e.g. 1.0 / 0.01 counts as 100 samples
    let n = floor(window_s / req.sample_period + 1e-9) as usize;
    if n == 0 {
        return Err(PredictionError::EmptyWindow);
    }
    let tail = &req.history[req.history.len().saturating_sub(n)..];
    Ok(tail.iter().sum::<f64>() / tail.len() as f64)
}

/// RMSE divided by the component's full nominal range (yaw 360, pitch 180,
/// roll 360 degrees).
pub fn nrmse(predicted: &[f64], actual: &[f64], component: Component) -> Result<f64, PredictionError> {
    if predicted.len() != actual.len() || predicted.is_empty() {
        return Err(PredictionError::LengthMismatch(predicted.len(), actual.len()));
    }
    let mse = predicted
        .iter()
        .zip(actual)
        .map(|(p, a)| (p - a) * (p - a))
        .sum::<f64>()
        / predicted.len() as f64;
    Ok(sqrt(mse) / component.range())
}

/// Samples of look-ahead needed for a camera slewing at `camera_speed` to
/// keep up with a head turning at `head_speed`: `ceil(head / camera)`, at
/// least one.
pub fn select_horizon(head_speed: f64, camera_speed: f64, sample_period: f64) -> Result<usize, PredictionError> {
    if !(camera_speed > 0.0) {
        return Err(PredictionError::NonPositiveCameraSpeed(camera_speed));
    }
    if !(sample_period > 0.0) {
        return Err(PredictionError::InvalidConfig("sample period must be positive".into()));
    }
    let ratio = head_speed.max(0.0) / camera_speed;
    Ok((ceil(ratio - 1e-12) as usize).max(1))
}
