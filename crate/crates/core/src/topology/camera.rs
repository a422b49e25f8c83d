//! Slew-limited camera on the machine side and the per-sample Edge-AI step
//! that turns a received head orientation into a camera command.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::geometry::{shortest_arc_deg, wrap_degrees, Component, EulerAngles, Quaternion};
use crate::prediction::{predict_persistence, ForecastRequest, PredictionError, Predictor};
use crate::xr::{horizon_spread_demand, FrameSpec, SpreadDemand, XrError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraCommand {
    pub target: Quaternion,
    /// time by which the target should be reached; `None` means as fast as
    /// possible
    pub deadline: Option<f64>,
}

/// Camera orientation and the command it is executing. Motion is evaluated
/// lazily: [`CameraState::advance_to`] integrates from the last update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraState {
    pub orientation: Quaternion,
    /// deg/s
    pub slew: f64,
    pub target: Option<Quaternion>,
    /// current angular speed, deg/s, at most `slew`
    pub speed: f64,
    pub updated: f64,
}

impl CameraState {
    pub fn new(orientation: Quaternion, slew: f64) -> Self {
        Self {
            orientation,
            slew,
            target: None,
            speed: slew,
            updated: 0.0,
        }
    }

    pub fn advance_to(&mut self, t: f64) {
        let dt = t - self.updated;
        if dt > 0.0 {
            if let Some(target) = self.target {
                *self = CameraState {
                    target: Some(target),
                    ..camera_advance_at(self, &target, dt, self.speed)
                };
            }
            self.updated = t;
        }
    }

    /// Apply a command received at `t`.
    pub fn command(&mut self, cmd: &CameraCommand, t: f64) {
        self.advance_to(t);
        let dist = shortest_arc_deg(&self.orientation, &cmd.target);
        self.speed = match cmd.deadline {
            Some(d) if d > t => self.slew.min(dist / (d - t)),
            _ => self.slew,
        };
        self.target = Some(cmd.target);
    }

    /// Angle still to go, degrees.
    pub fn remaining(&self) -> f64 {
        self.target.map_or(0.0, |t| shortest_arc_deg(&self.orientation, &t))
    }
}

fn camera_advance_at(state: &CameraState, target: &Quaternion, dt: f64, speed: f64) -> CameraState {
    CameraState {
        orientation: state.orientation.rotate_towards(target, speed.min(state.slew) * dt),
        ..*state
    }
}

/// Rotate toward `target` along the shortest arc by at most `slew·dt`.
pub fn camera_advance(state: &CameraState, target: &Quaternion, dt: f64) -> CameraState {
    if !(dt > 0.0) {
        return *state;
    }
    camera_advance_at(state, target, dt, state.slew)
}

/// Inputs of one Edge-AI step for a received HMD sample.
#[derive(Debug, Clone, Copy)]
pub struct H2mInput<'a> {
    /// received orientations, unwrapped per component, oldest first
    pub history: &'a [[f64; 3]],
    /// per component; `None` uses `oracle`
    pub predictor: Option<&'a [Predictor; 3]>,
    /// the true orientation `horizon_samples` ahead, when known
    pub oracle: Option<EulerAngles>,
    pub horizon_samples: usize,
    pub sample_period: f64,
    pub camera: &'a CameraState,
    pub spec: Option<&'a FrameSpec>,
    pub frame_period: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct H2mStep {
    pub target: Quaternion,
    pub predicted: EulerAngles,
    /// the predictor failed and persistence was used
    pub fallback: bool,
    /// per-frame demand while the camera moves to the target, floored at the
    /// keyframe size; empty without a frame spec
    pub demand: Vec<f64>,
    pub spread: Option<SpreadDemand>,
}

impl H2mStep {
    /// Demand of the next frame.
    pub fn next_frame_demand(&self) -> Option<f64> {
        self.demand.first().copied()
    }
}

fn to_euler(v: [f64; 3]) -> EulerAngles {
    EulerAngles {
        yaw: wrap_degrees(v[0]),
        pitch: v[1].clamp(-90.0, 90.0),
        roll: wrap_degrees(v[2]),
    }
}

/// Predict the orientation `horizon` ahead, command the camera there, and
/// size the frames the move will produce.
pub fn h2m_loop_step(input: &H2mInput<'_>) -> Result<H2mStep, XrError> {
    let last = input.history.last().copied().unwrap_or([0.0; 3]);
    let mut fallback = false;
    let predicted = match (input.predictor, input.oracle) {
        (None, Some(o)) => o,
        (Some(p), _) => {
            let mut out = [0.0; 3];
            for (i, _) in Component::ALL.iter().enumerate() {
                let series: Vec<f64> = input.history.iter().map(|s| s[i]).collect();
                let req = ForecastRequest::new(&series, input.horizon_samples, input.sample_period);
                out[i] = match p[i].forecast(&req) {
                    Ok(v) if v.is_finite() => v,
                    Ok(_) | Err(PredictionError::EmptyHistory) | Err(_) => {
                        fallback = true;
                        predict_persistence(&req).unwrap_or(last[i])
                    }
                };
            }
            to_euler(out)
        }
        (None, None) => {
            fallback = true;
            to_euler(last)
        }
    };
    let target = predicted.to_quaternion().unwrap_or(Quaternion::IDENTITY);
    let (demand, spread) = match input.spec {
        Some(spec) => {
            let theta = shortest_arc_deg(&input.camera.orientation, &target);
            let horizon = (input.horizon_samples as f64 * input.sample_period).max(input.frame_period);
            let s = horizon_spread_demand(spec, theta, horizon, input.camera.slew, input.frame_period)?;
            let floor = spec.keyframe_floor();
            (s.sizes.iter().map(|x| x.max(floor)).collect(), Some(s))
        }
        None => (Vec::new(), None),
    };
    Ok(H2mStep {
        target,
        predicted,
        fallback,
        demand,
        spread,
    })
}
