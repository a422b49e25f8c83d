//! XR frame sizes as a function of camera rotation between frames.
//!
//! Compression exploits inter-frame correlation, so a frame costs
//! `F·d·(1 − exp(−k·F·θ/γ))` bytes where `θ` is the rotation since the
//! previous frame. A keyframe floor keeps static scenes from producing
//! empty frames.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use libm::{ceil, exp, log};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum XrError {
    #[error("invalid frame spec: {0}")]
    InvalidSpec(String),
    #[error("angular shift must be nonnegative, got {0}")]
    NegativeAngle(f64),
    #[error("horizon {horizon} s is shorter than the frame period {frame_period} s")]
    HorizonTooShort { horizon: f64, frame_period: f64 },
    #[error("camera speed must be positive, got {0}")]
    NonPositiveCameraSpeed(f64),
    #[error("target mean {target} B outside the reachable range [{min}, {max}] B")]
    CalibrationOutOfRange { target: f64, min: f64, max: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameSpec {
    pub width: f64,
    pub height: f64,
    /// frames per second
    pub frame_rate: f64,
    /// bytes per pixel after any fixed encoding gain
    pub color_depth: f64,
    /// field of view, degrees
    pub fov: f64,
    /// sensitivity, 1/pixel
    pub k: f64,
    /// minimum frame as a fraction of the raw frame
    pub keyframe_fraction: f64,
}

impl FrameSpec {
    pub fn new(width: f64, height: f64, frame_rate: f64, color_depth: f64, fov: f64, k: f64) -> Result<Self, XrError> {
        let s = Self {
            width,
            height,
            frame_rate,
            color_depth,
            fov,
            k,
            keyframe_fraction: 0.05,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), XrError> {
        let pos = [
            ("width", self.width),
            ("height", self.height),
            ("frame_rate", self.frame_rate),
            ("color_depth", self.color_depth),
            ("fov", self.fov),
            ("k", self.k),
        ];
        for (name, v) in pos {
            if !(v > 0.0) || !v.is_finite() {
                return Err(XrError::InvalidSpec(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.keyframe_fraction) {
            return Err(XrError::InvalidSpec("keyframe_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn pixels(&self) -> f64 {
        self.width * self.height
    }

    pub fn frame_period(&self) -> f64 {
        1.0 / self.frame_rate
    }

    /// Uncompressed frame, bytes.
    pub fn raw_frame_size(&self) -> f64 {
        self.pixels() * self.color_depth
    }

    pub fn keyframe_floor(&self) -> f64 {
        self.keyframe_fraction * self.raw_frame_size()
    }

    /// Effective frame size with the keyframe floor applied.
    pub fn frame_size(&self, theta_deg: f64) -> Result<f64, XrError> {
        Ok(effective_frame_size(self, theta_deg)?.max(self.keyframe_floor()))
    }
}

/// `F·d·f`, bytes per second.
pub fn raw_datarate(spec: &FrameSpec) -> f64 {
    spec.pixels() * spec.color_depth * spec.frame_rate
}

/// `F·θ/γ`, pixels.
pub fn pixel_shift(spec: &FrameSpec, theta_deg: f64) -> Result<f64, XrError> {
    if !(theta_deg >= 0.0) {
        return Err(XrError::NegativeAngle(theta_deg));
    }
    Ok(spec.pixels() * theta_deg / spec.fov)
}

/// Bytes per second once inter-frame correlation is exploited.
pub fn effective_datarate(spec: &FrameSpec, theta_deg: f64) -> Result<f64, XrError> {
    let shift = pixel_shift(spec, theta_deg)?;
    // 1 - exp(-x) without cancellation for small x
    Ok(raw_datarate(spec) * -libm::expm1(-spec.k * shift))
}

/// Bytes of one frame, no floor.
pub fn effective_frame_size(spec: &FrameSpec, theta_deg: f64) -> Result<f64, XrError> {
    Ok(effective_datarate(spec, theta_deg)? / spec.frame_rate)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpreadDemand {
    /// rotation carried by each frame, degrees
    pub thetas: Vec<f64>,
    /// effective size of each frame, bytes
    pub sizes: Vec<f64>,
}

impl SpreadDemand {
    pub fn peak(&self) -> f64 {
        self.sizes.iter().cloned().fold(0.0, f64::max)
    }
    pub fn total(&self) -> f64 {
        self.sizes.iter().sum()
    }
}

/// Per-frame demand when a rotation of `theta_total` is executed at
/// `min(camera_speed, theta_total / horizon)` instead of all at once.
pub fn horizon_spread_demand(
    spec: &FrameSpec,
    theta_total: f64,
    horizon: f64,
    camera_speed: f64,
    frame_period: f64,
) -> Result<SpreadDemand, XrError> {
    if !(theta_total >= 0.0) {
        return Err(XrError::NegativeAngle(theta_total));
    }
    if !(frame_period > 0.0) || horizon < frame_period * (1.0 - 1e-12) {
        return Err(XrError::HorizonTooShort { horizon, frame_period });
    }
    if !(camera_speed > 0.0) {
        return Err(XrError::NonPositiveCameraSpeed(camera_speed));
    }
    if theta_total == 0.0 {
        return Ok(SpreadDemand {
            thetas: alloc::vec![0.0],
            sizes: alloc::vec![0.0],
        });
    }
    let rate = camera_speed.min(theta_total / horizon);
    let step = rate * frame_period;
    let n = (ceil(theta_total / step - 1e-9) as usize).max(1);
    let mut thetas = alloc::vec![step; n];
    thetas[n - 1] = theta_total - step * (n - 1) as f64;
    let sizes = thetas
        .iter()
        .map(|&t| effective_frame_size(spec, t))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SpreadDemand { thetas, sizes })
}

/// Sensitivity `k` such that the mean floored frame size over `thetas`
/// equals `target_mean` bytes.
pub fn calibrate_k(spec: &FrameSpec, thetas: &[f64], target_mean: f64) -> Result<f64, XrError> {
    if thetas.is_empty() || thetas.iter().any(|t| !(*t >= 0.0)) {
        return Err(XrError::InvalidSpec("calibration needs nonnegative angular shifts".into()));
    }
    let mean_at = |k: f64| {
        let s = FrameSpec { k, ..*spec };
        thetas.iter().map(|&t| s.frame_size(t).unwrap_or(0.0)).sum::<f64>() / thetas.len() as f64
    };
    let (mut lo, mut hi) = (log(1e-16), log(1e2));
    let (min, max) = (mean_at(exp(lo)), mean_at(exp(hi)));
    if !(target_mean > min && target_mean < max) {
        return Err(XrError::CalibrationOutOfRange {
            target: target_mean,
            min,
            max,
        });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_at(exp(mid)) < target_mean {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(exp(0.5 * (lo + hi)))
}

/// One point of the per-frame request against head speed and horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RequestPoint {
    /// deg/s
    pub speed: f64,
    /// s
    pub horizon: f64,
    pub frames: usize,
    /// largest floored frame, bytes
    pub peak: f64,
    pub mean: f64,
}

/// Per-frame request when the camera is sent where the head will be
/// `horizon` ahead. The step the head makes in one `period` lands in a single
/// frame when the horizon equals the period and is spread over the horizon
/// otherwise. The camera is assumed able to keep up with the head.
pub fn request_curve(spec: &FrameSpec, speeds: &[f64], horizons: &[f64], period: f64) -> Result<Vec<RequestPoint>, XrError> {
    let mut out = Vec::with_capacity(speeds.len() * horizons.len());
    for &speed in speeds {
        for &horizon in horizons {
            let theta = speed * period;
            let d = horizon_spread_demand(spec, theta, horizon, speed.max(1e-9), period)?;
            let sizes = d
                .thetas
                .iter()
                .map(|&t| spec.frame_size(t))
                .collect::<Result<Vec<_>, _>>()?;
            out.push(RequestPoint {
                speed,
                horizon,
                frames: sizes.len(),
                peak: sizes.iter().cloned().fold(0.0, f64::max),
                mean: sizes.iter().sum::<f64>() / sizes.len() as f64,
            });
        }
    }
    Ok(out)
}

/// `k` for which a head turning at `speed`, followed frame by frame, yields
/// the class's mean frame size.
pub fn direct_sync_k(class: ResolutionClass, frame_rate: f64, fov: f64, speed: f64, period: f64) -> Result<f64, XrError> {
    let spec = class.frame_spec(frame_rate, fov, 1.0)?;
    calibrate_k(&spec, &[speed * period], class.mean_frame_size(frame_rate))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum QoeTier {
    Fair,
    Comfortable,
    Ideal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ResolutionClass {
    #[serde(rename = "2K")]
    K2,
    #[serde(rename = "4K")]
    K4,
    #[serde(rename = "8K")]
    K8,
    #[serde(rename = "16K")]
    K16,
}

impl ResolutionClass {
    pub const ALL: [ResolutionClass; 4] = [Self::K2, Self::K4, Self::K8, Self::K16];

    pub fn label(self) -> &'static str {
        match self {
            Self::K2 => "2K",
            Self::K4 => "4K",
            Self::K8 => "8K",
            Self::K16 => "16K",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.label().eq_ignore_ascii_case(s))
    }

    /// Minimum mean datarate, bits/s.
    pub fn datarate_floor(self) -> f64 {
        match self {
            Self::K2 => 40e6,
            Self::K4 => 90e6,
            Self::K8 => 360e6,
            Self::K16 => 440e6,
        }
    }

    /// Minimum provisioned bandwidth, bits/s.
    pub fn bandwidth_floor(self) -> f64 {
        match self {
            Self::K2 => 80e6,
            Self::K4 => 260e6,
            Self::K8 => 1e9,
            Self::K16 => 1.5e9,
        }
    }

    /// Inter-frame latency budget, seconds.
    pub fn latency_budget(self) -> f64 {
        match self {
            Self::K2 => 0.020,
            Self::K4 => 0.015,
            Self::K8 | Self::K16 => 0.008,
        }
    }

    pub fn tier(self) -> QoeTier {
        match self {
            Self::K2 => QoeTier::Fair,
            Self::K4 => QoeTier::Comfortable,
            Self::K8 | Self::K16 => QoeTier::Ideal,
        }
    }

    pub fn dimensions(self) -> (f64, f64) {
        match self {
            Self::K2 => (2048.0, 1080.0),
            Self::K4 => (3840.0, 2160.0),
            Self::K8 => (7680.0, 4320.0),
            Self::K16 => (15360.0, 8640.0),
        }
    }

    /// Mean frame size at the datarate floor, bytes.
    pub fn mean_frame_size(self, frame_rate: f64) -> f64 {
        self.datarate_floor() / frame_rate / 8.0
    }

    /// Frame spec whose raw datarate equals the bandwidth floor.
    pub fn frame_spec(self, frame_rate: f64, fov: f64, k: f64) -> Result<FrameSpec, XrError> {
        let (w, h) = self.dimensions();
        let depth = self.bandwidth_floor() / (8.0 * w * h * frame_rate);
        FrameSpec::new(w, h, frame_rate, depth, fov, k)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QoeVerdict {
    pub class: ResolutionClass,
    pub tier: QoeTier,
    pub latency_ok: bool,
    pub datarate_ok: bool,
}

impl QoeVerdict {
    pub fn satisfied(&self) -> bool {
        self.latency_ok && self.datarate_ok
    }
}

/// Check latency (seconds) and datarate (bits/s) against the class's tier;
/// both bounds inclusive.
pub fn qoe_classify(class: ResolutionClass, latency: f64, datarate: f64) -> QoeVerdict {
    QoeVerdict {
        class,
        tier: class.tier(),
        latency_ok: latency <= class.latency_budget() * (1.0 + 1e-12),
        datarate_ok: datarate >= class.datarate_floor() * (1.0 - 1e-12),
    }
}
