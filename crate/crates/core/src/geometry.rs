//! Orientation math: Euler/quaternion conversion, shortest-arc angular
//! distance, average head-rotation speed and speed-bin classification.
//!
//! Euler angles use the intrinsic Z-Y-X convention (yaw about z, then pitch
//! about the new y, then roll about the new x), all in degrees.

use alloc::string::String;
use alloc::vec::Vec;
use core::ops::{Mul, Neg};

use libm::{asin, atan2, cos, sin, sqrt};
use serde::{Deserialize, Serialize};

/// Unit-norm tolerance applied to quaternion inputs.
pub const UNIT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("{component} = {value} deg is outside [{min}, {max}]")]
    OutOfRange {
        component: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("quaternion norm {0} is not 1")]
    NotUnit(f64),
    #[error("trace needs at least {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("timestamps must strictly increase (sample {index}: {prev} -> {next})")]
    NonMonotone { index: usize, prev: f64, next: f64 },
    #[error("speed bin list is empty")]
    NoBins,
}

/// One Euler component of a head orientation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    Yaw,
    Pitch,
    Roll,
}

impl Component {
    pub const ALL: [Component; 3] = [Component::Yaw, Component::Pitch, Component::Roll];

    /// Width of the nominal angular range in degrees.
    pub fn range(self) -> f64 {
        match self {
            Component::Yaw | Component::Roll => 360.0,
            Component::Pitch => 180.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Component::Yaw => "yaw",
            Component::Pitch => "pitch",
            Component::Roll => "roll",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EulerAngles {
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
}

impl EulerAngles {
    /// Validated constructor: yaw and roll in [-180, 180], pitch in [-90, 90].
    pub fn new(yaw: f64, pitch: f64, roll: f64) -> Result<Self, GeometryError> {
        let e = Self { yaw, pitch, roll };
        e.validate()?;
        Ok(e)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        check_range("yaw", self.yaw, 180.0)?;
        check_range("pitch", self.pitch, 90.0)?;
        check_range("roll", self.roll, 180.0)
    }

    pub fn get(&self, c: Component) -> f64 {
        match c {
            Component::Yaw => self.yaw,
            Component::Pitch => self.pitch,
            Component::Roll => self.roll,
        }
    }

    pub fn to_quaternion(&self) -> Result<Quaternion, GeometryError> {
        euler_to_quaternion(*self)
    }
}

fn check_range(component: &'static str, value: f64, limit: f64) -> Result<(), GeometryError> {
    if value.is_finite() && (-limit..=limit).contains(&value) {
        Ok(())
    } else {
        Err(GeometryError::OutOfRange {
            component,
            value,
            min: -limit,
            max: limit,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    pub fn norm(&self) -> f64 {
        sqrt(self.dot(self))
    }

    pub fn dot(&self, o: &Quaternion) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn conjugate(&self) -> Self {
        Self::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn normalized(&self) -> Self {
        let n = self.norm();
        Self::new(self.w / n, self.x / n, self.y / n, self.z / n)
    }

    pub fn is_unit(&self) -> bool {
        (self.norm() - 1.0).abs() <= UNIT_TOLERANCE
    }

    fn check_unit(&self) -> Result<(), GeometryError> {
        let n = self.norm();
        if (n - 1.0).abs() <= UNIT_TOLERANCE {
            Ok(())
        } else {
            Err(GeometryError::NotUnit(n))
        }
    }

    /// Rotation about a unit axis by `angle_deg`.
    pub fn from_axis_angle(axis: [f64; 3], angle_deg: f64) -> Self {
        let half = angle_deg.to_radians() / 2.0;
        let s = sin(half);
        Self::new(cos(half), axis[0] * s, axis[1] * s, axis[2] * s)
    }

    /// Intrinsic Z-Y-X Euler angles in degrees. Away from gimbal lock this
    /// inverts [`euler_to_quaternion`]; the sign of `q` does not matter.
    pub fn to_euler(&self) -> EulerAngles {
        let Quaternion { w, x, y, z } = *self;
        let sinp = (2.0 * (w * y - z * x)).clamp(-1.0, 1.0);
        EulerAngles {
            yaw: atan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z)).to_degrees(),
            pitch: asin(sinp).to_degrees(),
            roll: atan2(2.0 * (w * x + y * z), 1.0 - 2.0 * (x * x + y * y)).to_degrees(),
        }
    }

    /// 3x3 rotation matrix, row-major.
    pub fn to_rotation_matrix(&self) -> [[f64; 3]; 3] {
        let Quaternion { w, x, y, z } = *self;
        [
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
            [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
            [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
        ]
    }

    /// Spherical interpolation along the shortest arc, `t` in [0, 1].
    pub fn slerp(&self, to: &Quaternion, t: f64) -> Quaternion {
        let mut dot = self.dot(to);
        let mut end = *to;
        if dot < 0.0 {
            dot = -dot;
            end = -end;
        }
        if dot > 1.0 - 1e-12 {
            // nearly parallel: linear blend is exact to rounding
            return Quaternion::new(
                self.w + (end.w - self.w) * t,
                self.x + (end.x - self.x) * t,
                self.y + (end.y - self.y) * t,
                self.z + (end.z - self.z) * t,
            )
            .normalized();
        }
        let theta = libm::acos(dot.min(1.0));
        let s = sin(theta);
        let a = sin((1.0 - t) * theta) / s;
        let b = sin(t * theta) / s;
        Quaternion::new(
            a * self.w + b * end.w,
            a * self.x + b * end.x,
            a * self.y + b * end.y,
            a * self.z + b * end.z,
        )
        .normalized()
    }

    /// Rotate toward `target` along the shortest arc by at most `max_deg`.
    /// Lands exactly on `target` when it is within reach.
    pub fn rotate_towards(&self, target: &Quaternion, max_deg: f64) -> Quaternion {
        let dist = shortest_arc_deg(self, target);
        if dist <= max_deg || dist == 0.0 {
            *target
        } else if max_deg <= 0.0 {
            *self
        } else {
            self.slerp(target, max_deg / dist)
        }
    }
}

impl Mul for Quaternion {
    type Output = Quaternion;

    /// Hamilton product.
    fn mul(self, r: Quaternion) -> Quaternion {
        Quaternion::new(
            self.w * r.w - self.x * r.x - self.y * r.y - self.z * r.z,
            self.w * r.x + self.x * r.w + self.y * r.z - self.z * r.y,
            self.w * r.y - self.x * r.z + self.y * r.w + self.z * r.x,
            self.w * r.z + self.x * r.y - self.y * r.x + self.z * r.w,
        )
    }
}

impl Neg for Quaternion {
    type Output = Quaternion;

    fn neg(self) -> Quaternion {
        Quaternion::new(-self.w, -self.x, -self.y, -self.z)
    }
}

/// Unit quaternion of intrinsic yaw-pitch-roll angles.
pub fn euler_to_quaternion(e: EulerAngles) -> Result<Quaternion, GeometryError> {
    e.validate()?;
    let (sy, cy) = half_sin_cos(e.yaw);
    let (sp, cp) = half_sin_cos(e.pitch);
    let (sr, cr) = half_sin_cos(e.roll);
    Ok(Quaternion::new(
        cy * cp * cr + sy * sp * sr,
        cy * cp * sr - sy * sp * cr,
        cy * sp * cr + sy * cp * sr,
        sy * cp * cr - cy * sp * sr,
    ))
}

fn half_sin_cos(deg: f64) -> (f64, f64) {
    let h = deg.to_radians() / 2.0;
    (sin(h), cos(h))
}

/// Shortest rotation angle between two orientations, in degrees in [0, 180].
///
/// Evaluates `2·acos(|Re(q1 ⊗ q2*)|)` through the equivalent
/// `2·atan2(|Im|, |Re|)`, which stays accurate for nearly equal inputs and
/// makes `q` and `-q` coincide.
pub fn angular_distance(q1: &Quaternion, q2: &Quaternion) -> Result<f64, GeometryError> {
    q1.check_unit()?;
    q2.check_unit()?;
    Ok(shortest_arc_deg(q1, q2))
}

pub(crate) fn shortest_arc_deg(q1: &Quaternion, q2: &Quaternion) -> f64 {
    let p = *q1 * q2.conjugate();
    let im = sqrt(p.x * p.x + p.y * p.y + p.z * p.z);
    (2.0 * atan2(im, p.w.abs())).to_degrees()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadSample {
    /// Seconds.
    pub timestamp: f64,
    pub euler: EulerAngles,
    pub orientation: Quaternion,
}

impl HeadSample {
    pub fn new(timestamp: f64, euler: EulerAngles) -> Result<Self, GeometryError> {
        Ok(Self {
            timestamp,
            orientation: euler_to_quaternion(euler)?,
            euler,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadTrace {
    samples: Vec<HeadSample>,
    pub source: String,
}

impl HeadTrace {
    pub fn new(samples: Vec<HeadSample>, source: impl Into<String>) -> Result<Self, GeometryError> {
        if samples.is_empty() {
            return Err(GeometryError::TooShort { needed: 1, got: 0 });
        }
        for (i, w) in samples.windows(2).enumerate() {
            if !(w[1].timestamp > w[0].timestamp) {
                return Err(GeometryError::NonMonotone {
                    index: i + 1,
                    prev: w[0].timestamp,
                    next: w[1].timestamp,
                });
            }
        }
        Ok(Self {
            samples,
            source: source.into(),
        })
    }

    pub fn samples(&self) -> &[HeadSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples[self.samples.len() - 1].timestamp - self.samples[0].timestamp
    }

    /// Mean inter-sample time, or `None` for a single sample.
    pub fn mean_period(&self) -> Option<f64> {
        (self.len() >= 2).then(|| self.duration() / (self.len() - 1) as f64)
    }

    /// True when the inter-sample jitter (std of gaps) exceeds half the mean
    /// gap, i.e. the uniform-rate assumption of the predictors is doubtful.
    pub fn irregular_sampling(&self) -> bool {
        let Some(mean) = self.mean_period() else {
            return false;
        };
        let n = (self.len() - 1) as f64;
        let var = self
            .samples
            .windows(2)
            .map(|w| {
                let d = w[1].timestamp - w[0].timestamp - mean;
                d * d
            })
            .sum::<f64>()
            / n;
        sqrt(var) > 0.5 * mean
    }

    /// One Euler component as a continuous (unwrapped) series.
    pub fn component_series(&self, c: Component) -> Vec<f64> {
        let raw: Vec<f64> = self.samples.iter().map(|s| s.euler.get(c)).collect();
        match c {
            Component::Pitch => raw,
            _ => unwrap_degrees(&raw),
        }
    }

    /// Sub-trace of samples `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> Result<HeadTrace, GeometryError> {
        HeadTrace::new(self.samples[start..end].to_vec(), self.source.clone())
    }
}

/// Remove ±360° jumps so consecutive values differ by at most 180°.
pub fn unwrap_degrees(values: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut offset = 0.0;
    let mut prev: Option<f64> = None;
    for &v in values {
        if let Some(p) = prev {
            let d = v - p;
            if d > 180.0 {
                offset -= 360.0;
            } else if d < -180.0 {
                offset += 360.0;
            }
        }
        prev = Some(v);
        out.push(v + offset);
    }
    out
}

/// Wrap an unwrapped angle back into [-180, 180].
pub fn wrap_degrees(v: f64) -> f64 {
    let r = libm::remainder(v, 360.0);
    if r == -180.0 {
        180.0
    } else {
        r
    }
}

/// Mean over consecutive pairs of angular shift divided by inter-sample time,
/// in degrees per second.
pub fn average_speed(trace: &HeadTrace) -> Result<f64, GeometryError> {
    let s = trace.samples();
    if s.len() < 2 {
        return Err(GeometryError::TooShort {
            needed: 2,
            got: s.len(),
        });
    }
    let total: f64 = s
        .windows(2)
        .map(|w| shortest_arc_deg(&w[1].orientation, &w[0].orientation) / (w[1].timestamp - w[0].timestamp))
        .sum();
    Ok(total / (s.len() - 1) as f64)
}

/// Bin nearest to `speed`; ties resolve to the lower bin. Speeds outside the
/// list clamp to its ends.
pub fn nearest_bin(speed: f64, bins: &[f64]) -> Result<f64, GeometryError> {
    let mut best: Option<(f64, f64)> = None;
    for &b in bins {
        let d = (speed - b).abs();
        match best {
            Some((bd, _)) if d >= bd => {}
            _ => best = Some((d, b)),
        }
    }
    best.map(|(_, b)| b).ok_or(GeometryError::NoBins)
}

pub fn classify_speed_bin(trace: &HeadTrace, bins: &[f64]) -> Result<f64, GeometryError> {
    nearest_bin(average_speed(trace)?, bins)
}
