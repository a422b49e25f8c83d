//! Open-loop traffic sources and Ethernet segmentation.
//!
//! Gaps are seconds, sizes bytes. Every source draws from the RNG it is
//! handed, so one stream per source keeps runs reproducible when sources
//! are added or removed.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma, Normal, Pareto};
use serde::{Deserialize, Serialize};

use crate::engine::RngStream;
use crate::geometry::HeadTrace;
use crate::xr::FrameSpec;
use crate::KB;

/// Largest Ethernet payload.
pub const MTU_PAYLOAD: u32 = 1500;
/// Payload of the padding packet sent for an empty frame.
pub const MIN_PAYLOAD: u32 = 46;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrafficError {
    #[error("invalid traffic parameter: {0}")]
    Invalid(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrafficClass {
    Xr,
    Hmd,
    Bkg,
}

impl TrafficClass {
    pub const ALL: [TrafficClass; 3] = [TrafficClass::Xr, TrafficClass::Hmd, TrafficClass::Bkg];

    pub fn name(self) -> &'static str {
        match self {
            TrafficClass::Xr => "xr",
            TrafficClass::Hmd => "hmd",
            TrafficClass::Bkg => "bkg",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EthernetPacket {
    pub class: TrafficClass,
    pub source: u32,
    /// frame the packet belongs to; sequence number for non-XR traffic
    pub frame_id: u64,
    pub payload: u32,
    pub created: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct XrFrame {
    pub id: u64,
    pub created: f64,
    pub size: u64,
    pub packets: u32,
}

/// Gaussian gap truncated from below by rejection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianGap {
    pub mean: f64,
    pub std: f64,
    pub floor: f64,
}

impl GaussianGap {
    /// 33.13 ms mean, variance 3.08 ms².
    pub fn xr_default() -> Self {
        Self {
            mean: 0.03313,
            std: libm::sqrt(3.08) * 1e-3,
            floor: 1e-3,
        }
    }

    pub fn validate(&self) -> Result<(), TrafficError> {
        if !(self.mean > 0.0) || !(self.std >= 0.0) || !(self.floor > 0.0) || self.floor >= self.mean {
            return Err(TrafficError::Invalid("gaussian gap needs mean > floor > 0 and std >= 0"));
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut RngStream) -> f64 {
        if self.std == 0.0 {
            return self.mean;
        }
        let n = Normal::new(self.mean, self.std).expect("validated");
        loop {
            let g = n.sample(rng);
            if g >= self.floor {
                return g;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum XrSizeMode {
    /// Gamma(shape, scale) in KB.
    EmpiricalGamma { shape: f64, scale_kb: f64 },
    /// Sizes from the camera rotation since the previous frame.
    HeadDriven { spec: FrameSpec },
}

impl XrSizeMode {
    pub fn empirical_default() -> Self {
        XrSizeMode::EmpiricalGamma {
            shape: 0.8839,
            scale_kb: 33.6439,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XrSource {
    pub arrival: GaussianGap,
    pub size: XrSizeMode,
    next_id: u64,
}

impl XrSource {
    pub fn new(arrival: GaussianGap, size: XrSizeMode) -> Result<Self, TrafficError> {
        arrival.validate()?;
        match &size {
            XrSizeMode::EmpiricalGamma { shape, scale_kb } => {
                if !(*shape > 0.0 && *scale_kb > 0.0) {
                    return Err(TrafficError::Invalid("gamma shape and scale must be positive"));
                }
            }
            XrSizeMode::HeadDriven { spec } => {
                spec.validate().map_err(|_| TrafficError::Invalid("head-driven frame spec is invalid"))?;
            }
        }
        Ok(Self {
            arrival,
            size,
            next_id: 0,
        })
    }

    /// Frame created at `now` and the gap to the next one. `theta` is the
    /// camera rotation since the previous frame (head-driven mode only).
    pub fn next_xr_frame(&mut self, rng: &mut RngStream, now: f64, theta: Option<f64>) -> (XrFrame, f64) {
        let bytes = match &self.size {
            XrSizeMode::EmpiricalGamma { shape, scale_kb } => {
                let g = Gamma::new(*shape, *scale_kb).expect("validated");
                g.sample(rng) * KB
            }
            XrSizeMode::HeadDriven { spec } => spec.frame_size(theta.unwrap_or(0.0).max(0.0)).unwrap_or(0.0),
        };
        let size = libm::round(bytes).max(0.0) as u64;
        let frame = XrFrame {
            id: self.next_id,
            created: now,
            size,
            packets: packet_count(size, MTU_PAYLOAD),
        };
        self.next_id += 1;
        (frame, self.arrival.sample(rng))
    }
}

fn packet_count(size: u64, mtu: u32) -> u32 {
    if size == 0 {
        1
    } else {
        size.div_ceil(mtu as u64) as u32
    }
}

/// Split a frame into MTU-sized packets; the last carries the remainder.
/// An empty frame becomes one minimum-size packet.
pub fn segment_frame(frame: &XrFrame, source: u32, mtu_payload: u32) -> Result<Vec<EthernetPacket>, TrafficError> {
    if mtu_payload == 0 {
        return Err(TrafficError::Invalid("MTU payload must be positive"));
    }
    let pkt = |payload| EthernetPacket {
        class: TrafficClass::Xr,
        source,
        frame_id: frame.id,
        payload,
        created: frame.created,
    };
    if frame.size == 0 {
        return Ok(alloc::vec![pkt(MIN_PAYLOAD)]);
    }
    let full = frame.size / mtu_payload as u64;
    let rem = (frame.size % mtu_payload as u64) as u32;
    let mut out = Vec::with_capacity(full as usize + 1);
    for _ in 0..full {
        out.push(pkt(mtu_payload));
    }
    if rem > 0 {
        out.push(pkt(rem));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HmdSource {
    pub shape: f64,
    /// seconds
    pub scale: f64,
    pub payload: u32,
    /// exact mean spacing instead of random gaps
    pub deterministic: bool,
}

impl Default for HmdSource {
    fn default() -> Self {
        Self {
            shape: 51.844,
            scale: 0.273e-3,
            payload: 64,
            deterministic: false,
        }
    }
}

/// Position in a head trace; wraps around at the end.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceCursor {
    pub index: usize,
    pub looped: bool,
}

impl TraceCursor {
    /// Current sample index, then advance.
    pub fn advance(&mut self, trace: &HeadTrace) -> usize {
        let i = self.index;
        self.index += 1;
        if self.index >= trace.len() {
            self.index = 0;
            self.looped = true;
        }
        i
    }
}

impl HmdSource {
    pub fn validate(&self) -> Result<(), TrafficError> {
        if !(self.shape > 0.0 && self.scale > 0.0) || self.payload == 0 {
            return Err(TrafficError::Invalid("HMD gamma parameters and payload must be positive"));
        }
        Ok(())
    }

    pub fn mean_gap(&self) -> f64 {
        self.shape * self.scale
    }

    pub fn sample_gap(&self, rng: &mut RngStream) -> f64 {
        if self.deterministic {
            return self.mean_gap();
        }
        let g = Gamma::new(self.shape, self.scale).expect("validated");
        loop {
            let x = g.sample(rng);
            if x > 0.0 {
                return x;
            }
        }
    }

    /// Packet carrying the cursor's next orientation, and the gap to the
    /// following packet. The returned index points into the trace.
    pub fn next_hmd_packet(
        &self,
        rng: &mut RngStream,
        now: f64,
        seq: u64,
        source: u32,
        trace: &HeadTrace,
        cursor: &mut TraceCursor,
    ) -> (EthernetPacket, usize, f64) {
        let idx = cursor.advance(trace);
        let pkt = EthernetPacket {
            class: TrafficClass::Hmd,
            source,
            frame_id: seq,
            payload: self.payload,
            created: now,
        };
        (pkt, idx, self.sample_gap(rng))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum GapLaw {
    Exponential,
    /// Pareto with tail index `shape` (> 1 for a finite mean).
    Pareto { shape: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackgroundSource {
    pub law: GapLaw,
    pub packet_size: u32,
    /// offered rate, bits/s
    pub rate_bps: f64,
}

impl BackgroundSource {
    /// Source offering `load` of a link of `capacity_bps`.
    pub fn new(law: GapLaw, packet_size: u32, load: f64, capacity_bps: f64) -> Result<Self, TrafficError> {
        if !(0.0..1.0).contains(&load) {
            return Err(TrafficError::Invalid("background load must lie in [0, 1)"));
        }
        Self::with_rate(law, packet_size, load * capacity_bps)
    }

    pub fn with_rate(law: GapLaw, packet_size: u32, rate_bps: f64) -> Result<Self, TrafficError> {
        if packet_size == 0 || packet_size > MTU_PAYLOAD {
            return Err(TrafficError::Invalid("background packet size must be in 1..=1500"));
        }
        if !(rate_bps >= 0.0) || !rate_bps.is_finite() {
            return Err(TrafficError::Invalid("background rate must be finite and nonnegative"));
        }
        if let GapLaw::Pareto { shape } = law {
            if !(shape > 1.0) {
                return Err(TrafficError::Invalid("Pareto shape must exceed 1"));
            }
        }
        Ok(Self {
            law,
            packet_size,
            rate_bps,
        })
    }

    /// Mean gap in seconds; infinite when idle.
    pub fn mean_gap(&self) -> f64 {
        if self.rate_bps == 0.0 {
            f64::INFINITY
        } else {
            self.packet_size as f64 * 8.0 / self.rate_bps
        }
    }

    pub fn sample_gap(&self, rng: &mut RngStream) -> f64 {
        let m = self.mean_gap();
        if !m.is_finite() {
            return f64::INFINITY;
        }
        match self.law {
            GapLaw::Exponential => loop {
                let x = Exp::new(1.0 / m).expect("positive rate").sample(rng);
                if x > 0.0 {
                    return x;
                }
            },
            GapLaw::Pareto { shape } => {
                let xm = m * (shape - 1.0) / shape;
                Pareto::new(xm, shape).expect("validated").sample(rng)
            }
        }
    }

    pub fn next_background_packet(&self, rng: &mut RngStream, now: f64, seq: u64, source: u32) -> (EthernetPacket, f64) {
        let pkt = EthernetPacket {
            class: TrafficClass::Bkg,
            source,
            frame_id: seq,
            payload: self.packet_size,
            created: now,
        };
        (pkt, self.sample_gap(rng))
    }
}

/// Uniform draw used by callers that need a phase offset.
pub fn uniform_phase(rng: &mut RngStream, period: f64) -> f64 {
    rng.random::<f64>() * period
}
