//! Measurement plane: per-packet latency records with a per-hop breakdown,
//! streaming per-class statistics, frame latencies, and the QoE report.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use libm::{ceil, log, pow, sqrt};
use serde::{Deserialize, Serialize};

use crate::traffic::TrafficClass;
use crate::xr::{qoe_classify, QoeVerdict, ResolutionClass};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("packet {id}: delivered at {delivered} before creation at {created}")]
    DeliveredBeforeCreated { id: u64, created: f64, delivered: f64 },
    #[error("packet {id}: breakdown sums to {sum} s but end-to-end latency is {total} s")]
    BreakdownMismatch { id: u64, sum: f64, total: f64 },
    #[error("packet {id}: hop timestamps are not monotone")]
    NonMonotoneHops { id: u64 },
}

/// Where the time went, seconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Breakdown {
    /// arrival to the first upstream window that followed it, per hop
    pub wait: f64,
    /// further queueing behind other traffic or across cycles
    pub queue: f64,
    /// serialisation on every link
    pub transmit: f64,
    /// wireless and fiber delays
    pub propagate: f64,
}

impl Breakdown {
    pub fn total(&self) -> f64 {
        self.wait + self.queue + self.transmit + self.propagate
    }
}

/// Timestamps along the uplink path, seconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct HopTimes {
    pub arrive_sfu: f64,
    pub tx_sfu: f64,
    pub arrive_mfu: f64,
    pub tx_mfu: f64,
    pub arrive_olt: f64,
}

impl HopTimes {
    fn as_array(&self) -> [f64; 5] {
        [self.arrive_sfu, self.tx_sfu, self.arrive_mfu, self.tx_mfu, self.arrive_olt]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyRecord {
    pub packet_id: u64,
    pub class: TrafficClass,
    pub source: u32,
    pub frame_id: u64,
    pub bytes: u32,
    pub created: f64,
    pub delivered: f64,
    pub hops: HopTimes,
    pub breakdown: Breakdown,
}

impl LatencyRecord {
    pub fn latency(&self) -> f64 {
        self.delivered - self.created
    }

    pub fn validate(&self) -> Result<(), MetricsError> {
        if !(self.delivered >= self.created) {
            return Err(MetricsError::DeliveredBeforeCreated {
                id: self.packet_id,
                created: self.created,
                delivered: self.delivered,
            });
        }
        let sum = self.breakdown.total();
        if (sum - self.latency()).abs() > 1e-9 {
            return Err(MetricsError::BreakdownMismatch {
                id: self.packet_id,
                sum,
                total: self.latency(),
            });
        }
        let h = self.hops.as_array();
        let mono = h.windows(2).all(|w| w[1] >= w[0]) && h[0] >= self.created && self.delivered >= h[4];
        if !mono {
            return Err(MetricsError::NonMonotoneHops { id: self.packet_id });
        }
        Ok(())
    }
}

/// Log-spaced histogram of positive values for approximate percentiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHistogram {
    lo: f64,
    ratio: f64,
    counts: Vec<u64>,
    below: u64,
    above: u64,
}

impl LogHistogram {
    /// Buckets from `lo` to `hi`, each `ratio` wide.
    pub fn new(lo: f64, hi: f64, ratio: f64) -> Self {
        let n = ceil(log(hi / lo) / log(ratio)) as usize;
        Self {
            lo,
            ratio,
            counts: vec![0; n.max(1)],
            below: 0,
            above: 0,
        }
    }

    /// 0.1 µs to 100 s in 1 % steps.
    pub fn latency_default() -> Self {
        Self::new(1e-7, 100.0, 1.01)
    }

    pub fn add(&mut self, x: f64) {
        if !(x >= self.lo) {
            self.below += 1;
            return;
        }
        let i = (log(x / self.lo) / log(self.ratio)) as usize;
        match self.counts.get_mut(i) {
            Some(c) => *c += 1,
            None => self.above += 1,
        }
    }

    pub fn count(&self) -> u64 {
        self.below + self.above + self.counts.iter().sum::<u64>()
    }

    /// Upper edge of the bucket holding quantile `q`; clamped by the
    /// caller's exact min and max.
    pub fn quantile(&self, q: f64) -> Option<f64> {
        let n = self.count();
        if n == 0 {
            return None;
        }
        let rank = ceil(q.clamp(0.0, 1.0) * n as f64).max(1.0) as u64;
        let mut seen = self.below;
        if seen >= rank {
            return Some(self.lo);
        }
        for (i, c) in self.counts.iter().enumerate() {
            seen += c;
            if seen >= rank {
                return Some(self.lo * pow(self.ratio, (i + 1) as f64));
            }
        }
        Some(f64::INFINITY)
    }
}

/// Welford mean/variance with extremes and a histogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamingStats {
    n: u64,
    mean: f64,
    m2: f64,
    min: f64,
    max: f64,
    hist: LogHistogram,
}

impl Default for StreamingStats {
    fn default() -> Self {
        Self {
            n: 0,
            mean: 0.0,
            m2: 0.0,
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
            hist: LogHistogram::latency_default(),
        }
    }
}

impl StreamingStats {
    pub fn add(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
        self.min = self.min.min(x);
        self.max = self.max.max(x);
        self.hist.add(x);
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> Option<f64> {
        (self.n > 0).then_some(self.mean)
    }

    /// Sample standard deviation; needs two values.
    pub fn std(&self) -> Option<f64> {
        (self.n >= 2).then(|| sqrt(self.m2 / (self.n - 1) as f64))
    }

    /// Population variance.
    pub fn variance(&self) -> Option<f64> {
        (self.n >= 1).then(|| self.m2 / self.n as f64)
    }

    pub fn min(&self) -> Option<f64> {
        (self.n > 0).then_some(self.min)
    }

    pub fn max(&self) -> Option<f64> {
        (self.n > 0).then_some(self.max)
    }

    pub fn quantile(&self, q: f64) -> Option<f64> {
        self.hist.quantile(q).map(|v| v.clamp(self.min, self.max))
    }

    pub fn summary(&self) -> ClassSummary {
        ClassSummary {
            count: self.n,
            mean: self.mean(),
            std: self.std(),
            min: self.min(),
            max: self.max(),
            p50: self.quantile(0.50),
            p95: self.quantile(0.95),
            p99: self.quantile(0.99),
        }
    }
}

/// Sample standard deviation of latencies; absent below two values.
pub fn jitter_std(latencies: &[f64]) -> Option<f64> {
    if latencies.len() < 2 {
        return None;
    }
    let n = latencies.len() as f64;
    let m = latencies.iter().sum::<f64>() / n;
    Some(sqrt(latencies.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub count: u64,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub p50: Option<f64>,
    pub p95: Option<f64>,
    pub p99: Option<f64>,
}

/// One XR frame from camera to OLT.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub pair: u32,
    pub frame_id: u64,
    pub created: f64,
    pub size: u64,
    pub packets: u32,
    /// predicted size handed to the DBA (0 without prediction)
    pub predicted: f64,
    /// camera rotation carried by the frame, degrees
    pub theta: f64,
    pub arrive_sfu: f64,
    /// last packet at the MFU
    pub last_mfu: f64,
    /// last packet at the OLT
    pub last_olt: f64,
    /// latest per-packet latency in the frame
    pub max_packet_latency: f64,
    pub delivered: u32,
}

impl FrameRecord {
    pub fn complete(&self) -> bool {
        self.delivered == self.packets
    }

    /// creation to last delivery
    pub fn latency(&self) -> f64 {
        self.last_olt - self.created
    }

    /// SFU arrival to last packet at the MFU
    pub fn fttr_latency(&self) -> f64 {
        self.last_mfu - self.arrive_sfu
    }
}

/// Bytes accounting for one class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ByteCounts {
    pub generated: u64,
    pub delivered: u64,
    pub dropped: u64,
}

impl ByteCounts {
    pub fn in_flight(&self) -> u64 {
        self.generated - self.delivered - self.dropped
    }
}

/// Class-partitioned store filled by the event loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsStore {
    pub packets: [StreamingStats; 3],
    pub bytes: [ByteCounts; 3],
    pub frames: Vec<FrameRecord>,
    pub frame_stats: StreamingStats,
    pub downlink: StreamingStats,
    /// camera-head gap above 20 ms, seconds accumulated
    pub desync_time: f64,
}

impl Default for MetricsStore {
    fn default() -> Self {
        Self {
            packets: Default::default(),
            bytes: Default::default(),
            frames: Vec::new(),
            frame_stats: StreamingStats::default(),
            downlink: StreamingStats::default(),
            desync_time: 0.0,
        }
    }
}

fn idx(c: TrafficClass) -> usize {
    match c {
        TrafficClass::Xr => 0,
        TrafficClass::Hmd => 1,
        TrafficClass::Bkg => 2,
    }
}

impl MetricsStore {
    pub fn record_delivery(&mut self, rec: &LatencyRecord) -> Result<(), MetricsError> {
        rec.validate()?;
        self.record_latency(rec.class, rec.latency(), rec.bytes);
        Ok(())
    }

    /// Latency only, for classes without per-packet records.
    pub fn record_latency(&mut self, class: TrafficClass, latency: f64, bytes: u32) {
        self.packets[idx(class)].add(latency);
        self.bytes[idx(class)].delivered += bytes as u64;
    }

    pub fn record_generated(&mut self, class: TrafficClass, bytes: u64) {
        self.bytes[idx(class)].generated += bytes;
    }

    /// Delivered bytes of a packet kept out of the latency statistics
    /// (warm-up).
    pub fn record_delivered_bytes(&mut self, class: TrafficClass, bytes: u64) {
        self.bytes[idx(class)].delivered += bytes;
    }

    pub fn record_dropped(&mut self, class: TrafficClass, bytes: u64) {
        self.bytes[idx(class)].dropped += bytes;
    }

    pub fn class(&self, c: TrafficClass) -> &StreamingStats {
        &self.packets[idx(c)]
    }

    pub fn class_bytes(&self, c: TrafficClass) -> ByteCounts {
        self.bytes[idx(c)]
    }

    pub fn record_frame(&mut self, f: FrameRecord) {
        if f.complete() {
            self.frame_stats.add(f.latency());
        }
        self.frames.push(f);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class: TrafficClass,
    pub latency: ClassSummary,
    pub bytes: ByteCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QoeReport {
    pub resolution: ResolutionClass,
    pub classes: Vec<ClassReport>,
    pub frames: ClassSummary,
    /// sample std of frame latency
    pub frame_jitter: Option<f64>,
    pub frames_incomplete: u64,
    pub verdict: Option<QoeVerdict>,
    /// mean XR bits/s per stream
    pub xr_datarate: f64,
    /// offered uplink bits over FTTP capacity
    pub offered_load: f64,
    pub carried_load: f64,
    pub load_definition: String,
    pub downlink: ClassSummary,
    pub desync_time: f64,
}

/// Summarise a finished run.
pub fn qoe_report(
    store: &MetricsStore,
    resolution: ResolutionClass,
    xr_streams: usize,
    duration: f64,
    capacity_bps: f64,
) -> QoeReport {
    let classes: Vec<ClassReport> = TrafficClass::ALL
        .iter()
        .map(|&c| ClassReport {
            class: c,
            latency: store.class(c).summary(),
            bytes: store.class_bytes(c),
        })
        .collect();
    let generated: u64 = classes.iter().map(|c| c.bytes.generated).sum();
    let delivered: u64 = classes.iter().map(|c| c.bytes.delivered).sum();
    let denom = duration * capacity_bps;
    let load = |b: u64| if denom > 0.0 { b as f64 * 8.0 / denom } else { 0.0 };
    let xr_gen = store.class_bytes(TrafficClass::Xr).generated;
    let xr_datarate = if xr_streams > 0 && duration > 0.0 {
        xr_gen as f64 * 8.0 / duration / xr_streams as f64
    } else {
        0.0
    };
    let frames = store.frame_stats.summary();
    let verdict = frames.mean.map(|m| qoe_classify(resolution, m, xr_datarate));
    QoeReport {
        resolution,
        classes,
        frames,
        frame_jitter: store.frame_stats.std(),
        frames_incomplete: store.frames.iter().filter(|f| !f.complete()).count() as u64,
        verdict,
        xr_datarate,
        offered_load: load(generated),
        carried_load: load(delivered),
        load_definition: "offered uplink bits / (FTTP uplink capacity x duration)".into(),
        downlink: store.downlink.summary(),
        desync_time: store.desync_time,
    }
}
