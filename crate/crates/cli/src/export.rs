//! CSV and JSON outputs of a run.
//!
//! Files in the output directory:
//! - `summary.json`: run summary (see [`Summary`])
//! - `frames.csv`, `grants.csv`, `commands.csv`
//! - `packets.csv` when the per-packet dump is on
//! - `fig5_<name>.csv`: latency per traffic class
//! - `fig7_<name>.csv`: per-frame request against head speed and horizon

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use h2mxr_core::dba::{DbaMode, GrantLogEntry};
use h2mxr_core::metrics::{ClassSummary, FrameRecord, LatencyRecord, QoeReport};
use h2mxr_core::topology::{CommandRecord, Observer, ScenarioConfig, SimOutput};
use h2mxr_core::xr::RequestPoint;
use serde::Serialize;

pub const PACKETS_HEADER: &str = "packet_id,class,source,frame_id,bytes,created_s,delivered_s,arrive_sfu_s,tx_sfu_s,arrive_mfu_s,tx_mfu_s,arrive_olt_s,wait_s,queue_s,transmit_s,propagate_s,latency_s";
pub const GRANTS_HEADER: &str = "stage,pon,cycle,onu,requested,predicted,granted,start_time";
pub const FRAMES_HEADER: &str = "pair,frame_id,created_s,size,packets,predicted,theta_deg,arrive_sfu_s,last_mfu_s,last_olt_s,latency_s,fttr_latency_s,max_packet_latency_s";
pub const COMMANDS_HEADER: &str = "pair,sample,issued_s,applied_s,lead_deg";
pub const FIG5_HEADER: &str = "scenario,axis,value,dba,resolution,load,class,count,mean_ms,std_ms,p50_ms,p95_ms,p99_ms,budget_ms";
pub const FIG7_HEADER: &str = "resolution,speed_deg_s,horizon_ms,frames,peak_bytes,mean_bytes,peak_reduction";

fn create(path: &Path) -> io::Result<BufWriter<File>> {
    Ok(BufWriter::with_capacity(1 << 16, File::create(path)?))
}

/// Streams run records to CSV files. The first write error is kept and
/// later writes are skipped.
pub struct CsvObserver {
    packets: Option<BufWriter<File>>,
    grants: BufWriter<File>,
    frames: BufWriter<File>,
    commands: BufWriter<File>,
    error: Option<io::Error>,
}

impl CsvObserver {
    pub fn create(dir: &Path, packets: bool) -> io::Result<Self> {
        let mut o = Self {
            packets: if packets { Some(create(&dir.join("packets.csv"))?) } else { None },
            grants: create(&dir.join("grants.csv"))?,
            frames: create(&dir.join("frames.csv"))?,
            commands: create(&dir.join("commands.csv"))?,
            error: None,
        };
        if let Some(p) = o.packets.as_mut() {
            writeln!(p, "{PACKETS_HEADER}")?;
        }
        writeln!(o.grants, "{GRANTS_HEADER}")?;
        writeln!(o.frames, "{FRAMES_HEADER}")?;
        writeln!(o.commands, "{COMMANDS_HEADER}")?;
        Ok(o)
    }

    fn keep(&mut self, r: io::Result<()>) {
        if let (Err(e), None) = (r, &self.error) {
            self.error = Some(e);
        }
    }

    pub fn finish(mut self) -> io::Result<()> {
        if let Some(e) = self.error.take() {
            return Err(e);
        }
        if let Some(p) = self.packets.as_mut() {
            p.flush()?;
        }
        self.grants.flush()?;
        self.frames.flush()?;
        self.commands.flush()
    }
}

impl Observer for CsvObserver {
    fn on_packet(&mut self, r: &LatencyRecord) {
        if self.error.is_some() {
            return;
        }
        let Some(w) = self.packets.as_mut() else { return };
        let h = &r.hops;
        let b = &r.breakdown;
        let res = writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.packet_id,
            r.class.name(),
            r.source,
            r.frame_id,
            r.bytes,
            r.created,
            r.delivered,
            h.arrive_sfu,
            h.tx_sfu,
            h.arrive_mfu,
            h.tx_mfu,
            h.arrive_olt,
            b.wait,
            b.queue,
            b.transmit,
            b.propagate,
            r.latency()
        );
        self.keep(res);
    }

    fn on_grant(&mut self, g: &GrantLogEntry) {
        if self.error.is_some() {
            return;
        }
        let res = writeln!(
            self.grants,
            "{},{},{},{},{},{},{},{}",
            g.stage, g.pon, g.cycle, g.onu, g.requested, g.predicted, g.granted, g.start_time
        );
        self.keep(res);
    }

    fn on_frame(&mut self, f: &FrameRecord) {
        if self.error.is_some() {
            return;
        }
        let res = writeln!(
            self.frames,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            f.pair,
            f.frame_id,
            f.created,
            f.size,
            f.packets,
            f.predicted,
            f.theta,
            f.arrive_sfu,
            f.last_mfu,
            f.last_olt,
            f.latency(),
            f.fttr_latency(),
            f.max_packet_latency
        );
        self.keep(res);
    }

    fn on_command(&mut self, c: &CommandRecord) {
        if self.error.is_some() {
            return;
        }
        let res = writeln!(self.commands, "{},{},{},{},{}", c.pair, c.sample, c.issued, c.applied, c.lead_deg);
        self.keep(res);
    }
}

/// What `summary.json` holds.
#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub scenario: String,
    pub seed: u64,
    pub dba: DbaMode,
    pub load: f64,
    pub duration_s: f64,
    pub warmup_s: f64,
    pub predictor: String,
    pub k: Option<f64>,
    pub qoe_satisfied: Option<bool>,
    pub report: QoeReport,
    pub bw_max_fttr_bytes: f64,
    pub bw_max_fttp_bytes: f64,
    pub fttr_overload_cycles: u64,
    pub fttp_overload_cycles: u64,
    pub predictor_fallbacks: u64,
    pub trace_looped: bool,
    pub dropped_packets: u64,
    pub queued_bytes: u64,
    pub invalid_records: u64,
    pub background_bps_per_sfu: f64,
    pub events: u64,
}

impl Summary {
    pub fn new(cfg: &ScenarioConfig, predictor: &str, out: &SimOutput) -> Self {
        Self {
            scenario: cfg.name.clone(),
            seed: cfg.seed,
            dba: cfg.dba,
            load: cfg.load,
            duration_s: cfg.duration,
            warmup_s: cfg.warmup,
            predictor: predictor.into(),
            k: out.k,
            qoe_satisfied: out.report.verdict.map(|v| v.satisfied()),
            report: out.report.clone(),
            bw_max_fttr_bytes: out.bw_max_fttr,
            bw_max_fttp_bytes: out.bw_max_fttp,
            fttr_overload_cycles: out.fttr_overload_cycles,
            fttp_overload_cycles: out.fttp_overload_cycles,
            predictor_fallbacks: out.predictor_fallbacks,
            trace_looped: out.trace_looped,
            dropped_packets: out.dropped_packets,
            queued_bytes: out.queued_bytes,
            invalid_records: out.invalid_records,
            background_bps_per_sfu: out.background_bps_per_sfu,
            events: out.events,
        }
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> io::Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(io::Error::other)?;
    writeln!(w)?;
    w.flush()
}

fn ms(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{}", x * 1e3))
}

fn fig5_row(w: &mut impl Write, s: &Summary, axis: &str, value: &str, class: &str, c: &ClassSummary, budget: Option<f64>) -> io::Result<()> {
    writeln!(
        w,
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        s.scenario,
        axis,
        value,
        s.dba.name(),
        s.report.resolution.label(),
        s.load,
        class,
        c.count,
        ms(c.mean),
        ms(c.std),
        ms(c.p50),
        ms(c.p95),
        ms(c.p99),
        ms(budget)
    )
}

/// Latency rows of one run: one per traffic class plus whole XR frames.
pub fn write_fig5_rows(w: &mut impl Write, s: &Summary, axis: &str, value: &str) -> io::Result<()> {
    for c in &s.report.classes {
        fig5_row(w, s, axis, value, c.class.name(), &c.latency, None)?;
    }
    let budget = s.report.resolution.latency_budget();
    fig5_row(w, s, axis, value, "xr_frame", &s.report.frames, Some(budget))
}

pub fn write_fig5(path: &Path, rows: &[(String, String, Summary)]) -> io::Result<()> {
    let mut w = create(path)?;
    writeln!(w, "{FIG5_HEADER}")?;
    for (axis, value, s) in rows {
        write_fig5_rows(&mut w, s, axis, value)?;
    }
    w.flush()
}

pub fn write_fig7(path: &Path, label: &str, points: &[RequestPoint]) -> io::Result<()> {
    let mut w = create(path)?;
    writeln!(w, "{FIG7_HEADER}")?;
    let mut base: Option<(f64, f64)> = None;
    for p in points {
        // reduction relative to the shortest horizon at the same speed
        let b = match base {
            Some((speed, peak)) if speed == p.speed => peak,
            _ => {
                base = Some((p.speed, p.peak));
                p.peak
            }
        };
        let red = if b > 0.0 { 1.0 - p.peak / b } else { 0.0 };
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            label,
            p.speed,
            p.horizon * 1e3,
            p.frames,
            p.peak,
            p.mean,
            red
        )?;
    }
    w.flush()
}

/// File-name-safe form of a scenario name.
pub fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

pub fn fig5_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("fig5_{}.csv", file_stem(name)))
}

pub fn fig7_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("fig7_{}.csv", file_stem(name)))
}
