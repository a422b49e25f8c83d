//! Head-trace CSV: `timestamp_ms,yaw_deg,pitch_deg,roll_deg`.
//!
//! Timestamps are written by moving the decimal point of the shortest
//! representation of the seconds value, and read back by scaling the decimal
//! text, so export then import returns the same bits.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use h2mxr_core::{EulerAngles, HeadSample, HeadTrace};

pub const HEADER: [&str; 4] = ["timestamp_ms", "yaw_deg", "pitch_deg", "roll_deg"];

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: {msg}")]
    Malformed { line: u64, msg: String },
    #[error("line {line}: header must be {expected}, found {found}")]
    Header { line: u64, expected: String, found: String },
    #[error("line {line}: {msg}")]
    Range { line: u64, msg: String },
    #[error("line {line}: timestamp {got} ms does not increase (previous {prev} ms)")]
    NonMonotone { line: u64, prev: f64, got: f64 },
    #[error("trace has no samples")]
    Empty,
}

fn ms_to_seconds(text: &str) -> Option<f64> {
    let t = text.trim();
    let (mant, exp) = match t.find(['e', 'E']) {
        Some(i) => (&t[..i], t[i + 1..].parse::<i32>().ok()?),
        None => (t, 0),
    };
    if mant.is_empty() || mant.contains(['e', 'E']) {
        return None;
    }
    let v: f64 = format!("{mant}e{}", exp - 3).parse().ok()?;
    v.is_finite().then_some(v)
}

/// Decimal text of `seconds * 1000`, exact in decimal.
fn seconds_to_ms(seconds: f64) -> String {
    let s = format!("{seconds}");
    let (sign, digits) = match s.strip_prefix('-') {
        Some(d) => ("-", d),
        None => ("", s.as_str()),
    };
    let (int, frac) = digits.split_once('.').unwrap_or((digits, ""));
    let mut frac = frac.to_string();
    while frac.len() < 3 {
        frac.push('0');
    }
    let mut int = format!("{int}{}", &frac[..3]);
    let rest = frac[3..].trim_end_matches('0');
    let trimmed = int.trim_start_matches('0');
    int = if trimmed.is_empty() { "0".into() } else { trimmed.into() };
    if rest.is_empty() {
        format!("{sign}{int}")
    } else {
        format!("{sign}{int}.{rest}")
    }
}

/// Parse a trace from CSV text. `name` labels the trace.
pub fn read_trace(reader: impl Read, name: &str) -> Result<HeadTrace, TraceError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let mut samples = Vec::new();
    let mut prev_ms: Option<f64> = None;
    let mut header_seen = false;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| TraceError::Malformed {
            line: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        if !header_seen {
            header_seen = true;
            let found: Vec<&str> = rec.iter().collect();
            if found != HEADER {
                return Err(TraceError::Header {
                    line,
                    expected: HEADER.join(","),
                    found: found.join(","),
                });
            }
            continue;
        }
        if rec.len() != 4 {
            return Err(TraceError::Malformed {
                line,
                msg: format!("expected 4 fields, found {}", rec.len()),
            });
        }
        let bad = |field: &str, v: &str| TraceError::Malformed {
            line,
            msg: format!("{field}: cannot parse {v:?} as a number"),
        };
        let t = ms_to_seconds(&rec[0]).ok_or_else(|| bad(HEADER[0], &rec[0]))?;
        let mut ang = [0.0; 3];
        for i in 0..3 {
            ang[i] = rec[i + 1]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| bad(HEADER[i + 1], &rec[i + 1]))?;
        }
        let ms = t * 1e3;
        if let Some(p) = prev_ms {
            if !(ms > p) {
                return Err(TraceError::NonMonotone { line, prev: p, got: ms });
            }
        }
        prev_ms = Some(ms);
        let e = EulerAngles::new(ang[0], ang[1], ang[2]).map_err(|e| TraceError::Range {
            line,
            msg: e.to_string(),
        })?;
        samples.push(HeadSample::new(t, e).map_err(|e| TraceError::Range {
            line,
            msg: e.to_string(),
        })?);
    }
    if samples.is_empty() {
        return Err(TraceError::Empty);
    }
    HeadTrace::new(samples, name).map_err(|e| TraceError::Malformed { line: 0, msg: e.to_string() })
}

pub fn load_head_trace(path: &Path) -> Result<HeadTrace, TraceError> {
    let f = File::open(path).map_err(|source| TraceError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_trace(f, &path.display().to_string())
}

pub fn write_trace(w: impl Write, trace: &HeadTrace) -> std::io::Result<()> {
    let mut w = BufWriter::new(w);
    writeln!(w, "{}", HEADER.join(","))?;
    for s in trace.samples() {
        writeln!(
            w,
            "{},{},{},{}",
            seconds_to_ms(s.timestamp),
            s.euler.yaw,
            s.euler.pitch,
            s.euler.roll
        )?;
    }
    w.flush()
}

pub fn save_head_trace(path: &Path, trace: &HeadTrace) -> Result<(), TraceError> {
    let io = |source| TraceError::Io {
        path: path.display().to_string(),
        source,
    };
    write_trace(File::create(path).map_err(io)?, trace).map_err(io)
}
