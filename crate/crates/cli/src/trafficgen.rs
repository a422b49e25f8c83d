//! Standalone draws from the traffic sources, and their moments.

use std::io::{self, Write};

use h2mxr_core::traffic::{BackgroundSource, GaussianGap, HmdSource, TrafficError, XrSizeMode, XrSource};
use h2mxr_core::{RngStream, KB};
use serde::Serialize;

#[derive(Debug, Clone, Default)]
pub struct Draws {
    /// seconds
    pub xr_gaps: Vec<f64>,
    /// bytes
    pub xr_sizes: Vec<f64>,
    pub hmd_gaps: Vec<f64>,
    pub bkg_gaps: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Moments {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
}

impl Moments {
    pub fn of(x: &[f64]) -> Self {
        let n = x.len();
        if n == 0 {
            return Self { count: 0, mean: f64::NAN, std: f64::NAN };
        }
        let mean = x.iter().sum::<f64>() / n as f64;
        let var = if n > 1 { x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
        Self { count: n, mean, std: var.sqrt() }
    }
}

/// Moments in display units: ms for gaps, KB for sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrafficStats {
    pub xr_gap_ms: Moments,
    pub xr_size_kb: Moments,
    pub hmd_gap_ms: Moments,
    pub bkg_gap_ms: Moments,
}

fn scaled(x: &[f64], k: f64) -> Moments {
    let m = Moments::of(x);
    Moments { mean: m.mean * k, std: m.std * k, ..m }
}

impl Draws {
    pub fn stats(&self) -> TrafficStats {
        TrafficStats {
            xr_gap_ms: scaled(&self.xr_gaps, 1e3),
            xr_size_kb: scaled(&self.xr_sizes, 1.0 / KB),
            hmd_gap_ms: scaled(&self.hmd_gaps, 1e3),
            bkg_gap_ms: scaled(&self.bkg_gaps, 1e3),
        }
    }

    /// Long format: `class,index,gap_s,bytes`.
    pub fn write_csv(&self, w: impl Write) -> io::Result<()> {
        let mut w = io::BufWriter::new(w);
        writeln!(w, "class,index,gap_s,bytes")?;
        for (i, (g, s)) in self.xr_gaps.iter().zip(&self.xr_sizes).enumerate() {
            writeln!(w, "xr,{i},{g},{s}")?;
        }
        for (i, g) in self.hmd_gaps.iter().enumerate() {
            writeln!(w, "hmd,{i},{g},")?;
        }
        for (i, g) in self.bkg_gaps.iter().enumerate() {
            writeln!(w, "bkg,{i},{g},")?;
        }
        w.flush()
    }
}

/// `n` draws of each source with the default XR and HMD parameters.
/// `bkg` of `None` skips background.
pub fn draw(n: usize, seed: u64, hmd: &HmdSource, bkg: Option<&BackgroundSource>) -> Result<Draws, TrafficError> {
    hmd.validate()?;
    let mut xr = XrSource::new(GaussianGap::xr_default(), XrSizeMode::empirical_default())?;
    let mut rx = RngStream::new(seed, "trafficgen/xr");
    let mut rh = RngStream::new(seed, "trafficgen/hmd");
    let mut rb = RngStream::new(seed, "trafficgen/bkg");
    let mut d = Draws::default();
    let mut t = 0.0;
    for _ in 0..n {
        let (f, gap) = xr.next_xr_frame(&mut rx, t, None);
        d.xr_gaps.push(gap);
        d.xr_sizes.push(f.size as f64);
        t += gap;
        d.hmd_gaps.push(hmd.sample_gap(&mut rh));
        if let Some(b) = bkg {
            d.bkg_gaps.push(b.sample_gap(&mut rb));
        }
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use h2mxr_core::traffic::GapLaw;

    #[test]
    fn moments_match_parameters() {
        let b = BackgroundSource::with_rate(GapLaw::Exponential, 1500, 1e9).unwrap();
        let s = draw(20_000, 3, &HmdSource::default(), Some(&b)).unwrap().stats();
        assert!((s.xr_gap_ms.mean / 33.13 - 1.0).abs() < 0.02);
        assert!((s.xr_size_kb.mean / 29.74 - 1.0).abs() < 0.05);
        assert!((s.hmd_gap_ms.mean / 14.153 - 1.0).abs() < 0.02);
        assert!((s.bkg_gap_ms.mean / 0.012 - 1.0).abs() < 0.05);
    }

    #[test]
    fn csv_rows() {
        let d = draw(5, 1, &HmdSource::default(), None).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 11);
        assert!(text.lines().nth(1).unwrap().starts_with("xr,0,"));
    }
}
