//! Synthetic head traces: random on-off angular walks at a chosen average
//! speed, plus a few constructed shapes used by tests and presets.

use alloc::vec::Vec;

use libm::{cos, sin, sqrt};
use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::engine::RngStream;
use crate::geometry::{average_speed, wrap_degrees, EulerAngles, GeometryError, HeadSample, HeadTrace};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthError {
    #[error("invalid synthetic trace parameter: {0}")]
    Invalid(&'static str),
    #[error("target speed {target} deg/s is below the noise floor {floor} deg/s")]
    BelowNoiseFloor { target: f64, floor: f64 },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub samples: usize,
    /// mean seconds between samples
    pub period: f64,
    /// gamma shape for jittered sample gaps; `None` keeps them exact
    pub jitter_shape: Option<f64>,
    /// target average angular speed, deg/s
    pub speed: f64,
    /// mean length of a moving burst, s
    pub on_mean: f64,
    /// mean pause, s
    pub off_mean: f64,
    /// per-sample sensor noise, degrees
    pub noise_std: f64,
    pub pitch_limit: f64,
    pub roll_limit: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            samples: 4000,
            period: 0.015,
            jitter_shape: None,
            speed: 90.0,
            on_mean: 0.6,
            off_mean: 0.4,
            noise_std: 0.01,
            pitch_limit: 60.0,
            roll_limit: 20.0,
            seed: 1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.samples < 2 {
            return Err(SynthError::Invalid("need at least 2 samples"));
        }
        if !(self.period > 0.0) || !(self.speed >= 0.0) {
            return Err(SynthError::Invalid("period must be positive and speed non-negative"));
        }
        if !(self.on_mean > 0.0 && self.off_mean >= 0.0 && self.noise_std >= 0.0) {
            return Err(SynthError::Invalid("on/off durations and noise"));
        }
        if !(self.pitch_limit > 0.0 && self.pitch_limit < 90.0 && self.roll_limit > 0.0 && self.roll_limit <= 180.0) {
            return Err(SynthError::Invalid("pitch limit in (0, 90), roll limit in (0, 180]"));
        }
        if matches!(self.jitter_shape, Some(k) if !(k > 0.0)) {
            return Err(SynthError::Invalid("jitter shape must be positive"));
        }
        Ok(())
    }
}

/// Unscaled motion: per-sample angular increments and noise.
struct Skeleton {
    times: Vec<f64>,
    steps: Vec<[f64; 3]>,
    noise: Vec<[f64; 3]>,
}

fn skeleton(cfg: &SynthConfig) -> Skeleton {
    let mut rng = RngStream::new(cfg.seed, "synth-trace");
    let n = cfg.samples;
    let mut times = Vec::with_capacity(n);
    let mut t = 0.0;
    let gap = cfg.jitter_shape.map(|k| Gamma::new(k, cfg.period / k).expect("validated"));
    for _ in 0..n {
        times.push(t);
        t += match &gap {
            Some(g) => g.sample(&mut rng).max(cfg.period * 1e-3),
            None => cfg.period,
        };
    }
    let on = Exp::new(1.0 / cfg.on_mean).expect("validated");
    let off = (cfg.off_mean > 0.0).then(|| Exp::new(1.0 / cfg.off_mean).expect("validated"));
    let mut steps = Vec::with_capacity(n);
    steps.push([0.0; 3]);
    let mut moving = rng.random::<bool>();
    while steps.len() < n {
        if moving {
            let len = ((on.sample(&mut rng) / cfg.period) as usize).max(4);
            // mostly yaw, some pitch, little roll
            let dir = [
                rng.random_range(-1.0..1.0),
                0.5 * rng.random_range(-1.0..1.0),
                0.15 * rng.random_range(-1.0..1.0),
            ];
            let norm = sqrt(dir.iter().map(|d| d * d).sum::<f64>()).max(1e-9);
            for k in 0..len {
                let s = sin(core::f64::consts::PI * (k as f64 + 0.5) / len as f64);
                let v = s * s;
                steps.push([v * dir[0] / norm, v * dir[1] / norm, v * dir[2] / norm]);
            }
        } else if let Some(off) = &off {
            let len = (off.sample(&mut rng) / cfg.period) as usize;
            steps.extend(core::iter::repeat_n([0.0; 3], len));
        }
        moving = !moving;
    }
    steps.truncate(n);
    let noise = if cfg.noise_std > 0.0 {
        let nd = Normal::new(0.0, cfg.noise_std).expect("validated");
        (0..n).map(|_| [nd.sample(&mut rng), nd.sample(&mut rng), nd.sample(&mut rng)]).collect()
    } else {
        alloc::vec![[0.0; 3]; n]
    };
    Skeleton { times, steps, noise }
}

fn reflect(x: f64, step: &mut f64, limit: f64) -> f64 {
    let y = x + *step;
    if y > limit || y < -limit {
        *step = -*step;
        x + *step
    } else {
        y
    }
}

fn integrate(sk: &Skeleton, cfg: &SynthConfig, scale: f64) -> Result<HeadTrace, SynthError> {
    let mut yaw = 0.0;
    let mut pitch = 0.0;
    let mut roll = 0.0;
    // sign memory per axis so reflections persist through a burst
    let mut sign = [1.0f64; 3];
    let mut out = Vec::with_capacity(sk.steps.len());
    for i in 0..sk.steps.len() {
        let dt = if i == 0 { 0.0 } else { sk.times[i] - sk.times[i - 1] };
        let st = sk.steps[i];
        if st == [0.0; 3] {
            sign = [1.0; 3];
        }
        let k = scale * dt;
        yaw += st[0] * k;
        let mut dp = sign[1] * st[1] * k;
        pitch = reflect(pitch, &mut dp, cfg.pitch_limit);
        if dp.signum() != (sign[1] * st[1] * k).signum() {
            sign[1] = -sign[1];
        }
        let mut dr = sign[2] * st[2] * k;
        roll = reflect(roll, &mut dr, cfg.roll_limit);
        if dr.signum() != (sign[2] * st[2] * k).signum() {
            sign[2] = -sign[2];
        }
        let nz = sk.noise[i];
        let e = EulerAngles::new(
            wrap_degrees(yaw + nz[0]),
            (pitch + nz[1]).clamp(-89.9, 89.9),
            wrap_degrees(roll + nz[2]),
        )?;
        out.push(HeadSample::new(sk.times[i], e)?);
    }
    Ok(HeadTrace::new(out, "synthetic")?)
}

/// On-off walk whose [`average_speed`] matches `cfg.speed` to within 0.1 %.
pub fn on_off_trace(cfg: &SynthConfig) -> Result<HeadTrace, SynthError> {
    cfg.validate()?;
    let sk = skeleton(cfg);
    let speed_at = |s: f64| -> Result<(HeadTrace, f64), SynthError> {
        let tr = integrate(&sk, cfg, s)?;
        let v = average_speed(&tr)?;
        Ok((tr, v))
    };
    let (floor_trace, floor) = speed_at(0.0)?;
    if cfg.speed <= floor {
        if cfg.speed == 0.0 && floor == 0.0 {
            return Ok(floor_trace);
        }
        return Err(SynthError::BelowNoiseFloor {
            target: cfg.speed,
            floor,
        });
    }
    let mut lo = 0.0;
    let mut hi = cfg.speed.max(1.0);
    while speed_at(hi)?.1 < cfg.speed {
        hi *= 2.0;
        if hi > 1e7 {
            return Err(SynthError::Invalid("cannot reach target speed"));
        }
    }
    let mut best = speed_at(hi)?;
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        let r = speed_at(mid)?;
        if r.1 < cfg.speed {
            lo = mid;
        } else {
            hi = mid;
        }
        let close = (r.1 - cfg.speed).abs() < (best.1 - cfg.speed).abs();
        if close {
            best = r;
        }
        if (best.1 - cfg.speed).abs() <= 1e-4 * cfg.speed {
            break;
        }
    }
    Ok(best.0)
}

/// Yaw sweep at a constant rate, wrapping through ±180.
pub fn constant_rate_trace(speed: f64, period: f64, samples: usize) -> Result<HeadTrace, SynthError> {
    if samples < 1 || !(period > 0.0) || !speed.is_finite() {
        return Err(SynthError::Invalid("constant-rate trace parameters"));
    }
    let s = (0..samples)
        .map(|i| {
            let t = i as f64 * period;
            HeadSample::new(t, EulerAngles::new(wrap_degrees(speed * t), 0.0, 0.0)?)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(HeadTrace::new(s, "constant-rate")?)
}

/// Still head that jumps by `step_deg` of yaw at sample `at`.
pub fn step_trace(step_deg: f64, at: usize, period: f64, samples: usize) -> Result<HeadTrace, SynthError> {
    if samples < 1 || !(period > 0.0) || !(step_deg.abs() <= 180.0) {
        return Err(SynthError::Invalid("step trace parameters"));
    }
    let s = (0..samples)
        .map(|i| {
            let y = if i >= at { step_deg } else { 0.0 };
            HeadSample::new(i as f64 * period, EulerAngles::new(y, 0.0, 0.0)?)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(HeadTrace::new(s, "step")?)
}

/// Small horizontal circle traced at `speed` deg/s; smooth in every
/// component, handy for predictor sanity checks.
pub fn circle_trace(speed: f64, radius_deg: f64, period: f64, samples: usize) -> Result<HeadTrace, SynthError> {
    if samples < 1 || !(period > 0.0) || !(radius_deg > 0.0 && radius_deg < 80.0) {
        return Err(SynthError::Invalid("circle trace parameters"));
    }
    let omega = speed.to_radians() / radius_deg.to_radians();
    let s = (0..samples)
        .map(|i| {
            let t = i as f64 * period;
            HeadSample::new(
                t,
                EulerAngles::new(radius_deg * cos(omega * t), radius_deg * sin(omega * t), 0.0)?,
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(HeadTrace::new(s, "circle")?)
}
