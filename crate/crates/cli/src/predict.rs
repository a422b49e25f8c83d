//! Predictor evaluation over a speed × horizon grid, and model training.

use std::fmt::Write as _;

use h2mxr_core::geometry::{classify_speed_bin, Component, GeometryError, HeadTrace};
use h2mxr_core::prediction::{
    fit_arima, nrmse, rolling_forecast, train_bilstm, ArimaOrder, BiLstmConfig, FitOptions, PredictionError, Predictor,
    TrainReport,
};
use h2mxr_core::synth::{on_off_trace, SynthConfig, SynthError};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum PredictError {
    #[error("{0}")]
    Prediction(#[from] PredictionError),
    #[error("{0}")]
    Geometry(#[from] GeometryError),
    #[error("{0}")]
    Synth(#[from] SynthError),
    #[error("trace too short: {what} needs {needed} samples, has {got}")]
    TooShort { what: String, needed: usize, got: usize },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Method {
    Persistence,
    MovingAverage,
    Arima,
    Bilstm,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Persistence, Method::MovingAverage, Method::Arima, Method::Bilstm];

    pub fn name(self) -> &'static str {
        match self {
            Method::Persistence => "persistence",
            Method::MovingAverage => "moving_average",
            Method::Arima => "arima",
            Method::Bilstm => "bilstm",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictConfig {
    pub methods: Vec<Method>,
    /// samples ahead
    pub horizons: Vec<usize>,
    /// speed bins, deg/s
    pub speeds: Vec<f64>,
    /// sample spacing, s
    pub period: f64,
    /// samples per synthetic trace
    pub samples: usize,
    /// synthetic training traces per speed
    pub train_traces: usize,
    pub seed: u64,
    pub bilstm: BiLstmConfig,
    /// one BiLSTM per horizon and component over all speeds, instead of one
    /// per speed as well
    pub bilstm_pooled: bool,
    pub arima: ArimaOrder,
    /// ARIMA is fitted on this many leading samples of each test trace
    /// (at most half of it); scoring starts after them for every method
    pub arima_fit_samples: usize,
    pub ma_window: f64,
    /// trailing samples handed to each forecast
    pub max_history: usize,
    /// samples per segment when binning file traces by speed
    pub segment: usize,
}

impl Default for PredictConfig {
    fn default() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            horizons: (1..=6).collect(),
            speeds: vec![30.0, 60.0, 90.0, 120.0, 150.0, 180.0],
            period: 0.015,
            samples: 4000,
            train_traces: 3,
            seed: 1,
            bilstm: BiLstmConfig::desk(),
            bilstm_pooled: true,
            arima: ArimaOrder::new(6, 1, 2),
            // five minutes at the nominal rate
            arima_fit_samples: 20_000,
            ma_window: 0.045,
            max_history: 64,
            segment: 2000,
        }
    }
}

/// Training and test traces of one speed bin.
#[derive(Debug, Clone)]
pub struct SpeedSet {
    pub speed: f64,
    pub train: Vec<HeadTrace>,
    pub test: Vec<HeadTrace>,
}

/// On-off traces at each speed; test traces use seeds disjoint from training.
pub fn synthetic_sets(cfg: &PredictConfig) -> Result<Vec<SpeedSet>, PredictError> {
    cfg.speeds
        .iter()
        .enumerate()
        .map(|(i, &speed)| {
            let make = |seed: u64| {
                on_off_trace(&SynthConfig {
                    samples: cfg.samples,
                    period: cfg.period,
                    speed,
                    seed,
                    ..SynthConfig::default()
                })
            };
            let base = cfg.seed.wrapping_mul(1000).wrapping_add(100 * i as u64);
            let train = (0..cfg.train_traces as u64).map(|k| make(base + 1 + k)).collect::<Result<_, _>>()?;
            let test = vec![make(base)?];
            Ok(SpeedSet { speed, train, test })
        })
        .collect()
}

/// Cut traces into segments, bin them by average speed, and keep the last
/// fifth of each bin (at least one segment) for testing. Bins with fewer
/// than two segments are dropped.
pub fn file_sets(traces: &[HeadTrace], cfg: &PredictConfig) -> Result<Vec<SpeedSet>, PredictError> {
    let mut bins: Vec<(f64, Vec<HeadTrace>)> = cfg.speeds.iter().map(|&s| (s, Vec::new())).collect();
    for tr in traces {
        let mut start = 0;
        while start + cfg.segment <= tr.len() {
            let seg = tr.slice(start, start + cfg.segment)?;
            let b = classify_speed_bin(&seg, &cfg.speeds)?;
            bins.iter_mut().find(|(s, _)| *s == b).expect("bin from list").1.push(seg);
            start += cfg.segment;
        }
    }
    Ok(bins
        .into_iter()
        .filter(|(_, v)| v.len() >= 2)
        .map(|(speed, mut v)| {
            let n_test = (v.len() / 5).max(1);
            let test = v.split_off(v.len() - n_test);
            SpeedSet { speed, train: v, test }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictRow {
    pub method: Method,
    pub speed: f64,
    pub horizon: usize,
    pub component: Component,
    pub nrmse: f64,
}

fn series(traces: &[HeadTrace], c: Component) -> Vec<Vec<f64>> {
    traces.iter().map(|t| t.component_series(c)).collect()
}

fn train_one(train: &[HeadTrace], c: Component, h: usize, cfg: &BiLstmConfig) -> Result<(Predictor, TrainReport), PredictError> {
    let s = series(train, c);
    let refs: Vec<&[f64]> = s.iter().map(|v| v.as_slice()).collect();
    let (m, r) = train_bilstm(&refs, cfg, h)?;
    Ok((Predictor::BiLstm(m), r))
}

type Key = (usize, Component, usize);

/// NRMSE of every method, speed, horizon and component.
pub fn evaluate(sets: &[SpeedSet], cfg: &PredictConfig) -> Result<Vec<PredictRow>, PredictError> {
    if sets.is_empty() {
        return Err(PredictError::Invalid("no speed bin has enough data".into()));
    }
    if cfg.horizons.iter().any(|&h| h == 0) {
        return Err(PredictError::Invalid("horizons are counted in samples and start at 1".into()));
    }
    let hmax = cfg.horizons.iter().copied().max().unwrap_or(1);
    let fit_len = |t: &HeadTrace| cfg.arima_fit_samples.min(t.len() / 2);
    for s in sets {
        for t in &s.test {
            let need = 2 * (hmax + cfg.max_history.max(cfg.bilstm.window) + 1);
            if t.len() < need {
                return Err(PredictError::TooShort {
                    what: format!("test trace at {} deg/s", s.speed),
                    needed: need,
                    got: t.len(),
                });
            }
        }
    }
    // BiLSTM networks, trained in parallel
    let mut bilstm: Vec<(Key, Predictor)> = Vec::new();
    if cfg.methods.contains(&Method::Bilstm) {
        let mut jobs: Vec<Key> = Vec::new();
        let set_ids: Vec<usize> = if cfg.bilstm_pooled { vec![usize::MAX] } else { (0..sets.len()).collect() };
        for &si in &set_ids {
            for c in Component::ALL {
                for &h in &cfg.horizons {
                    jobs.push((si, c, h));
                }
            }
        }
        let pooled: Vec<HeadTrace> = sets.iter().flat_map(|s| s.train.iter().cloned()).collect();
        bilstm = jobs
            .par_iter()
            .map(|&(si, c, h)| {
                let train = if si == usize::MAX { &pooled } else { &sets[si].train };
                train_one(train, c, h, &cfg.bilstm).map(|(p, _)| ((si, c, h), p))
            })
            .collect::<Result<_, _>>()?;
    }
    let mut jobs = Vec::new();
    for (si, s) in sets.iter().enumerate() {
        for c in Component::ALL {
            jobs.push((si, s, c));
        }
    }
    let rows: Vec<Vec<PredictRow>> = jobs
        .par_iter()
        .map(|&(si, s, c)| {
            let mut out = Vec::new();
            let tests = series(&s.test, c);
            let arimas: Vec<Option<Predictor>> = if cfg.methods.contains(&Method::Arima) {
                tests
                    .iter()
                    .zip(&s.test)
                    .map(|(x, t)| {
                        fit_arima(&x[..fit_len(t)], cfg.arima, FitOptions::default())
                            .map(|m| Some(Predictor::Arima(m)))
                    })
                    .collect::<Result<_, _>>()?
            } else {
                vec![None; tests.len()]
            };
            for &h in &cfg.horizons {
                for &m in &cfg.methods {
                    let mut pred = Vec::new();
                    let mut act = Vec::new();
                    for (ti, x) in tests.iter().enumerate() {
                        let start = fit_len(&s.test[ti]);
                        let own;
                        let p: &Predictor = match m {
                            Method::Persistence => {
                                own = Predictor::Persistence;
                                &own
                            }
                            Method::MovingAverage => {
                                own = Predictor::MovingAverage { window_s: cfg.ma_window };
                                &own
                            }
                            Method::Arima => arimas[ti].as_ref().expect("fitted"),
                            Method::Bilstm => {
                                let key = (if cfg.bilstm_pooled { usize::MAX } else { si }, c, h);
                                &bilstm.iter().find(|(k, _)| *k == key).expect("trained").1
                            }
                        };
                        let (a, b) = rolling_forecast(p, x, h, cfg.period, start, cfg.max_history)?;
                        pred.extend(a);
                        act.extend(b);
                    }
                    out.push(PredictRow {
                        method: m,
                        speed: s.speed,
                        horizon: h,
                        component: c,
                        nrmse: nrmse(&pred, &act, c)?,
                    });
                }
            }
            Ok(out)
        })
        .collect::<Result<_, PredictError>>()?;
    let mut rows: Vec<PredictRow> = rows.into_iter().flatten().collect();
    rows.sort_by(|a, b| {
        (a.method, a.component as u8, a.horizon)
            .cmp(&(b.method, b.component as u8, b.horizon))
            .then(a.speed.total_cmp(&b.speed))
    });
    Ok(rows)
}

pub const PREDICT_HEADER: &str = "method,component,speed_deg_s,horizon_samples,nrmse";

pub fn rows_csv(rows: &[PredictRow]) -> String {
    let mut s = format!("{PREDICT_HEADER}\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{}", r.method.name(), r.component.name(), r.speed, r.horizon, r.nrmse);
    }
    s
}

/// Speeds down, horizons across, for one method and component.
pub fn grid(rows: &[PredictRow], method: Method, component: Component) -> (Vec<f64>, Vec<usize>, Vec<Vec<f64>>) {
    let sel: Vec<&PredictRow> = rows.iter().filter(|r| r.method == method && r.component == component).collect();
    let mut speeds: Vec<f64> = sel.iter().map(|r| r.speed).collect();
    speeds.sort_by(f64::total_cmp);
    speeds.dedup();
    let mut hs: Vec<usize> = sel.iter().map(|r| r.horizon).collect();
    hs.sort();
    hs.dedup();
    let table = speeds
        .iter()
        .map(|s| {
            hs.iter()
                .map(|h| {
                    sel.iter()
                        .find(|r| r.speed == *s && r.horizon == *h)
                        .map_or(f64::NAN, |r| r.nrmse)
                })
                .collect()
        })
        .collect();
    (speeds, hs, table)
}

pub fn render_grid(rows: &[PredictRow], method: Method, component: Component) -> String {
    let (speeds, hs, t) = grid(rows, method, component);
    let mut s = format!("{} {} NRMSE\n{:>8}", method.name(), component.name(), "deg/s");
    for h in &hs {
        let _ = write!(s, " {:>8}", format!("h={h}"));
    }
    s.push('\n');
    for (sp, row) in speeds.iter().zip(&t) {
        let _ = write!(s, "{sp:>8}");
        for v in row {
            let _ = write!(s, " {v:>8.5}");
        }
        s.push('\n');
    }
    s
}

/// A trained predictor per component, as saved by `train`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub method: Method,
    pub horizon_samples: usize,
    pub sample_period: f64,
    /// yaw, pitch, roll
    pub predictors: [Predictor; 3],
    pub reports: Vec<TrainReport>,
}

/// Train one model per component on `traces`.
pub fn train_models(
    method: Method,
    traces: &[HeadTrace],
    horizon: usize,
    period: f64,
    bilstm: &BiLstmConfig,
    arima: ArimaOrder,
    arima_fit_samples: usize,
) -> Result<ModelFile, PredictError> {
    if traces.is_empty() {
        return Err(PredictError::Invalid("no training traces".into()));
    }
    let per: Vec<(Predictor, TrainReport)> = Component::ALL
        .par_iter()
        .map(|&c| match method {
            Method::Persistence => Ok((Predictor::Persistence, TrainReport::default())),
            Method::MovingAverage => Ok((Predictor::MovingAverage { window_s: 0.045 }, TrainReport::default())),
            Method::Arima => {
                let x = traces[0].component_series(c);
                let n = arima_fit_samples.min(x.len());
                Ok((Predictor::Arima(fit_arima(&x[..n], arima, FitOptions::default())?), TrainReport::default()))
            }
            Method::Bilstm => train_one(traces, c, horizon, bilstm),
        })
        .collect::<Result<_, PredictError>>()?;
    let mut it = per.into_iter();
    let (a, ra) = it.next().expect("three");
    let (b, rb) = it.next().expect("three");
    let (c, rc) = it.next().expect("three");
    Ok(ModelFile {
        method,
        horizon_samples: horizon,
        sample_period: period,
        predictors: [a, b, c],
        reports: vec![ra, rb, rc],
    })
}
