//! Scenario runs and parameter sweeps, with their output files.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use h2mxr_core::prediction::{ArimaOrder, BiLstmConfig, NOMINAL_SAMPLE_PERIOD};
use h2mxr_core::synth::{on_off_trace, SynthConfig};
use h2mxr_core::topology::{simulate, ConfigError, PredictorKind, PredictorSetup, ScenarioConfig, TraceSpec};
use h2mxr_core::xr::{direct_sync_k, request_curve, RequestPoint};
use h2mxr_core::HeadTrace;
use rayon::prelude::*;

use crate::export::{self, CsvObserver, Summary};
use crate::predict::{self, Method, ModelFile, PredictError};
use crate::scenario::ScenarioError;
use crate::trace_io::{self, TraceError};

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const CONFIG: i32 = 2;
    pub const RUNTIME: i32 = 3;
    pub const QOE: i32 = 4;
}

/// Caps the sweep's worker pool.
pub const MAX_WORKERS_ENV: &str = "H2MXR_MAX_WORKERS";

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("{0}")]
    Scenario(#[from] ScenarioError),
    #[error("{0}")]
    Trace(#[from] TraceError),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Predict(#[from] PredictError),
    #[error("{context}: {source}")]
    Io { context: String, source: io::Error },
    #[error("QoE not met: {0}")]
    Qoe(String),
    #[error("{failed} of {total} sweep points failed; first: {first}")]
    Sweep { failed: usize, total: usize, first: Box<RunError> },
}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Scenario(ScenarioError::Invalid(e))
    }
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Scenario(_) | RunError::Trace(_) | RunError::Usage(_) => exit::CONFIG,
            RunError::Predict(_) | RunError::Io { .. } => exit::RUNTIME,
            RunError::Qoe(_) => exit::QOE,
            RunError::Sweep { .. } => exit::RUNTIME,
        }
    }
}

pub fn io_err(context: impl Into<String>) -> impl FnOnce(io::Error) -> RunError {
    let context = context.into();
    move |source| RunError::Io { context, source }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// write `packets.csv`
    pub packets: bool,
    /// trained predictors; otherwise ARIMA and BiLSTM are trained on the fly
    pub model: Option<ModelFile>,
    /// directory relative trace paths are resolved against
    pub base_dir: Option<PathBuf>,
}

/// Head traces for the scenario's pairs.
pub fn scenario_traces(cfg: &ScenarioConfig, base: Option<&Path>) -> Result<Vec<HeadTrace>, RunError> {
    if let Some(t) = cfg.synthetic_traces()? {
        return Ok(t);
    }
    let TraceSpec::Files { paths } = &cfg.trace else { unreachable!("synthetic kinds handled above") };
    if paths.is_empty() {
        return Err(RunError::Usage("trace.paths is empty".into()));
    }
    paths
        .iter()
        .map(|p| {
            let p = Path::new(p);
            let full = match base {
                Some(b) if p.is_relative() => b.join(p),
                _ => p.to_path_buf(),
            };
            trace_io::load_head_trace(&full).map_err(RunError::from)
        })
        .collect()
}

/// Predictor for the run, and its label.
pub fn predictor_setup(
    cfg: &ScenarioConfig,
    traces: &[HeadTrace],
    model: Option<&ModelFile>,
) -> Result<(PredictorSetup, String), RunError> {
    if let Some(m) = model {
        if m.horizon_samples != cfg.horizon_samples() {
            return Err(RunError::Usage(format!(
                "model predicts {} samples ahead, scenario horizon is {} samples",
                m.horizon_samples,
                cfg.horizon_samples()
            )));
        }
        return Ok((PredictorSetup::Model(Box::new(m.predictors.clone())), format!("{} (model file)", m.method.name())));
    }
    if let Some(p) = PredictorSetup::builtin(cfg.predictor) {
        let name = match cfg.predictor {
            PredictorKind::Oracle => "oracle",
            PredictorKind::Persistence => "persistence",
            _ => "moving_average",
        };
        return Ok((p, name.into()));
    }
    let period = cfg.hmd.mean_gap();
    let m = match cfg.predictor {
        PredictorKind::Arima => {
            // fitted on the start of the first pair's trace
            let n = (300.0 / period) as usize;
            predict::train_models(
                Method::Arima,
                &traces[..1],
                cfg.horizon_samples(),
                period,
                &BiLstmConfig::desk(),
                ArimaOrder::new(6, 1, 2),
                n.min(traces[0].len() / 2),
            )?
        }
        _ => {
            // separate synthetic traces, never the ones being replayed
            let base = match &cfg.trace {
                TraceSpec::Synthetic(s) => s.clone(),
                _ => SynthConfig { period, ..SynthConfig::default() },
            };
            let train = (0..3u64)
                .map(|i| {
                    on_off_trace(&SynthConfig {
                        seed: base.seed.wrapping_add(10_000 + i),
                        ..base.clone()
                    })
                })
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| RunError::Predict(e.into()))?;
            predict::train_models(
                Method::Bilstm,
                &train,
                cfg.horizon_samples(),
                period,
                &BiLstmConfig::desk(),
                ArimaOrder::new(6, 1, 2),
                0,
            )?
        }
    };
    let label = format!("{} (trained)", m.method.name());
    Ok((PredictorSetup::Model(Box::new(m.predictors)), label))
}

pub const FIG7_SPEEDS: [f64; 3] = [60.0, 120.0, 180.0];
pub const FIG7_HORIZONS: [f64; 4] = [0.015, 0.03, 0.06, 0.09];

/// Per-frame request grid for the scenario's resolution.
pub fn fig7_points(cfg: &ScenarioConfig, speeds: &[f64], horizons: &[f64]) -> Result<Vec<RequestPoint>, RunError> {
    let p = NOMINAL_SAMPLE_PERIOD;
    let k = direct_sync_k(cfg.resolution, cfg.frame_rate, cfg.fov, 90.0, p).map_err(ConfigError::from)?;
    let spec = cfg.resolution.frame_spec(cfg.frame_rate, cfg.fov, k).map_err(ConfigError::from)?;
    Ok(request_curve(&spec, speeds, horizons, p).map_err(ConfigError::from)?)
}

/// Run one scenario, writing every output file into `out`.
pub fn run_scenario(cfg: &ScenarioConfig, out: &Path, opts: &RunOptions) -> Result<Summary, RunError> {
    cfg.validate()?;
    let traces = scenario_traces(cfg, opts.base_dir.as_deref())?;
    let (setup, pname) = predictor_setup(cfg, &traces, opts.model.as_ref())?;
    fs::create_dir_all(out).map_err(io_err(out.display().to_string()))?;
    let mut obs = CsvObserver::create(out, opts.packets).map_err(io_err(out.display().to_string()))?;
    let res = simulate(cfg.clone(), traces, setup, &mut obs)?;
    obs.finish().map_err(io_err("writing run records"))?;
    let summary = Summary::new(cfg, &pname, &res);
    export::write_json(&out.join("summary.json"), &summary).map_err(io_err("summary.json"))?;
    let f5 = export::fig5_path(out, &cfg.name);
    export::write_fig5(&f5, &[("none".into(), String::new(), summary.clone())]).map_err(io_err(f5.display().to_string()))?;
    let pts = fig7_points(cfg, &FIG7_SPEEDS, &FIG7_HORIZONS)?;
    let f7 = export::fig7_path(out, &cfg.name);
    export::write_fig7(&f7, cfg.resolution.label(), &pts).map_err(io_err(f7.display().to_string()))?;
    Ok(summary)
}

/// Fail with the QoE exit code when the run missed its tier.
pub fn assert_qoe(s: &Summary) -> Result<(), RunError> {
    match s.report.verdict {
        Some(v) if !v.satisfied() => Err(RunError::Qoe(format!(
            "{} mean frame latency {:.3} ms (budget {} ms, latency_ok {}), datarate_ok {}",
            s.report.resolution.label(),
            s.report.frames.mean.unwrap_or(f64::NAN) * 1e3,
            s.report.resolution.latency_budget() * 1e3,
            v.latency_ok,
            v.datarate_ok
        ))),
        _ => Ok(()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Axis {
    /// background load fraction
    Load,
    /// prediction horizon, ms
    Horizon,
    /// mean head speed, deg/s
    Speed,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Load => "load",
            Axis::Horizon => "horizon",
            Axis::Speed => "speed",
        }
    }

    /// The scenario with this axis set to `v`.
    pub fn apply(self, cfg: &ScenarioConfig, v: f64) -> Result<ScenarioConfig, RunError> {
        let mut c = cfg.clone();
        match self {
            Axis::Load => c.load = v,
            Axis::Horizon => c.horizon = v * 1e-3,
            Axis::Speed => match &mut c.trace {
                TraceSpec::Synthetic(s) => s.speed = v,
                TraceSpec::ConstantRate { speed, .. } => *speed = v,
                TraceSpec::Files { .. } => return Err(RunError::Usage("speed sweeps need synthetic traces".into())),
            },
        }
        c.validate()?;
        Ok(c)
    }
}

pub const SWEEP_HEADER: &str = "axis,value,status,frames,frame_mean_ms,frame_p99_ms,frame_jitter_ms,hmd_mean_ms,bkg_mean_ms,qoe_satisfied,dir";

fn opt_ms(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{}", x * 1e3))
}

fn value_dir(axis: Axis, v: f64) -> String {
    format!("{}_{}", axis.name(), v)
}

fn workers() -> usize {
    let avail = std::thread::available_parallelism().map_or(1, |n| n.get());
    std::env::var(MAX_WORKERS_ENV)
        .ok()
        .and_then(|s| s.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .map_or(avail, |n| n.min(avail))
}

/// One point of a sweep.
pub type SweepResult = (f64, Result<Summary, RunError>);

/// Run `cfg` at each value of `axis`. Each point writes a subdirectory of
/// `out`; `sweep.csv`, `fig5_<name>.csv` and `fig7_<name>.csv` merge the
/// points in the order given. Failed points are listed in `sweep.csv` and the
/// rest are kept.
pub fn sweep(cfg: &ScenarioConfig, axis: Axis, values: &[f64], out: &Path, opts: &RunOptions) -> Result<Vec<SweepResult>, RunError> {
    if values.is_empty() {
        return Err(RunError::Usage("sweep needs at least one value".into()));
    }
    fs::create_dir_all(out).map_err(io_err(out.display().to_string()))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers())
        .build()
        .map_err(|e| RunError::Io {
            context: "thread pool".into(),
            source: io::Error::other(e),
        })?;
    let results: Vec<SweepResult> = pool.install(|| {
        values
            .par_iter()
            .map(|&v| {
                let r = axis.apply(cfg, v).and_then(|c| run_scenario(&c, &out.join(value_dir(axis, v)), opts));
                (v, r)
            })
            .collect()
    });

    let mut csv = format!("{SWEEP_HEADER}\n");
    let mut fig5 = Vec::new();
    for (v, r) in &results {
        let dir = value_dir(axis, *v);
        match r {
            Ok(s) => {
                let f = &s.report.frames;
                let class = |n: &str| s.report.classes.iter().find(|c| c.class.name() == n).and_then(|c| c.latency.mean);
                csv.push_str(&format!(
                    "{},{},ok,{},{},{},{},{},{},{},{}\n",
                    axis.name(),
                    v,
                    f.count,
                    opt_ms(f.mean),
                    opt_ms(f.p99),
                    opt_ms(s.report.frame_jitter),
                    opt_ms(class("hmd")),
                    opt_ms(class("bkg")),
                    s.qoe_satisfied.map_or(String::new(), |b| b.to_string()),
                    dir
                ));
                fig5.push((axis.name().to_string(), v.to_string(), s.clone()));
            }
            Err(e) => {
                let msg = e.to_string().replace([',', '\n'], ";");
                csv.push_str(&format!("{},{},error: {msg},,,,,,,,{dir}\n", axis.name(), v));
            }
        }
    }
    fs::write(out.join("sweep.csv"), csv).map_err(io_err("sweep.csv"))?;
    let f5 = export::fig5_path(out, &cfg.name);
    export::write_fig5(&f5, &fig5).map_err(io_err(f5.display().to_string()))?;
    let (speeds, horizons): (Vec<f64>, Vec<f64>) = match axis {
        Axis::Horizon => (FIG7_SPEEDS.to_vec(), values.iter().map(|v| v * 1e-3).collect()),
        Axis::Speed => (values.to_vec(), FIG7_HORIZONS.to_vec()),
        Axis::Load => (FIG7_SPEEDS.to_vec(), FIG7_HORIZONS.to_vec()),
    };
    // nonpositive values already failed their points
    let speeds: Vec<f64> = speeds.into_iter().filter(|s| *s >= 0.0).collect();
    let horizons: Vec<f64> = horizons.into_iter().filter(|h| *h > 0.0).collect();
    if !speeds.is_empty() && !horizons.is_empty() {
        let pts = fig7_points(cfg, &speeds, &horizons)?;
        let f7 = export::fig7_path(out, &cfg.name);
        export::write_fig7(&f7, cfg.resolution.label(), &pts).map_err(io_err(f7.display().to_string()))?;
    }

    let failed = results.iter().filter(|(_, r)| r.is_err()).count();
    if failed > 0 {
        let total = results.len();
        let first = results.into_iter().find_map(|(_, r)| r.err()).expect("counted");
        return Err(RunError::Sweep {
            failed,
            total,
            first: Box::new(first),
        });
    }
    Ok(results)
}
