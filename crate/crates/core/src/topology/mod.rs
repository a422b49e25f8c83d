//! Two-stage FTTR-Business network: a main OLT (with the Edge-AI server)
//! polls MFUs over the FTTP PON, each MFU polls its SFUs over an in-building
//! FTTR PON, and every SFU hosts one endpoint (HMD, XR camera, or background
//! host). Scenario configuration, the node graph, the camera model and the
//! event-driven simulation live here.

mod camera;
mod sim;

pub use camera::{camera_advance, h2m_loop_step, CameraCommand, CameraState, H2mInput, H2mStep};
pub use sim::{simulate, CommandRecord, NullObserver, Observer, SimOutput, Simulation};

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dba::{bw_max, DbaError, DbaMode, PollingConfig};
use crate::geometry::HeadTrace;
use crate::prediction::Predictor;
use crate::synth::{constant_rate_trace, on_off_trace, SynthConfig, SynthError};
use crate::traffic::{GapLaw, HmdSource};
use crate::xr::{ResolutionClass, XrError};
use crate::FIBER_DELAY_PER_M;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("invalid split 1:{0}; expected a power of two between 1 and 64")]
    InvalidSplit(usize),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Dba(#[from] DbaError),
    #[error(transparent)]
    Xr(#[from] XrError),
    #[error(transparent)]
    Synth(#[from] SynthError),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

/// One PON segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PonSpec {
    /// upstream line rate, bits/s
    pub rate_bps: f64,
    /// feeder length, m
    pub length_m: f64,
    /// polling cycle, s
    pub t_poll: f64,
    /// guard time, s
    pub t_guard: f64,
}

impl PonSpec {
    pub fn fttp_default() -> Self {
        Self {
            rate_bps: 50e9,
            length_m: 20_000.0,
            t_poll: 0.5e-3,
            t_guard: 1e-6,
        }
    }

    pub fn fttr_default() -> Self {
        Self {
            rate_bps: 10e9,
            length_m: 20.0,
            t_poll: 2e-3,
            t_guard: 2e-6,
        }
    }

    pub fn link(&self) -> LinkSpec {
        LinkSpec {
            rate_bps: self.rate_bps,
            length_m: self.length_m,
            delay: self.length_m * FIBER_DELAY_PER_M,
        }
    }

    pub fn polling(&self, n_onu: usize) -> Result<PollingConfig, DbaError> {
        let rtt = 2.0 * self.length_m * FIBER_DELAY_PER_M;
        PollingConfig::new(self.t_poll, self.t_guard, n_onu, self.rate_bps / 8.0, alloc::vec![rtt; n_onu])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub rate_bps: f64,
    pub length_m: f64,
    /// one-way propagation, s
    pub delay: f64,
}

impl LinkSpec {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.rate_bps > 0.0) || !(self.length_m >= 0.0) {
            return Err(invalid("link rate must be positive and length nonnegative"));
        }
        if (self.delay - self.length_m * FIBER_DELAY_PER_M).abs() > 1e-15 {
            return Err(invalid("link delay must equal length x 5 us/km"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SfuRole {
    /// human side: HMD orientation stream
    Hmd,
    /// machine side: XR camera
    Xr,
    /// background host only
    Bkg,
    Idle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeRole {
    MainOlt,
    Mfu,
    Sfu(SfuRole),
    Endpoint(SfuRole),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: usize,
    pub role: NodeRole,
    pub parent: Option<usize>,
    /// link toward the parent
    pub link: Option<LinkSpec>,
    /// PON this node polls, for the OLT and MFUs
    pub dba: Option<PollingConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BkgPlacement {
    /// only on `bkg` SFUs
    Dedicated,
    /// spread over every non-idle SFU
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BkgLaw {
    Exponential,
    Pareto,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackgroundSpec {
    pub law: BkgLaw,
    pub pareto_shape: f64,
    pub packet_size: u32,
    pub placement: BkgPlacement,
}

impl Default for BackgroundSpec {
    fn default() -> Self {
        Self {
            law: BkgLaw::Exponential,
            pareto_shape: 1.5,
            packet_size: 1500,
            placement: BkgPlacement::All,
        }
    }
}

impl BackgroundSpec {
    pub fn gap_law(&self) -> GapLaw {
        match self.law {
            BkgLaw::Exponential => GapLaw::Exponential,
            BkgLaw::Pareto => GapLaw::Pareto {
                shape: self.pareto_shape,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum XrSizing {
    /// from the camera rotation between frames
    HeadDriven,
    /// gamma-distributed sizes independent of motion
    Empirical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    /// reads the future of the trace
    Oracle,
    Persistence,
    MovingAverage,
    Arima,
    Bilstm,
}

/// Head traces for the human SFUs, one per pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TraceSpec {
    /// on-off walk; pair `p` uses seed `seed + p`
    Synthetic(SynthConfig),
    /// yaw sweep
    ConstantRate { speed: f64, period: f64, samples: usize },
    /// CSV files loaded by the caller, cycled over pairs
    Files { paths: Vec<String> },
}

impl Default for TraceSpec {
    /// On-off walk sampled at the HMD's mean packet gap.
    fn default() -> Self {
        TraceSpec::Synthetic(SynthConfig {
            period: HmdSource::default().mean_gap(),
            samples: 8000,
            ..SynthConfig::default()
        })
    }
}

/// A frame injected at a fixed time on the first machine SFU.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedFrame {
    /// creation time, s
    pub time: f64,
    pub size: u64,
    /// size announced to the DBA, bytes
    pub predicted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub name: String,
    pub fttp_split: usize,
    pub fttr_split: usize,
    /// human-machine pairs placed on consecutive SFUs when `roles` is absent
    pub pairs: usize,
    pub roles: Option<Vec<SfuRole>>,
    pub resolution: ResolutionClass,
    pub frame_rate: f64,
    /// camera field of view, degrees
    pub fov: f64,
    /// frame-size sensitivity; calibrated from the traces when absent
    pub k: Option<f64>,
    pub xr_sizing: XrSizing,
    /// std of XR frame gaps, s
    pub xr_gap_std: f64,
    /// relative std of XR frame sizes around the model
    pub size_noise: f64,
    pub trace: TraceSpec,
    pub predictor: PredictorKind,
    /// horizon, s
    pub horizon: f64,
    pub dba: DbaMode,
    /// camera slew rate, deg/s
    pub camera_speed: f64,
    /// simulated time, s
    pub duration: f64,
    /// packets created before this are excluded from statistics, s
    pub warmup: f64,
    pub seed: u64,
    /// total offered uplink load as a fraction of FTTP capacity; background
    /// makes up whatever XR and HMD do not
    pub load: f64,
    pub background: BackgroundSpec,
    pub fttp: PonSpec,
    pub fttr: PonSpec,
    /// device to SFU, s
    pub wireless_delay: f64,
    /// Edge-AI processing per HMD sample, s
    pub edge_latency: f64,
    /// headroom on predicted XR grants
    pub hmc_margin: f64,
    /// per-ONU buffer; unbounded when absent
    pub buffer_bytes: Option<u64>,
    pub hmd: HmdSource,
    pub scripted_xr: Vec<ScriptedFrame>,
    /// camera-head gap counted as de-synchronised, degrees
    pub desync_threshold_deg: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            name: "default".into(),
            fttp_split: 4,
            fttr_split: 4,
            pairs: 6,
            roles: None,
            resolution: ResolutionClass::K8,
            frame_rate: 60.0,
            fov: 110.0,
            k: None,
            xr_sizing: XrSizing::HeadDriven,
            xr_gap_std: 1.76e-3,
            size_noise: 0.105,
            trace: TraceSpec::default(),
            predictor: PredictorKind::Oracle,
            horizon: 0.09,
            dba: DbaMode::Hmc,
            camera_speed: 15.0,
            duration: 10.0,
            warmup: 0.5,
            seed: 1,
            load: 0.5,
            background: BackgroundSpec::default(),
            fttp: PonSpec::fttp_default(),
            fttr: PonSpec::fttr_default(),
            wireless_delay: 1e-3,
            edge_latency: 0.0,
            hmc_margin: 0.25,
            buffer_bytes: None,
            hmd: HmdSource::default(),
            scripted_xr: Vec::new(),
            desync_threshold_deg: 2.0,
        }
    }
}

fn check_split(n: usize) -> Result<(), ConfigError> {
    if n.is_power_of_two() && n <= 64 {
        Ok(())
    } else {
        Err(ConfigError::InvalidSplit(n))
    }
}

impl ScenarioConfig {
    pub fn sfu_count(&self) -> usize {
        self.fttp_split * self.fttr_split
    }

    /// Role of every SFU, in global order `mfu * fttr_split + slot`.
    pub fn sfu_roles(&self) -> Result<Vec<SfuRole>, ConfigError> {
        let n = self.sfu_count();
        match &self.roles {
            Some(r) => {
                if r.len() != n {
                    return Err(invalid(format!("roles lists {} SFUs, topology has {n}", r.len())));
                }
                Ok(r.clone())
            }
            None => {
                if 2 * self.pairs > n {
                    return Err(invalid(format!("{} pairs need {} SFUs, topology has {n}", self.pairs, 2 * self.pairs)));
                }
                Ok((0..n)
                    .map(|i| match i {
                        i if i < 2 * self.pairs && i % 2 == 0 => SfuRole::Hmd,
                        i if i < 2 * self.pairs => SfuRole::Xr,
                        _ => SfuRole::Bkg,
                    })
                    .collect())
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        check_split(self.fttp_split)?;
        check_split(self.fttr_split)?;
        let roles = self.sfu_roles()?;
        let h = roles.iter().filter(|r| **r == SfuRole::Hmd).count();
        let x = roles.iter().filter(|r| **r == SfuRole::Xr).count();
        if h != x {
            return Err(invalid(format!("{h} HMD SFUs but {x} XR SFUs; they must pair up")));
        }
        if !self.scripted_xr.is_empty() && x == 0 {
            return Err(invalid("scripted frames need an XR SFU"));
        }
        let pos = [
            ("frame_rate", self.frame_rate),
            ("fov", self.fov),
            ("horizon", self.horizon),
            ("camera_speed", self.camera_speed),
            ("duration", self.duration),
        ];
        for (name, v) in pos {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(format!("{name} must be positive, got {v}")));
            }
        }
        let nonneg = [
            ("warmup", self.warmup),
            ("xr_gap_std", self.xr_gap_std),
            ("size_noise", self.size_noise),
            ("wireless_delay", self.wireless_delay),
            ("edge_latency", self.edge_latency),
            ("hmc_margin", self.hmc_margin),
            ("desync_threshold_deg", self.desync_threshold_deg),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(format!("{name} must be nonnegative, got {v}")));
            }
        }
        if self.warmup >= self.duration {
            return Err(invalid("warmup must be shorter than the run"));
        }
        if self.xr_gap_std >= 1.0 / self.frame_rate {
            return Err(invalid("xr_gap_std must be below the frame period"));
        }
        if self.size_noise > 0.5 {
            return Err(invalid("size_noise above 0.5 would need truncation on both tails"));
        }
        if !(0.0..1.0).contains(&self.load) {
            return Err(invalid("load must lie in [0, 1)"));
        }
        if let Some(k) = self.k {
            if !(k > 0.0 && k.is_finite()) {
                return Err(invalid("k must be positive"));
            }
        }
        if self.background.law == BkgLaw::Pareto && !(self.background.pareto_shape > 1.0) {
            return Err(invalid("pareto_shape must exceed 1"));
        }
        if self.background.packet_size == 0 || self.background.packet_size > 1500 {
            return Err(invalid("background packet_size must be in 1..=1500"));
        }
        self.hmd
            .validate()
            .map_err(|e| invalid(format!("hmd: {e}")))?;
        for s in &self.scripted_xr {
            if !(s.time >= 0.0 && s.predicted >= 0.0) {
                return Err(invalid("scripted frames need nonnegative time and prediction"));
            }
        }
        for (name, p) in [("fttp", &self.fttp), ("fttr", &self.fttr)] {
            if !(p.rate_bps > 0.0 && p.length_m >= 0.0 && p.t_poll > 0.0 && p.t_guard >= 0.0) {
                return Err(invalid(format!("{name}: rate, cycle must be positive; length, guard nonnegative")));
            }
        }
        if let TraceSpec::Files { paths } = &self.trace {
            if paths.is_empty() {
                return Err(invalid("trace.paths is empty"));
            }
        }
        self.fttp.polling(self.fttp_split)?;
        self.fttr.polling(self.fttr_split)?;
        Ok(())
    }

    /// Samples of the horizon at the HMD's mean rate, at least one.
    pub fn horizon_samples(&self) -> usize {
        (libm::round(self.horizon / self.hmd.mean_gap()) as usize).max(1)
    }

    /// One trace per pair for the synthetic kinds; `None` for file traces,
    /// which the caller loads.
    pub fn synthetic_traces(&self) -> Result<Option<Vec<HeadTrace>>, ConfigError> {
        let n = self.sfu_roles()?.iter().filter(|r| **r == SfuRole::Hmd).count().max(1);
        match &self.trace {
            TraceSpec::Synthetic(base) => {
                let mut v = Vec::with_capacity(n);
                for p in 0..n {
                    let c = SynthConfig {
                        seed: base.seed.wrapping_add(p as u64),
                        ..base.clone()
                    };
                    v.push(on_off_trace(&c)?);
                }
                Ok(Some(v))
            }
            TraceSpec::ConstantRate { speed, period, samples } => {
                let t = constant_rate_trace(*speed, *period, *samples)?;
                Ok(Some(alloc::vec![t; n]))
            }
            TraceSpec::Files { .. } => Ok(None),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SfuInfo {
    pub mfu: usize,
    pub slot: usize,
    pub role: SfuRole,
    /// pair index for HMD and XR SFUs
    pub pair: Option<usize>,
}

/// Simulation-ready node graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub nodes: Vec<NodeSpec>,
    pub sfus: Vec<SfuInfo>,
    /// `(human SFU, machine SFU)` per pair
    pub pairs: Vec<(usize, usize)>,
    pub fttp: PollingConfig,
    pub fttr: PollingConfig,
    pub fttp_link: LinkSpec,
    pub fttr_link: LinkSpec,
    pub fttp_bw_max: f64,
    pub fttr_bw_max: f64,
}

impl Topology {
    pub fn mfu_count(&self) -> usize {
        self.fttp.n_onu
    }

    pub fn sfu_index(&self, mfu: usize, slot: usize) -> usize {
        mfu * self.fttr.n_onu + slot
    }
}

/// Wire the OLT, MFUs, SFUs and endpoints for `cfg`.
pub fn build_topology(cfg: &ScenarioConfig) -> Result<Topology, ConfigError> {
    cfg.validate()?;
    let roles = cfg.sfu_roles()?;
    let fttp = cfg.fttp.polling(cfg.fttp_split)?;
    let fttr = cfg.fttr.polling(cfg.fttr_split)?;
    let (fttp_link, fttr_link) = (cfg.fttp.link(), cfg.fttr.link());
    let mut nodes = alloc::vec![NodeSpec {
        id: 0,
        role: NodeRole::MainOlt,
        parent: None,
        link: None,
        dba: Some(fttp.clone()),
    }];
    let mut sfus = Vec::with_capacity(roles.len());
    let mut humans = Vec::new();
    let mut machines = Vec::new();
    for m in 0..cfg.fttp_split {
        let mfu_id = nodes.len();
        nodes.push(NodeSpec {
            id: mfu_id,
            role: NodeRole::Mfu,
            parent: Some(0),
            link: Some(fttp_link),
            dba: Some(fttr.clone()),
        });
        for slot in 0..cfg.fttr_split {
            let g = m * cfg.fttr_split + slot;
            let role = roles[g];
            let sfu_id = nodes.len();
            nodes.push(NodeSpec {
                id: sfu_id,
                role: NodeRole::Sfu(role),
                parent: Some(mfu_id),
                link: Some(fttr_link),
                dba: None,
            });
            if role != SfuRole::Idle {
                nodes.push(NodeSpec {
                    id: nodes.len(),
                    role: NodeRole::Endpoint(role),
                    parent: Some(sfu_id),
                    link: None,
                    dba: None,
                });
            }
            let pair = match role {
                SfuRole::Hmd => {
                    humans.push(g);
                    Some(humans.len() - 1)
                }
                SfuRole::Xr => {
                    machines.push(g);
                    Some(machines.len() - 1)
                }
                _ => None,
            };
            sfus.push(SfuInfo { mfu: m, slot, role, pair });
        }
    }
    let pairs = humans.into_iter().zip(machines).collect();
    Ok(Topology {
        nodes,
        sfus,
        pairs,
        fttp_bw_max: bw_max(&fttp)?,
        fttr_bw_max: bw_max(&fttr)?,
        fttp,
        fttr,
        fttp_link,
        fttr_link,
    })
}

/// Head-motion forecaster handed to the simulation.
#[derive(Debug, Clone, PartialEq)]
pub enum PredictorSetup {
    Oracle,
    /// one model per component: yaw, pitch, roll
    Model(alloc::boxed::Box<[Predictor; 3]>),
}

impl PredictorSetup {
    /// The same model on every component.
    pub fn uniform(p: Predictor) -> Self {
        Self::Model(alloc::boxed::Box::new([p.clone(), p.clone(), p]))
    }

    /// Built-in choice for kinds that need no training.
    pub fn builtin(kind: PredictorKind) -> Option<Self> {
        match kind {
            PredictorKind::Oracle => Some(Self::Oracle),
            PredictorKind::Persistence => Some(Self::uniform(Predictor::Persistence)),
            PredictorKind::MovingAverage => Some(Self::uniform(Predictor::MovingAverage { window_s: 0.045 })),
            PredictorKind::Arima | PredictorKind::Bilstm => None,
        }
    }
}
