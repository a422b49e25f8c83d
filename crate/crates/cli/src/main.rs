use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use h2mxr_core::geometry::Component;
use h2mxr_core::prediction::{ArimaOrder, BiLstmConfig};
use h2mxr_core::synth::{on_off_trace, SynthConfig};
use h2mxr_core::topology::ScenarioConfig;
use h2mxr_core::traffic::BackgroundSource;
use h2mxr_core::HeadTrace;

use h2mxr::export::write_json;
use h2mxr::predict::{self, Method, ModelFile, PredictConfig};
use h2mxr::run::{self, exit, io_err, Axis, RunError, RunOptions};
use h2mxr::scenario::{self, ScenarioError};
use h2mxr::{trace_io, trafficgen};

#[derive(Parser)]
#[command(name = "h2mxr", version, about = "Human-to-machine XR over two-stage PON simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario
    Simulate(SimulateArgs),
    /// Score head-motion predictors over speeds and horizons
    Predict(PredictArgs),
    /// Train a predictor and save it as JSON
    Train(TrainArgs),
    /// Draw from the traffic sources
    Trafficgen(TrafficArgs),
    /// Run a scenario over a list of values on one axis
    Sweep(SweepArgs),
    /// Check a scenario file or preset
    ValidateConfig(ValidateArgs),
}

#[derive(Args, Clone)]
struct ScenarioArgs {
    /// scenario TOML file
    #[arg(long, conflicts_with = "preset")]
    scenario: Option<PathBuf>,
    /// named preset, e.g. desk-8K-hmcdba
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// simulated seconds
    #[arg(long)]
    duration: Option<f64>,
    /// background load fraction
    #[arg(long)]
    load: Option<f64>,
}

impl ScenarioArgs {
    fn load(&self) -> Result<(ScenarioConfig, Option<PathBuf>), RunError> {
        let (mut cfg, base) = match (&self.scenario, &self.preset) {
            (Some(p), _) => (scenario::load_scenario(p)?, p.parent().map(Path::to_path_buf)),
            (None, Some(n)) => (scenario::preset(n)?, None),
            (None, None) => (ScenarioConfig::default(), None),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(d) = self.duration {
            cfg.duration = d;
        }
        if let Some(l) = self.load {
            cfg.load = l;
        }
        cfg.validate().map_err(ScenarioError::from)?;
        Ok((cfg, base))
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// output directory
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// exit with code 4 when the XR QoE tier is missed
    #[arg(long)]
    assert_qoe: bool,
    /// also write packets.csv
    #[arg(long)]
    packets: bool,
    /// trained predictor from `train`
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, value_enum)]
    axis: Axis,
    /// comma separated; horizon in ms, speed in deg/s
    #[arg(long, value_delimiter = ',', required = true, allow_negative_numbers = true)]
    values: Vec<f64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    assert_qoe: bool,
    #[arg(long)]
    packets: bool,
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    /// trace CSV files; synthetic on-off traces when absent
    #[arg(long = "trace")]
    traces: Vec<PathBuf>,
    #[arg(long, value_enum, value_delimiter = ',')]
    methods: Vec<Method>,
    /// horizons in samples
    #[arg(long, value_delimiter = ',')]
    horizons: Vec<usize>,
    /// speed bins, deg/s
    #[arg(long, value_delimiter = ',')]
    speeds: Vec<f64>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// samples per synthetic trace
    #[arg(long)]
    samples: Option<usize>,
    /// BiLSTM training epochs
    #[arg(long)]
    epochs: Option<usize>,
    /// samples per segment when binning trace files by speed
    #[arg(long)]
    segment: Option<usize>,
    /// directory for predict.csv
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_enum, default_value = "bilstm")]
    method: Method,
    /// trace CSV files; synthetic on-off traces when absent
    #[arg(long = "trace")]
    traces: Vec<PathBuf>,
    /// horizon in samples
    #[arg(long, default_value_t = 6)]
    horizon: usize,
    /// speed of the synthetic training traces, deg/s
    #[arg(long, default_value_t = 90.0)]
    speed: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    epochs: Option<usize>,
    /// model JSON path
    #[arg(long, default_value = "model.json")]
    out: PathBuf,
}

#[derive(Args)]
struct TrafficArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, default_value_t = 100_000)]
    count: usize,
    /// CSV of every draw; stats only when absent
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// print the full scenario with defaults filled in
    #[arg(long)]
    dump: bool,
}

fn load_model(p: &Option<PathBuf>) -> Result<Option<ModelFile>, RunError> {
    let Some(p) = p else { return Ok(None) };
    let text = fs::read_to_string(p).map_err(io_err(p.display().to_string()))?;
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| RunError::Usage(format!("{}: {e}", p.display())))
}

fn load_traces(paths: &[PathBuf]) -> Result<Vec<HeadTrace>, RunError> {
    paths.iter().map(|p| trace_io::load_head_trace(p).map_err(RunError::from)).collect()
}

fn print_summary(s: &h2mxr::export::Summary) {
    let f = &s.report.frames;
    println!(
        "{}: {} {} load {} frames {} mean {:.3} ms p99 {:.3} ms budget {} ms qoe {}",
        s.scenario,
        s.dba.name(),
        s.report.resolution.label(),
        s.load,
        f.count,
        f.mean.unwrap_or(f64::NAN) * 1e3,
        f.p99.unwrap_or(f64::NAN) * 1e3,
        s.report.resolution.latency_budget() * 1e3,
        s.qoe_satisfied.map_or("n/a".into(), |b| b.to_string())
    );
}

fn simulate(a: SimulateArgs) -> Result<(), RunError> {
    let (cfg, base) = a.scenario.load()?;
    let opts = RunOptions {
        packets: a.packets,
        model: load_model(&a.model)?,
        base_dir: base,
    };
    let s = run::run_scenario(&cfg, &a.out, &opts)?;
    print_summary(&s);
    if a.assert_qoe {
        run::assert_qoe(&s)?;
    }
    Ok(())
}

fn sweep(a: SweepArgs) -> Result<(), RunError> {
    let (cfg, base) = a.scenario.load()?;
    let opts = RunOptions {
        packets: a.packets,
        model: load_model(&a.model)?,
        base_dir: base,
    };
    let res = run::sweep(&cfg, a.axis, &a.values, &a.out, &opts)?;
    for (_, r) in &res {
        if let Ok(s) = r {
            print_summary(s);
        }
    }
    if a.assert_qoe {
        for (_, r) in &res {
            if let Ok(s) = r {
                run::assert_qoe(s)?;
            }
        }
    }
    Ok(())
}

fn predict_cmd(a: PredictArgs) -> Result<(), RunError> {
    let d = PredictConfig::default();
    let mut cfg = PredictConfig {
        methods: if a.methods.is_empty() { d.methods.clone() } else { a.methods },
        horizons: if a.horizons.is_empty() { d.horizons.clone() } else { a.horizons },
        speeds: if a.speeds.is_empty() { d.speeds.clone() } else { a.speeds },
        seed: a.seed,
        samples: a.samples.unwrap_or(d.samples),
        segment: a.segment.unwrap_or(d.segment),
        ..d
    };
    if let Some(e) = a.epochs {
        cfg.bilstm.epochs = e;
    }
    let sets = if a.traces.is_empty() {
        predict::synthetic_sets(&cfg)?
    } else {
        predict::file_sets(&load_traces(&a.traces)?, &cfg)?
    };
    let rows = predict::evaluate(&sets, &cfg)?;
    fs::create_dir_all(&a.out).map_err(io_err(a.out.display().to_string()))?;
    let path = a.out.join("predict.csv");
    fs::write(&path, predict::rows_csv(&rows)).map_err(io_err(path.display().to_string()))?;
    for m in &cfg.methods {
        for c in Component::ALL {
            println!("{}", predict::render_grid(&rows, *m, c));
        }
    }
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<(), RunError> {
    let period = h2mxr_core::prediction::NOMINAL_SAMPLE_PERIOD;
    let traces = if a.traces.is_empty() {
        (0..3)
            .map(|i| {
                on_off_trace(&SynthConfig {
                    speed: a.speed,
                    seed: a.seed.wrapping_add(i),
                    ..SynthConfig::default()
                })
            })
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| RunError::Usage(e.to_string()))?
    } else {
        load_traces(&a.traces)?
    };
    let mut bl = BiLstmConfig { seed: a.seed, ..BiLstmConfig::desk() };
    if let Some(e) = a.epochs {
        bl.epochs = e;
    }
    let m = predict::train_models(a.method, &traces, a.horizon, period, &bl, ArimaOrder::new(6, 1, 2), 20_000)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir.display().to_string()))?;
    }
    write_json(&a.out, &m).map_err(io_err(a.out.display().to_string()))?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn trafficgen_cmd(a: TrafficArgs) -> Result<(), RunError> {
    let (cfg, _) = a.scenario.load()?;
    let bkg = BackgroundSource::new(cfg.background.gap_law(), cfg.background.packet_size, cfg.load, cfg.fttr.rate_bps)
        .map_err(|e| RunError::Usage(e.to_string()))?;
    let d = trafficgen::draw(a.count, cfg.seed, &cfg.hmd, Some(&bkg)).map_err(|e| RunError::Usage(e.to_string()))?;
    if let Some(p) = &a.out {
        let f = fs::File::create(p).map_err(io_err(p.display().to_string()))?;
        d.write_csv(f).map_err(io_err(p.display().to_string()))?;
    }
    println!("{}", serde_json::to_string_pretty(&d.stats()).expect("plain data"));
    Ok(())
}

fn validate(a: ValidateArgs) -> Result<(), RunError> {
    let (cfg, base) = a.scenario.load()?;
    if cfg.synthetic_traces().map_err(ScenarioError::from)?.is_none() {
        run::scenario_traces(&cfg, base.as_deref())?;
    }
    if a.dump {
        print!("{}", scenario::to_toml(&cfg));
    } else {
        println!("ok: {}", cfg.name);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::CONFIG as u8 } else { exit::OK as u8 });
        }
    };
    let r = match cli.cmd {
        Cmd::Simulate(a) => simulate(a),
        Cmd::Predict(a) => predict_cmd(a),
        Cmd::Train(a) => train_cmd(a),
        Cmd::Trafficgen(a) => trafficgen_cmd(a),
        Cmd::Sweep(a) => sweep(a),
        Cmd::ValidateConfig(a) => validate(a),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
