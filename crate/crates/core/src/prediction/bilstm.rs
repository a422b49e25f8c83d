//! Bidirectional LSTM regressor on a short window of one component.
//!
//! Inputs are displacements from the window's last sample divided by a
//! scale fixed at training time (the largest displacement seen), so the
//! network works in roughly [-1, 1]. The output is the scaled displacement
//! of the sample `horizon` steps ahead.
//!
//! Parameters live in one flat vector. Per layer and direction the block is
//! `W (4H x in) | U (4H x H) | b (4H)`, gates in the order i, f, g, o.
//! Layer outputs are `[h_fwd(t); h_bwd(t)]`; the regression head reads
//! `[h_fwd(T-1); h_bwd(0)]`, the last state of each direction.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use libm::{exp, sqrt, tanh};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ForecastRequest, PredictionError};
use crate::engine::RngStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BiLstmConfig {
    pub layers: usize,
    pub hidden: usize,
    /// Inverted dropout between layers and before the head; training only.
    pub dropout: f64,
    pub window: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub patience: usize,
    pub validation_fraction: f64,
    /// Global gradient-norm clip; 0 disables.
    pub clip_norm: f64,
    /// Training windows are subsampled to at most this many.
    pub max_windows: usize,
    pub seed: u64,
}

impl Default for BiLstmConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl BiLstmConfig {
    /// Small network that trains in minutes on a laptop.
    pub fn desk() -> Self {
        Self {
            layers: 1,
            hidden: 32,
            dropout: 0.0,
            window: 6,
            epochs: 30,
            batch_size: 32,
            learning_rate: 0.01,
            momentum: 0.9,
            patience: 5,
            validation_fraction: 0.2,
            clip_norm: 1.0,
            max_windows: 20_000,
            seed: 7,
        }
    }

    /// Three layers of 200 units with dropout 0.3 over 50 epochs.
    pub fn paper() -> Self {
        Self {
            layers: 3,
            hidden: 200,
            dropout: 0.3,
            epochs: 50,
            max_windows: usize::MAX,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<(), PredictionError> {
        let bad = |m: &str| Err(PredictionError::InvalidConfig(m.into()));
        if self.layers == 0 || self.hidden == 0 {
            return bad("layers and hidden units must be positive");
        }
        if self.window == 0 {
            return bad("input window must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return bad("learning rate must be positive and momentum in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad("validation fraction must lie in [0, 1)");
        }
        if !(self.clip_norm >= 0.0) {
            return bad("clip norm must be nonnegative");
        }
        Ok(())
    }
}

/// Weights of one LSTM direction, row-major, gates i, f, g, o.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmWeights {
    /// `4H x in`
    pub w: Vec<f64>,
    /// `4H x H`
    pub u: Vec<f64>,
    /// `4H`
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiLstmModel {
    layers: usize,
    hidden: usize,
    window: usize,
    dropout: f64,
    horizon: usize,
    scale: f64,
    params: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
    pub windows: usize,
}

const G: usize = 4;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + exp(-x))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn block_len(in_dim: usize, hd: usize) -> usize {
    G * hd * (in_dim + hd + 1)
}

impl BiLstmModel {
    /// All-zero network.
    pub fn zeros(layers: usize, hidden: usize, window: usize, horizon: usize) -> Result<Self, PredictionError> {
        if layers == 0 || hidden == 0 || window == 0 {
            return Err(PredictionError::InvalidConfig("layers, hidden and window must be positive".into()));
        }
        let mut m = Self {
            layers,
            hidden,
            window,
            dropout: 0.0,
            horizon,
            scale: 1.0,
            params: Vec::new(),
        };
        m.params = vec![0.0; m.param_count()];
        Ok(m)
    }

    /// Assemble a network from explicit weights; `dirs[l]` holds the
    /// forward then backward direction of layer `l`.
    pub fn from_weights(
        window: usize,
        horizon: usize,
        scale: f64,
        dirs: &[(LstmWeights, LstmWeights)],
        out_w: &[f64],
        out_b: f64,
    ) -> Result<Self, PredictionError> {
        let layers = dirs.len();
        let hidden = dirs.first().map(|d| d.0.b.len() / G).unwrap_or(0);
        let mut m = Self::zeros(layers, hidden, window, horizon)?;
        if !(scale > 0.0) {
            return Err(PredictionError::InvalidConfig("scale must be positive".into()));
        }
        m.scale = scale;
        let mut at = 0;
        for (l, (f, b)) in dirs.iter().enumerate() {
            let in_dim = m.in_dim(l);
            for d in [f, b] {
                if d.w.len() != G * hidden * in_dim || d.u.len() != G * hidden * hidden || d.b.len() != G * hidden {
                    return Err(PredictionError::InvalidConfig(format!("layer {l}: weight shapes inconsistent")));
                }
                for part in [&d.w, &d.u, &d.b] {
                    m.params[at..at + part.len()].copy_from_slice(part);
                    at += part.len();
                }
            }
        }
        if out_w.len() != 2 * hidden {
            return Err(PredictionError::InvalidConfig("output weights must have 2H entries".into()));
        }
        m.params[at..at + 2 * hidden].copy_from_slice(out_w);
        m.params[at + 2 * hidden] = out_b;
        Ok(m)
    }

    pub fn window(&self) -> usize {
        self.window
    }
    pub fn horizon(&self) -> usize {
        self.horizon
    }
    pub fn layers(&self) -> usize {
        self.layers
    }
    pub fn hidden(&self) -> usize {
        self.hidden
    }
    pub fn dropout(&self) -> f64 {
        self.dropout
    }
    pub fn scale(&self) -> f64 {
        self.scale
    }
    pub fn params(&self) -> &[f64] {
        &self.params
    }
    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn in_dim(&self, layer: usize) -> usize {
        if layer == 0 {
            1
        } else {
            2 * self.hidden
        }
    }

    fn block_offset(&self, layer: usize, dir: usize) -> usize {
        let mut off = 0;
        for l in 0..layer {
            off += 2 * block_len(self.in_dim(l), self.hidden);
        }
        off + dir * block_len(self.in_dim(layer), self.hidden)
    }

    fn head_offset(&self) -> usize {
        self.block_offset(self.layers, 0)
    }

    pub fn param_count(&self) -> usize {
        self.head_offset() + 2 * self.hidden + 1
    }

    /// Check shapes after deserialisation.
    pub fn validate(&self) -> Result<(), PredictionError> {
        if self.layers == 0 || self.hidden == 0 || self.window == 0 {
            return Err(PredictionError::InvalidConfig("layers, hidden and window must be positive".into()));
        }
        if self.params.len() != self.param_count() {
            return Err(PredictionError::InvalidConfig(format!(
                "expected {} parameters, found {}",
                self.param_count(),
                self.params.len()
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) || !(self.scale > 0.0) {
            return Err(PredictionError::InvalidConfig("dropout or scale out of range".into()));
        }
        if !self.params.iter().all(|v| v.is_finite()) {
            return Err(PredictionError::InvalidConfig("non-finite weight".into()));
        }
        Ok(())
    }

    /// Network output for an already normalised window (no dropout).
    pub fn forward_normalized(&self, x: &[f64]) -> f64 {
        let mut tape = Tape::default();
        self.forward(x, None, &mut tape)
    }

    fn forward(&self, x: &[f64], mut rng: Option<&mut RngStream>, tape: &mut Tape) -> f64 {
        let t_len = self.window;
        let hd = self.hidden;
        debug_assert_eq!(x.len(), t_len);
        tape.reset(self.layers);
        let mut input = x.to_vec();
        for l in 0..self.layers {
            let in_dim = self.in_dim(l);
            if l > 0 && self.dropout > 0.0 {
                if let Some(r) = rng.as_deref_mut() {
                    let mask = dropout_mask(r, input.len(), self.dropout);
                    input.iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
                    tape.masks[l] = Some(mask);
                }
            }
            let mut out = vec![0.0; t_len * 2 * hd];
            for dir in 0..2 {
                let off = self.block_offset(l, dir);
                let p = &self.params[off..off + block_len(in_dim, hd)];
                let cache = &mut tape.dirs[l][dir];
                dir_forward(p, in_dim, hd, &input, t_len, dir == 1, cache);
                for s in 0..t_len {
                    let t = if dir == 1 { t_len - 1 - s } else { s };
                    out[t * 2 * hd + dir * hd..t * 2 * hd + (dir + 1) * hd].copy_from_slice(&cache.h[s * hd..(s + 1) * hd]);
                }
            }
            tape.inputs[l] = input;
            input = out;
        }
        let last = self.layers - 1;
        let mut feat = Vec::with_capacity(2 * hd);
        feat.extend_from_slice(&tape.dirs[last][0].h[(t_len - 1) * hd..]);
        feat.extend_from_slice(&tape.dirs[last][1].h[(t_len - 1) * hd..]);
        tape.feat_mask = None;
        if self.dropout > 0.0 {
            if let Some(r) = rng {
                let mask = dropout_mask(r, feat.len(), self.dropout);
                feat.iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
                tape.feat_mask = Some(mask);
            }
        }
        let head = self.head_offset();
        let y = dot(&self.params[head..head + 2 * hd], &feat) + self.params[head + 2 * hd];
        tape.feat = feat;
        y
    }

    fn backward(&self, tape: &Tape, dy: f64, grad: &mut [f64]) {
        let t_len = self.window;
        let hd = self.hidden;
        let head = self.head_offset();
        for j in 0..2 * hd {
            grad[head + j] += dy * tape.feat[j];
        }
        grad[head + 2 * hd] += dy;
        let mut dfeat: Vec<f64> = self.params[head..head + 2 * hd].iter().map(|w| w * dy).collect();
        if let Some(m) = &tape.feat_mask {
            dfeat.iter_mut().zip(m).for_each(|(d, m)| *d *= m);
        }
        // gradient w.r.t. each direction's h, indexed by time
        let mut dh = [vec![0.0; t_len * hd], vec![0.0; t_len * hd]];
        dh[0][(t_len - 1) * hd..].copy_from_slice(&dfeat[..hd]);
        dh[1][..hd].copy_from_slice(&dfeat[hd..]);
        for l in (0..self.layers).rev() {
            let in_dim = self.in_dim(l);
            let mut dx = vec![0.0; t_len * in_dim];
            for dir in 0..2 {
                let off = self.block_offset(l, dir);
                let len = block_len(in_dim, hd);
                dir_backward(
                    &self.params[off..off + len],
                    &mut grad[off..off + len],
                    in_dim,
                    hd,
                    &tape.inputs[l],
                    t_len,
                    dir == 1,
                    &tape.dirs[l][dir],
                    &dh[dir],
                    &mut dx,
                );
            }
            if l == 0 {
                break;
            }
            if let Some(m) = &tape.masks[l] {
                dx.iter_mut().zip(m).for_each(|(d, m)| *d *= m);
            }
            for t in 0..t_len {
                for dir in 0..2 {
                    dh[dir][t * hd..(t + 1) * hd]
                        .copy_from_slice(&dx[t * 2 * hd + dir * hd..t * 2 * hd + (dir + 1) * hd]);
                }
            }
        }
    }

    /// Mean squared error over normalised `(inputs, targets)` and its
    /// gradient with respect to every parameter; dropout disabled.
    /// `inputs` holds `targets.len()` windows back to back.
    pub fn loss_and_gradient(&self, inputs: &[f64], targets: &[f64]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.params.len()];
        let mut tape = Tape::default();
        let n = targets.len() as f64;
        let mut loss = 0.0;
        for (x, &y) in inputs.chunks(self.window).zip(targets) {
            let out = self.forward(x, None, &mut tape);
            let e = out - y;
            loss += e * e / n;
            self.backward(&tape, 2.0 * e / n, &mut grad);
        }
        (loss, grad)
    }

    fn init(config: &BiLstmConfig, horizon: usize, scale: f64, rng: &mut RngStream) -> Self {
        let mut m = Self::zeros(config.layers, config.hidden, config.window, horizon).expect("validated config");
        m.dropout = config.dropout;
        m.scale = scale;
        let hd = config.hidden;
        let bound = 1.0 / sqrt(hd as f64);
        for v in m.params.iter_mut() {
            *v = rng.random_range(-bound..bound);
        }
        // forget-gate bias of 1 helps gradient flow early on
        for l in 0..m.layers {
            let in_dim = m.in_dim(l);
            for dir in 0..2 {
                let b = m.block_offset(l, dir) + G * hd * (in_dim + hd);
                for j in 0..hd {
                    m.params[b + hd + j] = 1.0;
                }
            }
        }
        m
    }
}

#[derive(Default)]
struct DirCache {
    /// post-activation gates per step, `4H` each
    gates: Vec<f64>,
    c: Vec<f64>,
    tc: Vec<f64>,
    h: Vec<f64>,
}

#[derive(Default)]
struct Tape {
    inputs: Vec<Vec<f64>>,
    masks: Vec<Option<Vec<f64>>>,
    dirs: Vec<[DirCache; 2]>,
    feat: Vec<f64>,
    feat_mask: Option<Vec<f64>>,
}

impl Tape {
    fn reset(&mut self, layers: usize) {
        self.inputs.resize_with(layers, Vec::new);
        self.masks.clear();
        self.masks.resize_with(layers, || None);
        self.dirs.resize_with(layers, Default::default);
    }
}

fn dropout_mask(rng: &mut RngStream, n: usize, p: f64) -> Vec<f64> {
    let keep = 1.0 / (1.0 - p);
    (0..n).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).collect()
}

fn dir_forward(p: &[f64], in_dim: usize, hd: usize, xs: &[f64], t_len: usize, reverse: bool, c: &mut DirCache) {
    let g4 = G * hd;
    let (w, rest) = p.split_at(g4 * in_dim);
    let (u, b) = rest.split_at(g4 * hd);
    c.gates.resize(t_len * g4, 0.0);
    c.c.resize(t_len * hd, 0.0);
    c.tc.resize(t_len * hd, 0.0);
    c.h.resize(t_len * hd, 0.0);
    let mut a = vec![0.0; g4];
    for s in 0..t_len {
        let t = if reverse { t_len - 1 - s } else { s };
        let x = &xs[t * in_dim..(t + 1) * in_dim];
        a.copy_from_slice(b);
        for (r, ar) in a.iter_mut().enumerate() {
            *ar += dot(&w[r * in_dim..(r + 1) * in_dim], x);
        }
        if s > 0 {
            let hp = &c.h[(s - 1) * hd..s * hd];
            for (r, ar) in a.iter_mut().enumerate() {
                *ar += dot(&u[r * hd..(r + 1) * hd], hp);
            }
        }
        for j in 0..hd {
            let i = sigmoid(a[j]);
            let f = sigmoid(a[hd + j]);
            let g = tanh(a[2 * hd + j]);
            let o = sigmoid(a[3 * hd + j]);
            let cp = if s > 0 { c.c[(s - 1) * hd + j] } else { 0.0 };
            let cc = f * cp + i * g;
            let tc = tanh(cc);
            let gs = &mut c.gates[s * g4..(s + 1) * g4];
            gs[j] = i;
            gs[hd + j] = f;
            gs[2 * hd + j] = g;
            gs[3 * hd + j] = o;
            c.c[s * hd + j] = cc;
            c.tc[s * hd + j] = tc;
            c.h[s * hd + j] = o * tc;
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn dir_backward(
    p: &[f64],
    gp: &mut [f64],
    in_dim: usize,
    hd: usize,
    xs: &[f64],
    t_len: usize,
    reverse: bool,
    c: &DirCache,
    dh_time: &[f64],
    dx: &mut [f64],
) {
    let g4 = G * hd;
    let (w, rest) = p.split_at(g4 * in_dim);
    let (u, _) = rest.split_at(g4 * hd);
    let (gw, rest) = gp.split_at_mut(g4 * in_dim);
    let (gu, gb) = rest.split_at_mut(g4 * hd);
    let mut dh_next = vec![0.0; hd];
    let mut dc_next = vec![0.0; hd];
    let mut da = vec![0.0; g4];
    for s in (0..t_len).rev() {
        let t = if reverse { t_len - 1 - s } else { s };
        let gs = &c.gates[s * g4..(s + 1) * g4];
        for j in 0..hd {
            let dh = dh_time[t * hd + j] + dh_next[j];
            let (i, f, g, o) = (gs[j], gs[hd + j], gs[2 * hd + j], gs[3 * hd + j]);
            let tc = c.tc[s * hd + j];
            let cp = if s > 0 { c.c[(s - 1) * hd + j] } else { 0.0 };
            let dc = dc_next[j] + dh * o * (1.0 - tc * tc);
            da[j] = dc * g * i * (1.0 - i);
            da[hd + j] = dc * cp * f * (1.0 - f);
            da[2 * hd + j] = dc * i * (1.0 - g * g);
            da[3 * hd + j] = dh * tc * o * (1.0 - o);
            dc_next[j] = dc * f;
        }
        let x = &xs[t * in_dim..(t + 1) * in_dim];
        let dxt = &mut dx[t * in_dim..(t + 1) * in_dim];
        for r in 0..g4 {
            let d = da[r];
            gb[r] += d;
            let wr = &w[r * in_dim..(r + 1) * in_dim];
            let gwr = &mut gw[r * in_dim..(r + 1) * in_dim];
            for k in 0..in_dim {
                gwr[k] += d * x[k];
                dxt[k] += wr[k] * d;
            }
        }
        dh_next.iter_mut().for_each(|v| *v = 0.0);
        if s > 0 {
            let hp = &c.h[(s - 1) * hd..s * hd];
            for r in 0..g4 {
                let d = da[r];
                let ur = &u[r * hd..(r + 1) * hd];
                let gur = &mut gu[r * hd..(r + 1) * hd];
                for k in 0..hd {
                    gur[k] += d * hp[k];
                    dh_next[k] += ur[k] * d;
                }
            }
        }
    }
}

/// Windows of `window` samples and the sample `horizon` after the last one,
/// as displacements from the window's last value (unscaled).
fn build_windows(series: &[&[f64]], window: usize, horizon: usize) -> (Vec<f64>, Vec<f64>) {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for s in series {
        if s.len() < window + horizon {
            continue;
        }
        for end in window - 1..s.len() - horizon {
            let last = s[end];
            xs.extend(s[end + 1 - window..=end].iter().map(|v| v - last));
            ys.push(s[end + horizon] - last);
        }
    }
    (xs, ys)
}

/// Train one network on unwrapped series of a single component.
pub fn train_bilstm(
    series: &[&[f64]],
    config: &BiLstmConfig,
    horizon_samples: usize,
) -> Result<(BiLstmModel, TrainReport), PredictionError> {
    config.validate()?;
    if horizon_samples == 0 {
        return Err(PredictionError::InvalidConfig("horizon must be at least one sample".into()));
    }
    let win = config.window;
    let (mut xs, mut ys) = build_windows(series, win, horizon_samples);
    if ys.is_empty() {
        return Err(PredictionError::NoTrainingData);
    }
    let mut rng = RngStream::new(config.seed, "bilstm");
    let mut order: Vec<usize> = (0..ys.len()).collect();
    order.shuffle(&mut rng);
    order.truncate(config.max_windows.max(1));
    let n = order.len();
    {
        let mut nx = Vec::with_capacity(n * win);
        let mut ny = Vec::with_capacity(n);
        for &i in &order {
            nx.extend_from_slice(&xs[i * win..(i + 1) * win]);
            ny.push(ys[i]);
        }
        xs = nx;
        ys = ny;
    }
    let peak = xs.iter().chain(&ys).fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = if peak > 1e-9 { peak } else { 1.0 };
    xs.iter_mut().for_each(|v| *v /= scale);
    ys.iter_mut().for_each(|v| *v /= scale);

    let n_val = if n >= 2 { ((n as f64 * config.validation_fraction) as usize).min(n - 1) } else { 0 };
    let n_train = n - n_val;

    let mut model = BiLstmModel::init(config, horizon_samples, scale, &mut rng);
    let np = model.params.len();
    let mut velocity = vec![0.0; np];
    let mut grad = vec![0.0; np];
    let mut tape = Tape::default();
    let mut report = TrainReport {
        windows: n,
        best_val_loss: f64::INFINITY,
        ..Default::default()
    };
    let mut best = model.params.clone();
    let mut since_best = 0;
    let mut idx: Vec<usize> = (0..n_train).collect();

    for epoch in 0..config.epochs {
        idx.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in idx.chunks(config.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let bn = batch.len() as f64;
            for &i in batch {
                let out = model.forward(&xs[i * win..(i + 1) * win], Some(&mut rng), &mut tape);
                let e = out - ys[i];
                epoch_loss += e * e;
                model.backward(&tape, 2.0 * e / bn, &mut grad);
            }
            let norm = sqrt(grad.iter().map(|g| g * g).sum::<f64>());
            if !norm.is_finite() {
                return Err(PredictionError::Diverged {
                    epoch,
                    learning_rate: config.learning_rate,
                });
            }
            let clip = if config.clip_norm > 0.0 && norm > config.clip_norm { config.clip_norm / norm } else { 1.0 };
            for ((p, v), g) in model.params.iter_mut().zip(&mut velocity).zip(&grad) {
                *v = config.momentum * *v - config.learning_rate * clip * g;
                *p += *v;
            }
        }
        let train_loss = epoch_loss / n_train as f64;
        if !train_loss.is_finite() {
            return Err(PredictionError::Diverged {
                epoch,
                learning_rate: config.learning_rate,
            });
        }
        let val_loss = if n_val > 0 {
            (n_train..n)
                .map(|i| {
                    let e = model.forward(&xs[i * win..(i + 1) * win], None, &mut tape) - ys[i];
                    e * e
                })
                .sum::<f64>()
                / n_val as f64
        } else {
            train_loss
        };
        report.train_loss.push(train_loss);
        report.val_loss.push(val_loss);
        if val_loss < report.best_val_loss {
            report.best_val_loss = val_loss;
            report.best_epoch = epoch;
            best.copy_from_slice(&model.params);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                report.stopped_early = true;
                break;
            }
        }
    }
    model.params = best;
    Ok((model, report))
}

/// Forecast `horizon` samples past the end of `req.history`.
pub fn predict_bilstm(model: &BiLstmModel, req: &ForecastRequest<'_>) -> Result<f64, PredictionError> {
    let h = req.history;
    if h.len() < model.window {
        return Err(PredictionError::InsufficientHistory {
            needed: model.window,
            got: h.len(),
        });
    }
    if req.horizon_samples != model.horizon {
        return Err(PredictionError::InvalidConfig(format!(
            "model trained for horizon {}, asked for {}",
            model.horizon, req.horizon_samples
        )));
    }
    let last = h[h.len() - 1];
    let x: Vec<f64> = h[h.len() - model.window..].iter().map(|v| (v - last) / model.scale).collect();
    Ok(last + model.forward_normalized(&x) * model.scale)
}
