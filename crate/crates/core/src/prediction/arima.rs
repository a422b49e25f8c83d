//! ARIMA(p, d, q) by conditional sum of squares.
//!
//! The d-times differenced series is demeaned; AR and MA coefficients start
//! from a Hannan-Rissanen regression and are refined with BFGS on a
//! central-difference gradient of the normalised CSS objective.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{ForecastRequest, PredictionError};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArimaOrder {
    pub p: usize,
    pub d: usize,
    pub q: usize,
}

impl ArimaOrder {
    pub const fn new(p: usize, d: usize, q: usize) -> Self {
        Self { p, d, q }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArimaModel {
    pub order: ArimaOrder,
    pub ar: Vec<f64>,
    pub ma: Vec<f64>,
    /// Mean of the differenced series (drift when `d > 0`).
    pub mean: f64,
    /// Innovation variance, degrees².
    pub sigma2: f64,
    fitted: bool,
}

impl ArimaModel {
    /// Model with explicit coefficients.
    pub fn new(order: ArimaOrder, ar: Vec<f64>, ma: Vec<f64>, mean: f64, sigma2: f64) -> Result<Self, PredictionError> {
        if ar.len() != order.p || ma.len() != order.q {
            return Err(PredictionError::InvalidConfig(format!(
                "order {order:?} does not match {} AR / {} MA coefficients",
                ar.len(),
                ma.len()
            )));
        }
        if !ar.iter().chain(&ma).chain([&mean, &sigma2]).all(|v| v.is_finite()) {
            return Err(PredictionError::InvalidConfig("non-finite coefficient".into()));
        }
        Ok(Self {
            order,
            ar,
            ma,
            mean,
            sigma2,
            fitted: true,
        })
    }

    /// Placeholder that refuses to forecast until replaced by a fit.
    pub fn unfitted(order: ArimaOrder) -> Self {
        Self {
            order,
            ar: vec![0.0; order.p],
            ma: vec![0.0; order.q],
            mean: 0.0,
            sigma2: 0.0,
            fitted: false,
        }
    }

    pub fn is_fitted(&self) -> bool {
        self.fitted
    }

    pub fn min_history(&self) -> usize {
        (self.order.p + self.order.d).max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Infinity-norm bound on the gradient of the normalised objective.
    pub gradient_tolerance: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            gradient_tolerance: 1e-6,
        }
    }
}

pub(crate) fn difference(x: &[f64], d: usize) -> Vec<f64> {
    let mut z = x.to_vec();
    for _ in 0..d {
        z = z.windows(2).map(|w| w[1] - w[0]).collect();
    }
    z
}

/// Conditional residuals of a demeaned series: `e_t = 0` for `t < p`.
fn residuals(w: &[f64], ar: &[f64], ma: &[f64], out: &mut Vec<f64>) {
    let p = ar.len();
    out.clear();
    out.resize(w.len(), 0.0);
    for t in p..w.len() {
        let mut e = w[t];
        for (i, a) in ar.iter().enumerate() {
            e -= a * w[t - 1 - i];
        }
        for (k, m) in ma.iter().enumerate() {
            if t > k {
                e -= m * out[t - 1 - k];
            }
        }
        out[t] = e;
    }
}

struct Css<'a> {
    w: &'a [f64],
    p: usize,
    scale: f64,
    buf: Vec<f64>,
}

impl Css<'_> {
    fn eval(&mut self, theta: &[f64]) -> f64 {
        let (ar, ma) = theta.split_at(self.p);
        residuals(self.w, ar, ma, &mut self.buf);
        let n = (self.w.len() - self.p) as f64;
        let ss: f64 = self.buf[self.p..].iter().map(|e| e * e).sum();
        let f = ss / n / self.scale;
        if f.is_finite() {
            f
        } else {
            f64::INFINITY
        }
    }

    fn gradient(&mut self, theta: &[f64], g: &mut [f64]) {
        let mut x = theta.to_vec();
        for i in 0..theta.len() {
            let h = 1e-6 * theta[i].abs().max(1.0);
            x[i] = theta[i] + h;
            let fp = self.eval(&x);
            x[i] = theta[i] - h;
            let fm = self.eval(&x);
            x[i] = theta[i];
            g[i] = (fp - fm) / (2.0 * h);
        }
    }
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n)
}

/// Fit ARIMA(p, d, q) to `series` by conditional least squares.
pub fn fit_arima(series: &[f64], order: ArimaOrder, opts: FitOptions) -> Result<ArimaModel, PredictionError> {
    let ArimaOrder { p, d, q } = order;
    let z = difference(series, d);
    let needed = (10 * (p + q)).max(2);
    if z.len() < needed {
        return Err(PredictionError::SeriesTooShort { needed, got: z.len() });
    }
    let (mean, var) = mean_var(&z);
    if !var.is_finite() {
        return Err(PredictionError::NonStationary("non-finite variance".into()));
    }
    let half = z.len() / 2;
    let (_, v1) = mean_var(&z[..half]);
    let (_, v2) = mean_var(&z[half..]);
    if v2 > 100.0 * v1.max(1e-12) && v2 > 1e-9 {
        return Err(PredictionError::NonStationary(format!(
            "variance grows from {v1:e} to {v2:e} across the series; increase d"
        )));
    }
    let w: Vec<f64> = z.iter().map(|v| v - mean).collect();
    let k = p + q;

    let mut css = Css {
        w: &w,
        p,
        scale: var.max(1e-12),
        buf: Vec::new(),
    };

    let mut theta = if k == 0 { Vec::new() } else { initial_guess(&w, p, q) };
    if k > 0 {
        bfgs(&mut css, &mut theta, opts)?;
    }

    let f = css.eval(&theta);
    let sigma2 = f * css.scale;
    let (ar, ma) = theta.split_at(p);
    ArimaModel::new(order, ar.to_vec(), ma.to_vec(), mean, sigma2)
}

/// Hannan-Rissanen: long AR for innovations, then OLS on lags of the
/// series and of the estimated innovations.
fn initial_guess(w: &[f64], p: usize, q: usize) -> Vec<f64> {
    let n = w.len();
    let zeros = || vec![0.0; p + q];
    if q == 0 {
        let rows: Vec<Vec<f64>> = (p..n).map(|t| (1..=p).map(|i| w[t - i]).collect()).collect();
        return linalg::least_squares(&rows, &w[p..]).unwrap_or_else(zeros);
    }
    let m = (p.max(q) + 8).min(n / 4).max(1);
    let rows: Vec<Vec<f64>> = (m..n).map(|t| (1..=m).map(|i| w[t - i]).collect()).collect();
    let Some(long_ar) = linalg::least_squares(&rows, &w[m..]) else {
        return zeros();
    };
    let mut innov = vec![0.0; n];
    for t in m..n {
        innov[t] = w[t] - (1..=m).map(|i| long_ar[i - 1] * w[t - i]).sum::<f64>();
    }
    let start = m + q.max(p);
    if start + p + q >= n {
        return zeros();
    }
    let rows: Vec<Vec<f64>> = (start..n)
        .map(|t| (1..=p).map(|i| w[t - i]).chain((1..=q).map(|j| innov[t - j])).collect())
        .collect();
    let mut theta = linalg::least_squares(&rows, &w[start..]).unwrap_or_else(zeros);
    let ma_sum: f64 = theta[p..].iter().map(|v| v.abs()).sum();
    if ma_sum >= 0.95 {
        for v in &mut theta[p..] {
            *v *= 0.9 / ma_sum;
        }
    }
    theta
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn bfgs(css: &mut Css<'_>, x: &mut Vec<f64>, opts: FitOptions) -> Result<usize, PredictionError> {
    let k = x.len();
    let mut hinv = identity(k);
    let mut f = css.eval(x);
    let mut g = vec![0.0; k];
    css.gradient(x, &mut g);
    let mut resets = 0;
    for iter in 0..opts.max_iterations {
        if inf_norm(&g) < opts.gradient_tolerance {
            return Ok(iter);
        }
        let mut dir: Vec<f64> = (0..k).map(|i| -(0..k).map(|j| hinv[i * k + j] * g[j]).sum::<f64>()).collect();
        let mut slope: f64 = dir.iter().zip(&g).map(|(a, b)| a * b).sum();
        if !(slope < 0.0) {
            hinv = identity(k);
            dir = g.iter().map(|v| -v).collect();
            slope = -g.iter().map(|v| v * v).sum::<f64>();
        }
        let dn = libm::sqrt(dir.iter().map(|v| v * v).sum::<f64>());
        let mut alpha = if dn > 1.0 { 1.0 / dn } else { 1.0 };
        let mut accepted = None;
        for _ in 0..50 {
            let xn: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + alpha * b).collect();
            let fnew = css.eval(&xn);
            if fnew <= f + 1e-4 * alpha * slope {
                accepted = Some((xn, fnew));
                break;
            }
            alpha *= 0.5;
        }
        let Some((xn, fnew)) = accepted else {
            if resets < 2 {
                resets += 1;
                hinv = identity(k);
                continue;
            }
            // no further descent possible at numerical precision
            if inf_norm(&g) < 1e3 * opts.gradient_tolerance {
                return Ok(iter);
            }
            return Err(PredictionError::NotConverged {
                iterations: iter,
                grad_norm: inf_norm(&g),
                objective: f,
            });
        };
        let mut gn = vec![0.0; k];
        css.gradient(&xn, &mut gn);
        let s: Vec<f64> = xn.iter().zip(x.iter()).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        if sy > 1e-14 {
            bfgs_update(&mut hinv, &s, &y, sy);
        }
        *x = xn;
        f = fnew;
        g = gn;
    }
    if inf_norm(&g) < opts.gradient_tolerance {
        return Ok(opts.max_iterations);
    }
    Err(PredictionError::NotConverged {
        iterations: opts.max_iterations,
        grad_norm: inf_norm(&g),
        objective: f,
    })
}

fn identity(k: usize) -> Vec<f64> {
    let mut m = vec![0.0; k * k];
    for i in 0..k {
        m[i * k + i] = 1.0;
    }
    m
}

fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let k = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..k).map(|i| (0..k).map(|j| h[i * k + j] * y[j]).sum()).collect();
    let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
    for i in 0..k {
        for j in 0..k {
            h[i * k + j] += (1.0 + rho * yhy) * rho * s[i] * s[j] - rho * (hy[i] * s[j] + s[i] * hy[j]);
        }
    }
}

/// h-step forecast: one-step recursion iterated with future innovations set
/// to zero, then integrated back `d` times.
pub fn predict_arima(model: &ArimaModel, req: &ForecastRequest<'_>) -> Result<f64, PredictionError> {
    if !model.fitted {
        return Err(PredictionError::Unfitted);
    }
    let x = req.history;
    if x.len() < model.min_history() {
        return Err(PredictionError::InsufficientHistory {
            needed: model.min_history(),
            got: x.len(),
        });
    }
    let ArimaOrder { p, d, q: _ } = model.order;
    let h = req.horizon_samples;
    if h == 0 {
        return Ok(x[x.len() - 1]);
    }

    // last value of every differencing level, for integration
    let mut levels = Vec::with_capacity(d);
    let mut z = x.to_vec();
    for _ in 0..d {
        levels.push(z[z.len() - 1]);
        z = z.windows(2).map(|w| w[1] - w[0]).collect();
    }
    let mut w: Vec<f64> = z.iter().map(|v| v - model.mean).collect();
    let mut e = Vec::new();
    residuals(&w, &model.ar, &model.ma, &mut e);

    let n = w.len();
    let mut out = 0.0;
    for j in 0..h {
        let t = n + j;
        let mut next = 0.0;
        for (i, a) in model.ar.iter().enumerate() {
            if t > i {
                next += a * w[t - 1 - i];
            }
        }
        for (k, m) in model.ma.iter().enumerate() {
            let idx = t as isize - 1 - k as isize;
            if idx >= p as isize && (idx as usize) < n {
                next += m * e[idx as usize];
            }
        }
        w.push(next);
        // integrate this step through every differencing level
        let mut v = next + model.mean;
        for lvl in levels.iter_mut().rev() {
            v += *lvl;
            *lvl = v;
        }
        out = v;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::RngStream;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn ar1(phi: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = RngStream::new(seed, "ar1");
        let noise = Normal::new(0.0, 1.0).unwrap();
        let mut x = vec![0.0; n];
        for t in 1..n {
            x[t] = phi * x[t - 1] + noise.sample(&mut rng);
        }
        x
    }

    #[test]
    fn recovers_ar1_coefficient() {
        let x = ar1(0.8, 5000, 3);
        let m = fit_arima(&x, ArimaOrder::new(1, 0, 0), FitOptions::default()).unwrap();
        assert!((m.ar[0] - 0.8).abs() < 0.05, "{}", m.ar[0]);
        assert!((m.sigma2 - 1.0).abs() < 0.1);
    }

    #[test]
    fn recovers_arma11() {
        // x_t = 0.6 x_{t-1} + e_t + 0.3 e_{t-1}
        let mut rng = RngStream::new(5, "arma");
        let noise = Normal::new(0.0, 1.0).unwrap();
        let mut x = vec![0.0; 8000];
        let mut prev_e = 0.0;
        for t in 1..x.len() {
            let e = noise.sample(&mut rng);
            x[t] = 0.6 * x[t - 1] + e + 0.3 * prev_e;
            prev_e = e;
        }
        let m = fit_arima(&x, ArimaOrder::new(1, 0, 1), FitOptions::default()).unwrap();
        assert!((m.ar[0] - 0.6).abs() < 0.05, "{:?}", m.ar);
        assert!((m.ma[0] - 0.3).abs() < 0.05, "{:?}", m.ma);
    }

    #[test]
    fn white_noise_is_mean_predictor() {
        let mut rng = RngStream::new(9, "wn");
        let x: Vec<f64> = (0..500).map(|_| 3.0 + rng.random_range(-1.0..1.0)).collect();
        let m = fit_arima(&x, ArimaOrder::new(0, 0, 0), FitOptions::default()).unwrap();
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        for h in [1, 5, 20] {
            let f = predict_arima(&m, &ForecastRequest::new(&x, h, 0.015)).unwrap();
            assert!((f - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn differencing_removes_linear_trend() {
        let x: Vec<f64> = (0..200).map(|t| 5.0 + 0.75 * t as f64).collect();
        let m = fit_arima(&x, ArimaOrder::new(0, 1, 0), FitOptions::default()).unwrap();
        let w: Vec<f64> = difference(&x, 1).iter().map(|v| v - m.mean).collect();
        let mean_resid = w.iter().sum::<f64>() / w.len() as f64;
        assert!(mean_resid.abs() < 1e-12);
        let f = predict_arima(&m, &ForecastRequest::new(&x, 3, 0.015)).unwrap();
        assert!((f - (5.0 + 0.75 * 202.0)).abs() < 1e-9);
    }

    #[test]
    fn hand_recursion() {
        let m = ArimaModel::new(ArimaOrder::new(1, 0, 0), vec![0.5], vec![], 0.0, 1.0).unwrap();
        let h = [1.0, 3.0, 8.0];
        assert_eq!(predict_arima(&m, &ForecastRequest::new(&h, 1, 0.015)).unwrap(), 4.0);
        assert_eq!(predict_arima(&m, &ForecastRequest::new(&h, 2, 0.015)).unwrap(), 2.0);
    }

    #[test]
    fn unfitted_and_short_inputs_fail() {
        let m = ArimaModel::unfitted(ArimaOrder::new(1, 0, 0));
        assert_eq!(predict_arima(&m, &ForecastRequest::new(&[1.0], 1, 0.015)), Err(PredictionError::Unfitted));
        let m = ArimaModel::new(ArimaOrder::new(6, 1, 2), vec![0.0; 6], vec![0.0; 2], 0.0, 1.0).unwrap();
        assert!(matches!(
            predict_arima(&m, &ForecastRequest::new(&[1.0; 6], 1, 0.015)),
            Err(PredictionError::InsufficientHistory { needed: 7, got: 6 })
        ));
        assert!(matches!(
            fit_arima(&[0.0; 50], ArimaOrder::new(6, 1, 2), FitOptions::default()),
            Err(PredictionError::SeriesTooShort { needed: 80, got: 49 })
        ));
        assert!(ArimaModel::new(ArimaOrder::new(2, 0, 0), vec![0.1], vec![], 0.0, 1.0).is_err());
    }

    #[test]
    fn iteration_cap_reports_diagnostics() {
        let x = ar1(0.5, 2000, 11);
        let opts = FitOptions {
            max_iterations: 1,
            gradient_tolerance: 1e-14,
        };
        match fit_arima(&x, ArimaOrder::new(2, 0, 2), opts) {
            Err(PredictionError::NotConverged { iterations, grad_norm, .. }) => {
                assert_eq!(iterations, 1);
                assert!(grad_norm > 0.0);
            }
            other => panic!("expected NotConverged, got {other:?}"),
        }
    }

    #[test]
    fn explosive_series_flagged() {
        let x: Vec<f64> = (0..400).map(|t| 1.02f64.powi(t)).collect();
        assert!(matches!(
            fit_arima(&x, ArimaOrder::new(1, 0, 0), FitOptions::default()),
            Err(PredictionError::NonStationary(_))
        ));
    }

    /// Independent forecast in levels: expand (1 - B)^d φ(B) into one AR
    /// polynomial on the raw series and run the recursion there.
    fn level_form_forecast(m: &ArimaModel, x: &[f64], h: usize) -> f64 {
        let ArimaOrder { p, d, q } = m.order;
        // phi(B) = 1 - sum a_i B^i ; multiply by (1 - B) d times
        let mut poly = vec![1.0];
        poly.extend(m.ar.iter().map(|a| -a));
        for _ in 0..d {
            let mut next = vec![0.0; poly.len() + 1];
            for (i, c) in poly.iter().enumerate() {
                next[i] += c;
                next[i + 1] -= c;
            }
            poly = next;
        }
        let lag = poly.len() - 1;
        let phi1: f64 = 1.0 - m.ar.iter().sum::<f64>();
        let c = m.mean * phi1;
        let n = x.len();
        let mut e = vec![0.0; n];
        for t in (p + d)..n {
            let mut v = x[t] - c;
            for i in 1..=lag {
                if t >= i {
                    v += poly[i] * x[t - i];
                }
            }
            for k in 1..=q {
                if t >= p + d + k {
                    v -= m.ma[k - 1] * e[t - k];
                }
            }
            e[t] = v;
        }
        let mut xs = x.to_vec();
        for j in 0..h {
            let t = n + j;
            let mut v = c;
            for i in 1..=lag {
                v -= poly[i] * xs[t - i];
            }
            for k in 1..=q {
                if t - k < n && t - k >= p + d {
                    v += m.ma[k - 1] * e[t - k];
                }
            }
            xs.push(v);
        }
        xs[n + h - 1]
    }

    #[test]
    fn forecast_matches_level_form_oracle() {
        // smooth swinging series with AR noise, like a yaw trace
        let mut rng = RngStream::new(21, "swing");
        let noise = Normal::new(0.0, 0.4).unwrap();
        let mut x = Vec::with_capacity(3000);
        let mut drift = 0.0;
        for t in 0..3000 {
            drift = 0.9 * drift + noise.sample(&mut rng);
            x.push(25.0 * libm::sin(t as f64 * 0.02) + drift);
        }
        let m = fit_arima(&x[..2000], ArimaOrder::new(6, 1, 2), FitOptions::default()).unwrap();
        for end in [2100, 2500, 2999] {
            let hist = &x[end - 300..end];
            for h in [1, 2, 4, 6] {
                let got = predict_arima(&m, &ForecastRequest::new(hist, h, 0.015)).unwrap();
                let want = level_form_forecast(&m, hist, h);
                assert!((got - want).abs() < 1e-9, "h={h}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn stationary_forecast_reverts_to_mean() {
        let m = ArimaModel::new(ArimaOrder::new(2, 0, 0), vec![0.5, 0.3], vec![], 4.0, 1.0).unwrap();
        let hist = [10.0, 20.0, 30.0];
        let f = predict_arima(&m, &ForecastRequest::new(&hist, 400, 0.015)).unwrap();
        assert!((f - 4.0).abs() < 1e-9);
    }
}
