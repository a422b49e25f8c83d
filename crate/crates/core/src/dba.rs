//! Bandwidth-allocation control plane: per-cycle byte budget, the
//! limited-service and predictive grant rules, grant timing within a cycle,
//! the pre-grant lead, the polling-cycle rule of thumb, and the closed-form
//! latency and jitter used as simulation oracles.
//!
//! Byte quantities are `f64` so fractional budgets (189,062.5 B) survive.

use alloc::vec::Vec;

use libm::{ceil, floor};
use serde::{Deserialize, Serialize};

use crate::traffic::TrafficClass;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DbaError {
    #[error("polling cycle {t_poll} s does not exceed {n_onu} guard times of {t_guard} s")]
    CycleTooShort { t_poll: f64, n_onu: usize, t_guard: f64 },
    #[error("invalid polling config: {0}")]
    Invalid(&'static str),
    #[error("traffic period mean {mean} s must exceed its std {std} s")]
    LeadUndefined { mean: f64, std: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DbaMode {
    /// Limited service: grant what was reported, capped.
    Ls,
    /// Human-machine coordinated: grant predicted demand ahead of arrival.
    Hmc,
}

impl DbaMode {
    pub fn name(self) -> &'static str {
        match self {
            DbaMode::Ls => "ls",
            DbaMode::Hmc => "hmc",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PollingConfig {
    /// maximum polling cycle, s
    pub t_poll: f64,
    /// guard time between bursts, s
    pub t_guard: f64,
    pub n_onu: usize,
    /// upstream rate, bytes/s
    pub rate: f64,
    /// round-trip time per ONU, s; may be empty
    pub rtts: Vec<f64>,
}

impl PollingConfig {
    pub fn new(t_poll: f64, t_guard: f64, n_onu: usize, rate: f64, rtts: Vec<f64>) -> Result<Self, DbaError> {
        let c = Self {
            t_poll,
            t_guard,
            n_onu,
            rate,
            rtts,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), DbaError> {
        if self.n_onu == 0 {
            return Err(DbaError::Invalid("at least one ONU is required"));
        }
        if !(self.rate > 0.0) || !(self.t_guard >= 0.0) || !(self.t_poll > 0.0) {
            return Err(DbaError::Invalid("rate and cycle must be positive, guard nonnegative"));
        }
        if !self.rtts.is_empty() && self.rtts.len() != self.n_onu {
            return Err(DbaError::Invalid("one RTT per ONU expected"));
        }
        if self.rtts.iter().any(|r| !(*r >= 0.0)) {
            return Err(DbaError::Invalid("RTTs must be nonnegative"));
        }
        if self.t_poll <= self.n_onu as f64 * self.t_guard {
            return Err(DbaError::CycleTooShort {
                t_poll: self.t_poll,
                n_onu: self.n_onu,
                t_guard: self.t_guard,
            });
        }
        Ok(())
    }

    fn rtt(&self, k: usize) -> f64 {
        self.rtts.get(k).copied().unwrap_or(0.0)
    }
}

/// Per-ONU per-cycle byte budget `((T_poll − N·T_g)/N)·R`.
pub fn bw_max(cfg: &PollingConfig) -> Result<f64, DbaError> {
    cfg.validate()?;
    let n = cfg.n_onu as f64;
    Ok((cfg.t_poll - n * cfg.t_guard) / n * cfg.rate)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RequestMsg {
    pub onu: usize,
    /// pending bytes
    pub bytes: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrantMsg {
    pub onu: usize,
    pub bytes: f64,
    /// transmission start, s; zero until scheduled
    pub start: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictedDemand {
    pub onu: usize,
    pub class: TrafficClass,
    /// bytes expected for the target cycle
    pub bytes: f64,
}

/// `min(request, BW_max)`.
pub fn ls_dba_grant(req: &RequestMsg, bw_max: f64) -> GrantMsg {
    GrantMsg {
        onu: req.onu,
        bytes: req.bytes.max(0.0).min(bw_max),
        start: 0.0,
    }
}

/// `min(predicted, BW_max)`; whatever exceeds the cap is left for the
/// following cycle's report.
pub fn hmc_dba_grant(pred: &PredictedDemand, bw_max: f64) -> GrantMsg {
    GrantMsg {
        onu: pred.onu,
        bytes: pred.bytes.max(0.0).min(bw_max),
        start: 0.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreGrantLead {
    /// seconds after the previous burst at which granting starts
    pub offset: f64,
    /// index of the cycle (counted from the previous burst) covering it
    pub cycle_index: u64,
}

/// Granting for the next burst starts `mean − std` after the previous one.
pub fn pre_grant_schedule(mean: f64, std: f64, cycle: f64) -> Result<PreGrantLead, DbaError> {
    if !(mean > std) || !(std >= 0.0) {
        return Err(DbaError::LeadUndefined { mean, std });
    }
    if !(cycle > 0.0) {
        return Err(DbaError::Invalid("cycle must be positive"));
    }
    let offset = mean - std;
    Ok(PreGrantLead {
        offset,
        cycle_index: floor(offset / cycle + 1e-12) as u64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrantSchedule {
    pub starts: Vec<f64>,
    /// the last window ends after the cycle
    pub overload: bool,
}

/// Start times of the upstream windows of one cycle. The first ONU starts
/// at `cycle_start`; each next one after the previous burst, a guard time
/// and the RTT difference.
pub fn grant_times(grants: &[f64], cfg: &PollingConfig, cycle_start: f64) -> GrantSchedule {
    let mut starts = Vec::with_capacity(grants.len());
    let mut t = cycle_start;
    for k in 0..grants.len() {
        if k > 0 {
            t += grants[k - 1] / cfg.rate + cfg.t_guard + cfg.rtt(k) - cfg.rtt(k - 1);
        }
        starts.push(t);
    }
    let end = match (starts.last(), grants.last()) {
        (Some(s), Some(g)) => s + g / cfg.rate + cfg.t_guard,
        _ => cycle_start,
    };
    GrantSchedule {
        starts,
        overload: end > cycle_start + cfg.t_poll * (1.0 + 1e-12),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyModelInput {
    /// predicted minus actual frame size, bytes
    pub rho: f64,
    pub bw_max: f64,
    pub t_poll: f64,
    /// transmission plus propagation of the last burst, s
    pub t_tx: f64,
}

/// Extra cycles needed to carry an under-prediction of `|rho|` bytes.
pub fn extra_cycles(rho: f64, bw_max: f64) -> f64 {
    if rho < 0.0 {
        ceil(-rho / bw_max)
    } else {
        0.0
    }
}

/// `T_poll·(1 + 1{ρ<0}·⌈|ρ|/BW_max⌉) + T_tx`.
pub fn analytic_latency(input: &LatencyModelInput) -> Result<f64, DbaError> {
    if !(input.bw_max > 0.0) {
        return Err(DbaError::Invalid("BW_max must be positive"));
    }
    Ok(input.t_poll * (1.0 + extra_cycles(input.rho, input.bw_max)) + input.t_tx)
}

/// Variance of the cycle-quantised latency over prediction-error samples,
/// seconds². Population variance; `None` for an empty sample.
pub fn analytic_jitter(rhos: &[f64], bw_max: f64, t_poll: f64) -> Option<f64> {
    if rhos.is_empty() || !(bw_max > 0.0) {
        return None;
    }
    let l: Vec<f64> = rhos.iter().map(|&r| t_poll * (1.0 + extra_cycles(r, bw_max))).collect();
    let n = l.len() as f64;
    let m = l.iter().sum::<f64>() / n;
    Some(l.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PollingBound {
    /// `2·N·T_RTT + T_g·(N − 1)`, s
    pub bound: f64,
    /// bound minus T_poll
    pub slack: f64,
    pub pass: bool,
}

/// Rule-of-thumb upper bound on the polling cycle, using the largest RTT.
pub fn polling_bound_check(cfg: &PollingConfig) -> Result<PollingBound, DbaError> {
    if cfg.rtts.is_empty() {
        return Err(DbaError::Invalid("RTTs are required for the polling bound"));
    }
    let n = cfg.n_onu as f64;
    let rtt = cfg.rtts.iter().cloned().fold(0.0, f64::max);
    let bound = 2.0 * n * rtt + cfg.t_guard * (n - 1.0);
    let slack = bound - cfg.t_poll;
    Ok(PollingBound {
        bound,
        slack,
        pass: slack >= 0.0,
    })
}

/// One row of the per-cycle grant log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrantLogEntry {
    /// "fttr" or "fttp"
    pub stage: &'static str,
    pub pon: u32,
    pub cycle: u64,
    pub onu: u32,
    pub requested: f64,
    pub predicted: f64,
    pub granted: f64,
    pub start_time: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::FIBER_DELAY_PER_M;
    use alloc::vec;
    use proptest::prelude::*;

    fn fttr() -> PollingConfig {
        PollingConfig::new(2e-3, 2e-6, 8, 1.25e9, vec![]).unwrap()
    }

    #[test]
    fn bw_max_hand_arithmetic() {
        assert!((bw_max(&fttr()).unwrap() - 310_000.0).abs() < 1e-6);
        let fttp = PollingConfig::new(0.5e-3, 1e-6, 16, 6.25e9, vec![]).unwrap();
        assert!((bw_max(&fttp).unwrap() - 189_062.5).abs() < 1e-6);
        let one = PollingConfig::new(1e-3, 0.0, 1, 1e9, vec![]).unwrap();
        assert_eq!(bw_max(&one).unwrap(), 1e6);
        assert!(PollingConfig::new(1e-3, 1e-3, 1, 1e9, vec![]).is_err());
    }

    #[test]
    fn grant_rules() {
        let cap = 310_000.0;
        assert_eq!(ls_dba_grant(&RequestMsg { onu: 0, bytes: 100e3 }, cap).bytes, 100e3);
        assert_eq!(ls_dba_grant(&RequestMsg { onu: 0, bytes: 500e3 }, cap).bytes, cap);
        assert_eq!(ls_dba_grant(&RequestMsg { onu: 0, bytes: 0.0 }, cap).bytes, 0.0);
        let p = |b| PredictedDemand {
            onu: 1,
            class: TrafficClass::Xr,
            bytes: b,
        };
        assert_eq!(hmc_dba_grant(&p(200e3), cap).bytes, 200e3);
        assert_eq!(hmc_dba_grant(&p(400e3), cap).bytes, cap);
    }

    #[test]
    fn lead_offsets() {
        let l = pre_grant_schedule(33.13e-3, 1.76e-3, 2e-3).unwrap();
        assert!((l.offset - 31.37e-3).abs() < 1e-12);
        assert_eq!(l.cycle_index, 15);
        assert_eq!(pre_grant_schedule(0.02, 0.0, 2e-3).unwrap().offset, 0.02);
        assert!((pre_grant_schedule(14.13e-3, 1.96e-3, 2e-3).unwrap().offset - 12.17e-3).abs() < 1e-12);
        assert!(pre_grant_schedule(1.0, 2.0, 2e-3).is_err());
    }

    #[test]
    fn window_starts() {
        let mut cfg = PollingConfig::new(2e-3, 2e-6, 2, 1.25e9, vec![]).unwrap();
        let s = grant_times(&[1250.0, 2500.0], &cfg, 1.0);
        assert!((s.starts[1] - s.starts[0] - (1e-6 + 2e-6)).abs() < 1e-15);
        assert!(!s.overload);
        cfg.rtts = vec![10e-6, 14e-6];
        let s2 = grant_times(&[1250.0, 2500.0], &cfg, 1.0);
        assert!((s2.starts[1] - s.starts[1] - 4e-6).abs() < 1e-15);
        let z = grant_times(&[0.0; 4], &fttr(), 0.0);
        for w in z.starts.windows(2) {
            assert!((w[1] - w[0] - 2e-6).abs() < 1e-18);
        }
        let big = grant_times(&[2e6, 2e6], &PollingConfig::new(2e-3, 2e-6, 2, 1.25e9, vec![]).unwrap(), 0.0);
        assert!(big.overload);
    }

    proptest! {
        #[test]
        fn capped_grants_fit_cycle(reqs in proptest::collection::vec(0.0f64..2e6, 1..16)) {
            let cfg = PollingConfig::new(2e-3, 2e-6, reqs.len(), 1.25e9, vec![]).unwrap();
            let cap = bw_max(&cfg).unwrap();
            let g: Vec<f64> = reqs.iter().enumerate().map(|(k, r)| ls_dba_grant(&RequestMsg { onu: k, bytes: *r }, cap).bytes).collect();
            prop_assert!(g.iter().all(|x| *x <= cap));
            let s = grant_times(&g, &cfg, 0.0);
            prop_assert!(!s.overload);
        }

        #[test]
        fn latency_monotone(rho in -5e6f64..5e6, d in 0.0f64..1e6, cap in 1e4f64..1e6) {
            let base = LatencyModelInput { rho, bw_max: cap, t_poll: 2e-3, t_tx: 1e-4 };
            let more_cap = LatencyModelInput { bw_max: cap * 1.5, ..base };
            prop_assert!(analytic_latency(&more_cap).unwrap() <= analytic_latency(&base).unwrap());
            if rho < 0.0 {
                let worse = LatencyModelInput { rho: rho - d, ..base };
                prop_assert!(analytic_latency(&worse).unwrap() >= analytic_latency(&base).unwrap());
            }
        }
    }

    #[test]
    fn latency_examples() {
        let cap = 310_000.0;
        let l = |rho| {
            analytic_latency(&LatencyModelInput {
                rho,
                bw_max: cap,
                t_poll: 2e-3,
                t_tx: 5e-5,
            })
            .unwrap()
        };
        assert!((l(0.0) - 2.05e-3).abs() < 1e-15);
        assert!((l(1000.0) - 2.05e-3).abs() < 1e-15);
        assert!((l(-2.5 * cap) - (2e-3 + 3.0 * 2e-3 + 5e-5)).abs() < 1e-15);
    }

    #[test]
    fn jitter_examples() {
        let cap = 310_000.0;
        let t = 2e-3;
        assert_eq!(analytic_jitter(&[0.0, 5.0, 100.0], cap, t), Some(0.0));
        let two = analytic_jitter(&[0.0, -1.5 * cap], cap, t).unwrap();
        assert!((two - t * t).abs() < 1e-18);
        let rhos = [-0.2 * cap, 0.3 * cap, -1.1 * cap, -3.7 * cap, 0.0];
        let lat: Vec<f64> = rhos
            .iter()
            .map(|&rho| {
                analytic_latency(&LatencyModelInput {
                    rho,
                    bw_max: cap,
                    t_poll: t,
                    t_tx: 0.0,
                })
                .unwrap()
            })
            .collect();
        let m = lat.iter().sum::<f64>() / 5.0;
        let v = lat.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 5.0;
        assert!((analytic_jitter(&rhos, cap, t).unwrap() - v).abs() < 1e-18);
        assert_eq!(analytic_jitter(&[], cap, t), None);
    }

    #[test]
    fn polling_bounds() {
        let rtt = 2.0 * 20_000.0 * FIBER_DELAY_PER_M;
        let cfg = PollingConfig::new(0.5e-3, 1e-6, 16, 6.25e9, vec![rtt; 16]).unwrap();
        let b = polling_bound_check(&cfg).unwrap();
        assert!((b.bound - 6.415e-3).abs() < 1e-12);
        assert!(b.pass);
        let tight = PollingConfig::new(10e-3, 1e-6, 16, 6.25e9, vec![rtt; 16]).unwrap();
        let b = polling_bound_check(&tight).unwrap();
        assert!(!b.pass && b.slack < 0.0);
        let one = PollingConfig::new(0.1e-3, 5e-6, 1, 6.25e9, vec![rtt]).unwrap();
        assert!((polling_bound_check(&one).unwrap().bound - 2.0 * rtt).abs() < 1e-15);
    }
}
