//! Beta-binomial posterior screening rules for toxicity and futility.
//!
//! Both rules stop when a posterior tail probability strictly exceeds its
//! cutoff. Because the posterior tail is monotone in the event count, each
//! (n, limit, cutoff) triple reduces to an integer stopping boundary, which
//! [`BoundaryTable`] precomputes for the simulation hot loop.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};
use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};

/// Acceptability limits and posterior cutoffs for one indication.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonitoringLimits {
    /// Maximum acceptable toxicity probability.
    pub tox_limit: f64,
    /// Minimum acceptable response probability.
    pub resp_floor: f64,
    pub c_tox: f64,
    pub c_fut_stage1: f64,
    pub c_fut_stage2: f64,
    pub prior_a: f64,
    pub prior_b: f64,
}

impl Default for MonitoringLimits {
    fn default() -> Self {
        Self {
            tox_limit: 0.40,
            resp_floor: 0.25,
            c_tox: 0.95,
            c_fut_stage1: 0.95,
            c_fut_stage2: 0.95,
            prior_a: 0.1,
            prior_b: 0.1,
        }
    }
}

impl MonitoringLimits {
    pub fn validate(&self) -> Result<()> {
        let open_unit = |name: &str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(Error::InvalidInput(format!("{name} = {v} must lie in (0, 1)")))
            }
        };
        open_unit("tox_limit", self.tox_limit)?;
        open_unit("resp_floor", self.resp_floor)?;
        open_unit("c_tox", self.c_tox)?;
        open_unit("c_fut_stage1", self.c_fut_stage1)?;
        open_unit("c_fut_stage2", self.c_fut_stage2)?;
        if !(self.prior_a > 0.0 && self.prior_b > 0.0) {
            return Err(Error::InvalidInput("beta prior parameters must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TailDirection {
    Above,
    Below,
}

/// `Pr(pi > t)` or `Pr(pi < t)` for `pi ~ Beta(alpha, beta)`.
pub fn beta_tail(alpha: f64, beta: f64, t: f64, direction: TailDirection) -> Result<f64> {
    if !(alpha > 0.0 && beta > 0.0) {
        return Err(Error::Domain(format!("beta parameters ({alpha}, {beta}) must be positive")));
    }
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::Domain(format!("threshold {t} must lie in (0, 1)")));
    }
    // Evaluate each tail directly so neither loses precision to 1 - x.
    Ok(match direction {
        TailDirection::Below => beta_reg(alpha, beta, t),
        TailDirection::Above => beta_reg(beta, alpha, 1.0 - t),
    })
}

/// Posterior probability that the toxicity rate exceeds the limit.
pub fn toxicity_posterior(n: u32, x_tox: u32, lim: &MonitoringLimits) -> f64 {
    debug_assert!(x_tox <= n);
    let a = lim.prior_a + x_tox as f64;
    let b = lim.prior_b + (n - x_tox) as f64;
    beta_tail(a, b, lim.tox_limit, TailDirection::Above).expect("validated limits")
}

/// Posterior probability that the response rate falls below the floor.
pub fn futility_posterior(n: u32, x_resp: u32, lim: &MonitoringLimits) -> f64 {
    debug_assert!(x_resp <= n);
    let a = lim.prior_a + x_resp as f64;
    let b = lim.prior_b + (n - x_resp) as f64;
    beta_tail(a, b, lim.resp_floor, TailDirection::Below).expect("validated limits")
}

pub fn toxicity_stop(n: u32, x_tox: u32, lim: &MonitoringLimits, cutoff: f64) -> bool {
    toxicity_posterior(n, x_tox, lim) > cutoff
}

pub fn futility_stop(n: u32, x_resp: u32, lim: &MonitoringLimits, cutoff: f64) -> bool {
    futility_posterior(n, x_resp, lim) > cutoff
}

/// Smallest toxicity count that stops at sample size `n`, if any.
pub fn toxicity_boundary(n: u32, lim: &MonitoringLimits, cutoff: f64) -> Option<u32> {
    (0..=n).find(|&x| toxicity_stop(n, x, lim, cutoff))
}

/// Largest response count that stops at sample size `n`, if any.
pub fn futility_boundary(n: u32, lim: &MonitoringLimits, cutoff: f64) -> Option<u32> {
    (0..=n).rev().find(|&x| futility_stop(n, x, lim, cutoff))
}

/// Exact probability that the futility rule fires at sample size `n` when the
/// true response rate is `pi_true`.
pub fn false_negative_prob(n: u32, pi_true: f64, lim: &MonitoringLimits, cutoff: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&pi_true) {
        return Err(Error::Domain(format!("response rate {pi_true} must lie in [0, 1]")));
    }
    Ok(match futility_boundary(n, lim, cutoff) {
        None => 0.0,
        Some(b) => binom_cdf(b, n, pi_true),
    })
}

fn binom_cdf(x: u32, n: u32, p: f64) -> f64 {
    if x >= n {
        return 1.0;
    }
    Binomial::new(p, n as u64).expect("p in [0, 1]").cdf(x as u64)
}

/// Outcome of the stage-1 sample-size search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub n: u32,
    /// Largest response count that stops at `n`.
    pub boundary: Option<u32>,
    pub false_negative: f64,
}

/// Smallest stage-1 size whose false negative stopping probability at a true
/// response rate of `resp_floor + delta` is at most `max_fn`.
pub fn calibrate_stage1_n(
    lim: &MonitoringLimits,
    delta: f64,
    cutoff: f64,
    max_fn: f64,
    n_range: std::ops::RangeInclusive<u32>,
) -> Result<Calibration> {
    if !(max_fn > 0.0 && max_fn <= 1.0) {
        return Err(Error::Domain(format!("max_fn = {max_fn} must lie in (0, 1]")));
    }
    if n_range.is_empty() {
        return Err(Error::Domain("empty sample-size range".into()));
    }
    let pi_true = lim.resp_floor + delta;
    let (lo, hi) = (*n_range.start(), *n_range.end());
    for n in n_range {
        let fnp = false_negative_prob(n, pi_true, lim, cutoff)?;
        if fnp <= max_fn {
            return Ok(Calibration { n, boundary: futility_boundary(n, lim, cutoff), false_negative: fnp });
        }
    }
    Err(Error::NoFeasibleN { lo: lo as usize, hi: hi as usize, max_fn })
}

/// Precomputed stopping boundaries for every sample size up to `n_max`.
///
/// Lookups beyond `n_max` fall back to direct evaluation.
#[derive(Debug, Clone)]
pub struct BoundaryTable {
    limits: MonitoringLimits,
    tox: Vec<Option<u32>>,
    fut_stage1: Vec<Option<u32>>,
    fut_stage2: Vec<Option<u32>>,
}

impl BoundaryTable {
    pub fn new(limits: MonitoringLimits, n_max: u32) -> Self {
        let tox = (0..=n_max).map(|n| toxicity_boundary(n, &limits, limits.c_tox)).collect();
        let fut_stage1 = (0..=n_max).map(|n| futility_boundary(n, &limits, limits.c_fut_stage1)).collect();
        let fut_stage2 = (0..=n_max).map(|n| futility_boundary(n, &limits, limits.c_fut_stage2)).collect();
        Self { limits, tox, fut_stage1, fut_stage2 }
    }

    pub fn limits(&self) -> &MonitoringLimits {
        &self.limits
    }

    pub fn tox_stop(&self, n: u32, x_tox: u32) -> bool {
        match self.tox.get(n as usize) {
            Some(b) => b.is_some_and(|b| x_tox >= b),
            None => toxicity_stop(n, x_tox, &self.limits, self.limits.c_tox),
        }
    }

    /// Futility at a stage-1 look or a stage-2 interim.
    pub fn interim_futility_stop(&self, n: u32, x_resp: u32) -> bool {
        match self.fut_stage1.get(n as usize) {
            Some(b) => b.is_some_and(|b| x_resp <= b),
            None => futility_stop(n, x_resp, &self.limits, self.limits.c_fut_stage1),
        }
    }

    /// Futility at the final analysis.
    pub fn final_futility_stop(&self, n: u32, x_resp: u32) -> bool {
        match self.fut_stage2.get(n as usize) {
            Some(b) => b.is_some_and(|b| x_resp <= b),
            None => futility_stop(n, x_resp, &self.limits, self.limits.c_fut_stage2),
        }
    }
}
