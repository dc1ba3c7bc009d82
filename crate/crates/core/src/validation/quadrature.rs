//! Deterministic tensor-grid posterior means for a single indication.
//!
//! With one indication the cluster weight and `omega` integrate out in
//! closed form, the cluster mean integrates analytically given `tau^2`, and
//! `tau^2` itself is summed on a log grid. What remains is a grid over
//! `(eta, theta)` and, for the drift model, an inner grid over `beta`.

use serde::{Deserialize, Serialize};

use crate::hiermodel::{HierHyperparams, HierModel, IndicationData, Tau2Prior};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureGrid {
    /// `eta` and `theta` both span `[-half_width, half_width]`.
    pub logit_half_width: f64,
    pub logit_points: usize,
    pub log_tau2_range: (f64, f64),
    pub log_tau2_points: usize,
    pub drift_half_width: f64,
    pub drift_points: usize,
}

impl Default for QuadratureGrid {
    fn default() -> Self {
        Self {
            logit_half_width: 40.0,
            logit_points: 2001,
            log_tau2_range: (-25.0, 40.0),
            log_tau2_points: 601,
            drift_half_width: 5.0,
            drift_points: 1001,
        }
    }
}

impl QuadratureGrid {
    /// Roughly doubles the resolution of every axis.
    pub fn refined(&self) -> Self {
        Self {
            logit_points: 2 * self.logit_points - 1,
            log_tau2_points: 2 * self.log_tau2_points - 1,
            drift_points: 2 * self.drift_points - 1,
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tau2Conditioning {
    /// Integrate `tau^2` against its prior.
    Marginal,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleMeans {
    pub q_high: f64,
    pub q_low: f64,
    pub theta: f64,
    pub prob_low_better_cluster: Option<f64>,
    pub drift: Option<f64>,
    pub spike_prob: Option<f64>,
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let step = (hi - lo) / (n - 1) as f64;
    (0..n).map(|i| lo + step * i as f64).collect()
}

fn log_sum_exp(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `z ln(Q) + (n - z) ln(1 - Q)` at `Q = sigmoid(x)`.
fn binom_log_lik(z: f64, n: f64, x: f64) -> f64 {
    if n == 0.0 {
        return 0.0;
    }
    let (log_q, log_1mq) = if x >= 0.0 {
        let l = (1.0 + (-x).exp()).ln();
        (-l, -x - l)
    } else {
        let l = (1.0 + x.exp()).ln();
        (x - l, -l)
    };
    z * log_q + (n - z) * log_1mq
}

fn log_normal(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (2.0 * std::f64::consts::PI * var).ln() - (x - mean).powi(2) / (2.0 * var)
}

fn log_tau2_density(prior: &Tau2Prior, v: f64) -> f64 {
    match *prior {
        Tau2Prior::InverseGamma { shape, scale } => -(shape + 1.0) * v.ln() - scale / v,
        Tau2Prior::HalfCauchy { scale } => -(1.0 + (v / scale) * (v / scale)).ln(),
    }
}

pub fn quadrature_oracle(
    model: HierModel,
    data: &IndicationData,
    hyper: &HierHyperparams,
    tau2: Tau2Conditioning,
    grid: &QuadratureGrid,
) -> OracleMeans {
    // (weight, prior mean, prior variance) of each cluster mean
    let clusters: Vec<(f64, f64, f64)> = match model {
        HierModel::Unclustered => vec![(1.0, hyper.nc_mu_mean, hyper.nc_mu_sd.powi(2))],
        _ => {
            let w1 = hyper.zeta_beta_a / (hyper.zeta_beta_a + hyper.zeta_beta_b);
            vec![(1.0 - w1, hyper.mu0_mean, hyper.mu0_sd.powi(2)), (w1, hyper.mu1_mean, hyper.mu1_sd.powi(2))]
        }
    };

    // (log variance offset, log weight) pairs over which tau^2 is summed
    let tau2_nodes: Vec<(f64, f64)> = match tau2 {
        Tau2Conditioning::Fixed(v) => vec![(v, 0.0)],
        Tau2Conditioning::Marginal => linspace(grid.log_tau2_range.0, grid.log_tau2_range.1, grid.log_tau2_points)
            .into_iter()
            .map(|u| {
                let v = u.exp();
                (v, log_tau2_density(&hyper.tau2_prior, v) + u)
            })
            .collect(),
    };

    let axis = linspace(-grid.logit_half_width, grid.logit_half_width, grid.logit_points);

    // log m_g(theta): marginal prior of theta within cluster g
    let log_m: Vec<Vec<f64>> = clusters
        .iter()
        .map(|&(w, mean, var)| {
            axis.iter()
                .map(|&t| w.ln() + log_sum_exp(tau2_nodes.iter().map(|&(v, lw)| lw + log_normal(t, mean, var + v))))
                .collect()
        })
        .collect();

    let (z_h2, n_h2) = (data.z_h2, data.n_h2 as f64);
    let (z_l2, n_l2) = (data.z_l2, data.n_l2 as f64);
    let drift = model == HierModel::Drift;

    // per-eta factors: Beta(c, d) prior on Q_H in logit coordinates, stage-2
    // high-dose likelihood, and the drift-integrated stage-1 likelihood
    let mut log_eta = Vec::with_capacity(axis.len());
    let mut drift_mean = vec![0.0; axis.len()];
    let mut spike_prob = vec![0.0; axis.len()];
    let betas = linspace(-grid.drift_half_width, grid.drift_half_width, grid.drift_points);
    for (i, &e) in axis.iter().enumerate() {
        let q = sigmoid(e);
        let mut lp = hyper.q_beta_a * q.ln() + hyper.q_beta_b * (1.0 - q).ln() + binom_log_lik(z_h2, n_h2, e);
        if lp.is_nan() {
            lp = f64::NEG_INFINITY;
        }
        if drift {
            let (z1, n1) = (data.z_h1, data.n_h1 as f64);
            let terms: Vec<(f64, f64, f64)> = betas
                .iter()
                .map(|&b| {
                    let l1 = binom_log_lik(z1, n1, e + b);
                    (
                        b,
                        l1 + (0.5f64).ln() + log_normal(b, 0.0, hyper.spike_var),
                        l1 + (0.5f64).ln() + log_normal(b, 0.0, hyper.slab_var),
                    )
                })
                .collect();
            let m = terms.iter().map(|t| t.1.max(t.2)).fold(f64::NEG_INFINITY, f64::max);
            let (mut tot, mut tot_b, mut tot_s) = (0.0, 0.0, 0.0);
            for &(b, ls, ll) in &terms {
                let (ws, wl) = ((ls - m).exp(), (ll - m).exp());
                tot += ws + wl;
                tot_b += b * (ws + wl);
                tot_s += ws;
            }
            lp += m + tot.ln();
            drift_mean[i] = tot_b / tot;
            spike_prob[i] = tot_s / tot;
        }
        log_eta.push(lp);
    }

    let log_total_m: Vec<f64> = (0..axis.len()).map(|j| log_sum_exp(log_m.iter().map(|row| row[j]))).collect();

    // first pass for the maximum, second for the weighted sums
    let log_weight = |i: usize, j: usize| log_eta[i] + log_total_m[j] + binom_log_lik(z_l2, n_l2, axis[i] + axis[j]);
    let mut max = f64::NEG_INFINITY;
    for i in 0..axis.len() {
        if log_eta[i] == f64::NEG_INFINITY {
            continue;
        }
        for j in 0..axis.len() {
            max = max.max(log_weight(i, j));
        }
    }
    let (mut s, mut s_h, mut s_l, mut s_t, mut s_z, mut s_b, mut s_sp) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..axis.len() {
        if log_eta[i] == f64::NEG_INFINITY {
            continue;
        }
        let qh = sigmoid(axis[i]);
        for j in 0..axis.len() {
            let w = (log_weight(i, j) - max).exp();
            if w == 0.0 {
                continue;
            }
            s += w;
            s_h += w * qh;
            s_l += w * sigmoid(axis[i] + axis[j]);
            s_t += w * axis[j];
            if log_m.len() == 2 {
                s_z += w * (log_m[1][j] - log_total_m[j]).exp();
            }
            s_b += w * drift_mean[i];
            s_sp += w * spike_prob[i];
        }
    }
    let clustered = model != HierModel::Unclustered;
    OracleMeans {
        q_high: s_h / s,
        q_low: s_l / s,
        theta: s_t / s,
        prob_low_better_cluster: clustered.then_some(s_z / s),
        drift: drift.then_some(s_b / s),
        spike_prob: drift.then_some(s_sp / s),
    }
}
