//! Posterior inference for the dose-optimization models.
//!
//! Three hierarchical models share one Metropolis-within-Gibbs engine:
//!
//! - [`HierModel::Clustered`]: each indication's low-versus-high log-odds
//!   effect `theta_k` is drawn from one of two normal clusters selected by a
//!   latent indicator `zeta_k`.
//! - [`HierModel::Unclustered`]: a single normal population for all `theta_k`.
//! - [`HierModel::Drift`]: the clustered model plus stage-1 high-dose data,
//!   linked to stage 2 through a per-indication drift `beta_k` with a
//!   spike-and-slab prior.
//!
//! All likelihoods are quasi-binomial in the standardized mean utility `Q`,
//! so quasi-event counts may be non-integer. The comparator designs use the
//! conjugate beta update in [`fit_conjugate`].

mod diagnostics;
mod sampler;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use diagnostics::{effective_sample_size, ChainTrace};

/// Prior on the shrinkage variance `tau^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Tau2Prior {
    InverseGamma { shape: f64, scale: f64 },
    HalfCauchy { scale: f64 },
}

impl Tau2Prior {
    /// Log density of `tau^2 = v`, up to a constant.
    pub(crate) fn log_density(&self, v: f64) -> f64 {
        match *self {
            Tau2Prior::InverseGamma { shape, scale } => -(shape + 1.0) * v.ln() - scale / v,
            Tau2Prior::HalfCauchy { scale } => -(v / scale).powi(2).ln_1p(),
        }
    }
}

/// Fixed hyperparameters of the hierarchical models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HierHyperparams {
    /// Prior mean of the cluster where the high dose is better.
    pub mu0_mean: f64,
    /// Prior mean of the cluster where the low dose is better.
    pub mu1_mean: f64,
    pub mu0_sd: f64,
    pub mu1_sd: f64,
    /// Prior on the single population mean of the unclustered model. Vague,
    /// so the common mean follows the pooled dose contrast.
    pub nc_mu_mean: f64,
    pub nc_mu_sd: f64,
    pub tau2_prior: Tau2Prior,
    /// Beta prior on the (stage-2) high-dose quasi-probability.
    pub q_beta_a: f64,
    pub q_beta_b: f64,
    /// Beta prior on the cluster weight.
    pub zeta_beta_a: f64,
    pub zeta_beta_b: f64,
    pub spike_var: f64,
    pub slab_var: f64,
}

impl Default for HierHyperparams {
    fn default() -> Self {
        Self {
            mu0_mean: -0.05,
            mu1_mean: 0.05,
            mu0_sd: 0.1,
            mu1_sd: 0.1,
            nc_mu_mean: 0.0,
            nc_mu_sd: 10.0,
            tau2_prior: Tau2Prior::InverseGamma { shape: 1e-4, scale: 1e-4 },
            q_beta_a: 0.1,
            q_beta_b: 0.1,
            zeta_beta_a: 0.1,
            zeta_beta_b: 0.1,
            spike_var: 0.01,
            slab_var: 0.25,
        }
    }
}

impl HierHyperparams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("mu0_sd", self.mu0_sd),
            ("mu1_sd", self.mu1_sd),
            ("nc_mu_sd", self.nc_mu_sd),
            ("q_beta_a", self.q_beta_a),
            ("q_beta_b", self.q_beta_b),
            ("zeta_beta_a", self.zeta_beta_a),
            ("zeta_beta_b", self.zeta_beta_b),
            ("spike_var", self.spike_var),
            ("slab_var", self.slab_var),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!("hyperparameter {name} = {v} must be positive")));
            }
        }
        match self.tau2_prior {
            Tau2Prior::InverseGamma { shape, scale } if shape > 0.0 && scale > 0.0 => {}
            Tau2Prior::HalfCauchy { scale } if scale > 0.0 => {}
            other => return Err(Error::InvalidInput(format!("tau2 prior {other:?} needs positive parameters"))),
        }
        if self.spike_var >= self.slab_var {
            return Err(Error::InvalidInput("spike_var must be smaller than slab_var".into()));
        }
        Ok(())
    }
}

/// Quasi-event summaries for one indication.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndicationData {
    pub z_h2: f64,
    pub n_h2: u32,
    pub z_l2: f64,
    pub n_l2: u32,
    /// Stage-1 high-dose data; only the drift model reads these.
    #[serde(default)]
    pub z_h1: f64,
    #[serde(default)]
    pub n_h1: u32,
    #[serde(default = "active_default")]
    pub active: bool,
}

fn active_default() -> bool {
    true
}

impl IndicationData {
    pub fn stage2(z_h2: f64, n_h2: u32, z_l2: f64, n_l2: u32) -> Self {
        Self { z_h2, n_h2, z_l2, n_l2, z_h1: 0.0, n_h1: 0, active: true }
    }

    pub fn with_stage1(mut self, z_h1: f64, n_h1: u32) -> Self {
        self.z_h1 = z_h1;
        self.n_h1 = n_h1;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuasiData {
    pub indications: Vec<IndicationData>,
}

impl QuasiData {
    pub fn new(indications: Vec<IndicationData>) -> Self {
        Self { indications }
    }

    fn validate(&self) -> Result<()> {
        let mut any_active = false;
        for (k, d) in self.indications.iter().enumerate() {
            let cells = [("z_h2", d.z_h2, d.n_h2), ("z_l2", d.z_l2, d.n_l2), ("z_h1", d.z_h1, d.n_h1)];
            for (name, z, n) in cells {
                if !(z >= 0.0 && z <= n as f64) {
                    return Err(Error::InvalidInput(format!("indication {k}: {name} = {z} outside [0, {n}]")));
                }
            }
            if !d.active {
                continue;
            }
            any_active = true;
            if d.n_h2 == 0 {
                return Err(Error::DegenerateData { indication: k, dose: "high" });
            }
            if d.n_l2 == 0 {
                return Err(Error::DegenerateData { indication: k, dose: "low" });
            }
        }
        if !any_active {
            return Err(Error::InvalidInput("no active indications".into()));
        }
        Ok(())
    }
}

/// Sampler controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcConfig {
    /// Total iterations, burn-in included.
    pub n_iter: usize,
    pub n_burn: usize,
    pub thin: usize,
    pub proposal_sd_init: f64,
    /// Iterations over which the adaptation gain halves, roughly.
    pub adapt_window: usize,
    pub seed: u64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self { n_iter: 6000, n_burn: 2000, thin: 1, proposal_sd_init: 0.5, adapt_window: 50, seed: 1 }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_iter <= self.n_burn {
            return Err(Error::InvalidInput("n_iter must exceed n_burn".into()));
        }
        if self.thin == 0 || self.adapt_window == 0 {
            return Err(Error::InvalidInput("thin and adapt_window must be at least 1".into()));
        }
        if !(self.proposal_sd_init > 0.0) {
            return Err(Error::InvalidInput("proposal_sd_init must be positive".into()));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn kept_draws(&self) -> usize {
        (self.n_iter - self.n_burn).div_ceil(self.thin)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HierModel {
    Clustered,
    Unclustered,
    Drift,
}

/// Posterior mean with its Monte Carlo error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub sd: f64,
    pub mcse: f64,
    pub ess: f64,
}

impl Estimate {
    pub(crate) fn from_draws(draws: &[f64]) -> Self {
        let n = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / n;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let ess = effective_sample_size(draws);
        Self { mean, sd: var.sqrt(), mcse: (var / ess).sqrt(), ess }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicationPosterior {
    /// Position in the input [`QuasiData`].
    pub index: usize,
    pub q_high: Estimate,
    pub q_low: Estimate,
    pub theta: Estimate,
    /// Posterior probability that the low dose belongs to the better cluster.
    pub prob_low_better_cluster: Option<f64>,
    pub drift: Option<Estimate>,
    pub spike_prob: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalPosterior {
    /// Cluster-0 mean, or the single mean of the unclustered model.
    pub mu0: Estimate,
    pub mu1: Option<Estimate>,
    pub tau2: Estimate,
    pub cluster_weight: Option<Estimate>,
    pub omega: Option<Estimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerDiagnostics {
    /// Post-burn-in acceptance of each adaptively tuned random-walk move,
    /// averaged over indications.
    pub acceptance: Vec<(String, f64)>,
    /// Acceptance of the auxiliary joint moves, reported but not gated.
    pub auxiliary_acceptance: Vec<(String, f64)>,
    /// Fraction of kept draws where `tau^2` sat on its numerical floor.
    pub tau2_floor_rate: f64,
    pub kept_draws: usize,
}

impl SamplerDiagnostics {
    pub fn min_ess(summary: &PosteriorSummary) -> f64 {
        summary.indications.iter().flat_map(|p| [p.q_high.ess, p.q_low.ess]).fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub model: HierModel,
    /// One entry per active indication, in input order.
    pub indications: Vec<IndicationPosterior>,
    pub global: GlobalPosterior,
    pub diagnostics: SamplerDiagnostics,
}

impl PosteriorSummary {
    pub fn indication(&self, index: usize) -> Option<&IndicationPosterior> {
        self.indications.iter().find(|p| p.index == index)
    }
}

/// Extra switches for validation runs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FitOptions {
    /// Ignore the data and sample the prior.
    pub prior_only: bool,
    /// Keep every kept draw of every parameter.
    pub record_trace: bool,
}

/// Clustered hierarchical model on stage-2 data.
pub fn fit_v1(data: &QuasiData, hyper: &HierHyperparams, mcmc: &McmcConfig) -> Result<PosteriorSummary> {
    fit(HierModel::Clustered, data, hyper, mcmc, FitOptions::default()).map(|(s, _)| s)
}

/// Hierarchical model without clustering on stage-2 data.
pub fn fit_nc(data: &QuasiData, hyper: &HierHyperparams, mcmc: &McmcConfig) -> Result<PosteriorSummary> {
    fit(HierModel::Unclustered, data, hyper, mcmc, FitOptions::default()).map(|(s, _)| s)
}

/// Clustered model with drift-corrected stage-1 high-dose data.
pub fn fit_v2(data: &QuasiData, hyper: &HierHyperparams, mcmc: &McmcConfig) -> Result<PosteriorSummary> {
    fit(HierModel::Drift, data, hyper, mcmc, FitOptions::default()).map(|(s, _)| s)
}

pub fn fit(
    model: HierModel,
    data: &QuasiData,
    hyper: &HierHyperparams,
    mcmc: &McmcConfig,
    options: FitOptions,
) -> Result<(PosteriorSummary, Option<ChainTrace>)> {
    data.validate()?;
    hyper.validate()?;
    mcmc.validate()?;
    Ok(sampler::run(model, data, hyper, mcmc, options))
}

/// Beta posterior of a quasi-binomial arm under a conjugate beta prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConjugatePosterior {
    pub alpha: f64,
    pub beta: f64,
}

impl ConjugatePosterior {
    pub fn mean(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }
}

/// Pseudo-conjugate update `Beta(a + z, b + n - z)`; `z` may be non-integer.
pub fn fit_conjugate(z: f64, n: u32, prior_a: f64, prior_b: f64) -> Result<ConjugatePosterior> {
    if !(z >= 0.0 && z <= n as f64) {
        return Err(Error::InvalidInput(format!("quasi-events {z} outside [0, {n}]")));
    }
    Ok(ConjugatePosterior { alpha: prior_a + z, beta: prior_b + n as f64 - z })
}

#[cfg(test)]
mod tests;
