//! Metropolis-within-Gibbs engine shared by the three hierarchical models.
//!
//! Parameterization per active indication `k`:
//! `eta_k = logit(Q_H,k,2)`, `theta_k = logit(Q_L,k,2) - eta_k`, and for the
//! drift model `beta_k = logit(Q_H,k,1) - eta_k`.
//!
//! Random-walk moves on `eta_k`, `theta_k` and `beta_k` are supplemented by
//! joint moves that hold the other arms' quasi-probabilities fixed, a
//! cluster flip that keeps `theta_k`'s offset from its cluster mean, a
//! location shift of a cluster mean together with its members, and a scale
//! move on `tau^2` with the member offsets. Every move is an exact
//! Metropolis-Hastings update of the joint posterior; the extra moves only
//! break the strong posterior couplings that single-site updates cannot.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use super::{
    ChainTrace, Estimate, FitOptions, GlobalPosterior, HierHyperparams, HierModel, IndicationPosterior, McmcConfig,
    PosteriorSummary, QuasiData, SamplerDiagnostics, Tau2Prior,
};

const TAU2_FLOOR: f64 = 1e-8;
const TARGET_ACCEPT: f64 = 0.35;
const TAU2_INIT: f64 = 0.1;
/// Linear predictors are confined to this box. With every arm at its
/// maximum the posterior is otherwise improper along the offsets.
const LOGIT_BOUND: f64 = 60.0;

#[inline]
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Quasi-binomial log-likelihood `z log Q + (n - z) log(1 - Q)` at `Q = logistic(x)`.
#[inline]
fn quasi_loglik(z: f64, n: f64, x: f64) -> f64 {
    if x.abs() > LOGIT_BOUND {
        f64::NEG_INFINITY
    } else if n == 0.0 {
        0.0
    } else {
        z * x - n * softplus(x)
    }
}

#[inline]
fn accept(rng: &mut ChaCha8Rng, log_ratio: f64) -> bool {
    log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio
}

#[inline]
fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Log-weights `[ln(1 - w), ln w]` of a Beta(a, b) draw `w`, computed from
/// the two underlying gamma variates so neither side underflows to -inf.
fn beta_log_weights(rng: &mut ChaCha8Rng, a: f64, b: f64) -> [f64; 2] {
    let x: f64 = Gamma::new(a, 1.0).expect("positive shape").sample(rng);
    let y: f64 = Gamma::new(b, 1.0).expect("positive shape").sample(rng);
    let (lx, ly) = (x.max(f64::MIN_POSITIVE).ln(), y.max(f64::MIN_POSITIVE).ln());
    let total = lx.max(ly) + ((lx - lx.max(ly)).exp() + (ly - lx.max(ly)).exp()).ln();
    [ly - total, lx - total]
}

/// Robbins-Monro scale adaptation during burn-in, frozen afterwards.
#[derive(Debug, Clone)]
struct Tuner {
    log_scale: f64,
    accepted: u64,
    proposed: u64,
}

impl Tuner {
    fn new(init: f64) -> Self {
        Self { log_scale: init.ln(), accepted: 0, proposed: 0 }
    }

    fn scale(&self) -> f64 {
        self.log_scale.exp()
    }

    fn record(&mut self, log_ratio: f64, accepted: bool, iter: usize, cfg: &McmcConfig) {
        if iter < cfg.n_burn {
            let alpha = if log_ratio.is_nan() { 0.0 } else { log_ratio.min(0.0).exp() };
            let gain = (1.0 + iter as f64 / cfg.adapt_window as f64).powf(-0.6);
            self.log_scale = (self.log_scale + gain * (alpha - TARGET_ACCEPT)).clamp(-15.0, 4.0);
        } else {
            self.proposed += 1;
            self.accepted += accepted as u64;
        }
    }

    fn rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

#[derive(Debug, Default, Clone, Copy)]
struct Counter {
    accepted: u64,
    proposed: u64,
}

impl Counter {
    fn record(&mut self, accepted: bool, iter: usize, cfg: &McmcConfig) {
        if iter >= cfg.n_burn {
            self.proposed += 1;
            self.accepted += accepted as u64;
        }
    }

    fn rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    index: usize,
    z_h2: f64,
    n_h2: f64,
    z_l2: f64,
    n_l2: f64,
    z_h1: f64,
    n_h1: f64,
}

struct IndicationTuners {
    eta: Tuner,
    theta: Tuner,
    high: Tuner,
    beta: Tuner,
}

struct Chain<'a> {
    model: HierModel,
    hyper: &'a HierHyperparams,
    cfg: &'a McmcConfig,
    cells: Vec<Cell>,
    rng: ChaCha8Rng,

    eta: Vec<f64>,
    theta: Vec<f64>,
    zeta: Vec<usize>,
    beta: Vec<f64>,
    spike: Vec<bool>,
    // cached log-likelihood terms
    ll_h2: Vec<f64>,
    ll_l2: Vec<f64>,
    ll_h1: Vec<f64>,

    mu: [f64; 2],
    tau2: f64,
    log_cluster_w: [f64; 2],
    log_omega: [f64; 2],

    tuners: Vec<IndicationTuners>,
    shift_tuners: [Tuner; 2],
    scale_tuner: Tuner,
    tau2_tuner: Tuner,
    flip: Counter,
    tau2_floor_hits: u64,
    scratch: Vec<f64>,
}

impl<'a> Chain<'a> {
    fn new(
        model: HierModel,
        data: &QuasiData,
        hyper: &'a HierHyperparams,
        cfg: &'a McmcConfig,
        prior_only: bool,
    ) -> Self {
        let cells: Vec<Cell> = data
            .indications
            .iter()
            .enumerate()
            .filter(|(_, d)| d.active)
            .map(|(index, d)| {
                let keep = if prior_only { 0.0 } else { 1.0 };
                let stage1 = if model == HierModel::Drift { keep } else { 0.0 };
                Cell {
                    index,
                    z_h2: keep * d.z_h2,
                    n_h2: keep * d.n_h2 as f64,
                    z_l2: keep * d.z_l2,
                    n_l2: keep * d.n_l2 as f64,
                    z_h1: stage1 * d.z_h1,
                    n_h1: stage1 * d.n_h1 as f64,
                }
            })
            .collect();
        let k = cells.len();
        let empirical_logit = |z: f64, n: f64| ((z + 0.5) / (n + 1.0)).ln() - ((n - z + 0.5) / (n + 1.0)).ln();
        let eta: Vec<f64> = cells.iter().map(|c| empirical_logit(c.z_h2, c.n_h2)).collect();
        let theta: Vec<f64> = cells.iter().zip(&eta).map(|(c, e)| empirical_logit(c.z_l2, c.n_l2) - e).collect();
        let zeta = match model {
            HierModel::Unclustered => vec![0; k],
            _ => theta.iter().map(|t| (*t > 0.0) as usize).collect(),
        };
        let mu = match model {
            HierModel::Unclustered => [hyper.nc_mu_mean, hyper.nc_mu_mean],
            _ => [hyper.mu0_mean, hyper.mu1_mean],
        };
        let init = cfg.proposal_sd_init;
        let mut chain = Self {
            model,
            hyper,
            cfg,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            eta,
            theta,
            zeta,
            beta: vec![0.0; k],
            spike: vec![true; k],
            ll_h2: vec![0.0; k],
            ll_l2: vec![0.0; k],
            ll_h1: vec![0.0; k],
            mu,
            tau2: TAU2_INIT,
            log_cluster_w: [0.5f64.ln(); 2],
            log_omega: [0.5f64.ln(); 2],
            tuners: (0..k)
                .map(|_| IndicationTuners {
                    eta: Tuner::new(init),
                    theta: Tuner::new(1.0),
                    high: Tuner::new(1.0),
                    beta: Tuner::new(1.0),
                })
                .collect(),
            shift_tuners: [Tuner::new(1.0), Tuner::new(1.0)],
            scale_tuner: Tuner::new(init),
            tau2_tuner: Tuner::new(init),
            flip: Counter::default(),
            tau2_floor_hits: 0,
            scratch: Vec::with_capacity(k),
            cells,
        };
        for i in 0..k {
            chain.ll_h2[i] = chain.loglik_h2(i, chain.eta[i]);
            chain.ll_l2[i] = chain.loglik_l2(i, chain.eta[i] + chain.theta[i]);
            chain.ll_h1[i] = chain.loglik_h1(i, chain.eta[i] + chain.beta[i]);
        }
        chain
    }

    fn loglik_h2(&self, i: usize, x: f64) -> f64 {
        quasi_loglik(self.cells[i].z_h2, self.cells[i].n_h2, x)
    }

    fn loglik_l2(&self, i: usize, x: f64) -> f64 {
        quasi_loglik(self.cells[i].z_l2, self.cells[i].n_l2, x)
    }

    fn loglik_h1(&self, i: usize, x: f64) -> f64 {
        quasi_loglik(self.cells[i].z_h1, self.cells[i].n_h1, x)
    }

    /// Beta(c, d) prior on `Q = logistic(eta)`, Jacobian included.
    fn log_prior_eta(&self, eta: f64) -> f64 {
        self.hyper.q_beta_a * eta - (self.hyper.q_beta_a + self.hyper.q_beta_b) * softplus(eta)
    }

    fn center(&self, i: usize) -> f64 {
        self.mu[self.zeta[i]]
    }

    fn log_prior_theta(&self, theta: f64, center: f64) -> f64 {
        -(theta - center).powi(2) / (2.0 * self.tau2)
    }

    fn drift_var(&self, spike: bool) -> f64 {
        if spike {
            self.hyper.spike_var
        } else {
            self.hyper.slab_var
        }
    }

    fn log_prior_beta(&self, beta: f64, spike: bool) -> f64 {
        let v = self.drift_var(spike);
        -beta * beta / (2.0 * v) - 0.5 * v.ln()
    }

    fn mu_prior(&self, g: usize) -> (f64, f64) {
        match (self.model, g) {
            (HierModel::Unclustered, _) => (self.hyper.nc_mu_mean, self.hyper.nc_mu_sd),
            (_, 0) => (self.hyper.mu0_mean, self.hyper.mu0_sd),
            _ => (self.hyper.mu1_mean, self.hyper.mu1_sd),
        }
    }

    fn clustered(&self) -> bool {
        self.model != HierModel::Unclustered
    }

    fn drift(&self) -> bool {
        self.model == HierModel::Drift
    }

    fn iterate(&mut self, iter: usize) {
        for i in 0..self.cells.len() {
            self.update_eta(i, iter);
            self.update_theta(i, iter);
            self.update_high_only(i, iter);
            if self.drift() {
                self.update_beta(i, iter);
                self.update_spike(i);
            }
            if self.clustered() {
                self.flip_cluster(i, iter);
                self.update_cluster(i);
            }
        }
        let groups = if self.clustered() { 2 } else { 1 };
        for g in 0..groups {
            self.update_mu(g);
            self.shift_group(g, iter);
        }
        self.update_tau2(iter);
        self.scale_offsets(iter);
        if self.clustered() {
            let ones = self.zeta.iter().sum::<usize>() as f64;
            let zeros = self.cells.len() as f64 - ones;
            self.log_cluster_w =
                beta_log_weights(&mut self.rng, self.hyper.zeta_beta_a + ones, self.hyper.zeta_beta_b + zeros);
        }
        if self.drift() {
            let spikes = self.spike.iter().filter(|s| **s).count() as f64;
            let slabs = self.cells.len() as f64 - spikes;
            self.log_omega = beta_log_weights(&mut self.rng, 1.0 + spikes, 1.0 + slabs);
        }
    }

    /// Moves every arm of indication `i` together.
    fn update_eta(&mut self, i: usize, iter: usize) {
        let cur = self.eta[i];
        let prop = cur + self.tuners[i].eta.scale() * normal(&mut self.rng);
        let h2 = self.loglik_h2(i, prop);
        let l2 = self.loglik_l2(i, prop + self.theta[i]);
        let h1 = if self.drift() { self.loglik_h1(i, prop + self.beta[i]) } else { 0.0 };
        let lr = self.log_prior_eta(prop) - self.log_prior_eta(cur)
            + (h2 - self.ll_h2[i])
            + (l2 - self.ll_l2[i])
            + (h1 - self.ll_h1[i]);
        let ok = accept(&mut self.rng, lr);
        if ok {
            self.eta[i] = prop;
            self.ll_h2[i] = h2;
            self.ll_l2[i] = l2;
            self.ll_h1[i] = h1;
        }
        self.tuners[i].eta.record(lr, ok, iter, self.cfg);
    }

    /// Moves the low-dose arm only.
    fn update_theta(&mut self, i: usize, iter: usize) {
        let cur = self.theta[i];
        let precond = (1.0 / self.tau2 + self.cells[i].n_l2 / 4.0).sqrt().recip();
        let prop = cur + self.tuners[i].theta.scale() * precond * normal(&mut self.rng);
        let l2 = self.loglik_l2(i, self.eta[i] + prop);
        let c = self.center(i);
        let lr = l2 - self.ll_l2[i] + self.log_prior_theta(prop, c) - self.log_prior_theta(cur, c);
        let ok = accept(&mut self.rng, lr);
        if ok {
            self.theta[i] = prop;
            self.ll_l2[i] = l2;
        }
        self.tuners[i].theta.record(lr, ok, iter, self.cfg);
    }

    /// Moves the stage-2 high-dose arm only, compensating `theta` (and
    /// `beta`) so the other arms' quasi-probabilities stay fixed.
    fn update_high_only(&mut self, i: usize, iter: usize) {
        let drift = self.drift();
        let mut prec = 1.0 / self.tau2 + self.cells[i].n_h2 / 4.0 + 0.25;
        if drift {
            prec += 1.0 / self.drift_var(self.spike[i]);
        }
        let delta = self.tuners[i].high.scale() * prec.sqrt().recip() * normal(&mut self.rng);
        let (eta, theta, beta) = (self.eta[i], self.theta[i], self.beta[i]);
        let h2 = self.loglik_h2(i, eta + delta);
        let c = self.center(i);
        let mut lr = self.log_prior_eta(eta + delta) - self.log_prior_eta(eta) + h2 - self.ll_h2[i]
            + self.log_prior_theta(theta - delta, c)
            - self.log_prior_theta(theta, c);
        if drift {
            lr += self.log_prior_beta(beta - delta, self.spike[i]) - self.log_prior_beta(beta, self.spike[i]);
        }
        let ok = accept(&mut self.rng, lr);
        if ok {
            self.eta[i] = eta + delta;
            self.theta[i] = theta - delta;
            if drift {
                self.beta[i] = beta - delta;
            }
            self.ll_h2[i] = h2;
        }
        self.tuners[i].high.record(lr, ok, iter, self.cfg);
    }

    /// Moves the stage-1 high-dose arm only.
    fn update_beta(&mut self, i: usize, iter: usize) {
        let cur = self.beta[i];
        let spike = self.spike[i];
        let precond = (1.0 / self.drift_var(spike) + self.cells[i].n_h1 / 4.0).sqrt().recip();
        let prop = cur + self.tuners[i].beta.scale() * precond * normal(&mut self.rng);
        let h1 = self.loglik_h1(i, self.eta[i] + prop);
        let lr = h1 - self.ll_h1[i] + self.log_prior_beta(prop, spike) - self.log_prior_beta(cur, spike);
        let ok = accept(&mut self.rng, lr);
        if ok {
            self.beta[i] = prop;
            self.ll_h1[i] = h1;
        }
        self.tuners[i].beta.record(lr, ok, iter, self.cfg);
    }

    fn update_spike(&mut self, i: usize) {
        let b = self.beta[i];
        let l_spike = self.log_omega[1] + self.log_prior_beta(b, true);
        let l_slab = self.log_omega[0] + self.log_prior_beta(b, false);
        let p_spike = logistic(l_spike - l_slab);
        self.spike[i] = self.rng.random::<f64>() < p_spike;
    }

    /// Proposes the other cluster, carrying `theta`'s offset from its mean.
    fn flip_cluster(&mut self, i: usize, iter: usize) {
        let from = self.zeta[i];
        let to = 1 - from;
        let prop = self.theta[i] + self.mu[to] - self.mu[from];
        let l2 = self.loglik_l2(i, self.eta[i] + prop);
        let lr = l2 - self.ll_l2[i] + self.log_cluster_w[to] - self.log_cluster_w[from];
        let ok = accept(&mut self.rng, lr);
        if ok {
            self.zeta[i] = to;
            self.theta[i] = prop;
            self.ll_l2[i] = l2;
        }
        self.flip.record(ok, iter, self.cfg);
    }

    fn update_cluster(&mut self, i: usize) {
        let t = self.theta[i];
        let l1 = self.log_cluster_w[1] + self.log_prior_theta(t, self.mu[1]);
        let l0 = self.log_cluster_w[0] + self.log_prior_theta(t, self.mu[0]);
        let p1 = logistic(l1 - l0);
        self.zeta[i] = (self.rng.random::<f64>() < p1) as usize;
    }

    fn update_mu(&mut self, g: usize) {
        let (m0, sd0) = self.mu_prior(g);
        let (mut count, mut sum) = (0.0, 0.0);
        for i in 0..self.cells.len() {
            if self.zeta[i] == g {
                count += 1.0;
                sum += self.theta[i];
            }
        }
        let prec = 1.0 / (sd0 * sd0) + count / self.tau2;
        let mean = (m0 / (sd0 * sd0) + sum / self.tau2) / prec;
        self.mu[g] = mean + prec.sqrt().recip() * normal(&mut self.rng);
        if self.model == HierModel::Unclustered {
            self.mu[1] = self.mu[0];
        }
    }

    /// Translates a cluster mean together with its members' `theta`s.
    fn shift_group(&mut self, g: usize, iter: usize) {
        let (m0, sd0) = self.mu_prior(g);
        let members: Vec<usize> = (0..self.cells.len()).filter(|&i| self.zeta[i] == g).collect();
        if members.is_empty() {
            return;
        }
        let info: f64 = members.iter().map(|&i| self.cells[i].n_l2 / 4.0).sum();
        let delta = self.shift_tuners[g].scale() * (1.0 / (sd0 * sd0) + info).sqrt().recip() * normal(&mut self.rng);
        let prior = |mu: f64| -(mu - m0).powi(2) / (2.0 * sd0 * sd0);
        let mut lr = prior(self.mu[g] + delta) - prior(self.mu[g]);
        self.scratch.clear();
        for &i in &members {
            let l2 = self.loglik_l2(i, self.eta[i] + self.theta[i] + delta);
            lr += l2 - self.ll_l2[i];
            self.scratch.push(l2);
        }
        let ok = accept(&mut self.rng, lr);
        if ok {
            self.mu[g] += delta;
            if self.model == HierModel::Unclustered {
                self.mu[1] = self.mu[0];
            }
            for (j, &i) in members.iter().enumerate() {
                self.theta[i] += delta;
                self.ll_l2[i] = self.scratch[j];
            }
        }
        self.shift_tuners[g].record(lr, ok, iter, self.cfg);
    }

    fn sum_sq_offsets(&self) -> f64 {
        (0..self.cells.len()).map(|i| (self.theta[i] - self.center(i)).powi(2)).sum()
    }

    fn update_tau2(&mut self, iter: usize) {
        let k = self.cells.len() as f64;
        let ss = self.sum_sq_offsets();
        match self.hyper.tau2_prior {
            Tau2Prior::InverseGamma { shape, scale } => {
                let rate = scale + ss / 2.0;
                let g: f64 = Gamma::new(shape + k / 2.0, 1.0).expect("positive shape").sample(&mut self.rng);
                let draw = rate / g;
                if draw < TAU2_FLOOR || !draw.is_finite() {
                    self.tau2 = if draw.is_finite() { TAU2_FLOOR } else { self.tau2 };
                } else {
                    self.tau2 = draw;
                }
            }
            prior @ Tau2Prior::HalfCauchy { .. } => {
                let step = self.tau2_tuner.scale() * normal(&mut self.rng);
                let cur = self.tau2;
                let prop = cur * step.exp();
                let lr = if prop < TAU2_FLOOR || !prop.is_finite() {
                    f64::NEG_INFINITY
                } else {
                    -k / 2.0 * step - ss / 2.0 * (1.0 / prop - 1.0 / cur) + prior.log_density(prop)
                        - prior.log_density(cur)
                        + step
                };
                let ok = accept(&mut self.rng, lr);
                if ok {
                    self.tau2 = prop;
                }
                self.tau2_tuner.record(lr, ok, iter, self.cfg);
            }
        }
        if iter >= self.cfg.n_burn && self.tau2 <= TAU2_FLOOR {
            self.tau2_floor_hits += 1;
        }
    }

    /// Rescales `tau` together with every `theta`'s offset from its mean.
    fn scale_offsets(&mut self, iter: usize) {
        let eps = self.scale_tuner.scale() * normal(&mut self.rng);
        let factor = eps.exp();
        let prop_tau2 = self.tau2 * factor * factor;
        let mut lr = if prop_tau2 < TAU2_FLOOR || !prop_tau2.is_finite() {
            f64::NEG_INFINITY
        } else {
            let prior = self.hyper.tau2_prior;
            prior.log_density(prop_tau2) - prior.log_density(self.tau2) + 2.0 * eps
        };
        self.scratch.clear();
        if lr.is_finite() {
            for i in 0..self.cells.len() {
                let c = self.center(i);
                let t = c + (self.theta[i] - c) * factor;
                let l2 = self.loglik_l2(i, self.eta[i] + t);
                lr += l2 - self.ll_l2[i];
                self.scratch.push(l2);
            }
        }
        let ok = lr.is_finite() && accept(&mut self.rng, lr);
        if ok {
            self.tau2 = prop_tau2;
            for i in 0..self.cells.len() {
                let c = self.center(i);
                self.theta[i] = c + (self.theta[i] - c) * factor;
                self.ll_l2[i] = self.scratch[i];
            }
        }
        self.scale_tuner.record(lr, ok, iter, self.cfg);
    }
}

struct Recorder {
    q_high: Vec<Vec<f64>>,
    q_low: Vec<Vec<f64>>,
    theta: Vec<Vec<f64>>,
    zeta: Vec<Vec<f64>>,
    beta: Vec<Vec<f64>>,
    spike: Vec<Vec<f64>>,
    mu0: Vec<f64>,
    mu1: Vec<f64>,
    tau2: Vec<f64>,
    cluster_w: Vec<f64>,
    omega: Vec<f64>,
}

impl Recorder {
    fn new(k: usize, n: usize) -> Self {
        let per = || (0..k).map(|_| Vec::with_capacity(n)).collect::<Vec<_>>();
        Self {
            q_high: per(),
            q_low: per(),
            theta: per(),
            zeta: per(),
            beta: per(),
            spike: per(),
            mu0: Vec::with_capacity(n),
            mu1: Vec::with_capacity(n),
            tau2: Vec::with_capacity(n),
            cluster_w: Vec::with_capacity(n),
            omega: Vec::with_capacity(n),
        }
    }

    fn push(&mut self, c: &Chain) {
        for i in 0..c.cells.len() {
            self.q_high[i].push(logistic(c.eta[i]));
            self.q_low[i].push(logistic(c.eta[i] + c.theta[i]));
            self.theta[i].push(c.theta[i]);
            self.zeta[i].push(c.zeta[i] as f64);
            self.beta[i].push(c.beta[i]);
            self.spike[i].push(c.spike[i] as u8 as f64);
        }
        self.mu0.push(c.mu[0]);
        self.mu1.push(c.mu[1]);
        self.tau2.push(c.tau2);
        self.cluster_w.push(c.log_cluster_w[1].exp());
        self.omega.push(c.log_omega[1].exp());
    }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

pub(super) fn run(
    model: HierModel,
    data: &QuasiData,
    hyper: &HierHyperparams,
    cfg: &McmcConfig,
    options: FitOptions,
) -> (PosteriorSummary, Option<ChainTrace>) {
    let mut chain = Chain::new(model, data, hyper, cfg, options.prior_only);
    let k = chain.cells.len();
    let mut rec = Recorder::new(k, cfg.kept_draws());
    for iter in 0..cfg.n_iter {
        chain.iterate(iter);
        if iter >= cfg.n_burn && (iter - cfg.n_burn).is_multiple_of(cfg.thin) {
            rec.push(&chain);
        }
    }

    let clustered = model != HierModel::Unclustered;
    let drift = model == HierModel::Drift;
    let indications = chain
        .cells
        .iter()
        .enumerate()
        .map(|(i, cell)| IndicationPosterior {
            index: cell.index,
            q_high: Estimate::from_draws(&rec.q_high[i]),
            q_low: Estimate::from_draws(&rec.q_low[i]),
            theta: Estimate::from_draws(&rec.theta[i]),
            prob_low_better_cluster: clustered.then(|| mean(&rec.zeta[i])),
            drift: drift.then(|| Estimate::from_draws(&rec.beta[i])),
            spike_prob: drift.then(|| mean(&rec.spike[i])),
        })
        .collect();
    let global = GlobalPosterior {
        mu0: Estimate::from_draws(&rec.mu0),
        mu1: clustered.then(|| Estimate::from_draws(&rec.mu1)),
        tau2: Estimate::from_draws(&rec.tau2),
        cluster_weight: clustered.then(|| Estimate::from_draws(&rec.cluster_w)),
        omega: drift.then(|| Estimate::from_draws(&rec.omega)),
    };

    let avg = |f: &dyn Fn(&IndicationTuners) -> f64| chain.tuners.iter().map(f).sum::<f64>() / k as f64;
    let mut acceptance = vec![
        ("eta".to_string(), avg(&|t| t.eta.rate())),
        ("theta".to_string(), avg(&|t| t.theta.rate())),
        ("high_only".to_string(), avg(&|t| t.high.rate())),
    ];
    if drift {
        acceptance.push(("beta".to_string(), avg(&|t| t.beta.rate())));
    }
    if matches!(hyper.tau2_prior, Tau2Prior::HalfCauchy { .. }) {
        acceptance.push(("log_tau2".to_string(), chain.tau2_tuner.rate()));
    }
    let mut auxiliary_acceptance = vec![
        ("group_shift".to_string(), chain.shift_tuners[0].rate()),
        ("offset_scale".to_string(), chain.scale_tuner.rate()),
    ];
    if clustered {
        auxiliary_acceptance.push(("cluster_flip".to_string(), chain.flip.rate()));
    }
    let kept = rec.tau2.len();
    let diagnostics = SamplerDiagnostics {
        acceptance,
        auxiliary_acceptance,
        tau2_floor_rate: chain.tau2_floor_hits as f64 / kept.max(1) as f64,
        kept_draws: kept,
    };

    let trace = options.record_trace.then(|| {
        let mut columns = Vec::new();
        let mut values = Vec::new();
        for (i, cell) in chain.cells.iter().enumerate() {
            let j = cell.index;
            columns.extend([format!("q_high[{j}]"), format!("q_low[{j}]"), format!("theta[{j}]")]);
            values.extend([rec.q_high[i].clone(), rec.q_low[i].clone(), rec.theta[i].clone()]);
            if clustered {
                columns.push(format!("zeta[{j}]"));
                values.push(rec.zeta[i].clone());
            }
            if drift {
                columns.extend([format!("drift[{j}]"), format!("spike[{j}]")]);
                values.extend([rec.beta[i].clone(), rec.spike[i].clone()]);
            }
        }
        columns.push("mu0".into());
        values.push(rec.mu0.clone());
        if clustered {
            columns.extend(["mu1".into(), "cluster_weight".into()]);
            values.extend([rec.mu1.clone(), rec.cluster_w.clone()]);
        }
        columns.push("tau2".into());
        values.push(rec.tau2.clone());
        if drift {
            columns.push("omega".into());
            values.push(rec.omega.clone());
        }
        ChainTrace { columns, values }
    });

    (PosteriorSummary { model, indications, global, diagnostics }, trace)
}
