//! Trial state machines for the two-stage ROMI designs and the two comparators.
//!
//! ROMI designs screen the high dose in stage 1, randomize both doses in
//! stage 2 with one interim look, and pick each indication's dose from a
//! single joint hierarchical fit. Pool ignores indications entirely;
//! Independent runs a separate two-arm trial per indication.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hiermodel::{self, fit_conjugate, HierHyperparams, HierModel, IndicationData, McmcConfig, QuasiData};
use crate::monitoring::{BoundaryTable, MonitoringLimits};
use crate::outcomes::{quasi_events, sample_outcome, JointOutcomeProb, Outcome, OutcomeCounts, UtilityTable};
use crate::rng::{fit_seed, replication_stream, StreamPurpose};

/// Differences in posterior mean utility below this are ties, resolved to the low dose.
pub const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dose {
    High,
    Low,
}

impl Dose {
    pub const BOTH: [Dose; 2] = [Dose::High, Dose::Low];

    pub fn index(self) -> usize {
        match self {
            Dose::High => 0,
            Dose::Low => 1,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Dose::High => "H",
            Dose::Low => "L",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignKind {
    #[serde(alias = "Pool")]
    Pool,
    #[serde(alias = "Independent")]
    Independent,
    #[serde(alias = "ROMI-v1-NC")]
    RomiV1Nc,
    #[serde(alias = "ROMI-v1")]
    RomiV1,
    #[serde(alias = "ROMI-v2")]
    RomiV2,
}

impl DesignKind {
    pub const ALL: [DesignKind; 5] =
        [DesignKind::Pool, DesignKind::Independent, DesignKind::RomiV1Nc, DesignKind::RomiV1, DesignKind::RomiV2];

    pub fn name(self) -> &'static str {
        match self {
            DesignKind::Pool => "Pool",
            DesignKind::Independent => "Independent",
            DesignKind::RomiV1Nc => "ROMI-v1-NC",
            DesignKind::RomiV1 => "ROMI-v1",
            DesignKind::RomiV2 => "ROMI-v2",
        }
    }

    pub fn is_romi(self) -> bool {
        matches!(self, DesignKind::RomiV1Nc | DesignKind::RomiV1 | DesignKind::RomiV2)
    }

    /// Hierarchical model behind the final analysis of a ROMI design.
    pub fn model(self) -> Option<HierModel> {
        match self {
            DesignKind::RomiV1Nc => Some(HierModel::Unclustered),
            DesignKind::RomiV1 => Some(HierModel::Clustered),
            DesignKind::RomiV2 => Some(HierModel::Drift),
            _ => None,
        }
    }
}

/// Sample sizes, rules and utilities of one indication.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IndicationSettings {
    pub limits: MonitoringLimits,
    pub utility: UtilityTable,
    /// High-dose patients in stage 1.
    pub stage1_n: u32,
    /// Maximum stage-2 patients per dose.
    pub stage2_n: u32,
    /// Per-dose stage-2 count at which the interim look fires; 0 disables it.
    pub interim_n: u32,
}

impl Default for IndicationSettings {
    fn default() -> Self {
        Self {
            limits: MonitoringLimits::default(),
            utility: UtilityTable::reference(),
            stage1_n: 14,
            stage2_n: 20,
            interim_n: 10,
        }
    }
}

impl IndicationSettings {
    fn max_n(&self) -> u32 {
        self.stage1_n + 2 * self.stage2_n
    }
}

/// Comparator controls. Unset sizes are derived so each comparator has the
/// same maximum total sample size as the ROMI designs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComparatorSettings {
    pub prior_a: f64,
    pub prior_b: f64,
    /// Independent: maximum per dose in each indication (default: half the
    /// indication's ROMI maximum).
    pub independent_per_dose: Option<u32>,
    /// Independent: per-dose count at the interim (default: half the maximum, rounded up).
    pub independent_interim: Option<u32>,
    /// Pool: total evaluated patients at the interim (default: half the total).
    pub pool_interim: Option<u32>,
}

impl Default for ComparatorSettings {
    fn default() -> Self {
        Self { prior_a: 0.1, prior_b: 0.1, independent_per_dose: None, independent_interim: None, pool_interim: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignConfig {
    pub kind: DesignKind,
    pub indications: Vec<IndicationSettings>,
    #[serde(default)]
    pub hyper: HierHyperparams,
    #[serde(default)]
    pub mcmc: McmcConfig,
    /// Extra stage-1 look after half the stage-1 patients.
    #[serde(default)]
    pub mid_stage1_look: bool,
    #[serde(default)]
    pub comparator: ComparatorSettings,
}

impl DesignConfig {
    /// Reference configuration with `k` identical indications.
    pub fn reference(kind: DesignKind, k: usize) -> Self {
        Self {
            kind,
            indications: vec![IndicationSettings::default(); k],
            hyper: HierHyperparams::default(),
            mcmc: McmcConfig::default(),
            mid_stage1_look: false,
            comparator: ComparatorSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.indications.is_empty() {
            return Err(Error::InvalidInput("design has no indications".into()));
        }
        for (k, s) in self.indications.iter().enumerate() {
            s.limits.validate().map_err(|e| Error::InvalidInput(format!("indication {k}: {e}")))?;
            s.utility.validate().map_err(|e| Error::InvalidInput(format!("indication {k}: {e}")))?;
            if s.stage2_n == 0 {
                return Err(Error::InvalidInput(format!("indication {k}: stage2_n must be at least 1")));
            }
        }
        if self.kind.is_romi() {
            self.hyper.validate()?;
            self.mcmc.validate()?;
        }
        let c = &self.comparator;
        if !(c.prior_a > 0.0 && c.prior_b > 0.0) {
            return Err(Error::InvalidInput("comparator prior parameters must be positive".into()));
        }
        if self.kind == DesignKind::Pool && self.indications.iter().any(|s| s.limits != self.indications[0].limits) {
            return Err(Error::ConfigMismatch("Pool applies one set of monitoring limits to every indication".into()));
        }
        Ok(())
    }

    /// Maximum total sample size.
    pub fn max_total(&self) -> u32 {
        match self.kind {
            DesignKind::Independent => (0..self.indications.len()).map(|k| 2 * self.independent_sizes(k).0).sum(),
            _ => self.indications.iter().map(IndicationSettings::max_n).sum(),
        }
    }

    /// (maximum per dose, per-dose interim count) of indication `k` under Independent.
    pub fn independent_sizes(&self, k: usize) -> (u32, u32) {
        let per_dose = self.comparator.independent_per_dose.unwrap_or(self.indications[k].max_n() / 2);
        let interim = self.comparator.independent_interim.unwrap_or(per_dose.div_ceil(2));
        (per_dose, interim)
    }

    /// (maximum per dose, total at the interim) under Pool.
    pub fn pool_sizes(&self) -> (u32, u32) {
        let total: u32 = self.indications.iter().map(IndicationSettings::max_n).sum();
        (total / 2, self.comparator.pool_interim.unwrap_or(total / 2))
    }
}

/// A validated configuration with its precomputed stopping boundaries.
#[derive(Debug, Clone)]
pub struct Design {
    config: DesignConfig,
    tables: Vec<BoundaryTable>,
}

impl Design {
    pub fn new(config: DesignConfig) -> Result<Self> {
        config.validate()?;
        let n_max = config.max_total();
        let tables = config.indications.iter().map(|s| BoundaryTable::new(s.limits, n_max)).collect();
        Ok(Self { config, tables })
    }

    pub fn config(&self) -> &DesignConfig {
        &self.config
    }

    pub fn kind(&self) -> DesignKind {
        self.config.kind
    }

    pub fn table(&self, k: usize) -> &BoundaryTable {
        &self.tables[k]
    }

    pub fn n_indications(&self) -> usize {
        self.config.indications.len()
    }
}

/// True joint outcome probabilities in each stage, indexed `[k][dose.index()]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialTruth {
    pub stage1_high: Vec<JointOutcomeProb>,
    pub stage2: Vec<[JointOutcomeProb; 2]>,
}

/// Where patient outcomes come from.
pub trait OutcomeSource {
    fn stage1(&mut self, indication: usize, p: &JointOutcomeProb) -> Outcome;
    fn stage2(&mut self, indication: usize, dose: Dose, p: &JointOutcomeProb) -> Outcome;
    /// Whether the high dose comes first in the next Pool randomization block.
    fn high_first(&mut self) -> bool;
}

/// Outcomes drawn from the replication's counter-based streams, one per
/// patient channel.
pub struct SeededOutcomes {
    master_seed: u64,
    replication: u64,
    streams: std::collections::HashMap<(usize, u8), rand_chacha::ChaCha8Rng>,
}

impl SeededOutcomes {
    pub fn new(master_seed: u64, replication: u64) -> Self {
        Self { master_seed, replication, streams: std::collections::HashMap::new() }
    }

    fn stream(&mut self, key: (usize, u8), purpose: StreamPurpose) -> &mut rand_chacha::ChaCha8Rng {
        let (seed, rep) = (self.master_seed, self.replication);
        self.streams.entry(key).or_insert_with(|| replication_stream(seed, rep, purpose))
    }
}

impl OutcomeSource for SeededOutcomes {
    fn stage1(&mut self, indication: usize, p: &JointOutcomeProb) -> Outcome {
        sample_outcome(p, self.stream((indication, 0), StreamPurpose::Stage1 { indication }))
    }

    fn stage2(&mut self, indication: usize, dose: Dose, p: &JointOutcomeProb) -> Outcome {
        let key = (indication, 1 + dose.index() as u8);
        sample_outcome(p, self.stream(key, StreamPurpose::Stage2 { indication, dose }))
    }

    fn high_first(&mut self) -> bool {
        use rand::Rng;
        self.stream((usize::MAX, 0), StreamPurpose::PoolRandomization).random::<bool>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DoseStatus {
    Enrolling,
    StoppedToxicity,
    StoppedFutility,
    Completed,
}

impl DoseStatus {
    pub fn is_stopped(self) -> bool {
        matches!(self, DoseStatus::StoppedToxicity | DoseStatus::StoppedFutility)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndicationStatus {
    Active,
    DroppedStage1,
    Terminated,
    Finished,
}

/// Accrued counts of one indication.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArmCounts {
    pub stage1_high: OutcomeCounts,
    pub stage2_high: OutcomeCounts,
    pub stage2_low: OutcomeCounts,
}

impl ArmCounts {
    pub fn stage2(&self, dose: Dose) -> &OutcomeCounts {
        match dose {
            Dose::High => &self.stage2_high,
            Dose::Low => &self.stage2_low,
        }
    }

    fn stage2_mut(&mut self, dose: Dose) -> &mut OutcomeCounts {
        match dose {
            Dose::High => &mut self.stage2_high,
            Dose::Low => &mut self.stage2_low,
        }
    }

    /// Counts behind the toxicity rule: both stages for the high dose.
    pub fn safety(&self, dose: Dose) -> OutcomeCounts {
        match dose {
            Dose::High => self.stage1_high + self.stage2_high,
            Dose::Low => self.stage2_low,
        }
    }

    pub fn total(&self) -> u32 {
        self.stage1_high.n() + self.stage2_high.n() + self.stage2_low.n()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicationState {
    pub counts: ArmCounts,
    /// Indexed by [`Dose::index`].
    pub dose_status: [DoseStatus; 2],
    pub status: IndicationStatus,
}

impl Default for IndicationState {
    fn default() -> Self {
        Self { counts: ArmCounts::default(), dose_status: [DoseStatus::Enrolling; 2], status: IndicationStatus::Active }
    }
}

impl IndicationState {
    pub fn status(&self, dose: Dose) -> DoseStatus {
        self.dose_status[dose.index()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Look {
    Stage1Mid,
    Stage1,
    Interim,
    Final,
}

/// Verdicts of both rules at one look for one dose.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LookRecord {
    pub look: Look,
    pub dose: Dose,
    /// Patients behind the toxicity rule.
    pub n_safety: u32,
    pub toxicity: bool,
    pub futility: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reason {
    /// Both doses acceptable; the selected one has the larger posterior mean utility.
    HigherUtility,
    OnlyAcceptableDose,
    DroppedStage1Toxicity,
    DroppedStage1Futility,
    TerminatedAtInterim,
    NoAcceptableDose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicationResult {
    pub selection: Option<Dose>,
    pub reason: Reason,
    pub counts: ArmCounts,
    pub looks: Vec<LookRecord>,
    /// Posterior mean quasi-probabilities `[high, low]` when a fit was made.
    pub q_hat: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub indications: Vec<IndicationResult>,
    pub total_n: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage1Decision {
    Keep,
    DropToxicity,
    DropFutility,
}

/// End-of-stage-1 screen of the high dose. Toxicity takes precedence when both fire.
pub fn stage1_decision(counts: &OutcomeCounts, table: &BoundaryTable) -> (Stage1Decision, LookRecord) {
    stage1_look(counts, table, Look::Stage1)
}

fn stage1_look(counts: &OutcomeCounts, table: &BoundaryTable, look: Look) -> (Stage1Decision, LookRecord) {
    let toxicity = table.tox_stop(counts.n(), counts.tox());
    let futility = table.interim_futility_stop(counts.n(), counts.resp());
    let record = LookRecord { look, dose: Dose::High, n_safety: counts.n(), toxicity, futility };
    let decision = if toxicity {
        Stage1Decision::DropToxicity
    } else if futility {
        Stage1Decision::DropFutility
    } else {
        Stage1Decision::Keep
    };
    (decision, record)
}

/// Stage-2 interim: toxicity on safety counts, futility on stage-2 counts.
/// Stops doses in place and terminates the indication if both stop.
pub fn stage2_interim(state: &mut IndicationState, table: &BoundaryTable) -> Vec<LookRecord> {
    let mut records = Vec::with_capacity(2);
    for dose in Dose::BOTH {
        if state.status(dose) != DoseStatus::Enrolling {
            continue;
        }
        let safety = state.counts.safety(dose);
        let stage2 = state.counts.stage2(dose);
        let toxicity = table.tox_stop(safety.n(), safety.tox());
        let futility = table.interim_futility_stop(stage2.n(), stage2.resp());
        records.push(LookRecord { look: Look::Interim, dose, n_safety: safety.n(), toxicity, futility });
        if toxicity {
            state.dose_status[dose.index()] = DoseStatus::StoppedToxicity;
        } else if futility {
            state.dose_status[dose.index()] = DoseStatus::StoppedFutility;
        }
    }
    if state.dose_status.iter().all(|s| s.is_stopped()) {
        state.status = IndicationStatus::Terminated;
    }
    records
}

/// Final acceptability of each dose, indexed by [`Dose::index`]. A dose
/// stopped earlier is never acceptable.
pub fn final_acceptability(state: &IndicationState, table: &BoundaryTable) -> ([bool; 2], Vec<LookRecord>) {
    let mut ok = [false; 2];
    let mut records = Vec::with_capacity(2);
    for dose in Dose::BOTH {
        if state.status(dose).is_stopped() {
            continue;
        }
        let safety = state.counts.safety(dose);
        let stage2 = state.counts.stage2(dose);
        let toxicity = table.tox_stop(safety.n(), safety.tox());
        let futility = table.final_futility_stop(stage2.n(), stage2.resp());
        records.push(LookRecord { look: Look::Final, dose, n_safety: safety.n(), toxicity, futility });
        ok[dose.index()] = !toxicity && !futility;
    }
    (ok, records)
}

/// Argmax of posterior mean utility among acceptable doses; exact ties go
/// to the low dose. `q_hat` is only consulted when both doses are acceptable.
pub fn final_selection(acceptable: [bool; 2], q_hat: Option<[f64; 2]>) -> (Option<Dose>, Reason) {
    match acceptable {
        [false, false] => (None, Reason::NoAcceptableDose),
        [true, false] => (Some(Dose::High), Reason::OnlyAcceptableDose),
        [false, true] => (Some(Dose::Low), Reason::OnlyAcceptableDose),
        [true, true] => {
            let [h, l] = q_hat.expect("posterior means needed when both doses are acceptable");
            let dose = if h - l > TIE_TOLERANCE { Dose::High } else { Dose::Low };
            (Some(dose), Reason::HigherUtility)
        }
    }
}

/// One replication with outcomes from the counter-based streams of
/// `(master_seed, replication)`.
pub fn run_trial(design: &Design, truth: &TrialTruth, master_seed: u64, replication: u64) -> Result<TrialResult> {
    let mut source = SeededOutcomes::new(master_seed, replication);
    run_trial_with(design, truth, &mut source, fit_seed(master_seed, replication))
}

pub fn run_trial_with(
    design: &Design,
    truth: &TrialTruth,
    source: &mut dyn OutcomeSource,
    mcmc_seed: u64,
) -> Result<TrialResult> {
    let k = design.n_indications();
    if truth.stage1_high.len() != k || truth.stage2.len() != k {
        return Err(Error::ConfigMismatch(format!(
            "design has {k} indications but the scenario has {}",
            truth.stage2.len()
        )));
    }
    match design.kind() {
        DesignKind::Pool => Ok(run_pool(design, truth, source)),
        DesignKind::Independent => Ok(run_independent(design, truth, source)),
        _ => run_romi(design, truth, source, mcmc_seed),
    }
}

struct RomiIndication {
    state: IndicationState,
    looks: Vec<LookRecord>,
    dropped: Option<Reason>,
}

fn romi_stage1(design: &Design, k: usize, truth: &TrialTruth, source: &mut dyn OutcomeSource) -> RomiIndication {
    let s = &design.config.indications[k];
    let table = design.table(k);
    let mut ind = RomiIndication { state: IndicationState::default(), looks: Vec::new(), dropped: None };
    let mid = if design.config.mid_stage1_look { s.stage1_n / 2 } else { 0 };
    let drop_reason = |d: Stage1Decision| match d {
        Stage1Decision::DropToxicity => Some(Reason::DroppedStage1Toxicity),
        Stage1Decision::DropFutility => Some(Reason::DroppedStage1Futility),
        Stage1Decision::Keep => None,
    };
    for j in 1..=s.stage1_n {
        let outcome = source.stage1(k, &truth.stage1_high[k]);
        ind.state.counts.stage1_high.record(outcome);
        let look = if j == s.stage1_n {
            Look::Stage1
        } else if j == mid {
            Look::Stage1Mid
        } else {
            continue;
        };
        let (decision, record) = stage1_look(&ind.state.counts.stage1_high, table, look);
        ind.looks.push(record);
        if let Some(reason) = drop_reason(decision) {
            ind.dropped = Some(reason);
            ind.state.status = IndicationStatus::DroppedStage1;
            ind.state.dose_status = [DoseStatus::Completed; 2];
            break;
        }
    }
    ind
}

fn romi_stage2(
    design: &Design,
    k: usize,
    truth: &TrialTruth,
    source: &mut dyn OutcomeSource,
    ind: &mut RomiIndication,
) {
    let s = &design.config.indications[k];
    let table = design.table(k);
    let interim = if s.interim_n > 0 && s.interim_n < s.stage2_n { Some(s.interim_n) } else { None };
    let mut enroll_to = |state: &mut IndicationState, target: u32| {
        for dose in Dose::BOTH {
            if state.status(dose) != DoseStatus::Enrolling {
                continue;
            }
            while state.counts.stage2(dose).n() < target {
                let outcome = source.stage2(k, dose, &truth.stage2[k][dose.index()]);
                state.counts.stage2_mut(dose).record(outcome);
            }
        }
    };
    // Block randomization of size 2 keeps the arms level, and with outcomes
    // observed immediately the order inside a block has no effect.
    if let Some(n) = interim {
        enroll_to(&mut ind.state, n);
        let records = stage2_interim(&mut ind.state, table);
        ind.looks.extend(records);
        if ind.state.status == IndicationStatus::Terminated {
            return;
        }
    }
    enroll_to(&mut ind.state, s.stage2_n);
    for dose in Dose::BOTH {
        if ind.state.status(dose) == DoseStatus::Enrolling {
            ind.state.dose_status[dose.index()] = DoseStatus::Completed;
        }
    }
    ind.state.status = IndicationStatus::Finished;
}

/// Quasi-event data of the joint final fit. Indications dropped in stage 1
/// enter inactive.
pub fn fit_data(settings: &[IndicationSettings], counts: &[ArmCounts], active: &[bool]) -> QuasiData {
    QuasiData::new(
        settings
            .iter()
            .zip(counts)
            .zip(active)
            .map(|((s, c), &active)| IndicationData {
                z_h2: quasi_events(&s.utility, &c.stage2_high),
                n_h2: c.stage2_high.n(),
                z_l2: quasi_events(&s.utility, &c.stage2_low),
                n_l2: c.stage2_low.n(),
                z_h1: quasi_events(&s.utility, &c.stage1_high),
                n_h1: c.stage1_high.n(),
                active,
            })
            .collect(),
    )
}

fn run_romi(
    design: &Design,
    truth: &TrialTruth,
    source: &mut dyn OutcomeSource,
    mcmc_seed: u64,
) -> Result<TrialResult> {
    let cfg = &design.config;
    let k = design.n_indications();
    let mut inds: Vec<RomiIndication> = (0..k).map(|i| romi_stage1(design, i, truth, source)).collect();
    for (i, ind) in inds.iter_mut().enumerate() {
        if ind.dropped.is_none() {
            romi_stage2(design, i, truth, source, ind);
        }
    }

    let mut acceptable = vec![[false; 2]; k];
    for (i, ind) in inds.iter_mut().enumerate() {
        if ind.state.status == IndicationStatus::Finished {
            let (ok, records) = final_acceptability(&ind.state, design.table(i));
            acceptable[i] = ok;
            ind.looks.extend(records);
        }
    }

    // one joint fit, only when some indication has a real choice to make
    let mut q_hat: Vec<Option<[f64; 2]>> = vec![None; k];
    if acceptable.iter().any(|a| a[0] && a[1]) {
        let model = cfg.kind.model().expect("ROMI design");
        let counts: Vec<ArmCounts> = inds.iter().map(|ind| ind.state.counts).collect();
        let active: Vec<bool> = inds.iter().map(|ind| ind.dropped.is_none()).collect();
        let data = fit_data(&cfg.indications, &counts, &active);
        let options = hiermodel::FitOptions::default();
        let (summary, _) = hiermodel::fit(model, &data, &cfg.hyper, &cfg.mcmc.with_seed(mcmc_seed), options)?;
        for p in &summary.indications {
            q_hat[p.index] = Some([p.q_high.mean, p.q_low.mean]);
        }
    }

    let indications: Vec<IndicationResult> = inds
        .into_iter()
        .enumerate()
        .map(|(i, ind)| {
            let (selection, reason) = match (ind.dropped, ind.state.status) {
                (Some(reason), _) => (None, reason),
                (None, IndicationStatus::Terminated) => (None, Reason::TerminatedAtInterim),
                _ => final_selection(acceptable[i], q_hat[i]),
            };
            IndicationResult { selection, reason, counts: ind.state.counts, looks: ind.looks, q_hat: q_hat[i] }
        })
        .collect();
    let total_n = indications.iter().map(|r| r.counts.total()).sum();
    Ok(TrialResult { indications, total_n })
}

/// Pool: one randomized trial over all indications, analysed as if they
/// were one population. The j-th patient on a dose comes from indication
/// `j mod K`, i.e. round-robin blocks of two.
pub fn run_pool(design: &Design, truth: &TrialTruth, source: &mut dyn OutcomeSource) -> TrialResult {
    let cfg = &design.config;
    let k = design.n_indications();
    let table = design.table(0);
    let (per_dose, interim_total) = design.config.pool_sizes();
    let mut counts = vec![ArmCounts::default(); k];
    let mut enrolled = [0u32; 2];
    let mut status = [DoseStatus::Enrolling; 2];

    let enroll = |dose: Dose, counts: &mut Vec<ArmCounts>, enrolled: &mut [u32; 2], source: &mut dyn OutcomeSource| {
        let i = (enrolled[dose.index()] as usize) % k;
        let outcome = source.stage2(i, dose, &truth.stage2[i][dose.index()]);
        counts[i].stage2_mut(dose).record(outcome);
        enrolled[dose.index()] += 1;
    };

    let pooled =
        |counts: &[ArmCounts], dose: Dose| counts.iter().fold(OutcomeCounts::default(), |acc, c| acc + *c.stage2(dose));

    let mut looks = Vec::new();
    let has_interim = interim_total > 0 && interim_total < 2 * per_dose;
    if has_interim {
        let mut second: Option<Dose> = None;
        while enrolled[0] + enrolled[1] < interim_total {
            let dose = match second.take() {
                Some(d) => d,
                None => {
                    let first = if source.high_first() { Dose::High } else { Dose::Low };
                    second = Some(if first == Dose::High { Dose::Low } else { Dose::High });
                    first
                }
            };
            enroll(dose, &mut counts, &mut enrolled, source);
        }
        for dose in Dose::BOTH {
            let c = pooled(&counts, dose);
            let toxicity = table.tox_stop(c.n(), c.tox());
            let futility = table.interim_futility_stop(c.n(), c.resp());
            looks.push(LookRecord { look: Look::Interim, dose, n_safety: c.n(), toxicity, futility });
            if toxicity {
                status[dose.index()] = DoseStatus::StoppedToxicity;
            } else if futility {
                status[dose.index()] = DoseStatus::StoppedFutility;
            }
        }
    }

    let terminated = status.iter().all(|s| s.is_stopped());
    let (selection, reason, q_hat) = if terminated {
        (None, Reason::TerminatedAtInterim, None)
    } else {
        for dose in Dose::BOTH {
            if status[dose.index()] == DoseStatus::Enrolling {
                while enrolled[dose.index()] < per_dose {
                    enroll(dose, &mut counts, &mut enrolled, source);
                }
                status[dose.index()] = DoseStatus::Completed;
            }
        }
        let mut acceptable = [false; 2];
        let mut q = [0.0; 2];
        for dose in Dose::BOTH {
            let c = pooled(&counts, dose);
            let z: f64 =
                counts.iter().zip(&cfg.indications).map(|(a, s)| quasi_events(&s.utility, a.stage2(dose))).sum();
            q[dose.index()] = fit_conjugate(z, c.n(), cfg.comparator.prior_a, cfg.comparator.prior_b)
                .expect("pooled quasi-events within range")
                .mean();
            if status[dose.index()].is_stopped() {
                continue;
            }
            let toxicity = table.tox_stop(c.n(), c.tox());
            let futility = table.final_futility_stop(c.n(), c.resp());
            looks.push(LookRecord { look: Look::Final, dose, n_safety: c.n(), toxicity, futility });
            acceptable[dose.index()] = !toxicity && !futility;
        }
        let (sel, reason) = final_selection(acceptable, Some(q));
        (sel, reason, Some(q))
    };

    let indications: Vec<IndicationResult> = counts
        .into_iter()
        .map(|c| IndicationResult { selection, reason, counts: c, looks: looks.clone(), q_hat })
        .collect();
    let total_n = indications.iter().map(|r| r.counts.total()).sum();
    TrialResult { indications, total_n }
}

/// Independent: a separate two-arm randomized trial in every indication.
pub fn run_independent(design: &Design, truth: &TrialTruth, source: &mut dyn OutcomeSource) -> TrialResult {
    let cfg = &design.config;
    let indications: Vec<IndicationResult> = (0..design.n_indications())
        .map(|k| {
            let (per_dose, interim) = cfg.independent_sizes(k);
            let table = design.table(k);
            let mut state = IndicationState::default();
            let mut looks = Vec::new();
            let mut enroll_to = |state: &mut IndicationState, target: u32| {
                for dose in Dose::BOTH {
                    if state.status(dose) != DoseStatus::Enrolling {
                        continue;
                    }
                    while state.counts.stage2(dose).n() < target {
                        let outcome = source.stage2(k, dose, &truth.stage2[k][dose.index()]);
                        state.counts.stage2_mut(dose).record(outcome);
                    }
                }
            };
            if interim > 0 && interim < per_dose {
                enroll_to(&mut state, interim);
                looks.extend(stage2_interim(&mut state, table));
            }
            if state.status == IndicationStatus::Terminated {
                return IndicationResult {
                    selection: None,
                    reason: Reason::TerminatedAtInterim,
                    counts: state.counts,
                    looks,
                    q_hat: None,
                };
            }
            enroll_to(&mut state, per_dose);
            for dose in Dose::BOTH {
                if state.status(dose) == DoseStatus::Enrolling {
                    state.dose_status[dose.index()] = DoseStatus::Completed;
                }
            }
            state.status = IndicationStatus::Finished;
            let (acceptable, records) = final_acceptability(&state, table);
            looks.extend(records);
            let u = &cfg.indications[k].utility;
            let q = Dose::BOTH.map(|dose| {
                let c = state.counts.stage2(dose);
                fit_conjugate(quasi_events(u, c), c.n(), cfg.comparator.prior_a, cfg.comparator.prior_b)
                    .expect("quasi-events within range")
                    .mean()
            });
            let (selection, reason) = final_selection(acceptable, Some(q));
            IndicationResult { selection, reason, counts: state.counts, looks, q_hat: Some(q) }
        })
        .collect();
    let total_n = indications.iter().map(|r| r.counts.total()).sum();
    TrialResult { indications, total_n }
}

/// Structural invariants of one replication: every selected dose passes its
/// own final rules at a recorded final look, counts add up to the total, and
/// no cap is exceeded.
pub fn check_invariants(design: &Design, r: &TrialResult) -> std::result::Result<(), String> {
    let cfg = design.config();
    let sum: u32 = r.indications.iter().map(|i| i.counts.total()).sum();
    if sum != r.total_n {
        return Err(format!("total {} but counts sum to {sum}", r.total_n));
    }
    if r.total_n > cfg.max_total() {
        return Err(format!("total {} exceeds maximum {}", r.total_n, cfg.max_total()));
    }
    for (k, ind) in r.indications.iter().enumerate() {
        let s = &cfg.indications[k];
        let c = &ind.counts;
        let caps_ok = match cfg.kind {
            DesignKind::Pool => true,
            DesignKind::Independent => {
                let (per_dose, _) = cfg.independent_sizes(k);
                c.stage1_high.n() == 0 && c.stage2_high.n() <= per_dose && c.stage2_low.n() <= per_dose
            }
            _ => c.stage1_high.n() <= s.stage1_n && c.stage2_high.n() <= s.stage2_n && c.stage2_low.n() <= s.stage2_n,
        };
        if !caps_ok {
            return Err(format!("indication {k} exceeds its caps: {c:?}"));
        }
        if let Some(dose) = ind.selection {
            let t = design.table(k);
            let (safety, stage2) = match cfg.kind {
                DesignKind::Pool => {
                    let pooled = r.indications.iter().fold(OutcomeCounts::default(), |a, i| a + *i.counts.stage2(dose));
                    (pooled, pooled)
                }
                _ => (c.safety(dose), *c.stage2(dose)),
            };
            if t.tox_stop(safety.n(), safety.tox()) || t.final_futility_stop(stage2.n(), stage2.resp()) {
                return Err(format!("indication {k} selected an unacceptable dose: {ind:?}"));
            }
            if !ind.looks.iter().any(|l| l.look == Look::Final && l.dose == dose && !l.toxicity && !l.futility) {
                return Err(format!("indication {k} selected without a passing final look"));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests;
