//! Scenarios, the replication driver, and operating-characteristic summaries.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::designs::{run_trial, Design, DesignConfig, DesignKind, Dose, Reason, TrialResult, TrialTruth};
use crate::error::{Error, Result};
use crate::outcomes::{solve_joint, JointOutcomeProb, UtilityTable};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DoseTruth {
    pub pi_tox: f64,
    pub pi_resp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndicationTruth {
    pub high: DoseTruth,
    pub low: DoseTruth,
    /// Dose a correct design selects; `None` when neither dose is worth taking.
    #[serde(default)]
    pub true_obd: Option<Dose>,
}

impl IndicationTruth {
    pub fn dose(&self, dose: Dose) -> DoseTruth {
        match dose {
            Dose::High => self.high,
            Dose::Low => self.low,
        }
    }
}

/// Stage-2 shift of the high dose's marginals.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Drift {
    pub resp_high: f64,
    pub tox_high: f64,
}

fn default_phi() -> f64 {
    0.25
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    pub indications: Vec<IndicationTruth>,
    #[serde(default = "default_phi")]
    pub phi: f64,
    #[serde(default)]
    pub drift: Drift,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    One,
    Two,
}

impl ScenarioSpec {
    pub fn k(&self) -> usize {
        self.indications.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.indications.is_empty() {
            return Err(Error::InvalidInput(format!("scenario {} has no indications", self.name)));
        }
        drift_apply(self, Stage::One)?;
        drift_apply(self, Stage::Two)?;
        Ok(())
    }

    /// Joint outcome probabilities of both stages.
    pub fn truth(&self) -> Result<TrialTruth> {
        let stage1 = drift_apply(self, Stage::One)?;
        let stage2 = drift_apply(self, Stage::Two)?;
        Ok(TrialTruth { stage1_high: stage1.iter().map(|p| p[0]).collect(), stage2 })
    }

    /// True mean utilities `[high, low]` per indication in stage 2.
    pub fn mean_utilities(&self, utilities: &[UtilityTable]) -> Result<Vec<[f64; 2]>> {
        Ok(drift_apply(self, Stage::Two)?
            .iter()
            .zip(utilities)
            .map(|(p, u)| [p[0].mean_utility(u), p[1].mean_utility(u)])
            .collect())
    }

    pub fn true_obds(&self) -> Vec<Option<Dose>> {
        self.indications.iter().map(|i| i.true_obd).collect()
    }
}

/// Joint probabilities `[high, low]` per indication in one stage. The drift
/// moves only the stage-2 high-dose marginals; every cell is rebuilt with
/// the scenario's association.
pub fn drift_apply(scenario: &ScenarioSpec, stage: Stage) -> Result<Vec<[JointOutcomeProb; 2]>> {
    let d = scenario.drift;
    scenario
        .indications
        .iter()
        .map(|ind| {
            let (dt, dr) = match stage {
                Stage::One => (0.0, 0.0),
                Stage::Two => (d.tox_high, d.resp_high),
            };
            let (h, l) = (ind.high, ind.low);
            let (ht, hr) = (h.pi_tox + dt, h.pi_resp + dr);
            if !(0.0..=1.0).contains(&ht) || !(0.0..=1.0).contains(&hr) {
                return Err(Error::Domain(format!("drifted high-dose marginals ({ht}, {hr}) leave [0, 1]")));
            }
            Ok([solve_joint(ht, hr, scenario.phi)?, solve_joint(l.pi_tox, l.pi_resp, scenario.phi)?])
        })
        .collect()
}

fn three(name: &str, rows: [((f64, f64), (f64, f64), Option<Dose>); 3]) -> ScenarioSpec {
    ScenarioSpec {
        name: name.to_string(),
        indications: rows
            .iter()
            .map(|&((ht, hr), (lt, lr), obd)| IndicationTruth {
                high: DoseTruth { pi_tox: ht, pi_resp: hr },
                low: DoseTruth { pi_tox: lt, pi_resp: lr },
                true_obd: obd,
            })
            .collect(),
        phi: default_phi(),
        drift: Drift::default(),
    }
}

/// The six three-indication reference scenarios, `A1` to `A6`.
pub fn preset(name: &str) -> Option<ScenarioSpec> {
    use Dose::{High as H, Low as L};
    let inert = ((0.4, 0.05), (0.3, 0.05), None);
    let low_wins = ((0.25, 0.4), (0.15, 0.4), Some(L));
    let high_wins = ((0.2, 0.4), (0.15, 0.3), Some(H));
    let s = match name {
        "A1" => three(name, [inert; 3]),
        "A2" => three(name, [low_wins; 3]),
        "A3" => three(name, [((0.25, 0.4), (0.15, 0.3), Some(H)), inert, inert]),
        "A4" => three(name, [inert, high_wins, high_wins]),
        "A5" => three(name, [inert, high_wins, low_wins]),
        "A6" => three(name, [high_wins, low_wins, low_wins]),
        _ => return None,
    };
    Some(s)
}

pub const PRESET_NAMES: [&str; 6] = ["A1", "A2", "A3", "A4", "A5", "A6"];

/// Stop-reason tallies of the replications that selected nothing.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StopBreakdown {
    pub dropped_stage1_toxicity: u64,
    pub dropped_stage1_futility: u64,
    pub terminated_at_interim: u64,
    pub no_acceptable_dose: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicationSummary {
    pub selected_high: u64,
    pub selected_low: u64,
    pub selected_none: u64,
    pub pct_high: f64,
    pub pct_low: f64,
    pub pct_none: f64,
    /// Binomial standard errors of the three percentages.
    pub se_high: f64,
    pub se_low: f64,
    pub se_none: f64,
    pub mean_n: f64,
    pub stops: StopBreakdown,
}

impl IndicationSummary {
    pub fn pct(&self, selection: Option<Dose>) -> f64 {
        match selection {
            Some(Dose::High) => self.pct_high,
            Some(Dose::Low) => self.pct_low,
            None => self.pct_none,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingCharacteristics {
    pub design: DesignKind,
    pub scenario: String,
    pub n_reps: u64,
    pub master_seed: u64,
    pub indications: Vec<IndicationSummary>,
    /// Correct selection percentage; `None` when no indication has a true OBD.
    pub csp: Option<f64>,
    pub mean_total_n: f64,
}

fn pct_and_se(count: u64, n: u64) -> (f64, f64) {
    let p = count as f64 / n as f64;
    (100.0 * p, 100.0 * (p * (1.0 - p) / n as f64).sqrt())
}

/// Average, over indications with a true OBD, of the percentage selecting it.
pub fn csp(indications: &[IndicationSummary], truth: &[Option<Dose>]) -> Result<f64> {
    let hits: Vec<f64> = indications.iter().zip(truth).filter_map(|(s, t)| t.map(|d| s.pct(Some(d)))).collect();
    if hits.is_empty() {
        return Err(Error::NoTruthDefined);
    }
    Ok(hits.iter().sum::<f64>() / hits.len() as f64)
}

/// Ordered reduction of replication results.
pub fn summarize(
    design: DesignKind,
    scenario: &ScenarioSpec,
    master_seed: u64,
    results: &[TrialResult],
) -> OperatingCharacteristics {
    let n = results.len() as u64;
    let indications: Vec<IndicationSummary> = (0..scenario.k())
        .map(|k| {
            let (mut h, mut l, mut none, mut total_n) = (0u64, 0u64, 0u64, 0u64);
            let mut stops = StopBreakdown::default();
            for r in results {
                let ind = &r.indications[k];
                total_n += ind.counts.total() as u64;
                match ind.selection {
                    Some(Dose::High) => h += 1,
                    Some(Dose::Low) => l += 1,
                    None => {
                        none += 1;
                        match ind.reason {
                            Reason::DroppedStage1Toxicity => stops.dropped_stage1_toxicity += 1,
                            Reason::DroppedStage1Futility => stops.dropped_stage1_futility += 1,
                            Reason::TerminatedAtInterim => stops.terminated_at_interim += 1,
                            _ => stops.no_acceptable_dose += 1,
                        }
                    }
                }
            }
            let (pct_high, se_high) = pct_and_se(h, n);
            let (pct_low, se_low) = pct_and_se(l, n);
            let (pct_none, se_none) = pct_and_se(none, n);
            IndicationSummary {
                selected_high: h,
                selected_low: l,
                selected_none: none,
                pct_high,
                pct_low,
                pct_none,
                se_high,
                se_low,
                se_none,
                mean_n: total_n as f64 / n as f64,
                stops,
            }
        })
        .collect();
    let csp = csp(&indications, &scenario.true_obds()).ok();
    let mean_total_n = results.iter().map(|r| r.total_n as f64).sum::<f64>() / n as f64;
    OperatingCharacteristics {
        design,
        scenario: scenario.name.clone(),
        n_reps: n,
        master_seed,
        indications,
        csp,
        mean_total_n,
    }
}

fn check_dimensions(cfg: &DesignConfig, scenario: &ScenarioSpec) -> Result<()> {
    if cfg.indications.len() != scenario.k() {
        return Err(Error::ConfigMismatch(format!(
            "design has {} indications, scenario {} has {}",
            cfg.indications.len(),
            scenario.name,
            scenario.k()
        )));
    }
    Ok(())
}

/// Every replication's full result, in replication order, on the current
/// rayon pool.
pub fn simulate_trials(
    cfg: &DesignConfig,
    scenario: &ScenarioSpec,
    n_reps: u64,
    master_seed: u64,
) -> Result<Vec<TrialResult>> {
    if n_reps == 0 {
        return Err(Error::InvalidInput("n_reps must be at least 1".into()));
    }
    check_dimensions(cfg, scenario)?;
    let design = Design::new(cfg.clone())?;
    let truth = scenario.truth()?;
    (0..n_reps).into_par_iter().map(|rep| run_trial(&design, &truth, master_seed, rep)).collect()
}

pub fn simulate(
    cfg: &DesignConfig,
    scenario: &ScenarioSpec,
    n_reps: u64,
    master_seed: u64,
) -> Result<OperatingCharacteristics> {
    let results = simulate_trials(cfg, scenario, n_reps, master_seed)?;
    Ok(summarize(cfg.kind, scenario, master_seed, &results))
}

/// [`simulate`] on a dedicated pool of `threads` workers.
pub fn simulate_with_threads(
    cfg: &DesignConfig,
    scenario: &ScenarioSpec,
    n_reps: u64,
    master_seed: u64,
    threads: usize,
) -> Result<OperatingCharacteristics> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidInput(format!("cannot start {threads} worker threads: {e}")))?;
    pool.install(|| simulate(cfg, scenario, n_reps, master_seed))
}
