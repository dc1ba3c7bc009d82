use std::collections::HashMap;

use proptest::prelude::*;

use super::*;
use crate::monitoring::{futility_boundary, toxicity_boundary};
use crate::outcomes::solve_joint;
use crate::simengine::{preset, ScenarioSpec, PRESET_NAMES};
use crate::validation::oracle::beta_masses;

fn table() -> BoundaryTable {
    BoundaryTable::new(MonitoringLimits::default(), 100)
}

fn quick(kind: DesignKind, k: usize) -> Design {
    let mut cfg = DesignConfig::reference(kind, k);
    cfg.mcmc.n_iter = 800;
    cfg.mcmc.n_burn = 300;
    Design::new(cfg).unwrap()
}

fn counts(n: u32, tox: u32, resp: u32) -> OutcomeCounts {
    let x11 = (tox + resp).saturating_sub(n);
    OutcomeCounts::new(resp - x11, n + x11 - tox - resp, x11, tox - x11)
}

#[test]
fn stage1_examples() {
    let t = table();
    assert_eq!(stage1_decision(&counts(14, 0, 14), &t).0, Stage1Decision::Keep);
    assert_eq!(stage1_decision(&counts(14, 14, 5), &t).0, Stage1Decision::DropToxicity);
    assert_eq!(stage1_decision(&counts(14, 0, 0), &t).0, Stage1Decision::DropFutility);
    // both rules fire: toxicity is reported
    let (d, rec) = stage1_decision(&counts(14, 14, 0), &t);
    assert_eq!(d, Stage1Decision::DropToxicity);
    assert!(rec.toxicity && rec.futility);
}

#[test]
fn stage1_matches_boundaries() {
    let t = table();
    let lim = MonitoringLimits::default();
    let tox_b = toxicity_boundary(14, &lim, 0.95).unwrap();
    let fut_b = futility_boundary(14, &lim, 0.95).unwrap();
    assert_eq!(stage1_decision(&counts(14, tox_b, 7), &t).0, Stage1Decision::DropToxicity);
    assert_eq!(stage1_decision(&counts(14, tox_b - 1, 7), &t).0, Stage1Decision::Keep);
    assert_eq!(stage1_decision(&counts(14, 0, fut_b), &t).0, Stage1Decision::DropFutility);
    assert_eq!(stage1_decision(&counts(14, 0, fut_b + 1), &t).0, Stage1Decision::Keep);
}

#[test]
fn interim_pools_high_dose_safety() {
    let t = table();
    let mut state = IndicationState::default();
    state.counts.stage1_high = counts(14, 5, 6);
    state.counts.stage2_high = counts(10, 6, 5);
    state.counts.stage2_low = counts(10, 1, 4);
    let records = stage2_interim(&mut state, &t);
    let pooled_tail = beta_masses(0.1 + 11.0, 0.1 + 13.0, 0.4).1;
    let high = records.iter().find(|r| r.dose == Dose::High).unwrap();
    assert_eq!(high.n_safety, 24);
    assert_eq!(high.toxicity, pooled_tail > 0.95);
    let low = records.iter().find(|r| r.dose == Dose::Low).unwrap();
    assert_eq!(low.n_safety, 10);
}

#[test]
fn interim_futility_on_stage2_only() {
    let t = table();
    let mut state = IndicationState::default();
    // strong stage-1 responses must not rescue a stage-2 failure
    state.counts.stage1_high = counts(14, 0, 14);
    state.counts.stage2_high = counts(10, 0, 0);
    state.counts.stage2_low = counts(10, 0, 0);
    assert!(beta_masses(0.1, 10.1, 0.25).0 > 0.95);
    stage2_interim(&mut state, &t);
    assert_eq!(state.dose_status, [DoseStatus::StoppedFutility; 2]);
    assert_eq!(state.status, IndicationStatus::Terminated);

    let mut quiet = IndicationState::default();
    quiet.counts.stage2_high = counts(10, 0, 5);
    quiet.counts.stage2_low = counts(10, 0, 5);
    stage2_interim(&mut quiet, &t);
    assert_eq!(quiet.dose_status, [DoseStatus::Enrolling; 2]);
    assert_eq!(quiet.status, IndicationStatus::Active);
}

#[test]
fn selection_examples() {
    assert_eq!(final_selection([true, true], Some([0.55, 0.60])), (Some(Dose::Low), Reason::HigherUtility));
    assert_eq!(final_selection([true, true], Some([0.61, 0.60])), (Some(Dose::High), Reason::HigherUtility));
    assert_eq!(final_selection([true, true], Some([0.6, 0.6])), (Some(Dose::Low), Reason::HigherUtility));
    assert_eq!(final_selection([false, true], Some([0.9, 0.1])), (Some(Dose::Low), Reason::OnlyAcceptableDose));
    assert_eq!(final_selection([false, false], None), (None, Reason::NoAcceptableDose));

    // a dose stopped at interim is never acceptable
    let mut state = IndicationState::default();
    state.dose_status[0] = DoseStatus::StoppedToxicity;
    state.dose_status[1] = DoseStatus::Completed;
    state.counts.stage2_high = counts(10, 0, 9);
    state.counts.stage2_low = counts(20, 2, 12);
    let (ok, _) = final_acceptability(&state, &table());
    assert_eq!(ok, [false, true]);
}

fn scenario_from(pi: [(f64, f64); 2], k: usize, phi: f64) -> ScenarioSpec {
    use crate::simengine::{DoseTruth, Drift, IndicationTruth};
    ScenarioSpec {
        name: "custom".into(),
        indications: vec![
            IndicationTruth {
                high: DoseTruth { pi_tox: pi[0].0, pi_resp: pi[0].1 },
                low: DoseTruth { pi_tox: pi[1].0, pi_resp: pi[1].1 },
                true_obd: None,
            };
            k
        ],
        phi,
        drift: Drift::default(),
    }
}

#[test]
fn perfect_doses_never_stop() {
    let truth = scenario_from([(0.0, 1.0), (0.0, 1.0)], 3, 0.0).truth().unwrap();
    for kind in DesignKind::ALL {
        let design = quick(kind, 3);
        for rep in 0..5 {
            let r = run_trial(&design, &truth, 3, rep).unwrap();
            assert_eq!(r.total_n, design.config().max_total(), "{kind:?}");
            for ind in &r.indications {
                assert!(ind.selection.is_some(), "{kind:?} {ind:?}");
                assert!(ind.looks.iter().all(|l| !l.toxicity && !l.futility));
            }
        }
    }
}

#[test]
fn replications_are_reproducible() {
    let truth = preset("A5").unwrap().truth().unwrap();
    for kind in DesignKind::ALL {
        let design = quick(kind, 3);
        assert_eq!(run_trial(&design, &truth, 42, 7).unwrap(), run_trial(&design, &truth, 42, 7).unwrap());
    }
}

#[test]
fn v1_and_v2_share_every_look_before_the_fit() {
    let truth = preset("A6").unwrap().truth().unwrap();
    let v1 = quick(DesignKind::RomiV1, 3);
    let v2 = quick(DesignKind::RomiV2, 3);
    let nc = quick(DesignKind::RomiV1Nc, 3);
    for rep in 0..20 {
        let a = run_trial(&v1, &truth, 9, rep).unwrap();
        let b = run_trial(&v2, &truth, 9, rep).unwrap();
        let c = run_trial(&nc, &truth, 9, rep).unwrap();
        assert_eq!(a.total_n, b.total_n);
        assert_eq!(a.total_n, c.total_n);
        for (x, y) in a.indications.iter().zip(&b.indications) {
            assert_eq!(x.counts, y.counts);
            assert_eq!(x.looks, y.looks);
        }
    }
}

#[test]
fn independent_decomposes_by_indication() {
    let scenario = preset("A5").unwrap();
    let full = quick(DesignKind::Independent, 3);
    let mut single = scenario.clone();
    single.indications.truncate(1);
    let one = quick(DesignKind::Independent, 1);
    for rep in 0..10 {
        let r3 = run_trial(&full, &scenario.truth().unwrap(), 5, rep).unwrap();
        let r1 = run_trial(&one, &single.truth().unwrap(), 5, rep).unwrap();
        assert_eq!(r1.indications[0], r3.indications[0]);
    }
}

#[test]
fn comparator_sizes() {
    let cfg = DesignConfig::reference(DesignKind::Independent, 3);
    assert_eq!(cfg.independent_sizes(0), (27, 14));
    assert_eq!(cfg.max_total(), 162);
    let pool = DesignConfig::reference(DesignKind::Pool, 3);
    assert_eq!(pool.pool_sizes(), (81, 81));
    assert_eq!(DesignConfig::reference(DesignKind::Pool, 4).pool_sizes(), (108, 108));
    assert_eq!(DesignConfig::reference(DesignKind::RomiV1, 3).max_total(), 162);
}

#[test]
fn inert_scenario_pool_selects_nothing() {
    let truth = preset("A1").unwrap().truth().unwrap();
    let design = quick(DesignKind::Pool, 3);
    for rep in 0..200 {
        let r = run_trial(&design, &truth, 1, rep).unwrap();
        assert!(r.indications.iter().all(|i| i.selection.is_none()));
        assert!([81, 121, 122, 162].contains(&r.total_n), "{}", r.total_n);
    }
}

#[test]
fn pool_gives_every_indication_the_same_dose() {
    let truth = preset("A6").unwrap().truth().unwrap();
    let design = quick(DesignKind::Pool, 3);
    for rep in 0..50 {
        let r = run_trial(&design, &truth, 2, rep).unwrap();
        assert!(r.indications.iter().all(|i| i.selection == r.indications[0].selection));
    }
}

#[test]
fn mismatched_scenario_is_rejected() {
    let truth = preset("A1").unwrap().truth().unwrap();
    assert!(matches!(run_trial(&quick(DesignKind::RomiV1, 2), &truth, 1, 0), Err(Error::ConfigMismatch(_))));
}

#[test]
fn mid_stage1_look_can_drop_early() {
    let mut cfg = DesignConfig::reference(DesignKind::RomiV1, 1);
    cfg.mid_stage1_look = true;
    let design = Design::new(cfg).unwrap();
    // hopeless high dose: every patient toxic, none respond
    let truth = scenario_from([(0.999, 0.001), (0.1, 0.5)], 1, 0.0).truth().unwrap();
    let r = run_trial(&design, &truth, 4, 0).unwrap();
    assert_eq!(r.indications[0].counts.stage1_high.n(), 7);
    assert_eq!(r.indications[0].looks[0].look, Look::Stage1Mid);
    assert_eq!(r.indications[0].reason, Reason::DroppedStage1Toxicity);
}

/// Clears the toxicity flag of selected patients while leaving every other
/// draw untouched.
struct LessToxic<S: OutcomeSource> {
    inner: S,
    mask: u64,
    seen: HashMap<(usize, u8), u32>,
}

impl<S: OutcomeSource> LessToxic<S> {
    fn relieve(&mut self, key: (usize, u8), mut o: Outcome) -> Outcome {
        let j = self.seen.entry(key).or_insert(0);
        if self.mask >> (*j % 64) & 1 == 1 {
            o.toxicity = false;
        }
        *j += 1;
        o
    }
}

impl<S: OutcomeSource> OutcomeSource for LessToxic<S> {
    fn stage1(&mut self, indication: usize, p: &JointOutcomeProb) -> Outcome {
        let o = self.inner.stage1(indication, p);
        self.relieve((indication, 0), o)
    }

    fn stage2(&mut self, indication: usize, dose: Dose, p: &JointOutcomeProb) -> Outcome {
        let o = self.inner.stage2(indication, dose, p);
        self.relieve((indication, 1 + dose.index() as u8), o)
    }

    fn high_first(&mut self) -> bool {
        self.inner.high_first()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn structure_holds_on_every_replication(seed in any::<u64>(), rep in 0u64..1000, which in 0usize..6, kind in 0usize..5) {
        let kind = DesignKind::ALL[kind];
        let design = quick(kind, 3);
        let truth = preset(PRESET_NAMES[which]).unwrap().truth().unwrap();
        let r = run_trial(&design, &truth, seed, rep).unwrap();
        prop_assert_eq!(check_invariants(&design, &r), Ok(()));
    }

    #[test]
    fn less_toxicity_never_adds_a_toxicity_stop(
        seed in any::<u64>(),
        mask in any::<u64>(),
        pt in 0.05f64..0.7,
        pr in 0.05f64..0.8,
        kind in 0usize..5,
    ) {
        let kind = DesignKind::ALL[kind];
        let design = quick(kind, 2);
        let joint = solve_joint(pt, pr, 0.0).unwrap();
        let truth = TrialTruth { stage1_high: vec![joint; 2], stage2: vec![[joint, joint]; 2] };
        let base = run_trial_with(&design, &truth, &mut SeededOutcomes::new(seed, 0), 1).unwrap();
        let mut relieved = LessToxic { inner: SeededOutcomes::new(seed, 0), mask, seen: HashMap::new() };
        let alt = run_trial_with(&design, &truth, &mut relieved, 1).unwrap();
        for (b, a) in base.indications.iter().zip(&alt.indications) {
            for la in &a.looks {
                let same = b.looks.iter().find(|lb| lb.look == la.look && lb.dose == la.dose && lb.n_safety == la.n_safety);
                if let Some(lb) = same {
                    prop_assert!(!la.toxicity || lb.toxicity, "{:?} vs {:?}", la, lb);
                }
            }
        }
    }
}
