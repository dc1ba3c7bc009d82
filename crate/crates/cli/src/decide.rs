//! One-shot evaluation of the screening rules and the final analysis on
//! accrued counts.

use romi_core::designs::{
    final_acceptability, final_selection, fit_data, ArmCounts, Design, DesignConfig, DesignKind, Dose, DoseStatus,
    IndicationState, IndicationStatus,
};
use romi_core::hiermodel::{self, fit_conjugate, FitOptions};
use romi_core::monitoring::{futility_posterior, toxicity_posterior};
use romi_core::outcomes::{quasi_events, OutcomeCounts};
use serde::{Deserialize, Serialize};

use crate::error::{config, runtime, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum StageMarker {
    /// End of stage 1: screen the high dose.
    Stage1,
    /// Stage-2 interim look.
    Interim,
    /// Final analysis and dose selection.
    Final,
}

/// Accrued counts of one indication. Cells are ordered (toxicity, response).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservedIndication {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub stage1_high: OutcomeCounts,
    #[serde(default)]
    pub stage2_high: OutcomeCounts,
    #[serde(default)]
    pub stage2_low: OutcomeCounts,
    /// Doses already stopped at the interim; never acceptable at the final analysis.
    #[serde(default)]
    pub stopped_at_interim: Vec<Dose>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountsFile {
    #[serde(default)]
    pub design: Option<DesignKind>,
    #[serde(default)]
    pub stage: Option<StageMarker>,
    pub indications: Vec<ObservedIndication>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    Toxicity,
    Futility,
}

/// One rule at one dose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleEvaluation {
    pub dose: Dose,
    pub rule: Rule,
    pub n: u32,
    pub events: u32,
    /// Posterior probability that the rate is beyond its limit.
    pub posterior: f64,
    pub cutoff: f64,
    pub fires: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicationDecision {
    pub name: String,
    pub rules: Vec<RuleEvaluation>,
    pub verdict: String,
    /// Posterior mean quasi-probabilities `[high, low]` at the final analysis.
    pub q_hat: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionReport {
    pub design: DesignKind,
    pub stage: StageMarker,
    pub indications: Vec<IndicationDecision>,
}

fn rule(dose: Dose, rule: Rule, counts: &OutcomeCounts, design: &Design, k: usize, cutoff: f64) -> RuleEvaluation {
    let lim = design.table(k).limits();
    let (events, posterior) = match rule {
        Rule::Toxicity => (counts.tox(), toxicity_posterior(counts.n(), counts.tox(), lim)),
        Rule::Futility => (counts.resp(), futility_posterior(counts.n(), counts.resp(), lim)),
    };
    RuleEvaluation { dose, rule, n: counts.n(), events, posterior, cutoff, fires: posterior > cutoff }
}

fn stop_verdict(tox: &RuleEvaluation, fut: &RuleEvaluation, what: &str) -> Option<String> {
    if tox.fires {
        Some(format!("{what}: toxicity"))
    } else if fut.fires {
        Some(format!("{what}: futility"))
    } else {
        None
    }
}

fn no_patients(i: usize, field: &str) -> crate::error::CliError {
    config(format!("key `indications[{i}].{field}`: no patients"))
}

/// Evaluates `counts` under `cfg`. A pure function of its arguments.
pub fn decide(cfg: &DesignConfig, stage: StageMarker, counts: &[ObservedIndication]) -> CliResult<DecisionReport> {
    if counts.is_empty() {
        return Err(config("key `indications`: at least one indication is required"));
    }
    if cfg.kind == DesignKind::Pool {
        return Err(config(
            "key `design`: decide evaluates Independent and the ROMI designs; Pool has no per-indication analysis",
        ));
    }
    let design = Design::new(cfg.clone()).map_err(|e| config(e.to_string()))?;
    let name = |i: usize| counts[i].name.clone().unwrap_or_else(|| format!("I{}", i + 1));
    let arm = |o: &ObservedIndication| ArmCounts {
        stage1_high: o.stage1_high,
        stage2_high: o.stage2_high,
        stage2_low: o.stage2_low,
    };
    let lim = |k: usize| *design.table(k).limits();
    let has_stage2 = |o: &ObservedIndication| o.stage2_high.n() + o.stage2_low.n() > 0;

    let mut out = Vec::with_capacity(counts.len());
    match stage {
        StageMarker::Stage1 => {
            for (i, o) in counts.iter().enumerate() {
                if o.stage1_high.n() == 0 {
                    return Err(no_patients(i, "stage1_high"));
                }
                let tox = rule(Dose::High, Rule::Toxicity, &o.stage1_high, &design, i, lim(i).c_tox);
                let fut = rule(Dose::High, Rule::Futility, &o.stage1_high, &design, i, lim(i).c_fut_stage1);
                let verdict = stop_verdict(&tox, &fut, "drop").unwrap_or_else(|| "continue".into());
                out.push(IndicationDecision { name: name(i), rules: vec![tox, fut], verdict, q_hat: None });
            }
        }
        StageMarker::Interim => {
            for (i, o) in counts.iter().enumerate() {
                if !has_stage2(o) {
                    out.push(IndicationDecision {
                        name: name(i),
                        rules: vec![],
                        verdict: "inactive".into(),
                        q_hat: None,
                    });
                    continue;
                }
                let a = arm(o);
                let mut rules = Vec::new();
                let mut verdicts = Vec::new();
                for dose in Dose::BOTH {
                    if a.stage2(dose).n() == 0 {
                        return Err(no_patients(
                            i,
                            &format!("stage2_{}", if dose == Dose::High { "high" } else { "low" }),
                        ));
                    }
                    let tox = rule(dose, Rule::Toxicity, &a.safety(dose), &design, i, lim(i).c_tox);
                    let fut = rule(dose, Rule::Futility, a.stage2(dose), &design, i, lim(i).c_fut_stage1);
                    verdicts.push(stop_verdict(&tox, &fut, &format!("stop {}", dose.label())));
                    rules.extend([tox, fut]);
                }
                let verdict = match (&verdicts[0], &verdicts[1]) {
                    (Some(_), Some(_)) => "terminate".to_string(),
                    (None, None) => "continue".to_string(),
                    (Some(v), None) | (None, Some(v)) => v.clone(),
                };
                out.push(IndicationDecision { name: name(i), rules, verdict, q_hat: None });
            }
        }
        StageMarker::Final => {
            let active: Vec<bool> = counts.iter().map(has_stage2).collect();
            let mut acceptable = vec![[false; 2]; counts.len()];
            for (i, o) in counts.iter().enumerate() {
                if !active[i] {
                    out.push(IndicationDecision {
                        name: name(i),
                        rules: vec![],
                        verdict: "inactive".into(),
                        q_hat: None,
                    });
                    continue;
                }
                let mut state =
                    IndicationState { counts: arm(o), status: IndicationStatus::Finished, ..Default::default() };
                for dose in Dose::BOTH {
                    if state.counts.stage2(dose).n() == 0 {
                        return Err(no_patients(
                            i,
                            &format!("stage2_{}", if dose == Dose::High { "high" } else { "low" }),
                        ));
                    }
                    state.dose_status[dose.index()] = if o.stopped_at_interim.contains(&dose) {
                        DoseStatus::StoppedFutility
                    } else {
                        DoseStatus::Completed
                    };
                }
                let (ok, _) = final_acceptability(&state, design.table(i));
                acceptable[i] = ok;
                let mut rules = Vec::new();
                for dose in Dose::BOTH {
                    if o.stopped_at_interim.contains(&dose) {
                        continue;
                    }
                    rules.push(rule(dose, Rule::Toxicity, &state.counts.safety(dose), &design, i, lim(i).c_tox));
                    rules.push(rule(dose, Rule::Futility, state.counts.stage2(dose), &design, i, lim(i).c_fut_stage2));
                }
                out.push(IndicationDecision { name: name(i), rules, verdict: String::new(), q_hat: None });
            }

            let q_hat = final_estimates(cfg, counts, &active)?;
            for (i, d) in out.iter_mut().enumerate() {
                if !active[i] {
                    continue;
                }
                d.q_hat = q_hat[i];
                let (selection, _) = final_selection(acceptable[i], q_hat[i]);
                d.verdict = match selection {
                    Some(dose) => format!("select {}", dose.label()),
                    None => "no acceptable dose".into(),
                };
            }
        }
    }
    Ok(DecisionReport { design: cfg.kind, stage, indications: out })
}

fn final_estimates(
    cfg: &DesignConfig,
    counts: &[ObservedIndication],
    active: &[bool],
) -> CliResult<Vec<Option<[f64; 2]>>> {
    let mut q = vec![None; counts.len()];
    match cfg.kind.model() {
        Some(model) => {
            let arms: Vec<ArmCounts> = counts
                .iter()
                .map(|o| ArmCounts { stage1_high: o.stage1_high, stage2_high: o.stage2_high, stage2_low: o.stage2_low })
                .collect();
            let data = fit_data(&cfg.indications, &arms, active);
            let (summary, _) = hiermodel::fit(model, &data, &cfg.hyper, &cfg.mcmc, FitOptions::default())
                .map_err(|e| runtime(e.to_string()))?;
            for p in &summary.indications {
                q[p.index] = Some([p.q_high.mean, p.q_low.mean]);
            }
        }
        None => {
            for (i, o) in counts.iter().enumerate().filter(|(i, _)| active[*i]) {
                let u = &cfg.indications[i].utility;
                let c = &cfg.comparator;
                let mean = |x: &OutcomeCounts| {
                    fit_conjugate(quasi_events(u, x), x.n(), c.prior_a, c.prior_b).map(|p| p.mean())
                };
                let h = mean(&o.stage2_high).map_err(|e| runtime(e.to_string()))?;
                let l = mean(&o.stage2_low).map_err(|e| runtime(e.to_string()))?;
                q[i] = Some([h, l]);
            }
        }
    }
    Ok(q)
}

/// Human-readable report: one line per rule, then the verdict.
pub fn render_markdown(r: &DecisionReport) -> String {
    let stage = match r.stage {
        StageMarker::Stage1 => "stage 1",
        StageMarker::Interim => "interim",
        StageMarker::Final => "final",
    };
    let mut s = format!("## {} decision, {stage}\n\n", r.design.name());
    s += "| Indication | Dose | Rule | n | Events | Posterior | Cutoff | Fires |\n|---|---|---|---|---|---|---|---|\n";
    for d in &r.indications {
        for e in &d.rules {
            s += &format!(
                "| {} | {} | {} | {} | {} | {:.4} | {} | {} |\n",
                d.name,
                e.dose.label(),
                if e.rule == Rule::Toxicity { "toxicity" } else { "futility" },
                e.n,
                e.events,
                e.posterior,
                e.cutoff,
                if e.fires { "yes" } else { "no" }
            );
        }
    }
    s += "\n";
    if r.stage == StageMarker::Final {
        s += "| Indication | Q̂ H | Q̂ L | Verdict |\n|---|---|---|---|\n";
        for d in &r.indications {
            let q = |j: usize| d.q_hat.map_or("-".to_string(), |q| format!("{:.4}", q[j]));
            s += &format!("| {} | {} | {} | {} |\n", d.name, q(0), q(1), d.verdict);
        }
    } else {
        s += "| Indication | Verdict |\n|---|---|\n";
        for d in &r.indications {
            s += &format!("| {} | {} |\n", d.name, d.verdict);
        }
    }
    s
}

/// One CSV row per rule; verdict and estimates repeat on each of an indication's rows.
pub fn render_csv(r: &DecisionReport) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| runtime(format!("csv: {e}"));
    w.write_record([
        "indication",
        "dose",
        "rule",
        "n",
        "events",
        "posterior",
        "cutoff",
        "fires",
        "verdict",
        "q_high",
        "q_low",
    ])
    .map_err(io)?;
    for d in &r.indications {
        let q = |j: usize| d.q_hat.map_or(String::new(), |q| q[j].to_string());
        if d.rules.is_empty() {
            w.write_record([d.name.as_str(), "", "", "", "", "", "", "", &d.verdict, &q(0), &q(1)]).map_err(io)?;
        }
        for e in &d.rules {
            let rule = if e.rule == Rule::Toxicity { "toxicity" } else { "futility" };
            w.write_record([
                d.name.clone(),
                e.dose.label().into(),
                rule.into(),
                e.n.to_string(),
                e.events.to_string(),
                e.posterior.to_string(),
                e.cutoff.to_string(),
                e.fires.to_string(),
                d.verdict.clone(),
                q(0),
                q(1),
            ])
            .map_err(io)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| runtime(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}
