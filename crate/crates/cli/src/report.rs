//! Report emission: operating-characteristic tables for people, a
//! full-precision CSV for machines, and the run manifest.

use std::io::{Read, Write};

use romi_core::designs::{DesignKind, Dose};
use romi_core::simengine::{IndicationSummary, OperatingCharacteristics, ScenarioSpec, StopBreakdown};
use serde::{Deserialize, Serialize};

use crate::error::{runtime, CliResult};

/// Per-indication true mean utilities `[high, low]` and true OBDs, shown as
/// the first row of a table.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthRow {
    pub utilities: Vec<[f64; 2]>,
    pub obds: Vec<Option<Dose>>,
}

impl TruthRow {
    pub fn new(scenario: &ScenarioSpec, utilities: &[romi_core::outcomes::UtilityTable]) -> CliResult<Self> {
        let utilities = scenario.mean_utilities(utilities).map_err(|e| runtime(e.to_string()))?;
        Ok(Self { utilities, obds: scenario.true_obds() })
    }
}

fn header(k: usize) -> Vec<String> {
    let mut h = vec!["Design".to_string()];
    for i in 1..=k {
        h.push(format!("I{i} %H"));
        h.push(format!("I{i} %L"));
    }
    h.push("CSP".into());
    h.push("N".into());
    h
}

fn cells(oc: &OperatingCharacteristics) -> Vec<String> {
    let mut row = vec![oc.design.name().to_string()];
    for s in &oc.indications {
        row.push(format!("{:.1}", s.pct_high));
        row.push(format!("{:.1}", s.pct_low));
    }
    row.push(oc.csp.map_or("-".into(), |c| format!("{c:.1}")));
    row.push(format!("{:.1}", oc.mean_total_n));
    row
}

fn truth_cells(truth: &TruthRow, emphasize: bool) -> Vec<String> {
    let mut row = vec!["True utility".to_string()];
    for (u, obd) in truth.utilities.iter().zip(&truth.obds) {
        for dose in Dose::BOTH {
            let v = format!("{:.1}", u[dose.index()]);
            row.push(if emphasize && *obd == Some(dose) { format!("**{v}**") } else { v });
        }
    }
    row.push(String::new());
    row.push(String::new());
    row
}

/// One scenario's table: a truth row, then one row per design. The true
/// OBD's utility is in bold.
pub fn markdown_table(scenario: &str, truth: &TruthRow, rows: &[OperatingCharacteristics]) -> String {
    let k = truth.utilities.len();
    let line = |cells: &[String]| format!("| {} |\n", cells.join(" | "));
    let mut s = format!("### Scenario {scenario}\n\n");
    s += &line(&header(k));
    s += &line(&vec!["---".to_string(); 2 * k + 3]);
    s += &line(&truth_cells(truth, true));
    for oc in rows {
        s += &line(&cells(oc));
    }
    s
}

/// The same table as CSV rows at display precision, prefixed by the scenario.
pub fn display_csv(
    scenario: &str,
    truth: &TruthRow,
    rows: &[OperatingCharacteristics],
    with_header: bool,
) -> CliResult<String> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(Vec::new());
    let prefix = |mut r: Vec<String>, first: &str| {
        r.insert(0, first.to_string());
        r
    };
    let io = |e: csv::Error| runtime(format!("csv: {e}"));
    if with_header {
        w.write_record(prefix(header(truth.utilities.len()), "Scenario")).map_err(io)?;
    }
    w.write_record(prefix(truth_cells(truth, false), scenario)).map_err(io)?;
    for oc in rows {
        w.write_record(prefix(cells(oc), scenario)).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| runtime(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// One row of the machine-readable CSV: one indication of one
/// (scenario, design) cell, with the cell-level fields repeated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CsvRow {
    scenario: String,
    design: DesignKind,
    n_reps: u64,
    master_seed: u64,
    csp: Option<f64>,
    mean_total_n: f64,
    indication: usize,
    selected_high: u64,
    selected_low: u64,
    selected_none: u64,
    pct_high: f64,
    pct_low: f64,
    pct_none: f64,
    se_high: f64,
    se_low: f64,
    se_none: f64,
    mean_n: f64,
    dropped_stage1_toxicity: u64,
    dropped_stage1_futility: u64,
    terminated_at_interim: u64,
    no_acceptable_dose: u64,
}

/// Full-precision CSV of every cell; [`read_csv`] inverts it exactly.
pub fn write_csv<W: Write>(out: W, ocs: &[OperatingCharacteristics]) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(out);
    for oc in ocs {
        for (k, s) in oc.indications.iter().enumerate() {
            w.serialize(CsvRow {
                scenario: oc.scenario.clone(),
                design: oc.design,
                n_reps: oc.n_reps,
                master_seed: oc.master_seed,
                csp: oc.csp,
                mean_total_n: oc.mean_total_n,
                indication: k + 1,
                selected_high: s.selected_high,
                selected_low: s.selected_low,
                selected_none: s.selected_none,
                pct_high: s.pct_high,
                pct_low: s.pct_low,
                pct_none: s.pct_none,
                se_high: s.se_high,
                se_low: s.se_low,
                se_none: s.se_none,
                mean_n: s.mean_n,
                dropped_stage1_toxicity: s.stops.dropped_stage1_toxicity,
                dropped_stage1_futility: s.stops.dropped_stage1_futility,
                terminated_at_interim: s.stops.terminated_at_interim,
                no_acceptable_dose: s.stops.no_acceptable_dose,
            })
            .map_err(|e| runtime(format!("csv: {e}")))?;
        }
    }
    w.flush().map_err(|e| runtime(format!("csv: {e}")))
}

/// Parses a CSV written by [`write_csv`]. A cell starts at each indication 1.
pub fn read_csv<R: Read>(input: R) -> CliResult<Vec<OperatingCharacteristics>> {
    let mut ocs: Vec<OperatingCharacteristics> = Vec::new();
    for (line, row) in csv::Reader::from_reader(input).deserialize::<CsvRow>().enumerate() {
        let r = row.map_err(|e| runtime(format!("csv row {}: {e}", line + 1)))?;
        let summary = IndicationSummary {
            selected_high: r.selected_high,
            selected_low: r.selected_low,
            selected_none: r.selected_none,
            pct_high: r.pct_high,
            pct_low: r.pct_low,
            pct_none: r.pct_none,
            se_high: r.se_high,
            se_low: r.se_low,
            se_none: r.se_none,
            mean_n: r.mean_n,
            stops: StopBreakdown {
                dropped_stage1_toxicity: r.dropped_stage1_toxicity,
                dropped_stage1_futility: r.dropped_stage1_futility,
                terminated_at_interim: r.terminated_at_interim,
                no_acceptable_dose: r.no_acceptable_dose,
            },
        };
        if r.indication == 1 {
            ocs.push(OperatingCharacteristics {
                design: r.design,
                scenario: r.scenario,
                n_reps: r.n_reps,
                master_seed: r.master_seed,
                indications: vec![summary],
                csp: r.csp,
                mean_total_n: r.mean_total_n,
            });
            continue;
        }
        match ocs.last_mut() {
            Some(oc)
                if oc.indications.len() + 1 == r.indication && oc.scenario == r.scenario && oc.design == r.design =>
            {
                oc.indications.push(summary)
            }
            _ => return Err(runtime(format!("csv row {}: indication {} out of sequence", line + 1, r.indication))),
        }
    }
    Ok(ocs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub engine_version: String,
    /// SHA-256 of `config.json`.
    pub config_sha256: String,
    pub seed: u64,
    pub reps: u64,
    pub worker_threads: usize,
    pub files: Vec<String>,
}
