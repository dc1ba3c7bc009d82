//! Argument definitions and the four commands.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use romi_core::designs::{fit_data, run_trial, ArmCounts, Design, DesignConfig, DesignKind, Reason};
use romi_core::hiermodel::{self, FitOptions};
use romi_core::monitoring::calibrate_stage1_n;
use romi_core::rng::fit_seed;
use romi_core::simengine::{simulate as run_simulation, OperatingCharacteristics, ScenarioSpec};
use romi_core::validation::{self, fixtures::default_dir, Level};

use crate::config::{read_json, Format, Overrides, RunConfig};
use crate::decide::{decide as evaluate, render_csv, render_markdown, CountsFile, StageMarker};
use crate::error::{config, runtime, CliResult};
use crate::report::{display_csv, markdown_table, write_csv, Manifest, TruthRow};

/// Environment variable holding the number of worker threads.
pub const THREADS_VAR: &str = "ROMI_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "romi",
    version,
    about = "Simulate and evaluate randomized two-stage basket trials with utility-based dose selection"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Replications per (scenario, design) cell; overrides the configuration.
    #[arg(long)]
    pub reps: Option<u64>,
    /// Output directory (simulate) or report file (other commands).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides { seed: self.seed, reps: self.reps, out: self.out.clone(), format: self.format }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VerifyLevel {
    Quick,
    Full,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate operating characteristics and write the report tables.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Smallest stage-1 size keeping the false negative stopping rate at or below a target.
    Calibrate {
        #[command(flatten)]
        common: Common,
        /// Response floor; defaults to the configured floor of each indication.
        #[arg(long)]
        floor: Option<f64>,
        /// True response rate above the floor at which stopping is a false negative.
        #[arg(long, default_value_t = 0.2)]
        delta: f64,
        /// Posterior cutoff of the futility rule; defaults to the stage-1 cutoff.
        #[arg(long)]
        cutoff: Option<f64>,
        /// Largest acceptable false negative probability.
        #[arg(long, default_value_t = 0.1)]
        target: f64,
        #[arg(long, default_value_t = 1)]
        n_min: u32,
        #[arg(long, default_value_t = 100)]
        n_max: u32,
    },
    /// Evaluate the decision rules on observed counts.
    Decide {
        #[command(flatten)]
        common: Common,
        /// JSON file of accrued counts.
        counts: PathBuf,
        /// Design to evaluate; overrides the counts file.
        #[arg(long, value_parser = parse_design)]
        design: Option<DesignKind>,
        /// Trial stage; overrides the counts file.
        #[arg(long, value_enum)]
        stage: Option<StageMarker>,
    },
    /// Check the build against its oracles and reference values.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = VerifyLevel::Quick)]
        level: VerifyLevel,
        /// Fixture directory.
        #[arg(long)]
        dir: Option<PathBuf>,
        /// Rewrite the fixture files from the oracles instead of checking.
        #[arg(long)]
        regenerate: bool,
    },
}

fn parse_design(s: &str) -> Result<DesignKind, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| {
        let names: Vec<&str> = DesignKind::ALL.iter().map(|d| d.name()).collect();
        format!("unknown design {s:?}; expected one of {}", names.join(", "))
    })
}

/// Worker threads requested through [`THREADS_VAR`], if set.
pub fn requested_threads() -> CliResult<Option<usize>> {
    match std::env::var(THREADS_VAR) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(config(format!("{THREADS_VAR}={v:?} must be a positive integer"))),
        },
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate { common } => simulate(&common),
        Command::Calibrate { common, floor, delta, cutoff, target, n_min, n_max } => {
            calibrate(&common, floor, delta, cutoff, target, n_min, n_max)
        }
        Command::Decide { common, counts, design, stage } => decide(&common, &counts, design, stage),
        Command::Verify { common, level, dir, regenerate } => verify(&common, level, dir, regenerate),
    }
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))
}

fn emit(common: &Common, text: &str) -> CliResult<()> {
    print!("{text}");
    match &common.out {
        Some(path) => write_file(path, text),
        None => Ok(()),
    }
}

/// Writes the final-analysis chain of replication 0, fitted whether or not
/// the design needed it. Returns `None` when every indication was dropped.
fn dump_chain(cfg: &DesignConfig, scenario: &ScenarioSpec, seed: u64, path: &Path) -> CliResult<Option<PathBuf>> {
    let Some(model) = cfg.kind.model() else { return Ok(None) };
    let err = |e: romi_core::Error| runtime(format!("chain dump for {} in {}: {e}", cfg.kind.name(), scenario.name));
    let design = Design::new(cfg.clone()).map_err(err)?;
    let truth = scenario.truth().map_err(err)?;
    let result = run_trial(&design, &truth, seed, 0).map_err(err)?;
    let counts: Vec<ArmCounts> = result.indications.iter().map(|r| r.counts).collect();
    let active: Vec<bool> = result
        .indications
        .iter()
        .map(|r| !matches!(r.reason, Reason::DroppedStage1Toxicity | Reason::DroppedStage1Futility))
        .collect();
    if !active.contains(&true) {
        return Ok(None);
    }
    let data = fit_data(&cfg.indications, &counts, &active);
    let options = FitOptions { prior_only: false, record_trace: true };
    let (_, trace) =
        hiermodel::fit(model, &data, &cfg.hyper, &cfg.mcmc.with_seed(fit_seed(seed, 0)), options).map_err(err)?;
    let trace = trace.expect("trace requested");
    let mut w = csv::Writer::from_path(path).map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))?;
    let io = |e: csv::Error| runtime(format!("{}: {e}", path.display()));
    w.write_record(&trace.columns).map_err(io)?;
    let draws = trace.values.first().map_or(0, Vec::len);
    for t in 0..draws {
        w.write_record(trace.values.iter().map(|col| col[t].to_string())).map_err(io)?;
    }
    w.flush().map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    Ok(Some(path.to_path_buf()))
}

fn simulate(common: &Common) -> CliResult<()> {
    let (cfg, base) = RunConfig::load(common.config.as_deref())?;
    let plan = cfg.plan(&base, &common.overrides())?;
    let out = &plan.out;
    std::fs::create_dir_all(out).map_err(|e| runtime(format!("cannot create {}: {e}", out.display())))?;
    if plan.config.dump_chains {
        std::fs::create_dir_all(out.join("chains"))
            .map_err(|e| runtime(format!("cannot create chains directory: {e}")))?;
    }

    let mut all: Vec<OperatingCharacteristics> = Vec::new();
    let mut tables = String::new();
    let mut files = Vec::new();
    for (i, scenario) in plan.scenarios.iter().enumerate() {
        let mut rows = Vec::new();
        let mut utilities = Vec::new();
        for &kind in &plan.config.designs {
            let dc = plan.config.design_config(kind, scenario.k())?;
            utilities = dc.indications.iter().map(|s| s.utility).collect();
            let start = Instant::now();
            let oc = run_simulation(&dc, scenario, plan.reps, plan.seed)
                .map_err(|e| runtime(format!("{} {}: {e}", scenario.name, kind.name())))?;
            eprintln!(
                "{} {}: {} replications in {:.1}s",
                scenario.name,
                kind.name(),
                plan.reps,
                start.elapsed().as_secs_f64()
            );
            if plan.config.dump_chains {
                let path = out.join("chains").join(format!("{}_{}.csv", scenario.name, kind.name()));
                if let Some(p) = dump_chain(&dc, scenario, plan.seed, &path)? {
                    files.push(p.strip_prefix(out).unwrap_or(&p).display().to_string());
                }
            }
            rows.push(oc);
        }
        let truth = TruthRow::new(scenario, &utilities)?;
        let table = match plan.format {
            Format::Markdown => markdown_table(&scenario.name, &truth, &rows) + "\n",
            Format::Csv => display_csv(&scenario.name, &truth, &rows, i == 0)?,
        };
        print!("{table}");
        tables += &table;
        all.extend(rows);
    }

    let table_file = match plan.format {
        Format::Markdown => "tables.md",
        Format::Csv => "tables.csv",
    };
    write_file(&out.join(table_file), &tables)?;
    let mut oc_csv = Vec::new();
    write_csv(&mut oc_csv, &all)?;
    write_file(&out.join("oc.csv"), std::str::from_utf8(&oc_csv).expect("csv output is UTF-8"))?;
    write_file(&out.join("config.json"), &plan.config_json())?;
    let mut listed = vec![table_file.to_string(), "oc.csv".into(), "config.json".into()];
    listed.extend(files);
    let manifest = Manifest {
        tool: "romi".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        engine_version: romi_core::VERSION.into(),
        config_sha256: plan.config_hash(),
        seed: plan.seed,
        reps: plan.reps,
        worker_threads: rayon::current_num_threads(),
        files: listed,
    };
    write_file(
        &out.join("manifest.json"),
        &(serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n"),
    )?;
    eprintln!("wrote {}", out.display());
    Ok(())
}

fn calibrate(
    common: &Common,
    floor: Option<f64>,
    delta: f64,
    cutoff: Option<f64>,
    target: f64,
    n_min: u32,
    n_max: u32,
) -> CliResult<()> {
    if n_min > n_max {
        return Err(config(format!("--n-min {n_min} exceeds --n-max {n_max}: empty sample-size range")));
    }
    let (cfg, _) = RunConfig::load(common.config.as_deref())?;
    let settings = cfg.indications.clone().unwrap_or_else(|| vec![cfg.indication]);
    let mut rows = Vec::new();
    for (k, s) in settings.iter().enumerate() {
        let mut lim = s.limits;
        if let Some(f) = floor {
            lim.resp_floor = f;
        }
        lim.validate().map_err(|e| config(format!("indication {}: {e}", k + 1)))?;
        let c = cutoff.unwrap_or(lim.c_fut_stage1);
        let cal = calibrate_stage1_n(&lim, delta, c, target, n_min..=n_max).map_err(|e| match e {
            romi_core::Error::NoFeasibleN { .. } => runtime(format!("indication {}: {e}", k + 1)),
            other => config(format!("indication {}: {other}", k + 1)),
        })?;
        rows.push((k + 1, lim.resp_floor, lim.resp_floor + delta, c, cal));
    }
    let text = match common.format.unwrap_or_default() {
        Format::Markdown => {
            let mut s = format!("False negative target {target}, sizes {n_min}..={n_max}\n\n");
            s += "| Indication | Floor | True rate | Cutoff | N | Boundary | FN |\n|---|---|---|---|---|---|---|\n";
            for (k, f, p, c, cal) in &rows {
                let b = cal.boundary.map_or("none".to_string(), |b| b.to_string());
                s += &format!("| I{k} | {f} | {p:.4} | {c} | {} | {b} | {:.4} |\n", cal.n, cal.false_negative);
            }
            s
        }
        Format::Csv => {
            let mut s = "indication,floor,true_rate,cutoff,n,boundary,false_negative\n".to_string();
            for (k, f, p, c, cal) in &rows {
                let b = cal.boundary.map_or(String::new(), |b| b.to_string());
                s += &format!("{k},{f},{p},{c},{},{b},{}\n", cal.n, cal.false_negative);
            }
            s
        }
    };
    emit(common, &text)
}

fn decide(common: &Common, counts: &Path, design: Option<DesignKind>, stage: Option<StageMarker>) -> CliResult<()> {
    let file: CountsFile = read_json(counts)?;
    let kind =
        design.or(file.design).ok_or_else(|| config("no design: pass --design or set `design` in the counts file"))?;
    let stage =
        stage.or(file.stage).ok_or_else(|| config("no stage: pass --stage or set `stage` in the counts file"))?;
    let (cfg, _) = RunConfig::load(common.config.as_deref())?;
    let mut dc = DesignConfig {
        kind,
        indications: cfg.settings_for(file.indications.len().max(1))?,
        hyper: cfg.hyper,
        mcmc: cfg.mcmc,
        mid_stage1_look: cfg.mid_stage1_look,
        comparator: cfg.comparator,
    };
    if let Some(seed) = common.seed.or(cfg.seed) {
        dc.mcmc.seed = seed;
    }
    let report = evaluate(&dc, stage, &file.indications)?;
    let text = match common.format.unwrap_or_default() {
        Format::Markdown => render_markdown(&report),
        Format::Csv => render_csv(&report)?,
    };
    emit(common, &text)
}

fn verify(common: &Common, level: VerifyLevel, dir: Option<PathBuf>, regenerate: bool) -> CliResult<()> {
    let dir = dir.unwrap_or_else(default_dir);
    if regenerate {
        let written = validation::write_fixtures(&dir).map_err(|e| runtime(e.to_string()))?;
        println!("wrote {} fixtures to {}", written.len(), dir.display());
        return Ok(());
    }
    let level = match level {
        VerifyLevel::Quick => Level::Quick,
        VerifyLevel::Full => Level::Full,
    };
    let mut lines = String::new();
    let report = validation::verify(level, &dir, &mut |c| {
        println!("{}", c.line());
        lines += &c.line();
        lines.push('\n');
    })
    .map_err(|e| runtime(e.to_string()))?;
    let failures = report.failures();
    let summary = format!("{} checks, {} failed\n", report.checks.len(), failures.len());
    print!("{summary}");
    if let Some(path) = &common.out {
        write_file(path, &(lines + &summary))?;
    }
    if failures.is_empty() {
        Ok(())
    } else {
        let names: Vec<&str> = failures.iter().map(|c| c.name.as_str()).collect();
        Err(runtime(format!("failed checks: {}", names.join(", "))))
    }
}
