//! Run configuration: a JSON document naming scenarios, designs, design
//! settings and run controls. Every key is optional; unknown keys are errors.

use std::path::{Path, PathBuf};

use romi_core::designs::{ComparatorSettings, DesignConfig, DesignKind, IndicationSettings};
use romi_core::hiermodel::{HierHyperparams, McmcConfig};
use romi_core::simengine::{preset, ScenarioSpec, PRESET_NAMES};
use romi_core::validation::reference::REFERENCE_SEED;
use serde::de::{DeserializeOwned, Error as _};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::error::{config, CliResult};

pub const DEFAULT_REPS: u64 = 2000;
pub const DEFAULT_OUT: &str = "romi-out";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Markdown,
    Csv,
}

/// A scenario given by preset name, by file path, or inline.
#[derive(Debug, Clone, PartialEq)]
pub enum ScenarioEntry {
    /// A preset name (`A1` to `A6`) or a path to a scenario JSON file,
    /// relative to the configuration file.
    Named(String),
    Inline(ScenarioSpec),
}

impl Serialize for ScenarioEntry {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            ScenarioEntry::Named(name) => s.serialize_str(name),
            ScenarioEntry::Inline(spec) => spec.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for ScenarioEntry {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match serde_json::Value::deserialize(d)? {
            serde_json::Value::String(s) => Ok(ScenarioEntry::Named(s)),
            v @ serde_json::Value::Object(_) => {
                ScenarioSpec::deserialize(v).map(ScenarioEntry::Inline).map_err(D::Error::custom)
            }
            other => Err(D::Error::custom(format!(
                "expected a preset name, a scenario file path or an inline scenario, found {other}"
            ))),
        }
    }
}

fn all_designs() -> Vec<DesignKind> {
    DesignKind::ALL.to_vec()
}

fn all_presets() -> Vec<ScenarioEntry> {
    PRESET_NAMES.iter().map(|s| ScenarioEntry::Named(s.to_string())).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "all_designs")]
    pub designs: Vec<DesignKind>,
    #[serde(default = "all_presets")]
    pub scenarios: Vec<ScenarioEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reps: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<Format>,
    /// Settings applied to every indication.
    #[serde(default)]
    pub indication: IndicationSettings,
    /// Per-indication settings; when present, its length must match every scenario.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub indications: Option<Vec<IndicationSettings>>,
    #[serde(default)]
    pub comparator: ComparatorSettings,
    #[serde(default)]
    pub mid_stage1_look: bool,
    #[serde(default)]
    pub hyper: HierHyperparams,
    #[serde(default)]
    pub mcmc: McmcConfig,
    /// Write the final-analysis chain of replication 0 for each ROMI cell.
    #[serde(default)]
    pub dump_chains: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("every key has a default")
    }
}

/// Flag values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub reps: Option<u64>,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
}

/// Parses JSON, naming the offending key on failure.
pub fn parse_json<T: DeserializeOwned>(text: &str, source: &Path) -> CliResult<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let key = e.path().to_string();
        config(format!("{}: key `{key}`: {}", source.display(), e.inner()))
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| config(format!("cannot read {}: {e}", path.display())))?;
    parse_json(&text, path)
}

/// A configuration with scenarios loaded and flags applied.
#[derive(Debug, Clone, PartialEq)]
pub struct RunPlan {
    /// Fully explicit configuration: scenarios inline, run controls set.
    pub config: RunConfig,
    pub scenarios: Vec<ScenarioSpec>,
    pub reps: u64,
    pub seed: u64,
    pub out: PathBuf,
    pub format: Format,
}

impl RunConfig {
    /// Reads a configuration file; `None` gives the all-defaults configuration
    /// rooted at the working directory.
    pub fn load(path: Option<&Path>) -> CliResult<(RunConfig, PathBuf)> {
        match path {
            None => Ok((RunConfig::default(), PathBuf::from("."))),
            Some(p) => {
                let cfg = read_json(p)?;
                let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
                Ok((cfg, base))
            }
        }
    }

    /// Settings of each of `k` indications.
    pub fn settings_for(&self, k: usize) -> CliResult<Vec<IndicationSettings>> {
        match &self.indications {
            None => Ok(vec![self.indication; k]),
            Some(list) if list.len() == k => Ok(list.clone()),
            Some(list) => {
                Err(config(format!("key `indications`: {} entries for a scenario with {k} indications", list.len())))
            }
        }
    }

    /// Validated design configuration for `k` indications.
    pub fn design_config(&self, kind: DesignKind, k: usize) -> CliResult<DesignConfig> {
        let cfg = DesignConfig {
            kind,
            indications: self.settings_for(k)?,
            hyper: self.hyper,
            mcmc: self.mcmc,
            mid_stage1_look: self.mid_stage1_look,
            comparator: self.comparator,
        };
        cfg.validate().map_err(|e| config(format!("design {}: {e}", kind.name())))?;
        Ok(cfg)
    }

    /// Loads every scenario; file names resolve against `base`.
    pub fn load_scenarios(&self, base: &Path) -> CliResult<Vec<ScenarioSpec>> {
        self.scenarios
            .iter()
            .enumerate()
            .map(|(i, entry)| {
                let spec = match entry {
                    ScenarioEntry::Inline(spec) => spec.clone(),
                    ScenarioEntry::Named(name) => match preset(name) {
                        Some(spec) => spec,
                        None => {
                            let path = base.join(name);
                            if !path.is_file() {
                                return Err(config(format!(
                                    "key `scenarios[{i}]`: {name:?} is not a preset and scenario file {} does not exist",
                                    path.display()
                                )));
                            }
                            read_json(&path)?
                        }
                    },
                };
                spec.validate().map_err(|e| config(format!("key `scenarios[{i}]` ({}): {e}", spec.name)))?;
                Ok(spec)
            })
            .collect()
    }

    /// Applies flags, loads scenarios and checks every design against every scenario.
    pub fn plan(&self, base: &Path, overrides: &Overrides) -> CliResult<RunPlan> {
        if self.designs.is_empty() {
            return Err(config("key `designs`: at least one design is required"));
        }
        if self.scenarios.is_empty() {
            return Err(config("key `scenarios`: at least one scenario is required"));
        }
        let scenarios = self.load_scenarios(base)?;
        for s in &scenarios {
            for &kind in &self.designs {
                self.design_config(kind, s.k())?;
            }
        }
        let reps = overrides.reps.or(self.reps).unwrap_or(DEFAULT_REPS);
        if reps == 0 {
            return Err(config("key `reps`: must be at least 1"));
        }
        let seed = overrides.seed.or(self.seed).unwrap_or(REFERENCE_SEED);
        let out = overrides.out.clone().or_else(|| self.out.clone()).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
        let format = overrides.format.or(self.format).unwrap_or_default();
        let config = RunConfig {
            scenarios: scenarios.iter().cloned().map(ScenarioEntry::Inline).collect(),
            reps: Some(reps),
            seed: Some(seed),
            out: None,
            format: Some(format),
            ..self.clone()
        };
        Ok(RunPlan { config, scenarios, reps, seed, out, format })
    }
}

impl RunPlan {
    /// The explicit configuration as written to `config.json`.
    pub fn config_json(&self) -> String {
        serde_json::to_string_pretty(&self.config).expect("configuration serializes") + "\n"
    }

    /// SHA-256 of [`RunPlan::config_json`]. The output directory is left out,
    /// so the hash identifies the experiment rather than where it was written.
    pub fn config_hash(&self) -> String {
        Sha256::digest(self.config_json().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}
