//! Study configuration: a single JSON document describing designs,
//! scenarios and run parameters.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};
use crate::sim::{run_study, ScenarioSpec, StudyReport};
use crate::trial::{Design, DesignSpec};

fn default_reps() -> usize {
    1000
}

/// A scenario given inline or as a path to a JSON file holding one scenario
/// or an array of them. Relative paths resolve against the config file.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum ScenarioEntry {
    File { file: PathBuf },
    Inline(ScenarioSpec),
}

impl<'de> Deserialize<'de> for ScenarioEntry {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let value = serde_json::Value::deserialize(deserializer)?;
        let is_ref = value.as_object().is_some_and(|o| o.contains_key("file"));
        if is_ref {
            #[derive(Deserialize)]
            #[serde(deny_unknown_fields)]
            struct Ref {
                file: PathBuf,
            }
            let r: Ref = serde_json::from_value(value).map_err(D::Error::custom)?;
            Ok(ScenarioEntry::File { file: r.file })
        } else {
            serde_path_to_error::deserialize(value)
                .map(ScenarioEntry::Inline)
                .map_err(|e| {
                    let path = e.path().to_string();
                    if path == "." {
                        D::Error::custom(e.into_inner())
                    } else {
                        D::Error::custom(format!("{path}: {}", e.into_inner()))
                    }
                })
        }
    }
}

/// Where reports are written. Relative paths resolve against the working
/// directory of the caller.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub json: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub designs: Vec<DesignSpec>,
    pub scenarios: Vec<ScenarioEntry>,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; all available cores when absent. Results do not depend on it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parallelism: Option<usize>,
    #[serde(default)]
    pub output: OutputSpec,
}

fn config_err(path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.into(),
        message: message.into(),
    }
}

impl StudyConfig {
    /// Parses and validates a config file, inlining scenario files.
    pub fn from_path(path: &Path) -> Result<StudyConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            config_err(path.display().to_string(), format!("cannot read config: {e}"))
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        StudyConfig::from_str_in(&text, base)
    }

    /// Parses config text; scenario files are looked up relative to `base`.
    pub fn from_str_in(text: &str, base: &Path) -> Result<StudyConfig> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let config: StudyConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            config_err(path, e.into_inner().to_string())
        })?;
        let config = config.inline_scenarios(base)?;
        config.validate()?;
        Ok(config)
    }

    fn inline_scenarios(self, base: &Path) -> Result<StudyConfig> {
        let mut scenarios = Vec::new();
        for (i, entry) in self.scenarios.into_iter().enumerate() {
            match entry {
                ScenarioEntry::Inline(s) => scenarios.push(ScenarioEntry::Inline(s)),
                ScenarioEntry::File { file } => {
                    let field = format!("scenarios[{i}].file");
                    let full = if file.is_absolute() { file.clone() } else { base.join(&file) };
                    let text = std::fs::read_to_string(&full).map_err(|e| {
                        config_err(&field, format!("cannot read {}: {e}", full.display()))
                    })?;
                    let value: serde_json::Value = serde_json::from_str(&text)
                        .map_err(|e| config_err(&field, format!("{}: {e}", full.display())))?;
                    let parsed: Vec<ScenarioSpec> = if value.is_array() {
                        serde_path_to_error::deserialize(value)
                    } else {
                        serde_path_to_error::deserialize(value).map(|s| vec![s])
                    }
                    .map_err(|e| {
                        config_err(
                            &field,
                            format!("{} at `{}`: {}", full.display(), e.path(), e.inner()),
                        )
                    })?;
                    scenarios.extend(parsed.into_iter().map(ScenarioEntry::Inline));
                }
            }
        }
        Ok(StudyConfig { scenarios, ..self })
    }

    /// Inline scenarios; empty until file references are resolved.
    pub fn scenario_specs(&self) -> Vec<&ScenarioSpec> {
        self.scenarios
            .iter()
            .filter_map(|s| match s {
                ScenarioEntry::Inline(s) => Some(s),
                ScenarioEntry::File { .. } => None,
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.designs.is_empty() {
            return Err(config_err("designs", "at least one design is required"));
        }
        if self.scenarios.is_empty() {
            return Err(config_err("scenarios", "at least one scenario is required"));
        }
        if self.reps == 0 {
            return Err(config_err("reps", "must be at least 1"));
        }
        if self.parallelism == Some(0) {
            return Err(config_err("parallelism", "must be at least 1"));
        }
        let mut names = HashSet::new();
        for (i, d) in self.designs.iter().enumerate() {
            d.validate()
                .map_err(|e| config_err(format!("designs[{i}]"), e.to_string()))?;
            if !names.insert(d.display_name()) {
                return Err(config_err(
                    format!("designs[{i}].name"),
                    format!("duplicate design name `{}`", d.display_name()),
                ));
            }
        }
        let m = self.designs[0].dose_count();
        for (i, d) in self.designs.iter().enumerate().skip(1) {
            if d.dose_count() != m {
                return Err(config_err(
                    format!("designs[{i}].skeleton.values"),
                    format!(
                        "designs[{i}].skeleton.values has {} doses but designs[0].skeleton.values has {m}",
                        d.dose_count()
                    ),
                ));
            }
        }
        let mut names = HashSet::new();
        for (i, entry) in self.scenarios.iter().enumerate() {
            let s = match entry {
                ScenarioEntry::Inline(s) => s,
                ScenarioEntry::File { .. } => {
                    return Err(config_err(format!("scenarios[{i}]"), "scenario file was not loaded"))
                }
            };
            s.validate()
                .map_err(|e| config_err(format!("scenarios[{i}]"), e.to_string()))?;
            if !names.insert(s.name.clone()) {
                return Err(config_err(
                    format!("scenarios[{i}].name"),
                    format!("duplicate scenario name `{}`", s.name),
                ));
            }
            if s.true_tox.len() != m {
                return Err(config_err(
                    format!("scenarios[{i}].true_tox"),
                    format!(
                        "scenarios[{i}].true_tox has {} doses but designs[0].skeleton.values has {m}",
                        s.true_tox.len()
                    ),
                ));
            }
            for d in &self.designs {
                s.resolve_mtd(d.target.gamma)
                    .map_err(|e| config_err(format!("scenarios[{i}].mtd_index"), e.to_string()))?;
            }
        }
        Ok(())
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Compiles designs and runs the study, embedding this config in the report.
    /// The worker count is left out so reports match across machines.
    pub fn run(&self) -> Result<StudyReport> {
        self.validate()?;
        let designs = self
            .designs
            .iter()
            .map(|d| Design::new(d.clone()))
            .collect::<Result<Vec<_>>>()?;
        let scenarios: Vec<ScenarioSpec> = self.scenario_specs().into_iter().cloned().collect();
        let mut report = run_study(&scenarios, &designs, self.reps, self.seed, self.parallelism)?;
        let embedded = StudyConfig {
            parallelism: None,
            ..self.clone()
        };
        report.config = Some(serde_json::to_value(embedded)?);
        Ok(report)
    }
}
