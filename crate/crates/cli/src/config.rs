//! Run configuration: one TOML file, overridable by flags, echoed next to every output.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use probegen::experiment::{AblationAxis, ExperimentConfig, DEFAULT_SEEDS};
use probegen::probes::GeneratorKind;
use probegen::zoo::{ModelZoo, ZooGenConfig};
use probegen::{Error, Result};

/// File name of the resolved configuration written next to outputs.
pub const RESOLVED_FILE: &str = "config.resolved.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AxisName {
    ProbeCount,
    GeneratorDepth,
    GeneratorKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationSection {
    pub axis: AxisName,
    /// Axis values as text: counts, depths or generator kind names.
    pub values: Vec<String>,
    pub seeds: Vec<u64>,
}

impl Default for AblationSection {
    fn default() -> Self {
        Self {
            axis: AxisName::ProbeCount,
            values: ["16", "32", "64", "128"].map(String::from).to_vec(),
            seeds: DEFAULT_SEEDS.to_vec(),
        }
    }
}

impl AblationSection {
    pub fn axis(&self) -> Result<AblationAxis> {
        let counts = || -> Result<Vec<usize>> {
            self.values
                .iter()
                .map(|v| {
                    v.trim().parse().map_err(|_| {
                        Error::Config(format!(
                            "ablation value {:?} is not a non-negative integer",
                            v
                        ))
                    })
                })
                .collect()
        };
        Ok(match self.axis {
            AxisName::ProbeCount => AblationAxis::ProbeCount(counts()?),
            AxisName::GeneratorDepth => AblationAxis::GeneratorDepth(counts()?),
            AxisName::GeneratorKind => AblationAxis::GeneratorKind(
                self.values
                    .iter()
                    .map(|v| parse_kind(v.trim()))
                    .collect::<Result<_>>()?,
            ),
        })
    }
}

/// Everything one invocation needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CliConfig {
    /// Seed shared by zoo generation and training.
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    pub out: PathBuf,
    pub experiment: ExperimentConfig,
    pub generate: ZooGenConfig,
    pub ablation: AblationSection,
}

impl Default for CliConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            threads: 0,
            out: PathBuf::from("out"),
            experiment: ExperimentConfig::default(),
            generate: ZooGenConfig::default(),
            ablation: AblationSection::default(),
        }
    }
}

impl CliConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut cfg: Self =
            toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.sync_seed();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {}", path.display(), e)))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {}", path.display(), m)),
            other => other,
        })
    }

    /// Copies the top-level seed into the sections that use it.
    pub fn sync_seed(&mut self) {
        self.experiment.seed = self.seed;
        self.generate.seed = self.seed;
    }

    /// Fills in the modality-dependent generator so the echoed file is complete.
    pub fn resolve_for_zoo(&mut self, zoo: &ModelZoo) -> Result<()> {
        let input = self.experiment.check_zoo(zoo)?;
        self.experiment.generator = self.experiment.resolve_generator(&input)?;
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {}", e)))
    }

    /// Writes [`RESOLVED_FILE`] into `dir`.
    pub fn write_resolved(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(RESOLVED_FILE);
        std::fs::write(&path, self.to_toml()?).map_err(|e| Error::io(&path, e))
    }
}

/// Parses a kebab-case enum name the same way the config file does.
pub fn parse_name<T: serde::de::DeserializeOwned>(s: &str, what: &str) -> Result<T> {
    T::deserialize(toml::Value::String(s.to_string()))
        .map_err(|_| Error::Config(format!("unknown {} {:?}", what, s)))
}

pub fn parse_kind(s: &str) -> Result<GeneratorKind> {
    parse_name(s, "generator kind")
}
