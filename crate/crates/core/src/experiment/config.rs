//! Experiment configuration and its resolution against a zoo.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::predictors::HeadConfig;
use crate::probes::{GeneratorConfig, GeneratorKind};
use crate::zoo::ModelZoo;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Latent codes through a shared learned generator.
    Probegen,
    /// Probes learned directly.
    Vanilla,
    /// Fixed probes uniform over the input domain.
    SyntheticUniform,
    /// Fixed dead-leaves image probes.
    SyntheticDeadLeaves,
    /// Per-layer weight statistics, no probes.
    Statnn,
    /// Generated probes, head sees only each probe's softmax entropy.
    EntropyOnly,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Probegen,
        Method::Vanilla,
        Method::SyntheticUniform,
        Method::SyntheticDeadLeaves,
        Method::Statnn,
        Method::EntropyOnly,
    ];

    pub fn learns_probes(self) -> bool {
        matches!(
            self,
            Method::Probegen | Method::Vanilla | Method::EntropyOnly
        )
    }

    pub fn uses_probes(self) -> bool {
        self != Method::Statnn
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Probegen => "probegen",
            Method::Vanilla => "vanilla",
            Method::SyntheticUniform => "synthetic-uniform",
            Method::SyntheticDeadLeaves => "synthetic-dead-leaves",
            Method::Statnn => "statnn",
            Method::EntropyOnly => "entropy-only",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {:?}", s)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub zoo: PathBuf,
    pub method: Method,
    /// Probe count k; must be 0 for statnn.
    pub probes: usize,
    /// `None` picks the default generator for the zoo's input modality.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorConfig>,
    pub head: HeadConfig,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub precision: Precision,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            zoo: PathBuf::from("zoo"),
            method: Method::Probegen,
            probes: 64,
            generator: None,
            head: HeadConfig::default(),
            lr: 3e-4,
            batch_size: 32,
            epochs: 30,
            seed: 0,
            precision: Precision::F32,
        }
    }
}

/// Two FC layers of width 32 for coordinates; the shallowest upsampling conv stack for images.
pub fn default_generator(input_shape: &[usize]) -> GeneratorConfig {
    let base = GeneratorConfig {
        output_shape: input_shape.to_vec(),
        ..Default::default()
    };
    if input_shape.len() == 3 {
        let side = input_shape[1].max(1);
        GeneratorConfig {
            kind: GeneratorKind::ConvLinear,
            depth: (usize::BITS - 1 - side.leading_zeros()).max(1) as usize,
            ..base
        }
    } else {
        base
    }
}

impl ExperimentConfig {
    /// Checks settings that do not depend on the zoo.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.lr));
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        match self.method {
            Method::Statnn if self.probes > 0 => {
                return bad(format!(
                    "statnn uses no probes, but probes = {}",
                    self.probes
                ));
            }
            m if m.uses_probes() && self.probes == 0 => {
                return bad(format!("{} needs probes > 0", m.name()))
            }
            _ => {}
        }
        if let Some(g) = &self.generator {
            match self.method {
                Method::Probegen | Method::EntropyOnly if g.kind == GeneratorKind::Identity => {
                    return bad(format!(
                        "{} needs a generator; identity is vanilla probing",
                        self.method.name()
                    ));
                }
                Method::Vanilla if g.kind != GeneratorKind::Identity => {
                    return bad(
                        "vanilla learns probes directly; generator kind must be identity".into(),
                    );
                }
                Method::SyntheticUniform | Method::SyntheticDeadLeaves | Method::Statnn => {
                    return bad(format!(
                        "{} has no trainable probes; remove the generator section",
                        self.method.name()
                    ));
                }
                _ => {}
            }
        }
        if self.head.standardize && self.method.learns_probes() {
            return bad(
                "feature standardization needs fixed features (synthetic or statnn methods)".into(),
            );
        }
        Ok(())
    }

    /// The generator to use for probes of `input_shape`, if the method learns probes.
    pub fn resolve_generator(&self, input_shape: &[usize]) -> Result<Option<GeneratorConfig>> {
        self.validate()?;
        if !self.method.learns_probes() {
            return Ok(None);
        }
        let mut g = self
            .generator
            .clone()
            .unwrap_or_else(|| default_generator(input_shape));
        g.output_shape = input_shape.to_vec();
        if self.method == Method::Vanilla {
            g.kind = GeneratorKind::Identity;
        }
        g.stages()?;
        Ok(Some(g))
    }

    /// Zoo-dependent checks; returns the shared model input shape.
    pub fn check_zoo(&self, zoo: &ModelZoo) -> Result<Vec<usize>> {
        self.validate()?;
        let first = zoo
            .records
            .first()
            .ok_or_else(|| Error::Data("cannot train on an empty zoo".into()))?;
        let input = first.model.spec.input_shape.clone();
        let output = first.model.spec.output_shape.clone();
        if let Some(r) = zoo
            .records
            .iter()
            .find(|r| r.model.spec.input_shape != input || r.model.spec.output_shape != output)
        {
            return Err(Error::Data(format!(
                "model {} has a different input or output shape",
                r.model.id
            )));
        }
        if self.method == Method::SyntheticDeadLeaves && input.len() != 3 {
            return Err(Error::Config(format!(
                "dead-leaves probes need image inputs, zoo takes {:?}",
                input
            )));
        }
        if self.method == Method::EntropyOnly && output.iter().product::<usize>() < 2 {
            return Err(Error::Config(
                "entropy features need models with >= 2 outputs".into(),
            ));
        }
        self.resolve_generator(&input)?;
        Ok(input)
    }
}
