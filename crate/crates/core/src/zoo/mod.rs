//! Labeled populations of trained networks, their datasets, and the on-disk format.

mod cifar;
mod cnn;
mod dataset;
mod generate;
mod glyphs;
mod idx;
mod inr;
mod io;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use cifar::ingest_cifar_binary;
pub use cnn::{accuracy_on, generate_cnn_zoo, sample_hyper, train_cnn, CnnHyper, CnnZooConfig};
pub use dataset::ImageDataset;
pub use generate::{generate_zoo, DataSource, ZooGenConfig};
pub use glyphs::{render_glyph, synthetic_glyphs};
pub use idx::ingest_idx;
pub use inr::{coordinate_grid, fit_inr, generate_inr_zoo, InrFitConfig};
pub use io::{
    load_zoo, save_zoo, verify_zoo, weight_bytes, weights_from_bytes, FORMAT_VERSION, MANIFEST_FILE,
};

use crate::models::{Activation, ArchitectureSpec, Layer, ProbedModel};
use crate::rng::derive;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    ClassPrediction,
    AccuracyRegression,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// Architecture families a zoo can hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    /// Coordinate-to-intensity sine networks.
    Inr,
    /// Conv + ReLU stacks, global average pool, affine logits.
    Cnn,
}

impl Family {
    pub fn contains(self, spec: &ArchitectureSpec) -> bool {
        if spec.validate().is_err() {
            return false;
        }
        let (last, body) = match spec.layers.split_last() {
            Some(x) => x,
            None => return false,
        };
        let affine_out = matches!(
            last,
            Layer::Affine {
                activation: Activation::None,
                ..
            }
        );
        match self {
            Family::Inr => {
                affine_out
                    && spec.input_shape == [2]
                    && spec.output_shape == [1]
                    && body.iter().all(|l| {
                        matches!(
                            l,
                            Layer::Affine {
                                activation: Activation::Sine,
                                ..
                            }
                        )
                    })
            }
            Family::Cnn => {
                let (pool, convs) = match body.split_last() {
                    Some(x) => x,
                    None => return false,
                };
                affine_out
                    && *pool == Layer::GlobalAvgPool
                    && !convs.is_empty()
                    && convs.iter().all(|l| {
                        matches!(
                            l,
                            Layer::Conv {
                                activation: Activation::Relu,
                                ..
                            }
                        )
                    })
            }
        }
    }

    pub fn task(self) -> TaskKind {
        match self {
            Family::Inr => TaskKind::ClassPrediction,
            Family::Cnn => TaskKind::AccuracyRegression,
        }
    }
}

/// Per-record provenance kept in the manifest.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RecordMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit_mse: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hyper: Option<CnnHyper>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZooRecord {
    pub model: ProbedModel,
    /// Class index for class prediction, accuracy in [0, 1] for regression.
    pub label: f64,
    pub split: Split,
    pub meta: RecordMeta,
}

impl ZooRecord {
    pub fn class(&self) -> usize {
        self.label as usize
    }
}

/// A model the generator gave up on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Excluded {
    pub index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelZoo {
    pub task: TaskKind,
    pub family: Family,
    pub seed: u64,
    /// Number of classes for class prediction, 0 for regression.
    pub classes: usize,
    pub records: Vec<ZooRecord>,
    pub excluded: Vec<Excluded>,
}

impl ModelZoo {
    pub fn empty(family: Family, seed: u64, classes: usize) -> Self {
        Self {
            task: family.task(),
            family,
            seed,
            classes,
            records: Vec::new(),
            excluded: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn split(&self, split: Split) -> Vec<&ZooRecord> {
        self.records.iter().filter(|r| r.split == split).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.task != self.family.task() {
            return Err(Error::Data(format!(
                "{:?} zoo cannot hold a {:?} task",
                self.family, self.task
            )));
        }
        let mut ids = std::collections::HashSet::new();
        for r in &self.records {
            if !ids.insert(r.model.id.as_str()) {
                return Err(Error::Data(format!("duplicate model id {}", r.model.id)));
            }
            if !self.family.contains(&r.model.spec) {
                return Err(Error::Data(format!(
                    "model {} is outside the {:?} family",
                    r.model.id, self.family
                )));
            }
            r.model.weights.check(&r.model.spec)?;
            let ok = match self.task {
                TaskKind::ClassPrediction => {
                    r.label >= 0.0 && r.label.fract() == 0.0 && (r.label as usize) < self.classes
                }
                TaskKind::AccuracyRegression => (0.0..=1.0).contains(&r.label),
            };
            if !ok {
                return Err(Error::Data(format!(
                    "model {}: label {} invalid for {:?}",
                    r.model.id, r.label, self.task
                )));
            }
        }
        Ok(())
    }

    /// Label counts (class prediction) or min/mean/max (regression), for summaries.
    pub fn label_summary(&self) -> String {
        match self.task {
            TaskKind::ClassPrediction => {
                let mut counts = vec![0usize; self.classes];
                for r in &self.records {
                    counts[r.class()] += 1;
                }
                format!("class counts {:?}", counts)
            }
            TaskKind::AccuracyRegression => {
                if self.records.is_empty() {
                    return "no labels".into();
                }
                let (min, max, sum) = self
                    .records
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY, 0.0), |(a, b, s), r| {
                        (a.min(r.label), b.max(r.label), s + r.label)
                    });
                format!(
                    "accuracy min {:.4} mean {:.4} max {:.4} spread {:.4}",
                    min,
                    sum / self.records.len() as f64,
                    max,
                    max - min
                )
            }
        }
    }
}

/// 70/15/15 train/validation/test assignment of `n` records by a seeded shuffle.
pub fn assign_splits(n: usize, seed: u64) -> Vec<Split> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut derive(seed, "splits", 0));
    let n_train = (n as f64 * 0.70).round() as usize;
    let n_val = (n as f64 * 0.15).round() as usize;
    let mut splits = vec![Split::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        splits[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Validation
        } else {
            Split::Test
        };
    }
    splits
}
