//! Config-driven zoo generation from synthetic or on-disk image datasets.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::{
    generate_cnn_zoo, generate_inr_zoo, ingest_cifar_binary, ingest_idx, synthetic_glyphs,
    CnnZooConfig, Family, ImageDataset, InrFitConfig, ModelZoo,
};
use crate::rng::derive_seed;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum DataSource {
    /// Rendered digit glyphs; `size` defaults to 28 for INR zoos and 8 for CNN zoos.
    SyntheticGlyphs {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        size: Option<usize>,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
    },
    Cifar {
        files: Vec<PathBuf>,
        #[serde(default)]
        grayscale: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ZooGenConfig {
    pub family: Family,
    pub count: usize,
    pub seed: u64,
    pub source: DataSource,
    /// CNN zoos: images used to train each member.
    pub train_images: usize,
    /// CNN zoos: held-out images that define each member's accuracy label.
    pub test_images: usize,
    pub inr: InrFitConfig,
    pub cnn: CnnZooConfig,
}

impl Default for ZooGenConfig {
    fn default() -> Self {
        Self {
            family: Family::Inr,
            count: 2000,
            seed: 0,
            source: DataSource::SyntheticGlyphs { size: None },
            train_images: 2000,
            test_images: 500,
            inr: InrFitConfig::default(),
            cnn: CnnZooConfig::default(),
        }
    }
}

impl ZooGenConfig {
    fn dataset(&self, needed: usize) -> Result<ImageDataset> {
        let ds = match &self.source {
            DataSource::SyntheticGlyphs { size } => {
                let size = size.unwrap_or(match self.family {
                    Family::Inr => 28,
                    Family::Cnn => 8,
                });
                synthetic_glyphs(needed, size, derive_seed(self.seed, "glyphs", 0))?
            }
            DataSource::Idx { images, labels } => ingest_idx(images, labels)?,
            DataSource::Cifar { files, grayscale } => ingest_cifar_binary(files, *grayscale)?,
        };
        if ds.len() < needed {
            return Err(Error::Data(format!(
                "dataset has {} images, generation needs {}",
                ds.len(),
                needed
            )));
        }
        Ok(ds)
    }
}

/// Builds the zoo described by `cfg`.
pub fn generate_zoo(cfg: &ZooGenConfig) -> Result<ModelZoo> {
    match cfg.family {
        Family::Inr => {
            let ds = cfg.dataset(cfg.count)?;
            let (ds, _) = ds.split_at(cfg.count);
            generate_inr_zoo(&ds, cfg.count, &cfg.inr, cfg.seed)
        }
        Family::Cnn => {
            let ds = cfg.dataset(cfg.train_images + cfg.test_images)?;
            let (train, rest) = ds.split_at(cfg.train_images);
            let (test, _) = rest.split_at(cfg.test_images);
            generate_cnn_zoo(&train, &test, cfg.count, &cfg.cnn, cfg.seed)
        }
    }
}
