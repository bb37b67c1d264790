//! One sine INR per image, fitted to pixel intensities over a [-1, 1]^2 grid.

use autodiff::{AdamConfig, AdamState, BackwardOptions, DenseArray, Graph, LeafKind};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{assign_splits, Excluded, Family, ImageDataset, ModelZoo, RecordMeta, ZooRecord};
use crate::models::{
    build_forward_with_leaves, init_inr, read_weights, ArchitectureSpec, ProbedModel, WeightRecord,
};
use crate::rng::{derive, derive_seed};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InrFitConfig {
    pub width: usize,
    pub depth: usize,
    pub omega: f64,
    pub steps: usize,
    pub lr: f64,
    /// Fits whose final MSE exceeds this are excluded from the zoo.
    pub mse_ceiling: f64,
}

impl Default for InrFitConfig {
    fn default() -> Self {
        Self {
            width: 32,
            depth: 3,
            omega: 30.0,
            steps: 1000,
            lr: 1e-3,
            mse_ceiling: 0.05,
        }
    }
}

impl InrFitConfig {
    pub fn spec(&self) -> ArchitectureSpec {
        ArchitectureSpec::inr(self.width, self.depth, self.omega)
    }
}

/// Pixel-center coordinates `(H*W, 2)` as `(x, y)` in row-major pixel order, both in [-1, 1].
pub fn coordinate_grid(h: usize, w: usize) -> DenseArray<f32> {
    let axis = |i: usize, n: usize| {
        if n > 1 {
            -1.0 + 2.0 * i as f32 / (n - 1) as f32
        } else {
            0.0
        }
    };
    DenseArray::from_fn(&[h * w, 2], |k| {
        let (p, c) = (k / 2, k % 2);
        if c == 0 {
            axis(p % w, w)
        } else {
            axis(p / w, h)
        }
    })
}

/// Full-batch Adam fit of one INR to a single-channel `h x w` image. Returns the weights and final MSE.
pub fn fit_inr(
    image: &[f32],
    h: usize,
    w: usize,
    cfg: &InrFitConfig,
    seed: u64,
) -> Result<(WeightRecord, f64)> {
    if image.len() != h * w {
        return Err(Error::Data(format!(
            "image has {} pixels, expected {}x{}",
            image.len(),
            h,
            w
        )));
    }
    let spec = cfg.spec();
    let init = init_inr(&spec, &mut derive(seed, "inr-init", 0));
    let model = ProbedModel::new("inr", spec, init)?;
    let mut g = Graph::<f32>::new();
    let coords = g.constant("coords", coordinate_grid(h, w));
    let (out, leaves) = build_forward_with_leaves(&mut g, &model, coords, LeafKind::Param)?;
    let target = g.constant("pixels", DenseArray::new(vec![h * w, 1], image.to_vec())?);
    let loss = g.mse(out, target)?;
    let mut adam = AdamState::new(AdamConfig::with_lr(cfg.lr));
    g.run()?;
    for _ in 0..cfg.steps {
        let grads = g.backward_with(loss, BackwardOptions::params_only())?;
        g.apply_adam(&mut adam, &grads)?;
        g.run()?;
    }
    let mse = g.value(loss).expect("evaluated").data()[0] as f64;
    Ok((read_weights(&g, &leaves), mse))
}

/// Fits INRs to the first `count` images of `dataset`. Labels are the image classes.
pub fn generate_inr_zoo(
    dataset: &ImageDataset,
    count: usize,
    cfg: &InrFitConfig,
    seed: u64,
) -> Result<ModelZoo> {
    let [c, h, w] = dataset.image_shape();
    if c != 1 {
        return Err(Error::Config(format!(
            "INR zoos need single-channel images, got {} channels",
            c
        )));
    }
    if count > dataset.len() {
        return Err(Error::Config(format!(
            "asked for {} INRs from {} images",
            count,
            dataset.len()
        )));
    }
    let fits: Vec<Result<(WeightRecord, f64)>> = (0..count)
        .into_par_iter()
        .map(|i| {
            fit_inr(
                dataset.image(i),
                h,
                w,
                cfg,
                derive_seed(seed, "inr", i as u64),
            )
        })
        .collect();

    let mut zoo = ModelZoo::empty(Family::Inr, seed, dataset.classes().max(1));
    let mut kept = Vec::new();
    for (i, fit) in fits.into_iter().enumerate() {
        match fit {
            Ok((weights, mse)) if mse.is_finite() && mse <= cfg.mse_ceiling => {
                kept.push((i, weights, mse))
            }
            Ok((_, mse)) => zoo.excluded.push(Excluded {
                index: i,
                reason: format!("final mse {:.5} above ceiling {}", mse, cfg.mse_ceiling),
            }),
            Err(e) => zoo.excluded.push(Excluded {
                index: i,
                reason: e.to_string(),
            }),
        }
    }
    let splits = assign_splits(kept.len(), seed);
    for ((i, weights, mse), split) in kept.into_iter().zip(splits) {
        zoo.records.push(ZooRecord {
            model: ProbedModel::new(format!("inr-{:05}", i), cfg.spec(), weights)?,
            label: dataset.labels[i] as f64,
            split,
            meta: RecordMeta {
                fit_mse: Some(mse),
                source_index: Some(i),
                hyper: None,
            },
        });
    }
    Ok(zoo)
}
