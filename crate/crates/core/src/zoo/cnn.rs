//! CNN populations with randomly drawn training recipes, labeled by held-out accuracy.

use autodiff::{AdamConfig, AdamState, BackwardOptions, Graph, GraphError, LeafKind};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{assign_splits, Excluded, Family, ImageDataset, ModelZoo, RecordMeta, ZooRecord};
use crate::models::{
    build_forward_with_leaves, init_he, model_forward, read_weights, ArchitectureSpec, ProbedModel,
    WeightRecord,
};
use crate::rng::{derive, Rng};
use crate::{Error, Result};

/// Training recipe of one zoo member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CnnHyper {
    pub channels: Vec<usize>,
    pub lr: f64,
    pub epochs: usize,
    pub init_scale: f64,
    pub batch_size: usize,
}

/// Ranges the per-model recipes are drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CnnZooConfig {
    pub classes: usize,
    pub depth: (usize, usize),
    pub channel_choices: Vec<usize>,
    /// Log-uniform learning-rate range.
    pub lr: (f64, f64),
    pub epochs: (usize, usize),
    pub init_scale: (f64, f64),
    pub batch_size: usize,
}

impl Default for CnnZooConfig {
    fn default() -> Self {
        Self {
            classes: 10,
            depth: (3, 5),
            channel_choices: vec![8, 16, 24, 32],
            lr: (1e-4, 1e-1),
            epochs: (1, 5),
            init_scale: (0.5, 2.0),
            batch_size: 32,
        }
    }
}

pub fn sample_hyper(cfg: &CnnZooConfig, rng: &mut Rng) -> CnnHyper {
    let depth = rng.random_range(cfg.depth.0..=cfg.depth.1);
    let channels = (0..depth)
        .map(|_| {
            *cfg.channel_choices
                .choose(rng)
                .expect("non-empty channel choices")
        })
        .collect();
    let (lo, hi) = (cfg.lr.0.ln(), cfg.lr.1.ln());
    CnnHyper {
        channels,
        lr: rng.random_range(lo..=hi).exp(),
        epochs: rng.random_range(cfg.epochs.0..=cfg.epochs.1),
        init_scale: rng.random_range(cfg.init_scale.0..=cfg.init_scale.1),
        batch_size: cfg.batch_size,
    }
}

/// Mini-batch Adam on cross-entropy; the final partial batch of each epoch is dropped.
pub fn train_cnn(
    train: &ImageDataset,
    spec: &ArchitectureSpec,
    hyper: &CnnHyper,
    init: WeightRecord,
    rng: &mut Rng,
) -> Result<WeightRecord> {
    let model = ProbedModel::new("cnn", spec.clone(), init)?;
    let b = hyper.batch_size.min(train.len());
    if hyper.epochs == 0 || b == 0 {
        return Ok(model.weights);
    }
    let [c, h, w] = train.image_shape();
    let mut g = Graph::<f32>::new();
    let x = g.input("images", &[b, c, h, w]);
    let (logits, leaves) = build_forward_with_leaves(&mut g, &model, x, LeafKind::Param)?;
    let loss = g.softmax_cross_entropy(logits, &vec![0; b])?;
    let mut adam = AdamState::new(AdamConfig::with_lr(hyper.lr));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let numeric = |e: GraphError| match e {
        GraphError::Overflow { node } => Error::Numeric(format!("non-finite value at {}", node)),
        other => other.into(),
    };
    for _ in 0..hyper.epochs {
        order.shuffle(rng);
        for batch in order.chunks_exact(b) {
            let batch_set = train.subset(batch);
            g.set_targets(loss, &batch_set.labels)?;
            g.evaluate([(x, batch_set.images)]).map_err(numeric)?;
            let grads = g.backward_with(loss, BackwardOptions::params_only())?;
            g.apply_adam(&mut adam, &grads)?;
        }
    }
    let weights = read_weights(&g, &leaves);
    if weights
        .layers
        .iter()
        .any(|l| !l.weight.is_finite() || !l.bias.is_finite())
    {
        return Err(Error::Numeric("weights diverged".into()));
    }
    Ok(weights)
}

/// Fraction of `data` classified correctly, evaluated in chunks.
pub fn accuracy_on(model: &ProbedModel, data: &ImageDataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Data("empty evaluation set".into()));
    }
    let mut correct = 0usize;
    let chunk: Vec<usize> = (0..data.len()).collect();
    for idx in chunk.chunks(256) {
        let part = data.subset(idx);
        let logits = model_forward(model, &part.images)?;
        let classes = logits.shape()[1];
        for (row, &label) in logits.data().chunks(classes).zip(&part.labels) {
            if argmax(row) == label {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

pub(crate) fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

struct Trained {
    weights: WeightRecord,
    accuracy: f64,
    hyper: CnnHyper,
}

fn train_member(
    train: &ImageDataset,
    test: &ImageDataset,
    cfg: &CnnZooConfig,
    seed: u64,
    i: usize,
) -> Result<Trained> {
    let mut rng = derive(seed, "cnn", i as u64);
    let mut hyper = sample_hyper(cfg, &mut rng);
    let spec = ArchitectureSpec::cnn(&hyper.channels, train.image_shape(), cfg.classes);
    let init = init_he(&spec, hyper.init_scale, &mut rng);
    let weights = match train_cnn(train, &spec, &hyper, init.clone(), &mut rng.clone()) {
        Err(Error::Numeric(_)) => {
            hyper.lr /= 2.0;
            train_cnn(train, &spec, &hyper, init, &mut rng)?
        }
        other => other?,
    };
    let model = ProbedModel::new("cnn", spec, weights)?;
    let accuracy = accuracy_on(&model, test)?;
    Ok(Trained {
        weights: model.weights,
        accuracy,
        hyper,
    })
}

/// Trains `count` CNNs on `train` with sampled recipes; labels are accuracies on `test`.
pub fn generate_cnn_zoo(
    train: &ImageDataset,
    test: &ImageDataset,
    count: usize,
    cfg: &CnnZooConfig,
    seed: u64,
) -> Result<ModelZoo> {
    if train.image_shape() != test.image_shape() {
        return Err(Error::Data("train and test images differ in shape".into()));
    }
    if count > 0 && (train.is_empty() || test.is_empty()) {
        return Err(Error::Config(
            "CNN zoos need non-empty train and test splits".into(),
        ));
    }
    let results: Vec<Result<Trained>> = (0..count)
        .into_par_iter()
        .map(|i| train_member(train, test, cfg, seed, i))
        .collect();
    let mut zoo = ModelZoo::empty(Family::Cnn, seed, 0);
    let mut kept = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(t) => kept.push((i, t)),
            Err(e) => zoo.excluded.push(Excluded {
                index: i,
                reason: e.to_string(),
            }),
        }
    }
    let splits = assign_splits(kept.len(), seed);
    for ((i, t), split) in kept.into_iter().zip(splits) {
        let spec = ArchitectureSpec::cnn(&t.hyper.channels, train.image_shape(), cfg.classes);
        zoo.records.push(ZooRecord {
            model: ProbedModel::new(format!("cnn-{:04}", i), spec, t.weights)?,
            label: t.accuracy,
            split,
            meta: RecordMeta {
                fit_mse: None,
                source_index: None,
                hyper: Some(t.hyper),
            },
        });
    }
    Ok(zoo)
}
