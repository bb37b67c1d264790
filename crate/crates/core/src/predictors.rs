//! Maps model responses or weight statistics to the target attribute.

use std::path::Path;

use autodiff::{DenseArray, Graph, LeafKind, NodeId, Scalar};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::models::{build_forward, LayerParams, ProbedModel};
use crate::probes::ProbeSet;
use crate::rng::Rng;
use crate::{Error, Result};

/// Statistics per flattened tensor: mean, variance, then the 0/25/50/75/100th percentiles.
pub const STATS_PER_TENSOR: usize = 7;
pub const STAT_NAMES: [&str; STATS_PER_TENSOR] = ["mean", "var", "p0", "p25", "p50", "p75", "p100"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Layout {
    /// Model outputs on each probe, concatenated in probe order.
    ProbeConcat { k: usize, per_probe: usize },
    /// Weight and bias statistics of each parametric layer.
    StatFeatures { layers: usize },
    /// Softmax entropy of each probe's outputs.
    EntropyFeatures { k: usize },
}

impl Layout {
    pub fn dim(&self) -> usize {
        match *self {
            Layout::ProbeConcat { k, per_probe } => k * per_probe,
            Layout::StatFeatures { layers } => 2 * STATS_PER_TENSOR * layers,
            Layout::EntropyFeatures { k } => k,
        }
    }

    pub fn column_names(&self) -> Vec<String> {
        match *self {
            Layout::ProbeConcat { k, per_probe } => (0..k)
                .flat_map(|p| (0..per_probe).map(move |o| format!("p{}_o{}", p, o)))
                .collect(),
            Layout::StatFeatures { layers } => (0..layers)
                .flat_map(|l| {
                    ["w", "b"].into_iter().flat_map(move |t| {
                        STAT_NAMES
                            .iter()
                            .map(move |s| format!("l{}_{}_{}", l, t, s))
                    })
                })
                .collect(),
            Layout::EntropyFeatures { k } => (0..k).map(|p| format!("h{}", p)).collect(),
        }
    }
}

/// Feature matrix `(batch, D)` with its layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Representation {
    pub features: DenseArray<f32>,
    pub layout: Layout,
}

impl Representation {
    pub fn new(features: DenseArray<f32>, layout: Layout) -> Result<Self> {
        let s = features.shape();
        if s.len() != 2 || s[1] != layout.dim() {
            return Err(Error::Data(format!(
                "features {:?} do not match layout {:?}",
                s, layout
            )));
        }
        Ok(Self { features, layout })
    }

    pub fn batch(&self) -> usize {
        self.features.shape()[0]
    }

    /// Stacks single-layout representations row-wise.
    pub fn stack(reps: &[Representation]) -> Result<Self> {
        let layout = match reps.first() {
            Some(r) => r.layout,
            None => return Err(Error::Data("no representations to stack".into())),
        };
        let mut data = Vec::new();
        for r in reps {
            if r.layout != layout {
                return Err(Error::Data(format!(
                    "layout {:?} mixed with {:?}",
                    r.layout, layout
                )));
            }
            data.extend_from_slice(r.features.data());
        }
        let rows = data.len() / layout.dim().max(1);
        Self::new(DenseArray::new(vec![rows, layout.dim()], data)?, layout)
    }
}

/// Appends `f(p_1) .. f(p_k)` flattened to one `(1, k * out)` row. Model weights
/// are constants, so gradients reach only `probes`.
pub fn build_response<T: Scalar>(
    g: &mut Graph<T>,
    model: &ProbedModel,
    probes: NodeId,
) -> Result<(NodeId, Layout)> {
    let k = g.shape(probes)[0];
    let out = build_forward(g, model, probes, LeafKind::Constant)?;
    let per_probe: usize = g.shape(out)[1..].iter().product();
    let row = g.reshape(out, &[1, k * per_probe])?;
    Ok((row, Layout::ProbeConcat { k, per_probe }))
}

/// Appends per-probe softmax entropies as a `(1, k)` row.
pub fn build_entropy_response<T: Scalar>(
    g: &mut Graph<T>,
    model: &ProbedModel,
    probes: NodeId,
) -> Result<(NodeId, Layout)> {
    let k = g.shape(probes)[0];
    let out = build_forward(g, model, probes, LeafKind::Constant)?;
    let per_probe: usize = g.shape(out)[1..].iter().product();
    if per_probe < 2 {
        return Err(Error::Config(format!(
            "entropy features need >= 2 outputs per probe, model {} has {}",
            model.id, per_probe
        )));
    }
    let flat = g.reshape(out, &[k, per_probe])?;
    let h = g.softmax_entropy(flat)?;
    let row = g.reshape(h, &[1, k])?;
    Ok((row, Layout::EntropyFeatures { k }))
}

fn check_probe_shape(model: &ProbedModel, probes: &ProbeSet) -> Result<()> {
    if probes.probes.shape()[1..] != model.spec.input_shape[..] {
        return Err(Error::Data(format!(
            "probe shape {:?} does not match model {} input {:?}",
            &probes.probes.shape()[1..],
            model.id,
            model.spec.input_shape
        )));
    }
    Ok(())
}

/// Evaluates the model on all probes in one batch and concatenates the outputs in probe order.
pub fn probe_representation(model: &ProbedModel, probes: &ProbeSet) -> Result<Representation> {
    check_probe_shape(model, probes)?;
    let mut g = Graph::<f32>::new();
    let p = g.input("probes", probes.probes.shape());
    let (row, layout) = build_response(&mut g, model, p)?;
    g.evaluate([(p, probes.probes.clone())])?;
    Representation::new(g.value(row).expect("evaluated").clone(), layout)
}

/// Mean, population variance and linearly interpolated 0/25/50/75/100th percentiles.
pub fn seven_stats(values: &[f32]) -> Result<[f64; STATS_PER_TENSOR]> {
    if values.is_empty() {
        return Err(Error::Data("statistics of an empty tensor".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = values
        .iter()
        .map(|&v| (v as f64 - mean).powi(2))
        .sum::<f64>()
        / n;
    let mut sorted: Vec<f64> = values.iter().map(|&v| v as f64).collect();
    sorted.sort_by(f64::total_cmp);
    let pct = |q: f64| {
        let pos = q * (sorted.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
    };
    Ok([
        mean,
        var,
        pct(0.0),
        pct(0.25),
        pct(0.5),
        pct(0.75),
        pct(1.0),
    ])
}

/// 14 statistics per parametric layer (weights then biases), in layer order.
pub fn statnn_features(model: &ProbedModel) -> Result<Representation> {
    let mut feats = Vec::with_capacity(model.weights.layers.len() * 2 * STATS_PER_TENSOR);
    for (i, layer) in model.weights.layers.iter().enumerate() {
        for t in [&layer.weight, &layer.bias] {
            let s = seven_stats(t.data())
                .map_err(|_| Error::Data(format!("model {} layer {} is empty", model.id, i)))?;
            feats.extend(s.iter().map(|&v| v as f32));
        }
    }
    let layout = Layout::StatFeatures {
        layers: model.weights.layers.len(),
    };
    Representation::new(DenseArray::new(vec![1, feats.len()], feats)?, layout)
}

/// Shannon entropy (natural log) of the softmax over one logit vector.
pub fn softmax_entropy(logits: &[f64]) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|&v| (v - m).exp()).sum();
    let lz = z.ln();
    -logits
        .iter()
        .map(|&v| {
            let lp = v - m - lz;
            lp.exp() * lp
        })
        .sum::<f64>()
}

/// Replaces each probe's output block by its softmax entropy.
pub fn entropy_features(rep: &Representation) -> Result<Representation> {
    let Layout::ProbeConcat { k, per_probe } = rep.layout else {
        return Err(Error::Data(format!(
            "entropy features need a probe-concat layout, got {:?}",
            rep.layout
        )));
    };
    if per_probe < 2 {
        return Err(Error::Data(format!(
            "entropy features need >= 2 outputs per probe, got {}",
            per_probe
        )));
    }
    let data: Vec<f32> = rep
        .features
        .data()
        .chunks(per_probe)
        .map(|c| softmax_entropy(&c.iter().map(|&v| v as f64).collect::<Vec<_>>()) as f32)
        .collect();
    Representation::new(
        DenseArray::new(vec![rep.batch(), k], data)?,
        Layout::EntropyFeatures { k },
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeadConfig {
    /// Number of affine layers.
    pub depth: usize,
    pub hidden: usize,
    /// Standardize each feature with train-split statistics before the head.
    pub standardize: bool,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            depth: 6,
            hidden: 256,
            standardize: false,
        }
    }
}

/// Per-feature affine standardization `(x - mean) / std`.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl Standardizer {
    pub fn fit(features: &DenseArray<f32>) -> Result<Self> {
        let (n, d) = (features.shape()[0], features.shape()[1]);
        if n == 0 {
            return Err(Error::Data("cannot standardize zero rows".into()));
        }
        let mut mean = vec![0.0f64; d];
        let mut sq = vec![0.0f64; d];
        for i in 0..n {
            for (j, &v) in features.row(i).iter().enumerate() {
                mean[j] += v as f64;
                sq[j] += (v as f64) * (v as f64);
            }
        }
        let mean: Vec<f64> = mean.iter().map(|m| m / n as f64).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| {
                let var = (s / n as f64 - m * m).max(0.0);
                if var > 1e-12 {
                    var.sqrt() as f32
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self {
            mean: mean.into_iter().map(|m| m as f32).collect(),
            std,
        })
    }

    pub fn apply(&self, features: &DenseArray<f32>) -> DenseArray<f32> {
        let d = self.mean.len();
        let mut out = features.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v = (*v - self.mean[i % d]) / self.std[i % d];
        }
        out
    }
}

/// MLP with ReLU between layers and a linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorHead {
    pub layers: Vec<LayerParams>,
    pub standardizer: Option<Standardizer>,
}

impl PredictorHead {
    /// Uniform `±1/sqrt(fan_in)` initialisation for weights and biases.
    pub fn init(
        config: &HeadConfig,
        input_dim: usize,
        output_dim: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if config.depth == 0 || input_dim == 0 || output_dim == 0 {
            return Err(Error::Config(format!(
                "head needs depth, input and output > 0 (got {}, {}, {})",
                config.depth, input_dim, output_dim
            )));
        }
        let mut dims = vec![input_dim];
        dims.extend(std::iter::repeat_n(config.hidden, config.depth - 1));
        dims.push(output_dim);
        let layers = dims
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f32).sqrt();
                LayerParams {
                    weight: DenseArray::from_fn(&[w[1], w[0]], |_| {
                        rng.random_range(-bound..=bound)
                    }),
                    bias: DenseArray::from_fn(&[w[1]], |_| rng.random_range(-bound..=bound)),
                }
            })
            .collect();
        Ok(Self {
            layers,
            standardizer: None,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.shape()[1]
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("head has layers").bias.len()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Appends the MLP to `g` on `x (B, D)`; standardization is applied by the caller.
    pub fn build<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        x: NodeId,
        kind: LeafKind,
    ) -> Result<(NodeId, Vec<(NodeId, NodeId)>)> {
        let s = g.shape(x);
        if s.len() != 2 || s[1] != self.input_dim() {
            return Err(Error::Data(format!(
                "head expects (B, {}), got {:?}",
                self.input_dim(),
                s
            )));
        }
        let mut h = x;
        let mut leaves = Vec::with_capacity(self.layers.len());
        for (i, p) in self.layers.iter().enumerate() {
            let w = g.leaf(kind, format!("head.l{}.w", i), p.weight.cast());
            let b = g.leaf(kind, format!("head.l{}.b", i), p.bias.cast());
            leaves.push((w, b));
            h = g.affine(h, w, b)?;
            if i + 1 < self.layers.len() {
                h = g.relu(h)?;
            }
        }
        Ok((h, leaves))
    }
}

/// Forward pass of the head: logits `(B, classes)` or regression outputs `(B, 1)`.
pub fn head_predict(head: &PredictorHead, rep: &Representation) -> Result<DenseArray<f32>> {
    if rep.layout.dim() != head.input_dim() {
        return Err(Error::Data(format!(
            "representation has {} features, head expects {}",
            rep.layout.dim(),
            head.input_dim()
        )));
    }
    let x = match &head.standardizer {
        Some(s) => s.apply(&rep.features),
        None => rep.features.clone(),
    };
    let mut g = Graph::<f32>::new();
    let xn = g.input("x", x.shape());
    let (out, _) = head.build(&mut g, xn, LeafKind::Constant)?;
    g.evaluate([(xn, x)])?;
    Ok(g.value(out).expect("evaluated").clone())
}

/// One row per model; the header names every feature column of the layout.
pub fn write_representations_csv(
    path: &Path,
    ids: &[String],
    labels: &[f64],
    rep: &Representation,
) -> Result<()> {
    if ids.len() != rep.batch() || labels.len() != rep.batch() {
        return Err(Error::Data(format!(
            "{} ids and {} labels for {} representation rows",
            ids.len(),
            labels.len(),
            rep.batch()
        )));
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let mut header = vec!["id".to_string(), "label".to_string()];
    header.extend(rep.layout.column_names());
    let fail = |e: csv::Error| Error::format(path, e.to_string());
    w.write_record(&header).map_err(fail)?;
    for (i, (id, label)) in ids.iter().zip(labels).enumerate() {
        let mut row = vec![id.clone(), label.to_string()];
        row.extend(rep.features.row(i).iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(fail)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
