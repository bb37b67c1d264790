//! Frozen networks under analysis: sine-activated INRs and small ReLU CNNs.

use autodiff::{DenseArray, Graph, LeafKind, NodeId, Scalar};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng::Rng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Sine,
    Relu,
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Layer {
    Affine {
        input: usize,
        output: usize,
        activation: Activation,
    },
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        activation: Activation,
    },
    GlobalAvgPool,
    Flatten,
}

impl Layer {
    pub fn is_parametric(&self) -> bool {
        matches!(self, Layer::Affine { .. } | Layer::Conv { .. })
    }

    pub fn activation(&self) -> Option<Activation> {
        match self {
            Layer::Affine { activation, .. } | Layer::Conv { activation, .. } => Some(*activation),
            _ => None,
        }
    }

    /// `(weight shape, bias shape)` for parametric layers.
    pub fn param_shapes(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            Layer::Affine { input, output, .. } => Some((vec![output, input], vec![output])),
            Layer::Conv {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Some((
                vec![out_channels, in_channels, kernel, kernel],
                vec![out_channels],
            )),
            _ => None,
        }
    }
}

/// Layer list plus per-example input/output shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub input_shape: Vec<usize>,
    pub output_shape: Vec<usize>,
    /// Frequency multiplier applied to the first layer's pre-activation when it is a sine layer.
    #[serde(default = "one")]
    pub first_omega: f64,
    pub layers: Vec<Layer>,
}

fn one() -> f64 {
    1.0
}

impl ArchitectureSpec {
    /// Sine INR: 2 coordinates in, `depth` hidden sine layers of `width`, scalar out.
    pub fn inr(width: usize, depth: usize, omega: f64) -> Self {
        let mut layers = Vec::with_capacity(depth + 1);
        let mut input = 2;
        for _ in 0..depth {
            layers.push(Layer::Affine {
                input,
                output: width,
                activation: Activation::Sine,
            });
            input = width;
        }
        layers.push(Layer::Affine {
            input,
            output: 1,
            activation: Activation::None,
        });
        Self {
            input_shape: vec![2],
            output_shape: vec![1],
            first_omega: omega,
            layers,
        }
    }

    pub fn default_inr() -> Self {
        Self::inr(32, 3, 30.0)
    }

    /// ReLU CNN: 3x3 same-padding convs, global average pool, affine to `classes` logits.
    pub fn cnn(channels: &[usize], image: [usize; 3], classes: usize) -> Self {
        let mut layers = Vec::new();
        let mut c_in = image[0];
        for &c in channels {
            layers.push(Layer::Conv {
                in_channels: c_in,
                out_channels: c,
                kernel: 3,
                stride: 1,
                pad: 1,
                activation: Activation::Relu,
            });
            c_in = c;
        }
        layers.push(Layer::GlobalAvgPool);
        layers.push(Layer::Affine {
            input: c_in,
            output: classes,
            activation: Activation::None,
        });
        Self {
            input_shape: image.to_vec(),
            output_shape: vec![classes],
            first_omega: 1.0,
            layers,
        }
    }

    pub fn parametric_layers(&self) -> impl Iterator<Item = (usize, &Layer)> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.is_parametric())
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .filter_map(|l| l.param_shapes())
            .map(|(w, b)| w.iter().product::<usize>() + b.iter().product::<usize>())
            .sum()
    }

    /// Per-example shape after each layer, validating that consecutive layers compose.
    pub fn layer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shape = self.input_shape.clone();
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let bad = |why: String| Error::Config(format!("layer {}: {}", i, why));
            shape = match *layer {
                Layer::Affine { input, output, .. } => {
                    if shape != [input] {
                        return Err(bad(format!("affine expects [{}], got {:?}", input, shape)));
                    }
                    vec![output]
                }
                Layer::Conv {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    pad,
                    ..
                } => {
                    if shape.len() != 3 || shape[0] != in_channels {
                        return Err(bad(format!(
                            "conv expects [{}, H, W], got {:?}",
                            in_channels, shape
                        )));
                    }
                    let ext = |s: usize| {
                        (s + 2 * pad >= kernel && stride > 0)
                            .then(|| (s + 2 * pad - kernel) / stride + 1)
                    };
                    match (ext(shape[1]), ext(shape[2])) {
                        (Some(h), Some(w)) => vec![out_channels, h, w],
                        _ => {
                            return Err(bad(format!("kernel {} does not fit {:?}", kernel, shape)))
                        }
                    }
                }
                Layer::GlobalAvgPool => {
                    if shape.len() != 3 {
                        return Err(bad(format!("pooling expects [C, H, W], got {:?}", shape)));
                    }
                    vec![shape[0]]
                }
                Layer::Flatten => vec![shape.iter().product()],
            };
            out.push(shape.clone());
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        let shapes = self.layer_shapes()?;
        let Some(last) = self.layers.last() else {
            // the empty network is the identity map
            return if self.input_shape == self.output_shape {
                Ok(())
            } else {
                Err(Error::Config(
                    "empty architecture must map input shape to itself".into(),
                ))
            };
        };
        if last.activation() != Some(Activation::None) {
            return Err(Error::Config(
                "output layer must be affine or conv with no activation".into(),
            ));
        }
        if shapes.last().unwrap() != &self.output_shape {
            return Err(Error::Config(format!(
                "declared output {:?} but layers produce {:?}",
                self.output_shape,
                shapes.last().unwrap()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weight: DenseArray<f32>,
    pub bias: DenseArray<f32>,
}

/// Weights and biases of every parametric layer, in layer order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightRecord {
    pub layers: Vec<LayerParams>,
}

impl WeightRecord {
    pub fn zeros(spec: &ArchitectureSpec) -> Self {
        Self {
            layers: spec
                .layers
                .iter()
                .filter_map(|l| l.param_shapes())
                .map(|(w, b)| LayerParams {
                    weight: DenseArray::zeros(&w),
                    bias: DenseArray::zeros(&b),
                })
                .collect(),
        }
    }

    pub fn element_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    pub fn check(&self, spec: &ArchitectureSpec) -> Result<()> {
        let expected: Vec<_> = spec
            .layers
            .iter()
            .filter_map(|l| l.param_shapes())
            .collect();
        if expected.len() != self.layers.len() {
            return Err(Error::Data(format!(
                "weight record has {} layers, architecture needs {}",
                self.layers.len(),
                expected.len()
            )));
        }
        for (i, ((w, b), p)) in expected.iter().zip(&self.layers).enumerate() {
            if p.weight.shape() != w.as_slice() || p.bias.shape() != b.as_slice() {
                return Err(Error::Data(format!(
                    "layer {}: expected weight {:?} bias {:?}, got {:?} {:?}",
                    i,
                    w,
                    b,
                    p.weight.shape(),
                    p.bias.shape()
                )));
            }
            if !p.weight.is_finite() || !p.bias.is_finite() {
                return Err(Error::Data(format!("layer {}: non-finite weights", i)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbedModel {
    pub id: String,
    pub spec: ArchitectureSpec,
    pub weights: WeightRecord,
}

impl ProbedModel {
    pub fn new(
        id: impl Into<String>,
        spec: ArchitectureSpec,
        weights: WeightRecord,
    ) -> Result<Self> {
        spec.validate()?;
        weights.check(&spec)?;
        Ok(Self {
            id: id.into(),
            spec,
            weights,
        })
    }
}

pub fn count_parameters(model: &ProbedModel) -> usize {
    model.weights.element_count()
}

/// Appends the model's forward pass to `g`. `x` must be `(B, ..input_shape)`.
///
/// Weights enter the graph as leaves of `kind` (normally [`LeafKind::Constant`]
/// or [`LeafKind::Frozen`]) so nothing downstream can update them.
pub fn build_forward<T: Scalar>(
    g: &mut Graph<T>,
    model: &ProbedModel,
    x: NodeId,
    kind: LeafKind,
) -> Result<NodeId> {
    Ok(build_forward_with_leaves(g, model, x, kind)?.0)
}

/// Like [`build_forward`], also returning the `(weight, bias)` leaf of every parametric layer.
pub fn build_forward_with_leaves<T: Scalar>(
    g: &mut Graph<T>,
    model: &ProbedModel,
    x: NodeId,
    kind: LeafKind,
) -> Result<(NodeId, Vec<(NodeId, NodeId)>)> {
    let batch = g.shape(x)[0];
    let expected: Vec<usize> = std::iter::once(batch)
        .chain(model.spec.input_shape.iter().copied())
        .collect();
    if g.shape(x) != expected.as_slice() {
        return Err(Error::Data(format!(
            "model {}: input batch {:?} does not match {:?}",
            model.id,
            g.shape(x),
            expected
        )));
    }
    let mut h = x;
    let mut leaves = Vec::with_capacity(model.weights.layers.len());
    let mut params = model.weights.layers.iter();
    for (i, layer) in model.spec.layers.iter().enumerate() {
        let wrap =
            |e: autodiff::GraphError| Error::Data(format!("model {} layer {}: {}", model.id, i, e));
        h = match *layer {
            Layer::Affine { activation, .. } | Layer::Conv { activation, .. } => {
                let p = params.next().expect("weights checked against spec");
                let w = g.leaf(kind, format!("{}.l{}.w", model.id, i), p.weight.cast());
                let b = g.leaf(kind, format!("{}.l{}.b", model.id, i), p.bias.cast());
                leaves.push((w, b));
                let pre = match *layer {
                    Layer::Conv { stride, pad, .. } => g.conv2d(h, w, b, stride, pad),
                    _ => g.affine(h, w, b),
                }
                .map_err(wrap)?;
                match activation {
                    Activation::Sine => {
                        let freq = if i == 0 { model.spec.first_omega } else { 1.0 };
                        g.sin(pre, freq).map_err(wrap)?
                    }
                    Activation::Relu => g.relu(pre).map_err(wrap)?,
                    Activation::None => pre,
                }
            }
            Layer::GlobalAvgPool => {
                let s = g.shape(h).to_vec();
                let flat = g.reshape(h, &[s[0], s[1], s[2] * s[3]]).map_err(wrap)?;
                g.mean_axis(flat, 2).map_err(wrap)?
            }
            Layer::Flatten => {
                let s = g.shape(h).to_vec();
                g.reshape(h, &[s[0], s[1..].iter().product()])
                    .map_err(wrap)?
            }
        };
    }
    Ok((h, leaves))
}

/// Reads trained values back out of the leaves returned by [`build_forward_with_leaves`].
pub fn read_weights<T: Scalar>(g: &Graph<T>, leaves: &[(NodeId, NodeId)]) -> WeightRecord {
    WeightRecord {
        layers: leaves
            .iter()
            .map(|&(w, b)| LayerParams {
                weight: g.value(w).expect("leaf bound").cast(),
                bias: g.value(b).expect("leaf bound").cast(),
            })
            .collect(),
    }
}

/// Evaluates the model on a batch `(B, ..input_shape)`.
pub fn model_forward(model: &ProbedModel, inputs: &DenseArray<f32>) -> Result<DenseArray<f32>> {
    let mut g = Graph::<f32>::new();
    let x = g.input("x", inputs.shape());
    let y = build_forward(&mut g, model, x, LeafKind::Constant)?;
    g.evaluate([(x, inputs.clone())])?;
    Ok(g.value(y).expect("evaluated").clone())
}

/// Reorders the output units (or channels) of parametric layer `layer_index`
/// and the matching inputs of the next parametric layer. The result computes
/// the same function as `model`.
pub fn permute_hidden_neurons(
    model: &ProbedModel,
    layer_index: usize,
    perm: &[usize],
) -> Result<ProbedModel> {
    let positions: Vec<usize> = model.spec.parametric_layers().map(|(i, _)| i).collect();
    if layer_index + 1 >= positions.len() {
        return Err(Error::Config(format!(
            "layer {} is not a hidden layer ({} parametric layers)",
            layer_index,
            positions.len()
        )));
    }
    let units = model.weights.layers[layer_index].bias.len();
    let mut seen = vec![false; units];
    if perm.len() != units
        || perm
            .iter()
            .any(|&p| p >= units || std::mem::replace(&mut seen[p], true))
    {
        return Err(Error::Config(format!(
            "permutation of length {} is not a bijection on {} units",
            perm.len(),
            units
        )));
    }

    let next = positions[layer_index + 1];

    let mut out = model.clone();
    let cur = &model.weights.layers[layer_index];
    let row = cur.weight.len() / units;
    let w = out.weights.layers[layer_index].weight.data_mut();
    for (i, &p) in perm.iter().enumerate() {
        w[i * row..(i + 1) * row].copy_from_slice(&cur.weight.data()[p * row..(p + 1) * row]);
    }
    let b = out.weights.layers[layer_index].bias.data_mut();
    for (i, &p) in perm.iter().enumerate() {
        b[i] = cur.bias.data()[p];
    }

    let nxt = &model.weights.layers[layer_index + 1];
    let shape = nxt.weight.shape().to_vec();
    let (rows, inner) = match model.spec.layers[next] {
        // (out, units * block): each unit feeds a block of inputs after a flatten
        Layer::Affine { input, .. } => (shape[0], input / units),
        // (out, units, k, k)
        _ => (shape[0], shape[2] * shape[3]),
    };
    let stride = units * inner;
    let w = out.weights.layers[layer_index + 1].weight.data_mut();
    for r in 0..rows {
        for (i, &p) in perm.iter().enumerate() {
            let dst = r * stride + i * inner;
            let src = r * stride + p * inner;
            w[dst..dst + inner].copy_from_slice(&nxt.weight.data()[src..src + inner]);
        }
    }
    Ok(out)
}

fn uniform(rng: &mut Rng, shape: &[usize], bound: f64) -> DenseArray<f32> {
    DenseArray::from_fn(shape, |_| rng.random_range(-bound..=bound) as f32)
}

/// Sine-network initialisation: first layer U(-1/n, 1/n), later layers U(-sqrt(6/n)/w, sqrt(6/n)/w)
/// with `w = 1` for hidden layers (their frequency is already folded in) and `w = omega` for the output.
pub fn init_inr(spec: &ArchitectureSpec, rng: &mut Rng) -> WeightRecord {
    let n_param = spec.parametric_layers().count();
    let layers = spec
        .layers
        .iter()
        .filter_map(|l| l.param_shapes())
        .enumerate()
        .map(|(i, (w, b))| {
            let fan_in = w[1..].iter().product::<usize>() as f64;
            let bound = if i == 0 {
                1.0 / fan_in
            } else if i + 1 == n_param {
                (6.0 / fan_in).sqrt() / spec.first_omega
            } else {
                (6.0 / fan_in).sqrt()
            };
            LayerParams {
                weight: uniform(rng, &w, bound),
                bias: uniform(rng, &b, 1.0 / fan_in.sqrt()),
            }
        })
        .collect();
    WeightRecord { layers }
}

/// He-uniform initialisation scaled by `scale`; biases U(-1/sqrt(n), 1/sqrt(n)).
pub fn init_he(spec: &ArchitectureSpec, scale: f64, rng: &mut Rng) -> WeightRecord {
    let layers = spec
        .layers
        .iter()
        .filter_map(|l| l.param_shapes())
        .map(|(w, b)| {
            let fan_in = w[1..].iter().product::<usize>() as f64;
            LayerParams {
                weight: uniform(rng, &w, scale * (6.0 / fan_in).sqrt()),
                bias: uniform(rng, &b, 1.0 / fan_in.sqrt()),
            }
        })
        .collect();
    WeightRecord { layers }
}
