//! Shared probe generators `p_i = G(z_i)`.

use autodiff::{DenseArray, Graph, LeafKind, NodeId, Scalar};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::models::LayerParams;
use crate::rng::Rng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorKind {
    /// Probes are the latent codes themselves.
    Identity,
    FcLinear,
    FcNonlinear,
    ConvLinear,
    ConvNonlinear,
}

impl GeneratorKind {
    pub fn is_linear(self) -> bool {
        matches!(
            self,
            GeneratorKind::Identity | GeneratorKind::FcLinear | GeneratorKind::ConvLinear
        )
    }

    pub fn is_conv(self) -> bool {
        matches!(
            self,
            GeneratorKind::ConvLinear | GeneratorKind::ConvNonlinear
        )
    }
}

/// How identity-kind probes are initialised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbeInit {
    /// Same law as the latents of generated kinds.
    Latent,
    /// The modality's synthetic distribution: uniform on [-1, 1] for coordinates, [0, 1] for pixels.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub kind: GeneratorKind,
    /// Number of affine layers (FC) or transposed-conv stages (conv).
    pub depth: usize,
    pub width_mult: usize,
    /// Hidden width of FC generators; `None` means 32 for coordinates and 3*H*W for images.
    pub hidden: Option<usize>,
    pub latent_dim: usize,
    /// Shape of one probe: `[2]` for coordinates, `[C, H, W]` for images.
    pub output_shape: Vec<usize>,
    /// Standard deviation of the normal latent initialisation.
    pub latent_std: f64,
    pub identity_init: ProbeInit,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            kind: GeneratorKind::FcLinear,
            depth: 2,
            width_mult: 16,
            hidden: None,
            latent_dim: 32,
            output_shape: vec![2],
            latent_std: 1.0,
            identity_init: ProbeInit::Uniform,
        }
    }
}

/// One generator layer, with the geometry needed for FLOP counting.
#[derive(Debug, Clone, PartialEq)]
pub enum Stage {
    Affine {
        input: usize,
        output: usize,
    },
    ConvTranspose {
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        /// Spatial extent of the input feature map.
        in_size: usize,
        out_size: usize,
    },
}

impl Stage {
    /// `(weight shape, bias shape)`.
    pub fn param_shapes(&self) -> (Vec<usize>, Vec<usize>) {
        match *self {
            Stage::Affine { input, output } => (vec![output, input], vec![output]),
            Stage::ConvTranspose {
                c_in,
                c_out,
                kernel,
                ..
            } => (vec![c_in, c_out, kernel, kernel], vec![c_out]),
        }
    }

    fn fan_in(&self) -> usize {
        match *self {
            Stage::Affine { input, .. } => input,
            Stage::ConvTranspose {
                c_in,
                kernel,
                stride,
                ..
            } => (c_in * kernel * kernel / (stride * stride)).max(1),
        }
    }
}

impl GeneratorConfig {
    pub fn is_image(&self) -> bool {
        self.output_shape.len() == 3
    }

    pub fn probe_len(&self) -> usize {
        self.output_shape.iter().product()
    }

    fn fc_hidden(&self) -> usize {
        self.hidden.unwrap_or_else(|| {
            if self.is_image() {
                3 * self.output_shape[1] * self.output_shape[2]
            } else {
                32
            }
        })
    }

    /// Layer plan; empty for the identity kind.
    pub fn stages(&self) -> Result<Vec<Stage>> {
        if self.output_shape.is_empty() || self.probe_len() == 0 {
            return Err(Error::Config(
                "generator output shape must be non-empty".into(),
            ));
        }
        if self.kind == GeneratorKind::Identity {
            return Ok(Vec::new());
        }
        if self.depth == 0 || self.latent_dim == 0 {
            return Err(Error::Config(
                "generator depth and latent size must be at least 1".into(),
            ));
        }
        if !self.kind.is_conv() {
            let hidden = self.fc_hidden();
            return Ok((0..self.depth)
                .map(|i| Stage::Affine {
                    input: if i == 0 { self.latent_dim } else { hidden },
                    output: if i + 1 == self.depth {
                        self.probe_len()
                    } else {
                        hidden
                    },
                })
                .collect());
        }

        if !self.is_image() {
            return Err(Error::Config(
                "convolutional generators need an image output shape".into(),
            ));
        }
        let (c, h, w) = (
            self.output_shape[0],
            self.output_shape[1],
            self.output_shape[2],
        );
        if h != w || h < 2 || !h.is_power_of_two() {
            return Err(Error::Config(format!(
                "convolutional generators need a square power-of-two output, got {}x{}",
                h, w
            )));
        }
        let doublings = h.trailing_zeros() as usize;
        if self.depth < doublings {
            return Err(Error::Config(format!(
                "depth {} cannot reach {}x{} from a 1x1 seed by doubling",
                self.depth, h, w
            )));
        }
        let seed_channels = self.width_mult << (self.depth - 1);
        let mut stages = vec![Stage::Affine {
            input: self.latent_dim,
            output: seed_channels,
        }];
        let (mut ch, mut size) = (seed_channels, 1);
        for i in 0..self.depth {
            let c_out = if i + 1 == self.depth {
                c
            } else {
                (ch / 2).max(1)
            };
            // extra leading stages keep the spatial size
            let doubling = i >= self.depth - doublings;
            let (kernel, stride, pad, out_size) = if doubling {
                (4, 2, 1, size * 2)
            } else {
                (3, 1, 1, size)
            };
            stages.push(Stage::ConvTranspose {
                c_in: ch,
                c_out,
                kernel,
                stride,
                pad,
                in_size: size,
                out_size,
            });
            ch = c_out;
            size = out_size;
        }
        Ok(stages)
    }
}

/// Generator weights together with their configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub config: GeneratorConfig,
    pub layers: Vec<LayerParams>,
}

impl Generator {
    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation of every weight and bias.
    pub fn init(config: GeneratorConfig, rng: &mut Rng) -> Result<Self> {
        let layers = config
            .stages()?
            .iter()
            .map(|s| {
                let (ws, bs) = s.param_shapes();
                let bound = 1.0 / (s.fan_in() as f64).sqrt();
                let mut draw = |shape: &[usize]| {
                    DenseArray::from_fn(shape, |_| rng.random_range(-bound..=bound) as f32)
                };
                LayerParams {
                    weight: draw(&ws),
                    bias: draw(&bs),
                }
            })
            .collect();
        Ok(Self { config, layers })
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Shape of the latent matrix for `k` probes.
    pub fn latent_shape(&self, k: usize) -> Vec<usize> {
        if self.config.kind == GeneratorKind::Identity {
            std::iter::once(k)
                .chain(self.config.output_shape.iter().copied())
                .collect()
        } else {
            vec![k, self.config.latent_dim]
        }
    }

    /// Appends `G(z)` to the graph. `z` must have [`Self::latent_shape`]. Returns the probe
    /// node `(k, ..output_shape)` and the `(weight, bias)` leaves in stage order.
    pub fn build<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        z: NodeId,
        kind: LeafKind,
    ) -> Result<(NodeId, Vec<(NodeId, NodeId)>)> {
        let k = g.shape(z)[0];
        if g.shape(z) != self.latent_shape(k).as_slice() {
            return Err(Error::Data(format!(
                "latent shape {:?} does not match generator input {:?}",
                g.shape(z),
                self.latent_shape(k)
            )));
        }
        let stages = self.config.stages()?;
        if stages.len() != self.layers.len() {
            return Err(Error::Data(format!(
                "generator has {} parameter layers, plan needs {}",
                self.layers.len(),
                stages.len()
            )));
        }
        let relu_between = !self.config.kind.is_linear();
        let mut h = z;
        let mut leaves = Vec::with_capacity(stages.len());
        let last = stages.len().saturating_sub(1);
        for (i, (stage, p)) in stages.iter().zip(&self.layers).enumerate() {
            let (ws, bs) = stage.param_shapes();
            if p.weight.shape() != ws.as_slice() || p.bias.shape() != bs.as_slice() {
                return Err(Error::Data(format!(
                    "generator stage {} has mismatched parameter shapes",
                    i
                )));
            }
            let w = g.leaf(kind, format!("gen.s{}.w", i), p.weight.cast());
            let b = g.leaf(kind, format!("gen.s{}.b", i), p.bias.cast());
            leaves.push((w, b));
            h = match *stage {
                Stage::Affine { .. } => g.affine(h, w, b)?,
                Stage::ConvTranspose { stride, pad, .. } => {
                    if g.shape(h).len() == 2 {
                        let c0 = g.shape(h)[1];
                        h = g.reshape(h, &[k, c0, 1, 1])?;
                    }
                    g.conv_transpose2d(h, w, b, stride, pad)?
                }
            };
            // the seed projection of conv generators counts as part of the first stage
            let seed_projection = self.config.kind.is_conv() && i == 0;
            if relu_between && i < last && !seed_projection {
                h = g.relu(h)?;
            }
        }
        let out: Vec<usize> = std::iter::once(k)
            .chain(self.config.output_shape.iter().copied())
            .collect();
        if g.shape(h) != out.as_slice() {
            h = g.reshape(h, &out)?;
        }
        Ok((h, leaves))
    }

    /// Evaluates the generator on a latent matrix.
    pub fn apply<T: Scalar>(&self, z: &DenseArray<T>) -> Result<DenseArray<T>> {
        let mut g = Graph::<T>::new();
        let zn = g.constant("z", z.clone());
        let (p, _) = self.build(&mut g, zn, LeafKind::Constant)?;
        g.run()?;
        Ok(g.value(p).expect("evaluated").clone())
    }

    /// Initial latent codes (or, for the identity kind, initial probes) for `k` probes.
    pub fn init_latents(&self, k: usize, rng: &mut Rng) -> DenseArray<f32> {
        let shape = self.latent_shape(k);
        if self.config.kind == GeneratorKind::Identity
            && self.config.identity_init == ProbeInit::Uniform
        {
            let (lo, hi) = if self.config.is_image() {
                (0.0, 1.0)
            } else {
                (-1.0, 1.0)
            };
            return DenseArray::from_fn(&shape, |_| rng.random_range(lo..=hi));
        }
        let std = self.config.latent_std;
        DenseArray::from_fn(&shape, |_| {
            let v: f64 = StandardNormal.sample(rng);
            (v * std) as f32
        })
    }
}

/// Max over trials of `|G(a+b) - G(a) - G(b) + G(0)|_inf / (1 + |G(a)|_inf)` for random latents.
pub fn linearity_residual<T: Scalar>(gen: &Generator, trials: usize, rng: &mut Rng) -> Result<f64> {
    if !gen.config.kind.is_linear() {
        return Err(Error::Config(format!(
            "linearity is only defined for linear generators, got {:?}",
            gen.config.kind
        )));
    }
    let shape = gen.latent_shape(trials.max(1));
    let draw = |rng: &mut Rng| {
        DenseArray::<T>::from_fn(&shape, |_| {
            let v: f64 = StandardNormal.sample(rng);
            T::of(v)
        })
    };
    let (a, b) = (draw(rng), draw(rng));
    let sum = a.axpy(T::one(), &b)?;
    let zero = DenseArray::<T>::zeros(&shape);
    let (ga, gb, gs, g0) = (
        gen.apply(&a)?,
        gen.apply(&b)?,
        gen.apply(&sum)?,
        gen.apply(&zero)?,
    );
    let per = ga.len() / shape[0];
    let mut worst = 0.0f64;
    for t in 0..shape[0] {
        let r = t * per..(t + 1) * per;
        let num = r
            .clone()
            .map(|i| (gs.data()[i] - ga.data()[i] - gb.data()[i] + g0.data()[i]).abs())
            .fold(T::zero(), T::max);
        let den = T::one() + ga.data()[r].iter().fold(T::zero(), |m, v| m.max(v.abs()));
        worst = worst.max((num / den).to_f64().unwrap_or(f64::INFINITY));
    }
    Ok(worst)
}
