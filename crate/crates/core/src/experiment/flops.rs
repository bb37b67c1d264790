//! Analytic FLOP counts. One multiply-accumulate is 2 FLOPs.

use serde::{Deserialize, Serialize};

use crate::models::{ArchitectureSpec, Layer};
use crate::probes::Stage;
use crate::{Error, Result};

pub const CONVENTION: &str = "2 FLOPs per multiply-accumulate in affine, convolution and transposed-convolution layers; \
activations, pooling, softmax and losses are not counted; backward = 2x forward; the generator runs once per step \
on the k latents, the probed model runs on k probes for each of the batch models, the head runs on the batch; \
inference counts one model and excludes the generator (probes are fixed after training)";

/// `2 * b * m * n` for an `m -> n` affine map on a batch of `b`.
pub fn affine_flops(batch: usize, input: usize, output: usize) -> u64 {
    2 * (batch * input * output) as u64
}

/// `2 * b * C_out * H_out * W_out * C_in * k^2`.
pub fn conv_flops(
    batch: usize,
    c_in: usize,
    c_out: usize,
    kernel: usize,
    out_h: usize,
    out_w: usize,
) -> u64 {
    2 * (batch * c_out * out_h * out_w * c_in * kernel * kernel) as u64
}

/// Every input unit scatters into `C_out * k^2` outputs: `2 * b * C_in * H_in * W_in * C_out * k^2`.
pub fn conv_transpose_flops(
    batch: usize,
    c_in: usize,
    c_out: usize,
    kernel: usize,
    in_h: usize,
    in_w: usize,
) -> u64 {
    2 * (batch * c_in * in_h * in_w * c_out * kernel * kernel) as u64
}

/// Forward FLOPs of a probed model on `batch` inputs.
pub fn model_forward_flops(spec: &ArchitectureSpec, batch: usize) -> Result<u64> {
    let shapes = spec.layer_shapes()?;
    let mut total = 0;
    for (layer, out) in spec.layers.iter().zip(&shapes) {
        total += match *layer {
            Layer::Affine { input, output, .. } => affine_flops(batch, input, output),
            Layer::Conv {
                in_channels,
                out_channels,
                kernel,
                ..
            } => conv_flops(batch, in_channels, out_channels, kernel, out[1], out[2]),
            Layer::GlobalAvgPool | Layer::Flatten => 0,
        };
    }
    Ok(total)
}

/// Forward FLOPs of a generator plan on `k` latents.
pub fn generator_forward_flops(stages: &[Stage], k: usize) -> u64 {
    stages
        .iter()
        .map(|s| match *s {
            Stage::Affine { input, output } => affine_flops(k, input, output),
            Stage::ConvTranspose {
                c_in,
                c_out,
                kernel,
                in_size,
                ..
            } => conv_transpose_flops(k, c_in, c_out, kernel, in_size, in_size),
        })
        .sum()
}

/// Forward FLOPs of an MLP with layer widths `dims` (input first).
pub fn mlp_forward_flops(dims: &[usize], batch: usize) -> u64 {
    dims.windows(2)
        .map(|w| affine_flops(batch, w[0], w[1]))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FlopsBreakdown {
    pub generator: u64,
    pub model: u64,
    pub head: u64,
}

impl FlopsBreakdown {
    pub fn total(&self) -> u64 {
        self.generator + self.model + self.head
    }

    fn scaled(&self, f: u64) -> Self {
        Self {
            generator: self.generator * f,
            model: self.model * f,
            head: self.head * f,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlopsReport {
    pub probes: usize,
    pub batch: usize,
    /// One training step's forward pass.
    pub forward: FlopsBreakdown,
    pub backward: FlopsBreakdown,
    /// Forward plus backward.
    pub training_step: u64,
    /// Forward FLOPs to represent and score one model.
    pub inference_per_model: u64,
    pub convention: String,
}

/// Counts for `k` probes, a batch of `batch` models, a generator plan (empty if the
/// probes are fixed) and head widths `head_dims`. `model` is `None` when no probed
/// model is evaluated (weight-statistics features).
pub fn flops_breakdown(
    model: Option<&ArchitectureSpec>,
    stages: &[Stage],
    head_dims: &[usize],
    k: usize,
    batch: usize,
) -> Result<FlopsReport> {
    if head_dims.len() < 2 {
        return Err(Error::Config(
            "head needs at least an input and an output width".into(),
        ));
    }
    let per_model = match model {
        Some(spec) => model_forward_flops(spec, k)?,
        None => 0,
    };
    let forward = FlopsBreakdown {
        generator: generator_forward_flops(stages, k),
        model: per_model * batch as u64,
        head: mlp_forward_flops(head_dims, batch),
    };
    let backward = forward.scaled(2);
    Ok(FlopsReport {
        probes: k,
        batch,
        forward,
        backward,
        training_step: forward.total() + backward.total(),
        inference_per_model: per_model + mlp_forward_flops(head_dims, 1),
        convention: CONVENTION.to_string(),
    })
}
