//! Probe sources: learned latents through a shared generator, directly learned
//! probes, and unlearned synthetic probes.

mod export;
mod generator;
mod synthetic;

use autodiff::DenseArray;

pub use export::{grid_layout, read_pnm, tile_probes, write_pnm, write_raw_f32, Normalization};
pub use generator::{
    linearity_residual, Generator, GeneratorConfig, GeneratorKind, ProbeInit, Stage,
};
pub use synthetic::{
    dead_leaves_image, dead_leaves_probes, sample_radius, synthetic_uniform_coords, DeadLeaves,
};

use crate::Result;

/// Per-probe latent codes `(k, d)`, or the probes themselves for the identity generator.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCodes {
    pub z: DenseArray<f32>,
    pub trainable: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProbeSource {
    Generated,
    SyntheticUniform,
    SyntheticDeadLeaves,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSet {
    /// `(k, ..probe shape)`.
    pub probes: DenseArray<f32>,
    pub source: ProbeSource,
}

impl ProbeSet {
    pub fn len(&self) -> usize {
        self.probes.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `p_i = G(z_i)` for every latent row.
pub fn generate_probes(z: &LatentCodes, gen: &Generator) -> Result<ProbeSet> {
    Ok(ProbeSet {
        probes: gen.apply(&z.z)?,
        source: ProbeSource::Generated,
    })
}
