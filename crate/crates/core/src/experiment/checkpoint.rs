//! Trained-pipeline checkpoints: `checkpoint.toml` plus LE f32 tensors in `checkpoint.bin`.

use std::path::Path;

use autodiff::DenseArray;
use serde::{Deserialize, Serialize};

use super::config::Method;
use super::pipeline::Pipeline;
use crate::models::LayerParams;
use crate::predictors::{PredictorHead, Standardizer};
use crate::probes::{Generator, GeneratorConfig};
use crate::zoo::TaskKind;
use crate::{Error, Result};

pub const CHECKPOINT_FILE: &str = "checkpoint.toml";
pub const TENSOR_FILE: &str = "checkpoint.bin";
const MAGIC: &[u8; 4] = b"PGCK";
const VERSION: u8 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointMeta {
    version: String,
    method: Method,
    task: TaskKind,
    outputs: usize,
    crc32: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    generator: Option<GeneratorConfig>,
    tensors: Vec<TensorEntry>,
}

fn tensors(p: &Pipeline) -> Vec<(String, DenseArray<f32>)> {
    let mut out = Vec::new();
    if let Some(z) = &p.latents {
        out.push(("latents".to_string(), z.clone()));
    }
    if let Some(f) = &p.fixed_probes {
        out.push(("fixed_probes".to_string(), f.clone()));
    }
    if let Some(g) = &p.generator {
        for (i, l) in g.layers.iter().enumerate() {
            out.push((format!("generator.{}.weight", i), l.weight.clone()));
            out.push((format!("generator.{}.bias", i), l.bias.clone()));
        }
    }
    for (i, l) in p.head.layers.iter().enumerate() {
        out.push((format!("head.{}.weight", i), l.weight.clone()));
        out.push((format!("head.{}.bias", i), l.bias.clone()));
    }
    if let Some(s) = &p.head.standardizer {
        out.push((
            "standardizer.mean".to_string(),
            DenseArray::from_vec(s.mean.clone()),
        ));
        out.push((
            "standardizer.std".to_string(),
            DenseArray::from_vec(s.std.clone()),
        ));
    }
    out
}

pub fn save_checkpoint(p: &Pipeline, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let ts = tensors(p);
    let mut bytes = Vec::from(&MAGIC[..]);
    bytes.push(VERSION);
    for (_, t) in &ts {
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let meta = CheckpointMeta {
        version: VERSION.to_string(),
        method: p.method,
        task: p.task,
        outputs: p.outputs,
        crc32: crc32fast::hash(&bytes),
        generator: p.generator.as_ref().map(|g| g.config.clone()),
        tensors: ts
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let bin = dir.join(TENSOR_FILE);
    std::fs::write(&bin, &bytes).map_err(|e| Error::io(&bin, e))?;
    let text = toml::to_string(&meta).map_err(|e| Error::Data(e.to_string()))?;
    let path = dir.join(CHECKPOINT_FILE);
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn load_checkpoint(dir: &Path) -> Result<Pipeline> {
    let path = dir.join(CHECKPOINT_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let meta: CheckpointMeta =
        toml::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
    if meta.version != VERSION.to_string() {
        return Err(Error::Version {
            expected: VERSION.to_string(),
            found: meta.version,
        });
    }
    let bin = dir.join(TENSOR_FILE);
    let bytes = std::fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    let actual = crc32fast::hash(&bytes);
    if actual != meta.crc32 {
        return Err(Error::Checksum {
            path: bin,
            expected: meta.crc32,
            actual,
        });
    }
    if bytes.len() < 5 || &bytes[..4] != MAGIC || bytes[4] != VERSION {
        return Err(Error::format(&bin, "missing PGCK header"));
    }
    let mut floats = bytes[5..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")));
    let mut named = Vec::with_capacity(meta.tensors.len());
    for t in &meta.tensors {
        let n: usize = t.shape.iter().product();
        let data: Vec<f32> = floats.by_ref().take(n).collect();
        if data.len() != n {
            return Err(Error::format(
                &bin,
                format!("truncated at tensor {}", t.name),
            ));
        }
        named.push((t.name.clone(), DenseArray::new(t.shape.clone(), data)?));
    }
    if floats.next().is_some() {
        return Err(Error::format(&bin, "trailing bytes"));
    }

    let mut take = |prefix: &str| -> Vec<DenseArray<f32>> {
        let (hit, rest): (Vec<_>, Vec<_>) = std::mem::take(&mut named)
            .into_iter()
            .partition(|(n, _)| n.starts_with(prefix));
        named = rest;
        hit.into_iter().map(|(_, t)| t).collect()
    };
    let pairs = |ts: Vec<DenseArray<f32>>| -> Vec<LayerParams> {
        ts.chunks(2)
            .map(|c| LayerParams {
                weight: c[0].clone(),
                bias: c[1].clone(),
            })
            .collect()
    };
    let latents = take("latents").pop();
    let fixed_probes = take("fixed_probes").pop();
    let gen_layers = pairs(take("generator."));
    let head_layers = pairs(take("head."));
    let std = take("standardizer.");
    if head_layers.is_empty() {
        return Err(Error::format(&path, "checkpoint has no head"));
    }
    let generator = meta.generator.map(|config| Generator {
        config,
        layers: gen_layers,
    });
    let standardizer = (std.len() == 2).then(|| Standardizer {
        mean: std[0].data().to_vec(),
        std: std[1].data().to_vec(),
    });
    Ok(Pipeline {
        method: meta.method,
        task: meta.task,
        outputs: meta.outputs,
        generator,
        latents,
        fixed_probes,
        head: PredictorHead {
            layers: head_layers,
            standardizer,
        },
    })
}
