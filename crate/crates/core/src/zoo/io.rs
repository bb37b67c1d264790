//! Zoo directories: `manifest.toml` plus one `PGZW` weight file per model.

use std::path::{Path, PathBuf};

use autodiff::DenseArray;
use serde::{Deserialize, Serialize};

use super::{CnnHyper, Excluded, Family, ModelZoo, RecordMeta, Split, TaskKind, ZooRecord};
use crate::models::{ArchitectureSpec, LayerParams, ProbedModel, WeightRecord};
use crate::{Error, Result};

pub const FORMAT_VERSION: &str = "1";
pub const MANIFEST_FILE: &str = "manifest.toml";
const MAGIC: &[u8; 4] = b"PGZW";
const WEIGHT_VERSION: u8 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    version: String,
    task: TaskKind,
    family: Family,
    seed: u64,
    classes: usize,
    #[serde(default)]
    excluded: Vec<Excluded>,
    #[serde(default)]
    records: Vec<ManifestRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestRecord {
    id: String,
    label: f64,
    split: Split,
    file: String,
    crc32: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fit_mse: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hyper: Option<CnnHyper>,
    spec: ArchitectureSpec,
}

/// Weight file body: magic, version byte, then each layer's weights and biases as LE f32.
pub fn weight_bytes(weights: &WeightRecord) -> Vec<u8> {
    let mut out = Vec::with_capacity(5 + 4 * weights.element_count());
    out.extend_from_slice(MAGIC);
    out.push(WEIGHT_VERSION);
    for l in &weights.layers {
        for v in l.weight.data().iter().chain(l.bias.data()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Inverse of [`weight_bytes`]; layer shapes come from `spec`.
pub fn weights_from_bytes(
    path: &Path,
    bytes: &[u8],
    spec: &ArchitectureSpec,
) -> Result<WeightRecord> {
    if bytes.len() < 5 || &bytes[..4] != MAGIC {
        return Err(Error::format(path, "missing PGZW magic"));
    }
    if bytes[4] != WEIGHT_VERSION {
        return Err(Error::Version {
            expected: WEIGHT_VERSION.to_string(),
            found: bytes[4].to_string(),
        });
    }
    let body = &bytes[5..];
    if body.len() != 4 * spec.parameter_count() {
        return Err(Error::format(
            path,
            format!(
                "{} payload bytes, architecture needs {}",
                body.len(),
                4 * spec.parameter_count()
            ),
        ));
    }
    let mut floats = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()));
    let mut take = |shape: &[usize]| {
        let n = shape.iter().product();
        DenseArray::new(shape.to_vec(), floats.by_ref().take(n).collect()).expect("length checked")
    };
    let layers = spec
        .layers
        .iter()
        .filter_map(|l| l.param_shapes())
        .map(|(w, b)| LayerParams {
            weight: take(&w),
            bias: take(&b),
        })
        .collect();
    Ok(WeightRecord { layers })
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn save_zoo(zoo: &ModelZoo, dir: &Path) -> Result<()> {
    zoo.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut records = Vec::with_capacity(zoo.records.len());
    for r in &zoo.records {
        let file = format!("{}.pgzw", r.model.id);
        let bytes = weight_bytes(&r.model.weights);
        write(&dir.join(&file), &bytes)?;
        records.push(ManifestRecord {
            id: r.model.id.clone(),
            label: r.label,
            split: r.split,
            file,
            crc32: crc32fast::hash(&bytes),
            fit_mse: r.meta.fit_mse,
            source_index: r.meta.source_index,
            hyper: r.meta.hyper.clone(),
            spec: r.model.spec.clone(),
        });
    }
    let manifest = Manifest {
        version: FORMAT_VERSION.into(),
        task: zoo.task,
        family: zoo.family,
        seed: zoo.seed,
        classes: zoo.classes,
        excluded: zoo.excluded.clone(),
        records,
    };
    let text = toml::to_string(&manifest)
        .map_err(|e| Error::Data(format!("manifest serialization: {}", e)))?;
    write(&dir.join(MANIFEST_FILE), text.as_bytes())
}

fn read_manifest(dir: &Path) -> Result<(PathBuf, Manifest)> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::format(&path, e.message()))?;
    match table.get("version").and_then(|v| v.as_str()) {
        Some(FORMAT_VERSION) => {}
        other => {
            return Err(Error::Version {
                expected: FORMAT_VERSION.into(),
                found: other.map_or_else(|| "<missing>".into(), str::to_string),
            })
        }
    }
    let manifest: Manifest =
        toml::from_str(&text).map_err(|e| Error::format(&path, e.message()))?;
    Ok((path, manifest))
}

fn read_checked(dir: &Path, rec: &ManifestRecord) -> Result<(PathBuf, Vec<u8>)> {
    let path = dir.join(&rec.file);
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let actual = crc32fast::hash(&bytes);
    if actual != rec.crc32 {
        return Err(Error::Checksum {
            path,
            expected: rec.crc32,
            actual,
        });
    }
    Ok((path, bytes))
}

pub fn load_zoo(dir: &Path) -> Result<ModelZoo> {
    let (_, m) = read_manifest(dir)?;
    let mut records = Vec::with_capacity(m.records.len());
    for rec in m.records {
        let (path, bytes) = read_checked(dir, &rec)?;
        let weights = weights_from_bytes(&path, &bytes, &rec.spec)?;
        records.push(ZooRecord {
            model: ProbedModel::new(rec.id, rec.spec, weights)?,
            label: rec.label,
            split: rec.split,
            meta: RecordMeta {
                fit_mse: rec.fit_mse,
                source_index: rec.source_index,
                hyper: rec.hyper,
            },
        });
    }
    let zoo = ModelZoo {
        task: m.task,
        family: m.family,
        seed: m.seed,
        classes: m.classes,
        records,
        excluded: m.excluded,
    };
    zoo.validate()?;
    Ok(zoo)
}

/// Re-checks every weight file against the manifest CRCs. Returns the number of files checked.
pub fn verify_zoo(dir: &Path) -> Result<usize> {
    let (_, m) = read_manifest(dir)?;
    for rec in &m.records {
        read_checked(dir, rec)?;
    }
    Ok(m.records.len())
}
