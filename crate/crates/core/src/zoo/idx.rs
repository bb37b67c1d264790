//! Big-endian IDX files (MNIST, Fashion-MNIST).

use std::path::Path;

use autodiff::DenseArray;

use super::ImageDataset;
use crate::{Error, Result};

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn header(path: &Path, bytes: &[u8], magic: u32, dims: usize) -> Result<Vec<usize>> {
    let need = 4 + 4 * dims;
    if bytes.len() < need {
        return Err(Error::format(
            path,
            format!("truncated header: {} bytes", bytes.len()),
        ));
    }
    let word = |i: usize| u32::from_be_bytes(bytes[i..i + 4].try_into().unwrap());
    if word(0) != magic {
        return Err(Error::format(
            path,
            format!("magic {:#010x}, expected {:#010x}", word(0), magic),
        ));
    }
    Ok((0..dims).map(|d| word(4 + 4 * d) as usize).collect())
}

/// Parses an IDX image/label pair into an `(N, 1, H, W)` dataset scaled by 1/255.
pub fn ingest_idx(images_path: &Path, labels_path: &Path) -> Result<ImageDataset> {
    let ib = read(images_path)?;
    let lb = read(labels_path)?;
    let dims = header(images_path, &ib, IMAGE_MAGIC, 3)?;
    let ldims = header(labels_path, &lb, LABEL_MAGIC, 1)?;
    let (n, h, w) = (dims[0], dims[1], dims[2]);
    if ldims[0] != n {
        return Err(Error::Data(format!(
            "{} declares {} images but {} declares {} labels",
            images_path.display(),
            n,
            labels_path.display(),
            ldims[0]
        )));
    }
    let pixels = &ib[16..];
    if pixels.len() != n * h * w {
        return Err(Error::format(
            images_path,
            format!("expected {} pixel bytes, found {}", n * h * w, pixels.len()),
        ));
    }
    let labels = &lb[8..];
    if labels.len() != n {
        return Err(Error::format(
            labels_path,
            format!("expected {} label bytes, found {}", n, labels.len()),
        ));
    }
    let images = DenseArray::new(
        vec![n, 1, h, w],
        pixels.iter().map(|&b| b as f32 / 255.0).collect(),
    )?;
    ImageDataset::new(
        images,
        labels.iter().map(|&l| l as usize).collect(),
        format!("idx:{}", images_path.display()),
    )
}
