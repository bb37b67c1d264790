//! CIFAR-10 binary batches: 1 label byte then 3072 pixel bytes (R, G, B planes of 32x32).

use std::path::Path;

use autodiff::DenseArray;

use super::ImageDataset;
use crate::{Error, Result};

const RECORD: usize = 3073;
const PLANE: usize = 32 * 32;

/// Loads and concatenates CIFAR-10 binary files. `grayscale` averages the three channels.
pub fn ingest_cifar_binary<P: AsRef<Path>>(paths: &[P], grayscale: bool) -> Result<ImageDataset> {
    let channels = if grayscale { 1 } else { 3 };
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for path in paths {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.len() % RECORD != 0 {
            return Err(Error::format(
                path,
                format!("length {} is not a multiple of {}", bytes.len(), RECORD),
            ));
        }
        for (r, rec) in bytes.chunks_exact(RECORD).enumerate() {
            if rec[0] > 9 {
                return Err(Error::format(
                    path,
                    format!("record {}: label byte {} > 9", r, rec[0]),
                ));
            }
            labels.push(rec[0] as usize);
            let px = &rec[1..];
            if grayscale {
                data.extend((0..PLANE).map(|i| {
                    (px[i] as f32 + px[PLANE + i] as f32 + px[2 * PLANE + i] as f32) / (3.0 * 255.0)
                }));
            } else {
                data.extend(px.iter().map(|&b| b as f32 / 255.0));
            }
        }
    }
    let n = labels.len();
    let images = DenseArray::new(vec![n, channels, 32, 32], data)?;
    let tag = if grayscale { "cifar10-gs" } else { "cifar10" };
    ImageDataset::new(images, labels, tag)
}
