//! Netpbm grids and raw float dumps for inspecting probes.

use std::fmt::Write as _;
use std::path::Path;

use autodiff::DenseArray;

use crate::{Error, Result};

/// Per-probe min-max normalisation applied when tiling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub min: f32,
    pub max: f32,
}

/// `(rows, cols)` of the tile layout for `k` probes: `cols = ceil(sqrt(k))`.
pub fn grid_layout(k: usize) -> (usize, usize) {
    if k == 0 {
        return (0, 0);
    }
    let cols = (k as f64).sqrt().ceil() as usize;
    (k.div_ceil(cols), cols)
}

/// Tiles `(k, C, H, W)` probes into one `(C, rows*(H+1)-1, cols*(W+1)-1)` image with
/// 1-pixel black gutters. Each probe is min-max normalised to [0, 1] independently.
pub fn tile_probes(probes: &DenseArray<f32>) -> Result<(DenseArray<f32>, Vec<Normalization>)> {
    let s = probes.shape();
    if s.len() != 4 {
        return Err(Error::Data(format!(
            "expected (k, C, H, W) probes, got {:?}",
            s
        )));
    }
    let (k, c, h, w) = (s[0], s[1], s[2], s[3]);
    let (rows, cols) = grid_layout(k);
    let gh = (rows * (h + 1)).saturating_sub(1);
    let gw = (cols * (w + 1)).saturating_sub(1);
    let mut out = vec![0.0f32; c * gh * gw];
    let mut norms = Vec::with_capacity(k);
    for i in 0..k {
        let p = probes.row(i);
        let (min, max) = p
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| {
                (a.min(v), b.max(v))
            });
        norms.push(Normalization { min, max });
        let span = if max > min { max - min } else { 1.0 };
        let (r0, c0) = ((i / cols) * (h + 1), (i % cols) * (w + 1));
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let v = (p[(ch * h + y) * w + x] - min) / span;
                    out[(ch * gh + r0 + y) * gw + c0 + x] = v;
                }
            }
        }
    }
    Ok((DenseArray::new(vec![c, gh, gw], out)?, norms))
}

/// Writes a `(1, H, W)` image as plain PGM (P2) or a `(3, H, W)` image as plain PPM (P3).
/// Values are clamped to [0, 1] and scaled to 0..=255.
pub fn write_pnm(path: &Path, image: &DenseArray<f32>) -> Result<()> {
    let s = image.shape();
    if s.len() != 3 || !(s[0] == 1 || s[0] == 3) {
        return Err(Error::Data(format!(
            "netpbm needs (1|3, H, W), got {:?}",
            s
        )));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    let mut text = String::new();
    let _ = writeln!(
        text,
        "{}\n{} {}\n255",
        if c == 1 { "P2" } else { "P3" },
        w,
        h
    );
    let px = |ch: usize, y: usize, x: usize| {
        (image.data()[(ch * h + y) * w + x].clamp(0.0, 1.0) * 255.0).round() as u8
    };
    for y in 0..h {
        let row: Vec<String> = (0..w)
            .flat_map(|x| (0..c).map(move |ch| (ch, x)))
            .map(|(ch, x)| px(ch, y, x).to_string())
            .collect();
        let _ = writeln!(text, "{}", row.join(" "));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads back a plain PGM/PPM written by [`write_pnm`] as `(C, H, W)` values in [0, 1].
pub fn read_pnm(path: &Path) -> Result<DenseArray<f32>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut tok = text.split_whitespace();
    let c = match tok.next() {
        Some("P2") => 1,
        Some("P3") => 3,
        other => {
            return Err(Error::format(
                path,
                format!("unsupported netpbm magic {:?}", other),
            ))
        }
    };
    let mut num = || -> Result<usize> {
        tok.next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::format(path, "truncated netpbm data"))
    };
    let (w, h, maxval) = (num()?, num()?, num()?);
    let mut data = vec![0.0f32; c * h * w];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                data[(ch * h + y) * w + x] = num()? as f32 / maxval as f32;
            }
        }
    }
    Ok(DenseArray::new(vec![c, h, w], data)?)
}

/// Little-endian f32 dump of the array data, no header.
pub fn write_raw_f32(path: &Path, values: &DenseArray<f32>) -> Result<()> {
    let bytes: Vec<u8> = values.data().iter().flat_map(|v| v.to_le_bytes()).collect();
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
