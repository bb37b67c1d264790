//! Probe grids, INR probe renderings and per-probe class-probability tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use autodiff::DenseArray;

use probegen::experiment::Pipeline;
use probegen::models::{model_forward, ProbedModel};
use probegen::probes::{grid_layout, tile_probes, write_pnm};
use probegen::zoo::{ModelZoo, ZooRecord};
use probegen::{Error, Result};

/// Gray level of pixels no probe lands on.
pub const BACKGROUND: f32 = 0.5;

fn current_probes(p: &Pipeline) -> Result<DenseArray<f32>> {
    p.probes()?
        .map(|s| s.probes)
        .ok_or_else(|| Error::Config(format!("{} uses no probes", p.method.name())))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Nearest `(row, col)` on an `h x w` pixel-center grid spanning [-1, 1] for a coordinate `(x, y)`.
pub fn pixel_of(x: f32, y: f32, h: usize, w: usize) -> (usize, usize) {
    let cell = |v: f32, n: usize| {
        if n < 2 {
            return 0;
        }
        let t = ((v + 1.0) * 0.5 * (n - 1) as f32).round();
        t.clamp(0.0, (n - 1) as f32) as usize
    };
    (cell(y, h), cell(x, w))
}

/// Image probes become one tiled PGM/PPM; coordinate probes become a `size x size` map of their locations.
/// Returns the written image path. A `probes_normalization.csv` records each probe's min-max range.
pub fn probes(p: &Pipeline, size: usize, out: &Path) -> Result<PathBuf> {
    let probes = current_probes(p)?;
    let shape = probes.shape().to_vec();
    let mut csv = String::from("probe,min,max\n");
    let (image, ext) = if shape.len() == 4 {
        let (img, norms) = tile_probes(&probes)?;
        for (i, n) in norms.iter().enumerate() {
            let _ = writeln!(csv, "{},{},{}", i, n.min, n.max);
        }
        let ext = if shape[1] == 3 { "ppm" } else { "pgm" };
        if shape[1] != 1 && shape[1] != 3 {
            return Err(Error::Config(format!(
                "cannot render {}-channel probes",
                shape[1]
            )));
        }
        (img, ext)
    } else if shape.len() == 2 && shape[1] == 2 {
        let mut img = vec![0.0f32; size * size];
        let mut coords = String::from("probe,x,y\n");
        for i in 0..shape[0] {
            let r = probes.row(i);
            let (y, x) = pixel_of(r[0], r[1], size, size);
            img[y * size + x] = 1.0;
            let _ = writeln!(coords, "{},{},{}", i, r[0], r[1]);
        }
        write_text(&out.join("probes_coordinates.csv"), &coords)?;
        (DenseArray::new(vec![1, size, size], img)?, "pgm")
    } else {
        return Err(Error::Config(format!(
            "cannot render probes of shape {:?}",
            &shape[1..]
        )));
    };
    write_text(&out.join("probes_normalization.csv"), &csv)?;
    let path = out.join(format!("probes.{}", ext));
    write_pnm(&path, &image)?;
    Ok(path)
}

/// `(rows, cols)` of the probe grid for the pipeline's probe count.
pub fn probe_grid(p: &Pipeline) -> Result<(usize, usize)> {
    Ok(grid_layout(current_probes(p)?.shape()[0]))
}

/// `size x size` image holding the INR's prediction at each probe location and gray elsewhere.
/// Probes that round to the same pixel are averaged.
pub fn inr_probe_image(
    model: &ProbedModel,
    probes: &DenseArray<f32>,
    size: usize,
) -> Result<DenseArray<f32>> {
    if model.spec.input_shape != [2] || model.spec.output_shape.iter().product::<usize>() != 1 {
        return Err(Error::Config(format!(
            "inr-repr needs coordinate-to-intensity models, {} maps {:?} to {:?}",
            model.id, model.spec.input_shape, model.spec.output_shape
        )));
    }
    let values = model_forward(model, probes)?;
    let mut acc: BTreeMap<(usize, usize), (f64, usize)> = BTreeMap::new();
    for i in 0..probes.shape()[0] {
        let r = probes.row(i);
        let e = acc
            .entry(pixel_of(r[0], r[1], size, size))
            .or_insert((0.0, 0));
        e.0 += values.data()[i] as f64;
        e.1 += 1;
    }
    let mut img = vec![BACKGROUND; size * size];
    for ((y, x), (sum, n)) in acc {
        img[y * size + x] = (sum / n as f64) as f32;
    }
    DenseArray::new(vec![1, size, size], img).map_err(Into::into)
}

/// One PGM per model for the first `count` records, named `inr_{index}_{id}.pgm`.
pub fn inr_repr(
    p: &Pipeline,
    zoo: &ModelZoo,
    count: usize,
    size: usize,
    out: &Path,
) -> Result<Vec<PathBuf>> {
    let probes = current_probes(p)?;
    if probes.shape()[1..] != [2] {
        return Err(Error::Config("inr-repr needs coordinate probes".into()));
    }
    let mut paths = Vec::new();
    for (i, r) in zoo.records.iter().take(count).enumerate() {
        let img = inr_probe_image(&r.model, &probes, size)?;
        let path = out.join(format!("inr_{:04}_{}.pgm", i, sanitize(&r.model.id)));
        write_pnm(&path, &img)?;
        paths.push(path);
    }
    Ok(paths)
}

fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn softmax(row: &[f32]) -> Vec<f64> {
    let m = row.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v as f64));
    let e: Vec<f64> = row.iter().map(|&v| (v as f64 - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// CSV with one row per (model, probe): `id,label,probe,p0..p{C-1}` softmax probabilities,
/// ordered by label, then model id, then probe.
pub fn logit_heatmap_csv(p: &Pipeline, zoo: &ModelZoo) -> Result<String> {
    let probes = current_probes(p)?;
    let mut records: Vec<&ZooRecord> = zoo.records.iter().collect();
    records.sort_by(|a, b| {
        a.label
            .total_cmp(&b.label)
            .then_with(|| a.model.id.cmp(&b.model.id))
    });
    let classes = match records.first() {
        Some(r) => r.model.spec.output_shape.iter().product::<usize>(),
        None => 0,
    };
    if records
        .first()
        .is_some_and(|r| r.model.spec.input_shape.len() != 3 || classes < 2)
    {
        return Err(Error::Config(
            "logit-heatmap needs image classifiers".into(),
        ));
    }
    let mut text = String::from("id,label,probe");
    for c in 0..classes {
        let _ = write!(text, ",p{}", c);
    }
    text.push('\n');
    for r in records {
        let logits = model_forward(&r.model, &probes)?;
        for i in 0..probes.shape()[0] {
            let _ = write!(text, "{},{},{}", r.model.id, r.label, i);
            for v in softmax(logits.row(i)) {
                let _ = write!(text, ",{:.6}", v);
            }
            text.push('\n');
        }
    }
    Ok(text)
}

pub fn logit_heatmap(p: &Pipeline, zoo: &ModelZoo, out: &Path) -> Result<PathBuf> {
    let path = out.join("logit_heatmap.csv");
    write_text(&path, &logit_heatmap_csv(p, zoo)?)?;
    Ok(path)
}
