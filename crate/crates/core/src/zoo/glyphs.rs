//! Procedurally rendered digit-like glyphs: ten stroke templates under random affine jitter.

use autodiff::DenseArray;
use rand::Rng as _;

use super::ImageDataset;
use crate::rng::{derive, Rng};
use crate::Result;

type Stroke = Vec<(f32, f32)>;

fn ellipse(cx: f32, cy: f32, rx: f32, ry: f32, from: f32, to: f32) -> Stroke {
    let n = 20;
    (0..=n)
        .map(|i| {
            let t = from + (to - from) * i as f32 / n as f32;
            (cx + rx * t.cos(), cy + ry * t.sin())
        })
        .collect()
}

fn polyline(points: &[(f32, f32)]) -> Stroke {
    points.to_vec()
}

/// Strokes of class `c` in the unit square, y pointing down.
fn template(c: usize) -> Vec<Stroke> {
    use std::f32::consts::TAU;
    match c {
        0 => vec![ellipse(0.5, 0.5, 0.26, 0.36, 0.0, TAU)],
        1 => vec![polyline(&[(0.36, 0.28), (0.52, 0.12), (0.52, 0.88)])],
        2 => vec![polyline(&[
            (0.26, 0.3),
            (0.36, 0.15),
            (0.58, 0.12),
            (0.72, 0.26),
            (0.66, 0.45),
            (0.26, 0.88),
            (0.78, 0.88),
        ])],
        3 => vec![polyline(&[
            (0.26, 0.15),
            (0.7, 0.15),
            (0.46, 0.45),
            (0.7, 0.58),
            (0.7, 0.8),
            (0.5, 0.9),
            (0.26, 0.82),
        ])],
        4 => vec![polyline(&[
            (0.64, 0.88),
            (0.64, 0.12),
            (0.22, 0.64),
            (0.8, 0.64),
        ])],
        5 => vec![polyline(&[
            (0.72, 0.12),
            (0.32, 0.12),
            (0.28, 0.46),
            (0.6, 0.42),
            (0.74, 0.62),
            (0.62, 0.86),
            (0.26, 0.86),
        ])],
        6 => vec![
            polyline(&[(0.66, 0.12), (0.4, 0.34), (0.3, 0.66)]),
            ellipse(0.5, 0.68, 0.2, 0.2, 0.0, TAU),
        ],
        7 => vec![polyline(&[(0.22, 0.12), (0.78, 0.12), (0.42, 0.88)])],
        8 => vec![
            ellipse(0.5, 0.3, 0.17, 0.17, 0.0, TAU),
            ellipse(0.5, 0.68, 0.21, 0.2, 0.0, TAU),
        ],
        _ => vec![
            ellipse(0.5, 0.32, 0.2, 0.2, 0.0, TAU),
            polyline(&[(0.7, 0.32), (0.62, 0.88)]),
        ],
    }
}

fn segment_distance(p: (f32, f32), a: (f32, f32), b: (f32, f32)) -> f32 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (ex, ey) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    (ex * ex + ey * ey).sqrt()
}

/// Renders one `size x size` glyph of class `class` with jitter drawn from `rng`.
pub fn render_glyph(class: usize, size: usize, rng: &mut Rng) -> Vec<f32> {
    let strokes = template(class % 10);
    let angle: f32 = rng.random_range(-0.25..0.25);
    let scale: f32 = rng.random_range(0.8..1.1);
    let shear: f32 = rng.random_range(-0.2..0.2);
    let (tx, ty): (f32, f32) = (rng.random_range(-0.08..0.08), rng.random_range(-0.08..0.08));
    let thickness: f32 = rng.random_range(0.05..0.09);
    let contrast: f32 = rng.random_range(0.7..1.0);

    // forward map: p' = A (p - c) + c + t; invert per pixel
    let (cos, sin) = (angle.cos(), angle.sin());
    let a = [
        scale * cos,
        scale * (cos * shear - sin),
        scale * sin,
        scale * (sin * shear + cos),
    ];
    let det = a[0] * a[3] - a[1] * a[2];
    let inv = [a[3] / det, -a[1] / det, -a[2] / det, a[0] / det];
    let edge = 1.0 / size as f32;

    let mut out = vec![0.0f32; size * size];
    for r in 0..size {
        for c in 0..size {
            let (u, v) = (
                (c as f32 + 0.5) / size as f32,
                (r as f32 + 0.5) / size as f32,
            );
            let (du, dv) = (u - 0.5 - tx, v - 0.5 - ty);
            let p = (
                inv[0] * du + inv[1] * dv + 0.5,
                inv[2] * du + inv[3] * dv + 0.5,
            );
            let d = strokes
                .iter()
                .flat_map(|s| s.windows(2).map(move |w| segment_distance(p, w[0], w[1])))
                .fold(f32::INFINITY, f32::min);
            // one pixel of anti-aliasing around the stroke edge
            let cover = ((thickness * scale - d) / edge + 0.5).clamp(0.0, 1.0);
            out[r * size + c] = cover * contrast;
        }
    }
    out
}

/// Class-balanced glyph dataset `(n, 1, size, size)`; image `i` has class `i mod 10`.
pub fn synthetic_glyphs(n: usize, size: usize, seed: u64) -> Result<ImageDataset> {
    let mut data = Vec::with_capacity(n * size * size);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % 10;
        let mut rng = derive(seed, "glyph", i as u64);
        data.extend(render_glyph(class, size, &mut rng));
        labels.push(class);
    }
    ImageDataset::new(
        DenseArray::new(vec![n, 1, size, size], data)?,
        labels,
        format!("synthetic-glyphs:{}:{}", size, seed),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn glyphs_are_balanced_and_in_range() {
        let ds = synthetic_glyphs(40, 28, 1).unwrap();
        assert_eq!(ds.image_shape(), [1, 28, 28]);
        for c in 0..10 {
            assert_eq!(ds.labels.iter().filter(|&&l| l == c).count(), 4);
        }
        for i in 0..ds.len() {
            let ink: f32 = ds.image(i).iter().sum();
            assert!(ink > 10.0, "image {} is nearly blank", i);
        }
    }

    #[test]
    fn glyphs_are_deterministic() {
        assert_eq!(
            synthetic_glyphs(12, 8, 5).unwrap(),
            synthetic_glyphs(12, 8, 5).unwrap()
        );
        assert_ne!(
            synthetic_glyphs(12, 8, 5).unwrap(),
            synthetic_glyphs(12, 8, 6).unwrap()
        );
    }

    #[test]
    fn class_means_differ() {
        let ds = synthetic_glyphs(200, 16, 2).unwrap();
        let mean = |c: usize| -> Vec<f32> {
            let mut m = vec![0.0; 256];
            for i in (0..200).filter(|&i| ds.labels[i] == c) {
                for (a, b) in m.iter_mut().zip(ds.image(i)) {
                    *a += b / 20.0;
                }
            }
            m
        };
        let (one, zero) = (mean(1), mean(0));
        let dist: f32 = one.iter().zip(&zero).map(|(a, b)| (a - b).powi(2)).sum();
        assert!(dist > 1.0);
    }
}
