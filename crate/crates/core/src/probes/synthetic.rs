//! Unlearned probes: uniform coordinates and dead-leaves images.

use autodiff::DenseArray;
use rand::Rng as _;

use crate::rng::{derive_seed, seeded, Rng};

/// `k` points uniform on [-1, 1]^2, shape `(k, 2)`.
pub fn synthetic_uniform_coords(k: usize, seed: u64) -> DenseArray<f32> {
    let mut rng = seeded(seed);
    DenseArray::from_fn(&[k, 2], |_| rng.random_range(-1.0f32..=1.0))
}

/// One dead-leaves image and the number of discs it took to cover it.
#[derive(Debug, Clone, PartialEq)]
pub struct DeadLeaves {
    /// `(channels, h, w)` in [0, 1].
    pub image: DenseArray<f32>,
    pub discs: usize,
}

/// Radius with density proportional to r^-3 on `[r_min, r_max]`, by inverting the CDF.
pub fn sample_radius(r_min: f64, r_max: f64, rng: &mut Rng) -> f64 {
    let (a, b) = (r_min.powi(-2), r_max.powi(-2));
    let u: f64 = rng.random();
    (a - u * (a - b)).powf(-0.5)
}

/// Stamps opaque discs until every pixel is covered. Later discs only paint
/// pixels that are still empty, so the first disc ends up on top.
pub fn dead_leaves_image(h: usize, w: usize, channels: usize, seed: u64) -> DeadLeaves {
    let mut rng = seeded(seed);
    let side = h.min(w) as f64;
    let (r_min, r_max) = (0.03 * side, 0.5 * side);
    let mut covered = vec![false; h * w];
    let mut image = vec![0.0f32; channels * h * w];
    let mut remaining = h * w;
    let mut discs = 0;
    while remaining > 0 {
        let r = sample_radius(r_min, r_max, &mut rng);
        let cx = rng.random_range(0.0..w as f64);
        let cy = rng.random_range(0.0..h as f64);
        let color: Vec<f32> = (0..channels)
            .map(|_| rng.random_range(0.0f32..=1.0))
            .collect();
        discs += 1;
        let (y0, y1) = (
            (cy - r).floor().max(0.0) as usize,
            ((cy + r).ceil() as usize).min(h),
        );
        let (x0, x1) = (
            (cx - r).floor().max(0.0) as usize,
            ((cx + r).ceil() as usize).min(w),
        );
        for y in y0..y1 {
            for x in x0..x1 {
                let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                let p = y * w + x;
                if covered[p] || dx * dx + dy * dy > r * r {
                    continue;
                }
                covered[p] = true;
                remaining -= 1;
                for (c, &v) in color.iter().enumerate() {
                    image[c * h * w + p] = v;
                }
            }
        }
    }
    DeadLeaves {
        image: DenseArray::new(vec![channels, h, w], image).expect("sizes agree"),
        discs,
    }
}

/// `k` dead-leaves images stacked as `(k, C, H, W)`; image `i` uses its own derived seed.
pub fn dead_leaves_probes(k: usize, shape: [usize; 3], seed: u64) -> DenseArray<f32> {
    let [c, h, w] = shape;
    let mut data = Vec::with_capacity(k * c * h * w);
    for i in 0..k {
        let s = derive_seed(seed, "dead-leaves", i as u64);
        data.extend_from_slice(dead_leaves_image(h, w, c, s).image.data());
    }
    DenseArray::new(vec![k, c, h, w], data).expect("sizes agree")
}
