#![allow(dead_code)]

use autodiff::{DenseArray, Graph, NodeId, Scalar};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform<T: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> DenseArray<T> {
    DenseArray::from_fn(shape, |_| T::of(rng.random_range(-scale..scale)))
}

/// Reduces any node to a scalar loss against a fixed random target.
pub fn to_loss<T: Scalar>(g: &mut Graph<T>, node: NodeId, rng: &mut ChaCha8Rng) -> NodeId {
    let shape = g.shape(node).to_vec();
    let target = g.constant("target", uniform(rng, &shape, 1.0));
    g.mse(node, target).unwrap()
}

/// Direct scatter-add transposed convolution for a single image.
pub fn conv_t_oracle(
    x: &[f64],
    (cin, h, w): (usize, usize, usize),
    weight: &[f64],
    (cout, k): (usize, usize),
    bias: &[f64],
    stride: usize,
    pad: usize,
) -> (Vec<f64>, usize, usize) {
    let oh = (h - 1) * stride + k - 2 * pad;
    let ow = (w - 1) * stride + k - 2 * pad;
    let mut out = vec![0.0; cout * oh * ow];
    for co in 0..cout {
        for v in &mut out[co * oh * ow..(co + 1) * oh * ow] {
            *v = bias[co];
        }
    }
    for ci in 0..cin {
        for i in 0..h {
            for j in 0..w {
                let xv = x[(ci * h + i) * w + j];
                for co in 0..cout {
                    for ki in 0..k {
                        for kj in 0..k {
                            let oi = (i * stride + ki) as isize - pad as isize;
                            let oj = (j * stride + kj) as isize - pad as isize;
                            if oi < 0 || oj < 0 || oi >= oh as isize || oj >= ow as isize {
                                continue;
                            }
                            let wv = weight[((ci * cout + co) * k + ki) * k + kj];
                            out[(co * oh + oi as usize) * ow + oj as usize] += xv * wv;
                        }
                    }
                }
            }
        }
    }
    (out, oh, ow)
}

/// Direct nested-loop convolution for a single image.
pub fn conv_oracle(
    x: &[f64],
    (cin, h, w): (usize, usize, usize),
    weight: &[f64],
    (cout, k): (usize, usize),
    bias: &[f64],
    stride: usize,
    pad: usize,
) -> (Vec<f64>, usize, usize) {
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (w + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; cout * oh * ow];
    for co in 0..cout {
        for oi in 0..oh {
            for oj in 0..ow {
                let mut acc = bias[co];
                for ci in 0..cin {
                    for ki in 0..k {
                        for kj in 0..k {
                            let ii = (oi * stride + ki) as isize - pad as isize;
                            let jj = (oj * stride + kj) as isize - pad as isize;
                            if ii < 0 || jj < 0 || ii >= h as isize || jj >= w as isize {
                                continue;
                            }
                            acc += x[(ci * h + ii as usize) * w + jj as usize]
                                * weight[((co * cin + ci) * k + ki) * k + kj];
                        }
                    }
                }
                out[(co * oh + oi) * ow + oj] = acc;
            }
        }
    }
    (out, oh, ow)
}
