use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{BackwardOptions, Graph, LeafKind, NodeId, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Coordinates sampled across all differentiable leaves; every coordinate
    /// is checked when there are fewer.
    pub samples: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            samples: 100,
            seed: 0,
        }
    }
}

/// Compares reverse-mode gradients against central differences.
///
/// The graph must already be bound (inputs evaluated once). Returns the max over
/// sampled coordinates of `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn check_gradients(
    graph: &mut Graph<f64>,
    loss: NodeId,
    opts: GradCheckOptions,
) -> Result<f64> {
    graph.run()?;
    let grads = graph.backward_with(loss, BackwardOptions::default())?;

    let leaves: Vec<NodeId> = [LeafKind::Param, LeafKind::Frozen, LeafKind::Input]
        .into_iter()
        .flat_map(|k| graph.nodes_of_kind(k))
        .collect();
    let sizes: Vec<usize> = leaves
        .iter()
        .map(|&id| graph.value(id).map_or(0, |v| v.len()))
        .collect();
    let total: usize = sizes.iter().sum();

    let coords: Vec<usize> = if total <= opts.samples {
        (0..total).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        (0..opts.samples)
            .map(|_| rng.random_range(0..total))
            .collect()
    };

    let mut worst = 0.0f64;
    for flat in coords {
        let (mut leaf, mut idx) = (0, flat);
        while idx >= sizes[leaf] {
            idx -= sizes[leaf];
            leaf += 1;
        }
        let id = leaves[leaf];
        let original = graph.value(id).expect("leaf bound").clone();
        let analytic = grads.get(id).map_or(0.0, |g| g.data()[idx]);

        let probe = |delta: f64, graph: &mut Graph<f64>| -> Result<f64> {
            let mut v = original.clone();
            v.data_mut()[idx] += delta;
            graph.set_value(id, v)?;
            graph.run()?;
            Ok(graph.value(loss).expect("evaluated").data()[0])
        };
        let plus = probe(opts.step, graph)?;
        let minus = probe(-opts.step, graph)?;
        graph.set_value(id, original)?;

        let numeric = (plus - minus) / (2.0 * opts.step);
        let denom = analytic.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((analytic - numeric).abs() / denom);
    }
    graph.run()?;
    Ok(worst)
}

/// One small graph per op kind, each ending in a scalar loss.
pub struct OpCase {
    pub op: &'static str,
    pub graph: Graph<f64>,
    pub loss: NodeId,
}

/// Builds a gradient-check fixture for every supported op kind.
///
/// ReLU inputs are kept at least 0.05 away from zero so central differences
/// with steps up to 5e-3 never straddle the kink.
pub fn op_suite(seed: u64) -> Result<Vec<OpCase>> {
    use crate::DenseArray;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rand = |shape: &[usize], scale: f64| {
        DenseArray::from_fn(shape, |_| rng.random_range(-scale..scale))
    };
    let mut cases = Vec::new();
    let mut finish =
        |op: &'static str, mut g: Graph<f64>, out: NodeId, target: DenseArray<f64>| -> Result<()> {
            let loss = if g.shape(out).iter().product::<usize>() == 1 && g.shape(out).len() <= 1 {
                g.reshape(out, &[])?
            } else {
                let t = g.constant("target", target.reshape(g.shape(out))?);
                g.mse(out, t)?
            };
            g.run()?;
            cases.push(OpCase { op, graph: g, loss });
            Ok(())
        };
    let target = |rand: &mut dyn FnMut(&[usize], f64) -> DenseArray<f64>, n: usize| rand(&[n], 1.0);

    // affine
    let mut g = Graph::new();
    let x = g.param("x", rand(&[3, 4], 1.0));
    let w = g.param("w", rand(&[5, 4], 1.0));
    let b = g.param("b", rand(&[5], 1.0));
    let y = g.affine(x, w, b)?;
    finish("affine", g, y, target(&mut rand, 15))?;

    // conv2d
    let mut g = Graph::new();
    let x = g.param("x", rand(&[2, 2, 5, 5], 1.0));
    let w = g.param("w", rand(&[3, 2, 3, 3], 1.0));
    let b = g.param("b", rand(&[3], 1.0));
    let y = g.conv2d(x, w, b, 2, 1)?;
    let n = g.shape(y).iter().product();
    finish("conv2d", g, y, target(&mut rand, n))?;

    // conv_transpose2d
    let mut g = Graph::new();
    let x = g.param("x", rand(&[2, 3, 2, 2], 1.0));
    let w = g.param("w", rand(&[3, 2, 4, 4], 1.0));
    let b = g.param("b", rand(&[2], 1.0));
    let y = g.conv_transpose2d(x, w, b, 2, 1)?;
    let n = g.shape(y).iter().product();
    finish("conv_transpose2d", g, y, target(&mut rand, n))?;

    // sin
    let mut g = Graph::new();
    let x = g.param("x", rand(&[4, 3], 1.0));
    let y = g.sin(x, 3.0)?;
    finish("sin", g, y, target(&mut rand, 12))?;

    // relu
    let mut g = Graph::new();
    let xv = rand(&[4, 3], 1.0).map(|v| {
        if v.abs() < 0.05 {
            v.signum() * 0.05 + v
        } else {
            v
        }
    });
    let x = g.param("x", xv);
    let y = g.relu(x)?;
    finish("relu", g, y, target(&mut rand, 12))?;

    // reshape
    let mut g = Graph::new();
    let x = g.param("x", rand(&[2, 6], 1.0));
    let y = g.reshape(x, &[3, 4])?;
    finish("reshape", g, y, target(&mut rand, 12))?;

    // concat
    let mut g = Graph::new();
    let a = g.param("a", rand(&[2, 3, 2], 1.0));
    let c = g.param("c", rand(&[2, 1, 2], 1.0));
    let y = g.concat(&[a, c], 1)?;
    finish("concat", g, y, target(&mut rand, 16))?;

    // softmax
    let mut g = Graph::new();
    let x = g.param("x", rand(&[3, 5], 2.0));
    let y = g.softmax(x)?;
    finish("softmax", g, y, target(&mut rand, 15))?;

    // softmax_cross_entropy
    let mut g = Graph::new();
    let x = g.param("x", rand(&[4, 5], 2.0));
    let y = g.softmax_cross_entropy(x, &[0, 3, 4, 1])?;
    finish("softmax_cross_entropy", g, y, target(&mut rand, 1))?;

    // mse
    let mut g = Graph::new();
    let p = g.param("p", rand(&[3, 3], 1.0));
    let t = g.param("t", rand(&[3, 3], 1.0));
    let y = g.mse(p, t)?;
    finish("mse", g, y, target(&mut rand, 1))?;

    // mean_axis
    let mut g = Graph::new();
    let x = g.param("x", rand(&[2, 3, 4], 1.0));
    let y = g.mean_axis(x, 1)?;
    finish("mean_axis", g, y, target(&mut rand, 8))?;

    // softmax_entropy
    let mut g = Graph::new();
    let x = g.param("x", rand(&[3, 6], 2.0));
    let y = g.softmax_entropy(x)?;
    finish("softmax_entropy", g, y, target(&mut rand, 3))?;

    Ok(cases)
}
