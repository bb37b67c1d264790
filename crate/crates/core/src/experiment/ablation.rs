//! Sweeps over probe count, generator depth and generator kind.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::pipeline::train_on_zoo;
use super::report::MetricReport;
use crate::probes::{GeneratorConfig, GeneratorKind};
use crate::zoo::ModelZoo;
use crate::{Error, Result};

pub const DEFAULT_SEEDS: [u64; 3] = [0, 1, 2];
pub const SWEEP_KINDS: [GeneratorKind; 3] = [
    GeneratorKind::ConvLinear,
    GeneratorKind::FcLinear,
    GeneratorKind::ConvNonlinear,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "axis", content = "values")]
pub enum AblationAxis {
    ProbeCount(Vec<usize>),
    /// Every depth for each sweep kind; depths below 2 are one shared cell.
    GeneratorDepth(Vec<usize>),
    GeneratorKind(Vec<GeneratorKind>),
}

impl AblationAxis {
    pub fn name(&self) -> &'static str {
        match self {
            AblationAxis::ProbeCount(_) => "probe-count",
            AblationAxis::GeneratorDepth(_) => "generator-depth",
            AblationAxis::GeneratorKind(_) => "generator-kind",
        }
    }
}

/// One configuration of the sweep, before seeds are applied.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationPoint {
    pub value: String,
    pub config: ExperimentConfig,
}

fn kind_name(k: GeneratorKind) -> String {
    match k {
        GeneratorKind::Identity => "identity",
        GeneratorKind::FcLinear => "fc-linear",
        GeneratorKind::FcNonlinear => "fc-nonlinear",
        GeneratorKind::ConvLinear => "conv-linear",
        GeneratorKind::ConvNonlinear => "conv-nonlinear",
    }
    .to_string()
}

/// Expands the axis into distinct configurations. `input_shape` fills in the default generator.
pub fn ablation_points(
    base: &ExperimentConfig,
    axis: &AblationAxis,
    input_shape: &[usize],
) -> Result<Vec<AblationPoint>> {
    let generator = || {
        base.generator
            .clone()
            .unwrap_or_else(|| super::config::default_generator(input_shape))
    };
    let with_gen = |g: GeneratorConfig| ExperimentConfig {
        generator: Some(g),
        ..base.clone()
    };
    let mut points = Vec::new();
    match axis {
        AblationAxis::ProbeCount(ks) => {
            for &k in ks {
                if k == 0 {
                    return Err(Error::Config("probe counts must be positive".into()));
                }
                points.push(AblationPoint {
                    value: k.to_string(),
                    config: ExperimentConfig {
                        probes: k,
                        ..base.clone()
                    },
                });
            }
        }
        AblationAxis::GeneratorKind(kinds) => {
            for &kind in kinds {
                points.push(AblationPoint {
                    value: kind_name(kind),
                    config: with_gen(GeneratorConfig {
                        kind,
                        ..generator()
                    }),
                });
            }
        }
        AblationAxis::GeneratorDepth(depths) => {
            let mut shallow_done = false;
            for &depth in depths {
                if depth == 0 {
                    return Err(Error::Config("generator depth must be positive".into()));
                }
                if depth < 2 {
                    // a single layer has no activations between stages: every kind is one affine map
                    if !shallow_done {
                        points.push(AblationPoint {
                            value: format!("any@{}", depth),
                            config: with_gen(GeneratorConfig {
                                kind: GeneratorKind::FcLinear,
                                depth,
                                ..generator()
                            }),
                        });
                        shallow_done = true;
                    }
                    continue;
                }
                for kind in SWEEP_KINDS {
                    points.push(AblationPoint {
                        value: format!("{}@{}", kind_name(kind), depth),
                        config: with_gen(GeneratorConfig {
                            kind,
                            depth,
                            ..generator()
                        }),
                    });
                }
            }
        }
    }
    Ok(points)
}

#[derive(Debug, Clone)]
pub struct AblationCell {
    pub value: String,
    pub seed: u64,
    pub outcome: std::result::Result<MetricReport, String>,
}

/// One training run per (point, seed); failed cells are kept with their error.
pub fn run_ablation_suite(
    base: &ExperimentConfig,
    zoo: &ModelZoo,
    axis: &AblationAxis,
    seeds: &[u64],
) -> Result<Vec<AblationCell>> {
    let input_shape = base.check_zoo(zoo)?;
    let points = ablation_points(base, axis, &input_shape)?;
    let jobs: Vec<(AblationPoint, u64)> = points
        .iter()
        .flat_map(|p| seeds.iter().map(move |&s| (p.clone(), s)))
        .collect();
    Ok(jobs
        .into_par_iter()
        .map(|(p, seed)| {
            let cfg = ExperimentConfig { seed, ..p.config };
            AblationCell {
                value: p.value,
                seed,
                outcome: train_on_zoo(&cfg, zoo)
                    .map(|o| o.report)
                    .map_err(|e| e.to_string()),
            }
        })
        .collect())
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Per-cell rows followed by one mean/std row per axis value.
pub fn ablation_csv(axis: &AblationAxis, cells: &[AblationCell]) -> String {
    let mut out = String::from("row,axis,value,seed,metric,metric_std,gap,gap_std,flops,status\n");
    let mut values: Vec<&str> = Vec::new();
    for c in cells {
        if !values.contains(&c.value.as_str()) {
            values.push(&c.value);
        }
        match &c.outcome {
            Ok(r) => out.push_str(&format!(
                "cell,{},{},{},{},,{},,{},ok\n",
                axis.name(),
                c.value,
                c.seed,
                cell(r.test_metric),
                cell(r.generalization_gap),
                r.flops.training_step
            )),
            Err(e) => out.push_str(&format!(
                "cell,{},{},{},,,,,,\"failed: {}\"\n",
                axis.name(),
                c.value,
                c.seed,
                e.replace('"', "'")
            )),
        }
    }
    for v in values {
        let ok: Vec<&MetricReport> = cells
            .iter()
            .filter(|c| c.value == v)
            .filter_map(|c| c.outcome.as_ref().ok())
            .collect();
        let metrics: Vec<f64> = ok.iter().filter_map(|r| r.test_metric).collect();
        let gaps: Vec<f64> = ok.iter().filter_map(|r| r.generalization_gap).collect();
        if metrics.is_empty() {
            out.push_str(&format!(
                "mean,{},{},,,,,,,no successful cells\n",
                axis.name(),
                v
            ));
            continue;
        }
        let (m, ms) = mean_std(&metrics);
        let (g, gs) = if gaps.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            mean_std(&gaps)
        };
        let fmt = |x: f64| {
            if x.is_finite() {
                x.to_string()
            } else {
                String::new()
            }
        };
        out.push_str(&format!(
            "mean,{},{},,{},{},{},{},{},{} of {} ok\n",
            axis.name(),
            v,
            m,
            ms,
            fmt(g),
            fmt(gs),
            ok[0].flops.training_step,
            ok.len(),
            cells.iter().filter(|c| c.value == v).count()
        ));
    }
    out
}

pub fn write_ablation_csv(path: &Path, axis: &AblationAxis, cells: &[AblationCell]) -> Result<()> {
    std::fs::write(path, ablation_csv(axis, cells)).map_err(|e| Error::io(path, e))
}
