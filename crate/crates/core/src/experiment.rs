//! End-to-end training and evaluation of probing pipelines and baselines.

mod ablation;
mod checkpoint;
mod config;
mod flops;
mod metrics;
mod pipeline;
mod report;

pub use ablation::{
    ablation_csv, ablation_points, run_ablation_suite, write_ablation_csv, AblationAxis,
    AblationCell, AblationPoint, DEFAULT_SEEDS, SWEEP_KINDS,
};
pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_FILE, TENSOR_FILE};
pub use config::{default_generator, ExperimentConfig, Method, Precision};
pub use flops::{
    affine_flops, conv_flops, conv_transpose_flops, flops_breakdown, generator_forward_flops,
    mlp_forward_flops, model_forward_flops, FlopsBreakdown, FlopsReport, CONVENTION,
};
pub use metrics::{accuracy, argmax, generalization_gap, kendall_tau, MetricKind};
pub use pipeline::{
    metric_kind, pipeline_flops, pipeline_gradients, pipeline_graph, score, train_on_zoo,
    train_pipeline, Pipeline, StepOutput, TrainOutcome,
};
pub use report::{EpochRecord, MetricReport};
