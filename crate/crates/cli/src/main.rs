use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use probegen::experiment::{
    load_checkpoint, pipeline_flops, run_ablation_suite, save_checkpoint, train_on_zoo,
    write_ablation_csv, MetricKind, Pipeline,
};
use probegen::zoo::{generate_zoo, load_zoo, save_zoo, verify_zoo, ModelZoo, Split};
use probegen::Error;
use probegen_cli::config::{parse_kind, parse_name};
use probegen_cli::{visualize, AxisName, CliConfig};

#[derive(Parser)]
#[command(
    name = "probegen",
    version,
    about = "Probing-based weight-space learning"
)]
struct Cli {
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate, summarize or verify a model zoo.
    #[command(subcommand)]
    Zoo(ZooCommand),
    /// Train a pipeline; writes report.toml, report.csv and a checkpoint.
    Train(ExperimentFlags),
    /// Render probes, INR probe responses or per-probe class probabilities.
    Visualize(VisualizeArgs),
    /// Analytic FLOP counts for the configured pipeline.
    Flops(ExperimentFlags),
    /// Sweep probe count, generator depth or generator kind over several seeds.
    Ablate(AblateArgs),
}

#[derive(Subcommand)]
enum ZooCommand {
    /// Build a zoo into --out.
    Generate(GenerateFlags),
    /// Print counts and the label distribution.
    Stats { zoo: PathBuf },
    /// Re-check every weight file against its checksum.
    Verify { zoo: PathBuf },
}

#[derive(Args)]
struct GenerateFlags {
    /// inr or cnn.
    #[arg(long)]
    family: Option<String>,
    #[arg(long)]
    count: Option<usize>,
    /// INR fitting steps.
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Args)]
struct ExperimentFlags {
    #[arg(long)]
    zoo: Option<PathBuf>,
    /// probegen, vanilla, synthetic-uniform, synthetic-dead-leaves, statnn or entropy-only.
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    probes: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    generator_kind: Option<String>,
    #[arg(long)]
    generator_depth: Option<usize>,
    /// f32 or f64.
    #[arg(long)]
    precision: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum VisualKind {
    Probes,
    InrRepr,
    LogitHeatmap,
}

#[derive(Args)]
struct VisualizeArgs {
    #[arg(value_enum)]
    kind: VisualKind,
    /// Directory holding a training checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Zoo to render; defaults to the configured experiment zoo.
    #[arg(long)]
    zoo: Option<PathBuf>,
    /// Models rendered by inr-repr.
    #[arg(long, default_value_t = 8)]
    models: usize,
    /// Side of coordinate-probe images.
    #[arg(long, default_value_t = 28)]
    size: usize,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    experiment: ExperimentFlags,
    /// probe-count, generator-depth or generator-kind.
    #[arg(long)]
    axis: Option<String>,
    /// Comma-separated axis values.
    #[arg(long, value_delimiter = ',')]
    values: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
}

fn load_config(cli: &Cli) -> probegen::Result<CliConfig> {
    let mut cfg = match &cli.config {
        Some(p) => CliConfig::load(p)?,
        None => CliConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    cfg.sync_seed();
    Ok(cfg)
}

fn apply_flags(cfg: &mut CliConfig, f: &ExperimentFlags) -> probegen::Result<()> {
    let e = &mut cfg.experiment;
    if let Some(z) = &f.zoo {
        e.zoo = z.clone();
    }
    if let Some(m) = &f.method {
        e.method = parse_name(m, "method")?;
    }
    if let Some(k) = f.probes {
        e.probes = k;
    }
    if let Some(n) = f.epochs {
        e.epochs = n;
    }
    if let Some(lr) = f.lr {
        e.lr = lr;
    }
    if let Some(b) = f.batch_size {
        e.batch_size = b;
    }
    if let Some(p) = &f.precision {
        e.precision = parse_name(p, "precision")?;
    }
    if f.generator_kind.is_some() || f.generator_depth.is_some() {
        let mut g = e.generator.clone().unwrap_or_default();
        if let Some(k) = &f.generator_kind {
            g.kind = parse_kind(k)?;
        }
        if let Some(d) = f.generator_depth {
            g.depth = d;
        }
        e.generator = Some(g);
    }
    e.validate()
}

fn load_experiment_zoo(cfg: &mut CliConfig) -> probegen::Result<ModelZoo> {
    let zoo = load_zoo(&cfg.experiment.zoo)?;
    cfg.resolve_for_zoo(&zoo)?;
    Ok(zoo)
}

fn print_stats(z: &ModelZoo) {
    println!("family: {:?}", z.family);
    println!("task: {:?}", z.task);
    println!("count: {}", z.len());
    for s in [Split::Train, Split::Validation, Split::Test] {
        println!("{:?}: {}", s, z.split(s).len());
    }
    println!("excluded: {}", z.excluded.len());
    println!("labels: {}", z.label_summary());
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{:.4}", x))
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli)?;
    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match cli.command {
        Command::Zoo(ZooCommand::Generate(f)) => {
            if let Some(fam) = &f.family {
                cfg.generate.family = parse_name(fam, "zoo family")?;
            }
            if let Some(c) = f.count {
                cfg.generate.count = c;
            }
            if let Some(s) = f.steps {
                cfg.generate.inr.steps = s;
            }
            let zoo = generate_zoo(&cfg.generate)?;
            save_zoo(&zoo, &cfg.out)?;
            cfg.write_resolved(&cfg.out)?;
            println!(
                "wrote {} models ({} excluded) to {}; {}",
                zoo.len(),
                zoo.excluded.len(),
                cfg.out.display(),
                zoo.label_summary()
            );
        }
        Command::Zoo(ZooCommand::Stats { zoo }) => print_stats(&load_zoo(&zoo)?),
        Command::Zoo(ZooCommand::Verify { zoo }) => {
            let n = verify_zoo(&zoo)?;
            println!("ok: {} weight files match their checksums", n);
        }
        Command::Train(f) => {
            apply_flags(&mut cfg, &f)?;
            let zoo = load_experiment_zoo(&mut cfg)?;
            let outcome = train_on_zoo(&cfg.experiment, &zoo)?;
            outcome.report.write(&cfg.out)?;
            save_checkpoint(&outcome.pipeline, &cfg.out)?;
            cfg.write_resolved(&cfg.out)?;
            let metric = match outcome.report.metric {
                MetricKind::Accuracy => "accuracy",
                MetricKind::KendallTau => "kendall tau",
            };
            println!(
                "{}: test {} {}, generalization gap {}; wrote {}",
                cfg.experiment.method.name(),
                metric,
                fmt_opt(outcome.report.test_metric),
                fmt_opt(outcome.report.generalization_gap),
                cfg.out.display()
            );
        }
        Command::Flops(f) => {
            apply_flags(&mut cfg, &f)?;
            let zoo = load_experiment_zoo(&mut cfg)?;
            let first = &zoo.records[0];
            let spec = &first.model.spec;
            let pipeline = Pipeline::init(
                &cfg.experiment,
                zoo.task,
                zoo.classes,
                &spec.input_shape,
                spec.output_shape.iter().product(),
                first.model.weights.layers.len(),
            )?;
            let report = pipeline_flops(&cfg.experiment, &pipeline, spec)?;
            let text = toml::to_string(&report).context("serializing the FLOPs report")?;
            std::fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
            let path = cfg.out.join("flops.toml");
            std::fs::write(&path, &text).map_err(|e| Error::io(&path, e))?;
            cfg.write_resolved(&cfg.out)?;
            print!("{}", text);
        }
        Command::Ablate(a) => {
            apply_flags(&mut cfg, &a.experiment)?;
            if let Some(axis) = &a.axis {
                cfg.ablation.axis = parse_name::<AxisName>(axis, "ablation axis")?;
            }
            if !a.values.is_empty() {
                cfg.ablation.values = a.values.clone();
            }
            if !a.seeds.is_empty() {
                cfg.ablation.seeds = a.seeds.clone();
            }
            let axis = cfg.ablation.axis()?;
            let zoo = load_zoo(&cfg.experiment.zoo)?;
            let cells = run_ablation_suite(&cfg.experiment, &zoo, &axis, &cfg.ablation.seeds)?;
            std::fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
            let path = cfg.out.join("ablation.csv");
            write_ablation_csv(&path, &axis, &cells)?;
            cfg.write_resolved(&cfg.out)?;
            let failed = cells.iter().filter(|c| c.outcome.is_err()).count();
            println!(
                "{} cells, {} failed; wrote {}",
                cells.len(),
                failed,
                path.display()
            );
        }
        Command::Visualize(v) => {
            if let Some(z) = &v.zoo {
                cfg.experiment.zoo = z.clone();
            }
            let pipeline = load_checkpoint(&v.checkpoint)?;
            std::fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
            match v.kind {
                VisualKind::Probes => {
                    let path = visualize::probes(&pipeline, v.size, &cfg.out)?;
                    println!("wrote {}", path.display());
                }
                VisualKind::InrRepr => {
                    let zoo = load_zoo(&cfg.experiment.zoo)?;
                    let paths = visualize::inr_repr(&pipeline, &zoo, v.models, v.size, &cfg.out)?;
                    println!("wrote {} images to {}", paths.len(), cfg.out.display());
                }
                VisualKind::LogitHeatmap => {
                    let zoo = load_zoo(&cfg.experiment.zoo)?;
                    let path = visualize::logit_heatmap(&pipeline, &zoo, &cfg.out)?;
                    println!("wrote {}", path.display());
                }
            }
            cfg.write_resolved(&cfg.out)?;
        }
    }
    Ok(())
}

/// 2 config, 3 data or format, 4 numeric; anything else counts as a data error.
fn exit_code(e: &anyhow::Error) -> u8 {
    e.chain()
        .find_map(|c| c.downcast_ref::<Error>())
        .map_or(3, |pe| pe.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e);
            ExitCode::from(exit_code(&e))
        }
    }
}
