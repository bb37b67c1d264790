//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion.
//!
//! `ACCEPTANCE_ONLY=1,4,9` runs a subset. Desk zoos are cached under the cargo
//! target tmpdir and rebuilt only when missing or unreadable.

use std::collections::HashMap;
use std::path::PathBuf;
use std::process::Command;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use autodiff::{check_gradients, op_suite, DenseArray, GradCheckOptions};
use probegen::experiment::{
    pipeline_flops, pipeline_graph, train_on_zoo, ExperimentConfig, Method, MetricReport, Pipeline,
};
use probegen::models::{
    init_he, init_inr, permute_hidden_neurons, ArchitectureSpec, LayerParams, ProbedModel,
};
use probegen::predictors::{probe_representation, statnn_features};
use probegen::probes::{
    linearity_residual, Generator, GeneratorConfig, GeneratorKind, ProbeSet, ProbeSource, Stage,
};
use probegen::rng::seeded;
use probegen::zoo::{
    assign_splits, generate_zoo, load_zoo, save_zoo, verify_zoo, DataSource, Family, InrFitConfig,
    ModelZoo, RecordMeta, ZooGenConfig, ZooRecord,
};
use probegen::Error;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;

type Check = Result<(bool, String), String>;

const SEEDS: [u64; 3] = [0, 1, 2];

fn scratch() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance")
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn fmt(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{:.4}", x)).collect();
    format!("[{}]", parts.join(", "))
}

// ---------------------------------------------------------------- desk zoos

fn cached_zoo(name: &str, cfg: &ZooGenConfig) -> Result<ModelZoo, String> {
    let dir = scratch().join(name);
    if let Ok(z) = load_zoo(&dir) {
        return Ok(z);
    }
    let t0 = Instant::now();
    let zoo = generate_zoo(cfg).map_err(err)?;
    save_zoo(&zoo, &dir).map_err(err)?;
    eprintln!(
        "built {} in {:.0?}: {} models, {}",
        name,
        t0.elapsed(),
        zoo.len(),
        zoo.label_summary()
    );
    Ok(zoo)
}

/// 2000 sine INRs fitted to rendered 28x28 digit glyphs, 10 classes.
fn inr_desk_zoo() -> Result<&'static ModelZoo, String> {
    static ZOO: Mutex<Option<&'static ModelZoo>> = Mutex::new(None);
    let mut slot = ZOO.lock().unwrap();
    if slot.is_none() {
        let cfg = ZooGenConfig {
            family: Family::Inr,
            count: 2000,
            seed: 1,
            source: DataSource::SyntheticGlyphs { size: Some(28) },
            inr: InrFitConfig {
                steps: 200,
                ..Default::default()
            },
            ..Default::default()
        };
        *slot = Some(Box::leak(Box::new(cached_zoo("inr-2000", &cfg)?)));
    }
    Ok(slot.unwrap())
}

/// 300 small CNNs trained on 8x8 glyphs with sampled recipes; label is held-out accuracy.
fn cnn_desk_zoo() -> Result<&'static ModelZoo, String> {
    static ZOO: Mutex<Option<&'static ModelZoo>> = Mutex::new(None);
    let mut slot = ZOO.lock().unwrap();
    if slot.is_none() {
        let cfg = ZooGenConfig {
            family: Family::Cnn,
            count: 300,
            seed: 2,
            source: DataSource::SyntheticGlyphs { size: Some(8) },
            train_images: 2000,
            test_images: 500,
            ..Default::default()
        };
        *slot = Some(Box::leak(Box::new(cached_zoo("cnn-300", &cfg)?)));
    }
    Ok(slot.unwrap())
}

// ---------------------------------------------------------------- shared training runs

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
enum Variant {
    ProbeGen,
    ConvNonlinear,
    Vanilla,
    SyntheticUniform,
    EntropyOnly,
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
enum Desk {
    Inr,
    Cnn,
}

type RunCache = HashMap<(Desk, Variant, u64), (f64, f64, f64)>;

static RUNS: Mutex<Option<RunCache>> = Mutex::new(None);

fn experiment(variant: Variant, seed: u64) -> ExperimentConfig {
    let (method, generator) = match variant {
        Variant::ProbeGen => (Method::Probegen, None),
        Variant::ConvNonlinear => (
            Method::Probegen,
            Some(GeneratorConfig {
                kind: GeneratorKind::ConvNonlinear,
                depth: 3,
                output_shape: vec![1, 8, 8],
                ..Default::default()
            }),
        ),
        Variant::Vanilla => (Method::Vanilla, None),
        Variant::SyntheticUniform => (Method::SyntheticUniform, None),
        Variant::EntropyOnly => (Method::EntropyOnly, None),
    };
    ExperimentConfig {
        method,
        probes: 64,
        generator,
        epochs: 30,
        seed,
        ..Default::default()
    }
}

/// Test metric, generalization gap and wall seconds of one run, memoized across criteria.
fn run(desk: Desk, variant: Variant, seed: u64) -> Result<(f64, f64, f64), String> {
    if let Some(r) = RUNS
        .lock()
        .unwrap()
        .get_or_insert_with(HashMap::new)
        .get(&(desk, variant, seed))
    {
        return Ok(*r);
    }
    let zoo = match desk {
        Desk::Inr => inr_desk_zoo()?,
        Desk::Cnn => cnn_desk_zoo()?,
    };
    let t0 = Instant::now();
    let report: MetricReport = train_on_zoo(&experiment(variant, seed), zoo)
        .map_err(err)?
        .report;
    let secs = t0.elapsed().as_secs_f64();
    let m = report.test_metric.ok_or("no test metric")?;
    let gap = report.generalization_gap.ok_or("no generalization gap")?;
    eprintln!(
        "  {:?} {:?} seed {}: test {:.4} gap {:.4} ({:.0}s)",
        desk, variant, seed, m, gap, secs
    );
    let v = (m, gap, secs);
    RUNS.lock()
        .unwrap()
        .get_or_insert_with(HashMap::new)
        .insert((desk, variant, seed), v);
    Ok(v)
}

struct Series {
    metric: Vec<f64>,
    gap: Vec<f64>,
    secs: f64,
}

fn series(desk: Desk, variant: Variant) -> Result<Series, String> {
    let mut s = Series {
        metric: vec![],
        gap: vec![],
        secs: 0.0,
    };
    for seed in SEEDS {
        let (m, g, t) = run(desk, variant, seed)?;
        s.metric.push(m);
        s.gap.push(g);
        s.secs += t;
    }
    Ok(s)
}

// ---------------------------------------------------------------- 1: permutation invariance

fn random_models(seed: u64) -> Vec<ProbedModel> {
    let mut rng = seeded(seed);
    let mut out = Vec::new();
    for i in 0..10 {
        let spec = ArchitectureSpec::inr(16 + 8 * (i % 3), 2 + i % 2, 30.0);
        let w = init_inr(&spec, &mut rng);
        out.push(ProbedModel::new(format!("inr{}", i), spec, w).unwrap());
    }
    for i in 0..10 {
        let channels: Vec<usize> = (0..2 + i % 2)
            .map(|_| *[4, 6, 8].choose(&mut rng).unwrap())
            .collect();
        let spec = ArchitectureSpec::cnn(&channels, [1, 8, 8], 10);
        let w = init_he(&spec, rng.random_range(0.5..2.0), &mut rng);
        out.push(ProbedModel::new(format!("cnn{}", i), spec, w).unwrap());
    }
    out
}

fn criterion_1() -> Check {
    let mut rng = seeded(101);
    let mut worst = 0.0f64;
    let mut stat_mismatch = 0;
    let mut checks = 0;
    for m in random_models(100) {
        let shape: Vec<usize> = std::iter::once(16)
            .chain(m.spec.input_shape.iter().copied())
            .collect();
        let lo = if shape.len() == 4 { 0.0 } else { -1.0 };
        let probes = ProbeSet {
            probes: DenseArray::from_fn(&shape, |_| rng.random_range(lo..1.0)),
            source: ProbeSource::SyntheticUniform,
        };
        let base = probe_representation(&m, &probes).map_err(err)?.features;
        let base_stats = statnn_features(&m).map_err(err)?.features;
        let hidden = m.weights.layers.len() - 1;
        for _ in 0..10 {
            let layer = rng.random_range(0..hidden);
            let mut perm: Vec<usize> = (0..m.weights.layers[layer].bias.len()).collect();
            perm.shuffle(&mut rng);
            let p = permute_hidden_neurons(&m, layer, &perm).map_err(err)?;
            let rep = probe_representation(&p, &probes).map_err(err)?.features;
            let diff = rep.axpy(-1.0, &base).map_err(err)?.max_abs();
            worst = worst.max((diff / base.max_abs().max(f32::MIN_POSITIVE)) as f64);
            if statnn_features(&p).map_err(err)?.features != base_stats {
                stat_mismatch += 1;
            }
            checks += 1;
        }
    }
    Ok((
        worst <= 1e-5 && stat_mismatch == 0,
        format!(
            "{} permuted models, max relative error {:.2e}, statnn mismatches {}",
            checks, worst, stat_mismatch
        ),
    ))
}

// ---------------------------------------------------------------- 2: gradient correctness

fn pipeline_fixture(cnn: bool) -> (ExperimentConfig, Vec<ProbedModel>, Vec<f64>) {
    let mut rng = seeded(200 + cnn as u64);
    let models: Vec<ProbedModel> = if cnn {
        (0..3)
            .map(|i| {
                let spec = ArchitectureSpec::cnn(&[4, 4], [1, 8, 8], 10);
                let w = init_he(&spec, 1.0, &mut rng);
                ProbedModel::new(format!("c{}", i), spec, w).unwrap()
            })
            .collect()
    } else {
        (0..4)
            .map(|i| {
                let spec = ArchitectureSpec::inr(8, 2, 30.0);
                let w = init_inr(&spec, &mut rng);
                ProbedModel::new(format!("i{}", i), spec, w).unwrap()
            })
            .collect()
    };
    let labels = if cnn {
        vec![0.2, 0.5, 0.9]
    } else {
        vec![0.0, 1.0, 2.0, 1.0]
    };
    let cfg = ExperimentConfig {
        probes: 3,
        head: probegen::predictors::HeadConfig {
            depth: 3,
            hidden: 16,
            standardize: false,
        },
        ..Default::default()
    };
    (cfg, models, labels)
}

fn criterion_2() -> Check {
    let mut worst_op = (0.0f64, "");
    for seed in SEEDS {
        for mut case in op_suite(seed).map_err(err)? {
            let e = check_gradients(
                &mut case.graph,
                case.loss,
                GradCheckOptions {
                    samples: 100,
                    seed,
                    ..Default::default()
                },
            )
            .map_err(err)?;
            if e > worst_op.0 {
                worst_op = (e, case.op);
            }
        }
    }
    let mut worst_pipe = 0.0f64;
    for cnn in [false, true] {
        let (cfg, models, labels) = pipeline_fixture(cnn);
        let (task, classes) = if cnn {
            (probegen::zoo::TaskKind::AccuracyRegression, 0)
        } else {
            (probegen::zoo::TaskKind::ClassPrediction, 3)
        };
        let s = &models[0].spec;
        let p = Pipeline::init(
            &cfg,
            task,
            classes,
            &s.input_shape,
            s.output_shape.iter().product(),
            models[0].weights.layers.len(),
        )
        .map_err(err)?;
        let refs: Vec<&ProbedModel> = models.iter().collect();
        let (mut g, loss, _) = pipeline_graph::<f64>(&p, &refs, &labels).map_err(err)?;
        for seed in SEEDS {
            let e = check_gradients(
                &mut g,
                loss,
                GradCheckOptions {
                    samples: 100,
                    seed,
                    ..Default::default()
                },
            )
            .map_err(err)?;
            worst_pipe = worst_pipe.max(e);
        }
    }
    Ok((
        worst_op.0 <= 1e-4 && worst_pipe <= 1e-4,
        format!(
            "worst op error {:.2e} ({}), worst pipeline error {:.2e} (fc-linear INR and conv-linear CNN pipelines)",
            worst_op.0, worst_op.1, worst_pipe
        ),
    ))
}

// ---------------------------------------------------------------- 3: deep-linear collapse

struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    fn mul(&self, other: &Mat) -> Mat {
        let mut data = vec![0.0; self.rows * other.cols];
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (d, &b) in data[i * other.cols..(i + 1) * other.cols]
                    .iter_mut()
                    .zip(row)
                {
                    *d += a * b;
                }
            }
        }
        Mat {
            rows: self.rows,
            cols: other.cols,
            data,
        }
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|i| {
                (0..self.cols)
                    .map(|j| self.data[i * self.cols + j] * v[j])
                    .sum()
            })
            .collect()
    }
}

fn affine_mat(p: &LayerParams) -> (Mat, Vec<f64>) {
    let s = p.weight.shape();
    (
        Mat {
            rows: s[0],
            cols: s[1],
            data: p.weight.data().iter().map(|&v| v as f64).collect(),
        },
        p.bias.data().iter().map(|&v| v as f64).collect(),
    )
}

/// Transposed convolution as a dense matrix, built by scattering every input unit.
fn conv_t_mat(
    p: &LayerParams,
    stride: usize,
    pad: usize,
    in_size: usize,
    out_size: usize,
) -> (Mat, Vec<f64>) {
    let s = p.weight.shape();
    let (c_in, c_out, k) = (s[0], s[1], s[2]);
    let (rows, cols) = (c_out * out_size * out_size, c_in * in_size * in_size);
    let mut data = vec![0.0; rows * cols];
    for ci in 0..c_in {
        for y in 0..in_size {
            for x in 0..in_size {
                let col = (ci * in_size + y) * in_size + x;
                for co in 0..c_out {
                    for ky in 0..k {
                        for kx in 0..k {
                            let oy = (y * stride + ky) as isize - pad as isize;
                            let ox = (x * stride + kx) as isize - pad as isize;
                            if oy < 0
                                || ox < 0
                                || oy >= out_size as isize
                                || ox >= out_size as isize
                            {
                                continue;
                            }
                            let row = (co * out_size + oy as usize) * out_size + ox as usize;
                            data[row * cols + col] +=
                                p.weight.data()[((ci * c_out + co) * k + ky) * k + kx] as f64;
                        }
                    }
                }
            }
        }
    }
    let bias = (0..rows)
        .map(|r| p.bias.data()[r / (out_size * out_size)] as f64)
        .collect();
    (Mat { rows, cols, data }, bias)
}

fn collapse(gen: &Generator) -> Result<(Mat, Vec<f64>), String> {
    let stages = gen.config.stages().map_err(err)?;
    let mut acc: Option<(Mat, Vec<f64>)> = None;
    for (stage, p) in stages.iter().zip(&gen.layers) {
        let (m, b) = match *stage {
            Stage::Affine { .. } => affine_mat(p),
            Stage::ConvTranspose {
                stride,
                pad,
                in_size,
                out_size,
                ..
            } => conv_t_mat(p, stride, pad, in_size, out_size),
        };
        acc = Some(match acc {
            None => (m, b),
            Some((a, c)) => {
                let mc = m.apply(&c);
                (m.mul(&a), mc.iter().zip(&b).map(|(x, y)| x + y).collect())
            }
        });
    }
    acc.ok_or_else(|| "generator has no stages".into())
}

fn criterion_3() -> Check {
    let (mut worst_lin, mut worst_collapse) = (0.0f64, 0.0f64);
    let mut cases = 0;
    for kind in [GeneratorKind::FcLinear, GeneratorKind::ConvLinear] {
        for depth in 1..=5 {
            let output_shape = if kind == GeneratorKind::FcLinear {
                vec![2]
            } else {
                vec![1, 1 << depth, 1 << depth]
            };
            let cfg = GeneratorConfig {
                kind,
                depth,
                output_shape,
                ..Default::default()
            };
            let gen = Generator::init(cfg, &mut seeded(300 + depth as u64)).map_err(err)?;
            worst_lin = worst_lin.max(
                linearity_residual::<f32>(&gen, 10, &mut seeded(400 + depth as u64))
                    .map_err(err)?,
            );

            let d = gen.config.latent_dim;
            let mut rng = seeded(500 + depth as u64);
            let z = DenseArray::<f64>::from_fn(&[4, d], |_| rng.random_range(-1.0..1.0));
            let out = gen.apply(&z).map_err(err)?;
            let (a, c) = collapse(&gen)?;
            let n = out.len() / 4;
            for i in 0..4 {
                let expect: Vec<f64> = a
                    .apply(z.row(i))
                    .iter()
                    .zip(&c)
                    .map(|(x, y)| x + y)
                    .collect();
                let got = &out.data()[i * n..(i + 1) * n];
                let scale = expect.iter().fold(f64::MIN_POSITIVE, |m, v| m.max(v.abs()));
                let diff = got
                    .iter()
                    .zip(&expect)
                    .map(|(x, y)| (x - y).abs())
                    .fold(0.0, f64::max);
                worst_collapse = worst_collapse.max(diff / scale);
            }
            cases += 1;
        }
    }
    Ok((
        worst_lin <= 1e-4 && worst_collapse <= 1e-5,
        format!(
            "{} generators, max f32 linearity residual {:.2e}, max collapse relative error {:.2e}",
            cases, worst_lin, worst_collapse
        ),
    ))
}

// ---------------------------------------------------------------- 4-8: trends

fn criterion_4() -> Check {
    inr_desk_zoo()?;
    let t0 = Instant::now();
    let pg = series(Desk::Inr, Variant::ProbeGen)?;
    let van = series(Desk::Inr, Variant::Vanilla)?;
    let secs = t0.elapsed().as_secs_f64();
    let (a, b) = (mean(&pg.metric), mean(&van.metric));
    let chance = 0.1;
    let pass = a >= b + 0.02 && a > chance + 0.2 && b > chance + 0.2 && secs < 30.0 * 60.0;
    Ok((
        pass,
        format!(
            "probegen acc {:.4} {} vs vanilla {:.4} {}; margin {:+.4}; {:.0}s",
            a,
            fmt(&pg.metric),
            b,
            fmt(&van.metric),
            a - b,
            secs
        ),
    ))
}

fn criterion_5() -> Check {
    let zoo = cnn_desk_zoo()?;
    let labels: Vec<f64> = zoo.records.iter().map(|r| r.label).collect();
    let spread = labels.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - labels.iter().cloned().fold(f64::INFINITY, f64::min);
    let t0 = Instant::now();
    let pg = series(Desk::Cnn, Variant::ProbeGen)?;
    let van = series(Desk::Cnn, Variant::Vanilla)?;
    let secs = t0.elapsed().as_secs_f64();
    let (a, b) = (mean(&pg.metric), mean(&van.metric));
    let pass = spread >= 0.3 && a >= b && a >= 0.5 && secs < 60.0 * 60.0;
    Ok((
        pass,
        format!(
            "accuracy spread {:.2}; probegen tau {:.4} {} vs vanilla {:.4} {}; {:.0}s",
            spread,
            a,
            fmt(&pg.metric),
            b,
            fmt(&van.metric),
            secs
        ),
    ))
}

fn criterion_6() -> Check {
    let lin = series(Desk::Cnn, Variant::ProbeGen)?;
    let non = series(Desk::Cnn, Variant::ConvNonlinear)?;
    let (a, b) = (mean(&non.gap), mean(&lin.gap));
    Ok((
        a >= b,
        format!(
            "mean gap conv-nonlinear {:.4} {} vs conv-linear {:.4} {}",
            a,
            fmt(&non.gap),
            b,
            fmt(&lin.gap)
        ),
    ))
}

fn criterion_7() -> Check {
    let syn = series(Desk::Inr, Variant::SyntheticUniform)?;
    let van = series(Desk::Inr, Variant::Vanilla)?;
    let (a, b) = (mean(&syn.metric), mean(&van.metric));
    Ok((
        (a - b).abs() <= 0.05,
        format!(
            "synthetic (uniform coordinates) acc {:.4} {} vs vanilla {:.4} {}; |diff| {:.4}",
            a,
            fmt(&syn.metric),
            b,
            fmt(&van.metric),
            (a - b).abs()
        ),
    ))
}

fn criterion_8() -> Check {
    let ent = series(Desk::Cnn, Variant::EntropyOnly)?;
    let pg = series(Desk::Cnn, Variant::ProbeGen)?;
    let (a, b) = (mean(&ent.metric), mean(&pg.metric));
    Ok((
        a >= 0.6 * b,
        format!(
            "entropy-only tau {:.4} {} vs 0.6 x probegen {:.4}",
            a,
            fmt(&ent.metric),
            0.6 * b
        ),
    ))
}

// ---------------------------------------------------------------- 9: FLOPs

fn criterion_9() -> Check {
    // INR: 2 -> 32 -> 32 -> 32 -> 1 affine layers
    let inr_macs: u64 = 2 * 32 + 32 * 32 + 32 * 32 + 32;
    // coordinate generator: latent 32 -> hidden 32 -> 2
    let gen_macs: u64 = 32 * 32 + 32 * 2;
    // head: k inputs, five hidden layers of 256, 10 outputs
    let head_macs = |k: u64| k * 256 + 4 * 256 * 256 + 256 * 10;
    let (k, batch) = (128u64, 64u64);
    let model = 2 * inr_macs * k * batch;
    let generator = 2 * gen_macs * k;
    let head = 2 * head_macs(k) * batch;
    let forward = model + generator + head;

    let report_for = |k: usize| -> Result<probegen::experiment::FlopsReport, String> {
        let cfg = ExperimentConfig {
            probes: k,
            batch_size: 64,
            ..Default::default()
        };
        let spec = ArchitectureSpec::default_inr();
        let p = Pipeline::init(
            &cfg,
            probegen::zoo::TaskKind::ClassPrediction,
            10,
            &spec.input_shape,
            1,
            spec.layers.len(),
        )
        .map_err(err)?;
        pipeline_flops(&cfg, &p, &spec).map_err(err)
    };
    let r = report_for(128)?;
    let r2 = report_for(256)?;
    let matches = r.forward.model == model
        && r.forward.generator == generator
        && r.forward.head == head
        && r.forward.total() == forward
        && r.backward.total() == 2 * forward
        && r.training_step == 3 * forward
        && r.inference_per_model == 2 * inr_macs * k + 2 * head_macs(k);
    let doubles = r2.forward.model == 2 * r.forward.model;
    Ok((
        matches && doubles,
        format!(
            "model {} generator {} head {} (hand {} / {} / {}); k=256 model term {}",
            r.forward.model,
            r.forward.generator,
            r.forward.head,
            model,
            generator,
            head,
            r2.forward.model
        ),
    ))
}

// ---------------------------------------------------------------- 10: serialization

fn criterion_10() -> Check {
    let mut rng = seeded(1000);
    let mut zoo = ModelZoo::empty(Family::Inr, 1000, 10);
    for (i, split) in assign_splits(100, 1000).into_iter().enumerate() {
        let spec = ArchitectureSpec::default_inr();
        let w = init_inr(&spec, &mut rng);
        zoo.records.push(ZooRecord {
            model: ProbedModel::new(format!("m{:03}", i), spec, w).map_err(err)?,
            label: (i % 10) as f64,
            split,
            meta: RecordMeta {
                fit_mse: Some(rng.random_range(0.0..0.01)),
                source_index: Some(i),
                hyper: None,
            },
        });
    }
    let dir = scratch().join("serialization");
    let _ = std::fs::remove_dir_all(&dir);
    save_zoo(&zoo, &dir).map_err(err)?;
    let back = load_zoo(&dir).map_err(err)?;
    let bits = |z: &ModelZoo| -> Vec<u32> {
        z.records
            .iter()
            .flat_map(|r| r.model.weights.layers.iter())
            .flat_map(|l| l.weight.data().iter().chain(l.bias.data()))
            .map(|v| v.to_bits())
            .collect()
    };
    let identical = back == zoo && bits(&back) == bits(&zoo);

    let mut detected = 0;
    let files: Vec<PathBuf> = {
        let mut f: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(err)?
            .map(|e| e.unwrap().path())
            .filter(|p| p.extension().is_some_and(|x| x == "pgzw"))
            .collect();
        f.sort();
        f
    };
    for path in &files {
        let original = std::fs::read(path).map_err(err)?;
        let mut bytes = original.clone();
        let i = rng.random_range(0..bytes.len());
        bytes[i] ^= 1 << rng.random_range(0..8);
        std::fs::write(path, &bytes).map_err(err)?;
        let named = |e: Error| matches!(e, Error::Checksum { path: ref p, .. } if p == path);
        if verify_zoo(&dir).is_err_and(named) && load_zoo(&dir).is_err_and(named) {
            detected += 1;
        }
        std::fs::write(path, &original).map_err(err)?;
    }
    Ok((
        identical && files.len() == 100 && detected == files.len(),
        format!(
            "round trip bit-identical: {}; corrupted files detected {}/{}",
            identical,
            detected,
            files.len()
        ),
    ))
}

// ---------------------------------------------------------------- 11: determinism

fn probegen_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_probegen"))
        .args(args)
        .output()
        .map_err(err)?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "{:?}: {}",
            args,
            String::from_utf8_lossy(&out.stderr).trim()
        ))
    }
}

fn criterion_11() -> Check {
    let root = scratch().join("determinism");
    let zoo = root.join("zoo");
    if load_zoo(&zoo).is_err() {
        let _ = std::fs::remove_dir_all(&zoo);
        probegen_cli(&[
            "--seed",
            "11",
            "--out",
            zoo.to_str().unwrap(),
            "zoo",
            "generate",
            "--family",
            "inr",
            "--count",
            "120",
            "--steps",
            "200",
        ])?;
    }
    let mut csvs = Vec::new();
    for run in ["a", "b"] {
        let out = root.join(run);
        let _ = std::fs::remove_dir_all(&out);
        probegen_cli(&[
            "--seed",
            "5",
            "--threads",
            "1",
            "--out",
            out.to_str().unwrap(),
            "train",
            "--zoo",
            zoo.to_str().unwrap(),
            "--probes",
            "32",
            "--epochs",
            "5",
        ])?;
        csvs.push(std::fs::read(out.join("report.csv")).map_err(err)?);
    }
    Ok((
        csvs[0] == csvs[1],
        format!(
            "report.csv {} bytes, identical: {}",
            csvs[0].len(),
            csvs[0] == csvs[1]
        ),
    ))
}

// ---------------------------------------------------------------- driver

type Criterion = fn() -> Check;

fn main() {
    let criteria: [(&str, Criterion); 11] = [
        ("permutation invariance", criterion_1),
        ("gradient correctness", criterion_2),
        ("deep-linear collapse", criterion_3),
        ("INR classification trend", criterion_4),
        ("CNN accuracy regression trend", criterion_5),
        ("overfitting ordering", criterion_6),
        ("synthetic-probe sanity", criterion_7),
        ("entropy baseline", criterion_8),
        ("FLOPs accounting", criterion_9),
        ("serialization", criterion_10),
        ("determinism", criterion_11),
    ];
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    // the harness=false target still receives libtest flags such as --list
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    // trend criteria report their outcome without setting the exit status
    const TRENDS: [usize; 5] = [4, 5, 6, 7, 8];
    let mut failed = Vec::new();
    let mut trend_failed = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let t0 = Instant::now();
        let (pass, detail) = match f() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {}", e)),
        };
        let elapsed: Duration = t0.elapsed();
        println!(
            "criterion {:>2} {:<32} {} ({}) [{:.1}s]",
            n,
            name,
            if pass { "PASS" } else { "FAIL" },
            detail,
            elapsed.as_secs_f64()
        );
        if !pass {
            if TRENDS.contains(&n) {
                trend_failed.push(n);
            } else {
                failed.push(n);
            }
        }
    }
    if !trend_failed.is_empty() {
        println!("trend criteria not reproduced: {:?}", trend_failed);
    }
    if !failed.is_empty() {
        println!("failed criteria: {:?}", failed);
        std::process::exit(1);
    }
}
