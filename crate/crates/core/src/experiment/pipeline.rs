//! Probing pipelines: probes, probed models and head, trained end to end.

use autodiff::{
    AdamConfig, AdamState, BackwardOptions, DenseArray, Graph, GraphError, LeafKind, NodeId, Scalar,
};
use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::config::{ExperimentConfig, Method, Precision};
use super::flops::{flops_breakdown, FlopsReport};
use super::metrics::{accuracy, argmax, kendall_tau, MetricKind};
use super::report::{EpochRecord, MetricReport};
use crate::models::ProbedModel;
use crate::predictors::{
    build_entropy_response, build_response, entropy_features, head_predict, probe_representation,
    statnn_features, Layout, PredictorHead, Representation, Standardizer,
};
use crate::probes::{dead_leaves_probes, Generator, ProbeSet, ProbeSource};
use crate::rng::{derive, derive_seed};
use crate::zoo::{ModelZoo, Split, TaskKind, ZooRecord};
use crate::{Error, Result};

/// Learned (or fixed) probes plus the head that reads their responses.
#[derive(Debug, Clone, PartialEq)]
pub struct Pipeline {
    pub method: Method,
    pub task: TaskKind,
    /// Head output width: class count, or 1 for regression.
    pub outputs: usize,
    /// Present when probes are learned; identity kind for vanilla probing.
    pub generator: Option<Generator>,
    /// Latent codes (or the probes themselves for the identity generator).
    pub latents: Option<DenseArray<f32>>,
    /// Fixed synthetic probes.
    pub fixed_probes: Option<DenseArray<f32>>,
    pub head: PredictorHead,
}

fn uniform_probes(k: usize, shape: &[usize], seed: u64) -> DenseArray<f32> {
    use rand::Rng as _;
    let mut rng = derive(seed, "synthetic-uniform", 0);
    let (lo, hi) = if shape.len() == 3 {
        (0.0, 1.0)
    } else {
        (-1.0, 1.0)
    };
    let full: Vec<usize> = std::iter::once(k).chain(shape.iter().copied()).collect();
    DenseArray::from_fn(&full, |_| rng.random_range(lo..=hi))
}

impl Pipeline {
    /// Fresh pipeline for `config` on models that take `input_shape` and emit `output_len` values.
    pub fn init(
        config: &ExperimentConfig,
        task: TaskKind,
        classes: usize,
        input_shape: &[usize],
        output_len: usize,
        layers: usize,
    ) -> Result<Self> {
        let k = config.probes;
        let outputs = match task {
            TaskKind::ClassPrediction => classes,
            TaskKind::AccuracyRegression => 1,
        };
        let (mut generator, mut latents, mut fixed_probes) = (None, None, None);
        if let Some(gc) = config.resolve_generator(input_shape)? {
            let gen = Generator::init(gc, &mut derive(config.seed, "generator", 0))?;
            latents = Some(gen.init_latents(k, &mut derive(config.seed, "latents", 0)));
            generator = Some(gen);
        }
        match config.method {
            Method::SyntheticUniform => {
                fixed_probes = Some(uniform_probes(k, input_shape, config.seed))
            }
            Method::SyntheticDeadLeaves => {
                let s = [input_shape[0], input_shape[1], input_shape[2]];
                fixed_probes = Some(dead_leaves_probes(
                    k,
                    s,
                    derive_seed(config.seed, "dead-leaves", 0),
                ));
            }
            _ => {}
        }
        let layout = match config.method {
            Method::Statnn => Layout::StatFeatures { layers },
            Method::EntropyOnly => Layout::EntropyFeatures { k },
            _ => Layout::ProbeConcat {
                k,
                per_probe: output_len,
            },
        };
        let head = PredictorHead::init(
            &config.head,
            layout.dim(),
            outputs,
            &mut derive(config.seed, "head", 0),
        )?;
        Ok(Self {
            method: config.method,
            task,
            outputs,
            generator,
            latents,
            fixed_probes,
            head,
        })
    }

    /// Current probes, if the method uses any.
    pub fn probes(&self) -> Result<Option<ProbeSet>> {
        if let (Some(g), Some(z)) = (&self.generator, &self.latents) {
            return Ok(Some(ProbeSet {
                probes: g.apply(z)?,
                source: ProbeSource::Generated,
            }));
        }
        Ok(self.fixed_probes.as_ref().map(|p| ProbeSet {
            probes: p.clone(),
            source: match self.method {
                Method::SyntheticDeadLeaves => ProbeSource::SyntheticDeadLeaves,
                _ => ProbeSource::SyntheticUniform,
            },
        }))
    }

    /// Features for each model, before any standardization.
    pub fn represent(&self, models: &[&ProbedModel]) -> Result<Representation> {
        let probes = self.probes()?;
        let rows: Vec<Representation> = models
            .par_iter()
            .map(|m| match (&probes, self.method) {
                (None, _) => statnn_features(m),
                (Some(p), Method::EntropyOnly) => entropy_features(&probe_representation(m, p)?),
                (Some(p), _) => probe_representation(m, p),
            })
            .collect::<Result<_>>()?;
        if rows.is_empty() {
            return Representation::new(
                DenseArray::zeros(&[0, self.head.input_dim()]),
                self.layout(0),
            );
        }
        Representation::stack(&rows)
    }

    fn layout(&self, layers: usize) -> Layout {
        let k = self
            .latents
            .as_ref()
            .or(self.fixed_probes.as_ref())
            .map_or(0, |p| p.shape()[0]);
        match self.method {
            Method::Statnn => Layout::StatFeatures { layers },
            Method::EntropyOnly => Layout::EntropyFeatures { k },
            _ => Layout::ProbeConcat {
                k,
                per_probe: self.head.input_dim() / k.max(1),
            },
        }
    }

    /// Head outputs `(n, outputs)` for the given models.
    pub fn predict(&self, models: &[&ProbedModel]) -> Result<DenseArray<f32>> {
        head_predict(&self.head, &self.represent(models)?)
    }

    /// Trainable tensors in optimizer order: latents, generator stages, head layers.
    pub fn trainable<T: Scalar>(&self) -> Vec<DenseArray<T>> {
        let mut out = Vec::new();
        if self.method.learns_probes() {
            out.push(
                self.latents
                    .as_ref()
                    .expect("learned probes have latents")
                    .cast(),
            );
            for l in &self
                .generator
                .as_ref()
                .expect("learned probes have a generator")
                .layers
            {
                out.push(l.weight.cast());
                out.push(l.bias.cast());
            }
        }
        for l in &self.head.layers {
            out.push(l.weight.cast());
            out.push(l.bias.cast());
        }
        out
    }

    /// Writes tensors from [`Self::trainable`] order back into the pipeline.
    pub fn set_trainable<T: Scalar>(&mut self, tensors: &[DenseArray<T>]) {
        let mut it = tensors.iter();
        if self.method.learns_probes() {
            self.latents = Some(it.next().expect("latents").cast());
            for l in &mut self.generator.as_mut().expect("generator").layers {
                l.weight = it.next().expect("generator weight").cast();
                l.bias = it.next().expect("generator bias").cast();
            }
        }
        for l in &mut self.head.layers {
            l.weight = it.next().expect("head weight").cast();
            l.bias = it.next().expect("head bias").cast();
        }
    }
}

/// Loss, head outputs and gradients (in [`Pipeline::trainable`] order) for one mini-batch.
#[derive(Debug, Clone)]
pub struct StepOutput<T> {
    pub loss: f64,
    pub outputs: DenseArray<T>,
    pub grads: Vec<DenseArray<T>>,
}

fn to_f64<T: Scalar>(v: T) -> f64 {
    v.to_f64().unwrap_or(f64::NAN)
}

fn bind_leaves<T: Scalar>(
    g: &mut Graph<T>,
    leaves: &[(NodeId, NodeId)],
    values: &[DenseArray<T>],
) -> Result<()> {
    for (i, &(w, b)) in leaves.iter().enumerate() {
        g.set_value(w, values[2 * i].clone())?;
        g.set_value(b, values[2 * i + 1].clone())?;
    }
    Ok(())
}

fn attach_loss<T: Scalar>(
    g: &mut Graph<T>,
    task: TaskKind,
    out: NodeId,
    targets: &[f64],
) -> Result<NodeId> {
    Ok(match task {
        TaskKind::ClassPrediction => {
            let t: Vec<usize> = targets.iter().map(|&v| v as usize).collect();
            g.softmax_cross_entropy(out, &t)?
        }
        TaskKind::AccuracyRegression => {
            let t = g.constant(
                "targets",
                DenseArray::new(
                    vec![targets.len(), 1],
                    targets.iter().map(|&v| T::of(v)).collect(),
                )?,
            );
            g.mse(out, t)?
        }
    })
}

/// One forward/backward pass. Probes are generated once, each model runs on them in its own
/// graph, and the head sees the stacked responses; gradients are chained back across the graphs.
/// `features` supplies precomputed head inputs when probes are fixed.
pub fn pipeline_gradients<T: Scalar>(
    p: &Pipeline,
    params: &[DenseArray<T>],
    models: &[&ProbedModel],
    targets: &[f64],
    features: Option<&DenseArray<T>>,
) -> Result<StepOutput<T>> {
    let learn = p.method.learns_probes();
    let mut offset = 0;
    let mut probe_graph = None;
    if learn {
        let gen = p
            .generator
            .as_ref()
            .expect("learned probes have a generator");
        let mut g = Graph::<T>::new();
        let z = g.param("z", params[0].clone());
        let (pn, leaves) = gen.build(&mut g, z, LeafKind::Param)?;
        bind_leaves(&mut g, &leaves, &params[1..])?;
        g.run()?;
        offset = 1 + 2 * leaves.len();
        probe_graph = Some((g, z, pn, leaves));
    }

    let fixed_probes = p.fixed_probes.as_ref().map(|f| f.cast::<T>());
    let probes: Option<&DenseArray<T>> = match &probe_graph {
        Some((g, _, pn, _)) => g.value(*pn),
        None => fixed_probes.as_ref(),
    };
    let mut model_graphs = Vec::new();
    let r = match (features, probes) {
        (Some(f), _) => f.clone(),
        (None, Some(probes)) => {
            model_graphs = models
                .par_iter()
                .map(|m| {
                    let mut g = Graph::<T>::new();
                    let pin = g.input("probes", probes.shape());
                    let (row, _) = if p.method == Method::EntropyOnly {
                        build_entropy_response(&mut g, m, pin)?
                    } else {
                        build_response(&mut g, m, pin)?
                    };
                    g.evaluate([(pin, probes.clone())])?;
                    Ok((g, pin, row))
                })
                .collect::<Result<Vec<_>>>()?;
            let d = p.head.input_dim();
            let mut data = Vec::with_capacity(models.len() * d);
            for (g, _, row) in &model_graphs {
                data.extend_from_slice(g.value(*row).expect("evaluated").data());
            }
            DenseArray::new(vec![models.len(), d], data)?
        }
        (None, None) => {
            return Err(Error::Data(
                "pipeline has neither probes nor precomputed features".into(),
            ))
        }
    };

    let mut gh = Graph::<T>::new();
    let rin = gh.input("representation", r.shape());
    let (out, leaves) = p.head.build(&mut gh, rin, LeafKind::Param)?;
    bind_leaves(&mut gh, &leaves, &params[offset..])?;
    let loss = attach_loss(&mut gh, p.task, out, targets)?;
    gh.evaluate([(rin, r)])?;
    let loss_value = to_f64(gh.value(loss).expect("evaluated").data()[0]);
    let mut hg = gh.backward_with(
        loss,
        BackwardOptions {
            frozen: false,
            inputs: learn,
        },
    )?;

    let mut grads: Vec<DenseArray<T>> = Vec::with_capacity(params.len());
    if let Some((g, z, pn, gen_leaves)) = &probe_graph {
        let dr = hg.take(rin).expect("representation gradient requested");
        let d = dr.shape()[1];
        let per_model: Vec<DenseArray<T>> = model_graphs
            .par_iter()
            .enumerate()
            .map(|(i, (mg, pin, row))| {
                let seed = DenseArray::new(vec![1, d], dr.row(i).to_vec())?;
                let mut gr = mg.backward_seeded(
                    *row,
                    seed,
                    BackwardOptions {
                        frozen: false,
                        inputs: true,
                    },
                )?;
                Ok(gr.take(*pin).expect("probe gradient requested"))
            })
            .collect::<Result<_>>()?;
        let mut dp = DenseArray::<T>::zeros(g.shape(*pn));
        for gp in &per_model {
            for (a, &b) in dp.data_mut().iter_mut().zip(gp.data()) {
                *a = *a + b;
            }
        }
        let mut pg = g.backward_seeded(*pn, dp, BackwardOptions::params_only())?;
        grads.push(pg.take(*z).expect("latent gradient"));
        for &(w, b) in gen_leaves {
            grads.push(pg.take(w).expect("generator gradient"));
            grads.push(pg.take(b).expect("generator gradient"));
        }
    }
    for &(w, b) in &leaves {
        grads.push(hg.take(w).expect("head gradient"));
        grads.push(hg.take(b).expect("head gradient"));
    }
    Ok(StepOutput {
        loss: loss_value,
        outputs: gh.value(out).expect("evaluated").clone(),
        grads,
    })
}

/// The same computation as [`pipeline_gradients`] in a single graph, for gradient checking.
/// Returns the graph, its loss node and the trainable leaves in [`Pipeline::trainable`] order.
pub fn pipeline_graph<T: Scalar>(
    p: &Pipeline,
    models: &[&ProbedModel],
    targets: &[f64],
) -> Result<(Graph<T>, NodeId, Vec<NodeId>)> {
    let mut g = Graph::<T>::new();
    let mut ids = Vec::new();
    let probes = if let (Some(gen), Some(z)) = (&p.generator, &p.latents) {
        let zn = g.param("z", z.cast());
        ids.push(zn);
        let (pn, leaves) = gen.build(&mut g, zn, LeafKind::Param)?;
        ids.extend(leaves.iter().flat_map(|&(w, b)| [w, b]));
        Some(pn)
    } else {
        p.fixed_probes
            .as_ref()
            .map(|f| g.constant("probes", f.cast()))
    };
    let mut rows = Vec::with_capacity(models.len());
    for m in models {
        let row = match (probes, p.method) {
            (Some(pn), Method::EntropyOnly) => build_entropy_response(&mut g, m, pn)?.0,
            (Some(pn), _) => build_response(&mut g, m, pn)?.0,
            (None, _) => {
                let f = statnn_features(m)?;
                g.constant(format!("{}.stats", m.id), f.features.cast())
            }
        };
        rows.push(row);
    }
    let r = g.concat(&rows, 0)?;
    let (out, leaves) = p.head.build(&mut g, r, LeafKind::Param)?;
    ids.extend(leaves.iter().flat_map(|&(w, b)| [w, b]));
    let loss = attach_loss(&mut g, p.task, out, targets)?;
    g.run()?;
    Ok((g, loss, ids))
}

/// Loss and metric of head outputs against labels.
pub fn score(task: TaskKind, outputs: &DenseArray<f32>, labels: &[f64]) -> (f64, Option<f64>) {
    let n = labels.len();
    if n == 0 {
        return (f64::NAN, None);
    }
    match task {
        TaskKind::ClassPrediction => {
            let mut loss = 0.0;
            let mut pred = Vec::with_capacity(n);
            for (i, &l) in labels.iter().enumerate() {
                let row: Vec<f64> = outputs.row(i).iter().map(|&v| v as f64).collect();
                let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                loss += lse - row[l as usize];
                pred.push(argmax(outputs.row(i)));
            }
            let truth: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
            (loss / n as f64, accuracy(&pred, &truth).ok())
        }
        TaskKind::AccuracyRegression => {
            let pred: Vec<f64> = (0..n).map(|i| outputs.row(i)[0] as f64).collect();
            let loss = pred
                .iter()
                .zip(labels)
                .map(|(p, t)| (p - t) * (p - t))
                .sum::<f64>()
                / n as f64;
            (loss, kendall_tau(&pred, labels).ok())
        }
    }
}

pub fn metric_kind(task: TaskKind) -> MetricKind {
    match task {
        TaskKind::ClassPrediction => MetricKind::Accuracy,
        TaskKind::AccuracyRegression => MetricKind::KendallTau,
    }
}

/// A trained pipeline and its report.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub pipeline: Pipeline,
    pub report: MetricReport,
}

struct SplitData<'a> {
    models: Vec<&'a ProbedModel>,
    labels: Vec<f64>,
    /// Raw fixed features, when the method's features do not change during training.
    features: Option<Representation>,
}

impl<'a> SplitData<'a> {
    fn new(records: Vec<&'a ZooRecord>) -> Self {
        Self {
            models: records.iter().map(|r| &r.model).collect(),
            labels: records.iter().map(|r| r.label).collect(),
            features: None,
        }
    }

    fn evaluate(&self, p: &Pipeline) -> Result<(f64, Option<f64>)> {
        if self.models.is_empty() {
            return Ok((f64::NAN, None));
        }
        let out = match &self.features {
            Some(f) => head_predict(&p.head, f)?,
            None => p.predict(&self.models)?,
        };
        Ok(score(p.task, &out, &self.labels))
    }
}

fn numeric_abort(epoch: usize, batch: usize, max_grad: f64, what: &str) -> Error {
    Error::Numeric(format!(
        "non-finite {} at epoch {}, batch {} (max |grad| before this step {:e})",
        what, epoch, batch, max_grad
    ))
}

/// Builds a pipeline for `config`, trains it on the zoo's train split and scores it.
/// Model weights never change.
pub fn train_on_zoo(config: &ExperimentConfig, zoo: &ModelZoo) -> Result<TrainOutcome> {
    match config.precision {
        Precision::F32 => train_generic::<f32>(config, zoo),
        Precision::F64 => train_generic::<f64>(config, zoo),
    }
}

/// Loads the zoo named in `config` and trains on it.
pub fn train_pipeline(config: &ExperimentConfig) -> Result<TrainOutcome> {
    let zoo = crate::zoo::load_zoo(&config.zoo)?;
    train_on_zoo(config, &zoo)
}

fn train_generic<T: Scalar>(config: &ExperimentConfig, zoo: &ModelZoo) -> Result<TrainOutcome> {
    let start = std::time::Instant::now();
    let input_shape = config.check_zoo(zoo)?;
    let first = &zoo.records[0].model;
    let output_len: usize = first.spec.output_shape.iter().product();
    let layers = first.weights.layers.len();
    let mut pipeline = Pipeline::init(
        config,
        zoo.task,
        zoo.classes,
        &input_shape,
        output_len,
        layers,
    )?;
    if zoo.task == TaskKind::ClassPrediction && zoo.classes == 0 {
        return Err(Error::Data(
            "class-prediction zoo declares 0 classes".into(),
        ));
    }

    let mut train = SplitData::new(zoo.split(Split::Train));
    let mut val = SplitData::new(zoo.split(Split::Validation));
    let mut test = SplitData::new(zoo.split(Split::Test));
    if train.models.is_empty() {
        return Err(Error::Data("zoo has no training models".into()));
    }

    // fixed features are computed once
    let mut train_inputs: Option<DenseArray<T>> = None;
    if !config.method.learns_probes() {
        for s in [&mut train, &mut val, &mut test] {
            s.features = Some(pipeline.represent(&s.models)?);
        }
        let raw = &train.features.as_ref().expect("computed").features;
        if config.head.standardize {
            pipeline.head.standardizer = Some(Standardizer::fit(raw)?);
        }
        let x = match &pipeline.head.standardizer {
            Some(s) => s.apply(raw),
            None => raw.clone(),
        };
        train_inputs = Some(x.cast());
    }

    let mut params = pipeline.trainable::<T>();
    let mut adam = AdamState::<T>::new(AdamConfig::with_lr(config.lr));
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut max_grad = 0.0f64;
    let n_train = train.models.len();
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..n_train).collect();
        order.shuffle(&mut derive(config.seed, "epoch", epoch as u64));
        let mut outputs = DenseArray::<f32>::zeros(&[n_train, pipeline.outputs]);
        let mut labels = vec![0.0; n_train];
        let (mut loss_sum, mut seen) = (0.0, 0usize);
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let models: Vec<&ProbedModel> = chunk.iter().map(|&i| train.models[i]).collect();
            let targets: Vec<f64> = chunk.iter().map(|&i| train.labels[i]).collect();
            let feats = train_inputs.as_ref().map(|x| {
                let d = x.shape()[1];
                let data = chunk
                    .iter()
                    .flat_map(|&i| x.row(i).iter().copied())
                    .collect();
                DenseArray::new(vec![chunk.len(), d], data).expect("row sizes agree")
            });
            let step =
                match pipeline_gradients(&pipeline, &params, &models, &targets, feats.as_ref()) {
                    Ok(s) => s,
                    Err(Error::Graph(GraphError::Overflow { node })) => {
                        return Err(numeric_abort(
                            epoch,
                            b,
                            max_grad,
                            &format!("value in {}", node),
                        ))
                    }
                    Err(e) => return Err(e),
                };
            if !step.loss.is_finite() {
                return Err(numeric_abort(epoch, b, max_grad, "loss"));
            }
            max_grad = step
                .grads
                .iter()
                .map(|g| to_f64(g.max_abs()))
                .fold(0.0, f64::max);
            if !max_grad.is_finite() {
                return Err(numeric_abort(epoch, b, max_grad, "gradient"));
            }
            adam.step(&mut params, &step.grads)?;
            for (j, &i) in chunk.iter().enumerate() {
                for (o, v) in step.outputs.row(j).iter().enumerate() {
                    outputs.data_mut()[i * pipeline.outputs + o] = to_f64(*v) as f32;
                }
                labels[i] = train.labels[i];
            }
            loss_sum += step.loss * chunk.len() as f64;
            seen += chunk.len();
        }
        pipeline.set_trainable(&params);
        let (_, train_metric) = score(pipeline.task, &outputs, &labels);
        let (val_loss, val_metric) = val.evaluate(&pipeline)?;
        epochs.push(EpochRecord {
            epoch: epoch + 1,
            train_loss: loss_sum / seen as f64,
            train_metric,
            val_loss: val_loss.is_finite().then_some(val_loss),
            val_metric,
        });
    }
    pipeline.set_trainable(&params);

    let (train_loss, train_metric) = train.evaluate(&pipeline)?;
    let (test_loss, test_metric) = test.evaluate(&pipeline)?;
    let kind = metric_kind(zoo.task);
    let generalization_gap = match (train_metric, test_metric) {
        (Some(a), Some(b)) => Some(super::metrics::generalization_gap((kind, a), (kind, b))?),
        _ => None,
    };
    let flops = pipeline_flops(config, &pipeline, &first.spec)?;
    let mut notes = Vec::new();
    if config.method == Method::Statnn {
        notes.push(
            "statnn features are read by the MLP head, not by gradient-boosted trees".to_string(),
        );
    }
    let report = MetricReport {
        method: config.method,
        metric: kind,
        seed: config.seed,
        epochs,
        train_loss,
        train_metric,
        test_loss: test_loss.is_finite().then_some(test_loss),
        test_metric,
        generalization_gap,
        flops,
        wall_clock_secs: start.elapsed().as_secs_f64(),
        threads: rayon::current_num_threads(),
        notes,
        config: config.clone(),
    };
    report.check_finite()?;
    Ok(TrainOutcome { pipeline, report })
}

/// FLOPs of one training step and one inference for this pipeline on models of `spec`.
pub fn pipeline_flops(
    config: &ExperimentConfig,
    pipeline: &Pipeline,
    spec: &crate::models::ArchitectureSpec,
) -> Result<FlopsReport> {
    let stages = match &pipeline.generator {
        Some(g) => g.config.stages()?,
        None => Vec::new(),
    };
    let mut dims = vec![pipeline.head.input_dim()];
    dims.extend(pipeline.head.layers.iter().map(|l| l.bias.len()));
    let model = pipeline.method.uses_probes().then_some(spec);
    flops_breakdown(model, &stages, &dims, config.probes, config.batch_size)
}
