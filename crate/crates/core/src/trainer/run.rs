use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Task, TrainConfig};
use super::data::{Dataset, SplitName};
use super::engine::{BatchOrder, Engine};
use super::log::RunLog;
use super::mask::sample_mask;
use crate::corpus::{DescriptorSchema, Property};
use crate::encoders::Vocab;
use crate::error::{Error, Result};
use crate::fusion::{ContrastiveModel, Model, ModelConfig, ModelInput, Variant};
use crate::nn::{stream_seed, Checkpoint, ParamId, ParamStore};

const META_KEY: &str = "model";

/// Affine map between raw targets and the standardized values the heads
/// are trained on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetScale {
    pub property: Property,
    pub mean: f64,
    pub std: f64,
}

impl TargetScale {
    /// Population statistics of `values`; a zero spread falls back to 1.
    pub fn fit(property: Property, values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Invalid(format!("no training targets for {property}")));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        Ok(Self { property, mean, std })
    }

    pub fn to_model(&self, y: f64) -> f64 {
        (y - self.mean) / self.std
    }

    pub fn from_model(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// Everything needed to rebuild a model from its checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub variant: Variant,
    pub config: ModelConfig,
    pub task: Task,
    pub seed: u64,
    pub vocab: String,
    pub schema: DescriptorSchema,
    pub target: Option<TargetScale>,
    /// Step at which the parameters were captured.
    pub step: usize,
}

impl ModelMeta {
    fn attach(&self, ckpt: &mut Checkpoint) {
        ckpt.meta
            .insert(META_KEY.into(), serde_json::to_value(self).expect("meta serializes"));
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let v = ckpt
            .meta
            .get(META_KEY)
            .ok_or_else(|| Error::Checkpoint("no model description in checkpoint".into()))?;
        Ok(serde_json::from_value(v.clone())?)
    }
}

/// A model with its parameters.
#[derive(Debug, Clone)]
pub struct Trained {
    pub model: Model,
    pub store: ParamStore,
    pub meta: ModelMeta,
}

impl Trained {
    pub fn vocab(&self) -> Result<Vocab> {
        Vocab::parse(&self.meta.vocab)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::from_store(&self.store, None);
        self.meta.attach(&mut c);
        c
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub trained: Trained,
    /// Parameters, optimizer moments and [`ModelMeta`].
    pub checkpoint: Checkpoint,
    pub log: RunLog,
}

/// Rebuilds the model described by a checkpoint written by this module.
pub fn load_model(ckpt: &Checkpoint) -> Result<Trained> {
    let meta = ModelMeta::from_checkpoint(ckpt)?;
    let vocab = Vocab::parse(&meta.vocab)?;
    let mut store = ParamStore::new(stream_seed(meta.seed, "init"));
    let model = Model::new(&mut store, meta.variant, &meta.config, vocab.len(), meta.schema.len())?;
    let copied = store.load_matching(ckpt.params(), |_| false)?;
    if copied.len() != store.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint covers {} of {} parameters",
            copied.len(),
            store.len()
        )));
    }
    Ok(Trained { model, store, meta })
}

fn text_params(store: &ParamStore) -> Vec<ParamId> {
    store
        .iter()
        .filter(|(_, p)| p.name.starts_with("text."))
        .map(|(id, _)| id)
        .collect()
}

fn frozen_for(model: &Model, store: &ParamStore, cfg: &TrainConfig) -> Vec<ParamId> {
    let mut f = model.frozen_params(store);
    if cfg.freeze_text {
        f.extend(text_params(store));
    }
    f.sort();
    f.dedup();
    f
}

fn sample_rng(seed: u64, tag: &str, step: usize, pos: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(seed, &format!("{tag}/{step}/{pos}")))
}

fn labels_of(x: &ModelInput, masked: &[bool]) -> Vec<usize> {
    x.graph
        .node_elements
        .iter()
        .zip(masked)
        .filter(|(_, &m)| m)
        .map(|(e, _)| e.id())
        .collect()
}

fn check_pool(data: &Dataset, which: SplitName) -> Result<&[usize]> {
    let idx = data.indices(which);
    if idx.is_empty() {
        return Err(Error::Invalid(format!("the {which:?} split is empty").to_lowercase()));
    }
    Ok(idx)
}

/// Masked-node pretraining of the fused model (or the graph-only ablation)
/// on the training split.
pub fn pretrain_mnp(data: &Dataset, variant: Variant, model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<Outcome> {
    cfg.validate()?;
    if cfg.task != Task::Mnp {
        return Err(Error::config("train.task", format!("pretraining expects `mnp`, got `{}`", cfg.task)));
    }
    if !matches!(variant, Variant::Cast | Variant::GraphOnly) {
        return Err(Error::Invalid(format!("{variant} has no masked-node head")));
    }
    let pool = check_pool(data, SplitName::Train)?;
    let mut store = ParamStore::new(stream_seed(cfg.seed, "init"));
    let model = Model::new(&mut store, variant, model_cfg, data.vocab.len(), data.schema.len())?;
    let frozen = frozen_for(&model, &store, cfg);
    let mut engine = Engine::new(&store, cfg, &frozen)?;
    let mut order = BatchOrder::new(pool, cfg.seed);
    let mut log = RunLog::default();
    for step in 1..=cfg.total_steps {
        let batch = order.next_batch(cfg.batch_size());
        let (loss, grads) = engine.per_sample_gradients(&store, &batch, |g, pos, i| {
            let x = &data.inputs[i];
            let mut rng = sample_rng(cfg.seed, "mask", step, pos);
            let masked = sample_mask(x.graph.num_nodes(), cfg.mask_ratio, &mut rng);
            let labels = labels_of(x, &masked);
            let logits = model.mnp_logits(g, x, &masked)?;
            g.cross_entropy_masked(logits, &labels, &vec![true; labels.len()])
        })?;
        let lr = engine.apply(&mut store, &grads, step, cfg)?;
        log.push_step(step, lr, loss)?;
        if step % cfg.eval_interval == 0 || step == cfg.total_steps {
            log::info!("mnp step {step}: loss {loss:.4}");
            if !data.split.val.is_empty() {
                let acc = mnp_accuracy(&model, &store, data, &data.split.val, cfg.mask_ratio, cfg.seed)?;
                log.push_eval(step, SplitName::Val, "accuracy", acc)?;
            }
        }
    }
    log.metrics.insert("final_loss".into(), log.steps.last().map_or(f64::NAN, |s| s.loss));
    let meta = ModelMeta {
        variant,
        config: model_cfg.clone(),
        task: Task::Mnp,
        seed: cfg.seed,
        vocab: data.vocab.to_text(),
        schema: (*data.schema).clone(),
        target: None,
        step: cfg.total_steps,
    };
    let mut checkpoint = Checkpoint::from_store(&store, Some(&engine.opt));
    meta.attach(&mut checkpoint);
    Ok(Outcome {
        trained: Trained { model, store, meta },
        checkpoint,
        log,
    })
}

/// Fraction of masked nodes whose element is the arg-max of the head.
/// Masks are drawn per sample from `seed`, independent of evaluation order.
pub fn mnp_accuracy(
    model: &Model,
    store: &ParamStore,
    data: &Dataset,
    idx: &[usize],
    ratio: f64,
    seed: u64,
) -> Result<f64> {
    let counts = idx
        .par_iter()
        .map(|&i| {
            let x = &data.inputs[i];
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, &format!("eval-mask/{}", x.id)));
            let masked = sample_mask(x.graph.num_nodes(), ratio, &mut rng);
            let labels = labels_of(x, &masked);
            let mut g = crate::nn::Graph::new(store);
            let logits = model.mnp_logits(&mut g, x, &masked)?;
            let t = g.value(logits);
            let hits = (0..t.rows())
                .filter(|&r| {
                    let row = t.row(r);
                    let best = (0..row.len()).fold(0, |b, c| if row[c] > row[b] { c } else { b });
                    best == labels[r]
                })
                .count();
            Ok((hits, labels.len()))
        })
        .collect::<Result<Vec<_>>>()?;
    let (hits, total) = counts.iter().fold((0, 0), |(h, t), (a, b)| (h + a, t + b));
    if total == 0 {
        return Err(Error::Invalid("no samples to score".into()));
    }
    Ok(hits as f64 / total as f64)
}

/// Two-tower contrastive pretraining of the structure and text encoders.
pub fn pretrain_contrastive(data: &Dataset, model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<(Checkpoint, RunLog)> {
    cfg.validate()?;
    if cfg.task != Task::Contrastive {
        return Err(Error::config(
            "train.task",
            format!("contrastive pretraining expects `contrastive`, got `{}`", cfg.task),
        ));
    }
    let pool = check_pool(data, SplitName::Train)?;
    if pool.len() < 2 {
        return Err(Error::Invalid("contrastive pretraining needs at least 2 training samples".into()));
    }
    let mut store = ParamStore::new(stream_seed(cfg.seed, "init"));
    let model = ContrastiveModel::new(&mut store, model_cfg, data.vocab.len())?;
    let frozen = if cfg.freeze_text { text_params(&store) } else { Vec::new() };
    let mut engine = Engine::new(&store, cfg, &frozen)?;
    let mut order = BatchOrder::new(pool, cfg.seed);
    let mut log = RunLog::default();
    for step in 1..=cfg.total_steps {
        let batch = order.next_batch(cfg.batch_size());
        let inputs: Vec<&ModelInput> = batch.iter().map(|&i| &data.inputs[i]).collect();
        let mut g = engine.graph(&store);
        let l = model.batch_loss(&mut g, &inputs)?;
        let loss = g.value(l).item();
        let grads = g.backward(l)?;
        drop(g);
        let lr = engine.apply(&mut store, &grads, step, cfg)?;
        log.push_step(step, lr, loss)?;
        if step % cfg.eval_interval == 0 {
            log::info!("contrastive step {step}: loss {loss:.4}");
        }
    }
    log.metrics.insert("final_loss".into(), log.steps.last().map_or(f64::NAN, |s| s.loss));
    let mut checkpoint = Checkpoint::from_store(&store, Some(&engine.opt));
    checkpoint
        .meta
        .insert("contrastive.seed".into(), cfg.seed.into());
    Ok((checkpoint, log))
}

/// Names never taken from an initialization checkpoint.
fn skip_on_load(name: &str, from_contrastive: bool, cfg: &TrainConfig) -> bool {
    Model::head_prefixes().iter().any(|p| name.starts_with(p))
        || name.starts_with("cl.")
        || (from_contrastive && !cfg.transfer_text && name.starts_with("text."))
}

/// Trains a fresh regression head for `property`, starting every other
/// parameter from `init` when given and from a seeded initialization
/// otherwise. Returns the parameters with the lowest validation MAE.
pub fn finetune(
    init: Option<&Checkpoint>,
    data: &Dataset,
    variant: Variant,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<Outcome> {
    cfg.validate()?;
    let Task::Regression(property) = cfg.task else {
        return Err(Error::config("train.task", format!("fine-tuning expects `regression:<property>`, got `{}`", cfg.task)));
    };
    let pool = check_pool(data, SplitName::Train)?;
    let scale = TargetScale::fit(property, &data.targets(property, pool)?)?;
    let all: Vec<usize> = (0..data.len()).collect();
    let y: Vec<f64> = data.targets(property, &all)?.iter().map(|&v| scale.to_model(v)).collect();

    let mut store = ParamStore::new(stream_seed(cfg.seed, "init"));
    let model = Model::new(&mut store, variant, model_cfg, data.vocab.len(), data.schema.len())?;
    if let Some(ckpt) = init {
        if let Ok(meta) = ModelMeta::from_checkpoint(ckpt) {
            if meta.vocab != data.vocab.to_text() {
                return Err(Error::Checkpoint("initialization was trained with a different vocabulary".into()));
            }
        }
        let from_contrastive = ckpt.get("cl.log_tau").is_some();
        let copied = store.load_matching(ckpt.params(), |n| skip_on_load(n, from_contrastive, cfg))?;
        if copied.is_empty() {
            return Err(Error::Checkpoint(format!("initialization shares no parameters with {variant}")));
        }
        log::info!("initialized {} tensors from checkpoint", copied.len());
    }
    let frozen = frozen_for(&model, &store, cfg);
    let mut engine = Engine::new(&store, cfg, &frozen)?;
    let mut order = BatchOrder::new(pool, cfg.seed);
    let mut log = RunLog::default();
    let mut meta = ModelMeta {
        variant,
        config: model_cfg.clone(),
        task: cfg.task,
        seed: cfg.seed,
        vocab: data.vocab.to_text(),
        schema: (*data.schema).clone(),
        target: Some(scale),
        step: 0,
    };
    let mut best: Option<(f64, Checkpoint, ParamStore)> = None;
    for step in 1..=cfg.total_steps {
        let batch = order.next_batch(cfg.batch_size());
        let (loss, grads) = engine.per_sample_gradients(&store, &batch, |g, _, i| {
            let p = model.predict(g, &data.inputs[i])?;
            g.mae(p, &[y[i]])
        })?;
        let lr = engine.apply(&mut store, &grads, step, cfg)?;
        log.push_step(step, lr, loss)?;
        if (step % cfg.eval_interval == 0 || step == cfg.total_steps) && !data.split.val.is_empty() {
            let mae = score(&model, &store, scale, data, &data.split.val)?.mae;
            log::info!("{variant} step {step}: loss {loss:.4}, val MAE {mae:.4}");
            log.push_eval(step, SplitName::Val, "mae", mae)?;
            if best.as_ref().is_none_or(|(b, _, _)| mae < *b) {
                meta.step = step;
                let mut c = Checkpoint::from_store(&store, Some(&engine.opt));
                meta.attach(&mut c);
                best = Some((mae, c, store.clone()));
            }
        }
    }
    let (checkpoint, store) = match best {
        Some((mae, c, s)) => {
            log.metrics.insert("best_val_mae".into(), mae);
            (c, s)
        }
        None => {
            meta.step = cfg.total_steps;
            let mut c = Checkpoint::from_store(&store, Some(&engine.opt));
            meta.attach(&mut c);
            (c, store)
        }
    };
    meta = ModelMeta::from_checkpoint(&checkpoint)?;
    log.metrics.insert("best_step".into(), meta.step as f64);
    log.metrics.insert("final_loss".into(), log.steps.last().map_or(f64::NAN, |s| s.loss));
    Ok(Outcome {
        trained: Trained { model, store, meta },
        checkpoint,
        log,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub prediction: f64,
    pub target: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub property: Property,
    pub mae: f64,
    /// Sorted by sample id.
    pub predictions: Vec<Prediction>,
}

pub const PREDICTIONS_HEADER: &str = "id,prediction,target";

impl Evaluation {
    pub fn to_csv(&self) -> String {
        use std::fmt::Write as _;
        let mut s = format!("{PREDICTIONS_HEADER}\n");
        for p in &self.predictions {
            let _ = writeln!(s, "{},{},{}", p.id, p.prediction, p.target);
        }
        s
    }
}

/// MAE in target space (log10 for the moduli) over rows `idx`, with one
/// prediction per sample.
pub fn evaluate(trained: &Trained, data: &Dataset, idx: &[usize]) -> Result<Evaluation> {
    let scale = trained
        .meta
        .target
        .ok_or_else(|| Error::Invalid("model has no regression head".into()))?;
    if idx.is_empty() {
        return Err(Error::Invalid("nothing to evaluate".into()));
    }
    score(&trained.model, &trained.store, scale, data, idx)
}

fn score(model: &Model, store: &ParamStore, scale: TargetScale, data: &Dataset, idx: &[usize]) -> Result<Evaluation> {
    if idx.is_empty() {
        return Err(Error::Invalid("no samples to score".into()));
    }
    let targets = data.targets(scale.property, idx)?;
    let mut predictions = idx
        .par_iter()
        .zip(targets.par_iter())
        .map(|(&i, &t)| {
            let x = &data.inputs[i];
            let mut g = crate::nn::Graph::new(store);
            let p = model.predict(&mut g, x)?;
            Ok(Prediction {
                id: x.id.clone(),
                prediction: scale.from_model(g.value(p).item()),
                target: t,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    predictions.sort_by(|a, b| a.id.cmp(&b.id));
    let sum: f64 = predictions.iter().map(|p| (p.prediction - p.target).abs()).sum();
    Ok(Evaluation {
        property: scale.property,
        mae: sum / predictions.len() as f64,
        predictions,
    })
}

/// Shares a dataset's frozen vocabulary and schema with a fresh copy of the
/// corpus, e.g. for evaluating on a newly generated test set.
pub fn frozen_parts(trained: &Trained) -> Result<(Vocab, Arc<DescriptorSchema>)> {
    Ok((trained.vocab()?, Arc::new(trained.meta.schema.clone())))
}
