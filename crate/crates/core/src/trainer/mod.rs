//! Mini-batch training of fusion, encoder and task head with per-group
//! AdamW, gradient clipping, fusion warmup and early stopping.

mod batch;
mod model;

pub use batch::{prepare_link_batch, prepare_node_batch, LinkBatch, NodeBatch, PrepContext};
pub use model::{Model, ModelConfig, TaskHead};

use std::sync::mpsc::sync_channel;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::decoders::{link_loss, EmbeddingScorer};
use crate::encoder::sample_neighbors;
use crate::error::{Error, Result};
use crate::eval::{evaluate_link, EvalOptions, Protocol, RankingReport};
use crate::fusion::FeatureStore;
use crate::kg::{EntityId, KnowledgeGraph, NodeLabels, Split};
use crate::negatives::{self_adversarial_weights, NegativeConfig, NegativeMode};
use crate::nn::{clip_global_norm, softmax_xent, AdamW, AdamWConfig, Matrix, Mode, Module};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Link,
    Node,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub task: Task,
    pub batch_size: usize,
    pub epochs: usize,
    /// Validate every this many epochs.
    pub eval_interval: usize,
    /// Validations without improvement before stopping.
    pub patience: usize,
    pub lr_fusion: f64,
    pub lr_encoder: f64,
    pub lr_decoder: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    /// Run one fusion-only pass before joint training.
    pub warmup: bool,
    /// Fusion learning rate during joint training, relative to `lr_fusion`,
    /// once warmup has run.
    pub joint_fusion_factor: f64,
    pub negatives: NegativeConfig,
    /// Sampled-candidate validation with this many negatives; exhaustive when unset.
    pub eval_sampled: Option<usize>,
    /// Validate on at most this many triples.
    pub eval_max_triples: Option<usize>,
    /// Entities encoded per chunk at evaluation time.
    pub eval_chunk: usize,
    /// Prepared batches buffered ahead of the optimizer.
    pub prefetch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            task: Task::Link,
            batch_size: 1024,
            epochs: 50,
            eval_interval: 1,
            patience: 5,
            lr_fusion: 1e-3,
            lr_encoder: 1e-3,
            lr_decoder: 1e-3,
            weight_decay: 0.0,
            grad_clip: 10.0,
            warmup: true,
            joint_fusion_factor: 0.1,
            negatives: NegativeConfig::default(),
            eval_sampled: None,
            eval_max_triples: None,
            eval_chunk: 4096,
            prefetch: 2,
        }
    }
}

impl TrainConfig {
    pub fn errors(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let pos = |v: usize, name: &str, errs: &mut Vec<String>| {
            if v == 0 {
                errs.push(format!("train.{name} must be >= 1"));
            }
        };
        pos(self.batch_size, "batch_size", &mut errs);
        pos(self.eval_interval, "eval_interval", &mut errs);
        pos(self.eval_chunk, "eval_chunk", &mut errs);
        for (name, v) in [
            ("lr_fusion", self.lr_fusion),
            ("lr_encoder", self.lr_encoder),
            ("lr_decoder", self.lr_decoder),
            ("grad_clip", self.grad_clip),
        ] {
            if !(v.is_finite() && v > 0.0) {
                errs.push(format!("train.{name} must be a positive number, got {v}"));
            }
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            errs.push(format!("train.weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if !(self.joint_fusion_factor.is_finite() && self.joint_fusion_factor >= 0.0) {
            errs.push("train.joint_fusion_factor must be >= 0".into());
        }
        if self.eval_sampled == Some(0) {
            errs.push("train.eval_sampled must be >= 1 when set".into());
        }
        if self.task == Task::Link {
            errs.extend(self.negatives.errors());
        }
        errs
    }

    pub fn protocol(&self, seed: u64) -> Protocol {
        match self.eval_sampled {
            Some(n) => Protocol::Sampled {
                n,
                seed: seed::derive(seed, "eval-sampled"),
            },
            None => Protocol::Exhaustive,
        }
    }
}

/// Inputs shared by every batch.
#[derive(Clone, Copy)]
pub struct TaskData<'a> {
    pub graph: &'a KnowledgeGraph,
    pub features: &'a FeatureStore,
    pub labels: Option<&'a NodeLabels>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: String,
    pub loss: f64,
    pub lr_fusion: f64,
    pub lr_encoder: f64,
    pub lr_decoder: f64,
    /// Validation MRR or accuracy when validated this epoch.
    pub valid: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub records: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_valid: Option<f64>,
    pub stopped_early: bool,
}

impl History {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain struct serializes")
    }
}

/// One optimizer per parameter group: fusion, encoder plus ID embedding, head.
struct Optimizers {
    groups: [AdamW; 3],
}

impl Optimizers {
    fn new(cfg: &TrainConfig, fusion_lr: f64) -> Self {
        let make = |lr| {
            AdamW::new(AdamWConfig {
                lr,
                weight_decay: cfg.weight_decay,
                ..AdamWConfig::default()
            })
        };
        Self {
            groups: [make(fusion_lr), make(cfg.lr_encoder), make(cfg.lr_decoder)],
        }
    }

    fn lrs(&self) -> [f64; 3] {
        [self.groups[0].lr(), self.groups[1].lr(), self.groups[2].lr()]
    }

    /// Clips the global norm over all groups, then steps the enabled ones.
    fn step(&mut self, model: &mut Model<f32>, enabled: [bool; 3], clip: f64) -> Result<()> {
        {
            let mut all = model.params_mut();
            clip_global_norm(&mut all, clip);
        }
        let groups = model.groups_mut();
        for ((opt, mut params), on) in self.groups.iter_mut().zip(groups).zip(enabled) {
            if on {
                opt.step(&mut params)?;
            }
        }
        Ok(())
    }
}

/// Runs `prepare` for every batch on a producer thread, handing results to
/// `consume` in order through a bounded channel.
fn pipelined<B: Send>(
    n_batches: usize,
    prefetch: usize,
    prepare: &(dyn Fn(usize) -> Result<B> + Sync),
    mut consume: impl FnMut(usize, B) -> Result<()>,
) -> Result<()> {
    std::thread::scope(|s| {
        let (tx, rx) = sync_channel::<Result<B>>(prefetch.max(1));
        s.spawn(move || {
            for i in 0..n_batches {
                let r = prepare(i);
                let failed = r.is_err();
                if tx.send(r).is_err() || failed {
                    break;
                }
            }
        });
        for i in 0..n_batches {
            let b = rx
                .recv()
                .map_err(|_| Error::Internal("batch producer stopped early".into()))??;
            consume(i, b)?;
        }
        Ok(())
    })
}

fn batch_ranges(n: usize, size: usize) -> Vec<(usize, usize)> {
    (0..n).step_by(size).map(|s| (s, (s + size).min(n))).collect()
}

fn link_step(model: &mut Model<f32>, b: &LinkBatch, cfg: &TrainConfig, dropout_seed: u64) -> Result<f64> {
    let mut rng = seed::rng(dropout_seed);
    let (h0, ftape) = model.fusion.forward(&b.inputs.as_input(), Mode::Train, &mut rng)?;
    let (z, etape) = model.encoder.forward(&b.graph, &h0)?;
    let TaskHead::Link(head) = &mut model.head else {
        return Err(Error::invalid("link training needs a relation head"));
    };
    let pos = head.score_batch(&z, &b.pos)?;
    let neg = Matrix::from_vec(b.pos.len(), b.k, head.score_batch(&z, &b.neg)?)?;
    let mut w = Matrix::zeros(b.pos.len(), b.k);
    for i in 0..b.pos.len() {
        let row: Vec<f64> = match cfg.negatives.mode {
            NegativeMode::Filtered => vec![1.0 / b.k as f64; b.k],
            NegativeMode::SelfAdv | NegativeMode::TranseGuided => {
                let s: Vec<f64> = neg.row(i).iter().map(|v| f64::from(*v)).collect();
                self_adversarial_weights(&s, cfg.negatives.alpha)
            }
        };
        for (k, v) in row.iter().enumerate() {
            w.set(i, k, *v as f32);
        }
    }
    let (loss, gpos, gneg) = link_loss(&pos, &neg, &w, head.gamma)?;
    let mut gz = Matrix::zeros(z.rows(), z.cols());
    head.backward_batch(&z, &b.pos, &gpos, &mut gz)?;
    head.backward_batch(&z, &b.neg, gneg.data(), &mut gz)?;
    let gh0 = model.encoder.backward(&b.graph, &etape, &gz)?;
    model.fusion.backward(&ftape, &gh0)?;
    Ok(f64::from(loss))
}

fn node_step(model: &mut Model<f32>, b: &NodeBatch, dropout_seed: u64) -> Result<f64> {
    let mut rng = seed::rng(dropout_seed);
    let (h0, ftape) = model.fusion.forward(&b.inputs.as_input(), Mode::Train, &mut rng)?;
    let (z, etape) = model.encoder.forward(&b.graph, &h0)?;
    let TaskHead::Node(head) = &mut model.head else {
        return Err(Error::invalid("node training needs a classifier head"));
    };
    let (logits, ctape) = head.forward(&z)?;
    let (loss, g) = softmax_xent(&logits, &b.labels)?;
    let gz = head.backward(&ctape, &g)?;
    let gh0 = model.encoder.backward(&b.graph, &etape, &gz)?;
    model.fusion.backward(&ftape, &gh0)?;
    Ok(f64::from(loss))
}

/// One pass over the training items, stepping the enabled groups.
fn run_epoch(
    model: &mut Model<f32>,
    data: TaskData<'_>,
    cfg: &TrainConfig,
    opt: &mut Optimizers,
    enabled: [bool; 3],
    epoch: u64,
    seed: u64,
) -> Result<f64> {
    let ctx = PrepContext {
        graph: data.graph,
        features: data.features,
        branches: model.fusion.config.branches,
        fanouts: model.fanouts(),
        negatives: &cfg.negatives,
        seed,
    };
    let mut total = 0.0;
    let mut count = 0usize;
    match cfg.task {
        Task::Link => {
            let train = data.graph.split(Split::Train);
            if train.is_empty() {
                return Err(Error::EmptySplit("train"));
            }
            let mut order: Vec<usize> = (0..train.len()).collect();
            order.shuffle(&mut seed::rng(seed::derive_indexed(seed::derive(seed, "shuffle"), &[epoch])));
            let ranges = batch_ranges(order.len(), cfg.batch_size);
            let prepare = |i: usize| {
                let (s, e) = ranges[i];
                prepare_link_batch(&ctx, &order[s..e], epoch, i as u64)
            };
            pipelined(ranges.len(), cfg.prefetch, &prepare, |i, b| {
                model.zero_grad();
                let ds = seed::derive_indexed(seed::derive(seed, "dropout"), &[epoch, i as u64]);
                let loss = link_step(model, &b, cfg, ds)?;
                opt.step(model, enabled, cfg.grad_clip)?;
                total += loss * b.pos.len() as f64;
                count += b.pos.len();
                Ok(())
            })?;
        }
        Task::Node => {
            let labels = data.labels.ok_or_else(|| Error::invalid("node task needs labels"))?;
            let mut nodes = labels.nodes(Split::Train);
            if nodes.is_empty() {
                return Err(Error::EmptySplit("labeled train nodes"));
            }
            nodes.shuffle(&mut seed::rng(seed::derive_indexed(seed::derive(seed, "shuffle"), &[epoch])));
            let ranges = batch_ranges(nodes.len(), cfg.batch_size);
            let prepare = |i: usize| {
                let (s, e) = ranges[i];
                prepare_node_batch(&ctx, labels, &nodes[s..e], epoch, i as u64)
            };
            pipelined(ranges.len(), cfg.prefetch, &prepare, |i, b| {
                model.zero_grad();
                let ds = seed::derive_indexed(seed::derive(seed, "dropout"), &[epoch, i as u64]);
                let loss = node_step(model, &b, ds)?;
                opt.step(model, enabled, cfg.grad_clip)?;
                total += loss * b.labels.len() as f64;
                count += b.labels.len();
                Ok(())
            })?;
        }
    }
    let mean = total / count.max(1) as f64;
    if !mean.is_finite() {
        return Err(Error::NonFinite(format!("training loss in epoch {epoch}")));
    }
    Ok(mean)
}

/// Embeddings of `ids` in eval mode, encoded in chunks with a fixed
/// neighbor-sampling seed.
pub fn encode_nodes(model: &Model<f32>, data: TaskData<'_>, ids: &[EntityId], chunk: usize, seed: u64) -> Result<Matrix<f32>> {
    let fanouts = model.fanouts();
    let dim = model.encoder.out_dim();
    let mut out = Matrix::zeros(ids.len(), dim);
    let eval_seed = seed::derive(seed, "eval-sampling");
    let mut dropout_rng = seed::rng(0);
    for (c, part) in ids.chunks(chunk.max(1)).enumerate() {
        let mut rng = seed::rng(seed::derive_indexed(eval_seed, &[c as u64]));
        let graph = sample_neighbors(data.graph, part, &fanouts, &mut rng)?;
        let need = graph.depth_bounds[model.encoder.depth()];
        let inputs = data.features.gather::<f32>(&graph.nodes[..need], &model.fusion.config.branches)?;
        let (h0, _) = model.fusion.forward(&inputs.as_input(), Mode::Eval, &mut dropout_rng)?;
        let (z, _) = model.encoder.forward(&graph, &h0)?;
        // duplicates in `part` collapse in the batch graph
        let mut pos = rustc_hash::FxHashMap::default();
        for (i, &e) in graph.targets().iter().enumerate() {
            pos.insert(e, i);
        }
        let base = c * chunk.max(1);
        for (i, e) in part.iter().enumerate() {
            out.row_mut(base + i).copy_from_slice(z.row(pos[e]));
        }
    }
    Ok(out)
}

pub fn encode_all(model: &Model<f32>, data: TaskData<'_>, chunk: usize, seed: u64) -> Result<Matrix<f32>> {
    let ids: Vec<EntityId> = (0..data.graph.num_entities() as EntityId).collect();
    encode_nodes(model, data, &ids, chunk, seed)
}

/// Filtered ranking of `split` with the model's relation head.
pub fn evaluate_link_model(
    model: &Model<f32>,
    data: TaskData<'_>,
    split: Split,
    opts: &EvalOptions,
    chunk: usize,
    seed: u64,
) -> Result<RankingReport> {
    let TaskHead::Link(head) = &model.head else {
        return Err(Error::invalid("link evaluation needs a relation head"));
    };
    let emb = encode_all(model, data, chunk, seed)?;
    let scorer = EmbeddingScorer {
        embeddings: &emb,
        head,
    };
    evaluate_link(&scorer, data.graph, split, opts)
}

/// Predicted classes for `nodes`.
pub fn predict_nodes(model: &Model<f32>, data: TaskData<'_>, nodes: &[EntityId], chunk: usize, seed: u64) -> Result<Vec<usize>> {
    let TaskHead::Node(head) = &model.head else {
        return Err(Error::invalid("node prediction needs a classifier head"));
    };
    let z = encode_nodes(model, data, nodes, chunk, seed)?;
    let logits = head.forward(&z)?.0;
    Ok((0..logits.rows())
        .map(|i| {
            let row = logits.row(i);
            (0..row.len()).fold(0, |best, j| if row[j] > row[best] { j } else { best })
        })
        .collect())
}

/// Accuracy on the labeled nodes of `split`.
pub fn evaluate_node_model(model: &Model<f32>, data: TaskData<'_>, split: Split, chunk: usize, seed: u64) -> Result<f64> {
    let labels = data.labels.ok_or_else(|| Error::invalid("node evaluation needs labels"))?;
    let nodes = labels.nodes(split);
    crate::eval::evaluate_classification(&nodes, &|e| labels.label(e), &mut |ns| {
        predict_nodes(model, data, ns, chunk, seed)
    })
}

fn validate_model(model: &Model<f32>, data: TaskData<'_>, cfg: &TrainConfig, seed: u64) -> Result<f64> {
    match cfg.task {
        Task::Link => {
            let opts = EvalOptions {
                protocol: cfg.protocol(seed),
                tail_only: false,
                max_triples: cfg.eval_max_triples,
            };
            Ok(evaluate_link_model(model, data, Split::Valid, &opts, cfg.eval_chunk, seed)?.mrr)
        }
        Task::Node => evaluate_node_model(model, data, Split::Valid, cfg.eval_chunk, seed),
    }
}

/// One fusion-only pass; encoder and head stay untouched.
pub fn warmup(model: &mut Model<f32>, data: TaskData<'_>, cfg: &TrainConfig, seed: u64) -> Result<EpochRecord> {
    let mut opt = Optimizers::new(cfg, cfg.lr_fusion);
    let lrs = opt.lrs();
    let loss = run_epoch(model, data, cfg, &mut opt, [true, false, false], 0, seed::derive(seed, "warmup"))?;
    log::info!("warmup loss {loss:.5}");
    Ok(EpochRecord {
        epoch: 0,
        phase: "warmup".into(),
        loss,
        lr_fusion: lrs[0],
        lr_encoder: 0.0,
        lr_decoder: 0.0,
        valid: None,
    })
}

/// Joint training with early stopping. The model ends at its best
/// validation checkpoint. `warmed` selects the reduced joint fusion rate.
pub fn train(model: &mut Model<f32>, data: TaskData<'_>, cfg: &TrainConfig, seed: u64, warmed: bool) -> Result<History> {
    let errs = cfg.errors();
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    if cfg.task == Task::Link {
        cfg.negatives.validate()?;
    }
    let fusion_lr = if warmed { cfg.lr_fusion * cfg.joint_fusion_factor } else { cfg.lr_fusion };
    let mut opt = Optimizers::new(cfg, fusion_lr);
    let mut history = History::default();
    let mut best: Option<(f64, Model<f32>)> = None;
    let mut stale = 0;
    let train_seed = seed::derive(seed, "train");
    for epoch in 1..=cfg.epochs {
        let loss = run_epoch(model, data, cfg, &mut opt, [true, true, true], epoch as u64, train_seed)?;
        let lrs = opt.lrs();
        let mut rec = EpochRecord {
            epoch,
            phase: "joint".into(),
            loss,
            lr_fusion: lrs[0],
            lr_encoder: lrs[1],
            lr_decoder: lrs[2],
            valid: None,
        };
        let validate = epoch % cfg.eval_interval == 0 || epoch == cfg.epochs;
        if validate && has_validation(data, cfg) {
            let v = validate_model(model, data, cfg, seed)?;
            log::info!("epoch {epoch} loss {loss:.5} valid {v:.4}");
            rec.valid = Some(v);
            if best.as_ref().map_or(true, |(b, _)| v > *b) {
                best = Some((v, model.clone()));
                history.best_epoch = Some(epoch);
                history.best_valid = Some(v);
                stale = 0;
            } else {
                stale += 1;
            }
        } else {
            log::info!("epoch {epoch} loss {loss:.5}");
        }
        history.records.push(rec);
        if stale >= cfg.patience && cfg.patience > 0 {
            history.stopped_early = true;
            break;
        }
    }
    if let Some((_, m)) = best {
        *model = m;
    }
    Ok(history)
}

fn has_validation(data: TaskData<'_>, cfg: &TrainConfig) -> bool {
    match cfg.task {
        Task::Link => !data.graph.split(Split::Valid).is_empty(),
        Task::Node => data.labels.is_some_and(|l| !l.nodes(Split::Valid).is_empty()),
    }
}

/// Warmup (when enabled and the model has frozen-feature branches) followed
/// by joint training.
pub fn fit(model: &mut Model<f32>, data: TaskData<'_>, cfg: &TrainConfig, seed: u64) -> Result<History> {
    let warm = cfg.warmup && model.fusion.config.branches.count() > 0;
    let record = if warm { Some(warmup(model, data, cfg, seed)?) } else { None };
    let mut history = train(model, data, cfg, seed, warm)?;
    if let Some(r) = record {
        history.records.insert(0, r);
    }
    Ok(history)
}
