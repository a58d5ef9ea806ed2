//! TransE embeddings: frozen global features and the scorer behind hard
//! negative selection.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::eval::{evaluate_link, EvalOptions, LinkScorer, Protocol};
use crate::io::{BinReader, BinWriter};
use crate::kg::{EntityId, KnowledgeGraph, Side, Split, Triple};
use crate::nn::Real;
use crate::seed;

const MAGIC: &[u8; 4] = b"GHEM";
/// Rejection-sampling attempts before a corruption gives up.
pub const DEFAULT_RETRIES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableKind {
    Entity,
    Relation,
}

impl TableKind {
    fn code(self) -> u8 {
        match self {
            TableKind::Entity => 0,
            TableKind::Relation => 1,
        }
    }
}

/// Row-major `rows × dim` embedding matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub kind: TableKind,
    pub rows: usize,
    pub dim: usize,
    pub data: Vec<f32>,
}

impl EmbeddingTable {
    pub fn uniform(kind: TableKind, rows: usize, dim: usize, bound: f32, rng: &mut impl Rng) -> Self {
        Self {
            kind,
            rows,
            dim,
            data: (0..rows * dim).map(|_| rng.gen_range(-bound..=bound)).collect(),
        }
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn bytes(&self) -> u64 {
        4 * (self.rows * self.dim) as u64
    }

    pub fn normalize_rows(&mut self) {
        for i in 0..self.rows {
            let row = self.row_mut(i);
            let n = row.iter().map(|v| v * v).sum::<f32>().sqrt();
            if n > 0.0 {
                row.iter_mut().for_each(|v| *v /= n);
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BinWriter::create(path)?;
        w.bytes(MAGIC)?;
        w.u8(self.kind.code())?;
        w.u64(self.rows as u64)?;
        w.u32(self.dim as u32)?;
        w.f32_slice(&self.data)?;
        w.finish()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BinReader::open(path)?;
        r.magic(MAGIC)?;
        let kind = match r.u8()? {
            0 => TableKind::Entity,
            1 => TableKind::Relation,
            k => return Err(r.format_error(format!("unknown table kind {k}"))),
        };
        let rows = r.u64()? as usize;
        let dim = r.u32()? as usize;
        if dim == 0 {
            return Err(r.format_error("embedding dim is zero"));
        }
        let data = r.f32_vec(rows * dim)?;
        r.expect_eof()?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(r.format_error("non-finite embedding entry"));
        }
        Ok(Self {
            kind,
            rows,
            dim,
            data,
        })
    }
}

/// `−‖h + r − t‖_p` for `p ∈ {1, 2}`.
pub fn transe_score<T: Real>(h: &[T], r: &[T], t: &[T], p: u8) -> Result<T> {
    if h.len() != r.len() || r.len() != t.len() {
        return Err(Error::shape(format!(
            "transe dims {} / {} / {}",
            h.len(),
            r.len(),
            t.len()
        )));
    }
    Ok(transe_score_unchecked(h, r, t, p))
}

pub(crate) fn transe_score_unchecked<T: Real>(h: &[T], r: &[T], t: &[T], p: u8) -> T {
    let it = h.iter().zip(r).zip(t).map(|((a, b), c)| *a + *b - *c);
    if p == 1 {
        -it.map(|d| d.abs()).sum::<T>()
    } else {
        -it.map(|d| d * d).sum::<T>().sqrt()
    }
}

/// `∂score/∂h`; `∂score/∂r` equals it and `∂score/∂t` is its negation.
pub fn transe_score_grad<T: Real>(h: &[T], r: &[T], t: &[T], p: u8) -> Vec<T> {
    let d: Vec<T> = h.iter().zip(r).zip(t).map(|((a, b), c)| *a + *b - *c).collect();
    if p == 1 {
        d.iter()
            .map(|&v| {
                if v > T::zero() {
                    -T::one()
                } else if v < T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            })
            .collect()
    } else {
        let n = d.iter().map(|v| *v * *v).sum::<T>().sqrt();
        if n == T::zero() {
            vec![T::zero(); d.len()]
        } else {
            d.iter().map(|v| -*v / n).collect()
        }
    }
}

/// `max(0, γ + neg − pos)`.
pub fn margin_loss<T: Real>(pos: T, neg: T, gamma: T) -> T {
    (gamma + neg - pos).max(T::zero())
}

/// Replaces `side` of `triple` with a uniform entity, resampling while the
/// result is the positive itself or any known triple.
pub fn corrupt_uniform(
    triple: &Triple,
    g: &KnowledgeGraph,
    side: Side,
    rng: &mut impl Rng,
    retries: usize,
) -> Result<Triple> {
    let n = g.num_entities() as EntityId;
    if n == 0 {
        return Err(Error::EmptyGraph("no entities to corrupt with"));
    }
    for _ in 0..retries.max(1) {
        let c = triple.with(side, rng.gen_range(0..n));
        if c != *triple && !g.is_known(&c) {
            return Ok(c);
        }
    }
    Err(Error::RetryExhausted(format!(
        "no unknown corruption of {triple:?} on {side:?} side after {retries} draws"
    )))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KgeOptimizer {
    Sgd,
    Adagrad,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransEConfig {
    pub dim: usize,
    pub gamma: f32,
    pub p_norm: u8,
    /// Upper bound on epochs.
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub optimizer: KgeOptimizer,
    pub normalize_entities: bool,
    pub seed: u64,
    /// Evaluate on valid every this many epochs (0 disables early stopping).
    pub eval_every: usize,
    /// Evaluations without improvement before stopping.
    pub patience: usize,
    /// Validation triples used for the plateau rule (`None` = all).
    pub eval_triples: Option<usize>,
}

impl Default for TransEConfig {
    fn default() -> Self {
        Self {
            dim: 100,
            gamma: 1.0,
            p_norm: 1,
            epochs: 100,
            batch_size: 1024,
            lr: 0.05,
            optimizer: KgeOptimizer::Adagrad,
            normalize_entities: true,
            seed: 0,
            eval_every: 5,
            patience: 5,
            eval_triples: None,
        }
    }
}

impl TransEConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.dim == 0 {
            errs.push("transe.dim must be >= 1".to_string());
        }
        if !(self.gamma > 0.0) {
            errs.push("transe.gamma must be > 0".to_string());
        }
        if !matches!(self.p_norm, 1 | 2) {
            errs.push("transe.p_norm must be 1 or 2".to_string());
        }
        if self.batch_size == 0 {
            errs.push("transe.batch_size must be >= 1".to_string());
        }
        if !(self.lr > 0.0) {
            errs.push("transe.lr must be > 0".to_string());
        }
        if self.eval_every > 0 && self.patience == 0 {
            errs.push("transe.patience must be >= 1".to_string());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransEModel {
    pub entities: EmbeddingTable,
    pub relations: EmbeddingTable,
    pub p_norm: u8,
}

impl TransEModel {
    pub fn init(n_entities: usize, n_relations: usize, dim: usize, p_norm: u8, seed: u64) -> Self {
        let bound = 6.0 / (dim as f32).sqrt();
        let mut rng = seed::rng(seed);
        let entities = EmbeddingTable::uniform(TableKind::Entity, n_entities, dim, bound, &mut rng);
        let relations = EmbeddingTable::uniform(TableKind::Relation, n_relations, dim, bound, &mut rng);
        Self {
            entities,
            relations,
            p_norm,
        }
    }

    pub fn dim(&self) -> usize {
        self.entities.dim
    }

    pub fn score(&self, t: &Triple) -> f32 {
        transe_score_unchecked(
            self.entities.row(t.head as usize),
            self.relations.row(t.relation as usize),
            self.entities.row(t.tail as usize),
            self.p_norm,
        )
    }

    /// Loads both tables, checking they agree with each other.
    pub fn load(entity_path: &Path, relation_path: &Path, p_norm: u8) -> Result<Self> {
        let entities = EmbeddingTable::load(entity_path)?;
        let relations = EmbeddingTable::load(relation_path)?;
        if entities.kind != TableKind::Entity || relations.kind != TableKind::Relation {
            return Err(Error::Format {
                path: entity_path.to_path_buf(),
                message: "embedding table kinds are swapped".into(),
            });
        }
        if entities.dim != relations.dim {
            return Err(Error::shape(format!(
                "entity dim {} differs from relation dim {}",
                entities.dim, relations.dim
            )));
        }
        Ok(Self {
            entities,
            relations,
            p_norm,
        })
    }
}

impl LinkScorer for TransEModel {
    fn num_entities(&self) -> usize {
        self.entities.rows
    }

    fn score_candidates(&self, q: &Triple, side: Side, candidates: &[EntityId], out: &mut [f32]) {
        let r = self.relations.row(q.relation as usize);
        // tail: −‖(h + r) − e‖; head: −‖e − (t − r)‖
        let anchor: Vec<f32> = match side {
            Side::Tail => self.entities.row(q.head as usize).iter().zip(r).map(|(a, b)| a + b).collect(),
            Side::Head => self.entities.row(q.tail as usize).iter().zip(r).map(|(a, b)| a - b).collect(),
        };
        for (o, &e) in out.iter_mut().zip(candidates) {
            let row = self.entities.row(e as usize);
            *o = if self.p_norm == 1 {
                -anchor.iter().zip(row).map(|(a, b)| (a - b).abs()).sum::<f32>()
            } else {
                -anchor.iter().zip(row).map(|(a, b)| (a - b) * (a - b)).sum::<f32>().sqrt()
            };
        }
    }

    fn score_all(&self, q: &Triple, side: Side, out: &mut [f32]) {
        let r = self.relations.row(q.relation as usize);
        let anchor: Vec<f32> = match side {
            Side::Tail => self.entities.row(q.head as usize).iter().zip(r).map(|(a, b)| a + b).collect(),
            Side::Head => self.entities.row(q.tail as usize).iter().zip(r).map(|(a, b)| a - b).collect(),
        };
        let d = self.entities.dim;
        for (o, row) in out.iter_mut().zip(self.entities.data.chunks_exact(d)) {
            *o = if self.p_norm == 1 {
                -anchor.iter().zip(row).map(|(a, b)| (a - b).abs()).sum::<f32>()
            } else {
                -anchor.iter().zip(row).map(|(a, b)| (a - b) * (a - b)).sum::<f32>().sqrt()
            };
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TransEHistory {
    /// Mean margin loss per epoch.
    pub epoch_loss: Vec<f64>,
    /// `(epoch, validation MRR)` at each evaluation.
    pub valid_mrr: Vec<(usize, f64)>,
    pub best_epoch: usize,
    pub seconds: f64,
}

/// Sparse-row optimizer state for one table.
struct RowOptimizer {
    kind: KgeOptimizer,
    lr: f32,
    accum: Vec<f32>,
}

impl RowOptimizer {
    fn new(kind: KgeOptimizer, lr: f32, len: usize) -> Self {
        let accum = match kind {
            KgeOptimizer::Sgd => Vec::new(),
            KgeOptimizer::Adagrad => vec![0.0; len],
        };
        Self { kind, lr, accum }
    }

    fn apply(&mut self, table: &mut EmbeddingTable, grad: &mut [f32], touched: &mut Vec<usize>) {
        let d = table.dim;
        touched.sort_unstable();
        touched.dedup();
        for &row in touched.iter() {
            let span = row * d..(row + 1) * d;
            let g = &mut grad[span.clone()];
            let v = &mut table.data[span.clone()];
            match self.kind {
                KgeOptimizer::Sgd => {
                    for (x, gi) in v.iter_mut().zip(g.iter()) {
                        *x -= self.lr * gi;
                    }
                }
                KgeOptimizer::Adagrad => {
                    let acc = &mut self.accum[span];
                    for ((x, gi), a) in v.iter_mut().zip(g.iter()).zip(acc.iter_mut()) {
                        *a += gi * gi;
                        *x -= self.lr * gi / (a.sqrt() + 1e-10);
                    }
                }
            }
            g.iter_mut().for_each(|x| *x = 0.0);
        }
        touched.clear();
    }
}

fn add_scaled(dst: &mut [f32], src: &[f32], s: f32) {
    for (a, b) in dst.iter_mut().zip(src) {
        *a += s * b;
    }
}

/// Runs one epoch and returns the mean margin loss.
fn run_epoch(
    model: &mut TransEModel,
    g: &KnowledgeGraph,
    cfg: &TransEConfig,
    epoch: usize,
    order: &mut [usize],
    opt_e: &mut RowOptimizer,
    opt_r: &mut RowOptimizer,
    grad_e: &mut [f32],
    grad_r: &mut [f32],
) -> Result<f64> {
    let d = cfg.dim;
    let p = cfg.p_norm;
    let mut rng = seed::rng(seed::derive_indexed(cfg.seed, &[epoch as u64]));
    order.shuffle(&mut rng);
    let (mut touched_e, mut touched_r) = (Vec::new(), Vec::new());
    let mut total = 0.0f64;
    let mut dpos = vec![0.0f32; d];
    let mut dneg = vec![0.0f32; d];
    for chunk in order.chunks(cfg.batch_size) {
        for &i in chunk {
            let pos = g.train[i];
            let side = if rng.gen::<bool>() { Side::Head } else { Side::Tail };
            let neg = corrupt_uniform(&pos, g, side, &mut rng, DEFAULT_RETRIES)?;
            let sp = model.score(&pos);
            let sn = model.score(&neg);
            let loss = margin_loss(sp, sn, cfg.gamma);
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "transe loss at epoch {epoch} for triple {pos:?}"
                )));
            }
            total += f64::from(loss);
            if loss <= 0.0 {
                continue;
            }
            // loss = γ + s(neg) − s(pos); ∂s/∂h = g, ∂s/∂r = g, ∂s/∂t = −g
            let ent = &model.entities;
            let rel = &model.relations;
            let gp = transe_score_grad(ent.row(pos.head as usize), rel.row(pos.relation as usize), ent.row(pos.tail as usize), p);
            let gn = transe_score_grad(ent.row(neg.head as usize), rel.row(neg.relation as usize), ent.row(neg.tail as usize), p);
            dpos.copy_from_slice(&gp);
            dneg.copy_from_slice(&gn);
            let row = |e: EntityId| e as usize * d..(e as usize + 1) * d;
            add_scaled(&mut grad_e[row(pos.head)], &dpos, -1.0);
            add_scaled(&mut grad_e[row(pos.tail)], &dpos, 1.0);
            add_scaled(&mut grad_e[row(neg.head)], &dneg, 1.0);
            add_scaled(&mut grad_e[row(neg.tail)], &dneg, -1.0);
            let rr = pos.relation as usize * d..(pos.relation as usize + 1) * d;
            add_scaled(&mut grad_r[rr.clone()], &dpos, -1.0);
            add_scaled(&mut grad_r[rr], &dneg, 1.0);
            touched_e.extend([pos.head, pos.tail, neg.head, neg.tail].map(|e| e as usize));
            touched_r.push(pos.relation as usize);
        }
        opt_e.apply(&mut model.entities, grad_e, &mut touched_e);
        opt_r.apply(&mut model.relations, grad_r, &mut touched_r);
    }
    if cfg.normalize_entities {
        model.entities.normalize_rows();
    }
    Ok(total / g.train.len() as f64)
}

/// Trains TransE with one filtered uniform corruption per positive. With a
/// non-empty valid split and `eval_every > 0`, training stops once validation
/// MRR has not improved for `patience` evaluations and the best tables are
/// returned.
pub fn train_transe(g: &KnowledgeGraph, cfg: &TransEConfig) -> Result<(TransEModel, TransEHistory)> {
    cfg.validate()?;
    if g.train.is_empty() {
        return Err(Error::EmptySplit("train"));
    }
    let start = std::time::Instant::now();
    let mut model = TransEModel::init(
        g.num_entities(),
        g.num_relations(),
        cfg.dim,
        cfg.p_norm,
        seed::derive(cfg.seed, "transe-init"),
    );
    let mut hist = TransEHistory::default();
    let mut order: Vec<usize> = (0..g.train.len()).collect();
    let mut opt_e = RowOptimizer::new(cfg.optimizer, cfg.lr, model.entities.data.len());
    let mut opt_r = RowOptimizer::new(cfg.optimizer, cfg.lr, model.relations.data.len());
    let mut grad_e = vec![0.0f32; model.entities.data.len()];
    let mut grad_r = vec![0.0f32; model.relations.data.len()];
    let early = cfg.eval_every > 0 && !g.valid.is_empty();
    let eval_opts = EvalOptions {
        protocol: Protocol::Exhaustive,
        tail_only: false,
        max_triples: cfg.eval_triples,
    };
    let mut best: Option<(f64, TransEModel)> = None;
    let mut stale = 0;
    for epoch in 0..cfg.epochs {
        let loss = run_epoch(
            &mut model, g, cfg, epoch, &mut order, &mut opt_e, &mut opt_r, &mut grad_e, &mut grad_r,
        )?;
        hist.epoch_loss.push(loss);
        log::debug!("transe epoch {epoch}: loss {loss:.5}");
        if early && (epoch + 1) % cfg.eval_every == 0 {
            let mrr = evaluate_link(&model, g, Split::Valid, &eval_opts)?.mrr;
            log::info!("transe epoch {}: loss {loss:.5}, valid mrr {mrr:.4}", epoch + 1);
            hist.valid_mrr.push((epoch + 1, mrr));
            if best.as_ref().map_or(true, |(b, _)| mrr > *b) {
                best = Some((mrr, model.clone()));
                hist.best_epoch = epoch + 1;
                stale = 0;
            } else {
                stale += 1;
                if stale >= cfg.patience {
                    break;
                }
            }
        } else {
            hist.best_epoch = epoch + 1;
        }
    }
    hist.seconds = start.elapsed().as_secs_f64();
    let model = match best {
        Some((_, m)) if early => m,
        _ => model,
    };
    Ok((model, hist))
}
