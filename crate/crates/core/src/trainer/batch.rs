use rustc_hash::FxHashMap;

use crate::encoder::{sample_neighbors, MiniBatchGraph};
use crate::error::{Error, Result};
use crate::eval::LinkScorer;
use crate::fusion::{Branches, FeatureStore, Gathered};
use crate::kg::{EntityId, KnowledgeGraph, NodeLabels, Split, Triple};
use crate::negatives::{sample_negatives, substream, NegativeConfig, NegativeMode};
use crate::seed;

/// Everything batch preparation reads. None of it depends on trainable
/// parameters, so batches can be built ahead of the optimizer.
pub struct PrepContext<'a> {
    pub graph: &'a KnowledgeGraph,
    pub features: &'a FeatureStore,
    pub branches: Branches,
    pub fanouts: Vec<usize>,
    pub negatives: &'a NegativeConfig,
    pub seed: u64,
}

/// Positives, negatives and the sampled subgraph over their entities.
pub struct LinkBatch {
    pub graph: MiniBatchGraph,
    pub inputs: Gathered<f32>,
    /// `(head row, relation, tail row)` into the target embeddings.
    pub pos: Vec<(usize, u32, usize)>,
    /// `k` negatives per positive, row-major.
    pub neg: Vec<(usize, u32, usize)>,
    pub k: usize,
}

pub struct NodeBatch {
    pub graph: MiniBatchGraph,
    pub inputs: Gathered<f32>,
    pub labels: Vec<usize>,
}

fn subgraph(ctx: &PrepContext<'_>, targets: &[EntityId], epoch: u64, batch: u64) -> Result<(MiniBatchGraph, Gathered<f32>)> {
    let mut rng = seed::rng(seed::derive_indexed(seed::derive(ctx.seed, "neighbors"), &[epoch, batch]));
    let graph = sample_neighbors(ctx.graph, targets, &ctx.fanouts, &mut rng)?;
    let need = graph.depth_bounds[ctx.fanouts.len()];
    let inputs = ctx.features.gather(&graph.nodes[..need], &ctx.branches)?;
    Ok((graph, inputs))
}

/// Builds the batch of training triples at positions `indices` of the train
/// split. Negatives of each positive come from its own RNG substream.
pub fn prepare_link_batch(ctx: &PrepContext<'_>, indices: &[usize], epoch: u64, batch: u64) -> Result<LinkBatch> {
    let train = ctx.graph.split(Split::Train);
    let guide: Option<&dyn LinkScorer> = match ctx.negatives.mode {
        NegativeMode::TranseGuided => Some(
            ctx.features
                .transe
                .as_ref()
                .ok_or_else(|| Error::invalid("guided negatives need TransE embeddings"))?,
        ),
        _ => None,
    };
    let neg_seed = seed::derive(ctx.seed, "negatives");
    let mut targets: Vec<EntityId> = Vec::new();
    let mut local: FxHashMap<EntityId, usize> = FxHashMap::default();
    let mut slot = |e: EntityId, targets: &mut Vec<EntityId>| {
        *local.entry(e).or_insert_with(|| {
            targets.push(e);
            targets.len() - 1
        })
    };
    let mut pos = Vec::with_capacity(indices.len());
    let mut neg = Vec::with_capacity(indices.len() * ctx.negatives.k);
    for &i in indices {
        let t: &Triple = train
            .get(i)
            .ok_or_else(|| Error::Internal(format!("train index {i} out of range")))?;
        let mut rng = substream(neg_seed, epoch, i as u64);
        let negs = sample_negatives(t, ctx.graph, ctx.negatives, guide, &mut rng)?;
        pos.push((slot(t.head, &mut targets), t.relation, slot(t.tail, &mut targets)));
        for n in negs {
            neg.push((slot(n.head, &mut targets), n.relation, slot(n.tail, &mut targets)));
        }
    }
    let (graph, inputs) = subgraph(ctx, &targets, epoch, batch)?;
    Ok(LinkBatch {
        graph,
        inputs,
        pos,
        neg,
        k: ctx.negatives.k,
    })
}

/// Batch of distinct labeled nodes.
pub fn prepare_node_batch(
    ctx: &PrepContext<'_>,
    labels: &NodeLabels,
    nodes: &[EntityId],
    epoch: u64,
    batch: u64,
) -> Result<NodeBatch> {
    let y = nodes
        .iter()
        .map(|&n| labels.label(n).ok_or_else(|| Error::invalid(format!("node {n} has no label"))))
        .collect::<Result<Vec<_>>>()?;
    let (graph, inputs) = subgraph(ctx, nodes, epoch, batch)?;
    if graph.num_targets() != nodes.len() {
        return Err(Error::invalid("node batch lists an entity twice"));
    }
    Ok(NodeBatch {
        graph,
        inputs,
        labels: y,
    })
}
