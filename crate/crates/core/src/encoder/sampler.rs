use rand::seq::index;
use rand::Rng;
use rustc_hash::FxHashMap;

use crate::error::{Error, Result};
use crate::kg::{Direction, EntityId, KnowledgeGraph, RelationId};

/// One sampled incidence of a destination node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampledEdge {
    /// Local index of the neighbor in [`MiniBatchGraph::nodes`].
    pub src: u32,
    pub relation: RelationId,
    pub direction: Direction,
}

/// Sampled computation graph for a set of target entities.
///
/// `nodes` lists targets first, then the nodes first reached at depth 1, 2
/// and so on. `depth_bounds[k]` is the number of nodes at depth `≤ k`. Every
/// node shallower than the sampling depth owns a CSR slice of sampled edges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MiniBatchGraph {
    pub nodes: Vec<EntityId>,
    pub depth_bounds: Vec<usize>,
    offsets: Vec<usize>,
    edges: Vec<SampledEdge>,
}

impl MiniBatchGraph {
    pub fn num_targets(&self) -> usize {
        self.depth_bounds[0]
    }

    pub fn targets(&self) -> &[EntityId] {
        &self.nodes[..self.num_targets()]
    }

    /// Sampling depth.
    pub fn hops(&self) -> usize {
        self.depth_bounds.len() - 1
    }

    /// Number of nodes that own sampled edges.
    pub fn num_sources(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn edges_of(&self, i: usize) -> &[SampledEdge] {
        &self.edges[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }
}

/// Uniform neighbor sampling without replacement over both edge directions.
///
/// Duplicate targets are dropped, keeping first occurrences. A fanout of 0
/// keeps the whole neighborhood.
pub fn sample_neighbors(
    g: &KnowledgeGraph,
    targets: &[EntityId],
    fanouts: &[usize],
    rng: &mut impl Rng,
) -> Result<MiniBatchGraph> {
    let mut local: FxHashMap<EntityId, u32> = FxHashMap::default();
    let mut nodes = Vec::with_capacity(targets.len());
    for &t in targets {
        if t as usize >= g.num_entities() {
            return Err(Error::OutOfRange {
                kind: "entity",
                id: u64::from(t),
                count: g.num_entities() as u64,
            });
        }
        if let std::collections::hash_map::Entry::Vacant(v) = local.entry(t) {
            v.insert(nodes.len() as u32);
            nodes.push(t);
        }
    }
    let mut depth_bounds = vec![nodes.len()];
    let mut offsets = vec![0];
    let mut edges = Vec::new();
    let mut start = 0;
    for &fanout in fanouts {
        let end = nodes.len();
        for i in start..end {
            let adj = g.adjacency(nodes[i]);
            let mut push = |inc: &crate::kg::Incidence| {
                let next = nodes.len() as u32;
                let src = *local.entry(inc.neighbor).or_insert(next);
                if src == next {
                    nodes.push(inc.neighbor);
                }
                edges.push(SampledEdge {
                    src,
                    relation: inc.relation,
                    direction: inc.direction,
                });
            };
            if fanout == 0 || adj.len() <= fanout {
                adj.iter().for_each(&mut push);
            } else {
                let mut picked = index::sample(rng, adj.len(), fanout).into_vec();
                picked.sort_unstable();
                picked.into_iter().for_each(|j| push(&adj[j]));
            }
            offsets.push(edges.len());
        }
        depth_bounds.push(nodes.len());
        start = end;
    }
    Ok(MiniBatchGraph {
        nodes,
        depth_bounds,
        offsets,
        edges,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::Triple;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest};
    use std::collections::HashSet;

    fn star(n: u32) -> KnowledgeGraph {
        let train = (1..n).map(|i| Triple::new(0, i % 3, i)).collect();
        KnowledgeGraph::from_triples(n as usize, 3, train, vec![], vec![]).unwrap()
    }

    #[test]
    fn isolated_target_has_no_edges() {
        let g = KnowledgeGraph::from_triples(3, 1, vec![Triple::new(0, 0, 1)], vec![], vec![]).unwrap();
        let b = sample_neighbors(&g, &[2], &[5, 5], &mut crate::seed::rng(0)).unwrap();
        assert_eq!(b.nodes, vec![2]);
        assert_eq!(b.depth_bounds, vec![1, 1, 1]);
        assert!(b.edges_of(0).is_empty());
    }

    #[test]
    fn fanout_caps_and_keeps_both_directions() {
        let g = star(40);
        let b = sample_neighbors(&g, &[0, 5], &[10], &mut crate::seed::rng(1)).unwrap();
        assert_eq!(b.num_targets(), 2);
        assert_eq!(b.edges_of(0).len(), 10);
        let e5 = b.edges_of(1);
        assert_eq!(e5.len(), 1);
        assert_eq!(b.nodes[e5[0].src as usize], 0);
        assert_eq!(e5[0].direction, Direction::In);
        let distinct: HashSet<_> = b.edges_of(0).iter().map(|e| e.src).collect();
        assert_eq!(distinct.len(), 10);
    }

    #[test]
    fn duplicate_targets_are_dropped() {
        let g = star(5);
        let b = sample_neighbors(&g, &[3, 3, 1], &[], &mut crate::seed::rng(0)).unwrap();
        assert_eq!(b.targets(), &[3, 1]);
        assert_eq!(b.hops(), 0);
        assert!(sample_neighbors(&g, &[9], &[1], &mut crate::seed::rng(0)).is_err());
    }

    proptest! {
        #[test]
        fn sampled_edges_are_real_and_bounded(seed in 0u64..500, f1 in 1usize..6, f2 in 0usize..4) {
            let mut rng = crate::seed::rng(seed);
            let n = 30;
            let train: Vec<Triple> = (0..80)
                .map(|_| Triple::new(rng.gen_range(0..n), rng.gen_range(0..4), rng.gen_range(0..n)))
                .collect();
            let g = KnowledgeGraph::from_triples(n as usize, 4, train, vec![], vec![]).unwrap();
            let b = sample_neighbors(&g, &[0, 1, 2], &[f1, f2], &mut rng).unwrap();
            prop_assert_eq!(b.depth_bounds.len(), 3);
            prop_assert_eq!(b.num_sources(), b.depth_bounds[1]);
            let uniq: HashSet<_> = b.nodes.iter().collect();
            prop_assert_eq!(uniq.len(), b.nodes.len());
            for i in 0..b.num_sources() {
                let cap = if i < b.depth_bounds[0] { f1 } else { f2 };
                let deg = g.adjacency(b.nodes[i]).len();
                let want = if cap == 0 { deg } else { deg.min(cap) };
                prop_assert_eq!(b.edges_of(i).len(), want);
                let adj: Vec<_> = g.adjacency(b.nodes[i]).iter()
                    .map(|x| (x.relation, x.neighbor, x.direction)).collect();
                for e in b.edges_of(i) {
                    prop_assert!((e.src as usize) < b.nodes.len());
                    prop_assert!(adj.contains(&(e.relation, b.nodes[e.src as usize], e.direction)));
                }
            }
        }

        #[test]
        fn sampling_is_seed_deterministic(seed in 0u64..200) {
            let g = star(60);
            let a = sample_neighbors(&g, &[0, 7], &[8, 3], &mut crate::seed::rng(seed)).unwrap();
            let b = sample_neighbors(&g, &[0, 7], &[8, 3], &mut crate::seed::rng(seed)).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
