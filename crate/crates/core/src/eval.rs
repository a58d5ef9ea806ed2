//! Filtered link-prediction ranking and node-classification accuracy.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, Side, Split, Triple};
use crate::seed;

/// Scores candidate completions of a query triple.
///
/// For `Side::Tail` the candidate `e` forms `(h, r, e)`; for `Side::Head` it
/// forms `(e, r, t)`. Higher is better.
pub trait LinkScorer {
    fn num_entities(&self) -> usize;

    fn score_candidates(&self, query: &Triple, side: Side, candidates: &[EntityId], out: &mut [f32]);

    /// Scores every entity; `out.len()` equals the entity count.
    fn score_all(&self, query: &Triple, side: Side, out: &mut [f32]) {
        let all: Vec<EntityId> = (0..self.num_entities() as EntityId).collect();
        self.score_candidates(query, side, &all, out);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Protocol {
    Exhaustive,
    /// `n` filtered negatives per query, fixed by `(seed, query)`.
    Sampled { n: usize, seed: u64 },
}

impl Protocol {
    pub fn label(&self) -> String {
        match self {
            Protocol::Exhaustive => "exhaustive".into(),
            Protocol::Sampled { n, .. } => format!("sampled({n})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalOptions {
    pub protocol: Protocol,
    /// Only rank tail predictions.
    pub tail_only: bool,
    /// Evaluate at most this many triples from the front of the split.
    pub max_triples: Option<usize>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            protocol: Protocol::Exhaustive,
            tail_only: false,
            max_triples: None,
        }
    }
}

/// `1 + greater + ceil(ties / 2)`, the mean rank of the tied block rounded
/// half up.
pub fn rank_from_counts(greater: u64, ties: u64) -> u64 {
    1 + greater + ties.div_ceil(2)
}

fn side_code(side: Side) -> u64 {
    match side {
        Side::Head => 0,
        Side::Tail => 1,
    }
}

/// Candidate entities for a sampled query: every entity except the truth
/// whose triple is not known, drawn down to `n` without replacement.
pub fn sampled_candidates(
    query: &Triple,
    side: Side,
    g: &KnowledgeGraph,
    n: usize,
    seed: u64,
) -> Vec<EntityId> {
    let truth = query.entity(side);
    let known = g.known_answers(query, side);
    let pool: Vec<EntityId> = (0..g.num_entities() as EntityId)
        .filter(|&e| e != truth && known.binary_search(&e).is_err())
        .collect();
    if n >= pool.len() {
        return pool;
    }
    let s = seed::derive_indexed(
        seed,
        &[
            u64::from(query.head),
            u64::from(query.relation),
            u64::from(query.tail),
            side_code(side),
        ],
    );
    let mut picked: Vec<EntityId> = index::sample(&mut seed::rng(s), pool.len(), n)
        .into_iter()
        .map(|i| pool[i])
        .collect();
    picked.sort_unstable();
    picked
}

/// Filtered rank of the true entity on `side` of `query`.
pub fn filtered_rank(
    query: &Triple,
    side: Side,
    scorer: &dyn LinkScorer,
    g: &KnowledgeGraph,
    protocol: Protocol,
) -> Result<u64> {
    let mut buf = Vec::new();
    filtered_rank_with(query, side, scorer, g, protocol, &mut buf)
}

fn filtered_rank_with(
    query: &Triple,
    side: Side,
    scorer: &dyn LinkScorer,
    g: &KnowledgeGraph,
    protocol: Protocol,
    buf: &mut Vec<f32>,
) -> Result<u64> {
    let truth = query.entity(side);
    if truth as usize >= scorer.num_entities() {
        return Err(Error::OutOfRange {
            kind: "entity",
            id: u64::from(truth),
            count: scorer.num_entities() as u64,
        });
    }
    let known = g.known_answers(query, side);
    if known.binary_search(&truth).is_err() {
        return Err(Error::Internal(format!(
            "query {query:?} is not in the filter index"
        )));
    }
    let (greater, ties) = match protocol {
        Protocol::Exhaustive => {
            buf.resize(scorer.num_entities(), 0.0);
            scorer.score_all(query, side, buf);
            let target = buf[truth as usize];
            if !target.is_finite() {
                return Err(Error::NonFinite(format!("score of {query:?}")));
            }
            let (mut greater, mut ties) = (0u64, 0u64);
            for &s in buf.iter() {
                if s > target {
                    greater += 1;
                } else if s == target {
                    ties += 1;
                }
            }
            // the truth ties with itself; other known answers are filtered
            for &e in known {
                let s = buf[e as usize];
                if s > target {
                    greater -= 1;
                } else if s == target {
                    ties -= 1;
                }
            }
            (greater, ties)
        }
        Protocol::Sampled { n, seed } => {
            let mut cands = sampled_candidates(query, side, g, n, seed);
            cands.push(truth);
            buf.resize(cands.len(), 0.0);
            scorer.score_candidates(query, side, &cands, buf);
            let target = *buf.last().unwrap();
            if !target.is_finite() {
                return Err(Error::NonFinite(format!("score of {query:?}")));
            }
            let others = &buf[..buf.len() - 1];
            (
                others.iter().filter(|&&s| s > target).count() as u64,
                others.iter().filter(|&&s| s == target).count() as u64,
            )
        }
    };
    Ok(rank_from_counts(greater, ties))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    pub protocol: String,
    pub n_queries: usize,
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
    #[serde(skip)]
    pub ranks: Vec<u64>,
}

impl RankingReport {
    pub fn from_ranks(protocol: &Protocol, ranks: Vec<u64>) -> Self {
        let n = ranks.len().max(1) as f64;
        let rate = |k: u64| ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
        Self {
            protocol: protocol.label(),
            n_queries: ranks.len(),
            mrr: ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n,
            hits1: rate(1),
            hits3: rate(3),
            hits10: rate(10),
            ranks,
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "protocol={}", self.protocol);
        let _ = writeln!(s, "n_queries={}", self.n_queries);
        let _ = writeln!(s, "mrr={:.6}", self.mrr);
        let _ = writeln!(s, "hits1={:.6}", self.hits1);
        let _ = writeln!(s, "hits3={:.6}", self.hits3);
        let _ = writeln!(s, "hits10={:.6}", self.hits10);
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain struct serializes")
    }

    /// Writes `<stem>.txt` and `<stem>.json` next to each other.
    pub fn write(&self, stem: &Path) -> Result<()> {
        let txt = stem.with_extension("txt");
        std::fs::write(&txt, self.to_text()).map_err(|e| Error::io(&txt, e))?;
        let json = stem.with_extension("json");
        std::fs::write(&json, self.to_json()).map_err(|e| Error::io(&json, e))
    }
}

/// Ranks both sides (or only tails) of every triple of `split`.
pub fn evaluate_link(
    scorer: &dyn LinkScorer,
    g: &KnowledgeGraph,
    split: Split,
    opts: &EvalOptions,
) -> Result<RankingReport> {
    let triples = g.split(split);
    let triples = &triples[..opts.max_triples.unwrap_or(triples.len()).min(triples.len())];
    evaluate_triples(scorer, g, triples, opts)
}

pub fn evaluate_triples(
    scorer: &dyn LinkScorer,
    g: &KnowledgeGraph,
    triples: &[Triple],
    opts: &EvalOptions,
) -> Result<RankingReport> {
    let sides: &[Side] = if opts.tail_only {
        &[Side::Tail]
    } else {
        &[Side::Head, Side::Tail]
    };
    let mut buf = Vec::new();
    let mut ranks = Vec::with_capacity(triples.len() * sides.len());
    for t in triples {
        for &side in sides {
            ranks.push(filtered_rank_with(t, side, scorer, g, opts.protocol, &mut buf)?);
        }
    }
    Ok(RankingReport::from_ranks(&opts.protocol, ranks))
}

/// Fraction of `nodes` whose predicted class equals `labels`.
pub fn accuracy(predicted: &[usize], labels: &[usize]) -> Result<f64> {
    if predicted.len() != labels.len() {
        return Err(Error::shape("prediction and label counts differ"));
    }
    if labels.is_empty() {
        return Err(Error::EmptySplit("classification split has no labeled nodes"));
    }
    let correct = predicted.iter().zip(labels).filter(|(a, b)| a == b).count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Per-node classification accuracy where `predict` maps node ids to classes.
pub fn evaluate_classification(
    nodes: &[EntityId],
    labels: &dyn Fn(EntityId) -> Option<usize>,
    predict: &mut dyn FnMut(&[EntityId]) -> Result<Vec<usize>>,
) -> Result<f64> {
    if nodes.is_empty() {
        return Err(Error::EmptySplit("classification split has no labeled nodes"));
    }
    let truth = nodes
        .iter()
        .map(|&n| {
            labels(n).ok_or_else(|| Error::invalid(format!("node {n} has no label")))
        })
        .collect::<Result<Vec<_>>>()?;
    let pred = predict(nodes)?;
    accuracy(&pred, &truth)
}

/// Scorer backed by a closure over single triples. Handy for tests and
/// oracles.
pub struct FnScorer<F> {
    pub entities: usize,
    pub f: F,
}

impl<F: Fn(&Triple) -> f32> LinkScorer for FnScorer<F> {
    fn num_entities(&self) -> usize {
        self.entities
    }

    fn score_candidates(&self, query: &Triple, side: Side, candidates: &[EntityId], out: &mut [f32]) {
        for (o, &e) in out.iter_mut().zip(candidates) {
            *o = (self.f)(&query.with(side, e));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn toy() -> KnowledgeGraph {
        // 5 entities, 1 relation
        KnowledgeGraph::from_triples(
            5,
            1,
            vec![Triple::new(0, 0, 1), Triple::new(0, 0, 2)],
            vec![],
            vec![Triple::new(0, 0, 3)],
        )
        .unwrap()
    }

    #[test]
    fn rank_rule() {
        assert_eq!(rank_from_counts(0, 0), 1);
        assert_eq!(rank_from_counts(1, 0), 2);
        assert_eq!(rank_from_counts(0, 1), 2);
        assert_eq!(rank_from_counts(2, 3), 5);
    }

    #[test]
    fn unique_candidate_has_rank_one() {
        let g = KnowledgeGraph::from_triples(2, 1, vec![Triple::new(0, 0, 1)], vec![], vec![])
            .unwrap();
        // tail candidates: 1 (truth) and 0
        let s = FnScorer {
            entities: 2,
            f: |t: &Triple| if t.tail == 1 { 1.0 } else { 0.0 },
        };
        let r = filtered_rank(&Triple::new(0, 0, 1), Side::Tail, &s, &g, Protocol::Exhaustive)
            .unwrap();
        assert_eq!(r, 1);
    }

    #[test]
    fn second_of_ten() {
        let train: Vec<Triple> = vec![Triple::new(0, 0, 5)];
        let g = KnowledgeGraph::from_triples(10, 1, train, vec![], vec![]).unwrap();
        let s = FnScorer {
            entities: 10,
            f: |t: &Triple| if t.tail == 9 { 100.0 } else { t.tail as f32 },
        };
        // entities 6..=9 outscore the truth
        let r = filtered_rank(&Triple::new(0, 0, 5), Side::Tail, &s, &g, Protocol::Exhaustive)
            .unwrap();
        assert_eq!(r, 5);
        let s = FnScorer {
            entities: 10,
            f: |t: &Triple| match t.tail {
                5 => 9.0,
                9 => 10.0,
                e => e as f32 * 0.1,
            },
        };
        let rep = evaluate_triples(
            &s,
            &g,
            &[Triple::new(0, 0, 5)],
            &EvalOptions {
                tail_only: true,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(rep.ranks, vec![2]);
        assert_eq!((rep.mrr, rep.hits1, rep.hits3, rep.hits10), (0.5, 0.0, 1.0, 1.0));
    }

    #[test]
    fn hand_enumerated_filtered_ranks() {
        let g = toy();
        // score = entity id, so higher ids rank first
        let s = FnScorer {
            entities: 5,
            f: |t: &Triple| (t.tail * 10 + t.head) as f32,
        };
        // tail query (0,0,1): candidates 0..4; known tails of (0,0) = {1,2,3}
        // filtered: {0, 1, 4}; scores 0, 10, 40 -> rank 2
        let r = filtered_rank(&Triple::new(0, 0, 1), Side::Tail, &s, &g, Protocol::Exhaustive);
        assert_eq!(r.unwrap(), 2);
        // tail query (0,0,3): filtered {0, 3, 4} -> rank 2
        let r = filtered_rank(&Triple::new(0, 0, 3), Side::Tail, &s, &g, Protocol::Exhaustive);
        assert_eq!(r.unwrap(), 2);
        // head query (0,0,2): known heads of (0,2) = {0}; scores 20+h -> 4,3,2,1 beat 0
        let r = filtered_rank(&Triple::new(0, 0, 2), Side::Head, &s, &g, Protocol::Exhaustive);
        assert_eq!(r.unwrap(), 5);
    }

    #[test]
    fn constant_scorer_mean_tie_rank() {
        for n in [2usize, 3, 10, 11] {
            let g = KnowledgeGraph::from_triples(n, 1, vec![Triple::new(0, 0, 1)], vec![], vec![])
                .unwrap();
            let s = FnScorer {
                entities: n,
                f: |_: &Triple| 0.5,
            };
            let r = filtered_rank(&Triple::new(0, 0, 1), Side::Tail, &s, &g, Protocol::Exhaustive)
                .unwrap();
            // T = n candidates including the truth
            assert_eq!(r, ((n as f64 + 1.0) / 2.0).round() as u64);
        }
    }

    #[test]
    fn perfect_scorer_gives_mrr_one() {
        let g = toy();
        let truth: std::collections::HashSet<Triple> =
            g.train.iter().chain(&g.test).copied().collect();
        let s = FnScorer {
            entities: 5,
            f: move |t: &Triple| if truth.contains(t) { 1.0 } else { 0.0 },
        };
        let rep = evaluate_link(&s, &g, Split::Test, &EvalOptions::default()).unwrap();
        assert_eq!(rep.mrr, 1.0);
        assert_eq!(rep.n_queries, 2);
    }

    #[test]
    fn report_formats() {
        let rep = RankingReport::from_ranks(&Protocol::Exhaustive, vec![1, 2, 4, 20]);
        assert!(rep.to_text().contains("mrr=0.450000"));
        let v: serde_json::Value = serde_json::from_str(&rep.to_json()).unwrap();
        for k in ["protocol", "n_queries", "mrr", "hits3", "hits10"] {
            assert!(v.get(k).is_some(), "{k}");
        }
        assert_eq!(v["hits3"], 0.5);
    }

    #[test]
    fn classification_accuracy() {
        let nodes = [0u32, 1, 2, 3];
        let labels = |n: EntityId| Some(n as usize % 2);
        let acc = evaluate_classification(&nodes, &labels, &mut |ns| {
            Ok(ns.iter().map(|&n| n as usize % 2).collect())
        })
        .unwrap();
        assert_eq!(acc, 1.0);
        assert!(evaluate_classification(&[], &labels, &mut |_| Ok(vec![])).is_err());
        let missing = |n: EntityId| (n < 2).then_some(0);
        assert!(evaluate_classification(&nodes, &missing, &mut |ns| Ok(vec![0; ns.len()])).is_err());
    }

    #[test]
    fn random_predictor_near_chance() {
        let mut rng = crate::seed::rng(17);
        let n = 10_000;
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..10)).collect();
        let pred: Vec<usize> = (0..n).map(|_| rng.gen_range(0..10)).collect();
        let acc = accuracy(&pred, &labels).unwrap();
        let sigma = (0.1f64 * 0.9 / n as f64).sqrt();
        assert!((acc - 0.1).abs() <= 3.0 * sigma, "{acc}");
    }

    fn random_kg(seed: u64, n_e: u32) -> KnowledgeGraph {
        let mut rng = crate::seed::rng(seed);
        let mut t = |k: usize| -> Vec<Triple> {
            (0..k)
                .map(|_| Triple::new(rng.gen_range(0..n_e), rng.gen_range(0..3), rng.gen_range(0..n_e)))
                .collect()
        };
        let (a, b, c) = (t(n_e as usize * 2), t(10), t(10));
        KnowledgeGraph::from_triples(n_e as usize, 3, a, b, c).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn sampled_full_pool_equals_exhaustive(seed in any::<u64>(), n_e in 5u32..50) {
            let g = random_kg(seed, n_e);
            let mut rng = crate::seed::rng(seed ^ 1);
            let table: Vec<f32> = (0..n_e * n_e * 3).map(|_| rng.gen_range(0..4) as f32).collect();
            let s = FnScorer {
                entities: n_e as usize,
                f: |t: &Triple| table[((t.head * 3 + t.relation) * n_e + t.tail) as usize],
            };
            let ex = evaluate_link(&s, &g, Split::Test, &EvalOptions::default()).unwrap();
            let sa = evaluate_link(&s, &g, Split::Test, &EvalOptions {
                protocol: Protocol::Sampled { n: n_e as usize - 1, seed: 3 },
                ..Default::default()
            }).unwrap();
            prop_assert_eq!(&ex.ranks, &sa.ranks);
            prop_assert_eq!(ex.mrr, sa.mrr);
            prop_assert!(ex.hits3 <= ex.hits10 && ex.mrr > 0.0 && ex.mrr <= 1.0);
        }

        #[test]
        fn sampled_candidates_are_filtered_and_stable(seed in any::<u64>()) {
            let g = random_kg(seed, 40);
            let q = g.test[0];
            let a = sampled_candidates(&q, Side::Tail, &g, 7, 11);
            prop_assert_eq!(&a, &sampled_candidates(&q, Side::Tail, &g, 7, 11));
            prop_assert!(a.len() <= 7);
            for &e in &a {
                prop_assert!(e != q.tail && !g.is_known(&q.with(Side::Tail, e)));
            }
        }
    }
}
