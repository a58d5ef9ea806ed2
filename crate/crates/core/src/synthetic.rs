//! Generated graphs for tests and benchmarks.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rustc_hash::FxHashSet;

use crate::error::{Error, Result};
use crate::kg::{Dictionary, EntityId, KnowledgeGraph, NodeLabels, Split, Triple};
use crate::seed;

/// Uniformly random distinct triples split into train/valid/test. Every
/// entity and relation gets an id even if it never occurs.
pub fn random_graph(
    entities: usize,
    relations: usize,
    triples: usize,
    holdout: f64,
    seed: u64,
) -> Result<KnowledgeGraph> {
    let capacity = entities.saturating_mul(entities).saturating_mul(relations);
    if entities < 2 || relations == 0 || triples == 0 || triples > capacity / 2 {
        return Err(Error::invalid(format!(
            "cannot draw {triples} distinct triples over {entities} entities and {relations} relations"
        )));
    }
    let mut rng = seed::rng(seed);
    let mut seen = FxHashSet::default();
    let mut all = Vec::with_capacity(triples);
    while all.len() < triples {
        let t = Triple::new(
            rng.gen_range(0..entities as EntityId),
            rng.gen_range(0..relations as u32),
            rng.gen_range(0..entities as EntityId),
        );
        if seen.insert(t) {
            all.push(t);
        }
    }
    let held = ((triples as f64 * holdout) as usize).min(triples - 1);
    let test = all.split_off(triples - held / 2);
    let valid = all.split_off(all.len() - (held - held / 2));
    KnowledgeGraph::from_triples(entities, relations, all, valid, test)
}

/// Node classification task whose label is the most frequent
/// `(relation, direction)` among a node's edges.
pub struct Separability {
    pub graph: KnowledgeGraph,
    pub labels: NodeLabels,
}

#[derive(Debug, Clone, Copy)]
pub struct SeparabilityConfig {
    pub nodes: usize,
    pub relations: usize,
    /// Entities each relation draws its endpoints from.
    pub hubs_per_relation: usize,
    /// Edges each ordinary node starts.
    pub degree: usize,
    /// Fraction of a node's edges with its planted type.
    pub planted: f64,
    pub valid_frac: f64,
    pub test_frac: f64,
}

impl Default for SeparabilityConfig {
    fn default() -> Self {
        Self {
            nodes: 10_000,
            relations: 5,
            hubs_per_relation: 8,
            degree: 8,
            planted: 0.6,
            valid_frac: 0.1,
            test_frac: 0.2,
        }
    }
}

impl SeparabilityConfig {
    pub fn num_classes(&self) -> usize {
        2 * self.relations
    }
}

/// Builds the task. Ordinary nodes attach only to hub entities of each
/// relation, so a node's typed neighborhood reveals its edge types; the
/// hubs themselves are left unlabeled. Labels are the realized majority,
/// and nodes whose majority is tied are left unlabeled too.
pub fn separability(cfg: &SeparabilityConfig, seed: u64) -> Result<Separability> {
    let n_hubs = cfg.relations * cfg.hubs_per_relation;
    if cfg.relations == 0 || cfg.hubs_per_relation == 0 || cfg.degree == 0 || cfg.nodes <= n_hubs {
        return Err(Error::invalid("separability task needs relations, hubs, degree and more nodes than hubs"));
    }
    if !(0.0..=1.0).contains(&cfg.planted) || cfg.valid_frac + cfg.test_frac >= 1.0 {
        return Err(Error::invalid("bad separability fractions"));
    }
    let mut rng = seed::rng(seed);
    let classes = cfg.num_classes();
    let hub = |r: usize, j: usize| (r * cfg.hubs_per_relation + j) as EntityId;
    let mut seen = FxHashSet::default();
    let mut counts = vec![vec![0u32; classes]; cfg.nodes];
    let mut train = Vec::new();
    for u in n_hubs..cfg.nodes {
        let planted = rng.gen_range(0..classes);
        let mut added = 0;
        while added < cfg.degree {
            let class = if rng.gen_bool(cfg.planted) { planted } else { rng.gen_range(0..classes) };
            let (r, incoming) = (class / 2, class % 2 == 1);
            let v = hub(r, rng.gen_range(0..cfg.hubs_per_relation));
            let t = if incoming {
                Triple::new(v, r as u32, u as EntityId)
            } else {
                Triple::new(u as EntityId, r as u32, v)
            };
            if seen.insert(t) {
                counts[u][class] += 1;
                train.push(t);
                added += 1;
            }
        }
    }
    let mut entries = Vec::new();
    let mut ordinary: Vec<usize> = (n_hubs..cfg.nodes).collect();
    ordinary.shuffle(&mut rng);
    let n_valid = (ordinary.len() as f64 * cfg.valid_frac) as usize;
    let n_test = (ordinary.len() as f64 * cfg.test_frac) as usize;
    for (rank, &u) in ordinary.iter().enumerate() {
        let c = &counts[u];
        let best = *c.iter().max().unwrap_or(&0);
        if c.iter().filter(|&&x| x == best).count() != 1 {
            continue;
        }
        let label = c.iter().position(|&x| x == best).unwrap_or(0);
        let split = if rank < n_valid {
            Split::Valid
        } else if rank < n_valid + n_test {
            Split::Test
        } else {
            Split::Train
        };
        entries.push((u as EntityId, label, split));
    }
    let mut class_names = Dictionary::new();
    for c in 0..classes {
        let dir = if c % 2 == 1 { "in" } else { "out" };
        class_names.intern(&format!("r{}-{dir}", c / 2));
    }
    let graph = KnowledgeGraph::from_triples(cfg.nodes, cfg.relations, train, vec![], vec![])?;
    let labels = NodeLabels::from_entries(class_names, cfg.nodes, entries)?;
    Ok(Separability { graph, labels })
}

fn write_lines(path: &Path, lines: impl Iterator<Item = String>) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    for l in lines {
        writeln!(w, "{l}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes the split files (`train.txt`, `valid.txt`, `test.txt`) with
/// entity labels `e<id>` and relation labels `r<id>`.
pub fn write_graph(g: &KnowledgeGraph, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (split, name) in [(Split::Train, "train.txt"), (Split::Valid, "valid.txt"), (Split::Test, "test.txt")] {
        let lines = g
            .split(split)
            .iter()
            .map(|t| format!("e{}\tr{}\te{}", t.head, t.relation, t.tail));
        write_lines(&dir.join(name), lines)?;
    }
    Ok(())
}

/// Writes `labels.txt` in the `entity<TAB>class<TAB>split` format, using the
/// entity labels of [`write_graph`].
pub fn write_labels(labels: &NodeLabels, dir: &Path) -> Result<()> {
    let mut lines = Vec::new();
    for split in [Split::Train, Split::Valid, Split::Test] {
        for e in labels.nodes(split) {
            let c = labels.label(e).unwrap_or(0);
            let class = labels.classes.label(c as u32).unwrap_or_default();
            lines.push(format!("e{e}\t{class}\t{}", split.name()));
        }
    }
    write_lines(&dir.join("labels.txt"), lines.into_iter())
}
