//! Knowledge-graph storage: dense-id dictionaries, the three splits, train-only
//! adjacency, and the filter index over every known triple.

use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rustc_hash::{FxHashMap, FxHashSet};

use crate::error::{Error, Result};

pub type EntityId = u32;
pub type RelationId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub const fn new(head: EntityId, relation: RelationId, tail: EntityId) -> Self {
        Self {
            head,
            relation,
            tail,
        }
    }

    pub fn entity(&self, side: Side) -> EntityId {
        match side {
            Side::Head => self.head,
            Side::Tail => self.tail,
        }
    }

    /// Copy of the triple with `side` replaced by `e`.
    pub fn with(&self, side: Side, e: EntityId) -> Self {
        match side {
            Side::Head => Self { head: e, ..*self },
            Side::Tail => Self { tail: e, ..*self },
        }
    }
}

/// Which end of a triple a corruption or query targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Side {
    Head,
    Tail,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::Head => Side::Tail,
            Side::Tail => Side::Head,
        }
    }
}

/// Edge direction relative to the node whose adjacency is being listed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    Out,
    In,
}

/// One train edge touching a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Incidence {
    pub relation: RelationId,
    pub neighbor: EntityId,
    pub direction: Direction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

/// Bidirectional label <-> dense id map. Ids follow first-appearance order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Dictionary {
    labels: Vec<String>,
    index: HashMap<String, u32>,
}

impl Dictionary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Anonymous dictionary with labels "0".."n-1".
    pub fn numbered(n: usize) -> Self {
        let mut d = Self::new();
        for i in 0..n {
            d.intern(&i.to_string());
        }
        d
    }

    pub fn intern(&mut self, label: &str) -> u32 {
        match self.index.entry(label.to_string()) {
            Entry::Occupied(e) => *e.get(),
            Entry::Vacant(e) => {
                let id = self.labels.len() as u32;
                self.labels.push(label.to_string());
                e.insert(id);
                id
            }
        }
    }

    pub fn id(&self, label: &str) -> Option<u32> {
        self.index.get(label).copied()
    }

    pub fn label(&self, id: u32) -> Option<&str> {
        self.labels.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Writes `id<TAB>label` lines.
    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for (i, l) in self.labels.iter().enumerate() {
            writeln!(w, "{i}\t{l}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Reject valid/test entities or relations that never occur in train.
    pub strict: bool,
}

/// Counts reported by [`load_triples`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub duplicates_dropped: [usize; 3],
    /// Entities that have no train edge (their features are uninformative).
    pub unseen_entities: usize,
}

#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    pub entities: Dictionary,
    pub relations: Dictionary,
    pub train: Vec<Triple>,
    pub valid: Vec<Triple>,
    pub test: Vec<Triple>,
    adj_offsets: Vec<usize>,
    adj: Vec<Incidence>,
    out_degree: Vec<u32>,
    in_degree: Vec<u32>,
    known: FxHashSet<Triple>,
    known_tails: FxHashMap<(EntityId, RelationId), Vec<EntityId>>,
    known_heads: FxHashMap<(RelationId, EntityId), Vec<EntityId>>,
}

impl KnowledgeGraph {
    /// Builds a graph from id-resolved splits. Duplicates inside a split are
    /// dropped; the returned report counts them.
    pub fn from_ids(
        entities: Dictionary,
        relations: Dictionary,
        train: Vec<Triple>,
        valid: Vec<Triple>,
        test: Vec<Triple>,
    ) -> Result<(Self, LoadReport)> {
        let n_e = entities.len();
        let n_r = relations.len();
        let mut report = LoadReport::default();
        let mut splits = [train, valid, test];
        for (slot, split) in splits.iter_mut().enumerate() {
            for t in split.iter() {
                check_id("entity", t.head, n_e)?;
                check_id("entity", t.tail, n_e)?;
                check_id("relation", t.relation, n_r)?;
            }
            let before = split.len();
            let mut seen = FxHashSet::default();
            split.retain(|t| seen.insert(*t));
            report.duplicates_dropped[slot] = before - split.len();
        }
        let [train, valid, test] = splits;

        let mut out_degree = vec![0u32; n_e];
        let mut in_degree = vec![0u32; n_e];
        for t in &train {
            out_degree[t.head as usize] += 1;
            in_degree[t.tail as usize] += 1;
        }
        let mut adj_offsets = Vec::with_capacity(n_e + 1);
        adj_offsets.push(0usize);
        for e in 0..n_e {
            let d = (out_degree[e] + in_degree[e]) as usize;
            adj_offsets.push(adj_offsets[e] + d);
        }
        let mut fill = adj_offsets.clone();
        let placeholder = Incidence {
            relation: 0,
            neighbor: 0,
            direction: Direction::Out,
        };
        let mut adj = vec![placeholder; *adj_offsets.last().unwrap()];
        for t in &train {
            let h = t.head as usize;
            adj[fill[h]] = Incidence {
                relation: t.relation,
                neighbor: t.tail,
                direction: Direction::Out,
            };
            fill[h] += 1;
            let tl = t.tail as usize;
            adj[fill[tl]] = Incidence {
                relation: t.relation,
                neighbor: t.head,
                direction: Direction::In,
            };
            fill[tl] += 1;
        }
        for e in 0..n_e {
            adj[adj_offsets[e]..adj_offsets[e + 1]].sort_unstable();
        }
        report.unseen_entities = (0..n_e)
            .filter(|&e| out_degree[e] + in_degree[e] == 0)
            .count();

        let mut known = FxHashSet::default();
        let mut known_tails: FxHashMap<_, Vec<EntityId>> = FxHashMap::default();
        let mut known_heads: FxHashMap<_, Vec<EntityId>> = FxHashMap::default();
        for t in train.iter().chain(&valid).chain(&test) {
            if known.insert(*t) {
                known_tails
                    .entry((t.head, t.relation))
                    .or_default()
                    .push(t.tail);
                known_heads
                    .entry((t.relation, t.tail))
                    .or_default()
                    .push(t.head);
            }
        }
        for v in known_tails.values_mut().chain(known_heads.values_mut()) {
            v.sort_unstable();
        }

        Ok((
            Self {
                entities,
                relations,
                train,
                valid,
                test,
                adj_offsets,
                adj,
                out_degree,
                in_degree,
                known,
                known_tails,
                known_heads,
            },
            report,
        ))
    }

    /// Anonymous graph over `n_entities`/`n_relations` numbered ids.
    pub fn from_triples(
        n_entities: usize,
        n_relations: usize,
        train: Vec<Triple>,
        valid: Vec<Triple>,
        test: Vec<Triple>,
    ) -> Result<Self> {
        Self::from_ids(
            Dictionary::numbered(n_entities),
            Dictionary::numbered(n_relations),
            train,
            valid,
            test,
        )
        .map(|(g, _)| g)
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn split(&self, s: Split) -> &[Triple] {
        match s {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn out_degree(&self, e: EntityId) -> u32 {
        self.out_degree[e as usize]
    }

    pub fn in_degree(&self, e: EntityId) -> u32 {
        self.in_degree[e as usize]
    }

    /// All train edges touching `e`, sorted by (relation, neighbor, direction).
    pub fn adjacency(&self, e: EntityId) -> &[Incidence] {
        let e = e as usize;
        &self.adj[self.adj_offsets[e]..self.adj_offsets[e + 1]]
    }

    /// Checked variant of [`adjacency`](Self::adjacency).
    pub fn lookup_adjacency(&self, e: EntityId) -> Result<&[Incidence]> {
        check_id("entity", e, self.num_entities())?;
        Ok(self.adjacency(e))
    }

    pub fn max_total_degree(&self) -> usize {
        (0..self.num_entities())
            .map(|e| self.adj_offsets[e + 1] - self.adj_offsets[e])
            .max()
            .unwrap_or(0)
    }

    /// Membership over train ∪ valid ∪ test.
    pub fn is_known(&self, t: &Triple) -> bool {
        self.known.contains(t)
    }

    pub fn known_len(&self) -> usize {
        self.known.len()
    }

    /// Sorted known tails of (h, r, ?).
    pub fn known_tails(&self, head: EntityId, relation: RelationId) -> &[EntityId] {
        self.known_tails
            .get(&(head, relation))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Sorted known heads of (?, r, t).
    pub fn known_heads(&self, relation: RelationId, tail: EntityId) -> &[EntityId] {
        self.known_heads
            .get(&(relation, tail))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Known answers for the side of `query` being predicted.
    pub fn known_answers(&self, query: &Triple, side: Side) -> &[EntityId] {
        match side {
            Side::Head => self.known_heads(query.relation, query.tail),
            Side::Tail => self.known_tails(query.head, query.relation),
        }
    }

    /// Writes one split as `head<TAB>relation<TAB>tail` labels.
    pub fn write_split(&self, split: Split, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for t in self.split(split) {
            writeln!(
                w,
                "{}\t{}\t{}",
                self.entities.label(t.head).unwrap(),
                self.relations.label(t.relation).unwrap(),
                self.entities.label(t.tail).unwrap()
            )
            .map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn check_id(kind: &'static str, id: u32, count: usize) -> Result<()> {
    if (id as usize) < count {
        Ok(())
    } else {
        Err(Error::OutOfRange {
            kind,
            id: u64::from(id),
            count: count as u64,
        })
    }
}

type LabelTriple = (String, String, String);

fn read_label_triples(path: &Path) -> Result<Vec<LabelTriple>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 || fields.iter().any(|f| f.is_empty()) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!(
                    "expected 3 non-empty tab-separated fields, found {}",
                    fields.len()
                ),
            });
        }
        out.push((
            fields[0].to_string(),
            fields[1].to_string(),
            fields[2].to_string(),
        ));
    }
    Ok(out)
}

/// Class labels of entities for node classification.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeLabels {
    pub classes: Dictionary,
    entries: Vec<(EntityId, usize, Split)>,
    by_entity: Vec<Option<usize>>,
}

impl NodeLabels {
    /// Builds labels over `num_entities` entities; an entity may be labeled
    /// only once.
    pub fn from_entries(
        classes: Dictionary,
        num_entities: usize,
        entries: Vec<(EntityId, usize, Split)>,
    ) -> Result<Self> {
        let mut by_entity = vec![None; num_entities];
        for &(e, c, _) in &entries {
            check_id("entity", e, num_entities)?;
            if c >= classes.len() {
                return Err(Error::OutOfRange {
                    kind: "class",
                    id: c as u64,
                    count: classes.len() as u64,
                });
            }
            if by_entity[e as usize].replace(c).is_some() {
                return Err(Error::invalid(format!("entity {e} is labeled twice")));
            }
        }
        Ok(Self {
            classes,
            entries,
            by_entity,
        })
    }

    /// Reads `entity<TAB>class<TAB>split` lines. Classes get ids in
    /// first-appearance order.
    pub fn load(path: &Path, entities: &Dictionary) -> Result<Self> {
        let raw = read_label_triples(path)?;
        let mut classes = Dictionary::new();
        let mut entries = Vec::with_capacity(raw.len());
        for (i, (e, c, s)) in raw.iter().enumerate() {
            let parse_err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            };
            let id = entities
                .id(e)
                .ok_or_else(|| parse_err(format!("unknown entity {e:?}")))?;
            let split = match s.as_str() {
                "train" => Split::Train,
                "valid" => Split::Valid,
                "test" => Split::Test,
                other => return Err(parse_err(format!("unknown split {other:?}"))),
            };
            entries.push((id, classes.intern(c) as usize, split));
        }
        if raw.is_empty() {
            return Err(Error::EmptySplit("labels"));
        }
        Self::from_entries(classes, entities.len(), entries)
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn label(&self, e: EntityId) -> Option<usize> {
        self.by_entity.get(e as usize).copied().flatten()
    }

    /// Labeled entities of `split` in file order.
    pub fn nodes(&self, split: Split) -> Vec<EntityId> {
        self.entries
            .iter()
            .filter(|(_, _, s)| *s == split)
            .map(|(e, _, _)| *e)
            .collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Paths of the three split files.
#[derive(Debug, Clone)]
pub struct SplitPaths {
    pub train: PathBuf,
    pub valid: Option<PathBuf>,
    pub test: Option<PathBuf>,
}

/// Loads tab-separated triple files. Dictionaries are filled in
/// first-appearance order scanning train, then valid, then test.
pub fn load_triples(paths: &SplitPaths, opts: LoadOptions) -> Result<(KnowledgeGraph, LoadReport)> {
    let train_raw = read_label_triples(&paths.train)?;
    if train_raw.is_empty() {
        return Err(Error::EmptySplit("train"));
    }
    let valid_raw = match &paths.valid {
        Some(p) => read_label_triples(p)?,
        None => Vec::new(),
    };
    let test_raw = match &paths.test {
        Some(p) => read_label_triples(p)?,
        None => Vec::new(),
    };

    let mut entities = Dictionary::new();
    let mut relations = Dictionary::new();
    let mut resolve = |raw: &[LabelTriple], split: &'static str, is_train: bool| -> Result<Vec<Triple>> {
        let mut out = Vec::with_capacity(raw.len());
        for (h, r, t) in raw {
            if opts.strict && !is_train {
                for e in [h, t] {
                    if entities.id(e).is_none() {
                        return Err(Error::UnseenEntity {
                            label: e.clone(),
                            split,
                        });
                    }
                }
                if relations.id(r).is_none() {
                    return Err(Error::UnseenRelation {
                        label: r.clone(),
                        split,
                    });
                }
            }
            let head = entities.intern(h);
            let relation = relations.intern(r);
            let tail = entities.intern(t);
            out.push(Triple::new(head, relation, tail));
        }
        Ok(out)
    };
    let train = resolve(&train_raw, "train", true)?;
    let valid = resolve(&valid_raw, "valid", false)?;
    let test = resolve(&test_raw, "test", false)?;

    let (g, report) = KnowledgeGraph::from_ids(entities, relations, train, valid, test)?;
    for (slot, n) in report.duplicates_dropped.iter().enumerate() {
        if *n > 0 {
            log::warn!(
                "dropped {n} duplicate triples from {} split",
                ["train", "valid", "test"][slot]
            );
        }
    }
    if report.unseen_entities > 0 {
        log::warn!(
            "{} entities have no train edges; their structural features are empty",
            report.unseen_entities
        );
    }
    Ok((g, report))
}

/// Degree percentiles used to size Bloom filters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DegreeStats {
    pub out_p95: u32,
    pub in_p95: u32,
    pub n_estimate: u32,
    pub max_out: u32,
    pub max_in: u32,
}

/// Nearest-rank percentile: the smallest value with at least `p`% of the
/// sample at or below it.
pub fn nearest_rank_percentile(values: &[u32], p: f64) -> Option<u32> {
    if values.is_empty() || !(0.0..=100.0).contains(&p) {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

impl DegreeStats {
    pub fn from_degrees(out: &[u32], inc: &[u32]) -> Result<Self> {
        let out_p95 = nearest_rank_percentile(out, 95.0).ok_or(Error::EmptyGraph("no entities"))?;
        let in_p95 = nearest_rank_percentile(inc, 95.0).ok_or(Error::EmptyGraph("no entities"))?;
        Ok(Self {
            out_p95,
            in_p95,
            n_estimate: (out_p95 + in_p95).max(1),
            max_out: out.iter().copied().max().unwrap_or(0),
            max_in: inc.iter().copied().max().unwrap_or(0),
        })
    }
}

/// Percentile degree statistics over the train split.
pub fn degree_stats(g: &KnowledgeGraph) -> Result<DegreeStats> {
    if g.train.is_empty() {
        return Err(Error::EmptyGraph("train split has no triples"));
    }
    DegreeStats::from_degrees(&g.out_degree, &g.in_degree)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        let mut f = File::create(&p).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn three_line_file_dedupes() {
        let dir = tempfile::tempdir().unwrap();
        let train = write(dir.path(), "train.txt", "a\tr1\tb\nb\tr2\tc\na\tr1\tb\n");
        let (g, rep) = load_triples(
            &SplitPaths {
                train,
                valid: None,
                test: None,
            },
            LoadOptions::default(),
        )
        .unwrap();
        assert_eq!(g.num_entities(), 3);
        assert_eq!(g.num_relations(), 2);
        assert_eq!(g.train.len(), 2);
        assert_eq!(rep.duplicates_dropped, [1, 0, 0]);
        assert_eq!(g.entities.id("a"), Some(0));
        assert_eq!(g.entities.id("c"), Some(2));
    }

    #[test]
    fn empty_train_is_error() {
        let dir = tempfile::tempdir().unwrap();
        let train = write(dir.path(), "train.txt", "");
        let err = load_triples(
            &SplitPaths {
                train,
                valid: None,
                test: None,
            },
            LoadOptions::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("empty split"));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let train = write(dir.path(), "train.txt", "a\tr\tb\na\tb\n");
        let err = load_triples(
            &SplitPaths {
                train,
                valid: None,
                test: None,
            },
            LoadOptions::default(),
        )
        .unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn strict_mode_rejects_test_only_entities() {
        let dir = tempfile::tempdir().unwrap();
        let train = write(dir.path(), "train.txt", "a\tr\tb\n");
        let test = write(dir.path(), "test.txt", "a\tr\tz\n");
        let paths = SplitPaths {
            train,
            valid: None,
            test: Some(test),
        };
        assert!(matches!(
            load_triples(&paths, LoadOptions { strict: true }),
            Err(Error::UnseenEntity { .. })
        ));
        let (g, rep) = load_triples(&paths, LoadOptions::default()).unwrap();
        assert_eq!(g.num_entities(), 3);
        assert_eq!(rep.unseen_entities, 1);
    }

    #[test]
    fn adjacency_single_triple() {
        let g = KnowledgeGraph::from_triples(3, 1, vec![Triple::new(0, 0, 1)], vec![], vec![])
            .unwrap();
        assert_eq!(
            g.adjacency(0),
            &[Incidence {
                relation: 0,
                neighbor: 1,
                direction: Direction::Out
            }]
        );
        assert_eq!(
            g.adjacency(1),
            &[Incidence {
                relation: 0,
                neighbor: 0,
                direction: Direction::In
            }]
        );
        assert!(g.adjacency(2).is_empty());
        assert!(matches!(g.lookup_adjacency(3), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn adjacency_matches_exhaustive_scan() {
        // node 0 is head twice, tail once
        let train = vec![
            Triple::new(0, 1, 2),
            Triple::new(0, 0, 3),
            Triple::new(3, 1, 0),
            Triple::new(2, 0, 3),
        ];
        let g = KnowledgeGraph::from_triples(4, 2, train.clone(), vec![], vec![]).unwrap();
        for e in 0..4u32 {
            let mut expect = Vec::new();
            for t in &train {
                if t.head == e {
                    expect.push(Incidence {
                        relation: t.relation,
                        neighbor: t.tail,
                        direction: Direction::Out,
                    });
                }
                if t.tail == e {
                    expect.push(Incidence {
                        relation: t.relation,
                        neighbor: t.head,
                        direction: Direction::In,
                    });
                }
            }
            expect.sort();
            assert_eq!(g.adjacency(e), expect.as_slice());
        }
        assert_eq!(g.adjacency(0).len(), 3);
    }

    #[test]
    fn percentile_nearest_rank() {
        let out: Vec<u32> = (1..=100).collect();
        let inc = vec![0u32; 100];
        let s = DegreeStats::from_degrees(&out, &inc).unwrap();
        assert_eq!(s.out_p95, 95);
        assert_eq!(s.in_p95, 0);
        assert_eq!(s.n_estimate, 95);
        assert_eq!(s.max_out, 100);

        let fives = vec![5u32; 10];
        let s = DegreeStats::from_degrees(&fives, &fives).unwrap();
        assert_eq!(s.n_estimate, 10);
    }

    #[test]
    fn degree_stats_on_empty_graph_fails() {
        let g = KnowledgeGraph::from_triples(2, 1, vec![], vec![], vec![]).unwrap();
        assert!(degree_stats(&g).is_err());
    }

    #[test]
    fn known_set_covers_all_splits() {
        let g = KnowledgeGraph::from_triples(
            4,
            1,
            vec![Triple::new(0, 0, 1)],
            vec![Triple::new(1, 0, 2)],
            vec![Triple::new(2, 0, 3), Triple::new(0, 0, 1)],
        )
        .unwrap();
        assert_eq!(g.known_len(), 3);
        assert!(g.is_known(&Triple::new(2, 0, 3)));
        assert_eq!(g.known_tails(0, 0), &[1]);
        // adjacency is train-only
        assert!(g.adjacency(3).is_empty());
    }

    #[test]
    fn node_labels_load_and_lookup() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("labels.tsv");
        std::fs::write(&p, "b\tcat\ttrain\na\tdog\tvalid\nc\tcat\ttest\n").unwrap();
        let mut ents = Dictionary::new();
        for l in ["a", "b", "c", "d"] {
            ents.intern(l);
        }
        let labels = NodeLabels::load(&p, &ents).unwrap();
        assert_eq!(labels.num_classes(), 2);
        assert_eq!(labels.label(1), Some(0));
        assert_eq!(labels.label(0), Some(1));
        assert_eq!(labels.label(3), None);
        assert_eq!(labels.nodes(Split::Test), vec![2]);
        std::fs::write(&p, "a\tcat\ttrain\nzz\tcat\ttrain\n").unwrap();
        match NodeLabels::load(&p, &ents) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        std::fs::write(&p, "a\tcat\ttrain\na\tdog\ttest\n").unwrap();
        assert!(NodeLabels::load(&p, &ents).is_err());
    }
}
