//! Per-entity Bloom filters over typed 1-hop neighborhoods.
//!
//! Every train triple `(h, r, t)` inserts the key `(r, t, out)` into the
//! filter of `h` and `(r, h, in)` into the filter of `t`. Rows are stored as
//! packed `u64` words; bit `j` of a row is bit `j % 64` of word `j / 64`, which
//! serializes to the on-disk little-endian byte order directly.

use std::io::Cursor;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{BinReader, BinWriter};
use crate::kg::{Direction, EntityId, KnowledgeGraph, RelationId, Triple};

pub const DEFAULT_EPSILON: f64 = 0.01;
pub const DEFAULT_MAX_BITS: u32 = 1024;
/// Fixed-width preset for graphs where degree statistics are not available.
pub const PRESET_BITS: u32 = 500;
const MIN_BITS: u32 = 8;
const SATURATION: f64 = 0.9;
const FILE_MAGIC: &[u8; 4] = b"GHBF";
const FILE_VERSION: u16 = 1;

/// The inputs `m` and `k` were derived from, when they were derived.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sizing {
    pub n: u64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BloomConfig {
    pub m: u32,
    pub k: u16,
    pub seed: u64,
    pub sizing: Option<Sizing>,
}

fn validate_sizing(n: u64, epsilon: f64) -> Result<()> {
    if n == 0 {
        return Err(Error::invalid("bloom sizing needs n >= 1"));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::invalid(format!(
            "bloom epsilon must lie in (0, 1), got {epsilon}"
        )));
    }
    Ok(())
}

fn hashes_for(m: u32, n: u64) -> u16 {
    let k = (f64::from(m) / n as f64 * std::f64::consts::LN_2).round();
    k.clamp(1.0, f64::from(u16::MAX)) as u16
}

/// Optimal `(m, k)` for `n` insertions at false-positive rate `epsilon`.
pub fn size_params(n: u64, epsilon: f64) -> Result<BloomConfig> {
    validate_sizing(n, epsilon)?;
    let ln2 = std::f64::consts::LN_2;
    let m = (-(n as f64) * epsilon.ln() / (ln2 * ln2)).ceil();
    if m > f64::from(u32::MAX) {
        return Err(Error::invalid(format!("bloom filter of {m} bits is too large")));
    }
    let m = (m as u32).max(MIN_BITS);
    Ok(BloomConfig {
        m,
        k: hashes_for(m, n),
        seed: 0,
        sizing: Some(Sizing { n, epsilon }),
    })
}

impl BloomConfig {
    /// Formula sizing with `m` capped at `max_bits`; `k` follows the capped `m`.
    pub fn capped(n: u64, epsilon: f64, max_bits: u32) -> Result<Self> {
        let mut cfg = size_params(n, epsilon)?;
        if max_bits < MIN_BITS {
            return Err(Error::invalid(format!("bloom max bits must be >= {MIN_BITS}")));
        }
        if cfg.m > max_bits {
            cfg.m = max_bits;
            cfg.k = hashes_for(max_bits, n);
        }
        Ok(cfg)
    }

    /// Explicit `m` and `k`.
    pub fn fixed(m: u32, k: u16) -> Result<Self> {
        let cfg = Self {
            m,
            k,
            seed: 0,
            sizing: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < MIN_BITS {
            return Err(Error::invalid(format!(
                "bloom m must be >= {MIN_BITS}, got {}",
                self.m
            )));
        }
        if self.k == 0 {
            return Err(Error::invalid("bloom k must be >= 1"));
        }
        Ok(())
    }

    pub fn bytes_per_row(&self) -> u64 {
        u64::from(self.m).div_ceil(8)
    }

    /// Total bank size in bytes for `entities` rows.
    pub fn footprint_bytes(&self, entities: u64) -> u64 {
        self.bytes_per_row() * entities
    }

    fn hash_seed(&self) -> u32 {
        (self.seed ^ (self.seed >> 32)) as u32
    }

    /// The `k` bit positions of `key`.
    pub fn positions(&self, key: &[u8]) -> impl Iterator<Item = u32> {
        let h = murmur3::murmur3_x64_128(&mut Cursor::new(key), self.hash_seed())
            .expect("in-memory read");
        let h1 = h as u64;
        let h2 = (h >> 64) as u64;
        let m = u64::from(self.m);
        (0..u64::from(self.k)).map(move |i| (h1.wrapping_add(i.wrapping_mul(h2)) % m) as u32)
    }
}

fn push_varint(out: &mut Vec<u8>, mut v: u32) {
    loop {
        let byte = (v & 0x7f) as u8;
        v >>= 7;
        if v == 0 {
            out.push(byte);
            return;
        }
        out.push(byte | 0x80);
    }
}

/// Length-delimited encoding of a typed neighbor: direction byte, then LEB128
/// relation id, then LEB128 entity id.
pub fn neighbor_key(relation: RelationId, entity: EntityId, direction: Direction) -> Vec<u8> {
    let mut key = Vec::with_capacity(11);
    neighbor_key_into(&mut key, relation, entity, direction);
    key
}

pub fn neighbor_key_into(
    key: &mut Vec<u8>,
    relation: RelationId,
    entity: EntityId,
    direction: Direction,
) {
    key.clear();
    key.push(match direction {
        Direction::Out => b'>',
        Direction::In => b'<',
    });
    push_varint(key, relation);
    push_varint(key, entity);
}

#[derive(Debug, Clone, PartialEq)]
pub struct BloomBank {
    config: BloomConfig,
    entities: usize,
    words_per_row: usize,
    words: Vec<u64>,
}

impl BloomBank {
    pub fn empty(config: BloomConfig, entities: usize) -> Result<Self> {
        config.validate()?;
        let words_per_row = (config.m as usize).div_ceil(64);
        Ok(Self {
            config,
            entities,
            words_per_row,
            words: vec![0; words_per_row * entities],
        })
    }

    pub fn config(&self) -> &BloomConfig {
        &self.config
    }

    pub fn num_entities(&self) -> usize {
        self.entities
    }

    pub fn m(&self) -> usize {
        self.config.m as usize
    }

    fn check(&self, e: EntityId) -> Result<usize> {
        let i = e as usize;
        if i < self.entities {
            Ok(i)
        } else {
            Err(Error::OutOfRange {
                kind: "entity",
                id: u64::from(e),
                count: self.entities as u64,
            })
        }
    }

    fn row_words(&self, e: usize) -> &[u64] {
        &self.words[e * self.words_per_row..(e + 1) * self.words_per_row]
    }

    pub fn insert(&mut self, e: EntityId, key: &[u8]) -> Result<()> {
        let e = self.check(e)?;
        let base = e * self.words_per_row;
        for p in self.config.positions(key) {
            self.words[base + (p / 64) as usize] |= 1u64 << (p % 64);
        }
        Ok(())
    }

    fn insert_triple(&mut self, t: &Triple, key: &mut Vec<u8>) {
        neighbor_key_into(key, t.relation, t.tail, Direction::Out);
        self.insert(t.head, key).expect("ids validated by graph");
        neighbor_key_into(key, t.relation, t.head, Direction::In);
        self.insert(t.tail, key).expect("ids validated by graph");
    }

    /// True iff all `k` positions of `key` are set in row `e`.
    pub fn query(&self, e: EntityId, key: &[u8]) -> Result<bool> {
        let row = self.row_words(self.check(e)?);
        Ok(self
            .config
            .positions(key)
            .all(|p| row[(p / 64) as usize] >> (p % 64) & 1 == 1))
    }

    pub fn contains_neighbor(
        &self,
        e: EntityId,
        relation: RelationId,
        neighbor: EntityId,
        direction: Direction,
    ) -> Result<bool> {
        self.query(e, &neighbor_key(relation, neighbor, direction))
    }

    pub fn bit(&self, e: EntityId, j: u32) -> Result<bool> {
        let row = self.row_words(self.check(e)?);
        if j >= self.config.m {
            return Err(Error::OutOfRange {
                kind: "bit",
                id: u64::from(j),
                count: u64::from(self.config.m),
            });
        }
        Ok(row[(j / 64) as usize] >> (j % 64) & 1 == 1)
    }

    pub fn popcount(&self, e: EntityId) -> Result<u32> {
        Ok(self
            .row_words(self.check(e)?)
            .iter()
            .map(|w| w.count_ones())
            .sum())
    }

    /// Row `e` as a 0/1 vector of length `m`.
    pub fn row_as_feature(&self, e: EntityId) -> Result<Vec<f32>> {
        let mut out = vec![0.0f32; self.m()];
        for j in self.active_bits(e)? {
            out[j as usize] = 1.0;
        }
        Ok(out)
    }

    /// Indices of set bits in row `e`, ascending.
    pub fn active_bits(&self, e: EntityId) -> Result<Vec<u32>> {
        let row = self.row_words(self.check(e)?);
        let mut out = Vec::new();
        for (wi, &w) in row.iter().enumerate() {
            let mut w = w;
            while w != 0 {
                let b = w.trailing_zeros();
                out.push(wi as u32 * 64 + b);
                w &= w - 1;
            }
        }
        Ok(out)
    }

    /// Rows whose popcount exceeds 90% of `m`.
    pub fn saturated_rows(&self) -> usize {
        let limit = SATURATION * f64::from(self.config.m);
        (0..self.entities)
            .filter(|&e| {
                let pc: u32 = self.row_words(e).iter().map(|w| w.count_ones()).sum();
                f64::from(pc) > limit
            })
            .count()
    }

    /// Bitwise OR of another bank with the same shape and hash config.
    pub fn merge(&mut self, other: &BloomBank) -> Result<()> {
        if self.config != other.config || self.entities != other.entities {
            return Err(Error::shape("bloom banks differ in config or entity count"));
        }
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a |= *b;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BinWriter::create(path)?;
        w.bytes(FILE_MAGIC)?;
        w.u16(FILE_VERSION)?;
        w.u64(self.entities as u64)?;
        w.u32(self.config.m)?;
        w.u16(self.config.k)?;
        w.u64(self.config.seed)?;
        let row_bytes = self.config.bytes_per_row() as usize;
        let mut buf = Vec::with_capacity(self.words_per_row * 8);
        for e in 0..self.entities {
            buf.clear();
            for word in self.row_words(e) {
                buf.extend_from_slice(&word.to_le_bytes());
            }
            w.bytes(&buf[..row_bytes])?;
        }
        w.finish()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BinReader::open(path)?;
        r.magic(FILE_MAGIC)?;
        let version = r.u16()?;
        if version != FILE_VERSION {
            return Err(r.format_error(format!("unsupported version {version}")));
        }
        let entities = r.u64()? as usize;
        let m = r.u32()?;
        let k = r.u16()?;
        let seed = r.u64()?;
        let config = BloomConfig {
            m,
            k,
            seed,
            sizing: None,
        };
        config.validate().map_err(|e| r.format_error(e.to_string()))?;
        let mut bank = Self::empty(config, entities)?;
        let row_bytes = config.bytes_per_row() as usize;
        let mut buf = vec![0u8; row_bytes];
        for e in 0..entities {
            r.bytes(&mut buf)?;
            let row = &mut bank.words[e * bank.words_per_row..(e + 1) * bank.words_per_row];
            for (wi, chunk) in buf.chunks(8).enumerate() {
                let mut b = [0u8; 8];
                b[..chunk.len()].copy_from_slice(chunk);
                row[wi] = u64::from_le_bytes(b);
            }
            let tail_bits = m % 64;
            if tail_bits != 0 && row[bank.words_per_row - 1] >> tail_bits != 0 {
                return Err(r.format_error(format!("row {e} has bits set beyond m")));
            }
        }
        r.expect_eof()?;
        Ok(bank)
    }
}

fn build_from(triples: &[Triple], entities: usize, cfg: &BloomConfig) -> Result<BloomBank> {
    let mut bank = BloomBank::empty(*cfg, entities)?;
    let mut key = Vec::with_capacity(11);
    for t in triples {
        bank.insert_triple(t, &mut key);
    }
    Ok(bank)
}

fn warn_saturation(bank: &BloomBank) {
    let sat = bank.saturated_rows();
    if sat > 0 {
        log::warn!(
            "{sat} bloom rows have more than {:.0}% of {} bits set",
            SATURATION * 100.0,
            bank.config.m
        );
    }
}

/// One pass over the train triples.
pub fn build_bank(g: &KnowledgeGraph, cfg: &BloomConfig) -> Result<BloomBank> {
    let bank = build_from(&g.train, g.num_entities(), cfg)?;
    warn_saturation(&bank);
    Ok(bank)
}

/// Splits the train triples into `shards` contiguous parts, builds each on its
/// own thread, and ORs the results. Bit-identical to [`build_bank`].
pub fn build_bank_sharded(g: &KnowledgeGraph, cfg: &BloomConfig, shards: usize) -> Result<BloomBank> {
    let shards = shards.max(1);
    if shards == 1 || g.train.len() < shards {
        return build_bank(g, cfg);
    }
    let chunk = g.train.len().div_ceil(shards);
    let n = g.num_entities();
    let parts: Vec<Result<BloomBank>> = std::thread::scope(|s| {
        let handles: Vec<_> = g
            .train
            .chunks(chunk)
            .map(|part| s.spawn(move || build_from(part, n, cfg)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().map_err(|_| Error::Internal("bloom shard panicked".into()))?)
            .collect()
    });
    let mut iter = parts.into_iter();
    let mut bank = iter.next().expect("at least one shard")?;
    for p in iter {
        bank.merge(&p?)?;
    }
    warn_saturation(&bank);
    Ok(bank)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use std::collections::HashSet;

    #[test]
    fn sizing_examples() {
        let c = size_params(100, 0.01).unwrap();
        assert_eq!((c.m, c.k), (959, 7));
        assert_eq!(c.bytes_per_row(), 120);
        assert!(size_params(0, 0.01).is_err());
        assert!(size_params(10, 0.0).is_err());
        assert!(size_params(10, 1.0).is_err());
        let tiny = size_params(1, 0.5).unwrap();
        assert_eq!(tiny.m, 8);
    }

    #[test]
    fn sizing_matches_closed_form() {
        for &(n, eps) in &[(1u64, 0.1f64), (7, 0.05), (100, 0.01), (1000, 0.001), (37, 0.2)] {
            let m = (-(n as f64) * eps.ln() / 2f64.ln().powi(2)).ceil().max(8.0) as u32;
            let k = ((m as f64 / n as f64) * 2f64.ln()).round().max(1.0) as u16;
            let c = size_params(n, eps).unwrap();
            assert_eq!((c.m, c.k), (m, k), "n={n} eps={eps}");
        }
    }

    #[test]
    fn footprint_of_large_bank() {
        let c = BloomConfig::fixed(1024, 7).unwrap();
        assert_eq!(c.footprint_bytes(10_000_000), 1_280_000_000);
    }

    #[test]
    fn capped_sizing_recomputes_k() {
        let c = BloomConfig::capped(1000, 0.01, DEFAULT_MAX_BITS).unwrap();
        assert_eq!(c.m, 1024);
        assert_eq!(c.k, 1);
        let c = BloomConfig::capped(100, 0.01, DEFAULT_MAX_BITS).unwrap();
        assert_eq!((c.m, c.k), (959, 7));
    }

    #[test]
    fn keys_distinguish_direction() {
        assert_ne!(neighbor_key(3, 7, Direction::Out), neighbor_key(3, 7, Direction::In));
        assert_eq!(neighbor_key(3, 7, Direction::Out), neighbor_key(3, 7, Direction::Out));
    }

    #[test]
    fn keys_have_no_collisions_below_100() {
        let mut seen = HashSet::new();
        for r in 0..100u32 {
            for e in 0..100u32 {
                for d in [Direction::Out, Direction::In] {
                    assert!(seen.insert(neighbor_key(r, e, d)), "collision at {r} {e} {d:?}");
                }
            }
        }
        assert_ne!(neighbor_key(1, 23, Direction::Out), neighbor_key(12, 3, Direction::Out));
    }

    #[test]
    fn single_triple_and_isolated_node() {
        let g = KnowledgeGraph::from_triples(3, 1, vec![Triple::new(0, 0, 1)], vec![], vec![])
            .unwrap();
        let bank = build_bank(&g, &size_params(4, 0.01).unwrap()).unwrap();
        assert!(bank.contains_neighbor(0, 0, 1, Direction::Out).unwrap());
        assert!(bank.contains_neighbor(1, 0, 0, Direction::In).unwrap());
        assert_eq!(bank.popcount(2).unwrap(), 0);
        assert!(!bank.query(2, b"anything").unwrap());
        assert!(bank.query(3, b"x").is_err());
        assert!(bank.row_as_feature(3).is_err());
    }

    #[test]
    fn row_feature_with_edge_bits() {
        let mut bank = BloomBank::empty(BloomConfig::fixed(100, 1).unwrap(), 2).unwrap();
        assert!(bank.row_as_feature(0).unwrap().iter().all(|&x| x == 0.0));
        bank.words[0] |= 1;
        bank.words[1] |= 1 << (99 - 64);
        let f = bank.row_as_feature(0).unwrap();
        let ones: Vec<usize> = f
            .iter()
            .enumerate()
            .filter(|(_, &x)| x == 1.0)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(ones, vec![0, 99]);
        assert!(f.iter().all(|&x| x == 0.0 || x == 1.0));
    }

    fn random_graph(seed: u64, n_e: u32, n_r: u32, n_t: usize) -> KnowledgeGraph {
        let mut rng = crate::seed::rng(seed);
        let train = (0..n_t)
            .map(|_| {
                Triple::new(
                    rng.gen_range(0..n_e),
                    rng.gen_range(0..n_r),
                    rng.gen_range(0..n_e),
                )
            })
            .collect();
        KnowledgeGraph::from_triples(n_e as usize, n_r as usize, train, vec![], vec![]).unwrap()
    }

    #[test]
    fn no_false_negatives_on_random_graph() {
        let g = random_graph(11, 200, 8, 1000);
        let stats = crate::kg::degree_stats(&g).unwrap();
        let cfg = BloomConfig::capped(u64::from(stats.n_estimate), 0.01, 1024)
            .unwrap()
            .with_seed(5);
        let bank = build_bank(&g, &cfg).unwrap();
        for e in 0..g.num_entities() as u32 {
            for inc in g.adjacency(e) {
                assert!(bank
                    .contains_neighbor(e, inc.relation, inc.neighbor, inc.direction)
                    .unwrap());
            }
            let deg = g.adjacency(e).len() as u32;
            assert!(bank.popcount(e).unwrap() <= u32::from(cfg.k) * deg);
        }
    }

    #[test]
    fn empirical_fpr_within_twice_target() {
        let n = 200u64;
        let cfg = size_params(n, 0.01).unwrap().with_seed(3);
        let mut bank = BloomBank::empty(cfg, 1).unwrap();
        for i in 0..n as u32 {
            bank.insert(0, &neighbor_key(1, i, Direction::Out)).unwrap();
        }
        let probes = 100_000u32;
        let hits = (0..probes)
            .filter(|&i| bank.query(0, &neighbor_key(2, i, Direction::In)).unwrap())
            .count();
        let fpr = hits as f64 / f64::from(probes);
        assert!(fpr <= 0.02, "fpr {fpr}");
    }

    #[test]
    fn sharded_build_is_identical() {
        let g = random_graph(3, 300, 5, 2000);
        let cfg = BloomConfig::fixed(256, 3).unwrap().with_seed(9);
        let a = build_bank(&g, &cfg).unwrap();
        for shards in [2, 3, 8] {
            assert_eq!(a, build_bank_sharded(&g, &cfg, shards).unwrap());
        }
    }

    #[test]
    fn file_round_trip_and_bit_order() {
        let g = random_graph(4, 50, 3, 200);
        let cfg = BloomConfig::fixed(77, 2).unwrap().with_seed(1);
        let bank = build_bank(&g, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.ghbf");
        bank.save(&p).unwrap();
        let raw = std::fs::read(&p).unwrap();
        let header = 4 + 2 + 8 + 4 + 2 + 8;
        assert_eq!(raw.len(), header + 50 * 10);
        for e in 0..50u32 {
            for j in 0..77u32 {
                let byte = raw[header + e as usize * 10 + (j / 8) as usize];
                assert_eq!(byte >> (j % 8) & 1 == 1, bank.bit(e, j).unwrap());
            }
        }
        let back = BloomBank::load(&p).unwrap();
        assert_eq!(back.words, bank.words);
        assert_eq!((back.config.m, back.config.k, back.config.seed), (77, 2, 1));

        std::fs::write(&p, &raw[..raw.len() - 1]).unwrap();
        assert!(BloomBank::load(&p).is_err());
        let mut bad = raw.clone();
        bad[0] = b'X';
        std::fs::write(&p, &bad).unwrap();
        assert!(BloomBank::load(&p).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn insertion_is_monotone(
            seed in any::<u64>(),
            extra in (0u32..40, 0u32..4, 0u32..40),
        ) {
            let g = random_graph(seed, 40, 4, 60);
            let cfg = BloomConfig::fixed(128, 3).unwrap();
            let before = build_bank(&g, &cfg).unwrap();
            let mut train = g.train.clone();
            train.push(Triple::new(extra.0, extra.1, extra.2));
            let g2 = KnowledgeGraph::from_triples(40, 4, train, vec![], vec![]).unwrap();
            let after = build_bank(&g2, &cfg).unwrap();
            for (a, b) in before.words.iter().zip(&after.words) {
                prop_assert_eq!(a & !b, 0);
            }
        }

        #[test]
        fn build_is_deterministic(seed in any::<u64>(), hseed in any::<u64>()) {
            let g = random_graph(seed, 30, 3, 50);
            let cfg = BloomConfig::fixed(64, 4).unwrap().with_seed(hseed);
            prop_assert_eq!(build_bank(&g, &cfg).unwrap(), build_bank(&g, &cfg).unwrap());
        }

        #[test]
        fn popcount_equals_feature_ones(seed in any::<u64>()) {
            let g = random_graph(seed, 20, 3, 40);
            let bank = build_bank(&g, &BloomConfig::fixed(90, 2).unwrap()).unwrap();
            for e in 0..20u32 {
                let f = bank.row_as_feature(e).unwrap();
                let ones = f.iter().filter(|&&x| x == 1.0).count() as u32;
                prop_assert_eq!(ones, bank.popcount(e).unwrap());
                prop_assert_eq!(bank.active_bits(e).unwrap().len() as u32, ones);
            }
        }
    }
}
