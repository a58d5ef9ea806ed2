//! Negative sampling for link training: filtered uniform corruption,
//! self-adversarial weighting and TransE-guided hard negatives.

use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rustc_hash::FxHashSet;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::LinkScorer;
use crate::kg::{EntityId, KnowledgeGraph, Side, Triple};
use crate::kge::{corrupt_uniform, DEFAULT_RETRIES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeMode {
    /// Uniform filtered corruptions, weighted equally.
    Filtered,
    /// Uniform filtered corruptions, weighted by a softmax of their scores.
    SelfAdv,
    /// Hardest corruptions under frozen TransE from a larger filtered pool,
    /// weighted like `SelfAdv`.
    TranseGuided,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NegativeConfig {
    pub k: usize,
    pub alpha: f64,
    /// Pool size for guided selection, defaults to `16·k`.
    pub k_pool: Option<usize>,
    pub mode: NegativeMode,
    /// Fraction of the `k` negatives that corrupt the head.
    pub head_tail_split: f64,
    pub retries: usize,
}

impl Default for NegativeConfig {
    fn default() -> Self {
        Self {
            k: 32,
            alpha: 1.0,
            k_pool: None,
            mode: NegativeMode::SelfAdv,
            head_tail_split: 0.5,
            retries: DEFAULT_RETRIES,
        }
    }
}

impl NegativeConfig {
    pub fn pool_size(&self) -> usize {
        self.k_pool.unwrap_or(16 * self.k)
    }

    pub fn n_head(&self) -> usize {
        (self.k as f64 * self.head_tail_split).round() as usize
    }

    pub fn errors(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.k == 0 {
            errs.push("negatives.k must be >= 1".into());
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            errs.push(format!("negatives.alpha must be a finite value >= 0, got {}", self.alpha));
        }
        if !(0.0..=1.0).contains(&self.head_tail_split) {
            errs.push(format!("negatives.head_tail_split must lie in [0, 1], got {}", self.head_tail_split));
        }
        if self.mode == NegativeMode::TranseGuided && self.pool_size() < self.k {
            errs.push(format!("negatives.k_pool ({}) must be >= k ({})", self.pool_size(), self.k));
        }
        errs
    }

    pub fn validate(&self) -> Result<()> {
        let errs = self.errors();
        if !errs.is_empty() {
            return Err(Error::Config(errs));
        }
        if self.mode == NegativeMode::TranseGuided && self.pool_size() == self.k {
            log::warn!("k_pool equals k: guided selection keeps the whole pool");
        }
        Ok(())
    }

    fn budget(&self, side: Side) -> usize {
        match side {
            Side::Head => self.n_head(),
            Side::Tail => self.k - self.n_head(),
        }
    }
}

/// Independent RNG for positive `index` of `epoch`.
pub fn substream(seed: u64, epoch: u64, index: u64) -> ChaCha8Rng {
    crate::seed::rng(crate::seed::derive_indexed(seed, &[epoch, index]))
}

/// Negatives for one positive: head corruptions first, then tail corruptions.
pub fn sample_negatives(
    pos: &Triple,
    g: &KnowledgeGraph,
    cfg: &NegativeConfig,
    guide: Option<&dyn LinkScorer>,
    rng: &mut impl Rng,
) -> Result<Vec<Triple>> {
    let mut out = Vec::with_capacity(cfg.k);
    for side in [Side::Head, Side::Tail] {
        let k = cfg.budget(side);
        if k == 0 {
            continue;
        }
        match cfg.mode {
            NegativeMode::Filtered | NegativeMode::SelfAdv => {
                for _ in 0..k {
                    out.push(corrupt_uniform(pos, g, side, rng, cfg.retries)?);
                }
            }
            NegativeMode::TranseGuided => {
                let guide = guide.ok_or_else(|| Error::invalid("guided negatives need TransE embeddings"))?;
                let pool_n = (cfg.pool_size() as u128 * k as u128).div_ceil(cfg.k as u128) as usize;
                let pool = filtered_pool(pos, g, side, pool_n.max(k), rng, cfg.retries)?;
                if pool.len() < k {
                    return Err(Error::invalid(format!(
                        "only {} filtered candidates for {k} guided negatives",
                        pool.len()
                    )));
                }
                let mut scores = vec![0f32; pool.len()];
                guide.score_candidates(pos, side, &pool, &mut scores);
                for e in select_top_k(&pool, &scores, k) {
                    out.push(pos.with(side, e));
                }
            }
        }
    }
    Ok(out)
}

/// Up to `n` distinct entities that corrupt `side` of `pos` into an unknown
/// triple.
pub fn filtered_pool(
    pos: &Triple,
    g: &KnowledgeGraph,
    side: Side,
    n: usize,
    rng: &mut impl Rng,
    retries: usize,
) -> Result<Vec<EntityId>> {
    let n_e = g.num_entities();
    let known = g.known_answers(pos, side);
    let mut excluded = known.len();
    if known.binary_search(&pos.entity(side)).is_err() {
        excluded += 1;
    }
    let available = n_e.saturating_sub(excluded);
    if available <= 2 * n {
        // small candidate set: enumerate and subsample
        let all: Vec<EntityId> = (0..n_e as EntityId)
            .filter(|&e| e != pos.entity(side) && known.binary_search(&e).is_err())
            .collect();
        if all.len() <= n {
            return Ok(all);
        }
        let mut picked: Vec<EntityId> = index::sample(rng, all.len(), n).into_iter().map(|i| all[i]).collect();
        picked.sort_unstable();
        return Ok(picked);
    }
    let mut seen = FxHashSet::default();
    let mut pool = Vec::with_capacity(n);
    let mut attempts = 0usize;
    let cap = n.saturating_mul(8).saturating_add(retries);
    while pool.len() < n && attempts < cap {
        attempts += 1;
        let e = rng.gen_range(0..n_e as EntityId);
        if e == pos.entity(side) || known.binary_search(&e).is_ok() {
            continue;
        }
        if seen.insert(e) {
            pool.push(e);
        }
    }
    Ok(pool)
}

/// The `k` highest-scoring candidates, ties broken by ascending entity id.
pub fn select_top_k(candidates: &[EntityId], scores: &[f32], k: usize) -> Vec<EntityId> {
    let mut idx: Vec<usize> = (0..candidates.len()).collect();
    let cmp = |a: &usize, b: &usize| {
        scores[*b]
            .total_cmp(&scores[*a])
            .then(candidates[*a].cmp(&candidates[*b]))
    };
    let k = k.min(idx.len());
    if k == 0 {
        return Vec::new();
    }
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, cmp);
        idx.truncate(k);
    }
    idx.sort_unstable_by(cmp);
    idx.into_iter().map(|i| candidates[i]).collect()
}

/// `softmax(α·s)` over negative scores, computed with the max subtracted.
pub fn self_adversarial_weights(scores: &[f64], alpha: f64) -> Vec<f64> {
    if scores.is_empty() {
        return Vec::new();
    }
    let max = scores.iter().fold(f64::NEG_INFINITY, |m, &s| m.max(alpha * s));
    let exp: Vec<f64> = scores.iter().map(|&s| (alpha * s - max).exp()).collect();
    let z: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / z).collect()
}

pub fn uniform_weights(k: usize) -> Vec<f64> {
    vec![1.0 / k as f64; k]
}
