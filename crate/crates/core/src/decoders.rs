//! Relation-aware scoring heads over entity embeddings, the node classifier,
//! and the weighted margin loss used for link training.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::LinkScorer;
use crate::kg::{EntityId, Side, Triple};
use crate::kge::{transe_score_grad, transe_score_unchecked, EmbeddingTable};
use crate::nn::{xavier_bound, Activation, Dense, DenseTape, Matrix, Module, Param, Real};

/// Default margin of the link loss and RotatE offset.
pub const DEFAULT_GAMMA: f64 = 1.0;
/// Larger margin commonly used with RotatE.
pub const ROTATE_PRESET_GAMMA: f64 = 30.0;
const WEIGHT_SUM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderKind {
    Rotate,
    Distmult,
    Transe,
}

impl DecoderKind {
    pub fn name(self) -> &'static str {
        match self {
            DecoderKind::Rotate => "rotate",
            DecoderKind::Distmult => "distmult",
            DecoderKind::Transe => "transe",
        }
    }
}

/// Wraps an angle into `[-π, π)`.
pub fn wrap_phase(theta: f64) -> f64 {
    let w = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if w >= PI {
        -PI
    } else {
        w
    }
}

/// Scores `(h, r, t)` from entity embeddings and learned relation parameters.
///
/// RotatE embeddings are laid out `[re ‖ im]` with one phase per complex
/// coordinate and score `γ − ‖h∘e^{iθ_r} − t‖`. DistMult scores
/// `Σ h·r·t`. The TransE head scores `−‖h + r − t‖_p`.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationHead<T> {
    pub kind: DecoderKind,
    pub relations: Param<T>,
    pub dim: usize,
    pub gamma: f64,
    pub p_norm: u8,
}

impl<T: Real> RelationHead<T> {
    pub fn new(kind: DecoderKind, num_relations: usize, dim: usize, gamma: f64, p_norm: u8, rng: &mut impl Rng) -> Result<Self> {
        if dim == 0 || num_relations == 0 {
            return Err(Error::invalid("decoder needs a positive dimension and at least one relation"));
        }
        if !(p_norm == 1 || p_norm == 2) {
            return Err(Error::invalid(format!("decoder norm must be 1 or 2, got {p_norm}")));
        }
        if !gamma.is_finite() {
            return Err(Error::invalid("decoder gamma must be finite"));
        }
        let relations = match kind {
            DecoderKind::Rotate => {
                if dim % 2 != 0 {
                    return Err(Error::invalid(format!("rotate needs an even dimension, got {dim}")));
                }
                let mut p = Param::zeros("decoder.phase", num_relations, dim / 2);
                for v in &mut p.value {
                    *v = T::lit(rng.gen_range(-PI..PI));
                }
                p
            }
            DecoderKind::Distmult => Param::uniform("decoder.relation", num_relations, dim, xavier_bound(num_relations, dim), rng),
            DecoderKind::Transe => Param::uniform("decoder.relation", num_relations, dim, 6.0 / (dim as f64).sqrt(), rng),
        };
        Ok(Self {
            kind,
            relations,
            dim,
            gamma,
            p_norm,
        })
    }

    pub fn num_relations(&self) -> usize {
        self.relations.rows
    }

    /// Copies relation vectors from pretrained TransE tables.
    pub fn init_from_transe(&mut self, table: &EmbeddingTable) -> Result<()> {
        if self.kind != DecoderKind::Transe {
            return Err(Error::invalid("only the transe head can start from transe relations"));
        }
        if table.rows != self.relations.rows || table.dim != self.dim {
            return Err(Error::shape(format!(
                "transe relations are {}x{}, head expects {}x{}",
                table.rows, table.dim, self.relations.rows, self.dim
            )));
        }
        self.relations.value = table.data.iter().map(|&v| T::lit(f64::from(v))).collect();
        Ok(())
    }

    fn check(&self, h: &[T], r: usize, t: &[T]) -> Result<()> {
        if r >= self.num_relations() {
            return Err(Error::OutOfRange {
                kind: "relation",
                id: r as u64,
                count: self.num_relations() as u64,
            });
        }
        if h.len() != self.dim || t.len() != self.dim {
            return Err(Error::shape(format!(
                "decoder expects width {}, got {} and {}",
                self.dim,
                h.len(),
                t.len()
            )));
        }
        Ok(())
    }

    pub fn score(&self, h: &[T], r: usize, t: &[T]) -> Result<T> {
        self.check(h, r, t)?;
        Ok(self.score_unchecked(h, r, t))
    }

    fn score_unchecked(&self, h: &[T], r: usize, t: &[T]) -> T {
        let rel = self.relations.row(r);
        match self.kind {
            DecoderKind::Transe => transe_score_unchecked(h, rel, t, self.p_norm),
            DecoderKind::Distmult => h.iter().zip(rel).zip(t).map(|((a, b), c)| *a * *b * *c).sum(),
            DecoderKind::Rotate => T::lit(self.gamma) - self.rotate_distance(h, rel, t),
        }
    }

    fn rotate_residual(h: &[T], phase: &[T], t: &[T], j: usize) -> (T, T) {
        let k = phase.len();
        let th = wrap_phase(phase[j].as_f64());
        let (s, c) = (T::lit(th.sin()), T::lit(th.cos()));
        let (hr, hi) = (h[j], h[j + k]);
        (hr * c - hi * s - t[j], hr * s + hi * c - t[j + k])
    }

    fn rotate_distance(&self, h: &[T], phase: &[T], t: &[T]) -> T {
        let mut acc = T::zero();
        for j in 0..phase.len() {
            let (re, im) = Self::rotate_residual(h, phase, t, j);
            let sq = re * re + im * im;
            acc += if self.p_norm == 1 { sq.sqrt() } else { sq };
        }
        if self.p_norm == 1 {
            acc
        } else {
            acc.sqrt()
        }
    }

    /// Adds `g·∂s/∂h` to `gh`, `g·∂s/∂t` to `gt` and `g·∂s/∂r` to the
    /// relation gradient.
    pub fn score_backward(&mut self, h: &[T], r: usize, t: &[T], g: T, gh: &mut [T], gt: &mut [T]) -> Result<()> {
        self.check(h, r, t)?;
        if gh.len() != self.dim || gt.len() != self.dim {
            return Err(Error::shape("decoder gradient buffers have the wrong width"));
        }
        let cols = self.relations.cols;
        match self.kind {
            DecoderKind::Transe => {
                let dh = transe_score_grad(h, self.relations.row(r), t, self.p_norm);
                let gr = &mut self.relations.grad[r * cols..(r + 1) * cols];
                for j in 0..self.dim {
                    let v = g * dh[j];
                    gh[j] += v;
                    gr[j] += v;
                    gt[j] -= v;
                }
            }
            DecoderKind::Distmult => {
                let rel = self.relations.row(r).to_vec();
                let gr = &mut self.relations.grad[r * cols..(r + 1) * cols];
                for j in 0..self.dim {
                    gh[j] += g * rel[j] * t[j];
                    gr[j] += g * h[j] * t[j];
                    gt[j] += g * h[j] * rel[j];
                }
            }
            DecoderKind::Rotate => {
                let phase = self.relations.row(r).to_vec();
                let k = cols;
                let dist = self.rotate_distance(h, &phase, t);
                let gr = &mut self.relations.grad[r * cols..(r + 1) * cols];
                for j in 0..k {
                    let (re, im) = Self::rotate_residual(h, &phase, t, j);
                    let denom = if self.p_norm == 1 { (re * re + im * im).sqrt() } else { dist };
                    if denom == T::zero() {
                        continue;
                    }
                    // ∂s/∂re = −re/denom, likewise for im
                    let (dre, dim_) = (-g * re / denom, -g * im / denom);
                    let th = wrap_phase(phase[j].as_f64());
                    let (s, c) = (T::lit(th.sin()), T::lit(th.cos()));
                    let (hr, hi) = (h[j], h[j + k]);
                    gh[j] += dre * c + dim_ * s;
                    gh[j + k] += -dre * s + dim_ * c;
                    gt[j] -= dre;
                    gt[j + k] -= dim_;
                    gr[j] += dre * (-hr * s - hi * c) + dim_ * (hr * c - hi * s);
                }
            }
        }
        Ok(())
    }

    /// Scores `(rows[h], r, rows[t])` triples over an embedding matrix.
    pub fn score_batch(&self, emb: &Matrix<T>, triples: &[(usize, u32, usize)]) -> Result<Vec<T>> {
        triples
            .iter()
            .map(|&(h, r, t)| {
                if h >= emb.rows() || t >= emb.rows() {
                    return Err(Error::shape(format!("embedding row {} beyond {}", h.max(t), emb.rows())));
                }
                self.score(emb.row(h), r as usize, emb.row(t))
            })
            .collect()
    }

    /// Back-propagates per-triple score gradients into `grad_emb` and the
    /// relation parameters.
    pub fn backward_batch(
        &mut self,
        emb: &Matrix<T>,
        triples: &[(usize, u32, usize)],
        grads: &[T],
        grad_emb: &mut Matrix<T>,
    ) -> Result<()> {
        if grads.len() != triples.len() || grad_emb.shape() != emb.shape() {
            return Err(Error::shape("decoder backward buffers do not match the batch"));
        }
        let mut gh = vec![T::zero(); self.dim];
        let mut gt = vec![T::zero(); self.dim];
        for (&(h, r, t), &g) in triples.iter().zip(grads) {
            if g == T::zero() {
                continue;
            }
            gh.iter_mut().for_each(|v| *v = T::zero());
            gt.iter_mut().for_each(|v| *v = T::zero());
            self.score_backward(emb.row(h), r as usize, emb.row(t), g, &mut gh, &mut gt)?;
            for (a, b) in grad_emb.row_mut(h).iter_mut().zip(&gh) {
                *a += *b;
            }
            for (a, b) in grad_emb.row_mut(t).iter_mut().zip(&gt) {
                *a += *b;
            }
        }
        Ok(())
    }
}

impl<T: Real> Module<T> for RelationHead<T> {
    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.relations]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.relations]
    }
}

/// Ranks candidates with a relation head over a full entity embedding table.
pub struct EmbeddingScorer<'a> {
    pub embeddings: &'a Matrix<f32>,
    pub head: &'a RelationHead<f32>,
}

impl EmbeddingScorer<'_> {
    /// Vector that, placed on the query side, makes the score a function of
    /// the candidate alone, for the translational heads.
    fn anchor(&self, query: &Triple, side: Side) -> Vec<f32> {
        let r = query.relation as usize;
        let rel = self.head.relations.row(r);
        let k = rel.len();
        match (self.head.kind, side) {
            (DecoderKind::Transe, Side::Tail) => {
                let h = self.embeddings.row(query.head as usize);
                h.iter().zip(rel).map(|(a, b)| a + b).collect()
            }
            (DecoderKind::Transe, Side::Head) => {
                let t = self.embeddings.row(query.tail as usize);
                t.iter().zip(rel).map(|(a, b)| a - b).collect()
            }
            (DecoderKind::Rotate, _) => {
                // |h∘e^{iθ} − t| = |t∘e^{−iθ} − h| coordinate-wise
                let (src, sign) = match side {
                    Side::Tail => (self.embeddings.row(query.head as usize), 1.0),
                    Side::Head => (self.embeddings.row(query.tail as usize), -1.0),
                };
                let mut out = vec![0f32; 2 * k];
                for j in 0..k {
                    let th = sign * wrap_phase(f64::from(rel[j]));
                    let (s, c) = (th.sin() as f32, th.cos() as f32);
                    out[j] = src[j] * c - src[j + k] * s;
                    out[j + k] = src[j] * s + src[j + k] * c;
                }
                out
            }
            (DecoderKind::Distmult, _) => {
                let other = self.embeddings.row(query.entity(side.other()) as usize);
                other.iter().zip(rel).map(|(a, b)| a * b).collect()
            }
        }
    }
}

impl LinkScorer for EmbeddingScorer<'_> {
    fn num_entities(&self) -> usize {
        self.embeddings.rows()
    }

    fn score_candidates(&self, query: &Triple, side: Side, candidates: &[EntityId], out: &mut [f32]) {
        let a = self.anchor(query, side);
        let k = a.len() / 2;
        let gamma = self.head.gamma as f32;
        let p1 = self.head.p_norm == 1;
        for (o, &c) in out.iter_mut().zip(candidates) {
            let e = self.embeddings.row(c as usize);
            *o = match self.head.kind {
                DecoderKind::Distmult => a.iter().zip(e).map(|(x, y)| x * y).sum(),
                DecoderKind::Transe => {
                    let it = a.iter().zip(e).map(|(x, y)| x - y);
                    if p1 {
                        -it.map(f32::abs).sum::<f32>()
                    } else {
                        -it.map(|d| d * d).sum::<f32>().sqrt()
                    }
                }
                DecoderKind::Rotate => {
                    let mut acc = 0f32;
                    for j in 0..k {
                        let (re, im) = (a[j] - e[j], a[j + k] - e[j + k]);
                        let sq = re * re + im * im;
                        acc += if p1 { sq.sqrt() } else { sq };
                    }
                    gamma - if p1 { acc } else { acc.sqrt() }
                }
            };
        }
    }
}

/// Two-layer MLP over node embeddings producing class logits.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead<T> {
    pub hidden: Dense<T>,
    pub out: Dense<T>,
}

pub struct ClassifierTape<T> {
    hidden: DenseTape<T>,
    out: DenseTape<T>,
}

impl<T: Real> ClassifierHead<T> {
    pub fn new(dim: usize, hidden: usize, classes: usize, rng: &mut impl Rng) -> Result<Self> {
        if dim == 0 || hidden == 0 || classes < 2 {
            return Err(Error::invalid("classifier needs positive widths and at least two classes"));
        }
        Ok(Self {
            hidden: Dense::new("classifier.hidden", dim, hidden, Activation::Relu, rng),
            out: Dense::new("classifier.out", hidden, classes, Activation::Identity, rng),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.out.fan_out()
    }

    pub fn forward(&self, x: &Matrix<T>) -> Result<(Matrix<T>, ClassifierTape<T>)> {
        let (a, hidden) = self.hidden.forward(x)?;
        let (logits, out) = self.out.forward(&a)?;
        Ok((logits, ClassifierTape { hidden, out }))
    }

    pub fn backward(&mut self, tape: &ClassifierTape<T>, grad_logits: &Matrix<T>) -> Result<Matrix<T>> {
        let ga = self.out.backward(&tape.out, grad_logits)?;
        self.hidden.backward(&tape.hidden, &ga)
    }

    /// Class probabilities.
    pub fn classify(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        Ok(crate::nn::softmax_rows(&self.forward(x)?.0))
    }
}

impl<T: Real> Module<T> for ClassifierHead<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut v = self.hidden.params();
        v.extend(self.out.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = self.hidden.params_mut();
        v.extend(self.out.params_mut());
        v
    }
}

/// Weighted margin loss
/// `mean_i Σ_k w_ik · max(0, γ − s_i + s'_ik)`.
///
/// Weights are treated as constants. Returns the loss with gradients for the
/// positive and negative scores.
pub fn link_loss<T: Real>(pos: &[T], neg: &Matrix<T>, weights: &Matrix<T>, gamma: f64) -> Result<(T, Vec<T>, Matrix<T>)> {
    if neg.rows() != pos.len() || weights.shape() != neg.shape() {
        return Err(Error::shape(format!(
            "link loss: {} positives, negatives {:?}, weights {:?}",
            pos.len(),
            neg.shape(),
            weights.shape()
        )));
    }
    if pos.is_empty() {
        return Err(Error::invalid("link loss over an empty batch"));
    }
    for i in 0..weights.rows() {
        let s: f64 = weights.row(i).iter().map(|w| w.as_f64()).sum();
        if (s - 1.0).abs() > WEIGHT_SUM_TOL || weights.row(i).iter().any(|w| *w < T::zero()) {
            return Err(Error::invalid(format!("negative weights of row {i} sum to {s}, not 1")));
        }
    }
    let inv_b = T::lit(1.0 / pos.len() as f64);
    let gamma = T::lit(gamma);
    let mut loss = T::zero();
    let mut gpos = vec![T::zero(); pos.len()];
    let mut gneg = Matrix::zeros(neg.rows(), neg.cols());
    for i in 0..pos.len() {
        for k in 0..neg.cols() {
            let m = gamma - pos[i] + neg.get(i, k);
            if m > T::zero() {
                let w = weights.get(i, k);
                loss += w * m * inv_b;
                gpos[i] -= w * inv_b;
                gneg.set(i, k, w * inv_b);
            }
        }
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite("link loss".into()));
    }
    Ok((loss, gpos, gneg))
}
