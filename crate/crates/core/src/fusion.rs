//! Feature fusion: per-modality two-layer projections of the frozen Bloom,
//! TransE and text features into a common width, concatenated and mapped to
//! the encoder input `h0`.
//!
//! Besides the three frozen branches the network can carry a trainable
//! per-entity ID embedding, which is the only input of the featureless
//! baseline.

use std::path::Path;

use rand::Rng;

use crate::bloom::BloomBank;
use crate::error::{Error, Result};
use crate::io::{BinReader, BinWriter};
use crate::kg::EntityId;
use crate::kge::TransEModel;
use crate::nn::{
    apply_mask, dropout_mask, Activation, Dense, DenseTape, LayerNorm, LayerNormTape, Matrix,
    Mode, Module, Param, Real, SparseTape,
};

/// Text inputs wider than this are projected down before their branch.
pub const TEXT_PROJ_WIDTH: usize = 384;
const TEXT_MAGIC: &[u8; 4] = b"GHFT";

/// Optional per-entity domain features with a presence bitmap.
#[derive(Debug, Clone, PartialEq)]
pub struct TextFeatures {
    pub rows: usize,
    pub dim: usize,
    pub present: Vec<bool>,
    /// Row-major; absent rows are zero.
    pub data: Vec<f32>,
}

impl TextFeatures {
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BinWriter::create(path)?;
        w.bytes(TEXT_MAGIC)?;
        w.u64(self.rows as u64)?;
        w.u32(self.dim as u32)?;
        let mut bitmap = vec![0u8; self.rows.div_ceil(8)];
        for (i, _) in self.present.iter().enumerate().filter(|(_, p)| **p) {
            bitmap[i / 8] |= 1 << (i % 8);
        }
        w.bytes(&bitmap)?;
        w.f32_slice(&self.data)?;
        w.finish()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BinReader::open(path)?;
        r.magic(TEXT_MAGIC)?;
        let rows = r.u64()? as usize;
        let dim = r.u32()? as usize;
        let mut bitmap = vec![0u8; rows.div_ceil(8)];
        r.bytes(&mut bitmap)?;
        let present = (0..rows).map(|i| bitmap[i / 8] >> (i % 8) & 1 == 1).collect();
        let data = r.f32_vec(rows * dim)?;
        r.expect_eof()?;
        Ok(Self {
            rows,
            dim,
            present,
            data,
        })
    }
}

/// Which inputs feed the fusion layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Branches {
    pub bloom: bool,
    pub transe: bool,
    pub text: bool,
    /// Width of a trainable ID embedding, 0 for none.
    pub id_dim: usize,
}

impl Branches {
    pub fn count(&self) -> usize {
        usize::from(self.bloom) + usize::from(self.transe) + usize::from(self.text)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionConfig {
    pub branches: Branches,
    pub bloom_bits: usize,
    pub transe_dim: usize,
    pub text_dim: usize,
    /// Text inputs wider than this get a linear pre-projection.
    pub text_proj_width: usize,
    /// Common projection width `d`.
    pub d: usize,
    /// Hidden width of each branch MLP.
    pub hidden: usize,
    /// Output width (encoder input).
    pub out_dim: usize,
    pub dropout: f64,
    pub layer_norm: bool,
    pub n_entities: usize,
}

impl FusionConfig {
    /// Width of the concatenated vector fed to `W_in`.
    pub fn concat_width(&self) -> usize {
        self.d * self.branches.count() + self.branches.id_dim
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        let b = &self.branches;
        if b.count() == 0 && b.id_dim == 0 {
            errs.push("fusion needs at least one input branch or an id embedding".to_string());
        }
        if b.count() > 0 && (self.d == 0 || self.hidden == 0) {
            errs.push("fusion.d and fusion.hidden must be >= 1".to_string());
        }
        if self.out_dim == 0 {
            errs.push("fusion output width must be >= 1".to_string());
        }
        if b.bloom && self.bloom_bits == 0 {
            errs.push("bloom branch enabled without bloom bits".to_string());
        }
        if b.transe && self.transe_dim == 0 {
            errs.push("transe branch enabled without transe dim".to_string());
        }
        if b.text && (self.text_dim == 0 || self.text_proj_width == 0) {
            errs.push("text branch enabled without text dim".to_string());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            errs.push(format!("fusion.dropout must lie in [0, 1), got {}", self.dropout));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

/// Linear → ReLU → dropout → Linear.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchMlp<T> {
    pub l1: Dense<T>,
    pub l2: Dense<T>,
}

enum L1Tape<T> {
    Dense(DenseTape<T>),
    Sparse(SparseTape<T>),
}

struct BranchTape<T> {
    l1: L1Tape<T>,
    mask: Matrix<T>,
    l2: DenseTape<T>,
}

impl<T: Real> BranchMlp<T> {
    fn new(name: &str, fan_in: usize, hidden: usize, d: usize, rng: &mut impl Rng) -> Self {
        Self {
            l1: Dense::new(&format!("{name}.l1"), fan_in, hidden, Activation::Relu, rng),
            l2: Dense::new(&format!("{name}.l2"), hidden, d, Activation::Identity, rng),
        }
    }

    fn forward(
        &self,
        input: &BranchInput<'_, T>,
        dropout: f64,
        mode: Mode,
        rng: &mut impl Rng,
    ) -> Result<(Matrix<T>, BranchTape<T>)> {
        let (a, l1) = match input {
            BranchInput::Dense(x) => {
                let (a, t) = self.l1.forward(x)?;
                (a, L1Tape::Dense(t))
            }
            BranchInput::Sparse(bits) => {
                let (a, t) = self.l1.forward_binary(bits)?;
                (a, L1Tape::Sparse(t))
            }
        };
        let mask = dropout_mask(a.rows(), a.cols(), dropout, mode, rng)?;
        let a = apply_mask(&a, &mask)?;
        let (z, l2) = self.l2.forward(&a)?;
        Ok((z, BranchTape { l1, mask, l2 }))
    }

    /// Returns the input gradient when `want_input` is set and the input was dense.
    fn backward(
        &mut self,
        tape: &BranchTape<T>,
        grad_z: &Matrix<T>,
        want_input: bool,
    ) -> Result<Option<Matrix<T>>> {
        let ga = self.l2.backward(&tape.l2, grad_z)?;
        let ga = apply_mask(&ga, &tape.mask)?;
        match &tape.l1 {
            L1Tape::Dense(t) if want_input => Ok(Some(self.l1.backward(t, &ga)?)),
            L1Tape::Dense(t) => {
                self.l1.backward_params(t, &ga)?;
                Ok(None)
            }
            L1Tape::Sparse(t) => {
                self.l1.backward_binary(t, &ga)?;
                Ok(None)
            }
        }
    }
}

impl<T: Real> Module<T> for BranchMlp<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut v = self.l1.params();
        v.extend(self.l2.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = self.l1.params_mut();
        v.extend(self.l2.params_mut());
        v
    }
}

pub enum BranchInput<'a, T> {
    Dense(&'a Matrix<T>),
    /// Active bit indices per row, for binary inputs.
    Sparse(&'a [Vec<u32>]),
}

/// Gathered inputs for one list of nodes.
pub struct FusionInput<'a, T> {
    pub bloom: Option<BranchInput<'a, T>>,
    pub transe: Option<&'a Matrix<T>>,
    pub text: Option<&'a Matrix<T>>,
    /// Entity ids, used for the ID embedding.
    pub ids: &'a [EntityId],
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionNet<T> {
    pub config: FusionConfig,
    pub g_bloom: Option<BranchMlp<T>>,
    pub g_transe: Option<BranchMlp<T>>,
    pub text_proj: Option<Dense<T>>,
    pub g_text: Option<BranchMlp<T>>,
    pub id_embedding: Option<Param<T>>,
    pub w_in: Dense<T>,
    pub norm: Option<LayerNorm<T>>,
}

pub struct FusionTape<T> {
    rows: usize,
    ids: Vec<EntityId>,
    bloom: Option<BranchTape<T>>,
    transe: Option<BranchTape<T>>,
    text_proj: Option<DenseTape<T>>,
    text: Option<BranchTape<T>>,
    w_in: DenseTape<T>,
    norm: Option<LayerNormTape<T>>,
}

impl<T: Real> FusionNet<T> {
    pub fn new(config: FusionConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let b = config.branches;
        let (d, h) = (config.d, config.hidden);
        let g_bloom = b.bloom.then(|| BranchMlp::new("fusion.bloom", config.bloom_bits, h, d, rng));
        let g_transe = b.transe.then(|| BranchMlp::new("fusion.transe", config.transe_dim, h, d, rng));
        let (text_proj, g_text) = if b.text {
            let pw = config.text_proj_width;
            let (proj, width) = if config.text_dim > pw {
                (
                    Some(Dense::new("fusion.text_proj", config.text_dim, pw, Activation::Identity, rng)),
                    pw,
                )
            } else {
                (None, config.text_dim)
            };
            (proj, Some(BranchMlp::new("fusion.text", width, h, d, rng)))
        } else {
            (None, None)
        };
        let id_embedding = (b.id_dim > 0).then(|| {
            Param::uniform("fusion.id_embedding", config.n_entities, b.id_dim, 0.1, rng)
        });
        let w_in = Dense::new("fusion.w_in", config.concat_width(), config.out_dim, Activation::Relu, rng);
        let norm = config.layer_norm.then(|| LayerNorm::new("fusion.norm", config.out_dim));
        Ok(Self {
            config,
            g_bloom,
            g_transe,
            text_proj,
            g_text,
            id_embedding,
            w_in,
            norm,
        })
    }

    pub fn out_dim(&self) -> usize {
        self.config.out_dim
    }

    /// `h0 = φ(W_in·[z_transe ‖ z_bloom ‖ z_text ‖ id] + b_in)`, optionally
    /// layer-normalized.
    pub fn forward(
        &self,
        input: &FusionInput<'_, T>,
        mode: Mode,
        rng: &mut impl Rng,
    ) -> Result<(Matrix<T>, FusionTape<T>)> {
        let rows = input.ids.len();
        let p = self.config.dropout;
        let mut blocks: Vec<Matrix<T>> = Vec::new();
        let missing = |what: &str| Error::invalid(format!("fusion input is missing the {what} features"));

        let transe = match (&self.g_transe, input.transe) {
            (Some(net), Some(x)) => {
                check_rows(x.rows(), rows, "transe")?;
                let (z, t) = net.forward(&BranchInput::Dense(x), p, mode, rng)?;
                blocks.push(z);
                Some(t)
            }
            (Some(_), None) => return Err(missing("transe")),
            _ => None,
        };
        let bloom = match (&self.g_bloom, &input.bloom) {
            (Some(net), Some(x)) => {
                let n = match x {
                    BranchInput::Dense(m) => m.rows(),
                    BranchInput::Sparse(s) => s.len(),
                };
                check_rows(n, rows, "bloom")?;
                let (z, t) = net.forward(x, p, mode, rng)?;
                blocks.push(z);
                Some(t)
            }
            (Some(_), None) => return Err(missing("bloom")),
            _ => None,
        };
        let (text_proj, text) = match (&self.g_text, input.text) {
            (Some(net), Some(x)) => {
                check_rows(x.rows(), rows, "text")?;
                let (x2, pt) = match &self.text_proj {
                    Some(proj) => {
                        let (y, t) = proj.forward(x)?;
                        (Some(y), Some(t))
                    }
                    None => (None, None),
                };
                let src = x2.as_ref().unwrap_or(x);
                let (z, t) = net.forward(&BranchInput::Dense(src), p, mode, rng)?;
                blocks.push(z);
                (pt, Some(t))
            }
            (Some(_), None) => return Err(missing("text")),
            _ => (None, None),
        };
        if let Some(emb) = &self.id_embedding {
            let mut m = Matrix::zeros(rows, emb.cols);
            for (i, &e) in input.ids.iter().enumerate() {
                if e as usize >= emb.rows {
                    return Err(Error::OutOfRange {
                        kind: "entity",
                        id: u64::from(e),
                        count: emb.rows as u64,
                    });
                }
                m.row_mut(i).copy_from_slice(emb.row(e as usize));
            }
            blocks.push(m);
        }
        let refs: Vec<&Matrix<T>> = blocks.iter().collect();
        let cat = Matrix::hconcat(&refs)?;
        let (h, w_in) = self.w_in.forward(&cat)?;
        let (h, norm) = match &self.norm {
            Some(ln) => {
                let (y, t) = ln.forward(&h)?;
                (y, Some(t))
            }
            None => (h, None),
        };
        Ok((
            h,
            FusionTape {
                rows,
                ids: input.ids.to_vec(),
                bloom,
                transe,
                text_proj,
                text,
                w_in,
                norm,
            },
        ))
    }

    /// Accumulates gradients of all fusion parameters. Inputs are frozen, so
    /// nothing is returned.
    pub fn backward(&mut self, tape: &FusionTape<T>, grad_h: &Matrix<T>) -> Result<()> {
        if grad_h.rows() != tape.rows {
            return Err(Error::shape(format!(
                "fusion backward: {} gradient rows for {} nodes",
                grad_h.rows(),
                tape.rows
            )));
        }
        let g = match (&mut self.norm, &tape.norm) {
            (Some(ln), Some(t)) => ln.backward(t, grad_h)?,
            _ => grad_h.clone(),
        };
        let gcat = self.w_in.backward(&tape.w_in, &g)?;
        let d = self.config.d;
        let mut off = 0;
        if let (Some(net), Some(t)) = (&mut self.g_transe, &tape.transe) {
            net.backward(t, &gcat.col_block(off, d), false)?;
            off += d;
        }
        if let (Some(net), Some(t)) = (&mut self.g_bloom, &tape.bloom) {
            net.backward(t, &gcat.col_block(off, d), false)?;
            off += d;
        }
        if let (Some(net), Some(t)) = (&mut self.g_text, &tape.text) {
            let has_proj = tape.text_proj.is_some();
            let gx = net.backward(t, &gcat.col_block(off, d), has_proj)?;
            off += d;
            if let (Some(proj), Some(pt), Some(gx)) = (&mut self.text_proj, &tape.text_proj, gx) {
                proj.backward_params(pt, &gx)?;
            }
        }
        if let Some(emb) = &mut self.id_embedding {
            let w = emb.cols;
            for (i, &e) in tape.ids.iter().enumerate() {
                let src = &gcat.row(i)[off..off + w];
                for (a, b) in emb.grad_row_mut(e as usize).iter_mut().zip(src) {
                    *a += *b;
                }
            }
        }
        Ok(())
    }
}

fn check_rows(got: usize, want: usize, what: &str) -> Result<()> {
    if got == want {
        Ok(())
    } else {
        Err(Error::shape(format!("{what} features have {got} rows for {want} nodes")))
    }
}

impl<T: Real> FusionNet<T> {
    /// Feature-projection parameters and the ID embedding, borrowed apart so
    /// they can belong to different optimizer groups.
    pub fn split_params_mut(&mut self) -> (Vec<&mut Param<T>>, Option<&mut Param<T>>) {
        let mut v = Vec::new();
        for b in [&mut self.g_transe, &mut self.g_bloom].into_iter().flatten() {
            v.extend(b.params_mut());
        }
        if let Some(p) = &mut self.text_proj {
            v.extend(p.params_mut());
        }
        if let Some(b) = &mut self.g_text {
            v.extend(b.params_mut());
        }
        v.extend(self.w_in.params_mut());
        if let Some(n) = &mut self.norm {
            v.extend(n.params_mut());
        }
        (v, self.id_embedding.as_mut())
    }
}

impl<T: Real> Module<T> for FusionNet<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut v = Vec::new();
        for b in [&self.g_transe, &self.g_bloom].into_iter().flatten() {
            v.extend(b.params());
        }
        if let Some(p) = &self.text_proj {
            v.extend(p.params());
        }
        if let Some(b) = &self.g_text {
            v.extend(b.params());
        }
        if let Some(e) = &self.id_embedding {
            v.push(e);
        }
        v.extend(self.w_in.params());
        if let Some(n) = &self.norm {
            v.extend(n.params());
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = Vec::new();
        for b in [&mut self.g_transe, &mut self.g_bloom].into_iter().flatten() {
            v.extend(b.params_mut());
        }
        if let Some(p) = &mut self.text_proj {
            v.extend(p.params_mut());
        }
        if let Some(b) = &mut self.g_text {
            v.extend(b.params_mut());
        }
        if let Some(e) = &mut self.id_embedding {
            v.push(e);
        }
        v.extend(self.w_in.params_mut());
        if let Some(n) = &mut self.norm {
            v.extend(n.params_mut());
        }
        v
    }
}

/// Frozen per-entity inputs shared by every batch.
#[derive(Debug, Clone, Default)]
pub struct FeatureStore {
    pub bloom: Option<BloomBank>,
    pub transe: Option<TransEModel>,
    pub text: Option<TextFeatures>,
}

/// Owned gathered inputs for a node list.
pub struct Gathered<T> {
    pub ids: Vec<EntityId>,
    pub bloom: Option<Vec<Vec<u32>>>,
    pub transe: Option<Matrix<T>>,
    pub text: Option<Matrix<T>>,
}

impl<T: Real> Gathered<T> {
    pub fn as_input(&self) -> FusionInput<'_, T> {
        FusionInput {
            bloom: self.bloom.as_deref().map(BranchInput::Sparse),
            transe: self.transe.as_ref(),
            text: self.text.as_ref(),
            ids: &self.ids,
        }
    }
}

impl FeatureStore {
    /// Collects the inputs `branches` needs for `ids`.
    pub fn gather<T: Real>(&self, ids: &[EntityId], branches: &Branches) -> Result<Gathered<T>> {
        let missing = |what: &str| Error::invalid(format!("{what} features were not provided"));
        let bloom = if branches.bloom {
            let bank = self.bloom.as_ref().ok_or_else(|| missing("bloom"))?;
            Some(ids.iter().map(|&e| bank.active_bits(e)).collect::<Result<Vec<_>>>()?)
        } else {
            None
        };
        let dense = |rows: usize, dim: usize, data: &[f32]| -> Result<Matrix<T>> {
            let mut m = Matrix::zeros(ids.len(), dim);
            for (i, &e) in ids.iter().enumerate() {
                let e = e as usize;
                if e >= rows {
                    return Err(Error::OutOfRange {
                        kind: "entity",
                        id: e as u64,
                        count: rows as u64,
                    });
                }
                for (a, b) in m.row_mut(i).iter_mut().zip(&data[e * dim..(e + 1) * dim]) {
                    *a = T::lit(f64::from(*b));
                }
            }
            Ok(m)
        };
        let transe = if branches.transe {
            let t = &self.transe.as_ref().ok_or_else(|| missing("transe"))?.entities;
            Some(dense(t.rows, t.dim, &t.data)?)
        } else {
            None
        };
        let text = if branches.text {
            let t = self.text.as_ref().ok_or_else(|| missing("text"))?;
            Some(dense(t.rows, t.dim, &t.data)?)
        } else {
            None
        };
        Ok(Gathered {
            ids: ids.to_vec(),
            bloom,
            transe,
            text,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bloom::BloomConfig;
    use crate::kg::{Direction, KnowledgeGraph, Triple};
    use crate::nn::gradcheck::{check_params, probe, random_matrix};
    use crate::nn::Matrix;

    fn config(branches: Branches) -> FusionConfig {
        FusionConfig {
            branches,
            bloom_bits: 12,
            transe_dim: 4,
            text_dim: 7,
            text_proj_width: 5,
            d: 3,
            hidden: 4,
            out_dim: 3,
            dropout: 0.3,
            layer_norm: true,
            n_entities: 6,
        }
    }

    fn all() -> Branches {
        Branches {
            bloom: true,
            transe: true,
            text: true,
            id_dim: 2,
        }
    }

    fn binary(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix<f64> {
        let data = (0..rows * cols).map(|_| if rng.gen_bool(0.4) { 1.0 } else { 0.0 }).collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    #[test]
    fn rejects_empty_and_bad_configs() {
        let mut c = config(Branches::default());
        assert!(c.validate().is_err());
        c.branches.id_dim = 4;
        assert!(c.validate().is_ok());
        c.dropout = 1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn concat_width_counts_active_branches() {
        assert_eq!(config(all()).concat_width(), 3 * 3 + 2);
        let only_bloom = Branches {
            bloom: true,
            ..Branches::default()
        };
        assert_eq!(config(only_bloom).concat_width(), 3);
    }

    #[test]
    fn missing_input_is_an_error() {
        let mut rng = crate::seed::rng(1);
        let net = FusionNet::<f64>::new(config(all()), &mut rng).unwrap();
        let input = FusionInput {
            bloom: None,
            transe: None,
            text: None,
            ids: &[0, 1],
        };
        assert!(net.forward(&input, Mode::Eval, &mut rng).is_err());
    }

    #[test]
    fn eval_mode_is_deterministic_and_train_mode_drops() {
        let mut rng = crate::seed::rng(2);
        let net = FusionNet::<f64>::new(config(all()), &mut rng).unwrap();
        let ids = [0u32, 3, 5];
        let (bl, tr, tx) = (binary(3, 12, &mut rng), random_matrix(3, 4, &mut rng), random_matrix(3, 7, &mut rng));
        let input = FusionInput {
            bloom: Some(BranchInput::Dense(&bl)),
            transe: Some(&tr),
            text: Some(&tx),
            ids: &ids,
        };
        let a = net.forward(&input, Mode::Eval, &mut crate::seed::rng(5)).unwrap().0;
        let b = net.forward(&input, Mode::Eval, &mut crate::seed::rng(6)).unwrap().0;
        assert_eq!(a, b);
        let c = net.forward(&input, Mode::Train, &mut crate::seed::rng(5)).unwrap().0;
        assert_ne!(a, c);
        assert_eq!(a.shape(), (3, 3));
    }

    #[test]
    fn sparse_bloom_input_matches_dense() {
        let mut rng = crate::seed::rng(3);
        let b = Branches {
            bloom: true,
            ..Branches::default()
        };
        let net = FusionNet::<f64>::new(config(b), &mut rng).unwrap();
        let dense = binary(4, 12, &mut rng);
        let sparse: Vec<Vec<u32>> = (0..4)
            .map(|i| (0..12u32).filter(|&j| dense.get(i, j as usize) == 1.0).collect())
            .collect();
        let ids = [0u32, 1, 2, 3];
        let run = |bi: BranchInput<'_, f64>| {
            let input = FusionInput {
                bloom: Some(bi),
                transe: None,
                text: None,
                ids: &ids,
            };
            net.forward(&input, Mode::Train, &mut crate::seed::rng(8)).unwrap().0
        };
        let x = run(BranchInput::Dense(&dense));
        let y = run(BranchInput::Sparse(&sparse));
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..6 {
            let mut rng = crate::seed::rng(100 + seed);
            let mut cfg = config(all());
            cfg.layer_norm = seed % 2 == 0;
            let mut net = FusionNet::<f64>::new(cfg, &mut rng).unwrap();
            let ids = [1u32, 4, 1];
            let (bl, tr, tx) = (binary(3, 12, &mut rng), random_matrix(3, 4, &mut rng), random_matrix(3, 7, &mut rng));
            let w = random_matrix(3, 3, &mut rng);
            let input = FusionInput {
                bloom: Some(BranchInput::Dense(&bl)),
                transe: Some(&tr),
                text: Some(&tx),
                ids: &ids,
            };
            let loss = |n: &FusionNet<f64>| {
                Ok(probe(&n.forward(&input, Mode::Train, &mut crate::seed::rng(seed))?.0, &w))
            };
            let err = check_params(&mut net, loss, |n| {
                let (_, tape) = n.forward(&input, Mode::Train, &mut crate::seed::rng(seed))?;
                n.backward(&tape, &w)
            })
            .unwrap();
            assert!(err <= 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn text_file_round_trip() {
        let t = TextFeatures {
            rows: 10,
            dim: 2,
            present: (0..10).map(|i| i % 3 == 0).collect(),
            data: (0..20).map(|i| if (i / 2) % 3 == 0 { i as f32 } else { 0.0 }).collect(),
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.ghft");
        t.save(&p).unwrap();
        assert_eq!(TextFeatures::load(&p).unwrap(), t);
        let raw = std::fs::read(&p).unwrap();
        assert_eq!(&raw[..4], b"GHFT");
        assert_eq!(raw[16], 0b0100_1001);
    }

    #[test]
    fn store_gathers_bloom_bits() {
        let g = KnowledgeGraph::from_triples(3, 1, vec![Triple::new(0, 0, 1)], vec![], vec![]).unwrap();
        let cfg = BloomConfig::fixed(64, 3).unwrap();
        let bank = crate::bloom::build_bank(&g, &cfg).unwrap();
        let store = FeatureStore {
            bloom: Some(bank.clone()),
            ..FeatureStore::default()
        };
        let b = Branches {
            bloom: true,
            ..Branches::default()
        };
        let got = store.gather::<f32>(&[0, 2], &b).unwrap();
        let bits = got.bloom.unwrap();
        assert_eq!(bits[0], bank.active_bits(0).unwrap());
        assert!(bits[1].is_empty());
        assert!(bank.contains_neighbor(0, 0, 1, Direction::Out).unwrap());
        let t = Branches {
            transe: true,
            ..Branches::default()
        };
        assert!(store.gather::<f32>(&[0], &t).is_err());
    }
}
