use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::decoders::{ClassifierHead, DecoderKind, RelationHead, DEFAULT_GAMMA};
use crate::encoder::{Backbone, Encoder, EncoderConfig, DEFAULT_FANOUTS};
use crate::error::{Error, Result};
use crate::fusion::{Branches, FeatureStore, FusionConfig, FusionNet, TEXT_PROJ_WIDTH};
use crate::nn::{load_checkpoint, save_checkpoint, Module, Param, Tensor};
use crate::seed;

use super::Task;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Common width of fusion projections, encoder layers and decoder.
    /// 0 takes the TransE dimension, or 64 without TransE features.
    pub dim: usize,
    /// Hidden width of each fusion branch; 0 means `2·dim`.
    pub fusion_hidden: usize,
    pub dropout: f64,
    pub layer_norm: bool,
    pub use_bloom: bool,
    pub use_transe: bool,
    pub use_text: bool,
    /// Width of a trainable per-entity embedding fed to fusion; 0 disables it.
    pub id_dim: usize,
    pub backbone: Backbone,
    pub layers: usize,
    pub fanouts: Vec<usize>,
    /// Defaults to RotatE for GraphSAGE and DistMult otherwise.
    pub decoder: Option<DecoderKind>,
    pub gamma: f64,
    pub p_norm: u8,
    /// Start a TransE head from the pretrained relation vectors when TransE
    /// features are in use.
    pub init_decoder_from_transe: bool,
    pub classifier_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 0,
            fusion_hidden: 0,
            dropout: 0.1,
            layer_norm: false,
            use_bloom: true,
            use_transe: true,
            use_text: false,
            id_dim: 0,
            backbone: Backbone::Rgcn,
            layers: 2,
            fanouts: DEFAULT_FANOUTS.to_vec(),
            decoder: None,
            gamma: DEFAULT_GAMMA,
            p_norm: 1,
            init_decoder_from_transe: true,
            classifier_hidden: 64,
        }
    }
}

impl ModelConfig {
    pub fn decoder_kind(&self) -> DecoderKind {
        self.decoder.unwrap_or(match self.backbone {
            Backbone::Sage => DecoderKind::Rotate,
            _ => DecoderKind::Distmult,
        })
    }

    pub fn branches(&self) -> Branches {
        Branches {
            bloom: self.use_bloom,
            transe: self.use_transe,
            text: self.use_text,
            id_dim: self.id_dim,
        }
    }

    pub fn effective_dim(&self, transe_dim: Option<usize>) -> usize {
        if self.dim > 0 {
            self.dim
        } else {
            transe_dim.unwrap_or(64)
        }
    }

    pub fn errors(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.layers > 2 {
            errs.push(format!("model.layers must be 0, 1 or 2, got {}", self.layers));
        }
        let depth = if self.backbone == Backbone::DecoderOnly { 0 } else { self.layers };
        if self.fanouts.len() < depth {
            errs.push(format!("model.fanouts lists {} hops for {depth} layers", self.fanouts.len()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            errs.push(format!("model.dropout must lie in [0, 1), got {}", self.dropout));
        }
        if !(self.p_norm == 1 || self.p_norm == 2) {
            errs.push(format!("model.p_norm must be 1 or 2, got {}", self.p_norm));
        }
        if !self.gamma.is_finite() || self.gamma < 0.0 {
            errs.push(format!("model.gamma must be >= 0, got {}", self.gamma));
        }
        if !(self.use_bloom || self.use_transe || self.use_text) && self.id_dim == 0 {
            errs.push("model needs at least one of use_bloom, use_transe, use_text or id_dim".into());
        }
        if self.decoder_kind() == DecoderKind::Rotate && self.dim % 2 == 1 {
            errs.push(format!("rotate needs an even model.dim, got {}", self.dim));
        }
        errs
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TaskHead<T> {
    Link(RelationHead<T>),
    Node(ClassifierHead<T>),
}

impl<T: crate::nn::Real> TaskHead<T> {
    pub fn params(&self) -> Vec<&Param<T>> {
        match self {
            TaskHead::Link(h) => h.params(),
            TaskHead::Node(c) => c.params(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        match self {
            TaskHead::Link(h) => h.params_mut(),
            TaskHead::Node(c) => c.params_mut(),
        }
    }
}

/// Fusion network, encoder and task head trained together.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub fusion: FusionNet<T>,
    pub encoder: Encoder<T>,
    pub head: TaskHead<T>,
}

impl Model<f32> {
    /// Builds the model with parameters seeded per component, so the same
    /// seed reproduces each part independently.
    pub fn build(
        config: &ModelConfig,
        task: Task,
        features: &FeatureStore,
        num_entities: usize,
        num_relations: usize,
        num_classes: Option<usize>,
        seed: u64,
    ) -> Result<Self> {
        let mut errs = config.errors();
        let transe_dim = features.transe.as_ref().map(|t| t.dim());
        if config.use_bloom && features.bloom.is_none() {
            errs.push("use_bloom is set but no Bloom bank was provided".into());
        }
        if config.use_transe && transe_dim.is_none() {
            errs.push("use_transe is set but no TransE embeddings were provided".into());
        }
        if config.use_text && features.text.is_none() {
            errs.push("use_text is set but no text features were provided".into());
        }
        let dim = config.effective_dim(transe_dim);
        let kind = config.decoder_kind();
        if kind == DecoderKind::Rotate && dim % 2 == 1 {
            errs.push(format!("rotate needs an even width, got {dim}"));
        }
        if task == Task::Node && num_classes.is_none_or(|c| c < 2) {
            errs.push("node classification needs at least two classes".into());
        }
        if !errs.is_empty() {
            errs.dedup();
            return Err(Error::Config(errs));
        }
        let fusion_cfg = FusionConfig {
            branches: config.branches(),
            bloom_bits: features.bloom.as_ref().map_or(0, |b| b.m() as usize),
            transe_dim: transe_dim.unwrap_or(0),
            text_dim: features.text.as_ref().map_or(0, |t| t.dim),
            text_proj_width: TEXT_PROJ_WIDTH,
            d: dim,
            hidden: if config.fusion_hidden > 0 { config.fusion_hidden } else { 2 * dim },
            out_dim: dim,
            dropout: config.dropout,
            layer_norm: config.layer_norm,
            n_entities: num_entities,
        };
        let fusion = FusionNet::new(fusion_cfg, &mut seed::rng(seed::derive(seed, "fusion-init")))?;
        let encoder = Encoder::new(
            EncoderConfig {
                backbone: config.backbone,
                layers: config.layers,
                in_dim: dim,
                hidden: dim,
                num_relations,
            },
            &mut seed::rng(seed::derive(seed, "encoder-init")),
        )?;
        let mut head_rng = seed::rng(seed::derive(seed, "head-init"));
        let head = match task {
            Task::Link => {
                let mut h = RelationHead::new(kind, num_relations, dim, config.gamma, config.p_norm, &mut head_rng)?;
                if kind == DecoderKind::Transe && config.use_transe && config.init_decoder_from_transe {
                    if let Some(t) = &features.transe {
                        h.init_from_transe(&t.relations)?;
                    }
                }
                TaskHead::Link(h)
            }
            Task::Node => TaskHead::Node(ClassifierHead::new(
                dim,
                config.classifier_hidden,
                num_classes.unwrap_or(2),
                &mut head_rng,
            )?),
        };
        Ok(Self {
            config: config.clone(),
            fusion,
            encoder,
            head,
        })
    }

    pub fn fanouts(&self) -> Vec<usize> {
        self.config.fanouts[..self.encoder.depth()].to_vec()
    }

    /// Fusion parameters, encoder plus ID embedding, and head parameters.
    pub fn groups_mut(&mut self) -> [Vec<&mut Param<f32>>; 3] {
        let (fusion, id) = self.fusion.split_params_mut();
        let mut enc = self.encoder.params_mut();
        enc.extend(id);
        [fusion, enc, self.head.params_mut()]
    }

    pub fn tensors(&self) -> Vec<Tensor> {
        self.params().into_iter().map(Tensor::from_param).collect()
    }

    /// Copies values of matching tensors by name. Every parameter with a
    /// prefix in `prefixes` must be present.
    pub fn load_tensors(&mut self, tensors: &[Tensor], prefixes: &[&str]) -> Result<usize> {
        let mut loaded = 0;
        for p in self.params_mut() {
            let want = prefixes.iter().any(|pre| p.name.starts_with(pre));
            match tensors.iter().find(|t| t.name == p.name) {
                Some(t) => {
                    let dims = [p.rows as u64, p.cols as u64];
                    if t.dims != dims {
                        return Err(Error::shape(format!(
                            "checkpoint tensor {} has shape {:?}, model expects {:?}",
                            t.name, t.dims, dims
                        )));
                    }
                    p.value.clone_from(&t.data);
                    loaded += 1;
                }
                None if want => {
                    return Err(Error::invalid(format!("checkpoint lacks tensor {}", p.name)));
                }
                None => {}
            }
        }
        Ok(loaded)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(path, &self.tensors())
    }

    /// Saves only the fusion parameters.
    pub fn save_fusion(&self, path: &Path) -> Result<()> {
        save_checkpoint(path, &self.fusion.params().into_iter().map(Tensor::from_param).collect::<Vec<_>>())
    }

    pub fn load(&mut self, path: &Path) -> Result<()> {
        let t = load_checkpoint(path)?;
        self.load_tensors(&t, &[""]).map(|_| ())
    }
}

impl Module<f32> for Model<f32> {
    fn params(&self) -> Vec<&Param<f32>> {
        let mut v = self.fusion.params();
        v.extend(self.encoder.params());
        v.extend(self.head.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<f32>> {
        let mut v = self.fusion.params_mut();
        v.extend(self.encoder.params_mut());
        v.extend(self.head.params_mut());
        v
    }
}
