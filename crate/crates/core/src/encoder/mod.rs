//! Message-passing encoders over sampled mini-batch subgraphs.

mod layers;
mod sampler;

pub use layers::{LayerTape, RgcnLayer, SageLayer};
pub use sampler::{sample_neighbors, MiniBatchGraph, SampledEdge};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, Matrix, Module, Param, Real};

pub const DEFAULT_FANOUTS: [usize; 2] = [25, 20];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backbone {
    /// No message passing: fused features go straight to the decoder.
    DecoderOnly,
    Sage,
    Rgcn,
}

impl Backbone {
    pub fn name(self) -> &'static str {
        match self {
            Backbone::DecoderOnly => "decoder_only",
            Backbone::Sage => "sage",
            Backbone::Rgcn => "rgcn",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub backbone: Backbone,
    pub layers: usize,
    pub in_dim: usize,
    pub hidden: usize,
    pub num_relations: usize,
}

impl EncoderConfig {
    /// Number of message-passing layers actually built.
    pub fn depth(&self) -> usize {
        if self.backbone == Backbone::DecoderOnly {
            0
        } else {
            self.layers
        }
    }

    pub fn out_dim(&self) -> usize {
        if self.depth() == 0 {
            self.in_dim
        } else {
            self.hidden
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.layers > 2 {
            errs.push(format!("encoder supports at most 2 layers, got {}", self.layers));
        }
        if self.in_dim == 0 {
            errs.push("encoder input width must be >= 1".into());
        }
        if self.depth() > 0 && self.hidden == 0 {
            errs.push("encoder hidden width must be >= 1".into());
        }
        if self.backbone == Backbone::Rgcn && self.depth() > 0 && self.num_relations == 0 {
            errs.push("rgcn needs at least one relation".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GnnLayer<T> {
    Sage(SageLayer<T>),
    Rgcn(RgcnLayer<T>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder<T> {
    pub config: EncoderConfig,
    pub layers: Vec<GnnLayer<T>>,
}

pub struct EncoderTape<T> {
    h0_rows: usize,
    layers: Vec<LayerTape<T>>,
}

impl<T: Real> Encoder<T> {
    /// Hidden layers use ReLU; the last layer is linear so embeddings can
    /// take either sign.
    pub fn new(config: EncoderConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let depth = config.depth();
        let layers = (0..depth)
            .map(|l| {
                let fi = if l == 0 { config.in_dim } else { config.hidden };
                let act = if l + 1 == depth { Activation::Identity } else { Activation::Relu };
                let name = format!("encoder.{l}");
                match config.backbone {
                    Backbone::Rgcn => GnnLayer::Rgcn(RgcnLayer::new(&name, fi, config.hidden, config.num_relations, act, rng)),
                    _ => GnnLayer::Sage(SageLayer::new(&name, fi, config.hidden, act, rng)),
                }
            })
            .collect();
        Ok(Self { config, layers })
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn out_dim(&self) -> usize {
        self.config.out_dim()
    }

    /// Row counts feeding layer `l` (0-based) and produced by it.
    fn extents(&self, graph: &MiniBatchGraph, l: usize) -> (usize, usize) {
        let depth = self.depth();
        (graph.depth_bounds[depth - l], graph.depth_bounds[depth - l - 1])
    }

    /// Embeddings of the batch targets from input features `h0` whose rows
    /// follow `graph.nodes`.
    pub fn forward(&self, graph: &MiniBatchGraph, h0: &Matrix<T>) -> Result<(Matrix<T>, EncoderTape<T>)> {
        let depth = self.depth();
        if graph.hops() < depth {
            return Err(Error::invalid(format!(
                "batch sampled {} hops for a {depth}-layer encoder",
                graph.hops()
            )));
        }
        let need = graph.depth_bounds[depth];
        if h0.rows() < need {
            return Err(Error::shape(format!("{} input rows for {need} batch nodes", h0.rows())));
        }
        if depth == 0 {
            let n = graph.num_targets();
            let h = Matrix::from_vec(n, h0.cols(), h0.data()[..n * h0.cols()].to_vec())?;
            return Ok((
                h,
                EncoderTape {
                    h0_rows: h0.rows(),
                    layers: Vec::new(),
                },
            ));
        }
        let mut tapes = Vec::with_capacity(depth);
        let mut h: Option<Matrix<T>> = None;
        for (l, layer) in self.layers.iter().enumerate() {
            let (n_src, n_dst) = self.extents(graph, l);
            let input = h.as_ref().unwrap_or(h0);
            let (y, tape) = match layer {
                GnnLayer::Sage(s) => s.forward(graph, input, n_src, n_dst)?,
                GnnLayer::Rgcn(r) => r.forward(graph, input, n_src, n_dst)?,
            };
            tapes.push(tape);
            h = Some(y);
        }
        Ok((
            h.expect("depth > 0"),
            EncoderTape {
                h0_rows: h0.rows(),
                layers: tapes,
            },
        ))
    }

    /// Accumulates parameter gradients and returns the gradient for `h0`.
    pub fn backward(&mut self, graph: &MiniBatchGraph, tape: &EncoderTape<T>, grad: &Matrix<T>) -> Result<Matrix<T>> {
        let mut g = grad.clone();
        for l in (0..self.depth()).rev() {
            g = match &mut self.layers[l] {
                GnnLayer::Sage(s) => s.backward(graph, &tape.layers[l], &g)?,
                GnnLayer::Rgcn(r) => r.backward(graph, &tape.layers[l], &g)?,
            };
        }
        if g.rows() < tape.h0_rows {
            let mut full = Matrix::zeros(tape.h0_rows, g.cols());
            full.data_mut()[..g.data().len()].copy_from_slice(g.data());
            g = full;
        }
        Ok(g)
    }
}

impl<T: Real> Module<T> for Encoder<T> {
    fn params(&self) -> Vec<&Param<T>> {
        self.layers
            .iter()
            .flat_map(|l| match l {
                GnnLayer::Sage(s) => s.params(),
                GnnLayer::Rgcn(r) => r.params(),
            })
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.layers
            .iter_mut()
            .flat_map(|l| match l {
                GnnLayer::Sage(s) => s.params_mut(),
                GnnLayer::Rgcn(r) => r.params_mut(),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{KnowledgeGraph, Triple};
    use crate::nn::gradcheck::{check_input, check_params, probe, random_matrix};

    fn random_graph(seed: u64, n: u32, r: u32, m: usize) -> KnowledgeGraph {
        let mut rng = crate::seed::rng(seed);
        let train = (0..m)
            .map(|_| Triple::new(rng.gen_range(0..n), rng.gen_range(0..r), rng.gen_range(0..n)))
            .collect();
        KnowledgeGraph::from_triples(n as usize, r as usize, train, vec![], vec![]).unwrap()
    }

    fn config(backbone: Backbone, layers: usize) -> EncoderConfig {
        EncoderConfig {
            backbone,
            layers,
            in_dim: 3,
            hidden: 3,
            num_relations: 3,
        }
    }

    fn identity(p: &mut Param<f64>) {
        p.value.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..p.rows.min(p.cols) {
            p.value[i * p.cols + i] = 1.0;
        }
    }

    #[test]
    fn sage_identity_weights_add_self_and_neighbor_mean() {
        let g = KnowledgeGraph::from_triples(
            3,
            1,
            vec![Triple::new(0, 0, 1), Triple::new(2, 0, 0)],
            vec![],
            vec![],
        )
        .unwrap();
        let mut enc = Encoder::<f64>::new(config(Backbone::Sage, 1), &mut crate::seed::rng(0)).unwrap();
        let GnnLayer::Sage(s) = &mut enc.layers[0] else { unreachable!() };
        identity(&mut s.w_self);
        identity(&mut s.w_neigh);
        let batch = sample_neighbors(&g, &[0], &[0], &mut crate::seed::rng(0)).unwrap();
        let feats = |e: u32| vec![f64::from(e), 1.0, -f64::from(e)];
        let h0 = Matrix::from_rows(&batch.nodes.iter().map(|&e| feats(e)).collect::<Vec<_>>()).unwrap();
        let (h, _) = enc.forward(&batch, &h0).unwrap();
        // node 0 plus the mean of nodes 1 and 2
        assert_eq!(h.row(0), &[1.5, 2.0, -1.5]);
    }

    #[test]
    fn rgcn_shares_relation_weight_across_directions() {
        let g = KnowledgeGraph::from_triples(
            3,
            2,
            vec![Triple::new(0, 0, 1), Triple::new(2, 0, 0), Triple::new(0, 1, 2)],
            vec![],
            vec![],
        )
        .unwrap();
        let mut cfg = config(Backbone::Rgcn, 1);
        cfg.in_dim = 1;
        cfg.hidden = 1;
        cfg.num_relations = 2;
        let mut enc = Encoder::<f64>::new(cfg, &mut crate::seed::rng(0)).unwrap();
        let GnnLayer::Rgcn(r) = &mut enc.layers[0] else { unreachable!() };
        r.w0.value = vec![1.0];
        r.w_rel.value = vec![10.0, 100.0];
        let batch = sample_neighbors(&g, &[0], &[0], &mut crate::seed::rng(0)).unwrap();
        let h0 = Matrix::from_rows(&batch.nodes.iter().map(|&e| vec![f64::from(e) + 1.0]).collect::<Vec<_>>()).unwrap();
        let (h, _) = enc.forward(&batch, &h0).unwrap();
        // 1·1 + 10·mean(2, 3) + 100·3
        assert!((h.get(0, 0) - (1.0 + 25.0 + 300.0)).abs() < 1e-12);
        assert_eq!(enc.num_params(), 1 + 2);
    }

    #[test]
    fn rgcn_rejects_unknown_relation() {
        let g = random_graph(1, 10, 5, 30);
        let enc = Encoder::<f64>::new(config(Backbone::Rgcn, 1), &mut crate::seed::rng(0)).unwrap();
        let batch = sample_neighbors(&g, &(0..10).collect::<Vec<_>>(), &[0], &mut crate::seed::rng(0)).unwrap();
        let h0 = Matrix::zeros(batch.nodes.len(), 3);
        assert!(matches!(enc.forward(&batch, &h0), Err(Error::OutOfRange { kind: "relation", .. })));
    }

    #[test]
    fn zero_layers_pass_features_through() {
        let g = random_graph(2, 8, 2, 20);
        let enc = Encoder::<f64>::new(config(Backbone::DecoderOnly, 2), &mut crate::seed::rng(0)).unwrap();
        assert_eq!(enc.depth(), 0);
        let batch = sample_neighbors(&g, &[4, 1], &[], &mut crate::seed::rng(0)).unwrap();
        let h0 = random_matrix(2, 3, &mut crate::seed::rng(3));
        assert_eq!(enc.forward(&batch, &h0).unwrap().0, h0);
    }

    #[test]
    fn parameter_counts() {
        let mut c = config(Backbone::Sage, 2);
        c.hidden = 4;
        c.in_dim = 4;
        let e = Encoder::<f32>::new(c.clone(), &mut crate::seed::rng(0)).unwrap();
        assert_eq!(e.num_params(), 2 * (2 * 16 + 4));
        c.backbone = Backbone::Rgcn;
        let e = Encoder::<f32>::new(c, &mut crate::seed::rng(0)).unwrap();
        assert_eq!(e.num_params(), 2 * (1 + 3) * 16);
    }

    #[test]
    fn gradients_match_finite_differences() {
        for (case, backbone) in [Backbone::Sage, Backbone::Rgcn].into_iter().enumerate() {
            for layers in 1..=2 {
                for seed in 0..3u64 {
                    let g = random_graph(seed, 12, 3, 30);
                    let mut rng = crate::seed::rng(seed * 10 + case as u64);
                    let mut enc = Encoder::<f64>::new(config(backbone, layers), &mut rng).unwrap();
                    let batch = sample_neighbors(&g, &[0, 3, 5], &[3, 2], &mut rng).unwrap();
                    let h0 = random_matrix(batch.nodes.len(), 3, &mut rng);
                    let w = random_matrix(3, 3, &mut rng);
                    let loss = |e: &Encoder<f64>, x: &Matrix<f64>| Ok(probe(&e.forward(&batch, x)?.0, &w));
                    let mut gx = None;
                    let err = check_params(&mut enc, |e| loss(e, &h0), |e| {
                        let (_, tape) = e.forward(&batch, &h0)?;
                        gx = Some(e.backward(&batch, &tape, &w)?);
                        Ok(())
                    })
                    .unwrap();
                    assert!(err <= 1e-4, "{backbone:?} L={layers} seed {seed}: {err}");
                    let err = check_input(&h0, &gx.unwrap(), |x| loss(&enc, x)).unwrap();
                    assert!(err <= 1e-4, "{backbone:?} L={layers} seed {seed} input: {err}");
                }
            }
        }
    }
}
