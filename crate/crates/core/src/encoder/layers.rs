use rand::Rng;

use super::MiniBatchGraph;
use crate::error::{Error, Result};
use crate::nn::{gemm_slices, xavier_bound, Activation, Matrix, Module, Param, Real};

fn activate<T: Real>(act: Activation, pre: &Matrix<T>) -> Matrix<T> {
    let mut y = pre.clone();
    if act == Activation::Relu {
        y.data_mut().iter_mut().for_each(|v| *v = v.max(T::zero()));
    }
    y
}

fn gate<T: Real>(act: Activation, pre: &Matrix<T>, grad: &Matrix<T>) -> Result<Matrix<T>> {
    if pre.shape() != grad.shape() {
        return Err(Error::shape(format!(
            "layer backward: gradient {:?} for output {:?}",
            grad.shape(),
            pre.shape()
        )));
    }
    let mut g = grad.clone();
    if act == Activation::Relu {
        for (gv, pv) in g.data_mut().iter_mut().zip(pre.data()) {
            if *pv <= T::zero() {
                *gv = T::zero();
            }
        }
    }
    Ok(g)
}

fn check_input<T: Real>(h: &Matrix<T>, n_src: usize, width: usize, name: &str) -> Result<()> {
    if h.cols() != width || h.rows() < n_src {
        return Err(Error::shape(format!(
            "{name} expects at least {n_src}x{width} inputs, got {:?}",
            h.shape()
        )));
    }
    Ok(())
}

/// `x[..rows]·W` accumulated into `out` (`beta = 1`).
fn add_product<T: Real>(x: &[T], rows: usize, w: &[T], fan_in: usize, fan_out: usize, out: &mut [T]) {
    gemm_slices(T::one(), x, fan_in, false, w, fan_out, false, T::one(), out, rows, fan_in, fan_out);
}

/// `W += x[..rows]ᵀ·g`.
fn add_weight_grad<T: Real>(x: &[T], rows: usize, g: &[T], fan_in: usize, fan_out: usize, w: &mut [T]) {
    gemm_slices(T::one(), x, fan_in, true, g, fan_out, false, T::one(), w, fan_in, rows, fan_out);
}

/// `out += g·Wᵀ`.
fn add_input_grad<T: Real>(g: &[T], rows: usize, w: &[T], fan_in: usize, fan_out: usize, out: &mut [T]) {
    gemm_slices(T::one(), g, fan_out, false, w, fan_out, true, T::one(), out, rows, fan_out, fan_in);
}

pub struct LayerTape<T> {
    n_src: usize,
    self_rows: Matrix<T>,
    preact: Matrix<T>,
    kind: TapeKind<T>,
}

enum TapeKind<T> {
    Sage { agg: Matrix<T> },
    Rgcn { groups: Vec<RelGroup<T>> },
}

/// Means of `h` over the incidences of each destination node under one relation.
struct RelGroup<T> {
    relation: usize,
    dsts: Vec<usize>,
    /// Source offsets into `srcs`, one range per destination.
    bounds: Vec<usize>,
    srcs: Vec<usize>,
    mean: Matrix<T>,
}

/// GraphSAGE mean layer `σ(W_self·h_v + W_neigh·mean_{u∈N(v)} h_u + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SageLayer<T> {
    pub w_self: Param<T>,
    pub w_neigh: Param<T>,
    pub bias: Param<T>,
    pub activation: Activation,
}

impl<T: Real> SageLayer<T> {
    pub fn new(name: &str, fan_in: usize, fan_out: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        let b = xavier_bound(fan_in, fan_out);
        Self {
            w_self: Param::uniform(format!("{name}.w_self"), fan_in, fan_out, b, rng),
            w_neigh: Param::uniform(format!("{name}.w_neigh"), fan_in, fan_out, b, rng),
            bias: Param::zeros(format!("{name}.bias"), 1, fan_out),
            activation,
        }
    }

    pub fn fan_in(&self) -> usize {
        self.w_self.rows
    }

    pub fn fan_out(&self) -> usize {
        self.w_self.cols
    }

    pub fn forward(
        &self,
        graph: &MiniBatchGraph,
        h: &Matrix<T>,
        n_src: usize,
        n_dst: usize,
    ) -> Result<(Matrix<T>, LayerTape<T>)> {
        let (fi, fo) = (self.fan_in(), self.fan_out());
        check_input(h, n_src, fi, &self.w_self.name)?;
        let mut acc = vec![0f64; fi];
        let mut agg = Matrix::zeros(n_dst, fi);
        for i in 0..n_dst {
            let edges = graph.edges_of(i);
            if edges.is_empty() {
                continue;
            }
            acc.iter_mut().for_each(|a| *a = 0.0);
            for e in edges {
                let src = e.src as usize;
                if src >= n_src {
                    return Err(Error::Internal(format!("edge source {src} outside {n_src} inputs")));
                }
                for (a, v) in acc.iter_mut().zip(h.row(src)) {
                    *a += v.as_f64();
                }
            }
            let inv = 1.0 / edges.len() as f64;
            for (o, a) in agg.row_mut(i).iter_mut().zip(&acc) {
                *o = T::lit(a * inv);
            }
        }
        let self_rows = Matrix::from_vec(n_dst, fi, h.data()[..n_dst * fi].to_vec())?;
        let mut pre = Matrix::zeros(n_dst, fo);
        for i in 0..n_dst {
            pre.row_mut(i).copy_from_slice(&self.bias.value);
        }
        add_product(self_rows.data(), n_dst, &self.w_self.value, fi, fo, pre.data_mut());
        add_product(agg.data(), n_dst, &self.w_neigh.value, fi, fo, pre.data_mut());
        let y = activate(self.activation, &pre);
        Ok((
            y,
            LayerTape {
                n_src,
                self_rows,
                preact: pre,
                kind: TapeKind::Sage { agg },
            },
        ))
    }

    pub fn backward(&mut self, graph: &MiniBatchGraph, tape: &LayerTape<T>, grad: &Matrix<T>) -> Result<Matrix<T>> {
        let TapeKind::Sage { agg } = &tape.kind else {
            return Err(Error::Internal("sage layer given a foreign tape".into()));
        };
        let g = gate(self.activation, &tape.preact, grad)?;
        let (fi, fo, n_dst) = (self.fan_in(), self.fan_out(), g.rows());
        add_weight_grad(tape.self_rows.data(), n_dst, g.data(), fi, fo, &mut self.w_self.grad);
        add_weight_grad(agg.data(), n_dst, g.data(), fi, fo, &mut self.w_neigh.grad);
        for i in 0..n_dst {
            for (b, v) in self.bias.grad.iter_mut().zip(g.row(i)) {
                *b += *v;
            }
        }
        let mut gh = Matrix::zeros(tape.n_src, fi);
        add_input_grad(g.data(), n_dst, &self.w_self.value, fi, fo, &mut gh.data_mut()[..n_dst * fi]);
        let mut gagg = Matrix::zeros(n_dst, fi);
        add_input_grad(g.data(), n_dst, &self.w_neigh.value, fi, fo, gagg.data_mut());
        for i in 0..n_dst {
            let edges = graph.edges_of(i);
            if edges.is_empty() {
                continue;
            }
            let inv = T::lit(1.0 / edges.len() as f64);
            for e in edges {
                let dst = gh.row_mut(e.src as usize);
                for (a, v) in dst.iter_mut().zip(gagg.row(i)) {
                    *a += *v * inv;
                }
            }
        }
        Ok(gh)
    }
}

impl<T: Real> Module<T> for SageLayer<T> {
    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.w_self, &self.w_neigh, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.w_self, &mut self.w_neigh, &mut self.bias]
    }
}

/// Relational GCN layer
/// `σ(W_0·h_v + Σ_r 1/|N_r(v)| Σ_{u∈N_r(v)} W_r·h_u)`.
///
/// Both edge directions of a relation share `W_r`. The relation weights are
/// stacked into one `(|R|·in) × out` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct RgcnLayer<T> {
    pub w0: Param<T>,
    pub w_rel: Param<T>,
    pub num_relations: usize,
    pub activation: Activation,
}

impl<T: Real> RgcnLayer<T> {
    pub fn new(
        name: &str,
        fan_in: usize,
        fan_out: usize,
        num_relations: usize,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        let b = xavier_bound(fan_in, fan_out);
        Self {
            w0: Param::uniform(format!("{name}.w0"), fan_in, fan_out, b, rng),
            w_rel: Param::uniform(format!("{name}.w_rel"), num_relations * fan_in, fan_out, b, rng),
            num_relations,
            activation,
        }
    }

    pub fn fan_in(&self) -> usize {
        self.w0.rows
    }

    pub fn fan_out(&self) -> usize {
        self.w0.cols
    }

    fn relation_block(&self, r: usize) -> std::ops::Range<usize> {
        let size = self.fan_in() * self.fan_out();
        r * size..(r + 1) * size
    }

    fn groups(&self, graph: &MiniBatchGraph, h: &Matrix<T>, n_src: usize, n_dst: usize) -> Result<Vec<RelGroup<T>>> {
        let fi = self.fan_in();
        // (relation, dst, src) sorted so each relation's destinations are contiguous
        let mut inc: Vec<(u32, u32, u32)> = Vec::new();
        for i in 0..n_dst {
            for e in graph.edges_of(i) {
                if e.relation as usize >= self.num_relations {
                    return Err(Error::OutOfRange {
                        kind: "relation",
                        id: u64::from(e.relation),
                        count: self.num_relations as u64,
                    });
                }
                if e.src as usize >= n_src {
                    return Err(Error::Internal(format!("edge source {} outside {n_src} inputs", e.src)));
                }
                inc.push((e.relation, i as u32, e.src));
            }
        }
        inc.sort_unstable();
        let mut groups: Vec<RelGroup<T>> = Vec::new();
        let mut acc = vec![0f64; fi];
        let mut pos = 0;
        while pos < inc.len() {
            let r = inc[pos].0;
            let mut group = RelGroup {
                relation: r as usize,
                dsts: Vec::new(),
                bounds: vec![0],
                srcs: Vec::new(),
                mean: Matrix::zeros(0, 0),
            };
            let mut means: Vec<T> = Vec::new();
            while pos < inc.len() && inc[pos].0 == r {
                let dst = inc[pos].1;
                acc.iter_mut().for_each(|a| *a = 0.0);
                let start = group.srcs.len();
                while pos < inc.len() && inc[pos].0 == r && inc[pos].1 == dst {
                    let src = inc[pos].2 as usize;
                    group.srcs.push(src);
                    for (a, v) in acc.iter_mut().zip(h.row(src)) {
                        *a += v.as_f64();
                    }
                    pos += 1;
                }
                let inv = 1.0 / (group.srcs.len() - start) as f64;
                means.extend(acc.iter().map(|a| T::lit(a * inv)));
                group.dsts.push(dst as usize);
                group.bounds.push(group.srcs.len());
            }
            group.mean = Matrix::from_vec(group.dsts.len(), fi, means)?;
            groups.push(group);
        }
        Ok(groups)
    }

    pub fn forward(
        &self,
        graph: &MiniBatchGraph,
        h: &Matrix<T>,
        n_src: usize,
        n_dst: usize,
    ) -> Result<(Matrix<T>, LayerTape<T>)> {
        let (fi, fo) = (self.fan_in(), self.fan_out());
        check_input(h, n_src, fi, &self.w0.name)?;
        let groups = self.groups(graph, h, n_src, n_dst)?;
        let self_rows = Matrix::from_vec(n_dst, fi, h.data()[..n_dst * fi].to_vec())?;
        let mut pre = Matrix::zeros(n_dst, fo);
        add_product(self_rows.data(), n_dst, &self.w0.value, fi, fo, pre.data_mut());
        for grp in &groups {
            let w = &self.w_rel.value[self.relation_block(grp.relation)];
            let mut y = Matrix::zeros(grp.dsts.len(), fo);
            add_product(grp.mean.data(), grp.dsts.len(), w, fi, fo, y.data_mut());
            pre.scatter_add_rows(&grp.dsts, &y);
        }
        let y = activate(self.activation, &pre);
        Ok((
            y,
            LayerTape {
                n_src,
                self_rows,
                preact: pre,
                kind: TapeKind::Rgcn { groups },
            },
        ))
    }

    pub fn backward(&mut self, _graph: &MiniBatchGraph, tape: &LayerTape<T>, grad: &Matrix<T>) -> Result<Matrix<T>> {
        let TapeKind::Rgcn { groups } = &tape.kind else {
            return Err(Error::Internal("rgcn layer given a foreign tape".into()));
        };
        let g = gate(self.activation, &tape.preact, grad)?;
        let (fi, fo, n_dst) = (self.fan_in(), self.fan_out(), g.rows());
        add_weight_grad(tape.self_rows.data(), n_dst, g.data(), fi, fo, &mut self.w0.grad);
        let mut gh = Matrix::zeros(tape.n_src, fi);
        add_input_grad(g.data(), n_dst, &self.w0.value, fi, fo, &mut gh.data_mut()[..n_dst * fi]);
        for grp in groups {
            let rows = grp.dsts.len();
            let gr = g.gather_rows(&grp.dsts);
            let block = self.relation_block(grp.relation);
            add_weight_grad(grp.mean.data(), rows, gr.data(), fi, fo, &mut self.w_rel.grad[block.clone()]);
            let mut gmean = Matrix::zeros(rows, fi);
            add_input_grad(gr.data(), rows, &self.w_rel.value[block], fi, fo, gmean.data_mut());
            for p in 0..rows {
                let srcs = &grp.srcs[grp.bounds[p]..grp.bounds[p + 1]];
                let inv = T::lit(1.0 / srcs.len() as f64);
                for &s in srcs {
                    for (a, v) in gh.row_mut(s).iter_mut().zip(gmean.row(p)) {
                        *a += *v * inv;
                    }
                }
            }
        }
        Ok(gh)
    }
}

impl<T: Real> Module<T> for RgcnLayer<T> {
    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.w0, &self.w_rel]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.w0, &mut self.w_rel]
    }
}
