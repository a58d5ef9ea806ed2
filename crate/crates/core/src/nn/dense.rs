use rand::Rng;

use super::matrix::gemm_slices;
use super::{xavier_bound, Matrix, Module, Param, Real};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

/// Fully connected layer `y = act(x·W + b)`.
///
/// The weight is stored input-major (`in × out`) so a sparse binary input row
/// selects contiguous weight rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub activation: Activation,
}

/// Cached forward state for [`Dense::backward`].
#[derive(Debug, Clone)]
pub struct DenseTape<T> {
    pub input: Matrix<T>,
    pub preact: Matrix<T>,
}

/// Cached state for a forward over sparse binary inputs.
#[derive(Debug, Clone)]
pub struct SparseTape<T> {
    pub active: Vec<Vec<u32>>,
    pub preact: Matrix<T>,
}

impl<T: Real> Dense<T> {
    pub fn new(
        name: &str,
        fan_in: usize,
        fan_out: usize,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            weight: Param::uniform(
                format!("{name}.weight"),
                fan_in,
                fan_out,
                xavier_bound(fan_in, fan_out),
                rng,
            ),
            bias: Param::zeros(format!("{name}.bias"), 1, fan_out),
            activation,
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.rows
    }

    pub fn fan_out(&self) -> usize {
        self.weight.cols
    }

    fn activate(&self, pre: &Matrix<T>) -> Matrix<T> {
        let mut y = pre.clone();
        if self.activation == Activation::Relu {
            for v in y.data_mut() {
                *v = v.max(T::zero());
            }
        }
        y
    }

    pub fn forward(&self, x: &Matrix<T>) -> Result<(Matrix<T>, DenseTape<T>)> {
        if x.cols() != self.fan_in() {
            return Err(Error::shape(format!(
                "{} expects {} inputs, got {}",
                self.weight.name,
                self.fan_in(),
                x.cols()
            )));
        }
        let mut pre = Matrix::zeros(x.rows(), self.fan_out());
        for i in 0..x.rows() {
            pre.row_mut(i).copy_from_slice(&self.bias.value);
        }
        let (rows, fi, fo) = (x.rows(), self.fan_in(), self.fan_out());
        gemm_slices(T::one(), x.data(), fi, false, &self.weight.value, fo, false, T::one(), pre.data_mut(), rows, fi, fo);
        let y = self.activate(&pre);
        Ok((
            y,
            DenseTape {
                input: x.clone(),
                preact: pre,
            },
        ))
    }

    /// Forward over rows given as lists of active input indices (value 1).
    pub fn forward_binary(&self, active: &[Vec<u32>]) -> Result<(Matrix<T>, SparseTape<T>)> {
        let out = self.fan_out();
        let mut pre = Matrix::zeros(active.len(), out);
        for (i, bits) in active.iter().enumerate() {
            let row = pre.row_mut(i);
            row.copy_from_slice(&self.bias.value);
            for &j in bits {
                let j = j as usize;
                if j >= self.fan_in() {
                    return Err(Error::shape(format!(
                        "active index {j} beyond {} inputs of {}",
                        self.fan_in(),
                        self.weight.name
                    )));
                }
                for (a, b) in row.iter_mut().zip(self.weight.row(j)) {
                    *a += *b;
                }
            }
        }
        let y = self.activate(&pre);
        Ok((
            y,
            SparseTape {
                active: active.to_vec(),
                preact: pre,
            },
        ))
    }

    fn gate(&self, preact: &Matrix<T>, grad_y: &Matrix<T>) -> Result<Matrix<T>> {
        if grad_y.shape() != preact.shape() {
            return Err(Error::shape(format!(
                "{} backward: gradient {:?} does not match tape {:?}",
                self.weight.name,
                grad_y.shape(),
                preact.shape()
            )));
        }
        let mut g = grad_y.clone();
        if self.activation == Activation::Relu {
            for (gv, pv) in g.data_mut().iter_mut().zip(preact.data()) {
                if *pv <= T::zero() {
                    *gv = T::zero();
                }
            }
        }
        Ok(g)
    }

    fn accumulate_bias(&mut self, g: &Matrix<T>) {
        for i in 0..g.rows() {
            for (b, v) in self.bias.grad.iter_mut().zip(g.row(i)) {
                *b += *v;
            }
        }
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, tape: &DenseTape<T>, grad_y: &Matrix<T>) -> Result<Matrix<T>> {
        let g = self.backward_params(tape, grad_y)?;
        let (rows, fi, fo) = (g.rows(), self.fan_in(), self.fan_out());
        let mut gx = Matrix::zeros(rows, fi);
        gemm_slices(T::one(), g.data(), fo, false, &self.weight.value, fo, true, T::zero(), gx.data_mut(), rows, fo, fi);
        Ok(gx)
    }

    /// Like [`backward`](Self::backward) without computing the input gradient.
    pub fn backward_params(&mut self, tape: &DenseTape<T>, grad_y: &Matrix<T>) -> Result<Matrix<T>> {
        if tape.input.rows() != grad_y.rows() {
            return Err(Error::shape(format!(
                "{} backward: tape has {} rows, gradient {}",
                self.weight.name,
                tape.input.rows(),
                grad_y.rows()
            )));
        }
        let g = self.gate(&tape.preact, grad_y)?;
        let (rows, fi, fo) = (g.rows(), self.fan_in(), self.fan_out());
        gemm_slices(T::one(), tape.input.data(), fi, true, g.data(), fo, false, T::one(), &mut self.weight.grad, fi, rows, fo);
        self.accumulate_bias(&g);
        Ok(g)
    }

    pub fn backward_binary(&mut self, tape: &SparseTape<T>, grad_y: &Matrix<T>) -> Result<()> {
        let g = self.gate(&tape.preact, grad_y)?;
        let out = self.fan_out();
        for (i, bits) in tape.active.iter().enumerate() {
            let gi = g.row(i);
            for &j in bits {
                let j = j as usize;
                for (a, b) in self.weight.grad[j * out..(j + 1) * out].iter_mut().zip(gi) {
                    *a += *b;
                }
            }
        }
        self.accumulate_bias(&g);
        Ok(())
    }
}

impl<T: Real> Module<T> for Dense<T> {
    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}
