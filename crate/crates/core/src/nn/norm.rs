use super::{Matrix, Module, Param, Real};
use crate::error::{Error, Result};

const EPS: f64 = 1e-5;

/// Per-row layer normalization with learned gain and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<T> {
    pub gain: Param<T>,
    pub bias: Param<T>,
}

#[derive(Debug, Clone)]
pub struct LayerNormTape<T> {
    normalized: Matrix<T>,
    inv_std: Vec<T>,
}

impl<T: Real> LayerNorm<T> {
    pub fn new(name: &str, width: usize) -> Self {
        let mut gain = Param::zeros(format!("{name}.gain"), 1, width);
        gain.value.iter_mut().for_each(|g| *g = T::one());
        Self {
            gain,
            bias: Param::zeros(format!("{name}.bias"), 1, width),
        }
    }

    pub fn forward(&self, x: &Matrix<T>) -> Result<(Matrix<T>, LayerNormTape<T>)> {
        let w = self.gain.cols;
        if x.cols() != w {
            return Err(Error::shape(format!("layer norm of width {w} given {}", x.cols())));
        }
        let n = T::lit(w as f64);
        let mut normalized = x.clone();
        let mut inv_std = Vec::with_capacity(x.rows());
        let mut y = Matrix::zeros(x.rows(), w);
        for i in 0..x.rows() {
            let row = normalized.row_mut(i);
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let is = T::one() / (var + T::lit(EPS)).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * is;
            }
            inv_std.push(is);
            let yr = y.row_mut(i);
            for j in 0..w {
                yr[j] = row[j] * self.gain.value[j] + self.bias.value[j];
            }
        }
        Ok((y, LayerNormTape { normalized, inv_std }))
    }

    pub fn backward(&mut self, tape: &LayerNormTape<T>, grad_y: &Matrix<T>) -> Result<Matrix<T>> {
        if grad_y.shape() != tape.normalized.shape() {
            return Err(Error::shape("layer norm gradient does not match tape"));
        }
        let w = self.gain.cols;
        let n = T::lit(w as f64);
        let mut gx = Matrix::zeros(grad_y.rows(), w);
        for i in 0..grad_y.rows() {
            let gy = grad_y.row(i);
            let xh = tape.normalized.row(i);
            let mut gxh = vec![T::zero(); w];
            for j in 0..w {
                self.gain.grad[j] += gy[j] * xh[j];
                self.bias.grad[j] += gy[j];
                gxh[j] = gy[j] * self.gain.value[j];
            }
            let mean_g = gxh.iter().copied().sum::<T>() / n;
            let mean_gx = gxh.iter().zip(xh).map(|(a, b)| *a * *b).sum::<T>() / n;
            let out = gx.row_mut(i);
            for j in 0..w {
                out[j] = tape.inv_std[i] * (gxh[j] - mean_g - xh[j] * mean_gx);
            }
        }
        Ok(gx)
    }
}

impl<T: Real> Module<T> for LayerNorm<T> {
    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.gain, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.gain, &mut self.bias]
    }
}
