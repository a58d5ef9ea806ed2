use rand::Rng;

use super::{Matrix, Real};
use crate::error::{Error, Result};

/// A named trainable tensor with its gradient and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub value: Vec<T>,
    pub grad: Vec<T>,
    pub m: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Real> Param<T> {
    pub fn zeros(name: impl Into<String>, rows: usize, cols: usize) -> Self {
        let n = rows * cols;
        Self {
            name: name.into(),
            rows,
            cols,
            value: vec![T::zero(); n],
            grad: vec![T::zero(); n],
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
        }
    }

    pub fn uniform(
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        bound: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let mut p = Self::zeros(name, rows, cols);
        for x in &mut p.value {
            *x = T::lit(rng.gen_range(-bound..=bound));
        }
        p
    }

    pub fn from_matrix(name: impl Into<String>, m: Matrix<T>) -> Self {
        let (rows, cols) = m.shape();
        let mut p = Self::zeros(name, rows, cols);
        p.value = m.into_vec();
        p
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.value[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.value[i * self.cols..(i + 1) * self.cols]
    }

    pub fn grad_row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.grad[i * self.cols..(i + 1) * self.cols]
    }

    pub fn value_matrix(&self) -> Matrix<T> {
        Matrix::from_vec(self.rows, self.cols, self.value.clone()).expect("param shape")
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }

    /// Accumulates `g` (same shape) into the gradient.
    pub fn accumulate(&mut self, g: &Matrix<T>) -> Result<()> {
        if g.shape() != (self.rows, self.cols) {
            return Err(Error::shape(format!(
                "gradient {:?} for parameter {} of shape {:?}",
                g.shape(),
                self.name,
                (self.rows, self.cols)
            )));
        }
        for (a, b) in self.grad.iter_mut().zip(g.data()) {
            *a += *b;
        }
        Ok(())
    }

    /// Replaces the value, checking the shape.
    pub fn assign(&mut self, rows: usize, cols: usize, data: Vec<T>) -> Result<()> {
        if (rows, cols) != (self.rows, self.cols) || data.len() != rows * cols {
            return Err(Error::shape(format!(
                "parameter {} expects {}x{}, got {rows}x{cols}",
                self.name, self.rows, self.cols
            )));
        }
        self.value = data;
        Ok(())
    }

    /// Order-sensitive checksum of the values, used to verify freezing.
    pub fn checksum(&self) -> u64 {
        self.value.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, v| {
            (h ^ v.as_f64().to_bits()).wrapping_mul(0x0000_0100_0000_01b3)
        })
    }

    pub fn cast<U: Real>(&self) -> Param<U> {
        let c = |v: &Vec<T>| v.iter().map(|x| U::lit(x.as_f64())).collect();
        Param {
            name: self.name.clone(),
            rows: self.rows,
            cols: self.cols,
            value: c(&self.value),
            grad: c(&self.grad),
            m: c(&self.m),
            v: c(&self.v),
        }
    }
}

/// Anything owning parameters.
pub trait Module<T: Real> {
    fn params(&self) -> Vec<&Param<T>>;
    fn params_mut(&mut self) -> Vec<&mut Param<T>>;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    fn checksum(&self) -> u64 {
        self.params()
            .iter()
            .fold(0u64, |h, p| h.rotate_left(7) ^ p.checksum())
    }
}
