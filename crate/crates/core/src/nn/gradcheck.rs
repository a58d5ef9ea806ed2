//! Central finite-difference checks for the analytic backward passes.

use rand::Rng;

use super::{Matrix, Module};
use crate::error::Result;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Magnitude below which gradients are compared absolutely.
pub const FLOOR: f64 = 1e-5;

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix<f64> {
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .expect("shape")
}

/// Largest relative error between `analytic` and central differences of
/// `loss` around `values`.
pub fn check_slice(
    values: &[f64],
    analytic: &[f64],
    mut loss: impl FnMut(&[f64]) -> Result<f64>,
) -> Result<f64> {
    assert_eq!(values.len(), analytic.len());
    let mut x = values.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + STEP;
        let up = loss(&x)?;
        x[i] = orig - STEP;
        let down = loss(&x)?;
        x[i] = orig;
        let numeric = (up - down) / (2.0 * STEP);
        worst = worst.max(rel_error(analytic[i], numeric));
    }
    Ok(worst)
}

pub fn check_input(
    x: &Matrix<f64>,
    analytic: &Matrix<f64>,
    loss: impl Fn(&Matrix<f64>) -> Result<f64>,
) -> Result<f64> {
    let (r, c) = x.shape();
    check_slice(x.data(), analytic.data(), |v| {
        loss(&Matrix::from_vec(r, c, v.to_vec())?)
    })
}

/// Zeroes gradients, runs `backward` to accumulate analytic parameter
/// gradients, and compares every parameter entry against `loss`.
pub fn check_params<M: Module<f64>>(
    model: &mut M,
    loss: impl Fn(&M) -> Result<f64>,
    backward: impl FnOnce(&mut M) -> Result<()>,
) -> Result<f64> {
    model.zero_grad();
    backward(model)?;
    let analytic: Vec<Vec<f64>> = model.params().iter().map(|p| p.grad.clone()).collect();
    let mut worst = 0.0f64;
    for (pi, grads) in analytic.iter().enumerate() {
        for (i, &a) in grads.iter().enumerate() {
            let orig = model.params()[pi].value[i];
            model.params_mut()[pi].value[i] = orig + STEP;
            let up = loss(model)?;
            model.params_mut()[pi].value[i] = orig - STEP;
            let down = loss(model)?;
            model.params_mut()[pi].value[i] = orig;
            worst = worst.max(rel_error(a, (up - down) / (2.0 * STEP)));
        }
    }
    Ok(worst)
}

/// `Σ w ⊙ y`, a scalar loss whose gradient with respect to `y` is `w`.
pub fn probe(y: &Matrix<f64>, w: &Matrix<f64>) -> f64 {
    y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
}
