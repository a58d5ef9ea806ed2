use rand::Rng;

use super::{Matrix, Real};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Inverted-dropout mask: 0 with probability `rate`, else `1/(1−rate)`.
/// Eval mode always yields ones.
pub fn dropout_mask<T: Real>(
    rows: usize,
    cols: usize,
    rate: f64,
    mode: Mode,
    rng: &mut impl Rng,
) -> Result<Matrix<T>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid(format!(
            "dropout rate must lie in [0, 1), got {rate}"
        )));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok(Matrix::filled(rows, cols, T::one()));
    }
    let keep = T::lit(1.0 / (1.0 - rate));
    let mut m = Matrix::zeros(rows, cols);
    for v in m.data_mut() {
        if rng.gen::<f64>() >= rate {
            *v = keep;
        }
    }
    Ok(m)
}

/// `x ⊙ mask`; the backward pass is the same product applied to the gradient.
pub fn apply_mask<T: Real>(x: &Matrix<T>, mask: &Matrix<T>) -> Result<Matrix<T>> {
    let mut y = x.clone();
    y.hadamard_assign(mask)?;
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rate_zero_and_eval_give_ones() {
        let mut rng = crate::seed::rng(1);
        let m: Matrix<f32> = dropout_mask(3, 4, 0.0, Mode::Train, &mut rng).unwrap();
        assert!(m.data().iter().all(|&v| v == 1.0));
        let m: Matrix<f32> = dropout_mask(3, 4, 0.9, Mode::Eval, &mut rng).unwrap();
        assert!(m.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn rate_one_is_error() {
        let mut rng = crate::seed::rng(1);
        assert!(dropout_mask::<f32>(1, 1, 1.0, Mode::Train, &mut rng).is_err());
        assert!(dropout_mask::<f32>(1, 1, -0.1, Mode::Train, &mut rng).is_err());
    }

    #[test]
    fn half_rate_mean_near_one() {
        let mut rng = crate::seed::rng(7);
        let m: Matrix<f64> = dropout_mask(1000, 100, 0.5, Mode::Train, &mut rng).unwrap();
        let mean = m.data().iter().sum::<f64>() / 1e5;
        assert!((0.98..=1.02).contains(&mean), "{mean}");
        assert!(m.data().iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn same_seed_same_mask() {
        let a: Matrix<f32> = dropout_mask(5, 5, 0.3, Mode::Train, &mut crate::seed::rng(2)).unwrap();
        let b: Matrix<f32> = dropout_mask(5, 5, 0.3, Mode::Train, &mut crate::seed::rng(2)).unwrap();
        assert_eq!(a, b);
    }
}
