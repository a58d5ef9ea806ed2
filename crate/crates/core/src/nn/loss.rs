use super::{Matrix, Real};
use crate::error::{Error, Result};

/// Row-wise log-softmax, stabilized by the row maximum.
pub fn log_softmax_rows<T: Real>(logits: &Matrix<T>) -> Matrix<T> {
    let mut out = logits.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
    out
}

pub fn softmax_rows<T: Real>(logits: &Matrix<T>) -> Matrix<T> {
    let mut out = log_softmax_rows(logits);
    for v in out.data_mut() {
        *v = v.exp();
    }
    out
}

/// Mean cross-entropy over the batch and its gradient
/// `(softmax − onehot) / batch`.
pub fn softmax_xent<T: Real>(logits: &Matrix<T>, labels: &[usize]) -> Result<(T, Matrix<T>)> {
    if labels.len() != logits.rows() {
        return Err(Error::shape(format!(
            "{} labels for {} rows",
            labels.len(),
            logits.rows()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= logits.cols()) {
        return Err(Error::OutOfRange {
            kind: "class label",
            id: bad as u64,
            count: logits.cols() as u64,
        });
    }
    let batch = T::lit(labels.len().max(1) as f64);
    let logp = log_softmax_rows(logits);
    let mut loss = T::zero();
    let mut grad = logp.clone();
    for (i, &l) in labels.iter().enumerate() {
        loss -= logp.get(i, l);
        let row = grad.row_mut(i);
        for v in row.iter_mut() {
            *v = v.exp();
        }
        row[l] -= T::one();
        for v in row.iter_mut() {
            *v /= batch;
        }
    }
    Ok((loss / batch, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{check_input, random_matrix};
    use proptest::prelude::*;

    #[test]
    fn uniform_logits_give_ln_c() {
        let (loss, _) = softmax_xent(&Matrix::<f64>::zeros(3, 4), &[0, 1, 3]).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-12);
        assert!((loss - 1.3863).abs() < 1e-4);
    }

    #[test]
    fn confident_correct_logit() {
        let logits = Matrix::from_rows(&[vec![0.0, 30.0, 0.0]]).unwrap();
        let (loss, _) = softmax_xent(&logits, &[1]).unwrap();
        assert!(loss <= 1e-9);
    }

    #[test]
    fn label_out_of_range() {
        assert!(softmax_xent(&Matrix::<f32>::zeros(1, 2), &[2]).is_err());
        assert!(softmax_xent(&Matrix::<f32>::zeros(2, 2), &[0]).is_err());
    }

    #[test]
    fn large_logits_stay_finite() {
        let logits = Matrix::from_rows(&[vec![1000.0f32, -1000.0, 999.0]]).unwrap();
        let (loss, g) = softmax_xent(&logits, &[2]).unwrap();
        assert!(loss.is_finite() && g.is_finite());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = crate::seed::rng(3);
        for _ in 0..10 {
            let x = random_matrix(4, 5, &mut rng).cast::<f64>();
            let labels = [0, 4, 2, 2];
            let (_, g) = softmax_xent(&x, &labels).unwrap();
            let err = check_input(&x, &g, |x| Ok(softmax_xent(x, &labels)?.0)).unwrap();
            assert!(err <= 1e-4, "{err}");
        }
    }

    proptest! {
        #[test]
        fn loss_is_non_negative(v in proptest::collection::vec(-50.0f64..50.0, 6), l in 0usize..3) {
            let x = Matrix::from_vec(2, 3, v).unwrap();
            let (loss, _) = softmax_xent(&x, &[l, 2 - l]).unwrap();
            prop_assert!(loss >= 0.0);
            let p = softmax_rows(&x);
            for i in 0..2 {
                prop_assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}
