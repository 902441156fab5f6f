//! Decoding binary cross-entropy: per-step BCE averaged over the `K + N`
//! entries, then averaged over the `T_end` steps.

use super::targets::TargetMatrix;
use crate::error::{Error, Result};
use crate::linalg::{log_sigmoid, sigmoid, Matrix};
use crate::scalar::Scalar;

/// `-(1/len) Σ [g log σ(y) + (1 - g) log(1 - σ(y))]`.
pub fn bce_step<T: Scalar>(scores: &[T], target: &[bool]) -> Result<T> {
    if scores.len() != target.len() {
        return Err(Error::dim("bce_step", scores.len(), target.len()));
    }
    if scores.is_empty() {
        return Ok(T::zero());
    }
    let mut acc = T::zero();
    for (&y, &g) in scores.iter().zip(target) {
        // log(1 - σ(y)) = log σ(-y)
        acc += if g { log_sigmoid(y) } else { log_sigmoid(-y) };
    }
    Ok(-acc / T::from_usize(scores.len()).unwrap())
}

/// Mean of [`bce_step`] over the rows of `scores` (`T_end x (K + N)`).
pub fn dbce_loss<T: Scalar>(scores: &Matrix<T>, targets: &TargetMatrix) -> Result<T> {
    Ok(dbce_loss_and_grad(scores, targets)?.0)
}

/// Loss together with `d loss / d scores`.
pub fn dbce_loss_and_grad<T: Scalar>(scores: &Matrix<T>, targets: &TargetMatrix) -> Result<(T, Matrix<T>)> {
    if scores.rows() != targets.t_end() {
        return Err(Error::dim("dbce_loss steps", targets.t_end(), scores.rows()));
    }
    if scores.cols() != targets.width() {
        return Err(Error::dim("dbce_loss width", targets.width(), scores.cols()));
    }
    let steps = scores.rows();
    let mut grad = Matrix::zeros(steps, scores.cols());
    if steps == 0 {
        return Ok((T::zero(), grad));
    }
    let t_end = T::from_usize(steps).unwrap();
    let width = T::from_usize(scores.cols()).unwrap();
    let mut total = T::zero();
    for t in 0..steps {
        let g = targets.dense_row(t);
        total += bce_step(scores.row(t), &g)?;
        let row = grad.row_mut(t);
        for ((d, &y), &gi) in row.iter_mut().zip(scores.row(t)).zip(&g) {
            let target = if gi { T::one() } else { T::zero() };
            *d = (sigmoid(y) - target) / (width * t_end);
        }
    }
    Ok((total / t_end, grad))
}
