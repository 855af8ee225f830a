use crate::error::{shape_err, Error, Result};
use crate::tensor::{Dims, Scalar, Tensor4};

/// Output of the fused softmax and categorical cross-entropy.
#[derive(Clone, Debug)]
pub struct SoftmaxXent<T> {
    /// Mean over the batch of `-ln p[true class]`.
    pub loss: T,
    pub probs: Tensor4<T>,
    /// `(probs - one_hot) / batch`.
    pub grad: Tensor4<T>,
}

fn row_count<T: Scalar>(logits: &Tensor4<T>) -> Result<(usize, usize)> {
    let d = logits.dims();
    if d.h != 1 || d.w != 1 {
        return shape_err(format!("logits must be (n, k, 1, 1), got {d}"));
    }
    Ok((d.n, d.c))
}

/// Row-wise softmax with max subtraction.
pub fn softmax<T: Scalar>(logits: &Tensor4<T>) -> Result<Tensor4<T>> {
    let (_, k) = row_count(logits)?;
    if !logits.all_finite() {
        return Err(Error::Numeric("non-finite logits".into()));
    }
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.as_slice().chunks_exact(k) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let start = out.len();
        out.extend(row.iter().map(|&v| (v - max).exp()));
        let total: T = out[start..].iter().copied().sum();
        out[start..].iter_mut().for_each(|v| *v = *v / total);
    }
    Tensor4::from_vec(logits.dims(), out)
}

/// `labels[i]` is the true class index of row `i`.
pub fn softmax_xent<T: Scalar>(logits: &Tensor4<T>, labels: &[usize]) -> Result<SoftmaxXent<T>> {
    let (n, k) = row_count(logits)?;
    if labels.len() != n {
        return shape_err(format!("{} labels for {n} logit rows", labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Usage(format!("label {bad} out of range for {k} classes")));
    }
    let probs = softmax(logits)?;
    let batch = T::from_usize(n).expect("batch size");
    let mut loss = T::zero();
    let mut grad = probs.as_slice().to_vec();
    for (i, &label) in labels.iter().enumerate() {
        let row = &logits.as_slice()[i * k..(i + 1) * k];
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        // log-sum-exp keeps the loss finite even when the true-class probability underflows
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        loss = loss + (lse - row[label]);
        grad[i * k + label] = grad[i * k + label] - T::one();
    }
    grad.iter_mut().for_each(|g| *g = *g / batch);
    Ok(SoftmaxXent { loss: loss / batch, probs, grad: Tensor4::from_vec(Dims::new(n, k, 1, 1), grad)? })
}
