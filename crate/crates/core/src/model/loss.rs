use crate::error::{Error, Result};
use crate::numerics::Scalar;

/// `log(1 + exp(x))` without overflow for large `|x|`.
pub fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Per-instance logistic loss and its derivative with respect to the logit.
pub fn logistic_loss<T: Scalar>(y: &[T], logits: &[T]) -> Result<(Vec<T>, Vec<T>)> {
    if y.len() != logits.len() {
        return Err(Error::shape("logistic_loss", (y.len(), 1), (logits.len(), 1)));
    }
    let two = T::lit(2.0);
    let mut loss = Vec::with_capacity(y.len());
    let mut grad = Vec::with_capacity(y.len());
    for (k, (&yk, &z)) in y.iter().zip(logits).enumerate() {
        if yk != T::zero() && yk != T::one() {
            return Err(Error::Data(format!("label {yk} at position {k} is not 0 or 1")));
        }
        let sign = two * yk - T::one();
        loss.push(softplus(-sign * z));
        grad.push(sigmoid(z) - yk);
    }
    Ok((loss, grad))
}
