//! Pixel-wise cross entropy.

use oce_autograd::{Error, Result, Scalar, Tensor, Var};

use crate::nn::Session;

/// Mean over pixels and batch of `-log q_target`, with `q` the softmax of
/// `(N, 2, H, W)` logits and `labels` holding one `{0, 1}` entry per pixel in
/// `(N, H, W)` order.
pub fn ce_loss<T: Scalar>(s: &mut Session<'_, T>, logits: Var, labels: &[u8]) -> Result<Var> {
    let sh = s.shape(logits).to_vec();
    if sh.len() != 4 || sh[1] != 2 {
        return Err(Error::Dimension { op: "ce_loss", msg: format!("logits must be (N, 2, H, W), got {sh:?}") });
    }
    let (n, hw) = (sh[0], sh[2] * sh[3]);
    if labels.len() != n * hw {
        return Err(Error::Dimension { op: "ce_loss", msg: format!("{} labels for {} pixels", labels.len(), n * hw) });
    }
    if let Some(bad) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::Contract(format!("label {bad} outside {{0, 1}}")));
    }
    let mut onehot = vec![T::zero(); 2 * n * hw];
    for b in 0..n {
        for i in 0..hw {
            let k = labels[b * hw + i] as usize;
            onehot[b * 2 * hw + k * hw + i] = T::one();
        }
    }
    let target = s.input(Tensor::new(&sh, onehot)?);
    let logq = s.log_softmax(logits, 1)?;
    let picked = s.mul(logq, target)?;
    let total = s.sum(picked)?;
    s.scale(total, T::from_f64_lossy(-1.0 / (n * hw) as f64))
}
