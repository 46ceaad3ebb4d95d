use crate::{Error, Result, Scalar, Tensor};

/// Source of the per-channel moments used by batch normalization.
#[derive(Debug, Clone, Copy)]
pub enum BatchStats<'a, T> {
    /// Moments of the current batch (training).
    Batch,
    /// Externally supplied moments, e.g. running averages (inference).
    Fixed { mean: &'a [T], var: &'a [T] },
}

pub(crate) struct Forward<T> {
    pub out: Tensor<T>,
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub invstd: Vec<T>,
}

pub(crate) fn forward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    stats: BatchStats<'_, T>,
    eps: T,
) -> Result<Forward<T>> {
    let s = x.shape();
    let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
    let xd = x.data();
    let count = T::from_usize(n * hw).expect("count");
    let (mean, var) = match stats {
        BatchStats::Batch => {
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            for ch in 0..c {
                let mut acc = T::zero();
                for b in 0..n {
                    acc = acc + xd[(b * c + ch) * hw..][..hw].iter().copied().sum::<T>();
                }
                let m = acc / count;
                let mut sq = T::zero();
                for b in 0..n {
                    for &v in &xd[(b * c + ch) * hw..][..hw] {
                        sq = sq + (v - m) * (v - m);
                    }
                }
                mean[ch] = m;
                var[ch] = sq / count;
            }
            (mean, var)
        }
        BatchStats::Fixed { mean, var } => {
            if mean.len() != c || var.len() != c {
                return Err(Error::dim("batch_norm2d", "running statistics length"));
            }
            (mean.to_vec(), var.to_vec())
        }
    };
    let invstd: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let (gd, bd) = (gamma.data(), beta.data());
    let mut out = vec![T::zero(); xd.len()];
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * hw;
            let (m, is, g, sh) = (mean[ch], invstd[ch], gd[ch], bd[ch]);
            for k in base..base + hw {
                out[k] = (xd[k] - m) * is * g + sh;
            }
        }
    }
    Ok(Forward { out: Tensor::new(s, out)?, mean, var, invstd })
}

pub(crate) struct Grads<T> {
    pub x: Vec<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

pub(crate) fn backward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    mean: &[T],
    invstd: &[T],
    batch: bool,
    g: &[T],
) -> Grads<T> {
    let s = x.shape();
    let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
    let xd = x.data();
    let gd = gamma.data();
    let count = T::from_usize(n * hw).expect("count");
    let mut gx = vec![T::zero(); xd.len()];
    let mut ggamma = vec![T::zero(); c];
    let mut gbeta = vec![T::zero(); c];
    for ch in 0..c {
        let (m, is) = (mean[ch], invstd[ch]);
        let (mut sum_g, mut sum_gx) = (T::zero(), T::zero());
        for b in 0..n {
            let base = (b * c + ch) * hw;
            for k in base..base + hw {
                sum_g = sum_g + g[k];
                sum_gx = sum_gx + g[k] * (xd[k] - m) * is;
            }
        }
        ggamma[ch] = sum_gx;
        gbeta[ch] = sum_g;
        let scale = gd[ch] * is;
        for b in 0..n {
            let base = (b * c + ch) * hw;
            for k in base..base + hw {
                gx[k] = if batch {
                    let xhat = (xd[k] - m) * is;
                    scale * (g[k] - sum_g / count - xhat * sum_gx / count)
                } else {
                    scale * g[k]
                };
            }
        }
    }
    Grads { x: gx, gamma: ggamma, beta: gbeta }
}
