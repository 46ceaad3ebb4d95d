use crate::shape::split_at_axis;
use crate::{Scalar, Tensor};

fn softmax_row<T: Scalar>(src: &[T], dst: &mut [T]) {
    let m = src.iter().copied().fold(T::neg_infinity(), T::max);
    for (d, &v) in dst.iter_mut().zip(src) {
        *d = v - m;
    }
    T::exp_in_place(dst);
    let inv = T::one() / dst.iter().copied().sum::<T>();
    for d in dst.iter_mut() {
        *d = *d * inv;
    }
}

pub(crate) fn softmax<T: Scalar>(x: &Tensor<T>, axis: usize) -> Tensor<T> {
    let (outer, len, inner) = split_at_axis(x.shape(), axis);
    let xd = x.data();
    let mut out = vec![T::zero(); xd.len()];
    if inner == 1 {
        for (src, dst) in xd.chunks_exact(len).zip(out.chunks_exact_mut(len)) {
            softmax_row(src, dst);
        }
        return Tensor::new(x.shape(), out).expect("same shape");
    }
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut m = T::neg_infinity();
            for k in 0..len {
                m = m.max(xd[base + k * inner]);
            }
            let mut s = T::zero();
            for k in 0..len {
                let e = (xd[base + k * inner] - m).exp();
                out[base + k * inner] = e;
                s = s + e;
            }
            let inv = T::one() / s;
            for k in 0..len {
                out[base + k * inner] = out[base + k * inner] * inv;
            }
        }
    }
    Tensor::new(x.shape(), out).expect("same shape")
}

pub(crate) fn log_softmax<T: Scalar>(x: &Tensor<T>, axis: usize) -> Tensor<T> {
    let (outer, len, inner) = split_at_axis(x.shape(), axis);
    let xd = x.data();
    let mut out = vec![T::zero(); xd.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut m = T::neg_infinity();
            for k in 0..len {
                m = m.max(xd[base + k * inner]);
            }
            let mut s = T::zero();
            for k in 0..len {
                s = s + (xd[base + k * inner] - m).exp();
            }
            let lse = m + s.ln();
            for k in 0..len {
                out[base + k * inner] = xd[base + k * inner] - lse;
            }
        }
    }
    Tensor::new(x.shape(), out).expect("same shape")
}

/// `dx = y * (g - sum_axis(g * y))`
pub(crate) fn softmax_backward<T: Scalar>(y: &Tensor<T>, g: &[T], axis: usize) -> Vec<T> {
    let (outer, len, inner) = split_at_axis(y.shape(), axis);
    let yd = y.data();
    let mut gx = vec![T::zero(); yd.len()];
    if inner == 1 {
        for ((yr, gr), dst) in yd.chunks_exact(len).zip(g.chunks_exact(len)).zip(gx.chunks_exact_mut(len)) {
            let dot: T = yr.iter().zip(gr).map(|(&y, &g)| y * g).sum();
            for ((d, &y), &g) in dst.iter_mut().zip(yr).zip(gr) {
                *d = y * (g - dot);
            }
        }
        return gx;
    }
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut dot = T::zero();
            for k in 0..len {
                let p = base + k * inner;
                dot = dot + g[p] * yd[p];
            }
            for k in 0..len {
                let p = base + k * inner;
                gx[p] = yd[p] * (g[p] - dot);
            }
        }
    }
    gx
}

/// `dx = g - softmax(x) * sum_axis(g)`, with `softmax(x) = exp(y)`.
pub(crate) fn log_softmax_backward<T: Scalar>(y: &Tensor<T>, g: &[T], axis: usize) -> Vec<T> {
    let (outer, len, inner) = split_at_axis(y.shape(), axis);
    let yd = y.data();
    let mut gx = vec![T::zero(); yd.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut s = T::zero();
            for k in 0..len {
                s = s + g[base + k * inner];
            }
            for k in 0..len {
                let p = base + k * inner;
                gx[p] = g[p] - yd[p].exp() * s;
            }
        }
    }
    gx
}
