use crate::shape::{broadcast_strides, contiguous_strides, numel, runs2};
use crate::Scalar;

/// Sums `data` (laid out as `shape`) onto `target`, a shape that broadcasts
/// to `shape`.
pub(crate) fn sum_to<T: Scalar>(data: &[T], shape: &[usize], target: &[usize]) -> Vec<T> {
    let s_src = contiguous_strides(shape);
    let s_dst = broadcast_strides(target, shape);
    let mut out = vec![T::zero(); numel(target)];
    let r = runs2(shape, &s_src, &s_dst);
    for &(_, i, j) in &r.starts {
        let src = &data[i..i + r.len];
        if r.step_b == 0 {
            out[j] = out[j] + src.iter().copied().sum();
        } else {
            for (k, &v) in src.iter().enumerate() {
                out[j + k * r.step_b] = out[j + k * r.step_b] + v;
            }
        }
    }
    out
}

/// Broadcasts a gradient of shape `small` back over `big`.
pub(crate) fn expand_from<T: Scalar>(g: &[T], small: &[usize], big: &[usize]) -> Vec<T> {
    let s_big = contiguous_strides(big);
    let s_small = broadcast_strides(small, big);
    let mut out = vec![T::zero(); numel(big)];
    let r = runs2(big, &s_big, &s_small);
    for &(_, i, j) in &r.starts {
        for (k, d) in out[i..i + r.len].iter_mut().enumerate() {
            *d = g[j + k * r.step_b];
        }
    }
    out
}
