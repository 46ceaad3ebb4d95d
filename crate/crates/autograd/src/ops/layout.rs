use crate::shape::{contiguous_strides, for_each_offset2, numel, split_at_axis};
use crate::{Error, Result, Scalar, Tensor};

/// Materialized swap of two axes.
pub(crate) fn transpose<T: Scalar>(x: &Tensor<T>, d0: usize, d1: usize) -> Tensor<T> {
    let mut shape = x.shape().to_vec();
    shape.swap(d0, d1);
    let mut src_strides = contiguous_strides(x.shape());
    src_strides.swap(d0, d1);
    let dst_strides = contiguous_strides(&shape);
    let xd = x.data();
    let mut out = vec![T::zero(); xd.len()];
    for_each_offset2(&shape, &dst_strides, &src_strides, |_, o, i| out[o] = xd[i]);
    Tensor::new(&shape, out).expect("permuted shape")
}

pub(crate) fn concat<T: Scalar>(xs: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
    let first = xs.first().ok_or_else(|| Error::dim("concat", "no inputs"))?;
    if axis >= first.rank() {
        return Err(Error::dim("concat", format!("axis {axis} out of range for {:?}", first.shape())));
    }
    let mut total = 0;
    for x in xs {
        let same = x.rank() == first.rank()
            && x.shape().iter().zip(first.shape()).enumerate().all(|(i, (a, b))| i == axis || a == b);
        if !same {
            return Err(Error::dim(
                "concat",
                format!("{:?} and {:?} differ off axis {axis}", first.shape(), x.shape()),
            ));
        }
        total += x.shape()[axis];
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = total;
    let (outer, _, inner) = split_at_axis(&shape, axis);
    let mut out = Vec::with_capacity(numel(&shape));
    for o in 0..outer {
        for x in xs {
            let chunk = x.shape()[axis] * inner;
            out.extend_from_slice(&x.data()[o * chunk..(o + 1) * chunk]);
        }
    }
    Tensor::new(&shape, out)
}

pub(crate) fn concat_backward<T: Scalar>(g: &[T], out_shape: &[usize], shapes: &[Vec<usize>], axis: usize) -> Vec<Vec<T>> {
    let (outer, total, inner) = split_at_axis(out_shape, axis);
    let mut parts: Vec<Vec<T>> = shapes.iter().map(|s| Vec::with_capacity(numel(s))).collect();
    for o in 0..outer {
        let mut off = o * total * inner;
        for (s, part) in shapes.iter().zip(parts.iter_mut()) {
            let chunk = s[axis] * inner;
            part.extend_from_slice(&g[off..off + chunk]);
            off += chunk;
        }
    }
    parts
}

pub(crate) fn narrow<T: Scalar>(x: &Tensor<T>, axis: usize, start: usize, len: usize) -> Tensor<T> {
    let (outer, full, inner) = split_at_axis(x.shape(), axis);
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = o * full * inner + start * inner;
        out.extend_from_slice(&x.data()[base..base + len * inner]);
    }
    let mut shape = x.shape().to_vec();
    shape[axis] = len;
    Tensor::new(&shape, out).expect("narrowed shape")
}

pub(crate) fn narrow_backward<T: Scalar>(
    g: &[T],
    out_shape: &[usize],
    in_shape: &[usize],
    axis: usize,
    start: usize,
) -> Vec<T> {
    let (outer, full, inner) = split_at_axis(in_shape, axis);
    let len = out_shape[axis];
    let mut gx = vec![T::zero(); numel(in_shape)];
    for o in 0..outer {
        let dst = o * full * inner + start * inner;
        let src = o * len * inner;
        gx[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
    }
    gx
}
