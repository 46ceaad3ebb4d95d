use crate::graph::{Binary, Unary};
use crate::shape::{broadcast_shapes, broadcast_strides, numel, runs2};
use crate::{Result, Scalar, Tensor};

pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    // split by sign so exp never overflows
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn binary<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: fn(T, T) -> T) -> Result<Tensor<T>> {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Tensor::new(a.shape(), data);
    }
    let shape = broadcast_shapes(a.shape(), b.shape())?;
    let sa = broadcast_strides(a.shape(), &shape);
    let sb = broadcast_strides(b.shape(), &shape);
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![T::zero(); numel(&shape)];
    let r = runs2(&shape, &sa, &sb);
    for &(o, ia, ib) in &r.starts {
        let dst = &mut out[o..o + r.len];
        match (r.step_a, r.step_b) {
            (1, 1) => {
                for ((d, &x), &y) in dst.iter_mut().zip(&ad[ia..ia + r.len]).zip(&bd[ib..ib + r.len]) {
                    *d = f(x, y);
                }
            }
            (1, 0) => {
                let y = bd[ib];
                for (d, &x) in dst.iter_mut().zip(&ad[ia..ia + r.len]) {
                    *d = f(x, y);
                }
            }
            (0, 1) => {
                let x = ad[ia];
                for (d, &y) in dst.iter_mut().zip(&bd[ib..ib + r.len]) {
                    *d = f(x, y);
                }
            }
            (sa, sb) => {
                for (i, d) in dst.iter_mut().enumerate() {
                    *d = f(ad[ia + i * sa], bd[ib + i * sb]);
                }
            }
        }
    }
    Tensor::new(&shape, out)
}

/// Sum-reduces a gradient laid out over `out_shape` onto an operand shape.
fn reduce_into<T: Scalar>(
    out_shape: &[usize],
    src_shape: &[usize],
    contrib: impl Fn(usize, usize, usize) -> T,
    other_shape: &[usize],
) -> Vec<T> {
    let s_src = broadcast_strides(src_shape, out_shape);
    let s_other = broadcast_strides(other_shape, out_shape);
    let mut g = vec![T::zero(); numel(src_shape).max(1)];
    let r = runs2(out_shape, &s_src, &s_other);
    for &(o, is, io) in &r.starts {
        if r.step_a == 0 {
            let mut acc = T::zero();
            for i in 0..r.len {
                acc = acc + contrib(o + i, is, io + i * r.step_b);
            }
            g[is] = g[is] + acc;
        } else {
            for i in 0..r.len {
                let p = is + i * r.step_a;
                g[p] = g[p] + contrib(o + i, p, io + i * r.step_b);
            }
        }
    }
    g
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn binary_backward<T: Scalar>(
    kind: Binary,
    a: &Tensor<T>,
    b: &Tensor<T>,
    out_shape: &[usize],
    g: &[T],
    want_a: bool,
    want_b: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let (ad, bd) = (a.data(), b.data());
    if a.shape() == b.shape() {
        let ga = want_a.then(|| match kind {
            Binary::Add | Binary::Sub => g.to_vec(),
            Binary::Mul => g.iter().zip(bd).map(|(&g, &y)| g * y).collect(),
            Binary::Div => g.iter().zip(bd).map(|(&g, &y)| g / y).collect(),
        });
        let gb = want_b.then(|| match kind {
            Binary::Add => g.to_vec(),
            Binary::Sub => g.iter().map(|&g| -g).collect(),
            Binary::Mul => g.iter().zip(ad).map(|(&g, &x)| g * x).collect(),
            Binary::Div => g.iter().zip(ad).zip(bd).map(|((&g, &x), &y)| -g * x / (y * y)).collect(),
        });
        return (ga, gb);
    }
    let ga = want_a.then(|| {
        reduce_into(
            out_shape,
            a.shape(),
            |o, _ia, ib| match kind {
                Binary::Add | Binary::Sub => g[o],
                Binary::Mul => g[o] * bd[ib],
                Binary::Div => g[o] / bd[ib],
            },
            b.shape(),
        )
    });
    let gb = want_b.then(|| {
        reduce_into(
            out_shape,
            b.shape(),
            |o, ib, ia| match kind {
                Binary::Add => g[o],
                Binary::Sub => -g[o],
                Binary::Mul => g[o] * ad[ia],
                Binary::Div => -g[o] * ad[ia] / (bd[ib] * bd[ib]),
            },
            a.shape(),
        )
    });
    (ga, gb)
}

pub(crate) fn unary_backward<T: Scalar>(kind: Unary, x: &Tensor<T>, y: &Tensor<T>, g: &[T]) -> Vec<T> {
    let (xd, yd) = (x.data(), y.data());
    match kind {
        Unary::Relu => g.iter().zip(xd).map(|(&g, &x)| if x > T::zero() { g } else { T::zero() }).collect(),
        Unary::Sigmoid => g.iter().zip(yd).map(|(&g, &y)| g * y * (T::one() - y)).collect(),
        Unary::Exp => g.iter().zip(yd).map(|(&g, &y)| g * y).collect(),
        Unary::Log => g.iter().zip(xd).map(|(&g, &x)| g / x).collect(),
        Unary::Tanh => g.iter().zip(yd).map(|(&g, &y)| g * (T::one() - y * y)).collect(),
    }
}
