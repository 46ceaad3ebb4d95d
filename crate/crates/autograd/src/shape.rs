use crate::{Error, Result};

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub(crate) fn contiguous_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

/// Numpy-style broadcast of two shapes (aligned at the trailing axis).
pub fn broadcast_shapes(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(Error::dim(
                    "broadcast",
                    format!("shapes {a:?} and {b:?} are not broadcastable"),
                ))
            }
        };
    }
    Ok(out)
}

/// Strides of `src` read through the broadcast `out` shape (0 on broadcast axes).
pub(crate) fn broadcast_strides(src: &[usize], out: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let base = contiguous_strides(src);
    let mut strides = vec![0; rank];
    for i in 0..src.len() {
        let oi = rank - src.len() + i;
        if src[i] != 1 || out[oi] == 1 {
            strides[oi] = if src[i] == 1 { 0 } else { base[i] };
        }
    }
    strides
}

/// Visits every element of `shape` in row-major order, passing the linear
/// output index and the offsets obtained through each stride set.
pub(crate) fn for_each_offset2(
    shape: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let total = numel(shape);
    if total == 0 {
        return;
    }
    let rank = shape.len();
    if rank == 0 {
        f(0, 0, 0);
        return;
    }
    let inner = shape[rank - 1];
    let (ia_step, ib_step) = (sa[rank - 1], sb[rank - 1]);
    let mut idx = vec![0usize; rank];
    let (mut oa, mut ob) = (0usize, 0usize);
    let mut o = 0;
    while o < total {
        let (mut a, mut b) = (oa, ob);
        for _ in 0..inner {
            f(o, a, b);
            o += 1;
            a += ia_step;
            b += ib_step;
        }
        // carry into the outer axes
        let mut d = rank - 1;
        loop {
            if d == 0 {
                return;
            }
            d -= 1;
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < shape[d] {
                break;
            }
            oa -= sa[d] * shape[d];
            ob -= sb[d] * shape[d];
            idx[d] = 0;
        }
    }
}

/// Row-major traversal of `shape` in maximal runs along which both stride
/// sets advance uniformly.
pub(crate) struct Runs {
    /// Output, `a` and `b` offsets at the start of each run.
    pub starts: Vec<(usize, usize, usize)>,
    pub len: usize,
    pub step_a: usize,
    pub step_b: usize,
}

pub(crate) fn runs2(shape: &[usize], sa: &[usize], sb: &[usize]) -> Runs {
    if numel(shape) == 0 {
        return Runs { starts: Vec::new(), len: 0, step_a: 0, step_b: 0 };
    }
    // merge adjacent axes that are laid out contiguously in both operands
    let mut dims: Vec<(usize, usize, usize)> = Vec::new();
    for d in 0..shape.len() {
        if shape[d] == 1 {
            continue;
        }
        if let Some(last) = dims.last_mut() {
            if sa[d] * shape[d] == last.1 && sb[d] * shape[d] == last.2 {
                *last = (last.0 * shape[d], sa[d], sb[d]);
                continue;
            }
        }
        dims.push((shape[d], sa[d], sb[d]));
    }
    let (len, step_a, step_b) = dims.pop().unwrap_or((1, 0, 0));
    let outer = numel(shape) / len;
    let mut starts = Vec::with_capacity(outer);
    let mut idx = vec![0usize; dims.len()];
    let (mut a, mut b) = (0usize, 0usize);
    for r in 0..outer {
        starts.push((r * len, a, b));
        for d in (0..dims.len()).rev() {
            idx[d] += 1;
            a += dims[d].1;
            b += dims[d].2;
            if idx[d] < dims[d].0 {
                break;
            }
            a -= dims[d].1 * dims[d].0;
            b -= dims[d].2 * dims[d].0;
            idx[d] = 0;
        }
    }
    Runs { starts, len, step_a, step_b }
}

/// Splits `shape` around `axis` into (outer, axis length, inner) extents.
pub(crate) fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}
