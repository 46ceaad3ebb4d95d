use crate::linalg::gemm;
use crate::{Error, Result, Scalar, Tensor};

struct Dims {
    batch: usize,
    a_batched: bool,
    b_batched: bool,
    m: usize,
    k: usize,
    n: usize,
}

fn dims(a: &[usize], b: &[usize], ta: bool, tb: bool) -> Result<Dims> {
    let ok_rank = |r: usize| r == 2 || r == 3;
    if !ok_rank(a.len()) || !ok_rank(b.len()) {
        return Err(Error::dim("matmul", format!("ranks of {a:?} and {b:?} must be 2 or 3")));
    }
    let last2 = |s: &[usize]| (s[s.len() - 2], s[s.len() - 1]);
    let (a0, a1) = last2(a);
    let (b0, b1) = last2(b);
    let (m, k) = if ta { (a1, a0) } else { (a0, a1) };
    let (k2, n) = if tb { (b1, b0) } else { (b0, b1) };
    if k != k2 {
        return Err(Error::dim("matmul", format!("inner extents differ: {a:?} x {b:?}")));
    }
    let ab = (a.len() == 3).then(|| a[0]);
    let bb = (b.len() == 3).then(|| b[0]);
    let batch = match (ab, bb) {
        (Some(x), Some(y)) if x != y => {
            return Err(Error::dim("matmul", format!("batch extents differ: {a:?} x {b:?}")))
        }
        (Some(x), _) | (None, Some(x)) => x,
        (None, None) => 1,
    };
    Ok(Dims { batch, a_batched: ab.is_some(), b_batched: bb.is_some(), m, k, n })
}

pub(crate) fn forward<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, ta: bool, tb: bool, alpha: T) -> Result<Tensor<T>> {
    let d = dims(a.shape(), b.shape(), ta, tb)?;
    let mut out = vec![T::zero(); d.batch * d.m * d.n];
    let (sa, sb, sc) = (d.m * d.k, d.k * d.n, d.m * d.n);
    for i in 0..d.batch {
        let ao = if d.a_batched { i * sa } else { 0 };
        let bo = if d.b_batched { i * sb } else { 0 };
        gemm(
            d.m,
            d.k,
            d.n,
            alpha,
            &a.data()[ao..ao + sa],
            ta,
            &b.data()[bo..bo + sb],
            tb,
            T::zero(),
            &mut out[i * sc..(i + 1) * sc],
        );
    }
    let shape: Vec<usize> =
        if d.a_batched || d.b_batched { vec![d.batch, d.m, d.n] } else { vec![d.m, d.n] };
    Tensor::new(&shape, out)
}

/// For `C = alpha * op(A) op(B)`:
/// `dA = alpha * G op(B)^T` (transposed back if `ta`), `dB = alpha * op(A)^T G`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    g: &[T],
    ta: bool,
    tb: bool,
    alpha: T,
    want_a: bool,
    want_b: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let d = dims(a.shape(), b.shape(), ta, tb).expect("validated in forward");
    let (sa, sb, sc) = (d.m * d.k, d.k * d.n, d.m * d.n);
    let mut ga = want_a.then(|| vec![T::zero(); a.numel()]);
    let mut gb = want_b.then(|| vec![T::zero(); b.numel()]);
    for i in 0..d.batch {
        let ao = if d.a_batched { i * sa } else { 0 };
        let bo = if d.b_batched { i * sb } else { 0 };
        let gi = &g[i * sc..(i + 1) * sc];
        // accumulate when the operand is shared across the batch
        if let Some(ga) = ga.as_mut() {
            let beta = if d.a_batched { T::zero() } else { T::one() };
            let dst = &mut ga[ao..ao + sa];
            let bsl = &b.data()[bo..bo + sb];
            if ta {
                // dA^T (k x m) = op(B) (k x n) * G^T (n x m)
                gemm(d.k, d.n, d.m, alpha, bsl, tb, gi, true, beta, dst);
            } else {
                // dA (m x k) = G (m x n) * op(B)^T (n x k)
                gemm(d.m, d.n, d.k, alpha, gi, false, bsl, !tb, beta, dst);
            }
        }
        if let Some(gb) = gb.as_mut() {
            let beta = if d.b_batched { T::zero() } else { T::one() };
            let dst = &mut gb[bo..bo + sb];
            let asl = &a.data()[ao..ao + sa];
            if tb {
                // dB^T (n x k) = G^T (n x m) * op(A) (m x k)
                gemm(d.n, d.m, d.k, alpha, gi, true, asl, ta, beta, dst);
            } else {
                // dB (k x n) = op(A)^T (k x m) * G (m x n)
                gemm(d.k, d.m, d.n, alpha, asl, !ta, gi, false, beta, dst);
            }
        }
    }
    (ga, gb)
}
