use crate::linalg::gemm;
use crate::{Error, Result, Scalar, Tensor};

#[derive(Clone, Copy)]
struct Geometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
    per_sample: bool,
}

impl Geometry {
    fn ckk(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }

    /// 1x1, stride 1, no padding: the input itself is the column matrix.
    fn pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

fn geometry(x: &[usize], w: &[usize], stride: usize, pad: usize) -> Result<Geometry> {
    if x.len() != 4 {
        return Err(Error::dim("conv2d", format!("input must be (N, C, H, W), got {x:?}")));
    }
    if stride == 0 {
        return Err(Error::dim("conv2d", "stride must be positive"));
    }
    let (n, c, h, wd) = (x[0], x[1], x[2], x[3]);
    let (per_sample, o, wc, kh, kw) = match w.len() {
        4 => (false, w[0], w[1], w[2], w[3]),
        5 => {
            if w[0] != n {
                return Err(Error::dim("conv2d", format!("per-sample kernel {w:?} for batch of {n}")));
            }
            (true, w[1], w[2], w[3], w[4])
        }
        _ => return Err(Error::dim("conv2d", format!("kernel must be rank 4 or 5, got {w:?}"))),
    };
    if wc != c {
        return Err(Error::dim("conv2d", format!("kernel expects {wc} input channels, input has {c}")));
    }
    if h + 2 * pad < kh || wd + 2 * pad < kw {
        return Err(Error::dim("conv2d", format!("kernel {kh}x{kw} larger than padded input {h}x{wd}")));
    }
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    Ok(Geometry { n, c, h, w: wd, o, kh, kw, oh, ow, stride, pad, per_sample })
}

fn im2col<T: Scalar>(g: &Geometry, x: &[T], cols: &mut [T]) {
    let p = g.positions();
    for c in 0..g.c {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = &mut cols[((c * g.kh + ki) * g.kw + kj) * p..][..p];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let dst = &mut row[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.w as isize { T::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(g: &Geometry, cols: &[T], dx: &mut [T]) {
    let p = g.positions();
    for c in 0..g.c {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = &cols[((c * g.kh + ki) * g.kw + kj) * p..][..p];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] = dst[ix as usize] + row[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn forward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, stride: usize, pad: usize) -> Result<Tensor<T>> {
    let g = geometry(x.shape(), w.shape(), stride, pad)?;
    let (ckk, p) = (g.ckk(), g.positions());
    let in_len = g.c * g.h * g.w;
    let w_len = g.o * ckk;
    let mut out = vec![T::zero(); g.n * g.o * p];
    let mut cols = if g.pointwise() { Vec::new() } else { vec![T::zero(); ckk * p] };
    for i in 0..g.n {
        let xs = &x.data()[i * in_len..(i + 1) * in_len];
        let ws = if g.per_sample { &w.data()[i * w_len..(i + 1) * w_len] } else { w.data() };
        let colm: &[T] = if g.pointwise() {
            xs
        } else {
            im2col(&g, xs, &mut cols);
            &cols
        };
        gemm(g.o, ckk, p, T::one(), ws, false, colm, false, T::zero(), &mut out[i * g.o * p..(i + 1) * g.o * p]);
    }
    Tensor::new(&[g.n, g.o, g.oh, g.ow], out)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    gout: &[T],
    _out_shape: &[usize],
    stride: usize,
    pad: usize,
    want_x: bool,
    want_w: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let g = geometry(x.shape(), w.shape(), stride, pad).expect("validated in forward");
    let (ckk, p) = (g.ckk(), g.positions());
    let in_len = g.c * g.h * g.w;
    let w_len = g.o * ckk;
    let mut gx = want_x.then(|| vec![T::zero(); x.numel()]);
    let mut gw = want_w.then(|| vec![T::zero(); w.numel()]);
    let mut cols = if g.pointwise() { Vec::new() } else { vec![T::zero(); ckk * p] };
    let mut dcols = if g.pointwise() || !want_x { Vec::new() } else { vec![T::zero(); ckk * p] };
    for i in 0..g.n {
        let xs = &x.data()[i * in_len..(i + 1) * in_len];
        let ws = if g.per_sample { &w.data()[i * w_len..(i + 1) * w_len] } else { w.data() };
        let gs = &gout[i * g.o * p..(i + 1) * g.o * p];
        if let Some(gw) = gw.as_mut() {
            let colm: &[T] = if g.pointwise() {
                xs
            } else {
                im2col(&g, xs, &mut cols);
                &cols
            };
            let (dst, beta) = if g.per_sample {
                (&mut gw[i * w_len..(i + 1) * w_len], T::zero())
            } else {
                (&mut gw[..], T::one())
            };
            gemm(g.o, p, ckk, T::one(), gs, false, colm, true, beta, dst);
        }
        if let Some(gx) = gx.as_mut() {
            let dst = &mut gx[i * in_len..(i + 1) * in_len];
            if g.pointwise() {
                gemm(ckk, g.o, p, T::one(), ws, true, gs, false, T::zero(), dst);
            } else {
                gemm(ckk, g.o, p, T::one(), ws, true, gs, false, T::zero(), &mut dcols);
                col2im(&g, &dcols, dst);
            }
        }
    }
    (gx, gw)
}
