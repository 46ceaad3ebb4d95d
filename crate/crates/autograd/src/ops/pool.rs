use crate::{Error, Result, Scalar, Tensor};

pub(crate) fn maxpool<T: Scalar>(x: &Tensor<T>, k: usize) -> Result<(Tensor<T>, Vec<usize>)> {
    let s = x.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    if k == 0 || h < k || w < k {
        return Err(Error::dim("maxpool2d", format!("window {k} on {h}x{w}")));
    }
    let (oh, ow) = (h / k, w / k);
    let xd = x.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut arg = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + oy * k * w + ox * k;
                for dy in 0..k {
                    for dx in 0..k {
                        let idx = base + (oy * k + dy) * w + ox * k + dx;
                        if xd[idx] > xd[best] {
                            best = idx;
                        }
                    }
                }
                out.push(xd[best]);
                arg.push(best);
            }
        }
    }
    Ok((Tensor::new(&[n, c, oh, ow], out)?, arg))
}

/// Source indices and interpolation weight for each output coordinate,
/// half-pixel centers, no corner alignment.
fn axis_map(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

pub(crate) fn upsample_forward<T: Scalar>(x: &Tensor<T>, oh: usize, ow: usize) -> Tensor<T> {
    let s = x.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let ys = axis_map(h, oh);
    let xs = axis_map(w, ow);
    let xd = x.data();
    let mut out = vec![T::zero(); n * c * oh * ow];
    for plane in 0..n * c {
        let src = &xd[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out[plane * oh * ow..(plane + 1) * oh * ow];
        for (oy, &(y0, y1, ly)) in ys.iter().enumerate() {
            let ly = T::from_f64_lossy(ly);
            for (ox, &(x0, x1, lx)) in xs.iter().enumerate() {
                let lx = T::from_f64_lossy(lx);
                let top = src[y0 * w + x0] * (T::one() - lx) + src[y0 * w + x1] * lx;
                let bot = src[y1 * w + x0] * (T::one() - lx) + src[y1 * w + x1] * lx;
                dst[oy * ow + ox] = top * (T::one() - ly) + bot * ly;
            }
        }
    }
    Tensor::new(&[n, c, oh, ow], out).expect("upsampled shape")
}

pub(crate) fn upsample_backward<T: Scalar>(in_shape: &[usize], out_shape: &[usize], g: &[T]) -> Vec<T> {
    let (n, c, h, w) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
    let (oh, ow) = (out_shape[2], out_shape[3]);
    let ys = axis_map(h, oh);
    let xs = axis_map(w, ow);
    let mut gx = vec![T::zero(); n * c * h * w];
    for plane in 0..n * c {
        let dst = &mut gx[plane * h * w..(plane + 1) * h * w];
        let src = &g[plane * oh * ow..(plane + 1) * oh * ow];
        for (oy, &(y0, y1, ly)) in ys.iter().enumerate() {
            let ly = T::from_f64_lossy(ly);
            for (ox, &(x0, x1, lx)) in xs.iter().enumerate() {
                let lx = T::from_f64_lossy(lx);
                let gv = src[oy * ow + ox];
                let (top, bot) = (gv * (T::one() - ly), gv * ly);
                dst[y0 * w + x0] = dst[y0 * w + x0] + top * (T::one() - lx);
                dst[y0 * w + x1] = dst[y0 * w + x1] + top * lx;
                dst[y1 * w + x0] = dst[y1 * w + x0] + bot * (T::one() - lx);
                dst[y1 * w + x1] = dst[y1 * w + x1] + bot * lx;
            }
        }
    }
    gx
}
