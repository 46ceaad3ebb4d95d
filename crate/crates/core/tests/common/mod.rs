//! Helpers shared by the integration tests.
#![allow(dead_code)]

use oce_autograd::check::{check_indices, GradCheck};
use oce_autograd::{Result, Scalar, Tensor, Var};
use oce_net::nn::{init_rng, Builder, Mode, ParamId, ParamKind, ParamStore, Session};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const FD_STEP: f64 = 1e-5;
pub const FD_FLOOR: f64 = 1e-3;

/// Modules built into a fresh store.
pub fn build<T: Scalar, M>(seed: u64, f: impl FnOnce(&mut Builder<'_, T>) -> M) -> (ParamStore<T>, M) {
    let mut store = ParamStore::new();
    let mut rng = init_rng(seed);
    let m = f(&mut Builder::new(&mut store, &mut rng));
    (store, m)
}

pub fn normal(shape: &[usize], seed: u64, scale: f64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    let data = (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::new(shape, data).unwrap()
}

pub fn uniform(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Adds noise to every trainable value so zero-initialized biases take part.
pub fn jitter(store: &mut ParamStore<f64>, seed: u64, scale: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in store.iter_mut() {
        if p.kind == ParamKind::Trainable {
            for v in p.value.data_mut() {
                *v += scale * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }
}

/// Stores a tensor as a trainable parameter, so gradient probes cover it.
pub fn add_input(store: &mut ParamStore<f64>, name: &str, t: Tensor<f64>) -> ParamId {
    store.add(name, t, ParamKind::Trainable)
}

fn trainable(store: &ParamStore<f64>) -> Vec<(ParamId, usize)> {
    store.iter().filter(|(_, p)| p.kind == ParamKind::Trainable).map(|(id, p)| (id, p.value.numel())).collect()
}

/// Central-difference check of `d sum(out * r) / d theta` for random `r`.
///
/// Probes cycle over the trainable tensors, one random element each, so
/// small tensors such as biases are always covered.
pub fn grad_check(
    store: &mut ParamStore<f64>,
    mode: Mode,
    probes: usize,
    seed: u64,
    forward: impl Fn(&mut Session<'_, f64>) -> Result<Var>,
) -> GradCheck {
    let shape = {
        let mut s = Session::new(store, mode).with_grads(false);
        let y = forward(&mut s).expect("forward");
        s.shape(y).to_vec()
    };
    let r = normal(&shape, seed ^ 0x5151, 1.0);
    store.zero_grads();
    {
        let mut s = Session::new(store, mode).with_grads(true);
        let y = forward(&mut s).expect("forward");
        let rv = s.input(r.clone());
        let p = s.mul(y, rv).unwrap();
        let loss = s.sum(p).unwrap();
        s.backward(loss).unwrap();
    }
    let slots = trainable(store);
    let mut x = Vec::new();
    let mut analytic = Vec::new();
    let mut offsets = Vec::new();
    for &(id, n) in &slots {
        offsets.push(x.len());
        let p = store.get(id);
        x.extend_from_slice(p.value.data());
        match &p.grad {
            Some(g) => analytic.extend_from_slice(g),
            None => analytic.extend(std::iter::repeat_n(0.0, n)),
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let indices: Vec<usize> =
        (0..probes).map(|i| { let k = i % slots.len(); offsets[k] + rng.random_range(0..slots[k].1) }).collect();
    let original = x.clone();
    let report = check_indices(
        |probe| {
            for (&(id, n), &off) in slots.iter().zip(&offsets) {
                store.get_mut(id).value.data_mut().copy_from_slice(&probe[off..off + n]);
            }
            let mut s = Session::new(store, mode).with_grads(false);
            let y = forward(&mut s).expect("forward");
            s.value(y).data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
        },
        &x,
        &analytic,
        &indices,
        FD_STEP,
        FD_FLOOR,
    );
    for (&(id, n), &off) in slots.iter().zip(&offsets) {
        store.get_mut(id).value.data_mut().copy_from_slice(&original[off..off + n]);
    }
    report
}

pub fn assert_close(a: &[f64], b: &[f64], tol: f64, what: &str) {
    assert_eq!(a.len(), b.len(), "{what}: lengths");
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        assert!((x - y).abs() <= tol, "{what}[{i}]: {x} vs {y}");
    }
}

/// Naive "same" cross-correlation of `(N, C, H, W)` with `(O, C, k, k)`.
pub fn conv_oracle(x: &Tensor<f64>, w: &[f64], o: usize, k: usize) -> Vec<f64> {
    let sh = x.shape();
    let (n, c, h, wd) = (sh[0], sh[1], sh[2], sh[3]);
    let pad = (k / 2) as isize;
    let mut out = vec![0.0; n * o * h * wd];
    for b in 0..n {
        for oc in 0..o {
            for y in 0..h {
                for xx in 0..wd {
                    let mut acc = 0.0;
                    for ic in 0..c {
                        for i in 0..k {
                            for j in 0..k {
                                let (iy, ix) = (y as isize + i as isize - pad, xx as isize + j as isize - pad);
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += x.data()[((b * c + ic) * h + iy as usize) * wd + ix as usize]
                                    * w[((oc * c + ic) * k + i) * k + j];
                            }
                        }
                    }
                    out[((b * o + oc) * h + y) * wd + xx] = acc;
                }
            }
        }
    }
    out
}
