use oce_autograd::{BatchStats, Error, Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Direct six-loop cross-correlation with zero padding.
fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
    let (n, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (o, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let mut out = Tensor::zeros(&[n, o, oh, ow]);
    for b in 0..n {
        for oc in 0..o {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for ic in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                    acc += x.at(&[b, ic, iy as usize, ix as usize]) * w.at(&[oc, ic, ky, kx]);
                                }
                            }
                        }
                    }
                    out.set(&[b, oc, oy, ox], acc);
                }
            }
        }
    }
    out
}

#[test]
fn conv_of_ones_sums_full_overlap() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::ones(&[1, 1, 3, 3]));
    let w = g.constant(Tensor::ones(&[1, 1, 3, 3]));
    let y = g.conv2d(x, w, 1, 1).unwrap();
    assert_eq!(g.shape(y), &[1, 1, 3, 3]);
    assert_eq!(g.value(y).at(&[0, 0, 1, 1]), 9.0);
    assert_eq!(g.value(y).at(&[0, 0, 0, 0]), 4.0);
}

#[test]
fn conv_with_identity_kernel_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let xt = rand_tensor(&mut rng, &[2, 1, 5, 6]);
    let mut k = Tensor::zeros(&[1, 1, 3, 3]);
    k.set(&[0, 0, 1, 1], 1.0);
    let mut g = Graph::<f64>::new();
    let x = g.constant(xt.clone());
    let w = g.constant(k);
    let y = g.conv2d(x, w, 1, 1).unwrap();
    assert_eq!(g.value(y), &xt);
}

#[test]
fn conv_matches_nested_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    // the fixed example first, then 50 random geometries
    let mut cases = vec![([1usize, 2, 5, 5], [3usize, 2, 3, 3], 1usize, 1usize)];
    for _ in 0..50 {
        let c = rng.random_range(1..4);
        let k = [1, 3, 5][rng.random_range(0..3)];
        let h = rng.random_range(k..9);
        let w = rng.random_range(k..9);
        cases.push((
            [rng.random_range(1..3), c, h, w],
            [rng.random_range(1..4), c, k, k],
            rng.random_range(1..3),
            rng.random_range(0..(k / 2 + 1)),
        ));
    }
    for (xs, ws, stride, pad) in cases {
        let xt = rand_tensor(&mut rng, &xs);
        let wt = rand_tensor(&mut rng, &ws);
        let want = naive_conv(&xt, &wt, stride, pad);
        let mut g = Graph::<f64>::new();
        let x = g.constant(xt);
        let w = g.constant(wt);
        let y = g.conv2d(x, w, stride, pad).unwrap();
        assert_eq!(g.shape(y), want.shape());
        assert!(g.value(y).max_abs_diff(&want) < 1e-6, "{xs:?} {ws:?} s{stride} p{pad}");
    }
}

#[test]
fn per_sample_kernels_match_separate_convolutions() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let xt = rand_tensor(&mut rng, &[2, 2, 4, 4]);
    let k0 = rand_tensor(&mut rng, &[3, 2, 3, 3]);
    let k1 = rand_tensor(&mut rng, &[3, 2, 3, 3]);
    let mut both = k0.data().to_vec();
    both.extend_from_slice(k1.data());
    let mut g = Graph::<f64>::new();
    let x = g.constant(xt.clone());
    let w = g.constant(Tensor::new(&[2, 3, 2, 3, 3], both).unwrap());
    let y = g.conv2d(x, w, 1, 1).unwrap();
    let y0 = naive_conv(&xt.batch_item(0).unwrap(), &k0, 1, 1);
    let y1 = naive_conv(&xt.batch_item(1).unwrap(), &k1, 1, 1);
    assert!(g.value(y).batch_item(0).unwrap().max_abs_diff(&y0) < 1e-12);
    assert!(g.value(y).batch_item(1).unwrap().max_abs_diff(&y1) < 1e-12);
}

#[test]
fn conv_rejects_channel_mismatch() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::zeros(&[1, 2, 4, 4]));
    let w = g.constant(Tensor::zeros(&[1, 3, 3, 3]));
    assert!(matches!(g.conv2d(x, w, 1, 1), Err(Error::Dimension { .. })));
}

#[test]
fn softmax_of_zeros_is_uniform() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::zeros(&[4]));
    let y = g.softmax(x, 0).unwrap();
    assert_eq!(g.value(y).data(), &[0.25; 4]);
    assert!(matches!(g.softmax(x, 1), Err(Error::Dimension { .. })));
}

#[test]
fn sigmoid_at_zero_is_half() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::zeros(&[1]));
    let y = g.sigmoid(x).unwrap();
    assert_eq!(g.value(y).data(), &[0.5]);
}

#[test]
fn batchnorm_of_two_values() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::new(&[2, 1, 1, 1], vec![1.0, 3.0]).unwrap());
    let gamma = g.constant(Tensor::ones(&[1]));
    let beta = g.constant(Tensor::zeros(&[1]));
    let (y, moments) = g.batch_norm2d(x, gamma, beta, BatchStats::Batch, 1e-5).unwrap();
    let want = 1.0 / (1.0f64 + 1e-5).sqrt();
    let d = g.value(y).data();
    assert!((d[0] + want).abs() < 1e-12 && (d[1] - want).abs() < 1e-12);
    let (mean, var) = moments.unwrap();
    assert_eq!((mean[0], var[0]), (2.0, 1.0));
}

#[test]
fn batchnorm_with_fixed_statistics() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::new(&[1, 2, 1, 1], vec![1.0, 3.0]).unwrap());
    let gamma = g.constant(Tensor::new(&[2], vec![2.0, 1.0]).unwrap());
    let beta = g.constant(Tensor::new(&[2], vec![0.5, 0.0]).unwrap());
    let stats = BatchStats::Fixed { mean: &[0.0, 1.0], var: &[1.0, 4.0] };
    let (y, moments) = g.batch_norm2d(x, gamma, beta, stats, 0.0).unwrap();
    assert!(moments.is_none());
    assert_eq!(g.value(y).data(), &[2.5, 1.0]);
}

#[test]
fn sum_of_squares_gradient() {
    let mut g = Graph::<f64>::new();
    let x = g.variable(Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap());
    let sq = g.mul(x, x).unwrap();
    let loss = g.sum(sq).unwrap();
    g.backward(loss).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[2.0, 4.0, 6.0]);
    assert_eq!(g.value_with_grad(x).grad().unwrap(), &[2.0, 4.0, 6.0]);
}

#[test]
fn sigmoid_slope_at_origin() {
    let mut g = Graph::<f64>::new();
    let w = g.variable(Tensor::new(&[1], vec![0.0]).unwrap());
    let x = g.constant(Tensor::new(&[1], vec![1.0]).unwrap());
    let wx = g.mul(w, x).unwrap();
    let s = g.sigmoid(wx).unwrap();
    let loss = g.sum(s).unwrap();
    g.backward(loss).unwrap();
    assert_eq!(g.grad(w).unwrap(), &[0.25]);
}

#[test]
fn backward_contract_errors() {
    let mut g = Graph::<f64>::new();
    let x = g.variable(Tensor::new(&[2], vec![1.0, 2.0]).unwrap());
    let y = g.scale(x, 3.0).unwrap();
    assert!(matches!(g.backward(y), Err(Error::Contract(_))));
    let loss = g.sum(y).unwrap();
    g.backward(loss).unwrap();
    assert!(matches!(g.backward(loss), Err(Error::Contract(_))));
    g.reset_grads();
    g.backward(loss).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[3.0, 3.0]);
}

#[test]
fn shared_subexpression_accumulates_paths() {
    // loss = sum(s * s + s), s = sigmoid(x): dloss/dx = (2s + 1) s (1 - s)
    let mut g = Graph::<f64>::new();
    let xv = vec![-0.7, 0.2, 1.3];
    let x = g.variable(Tensor::new(&[3], xv.clone()).unwrap());
    let s = g.sigmoid(x).unwrap();
    let ss = g.mul(s, s).unwrap();
    let t = g.add(ss, s).unwrap();
    let loss = g.sum(t).unwrap();
    g.backward(loss).unwrap();
    let f = |p: &[f64]| p.iter().map(|&v| { let s = 1.0 / (1.0 + (-v as f64).exp()); s * s + s }).sum::<f64>();
    for i in 0..3 {
        let numeric = oce_autograd::check::central_difference(f, &xv, i, 1e-5);
        assert!((g.grad(x).unwrap()[i] - numeric).abs() < 1e-8);
    }
}

#[test]
fn non_finite_results_are_errors() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::new(&[2], vec![0.0, 1.0]).unwrap());
    assert!(matches!(g.log(x), Err(Error::NonFinite { op: "log" })));
    let z = g.constant(Tensor::zeros(&[2]));
    assert!(matches!(g.div(x, z), Err(Error::NonFinite { .. })));
}

#[test]
fn broadcast_and_layout_errors() {
    let mut g = Graph::<f64>::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[3, 2]));
    assert!(matches!(g.add(a, b), Err(Error::Dimension { op: "add", .. })));
    assert!(g.reshape(a, &[4]).is_err());
    assert!(g.narrow(a, 1, 2, 2).is_err());
    assert!(g.matmul(a, a).is_err());
    assert!(g.concat(&[a, b], 0).is_err());
}

#[test]
fn bilinear_upsampling_reference_values() {
    // half-pixel centers: a 2-wide row [0, 1] resized to 4 is [0, .25, .75, 1]
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::new(&[1, 1, 1, 2], vec![0.0, 1.0]).unwrap());
    let y = g.upsample_bilinear(x, 1, 4).unwrap();
    assert_eq!(g.value(y).data(), &[0.0, 0.25, 0.75, 1.0]);
}

#[test]
fn maxpool_picks_window_maxima() {
    let mut g = Graph::<f64>::new();
    let x = g.variable(Tensor::from_fn(&[1, 1, 4, 4], |i| ((i * 7) % 16) as f64));
    let y = g.maxpool2d(x, 2).unwrap();
    assert_eq!(g.shape(y), &[1, 1, 2, 2]);
    let loss = g.sum(y).unwrap();
    g.backward(loss).unwrap();
    let grad = g.grad(x).unwrap();
    assert_eq!(grad.iter().sum::<f64>(), 4.0);
    for (i, &gv) in grad.iter().enumerate() {
        if gv == 1.0 {
            assert!(g.value(y).data().contains(&g.value(x).data()[i]));
        }
    }
}
