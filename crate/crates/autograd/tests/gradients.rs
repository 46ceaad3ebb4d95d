//! Analytic gradients against central finite differences (64-bit).

use oce_autograd::check::{central_difference, relative_error};
use oce_autograd::{BatchStats, Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-4;
const TOL: f64 = 1e-5;
const FLOOR: f64 = 1e-3;
const TRIALS: usize = 100;

type Build<'a> = &'a dyn Fn(&mut Graph<f64>, &[Var]) -> Var;

struct Probe {
    graph: Graph<f64>,
    vars: Vec<Var>,
    out: Var,
    loss: Var,
}

fn evaluate(build: Build, vals: &[Tensor<f64>], r: Option<&Tensor<f64>>, grads: bool) -> Probe {
    let mut g = Graph::new();
    let vars: Vec<Var> =
        vals.iter().map(|t| if grads { g.variable(t.clone()) } else { g.constant(t.clone()) }).collect();
    let out = build(&mut g, &vars);
    let rt = r.cloned().unwrap_or_else(|| Tensor::ones(g.shape(out)));
    let rv = g.constant(rt);
    let prod = g.mul(out, rv).unwrap();
    let loss = g.sum(prod).unwrap();
    Probe { graph: g, vars, out, loss }
}

/// `loss = sum(op(inputs) * r)` for a random `r`; largest relative error
/// over every input element.
fn max_error(build: Build, inputs: &[Tensor<f64>], rng: &mut ChaCha8Rng) -> f64 {
    let shape = {
        let p = evaluate(build, inputs, None, false);
        p.graph.shape(p.out).to_vec()
    };
    let r = Tensor::from_fn(&shape, |_| rng.random_range(-1.0..1.0));
    let mut p = evaluate(build, inputs, Some(&r), true);
    p.graph.backward(p.loss).unwrap();
    let mut worst: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = p.graph.grad(p.vars[k]).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; input.numel()]);
        for i in 0..input.numel() {
            let f = |x: &[f64]| {
                let mut vals = inputs.to_vec();
                vals[k] = Tensor::new(input.shape(), x.to_vec()).unwrap();
                let q = evaluate(build, &vals, Some(&r), false);
                q.graph.value(q.loss).data()[0]
            };
            let numeric = central_difference(f, input.data(), i, H);
            worst = worst.max(relative_error(analytic[i], numeric, FLOOR));
        }
    }
    worst
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Values bounded away from zero (for kinks and poles).
fn rand_away(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(lo..1.0);
        if rng.random_bool(0.5) { m } else { -m }
    })
}

fn small_shape(rng: &mut ChaCha8Rng, rank: usize) -> Vec<usize> {
    (0..rank).map(|_| rng.random_range(1..4)).collect()
}

fn run(name: &str, seed: u64, mut case: impl FnMut(&mut ChaCha8Rng) -> f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..TRIALS {
        worst = worst.max(case(&mut rng));
    }
    assert!(worst < TOL, "{name}: max relative error {worst:e}");
}

#[test]
fn elementwise_binary_with_broadcast() {
    run("binary", 10, |rng| {
        let shape = small_shape(rng, 3);
        let mut other = shape.clone();
        for d in other.iter_mut() {
            if rng.random_bool(0.4) {
                *d = 1;
            }
        }
        let a = rand_tensor(rng, &shape);
        let b = rand_away(rng, &other, 0.3);
        let which = rng.random_range(0..4);
        max_error(
            &move |g, v| match which {
                0 => g.add(v[0], v[1]).unwrap(),
                1 => g.sub(v[1], v[0]).unwrap(),
                2 => g.mul(v[0], v[1]).unwrap(),
                _ => g.div(v[0], v[1]).unwrap(),
            },
            &[a, b],
            rng,
        )
    });
}

#[test]
fn elementwise_unary() {
    run("unary", 11, |rng| {
        let shape = small_shape(rng, 2);
        let which = rng.random_range(0..7);
        let x = match which {
            4 => Tensor::from_fn(&shape, |_| rng.random_range(0.2..2.0)),
            _ => rand_away(rng, &shape, 0.01),
        };
        max_error(
            &move |g, v| match which {
                0 => g.relu(v[0]).unwrap(),
                1 => g.sigmoid(v[0]).unwrap(),
                2 => g.exp(v[0]).unwrap(),
                3 => g.tanh(v[0]).unwrap(),
                4 => g.log(v[0]).unwrap(),
                5 => g.scale(v[0], -1.7).unwrap(),
                _ => g.add_scalar(v[0], 0.3).unwrap(),
            },
            &[x],
            rng,
        )
    });
}

#[test]
fn softmax_family() {
    run("softmax", 12, |rng| {
        let shape = small_shape(rng, 3);
        let axis = rng.random_range(0..3);
        let log = rng.random_bool(0.5);
        let x = Tensor::from_fn(&shape, |_| rng.random_range(-2.0..2.0));
        max_error(
            &move |g, v| if log { g.log_softmax(v[0], axis).unwrap() } else { g.softmax(v[0], axis).unwrap() },
            &[x],
            rng,
        )
    });
}

#[test]
fn reductions() {
    run("reduce", 13, |rng| {
        let shape = small_shape(rng, 4);
        let x = rand_tensor(rng, &shape);
        let which = rng.random_range(0..4);
        max_error(
            &move |g, v| match which {
                0 => g.sum_axes(v[0], &[1, 3], true).unwrap(),
                1 => g.mean_axes(v[0], &[0, 2], false).unwrap(),
                2 => g.global_avg_pool(v[0]).unwrap(),
                _ => g.mean(v[0]).unwrap(),
            },
            &[x],
            rng,
        )
    });
}

#[test]
fn matmul_variants() {
    run("matmul", 14, |rng| {
        let (m, k, n, b) = (rng.random_range(1..4), rng.random_range(1..4), rng.random_range(1..4), rng.random_range(1..3));
        let (ta, tb) = (rng.random_bool(0.5), rng.random_bool(0.5));
        let batched_a = rng.random_bool(0.7);
        let batched_b = !batched_a || rng.random_bool(0.5);
        let sa = if ta { vec![k, m] } else { vec![m, k] };
        let sb = if tb { vec![n, k] } else { vec![k, n] };
        let wrap = |s: Vec<usize>, on: bool| if on { [vec![b], s].concat() } else { s };
        let a = rand_tensor(rng, &wrap(sa, batched_a));
        let bt = rand_tensor(rng, &wrap(sb, batched_b));
        max_error(&move |g, v| g.matmul_ex(v[0], v[1], ta, tb, 0.7).unwrap(), &[a, bt], rng)
    });
}

#[test]
fn layout_ops() {
    run("layout", 15, |rng| {
        let shape = small_shape(rng, 3);
        let x = rand_tensor(rng, &shape);
        let mid = rng.random_range(1..3);
        let y = rand_tensor(rng, &[shape[0], mid, shape[2]]);
        let which = rng.random_range(0..4);
        let s2 = shape.clone();
        max_error(
            &move |g, v| match which {
                0 => g.transpose(v[0], 0, 2).unwrap(),
                1 => g.reshape(v[0], &[s2.iter().product()]).unwrap(),
                2 => g.concat(&[v[0], v[1], v[0]], 1).unwrap(),
                _ => g.narrow(v[0], 2, s2[2] - 1, 1).unwrap(),
            },
            &[x, y],
            rng,
        )
    });
}

#[test]
fn convolution() {
    run("conv2d", 16, |rng| {
        let (n, c, o) = (rng.random_range(1..3), rng.random_range(1..3), rng.random_range(1..3));
        let k = [1, 3][rng.random_range(0..2)];
        let (h, w) = (rng.random_range(k..6), rng.random_range(k..6));
        let stride = rng.random_range(1..3);
        let pad = rng.random_range(0..k / 2 + 1);
        let per_sample = rng.random_bool(0.3);
        let x = rand_tensor(rng, &[n, c, h, w]);
        let wt = if per_sample { rand_tensor(rng, &[n, o, c, k, k]) } else { rand_tensor(rng, &[o, c, k, k]) };
        max_error(&move |g, v| g.conv2d(v[0], v[1], stride, pad).unwrap(), &[x, wt], rng)
    });
}

#[test]
fn batch_norm_both_modes() {
    run("batch_norm2d", 17, |rng| {
        let (n, c) = (rng.random_range(1..3), rng.random_range(1..3));
        let (h, w) = (rng.random_range(1..4), rng.random_range(2..4));
        let x = rand_tensor(rng, &[n, c, h, w]);
        let gamma = rand_tensor(rng, &[c]);
        let beta = rand_tensor(rng, &[c]);
        let fixed = rng.random_bool(0.3);
        let mean: Vec<f64> = (0..c).map(|_| rng.random_range(-0.5..0.5)).collect();
        let var: Vec<f64> = (0..c).map(|_| rng.random_range(0.5..2.0)).collect();
        max_error(
            &move |g, v| {
                let stats = if fixed { BatchStats::Fixed { mean: &mean, var: &var } } else { BatchStats::Batch };
                g.batch_norm2d(v[0], v[1], v[2], stats, 1e-5).unwrap().0
            },
            &[x, gamma, beta],
            rng,
        )
    });
}

#[test]
fn pooling_and_resampling() {
    run("pool", 18, |rng| {
        let (n, c) = (rng.random_range(1..3), rng.random_range(1..3));
        let (h, w) = (2 * rng.random_range(1..3), 2 * rng.random_range(1..3));
        // distinct values keep the max away from ties
        let mut vals: Vec<f64> = (0..n * c * h * w).map(|i| i as f64 * 0.1).collect();
        for i in (1..vals.len()).rev() {
            vals.swap(i, rng.random_range(0..=i));
        }
        let x = Tensor::new(&[n, c, h, w], vals).unwrap();
        let up = rng.random_bool(0.5);
        let (oh, ow) = (rng.random_range(1..7), rng.random_range(1..7));
        max_error(
            &move |g, v| if up { g.upsample_bilinear(v[0], oh, ow).unwrap() } else { g.maxpool2d(v[0], 2).unwrap() },
            &[x],
            rng,
        )
    });
}

/// Every op chained into one graph, with a shared sub-expression.
#[test]
fn random_composite() {
    run("composite", 19, |rng| {
        let x = rand_tensor(rng, &[2, 2, 4, 4]);
        let w = rand_tensor(rng, &[3, 2, 3, 3]);
        let gamma = rand_tensor(rng, &[3]);
        let beta = rand_tensor(rng, &[3]);
        let m = rand_tensor(rng, &[3, 4]);
        max_error(
            &|g, v| {
                let c = g.conv2d(v[0], v[1], 1, 1).unwrap();
                let (bn, _) = g.batch_norm2d(c, v[2], v[3], BatchStats::Batch, 1e-5).unwrap();
                let s = g.sigmoid(bn).unwrap();
                let t = g.tanh(c).unwrap();
                let st = g.mul(s, t).unwrap();
                let r = g.relu(st).unwrap();
                let shared = g.add(r, s).unwrap();
                let p = g.maxpool2d(shared, 2).unwrap();
                let u = g.upsample_bilinear(p, 3, 3).unwrap();
                let gap = g.global_avg_pool(u).unwrap();
                let gate = g.mul(u, gap).unwrap();
                let cat = g.concat_channels(&[gate, u]).unwrap();
                let flat = g.reshape(cat, &[2, 6, 9]).unwrap();
                let tr = g.transpose(flat, 1, 2).unwrap();
                let mm = g.matmul_ex(tr, flat, false, false, 0.5).unwrap();
                let sm = g.softmax(mm, 2).unwrap();
                let half = g.narrow(sm, 1, 0, 4).unwrap();
                let ls = g.log_softmax(half, 1).unwrap();
                let red = g.sum_axes(ls, &[2], false).unwrap();
                let proj = g.matmul_ex(red, v[4], false, true, 1.0).unwrap();
                let bounded = g.tanh(proj).unwrap();
                let e = g.exp(bounded).unwrap();
                let l = g.log(e).unwrap();
                let d = g.div(l, e).unwrap();
                let sub = g.sub(d, bounded).unwrap();
                g.add_scalar(sub, 1.0).unwrap()
            },
            &[x, w, gamma, beta, m],
            rng,
        )
    });
}
