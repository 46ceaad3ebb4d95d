//! Parameter storage, forward sessions and the basic layers.

use std::collections::HashMap;
use std::ops::{Deref, DerefMut};

use oce_autograd::{BatchStats, Graph, Result, Scalar, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Trainable,
    /// Non-trainable state such as batch-norm running statistics.
    Buffer,
}

#[derive(Debug, Clone)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Option<Vec<T>>,
    pub kind: ParamKind,
}

/// Named tensors in insertion order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    index: HashMap<String, ParamId>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new(), index: HashMap::new() }
    }

    pub fn add(&mut self, name: &str, value: Tensor<T>, kind: ParamKind) -> ParamId {
        assert!(!self.index.contains_key(name), "duplicate parameter name {name}");
        let id = ParamId(self.params.len());
        self.params.push(Param { name: name.to_string(), value, grad: None, kind });
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn by_name(&self, name: &str) -> Option<&Param<T>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.id(name).map(|id| &mut self.params[id.0])
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    /// Number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.params.iter().filter(|p| p.kind == ParamKind::Trainable).map(|p| p.value.numel()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    fn accumulate(&mut self, id: ParamId, g: &[T]) {
        let p = &mut self.params[id.0];
        match &mut p.grad {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a = *a + b),
            None => p.grad = Some(g.to_vec()),
        }
    }

    /// Same names and kinds with every value converted to `U`.
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param { name: p.name.clone(), value: p.value.cast(), grad: None, kind: p.kind })
                .collect(),
            index: self.index.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics are updated.
    Train,
    /// Running statistics.
    Eval,
}

/// One forward (and optionally backward) pass over a parameter store.
///
/// Parameters are bound to graph leaves on first use, so a module that is
/// never reached adds nothing to the tape.
pub struct Session<'s, T: Scalar> {
    graph: Graph<T>,
    store: &'s mut ParamStore<T>,
    mode: Mode,
    grads: bool,
    bound: Vec<Option<Var>>,
    /// Softmax temperature of the orientation attention.
    pub temperature: f64,
}

impl<'s, T: Scalar> Session<'s, T> {
    pub fn new(store: &'s mut ParamStore<T>, mode: Mode) -> Self {
        let n = store.len();
        Session {
            graph: Graph::new(),
            store,
            mode,
            grads: mode == Mode::Train,
            bound: vec![None; n],
            temperature: 1.0,
        }
    }

    /// Overrides whether trainable parameters are recorded as variables.
    pub fn with_grads(mut self, on: bool) -> Self {
        self.grads = on;
        self
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn is_train(&self) -> bool {
        self.mode == Mode::Train
    }

    pub fn store(&self) -> &ParamStore<T> {
        self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        self.store
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let p = self.store.get(id);
        let t = p.value.clone();
        let v = if self.grads && p.kind == ParamKind::Trainable {
            self.graph.variable(t)
        } else {
            self.graph.constant(t)
        };
        self.bound[id.0] = Some(v);
        v
    }

    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.graph.constant(t)
    }

    /// Reverse pass; gradients of bound trainable parameters are added to
    /// the store's gradient slots.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.graph.backward(loss)?;
        for (i, v) in self.bound.iter().enumerate() {
            let Some(v) = v else { continue };
            if let Some(g) = self.graph.grad(*v) {
                self.store.accumulate(ParamId(i), g);
            }
        }
        Ok(())
    }

    pub fn into_graph(self) -> Graph<T> {
        self.graph
    }
}

impl<T: Scalar> Deref for Session<'_, T> {
    type Target = Graph<T>;
    fn deref(&self) -> &Graph<T> {
        &self.graph
    }
}

impl<T: Scalar> DerefMut for Session<'_, T> {
    fn deref_mut(&mut self) -> &mut Graph<T> {
        &mut self.graph
    }
}

/// Registers parameters under a dotted name prefix.
pub struct Builder<'a, T> {
    store: &'a mut ParamStore<T>,
    rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a, T: Scalar> Builder<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, rng: &'a mut ChaCha8Rng) -> Self {
        Builder { store, rng, prefix: String::new() }
    }

    pub fn scope(&mut self, name: &str) -> Builder<'_, T> {
        let prefix = if self.prefix.is_empty() { name.to_string() } else { format!("{}.{name}", self.prefix) };
        Builder { store: self.store, rng: self.rng, prefix }
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    /// Normal with standard deviation `sqrt(2 / fan_in)`.
    pub fn he_normal(&mut self, name: &str, shape: &[usize], fan_in: usize) -> ParamId {
        let std = (2.0 / fan_in.max(1) as f64).sqrt();
        let rng = &mut *self.rng;
        let t = Tensor::from_fn(shape, |_| T::from_f64_lossy(std * rng.sample::<f64, _>(StandardNormal)));
        self.store.add(&self.full_name(name), t, ParamKind::Trainable)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> ParamId {
        let t = Tensor::full(shape, T::from_f64_lossy(value));
        self.store.add(&self.full_name(name), t, ParamKind::Trainable)
    }

    pub fn buffer(&mut self, name: &str, shape: &[usize], value: f64) -> ParamId {
        let t = Tensor::full(shape, T::from_f64_lossy(value));
        self.store.add(&self.full_name(name), t, ParamKind::Buffer)
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl Conv2d {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, name: &str, cin: usize, cout: usize, k: usize, bias: bool) -> Self {
        let mut b = b.scope(name);
        let weight = b.he_normal("weight", &[cout, cin, k, k], cin * k * k);
        let bias = bias.then(|| b.constant("bias", &[cout], 0.0));
        Conv2d { weight, bias, in_channels: cin, out_channels: cout, kernel: k }
    }

    /// "Same" convolution at stride 1.
    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let w = s.param(self.weight);
        let y = s.conv2d(x, w, 1, self.kernel / 2)?;
        match self.bias {
            Some(b) => {
                let b = s.param(b);
                let b = s.reshape(b, &[1, self.out_channels, 1, 1])?;
                s.add(y, b)
            }
            None => Ok(y),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, name: &str, fan_in: usize, fan_out: usize) -> Self {
        let mut b = b.scope(name);
        let weight = b.he_normal("weight", &[fan_out, fan_in], fan_in);
        let bias = b.constant("bias", &[fan_out], 0.0);
        Linear { weight, bias }
    }

    /// `(N, in)` to `(N, out)`.
    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let w = s.param(self.weight);
        let b = s.param(self.bias);
        let y = s.matmul_ex(x, w, false, true, T::one())?;
        s.add(y, b)
    }
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm2d {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, name: &str, channels: usize) -> Self {
        let mut b = b.scope(name);
        BatchNorm2d {
            gamma: b.constant("gamma", &[channels], 1.0),
            beta: b.constant("beta", &[channels], 0.0),
            running_mean: b.buffer("running_mean", &[channels], 0.0),
            running_var: b.buffer("running_var", &[channels], 1.0),
        }
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let gamma = s.param(self.gamma);
        let beta = s.param(self.beta);
        let eps = T::from_f64_lossy(BN_EPS);
        if s.is_train() {
            let per_channel = {
                let sh = s.shape(x);
                sh[0] * sh[2] * sh[3]
            };
            let (y, moments) = s.batch_norm2d(x, gamma, beta, BatchStats::Batch, eps)?;
            if let Some((mean, var)) = moments {
                let m = T::from_f64_lossy(BN_MOMENTUM);
                let unbias = if per_channel > 1 {
                    T::from_f64_lossy(per_channel as f64 / (per_channel - 1) as f64)
                } else {
                    T::one()
                };
                let store = s.store_mut();
                let rm = store.get_mut(self.running_mean).value.data_mut();
                for (r, &b) in rm.iter_mut().zip(&mean) {
                    *r = (T::one() - m) * *r + m * b;
                }
                let rv = store.get_mut(self.running_var).value.data_mut();
                for (r, &b) in rv.iter_mut().zip(&var) {
                    *r = (T::one() - m) * *r + m * b * unbias;
                }
            }
            Ok(y)
        } else {
            let mean = s.store().value(self.running_mean).data().to_vec();
            let var = s.store().value(self.running_var).data().to_vec();
            let (y, _) = s.batch_norm2d(x, gamma, beta, BatchStats::Fixed { mean: &mean, var: &var }, eps)?;
            Ok(y)
        }
    }
}

/// 3x3 convolution, batch norm, ReLU.
#[derive(Debug, Clone)]
pub struct ConvBnRelu {
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
}

impl ConvBnRelu {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, name: &str, cin: usize, cout: usize) -> Self {
        let mut b = b.scope(name);
        // the following batch norm makes a conv bias redundant
        ConvBnRelu { conv: Conv2d::new(&mut b, "conv", cin, cout, 3, false), bn: BatchNorm2d::new(&mut b, "bn", cout) }
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let y = self.conv.forward(s, x)?;
        let y = self.bn.forward(s, y)?;
        s.relu(y)
    }
}

/// Global average pool flattened to `(N, C)`.
pub fn pooled_vector<T: Scalar>(s: &mut Session<'_, T>, x: Var) -> Result<Var> {
    let (n, c) = (s.shape(x)[0], s.shape(x)[1]);
    let p = s.global_avg_pool(x)?;
    s.reshape(p, &[n, c])
}

/// `(N, C, H, W)` to `(N, C, H*W)`.
pub fn flatten_spatial<T: Scalar>(s: &mut Session<'_, T>, x: Var) -> Result<Var> {
    let sh = s.shape(x).to_vec();
    s.reshape(x, &[sh[0], sh[1], sh[2] * sh[3]])
}

/// A seeded generator for parameter initialization.
pub fn init_rng(seed: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(seed)
}
