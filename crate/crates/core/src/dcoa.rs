//! Dynamic orientation-aware convolution.
//!
//! Each of `n` plain kernels `K_i` is modulated elementwise by a normalized
//! Gabor kernel `BN(G(theta_i))`; an attention net maps the input to weights
//! `w_i` (softmax with temperature) and the per-sample kernel is
//! `sum_i w_i (K_i * BN(G(theta_i)))`.

use oce_autograd::{Result, Scalar, Tensor, Var};

use crate::gabor::{gabor_bank, orientations, standardize, OrientationSpacing};
use crate::nn::{pooled_vector, BatchNorm2d, Builder, Linear, ParamId, Session, BN_EPS};

pub const ATTENTION_REDUCTION: usize = 4;

#[derive(Debug, Clone)]
pub struct DcoaConv {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub thetas: Vec<f64>,
    /// Raw Gabor kernels, `(n, k, k)`.
    pub gabor: Tensor<f64>,
    /// Per-orientation standardized Gabor kernels, `(n, k, k)`.
    pub standardized: Tensor<f64>,
    /// `K_i`, `(n, out, in, k, k)`.
    pub plain: ParamId,
    pub kernel_gamma: ParamId,
    pub kernel_beta: ParamId,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl DcoaConv {
    pub fn new<T: Scalar>(
        b: &mut Builder<'_, T>,
        name: &str,
        cin: usize,
        cout: usize,
        num_orientations: usize,
        spacing: OrientationSpacing,
    ) -> crate::Result<Self> {
        let k = 3;
        let thetas = orientations(num_orientations, spacing)?;
        let gabor = gabor_bank(&thetas, k)?;
        let std: Vec<f64> = gabor.data().chunks(k * k).flat_map(|g| standardize(g, BN_EPS)).collect();
        let standardized = Tensor::new(gabor.shape(), std).expect("same extent as the bank");
        let n = num_orientations;
        let hidden = (cin / ATTENTION_REDUCTION).max(1);
        let mut b = b.scope(name);
        Ok(DcoaConv {
            in_channels: cin,
            out_channels: cout,
            kernel: k,
            thetas,
            gabor,
            standardized,
            plain: b.he_normal("plain", &[n, cout, cin, k, k], cin * k * k),
            kernel_gamma: b.constant("kernel_gamma", &[n], 1.0),
            kernel_beta: b.constant("kernel_beta", &[n], 0.0),
            fc1: Linear::new(&mut b, "fc1", cin, hidden),
            fc2: Linear::new(&mut b, "fc2", hidden, n),
        })
    }

    pub fn num_orientations(&self) -> usize {
        self.thetas.len()
    }

    /// `BN(G(theta_i))` for every orientation, `(n, k, k)`.
    pub fn modulation<T: Scalar>(&self, s: &mut Session<'_, T>) -> Result<Var> {
        let n = self.num_orientations();
        let g = s.input(self.standardized.cast());
        let gamma = s.param(self.kernel_gamma);
        let gamma = s.reshape(gamma, &[n, 1, 1])?;
        let beta = s.param(self.kernel_beta);
        let beta = s.reshape(beta, &[n, 1, 1])?;
        let scaled = s.mul(g, gamma)?;
        s.add(scaled, beta)
    }

    /// `K_i * modulation_i` flattened to `(n, out*in*k*k)`.
    pub fn composite<T: Scalar>(&self, s: &mut Session<'_, T>, modulation: Var) -> Result<Var> {
        let (n, k) = (self.num_orientations(), self.kernel);
        let m = s.reshape(modulation, &[n, 1, 1, k, k])?;
        let plain = s.param(self.plain);
        let c = s.mul(plain, m)?;
        s.reshape(c, &[n, self.out_channels * self.in_channels * k * k])
    }

    /// Orientation weights `(N, n)`; rows sum to one.
    pub fn attention<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let p = pooled_vector(s, x)?;
        let h = self.fc1.forward(s, p)?;
        let h = s.relu(h)?;
        let logits = self.fc2.forward(s, h)?;
        let inv_tau = T::from_f64_lossy(1.0 / s.temperature);
        let logits = s.scale(logits, inv_tau)?;
        s.softmax(logits, 1)
    }

    /// Per-sample kernels `(N, out, in, k, k)` from weights `(N, n)`.
    pub fn aggregate<T: Scalar>(&self, s: &mut Session<'_, T>, weights: Var, composite: Var) -> Result<Var> {
        let n = s.shape(weights)[0];
        let k = self.kernel;
        let agg = s.matmul(weights, composite)?;
        s.reshape(agg, &[n, self.out_channels, self.in_channels, k, k])
    }

    /// Convolution with caller-supplied orientation weights.
    pub fn forward_with_weights<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var, weights: Var) -> Result<Var> {
        let m = self.modulation(s)?;
        let c = self.composite(s, m)?;
        let kernels = self.aggregate(s, weights, c)?;
        s.conv2d(x, kernels, 1, self.kernel / 2)
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let w = self.attention(s, x)?;
        self.forward_with_weights(s, x, w)
    }
}

/// `ReLU(BN(DCOA(x)))`.
#[derive(Debug, Clone)]
pub struct DcoaBlock {
    pub conv: DcoaConv,
    pub bn: BatchNorm2d,
}

impl DcoaBlock {
    pub fn new<T: Scalar>(
        b: &mut Builder<'_, T>,
        name: &str,
        cin: usize,
        cout: usize,
        num_orientations: usize,
        spacing: OrientationSpacing,
    ) -> crate::Result<Self> {
        let mut b = b.scope(name);
        Ok(DcoaBlock {
            conv: DcoaConv::new(&mut b, "dcoa", cin, cout, num_orientations, spacing)?,
            bn: BatchNorm2d::new(&mut b, "bn", cout),
        })
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let y = self.conv.forward(s, x)?;
        let y = self.bn.forward(s, y)?;
        s.relu(y)
    }
}
