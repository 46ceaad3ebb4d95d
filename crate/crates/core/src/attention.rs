//! Channel, spatial and global attention, and the two fusion modules built
//! from them.

use oce_autograd::{Error, Result, Scalar, Var};

use crate::nn::{flatten_spatial, pooled_vector, Builder, Conv2d, Linear, Session};

pub const SE_REDUCTION: usize = 16;

/// Squeeze-and-excitation channel gate.
#[derive(Debug, Clone)]
pub struct SeBlock {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl SeBlock {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, name: &str, channels: usize) -> Self {
        let hidden = (channels / SE_REDUCTION).max(1);
        let mut b = b.scope(name);
        SeBlock { fc1: Linear::new(&mut b, "fc1", channels, hidden), fc2: Linear::new(&mut b, "fc2", hidden, channels) }
    }

    /// Per-channel gates `(N, C)` in (0, 1).
    pub fn gates<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let p = pooled_vector(s, x)?;
        let h = self.fc1.forward(s, p)?;
        let h = s.relu(h)?;
        let g = self.fc2.forward(s, h)?;
        s.sigmoid(g)
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let (n, c) = (s.shape(x)[0], s.shape(x)[1]);
        let g = self.gates(s, x)?;
        let g = s.reshape(g, &[n, c, 1, 1])?;
        s.mul(x, g)
    }
}

/// Spatial attention: `x * sigmoid(conv(relu(conv(x))))` with a one-channel
/// map.
#[derive(Debug, Clone)]
pub struct SpaBlock {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
}

impl SpaBlock {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, name: &str, channels: usize) -> Self {
        let mut b = b.scope(name);
        SpaBlock {
            conv1: Conv2d::new(&mut b, "conv1", channels, channels, 3, true),
            conv2: Conv2d::new(&mut b, "conv2", channels, 1, 3, true),
        }
    }

    /// The `(N, 1, H, W)` attention map.
    pub fn map<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let h = self.conv1.forward(s, x)?;
        let h = s.relu(h)?;
        let m = self.conv2.forward(s, h)?;
        s.sigmoid(m)
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let m = self.map(s, x)?;
        s.mul(x, m)
    }
}

/// Single-head scaled dot-product self-attention over spatial positions,
/// with a residual connection.
#[derive(Debug, Clone)]
pub struct SelfAttention {
    pub query: Conv2d,
    pub key: Conv2d,
    pub value: Conv2d,
    pub dim: usize,
}

impl SelfAttention {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, name: &str, channels: usize) -> Self {
        Self::with_dim(b, name, channels, (channels / 8).max(1))
    }

    pub fn with_dim<T: Scalar>(b: &mut Builder<'_, T>, name: &str, channels: usize, dim: usize) -> Self {
        let mut b = b.scope(name);
        SelfAttention {
            query: Conv2d::new(&mut b, "query", channels, dim, 1, true),
            key: Conv2d::new(&mut b, "key", channels, dim, 1, true),
            value: Conv2d::new(&mut b, "value", channels, channels, 1, true),
            dim,
        }
    }

    /// Row-stochastic attention `(N, HW, HW)`; row `i` attends over `j`.
    pub fn attention<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let q = self.query.forward(s, x)?;
        let q = flatten_spatial(s, q)?;
        let k = self.key.forward(s, x)?;
        let k = flatten_spatial(s, k)?;
        let scale = T::from_f64_lossy(1.0 / (self.dim as f64).sqrt());
        let scores = s.matmul_ex(q, k, true, false, scale)?;
        s.softmax(scores, 2)
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let a = self.attention(s, x)?;
        let v = self.value.forward(s, x)?;
        let v = flatten_spatial(s, v)?;
        apply_attention(s, a, v, x)
    }
}

/// `x + reshape(V A^T)` for values `(N, C, HW)` and attention `(N, HW, HW)`.
pub fn apply_attention<T: Scalar>(s: &mut Session<'_, T>, attention: Var, values: Var, x: Var) -> Result<Var> {
    let shape = s.shape(x).to_vec();
    let y = s.matmul_ex(values, attention, false, true, T::one())?;
    let y = s.reshape(y, &shape)?;
    s.add(x, y)
}

/// Overrides for exercising degenerate fusion paths.
#[derive(Debug, Clone, Copy, Default)]
pub struct SafmHooks {
    /// Replaces the learned `(N, C)` selection weights of the two branches.
    pub selection: Option<(Var, Var)>,
    pub bypass_spa: bool,
}

/// Selective fusion of plain and orientation features.
#[derive(Debug, Clone)]
pub struct SafmBlock {
    pub squeeze: Linear,
    pub select_plain: Linear,
    pub select_oriented: Linear,
    pub spa_plain: SpaBlock,
    pub spa_oriented: SpaBlock,
    pub fuse: Conv2d,
    pub channels: usize,
}

impl SafmBlock {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, name: &str, channels: usize) -> Self {
        let bottleneck = (channels / 4).max(8);
        let mut b = b.scope(name);
        SafmBlock {
            squeeze: Linear::new(&mut b, "squeeze", channels, bottleneck),
            select_plain: Linear::new(&mut b, "select_plain", bottleneck, channels),
            select_oriented: Linear::new(&mut b, "select_oriented", bottleneck, channels),
            spa_plain: SpaBlock::new(&mut b, "spa_plain", channels),
            spa_oriented: SpaBlock::new(&mut b, "spa_oriented", channels),
            fuse: Conv2d::new(&mut b, "fuse", channels, channels, 1, true),
            channels,
        }
    }

    /// Branch weights `(N, 2, C)`; the two entries per channel sum to one.
    pub fn selection<T: Scalar>(&self, s: &mut Session<'_, T>, plain: Var, oriented: Var) -> Result<Var> {
        let (n, c) = (s.shape(plain)[0], s.shape(plain)[1]);
        let u = s.add(plain, oriented)?;
        let z = pooled_vector(s, u)?;
        let z = self.squeeze.forward(s, z)?;
        let z = s.relu(z)?;
        let a = self.select_plain.forward(s, z)?;
        let a = s.reshape(a, &[n, 1, c])?;
        let b = self.select_oriented.forward(s, z)?;
        let b = s.reshape(b, &[n, 1, c])?;
        let logits = s.concat(&[a, b], 1)?;
        s.softmax(logits, 1)
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, plain: Var, oriented: Var) -> Result<Var> {
        self.forward_with(s, plain, oriented, SafmHooks::default())
    }

    pub fn forward_with<T: Scalar>(
        &self,
        s: &mut Session<'_, T>,
        plain: Var,
        oriented: Var,
        hooks: SafmHooks,
    ) -> Result<Var> {
        if s.shape(plain) != s.shape(oriented) {
            return Err(Error::Dimension {
                op: "safm",
                msg: format!("{:?} vs {:?}", s.shape(plain), s.shape(oriented)),
            });
        }
        let (n, c) = (s.shape(plain)[0], s.shape(plain)[1]);
        let (wa, wb) = match hooks.selection {
            Some(pair) => pair,
            None => {
                let sel = self.selection(s, plain, oriented)?;
                (s.narrow(sel, 1, 0, 1)?, s.narrow(sel, 1, 1, 1)?)
            }
        };
        let wa = s.reshape(wa, &[n, c, 1, 1])?;
        let wb = s.reshape(wb, &[n, c, 1, 1])?;
        let ya = s.mul(plain, wa)?;
        let yb = s.mul(oriented, wb)?;
        let (ya, yb) = if hooks.bypass_spa {
            (ya, yb)
        } else {
            (self.spa_plain.forward(s, ya)?, self.spa_oriented.forward(s, yb)?)
        };
        let y = s.add(ya, yb)?;
        self.fuse.forward(s, y)
    }
}

/// Three-path attention gate over a skip connection.
#[derive(Debug, Clone)]
pub struct GlfmBlock {
    pub se_low: SeBlock,
    pub spa_low: SpaBlock,
    pub se_high: SeBlock,
    pub spa_high: SpaBlock,
    pub se_global: SeBlock,
    pub attention: SelfAttention,
    pub fuse: Conv2d,
}

impl GlfmBlock {
    /// `low` and `high` carry `channels` each; the output carries `out`.
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, name: &str, channels: usize, out: usize) -> Self {
        let mut b = b.scope(name);
        GlfmBlock {
            se_low: SeBlock::new(&mut b, "se_low", channels),
            spa_low: SpaBlock::new(&mut b, "spa_low", channels),
            se_high: SeBlock::new(&mut b, "se_high", channels),
            spa_high: SpaBlock::new(&mut b, "spa_high", channels),
            se_global: SeBlock::new(&mut b, "se_global", 2 * channels),
            attention: SelfAttention::new(&mut b, "attention", 2 * channels),
            fuse: Conv2d::new(&mut b, "fuse", 4 * channels, out, 1, true),
        }
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, low: Var, high: Var) -> Result<Var> {
        if s.shape(low) != s.shape(high) {
            return Err(Error::Dimension {
                op: "glfm",
                msg: format!("low {:?} vs high {:?}", s.shape(low), s.shape(high)),
            });
        }
        let l = self.se_low.forward(s, low)?;
        let l = self.spa_low.forward(s, l)?;
        let h = self.se_high.forward(s, high)?;
        let h = self.spa_high.forward(s, h)?;
        let g = s.concat_channels(&[high, low])?;
        let g = self.se_global.forward(s, g)?;
        let g = self.attention.forward(s, g)?;
        let cat = s.concat_channels(&[l, h, g])?;
        self.fuse.forward(s, cat)
    }
}
