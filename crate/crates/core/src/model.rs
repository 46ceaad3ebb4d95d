//! The encoder/decoder network and its configuration.

use std::fmt;
use std::str::FromStr;

use oce_autograd::{Scalar, Tensor, Var};

use crate::attention::{GlfmBlock, SafmBlock};
use crate::dcoa::DcoaBlock;
use crate::error::{Error, InBlock, Result};
use crate::gabor::OrientationSpacing;
use crate::nn::{init_rng, Builder, Conv2d, ConvBnRelu, Mode, ParamStore, Session};
use crate::nonlocal::{CoreKind, Msfm, MsfmFusion};
use crate::uarm::{Partition, ProbNorm, Uarm};

pub const NUM_CLASSES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FusionMode {
    #[default]
    Safm,
    Conv1x1,
    PlainOnly,
    OrientationOnly,
}

impl FusionMode {
    pub const ALL: [FusionMode; 4] =
        [FusionMode::Safm, FusionMode::Conv1x1, FusionMode::PlainOnly, FusionMode::OrientationOnly];

    pub fn as_str(self) -> &'static str {
        match self {
            FusionMode::Safm => "safm",
            FusionMode::Conv1x1 => "conv1x1",
            FusionMode::PlainOnly => "plain_only",
            FusionMode::OrientationOnly => "orientation_only",
        }
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FusionMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        FusionMode::ALL.into_iter().find(|m| m.as_str() == s).ok_or_else(|| format!("unknown fusion mode `{s}`"))
    }
}

/// How the encoder's orientation features enter each decoder level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PriorMode {
    /// Concatenate and project back with a 1x1 convolution.
    #[default]
    Concat,
    Add,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub levels: usize,
    pub base_channels: usize,
    pub num_orientations: usize,
    pub use_dcoa: bool,
    pub use_safm: bool,
    pub use_glfm: bool,
    pub use_msfm_ocednl: bool,
    pub use_uarm: bool,
    pub fusion_mode: FusionMode,
    pub msfm_core: CoreKind,
    pub msfm_width: usize,
    pub msfm_fusion: MsfmFusion,
    pub orientation_spacing: OrientationSpacing,
    pub orientation_prior: PriorMode,
    pub prob_norm: ProbNorm,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            levels: 3,
            base_channels: 32,
            num_orientations: 8,
            use_dcoa: true,
            use_safm: true,
            use_glfm: true,
            use_msfm_ocednl: true,
            use_uarm: true,
            fusion_mode: FusionMode::Safm,
            msfm_core: CoreKind::OceDnl,
            msfm_width: 32,
            msfm_fusion: MsfmFusion::Residual,
            orientation_spacing: OrientationSpacing::Uniform,
            orientation_prior: PriorMode::Concat,
            prob_norm: ProbNorm::Sigmoid,
        }
    }
}

/// What an encoder level does with its two branches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderFusion {
    PlainOnly,
    OrientationOnly,
    Conv1x1,
    Safm,
}

impl NetworkConfig {
    /// Every optional module switched off: a plain U-shaped network.
    pub fn baseline() -> Self {
        NetworkConfig {
            use_dcoa: false,
            use_safm: false,
            use_glfm: false,
            use_msfm_ocednl: false,
            use_uarm: false,
            fusion_mode: FusionMode::PlainOnly,
            ..Self::default()
        }
    }

    /// Sets a fusion mode together with the module flags it implies.
    pub fn set_fusion_mode(&mut self, mode: FusionMode) {
        self.fusion_mode = mode;
        self.use_dcoa = mode != FusionMode::PlainOnly;
        self.use_safm = mode == FusionMode::Safm;
    }

    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Checks the configuration and resolves the encoder fusion.
    pub fn resolve(&self) -> Result<EncoderFusion> {
        if self.levels < 2 {
            return Err(Error::Config(format!("levels must be >= 2, got {}", self.levels)));
        }
        if self.base_channels < 8 {
            return Err(Error::Config(format!("base_channels must be >= 8, got {}", self.base_channels)));
        }
        if self.num_orientations < 1 {
            return Err(Error::Config("num_orientations must be >= 1".into()));
        }
        if self.msfm_width < 1 {
            return Err(Error::Config("msfm_width must be >= 1".into()));
        }
        match (self.use_dcoa, self.use_safm, self.fusion_mode) {
            (false, true, _) => Err(Error::Config("use_safm requires use_dcoa".into())),
            (false, false, FusionMode::PlainOnly | FusionMode::Safm) => Ok(EncoderFusion::PlainOnly),
            (false, false, m) => Err(Error::Config(format!("fusion_mode = {m} requires use_dcoa"))),
            (true, true, FusionMode::Safm) => Ok(EncoderFusion::Safm),
            (true, true, m) => Err(Error::Config(format!("fusion_mode = {m} conflicts with use_safm"))),
            (true, false, FusionMode::Safm | FusionMode::OrientationOnly) => Ok(EncoderFusion::OrientationOnly),
            (true, false, FusionMode::Conv1x1) => Ok(EncoderFusion::Conv1x1),
            (true, false, FusionMode::PlainOnly) => {
                Err(Error::Config("fusion_mode = plain_only requires use_dcoa = false".into()))
            }
        }
    }
}

#[derive(Debug, Clone)]
enum Fusion {
    Plain,
    Orientation,
    Conv1x1(Conv2d),
    Safm(SafmBlock),
}

#[derive(Debug, Clone)]
struct EncoderLevel {
    basic: Option<ConvBnRelu>,
    dcoa: Option<DcoaBlock>,
    fusion: Fusion,
}

#[derive(Debug, Clone)]
struct DecoderLevel {
    up: ConvBnRelu,
    glfm: Option<GlfmBlock>,
    merge: ConvBnRelu,
    prior: Option<Option<Conv2d>>,
}

/// Modules of the network; parameters live in a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Net {
    encoder: Vec<EncoderLevel>,
    decoder: Vec<DecoderLevel>,
    msfm: Option<Msfm>,
    uarm: Option<Uarm>,
    head: Conv2d,
    has_orientation: bool,
}

/// Result of a forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Outputs {
    /// `(N, 2, H, W)`.
    pub logits: Var,
    pub uarm: Option<Partition>,
}

fn name(prefix: &str, i: usize, block: &str) -> String {
    format!("{prefix}[{i}].{block}")
}

impl Net {
    fn build<T: Scalar>(cfg: &NetworkConfig, b: &mut Builder<'_, T>) -> Result<Self> {
        let fusion = cfg.resolve()?;
        let levels = cfg.levels;
        let mut encoder = Vec::with_capacity(levels);
        for l in 0..levels {
            let cin = if l == 0 { 1 } else { cfg.channels(l - 1) };
            let c = cfg.channels(l);
            let mut b = b.scope(&format!("encoder{l}"));
            let plain = fusion != EncoderFusion::OrientationOnly;
            let oriented = fusion != EncoderFusion::PlainOnly;
            encoder.push(EncoderLevel {
                basic: plain.then(|| ConvBnRelu::new(&mut b, "basic", cin, c)),
                dcoa: if oriented {
                    Some(DcoaBlock::new(&mut b, "dcoa", cin, c, cfg.num_orientations, cfg.orientation_spacing)?)
                } else {
                    None
                },
                fusion: match fusion {
                    EncoderFusion::PlainOnly => Fusion::Plain,
                    EncoderFusion::OrientationOnly => Fusion::Orientation,
                    EncoderFusion::Conv1x1 => Fusion::Conv1x1(Conv2d::new(&mut b, "fuse", 2 * c, c, 1, true)),
                    EncoderFusion::Safm => Fusion::Safm(SafmBlock::new(&mut b, "safm", c)),
                },
            });
        }
        let has_orientation = fusion != EncoderFusion::PlainOnly;
        let mut decoder = Vec::with_capacity(levels - 1);
        for l in 0..levels - 1 {
            let c = cfg.channels(l);
            let mut b = b.scope(&format!("decoder{l}"));
            decoder.push(DecoderLevel {
                up: ConvBnRelu::new(&mut b, "up", cfg.channels(l + 1), c),
                glfm: cfg.use_glfm.then(|| GlfmBlock::new(&mut b, "glfm", c, c)),
                merge: ConvBnRelu::new(&mut b, "merge", 2 * c, c),
                prior: has_orientation.then(|| match cfg.orientation_prior {
                    PriorMode::Concat => Some(Conv2d::new(&mut b, "prior", 2 * c, c, 1, true)),
                    PriorMode::Add => None,
                }),
            });
        }
        let scale_channels: Vec<usize> = (0..levels).map(|l| cfg.channels(l)).collect();
        let msfm = cfg.use_msfm_ocednl.then(|| {
            Msfm::new(b, "msfm", &scale_channels, &scale_channels, cfg.msfm_width, cfg.msfm_core, cfg.msfm_fusion)
        });
        let tail = if cfg.use_msfm_ocednl { cfg.msfm_width } else { cfg.base_channels };
        let uarm = cfg.use_uarm.then(|| Uarm::new(b, "uarm", tail, cfg.prob_norm));
        let head = Conv2d::new(b, "head", tail, NUM_CLASSES, 1, true);
        Ok(Net { encoder, decoder, msfm, uarm, head, has_orientation })
    }

    /// Logits for an `(N, 1, H, W)` input; `H` and `W` must be divisible by
    /// `2^(levels - 1)`.
    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Outputs> {
        let sh = s.shape(x).to_vec();
        let div = 1usize << (self.encoder.len() - 1);
        if sh.len() != 4 || sh[1] != 1 || sh[2] % div != 0 || sh[3] % div != 0 {
            return Err(Error::Contract(format!(
                "input must be (N, 1, H, W) with H, W divisible by {div}, got {sh:?}"
            )));
        }
        let mut skips = Vec::with_capacity(self.encoder.len());
        let mut orient = Vec::with_capacity(self.encoder.len());
        let mut h = x;
        for (l, level) in self.encoder.iter().enumerate() {
            if l > 0 {
                h = s.maxpool2d(h, 2).in_block(&name("encoder", l, "pool"))?;
            }
            let p = match &level.basic {
                Some(m) => Some(m.forward(s, h).in_block(&name("encoder", l, "basic"))?),
                None => None,
            };
            let o = match &level.dcoa {
                Some(m) => Some(m.forward(s, h).in_block(&name("encoder", l, "dcoa"))?),
                None => None,
            };
            let fused = match (&level.fusion, p, o) {
                (Fusion::Plain, Some(p), _) => p,
                (Fusion::Orientation, _, Some(o)) => o,
                (Fusion::Conv1x1(conv), Some(p), Some(o)) => {
                    let cat = s.concat_channels(&[p, o]).in_block(&name("encoder", l, "fuse"))?;
                    conv.forward(s, cat).in_block(&name("encoder", l, "fuse"))?
                }
                (Fusion::Safm(m), Some(p), Some(o)) => m.forward(s, p, o).in_block(&name("encoder", l, "safm"))?,
                _ => unreachable!("branches are built to match the fusion"),
            };
            orient.push(o.unwrap_or(fused));
            skips.push(fused);
            h = fused;
        }
        let bottleneck = h;
        let mut dec_out = vec![bottleneck; self.encoder.len()];
        for l in (0..self.decoder.len()).rev() {
            let level = &self.decoder[l];
            let skip = skips[l];
            let (hh, ww) = (s.shape(skip)[2], s.shape(skip)[3]);
            let block = |b: &str| name("decoder", l, b);
            let up = s.upsample_bilinear(h, hh, ww).in_block(&block("up"))?;
            let up = level.up.forward(s, up).in_block(&block("up"))?;
            let gated = match &level.glfm {
                Some(g) => g.forward(s, skip, up).in_block(&block("glfm"))?,
                None => skip,
            };
            let cat = s.concat_channels(&[gated, up]).in_block(&block("merge"))?;
            let mut d = level.merge.forward(s, cat).in_block(&block("merge"))?;
            if let Some(prior) = &level.prior {
                d = match prior {
                    Some(conv) => {
                        let cat = s.concat_channels(&[d, orient[l]]).in_block(&block("prior"))?;
                        conv.forward(s, cat).in_block(&block("prior"))?
                    }
                    None => s.add(d, orient[l]).in_block(&block("prior"))?,
                };
            }
            dec_out[l] = d;
            h = d;
        }
        let mut f = h;
        if let Some(m) = &self.msfm {
            f = m.forward(s, &dec_out, &orient).in_block("msfm")?;
        }
        let mut partition = None;
        if let Some(u) = &self.uarm {
            let part = u.partition(s, f).in_block("uarm")?;
            f = u.refine(s, &part).in_block("uarm")?;
            partition = Some(part);
        }
        let logits = self.head.forward(s, f).in_block("head")?;
        Ok(Outputs { logits, uarm: partition })
    }

    pub fn has_orientation(&self) -> bool {
        self.has_orientation
    }

    /// The first encoder level's orientation block, if any.
    pub fn first_dcoa(&self) -> Option<&DcoaBlock> {
        self.encoder.first().and_then(|l| l.dcoa.as_ref())
    }
}

/// A network together with its parameters.
#[derive(Debug, Clone)]
pub struct Model<T: Scalar> {
    pub config: NetworkConfig,
    pub store: ParamStore<T>,
    pub net: Net,
}

impl<T: Scalar> Model<T> {
    /// Deterministic construction: equal seeds give identical parameters.
    pub fn build(config: NetworkConfig, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut rng = init_rng(seed);
        let net = Net::build(&config, &mut Builder::new(&mut store, &mut rng))?;
        Ok(Model { config, store, net })
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_trainable()
    }

    /// A session over the parameters plus the module tree.
    pub fn session(&mut self, mode: Mode) -> (Session<'_, T>, &Net) {
        (Session::new(&mut self.store, mode), &self.net)
    }

    /// Eval-mode logits `(N, 2, H, W)`.
    pub fn logits(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (mut s, net) = self.session(Mode::Eval);
        let v = s.input(x.clone());
        let out = net.forward(&mut s, v)?;
        Ok(s.value(out.logits).clone())
    }

    /// Eval-mode vessel probability `(N, 1, H, W)`: softmax over the two
    /// classes, class 1.
    pub fn vessel_probability(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let logits = self.logits(x)?;
        Ok(vessel_probability(&logits))
    }

    /// Same architecture with parameters converted to `U`.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model { config: self.config.clone(), store: self.store.cast(), net: self.net.clone() }
    }
}

/// Class-1 softmax probability from `(N, 2, H, W)` logits.
pub fn vessel_probability<T: Scalar>(logits: &Tensor<T>) -> Tensor<T> {
    let sh = logits.shape();
    let (n, hw) = (sh[0], sh[2] * sh[3]);
    let d = logits.data();
    let mut out = Vec::with_capacity(n * hw);
    for b in 0..n {
        let base = b * 2 * hw;
        for i in 0..hw {
            let (z0, z1) = (d[base + i], d[base + hw + i]);
            out.push(T::one() / (T::one() + (z0 - z1).exp()));
        }
    }
    Tensor::new(&[n, 1, sh[2], sh[3]], out).expect("extent matches")
}
