//! Non-local attention (plain, disentangled, and the cross-correlated
//! variants that entangle a plain and an orientation stream) and the
//! multi-scale fusion module hosting them.
//!
//! Affinities between positions `i` and `j` are built from `(N, d, HW)`
//! embeddings and scaled by `1/sqrt(d)` per factor. Pairwise affinities are
//! softmax-normalized over `j`; unary terms are normalized separately and
//! added.

use std::fmt;
use std::str::FromStr;

use oce_autograd::{Error, Result, Scalar, Var};

use crate::attention::apply_attention;
use crate::nn::{flatten_spatial, Builder, Conv2d, Session};

/// `scale * q^T k` as `(N, HW, HW)` for `q`, `k` of shape `(N, d, HW)`.
pub fn affinity<T: Scalar>(s: &mut Session<'_, T>, q: Var, k: Var, scale: f64) -> Result<Var> {
    s.matmul_ex(q, k, true, false, T::from_f64_lossy(scale))
}

/// Spatial mean `(N, d, 1)` of an `(N, d, HW)` embedding.
pub fn spatial_mean<T: Scalar>(s: &mut Session<'_, T>, x: Var) -> Result<Var> {
    s.mean_axes(x, &[2], true)
}

/// Subtracts the per-sample spatial mean.
pub fn whiten<T: Scalar>(s: &mut Session<'_, T>, x: Var) -> Result<Var> {
    let m = spatial_mean(s, x)?;
    s.sub(x, m)
}

/// Whitened pairwise affinity.
pub fn whitened_affinity<T: Scalar>(s: &mut Session<'_, T>, q: Var, k: Var, scale: f64) -> Result<Var> {
    let qw = whiten(s, q)?;
    let kw = whiten(s, k)?;
    affinity(s, qw, kw, scale)
}

/// `(Q^T K) * (Q~^T K) * (Q^T K~)`, optionally on whitened embeddings.
pub fn entangled_affinity<T: Scalar>(
    s: &mut Session<'_, T>,
    q: Var,
    k: Var,
    q_o: Var,
    k_o: Var,
    whitened: bool,
    scale: f64,
) -> Result<Var> {
    let (q, k, q_o, k_o) = if whitened {
        (whiten(s, q)?, whiten(s, k)?, whiten(s, q_o)?, whiten(s, k_o)?)
    } else {
        (q, k, q_o, k_o)
    };
    let a = affinity(s, q, k, scale)?;
    let b = affinity(s, q_o, k, scale)?;
    let c = affinity(s, q, k_o, scale)?;
    let ab = s.mul(a, b)?;
    s.mul(ab, c)
}

/// Unary term `mu_q . k_j` as `(N, 1, HW)`.
pub fn unary_term<T: Scalar>(s: &mut Session<'_, T>, q: Var, unary_key: Var, scale: f64) -> Result<Var> {
    let mu = spatial_mean(s, q)?;
    affinity(s, mu, unary_key, scale)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CoreKind {
    Nl,
    Dnl,
    SelfAttention,
    OceNl,
    #[default]
    OceDnl,
    /// DNL over the sum of both streams.
    AdditionDnl,
    /// DNL over a 1x1 projection of both streams concatenated.
    ConcatDnl,
}

impl CoreKind {
    pub const ALL: [CoreKind; 7] = [
        CoreKind::OceDnl,
        CoreKind::OceNl,
        CoreKind::Dnl,
        CoreKind::Nl,
        CoreKind::SelfAttention,
        CoreKind::AdditionDnl,
        CoreKind::ConcatDnl,
    ];

    pub fn uses_orientation(self) -> bool {
        matches!(self, CoreKind::OceNl | CoreKind::OceDnl | CoreKind::AdditionDnl | CoreKind::ConcatDnl)
    }

    fn disentangled(self) -> bool {
        matches!(self, CoreKind::Dnl | CoreKind::OceDnl | CoreKind::AdditionDnl | CoreKind::ConcatDnl)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CoreKind::Nl => "nl",
            CoreKind::Dnl => "dnl",
            CoreKind::SelfAttention => "self_attention",
            CoreKind::OceNl => "oce_nl",
            CoreKind::OceDnl => "oce_dnl",
            CoreKind::AdditionDnl => "addition_dnl",
            CoreKind::ConcatDnl => "concat_dnl",
        }
    }
}

impl fmt::Display for CoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CoreKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        CoreKind::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| format!("unknown msfm core `{s}`"))
    }
}

/// Raw and normalized affinities of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Affinities {
    /// Pairwise term before normalization, `(N, HW, HW)`.
    pub pairwise: Var,
    /// Unary term before normalization, `(N, 1, HW)`.
    pub unary: Option<Var>,
    /// Normalized pairwise term.
    pub pairwise_norm: Var,
    pub unary_norm: Option<Var>,
    /// What multiplies the values: the sum of the normalized terms.
    pub weights: Var,
}

#[derive(Debug, Clone)]
pub struct NonLocal {
    pub kind: CoreKind,
    pub channels: usize,
    pub dim: usize,
    pub query: Conv2d,
    pub key: Conv2d,
    pub value: Conv2d,
    pub unary_key: Option<Conv2d>,
    pub query_o: Option<Conv2d>,
    pub key_o: Option<Conv2d>,
    pub unary_key_o: Option<Conv2d>,
    pub merge: Option<Conv2d>,
}

impl NonLocal {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, name: &str, channels: usize, kind: CoreKind) -> Self {
        let dim = match kind {
            CoreKind::SelfAttention => (channels / 8).max(1),
            _ => (channels / 2).max(1),
        };
        let mut b = b.scope(name);
        let proj = |b: &mut Builder<'_, T>, n: &str, out: usize| Conv2d::new(b, n, channels, out, 1, true);
        let entangled = matches!(kind, CoreKind::OceNl | CoreKind::OceDnl);
        NonLocal {
            kind,
            channels,
            dim,
            query: proj(&mut b, "query", dim),
            key: proj(&mut b, "key", dim),
            value: proj(&mut b, "value", channels),
            unary_key: kind.disentangled().then(|| proj(&mut b, "unary_key", dim)),
            query_o: entangled.then(|| proj(&mut b, "query_o", dim)),
            key_o: entangled.then(|| proj(&mut b, "key_o", dim)),
            unary_key_o: (kind == CoreKind::OceDnl).then(|| proj(&mut b, "unary_key_o", dim)),
            merge: (kind == CoreKind::ConcatDnl).then(|| Conv2d::new(&mut b, "merge", 2 * channels, channels, 1, true)),
        }
    }

    fn embed<T: Scalar>(s: &mut Session<'_, T>, conv: &Conv2d, x: Var) -> Result<Var> {
        let y = conv.forward(s, x)?;
        flatten_spatial(s, y)
    }

    fn scale(&self) -> f64 {
        1.0 / (self.dim as f64).sqrt()
    }

    /// The map the plain-stream projections read: the plain input, or the
    /// merged streams for the addition and concatenation variants.
    pub fn primary_input<T: Scalar>(&self, s: &mut Session<'_, T>, plain: Var, oriented: Option<Var>) -> Result<Var> {
        match self.kind {
            CoreKind::AdditionDnl => s.add(plain, need(oriented)?),
            CoreKind::ConcatDnl => {
                let cat = s.concat_channels(&[plain, need(oriented)?])?;
                self.merge.as_ref().expect("built with merge").forward(s, cat)
            }
            _ => Ok(plain),
        }
    }

    pub fn affinities<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var, oriented: Option<Var>) -> Result<Affinities> {
        let scale = self.scale();
        let q = Self::embed(s, &self.query, x)?;
        let k = Self::embed(s, &self.key, x)?;
        let (pairwise, unary) = match self.kind {
            CoreKind::Nl | CoreKind::SelfAttention => (affinity(s, q, k, scale)?, None),
            CoreKind::Dnl | CoreKind::AdditionDnl | CoreKind::ConcatDnl => {
                let uk = Self::embed(s, self.unary_key.as_ref().expect("disentangled"), x)?;
                (whitened_affinity(s, q, k, scale)?, Some(unary_term(s, q, uk, scale)?))
            }
            CoreKind::OceNl | CoreKind::OceDnl => {
                let o = need(oriented)?;
                if s.shape(o) != s.shape(x) {
                    return Err(Error::Dimension {
                        op: "entangled non-local",
                        msg: format!("plain {:?} vs oriented {:?}", s.shape(x), s.shape(o)),
                    });
                }
                let q_o = Self::embed(s, self.query_o.as_ref().expect("entangled"), o)?;
                let k_o = Self::embed(s, self.key_o.as_ref().expect("entangled"), o)?;
                let whitened = self.kind == CoreKind::OceDnl;
                let pair = entangled_affinity(s, q, k, q_o, k_o, whitened, scale)?;
                let unary = if whitened {
                    let uk = Self::embed(s, self.unary_key.as_ref().expect("disentangled"), x)?;
                    let uk_o = Self::embed(s, self.unary_key_o.as_ref().expect("entangled"), o)?;
                    let u = unary_term(s, q, uk, scale)?;
                    let u_o = unary_term(s, q_o, uk_o, scale)?;
                    Some(s.mul(u, u_o)?)
                } else {
                    None
                };
                (pair, unary)
            }
        };
        let pairwise_norm = s.softmax(pairwise, 2)?;
        let (unary_norm, weights) = match unary {
            Some(u) => {
                let un = s.softmax(u, 2)?;
                (Some(un), s.add(pairwise_norm, un)?)
            }
            None => (None, pairwise_norm),
        };
        Ok(Affinities { pairwise, unary, pairwise_norm, unary_norm, weights })
    }

    /// `x + W V(x)`, where `x` is [`NonLocal::primary_input`].
    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, plain: Var, oriented: Option<Var>) -> Result<Var> {
        let x = self.primary_input(s, plain, oriented)?;
        let a = self.affinities(s, x, oriented)?;
        let v = Self::embed(s, &self.value, x)?;
        apply_attention(s, a.weights, v, x)
    }
}

fn need(oriented: Option<Var>) -> Result<Var> {
    oriented.ok_or_else(|| Error::Contract("this non-local variant needs the orientation stream".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MsfmFusion {
    /// `sigmoid(core) + F_in`.
    #[default]
    Residual,
    /// `F_in * sigmoid(core) + F_in`.
    Gate,
}

/// Unifies several scales of both streams and fuses them with a
/// non-local core.
#[derive(Debug, Clone)]
pub struct Msfm {
    pub proj_plain: Conv2d,
    pub proj_oriented: Option<Conv2d>,
    pub core: NonLocal,
    pub num_scales: usize,
    pub fusion: MsfmFusion,
}

impl Msfm {
    pub fn new<T: Scalar>(
        b: &mut Builder<'_, T>,
        name: &str,
        plain_channels: &[usize],
        oriented_channels: &[usize],
        width: usize,
        kind: CoreKind,
        fusion: MsfmFusion,
    ) -> Self {
        let mut b = b.scope(name);
        let sum = |c: &[usize]| c.iter().sum::<usize>();
        Msfm {
            proj_plain: Conv2d::new(&mut b, "proj_plain", sum(plain_channels), width, 1, true),
            proj_oriented: kind
                .uses_orientation()
                .then(|| Conv2d::new(&mut b, "proj_oriented", sum(oriented_channels), width, 1, true)),
            core: NonLocal::new(&mut b, "core", width, kind),
            num_scales: plain_channels.len(),
            fusion,
        }
    }

    /// Upsamples every scale to the first one's size, concatenates and
    /// projects.
    pub fn unify<T: Scalar>(&self, s: &mut Session<'_, T>, scales: &[Var], proj: &Conv2d) -> Result<Var> {
        if scales.len() != self.num_scales {
            return Err(Error::Contract(format!("msfm expects {} scales, got {}", self.num_scales, scales.len())));
        }
        let (h, w) = (s.shape(scales[0])[2], s.shape(scales[0])[3]);
        let mut up = Vec::with_capacity(scales.len());
        for &x in scales {
            let sh = s.shape(x);
            up.push(if sh[2] == h && sh[3] == w { x } else { s.upsample_bilinear(x, h, w)? });
        }
        let cat = s.concat_channels(&up)?;
        proj.forward(s, cat)
    }

    /// Combines the core output with the unified plain input.
    pub fn fuse<T: Scalar>(&self, s: &mut Session<'_, T>, core_out: Var, f_in: Var) -> Result<Var> {
        let g = s.sigmoid(core_out)?;
        let g = match self.fusion {
            MsfmFusion::Residual => g,
            MsfmFusion::Gate => s.mul(f_in, g)?,
        };
        s.add(g, f_in)
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, plain: &[Var], oriented: &[Var]) -> Result<Var> {
        let f_in = self.unify(s, plain, &self.proj_plain)?;
        let f_o = match &self.proj_oriented {
            Some(p) => Some(self.unify(s, oriented, p)?),
            None => None,
        };
        let core = self.core.forward(s, f_in, f_o)?;
        self.fuse(s, core, f_in)
    }
}
