//! Confidence partition and depth-asymmetric refinement.

use oce_autograd::{Error, Result, Scalar, Tensor, Var};

use crate::nn::{Builder, Conv2d, Session};

pub const LOW_THRESHOLD: f64 = 0.4;
pub const HIGH_THRESHOLD: f64 = 0.7;

/// 1 on `[0, 0.4)` and `[0.7, 1]`, 0 on `[0.4, 0.7)`.
pub fn sign(p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Contract(format!("probability {p} outside [0, 1]")));
    }
    Ok(if (LOW_THRESHOLD..HIGH_THRESHOLD).contains(&p) { 0.0 } else { 1.0 })
}

/// Confidence region of a probability: 0 low, 1 medium, 2 high.
pub fn region(p: f64) -> u8 {
    if p < LOW_THRESHOLD {
        0
    } else if p < HIGH_THRESHOLD {
        1
    } else {
        2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ProbNorm {
    /// Elementwise logistic.
    #[default]
    Sigmoid,
    /// Softmax over all spatial positions of each sample.
    SpatialSoftmax,
}

#[derive(Debug, Clone, Copy)]
pub struct Partition {
    pub prob: Var,
    /// Constant `{0, 1}` mask, `(N, 1, H, W)`.
    pub mask: Var,
    pub f1: Var,
    pub f2: Var,
}

#[derive(Debug, Clone)]
pub struct Uarm {
    pub channels: usize,
    pub prob_conv: Conv2d,
    pub shallow: Vec<Conv2d>,
    pub deep: Vec<Conv2d>,
    pub norm: ProbNorm,
}

impl Uarm {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, name: &str, channels: usize, norm: ProbNorm) -> Self {
        let mut b = b.scope(name);
        let c = channels;
        let mut chain = |prefix: &str, widths: &[usize]| {
            widths
                .windows(2)
                .enumerate()
                .map(|(i, w)| Conv2d::new(&mut b, &format!("{prefix}{i}"), w[0], w[1], 3, true))
                .collect::<Vec<_>>()
        };
        let shallow = chain("shallow", &[c, c, 1]);
        let deep = chain("deep", &[c, c, c, c, 1]);
        Uarm { channels, prob_conv: Conv2d::new(&mut b, "prob", c, 1, 1, true), shallow, deep, norm }
    }

    pub fn prob_map<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let sh = s.shape(x).to_vec();
        if sh.len() != 4 || sh[1] != self.channels {
            return Err(Error::Dimension { op: "uarm", msg: format!("expected {} channels, got {sh:?}", self.channels) });
        }
        let logits = self.prob_conv.forward(s, x)?;
        match self.norm {
            ProbNorm::Sigmoid => s.sigmoid(logits),
            ProbNorm::SpatialSoftmax => {
                let flat = s.reshape(logits, &[sh[0], sh[2] * sh[3]])?;
                let p = s.softmax(flat, 1)?;
                s.reshape(p, &[sh[0], 1, sh[2], sh[3]])
            }
        }
    }

    /// Splits `x` by the confidence of `prob`; the mask is a constant, so no
    /// gradient passes through it.
    pub fn partition_with<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var, prob: Var) -> Result<Partition> {
        let p = s.value(prob);
        let mut m = Vec::with_capacity(p.numel());
        for &v in p.data() {
            m.push(T::from_f64_lossy(sign(v.to_f64_lossy())?));
        }
        let inv: Vec<T> = m.iter().map(|&v| T::one() - v).collect();
        let shape = p.shape().to_vec();
        let mask = s.input(Tensor::new(&shape, m)?);
        let inv = s.input(Tensor::new(&shape, inv)?);
        let f1 = s.mul(x, mask)?;
        let f2 = s.mul(x, inv)?;
        Ok(Partition { prob, mask, f1, f2 })
    }

    pub fn partition<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Partition> {
        let prob = self.prob_map(s, x)?;
        self.partition_with(s, x, prob)
    }

    fn attend<T: Scalar>(s: &mut Session<'_, T>, convs: &[Conv2d], x: Var) -> Result<Var> {
        let mut h = x;
        for (i, conv) in convs.iter().enumerate() {
            h = conv.forward(s, h)?;
            if i + 1 < convs.len() {
                h = s.relu(h)?;
            }
        }
        let m = s.sigmoid(h)?;
        s.mul(x, m)
    }

    pub fn shallow_attention<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        Self::attend(s, &self.shallow, x)
    }

    pub fn deep_attention<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        Self::attend(s, &self.deep, x)
    }

    /// `Att_s(F_1) + Att_d(F_2)` for a given partition.
    pub fn refine<T: Scalar>(&self, s: &mut Session<'_, T>, part: &Partition) -> Result<Var> {
        let a = self.shallow_attention(s, part.f1)?;
        let b = self.deep_attention(s, part.f2)?;
        s.add(a, b)
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let part = self.partition(s, x)?;
        self.refine(s, &part)
    }
}
