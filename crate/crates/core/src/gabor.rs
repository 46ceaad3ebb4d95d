//! Gabor kernels and orientation sets.

use std::f64::consts::PI;

use oce_autograd::Tensor;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaborParams {
    /// Wavelength of the carrier.
    pub lambda: f64,
    /// Carrier direction in radians.
    pub theta: f64,
    /// Phase offset in radians.
    pub psi: f64,
    /// Standard deviation of the Gaussian envelope.
    pub sigma: f64,
    /// Spatial aspect ratio; carried for completeness, the kernel formula
    /// does not read it.
    pub gamma: f64,
    pub kernel_size: usize,
}

impl Default for GaborParams {
    fn default() -> Self {
        GaborParams { lambda: std::f64::consts::FRAC_1_SQRT_2, theta: 0.0, psi: 0.0, sigma: 1.0, gamma: 1.0, kernel_size: 3 }
    }
}

impl GaborParams {
    pub fn with_theta(theta: f64) -> Self {
        GaborParams { theta, ..Self::default() }
    }

    fn validate(&self) -> Result<()> {
        if self.kernel_size < 3 || self.kernel_size % 2 == 0 {
            return Err(Error::Contract(format!("kernel size must be odd and >= 3, got {}", self.kernel_size)));
        }
        if !(self.sigma > 0.0) || !(self.lambda > 0.0) {
            return Err(Error::Contract("gabor sigma and lambda must be positive".into()));
        }
        Ok(())
    }
}

/// Real Gabor value at offset `(x, y)` from the kernel centre.
pub fn gabor_value(p: &GaborParams, x: f64, y: f64) -> f64 {
    let (sin, cos) = p.theta.sin_cos();
    let xr = x * cos + y * sin;
    let yr = -x * sin + y * cos;
    let envelope = (-(xr * xr + p.lambda * p.lambda * yr * yr) / (2.0 * p.sigma * p.sigma)).exp();
    envelope * (2.0 * PI * xr / p.lambda + p.psi).cos()
}

/// `(k, k)` kernel; row `r`, column `c` sits at `x = c - k/2`, `y = r - k/2`.
pub fn gen_gabor(p: &GaborParams) -> Result<Tensor<f64>> {
    p.validate()?;
    let k = p.kernel_size;
    let half = (k / 2) as f64;
    let t = Tensor::from_fn(&[k, k], |i| gabor_value(p, (i % k) as f64 - half, (i / k) as f64 - half));
    Ok(t)
}

/// Zero-mean, unit-variance copy of a kernel (population variance).
pub fn standardize(kernel: &[f64], eps: f64) -> Vec<f64> {
    let n = kernel.len() as f64;
    let mean = kernel.iter().sum::<f64>() / n;
    let var = kernel.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + eps).sqrt();
    kernel.iter().map(|v| (v - mean) * inv).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OrientationSpacing {
    /// `theta_i = (i - 1) * pi / n`.
    #[default]
    Uniform,
    /// `theta_i = 2 * pi / i`, as literally written; yields repeated
    /// directions.
    Literal,
}

pub fn orientations(n: usize, spacing: OrientationSpacing) -> Result<Vec<f64>> {
    if n < 1 {
        return Err(Error::Contract("at least one orientation is required".into()));
    }
    Ok(match spacing {
        OrientationSpacing::Uniform => (0..n).map(|i| i as f64 * PI / n as f64).collect(),
        OrientationSpacing::Literal => (1..=n).map(|i| 2.0 * PI / i as f64).collect(),
    })
}

/// One kernel per orientation, stacked into `(n, k, k)`.
pub fn gabor_bank(thetas: &[f64], kernel_size: usize) -> Result<Tensor<f64>> {
    let mut data = Vec::with_capacity(thetas.len() * kernel_size * kernel_size);
    for &theta in thetas {
        let g = gen_gabor(&GaborParams { theta, kernel_size, ..GaborParams::default() })?;
        data.extend_from_slice(g.data());
    }
    Tensor::new(&[thetas.len(), kernel_size, kernel_size], data).map_err(|e| Error::Contract(e.to_string()))
}

/// Min-max scales a kernel to 8-bit gray levels.
pub fn to_gray8(kernel: &[f64]) -> Vec<u8> {
    let lo = kernel.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = kernel.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    kernel
        .iter()
        .map(|&v| if span > 0.0 { ((v - lo) / span * 255.0).round() as u8 } else { 128 })
        .collect()
}
