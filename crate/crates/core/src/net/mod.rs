//! Unrolled reconstruction network with hand-written reverse-mode
//! derivatives.
//!
//! Complex images enter the convolutional blocks as two real channels
//! (real, imaginary). All convolutions are circular so the network respects
//! the periodic wrap of images produced by an inverse FFT.

mod conv;
mod feature;
mod prox;
mod unrolled;

pub use conv::{conv2d_circular, conv2d_circular_backward, ConvGrads, ConvLayerParams};
pub use feature::{feature_extract, FeatureCache, FeatureExtractorParams, DEFAULT_N_FEAT};
pub use prox::{prox_block_apply, ProxCache, ProximalBlockParams, ResBlockParams};
pub use unrolled::{
    gradient_update, unrolled_backward, unrolled_forward, ModelMeta, UnrolledGradients, UnrolledModelParams,
    FORMAT_VERSION,
};

pub(crate) use feature::{feature_backward, feature_forward};
pub(crate) use unrolled::{backward_with_tape, forward_with_tape};

use num_complex::Complex64;

use crate::error::{size_err, Result};
use crate::grid::ComplexGrid;

/// Multi-channel real grid, channel-major (`C x H x W`).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return size_err(format!(
                "tensor data has {} values, expected {channels}x{height}x{width}",
                data.len()
            ));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, r: usize, col: usize) -> f64 {
        self.data[(c * self.height + r) * self.width + col]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        if self.shape() != other.shape() {
            return size_err(format!("tensor shapes differ: {:?} vs {:?}", self.shape(), other.shape()));
        }
        Ok(Self {
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
            ..*self
        })
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Circular shift of every channel by `(dr, dc)`.
    pub fn roll(&self, dr: usize, dc: usize) -> Self {
        let (h, w) = (self.height, self.width);
        let mut out = Self::zeros(self.channels, h, w);
        for c in 0..self.channels {
            for r in 0..h {
                for col in 0..w {
                    out.data[(c * h + (r + dr) % h) * w + (col + dc) % w] = self.get(c, r, col);
                }
            }
        }
        out
    }
}

fn relu(x: f64) -> f64 {
    x.max(0.0)
}

fn relu_in_place(t: &mut Tensor) {
    t.as_mut_slice().iter_mut().for_each(|v| *v = relu(*v));
}

/// Zero the gradient wherever the pre-activation was not positive.
fn relu_backward(pre: &Tensor, grad: &mut Tensor) {
    for (g, &p) in grad.as_mut_slice().iter_mut().zip(pre.as_slice()) {
        if p <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Real and imaginary parts as channels 0 and 1.
pub fn complex_to_channels(m: &ComplexGrid) -> Tensor {
    let (h, w) = m.dims();
    let mut data = Vec::with_capacity(2 * h * w);
    data.extend(m.as_slice().iter().map(|z| z.re));
    data.extend(m.as_slice().iter().map(|z| z.im));
    Tensor {
        channels: 2,
        height: h,
        width: w,
        data,
    }
}

pub fn channels_to_complex(t: &Tensor) -> Result<ComplexGrid> {
    if t.channels != 2 {
        return size_err(format!("expected 2 channels (real, imag), got {}", t.channels));
    }
    let re = t.channel(0);
    let im = t.channel(1);
    ComplexGrid::from_vec(
        t.height,
        t.width,
        re.iter().zip(im).map(|(&a, &b)| Complex64::new(a, b)).collect(),
    )
}

/// Named parameter tensors, visited in a fixed order. The order defines the
/// flattened layout used by the optimizer and the tensor table of the
/// weights file.
pub trait ParamSet {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64]));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64]));

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, _, v| n += v.len());
        n
    }

    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.visit(&mut |_, _, v| out.extend_from_slice(v));
        out
    }

    /// Overwrite every parameter from a flat vector produced by [`flatten`](ParamSet::flatten).
    fn assign(&mut self, flat: &[f64]) -> Result<()> {
        let n = self.num_params();
        if flat.len() != n {
            return size_err(format!("flat parameter vector has {} values, expected {n}", flat.len()));
        }
        let mut off = 0;
        self.visit_mut(&mut |_, v| {
            v.copy_from_slice(&flat[off..off + v.len()]);
            off += v.len();
        });
        Ok(())
    }

    fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit(&mut |_, _, v| ok &= v.iter().all(|x| x.is_finite()));
        ok
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn channel_round_trip() {
        let m = ComplexGrid::from_fn(3, 4, |r, c| Complex64::new(r as f64 - 1.5, c as f64 * 0.25));
        let t = complex_to_channels(&m);
        assert_eq!(t.shape(), (2, 3, 4));
        for r in 0..3 {
            for c in 0..4 {
                assert_eq!(t.get(0, r, c), m[(r, c)].re);
                assert_eq!(t.get(1, r, c), m[(r, c)].im);
            }
        }
        assert_eq!(channels_to_complex(&t).unwrap(), m);

        let real = ComplexGrid::from_fn(2, 2, |r, c| Complex64::new((r + c) as f64, 0.0));
        let t = complex_to_channels(&real);
        assert!(t.channel(1).iter().all(|&v| v == 0.0));
        assert!(channels_to_complex(&Tensor::zeros(3, 2, 2)).is_err());
    }
}
