use rand::Rng;

use super::conv::{conv2d_circular, conv2d_circular_backward, ConvLayerParams};
use super::{channels_to_complex, complex_to_channels, relu_backward, relu_in_place, ParamSet, Tensor};
use crate::error::{size_err, Error, Result};
use crate::grid::ComplexGrid;

pub const DEFAULT_N_FEAT: usize = 128;

/// Largest double below 1. `tanh` rounds to exactly 1 for arguments past
/// about 19, so the bound is enforced explicitly.
const BOUND: f64 = 1.0 - f64::EPSILON / 2.0;

/// Strided circular conv stack with ReLU between layers and a bounded
/// final activation.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExtractorParams {
    pub layers: Vec<ConvLayerParams>,
}

impl FeatureExtractorParams {
    /// `2 -> f` (stride 2), `f -> 2f` (stride 2), `2f -> n_feat` (stride 1).
    pub fn init(features: usize, n_feat: usize, kernel: usize, rng: &mut impl Rng) -> Self {
        Self {
            layers: vec![
                ConvLayerParams::init(2, features, kernel, 2, rng),
                ConvLayerParams::init(features, 2 * features, kernel, 2, rng),
                ConvLayerParams::init(2 * features, n_feat, kernel, 1, rng),
            ],
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.visit_mut(&mut |_, v| v.iter_mut().for_each(|x| *x = 0.0));
        z
    }

    pub fn n_feat(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_ch)
    }

    pub fn total_stride(&self) -> usize {
        self.layers.iter().map(|l| l.stride).product()
    }

    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.layers.first() else {
            return Err(Error::Config("feature extractor has no layers".into()));
        };
        if first.in_ch != 2 {
            return Err(Error::Config("feature extractor must take 2 input channels".into()));
        }
        for pair in self.layers.windows(2) {
            if pair[0].out_ch != pair[1].in_ch {
                return Err(Error::Config("feature extractor channel counts do not chain".into()));
            }
        }
        self.layers.iter().try_for_each(|l| l.validate())
    }
}

impl ParamSet for FeatureExtractorParams {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&mut |n, s, v| f(&format!("layer{i}.{n}"), s, v));
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&mut |n, v| f(&format!("layer{i}.{n}"), v));
        }
    }
}

#[derive(Debug, Clone)]
pub struct FeatureCache {
    /// input of each layer
    inputs: Vec<Tensor>,
    /// pre-activation of each hidden layer
    pre: Vec<Tensor>,
    output: Tensor,
}

impl FeatureCache {
    pub fn output(&self) -> &Tensor {
        &self.output
    }
}

fn bounded(x: f64) -> f64 {
    x.tanh().clamp(-BOUND, BOUND)
}

pub(crate) fn feature_forward(m: &ComplexGrid, p: &FeatureExtractorParams) -> Result<FeatureCache> {
    p.validate()?;
    let s = p.total_stride();
    if !m.height().is_multiple_of(s) || !m.width().is_multiple_of(s) {
        return size_err(format!(
            "image {:?} not divisible by feature extractor stride {s}",
            m.dims()
        ));
    }
    let mut x = complex_to_channels(m);
    let mut inputs = Vec::with_capacity(p.layers.len());
    let mut pre = Vec::with_capacity(p.layers.len());
    let last = p.layers.len() - 1;
    for (i, layer) in p.layers.iter().enumerate() {
        let z = conv2d_circular(&x, layer)?;
        inputs.push(x);
        if i == last {
            x = z.map(bounded);
        } else {
            let mut a = z.clone();
            relu_in_place(&mut a);
            pre.push(z);
            x = a;
        }
    }
    Ok(FeatureCache { inputs, pre, output: x })
}

/// Accumulates parameter gradients into `grads` and returns the gradient with
/// respect to the complex input.
pub(crate) fn feature_backward(
    cache: &FeatureCache,
    p: &FeatureExtractorParams,
    upstream: &Tensor,
    grads: &mut FeatureExtractorParams,
) -> Result<ComplexGrid> {
    if upstream.shape() != cache.output.shape() {
        return size_err(format!(
            "feature gradient shape {:?} does not match output {:?}",
            upstream.shape(),
            cache.output.shape()
        ));
    }
    let mut g = upstream.clone();
    for (gv, &o) in g.as_mut_slice().iter_mut().zip(cache.output.as_slice()) {
        *gv *= 1.0 - o * o;
    }
    for i in (0..p.layers.len()).rev() {
        if i + 1 < p.layers.len() {
            relu_backward(&cache.pre[i], &mut g);
        }
        let cg = conv2d_circular_backward(&cache.inputs[i], &p.layers[i], &g)?;
        let dst = &mut grads.layers[i];
        dst.weight.iter_mut().zip(&cg.weight).for_each(|(a, b)| *a += b);
        dst.bias.iter_mut().zip(&cg.bias).for_each(|(a, b)| *a += b);
        g = cg.input;
    }
    channels_to_complex(&g)
}

pub fn feature_extract(m: &ComplexGrid, p: &FeatureExtractorParams) -> Result<Tensor> {
    feature_forward(m, p).map(|c| c.output)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_image(rng: &mut ChaCha8Rng, h: usize, w: usize, scale: f64) -> ComplexGrid {
        ComplexGrid::from_fn(h, w, |_, _| {
            Complex64::new(rng.random_range(-scale..scale), rng.random_range(-scale..scale))
        })
    }

    #[test]
    fn output_is_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = FeatureExtractorParams::init(4, 16, 3, &mut rng);
        let out = feature_extract(&rand_image(&mut rng, 8, 8, 1e4), &p).unwrap();
        assert_eq!(out.shape(), (16, 2, 2));
        assert!(out.max_abs() < 1.0);
    }

    #[test]
    fn zero_input_zero_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = FeatureExtractorParams::init(4, 8, 3, &mut rng);
        let out = feature_extract(&ComplexGrid::zeros(8, 8), &p).unwrap();
        assert_eq!(out.max_abs(), 0.0);
    }

    #[test]
    fn indivisible_dims_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = FeatureExtractorParams::init(2, 4, 3, &mut rng);
        assert!(matches!(feature_extract(&ComplexGrid::zeros(6, 8), &p), Err(Error::Size(_))));
    }

    #[test]
    fn matches_layer_by_layer_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut p = FeatureExtractorParams::init(2, 3, 3, &mut rng);
        for l in &mut p.layers {
            l.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.2..0.2));
        }
        let m = rand_image(&mut rng, 8, 8, 1.0);
        let x0 = complex_to_channels(&m);
        let a1 = conv2d_circular(&x0, &p.layers[0]).unwrap().map(|v| v.max(0.0));
        let a2 = conv2d_circular(&a1, &p.layers[1]).unwrap().map(|v| v.max(0.0));
        let expect = conv2d_circular(&a2, &p.layers[2]).unwrap().map(f64::tanh);
        let out = feature_extract(&m, &p).unwrap();
        assert!(out.sub(&expect).unwrap().max_abs() < 1e-14);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = FeatureExtractorParams::init(2, 3, 3, &mut rng);
        for l in &mut p.layers {
            l.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.2..0.2));
        }
        let m = rand_image(&mut rng, 8, 8, 1.0);
        let cache = feature_forward(&m, &p).unwrap();
        let (c, h, w) = cache.output().shape();
        let up = Tensor::from_vec(c, h, w, (0..c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let loss = |p: &FeatureExtractorParams, m: &ComplexGrid| -> f64 {
            let o = feature_extract(m, p).unwrap();
            o.as_slice().iter().zip(up.as_slice()).map(|(a, b)| a * b).sum()
        };
        let mut grads = p.zeros_like();
        let gin = feature_backward(&cache, &p, &up, &mut grads).unwrap();

        let eps = 1e-6;
        let flat = p.flatten();
        let gflat = grads.flatten();
        for i in 0..flat.len() {
            let (mut a, mut b) = (flat.clone(), flat.clone());
            a[i] += eps;
            b[i] -= eps;
            let (mut pa, mut pb) = (p.clone(), p.clone());
            pa.assign(&a).unwrap();
            pb.assign(&b).unwrap();
            let fd = (loss(&pa, &m) - loss(&pb, &m)) / (2.0 * eps);
            assert!((fd - gflat[i]).abs() < 1e-6 * fd.abs().max(1.0), "param {i}: {fd} vs {}", gflat[i]);
        }
        for idx in [0, 9, 37, 63] {
            for dz in [Complex64::new(eps, 0.0), Complex64::new(0.0, eps)] {
                let mut a = m.clone();
                let mut b = m.clone();
                a.as_mut_slice()[idx] += dz;
                b.as_mut_slice()[idx] -= dz;
                let fd = (loss(&p, &a) - loss(&p, &b)) / (2.0 * eps);
                let an = if dz.re != 0.0 { gin.as_slice()[idx].re } else { gin.as_slice()[idx].im };
                assert!((fd - an).abs() < 1e-6 * fd.abs().max(1.0));
            }
        }
    }
}
