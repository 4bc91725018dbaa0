use rand::Rng;

use super::conv::{conv2d_circular, conv2d_circular_backward, ConvLayerParams};
use super::{channels_to_complex, complex_to_channels, relu_backward, relu_in_place, ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::grid::ComplexGrid;

/// conv -> ReLU -> conv, added to the block input.
#[derive(Debug, Clone, PartialEq)]
pub struct ResBlockParams {
    pub conv1: ConvLayerParams,
    pub conv2: ConvLayerParams,
}

/// Learned proximal operator: `2 -> f` conv, ReLU, ResBlocks, `f -> 2` conv,
/// plus a skip connection around the whole block.
#[derive(Debug, Clone, PartialEq)]
pub struct ProximalBlockParams {
    pub conv_in: ConvLayerParams,
    pub blocks: Vec<ResBlockParams>,
    pub conv_out: ConvLayerParams,
}

impl ResBlockParams {
    fn zeros(f: usize, k: usize) -> Self {
        Self {
            conv1: ConvLayerParams::zeros(f, f, k, 1),
            conv2: ConvLayerParams::zeros(f, f, k, 1),
        }
    }
}

impl ProximalBlockParams {
    pub fn zeros(features: usize, resblocks: usize, kernel: usize) -> Self {
        Self {
            conv_in: ConvLayerParams::zeros(2, features, kernel, 1),
            blocks: (0..resblocks).map(|_| ResBlockParams::zeros(features, kernel)).collect(),
            conv_out: ConvLayerParams::zeros(features, 2, kernel, 1),
        }
    }

    pub fn init(features: usize, resblocks: usize, kernel: usize, rng: &mut impl Rng) -> Self {
        Self {
            conv_in: ConvLayerParams::init(2, features, kernel, 1, rng),
            blocks: (0..resblocks)
                .map(|_| ResBlockParams {
                    conv1: ConvLayerParams::init(features, features, kernel, 1, rng),
                    conv2: ConvLayerParams::init(features, features, kernel, 1, rng),
                })
                .collect(),
            conv_out: ConvLayerParams::init(features, 2, kernel, 1, rng),
        }
    }

    pub fn features(&self) -> usize {
        self.conv_in.out_ch
    }

    pub fn validate(&self) -> Result<()> {
        let f = self.conv_in.out_ch;
        let chain_ok = self.conv_in.in_ch == 2
            && self.conv_out.out_ch == 2
            && self.conv_out.in_ch == f
            && self.blocks.iter().all(|b| {
                b.conv1.in_ch == f && b.conv1.out_ch == f && b.conv2.in_ch == f && b.conv2.out_ch == f
            });
        if !chain_ok {
            return Err(Error::Config("proximal block channel counts do not chain 2 -> f -> 2".into()));
        }
        let all_stride_one = std::iter::once(&self.conv_in)
            .chain(self.blocks.iter().flat_map(|b| [&b.conv1, &b.conv2]))
            .chain(std::iter::once(&self.conv_out))
            .all(|c| c.stride == 1);
        if !all_stride_one {
            return Err(Error::Config("proximal block convolutions must have stride 1".into()));
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.visit_mut(&mut |_, v| v.iter_mut().for_each(|x| *x = 0.0));
        z
    }
}

impl ParamSet for ProximalBlockParams {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.conv_in.visit(&mut |n, s, v| f(&format!("conv_in.{n}"), s, v));
        for (i, b) in self.blocks.iter().enumerate() {
            b.conv1.visit(&mut |n, s, v| f(&format!("res{i}.conv1.{n}"), s, v));
            b.conv2.visit(&mut |n, s, v| f(&format!("res{i}.conv2.{n}"), s, v));
        }
        self.conv_out.visit(&mut |n, s, v| f(&format!("conv_out.{n}"), s, v));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.conv_in.visit_mut(&mut |n, v| f(&format!("conv_in.{n}"), v));
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.conv1.visit_mut(&mut |n, v| f(&format!("res{i}.conv1.{n}"), v));
            b.conv2.visit_mut(&mut |n, v| f(&format!("res{i}.conv2.{n}"), v));
        }
        self.conv_out.visit_mut(&mut |n, v| f(&format!("conv_out.{n}"), v));
    }
}

/// Activations kept from the forward pass.
#[derive(Debug, Clone)]
pub struct ProxCache {
    input: Tensor,
    pre_in: Tensor,
    /// input to each ResBlock, followed by the input to `conv_out`
    trunk: Vec<Tensor>,
    pre_mid: Vec<Tensor>,
    mid: Vec<Tensor>,
}

pub(crate) fn prox_forward(m: &ComplexGrid, p: &ProximalBlockParams) -> Result<(ComplexGrid, ProxCache)> {
    p.validate()?;
    let x0 = complex_to_channels(m);
    let pre_in = conv2d_circular(&x0, &p.conv_in)?;
    let mut h = pre_in.clone();
    relu_in_place(&mut h);

    let mut trunk = Vec::with_capacity(p.blocks.len() + 1);
    let mut pre_mid = Vec::with_capacity(p.blocks.len());
    let mut mid = Vec::with_capacity(p.blocks.len());
    for b in &p.blocks {
        let z1 = conv2d_circular(&h, &b.conv1)?;
        let mut r = z1.clone();
        relu_in_place(&mut r);
        let z2 = conv2d_circular(&r, &b.conv2)?;
        let mut next = h.clone();
        next.add_assign(&z2);
        trunk.push(h);
        pre_mid.push(z1);
        mid.push(r);
        h = next;
    }
    let mut out = conv2d_circular(&h, &p.conv_out)?;
    trunk.push(h);
    out.add_assign(&x0);
    let img = channels_to_complex(&out)?;
    Ok((
        img,
        ProxCache {
            input: x0,
            pre_in,
            trunk,
            pre_mid,
            mid,
        },
    ))
}

/// Accumulates parameter gradients into `grads`; returns the gradient with
/// respect to the block input.
pub(crate) fn prox_backward(
    cache: &ProxCache,
    p: &ProximalBlockParams,
    upstream: &ComplexGrid,
    grads: &mut ProximalBlockParams,
) -> Result<ComplexGrid> {
    let gy = complex_to_channels(upstream);
    let mut g_input = gy.clone();

    let h_last = cache.trunk.last().expect("trunk always holds the conv_out input");
    let g = conv2d_circular_backward(h_last, &p.conv_out, &gy)?;
    accumulate(&mut grads.conv_out, &g.weight, &g.bias);
    let mut gh = g.input;

    for (i, b) in p.blocks.iter().enumerate().rev() {
        let g2 = conv2d_circular_backward(&cache.mid[i], &b.conv2, &gh)?;
        accumulate(&mut grads.blocks[i].conv2, &g2.weight, &g2.bias);
        let mut gz1 = g2.input;
        relu_backward(&cache.pre_mid[i], &mut gz1);
        let g1 = conv2d_circular_backward(&cache.trunk[i], &b.conv1, &gz1)?;
        accumulate(&mut grads.blocks[i].conv1, &g1.weight, &g1.bias);
        gh.add_assign(&g1.input);
    }

    relu_backward(&cache.pre_in, &mut gh);
    let g = conv2d_circular_backward(&cache.input, &p.conv_in, &gh)?;
    accumulate(&mut grads.conv_in, &g.weight, &g.bias);
    g_input.add_assign(&g.input);
    channels_to_complex(&g_input)
}

fn accumulate(dst: &mut ConvLayerParams, gw: &[f64], gb: &[f64]) {
    dst.weight.iter_mut().zip(gw).for_each(|(a, b)| *a += b);
    dst.bias.iter_mut().zip(gb).for_each(|(a, b)| *a += b);
}

/// Evaluate the learned proximal block on a complex image.
pub fn prox_block_apply(m: &ComplexGrid, p: &ProximalBlockParams) -> Result<ComplexGrid> {
    prox_forward(m, p).map(|(out, _)| out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> ComplexGrid {
        ComplexGrid::from_fn(h, w, |_, _| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
    }

    fn randomize_biases(p: &mut ProximalBlockParams, rng: &mut ChaCha8Rng) {
        p.visit_mut(&mut |name, v| {
            if name.ends_with("bias") {
                v.iter_mut().for_each(|b| *b = rng.random_range(-0.2..0.2));
            }
        });
    }

    /// Spelled-out composition of the block, layer by layer.
    fn oracle(m: &ComplexGrid, p: &ProximalBlockParams) -> ComplexGrid {
        let relu = |t: &Tensor| t.map(|v| v.max(0.0));
        let x0 = complex_to_channels(m);
        let mut h = relu(&conv2d_circular(&x0, &p.conv_in).unwrap());
        for b in &p.blocks {
            let r = relu(&conv2d_circular(&h, &b.conv1).unwrap());
            let z = conv2d_circular(&r, &b.conv2).unwrap();
            let mut next = h.clone();
            next.add_assign(&z);
            h = next;
        }
        let mut out = conv2d_circular(&h, &p.conv_out).unwrap();
        out.add_assign(&x0);
        channels_to_complex(&out).unwrap()
    }

    #[test]
    fn zero_weights_are_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = rand_image(&mut rng, 8, 8);
        let p = ProximalBlockParams::zeros(4, 2, 3);
        assert_eq!(prox_block_apply(&m, &p).unwrap(), m);
    }

    #[test]
    fn zero_input_zero_bias_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = ProximalBlockParams::init(4, 1, 3, &mut rng);
        let out = prox_block_apply(&ComplexGrid::zeros(8, 8), &p).unwrap();
        assert_eq!(out.norm(), 0.0);
    }

    #[test]
    fn matches_layer_by_layer_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = ProximalBlockParams::init(4, 1, 3, &mut rng);
        randomize_biases(&mut p, &mut rng);
        let m = rand_image(&mut rng, 8, 8);
        let out = prox_block_apply(&m, &p).unwrap();
        assert!(out.sub(&oracle(&m, &p)).unwrap().norm() < 1e-12);
    }

    #[test]
    fn shift_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut p = ProximalBlockParams::init(4, 2, 3, &mut rng);
        randomize_biases(&mut p, &mut rng);
        let m = rand_image(&mut rng, 8, 6);
        let roll = |g: &ComplexGrid| ComplexGrid::from_fn(8, 6, |r, c| g[((r + 8 - 3) % 8, (c + 6 - 1) % 6)]);
        let a = prox_block_apply(&roll(&m), &p).unwrap();
        let b = roll(&prox_block_apply(&m, &p).unwrap());
        assert!(a.sub(&b).unwrap().norm() < 1e-12);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = ProximalBlockParams::init(3, 1, 3, &mut rng);
        randomize_biases(&mut p, &mut rng);
        let m = rand_image(&mut rng, 6, 6);
        let up = rand_image(&mut rng, 6, 6);
        let loss = |m: &ComplexGrid, p: &ProximalBlockParams| -> f64 {
            crate::grid::inner_product(&up, &prox_block_apply(m, p).unwrap()).unwrap().re
        };
        let (_, cache) = prox_forward(&m, &p).unwrap();
        let mut grads = p.zeros_like();
        let gin = prox_backward(&cache, &p, &up, &mut grads).unwrap();

        let flat = p.flatten();
        let gflat = grads.flatten();
        let h = 1e-6;
        for i in 0..flat.len() {
            let (mut a, mut b) = (flat.clone(), flat.clone());
            a[i] += h;
            b[i] -= h;
            let (mut pa, mut pb) = (p.clone(), p.clone());
            pa.assign(&a).unwrap();
            pb.assign(&b).unwrap();
            let fd = (loss(&m, &pa) - loss(&m, &pb)) / (2.0 * h);
            assert!((fd - gflat[i]).abs() < 1e-6, "param {i}: {fd} vs {}", gflat[i]);
        }
        for i in 0..36 {
            for part in 0..2 {
                let delta = if part == 0 { Complex64::new(h, 0.0) } else { Complex64::new(0.0, h) };
                let (mut a, mut b) = (m.clone(), m.clone());
                a.as_mut_slice()[i] += delta;
                b.as_mut_slice()[i] -= delta;
                let fd = (loss(&a, &p) - loss(&b, &p)) / (2.0 * h);
                let g = gin.as_slice()[i];
                let an = if part == 0 { g.re } else { g.im };
                assert!((fd - an).abs() < 1e-6);
            }
        }
    }
}
