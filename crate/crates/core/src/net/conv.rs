use rand::Rng;

use super::{ParamSet, Tensor};
use crate::error::{size_err, Error, Result};

/// One circular convolution layer (cross-correlation plus bias).
/// `weight` is laid out `out_ch x in_ch x kh x kw`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayerParams {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Gradients of one conv layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub input: Tensor,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvLayerParams {
    pub fn zeros(in_ch: usize, out_ch: usize, k: usize, stride: usize) -> Self {
        Self {
            in_ch,
            out_ch,
            kh: k,
            kw: k,
            stride,
            weight: vec![0.0; out_ch * in_ch * k * k],
            bias: vec![0.0; out_ch],
        }
    }

    /// Uniform weights in `+-1/sqrt(fan_in)`, zero bias.
    pub fn init(in_ch: usize, out_ch: usize, k: usize, stride: usize, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(in_ch, out_ch, k, stride);
        let bound = 1.0 / ((in_ch * k * k) as f64).sqrt();
        p.weight.iter_mut().for_each(|w| *w = rng.random_range(-bound..bound));
        p
    }

    pub fn validate(&self) -> Result<()> {
        if self.kh.is_multiple_of(2) || self.kw.is_multiple_of(2) {
            return Err(Error::Config(format!("kernel {}x{} must have odd extents", self.kh, self.kw)));
        }
        if self.stride == 0 {
            return Err(Error::Config("stride must be positive".into()));
        }
        if self.weight.len() != self.out_ch * self.in_ch * self.kh * self.kw || self.bias.len() != self.out_ch {
            return size_err("conv parameter lengths do not match the declared shape");
        }
        Ok(())
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_ch, self.in_ch, self.kh, self.kw]
    }

    #[inline]
    fn w(&self, o: usize, c: usize, di: usize, dj: usize) -> f64 {
        self.weight[((o * self.in_ch + c) * self.kh + di) * self.kw + dj]
    }

    fn output_dims(&self, x: &Tensor) -> Result<(usize, usize)> {
        if x.channels() != self.in_ch {
            return size_err(format!("conv expects {} input channels, got {}", self.in_ch, x.channels()));
        }
        let s = self.stride;
        if s == 0 || !x.height().is_multiple_of(s) || !x.width().is_multiple_of(s) {
            return size_err(format!(
                "stride {s} does not divide input {}x{}",
                x.height(),
                x.width()
            ));
        }
        Ok((x.height() / s, x.width() / s))
    }

    /// Source index tables: `rows[di][i] = (s*i + di - kh/2) mod H`.
    fn index_tables(&self, h: usize, w: usize, oh: usize, ow: usize) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
        let s = self.stride;
        let rows = (0..self.kh)
            .map(|di| {
                (0..oh)
                    .map(|i| (s * i + di + h * self.kh - self.kh / 2) % h)
                    .collect()
            })
            .collect();
        let cols = (0..self.kw)
            .map(|dj| {
                (0..ow)
                    .map(|j| (s * j + dj + w * self.kw - self.kw / 2) % w)
                    .collect()
            })
            .collect();
        (rows, cols)
    }
}

impl ParamSet for ConvLayerParams {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        f("weight", &self.weight_shape(), &self.weight);
        f("bias", &[self.out_ch], &self.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        f("weight", &mut self.weight);
        f("bias", &mut self.bias);
    }
}

/// Circular cross-correlation: every tap wraps around the image edges, as if
/// the input had been circularly padded by half the kernel and the valid
/// part of the output kept.
pub fn conv2d_circular(x: &Tensor, p: &ConvLayerParams) -> Result<Tensor> {
    p.validate()?;
    let (oh, ow) = p.output_dims(x)?;
    let (h, w) = (x.height(), x.width());
    let (rows, cols) = p.index_tables(h, w, oh, ow);
    let mut out = Tensor::zeros(p.out_ch, oh, ow);
    for o in 0..p.out_ch {
        let dst = out.channel_mut(o);
        dst.iter_mut().for_each(|v| *v = p.bias[o]);
        for c in 0..p.in_ch {
            let src = x.channel(c);
            for di in 0..p.kh {
                for dj in 0..p.kw {
                    let wv = p.w(o, c, di, dj);
                    if wv == 0.0 {
                        continue;
                    }
                    let cidx = &cols[dj];
                    for i in 0..oh {
                        let srow = &src[rows[di][i] * w..rows[di][i] * w + w];
                        let drow = &mut dst[i * ow..(i + 1) * ow];
                        for (d, &sc) in drow.iter_mut().zip(cidx) {
                            *d += wv * srow[sc];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Reverse-mode derivatives of [`conv2d_circular`] given the upstream
/// gradient `gout` of its output.
pub fn conv2d_circular_backward(x: &Tensor, p: &ConvLayerParams, gout: &Tensor) -> Result<ConvGrads> {
    p.validate()?;
    let (oh, ow) = p.output_dims(x)?;
    if gout.shape() != (p.out_ch, oh, ow) {
        return size_err(format!(
            "upstream gradient {:?} does not match conv output {:?}",
            gout.shape(),
            (p.out_ch, oh, ow)
        ));
    }
    let (h, w) = (x.height(), x.width());
    let (rows, cols) = p.index_tables(h, w, oh, ow);
    let mut gx = Tensor::zeros(p.in_ch, h, w);
    let mut gw = vec![0.0; p.weight.len()];
    let mut gb = vec![0.0; p.out_ch];

    for o in 0..p.out_ch {
        let g = gout.channel(o);
        gb[o] = g.iter().sum();
        for c in 0..p.in_ch {
            let src = x.channel(c);
            for di in 0..p.kh {
                for dj in 0..p.kw {
                    let widx = ((o * p.in_ch + c) * p.kh + di) * p.kw + dj;
                    let wv = p.weight[widx];
                    let cidx = &cols[dj];
                    let mut acc = 0.0;
                    for i in 0..oh {
                        let base = rows[di][i] * w;
                        let grow = &g[i * ow..(i + 1) * ow];
                        for (&gv, &sc) in grow.iter().zip(cidx) {
                            acc += gv * src[base + sc];
                        }
                        if wv != 0.0 {
                            let gxc = gx.channel_mut(c);
                            for (&gv, &sc) in grow.iter().zip(cidx) {
                                gxc[base + sc] += wv * gv;
                            }
                        }
                    }
                    gw[widx] += acc;
                }
            }
        }
    }
    Ok(ConvGrads {
        input: gx,
        weight: gw,
        bias: gb,
    })
}
