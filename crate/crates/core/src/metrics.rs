//! Image quality metrics. MSE, PSNR and NRMSE act on complex values; SSIM
//! acts on magnitudes.

use serde::Serialize;

use crate::error::{size_err, Error, Result};
use crate::grid::ComplexGrid;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check(x: &ComplexGrid, x_r: &ComplexGrid) -> Result<()> {
    x.check_same_dims(x_r)
}

fn nonzero_reference(x_r: &ComplexGrid) -> Result<()> {
    if x_r.as_slice().iter().all(|z| z.norm_sqr() == 0.0) {
        return Err(Error::Reference("reference image is all zero".into()));
    }
    Ok(())
}

/// Mean of `|x - x_r|^2`.
pub fn mse(x: &ComplexGrid, x_r: &ComplexGrid) -> Result<f64> {
    check(x, x_r)?;
    let s: f64 = x.as_slice().iter().zip(x_r.as_slice()).map(|(a, b)| (a - b).norm_sqr()).sum();
    Ok(s / x.len() as f64)
}

/// `10 log10(max |x_r|^2 / MSE)` in dB; `+inf` when the images are equal.
pub fn psnr(x: &ComplexGrid, x_r: &ComplexGrid) -> Result<f64> {
    check(x, x_r)?;
    nonzero_reference(x_r)?;
    let e = mse(x, x_r)?;
    if e == 0.0 {
        return Ok(f64::INFINITY);
    }
    let peak = x_r.as_slice().iter().fold(0.0f64, |m, z| m.max(z.norm_sqr()));
    Ok(10.0 * (peak / e).log10())
}

/// `sqrt(MSE) / sqrt(mean |x_r|^2)`
pub fn nrmse(x: &ComplexGrid, x_r: &ComplexGrid) -> Result<f64> {
    check(x, x_r)?;
    nonzero_reference(x_r)?;
    let e = mse(x, x_r)?;
    let power = x_r.norm_sqr() / x_r.len() as f64;
    Ok((e / power).sqrt())
}

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - half).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable valid-mode filtering of a real image.
fn filter_valid(img: &[f64], h: usize, w: usize, g: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = g.len();
    let ow = w - n + 1;
    let oh = h - n + 1;
    let mut tmp = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            tmp[r * ow + c] = (0..n).map(|k| g[k] * img[r * w + c + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..n).map(|k| g[k] * tmp[(r + k) * ow + c]).sum();
        }
    }
    (out, oh, ow)
}

/// Mean structural similarity of the magnitude images over all full 11x11
/// Gaussian windows. The dynamic range is the larger of the two peak
/// magnitudes, so the value is symmetric in its arguments.
pub fn ssim(x: &ComplexGrid, x_r: &ComplexGrid) -> Result<f64> {
    check(x, x_r)?;
    let (h, w) = x.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return size_err(format!("image {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"));
    }
    let a: Vec<f64> = x.as_slice().iter().map(|z| z.norm()).collect();
    let b: Vec<f64> = x_r.as_slice().iter().map(|z| z.norm()).collect();
    let range = a.iter().chain(&b).fold(0.0f64, |m, &v| m.max(v));
    if range == 0.0 {
        return Ok(1.0);
    }
    let c1 = (SSIM_K1 * range).powi(2);
    let c2 = (SSIM_K2 * range).powi(2);

    let g = gaussian_window();
    let prod = |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(u, v)| u * v).collect() };
    let (mu_a, oh, ow) = filter_valid(&a, h, w, &g);
    let (mu_b, ..) = filter_valid(&b, h, w, &g);
    let (e_aa, ..) = filter_valid(&prod(&a, &a), h, w, &g);
    let (e_bb, ..) = filter_valid(&prod(&b, &b), h, w, &g);
    let (e_ab, ..) = filter_valid(&prod(&a, &b), h, w, &g);

    let mut total = 0.0;
    for i in 0..oh * ow {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(total / (oh * ow) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricReport {
    pub psnr: f64,
    pub nrmse: f64,
    pub ssim: f64,
    pub mse: f64,
}

impl MetricReport {
    pub fn compute(x: &ComplexGrid, x_r: &ComplexGrid) -> Result<Self> {
        Ok(Self {
            psnr: psnr(x, x_r)?,
            nrmse: nrmse(x, x_r)?,
            ssim: ssim(x, x_r)?,
            mse: mse(x, x_r)?,
        })
    }
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}
