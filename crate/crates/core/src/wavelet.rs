//! Orthonormal periodic 2-D wavelet transforms (Haar, Daubechies-4).
//!
//! Coefficients use the nested quadrant layout: after each level the
//! approximation occupies the top-left quadrant of the current window, with
//! horizontal, vertical and diagonal details in the remaining three.

use num_complex::Complex64;

use crate::error::{size_err, Result};
use crate::grid::ComplexGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Wavelet {
    #[default]
    Haar,
    Daubechies4,
}

impl Wavelet {
    fn lowpass(&self) -> &'static [f64] {
        const H: f64 = std::f64::consts::FRAC_1_SQRT_2;
        // D4 scaling filter, (1 + sqrt3, 3 + sqrt3, 3 - sqrt3, 1 - sqrt3) / (4 sqrt2)
        const D4: [f64; 4] = [
            0.482_962_913_144_534_16,
            0.836_516_303_737_807_9,
            0.224_143_868_042_013_4,
            -0.129_409_522_551_260_37,
        ];
        match self {
            Wavelet::Haar => &[H, H],
            Wavelet::Daubechies4 => &D4,
        }
    }

    fn highpass(&self) -> Vec<f64> {
        let h = self.lowpass();
        let n = h.len();
        (0..n)
            .map(|k| if k % 2 == 0 { h[n - 1 - k] } else { -h[n - 1 - k] })
            .collect()
    }
}

/// Largest number of levels a `h x w` grid supports.
pub fn max_levels(h: usize, w: usize) -> usize {
    let mut l = 0;
    while (h >> l).is_multiple_of(2) && (w >> l).is_multiple_of(2) && (h >> l) >= 2 && (w >> l) >= 2 {
        l += 1;
    }
    l
}

fn check_dims(h: usize, w: usize, levels: usize) -> Result<()> {
    if levels == 0 {
        return size_err("wavelet levels must be >= 1");
    }
    let block = 1usize << levels;
    if !h.is_multiple_of(block) || !w.is_multiple_of(block) {
        return size_err(format!(
            "{h}x{w} is not divisible by 2^{levels}; pad to a multiple of {block}"
        ));
    }
    Ok(())
}

fn analyze(x: &[Complex64], lo: &[f64], hi: &[f64], out: &mut [Complex64]) {
    let n = x.len();
    let half = n / 2;
    for i in 0..half {
        let mut a = Complex64::new(0.0, 0.0);
        let mut d = Complex64::new(0.0, 0.0);
        for (k, (&l, &h)) in lo.iter().zip(hi).enumerate() {
            let v = x[(2 * i + k) % n];
            a += v * l;
            d += v * h;
        }
        out[i] = a;
        out[half + i] = d;
    }
}

fn synthesize(c: &[Complex64], lo: &[f64], hi: &[f64], out: &mut [Complex64]) {
    let n = c.len();
    let half = n / 2;
    out.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
    for i in 0..half {
        let (a, d) = (c[i], c[half + i]);
        for (k, (&l, &h)) in lo.iter().zip(hi).enumerate() {
            out[(2 * i + k) % n] += a * l + d * h;
        }
    }
}

/// Apply `f` along every row and then every column of the top-left
/// `rows x cols` window.
fn separable(
    g: &mut ComplexGrid,
    rows: usize,
    cols: usize,
    rows_first: bool,
    f: &dyn Fn(&[Complex64], &mut [Complex64]),
) {
    let pass_rows = |g: &mut ComplexGrid| {
        let mut inp = vec![Complex64::new(0.0, 0.0); cols];
        let mut out = vec![Complex64::new(0.0, 0.0); cols];
        for r in 0..rows {
            for c in 0..cols {
                inp[c] = g[(r, c)];
            }
            f(&inp, &mut out);
            for c in 0..cols {
                g[(r, c)] = out[c];
            }
        }
    };
    let pass_cols = |g: &mut ComplexGrid| {
        let mut inp = vec![Complex64::new(0.0, 0.0); rows];
        let mut out = vec![Complex64::new(0.0, 0.0); rows];
        for c in 0..cols {
            for r in 0..rows {
                inp[r] = g[(r, c)];
            }
            f(&inp, &mut out);
            for r in 0..rows {
                g[(r, c)] = out[r];
            }
        }
    };
    if rows_first {
        pass_rows(g);
        pass_cols(g);
    } else {
        pass_cols(g);
        pass_rows(g);
    }
}

pub fn wavelet_forward(img: &ComplexGrid, levels: usize, family: Wavelet) -> Result<ComplexGrid> {
    let (h, w) = img.dims();
    check_dims(h, w, levels)?;
    let lo = family.lowpass();
    let hi = family.highpass();
    let mut g = img.clone();
    for l in 0..levels {
        let (rows, cols) = (h >> l, w >> l);
        separable(&mut g, rows, cols, true, &|x, out| analyze(x, lo, &hi, out));
    }
    Ok(g)
}

pub fn wavelet_inverse(coeffs: &ComplexGrid, levels: usize, family: Wavelet) -> Result<ComplexGrid> {
    let (h, w) = coeffs.dims();
    check_dims(h, w, levels)?;
    let lo = family.lowpass();
    let hi = family.highpass();
    let mut g = coeffs.clone();
    for l in (0..levels).rev() {
        let (rows, cols) = (h >> l, w >> l);
        separable(&mut g, rows, cols, false, &|x, out| synthesize(x, lo, &hi, out));
    }
    Ok(g)
}

/// Complex soft-thresholding: shrink the modulus by `tau`, keep the phase.
pub fn soft_threshold(x: Complex64, tau: f64) -> Complex64 {
    let mag = x.norm();
    if mag <= tau || mag == 0.0 {
        Complex64::new(0.0, 0.0)
    } else {
        x * ((mag - tau) / mag)
    }
}

pub fn soft_threshold_grid(g: &ComplexGrid, tau: f64) -> ComplexGrid {
    g.map(|z| soft_threshold(z, tau))
}
