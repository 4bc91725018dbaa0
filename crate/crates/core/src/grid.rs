//! Dense complex 2-D grids and the centered orthonormal Fourier transform.
//!
//! k-space is stored centered: the DC sample of an `H x W` plane sits at
//! `(H / 2, W / 2)` (integer division) for both even and odd extents.

use std::cell::RefCell;
use std::ops::{Index, IndexMut};

use num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};

use crate::error::{size_err, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexGrid {
    height: usize,
    width: usize,
    data: Vec<Complex64>,
}

impl ComplexGrid {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![Complex64::new(0.0, 0.0); height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<Complex64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return size_err(format!("grid extents must be positive, got {height}x{width}"));
        }
        if data.len() != height * width {
            return size_err(format!(
                "grid data has {} samples, expected {height}x{width}",
                data.len()
            ));
        }
        Ok(Self { height, width, data })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<Complex64> {
        self.data
    }

    pub fn center(&self) -> (usize, usize) {
        (self.height / 2, self.width / 2)
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&z| f(z)).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|z| z * s)
    }

    /// Elementwise combination of two equally shaped grids.
    pub fn zip_with(&self, other: &Self, f: impl Fn(Complex64, Complex64) -> Complex64) -> Result<Self> {
        self.check_same_dims(other)?;
        Ok(Self {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a * b)
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: Complex64, other: &Self) -> Result<()> {
        self.check_same_dims(other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn check_same_dims(&self, other: &Self) -> Result<()> {
        if self.dims() != other.dims() {
            return size_err(format!(
                "grid shapes differ: {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            ));
        }
        Ok(())
    }

    /// Flip rows (`vertical`) and/or columns (`horizontal`), optionally
    /// followed by a transpose. Pure index permutation.
    pub fn flip_transpose(&self, vertical: bool, horizontal: bool, transpose: bool) -> Self {
        let (h, w) = self.dims();
        let flipped = Self::from_fn(h, w, |r, c| {
            let rr = if vertical { h - 1 - r } else { r };
            let cc = if horizontal { w - 1 - c } else { c };
            self[(rr, cc)]
        });
        if transpose {
            Self::from_fn(w, h, |r, c| flipped[(c, r)])
        } else {
            flipped
        }
    }
}

impl Index<(usize, usize)> for ComplexGrid {
    type Output = Complex64;

    fn index(&self, (r, c): (usize, usize)) -> &Complex64 {
        &self.data[r * self.width + c]
    }
}

impl IndexMut<(usize, usize)> for ComplexGrid {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut Complex64 {
        &mut self.data[r * self.width + c]
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, direction: FftDirection) -> std::sync::Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft(len, direction))
}

fn centered_transform(img: &ComplexGrid, direction: FftDirection) -> ComplexGrid {
    let (h, w) = img.dims();
    let (ch, cw) = (h / 2, w / 2);

    // ifftshift folded into the gather
    let mut buf: Vec<Complex64> = Vec::with_capacity(h * w);
    for r in 0..h {
        let src = (r + ch) % h;
        for c in 0..w {
            buf.push(img.data[src * w + (c + cw) % w]);
        }
    }

    let row_fft = plan(w, direction);
    row_fft.process(&mut buf);

    let col_fft = plan(h, direction);
    let mut col = vec![Complex64::new(0.0, 0.0); h];
    for c in 0..w {
        for r in 0..h {
            col[r] = buf[r * w + c];
        }
        col_fft.process(&mut col);
        for r in 0..h {
            buf[r * w + c] = col[r];
        }
    }

    // fftshift folded into the scatter
    let scale = 1.0 / ((h * w) as f64).sqrt();
    let mut out = vec![Complex64::new(0.0, 0.0); h * w];
    for r in 0..h {
        let dst = (r + ch) % h;
        for c in 0..w {
            out[dst * w + (c + cw) % w] = buf[r * w + c] * scale;
        }
    }
    ComplexGrid {
        height: h,
        width: w,
        data: out,
    }
}

/// Centered, orthonormal forward 2-D DFT.
pub fn fft2c(img: &ComplexGrid) -> ComplexGrid {
    centered_transform(img, FftDirection::Forward)
}

/// Inverse of [`fft2c`].
pub fn ifft2c(ksp: &ComplexGrid) -> ComplexGrid {
    centered_transform(ksp, FftDirection::Inverse)
}

/// Periodic extension by `pad` samples on every side.
pub fn circular_pad(img: &ComplexGrid, pad: usize) -> Result<ComplexGrid> {
    let (h, w) = img.dims();
    if pad > h.min(w) {
        return size_err(format!("pad {pad} exceeds the min extent of {h}x{w}"));
    }
    let (oh, ow) = (h + 2 * pad, w + 2 * pad);
    Ok(ComplexGrid::from_fn(oh, ow, |r, c| {
        let sr = (r + h * pad - pad) % h;
        let sc = (c + w * pad - pad) % w;
        img[(sr, sc)]
    }))
}

/// Centered `target_h x target_w` window; the inverse of [`circular_pad`].
pub fn center_crop(img: &ComplexGrid, target_h: usize, target_w: usize) -> Result<ComplexGrid> {
    let (h, w) = img.dims();
    if target_h > h || target_w > w || target_h == 0 || target_w == 0 {
        return size_err(format!("cannot crop {h}x{w} to {target_h}x{target_w}"));
    }
    let r0 = (h - target_h) / 2;
    let c0 = (w - target_w) / 2;
    Ok(ComplexGrid::from_fn(target_h, target_w, |r, c| img[(r + r0, c + c0)]))
}

/// `sum(conj(a_i) * b_i)`
pub fn inner_product(a: &ComplexGrid, b: &ComplexGrid) -> Result<Complex64> {
    a.check_same_dims(b)?;
    Ok(a.data.iter().zip(&b.data).map(|(x, y)| x.conj() * y).sum())
}

/// Inner product over stacks of grids (e.g. multi-coil planes).
pub fn inner_product_stack(a: &[ComplexGrid], b: &[ComplexGrid]) -> Result<Complex64> {
    if a.len() != b.len() {
        return size_err(format!("stack lengths differ: {} vs {}", a.len(), b.len()));
    }
    let mut acc = Complex64::new(0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        acc += inner_product(x, y)?;
    }
    Ok(acc)
}
