//! The multi-coil Cartesian acquisition model `A = M F S`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{size_err, Error, Result};
use crate::grid::{fft2c, ifft2c, ComplexGrid};

/// Tolerance on `sum_c |S_c|^2 = 1` for normalized sensitivity maps.
pub const SENS_NORM_TOL: f64 = 1e-3;

/// Default support threshold for [`estimate_sensitivities`], as a fraction of
/// the peak root-sum-of-squares.
pub const DEFAULT_SENS_THRESHOLD: f64 = 0.05;

/// Extent of the k-space block used by [`normalize_kspace`].
pub const NORM_BLOCK: usize = 5;

/// Scaling convention applied to k-space before reconstruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Raw signal units.
    None,
    /// Divided by the L2 norm of the centered 5x5 k-space block over all coils.
    Central5x5,
}

impl Normalization {
    pub fn as_str(&self) -> &'static str {
        match self {
            Normalization::None => "none",
            Normalization::Central5x5 => "central5x5",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "none" => Some(Normalization::None),
            "central5x5" => Some(Normalization::Central5x5),
            _ => None,
        }
    }
}

impl std::fmt::Display for Normalization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Coil sensitivity profiles, normalized so that `sum_c |S_c|^2` is either
/// exactly zero (outside the support) or one.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityMaps {
    maps: Vec<ComplexGrid>,
}

impl SensitivityMaps {
    pub fn new(maps: Vec<ComplexGrid>) -> Result<Self> {
        let maps = Self::check_stack(maps)?;
        let (h, w) = maps[0].dims();
        for i in 0..h * w {
            let e: f64 = maps.iter().map(|m| m.as_slice()[i].norm_sqr()).sum();
            if e != 0.0 && (e - 1.0).abs() > SENS_NORM_TOL {
                return Err(Error::Calibration(format!(
                    "sensitivity energy {e} at pixel {i} is neither 0 nor 1"
                )));
            }
        }
        Ok(Self { maps })
    }

    /// Normalize arbitrary coil profiles by their root-sum-of-squares,
    /// zeroing pixels whose RSS falls below `threshold * max(RSS)`.
    pub fn from_profiles(profiles: Vec<ComplexGrid>, threshold: f64) -> Result<Self> {
        let mut maps = Self::check_stack(profiles)?;
        let (h, w) = maps[0].dims();
        let rss: Vec<f64> = (0..h * w)
            .map(|i| maps.iter().map(|m| m.as_slice()[i].norm_sqr()).sum::<f64>().sqrt())
            .collect();
        let peak = rss.iter().cloned().fold(0.0, f64::max);
        if !(peak > 0.0) || !peak.is_finite() {
            return Err(Error::Calibration("coil profiles are identically zero".into()));
        }
        let cutoff = threshold * peak;
        for m in maps.iter_mut() {
            for (z, &r) in m.as_mut_slice().iter_mut().zip(&rss) {
                *z = if r < cutoff || r == 0.0 { Complex64::new(0.0, 0.0) } else { *z / r };
            }
        }
        Ok(Self { maps })
    }

    /// Single coil with unit sensitivity everywhere.
    pub fn uniform(height: usize, width: usize) -> Self {
        Self {
            maps: vec![ComplexGrid::from_fn(height, width, |_, _| Complex64::new(1.0, 0.0))],
        }
    }

    fn check_stack(maps: Vec<ComplexGrid>) -> Result<Vec<ComplexGrid>> {
        let Some(first) = maps.first() else {
            return size_err("at least one coil is required");
        };
        let dims = first.dims();
        if maps.iter().any(|m| m.dims() != dims) {
            return size_err("sensitivity maps must share one grid shape");
        }
        Ok(maps)
    }

    pub fn coils(&self) -> usize {
        self.maps.len()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.maps[0].dims()
    }

    pub fn maps(&self) -> &[ComplexGrid] {
        &self.maps
    }

    pub fn into_maps(self) -> Vec<ComplexGrid> {
        self.maps
    }

    /// `sum_c |S_c|^2` per pixel.
    pub fn energy(&self) -> Vec<f64> {
        let n = self.maps[0].len();
        (0..n)
            .map(|i| self.maps.iter().map(|m| m.as_slice()[i].norm_sqr()).sum())
            .collect()
    }

    pub fn flip_transpose(&self, vertical: bool, horizontal: bool, transpose: bool) -> Self {
        Self {
            maps: self
                .maps
                .iter()
                .map(|m| m.flip_transpose(vertical, horizontal, transpose))
                .collect(),
        }
    }
}

/// Binary k-space sampling pattern with a fully sampled centered
/// calibration block.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingMask {
    height: usize,
    width: usize,
    mask: Vec<bool>,
    calib_h: usize,
    calib_w: usize,
    accel_requested: f64,
}

/// Top-left corner of a centered `bh x bw` block inside an `h x w` grid.
pub fn centered_block_origin(h: usize, w: usize, bh: usize, bw: usize) -> (usize, usize) {
    (h / 2 - bh / 2, w / 2 - bw / 2)
}

impl SamplingMask {
    pub fn new(
        height: usize,
        width: usize,
        mask: Vec<bool>,
        calib_h: usize,
        calib_w: usize,
        accel_requested: f64,
    ) -> Result<Self> {
        if mask.len() != height * width || height == 0 || width == 0 {
            return size_err(format!("mask has {} samples, expected {height}x{width}", mask.len()));
        }
        if calib_h > height || calib_w > width {
            return size_err(format!(
                "calibration {calib_h}x{calib_w} exceeds grid {height}x{width}"
            ));
        }
        if !(accel_requested > 0.0) {
            return Err(Error::Config(format!("acceleration must be positive, got {accel_requested}")));
        }
        if !mask.iter().any(|&b| b) {
            return Err(Error::Config("sampling mask is empty".into()));
        }
        let out = Self {
            height,
            width,
            mask,
            calib_h,
            calib_w,
            accel_requested,
        };
        let (r0, c0) = centered_block_origin(height, width, calib_h, calib_w);
        for r in r0..r0 + calib_h {
            for c in c0..c0 + calib_w {
                if !out.get(r, c) {
                    return Err(Error::Calibration(format!(
                        "calibration sample ({r}, {c}) is not acquired"
                    )));
                }
            }
        }
        Ok(out)
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            mask: vec![true; height * width],
            calib_h: height,
            calib_w: width,
            accel_requested: 1.0,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.mask[r * self.width + c]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.mask
    }

    pub fn calib(&self) -> (usize, usize) {
        (self.calib_h, self.calib_w)
    }

    pub fn accel_requested(&self) -> f64 {
        self.accel_requested
    }

    pub fn sampled(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    /// Grid points divided by sampled points.
    pub fn effective_acceleration(&self) -> f64 {
        self.mask.len() as f64 / self.sampled() as f64
    }

    pub fn in_calibration(&self, r: usize, c: usize) -> bool {
        let (r0, c0) = centered_block_origin(self.height, self.width, self.calib_h, self.calib_w);
        (r0..r0 + self.calib_h).contains(&r) && (c0..c0 + self.calib_w).contains(&c)
    }

    pub fn apply(&self, plane: &ComplexGrid) -> Result<ComplexGrid> {
        if plane.dims() != self.dims() {
            return size_err(format!(
                "plane {:?} does not match mask {:?}",
                plane.dims(),
                self.dims()
            ));
        }
        let mut out = plane.clone();
        for (z, &m) in out.as_mut_slice().iter_mut().zip(&self.mask) {
            if !m {
                *z = Complex64::new(0.0, 0.0);
            }
        }
        Ok(out)
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.mask.iter().map(|&b| b as u8).collect()
    }
}

/// Stack of per-coil k-space planes.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiCoilKspace {
    planes: Vec<ComplexGrid>,
    mask: Option<SamplingMask>,
    normalization: Normalization,
}

impl MultiCoilKspace {
    pub fn new(planes: Vec<ComplexGrid>) -> Result<Self> {
        let Some(first) = planes.first() else {
            return size_err("k-space needs at least one coil");
        };
        let dims = first.dims();
        if planes.iter().any(|p| p.dims() != dims) {
            return size_err("k-space planes must share one grid shape");
        }
        Ok(Self {
            planes,
            mask: None,
            normalization: Normalization::None,
        })
    }

    /// Attach a mask; fails unless every plane is zero off the mask support.
    pub fn with_mask(mut self, mask: SamplingMask) -> Result<Self> {
        if mask.dims() != self.dims() {
            return size_err("mask and k-space shapes differ");
        }
        for p in &self.planes {
            for (z, &m) in p.as_slice().iter().zip(mask.as_slice()) {
                if !m && *z != Complex64::new(0.0, 0.0) {
                    return Err(Error::Config("k-space has samples outside the attached mask".into()));
                }
            }
        }
        self.mask = Some(mask);
        Ok(self)
    }

    pub fn with_normalization(mut self, normalization: Normalization) -> Self {
        self.normalization = normalization;
        self
    }

    pub fn zeros_like(&self) -> Self {
        let (h, w) = self.dims();
        Self {
            planes: vec![ComplexGrid::zeros(h, w); self.coils()],
            mask: None,
            normalization: self.normalization,
        }
    }

    pub fn coils(&self) -> usize {
        self.planes.len()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.planes[0].dims()
    }

    pub fn planes(&self) -> &[ComplexGrid] {
        &self.planes
    }

    pub fn planes_mut(&mut self) -> &mut [ComplexGrid] {
        &mut self.planes
    }

    pub fn mask(&self) -> Option<&SamplingMask> {
        self.mask.as_ref()
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn norm_sqr(&self) -> f64 {
        self.planes.iter().map(|p| p.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            planes: self.planes.iter().map(|p| p.scale(s)).collect(),
            mask: self.mask.clone(),
            normalization: self.normalization,
        }
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        if other.coils() != self.coils() {
            return size_err(format!("coil counts differ: {} vs {}", self.coils(), other.coils()));
        }
        let planes = self
            .planes
            .iter()
            .zip(&other.planes)
            .map(|(a, b)| a.sub(b))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            planes,
            mask: None,
            normalization: self.normalization,
        })
    }

    /// Apply a `C x C` coil-mixing matrix (row-major) at every sample, e.g. a
    /// noise pre-whitening transform.
    pub fn mix_coils(&self, matrix: &[Complex64]) -> Result<Self> {
        let c = self.coils();
        if matrix.len() != c * c {
            return size_err(format!("coil mixing matrix must be {c}x{c}"));
        }
        let (h, w) = self.dims();
        let mut planes = vec![ComplexGrid::zeros(h, w); c];
        for i in 0..h * w {
            for (out_c, plane) in planes.iter_mut().enumerate() {
                let mut acc = Complex64::new(0.0, 0.0);
                for in_c in 0..c {
                    acc += matrix[out_c * c + in_c] * self.planes[in_c].as_slice()[i];
                }
                plane.as_mut_slice()[i] = acc;
            }
        }
        Ok(Self {
            planes,
            mask: self.mask.clone(),
            normalization: self.normalization,
        })
    }
}

/// `A = M F S` for one slice.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagingModel {
    sens: SensitivityMaps,
    mask: SamplingMask,
}

impl ImagingModel {
    pub fn new(sens: SensitivityMaps, mask: SamplingMask) -> Result<Self> {
        if sens.dims() != mask.dims() {
            return size_err(format!(
                "sensitivity maps {:?} and mask {:?} disagree",
                sens.dims(),
                mask.dims()
            ));
        }
        Ok(Self { sens, mask })
    }

    pub fn sens(&self) -> &SensitivityMaps {
        &self.sens
    }

    pub fn mask(&self) -> &SamplingMask {
        &self.mask
    }

    pub fn dims(&self) -> (usize, usize) {
        self.mask.dims()
    }

    pub fn coils(&self) -> usize {
        self.sens.coils()
    }

    /// `A m`: plane `c` is `mask * fft2c(S_c * m)`.
    pub fn forward(&self, m: &ComplexGrid) -> Result<MultiCoilKspace> {
        if m.dims() != self.dims() {
            return size_err(format!("image {:?} does not match model {:?}", m.dims(), self.dims()));
        }
        let planes = self
            .sens
            .maps()
            .iter()
            .map(|s| self.mask.apply(&fft2c(&s.mul(m)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(MultiCoilKspace {
            planes,
            mask: Some(self.mask.clone()),
            normalization: Normalization::None,
        })
    }

    /// `A^H y = sum_c conj(S_c) * ifft2c(mask * y_c)`
    pub fn adjoint(&self, y: &MultiCoilKspace) -> Result<ComplexGrid> {
        if y.dims() != self.dims() || y.coils() != self.coils() {
            return size_err(format!(
                "k-space {}x{:?} does not match model {}x{:?}",
                y.coils(),
                y.dims(),
                self.coils(),
                self.dims()
            ));
        }
        let (h, w) = self.dims();
        let mut out = ComplexGrid::zeros(h, w);
        for (s, plane) in self.sens.maps().iter().zip(y.planes()) {
            let img = ifft2c(&self.mask.apply(plane)?);
            for ((o, &si), &v) in out
                .as_mut_slice()
                .iter_mut()
                .zip(s.as_slice())
                .zip(img.as_slice())
            {
                *o += si.conj() * v;
            }
        }
        Ok(out)
    }

    /// `A^H A m`
    pub fn normal(&self, m: &ComplexGrid) -> Result<ComplexGrid> {
        self.adjoint(&self.forward(m)?)
    }
}

/// Baseline reconstruction; identical to [`ImagingModel::adjoint`].
pub fn zero_filled_recon(model: &ImagingModel, y: &MultiCoilKspace) -> Result<ComplexGrid> {
    model.adjoint(y)
}

/// Separable raised-cosine taper with non-zero end samples.
pub fn raised_cosine(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let x = (i + 1) as f64 / (n + 1) as f64;
            0.5 * (1.0 - (2.0 * std::f64::consts::PI * x).cos())
        })
        .collect()
}

/// Low-resolution calibration estimate of coil sensitivities.
///
/// The centered `calib` block of every coil is tapered with a raised-cosine
/// window, zero-filled to the full grid and transformed back; each
/// low-resolution coil image is divided by the root-sum-of-squares across
/// coils. Pixels whose RSS is below `threshold * max(RSS)` are set to zero.
/// When `calib` is `None` the extents of the attached mask are used.
pub fn estimate_sensitivities(
    data: &MultiCoilKspace,
    calib: Option<(usize, usize)>,
    threshold: f64,
) -> Result<SensitivityMaps> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Config(format!("threshold must lie in (0, 1), got {threshold}")));
    }
    let (ch, cw) = match (calib, data.mask()) {
        (Some(c), _) => c,
        (None, Some(m)) => m.calib(),
        (None, None) => {
            return Err(Error::Calibration("no calibration region given or attached".into()))
        }
    };
    let (h, w) = data.dims();
    if ch < 2 || cw < 2 || ch > h || cw > w {
        return Err(Error::Calibration(format!(
            "calibration block {ch}x{cw} unusable for a {h}x{w} grid"
        )));
    }
    if let Some(mask) = data.mask() {
        let (r0, c0) = centered_block_origin(h, w, ch, cw);
        let covered = (r0..r0 + ch).all(|r| (c0..c0 + cw).all(|c| mask.get(r, c)));
        if !covered {
            return Err(Error::Calibration(format!(
                "calibration block {ch}x{cw} is not fully sampled"
            )));
        }
    }

    let wy = raised_cosine(ch);
    let wx = raised_cosine(cw);
    let (r0, c0) = centered_block_origin(h, w, ch, cw);
    let lowres: Vec<ComplexGrid> = data
        .planes()
        .iter()
        .map(|p| {
            let mut block = ComplexGrid::zeros(h, w);
            for r in 0..ch {
                for c in 0..cw {
                    block[(r0 + r, c0 + c)] = p[(r0 + r, c0 + c)] * (wy[r] * wx[c]);
                }
            }
            ifft2c(&block)
        })
        .collect();
    SensitivityMaps::from_profiles(lowres, threshold)
}

/// L2 norm over all coils of the centered 5x5 block.
pub fn central_block_norm(y: &MultiCoilKspace) -> f64 {
    let (h, w) = y.dims();
    let (r0, c0) = centered_block_origin(h, w, NORM_BLOCK, NORM_BLOCK);
    y.planes()
        .iter()
        .map(|p| {
            let mut acc = 0.0;
            for r in r0..r0 + NORM_BLOCK {
                for c in c0..c0 + NORM_BLOCK {
                    acc += p[(r, c)].norm_sqr();
                }
            }
            acc
        })
        .sum::<f64>()
        .sqrt()
}

/// Divide k-space by the norm of its central 5x5 block; returns the scaled
/// data (tagged [`Normalization::Central5x5`]) and the scale.
pub fn normalize_kspace(y: &MultiCoilKspace) -> Result<(MultiCoilKspace, f64)> {
    let (h, w) = y.dims();
    if h < NORM_BLOCK || w < NORM_BLOCK {
        return size_err(format!("normalization needs at least 5x5 samples, got {h}x{w}"));
    }
    let scale = central_block_norm(y);
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::Normalization(format!(
            "central k-space block has norm {scale}; acquisition is empty"
        )));
    }
    let out = y.scale(1.0 / scale).with_normalization(Normalization::Central5x5);
    Ok((out, scale))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::inner_product_stack;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_grid(rng: &mut ChaCha8Rng, h: usize, w: usize) -> ComplexGrid {
        ComplexGrid::from_fn(h, w, |_, _| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
    }

    fn rand_model(rng: &mut ChaCha8Rng, coils: usize, h: usize, w: usize) -> ImagingModel {
        let profiles = (0..coils).map(|_| rand_grid(rng, h, w)).collect();
        let sens = SensitivityMaps::from_profiles(profiles, 1e-6).unwrap();
        let mut bits: Vec<bool> = (0..h * w).map(|_| rng.random_bool(0.4)).collect();
        let (r0, c0) = centered_block_origin(h, w, 4, 4);
        for r in r0..r0 + 4 {
            for c in c0..c0 + 4 {
                bits[r * w + c] = true;
            }
        }
        let mask = SamplingMask::new(h, w, bits, 4, 4, 2.5).unwrap();
        ImagingModel::new(sens, mask).unwrap()
    }

    #[test]
    fn single_uniform_coil_full_mask_is_fft() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = rand_grid(&mut rng, 8, 8);
        let model = ImagingModel::new(SensitivityMaps::uniform(8, 8), SamplingMask::full(8, 8)).unwrap();
        let y = model.forward(&m).unwrap();
        assert_eq!(y.planes()[0], fft2c(&m));
        let back = model.adjoint(&y).unwrap();
        assert!(back.sub(&m).unwrap().norm() < 1e-12);
        assert_eq!(model.forward(&ComplexGrid::zeros(8, 8)).unwrap().norm(), 0.0);
        let y0 = model.forward(&ComplexGrid::zeros(8, 8)).unwrap();
        assert_eq!(model.adjoint(&y0).unwrap().norm(), 0.0);
    }

    #[test]
    fn adjoint_dot_test() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let model = rand_model(&mut rng, 4, 16, 16);
        let m = rand_grid(&mut rng, 16, 16);
        let y = MultiCoilKspace::new((0..4).map(|_| rand_grid(&mut rng, 16, 16)).collect()).unwrap();
        let am = model.forward(&m).unwrap();
        let lhs = inner_product_stack(am.planes(), y.planes()).unwrap();
        let aty = model.adjoint(&y).unwrap();
        let rhs = crate::grid::inner_product(&m, &aty).unwrap();
        assert!((lhs - rhs).norm() / (am.norm() * y.norm()) < 1e-12);
    }

    #[test]
    fn forward_respects_mask_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = rand_model(&mut rng, 3, 12, 10);
        let y = model.forward(&rand_grid(&mut rng, 12, 10)).unwrap();
        for p in y.planes() {
            for (z, &b) in p.as_slice().iter().zip(model.mask().as_slice()) {
                if !b {
                    assert_eq!(*z, Complex64::new(0.0, 0.0));
                }
            }
        }
        assert!(y.clone().with_mask(model.mask().clone()).is_ok());
    }

    #[test]
    fn normal_operator_is_identity_with_full_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let profiles = (0..4).map(|_| rand_grid(&mut rng, 16, 16)).collect();
        let sens = SensitivityMaps::from_profiles(profiles, 1e-6).unwrap();
        let model = ImagingModel::new(sens, SamplingMask::full(16, 16)).unwrap();
        let m = rand_grid(&mut rng, 16, 16);
        let back = model.normal(&m).unwrap();
        assert!(back.sub(&m).unwrap().norm() / m.norm() < 1e-6);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = rand_model(&mut rng, 2, 8, 8);
        assert!(matches!(model.forward(&ComplexGrid::zeros(8, 9)), Err(Error::Size(_))));
        let y = MultiCoilKspace::new(vec![ComplexGrid::zeros(8, 8)]).unwrap();
        assert!(matches!(model.adjoint(&y), Err(Error::Size(_))));
    }

    #[test]
    fn normalization_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let y = MultiCoilKspace::new((0..3).map(|_| rand_grid(&mut rng, 9, 8)).collect()).unwrap();
        let (n, s) = normalize_kspace(&y).unwrap();
        // independent recomputation of the central block norm
        let mut acc = 0.0;
        for p in n.planes() {
            for r in 2..7 {
                for c in 2..7 {
                    acc += p[(r, c)].norm_sqr();
                }
            }
        }
        assert!((acc.sqrt() - 1.0).abs() < 1e-12);
        assert_eq!(n.normalization(), Normalization::Central5x5);

        let (n2, s2) = normalize_kspace(&n).unwrap();
        assert!((s2 - 1.0).abs() < 1e-12);
        assert!(n2.sub(&n).unwrap().norm() < 1e-12);

        let (n10, s10) = normalize_kspace(&y.scale(10.0)).unwrap();
        assert!((s10 / s - 10.0).abs() < 1e-12);
        assert!(n10.sub(&n).unwrap().norm() < 1e-12);

        let zero = y.zeros_like();
        assert!(matches!(normalize_kspace(&zero), Err(Error::Normalization(_))));
        let small = MultiCoilKspace::new(vec![ComplexGrid::zeros(4, 8)]).unwrap();
        assert!(matches!(normalize_kspace(&small), Err(Error::Size(_))));
    }

    #[test]
    fn single_coil_sensitivity_has_unit_magnitude() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let img = ComplexGrid::from_fn(16, 16, |r, c| {
            Complex64::from_polar(1.0 + 0.1 * r as f64, 0.05 * c as f64)
        });
        let _ = &mut rng;
        let y = MultiCoilKspace::new(vec![fft2c(&img)]).unwrap();
        let s = estimate_sensitivities(&y, Some((8, 8)), 0.05).unwrap();
        let energy = s.energy();
        assert!(energy.iter().all(|&e| e == 0.0 || (e - 1.0).abs() < 1e-9));
        assert!(energy.iter().filter(|&&e| e > 0.0).count() > 128);
    }

    #[test]
    fn sensitivity_estimation_errors() {
        let y = MultiCoilKspace::new(vec![ComplexGrid::zeros(16, 16); 2]).unwrap();
        assert!(matches!(estimate_sensitivities(&y, Some((8, 8)), 0.05), Err(Error::Calibration(_))));
        let y = MultiCoilKspace::new(vec![fft2c(&ComplexGrid::from_fn(16, 16, |_, _| Complex64::new(1.0, 0.0)))]).unwrap();
        assert!(matches!(estimate_sensitivities(&y, Some((1, 8)), 0.05), Err(Error::Calibration(_))));
        assert!(matches!(estimate_sensitivities(&y, None, 0.05), Err(Error::Calibration(_))));
    }

    #[test]
    fn coil_mixing_identity_and_swap() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let y = MultiCoilKspace::new((0..2).map(|_| rand_grid(&mut rng, 6, 6)).collect()).unwrap();
        let one = Complex64::new(1.0, 0.0);
        let zero = Complex64::new(0.0, 0.0);
        assert_eq!(y.mix_coils(&[one, zero, zero, one]).unwrap(), y);
        let swapped = y.mix_coils(&[zero, one, one, zero]).unwrap();
        assert_eq!(swapped.planes()[0], y.planes()[1]);
        assert!(y.mix_coils(&[one]).is_err());
    }

    #[test]
    fn mask_invariants() {
        assert!(SamplingMask::new(4, 4, vec![false; 16], 0, 0, 2.0).is_err());
        let mut bits = vec![false; 16];
        bits[0] = true;
        assert!(matches!(SamplingMask::new(4, 4, bits, 2, 2, 2.0), Err(Error::Calibration(_))));
        let m = SamplingMask::full(4, 4);
        assert_eq!(m.effective_acceleration(), 1.0);
    }
}
