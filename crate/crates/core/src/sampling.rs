//! Variable-density Poisson-disc sampling masks.
//!
//! Samples are drawn on the discrete k-space grid with a minimum-distance
//! rule whose radius grows linearly with the normalized distance from the
//! k-space center:
//!
//! ```text
//! r(k) = r0 * (1 + alpha * rho(k)),   rho = sqrt((dy / (H/2))^2 + (dx / (W/2))^2)
//! ```
//!
//! Any two non-calibration samples `a`, `b` satisfy
//! `|a - b| >= max(r(a), r(b))`. Generation is Bridson-style dart throwing
//! with an active list, followed by a sweep over every grid point in a
//! shuffled order so the pattern is maximal. The base radius `r0` is found by
//! bisection so that the acquired fraction hits the requested acceleration.
//!
//! Randomness comes from `ChaCha8Rng::seed_from_u64(seed)`, so a given
//! [`MaskSpec`] always produces the same mask within one build.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{size_err, Error, Result};
use crate::imaging::{centered_block_origin, MultiCoilKspace, SamplingMask};

pub const DEFAULT_DENSITY_ALPHA: f64 = 2.0;
const CANDIDATES_PER_POINT: usize = 30;
const BISECTION_STEPS: usize = 20;
/// Acceptable relative error of the achieved acceleration.
pub const ACCEL_TOLERANCE: f64 = 0.10;
const ACCEL_GOAL: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct MaskSpec {
    pub height: usize,
    pub width: usize,
    /// Target acceleration: eligible grid points divided by sampled points.
    /// With corner cutting the eligible points are those inside the
    /// inscribed ellipse, so the effective (whole-grid) acceleration is
    /// larger by roughly `4 / pi`.
    pub accel: f64,
    pub calib_h: usize,
    pub calib_w: usize,
    pub corner_cutting: bool,
    pub seed: u64,
    pub alpha: f64,
}

impl MaskSpec {
    pub fn new(height: usize, width: usize, accel: f64, calib: (usize, usize)) -> Self {
        Self {
            height,
            width,
            accel,
            calib_h: calib.0,
            calib_w: calib.1,
            corner_cutting: false,
            seed: 0,
            alpha: DEFAULT_DENSITY_ALPHA,
        }
    }

    pub fn corner_cutting(mut self, on: bool) -> Self {
        self.corner_cutting = on;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return size_err("mask grid must be non-empty");
        }
        if self.calib_h > self.height || self.calib_w > self.width {
            return size_err(format!(
                "calibration {}x{} exceeds grid {}x{}",
                self.calib_h, self.calib_w, self.height, self.width
            ));
        }
        if !(self.accel >= 1.0) || !self.accel.is_finite() {
            return Err(Error::InfeasibleSpec(format!("acceleration must be >= 1, got {}", self.accel)));
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::Config(format!("density alpha must be >= 0, got {}", self.alpha)));
        }
        Ok(())
    }
}

/// Geometry shared by every trial of one spec.
struct Layout {
    h: usize,
    w: usize,
    rho: Vec<f64>,
    eligible: Vec<bool>,
    calib: Vec<bool>,
    rho_max: f64,
}

impl Layout {
    fn new(spec: &MaskSpec) -> Self {
        let (h, w) = (spec.height, spec.width);
        let (cy, cx) = ((h / 2) as f64, (w / 2) as f64);
        let (hy, hx) = ((h as f64 / 2.0).max(0.5), (w as f64 / 2.0).max(0.5));
        let mut rho = Vec::with_capacity(h * w);
        let mut eligible = Vec::with_capacity(h * w);
        for r in 0..h {
            for c in 0..w {
                let d = (((r as f64 - cy) / hy).powi(2) + ((c as f64 - cx) / hx).powi(2)).sqrt();
                rho.push(d);
                eligible.push(!spec.corner_cutting || d <= 1.0);
            }
        }
        let mut calib = vec![false; h * w];
        let (r0, c0) = centered_block_origin(h, w, spec.calib_h, spec.calib_w);
        for r in r0..r0 + spec.calib_h {
            for c in c0..c0 + spec.calib_w {
                calib[r * w + c] = true;
            }
        }
        let rho_max = rho
            .iter()
            .zip(&eligible)
            .filter(|(_, &e)| e)
            .map(|(&d, _)| d)
            .fold(0.0, f64::max);
        Self {
            h,
            w,
            rho,
            eligible,
            calib,
            rho_max,
        }
    }

    fn eligible_count(&self) -> usize {
        self.eligible.iter().filter(|&&e| e).count()
    }
}

/// Local minimum-distance radius at a grid point.
pub fn density_radius(spec: &MaskSpec, r0: f64, row: usize, col: usize) -> f64 {
    let (cy, cx) = ((spec.height / 2) as f64, (spec.width / 2) as f64);
    let (hy, hx) = ((spec.height as f64 / 2.0).max(0.5), (spec.width as f64 / 2.0).max(0.5));
    let rho = (((row as f64 - cy) / hy).powi(2) + ((col as f64 - cx) / hx).powi(2)).sqrt();
    r0 * (1.0 + spec.alpha * rho)
}

struct Trial<'a> {
    layout: &'a Layout,
    radius: Vec<f64>,
    taken: Vec<bool>,
    window: i64,
}

impl<'a> Trial<'a> {
    fn new(layout: &'a Layout, r0: f64, alpha: f64) -> Self {
        let radius: Vec<f64> = layout.rho.iter().map(|&d| r0 * (1.0 + alpha * d)).collect();
        let rmax = r0 * (1.0 + alpha * layout.rho_max);
        Self {
            layout,
            radius,
            taken: vec![false; layout.h * layout.w],
            window: rmax.ceil() as i64,
        }
    }

    fn acceptable(&self, r: usize, c: usize) -> bool {
        let l = self.layout;
        let idx = r * l.w + c;
        if !l.eligible[idx] || l.calib[idx] || self.taken[idx] {
            return false;
        }
        let own = self.radius[idx];
        let (ri, ci) = (r as i64, c as i64);
        let rlo = (ri - self.window).max(0);
        let rhi = (ri + self.window).min(l.h as i64 - 1);
        let clo = (ci - self.window).max(0);
        let chi = (ci + self.window).min(l.w as i64 - 1);
        for rr in rlo..=rhi {
            let dy = (rr - ri) as f64;
            for cc in clo..=chi {
                let j = rr as usize * l.w + cc as usize;
                if !self.taken[j] {
                    continue;
                }
                let dx = (cc - ci) as f64;
                let need = own.max(self.radius[j]);
                if dy * dy + dx * dx < need * need {
                    return false;
                }
            }
        }
        true
    }

    fn run(mut self, rng: &mut ChaCha8Rng) -> Vec<bool> {
        let l = self.layout;
        let candidates: Vec<usize> = (0..l.h * l.w)
            .filter(|&i| l.eligible[i] && !l.calib[i])
            .collect();

        let mut active: Vec<usize> = Vec::new();
        if !candidates.is_empty() {
            let start = candidates[rng.random_range(0..candidates.len())];
            self.taken[start] = true;
            active.push(start);
        }
        while !active.is_empty() {
            let slot = rng.random_range(0..active.len());
            let p = active[slot];
            let (pr, pc) = ((p / l.w) as f64, (p % l.w) as f64);
            let rad = self.radius[p];
            let mut placed = false;
            for _ in 0..CANDIDATES_PER_POINT {
                let theta = rng.random_range(0.0..std::f64::consts::TAU);
                let dist = rng.random_range(rad..=2.0 * rad);
                let nr = (pr + dist * theta.sin()).round();
                let nc = (pc + dist * theta.cos()).round();
                if nr < 0.0 || nc < 0.0 || nr >= l.h as f64 || nc >= l.w as f64 {
                    continue;
                }
                let (nr, nc) = (nr as usize, nc as usize);
                if self.acceptable(nr, nc) {
                    let q = nr * l.w + nc;
                    self.taken[q] = true;
                    active.push(q);
                    placed = true;
                    break;
                }
            }
            if !placed {
                active.swap_remove(slot);
            }
        }

        // fill whatever the active-list walk could not reach
        let mut order = candidates;
        order.shuffle(rng);
        for i in order {
            if self.acceptable(i / l.w, i % l.w) {
                self.taken[i] = true;
            }
        }

        let mut out = self.taken;
        for (o, &c) in out.iter_mut().zip(&l.calib) {
            *o |= c;
        }
        out
    }
}

/// Draw one mask at a fixed base radius (no acceleration search).
pub fn poisson_disc_fixed_radius(spec: &MaskSpec, r0: f64) -> Result<Vec<bool>> {
    spec.validate()?;
    let layout = Layout::new(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    Ok(Trial::new(&layout, r0, spec.alpha).run(&mut rng))
}

/// Result of [`poisson_disc_mask`] with the radius that produced it.
#[derive(Debug, Clone)]
pub struct GeneratedMask {
    pub mask: SamplingMask,
    pub base_radius: f64,
    /// Eligible points divided by sampled points.
    pub nominal_acceleration: f64,
}

impl GeneratedMask {
    /// Whole-grid acceleration (corner-cut points count as unsampled).
    pub fn effective_acceleration(&self) -> f64 {
        self.mask.effective_acceleration()
    }
}

pub fn poisson_disc_mask(spec: &MaskSpec) -> Result<SamplingMask> {
    generate_mask(spec).map(|g| g.mask)
}

pub fn generate_mask(spec: &MaskSpec) -> Result<GeneratedMask> {
    spec.validate()?;
    let layout = Layout::new(spec);
    let eligible = layout.eligible_count();
    let finish = |bits: Vec<bool>, r0: f64| -> Result<GeneratedMask> {
        let sampled_eligible = bits
            .iter()
            .zip(&layout.eligible)
            .filter(|(&b, &e)| b && e)
            .count();
        let nominal = eligible as f64 / sampled_eligible.max(1) as f64;
        let mask = SamplingMask::new(spec.height, spec.width, bits, spec.calib_h, spec.calib_w, spec.accel)?;
        Ok(GeneratedMask {
            mask,
            base_radius: r0,
            nominal_acceleration: nominal,
        })
    };

    if spec.accel == 1.0 {
        let mut bits = layout.eligible.clone();
        for (b, &c) in bits.iter_mut().zip(&layout.calib) {
            *b |= c;
        }
        return finish(bits, 0.0);
    }

    let calib_eligible = layout
        .calib
        .iter()
        .zip(&layout.eligible)
        .filter(|(&c, &e)| c && e)
        .count();
    let budget = eligible as f64 / spec.accel;
    if calib_eligible as f64 > budget * (1.0 + ACCEL_TOLERANCE) {
        return Err(Error::InfeasibleSpec(format!(
            "calibration block alone holds {calib_eligible} samples, budget for R={} is {budget:.0}",
            spec.accel
        )));
    }

    let count_eligible = |bits: &[bool]| -> usize {
        bits.iter().zip(&layout.eligible).filter(|(&b, &e)| b && e).count()
    };

    let mut lo = 0.0f64;
    let mut hi = (spec.height.max(spec.width)) as f64;
    let mut best: Option<(f64, f64, Vec<bool>)> = None;
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let bits = Trial::new(&layout, mid, spec.alpha).run(&mut rng);
        let n = count_eligible(&bits);
        let achieved = eligible as f64 / n.max(1) as f64;
        let err = (achieved / spec.accel - 1.0).abs();
        if best.as_ref().is_none_or(|(e, _, _)| err < *e) {
            best = Some((err, mid, bits));
        }
        if err <= ACCEL_GOAL {
            break;
        }
        if achieved < spec.accel {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (err, r0, bits) = best.expect("at least one bisection step");
    if err > ACCEL_TOLERANCE {
        return Err(Error::InfeasibleSpec(format!(
            "could not reach R={} within {:.0}% (best relative error {err:.3})",
            spec.accel,
            ACCEL_TOLERANCE * 100.0
        )));
    }
    finish(bits, r0)
}

/// Multiply every coil by the mask and attach it.
pub fn retrospective_undersample(full: &MultiCoilKspace, mask: &SamplingMask) -> Result<MultiCoilKspace> {
    if full.dims() != mask.dims() {
        return size_err(format!(
            "k-space {:?} does not match mask {:?}",
            full.dims(),
            mask.dims()
        ));
    }
    let planes = full
        .planes()
        .iter()
        .map(|p| mask.apply(p))
        .collect::<Result<Vec<_>>>()?;
    MultiCoilKspace::new(planes)?
        .with_normalization(full.normalization())
        .with_mask(mask.clone())
}
