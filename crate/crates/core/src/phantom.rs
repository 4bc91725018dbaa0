//! Seeded synthetic multi-coil acquisitions: ellipse phantoms with smooth
//! phase and Gaussian coil profiles.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::grid::{fft2c, ComplexGrid};
use crate::imaging::{MultiCoilKspace, SensitivityMaps};

pub const MIN_PHANTOM_SIZE: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub height: usize,
    pub width: usize,
    pub n_ellipses: usize,
    pub coils: usize,
    /// Standard deviation of the complex Gaussian noise added to every
    /// k-space sample (real and imaginary parts each get `sigma / sqrt(2)`).
    pub noise_sigma: f64,
    pub seed: u64,
}

impl PhantomSpec {
    pub fn new(height: usize, width: usize, coils: usize, seed: u64) -> Self {
        Self {
            height,
            width,
            n_ellipses: 8,
            coils,
            noise_sigma: 0.0,
            seed,
        }
    }

    pub fn noise(mut self, sigma: f64) -> Self {
        self.noise_sigma = sigma;
        self
    }

    pub fn ellipses(mut self, n: usize) -> Self {
        self.n_ellipses = n;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.height < MIN_PHANTOM_SIZE || self.width < MIN_PHANTOM_SIZE {
            return Err(Error::Config(format!(
                "phantom must be at least {MIN_PHANTOM_SIZE}x{MIN_PHANTOM_SIZE}, got {}x{}",
                self.height, self.width
            )));
        }
        if self.coils == 0 {
            return Err(Error::Config("phantom needs at least one coil".into()));
        }
        if self.n_ellipses == 0 {
            return Err(Error::Config("phantom needs at least one ellipse".into()));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::Config(format!("noise sigma must be >= 0, got {}", self.noise_sigma)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Phantom {
    pub truth: ComplexGrid,
    pub sens: SensitivityMaps,
    pub kspace: MultiCoilKspace,
}

struct Ellipse {
    cy: f64,
    cx: f64,
    ay: f64,
    ax: f64,
    angle: f64,
    value: f64,
}

impl Ellipse {
    fn contains(&self, y: f64, x: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let (dy, dx) = (y - self.cy, x - self.cx);
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        (u / self.ax).powi(2) + (v / self.ay).powi(2) <= 1.0
    }
}

/// Normalized coordinates in [-1, 1).
fn coords(r: usize, c: usize, h: usize, w: usize) -> (f64, f64) {
    (
        (r as f64 - h as f64 / 2.0) / (h as f64 / 2.0),
        (c as f64 - w as f64 / 2.0) / (w as f64 / 2.0),
    )
}

pub fn simulate_phantom(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // outer body, then smaller structures inside it
    let mut shapes = vec![Ellipse {
        cy: rng.random_range(-0.05..0.05),
        cx: rng.random_range(-0.05..0.05),
        ay: rng.random_range(0.7..0.85),
        ax: rng.random_range(0.6..0.8),
        angle: rng.random_range(-0.3..0.3),
        value: 0.6,
    }];
    for _ in 1..spec.n_ellipses {
        shapes.push(Ellipse {
            cy: rng.random_range(-0.45..0.45),
            cx: rng.random_range(-0.4..0.4),
            ay: rng.random_range(0.06..0.3),
            ax: rng.random_range(0.06..0.3),
            angle: rng.random_range(0.0..PI),
            value: rng.random_range(-0.3..0.4),
        });
    }
    let phase: Vec<f64> = (0..6).map(|_| rng.random_range(-0.6..0.6)).collect();

    let truth = ComplexGrid::from_fn(h, w, |r, c| {
        let (y, x) = coords(r, c, h, w);
        let mag: f64 = shapes.iter().filter(|e| e.contains(y, x)).map(|e| e.value).sum();
        let mag = mag.max(0.0);
        let p = phase[0] + phase[1] * x + phase[2] * y + phase[3] * x * y + phase[4] * x * x + phase[5] * y * y;
        Complex64::from_polar(mag, p)
    });

    let sens = if spec.coils == 1 {
        SensitivityMaps::uniform(h, w)
    } else {
        let c0 = rng.random_range(0.0..2.0 * PI);
        let profiles = (0..spec.coils)
            .map(|k| {
                let theta = c0 + 2.0 * PI * k as f64 / spec.coils as f64;
                let (cy, cx) = (1.1 * theta.sin(), 1.1 * theta.cos());
                let width = rng.random_range(0.7..0.9);
                let coil_phase = rng.random_range(-PI..PI);
                ComplexGrid::from_fn(h, w, |r, c| {
                    let (y, x) = coords(r, c, h, w);
                    let d2 = (y - cy).powi(2) + (x - cx).powi(2);
                    Complex64::from_polar((-d2 / (2.0 * width * width)).exp(), coil_phase)
                })
            })
            .collect();
        SensitivityMaps::from_profiles(profiles, 1e-12)?
    };

    let mut planes: Vec<ComplexGrid> = sens.maps().iter().map(|s| fft2c(&s.mul(&truth).expect("same dims"))).collect();
    if spec.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.noise_sigma / 2f64.sqrt()).expect("finite sigma");
        for p in &mut planes {
            for z in p.as_mut_slice() {
                *z += Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng));
            }
        }
    }
    Ok(Phantom {
        truth,
        sens,
        kspace: MultiCoilKspace::new(planes)?,
    })
}
