//! L1-wavelet compressed sensing by proximal gradient descent.
//!
//! Each iteration takes a gradient step on the data term followed by
//! wavelet-domain soft-thresholding:
//!
//! ```text
//! m+      = m - 2t A^H (A m - y)
//! m_next  = Psi^-1 soft(Psi m+, t * lambda)
//! ```
//!
//! which is ISTA on `||A m - y||^2 + lambda ||Psi m||_1`; that functional is
//! what [`CsOutcome::objective`] records. With `use_fista` the gradient step
//! is taken at a Nesterov-extrapolated point.

use crate::error::{Error, Result};
use crate::grid::{center_crop, ComplexGrid};
use crate::imaging::{ImagingModel, MultiCoilKspace};
use crate::wavelet::{soft_threshold_grid, wavelet_forward, wavelet_inverse, Wavelet};

#[derive(Debug, Clone, PartialEq)]
pub struct CsConfig {
    pub lambda: f64,
    pub step: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub wavelet_levels: usize,
    pub wavelet: Wavelet,
    pub use_fista: bool,
}

impl Default for CsConfig {
    fn default() -> Self {
        Self {
            lambda: 0.01,
            step: 0.45,
            max_iters: 200,
            tol: 1e-5,
            wavelet_levels: 3,
            wavelet: Wavelet::Haar,
            use_fista: false,
        }
    }
}

impl CsConfig {
    pub fn validate(&self, dims: (usize, usize)) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.step > 0.0) || !self.step.is_finite() {
            return Err(Error::Config(format!("step must be > 0, got {}", self.step)));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be >= 1".into()));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::Config(format!("tol must be >= 0, got {}", self.tol)));
        }
        let min_dim = dims.0.min(dims.1);
        if self.wavelet_levels == 0 || (1usize << self.wavelet_levels) > min_dim {
            return Err(Error::Config(format!(
                "wavelet_levels {} must lie in 1..=log2({min_dim})",
                self.wavelet_levels
            )));
        }
        Ok(())
    }
}

/// Wavelet sparsifier on a grid, zero-padding the image to the next size
/// divisible by `2^levels` when needed.
#[derive(Debug, Clone)]
pub struct Sparsifier {
    levels: usize,
    family: Wavelet,
    dims: (usize, usize),
    padded: (usize, usize),
}

impl Sparsifier {
    pub fn new(dims: (usize, usize), levels: usize, family: Wavelet) -> Self {
        let block = 1usize << levels;
        let up = |n: usize| n.div_ceil(block) * block;
        Self {
            levels,
            family,
            dims,
            padded: (up(dims.0), up(dims.1)),
        }
    }

    fn pad(&self, m: &ComplexGrid) -> ComplexGrid {
        if self.padded == self.dims {
            return m.clone();
        }
        let (ph, pw) = self.padded;
        let (r0, c0) = ((ph - self.dims.0) / 2, (pw - self.dims.1) / 2);
        let mut out = ComplexGrid::zeros(ph, pw);
        for r in 0..self.dims.0 {
            for c in 0..self.dims.1 {
                out[(r + r0, c + c0)] = m[(r, c)];
            }
        }
        out
    }

    pub fn forward(&self, m: &ComplexGrid) -> Result<ComplexGrid> {
        wavelet_forward(&self.pad(m), self.levels, self.family)
    }

    pub fn inverse(&self, coeffs: &ComplexGrid) -> Result<ComplexGrid> {
        let img = wavelet_inverse(coeffs, self.levels, self.family)?;
        if self.padded == self.dims {
            Ok(img)
        } else {
            center_crop(&img, self.dims.0, self.dims.1)
        }
    }

    pub fn l1(&self, m: &ComplexGrid) -> Result<f64> {
        Ok(self.forward(m)?.as_slice().iter().map(|z| z.norm()).sum())
    }

    /// `Psi^-1 soft(Psi m, tau)`
    pub fn shrink(&self, m: &ComplexGrid, tau: f64) -> Result<ComplexGrid> {
        self.inverse(&soft_threshold_grid(&self.forward(m)?, tau))
    }
}

#[derive(Debug, Clone)]
pub struct CsOutcome {
    pub image: ComplexGrid,
    pub iters_used: usize,
    /// Relative update `||m_next - m|| / ||m||` per iteration.
    pub residual_history: Vec<f64>,
    /// `||A m - y||^2 + lambda ||Psi m||_1`, starting with the initial guess.
    pub objective: Vec<f64>,
}

pub fn objective(
    model: &ImagingModel,
    y: &MultiCoilKspace,
    m: &ComplexGrid,
    lambda: f64,
    psi: &Sparsifier,
) -> Result<f64> {
    let resid = model.forward(m)?.sub(y)?;
    let reg = if lambda > 0.0 { lambda * psi.l1(m)? } else { 0.0 };
    Ok(resid.norm_sqr() + reg)
}

/// `m - 2t A^H (A m - y)`
pub fn gradient_step(model: &ImagingModel, y: &MultiCoilKspace, m: &ComplexGrid, t: f64) -> Result<ComplexGrid> {
    let grad = model.adjoint(&model.forward(m)?.sub(y)?)?;
    let mut out = m.clone();
    out.axpy((-2.0 * t).into(), &grad)?;
    Ok(out)
}

/// One ISTA iteration from `m`.
pub fn proximal_gradient_step(
    model: &ImagingModel,
    y: &MultiCoilKspace,
    m: &ComplexGrid,
    cfg: &CsConfig,
    psi: &Sparsifier,
) -> Result<ComplexGrid> {
    let plus = gradient_step(model, y, m, cfg.step)?;
    psi.shrink(&plus, cfg.step * cfg.lambda)
}

pub fn cs_reconstruct(model: &ImagingModel, y: &MultiCoilKspace, cfg: &CsConfig) -> Result<CsOutcome> {
    cfg.validate(model.dims())?;
    let psi = Sparsifier::new(model.dims(), cfg.wavelet_levels, cfg.wavelet);

    let mut m = model.adjoint(y)?;
    let initial = objective(model, y, &m, cfg.lambda, &psi)?;
    // round-off near an exact solution must not read as divergence
    let limit = 10.0 * initial.max(1e-12 * y.norm_sqr()).max(f64::MIN_POSITIVE);
    let mut objective_hist = vec![initial];
    let mut residual_history = Vec::new();

    let mut z = m.clone();
    let mut theta = 1.0f64;
    let mut iters_used = 0;

    for it in 0..cfg.max_iters {
        let base = if cfg.use_fista { &z } else { &m };
        let next = proximal_gradient_step(model, y, base, cfg, &psi)?;

        let delta = next.sub(&m)?.norm();
        let denom = m.norm();
        let rel = if denom > 0.0 {
            delta / denom
        } else if delta == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };

        if cfg.use_fista {
            let theta_next = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
            let beta = (theta - 1.0) / theta_next;
            z = next.clone();
            z.axpy(beta.into(), &next.sub(&m)?)?;
            theta = theta_next;
        }
        m = next;
        iters_used = it + 1;

        let obj = objective(model, y, &m, cfg.lambda, &psi)?;
        if !obj.is_finite() || obj > limit {
            return Err(Error::StepSize(format!(
                "objective grew from {initial:.3e} to {obj:.3e} at iteration {iters_used}; reduce the step size (t = {})",
                cfg.step
            )));
        }
        objective_hist.push(obj);
        residual_history.push(rel);
        if rel < cfg.tol {
            break;
        }
    }

    Ok(CsOutcome {
        image: m,
        iters_used,
        residual_history,
        objective: objective_hist,
    })
}
