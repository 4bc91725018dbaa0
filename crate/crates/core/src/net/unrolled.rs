use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::prox::{prox_backward, prox_forward, ProxCache, ProximalBlockParams};
use super::ParamSet;
use crate::cs::gradient_step;
use crate::error::{size_err, Error, Result};
use crate::grid::{inner_product, ComplexGrid};
use crate::imaging::{ImagingModel, MultiCoilKspace, Normalization};

pub const FORMAT_VERSION: u32 = 1;
pub const DEFAULT_STEP_SIZE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub iterations: usize,
    pub features: usize,
    pub resblocks: usize,
    pub kernel: usize,
    pub normalization: Normalization,
    /// One proximal block reused by every iteration.
    pub shared: bool,
    pub format_version: u32,
}

impl ModelMeta {
    pub fn new(iterations: usize, features: usize, resblocks: usize) -> Self {
        Self {
            iterations,
            features,
            resblocks,
            kernel: 3,
            normalization: Normalization::Central5x5,
            shared: false,
            format_version: FORMAT_VERSION,
        }
    }

    pub fn with_normalization(mut self, n: Normalization) -> Self {
        self.normalization = n;
        self
    }

    pub fn shared(mut self, shared: bool) -> Self {
        self.shared = shared;
        self
    }

    pub fn prox_count(&self) -> usize {
        if self.shared {
            1
        } else {
            self.iterations
        }
    }
}

/// Parameters of the unrolled network: one learnable step size per
/// iteration and one proximal block per iteration (or one shared block).
#[derive(Debug, Clone, PartialEq)]
pub struct UnrolledModelParams {
    pub meta: ModelMeta,
    pub step_sizes: Vec<f64>,
    pub prox_blocks: Vec<ProximalBlockParams>,
}

impl UnrolledModelParams {
    pub fn init(meta: ModelMeta, rng: &mut impl Rng) -> Self {
        let prox_blocks = (0..meta.prox_count())
            .map(|_| ProximalBlockParams::init(meta.features, meta.resblocks, meta.kernel, rng))
            .collect();
        Self {
            step_sizes: vec![DEFAULT_STEP_SIZE; meta.iterations],
            prox_blocks,
            meta,
        }
    }

    /// All convolution weights and biases zero: every proximal block is the
    /// identity and the network reduces to plain gradient iterations.
    pub fn zeros(meta: ModelMeta) -> Self {
        let prox_blocks = (0..meta.prox_count())
            .map(|_| ProximalBlockParams::zeros(meta.features, meta.resblocks, meta.kernel))
            .collect();
        Self {
            step_sizes: vec![DEFAULT_STEP_SIZE; meta.iterations],
            prox_blocks,
            meta,
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.visit_mut(&mut |_, v| v.iter_mut().for_each(|x| *x = 0.0));
        z
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.meta;
        if m.format_version != FORMAT_VERSION {
            return Err(Error::Config(format!("unsupported model format version {}", m.format_version)));
        }
        if m.iterations == 0 {
            return Err(Error::Config("model needs at least one iteration".into()));
        }
        if self.step_sizes.len() != m.iterations || self.prox_blocks.len() != m.prox_count() {
            return Err(Error::Config(format!(
                "model declares {} iterations but holds {} step sizes and {} proximal blocks",
                m.iterations,
                self.step_sizes.len(),
                self.prox_blocks.len()
            )));
        }
        for p in &self.prox_blocks {
            p.validate()?;
            if p.features() != m.features || p.blocks.len() != m.resblocks {
                return Err(Error::Config("proximal block shape disagrees with model meta".into()));
            }
        }
        if !self.all_finite() {
            return Err(Error::Config("model parameters contain non-finite values".into()));
        }
        Ok(())
    }

    fn prox_index(&self, k: usize) -> usize {
        if self.meta.shared {
            0
        } else {
            k
        }
    }
}

impl ParamSet for UnrolledModelParams {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        f("step_sizes", &[self.step_sizes.len()], &self.step_sizes);
        for (k, p) in self.prox_blocks.iter().enumerate() {
            p.visit(&mut |n, s, v| f(&format!("prox{k}.{n}"), s, v));
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        f("step_sizes", &mut self.step_sizes);
        for (k, p) in self.prox_blocks.iter_mut().enumerate() {
            p.visit_mut(&mut |n, v| f(&format!("prox{k}.{n}"), v));
        }
    }
}

/// `m - 2t A^H (A m - y)`
pub fn gradient_update(m: &ComplexGrid, model: &ImagingModel, y: &MultiCoilKspace, t: f64) -> Result<ComplexGrid> {
    gradient_step(model, y, m, t)
}

pub(crate) struct Tape {
    /// `A^H (A m_k - y)` per iteration
    data_grads: Vec<ComplexGrid>,
    prox: Vec<ProxCache>,
}

fn check_convention(params: &UnrolledModelParams, y: &MultiCoilKspace) -> Result<()> {
    if y.normalization() != params.meta.normalization {
        return Err(Error::Convention {
            data: y.normalization().to_string(),
            model: params.meta.normalization.to_string(),
        });
    }
    Ok(())
}

pub(crate) fn forward_with_tape(
    params: &UnrolledModelParams,
    model: &ImagingModel,
    y: &MultiCoilKspace,
) -> Result<(ComplexGrid, Tape)> {
    params.validate()?;
    check_convention(params, y)?;
    let mut m = model.adjoint(y)?;
    let k_iter = params.meta.iterations;
    let mut data_grads = Vec::with_capacity(k_iter);
    let mut prox = Vec::with_capacity(k_iter);
    for k in 0..k_iter {
        let g = model.adjoint(&model.forward(&m)?.sub(y)?)?;
        let mut plus = m.clone();
        plus.axpy(Complex64::new(-2.0 * params.step_sizes[k], 0.0), &g)?;
        let (next, cache) = prox_forward(&plus, &params.prox_blocks[params.prox_index(k)])?;
        data_grads.push(g);
        prox.push(cache);
        m = next;
    }
    Ok((m, Tape { data_grads, prox }))
}

pub(crate) fn backward_with_tape(
    params: &UnrolledModelParams,
    model: &ImagingModel,
    tape: &Tape,
    upstream: &ComplexGrid,
) -> Result<UnrolledGradients> {
    if upstream.dims() != model.dims() {
        return size_err(format!(
            "upstream gradient {:?} does not match model {:?}",
            upstream.dims(),
            model.dims()
        ));
    }
    let mut grads = params.zeros_like();
    let (h, w) = model.dims();
    let mut g_y = vec![ComplexGrid::zeros(h, w); model.coils()];
    let mut g = upstream.clone();

    for k in (0..params.meta.iterations).rev() {
        let idx = params.prox_index(k);
        let g_plus = prox_backward(&tape.prox[k], &params.prox_blocks[idx], &g, &mut grads.prox_blocks[idx])?;
        let t = params.step_sizes[k];

        grads.step_sizes[k] += -2.0 * inner_product(&g_plus, &tape.data_grads[k])?.re;

        // m+ = m - 2t A^H A m + 2t A^H y
        let a_g = model.forward(&g_plus)?;
        for (acc, plane) in g_y.iter_mut().zip(a_g.planes()) {
            acc.axpy(Complex64::new(2.0 * t, 0.0), plane)?;
        }
        let mut g_m = g_plus;
        g_m.axpy(Complex64::new(-2.0 * t, 0.0), &model.adjoint(&a_g)?)?;
        g = g_m;
    }
    // m_0 = A^H y
    let a_g = model.forward(&g)?;
    for (acc, plane) in g_y.iter_mut().zip(a_g.planes()) {
        acc.axpy(Complex64::new(1.0, 0.0), plane)?;
    }

    Ok(UnrolledGradients {
        params: grads,
        kspace: MultiCoilKspace::new(g_y)?,
    })
}

/// `m0 = A^H y`, then `K` rounds of gradient update and learned proximal block.
pub fn unrolled_forward(params: &UnrolledModelParams, model: &ImagingModel, y: &MultiCoilKspace) -> Result<ComplexGrid> {
    forward_with_tape(params, model, y).map(|(m, _)| m)
}

/// Gradients of `Re<upstream, G(y)>` with respect to every parameter and to
/// the measurements, with complex values treated as (real, imag) pairs:
/// the gradient of a real loss is `dL/dRe + i dL/dIm`.
#[derive(Debug, Clone)]
pub struct UnrolledGradients {
    pub params: UnrolledModelParams,
    pub kspace: MultiCoilKspace,
}

pub fn unrolled_backward(
    params: &UnrolledModelParams,
    model: &ImagingModel,
    y: &MultiCoilKspace,
    upstream: &ComplexGrid,
) -> Result<UnrolledGradients> {
    let (_, tape) = forward_with_tape(params, model, y)?;
    backward_with_tape(params, model, &tape, upstream)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{SamplingMask, SensitivityMaps};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_grid(rng: &mut ChaCha8Rng, h: usize, w: usize) -> ComplexGrid {
        ComplexGrid::from_fn(h, w, |_, _| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
    }

    fn rand_model(rng: &mut ChaCha8Rng, coils: usize, n: usize) -> ImagingModel {
        let sens = SensitivityMaps::from_profiles((0..coils).map(|_| rand_grid(rng, n, n)).collect(), 1e-6).unwrap();
        let mut bits: Vec<bool> = (0..n * n).map(|_| rng.random_bool(0.5)).collect();
        let (r0, c0) = crate::imaging::centered_block_origin(n, n, 2, 2);
        for r in r0..r0 + 2 {
            for c in c0..c0 + 2 {
                bits[r * n + c] = true;
            }
        }
        ImagingModel::new(sens, SamplingMask::new(n, n, bits, 2, 2, 2.0).unwrap()).unwrap()
    }

    #[test]
    fn gradient_update_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = rand_model(&mut rng, 2, 8);
        let m = rand_grid(&mut rng, 8, 8);
        let y = MultiCoilKspace::new((0..2).map(|_| rand_grid(&mut rng, 8, 8)).collect()).unwrap();
        assert_eq!(gradient_update(&m, &model, &y, 0.0).unwrap(), m);

        let consistent = model.forward(&m).unwrap();
        let out = gradient_update(&m, &model, &consistent, 0.7).unwrap();
        assert!(out.sub(&m).unwrap().norm() < 1e-12);

        // operator composition oracle
        let t = 0.3;
        let resid = model.forward(&m).unwrap().sub(&y).unwrap();
        let expect = m.sub(&model.adjoint(&resid).unwrap().scale(2.0 * t)).unwrap();
        assert!(gradient_update(&m, &model, &y, t).unwrap().sub(&expect).unwrap().norm() < 1e-10);
    }

    #[test]
    fn convention_mismatch_is_refused() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = rand_model(&mut rng, 2, 8);
        let params = UnrolledModelParams::init(ModelMeta::new(2, 4, 1), &mut rng);
        let y = model.forward(&rand_grid(&mut rng, 8, 8)).unwrap();
        assert!(matches!(unrolled_forward(&params, &model, &y), Err(Error::Convention { .. })));
        let y = y.with_normalization(Normalization::Central5x5);
        assert!(unrolled_forward(&params, &model, &y).is_ok());
    }

    #[test]
    fn zero_measurements_give_zero_image() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = rand_model(&mut rng, 3, 8);
        let params = UnrolledModelParams::init(ModelMeta::new(4, 4, 2), &mut rng);
        let y = MultiCoilKspace::new(vec![ComplexGrid::zeros(8, 8); 3])
            .unwrap()
            .with_normalization(Normalization::Central5x5);
        assert_eq!(unrolled_forward(&params, &model, &y).unwrap().norm(), 0.0);
    }

    #[test]
    fn deterministic_and_coil_count_agnostic() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let params = UnrolledModelParams::init(ModelMeta::new(2, 4, 1).with_normalization(Normalization::None), &mut rng);
        for coils in [2, 8] {
            let model = rand_model(&mut rng, coils, 8);
            let y = model.forward(&rand_grid(&mut rng, 8, 8)).unwrap();
            let a = unrolled_forward(&params, &model, &y).unwrap();
            let b = unrolled_forward(&params, &model, &y).unwrap();
            assert_eq!(a, b);
            assert!(a.is_finite());
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = rand_model(&mut rng, 2, 8);
        let params = UnrolledModelParams::init(ModelMeta::new(2, 4, 1).with_normalization(Normalization::None), &mut rng);
        let y = model.forward(&rand_grid(&mut rng, 8, 8)).unwrap();
        let g = unrolled_backward(&params, &model, &y, &ComplexGrid::zeros(8, 8)).unwrap();
        assert!(g.params.flatten().iter().all(|&v| v == 0.0));
        assert_eq!(g.kspace.norm(), 0.0);
    }

    #[test]
    fn zero_prox_reduces_to_landweber() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let model = rand_model(&mut rng, 2, 16);
        let y = model.forward(&rand_grid(&mut rng, 16, 16)).unwrap();
        let mut params = UnrolledModelParams::zeros(ModelMeta::new(4, 4, 2).with_normalization(Normalization::None));
        params.step_sizes = vec![0.3; 4];
        let out = unrolled_forward(&params, &model, &y).unwrap();
        let cfg = crate::cs::CsConfig {
            lambda: 0.0,
            step: 0.3,
            max_iters: 4,
            tol: 0.0,
            wavelet_levels: 2,
            ..Default::default()
        };
        let cs = crate::cs::cs_reconstruct(&model, &y, &cfg).unwrap();
        assert_eq!(cs.iters_used, 4);
        assert!(out.sub(&cs.image).unwrap().norm() < 1e-8);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let model = rand_model(&mut rng, 2, 8);
        let mut params = UnrolledModelParams::init(ModelMeta::new(2, 4, 1).with_normalization(Normalization::None), &mut rng);
        let mut flat = params.flatten();
        for v in flat.iter_mut().skip(2) {
            *v += rng.random_range(-0.05..0.05);
        }
        params.assign(&flat).unwrap();
        let y = model.forward(&rand_grid(&mut rng, 8, 8)).unwrap();
        let up = rand_grid(&mut rng, 8, 8);
        let g = unrolled_backward(&params, &model, &y, &up).unwrap();
        let loss = |p: &UnrolledModelParams, y: &MultiCoilKspace| {
            inner_product(&up, &unrolled_forward(p, &model, y).unwrap()).unwrap().re
        };
        let h = 1e-5;
        let gflat = g.params.flatten();
        let scale = gflat.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..flat.len() {
            let (mut fa, mut fb) = (flat.clone(), flat.clone());
            fa[i] += h;
            fb[i] -= h;
            let (mut a, mut b) = (params.clone(), params.clone());
            a.assign(&fa).unwrap();
            b.assign(&fb).unwrap();
            let fd = (loss(&a, &y) - loss(&b, &y)) / (2.0 * h);
            let rel = (fd - gflat[i]).abs() / fd.abs().max(gflat[i].abs()).max(1e-3 * scale);
            assert!(rel < 1e-6, "param {i}: fd {fd} vs {}", gflat[i]);
        }
        // measurement gradient, one sampled entry per coil
        let idx = model.mask().as_slice().iter().position(|&b| b).unwrap();
        for c in 0..2 {
            for dz in [Complex64::new(h, 0.0), Complex64::new(0.0, h)] {
                let (mut ya, mut yb) = (y.clone(), y.clone());
                ya.planes_mut()[c].as_mut_slice()[idx] += dz;
                yb.planes_mut()[c].as_mut_slice()[idx] -= dz;
                let fd = (loss(&params, &ya) - loss(&params, &yb)) / (2.0 * h);
                let z = g.kspace.planes()[c].as_slice()[idx];
                let an = if dz.re != 0.0 { z.re } else { z.im };
                assert!((fd - an).abs() < 1e-6 * fd.abs().max(1e-3));
            }
        }
    }

    #[test]
    fn shared_blocks_accumulate_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let model = rand_model(&mut rng, 2, 8);
        let meta = ModelMeta::new(3, 3, 1).with_normalization(Normalization::None).shared(true);
        let params = UnrolledModelParams::init(meta, &mut rng);
        assert_eq!(params.prox_blocks.len(), 1);
        let y = model.forward(&rand_grid(&mut rng, 8, 8)).unwrap();
        let up = rand_grid(&mut rng, 8, 8);
        let g = unrolled_backward(&params, &model, &y, &up).unwrap();
        let loss = |p: &UnrolledModelParams| inner_product(&up, &unrolled_forward(p, &model, &y).unwrap()).unwrap().re;
        let flat = params.flatten();
        let gflat = g.params.flatten();
        let h = 1e-6;
        for i in (0..flat.len()).step_by(7) {
            let (mut a, mut b) = (params.clone(), params.clone());
            let (mut fa, mut fb) = (flat.clone(), flat.clone());
            fa[i] += h;
            fb[i] -= h;
            a.assign(&fa).unwrap();
            b.assign(&fb).unwrap();
            let fd = (loss(&a) - loss(&b)) / (2.0 * h);
            assert!((fd - gflat[i]).abs() < 1e-6 * fd.abs().max(1.0));
        }
    }
}
