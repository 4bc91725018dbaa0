//! Supervised training of the unrolled network: pixel losses, the
//! feature-space adversarial loss, dihedral augmentation and the optimizer.

use std::fmt;
use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{size_err, Error, Result};
use crate::grid::ComplexGrid;
use crate::imaging::{central_block_norm, ImagingModel, MultiCoilKspace, Normalization, SamplingMask, SensitivityMaps};
use crate::io::{write_weights, WeightsFile};
use crate::net::{
    backward_with_tape, feature_backward, feature_forward, forward_with_tape, FeatureExtractorParams, ParamSet, Tensor,
    UnrolledModelParams, DEFAULT_N_FEAT,
};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PixelLoss {
    L1,
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    L1,
    L2,
    Adversarial,
}

impl LossKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "l1" => Some(Self::L1),
            "l2" => Some(Self::L2),
            "adv" | "adversarial" => Some(Self::Adversarial),
            _ => None,
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::L1 => "l1",
            Self::L2 => "l2",
            Self::Adversarial => "adv",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    /// Plain gradient descent.
    Sgd,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub loss_kind: LossKind,
    pub steps: usize,
    pub batch_size: usize,
    pub learn_rate: f64,
    /// Rate of the adversarial phase, for both the network and the
    /// feature extractor.
    pub finetune_rate: f64,
    pub adv_lambda: f64,
    pub seed: u64,
    pub augment: bool,
    pub checkpoint_every: usize,
    /// Length of the L1 pre-training phase of adversarial runs; `None`
    /// means half of `steps`.
    pub pretrain_steps: Option<usize>,
    pub optimizer: OptimizerKind,
    /// Keep the feature extractor at its initial weights.
    pub freeze_discriminator: bool,
    pub disc_features: usize,
    pub disc_n_feat: usize,
    /// Where checkpoints and the per-step log go; nothing is written when
    /// unset.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss_kind: LossKind::L2,
            steps: 500,
            batch_size: 2,
            learn_rate: 1e-3,
            finetune_rate: 1e-4,
            adv_lambda: 1.0,
            seed: 0,
            augment: false,
            checkpoint_every: 100,
            pretrain_steps: None,
            optimizer: OptimizerKind::Adam,
            freeze_discriminator: false,
            disc_features: 8,
            disc_n_feat: DEFAULT_N_FEAT,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.steps == 0 || self.batch_size == 0 || self.checkpoint_every == 0 {
            return bad("steps, batch size and checkpoint interval must be positive".into());
        }
        if !(self.learn_rate >= 0.0) || !self.learn_rate.is_finite() {
            return bad(format!("learn rate must be >= 0, got {}", self.learn_rate));
        }
        if !(self.finetune_rate >= 0.0) || self.finetune_rate > self.learn_rate {
            return bad(format!(
                "finetune rate {} must lie in [0, learn rate {}]",
                self.finetune_rate, self.learn_rate
            ));
        }
        if !(self.adv_lambda >= 0.0) || !self.adv_lambda.is_finite() {
            return bad(format!("adversarial weight must be >= 0, got {}", self.adv_lambda));
        }
        if self.loss_kind == LossKind::Adversarial && (self.disc_features == 0 || self.disc_n_feat == 0) {
            return bad("feature extractor needs positive channel counts".into());
        }
        Ok(())
    }

    fn pretrain(&self) -> usize {
        match self.loss_kind {
            LossKind::Adversarial => self.pretrain_steps.unwrap_or(self.steps / 2).min(self.steps),
            _ => 0,
        }
    }
}

/// Ground truth plus the acquisition it is paired with. The measurements
/// are always recomputed from the truth and the imaging model.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    truth: ComplexGrid,
    model: ImagingModel,
    y: MultiCoilKspace,
}

impl TrainingExample {
    /// Pair `truth` with `y = M F S truth`, without any scaling.
    pub fn new(truth: ComplexGrid, sens: SensitivityMaps, mask: SamplingMask) -> Result<Self> {
        let model = ImagingModel::new(sens, mask)?;
        Self::from_model(truth, model, Normalization::None)
    }

    /// Scale the truth so that the central 5x5 block of the resulting
    /// measurements has unit norm, then pair it with its measurements.
    pub fn normalized(truth: ComplexGrid, sens: SensitivityMaps, mask: SamplingMask) -> Result<Self> {
        let model = ImagingModel::new(sens, mask)?;
        let raw = model.forward(&truth)?;
        let scale = central_block_norm(&raw);
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::Normalization(format!("central k-space block has norm {scale}")));
        }
        Self::from_model(truth.scale(1.0 / scale), model, Normalization::Central5x5)
    }

    fn from_model(truth: ComplexGrid, model: ImagingModel, n: Normalization) -> Result<Self> {
        let y = model.forward(&truth)?.with_normalization(n);
        Ok(Self { truth, model, y })
    }

    pub fn truth(&self) -> &ComplexGrid {
        &self.truth
    }

    pub fn model(&self) -> &ImagingModel {
        &self.model
    }

    pub fn sens(&self) -> &SensitivityMaps {
        self.model.sens()
    }

    pub fn mask(&self) -> &SamplingMask {
        self.model.mask()
    }

    pub fn y(&self) -> &MultiCoilKspace {
        &self.y
    }
}

/// One element of the symmetry group of the square: optional flips of
/// each axis followed by an optional transpose.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Dihedral {
    pub vertical: bool,
    pub horizontal: bool,
    pub transpose: bool,
}

impl Dihedral {
    pub fn random(rng: &mut impl Rng, allow_transpose: bool) -> Self {
        let k = rng.random_range(0..if allow_transpose { 8 } else { 4 });
        Self {
            vertical: k & 1 != 0,
            horizontal: k & 2 != 0,
            transpose: k & 4 != 0,
        }
    }
}

/// Transform truth and sensitivities together and regenerate the
/// measurements. The sampling pattern is left in place. Transposes of
/// non-square grids are skipped.
pub fn apply_dihedral(ex: &TrainingExample, d: Dihedral) -> Result<TrainingExample> {
    let (h, w) = ex.truth.dims();
    let t = d.transpose && h == w;
    let truth = ex.truth.flip_transpose(d.vertical, d.horizontal, t);
    let sens = ex.sens().flip_transpose(d.vertical, d.horizontal, t);
    let model = ImagingModel::new(sens, ex.mask().clone())?;
    TrainingExample::from_model(truth, model, ex.y.normalization())
}

pub fn augment(ex: &TrainingExample, rng: &mut impl Rng) -> Result<TrainingExample> {
    let (h, w) = ex.truth.dims();
    apply_dihedral(ex, Dihedral::random(rng, h == w))
}

/// `sum |recon - truth|^2` or `sum |recon - truth|`.
pub fn pixel_loss(recon: &ComplexGrid, truth: &ComplexGrid, kind: PixelLoss) -> Result<f64> {
    pixel_loss_grad(recon, truth, kind).map(|(l, _)| l)
}

/// Loss and its gradient with respect to `recon`, as `dL/dRe + i dL/dIm`.
pub fn pixel_loss_grad(recon: &ComplexGrid, truth: &ComplexGrid, kind: PixelLoss) -> Result<(f64, ComplexGrid)> {
    let diff = recon.sub(truth)?;
    match kind {
        PixelLoss::L2 => Ok((diff.norm_sqr(), diff.scale(2.0))),
        PixelLoss::L1 => {
            let loss = diff.as_slice().iter().map(|z| z.norm()).sum();
            let grad = diff.map(|z| {
                let n = z.norm();
                if n > 0.0 {
                    z / n
                } else {
                    Complex64::new(0.0, 0.0)
                }
            });
            Ok((loss, grad))
        }
    }
}

fn feature_distance(a: &Tensor, b: &Tensor) -> Result<(f64, Tensor)> {
    let delta = a.sub(b)?;
    Ok((delta.norm_sqr(), delta))
}

/// `(lambda ||D(recon) - D(truth)||^2 + ||recon - truth||^2,
///   -||D(recon) - D(truth)||^2)`
pub fn adversarial_loss(
    recon: &ComplexGrid,
    truth: &ComplexGrid,
    d: &FeatureExtractorParams,
    adv_lambda: f64,
) -> Result<(f64, f64)> {
    let fr = feature_forward(recon, d)?;
    let ft = feature_forward(truth, d)?;
    let (dist, _) = feature_distance(fr.output(), ft.output())?;
    let pix = pixel_loss(recon, truth, PixelLoss::L2)?;
    Ok((adv_lambda * dist + pix, -dist))
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, n: usize) -> Self {
        Self {
            kind,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn adam(n: usize) -> Self {
        Self::new(OptimizerKind::Adam, n)
    }
}

/// One elementwise update of `params` against `grads` at `rate`.
pub fn optimizer_step<P: ParamSet>(params: &mut P, grads: &P, state: &mut OptimizerState, rate: f64) -> Result<()> {
    let mut p = params.flatten();
    let g = grads.flatten();
    if g.len() != p.len() || state.m.len() != p.len() {
        return size_err(format!(
            "optimizer sees {} parameters, {} gradients and {} moment slots",
            p.len(),
            g.len(),
            state.m.len()
        ));
    }
    match state.kind {
        OptimizerKind::Sgd => {
            for (x, gi) in p.iter_mut().zip(&g) {
                *x -= rate * gi;
            }
        }
        OptimizerKind::Adam => {
            state.t += 1;
            let bc1 = 1.0 - ADAM_BETA1.powi(state.t as i32);
            let bc2 = 1.0 - ADAM_BETA2.powi(state.t as i32);
            for i in 0..p.len() {
                state.m[i] = ADAM_BETA1 * state.m[i] + (1.0 - ADAM_BETA1) * g[i];
                state.v[i] = ADAM_BETA2 * state.v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                let mh = state.m[i] / bc1;
                let vh = state.v[i] / bc2;
                p[i] -= rate * mh / (vh.sqrt() + ADAM_EPS);
            }
        }
    }
    params.assign(&p)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: UnrolledModelParams,
    pub discriminator: Option<FeatureExtractorParams>,
    /// Mean batch loss before each update.
    pub loss_history: Vec<f64>,
}

/// Seeded reshuffling sampler over the dataset.
struct BatchSampler {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    fn new(n: usize, rng: ChaCha8Rng) -> Self {
        Self {
            order: (0..n).collect(),
            pos: n,
            rng,
        }
    }

    fn next(&mut self, batch: usize) -> Vec<usize> {
        (0..batch)
            .map(|_| {
                if self.pos == self.order.len() {
                    self.order.shuffle(&mut self.rng);
                    self.pos = 0;
                }
                self.pos += 1;
                self.order[self.pos - 1]
            })
            .collect()
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Build the feature extractor a given configuration starts from.
pub fn initial_discriminator(cfg: &TrainConfig) -> FeatureExtractorParams {
    FeatureExtractorParams::init(cfg.disc_features, cfg.disc_n_feat, 3, &mut stream(cfg.seed, 1))
}

#[derive(Clone, Copy, PartialEq)]
enum Phase {
    Pixel(PixelLoss),
    Adversarial,
}

/// Mean loss over a set of examples, without updating anything.
pub fn dataset_loss(params: &UnrolledModelParams, data: &[TrainingExample], kind: PixelLoss) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Config("dataset is empty".into()));
    }
    let mut total = 0.0;
    for ex in data {
        let (recon, _) = forward_with_tape(params, ex.model(), ex.y())?;
        total += pixel_loss(&recon, ex.truth(), kind)?;
    }
    Ok(total / data.len() as f64)
}

pub fn train(model_init: &UnrolledModelParams, dataset: &[TrainingExample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Config("training dataset is empty".into()));
    }
    model_init.validate()?;

    let mut params = model_init.clone();
    let mut opt = OptimizerState::new(cfg.optimizer, params.num_params());
    let adversarial = cfg.loss_kind == LossKind::Adversarial;
    let mut disc = adversarial.then(|| initial_discriminator(cfg));
    let mut disc_opt = disc.as_ref().map(|d| OptimizerState::new(cfg.optimizer, d.num_params()));

    let mut sampler = BatchSampler::new(dataset.len(), stream(cfg.seed, 0));
    let mut aug_rng = stream(cfg.seed, 2);
    let pretrain = cfg.pretrain();
    let started = Instant::now();

    let mut log = match &cfg.checkpoint_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let mut f = OpenOptions::new().create(true).write(true).truncate(true).open(dir.join("train_log.tsv"))?;
            writeln!(f, "step\tloss\twall_seconds")?;
            Some(f)
        }
        None => None,
    };

    let mut history = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch: Vec<TrainingExample> = sampler
            .next(cfg.batch_size)
            .into_iter()
            .map(|i| {
                if cfg.augment {
                    augment(&dataset[i], &mut aug_rng)
                } else {
                    Ok(dataset[i].clone())
                }
            })
            .collect::<Result<_>>()?;
        let phase = match cfg.loss_kind {
            LossKind::L1 => Phase::Pixel(PixelLoss::L1),
            LossKind::L2 => Phase::Pixel(PixelLoss::L2),
            LossKind::Adversarial if step < pretrain => Phase::Pixel(PixelLoss::L1),
            LossKind::Adversarial => Phase::Adversarial,
        };
        let inv_b = 1.0 / batch.len() as f64;

        let mut tapes = Vec::with_capacity(batch.len());
        for ex in &batch {
            tapes.push(forward_with_tape(&params, ex.model(), ex.y())?);
        }

        if phase == Phase::Adversarial && !cfg.freeze_discriminator {
            let d = disc.as_mut().expect("adversarial runs hold a feature extractor");
            let mut dgrad = d.zeros_like();
            for ((recon, _), ex) in tapes.iter().zip(&batch) {
                let fr = feature_forward(recon, d)?;
                let ft = feature_forward(ex.truth(), d)?;
                let (_, delta) = feature_distance(fr.output(), ft.output())?;
                // d(-||delta||^2) = -2 delta through D(recon), +2 delta through D(truth)
                feature_backward(&fr, d, &delta.map(|v| -2.0 * inv_b * v), &mut dgrad)?;
                feature_backward(&ft, d, &delta.map(|v| 2.0 * inv_b * v), &mut dgrad)?;
            }
            optimizer_step(d, &dgrad, disc_opt.as_mut().expect("paired with extractor"), cfg.finetune_rate)?;
            if !d.all_finite() {
                return Err(Error::Divergence { step, loss: f64::NAN });
            }
        }

        let mut grads = params.zeros_like();
        let mut loss = 0.0;
        for ((recon, tape), ex) in tapes.iter().zip(&batch) {
            let (l, mut up) = match phase {
                Phase::Pixel(kind) => pixel_loss_grad(recon, ex.truth(), kind)?,
                Phase::Adversarial => {
                    let (pix, mut up) = pixel_loss_grad(recon, ex.truth(), PixelLoss::L2)?;
                    let d = disc.as_ref().expect("adversarial runs hold a feature extractor");
                    let fr = feature_forward(recon, d)?;
                    let ft = feature_forward(ex.truth(), d)?;
                    let (dist, delta) = feature_distance(fr.output(), ft.output())?;
                    if cfg.adv_lambda != 0.0 {
                        let mut scratch = d.zeros_like();
                        let g = feature_backward(&fr, d, &delta.map(|v| 2.0 * cfg.adv_lambda * v), &mut scratch)?;
                        up = up.add(&g)?;
                    }
                    (cfg.adv_lambda * dist + pix, up)
                }
            };
            loss += inv_b * l;
            up = up.scale(inv_b);
            let g = backward_with_tape(&params, ex.model(), tape, &up)?;
            let mut acc = grads.flatten();
            acc.iter_mut().zip(g.params.flatten()).for_each(|(a, b)| *a += b);
            grads.assign(&acc)?;
        }
        if !loss.is_finite() {
            return Err(Error::Divergence { step, loss });
        }
        let rate = if phase == Phase::Adversarial { cfg.finetune_rate } else { cfg.learn_rate };
        optimizer_step(&mut params, &grads, &mut opt, rate)?;
        if !params.all_finite() {
            return Err(Error::Divergence { step, loss });
        }
        history.push(loss);

        if let Some(f) = log.as_mut() {
            writeln!(f, "{step}\t{loss:.9e}\t{:.3}", started.elapsed().as_secs_f64())?;
        }
        if let Some(dir) = &cfg.checkpoint_dir {
            if (step + 1) % cfg.checkpoint_every == 0 {
                let file = WeightsFile {
                    model: params.clone(),
                    discriminator: disc.clone(),
                };
                write_weights(&dir.join(format!("checkpoint_{:06}.bin", step + 1)), &file)?;
            }
        }
    }

    Ok(TrainOutcome {
        model: params,
        discriminator: disc,
        loss_history: history,
    })
}
