//! Command-line front end. [`dispatch`] returns the process exit status:
//! 0 on success, 1 on a runtime error, 2 on a usage error.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cs::{cs_reconstruct, CsConfig};
use crate::error::{Error, Result};
use crate::grid::ComplexGrid;
use crate::imaging::{
    estimate_sensitivities, normalize_kspace, zero_filled_recon, ImagingModel, SamplingMask, DEFAULT_SENS_THRESHOLD,
};
use crate::io::{
    load_dataset, read_image, read_kspace, read_mask, read_sens, read_weights, split_by_subject, write_image,
    write_kspace, write_mask, write_pgm, write_sens, write_weights, Dtype, WeightsFile, FULL_FILE, SENS_FILE,
    TRUTH_FILE,
};
use crate::metrics::{mean_std, MetricReport};
use crate::net::{unrolled_forward, ModelMeta, UnrolledModelParams};
use crate::phantom::{simulate_phantom, PhantomSpec};
use crate::sampling::{generate_mask, retrospective_undersample, MaskSpec};
use crate::training::{dataset_loss, train, LossKind, PixelLoss, TrainConfig, TrainingExample};

/// `HxW`
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims(pub usize, pub usize);

impl FromStr for Dims {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (a, b) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected HxW, got {s:?}"))?;
        let h = a.trim().parse().map_err(|_| format!("bad height in {s:?}"))?;
        let w = b.trim().parse().map_err(|_| format!("bad width in {s:?}"))?;
        Ok(Dims(h, w))
    }
}

#[derive(Debug, Parser)]
#[command(name = "csmri", version, about = "Compressed-sensing and unrolled-network MRI reconstruction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Method {
    Zf,
    Cs,
    Net,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LossArg {
    L1,
    L2,
    Adv,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write seeded synthetic phantoms, one subject directory each.
    Simulate {
        #[arg(long, default_value = "64x64")]
        size: Dims,
        #[arg(long, default_value_t = 4)]
        coils: usize,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of subjects to generate.
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, default_value_t = 8)]
        ellipses: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a variable-density Poisson-disc sampling mask.
    Mask {
        #[arg(long)]
        size: Dims,
        #[arg(long)]
        accel: f64,
        #[arg(long, default_value = "20x20")]
        calib: Dims,
        #[arg(long)]
        corner_cutting: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate coil sensitivities from the calibration region.
    Sens {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "20x20")]
        calib: Dims,
        #[arg(long, default_value_t = DEFAULT_SENS_THRESHOLD)]
        thresh: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply a mask to fully sampled k-space and normalize the result.
    Undersample {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        /// Keep raw signal units instead of scaling by the central block.
        #[arg(long)]
        no_normalize: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct an image from undersampled k-space.
    Recon {
        #[arg(long, value_enum)]
        method: Method,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        sens: PathBuf,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        step: Option<f64>,
        #[arg(long)]
        fista: bool,
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Also write a magnitude PGM.
        #[arg(long)]
        pgm: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train an unrolled network on a subject-directory dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Mask applied to every example; defaults to each subject's mask.cks.
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "l2")]
        loss: LossArg,
        #[arg(long, default_value_t = 4)]
        iters_unroll: usize,
        #[arg(long, default_value_t = 16)]
        feat: usize,
        #[arg(long, default_value_t = 2)]
        resblocks: usize,
        #[arg(long, default_value_t = 500)]
        steps: usize,
        #[arg(long, default_value_t = 2)]
        batch: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long, default_value_t = 1e-4)]
        finetune_lr: f64,
        #[arg(long, default_value_t = 1.0)]
        adv_lambda: f64,
        #[arg(long)]
        pretrain_steps: Option<usize>,
        #[arg(long)]
        augment: bool,
        #[arg(long)]
        shared: bool,
        #[arg(long, default_value_t = 0.0)]
        val_fraction: f64,
        #[arg(long, default_value_t = 100)]
        checkpoint_every: usize,
        #[arg(long)]
        checkpoint_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare a reconstruction with a reference image.
    Eval {
        #[arg(long)]
        test: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parse `args` (including the program name) and run the subcommand.
pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(p) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(p)?;
    }
    Ok(())
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Simulate {
            size,
            coils,
            noise,
            seed,
            count,
            ellipses,
            out,
        } => {
            if count == 0 {
                return Err(Error::Config("count must be >= 1".into()));
            }
            for i in 0..count {
                let spec = PhantomSpec::new(size.0, size.1, coils, seed.wrapping_add(i as u64))
                    .noise(noise)
                    .ellipses(ellipses);
                let p = simulate_phantom(&spec)?;
                let id = format!("subject_{i:03}");
                let dir = out.join(&id);
                fs::create_dir_all(&dir)?;
                write_image(&dir.join(TRUTH_FILE), &p.truth, Dtype::C128)?;
                write_sens(&dir.join(SENS_FILE), &p.sens)?;
                write_kspace(&dir.join(FULL_FILE), &p.kspace, Some(&id), None)?;
            }
            println!("wrote {count} subject(s) to {}", out.display());
        }
        Command::Mask {
            size,
            accel,
            calib,
            corner_cutting,
            seed,
            out,
        } => {
            let spec = MaskSpec::new(size.0, size.1, accel, (calib.0, calib.1))
                .corner_cutting(corner_cutting)
                .seed(seed);
            let g = generate_mask(&spec)?;
            ensure_parent(&out)?;
            write_mask(&out, &g.mask)?;
            println!(
                "nominal acceleration {:.3}, effective acceleration {:.3}, {} samples",
                g.nominal_acceleration,
                g.effective_acceleration(),
                g.mask.sampled()
            );
        }
        Command::Sens {
            input,
            calib,
            thresh,
            out,
        } => {
            let y = read_kspace(&input)?.kspace;
            let sens = estimate_sensitivities(&y, Some((calib.0, calib.1)), thresh)?;
            ensure_parent(&out)?;
            write_sens(&out, &sens)?;
        }
        Command::Undersample {
            input,
            mask,
            no_normalize,
            out,
        } => {
            let full = read_kspace(&input)?;
            let mask = read_mask(&mask)?;
            let y = retrospective_undersample(&full.kspace, &mask)?;
            ensure_parent(&out)?;
            if no_normalize {
                write_kspace(&out, &y, full.subject.as_deref(), None)?;
            } else {
                let (yn, scale) = normalize_kspace(&y)?;
                write_kspace(&out, &yn, full.subject.as_deref(), Some(scale))?;
            }
        }
        Command::Recon {
            method,
            input,
            sens,
            lambda,
            iters,
            step,
            fista,
            weights,
            pgm,
            out,
        } => {
            let file = read_kspace(&input)?;
            let y = file.kspace;
            let mask = match y.mask() {
                Some(m) => m.clone(),
                None => SamplingMask::full(y.dims().0, y.dims().1),
            };
            let model = ImagingModel::new(read_sens(&sens)?, mask)?;
            let img = match method {
                Method::Zf => zero_filled_recon(&model, &y)?,
                Method::Cs => {
                    let mut cfg = CsConfig::default();
                    if let Some(l) = lambda {
                        cfg.lambda = l;
                    }
                    if let Some(n) = iters {
                        cfg.max_iters = n;
                    }
                    if let Some(t) = step {
                        cfg.step = t;
                    }
                    cfg.use_fista = fista;
                    cfg.wavelet_levels = cfg.wavelet_levels.min(max_levels_for(model.dims()));
                    cs_reconstruct(&model, &y, &cfg)?.image
                }
                Method::Net => {
                    let path = weights.ok_or_else(|| Error::Config("--method net needs --weights".into()))?;
                    let w = read_weights(&path)?;
                    unrolled_forward(&w.model, &model, &y)?
                }
            };
            let img = match file.scale {
                Some(s) => img.scale(s),
                None => img,
            };
            ensure_parent(&out)?;
            write_image(&out, &img, Dtype::C128)?;
            if let Some(p) = pgm {
                write_pgm(&p, &img)?;
            }
        }
        Command::Train {
            data,
            mask,
            loss,
            iters_unroll,
            feat,
            resblocks,
            steps,
            batch,
            lr,
            finetune_lr,
            adv_lambda,
            pretrain_steps,
            augment,
            shared,
            val_fraction,
            checkpoint_every,
            checkpoint_dir,
            seed,
            out,
        } => {
            let mask = mask.map(|p| read_mask(&p)).transpose()?;
            let subjects = load_dataset(&data, mask.as_ref())?;
            let (train_set, val_set) = split_by_subject(subjects, val_fraction, seed);
            let examples: Vec<TrainingExample> = train_set.into_iter().flat_map(|s| s.examples).collect();
            let val: Vec<TrainingExample> = val_set.into_iter().flat_map(|s| s.examples).collect();

            let meta = ModelMeta::new(iters_unroll, feat, resblocks).shared(shared);
            let init = UnrolledModelParams::init(meta, &mut ChaCha8Rng::seed_from_u64(seed));
            let cfg = TrainConfig {
                loss_kind: match loss {
                    LossArg::L1 => LossKind::L1,
                    LossArg::L2 => LossKind::L2,
                    LossArg::Adv => LossKind::Adversarial,
                },
                steps,
                batch_size: batch,
                learn_rate: lr,
                finetune_rate: finetune_lr,
                adv_lambda,
                seed,
                augment,
                checkpoint_every,
                pretrain_steps,
                checkpoint_dir,
                ..Default::default()
            };
            let outcome = train(&init, &examples, &cfg)?;
            ensure_parent(&out)?;
            write_weights(
                &out,
                &WeightsFile {
                    model: outcome.model.clone(),
                    discriminator: outcome.discriminator,
                },
            )?;
            let first = outcome.loss_history.first().copied().unwrap_or(f64::NAN);
            let last = outcome.loss_history.last().copied().unwrap_or(f64::NAN);
            println!("trained {} examples for {steps} steps: loss {first:.4e} -> {last:.4e}", examples.len());
            if !val.is_empty() {
                let v = dataset_loss(&outcome.model, &val, PixelLoss::L2)?;
                println!("validation L2 loss over {} examples: {v:.4e}", val.len());
            }
        }
        Command::Eval { test, reference, out } => {
            let x = read_slices(&test)?;
            let r = read_slices(&reference)?;
            if x.len() != r.len() {
                return Err(Error::Size(format!("{} test slices vs {} reference slices", x.len(), r.len())));
            }
            let reports = x
                .iter()
                .zip(&r)
                .map(|(a, b)| MetricReport::compute(a, b))
                .collect::<Result<Vec<_>>>()?;
            let text = render_report(&reports);
            ensure_parent(&out)?;
            crate::io::atomic_write(&out, text.as_bytes())?;
            let json = serde_json::to_vec_pretty(&json_report(&reports)).expect("report serializes");
            crate::io::atomic_write(&out.with_extension("json"), &json)?;
            print!("{text}");
        }
    }
    Ok(())
}

fn max_levels_for(dims: (usize, usize)) -> usize {
    crate::wavelet::max_levels(dims.0, dims.1).max(1)
}

/// A single image, or a stack of slices stored along the first axis.
fn read_slices(path: &Path) -> Result<Vec<ComplexGrid>> {
    match read_image(path) {
        Ok(img) => Ok(vec![img]),
        Err(_) => Ok(read_kspace(path)?.kspace.planes().to_vec()),
    }
}

fn fmt_db(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:.4}")
    }
}

fn render_report(reports: &[MetricReport]) -> String {
    let mut s = String::from("slice\tpsnr_db\tnrmse\tssim\tmse\n");
    for (i, r) in reports.iter().enumerate() {
        s += &format!("{i}\t{}\t{:.6}\t{:.6}\t{:.6e}\n", fmt_db(r.psnr), r.nrmse, r.ssim, r.mse);
    }
    let col = |f: fn(&MetricReport) -> f64| mean_std(&reports.iter().map(f).collect::<Vec<_>>());
    let (p, ps) = col(|r| r.psnr);
    let (n, ns) = col(|r| r.nrmse);
    let (q, qs) = col(|r| r.ssim);
    let (m, ms) = col(|r| r.mse);
    s += &format!("mean\t{}\t{n:.6}\t{q:.6}\t{m:.6e}\n", fmt_db(p));
    s += &format!("std\t{}\t{ns:.6}\t{qs:.6}\t{ms:.6e}\n", fmt_db(ps));
    s
}

fn json_report(reports: &[MetricReport]) -> serde_json::Value {
    let num = |v: f64| if v.is_finite() { serde_json::json!(v) } else { serde_json::json!(v.to_string()) };
    let col = |f: fn(&MetricReport) -> f64| {
        let (m, s) = mean_std(&reports.iter().map(f).collect::<Vec<_>>());
        serde_json::json!({ "mean": num(m), "std": num(s) })
    };
    serde_json::json!({
        "slices": reports.iter().map(|r| serde_json::json!({
            "psnr": num(r.psnr), "nrmse": num(r.nrmse), "ssim": num(r.ssim), "mse": num(r.mse),
        })).collect::<Vec<_>>(),
        "aggregate": {
            "psnr": col(|r| r.psnr),
            "nrmse": col(|r| r.nrmse),
            "ssim": col(|r| r.ssim),
            "mse": col(|r| r.mse),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dims_parse() {
        assert_eq!("20x20".parse::<Dims>().unwrap(), Dims(20, 20));
        assert_eq!("320X256".parse::<Dims>().unwrap(), Dims(320, 256));
        assert!("20".parse::<Dims>().is_err());
        assert!("ax3".parse::<Dims>().is_err());
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(dispatch(["csmri", "frobnicate"]), 2);
        assert_eq!(dispatch(["csmri", "mask", "--size", "32x32"]), 2);
        assert_eq!(dispatch(["csmri", "mask", "--bogus"]), 2);
    }
}
