//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. Pass criterion numbers as arguments to
//! run a subset, e.g. `cargo test --test acceptance -- 3 7`.

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use csmri::cs::{cs_reconstruct, CsConfig};
use csmri::error::ParseError;
use csmri::grid::{fft2c, inner_product, inner_product_stack, ComplexGrid};
use csmri::imaging::{
    centered_block_origin, normalize_kspace, zero_filled_recon, ImagingModel, MultiCoilKspace, Normalization,
    SamplingMask, SensitivityMaps,
};
use csmri::io::{CksFile, CksHeader, CksPayload, Dtype, Precision, WeightsFile};
use csmri::metrics::{mse, nrmse, psnr, ssim};
use csmri::net::{
    conv2d_circular, unrolled_backward, unrolled_forward, ConvLayerParams, ModelMeta, ParamSet, Tensor,
    UnrolledModelParams,
};
use csmri::phantom::{simulate_phantom, PhantomSpec};
use csmri::sampling::{density_radius, generate_mask, retrospective_undersample, MaskSpec};
use csmri::training::{dataset_loss, train, LossKind, PixelLoss, TrainConfig, TrainingExample};
use csmri::wavelet::{wavelet_forward, Wavelet};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = std::result::Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn rand_grid(rng: &mut impl Rng, h: usize, w: usize) -> ComplexGrid {
    ComplexGrid::from_fn(h, w, |_, _| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
}

fn rand_mask(rng: &mut impl Rng, h: usize, w: usize, p: f64) -> SamplingMask {
    let mut bits: Vec<bool> = (0..h * w).map(|_| rng.random_bool(p)).collect();
    let (r0, c0) = centered_block_origin(h, w, 4, 4);
    for r in r0..r0 + 4 {
        for c in c0..c0 + 4 {
            bits[r * w + c] = true;
        }
    }
    SamplingMask::new(h, w, bits, 4, 4, 1.0 / p).unwrap()
}

fn rand_model(rng: &mut impl Rng, coils: usize, n: usize) -> ImagingModel {
    let sens = SensitivityMaps::from_profiles((0..coils).map(|_| rand_grid(rng, n, n)).collect(), 1e-9).unwrap();
    ImagingModel::new(sens, rand_mask(rng, n, n, 0.4)).unwrap()
}

fn rel(a: Complex64, b: Complex64) -> f64 {
    (a - b).norm() / a.norm().max(b.norm()).max(f64::MIN_POSITIVE)
}

fn c1_adjoint() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for i in 0..100 {
        let coils = [1, 4, 8][i % 3];
        let model = rand_model(&mut rng, coils, 16);
        let x = rand_grid(&mut rng, 16, 16);
        let y = MultiCoilKspace::new((0..coils).map(|_| rand_grid(&mut rng, 16, 16)).collect()).unwrap();
        let lhs = inner_product_stack(model.forward(&x).unwrap().planes(), y.planes()).unwrap();
        let rhs = inner_product(&x, &model.adjoint(&y).unwrap()).unwrap();
        worst = worst.max(rel(lhs, rhs));
    }
    ensure(worst < 1e-10, format!("max relative discrepancy {worst:.2e}"))?;
    Ok(format!("100 dot tests, max relative discrepancy {worst:.2e}"))
}

/// Centered DFT evaluated term by term.
fn centered_dft(x: &ComplexGrid) -> ComplexGrid {
    let (h, w) = x.dims();
    let (oh, ow) = ((h / 2) as f64, (w / 2) as f64);
    let scale = 1.0 / ((h * w) as f64).sqrt();
    ComplexGrid::from_fn(h, w, |k, l| {
        let mut acc = Complex64::new(0.0, 0.0);
        for n in 0..h {
            for m in 0..w {
                let phase = -2.0 * PI
                    * ((k as f64 - oh) * (n as f64 - oh) / h as f64 + (l as f64 - ow) * (m as f64 - ow) / w as f64);
                acc += x[(n, m)] * Complex64::from_polar(1.0, phase);
            }
        }
        acc * scale
    })
}

/// Circular cross-correlation through plain DFTs of every channel.
fn fft_conv_oracle(x: &Tensor, p: &ConvLayerParams) -> Tensor {
    let (cin, h, w) = x.shape();
    let k = p.kh;
    let half = (k / 2) as isize;
    let dft = |v: &[Complex64], sign: f64| -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); h * w];
        for a in 0..h {
            for b in 0..w {
                let mut acc = Complex64::new(0.0, 0.0);
                for n in 0..h {
                    for m in 0..w {
                        let ph = sign * 2.0 * PI * ((a * n) as f64 / h as f64 + (b * m) as f64 / w as f64);
                        acc += v[n * w + m] * Complex64::from_polar(1.0, ph);
                    }
                }
                out[a * w + b] = acc;
            }
        }
        out
    };
    let mut out = vec![0.0; p.out_ch * h * w];
    for o in 0..p.out_ch {
        let mut acc = vec![Complex64::new(0.0, 0.0); h * w];
        for c in 0..cin {
            // correlation kernel flipped into a convolution kernel
            let mut kern = vec![Complex64::new(0.0, 0.0); h * w];
            for di in 0..k {
                for dj in 0..k {
                    let r = (-(di as isize - half)).rem_euclid(h as isize) as usize;
                    let s = (-(dj as isize - half)).rem_euclid(w as isize) as usize;
                    kern[r * w + s] += Complex64::new(p.weight[((o * p.in_ch + c) * k + di) * k + dj], 0.0);
                }
            }
            let xs: Vec<Complex64> = x.channel(c).iter().map(|&v| Complex64::new(v, 0.0)).collect();
            let (fx, fk) = (dft(&xs, -1.0), dft(&kern, -1.0));
            for i in 0..h * w {
                acc[i] += fx[i] * fk[i];
            }
        }
        let back = dft(&acc, 1.0);
        for i in 0..h * w {
            out[o * h * w + i] = back[i].re / (h * w) as f64 + p.bias[o];
        }
    }
    Tensor::from_vec(p.out_ch, h, w, out).unwrap()
}

fn haar_level_oracle(g: &ComplexGrid) -> ComplexGrid {
    let (h, w) = g.dims();
    let (hh, hw) = (h / 2, w / 2);
    let mut out = ComplexGrid::zeros(h, w);
    for i in 0..hh {
        for j in 0..hw {
            let a = g[(2 * i, 2 * j)];
            let b = g[(2 * i, 2 * j + 1)];
            let c = g[(2 * i + 1, 2 * j)];
            let d = g[(2 * i + 1, 2 * j + 1)];
            out[(i, j)] = (a + b + c + d) * 0.5;
            out[(i, j + hw)] = (a - b + c - d) * 0.5;
            out[(i + hh, j)] = (a + b - c - d) * 0.5;
            out[(i + hh, j + hw)] = (a - b - c + d) * 0.5;
        }
    }
    out
}

fn max_abs_diff(a: &ComplexGrid, b: &ComplexGrid) -> f64 {
    a.sub(b).unwrap().as_slice().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn c2_transforms() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut fft_err = 0.0f64;
    for (h, w) in [(1, 1), (2, 2), (3, 5), (4, 4), (5, 8), (7, 7), (8, 6), (8, 8)] {
        let x = rand_grid(&mut rng, h, w);
        fft_err = fft_err.max(max_abs_diff(&fft2c(&x), &centered_dft(&x)));
    }
    let mut conv_err = 0.0f64;
    for (cin, cout, n) in [(1, 1, 6), (2, 3, 6), (3, 2, 8), (2, 2, 5)] {
        let x = Tensor::from_vec(cin, n, n, (0..cin * n * n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let mut p = ConvLayerParams::init(cin, cout, 3, 1, &mut rng);
        p.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
        let d = conv2d_circular(&x, &p).unwrap().sub(&fft_conv_oracle(&x, &p)).unwrap().max_abs();
        conv_err = conv_err.max(d);
    }
    let mut haar_err = 0.0f64;
    for (h, w) in [(2, 2), (8, 8), (4, 8)] {
        let x = rand_grid(&mut rng, h, w);
        haar_err = haar_err.max(max_abs_diff(&wavelet_forward(&x, 1, Wavelet::Haar).unwrap(), &haar_level_oracle(&x)));
    }
    // two levels: the oracle recursed on the top-left quadrant
    let x = rand_grid(&mut rng, 8, 8);
    let mut two = haar_level_oracle(&x);
    let ll = ComplexGrid::from_fn(4, 4, |r, c| two[(r, c)]);
    let ll2 = haar_level_oracle(&ll);
    for r in 0..4 {
        for c in 0..4 {
            two[(r, c)] = ll2[(r, c)];
        }
    }
    haar_err = haar_err.max(max_abs_diff(&wavelet_forward(&x, 2, Wavelet::Haar).unwrap(), &two));

    let worst = fft_err.max(conv_err).max(haar_err);
    ensure(worst < 1e-6, format!("fft {fft_err:.1e}, conv {conv_err:.1e}, haar {haar_err:.1e}"))?;
    Ok(format!("max elementwise error: fft {fft_err:.1e}, conv {conv_err:.1e}, haar {haar_err:.1e}"))
}

fn c3_gradients() -> Check {
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut kinks = 0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let model = rand_model(&mut rng, 2, 8);
        let meta = ModelMeta::new(2, 4, 1).with_normalization(Normalization::None);
        let mut params = UnrolledModelParams::init(meta, &mut rng);
        let mut flat = params.flatten();
        for (i, v) in flat.iter_mut().enumerate() {
            if i < 2 {
                *v = rng.random_range(0.2..0.6);
            } else {
                *v += rng.random_range(-0.05..0.05);
            }
        }
        params.assign(&flat).unwrap();
        let y = model.forward(&rand_grid(&mut rng, 8, 8)).unwrap();
        let up = rand_grid(&mut rng, 8, 8);
        let grads = unrolled_backward(&params, &model, &y, &up).unwrap().params.flatten();
        let scale = grads.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let loss = |f: &[f64]| {
            let mut p = params.clone();
            p.assign(f).unwrap();
            inner_product(&up, &unrolled_forward(&p, &model, &y).unwrap()).unwrap().re
        };
        let central = |i: usize, step: f64| {
            let (mut a, mut b) = (flat.clone(), flat.clone());
            a[i] += step;
            b[i] -= step;
            (loss(&a) - loss(&b)) / (2.0 * step)
        };
        let rel_err = |fd: f64, an: f64| (fd - an).abs() / fd.abs().max(an.abs()).max(1e-3 * scale);
        for i in 0..flat.len() {
            let mut err = rel_err(central(i, h), grads[i]);
            if err >= 1e-6 {
                // kink inside the stencil: refine
                let fine = central(i, h / 10.0);
                if (fine - central(i, h)).abs() > 1e-6 * fine.abs().max(1e-3 * scale) {
                    kinks += 1;
                    err = rel_err(fine, grads[i]);
                }
            }
            worst = worst.max(err);
            checked += 1;
        }
    }
    ensure(worst < 1e-6, format!("max relative error {worst:.2e}"))?;
    Ok(format!(
        "20 models, {checked} parameters, max relative error {worst:.2e} ({kinks} difference quotients straddled a ReLU switch and were refined to h/10)"
    ))
}

fn c4_solver_equivalence() -> Check {
    let mut worst = 0.0f64;
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        let model = rand_model(&mut rng, 4, 16);
        let y = model.forward(&rand_grid(&mut rng, 16, 16)).unwrap();
        let t = rng.random_range(0.1..0.5);
        let k = 4;
        let mut params = UnrolledModelParams::zeros(ModelMeta::new(k, 8, 2).with_normalization(Normalization::None));
        params.step_sizes = vec![t; k];
        let net = unrolled_forward(&params, &model, &y).unwrap();
        let cfg = CsConfig {
            lambda: 0.0,
            step: t,
            max_iters: k,
            tol: 0.0,
            ..Default::default()
        };
        let cs = cs_reconstruct(&model, &y, &cfg).unwrap();
        ensure(cs.iters_used == k, "solver stopped early")?;
        worst = worst.max(max_abs_diff(&net, &cs.image));
    }
    ensure(worst < 1e-8, format!("max difference {worst:.2e}"))?;
    Ok(format!("5 instances, K=4, max elementwise difference {worst:.2e}"))
}

struct CsCase {
    model: ImagingModel,
    y: MultiCoilKspace,
    truth: ComplexGrid,
}

fn cs_case(seed: u64, mask: &SamplingMask, noise: f64) -> CsCase {
    let p = simulate_phantom(&PhantomSpec::new(64, 64, 4, seed).noise(noise)).unwrap();
    let (y, scale) = normalize_kspace(&retrospective_undersample(&p.kspace, mask).unwrap()).unwrap();
    CsCase {
        model: ImagingModel::new(p.sens, mask.clone()).unwrap(),
        y,
        truth: p.truth.scale(1.0 / scale),
    }
}

fn mean_cs_psnr(cases: &[CsCase], lambda: f64) -> f64 {
    let cfg = CsConfig {
        lambda,
        max_iters: 300,
        tol: 1e-6,
        use_fista: true,
        ..Default::default()
    };
    cases
        .iter()
        .map(|c| psnr(&cs_reconstruct(&c.model, &c.y, &cfg).unwrap().image, &c.truth).unwrap())
        .sum::<f64>()
        / cases.len() as f64
}

fn c5_classical_cs() -> Check {
    let mask = generate_mask(&MaskSpec::new(64, 64, 4.0, (12, 12)).seed(5)).unwrap().mask;
    let noise = 0.02;
    let tuning: Vec<CsCase> = (0..3).map(|i| cs_case(5000 + i, &mask, noise)).collect();
    let test: Vec<CsCase> = (0..10).map(|i| cs_case(5100 + i, &mask, noise)).collect();

    let grid: Vec<f64> = (0..=12).map(|i| 10f64.powf(-5.0 + 0.5 * i as f64)).collect();
    let mut best = (f64::NEG_INFINITY, 0.0);
    for &l in &grid {
        let v = mean_cs_psnr(&tuning, l);
        if v > best.0 {
            best = (v, l);
        }
    }
    let lambda = best.1;
    let zf = test
        .iter()
        .map(|c| psnr(&zero_filled_recon(&c.model, &c.y).unwrap(), &c.truth).unwrap())
        .sum::<f64>()
        / test.len() as f64;
    let tuned = mean_cs_psnr(&test, lambda);
    let small = mean_cs_psnr(&test, lambda / 100.0);
    let large = mean_cs_psnr(&test, lambda * 100.0);
    let detail = format!(
        "R={:.2}, lambda*={lambda:.1e}: zero-filled {zf:.2} dB, CS {tuned:.2} dB (gain {:.2}); lambda/100 {small:.2} dB, lambda*100 {large:.2} dB",
        mask.effective_acceleration(),
        tuned - zf
    );
    ensure(tuned - zf >= 3.0, format!("gain below 3 dB: {detail}"))?;
    ensure(tuned - small >= 1.0 && tuned - large >= 1.0, format!("lambda sweep too flat: {detail}"))?;
    Ok(detail)
}

fn desk_dataset(n: usize, seed0: u64, mask: &SamplingMask) -> Vec<TrainingExample> {
    (0..n)
        .map(|i| {
            let p = simulate_phantom(&PhantomSpec::new(32, 32, 4, seed0 + i as u64)).unwrap();
            TrainingExample::normalized(p.truth, p.sens, mask.clone()).unwrap()
        })
        .collect()
}

fn desk_mask() -> SamplingMask {
    generate_mask(&MaskSpec::new(32, 32, 4.0, (8, 8)).seed(6)).unwrap().mask
}

fn mean_psnr<F: Fn(&TrainingExample) -> ComplexGrid>(set: &[TrainingExample], recon: F) -> f64 {
    set.iter().map(|e| psnr(&recon(e), e.truth()).unwrap()).sum::<f64>() / set.len() as f64
}

fn c6_learned_gain() -> Check {
    let mask = desk_mask();
    let train_set = desk_dataset(20, 6000, &mask);
    let test_set = desk_dataset(5, 6100, &mask);
    let init = UnrolledModelParams::init(ModelMeta::new(2, 8, 2), &mut ChaCha8Rng::seed_from_u64(6));
    let cfg = TrainConfig {
        loss_kind: LossKind::L2,
        steps: 500,
        batch_size: 2,
        learn_rate: 1e-3,
        finetune_rate: 1e-4,
        seed: 6,
        ..Default::default()
    };
    let before = dataset_loss(&init, &train_set, PixelLoss::L2).unwrap();
    let out = train(&init, &train_set, &cfg).map_err(|e| e.to_string())?;
    let after = dataset_loss(&out.model, &train_set, PixelLoss::L2).unwrap();
    let zf = mean_psnr(&test_set, |e| zero_filled_recon(e.model(), e.y()).unwrap());
    let net = mean_psnr(&test_set, |e| unrolled_forward(&out.model, e.model(), e.y()).unwrap());
    let detail = format!(
        "R={:.2}: test zero-filled {zf:.2} dB, network {net:.2} dB (gain {:.2}); train loss {before:.3e} -> {after:.3e} (ratio {:.3})",
        mask.effective_acceleration(),
        net - zf,
        after / before
    );
    ensure(net - zf >= 3.0, format!("gain below 3 dB: {detail}"))?;
    ensure(after < 0.5 * before, format!("loss ratio not below 0.5: {detail}"))?;
    Ok(detail)
}

fn check_mask(spec: &MaskSpec, target: f64) -> std::result::Result<(f64, usize), String> {
    let g = generate_mask(spec).map_err(|e| e.to_string())?;
    let m = &g.mask;
    let (ch, cw) = m.calib();
    let (r0, c0) = centered_block_origin(spec.height, spec.width, ch, cw);
    for r in r0..r0 + ch {
        for c in c0..c0 + cw {
            ensure(m.get(r, c), format!("calibration sample ({r},{c}) missing"))?;
        }
    }
    let pts: Vec<(usize, usize)> = (0..spec.height)
        .flat_map(|r| (0..spec.width).map(move |c| (r, c)))
        .filter(|&(r, c)| m.get(r, c) && !m.in_calibration(r, c))
        .collect();
    for (i, &(ra, ca)) in pts.iter().enumerate() {
        let rad_a = density_radius(spec, g.base_radius, ra, ca);
        for &(rb, cb) in &pts[i + 1..] {
            let need = rad_a.max(density_radius(spec, g.base_radius, rb, cb));
            let d2 = (ra as f64 - rb as f64).powi(2) + (ca as f64 - cb as f64).powi(2);
            ensure(d2 >= need * need, format!("samples ({ra},{ca}) and ({rb},{cb}) closer than {need:.3}"))?;
        }
    }
    let achieved = if spec.corner_cutting { g.effective_acceleration() } else { g.nominal_acceleration };
    ensure(
        (achieved - target).abs() <= 0.10 * target,
        format!("acceleration {achieved:.3} outside 10% of {target}"),
    )?;
    Ok((achieved, pts.len()))
}

fn c7_masks() -> Check {
    let mut parts = Vec::new();
    for r in [2.0, 4.0, 8.0, 12.0] {
        let spec = MaskSpec::new(128, 128, r, (20, 20)).seed(7);
        let (a, _) = check_mask(&spec, r)?;
        parts.push(format!("R{r}->{a:.2}"));
    }
    let spec = MaskSpec::new(320, 256, 9.4, (20, 20)).corner_cutting(true).seed(7);
    let (eff, _) = check_mask(&spec, 12.0)?;
    parts.push(format!("9.4+corner cutting on 320x256 -> effective {eff:.2}"));
    Ok(parts.join(", "))
}

fn c8_metrics() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (h, w) = (rng.random_range(11..24), rng.random_range(11..24));
        let x = rand_grid(&mut rng, h, w);
        let r = rand_grid(&mut rng, h, w);
        let n = (h * w) as f64;
        let mut se = 0.0;
        let mut peak = 0.0f64;
        let mut pow = 0.0;
        for i in 0..h {
            for j in 0..w {
                se += (x[(i, j)] - r[(i, j)]).norm_sqr();
                peak = peak.max(r[(i, j)].norm_sqr());
                pow += r[(i, j)].norm_sqr();
            }
        }
        let m = se / n;
        worst = worst
            .max((mse(&x, &r).unwrap() - m).abs())
            .max((psnr(&x, &r).unwrap() - 10.0 * (peak / m).log10()).abs())
            .max((nrmse(&x, &r).unwrap() - m.sqrt() / (pow / n).sqrt()).abs());
    }
    ensure(worst < 1e-9, format!("max formula deviation {worst:.2e}"))?;
    let r = rand_grid(&mut rng, 16, 16);
    let z = nrmse(&ComplexGrid::zeros(16, 16), &r).unwrap();
    ensure(z == 1.0, format!("nrmse(0, x_r) = {z}"))?;
    let s = ssim(&r, &r).unwrap();
    ensure(s == 1.0, format!("ssim(x, x) = {s}"))?;
    Ok(format!("100 pairs, max deviation {worst:.1e}; nrmse(0,x_r) = {z}; ssim(x,x) = {s}"))
}

fn c9_adversarial() -> Check {
    let mask = desk_mask();
    let data = desk_dataset(20, 9000, &mask);
    let init = UnrolledModelParams::init(ModelMeta::new(2, 8, 2), &mut ChaCha8Rng::seed_from_u64(9));

    let l2_cfg = TrainConfig {
        steps: 20,
        learn_rate: 1e-3,
        finetune_rate: 1e-3,
        seed: 9,
        ..Default::default()
    };
    let l2 = train(&init, &data, &l2_cfg).map_err(|e| e.to_string())?;
    let degenerate = TrainConfig {
        loss_kind: LossKind::Adversarial,
        adv_lambda: 0.0,
        freeze_discriminator: true,
        pretrain_steps: Some(0),
        ..l2_cfg.clone()
    };
    let adv0 = train(&init, &data, &degenerate).map_err(|e| e.to_string())?;
    ensure(adv0.loss_history == l2.loss_history, "degenerate adversarial trajectory differs from L2")?;

    let steps = 200;
    let l2_run = train(&init, &data, &TrainConfig { steps, ..l2_cfg.clone() }).map_err(|e| e.to_string())?;
    let joint_cfg = TrainConfig {
        loss_kind: LossKind::Adversarial,
        steps,
        learn_rate: 1e-3,
        finetune_rate: 1e-4,
        adv_lambda: 1.0,
        seed: 9,
        ..Default::default()
    };
    let joint = train(&init, &data, &joint_cfg).map_err(|e| e.to_string())?;
    ensure(joint.loss_history.iter().all(|v| v.is_finite()), "non-finite loss in joint run")?;
    let l2_pix = dataset_loss(&l2_run.model, &data, PixelLoss::L2).unwrap();
    let joint_pix = dataset_loss(&joint.model, &data, PixelLoss::L2).unwrap();
    let detail = format!(
        "20-step degenerate trajectory identical; {steps}-step pixel L2: L2-only {l2_pix:.3e}, adversarial {joint_pix:.3e} (ratio {:.3})",
        joint_pix / l2_pix
    );
    ensure(joint_pix <= 2.0 * l2_pix, format!("pixel loss more than doubled: {detail}"))?;
    Ok(detail)
}

fn mutate(rng: &mut impl Rng, bytes: &[u8], header_len: usize) -> Vec<u8> {
    let mut b = bytes.to_vec();
    match rng.random_range(0..6) {
        0 => {
            let i = rng.random_range(0..header_len);
            b[i] = rng.random();
        }
        1 => {
            let i = rng.random_range(0..header_len);
            b.insert(i, rng.random());
        }
        2 => {
            let i = rng.random_range(0..header_len);
            b.remove(i);
        }
        3 => b.truncate(rng.random_range(0..b.len())),
        4 => {
            let i = rng.random_range(0..header_len);
            b[i] = b"0123456789=,:x\n"[rng.random_range(0..15)];
        }
        _ => {
            let i = rng.random_range(0..header_len);
            let j = rng.random_range(0..header_len);
            b.swap(i, j);
        }
    }
    b
}

fn c10_io() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let (c, h, w) = (3, 12, 10);
    let data: Vec<Complex64> = (0..c * h * w).map(|_| Complex64::new(rng.random(), rng.random())).collect();
    let mut header = CksHeader {
        dtype: Dtype::C128,
        coils: Some(c),
        height: h,
        width: w,
        subject: Some("subject_007".into()),
        normalization: Some(Normalization::Central5x5),
        scale: Some(0.125),
        attached_mask: true,
        calib: Some((4, 4)),
        accel: Some(2.0),
    };
    let mask_bytes: Vec<u8> = (0..h * w).map(|_| rng.random_range(0..2)).collect();
    let file = CksFile {
        header: header.clone(),
        payload: CksPayload::Complex(data.clone()),
        mask: Some(mask_bytes),
    };
    let bytes = file.to_bytes();
    ensure(CksFile::from_bytes(&bytes).as_ref() == Ok(&file), "c128 round trip")?;

    header.dtype = Dtype::C64;
    let f32_data = data.iter().map(|z| Complex64::new(z.re as f32 as f64, z.im as f32 as f64)).collect();
    let f64_file = CksFile {
        header: header.clone(),
        payload: CksPayload::Complex(f32_data),
        mask: None,
    };
    let mut single = f64_file.clone();
    single.header.attached_mask = false;
    ensure(CksFile::from_bytes(&single.to_bytes()).as_ref() == Ok(&single), "c64 round trip")?;

    let mask = desk_mask();
    let mfile = CksFile {
        header: CksHeader {
            dtype: Dtype::U8,
            coils: None,
            height: 32,
            width: 32,
            subject: None,
            normalization: None,
            scale: None,
            attached_mask: false,
            calib: Some(mask.calib()),
            accel: Some(mask.accel_requested()),
        },
        payload: CksPayload::Bytes(mask.to_u8()),
        mask: None,
    };
    ensure(CksFile::from_bytes(&mfile.to_bytes()).as_ref() == Ok(&mfile), "u8 round trip")?;
    ensure(
        matches!(CksFile::from_bytes(&bytes[..bytes.len() - 1]), Err(ParseError::LengthMismatch { .. })),
        "truncated file not reported as a length mismatch",
    )?;

    // weights: a briefly trained model reconstructs identically after a round trip
    let data_set = desk_dataset(2, 10_000, &mask);
    let init = UnrolledModelParams::init(ModelMeta::new(2, 4, 1), &mut ChaCha8Rng::seed_from_u64(10));
    let trained = train(
        &init,
        &data_set,
        &TrainConfig {
            steps: 3,
            loss_kind: LossKind::Adversarial,
            pretrain_steps: Some(1),
            disc_n_feat: 16,
            ..Default::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let wf = WeightsFile {
        model: trained.model,
        discriminator: trained.discriminator,
    };
    let wbytes = wf.to_bytes(Precision::F64);
    let back = WeightsFile::from_bytes(&wbytes).map_err(|e| e.to_string())?;
    ensure(back == wf, "weights round trip")?;
    let ex = &data_set[0];
    let a = unrolled_forward(&wf.model, ex.model(), ex.y()).unwrap();
    let b = unrolled_forward(&back.model, ex.model(), ex.y()).unwrap();
    ensure(a == b, "reconstruction changed after weights round trip")?;

    let header_len = bytes.windows(2).position(|p| p == b"\n\n").unwrap() + 2;
    let mut ok = 0;
    let mut errs = 0;
    for _ in 0..1000 {
        let m = mutate(&mut rng, &bytes, header_len);
        match catch_unwind(|| CksFile::from_bytes(&m)) {
            Ok(Ok(_)) => ok += 1,
            Ok(Err(_)) => errs += 1,
            Err(_) => return Err("CKS parser panicked on a mutated header".into()),
        }
    }
    let wheader = 16 + u64::from_le_bytes(wbytes[8..16].try_into().unwrap()) as usize;
    let (mut wok, mut werrs) = (0, 0);
    for _ in 0..1000 {
        let m = mutate(&mut rng, &wbytes, wheader);
        match catch_unwind(|| WeightsFile::from_bytes(&m)) {
            Ok(Ok(_)) => wok += 1,
            Ok(Err(_)) => werrs += 1,
            Err(_) => return Err("weights parser panicked on a mutated manifest".into()),
        }
    }
    Ok(format!(
        "round trips bit-exact; CKS fuzz: {errs} named errors, {ok} benign; weights fuzz: {werrs} named errors, {wok} benign"
    ))
}

struct Criterion {
    id: u32,
    name: &'static str,
    limit: Duration,
    run: fn() -> Check,
}

fn main() {
    let criteria = [
        Criterion { id: 1, name: "adjoint correctness", limit: Duration::from_secs(5), run: c1_adjoint },
        Criterion { id: 2, name: "transform oracles", limit: Duration::from_secs(10), run: c2_transforms },
        Criterion { id: 3, name: "gradient check", limit: Duration::from_secs(60), run: c3_gradients },
        Criterion { id: 4, name: "solver equivalence", limit: Duration::from_secs(5), run: c4_solver_equivalence },
        Criterion { id: 5, name: "classical CS gain", limit: Duration::from_secs(600), run: c5_classical_cs },
        Criterion { id: 6, name: "learned reconstruction gain", limit: Duration::from_secs(900), run: c6_learned_gain },
        Criterion { id: 7, name: "mask properties", limit: Duration::from_secs(120), run: c7_masks },
        Criterion { id: 8, name: "metric formulas", limit: Duration::from_secs(5), run: c8_metrics },
        Criterion { id: 9, name: "adversarial training sanity", limit: Duration::from_secs(600), run: c9_adversarial },
        Criterion { id: 10, name: "I/O round trips", limit: Duration::from_secs(60), run: c10_io },
    ];
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    std::panic::set_hook(Box::new(|_| {}));

    let mut failed = 0;
    for c in criteria.iter().filter(|c| wanted.is_empty() || wanted.contains(&c.id)) {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let took = start.elapsed();
        let result = match result {
            Ok(d) if took > c.limit => Err(format!("over time budget: {d}")),
            r => r,
        };
        let (tag, detail) = match &result {
            Ok(d) => ("PASS", d.as_str()),
            Err(d) => ("FAIL", d.as_str()),
        };
        if result.is_err() {
            failed += 1;
        }
        println!(
            "[{tag}] {:>2} {:<28} {:>8.2}s / {:>4}s  {detail}",
            c.id,
            c.name,
            took.as_secs_f64(),
            c.limit.as_secs()
        );
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
