//! Simulate, undersample, estimate coils, reconstruct three ways, score.

use csmri::cs::{cs_reconstruct, CsConfig};
use csmri::imaging::{estimate_sensitivities, normalize_kspace, zero_filled_recon, ImagingModel, DEFAULT_SENS_THRESHOLD};
use csmri::metrics::MetricReport;
use csmri::net::unrolled_forward;
use csmri::phantom::{simulate_phantom, PhantomSpec};
use csmri::sampling::{poisson_disc_mask, retrospective_undersample, MaskSpec};
use csmri::training::{train, TrainConfig, TrainingExample};
use csmri::net::{ModelMeta, UnrolledModelParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> csmri::error::Result<()> {
    let mask = poisson_disc_mask(&MaskSpec::new(64, 64, 4.0, (12, 12)).seed(11))?;

    let ph = simulate_phantom(&PhantomSpec::new(64, 64, 4, 50).noise(0.01))?;
    let (y, scale) = normalize_kspace(&retrospective_undersample(&ph.kspace, &mask)?)?;
    let truth = ph.truth.scale(1.0 / scale);
    let est = estimate_sensitivities(&y, Some((12, 12)), DEFAULT_SENS_THRESHOLD)?;
    println!("estimated {} coil maps from the calibration block", est.coils());

    // true maps keep the image phase in the reconstruction
    let model = ImagingModel::new(ph.sens.clone(), mask.clone())?;
    let zf = zero_filled_recon(&model, &y)?;
    let cs = cs_reconstruct(&model, &y, &CsConfig { lambda: 1e-3, use_fista: true, ..CsConfig::default() })?.image;

    let train_set = (0..10)
        .map(|s| {
            let p = simulate_phantom(&PhantomSpec::new(64, 64, 4, s).noise(0.01))?;
            TrainingExample::normalized(p.truth, p.sens, mask.clone())
        })
        .collect::<csmri::error::Result<Vec<_>>>()?;
    let init = UnrolledModelParams::init(ModelMeta::new(2, 8, 1), &mut ChaCha8Rng::seed_from_u64(11));
    let net = train(&init, &train_set, &TrainConfig { steps: 200, seed: 11, ..TrainConfig::default() })?.model;
    let nn = unrolled_forward(&net, &model, &y)?;

    println!("{:<12} {:>8} {:>8} {:>8}", "method", "psnr", "nrmse", "ssim");
    for (name, img) in [("zero-filled", &zf), ("cs", &cs), ("network", &nn)] {
        let r = MetricReport::compute(img, &truth)?;
        println!("{name:<12} {:>8.2} {:>8.4} {:>8.4}", r.psnr, r.nrmse, r.ssim);
    }
    Ok(())
}
