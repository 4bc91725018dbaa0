//! L1 pre-training followed by alternating feature-space fine-tuning.

use csmri::metrics::psnr;
use csmri::net::{feature_extract, unrolled_forward, ModelMeta, UnrolledModelParams};
use csmri::phantom::{simulate_phantom, PhantomSpec};
use csmri::sampling::{poisson_disc_mask, MaskSpec};
use csmri::training::{adversarial_loss, initial_discriminator, train, LossKind, TrainConfig, TrainingExample};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> csmri::error::Result<()> {
    let mask = poisson_disc_mask(&MaskSpec::new(32, 32, 4.0, (8, 8)).seed(3))?;
    let data = (0..8)
        .map(|s| {
            let ph = simulate_phantom(&PhantomSpec::new(32, 32, 4, s))?;
            TrainingExample::normalized(ph.truth, ph.sens, mask.clone())
        })
        .collect::<csmri::error::Result<Vec<_>>>()?;

    let cfg = TrainConfig {
        loss_kind: LossKind::Adversarial,
        steps: 120,
        pretrain_steps: Some(60),
        disc_n_feat: 32,
        adv_lambda: 0.5,
        seed: 3,
        ..TrainConfig::default()
    };
    let d0 = initial_discriminator(&cfg);
    let f = feature_extract(data[0].truth(), &d0)?;
    println!("feature map {:?}, max |phi| {:.3}", f.shape(), f.max_abs());

    let init = UnrolledModelParams::init(ModelMeta::new(2, 8, 1), &mut ChaCha8Rng::seed_from_u64(3));
    let out = train(&init, &data, &cfg)?;
    let h = &out.loss_history;
    println!("pre-training loss {:.4e} -> {:.4e}", h[0], h[59]);
    println!("adversarial loss {:.4e} -> {:.4e}", h[60], h[h.len() - 1]);

    let d = out.discriminator.as_ref().expect("adversarial runs keep the extractor");
    let ex = &data[0];
    let recon = unrolled_forward(&out.model, ex.model(), ex.y())?;
    let (gen, disc) = adversarial_loss(&recon, ex.truth(), d, cfg.adv_lambda)?;
    println!("example 0: {:.2} dB, generator {gen:.4e}, discriminator {disc:.4e}", psnr(&recon, ex.truth())?);
    Ok(())
}
