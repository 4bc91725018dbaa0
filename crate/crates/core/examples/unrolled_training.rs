//! Train a small unrolled network on simulated phantoms and compare with
//! zero-filled reconstructions on held-out ones.

use csmri::imaging::{zero_filled_recon, SamplingMask};
use csmri::metrics::psnr;
use csmri::net::{unrolled_forward, ModelMeta, ParamSet, UnrolledModelParams};
use csmri::phantom::{simulate_phantom, PhantomSpec};
use csmri::sampling::{poisson_disc_mask, MaskSpec};
use csmri::training::{train, TrainConfig, TrainingExample};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn examples(seeds: std::ops::Range<u64>, mask: &SamplingMask) -> csmri::error::Result<Vec<TrainingExample>> {
    seeds
        .map(|s| {
            let ph = simulate_phantom(&PhantomSpec::new(32, 32, 4, s).noise(0.005))?;
            TrainingExample::normalized(ph.truth, ph.sens, mask.clone())
        })
        .collect()
}

fn main() -> csmri::error::Result<()> {
    let mask = poisson_disc_mask(&MaskSpec::new(32, 32, 4.0, (8, 8)).seed(6))?;
    let train_set = examples(0..12, &mask)?;
    let test_set = examples(100..104, &mask)?;

    let init = UnrolledModelParams::init(ModelMeta::new(2, 8, 2), &mut ChaCha8Rng::seed_from_u64(6));
    println!("{} parameters", init.num_params());
    let cfg = TrainConfig { steps: 200, seed: 6, ..TrainConfig::default() };
    let out = train(&init, &train_set, &cfg)?;
    let h = &out.loss_history;
    println!("loss {:.4e} -> {:.4e}", h[0], h[h.len() - 1]);

    for (i, ex) in test_set.iter().enumerate() {
        let zf = zero_filled_recon(ex.model(), ex.y())?;
        let net = unrolled_forward(&out.model, ex.model(), ex.y())?;
        println!(
            "test {i}: zero-filled {:.2} dB, network {:.2} dB",
            psnr(&zf, ex.truth())?,
            psnr(&net, ex.truth())?
        );
    }
    println!("learned step sizes {:?}", out.model.step_sizes);
    Ok(())
}
