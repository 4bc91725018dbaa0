//! Round trips through the container and weights formats.

use csmri::io::{read_kspace, read_mask, read_weights, write_kspace, write_mask, write_pgm, write_weights, WeightsFile};
use csmri::net::{ModelMeta, ParamSet, UnrolledModelParams};
use csmri::phantom::{simulate_phantom, PhantomSpec};
use csmri::sampling::{poisson_disc_mask, MaskSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("csmri_file_formats");
    std::fs::create_dir_all(&dir)?;

    let ph = simulate_phantom(&PhantomSpec::new(32, 32, 2, 9))?;
    write_kspace(&dir.join("full.cks"), &ph.kspace, Some("subject_009"), None)?;
    let back = read_kspace(&dir.join("full.cks"))?;
    println!("kspace: subject {:?}, max error {:.1e}", back.subject, back.kspace.sub(&ph.kspace)?.norm());

    let mask = poisson_disc_mask(&MaskSpec::new(32, 32, 3.0, (8, 8)).seed(1))?;
    write_mask(&dir.join("mask.cks"), &mask)?;
    println!("mask equal after round trip: {}", read_mask(&dir.join("mask.cks"))? == mask);

    let params = UnrolledModelParams::init(ModelMeta::new(2, 8, 1), &mut ChaCha8Rng::seed_from_u64(0));
    write_weights(&dir.join("w.bin"), &WeightsFile { model: params.clone(), discriminator: None })?;
    let w = read_weights(&dir.join("w.bin"))?;
    println!("weights: {} params, identical {}", w.model.num_params(), w.model.flatten() == params.flatten());

    write_pgm(&dir.join("truth.pgm"), &ph.truth)?;
    let header = std::fs::read(dir.join("full.cks"))?;
    let end = header.windows(2).position(|w| w == b"\n\n").unwrap_or(0);
    println!("{}", String::from_utf8_lossy(&header[..end]));
    println!("files in {}", dir.display());
    Ok(())
}
