//! Zero-filled versus wavelet-regularized ISTA and FISTA.

use csmri::cs::{cs_reconstruct, CsConfig};
use csmri::imaging::{normalize_kspace, zero_filled_recon, ImagingModel};
use csmri::metrics::psnr;
use csmri::phantom::{simulate_phantom, PhantomSpec};
use csmri::sampling::{poisson_disc_mask, retrospective_undersample, MaskSpec};

fn main() -> csmri::error::Result<()> {
    let ph = simulate_phantom(&PhantomSpec::new(64, 64, 4, 5).noise(0.02))?;
    let mask = poisson_disc_mask(&MaskSpec::new(64, 64, 4.0, (12, 12)).seed(5))?;
    let (y, scale) = normalize_kspace(&retrospective_undersample(&ph.kspace, &mask)?)?;
    let truth = ph.truth.scale(1.0 / scale);
    let model = ImagingModel::new(ph.sens, mask)?;

    let zf = zero_filled_recon(&model, &y)?;
    println!("zero-filled   {:6.2} dB", psnr(&zf, &truth)?);

    for fista in [false, true] {
        let cfg = CsConfig { lambda: 1e-3, max_iters: 300, tol: 1e-6, use_fista: fista, ..CsConfig::default() };
        let out = cs_reconstruct(&model, &y, &cfg)?;
        println!(
            "{:<13} {:6.2} dB after {} iterations, objective {:.4e} -> {:.4e}",
            if fista { "fista" } else { "ista" },
            psnr(&out.image, &truth)?,
            out.iters_used,
            out.objective[0],
            out.objective.last().unwrap()
        );
    }
    Ok(())
}
