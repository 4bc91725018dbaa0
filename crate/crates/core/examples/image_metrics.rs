//! PSNR, NRMSE and SSIM of a degraded image.

use csmri::metrics::{mean_std, MetricReport};
use csmri::phantom::{simulate_phantom, PhantomSpec};
use num_complex::Complex64;

fn main() -> csmri::error::Result<()> {
    let ph = simulate_phantom(&PhantomSpec::new(64, 64, 1, 2))?;
    let truth = ph.truth;

    let mut psnrs = Vec::new();
    for amount in [0.0, 0.01, 0.05, 0.1] {
        let test = truth.map(|z| z + Complex64::new(amount, -amount));
        let r = MetricReport::compute(&test, &truth)?;
        println!("offset {amount:<5} psnr {:>7.2} nrmse {:.4} ssim {:.4}", r.psnr, r.nrmse, r.ssim);
        if r.psnr.is_finite() {
            psnrs.push(r.psnr);
        }
    }
    let (m, s) = mean_std(&psnrs);
    println!("finite psnr mean {m:.2} std {s:.2}");
    Ok(())
}
