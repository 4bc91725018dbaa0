//! Forward model A = M F S and its adjoint, checked with a dot test.

use csmri::grid::{fft2c, ifft2c, inner_product, ComplexGrid};
use csmri::imaging::{ImagingModel, MultiCoilKspace};
use csmri::phantom::{simulate_phantom, PhantomSpec};
use csmri::sampling::{poisson_disc_mask, MaskSpec};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> csmri::error::Result<()> {
    let ph = simulate_phantom(&PhantomSpec::new(64, 64, 4, 1))?;
    let mask = poisson_disc_mask(&MaskSpec::new(64, 64, 4.0, (12, 12)).seed(1))?;
    let model = ImagingModel::new(ph.sens.clone(), mask)?;

    let back = ifft2c(&fft2c(&ph.truth));
    println!("ifft(fft(x)) error: {:.2e}", back.sub(&ph.truth)?.norm());
    println!("parseval: |x| = {:.6}, |Fx| = {:.6}", ph.truth.norm(), fft2c(&ph.truth).norm());

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut noise = |h, w| ComplexGrid::from_fn(h, w, |_, _| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
    let x = noise(64, 64);
    let planes = (0..4).map(|_| model.mask().apply(&noise(64, 64))).collect::<csmri::error::Result<_>>()?;
    let z = MultiCoilKspace::new(planes)?.with_mask(model.mask().clone())?;

    let ax = model.forward(&x)?;
    let lhs: Complex64 = ax.planes().iter().zip(z.planes()).map(|(a, b)| inner_product(a, b).unwrap()).sum();
    let rhs = inner_product(&x, &model.adjoint(&z)?)?;
    println!("<Ax, y> = {lhs:.6}");
    println!("<x, A^H y> = {rhs:.6}");
    println!("relative mismatch {:.2e}", (lhs - rhs).norm() / lhs.norm());
    Ok(())
}
