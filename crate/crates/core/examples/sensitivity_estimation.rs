//! Coil maps from the calibration region compared with the simulated ones.

use csmri::imaging::{estimate_sensitivities, DEFAULT_SENS_THRESHOLD};
use csmri::phantom::{simulate_phantom, PhantomSpec};

fn main() -> csmri::error::Result<()> {
    let ph = simulate_phantom(&PhantomSpec::new(64, 64, 8, 4))?;
    let est = estimate_sensitivities(&ph.kspace, Some((20, 20)), DEFAULT_SENS_THRESHOLD)?;

    let energy = est.energy();
    // maps agree up to a common phase, so compare |S_c| inside the support
    for (c, (a, b)) in est.maps().iter().zip(ph.sens.maps()).enumerate() {
        let (mut diff, mut refn) = (0.0, 0.0);
        for ((x, y), &e) in a.as_slice().iter().zip(b.as_slice()).zip(&energy) {
            if e > 0.0 {
                diff += (x.norm() - y.norm()).powi(2);
                refn += y.norm_sqr();
            }
        }
        println!("coil {c}: magnitude rel error {:.3}", (diff / refn).sqrt());
    }
    let covered = energy.iter().filter(|&&e| e > 0.0).count();
    println!("{covered} of {} pixels inside the support", energy.len());
    Ok(())
}
