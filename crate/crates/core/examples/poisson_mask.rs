//! Variable-density Poisson-disc masks across accelerations.

use csmri::sampling::{generate_mask, MaskSpec};

fn main() -> csmri::error::Result<()> {
    for accel in [2.0, 4.0, 8.0, 12.0] {
        let g = generate_mask(&MaskSpec::new(128, 128, accel, (20, 20)).seed(3))?;
        println!(
            "R={accel:>4}: {} samples, achieved {:.2}, base radius {:.3}",
            g.mask.sampled(),
            g.nominal_acceleration,
            g.base_radius
        );
    }

    let g = generate_mask(&MaskSpec::new(320, 256, 9.4, (20, 20)).corner_cutting(true).seed(1))?;
    println!(
        "corner cut 320x256: nominal {:.2}, effective {:.2}",
        g.nominal_acceleration,
        g.effective_acceleration()
    );

    let small = generate_mask(&MaskSpec::new(32, 32, 4.0, (8, 8)).seed(2))?.mask;
    for r in 0..32 {
        let row: String = (0..32).map(|c| if small.get(r, c) { '#' } else { '.' }).collect();
        println!("{row}");
    }
    Ok(())
}
