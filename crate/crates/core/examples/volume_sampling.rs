//! Trilinear sampling, its spatial gradient, and percentile normalization.

use groupreg::volume::{percentile_normalize, trilinear_sample, trilinear_sample_grad};
use groupreg::{GridPoint, Volume};

fn main() -> groupreg::Result<()> {
    // a linear ramp is reproduced exactly by trilinear interpolation
    let ramp = Volume::from_fn([8, 8, 8], |i, j, k| 2.0 * i as f64 - j as f64 + 0.5 * k as f64);
    let p = GridPoint::new(3.25, 4.5, 1.75);
    let (value, grad) = trilinear_sample_grad(&ramp, p);
    println!("ramp at {:?}: {value} (expected {})", p.0, 2.0 * 3.25 - 4.5 + 0.5 * 1.75);
    println!("gradient {grad:?}");

    // outside the grid the value is clamped and the gradient vanishes along that axis
    let outside = GridPoint::new(-2.0, 4.5, 1.75);
    println!(
        "clamped sample {}  gradient {:?}",
        trilinear_sample(&ramp, outside),
        trilinear_sample_grad(&ramp, outside).1
    );

    let raw = Volume::from_fn([16, 16, 16], |i, j, k| ((i * j + k) as f64).sqrt() * 100.0);
    let norm = percentile_normalize(&raw, 1.0, 99.0)?;
    let (lo, hi) = norm.min_max();
    println!("raw range {:?} -> normalized range [{lo}, {hi}]", raw.min_max());
    Ok(())
}
