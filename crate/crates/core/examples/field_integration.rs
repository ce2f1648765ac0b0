//! Scaling and squaring of a smooth velocity field, inverse consistency, and
//! folding checks through the Jacobian determinant.

use groupreg::field::{
    compose, fraction_negative_jacobian, integrate_velocity, jacobian_determinant, transform_point,
    DEFAULT_SQUARING_STEPS,
};
use groupreg::harness::gen_smooth_velocity;
use groupreg::GridPoint;

fn main() -> groupreg::Result<()> {
    let dims = [32, 32, 32];
    for amplitude in [2.0, 5.0, 30.0] {
        let v = gen_smooth_velocity(dims, 3.0, amplitude, 7)?;
        let phi = integrate_velocity(&v, DEFAULT_SQUARING_STEPS);
        let inverse = integrate_velocity(&v.scaled(-1.0), DEFAULT_SQUARING_STEPS);
        let roundtrip = compose(&phi, &inverse)?;
        let jac = jacobian_determinant(&phi)?;
        let (jmin, jmax) = jac.min_max();
        println!(
            "amplitude {amplitude:>4}: max |d| {:.2}  inverse error {:.4}  det J in [{jmin:.3}, {jmax:.3}]  folded {:.3}%",
            phi.max_abs(),
            roundtrip.max_norm_interior(4),
            100.0 * fraction_negative_jacobian(&phi)?
        );
    }

    let v = gen_smooth_velocity(dims, 3.0, 3.0, 7)?;
    let phi = integrate_velocity(&v, DEFAULT_SQUARING_STEPS);
    let p = GridPoint::new(15.5, 10.0, 20.25);
    println!("point {:?} maps to {:?} (mm, unit spacing)", p.0, transform_point(&phi, p, [1.0; 3])?);
    Ok(())
}
