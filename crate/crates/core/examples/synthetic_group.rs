//! Synthetic misaligned groups with known deformations, and the landmark
//! error of the unregistered versus the ideally registered group.

use groupreg::field::{integrate_velocity, DEFAULT_SQUARING_STEPS};
use groupreg::harness::{landmark_error, synth_group, SyntheticSpec};
use groupreg::VectorField;

fn main() -> groupreg::Result<()> {
    let spec = SyntheticSpec {
        seed: 3,
        ..SyntheticSpec::default()
    };
    let group = synth_group(&spec)?;
    println!("{} timepoints of {:?}, gammas {:?}", group.volumes.len(), spec.dims, group.gammas);

    let identity = vec![VectorField::zeros(spec.dims); group.volumes.len()];
    let ideal: Vec<VectorField> = group
        .velocities
        .iter()
        .map(|v| integrate_velocity(&v.scaled(-1.0), DEFAULT_SQUARING_STEPS))
        .collect();
    let (m0, s0) = landmark_error(&identity, &group.landmarks)?;
    let (m1, s1) = landmark_error(&ideal, &group.landmarks)?;
    println!("landmark error unregistered {m0:.3} +- {s0:.3} mm");
    println!("landmark error ground truth {m1:.3} +- {s1:.3} mm");
    Ok(())
}
