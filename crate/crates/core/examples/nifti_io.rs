//! Writing and reading volumes and displacement fields as NIfTI-1.

use groupreg::io::{read_field, read_volume, write_field, write_volume};
use groupreg::{VectorField, Volume};

fn main() -> groupreg::Result<()> {
    let dir = std::env::temp_dir().join("groupreg-nifti");
    std::fs::create_dir_all(&dir).map_err(|e| groupreg::Error::Config(e.to_string()))?;

    let vol = Volume::from_fn([10, 12, 14], |i, j, k| (i + 2 * j) as f64 / (1.0 + k as f64)).with_spacing([1.0, 1.0, 2.5])?;
    let path = dir.join("volume.nii");
    write_volume(&vol, &path)?;
    let back = read_volume(&path)?;
    println!("volume {:?} spacing {:?}, read back {:?} spacing {:?}", vol.dims(), vol.spacing(), back.dims(), back.spacing());
    let worst = vol.data().iter().zip(back.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("largest difference after float32 storage: {worst:.2e}");

    let field = VectorField::from_fn([10, 12, 14], |i, j, k| [i as f64 * 0.1, -(j as f64) * 0.05, k as f64 * 0.01]);
    let fpath = dir.join("field.nii");
    write_field(&field.to_f32_precision(), &fpath, [1.0; 3])?;
    let fback = read_field(&fpath)?;
    println!("field round trip exact: {}", fback == field.to_f32_precision());
    Ok(())
}
