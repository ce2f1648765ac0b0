//! Parzen-window NMI between images and its gradient with respect to the
//! intensities of one of them.

use groupreg::similarity::{group_nmi, nmi, nmi_grad, ParzenConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> groupreg::Result<()> {
    let cfg = ParzenConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a: Vec<f64> = (0..10_000).map(|_| rng.random()).collect();
    let noise: Vec<f64> = (0..10_000).map(|_| rng.random()).collect();
    let gamma: Vec<f64> = a.iter().map(|x| x.powf(1.4)).collect();
    let mixed: Vec<f64> = a.iter().zip(&noise).map(|(x, n)| 0.5 * x + 0.5 * n).collect();

    println!("nmi(a, a)          = {:.4}", nmi(&a, &a, &cfg)?);
    println!("nmi(a, a^1.4)      = {:.4}", nmi(&a, &gamma, &cfg)?);
    println!("nmi(a, mix)        = {:.4}", nmi(&a, &mixed, &cfg)?);
    println!("nmi(a, noise)      = {:.4}", nmi(&a, &noise, &cfg)?);
    println!("group nmi (3 imgs) = {:.4}", group_nmi(&[&a, &gamma, &mixed], &cfg)?);

    // moving one intensity along the gradient raises the similarity
    let (before, g) = nmi_grad(&mixed, &a, &cfg)?;
    let step = 1e-3 / g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let moved: Vec<f64> = mixed.iter().zip(&g).map(|(x, d)| x + step * d).collect();
    println!("gradient ascent step: {before:.6} -> {:.6}", nmi(&moved, &a, &cfg)?);
    Ok(())
}
