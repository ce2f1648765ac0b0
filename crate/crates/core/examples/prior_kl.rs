//! The Laplacian prior: KL divergence of a diagonal Gaussian posterior and
//! its gradients.

use groupreg::prior::{kl_regularizer, kl_regularizer_grad, quadratic_form, PriorSpec};
use groupreg::VectorField;

fn main() -> groupreg::Result<()> {
    let dims = [8, 8, 8];
    let prior = PriorSpec::default();
    let variance = VectorField::constant(dims, [0.05; 3]);

    // constant fields only pay the small magnitude term, ramps pay for differences
    let constant = VectorField::constant(dims, [1.0, 0.0, 0.0]);
    let ramp = VectorField::from_fn(dims, |i, _, _| [0.5 * i as f64, 0.0, 0.0]);
    for (name, mu) in [("zero", VectorField::zeros(dims)), ("constant", constant), ("ramp", ramp)] {
        println!(
            "{name:>8}: mu' L mu = {:>8.3}  KL = {:.3}",
            quadratic_form(&mu, &prior),
            kl_regularizer(&mu, &variance, &prior)?
        );
    }

    let (g_mu, g_var) = kl_regularizer_grad(&VectorField::zeros(dims), &variance, &prior)?;
    let (lo, hi) = g_var.data().iter().fold((f64::MAX, f64::MIN), |(l, h), &x| (l.min(x), h.max(x)));
    // interior voxels have six neighbours and feel the largest precision
    println!("at mu = 0: |g_mu| = {}, d KL / d var in [{lo:.3}, {hi:.3}]", g_mu.max_abs());
    Ok(())
}
