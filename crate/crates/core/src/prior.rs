//! Gaussian prior with precision `lambda_v * I + lambda_u * (D - A)` over a
//! 6-connected voxel lattice, and the closed-form KL term it induces for a
//! diagonal Gaussian posterior.
//!
//! The three vector components are independent: each one carries its own copy
//! of the lattice Laplacian. Constants of the exact KL divergence (the latent
//! dimension and `log |precision|`) are dropped.

use crate::error::{Error, Result};
use crate::field::VectorField;
use crate::volume::{linear_index, voxel_coords, Dims};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorSpec {
    /// Weight of the graph Laplacian (neighbour differences).
    pub lambda_u: f64,
    /// Weight of the identity (vector magnitudes).
    pub lambda_v: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec {
            lambda_u: 1.0,
            lambda_v: 0.01,
        }
    }
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_u >= 0.0 && self.lambda_v >= 0.0) || self.lambda_u + self.lambda_v <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "prior weights must be nonnegative with a positive sum, got lambda_u={} lambda_v={}",
                self.lambda_u, self.lambda_v
            )));
        }
        Ok(())
    }

    /// Diagonal entry of the precision for a voxel of the given degree.
    pub fn precision_diagonal(&self, degree: usize) -> f64 {
        self.lambda_u * degree as f64 + self.lambda_v
    }
}

/// Number of in-bounds 6-neighbours of voxel `idx`.
pub fn degree(dims: Dims, idx: usize) -> usize {
    let ijk = voxel_coords(dims, idx);
    (0..3)
        .map(|a| usize::from(ijk[a] > 0) + usize::from(ijk[a] + 1 < dims[a]))
        .sum()
}

/// Calls `f(i, j)` once for every lattice edge.
fn for_each_edge(dims: Dims, mut f: impl FnMut(usize, usize)) {
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let here = linear_index(dims, i, j, k);
                if i + 1 < dims[0] {
                    f(here, linear_index(dims, i + 1, j, k));
                }
                if j + 1 < dims[1] {
                    f(here, linear_index(dims, i, j + 1, k));
                }
                if k + 1 < dims[2] {
                    f(here, linear_index(dims, i, j, k + 1));
                }
            }
        }
    }
}

/// `mu^T (lambda_v I + lambda_u L) mu`, summed over the three components.
///
/// Written as the neighbour-difference expansion: each edge contributes
/// `lambda_u * (mu[i] - mu[j])^2` once.
pub fn quadratic_form(mu: &VectorField, spec: &PriorSpec) -> f64 {
    let m = mu.data();
    let mut edges = 0.0;
    for_each_edge(mu.dims(), |a, b| {
        for c in 0..3 {
            let d = m[3 * a + c] - m[3 * b + c];
            edges += d * d;
        }
    });
    let norm: f64 = m.iter().map(|x| x * x).sum();
    spec.lambda_u * edges + spec.lambda_v * norm
}

fn check_variance(mu: &VectorField, sigma2: &VectorField) -> Result<()> {
    if mu.dims() != sigma2.dims() {
        return Err(Error::DimensionMismatch {
            expected: mu.dims(),
            got: sigma2.dims(),
        });
    }
    if let Some((index, &value)) = sigma2.data().iter().enumerate().find(|(_, &s)| !(s > 0.0)) {
        return Err(Error::NonPositiveVariance { index, value });
    }
    Ok(())
}

/// KL divergence from `N(mu, diag(sigma2))` to the prior, up to constants:
/// `0.5 * [sum (lambda_u deg + lambda_v) sigma2 - sum log sigma2 + mu^T Lambda mu]`.
pub fn kl_regularizer(mu: &VectorField, sigma2: &VectorField, spec: &PriorSpec) -> Result<f64> {
    check_variance(mu, sigma2)?;
    let dims = mu.dims();
    let s = sigma2.data();
    let mut trace = 0.0;
    let mut log_det = 0.0;
    for idx in 0..mu.voxels() {
        let diag = spec.precision_diagonal(degree(dims, idx));
        for c in 0..3 {
            let v = s[3 * idx + c];
            trace += diag * v;
            log_det += v.ln();
        }
    }
    Ok(0.5 * (trace - log_det + quadratic_form(mu, spec)))
}

/// Gradients of [`kl_regularizer`] with respect to `mu` and `sigma2`.
pub fn kl_regularizer_grad(
    mu: &VectorField,
    sigma2: &VectorField,
    spec: &PriorSpec,
) -> Result<(VectorField, VectorField)> {
    check_variance(mu, sigma2)?;
    let dims = mu.dims();
    let m = mu.data();
    let mut g_mu: Vec<f64> = m.iter().map(|x| spec.lambda_v * x).collect();
    for_each_edge(dims, |a, b| {
        for c in 0..3 {
            let d = spec.lambda_u * (m[3 * a + c] - m[3 * b + c]);
            g_mu[3 * a + c] += d;
            g_mu[3 * b + c] -= d;
        }
    });
    let s = sigma2.data();
    let mut g_s = vec![0.0; s.len()];
    for idx in 0..mu.voxels() {
        let diag = spec.precision_diagonal(degree(dims, idx));
        for c in 0..3 {
            g_s[3 * idx + c] = 0.5 * (diag - 1.0 / s[3 * idx + c]);
        }
    }
    Ok((VectorField::new(dims, g_mu)?, VectorField::new(dims, g_s)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(dims: Dims, lo: f64, hi: f64, seed: u64) -> VectorField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        VectorField::from_fn(dims, |_, _, _| std::array::from_fn(|_| rng.random_range(lo..hi)))
    }

    #[test]
    fn degrees_on_small_grids() {
        let dims = [2, 2, 2];
        assert!((0..8).all(|i| degree(dims, i) == 3));
        let dims = [4, 4, 4];
        assert_eq!(degree(dims, linear_index(dims, 1, 2, 1)), 6);
        assert_eq!(degree(dims, linear_index(dims, 0, 2, 1)), 5);
    }

    #[test]
    fn quadratic_form_trivial_cases() {
        let spec = PriorSpec::default();
        assert_eq!(quadratic_form(&VectorField::zeros([3, 3, 3]), &spec), 0.0);
        let c = VectorField::constant([3, 4, 2], [2.0, 0.0, 0.0]);
        assert!((quadratic_form(&c, &spec) - spec.lambda_v * 24.0 * 4.0).abs() < 1e-12);
    }

    #[test]
    fn kl_trivial_cases() {
        let dims = [3, 3, 3];
        let mu = VectorField::zeros(dims);
        let ones = VectorField::constant(dims, [1.0; 3]);
        let spec = PriorSpec {
            lambda_u: 0.0,
            lambda_v: 1.0,
        };
        assert!((kl_regularizer(&mu, &ones, &spec).unwrap() - 81.0 / 2.0).abs() < 1e-12);

        let dims = [2, 2, 2];
        let spec = PriorSpec {
            lambda_u: 1.0,
            lambda_v: 0.0,
        };
        let v = kl_regularizer(&VectorField::zeros(dims), &VectorField::constant(dims, [1.0; 3]), &spec).unwrap();
        assert!((v - 36.0).abs() < 1e-12);
    }

    #[test]
    fn kl_rejects_nonpositive_variance() {
        let dims = [2, 2, 2];
        let mut s = VectorField::constant(dims, [1.0; 3]);
        s.data_mut()[5] = 0.0;
        let err = kl_regularizer(&VectorField::zeros(dims), &s, &PriorSpec::default()).unwrap_err();
        assert!(matches!(err, Error::NonPositiveVariance { index: 5, .. }));
        assert!(kl_regularizer_grad(&VectorField::zeros(dims), &s, &PriorSpec::default()).is_err());
    }

    #[test]
    fn variance_gradient_vanishes_at_optimum() {
        let dims = [3, 4, 2];
        let spec = PriorSpec::default();
        let mut s = VectorField::zeros(dims);
        for idx in 0..s.voxels() {
            let v = 1.0 / spec.precision_diagonal(degree(dims, idx));
            s.data_mut()[3 * idx..3 * idx + 3].copy_from_slice(&[v; 3]);
        }
        let (_, g) = kl_regularizer_grad(&random_field(dims, -1.0, 1.0, 1), &s, &spec).unwrap();
        assert!(g.max_abs() < 1e-12);
    }

    #[test]
    fn constant_mean_gradient_is_magnitude_term() {
        let spec = PriorSpec::default();
        let mu = VectorField::constant([3, 3, 3], [0.5, -1.0, 2.0]);
        let (g, _) = kl_regularizer_grad(&mu, &VectorField::constant([3, 3, 3], [1.0; 3]), &spec).unwrap();
        for (a, b) in g.data().iter().zip(mu.data()) {
            assert!((a - spec.lambda_v * b).abs() < 1e-14);
        }
    }

    #[test]
    fn kl_gradient_matches_finite_differences() {
        let dims = [3, 3, 2];
        let spec = PriorSpec {
            lambda_u: 0.7,
            lambda_v: 0.2,
        };
        let mu = random_field(dims, -2.0, 2.0, 2);
        let s2 = random_field(dims, 0.2, 2.0, 3);
        let (gm, gs) = kl_regularizer_grad(&mu, &s2, &spec).unwrap();
        let h = 1e-6;
        for i in 0..mu.data().len() {
            for (field, grad, is_mu) in [(&mu, &gm, true), (&s2, &gs, false)] {
                let mut p = field.clone();
                let mut m = field.clone();
                p.data_mut()[i] += h;
                m.data_mut()[i] -= h;
                let (fp, fm) = if is_mu {
                    (kl_regularizer(&p, &s2, &spec).unwrap(), kl_regularizer(&m, &s2, &spec).unwrap())
                } else {
                    (kl_regularizer(&mu, &p, &spec).unwrap(), kl_regularizer(&mu, &m, &spec).unwrap())
                };
                let fd = (fp - fm) / (2.0 * h);
                let g = grad.data()[i];
                assert!((fd - g).abs() / g.abs().max(1e-3) < 1e-6, "i {i}: fd {fd} g {g}");
            }
        }
    }

    #[test]
    fn laplacian_null_space_without_magnitude_term() {
        let spec = PriorSpec {
            lambda_u: 1.0,
            lambda_v: 0.0,
        };
        let mu = random_field([4, 3, 3], -1.0, 1.0, 4);
        let shifted = VectorField::new(mu.dims(), mu.data().iter().map(|x| x + 3.5).collect()).unwrap();
        assert!((quadratic_form(&mu, &spec) - quadratic_form(&shifted, &spec)).abs() < 1e-9);
    }

    #[test]
    fn variance_optimum_is_a_minimum() {
        let dims = [3, 3, 3];
        let spec = PriorSpec::default();
        let mu = VectorField::zeros(dims);
        let mut s = VectorField::zeros(dims);
        for idx in 0..s.voxels() {
            let v = 1.0 / spec.precision_diagonal(degree(dims, idx));
            s.data_mut()[3 * idx..3 * idx + 3].copy_from_slice(&[v; 3]);
        }
        let base = kl_regularizer(&mu, &s, &spec).unwrap();
        for i in [0usize, 13, 40, 80] {
            for f in [0.9, 1.1] {
                let mut p = s.clone();
                p.data_mut()[i] *= f;
                assert!(kl_regularizer(&mu, &p, &spec).unwrap() > base);
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn quadratic_form_nonnegative(seed in 0u64..10_000, lu in 0.0f64..2.0, lv in 0.001f64..1.0) {
                let spec = PriorSpec { lambda_u: lu, lambda_v: lv };
                let mu = random_field([3, 2, 4], -3.0, 3.0, seed);
                let q = quadratic_form(&mu, &spec);
                prop_assert!(q > 0.0);
            }
        }
    }
}
