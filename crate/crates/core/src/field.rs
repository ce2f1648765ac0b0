//! Vector-field algebra on the voxel lattice.
//!
//! A deformation is stored as a displacement `d` with `phi(x) = x + d(x)`, so
//! the identity map is the all-zero field. Velocities use the same container.
//! Every forward operation that sits on the optimization path has a matching
//! `*_adjoint` that returns the gradient of a scalar objective with respect to
//! its inputs, given the gradient with respect to its output.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::volume::{linear_index, voxel_coords, voxel_count, Dims, GridPoint, Stencil, Volume};

/// Default number of squaring steps for velocity integration.
pub const DEFAULT_SQUARING_STEPS: u32 = 7;

/// Three-component field on a voxel grid, component-interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    dims: Dims,
    data: Vec<f64>,
}

impl VectorField {
    pub fn zeros(dims: Dims) -> Self {
        assert!(dims.iter().all(|&n| n > 0), "empty dims {dims:?}");
        VectorField {
            dims,
            data: vec![0.0; 3 * voxel_count(dims)],
        }
    }

    pub fn new(dims: Dims, data: Vec<f64>) -> Result<Self> {
        if dims.iter().any(|&n| n == 0) {
            return Err(Error::InvalidInput(format!("empty dims {dims:?}")));
        }
        if data.len() != 3 * voxel_count(dims) {
            return Err(Error::InvalidInput(format!(
                "vector field data length {} does not match dims {dims:?}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite vector field entry".into()));
        }
        Ok(VectorField { dims, data })
    }

    pub fn constant(dims: Dims, value: [f64; 3]) -> Self {
        Self::from_fn(dims, |_, _, _| value)
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> [f64; 3]) -> Self {
        let mut field = Self::zeros(dims);
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    let idx = linear_index(dims, i, j, k);
                    field.data[3 * idx..3 * idx + 3].copy_from_slice(&f(i, j, k));
                }
            }
        }
        field
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn voxels(&self) -> usize {
        voxel_count(self.dims)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn at(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        self.vector(linear_index(self.dims, i, j, k))
    }

    #[inline]
    pub fn vector(&self, idx: usize) -> [f64; 3] {
        [self.data[3 * idx], self.data[3 * idx + 1], self.data[3 * idx + 2]]
    }

    pub fn scaled(&self, factor: f64) -> VectorField {
        VectorField {
            dims: self.dims,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    /// Largest absolute component.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Largest displacement magnitude over voxels at least `margin` voxels
    /// away from every face.
    pub fn max_norm_interior(&self, margin: usize) -> f64 {
        let d = self.dims;
        let mut m = 0.0f64;
        for k in margin..d[2].saturating_sub(margin) {
            for j in margin..d[1].saturating_sub(margin) {
                for i in margin..d[0].saturating_sub(margin) {
                    let v = self.at(i, j, k);
                    m = m.max((v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt());
                }
            }
        }
        m
    }

    /// Mean displacement magnitude over all voxels.
    pub fn mean_norm(&self) -> f64 {
        let n = self.voxels();
        let s: f64 = self
            .data
            .chunks_exact(3)
            .map(|v| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt())
            .sum();
        s / n as f64
    }

    /// Trilinearly interpolated vector with clamped boundary.
    pub fn sample(&self, p: GridPoint) -> [f64; 3] {
        sample_stencil(&Stencil::weights(self.dims, p.0), &self.data)
    }

    /// Copy with every entry rounded through `f32`, the precision used on disk.
    pub fn to_f32_precision(&self) -> VectorField {
        VectorField {
            dims: self.dims,
            data: self.data.iter().map(|&v| v as f32 as f64).collect(),
        }
    }

    pub(crate) fn add_assign(&mut self, other: &VectorField) {
        debug_assert_eq!(self.dims, other.dims);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

#[inline]
fn sample_stencil(st: &Stencil, data: &[f64]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for c in 0..8 {
        let base = 3 * st.idx[c];
        let w = st.w[c];
        out[0] += w * data[base];
        out[1] += w * data[base + 1];
        out[2] += w * data[base + 2];
    }
    out
}

/// Row `a` is the derivative of component `a` along u, v, w.
#[inline]
fn jacobian_stencil(st: &Stencil, data: &[f64]) -> [[f64; 3]; 3] {
    let mut jac = [[0.0; 3]; 3];
    for c in 0..8 {
        let base = 3 * st.idx[c];
        for comp in 0..3 {
            let v = data[base + comp];
            for axis in 0..3 {
                jac[comp][axis] += st.dw[axis][c] * v;
            }
        }
    }
    jac
}

#[inline]
fn scatter_stencil(st: &Stencil, g: [f64; 3], out: &mut [f64]) {
    for c in 0..8 {
        let base = 3 * st.idx[c];
        let w = st.w[c];
        out[base] += w * g[0];
        out[base + 1] += w * g[1];
        out[base + 2] += w * g[2];
    }
}

fn check_dims(expected: Dims, got: Dims) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

#[inline]
fn displaced(dims: Dims, idx: usize, d: &[f64]) -> [f64; 3] {
    let [i, j, k] = voxel_coords(dims, idx);
    [
        i as f64 + d[3 * idx],
        j as f64 + d[3 * idx + 1],
        k as f64 + d[3 * idx + 2],
    ]
}

/// Displacement of `phi_outer ∘ phi_inner`.
pub fn compose(outer: &VectorField, inner: &VectorField) -> Result<VectorField> {
    check_dims(outer.dims, inner.dims)?;
    let dims = outer.dims;
    let mut data = vec![0.0; inner.data.len()];
    data.par_chunks_mut(3).enumerate().for_each(|(idx, out)| {
        let p = displaced(dims, idx, &inner.data);
        let s = sample_stencil(&Stencil::weights(dims, p), &outer.data);
        for c in 0..3 {
            out[c] = inner.data[3 * idx + c] + s[c];
        }
    });
    Ok(VectorField { dims, data })
}

/// Reverse pass of [`compose`]: returns `(d/d outer, d/d inner)`.
pub fn compose_adjoint(
    outer: &VectorField,
    inner: &VectorField,
    upstream: &VectorField,
) -> Result<(VectorField, VectorField)> {
    check_dims(outer.dims, inner.dims)?;
    check_dims(outer.dims, upstream.dims)?;
    let dims = outer.dims;
    let mut g_outer = vec![0.0; outer.data.len()];
    let mut g_inner = upstream.data.clone();
    for idx in 0..voxel_count(dims) {
        let g = upstream.vector(idx);
        if g == [0.0; 3] {
            continue;
        }
        let p = displaced(dims, idx, &inner.data);
        let st = Stencil::new(dims, p);
        let jac = jacobian_stencil(&st, &outer.data);
        for axis in 0..3 {
            g_inner[3 * idx + axis] +=
                g[0] * jac[0][axis] + g[1] * jac[1][axis] + g[2] * jac[2][axis];
        }
        scatter_stencil(&st, g, &mut g_outer);
    }
    Ok((
        VectorField {
            dims,
            data: g_outer,
        },
        VectorField {
            dims,
            data: g_inner,
        },
    ))
}

/// Flow at unit time of a stationary velocity field by scaling and squaring:
/// `v / 2^steps` composed with itself `steps` times. `steps == 0` yields `v`.
pub fn integrate_velocity(v: &VectorField, steps: u32) -> VectorField {
    let mut d = v.scaled(0.5f64.powi(steps as i32));
    for _ in 0..steps {
        d = compose(&d, &d).expect("same dims");
    }
    d
}

/// Scaling-and-squaring intermediates kept for the reverse pass.
#[derive(Debug, Clone)]
pub(crate) struct Flow {
    pub phi: VectorField,
    stages: Vec<VectorField>,
    scale: f64,
}

pub(crate) fn integrate_velocity_tape(v: &VectorField, steps: u32) -> Flow {
    let scale = 0.5f64.powi(steps as i32);
    let mut stages = Vec::with_capacity(steps as usize);
    let mut d = v.scaled(scale);
    for _ in 0..steps {
        let next = compose(&d, &d).expect("same dims");
        stages.push(d);
        d = next;
    }
    Flow { phi: d, stages, scale }
}

impl Flow {
    pub fn adjoint(&self, upstream: &VectorField) -> Result<VectorField> {
        check_dims(self.phi.dims, upstream.dims)?;
        let mut g = upstream.clone();
        for stage in self.stages.iter().rev() {
            let (mut g_outer, g_inner) = compose_adjoint(stage, stage, &g)?;
            g_outer.add_assign(&g_inner);
            g = g_outer;
        }
        Ok(g.scaled(self.scale))
    }
}

/// Reverse pass of [`integrate_velocity`]; recomputes the forward intermediates.
pub fn integrate_velocity_adjoint(v: &VectorField, steps: u32, upstream: &VectorField) -> Result<VectorField> {
    check_dims(v.dims, upstream.dims)?;
    integrate_velocity_tape(v, steps).adjoint(upstream)
}

/// Resamples `vol` through `phi`: output voxel `x` holds `vol(x + phi(x))`.
pub fn warp_volume(vol: &Volume, phi: &VectorField) -> Result<Volume> {
    check_dims(vol.dims(), phi.dims)?;
    let dims = vol.dims();
    let src = vol.data();
    let mut out = vec![0.0; vol.len()];
    out.par_iter_mut().enumerate().for_each(|(idx, o)| {
        if phi.data[3 * idx..3 * idx + 3] == [0.0; 3] {
            *o = src[idx];
        } else {
            *o = Stencil::weights(dims, displaced(dims, idx, &phi.data)).value(src);
        }
    });
    Ok(vol.with_data(out))
}

/// Reverse pass of [`warp_volume`] with respect to the displacement.
pub fn warp_volume_adjoint(vol: &Volume, phi: &VectorField, upstream: &[f64]) -> Result<VectorField> {
    check_dims(vol.dims(), phi.dims)?;
    if upstream.len() != vol.len() {
        return Err(Error::InvalidInput(format!(
            "upstream gradient has {} entries, volume has {}",
            upstream.len(),
            vol.len()
        )));
    }
    let dims = vol.dims();
    let src = vol.data();
    let mut data = vec![0.0; phi.data.len()];
    data.par_chunks_mut(3).enumerate().for_each(|(idx, out)| {
        let g = upstream[idx];
        if g != 0.0 {
            let grad = Stencil::new(dims, displaced(dims, idx, &phi.data)).gradient(src);
            for a in 0..3 {
                out[a] = g * grad[a];
            }
        }
    });
    Ok(VectorField { dims, data })
}

/// Finite-difference derivative of displacement component `comp` along `axis`.
#[inline]
fn partial(phi: &VectorField, ijk: [usize; 3], comp: usize, axis: usize) -> f64 {
    let n = phi.dims[axis];
    let at = |pos: usize| {
        let mut q = ijk;
        q[axis] = pos;
        phi.data[3 * linear_index(phi.dims, q[0], q[1], q[2]) + comp]
    };
    let i = ijk[axis];
    if i == 0 {
        at(1) - at(0)
    } else if i == n - 1 {
        at(n - 1) - at(n - 2)
    } else {
        0.5 * (at(i + 1) - at(i - 1))
    }
}

#[inline]
fn det3(m: [[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Determinant of `I + grad d` per voxel, central differences inside and
/// one-sided differences on faces.
pub fn jacobian_determinant(phi: &VectorField) -> Result<Volume> {
    if phi.dims.iter().any(|&n| n < 2) {
        return Err(Error::InvalidInput(format!(
            "jacobian needs at least 2 voxels per axis, got {:?}",
            phi.dims
        )));
    }
    let dims = phi.dims;
    let mut out = vec![0.0; phi.voxels()];
    out.par_iter_mut().enumerate().for_each(|(idx, o)| {
        let ijk = voxel_coords(dims, idx);
        let mut m = [[0.0; 3]; 3];
        for (comp, row) in m.iter_mut().enumerate() {
            for (axis, e) in row.iter_mut().enumerate() {
                *e = partial(phi, ijk, comp, axis) + if comp == axis { 1.0 } else { 0.0 };
            }
        }
        *o = det3(m);
    });
    Volume::new(dims, [1.0; 3], out)
}

/// Share of voxels whose Jacobian determinant is negative.
pub fn fraction_negative_jacobian(phi: &VectorField) -> Result<f64> {
    let det = jacobian_determinant(phi)?;
    let negative = det.data().iter().filter(|&&d| d < 0.0).count();
    Ok(negative as f64 / det.len() as f64)
}

fn check_in_bounds(dims: Dims, p: GridPoint) -> Result<()> {
    let inside = p
        .0
        .iter()
        .zip(dims)
        .all(|(&c, n)| c.is_finite() && c >= 0.0 && c <= (n - 1) as f64);
    if !inside {
        return Err(Error::InvalidInput(format!(
            "point {:?} outside grid {dims:?}",
            p.0
        )));
    }
    Ok(())
}

/// Maps `p` through `phi` and converts to millimetres.
pub fn transform_point(phi: &VectorField, p: GridPoint, spacing: [f64; 3]) -> Result<[f64; 3]> {
    check_in_bounds(phi.dims, p)?;
    let d = phi.sample(p);
    Ok([
        (p.0[0] + d[0]) * spacing[0],
        (p.0[1] + d[1]) * spacing[1],
        (p.0[2] + d[2]) * spacing[2],
    ])
}

/// Finds `x` with `phi(x) = target` by fixed-point iteration `x <- target - d(x)`.
///
/// Converges when the displacement is a contraction, which holds for the
/// smooth, invertible fields produced by velocity integration.
pub fn invert_point(phi: &VectorField, target: GridPoint) -> Result<GridPoint> {
    check_in_bounds(phi.dims, target)?;
    let max: Vec<f64> = phi.dims.iter().map(|&n| (n - 1) as f64).collect();
    let mut x = target.0;
    for _ in 0..200 {
        let d = phi.sample(GridPoint(x));
        let mut next = [0.0; 3];
        for a in 0..3 {
            next[a] = (target.0[a] - d[a]).clamp(0.0, max[a]);
        }
        let step = (0..3).map(|a| (next[a] - x[a]).abs()).fold(0.0, f64::max);
        x = next;
        if step < 1e-12 {
            break;
        }
    }
    Ok(GridPoint(x))
}

/// Dims of the coarse grid that covers `fine` at an integer `factor`.
pub fn coarse_dims(fine: Dims, factor: usize) -> Dims {
    assert!(factor >= 1);
    [
        fine[0].div_ceil(factor),
        fine[1].div_ceil(factor),
        fine[2].div_ceil(factor),
    ]
}

/// Trilinear upsampling: fine voxel `x` reads the coarse field at `x / factor`.
/// Vector values are copied unchanged (they are already in fine voxel units).
pub fn upsample(coarse: &VectorField, factor: usize, fine: Dims) -> Result<VectorField> {
    check_dims(coarse_dims(fine, factor), coarse.dims)?;
    if factor == 1 {
        return Ok(coarse.clone());
    }
    let inv = 1.0 / factor as f64;
    let mut data = vec![0.0; 3 * voxel_count(fine)];
    data.par_chunks_mut(3).enumerate().for_each(|(idx, out)| {
        let [i, j, k] = voxel_coords(fine, idx);
        let p = [i as f64 * inv, j as f64 * inv, k as f64 * inv];
        out.copy_from_slice(&sample_stencil(&Stencil::weights(coarse.dims, p), &coarse.data));
    });
    Ok(VectorField { dims: fine, data })
}

/// Reverse pass of [`upsample`].
pub fn upsample_adjoint(upstream: &VectorField, factor: usize, coarse: Dims) -> Result<VectorField> {
    check_dims(coarse_dims(upstream.dims, factor), coarse)?;
    if factor == 1 {
        return Ok(upstream.clone());
    }
    let fine = upstream.dims;
    let inv = 1.0 / factor as f64;
    let mut out = vec![0.0; 3 * voxel_count(coarse)];
    for idx in 0..voxel_count(fine) {
        let [i, j, k] = voxel_coords(fine, idx);
        let p = [i as f64 * inv, j as f64 * inv, k as f64 * inv];
        scatter_stencil(&Stencil::weights(coarse, p), upstream.vector(idx), &mut out);
    }
    Ok(VectorField {
        dims: coarse,
        data: out,
    })
}
