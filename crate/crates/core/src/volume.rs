//! Scalar 3D volumes, intensity normalization and trilinear sampling.
//!
//! All grids are stored row-major with x varying fastest. Voxel centers sit at
//! integer coordinates starting from 0, and sampling outside the grid clamps
//! each coordinate to the nearest edge.

use crate::error::{Error, Result};

/// Grid extent `(nx, ny, nz)`.
pub type Dims = [usize; 3];

pub(crate) fn voxel_count(dims: Dims) -> usize {
    dims[0] * dims[1] * dims[2]
}

#[inline]
pub(crate) fn linear_index(dims: Dims, i: usize, j: usize, k: usize) -> usize {
    i + dims[0] * (j + dims[1] * k)
}

#[inline]
pub(crate) fn voxel_coords(dims: Dims, idx: usize) -> [usize; 3] {
    let i = idx % dims[0];
    let rest = idx / dims[0];
    [i, rest % dims[1], rest / dims[1]]
}

/// A continuous position in voxel units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint(pub [f64; 3]);

impl GridPoint {
    pub fn new(u: f64, v: f64, w: f64) -> Self {
        GridPoint([u, v, w])
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.is_finite())
    }
}

impl From<[f64; 3]> for GridPoint {
    fn from(p: [f64; 3]) -> Self {
        GridPoint(p)
    }
}

/// Scalar intensity grid with physical spacing in mm per voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: Dims,
    spacing: [f64; 3],
    data: Vec<f64>,
}

impl Volume {
    pub fn new(dims: Dims, spacing: [f64; 3], data: Vec<f64>) -> Result<Self> {
        if dims.iter().any(|&n| n == 0) {
            return Err(Error::InvalidInput(format!("empty dims {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidInput(format!(
                "spacing must be strictly positive, got {spacing:?}"
            )));
        }
        if data.len() != voxel_count(dims) {
            return Err(Error::InvalidInput(format!(
                "data length {} does not match dims {dims:?}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite intensity at index {pos}"
            )));
        }
        Ok(Volume { dims, spacing, data })
    }

    /// Unit-spacing volume filled with `value`.
    pub fn filled(dims: Dims, value: f64) -> Self {
        assert!(dims.iter().all(|&n| n > 0), "empty dims {dims:?}");
        Volume {
            dims,
            spacing: [1.0; 3],
            data: vec![value; voxel_count(dims)],
        }
    }

    /// Unit-spacing volume whose voxel `(i, j, k)` holds `f(i, j, k)`.
    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        assert!(dims.iter().all(|&n| n > 0), "empty dims {dims:?}");
        let mut data = Vec::with_capacity(voxel_count(dims));
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    data.push(f(i, j, k));
                }
            }
        }
        Volume {
            dims,
            spacing: [1.0; 3],
            data,
        }
    }

    pub fn with_spacing(mut self, spacing: [f64; 3]) -> Result<Self> {
        if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidInput(format!(
                "spacing must be strictly positive, got {spacing:?}"
            )));
        }
        self.spacing = spacing;
        Ok(self)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[linear_index(self.dims, i, j, k)]
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Same grid and spacing, new data. Panics on a length mismatch.
    pub(crate) fn with_data(&self, data: Vec<f64>) -> Volume {
        assert_eq!(data.len(), self.data.len());
        Volume {
            dims: self.dims,
            spacing: self.spacing,
            data,
        }
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}

/// Empirical percentile with linear interpolation between order statistics.
/// `sorted` must be ascending and nonempty.
pub(crate) fn percentile_sorted(sorted: &[f64], pct: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = pct / 100.0 * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let t = pos - lo as f64;
    sorted[lo] + t * (sorted[hi] - sorted[lo])
}

/// Clamps intensities to the `[lo_pct, hi_pct]` percentile range and maps that
/// range affinely onto `[0, 1]`. A degenerate range maps everything to 0.
pub fn percentile_normalize(vol: &Volume, lo_pct: f64, hi_pct: f64) -> Result<Volume> {
    if vol.is_empty() {
        return Err(Error::InvalidInput("cannot normalize an empty volume".into()));
    }
    if !(0.0 <= lo_pct && lo_pct < hi_pct && hi_pct <= 100.0) {
        return Err(Error::InvalidInput(format!(
            "percentiles must satisfy 0 <= lo < hi <= 100, got ({lo_pct}, {hi_pct})"
        )));
    }
    let mut sorted = vol.data.clone();
    sorted.sort_by(f64::total_cmp);
    let p_lo = percentile_sorted(&sorted, lo_pct);
    let p_hi = percentile_sorted(&sorted, hi_pct);
    let range = p_hi - p_lo;
    let data = if range > 0.0 {
        vol.data
            .iter()
            .map(|&v| (v.clamp(p_lo, p_hi) - p_lo) / range)
            .collect()
    } else {
        vec![0.0; vol.len()]
    };
    Ok(vol.with_data(data))
}

/// Interpolation stencil for one sample position: the eight corner indices,
/// their trilinear weights, and the derivative of each weight along u, v, w.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Stencil {
    pub idx: [usize; 8],
    pub w: [f64; 8],
    pub dw: [[f64; 8]; 3],
}

struct AxisCell {
    i0: usize,
    i1: usize,
    t: f64,
    // false when the coordinate was clamped, so the interpolant is flat along it.
    active: bool,
}

#[inline]
fn axis_cell(u: f64, n: usize) -> AxisCell {
    if n == 1 {
        return AxisCell {
            i0: 0,
            i1: 0,
            t: 0.0,
            active: false,
        };
    }
    let max = (n - 1) as f64;
    let active = (0.0..=max).contains(&u);
    let uc = u.clamp(0.0, max);
    // floor picks the cell on the positive side at lattice points.
    let i0 = (uc as usize).min(n - 2);
    AxisCell {
        i0,
        i1: i0 + 1,
        t: uc - i0 as f64,
        active,
    }
}

impl Stencil {
    #[inline]
    pub fn new(dims: Dims, p: [f64; 3]) -> Self {
        let ax = [
            axis_cell(p[0], dims[0]),
            axis_cell(p[1], dims[1]),
            axis_cell(p[2], dims[2]),
        ];
        // per axis: [low, high] corner index, weight and weight derivative
        let mut at = [[0usize; 2]; 3];
        let mut f = [[0.0; 2]; 3];
        let mut df = [[0.0; 2]; 3];
        for a in 0..3 {
            at[a] = [ax[a].i0, ax[a].i1];
            f[a] = [1.0 - ax[a].t, ax[a].t];
            if ax[a].active {
                df[a] = [-1.0, 1.0];
            }
        }
        let mut idx = [0usize; 8];
        let mut w = [0.0; 8];
        let mut dw = [[0.0; 8]; 3];
        for c in 0..8 {
            let (x, y, z) = (c & 1, (c >> 1) & 1, c >> 2);
            idx[c] = linear_index(dims, at[0][x], at[1][y], at[2][z]);
            w[c] = f[0][x] * f[1][y] * f[2][z];
            dw[0][c] = df[0][x] * f[1][y] * f[2][z];
            dw[1][c] = f[0][x] * df[1][y] * f[2][z];
            dw[2][c] = f[0][x] * f[1][y] * df[2][z];
        }
        Stencil { idx, w, dw }
    }

    /// Corner indices and weights only; `dw` is left at zero.
    #[inline]
    pub fn weights(dims: Dims, p: [f64; 3]) -> Self {
        let ax = [
            axis_cell(p[0], dims[0]),
            axis_cell(p[1], dims[1]),
            axis_cell(p[2], dims[2]),
        ];
        let f = ax.each_ref().map(|a| [1.0 - a.t, a.t]);
        let mut idx = [0usize; 8];
        let mut w = [0.0; 8];
        for c in 0..8 {
            let (x, y, z) = (c & 1, (c >> 1) & 1, c >> 2);
            let at = |a: &AxisCell, hi: usize| if hi == 1 { a.i1 } else { a.i0 };
            idx[c] = linear_index(dims, at(&ax[0], x), at(&ax[1], y), at(&ax[2], z));
            w[c] = f[0][x] * f[1][y] * f[2][z];
        }
        Stencil {
            idx,
            w,
            dw: [[0.0; 8]; 3],
        }
    }

    #[inline]
    pub fn value(&self, data: &[f64]) -> f64 {
        let mut s = 0.0;
        for c in 0..8 {
            s += self.w[c] * data[self.idx[c]];
        }
        s
    }

    #[inline]
    pub fn gradient(&self, data: &[f64]) -> [f64; 3] {
        let mut g = [0.0; 3];
        for c in 0..8 {
            let v = data[self.idx[c]];
            g[0] += self.dw[0][c] * v;
            g[1] += self.dw[1][c] * v;
            g[2] += self.dw[2][c] * v;
        }
        g
    }
}

/// Trilinear interpolation with clamp-to-edge boundary handling.
pub fn trilinear_sample(vol: &Volume, p: GridPoint) -> f64 {
    Stencil::weights(vol.dims, p.0).value(&vol.data)
}

/// Interpolated value together with its spatial derivative in voxel units.
///
/// At integer coordinates the derivative of the cell on the positive side is
/// returned; along a clamped axis the derivative is zero.
pub fn trilinear_sample_grad(vol: &Volume, p: GridPoint) -> (f64, [f64; 3]) {
    let st = Stencil::new(vol.dims, p.0);
    (st.value(&vol.data), st.gradient(&vol.data))
}
