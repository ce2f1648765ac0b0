//! Synthetic ground truth: smooth random velocities, misaligned groups with
//! known deformations and landmarks, and the landmark-distance metric.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::field::{
    fraction_negative_jacobian, integrate_velocity, invert_point, transform_point, warp_volume, VectorField,
    DEFAULT_SQUARING_STEPS,
};
use crate::volume::{linear_index, trilinear_sample, Dims, GridPoint, Volume};

/// Separable Gaussian blur of one scalar channel, clamped at the borders.
fn blur_axis(data: &mut [f64], dims: Dims, axis: usize, kernel: &[f64]) {
    let r = (kernel.len() / 2) as isize;
    let n = dims[axis] as isize;
    let mut line = vec![0.0; dims[axis]];
    let mut out = vec![0.0; dims[axis]];
    let (a1, a2) = match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    for q in 0..dims[a2] {
        for p in 0..dims[a1] {
            let idx = |t: usize| {
                let mut ijk = [0usize; 3];
                ijk[axis] = t;
                ijk[a1] = p;
                ijk[a2] = q;
                linear_index(dims, ijk[0], ijk[1], ijk[2])
            };
            for (t, l) in line.iter_mut().enumerate() {
                *l = data[idx(t)];
            }
            for (t, o) in out.iter_mut().enumerate() {
                let mut s = 0.0;
                for (o_k, w) in kernel.iter().enumerate() {
                    let src = (t as isize + o_k as isize - r).clamp(0, n - 1) as usize;
                    s += w * line[src];
                }
                *o = s;
            }
            for (t, &o) in out.iter().enumerate() {
                data[idx(t)] = o;
            }
        }
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let raw: Vec<f64> = (-r..=r).map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let z: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / z).collect()
}

/// White noise smoothed by a Gaussian of std `sigma_smooth` voxels, rescaled
/// so that the largest component magnitude equals `amplitude`.
pub fn gen_smooth_velocity(dims: Dims, sigma_smooth: f64, amplitude: f64, seed: u64) -> Result<VectorField> {
    if !(sigma_smooth >= 1.0) {
        return Err(Error::InvalidInput(format!("smoothness must be >= 1 voxel, got {sigma_smooth}")));
    }
    if amplitude == 0.0 {
        return Ok(VectorField::zeros(dims));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = dims[0] * dims[1] * dims[2];
    let kernel = gaussian_kernel(sigma_smooth);
    let mut channels: Vec<Vec<f64>> = (0..3)
        .map(|_| (0..n).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    for ch in &mut channels {
        for axis in 0..3 {
            blur_axis(ch, dims, axis, &kernel);
        }
    }
    let max = channels.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = if max > 0.0 { amplitude / max } else { 0.0 };
    let mut data = vec![0.0; 3 * n];
    for (c, ch) in channels.iter().enumerate() {
        for (i, v) in ch.iter().enumerate() {
            data[3 * i + c] = v * scale;
        }
    }
    VectorField::new(dims, data)
}

/// Source of the undeformed base image.
#[derive(Debug, Clone, PartialEq)]
pub enum BaseVolume {
    /// Random Gaussian blobs on a dark background.
    Blobs { count: usize },
    /// Smoothed 3-D checkerboard with the given period in voxels.
    Checkerboard { period: usize },
    Provided(Volume),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub dims: Dims,
    pub spacing: [f64; 3],
    pub base: BaseVolume,
    pub timepoints: usize,
    /// Gaussian smoothing of the ground-truth velocities, in voxels.
    pub smoothness: f64,
    /// Largest ground-truth velocity component, in voxels.
    pub amplitude: f64,
    /// Per-timepoint gamma is drawn uniformly from this range.
    pub gamma_range: (f64, f64),
    pub landmarks: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            dims: [32, 32, 32],
            spacing: [1.0; 3],
            base: BaseVolume::Blobs { count: 20 },
            timepoints: 3,
            smoothness: 3.0,
            amplitude: 2.0,
            gamma_range: (0.7, 1.4),
            landmarks: 20,
            seed: 0,
        }
    }
}

/// Corresponding points, one list per timepoint, in voxel coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet {
    pub points: Vec<Vec<GridPoint>>,
    pub spacing: [f64; 3],
}

impl LandmarkSet {
    pub fn validate(&self, dims: Dims) -> Result<()> {
        let m = self.points.first().map_or(0, Vec::len);
        if self.points.iter().any(|p| p.len() != m) {
            return Err(Error::Landmarks(format!(
                "landmark counts differ across timepoints: {:?}",
                self.points.iter().map(Vec::len).collect::<Vec<_>>()
            )));
        }
        for (t, pts) in self.points.iter().enumerate() {
            for p in pts {
                let inside = p.0.iter().zip(dims).all(|(&c, n)| c >= 0.0 && c <= (n - 1) as f64);
                if !inside {
                    return Err(Error::Landmarks(format!("timepoint {t}: point {:?} outside {dims:?}", p.0)));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticGroup {
    pub base: Volume,
    /// Timepoint volumes; timepoint 0 is the base itself.
    pub volumes: Vec<Volume>,
    /// Ground-truth velocities (zero for timepoint 0).
    pub velocities: Vec<VectorField>,
    /// Ground-truth deformations: timepoint `k` is `base` resampled through these.
    pub deformations: Vec<VectorField>,
    pub gammas: Vec<f64>,
    pub landmarks: LandmarkSet,
}

const BLOB_EDGE: f64 = 0.5;

fn make_base(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Result<Volume> {
    let dims = spec.dims;
    let vol = match &spec.base {
        BaseVolume::Provided(v) => {
            if v.dims() != dims {
                return Err(Error::DimensionMismatch {
                    expected: dims,
                    got: v.dims(),
                });
            }
            return Ok(v.clone().with_spacing(spec.spacing)?);
        }
        BaseVolume::Blobs { count } => {
            let blobs: Vec<([f64; 3], f64)> = (0..*count)
                .map(|_| {
                    let c = std::array::from_fn(|a| rng.random_range(0.15..0.85) * (dims[a] - 1) as f64);
                    let radius = rng.random_range(0.06..0.14) * dims[0].min(dims[1]).min(dims[2]) as f64;
                    (c, radius.max(1.0))
                })
                .collect();
            Volume::from_fn(dims, |i, j, k| {
                let p = [i as f64, j as f64, k as f64];
                blobs
                    .iter()
                    .map(|(c, r)| {
                        let d = (0..3).map(|x| (p[x] - c[x]).powi(2)).sum::<f64>().sqrt();
                        1.0 / (1.0 + ((d - r) / BLOB_EDGE).exp())
                    })
                    .fold(0.0, f64::max)
            })
        }
        BaseVolume::Checkerboard { period } => {
            let period = (*period).max(1);
            let mut raw = Volume::from_fn(dims, |i, j, k| ((i / period + j / period + k / period) % 2) as f64)
                .into_data();
            let kernel = gaussian_kernel(1.0);
            for axis in 0..3 {
                blur_axis(&mut raw, dims, axis, &kernel);
            }
            Volume::new(dims, [1.0; 3], raw)?
        }
    };
    let (_, hi) = vol.min_max();
    let data = vol.data().iter().map(|v| if hi > 0.0 { v / hi } else { 0.0 }).collect();
    Volume::new(dims, spec.spacing, data)
}

const LANDMARK_MARGIN: f64 = 2.0;
const LANDMARK_ATTEMPTS: usize = 10_000;

/// Draws landmarks on bright structure of the base (at least half its
/// maximum), away from the border, such that every inverse flow keeps them
/// inside the grid. Falls back to any interior point once structure runs out.
fn place_landmarks(
    base: &Volume,
    inverses: &[VectorField],
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<GridPoint>> {
    let dims = base.dims();
    let (_, hi) = base.min_max();
    let inside = |p: [f64; 3]| (0..3).all(|a| p[a] >= 0.0 && p[a] <= (dims[a] - 1) as f64);
    let draw = |rng: &mut ChaCha8Rng| -> [f64; 3] {
        std::array::from_fn(|a| {
            let top = (dims[a] - 1) as f64 - LANDMARK_MARGIN;
            if top > LANDMARK_MARGIN {
                rng.random_range(LANDMARK_MARGIN..top)
            } else {
                0.5 * (dims[a] - 1) as f64
            }
        })
    };
    let mut points = Vec::with_capacity(count);
    let mut attempts = 0;
    while points.len() < count {
        attempts += 1;
        if attempts > 2 * LANDMARK_ATTEMPTS {
            return Err(Error::Generation(format!(
                "could only place {} of {count} landmarks inside the grid",
                points.len()
            )));
        }
        let p = draw(rng);
        if attempts <= LANDMARK_ATTEMPTS && trilinear_sample(base, GridPoint(p)) < 0.5 * hi {
            continue;
        }
        let stays = inverses
            .iter()
            .all(|inv| transform_point(inv, GridPoint(p), [1.0; 3]).is_ok_and(inside));
        if stays {
            points.push(GridPoint(p));
        }
    }
    Ok(points)
}

/// Builds a misaligned group with known deformations and landmarks.
///
/// Timepoint `k > 0` is the base resampled through the flow of a random smooth
/// velocity, then passed through a monotone gamma curve. Landmarks start at
/// random interior positions of the base and are carried into each timepoint
/// by the inverse flow, so that landmark `m` marks the same structure in every
/// volume.
pub fn synth_group(spec: &SyntheticSpec) -> Result<SyntheticGroup> {
    if spec.timepoints < 2 {
        return Err(Error::InvalidInput("need at least 2 timepoints".into()));
    }
    let (g_lo, g_hi) = spec.gamma_range;
    if !(0.0 < g_lo && g_lo <= g_hi) {
        return Err(Error::InvalidInput(format!("bad gamma range {:?}", spec.gamma_range)));
    }
    let dims = spec.dims;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let base = make_base(spec, &mut rng)?;

    let mut volumes = vec![base.clone()];
    let mut velocities = vec![VectorField::zeros(dims)];
    let mut deformations = vec![VectorField::zeros(dims)];
    let mut inverses = Vec::new();
    let mut gammas = vec![1.0];
    for k in 1..spec.timepoints {
        let field_seed: u64 = rng.random();
        let gamma = if g_hi > g_lo { rng.random_range(g_lo..=g_hi) } else { g_lo };
        let v = gen_smooth_velocity(dims, spec.smoothness, spec.amplitude, field_seed)?;
        let phi = integrate_velocity(&v, DEFAULT_SQUARING_STEPS);
        let folded = fraction_negative_jacobian(&phi)?;
        if folded > 0.0 {
            return Err(Error::Generation(format!(
                "timepoint {k}: {:.4}% negative Jacobians (amplitude {} too large for smoothness {})",
                100.0 * folded,
                spec.amplitude,
                spec.smoothness
            )));
        }
        inverses.push(integrate_velocity(&v.scaled(-1.0), DEFAULT_SQUARING_STEPS));
        let warped = warp_volume(&base, &phi)?;
        let data = warped.data().iter().map(|x| x.max(0.0).powf(gamma)).collect();
        volumes.push(Volume::new(dims, spec.spacing, data)?);
        velocities.push(v);
        deformations.push(phi);
        gammas.push(gamma);
    }

    let base_points = place_landmarks(&base, &inverses, spec.landmarks, &mut rng)?;
    let mut points = vec![base_points.clone()];
    for inverse in &inverses {
        let moved = base_points
            .iter()
            .map(|&q| transform_point(inverse, q, [1.0; 3]).map(GridPoint))
            .collect::<Result<Vec<_>>>()?;
        points.push(moved);
    }
    let landmarks = LandmarkSet {
        points,
        spacing: spec.spacing,
    };
    landmarks
        .validate(dims)
        .map_err(|e| Error::Generation(format!("landmark left the grid: {e}")))?;
    Ok(SyntheticGroup {
        base,
        volumes,
        velocities,
        deformations,
        gammas,
        landmarks,
    })
}

/// Landmark positions of each timepoint mapped into the common (registered)
/// frame, in mm. Timepoint `k` shows common-frame point `x` at `phi_k(x)`, so
/// each landmark is pulled back through the inverse of its deformation.
pub fn common_frame_landmarks(deformations: &[VectorField], landmarks: &LandmarkSet) -> Result<Vec<Vec<[f64; 3]>>> {
    if deformations.len() != landmarks.points.len() {
        return Err(Error::Landmarks(format!(
            "{} deformations but {} landmark sets",
            deformations.len(),
            landmarks.points.len()
        )));
    }
    let dims = deformations[0].dims();
    landmarks.validate(dims)?;
    let s = landmarks.spacing;
    deformations
        .iter()
        .zip(&landmarks.points)
        .map(|(phi, pts)| {
            pts.iter()
                .map(|&p| {
                    let x = invert_point(phi, p)?;
                    Ok([x.0[0] * s[0], x.0[1] * s[1], x.0[2] * s[2]])
                })
                .collect()
        })
        .collect()
}

/// Mean and standard deviation (mm) of corresponding-landmark distances over
/// all ordered timepoint pairs, measured in the common frame.
pub fn landmark_error(deformations: &[VectorField], landmarks: &LandmarkSet) -> Result<(f64, f64)> {
    let mapped = common_frame_landmarks(deformations, landmarks)?;
    let mut dists = Vec::new();
    for i in 0..mapped.len() {
        for j in 0..mapped.len() {
            if i == j {
                continue;
            }
            for (a, b) in mapped[i].iter().zip(&mapped[j]) {
                dists.push(((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt());
            }
        }
    }
    if dists.is_empty() {
        return Ok((0.0, 0.0));
    }
    let n = dists.len() as f64;
    let mean = dists.iter().sum::<f64>() / n;
    let var = dists.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

/// Writes one landmark per line as three space-separated voxel coordinates.
pub fn write_landmarks(path: &Path, points: &[GridPoint]) -> Result<()> {
    let mut text = String::new();
    for p in points {
        writeln!(text, "{} {} {}", p.0[0], p.0[1], p.0[2]).expect("write to string");
    }
    crate::io::write_atomic(path, text.as_bytes())
}

pub fn read_landmarks(path: &Path) -> Result<Vec<GridPoint>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, line)| {
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Landmarks(format!("{}:{}: {e}", path.display(), n + 1)))?;
            match vals.as_slice() {
                [x, y, z] => Ok(GridPoint::new(*x, *y, *z)),
                _ => Err(Error::Landmarks(format!(
                    "{}:{}: expected 3 coordinates, got {}",
                    path.display(),
                    n + 1,
                    vals.len()
                ))),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_amplitude_velocity_is_zero() {
        let v = gen_smooth_velocity([8, 8, 8], 2.0, 0.0, 1).unwrap();
        assert_eq!(v.max_abs(), 0.0);
    }

    #[test]
    fn velocity_is_deterministic_and_scaled() {
        let a = gen_smooth_velocity([10, 9, 8], 2.0, 1.5, 7).unwrap();
        let b = gen_smooth_velocity([10, 9, 8], 2.0, 1.5, 7).unwrap();
        assert_eq!(a, b);
        assert!((a.max_abs() - 1.5).abs() < 1e-12);
        assert!(gen_smooth_velocity([4, 4, 4], 0.5, 1.0, 0).is_err());
    }

    #[test]
    fn smooth_velocity_integrates_without_folding() {
        let v = gen_smooth_velocity([32, 32, 32], 3.0, 3.0, 11).unwrap();
        let phi = integrate_velocity(&v, 7);
        assert_eq!(fraction_negative_jacobian(&phi).unwrap(), 0.0);
    }

    fn small_spec(seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            dims: [16, 16, 16],
            timepoints: 3,
            smoothness: 3.0,
            amplitude: 1.5,
            landmarks: 8,
            seed,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn zero_amplitude_group_differs_only_by_gamma() {
        let g = synth_group(&SyntheticSpec {
            amplitude: 0.0,
            ..small_spec(1)
        })
        .unwrap();
        for (vol, gamma) in g.volumes.iter().zip(&g.gammas) {
            for (a, b) in vol.data().iter().zip(g.base.data()) {
                assert!((a - b.powf(*gamma)).abs() < 1e-12);
            }
        }
        let (mean, std) = landmark_error(&g.deformations, &g.landmarks).unwrap();
        assert_eq!((mean, std), (0.0, 0.0));
    }

    #[test]
    fn translation_moves_landmarks_by_the_translation() {
        // hand-built K = 2 group: a constant velocity is a pure translation
        let dims = [16, 16, 16];
        let v = VectorField::constant(dims, [1.0, -0.5, 0.0]);
        let inverse = integrate_velocity(&v.scaled(-1.0), 7);
        let q = GridPoint::new(7.0, 8.0, 6.5);
        let moved = transform_point(&inverse, q, [1.0; 3]).unwrap();
        assert!((moved[0] - 6.0).abs() < 1e-12 && (moved[1] - 8.5).abs() < 1e-12 && moved[2] == 6.5);
    }

    #[test]
    fn synthetic_group_is_deterministic() {
        let a = synth_group(&small_spec(5)).unwrap();
        let b = synth_group(&small_spec(5)).unwrap();
        assert_eq!(a.volumes, b.volumes);
        assert_eq!(a.landmarks, b.landmarks);
        assert_eq!(a.deformations, b.deformations);
    }

    #[test]
    fn unregistered_error_matches_pairwise_distances() {
        let g = synth_group(&small_spec(6)).unwrap();
        let ident = vec![VectorField::zeros([16, 16, 16]); 3];
        let (mean, _) = landmark_error(&ident, &g.landmarks).unwrap();
        let pts = &g.landmarks.points;
        let mut total = 0.0;
        let mut n = 0;
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    for m in 0..8 {
                        let d: f64 = (0..3).map(|a| (pts[i][m].0[a] - pts[j][m].0[a]).powi(2)).sum();
                        total += d.sqrt();
                        n += 1;
                    }
                }
            }
        }
        assert!((mean - total / n as f64).abs() < 1e-12);
    }

    #[test]
    fn landmark_offset_of_one_voxel() {
        let pts: Vec<GridPoint> = (0..5).map(|i| GridPoint::new(2.0 + i as f64, 3.0, 4.0)).collect();
        let shifted: Vec<GridPoint> = pts.iter().map(|p| GridPoint::new(p.0[0] + 1.0, p.0[1], p.0[2])).collect();
        let set = LandmarkSet {
            points: vec![pts.clone(), shifted],
            spacing: [1.0; 3],
        };
        let ident = vec![VectorField::zeros([10, 10, 10]); 2];
        let (mean, std) = landmark_error(&ident, &set).unwrap();
        assert!((mean - 1.0).abs() < 1e-12 && std < 1e-12);

        let same = LandmarkSet {
            points: vec![pts.clone(), pts.clone()],
            spacing: [1.0; 3],
        };
        assert_eq!(landmark_error(&ident, &same).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn ground_truth_inverse_recovers_landmarks() {
        let g = synth_group(&small_spec(8)).unwrap();
        // registering every timepoint back onto the base: phi_k = inverse flow
        let inverses: Vec<VectorField> =
            g.velocities.iter().map(|v| integrate_velocity(&v.scaled(-1.0), 7)).collect();
        let (mean, _) = landmark_error(&inverses, &g.landmarks).unwrap();
        assert!(mean < 0.2, "{mean}");
    }

    #[test]
    fn inconsistent_landmarks_are_rejected() {
        let set = LandmarkSet {
            points: vec![vec![GridPoint::new(1.0, 1.0, 1.0)], vec![]],
            spacing: [1.0; 3],
        };
        let ident = vec![VectorField::zeros([4, 4, 4]); 2];
        assert!(matches!(landmark_error(&ident, &set), Err(Error::Landmarks(_))));
    }

    #[test]
    fn landmark_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lm.txt");
        let pts = vec![GridPoint::new(1.25, 2.0, 3.125), GridPoint::new(0.1, 7.3, 4.0)];
        write_landmarks(&path, &pts).unwrap();
        assert_eq!(read_landmarks(&path).unwrap(), pts);
        std::fs::write(&path, "1 2\n").unwrap();
        assert!(read_landmarks(&path).is_err());
    }
}
