//! Normalized mutual information from Gaussian Parzen-window histograms.
//!
//! Every sample spreads unit mass over `bins` bin centres in `[0, 1]` with a
//! Gaussian kernel; the per-sample weights are normalized before the outer
//! product, so the joint histogram sums to one. NMI uses the symmetric
//! uncertainty form `2 I(a;b) / (H(a) + H(b))`, which lies in `[0, 1]`.

use ndarray::{Array2, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::volume::Volume;

/// Default kernel width in bin units.
///
/// Wider kernels blur the joint histogram along its diagonal, which caps the
/// self-similarity of an image well below 1 (about 0.5 at one bin); at a tenth
/// of a bin `nmi(a, a)` stays above 0.95 for spread-out intensities.
pub const DEFAULT_KERNEL_SIGMA: f64 = 0.1;

/// Parzen estimator settings. Intensities are clamped to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParzenConfig {
    pub bins: usize,
    /// Kernel standard deviation in bin units.
    pub kernel_sigma: f64,
    /// Probability floor inside the logarithm.
    pub epsilon: f64,
}

impl Default for ParzenConfig {
    fn default() -> Self {
        ParzenConfig {
            bins: 32,
            kernel_sigma: DEFAULT_KERNEL_SIGMA,
            epsilon: 1e-10,
        }
    }
}

impl ParzenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bins < 2 {
            return Err(Error::InvalidInput(format!("need at least 2 bins, got {}", self.bins)));
        }
        if !(self.kernel_sigma > 0.0) || !(self.epsilon > 0.0) {
            return Err(Error::InvalidInput(
                "kernel sigma and epsilon must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn bin_center(&self, b: usize) -> f64 {
        (b as f64 + 0.5) / self.bins as f64
    }

    /// Kernel standard deviation in intensity units.
    fn sigma(&self) -> f64 {
        self.kernel_sigma / self.bins as f64
    }
}

/// Normalized kernel weights of one sample over the bin centres, and their
/// derivative with respect to the sample intensity.
pub fn kernel_weights(x: f64, cfg: &ParzenConfig, w: &mut [f64], dw: &mut [f64]) {
    window_weights(x, cfg, 0, w, dw);
}

// Weights over the `w.len()` consecutive bins starting at `start`.
fn window_weights(x: f64, cfg: &ParzenConfig, start: usize, w: &mut [f64], dw: &mut [f64]) {
    let s2 = cfg.sigma() * cfg.sigma();
    let inside = (0.0..=1.0).contains(&x);
    let x = x.clamp(0.0, 1.0);
    let mut max_e = f64::NEG_INFINITY;
    for (b, wb) in w.iter_mut().enumerate() {
        let d = x - cfg.bin_center(start + b);
        *wb = -d * d / (2.0 * s2);
        max_e = max_e.max(*wb);
    }
    let mut total = 0.0;
    for wb in w.iter_mut() {
        *wb = (*wb - max_e).exp();
        total += *wb;
    }
    let mut mean_g = 0.0;
    for (b, wb) in w.iter_mut().enumerate() {
        *wb /= total;
        mean_g += *wb * (cfg.bin_center(start + b) - x) / s2;
    }
    for (b, (db, &wb)) in dw.iter_mut().zip(w.iter()).enumerate() {
        *db = if inside {
            wb * ((cfg.bin_center(start + b) - x) / s2 - mean_g)
        } else {
            0.0
        };
    }
}

/// Kernel weights of every sample, kept only on a window of bins around the
/// sample. Bins more than eight kernel widths plus one bin away carry less
/// than `exp(-32)` of the mass and are dropped.
#[derive(Debug, Clone)]
pub struct ParzenWeights {
    bins: usize,
    width: usize,
    start: Vec<usize>,
    w: Vec<f64>,
    dw: Vec<f64>,
}

impl ParzenWeights {
    pub fn new(x: &[f64], cfg: &ParzenConfig) -> Self {
        let bins = cfg.bins;
        let radius = (8.0 * cfg.kernel_sigma).ceil() as usize + 1;
        let width = (2 * radius + 1).min(bins);
        let n = x.len();
        let mut start = vec![0; n];
        let mut w = vec![0.0; n * width];
        let mut dw = vec![0.0; n * width];
        w.par_chunks_mut(width)
            .zip(dw.par_chunks_mut(width))
            .zip(start.par_iter_mut())
            .zip(x.par_iter())
            .for_each(|(((wr, dr), st), &xi)| {
                let nearest = ((xi.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1);
                *st = nearest.saturating_sub(radius).min(bins - width);
                window_weights(xi, cfg, *st, wr, dr);
            });
        ParzenWeights {
            bins,
            width,
            start,
            w,
            dw,
        }
    }

    pub fn len(&self) -> usize {
        self.start.len()
    }

    pub fn is_empty(&self) -> bool {
        self.start.is_empty()
    }

    /// First bin and weights of sample `n`.
    pub fn row(&self, n: usize) -> (usize, &[f64]) {
        (self.start[n], &self.w[n * self.width..(n + 1) * self.width])
    }

    fn d_row(&self, n: usize) -> &[f64] {
        &self.dw[n * self.width..(n + 1) * self.width]
    }

    /// Weights of sample `n` spread over all bins.
    pub fn dense_row(&self, n: usize) -> Vec<f64> {
        let (s, w) = self.row(n);
        let mut out = vec![0.0; self.bins];
        out[s..s + w.len()].copy_from_slice(w);
        out
    }
}

/// Joint probability table, row index = bin of `a`, column = bin of `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointHistogram {
    pub p: Array2<f64>,
}

impl JointHistogram {
    pub fn bins(&self) -> usize {
        self.p.nrows()
    }

    pub fn marginal_a(&self) -> Vec<f64> {
        self.p.sum_axis(Axis(1)).to_vec()
    }

    pub fn marginal_b(&self) -> Vec<f64> {
        self.p.sum_axis(Axis(0)).to_vec()
    }

    pub fn total(&self) -> f64 {
        self.p.sum()
    }
}

fn check_pair(a: &[f64], b: &[f64], cfg: &ParzenConfig) -> Result<()> {
    cfg.validate()?;
    if a.len() != b.len() {
        return Err(Error::InvalidInput(format!(
            "sample count mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::InvalidInput("no samples".into()));
    }
    Ok(())
}

fn joint_from_weights(wa: &ParzenWeights, wb: &ParzenWeights) -> JointHistogram {
    let bins = wa.bins;
    let mut p = vec![0.0; bins * bins];
    for n in 0..wa.len() {
        let (sa, ra) = wa.row(n);
        let (sb, rb) = wb.row(n);
        for (u, &x) in ra.iter().enumerate() {
            let line = &mut p[(sa + u) * bins + sb..(sa + u) * bins + sb + rb.len()];
            for (q, &y) in line.iter_mut().zip(rb) {
                *q += x * y;
            }
        }
    }
    let n = wa.len() as f64;
    JointHistogram {
        p: Array2::from_shape_vec((bins, bins), p).expect("square table") / n,
    }
}

/// Soft joint histogram of two equally long intensity vectors.
pub fn parzen_joint(a: &[f64], b: &[f64], cfg: &ParzenConfig) -> Result<JointHistogram> {
    check_pair(a, b, cfg)?;
    Ok(joint_from_weights(
        &ParzenWeights::new(a, cfg),
        &ParzenWeights::new(b, cfg),
    ))
}

/// Shannon entropy in nats with a probability floor inside the logarithm.
pub fn entropy(p: &[f64], epsilon: f64) -> f64 {
    -p.iter().map(|&x| x * (x + epsilon).ln()).sum::<f64>()
}

#[inline]
fn entropy_slope(p: f64, eps: f64) -> f64 {
    -(p + eps).ln() - p / (p + eps)
}

struct NmiParts {
    value: f64,
    // dNMI/dP, None on the degenerate branch
    grad: Option<Array2<f64>>,
}

fn nmi_from_joint(joint: &JointHistogram, eps: f64, with_grad: bool) -> NmiParts {
    let pa = joint.marginal_a();
    let pb = joint.marginal_b();
    let ha = entropy(&pa, eps);
    let hb = entropy(&pb, eps);
    let hab = entropy(joint.p.as_slice().unwrap(), eps);
    let s = ha + hb;
    if s < 1e-12 {
        return NmiParts {
            value: 0.0,
            grad: None,
        };
    }
    let value = 2.0 * (s - hab) / s;
    if !with_grad {
        return NmiParts { value, grad: None };
    }
    let c_joint = -2.0 / s;
    let c_marg = 2.0 * hab / (s * s);
    let sa: Vec<f64> = pa.iter().map(|&x| c_marg * entropy_slope(x, eps)).collect();
    let sb: Vec<f64> = pb.iter().map(|&x| c_marg * entropy_slope(x, eps)).collect();
    let bins = joint.bins();
    let grad = Array2::from_shape_fn((bins, bins), |(i, j)| {
        c_joint * entropy_slope(joint.p[[i, j]], eps) + sa[i] + sb[j]
    });
    NmiParts {
        value,
        grad: Some(grad),
    }
}

/// Normalized mutual information of two intensity vectors.
pub fn nmi(a: &[f64], b: &[f64], cfg: &ParzenConfig) -> Result<f64> {
    let joint = parzen_joint(a, b, cfg)?;
    Ok(nmi_from_joint(&joint, cfg.epsilon, false).value)
}

struct PairGrad {
    value: f64,
    g_a: Option<Vec<f64>>,
    g_b: Option<Vec<f64>>,
}

// d(value)/d(intensity) of one side: the weight gradient `G w_other / N`
// restricted to the window, chained through the kernel derivative.
fn chain_side(mine: &ParzenWeights, other: &ParzenWeights, g: &Array2<f64>, transpose: bool) -> Vec<f64> {
    let inv_n = 1.0 / mine.len() as f64;
    (0..mine.len())
        .into_par_iter()
        .map(|n| {
            let (s, _) = mine.row(n);
            let d = mine.d_row(n);
            let (so, wo) = other.row(n);
            let mut acc = 0.0;
            for (u, &du) in d.iter().enumerate() {
                if du == 0.0 {
                    continue;
                }
                let mut gw = 0.0;
                for (v, &w) in wo.iter().enumerate() {
                    let gij = if transpose { g[[so + v, s + u]] } else { g[[s + u, so + v]] };
                    gw += gij * w;
                }
                acc += du * gw;
            }
            acc * inv_n
        })
        .collect()
}

/// Value and intensity gradients of one pair.
fn pair_nmi(wa: &ParzenWeights, wb: &ParzenWeights, eps: f64, need_a: bool, need_b: bool) -> PairGrad {
    let joint = joint_from_weights(wa, wb);
    let parts = nmi_from_joint(&joint, eps, need_a || need_b);
    match parts.grad {
        None => PairGrad {
            value: parts.value,
            g_a: need_a.then(|| vec![0.0; wa.len()]),
            g_b: need_b.then(|| vec![0.0; wb.len()]),
        },
        Some(g) => PairGrad {
            value: parts.value,
            g_a: need_a.then(|| chain_side(wa, wb, &g, false)),
            g_b: need_b.then(|| chain_side(wb, wa, &g, true)),
        },
    }
}

/// NMI and its gradient with respect to every entry of `a`.
pub fn nmi_grad(a: &[f64], b: &[f64], cfg: &ParzenConfig) -> Result<(f64, Vec<f64>)> {
    check_pair(a, b, cfg)?;
    let wa = ParzenWeights::new(a, cfg);
    let wb = ParzenWeights::new(b, cfg);
    let pg = pair_nmi(&wa, &wb, cfg.epsilon, true, false);
    Ok((pg.value, pg.g_a.expect("requested")))
}

/// Group similarity: mean NMI over all ordered pairs `i != j`.
#[derive(Debug, Clone)]
pub struct GroupNmi {
    pub value: f64,
    /// NMI of every unordered pair `(i, j)` with `i < j`.
    pub pairs: Vec<(usize, usize, f64)>,
    /// Gradient of `value` with respect to each image, where requested.
    pub grads: Vec<Option<Vec<f64>>>,
}

fn check_group(images: &[&[f64]], cfg: &ParzenConfig) -> Result<()> {
    cfg.validate()?;
    if images.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "group similarity needs at least 2 images, got {}",
            images.len()
        )));
    }
    let n = images[0].len();
    if n == 0 || images.iter().any(|im| im.len() != n) {
        return Err(Error::InvalidInput("images must be nonempty and equally sized".into()));
    }
    Ok(())
}

/// Mean pairwise NMI, with gradients for the images flagged in `need_grad`.
/// Each unordered pair is evaluated once since NMI is symmetric.
pub fn group_nmi_grad(images: &[&[f64]], cfg: &ParzenConfig, need_grad: &[bool]) -> Result<GroupNmi> {
    check_group(images, cfg)?;
    let k = images.len();
    assert_eq!(need_grad.len(), k);
    let weights: Vec<ParzenWeights> = images.iter().map(|im| ParzenWeights::new(im, cfg)).collect();
    let n_pairs = k * (k - 1) / 2;
    let mut grads: Vec<Option<Vec<f64>>> = need_grad
        .iter()
        .map(|&need| need.then(|| vec![0.0; images[0].len()]))
        .collect();
    let mut pairs = Vec::with_capacity(n_pairs);
    let mut total = 0.0;
    let scale = 1.0 / n_pairs as f64;
    for i in 0..k {
        for j in i + 1..k {
            let pg = pair_nmi(&weights[i], &weights[j], cfg.epsilon, need_grad[i], need_grad[j]);
            total += pg.value;
            pairs.push((i, j, pg.value));
            for (slot, g) in [(i, pg.g_a), (j, pg.g_b)] {
                if let (Some(acc), Some(g)) = (grads[slot].as_mut(), g) {
                    acc.iter_mut().zip(g).for_each(|(a, x)| *a += x * scale);
                }
            }
        }
    }
    Ok(GroupNmi {
        value: total * scale,
        pairs,
        grads,
    })
}

/// Mean NMI over all ordered pairs of distinct images.
pub fn group_nmi(images: &[&[f64]], cfg: &ParzenConfig) -> Result<f64> {
    Ok(group_nmi_grad(images, cfg, &vec![false; images.len()])?.value)
}

/// Convenience wrapper of [`group_nmi`] over volumes.
pub fn group_nmi_volumes(volumes: &[Volume], cfg: &ParzenConfig) -> Result<f64> {
    let views: Vec<&[f64]> = volumes.iter().map(|v| v.data()).collect();
    group_nmi(&views, cfg)
}

/// Root mean squared intensity difference.
pub fn rmse(a: &Volume, b: &Volume) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::DimensionMismatch {
            expected: a.dims(),
            got: b.dims(),
        });
    }
    let ss: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((ss / a.len() as f64).sqrt())
}
