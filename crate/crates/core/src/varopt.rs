//! Variational optimization of per-timepoint velocity distributions.
//!
//! Each moving timepoint owns a diagonal Gaussian over its latent field,
//! parameterized by unconstrained grids `mu_raw` and `rho`:
//! `mu = 15 * tanh(mu_raw)` voxels and `sigma = softplus(rho)`. The loss for a
//! single Monte Carlo draw `z = mu + sigma * e` is the negative mean pairwise
//! NMI of the warped group plus the KL term of every moving timepoint. The
//! latent field is a stationary velocity (integrated by scaling and squaring)
//! in diffeomorphic mode, or the displacement itself otherwise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{
    coarse_dims, fraction_negative_jacobian, integrate_velocity, integrate_velocity_tape, upsample,
    upsample_adjoint, warp_volume, warp_volume_adjoint, Flow, VectorField, DEFAULT_SQUARING_STEPS,
};
use crate::prior::{kl_regularizer, kl_regularizer_grad, PriorSpec};
use crate::similarity::{group_nmi_grad, rmse, ParzenConfig};
use crate::volume::{linear_index, Dims, Volume};

/// Bound on mean displacement / velocity magnitudes, in voxels.
pub const TANH_SCALE: f64 = 15.0;

pub fn softplus(x: f64) -> f64 {
    // log(1 + e^x) without overflow
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Variational parameters of one moving timepoint.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalField {
    pub mu_raw: VectorField,
    pub rho: VectorField,
}

impl VariationalField {
    pub fn new(dims: Dims, rho: f64) -> Self {
        VariationalField {
            mu_raw: VectorField::zeros(dims),
            rho: VectorField::constant(dims, [rho; 3]),
        }
    }

    pub fn dims(&self) -> Dims {
        self.mu_raw.dims()
    }

    fn map(field: &VectorField, f: impl Fn(f64) -> f64) -> VectorField {
        VectorField::new(field.dims(), field.data().iter().map(|&x| f(x)).collect()).expect("finite")
    }

    pub fn mean(&self) -> VectorField {
        Self::map(&self.mu_raw, |x| TANH_SCALE * x.tanh())
    }

    pub fn std_dev(&self) -> VectorField {
        Self::map(&self.rho, softplus)
    }

    pub fn variance(&self) -> VectorField {
        Self::map(&self.rho, |x| softplus(x).powi(2))
    }
}

/// Draws `z = mu + sigma * noise` elementwise.
pub fn reparameterize(vf: &VariationalField, noise: &VectorField) -> Result<VectorField> {
    if noise.dims() != vf.dims() {
        return Err(Error::DimensionMismatch {
            expected: vf.dims(),
            got: noise.dims(),
        });
    }
    let data = vf
        .mu_raw
        .data()
        .iter()
        .zip(vf.rho.data())
        .zip(noise.data())
        .map(|((&m, &r), &e)| TANH_SCALE * m.tanh() + softplus(r) * e)
        .collect();
    VectorField::new(vf.dims(), data)
}

/// Standard normal field from `rng`, filled in storage order.
pub fn standard_normal_field(dims: Dims, rng: &mut impl Rng) -> VectorField {
    let mut f = VectorField::zeros(dims);
    for x in f.data_mut() {
        *x = rng.sample(StandardNormal);
    }
    f
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mode {
    /// Timepoint `fixed` stays put; every other one deforms toward it.
    AllToOne { fixed: usize },
    /// Every timepoint deforms toward an implicit common average.
    AllMoving,
}

/// How each timepoint's KL term enters the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KlReduction {
    /// Plain sum over latent scalars.
    Sum,
    /// Sum divided by the number of latent scalars of the timepoint.
    #[default]
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            iterations: 500,
            learning_rate: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimizerConfig {
    /// Cosine-annealed step size at iteration `t` of `iterations`.
    pub fn learning_rate_at(&self, t: usize) -> f64 {
        let progress = t as f64 / self.iterations.max(1) as f64;
        self.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

/// Adam with bias correction over one flat parameter buffer.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(len: usize, cfg: &OptimizerConfig) -> Self {
        Adam {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for ((p, &g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

/// A group registration job.
#[derive(Debug, Clone)]
pub struct GroupProblem {
    /// Normalized volumes, one per timepoint, all on the same grid.
    pub volumes: Vec<Volume>,
    pub mode: Mode,
    pub diffeomorphic: bool,
    pub steps: u32,
    pub prior: PriorSpec,
    pub parzen: ParzenConfig,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    pub kl_reduction: KlReduction,
    /// Latent grid is coarser than the volumes by this integer factor.
    pub grid_factor: usize,
    /// Use every `sample_stride`-th voxel in the histograms.
    pub sample_stride: usize,
    /// Restrict the similarity term to one random box of this size per iteration.
    pub patch: Option<[usize; 3]>,
    /// In all-moving mode, keep the mean of the velocity means at zero.
    pub center_velocities: bool,
    /// Initial value of every `rho` entry.
    pub init_rho: f64,
    /// Return identity deformations when the optimized ones lower group NMI.
    pub identity_fallback: bool,
}

impl GroupProblem {
    pub fn new(volumes: Vec<Volume>, mode: Mode) -> Self {
        GroupProblem {
            volumes,
            mode,
            diffeomorphic: true,
            steps: DEFAULT_SQUARING_STEPS,
            prior: PriorSpec::default(),
            parzen: ParzenConfig::default(),
            optimizer: OptimizerConfig::default(),
            seed: 0,
            kl_reduction: KlReduction::default(),
            grid_factor: 1,
            sample_stride: 1,
            patch: None,
            center_velocities: false,
            init_rho: -3.0,
            identity_fallback: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.volumes.len();
        if k < 2 {
            return Err(Error::InvalidInput(format!("need at least 2 volumes, got {k}")));
        }
        let dims = self.volumes[0].dims();
        if let Some(v) = self.volumes.iter().find(|v| v.dims() != dims) {
            return Err(Error::DimensionMismatch {
                expected: dims,
                got: v.dims(),
            });
        }
        if let Mode::AllToOne { fixed } = self.mode {
            if fixed >= k {
                return Err(Error::InvalidInput(format!("fixed index {fixed} out of range for {k} volumes")));
            }
        }
        if self.grid_factor == 0 || self.sample_stride == 0 {
            return Err(Error::InvalidInput("grid factor and sample stride must be positive".into()));
        }
        if let Some(p) = self.patch {
            if p.iter().any(|&n| n == 0) {
                return Err(Error::InvalidInput("patch size must be positive".into()));
            }
        }
        let o = &self.optimizer;
        if !(o.learning_rate > 0.0) || !(0.0 < o.beta1 && o.beta1 < 1.0) || !(0.0 < o.beta2 && o.beta2 < 1.0) {
            return Err(Error::InvalidInput("invalid optimizer settings".into()));
        }
        self.prior.validate()?;
        self.parzen.validate()
    }

    pub fn dims(&self) -> Dims {
        self.volumes[0].dims()
    }

    pub fn latent_dims(&self) -> Dims {
        coarse_dims(self.dims(), self.grid_factor)
    }

    /// Timepoints that carry variational parameters, in order.
    pub fn moving(&self) -> Vec<usize> {
        match self.mode {
            Mode::AllToOne { fixed } => (0..self.volumes.len()).filter(|&k| k != fixed).collect(),
            Mode::AllMoving => (0..self.volumes.len()).collect(),
        }
    }

    pub fn initial_params(&self) -> Vec<VariationalField> {
        let dims = self.latent_dims();
        self.moving().iter().map(|_| VariationalField::new(dims, self.init_rho)).collect()
    }

    /// Deformation (displacement) produced by a latent field.
    pub fn deformation(&self, z: &VectorField) -> Result<VectorField> {
        let v = upsample(z, self.grid_factor, self.dims())?;
        Ok(if self.diffeomorphic {
            integrate_velocity(&v, self.steps)
        } else {
            v
        })
    }

    fn kl_weight(&self) -> f64 {
        match self.kl_reduction {
            KlReduction::Sum => 1.0,
            KlReduction::Mean => {
                let d = self.latent_dims();
                1.0 / (3 * d[0] * d[1] * d[2]) as f64
            }
        }
    }

    fn default_subset(&self) -> Option<Vec<usize>> {
        (self.sample_stride > 1).then(|| (0..self.volumes[0].len()).step_by(self.sample_stride).collect())
    }

    fn patch_subset(&self, rng: &mut impl Rng) -> Option<Vec<usize>> {
        let size = self.patch?;
        let dims = self.dims();
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        for a in 0..3 {
            let s = size[a].min(dims[a]);
            lo[a] = rng.random_range(0..=dims[a] - s);
            hi[a] = lo[a] + s;
        }
        let mut out = Vec::new();
        for k in lo[2]..hi[2] {
            for j in lo[1]..hi[1] {
                for i in lo[0]..hi[0] {
                    let idx = linear_index(dims, i, j, k);
                    if idx % self.sample_stride == 0 {
                        out.push(idx);
                    }
                }
            }
        }
        Some(out)
    }
}

/// Which loss terms to include; both are on for the real objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Terms {
    pub similarity: bool,
    pub kl: bool,
}

impl Terms {
    pub const ALL: Terms = Terms {
        similarity: true,
        kl: true,
    };
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub total: f64,
    pub group_nmi: f64,
    /// NMI of each unordered timepoint pair.
    pub pair_nmi: Vec<(usize, usize, f64)>,
    /// Summed (and reduced) KL terms.
    pub kl: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad {
    pub mu_raw: VectorField,
    pub rho: VectorField,
}

fn check_params(problem: &GroupProblem, params: &[VariationalField], noise: &[VectorField]) -> Result<()> {
    problem.validate()?;
    let n = problem.moving().len();
    if params.len() != n || noise.len() != n {
        return Err(Error::InvalidInput(format!(
            "expected {n} parameter and noise fields, got {} and {}",
            params.len(),
            noise.len()
        )));
    }
    let dims = problem.latent_dims();
    for f in params.iter().map(|p| p.dims()).chain(noise.iter().map(|e| e.dims())) {
        if f != dims {
            return Err(Error::DimensionMismatch { expected: dims, got: f });
        }
    }
    Ok(())
}

struct Forward {
    z: VectorField,
    flow: Option<Flow>,
    phi: VectorField,
    warped: Volume,
}

fn evaluate(
    problem: &GroupProblem,
    params: &[VariationalField],
    noise: &[VectorField],
    subset: Option<&[usize]>,
    terms: Terms,
    want_grad: bool,
) -> Result<(LossValue, Option<Vec<ParamGrad>>)> {
    check_params(problem, params, noise)?;
    let moving = problem.moving();
    let forwards: Vec<Forward> = params
        .par_iter()
        .zip(noise.par_iter())
        .zip(moving.par_iter())
        .map(|((vf, e), &k)| {
            let z = reparameterize(vf, e)?;
            let v = upsample(&z, problem.grid_factor, problem.dims())?;
            let (phi, flow) = if problem.diffeomorphic {
                let flow = integrate_velocity_tape(&v, problem.steps);
                (flow.phi.clone(), Some(flow))
            } else {
                (v, None)
            };
            let warped = warp_volume(&problem.volumes[k], &phi)?;
            Ok(Forward { z, flow, phi, warped })
        })
        .collect::<Result<_>>()?;

    let k_total = problem.volumes.len();
    let mut slot: Vec<Option<usize>> = vec![None; k_total];
    for (m, &k) in moving.iter().enumerate() {
        slot[k] = Some(m);
    }
    let full: Vec<&[f64]> = (0..k_total)
        .map(|k| match slot[k] {
            Some(m) => forwards[m].warped.data(),
            None => problem.volumes[k].data(),
        })
        .collect();
    let gathered: Option<Vec<Vec<f64>>> =
        subset.map(|idx| full.iter().map(|im| idx.iter().map(|&i| im[i]).collect()).collect());
    let images: Vec<&[f64]> = match &gathered {
        Some(g) => g.iter().map(|v| v.as_slice()).collect(),
        None => full.clone(),
    };
    let need: Vec<bool> = slot.iter().map(|s| want_grad && terms.similarity && s.is_some()).collect();
    let group = group_nmi_grad(&images, &problem.parzen, &need)?;

    let kl_w = problem.kl_weight();
    let mut kl = 0.0;
    if terms.kl {
        for vf in params {
            kl += kl_w * kl_regularizer(&vf.mean(), &vf.variance(), &problem.prior)?;
        }
    }
    let sim = if terms.similarity { -group.value } else { 0.0 };
    let value = LossValue {
        total: sim + kl,
        group_nmi: group.value,
        pair_nmi: group.pairs.clone(),
        kl,
    };
    if !want_grad {
        return Ok((value, None));
    }

    let n_vox = problem.volumes[0].len();
    let grads = moving
        .par_iter()
        .enumerate()
        .map(|(m, &k)| {
            let fw = &forwards[m];
            let vf = &params[m];
            let latent = vf.dims();
            let mut g_z = VectorField::zeros(latent);
            if let Some(g_img) = &group.grads[k] {
                let mut up = vec![0.0; n_vox];
                match subset {
                    Some(idx) => idx.iter().zip(g_img).for_each(|(&i, &g)| up[i] = -g),
                    None => up.iter_mut().zip(g_img).for_each(|(u, &g)| *u = -g),
                }
                let g_phi = warp_volume_adjoint(&problem.volumes[k], &fw.phi, &up)?;
                let g_v = match &fw.flow {
                    Some(flow) => flow.adjoint(&g_phi)?,
                    None => g_phi,
                };
                g_z = upsample_adjoint(&g_v, problem.grid_factor, latent)?;
            }
            debug_assert_eq!(fw.z.dims(), latent);
            let e = noise[m].data();
            let sigma = vf.std_dev();
            let mut g_mu = g_z.data().to_vec();
            let mut g_sigma: Vec<f64> = g_z.data().iter().zip(e).map(|(g, e)| g * e).collect();
            if terms.kl {
                let (gk_mu, gk_s2) = kl_regularizer_grad(&vf.mean(), &vf.variance(), &problem.prior)?;
                for i in 0..g_mu.len() {
                    g_mu[i] += kl_w * gk_mu.data()[i];
                    g_sigma[i] += kl_w * gk_s2.data()[i] * 2.0 * sigma.data()[i];
                }
            }
            let mu_raw: Vec<f64> = g_mu
                .iter()
                .zip(vf.mu_raw.data())
                .map(|(g, &r)| {
                    let t = r.tanh();
                    g * TANH_SCALE * (1.0 - t * t)
                })
                .collect();
            let rho: Vec<f64> = g_sigma.iter().zip(vf.rho.data()).map(|(g, &r)| g * sigmoid(r)).collect();
            Ok(ParamGrad {
                mu_raw: VectorField::new(latent, mu_raw)?,
                rho: VectorField::new(latent, rho)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((value, Some(grads)))
}

/// Single-draw loss for the given noise realization.
pub fn loss(problem: &GroupProblem, params: &[VariationalField], noise: &[VectorField]) -> Result<LossValue> {
    let subset = problem.default_subset();
    Ok(evaluate(problem, params, noise, subset.as_deref(), Terms::ALL, false)?.0)
}

/// Loss and its exact gradient with respect to every `mu_raw` and `rho` grid.
pub fn loss_grad(
    problem: &GroupProblem,
    params: &[VariationalField],
    noise: &[VectorField],
) -> Result<(LossValue, Vec<ParamGrad>)> {
    loss_grad_terms(problem, params, noise, Terms::ALL)
}

/// [`loss_grad`] restricted to a subset of terms.
pub fn loss_grad_terms(
    problem: &GroupProblem,
    params: &[VariationalField],
    noise: &[VectorField],
    terms: Terms,
) -> Result<(LossValue, Vec<ParamGrad>)> {
    let subset = problem.default_subset();
    let (v, g) = evaluate(problem, params, noise, subset.as_deref(), terms, true)?;
    Ok((v, g.expect("gradients requested")))
}

/// Quality measures of a group before and after applying deformations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub group_nmi_before: f64,
    pub group_nmi_after: f64,
    pub pair_nmi_before: Vec<f64>,
    pub pair_nmi_after: Vec<f64>,
    /// Mean RMSE over unordered timepoint pairs.
    pub rmse_before: f64,
    pub rmse_after: f64,
    /// Fraction of voxels with negative Jacobian determinant, per timepoint.
    pub negative_jacobian: Vec<f64>,
}

fn mean_pair_rmse(vols: &[Volume]) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..vols.len() {
        for j in i + 1..vols.len() {
            total += rmse(&vols[i], &vols[j])?;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

fn pair_values(vols: &[Volume], parzen: &ParzenConfig) -> Result<(f64, Vec<f64>)> {
    let views: Vec<&[f64]> = vols.iter().map(|v| v.data()).collect();
    let g = group_nmi_grad(&views, parzen, &vec![false; vols.len()])?;
    Ok((g.value, g.pairs.into_iter().map(|(_, _, v)| v).collect()))
}

/// Evaluates a set of per-timepoint deformations against the input volumes.
pub fn compute_metrics(volumes: &[Volume], deformations: &[VectorField], parzen: &ParzenConfig) -> Result<Metrics> {
    if volumes.len() != deformations.len() {
        return Err(Error::InvalidInput(format!(
            "{} volumes but {} deformations",
            volumes.len(),
            deformations.len()
        )));
    }
    let warped: Vec<Volume> = volumes
        .iter()
        .zip(deformations)
        .map(|(v, d)| warp_volume(v, d))
        .collect::<Result<_>>()?;
    let (group_nmi_before, pair_nmi_before) = pair_values(volumes, parzen)?;
    let (group_nmi_after, pair_nmi_after) = pair_values(&warped, parzen)?;
    Ok(Metrics {
        group_nmi_before,
        group_nmi_after,
        pair_nmi_before,
        pair_nmi_after,
        rmse_before: mean_pair_rmse(volumes)?,
        rmse_after: mean_pair_rmse(&warped)?,
        negative_jacobian: deformations
            .iter()
            .map(fraction_negative_jacobian)
            .collect::<Result<_>>()?,
    })
}

#[derive(Debug, Clone)]
pub struct RegistrationResult {
    /// Noise-free deformation of every timepoint (identity for a fixed one).
    pub deformations: Vec<VectorField>,
    /// Mean latent field of every timepoint at volume resolution.
    pub mean_fields: Vec<VectorField>,
    /// Final variational parameters of the moving timepoints.
    pub params: Vec<VariationalField>,
    pub moving: Vec<usize>,
    pub loss_trace: Vec<f64>,
    pub metrics: Metrics,
    /// The optimized deformations were discarded for identity.
    pub fell_back: bool,
}

impl RegistrationResult {
    pub fn warped(&self, volumes: &[Volume]) -> Result<Vec<Volume>> {
        volumes
            .iter()
            .zip(&self.deformations)
            .map(|(v, d)| warp_volume(v, d))
            .collect()
    }
}

/// Deformations built from the posterior means, one per timepoint.
pub fn mean_deformations(problem: &GroupProblem, params: &[VariationalField]) -> Result<(Vec<VectorField>, Vec<VectorField>)> {
    let dims = problem.dims();
    let mut deformations = vec![VectorField::zeros(dims); problem.volumes.len()];
    let mut means = deformations.clone();
    for (vf, &k) in params.iter().zip(&problem.moving()) {
        means[k] = upsample(&vf.mean(), problem.grid_factor, dims)?;
        deformations[k] = problem.deformation(&vf.mean())?;
    }
    Ok((deformations, means))
}

fn center_means(params: &mut [VariationalField]) {
    let k = params.len() as f64;
    let n = params[0].mu_raw.data().len();
    for i in 0..n {
        let means: Vec<f64> = params.iter().map(|p| TANH_SCALE * p.mu_raw.data()[i].tanh()).collect();
        let avg = means.iter().sum::<f64>() / k;
        for (p, m) in params.iter_mut().zip(&means) {
            let target = ((m - avg) / TANH_SCALE).clamp(-1.0 + 1e-12, 1.0 - 1e-12);
            p.mu_raw.data_mut()[i] = target.atanh();
        }
    }
}

/// Runs Adam with cosine annealing over the variational parameters.
///
/// One fresh noise draw per iteration comes from a ChaCha stream seeded with
/// `problem.seed`; the returned deformations use the noise-free means.
pub fn register_group(problem: &GroupProblem) -> Result<RegistrationResult> {
    register_group_with(problem, |_, _| {})
}

/// [`register_group`] with a per-iteration callback `(iteration, loss)`.
pub fn register_group_with(
    problem: &GroupProblem,
    mut on_iteration: impl FnMut(usize, &LossValue),
) -> Result<RegistrationResult> {
    problem.validate()?;
    let mut params = problem.initial_params();
    let latent = problem.latent_dims();
    let cfg = problem.optimizer;
    let mut adam_mu: Vec<Adam> = params.iter().map(|p| Adam::new(p.mu_raw.data().len(), &cfg)).collect();
    let mut adam_rho = adam_mu.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(problem.seed);
    let default_subset = problem.default_subset();
    let mut trace = Vec::with_capacity(cfg.iterations);

    for t in 0..cfg.iterations {
        let noise: Vec<VectorField> = params.iter().map(|_| standard_normal_field(latent, &mut rng)).collect();
        let patch = problem.patch_subset(&mut rng);
        let subset = patch.as_deref().or(default_subset.as_deref());
        let (value, grads) = evaluate(problem, &params, &noise, subset, Terms::ALL, true)?;
        if !value.total.is_finite() {
            return Err(Error::Diverged {
                iteration: t,
                loss: value.total,
            });
        }
        let grads = grads.expect("gradients requested");
        let lr = cfg.learning_rate_at(t);
        for (m, (p, g)) in params.iter_mut().zip(&grads).enumerate() {
            adam_mu[m].step(p.mu_raw.data_mut(), g.mu_raw.data(), lr);
            adam_rho[m].step(p.rho.data_mut(), g.rho.data(), lr);
        }
        if problem.center_velocities && problem.mode == Mode::AllMoving {
            center_means(&mut params);
        }
        on_iteration(t, &value);
        trace.push(value.total);
    }

    let (mut deformations, mut mean_fields) = mean_deformations(problem, &params)?;
    let mut metrics = compute_metrics(&problem.volumes, &deformations, &problem.parzen)?;
    let fell_back = problem.identity_fallback && metrics.group_nmi_after < metrics.group_nmi_before;
    if fell_back {
        deformations = vec![VectorField::zeros(problem.dims()); problem.volumes.len()];
        mean_fields = deformations.clone();
        metrics = compute_metrics(&problem.volumes, &deformations, &problem.parzen)?;
    }
    Ok(RegistrationResult {
        deformations,
        mean_fields,
        params,
        moving: problem.moving(),
        loss_trace: trace,
        metrics,
        fell_back,
    })
}
