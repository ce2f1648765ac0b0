//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Runs without the libtest harness so the verdict lines always reach the
//! terminal. A failing criterion is reported but only fails the process when
//! `ACCEPTANCE_STRICT=1` is set.

use std::path::Path;
use std::time::Instant;

use groupreg::field::{
    compose, compose_adjoint, fraction_negative_jacobian, integrate_velocity, integrate_velocity_adjoint,
    warp_volume, warp_volume_adjoint, DEFAULT_SQUARING_STEPS,
};
use groupreg::harness::{gen_smooth_velocity, landmark_error, synth_group, SyntheticSpec};
use groupreg::io::report::without_timing;
use groupreg::io::run::{evaluate, register, synth, RunOptions};
use groupreg::io::{read_field, read_volume, write_field, write_volume};
use groupreg::prior::{kl_regularizer, kl_regularizer_grad, PriorSpec};
use groupreg::similarity::{nmi, nmi_grad, ParzenConfig};
use groupreg::varopt::{
    loss, loss_grad, register_group, sigmoid, softplus, GroupProblem, KlReduction, Mode, VariationalField,
    TANH_SCALE,
};
use groupreg::volume::{percentile_normalize, trilinear_sample, trilinear_sample_grad};
use groupreg::{GridPoint, VectorField, Volume};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Synthetic field settings of the recovery experiment (criterion 5).
const RECOVERY_SMOOTHNESS: f64 = 12.0;
const RECOVERY_AMPLITUDE: f64 = 16.0;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_volume(dims: [usize; 3], r: &mut ChaCha8Rng) -> Volume {
    Volume::from_fn(dims, |_, _, _| r.random::<f64>())
}

fn random_field(dims: [usize; 3], scale: f64, r: &mut ChaCha8Rng) -> VectorField {
    VectorField::from_fn(dims, |_, _, _| std::array::from_fn(|_| scale * (2.0 * r.random::<f64>() - 1.0)))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

fn offset(f: &VectorField, dir: &VectorField, h: f64) -> VectorField {
    let data = f.data().iter().zip(dir.data()).map(|(x, d)| x + h * d).collect();
    VectorField::new(f.dims(), data).unwrap()
}

/// Worst relative error of `analytic . dir` against a central difference of
/// `f` along `dir`, over a few random directions.
fn directional_check(
    x: &VectorField,
    analytic: &[f64],
    f: impl Fn(&VectorField) -> f64,
    h: f64,
    r: &mut ChaCha8Rng,
) -> f64 {
    (0..3)
        .map(|_| {
            let dir = random_field(x.dims(), 1.0, r);
            let fd = (f(&offset(x, &dir, h)) - f(&offset(x, &dir, -h))) / (2.0 * h);
            rel_err(fd, dot(analytic, dir.data()))
        })
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// 1. gradient suite

fn criterion_gradients() -> Verdict {
    let started = Instant::now();
    let dims = [6, 6, 6];
    let mut worst = [0.0f64; 8];
    let names = ["trilinear", "warp", "compose", "integration", "nmi", "kl", "loss(mu)", "loss(rho)"];
    let instances = 20;
    for seed in 0..instances {
        let mut r = rng(1000 + seed);
        let vol = random_volume(dims, &mut r);

        // trilinear: derivative with respect to the sample position
        for _ in 0..10 {
            let p: [f64; 3] = std::array::from_fn(|_| r.random_range(0.2..4.8));
            let (_, g) = trilinear_sample_grad(&vol, GridPoint(p));
            for a in 0..3 {
                let h = 1e-6;
                let mut hi = p;
                let mut lo = p;
                hi[a] += h;
                lo[a] -= h;
                let fd = (trilinear_sample(&vol, GridPoint(hi)) - trilinear_sample(&vol, GridPoint(lo))) / (2.0 * h);
                worst[0] = worst[0].max(rel_err(fd, g[a]));
            }
        }

        let upstream: Vec<f64> = (0..vol.len()).map(|_| r.random::<f64>() - 0.5).collect();
        let phi = random_field(dims, 0.8, &mut r);
        let g = warp_volume_adjoint(&vol, &phi, &upstream).unwrap();
        let f = |d: &VectorField| dot(warp_volume(&vol, d).unwrap().data(), &upstream);
        worst[1] = worst[1].max(directional_check(&phi, g.data(), f, 1e-6, &mut r));

        let outer = random_field(dims, 0.7, &mut r);
        let inner = random_field(dims, 0.7, &mut r);
        let up = random_field(dims, 1.0, &mut r);
        let (g_outer, g_inner) = compose_adjoint(&outer, &inner, &up).unwrap();
        let fo = |o: &VectorField| dot(compose(o, &inner).unwrap().data(), up.data());
        let fi = |i: &VectorField| dot(compose(&outer, i).unwrap().data(), up.data());
        worst[2] = worst[2].max(directional_check(&outer, g_outer.data(), fo, 1e-6, &mut r));
        worst[2] = worst[2].max(directional_check(&inner, g_inner.data(), fi, 1e-6, &mut r));

        let v = random_field(dims, 1.5, &mut r);
        let g_v = integrate_velocity_adjoint(&v, DEFAULT_SQUARING_STEPS, &up).unwrap();
        let fv = |v: &VectorField| dot(integrate_velocity(v, DEFAULT_SQUARING_STEPS).data(), up.data());
        worst[3] = worst[3].max(directional_check(&v, g_v.data(), fv, 1e-6, &mut r));

        let cfg = ParzenConfig::default();
        let b: Vec<f64> = vol.data().iter().map(|x| (0.6 * x + 0.4 * r.random::<f64>()).powf(1.3)).collect();
        let (_, g_a) = nmi_grad(vol.data(), &b, &cfg).unwrap();
        let a_field = VectorField::new([dims[0], dims[1], dims[2] / 3], vol.data().to_vec()).unwrap();
        let fa = |a: &VectorField| nmi(a.data(), &b, &cfg).unwrap();
        worst[4] = worst[4].max(directional_check(&a_field, &g_a, fa, 1e-7, &mut r));

        let prior = PriorSpec::default();
        let mu = random_field(dims, 2.0, &mut r);
        let s2 = VectorField::from_fn(dims, |_, _, _| std::array::from_fn(|_| r.random_range(0.3..1.5)));
        let (g_mu, g_s2) = kl_regularizer_grad(&mu, &s2, &prior).unwrap();
        let fm = |m: &VectorField| kl_regularizer(m, &s2, &prior).unwrap();
        let fs = |s: &VectorField| kl_regularizer(&mu, s, &prior).unwrap();
        worst[5] = worst[5].max(directional_check(&mu, g_mu.data(), fm, 1e-4, &mut r));
        worst[5] = worst[5].max(directional_check(&s2, g_s2.data(), fs, 1e-5, &mut r));

        // full objective through reparameterization, tanh and softplus
        let k = if seed % 2 == 0 { 2 } else { 3 };
        let volumes: Vec<Volume> = (0..k).map(|_| random_volume(dims, &mut r)).collect();
        let mode = if seed % 4 < 2 { Mode::AllToOne { fixed: 0 } } else { Mode::AllMoving };
        let mut problem = GroupProblem::new(volumes, mode);
        problem.kl_reduction = if seed % 3 == 0 { KlReduction::Sum } else { KlReduction::Mean };
        problem.grid_factor = if seed % 5 == 0 { 2 } else { 1 };
        let latent = problem.latent_dims();
        let params: Vec<VariationalField> = problem
            .moving()
            .iter()
            .map(|_| VariationalField {
                mu_raw: random_field(latent, 0.03, &mut r),
                rho: random_field(latent, 1.0, &mut r),
            })
            .collect();
        let noise: Vec<VectorField> = params.iter().map(|_| random_field(latent, 1.0, &mut r)).collect();
        let (_, grads) = loss_grad(&problem, &params, &noise).unwrap();
        for m in 0..params.len() {
            let f_mu = |x: &VectorField| {
                let mut p = params.clone();
                p[m].mu_raw = x.clone();
                loss(&problem, &p, &noise).unwrap().total
            };
            let f_rho = |x: &VectorField| {
                let mut p = params.clone();
                p[m].rho = x.clone();
                loss(&problem, &p, &noise).unwrap().total
            };
            worst[6] = worst[6].max(directional_check(&params[m].mu_raw, grads[m].mu_raw.data(), f_mu, 1e-7, &mut r));
            worst[7] = worst[7].max(directional_check(&params[m].rho, grads[m].rho.data(), f_rho, 1e-6, &mut r));
        }
    }
    let secs = started.elapsed().as_secs_f64();
    let ok = worst.iter().enumerate().all(|(i, &w)| w < if i == 5 { 1e-6 } else { 1e-3 }) && secs < 120.0;
    let detail = names
        .iter()
        .zip(worst)
        .map(|(n, w)| format!("{n} {w:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    verdict(ok, format!("{instances} instances at 6^3 in {secs:.1}s; worst rel. error: {detail}"))
}

// ---------------------------------------------------------------------------
// 2. KL against the dense-matrix expression

fn dense_kl(mu: &VectorField, s2: &VectorField, prior: &PriorSpec) -> f64 {
    let dims = mu.dims();
    let n = dims[0] * dims[1] * dims[2];
    let coords = |i: usize| [i % dims[0], (i / dims[0]) % dims[1], i / (dims[0] * dims[1])];
    let mut adjacency = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            let (a, b) = (coords(i), coords(j));
            let manhattan: usize = (0..3).map(|t| a[t].abs_diff(b[t])).sum();
            if manhattan == 1 {
                adjacency[[i, j]] = 1.0;
            }
        }
    }
    let degree = Array2::from_diag(&adjacency.sum_axis(ndarray::Axis(1)));
    let lambda = (&degree - &adjacency) * prior.lambda_u + Array2::<f64>::eye(n) * prior.lambda_v;
    let mut total = 0.0;
    for c in 0..3 {
        let m = ndarray::Array1::from_iter((0..n).map(|i| mu.data()[3 * i + c]));
        let sigma = Array2::from_diag(&ndarray::Array1::from_iter((0..n).map(|i| s2.data()[3 * i + c])));
        let trace = lambda.dot(&sigma).diag().sum();
        let log_det: f64 = sigma.diag().iter().map(|x| x.ln()).sum();
        total += 0.5 * (trace - log_det + m.dot(&lambda.dot(&m)));
    }
    total
}

fn criterion_kl_oracle() -> Verdict {
    let mut worst = 0.0f64;
    let mut grids = 0;
    let mut r = rng(2);
    for nz in 1..=5 {
        for ny in 1..=5 {
            for nx in 1..=5 {
                let dims = [nx, ny, nz];
                for prior in [PriorSpec::default(), PriorSpec { lambda_u: 0.3, lambda_v: 2.0 }] {
                    let mu = random_field(dims, 3.0, &mut r);
                    let s2 = VectorField::from_fn(dims, |_, _, _| std::array::from_fn(|_| r.random_range(0.05..4.0)));
                    let got = kl_regularizer(&mu, &s2, &prior).unwrap();
                    let want = dense_kl(&mu, &s2, &prior);
                    worst = worst.max((got - want).abs());
                }
                grids += 1;
            }
        }
    }
    verdict(worst < 1e-9, format!("{grids} grids from 1^3 to 5^3, two priors each; max |diff| {worst:.1e}"))
}

// ---------------------------------------------------------------------------
// 3. diffeomorphism of the integrated flow

fn flow_errors(sigma: f64, amplitude: f64) -> (f64, f64) {
    let dims = [32, 32, 32];
    let mut worst_fold = 0.0f64;
    let mut worst_inverse = 0.0f64;
    for seed in 0..10 {
        let v = gen_smooth_velocity(dims, sigma, amplitude, 300 + seed).unwrap();
        let phi = integrate_velocity(&v, DEFAULT_SQUARING_STEPS);
        let inverse = integrate_velocity(&v.scaled(-1.0), DEFAULT_SQUARING_STEPS);
        worst_fold = worst_fold.max(fraction_negative_jacobian(&phi).unwrap());
        worst_inverse = worst_inverse.max(compose(&phi, &inverse).unwrap().max_norm_interior(4));
    }
    (worst_fold, worst_inverse)
}

fn criterion_diffeomorphism() -> Verdict {
    let started = Instant::now();
    // the roughest admissible setting decides; a smoother one is reported alongside
    let (fold, inverse) = flow_errors(2.0, 5.0);
    let secs = started.elapsed().as_secs_f64();
    let (fold3, inverse3) = flow_errors(3.0, 5.0);
    verdict(
        fold == 0.0 && inverse < 0.05 && secs < 60.0,
        format!(
            "10 seeds at 32^3, sigma 2, amplitude 5: max folded fraction {fold}, max interior |phi o phi^-1 - id| {inverse:.4} voxels, {secs:.1}s (sigma 3: {fold3}, {inverse3:.4})"
        ),
    )
}

// ---------------------------------------------------------------------------
// 4. NMI behaviour

fn normalized_group(spec: &SyntheticSpec) -> (Vec<Volume>, groupreg::harness::SyntheticGroup) {
    let g = synth_group(spec).unwrap();
    let vols = g.volumes.iter().map(|v| percentile_normalize(v, 1.0, 99.0).unwrap()).collect();
    (vols, g)
}

fn criterion_nmi() -> Verdict {
    let cfg = ParzenConfig::default();
    let mut r = rng(4);
    let mut self_min = f64::MAX;
    let group = synth_group(&SyntheticSpec::default()).unwrap();
    let images: Vec<Vec<f64>> = vec![
        (0..10_000).map(|_| r.random::<f64>()).collect(),
        (0..10_000).map(|i| (i as f64 / 10_000.0).powi(2)).collect(),
        percentile_normalize(&group.base, 1.0, 99.0).unwrap().into_data(),
        percentile_normalize(&group.volumes[1], 1.0, 99.0).unwrap().into_data(),
        (0..10_000).map(|i| (i % 7) as f64 / 6.0).collect(),
    ];
    for a in &images {
        self_min = self_min.min(nmi(a, a, &cfg).unwrap());
    }
    let a: Vec<f64> = (0..10_000).map(|_| r.random::<f64>()).collect();
    let b: Vec<f64> = (0..10_000).map(|_| r.random::<f64>()).collect();
    let independent = nmi(&a, &b, &cfg).unwrap();
    let mut asym = 0.0f64;
    for i in 0..images.len() {
        for j in (0..images.len()).filter(|&j| images[j].len() == images[i].len()) {
            asym = asym.max((nmi(&images[i], &images[j], &cfg).unwrap() - nmi(&images[j], &images[i], &cfg).unwrap()).abs());
        }
    }

    // registered groups score higher than unregistered ones
    let mut improved = 0;
    for seed in 0..10 {
        let spec = SyntheticSpec {
            dims: [16, 16, 16],
            smoothness: 6.0,
            amplitude: 8.0,
            seed: 400 + seed,
            ..SyntheticSpec::default()
        };
        let (vols, _) = normalized_group(&spec);
        let mut problem = GroupProblem::new(vols, Mode::AllToOne { fixed: 0 });
        problem.optimizer.iterations = 100;
        problem.seed = seed;
        problem.identity_fallback = false;
        let m = register_group(&problem).unwrap().metrics;
        if m.group_nmi_after >= m.group_nmi_before {
            improved += 1;
        }
    }
    let ok = self_min >= 0.95 && independent < 0.05 && asym < 1e-12 && improved == 10;
    verdict(
        ok,
        format!(
            "min nmi(a,a) {self_min:.4} over 5 images, independent noise {independent:.4}, max asymmetry {asym:.1e}, nmi improved in {improved}/10 registered groups"
        ),
    )
}

// ---------------------------------------------------------------------------
// 5. synthetic recovery

fn criterion_recovery() -> Verdict {
    let mut lines = Vec::new();
    let mut ok = true;
    for mode in [Mode::AllToOne { fixed: 0 }, Mode::AllMoving] {
        let started = Instant::now();
        let mut good = 0;
        let mut runs = Vec::new();
        for seed in 0..5 {
            let spec = SyntheticSpec {
                smoothness: RECOVERY_SMOOTHNESS,
                amplitude: RECOVERY_AMPLITUDE,
                seed,
                ..SyntheticSpec::default()
            };
            let (vols, group) = normalized_group(&spec);
            let mut problem = GroupProblem::new(vols, mode);
            problem.seed = seed;
            problem.identity_fallback = false;
            let result = register_group(&problem).unwrap();
            let m = &result.metrics;
            let identity = vec![VectorField::zeros(spec.dims); 3];
            let (before, _) = landmark_error(&identity, &group.landmarks).unwrap();
            let (after, _) = landmark_error(&result.deformations, &group.landmarks).unwrap();
            let rmse_ratio = m.rmse_after / m.rmse_before;
            let lm_ratio = after / before;
            if rmse_ratio <= 0.5 && lm_ratio <= 0.6 {
                good += 1;
            }
            runs.push(format!("{rmse_ratio:.2}/{lm_ratio:.2}"));
        }
        let secs = started.elapsed().as_secs_f64();
        let mode_ok = good >= 4 && secs < 600.0;
        ok &= mode_ok;
        let name = match mode {
            Mode::AllToOne { .. } => "all_to_one",
            Mode::AllMoving => "all_moving",
        };
        lines.push(format!(
            "{name} {good}/5 seeds (rmse/landmark ratios {}) in {secs:.0}s",
            runs.join(" ")
        ));
    }
    verdict(ok, lines.join("; "))
}

// ---------------------------------------------------------------------------
// 6. all-to-one with K = 2 is the pairwise objective

fn criterion_pairwise() -> Verdict {
    let dims = [6, 6, 6];
    let mut worst_value = 0.0f64;
    let mut worst_grad = 0.0f64;
    for seed in 0..10 {
        let mut r = rng(600 + seed);
        let fixed = random_volume(dims, &mut r);
        let moving = random_volume(dims, &mut r);
        let mut problem = GroupProblem::new(vec![fixed.clone(), moving.clone()], Mode::AllToOne { fixed: 0 });
        problem.kl_reduction = if seed % 2 == 0 { KlReduction::Sum } else { KlReduction::Mean };
        let vf = VariationalField {
            mu_raw: random_field(dims, 0.05, &mut r),
            rho: random_field(dims, 1.0, &mut r),
        };
        let e = random_field(dims, 1.0, &mut r);
        let (value, grads) = loss_grad(&problem, std::slice::from_ref(&vf), std::slice::from_ref(&e)).unwrap();

        // the same objective assembled from the building blocks
        let cfg = ParzenConfig::default();
        let w = match problem.kl_reduction {
            KlReduction::Sum => 1.0,
            KlReduction::Mean => 1.0 / (3 * 216) as f64,
        };
        let mu = vf.mean();
        let sigma = vf.std_dev();
        let z = VectorField::new(
            dims,
            mu.data().iter().zip(sigma.data()).zip(e.data()).map(|((m, s), e)| m + s * e).collect(),
        )
        .unwrap();
        let phi = integrate_velocity(&z, DEFAULT_SQUARING_STEPS);
        let warped = warp_volume(&moving, &phi).unwrap();
        let pair = nmi(fixed.data(), warped.data(), &cfg).unwrap();
        let kl = kl_regularizer(&mu, &vf.variance(), &problem.prior).unwrap();
        let hand_value = -pair + w * kl;

        let (_, g_img) = nmi_grad(warped.data(), fixed.data(), &cfg).unwrap();
        let up: Vec<f64> = g_img.iter().map(|g| -g).collect();
        let g_phi = warp_volume_adjoint(&moving, &phi, &up).unwrap();
        let g_z = integrate_velocity_adjoint(&z, DEFAULT_SQUARING_STEPS, &g_phi).unwrap();
        let (gk_mu, gk_s2) = kl_regularizer_grad(&mu, &vf.variance(), &problem.prior).unwrap();
        for i in 0..g_z.data().len() {
            let raw = vf.mu_raw.data()[i];
            let rho = vf.rho.data()[i];
            let s = softplus(rho);
            let g_mu = g_z.data()[i] + w * gk_mu.data()[i];
            let g_sigma = g_z.data()[i] * e.data()[i] + w * gk_s2.data()[i] * 2.0 * s;
            let want_raw = g_mu * TANH_SCALE * (1.0 - raw.tanh().powi(2));
            let want_rho = g_sigma * sigmoid(rho);
            worst_grad = worst_grad.max((grads[0].mu_raw.data()[i] - want_raw).abs());
            worst_grad = worst_grad.max((grads[0].rho.data()[i] - want_rho).abs());
        }
        worst_value = worst_value.max((value.total - hand_value).abs());
    }
    verdict(
        worst_value < 1e-12 && worst_grad < 1e-12,
        format!("10 instances at 6^3: max |loss diff| {worst_value:.1e}, max |grad diff| {worst_grad:.1e}"),
    )
}

// ---------------------------------------------------------------------------
// 7. diffeomorphic versus direct displacement

fn criterion_folding() -> Verdict {
    let mut wins = 0;
    let mut pairs = Vec::new();
    for seed in 0..10 {
        let spec = SyntheticSpec {
            dims: [16, 16, 16],
            smoothness: 6.0,
            amplitude: 8.0,
            seed: 700 + seed,
            ..SyntheticSpec::default()
        };
        let (vols, _) = normalized_group(&spec);
        let count = |diffeomorphic: bool| {
            let mut problem = GroupProblem::new(vols.clone(), Mode::AllToOne { fixed: 0 });
            problem.diffeomorphic = diffeomorphic;
            problem.optimizer.iterations = 150;
            problem.optimizer.learning_rate = 0.05;
            problem.seed = seed;
            problem.identity_fallback = false;
            let m = register_group(&problem).unwrap().metrics;
            m.negative_jacobian.iter().sum::<f64>() * (16 * 16 * 16) as f64
        };
        let (diff, direct) = (count(true), count(false));
        if diff <= direct {
            wins += 1;
        }
        pairs.push(format!("{diff:.0}/{direct:.0}"));
    }
    verdict(
        wins >= 9,
        format!("diffeomorphic <= direct negative-Jacobian voxels in {wins}/10 seeds ({})", pairs.join(" ")),
    )
}

// ---------------------------------------------------------------------------
// 8. determinism and I/O

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap()
}

fn criterion_io() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    std::fs::write(
        root.join("synth.toml"),
        "[synth]\ndims = [12, 12, 12]\nsmoothness = 4.0\namplitude = 5.0\nlandmarks = 8\n\n[optimizer]\niterations = 40\n\n[run]\noutput_dir = \"group\"\n",
    )
    .unwrap();
    let quiet = |config: &Path, out: Option<&Path>| RunOptions {
        config: config.to_path_buf(),
        out: out.map(Path::to_path_buf),
        quiet: true,
        ..RunOptions::default()
    };
    let group = synth(&quiet(&root.join("synth.toml"), None)).unwrap();
    let cfg = group.join("register.toml");
    register(&quiet(&cfg, Some(&root.join("a")))).unwrap();
    register(&quiet(&cfg, Some(&root.join("b")))).unwrap();
    let same_txt = without_timing(&read(&root.join("a/metrics.txt"))) == without_timing(&read(&root.join("b/metrics.txt")));
    let json = |p: &Path| {
        let mut v: serde_json::Value = serde_json::from_str(&read(p)).unwrap();
        v.as_object_mut().unwrap().remove("wall_clock_seconds");
        v.to_string()
    };
    let same_json = json(&root.join("a/metrics.json")) == json(&root.join("b/metrics.json"));
    let same_fields = (0..3).all(|k| {
        std::fs::read(root.join(format!("a/deformation_{k}.nii"))).unwrap()
            == std::fs::read(root.join(format!("b/deformation_{k}.nii"))).unwrap()
    });

    evaluate(&quiet(&root.join("a/evaluate.toml"), None)).unwrap();
    let replay = without_timing(&read(&root.join("a/metrics.txt"))) == without_timing(&read(&root.join("a/evaluate/metrics.txt")));

    let mut r = rng(8);
    let vol = Volume::from_fn([7, 5, 6], |_, _, _| r.random::<f32>() as f64).with_spacing([0.5, 1.0, 2.0]).unwrap();
    write_volume(&vol, &root.join("v.nii")).unwrap();
    let back = read_volume(&root.join("v.nii")).unwrap();
    let field = random_field([7, 5, 6], 3.0, &mut r).to_f32_precision();
    write_field(&field, &root.join("f.nii"), [1.0; 3]).unwrap();
    let bit_exact = back == vol && read_field(&root.join("f.nii")).unwrap() == field;

    verdict(
        same_txt && same_json && same_fields && replay && bit_exact,
        format!(
            "repeat run identical: text {same_txt}, json {same_json}, fields {same_fields}; evaluate replays register: {replay}; NIfTI bit-exact: {bit_exact}"
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 8] = [
        ("gradient suite", criterion_gradients),
        ("KL dense oracle", criterion_kl_oracle),
        ("diffeomorphism", criterion_diffeomorphism),
        ("NMI behaviour", criterion_nmi),
        ("synthetic recovery", criterion_recovery),
        ("mode equivalence", criterion_pairwise),
        ("diffeomorphic vs direct folding", criterion_folding),
        ("determinism and I/O", criterion_io),
    ];
    let only: Vec<usize> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect())
        .unwrap_or_default();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let v = run();
        println!("criterion {n} {name}: {} - {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        if !v.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        if std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
            std::process::exit(1);
        }
    }
}
