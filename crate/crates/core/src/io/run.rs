//! The `register`, `synth` and `evaluate` subcommands.
//!
//! Each `run_*` function returns a process exit code (see [`crate::error::exit`])
//! and prints failures to stderr; the functions without the prefix return the
//! underlying `Result` for library use.

use std::path::{Path, PathBuf};
use std::time::Instant;

use super::config::{ModeName, Purpose, RunConfig};
use super::report::{LandmarkReport, Report};
use super::{read_field, read_volume, write_atomic, write_field, write_volume};
use crate::error::{exit, Error, Result};
use crate::field::{integrate_velocity, jacobian_determinant, warp_volume, VectorField, DEFAULT_SQUARING_STEPS};
use crate::harness::{landmark_error, read_landmarks, synth_group, write_landmarks, LandmarkSet};
use crate::varopt::{compute_metrics, register_group_with};
use crate::volume::{percentile_normalize, Volume};

/// Command-line options shared by all subcommands.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub config: PathBuf,
    /// Overrides the seed of the config.
    pub seed: Option<u64>,
    /// Overrides the output directory of the config.
    pub out: Option<PathBuf>,
    pub quiet: bool,
}

const PROGRESS_EVERY: usize = 50;

fn exit_code<T>(result: Result<T>) -> i32 {
    match result {
        Ok(_) => exit::OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run_register(opts: &RunOptions) -> i32 {
    exit_code(register(opts))
}

pub fn run_synth(opts: &RunOptions) -> i32 {
    exit_code(synth(opts))
}

pub fn run_evaluate(opts: &RunOptions) -> i32 {
    exit_code(evaluate(opts))
}

fn load_config(opts: &RunOptions, purpose: Purpose) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&opts.config, purpose)?;
    if let Some(seed) = opts.seed {
        cfg.run.seed = seed;
        cfg.synth.seed = seed;
    }
    if let Some(out) = &opts.out {
        cfg.run.output_dir = if out.is_relative() {
            std::env::current_dir().map_err(|e| Error::io(".", e))?.join(out)
        } else {
            out.clone()
        };
    }
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Reads the input volumes, checks they share one grid, and normalizes them
/// when the config asks for it.
fn load_volumes(cfg: &RunConfig) -> Result<Vec<Volume>> {
    let raw: Vec<Volume> = cfg.input.volumes.iter().map(|p| read_volume(p)).collect::<Result<_>>()?;
    let dims = raw[0].dims();
    if let Some(v) = raw.iter().find(|v| v.dims() != dims) {
        return Err(Error::DimensionMismatch {
            expected: dims,
            got: v.dims(),
        });
    }
    if !cfg.input.normalize {
        return Ok(raw);
    }
    raw.iter().map(|v| percentile_normalize(v, 1.0, 99.0)).collect()
}

fn load_landmarks(cfg: &RunConfig, volumes: &[Volume]) -> Result<Option<LandmarkSet>> {
    if cfg.input.landmarks.is_empty() {
        return Ok(None);
    }
    let points = cfg.input.landmarks.iter().map(|p| read_landmarks(p)).collect::<Result<_>>()?;
    let set = LandmarkSet {
        points,
        spacing: volumes[0].spacing(),
    };
    set.validate(volumes[0].dims())?;
    Ok(Some(set))
}

fn build_report(
    volumes: &[Volume],
    deformations: &[VectorField],
    landmarks: Option<&LandmarkSet>,
    cfg: &RunConfig,
    started: Instant,
) -> Result<Report> {
    let metrics = compute_metrics(volumes, deformations, &cfg.parzen.to_config())?;
    let landmarks = match landmarks {
        Some(set) => {
            let identity = vec![VectorField::zeros(volumes[0].dims()); volumes.len()];
            let (before_mean_mm, before_std_mm) = landmark_error(&identity, set)?;
            let (after_mean_mm, after_std_mm) = landmark_error(deformations, set)?;
            Some(LandmarkReport {
                before_mean_mm,
                before_std_mm,
                after_mean_mm,
                after_std_mm,
            })
        }
        None => None,
    };
    Ok(Report {
        timepoints: volumes.len(),
        metrics,
        landmarks,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Registers the configured group and writes all artifacts.
///
/// Outputs are only written once the optimization has finished, so a failed
/// run leaves the output directory untouched.
pub fn register(opts: &RunOptions) -> Result<Report> {
    let started = Instant::now();
    let cfg = load_config(opts, Purpose::Register)?;
    let volumes = load_volumes(&cfg)?;
    let landmarks = load_landmarks(&cfg, &volumes)?;
    let problem = cfg.problem(volumes);
    let quiet = opts.quiet;
    let total = problem.optimizer.iterations;
    let result = register_group_with(&problem, |t, loss| {
        if !quiet && (t % PROGRESS_EVERY == 0 || t + 1 == total) {
            eprintln!(
                "iteration {t:>5}: loss {:.6}  group nmi {:.4}  kl {:.6}",
                loss.total, loss.group_nmi, loss.kl
            );
        }
    })?;
    if result.fell_back && !quiet {
        eprintln!("registration lowered group nmi; writing identity deformations");
    }

    // Everything below works on the precision that is persisted, so that
    // `evaluate` on the written fields reproduces this report exactly.
    let volumes = problem.volumes;
    let deformations: Vec<VectorField> = result.deformations.iter().map(|d| d.to_f32_precision()).collect();
    let warped: Vec<Volume> = volumes
        .iter()
        .zip(&deformations)
        .map(|(v, d)| warp_volume(v, d))
        .collect::<Result<_>>()?;
    let jacobians: Vec<Volume> = deformations.iter().map(jacobian_determinant).collect::<Result<_>>()?;
    let report = build_report(&volumes, &deformations, landmarks.as_ref(), &cfg, started)?;

    let out = &cfg.run.output_dir;
    create_dir(out)?;
    let spacing = volumes[0].spacing();
    let mut field_paths = Vec::new();
    for k in 0..volumes.len() {
        let path = out.join(format!("deformation_{k}.nii"));
        write_field(&deformations[k], &path, spacing)?;
        field_paths.push(path);
        write_volume(&warped[k], &out.join(format!("warped_{k}.nii")))?;
        write_volume(&jacobians[k], &out.join(format!("jacobian_{k}.nii")))?;
    }
    write_volume(&subtraction(&warped), &out.join("subtraction.nii"))?;
    write_volume(&mean_volume(&jacobians), &out.join("jacobian_mean.nii"))?;
    let trace: String = result.loss_trace.iter().map(|l| format!("{l}\n")).collect();
    write_atomic(&out.join("loss_trace.txt"), trace.as_bytes())?;

    let mut replay = cfg.clone();
    replay.evaluate.deformations = field_paths;
    replay.run.output_dir = out.join("evaluate");
    write_atomic(&out.join("evaluate.toml"), replay.to_toml().as_bytes())?;

    let report = Report {
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        ..report
    };
    report.write(out)?;
    if !quiet {
        eprint!("{}", report.to_text());
    }
    Ok(report)
}

fn mean_volume(vols: &[Volume]) -> Volume {
    let n = vols.len() as f64;
    let mut acc = vec![0.0; vols[0].len()];
    for v in vols {
        acc.iter_mut().zip(v.data()).for_each(|(a, x)| *a += x / n);
    }
    vols[0].with_data(acc)
}

/// Mean of the warped group minus its first timepoint.
fn subtraction(warped: &[Volume]) -> Volume {
    let mean = mean_volume(warped);
    let data = mean.data().iter().zip(warped[0].data()).map(|(m, f)| m - f).collect();
    warped[0].with_data(data)
}

/// Generates a synthetic group plus a ready-to-run `register.toml`.
pub fn synth(opts: &RunOptions) -> Result<PathBuf> {
    let cfg = load_config(opts, Purpose::Synth)?;
    let spec = cfg.synth.to_spec()?;
    let group = synth_group(&spec)?;
    let out = &cfg.run.output_dir;
    create_dir(out)?;

    let mut register_cfg = cfg.clone();
    register_cfg.input.volumes.clear();
    register_cfg.input.landmarks.clear();
    register_cfg.evaluate.deformations.clear();
    let mut truth_cfg = cfg.clone();
    truth_cfg.evaluate.deformations.clear();
    for (k, vol) in group.volumes.iter().enumerate() {
        let name = format!("timepoint_{k}.nii");
        write_volume(vol, &out.join(&name))?;
        register_cfg.input.volumes.push(PathBuf::from(name));
        let name = format!("landmarks_{k}.txt");
        write_landmarks(&out.join(&name), &group.landmarks.points[k])?;
        register_cfg.input.landmarks.push(PathBuf::from(name));
        write_field(&group.velocities[k], &out.join(format!("true_velocity_{k}.nii")), spec.spacing)?;
        write_field(&group.deformations[k], &out.join(format!("true_deformation_{k}.nii")), spec.spacing)?;
        // the deformation a perfect registration onto timepoint 0 would return
        let inverse = integrate_velocity(&group.velocities[k].scaled(-1.0), DEFAULT_SQUARING_STEPS);
        let name = format!("true_registration_{k}.nii");
        write_field(&inverse, &out.join(&name), spec.spacing)?;
        truth_cfg.evaluate.deformations.push(PathBuf::from(name));
    }
    if register_cfg.registration.mode == ModeName::AllToOne {
        register_cfg.registration.fixed_index = 0;
    }
    register_cfg.run.output_dir = PathBuf::from("registered");
    register_cfg.run.seed = cfg.run.seed;
    truth_cfg.input = register_cfg.input.clone();
    truth_cfg.run.output_dir = PathBuf::from("truth");
    write_atomic(&out.join("register.toml"), register_cfg.to_toml().as_bytes())?;
    write_atomic(&out.join("evaluate_truth.toml"), truth_cfg.to_toml().as_bytes())?;
    let gammas: String = group.gammas.iter().map(|g| format!("{g}\n")).collect();
    write_atomic(&out.join("gammas.txt"), gammas.as_bytes())?;
    if !opts.quiet {
        eprintln!("wrote {} timepoints to {}", group.volumes.len(), out.display());
    }
    Ok(out.clone())
}

/// Recomputes the metrics report from persisted deformation fields.
pub fn evaluate(opts: &RunOptions) -> Result<Report> {
    let started = Instant::now();
    let cfg = load_config(opts, Purpose::Evaluate)?;
    let volumes = load_volumes(&cfg)?;
    let landmarks = load_landmarks(&cfg, &volumes)?;
    let deformations: Vec<VectorField> =
        cfg.evaluate.deformations.iter().map(|p| read_field(p)).collect::<Result<_>>()?;
    let dims = volumes[0].dims();
    if let Some(d) = deformations.iter().find(|d| d.dims() != dims) {
        return Err(Error::DimensionMismatch {
            expected: dims,
            got: d.dims(),
        });
    }
    let report = build_report(&volumes, &deformations, landmarks.as_ref(), &cfg, started)?;
    let out = &cfg.run.output_dir;
    create_dir(out)?;
    report.write(out)?;
    if !opts.quiet {
        eprint!("{}", report.to_text());
    }
    Ok(report)
}
