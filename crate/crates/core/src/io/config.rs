//! Run configuration files.
//!
//! A config is a sectioned TOML file. Every key has a default, relative paths
//! are resolved against the directory holding the config, and referenced
//! input files must exist when the file is parsed.
//!
//! ```toml
//! [input]
//! volumes = ["t0.nii", "t1.nii", "t2.nii"]
//! landmarks = ["t0.txt", "t1.txt", "t2.txt"]   # optional
//!
//! [registration]
//! mode = "all_to_one"        # or "all_moving"
//! fixed_index = 0
//!
//! [run]
//! seed = 0
//! output_dir = "out"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{BaseVolume, SyntheticSpec};
use crate::prior::PriorSpec;
use crate::similarity::{ParzenConfig, DEFAULT_KERNEL_SIGMA};
use crate::varopt::{GroupProblem, KlReduction, Mode, OptimizerConfig};
use crate::volume::Volume;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputSection {
    /// One volume per timepoint, in timepoint order.
    pub volumes: Vec<PathBuf>,
    /// Optional landmark files, one per timepoint.
    pub landmarks: Vec<PathBuf>,
    /// Apply 1-99 percentile normalization on load.
    pub normalize: bool,
}

impl Default for InputSection {
    fn default() -> Self {
        InputSection {
            volumes: Vec::new(),
            landmarks: Vec::new(),
            normalize: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeName {
    AllToOne,
    AllMoving,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegistrationSection {
    pub mode: ModeName,
    pub fixed_index: usize,
    pub diffeomorphic: bool,
    pub squaring_steps: u32,
    pub grid_factor: usize,
    pub sample_stride: usize,
    pub kl_reduction: KlReduction,
    pub init_rho: f64,
    pub center_velocities: bool,
    /// Fall back to identity when registration lowers group NMI.
    pub identity_fallback: bool,
}

impl Default for RegistrationSection {
    fn default() -> Self {
        RegistrationSection {
            mode: ModeName::AllToOne,
            fixed_index: 0,
            diffeomorphic: true,
            squaring_steps: crate::field::DEFAULT_SQUARING_STEPS,
            grid_factor: 1,
            sample_stride: 1,
            kl_reduction: KlReduction::default(),
            init_rho: -3.0,
            center_velocities: false,
            identity_fallback: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorSection {
    pub lambda_u: f64,
    pub lambda_v: f64,
}

impl Default for PriorSection {
    fn default() -> Self {
        let p = PriorSpec::default();
        PriorSection {
            lambda_u: p.lambda_u,
            lambda_v: p.lambda_v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParzenSection {
    pub bins: usize,
    pub kernel_sigma: f64,
}

impl Default for ParzenSection {
    fn default() -> Self {
        ParzenSection {
            bins: ParzenConfig::default().bins,
            kernel_sigma: DEFAULT_KERNEL_SIGMA,
        }
    }
}

impl ParzenSection {
    pub fn to_config(&self) -> ParzenConfig {
        ParzenConfig {
            bins: self.bins,
            kernel_sigma: self.kernel_sigma,
            ..ParzenConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSection {
    pub iterations: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let o = OptimizerConfig::default();
        OptimizerSection {
            iterations: o.iterations,
            learning_rate: o.learning_rate,
            beta1: o.beta1,
            beta2: o.beta2,
            eps: o.eps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            seed: 0,
            output_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseName {
    Blobs,
    Checkerboard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub base: BaseName,
    /// Use this volume as the base instead of a procedural one.
    pub base_volume: Option<PathBuf>,
    pub blob_count: usize,
    pub checker_period: usize,
    pub timepoints: usize,
    pub smoothness: f64,
    pub amplitude: f64,
    pub gamma_min: f64,
    pub gamma_max: f64,
    pub landmarks: usize,
    pub seed: u64,
}

impl Default for SynthSection {
    fn default() -> Self {
        let s = SyntheticSpec::default();
        let (gamma_min, gamma_max) = s.gamma_range;
        let blob_count = match s.base {
            BaseVolume::Blobs { count } => count,
            _ => 20,
        };
        SynthSection {
            dims: s.dims,
            spacing: s.spacing,
            base: BaseName::Blobs,
            base_volume: None,
            blob_count,
            checker_period: 4,
            timepoints: s.timepoints,
            smoothness: s.smoothness,
            amplitude: s.amplitude,
            gamma_min,
            gamma_max,
            landmarks: s.landmarks,
            seed: s.seed,
        }
    }
}

impl SynthSection {
    pub fn to_spec(&self) -> Result<SyntheticSpec> {
        let base = match (&self.base_volume, self.base) {
            (Some(path), _) => BaseVolume::Provided(super::read_volume(path)?),
            (None, BaseName::Blobs) => BaseVolume::Blobs { count: self.blob_count },
            (None, BaseName::Checkerboard) => BaseVolume::Checkerboard {
                period: self.checker_period,
            },
        };
        Ok(SyntheticSpec {
            dims: self.dims,
            spacing: self.spacing,
            base,
            timepoints: self.timepoints,
            smoothness: self.smoothness,
            amplitude: self.amplitude,
            gamma_range: (self.gamma_min, self.gamma_max),
            landmarks: self.landmarks,
            seed: self.seed,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    /// One deformation field per timepoint.
    pub deformations: Vec<PathBuf>,
}

/// Which subcommand a config is checked for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Register,
    Synth,
    Evaluate,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: InputSection,
    pub registration: RegistrationSection,
    pub prior: PriorSection,
    pub parzen: ParzenSection,
    pub optimizer: OptimizerSection,
    pub run: RunSection,
    pub synth: SynthSection,
    pub evaluate: EvaluateSection,
}

fn config_err(path: &Path, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("{}: {msg}", path.display()))
}

impl RunConfig {
    /// Parses, resolves paths against the config's directory, and validates.
    pub fn load(path: &Path, purpose: Purpose) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let parent = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let base = std::fs::canonicalize(parent).map_err(|e| Error::io(parent, e))?;
        let cfg = RunConfig::parse(&text, &base).map_err(|e| match e {
            Error::Config(msg) => config_err(path, msg),
            other => other,
        })?;
        cfg.validate(purpose)?;
        Ok(cfg)
    }

    /// Parses TOML text; relative paths are taken relative to `base`.
    pub fn parse(text: &str, base: &Path) -> Result<RunConfig> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        cfg.input.volumes.iter_mut().for_each(fix);
        cfg.input.landmarks.iter_mut().for_each(fix);
        cfg.evaluate.deformations.iter_mut().for_each(fix);
        if let Some(p) = cfg.synth.base_volume.as_mut() {
            fix(p);
        }
        fix(&mut cfg.run.output_dir);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    pub fn validate(&self, purpose: Purpose) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let must_exist = |paths: &[PathBuf]| -> Result<()> {
            match paths.iter().find(|p| !p.is_file()) {
                Some(p) => Err(Error::io(p, std::io::Error::new(std::io::ErrorKind::NotFound, "input file does not exist"))),
                None => Ok(()),
            }
        };
        if purpose == Purpose::Synth {
            let s = &self.synth;
            if s.timepoints < 2 {
                return bad(format!("synth.timepoints must be at least 2, got {}", s.timepoints));
            }
            if s.dims.iter().any(|&n| n == 0) {
                return bad("synth.dims must be positive".into());
            }
            if let Some(p) = &s.base_volume {
                must_exist(std::slice::from_ref(p))?;
            }
            return Ok(());
        }
        let k = self.input.volumes.len();
        if k < 2 {
            return bad(format!("input.volumes needs at least 2 entries, got {k}"));
        }
        must_exist(&self.input.volumes)?;
        if !self.input.landmarks.is_empty() {
            if self.input.landmarks.len() != k {
                return bad(format!(
                    "input.landmarks has {} entries for {k} volumes",
                    self.input.landmarks.len()
                ));
            }
            must_exist(&self.input.landmarks)?;
        }
        if purpose == Purpose::Evaluate {
            if self.evaluate.deformations.len() != k {
                return bad(format!(
                    "evaluate.deformations has {} entries for {k} volumes",
                    self.evaluate.deformations.len()
                ));
            }
            must_exist(&self.evaluate.deformations)?;
        }
        if self.registration.mode == ModeName::AllToOne && self.registration.fixed_index >= k {
            return bad(format!(
                "registration.fixed_index {} out of range for {k} volumes",
                self.registration.fixed_index
            ));
        }
        if self.optimizer.iterations == 0 {
            return bad("optimizer.iterations must be positive".into());
        }
        self.parzen.to_config().validate().map_err(|e| Error::Config(e.to_string()))?;
        self.prior_spec().validate().map_err(|e| Error::Config(e.to_string()))
    }

    pub fn mode(&self) -> Mode {
        match self.registration.mode {
            ModeName::AllToOne => Mode::AllToOne {
                fixed: self.registration.fixed_index,
            },
            ModeName::AllMoving => Mode::AllMoving,
        }
    }

    pub fn prior_spec(&self) -> PriorSpec {
        PriorSpec {
            lambda_u: self.prior.lambda_u,
            lambda_v: self.prior.lambda_v,
        }
    }

    /// Builds the registration problem over already loaded volumes.
    pub fn problem(&self, volumes: Vec<Volume>) -> GroupProblem {
        let r = &self.registration;
        let o = &self.optimizer;
        let mut p = GroupProblem::new(volumes, self.mode());
        p.diffeomorphic = r.diffeomorphic;
        p.steps = r.squaring_steps;
        p.prior = self.prior_spec();
        p.parzen = self.parzen.to_config();
        p.optimizer = OptimizerConfig {
            iterations: o.iterations,
            learning_rate: o.learning_rate,
            beta1: o.beta1,
            beta2: o.beta2,
            eps: o.eps,
        };
        p.seed = self.run.seed;
        p.kl_reduction = r.kl_reduction;
        p.grid_factor = r.grid_factor;
        p.sample_stride = r.sample_stride;
        p.center_velocities = r.center_velocities;
        p.init_rho = r.init_rho;
        p.identity_fallback = r.identity_fallback;
        p
    }
}
