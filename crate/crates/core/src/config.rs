//! `key = value` experiment configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are rejected.
//!
//! ```
//! use landscape::config::ExperimentConfig;
//!
//! let cfg = ExperimentConfig::parse("lr = 0.015\nseed = 3\ntheta_ref = origin\n").unwrap();
//! assert_eq!(cfg.lr, 0.015);
//! assert!(ExperimentConfig::parse("learning_rate = 0.1").is_err());
//! ```

use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::hessian::HvpMode;
use crate::nn::NetworkSpec;
use crate::store::CheckpointId;

/// Where the off-center penalty is anchored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ThetaRef {
    Origin,
    Checkpoint(CheckpointId),
    Midpoint(CheckpointId, CheckpointId),
}

impl FromStr for ThetaRef {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "origin" {
            return Ok(ThetaRef::Origin);
        }
        if let Some(id) = s.strip_prefix("checkpoint:") {
            return Ok(ThetaRef::Checkpoint(CheckpointId::parse(id.trim())?));
        }
        if let Some(pair) = s.strip_prefix("midpoint:") {
            let (a, b) = pair
                .split_once(',')
                .ok_or_else(|| Error::Config(format!("midpoint needs two ids, got `{pair}`")))?;
            return Ok(ThetaRef::Midpoint(
                CheckpointId::parse(a.trim())?,
                CheckpointId::parse(b.trim())?,
            ));
        }
        Err(Error::Config(format!(
            "theta_ref must be origin, checkpoint:<id> or midpoint:<id>,<id>, got `{s}`"
        )))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    Geometric,
    Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data_dir: PathBuf,
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    pub architecture: NetworkSpec,
    pub lr: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub min_improvement: f64,
    pub max_epochs: usize,
    pub seed: u64,
    /// Stratified training subset size; `None` uses every sample.
    pub subset: Option<usize>,
    pub schedule: Option<ScheduleKind>,
    pub beta0: Option<f64>,
    pub beta_max: Option<f64>,
    pub factor: Option<f64>,
    pub delta: Option<f64>,
    pub refine: bool,
    pub refine_steps: usize,
    pub epsilon_dist: Option<f64>,
    pub theta_ref: ThetaRef,
    pub start: Option<CheckpointId>,
    pub target: Option<CheckpointId>,
    pub trajectory: Option<PathBuf>,
    pub transitions: Option<PathBuf>,
    pub transition: usize,
    pub out_dir: PathBuf,
    pub store: Option<PathBuf>,
    pub error_jump_min: f64,
    pub r_jump_rel: Option<f64>,
    pub r_jump_abs: Option<f64>,
    pub class_change_min: f64,
    pub hessian_k: usize,
    pub hessian_max_iters: usize,
    pub hessian_subset: usize,
    pub hessian_tol: f64,
    pub hessian_mode: HvpMode,
    pub fd_step: f64,
    pub hessian_points: usize,
    pub toy_landscape: String,
    pub toy_beta_step: f64,
    pub toy_beta_max: f64,
    pub toy_grid: usize,
    pub toy_samples: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("data/mnist"),
            train_images: None,
            train_labels: None,
            test_images: None,
            test_labels: None,
            architecture: NetworkSpec::mnist(),
            lr: 0.0015,
            batch_size: 64,
            patience: 5,
            min_improvement: 1e-6,
            max_epochs: 500,
            seed: 1,
            subset: None,
            schedule: None,
            beta0: None,
            beta_max: None,
            factor: None,
            delta: None,
            refine: false,
            refine_steps: 10,
            epsilon_dist: None,
            theta_ref: ThetaRef::Origin,
            start: None,
            target: None,
            trajectory: None,
            transitions: None,
            transition: 0,
            out_dir: PathBuf::from("runs"),
            store: None,
            error_jump_min: 0.05,
            r_jump_rel: None,
            r_jump_abs: None,
            class_change_min: 0.2,
            hessian_k: 50,
            hessian_max_iters: 150,
            hessian_subset: 10_000,
            hessian_tol: 1e-6,
            hessian_mode: HvpMode::Exact,
            fd_step: 1e-5,
            hessian_points: 6,
            toy_landscape: "gaussian-well".into(),
            toy_beta_step: 0.005,
            toy_beta_max: 0.6,
            toy_grid: 100_000,
            toy_samples: 601,
        }
    }
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key}: cannot parse `{value}`: {e}")))
}

fn boolean(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!(
            "{key}: expected true or false, got `{value}`"
        ))),
    }
}

fn architecture(value: &str) -> Result<NetworkSpec> {
    let sizes = value
        .split('-')
        .map(|s| num::<usize>("architecture", s.trim()))
        .collect::<Result<Vec<_>>>()?;
    NetworkSpec::new(sizes)
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "line {}: expected key = value, got `{line}`",
                    n + 1
                ))
            })?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let path = || Some(PathBuf::from(value));
        let id = || CheckpointId::parse(value).map(Some);
        match key {
            "data_dir" => self.data_dir = PathBuf::from(value),
            "train_images" => self.train_images = path(),
            "train_labels" => self.train_labels = path(),
            "test_images" => self.test_images = path(),
            "test_labels" => self.test_labels = path(),
            "architecture" => self.architecture = architecture(value)?,
            "lr" => self.lr = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "patience" => self.patience = num(key, value)?,
            "min_improvement" => self.min_improvement = num(key, value)?,
            "max_epochs" => self.max_epochs = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "subset" => {
                let n: usize = num(key, value)?;
                self.subset = (n > 0).then_some(n);
            }
            "schedule" => {
                self.schedule = Some(match value {
                    "geometric" => ScheduleKind::Geometric,
                    "linear" => ScheduleKind::Linear,
                    _ => {
                        return Err(Error::Config(format!(
                            "schedule must be geometric or linear, got `{value}`"
                        )))
                    }
                })
            }
            "beta0" => self.beta0 = Some(num(key, value)?),
            "beta_max" => self.beta_max = Some(num(key, value)?),
            "factor" => self.factor = Some(num(key, value)?),
            "delta" => self.delta = Some(num(key, value)?),
            "refine" => self.refine = boolean(key, value)?,
            "refine_steps" => self.refine_steps = num(key, value)?,
            "epsilon_dist" => self.epsilon_dist = Some(num(key, value)?),
            "theta_ref" => self.theta_ref = value.parse()?,
            "start" => self.start = id()?,
            "target" => self.target = id()?,
            "trajectory" => self.trajectory = path(),
            "transitions" => self.transitions = path(),
            "transition" => self.transition = num(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            "store" => self.store = path(),
            "error_jump_min" => self.error_jump_min = num(key, value)?,
            "r_jump_rel" => self.r_jump_rel = Some(num(key, value)?),
            "r_jump_abs" => self.r_jump_abs = Some(num(key, value)?),
            "class_change_min" => self.class_change_min = num(key, value)?,
            "hessian_k" => self.hessian_k = num(key, value)?,
            "hessian_max_iters" => self.hessian_max_iters = num(key, value)?,
            "hessian_subset" => self.hessian_subset = num(key, value)?,
            "hessian_tol" => self.hessian_tol = num(key, value)?,
            "hessian_mode" => {
                self.hessian_mode = match value {
                    "exact" => HvpMode::Exact,
                    "finite_difference" => HvpMode::FiniteDifference,
                    _ => {
                        return Err(Error::Config(format!(
                            "hessian_mode must be exact or finite_difference, got `{value}`"
                        )))
                    }
                }
            }
            "fd_step" => self.fd_step = num(key, value)?,
            "hessian_points" => self.hessian_points = num(key, value)?,
            "toy_landscape" => self.toy_landscape = value.to_string(),
            "toy_beta_step" => self.toy_beta_step = num(key, value)?,
            "toy_beta_max" => self.toy_beta_max = num(key, value)?,
            "toy_grid" => self.toy_grid = num(key, value)?,
            "toy_samples" => self.toy_samples = num(key, value)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }
}
