//! Off-center L2 annealing through parameter space.
//!
//! The loss at strength `β` with reference point `θ_ref` is
//! `L(θ) = E(θ) + β‖θ − θ_ref‖²`. [`anneal`] raises `β` along a schedule and, at
//! each step, retrains from the previous step's converged parameters until the
//! patience rule fires. The resulting sequence of converged models is a
//! [`Trajectory`]; discontinuities in it are picked out by [`detect_transitions`].

mod detect;
mod io;

pub use detect::{detect_transitions, DetectorConfig, RadiusJump, Transition};
pub use io::{
    read_trajectory_csv, read_transitions_json, write_critical_beta_csv, write_trajectory_csv,
    write_transitions_json, TRAJECTORY_HEADER,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mnist::{self, Dataset, PerClassAccuracy};
use crate::nn::{self, Backprop, Batch, NetworkSpec, ParameterVector};
use crate::optim::{self, Objective, TrainConfig};
use crate::store::{Checkpoint, CheckpointId, CheckpointMeta, CheckpointRepo};

/// `L = E + β‖θ − θ_ref‖²`, with the two terms reported separately.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub loss: f64,
    pub error: f64,
    pub penalty: f64,
}

pub fn regularized_loss(
    spec: &NetworkSpec,
    params: &ParameterVector,
    batch: &Batch<'_>,
    theta_ref: &ParameterVector,
    beta: f64,
) -> Result<LossBreakdown> {
    if !(beta >= 0.0) {
        return Err(Error::Config(format!(
            "beta must be non-negative, got {beta}"
        )));
    }
    let r = nn::radial_distance(params, theta_ref)?;
    let error = nn::error(spec, params, batch)?;
    let penalty = beta * r * r;
    Ok(LossBreakdown {
        loss: error + penalty,
        error,
        penalty,
    })
}

/// [`Objective`] for minibatch training of `E + β‖θ − θ_ref‖²` on a dataset.
pub struct RegularizedObjective<'a> {
    spec: &'a NetworkSpec,
    data: &'a Dataset,
    theta_ref: &'a [f64],
    beta: f64,
    scratch: Backprop,
    inputs: Vec<f64>,
    labels: Vec<usize>,
}

impl<'a> RegularizedObjective<'a> {
    pub fn new(
        spec: &'a NetworkSpec,
        data: &'a Dataset,
        theta_ref: &'a ParameterVector,
        beta: f64,
    ) -> Result<Self> {
        theta_ref.check_spec(spec)?;
        nn::check_shapes(spec, theta_ref.as_slice(), &data.batch())?;
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::Config(format!(
                "beta must be non-negative, got {beta}"
            )));
        }
        Ok(Self {
            spec,
            data,
            theta_ref: theta_ref.as_slice(),
            beta,
            scratch: Backprop::new(spec),
            inputs: Vec::new(),
            labels: Vec::new(),
        })
    }

    fn penalty(&self, params: &[f64]) -> f64 {
        let r = nn::distance(params, self.theta_ref);
        self.beta * r * r
    }
}

impl Objective for RegularizedObjective<'_> {
    fn dim(&self) -> usize {
        self.theta_ref.len()
    }

    fn num_samples(&self) -> usize {
        self.data.len()
    }

    fn batch_gradient(&mut self, params: &[f64], indices: &[usize], grad: &mut [f64]) -> f64 {
        self.data
            .gather_into(indices, &mut self.inputs, &mut self.labels);
        let batch = Batch::new(&self.inputs, &self.labels, self.data.dim())
            .expect("dataset rows are valid");
        grad.fill(0.0);
        let e = nn::error_grad_accumulate(self.spec, params, &batch, Some(grad), &mut self.scratch);
        let two_beta = 2.0 * self.beta;
        if two_beta != 0.0 {
            for ((g, p), r) in grad.iter_mut().zip(params).zip(self.theta_ref) {
                *g += two_beta * (p - r);
            }
        }
        e + self.penalty(params)
    }

    fn full_loss(&mut self, params: &[f64]) -> f64 {
        let e = nn::error_grad_accumulate(
            self.spec,
            params,
            &self.data.batch(),
            None,
            &mut self.scratch,
        );
        e + self.penalty(params)
    }
}

/// How `β` grows from one step to the next.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Schedule {
    /// `β_k = β_0 · factor^k`; requires `β_0 > 0`.
    Geometric { factor: f64 },
    /// `β_k = β_0 + k · delta`.
    Linear { delta: f64 },
}

impl Schedule {
    pub fn beta_at(&self, beta0: f64, k: usize) -> f64 {
        match *self {
            Schedule::Geometric { factor } => beta0 * factor.powi(k as i32),
            Schedule::Linear { delta } => beta0 + k as f64 * delta,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnealConfig {
    pub theta_ref: ParameterVector,
    pub beta0: f64,
    pub beta_max: f64,
    pub schedule: Schedule,
    /// After the coarse pass, re-run each detected transition's bracket with
    /// `refine_steps` linear sub-steps.
    pub refine_near_transitions: bool,
    pub refine_steps: usize,
    /// Stop once `‖θ − θ_ref‖` drops below this distance.
    pub epsilon_dist: f64,
    pub train: TrainConfig,
    pub detector: DetectorConfig,
    pub seed: u64,
}

impl AnnealConfig {
    /// Geometric schedule with factor 1.15 from `1e-6` to `1`, stopping distance
    /// `1e-2·‖params0‖`.
    pub fn toward(theta_ref: ParameterVector, params0: &ParameterVector) -> Self {
        let epsilon_dist = default_epsilon(params0, &theta_ref);
        Self {
            theta_ref,
            beta0: 1e-6,
            beta_max: 1.0,
            schedule: Schedule::Geometric { factor: 1.15 },
            refine_near_transitions: false,
            refine_steps: 10,
            epsilon_dist,
            train: TrainConfig::default(),
            detector: DetectorConfig::default(),
            seed: 0,
        }
    }

    /// Fine linear schedule for connecting two minima: `β` from 0 in steps of
    /// `1e-7` up to `1e-5`, reference point at `target`.
    pub fn connect(target: ParameterVector, start: &ParameterVector) -> Self {
        Self {
            beta0: 0.0,
            beta_max: 1e-5,
            schedule: Schedule::Linear { delta: 1e-7 },
            ..Self::toward(target, start)
        }
    }

    pub fn validate(&self, spec: &NetworkSpec) -> Result<()> {
        self.theta_ref.check_spec(spec)?;
        self.train.validate()?;
        if !(self.beta0 >= 0.0) || !(self.beta0 <= self.beta_max) {
            return Err(Error::Config(format!(
                "need 0 <= beta0 <= beta_max, got {} and {}",
                self.beta0, self.beta_max
            )));
        }
        match self.schedule {
            Schedule::Geometric { factor } => {
                if !(factor > 1.0) {
                    return Err(Error::Config(format!(
                        "geometric factor must exceed 1, got {factor}"
                    )));
                }
                if self.beta0 <= 0.0 {
                    return Err(Error::Config("geometric schedule needs beta0 > 0".into()));
                }
            }
            Schedule::Linear { delta } => {
                if !(delta > 0.0) {
                    return Err(Error::Config(format!(
                        "linear delta must be positive, got {delta}"
                    )));
                }
            }
        }
        if !(self.epsilon_dist > 0.0) {
            return Err(Error::Config(format!(
                "epsilon_dist must be positive, got {}",
                self.epsilon_dist
            )));
        }
        Ok(())
    }

    /// The β values visited by the coarse pass, capped at `beta_max` (with a
    /// relative slack of 1e-12 so a linear grid can land on its endpoint).
    pub fn betas(&self) -> impl Iterator<Item = f64> + '_ {
        (0..)
            .map(|k| self.schedule.beta_at(self.beta0, k))
            .take_while(|&b| b <= self.beta_max * (1.0 + 1e-12))
    }
}

fn default_epsilon(params0: &ParameterVector, theta_ref: &ParameterVector) -> f64 {
    let scale = params0.norm();
    if scale > 0.0 {
        1e-2 * scale
    } else {
        1e-2 * theta_ref.norm().max(1.0)
    }
}

/// One converged point of a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub beta: f64,
    pub error_train: f64,
    pub error_test: f64,
    pub loss: f64,
    pub r0: f64,
    pub r_ref: f64,
    /// Per-class accuracy on the training split.
    pub accuracy: PerClassAccuracy,
    pub epochs_used: usize,
    pub checkpoint_id: CheckpointId,
    /// Training hit a non-finite loss; the record holds the best finite point.
    pub diverged: bool,
    /// Equal-loss strength estimated from `∇E` at this point, when `θ ≠ θ_ref`.
    pub critical_beta: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub records: Vec<TrajectoryRecord>,
    pub config: AnnealConfig,
}

impl Trajectory {
    pub fn final_record(&self) -> &TrajectoryRecord {
        self.records.last().expect("trajectories are never empty")
    }

    pub fn max_error_train(&self) -> f64 {
        self.records
            .iter()
            .map(|r| r.error_train)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// `β̃_c = −∇E·(θ − θ_ref) / (2‖θ − θ_ref‖²)`, the strength at which the two
/// competing minima have equal loss.
pub fn critical_beta(
    grad_e: &ParameterVector,
    params: &ParameterVector,
    theta_ref: &ParameterVector,
) -> Result<f64> {
    if grad_e.len() != params.len() || params.len() != theta_ref.len() {
        return Err(Error::Config(format!(
            "length mismatch: gradient {}, params {}, reference {}",
            grad_e.len(),
            params.len(),
            theta_ref.len()
        )));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for ((g, p), r) in grad_e
        .as_slice()
        .iter()
        .zip(params.as_slice())
        .zip(theta_ref.as_slice())
    {
        let d = p - r;
        num += g * d;
        den += d * d;
    }
    if den == 0.0 {
        return Err(Error::Numeric(
            "critical beta is undefined at the reference point".into(),
        ));
    }
    Ok(-num / (2.0 * den))
}

/// Everything needed to evaluate a converged point.
struct Evaluator<'a> {
    spec: &'a NetworkSpec,
    train: &'a Dataset,
    test: &'a Dataset,
    theta_ref: &'a ParameterVector,
}

impl Evaluator<'_> {
    fn record(
        &self,
        beta: f64,
        params: &ParameterVector,
        epochs_used: usize,
        diverged: bool,
    ) -> Result<TrajectoryRecord> {
        let (error_train, grad) = nn::error_and_gradient(self.spec, params, &self.train.batch())?;
        let error_test = nn::error(self.spec, params, &self.test.batch())?;
        let r_ref = nn::radial_distance(params, self.theta_ref)?;
        Ok(TrajectoryRecord {
            beta,
            error_train,
            error_test,
            loss: error_train + beta * r_ref * r_ref,
            r0: params.norm(),
            r_ref,
            accuracy: mnist::per_class_accuracy(self.spec, params, self.train)?,
            epochs_used,
            checkpoint_id: CheckpointId::of(self.spec, params),
            diverged,
            critical_beta: critical_beta(&grad, params, self.theta_ref).ok(),
        })
    }
}

fn step_seed(seed: u64, salt: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Progress callback invoked after each converged β step.
pub type Progress<'a> = &'a mut dyn FnMut(&TrajectoryRecord);

/// Runs the annealing path from `params0` toward `config.theta_ref`.
///
/// For each β of the schedule the model is trained to convergence on the
/// regularized loss, starting from the previous step's parameters. The pass ends
/// once `r_ref < epsilon_dist` or the schedule exceeds `beta_max`. Every record's
/// parameters are saved in `repo`.
pub fn anneal(
    spec: &NetworkSpec,
    params0: &ParameterVector,
    train: &Dataset,
    test: &Dataset,
    config: &AnnealConfig,
    repo: &mut dyn CheckpointRepo,
    mut progress: Option<Progress<'_>>,
) -> Result<Trajectory> {
    config.validate(spec)?;
    params0.check_spec(spec)?;
    let eval = Evaluator {
        spec,
        train,
        test,
        theta_ref: &config.theta_ref,
    };

    let mut records = Vec::new();
    let mut current = params0.clone();
    let mut parent = CheckpointId::of(spec, params0);

    if nn::radial_distance(&current, &config.theta_ref)? < config.epsilon_dist {
        let record = eval.record(config.beta0, &current, 0, false)?;
        save(repo, spec, &current, config, record.beta, None)?;
        records.push(record);
        return Ok(Trajectory {
            records,
            config: config.clone(),
        });
    }

    for (k, beta) in config.betas().enumerate() {
        let (params, record) = converge_at(
            spec,
            &eval,
            &current,
            beta,
            config,
            step_seed(config.seed, k as u64),
        )?;
        save(repo, spec, &params, config, beta, Some(parent.clone()))?;
        parent = record.checkpoint_id.clone();
        if let Some(cb) = progress.as_deref_mut() {
            cb(&record);
        }
        let done = record.r_ref < config.epsilon_dist;
        records.push(record);
        current = params;
        if done {
            break;
        }
    }

    let mut trajectory = Trajectory {
        records,
        config: config.clone(),
    };
    if config.refine_near_transitions {
        refine(spec, &eval, &mut trajectory, repo, progress)?;
    }
    Ok(trajectory)
}

fn converge_at(
    spec: &NetworkSpec,
    eval: &Evaluator<'_>,
    start: &ParameterVector,
    beta: f64,
    config: &AnnealConfig,
    seed: u64,
) -> Result<(ParameterVector, TrajectoryRecord)> {
    let mut objective = RegularizedObjective::new(spec, eval.train, &config.theta_ref, beta)?;
    let outcome = optim::train_to_convergence(&mut objective, start, &config.train, seed)?;
    let record = eval.record(beta, &outcome.params, outcome.epochs, outcome.diverged)?;
    Ok((outcome.params, record))
}

fn save(
    repo: &mut dyn CheckpointRepo,
    spec: &NetworkSpec,
    params: &ParameterVector,
    config: &AnnealConfig,
    beta: f64,
    parent: Option<CheckpointId>,
) -> Result<CheckpointId> {
    let meta = CheckpointMeta::new(beta, config.seed, config.train.adam.lr, parent);
    repo.save(&Checkpoint::new(spec.clone(), params.clone(), meta)?)
}

/// Inserts `refine_steps` linear sub-steps between the endpoints of every detected
/// transition, warm-started from the checkpoint before the jump.
fn refine(
    spec: &NetworkSpec,
    eval: &Evaluator<'_>,
    trajectory: &mut Trajectory,
    repo: &mut dyn CheckpointRepo,
    mut progress: Option<Progress<'_>>,
) -> Result<()> {
    let config = trajectory.config.clone();
    let transitions = detect_transitions(&trajectory.records, &config.detector);
    let steps = config.refine_steps;
    let mut extra = Vec::new();
    for (t_idx, t) in transitions.iter().enumerate() {
        let before = &trajectory.records[t.index_before];
        let mut current = repo.load(&before.checkpoint_id)?.into_params();
        let mut parent = before.checkpoint_id.clone();
        for j in 1..=steps {
            let beta =
                t.beta_before + (t.beta_after - t.beta_before) * j as f64 / (steps + 1) as f64;
            let seed = step_seed(config.seed, (1 << 32) + (t_idx * (steps + 1) + j) as u64);
            let (params, record) = converge_at(spec, eval, &current, beta, &config, seed)?;
            save(repo, spec, &params, &config, beta, Some(parent.clone()))?;
            parent = record.checkpoint_id.clone();
            if let Some(cb) = progress.as_deref_mut() {
                cb(&record);
            }
            extra.push(record);
            current = params;
        }
    }
    trajectory.records.extend(extra);
    trajectory
        .records
        .sort_by(|a, b| a.beta.partial_cmp(&b.beta).expect("betas are finite"));
    trajectory.records.dedup_by(|a, b| a.beta == b.beta);
    Ok(())
}

/// Anneals from `start` toward `target` on a fine schedule, tracing whether the two
/// minima are joined by a low-error path.
#[allow(clippy::too_many_arguments)]
pub fn connect(
    spec: &NetworkSpec,
    start: &ParameterVector,
    target: &ParameterVector,
    train: &Dataset,
    test: &Dataset,
    fine_config: &AnnealConfig,
    repo: &mut dyn CheckpointRepo,
    progress: Option<Progress<'_>>,
) -> Result<Trajectory> {
    if &fine_config.theta_ref != target {
        return Err(Error::Config(
            "connect needs theta_ref set to the target minimum".into(),
        ));
    }
    anneal(spec, start, train, test, fine_config, repo, progress)
}

#[cfg(test)]
mod tests;
