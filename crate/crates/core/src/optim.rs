//! Adam and the patience-based train-to-convergence loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParameterVector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.0015,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam decay rates must lie in [0, 1)".into()));
        }
        if self.eps <= 0.0 {
            return Err(Error::Config("Adam epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// Bias-corrected Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    step_count: u64,
    config: AdamConfig,
}

impl AdamState {
    pub fn new(len: usize, config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            step_count: 0,
            config,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    /// Applies one update in place. A non-finite gradient leaves both the state and
    /// `params` untouched.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != self.first_moment.len() || grad.len() != params.len() {
            return Err(Error::Config(format!(
                "Adam state has {} entries, params {}, gradient {}",
                self.first_moment.len(),
                params.len(),
                grad.len()
            )));
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!("gradient entry {i} is {}", grad[i])));
        }
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        self.step_count += 1;
        let t = self.step_count as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// Value-returning form of [`AdamState::step`].
pub fn adam_step(
    state: &AdamState,
    params: &ParameterVector,
    grad: &ParameterVector,
) -> Result<(ParameterVector, AdamState)> {
    let mut next = state.clone();
    let mut values = params.as_slice().to_vec();
    next.step(&mut values, grad.as_slice())?;
    Ok((ParameterVector::new(values)?, next))
}

/// When to stop training at a fixed objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergencePolicy {
    pub patience_epochs: usize,
    pub min_improvement: f64,
    pub max_epochs: usize,
}

impl Default for ConvergencePolicy {
    fn default() -> Self {
        Self {
            patience_epochs: 5,
            min_improvement: 1e-6,
            max_epochs: 500,
        }
    }
}

impl ConvergencePolicy {
    pub fn validate(&self) -> Result<()> {
        if self.patience_epochs == 0 || self.max_epochs == 0 {
            return Err(Error::Config(
                "patience and max_epochs must be positive".into(),
            ));
        }
        if self.patience_epochs > self.max_epochs {
            return Err(Error::Config(format!(
                "patience {} exceeds max_epochs {}",
                self.patience_epochs, self.max_epochs
            )));
        }
        if !(self.min_improvement >= 0.0) {
            return Err(Error::Config("min_improvement must be non-negative".into()));
        }
        Ok(())
    }
}

/// A differentiable objective over an indexed dataset.
pub trait Objective {
    fn dim(&self) -> usize;

    fn num_samples(&self) -> usize;

    /// Objective over the samples at `indices`; overwrites `grad` with its gradient.
    fn batch_gradient(&mut self, params: &[f64], indices: &[usize], grad: &mut [f64]) -> f64;

    /// Objective over every sample; this is the quantity the patience rule watches.
    fn full_loss(&mut self, params: &[f64]) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub policy: ConvergencePolicy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            batch_size: 64,
            policy: ConvergencePolicy::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        self.policy.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best parameters seen, including the starting point.
    pub params: ParameterVector,
    pub loss: f64,
    pub initial_loss: f64,
    pub epochs: usize,
    /// The loss or an update went non-finite; training stopped early.
    pub diverged: bool,
}

/// Sample order for one epoch, a pure function of `(seed, epoch)`.
pub fn epoch_order(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Minibatch Adam from `params0` until the full-data loss fails to improve by more
/// than `min_improvement` for `patience_epochs` consecutive epochs, or `max_epochs`
/// is reached. The first epoch always sets the patience baseline.
pub fn train_to_convergence<O: Objective + ?Sized>(
    objective: &mut O,
    params0: &ParameterVector,
    config: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    config.validate()?;
    if objective.num_samples() == 0 {
        return Err(Error::Config("training data is empty".into()));
    }
    if params0.len() != objective.dim() {
        return Err(Error::Config(format!(
            "start point has {} parameters, objective expects {}",
            params0.len(),
            objective.dim()
        )));
    }
    let initial_loss = objective.full_loss(params0.as_slice());
    if !initial_loss.is_finite() {
        return Err(Error::Numeric(format!("initial loss is {initial_loss}")));
    }

    let n = objective.num_samples();
    let mut adam = AdamState::new(params0.len(), config.adam)?;
    let mut params = params0.as_slice().to_vec();
    let mut grad = vec![0.0; params.len()];

    let mut best_params = params.clone();
    let mut best_loss = initial_loss;
    let mut patience_ref = f64::INFINITY;
    let mut stale = 0;
    let mut epochs = 0;
    let mut diverged = false;

    'epochs: while epochs < config.policy.max_epochs {
        let order = epoch_order(n, seed, epochs as u64);
        epochs += 1;
        for indices in order.chunks(config.batch_size) {
            objective.batch_gradient(&params, indices, &mut grad);
            if adam.step(&mut params, &grad).is_err() {
                diverged = true;
                break 'epochs;
            }
        }
        let loss = objective.full_loss(&params);
        if !loss.is_finite() || params.iter().any(|p| !p.is_finite()) {
            diverged = true;
            break;
        }
        if loss < best_loss {
            best_loss = loss;
            best_params.copy_from_slice(&params);
        }
        if epochs == 1 || loss < patience_ref - config.policy.min_improvement {
            patience_ref = patience_ref.min(loss);
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.policy.patience_epochs {
                break;
            }
        }
    }

    Ok(TrainOutcome {
        params: ParameterVector::new(best_params)?,
        loss: best_loss,
        initial_loss,
        epochs,
        diverged,
    })
}
