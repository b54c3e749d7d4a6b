//! A closed-form 1D landscape for the annealing jump mechanism.
//!
//! With `L_β(θ) = E(θ) + β(θ − θ_ref)²`, raising `β` drags the global minimizer of a
//! single well toward `θ_ref` until a second, low-norm minimum wins and the
//! minimizer jumps across the concave flank of the well. [`toy_global_minimizer`]
//! is a dense grid scan with golden-section refinement and serves as the exact
//! oracle; [`toy_pathfinder`] is the warm-started gradient descent counterpart.

use std::io::Write;

use crate::error::{Error, Result};
use crate::report::{g17, shortest};

/// A twice differentiable error function on a closed interval.
pub trait Landscape {
    fn name(&self) -> &str;
    fn domain(&self) -> (f64, f64);
    /// `(E, E', E'')` at `theta`; callers guarantee `theta` is in the domain.
    fn eval(&self, theta: f64) -> (f64, f64, f64);
    /// The interval of negative curvature that lies between `θ_ref` and the well.
    fn concave_segment(&self) -> (f64, f64);
}

/// `E(θ) = 1 − exp(−(θ − c)²)` on `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianWell {
    pub centre: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Default for GaussianWell {
    fn default() -> Self {
        Self {
            centre: 2.0,
            lo: -1.0,
            hi: 5.0,
        }
    }
}

impl Landscape for GaussianWell {
    fn name(&self) -> &str {
        "gaussian-well"
    }

    fn domain(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    fn eval(&self, theta: f64) -> (f64, f64, f64) {
        let x = theta - self.centre;
        let g = (-x * x).exp();
        (1.0 - g, 2.0 * x * g, (2.0 - 4.0 * x * x) * g)
    }

    fn concave_segment(&self) -> (f64, f64) {
        (self.lo, self.centre - std::f64::consts::FRAC_1_SQRT_2)
    }
}

/// Looks up a registered landscape by name.
pub fn landscape_by_name(name: &str) -> Result<Box<dyn Landscape>> {
    match name {
        "gaussian-well" => Ok(Box::new(GaussianWell::default())),
        other => Err(Error::Config(format!(
            "unknown toy landscape `{other}` (known: gaussian-well)"
        ))),
    }
}

pub fn toy_error(landscape: &dyn Landscape, theta: f64) -> Result<(f64, f64, f64)> {
    let (lo, hi) = landscape.domain();
    if !(theta >= lo && theta <= hi) {
        return Err(Error::Config(format!(
            "theta {theta} outside the domain [{lo}, {hi}]"
        )));
    }
    Ok(landscape.eval(theta))
}

fn loss(landscape: &dyn Landscape, theta: f64, beta: f64, theta_ref: f64) -> f64 {
    landscape.eval(theta).0 + beta * (theta - theta_ref).powi(2)
}

/// A minimizer of `L_β` with its loss and error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyMinimum {
    pub theta: f64,
    pub loss: f64,
    pub error: f64,
}

impl ToyMinimum {
    fn at(landscape: &dyn Landscape, theta: f64, beta: f64, theta_ref: f64) -> Self {
        let error = landscape.eval(theta).0;
        Self {
            theta,
            loss: error + beta * (theta - theta_ref).powi(2),
            error,
        }
    }
}

/// Grid resolution and refinement tolerance of the oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridConfig {
    pub grid_n: usize,
    pub refine_tol: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            grid_n: 100_000,
            refine_tol: 1e-10,
        }
    }
}

impl GridConfig {
    fn validate(&self) -> Result<()> {
        if self.grid_n < 1000 {
            return Err(Error::Config(format!(
                "grid_n must be at least 1000, got {}",
                self.grid_n
            )));
        }
        if !(self.refine_tol > 0.0) {
            return Err(Error::Config(format!(
                "refine_tol must be positive, got {}",
                self.refine_tol
            )));
        }
        Ok(())
    }
}

fn grid(landscape: &dyn Landscape, n: usize) -> impl Iterator<Item = f64> {
    let (lo, hi) = landscape.domain();
    let h = (hi - lo) / (n - 1) as f64;
    (0..n).map(move |i| if i + 1 == n { hi } else { lo + i as f64 * h })
}

/// Minimizes `f` on `[a, b]` to an interval of width `tol`.
fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    (a + b) / 2.0
}

/// Refines grid point `i` of `points` within its neighbours.
fn refine_at(
    landscape: &dyn Landscape,
    points: &[f64],
    i: usize,
    beta: f64,
    theta_ref: f64,
    tol: f64,
) -> ToyMinimum {
    let a = points[i.saturating_sub(1)];
    let b = points[(i + 1).min(points.len() - 1)];
    let slope = |t: f64| landscape.eval(t).1 + 2.0 * beta * (t - theta_ref);
    if slope(a) < 0.0 && slope(b) > 0.0 {
        let (mut lo, mut hi) = (a, b);
        while hi - lo > tol {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if slope(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        return ToyMinimum::at(landscape, 0.5 * (lo + hi), beta, theta_ref);
    }
    let theta = golden_section(|t| loss(landscape, t, beta, theta_ref), a, b, tol);
    let refined = ToyMinimum::at(landscape, theta, beta, theta_ref);
    let on_grid = ToyMinimum::at(landscape, points[i], beta, theta_ref);
    if on_grid.loss < refined.loss {
        on_grid
    } else {
        refined
    }
}

/// Global minimizer of `L_β` over the domain.
pub fn toy_global_minimizer(
    landscape: &dyn Landscape,
    beta: f64,
    theta_ref: f64,
    grid_cfg: &GridConfig,
) -> Result<ToyMinimum> {
    grid_cfg.validate()?;
    let points: Vec<f64> = grid(landscape, grid_cfg.grid_n).collect();
    let best = points
        .iter()
        .map(|&t| loss(landscape, t, beta, theta_ref))
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i)
        .expect("grid is non-empty");
    Ok(refine_at(
        landscape,
        &points,
        best,
        beta,
        theta_ref,
        grid_cfg.refine_tol,
    ))
}

/// Interior local minima of `L_β`, ordered by `θ`.
pub fn toy_local_minima(
    landscape: &dyn Landscape,
    beta: f64,
    theta_ref: f64,
    grid_cfg: &GridConfig,
) -> Result<Vec<ToyMinimum>> {
    grid_cfg.validate()?;
    let points: Vec<f64> = grid(landscape, grid_cfg.grid_n).collect();
    let values: Vec<f64> = points
        .iter()
        .map(|&t| loss(landscape, t, beta, theta_ref))
        .collect();
    Ok((1..points.len() - 1)
        .filter(|&i| values[i] <= values[i - 1] && values[i] < values[i + 1])
        .map(|i| refine_at(landscape, &points, i, beta, theta_ref, grid_cfg.refine_tol))
        .collect())
}

/// The strength at which the low-norm minimum and the well minimum have equal loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EqualLoss {
    pub beta_c: f64,
    /// Minimum on the `θ_ref` side.
    pub near: ToyMinimum,
    /// Minimum on the well side.
    pub far: ToyMinimum,
}

/// Bisects `[beta_lo, beta_hi]` for the equal-loss strength; the global minimizer
/// must sit on opposite sides of the bracket's pivot at the two ends.
pub fn toy_equal_loss_beta(
    landscape: &dyn Landscape,
    theta_ref: f64,
    beta_lo: f64,
    beta_hi: f64,
    grid_cfg: &GridConfig,
) -> Result<EqualLoss> {
    let far0 = toy_global_minimizer(landscape, beta_lo, theta_ref, grid_cfg)?.theta;
    let near0 = toy_global_minimizer(landscape, beta_hi, theta_ref, grid_cfg)?.theta;
    if (far0 - theta_ref).abs() <= (near0 - theta_ref).abs() {
        return Err(Error::Config(format!(
            "no jump toward theta_ref inside beta bracket [{beta_lo}, {beta_hi}]"
        )));
    }
    let pivot = 0.5 * (far0 + near0);
    let is_near = |t: f64| (t - pivot) * (near0 - pivot) > 0.0;
    let split = |beta: f64| -> Result<(Option<ToyMinimum>, Option<ToyMinimum>)> {
        let minima = toy_local_minima(landscape, beta, theta_ref, grid_cfg)?;
        let best = |near: bool| {
            minima
                .iter()
                .filter(|m| is_near(m.theta) == near)
                .min_by(|a, b| a.loss.total_cmp(&b.loss))
                .copied()
        };
        Ok((best(true), best(false)))
    };
    // Positive when the well minimum is still preferred.
    let gap = |beta: f64| -> Result<f64> {
        Ok(match split(beta)? {
            (Some(n), Some(f)) => n.loss - f.loss,
            (None, _) => f64::INFINITY,
            (_, None) => f64::NEG_INFINITY,
        })
    };
    let (mut lo, mut hi) = (beta_lo, beta_hi);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if gap(mid)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let beta_c = 0.5 * (lo + hi);
    match split(beta_c)? {
        (Some(near), Some(far)) => Ok(EqualLoss { beta_c, near, far }),
        _ => Err(Error::Numeric(format!(
            "only one minimum exists at beta {beta_c}"
        ))),
    }
}

/// Exact minimizers along a schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyAnnealResult {
    pub betas: Vec<f64>,
    pub minimizers: Vec<f64>,
    pub errors: Vec<f64>,
    pub losses: Vec<f64>,
    /// Index of the last step before the largest minimizer move.
    pub jump_index: usize,
    /// First `β` after the largest minimizer move.
    pub jump_beta: f64,
}

impl ToyAnnealResult {
    fn from_minima(betas: &[f64], minima: Vec<ToyMinimum>) -> Result<Self> {
        if betas.len() < 2 {
            return Err(Error::Config("toy anneal needs at least two betas".into()));
        }
        let minimizers: Vec<f64> = minima.iter().map(|m| m.theta).collect();
        let jump_index = (0..minimizers.len() - 1)
            .max_by(|&a, &b| {
                let da = (minimizers[a + 1] - minimizers[a]).abs();
                let db = (minimizers[b + 1] - minimizers[b]).abs();
                da.total_cmp(&db)
            })
            .expect("at least one step");
        Ok(Self {
            betas: betas.to_vec(),
            errors: minima.iter().map(|m| m.error).collect(),
            losses: minima.iter().map(|m| m.loss).collect(),
            minimizers,
            jump_index,
            jump_beta: betas[jump_index + 1],
        })
    }

    /// Steps whose minimizer move exceeds ten times both neighbouring moves.
    pub fn discontinuities(&self) -> Vec<usize> {
        let steps: Vec<f64> = self
            .minimizers
            .windows(2)
            .map(|w| (w[1] - w[0]).abs())
            .collect();
        (0..steps.len())
            .filter(|&i| {
                let prev = if i > 0 { steps[i - 1] } else { 0.0 };
                let next = steps.get(i + 1).copied().unwrap_or(0.0);
                steps[i] > 1e-6 && steps[i] > 10.0 * prev.max(next)
            })
            .collect()
    }
}

fn check_schedule(betas: &[f64]) -> Result<()> {
    if betas.iter().any(|b| !(*b >= 0.0) || !b.is_finite())
        || betas.windows(2).any(|w| !(w[0] < w[1]))
    {
        return Err(Error::Config(
            "toy schedule must be finite, non-negative and increasing".into(),
        ));
    }
    Ok(())
}

/// Global minimizer at each `β` of an increasing schedule.
pub fn toy_anneal(
    landscape: &dyn Landscape,
    betas: &[f64],
    theta_ref: f64,
    grid_cfg: &GridConfig,
) -> Result<ToyAnnealResult> {
    check_schedule(betas)?;
    let minima = betas
        .iter()
        .map(|&b| toy_global_minimizer(landscape, b, theta_ref, grid_cfg))
        .collect::<Result<Vec<_>>>()?;
    ToyAnnealResult::from_minima(betas, minima)
}

/// Gradient descent settings for [`toy_pathfinder`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DescentConfig {
    pub lr: f64,
    pub grad_tol: f64,
    pub max_steps: usize,
}

impl Default for DescentConfig {
    fn default() -> Self {
        Self {
            lr: 0.1,
            grad_tol: 1e-12,
            max_steps: 10_000_000,
        }
    }
}

/// Warm-started gradient descent on `L_β` along the schedule, starting at `theta0`.
pub fn toy_pathfinder(
    landscape: &dyn Landscape,
    betas: &[f64],
    theta_ref: f64,
    theta0: f64,
    descent: &DescentConfig,
) -> Result<ToyAnnealResult> {
    check_schedule(betas)?;
    toy_error(landscape, theta0)?;
    let (lo, hi) = landscape.domain();
    let mut theta = theta0;
    let mut minima = Vec::with_capacity(betas.len());
    for &beta in betas {
        let mut converged = false;
        for _ in 0..descent.max_steps {
            let g = landscape.eval(theta).1 + 2.0 * beta * (theta - theta_ref);
            if g.abs() < descent.grad_tol {
                converged = true;
                break;
            }
            theta = (theta - descent.lr * g).clamp(lo, hi);
        }
        if !converged {
            return Err(Error::Numeric(format!(
                "toy descent did not converge at beta {beta}"
            )));
        }
        minima.push(ToyMinimum::at(landscape, theta, beta, theta_ref));
    }
    ToyAnnealResult::from_minima(betas, minima)
}

/// The connected interval around `around` on which `E'' < −curvature`.
pub fn toy_concave_band(
    landscape: &dyn Landscape,
    around: f64,
    curvature: f64,
) -> Result<(f64, f64)> {
    let (lo, hi) = landscape.domain();
    let below = |t: f64| landscape.eval(t).2 < -curvature;
    if !below(toy_error(landscape, around).map(|_| around)?) {
        return Err(Error::Numeric(format!(
            "E'' is not below {} at theta {around}",
            -curvature
        )));
    }
    let edge = |mut inside: f64, mut outside: f64| {
        for _ in 0..200 {
            let mid = 0.5 * (inside + outside);
            if below(mid) {
                inside = mid;
            } else {
                outside = mid;
            }
        }
        inside
    };
    let left = if below(lo) { lo } else { edge(around, lo) };
    let right = if below(hi) { hi } else { edge(around, hi) };
    Ok((left, right))
}

/// Location of the loss maximum between two minimizers.
pub fn toy_loss_barrier(
    landscape: &dyn Landscape,
    beta: f64,
    theta_ref: f64,
    a: f64,
    b: f64,
    tol: f64,
) -> f64 {
    let (a, b) = if a < b { (a, b) } else { (b, a) };
    golden_section(|t| -loss(landscape, t, beta, theta_ref), a, b, tol)
}

/// `β̃_c = −E'(θ)(θ − θ_ref) / (2(θ − θ_ref)²)` for the toy model.
pub fn toy_critical_beta(landscape: &dyn Landscape, theta: f64, theta_ref: f64) -> Result<f64> {
    let (_, d1, _) = toy_error(landscape, theta)?;
    let d = theta - theta_ref;
    if d == 0.0 {
        return Err(Error::Numeric(
            "critical beta is undefined at the reference point".into(),
        ));
    }
    Ok(-d1 * d / (2.0 * d * d))
}

/// `beta, theta_star, error, loss` per schedule step.
pub fn write_toy_csv<W: Write>(out: W, result: &ToyAnnealResult) -> Result<()> {
    let csv_err = |e: csv::Error| Error::Format(format!("csv: {e}"));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["beta", "theta_star", "error", "loss"])
        .map_err(csv_err)?;
    for i in 0..result.betas.len() {
        w.write_record([
            g17(result.betas[i]),
            shortest(result.minimizers[i]),
            shortest(result.errors[i]),
            shortest(result.losses[i]),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Format(format!("csv: {e}")))?;
    Ok(())
}

/// `beta, theta, error, loss` sampled on `samples` evenly spaced points for each `β`.
pub fn write_mechanism_csv<W: Write>(
    out: W,
    landscape: &dyn Landscape,
    betas: &[f64],
    theta_ref: f64,
    samples: usize,
) -> Result<()> {
    if samples < 2 {
        return Err(Error::Config(
            "mechanism sampling needs at least two points".into(),
        ));
    }
    let csv_err = |e: csv::Error| Error::Format(format!("csv: {e}"));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["beta", "theta", "error", "loss"])
        .map_err(csv_err)?;
    for &beta in betas {
        for theta in grid(landscape, samples) {
            let e = landscape.eval(theta).0;
            w.write_record([
                g17(beta),
                shortest(theta),
                shortest(e),
                shortest(e + beta * (theta - theta_ref).powi(2)),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::Format(format!("csv: {e}")))?;
    Ok(())
}

/// Linear schedule `start, start + step, …` up to `stop` inclusive.
pub fn linear_schedule(start: f64, stop: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(stop >= start) {
        return Err(Error::Config(format!("bad schedule {start}:{step}:{stop}")));
    }
    let n = ((stop - start) / step * (1.0 + 1e-12)).floor() as usize;
    Ok((0..=n).map(|k| start + k as f64 * step).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn well() -> GaussianWell {
        GaussianWell::default()
    }

    fn schedule() -> Vec<f64> {
        linear_schedule(0.0, 0.6, 0.005).unwrap()
    }

    #[test]
    fn well_minimum() {
        let (e, d1, _) = toy_error(&well(), 2.0).unwrap();
        assert_eq!(e, 0.0);
        assert_eq!(d1, 0.0);
    }

    #[test]
    fn out_of_domain_is_an_error() {
        assert!(toy_error(&well(), -1.5).is_err());
        assert!(toy_error(&well(), 5.01).is_err());
        assert!(toy_error(&well(), f64::NAN).is_err());
    }

    #[test]
    fn concavity_outside_inflection_points() {
        let w = well();
        for t in [-0.5, 0.0, 1.0, 1.29, 2.71, 3.5] {
            assert!(w.eval(t).2 < 0.0, "{t}");
        }
        for t in [1.3, 2.0, 2.7] {
            assert!(w.eval(t).2 > 0.0, "{t}");
        }
        let (lo, hi) = w.concave_segment();
        assert!(lo < hi);
        assert!(w.eval(hi - 1e-9).2 < 0.0 && w.eval(hi + 1e-9).2 > 0.0);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let w = well();
        let h = 1e-5;
        for i in 0..=50 {
            let t = -0.9 + i as f64 * 0.116;
            let (_, d1, d2) = w.eval(t);
            let fd1 = (w.eval(t + h).0 - w.eval(t - h).0) / (2.0 * h);
            let fd2 = (w.eval(t + h).1 - w.eval(t - h).1) / (2.0 * h);
            assert!((d1 - fd1).abs() < 1e-8, "{t}");
            assert!((d2 - fd2).abs() < 1e-8, "{t}");
        }
    }

    #[test]
    fn oracle_limits() {
        let cfg = GridConfig::default();
        let m = toy_global_minimizer(&well(), 0.0, 0.0, &cfg).unwrap();
        assert!((m.theta - 2.0).abs() <= 1e-9);
        let m = toy_global_minimizer(&well(), 1e6, 0.0, &cfg).unwrap();
        assert!(m.theta.abs() < 1e-6);
        assert!(
            toy_global_minimizer(&well(), 0.1, 0.0, &GridConfig { grid_n: 10, ..cfg }).is_err()
        );
    }

    #[test]
    fn loss_is_error_plus_penalty() {
        let r = toy_anneal(&well(), &schedule(), 0.0, &GridConfig::default()).unwrap();
        for i in 0..r.betas.len() {
            let t = r.minimizers[i];
            assert_eq!(r.losses[i], r.errors[i] + r.betas[i] * (t - 0.0).powi(2));
            let (lo, hi) = well().domain();
            assert!(t >= lo && t <= hi);
        }
    }

    #[test]
    fn equal_loss_minima_tie() {
        let cfg = GridConfig::default();
        let eq = toy_equal_loss_beta(&well(), 0.0, 0.2, 0.5, &cfg).unwrap();
        assert!((eq.near.loss - eq.far.loss).abs() < 1e-9);
        assert!((eq.beta_c - 0.3487).abs() < 1e-3, "{}", eq.beta_c);
        assert!(eq.near.theta < eq.far.theta);
    }

    #[test]
    fn exact_anneal_has_one_jump_across_the_barrier() {
        let cfg = GridConfig::default();
        let betas = schedule();
        let r = toy_anneal(&well(), &betas, 0.0, &cfg).unwrap();
        assert_eq!(r.discontinuities(), vec![r.jump_index]);
        let before = r.minimizers[r.jump_index];
        let after = r.minimizers[r.jump_index + 1];
        assert!(before > after + 0.5);

        // Loss continuous across the jump, error not.
        let dl = (r.losses[r.jump_index + 1] - r.losses[r.jump_index]).abs();
        let de = (r.errors[r.jump_index + 1] - r.errors[r.jump_index]).abs();
        assert!(dl < 0.01 && de > 0.1, "dl {dl} de {de}");

        let beta = r.jump_beta;
        let barrier = toy_loss_barrier(&well(), beta, 0.0, before, after, 1e-10);
        let band = toy_concave_band(&well(), barrier, 2.0 * beta).unwrap();
        assert!(before > band.1 && after < band.0, "{band:?}");
        let seg = well().concave_segment();
        assert!(band.0 >= seg.0 && band.1 <= seg.1);
        assert!(barrier > seg.0 && barrier < seg.1);
    }

    #[test]
    fn critical_beta_brackets() {
        let cfg = GridConfig::default();
        let betas = schedule();
        let step = betas[1] - betas[0];
        let exact = toy_anneal(&well(), &betas, 0.0, &cfg).unwrap();
        let warm = toy_pathfinder(&well(), &betas, 0.0, 2.0, &DescentConfig::default()).unwrap();
        let pre = exact.minimizers[exact.jump_index];
        let tilde = toy_critical_beta(&well(), pre, 0.0).unwrap();
        // At a minimizer of L_β the estimate reproduces β itself.
        assert_relative_eq!(tilde, exact.betas[exact.jump_index], max_relative = 1e-6);
        let eq = toy_equal_loss_beta(
            &well(),
            0.0,
            exact.betas[exact.jump_index],
            exact.jump_beta,
            &cfg,
        )
        .unwrap();
        assert!(tilde <= eq.beta_c + step);
        assert!(eq.beta_c <= warm.jump_beta + step);
        assert!(warm.jump_beta >= eq.beta_c);
        assert_eq!(warm.discontinuities().len(), 1);
    }

    #[test]
    fn warm_start_matches_oracle_away_from_hysteresis() {
        let cfg = GridConfig::default();
        let betas = schedule();
        let exact = toy_anneal(&well(), &betas, 0.0, &cfg).unwrap();
        let warm = toy_pathfinder(&well(), &betas, 0.0, 2.0, &DescentConfig::default()).unwrap();
        let i = exact.jump_index;
        assert!((warm.minimizers[i] - exact.minimizers[i]).abs() < 1e-4);
        let j = warm.jump_index + 1;
        assert!((warm.minimizers[j] - exact.minimizers[j]).abs() < 1e-4);
        assert!(
            warm.jump_beta > 0.36 && warm.jump_beta < 0.38,
            "{}",
            warm.jump_beta
        );
    }

    #[test]
    fn schedules_are_validated() {
        assert!(toy_anneal(&well(), &[0.2, 0.1], 0.0, &GridConfig::default()).is_err());
        assert_eq!(linear_schedule(0.0, 0.6, 0.005).unwrap().len(), 121);
        assert!(landscape_by_name("nope").is_err());
        assert!(landscape_by_name("gaussian-well").is_ok());
    }

    #[test]
    fn csv_outputs() {
        let r = toy_anneal(&well(), &[0.0, 0.5], 0.0, &GridConfig::default()).unwrap();
        let mut buf = Vec::new();
        write_toy_csv(&mut buf, &r).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("beta,theta_star,error,loss\n0,"));
        assert_eq!(text.lines().count(), 3);
        let mut buf = Vec::new();
        write_mechanism_csv(&mut buf, &well(), &[0.0, 0.1, 0.3, 0.4], 0.0, 11).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 45);
    }
}
