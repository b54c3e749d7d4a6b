use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{dot, norm};
use crate::store::CheckpointId;

const MAX_RESTARTS: usize = 3;
const BREAKDOWN: f64 = 1e-10;

/// A real symmetric linear map applied matrix-free.
pub trait SymmetricOperator {
    fn dim(&self) -> usize;
    fn apply(&mut self, v: &[f64], out: &mut [f64]) -> Result<()>;
}

impl<T: SymmetricOperator + ?Sized> SymmetricOperator for &mut T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn apply(&mut self, v: &[f64], out: &mut [f64]) -> Result<()> {
        (**self).apply(v, out)
    }
}

/// `−A`.
pub struct Negated<T>(pub T);

impl<T: SymmetricOperator> SymmetricOperator for Negated<T> {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn apply(&mut self, v: &[f64], out: &mut [f64]) -> Result<()> {
        self.0.apply(v, out)?;
        out.iter_mut().for_each(|x| *x = -*x);
        Ok(())
    }
}

/// `A + shift·I`.
pub struct Shifted<T> {
    inner: T,
    shift: f64,
}

impl<T: SymmetricOperator> Shifted<T> {
    pub fn new(inner: T, shift: f64) -> Self {
        Self { inner, shift }
    }
}

impl<T: SymmetricOperator> SymmetricOperator for Shifted<T> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn apply(&mut self, v: &[f64], out: &mut [f64]) -> Result<()> {
        self.inner.apply(v, out)?;
        for (o, x) in out.iter_mut().zip(v) {
            *o += self.shift * x;
        }
        Ok(())
    }
}

/// Extreme eigenvalue estimates at one point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub point_id: Option<CheckpointId>,
    /// Largest Ritz values, descending.
    pub ritz_values: Vec<f64>,
    /// `‖A y − θ y‖` for each Ritz pair.
    pub residual_norms: Vec<f64>,
    pub most_negative: f64,
    pub most_negative_residual: f64,
    pub data_subset_seed: Option<u64>,
    pub k: usize,
}

impl SpectrumReport {
    pub fn residual_max(&self) -> f64 {
        self.residual_norms
            .iter()
            .copied()
            .fold(self.most_negative_residual, f64::max)
    }
}

/// Top-`k` Ritz values of `op` by Lanczos with full reorthogonalization, plus the
/// smallest eigenvalue from a second run on `−op`.
///
/// Iteration stops once every one of the `k` residuals is at most `tol`, or after
/// `max_iters` steps; unconverged residuals are reported as they are.
pub fn lanczos_extreme<T: SymmetricOperator>(
    op: &mut T,
    k: usize,
    max_iters: usize,
    seed: u64,
    tol: f64,
) -> Result<SpectrumReport> {
    let dim = op.dim();
    if k == 0 || k > max_iters || max_iters > dim {
        return Err(Error::Config(format!(
            "lanczos needs 1 <= k <= max_iters <= dim, got k = {k}, max_iters = {max_iters}, dim = {dim}"
        )));
    }
    if !(tol >= 0.0) {
        return Err(Error::Config(format!(
            "tolerance must be non-negative, got {tol}"
        )));
    }
    let (ritz_values, residual_norms) = top_ritz(op, k, max_iters, seed, tol)?;
    let (neg, neg_res) = top_ritz(&mut Negated(&mut *op), 1, max_iters, seed, tol)?;
    Ok(SpectrumReport {
        point_id: None,
        ritz_values,
        residual_norms,
        most_negative: -neg[0],
        most_negative_residual: neg_res[0],
        data_subset_seed: None,
        k,
    })
}

fn top_ritz<T: SymmetricOperator>(
    op: &mut T,
    k: usize,
    max_iters: usize,
    seed: u64,
    tol: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = op.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut alphas = Vec::new();
    let mut betas = Vec::new();
    let mut q = fresh_direction(&mut rng, n, &basis)?;
    let mut w = vec![0.0; n];
    let mut restarts = 0;
    let mut scale = 0.0f64;

    loop {
        op.apply(&q, &mut w)?;
        if w.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric(
                "operator produced a non-finite value".into(),
            ));
        }
        scale = scale.max(norm(&w));
        alphas.push(dot(&q, &w));
        basis.push(std::mem::take(&mut q));
        for _ in 0..2 {
            for b in &basis {
                let c = dot(b, &w);
                for (wi, bi) in w.iter_mut().zip(b) {
                    *wi -= c * bi;
                }
            }
        }
        let beta = norm(&w);
        let m = basis.len();
        let broke = beta <= BREAKDOWN * scale;

        if m >= k {
            let (values, residuals) = ritz(&alphas, &betas, if broke { 0.0 } else { beta }, k);
            let converged = residuals.iter().all(|&r| r <= tol);
            if converged || m == max_iters || (broke && (restarts == MAX_RESTARTS || m == n)) {
                return Ok((values, residuals));
            }
        } else if m == max_iters || (broke && (restarts == MAX_RESTARTS || m == n)) {
            return Err(Error::Numeric(format!(
                "lanczos produced only {m} Ritz values, {k} requested"
            )));
        }

        if broke {
            restarts += 1;
            betas.push(0.0);
            q = fresh_direction(&mut rng, n, &basis)?;
        } else {
            betas.push(beta);
            q = w.iter().map(|x| x / beta).collect();
        }
    }
}

/// Largest `k` eigenvalues of the tridiagonal matrix with the given diagonal and
/// off-diagonal, with residuals `|β_next · s_last|`.
fn ritz(alphas: &[f64], betas: &[f64], beta_next: f64, k: usize) -> (Vec<f64>, Vec<f64>) {
    let m = alphas.len();
    let t = DMatrix::from_fn(m, m, |i, j| {
        if i == j {
            alphas[i]
        } else if i + 1 == j {
            betas[i]
        } else if j + 1 == i {
            betas[j]
        } else {
            0.0
        }
    });
    let eig = t.symmetric_eigen();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    order
        .into_iter()
        .take(k)
        .map(|i| {
            (
                eig.eigenvalues[i],
                (beta_next * eig.eigenvectors[(m - 1, i)]).abs(),
            )
        })
        .unzip()
}

fn fresh_direction(rng: &mut ChaCha8Rng, n: usize, basis: &[Vec<f64>]) -> Result<Vec<f64>> {
    for _ in 0..8 {
        let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for _ in 0..2 {
            for b in basis {
                let c = dot(b, &v);
                for (vi, bi) in v.iter_mut().zip(b) {
                    *vi -= c * bi;
                }
            }
        }
        let len = norm(&v);
        if len > 1e-8 {
            v.iter_mut().for_each(|x| *x /= len);
            return Ok(v);
        }
    }
    Err(Error::Numeric(
        "could not draw a direction orthogonal to the Krylov basis".into(),
    ))
}
