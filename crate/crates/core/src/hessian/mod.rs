//! Hessian-vector products of the error and a Lanczos solver for extreme eigenvalues.
//!
//! [`NetworkHessian`] applies `∇²E` on a fixed, seeded evaluation subset, either
//! exactly (forward-over-reverse through the sigmoid network) or by central
//! differences of the gradient. [`lanczos_extreme`] extracts the top Ritz values of
//! any [`SymmetricOperator`] and, from a second run on the negated operator, the most
//! negative one.

mod lanczos;

pub use lanczos::{lanczos_extreme, Negated, Shifted, SpectrumReport, SymmetricOperator};

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mnist::{self, Dataset};
use crate::nn::{
    self, Activations, Backprop, LayerShape, NetworkSpec, ParameterVector, CHUNK_ROWS,
};
use crate::report::shortest;
use crate::store::CheckpointId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HvpMode {
    Exact,
    FiniteDifference,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HvpConfig {
    pub mode: HvpMode,
    /// Relative step; the absolute step is `fd_step·(1 + ‖θ‖)`.
    pub fd_step: f64,
    /// Evaluation samples; larger datasets are subsampled (stratified, seeded).
    pub subset_size: usize,
    pub seed: u64,
}

impl Default for HvpConfig {
    fn default() -> Self {
        Self {
            mode: HvpMode::Exact,
            fd_step: 1e-5,
            subset_size: 10_000,
            seed: 0,
        }
    }
}

impl HvpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mode == HvpMode::FiniteDifference && !(self.fd_step > 0.0 && self.fd_step < 1e-2) {
            return Err(Error::Config(format!(
                "fd_step must lie in (0, 1e-2), got {}",
                self.fd_step
            )));
        }
        if self.subset_size == 0 {
            return Err(Error::Config("hessian subset_size must be positive".into()));
        }
        Ok(())
    }
}

/// A twice-differentiable scalar function with an analytic Hessian-vector product.
pub trait TwiceDifferentiable {
    fn dim(&self) -> usize;
    fn gradient(&mut self, theta: &[f64], out: &mut [f64]) -> Result<()>;
    fn hvp_exact(&mut self, theta: &[f64], v: &[f64], out: &mut [f64]) -> Result<()>;
}

/// `H(θ)·v` for `f`, in the mode chosen by `cfg`.
pub fn hvp_with<F: TwiceDifferentiable + ?Sized>(
    f: &mut F,
    theta: &[f64],
    v: &[f64],
    cfg: &HvpConfig,
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; v.len()];
    hvp_into(f, theta, v, cfg, &mut out)?;
    Ok(out)
}

fn hvp_into<F: TwiceDifferentiable + ?Sized>(
    f: &mut F,
    theta: &[f64],
    v: &[f64],
    cfg: &HvpConfig,
    out: &mut [f64],
) -> Result<()> {
    cfg.validate()?;
    if theta.len() != f.dim() || v.len() != f.dim() {
        return Err(Error::Config(format!(
            "hvp needs vectors of length {}, got {} and {}",
            f.dim(),
            theta.len(),
            v.len()
        )));
    }
    let vnorm = nn::norm(v);
    if vnorm == 0.0 || !vnorm.is_finite() {
        return Err(Error::Config(
            "hvp direction must be non-zero and finite".into(),
        ));
    }
    match cfg.mode {
        HvpMode::Exact => f.hvp_exact(theta, v, out),
        HvpMode::FiniteDifference => {
            let h = cfg.fd_step * (1.0 + nn::norm(theta));
            let shifted = |sign: f64| -> Vec<f64> {
                theta
                    .iter()
                    .zip(v)
                    .map(|(t, x)| t + sign * h * x / vnorm)
                    .collect()
            };
            let mut minus = vec![0.0; v.len()];
            f.gradient(&shifted(1.0), out)?;
            f.gradient(&shifted(-1.0), &mut minus)?;
            let scale = vnorm / (2.0 * h);
            for (o, m) in out.iter_mut().zip(&minus) {
                *o = (*o - m) * scale;
            }
            Ok(())
        }
    }
}

/// Cross-entropy error of a network on a fixed dataset, as a function of its parameters.
pub struct NetworkError<'a> {
    spec: &'a NetworkSpec,
    data: Dataset,
    layers: Vec<LayerShape>,
    scratch: Backprop,
    rop: RopScratch,
}

impl<'a> NetworkError<'a> {
    pub fn new(spec: &'a NetworkSpec, data: Dataset) -> Result<Self> {
        nn::check_shapes(spec, &vec![0.0; spec.parameter_count()], &data.batch())?;
        Ok(Self {
            spec,
            data,
            layers: spec.layers(),
            scratch: Backprop::new(spec),
            rop: RopScratch::new(spec),
        })
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }
}

impl TwiceDifferentiable for NetworkError<'_> {
    fn dim(&self) -> usize {
        self.spec.parameter_count()
    }

    fn gradient(&mut self, theta: &[f64], out: &mut [f64]) -> Result<()> {
        out.fill(0.0);
        nn::error_grad_accumulate(
            self.spec,
            theta,
            &self.data.batch(),
            Some(out),
            &mut self.scratch,
        );
        Ok(())
    }

    fn hvp_exact(&mut self, theta: &[f64], v: &[f64], out: &mut [f64]) -> Result<()> {
        out.fill(0.0);
        let batch = self.data.batch();
        let scale = 1.0 / batch.len() as f64;
        for chunk in batch.chunks() {
            rop_chunk(
                &self.layers,
                self.spec.num_classes(),
                theta,
                v,
                chunk.inputs(),
                chunk.labels(),
                scale,
                &mut self.rop,
                out,
            );
        }
        Ok(())
    }
}

/// Per-chunk buffers for the R-operator pass.
struct RopScratch {
    acts: Activations,
    racts: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
    rdeltas: Vec<Vec<f64>>,
    back: Vec<f64>,
    rback: Vec<f64>,
}

impl RopScratch {
    fn new(spec: &NetworkSpec) -> Self {
        let buffers = || -> Vec<Vec<f64>> {
            spec.layer_sizes()[1..]
                .iter()
                .map(|&w| vec![0.0; CHUNK_ROWS * w])
                .collect()
        };
        let widest = spec.layer_sizes().iter().copied().max().unwrap_or(0);
        Self {
            acts: Activations::new(spec),
            racts: buffers(),
            deltas: buffers(),
            rdeltas: buffers(),
            back: vec![0.0; CHUNK_ROWS * widest],
            rback: vec![0.0; CHUNK_ROWS * widest],
        }
    }
}

/// Adds `scale · Σ_rows ∂²(−log p_y)/∂θ² · v` for one chunk into `out`.
#[allow(clippy::too_many_arguments)]
fn rop_chunk(
    layers: &[LayerShape],
    classes: usize,
    theta: &[f64],
    v: &[f64],
    x: &[f64],
    labels: &[usize],
    scale: f64,
    s: &mut RopScratch,
    out: &mut [f64],
) {
    let n = labels.len();
    let last = layers.len() - 1;
    nn::forward_chunk(layers, theta, x, n, &mut s.acts);

    // Forward: R(z_l) = R(a_{l-1})·W + a_{l-1}·V_W + V_b, R(a_l) = σ'(z_l)·R(z_l).
    for (l, layer) in layers.iter().enumerate() {
        let (before, rest) = s.racts.split_at_mut(l);
        let rz = &mut rest[0][..n * layer.fan_out];
        for row in rz.chunks_exact_mut(layer.fan_out) {
            row.copy_from_slice(&v[layer.bias_range()]);
        }
        let input = s.acts.layer_input(l, x);
        nn::gemm(
            n,
            layer.fan_in,
            layer.fan_out,
            1.0,
            input,
            (layer.fan_in, 1),
            &v[layer.weight_range()],
            (layer.fan_out, 1),
            1.0,
            rz,
            layer.fan_out,
        );
        if l > 0 {
            nn::gemm(
                n,
                layer.fan_in,
                layer.fan_out,
                1.0,
                &before[l - 1][..n * layer.fan_in],
                (layer.fan_in, 1),
                &theta[layer.weight_range()],
                (layer.fan_out, 1),
                1.0,
                rz,
                layer.fan_out,
            );
        }
        if l != last {
            let a = &s.acts.outputs[l][..n * layer.fan_out];
            for (r, &ai) in rz.iter_mut().zip(a) {
                *r *= ai * (1.0 - ai);
            }
        }
    }

    // Softmax: δ = (p − y)/N, R(δ) = p ⊙ (R(z) − Σ p R(z)) / N.
    let probs = &mut s.acts.outputs[last][..n * classes];
    nn::softmax_rows_in_place(probs, classes, labels);
    let rz = &s.racts[last][..n * classes];
    let delta = &mut s.deltas[last][..n * classes];
    let rdelta = &mut s.rdeltas[last][..n * classes];
    for r in 0..n {
        let p = &probs[r * classes..(r + 1) * classes];
        let rzr = &rz[r * classes..(r + 1) * classes];
        let mean: f64 = p.iter().zip(rzr).map(|(a, b)| a * b).sum();
        for c in 0..classes {
            delta[r * classes + c] = scale * (p[c] - if c == labels[r] { 1.0 } else { 0.0 });
            rdelta[r * classes + c] = scale * p[c] * (rzr[c] - mean);
        }
    }

    for l in (0..layers.len()).rev() {
        let layer = layers[l];
        let input = s.acts.layer_input(l, x);
        let delta = &s.deltas[l][..n * layer.fan_out];
        let rdelta = &s.rdeltas[l][..n * layer.fan_out];
        let gw = &mut out[layer.weight_range()];
        // R(g_W) = inputᵀ·R(δ) + R(input)ᵀ·δ
        nn::gemm(
            layer.fan_in,
            n,
            layer.fan_out,
            1.0,
            input,
            (1, layer.fan_in),
            rdelta,
            (layer.fan_out, 1),
            1.0,
            gw,
            layer.fan_out,
        );
        if l > 0 {
            nn::gemm(
                layer.fan_in,
                n,
                layer.fan_out,
                1.0,
                &s.racts[l - 1][..n * layer.fan_in],
                (1, layer.fan_in),
                delta,
                (layer.fan_out, 1),
                1.0,
                gw,
                layer.fan_out,
            );
        }
        let gb = &mut out[layer.bias_range()];
        for row in rdelta.chunks_exact(layer.fan_out) {
            for (g, d) in gb.iter_mut().zip(row) {
                *g += d;
            }
        }
        if l == 0 {
            break;
        }

        // g = δ·Wᵀ, R(g) = R(δ)·Wᵀ + δ·V_Wᵀ
        let back = &mut s.back[..n * layer.fan_in];
        let rback = &mut s.rback[..n * layer.fan_in];
        let w = &theta[layer.weight_range()];
        let vw = &v[layer.weight_range()];
        nn::gemm(
            n,
            layer.fan_out,
            layer.fan_in,
            1.0,
            delta,
            (layer.fan_out, 1),
            w,
            (1, layer.fan_out),
            0.0,
            back,
            layer.fan_in,
        );
        nn::gemm(
            n,
            layer.fan_out,
            layer.fan_in,
            1.0,
            rdelta,
            (layer.fan_out, 1),
            w,
            (1, layer.fan_out),
            0.0,
            rback,
            layer.fan_in,
        );
        nn::gemm(
            n,
            layer.fan_out,
            layer.fan_in,
            1.0,
            delta,
            (layer.fan_out, 1),
            vw,
            (1, layer.fan_out),
            1.0,
            rback,
            layer.fan_in,
        );

        // δ_{l-1} = g ⊙ a(1−a), R(δ_{l-1}) = R(g) ⊙ a(1−a) + g ⊙ (1−2a) ⊙ R(a)
        let a = &s.acts.outputs[l - 1][..n * layer.fan_in];
        let ra = &s.racts[l - 1][..n * layer.fan_in];
        let (dlo, _) = s.deltas.split_at_mut(l);
        let (rlo, _) = s.rdeltas.split_at_mut(l);
        let d_below = &mut dlo[l - 1][..n * layer.fan_in];
        let r_below = &mut rlo[l - 1][..n * layer.fan_in];
        for i in 0..n * layer.fan_in {
            let ai = a[i];
            let sp = ai * (1.0 - ai);
            d_below[i] = back[i] * sp;
            r_below[i] = rback[i] * sp + back[i] * (1.0 - 2.0 * ai) * ra[i];
        }
    }
}

/// `∇²E(θ)` on an evaluation set, as a [`SymmetricOperator`].
pub struct NetworkHessian<'a> {
    error: NetworkError<'a>,
    theta: Vec<f64>,
    cfg: HvpConfig,
}

impl<'a> NetworkHessian<'a> {
    /// Uses all of `data` when it has at most `cfg.subset_size` samples, otherwise a
    /// stratified subset drawn with `cfg.seed`.
    pub fn new(
        spec: &'a NetworkSpec,
        params: &ParameterVector,
        data: &Dataset,
        cfg: &HvpConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        params.check_spec(spec)?;
        let eval = if data.len() > cfg.subset_size {
            mnist::subset(data, cfg.subset_size, cfg.seed)?
        } else {
            data.clone()
        };
        Ok(Self {
            error: NetworkError::new(spec, eval)?,
            theta: params.as_slice().to_vec(),
            cfg: *cfg,
        })
    }

    pub fn samples(&self) -> usize {
        self.error.data().len()
    }

    pub fn config(&self) -> &HvpConfig {
        &self.cfg
    }
}

impl SymmetricOperator for NetworkHessian<'_> {
    fn dim(&self) -> usize {
        self.theta.len()
    }

    fn apply(&mut self, v: &[f64], out: &mut [f64]) -> Result<()> {
        hvp_into(&mut self.error, &self.theta, v, &self.cfg, out)
    }
}

/// `∇²E(θ)·v` on `data` (subsampled to `cfg.subset_size`).
pub fn hvp(
    spec: &NetworkSpec,
    params: &ParameterVector,
    v: &ParameterVector,
    data: &Dataset,
    cfg: &HvpConfig,
) -> Result<ParameterVector> {
    let mut op = NetworkHessian::new(spec, params, data, cfg)?;
    let mut out = vec![0.0; v.len()];
    if v.len() != op.dim() {
        return Err(Error::Config(format!(
            "direction has {} entries, expected {}",
            v.len(),
            op.dim()
        )));
    }
    op.apply(v.as_slice(), &mut out)?;
    ParameterVector::new(out)
}

/// `∇²(E + β‖θ − θ_ref‖²)·v = ∇²E·v + 2β·v`.
pub fn hvp_regularized(
    spec: &NetworkSpec,
    params: &ParameterVector,
    v: &ParameterVector,
    data: &Dataset,
    theta_ref: &ParameterVector,
    beta: f64,
    cfg: &HvpConfig,
) -> Result<ParameterVector> {
    theta_ref.check_spec(spec)?;
    if !(beta >= 0.0) {
        return Err(Error::Config(format!(
            "beta must be non-negative, got {beta}"
        )));
    }
    let hv = hvp(spec, params, v, data, cfg)?;
    let shifted = hv
        .as_slice()
        .iter()
        .zip(v.as_slice())
        .map(|(h, x)| h + 2.0 * beta * x)
        .collect();
    ParameterVector::new(shifted)
}

/// Top-`k` spectrum of `∇²E` at `params`, tagged with its checkpoint id and subset seed.
pub fn error_spectrum(
    spec: &NetworkSpec,
    params: &ParameterVector,
    data: &Dataset,
    hvp_cfg: &HvpConfig,
    lanczos: &LanczosConfig,
) -> Result<SpectrumReport> {
    let mut op = NetworkHessian::new(spec, params, data, hvp_cfg)?;
    let mut report = lanczos_extreme(
        &mut op,
        lanczos.k,
        lanczos.max_iters,
        lanczos.seed,
        lanczos.tol,
    )?;
    report.point_id = Some(CheckpointId::of(spec, params));
    report.data_subset_seed = Some(hvp_cfg.seed);
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LanczosConfig {
    pub k: usize,
    pub max_iters: usize,
    pub seed: u64,
    pub tol: f64,
}

impl Default for LanczosConfig {
    fn default() -> Self {
        Self {
            k: 50,
            max_iters: 150,
            seed: 0,
            tol: 1e-6,
        }
    }
}

/// One row per `(r_ref, report)`: `point_id, r_ref, ritz_1..ritz_k, most_negative,
/// residual_max`. All reports must share `k`.
pub fn write_spectrum_csv<W: Write>(out: W, rows: &[(f64, SpectrumReport)]) -> Result<()> {
    let k = rows.first().map_or(0, |(_, r)| r.k);
    if rows.iter().any(|(_, r)| r.k != k) {
        return Err(Error::Format("spectrum rows disagree on k".into()));
    }
    let csv_err = |e: csv::Error| Error::Format(format!("csv: {e}"));
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["point_id".to_string(), "r_ref".to_string()];
    header.extend((1..=k).map(|i| format!("ritz_{i}")));
    header.push("most_negative".into());
    header.push("residual_max".into());
    w.write_record(&header).map_err(csv_err)?;
    for (r_ref, rep) in rows {
        let mut row = vec![
            rep.point_id
                .as_ref()
                .map(|id| id.to_string())
                .unwrap_or_default(),
            shortest(*r_ref),
        ];
        row.extend(rep.ritz_values.iter().map(|&x| shortest(x)));
        row.push(shortest(rep.most_negative));
        row.push(shortest(rep.residual_max()));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Format(format!("csv: {e}")))?;
    Ok(())
}

#[cfg(test)]
mod tests;
