use approx::assert_relative_eq;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::mnist::Split;
use crate::nn::test_util::{random_batch, random_params};

/// `E = ½θᵀAθ` with a fixed symmetric `A`.
struct Quadratic {
    a: Vec<f64>,
    n: usize,
}

impl Quadratic {
    fn random(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let v = rng.gen_range(-1.0..1.0);
                a[i * n + j] = v;
                a[j * n + i] = v;
            }
        }
        Self { a, n }
    }

    fn mul(&self, v: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.a[i * self.n + j] * v[j]).sum())
            .collect()
    }
}

impl TwiceDifferentiable for Quadratic {
    fn dim(&self) -> usize {
        self.n
    }
    fn gradient(&mut self, theta: &[f64], out: &mut [f64]) -> Result<()> {
        out.copy_from_slice(&self.mul(theta));
        Ok(())
    }
    fn hvp_exact(&mut self, _theta: &[f64], v: &[f64], out: &mut [f64]) -> Result<()> {
        out.copy_from_slice(&self.mul(v));
        Ok(())
    }
}

struct Diagonal(Vec<f64>);

impl SymmetricOperator for Diagonal {
    fn dim(&self) -> usize {
        self.0.len()
    }
    fn apply(&mut self, v: &[f64], out: &mut [f64]) -> Result<()> {
        for ((o, d), x) in out.iter_mut().zip(&self.0).zip(v) {
            *o = d * x;
        }
        Ok(())
    }
}

fn rand_vec(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn small_net(seed: u64) -> (NetworkSpec, ParameterVector, Dataset) {
    let spec = NetworkSpec::new(vec![4, 3, 2]).unwrap();
    let params = random_params(&spec, 1.5, seed);
    let (x, y) = random_batch(4, 2, 25, seed + 100);
    let data = Dataset::new(x, y, 4, Split::Train).unwrap();
    (spec, params, data)
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    diff / b.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[test]
fn quadratic_hvp_is_a_times_v_in_both_modes() {
    let mut q = Quadratic::random(7, 1);
    let theta = rand_vec(7, 2);
    let v = rand_vec(7, 3);
    let expect = q.mul(&v);
    for mode in [HvpMode::Exact, HvpMode::FiniteDifference] {
        let cfg = HvpConfig {
            mode,
            ..HvpConfig::default()
        };
        let hv = hvp_with(&mut q, &theta, &v, &cfg).unwrap();
        for (a, b) in hv.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-8, "{mode:?}: {a} vs {b}");
        }
    }
}

#[test]
fn exact_and_finite_difference_agree_on_small_net() {
    for seed in 0..5 {
        let (spec, params, data) = small_net(seed);
        let v = ParameterVector::new(rand_vec(spec.parameter_count(), seed + 7)).unwrap();
        let exact = hvp(&spec, &params, &v, &data, &HvpConfig::default()).unwrap();
        let fd_cfg = HvpConfig {
            mode: HvpMode::FiniteDifference,
            ..HvpConfig::default()
        };
        let fd = hvp(&spec, &params, &v, &data, &fd_cfg).unwrap();
        let e = rel_err(fd.as_slice(), exact.as_slice());
        assert!(e < 1e-5, "seed {seed}: relative error {e}");
    }
}

#[test]
fn exact_hvp_matches_gradient_differences_on_deeper_net() {
    let spec = NetworkSpec::new(vec![6, 5, 4, 3]).unwrap();
    let params = random_params(&spec, 1.0, 3);
    let (x, y) = random_batch(6, 3, 300, 4);
    let data = Dataset::new(x, y, 6, Split::Train).unwrap();
    let v = ParameterVector::new(rand_vec(spec.parameter_count(), 5)).unwrap();
    let exact = hvp(&spec, &params, &v, &data, &HvpConfig::default()).unwrap();
    let fd = hvp(
        &spec,
        &params,
        &v,
        &data,
        &HvpConfig {
            mode: HvpMode::FiniteDifference,
            ..HvpConfig::default()
        },
    )
    .unwrap();
    assert!(rel_err(fd.as_slice(), exact.as_slice()) < 1e-5);
}

#[test]
fn exact_hvp_is_linear() {
    let (spec, params, data) = small_net(11);
    let n = spec.parameter_count();
    let v1 = rand_vec(n, 1);
    let v2 = rand_vec(n, 2);
    let (a, b) = (0.7, -2.3);
    let combo: Vec<f64> = v1.iter().zip(&v2).map(|(x, y)| a * x + b * y).collect();
    let cfg = HvpConfig::default();
    let h = |v: &[f64]| {
        hvp(
            &spec,
            &params,
            &ParameterVector::new(v.to_vec()).unwrap(),
            &data,
            &cfg,
        )
        .unwrap()
    };
    let (h1, h2, hc) = (h(&v1), h(&v2), h(&combo));
    for i in 0..n {
        let expect = a * h1.as_slice()[i] + b * h2.as_slice()[i];
        assert!((hc.as_slice()[i] - expect).abs() < 1e-8);
    }
}

#[test]
fn exact_hvp_is_symmetric() {
    let spec = NetworkSpec::new(vec![5, 8, 4]).unwrap();
    let params = random_params(&spec, 1.0, 21);
    let (x, y) = random_batch(5, 4, 40, 22);
    let data = Dataset::new(x, y, 5, Split::Train).unwrap();
    let mut op = NetworkHessian::new(&spec, &params, &data, &HvpConfig::default()).unwrap();
    for seed in 0..10 {
        let u = rand_vec(spec.parameter_count(), 100 + seed);
        let v = rand_vec(spec.parameter_count(), 200 + seed);
        let mut hu = vec![0.0; u.len()];
        let mut hv = vec![0.0; v.len()];
        op.apply(&u, &mut hu).unwrap();
        op.apply(&v, &mut hv).unwrap();
        let lhs = nn::dot(&u, &hv);
        let rhs = nn::dot(&v, &hu);
        assert!((lhs - rhs).abs() <= 1e-7 * nn::norm(&u) * nn::norm(&v));
    }
}

#[test]
fn zero_direction_is_rejected() {
    let (spec, params, data) = small_net(1);
    let zero = ParameterVector::zeros(spec.parameter_count());
    assert!(hvp(&spec, &params, &zero, &data, &HvpConfig::default()).is_err());
}

#[test]
fn fd_step_bounds() {
    let mut cfg = HvpConfig {
        mode: HvpMode::FiniteDifference,
        fd_step: 1e-2,
        ..HvpConfig::default()
    };
    assert!(cfg.validate().is_err());
    cfg.fd_step = 0.0;
    assert!(cfg.validate().is_err());
    cfg.fd_step = 1e-5;
    assert!(cfg.validate().is_ok());
}

#[test]
fn regularized_hvp_shifts_by_two_beta() {
    let (spec, params, data) = small_net(4);
    let reference = ParameterVector::zeros(spec.parameter_count());
    let v = ParameterVector::new(rand_vec(spec.parameter_count(), 9)).unwrap();
    let cfg = HvpConfig::default();
    let plain = hvp(&spec, &params, &v, &data, &cfg).unwrap();
    let same = hvp_regularized(&spec, &params, &v, &data, &reference, 0.0, &cfg).unwrap();
    assert_eq!(plain, same);
    let beta = 0.125;
    let shifted = hvp_regularized(&spec, &params, &v, &data, &reference, beta, &cfg).unwrap();
    for i in 0..v.len() {
        assert_relative_eq!(
            shifted.as_slice()[i],
            plain.as_slice()[i] + 2.0 * beta * v.as_slice()[i],
            epsilon = 1e-14
        );
    }
}

#[test]
fn eigenvector_of_quadratic_shifts_by_two_beta() {
    let mut op = Shifted::new(Diagonal(vec![3.0, -1.0, 0.5]), 2.0 * 0.2);
    let mut out = vec![0.0; 3];
    op.apply(&[0.0, 4.0, 0.0], &mut out).unwrap();
    assert_relative_eq!(out[1], (-1.0 + 0.4) * 4.0, epsilon = 1e-15);
    assert_eq!(out[0], 0.0);
    assert_eq!(out[2], 0.0);
}

#[test]
fn lanczos_diagonal_top_five() {
    let mut op = Diagonal((1..=100).map(f64::from).collect());
    let report = lanczos_extreme(&mut op, 5, 100, 1, 1e-10).unwrap();
    for (got, want) in report
        .ritz_values
        .iter()
        .zip([100.0, 99.0, 98.0, 97.0, 96.0])
    {
        assert!((got - want).abs() < 1e-8, "{got} vs {want}");
    }
    assert_eq!(report.k, 5);
    assert!(report
        .residual_norms
        .iter()
        .all(|&r| (0.0..=1e-10).contains(&r)));
    assert!((report.most_negative - 1.0).abs() < 1e-8);
}

#[test]
fn lanczos_finds_most_negative() {
    let mut diag = vec![-2.0];
    diag.extend((1..=50).map(|i| 0.1 * i as f64));
    let mut op = Diagonal(diag);
    let report = lanczos_extreme(&mut op, 3, 51, 7, 1e-9).unwrap();
    assert!(
        (report.most_negative + 2.0).abs() < 1e-6,
        "{}",
        report.most_negative
    );
    assert!((report.ritz_values[0] - 5.0).abs() < 1e-8);
}

#[test]
fn lanczos_restarts_after_breakdown() {
    // Start vector spans a tiny invariant subspace when the spectrum is degenerate.
    let mut op = Diagonal(vec![1.0; 20]);
    let report = lanczos_extreme(&mut op, 3, 10, 3, 1e-9).unwrap();
    assert_eq!(report.ritz_values.len(), 3);
    for r in &report.ritz_values {
        assert!((r - 1.0).abs() < 1e-12);
    }
}

#[test]
fn lanczos_rejects_bad_sizes() {
    let mut op = Diagonal(vec![1.0, 2.0, 3.0]);
    assert!(lanczos_extreme(&mut op, 0, 3, 1, 1e-8).is_err());
    assert!(lanczos_extreme(&mut op, 4, 3, 1, 1e-8).is_err());
    assert!(lanczos_extreme(&mut op, 2, 5, 1, 1e-8).is_err());
}

#[test]
fn ritz_values_lie_inside_rayleigh_range() {
    let spec = NetworkSpec::new(vec![5, 6, 3]).unwrap();
    let params = random_params(&spec, 1.0, 31);
    let (x, y) = random_batch(5, 3, 60, 32);
    let data = Dataset::new(x, y, 5, Split::Train).unwrap();
    let cfg = HvpConfig::default();
    let mut op = NetworkHessian::new(&spec, &params, &data, &cfg).unwrap();
    let n = op.dim();
    let report = lanczos_extreme(&mut op, 5, n, 2, 1e-8).unwrap();

    // Rayleigh quotients bound the spectrum; the extreme Ritz values approach the
    // extreme eigenvalues, so they sit inside [min, max] of the quotient hull
    // extended by the residual and the true spectral range.
    let mut quotients = Vec::new();
    for seed in 0..100 {
        let v = rand_vec(n, 1000 + seed);
        let mut hv = vec![0.0; n];
        op.apply(&v, &mut hv).unwrap();
        quotients.push(nn::dot(&v, &hv) / nn::dot(&v, &v));
    }
    let tol = report.residual_norms.iter().cloned().fold(0.0, f64::max) + 1e-9;
    for &r in &report.ritz_values {
        assert!(r <= report.ritz_values[0] + tol);
        assert!(r >= report.most_negative - tol);
    }
    let qmax = quotients.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let qmin = quotients.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(report.ritz_values[0] >= qmax - tol);
    assert!(report.most_negative <= qmin + tol);
    assert!(report.ritz_values.windows(2).all(|w| w[0] >= w[1]));
}

#[test]
fn shifted_spectrum_moves_by_the_constant() {
    let spec = NetworkSpec::new(vec![5, 6, 3]).unwrap();
    let params = random_params(&spec, 1.0, 41);
    let (x, y) = random_batch(5, 3, 60, 42);
    let data = Dataset::new(x, y, 5, Split::Train).unwrap();
    let cfg = HvpConfig::default();
    let mut plain = NetworkHessian::new(&spec, &params, &data, &cfg).unwrap();
    let n = plain.dim();
    let base = lanczos_extreme(&mut plain, 5, n, 9, 1e-10).unwrap();
    let beta = 0.01;
    let mut shifted = Shifted::new(
        NetworkHessian::new(&spec, &params, &data, &cfg).unwrap(),
        2.0 * beta,
    );
    let moved = lanczos_extreme(&mut shifted, 5, n, 9, 1e-10).unwrap();
    for (a, b) in moved.ritz_values.iter().zip(&base.ritz_values) {
        assert!((a - b - 2.0 * beta).abs() < 1e-6);
    }
}

#[test]
fn lanczos_is_deterministic() {
    let (spec, params, data) = small_net(6);
    let cfg = HvpConfig::default();
    let run = || {
        let mut op = NetworkHessian::new(&spec, &params, &data, &cfg).unwrap();
        lanczos_extreme(&mut op, 2, 8, 5, 1e-8).unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn subset_is_recorded() {
    let spec = NetworkSpec::new(vec![3, 2, 2]).unwrap();
    let params = random_params(&spec, 1.0, 1);
    let (x, y) = random_batch(3, 2, 50, 2);
    let data = Dataset::new(x, y, 3, Split::Train).unwrap();
    let cfg = HvpConfig {
        subset_size: 20,
        ..HvpConfig::default()
    };
    let op = NetworkHessian::new(&spec, &params, &data, &cfg).unwrap();
    assert_eq!(op.samples(), 20);
}

#[test]
fn spectrum_csv_layout() {
    let report = SpectrumReport {
        point_id: Some(CheckpointId::parse(&"ab".repeat(16)).unwrap()),
        ritz_values: vec![3.0, 2.0],
        residual_norms: vec![1e-9, 2e-9],
        most_negative: -0.5,
        most_negative_residual: 3e-9,
        data_subset_seed: Some(4),
        k: 2,
    };
    let mut buf = Vec::new();
    write_spectrum_csv(&mut buf, &[(1.25, report)]).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "point_id,r_ref,ritz_1,ritz_2,most_negative,residual_max"
    );
    assert_eq!(
        lines.next().unwrap(),
        format!("{},1.25,3,2,-0.5,0.000000003", "ab".repeat(16))
    );
}
