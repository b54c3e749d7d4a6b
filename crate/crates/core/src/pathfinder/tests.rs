use approx::assert_relative_eq;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::mnist::Split;
use crate::nn::test_util::random_params;
use crate::store::MemoryStore;

/// Three well-separated clusters in 4 dimensions.
fn clusters(n_per_class: usize, seed: u64, split: Split) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for i in 0..3 * n_per_class {
        let c = i % 3;
        for d in 0..4 {
            let centre = if d == c { 0.9 } else { 0.1 };
            images.push((centre + rng.gen_range(-0.08..0.08f64)).clamp(0.0, 1.0));
        }
        labels.push(c);
    }
    Dataset::new(images, labels, 4, split).unwrap()
}

fn small_spec() -> NetworkSpec {
    NetworkSpec::new(vec![4, 6, 3]).unwrap()
}

fn quick_config(theta_ref: ParameterVector, params0: &ParameterVector) -> AnnealConfig {
    let mut cfg = AnnealConfig::toward(theta_ref, params0);
    cfg.beta0 = 1e-3;
    cfg.beta_max = 10.0;
    cfg.schedule = Schedule::Geometric { factor: 2.0 };
    cfg.train.batch_size = 16;
    cfg.train.adam.lr = 0.01;
    cfg.train.policy.max_epochs = 60;
    cfg
}

#[test]
fn regularized_loss_adds_penalty() {
    let spec = small_spec();
    let data = clusters(4, 1, Split::Train);
    let params = random_params(&spec, 0.5, 2);
    let reference = ParameterVector::zeros(spec.parameter_count());
    let at_zero = regularized_loss(&spec, &params, &data.batch(), &reference, 0.0).unwrap();
    assert_eq!(at_zero.penalty, 0.0);
    assert_eq!(at_zero.loss, at_zero.error);
    let b = regularized_loss(&spec, &params, &data.batch(), &reference, 0.25).unwrap();
    assert_relative_eq!(
        b.penalty,
        0.25 * params.norm().powi(2),
        max_relative = 1e-12
    );
    assert_relative_eq!(b.loss, b.error + b.penalty, max_relative = 1e-15);
    assert!(regularized_loss(&spec, &params, &data.batch(), &reference, -1.0).is_err());
}

#[test]
fn objective_gradient_includes_penalty_term() {
    let spec = small_spec();
    let data = clusters(5, 3, Split::Train);
    let params = random_params(&spec, 0.5, 4);
    let reference = random_params(&spec, 0.5, 5);
    let beta = 0.3;
    let mut obj = RegularizedObjective::new(&spec, &data, &reference, beta).unwrap();
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut g = vec![0.0; params.len()];
    obj.batch_gradient(params.as_slice(), &idx, &mut g);
    let ge = nn::gradient(&spec, &params, &data.batch()).unwrap();
    let points = params.as_slice().iter().zip(reference.as_slice());
    for ((gi, ei), (p, r)) in g.iter().zip(ge.as_slice()).zip(points) {
        assert_relative_eq!(*gi, ei + 2.0 * beta * (p - r), epsilon = 1e-12);
    }
}

#[test]
fn critical_beta_examples() {
    let one = |v: f64| ParameterVector::new(vec![v]).unwrap();
    assert_eq!(critical_beta(&one(0.0), &one(1.0), &one(0.0)).unwrap(), 0.0);
    assert_relative_eq!(
        critical_beta(&one(-3.0), &one(1.0), &one(0.0)).unwrap(),
        1.5
    );
    assert_relative_eq!(
        critical_beta(&one(-6.0), &one(1.0), &one(0.0)).unwrap(),
        3.0
    );
    assert_relative_eq!(
        critical_beta(&one(-3.0), &one(2.0), &one(0.0)).unwrap(),
        0.75
    );
    let err = critical_beta(&one(-3.0), &one(1.0), &one(1.0)).unwrap_err();
    assert!(matches!(err, Error::Numeric(_)));
}

#[test]
fn critical_beta_equals_beta_at_a_stationary_point() {
    // ∇E + 2β(θ − θ_ref) = 0
    let theta = ParameterVector::new(vec![0.4, -1.2, 2.0]).unwrap();
    let reference = ParameterVector::new(vec![0.1, 0.3, -0.5]).unwrap();
    let beta = 0.037;
    let grad: Vec<f64> = theta
        .as_slice()
        .iter()
        .zip(reference.as_slice())
        .map(|(t, r)| -2.0 * beta * (t - r))
        .collect();
    let c = critical_beta(&ParameterVector::new(grad).unwrap(), &theta, &reference).unwrap();
    assert_relative_eq!(c, beta, max_relative = 1e-14);
}

#[test]
fn schedules() {
    let g = Schedule::Geometric { factor: 1.15 };
    assert_relative_eq!(g.beta_at(1e-6, 2), 1e-6 * 1.15 * 1.15, max_relative = 1e-15);
    let l = Schedule::Linear { delta: 1e-7 };
    assert_relative_eq!(l.beta_at(0.0, 3), 3e-7, max_relative = 1e-15);
    let p0 = ParameterVector::zeros(3);
    let cfg = AnnealConfig::connect(ParameterVector::zeros(3), &p0);
    assert_eq!(cfg.betas().count(), 101);
    let cfg = AnnealConfig::toward(ParameterVector::zeros(3), &p0);
    let betas: Vec<f64> = cfg.betas().collect();
    assert!(betas.windows(2).all(|w| w[0] < w[1]));
    assert!(*betas.last().unwrap() <= 1.0);
}

#[test]
fn config_validation() {
    let spec = small_spec();
    let p0 = random_params(&spec, 0.5, 1);
    let good = quick_config(ParameterVector::zeros(spec.parameter_count()), &p0);
    assert!(good.validate(&spec).is_ok());
    let mut bad = good.clone();
    bad.schedule = Schedule::Geometric { factor: 1.0 };
    assert!(bad.validate(&spec).is_err());
    let mut bad = good.clone();
    bad.beta0 = 0.0;
    assert!(bad.validate(&spec).is_err());
    let mut bad = good.clone();
    bad.beta_max = 1e-4;
    assert!(bad.validate(&spec).is_err());
    let mut bad = good.clone();
    bad.theta_ref = ParameterVector::zeros(3);
    assert!(bad.validate(&spec).is_err());
}

#[test]
fn separable_data_trains_to_low_error() {
    let spec = small_spec();
    let train = clusters(30, 7, Split::Train);
    let p0 = ParameterVector::init(&spec, 1);
    let mut obj = RegularizedObjective::new(&spec, &train, &p0, 0.0).unwrap();
    let mut cfg = TrainConfig::default();
    cfg.adam.lr = 0.02;
    cfg.batch_size = 16;
    cfg.policy.max_epochs = 2000;
    cfg.policy.patience_epochs = 20;
    let out = optim::train_to_convergence(&mut obj, &p0, &cfg, 3).unwrap();
    let e = nn::error(&spec, &out.params, &train.batch()).unwrap();
    assert!(e < 0.01, "error {e}");
}

#[test]
fn anneal_records_are_consistent_and_reproducible() {
    let spec = small_spec();
    let train = clusters(20, 1, Split::Train);
    let test = clusters(10, 2, Split::Test);
    let p0 = random_params(&spec, 1.0, 9);
    let cfg = quick_config(ParameterVector::zeros(spec.parameter_count()), &p0);

    let mut repo = MemoryStore::new();
    let mut seen = 0;
    let mut cb = |_: &TrajectoryRecord| seen += 1;
    let traj = anneal(&spec, &p0, &train, &test, &cfg, &mut repo, Some(&mut cb)).unwrap();
    assert_eq!(seen, traj.records.len());
    assert_eq!(repo.len(), traj.records.len());
    for r in &traj.records {
        assert_relative_eq!(
            r.loss,
            r.error_train + r.beta * r.r_ref * r.r_ref,
            epsilon = 1e-9
        );
        assert_relative_eq!(r.r0, r.r_ref, max_relative = 1e-12);
        let params = repo.load(&r.checkpoint_id).unwrap().into_params();
        assert_eq!(params.norm(), r.r0);
    }
    assert!(traj.records.windows(2).all(|w| w[0].beta < w[1].beta));
    let last = traj.final_record();
    assert!(last.r_ref < cfg.epsilon_dist || last.beta * 2.0 > cfg.beta_max);

    let again = anneal(
        &spec,
        &p0,
        &train,
        &test,
        &cfg,
        &mut MemoryStore::new(),
        None,
    )
    .unwrap();
    assert_eq!(traj.records, again.records);
}

#[test]
fn strong_penalty_shrinks_toward_reference() {
    let spec = small_spec();
    let train = clusters(20, 1, Split::Train);
    let p0 = random_params(&spec, 1.0, 11);
    let reference = random_params(&spec, 0.2, 12);
    let cfg = quick_config(reference.clone(), &p0);
    let traj = anneal(
        &spec,
        &p0,
        &train,
        &train,
        &cfg,
        &mut MemoryStore::new(),
        None,
    )
    .unwrap();
    let first = &traj.records[0];
    let last = traj.final_record();
    assert!(
        last.r_ref
            < 0.1
                * first
                    .r_ref
                    .max(nn::radial_distance(&p0, &reference).unwrap())
    );
}

#[test]
fn connect_identical_endpoints_is_a_single_record() {
    let spec = small_spec();
    let train = clusters(5, 1, Split::Train);
    let p = random_params(&spec, 0.5, 3);
    let cfg = AnnealConfig::connect(p.clone(), &p);
    let traj = connect(
        &spec,
        &p,
        &p,
        &train,
        &train,
        &cfg,
        &mut MemoryStore::new(),
        None,
    )
    .unwrap();
    assert_eq!(traj.records.len(), 1);
    assert_eq!(traj.records[0].epochs_used, 0);
    assert_eq!(traj.records[0].r_ref, 0.0);
    assert_eq!(traj.records[0].critical_beta, None);

    let other = random_params(&spec, 0.5, 4);
    assert!(connect(
        &spec,
        &p,
        &other,
        &train,
        &train,
        &cfg,
        &mut MemoryStore::new(),
        None
    )
    .is_err());
}

#[test]
fn trajectory_csv_round_trip() {
    let spec = small_spec();
    let train = clusters(10, 1, Split::Train);
    let p0 = random_params(&spec, 1.0, 5);
    let mut cfg = quick_config(ParameterVector::zeros(spec.parameter_count()), &p0);
    cfg.beta_max = 0.01;
    let traj = anneal(
        &spec,
        &p0,
        &train,
        &train,
        &cfg,
        &mut MemoryStore::new(),
        None,
    )
    .unwrap();
    let mut buf = Vec::new();
    write_trajectory_csv(&mut buf, &traj.records).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.starts_with("beta,error_train,error_test,loss,r0,r_ref,acc_overall,acc_0,"));
    assert!(text
        .lines()
        .next()
        .unwrap()
        .ends_with("epochs_used,checkpoint_id"));
    let back = read_trajectory_csv(buf.as_slice()).unwrap();
    assert_eq!(back.len(), traj.records.len());
    for (a, b) in back.iter().zip(&traj.records) {
        assert_eq!(a.beta.to_bits(), b.beta.to_bits());
        assert_eq!(a.r0.to_bits(), b.r0.to_bits());
        assert_eq!(a.r_ref.to_bits(), b.r_ref.to_bits());
        assert_eq!(a.error_train.to_bits(), b.error_train.to_bits());
        assert_eq!(a.accuracy.per_class, b.accuracy.per_class);
        assert_eq!(a.checkpoint_id, b.checkpoint_id);
        assert_eq!(a.epochs_used, b.epochs_used);
    }
    assert!(read_trajectory_csv("beta,loss\n1,2\n".as_bytes()).is_err());

    let mut buf = Vec::new();
    write_critical_beta_csv(&mut buf, &traj.records).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 1 + traj.records.len());
}

#[test]
fn transitions_json_round_trip() {
    let t = vec![Transition {
        beta_before: 0.1,
        beta_after: 0.115,
        delta_error: 0.3,
        delta_r0: 2.5,
        affected_classes: vec![3, 8],
        index_before: 4,
    }];
    let mut buf = Vec::new();
    write_transitions_json(&mut buf, &t).unwrap();
    let v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
    assert_eq!(v[0]["affected_classes"], serde_json::json!([3, 8]));
    assert!(v[0].get("index_before").is_none());
    let back = read_transitions_json(buf.as_slice()).unwrap();
    assert_eq!(back[0].beta_after, 0.115);
    assert_eq!(back[0].affected_classes, vec![3, 8]);
}
