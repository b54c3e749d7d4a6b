//! Command-line front end: `train`, `anneal`, `hessian`, `connect`, `toy`, `detect`.
//!
//! Each `cmd_*` function takes a resolved [`ExperimentConfig`], writes its CSV/JSON
//! outputs under `out_dir`, and returns a summary that the binary prints.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::config::{ExperimentConfig, ScheduleKind, ThetaRef};
use crate::error::{Error, Result};
use crate::hessian::{self, HvpConfig, LanczosConfig, SpectrumReport};
use crate::mnist::{self, Dataset, Split};
use crate::nn::{self, NetworkSpec, ParameterVector};
use crate::optim::{self, ConvergencePolicy, TrainConfig};
use crate::pathfinder::{
    self, AnnealConfig, DetectorConfig, RadiusJump, Schedule, Trajectory, TrajectoryRecord,
    Transition,
};
use crate::store::{
    Checkpoint, CheckpointId, CheckpointMeta, CheckpointRepo, CheckpointStore, STORE_ENV,
};
use crate::toy::{self, DescentConfig, GridConfig};

#[derive(Debug, Parser)]
#[command(
    name = "landscape",
    version,
    about = "Loss-landscape exploration by off-center L2 annealing"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// key = value configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Initialization, shuffling and subset seed
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; every command runs on the deterministic single-threaded path.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    /// Stratified training subset size.
    #[arg(long, global = true)]
    pub subset: Option<usize>,
    /// Output directory for CSV and JSON files
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Checkpoint store directory (default: $LANDSCAPE_STORE, then runs/store).
    #[arg(long, global = true)]
    pub store: Option<PathBuf>,
    /// Extra `key=value` overrides, applied after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Train a β = 0 model from a seeded initialization.
    Train,
    /// Anneal from `start` toward `theta_ref` and detect transitions.
    Anneal,
    /// Probe Hessian spectra around a detected transition.
    Hessian,
    /// Anneal from `start` toward `target` on a fine schedule.
    Connect,
    /// Run the 1D toy model.
    Toy,
    /// Re-run transition detection on an existing trajectory CSV.
    Detect,
}

impl Cli {
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => ExperimentConfig::default(),
        };
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(n) = self.subset {
            cfg.subset = (n > 0).then_some(n);
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        if let Some(store) = &self.store {
            cfg.store = Some(store.clone());
        }
        if self.threads == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        Ok(cfg)
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = cli.resolve()?;
    match cli.command {
        Command::Train => {
            let s = cmd_train(&cfg)?;
            println!("checkpoint_id={}", s.checkpoint_id);
            println!("epochs={}", s.epochs);
            println!("train_error={}", s.train_error);
            println!("test_accuracy={}", s.test_accuracy);
        }
        Command::Anneal => {
            let s = cmd_anneal(&cfg)?;
            println!("records={}", s.records);
            println!("final_error={}", s.final_error);
            println!("final_r0={}", s.final_r0);
            println!("transitions={}", s.transitions.len());
            for t in &s.transitions {
                println!(
                    "transition beta={}..{} delta_error={} delta_r0={} classes={:?}",
                    t.beta_before, t.beta_after, t.delta_error, t.delta_r0, t.affected_classes
                );
            }
        }
        Command::Hessian => {
            let s = cmd_hessian(&cfg)?;
            for p in &s.points {
                println!(
                    "beta={} r_ref={} top={} most_negative={}",
                    p.beta, p.r_ref, p.report.ritz_values[0], p.report.most_negative
                );
            }
        }
        Command::Connect => {
            let s = cmd_connect(&cfg)?;
            println!("records={}", s.records);
            println!("max_error={}", s.max_error);
            println!("final_r_ref={}", s.final_r_ref);
            println!("epsilon_dist={}", s.epsilon_dist);
            println!("reached={}", s.reached);
        }
        Command::Toy => {
            let s = cmd_toy(&cfg)?;
            println!("beta_c={}", s.beta_c);
            println!("beta_tilde_c={}", s.beta_tilde_c);
            println!("jump_beta_exact={}", s.jump_beta_exact);
            println!("jump_beta_warm={}", s.jump_beta_warm);
        }
        Command::Detect => {
            let transitions = cmd_detect(&cfg)?;
            println!("transitions={}", transitions.len());
        }
    }
    Ok(())
}

fn out_file(cfg: &ExperimentConfig, name: &str) -> Result<(PathBuf, BufWriter<File>)> {
    fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let path = cfg.out_dir.join(name);
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    Ok((path, BufWriter::new(file)))
}

fn open(path: &Path, hint: &str) -> Result<File> {
    File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => {
            Error::NotFound(format!("{} does not exist; {hint}", path.display()))
        }
        _ => Error::io(path, e),
    })
}

/// Store directory: config, then `$LANDSCAPE_STORE`, then `runs/store`.
pub fn store_path(cfg: &ExperimentConfig) -> PathBuf {
    cfg.store
        .clone()
        .or_else(|| std::env::var_os(STORE_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs/store"))
}

/// Training and test sets, with the training set subsampled when `subset` is smaller.
pub fn load_data(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    let pick = |explicit: &Option<PathBuf>, name: &str| {
        explicit.clone().unwrap_or_else(|| cfg.data_dir.join(name))
    };
    let train = mnist::load_idx(
        &pick(&cfg.train_images, mnist::TRAIN_IMAGES),
        &pick(&cfg.train_labels, mnist::TRAIN_LABELS),
        Split::Train,
    )?;
    let test = mnist::load_idx(
        &pick(&cfg.test_images, mnist::TEST_IMAGES),
        &pick(&cfg.test_labels, mnist::TEST_LABELS),
        Split::Test,
    )?;
    let train = match cfg.subset {
        Some(n) if n < train.len() => mnist::subset(&train, n, cfg.seed)?,
        _ => train,
    };
    for data in [&train, &test] {
        if data.dim() != cfg.architecture.input_dim() {
            return Err(Error::Ingest(format!(
                "images have {} pixels, architecture {} expects {}",
                data.dim(),
                cfg.architecture,
                cfg.architecture.input_dim()
            )));
        }
    }
    Ok((train, test))
}

pub fn train_config(cfg: &ExperimentConfig) -> TrainConfig {
    let mut t = TrainConfig::default();
    t.adam.lr = cfg.lr;
    t.batch_size = cfg.batch_size;
    t.policy = ConvergencePolicy {
        patience_epochs: cfg.patience,
        min_improvement: cfg.min_improvement,
        max_epochs: cfg.max_epochs,
    };
    t
}

pub fn detector_config(cfg: &ExperimentConfig) -> DetectorConfig {
    DetectorConfig {
        error_jump_min: cfg.error_jump_min,
        r_jump_min: match (cfg.r_jump_abs, cfg.r_jump_rel) {
            (Some(a), _) => RadiusJump::Absolute(a),
            (None, Some(r)) => RadiusJump::Relative(r),
            (None, None) => DetectorConfig::default().r_jump_min,
        },
        class_change_min: cfg.class_change_min,
    }
}

fn load_params(
    repo: &CheckpointStore,
    id: &CheckpointId,
    spec: &NetworkSpec,
) -> Result<ParameterVector> {
    let cp = repo.load(id)?;
    if cp.spec() != spec {
        return Err(Error::Config(format!(
            "checkpoint {id} has architecture {}, config says {spec}",
            cp.spec()
        )));
    }
    Ok(cp.into_params())
}

fn resolve_theta_ref(cfg: &ExperimentConfig, repo: &CheckpointStore) -> Result<ParameterVector> {
    let spec = &cfg.architecture;
    match &cfg.theta_ref {
        ThetaRef::Origin => Ok(ParameterVector::zeros(spec.parameter_count())),
        ThetaRef::Checkpoint(id) => load_params(repo, id, spec),
        ThetaRef::Midpoint(a, b) => {
            ParameterVector::midpoint(&load_params(repo, a, spec)?, &load_params(repo, b, spec)?)
        }
    }
}

fn apply_schedule(cfg: &ExperimentConfig, ac: &mut AnnealConfig) {
    if let Some(b) = cfg.beta0 {
        ac.beta0 = b;
    }
    if let Some(b) = cfg.beta_max {
        ac.beta_max = b;
    }
    let kind = cfg.schedule.unwrap_or(match ac.schedule {
        Schedule::Geometric { .. } => ScheduleKind::Geometric,
        Schedule::Linear { .. } => ScheduleKind::Linear,
    });
    ac.schedule = match (kind, ac.schedule) {
        (ScheduleKind::Geometric, Schedule::Geometric { factor }) => Schedule::Geometric {
            factor: cfg.factor.unwrap_or(factor),
        },
        (ScheduleKind::Geometric, _) => Schedule::Geometric {
            factor: cfg.factor.unwrap_or(1.15),
        },
        (ScheduleKind::Linear, Schedule::Linear { delta }) => Schedule::Linear {
            delta: cfg.delta.unwrap_or(delta),
        },
        (ScheduleKind::Linear, _) => Schedule::Linear {
            delta: cfg.delta.unwrap_or(1e-7),
        },
    };
    if let Some(eps) = cfg.epsilon_dist {
        ac.epsilon_dist = eps;
    }
    ac.refine_near_transitions = cfg.refine;
    ac.refine_steps = cfg.refine_steps;
    ac.train = train_config(cfg);
    ac.detector = detector_config(cfg);
    ac.seed = cfg.seed;
}

fn progress_line(r: &TrajectoryRecord) {
    eprintln!(
        "beta={:.6e} error={:.6} test={:.6} r0={:.4} r_ref={:.4} epochs={}",
        r.beta, r.error_train, r.error_test, r.r0, r.r_ref, r.epochs_used
    );
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub checkpoint_id: CheckpointId,
    pub epochs: usize,
    pub train_error: f64,
    pub test_accuracy: f64,
}

/// Trains a β = 0 model from `ParameterVector::init(seed)` and stores it.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<TrainSummary> {
    let (train, test) = load_data(cfg)?;
    let spec = &cfg.architecture;
    let mut repo = CheckpointStore::open(store_path(cfg))?;
    let p0 = ParameterVector::init(spec, cfg.seed);
    let origin = ParameterVector::zeros(spec.parameter_count());
    let mut objective = pathfinder::RegularizedObjective::new(spec, &train, &origin, 0.0)?;
    let outcome = optim::train_to_convergence(&mut objective, &p0, &train_config(cfg), cfg.seed)?;
    if outcome.diverged {
        return Err(Error::Numeric(
            "training diverged to a non-finite loss".into(),
        ));
    }
    let meta = CheckpointMeta::new(0.0, cfg.seed, cfg.lr, None);
    let id = repo.save(&Checkpoint::new(
        spec.clone(),
        outcome.params.clone(),
        meta,
    )?)?;
    Ok(TrainSummary {
        checkpoint_id: id,
        epochs: outcome.epochs,
        train_error: nn::error(spec, &outcome.params, &train.batch())?,
        test_accuracy: mnist::per_class_accuracy(spec, &outcome.params, &test)?.overall,
    })
}

#[derive(Debug, Clone)]
pub struct AnnealSummary {
    pub records: usize,
    pub final_error: f64,
    pub final_r0: f64,
    pub transitions: Vec<Transition>,
    pub trajectory: Trajectory,
}

/// Anneals from `start` toward `theta_ref`; writes `trajectory.csv`,
/// `transitions.json` and `critical_beta.csv`.
pub fn cmd_anneal(cfg: &ExperimentConfig) -> Result<AnnealSummary> {
    let start = cfg.start.clone().ok_or_else(|| {
        Error::Config("anneal needs `start = <checkpoint id>`; run `landscape train` first".into())
    })?;
    let spec = &cfg.architecture;
    let mut repo = CheckpointStore::open(store_path(cfg))?;
    let params0 = load_params(&repo, &start, spec)?;
    let theta_ref = resolve_theta_ref(cfg, &repo)?;
    let (train, test) = load_data(cfg)?;
    let mut ac = AnnealConfig::toward(theta_ref, &params0);
    apply_schedule(cfg, &mut ac);
    let mut progress = progress_line;
    let trajectory = pathfinder::anneal(
        spec,
        &params0,
        &train,
        &test,
        &ac,
        &mut repo,
        Some(&mut progress),
    )?;
    let transitions = pathfinder::detect_transitions(&trajectory.records, &ac.detector);

    let (_, w) = out_file(cfg, "trajectory.csv")?;
    pathfinder::write_trajectory_csv(w, &trajectory.records)?;
    let (_, w) = out_file(cfg, "transitions.json")?;
    pathfinder::write_transitions_json(w, &transitions)?;
    let (_, w) = out_file(cfg, "critical_beta.csv")?;
    pathfinder::write_critical_beta_csv(w, &trajectory.records)?;

    let last = trajectory.final_record();
    Ok(AnnealSummary {
        records: trajectory.records.len(),
        final_error: last.error_train,
        final_r0: last.r0,
        transitions,
        trajectory,
    })
}

#[derive(Debug, Clone)]
pub struct ConnectSummary {
    pub records: usize,
    pub max_error: f64,
    pub final_r_ref: f64,
    pub epsilon_dist: f64,
    pub reached: bool,
    pub trajectory: Trajectory,
}

/// Anneals from `start` toward `target` on the fine linear schedule; writes `connect.csv`.
pub fn cmd_connect(cfg: &ExperimentConfig) -> Result<ConnectSummary> {
    let missing = |k: &str| {
        Error::Config(format!(
            "connect needs `{k} = <checkpoint id>`; run `landscape train` first"
        ))
    };
    let start = cfg.start.clone().ok_or_else(|| missing("start"))?;
    let target = cfg.target.clone().ok_or_else(|| missing("target"))?;
    let spec = &cfg.architecture;
    let mut repo = CheckpointStore::open(store_path(cfg))?;
    let a = load_params(&repo, &start, spec)?;
    let b = load_params(&repo, &target, spec)?;
    let (train, test) = load_data(cfg)?;
    let mut ac = AnnealConfig::connect(b.clone(), &a);
    apply_schedule(cfg, &mut ac);
    let mut progress = progress_line;
    let trajectory = pathfinder::connect(
        spec,
        &a,
        &b,
        &train,
        &test,
        &ac,
        &mut repo,
        Some(&mut progress),
    )?;
    let (_, w) = out_file(cfg, "connect.csv")?;
    pathfinder::write_trajectory_csv(w, &trajectory.records)?;
    let last = trajectory.final_record();
    Ok(ConnectSummary {
        records: trajectory.records.len(),
        max_error: trajectory.max_error_train(),
        final_r_ref: last.r_ref,
        epsilon_dist: ac.epsilon_dist,
        reached: last.r_ref < ac.epsilon_dist,
        trajectory,
    })
}

#[derive(Debug, Clone)]
pub struct SpectrumPoint {
    pub beta: f64,
    pub r_ref: f64,
    /// Steps before the transition; 0 is the last record before the jump, -1 the first after.
    pub steps_before: isize,
    pub report: SpectrumReport,
}

#[derive(Debug, Clone)]
pub struct HessianSummary {
    pub transition: Transition,
    pub points: Vec<SpectrumPoint>,
}

fn find_record(records: &[TrajectoryRecord], beta: f64) -> Result<usize> {
    records.iter().position(|r| r.beta == beta).ok_or_else(|| {
        Error::NotFound(format!(
            "no trajectory record at beta {beta}; re-run `landscape anneal`"
        ))
    })
}

/// Probes the error spectrum at the `hessian_points` checkpoints up to the chosen
/// transition and at the first one after it, with `r_ref` measured to the midpoint
/// of the bracketing checkpoints. Writes `spectrum.csv`.
pub fn cmd_hessian(cfg: &ExperimentConfig) -> Result<HessianSummary> {
    let hint = "run `landscape anneal` first";
    let traj_path = cfg
        .trajectory
        .clone()
        .unwrap_or_else(|| cfg.out_dir.join("trajectory.csv"));
    let trans_path = cfg
        .transitions
        .clone()
        .unwrap_or_else(|| cfg.out_dir.join("transitions.json"));
    let records = pathfinder::read_trajectory_csv(open(&traj_path, hint)?)?;
    let transitions = pathfinder::read_transitions_json(open(&trans_path, hint)?)?;
    let transition = transitions.get(cfg.transition).cloned().ok_or_else(|| {
        Error::NotFound(format!(
            "transition {} requested but {} lists {}; {hint}",
            cfg.transition,
            trans_path.display(),
            transitions.len()
        ))
    })?;
    let before = find_record(&records, transition.beta_before)?;
    let after = find_record(&records, transition.beta_after)?;
    let spec = &cfg.architecture;
    let repo = CheckpointStore::open(store_path(cfg))?;
    let theta_ref = ParameterVector::midpoint(
        &load_params(&repo, &records[before].checkpoint_id, spec)?,
        &load_params(&repo, &records[after].checkpoint_id, spec)?,
    )?;
    let (train, _) = load_data(cfg)?;
    let hvp_cfg = HvpConfig {
        mode: cfg.hessian_mode,
        fd_step: cfg.fd_step,
        subset_size: cfg.hessian_subset,
        seed: cfg.seed,
    };
    let lanczos = LanczosConfig {
        k: cfg.hessian_k,
        max_iters: cfg.hessian_max_iters,
        seed: cfg.seed,
        tol: cfg.hessian_tol,
    };
    let first = (before + 1).saturating_sub(cfg.hessian_points.max(1));
    let mut points = Vec::new();
    for idx in (first..=before).chain([after]) {
        let record = &records[idx];
        let params = load_params(&repo, &record.checkpoint_id, spec)?;
        let report = hessian::error_spectrum(spec, &params, &train, &hvp_cfg, &lanczos)?;
        eprintln!(
            "beta={:.6e} top={:.6} most_negative={:.6}",
            record.beta, report.ritz_values[0], report.most_negative
        );
        points.push(SpectrumPoint {
            beta: record.beta,
            r_ref: nn::radial_distance(&params, &theta_ref)?,
            steps_before: before as isize - idx as isize,
            report,
        });
    }
    let rows: Vec<(f64, SpectrumReport)> =
        points.iter().map(|p| (p.r_ref, p.report.clone())).collect();
    let (_, w) = out_file(cfg, "spectrum.csv")?;
    hessian::write_spectrum_csv(w, &rows)?;
    Ok(HessianSummary { transition, points })
}

#[derive(Debug, Clone, Serialize)]
pub struct ToySummary {
    pub landscape: String,
    pub beta_c: f64,
    pub beta_tilde_c: f64,
    pub jump_beta_exact: f64,
    pub jump_beta_warm: f64,
    pub theta_before: f64,
    pub theta_after: f64,
    pub discontinuities_exact: usize,
    pub discontinuities_warm: usize,
    pub beta_step: f64,
}

/// Exact and warm-started toy anneals toward the origin; writes `toy.csv`,
/// `toy_warm.csv`, `mechanism.csv` and `toy_summary.json`.
pub fn cmd_toy(cfg: &ExperimentConfig) -> Result<ToySummary> {
    let landscape = toy::landscape_by_name(&cfg.toy_landscape)?;
    let landscape = landscape.as_ref();
    let grid = GridConfig {
        grid_n: cfg.toy_grid,
        ..GridConfig::default()
    };
    let theta_ref = 0.0;
    let betas = toy::linear_schedule(0.0, cfg.toy_beta_max, cfg.toy_beta_step)?;
    let exact = toy::toy_anneal(landscape, &betas, theta_ref, &grid)?;
    let warm = toy::toy_pathfinder(
        landscape,
        &betas,
        theta_ref,
        exact.minimizers[0],
        &DescentConfig::default(),
    )?;
    let i = exact.jump_index;
    let eq = toy::toy_equal_loss_beta(landscape, theta_ref, betas[i], betas[i + 1], &grid)?;
    let tilde = toy::toy_critical_beta(landscape, exact.minimizers[i], theta_ref)?;

    let (_, w) = out_file(cfg, "toy.csv")?;
    toy::write_toy_csv(w, &exact)?;
    let (_, w) = out_file(cfg, "toy_warm.csv")?;
    toy::write_toy_csv(w, &warm)?;
    let (_, w) = out_file(cfg, "mechanism.csv")?;
    let shown = [0.0, 0.5 * eq.beta_c, eq.beta_c, warm.jump_beta];
    toy::write_mechanism_csv(w, landscape, &shown, theta_ref, cfg.toy_samples)?;

    let summary = ToySummary {
        landscape: landscape.name().to_string(),
        beta_c: eq.beta_c,
        beta_tilde_c: tilde,
        jump_beta_exact: exact.jump_beta,
        jump_beta_warm: warm.jump_beta,
        theta_before: exact.minimizers[i],
        theta_after: exact.minimizers[i + 1],
        discontinuities_exact: exact.discontinuities().len(),
        discontinuities_warm: warm.discontinuities().len(),
        beta_step: cfg.toy_beta_step,
    };
    let (_, w) = out_file(cfg, "toy_summary.json")?;
    serde_json::to_writer_pretty(w, &summary).map_err(|e| Error::Format(e.to_string()))?;
    Ok(summary)
}

/// Re-runs detection on `trajectory` (default `out_dir/trajectory.csv`) and writes
/// `transitions` (default `out_dir/transitions.json`).
pub fn cmd_detect(cfg: &ExperimentConfig) -> Result<Vec<Transition>> {
    let traj_path = cfg
        .trajectory
        .clone()
        .unwrap_or_else(|| cfg.out_dir.join("trajectory.csv"));
    let records =
        pathfinder::read_trajectory_csv(open(&traj_path, "run `landscape anneal` first")?)?;
    let transitions = pathfinder::detect_transitions(&records, &detector_config(cfg));
    let w = match &cfg.transitions {
        Some(path) => {
            let file = File::create(path).map_err(|e| Error::io(path, e))?;
            BufWriter::new(file)
        }
        None => out_file(cfg, "transitions.json")?.1,
    };
    pathfinder::write_transitions_json(w, &transitions)?;
    Ok(transitions)
}
