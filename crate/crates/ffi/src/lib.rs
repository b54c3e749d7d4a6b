//! C ABI over `landscape`.
//!
//! Objects cross the boundary as opaque handles (`LsNetwork`, `LsDataset`,
//! `LsTrajectory`) created by `ls_*_new`/`ls_*_load` and released by the matching
//! `ls_*_free`. Every fallible call returns an [`LsStatus`]; on failure the message
//! is kept per thread and can be copied out with [`ls_last_error_message`].
//! Panics never unwind into the caller and are reported as `LS_STATUS_PANIC`.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::fs::File;
use std::io::BufWriter;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use landscape::hessian::{self, HvpConfig};
use landscape::mnist::{self, Dataset, Split};
use landscape::nn::{self, NetworkSpec, ParameterVector};
use landscape::pathfinder::{self, AnnealConfig, Schedule, Trajectory};
use landscape::store::{CheckpointRepo, MemoryStore};
use landscape::toy::{self, GaussianWell, GridConfig};
use landscape::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LsStatus {
    Ok = 0,
    NullPointer = 1,
    Config = 2,
    Ingest = 3,
    Numeric = 4,
    Format = 5,
    NotFound = 6,
    Io = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

impl From<&Error> for LsStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Config(_) => LsStatus::Config,
            Error::Ingest(_) => LsStatus::Ingest,
            Error::Numeric(_) => LsStatus::Numeric,
            Error::Format(_) => LsStatus::Format,
            Error::NotFound(_) => LsStatus::NotFound,
            Error::Io { .. } => LsStatus::Io,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

enum Failure {
    Status(LsStatus, String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn null(what: &str) -> Failure {
    Failure::Status(LsStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> LsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            LsStatus::Ok
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            LsStatus::from(&e)
        }
        Ok(Err(Failure::Status(s, msg))) => {
            set_error(msg);
            s
        }
        Err(_) => {
            set_error("internal panic");
            LsStatus::Panic
        }
    }
}

unsafe fn input<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn output<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn path_arg<'a>(p: *const c_char, what: &str) -> Result<&'a Path, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Status(LsStatus::Config, format!("{what} is not valid UTF-8")))?;
    Ok(Path::new(s))
}

fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out"));
    }
    // SAFETY: `out` is non-null and points to caller-owned storage for one pointer.
    unsafe { *out = Box::into_raw(Box::new(value)) };
    Ok(())
}

fn check_len(len: usize, expected: usize, what: &str) -> Result<(), Failure> {
    if len != expected {
        return Err(Failure::Status(
            LsStatus::BufferTooSmall,
            format!("{what} has length {len}, expected {expected}"),
        ));
    }
    Ok(())
}

/// Network architecture plus parameters.
pub struct LsNetwork {
    spec: NetworkSpec,
    params: ParameterVector,
}

/// Images in `[0, 1]` with integer labels.
pub struct LsDataset {
    data: Dataset,
}

/// Converged records of an annealing run, with their parameters.
pub struct LsTrajectory {
    trajectory: Trajectory,
    store: MemoryStore,
}

/// One converged point of a trajectory.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct LsRecord {
    pub beta: f64,
    pub error_train: f64,
    pub error_test: f64,
    pub loss: f64,
    pub r0: f64,
    pub r_ref: f64,
    pub acc_overall: f64,
    pub epochs_used: usize,
}

/// Annealing options; zero or negative values select the defaults noted per field.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct LsAnnealOptions {
    /// Default 1e-6.
    pub beta0: f64,
    /// Default 1.
    pub beta_max: f64,
    /// Geometric factor; default 1.15.
    pub factor: f64,
    /// Default 0.0015.
    pub lr: f64,
    /// Default 64.
    pub batch_size: usize,
    /// Default 5.
    pub patience: usize,
    /// Default 500.
    pub max_epochs: usize,
    /// Default 1e-2 times the norm of the start parameters.
    pub epsilon_dist: f64,
    pub seed: u64,
}

/// Copies the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length excluding the NUL.
#[no_mangle]
pub unsafe extern "C" fn ls_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ls_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// New network with `n_layers` sizes (input first), initialized from `seed`.
#[no_mangle]
pub unsafe extern "C" fn ls_network_new(
    layer_sizes: *const usize,
    n_layers: usize,
    seed: u64,
    out: *mut *mut LsNetwork,
) -> LsStatus {
    guard(|| {
        let spec = NetworkSpec::new(input(layer_sizes, n_layers, "layer_sizes")?.to_vec())?;
        let params = ParameterVector::init(&spec, seed);
        put(out, LsNetwork { spec, params })
    })
}

#[no_mangle]
pub unsafe extern "C" fn ls_network_free(net: *mut LsNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Number of parameters, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn ls_network_parameter_count(net: *const LsNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.params.len())
}

#[no_mangle]
pub unsafe extern "C" fn ls_network_get_params(
    net: *const LsNetwork,
    out: *mut f64,
    len: usize,
) -> LsStatus {
    guard(|| {
        let net = handle(net, "net")?;
        check_len(len, net.params.len(), "params")?;
        output(out, len, "out")?.copy_from_slice(net.params.as_slice());
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ls_network_set_params(
    net: *mut LsNetwork,
    params: *const f64,
    len: usize,
) -> LsStatus {
    guard(|| {
        let net = net.as_mut().ok_or_else(|| null("net"))?;
        check_len(len, net.params.len(), "params")?;
        net.params = ParameterVector::new(input(params, len, "params")?.to_vec())?;
        Ok(())
    })
}

/// Dataset from `n` row-major images of `dim` pixels and `n` labels.
#[no_mangle]
pub unsafe extern "C" fn ls_dataset_new(
    images: *const f64,
    labels: *const u32,
    n: usize,
    dim: usize,
    out: *mut *mut LsDataset,
) -> LsStatus {
    guard(|| {
        let total = n
            .checked_mul(dim)
            .ok_or_else(|| Failure::Status(LsStatus::Config, "n * dim overflows".into()))?;
        let x = input(images, total, "images")?.to_vec();
        let y = input(labels, n, "labels")?
            .iter()
            .map(|&l| l as usize)
            .collect();
        let data = Dataset::new(x, y, dim, Split::Train)?;
        put(out, LsDataset { data })
    })
}

/// Dataset from an IDX image file and an IDX label file.
#[no_mangle]
pub unsafe extern "C" fn ls_dataset_load_idx(
    images_path: *const c_char,
    labels_path: *const c_char,
    out: *mut *mut LsDataset,
) -> LsStatus {
    guard(|| {
        let data = mnist::load_idx(
            path_arg(images_path, "images_path")?,
            path_arg(labels_path, "labels_path")?,
            Split::Train,
        )?;
        put(out, LsDataset { data })
    })
}

#[no_mangle]
pub unsafe extern "C" fn ls_dataset_free(data: *mut LsDataset) {
    if !data.is_null() {
        drop(Box::from_raw(data));
    }
}

#[no_mangle]
pub unsafe extern "C" fn ls_dataset_len(data: *const LsDataset) -> usize {
    data.as_ref().map_or(0, |d| d.data.len())
}

/// Mean cross-entropy of `net` on `data`.
#[no_mangle]
pub unsafe extern "C" fn ls_error(
    net: *const LsNetwork,
    data: *const LsDataset,
    out: *mut f64,
) -> LsStatus {
    guard(|| {
        let net = handle(net, "net")?;
        let data = handle(data, "data")?;
        let e = nn::error(&net.spec, &net.params, &data.data.batch())?;
        *output(out, 1, "out")?.first_mut().unwrap() = e;
        Ok(())
    })
}

/// Error and its gradient; `grad` must hold `ls_network_parameter_count` values.
/// `error_out` may be null.
#[no_mangle]
pub unsafe extern "C" fn ls_gradient(
    net: *const LsNetwork,
    data: *const LsDataset,
    grad: *mut f64,
    len: usize,
    error_out: *mut f64,
) -> LsStatus {
    guard(|| {
        let net = handle(net, "net")?;
        let data = handle(data, "data")?;
        check_len(len, net.params.len(), "grad")?;
        let (e, g) = nn::error_and_gradient(&net.spec, &net.params, &data.data.batch())?;
        output(grad, len, "grad")?.copy_from_slice(g.as_slice());
        if !error_out.is_null() {
            *error_out = e;
        }
        Ok(())
    })
}

/// Exact Hessian-vector product of the error on all of `data`.
#[no_mangle]
pub unsafe extern "C" fn ls_hvp(
    net: *const LsNetwork,
    data: *const LsDataset,
    v: *const f64,
    out: *mut f64,
    len: usize,
) -> LsStatus {
    guard(|| {
        let net = handle(net, "net")?;
        let data = handle(data, "data")?;
        check_len(len, net.params.len(), "v")?;
        let v = ParameterVector::new(input(v, len, "v")?.to_vec())?;
        let cfg = HvpConfig {
            subset_size: data.data.len(),
            ..HvpConfig::default()
        };
        let hv = hessian::hvp(&net.spec, &net.params, &v, &data.data, &cfg)?;
        output(out, len, "out")?.copy_from_slice(hv.as_slice());
        Ok(())
    })
}

/// `−grad·(params − theta_ref) / (2‖params − theta_ref‖²)`.
#[no_mangle]
pub unsafe extern "C" fn ls_critical_beta(
    grad: *const f64,
    params: *const f64,
    theta_ref: *const f64,
    len: usize,
    out: *mut f64,
) -> LsStatus {
    guard(|| {
        let g = ParameterVector::new(input(grad, len, "grad")?.to_vec())?;
        let p = ParameterVector::new(input(params, len, "params")?.to_vec())?;
        let r = ParameterVector::new(input(theta_ref, len, "theta_ref")?.to_vec())?;
        *output(out, 1, "out")?.first_mut().unwrap() = pathfinder::critical_beta(&g, &p, &r)?;
        Ok(())
    })
}

/// Anneals `net`'s parameters toward `theta_ref` (the origin when null) on a
/// geometric schedule. `test` may be null, in which case `train` is used for both.
#[no_mangle]
pub unsafe extern "C" fn ls_anneal(
    net: *const LsNetwork,
    train: *const LsDataset,
    test: *const LsDataset,
    theta_ref: *const f64,
    theta_ref_len: usize,
    options: *const LsAnnealOptions,
    out: *mut *mut LsTrajectory,
) -> LsStatus {
    guard(|| {
        let net = handle(net, "net")?;
        let train = &handle(train, "train")?.data;
        let test = if test.is_null() {
            train
        } else {
            &handle(test, "test")?.data
        };
        let opts = options.as_ref().copied().unwrap_or_default();
        let reference = if theta_ref.is_null() {
            ParameterVector::zeros(net.params.len())
        } else {
            check_len(theta_ref_len, net.params.len(), "theta_ref")?;
            ParameterVector::new(input(theta_ref, theta_ref_len, "theta_ref")?.to_vec())?
        };
        let mut cfg = AnnealConfig::toward(reference, &net.params);
        let pick = |v: f64, d: f64| if v > 0.0 { v } else { d };
        cfg.beta0 = pick(opts.beta0, cfg.beta0);
        cfg.beta_max = pick(opts.beta_max, cfg.beta_max);
        cfg.schedule = Schedule::Geometric {
            factor: pick(opts.factor, 1.15),
        };
        cfg.epsilon_dist = pick(opts.epsilon_dist, cfg.epsilon_dist);
        cfg.train.adam.lr = pick(opts.lr, cfg.train.adam.lr);
        if opts.batch_size > 0 {
            cfg.train.batch_size = opts.batch_size;
        }
        if opts.patience > 0 {
            cfg.train.policy.patience_epochs = opts.patience;
        }
        if opts.max_epochs > 0 {
            cfg.train.policy.max_epochs = opts.max_epochs;
        }
        cfg.seed = opts.seed;
        let mut store = MemoryStore::new();
        let trajectory =
            pathfinder::anneal(&net.spec, &net.params, train, test, &cfg, &mut store, None)?;
        put(out, LsTrajectory { trajectory, store })
    })
}

#[no_mangle]
pub unsafe extern "C" fn ls_trajectory_free(traj: *mut LsTrajectory) {
    if !traj.is_null() {
        drop(Box::from_raw(traj));
    }
}

#[no_mangle]
pub unsafe extern "C" fn ls_trajectory_len(traj: *const LsTrajectory) -> usize {
    traj.as_ref().map_or(0, |t| t.trajectory.records.len())
}

#[no_mangle]
pub unsafe extern "C" fn ls_trajectory_record(
    traj: *const LsTrajectory,
    index: usize,
    out: *mut LsRecord,
) -> LsStatus {
    guard(|| {
        let t = handle(traj, "traj")?;
        let r = t.trajectory.records.get(index).ok_or_else(|| {
            Failure::Status(
                LsStatus::NotFound,
                format!("record {index} out of {}", t.trajectory.records.len()),
            )
        })?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = LsRecord {
            beta: r.beta,
            error_train: r.error_train,
            error_test: r.error_test,
            loss: r.loss,
            r0: r.r0,
            r_ref: r.r_ref,
            acc_overall: r.accuracy.overall,
            epochs_used: r.epochs_used,
        };
        Ok(())
    })
}

/// Parameters of record `index`; `out` must hold the network's parameter count.
#[no_mangle]
pub unsafe extern "C" fn ls_trajectory_params(
    traj: *const LsTrajectory,
    index: usize,
    out: *mut f64,
    len: usize,
) -> LsStatus {
    guard(|| {
        let t = handle(traj, "traj")?;
        let r = t.trajectory.records.get(index).ok_or_else(|| {
            Failure::Status(
                LsStatus::NotFound,
                format!("record {index} out of {}", t.trajectory.records.len()),
            )
        })?;
        let params = t.store.load(&r.checkpoint_id)?.into_params();
        check_len(len, params.len(), "out")?;
        output(out, len, "out")?.copy_from_slice(params.as_slice());
        Ok(())
    })
}

/// Number of transitions found with the default detector.
#[no_mangle]
pub unsafe extern "C" fn ls_trajectory_transition_count(
    traj: *const LsTrajectory,
    out: *mut usize,
) -> LsStatus {
    guard(|| {
        let t = handle(traj, "traj")?;
        let n =
            pathfinder::detect_transitions(&t.trajectory.records, &t.trajectory.config.detector)
                .len();
        *out.as_mut().ok_or_else(|| null("out"))? = n;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ls_trajectory_write_csv(
    traj: *const LsTrajectory,
    path: *const c_char,
) -> LsStatus {
    guard(|| {
        let t = handle(traj, "traj")?;
        let path = path_arg(path, "path")?;
        let file = File::create(path)
            .map_err(|e| Failure::Status(LsStatus::Io, format!("{}: {e}", path.display())))?;
        pathfinder::write_trajectory_csv(BufWriter::new(file), &t.trajectory.records)?;
        Ok(())
    })
}

/// Global minimizer of the default toy loss `1 − exp(−(θ−2)²) + β(θ − θ_ref)²`.
/// Any of the output pointers may be null.
#[no_mangle]
pub unsafe extern "C" fn ls_toy_minimizer(
    beta: f64,
    theta_ref: f64,
    theta: *mut f64,
    loss: *mut f64,
    error: *mut f64,
) -> LsStatus {
    guard(|| {
        let m = toy::toy_global_minimizer(
            &GaussianWell::default(),
            beta,
            theta_ref,
            &GridConfig::default(),
        )?;
        for (p, v) in [(theta, m.theta), (loss, m.loss), (error, m.error)] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Equal-loss strength of the default toy model inside `[beta_lo, beta_hi]`.
#[no_mangle]
pub unsafe extern "C" fn ls_toy_equal_loss_beta(
    theta_ref: f64,
    beta_lo: f64,
    beta_hi: f64,
    out: *mut f64,
) -> LsStatus {
    guard(|| {
        let eq = toy::toy_equal_loss_beta(
            &GaussianWell::default(),
            theta_ref,
            beta_lo,
            beta_hi,
            &GridConfig::default(),
        )?;
        *out.as_mut().ok_or_else(|| null("out"))? = eq.beta_c;
        Ok(())
    })
}
