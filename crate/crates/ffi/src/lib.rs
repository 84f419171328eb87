//! C ABI for the simulator.
//!
//! Every function is panic-safe, returns a [`FedprefStatus`] code, and
//! reports detail through a thread-local message readable with
//! [`fedpref_last_error_message`]. Datasets, populations and models are
//! opaque handles owned by this library; each `*_free` accepts null.
//!
//! The committed header lives at `include/fedpref.h`; `cbindgen.toml` is
//! provided to regenerate it with `cbindgen --config cbindgen.toml`.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use libc::{c_char, size_t};

use fedpref::data::{split_stats, DatasetSplit, SplitName};
use fedpref::evaluation::evaluate_population;
use fedpref::features::featurize_split;
use fedpref::federation::{run_federation, FederationConfig};
use fedpref::labeling::{make_population, Client, ClientSpec, DegeneratePriorPolicy};
use fedpref::model::{ModelParams, Objective};
use fedpref::Error;

/// Status codes returned by every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FedprefStatus {
    Ok = 0,
    IoError = 1,
    ParseError = 2,
    DomainError = 3,
    NumericError = 4,
    NullArgument = 5,
    InvalidUtf8 = 6,
    Internal = 7,
}

/// Opaque dataset handle.
pub struct FedprefDataset {
    split: DatasetSplit,
}

/// Opaque population handle: clients with labels derived from the training
/// split they were created against.
pub struct FedprefPopulation {
    clients: Vec<Client>,
}

/// Opaque model handle.
pub struct FedprefModel {
    params: ModelParams,
}

/// Plain-old-data run configuration. `clients_per_round` 0 means full
/// participation.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct FedprefConfig {
    pub rounds: u64,
    pub clients_per_round: u64,
    pub local_epochs: u64,
    pub batch_size: u64,
    pub learning_rate: f64,
    pub seed: u64,
    pub feature_dim: u64,
    pub hash_seed: u64,
    pub clamp_degenerate_priors: bool,
    pub both_classes_loss: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let sanitized = msg.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &Error) -> FedprefStatus {
    match err {
        Error::Io { .. } => FedprefStatus::IoError,
        Error::Parse { .. } | Error::Json(_) | Error::Checkpoint(_) => FedprefStatus::ParseError,
        Error::Domain(_) | Error::DegeneratePriors { .. } | Error::ShapeMismatch { .. } => {
            FedprefStatus::DomainError
        }
        Error::Numeric(_) => FedprefStatus::NumericError,
        Error::ClientUpdate { source, .. } => status_of(source),
    }
}

fn fail(err: &Error) -> FedprefStatus {
    set_last_error(&err.to_string());
    status_of(err)
}

/// Run a closure, translating panics into `Internal`.
fn guarded(f: impl FnOnce() -> FedprefStatus) -> FedprefStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_last_error("internal panic");
            FedprefStatus::Internal
        }
    }
}

/// # Safety
/// `ptr` must be null or a valid NUL-terminated string.
unsafe fn path_arg(ptr: *const c_char) -> Result<PathBuf, FedprefStatus> {
    if ptr.is_null() {
        set_last_error("null path argument");
        return Err(FedprefStatus::NullArgument);
    }
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => {
            set_last_error("path is not valid UTF-8");
            Err(FedprefStatus::InvalidUtf8)
        }
    }
}

fn require<'a, T>(ptr: *const T, what: &str) -> Result<&'a T, FedprefStatus> {
    // SAFETY: the caller contract of every entry point requires live handles
    unsafe { ptr.as_ref() }.ok_or_else(|| {
        set_last_error(&format!("null {what} argument"));
        FedprefStatus::NullArgument
    })
}

fn config_of(c: &FedprefConfig) -> FederationConfig {
    FederationConfig {
        rounds: c.rounds as usize,
        clients_per_round: match c.clients_per_round {
            0 => None,
            k => Some(k as usize),
        },
        local_epochs: c.local_epochs as usize,
        batch_size: c.batch_size as usize,
        learning_rate: c.learning_rate,
        seed: c.seed,
        feature_dim: c.feature_dim as usize,
        hash_seed: c.hash_seed,
        clamp_degenerate_priors: c.clamp_degenerate_priors,
        objective: if c.both_classes_loss {
            Objective::BothClassesNll
        } else {
            Objective::TrueLabelNll
        },
    }
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn fedpref_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message describing the most recent error on this thread. Valid until
/// the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn fedpref_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Fill `out` with the default run configuration.
///
/// # Safety
/// `out` must be null or a valid location for one `FedprefConfig`.
#[no_mangle]
pub unsafe extern "C" fn fedpref_config_default(out: *mut FedprefConfig) -> FedprefStatus {
    guarded(|| {
        if out.is_null() {
            set_last_error("null out argument");
            return FedprefStatus::NullArgument;
        }
        let d = FederationConfig::default();
        let config = FedprefConfig {
            rounds: d.rounds as u64,
            clients_per_round: 0,
            local_epochs: d.local_epochs as u64,
            batch_size: d.batch_size as u64,
            learning_rate: d.learning_rate,
            seed: d.seed,
            feature_dim: d.feature_dim as u64,
            hash_seed: d.hash_seed,
            clamp_degenerate_priors: d.clamp_degenerate_priors,
            both_classes_loss: false,
        };
        // SAFETY: `out` is non-null and the caller promises it is writable.
        unsafe { out.write(config) };
        FedprefStatus::Ok
    })
}

/// Load a dataset from a CSV file (or a JSON cache when the path ends in
/// `.json`).
///
/// # Safety
/// `path` must be a valid NUL-terminated string; `out` must be a valid
/// location for one pointer.
#[no_mangle]
pub unsafe extern "C" fn fedpref_dataset_load(
    path: *const c_char,
    out: *mut *mut FedprefDataset,
) -> FedprefStatus {
    guarded(|| {
        if out.is_null() {
            set_last_error("null out argument");
            return FedprefStatus::NullArgument;
        }
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match DatasetSplit::load_auto(&path, SplitName::Train) {
            Ok(split) => {
                out.write(Box::into_raw(Box::new(FedprefDataset { split })));
                FedprefStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Number of records, 0 for a null handle.
///
/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fedpref_dataset_len(dataset: *const FedprefDataset) -> size_t {
    match dataset.as_ref() {
        Some(d) => d.split.records.len(),
        None => 0,
    }
}

/// Mean/min/max of the records' mean ratings. Null metric pointers are
/// skipped.
///
/// # Safety
/// `dataset` must be a live handle; metric pointers must be null or
/// writable.
#[no_mangle]
pub unsafe extern "C" fn fedpref_dataset_stats(
    dataset: *const FedprefDataset,
    mean: *mut f64,
    min: *mut f64,
    max: *mut f64,
) -> FedprefStatus {
    guarded(|| {
        let dataset = match require(dataset, "dataset") {
            Ok(d) => d,
            Err(s) => return s,
        };
        match split_stats(&dataset.split) {
            Ok(stats) => {
                // SAFETY: non-null pointers come from the caller's locals.
                unsafe {
                    if !mean.is_null() {
                        mean.write(stats.mean_rating);
                    }
                    if !min.is_null() {
                        min.write(stats.min_rating);
                    }
                    if !max.is_null() {
                        max.write(stats.max_rating);
                    }
                }
                FedprefStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// # Safety
/// `dataset` must be null or a pointer from `fedpref_dataset_load`, not
/// yet freed.
#[no_mangle]
pub unsafe extern "C" fn fedpref_dataset_free(dataset: *mut FedprefDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Build a population of `n` clients with the given preference thresholds;
/// betas follow the default policy, labels and priors come from `train`.
///
/// # Safety
/// `alphas` must point to `n` doubles; `train` must be a live dataset
/// handle; `out` must be a valid location for one pointer.
#[no_mangle]
pub unsafe extern "C" fn fedpref_population_create(
    alphas: *const f64,
    n: size_t,
    train: *const FedprefDataset,
    clamp_degenerate_priors: bool,
    out: *mut *mut FedprefPopulation,
) -> FedprefStatus {
    guarded(|| {
        if out.is_null() || (alphas.is_null() && n > 0) {
            set_last_error("null argument");
            return FedprefStatus::NullArgument;
        }
        let train = match require(train, "train dataset") {
            Ok(t) => t,
            Err(s) => return s,
        };
        let specs: Vec<ClientSpec> = std::slice::from_raw_parts(alphas, n)
            .iter()
            .map(|&alpha| ClientSpec { alpha, beta: None })
            .collect();
        let policy = if clamp_degenerate_priors {
            DegeneratePriorPolicy::Clamp
        } else {
            DegeneratePriorPolicy::Reject
        };
        match make_population(&specs, &train.split, policy) {
            Ok(clients) => {
                out.write(Box::into_raw(Box::new(FedprefPopulation { clients })));
                FedprefStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Number of clients, 0 for a null handle.
///
/// # Safety
/// `population` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fedpref_population_len(population: *const FedprefPopulation) -> size_t {
    match population.as_ref() {
        Some(p) => p.clients.len(),
        None => 0,
    }
}

/// # Safety
/// `population` must be null or a pointer from `fedpref_population_create`,
/// not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fedpref_population_free(population: *mut FedprefPopulation) {
    if !population.is_null() {
        drop(Box::from_raw(population));
    }
}

/// Run federated training of the population on `train` and return the
/// final global model.
///
/// # Safety
/// All handles must be live; `out` must be a valid location for one
/// pointer. The population must have been created against a dataset of the
/// same length as `train`.
#[no_mangle]
pub unsafe extern "C" fn fedpref_train(
    train: *const FedprefDataset,
    population: *const FedprefPopulation,
    config: *const FedprefConfig,
    out: *mut *mut FedprefModel,
) -> FedprefStatus {
    guarded(|| {
        if out.is_null() {
            set_last_error("null out argument");
            return FedprefStatus::NullArgument;
        }
        let (train, population, config) = match (
            require(train, "train dataset"),
            require(population, "population"),
            require(config, "config"),
        ) {
            (Ok(t), Ok(p), Ok(c)) => (t, p, c),
            (Err(s), _, _) | (_, Err(s), _) | (_, _, Err(s)) => return s,
        };
        let cfg = config_of(config);
        let features = featurize_split(&train.split, cfg.feature_dim, cfg.hash_seed);
        match run_federation(&population.clients, &features, &cfg) {
            Ok(run) => {
                out.write(Box::into_raw(Box::new(FedprefModel {
                    params: run.final_global,
                })));
                FedprefStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Evaluate a model over the population on `eval_data` with per-client
/// rescaling; writes the overall macro precision/recall/F1 (fractions in
/// [0, 1]) into any non-null metric pointers.
///
/// # Safety
/// All handles must be live; metric pointers must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn fedpref_evaluate(
    model: *const FedprefModel,
    population: *const FedprefPopulation,
    eval_data: *const FedprefDataset,
    config: *const FedprefConfig,
    precision: *mut f64,
    recall: *mut f64,
    f1: *mut f64,
) -> FedprefStatus {
    guarded(|| {
        let (model, population, eval_data, config) = match (
            require(model, "model"),
            require(population, "population"),
            require(eval_data, "dataset"),
            require(config, "config"),
        ) {
            (Ok(m), Ok(p), Ok(d), Ok(c)) => (m, p, d, c),
            (Err(s), _, _, _) | (_, Err(s), _, _) | (_, _, Err(s), _) | (_, _, _, Err(s)) => {
                return s
            }
        };
        let cfg = config_of(config);
        let features = featurize_split(&eval_data.split, cfg.feature_dim, cfg.hash_seed);
        match evaluate_population(
            &model.params,
            &population.clients,
            &eval_data.split,
            &features,
        ) {
            Ok(report) => {
                if !precision.is_null() {
                    precision.write(report.overall_p);
                }
                if !recall.is_null() {
                    recall.write(report.overall_r);
                }
                if !f1.is_null() {
                    f1.write(report.overall_f1);
                }
                FedprefStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// # Safety
/// `model` must be a live handle; `path` a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fedpref_model_save(
    model: *const FedprefModel,
    path: *const c_char,
) -> FedprefStatus {
    guarded(|| {
        let model = match require(model, "model") {
            Ok(m) => m,
            Err(s) => return s,
        };
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match model.params.save(&path) {
            Ok(()) => FedprefStatus::Ok,
            Err(e) => fail(&e),
        }
    })
}

/// # Safety
/// `path` must be a valid NUL-terminated string; `out` a valid location
/// for one pointer.
#[no_mangle]
pub unsafe extern "C" fn fedpref_model_load(
    path: *const c_char,
    out: *mut *mut FedprefModel,
) -> FedprefStatus {
    guarded(|| {
        if out.is_null() {
            set_last_error("null out argument");
            return FedprefStatus::NullArgument;
        }
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match ModelParams::load(&path) {
            Ok(params) => {
                out.write(Box::into_raw(Box::new(FedprefModel { params })));
                FedprefStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// # Safety
/// `model` must be null or a pointer from `fedpref_train` /
/// `fedpref_model_load`, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fedpref_model_free(model: *mut FedprefModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
