//! Exercises the C entry points the way a foreign binding would: through
//! raw pointers and status codes.

use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::ptr;

use fedpref_ffi::*;

fn fixture(name: &str) -> CString {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/data")
        .join(name);
    CString::new(path.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    unsafe {
        CStr::from_ptr(fedpref_last_error_message())
            .to_string_lossy()
            .into_owned()
    }
}

fn load_dataset(name: &str) -> *mut FedprefDataset {
    let mut dataset: *mut FedprefDataset = ptr::null_mut();
    let status = unsafe { fedpref_dataset_load(fixture(name).as_ptr(), &mut dataset) };
    assert_eq!(status, FedprefStatus::Ok, "{}", last_error());
    assert!(!dataset.is_null());
    dataset
}

fn tiny_config() -> FedprefConfig {
    let mut config = FedprefConfig {
        rounds: 0,
        clients_per_round: 0,
        local_epochs: 0,
        batch_size: 0,
        learning_rate: 0.0,
        seed: 0,
        feature_dim: 0,
        hash_seed: 0,
        clamp_degenerate_priors: false,
        both_classes_loss: false,
    };
    assert_eq!(
        unsafe { fedpref_config_default(&mut config) },
        FedprefStatus::Ok
    );
    config.rounds = 3;
    config.local_epochs = 1;
    config.batch_size = 16;
    config.learning_rate = 0.5;
    config.feature_dim = 64;
    config
}

#[test]
fn version_is_a_static_string() {
    let v = unsafe { CStr::from_ptr(fedpref_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn config_default_matches_library_defaults() {
    let mut config = tiny_config();
    assert_eq!(
        unsafe { fedpref_config_default(&mut config) },
        FedprefStatus::Ok
    );
    assert_eq!(config.rounds, 30);
    assert_eq!(config.clients_per_round, 0);
    assert_eq!(config.feature_dim, 4096);
    assert!(config.clamp_degenerate_priors);
    assert!(!config.both_classes_loss);
    assert_eq!(
        unsafe { fedpref_config_default(ptr::null_mut()) },
        FedprefStatus::NullArgument
    );
}

#[test]
fn dataset_load_stats_and_free() {
    let dataset = load_dataset("fixture_train.csv");
    assert_eq!(unsafe { fedpref_dataset_len(dataset) }, 200);

    let (mut mean, mut min, mut max) = (0.0f64, -1.0f64, -1.0f64);
    let status = unsafe { fedpref_dataset_stats(dataset, &mut mean, &mut min, &mut max) };
    assert_eq!(status, FedprefStatus::Ok);
    assert!((mean - 0.93).abs() < 1e-9);
    assert_eq!(min, 0.0);
    assert_eq!(max, 2.8);

    unsafe { fedpref_dataset_free(dataset) };
    unsafe { fedpref_dataset_free(ptr::null_mut()) }; // null is fine
}

#[test]
fn dataset_load_missing_file_sets_error() {
    let mut dataset: *mut FedprefDataset = ptr::null_mut();
    let path = CString::new("/nonexistent/nope.csv").unwrap();
    let status = unsafe { fedpref_dataset_load(path.as_ptr(), &mut dataset) };
    assert_eq!(status, FedprefStatus::IoError);
    assert!(dataset.is_null());
    assert!(last_error().contains("nope.csv"));
}

#[test]
fn null_arguments_are_rejected() {
    let status = unsafe { fedpref_dataset_load(ptr::null(), ptr::null_mut()) };
    assert_eq!(status, FedprefStatus::NullArgument);
    unsafe {
        assert_eq!(fedpref_dataset_len(ptr::null()), 0);
        assert_eq!(fedpref_population_len(ptr::null()), 0);
        assert_eq!(
            fedpref_dataset_stats(
                ptr::null(),
                ptr::null_mut(),
                ptr::null_mut(),
                ptr::null_mut()
            ),
            FedprefStatus::NullArgument
        );
    }
}

#[test]
fn degenerate_priors_follow_clamp_flag() {
    let train = load_dataset("fixture_train.csv");
    let alphas = [2.9f64]; // above every fixture rating: single-class labels
    let mut population: *mut FedprefPopulation = ptr::null_mut();

    let strict =
        unsafe { fedpref_population_create(alphas.as_ptr(), 1, train, false, &mut population) };
    assert_eq!(strict, FedprefStatus::DomainError);
    assert!(last_error().contains("degenerate"), "{}", last_error());

    let clamped =
        unsafe { fedpref_population_create(alphas.as_ptr(), 1, train, true, &mut population) };
    assert_eq!(clamped, FedprefStatus::Ok);
    assert_eq!(unsafe { fedpref_population_len(population) }, 1);

    unsafe {
        fedpref_population_free(population);
        fedpref_dataset_free(train);
    }
}

#[test]
fn train_evaluate_save_load_roundtrip() {
    let train = load_dataset("fixture_train.csv");
    let test = load_dataset("fixture_test.csv");
    let alphas = [0.3f64, 0.9, 1.8];
    let mut population: *mut FedprefPopulation = ptr::null_mut();
    let status = unsafe {
        fedpref_population_create(alphas.as_ptr(), alphas.len(), train, true, &mut population)
    };
    assert_eq!(status, FedprefStatus::Ok);
    assert_eq!(unsafe { fedpref_population_len(population) }, 3);

    let config = tiny_config();
    let mut model: *mut FedprefModel = ptr::null_mut();
    let status = unsafe { fedpref_train(train, population, &config, &mut model) };
    assert_eq!(status, FedprefStatus::Ok, "{}", last_error());

    let (mut p, mut r, mut f1) = (-1.0f64, -1.0f64, -1.0f64);
    let status =
        unsafe { fedpref_evaluate(model, population, test, &config, &mut p, &mut r, &mut f1) };
    assert_eq!(status, FedprefStatus::Ok, "{}", last_error());
    for v in [p, r, f1] {
        assert!((0.0..=1.0).contains(&v), "metric {v} outside [0, 1]");
    }

    let dir = tempfile::tempdir().unwrap();
    let model_path = CString::new(dir.path().join("model.bin").to_str().unwrap()).unwrap();
    assert_eq!(
        unsafe { fedpref_model_save(model, model_path.as_ptr()) },
        FedprefStatus::Ok
    );
    let mut reloaded: *mut FedprefModel = ptr::null_mut();
    assert_eq!(
        unsafe { fedpref_model_load(model_path.as_ptr(), &mut reloaded) },
        FedprefStatus::Ok
    );

    let (mut p2, mut r2, mut f2) = (0.0f64, 0.0f64, 0.0f64);
    let status = unsafe {
        fedpref_evaluate(
            reloaded, population, test, &config, &mut p2, &mut r2, &mut f2,
        )
    };
    assert_eq!(status, FedprefStatus::Ok);
    assert_eq!(
        (p, r, f1),
        (p2, r2, f2),
        "reloaded model scores differently"
    );

    unsafe {
        fedpref_model_free(model);
        fedpref_model_free(reloaded);
        fedpref_population_free(population);
        fedpref_dataset_free(test);
        fedpref_dataset_free(train);
    }
}

#[test]
fn training_is_deterministic_across_calls() {
    let train = load_dataset("fixture_train.csv");
    let alphas = [0.9f64];
    let mut population: *mut FedprefPopulation = ptr::null_mut();
    unsafe {
        assert_eq!(
            fedpref_population_create(alphas.as_ptr(), 1, train, true, &mut population),
            FedprefStatus::Ok
        );
    }
    let config = tiny_config();
    let dir = tempfile::tempdir().unwrap();

    let bytes_of = |tag: &str| {
        let mut model: *mut FedprefModel = ptr::null_mut();
        let status = unsafe { fedpref_train(train, population, &config, &mut model) };
        assert_eq!(status, FedprefStatus::Ok);
        let path = dir.path().join(format!("{tag}.bin"));
        let c_path = CString::new(path.to_str().unwrap()).unwrap();
        unsafe {
            assert_eq!(
                fedpref_model_save(model, c_path.as_ptr()),
                FedprefStatus::Ok
            );
            fedpref_model_free(model);
        }
        std::fs::read(path).unwrap()
    };
    assert_eq!(bytes_of("a"), bytes_of("b"));

    unsafe {
        fedpref_population_free(population);
        fedpref_dataset_free(train);
    }
}

#[test]
fn header_declares_every_exported_symbol() {
    let header = include_str!("../include/fedpref.h");
    for symbol in [
        "fedpref_version",
        "fedpref_last_error_message",
        "fedpref_config_default",
        "fedpref_dataset_load",
        "fedpref_dataset_len",
        "fedpref_dataset_stats",
        "fedpref_dataset_free",
        "fedpref_population_create",
        "fedpref_population_len",
        "fedpref_population_free",
        "fedpref_train",
        "fedpref_evaluate",
        "fedpref_model_save",
        "fedpref_model_load",
        "fedpref_model_free",
    ] {
        assert!(header.contains(symbol), "header is missing {symbol}");
    }
}
