//! Experiment drivers behind the CLI: the alpha/beta sensitivity sweep,
//! the AGG / INDV / FED learning-strategy comparison, and the centralized
//! baseline. Each driver loads the dataset splits, runs its training and
//! model selection, and writes a CSV table (percentages, two decimals)
//! plus a full-precision JSON bundle into the output directory. Reruns
//! with the same seed produce byte-identical files.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{DatasetSplit, SplitName};
use crate::error::{Error, Result};
use crate::evaluation::{
    confusion, evaluate_population, forward_probs, macro_metrics, mean_metrics, predict_from_probs,
    MacroMetrics,
};
use crate::features::{featurize_split, FeatureVector};
use crate::federation::{local_sgd, run_federation, FederationConfig, RoundLog};
use crate::labeling::{
    alpha_range_tenths, generate_labels, make_population, Client, ClientSpec, DegeneratePriorPolicy,
};
use crate::model::ModelParams;

/// Shuffle-stream id for pooled (centralized) training, reserved outside
/// the client id space.
const POOLED_SEED_ID: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataPaths {
    pub train: PathBuf,
    pub validation: PathBuf,
    pub test: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Sweep,
    Strategies,
    Baseline,
}

fn default_subsample() -> f64 {
    1.0
}

/// One experiment configuration, mirrored by the JSON config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub data: DataPaths,
    /// Explicit population for `strategies`; omitted, the two default
    /// client groups are used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub population: Option<Vec<ClientSpec>>,
    /// Sweep grid over alpha; omitted, 0.2..=2.0 in steps of 0.1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_grid: Option<Vec<f64>>,
    /// Sweep grid over beta; omitted, 0.0..=2.0 in steps of 0.1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub federation: FederationConfig,
    pub output_dir: PathBuf,
    /// Fraction of the training split to keep (desk-scale control).
    #[serde(default = "default_subsample")]
    pub subsample_fraction: f64,
}

impl ExperimentSpec {
    pub fn load(path: impl AsRef<Path>) -> Result<ExperimentSpec> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
    }

    fn expect_kind(&self, kind: ExperimentKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Domain(format!(
                "config kind {:?} does not match the requested experiment {:?}",
                self.kind, kind
            )));
        }
        Ok(())
    }

    fn prior_policy(&self) -> DegeneratePriorPolicy {
        if self.federation.clamp_degenerate_priors {
            DegeneratePriorPolicy::Clamp
        } else {
            DegeneratePriorPolicy::Reject
        }
    }
}

/// Splits and featurizations shared by every run of an experiment.
pub struct PreparedData {
    pub train: DatasetSplit,
    pub validation: DatasetSplit,
    pub test: DatasetSplit,
    pub train_features: Vec<FeatureVector>,
    pub validation_features: Vec<FeatureVector>,
    pub test_features: Vec<FeatureVector>,
}

fn reject_unlabeled(split: &DatasetSplit) -> Result<()> {
    for r in &split.records {
        if r.grades.is_empty() {
            return Err(Error::Domain(format!(
                "record {} in the {} split has no ratings; experiments need labeled data",
                r.id, split.name
            )));
        }
    }
    Ok(())
}

/// Load the three splits, subsample the training split, and featurize.
pub fn prepare_data(spec: &ExperimentSpec) -> Result<PreparedData> {
    let train_full = DatasetSplit::load_auto(&spec.data.train, SplitName::Train)?;
    let validation = DatasetSplit::load_auto(&spec.data.validation, SplitName::Validation)?;
    let test = DatasetSplit::load_auto(&spec.data.test, SplitName::Test)?;
    for s in [&train_full, &validation, &test] {
        reject_unlabeled(s)?;
    }
    let train = train_full.subsample(spec.subsample_fraction)?;
    let cfg = &spec.federation;
    let train_features = featurize_split(&train, cfg.feature_dim, cfg.hash_seed);
    let validation_features = featurize_split(&validation, cfg.feature_dim, cfg.hash_seed);
    let test_features = featurize_split(&test, cfg.feature_dim, cfg.hash_seed);
    Ok(PreparedData {
        train,
        validation,
        test,
        train_features,
        validation_features,
        test_features,
    })
}

/// Centralized training loop: the same per-round SGD as a federated
/// client, without aggregation. Returns the post-round checkpoints.
fn centralized_run(
    seed_id: u64,
    examples: &[(u32, u8)],
    priors: [f64; 2],
    beta: f64,
    features: &[FeatureVector],
    cfg: &FederationConfig,
) -> Result<Vec<ModelParams>> {
    let mut params = ModelParams::seeded_gaussian(cfg.feature_dim, cfg.seed);
    let mut checkpoints = Vec::with_capacity(cfg.rounds);
    for round in 0..cfg.rounds {
        params = local_sgd(
            &params, seed_id, examples, priors, beta, features, round, cfg,
        )?
        .0;
        checkpoints.push(params.clone());
    }
    Ok(checkpoints)
}

fn own_examples(client: &Client) -> Vec<(u32, u8)> {
    client
        .train_labels
        .labels
        .iter()
        .enumerate()
        .map(|(i, &l)| (i as u32, l))
        .collect()
}

/// Highest-scoring checkpoint; ties go to the earliest round.
fn select_best(
    checkpoints: &[ModelParams],
    score: impl Fn(&ModelParams) -> Result<f64> + Sync,
) -> Result<(usize, f64)> {
    let scores: Vec<f64> = checkpoints.par_iter().map(&score).collect::<Result<_>>()?;
    let mut best = (0usize, f64::NEG_INFINITY);
    for (i, &s) in scores.iter().enumerate() {
        if s > best.1 {
            best = (i, s);
        }
    }
    Ok(best)
}

fn write_text(path: &Path, content: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, content).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut out, value)?;
    out.flush().map_err(|e| Error::io(path, e))
}

fn write_jsonl(path: &Path, logs: &[RoundLog]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for log in logs {
        serde_json::to_writer(&mut out, log)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

fn pct(v: f64) -> String {
    format!("{:.2}", v * 100.0)
}

// ---------------------------------------------------------------------------
// Sensitivity sweep
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub beta: f64,
    pub train_positives: usize,
    pub best_round: usize,
    pub validation_f1: f64,
    pub test_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCellFailure {
    pub alpha: f64,
    pub beta: f64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub failures: Vec<SweepCellFailure>,
}

fn sweep_cell(
    alpha: f64,
    beta: f64,
    data: &PreparedData,
    cfg: &FederationConfig,
    policy: DegeneratePriorPolicy,
) -> Result<SweepRow> {
    let spec = [ClientSpec {
        alpha,
        beta: Some(beta),
    }];
    let pop = make_population(&spec, &data.train, policy)?;
    let client = &pop[0];
    let train_positives = client
        .train_labels
        .labels
        .iter()
        .filter(|&&l| l == 1)
        .count();
    let checkpoints = centralized_run(
        u64::from(client.profile.client_id),
        &own_examples(client),
        client.profile.priors(),
        client.profile.beta,
        &data.train_features,
        cfg,
    )?;

    let val_truth = generate_labels(&data.validation, alpha, client.profile.client_id)?;
    let (best_round, validation_f1) = select_best(&checkpoints, |ckpt| {
        let probs = forward_probs(ckpt, &data.validation_features)?;
        let pred = predict_from_probs(&probs, &client.profile)?;
        Ok(macro_metrics(&confusion(&pred, &val_truth.labels)?).f1)
    })?;

    let test_truth = generate_labels(&data.test, alpha, client.profile.client_id)?;
    let probs = forward_probs(&checkpoints[best_round], &data.test_features)?;
    let pred = predict_from_probs(&probs, &client.profile)?;
    let test_f1 = macro_metrics(&confusion(&pred, &test_truth.labels)?).f1;

    Ok(SweepRow {
        alpha,
        beta,
        train_positives,
        best_round,
        validation_f1,
        test_f1,
    })
}

/// Train one scaled single-client model per (alpha, beta) grid cell,
/// regenerating labels for every alpha, and record the test macro F1 of
/// the checkpoint with the best validation macro F1. Failed cells are
/// recorded and skipped.
pub fn run_sweep(spec: &ExperimentSpec) -> Result<SweepOutcome> {
    spec.expect_kind(ExperimentKind::Sweep)?;
    let data = prepare_data(spec)?;
    let alphas = spec
        .alpha_grid
        .clone()
        .unwrap_or_else(|| alpha_range_tenths(2, 20));
    let betas = spec
        .beta_grid
        .clone()
        .unwrap_or_else(|| (0..=20).map(|t| f64::from(t) / 10.0).collect());
    if alphas.is_empty() || betas.is_empty() {
        return Err(Error::Domain("sweep grids must be non-empty".into()));
    }

    let cells: Vec<(f64, f64)> = alphas
        .iter()
        .flat_map(|&a| betas.iter().map(move |&b| (a, b)))
        .collect();
    let results: Vec<std::result::Result<SweepRow, SweepCellFailure>> = cells
        .par_iter()
        .map(|&(alpha, beta)| {
            sweep_cell(alpha, beta, &data, &spec.federation, spec.prior_policy()).map_err(|e| {
                SweepCellFailure {
                    alpha,
                    beta,
                    error: e.to_string(),
                }
            })
        })
        .collect();

    let mut outcome = SweepOutcome {
        rows: Vec::new(),
        failures: Vec::new(),
    };
    for r in results {
        match r {
            Ok(row) => outcome.rows.push(row),
            Err(f) => outcome.failures.push(f),
        }
    }

    let mut csv = String::from("alpha,beta,train_positives,macro_f1\n");
    for row in &outcome.rows {
        let _ = writeln!(
            csv,
            "{},{},{},{}",
            row.alpha,
            row.beta,
            row.train_positives,
            pct(row.test_f1)
        );
    }
    write_text(&spec.output_dir.join("sweep.csv"), &csv)?;
    write_json(&spec.output_dir.join("sweep.json"), &outcome)?;
    Ok(outcome)
}

// ---------------------------------------------------------------------------
// Learning-strategy comparison (AGG / INDV / FED)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyRow {
    pub group: String,
    pub strategy: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategiesOutcome {
    pub rows: Vec<StrategyRow>,
}

/// The two default client groups: three spread preferences, and eighteen
/// preferences covering 0.2..=1.9.
pub fn default_groups() -> Vec<(String, Vec<ClientSpec>)> {
    let spec = |alpha: f64| ClientSpec { alpha, beta: None };
    vec![
        (
            "Group 1".to_string(),
            [0.3, 0.9, 1.8].iter().map(|&a| spec(a)).collect(),
        ),
        (
            "Group 2".to_string(),
            alpha_range_tenths(2, 19).into_iter().map(spec).collect(),
        ),
    ]
}

fn group_slug(name: &str) -> String {
    name.to_lowercase().replace(' ', "")
}

/// Per-client macro metrics of unscaled predictions at one checkpoint.
fn plain_group_metrics(
    ckpt: &ModelParams,
    population: &[Client],
    split: &DatasetSplit,
    features: &[FeatureVector],
) -> Result<Vec<MacroMetrics>> {
    let probs = forward_probs(ckpt, features)?;
    let pred: Vec<u8> = probs.iter().map(|&p| crate::model::argmax2(p)).collect();
    population
        .iter()
        .map(|client| {
            let truth = generate_labels(split, client.profile.alpha, client.profile.client_id)?;
            Ok(macro_metrics(&confusion(&pred, &truth.labels)?))
        })
        .collect()
}

fn strategy_row(group: &str, strategy: &str, m: MacroMetrics) -> StrategyRow {
    StrategyRow {
        group: group.to_string(),
        strategy: strategy.to_string(),
        precision: m.precision,
        recall: m.recall,
        f1: m.f1,
    }
}

/// AGG: pool every client's labeled copy of the training set and train one
/// unscaled central model; evaluate per client without rescaling.
fn run_agg(
    group: &str,
    population: &[Client],
    data: &PreparedData,
    cfg: &FederationConfig,
) -> Result<StrategyRow> {
    let pooled: Vec<(u32, u8)> = population.iter().flat_map(own_examples).collect();
    let checkpoints = centralized_run(
        POOLED_SEED_ID,
        &pooled,
        [0.5, 0.5],
        0.0,
        &data.train_features,
        cfg,
    )?;
    let (best, _) = select_best(&checkpoints, |ckpt| {
        let per_client = plain_group_metrics(
            ckpt,
            population,
            &data.validation,
            &data.validation_features,
        )?;
        Ok(mean_metrics(per_client.iter().copied()).f1)
    })?;
    let per_client = plain_group_metrics(
        &checkpoints[best],
        population,
        &data.test,
        &data.test_features,
    )?;
    Ok(strategy_row(
        group,
        "AGG",
        mean_metrics(per_client.iter().copied()),
    ))
}

/// INDV: train one scaled model per client on its own labels; each client
/// evaluates its own model with its own rescaling.
fn run_indv(
    group: &str,
    population: &[Client],
    data: &PreparedData,
    cfg: &FederationConfig,
) -> Result<StrategyRow> {
    let per_client: Vec<MacroMetrics> = population
        .par_iter()
        .map(|client| {
            let checkpoints = centralized_run(
                u64::from(client.profile.client_id),
                &own_examples(client),
                client.profile.priors(),
                client.profile.beta,
                &data.train_features,
                cfg,
            )?;
            let val_truth = generate_labels(
                &data.validation,
                client.profile.alpha,
                client.profile.client_id,
            )?;
            let (best, _) = select_best(&checkpoints, |ckpt| {
                let probs = forward_probs(ckpt, &data.validation_features)?;
                let pred = predict_from_probs(&probs, &client.profile)?;
                Ok(macro_metrics(&confusion(&pred, &val_truth.labels)?).f1)
            })?;
            let test_truth =
                generate_labels(&data.test, client.profile.alpha, client.profile.client_id)?;
            let probs = forward_probs(&checkpoints[best], &data.test_features)?;
            let pred = predict_from_probs(&probs, &client.profile)?;
            Ok(macro_metrics(&confusion(&pred, &test_truth.labels)?))
        })
        .collect::<Result<_>>()?;
    Ok(strategy_row(
        group,
        "INDV",
        mean_metrics(per_client.iter().copied()),
    ))
}

/// FED: federated averaging over the group with per-client scaled losses,
/// evaluated with per-client rescaling.
fn run_fed(
    group: &str,
    population: &[Client],
    data: &PreparedData,
    cfg: &FederationConfig,
    output_dir: &Path,
) -> Result<StrategyRow> {
    let run = run_federation(population, &data.train_features, cfg)?;
    let (best, _) = select_best(&run.checkpoints, |ckpt| {
        Ok(evaluate_population(
            ckpt,
            population,
            &data.validation,
            &data.validation_features,
        )?
        .overall_f1)
    })?;
    let report = evaluate_population(
        &run.checkpoints[best],
        population,
        &data.test,
        &data.test_features,
    )?;

    let slug = group_slug(group);
    write_jsonl(
        &output_dir.join(format!("{slug}_fed_logs.jsonl")),
        &run.logs,
    )?;
    run.checkpoints[best].save(output_dir.join(format!("{slug}_fed_model.bin")))?;
    write_json(&output_dir.join(format!("{slug}_fed_report.json")), &report)?;

    Ok(strategy_row(
        group,
        "FED",
        MacroMetrics {
            precision: report.overall_p,
            recall: report.overall_r,
            f1: report.overall_f1,
        },
    ))
}

/// Compare AGG / INDV / FED on each client group and emit the strategy
/// table.
pub fn run_strategies(spec: &ExperimentSpec) -> Result<StrategiesOutcome> {
    spec.expect_kind(ExperimentKind::Strategies)?;
    let data = prepare_data(spec)?;
    let groups = match &spec.population {
        Some(p) if p.is_empty() => {
            return Err(Error::Domain("population must be non-empty".into()))
        }
        Some(p) => vec![("Population".to_string(), p.clone())],
        None => default_groups(),
    };

    let mut rows = Vec::new();
    for (name, specs) in &groups {
        let population = make_population(specs, &data.train, spec.prior_policy())?;
        rows.push(run_agg(name, &population, &data, &spec.federation)?);
        rows.push(run_indv(name, &population, &data, &spec.federation)?);
        rows.push(run_fed(
            name,
            &population,
            &data,
            &spec.federation,
            &spec.output_dir,
        )?);
    }

    let mut csv = String::from("group,strategy,precision,recall,f1\n");
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            r.group,
            r.strategy,
            pct(r.precision),
            pct(r.recall),
            pct(r.f1)
        );
    }
    write_text(&spec.output_dir.join("strategies.csv"), &csv)?;
    let outcome = StrategiesOutcome { rows };
    write_json(&spec.output_dir.join("strategies.json"), &outcome)?;
    Ok(outcome)
}

// ---------------------------------------------------------------------------
// Centralized baseline at alpha = 1
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRow {
    pub model: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineOutcome {
    pub rows: Vec<BaselineRow>,
    /// Fraction of positive test labels at alpha = 1.
    pub test_positive_fraction: f64,
}

/// Train (a) one unscaled centralized classifier on the alpha = 1 labels
/// and (b) the federated model over the large default group, and evaluate
/// both against the alpha = 1 test labels.
pub fn run_baseline(spec: &ExperimentSpec) -> Result<BaselineOutcome> {
    spec.expect_kind(ExperimentKind::Baseline)?;
    let data = prepare_data(spec)?;
    let cfg = &spec.federation;
    let policy = spec.prior_policy();

    let alpha_one = make_population(
        &[ClientSpec {
            alpha: 1.0,
            beta: None,
        }],
        &data.train,
        policy,
    )?;
    let target = &alpha_one[0];
    let val_truth = generate_labels(&data.validation, 1.0, target.profile.client_id)?;
    let test_truth = generate_labels(&data.test, 1.0, target.profile.client_id)?;

    // (a) centralized, no scaling at either stage
    let checkpoints = centralized_run(
        u64::from(target.profile.client_id),
        &own_examples(target),
        [0.5, 0.5],
        0.0,
        &data.train_features,
        cfg,
    )?;
    let (best, _) = select_best(&checkpoints, |ckpt| {
        let per = plain_group_metrics(
            ckpt,
            &alpha_one,
            &data.validation,
            &data.validation_features,
        )?;
        Ok(per[0].f1)
    })?;
    let centralized = plain_group_metrics(
        &checkpoints[best],
        &alpha_one,
        &data.test,
        &data.test_features,
    )?[0];

    // (b) federated over the diverse large group, deployed on the alpha = 1
    // client with its rescaling
    let group2 = default_groups().pop().expect("two default groups").1;
    let population = make_population(&group2, &data.train, policy)?;
    let run = run_federation(&population, &data.train_features, cfg)?;
    let (best_fed, _) = select_best(&run.checkpoints, |ckpt| {
        let probs = forward_probs(ckpt, &data.validation_features)?;
        let pred = predict_from_probs(&probs, &target.profile)?;
        Ok(macro_metrics(&confusion(&pred, &val_truth.labels)?).f1)
    })?;
    let probs = forward_probs(&run.checkpoints[best_fed], &data.test_features)?;
    let pred = predict_from_probs(&probs, &target.profile)?;
    let federated = macro_metrics(&confusion(&pred, &test_truth.labels)?);

    write_jsonl(&spec.output_dir.join("baseline_fed_logs.jsonl"), &run.logs)?;
    run.checkpoints[best_fed].save(spec.output_dir.join("baseline_fed_model.bin"))?;

    let positives = test_truth.labels.iter().filter(|&&l| l == 1).count();
    let outcome = BaselineOutcome {
        rows: vec![
            BaselineRow {
                model: "centralized".into(),
                precision: centralized.precision,
                recall: centralized.recall,
                f1: centralized.f1,
            },
            BaselineRow {
                model: "federated".into(),
                precision: federated.precision,
                recall: federated.recall,
                f1: federated.f1,
            },
        ],
        test_positive_fraction: positives as f64 / test_truth.labels.len() as f64,
    };

    let mut csv = String::from("model,precision,recall,f1\n");
    for r in &outcome.rows {
        let _ = writeln!(
            csv,
            "{},{},{},{}",
            r.model,
            pct(r.precision),
            pct(r.recall),
            pct(r.f1)
        );
    }
    write_text(&spec.output_dir.join("baseline.csv"), &csv)?;
    write_json(&spec.output_dir.join("baseline.json"), &outcome)?;
    Ok(outcome)
}
