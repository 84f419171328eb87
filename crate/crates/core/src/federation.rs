//! The federated averaging loop.
//!
//! Each round the server samples clients, every selected client runs local
//! mini-batch SGD on its own labels starting from the current global
//! parameters, and the server averages the resulting parameter tensors
//! uniformly into the next global model. Label data never crosses the
//! client boundary: the server-side code paths ([`sample_clients`],
//! [`aggregate`], the round loop) only handle [`ModelParams`] values.
//!
//! Client updates within a round may run concurrently; every random
//! decision is seeded from (run seed, round, client id), never from
//! execution order, so runs are bitwise reproducible.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureVector, DEFAULT_FEATURE_DIM};
use crate::labeling::Client;
use crate::model::{loss_and_grad, sgd_step, ModelParams, Objective};
use crate::seeding;

/// Knobs of a federation run. Fields have serde defaults so config files
/// can stay sparse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FederationConfig {
    /// Number of federated rounds (T).
    pub rounds: usize,
    /// Clients sampled per round; `None` means full participation.
    pub clients_per_round: Option<usize>,
    /// Local epochs per selected client per round (E).
    pub local_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub feature_dim: usize,
    /// Seed of the feature hasher (independent of `seed` so reseeding a run
    /// does not re-bucket the vocabulary).
    pub hash_seed: u64,
    /// Smooth single-class client priors instead of failing.
    pub clamp_degenerate_priors: bool,
    pub objective: Objective,
}

impl Default for FederationConfig {
    fn default() -> Self {
        FederationConfig {
            rounds: 30,
            clients_per_round: None,
            local_epochs: 5,
            batch_size: 8,
            learning_rate: 2.0,
            seed: 42,
            feature_dim: DEFAULT_FEATURE_DIM,
            hash_seed: 0,
            clamp_degenerate_priors: true,
            objective: Objective::TrueLabelNll,
        }
    }
}

/// Server-side record of one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round_index: usize,
    pub selected_clients: Vec<u32>,
    pub mean_client_loss: f64,
    /// File name the round's global checkpoint gets when persisted.
    pub checkpoint: String,
}

/// Result of a federation run, with the post-aggregation global parameters
/// of every round retained for checkpoint selection.
#[derive(Debug, Clone, PartialEq)]
pub struct FederationRun {
    pub final_global: ModelParams,
    pub logs: Vec<RoundLog>,
    pub checkpoints: Vec<ModelParams>,
}

/// What crossed the client/server boundary in one round. Exposed to
/// observers so tests can audit that aggregation inputs are parameter
/// tensors only.
pub struct RoundAudit<'a> {
    pub round_index: usize,
    pub global_before: &'a ModelParams,
    pub selected_indices: &'a [usize],
    pub locals: &'a [ModelParams],
    pub aggregated: &'a ModelParams,
}

/// Uniform sample of `k` distinct population indices, deterministic in
/// (seed, round). Returned sorted.
pub fn sample_clients(
    population_size: usize,
    k: usize,
    round_index: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    if k == 0 || k > population_size {
        return Err(Error::Domain(format!(
            "cannot sample {k} clients from a population of {population_size}"
        )));
    }
    let mut rng = seeding::derived_rng(&[seeding::TAG_SAMPLE, seed, round_index as u64]);
    let mut picked = rand::seq::index::sample(&mut rng, population_size, k).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// Local multi-epoch mini-batch SGD from `global`, the shared building
/// block behind [`client_update`] and the centralized training loops.
///
/// `examples` pairs indices into `features` with binary labels, so pooled
/// corpora can reference each feature vector many times. The shuffle
/// stream is seeded from (run seed, round, `seed_id`); the returned loss
/// is the mean batch loss of the final epoch.
#[allow(clippy::too_many_arguments)]
pub fn local_sgd(
    global: &ModelParams,
    seed_id: u64,
    examples: &[(u32, u8)],
    priors: [f64; 2],
    beta: f64,
    features: &[FeatureVector],
    round_index: usize,
    cfg: &FederationConfig,
) -> Result<(ModelParams, f64)> {
    if examples.is_empty() {
        return Err(Error::Domain("no training examples".into()));
    }
    if cfg.local_epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::Domain(
            "local_epochs and batch_size must be at least 1".into(),
        ));
    }
    let mut rng =
        seeding::derived_rng(&[seeding::TAG_SHUFFLE, cfg.seed, round_index as u64, seed_id]);
    let mut order: Vec<u32> = (0..examples.len() as u32).collect();
    let mut params = global.clone();
    let mut last_epoch_loss = 0.0;
    for _ in 0..cfg.local_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(&FeatureVector, u8)> = chunk
                .iter()
                .map(|&i| {
                    let (idx, label) = examples[i as usize];
                    (&features[idx as usize], label)
                })
                .collect();
            let (loss, grad) = loss_and_grad(&params, &batch, priors, beta, cfg.objective)?;
            params = sgd_step(&params, &grad, cfg.learning_rate)?;
            epoch_loss += loss;
            batches += 1;
        }
        last_epoch_loss = epoch_loss / batches as f64;
    }
    Ok((params, last_epoch_loss))
}

/// One client's local update for one round.
pub fn client_update(
    global: &ModelParams,
    client: &Client,
    features: &[FeatureVector],
    round_index: usize,
    cfg: &FederationConfig,
) -> Result<(ModelParams, f64)> {
    let profile = &client.profile;
    if !(profile.prior_pos > 0.0 && profile.prior_pos < 1.0) {
        return Err(Error::Domain(format!(
            "client {} has prior_pos {} outside (0, 1)",
            profile.client_id, profile.prior_pos
        )));
    }
    if client.train_labels.labels.len() != features.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} labels", features.len()),
            actual: format!("{} labels", client.train_labels.labels.len()),
        });
    }
    let examples: Vec<(u32, u8)> = client
        .train_labels
        .labels
        .iter()
        .enumerate()
        .map(|(i, &l)| (i as u32, l))
        .collect();
    local_sgd(
        global,
        u64::from(profile.client_id),
        &examples,
        profile.priors(),
        profile.beta,
        features,
        round_index,
        cfg,
    )
}

fn add_params(a: &ModelParams, b: &ModelParams) -> Result<ModelParams> {
    a.check_same_shape(b)?;
    let weights = a
        .weights
        .iter()
        .zip(&b.weights)
        .map(|(x, y)| x + y)
        .collect();
    Ok(ModelParams {
        dim: a.dim(),
        weights,
        bias: [a.bias[0] + b.bias[0], a.bias[1] + b.bias[1]],
    })
}

fn pairwise_sum(locals: &[ModelParams]) -> Result<ModelParams> {
    match locals.len() {
        1 => Ok(locals[0].clone()),
        n => {
            let (left, right) = locals.split_at(n / 2);
            add_params(&pairwise_sum(left)?, &pairwise_sum(right)?)
        }
    }
}

/// Elementwise arithmetic mean of same-shaped parameter sets (pairwise
/// summation).
pub fn aggregate(locals: &[ModelParams]) -> Result<ModelParams> {
    if locals.is_empty() {
        return Err(Error::Domain("cannot aggregate zero parameter sets".into()));
    }
    let mut sum = pairwise_sum(locals)?;
    let inv = 1.0 / locals.len() as f64;
    for w in &mut sum.weights {
        *w *= inv;
    }
    sum.bias[0] *= inv;
    sum.bias[1] *= inv;
    Ok(sum)
}

/// Run the full federation and invoke `observer` with every round's
/// client/server boundary traffic.
pub fn run_federation_observed(
    population: &[Client],
    features: &[FeatureVector],
    cfg: &FederationConfig,
    mut observer: impl FnMut(&RoundAudit<'_>),
) -> Result<FederationRun> {
    if population.is_empty() {
        return Err(Error::Domain("population is empty".into()));
    }
    if cfg.rounds == 0 {
        return Err(Error::Domain("rounds must be at least 1".into()));
    }
    if features.is_empty() {
        return Err(Error::Domain("no training features".into()));
    }
    if features[0].dim() != cfg.feature_dim {
        return Err(Error::ShapeMismatch {
            expected: format!("feature dimension {}", cfg.feature_dim),
            actual: format!("feature dimension {}", features[0].dim()),
        });
    }
    let k = cfg.clients_per_round.unwrap_or(population.len());
    if k == 0 || k > population.len() {
        return Err(Error::Domain(format!(
            "clients_per_round {k} outside 1..={}",
            population.len()
        )));
    }

    let mut global = ModelParams::seeded_gaussian(cfg.feature_dim, cfg.seed);
    let mut logs = Vec::with_capacity(cfg.rounds);
    let mut checkpoints = Vec::with_capacity(cfg.rounds);
    for round in 0..cfg.rounds {
        let selected = sample_clients(population.len(), k, round, cfg.seed)?;
        let updates: Vec<(ModelParams, f64)> = selected
            .par_iter()
            .map(|&i| {
                let client = &population[i];
                client_update(&global, client, features, round, cfg).map_err(|e| {
                    Error::ClientUpdate {
                        round,
                        client_id: client.profile.client_id,
                        source: Box::new(e),
                    }
                })
            })
            .collect::<Result<_>>()?;

        let locals: Vec<ModelParams> = updates.iter().map(|(p, _)| p.clone()).collect();
        let mean_client_loss = updates.iter().map(|(_, l)| *l).sum::<f64>() / updates.len() as f64;
        let new_global = aggregate(&locals)?;
        observer(&RoundAudit {
            round_index: round,
            global_before: &global,
            selected_indices: &selected,
            locals: &locals,
            aggregated: &new_global,
        });
        logs.push(RoundLog {
            round_index: round,
            selected_clients: selected
                .iter()
                .map(|&i| population[i].profile.client_id)
                .collect(),
            mean_client_loss,
            checkpoint: checkpoint_name(round),
        });
        checkpoints.push(new_global.clone());
        global = new_global;
    }
    Ok(FederationRun {
        final_global: global,
        logs,
        checkpoints,
    })
}

/// Run the full federation: `rounds` iterations of sample, parallel client
/// update, aggregate.
pub fn run_federation(
    population: &[Client],
    features: &[FeatureVector],
    cfg: &FederationConfig,
) -> Result<FederationRun> {
    run_federation_observed(population, features, cfg, |_| {})
}

pub fn checkpoint_name(round: usize) -> String {
    format!("round_{round:04}.bin")
}

/// Persist a run: `logs.jsonl` (one [`RoundLog`] per line) plus every round
/// checkpoint as a binary parameter file under `checkpoints/`.
pub fn persist_run(run: &FederationRun, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let ckpt_dir = dir.join("checkpoints");
    fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
    let log_path = dir.join("logs.jsonl");
    let mut out = BufWriter::new(File::create(&log_path).map_err(|e| Error::io(&log_path, e))?);
    for log in &run.logs {
        serde_json::to_writer(&mut out, log)?;
        out.write_all(b"\n").map_err(|e| Error::io(&log_path, e))?;
    }
    out.flush().map_err(|e| Error::io(&log_path, e))?;
    for (log, params) in run.logs.iter().zip(&run.checkpoints) {
        params.save(ckpt_dir.join(&log.checkpoint))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{DatasetSplit, HeadlineRecord, SplitName};
    use crate::features::featurize_split;
    use crate::labeling::{make_population, ClientSpec, DegeneratePriorPolicy};

    fn toy_split(n: usize) -> DatasetSplit {
        DatasetSplit {
            name: SplitName::Train,
            records: (0..n)
                .map(|i| {
                    let funny = i % 3 == 0;
                    HeadlineRecord {
                        id: i.to_string(),
                        original: "a <b/> c".into(),
                        edit_word: "x".into(),
                        edited_text: if funny {
                            format!("wombat kazoo pickle item{i}")
                        } else {
                            format!("council budget report item{i}")
                        },
                        grades: vec![],
                        mean_grade: if funny { 2.0 } else { 0.4 },
                    }
                })
                .collect(),
        }
    }

    fn toy_cfg(dim: usize) -> FederationConfig {
        FederationConfig {
            rounds: 3,
            local_epochs: 2,
            batch_size: 4,
            learning_rate: 0.5,
            feature_dim: dim,
            ..FederationConfig::default()
        }
    }

    fn toy_setup(
        n: usize,
        alphas: &[f64],
        dim: usize,
    ) -> (Vec<Client>, Vec<FeatureVector>, FederationConfig) {
        let split = toy_split(n);
        let cfg = toy_cfg(dim);
        let specs: Vec<ClientSpec> = alphas
            .iter()
            .map(|&alpha| ClientSpec { alpha, beta: None })
            .collect();
        let pop = make_population(&specs, &split, DegeneratePriorPolicy::Clamp).unwrap();
        let features = featurize_split(&split, dim, cfg.hash_seed);
        (pop, features, cfg)
    }

    #[test]
    fn full_batch_single_epoch_is_one_gradient_step() {
        let (pop, features, mut cfg) = toy_setup(12, &[1.0], 64);
        cfg.local_epochs = 1;
        cfg.batch_size = 12; // full batch
        let global = ModelParams::seeded_gaussian(64, 7);
        let (local, _) = client_update(&global, &pop[0], &features, 0, &cfg).unwrap();

        let batch: Vec<(&FeatureVector, u8)> = pop[0]
            .train_labels
            .labels
            .iter()
            .enumerate()
            .map(|(i, &l)| (&features[i], l))
            .collect();
        let (_, grad) = loss_and_grad(
            &global,
            &batch,
            pop[0].profile.priors(),
            pop[0].profile.beta,
            cfg.objective,
        )
        .unwrap();
        let expect = sgd_step(&global, &grad, cfg.learning_rate).unwrap();
        // the shuffled batch accumulates in a different order, so compare up
        // to floating-point associativity
        let worst = crate::model::max_abs_diff(&local, &expect);
        assert!(worst <= 1e-12, "max deviation {worst}");
    }

    #[test]
    fn zero_learning_rate_keeps_global() {
        let (pop, features, mut cfg) = toy_setup(10, &[1.0], 32);
        cfg.learning_rate = 0.0;
        let global = ModelParams::seeded_gaussian(32, 3);
        let (local, _) = client_update(&global, &pop[0], &features, 1, &cfg).unwrap();
        assert_eq!(local, global);
    }

    #[test]
    fn client_update_is_bitwise_deterministic() {
        let (pop, features, cfg) = toy_setup(15, &[0.9], 32);
        let global = ModelParams::seeded_gaussian(32, 11);
        let a = client_update(&global, &pop[0], &features, 2, &cfg).unwrap();
        let b = client_update(&global, &pop[0], &features, 2, &cfg).unwrap();
        assert_eq!(a.0.to_bytes(), b.0.to_bytes());
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn aggregate_identity_and_symmetry() {
        let p = ModelParams::seeded_gaussian(16, 1);
        assert_eq!(aggregate(std::slice::from_ref(&p)).unwrap(), p);

        let mut neg = p.clone();
        for w in &mut neg.weights {
            *w = -*w;
        }
        neg.bias = [-p.bias[0], -p.bias[1]];
        let zero = aggregate(&[p.clone(), neg]).unwrap();
        assert!(zero.weights.iter().all(|&w| w == 0.0));
    }

    #[test]
    fn aggregate_arithmetic_mean() {
        let mut a = ModelParams::zeros(1);
        let mut b = ModelParams::zeros(1);
        let mut c = ModelParams::zeros(1);
        a.weights[0] = 1.0;
        b.weights[0] = 2.0;
        c.weights[0] = 6.0;
        let mean = aggregate(&[a, b, c]).unwrap();
        assert!((mean.weights[0] - 3.0).abs() < 1e-15);
    }

    #[test]
    fn aggregate_rejects_shape_mismatch_and_empty() {
        assert!(matches!(aggregate(&[]), Err(Error::Domain(_))));
        let a = ModelParams::zeros(2);
        let b = ModelParams::zeros(3);
        assert!(matches!(
            aggregate(&[a, b]),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn sampling_is_deterministic_and_exhaustive() {
        assert_eq!(sample_clients(1, 1, 0, 9).unwrap(), vec![0]);
        let all = sample_clients(5, 5, 3, 9).unwrap();
        assert_eq!(all, vec![0, 1, 2, 3, 4]);
        assert_eq!(
            sample_clients(10, 4, 7, 1).unwrap(),
            sample_clients(10, 4, 7, 1).unwrap()
        );
        assert!(sample_clients(3, 4, 0, 1).is_err());
        assert!(sample_clients(3, 0, 0, 1).is_err());
    }

    #[test]
    fn sampling_varies_with_round_and_seed() {
        let rounds: Vec<Vec<usize>> = (0..8)
            .map(|r| sample_clients(30, 5, r, 123).unwrap())
            .collect();
        assert!(rounds.windows(2).any(|w| w[0] != w[1]));
    }

    #[test]
    fn single_client_federation_equals_sequential_sgd() {
        let (pop, features, mut cfg) = toy_setup(14, &[1.0], 32);
        cfg.rounds = 5;
        cfg.clients_per_round = Some(1);
        let run = run_federation(&pop, &features, &cfg).unwrap();

        let mut params = ModelParams::seeded_gaussian(cfg.feature_dim, cfg.seed);
        for round in 0..cfg.rounds {
            params = client_update(&params, &pop[0], &features, round, &cfg)
                .unwrap()
                .0;
        }
        assert_eq!(run.final_global.to_bytes(), params.to_bytes());
    }

    #[test]
    fn identical_clients_match_single_client_run() {
        let (pop, features, mut cfg) = toy_setup(14, &[1.0], 32);
        cfg.rounds = 4;
        // five exact copies of the same client, id included, so their local
        // shuffle streams coincide
        let clones: Vec<Client> = (0..5).map(|_| pop[0].clone()).collect();
        let run_many = run_federation(&clones, &features, &cfg).unwrap();
        let run_one = run_federation(&pop, &features, &cfg).unwrap();

        let worst = crate::model::max_abs_diff(&run_many.final_global, &run_one.final_global);
        assert!(worst <= 1e-12, "max deviation {worst}");
    }

    #[test]
    fn rerun_is_bitwise_identical() {
        let (pop, features, cfg) = toy_setup(20, &[0.5, 1.0, 1.8], 32);
        let a = run_federation(&pop, &features, &cfg).unwrap();
        let b = run_federation(&pop, &features, &cfg).unwrap();
        assert_eq!(a.final_global.to_bytes(), b.final_global.to_bytes());
        assert_eq!(a.logs, b.logs);
    }

    #[test]
    fn round_logs_have_selected_counts_and_checkpoints() {
        let (pop, features, mut cfg) = toy_setup(12, &[0.5, 1.0, 1.5, 2.0], 32);
        cfg.clients_per_round = Some(2);
        cfg.rounds = 4;
        let run = run_federation(&pop, &features, &cfg).unwrap();
        assert_eq!(run.logs.len(), 4);
        assert_eq!(run.checkpoints.len(), 4);
        for log in &run.logs {
            assert_eq!(log.selected_clients.len(), 2);
            let mut dedup = log.selected_clients.clone();
            dedup.dedup();
            assert_eq!(dedup.len(), 2, "duplicate client in round");
            assert!(log.mean_client_loss.is_finite());
        }
        assert_eq!(run.checkpoints.last().unwrap(), &run.final_global);
    }

    #[test]
    fn audit_server_boundary_carries_parameter_tensors_only() {
        // Everything the server aggregates must be reproducible from pure
        // parameter-space client updates: re-derive each local update from
        // the observed pre-round global and compare bitwise.
        let (pop, features, mut cfg) = toy_setup(18, &[0.4, 1.0, 1.6], 24);
        cfg.clients_per_round = Some(2);
        let mut audited_rounds = 0;
        run_federation_observed(&pop, &features, &cfg, |audit| {
            audited_rounds += 1;
            assert_eq!(audit.locals.len(), 2);
            for (pos, local) in audit.selected_indices.iter().zip(audit.locals) {
                assert_eq!(local.dim(), cfg.feature_dim);
                assert!(local.is_finite());
                let expect = client_update(
                    audit.global_before,
                    &pop[*pos],
                    &features,
                    audit.round_index,
                    &cfg,
                )
                .unwrap()
                .0;
                assert_eq!(local.to_bytes(), expect.to_bytes());
            }
            let expect_agg = aggregate(audit.locals).unwrap();
            assert_eq!(audit.aggregated.to_bytes(), expect_agg.to_bytes());
        })
        .unwrap();
        assert_eq!(audited_rounds, cfg.rounds);
    }

    #[test]
    fn persist_writes_jsonl_and_checkpoints() {
        let (pop, features, mut cfg) = toy_setup(10, &[1.0], 16);
        cfg.rounds = 3;
        let run = run_federation(&pop, &features, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        persist_run(&run, dir.path()).unwrap();

        let text = std::fs::read_to_string(dir.path().join("logs.jsonl")).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        for (i, line) in lines.iter().enumerate() {
            let log: RoundLog = serde_json::from_str(line).unwrap();
            assert_eq!(log.round_index, i);
            let ckpt =
                ModelParams::load(dir.path().join("checkpoints").join(&log.checkpoint)).unwrap();
            assert_eq!(ckpt, run.checkpoints[i]);
        }
    }

    #[test]
    fn degenerate_priors_abort_with_client_id() {
        let (mut pop, features, cfg) = toy_setup(10, &[1.0], 32);
        pop[0].profile.prior_pos = 1.0;
        let err = run_federation(&pop, &features, &cfg).unwrap_err();
        match err {
            Error::ClientUpdate {
                round, client_id, ..
            } => {
                assert_eq!(round, 0);
                assert_eq!(client_id, 0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(40))]

            #[test]
            fn aggregate_permutation_invariant(seed in 0u64..200, n in 2usize..8) {
                let locals: Vec<ModelParams> = (0..n)
                    .map(|i| ModelParams::seeded_gaussian(12, seed + i as u64))
                    .collect();
                let mut reversed = locals.clone();
                reversed.reverse();
                let a = aggregate(&locals).unwrap();
                let b = aggregate(&reversed).unwrap();
                for (x, y) in a.weights.iter().zip(&b.weights) {
                    prop_assert!((x - y).abs() <= 1e-12);
                }
            }

            #[test]
            fn sampled_ids_distinct_and_in_range(
                pop in 1usize..40,
                seed in 0u64..50,
                round in 0usize..10,
            ) {
                let k = 1 + seed as usize % pop;
                let ids = sample_clients(pop, k, round, seed).unwrap();
                prop_assert_eq!(ids.len(), k);
                let mut dedup = ids.clone();
                dedup.dedup();
                prop_assert_eq!(dedup.len(), k);
                prop_assert!(ids.iter().all(|&i| i < pop));
            }
        }
    }
}
