//! Federated inference and macro-averaged evaluation.
//!
//! Each client predicts with the global model rescaled by its own priors,
//! scores against its own labels, and the population report averages the
//! per-client macro metrics with equal weight. Metrics are stored as
//! fractions in [0, 1]; CSV exports scale by 100 for presentation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::DatasetSplit;
use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::labeling::{generate_labels, Client, ClientProfile};
use crate::model::{argmax2, forward, scale_infer, ModelParams};

/// Binary confusion counts with the humorous class (y = 1) as positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// Macro-averaged precision, recall and F1 as fractions in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MacroMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// One client's slice of an [`EvalReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientEval {
    pub client_id: u32,
    pub alpha: f64,
    pub beta: f64,
    pub confusion: ConfusionMatrix,
    pub macro_p: f64,
    pub macro_r: f64,
    pub macro_f1: f64,
}

/// Per-client confusion matrices and macro metrics plus their unweighted
/// population means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_client: BTreeMap<u32, ClientEval>,
    pub overall_p: f64,
    pub overall_r: f64,
    pub overall_f1: f64,
}

/// Class probabilities of every instance under the global model.
pub fn forward_probs(global: &ModelParams, features: &[FeatureVector]) -> Result<Vec<[f64; 2]>> {
    features.par_iter().map(|x| forward(global, x)).collect()
}

/// Rescale precomputed probabilities with one client's priors and take the
/// argmax per instance.
pub fn predict_from_probs(probs: &[[f64; 2]], profile: &ClientProfile) -> Result<Vec<u8>> {
    probs
        .iter()
        .map(|&p| Ok(argmax2(scale_infer(p, profile.priors(), profile.beta)?)))
        .collect()
}

/// Predicted labels for one client: argmax of the prior-rescaled
/// distribution per instance.
pub fn predict_client(
    global: &ModelParams,
    profile: &ClientProfile,
    features: &[FeatureVector],
) -> Result<Vec<u8>> {
    predict_from_probs(&forward_probs(global, features)?, profile)
}

/// Plain argmax predictions without any rescaling.
pub fn predict_plain(global: &ModelParams, features: &[FeatureVector]) -> Result<Vec<u8>> {
    Ok(forward_probs(global, features)?
        .into_iter()
        .map(argmax2)
        .collect())
}

/// Standard confusion counts of binary predictions against truth.
pub fn confusion(pred: &[u8], truth: &[u8]) -> Result<ConfusionMatrix> {
    if pred.is_empty() || pred.len() != truth.len() {
        return Err(Error::Domain(format!(
            "prediction/truth length mismatch: {} vs {}",
            pred.len(),
            truth.len()
        )));
    }
    let mut c = ConfusionMatrix::default();
    for (&p, &t) in pred.iter().zip(truth) {
        match (t, p) {
            (1, 1) => c.tp += 1,
            (0, 1) => c.fp += 1,
            (1, 0) => c.fn_ += 1,
            (0, 0) => c.tn += 1,
            _ => return Err(Error::Domain(format!("non-binary label pair ({t}, {p})"))),
        }
    }
    Ok(c)
}

/// A class fraction, with the zero-denominator case contributing 0.
fn frac(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Macro precision/recall/F1 over the two classes. The F1 form
/// `TP/(2TP+FN+FP) + TN/(2TN+FN+FP)` is algebraically the mean of the two
/// per-class F1 scores.
pub fn macro_metrics(c: &ConfusionMatrix) -> MacroMetrics {
    let precision = 0.5 * (frac(c.tp, c.tp + c.fp) + frac(c.tn, c.tn + c.fn_));
    let recall = 0.5 * (frac(c.tp, c.tp + c.fn_) + frac(c.tn, c.tn + c.fp));
    let f1 = frac(c.tp, 2 * c.tp + c.fn_ + c.fp) + frac(c.tn, 2 * c.tn + c.fn_ + c.fp);
    MacroMetrics {
        precision,
        recall,
        f1,
    }
}

pub(crate) fn mean_metrics(per_client: impl Iterator<Item = MacroMetrics> + Clone) -> MacroMetrics {
    let n = per_client.clone().count() as f64;
    let mut sum = MacroMetrics {
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
    };
    for m in per_client {
        sum.precision += m.precision;
        sum.recall += m.recall;
        sum.f1 += m.f1;
    }
    MacroMetrics {
        precision: sum.precision / n,
        recall: sum.recall / n,
        f1: sum.f1 / n,
    }
}

/// Evaluate the global model on every client: rescaled predictions against
/// that client's own test labels, overall metrics as unweighted client
/// means.
pub fn evaluate_population(
    global: &ModelParams,
    population: &[Client],
    test_split: &DatasetSplit,
    test_features: &[FeatureVector],
) -> Result<EvalReport> {
    if population.is_empty() {
        return Err(Error::Domain("population is empty".into()));
    }
    if test_split.records.len() != test_features.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} feature vectors", test_split.records.len()),
            actual: format!("{}", test_features.len()),
        });
    }
    let probs = forward_probs(global, test_features)?;
    let evals: Vec<ClientEval> = population
        .par_iter()
        .map(|client| {
            let profile = &client.profile;
            let truth = generate_labels(test_split, profile.alpha, profile.client_id)?;
            let pred = predict_from_probs(&probs, profile)?;
            let c = confusion(&pred, &truth.labels)?;
            let m = macro_metrics(&c);
            Ok(ClientEval {
                client_id: profile.client_id,
                alpha: profile.alpha,
                beta: profile.beta,
                confusion: c,
                macro_p: m.precision,
                macro_r: m.recall,
                macro_f1: m.f1,
            })
        })
        .collect::<Result<_>>()?;

    let overall = mean_metrics(evals.iter().map(|e| MacroMetrics {
        precision: e.macro_p,
        recall: e.macro_r,
        f1: e.macro_f1,
    }));
    Ok(EvalReport {
        per_client: evals.into_iter().map(|e| (e.client_id, e)).collect(),
        overall_p: overall.precision,
        overall_r: overall.recall,
        overall_f1: overall.f1,
    })
}

impl EvalReport {
    /// CSV export: one row per client plus an `overall` summary row.
    /// Metrics are percentages rounded to two decimals.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("client_id,alpha,beta,tp,fp,fn,tn,macro_p,macro_r,macro_f1\n");
        for e in self.per_client.values() {
            let c = e.confusion;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{:.2},{:.2},{:.2}",
                e.client_id,
                e.alpha,
                e.beta,
                c.tp,
                c.fp,
                c.fn_,
                c.tn,
                e.macro_p * 100.0,
                e.macro_r * 100.0,
                e.macro_f1 * 100.0
            );
        }
        let _ = writeln!(
            out,
            "overall,,,,,,,{:.2},{:.2},{:.2}",
            self.overall_p * 100.0,
            self.overall_r * 100.0,
            self.overall_f1 * 100.0
        );
        out
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer_pretty(BufWriter::new(file), self)?;
        Ok(())
    }
}
