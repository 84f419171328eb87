//! Simulated client population with diverse humor preferences.
//!
//! Each client owns a preference threshold `alpha` on the 0-3 funniness
//! scale: headlines with mean rating at or above `alpha` are humorous to
//! that client, the rest are not. From the resulting binary labels the
//! client computes its empirical class priors, which drive the
//! prior-scaling in [`crate::model`]. Labels never leave the owning
//! client's partition; the federation server only ever sees parameter
//! tensors.

use serde::{Deserialize, Serialize};

use crate::data::DatasetSplit;
use crate::error::{Error, Result};

/// A simulated user: preference threshold, scaling exponent, and the class
/// priors observed on its own training labels. `prior_neg` is stored as the
/// complement of `prior_pos`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientProfile {
    pub client_id: u32,
    pub alpha: f64,
    pub beta: f64,
    /// Empirical P(y = 1) on the client's training labels, strictly in (0, 1).
    pub prior_pos: f64,
    /// True when the raw priors were degenerate and smoothing was applied.
    pub priors_clamped: bool,
}

impl ClientProfile {
    pub fn prior_neg(&self) -> f64 {
        1.0 - self.prior_pos
    }

    /// Priors indexed by class: `[P(y = 0), P(y = 1)]`.
    pub fn priors(&self) -> [f64; 2] {
        [self.prior_neg(), self.prior_pos]
    }
}

/// A client's binary labels, aligned index-for-index with the records of
/// the split they were derived from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledView {
    pub client_id: u32,
    pub labels: Vec<u8>,
}

/// A population member: profile plus its private training labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Client {
    pub profile: ClientProfile,
    pub train_labels: LabeledView,
}

/// One entry of a population spec file: `{"alpha": 0.9}` or
/// `{"alpha": 0.9, "beta": 0.5}`. A missing beta falls back to
/// [`default_beta`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClientSpec {
    pub alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
}

/// What to do when a client's labels are single-class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DegeneratePriorPolicy {
    /// Smooth priors into `[1/(n+2), 1 - 1/(n+2)]` (add-one over n labels).
    Clamp,
    /// Propagate [`Error::DegeneratePriors`].
    Reject,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 3.0) {
        return Err(Error::Domain(format!(
            "alpha {alpha} outside the open interval (0, 3)"
        )));
    }
    Ok(())
}

/// Threshold a split's mean ratings into one client's binary labels:
/// `labels[i] = 1` iff `records[i].mean_grade >= alpha`.
pub fn generate_labels(split: &DatasetSplit, alpha: f64, client_id: u32) -> Result<LabeledView> {
    check_alpha(alpha)?;
    if split.records.is_empty() {
        return Err(Error::Domain("cannot label an empty split".into()));
    }
    let labels = split
        .records
        .iter()
        .map(|r| u8::from(r.mean_grade >= alpha))
        .collect();
    Ok(LabeledView { client_id, labels })
}

/// Empirical class frequencies `(P(y=1), P(y=0))` of a label vector.
/// Single-class vectors yield [`Error::DegeneratePriors`] carrying the
/// counts so the caller can decide on clamping.
pub fn empirical_priors(labels: &[u8]) -> Result<(f64, f64)> {
    if labels.is_empty() {
        return Err(Error::Domain("cannot compute priors of zero labels".into()));
    }
    let positives = labels.iter().filter(|&&l| l == 1).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::DegeneratePriors {
            positives,
            negatives,
        });
    }
    let prior_pos = positives as f64 / labels.len() as f64;
    Ok((prior_pos, 1.0 - prior_pos))
}

/// The sweep-derived beta policy: gentle scaling (0.1) for extreme
/// preferences (alpha below 0.5 or above 1.5), full scaling (1.0) for the
/// middle range.
pub fn default_beta(alpha: f64) -> f64 {
    if (0.5..=1.5).contains(&alpha) {
        1.0
    } else {
        0.1
    }
}

fn clamped_prior_pos(labels: &[u8]) -> f64 {
    let n = labels.len() as f64;
    let positives = labels.iter().filter(|&&l| l == 1).count() as f64;
    let floor = 1.0 / (n + 2.0);
    (positives / n).clamp(floor, 1.0 - floor)
}

/// Build a population from alpha (and optional beta) specs, deriving
/// labels, priors and default betas from `split`. Client ids are assigned
/// 0..n-1 in spec order.
pub fn make_population(
    specs: &[ClientSpec],
    split: &DatasetSplit,
    policy: DegeneratePriorPolicy,
) -> Result<Vec<Client>> {
    specs
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            let client_id = i as u32;
            let view = generate_labels(split, spec.alpha, client_id)?;
            if let Some(b) = spec.beta {
                if !(b.is_finite() && b >= 0.0) {
                    return Err(Error::Domain(format!(
                        "beta {b} for client {client_id} must be finite and >= 0"
                    )));
                }
            }
            let (prior_pos, clamped) = match empirical_priors(&view.labels) {
                Ok((pos, _)) => (pos, false),
                Err(Error::DegeneratePriors { .. }) if policy == DegeneratePriorPolicy::Clamp => {
                    (clamped_prior_pos(&view.labels), true)
                }
                Err(e) => return Err(e),
            };
            Ok(Client {
                profile: ClientProfile {
                    client_id,
                    alpha: spec.alpha,
                    beta: spec.beta.unwrap_or_else(|| default_beta(spec.alpha)),
                    prior_pos,
                    priors_clamped: clamped,
                },
                train_labels: view,
            })
        })
        .collect()
}

/// Alphas from `start` to `stop` inclusive in steps of 0.1, computed on an
/// integer grid so the values print exactly.
pub fn alpha_range_tenths(start_tenths: u32, stop_tenths: u32) -> Vec<f64> {
    (start_tenths..=stop_tenths)
        .map(|t| f64::from(t) / 10.0)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{HeadlineRecord, SplitName};

    fn split_with_means(means: &[f64]) -> DatasetSplit {
        DatasetSplit {
            name: SplitName::Train,
            records: means
                .iter()
                .enumerate()
                .map(|(i, &m)| HeadlineRecord {
                    id: i.to_string(),
                    original: "a <b/> c".into(),
                    edit_word: "x".into(),
                    edited_text: "a x c".into(),
                    grades: vec![],
                    mean_grade: m,
                })
                .collect(),
        }
    }

    #[test]
    fn threshold_semantics() {
        let split = split_with_means(&[2.0, 0.0, 1.0]);
        let view = generate_labels(&split, 1.0, 0).unwrap();
        assert_eq!(view.labels, vec![1, 0, 1]); // mean == alpha counts as humorous
    }

    #[test]
    fn zero_mean_is_never_humorous() {
        let split = split_with_means(&[0.0]);
        for alpha in [0.1, 1.0, 2.9] {
            assert_eq!(generate_labels(&split, alpha, 0).unwrap().labels, vec![0]);
        }
    }

    #[test]
    fn alpha_bounds_rejected() {
        let split = split_with_means(&[1.0]);
        for alpha in [0.0, -1.0, 3.0, 3.5] {
            assert!(matches!(
                generate_labels(&split, alpha, 0),
                Err(Error::Domain(_))
            ));
        }
    }

    #[test]
    fn priors_direct_counts() {
        assert_eq!(empirical_priors(&[1, 1, 1, 0]).unwrap(), (0.75, 0.25));
        assert_eq!(empirical_priors(&[0, 1]).unwrap(), (0.5, 0.5));
    }

    #[test]
    fn degenerate_priors_carry_counts() {
        match empirical_priors(&[1, 1, 1]) {
            Err(Error::DegeneratePriors {
                positives,
                negatives,
            }) => {
                assert_eq!((positives, negatives), (3, 0));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn default_beta_policy() {
        assert_eq!(default_beta(0.3), 0.1);
        assert_eq!(default_beta(0.9), 1.0);
        assert_eq!(default_beta(1.8), 0.1);
        assert_eq!(default_beta(0.5), 1.0);
        assert_eq!(default_beta(1.5), 1.0);
    }

    #[test]
    fn population_ids_and_betas() {
        let split = split_with_means(&[0.0, 0.5, 1.0, 2.5]);
        let specs: Vec<ClientSpec> = [0.3, 0.9, 1.8]
            .iter()
            .map(|&alpha| ClientSpec { alpha, beta: None })
            .collect();
        let pop = make_population(&specs, &split, DegeneratePriorPolicy::Reject).unwrap();
        assert_eq!(pop.len(), 3);
        assert_eq!(
            pop.iter().map(|c| c.profile.client_id).collect::<Vec<_>>(),
            vec![0, 1, 2]
        );
        assert_eq!(pop[0].profile.beta, 0.1);
        assert_eq!(pop[1].profile.beta, 1.0);
        assert_eq!(pop[2].profile.beta, 0.1);
        assert!(pop.iter().all(|c| !c.profile.priors_clamped));
    }

    #[test]
    fn empty_spec_empty_population() {
        let split = split_with_means(&[1.0]);
        let pop = make_population(&[], &split, DegeneratePriorPolicy::Reject).unwrap();
        assert!(pop.is_empty());
    }

    #[test]
    fn explicit_beta_respected() {
        let split = split_with_means(&[0.0, 2.0]);
        let specs = [ClientSpec {
            alpha: 0.3,
            beta: Some(0.7),
        }];
        let pop = make_population(&specs, &split, DegeneratePriorPolicy::Reject).unwrap();
        assert_eq!(pop[0].profile.beta, 0.7);
    }

    #[test]
    fn clamp_policy_smooths_single_class_views() {
        // alpha above every mean grade: all labels 0
        let split = split_with_means(&[0.2, 0.4, 0.6]);
        let specs = [ClientSpec {
            alpha: 2.9,
            beta: None,
        }];
        assert!(matches!(
            make_population(&specs, &split, DegeneratePriorPolicy::Reject),
            Err(Error::DegeneratePriors { .. })
        ));
        let pop = make_population(&specs, &split, DegeneratePriorPolicy::Clamp).unwrap();
        let p = &pop[0].profile;
        assert!(p.priors_clamped);
        assert!((p.prior_pos - 1.0 / 5.0).abs() < 1e-12); // 1/(3+2)
        assert!(p.prior_pos > 0.0 && p.prior_pos < 1.0);
    }

    #[test]
    fn boundary_alpha_below_all_means() {
        let split = split_with_means(&[0.4, 1.2, 2.8]);
        let view = generate_labels(&split, 0.2, 0).unwrap();
        assert_eq!(view.labels, vec![1, 1, 1]);
    }

    #[test]
    fn alpha_grid_is_exact_tenths() {
        let grid = alpha_range_tenths(2, 19);
        assert_eq!(grid.len(), 18);
        assert_eq!(grid[0], 0.2);
        assert_eq!(grid[17], 1.9);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn labels_monotone_in_alpha(
                means in proptest::collection::vec(0.0f64..=3.0, 1..60),
                a1 in 0.01f64..2.99,
                a2 in 0.01f64..2.99,
            ) {
                let (lo, hi) = if a1 <= a2 { (a1, a2) } else { (a2, a1) };
                let split = split_with_means(&means);
                let v_lo = generate_labels(&split, lo, 0).unwrap();
                let v_hi = generate_labels(&split, hi, 0).unwrap();
                let pos = |v: &LabeledView| v.labels.iter().filter(|&&l| l == 1).count();
                prop_assert!(pos(&v_lo) >= pos(&v_hi));
                for (l, h) in v_lo.labels.iter().zip(&v_hi.labels) {
                    prop_assert!(l >= h);
                }
            }

            #[test]
            fn clamped_priors_strictly_inside_unit_interval(
                labels in proptest::collection::vec(0u8..=1, 1..50),
            ) {
                let p = clamped_prior_pos(&labels);
                prop_assert!(p > 0.0 && p < 1.0);
            }
        }
    }
}
