use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{ClassifierParams, LabelRole, LabelStore};
use crate::corpus::Corpus;
use crate::error::Result;
use crate::exec::Execution;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdChoice {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeStat {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Positive validation labels seen for the attribute.
    pub positives: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeStats {
    pub attributes: Vec<AttributeStat>,
}

impl AttributeStats {
    /// Stats for a model with no validation evidence: F1 0, threshold 1.
    pub fn empty(num_attributes: usize) -> Self {
        AttributeStats {
            attributes: vec![
                AttributeStat {
                    threshold: 1.0,
                    precision: 0.0,
                    recall: 0.0,
                    f1: 0.0,
                    positives: 0,
                };
                num_attributes
            ],
        }
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn f1(&self, w: usize) -> f64 {
        self.attributes[w].f1
    }

    pub fn threshold(&self, w: usize) -> f64 {
        self.attributes[w].threshold
    }

    /// Thresholded decision `d_w = [p_w >= θ_w]`.
    pub fn decide(&self, w: usize, p: f64) -> bool {
        p >= self.attributes[w].threshold
    }

    pub fn mean_f1(&self, attributes: &[usize]) -> f64 {
        if attributes.is_empty() {
            return 0.0;
        }
        attributes.iter().map(|&w| self.f1(w)).sum::<f64>() / attributes.len() as f64
    }
}

pub(crate) fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    if tp == 0 {
        0.0
    } else {
        (2 * tp) as f64 / (2 * tp + fp + fn_) as f64
    }
}

/// Threshold maximising F1 over `{0, 1}` ∪ midpoints of consecutive distinct
/// sorted probabilities; ties go to the larger threshold. A prediction is
/// positive when `p >= threshold`.
pub fn best_threshold(probs: &[f64], labels: &[bool]) -> ThresholdChoice {
    let total_pos = labels.iter().filter(|&&l| l).count();
    let none = ThresholdChoice {
        threshold: 1.0,
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
    };
    if total_pos == 0 {
        return none;
    }
    let mut pairs: Vec<(f64, bool)> = probs.iter().copied().zip(labels.iter().copied()).collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut candidates = vec![1.0];
    for win in pairs.windows(2) {
        if win[0].0 != win[1].0 {
            candidates.push(0.5 * (win[0].0 + win[1].0));
        }
    }
    candidates.push(0.0);
    candidates.sort_by(|a, b| b.total_cmp(a));
    candidates.dedup();

    let mut best = none;
    let mut best_f1 = -1.0;
    let (mut tp, mut fp, mut ptr) = (0usize, 0usize, 0usize);
    for theta in candidates {
        while ptr < pairs.len() && pairs[ptr].0 >= theta {
            if pairs[ptr].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            ptr += 1;
        }
        let f1 = f1_from_counts(tp, fp, total_pos - tp);
        if f1 > best_f1 {
            best_f1 = f1;
            best = ThresholdChoice {
                threshold: theta,
                precision: if tp + fp == 0 {
                    0.0
                } else {
                    tp as f64 / (tp + fp) as f64
                },
                recall: tp as f64 / total_pos as f64,
                f1,
            };
        }
    }
    best
}

/// Per-attribute thresholds and precision/recall/F1 on the validation-role
/// entries of `store`.
pub fn tune_thresholds(
    params: &ClassifierParams,
    corpus: &Corpus,
    store: &LabelStore,
    exec: Execution,
) -> Result<AttributeStats> {
    let k = params.num_attributes;
    let items = store.items(LabelRole::Validation);
    let probs = exec.map(&items, |&id| params.probabilities(&corpus.item(id).features));
    let mut by_item = HashMap::with_capacity(items.len());
    for (&id, p) in items.iter().zip(probs) {
        by_item.insert(id, p?);
    }
    let per_attr: Vec<(usize, Vec<(u64, u8)>)> = store
        .by_attribute(LabelRole::Validation, k)
        .into_iter()
        .enumerate()
        .collect();
    let attributes = exec.map(&per_attr, |(w, entries)| {
        let probs: Vec<f64> = entries.iter().map(|(i, _)| by_item[i][*w]).collect();
        let labels: Vec<bool> = entries.iter().map(|&(_, y)| y == 1).collect();
        let c = best_threshold(&probs, &labels);
        AttributeStat {
            threshold: c.threshold,
            precision: c.precision,
            recall: c.recall,
            f1: c.f1,
            positives: labels.iter().filter(|&&l| l).count(),
        }
    });
    Ok(AttributeStats { attributes })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn midpoint_grid_example() {
        let c = best_threshold(&[0.9, 0.6, 0.2], &[true, true, false]);
        assert_eq!(c.f1, 1.0);
        assert!((c.threshold - 0.4).abs() < 1e-15);
    }

    #[test]
    fn predict_all_positive_is_best() {
        let c = best_threshold(&[0.8, 0.3], &[false, true]);
        assert!((c.f1 - 2.0 / 3.0).abs() < 1e-15);
        assert!(c.threshold <= 0.3);
        assert_eq!(c.precision, 0.5);
        assert_eq!(c.recall, 1.0);
    }

    #[test]
    fn no_positives_gives_zero_f1_and_threshold_one() {
        let c = best_threshold(&[0.9, 0.1], &[false, false]);
        assert_eq!((c.f1, c.threshold), (0.0, 1.0));
        let c = best_threshold(&[], &[]);
        assert_eq!((c.f1, c.threshold), (0.0, 1.0));
    }

    #[test]
    fn ties_prefer_larger_threshold() {
        // θ=1: F1 0; θ=0.7: tp1 fp0 fn0 -> 1; θ=0: tp1 fp1 -> 2/3.
        let c = best_threshold(&[0.9, 0.5], &[true, false]);
        assert!((c.threshold - 0.7).abs() < 1e-15);
        // θ=0.8: 2/3; θ=0.5: 1/2; θ=0: 4/5.
        let c = best_threshold(&[0.9, 0.7, 0.3], &[true, false, true]);
        assert!((c.f1 - 0.8).abs() < 1e-15, "{c:?}");
        let c = best_threshold(&[0.9, 0.7, 0.6, 0.3], &[true, false, false, true]);
        // θ=0.8: 2/(2+0+1)=2/3; θ=0: 4/(4+2)=2/3; larger wins
        assert!((c.f1 - 2.0 / 3.0).abs() < 1e-15);
        assert!((c.threshold - 0.8).abs() < 1e-15);
    }
}
