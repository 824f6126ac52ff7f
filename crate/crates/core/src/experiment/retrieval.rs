use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;

use crate::classifier::{AttributeStats, ClassifierParams, LabelRole, LabelSource, LabelStore};
use crate::corpus::{Corpus, ItemId};
use crate::env::{AcquiredLabel, EpisodeSetup};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::grounding::{self, RetrievalConfig};
use crate::rng::Rng;

/// Rankings for one batch: for every eligible target, the active test set
/// built from its own description.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Retrieval {
    pub test_sets: BTreeMap<ItemId, Vec<ItemId>>,
    pub pool_size: usize,
}

impl Retrieval {
    pub fn eligible(&self) -> Vec<ItemId> {
        self.test_sets.keys().copied().collect()
    }
}

/// Ranks the pool against every description in it. An item is eligible when
/// it lands within the rank cap of the ranking for its own description; its
/// active test set is that top-ranked prefix.
pub fn refresh_retrieval(
    classifier: &ClassifierParams,
    stats: &AttributeStats,
    corpus: &Corpus,
    pool: &[ItemId],
    config: &RetrievalConfig,
    exec: Execution,
) -> Result<Retrieval> {
    if pool.is_empty() {
        return Err(Error::Empty("retrieval pool"));
    }
    let decisions: Vec<Vec<bool>> = exec
        .map(pool, |&id| -> Result<Vec<bool>> {
            let p = classifier.probabilities(&corpus.item(id).features)?;
            Ok(p.iter().enumerate().map(|(w, &pw)| stats.decide(w, pw)).collect())
        })
        .into_iter()
        .collect::<Result<_>>()?;
    let ranked = exec.map(pool, |&id| {
        let described = &corpus.item(id).description;
        if described.is_empty() {
            return None;
        }
        let top = grounding::retrieval_rank(pool, &decisions, described, config);
        top.iter()
            .any(|&(i, _)| i == id)
            .then(|| (id, top.into_iter().map(|(i, _)| i).collect::<Vec<_>>()))
    });
    Ok(Retrieval {
        test_sets: ranked.into_iter().flatten().collect(),
        pool_size: pool.len(),
    })
}

/// Uniform eligible target with its ranked test set and the full
/// description, plus a uniform training sample.
pub fn sample_standard_setup(
    retrieval: &Retrieval,
    corpus: &Corpus,
    train_pool: &[ItemId],
    train_size: usize,
    rng: &mut Rng,
) -> Result<EpisodeSetup> {
    let eligible = retrieval.eligible();
    let &target = eligible
        .choose(rng)
        .ok_or_else(|| Error::Episode("no eligible targets for this batch".into()))?;
    Ok(EpisodeSetup {
        target,
        description: corpus.item(target).description.clone(),
        test_set: retrieval.test_sets[&target].clone(),
        train_set: sample_train_set(train_pool, train_size, rng),
    })
}

/// Target among `candidates` random items, described by a random non-empty
/// subset of its description.
pub fn sample_human_eval_setup(
    corpus: &Corpus,
    test_pool: &[ItemId],
    train_pool: &[ItemId],
    candidates: usize,
    train_size: usize,
    rng: &mut Rng,
) -> Result<EpisodeSetup> {
    let described: Vec<ItemId> = test_pool
        .iter()
        .copied()
        .filter(|&i| !corpus.item(i).description.is_empty())
        .collect();
    let &target = described
        .choose(rng)
        .ok_or_else(|| Error::Episode("no described items to use as targets".into()))?;
    let others: Vec<ItemId> = test_pool.iter().copied().filter(|&i| i != target).collect();
    let mut test_set: Vec<ItemId> = others
        .choose_multiple(rng, candidates.saturating_sub(1))
        .copied()
        .collect();
    test_set.push(target);
    test_set.sort_unstable();
    let full = &corpus.item(target).description;
    let size = rng.random_range(1..=full.len());
    let mut description: Vec<usize> = full.choose_multiple(rng, size).copied().collect();
    description.sort_unstable();
    Ok(EpisodeSetup {
        target,
        description,
        test_set,
        train_set: sample_train_set(train_pool, train_size, rng),
    })
}

fn sample_train_set(pool: &[ItemId], size: usize, rng: &mut Rng) -> Vec<ItemId> {
    let mut out = pool.to_vec();
    if size < out.len() {
        let (chosen, _) = out.partial_shuffle(rng, size);
        out = chosen.to_vec();
    }
    out.sort_unstable();
    out
}

/// Routes acquired labels to the validation role with probability `rho_val`,
/// otherwise to training. Already-known pairs are skipped. Returns the items
/// that received new training labels, ascending.
pub fn apply_batch_labels(
    acquired: &[AcquiredLabel],
    store: &mut LabelStore,
    rho_val: f64,
    rng: &mut Rng,
) -> Vec<ItemId> {
    let mut touched = Vec::new();
    for a in acquired {
        if store.contains(a.item, a.attribute) {
            continue;
        }
        let role = if rng.random::<f64>() < rho_val {
            LabelRole::Validation
        } else {
            LabelRole::Training
        };
        store.insert(a.item, a.attribute, a.value, role, a.source);
        if role == LabelRole::Training {
            touched.push(a.item);
        }
    }
    touched.sort_unstable();
    touched.dedup();
    touched
}

/// Labels as acquired by simulated queries, for tests and tools.
pub fn simulated_label(item: ItemId, attribute: usize, value: u8) -> AcquiredLabel {
    AcquiredLabel {
        item,
        attribute,
        value,
        source: LabelSource::ActiveLearning,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn routing_extremes_and_dedup() {
        let acquired = vec![
            simulated_label(1, 0, 1),
            simulated_label(2, 1, 0),
            simulated_label(1, 0, 0),
        ];
        let mut rng = Rng::seed_from_u64(0);
        let mut s = LabelStore::new();
        assert_eq!(apply_batch_labels(&acquired, &mut s, 0.0, &mut rng), vec![1, 2]);
        assert_eq!(s.count(LabelRole::Training), 2);
        assert_eq!(s.get(1, 0).unwrap().value, 1);
        let mut s = LabelStore::new();
        assert!(apply_batch_labels(&acquired, &mut s, 1.0, &mut rng).is_empty());
        assert_eq!(s.count(LabelRole::Validation), 2);
    }

    #[test]
    fn train_sample_size() {
        let mut rng = Rng::seed_from_u64(0);
        let pool: Vec<ItemId> = (0..50).collect();
        let s = sample_train_set(&pool, 20, &mut rng);
        assert_eq!(s.len(), 20);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(sample_train_set(&pool, 80, &mut rng).len(), 50);
    }
}
