//! Read-only state every session shares.

use std::fs;
use std::path::Path;

use hdialog::classifier::{self, tune_thresholds, AttributeStats, ClassifierParams, LabelRole, LabelStore};
use hdialog::corpus::{Corpus, ItemId, Split, SplitCorpus};
use hdialog::env::{EpisodeSetup, RewardConfig};
use hdialog::experiment::{
    sample_human_eval_setup, Experiment, ExperimentConfig, CLASSIFIER_FINAL_FILE, CONFIG_FILE, LABELS_FILE, POLICY_FILE,
};
use hdialog::features::{DialogHistoryStats, FeatureConfig, FeatureContext};
use hdialog::policy::{load_checkpoint, PolicyBundle, PolicyCheckpoint};
use hdialog::{rng, Execution};

use crate::error::{Result, ServiceError};

pub const EXAMPLES_PER_ATTRIBUTE: usize = 3;

/// Everything needed to build a [`Shared`].
pub struct ServiceParts {
    pub corpus: Corpus,
    pub splits: SplitCorpus,
    pub classifier: ClassifierParams,
    pub labels: LabelStore,
    pub checkpoint: PolicyCheckpoint,
    pub reward: RewardConfig,
    pub features: FeatureConfig,
    /// Split whose items serve as targets and candidates.
    pub split: Split,
    pub candidates: usize,
    pub train_set_size: usize,
    pub seed: u64,
}

pub struct Shared {
    pub corpus: Corpus,
    pub classifier: ClassifierParams,
    pub stats: AttributeStats,
    pub labels: LabelStore,
    pub bundle: PolicyBundle,
    pub history: DialogHistoryStats,
    pub features: FeatureConfig,
    pub reward: RewardConfig,
    pub test_pool: Vec<ItemId>,
    pub train_pool: Vec<ItemId>,
    pub candidates: usize,
    pub train_set_size: usize,
    /// Up to three validation positives per attribute, most confident first.
    pub examples: Vec<Vec<ItemId>>,
    pub seed: u64,
}

impl Shared {
    /// Rejects oracle checkpoints, tunes thresholds on the validation labels
    /// and picks the example items shown next to attribute questions.
    pub fn new(parts: ServiceParts) -> Result<Self> {
        let ServiceParts {
            corpus,
            splits,
            classifier,
            labels,
            checkpoint,
            reward,
            features,
            split,
            candidates,
            train_set_size,
            seed,
        } = parts;
        if checkpoint.bundle.has_oracle() {
            return Err(ServiceError::Checkpoint(
                "oracle clarification needs the hidden target and cannot drive live sessions".into(),
            ));
        }
        let k = corpus.num_attributes();
        if classifier.dim != corpus.dim || classifier.num_attributes != k {
            return Err(ServiceError::Checkpoint("classifier does not match the corpus".into()));
        }
        if checkpoint.history.used.len() != k || checkpoint.history.successful.len() != k {
            return Err(ServiceError::Checkpoint(
                "policy history does not match the corpus".into(),
            ));
        }
        reward.validate()?;
        let set = splits.set(split);
        if set.classifier_test.is_empty() || set.classifier_training.is_empty() {
            return Err(ServiceError::Validation(format!("split {} has no items", split.name())));
        }
        let stats = tune_thresholds(&classifier, &corpus, &labels, Execution::Sequential)?;
        let examples = example_items(&classifier, &corpus, &labels)?;
        Ok(Shared {
            stats,
            examples,
            test_pool: set.classifier_test.clone(),
            train_pool: set.classifier_training.clone(),
            corpus,
            classifier,
            labels,
            bundle: checkpoint.bundle,
            history: checkpoint.history,
            features,
            reward,
            candidates,
            train_set_size,
            seed,
        })
    }

    /// Loads a finished experiment directory: its config rebuilds the corpus
    /// and splits, and the final classifier, policy and label store are read
    /// from their files.
    pub fn from_run_dir(dir: &Path) -> Result<Self> {
        let read = |name: &str| {
            let path = dir.join(name);
            fs::read(&path).map_err(|e| ServiceError::Validation(format!("{}: {e}", path.display())))
        };
        let config: ExperimentConfig = serde_json::from_slice(&read(CONFIG_FILE)?)
            .map_err(|e| ServiceError::Validation(format!("{CONFIG_FILE}: {e}")))?;
        let classifier = classifier::restore(&read(CLASSIFIER_FINAL_FILE)?)?;
        let checkpoint = load_checkpoint(&read(POLICY_FILE)?)?;
        let exp = Experiment::new(config)?;
        let labels = match read(LABELS_FILE) {
            Ok(blob) => {
                serde_json::from_slice(&blob).map_err(|e| ServiceError::Validation(format!("{LABELS_FILE}: {e}")))?
            }
            Err(_) => exp.labels.clone(),
        };
        let cfg = &exp.config;
        Shared::new(ServiceParts {
            reward: cfg.reward.clone(),
            features: cfg.features.clone(),
            split: cfg.test_split,
            candidates: cfg.human_eval_candidates,
            train_set_size: cfg.train_set_size,
            seed: cfg.seed,
            classifier,
            labels,
            checkpoint,
            corpus: exp.corpus,
            splits: exp.splits,
        })
    }

    /// Target, candidate set, sampled description and training set for a
    /// session seed.
    pub fn setup_for(&self, seed: u64) -> Result<EpisodeSetup> {
        let mut r = rng::stream(seed, &[0x5E5]);
        Ok(sample_human_eval_setup(
            &self.corpus,
            &self.test_pool,
            &self.train_pool,
            self.candidates,
            self.train_set_size,
            &mut r,
        )?)
    }

    pub fn context(&self) -> FeatureContext<'_> {
        FeatureContext {
            corpus: &self.corpus,
            labels: &self.labels,
            stats: &self.stats,
            history: &self.history,
            config: &self.features,
        }
    }

    pub fn attribute_name(&self, w: usize) -> &str {
        &self.corpus.catalog.names[w]
    }
}

fn example_items(classifier: &ClassifierParams, corpus: &Corpus, labels: &LabelStore) -> Result<Vec<Vec<ItemId>>> {
    let k = corpus.num_attributes();
    let mut out = Vec::with_capacity(k);
    for (w, entries) in labels.by_attribute(LabelRole::Validation, k).into_iter().enumerate() {
        let mut scored = Vec::new();
        for (id, value) in entries {
            if value == 1 {
                scored.push((id, classifier.probabilities(&corpus.item(id).features)?[w]));
            }
        }
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        out.push(
            scored
                .into_iter()
                .take(EXAMPLES_PER_ATTRIBUTE)
                .map(|(id, _)| id)
                .collect(),
        );
    }
    Ok(out)
}
