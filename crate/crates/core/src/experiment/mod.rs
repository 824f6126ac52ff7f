//! Batch orchestration: pretraining, policy initialization, policy training,
//! classifier reset and testing.

mod report;
mod retrieval;

pub use report::{
    batch_metrics, counterfactual_success, emit_reports, read_metrics, summarize, BatchMetrics, DialogOutcome, Summary,
    COUNTERFACTUAL_FILE, DIALOGS_FILE, METRICS_FILE, QUESTION_SPLIT_FILE, SUMMARY_FILE, TIMINGS_FILE,
};
pub use retrieval::{
    apply_batch_labels, refresh_retrieval, sample_human_eval_setup, sample_standard_setup, simulated_label, Retrieval,
};

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::classifier::{
    self, incremental_update, pretrain, tune_thresholds, AttributeStats, ClassifierParams, Example, LabelRole,
    LabelSource, LabelStore, TrainConfig,
};
use crate::corpus::{self, Corpus, GenConfig, Split, SplitCorpus};
use crate::env::{self, AcquiredLabel, DialogState, EpisodeSetup, RewardConfig};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::features::{self, DialogHistoryStats, FeatureConfig, FeatureContext};
use crate::grounding::RetrievalConfig;
use crate::policy::{
    self, ActingMode, BundleSpec, EpisodeTrace, LearningConfig, PolicyBundle, StaticPolicyConfig, TurnRecord,
};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Initialization,
    Training,
    Testing,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Initialization => "initialization",
            Phase::Training => "training",
            Phase::Testing => "testing",
        }
    }

    fn tag(self) -> u64 {
        self as u64 + 1
    }

    pub fn acting_mode(self) -> ActingMode {
        match self {
            Phase::Initialization => ActingMode::Initialization,
            Phase::Training => ActingMode::Training,
            Phase::Testing => ActingMode::Evaluation,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhaseCounts {
    pub initialization: usize,
    pub training: usize,
    pub testing: usize,
}

impl Default for PhaseCounts {
    fn default() -> Self {
        PhaseCounts {
            initialization: 4,
            training: 4,
            testing: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Corpus file to load; a synthetic corpus is generated from `generate`
    /// when absent.
    pub corpus_path: Option<PathBuf>,
    /// Split sidecar to load instead of deriving splits from the partition.
    pub split_path: Option<PathBuf>,
    pub generate: GenConfig,
    /// Pretrained classifier snapshot; pretraining runs when absent.
    pub classifier_path: Option<PathBuf>,
    pub classifier_split_ratio: f64,
    pub phases: PhaseCounts,
    pub dialogs_per_batch: usize,
    pub reward: RewardConfig,
    pub retrieval: RetrievalConfig,
    pub features: FeatureConfig,
    pub static_policy: StaticPolicyConfig,
    pub policy: BundleSpec,
    pub learning: LearningConfig,
    pub classifier: TrainConfig,
    /// Leave attributes without a single positive pretraining label out of
    /// the pretraining loss, so their units are not driven into the dead
    /// ReLU region before any positive example arrives.
    pub mask_unseen_attributes: bool,
    pub train_set_size: usize,
    pub rho_val: f64,
    /// Feed labels acquired by dialogs back into the classifier.
    pub apply_active_learning: bool,
    pub human_eval_variant: bool,
    pub human_eval_candidates: usize,
    /// Split used in the test phase.
    pub test_split: Split,
    pub execution: Execution,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            corpus_path: None,
            split_path: None,
            generate: GenConfig::default(),
            classifier_path: None,
            classifier_split_ratio: 0.6,
            phases: PhaseCounts::default(),
            dialogs_per_batch: 100,
            reward: RewardConfig::default(),
            retrieval: RetrievalConfig::default(),
            features: FeatureConfig::default(),
            static_policy: StaticPolicyConfig::default(),
            policy: BundleSpec::default(),
            learning: LearningConfig::default(),
            classifier: TrainConfig::default(),
            mask_unseen_attributes: true,
            train_set_size: 200,
            rho_val: 0.2,
            apply_active_learning: true,
            human_eval_variant: false,
            human_eval_candidates: 100,
            test_split: Split::Test,
            execution: Execution::default(),
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    /// 10/10/5 batches, 100 random candidates and sampled descriptions.
    pub fn human_eval() -> Self {
        ExperimentConfig {
            phases: PhaseCounts {
                initialization: 10,
                training: 10,
                testing: 5,
            },
            human_eval_variant: true,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(0.0..=1.0).contains(&self.rho_val) {
            return bad("rho_val must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.classifier_split_ratio) {
            return bad("classifier_split_ratio must lie in [0, 1]");
        }
        if self.dialogs_per_batch == 0 {
            return bad("dialogs_per_batch must be positive");
        }
        if self.train_set_size == 0 {
            return bad("train_set_size must be positive");
        }
        if self.human_eval_variant && self.human_eval_candidates == 0 {
            return bad("human_eval_candidates must be positive");
        }
        if matches!(self.test_split, Split::Pretrain | Split::Train) {
            return bad("test_split must be val or test");
        }
        self.reward.validate()?;
        self.retrieval.validate()?;
        self.static_policy.validate()?;
        self.learning.validate()?;
        self.classifier.validate()?;
        self.policy.validate()?;
        if self.policy.clarification == policy::PolicyKind::Oracle && self.phases.training + self.phases.testing > 0 {
            return bad("an oracle clarification policy can only run initialization batches");
        }
        Ok(())
    }

    pub fn split_for(&self, phase: Phase) -> Split {
        match phase {
            Phase::Initialization | Phase::Training => Split::Train,
            Phase::Testing => self.test_split,
        }
    }
}

/// A finished run: metrics, dialog outcomes and final model states.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub metrics: Vec<BatchMetrics>,
    pub dialogs: Vec<DialogOutcome>,
    pub classifier: ClassifierParams,
    pub pretrained: ClassifierParams,
    pub bundle: PolicyBundle,
    pub history: DialogHistoryStats,
    pub labels: LabelStore,
}

struct EpisodeResult {
    outcome: DialogOutcome,
    records: Vec<TurnRecord>,
    rewards: Vec<f64>,
    acquired: Vec<AcquiredLabel>,
}

#[derive(Clone, Debug)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub corpus: Corpus,
    pub splits: SplitCorpus,
    pub classifier: ClassifierParams,
    pub labels: LabelStore,
    pub bundle: PolicyBundle,
    pub history: DialogHistoryStats,
    pub metrics: Vec<BatchMetrics>,
    pub dialogs: Vec<DialogOutcome>,
    pretrained: Option<ClassifierParams>,
    initial_labels: LabelStore,
}

impl Experiment {
    /// Validates the configuration, then loads or generates the corpus and
    /// seeds the label store from the pretraining split.
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let corpus = match &config.corpus_path {
            Some(p) => corpus::load_corpus(p)?,
            None => corpus::generate_corpus(&config.generate, config.seed)?,
        };
        let splits = match &config.split_path {
            Some(p) => SplitCorpus::load(p)?,
            None => corpus::split_by_attributes(&corpus, &corpus.catalog.partition)
                .with_classifier_subsets(config.classifier_split_ratio, config.seed),
        };
        let pre = splits.set(Split::Pretrain);
        let mut labels = LabelStore::new();
        labels.add_full_labels(&corpus, &pre.classifier_training, LabelRole::Training);
        labels.add_full_labels(&corpus, &pre.classifier_test, LabelRole::Validation);
        let k = corpus.num_attributes();
        let classifier = ClassifierParams::new(corpus.dim, k, config.seed);
        let bundle = PolicyBundle::new(
            &config.policy,
            config.static_policy.clone(),
            config.learning.clone(),
            config.seed,
        )?;
        Ok(Experiment {
            history: DialogHistoryStats::new(k),
            config,
            corpus,
            splits,
            classifier,
            initial_labels: labels.clone(),
            labels,
            bundle,
            metrics: Vec::new(),
            dialogs: Vec::new(),
            pretrained: None,
        })
    }

    /// Pretrains on the pretraining split (or loads the configured snapshot)
    /// and remembers the result for the test-phase reset.
    pub fn pretrain(&mut self) -> Result<()> {
        if let Some(path) = &self.config.classifier_path {
            let blob = fs::read(path).map_err(|e| Error::io(path, e))?;
            self.classifier = classifier::restore(&blob)?;
            if self.classifier.dim != self.corpus.dim || self.classifier.num_attributes != self.corpus.num_attributes()
            {
                return Err(Error::Config("classifier snapshot does not match the corpus".into()));
            }
        } else {
            let items = &self.splits.set(Split::Pretrain).classifier_training;
            let k = self.corpus.num_attributes();
            let mut seen = vec![!self.config.mask_unseen_attributes; k];
            for &id in items {
                for w in self.corpus.item(id).positives() {
                    seen[w] = true;
                }
            }
            let examples: Vec<Example<'_>> = items
                .iter()
                .map(|&id| {
                    let it = self.corpus.item(id);
                    Example {
                        features: &it.features,
                        labels: it.labels.clone(),
                        mask: seen.clone(),
                    }
                })
                .collect();
            let mut cfg = self.config.classifier.clone();
            cfg.seed ^= self.config.seed;
            pretrain(&mut self.classifier, &examples, &cfg, self.config.execution)?;
        }
        self.pretrained = Some(self.classifier.clone());
        Ok(())
    }

    pub fn pretrained(&self) -> Option<&ClassifierParams> {
        self.pretrained.as_ref()
    }

    /// Restores the pretrained classifier and the initial label store.
    pub fn reset_for_testing(&mut self) -> Result<()> {
        self.classifier = self
            .pretrained
            .clone()
            .ok_or_else(|| Error::Config("reset requested before pretraining".into()))?;
        self.labels = self.initial_labels.clone();
        Ok(())
    }

    pub fn tune(&self) -> Result<AttributeStats> {
        tune_thresholds(&self.classifier, &self.corpus, &self.labels, self.config.execution)
    }

    /// Runs one batch of dialogs, then applies acquired labels and updates
    /// the classifier and (outside testing) the learned policies.
    pub fn run_batch(&mut self, phase: Phase, phase_batch: usize) -> Result<&BatchMetrics> {
        let started = Instant::now();
        let cfg = &self.config;
        let batch = self.metrics.len();
        let split = cfg.split_for(phase);
        let set = self.splits.set(split);
        let stats = self.tune()?;
        let retrieval = if cfg.human_eval_variant {
            None
        } else {
            let r = refresh_retrieval(
                &self.classifier,
                &stats,
                &self.corpus,
                &set.classifier_test,
                &cfg.retrieval,
                cfg.execution,
            )?;
            if r.test_sets.is_empty() {
                return Err(Error::Episode(format!(
                    "batch {batch} ({}) has no eligible targets among {} items",
                    phase.name(),
                    r.pool_size
                )));
            }
            Some(r)
        };
        let ctx = FeatureContext {
            corpus: &self.corpus,
            labels: &self.labels,
            stats: &stats,
            history: &self.history,
            config: &cfg.features,
        };
        let path = [phase.tag(), phase_batch as u64];
        let results: Vec<Result<EpisodeResult>> = cfg.execution.map_range(cfg.dialogs_per_batch, |e| {
            let mut setup_rng = rng::stream(cfg.seed, &[0x5E7, path[0], path[1], e as u64]);
            let setup = match &retrieval {
                Some(r) => sample_standard_setup(
                    r,
                    &self.corpus,
                    &set.classifier_training,
                    cfg.train_set_size,
                    &mut setup_rng,
                )?,
                None => sample_human_eval_setup(
                    &self.corpus,
                    &set.classifier_test,
                    &set.classifier_training,
                    cfg.human_eval_candidates,
                    cfg.train_set_size,
                    &mut setup_rng,
                )?,
            };
            run_episode(self, &ctx, &setup, phase, batch, e)
        });
        let results: Vec<EpisodeResult> = results.into_iter().collect::<Result<_>>()?;

        let novel_f1 = stats.mean_f1(self.corpus.catalog.partition.attributes(split));
        for r in &results {
            features::record_dialog(&mut self.history, &r.outcome.description, r.outcome.success);
        }
        if self.config.apply_active_learning {
            let acquired: Vec<AcquiredLabel> = results.iter().flat_map(|r| r.acquired.iter().copied()).collect();
            let mut route_rng = rng::stream(self.config.seed, &[0xAB, path[0], path[1]]);
            let touched = apply_batch_labels(&acquired, &mut self.labels, self.config.rho_val, &mut route_rng);
            let k = self.corpus.num_attributes();
            let examples: Vec<Example<'_>> = touched
                .iter()
                .map(|&id| {
                    let (labels, mask) = self.labels.labels_for(id, LabelRole::Training, k);
                    Example {
                        features: &self.corpus.item(id).features,
                        labels,
                        mask,
                    }
                })
                .collect();
            let mut tc = self.config.classifier.clone();
            tc.seed ^= self.config.seed;
            incremental_update(&mut self.classifier, &examples, &tc, self.config.execution)?;
        }
        if phase != Phase::Testing {
            let traces: Vec<EpisodeTrace<'_>> = results
                .iter()
                .map(|r| EpisodeTrace {
                    records: &r.records,
                    rewards: &r.rewards,
                })
                .collect();
            policy::train_from_batch(&mut self.bundle, &traces)?;
        }

        let outcomes: Vec<DialogOutcome> = results.into_iter().map(|r| r.outcome).collect();
        let mut m = batch_metrics(batch, phase, phase_batch, novel_f1, &outcomes);
        m.wall_clock_seconds = started.elapsed().as_secs_f64();
        log::info!(
            "batch {batch} {} #{phase_batch}: success {:.2}, length {:.2}, novel F1 {:.3}",
            phase.name(),
            m.success,
            m.mean_dialog_length,
            m.novel_f1
        );
        self.dialogs.extend(outcomes);
        self.metrics.push(m);
        Ok(self.metrics.last().expect("just pushed"))
    }

    pub fn run_phase(&mut self, phase: Phase, batches: usize) -> Result<()> {
        for b in 0..batches {
            self.run_batch(phase, b)?;
        }
        Ok(())
    }

    /// Every phase in order. Pretrains first if that has not happened yet.
    pub fn run(&mut self) -> Result<()> {
        if self.pretrained.is_none() {
            self.pretrain()?;
        }
        let p = self.config.phases.clone();
        self.run_phase(Phase::Initialization, p.initialization)?;
        self.run_phase(Phase::Training, p.training)?;
        if p.testing > 0 {
            self.reset_for_testing()?;
            self.run_phase(Phase::Testing, p.testing)?;
        }
        Ok(())
    }

    pub fn into_output(self) -> Result<RunOutput> {
        Ok(RunOutput {
            pretrained: self
                .pretrained
                .ok_or_else(|| Error::Config("run did not pretrain".into()))?,
            metrics: self.metrics,
            dialogs: self.dialogs,
            classifier: self.classifier,
            bundle: self.bundle,
            history: self.history,
            labels: self.labels,
        })
    }
}

fn run_episode(
    exp: &Experiment,
    ctx: &FeatureContext<'_>,
    setup: &EpisodeSetup,
    phase: Phase,
    batch: usize,
    episode: usize,
) -> Result<EpisodeResult> {
    let cfg = &exp.config;
    let mut state = DialogState::reset(
        setup,
        &exp.classifier,
        &exp.corpus,
        &cfg.reward,
        LabelSource::ActiveLearning,
    )?;
    let path = [0xE9, phase.tag(), batch as u64, episode as u64];
    let mut policy_rng = rng::stream(cfg.seed, &[path[0], path[1], path[2], path[3], 0]);
    let mut answer_rng = rng::stream(cfg.seed, &[path[0], path[1], path[2], path[3], 1]);
    let mode = phase.acting_mode();
    let mut records = Vec::new();
    let mut rewards = Vec::new();
    while !state.done {
        let acted = policy::hierarchical_act(&exp.bundle, &state, ctx, mode, &mut policy_rng)?;
        let answer = env::simulate_answer(&state, &acted.action, &exp.corpus, &mut answer_rng);
        let (reward, _) = state.step(acted.action, answer)?;
        records.push(acted.record);
        rewards.push(reward);
    }
    let success = matches!(
        state.transcript.last().map(|e| e.answer),
        Some(env::Answer::GuessOutcome { correct: true, .. })
    );
    let outcome = DialogOutcome {
        batch,
        phase,
        episode,
        target: setup.target,
        description: setup.description.clone(),
        test_set_size: setup.test_set.len(),
        success,
        counterfactual_success: state.counterfactual_success(),
        episode_return: env::episode_return(&state.transcript)?,
        transcript: state.transcript,
    };
    Ok(EpisodeResult {
        outcome,
        records,
        rewards,
        acquired: state.acquired,
    })
}

pub const CLASSIFIER_PRETRAINED_FILE: &str = "classifier_pretrained.json";
pub const CLASSIFIER_FINAL_FILE: &str = "classifier_final.json";
pub const POLICY_FILE: &str = "policy.json";
pub const CONFIG_FILE: &str = "config.json";
pub const LABELS_FILE: &str = "labels_final.json";

/// Runs every phase and, when `out` is given, writes reports and checkpoints
/// there.
pub fn run_experiment(config: ExperimentConfig, out: Option<&Path>) -> Result<RunOutput> {
    let mut exp = Experiment::new(config)?;
    exp.run()?;
    let config = exp.config.clone();
    let output = exp.into_output()?;
    if let Some(dir) = out {
        emit_reports(dir, &output.metrics, &output.dialogs)?;
        let put = |name: &str, body: Vec<u8>| {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| Error::io(&path, e))
        };
        put(CONFIG_FILE, serde_json::to_vec_pretty(&config)?)?;
        put(CLASSIFIER_PRETRAINED_FILE, classifier::snapshot(&output.pretrained))?;
        put(CLASSIFIER_FINAL_FILE, classifier::snapshot(&output.classifier))?;
        put(POLICY_FILE, policy::save_checkpoint(&output.bundle, &output.history))?;
        put(LABELS_FILE, serde_json::to_vec(&output.labels)?)?;
    }
    Ok(output)
}
