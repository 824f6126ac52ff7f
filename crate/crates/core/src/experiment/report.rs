use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Phase;
use crate::corpus::ItemId;
use crate::env::{ActionKind, TranscriptEntry};
use crate::error::{Error, Result};
use crate::grounding;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchMetrics {
    /// Index over all batches of the run, starting at 0.
    pub batch: usize,
    pub phase: Phase,
    /// Index within the phase, starting at 0.
    pub phase_batch: usize,
    pub dialogs: usize,
    pub success: f64,
    pub mean_dialog_length: f64,
    pub clarifications: usize,
    pub label_queries: usize,
    pub example_queries: usize,
    pub counterfactual_success: f64,
    /// Mean validation F1 over the attributes of the current split, as seen
    /// by the batch's episodes.
    pub novel_f1: f64,
    /// Kept out of `metrics.jsonl` so reruns stay byte-identical.
    #[serde(skip)]
    pub wall_clock_seconds: f64,
}

/// One finished dialog.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DialogOutcome {
    pub batch: usize,
    pub phase: Phase,
    pub episode: usize,
    pub target: ItemId,
    pub description: Vec<usize>,
    pub test_set_size: usize,
    pub success: bool,
    pub counterfactual_success: bool,
    pub episode_return: f64,
    pub transcript: Vec<TranscriptEntry>,
}

impl DialogOutcome {
    /// Query turns, excluding the final guess.
    pub fn length(&self) -> usize {
        self.transcript.iter().filter(|e| e.action.is_query()).count()
    }

    pub fn count(&self, kind: ActionKind) -> usize {
        self.transcript.iter().filter(|e| e.action.kind() == kind).count()
    }
}

/// Whether guessing from the description-only belief picks the target.
pub fn counterfactual_success(initial_belief: &[f64], test_set: &[ItemId], target: ItemId) -> bool {
    !initial_belief.is_empty() && test_set[grounding::guess(initial_belief)] == target
}

pub fn batch_metrics(
    batch: usize,
    phase: Phase,
    phase_batch: usize,
    novel_f1: f64,
    dialogs: &[DialogOutcome],
) -> BatchMetrics {
    let n = dialogs.len();
    let frac = |c: usize| if n == 0 { 0.0 } else { c as f64 / n as f64 };
    BatchMetrics {
        batch,
        phase,
        phase_batch,
        dialogs: n,
        success: frac(dialogs.iter().filter(|d| d.success).count()),
        mean_dialog_length: frac(dialogs.iter().map(|d| d.length()).sum()),
        clarifications: dialogs.iter().map(|d| d.count(ActionKind::Clarify)).sum(),
        label_queries: dialogs.iter().map(|d| d.count(ActionKind::LabelQuery)).sum(),
        example_queries: dialogs.iter().map(|d| d.count(ActionKind::ExampleQuery)).sum(),
        counterfactual_success: frac(dialogs.iter().filter(|d| d.counterfactual_success).count()),
        novel_f1,
        wall_clock_seconds: 0.0,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub batches: usize,
    pub dialogs: usize,
    /// Last batch of the test phase, or the last batch run if there was none.
    pub final_batch: Option<usize>,
    pub final_phase: Option<Phase>,
    pub final_success: f64,
    pub final_mean_dialog_length: f64,
    pub final_counterfactual_success: f64,
}

pub fn summarize(metrics: &[BatchMetrics]) -> Summary {
    let last = metrics
        .iter()
        .rev()
        .find(|m| m.phase == Phase::Testing)
        .or_else(|| metrics.last());
    Summary {
        batches: metrics.len(),
        dialogs: metrics.iter().map(|m| m.dialogs).sum(),
        final_batch: last.map(|m| m.batch),
        final_phase: last.map(|m| m.phase),
        final_success: last.map_or(0.0, |m| m.success),
        final_mean_dialog_length: last.map_or(0.0, |m| m.mean_dialog_length),
        final_counterfactual_success: last.map_or(0.0, |m| m.counterfactual_success),
    }
}

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const QUESTION_SPLIT_FILE: &str = "question_split.csv";
pub const COUNTERFACTUAL_FILE: &str = "counterfactual.csv";
pub const DIALOGS_FILE: &str = "dialogs.jsonl";
pub const TIMINGS_FILE: &str = "timings.csv";

fn write(dir: &Path, name: &str, body: &[u8]) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, body).map_err(|e| Error::io(&path, e))
}

/// Writes the metric series, summary, per-batch CSVs, per-dialog outcomes
/// and wall-clock timings into `dir`.
pub fn emit_reports(dir: &Path, metrics: &[BatchMetrics], dialogs: &[DialogOutcome]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut buf = Vec::new();
    for m in metrics {
        serde_json::to_writer(&mut buf, m)?;
        buf.push(b'\n');
    }
    write(dir, METRICS_FILE, &buf)?;

    write(dir, SUMMARY_FILE, &serde_json::to_vec_pretty(&summarize(metrics))?)?;

    let mut q = String::from("batch,phase,clarifications,label_queries,example_queries,total_queries\n");
    let mut c = String::from("batch,phase,success,counterfactual_success,dialogs\n");
    let mut t = String::from("batch,phase,wall_clock_seconds\n");
    for m in metrics {
        let phase = m.phase.name();
        let total = m.clarifications + m.label_queries + m.example_queries;
        q.push_str(&format!(
            "{},{phase},{},{},{},{total}\n",
            m.batch, m.clarifications, m.label_queries, m.example_queries
        ));
        c.push_str(&format!(
            "{},{phase},{},{},{}\n",
            m.batch, m.success, m.counterfactual_success, m.dialogs
        ));
        t.push_str(&format!("{},{phase},{:.6}\n", m.batch, m.wall_clock_seconds));
    }
    write(dir, QUESTION_SPLIT_FILE, q.as_bytes())?;
    write(dir, COUNTERFACTUAL_FILE, c.as_bytes())?;
    write(dir, TIMINGS_FILE, t.as_bytes())?;

    let path = dir.join(DIALOGS_FILE);
    let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut out = std::io::BufWriter::new(file);
    for d in dialogs {
        serde_json::to_writer(&mut out, d)?;
        out.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
    }
    out.flush().map_err(|e| Error::io(&path, e))?;
    Ok(())
}

/// Reads `metrics.jsonl` back.
pub fn read_metrics(path: &Path) -> Result<Vec<BatchMetrics>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                message: e.to_string(),
            })
        })
        .collect()
}
