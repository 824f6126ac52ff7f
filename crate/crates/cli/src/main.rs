use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use hdialog::classifier;
use hdialog::corpus::save_corpus;
use hdialog::experiment::{
    read_metrics, run_experiment, summarize, Experiment, ExperimentConfig, Summary, METRICS_FILE,
};
use hdialog::policy::PolicyKind;
use hdialog::Execution;
use hdialog_service::{AppState, Shared};

#[derive(Parser)]
#[command(
    name = "hdialog",
    version,
    about = "Dialog policy simulator, trainer and session service"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus and its split sidecar.
    GenData {
        #[command(flatten)]
        common: Common,
        /// Corpus file to write.
        #[arg(long)]
        out: PathBuf,
        /// Split sidecar to write next to the corpus.
        #[arg(long)]
        splits: Option<PathBuf>,
    },
    /// Pretrain the attribute classifier and write its snapshot.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every phase and write reports and checkpoints.
    Run {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        overrides: RunOverrides,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve live sessions from a finished run directory.
    Serve {
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
    /// Print the per-batch metrics and summary of a run.
    Report {
        #[arg(long)]
        run_dir: PathBuf,
        /// Print the summary as JSON only.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args)]
struct Common {
    /// JSON experiment configuration; missing fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Corpus file to load instead of generating one.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Split sidecar matching `--corpus`.
    #[arg(long)]
    split_file: Option<PathBuf>,
    /// Run data-parallel loops on one thread.
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct RunOverrides {
    #[arg(long)]
    init_batches: Option<usize>,
    #[arg(long)]
    train_batches: Option<usize>,
    #[arg(long)]
    test_batches: Option<usize>,
    #[arg(long)]
    dialogs_per_batch: Option<usize>,
    #[arg(long, value_enum)]
    clarification: Option<Kind>,
    #[arg(long, value_enum)]
    active_learning: Option<Kind>,
    #[arg(long, value_enum)]
    decision: Option<Kind>,
    /// Pretrained classifier snapshot; skips pretraining.
    #[arg(long)]
    classifier: Option<PathBuf>,
    /// 100 random candidates and sampled descriptions per dialog.
    #[arg(long)]
    human_eval: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Static,
    Oracle,
    Q,
    A3c,
}

impl From<Kind> for PolicyKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Static => PolicyKind::Static,
            Kind::Oracle => PolicyKind::Oracle,
            Kind::Q => PolicyKind::Q,
            Kind::A3c => PolicyKind::A3c,
        }
    }
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if self.corpus.is_some() {
            cfg.corpus_path = self.corpus.clone();
        }
        if self.split_file.is_some() {
            cfg.split_path = self.split_file.clone();
        }
        if self.sequential {
            cfg.execution = Execution::Sequential;
        }
        Ok(cfg)
    }
}

impl RunOverrides {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        if self.human_eval {
            cfg.human_eval_variant = true;
        }
        let set = |slot: &mut usize, v: Option<usize>| {
            if let Some(v) = v {
                *slot = v;
            }
        };
        set(&mut cfg.phases.initialization, self.init_batches);
        set(&mut cfg.phases.training, self.train_batches);
        set(&mut cfg.phases.testing, self.test_batches);
        set(&mut cfg.dialogs_per_batch, self.dialogs_per_batch);
        if let Some(k) = self.clarification {
            cfg.policy.clarification = k.into();
        }
        if let Some(k) = self.active_learning {
            cfg.policy.active_learning = k.into();
        }
        if let Some(k) = self.decision {
            cfg.policy.decision = k.into();
        }
        if self.classifier.is_some() {
            cfg.classifier_path = self.classifier.clone();
        }
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent().filter(|d| !d.as_os_str().is_empty()) {
        Some(dir) => fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display())),
        None => Ok(()),
    }
}

fn write(path: &Path, body: &[u8]) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

fn gen_data(common: &Common, out: &Path, splits: Option<&Path>) -> Result<()> {
    let cfg = common.config()?;
    if cfg.corpus_path.is_some() {
        bail!("gen-data generates a corpus; drop --corpus");
    }
    let exp = Experiment::new(cfg)?;
    ensure_parent(out)?;
    save_corpus(&exp.corpus, out)?;
    println!(
        "wrote {} items with {} attributes to {}",
        exp.corpus.items.len(),
        exp.corpus.num_attributes(),
        out.display()
    );
    if let Some(path) = splits {
        ensure_parent(path)?;
        exp.splits.save(path)?;
        println!("wrote splits to {}", path.display());
    }
    Ok(())
}

fn pretrain(common: &Common, out: &Path) -> Result<()> {
    let mut exp = Experiment::new(common.config()?)?;
    exp.pretrain()?;
    let params = exp.pretrained().context("pretraining produced no snapshot")?;
    write(out, &classifier::snapshot(params))?;
    println!("wrote pretrained classifier to {}", out.display());
    Ok(())
}

fn run(common: &Common, overrides: &RunOverrides, out: &Path) -> Result<()> {
    let mut cfg = common.config()?;
    overrides.apply(&mut cfg);
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let output = run_experiment(cfg, Some(out))?;
    println!("{}", summary_line(&summarize(&output.metrics)));
    println!("reports written to {}", out.display());
    Ok(())
}

fn report(run_dir: &Path, json: bool) -> Result<()> {
    let metrics = read_metrics(&run_dir.join(METRICS_FILE))?;
    let summary = summarize(&metrics);
    let mut out = String::new();
    if json {
        out = serde_json::to_string_pretty(&summary)? + "\n";
    } else {
        writeln!(
            out,
            "{:>5} {:<15} {:>7} {:>8} {:>7} {:>7} {:>7} {:>6} {:>8}",
            "batch", "phase", "success", "length", "clarify", "label", "example", "cf", "novel_f1"
        )?;
        for m in &metrics {
            writeln!(
                out,
                "{:>5} {:<15} {:>7.3} {:>8.2} {:>7} {:>7} {:>7} {:>6.3} {:>8.3}",
                m.batch,
                m.phase.name(),
                m.success,
                m.mean_dialog_length,
                m.clarifications,
                m.label_queries,
                m.example_queries,
                m.counterfactual_success,
                m.novel_f1
            )?;
        }
        writeln!(out, "{}", summary_line(&summary))?;
    }
    // A closed pipe (`| head`) is not an error.
    match io::stdout().lock().write_all(out.as_bytes()) {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn summary_line(s: &Summary) -> String {
    format!(
        "{} batches, {} dialogs; final success {:.3}, mean length {:.2}, description-only success {:.3}",
        s.batches, s.dialogs, s.final_success, s.final_mean_dialog_length, s.final_counterfactual_success
    )
}

fn serve(run_dir: &Path, addr: SocketAddr) -> Result<()> {
    let shared = Shared::from_run_dir(run_dir).with_context(|| format!("loading {}", run_dir.display()))?;
    let state = AppState::new(shared);
    let runtime = tokio::runtime::Runtime::new().context("starting the async runtime")?;
    runtime
        .block_on(hdialog_service::serve(addr, state))
        .with_context(|| format!("serving on {addr}"))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenData { common, out, splits } => gen_data(common, out, splits.as_deref()),
        Command::Pretrain { common, out } => pretrain(common, out),
        Command::Run { common, overrides, out } => run(common, overrides, out),
        Command::Serve { run_dir, addr } => serve(run_dir, *addr),
        Command::Report { run_dir, json } => report(run_dir, *json),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::debug!("{e:?}");
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
