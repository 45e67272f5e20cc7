//! Run orchestration: configuration, output directories, traces and
//! manifests.

mod config;
mod manifest;
mod report;

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::corpus::{CorpusError, Dataset};
use crate::generator::{ChatGenerator, GeneratorError, RewriteGenerator, TemplateGenerator};
use crate::policy::{
    evaluate, train_with, CandidateSource, PolicyConfig, PolicyError, PolicyState, RetrievalTrainingEnv, TraceRecord,
};
use crate::retrieval::{EmbeddingProvider, FileEmbedder, HashEmbedder, HttpEmbedder, RetrievalEnv, RetrievalError};

pub use config::{
    DatasetSpec, EmbeddingSpec, EvalModeName, EvalSource, EvalSpec, RetrievalSpec, RunConfig, Task,
    DEFAULT_HASH_DIMENSION, ENV_CHAT_MODEL, ENV_CHAT_URL, ENV_EMBEDDING_MODEL, ENV_EMBEDDING_URL,
};
pub use manifest::{
    compare, read_trace, write_atomic, ComparisonRow, ComparisonTable, RunManifest, RunStatus, Summary,
    MANIFEST_FILE, MANIFEST_SCHEMA_VERSION, METRIC_COLUMNS, POLICY_FILE, TRACE_FILE,
};
pub use report::{render_svg, train_records};

pub const LOCK_FILE: &str = ".sage.lock";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("output directory {0} is locked by another run")]
    Locked(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("run failed: {0}")]
    Runtime(String),
}

impl HarnessError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

macro_rules! runtime_from {
    ($($t:ty),*) => {$(
        impl From<$t> for HarnessError {
            fn from(e: $t) -> Self {
                HarnessError::Runtime(e.to_string())
            }
        }
    )*};
}
runtime_from!(CorpusError, RetrievalError, PolicyError, GeneratorError);

/// Builds the embedding provider a config describes. File providers learn
/// each document's embedding text as an alias for its id.
pub fn build_provider(spec: &EmbeddingSpec, dataset: &Dataset) -> Result<Box<dyn EmbeddingProvider>, HarnessError> {
    Ok(match spec {
        EmbeddingSpec::Hash { dimension } => Box::new(HashEmbedder::new(*dimension)?),
        EmbeddingSpec::File { path, fallback_hash } => {
            let mut f = FileEmbedder::load(path)?;
            for d in &dataset.docs {
                f.alias(d.embedding_text(), d.doc_id.clone());
            }
            if *fallback_hash {
                let dim = f.dimension();
                f = f.with_fallback(Box::new(HashEmbedder::new(dim)?))?;
            }
            Box::new(f)
        }
        EmbeddingSpec::Http(cfg) => Box::new(HttpEmbedder::new(cfg.clone())?),
    })
}

/// Loads the dataset and indexes it.
pub fn build_env(config: &RunConfig) -> Result<RetrievalEnv, HarnessError> {
    let d = &config.dataset;
    let dataset = Dataset::load(&d.corpus, &d.queries, &d.qrels)?;
    let provider = build_provider(&config.embedding, &dataset)?;
    Ok(RetrievalEnv::build(dataset, provider)?
        .with_cutoff(config.retrieval.cutoff)
        .with_gain(config.retrieval.gain))
}

/// Exclusive claim on an output directory, released on drop.
struct DirLock {
    path: PathBuf,
}

impl DirLock {
    fn acquire(dir: &Path) -> Result<Self, HarnessError> {
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(HarnessError::Locked(dir.to_path_buf())),
            Err(e) => Err(HarnessError::io(&path, e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

/// Appends trace lines as they are produced so a failed run keeps its
/// partial trace.
struct TraceWriter {
    path: PathBuf,
    out: BufWriter<File>,
    records: Vec<TraceRecord>,
}

impl TraceWriter {
    fn create(path: PathBuf) -> Result<Self, HarnessError> {
        let f = File::create(&path).map_err(|e| HarnessError::io(&path, e))?;
        Ok(Self {
            path,
            out: BufWriter::new(f),
            records: Vec::new(),
        })
    }

    fn push(&mut self, record: TraceRecord) -> Result<(), HarnessError> {
        let line = serde_json::to_string(&record).map_err(|e| HarnessError::Runtime(e.to_string()))?;
        writeln!(self.out, "{line}")
            .and_then(|_| self.out.flush())
            .map_err(|e| HarnessError::io(&self.path, e))?;
        self.records.push(record);
        Ok(())
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

fn load_policy(path: &Path) -> Result<PolicyState, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
}

fn execute(config: &RunConfig, out_dir: &Path, trace: &mut TraceWriter) -> Result<(), HarnessError> {
    let env = build_env(config)?;
    let queries: Vec<_> = env.dataset().evaluable_queries().into_iter().cloned().collect();
    let rules = &config.reward.normalization;
    let policy_cfg = PolicyConfig { seed: config.seed, ..config.policy.clone() };

    let trained = match config.task {
        Task::Train => {
            let tenv = RetrievalTrainingEnv::new(&env, policy_cfg.copy_strategy())?;
            let mut sink_err = None;
            let result = train_with(&tenv, &policy_cfg, &config.reward, |_, _, rec| {
                if let Some(rec) = rec {
                    if let Err(e) = trace.push(TraceRecord::Train(rec.clone())) {
                        sink_err = Some(e);
                        return Err(PolicyError::InvalidConfig("trace write failed".into()));
                    }
                }
                Ok(())
            });
            if let Some(e) = sink_err {
                return Err(e);
            }
            let (state, _) = result?;
            let json = serde_json::to_string_pretty(&state).map_err(|e| HarnessError::Runtime(e.to_string()))?;
            write_atomic(&out_dir.join(POLICY_FILE), json.as_bytes())?;
            Some(state)
        }
        Task::Eval => None,
    };

    let template = TemplateGenerator::default();
    let chat;
    let policy_state = match (&trained, &config.eval.policy_state) {
        (Some(s), _) => s.clone(),
        (None, Some(path)) => load_policy(path)?,
        (None, None) => PolicyState::new(&policy_cfg)?,
    };
    let source = match config.eval.source {
        EvalSource::Policy => CandidateSource::Policy {
            state: &policy_state,
            copy_strategy: policy_cfg.copy_strategy(),
            seed: config.seed,
        },
        EvalSource::Template => CandidateSource::Generator {
            generator: &template,
            style: config.prompt_style,
            temperature: config.eval.temperature,
            seed: config.seed,
        },
        EvalSource::Http => {
            let cfg = config.generator.clone().ok_or_else(|| HarnessError::Config("missing [generator]".into()))?;
            chat = ChatGenerator::new(cfg)?;
            CandidateSource::Generator {
                generator: &chat as &dyn RewriteGenerator,
                style: config.prompt_style,
                temperature: config.eval.temperature,
                seed: config.seed,
            }
        }
    };
    let metrics = evaluate(&env, &source, &queries, config.eval.eval_mode(), rules)?;
    for q in metrics.per_query {
        trace.push(TraceRecord::Eval(q))?;
    }
    Ok(())
}

/// Validates, then executes a run into `out_dir` (or the config's
/// `output_dir`). Writes `trace.jsonl` and `manifest.json`; the manifest is
/// written atomically at the end, with status `failed` if execution failed.
pub fn run(config: &RunConfig, out_dir: Option<&Path>) -> Result<RunManifest, HarnessError> {
    config.validate()?;
    let out_dir = out_dir
        .map(Path::to_path_buf)
        .or_else(|| config.output_dir.clone())
        .ok_or_else(|| HarnessError::Config("no output directory given".into()))?;
    std::fs::create_dir_all(&out_dir).map_err(|e| HarnessError::io(&out_dir, e))?;
    let _lock = DirLock::acquire(&out_dir)?;

    let started_at = now();
    tracing::info!(out = %out_dir.display(), seed = config.seed, task = ?config.task, "run started");
    let mut trace = TraceWriter::create(out_dir.join(TRACE_FILE))?;
    let outcome = execute(config, &out_dir, &mut trace);

    let (status, error, summary) = match &outcome {
        Ok(()) => (RunStatus::Succeeded, None, Some(Summary::from_trace(&trace.records))),
        Err(e) => (RunStatus::Failed, Some(e.to_string()), None),
    };
    let manifest = RunManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        dataset: config.dataset.tag(),
        task: config.task,
        seed: config.seed,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        started_at,
        finished_at: now(),
        output_dir: out_dir.clone(),
        status,
        error,
        trace_file: TRACE_FILE.to_string(),
        summary,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| HarnessError::Runtime(e.to_string()))?;
    write_atomic(&out_dir.join(MANIFEST_FILE), format!("{json}\n").as_bytes())?;
    match outcome {
        Ok(()) => {
            tracing::info!(summary = ?manifest.summary, "run finished");
            Ok(manifest)
        }
        Err(e) => {
            tracing::error!(error = %e, "run failed");
            Err(e)
        }
    }
}
