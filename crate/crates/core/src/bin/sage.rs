use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use sage_core::corpus::{load_corpus, load_queries, Dataset};
use sage_core::generator::{ChatGenerator, RewriteGenerator, TemplateGenerator};
use sage_core::harness::{
    self, build_env, compare, read_trace, render_svg, train_records, EvalModeName, EvalSource, RunConfig, RunManifest,
    Task,
};
use sage_core::retrieval::{write_embeddings, EmbeddingProvider, EmbeddingRecord, HashEmbedder};
use sage_core::strategy::{build_prompt, parse_action, PromptStyle, StrategyCatalog, StrategyId};

#[derive(Parser)]
#[command(name = "sage", version, about = "Strategy-guided query rewriting for dense retrieval")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a corpus/queries/qrels triple and write a normalized bundle.
    Ingest {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        qrels: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Embed every document and write `{"id", "vector"}` JSONL.
    Index {
        /// Use the dataset and embedding provider of a run config.
        #[arg(long, conflicts_with = "corpus")]
        config: Option<PathBuf>,
        /// Corpus to embed with the hash embedder.
        #[arg(long, required_unless_present = "config")]
        corpus: Option<PathBuf>,
        #[arg(long, default_value_t = harness::DEFAULT_HASH_DIMENSION)]
        dim: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Inspect the strategy catalog.
    Strategies {
        /// Alternative catalog file.
        #[arg(long)]
        catalog: Option<PathBuf>,
        #[command(subcommand)]
        action: StrategiesAction,
    },
    /// Generate rewrites for one query.
    Generate {
        #[arg(long)]
        query: String,
        #[arg(long, default_value_t = 5)]
        n: usize,
        #[arg(long, value_enum, default_value_t = Backend::Template)]
        backend: Backend,
        #[arg(long, value_enum, default_value_t = StyleArg::Proactive)]
        style: StyleArg,
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Run config holding the `[generator]` table for the http backend.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Print the prompt instead of generating.
        #[arg(long)]
        show_prompt: bool,
    },
    /// Score original queries or rewrites with NDCG@k.
    Score {
        #[arg(long)]
        config: PathBuf,
        /// Queries to score instead of the dataset's own.
        #[arg(long)]
        query_file: Option<PathBuf>,
        /// JSONL of `{"query_id", "rewritten_query"}`.
        #[arg(long)]
        rewrites: Option<PathBuf>,
    },
    /// Train the policy and evaluate it.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a generator or saved policy.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, value_enum)]
        source: Option<SourceArg>,
        /// Saved `policy.json` for the policy source.
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Render SVG training curves from a trace file.
    Report {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tabulate headline metrics of several runs.
    Compare {
        #[arg(required = true, num_args = 2..)]
        manifests: Vec<PathBuf>,
        /// Also write the table as TSV.
        #[arg(long)]
        tsv: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum StrategiesAction {
    List,
    Show { id: i64 },
}

#[derive(Clone, Copy, ValueEnum)]
enum Backend {
    Template,
    Http,
}

#[derive(Clone, Copy, ValueEnum)]
enum StyleArg {
    Proactive,
    Conservative,
}

impl From<StyleArg> for PromptStyle {
    fn from(s: StyleArg) -> Self {
        match s {
            StyleArg::Proactive => PromptStyle::Proactive,
            StyleArg::Conservative => PromptStyle::Conservative,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Greedy,
    Bestofn,
}

#[derive(Clone, Copy, ValueEnum)]
enum SourceArg {
    Policy,
    Template,
    Http,
}

#[derive(Deserialize)]
struct RewriteLine {
    query_id: String,
    rewritten_query: String,
}

#[derive(Serialize)]
struct GeneratedLine<'a> {
    prompt_hash: &'a str,
    token_count: usize,
    latency_ms: u64,
    strategy_id: Option<u8>,
    rewritten_query: Option<&'a str>,
    parse_error: Option<String>,
    raw_output: &'a str,
}

fn main() {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    if let Err(e) = real_main(Cli::parse()) {
        eprintln!("error: {e:#}");
        let code = match e.downcast_ref::<harness::HarnessError>() {
            Some(harness::HarnessError::Config(_)) => 2,
            _ => 1,
        };
        std::process::exit(code);
    }
}

fn real_main(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest { corpus, queries, qrels, out } => {
            let ds = Dataset::load(&corpus, &queries, &qrels)?;
            ds.write_bundle(&out)?;
            println!(
                "docs={} queries={} judgments={} evaluable_queries={}",
                ds.docs.len(),
                ds.queries.len(),
                ds.qrels.len(),
                ds.evaluable_queries().len()
            );
        }
        Command::Index { config, corpus, dim, out } => {
            let (docs, provider): (_, Box<dyn EmbeddingProvider>) = match config {
                Some(path) => {
                    let cfg = RunConfig::load(&path)?;
                    let d = &cfg.dataset;
                    let ds = Dataset::load(&d.corpus, &d.queries, &d.qrels)?;
                    let provider = harness::build_provider(&cfg.embedding, &ds)?;
                    (ds.docs, provider)
                }
                None => {
                    let corpus = corpus.context("--corpus is required without --config")?;
                    (load_corpus(corpus)?, Box::new(HashEmbedder::new(dim)?))
                }
            };
            let texts: Vec<String> = docs.iter().map(|d| d.embedding_text()).collect();
            let vectors = provider.embed_batch(&texts)?;
            let records: Vec<EmbeddingRecord> = docs
                .iter()
                .zip(vectors)
                .map(|(d, vector)| EmbeddingRecord { id: d.doc_id.clone(), vector })
                .collect();
            write_embeddings(&out, &records).with_context(|| format!("writing {}", out.display()))?;
            println!("indexed {} documents (dimension {})", records.len(), provider.dimension());
        }
        Command::Strategies { catalog, action } => {
            let catalog = match catalog {
                Some(p) => StrategyCatalog::load(p)?,
                None => StrategyCatalog::default(),
            };
            match action {
                StrategiesAction::List => {
                    println!("catalog version {}", catalog.version);
                    for s in catalog.iter() {
                        println!("{}\t{}\t{}", s.id, s.name, s.targeted_challenge);
                    }
                }
                StrategiesAction::Show { id } => {
                    let s = catalog.get(StrategyId::new(id)?);
                    println!("{}. {}", s.id, s.name);
                    println!("Targeted challenge: {}", s.targeted_challenge);
                    println!("Primary use case: {}", s.primary_use_case);
                    println!("Definition: {}", s.definition);
                    println!("Example: {}", s.example);
                    if s.reconstructed {
                        println!("(definition and example reconstructed, not verbatim)");
                    }
                }
            }
        }
        Command::Generate { query, n, backend, style, temperature, seed, config, show_prompt } => {
            let prompt = build_prompt(&query, style.into())?;
            if show_prompt {
                println!("{prompt}");
                return Ok(());
            }
            let generator: Box<dyn RewriteGenerator> = match backend {
                Backend::Template => Box::new(TemplateGenerator::default()),
                Backend::Http => {
                    let path = config.context("--config with a [generator] table is required for --backend http")?;
                    let cfg = RunConfig::load(&path)?;
                    let chat = cfg.generator.context("config has no [generator] table")?;
                    Box::new(ChatGenerator::new(chat)?)
                }
            };
            for rec in generator.generate(&prompt, n, temperature, Some(seed))? {
                let parsed = parse_action(&rec.raw_output);
                let line = GeneratedLine {
                    prompt_hash: &rec.prompt_hash,
                    token_count: rec.token_count,
                    latency_ms: rec.latency_ms,
                    strategy_id: parsed.as_ref().ok().map(|a| a.strategy_id.get()),
                    rewritten_query: parsed.as_ref().ok().map(|a| a.rewritten_query.as_str()),
                    parse_error: parsed.as_ref().err().map(|f| format!("{:?}", f.kind)),
                    raw_output: &rec.raw_output,
                };
                println!("{}", serde_json::to_string(&line)?);
            }
        }
        Command::Score { config, query_file, rewrites } => {
            let cfg = RunConfig::load(&config)?;
            cfg.validate()?;
            let env = build_env(&cfg)?;
            let pairs: Vec<(String, String)> = match (rewrites, query_file) {
                (Some(path), _) => read_rewrites(&path)?,
                (None, Some(path)) => load_queries(path)?.into_iter().map(|q| (q.query_id, q.text)).collect(),
                (None, None) => env
                    .dataset()
                    .evaluable_queries()
                    .into_iter()
                    .map(|q| (q.query_id.clone(), q.text.clone()))
                    .collect(),
            };
            let mut total = 0.0;
            let mut scored = 0usize;
            println!("query_id\tndcg@{}\ttext", env.cutoff());
            for (qid, text) in &pairs {
                match env.score_query(qid, text) {
                    Ok(s) => {
                        total += s;
                        scored += 1;
                        println!("{qid}\t{s:.6}\t{text}");
                    }
                    Err(e) => eprintln!("skipping {qid}: {e}"),
                }
            }
            if scored > 0 {
                println!("mean\t{:.6}\t({scored} queries)", total / scored as f64);
            }
        }
        Command::Train { config, out, seed } => {
            let mut cfg = RunConfig::load(&config)?;
            cfg.task = Task::Train;
            if let Some(s) = seed {
                cfg.seed = s;
                cfg.policy.seed = s;
            }
            finish_run(&cfg, out.as_deref())?;
        }
        Command::Eval { config, out, mode, n, source, policy, seed } => {
            let mut cfg = RunConfig::load(&config)?;
            cfg.task = Task::Eval;
            if let Some(m) = mode {
                cfg.eval.mode = match m {
                    ModeArg::Greedy => EvalModeName::Greedy,
                    ModeArg::Bestofn => EvalModeName::BestOfN,
                };
            }
            if let Some(n) = n {
                cfg.eval.n = n;
            }
            if let Some(s) = source {
                cfg.eval.source = match s {
                    SourceArg::Policy => EvalSource::Policy,
                    SourceArg::Template => EvalSource::Template,
                    SourceArg::Http => EvalSource::Http,
                };
            }
            if policy.is_some() {
                cfg.eval.policy_state = policy;
            }
            if let Some(s) = seed {
                cfg.seed = s;
                cfg.policy.seed = s;
            }
            finish_run(&cfg, out.as_deref())?;
        }
        Command::Report { trace, out } => {
            let records = read_trace(&trace)?;
            let svg = render_svg(&train_records(&records))?;
            std::fs::write(&out, svg).with_context(|| format!("writing {}", out.display()))?;
            println!("wrote {}", out.display());
        }
        Command::Compare { manifests, tsv } => {
            let loaded = manifests.iter().map(RunManifest::load).collect::<Result<Vec<_>, _>>()?;
            let table = compare(&loaded)?;
            print!("{}", table.to_text());
            if let Some(path) = tsv {
                std::fs::write(&path, table.to_tsv()).with_context(|| format!("writing {}", path.display()))?;
            }
        }
    }
    Ok(())
}

fn finish_run(cfg: &RunConfig, out: Option<&Path>) -> Result<()> {
    let manifest = harness::run(cfg, out)?;
    let s = manifest.summary.unwrap_or_default();
    let fmt = |v: Option<f64>| v.map_or_else(|| "–".to_string(), |x| format!("{x:.4}"));
    println!(
        "{}: ndcg@{}={} avg_tokens={} modification_rate={} ({} queries)",
        manifest.output_dir.display(),
        cfg.retrieval.cutoff,
        fmt(s.mean_ndcg),
        fmt(s.mean_tokens),
        fmt(s.modification_rate),
        s.queries
    );
    Ok(())
}

fn read_rewrites(path: &Path) -> Result<Vec<(String, String)>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: RewriteLine =
            serde_json::from_str(&line).with_context(|| format!("{} line {}", path.display(), i + 1))?;
        out.push((r.query_id, r.rewritten_query));
    }
    if out.is_empty() {
        bail!("{} holds no rewrites", path.display());
    }
    Ok(out)
}
