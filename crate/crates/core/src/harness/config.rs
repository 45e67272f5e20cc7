use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::generator::ChatGeneratorConfig;
use crate::policy::{EvalMode, PolicyConfig};
use crate::retrieval::{Gain, HttpEmbedderConfig, DEFAULT_CUTOFF};
use crate::reward::RewardConfig;
use crate::strategy::PromptStyle;

pub const ENV_EMBEDDING_URL: &str = "SAGE_EMBEDDING_URL";
pub const ENV_EMBEDDING_MODEL: &str = "SAGE_EMBEDDING_MODEL";
pub const ENV_CHAT_URL: &str = "SAGE_CHAT_URL";
pub const ENV_CHAT_MODEL: &str = "SAGE_CHAT_MODEL";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    #[default]
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub corpus: PathBuf,
    pub queries: PathBuf,
    pub qrels: PathBuf,
    /// Label used to group runs in comparisons; defaults to the corpus
    /// directory name.
    #[serde(default)]
    pub tag: Option<String>,
}

impl DatasetSpec {
    pub fn tag(&self) -> String {
        self.tag.clone().unwrap_or_else(|| {
            self.corpus
                .parent()
                .and_then(Path::file_name)
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| "dataset".to_string())
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "provider", rename_all = "snake_case", deny_unknown_fields)]
pub enum EmbeddingSpec {
    Hash {
        #[serde(default = "default_hash_dimension")]
        dimension: usize,
    },
    /// Precomputed vectors keyed by doc id; texts not in the file (queries,
    /// rewrites) go to a hash embedder of the same dimension when
    /// `fallback_hash` is set.
    File {
        path: PathBuf,
        #[serde(default)]
        fallback_hash: bool,
    },
    Http(HttpEmbedderConfig),
}

pub const DEFAULT_HASH_DIMENSION: usize = 256;

fn default_hash_dimension() -> usize {
    DEFAULT_HASH_DIMENSION
}

impl Default for EmbeddingSpec {
    fn default() -> Self {
        EmbeddingSpec::Hash { dimension: DEFAULT_HASH_DIMENSION }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalSpec {
    pub cutoff: usize,
    pub gain: Gain,
}

impl Default for RetrievalSpec {
    fn default() -> Self {
        Self { cutoff: DEFAULT_CUTOFF, gain: Gain::Linear }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSource {
    /// The trained policy (for `eval` runs, loaded from `policy_state`).
    #[default]
    Policy,
    /// Offline template generator fed the strategy-guided prompt.
    Template,
    /// Chat-completion endpoint from the `[generator]` table.
    Http,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalModeName {
    #[default]
    Greedy,
    BestOfN,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSpec {
    pub mode: EvalModeName,
    /// Candidates per query in best-of-n mode.
    pub n: usize,
    pub source: EvalSource,
    pub temperature: f64,
    /// Saved policy for `eval` runs with the policy source; uniform if unset.
    pub policy_state: Option<PathBuf>,
}

impl Default for EvalSpec {
    fn default() -> Self {
        Self {
            mode: EvalModeName::Greedy,
            n: 5,
            source: EvalSource::Policy,
            temperature: 0.0,
            policy_state: None,
        }
    }
}

impl EvalSpec {
    pub fn eval_mode(&self) -> EvalMode {
        match self.mode {
            EvalModeName::Greedy => EvalMode::Greedy,
            EvalModeName::BestOfN => EvalMode::BestOfN(self.n),
        }
    }
}

/// One experiment. Relative paths are resolved against the directory of
/// the config file at load time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default)]
    pub task: Task,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub embedding: EmbeddingSpec,
    #[serde(default)]
    pub retrieval: RetrievalSpec,
    #[serde(default)]
    pub reward: RewardConfig,
    /// `policy.seed` is ignored; the run seed is used.
    #[serde(default)]
    pub policy: PolicyConfig,
    #[serde(default)]
    pub prompt_style: PromptStyle,
    #[serde(default)]
    pub eval: EvalSpec,
    #[serde(default)]
    pub generator: Option<ChatGeneratorConfig>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn config_err(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

impl RunConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, HarnessError> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        cfg.resolve_paths(base_dir);
        cfg.policy.seed = cfg.seed;
        Ok(cfg)
    }

    /// Reads a TOML file and applies environment overrides.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let mut cfg = Self::from_toml(&text, base)?;
        cfg.apply_overrides(|k| std::env::var(k).ok());
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.dataset.corpus);
        fix(&mut self.dataset.queries);
        fix(&mut self.dataset.qrels);
        if let EmbeddingSpec::File { path, .. } = &mut self.embedding {
            fix(path);
        }
        if let Some(p) = &mut self.eval.policy_state {
            fix(p);
        }
        if let Some(p) = &mut self.output_dir {
            fix(p);
        }
    }

    /// Endpoint and model overrides from the environment. Keys themselves are
    /// never stored in the config; providers read them from `api_key_env`.
    pub fn apply_overrides(&mut self, lookup: impl Fn(&str) -> Option<String>) {
        if let EmbeddingSpec::Http(http) = &mut self.embedding {
            if let Some(url) = lookup(ENV_EMBEDDING_URL) {
                http.url = url;
            }
            if let Some(model) = lookup(ENV_EMBEDDING_MODEL) {
                http.model = model;
            }
        }
        if let Some(chat) = &mut self.generator {
            if let Some(url) = lookup(ENV_CHAT_URL) {
                chat.url = url;
            }
            if let Some(model) = lookup(ENV_CHAT_MODEL) {
                chat.model = model;
            }
        }
    }

    /// Everything that can be checked before a run touches the filesystem.
    pub fn validate(&self) -> Result<(), HarnessError> {
        for (name, p) in [
            ("dataset.corpus", &self.dataset.corpus),
            ("dataset.queries", &self.dataset.queries),
            ("dataset.qrels", &self.dataset.qrels),
        ] {
            if !p.is_file() {
                return Err(config_err(format!("{name}: {} does not exist", p.display())));
            }
        }
        match &self.embedding {
            EmbeddingSpec::Hash { dimension } if *dimension == 0 => {
                return Err(config_err("embedding.dimension must be positive"));
            }
            EmbeddingSpec::File { path, .. } if !path.is_file() => {
                return Err(config_err(format!("embedding.path: {} does not exist", path.display())));
            }
            EmbeddingSpec::Http(h) if h.dimension == 0 || h.url.is_empty() => {
                return Err(config_err("embedding: http provider needs a url and a positive dimension"));
            }
            _ => {}
        }
        if self.retrieval.cutoff == 0 {
            return Err(config_err("retrieval.cutoff must be positive"));
        }
        self.reward.validate().map_err(|e| config_err(e.to_string()))?;
        self.policy.validate().map_err(|e| config_err(e.to_string()))?;
        if self.eval.n == 0 {
            return Err(config_err("eval.n must be positive"));
        }
        if !self.eval.temperature.is_finite() || self.eval.temperature < 0.0 {
            return Err(config_err("eval.temperature must be >= 0"));
        }
        if self.eval.source == EvalSource::Http && self.generator.is_none() {
            return Err(config_err("eval.source = \"http\" needs a [generator] table"));
        }
        if let Some(p) = &self.eval.policy_state {
            if !p.is_file() {
                return Err(config_err(format!("eval.policy_state: {} does not exist", p.display())));
            }
        }
        Ok(())
    }
}
