use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::atomizer::{AtomizeMode, DEFAULT_MAX_ATOMS};
use crate::embedding::{Embedder, LocalEmbedder, RemoteEmbedder, RemoteEmbedderConfig, DEFAULT_DIM};
use crate::error::{Error, Result};
use crate::generation::stub::{OfflineStub, TemplateQuestionStub};
use crate::generation::{ClientConfig, Generator, HttpGenerator};
use crate::questions::DEFAULT_BUDGET;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "format", rename_all = "lowercase", deny_unknown_fields)]
pub enum CorpusSource {
    Jsonl { chunks: PathBuf, queries: PathBuf },
    Squad { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomizeConfig {
    #[serde(default = "default_modes")]
    pub modes: Vec<String>,
    #[serde(default = "default_max_atoms")]
    pub max_atoms: usize,
}

impl Default for AtomizeConfig {
    fn default() -> Self {
        AtomizeConfig {
            modes: default_modes(),
            max_atoms: DEFAULT_MAX_ATOMS,
        }
    }
}

fn default_modes() -> Vec<String> {
    vec!["structured".into()]
}
fn default_max_atoms() -> usize {
    DEFAULT_MAX_ATOMS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuestionConfig {
    #[serde(default = "default_budget")]
    pub budget: u32,
    #[serde(default = "default_question_temperature")]
    pub temperature: f32,
}

impl Default for QuestionConfig {
    fn default() -> Self {
        QuestionConfig {
            budget: DEFAULT_BUDGET,
            temperature: default_question_temperature(),
        }
    }
}

fn default_budget() -> u32 {
    DEFAULT_BUDGET
}
fn default_question_temperature() -> f32 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum GeneratorConfig {
    /// Deterministic offline generator.
    Stub {
        #[serde(default = "default_variants")]
        question_variants: u32,
    },
    Http { client: ClientConfig },
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig::Stub {
            question_variants: default_variants(),
        }
    }
}

fn default_variants() -> u32 {
    3
}

impl GeneratorConfig {
    pub fn build(&self) -> Result<(Box<dyn Generator>, usize)> {
        match self {
            GeneratorConfig::Stub { question_variants } => {
                if *question_variants == 0 {
                    return Err(Error::Config("question_variants must be positive".into()));
                }
                let stub = OfflineStub {
                    questions: TemplateQuestionStub {
                        variants: *question_variants,
                    },
                };
                Ok((Box::new(stub), rayon::current_num_threads()))
            }
            GeneratorConfig::Http { client } => {
                let generator = HttpGenerator::new(client)?;
                let limit = generator.max_in_flight();
                Ok((Box::new(generator), limit))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum EmbedderConfig {
    Local {
        #[serde(default = "default_dim")]
        dim: usize,
    },
    Remote { remote: RemoteEmbedderConfig },
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig::Local { dim: DEFAULT_DIM }
    }
}

fn default_dim() -> usize {
    DEFAULT_DIM
}

impl EmbedderConfig {
    pub fn build(&self) -> Result<Box<dyn Embedder>> {
        Ok(match self {
            EmbedderConfig::Local { dim } => Box::new(LocalEmbedder::new(*dim)?),
            EmbedderConfig::Remote { remote } => Box::new(RemoteEmbedder::new(remote)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default = "default_ks")]
    pub ks: Vec<usize>,
    #[serde(default = "default_ndcg_ks")]
    pub ndcg_ks: Vec<usize>,
    #[serde(default = "default_dataset")]
    pub dataset: String,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            ks: default_ks(),
            ndcg_ks: default_ndcg_ks(),
            dataset: default_dataset(),
        }
    }
}

fn default_ks() -> Vec<usize> {
    vec![1, 2, 5]
}
fn default_ndcg_ks() -> Vec<usize> {
    vec![10]
}
fn default_dataset() -> String {
    "corpus".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub fractions: Vec<f64>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    pub taus: Vec<f64>,
    /// Atomization mode whose question index is swept; defaults to the first.
    #[serde(default)]
    pub mode: Option<String>,
}

fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3, 4, 5]
}

/// A complete experiment description, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    pub corpus: CorpusSource,
    #[serde(default)]
    pub atomize: AtomizeConfig,
    #[serde(default)]
    pub questions: QuestionConfig,
    #[serde(default)]
    pub hyde: bool,
    #[serde(default)]
    pub generator: GeneratorConfig,
    #[serde(default)]
    pub embedder: EmbedderConfig,
    /// Shared embedding cache; defaults to `cache/embeddings.jsonl` in the output directory.
    #[serde(default)]
    pub embedding_cache: Option<PathBuf>,
    #[serde(default)]
    pub prune_taus: Vec<f64>,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    /// Directory relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Replaces `${NAME}` with the value of environment variable `NAME`.
pub fn interpolate_env(raw: &str) -> Result<String> {
    let mut out = String::with_capacity(raw.len());
    let mut rest = raw;
    while let Some(start) = rest.find("${") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let end = after
            .find('}')
            .ok_or_else(|| Error::Config("unterminated `${` in config".into()))?;
        let name = &after[..end];
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(Error::Config(format!("bad variable name `{name}`")));
        }
        let value = std::env::var(name)
            .map_err(|_| Error::Config(format!("environment variable `{name}` is not set")))?;
        out.push_str(&value);
        rest = &after[end + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

impl PipelineConfig {
    pub fn from_toml_str(raw: &str, base_dir: &Path) -> Result<PipelineConfig> {
        let text = interpolate_env(raw)?;
        let mut config: PipelineConfig =
            toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        config.base_dir = base_dir.to_path_buf();
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<PipelineConfig> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        PipelineConfig::from_toml_str(&raw, base)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.questions.budget == 0 {
            return bad("questions.budget must be at least 1".into());
        }
        if !(0.0..=2.0).contains(&self.questions.temperature) {
            return bad("questions.temperature must be in [0, 2]".into());
        }
        if self.atomize.modes.is_empty() {
            return bad("atomize.modes must not be empty".into());
        }
        let mut seen = Vec::new();
        for m in &self.atomize.modes {
            let mode: AtomizeMode = m.parse().map_err(|e: Error| Error::Config(e.to_string()))?;
            if seen.contains(&mode) {
                return bad(format!("atomize mode `{m}` listed twice"));
            }
            seen.push(mode);
        }
        if self.atomize.max_atoms == 0 {
            return bad("atomize.max_atoms must be at least 1".into());
        }
        if self.eval.ks.is_empty() || self.eval.ks.iter().chain(&self.eval.ndcg_ks).any(|&k| k == 0) {
            return bad("eval.ks must be non-empty and every K at least 1".into());
        }
        if self.prune_taus.iter().any(|t| !(0.0..=2.0).contains(t)) {
            return bad("prune_taus must lie in [0, 2]".into());
        }
        match &self.embedder {
            EmbedderConfig::Local { dim } if *dim == 0 => return bad("embedder.dim must be positive".into()),
            EmbedderConfig::Remote { remote } => remote.client.validate().map_err(|e| Error::Config(e.to_string()))?,
            _ => {}
        }
        if let GeneratorConfig::Http { client } = &self.generator {
            client.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        if let Some(sweep) = &self.sweep {
            if sweep.seeds.is_empty() {
                return bad("sweep.seeds must not be empty".into());
            }
            if sweep.fractions.windows(2).any(|w| w[1] <= w[0])
                || sweep.fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0))
            {
                return bad("sweep.fractions must be ascending within (0, 1]".into());
            }
            if sweep.taus.iter().any(|t| !(0.0..=2.0).contains(t)) {
                return bad("sweep.taus must lie in [0, 2]".into());
            }
            if let Some(m) = &sweep.mode {
                if !self.atomize.modes.contains(m) {
                    return bad(format!("sweep.mode `{m}` is not an atomize mode"));
                }
            }
        }
        Ok(())
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    pub fn modes(&self) -> Vec<(String, AtomizeMode)> {
        self.atomize
            .modes
            .iter()
            .map(|m| (m.clone(), m.parse().expect("validated")))
            .collect()
    }

    /// SHA-256 over the canonical JSON form of every field.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex_digest(&json)
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
