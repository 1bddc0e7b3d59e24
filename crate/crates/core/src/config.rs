//! Run configuration file (TOML) shared by all CLI commands.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusFormat, UtteranceMode};
use crate::error::{Error, Result};
use crate::evaluator::{EvalOptions, DEFAULT_THRESHOLD};
use crate::trainer::TrainConfig;

/// Environment variable naming the default data directory.
pub const DATA_DIR_ENV: &str = "SIM_DST_DATA_DIR";
/// Embedding file looked up inside the corpus directory when none is set.
pub const DEFAULT_EMBEDDINGS_FILE: &str = "embeddings.txt";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Corpus directory or file.
    pub corpus: Option<PathBuf>,
    pub format: CorpusFormat,
    /// GloVe-format word vectors.
    pub embeddings: Option<PathBuf>,
    /// Checkpoint to write (train) or read (evaluate, predict, inspect).
    pub checkpoint: Option<PathBuf>,
    /// Directory for logs, metrics and tables.
    pub out_dir: PathBuf,
    pub mode: UtteranceMode,
    pub threshold: f64,
    /// Evaluation workers; 0 lets the runtime decide.
    pub threads: usize,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            corpus: None,
            format: CorpusFormat::Native,
            embeddings: None,
            checkpoint: None,
            out_dir: PathBuf::from("out"),
            mode: UtteranceMode::Transcript,
            threshold: DEFAULT_THRESHOLD,
            threads: 0,
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            mode: self.mode,
            threshold: self.threshold,
            threads: self.threads,
        }
    }

    /// The corpus path, falling back to the data-directory variable.
    pub fn corpus_path(&self) -> Result<PathBuf> {
        if let Some(p) = &self.corpus {
            return Ok(p.clone());
        }
        match std::env::var_os(DATA_DIR_ENV) {
            Some(dir) if !dir.is_empty() => Ok(PathBuf::from(dir)),
            _ => Err(Error::Config(format!("no corpus given and {DATA_DIR_ENV} is not set"))),
        }
    }

    /// The embedding file, defaulting to `embeddings.txt` next to the corpus.
    pub fn embeddings_path(&self) -> Result<PathBuf> {
        if let Some(p) = &self.embeddings {
            return Ok(p.clone());
        }
        let corpus = self.corpus_path()?;
        let dir = if corpus.is_dir() {
            corpus
        } else {
            corpus.parent().map(Path::to_path_buf).unwrap_or_default()
        };
        Ok(dir.join(DEFAULT_EMBEDDINGS_FILE))
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.out_dir.join("model.ckpt"))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!("threshold {} must lie in (0, 1)", self.threshold)));
        }
        self.train.validate()
    }
}

/// Fails with a message naming `path` when it does not exist.
pub fn require_exists(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or directory"),
        ))
    }
}
