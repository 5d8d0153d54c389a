use std::path::{Path, PathBuf};

use mambasum::bench::DEFAULT_LENGTHS;
use mambasum::model::{ModelConfig, TrainConfig, DEFAULT_K};
use serde::{Deserialize, Serialize};

use crate::{CliError, Common};

pub const CONFIG_ECHO: &str = "run_config.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrepareConfig {
    /// Generate this many synthetic documents instead of reading `corpus`.
    pub synthetic: Option<usize>,
    pub clusters: usize,
    pub n_select: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
}

impl Default for PrepareConfig {
    fn default() -> Self {
        Self { synthetic: None, clusters: 500, n_select: 200, n_train: 120, n_val: 40, n_test: 40 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub lengths: Vec<usize>,
    pub repeats: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { lengths: DEFAULT_LENGTHS.to_vec(), repeats: 5 }
    }
}

/// Fully resolved settings of one invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub command: String,
    pub seed: u64,
    pub k: usize,
    pub corpus: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub max_label_sents: Option<usize>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub prepare: PrepareConfig,
    pub bench: BenchConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: String::new(),
            seed: 42,
            k: DEFAULT_K,
            corpus: None,
            out_dir: None,
            embeddings: None,
            checkpoint: None,
            max_label_sents: None,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            prepare: PrepareConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

impl RunConfig {
    /// Config file (if any) overlaid with command-line flags.
    pub fn resolve(command: &str, common: &Common) -> Result<Self, CliError> {
        let mut cfg = match &common.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
                serde_json::from_str(&text)
                    .map_err(|e| CliError::usage(format!("{}: invalid config: {e}", path.display())))?
            }
            None => RunConfig::default(),
        };
        cfg.command = command.to_string();
        if let Some(seed) = common.seed {
            cfg.seed = seed;
        }
        cfg.train.seed = cfg.seed;
        let set = |dst: &mut Option<PathBuf>, src: &Option<PathBuf>| {
            if src.is_some() {
                dst.clone_from(src);
            }
        };
        set(&mut cfg.corpus, &common.corpus);
        set(&mut cfg.out_dir, &common.out_dir);
        set(&mut cfg.embeddings, &common.embeddings);
        if let Some(k) = common.k {
            cfg.k = k;
        }
        cfg.train.k = cfg.k;
        if let Some(d) = common.d_model {
            cfg.model.encoder.d_model = d;
            cfg.model.ssm.d_model = d;
        }
        if let Some(e) = common.epochs {
            cfg.train.epochs = e;
        }
        if let Some(lr) = common.lr {
            cfg.train.lr = lr;
        }
        if let Some(a) = common.grad_accum {
            cfg.train.grad_accum_steps = a;
        }
        if common.max_label_sents.is_some() {
            cfg.max_label_sents = common.max_label_sents;
        }
        if common.freeze_encoder {
            cfg.model.freeze_encoder = true;
        }
        if cfg.k == 0 {
            return Err(CliError::usage("--k must be at least 1"));
        }
        Ok(cfg)
    }

    pub fn out_dir(&self) -> Result<&Path, CliError> {
        self.out_dir.as_deref().ok_or_else(|| CliError::usage(format!("{} requires --out-dir", self.command)))
    }

    pub fn corpus(&self) -> Result<&Path, CliError> {
        self.corpus.as_deref().ok_or_else(|| CliError::usage(format!("{} requires --corpus", self.command)))
    }

    /// Write the resolved config into `dir`.
    pub fn echo(&self, dir: &Path) -> Result<(), CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let path = dir.join(CONFIG_ECHO);
        let text = serde_json::to_string_pretty(self).expect("config serializes");
        std::fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))
    }
}
