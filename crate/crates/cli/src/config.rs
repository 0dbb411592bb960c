use std::path::{Path, PathBuf};

use fclnat::data::SyntheticTaskSpec;
use fclnat::eval::{BleuOptions, Smoothing};
use fclnat::inference::NpdConfig;
use fclnat::training::TrainConfig;
use fclnat::{Error, Result};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    /// Holds train.tsv, valid.tsv, test.tsv and vocab.txt.
    pub data_dir: PathBuf,
    /// Run directory: config.json, checkpoints/, logs/, reports/.
    pub run_dir: PathBuf,
    /// Teacher parameters for distillation and rescoring.
    pub teacher_checkpoint: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            data_dir: "data".into(),
            run_dir: "runs/default".into(),
            teacher_checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataSizes {
    pub train_pairs: usize,
    pub valid_pairs: usize,
    pub test_pairs: usize,
}

impl Default for DataSizes {
    fn default() -> Self {
        Self {
            train_pairs: 20_000,
            valid_pairs: 500,
            test_pairs: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSettings {
    pub bleu_max_n: usize,
    pub bleu_smoothing: Smoothing,
    pub latency_warmup_runs: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            bleu_max_n: 4,
            bleu_smoothing: Smoothing::AddOne,
            latency_warmup_runs: 5,
        }
    }
}

impl EvalSettings {
    pub fn bleu_options(&self) -> BleuOptions {
        BleuOptions {
            max_n: self.bleu_max_n,
            smoothing: self.bleu_smoothing,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub paths: Paths,
    pub task: SyntheticTaskSpec,
    pub data: DataSizes,
    pub train: TrainConfig,
    pub npd: NpdConfig,
    pub eval: EvalSettings,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: 1,
            paths: Paths::default(),
            task: SyntheticTaskSpec::default(),
            data: DataSizes::default(),
            train: TrainConfig::default(),
            npd: NpdConfig::default(),
            eval: EvalSettings::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialization cannot fail")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_json())
    }

    /// Checks field values; input paths are checked by the commands that
    /// read them.
    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.train.validate()?;
        self.npd.validate()?;
        let vocab = self.task.vocab().size();
        if self.train.model.vocab_size != vocab {
            return Err(Error::Config(format!(
                "train.model.vocab_size {} does not match the task vocabulary ({vocab})",
                self.train.model.vocab_size
            )));
        }
        // Targets plus EOS must fit; expand doubles at most every token.
        let longest = match self.task.kind {
            fclnat::data::TaskKind::Expand => 2 * self.task.max_len,
            _ => self.task.max_len,
        } + 1;
        if longest > self.train.model.max_len {
            return Err(Error::Config(format!(
                "train.model.max_len {} is below the longest sequence ({longest})",
                self.train.model.max_len
            )));
        }
        if self.data.train_pairs == 0 || self.data.valid_pairs == 0 || self.data.test_pairs == 0 {
            return Err(Error::Config("data.*_pairs must be positive".into()));
        }
        if self.eval.bleu_max_n == 0 {
            return Err(Error::Config("eval.bleu_max_n must be positive".into()));
        }
        Ok(())
    }

    /// The training configuration with the global seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn corpus_path(&self, split: &str) -> PathBuf {
        self.paths.data_dir.join(format!("{split}.tsv"))
    }

    pub fn vocab_path(&self) -> PathBuf {
        self.paths.data_dir.join("vocab.txt")
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} {} does not exist", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_identity() {
        let cfg = PipelineConfig::default();
        let back: PipelineConfig = serde_json::from_str(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_json(), cfg.to_json());
    }

    #[test]
    fn defaults_validate() {
        PipelineConfig::default().validate().unwrap();
    }

    #[test]
    fn mismatched_vocab_names_the_field() {
        let mut cfg = PipelineConfig::default();
        cfg.train.model.vocab_size = 10;
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("train.model.vocab_size"), "{msg}");
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg: PipelineConfig = serde_json::from_str(r#"{"schema_version": 1, "seed": 9}"#).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.train, TrainConfig::default());
    }
}
