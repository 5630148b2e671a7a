use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{SplitSpec, SynthConfig, DEFAULT_POSITION_ROWS};
use crate::episodes::EpisodeConfig;
use crate::error::{Error, Result};
use crate::memory::MemoryUpdateKind;
use crate::model::{Metric, ModelConfig, ModelDims};

/// Everything a run needs. Defaults are the full-scale experimental settings;
/// the file format is one flat TOML table with these keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub n_way: usize,
    pub k_shot: usize,
    pub q_query: usize,
    pub train_iters: usize,
    pub test_iters: usize,
    pub metric: Metric,
    pub lambda: f64,
    pub passes: usize,
    pub d_w: usize,
    pub d_p: usize,
    pub hidden: usize,
    pub n_h: usize,
    pub dropout: f64,
    pub lr: f64,
    pub seed: u64,
    pub memory_update: MemoryUpdateKind,

    /// JSONL mentions; a synthetic corpus is generated when absent.
    pub data: Option<PathBuf>,
    /// Whitespace-separated pretrained vectors.
    pub embeddings: Option<PathBuf>,
    pub output_dir: PathBuf,

    pub log_every: usize,
    pub val_every: usize,
    pub val_iters: usize,
    pub max_len: usize,
    pub min_count: usize,
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,

    pub synth_types: usize,
    pub synth_per_type: usize,
    pub synth_vocab: usize,
    pub synth_min_len: usize,
    pub synth_max_len: usize,

    /// Worker threads for evaluation; 0 lets the pool decide.
    pub eval_threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n_way: 5,
            k_shot: 5,
            q_query: 5,
            train_iters: 30_000,
            test_iters: 2_000,
            metric: Metric::Mproto,
            lambda: 0.5,
            passes: 3,
            d_w: 50,
            d_p: 30,
            hidden: 25,
            n_h: 50,
            dropout: 0.2,
            lr: 1e-3,
            seed: 7,
            memory_update: MemoryUpdateKind::Relu,
            data: None,
            embeddings: None,
            output_dir: PathBuf::from("runs"),
            log_every: 100,
            val_every: 500,
            val_iters: 200,
            max_len: DEFAULT_POSITION_ROWS - 1,
            min_count: 1,
            train_frac: 0.8,
            val_frac: 0.1,
            test_frac: 0.1,
            synth_types: 50,
            synth_per_type: 30,
            synth_vocab: 400,
            synth_min_len: 5,
            synth_max_len: 10,
            eval_threads: 0,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_way", self.n_way),
            ("k_shot", self.k_shot),
            ("q_query", self.q_query),
            ("passes", self.passes),
            ("d_w", self.d_w),
            ("d_p", self.d_p),
            ("hidden", self.hidden),
            ("n_h", self.n_h),
            ("log_every", self.log_every),
            ("val_every", self.val_every),
            ("max_len", self.max_len),
            ("min_count", self.min_count),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.n_way < 2 {
            return Err(Error::Config("n_way must be at least 2".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("lr {} must be positive", self.lr)));
        }
        if self.max_len >= DEFAULT_POSITION_ROWS {
            return Err(Error::Config(format!(
                "max_len {} must be below {DEFAULT_POSITION_ROWS}",
                self.max_len
            )));
        }
        Ok(())
    }

    pub fn episode(&self) -> EpisodeConfig {
        EpisodeConfig {
            n_way: self.n_way,
            k_shot: self.k_shot,
            q_query: self.q_query,
            seed: self.seed,
        }
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            dims: ModelDims {
                d_w: self.d_w,
                d_p: self.d_p,
                hidden: self.hidden,
                n_h: self.n_h,
                pos_rows: DEFAULT_POSITION_ROWS,
            },
            metric: self.metric,
            update: self.memory_update,
            passes: self.passes,
        }
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec::Fractions {
            train: self.train_frac,
            val: self.val_frac,
            test: self.test_frac,
        }
    }

    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            n_types: self.synth_types,
            per_type: self.synth_per_type,
            vocab_size: self.synth_vocab,
            seed: self.seed,
            min_len: self.synth_min_len,
            max_len: self.synth_max_len,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_full_scale_settings() {
        let c = RunConfig::default();
        assert_eq!((c.train_iters, c.test_iters), (30_000, 2_000));
        assert_eq!((c.n_h, c.d_w, c.d_p), (50, 50, 30));
        assert_eq!(c.passes, 3);
        assert_eq!(c.dropout, 0.2);
        assert_eq!(c.lr, 1e-3);
        assert_eq!(c.lambda, 0.5);
        assert_eq!(c.model().dims.word_input(), 140);
        c.validate().unwrap();
    }

    #[test]
    fn partial_file_fills_defaults() {
        let c = RunConfig::from_toml_str("n_way = 3\nmetric = \"proto\"\nmemory_update = \"gru\"\n").unwrap();
        assert_eq!(c.n_way, 3);
        assert_eq!(c.metric, Metric::Proto);
        assert_eq!(c.memory_update, MemoryUpdateKind::Gru);
        assert_eq!(c.k_shot, 5);
    }

    #[test]
    fn round_trip_and_rejections() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap(), c);
        assert!(matches!(RunConfig::from_toml_str("bogus = 1"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_toml_str("metric = \"knn\""), Err(Error::Config(_))));
        let bad = RunConfig {
            lambda: 1.5,
            ..RunConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = RunConfig {
            k_shot: 0,
            ..RunConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
