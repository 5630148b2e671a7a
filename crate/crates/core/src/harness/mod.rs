//! Experiment driver: configuration, training, evaluation, the λ sweep,
//! checkpoints and dumps.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod dump;
pub mod evaluate;
pub mod sweep;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Fingerprint};
pub use config::RunConfig;
pub use data::{prepare, Dataset};
pub use evaluate::{aggregate, ci95, evaluate, micro_f1, EpisodeStats, Metrics};
pub use sweep::{lambda_sweep, write_sweep_csv, SweepRow};
pub use train::{init_model, train, train_with, LogRow, TrainOutcome, ValidationRow};

/// Tags for the independent random streams derived from the run seed.
pub mod seeds {
    pub const SPLIT: u64 = 1;
    pub const EMBEDDINGS: u64 = 2;
    pub const INIT: u64 = 3;
    pub const TRAIN_EPISODES: u64 = 4;
    pub const DROPOUT: u64 = 5;
    pub const VAL_EPISODES: u64 = 6;
    pub const TEST_EPISODES: u64 = 7;
}

use numkernel::{ParamRegistry, Rng};

use crate::error::Result;
use crate::model::Model;

/// Test-split evaluation with `cfg.test_iters` episodes.
pub fn evaluate_test(reg: &ParamRegistry, model: &Model, cfg: &RunConfig, data: &Dataset) -> Result<Metrics> {
    let rng = Rng::new(cfg.seed).derive(seeds::TEST_EPISODES);
    let (m, _) = evaluate(
        reg,
        model,
        data,
        &data.split.test,
        &cfg.episode(),
        cfg.test_iters,
        cfg.lambda,
        rng,
        cfg.eval_threads,
    )?;
    Ok(m)
}
