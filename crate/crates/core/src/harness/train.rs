use numkernel::{sgd_step, KernelError, ParamRegistry, Rng, Tape};
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::data::Dataset;
use super::evaluate::{evaluate, EpisodeStats, Metrics};
use super::seeds;
use crate::episodes::EpisodeSampler;
use crate::error::{Error, Result};
use crate::model::{forward_episode, Model, TrainNoise};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub iteration: usize,
    pub l_ti: f64,
    pub l_ec: f64,
    pub joint: f64,
    pub accuracy: f64,
    pub ti_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationRow {
    pub iteration: usize,
    pub accuracy: f64,
    pub f1: f64,
    pub ti_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub registry: ParamRegistry,
    pub model: Model,
    /// One row per iteration.
    pub history: Vec<LogRow>,
    /// Every `log_every`-th row of `history`.
    pub log: Vec<LogRow>,
    pub validations: Vec<ValidationRow>,
    /// Parameters at the best validation accuracy, with its iteration.
    pub best: Option<(usize, ParamRegistry)>,
}

impl TrainOutcome {
    /// Mean query accuracy over the last `n` iterations.
    pub fn tail_accuracy(&self, n: usize) -> f64 {
        let tail = &self.history[self.history.len().saturating_sub(n)..];
        tail.iter().map(|r| r.accuracy).sum::<f64>() / tail.len().max(1) as f64
    }
}

pub fn init_model(cfg: &RunConfig, data: &Dataset) -> Result<(ParamRegistry, Model)> {
    let mut rng = Rng::new(cfg.seed).derive(seeds::INIT);
    Model::init(cfg.model(), &data.embeddings, &mut rng)
}

fn diverged(iteration: usize, e: Error) -> Error {
    match e {
        Error::Kernel(KernelError::Numeric(op)) => Error::Diverged {
            iteration,
            reason: format!("non-finite value in {op}"),
        },
        other => other,
    }
}

pub fn train(cfg: &RunConfig, data: &Dataset) -> Result<TrainOutcome> {
    train_with(cfg, data, |_| {})
}

/// Runs `cfg.train_iters` single-episode SGD steps; `on_log` sees each
/// logged row as it is produced.
pub fn train_with(cfg: &RunConfig, data: &Dataset, mut on_log: impl FnMut(&LogRow)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (mut registry, model) = init_model(cfg, data)?;
    let mut outcome = TrainOutcome {
        registry: ParamRegistry::new(),
        model,
        history: Vec::with_capacity(cfg.train_iters),
        log: Vec::new(),
        validations: Vec::new(),
        best: None,
    };
    if cfg.train_iters == 0 {
        outcome.registry = registry;
        return Ok(outcome);
    }
    let base = Rng::new(cfg.seed);
    let sampler = EpisodeSampler::new(&data.split.train, cfg.episode())?;
    let mut episode_rng = base.derive(seeds::TRAIN_EPISODES);
    let mut noise_rng = base.derive(seeds::DROPOUT);
    let mut best_acc = f64::NEG_INFINITY;

    for it in 1..=cfg.train_iters {
        let episode = sampler.sample(&mut episode_rng);
        let (grads, stats) = {
            let mut tape = Tape::new(&registry);
            let noise = TrainNoise {
                dropout: cfg.dropout,
                rng: &mut noise_rng,
            };
            let fwd = forward_episode(&mut tape, &model, &data.vocab, &episode, cfg.lambda, Some(noise))
                .map_err(|e| diverged(it, e))?;
            let stats = EpisodeStats::from_forward(&tape, &fwd, &episode);
            if !stats.joint.is_finite() {
                return Err(Error::Diverged {
                    iteration: it,
                    reason: "non-finite joint loss".into(),
                });
            }
            let grads = tape.backward(fwd.joint).map_err(|e| diverged(it, e.into()))?;
            (grads, stats)
        };
        grads.accumulate_into(&mut registry)?;
        sgd_step(&mut registry, cfg.lr).map_err(|e| diverged(it, e.into()))?;
        registry.clear_grads();
        if registry.iter().any(|(_, _, t)| t.values().iter().any(|v| !v.is_finite())) {
            return Err(Error::Diverged {
                iteration: it,
                reason: "non-finite parameter after update".into(),
            });
        }

        let row = LogRow {
            iteration: it,
            l_ti: stats.l_ti,
            l_ec: stats.l_ec,
            joint: stats.joint,
            accuracy: stats.accuracy(),
            ti_accuracy: stats.ti_accuracy(),
        };
        if it % cfg.log_every == 0 || it == cfg.train_iters {
            on_log(&row);
            outcome.log.push(row.clone());
        }
        outcome.history.push(row);

        if cfg.val_iters > 0 && (it % cfg.val_every == 0 || it == cfg.train_iters) {
            let (m, _) = validate(&registry, &model, cfg, data)?;
            outcome.validations.push(ValidationRow {
                iteration: it,
                accuracy: m.accuracy,
                f1: m.f1,
                ti_accuracy: m.ti_accuracy,
            });
            if m.accuracy > best_acc {
                best_acc = m.accuracy;
                outcome.best = Some((it, registry.clone()));
            }
        }
    }
    outcome.registry = registry;
    Ok(outcome)
}

/// Validation uses the same episodes every time so scores are comparable.
fn validate(reg: &ParamRegistry, model: &Model, cfg: &RunConfig, data: &Dataset) -> Result<(Metrics, Vec<EpisodeStats>)> {
    let rng = Rng::new(cfg.seed).derive(seeds::VAL_EPISODES);
    evaluate(
        reg,
        model,
        data,
        &data.split.val,
        &cfg.episode(),
        cfg.val_iters,
        cfg.lambda,
        rng,
        cfg.eval_threads,
    )
}
