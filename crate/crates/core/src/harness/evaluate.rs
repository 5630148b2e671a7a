use numkernel::{ParamRegistry, Rng, Tape};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::Dataset;
use crate::corpus::SplitSection;
use crate::episodes::{episode_stream, Episode, EpisodeConfig};
use crate::error::{Error, Result};
use crate::model::{forward_episode, EpisodeForward, Model};

/// Per-episode tallies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStats {
    pub l_ti: f64,
    pub l_ec: f64,
    pub joint: f64,
    pub queries: usize,
    pub correct: usize,
    pub mentions: usize,
    pub trigger_hits: usize,
    /// `(gold, predicted)` local labels per query.
    pub pairs: Vec<(usize, usize)>,
}

impl EpisodeStats {
    pub fn from_forward(tape: &Tape, fwd: &EpisodeForward, episode: &Episode) -> Self {
        Self {
            l_ti: tape.scalar(fwd.l_ti),
            l_ec: tape.scalar(fwd.l_ec),
            joint: tape.scalar(fwd.joint),
            queries: fwd.predictions.len(),
            correct: fwd.correct_queries(),
            mentions: episode.num_mentions(),
            trigger_hits: fwd.trigger_hits(episode),
            pairs: fwd.predictions.iter().map(|p| (p.gold, p.predicted)).collect(),
        }
    }

    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.queries.max(1) as f64
    }

    pub fn ti_accuracy(&self) -> f64 {
        self.trigger_hits as f64 / self.mentions.max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub episodes: usize,
    pub queries: usize,
    pub mentions: usize,
    pub accuracy: f64,
    pub accuracy_ci: f64,
    pub f1: f64,
    pub f1_ci: f64,
    pub ti_accuracy: f64,
    pub ti_accuracy_ci: f64,
    pub mean_l_ti: f64,
    pub mean_l_ec: f64,
}

/// 1.96 standard errors of the per-episode mean.
pub fn ci95(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    1.96 * (var / n as f64).sqrt()
}

/// Micro-averaged F1 from per-class true positive, false positive and
/// false negative counts.
pub fn micro_f1(pairs: &[(usize, usize)]) -> f64 {
    let classes = pairs.iter().map(|&(g, p)| g.max(p) + 1).max().unwrap_or(0);
    let (mut tp, mut fp, mut fn_) = (vec![0usize; classes], vec![0usize; classes], vec![0usize; classes]);
    for &(g, p) in pairs {
        if g == p {
            tp[g] += 1;
        } else {
            fp[p] += 1;
            fn_[g] += 1;
        }
    }
    let (tp, fp, fn_): (usize, usize, usize) = (tp.iter().sum(), fp.iter().sum(), fn_.iter().sum());
    if tp == 0 {
        return 0.0;
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fn_) as f64;
    2.0 * precision * recall / (precision + recall)
}

pub fn aggregate(stats: &[EpisodeStats]) -> Metrics {
    let n = stats.len();
    let queries: usize = stats.iter().map(|s| s.queries).sum();
    let correct: usize = stats.iter().map(|s| s.correct).sum();
    let mentions: usize = stats.iter().map(|s| s.mentions).sum();
    let hits: usize = stats.iter().map(|s| s.trigger_hits).sum();
    let pairs: Vec<(usize, usize)> = stats.iter().flat_map(|s| s.pairs.iter().copied()).collect();
    let acc: Vec<f64> = stats.iter().map(EpisodeStats::accuracy).collect();
    let f1s: Vec<f64> = stats.iter().map(|s| micro_f1(&s.pairs)).collect();
    let ti: Vec<f64> = stats.iter().map(EpisodeStats::ti_accuracy).collect();
    let mean = |f: fn(&EpisodeStats) -> f64| {
        if n == 0 {
            0.0
        } else {
            stats.iter().map(f).sum::<f64>() / n as f64
        }
    };
    Metrics {
        episodes: n,
        queries,
        mentions,
        accuracy: correct as f64 / queries.max(1) as f64,
        accuracy_ci: ci95(&acc),
        f1: micro_f1(&pairs),
        f1_ci: ci95(&f1s),
        ti_accuracy: hits as f64 / mentions.max(1) as f64,
        ti_accuracy_ci: ci95(&ti),
        mean_l_ti: mean(|s| s.l_ti),
        mean_l_ec: mean(|s| s.l_ec),
    }
}

/// Forward pass with frozen parameters.
pub fn score_episode(reg: &ParamRegistry, model: &Model, data: &Dataset, episode: &Episode, lambda: f64) -> Result<EpisodeStats> {
    let mut tape = Tape::new(reg);
    let fwd = forward_episode(&mut tape, model, &data.vocab, episode, lambda, None)?;
    Ok(EpisodeStats::from_forward(&tape, &fwd, episode))
}

/// Fails unless `reg` has exactly the names and shapes of `expected`.
pub fn check_layout(reg: &ParamRegistry, expected: &ParamRegistry) -> Result<()> {
    let a: Vec<(&str, &[usize])> = reg.iter().map(|(_, n, t)| (n, t.shape())).collect();
    let b: Vec<(&str, &[usize])> = expected.iter().map(|(_, n, t)| (n, t.shape())).collect();
    if a != b {
        return Err(Error::Checkpoint("parameter layout does not match the configured model".into()));
    }
    Ok(())
}

/// Samples `iterations` episodes from `section` and scores them. Episodes
/// are drawn up front, scored on the worker pool and merged in order.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    reg: &ParamRegistry,
    model: &Model,
    data: &Dataset,
    section: &SplitSection,
    cfg: &EpisodeConfig,
    iterations: usize,
    lambda: f64,
    rng: Rng,
    threads: usize,
) -> Result<(Metrics, Vec<EpisodeStats>)> {
    let episodes: Vec<Episode> = episode_stream(section, cfg, iterations, rng)?.collect();
    let run = || {
        episodes
            .par_iter()
            .map(|ep| score_episode(reg, model, data, ep, lambda))
            .collect::<Result<Vec<_>>>()
    };
    let stats = if threads == 0 {
        run()?
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(run)?
    };
    Ok((aggregate(&stats), stats))
}
