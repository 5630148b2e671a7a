//! N-way-K-shot task construction.

use std::sync::Arc;

use numkernel::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{EventMention, SplitSection};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub n_way: usize,
    pub k_shot: usize,
    pub q_query: usize,
    pub seed: u64,
}

impl EpisodeConfig {
    /// Query size defaults to `n_way`.
    pub fn new(n_way: usize, k_shot: usize) -> Self {
        Self {
            n_way,
            k_shot,
            q_query: n_way,
            seed: 0,
        }
    }

    pub fn with_query(mut self, q_query: usize) -> Self {
        self.q_query = q_query;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_way < 2 || self.k_shot < 1 || self.q_query < 1 {
            return Err(Error::Config(format!(
                "need N >= 2, K >= 1, Q >= 1 (got N={}, K={}, Q={})",
                self.n_way, self.k_shot, self.q_query
            )));
        }
        Ok(())
    }

    /// Smallest pool a type needs to be eligible: `K + ceil(Q / N)`.
    pub fn min_per_type(&self) -> usize {
        self.k_shot + self.q_query.div_ceil(self.n_way)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryItem {
    pub mention: Arc<EventMention>,
    /// Local label, an index into `Episode::label_map`.
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    /// `support[i][j]`: shot `j` of local type `i`.
    pub support: Vec<Vec<Arc<EventMention>>>,
    pub query: Vec<QueryItem>,
    /// Local index to global event type.
    pub label_map: Vec<String>,
}

impl Episode {
    pub fn n_way(&self) -> usize {
        self.support.len()
    }

    pub fn k_shot(&self) -> usize {
        self.support.first().map_or(0, Vec::len)
    }

    /// Support type-major and shot-minor, then queries in order.
    pub fn mentions(&self) -> impl Iterator<Item = &Arc<EventMention>> {
        self.support.iter().flatten().chain(self.query.iter().map(|q| &q.mention))
    }

    pub fn num_mentions(&self) -> usize {
        self.support.iter().map(Vec::len).sum::<usize>() + self.query.len()
    }

    pub fn dump(&self) -> EpisodeDump {
        let entry = |m: &EventMention, label: usize| DumpMention {
            tokens: m.tokens.clone(),
            trigger_index: m.trigger_index,
            label,
        };
        EpisodeDump {
            label_map: self.label_map.clone(),
            support: self
                .support
                .iter()
                .enumerate()
                .map(|(i, shots)| shots.iter().map(|m| entry(m, i)).collect())
                .collect(),
            query: self.query.iter().map(|q| entry(&q.mention, q.label)).collect(),
        }
    }
}

/// Debug view of an episode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeDump {
    pub label_map: Vec<String>,
    pub support: Vec<Vec<DumpMention>>,
    pub query: Vec<DumpMention>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DumpMention {
    pub tokens: Vec<String>,
    pub trigger_index: usize,
    pub label: usize,
}

/// Samples episodes from one split section. Types with fewer than
/// [`EpisodeConfig::min_per_type`] mentions are left out.
#[derive(Debug, Clone)]
pub struct EpisodeSampler<'a> {
    cfg: EpisodeConfig,
    eligible: Vec<(&'a str, &'a [Arc<EventMention>])>,
    excluded: usize,
}

impl<'a> EpisodeSampler<'a> {
    pub fn new(section: &'a SplitSection, cfg: EpisodeConfig) -> Result<Self> {
        cfg.validate()?;
        let need = cfg.min_per_type();
        let eligible: Vec<(&str, &[Arc<EventMention>])> = section
            .by_type
            .iter()
            .filter(|(_, ms)| ms.len() >= need)
            .map(|(t, ms)| (t.as_str(), ms.as_slice()))
            .collect();
        let excluded = section.num_types() - eligible.len();
        if eligible.len() < cfg.n_way {
            return Err(Error::Sampling(format!(
                "{}-way sampling needs {} types with >= {need} mentions; only {} eligible ({excluded} excluded)",
                cfg.n_way,
                cfg.n_way,
                eligible.len()
            )));
        }
        Ok(Self { cfg, eligible, excluded })
    }

    pub fn config(&self) -> &EpisodeConfig {
        &self.cfg
    }

    /// Number of types dropped for having too few mentions.
    pub fn excluded(&self) -> usize {
        self.excluded
    }

    pub fn sample(&self, rng: &mut Rng) -> Episode {
        let EpisodeConfig {
            n_way, k_shot, q_query, ..
        } = self.cfg;
        let picked = rng.sample_indices(self.eligible.len(), n_way);
        let pools: Vec<&[Arc<EventMention>]> = picked.iter().map(|&i| self.eligible[i].1).collect();

        // Query labels are uniform over this episode's types that still
        // have unused mentions.
        let mut queries_per_type = vec![0usize; n_way];
        let mut labels = Vec::with_capacity(q_query);
        for _ in 0..q_query {
            let open: Vec<usize> = (0..n_way)
                .filter(|&i| pools[i].len() > k_shot + queries_per_type[i])
                .collect();
            let label = open[rng.below(open.len())];
            queries_per_type[label] += 1;
            labels.push(label);
        }

        let mut support = Vec::with_capacity(n_way);
        let mut query_pools = Vec::with_capacity(n_way);
        for (i, pool) in pools.iter().enumerate() {
            let draw = rng.sample_indices(pool.len(), k_shot + queries_per_type[i]);
            support.push(draw[..k_shot].iter().map(|&j| Arc::clone(&pool[j])).collect());
            query_pools.push(draw[k_shot..].iter().map(|&j| Arc::clone(&pool[j])).collect::<Vec<_>>());
        }
        let mut cursor = vec![0usize; n_way];
        let query = labels
            .into_iter()
            .map(|label| {
                let m = Arc::clone(&query_pools[label][cursor[label]]);
                cursor[label] += 1;
                QueryItem { mention: m, label }
            })
            .collect();
        Episode {
            support,
            query,
            label_map: picked.iter().map(|&i| self.eligible[i].0.to_string()).collect(),
        }
    }
}

pub fn sample_episode(section: &SplitSection, cfg: &EpisodeConfig, rng: &mut Rng) -> Result<Episode> {
    Ok(EpisodeSampler::new(section, *cfg)?.sample(rng))
}

/// Yields exactly `iterations` episodes.
pub struct EpisodeStream<'a> {
    sampler: Option<EpisodeSampler<'a>>,
    rng: Rng,
    remaining: usize,
}

impl Iterator for EpisodeStream<'_> {
    type Item = Episode;

    fn next(&mut self) -> Option<Episode> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        self.sampler.as_ref().map(|s| s.sample(&mut self.rng))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        (self.remaining, Some(self.remaining))
    }
}

impl ExactSizeIterator for EpisodeStream<'_> {}

pub fn episode_stream<'a>(
    section: &'a SplitSection,
    cfg: &EpisodeConfig,
    iterations: usize,
    rng: Rng,
) -> Result<EpisodeStream<'a>> {
    let sampler = if iterations == 0 {
        None
    } else {
        Some(EpisodeSampler::new(section, *cfg)?)
    };
    Ok(EpisodeStream {
        sampler,
        rng,
        remaining: iterations,
    })
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;

    fn section(types: usize, per_type: usize) -> SplitSection {
        let mut by_type = BTreeMap::new();
        for t in 0..types {
            let ms = (0..per_type)
                .map(|i| Arc::new(EventMention::new(vec![format!("t{t}m{i}")], 0, format!("T{t}")).unwrap()))
                .collect();
            by_type.insert(format!("T{t}"), ms);
        }
        SplitSection { by_type }
    }

    #[test]
    fn five_way_five_shot_shape() {
        let s = section(8, 20);
        let cfg = EpisodeConfig::new(5, 5);
        let ep = sample_episode(&s, &cfg, &mut Rng::new(1)).unwrap();
        assert_eq!(ep.n_way(), 5);
        assert!(ep.support.iter().all(|shots| shots.len() == 5));
        assert_eq!(ep.mentions().take(25).count(), 25);
        assert_eq!(ep.query.len(), 5);
        assert_eq!(ep.num_mentions(), 30);
    }

    #[test]
    fn tight_corpus_keeps_support_and_query_disjoint() {
        let s = section(2, 2);
        let cfg = EpisodeConfig::new(2, 1).with_query(2);
        for seed in 0..50 {
            let ep = sample_episode(&s, &cfg, &mut Rng::new(seed)).unwrap();
            for q in &ep.query {
                assert!(ep.support.iter().flatten().all(|m| !Arc::ptr_eq(m, &q.mention)));
            }
        }
    }

    #[test]
    fn query_labels_belong_to_sampled_types() {
        let s = section(10, 12);
        let cfg = EpisodeConfig::new(5, 3).with_query(7);
        let mut rng = Rng::new(3);
        for _ in 0..1000 {
            let ep = sample_episode(&s, &cfg, &mut rng).unwrap();
            for q in &ep.query {
                assert!(q.label < 5);
                assert_eq!(q.mention.event_type, ep.label_map[q.label]);
            }
            for (i, shots) in ep.support.iter().enumerate() {
                assert!(shots.iter().all(|m| m.event_type == ep.label_map[i]));
            }
        }
    }

    #[test]
    fn small_types_are_excluded_and_shortfall_reported() {
        let mut s = section(4, 10);
        s.by_type.get_mut("T0").unwrap().truncate(2);
        let cfg = EpisodeConfig::new(3, 4);
        let sampler = EpisodeSampler::new(&s, cfg).unwrap();
        assert_eq!(sampler.excluded(), 1);
        for seed in 0..20 {
            let ep = sampler.sample(&mut Rng::new(seed));
            assert!(!ep.label_map.iter().any(|t| t == "T0"));
        }
        let err = EpisodeSampler::new(&s, EpisodeConfig::new(4, 4)).unwrap_err();
        assert!(matches!(err, Error::Sampling(_)));
    }

    #[test]
    fn invalid_config() {
        let s = section(4, 10);
        assert!(matches!(
            sample_episode(&s, &EpisodeConfig::new(1, 1), &mut Rng::new(0)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn stream_length_and_determinism() {
        let s = section(6, 10);
        let cfg = EpisodeConfig::new(3, 2);
        assert_eq!(episode_stream(&s, &cfg, 0, Rng::new(0)).unwrap().count(), 0);
        let a: Vec<EpisodeDump> = episode_stream(&s, &cfg, 40, Rng::new(5)).unwrap().map(|e| e.dump()).collect();
        let b: Vec<EpisodeDump> = episode_stream(&s, &cfg, 40, Rng::new(5)).unwrap().map(|e| e.dump()).collect();
        let c: Vec<EpisodeDump> = episode_stream(&s, &cfg, 40, Rng::new(6)).unwrap().map(|e| e.dump()).collect();
        assert_eq!(a.len(), 40);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
