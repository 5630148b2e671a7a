use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use numkernel::Rng;
use serde::{Deserialize, Serialize};

use super::EventMention;
use crate::error::{Error, Result};

/// Mentions of one split, grouped by event type.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SplitSection {
    pub by_type: BTreeMap<String, Vec<Arc<EventMention>>>,
}

impl SplitSection {
    pub fn types(&self) -> impl Iterator<Item = &str> {
        self.by_type.keys().map(String::as_str)
    }

    pub fn num_types(&self) -> usize {
        self.by_type.len()
    }

    pub fn num_mentions(&self) -> usize {
        self.by_type.values().map(Vec::len).sum()
    }

    pub fn contains_type(&self, t: &str) -> bool {
        self.by_type.contains_key(t)
    }

    pub fn mentions(&self) -> impl Iterator<Item = &Arc<EventMention>> {
        self.by_type.values().flatten()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for SplitName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitName::Train),
            "val" | "validation" => Ok(SplitName::Val),
            "test" => Ok(SplitName::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: SplitSection,
    pub val: SplitSection,
    pub test: SplitSection,
}

impl DatasetSplit {
    pub fn section(&self, name: SplitName) -> &SplitSection {
        match name {
            SplitName::Train => &self.train,
            SplitName::Val => &self.val,
            SplitName::Test => &self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SplitSpec {
    Fractions { train: f64, val: f64, test: f64 },
    Explicit {
        train: Vec<String>,
        val: Vec<String>,
        test: Vec<String>,
    },
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec::Fractions {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

/// Partitions event types (never instances) into train/val/test.
pub fn split_by_type(mentions: &[EventMention], spec: &SplitSpec, seed: u64) -> Result<DatasetSplit> {
    let types: BTreeSet<&str> = mentions.iter().map(|m| m.event_type.as_str()).collect();
    if types.len() < 3 {
        return Err(Error::Domain(format!("need at least 3 event types, found {}", types.len())));
    }
    let (train, val, test): (BTreeSet<String>, BTreeSet<String>, BTreeSet<String>) = match spec {
        SplitSpec::Fractions { train, val, test } => {
            let total = train + val + test;
            if [*train, *val, *test].iter().any(|f| *f < 0.0) || total <= 0.0 {
                return Err(Error::Domain("split fractions must be non-negative".into()));
            }
            let n = types.len();
            let n_val = (val / total * n as f64).round() as usize;
            let n_test = (test / total * n as f64).round() as usize;
            if n_val == 0 || n_test == 0 || n_val + n_test >= n {
                return Err(Error::Domain(format!(
                    "{n} types cannot be split into non-empty parts with fractions {train}/{val}/{test}"
                )));
            }
            let mut order: Vec<&str> = types.iter().copied().collect();
            Rng::new(seed).shuffle(&mut order);
            let own = |s: &[&str]| s.iter().map(|t| t.to_string()).collect();
            let n_train = n - n_val - n_test;
            (
                own(&order[..n_train]),
                own(&order[n_train..n_train + n_val]),
                own(&order[n_train + n_val..]),
            )
        }
        SplitSpec::Explicit { train, val, test } => {
            let set = |v: &[String]| v.iter().cloned().collect::<BTreeSet<String>>();
            let (a, b, c) = (set(train), set(val), set(test));
            if !a.is_disjoint(&b) || !a.is_disjoint(&c) || !b.is_disjoint(&c) {
                return Err(Error::Domain("explicit type lists overlap".into()));
            }
            if let Some(t) = types.iter().find(|t| !a.contains(**t) && !b.contains(**t) && !c.contains(**t)) {
                return Err(Error::Domain(format!("event type `{t}` is not assigned to any split")));
            }
            (a, b, c)
        }
    };
    let mut out = DatasetSplit {
        train: SplitSection::default(),
        val: SplitSection::default(),
        test: SplitSection::default(),
    };
    for m in mentions {
        let section = if train.contains(&m.event_type) {
            &mut out.train
        } else if val.contains(&m.event_type) {
            &mut out.val
        } else if test.contains(&m.event_type) {
            &mut out.test
        } else {
            unreachable!("every type was assigned above")
        };
        section
            .by_type
            .entry(m.event_type.clone())
            .or_default()
            .push(Arc::new(m.clone()));
    }
    Ok(out)
}
