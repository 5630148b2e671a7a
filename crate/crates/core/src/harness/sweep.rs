use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::data::Dataset;
use super::evaluate_test;
use super::train::train;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub ti_accuracy: f64,
    pub ec_accuracy: f64,
    pub f1: f64,
}

/// Trains one model per λ for `train_iters` iterations and scores each on
/// the test split.
pub fn lambda_sweep(cfg: &RunConfig, data: &Dataset, lambdas: &[f64], train_iters: usize) -> Result<Vec<SweepRow>> {
    if let Some(l) = lambdas.iter().find(|l| !(0.0..=1.0).contains(*l)) {
        return Err(Error::Domain(format!("lambda {l} outside [0, 1]")));
    }
    lambdas
        .iter()
        .map(|&lambda| {
            let run = RunConfig {
                lambda,
                train_iters,
                ..cfg.clone()
            };
            let out = train(&run, data)?;
            let m = evaluate_test(&out.registry, &out.model, &run, data)?;
            Ok(SweepRow {
                lambda,
                ti_accuracy: m.ti_accuracy,
                ec_accuracy: m.accuracy,
                f1: m.f1,
            })
        })
        .collect()
}

pub fn write_sweep_csv(path: impl AsRef<Path>, rows: &[SweepRow]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
