//! Per-split MAE evaluation and forward-pass throughput.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::batch::SystemGraph;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::system::{AtomicSystem, Split};
use crate::variants::Model;

/// Batch size for evaluation and benchmarking.
pub const EVAL_BATCH_SIZE: usize = 32;
pub const MIN_REPETITIONS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub pred: f64,
    pub target: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Throughput {
    /// Samples per second.
    pub mean: f64,
    pub std: f64,
    pub batch_size: usize,
    pub n_samples: usize,
    /// Samples per second of each timed repetition.
    pub repetitions: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mae_per_split: BTreeMap<Split, f64>,
    pub n_samples: BTreeMap<Split, usize>,
    /// Mean over the validation splits that have samples.
    pub mae_average: Option<f64>,
    pub throughput: Option<Throughput>,
    pub warnings: Vec<String>,
}

pub fn mean_abs_error(pred: &[f64], target: &[f64]) -> f64 {
    assert_eq!(pred.len(), target.len());
    if pred.is_empty() {
        return 0.0;
    }
    pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64
}

/// Energies in eV for prepared graphs, `batch_size` graphs per forward pass.
pub fn predict_graphs_batched(model: &Model, graphs: &[&SystemGraph], batch_size: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(graphs.len());
    for chunk in graphs.chunks(batch_size.max(1)) {
        out.extend(model.predict_graphs(chunk)?);
    }
    Ok(out)
}

pub fn predict_systems(model: &Model, systems: &[&AtomicSystem], batch_size: usize) -> Result<Vec<f64>> {
    let graphs = systems.iter().map(|s| model.prepare(s)).collect::<Result<Vec<_>>>()?;
    predict_graphs_batched(model, &graphs.iter().collect::<Vec<_>>(), batch_size)
}

/// Predictions for every system of `dataset`, in dataset order.
pub fn predict_dataset(model: &Model, dataset: &Dataset) -> Result<Vec<Prediction>> {
    let systems: Vec<&AtomicSystem> = dataset.systems.iter().collect();
    let preds = predict_systems(model, &systems, EVAL_BATCH_SIZE)?;
    Ok(systems
        .iter()
        .zip(preds)
        .map(|(s, pred)| Prediction {
            id: s.id.clone(),
            pred,
            target: s.target_energy,
        })
        .collect())
}

/// MAE per split from a prediction dump. Systems without a target are skipped.
pub fn report_from_predictions(dataset: &Dataset, predictions: &[Prediction]) -> EvalReport {
    let mut abs: BTreeMap<Split, Vec<f64>> = BTreeMap::new();
    for (s, p) in dataset.systems.iter().zip(predictions) {
        if let Some(t) = p.target {
            abs.entry(s.metadata.split).or_default().push((p.pred - t).abs());
        }
    }
    let mut mae_per_split = BTreeMap::new();
    let mut n_samples = BTreeMap::new();
    for (split, errs) in &abs {
        mae_per_split.insert(*split, errs.iter().sum::<f64>() / errs.len() as f64);
        n_samples.insert(*split, errs.len());
    }
    let mut warnings = Vec::new();
    let mut present = Vec::new();
    for split in Split::VALIDATION {
        match mae_per_split.get(&split) {
            Some(&m) => present.push(m),
            None => warnings.push(format!("split {split} has no samples; excluded from the average")),
        }
    }
    let mae_average = if present.is_empty() {
        None
    } else {
        Some(present.iter().sum::<f64>() / present.len() as f64)
    };
    EvalReport {
        mae_per_split,
        n_samples,
        mae_average,
        throughput: None,
        warnings,
    }
}

pub fn evaluate(model: &Model, dataset: &Dataset) -> Result<(EvalReport, Vec<Prediction>)> {
    let predictions = predict_dataset(model, dataset)?;
    Ok((report_from_predictions(dataset, &predictions), predictions))
}

/// Forward-only throughput including graph construction. One untimed warm-up
/// pass, then `repetitions` timed passes over all systems.
pub fn benchmark_throughput(model: &Model, systems: &[AtomicSystem], repetitions: usize) -> Result<Throughput> {
    benchmark_with_batch(model, systems, repetitions, EVAL_BATCH_SIZE)
}

pub fn benchmark_with_batch(
    model: &Model,
    systems: &[AtomicSystem],
    repetitions: usize,
    batch_size: usize,
) -> Result<Throughput> {
    if systems.is_empty() {
        return Err(Error::Dataset("cannot benchmark an empty dataset".into()));
    }
    if repetitions < MIN_REPETITIONS {
        return Err(Error::Config(format!(
            "repetitions must be >= {MIN_REPETITIONS}, got {repetitions}"
        )));
    }
    let pass = || -> Result<()> {
        for chunk in systems.chunks(batch_size.max(1)) {
            let graphs = chunk.iter().map(|s| model.prepare(s)).collect::<Result<Vec<_>>>()?;
            let refs: Vec<&SystemGraph> = graphs.iter().collect();
            std::hint::black_box(model.predict_graphs(&refs)?);
        }
        Ok(())
    };
    pass()?;
    let mut rates = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let start = Instant::now();
        pass()?;
        rates.push(systems.len() as f64 / start.elapsed().as_secs_f64());
    }
    let n = rates.len() as f64;
    let mean = rates.iter().sum::<f64>() / n;
    let std = (rates.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    Ok(Throughput {
        mean,
        std,
        batch_size,
        n_samples: systems.len(),
        repetitions: rates,
    })
}
