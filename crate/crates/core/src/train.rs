//! Seeded, single-threaded training with Adam on an L1 loss.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::backbone::BackboneConfig;
use crate::batch::SystemGraph;
use crate::checkpoint::{Checkpoint, TrainingState};
use crate::data::{read_dataset, Dataset};
use crate::error::{Error, Result};
use crate::eval::{mean_abs_error, predict_graphs_batched};
use crate::params::ParamStore;
use crate::rng::SplitMix64;
use crate::system::{AtomicSystem, Split};
use crate::tensor::{Tape, Tensor};
use crate::variants::{Model, ModelSpec, TargetNorm, VariantKind};

const STREAM_SHUFFLE: u64 = 0x5348_5546;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
}

/// Learning-rate schedule over all training steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    Constant,
    /// Half-cosine from `lr` at the first step down to 0 after the last.
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub betas: [f64; 2],
    pub eps: f64,
    pub schedule: LrSchedule,
}

impl OptimizerConfig {
    /// Learning rate for 0-based `step` out of `total`.
    pub fn lr_at(&self, step: usize, total: usize) -> f64 {
        match self.schedule {
            LrSchedule::Constant => self.lr,
            LrSchedule::Cosine => {
                let frac = step as f64 / total.max(1) as f64;
                0.5 * self.lr * (1.0 + (std::f64::consts::PI * frac).cos())
            }
        }
    }
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            lr: 1e-3,
            betas: [0.9, 0.999],
            eps: 1e-8,
            schedule: LrSchedule::Cosine,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    L1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub kind: LossKind,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { kind: LossKind::L1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelSpec,
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub loss: LossConfig,
    pub dataset_path: PathBuf,
    pub checkpoint_path: PathBuf,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelSpec::new(VariantKind::Connected, BackboneConfig::default()),
            optimizer: OptimizerConfig::default(),
            batch_size: 32,
            // all five full-size variants train on 2,000 systems in well under 20 minutes on one core
            epochs: 12,
            seed: 0,
            loss: LossConfig::default(),
            dataset_path: PathBuf::from("data.jsonl"),
            checkpoint_path: PathBuf::from("checkpoint.json"),
        }
    }
}

impl TrainConfig {
    /// `lr == 0` is accepted: it leaves parameters untouched, which is useful
    /// as a pipeline check.
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let o = &self.optimizer;
        if !(o.lr >= 0.0 && o.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be finite and >= 0, got {}", o.lr)));
        }
        if !o.betas.iter().all(|b| (0.0..1.0).contains(b)) {
            return Err(Error::Config(format!("betas must lie in [0, 1), got {:?}", o.betas)));
        }
        if !(o.eps > 0.0) {
            return Err(Error::Config(format!("eps must be > 0, got {}", o.eps)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean |prediction - target| over the epoch's training steps, eV.
    pub train_loss: f64,
    pub val_id_mae: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the best validation epoch (the last epoch when there is
    /// no `val_id` split).
    pub model: Model,
    pub log: Vec<EpochLog>,
    pub best: TrainingState,
    pub steps: usize,
}

impl TrainOutcome {
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::from_model(&self.model, Some(self.best))
    }
}

struct Adam {
    cfg: OptimizerConfig,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
    t: i32,
}

impl Adam {
    fn new(cfg: OptimizerConfig, params: &ParamStore) -> Self {
        let zeros: BTreeMap<String, Vec<f64>> = params.iter().map(|(k, t)| (k.clone(), vec![0.0; t.numel()])).collect();
        Adam {
            cfg,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    fn step(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Vec<f64>>, lr: f64) {
        self.t += 1;
        let [b1, b2] = self.cfg.betas;
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for (name, p) in params.iter_mut() {
            let g = &grads[name];
            let m = self.m.get_mut(name).expect("moment for every parameter");
            let v = self.v.get_mut(name).expect("moment for every parameter");
            for (i, x) in p.data_mut().iter_mut().enumerate() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                if lr != 0.0 {
                    *x -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.cfg.eps);
                }
            }
        }
    }
}

fn targets_of(systems: &[&AtomicSystem]) -> Result<Vec<f64>> {
    systems
        .iter()
        .map(|s| {
            s.target_energy
                .ok_or_else(|| Error::Dataset(format!("system {:?} has no target energy", s.id)))
        })
        .collect()
}

/// Reads the dataset named in the config, trains, and writes the checkpoint.
pub fn train(config: &TrainConfig) -> Result<TrainOutcome> {
    let dataset = read_dataset(&config.dataset_path)?;
    let outcome = train_on(config, &dataset)?;
    outcome.checkpoint().save(&config.checkpoint_path)?;
    Ok(outcome)
}

/// Trains on the `train` split of `dataset`, selecting the epoch with the
/// lowest `val_id` MAE. Writes nothing.
pub fn train_on(config: &TrainConfig, dataset: &Dataset) -> Result<TrainOutcome> {
    train_with_progress(config, dataset, |_| {})
}

pub fn train_with_progress(
    config: &TrainConfig,
    dataset: &Dataset,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    config.validate()?;
    let train_set = dataset.split(Split::Train);
    if train_set.is_empty() {
        return Err(Error::Dataset("no systems in the train split".into()));
    }
    let targets = targets_of(&train_set)?;
    let val_set = dataset.split(Split::ValId);
    let val_targets = targets_of(&val_set)?;

    let mut model = Model::new(config.model.clone(), config.seed)?;
    model.set_norm(TargetNorm::from_targets(&targets));
    let norm = model.norm();
    let raw_targets: Vec<f64> = targets.iter().map(|&t| norm.to_raw(t)).collect();

    let train_graphs = train_set
        .iter()
        .map(|s| model.prepare(s))
        .collect::<Result<Vec<SystemGraph>>>()?;
    let val_graphs = val_set
        .iter()
        .map(|s| model.prepare(s))
        .collect::<Result<Vec<SystemGraph>>>()?;

    let mut adam = Adam::new(config.optimizer.clone(), model.params());
    let mut rng = SplitMix64::derive(config.seed, STREAM_SHUFFLE);
    let mut order: Vec<usize> = (0..train_graphs.len()).collect();
    let mut abs_err = vec![0.0; train_graphs.len()];
    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(TrainingState, ParamStore)> = None;
    let mut step = 0;
    let total_steps = config.epochs * train_graphs.len().div_ceil(config.batch_size);

    for epoch in 1..=config.epochs {
        rng.shuffle(&mut order);
        for chunk in order.chunks(config.batch_size) {
            step += 1;
            let graphs: Vec<&SystemGraph> = chunk.iter().map(|&i| &train_graphs[i]).collect();
            let mut tape = Tape::new();
            let p = model.params().bind(&mut tape);
            let out = model.forward(&mut tape, &p, &graphs)?;
            let target = tape.constant(Tensor::column(chunk.iter().map(|&i| raw_targets[i]).collect()));
            let diff = tape.sub(out, target)?;
            let abs = tape.abs(diff);
            let loss = tape.mean(abs);
            let loss_value = tape.value(loss).data()[0];
            if !loss_value.is_finite() {
                return Err(Error::Diverged { epoch, step });
            }
            for (k, &i) in chunk.iter().enumerate() {
                abs_err[i] = tape.value(abs).data()[k] * norm.std;
            }
            tape.backward(loss)?;
            let grads = model.params().gradients(&tape, &p);
            if grads.values().flatten().any(|g| !g.is_finite()) {
                return Err(Error::Diverged { epoch, step });
            }
            let lr = config.optimizer.lr_at(step - 1, total_steps);
            adam.step(model.params_mut(), &grads, lr);
        }
        // Summed in index order so the value does not depend on the shuffle.
        let train_loss = abs_err.iter().sum::<f64>() / abs_err.len() as f64;
        let val_id_mae = if val_graphs.is_empty() {
            None
        } else {
            let refs: Vec<&SystemGraph> = val_graphs.iter().collect();
            let preds = predict_graphs_batched(&model, &refs, config.batch_size)?;
            Some(mean_abs_error(&preds, &val_targets))
        };
        let entry = EpochLog {
            epoch,
            train_loss,
            val_id_mae,
        };
        on_epoch(&entry);
        log.push(entry);

        let improved = match (&best, val_id_mae) {
            (None, _) => true,
            (Some((b, _)), Some(v)) => b.val_id_mae.is_some_and(|bv| v < bv),
            (Some(_), None) => true,
        };
        if improved {
            best = Some((TrainingState { epoch, val_id_mae }, model.params().clone()));
        }
    }

    let (best, params) = best.expect("at least one epoch");
    *model.params_mut() = params;
    Ok(TrainOutcome {
        model,
        log,
        best,
        steps: step,
    })
}
