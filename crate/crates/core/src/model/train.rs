//! Per-example Adam training with gradient clipping and best-dev selection.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Instance, Model, ModelError, Result};
use crate::data::evaluate_pair;
use crate::tensor::{Adam, AdamConfig, Tape};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub adam: AdamConfig,
    /// Global gradient-norm bound; 0 disables clipping.
    pub clip: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            adam: AdamConfig::default(),
            clip: 5.0,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean per-example loss of the epoch; absent for the initial entry.
    pub train_loss: Option<f64>,
    /// Greedy exact match on the dev set.
    pub dev_accuracy: Option<f64>,
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// Parameters of the best dev epoch, or of the last epoch without dev data.
    pub model: Model,
    pub log: Vec<EpochMetrics>,
    pub best_epoch: usize,
    /// Set when training stopped on a numeric failure; `model` is then the
    /// last good state.
    pub aborted: Option<String>,
}

/// Greedy exact-match accuracy.
pub fn greedy_accuracy(model: &Model, data: &[Instance], gold: &[String]) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0;
    for (inst, g) in data.iter().zip(gold) {
        if let Some(d) = model.greedy(inst)? {
            hits += usize::from(evaluate_pair(&d.sql, g, inst.schema));
        }
    }
    Ok(hits as f64 / data.len() as f64)
}

/// One teacher-forced update; returns the example loss.
pub fn train_step(model: &mut Model, adam: &mut Adam, inst: &Instance, clip: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let loss = model.net().loss(&mut tape, inst)?;
    let value = tape.value(loss).item();
    let grads = tape.backward(loss)?;
    model.store.clear_grads();
    grads.accumulate_into(&tape, &mut model.store);
    let norm = model.store.grad_norm();
    if !norm.is_finite() {
        return Err(ModelError::Tensor(crate::tensor::TensorError::NonFinite { op: "gradient" }));
    }
    if clip > 0.0 && norm > clip {
        model.store.scale_grads(clip / norm);
    }
    adam.step(&mut model.store)?;
    Ok(value)
}

/// Trains on `train` (instances with gold derivations). `dev_gold` holds the
/// canonical gold SQL of each dev instance.
pub fn train(mut model: Model, train: &[Instance], dev: &[Instance], dev_gold: &[String], cfg: &TrainConfig) -> Result<TrainOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg.adam);
    let has_dev = !dev.is_empty();
    let dev_acc = |m: &Model| -> Result<Option<f64>> {
        if has_dev {
            greedy_accuracy(m, dev, dev_gold).map(Some)
        } else {
            Ok(None)
        }
    };
    let first = dev_acc(&model)?;
    let mut log = vec![EpochMetrics {
        epoch: 0,
        train_loss: None,
        dev_accuracy: first,
    }];
    let mut best = (first.unwrap_or(f64::NEG_INFINITY), 0usize, model.store.clone());
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut losses = vec![0.0; train.len()];
        for &i in &order {
            match train_step(&mut model, &mut adam, &train[i], cfg.clip) {
                Ok(l) => losses[i] = l,
                Err(ModelError::Tensor(e)) => {
                    log::error!("epoch {epoch}: numeric failure: {e}");
                    model.store = best.2;
                    return Ok(TrainOutcome {
                        model,
                        log,
                        best_epoch: best.1,
                        aborted: Some(e.to_string()),
                    });
                }
                Err(e) => return Err(e),
            }
        }
        let train_loss = if train.is_empty() {
            0.0
        } else {
            losses.iter().sum::<f64>() / train.len() as f64
        };
        let acc = dev_acc(&model)?;
        log::info!(
            "epoch {epoch}: loss {train_loss:.4}{}",
            acc.map(|a| format!(", dev {:.1}%", 100.0 * a)).unwrap_or_default()
        );
        log.push(EpochMetrics {
            epoch,
            train_loss: Some(train_loss),
            dev_accuracy: acc,
        });
        let score = acc.unwrap_or(f64::NEG_INFINITY);
        if !has_dev || score > best.0 {
            best = (score, epoch, model.store.clone());
        }
    }
    let best_epoch = best.1;
    model.store = best.2;
    Ok(TrainOutcome {
        model,
        log,
        best_epoch,
        aborted: None,
    })
}
