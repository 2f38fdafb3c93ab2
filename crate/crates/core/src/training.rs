//! Minibatch SGD driver shared by original-model training, the two
//! fine-tuning phases, and the baselines.

use crate::autodiff::{sgd_step, Graph, OptimStep};
use crate::data::LabeledDataset;
use crate::models::ClassifierModel;
use crate::util::Rng;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainProtocol {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub clip_norm: Option<f64>,
    pub seed: u64,
}

impl TrainProtocol {
    /// A zero rate means "measure losses, never update".
    fn optim_step(&self) -> Result<Option<OptimStep>> {
        if self.learning_rate == 0.0 {
            return Ok(None);
        }
        Ok(Some(OptimStep::new(
            self.learning_rate,
            self.weight_decay,
            self.clip_norm,
        )?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Descend,
    /// Sign-flipped updates (gradient ascent on the loss).
    Ascend,
}

/// Epochs of shuffled minibatch cross-entropy SGD. Returns the trained model
/// and the per-step batch losses. Deterministic in (model, data, protocol).
pub fn train_classifier(
    model: &ClassifierModel,
    data: &LabeledDataset,
    protocol: &TrainProtocol,
    direction: Direction,
) -> Result<(ClassifierModel, Vec<f64>)> {
    if data.is_empty() {
        return Err(Error::EmptyInput("train_classifier"));
    }
    if protocol.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let step = protocol.optim_step()?;
    let mut rng = Rng::from_seed(protocol.seed);
    let mut params = model.params.clone();
    let mut losses = Vec::new();

    for _ in 0..protocol.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        rng.shuffle(&mut order);
        for chunk in order.chunks(protocol.batch_size) {
            let batch = data.select(chunk)?;
            let mut g = Graph::new();
            let pids = g.params(params.tensors());
            let x = g.constant(batch.inputs.clone());
            let (_, logits) = model.forward_graph(&mut g, &pids, x)?;
            let loss = g.cross_entropy(logits, batch.labels.clone())?;
            losses.push(g.scalar(loss)?);
            if let Some(step) = &step {
                let grads = g.backward(loss)?;
                let grads = match direction {
                    Direction::Descend => grads,
                    Direction::Ascend => grads.scale(-1.0),
                };
                params = sgd_step(&params, &grads, step)?;
            }
        }
    }
    Ok((model.with_params(params), losses))
}
