use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use super::config::ExperimentConfig;
use super::eval::evaluate;
use super::Sample;
use crate::error::{Error, Result};
use crate::metrics::Index;
use crate::models::{build_model, ModelGraph};
use crate::optim::make_state;
use crate::seed::{derive_seed, rng_for};
use crate::tensor::{Tape, Tensor};

/// Per-epoch history of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    /// Mean minibatch loss of each epoch.
    pub train_loss: Vec<f64>,
    /// Mean validation JSI after each epoch (0 when undefined on every
    /// validation image).
    pub val_jsi: Vec<f64>,
    /// 0-based epoch whose parameters were kept.
    pub best_epoch: usize,
}

/// One forward/backward pass over a minibatch. The loss is the per-pixel
/// mean cross-entropy multiplied by `loss_scale`. Returns the loss and the
/// gradients of all trainable parameters.
pub fn loss_and_grads(model: &ModelGraph, batch: &[&Sample], loss_scale: f64) -> Result<(f64, BTreeMap<String, Tensor>)> {
    let images: Vec<Tensor> = batch.iter().map(|s| s.image.clone()).collect();
    let input = Tensor::stack_batch(&images)?;
    let labels: Vec<u8> = batch.iter().flat_map(|s| s.mask.labels().iter().copied()).collect();
    let mut tape = Tape::new();
    let params = model.bind(&mut tape);
    let x = tape.constant(input);
    let logits = model.forward_on_tape(&mut tape, x, &params)?;
    let loss = tape.softmax_cross_entropy(logits, &labels)?;
    let loss = if loss_scale != 1.0 { tape.weighted_sum(loss, &Tensor::scalar(loss_scale))? } else { loss };
    let value = tape.value(loss).item().expect("scalar loss");
    if !value.is_finite() {
        return Ok((value, BTreeMap::new()));
    }
    let mut grads = tape.backward(loss)?;
    let out = model
        .trainable_names()
        .map(|name| {
            let g = grads.take(params[name]).expect("trainable parameters receive gradients");
            (name.clone(), g)
        })
        .collect();
    Ok((value, out))
}

/// Trains `config.variant` on `train`, scoring `val` after every epoch, and
/// returns the parameters of the epoch with the highest validation JSI
/// (earliest epoch on ties).
///
/// Each epoch visits the training samples once in an order shuffled from the
/// run seed.
pub fn train(config: &ExperimentConfig, train: &[Sample], val: &[Sample]) -> Result<(ModelGraph, TrainHistory)> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::invalid(format!(
            "training needs non-empty train and val splits (got {} and {})",
            train.len(),
            val.len()
        )));
    }
    let mut model = build_model(config.variant, &config.backbone, 2, derive_seed(config.seed, "model"))?;
    let mut state = make_state(config.solver, &config.overrides())?;
    let mut history = TrainHistory { train_loss: Vec::new(), val_jsi: Vec::new(), best_epoch: 0 };
    let mut best: Option<(f64, crate::models::ParamStore)> = None;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng_for(config.seed, &format!("epoch/{epoch}")));
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train[i]).collect();
            let (loss, grads) = loss_and_grads(&model, &batch, config.loss_scale)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, step, loss });
            }
            state.apply_update(&mut model.params, &grads)?;
            loss_sum += loss;
            batches += 1;
            step += 1;
        }
        history.train_loss.push(loss_sum / batches as f64);

        let jsi = evaluate(&model, val, None)?.raw.mean(Index::Jsi).unwrap_or(0.0);
        history.val_jsi.push(jsi);
        if best.as_ref().map_or(true, |(b, _)| jsi > *b) {
            best = Some((jsi, model.params.clone()));
            history.best_epoch = epoch;
        }
    }
    if let Some((_, params)) = best {
        model.params = params;
    }
    Ok((model, history))
}
