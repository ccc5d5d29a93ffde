use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{GcnGradients, GcnModel, GraphInput, ModelDims, ModelTags};
use crate::error::{Error, Result};
use crate::numkit::{AdamConfig, AdamState, Rng};
use crate::scenegraph::SceneGraph;

/// Training hyperparameters. Defaults: 2 layers of width 256, 5 epochs,
/// batch 32, Adam at learning rate 0.001.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub layers: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        TrainConfig {
            layers: 2,
            hidden: 256,
            epochs: 5,
            batch_size: 32,
            learning_rate: adam.learning_rate,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers != 2 {
            return Err(Error::Config(format!(
                "only two graph convolution layers are supported, got {}",
                self.layers
            )));
        }
        if self.hidden == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("hidden, epochs and batch_size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("invalid learning rate {}", self.learning_rate)));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: GcnModel,
    /// Mean cross-entropy of every mini-batch, in training order.
    pub loss_history: Vec<f64>,
}

/// Trains on labeled scene graphs. Every graph must carry a class label.
pub fn train(
    graphs: &[SceneGraph],
    num_classes: usize,
    tags: ModelTags,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if graphs.is_empty() {
        return Err(Error::Argument("training set is empty".into()));
    }
    let mut samples = Vec::with_capacity(graphs.len());
    for (i, g) in graphs.iter().enumerate() {
        let label = g
            .label
            .ok_or_else(|| Error::Data(format!("training graph {i} has no class label")))?;
        samples.push((GraphInput::from_graph(g)?, label));
    }
    train_inputs(&samples, num_classes, tags, cfg)
}

/// Mini-batch Adam over prepared inputs.
///
/// Weights come from `Rng::with_stream(seed, 0)` and the per-epoch shuffles
/// from stream 1. Per-graph gradients may be computed in parallel; they are
/// summed in batch order, so results do not depend on the thread count.
pub fn train_inputs(
    samples: &[(GraphInput, usize)],
    num_classes: usize,
    tags: ModelTags,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let first = samples
        .first()
        .ok_or_else(|| Error::Argument("training set is empty".into()))?;
    let input_dim = first.0.features.cols();
    let mut per_class = vec![0usize; num_classes];
    for (i, (input, label)) in samples.iter().enumerate() {
        if input.features.cols() != input_dim {
            return Err(Error::Dimension {
                context: "training graph feature dims",
                left: input.features.shape(),
                right: first.0.features.shape(),
            });
        }
        if *label >= num_classes {
            return Err(Error::Data(format!(
                "training graph {i} has label {label} but only {num_classes} classes exist"
            )));
        }
        per_class[*label] += 1;
    }
    let missing = per_class.iter().filter(|&&n| n == 0).count();
    if missing > 0 {
        log::warn!("{missing} of {num_classes} classes have no training graph");
    }

    let dims = ModelDims {
        input: input_dim,
        hidden: cfg.hidden,
        classes: num_classes,
    };
    let mut init_rng = Rng::with_stream(cfg.seed, 0);
    let mut shuffle_rng = Rng::with_stream(cfg.seed, 1);
    let mut model = GcnModel::init(dims, tags, &mut init_rng)?;
    let mut adam = AdamState::new(cfg.adam(), &model.shapes());

    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut loss_history = Vec::new();
    for _epoch in 0..cfg.epochs {
        shuffle_rng.shuffle(&mut order);
        for batch in order.chunks(cfg.batch_size) {
            let per_graph = batch
                .par_iter()
                .map(|&i| {
                    let (input, label) = &samples[i];
                    let trace = model.forward_input(input)?;
                    model.backward(&trace, *label)
                })
                .collect::<Result<Vec<_>>>()?;
            let mut total = GcnGradients::zeros_like(&model);
            let mut batch_loss = 0.0;
            for (g, loss) in &per_graph {
                total.add_assign(g)?;
                batch_loss += loss;
            }
            let inv = 1.0 / batch.len() as f64;
            total.scale(inv);
            loss_history.push(batch_loss * inv);

            let grads = [&total.w1, &total.w2, &total.fc_weight, &total.fc_bias];
            adam.step(&mut model.params_mut(), &grads)?;
        }
    }
    Ok(TrainOutcome {
        model,
        loss_history,
    })
}
