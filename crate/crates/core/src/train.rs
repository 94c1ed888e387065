//! Target encoding, the pretraining loop and snippet fine-tuning.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotations::OnsetAnnotations;
use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, FRAME_RATE};
use crate::model::{FreezeConfig, Model};
use crate::nn::Tensor;
use crate::optim::{OptimizerConfig, OptimizerKind, OptimizerState};

/// Learning rate of pretraining; fine-tuning runs at a fraction of it.
pub const DEFAULT_BASE_LR: f64 = 2e-3;

/// Frame-level targets: 1.0 at the frame nearest each onset, at least 0.5
/// on its two neighbours, 0 elsewhere.
pub fn make_targets(onsets: &OnsetAnnotations, n_frames: usize) -> Result<Vec<f64>> {
    let mut y = vec![0.0; n_frames];
    let end = n_frames as f64 / FRAME_RATE;
    for &t in onsets.times() {
        if t >= end {
            return Err(Error::Range(format!(
                "onset at {t:.4} s lies beyond the {end:.2} s clip"
            )));
        }
        let f = ((t * FRAME_RATE).round() as usize).min(n_frames - 1);
        y[f] = 1.0;
        if f > 0 {
            y[f - 1] = f64::max(y[f - 1], 0.5);
        }
        if f + 1 < n_frames {
            y[f + 1] = f64::max(y[f + 1], 0.5);
        }
    }
    Ok(y)
}

/// One training sequence.
#[derive(Debug, Clone)]
pub struct Example {
    pub features: FeatureMatrix,
    pub targets: Vec<f64>,
}

impl Example {
    pub fn new(features: FeatureMatrix, targets: Vec<f64>) -> Result<Self> {
        if features.n_frames() != targets.len() {
            return Err(Error::Shape(format!(
                "{} feature frames but {} targets",
                features.n_frames(),
                targets.len()
            )));
        }
        if features.n_frames() == 0 {
            return Err(Error::EmptyInput("training sequence has no frames".into()));
        }
        Ok(Example { features, targets })
    }

    pub fn from_onsets(features: FeatureMatrix, onsets: &OnsetAnnotations) -> Result<Self> {
        let targets = make_targets(onsets, features.n_frames())?;
        Example::new(features, targets)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            learning_rate: DEFAULT_BASE_LR,
            seed: 0,
        }
    }
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct Trained {
    pub model: Model,
    /// Mean per-sequence loss of each epoch.
    pub loss_history: Vec<f64>,
}

/// Sequence-by-sequence gradient descent on the model's trainable layers
/// with a fresh optimizer of the kind matching the model variant.
pub fn train(model: &Model, corpus: &[Example], config: &TrainConfig) -> Result<Trained> {
    fit(model, corpus, config.epochs, config.learning_rate, config.seed, true)
}

fn fit(model: &Model, corpus: &[Example], epochs: usize, lr: f64, seed: u64, dropout: bool) -> Result<Trained> {
    if corpus.is_empty() {
        return Err(Error::Config("training corpus is empty".into()));
    }
    if epochs == 0 {
        return Err(Error::Config("epochs must be at least 1".into()));
    }
    let inputs: Vec<(Tensor, Tensor)> = corpus
        .iter()
        .map(|ex| {
            if ex.features.n_frames() != ex.targets.len() {
                return Err(Error::Shape("targets are not aligned with features".into()));
            }
            Ok((ex.features.to_tensor(), Tensor::new(vec![ex.targets.len()], ex.targets.clone())?))
        })
        .collect::<Result<_>>()?;

    let mut model = model.clone();
    let trainable: Vec<usize> = (0..model.layers().len())
        .filter(|&i| model.layers()[i].trainable)
        .collect();
    let sizes: Vec<usize> = trainable
        .iter()
        .flat_map(|&i| model.layers()[i].params.iter().map(|p| p.value.len()))
        .collect();
    let mut opt = OptimizerState::new(
        OptimizerKind::for_variant(model.variant()),
        OptimizerConfig::with_lr(lr),
        &sizes,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut history = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &s in &order {
            let (x, y) = &inputs[s];
            let (loss, grads) = model.loss_and_grads(x, y, dropout, &mut rng)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            total += loss;
            let grad_bufs: Vec<&[f64]> = trainable
                .iter()
                .flat_map(|&i| {
                    grads.layers[i]
                        .as_ref()
                        .expect("trainable layer has gradients")
                        .iter()
                        .map(|g| g.data())
                })
                .collect();
            let layers = model.layers_mut();
            let mut param_bufs: Vec<&mut [f64]> = layers
                .iter_mut()
                .filter(|l| l.trainable)
                .flat_map(|l| l.params.iter_mut().map(|p| p.value.data_mut()))
                .collect();
            opt.step(&mut param_bufs, &grad_bufs)?;
            model.round_params();
        }
        let mean = total / inputs.len() as f64;
        log::debug!("epoch {epoch}: loss {mean:.5}");
        if !mean.is_finite() || !model.params_finite() {
            return Err(Error::Divergence { epoch });
        }
        history.push(mean);
    }
    Ok(Trained {
        model,
        loss_history: history,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub lr_scale: f64,
    pub base_lr: f64,
    pub freeze: FreezeConfig,
    pub seed: u64,
    pub dropout_active: bool,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            epochs: 50,
            lr_scale: 0.25,
            base_lr: DEFAULT_BASE_LR,
            freeze: FreezeConfig::none(),
            seed: 0,
            dropout_active: true,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("fine-tuning needs at least one epoch".into()));
        }
        if !(self.lr_scale > 0.0 && self.lr_scale <= 1.0) {
            return Err(Error::Config(format!("lr_scale {} outside (0, 1]", self.lr_scale)));
        }
        if !(self.base_lr >= 0.0 && self.base_lr.is_finite()) {
            return Err(Error::Config(format!("base learning rate {}", self.base_lr)));
        }
        Ok(())
    }
}

/// Adapts `model` to one snippet: applies the freeze, then takes one
/// full-snippet step per epoch at `base_lr * lr_scale`.
pub fn finetune(model: &Model, snippet: &Example, config: &FinetuneConfig) -> Result<Model> {
    config.validate()?;
    let frozen = model.apply_freeze(&config.freeze)?;
    let trained = fit(
        &frozen,
        std::slice::from_ref(snippet),
        config.epochs,
        config.base_lr * config.lr_scale,
        config.seed,
        config.dropout_active,
    )?;
    Ok(trained.model)
}
