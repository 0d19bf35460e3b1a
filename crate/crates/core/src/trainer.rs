//! Mini-batch training of the PEFT and head parameters over a frozen backbone.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{augment_frames, Example};
use crate::error::{Error, Result};
use crate::eval::{uar, Confusion, Predictions};
use crate::model::{argmax, Model};
use crate::optim::{Adam, AdamConfig};
use crate::tensor::Tape;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Noise and time-mask augmentation on training batches.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 5e-4,
            batch_size: 32,
            max_epochs: 30,
            seed: 0,
            augment: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        Ok(())
    }
}

/// Holds a model with its optimizer and RNG; one instance per training run.
pub struct Trainer {
    model: Model,
    adam: Adam,
    config: TrainConfig,
    rng: ChaCha8Rng,
    steps: usize,
}

impl Trainer {
    /// Works with an unfrozen backbone too, in which case the backbone is
    /// updated along with everything else. [`train`] insists on a frozen one.
    pub fn new(model: Model, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Trainer {
            model,
            adam: Adam::new(AdamConfig::with_lr(config.lr))?,
            config,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            steps: 0,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Mean cross-entropy over `batch` with gradients left in the parameter
    /// stores.
    pub fn loss_and_grads(&mut self, batch: &[&Example]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Usage("empty batch".into()));
        }
        let mut tape = Tape::new();
        let bound = self.model.bind(&mut tape);
        let n_classes = self.model.head.config().n_classes;
        let mut rows = Vec::with_capacity(batch.len());
        let mut labels = Vec::with_capacity(batch.len());
        for ex in batch {
            let frames = if self.config.augment {
                augment_frames(&ex.frames, &mut self.rng).0
            } else {
                ex.frames.clone()
            };
            let logits = self.model.logits(&mut tape, &bound, &frames)?;
            rows.push(tape.reshape(logits, &[1, n_classes])?);
            labels.push(ex.label);
        }
        let logits = tape.concat_rows(&rows)?;
        let loss = tape.cross_entropy(logits, &labels)?;
        let value = tape.value(loss).data()[0];
        tape.backward(loss)?;
        self.model.accumulate_grads(&tape, &bound)?;
        Ok(value)
    }

    /// One optimizer update on `batch`; returns the batch loss.
    pub fn step(&mut self, batch: &[&Example]) -> Result<f64> {
        let loss = self.loss_and_grads(batch)?;
        if !loss.is_finite() {
            self.model.zero_grad();
            return Err(Error::Numeric(format!("non-finite loss {loss} at step {}", self.steps)));
        }
        self.adam.step(&mut self.model.trainable_stores_mut());
        self.model.zero_grad();
        self.steps += 1;
        Ok(loss)
    }

    /// One shuffled pass over `train`; returns the example-weighted mean loss.
    pub fn run_epoch(&mut self, train: &[Example], epoch: usize) -> Result<f64> {
        if train.is_empty() {
            return Err(Error::Usage("training split is empty".into()));
        }
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut self.rng);
        let mut total = 0.0;
        for (b, chunk) in order.chunks(self.config.batch_size).enumerate() {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &train[i]).collect();
            let loss = self.step(&batch).map_err(|e| match e {
                Error::Numeric(_) => Error::Numeric(format!("loss is NaN or infinite at epoch {epoch}, batch {b}")),
                other => other,
            })?;
            total += loss * batch.len() as f64;
        }
        Ok(total / train.len() as f64)
    }
}

/// Deterministic, augmentation-free predictions.
pub fn predict(model: &Model, examples: &[Example]) -> Result<Predictions> {
    let mut out = Predictions::default();
    for ex in examples {
        let logits = model.predict_logits(&ex.frames)?;
        out.push(ex.id.clone(), ex.label, argmax(&logits), ex.gender);
    }
    Ok(out)
}

pub fn evaluate_uar(model: &Model, examples: &[Example]) -> Result<f64> {
    let p = predict(model, examples)?;
    uar(&Confusion::from_predictions(
        &p.labels,
        &p.preds,
        model.head.config().n_classes,
    )?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    pub val_uar: Vec<f64>,
    /// Index into `val_uar` of the selected snapshot.
    pub best_epoch: usize,
    pub best_val_uar: f64,
    pub steps: usize,
    pub checkpoint: Option<String>,
}

pub struct TrainOutcome {
    pub report: TrainReport,
    /// Snapshot from the epoch with the best validation UAR.
    pub model: Model,
    pub wall_seconds: f64,
}

/// Full training run with best-validation-UAR model selection.
pub fn train(model: Model, train: &[Example], val: &[Example], config: TrainConfig) -> Result<TrainOutcome> {
    if !model.backbone.is_frozen() {
        return Err(Error::Usage("training expects a frozen backbone".into()));
    }
    if train.is_empty() {
        return Err(Error::Usage("training split is empty".into()));
    }
    if val.is_empty() {
        return Err(Error::Usage("validation split is empty".into()));
    }
    let started = Instant::now();
    let mut trainer = Trainer::new(model, config)?;
    let mut epoch_losses = Vec::with_capacity(config.max_epochs);
    let mut val_uar = Vec::with_capacity(config.max_epochs);
    let mut best: Option<(usize, f64, Model)> = None;
    for epoch in 0..config.max_epochs {
        let loss = trainer.run_epoch(train, epoch)?;
        let score = evaluate_uar(trainer.model(), val)?;
        log::info!("epoch {epoch}: loss {loss:.4}, validation UAR {score:.2}");
        epoch_losses.push(loss);
        val_uar.push(score);
        if best.as_ref().is_none_or(|(_, s, _)| score > *s) {
            best = Some((epoch, score, trainer.model().clone()));
        }
    }
    let steps = trainer.steps();
    let (best_epoch, best_val_uar, model) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        report: TrainReport {
            epoch_losses,
            val_uar,
            best_epoch,
            best_val_uar,
            steps,
            checkpoint: None,
        },
        model,
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::BackboneConfig;
    use crate::data::{synth_corpus, SynthOptions};
    use crate::head::HeadConfig;
    use crate::peft::PeftConfig;

    fn tiny_model(peft: PeftConfig) -> Model {
        let bb = BackboneConfig::toy();
        Model::new(bb, peft, HeadConfig::for_backbone(&bb).with_conv_dim(16), 1).unwrap()
    }

    fn examples() -> Vec<Example> {
        synth_corpus(&SynthOptions {
            n_per_class: 3,
            n_speakers: 3,
            seed: 4,
            ..Default::default()
        })
        .unwrap()
        .examples(6.0)
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig {
            lr: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            batch_size: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            max_epochs: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn empty_train_split_is_usage_error() {
        let ex = examples();
        let err = train(tiny_model(PeftConfig::default()), &[], &ex, TrainConfig::default())
            .err()
            .unwrap();
        assert!(matches!(err, Error::Usage(_)));
    }

    #[test]
    fn unfrozen_backbone_is_rejected_by_train() {
        let mut m = tiny_model(PeftConfig::default());
        m.backbone.unfreeze();
        let ex = examples();
        assert!(matches!(
            train(m, &ex, &ex, TrainConfig::default()),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn head_only_step_touches_exactly_the_head() {
        let m = tiny_model(PeftConfig::default());
        let head_count = m.head.config().param_count();
        let mut t = Trainer::new(m, TrainConfig::default()).unwrap();
        let ex = examples();
        let batch: Vec<&Example> = ex.iter().take(4).collect();
        t.loss_and_grads(&batch).unwrap();
        let with_grad = |s: &crate::params::ParamStore| {
            s.iter()
                .filter(|p| p.tensor.grad().is_some())
                .map(|p| p.tensor.numel())
                .sum::<usize>()
        };
        assert_eq!(with_grad(t.model().head.params()), head_count);
        assert_eq!(with_grad(t.model().backbone.params()), 0);
    }

    #[test]
    fn nan_input_reports_epoch_and_batch() {
        let mut ex = examples();
        ex[0].frames.data_mut()[0] = f64::NAN;
        let cfg = TrainConfig {
            batch_size: 64,
            augment: false,
            ..Default::default()
        };
        let mut t = Trainer::new(tiny_model(PeftConfig::default()), cfg).unwrap();
        match t.run_epoch(&ex, 3) {
            Err(Error::Numeric(m)) => assert!(m.contains("epoch 3") && m.contains("batch 0"), "{m}"),
            Err(other) => panic!("unexpected {other}"),
            Ok(_) => panic!("NaN went unnoticed"),
        }
    }
}
