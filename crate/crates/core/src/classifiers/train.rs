use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{ClassifierError, FusionModel};
use crate::corpus::{stratified_split_indices, SplitSpec};
use crate::evaluation::{weighted_f1, Predicted};
use crate::nn::{Adam, DropoutCtx, Module};
use crate::par::ExecMode;
use crate::seeds::{self, Stream};
use crate::taxonomy::ClassLabel;

/// Paired text/image features with labels, row-aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub text: Array2<f64>,
    pub image: Array2<f64>,
    pub labels: Vec<ClassLabel>,
}

impl Dataset {
    pub fn new(text: Array2<f64>, image: Array2<f64>, labels: Vec<ClassLabel>) -> Result<Self, ClassifierError> {
        if text.nrows() != labels.len() || image.nrows() != labels.len() {
            return Err(ClassifierError::Shape(format!(
                "{} labels for {} text and {} image rows",
                labels.len(),
                text.nrows(),
                image.nrows()
            )));
        }
        Ok(Dataset { text, image, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            text: self.text.select(Axis(0), idx),
            image: self.image.select(Axis(0), idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// Optimizer and loop settings. Betas and epsilon follow the common Adam
/// defaults; the scheduler is constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 8,
            learning_rate: 1e-5,
            weight_decay: 0.01,
            epochs: 10,
            seed: seeds::CANONICAL_SEEDS[0],
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_weighted_f1: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose weights were returned; `None` when no epoch ran.
    pub best_epoch: Option<usize>,
    pub best_val_weighted_f1: Option<f64>,
}

/// Holds out 10% of each class (at least one member) as validation.
pub fn carve_validation(data: &Dataset, seed: u64) -> Result<(Dataset, Dataset), ClassifierError> {
    let spec = SplitSpec {
        train_fraction: 0.9,
        ..SplitSpec::new(seed)
    };
    let idx = stratified_split_indices(&data.labels, &spec)?;
    Ok((data.subset(&idx.train), data.subset(&idx.test)))
}

/// Trains with mini-batch Adam on mean cross-entropy and returns the weights
/// from the epoch with the highest validation weighted F1 (earliest on ties).
pub fn train(
    mut model: FusionModel,
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &TrainConfig,
) -> Result<(FusionModel, TrainHistory), ClassifierError> {
    if train_set.is_empty() {
        return Err(ClassifierError::EmptyTrain);
    }
    if cfg.batch_size == 0 {
        return Err(ClassifierError::Config("batch_size must be positive".into()));
    }
    let mut history = TrainHistory::default();
    if cfg.epochs == 0 {
        return Ok((model, history));
    }
    if val_set.is_empty() {
        return Err(ClassifierError::EmptyValidation);
    }
    let mut shuffle_rng = seeds::rng(cfg.seed, Stream::Shuffle);
    let mut dropout_rng = seeds::rng(cfg.seed, Stream::Dropout);
    let mut adam = Adam::new(
        cfg.learning_rate,
        cfg.weight_decay,
        cfg.adam_beta1,
        cfg.adam_beta2,
        cfg.adam_eps,
    );
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut best: Option<(f64, FusionModel)> = None;
    let val_truth = &val_set.labels;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let b = train_set.subset(batch);
            let targets: Vec<usize> = b.labels.iter().map(|l| l.index()).collect();
            let mut ctx = DropoutCtx::train(&mut dropout_rng);
            let loss = model.loss_and_grad(&b.text, &b.image, &targets, &mut ctx)?;
            loss_sum += loss * batch.len() as f64;
            adam.step(model.params_mut());
        }
        let pred: Vec<Predicted> = model
            .predict(&val_set.text, &val_set.image, ExecMode::default())?
            .into_iter()
            .map(Predicted::from)
            .collect();
        let f1 = weighted_f1(val_truth, &pred).map_err(|e| ClassifierError::Shape(e.to_string()))?;
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            val_weighted_f1: f1,
        });
        if best.as_ref().is_none_or(|(b, _)| f1 > *b) {
            history.best_epoch = Some(epoch);
            history.best_val_weighted_f1 = Some(f1);
            best = Some((f1, model.clone()));
        }
    }
    let (_, mut best_model) = best.expect("at least one epoch ran");
    best_model.zero_grad();
    Ok((best_model, history))
}
