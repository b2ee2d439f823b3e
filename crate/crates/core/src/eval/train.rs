//! Minibatch training with class weights, optional modifiers and
//! best-validation model selection.

use std::fmt::Write as _;

use log::{debug, error, info};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{evaluate_model, mean_auc, EvalError};
use crate::data::{augment, AugmentConfig, Dataset};
use crate::models::Model;
use crate::rng::{self, key_of};
use crate::tensor::optim::{adam_step, AdamConfig, AdamState};
use crate::tensor::{Mode, Tape, Tensor};
use crate::weighting::{batch_weights, ClassWeights, WeightingMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub augment: AugmentConfig,
    pub weighting: WeightingMode,
    pub seed: u64,
    pub eval_batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 64,
            adam: AdamConfig::default(),
            augment: AugmentConfig::default(),
            weighting: WeightingMode::ClassWeighted,
            seed: 0,
            eval_batch_size: 256,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.epochs == 0 {
            return Err(EvalError::InvalidConfig("train.epochs must be positive".into()));
        }
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            return Err(EvalError::InvalidConfig("train batch sizes must be positive".into()));
        }
        self.adam.validate()?;
        self.augment.validate()?;
        if let WeightingMode::Modified { modifier } = &self.weighting {
            modifier.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    /// Mean unambiguous-only AUC over heads; `NaN` when undefined.
    pub val_auc_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    /// Epoch whose weights were kept; `None` when no epoch had a defined
    /// validation AUC, in which case the final weights are kept.
    pub best_epoch: Option<usize>,
}

impl TrainLog {
    /// `epoch,train_loss,val_auc_mean` with one row per epoch.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_auc_mean\n");
        for e in &self.epochs {
            let _ = writeln!(s, "{},{},{}", e.epoch, e.train_loss, e.val_auc_mean);
        }
        s
    }
}

/// Trains `model` in place and leaves it holding the weights of the epoch
/// with the best validation mean AUC.
pub fn train(
    model: &mut Model,
    train_set: &Dataset,
    val_set: &Dataset,
    class: &[ClassWeights],
    cfg: &TrainConfig,
) -> Result<TrainLog, EvalError> {
    cfg.validate()?;
    let labels = train_set.labels()?;
    if model.head_count() != labels.n_heads() {
        return Err(EvalError::HeadMismatch {
            model: model.head_count(),
            vocabulary: labels.n_heads(),
        });
    }
    if class.len() != labels.n_heads() {
        return Err(EvalError::InvalidConfig(format!(
            "{} class weights for {} heads",
            class.len(),
            labels.n_heads()
        )));
    }
    if train_set.is_empty() {
        return Err(EvalError::InvalidConfig("training split is empty".into()));
    }
    let (h, w) = train_set.image_shape().expect("non-empty");
    let keys: Vec<u64> = train_set.samples.iter().map(|s| key_of(&s.sample_id)).collect();
    let mut adam = AdamState::<f32>::new();
    let mut step: u64 = 0;
    let mut log = TrainLog {
        epochs: Vec::with_capacity(cfg.epochs),
        best_epoch: None,
    };
    let mut best: Option<(f64, Model)> = None;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut rng::stream(cfg.seed, &[key_of("shuffle"), epoch as u64]));
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut pixels = Vec::with_capacity(batch.len() * h * w);
            for &i in batch {
                let mut r = rng::stream(cfg.seed, &[key_of("augment"), epoch as u64, keys[i]]);
                let (img, _) = augment(&train_set.samples[i].image, &cfg.augment, &mut r);
                pixels.extend_from_slice(&img.data);
            }
            let mut tape = Tape::<f32>::new();
            let vars = model.params().bind(&mut tape);
            let x = tape.constant(Tensor::new(&[batch.len(), 1, h, w], pixels)?);
            let mut frng = rng::stream(cfg.seed, &[key_of("forward"), step]);
            let out = model.forward(&mut tape, &vars, x, Mode::Train, &mut frng)?;
            let bkeys: Vec<u64> = batch.iter().map(|&i| keys[i]).collect();
            let (w1, w0) = batch_weights(&cfg.weighting, class, &labels, batch, &bkeys, epoch as u64, step)?;
            let targets: Vec<u8> = batch.iter().flat_map(|&i| labels.row(i).iter().copied()).collect();
            let loss = tape.weighted_bce(out.logits, &targets, &w1, &w0)?;
            let value = tape.value(loss).item() as f64;
            if !value.is_finite() {
                let diagnostic = diagnose(model, &tape, out.logits, batch, train_set, value);
                error!("{diagnostic}");
                return Err(EvalError::NonFiniteLoss {
                    epoch,
                    step,
                    diagnostic,
                });
            }
            let grads = tape.backward(loss)?;
            let g: Vec<Option<&Tensor<f32>>> = vars.iter().map(|&v| grads.get(v)).collect();
            let mut p: Vec<&mut Tensor<f32>> = model.params_mut().iter_mut().map(|p| &mut p.value).collect();
            adam_step(&mut p, &g, &mut adam, &cfg.adam)?;
            model.update_running_stats(&out.batch_stats);
            loss_sum += value * batch.len() as f64;
            step += 1;
        }
        let train_loss = loss_sum / train_set.len() as f64;
        let val_auc_mean = if val_set.is_empty() {
            f64::NAN
        } else {
            mean_auc(&evaluate_model(model, val_set, cfg.eval_batch_size)?)
        };
        debug!("epoch {epoch}: train_loss={train_loss:.6} val_auc_mean={val_auc_mean:.4}");
        log.epochs.push(EpochLog {
            epoch,
            train_loss,
            val_auc_mean,
        });
        if val_auc_mean.is_finite() && best.as_ref().is_none_or(|(b, _)| val_auc_mean > *b) {
            best = Some((val_auc_mean, model.clone()));
            log.best_epoch = Some(epoch);
        }
    }
    if let Some((auc, m)) = best {
        info!("keeping epoch {} (val mean AUC {auc:.4})", log.best_epoch.unwrap());
        *model = m;
    }
    Ok(log)
}

fn diagnose(
    model: &Model,
    tape: &Tape<f32>,
    logits: crate::tensor::Var,
    batch: &[usize],
    ds: &Dataset,
    loss: f64,
) -> String {
    let z = tape.value(logits).data();
    let max_logit = z.iter().fold(
        0.0f32,
        |m, v| if v.is_finite() { m.max(v.abs()) } else { f32::INFINITY },
    );
    let bad_params: Vec<&str> = model
        .params()
        .iter()
        .filter(|p| p.value.data().iter().any(|v| !v.is_finite()))
        .map(|p| p.name.as_str())
        .collect();
    let ids: Vec<&str> = batch
        .iter()
        .take(8)
        .map(|&i| ds.samples[i].sample_id.as_str())
        .collect();
    format!("loss={loss}, max |logit|={max_logit}, non-finite parameters={bad_params:?}, batch starts with {ids:?}")
}
