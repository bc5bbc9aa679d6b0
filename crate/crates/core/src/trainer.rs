//! Mini-batch training over normal-only data.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use skelmap_tensor::{Adam, AdamConfig, Mode, Tape, Tensor};

use crate::dataset::{Dataset, DatasetKind, SequentialSkeletonMap};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::models::{pack_windows, Architecture, Model, ModelCheckpoint, ModelConfig};

const SHUFFLE_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::for_architecture(Architecture::LstmVae)
    }
}

impl TrainConfig {
    /// 30 epochs; batch 16 for the LSTM-VAE and 32 for the baselines; Adam
    /// at 1e-3.
    pub fn for_architecture(arch: Architecture) -> Self {
        let adam = AdamConfig::default();
        Self {
            epochs: 30,
            batch_size: if arch == Architecture::LstmVae { 16 } else { 32 },
            seed: 0,
            learning_rate: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.eps,
            shuffle: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch size must be at least 2 for batch normalization, got {}",
                self.batch_size
            )));
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        let unit = |v: f64| (0.0..1.0).contains(&v);
        if !positive(self.learning_rate) || !positive(self.epsilon) || !unit(self.beta1) || !unit(self.beta2) {
            return Err(Error::Config("optimizer hyperparameters out of range".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.epsilon,
        }
    }
}

/// Mean training loss per completed epoch, plus every batch loss.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossLog {
    pub epoch_means: Vec<f64>,
    pub batch_losses: Vec<Vec<f64>>,
}

impl LossLog {
    pub fn first(&self) -> Option<f64> {
        self.epoch_means.first().copied()
    }

    pub fn last(&self) -> Option<f64> {
        self.epoch_means.last().copied()
    }

    pub fn all_finite(&self) -> bool {
        self.epoch_means.iter().all(|v| v.is_finite())
    }

    /// `epoch,mean_loss`, epochs numbered from 1.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,mean_loss\n");
        for (i, m) in self.epoch_means.iter().enumerate() {
            let _ = writeln!(out, "{},{m:?}", i + 1);
        }
        out
    }

    /// Reads back the epoch means of a loss CSV.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("epoch,mean_loss") {
            return Err(Error::Format("loss log header must be `epoch,mean_loss`".into()));
        }
        let mut epoch_means = Vec::new();
        for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let bad = || Error::Parse {
                context: format!("loss log line {}", n + 2),
                detail: format!("expected `epoch,mean_loss`, got `{line}`"),
            };
            let (e, v) = line.split_once(',').ok_or_else(bad)?;
            let e: usize = e.trim().parse().map_err(|_| bad())?;
            let v: f64 = v.trim().parse().map_err(|_| bad())?;
            if e != epoch_means.len() + 1 {
                return Err(bad());
            }
            epoch_means.push(v);
        }
        Ok(Self {
            epoch_means,
            batch_losses: Vec::new(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv().as_bytes())
    }
}

/// Per-epoch progress handed to the observer of [`train_with`].
#[derive(Clone, Copy, Debug)]
pub struct EpochReport {
    pub epoch: usize,
    pub epochs: usize,
    pub mean_loss: f64,
    pub batches: usize,
}

/// Trains a fresh model of kind `arch` on `dataset`.
pub fn train(
    arch: Architecture,
    dataset: &Dataset,
    train_config: &TrainConfig,
    model_config: &ModelConfig,
) -> Result<(ModelCheckpoint, LossLog)> {
    train_with(arch, dataset, train_config, model_config, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with(
    arch: Architecture,
    dataset: &Dataset,
    train_config: &TrainConfig,
    model_config: &ModelConfig,
    mut on_epoch: impl FnMut(&EpochReport),
) -> Result<(ModelCheckpoint, LossLog)> {
    train_config.validate()?;
    model_config.validate()?;
    check_dataset(arch, dataset, model_config)?;

    let items: Vec<&SequentialSkeletonMap> = dataset.windows().collect();
    let batch = train_config.batch_size;
    if items.len() < 2 {
        return Err(Error::Validation(format!(
            "training needs at least 2 samples, got {}",
            items.len()
        )));
    }
    let frames = arch.input_frames(model_config);
    let mut model = Model::new(arch, model_config.clone(), train_config.seed)?;
    let mut adam = Adam::new(train_config.adam(), model.params());
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(train_config.seed);
    shuffle_rng.set_stream(SHUFFLE_STREAM);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(train_config.seed);
    noise_rng.set_stream(NOISE_STREAM);

    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut log = LossLog::default();
    for epoch in 0..train_config.epochs {
        if train_config.shuffle {
            order.shuffle(&mut shuffle_rng);
        }
        let mut losses = Vec::new();
        for (b, idx) in order.chunks(batch).enumerate() {
            if idx.len() < 2 {
                continue;
            }
            let part: Vec<_> = idx.iter().map(|&i| items[i]).collect();
            let input = pack_windows(&part, frames)?;
            let noise = if arch.is_variational() {
                let n = idx.len() * model_config.latent_dim;
                let eps = (0..n).map(|_| noise_rng.sample(StandardNormal)).collect();
                Some(Tensor::new(&[idx.len(), model_config.latent_dim], eps)?)
            } else {
                None
            };
            let mut tape = Tape::new();
            let (loss, _) = model.loss(&mut tape, &input, idx.len(), noise.as_ref(), Mode::Train)?;
            let value = tape
                .value(loss)
                .item()
                .ok_or_else(|| Error::Contract("loss is not a scalar".into()))?;
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch: epoch + 1,
                    batch: b + 1,
                    loss: value,
                });
            }
            model.params_mut().zero_grad();
            tape.backward(loss, model.params_mut())?;
            adam.step(model.params_mut());
            losses.push(value);
        }
        let mean = losses.iter().sum::<f64>() / losses.len() as f64;
        on_epoch(&EpochReport {
            epoch: epoch + 1,
            epochs: train_config.epochs,
            mean_loss: mean,
            batches: losses.len(),
        });
        log.epoch_means.push(mean);
        log.batch_losses.push(losses);
    }
    let checkpoint = ModelCheckpoint {
        model,
        epochs: train_config.epochs as u32,
        seed: train_config.seed,
    };
    Ok((checkpoint, log))
}

fn check_dataset(arch: Architecture, dataset: &Dataset, config: &ModelConfig) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::Validation("training dataset is empty".into()));
    }
    let wanted = if arch.consumes_windows() {
        DatasetKind::Windows
    } else {
        DatasetKind::Frames
    };
    if dataset.kind() != wanted {
        return Err(Error::Incompatible(format!(
            "{arch} trains on {} but the dataset holds {}",
            kind_name(wanted),
            kind_name(dataset.kind())
        )));
    }
    let frames = arch.input_frames(config);
    if dataset.window_len() != frames {
        return Err(Error::Incompatible(format!(
            "{arch} expects {frames}-frame inputs but the dataset has window length {}",
            dataset.window_len()
        )));
    }
    if dataset.abnormal_count() > 0 {
        return Err(Error::Validation(format!(
            "training data must be normal-only; {} records are labeled abnormal",
            dataset.abnormal_count()
        )));
    }
    Ok(())
}

fn kind_name(kind: DatasetKind) -> &'static str {
    match kind {
        DatasetKind::Frames => "single frames",
        DatasetKind::Windows => "windows",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_bounds() {
        let mut c = TrainConfig::default();
        assert_eq!(c.batch_size, 16);
        assert_eq!(TrainConfig::for_architecture(Architecture::Vae).batch_size, 32);
        c.epochs = 0;
        assert!(c.validate().is_err());
        c.epochs = 1;
        c.batch_size = 1;
        assert!(c.validate().is_err());
    }

    #[test]
    fn loss_csv_round_trip() {
        let log = LossLog {
            epoch_means: vec![3.25, 0.1 + 0.2],
            batch_losses: vec![],
        };
        assert_eq!(LossLog::from_csv(&log.to_csv()).unwrap(), log);
        assert!(LossLog::from_csv("epoch,mean_loss\n2,1.0\n").is_err());
    }
}
