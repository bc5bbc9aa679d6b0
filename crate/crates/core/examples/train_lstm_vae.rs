//! Trains an LSTM-VAE on the normal-only synthetic corpus and saves the
//! checkpoint and loss log. Defaults to a reduced network so it finishes in
//! seconds; pass `full` for the reference sizes.
//!
//! cargo run --release --example train_lstm_vae -- [small|full] [epochs] [out.skwt]

use std::path::PathBuf;

use skelmap::models::{Architecture, ModelConfig};
use skelmap::pipeline::{dataset_for, SyntheticData};
use skelmap::poseio::PreprocessConfig;
use skelmap::trainer::{train_with, TrainConfig};

fn main() -> skelmap::Result<()> {
    let mut args = std::env::args().skip(1);
    let full = args.next().as_deref() == Some("full");
    let epochs = args.next().and_then(|s| s.parse().ok()).unwrap_or(if full { 10 } else { 3 });
    let out = args.next().map(PathBuf::from);

    let model = if full {
        ModelConfig::default()
    } else {
        ModelConfig {
            latent_dim: 4,
            window: 8,
            lstm_hidden: 32,
            feature_dim: 32,
            conv_channels: [4, 8],
            ..ModelConfig::default()
        }
    };
    let data = SyntheticData::generate(7, &PreprocessConfig::default())?;
    let train = dataset_for(Architecture::LstmVae, &data.train_images, model.window, None)?;
    let config = TrainConfig {
        epochs,
        ..TrainConfig::for_architecture(Architecture::LstmVae)
    };
    println!("{} windows, batch {}, {} epochs", train.len(), config.batch_size, epochs);

    let (checkpoint, log) = train_with(Architecture::LstmVae, &train, &config, &model, |r| {
        println!("epoch {}/{}: mean loss {:.2} over {} batches", r.epoch, r.epochs, r.mean_loss, r.batches);
    })?;
    println!("{} parameters", checkpoint.model.parameter_count());
    if let Some(path) = out {
        checkpoint.save(&path)?;
        log.save(&path.with_extension("loss.csv"))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
