//! Scores the labeled synthetic test corpus with a trained checkpoint and
//! reports the frame-level ROC curve and posterior means. Without a
//! checkpoint argument a small model is trained first.
//!
//! cargo run --release --example score_and_roc -- [model.skwt]

use skelmap::evalkit::{export_latents, roc_curve, score_dataset};
use skelmap::models::{Architecture, ModelCheckpoint, ModelConfig};
use skelmap::pipeline::{dataset_for, SyntheticData};
use skelmap::poseio::PreprocessConfig;
use skelmap::trainer::{train, TrainConfig};

fn main() -> skelmap::Result<()> {
    let data = SyntheticData::generate(7, &PreprocessConfig::default())?;
    let checkpoint = match std::env::args().nth(1) {
        Some(path) => ModelCheckpoint::load(path.as_ref())?,
        None => {
            let model = ModelConfig {
                latent_dim: 4,
                window: 8,
                lstm_hidden: 32,
                feature_dim: 32,
                conv_channels: [4, 8],
                ..ModelConfig::default()
            };
            let set = dataset_for(Architecture::LstmVae, &data.train_images, model.window, None)?;
            let config = TrainConfig {
                epochs: 3,
                ..TrainConfig::default()
            };
            train(Architecture::LstmVae, &set, &config, &model)?.0
        }
    };
    let arch = checkpoint.architecture();
    let window = checkpoint.model.config().window;
    let test = dataset_for(arch, &data.test_images, window, Some(&data.test_ranges))?;

    let scores = score_dataset(&checkpoint, &test, false)?;
    let roc = roc_curve(&scores.labeled_scores())?;
    println!("{arch}: {} scored frames, auroc={:.4}", scores.len(), roc.auroc);
    let step = (roc.points.len() / 10).max(1);
    for p in roc.points.iter().step_by(step) {
        println!("  threshold {:>10.3}  fpr {:.3}  tpr {:.3}", p.threshold, p.fpr, p.tpr);
    }

    if arch.is_variational() {
        let windows: Vec<_> = test.windows().collect();
        let labels: Vec<_> = test.records().iter().map(|r| r.label).collect();
        let latents = export_latents(&checkpoint, &windows, &labels)?;
        println!("{} posterior means of dimension {}", latents.rows.len(), latents.latent_dim);
    }
    Ok(())
}
