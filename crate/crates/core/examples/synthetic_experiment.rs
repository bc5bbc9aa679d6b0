//! Trains the LSTM-VAE and both baselines on the synthetic corpus and prints
//! frame-level AUROC for each.
//!
//! cargo run --release --example synthetic_experiment -- [seed] [epochs] [out_dir]
//!
//! With `out_dir`, each model's checkpoint, loss log and score series are
//! written there.

use std::time::Instant;

use skelmap::models::Architecture;
use skelmap::pipeline::{SyntheticData, SyntheticExperiment};

fn main() -> skelmap::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(7);
    let epochs = args.next().and_then(|s| s.parse().ok()).unwrap_or(10);
    let out_dir = args.next().map(std::path::PathBuf::from);
    let exp = SyntheticExperiment {
        seed,
        epochs,
        ..SyntheticExperiment::default()
    };
    let data = SyntheticData::generate(seed, &exp.preprocess)?;
    println!(
        "{} training frames, {} test frames, {} abnormal ranges",
        data.train_images.len(),
        data.test_images.len(),
        data.test_ranges.len()
    );
    for arch in [Architecture::LstmVae, Architecture::Ae, Architecture::Vae] {
        let start = Instant::now();
        let out = exp.run(arch, &data, |r| {
            println!("  {arch} epoch {}/{}: mean loss {:.3}", r.epoch, r.epochs, r.mean_loss);
        })?;
        println!(
            "{arch}: {} training items, auroc={:.4} ({:.0} s)",
            out.train_items,
            out.roc.auroc,
            start.elapsed().as_secs_f64()
        );
        if let Some(dir) = &out_dir {
            std::fs::create_dir_all(dir).map_err(|e| skelmap::Error::io(dir, e))?;
            out.checkpoint.save(&dir.join(format!("{arch}.skwt")))?;
            out.loss.save(&dir.join(format!("{arch}.loss.csv")))?;
            out.scores.save(&dir.join(format!("{arch}.scores.csv")))?;
        }
    }
    Ok(())
}
